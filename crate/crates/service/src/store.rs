//! Single-file document store: one JSON document per dataset holding every persisted
//! subgroup (keyed by id) and the session.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::{SecondsFormat, Utc};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use vibe_core::Subgroup;

use crate::session::{ProjectionRef, Session, SessionEvent};

pub const STORE_FORMAT: u32 = 1;

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PersistedSubgroup {
    pub subgroup: Subgroup,
    /// RFC 3339 timestamp.
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreDocument {
    pub format: u32,
    pub dataset: String,
    pub subgroups: BTreeMap<String, PersistedSubgroup>,
    pub session: Session,
}

#[derive(Debug)]
pub struct Store {
    path: Option<PathBuf>,
    doc: StoreDocument,
}

impl Store {
    pub fn in_memory(dataset: &str, projection: ProjectionRef) -> Self {
        Self {
            path: None,
            doc: StoreDocument {
                format: STORE_FORMAT,
                dataset: dataset.to_string(),
                subgroups: BTreeMap::new(),
                session: Session::new("default", dataset, projection),
            },
        }
    }

    /// Opens `path`, creating an empty store when the file does not exist.
    pub fn open(path: &Path, dataset: &str, projection: ProjectionRef) -> anyhow::Result<Self> {
        if !path.exists() {
            let mut store = Self::in_memory(dataset, projection);
            store.path = Some(path.to_path_buf());
            store.save()?;
            return Ok(store);
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading store {}", path.display()))?;
        let doc: StoreDocument =
            serde_json::from_str(&text).with_context(|| format!("parsing store {}", path.display()))?;
        if doc.format != STORE_FORMAT {
            bail!("store {} has format {}, expected {STORE_FORMAT}", path.display(), doc.format);
        }
        if doc.dataset != dataset {
            bail!(
                "store {} belongs to dataset {:?}, not {dataset:?}",
                path.display(),
                doc.dataset
            );
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            doc,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn document(&self) -> &StoreDocument {
        &self.doc
    }

    pub fn session(&self) -> &Session {
        &self.doc.session
    }

    pub fn subgroup(&self, id: &str) -> Option<&PersistedSubgroup> {
        self.doc.subgroups.get(id)
    }

    pub fn subgroups(&self) -> impl Iterator<Item = &PersistedSubgroup> {
        self.doc.subgroups.values()
    }

    /// Inserts `subgroup` unless the id is taken; an existing entry (and its cache) wins.
    pub fn insert(&mut self, subgroup: Subgroup) -> &PersistedSubgroup {
        self.doc
            .subgroups
            .entry(subgroup.id.clone())
            .or_insert_with(|| PersistedSubgroup {
                subgroup,
                created_at: now_rfc3339(),
            })
    }

    /// Replaces the cache of a stored subgroup. Membership and provenance never change.
    pub fn update_cache(&mut self, subgroup: &Subgroup) -> bool {
        match self.doc.subgroups.get_mut(&subgroup.id) {
            Some(p) if p.subgroup.cache != subgroup.cache => {
                p.subgroup.cache = subgroup.cache.clone();
                true
            }
            _ => false,
        }
    }

    pub fn record(&mut self, event: SessionEvent) {
        self.doc.session.apply(event);
    }

    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(&self.doc)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes the document atomically (temporary file then rename). In-memory stores are a no-op.
    pub fn save(&self) -> anyhow::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("store")
        ));
        let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
        Ok(())
    }
}

//! Background jobs on a bounded worker pool. Results are kept in memory and polled by id.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct JobStatus {
    pub id: String,
    pub kind: String,
    pub state: JobState,
    /// The response body the synchronous endpoint would have returned.
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<crate::error::ErrorBody>,
}

pub struct JobQueue {
    jobs: RwLock<BTreeMap<String, JobStatus>>,
    workers: Arc<Semaphore>,
    next: AtomicU64,
}

impl JobQueue {
    pub fn new(workers: usize) -> Self {
        Self {
            jobs: RwLock::new(BTreeMap::new()),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            next: AtomicU64::new(1),
        }
    }

    pub fn get(&self, id: &str) -> Option<JobStatus> {
        self.jobs.read().unwrap().get(id).cloned()
    }

    fn set(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.jobs.write().unwrap().get_mut(id) {
            f(job);
        }
    }

    /// Queues blocking work and returns its status immediately. Must be called inside a
    /// tokio runtime.
    pub fn submit<F>(self: &Arc<Self>, kind: &str, work: F) -> JobStatus
    where
        F: FnOnce() -> Result<serde_json::Value, ApiError> + Send + 'static,
    {
        let id = format!("job-{:06}", self.next.fetch_add(1, Ordering::Relaxed));
        let status = JobStatus {
            id: id.clone(),
            kind: kind.to_string(),
            state: JobState::Queued,
            result: None,
            error: None,
        };
        self.jobs.write().unwrap().insert(id.clone(), status.clone());
        let queue = Arc::clone(self);
        tokio::spawn(async move {
            let Ok(_permit) = queue.workers.clone().acquire_owned().await else {
                return;
            };
            queue.set(&id, |j| j.state = JobState::Running);
            let outcome = tokio::task::spawn_blocking(work)
                .await
                .unwrap_or_else(|e| Err(ApiError::internal(format!("job panicked: {e}"))));
            queue.set(&id, |j| match outcome {
                Ok(v) => {
                    j.state = JobState::Succeeded;
                    j.result = Some(v);
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.error = Some(crate::error::ErrorBody {
                        error: e.code.to_string(),
                        message: e.message,
                    });
                }
            });
        });
        status
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vibe_core::dataset::read_samples;

fn vibe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vibe"))
        .args(args)
        .env_remove("VIBE_PROVIDER")
        .env_remove("VIBE_STORE")
        .env_remove("VIBE_DATA_ROOT")
        .env("VIBE_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vibe(args);
    assert!(
        out.status.success(),
        "vibe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_fixture(dir: &Path) -> PathBuf {
    let out = dir.join("run");
    ok(&["synth-fixture", "--kind", "tiny", "--out", out.to_str().unwrap()]);
    out.join("manifest.json")
}

fn table_rows(markdown: &str) -> Vec<&str> {
    markdown
        .lines()
        .skip_while(|l| !l.starts_with("| Rank"))
        .skip(2)
        .take_while(|l| l.starts_with('|'))
        .collect()
}

#[test]
fn report_lists_the_requested_number_of_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_fixture(dir.path());
    let md = ok(&["report", manifest.to_str().unwrap(), "--metric", "error", "--top", "5", "--k", "6"]);
    assert_eq!(table_rows(&md).len(), 5, "{md}");
    assert!(md.contains("## Compared with the dataset"));

    let out = dir.path().join("report");
    ok(&["report", manifest.to_str().unwrap(), "--metric", "error", "--top", "5", "--k", "6", "--stub", "--out", out.to_str().unwrap()]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["clusters"].as_array().unwrap().len(), 5);
    assert_eq!(json["comparisons"].as_array().unwrap().len(), 5);
    assert!(json["clusters"][0]["summary"].as_str().unwrap().starts_with("SUMMARY("));
    assert_eq!(table_rows(&fs::read_to_string(out.join("report.md")).unwrap()).len(), 5);

    let err = vibe(&["report", manifest.to_str().unwrap(), "--metric", "nope"]);
    assert!(!err.status.success());
}

#[test]
fn precompute_fills_every_missing_caption() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_fixture(dir.path());
    let samples = manifest.parent().unwrap().join("samples.jsonl");
    let stripped: Vec<String> = read_samples(&samples)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            if i % 2 == 0 {
                r.caption = None;
            }
            serde_json::to_string(&r).unwrap()
        })
        .collect();
    fs::write(&samples, stripped.join("\n") + "\n").unwrap();

    let out = ok(&["precompute-captions", manifest.to_str().unwrap(), "--stub"]);
    assert!(out.contains("captioned 4 of 8"), "{out}");
    let records = read_samples(&samples).unwrap();
    assert!(records.iter().all(|r| r.caption.as_deref().is_some_and(|c| !c.is_empty())));
    assert!(records.iter().step_by(2).all(|r| r.caption.as_deref().unwrap().starts_with("CAPTION(")));
    assert!(records.iter().skip(1).step_by(2).all(|r| !r.caption.as_deref().unwrap().starts_with("CAPTION(")));

    let again = ok(&["precompute-captions", manifest.to_str().unwrap(), "--stub"]);
    assert!(again.contains("captioned 0 of 8"));
    // A gateway must be chosen explicitly.
    assert!(!vibe(&["precompute-captions", manifest.to_str().unwrap()]).status.success());
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn clustering_twice_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_fixture(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["cluster", manifest.to_str().unwrap(), "--k", "3", "--seed", "42", "--out", out.to_str().unwrap()]);
    }
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 4, "index plus three subgroup files");
    assert_eq!(ta, tb);
}

#[test]
fn serve_without_ingest_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_fixture(dir.path());
    let out = vibe(&["serve", manifest.to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vibe ingest"));

    let missing = vibe(&["serve", dir.path().join("nothing.json").to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert!(!missing.status.success());
}

#[test]
fn ingest_validates_and_creates_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_fixture(dir.path());
    let out = ok(&["ingest", manifest.to_str().unwrap()]);
    assert!(out.contains("8 samples, 4-d embeddings"), "{out}");
    assert!(manifest.parent().unwrap().join("vibe-store.json").exists());

    let json = ok(&["--data-root", dir.path().to_str().unwrap(), "ingest", "run/manifest.json", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(report["findings"].as_array().unwrap().len() > 5);

    let samples = manifest.parent().unwrap().join("samples.jsonl");
    let text = fs::read_to_string(&samples).unwrap();
    fs::write(&samples, text.replacen("\"s1\"", "\"s2\"", 1)).unwrap();
    let bad = vibe(&["ingest", manifest.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("duplicate sample id"));
}

#[test]
fn help_documents_every_command() {
    let help = ok(&["--help"]);
    for cmd in ["ingest", "precompute-captions", "cluster", "report", "serve", "synth-fixture"] {
        assert!(help.contains(cmd), "{cmd}");
        assert!(vibe(&[cmd, "--help"]).status.success());
    }
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_health_and_rejects_a_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_fixture(dir.path());
    ok(&["ingest", manifest.to_str().unwrap()]);

    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let busy_addr = busy.local_addr().unwrap().to_string();
    let out = vibe(&["serve", manifest.to_str().unwrap(), "--bind", &busy_addr]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("binding"));
    drop(busy);

    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let mut child = Command::new(env!("CARGO_BIN_EXE_vibe"))
        .args(["serve", manifest.to_str().unwrap(), "--bind", &addr])
        .env("VIBE_LOG", "warn")
        .spawn()
        .unwrap();
    let mut reply = None;
    for _ in 0..100 {
        if let Some(r) = http_get(&addr, "/v1/health") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server never answered");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    let body = reply.split("\r\n\r\n").nth(1).unwrap();
    let v: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!((v["samples"].as_u64(), v["dim"].as_u64()), (Some(8), Some(4)));
}

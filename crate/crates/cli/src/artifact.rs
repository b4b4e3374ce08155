//! Artifact files. Text and CSV files open with four `#` lines carrying the
//! command, seed, SHA-256 of the body and the resolved config (always
//! last). JSON files wrap their payload in an object with the same fields.

#[cfg(test)]
use std::path::Path;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
#[cfg(test)]
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Writer {
    dir: PathBuf,
    config: RunConfig,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: PathBuf, config: &RunConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, config: config.clone(), written: Vec::new() })
    }

    fn put(&mut self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn header(&self, body: &str) -> String {
        let config = serde_json::to_string(&self.config).expect("config is plain data");
        format!(
            "# gazegest {}\n# seed: {}\n# content-sha256: {}\n# config: {config}\n",
            self.config.command,
            self.config.seed,
            sha256_hex(body.as_bytes())
        )
    }

    /// Text or CSV with the `#` header.
    pub fn text(&mut self, name: &str, body: &str) -> anyhow::Result<PathBuf> {
        let contents = format!("{}{body}", self.header(body));
        self.put(name, &contents)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> anyhow::Result<PathBuf> {
        let data = serde_json::to_value(data)?;
        let hash = sha256_hex(serde_json::to_string(&data)?.as_bytes());
        let doc = json!({
            "command": self.config.command,
            "seed": self.config.seed,
            "content_sha256": hash,
            "config": self.config,
            "data": data,
        });
        self.put(name, &(serde_json::to_string_pretty(&doc)? + "\n"))
    }
}

/// Body of a `#`-headed artifact: everything after the `# config:` line,
/// which always closes the header (bodies may carry `#` lines of their own).
#[cfg(test)]
fn strip_header(text: &str) -> &str {
    text.split_once("\n# config: ").and_then(|(_, r)| r.split_once('\n')).map_or("", |(_, r)| r)
}

/// Checks the embedded hash of a text artifact or a JSON artifact.
#[cfg(test)]
fn verify(path: &Path) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let doc: Value = serde_json::from_str(&text)?;
        let body = serde_json::to_string(&doc["data"])?;
        return Ok(doc["content_sha256"] == sha256_hex(body.as_bytes()));
    }
    let claimed = text
        .lines()
        .find_map(|l| l.strip_prefix("# content-sha256: "))
        .context("no content hash line")?;
    Ok(claimed == sha256_hex(strip_header(&text).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_cover_the_body() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { command: "eval".into(), ..RunConfig::default() };
        let mut w = Writer::new(dir.path().to_path_buf(), &cfg).unwrap();
        let p = w.text("a.csv", "# units: ms\nx,y\n1,2\n").unwrap();
        let j = w.json("a.json", &vec![1, 2, 3]).unwrap();
        assert!(verify(&p).unwrap() && verify(&j).unwrap());
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(strip_header(&text), "# units: ms\nx,y\n1,2\n");
        assert!(text.contains("# seed: 7"));
        std::fs::write(&p, text.replace("1,2", "1,3")).unwrap();
        assert!(!verify(&p).unwrap());
    }
}

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key_hash: String,
    pub request_body: Value,
    pub response_body: Value,
}

/// SHA-256 over model id, request kind and the canonical request body.
pub fn cache_key(model_id: &str, kind: &str, body: &Value) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(kind.as_bytes());
    h.update([0u8]);
    // serde_json's map is ordered, so this is already canonical.
    h.update(body.to_string().as_bytes());
    hex::encode(h.finalize())
}

/// Append-only response cache backed by a JSONL file.
pub struct ReplayStore {
    path: PathBuf,
    entries: Mutex<HashMap<String, Value>>,
    writer: Option<Mutex<File>>,
}

impl ReplayStore {
    /// Opens (or creates) a record-through cache.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = if path.exists() { load(path)? } else { HashMap::new() };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            entries: Mutex::new(entries),
            writer: Some(Mutex::new(file)),
        })
    }

    pub fn open_read_only(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_owned(),
            entries: Mutex::new(load(path)?),
            writer: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn record(&self, key: String, request_body: Value, response_body: Value) -> Result<()> {
        let Some(writer) = &self.writer else {
            return Ok(());
        };
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        let rec = ReplayRecord {
            key_hash: key.clone(),
            request_body,
            response_body: response_body.clone(),
        };
        let mut line = serde_json::to_string(&rec).map_err(|e| Error::Provider(e.to_string()))?;
        line.push('\n');
        let mut file = writer.lock().unwrap();
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        entries.insert(key, response_body);
        Ok(())
    }
}

fn load(path: &Path) -> Result<HashMap<String, Value>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(rec.key_hash, rec.response_body);
    }
    Ok(out)
}

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::{ScoreRecord, ScorerError};

/// Append-only JSONL store of score records keyed by `cache_key`.
/// Reads are concurrent; appends are serialized. Later lines win.
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, ScoreRecord>>,
    writer: Mutex<Option<File>>,
    skipped_lines: usize,
}

impl ScoreCache {
    pub fn in_memory() -> ScoreCache {
        ScoreCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            skipped_lines: 0,
        }
    }

    /// Opens (or creates) a store. Unparseable lines are skipped and logged.
    pub fn open(path: &Path) -> Result<ScoreCache, ScorerError> {
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ScoreRecord>(&line) {
                    Ok(r) => {
                        entries.insert(r.cache_key.clone(), r);
                    }
                    Err(e) => {
                        skipped += 1;
                        log::warn!("{}:{}: skipping corrupt cache line: {e}", path.display(), i + 1);
                    }
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ScoreCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            skipped_lines: skipped,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Lines dropped as corrupt when the store was opened.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<ScoreRecord> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, record: &ScoreRecord) -> Result<(), ScorerError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(record).map_err(|e| ScorerError::StoreCorruption(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(record.cache_key.clone(), record.clone());
        Ok(())
    }
}

/// Persists `record` to the store at `store` and reads it back by key.
pub fn cache_roundtrip(record: &ScoreRecord, store: &Path) -> Result<ScoreRecord, ScorerError> {
    ScoreCache::open(store)?.put(record)?;
    ScoreCache::open(store)?
        .get(&record.cache_key)
        .ok_or_else(|| ScorerError::StoreCorruption(format!("record {} not found after write", record.cache_key)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(key: &str, score: f64) -> ScoreRecord {
        ScoreRecord {
            cache_key: key.into(),
            definition: "def".into(),
            example_fingerprint: "fp".into(),
            mean_score: score,
            per_instance: vec![score],
            backend_id: "constant:0.5".into(),
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let r = rec("k1", 0.25);
        assert_eq!(cache_roundtrip(&r, &path).unwrap(), r);
        let line = std::fs::read_to_string(&path).unwrap();
        assert_eq!(line.trim_end(), serde_json::to_string(&r).unwrap());
    }

    #[test]
    fn last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache_roundtrip(&rec("k", 0.1), &path).unwrap();
        cache_roundtrip(&rec("k", 0.9), &path).unwrap();
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("k").unwrap().mean_score, 0.9);
    }

    #[test]
    fn corrupt_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&rec("a", 0.5)).unwrap();
        let good2 = serde_json::to_string(&rec("b", 0.5)).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n{good2}\n")).unwrap();
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.skipped_lines(), 1);
        assert!(c.get("a").is_some() && c.get("b").is_some());
    }
}

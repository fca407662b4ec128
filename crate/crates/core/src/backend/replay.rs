use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::{Backend, BackendError, BackendTag, RankerRequest, RawCompletion};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayRecord {
    pub request_key: String,
    pub model: String,
    pub text: String,
}

impl ReplayRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\n",
            self.request_key,
            self.model,
            STANDARD.encode(self.text.as_bytes())
        )
    }

    pub fn from_line(line: &str) -> Option<Self> {
        let mut f = line.trim_end_matches(['\r', '\n']).splitn(3, '\t');
        let (key, model, body) = (f.next()?, f.next()?, f.next()?);
        let text = String::from_utf8(STANDARD.decode(body).ok()?).ok()?;
        Some(Self {
            request_key: key.to_string(),
            model: model.to_string(),
            text,
        })
    }
}

/// Append-only completion cache, one `key \t model \t base64(text)` line per
/// record. Later records for the same key shadow earlier ones.
#[derive(Debug)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, ReplayRecord>>,
    writer: Mutex<Option<File>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            records: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads the file if present. Appending creates it on first write.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = ReplayRecord::from_line(&line).ok_or_else(|| {
                    BackendError::Config(format!(
                        "{}: malformed replay record on line {}",
                        path.display(),
                        n + 1
                    ))
                })?;
                records.insert(rec.request_key.clone(), rec);
            }
        }
        Ok(Self {
            path: Some(path),
            records: RwLock::new(records),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("replay lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<ReplayRecord> {
        self.records
            .read()
            .expect("replay lock poisoned")
            .get(key)
            .cloned()
    }

    pub fn append(&self, record: ReplayRecord) -> Result<(), BackendError> {
        if let Some(path) = &self.path {
            let mut guard = self.writer.lock().expect("replay writer poisoned");
            if guard.is_none() {
                *guard = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let file = guard.as_mut().expect("writer opened above");
            file.write_all(record.to_line().as_bytes())?;
            file.flush()?;
        }
        self.records
            .write()
            .expect("replay lock poisoned")
            .insert(record.request_key.clone(), record);
        Ok(())
    }
}

/// Serves completions from a store only; a miss is an error.
pub struct ReplayBackend {
    store: std::sync::Arc<ReplayStore>,
}

impl ReplayBackend {
    pub fn new(store: std::sync::Arc<ReplayStore>) -> Self {
        Self { store }
    }
}

impl Backend for ReplayBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Replay
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        let start = Instant::now();
        let key = request.request_key();
        match self.store.get(&key) {
            Some(rec) => Ok(RawCompletion {
                request_key: key,
                text: rec.text,
                latency: start.elapsed(),
                backend_tag: BackendTag::Replay,
            }),
            None => Err(BackendError::CacheMiss { key }),
        }
    }
}

/// Wraps a backend and appends each fresh completion to a store. With
/// `reuse`, stored completions are served without calling the inner backend.
pub struct RecordingBackend<B> {
    inner: B,
    store: std::sync::Arc<ReplayStore>,
    reuse: bool,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: std::sync::Arc<ReplayStore>, reuse: bool) -> Self {
        Self {
            inner,
            store,
            reuse,
        }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn tag(&self) -> BackendTag {
        self.inner.tag()
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        let key = request.request_key();
        if self.reuse {
            if let Some(rec) = self.store.get(&key) {
                return Ok(RawCompletion {
                    request_key: key,
                    text: rec.text,
                    latency: Duration::ZERO,
                    backend_tag: BackendTag::Replay,
                });
            }
        }
        let completion = self.inner.execute(request)?;
        self.store.append(ReplayRecord {
            request_key: completion.request_key.clone(),
            model: request.model.clone(),
            text: completion.text.clone(),
        })?;
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::tests::sample_prompt;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting(AtomicUsize);

    impl Backend for Counting {
        fn tag(&self) -> BackendTag {
            BackendTag::Http
        }

        fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(RawCompletion {
                request_key: request.request_key(),
                text: "1. Heat (1995)\n2. Café\tTab".into(),
                latency: Duration::ZERO,
                backend_tag: BackendTag::Http,
            })
        }
    }

    #[test]
    fn record_line_round_trip() {
        let r = ReplayRecord {
            request_key: "ab".into(),
            model: "m".into(),
            text: "x\ny\tz é".into(),
        };
        assert_eq!(ReplayRecord::from_line(&r.to_line()), Some(r));
        assert_eq!(ReplayRecord::from_line("only\ttwo"), None);
    }

    #[test]
    fn record_then_replay_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.tsv");
        let req = RankerRequest::new(sample_prompt("Heat (1995)"), "m");

        let store = Arc::new(ReplayStore::open(&path).unwrap());
        let live = Counting(AtomicUsize::new(0));
        let rec = RecordingBackend::new(&live, store.clone(), true);
        let first = rec.execute(&req).unwrap();
        let again = rec.execute(&req).unwrap();
        assert_eq!(live.0.load(Ordering::SeqCst), 1);
        assert_eq!(again.backend_tag, BackendTag::Replay);
        assert_eq!(first.text, again.text);

        let reopened = Arc::new(ReplayStore::open(&path).unwrap());
        let replay = ReplayBackend::new(reopened);
        assert_eq!(replay.execute(&req).unwrap().text, first.text);

        let other = RankerRequest::new(sample_prompt("Alien (1979)"), "m");
        match replay.execute(&other) {
            Err(BackendError::CacheMiss { key }) => assert_eq!(key, other.request_key()),
            other => panic!("expected cache miss, got {other:?}"),
        }
    }

    #[test]
    fn malformed_store_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "key-without-fields\n").unwrap();
        assert!(matches!(
            ReplayStore::open(&path),
            Err(BackendError::Config(_))
        ));
    }
}

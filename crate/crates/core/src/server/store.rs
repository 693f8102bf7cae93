//! Persistence contract: namespaced key-value records plus append-only logs.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub trait Store: Send + Sync {
    fn get(&self, ns: &str, key: &str) -> io::Result<Option<Vec<u8>>>;
    fn put(&self, ns: &str, key: &str, value: &[u8]) -> io::Result<()>;
    /// Keys of `ns`, sorted.
    fn keys(&self, ns: &str) -> io::Result<Vec<String>>;
    /// Appends one record (no newlines inside) to log `key`.
    fn append(&self, log: &str, key: &str, record: &[u8]) -> io::Result<()>;
    fn read_log(&self, log: &str, key: &str) -> io::Result<Vec<Vec<u8>>>;
}

/// One directory per namespace; records are files written via rename, logs
/// are `<key>.jsonl` files.
pub struct FileStore {
    root: PathBuf,
    append_lock: Mutex<()>,
}

impl FileStore {
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            append_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, ns: &str, key: &str) -> io::Result<PathBuf> {
        let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !s.starts_with('.');
        if !ok(ns) || !ok(key) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("bad store key {ns}/{key}")));
        }
        Ok(self.root.join(ns).join(key))
    }
}

impl Store for FileStore {
    fn get(&self, ns: &str, key: &str) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.path(ns, key)?) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn put(&self, ns: &str, key: &str, value: &[u8]) -> io::Result<()> {
        let path = self.path(ns, key)?;
        fs::create_dir_all(path.parent().expect("namespaced"))?;
        let tmp = path.with_file_name(format!(".{key}.{}.tmp", uuid::Uuid::new_v4().simple()));
        let mut file = fs::File::create(&tmp)?;
        file.write_all(value)?;
        file.sync_data()?;
        fs::rename(tmp, path)
    }

    fn keys(&self, ns: &str) -> io::Result<Vec<String>> {
        let dir = self.root.join(ns);
        let mut keys = Vec::new();
        match fs::read_dir(&dir) {
            Ok(entries) => {
                for entry in entries {
                    let name = entry?.file_name().to_string_lossy().into_owned();
                    if !name.starts_with('.') {
                        keys.push(name);
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        keys.sort();
        Ok(keys)
    }

    fn append(&self, log: &str, key: &str, record: &[u8]) -> io::Result<()> {
        let path = self.path(log, &format!("{key}.jsonl"))?;
        fs::create_dir_all(path.parent().expect("namespaced"))?;
        let _guard = self.append_lock.lock().unwrap();
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let mut line = Vec::with_capacity(record.len() + 2);
        if file.metadata()?.len() > 0 {
            let mut last = [0u8];
            file.seek(SeekFrom::End(-1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                line.push(b'\n');
            }
        }
        line.extend_from_slice(record);
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()
    }

    fn read_log(&self, log: &str, key: &str) -> io::Result<Vec<Vec<u8>>> {
        let bytes = match fs::read(self.path(log, &format!("{key}.jsonl"))?) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        // Only newline-terminated records count; a torn tail from a crash is
        // dropped here and fenced off by the next append.
        let mut lines: Vec<Vec<u8>> = bytes.split(|&b| b == b'\n').map(<[u8]>::to_vec).collect();
        lines.pop();
        Ok(lines.into_iter().filter(|l| !l.is_empty()).collect())
    }
}

/// Volatile store for tests and throwaway servers.
#[derive(Default)]
pub struct MemoryStore {
    records: Mutex<HashMap<(String, String), Vec<u8>>>,
    logs: Mutex<HashMap<(String, String), Vec<Vec<u8>>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn get(&self, ns: &str, key: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.records.lock().unwrap().get(&(ns.to_string(), key.to_string())).cloned())
    }

    fn put(&self, ns: &str, key: &str, value: &[u8]) -> io::Result<()> {
        self.records
            .lock()
            .unwrap()
            .insert((ns.to_string(), key.to_string()), value.to_vec());
        Ok(())
    }

    fn keys(&self, ns: &str) -> io::Result<Vec<String>> {
        let mut keys: Vec<String> = self
            .records
            .lock()
            .unwrap()
            .keys()
            .filter(|(n, _)| n == ns)
            .map(|(_, k)| k.clone())
            .collect();
        keys.sort();
        Ok(keys)
    }

    fn append(&self, log: &str, key: &str, record: &[u8]) -> io::Result<()> {
        self.logs
            .lock()
            .unwrap()
            .entry((log.to_string(), key.to_string()))
            .or_default()
            .push(record.to_vec());
        Ok(())
    }

    fn read_log(&self, log: &str, key: &str) -> io::Result<Vec<Vec<u8>>> {
        Ok(self
            .logs
            .lock()
            .unwrap()
            .get(&(log.to_string(), key.to_string()))
            .cloned()
            .unwrap_or_default())
    }
}

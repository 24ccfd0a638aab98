//! Append-only JSON-lines event files, replayed on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub struct EventLog<E> {
    path: PathBuf,
    file: Mutex<File>,
    _event: PhantomData<fn(E)>,
}

impl<E: Serialize + DeserializeOwned> EventLog<E> {
    /// Opens (creating if needed) the log at `path` and returns every event
    /// already in it. A torn final line from an interrupted write is
    /// dropped; any other unparsable line is an error.
    pub fn open(path: impl AsRef<Path>) -> io::Result<(Self, Vec<E>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut content = String::new();
        file.read_to_string(&mut content)?;

        let mut events = Vec::new();
        let mut good_end = 0;
        for (number, segment) in content.split_inclusive('\n').enumerate() {
            let is_last = good_end + segment.len() == content.len();
            let line = segment.trim();
            if !line.is_empty() {
                match serde_json::from_str(line) {
                    Ok(event) => events.push(event),
                    Err(e) if is_last => {
                        tracing::warn!(path = %path.display(), line = number + 1, "dropping torn event: {e}");
                        break;
                    }
                    Err(e) => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{}:{}: {e}", path.display(), number + 1),
                        ))
                    }
                }
            }
            good_end += segment.len();
        }

        if good_end < content.len() {
            file.set_len(good_end as u64)?;
        }
        // the next append must start on a fresh line
        if good_end > 0 && !content[..good_end].ends_with('\n') {
            file.write_all(b"\n")?;
        }

        Ok((
            Self {
                path,
                file: Mutex::new(file),
                _event: PhantomData,
            },
            events,
        ))
    }

    pub fn append(&self, event: &E) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_appended_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/events.jsonl");
        {
            let (log, events) = EventLog::<u32>::open(&path).unwrap();
            assert!(events.is_empty());
            log.append(&1).unwrap();
            log.append(&2).unwrap();
        }
        let (_, events) = EventLog::<u32>::open(&path).unwrap();
        assert_eq!(events, [1, 2]);
    }

    #[test]
    fn torn_tail_is_dropped_and_appends_continue() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        fs::write(&path, "[1]\n[2").unwrap();
        let (log, events) = EventLog::<Vec<u32>>::open(&path).unwrap();
        assert_eq!(events, [vec![1]]);
        log.append(&vec![3]).unwrap();
        drop(log);
        let (_, events) = EventLog::<Vec<u32>>::open(&path).unwrap();
        assert_eq!(events, [vec![1], vec![3]]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        fs::write(&path, "1\nnope\n2\n").unwrap();
        assert!(EventLog::<u32>::open(&path).is_err());
    }
}

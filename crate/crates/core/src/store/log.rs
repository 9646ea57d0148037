//! Line-delimited JSON event log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::state::{LogRecord, StoreEvent, StoreState};
use super::StoreError;

pub(super) struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub(super) fn open(path: &Path) -> Result<(EventLog, StoreState), StoreError> {
        let state = if path.exists() {
            replay(path)?
        } else {
            StoreState::default()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            EventLog {
                path: path.to_path_buf(),
                file,
            },
            state,
        ))
    }

    pub(super) fn append(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }

    /// Rewrites the log as a single snapshot record.
    pub(super) fn compact(&mut self, state: &StoreState, at: crate::Timestamp) -> Result<(), StoreError> {
        let record = LogRecord {
            seq: state.seq,
            at,
            event: StoreEvent::Snapshot(Box::new(state.clone())),
        };
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut f = File::create(&tmp)?;
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }
}

/// Rebuilds state from a log file. Fails at the first record that does not
/// parse or breaks the sequence.
pub fn replay(path: &Path) -> Result<StoreState, StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut state = StoreState::default();
    let mut offset: u64 = 0;
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let here = offset;
        offset += n as u64;
        let text = line.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        if !line.ends_with('\n') {
            return Err(StoreError::CorruptLog {
                offset: here,
                reason: "truncated record".into(),
            });
        }
        let record: LogRecord = serde_json::from_str(text).map_err(|e| StoreError::CorruptLog {
            offset: here,
            reason: e.to_string(),
        })?;
        match &record.event {
            StoreEvent::Snapshot(s) => {
                if !first || s.seq != record.seq {
                    return Err(StoreError::CorruptLog {
                        offset: here,
                        reason: "snapshot record out of place".into(),
                    });
                }
            }
            _ if record.seq != state.seq + 1 => {
                return Err(StoreError::CorruptLog {
                    offset: here,
                    reason: format!("expected seq {}, found {}", state.seq + 1, record.seq),
                });
            }
            _ => {}
        }
        state.apply(&record);
        first = false;
    }
    Ok(state)
}

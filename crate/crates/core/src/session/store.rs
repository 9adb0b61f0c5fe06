//! Append-only JSONL transcript store, one negotiation per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Transcript;

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("transcript store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("transcript store {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("transcript store {path} line {line}: schema version {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        line: usize,
        found: u64,
        expected: u32,
    },
    #[error("negotiation {0} is already in the store")]
    Duplicate(String),
    #[error("negotiation {0} is not in the store")]
    Unknown(String),
}

pub struct TranscriptStore {
    path: PathBuf,
    file: File,
    /// negotiation_id → (byte offset, length including newline).
    index: HashMap<String, (u64, u64)>,
    order: Vec<String>,
    end: u64,
}

impl TranscriptStore {
    /// Opens or creates the store. A trailing partial line (an interrupted
    /// write) is truncated; any other malformed line is an error.
    pub fn open(path: &Path) -> Result<TranscriptStore, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut reader = BufReader::new(file.try_clone().map_err(io)?);
        let mut index = HashMap::new();
        let mut order = Vec::new();
        let mut offset = 0u64;
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io)? as u64;
            if n == 0 {
                break;
            }
            line_no += 1;
            if !line.ends_with('\n') {
                log::warn!(
                    "{}: dropping {} bytes of an interrupted write",
                    path.display(),
                    n
                );
                file.set_len(offset).map_err(io)?;
                break;
            }
            let id = parse_line(path, line_no, &line)?.negotiation_id;
            if index.insert(id.clone(), (offset, n)).is_some() {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("negotiation {id} appears twice"),
                });
            }
            order.push(id);
            offset += n;
        }
        Ok(TranscriptStore {
            path: path.to_path_buf(),
            file,
            index,
            order,
            end: offset,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, negotiation_id: &str) -> bool {
        self.index.contains_key(negotiation_id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Ids in file order.
    pub fn ids(&self) -> &[String] {
        &self.order
    }

    /// Byte length of the committed records.
    pub fn byte_len(&self) -> u64 {
        self.end
    }

    pub fn append(&mut self, transcript: &Transcript) -> Result<(), StoreError> {
        if self.contains(&transcript.negotiation_id) {
            return Err(StoreError::Duplicate(transcript.negotiation_id.clone()));
        }
        let mut line = serde_json::to_string(transcript).expect("transcript serializes");
        line.push('\n');
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)?;
        let n = line.len() as u64;
        self.index.insert(transcript.negotiation_id.clone(), (self.end, n));
        self.order.push(transcript.negotiation_id.clone());
        self.end += n;
        Ok(())
    }

    pub fn get(&self, negotiation_id: &str) -> Result<Transcript, StoreError> {
        let (offset, len) = *self
            .index
            .get(negotiation_id)
            .ok_or_else(|| StoreError::Unknown(negotiation_id.to_string()))?;
        let line = self.read_range(offset, len)?;
        parse_line(&self.path, 0, &String::from_utf8_lossy(&line))
    }

    fn read_range(&self, offset: u64, len: u64) -> Result<Vec<u8>, StoreError> {
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        let mut f = File::open(&self.path).map_err(io)?;
        f.seek(SeekFrom::Start(offset)).map_err(io)?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf).map_err(io)?;
        Ok(buf)
    }

    /// Rewrites the file with records in `order` (ids not listed keep their
    /// relative order at the end), via write-then-rename.
    pub fn rewrite_ordered(&mut self, order: &[String]) -> Result<(), StoreError> {
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        let mut seen = std::collections::HashSet::new();
        let mut final_order: Vec<String> = order
            .iter()
            .filter(|id| self.index.contains_key(*id) && seen.insert((*id).clone()))
            .cloned()
            .collect();
        final_order.extend(self.order.iter().filter(|id| !seen.contains(*id)).cloned());

        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut src = File::open(&self.path).map_err(io)?;
            let mut out = std::io::BufWriter::new(File::create(&tmp).map_err(io)?);
            let mut buf = Vec::new();
            for id in &final_order {
                let (offset, len) = self.index[id];
                src.seek(SeekFrom::Start(offset)).map_err(io)?;
                buf.resize(len as usize, 0);
                src.read_exact(&mut buf).map_err(io)?;
                out.write_all(&buf).map_err(io)?;
            }
            out.flush().map_err(io)?;
            out.get_ref().sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, &self.path).map_err(io)?;
        *self = TranscriptStore::open(&self.path)?;
        Ok(())
    }
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<Transcript, StoreError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != TRANSCRIPT_SCHEMA_VERSION as u64 {
        return Err(StoreError::Schema {
            path: path.to_path_buf(),
            line: line_no,
            found: version,
            expected: TRANSCRIPT_SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads every record in file order. A trailing partial line is ignored.
pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    let mut lines = reader.split(b'\n').enumerate().peekable();
    let complete = {
        let meta = std::fs::metadata(path).map_err(io)?;
        let mut f = File::open(path).map_err(io)?;
        if meta.len() == 0 {
            true
        } else {
            f.seek(SeekFrom::End(-1)).map_err(io)?;
            let mut last = [0u8];
            f.read_exact(&mut last).map_err(io)?;
            last[0] == b'\n'
        }
    };
    while let Some((i, line)) = lines.next() {
        let line = line.map_err(io)?;
        if lines.peek().is_none() && !complete {
            break;
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        out.push(parse_line(path, i + 1, &String::from_utf8_lossy(&line))?);
    }
    Ok(out)
}

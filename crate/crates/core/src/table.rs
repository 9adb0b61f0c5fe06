//! Delimited tables with a provenance stamp.
//!
//! Every emitted table starts with `#`-comment lines carrying the config
//! hash and engine version, followed by a CSV header and rows. Readers can
//! insist on a particular config hash so artifacts from different runs are
//! never mixed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const ENGINE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: String,
    pub engine_version: String,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Stamp {
            config_hash: config_hash.into(),
            engine_version: ENGINE_VERSION.to_string(),
        }
    }

    pub fn header(&self) -> String {
        format!(
            "# config_hash={}\n# engine={}\n",
            self.config_hash, self.engine_version
        )
    }

    /// Reads the stamp from leading comment lines, if present.
    pub fn parse(text: &str) -> Option<Stamp> {
        let mut hash = None;
        let mut engine = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            if let Some(v) = body.strip_prefix("config_hash=") {
                hash = Some(v.trim().to_string());
            } else if let Some(v) = body.strip_prefix("engine=") {
                engine = Some(v.trim().to_string());
            }
        }
        Some(Stamp {
            config_hash: hash?,
            engine_version: engine.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Csv { origin: String, message: String },
    #[error("{origin} was produced under config {found}, expected {expected}; rerun the producing stage")]
    HashMismatch {
        origin: String,
        found: String,
        expected: String,
    },
    #[error("{origin} has no config stamp")]
    Unstamped { origin: String },
}

pub fn to_csv_string<T: Serialize>(stamp: Option<&Stamp>, rows: &[T]) -> Result<String, TableError> {
    let mut out = Vec::new();
    if let Some(s) = stamp {
        out.extend_from_slice(s.header().as_bytes());
    }
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut out);
        for row in rows {
            w.serialize(row).map_err(|e| TableError::Csv {
                origin: "table".into(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| TableError::Io {
            path: PathBuf::from("<memory>"),
            source: e,
        })?;
    }
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

pub fn from_csv_str<T: DeserializeOwned>(
    text: &str,
    origin: &str,
    expected_hash: Option<&str>,
) -> Result<(Option<Stamp>, Vec<T>), TableError> {
    let stamp = Stamp::parse(text);
    if let Some(expected) = expected_hash {
        match &stamp {
            None => return Err(TableError::Unstamped { origin: origin.into() }),
            Some(s) if s.config_hash != expected => {
                return Err(TableError::HashMismatch {
                    origin: origin.into(),
                    found: s.config_hash.clone(),
                    expected: expected.into(),
                })
            }
            _ => {}
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| TableError::Csv {
                origin: origin.into(),
                message: format!("row {}: {e}", i + 1),
            })
        })
        .collect::<Result<Vec<T>, _>>()?;
    Ok((stamp, rows))
}

/// Writes via a temporary file and rename so readers never see a torn table.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), TableError> {
    let io = |source| TableError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(contents).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn write_table<T: Serialize>(path: &Path, stamp: Option<&Stamp>, rows: &[T]) -> Result<(), TableError> {
    let text = to_csv_string(stamp, rows)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_table<T: DeserializeOwned>(
    path: &Path,
    expected_hash: Option<&str>,
) -> Result<(Option<Stamp>, Vec<T>), TableError> {
    let text = std::fs::read_to_string(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_csv_str(&text, &path.display().to_string(), expected_hash)
}

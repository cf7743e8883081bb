//! Line-delimited JSON records.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl_record<T: Serialize, W: Write>(mut w: W, record: &T) -> io::Result<()> {
    serde_json::to_writer(&mut w, record)?;
    w.write_all(b"\n")
}

pub fn write_jsonl<'a, T: Serialize + 'a, W: Write, I: IntoIterator<Item = &'a T>>(
    mut w: W,
    records: I,
) -> io::Result<()> {
    for r in records {
        write_jsonl_record(&mut w, r)?;
    }
    w.flush()
}

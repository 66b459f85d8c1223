//! Newline-delimited JSON helpers shared by every artifact writer.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum NdjsonError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub fn write<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<(), NdjsonError> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one value per non-blank line. Line numbers in errors are 1-based.
pub fn read<R: BufRead, T: DeserializeOwned>(input: R) -> Result<Vec<T>, NdjsonError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| NdjsonError::Parse { line: i + 1, source })?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_file<T: DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>, NdjsonError> {
    let f = std::fs::File::open(path)?;
    read(std::io::BufReader::new(f))
}

pub fn write_file<T: Serialize>(path: &std::path::Path, items: &[T]) -> Result<(), NdjsonError> {
    let f = std::fs::File::create(path)?;
    write(std::io::BufWriter::new(f), items)
}

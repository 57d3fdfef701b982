//! JSON-lines reading and writing.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use serde::de::DeserializeOwned;
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

/// Parses one value per non-blank line.
pub fn read<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_path<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    read(BufReader::new(File::open(path)?))
}

pub fn write<T: Serialize>(mut writer: impl Write, values: &[T]) -> io::Result<()> {
    for v in values {
        serde_json::to_writer(&mut writer, v)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_bytes<T: Serialize>(values: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf, values).expect("writing to a Vec cannot fail");
    buf
}

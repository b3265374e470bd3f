//! On-disk formats: the interferogram container, raw arrays, JSON, CSV and PNG.

pub mod container;
pub mod figures;
pub mod raw;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use container::{read_header, read_stack, write_stack, StackHeader};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let to_err = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in rows {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Fails with a data error naming `what` when `path` is missing.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::data(format!("missing {what}: {} (run the earlier stage first)", path.display())))
    }
}

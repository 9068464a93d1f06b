//! Atomic file output, JSON-lines events on stderr and exit-code mapping.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};
use tempfile::NamedTempFile;
use thiserror::Error;

use apeorder_core::corpus::CorpusError;
use apeorder_model::ModelError;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;

/// Invalid input data or settings.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct DataError(pub String);

/// Writes `path` through a temporary file in the same directory, then renames it.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json_lines<T: serde::Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Emits `{"event": name, ...fields}` on stderr.
pub fn event(name: &str, fields: Value) {
    let mut obj = Map::new();
    obj.insert("event".into(), Value::String(name.into()));
    if let Value::Object(f) = fields {
        obj.extend(f);
    }
    let mut err = io::stderr().lock();
    let _ = serde_json::to_writer(&mut err, &Value::Object(obj));
    let _ = err.write_all(b"\n");
}

/// Exit status for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return if matches!(e, CorpusError::Io(_)) { EXIT_IO } else { EXIT_DATA };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return if matches!(e, ModelError::Io(_)) { EXIT_IO } else { EXIT_DATA };
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { EXIT_IO } else { EXIT_DATA };
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.is_io() { EXIT_IO } else { EXIT_DATA };
        }
        if cause.downcast_ref::<DataError>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_OTHER
}

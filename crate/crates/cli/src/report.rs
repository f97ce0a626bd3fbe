//! Report envelopes and atomic file output.

use crate::config::RunConfig;
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const SCHEMA: u32 = 1;

/// What a command produced.
pub struct Outcome {
    pub result: Value,
    pub summary: String,
    /// `false` when a checked inequality or tolerance failed.
    pub passed: bool,
    pub csv: Vec<(String, Vec<u8>)>,
}

pub fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// The JSON report. Only `metadata` varies between identical runs.
pub fn envelope(config: &RunConfig, outcome: &Outcome, started: f64, finished: f64) -> Value {
    json!({
        "schema": SCHEMA,
        "version": tei_core::VERSION,
        "config": config,
        "status": if outcome.passed { "ok" } else { "assertion_failed" },
        "summary": outcome.summary,
        "result": outcome.result,
        "metadata": {
            "started_unix": started,
            "finished_unix": finished,
            "elapsed_seconds": finished - started,
        },
    })
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_outputs(config: &RunConfig, report: &Value, outcome: &Outcome) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(format!("{}.json", config.command));
    let mut text = serde_json::to_vec_pretty(report).map_err(std::io::Error::other)?;
    text.push(b'\n');
    write_atomic(&path, &text)?;
    for (name, bytes) in &outcome.csv {
        write_atomic(&config.out_dir.join(name), bytes)?;
    }
    Ok(path)
}

/// CSV bytes from a header and serializable rows.
pub fn csv_bytes<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let b = csv_bytes(&["i", "x"], [(0usize, 0.5f64), (1, 1.5)]);
        assert_eq!(String::from_utf8(b).unwrap(), "i,x\n0,0.5\n1,1.5\n");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

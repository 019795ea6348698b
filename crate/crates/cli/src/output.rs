use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use tempfile::NamedTempFile;

use crate::error::CliError;

/// What a command produced: the JSON report and any data files.
pub struct Report {
    /// Command name, also the stem of the report file.
    pub name: &'static str,
    pub json: Value,
    /// `(file name, contents)` of CSV plot data.
    pub files: Vec<(String, Vec<u8>)>,
}

/// Run metadata kept apart from the report so the report stays byte-stable.
#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    version: &'a str,
    args: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
    files: Vec<&'a str>,
}

fn unix(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn render(json: &Value) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(json)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(())
}

/// Prints the report on stdout and, with an output directory, writes
/// `<name>.json`, the data files and `<name>.meta.json` there.
pub fn emit(report: &Report, out: Option<&Path>, started: SystemTime) -> Result<(), CliError> {
    let body = render(&report.json)?;
    std::io::stdout().write_all(&body)?;
    let Some(dir) = out else { return Ok(()) };
    fs::create_dir_all(dir)?;
    let main = format!("{}.json", report.name);
    write_atomic(dir, &main, &body)?;
    for (name, bytes) in &report.files {
        write_atomic(dir, name, bytes)?;
    }
    let mut files = vec![main.as_str()];
    files.extend(report.files.iter().map(|(n, _)| n.as_str()));
    let meta = Meta {
        command: report.name,
        version: env!("CARGO_PKG_VERSION"),
        args: std::env::args().skip(1).collect(),
        started_unix: unix(started),
        finished_unix: unix(SystemTime::now()),
        files,
    };
    write_atomic(dir, &format!("{}.meta.json", report.name), &render(&serde_json::to_value(meta)?)?)
}

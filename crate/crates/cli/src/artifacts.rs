use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use qndmt::counts::{CountRow, CountsTable};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::error::{CliError, Result};

pub const SCHEDULE_FILE: &str = "schedule.json";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const COUNTS_JSON: &str = "counts.json";
pub const COUNTS_CSV: &str = "counts.csv";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const QUALITY_JSON: &str = "quality.json";
pub const QUALITY_CSV: &str = "quality.csv";

/// Every stage output is wrapped with the hash of the config that made it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub variant: Variant,
    pub content: T,
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_artifact<T: Serialize>(path: &Path, hash: &str, variant: Variant, content: &T) -> Result<()> {
    let doc = Artifact { config_hash: hash.to_string(), variant, content };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::malformed(path, e))?;
    write_text(path, &text)
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(CliError::HashMismatch {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, hash: &str, variant: Variant) -> Result<T> {
    let text = read_text(path)?;
    let doc: Artifact<T> = serde_json::from_str(&text).map_err(|e| CliError::malformed(path, e))?;
    check_hash(path, &doc.config_hash, hash)?;
    if doc.variant != variant {
        return Err(CliError::malformed(path, format!("holds the {} variant, expected {variant}", doc.variant)));
    }
    Ok(doc.content)
}

/// Writes rows as CSV after `# key=value` header lines.
pub fn write_csv<R: Serialize>(path: &Path, header: &[(&str, String)], rows: &[R]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (k, v) in header {
        writeln!(out, "# {k}={v}").map_err(|e| CliError::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::malformed(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub type CsvHeader = Vec<(String, String)>;

/// Header values and rows of a file written by [`write_csv`].
pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<(CsvHeader, Vec<R>)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut header = Vec::new();
    for line in BufReader::new(&file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let Some(rest) = line.strip_prefix("# ") else { break };
        let (k, v) = rest.split_once('=').ok_or_else(|| CliError::malformed(path, format!("bad header line {line:?}")))?;
        header.push((k.to_string(), v.to_string()));
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| CliError::malformed(path, e))?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<R>, _>>().map_err(|e| CliError::malformed(path, e))?;
    Ok((header, rows))
}

fn header_value<'a>(path: &Path, header: &'a [(String, String)], key: &str) -> Result<&'a str> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| CliError::malformed(path, format!("missing `{key}` header")))
}

pub fn write_counts_csv(path: &Path, hash: &str, variant: Variant, counts: &CountsTable) -> Result<()> {
    let header = [
        ("config_hash", hash.to_string()),
        ("variant", variant.to_string()),
        ("shots_per_circuit", counts.shots_per_circuit().to_string()),
    ];
    write_csv(path, &header, &counts.rows())
}

pub fn read_counts_csv(path: &Path, hash: &str, variant: Variant) -> Result<CountsTable> {
    let (header, rows) = read_csv::<CountRow>(path)?;
    check_hash(path, header_value(path, &header, "config_hash")?, hash)?;
    if header_value(path, &header, "variant")? != variant.name() {
        return Err(CliError::malformed(path, format!("does not hold the {variant} variant")));
    }
    let shots: u64 = header_value(path, &header, "shots_per_circuit")?
        .parse()
        .map_err(|_| CliError::malformed(path, "shots_per_circuit is not an integer"))?;
    CountsTable::from_rows(shots, &rows).map_err(|e| CliError::malformed(path, e))
}

/// Output directory of one variant.
pub fn variant_dir(root: &Path, variant: Variant) -> PathBuf {
    root.join(variant.name())
}

//! File formats: line-delimited JSON datasets, TSV frequency tables and the
//! versioned JSON files for trained heads and calibration profiles.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use route_lmt_core::freq::DEFAULT_FLOOR_FREQ;
use route_lmt_core::{CalibrationProfile, Dataset, FreqTable, LinearHead, RequestRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const FLOOR_HEADER: &str = "#floor_freq=";

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses JSONL records; `origin` names the source in error messages.
pub fn parse_dataset(reader: impl BufRead, origin: &Path) -> Result<Dataset> {
    let line_err = |line: usize, message: String| Error::Line {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dim: Option<(usize, usize)> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| Error::Read {
            path: origin.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RequestRecord =
            serde_json::from_str(&line).map_err(|e| line_err(lineno, e.to_string()))?;
        record
            .validate()
            .map_err(|e| line_err(lineno, e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(line_err(lineno, format!("duplicate record id {:?}", record.id)));
        }
        if let Some(features) = &record.features {
            match dim {
                None => dim = Some((features.len(), lineno)),
                Some((d, first)) if d != features.len() => {
                    return Err(line_err(
                        lineno,
                        format!(
                            "record {:?} has {} features but line {first} has {d}",
                            record.id,
                            features.len()
                        ),
                    ))
                }
                Some(_) => {}
            }
        }
        records.push(record);
    }
    Ok(Dataset::new(records)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(BufReader::new(open(path)?), path)
}

pub fn write_dataset(dataset: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    for record in dataset.records() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(write_err(path))?;
    write_dataset(dataset, BufWriter::new(file)).map_err(write_err(path))
}

/// `token<TAB>frequency` lines with an optional `#floor_freq=<float>` header.
pub fn parse_freq_table(reader: impl BufRead, origin: &Path) -> Result<FreqTable> {
    let line_err = |line: usize, message: String| Error::Line {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut table: Option<FreqTable> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| Error::Read {
            path: origin.to_path_buf(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        if let Some(value) = line.strip_prefix(FLOOR_HEADER) {
            if table.is_some() {
                return Err(line_err(lineno, "floor_freq header must come first".into()));
            }
            let floor: f64 = value
                .trim()
                .parse()
                .map_err(|_| line_err(lineno, format!("bad floor_freq {value:?}")))?;
            table = Some(FreqTable::new(floor).map_err(|e| line_err(lineno, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (token, freq) = line
            .split_once('\t')
            .ok_or_else(|| line_err(lineno, "expected token<TAB>frequency".into()))?;
        let freq: f64 = freq
            .trim()
            .parse()
            .map_err(|_| line_err(lineno, format!("bad frequency {freq:?}")))?;
        table
            .get_or_insert_with(FreqTable::default)
            .insert(token.to_string(), freq)
            .map_err(|e| line_err(lineno, e.to_string()))?;
    }
    Ok(table.unwrap_or_default())
}

pub fn load_freq_table(path: impl AsRef<Path>) -> Result<FreqTable> {
    let path = path.as_ref();
    parse_freq_table(BufReader::new(open(path)?), path)
}

pub fn save_freq_table(table: &FreqTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(write_err(path))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        if table.floor_freq() != DEFAULT_FLOOR_FREQ {
            writeln!(out, "{FLOOR_HEADER}{}", table.floor_freq())?;
        }
        for (token, freq) in table.iter() {
            writeln!(out, "{token}\t{freq}")?;
        }
        out.flush()
    };
    write().map_err(write_err(path))
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn save_versioned<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Versioned {
        version: FORMAT_VERSION,
        body: value,
    })
    .map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(write_err(path))
}

fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
    parse_versioned(&text, path)
}

fn parse_versioned<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let schema = |message: String| Error::Schema {
        path: PathBuf::from(path),
        message,
    };
    let mut value: Value = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let object = value
        .as_object_mut()
        .ok_or_else(|| schema("expected a JSON object".into()))?;
    match object.remove("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(FORMAT_VERSION as u64) => {}
        Some(other) => {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: other.to_string(),
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(schema("missing \"version\" field".into())),
    }
    serde_json::from_value(value).map_err(|e| schema(e.to_string()))
}

pub fn save_head(head: &LinearHead, path: impl AsRef<Path>) -> Result<()> {
    save_versioned(head, path.as_ref())
}

pub fn load_head(path: impl AsRef<Path>) -> Result<LinearHead> {
    let path = path.as_ref();
    let head: LinearHead = load_versioned(path)?;
    head.validate().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(head)
}

pub fn save_profile(profile: &CalibrationProfile, path: impl AsRef<Path>) -> Result<()> {
    save_versioned(profile, path.as_ref())
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<CalibrationProfile> {
    let path = path.as_ref();
    let profile: CalibrationProfile = load_versioned(path)?;
    profile.validate().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(profile)
}

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Jsonl,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// One value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn json_err(e: serde_json::Error) -> CliError {
    match e.io_error_kind() {
        Some(kind) => stdout_err(io::Error::from(kind)),
        None => CliError::Input(e.to_string()),
    }
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Write {
        path: "<stdout>".into(),
        source,
    }
}

pub fn emit<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(json_err)?;
    writeln!(out).map_err(stdout_err)
}

/// JSON lines by default, or a single JSON array with `Format::Json`.
pub fn emit_many<T: Serialize>(items: &[T], format: Option<Format>) -> Result<()> {
    if format == Some(Format::Json) {
        return emit(&items);
    }
    let mut out = io::BufWriter::new(io::stdout().lock());
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(json_err)?;
        writeln!(out).map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)
}

/// Parses `a,b,c` into numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("invalid list element {p:?}")))
        .collect()
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Comma-separated values taken as one argument.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: std::str::FromStr> std::str::FromStr for List<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        parse_list(s).map(List)
    }
}

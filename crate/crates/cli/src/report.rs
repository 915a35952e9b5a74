//! Report envelope, exit status and output writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use scalehelm_core::io::{fmt_f64, to_json};

use crate::args::Format;

pub const TOOL: &str = "scalehelm";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] scalehelm_core::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn status(&self) -> Status {
        match self {
            CliError::Core(scalehelm_core::Error::NotHamiltonian { .. }) => Status::VerdictFalse,
            CliError::Core(e) if e.is_numerical() => Status::NumericalFailure,
            _ => Status::UsageError,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    VerdictFalse,
    UsageError,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::VerdictFalse => 1,
            Status::UsageError => 2,
            Status::NumericalFailure => 3,
        }
    }
}

/// What a command produced. `failure` marks a completed run whose numerics
/// did not converge; the report is still written.
pub struct Outcome<R> {
    pub report: R,
    pub verdict: Option<bool>,
    pub failure: Option<String>,
    /// Tabular output used for `--format csv`; otherwise the report's
    /// scalar fields are flattened into `key,value` rows.
    pub table: Option<String>,
}

impl<R> Outcome<R> {
    pub fn new(report: R) -> Self {
        Self {
            report,
            verdict: None,
            failure: None,
            table: None,
        }
    }

    pub fn status(&self) -> Status {
        if self.failure.is_some() {
            Status::NumericalFailure
        } else if self.verdict == Some(false) {
            Status::VerdictFalse
        } else {
            Status::Ok
        }
    }
}

/// The argument echo together with the global options.
#[derive(Serialize)]
pub struct Config<'a, A> {
    #[serde(flatten)]
    pub args: &'a A,
    pub format: Format,
    pub output: Option<&'a Path>,
}

#[derive(Serialize)]
pub struct Envelope<'a, C, R> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: &'a C,
    pub status: Status,
    pub exit_code: u8,
    pub verdict: Option<bool>,
    pub error: Option<String>,
    pub report: Option<&'a R>,
}

/// Flattens the scalar leaves of a JSON value into `key,value` rows with
/// dotted keys. Arrays are skipped.
pub fn flatten_csv(value: &Value) -> String {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, rows);
                }
            }
            Value::Array(_) => {}
            Value::Null => rows.push((prefix.to_string(), String::new())),
            Value::Bool(b) => rows.push((prefix.to_string(), b.to_string())),
            Value::Number(n) => {
                let text = match (n.as_i64(), n.as_u64(), n.as_f64()) {
                    (Some(i), _, _) if !n.is_f64() => i.to_string(),
                    (_, Some(u), _) if !n.is_f64() => u.to_string(),
                    (_, _, Some(x)) => fmt_f64(x),
                    _ => n.to_string(),
                };
                rows.push((prefix.to_string(), text));
            }
            Value::String(s) => rows.push((prefix.to_string(), csv_field(s))),
        }
    }
    let mut rows = Vec::new();
    walk("", value, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Renders the envelope (or the CSV view of the report) as text.
pub fn render<C: Serialize, R: Serialize>(
    format: Format,
    envelope: &Envelope<'_, C, R>,
    table: Option<&str>,
) -> Result<String, CliError> {
    let json_err = |e: serde_json::Error| CliError::usage(format!("cannot serialize report: {e}"));
    match format {
        Format::Json => to_json(envelope).map_err(json_err),
        Format::Csv => match (table, envelope.report) {
            (Some(t), _) => Ok(t.to_string()),
            (None, Some(r)) => Ok(flatten_csv(&serde_json::to_value(r).map_err(json_err)?)),
            (None, None) => Ok(String::new()),
        },
    }
}

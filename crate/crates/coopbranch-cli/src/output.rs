//! Deterministic CSV/JSON writers and atomic file placement.
//!
//! Every file starts with a schema id so downstream readers can dispatch on
//! version. CSV files carry it as a `#`-prefixed first line above the header
//! row; JSON documents carry it in a `schema` field. Output bytes are pure
//! functions of (config, seed, binary version): wall-clock time goes to
//! stderr, never into a file.

use std::io;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::config::{CliResult, Failure};

/// Build identifier stamped into JSON summaries (git describe or version).
pub const BUILD_ID: &str = env!("COOPBRANCH_BUILD");

/// Incremental CSV document with RFC-4180 quoting.
pub struct Csv {
    buf: String,
}

impl Csv {
    /// Starts a document: schema comment line, then the header row.
    #[must_use]
    pub fn new(schema: &str, header: &[&str]) -> Self {
        let mut doc = Csv {
            buf: format!("# schema: {schema}\n"),
        };
        doc.row_strs(header);
        doc
    }

    /// Appends one row of preformatted fields, quoting where needed.
    pub fn row_strs(&mut self, fields: &[&str]) {
        for (i, field) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            if field.contains([',', '"', '\n', '\r']) {
                self.buf.push('"');
                self.buf.push_str(&field.replace('"', "\"\""));
                self.buf.push('"');
            } else {
                self.buf.push_str(field);
            }
        }
        self.buf.push('\n');
    }

    /// Appends one row of mixed display values.
    pub fn row(&mut self, fields: &[CsvField]) {
        let rendered: Vec<String> = fields.iter().map(CsvField::render).collect();
        let refs: Vec<&str> = rendered.iter().map(String::as_str).collect();
        self.row_strs(&refs);
    }

    #[must_use]
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// One CSV cell. Floats render via the shortest round-trip formatting so
/// re-reading the file reproduces the exact bit pattern.
pub enum CsvField {
    F(f64),
    U(u64),
    S(String),
    B(bool),
}

impl CsvField {
    fn render(&self) -> String {
        match self {
            CsvField::F(x) => format!("{x}"),
            CsvField::U(x) => format!("{x}"),
            CsvField::S(s) => s.clone(),
            CsvField::B(b) => format!("{b}"),
        }
    }
}

/// JSON number that degrades NaN/infinity to null instead of panicking.
#[must_use]
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

/// JSON array of [`num`] values.
#[must_use]
pub fn num_array(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// Assembles the common JSON envelope around a command's payload. `Map` is
/// backed by a sorted map, so key order and therefore bytes are stable.
#[must_use]
pub fn envelope(schema: &str, command: &str, seed: u64, payload: Map<String, Value>) -> Vec<u8> {
    let mut doc = Map::new();
    doc.insert("schema".into(), Value::String(schema.into()));
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("seed".into(), Value::from(seed));
    doc.insert("build".into(), Value::String(BUILD_ID.into()));
    for (k, v) in payload {
        doc.insert(k, v);
    }
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(doc)).expect("object serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes through a `.partial` sibling and renames into place, so an
/// interrupted write never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = partial_path(path);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map_or_else(Default::default, ToOwned::to_owned);
    name.push(".partial");
    path.with_file_name(name)
}

/// Everything a command produced, routed to disk or stdout by `main`.
#[derive(Default)]
pub struct Artifacts {
    pub csv: Option<Vec<u8>>,
    pub json: Option<Vec<u8>>,
    /// Extra files with explicit destinations (diagram images).
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    /// Writes all artifacts. The JSON summary goes to stdout when no
    /// `--out-json` path was given; CSV without a path is simply dropped.
    pub fn emit(self, out_csv: Option<&Path>, out_json: Option<&Path>) -> CliResult<()> {
        let io_err = |path: &Path, e: io::Error| {
            Failure::Runtime(format!("writing {}: {e}", path.display()))
        };
        if let (Some(bytes), Some(path)) = (self.csv.as_ref(), out_csv) {
            write_atomic(path, bytes).map_err(|e| io_err(path, e))?;
        }
        for (path, bytes) in &self.files {
            write_atomic(path, bytes).map_err(|e| io_err(path, e))?;
        }
        match (self.json, out_json) {
            (Some(bytes), Some(path)) => {
                write_atomic(path, &bytes).map_err(|e| io_err(path, e))?;
            }
            (Some(bytes), None) => {
                use io::Write;
                io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| Failure::Runtime(format!("writing stdout: {e}")))?;
            }
            (None, _) => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_fields_containing_commas_and_quotes() {
        let mut doc = Csv::new("coopbranch.test.v1", &["a", "b"]);
        doc.row(&[
            CsvField::S("0,1,2".into()),
            CsvField::S("say \"hi\"".into()),
        ]);
        let text = String::from_utf8(doc.into_bytes()).expect("utf8");
        assert_eq!(
            text, "# schema: coopbranch.test.v1\na,b\n\"0,1,2\",\"say \"\"hi\"\"\"\n",
            "quoting must follow RFC 4180"
        );
    }

    #[test]
    fn float_fields_render_shortest_round_trip() {
        let mut doc = Csv::new("coopbranch.test.v1", &["x"]);
        doc.row(&[CsvField::F(0.1)]);
        doc.row(&[CsvField::F(2.0 / 3.0)]);
        let text = String::from_utf8(doc.into_bytes()).expect("utf8");
        assert!(text.contains("\n0.1\n"), "0.1 renders exactly: {text}");
        assert!(
            text.contains("\n0.6666666666666666\n"),
            "two thirds renders with full precision: {text}"
        );
    }

    #[test]
    fn non_finite_numbers_become_json_null() {
        assert_eq!(
            num(f64::NAN),
            Value::Null,
            "NaN must not panic the serializer"
        );
        assert_eq!(num(f64::INFINITY), Value::Null, "infinity degrades to null");
        assert_eq!(num(1.5), Value::from(1.5), "finite values pass through");
    }

    #[test]
    fn atomic_write_leaves_no_partial_on_success() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"data").expect("write");
        assert_eq!(
            std::fs::read(&path).expect("read"),
            b"data",
            "final file has the bytes"
        );
        assert!(
            !dir.path().join("out.csv.partial").exists(),
            "partial file must be renamed away"
        );
    }
}

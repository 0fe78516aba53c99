//! Report writers. Every CSV starts with a `#` comment line and every JSON
//! report has a `header` object; both carry the tool version, the seed and
//! the configuration hash.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Header {
    pub fn new(command: &str, seed: u64, config_hash: String) -> Self {
        Header {
            tool: "dualfilter",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config_hash,
        }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} command={} seed={} config_sha256={}",
            self.tool, self.version, self.command, self.seed, self.config_hash
        )
    }
}

/// Output directory plus header shared by the files of one command.
#[derive(Debug, Clone)]
pub struct ReportSink {
    pub dir: PathBuf,
    pub header: Header,
}

impl ReportSink {
    pub fn new(dir: &Path, header: Header) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(ReportSink {
            dir: dir.to_path_buf(),
            header,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv<I, R>(&self, name: &str, columns: &[&str], rows: I) -> CliResult<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        let mut buf = Vec::new();
        buf.extend_from_slice(self.header.comment_line().as_bytes());
        buf.push(b'\n');
        {
            let mut writer = csv::Writer::from_writer(&mut buf);
            let to_err = |e: csv::Error| CliError::Input(format!("{name}: {e}"));
            writer.write_record(columns).map_err(to_err)?;
            for row in rows {
                writer.write_record(row).map_err(to_err)?;
            }
            writer.flush().map_err(|e| CliError::io(&path, e))?;
        }
        std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Writes `{"header": ..., <fields of body>}`.
    pub fn json(&self, name: &str, body: Value) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut object = Map::new();
        object.insert(
            "header".into(),
            serde_json::to_value(&self.header).expect("header serializes"),
        );
        match body {
            Value::Object(fields) => object.extend(fields),
            other => {
                object.insert("body".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(object)).expect("json serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// JSON number, or the strings `"inf"` / `"-inf"` / `"nan"` where JSON has
/// no number.
pub fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or_else(
        || {
            Value::String(if v.is_nan() {
                "nan".into()
            } else if v > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            })
        },
        Value::Number,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_comment_and_columns() {
        let dir = tempfile::tempdir().unwrap();
        let sink = ReportSink::new(dir.path(), Header::new("oracle", 7, "ab".into())).unwrap();
        let path = sink
            .csv("x.csv", &["t", "v"], vec![vec!["1".to_string(), num(0.5)]])
            .unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            format!(
                "# dualfilter {} command=oracle seed=7 config_sha256=ab\nt,v\n1,0.5\n",
                env!("CARGO_PKG_VERSION")
            )
        );
    }

    #[test]
    fn non_finite_numbers() {
        assert_eq!(json_num(f64::INFINITY), Value::String("inf".into()));
        assert_eq!(json_num(1.5), serde_json::json!(1.5));
    }
}

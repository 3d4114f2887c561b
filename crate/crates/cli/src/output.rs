//! Artifact writers. Every float leaves through `num`, rounded to 12 significant digits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::CliError;

pub fn round12(x: f64) -> f64 {
    if x.is_finite() && x != 0.0 {
        format!("{x:.11e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

/// JSON number with 12 significant digits; non-finite values become null.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(round12(x))
    } else {
        Value::Null
    }
}

pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// One JSON object per line, in the order given.
    pub fn write_jsonl<'a>(
        &self,
        name: &str,
        records: impl IntoIterator<Item = &'a Value>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(|e| CliError::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(path)
    }

    /// Pretty JSON with the schema version and the resolved config embedded.
    pub fn write_summary(
        &self,
        name: &str,
        command: &str,
        config: &RunConfig,
        body: Map<String, Value>,
    ) -> Result<PathBuf, CliError> {
        let mut doc = Map::new();
        doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
        doc.insert("command".into(), json!(command));
        doc.insert("config".into(), config_value(config));
        doc.extend(body);
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&Value::Object(doc))
            .map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn write_csv(
        &self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// The config as JSON with its floats rounded like every other artifact value.
pub fn config_value(config: &RunConfig) -> Value {
    fn walk(v: Value) -> Value {
        match v {
            Value::Number(n) if n.is_f64() => num(n.as_f64().expect("f64 number")),
            Value::Array(a) => Value::Array(a.into_iter().map(walk).collect()),
            Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, walk(v))).collect()),
            other => other,
        }
    }
    walk(serde_json::to_value(config).expect("config serializes"))
}

pub fn csv_float(x: f64) -> String {
    if x.is_finite() {
        round12(x).to_string()
    } else {
        String::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(round12(1.0 / 3.0), 0.333333333333);
        assert_eq!(round12(2.0f64.sqrt() * 1e-7), 1.41421356237e-7);
        assert_eq!(num(f64::NAN), Value::Null);
        assert_eq!(round12(0.0), 0.0);
        assert_eq!(csv_float(20.0), "20");
    }
}

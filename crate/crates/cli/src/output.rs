use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes a headed CSV table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `value` to a JSON object with `extra` fields merged in front.
pub fn tagged<T: Serialize>(extra: &[(&str, Value)], value: &T) -> Value {
    let mut m = Map::new();
    for (k, v) in extra {
        m.insert((*k).to_string(), v.clone());
    }
    match serde_json::to_value(value).expect("serializable record") {
        Value::Object(o) => m.extend(o),
        other => {
            m.insert("value".into(), other);
        }
    }
    Value::Object(m)
}

pub fn write_json_lines(path: &Path, lines: &[Value]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

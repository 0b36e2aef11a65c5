//! CSV, JSON and JSON-lines rendering. Every file starts with the tool
//! version and config hash; nothing time- or host-dependent is written.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::cache::Files;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const PLOT_SUFFIX: &str = "_plot.dat";

#[derive(Debug, Clone)]
pub struct Meta {
    pub command: String,
    pub hash: String,
    pub config: BTreeMap<&'static str, String>,
}

impl Meta {
    pub fn comment(&self) -> String {
        format!("# qpgap {VERSION} {} config={}\n", self.command, self.hash)
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": "qpgap",
            "version": VERSION,
            "command": self.command,
            "config_hash": self.hash,
            "config": self.config,
        })
    }
}

#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Files,
}

impl Outputs {
    pub fn csv(&mut self, meta: &Meta, name: &str, header: &str, rows: impl IntoIterator<Item = String>) {
        let mut s = meta.comment();
        s.push_str(header);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.files.insert(name.into(), s);
    }

    pub fn json<T: Serialize>(&mut self, meta: &Meta, name: &str, result: &T) {
        let v = json!({ "meta": meta.json(), "result": result });
        let mut s = serde_json::to_string_pretty(&v).expect("serializable");
        s.push('\n');
        self.files.insert(name.into(), s);
    }

    pub fn jsonl<T: Serialize>(&mut self, meta: &Meta, name: &str, records: impl IntoIterator<Item = T>) {
        let mut s = serde_json::to_string(&json!({ "meta": meta.json() })).expect("serializable");
        s.push('\n');
        for r in records {
            s.push_str(&serde_json::to_string(&r).expect("serializable"));
            s.push('\n');
        }
        self.files.insert(name.into(), s);
    }

    /// Whitespace-separated columns under a commented header.
    pub fn plot(&mut self, meta: &Meta, stem: &str, columns: &str, rows: impl IntoIterator<Item = String>) {
        let mut s = meta.comment();
        s.push_str("# ");
        s.push_str(columns);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.files.insert(format!("{stem}{PLOT_SUFFIX}"), s);
    }

    pub fn text(&mut self, meta: &Meta, name: &str, body: &str) {
        self.files.insert(name.into(), format!("{}{body}", meta.comment()));
    }
}

/// Writes the files into `dir`, skipping plot data unless requested.
pub fn write_all(files: &Files, dir: &Path, plot: bool) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in files {
        if !plot && name.ends_with(PLOT_SUFFIX) {
            continue;
        }
        fs::write(dir.join(name), body)?;
        written.push(name.clone());
    }
    Ok(written)
}

pub fn fmt_f(x: f64) -> String {
    // normalizes −0
    format!("{}", x + 0.0)
}

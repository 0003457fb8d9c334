use std::path::PathBuf;

use anyhow::{Context, Result};
use conerisk::io::flatten_csv;
use conerisk::timecheck::Witness;
use conerisk::tree::ScenarioTree;
use serde_json::{json, Value};

/// Where reports and summary lines go.
pub struct Sink {
    dir: Option<PathBuf>,
    csv: bool,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, csv: bool) -> Self {
        Self { dir, csv }
    }

    /// Writes `<dir>/<name>.json` (or `.csv`), or prints to stdout.
    pub fn report(&self, name: &str, v: &Value) -> Result<()> {
        let text = if self.csv {
            flatten_csv(v)
        } else {
            let mut s = serde_json::to_string_pretty(v)?;
            s.push('\n');
            s
        };
        match &self.dir {
            Some(dir) => {
                let ext = if self.csv { "csv" } else { "json" };
                let path = dir.join(format!("{name}.{ext}"));
                self.write(&path, &text)?;
                self.line(&format!("report: {}", path.display()));
            }
            None => print!("{text}"),
        }
        Ok(())
    }

    /// Writes a witness next to the report; returns its path when written.
    pub fn witness(&self, name: &str, v: &Value) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(format!("witness-{name}.json"));
        self.write(&path, &format!("{}\n", serde_json::to_string_pretty(v)?))?;
        Ok(Some(path))
    }

    /// Extra JSON file in the output directory, if there is one.
    pub fn extra(&self, file: &str, v: &Value) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(file);
        self.write(&path, &format!("{}\n", serde_json::to_string_pretty(v)?))?;
        Ok(Some(path))
    }

    /// Human-readable summary: stdout when reports go to files, stderr
    /// when stdout carries the report.
    pub fn line(&self, s: &str) {
        if self.dir.is_some() {
            println!("{s}");
        } else {
            eprintln!("{s}");
        }
    }

    fn write(&self, path: &PathBuf, text: &str) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Witness with claims keyed by leaf id.
pub fn witness_json(tree: &ScenarioTree, w: &Witness) -> Value {
    let claims: Vec<Value> = w
        .claims
        .iter()
        .map(|c| json!(conerisk::io::claim_to_map(tree, c)))
        .collect();
    json!({
        "t": w.t,
        "s": w.s,
        "node": w.node,
        "trial": w.trial,
        "claims": claims,
    })
}

/// Finite numbers as JSON numbers, the rest as strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

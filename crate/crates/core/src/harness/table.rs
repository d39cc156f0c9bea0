use std::cmp::Ordering;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use super::{ExperimentKind, HarnessError};

/// A key cell: lattice sizes and indices are integers, times are reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Key {
    Int(u64),
    Real(f64),
}

impl Key {
    fn cmp_total(&self, other: &Key) -> Ordering {
        let as_f64 = |k: &Key| match k {
            Key::Int(i) => *i as f64,
            Key::Real(r) => *r,
        };
        as_f64(self).total_cmp(&as_f64(other))
    }

    fn render(&self) -> String {
        match self {
            Key::Int(i) => i.to_string(),
            Key::Real(r) => format!("{r:.16e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub keys: Vec<Key>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// file stem
    pub name: String,
    pub kind: ExperimentKind,
    pub key_columns: Vec<String>,
    pub metric_columns: Vec<String>,
    pub rows: Vec<Row>,
    pub metadata: Vec<(String, String)>,
}

impl ResultTable {
    pub fn new(name: impl Into<String>, kind: ExperimentKind, keys: &[&str], metrics: &[&str]) -> Self {
        ResultTable {
            name: name.into(),
            kind,
            key_columns: keys.iter().map(|s| s.to_string()).collect(),
            metric_columns: metrics.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            metadata: Vec::new(),
        }
    }

    pub fn push(&mut self, keys: Vec<Key>, values: Vec<f64>) {
        assert_eq!(keys.len(), self.key_columns.len(), "key arity");
        assert_eq!(values.len(), self.metric_columns.len(), "metric arity");
        self.rows.push(Row { keys, values });
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.metric_columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[idx]).collect())
    }

    /// Sorts rows by their keys and checks every metric is finite.
    pub fn finalize(&mut self) -> Result<(), HarnessError> {
        self.rows.sort_by(|a, b| {
            a.keys.iter().zip(&b.keys).map(|(x, y)| x.cmp_total(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        });
        for row in &self.rows {
            for (c, v) in self.metric_columns.iter().zip(&row.values) {
                if !v.is_finite() {
                    return Err(HarnessError::NonFinite { table: self.name.clone(), column: c.clone() });
                }
            }
        }
        Ok(())
    }

    /// `#`-prefixed metadata, one header row, then data with 17 significant
    /// digits. Nothing time-dependent is written here.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# kind: {}", self.kind)?;
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}: {v}")?;
        }
        let header: Vec<&str> = self.key_columns.iter().chain(&self.metric_columns).map(String::as_str).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .keys
                .iter()
                .map(Key::render)
                .chain(row.values.iter().map(|v| format!("{v:.16e}")))
                .collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    /// Writes `<name>.csv` and a `<name>.meta.json` sidecar carrying the
    /// timestamp, so the CSV itself stays byte-reproducible.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.to_csv_string())?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta = json!({
            "table": self.name,
            "kind": self.kind.name(),
            "rows": self.rows.len(),
            "metadata": self.metadata.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
            "timestamp_unix": stamp,
        });
        std::fs::write(
            dir.join(format!("{}.meta.json", self.name)),
            serde_json::to_string_pretty(&meta).expect("metadata serialises"),
        )?;
        Ok(path)
    }
}

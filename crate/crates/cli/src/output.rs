//! CSV emission and loading. Floats are printed with 17 significant
//! digits so identical runs produce byte-identical files that round-trip
//! through the loader without loss.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

/// Format a float with 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// A header row plus numeric rows. Non-numeric cells are not supported;
/// optional cells are NaN-free empty strings on write and `None` on read.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row.into_iter().map(Some).collect());
    }

    pub fn push_opt(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    /// Write to `dir/name`, creating the directory if needed.
    pub fn write(&self, dir: &Path, name: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(name);
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map(fmt).unwrap_or_default())
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let mut f =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(out.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Load a CSV produced by [`Table::write`].
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .context("empty CSV")?
            .split(',')
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(header.len());
            for cell in line.split(',') {
                if cell.is_empty() {
                    row.push(None);
                } else {
                    let v: f64 = cell
                        .parse()
                        .with_context(|| format!("line {}: bad cell `{cell}`", idx + 2))?;
                    row.push(Some(v));
                }
            }
            if row.len() != header.len() {
                anyhow::bail!("line {}: expected {} cells", idx + 2, header.len());
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["x", "value"]);
        t.push(vec![-1.5, 0.123_456_789_012_345_68]);
        t.push(vec![2.0, 1.0 / 3.0]);
        t.push_opt(vec![Some(3.0), None]);
        let path = t.write(dir.path(), "t.csv").unwrap();
        let back = Table::read(&path).unwrap();
        assert_eq!(t, back);
    }
}

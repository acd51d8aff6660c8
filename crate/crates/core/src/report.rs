//! CSV tables with an optional `#` manifest line.

use std::fmt::Write as _;
use std::io::{self, Write};

/// Shortest round-trip scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Optional leading text column; empty or one entry per row.
    pub labels: Vec<String>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Table whose first column holds text labels.
    pub fn labeled<S: Into<String>>(label: &str, header: impl IntoIterator<Item = S>) -> Self {
        Self::new(std::iter::once(label.to_string()).chain(header.into_iter().map(Into::into)))
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        debug_assert!(self.labels.is_empty());
        self.rows.push(row);
    }

    pub fn push_labeled(&mut self, label: impl Into<String>, row: Vec<f64>) {
        debug_assert_eq!(row.len() + 1, self.header.len());
        debug_assert_eq!(self.labels.len(), self.rows.len());
        self.labels.push(label.into());
        self.rows.push(row);
    }

    pub fn render(&self, manifest: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(m) = manifest {
            let _ = writeln!(s, "# {}", m.replace('\n', " "));
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for (r, row) in self.rows.iter().enumerate() {
            let mut cells: Vec<String> = self.labels.get(r).into_iter().cloned().collect();
            cells.extend(row.iter().map(|v| fmt_num(*v)));
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write_to(&self, w: &mut impl Write, manifest: Option<&str>) -> io::Result<()> {
        w.write_all(self.render(manifest).as_bytes())
    }
}

/// Column names `prefix_1..prefix_n`.
pub fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

//! JSON summaries and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// A CSV table. Floats use `f64`'s shortest round-trip formatting.
#[derive(Debug, Clone)]
pub struct Csv {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        format!("{self}")
    }
}

macro_rules! display_cell {
    ($($t:ty),*) => { $( impl Cell for $t { fn cell(&self) -> String { self.to_string() } } )* };
}
display_cell!(usize, u64, bool, &str, String);

impl Csv {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

#[macro_export]
macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$($crate::output::Cell::cell(&$v)),*] };
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes `<dir>/<experiment>.json` and `<dir>/<experiment>_<name>.csv`.
pub fn write_all(dir: &Path, experiment: &str, summary: &serde_json::Value, tables: &[(String, Csv)]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, csv) in tables {
        let path = dir.join(format!("{experiment}_{name}.csv"));
        write(&path, &csv.render())?;
        written.push(path);
    }
    let path = dir.join(format!("{experiment}.json"));
    let text = serde_json::to_string_pretty(summary).expect("summary is valid JSON");
    write(&path, &(text + "\n"))?;
    written.push(path);
    Ok(written)
}

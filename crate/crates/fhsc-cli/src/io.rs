//! CSV and JSON input/output.
//!
//! Every CSV is UTF-8, comma-delimited and has a header row. Columns are
//! located by name, so extra columns are ignored and column order is free.
//! Floats are written with Rust's shortest round-trip formatting, which makes
//! every emitted table re-parse to exactly the in-memory values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fhsc::survey::{DirectArea, DirectEstimates, Microdata, Record};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{invalid, CliError, CliResult};

/// Header of the direct-estimates table.
pub const DIRECT_HEADER: [&str; 6] = ["area_id", "y", "raw_var", "n", "nhat", "D"];
/// Header of the clustering table.
pub const CLUSTERING_HEADER: [&str; 2] = ["area_id", "cluster"];
/// Join key shared by every per-area table.
pub const AREA_ID: &str = "area_id";

/// A parsed CSV file with name-based column access.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = rdr
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::csv(path, e))?;
        if rows.is_empty() {
            return invalid(format!("{}: no data rows", path.display()));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    /// Index of a required column.
    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("{}: missing column '{name}'", self.path.display())))
    }

    /// Names of every column except `area_id`.
    pub fn value_columns(&self) -> Vec<String> {
        self.headers.iter().filter(|h| h.as_str() != AREA_ID).cloned().collect()
    }

    pub fn str_at(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("")
    }

    pub fn f64_at(&self, row: usize, col: usize) -> CliResult<f64> {
        let raw = self.str_at(row, col);
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => invalid(format!(
                "{}: row {}, column '{}': '{raw}' is not a finite number",
                self.path.display(),
                row + 2,
                self.headers[col]
            )),
        }
    }

    pub fn usize_at(&self, row: usize, col: usize) -> CliResult<usize> {
        let raw = self.str_at(row, col);
        raw.parse::<usize>().or_else(|_| {
            invalid(format!(
                "{}: row {}, column '{}': '{raw}' is not a nonnegative integer",
                self.path.display(),
                row + 2,
                self.headers[col]
            ))
        })
    }

    /// Area ids of every row, rejecting blanks and duplicates.
    pub fn unique_ids(&self) -> CliResult<Vec<String>> {
        let col = self.column(AREA_ID)?;
        let mut seen = std::collections::BTreeSet::new();
        (0..self.rows.len())
            .map(|r| {
                let id = self.str_at(r, col).to_string();
                if id.is_empty() {
                    return invalid(format!("{}: row {} has an empty area_id", self.path.display(), r + 2));
                }
                if !seen.insert(id.clone()) {
                    return invalid(format!("{}: duplicate area_id '{id}'", self.path.display()));
                }
                Ok(id)
            })
            .collect()
    }
}

/// Reads unit-level microdata with columns `area_id`, `y`, `w`.
pub fn read_microdata(path: &Path) -> CliResult<Microdata> {
    let t = Table::read(path)?;
    let (a, y, w) = (t.column(AREA_ID)?, t.column("y")?, t.column("w")?);
    let records = (0..t.rows.len())
        .map(|r| {
            Ok(Record {
                area_id: t.str_at(r, a).to_string(),
                y: t.f64_at(r, y)?,
                w: t.f64_at(r, w)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Microdata { records })
}

/// Direct estimates together with their smoothed variances `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectTable {
    pub direct: DirectEstimates,
    pub d: Vec<f64>,
}

impl DirectTable {
    /// Sorts rows by `area_id`.
    pub fn sorted(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.d.len()).collect();
        idx.sort_by(|&i, &j| self.direct.areas[i].area_id.cmp(&self.direct.areas[j].area_id));
        self.d = idx.iter().map(|&i| self.d[i]).collect();
        self.direct.areas = idx.iter().map(|&i| self.direct.areas[i].clone()).collect();
        self
    }
}

pub fn read_direct(path: &Path) -> CliResult<DirectTable> {
    let t = Table::read(path)?;
    let cols = DIRECT_HEADER
        .iter()
        .map(|h| t.column(h))
        .collect::<CliResult<Vec<_>>>()?;
    let ids = t.unique_ids()?;
    let mut areas = Vec::with_capacity(ids.len());
    let mut d = Vec::with_capacity(ids.len());
    for (r, area_id) in ids.into_iter().enumerate() {
        let dv = t.f64_at(r, cols[5])?;
        if !(dv > 0.0) {
            return invalid(format!("{}: area '{area_id}' has nonpositive D = {dv}", path.display()));
        }
        areas.push(DirectArea {
            area_id,
            y: t.f64_at(r, cols[1])?,
            raw_var: t.f64_at(r, cols[2])?,
            n: t.usize_at(r, cols[3])?,
            nhat: t.f64_at(r, cols[4])?,
        });
        d.push(dv);
    }
    Ok(DirectTable {
        direct: DirectEstimates { areas },
        d,
    }
    .sorted())
}

pub fn write_direct(path: &Path, table: &DirectTable) -> CliResult<()> {
    let rows = table.direct.areas.iter().zip(&table.d).map(|(a, d)| {
        vec![
            a.area_id.clone(),
            fmt_f64(a.y),
            fmt_f64(a.raw_var),
            a.n.to_string(),
            fmt_f64(a.nhat),
            fmt_f64(*d),
        ]
    });
    write_csv(path, &DIRECT_HEADER, rows)
}

/// Numeric per-area columns keyed by `area_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaColumns {
    pub names: Vec<String>,
    pub values: BTreeMap<String, Vec<f64>>,
    pub path: PathBuf,
}

impl AreaColumns {
    /// Reads the named columns (all non-id columns when `columns` is `None`).
    pub fn read(path: &Path, columns: Option<&[String]>) -> CliResult<Self> {
        let t = Table::read(path)?;
        let names: Vec<String> = match columns {
            Some(c) => c.to_vec(),
            None => t.value_columns(),
        };
        if names.is_empty() {
            return invalid(format!("{}: no value columns besides area_id", path.display()));
        }
        let idx = names.iter().map(|n| t.column(n)).collect::<CliResult<Vec<_>>>()?;
        let ids = t.unique_ids()?;
        let mut values = BTreeMap::new();
        for (r, id) in ids.into_iter().enumerate() {
            let row = idx.iter().map(|&c| t.f64_at(r, c)).collect::<CliResult<Vec<_>>>()?;
            values.insert(id, row);
        }
        Ok(AreaColumns {
            names,
            values,
            path: path.to_path_buf(),
        })
    }

    /// `ids.len() × names.len()` matrix with rows in the order of `ids`.
    /// Every id must be present; extra rows in the file are ignored.
    pub fn aligned(&self, ids: &[String]) -> CliResult<DMatrix<f64>> {
        let p = self.names.len();
        let mut out = DMatrix::zeros(ids.len(), p);
        for (i, id) in ids.iter().enumerate() {
            let row = self.values.get(id).ok_or_else(|| {
                CliError::Validation(format!("{}: no row for area '{id}'", self.path.display()))
            })?;
            for k in 0..p {
                out[(i, k)] = row[k];
            }
        }
        let extra = self.values.len() - ids.len();
        if extra > 0 {
            log::warn!("{}: ignoring {extra} rows for areas without direct estimates", self.path.display());
        }
        Ok(out)
    }
}

/// Reads a clustering table (1-based labels) into 0-based labels aligned to
/// `ids`. The table must cover exactly the areas in `ids`.
pub fn read_clustering(path: &Path, ids: &[String]) -> CliResult<Vec<usize>> {
    let t = Table::read(path)?;
    let col = t.column("cluster")?;
    let file_ids = t.unique_ids()?;
    let mut labels = BTreeMap::new();
    for (r, id) in file_ids.into_iter().enumerate() {
        let c = t.usize_at(r, col)?;
        if c == 0 {
            return invalid(format!("{}: cluster ids are 1-based, area '{id}' has 0", path.display()));
        }
        labels.insert(id, c - 1);
    }
    if labels.len() != ids.len() {
        return invalid(format!(
            "{}: {} areas clustered but {} areas have direct estimates",
            path.display(),
            labels.len(),
            ids.len()
        ));
    }
    ids.iter()
        .map(|id| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| CliError::Validation(format!("{}: no cluster for area '{id}'", path.display())))
        })
        .collect()
}

pub fn write_clustering(path: &Path, ids: &[String], labels: &[usize]) -> CliResult<()> {
    let rows = ids.iter().zip(labels).map(|(id, c)| vec![id.clone(), (c + 1).to_string()]);
    write_csv(path, &CLUSTERING_HEADER, rows)
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut wtr = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    wtr.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        wtr.write_record(&row).map_err(|e| CliError::csv(path, e))?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

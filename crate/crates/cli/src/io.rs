//! Dataset files: RFC 4180 CSV and a columnar little-endian binary layout.
//!
//! Both carry the columns `t, X1..Xm, [u1..un], [dX1..dXm], [realization]`.
//! Floats are written with the shortest representation that parses back to
//! the same bits, so a CSV round trip is lossless.
//!
//! Binary layout: the 8-byte magic `TWFCOL01`, a little-endian u64 header
//! length, a JSON header, then each column as `rows` little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use twinforge::targets::{Dataset, DatasetMeta, Realization, Source};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"TWFCOL01";

/// Named columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn numbered(&self, prefix: &str) -> Vec<usize> {
        let mut out = vec![];
        while let Some(c) = self.find(&format!("{prefix}{}", out.len() + 1)) {
            out.push(c);
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BinHeader {
    columns: Vec<String>,
    rows: usize,
    realizations: usize,
    meta: Option<DatasetMeta>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn dataset_table(data: &Dataset) -> Table {
    let m = data.state_dim();
    let nu = data.n_inputs();
    let has_rates = data.realizations.iter().all(|r| r.rates.is_some());
    let multi = data.realizations.len() > 1;
    let mut names = vec!["t".to_string()];
    names.extend((1..=m).map(|i| format!("X{i}")));
    names.extend((1..=nu).map(|j| format!("u{j}")));
    if has_rates {
        names.extend((1..=m).map(|i| format!("dX{i}")));
    }
    if multi {
        names.push("realization".into());
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (e, r) in data.realizations.iter().enumerate() {
        for (k, t) in data.t.iter().enumerate() {
            let mut c = 0;
            let mut push = |v: f64| {
                columns[c].push(v);
                c += 1;
            };
            push(*t);
            (0..m).for_each(|i| push(r.states[(k, i)]));
            if let Some(u) = &r.inputs {
                (0..nu).for_each(|j| push(u[(k, j)]));
            }
            if has_rates {
                let d = r.rates.as_ref().expect("checked");
                (0..m).for_each(|i| push(d[(k, i)]));
            }
            if multi {
                push(e as f64);
            }
        }
    }
    Table { names, columns }
}

/// Rebuilds a dataset; `meta` overrides what can be inferred from the columns.
pub fn table_dataset(table: &Table, meta: Option<DatasetMeta>) -> Result<Dataset, CliError> {
    let bad = |msg: &str| CliError::config(format!("dataset: {msg}"));
    let t_col = table.find("t").ok_or_else(|| bad("missing column t"))?;
    let xs = table.numbered("X");
    if xs.is_empty() {
        return Err(bad("missing state columns X1.."));
    }
    let us = table.numbered("u");
    let ds = table.numbered("dX");
    if !ds.is_empty() && ds.len() != xs.len() {
        return Err(bad("rate columns dX must match the state columns"));
    }
    let rows = table.rows();
    let groups: Vec<(usize, usize)> = match table.find("realization") {
        None => vec![(0, rows)],
        Some(rc) => {
            let col = &table.columns[rc];
            let mut groups = vec![];
            let mut start = 0;
            for k in 1..=rows {
                if k == rows || col[k] != col[start] {
                    if col[start] != groups.len() as f64 {
                        return Err(bad("realization indices must be 0, 1, 2, ... in contiguous blocks"));
                    }
                    groups.push((start, k));
                    start = k;
                }
            }
            groups
        }
    };
    let n = groups.first().map_or(0, |g| g.1 - g.0);
    if n < 2 {
        return Err(bad("need at least two samples"));
    }
    let t: Vec<f64> = table.columns[t_col][..n].to_vec();
    let mut realizations = vec![];
    for &(a, b) in &groups {
        if b - a != n {
            return Err(bad("realizations differ in length"));
        }
        if table.columns[t_col][a..b] != t[..] {
            return Err(bad("realizations must share the time grid"));
        }
        let block = |cols: &[usize]| DMatrix::from_fn(n, cols.len(), |k, c| table.columns[cols[c]][a + k]);
        realizations.push(Realization {
            states: block(&xs),
            inputs: (!us.is_empty()).then(|| block(&us)),
            rates: (!ds.is_empty()).then(|| block(&ds)),
        });
    }
    let meta = meta.unwrap_or_else(|| DatasetMeta {
        dt: t[1] - t[0],
        source: Source::External,
        system: None,
        noise_level: 0.0,
        noise_scope: None,
        noise_seed: None,
        driven_states: (0..xs.len()).collect(),
    });
    let data = Dataset { t, realizations, meta };
    data.validate().map_err(|e| CliError::config(format!("dataset: {e}")))?;
    Ok(data)
}

pub fn write_table_csv(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(&table.names).map_err(|e| CliError::io(path, e))?;
    let mut rec = Vec::with_capacity(table.names.len());
    for k in 0..table.rows() {
        rec.clear();
        rec.extend(table.columns.iter().map(|c| fmt_f64(c[k])));
        w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_table_csv(path: &Path) -> Result<Table, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let names: Vec<String> = r.headers().map_err(|e| CliError::io(path, e))?.iter().map(|s| s.trim().to_string()).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        if rec.len() != names.len() {
            return Err(CliError::io(path, format!("row {} has {} fields, expected {}", line + 2, rec.len(), names.len())));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::io(path, format!("row {}: '{field}' is not a number", line + 2)))?;
            columns[c].push(v);
        }
    }
    Ok(Table { names, columns })
}

pub fn write_table_bin(path: &Path, table: &Table, realizations: usize, meta: Option<&DatasetMeta>) -> Result<(), CliError> {
    let header = BinHeader {
        columns: table.names.clone(),
        rows: table.rows(),
        realizations,
        meta: meta.cloned(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CliError::io(path, e))?;
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| CliError::io(path, e));
    write(MAGIC)?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for col in &table.columns {
        for v in col {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_table_bin(path: &Path) -> Result<(Table, Option<DatasetMeta>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|e| CliError::io(path, e));
    let mut magic = [0u8; 8];
    read(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::io(path, "not a columnar dataset file"));
    }
    let mut len = [0u8; 8];
    read(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    read(&mut json)?;
    let header: BinHeader = serde_json::from_slice(&json).map_err(|e| CliError::io(path, e))?;
    let mut columns = Vec::with_capacity(header.columns.len());
    let mut buf = vec![0u8; header.rows * 8];
    for _ in &header.columns {
        read(&mut buf)?;
        columns.push(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect());
    }
    Ok((Table { names: header.columns, columns }, header.meta))
}

fn is_bin(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Writes CSV or binary depending on the extension.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let table = dataset_table(data);
    if is_bin(path) {
        write_table_bin(path, &table, data.realizations.len(), Some(&data.meta))
    } else {
        write_table_csv(path, &table)
    }
}

/// Reads a dataset and whatever metadata the file carries.
pub fn read_dataset(path: &Path) -> Result<(Dataset, bool), CliError> {
    if is_bin(path) {
        let (table, meta) = read_table_bin(path)?;
        let has_meta = meta.is_some();
        Ok((table_dataset(&table, meta)?, has_meta))
    } else {
        Ok((table_dataset(&read_table_csv(path)?, None)?, false))
    }
}

/// Writes rows of preformatted fields under a header.
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

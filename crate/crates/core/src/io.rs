//! Text formats for matrix datasets, CDF curves and fit reports.
//!
//! A dataset file holds one matrix per line as the comma-separated
//! column-major `vec` of a `p × p` SPD matrix, optionally preceded by a
//! class label. Lines starting with `#` and blank lines are skipped.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fitting::{CdfTable, FitReport};
use crate::linalg::SpdMatrix;

/// Symmetry tolerance applied to matrices read from text.
pub const FILE_SYMMETRY_TOL: f64 = 1e-8;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const CDF_HEADER: &str = "x,data_cdf,wishart_cdf,t_wishart_cdf";

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub label: Option<String>,
    pub matrix: SpdMatrix,
}

/// Reads a dataset of `p × p` matrices. Records are numbered from 0 in
/// file order, not counting comments and blank lines.
pub fn read_dataset<R: BufRead>(reader: R, p: usize, labeled: bool) -> Result<Vec<MatrixRecord>> {
    if p == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let expected = p * p + usize::from(labeled);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = out.len();
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected {
            return Err(Error::Parse {
                record,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let (label, numbers) = if labeled {
            (Some(fields[0].to_string()), &fields[1..])
        } else {
            (None, &fields[..])
        };
        let values = numbers
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    record,
                    message: format!("'{f}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let matrix = SpdMatrix::with_tolerance(DMatrix::from_column_slice(p, p, &values), FILE_SYMMETRY_TOL)
            .map_err(|e| Error::InvalidRecord {
                record,
                source: Box::new(e),
            })?;
        out.push(MatrixRecord { label, matrix });
    }
    Ok(out)
}

pub fn read_dataset_file(path: &std::path::Path, p: usize, labeled: bool) -> Result<Vec<MatrixRecord>> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), p, labeled)
}

/// Groups records by label; unlabeled records go to class `"all"`.
pub fn group_by_label(records: Vec<MatrixRecord>) -> BTreeMap<String, Vec<SpdMatrix>> {
    let mut out: BTreeMap<String, Vec<SpdMatrix>> = BTreeMap::new();
    for r in records {
        out.entry(r.label.unwrap_or_else(|| "all".into())).or_default().push(r.matrix);
    }
    out
}

/// Writes matrices in dataset format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_dataset<W: Write>(mut w: W, matrices: &[SpdMatrix], labels: Option<&[String]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != matrices.len() {
            return Err(Error::Dimension(format!("{} labels for {} matrices", l.len(), matrices.len())));
        }
    }
    if let Some(first) = matrices.first() {
        writeln!(w, "# p={} count={} column-major vec", first.dim(), matrices.len())?;
    }
    let mut line = String::new();
    for (i, m) in matrices.iter().enumerate() {
        line.clear();
        if let Some(l) = labels {
            line.push_str(&l[i]);
            line.push(',');
        }
        for (j, v) in m.as_matrix().iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf_csv<W: Write>(mut w: W, table: &CdfTable) -> Result<()> {
    writeln!(w, "{CDF_HEADER}")?;
    for i in 0..table.x.len() {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e}",
            table.x[i], table.data_cdf[i], table.wishart_cdf[i], table.t_wishart_cdf[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cdf_csv<R: BufRead>(reader: R) -> Result<CdfTable> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CDF_HEADER {
        return Err(Error::Parse {
            record: 0,
            message: format!("unexpected header '{header}'"),
        });
    }
    let mut t = CdfTable {
        x: vec![],
        data_cdf: vec![],
        wishart_cdf: vec![],
        t_wishart_cdf: vec![],
    };
    for (record, line) in lines.enumerate() {
        let line = line?;
        let v = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    record,
                    message: format!("'{f}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != 4 {
            return Err(Error::Parse {
                record,
                message: format!("expected 4 fields, found {}", v.len()),
            });
        }
        t.x.push(v[0]);
        t.data_cdf.push(v[1]);
        t.wishart_cdf.push(v[2]);
        t.t_wishart_cdf.push(v[3]);
    }
    Ok(t)
}

/// Fit report as versioned JSON.
pub fn report_json(report: &FitReport) -> Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    let obj = v.as_object_mut().expect("report is an object");
    obj.insert("schema_version".into(), json!(REPORT_SCHEMA_VERSION));
    obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    v
}

/// File name of the CDF table for one class and statistic.
pub fn cdf_file_name(stat: &str, label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("cdf_{stat}_class_{safe}.csv")
}

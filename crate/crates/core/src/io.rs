//! CSV formats for embeddings, loss traces, commute-time tables and plots.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Reals are written with 17 significant digits so they round-trip exactly.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// `node_id,c1,...,cd`, one row per column of `coords`.
pub fn write_embedding_csv<W: Write>(w: W, ids: &[String], coords: &DMatrix<f64>) -> Result<()> {
    if ids.len() != coords.ncols() {
        return Err(Error::Dimension(format!("{} ids for {} embedded nodes", ids.len(), coords.ncols())));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["node_id".to_string()];
    header.extend((1..=coords.nrows()).map(|c| format!("c{c}")));
    out.write_record(&header)?;
    for (n, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(coords.column(n).iter().map(|x| format_real(*x)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_embedding_csv`]; returns ids and the `d x N` matrix.
pub fn read_embedding_csv<R: Read>(r: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "embedding header needs node_id and at least one coordinate".into(),
        });
    }
    let d = width - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = k + 2;
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid number {field:?}"),
            })?;
            values.push(v);
        }
    }
    Ok((ids.clone(), DMatrix::from_column_slice(d, ids.len(), &values)))
}

/// `epoch,mean_loss`
pub fn write_loss_trace<W: Write>(w: W, trace: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "mean_loss"])?;
    for (e, l) in trace.iter().enumerate() {
        out.write_record([e.to_string(), format_real(*l)])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommuteRow {
    pub source: String,
    pub target: String,
    pub commute_time: f64,
    /// Exact value and relative error, when verified.
    pub exact: Option<(f64, f64)>,
}

pub fn write_commute_csv<W: Write>(w: W, rows: &[CommuteRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let verified = rows.iter().any(|r| r.exact.is_some());
    if verified {
        out.write_record(["source", "target", "commute_time", "exact", "relative_error"])?;
    } else {
        out.write_record(["source", "target", "commute_time"])?;
    }
    for r in rows {
        let mut rec = vec![r.source.clone(), r.target.clone(), format_real(r.commute_time)];
        if verified {
            match r.exact {
                Some((e, rel)) => {
                    rec.push(format_real(e));
                    rec.push(format_real(rel));
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// `node_id,x,y[,z],label` from the leading `dims` coordinates; nodes
/// without a label get `unlabeled`.
pub fn write_plot_csv<W: Write>(
    w: W,
    ids: &[String],
    coords: &DMatrix<f64>,
    dims: usize,
    labels: Option<&HashMap<String, String>>,
) -> Result<()> {
    if !(dims == 2 || dims == 3) {
        return Err(Error::Domain(format!("plots take 2 or 3 coordinates, not {dims}")));
    }
    if coords.nrows() < dims {
        return Err(Error::Dimension(format!(
            "embedding has {} coordinates, fewer than the {dims} requested",
            coords.nrows()
        )));
    }
    if ids.len() != coords.ncols() {
        return Err(Error::Dimension(format!("{} ids for {} embedded nodes", ids.len(), coords.ncols())));
    }
    let mut out = csv::Writer::from_writer(w);
    let axes = ["x", "y", "z"];
    let mut header = vec!["node_id"];
    header.extend(&axes[..dims]);
    header.push("label");
    out.write_record(&header)?;
    for (n, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..dims).map(|r| format_real(coords[(r, n)])));
        let label = labels
            .and_then(|l| l.get(id))
            .map(String::as_str)
            .unwrap_or("unlabeled");
        row.push(label.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{uniform_spacing, GridDataset, Metadata};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VALUES_FILE: &str = "values.csv";
const HEADER: [&str; 5] = ["t", "x1", "x2", "y", "mask"];

/// Writes `manifest.json` and `values.csv` into `dir`, creating it if needed.
pub fn save_grid(ds: &GridDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&ds.metadata)?;
    fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
    let mut w = csv::Writer::from_path(dir.join(VALUES_FILE)).map_err(csv_error)?;
    w.write_record(HEADER).map_err(csv_error)?;
    for (k, t) in ds.times.iter().enumerate() {
        for (j, p) in ds.spatial_locations.iter().enumerate() {
            // `{}` on f64 prints the shortest string that parses back exactly.
            w.write_record([
                t.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                ds.values[(k, j)].to_string(),
                u8::from(ds.mask[(k, j)]).to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse { line, msg: format!("{other:?}") },
    }
}

/// Reads a dataset written by [`save_grid`].
pub fn load_grid(dir: &Path) -> Result<GridDataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let metadata: Metadata = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{MANIFEST_FILE}: {e}"),
    })?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(dir.join(VALUES_FILE))
        .map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must be `{}`, found `{}`", HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    struct Row {
        line: usize,
        t: f64,
        p: [f64; 2],
        y: f64,
        m: bool,
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("field `{}` is not a number: `{}`", HEADER[i], &rec[i]),
            })
        };
        let (t, x1, x2, y) = (num(0)?, num(1)?, num(2)?, num(3)?);
        let m = match rec[4].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse { line, msg: format!("mask must be 0 or 1, found `{other}`") })
            }
        };
        if m && !y.is_finite() {
            return Err(Error::Parse { line, msg: "observed value is not finite".into() });
        }
        rows.push(Row { line, t, p: [x1, x2], y, m });
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    // Time-major: the first block (rows sharing the first time) fixes the locations.
    let ns = rows.iter().take_while(|r| r.t == rows[0].t).count();
    let locations: Vec<[f64; 2]> = rows[..ns].iter().map(|r| r.p).collect();
    if rows.len() % ns != 0 {
        return Err(Error::Parse {
            line: rows.last().unwrap().line,
            msg: format!("{} rows is not a multiple of the {ns} locations per time", rows.len()),
        });
    }
    let mut times = Vec::with_capacity(rows.len() / ns);
    for block in rows.chunks(ns) {
        let t = block[0].t;
        for (row, p) in block.iter().zip(&locations) {
            if row.t != t {
                return Err(Error::Parse { line: row.line, msg: format!("expected time {t}, found {}", row.t) });
            }
            if row.p != *p {
                return Err(Error::Parse {
                    line: row.line,
                    msg: format!("location ({}, {}) differs from ({}, {}) in the first block", row.p[0], row.p[1], p[0], p[1]),
                });
            }
        }
        times.push(t);
    }
    let values: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let mask: Vec<bool> = rows.iter().map(|r| r.m).collect();
    let nt = times.len();
    if let Err(e) = uniform_spacing(&times) {
        // The first spacing is the reference; report the first step that breaks it.
        let dt = times[1] - times[0];
        let k = times
            .windows(2)
            .position(|w| !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs())
            .map_or(nt - 1, |k| k + 1);
        return Err(Error::Parse { line: rows[k * ns].line, msg: e.to_string() });
    }
    let ds = GridDataset {
        spatial_locations: locations,
        times,
        values: DMatrix::from_row_slice(nt, ns, &values),
        mask: DMatrix::from_row_slice(nt, ns, &mask),
        metadata,
    };
    ds.validate()?;
    Ok(ds)
}

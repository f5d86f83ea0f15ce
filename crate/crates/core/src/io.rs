//! File formats: coordinate CSV tables, binary PGM rasters with a scale
//! sidecar, and pretty-printed JSON.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::grid::{ControlField, GradField, Grid, ScalarField};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Mismatch { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest decimal that parses back to the same `f64`, in positional form
/// for moderate magnitudes and scientific form otherwise.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), IoError> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format_f64(*v));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(io_err(path))
}

/// Header and numeric rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>(),
        None => {
            return Err(IoError::Mismatch {
                path: path.to_path_buf(),
                msg: "empty file".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, l) in lines {
        let row = l
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if row.len() != header.len() {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {} columns, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_control_csv(path: &Path, grid: &Grid, u: &ControlField) -> Result<(), IoError> {
    write_csv(
        path,
        &["x", "y", "value"],
        (0..u.len()).map(|c| {
            let [x, y] = grid.cell_xy(c);
            vec![x, y, u.values[c]]
        }),
    )
}

pub fn write_scalar_csv(path: &Path, grid: &Grid, y: &ScalarField) -> Result<(), IoError> {
    write_csv(
        path,
        &["x", "y", "value"],
        (0..y.len()).map(|k| {
            let [x, z] = grid.node_xy(k);
            vec![x, z, y.values[k]]
        }),
    )
}

pub fn write_grad_csv(path: &Path, grid: &Grid, p: &GradField) -> Result<(), IoError> {
    write_csv(
        path,
        &["x", "y", "value", "value2"],
        (0..p.len()).map(|c| {
            let [x, y] = grid.cell_xy(c);
            vec![x, y, p.gx[c], p.gy[c]]
        }),
    )
}

/// Values of an `x,y,value` table whose coordinates must match `coords`
/// row by row.
fn read_values(path: &Path, coords: impl ExactSizeIterator<Item = [f64; 2]>, h: f64) -> Result<Vec<f64>, IoError> {
    let (header, rows) = read_csv(path)?;
    let mismatch = |msg: String| IoError::Mismatch {
        path: path.to_path_buf(),
        msg,
    };
    if header.len() < 3 || header[0] != "x" || header[1] != "y" {
        return Err(mismatch("expected a header starting with x,y,value".into()));
    }
    if rows.len() != coords.len() {
        return Err(mismatch(format!("expected {} rows, found {}", coords.len(), rows.len())));
    }
    let tol = 1e-6 * h;
    rows.iter()
        .zip(coords)
        .enumerate()
        .map(|(i, (r, [x, y]))| {
            if (r[0] - x).abs() > tol || (r[1] - y).abs() > tol {
                Err(mismatch(format!(
                    "row {} is at ({}, {}), grid point is ({x}, {y})",
                    i + 1,
                    r[0],
                    r[1]
                )))
            } else {
                Ok(r[2])
            }
        })
        .collect()
}

pub fn read_control_csv(path: &Path, grid: &Grid) -> Result<ControlField, IoError> {
    let coords = (0..grid.omega_len()).map(|c| grid.cell_xy(c));
    Ok(ControlField::from_vec(read_values(path, coords, grid.h())?))
}

pub fn read_scalar_csv(path: &Path, grid: &Grid) -> Result<ScalarField, IoError> {
    let coords = (0..grid.domain_len()).map(|k| grid.node_xy(k));
    Ok(ScalarField::from_vec(read_values(path, coords, grid.h())?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

/// Path of the scale sidecar written next to a PGM file.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut s = pgm.as_os_str().to_owned();
    s.push(".scale.txt");
    PathBuf::from(s)
}

/// Writes a `width x height` raster (row `0` at the bottom) as 8-bit P5,
/// min-max normalized; a constant field maps to mid gray. The sidecar records
/// `min` and `max`.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<(), IoError> {
    assert_eq!(values.len(), width * height, "raster size");
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.reserve(width * height);
    for row in (0..height).rev() {
        for col in 0..width {
            let v = values[row * width + col];
            let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
            bytes.push(g.clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let mut side = String::new();
    let _ = writeln!(side, "min = {}", format_f64(lo));
    let _ = writeln!(side, "max = {}", format_f64(hi));
    let sp = sidecar_path(path);
    fs::write(&sp, side).map_err(io_err(&sp))
}

/// Header dimensions and pixel bytes of a P5 file.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let bad = |msg: &str| IoError::Mismatch {
        path: path.to_path_buf(),
        msg: msg.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not an 8-bit P5 file"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = &data[pos + 1..];
    if body.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Ok((w, h, body.to_vec()))
}

/// Rasters of `u`, `|grad u|_2` and `|lambda|_2` on the control block.
pub fn emit_plotdata(dir: &Path, grid: &Grid, u: &ControlField, lambda: &GradField) -> Result<Vec<PathBuf>, IoError> {
    let (mx, my) = grid.omega_shape();
    let fields = [
        ("u.pgm", u.values.clone()),
        ("grad_u.pgm", grid.gradient(u).magnitude()),
        ("lambda.pgm", lambda.magnitude()),
    ];
    let mut out = Vec::new();
    for (name, v) in fields {
        let p = dir.join(name);
        write_pgm(&p, mx, my, &v)?;
        out.push(p);
    }
    Ok(out)
}

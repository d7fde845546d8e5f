//! CSV files: point clouds (`x0,...,x{d-1}[,w]`) and flow traces.
//!
//! Floats are written with 17 significant digits so a write/read cycle is
//! lossless.

use std::fs::File;
use std::path::Path;

use kale_core::{DMatrix, DVector, FlowTrace, ParticleCloud};

use crate::error::{CliError, CliResult};

pub const TRACE_HEADER: [&str; 8] = [
    "step",
    "kale",
    "mmd2",
    "witness_norm2",
    "mean_sq_velocity",
    "solver_iters",
    "beta",
    "w2_to_reference",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

pub fn read_cloud(path: &Path) -> CliResult<ParticleCloud> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = rdr.headers().map_err(|e| CliError::at_line(path, 1, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let weighted = names.last() == Some(&"w");
    let d = names.len() - weighted as usize;
    if d == 0 {
        return Err(CliError::at_line(path, 1, "header needs at least one coordinate column x0"));
    }
    for (c, name) in names.iter().take(d).enumerate() {
        if *name != format!("x{c}") {
            return Err(CliError::at_line(
                path,
                1,
                format!("column {} is `{name}`, expected `x{c}` (header x0,...,x{{d-1}}[,w])", c + 1),
            ));
        }
    }

    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::at_line(path, line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::at_line(path, line, format!("`{field}` is not a number")))?;
            if c < d {
                coords.push(v);
            } else {
                weights.push(v);
            }
        }
    }
    let n = coords.len() / d;
    if n == 0 {
        return Err(CliError::io(path, "no points"));
    }
    let points = DMatrix::from_column_slice(d, n, &coords);
    let cloud = if weighted {
        ParticleCloud::with_weights(points, DVector::from_vec(weights))
    } else {
        ParticleCloud::new(points)
    };
    cloud.map_err(|e| CliError::io(path, e))
}

pub fn write_cloud(path: &Path, cloud: &ParticleCloud) -> CliResult<()> {
    let mut w = writer(path)?;
    let d = cloud.dim();
    let weighted = cloud.has_explicit_weights();
    let mut header: Vec<String> = (0..d).map(|c| format!("x{c}")).collect();
    if weighted {
        header.push("w".into());
    }
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for i in 0..cloud.len() {
        let mut row: Vec<String> = cloud.point(i).iter().map(|v| fmt_f64(*v)).collect();
        if weighted {
            row.push(fmt_f64(cloud.weights()[i]));
        }
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_trace(path: &Path, trace: &FlowTrace) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER).map_err(|e| CliError::io(path, e))?;
    for r in &trace.records {
        let row = [
            r.step.to_string(),
            fmt_f64(r.kale),
            fmt_f64(r.mmd2),
            fmt_f64(r.witness_norm2),
            fmt_f64(r.mean_sq_velocity),
            r.solver_iters.to_string(),
            fmt_f64(r.beta),
            r.w2_to_reference.map(fmt_f64).unwrap_or_default(),
        ];
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

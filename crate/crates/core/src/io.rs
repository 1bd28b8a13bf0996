//! Output artifacts: convergence tables, probe tables and sampled fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::analysis::{ConvergenceRow, ProbeRow};
use crate::error::{Error, Result};
use crate::mesh::{Located, Mesh, Point, PointLocator};
use crate::spaces::{EGFunction, PressureFunction};

pub const CONVERGENCE_HEADER: &str = "h,energy_err,energy_eoc,l2u_err,l2u_eoc,l2p_err,l2p_eoc";
pub const PROBE_HEADER: &str = "mu,eg_err,eg_ratio,eg_status,pr_eg_err,pr_eg_ratio,pr_eg_status";

fn sci(v: f64) -> String {
    format!("{v:.15e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

pub fn format_convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from(CONVERGENCE_HEADER);
    s.push('\n');
    for r in rows {
        let e = &r.errors;
        let fields = [
            sci(r.h),
            sci(e.energy),
            opt(r.energy_eoc),
            sci(e.l2_velocity),
            opt(r.l2u_eoc),
            sci(e.l2_pressure),
            opt(r.l2p_eoc),
        ];
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn write_convergence_csv(rows: &[ConvergenceRow], path: &Path) -> Result<()> {
    std::fs::write(path, format_convergence_csv(rows))?;
    Ok(())
}

/// Probe table with the ratio `error(mu) / error(first mu)` for each mode.
pub fn format_probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = String::from(PROBE_HEADER);
    s.push('\n');
    if let Some(first) = rows.first() {
        for r in rows {
            let fields = [
                sci(r.mu),
                sci(r.eg_error),
                sci(r.eg_error / first.eg_error),
                r.eg_status.to_string(),
                sci(r.pr_error),
                sci(r.pr_error / first.pr_error),
                r.pr_status.to_string(),
            ];
            s.push_str(&fields.join(","));
            s.push('\n');
        }
    }
    s
}

pub fn write_probe_csv(rows: &[ProbeRow], path: &Path) -> Result<()> {
    std::fs::write(path, format_probe_csv(rows))?;
    Ok(())
}

/// Parses a table written by [`write_convergence_csv`]: one vector per data
/// row, empty fields as `None`.
pub fn read_convergence_csv(text: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CONVERGENCE_HEADER => {}
        other => return Err(Error::Config(format!("unexpected header {other:?}"))),
    }
    lines
        .map(|line| {
            line.split(',')
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::Config(format!("bad number {f:?}: {e}")))
                    }
                })
                .collect()
        })
        .collect()
}

fn grid_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Samples the velocity (bubbles included) and pressure on an `nx` by `ny`
/// grid over the unit square. The header line is
/// `nx=<nx> ny=<ny> fallback=<count>` where `count` is the number of sample
/// points not inside any triangle (evaluated on the nearest-centroid
/// triangle instead); then a `x y u1 u2 p` column line and one row per point,
/// `x` running fastest.
pub fn write_field_dump<W: Write>(
    mesh: &Mesh,
    u_h: &EGFunction,
    p_h: &PressureFunction,
    nx: usize,
    ny: usize,
    out: W,
) -> Result<()> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!("sampling grid {nx}x{ny} is empty")));
    }
    let locator = PointLocator::new(mesh);
    let mut rows = Vec::with_capacity(nx * ny);
    let mut fallback = 0;
    for j in 0..ny {
        for i in 0..nx {
            let x = Point::new(grid_coord(i, nx), grid_coord(j, ny));
            let found = locator.locate(mesh, x);
            if matches!(found, Located::Nearest(_)) {
                fallback += 1;
            }
            let t = found.triangle();
            let u = u_h.eval_velocity(mesh, t, x);
            rows.push((x, u, p_h.values[t]));
        }
    }
    let mut w = BufWriter::new(out);
    writeln!(w, "nx={nx} ny={ny} fallback={fallback}")?;
    writeln!(w, "x y u1 u2 p")?;
    for (x, u, p) in rows {
        writeln!(w, "{} {} {} {} {}", sci(x.x), sci(x.y), sci(u.x), sci(u.y), sci(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_field_dump_file(
    mesh: &Mesh,
    u_h: &EGFunction,
    p_h: &PressureFunction,
    nx: usize,
    ny: usize,
    path: &Path,
) -> Result<()> {
    write_field_dump(mesh, u_h, p_h, nx, ny, File::create(path)?)
}

/// Samples of a field dump: `(x, y, u1, u2, p)` rows and the fallback count.
pub fn read_field_dump(text: &str) -> Result<(usize, usize, usize, Vec<[f64; 5]>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty field dump".into()))?;
    let mut vals = [0usize; 3];
    for (k, (part, key)) in header.split_whitespace().zip(["nx=", "ny=", "fallback="]).enumerate() {
        vals[k] = part
            .strip_prefix(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad header {header:?}")))?;
    }
    lines.next();
    let rows = lines
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().filter_map(|f| f.parse().ok()).collect();
            <[f64; 5]>::try_from(v).map_err(|_| Error::Config(format!("bad row {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((vals[0], vals[1], vals[2], rows))
}

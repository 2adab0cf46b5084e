//! Plain-text and image writers for fields, traces and designs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::fdfd::FieldMap;
use crate::optimizer::TraceRecord;
use crate::scene::{DesignVector, Scene};
use crate::{Error, Result};

/// `x,y,re,im` with cell indices, row-major in `y`.
pub fn write_field_csv<W: Write>(field: &FieldMap, mut w: W) -> Result<()> {
    writeln!(w, "x,y,re,im")?;
    for (cell, v) in field.values.iter().enumerate() {
        let (ix, iy) = field.grid.coords(cell);
        writeln!(w, "{ix},{iy},{:e},{:e}", v.re, v.im)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldPart {
    Magnitude,
    Phase,
}

/// Linear gray-level mapping used for a PGM image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScale {
    pub part: FieldPart,
    /// Value mapped to gray level 0.
    pub min: f64,
    /// Value mapped to gray level 255.
    pub max: f64,
}

/// Binary 8-bit PGM (`P5`) of the field magnitude or phase, top row is the
/// largest `y`. Returns the scale for a sidecar file.
pub fn write_field_pgm<W: Write>(
    field: &FieldMap,
    part: FieldPart,
    mut w: W,
) -> Result<ImageScale> {
    let vals: Vec<f64> = field
        .values
        .iter()
        .map(|v| match part {
            FieldPart::Magnitude => v.norm(),
            FieldPart::Phase => v.arg(),
        })
        .collect();
    let (min, max) = match part {
        FieldPart::Magnitude => (0.0, vals.iter().fold(0.0f64, |m, v| m.max(*v))),
        FieldPart::Phase => (-std::f64::consts::PI, std::f64::consts::PI),
    };
    let span = if max > min { max - min } else { 1.0 };
    let (nx, ny) = (field.grid.nx, field.grid.ny);
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let mut row = vec![0u8; nx];
    for iy in (0..ny).rev() {
        for (ix, px) in row.iter_mut().enumerate() {
            let v = vals[field.grid.index(ix, iy)];
            *px = (((v - min) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        w.write_all(&row)?;
    }
    Ok(ImageScale { part, min, max })
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut w: W) -> Result<()> {
    writeln!(
        w,
        "iter,objective_nats,capacity_bits,pgrad_norm,step,active_count"
    )?;
    for r in trace {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{}",
            r.iter, r.objective_nats, r.capacity_bits, r.pgrad_norm, r.step, r.active_count
        )?;
    }
    Ok(())
}

/// `pixel,ix,iy,eps_r,mu_r`, values written with round-trip precision.
pub fn write_design_csv<W: Write>(scene: &Scene, x: &DesignVector, mut w: W) -> Result<()> {
    writeln!(w, "pixel,ix,iy,eps_r,mu_r")?;
    for (p, &cell) in scene.scatterers().iter().enumerate() {
        let (ix, iy) = scene.grid().coords(cell);
        writeln!(w, "{p},{ix},{iy},{:?},{:?}", x.eps_r()[p], x.mu_r()[p])?;
    }
    Ok(())
}

/// Reads a design written by [`write_design_csv`], checking that pixel
/// positions match the scene and values respect its bounds.
pub fn read_design_csv<R: BufRead>(scene: &Scene, r: R) -> Result<DesignVector> {
    let n = scene.scatterers().len();
    let mut eps = vec![f64::NAN; n];
    let mut mu = vec![f64::NAN; n];
    let bad = |line: usize, msg: String| Error::Format(format!("design line {line}: {msg}"));
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "pixel,ix,iy,eps_r,mu_r" {
                return Err(bad(1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad(
                i + 1,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()));
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
        let (p, ix, iy) = (int(fields[0])?, int(fields[1])?, int(fields[2])?);
        if p >= n {
            return Err(bad(i + 1, format!("pixel {p} out of range")));
        }
        if scene.grid().coords(scene.scatterers()[p]) != (ix, iy) {
            return Err(bad(i + 1, format!("pixel {p} is not at ({ix}, {iy})")));
        }
        eps[p] = real(fields[3])?;
        mu[p] = real(fields[4])?;
    }
    if let Some(p) = eps.iter().position(|v| v.is_nan()) {
        return Err(Error::Format(format!("design is missing pixel {p}")));
    }
    Ok(DesignVector::new(scene, eps, Some(mu))?)
}

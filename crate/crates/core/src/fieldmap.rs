//! Dipole-field maps on 2-D slices of the embedding space: CSV grids and an
//! SVG quiver rendered from the grid alone.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dipole::SemanticDipole;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{dot, normalized, orthonormalize_rows, sub};

/// Affine plane `origin + a * basis[0] + b * basis[1]` with orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub origin: Vec<f64>,
    pub basis: [Vec<f64>; 2],
}

impl Slice {
    /// Orthonormalizes `u, v`; fails if they are (numerically) dependent.
    pub fn new(origin: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_dim(origin.len(), u.len())?;
        check_dim(origin.len(), v.len())?;
        check_finite(&origin, "slice origin")?;
        check_finite(&u, "slice basis")?;
        check_finite(&v, "slice basis")?;
        let mut rows = vec![u, v];
        if !orthonormalize_rows(&mut rows, 1e-10) {
            return Err(Error::InvalidParameter("degenerate slice basis".into()));
        }
        let v = rows.pop().unwrap();
        let u = rows.pop().unwrap();
        Ok(Self { origin, basis: [u, v] })
    }

    /// Plane through both poles, centred on their midpoint; the second axis is
    /// the coordinate axis least aligned with the dipole axis.
    pub fn through_poles(dipole: &SemanticDipole) -> Result<Self> {
        let axis = normalized(&dipole.axis()).ok_or_else(|| Error::DegenerateDipole(dipole.id.clone()))?;
        if axis.len() < 2 {
            return Err(Error::InvalidParameter("slice needs embedding_dim >= 2".into()));
        }
        let j = (0..axis.len())
            .min_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs()))
            .unwrap();
        let mut e = vec![0.0; axis.len()];
        e[j] = 1.0;
        let mid = dipole.s_minus().iter().zip(dipole.s_plus()).map(|(a, b)| 0.5 * (a + b)).collect();
        Self::new(mid, axis, e)
    }

    pub fn point(&self, a: f64, b: f64) -> Vec<f64> {
        self.origin
            .iter()
            .zip(self.basis[0].iter().zip(&self.basis[1]))
            .map(|(o, (u, v))| o + a * u + b * v)
            .collect()
    }

    pub fn project(&self, s: &[f64]) -> [f64; 2] {
        let d = sub(s, &self.origin);
        [dot(&d, &self.basis[0]), dot(&d, &self.basis[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub f: f64,
    /// Field gradient projected on the slice basis.
    pub grad: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub n: usize,
    pub extent: f64,
    /// Slice coordinates of `s-` and `s+`.
    pub poles: [[f64; 2]; 2],
    /// Row-major, `i` along the first axis.
    pub cells: Vec<GridCell>,
}

impl FieldGrid {
    pub fn max_value(&self) -> f64 {
        self.cells.iter().map(|c| c.f).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Samples the field on an `n x n` grid covering `[-extent, extent]^2`.
pub fn field_grid(dipole: &SemanticDipole, slice: &Slice, n: usize, extent: f64) -> Result<FieldGrid> {
    check_dim(dipole.dim(), slice.origin.len())?;
    if n < 2 {
        return Err(Error::InvalidSize(format!("grid needs n >= 2, got {n}")));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::InvalidParameter(format!("extent {extent} must be > 0")));
    }
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
    let mut cells = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (coord(i), coord(j));
            let s = slice.point(a, b);
            let g = dipole.field_gradient(&s)?;
            cells.push(GridCell {
                i,
                j,
                a,
                b,
                f: dipole.field_value(&s)?,
                grad: [dot(&g, &slice.basis[0]), dot(&g, &slice.basis[1])],
            });
        }
    }
    Ok(FieldGrid {
        n,
        extent,
        poles: [slice.project(dipole.s_minus()), slice.project(dipole.s_plus())],
        cells,
    })
}

/// One CSV row; floats go through the canonical 17-digit format.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    i: usize,
    j: usize,
    a: String,
    b: String,
    f: String,
    grad_a: String,
    grad_b: String,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Grid size, extent and pole coordinates go in leading `#` lines, then the
/// cells with header `i,j,a,b,f,grad_a,grad_b`.
pub fn write_field_csv<W: Write>(grid: &FieldGrid, mut sink: W) -> Result<()> {
    writeln!(sink, "# n={} extent={}", grid.n, fmt(grid.extent))?;
    for (name, p) in ["pole_minus", "pole_plus"].iter().zip(&grid.poles) {
        writeln!(sink, "# {name}={},{}", fmt(p[0]), fmt(p[1]))?;
    }
    let mut w = csv::Writer::from_writer(sink);
    for c in &grid.cells {
        w.serialize(CsvRow {
            i: c.i,
            j: c.j,
            a: fmt(c.a),
            b: fmt(c.b),
            f: fmt(c.f),
            grad_a: fmt(c.grad[0]),
            grad_b: fmt(c.grad[1]),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("field CSV: {e}"))
}

pub fn read_field_csv<R: Read>(mut source: R) -> Result<FieldGrid> {
    let bad = |m: &str| Error::Validation(format!("field CSV: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let meta: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    if meta.len() != 3 {
        return Err(bad("expected three metadata lines"));
    }
    let (n, extent) = meta[0]
        .strip_prefix("# n=")
        .and_then(|r| r.split_once(" extent="))
        .ok_or_else(|| bad("bad size line"))?;
    let n: usize = n.parse().map_err(|_| bad("bad n"))?;
    let extent = num(extent)?;
    let mut poles = [[0.0; 2]; 2];
    for ((name, line), p) in ["pole_minus", "pole_plus"].iter().zip(&meta[1..]).zip(&mut poles) {
        let (a, b) = line
            .strip_prefix(&format!("# {name}="))
            .and_then(|v| v.split_once(','))
            .ok_or_else(|| bad("bad pole line"))?;
        *p = [num(a)?, num(b)?];
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let cells = reader
        .deserialize::<CsvRow>()
        .map(|row| {
            let r = row.map_err(csv_err)?;
            Ok(GridCell { i: r.i, j: r.j, a: num(&r.a)?, b: num(&r.b)?, f: num(&r.f)?, grad: [num(&r.grad_a)?, num(&r.grad_b)?] })
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.len() != n * n {
        return Err(bad("cell count does not match n"));
    }
    Ok(FieldGrid { n, extent, poles, cells })
}

const SVG_SIZE: f64 = 600.0;
const SVG_MARGIN: f64 = 20.0;

/// Quiver plot: cells shaded by field value, arrows along the projected
/// gradient (longest arrow spans 0.9 of a cell), poles marked.
pub fn render_svg(grid: &FieldGrid) -> String {
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let px = |a: f64| SVG_MARGIN + (a + grid.extent) / (2.0 * grid.extent) * span;
    // SVG y grows downward.
    let py = |b: f64| SVG_MARGIN + (grid.extent - b) / (2.0 * grid.extent) * span;
    let cell = span / (grid.n - 1) as f64;
    let max_grad = grid.cells.iter().map(|c| c.grad[0].hypot(c.grad[1])).fold(0.0, f64::max);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for c in &grid.cells {
        // f in [-1, 1]: blue for negative, red for positive.
        let t = c.f.clamp(-1.0, 1.0);
        let (r, g, b) = if t >= 0.0 {
            (255, (255.0 * (1.0 - t)) as u8, (255.0 * (1.0 - t)) as u8)
        } else {
            ((255.0 * (1.0 + t)) as u8, (255.0 * (1.0 + t)) as u8, 255)
        };
        writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="rgb({r},{g},{b})" fill-opacity="0.5"/>"#,
            px(c.a) - cell / 2.0,
            py(c.b) - cell / 2.0,
            cell,
            cell
        )
        .unwrap();
    }
    if max_grad > 0.0 {
        for c in &grid.cells {
            let len = 0.9 * cell / max_grad;
            let (x0, y0) = (px(c.a), py(c.b));
            let (x1, y1) = (x0 + len * c.grad[0], y0 - len * c.grad[1]);
            writeln!(
                s,
                r#"<line x1="{x0:.3}" y1="{y0:.3}" x2="{x1:.3}" y2="{y1:.3}" stroke="black" stroke-width="1"/>"#
            )
            .unwrap();
            writeln!(s, r#"<circle cx="{x1:.3}" cy="{y1:.3}" r="1.5" fill="black"/>"#).unwrap();
        }
    }
    for (p, (label, colour)) in grid.poles.iter().zip([("s-", "blue"), ("s+", "red")]) {
        let (x, y) = (px(p[0]), py(p[1]));
        writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="6" fill="{colour}" stroke="black"/>"#).unwrap();
        writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-size="14">{label}</text>"#, x + 8.0, y - 8.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

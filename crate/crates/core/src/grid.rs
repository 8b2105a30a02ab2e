//! Uniform cell-centered box meshes with no-flux boundaries.
//!
//! All operators are written face by face: each interior face carries a
//! flux between its two cells, boundary faces carry none. Sums over cells of
//! any divergence therefore telescope to zero.

use std::io::Write;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;

/// Interior face between cells `lo` and `hi` (`hi` is the neighbour in the
/// positive `axis` direction).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    pub axis: usize,
}

/// Cell-centered mesh of a box in one or two dimensions.
///
/// Cells are numbered with `x` fastest: `index = i + nx * j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    h: [f64; 2],
    origin: [f64; 2],
    faces: Vec<Face>,
}

impl Grid {
    pub fn new(dim: usize, extents: &[usize], lengths: &[f64]) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if extents.len() != dim || lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and lengths, got {} and {}",
                extents.len(),
                lengths.len()
            )));
        }
        if let Some(n) = extents.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {n}")));
        }
        if let Some(l) = lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidGrid(format!("lengths must be positive, got {l}")));
        }
        let mut cells = [1, 1];
        let mut h = [1.0, 1.0];
        for k in 0..dim {
            cells[k] = extents[k];
            h[k] = lengths[k] / extents[k] as f64;
        }
        let [nx, ny] = cells;
        let mut faces = Vec::with_capacity((nx - 1) * ny + nx * ny.saturating_sub(1));
        for j in 0..ny {
            for i in 0..nx - 1 {
                let lo = i + nx * j;
                faces.push(Face { lo, hi: lo + 1, axis: 0 });
            }
        }
        if dim == 2 {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let lo = i + nx * j;
                    faces.push(Face { lo, hi: lo + nx, axis: 1 });
                }
            }
        }
        Ok(Self {
            dim,
            cells,
            h,
            origin: [0.0, 0.0],
            faces,
        })
    }

    pub fn new_1d(n: usize, length: f64) -> Result<Self> {
        Self::new(1, &[n], &[length])
    }

    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(2, &[nx, ny], &[lx, ly])
    }

    pub fn with_origin(mut self, origin: &[f64]) -> Self {
        for (k, &o) in origin.iter().take(self.dim).enumerate() {
            self.origin[k] = o;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn lengths(&self) -> Vec<f64> {
        (0..self.dim).map(|k| self.h[k] * self.cells[k] as f64).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    /// Area of a face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            self.h[1 - axis]
        }
    }

    /// `area / h` for faces normal to `axis`: the factor turning a face
    /// difference into a flux.
    pub fn transmissibility(&self, axis: usize) -> f64 {
        self.face_area(axis) / self.h[axis]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn cell_ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    /// Center of cell `idx`; the unused coordinate is 0 in 1D.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(idx);
        let x = self.origin[0] + (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 {
            self.origin[1] + (j as f64 + 0.5) * self.h[1]
        } else {
            0.0
        };
        [x, y]
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.cell_count()).map(|k| self.center(k))
    }

    /// Volume-weighted sum.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.cell_volume() * f.iter().sum::<f64>()
    }
}

/// Per-cell values aligned with a [`Grid`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidField(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at cell {k}")));
        }
        Ok(Self(values))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self(vec![0.0; grid.cell_count()])
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self(vec![c; grid.cell_count()])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self(grid.centers().map(f).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// CSV snapshot: `index,x[,y],value`, values at 17 significant digits.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> std::io::Result<()> {
        if grid.dim() == 1 {
            writeln!(out, "index,x,value")?;
        } else {
            writeln!(out, "index,x,y,value")?;
        }
        for (k, v) in self.0.iter().enumerate() {
            let c = grid.center(k);
            if grid.dim() == 1 {
                writeln!(out, "{k},{:.16e},{:.16e}", c[0], v)?;
            } else {
                writeln!(out, "{k},{:.16e},{:.16e},{:.16e}", c[0], c[1], v)?;
            }
        }
        Ok(())
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Per-face mobilities of the two species and of the `w` equation.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMobility {
    pub species1: Vec<f64>,
    pub species2: Vec<f64>,
    /// `mu * species1 + nu * species2`, face by face.
    pub combined: Vec<f64>,
}

#[inline]
fn face_avg(f: &[f64], face: &Face) -> f64 {
    0.5 * (f[face.lo] + f[face.hi])
}

/// `avg(u_i) * avg(w)^(gamma - 1)` on every face, with arithmetic averages.
pub fn face_mobilities(u1: &[f64], u2: &[f64], w: &[f64], params: &Params, grid: &Grid) -> FaceMobility {
    let n = grid.faces().len();
    let mut species1 = Vec::with_capacity(n);
    let mut species2 = Vec::with_capacity(n);
    let mut combined = Vec::with_capacity(n);
    let expo = params.gamma - 1.0;
    for face in grid.faces() {
        let pressure = face_avg(w, face).max(0.0).powf(expo);
        let m1 = face_avg(u1, face) * pressure;
        let m2 = face_avg(u2, face) * pressure;
        species1.push(m1);
        species2.push(m2);
        combined.push(params.mu * m1 + params.nu * m2);
    }
    FaceMobility {
        species1,
        species2,
        combined,
    }
}

/// Divergence of `mob * grad(f^power)` with zero flux through the boundary.
pub fn div_flux(mob: &[f64], f: &[f64], power: f64, grid: &Grid) -> Field {
    let vol = grid.cell_volume();
    let mut out = vec![0.0; grid.cell_count()];
    let pow = |v: f64| if power == 1.0 { v } else { v.max(0.0).powf(power) };
    for (face, &m) in grid.faces().iter().zip(mob) {
        let flux = m * grid.transmissibility(face.axis) * (pow(f[face.hi]) - pow(f[face.lo]));
        out[face.lo] += flux / vol;
        out[face.hi] -= flux / vol;
    }
    Field(out)
}

/// 3-point / 5-point Laplacian with reflecting (Neumann) ghost cells.
pub fn laplacian(f: &[f64], grid: &Grid) -> Field {
    let vol = grid.cell_volume();
    let mut out = vec![0.0; grid.cell_count()];
    for face in grid.faces() {
        let flux = grid.transmissibility(face.axis) * (f[face.hi] - f[face.lo]);
        out[face.lo] += flux / vol;
        out[face.hi] -= flux / vol;
    }
    Field(out)
}

/// Face quadrature of `sum_f weight_f * |grad g|^2` over the domain, where
/// `grad g` is the face difference quotient.
pub fn face_energy(weight: impl Fn(usize) -> f64, g: &[f64], grid: &Grid) -> f64 {
    grid.faces()
        .iter()
        .enumerate()
        .map(|(k, face)| {
            let d = g[face.hi] - g[face.lo];
            weight(k) * grid.transmissibility(face.axis) * d * d
        })
        .sum()
}

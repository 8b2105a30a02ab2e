//! Face-coupled SPD systems `(M + L_c) x = b`.
//!
//! `M` is a positive diagonal (the volume-scaled `1/dt` mass term) and `L_c`
//! is the graph Laplacian of the mesh weighted by nonnegative face couplings.
//! Row sums of `L_c` vanish, so `A 1 = M 1`; the solvers use this to remove the
//! mean of the final residual, which keeps discrete mass balances exact up
//! to rounding.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::SolverKind;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct LinearSystem<'g> {
    grid: &'g Grid,
    pub mass: Vec<f64>,
    /// Per-face coupling, already multiplied by the face transmissibility.
    pub coupling: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl<'g> LinearSystem<'g> {
    pub fn new(grid: &'g Grid, mass: Vec<f64>, coupling: Vec<f64>, rhs: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.cell_count());
        debug_assert_eq!(coupling.len(), grid.faces().len());
        debug_assert_eq!(rhs.len(), grid.cell_count());
        Self {
            grid,
            mass,
            coupling,
            rhs,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = self.mass.clone();
        for (face, &c) in self.grid.faces().iter().zip(&self.coupling) {
            d[face.lo] += c;
            d[face.hi] += c;
        }
        d
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &m), &xi) in out.iter_mut().zip(&self.mass).zip(x) {
            *o = m * xi;
        }
        for (face, &c) in self.grid.faces().iter().zip(&self.coupling) {
            let flux = c * (x[face.lo] - x[face.hi]);
            out[face.lo] += flux;
            out[face.hi] -= flux;
        }
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    }

    pub fn solve(&self, kind: SolverKind, guess: &[f64], tol: f64) -> Result<(Vec<f64>, SolveStats)> {
        let (mut x, mut stats) = match kind {
            SolverKind::Auto if self.grid.dim() == 1 => (self.solve_tridiagonal(), SolveStats {
                iterations: 1,
                relative_residual: 0.0,
            }),
            _ => self.solve_cg(guess, tol, 20 * self.mass.len() + 100)?,
        };
        self.remove_mean_residual(&mut x);
        let r = self.residual(&x);
        stats.relative_residual = max_norm(&r) / max_norm(&self.rhs).max(f64::MIN_POSITIVE);
        Ok((x, stats))
    }

    fn remove_mean_residual(&self, x: &mut [f64]) {
        let r = self.residual(x);
        let total_mass: f64 = self.mass.iter().sum();
        let shift = r.iter().sum::<f64>() / total_mass;
        for v in x.iter_mut() {
            *v += shift;
        }
    }

    /// Thomas algorithm; only valid on 1D grids where face `k` joins cells
    /// `k` and `k + 1`.
    fn solve_tridiagonal(&self) -> Vec<f64> {
        let n = self.mass.len();
        let diag = self.diagonal();
        let off = &self.coupling; // A[k][k+1] = A[k+1][k] = -off[k]
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        c_prime[0] = if n > 1 { -off[0] / diag[0] } else { 0.0 };
        d_prime[0] = self.rhs[0] / diag[0];
        for k in 1..n {
            let a = -off[k - 1];
            let denom = diag[k] - a * c_prime[k - 1];
            c_prime[k] = if k + 1 < n { -off[k] / denom } else { 0.0 };
            d_prime[k] = (self.rhs[k] - a * d_prime[k - 1]) / denom;
        }
        let mut x = d_prime;
        for k in (0..n - 1).rev() {
            x[k] -= c_prime[k] * x[k + 1];
        }
        x
    }

    /// Jacobi-preconditioned conjugate gradients. Stops once the true
    /// residual satisfies `|b - Ax|_inf <= tol |b|_inf`.
    pub fn solve_cg(&self, guess: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
        let n = self.mass.len();
        let inv_diag: Vec<f64> = self.diagonal().iter().map(|d| 1.0 / d).collect();
        let b_norm = max_norm(&self.rhs);
        let mut x = guess.to_vec();
        if b_norm == 0.0 {
            return Ok((vec![0.0; n], SolveStats::default()));
        }
        let mut r = self.residual(&x);
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut rel = max_norm(&r) / b_norm;
        let mut it = 0;
        while rel > tol {
            if it >= max_iter {
                return Err(Error::LinearSolver {
                    iterations: it,
                    residual: rel,
                });
            }
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            for k in 0..n {
                z[k] = r[k] * inv_diag[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
            it += 1;
            // recurrence drifts; confirm against the true residual before stopping
            rel = max_norm(&r) / b_norm;
            if rel <= tol {
                r = self.residual(&x);
                rel = max_norm(&r) / b_norm;
            }
        }
        Ok((
            x,
            SolveStats {
                iterations: it,
                relative_residual: rel,
            },
        ))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

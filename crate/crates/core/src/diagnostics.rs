//! Scalar functionals of a state and residuals of the weak formulation.
//!
//! Gradient integrals use the same face differences as the solver, so
//! discrete integration by parts holds exactly and test-function identities
//! telescope.

use std::io::Write;

use serde::Serialize;

use crate::grid::{face_energy, face_mobilities, Grid};
use crate::model::{reaction_rates, GrowthModel, Params};
use crate::scheme::{State, Trajectory};

/// Per-state scalar summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass_w: f64,
    pub mass_u1: f64,
    pub mass_u2: f64,
    pub min_u1: f64,
    pub max_u1: f64,
    pub min_u2: f64,
    pub max_u2: f64,
    pub min_w: f64,
    pub max_w: f64,
    /// Max-norm of `w - u1 - u2`.
    pub identity_residual: f64,
    /// `1/2 int w^2`.
    pub l2_w: f64,
    /// `int |grad w^((gamma+1)/2)|^2`.
    pub dissipation_pressure: f64,
    /// `int (mu u1 + nu u2) w^(gamma-1) |grad w|^2`.
    pub dissipation_mobility: f64,
    /// `int u1 u2`.
    pub overlap: f64,
    pub eta1_min: f64,
    pub eta1_max: f64,
    pub eta2_min: f64,
    pub eta2_max: f64,
    /// `max |eta1 + eta2 - 1|` over cells with `w > 10 epsilon`.
    pub eta_sum_defect: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "t,mass_w,mass_u1,mass_u2,min_u1,max_u1,min_u2,max_u2,min_w,max_w,\
identity_residual,l2_w,dissipation_pressure,dissipation_mobility,overlap,\
eta1_min,eta1_max,eta2_min,eta2_max,eta_sum_defect";

    pub fn values(&self) -> [f64; 20] {
        [
            self.t,
            self.mass_w,
            self.mass_u1,
            self.mass_u2,
            self.min_u1,
            self.max_u1,
            self.min_u2,
            self.max_u2,
            self.min_w,
            self.max_w,
            self.identity_residual,
            self.l2_w,
            self.dissipation_pressure,
            self.dissipation_mobility,
            self.overlap,
            self.eta1_min,
            self.eta1_max,
            self.eta2_min,
            self.eta2_max,
            self.eta_sum_defect,
        ]
    }

    pub fn write_csv_row<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let row: Vec<String> = self.values().iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(","))
    }
}

/// Writes a header and one row per record.
pub fn write_csv<W: Write>(records: &[DiagnosticsRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", DiagnosticsRecord::CSV_HEADER)?;
    for r in records {
        r.write_csv_row(&mut out)?;
    }
    Ok(())
}

fn min_max(f: &[f64]) -> (f64, f64) {
    f.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn record(state: &State, params: &Params, grid: &Grid) -> DiagnosticsRecord {
    let vol = grid.cell_volume();
    let (min_u1, max_u1) = min_max(&state.u1);
    let (min_u2, max_u2) = min_max(&state.u2);
    let (min_w, max_w) = min_max(&state.w);

    let half = 0.5 * (params.gamma + 1.0);
    let pressure: Vec<f64> = state.w.iter().map(|&w| w.max(0.0).powf(half)).collect();
    let dissipation_pressure = face_energy(|_| 1.0, &pressure, grid);
    let mob = face_mobilities(&state.u1, &state.u2, &state.w, params, grid);
    let dissipation_mobility = face_energy(|k| mob.combined[k], &state.w, grid);

    let floor = params.epsilon_floor_value();
    let active = 10.0 * floor;
    let mut eta = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    let mut eta_sum_defect: f64 = 0.0;
    for ((&u1, &u2), &w) in state.u1.iter().zip(state.u2.iter()).zip(state.w.iter()) {
        let denom = w.max(floor);
        if denom <= 0.0 {
            continue;
        }
        let e = [u1 / denom, u2 / denom];
        for (range, v) in eta.iter_mut().zip(e) {
            range.0 = range.0.min(v);
            range.1 = range.1.max(v);
        }
        if w > active {
            eta_sum_defect = eta_sum_defect.max((e[0] + e[1] - 1.0).abs());
        }
    }

    DiagnosticsRecord {
        t: state.t,
        mass_w: grid.integrate(&state.w),
        mass_u1: grid.integrate(&state.u1),
        mass_u2: grid.integrate(&state.u2),
        min_u1,
        max_u1,
        min_u2,
        max_u2,
        min_w,
        max_w,
        identity_residual: state.identity_residual(),
        l2_w: 0.5 * vol * state.w.iter().map(|w| w * w).sum::<f64>(),
        dissipation_pressure,
        dissipation_mobility,
        overlap: vol * state.u1.iter().zip(state.u2.iter()).map(|(a, b)| a * b).sum::<f64>(),
        eta1_min: eta[0].0,
        eta1_max: eta[0].1,
        eta2_min: eta[1].0,
        eta2_max: eta[1].1,
        eta_sum_defect,
    }
}

pub fn record_trajectory(traj: &Trajectory, params: &Params, grid: &Grid) -> Vec<DiagnosticsRecord> {
    traj.states.iter().map(|s| record(s, params, grid)).collect()
}

/// Trapezoid rule for samples `(t_k, f_k)`.
pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}

/// Time integral of `int |grad w^((gamma+1)/2)|^2` over the recorded span.
pub fn dissipation_budget(records: &[DiagnosticsRecord]) -> f64 {
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let d: Vec<f64> = records.iter().map(|r| r.dissipation_pressure).collect();
    trapezoid(&t, &d)
}

/// Tensor product of Neumann-compatible cosines,
/// `prod_k cos(n_k pi (x_k - a_k) / L_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CosineTest {
    pub modes: [usize; 2],
}

impl CosineTest {
    pub fn eval(&self, grid: &Grid, x: [f64; 2]) -> f64 {
        let lengths = grid.lengths();
        let origin = grid.origin();
        (0..grid.dim())
            .map(|k| {
                let n = self.modes[k] as f64;
                (n * std::f64::consts::PI * (x[k] - origin[k]) / lengths[k]).cos()
            })
            .product()
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        grid.centers().map(|c| self.eval(grid, c)).collect()
    }

    pub fn name(&self) -> String {
        format!("cos{}_{}", self.modes[0], self.modes[1])
    }
}

/// `{1, cos(k pi x / L)}` for `k <= max_mode`, tensorized in 2D.
pub fn cosine_family(grid: &Grid, max_mode: usize) -> Vec<CosineTest> {
    let ky = if grid.dim() == 2 { max_mode } else { 0 };
    let mut out = Vec::new();
    for j in 0..=ky {
        for i in 0..=max_mode {
            out.push(CosineTest { modes: [i, j] });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakResidual {
    pub test: String,
    pub species: usize,
    pub residual: f64,
}

/// Residuals of the weak identities
///
/// ```text
/// int u_i(T) phi - int u_i(0) phi + int_0^T int c_i u_i grad w^gamma . grad phi
///     - int_0^T int R_i phi = 0,      c_1 = mu, c_2 = nu,
/// ```
///
/// for time-independent test functions, with trapezoidal time quadrature
/// over the stored states.
pub fn weak_residual(
    traj: &Trajectory,
    tests: &[CosineTest],
    params: &Params,
    model: &GrowthModel,
    grid: &Grid,
) -> Vec<WeakResidual> {
    let vol = grid.cell_volume();
    let times = traj.times();
    let mut out = Vec::with_capacity(2 * tests.len());
    for test in tests {
        let phi = test.sample(grid);
        for species in [1usize, 2] {
            let coef = if species == 1 { params.mu } else { params.nu };
            let field = |s: &State| if species == 1 { s.u1.to_vec() } else { s.u2.to_vec() };
            let integrand: Vec<f64> = traj
                .states
                .iter()
                .map(|s| {
                    let u = field(s);
                    let press: Vec<f64> = s.w.iter().map(|&w| w.max(0.0).powf(params.gamma)).collect();
                    let flux: f64 = grid
                        .faces()
                        .iter()
                        .map(|f| {
                            0.5 * (u[f.lo] + u[f.hi])
                                * grid.transmissibility(f.axis)
                                * (press[f.hi] - press[f.lo])
                                * (phi[f.hi] - phi[f.lo])
                        })
                        .sum();
                    let source: f64 = (0..grid.cell_count())
                        .map(|k| {
                            let (r1, r2) = reaction_rates(s.u1[k], s.u2[k], s.w[k], model);
                            let r = if species == 1 { r1 } else { r2 };
                            vol * r * phi[k]
                        })
                        .sum();
                    coef * flux - source
                })
                .collect();
            let pair = |s: &State| vol * field(s).iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
            let residual = pair(traj.last()) - pair(traj.initial()) + trapezoid(&times, &integrand);
            out.push(WeakResidual {
                test: test.name(),
                species,
                residual: residual.abs(),
            });
        }
    }
    out
}

//! Validation studies: the Barenblatt oracle for the porous-medium limit,
//! grid refinement, `epsilon` sweeps, segregation and unequal mobilities.
//!
//! With `mu = nu` the total density obeys `w_t = c Lap(w^m) + epsilon Lap(w)`
//! with `m = gamma + 1` and `c = mu gamma / (gamma + 1)`, whose `epsilon = 0`
//! source solution is the Barenblatt profile.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma as gamma_fn;

use crate::diagnostics::{dissipation_budget, record_trajectory, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::{face_energy, Field, Grid};
use crate::model::{reaction_bound, GrowthModel, Params, DEFAULT_SAMPLES};
use crate::scheme::{prepare_initial, run_with, DtPolicy, State, Trajectory};

/// Self-similar source solution of `v_t = c Lap(v^m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarenblattParams {
    pub m: f64,
    pub c: f64,
    pub mass: f64,
    /// Time offset: the profile at `t` is the source solution at `t + t0`.
    pub t0: f64,
    pub dim: usize,
    pub center: [f64; 2],
}

impl BarenblattParams {
    /// Profile of the `epsilon -> 0` limit of the `w` equation.
    pub fn for_limit(gamma: f64, mu: f64, mass: f64, t0: f64, dim: usize) -> Self {
        Self {
            m: gamma + 1.0,
            c: mu * gamma / (gamma + 1.0),
            mass,
            t0,
            dim,
            center: [0.0, 0.0],
        }
    }

    pub fn with_center(mut self, center: [f64; 2]) -> Self {
        self.center = center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.m > 1.0 && self.c > 0.0 && self.mass >= 0.0 && self.t0 > 0.0 && (1..=2).contains(&self.dim);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid Barenblatt parameters {self:?}")))
        }
    }

    /// `(alpha, beta, k, p)` with `v = s^-alpha (C - k |x|^2 s^-2beta)_+^p`.
    pub fn exponents(&self) -> (f64, f64, f64, f64) {
        let d = self.dim as f64;
        let alpha = d / (d * (self.m - 1.0) + 2.0);
        let beta = alpha / d;
        let k = alpha * (self.m - 1.0) / (2.0 * self.m * d);
        (alpha, beta, k, 1.0 / (self.m - 1.0))
    }

    /// Constant `C` fixing the mass.
    pub fn shape_constant(&self) -> f64 {
        let (_, _, k, p) = self.exponents();
        let half_d = 0.5 * self.dim as f64;
        let unit = k.powf(-half_d) * std::f64::consts::PI.powf(half_d) * gamma_fn(p + 1.0) / gamma_fn(p + 1.0 + half_d);
        (self.mass / unit).powf(1.0 / (p + half_d))
    }

    /// Self-similar time `s = c (t + t0)`.
    pub fn similarity_time(&self, t: f64) -> f64 {
        self.c * (t + self.t0)
    }

    pub fn support_radius(&self, t: f64) -> f64 {
        let (_, beta, k, _) = self.exponents();
        (self.shape_constant() / k).sqrt() * self.similarity_time(t).powf(beta)
    }

    pub fn peak(&self, t: f64) -> f64 {
        barenblatt(self.center, t, self)
    }
}

pub fn barenblatt(x: [f64; 2], t: f64, p: &BarenblattParams) -> f64 {
    let (alpha, beta, k, expo) = p.exponents();
    let s = p.similarity_time(t);
    let r2: f64 = (0..p.dim).map(|i| (x[i] - p.center[i]).powi(2)).sum();
    let g = p.shape_constant() - k * r2 * s.powf(-2.0 * beta);
    if g <= 0.0 {
        0.0
    } else {
        s.powf(-alpha) * g.powf(expo)
    }
}

/// A complete simulation setup.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Grid,
    pub params: Params,
    pub model: GrowthModel,
    pub initial: State,
    pub t_end: f64,
    pub policy: DtPolicy,
}

impl Scenario {
    /// Runs from the (floor-adjusted) initial state, keeping every step.
    pub fn run(&self) -> Result<Trajectory> {
        self.run_observed(1, &mut |_, _| {})
    }

    /// Keeps every `store_every`-th step and reports every (sub)step.
    pub fn run_observed(
        &self,
        store_every: usize,
        observer: &mut dyn FnMut(&State, &crate::scheme::StepReport),
    ) -> Result<Trajectory> {
        let initial = prepare_initial(&self.initial, &self.params);
        run_with(
            &initial,
            self.t_end,
            self.policy,
            store_every,
            &self.params,
            &self.model,
            &self.grid,
            observer,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    /// Informational checks are reported but do not fail a study.
    pub enforced: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            enforced: true,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
            enforced: true,
        }
    }

    pub fn informational(mut self) -> Self {
        self.enforced = false;
        self
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
            enforced: true,
        }
    }
}

/// Outcome of a multi-level study.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StudyReport {
    pub study: String,
    /// Grid sizes or `epsilon` values, in run order.
    pub levels: Vec<f64>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
    /// Named per-level or per-pair series (budgets, distances, overlaps).
    pub series: BTreeMap<String, Vec<f64>>,
    pub checks: Vec<Check>,
    /// Diagnostics of every level, for the CSV writers.
    #[serde(skip)]
    pub records: Vec<Vec<DiagnosticsRecord>>,
}

impl StudyReport {
    fn new(study: &str) -> Self {
        Self {
            study: study.to_string(),
            ..Self::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.enforced)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Observed orders `log(e_k / e_k+1) / log(h_k / h_k+1)` between levels.
pub fn observed_orders(spacings: &[f64], errors: &[f64]) -> Vec<f64> {
    spacings
        .windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

fn run_levels<T: Send>(jobs: Vec<T>, f: impl Fn(T) -> Result<Trajectory> + Sync + Send) -> Result<Vec<Trajectory>> {
    jobs.into_par_iter().map(f).collect()
}

/// The mass-`M` Barenblatt profile on `center + [-half_width, half_width]^d` with
/// zero growth rates, split as `u1 = eta w`, `u2 = (1 - eta) w`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarenblattSetup {
    pub dim: usize,
    pub gamma: f64,
    pub mu: f64,
    pub mass: f64,
    pub t0: f64,
    pub t_end: f64,
    pub half_width: f64,
    /// Center of the profile and of the domain.
    pub center: [f64; 2],
    pub eta: f64,
    pub w_p: f64,
    /// `dt = dt_per_h * h`.
    pub dt_per_h: f64,
    pub picard_tol: f64,
}

impl Default for BarenblattSetup {
    fn default() -> Self {
        Self {
            dim: 1,
            gamma: 2.0,
            mu: 1.0,
            mass: 0.5,
            t0: 0.03,
            t_end: 0.5,
            half_width: 1.0,
            center: [0.0, 0.0],
            eta: 1.0,
            w_p: 1.0,
            dt_per_h: 0.25,
            picard_tol: 1e-10,
        }
    }
}

impl BarenblattSetup {
    pub fn oracle(&self) -> BarenblattParams {
        BarenblattParams::for_limit(self.gamma, self.mu, self.mass, self.t0, self.dim).with_center(self.center)
    }

    pub fn grid(&self, n: usize) -> Result<Grid> {
        let extents = vec![n; self.dim];
        let lengths = vec![2.0 * self.half_width; self.dim];
        let origin: Vec<f64> = (0..self.dim).map(|k| self.center[k] - self.half_width).collect();
        Ok(Grid::new(self.dim, &extents, &lengths)?.with_origin(&origin))
    }

    pub fn scenario(&self, n: usize, epsilon: f64) -> Result<Scenario> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParams(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        let oracle = self.oracle();
        oracle.validate()?;
        let grid = self.grid(n)?;
        let w = Field::from_fn(&grid, |x| barenblatt(x, 0.0, &oracle));
        let u1 = w.map(|v| self.eta * v);
        let u2 = w.zip_map(&u1, |a, b| a - b);
        let params = Params {
            mu: self.mu,
            nu: self.mu,
            gamma: self.gamma,
            epsilon,
            picard_tol: self.picard_tol,
            ..Params::default()
        };
        Ok(Scenario {
            policy: DtPolicy::fixed(self.dt_per_h * grid.spacing()[0]),
            grid,
            params,
            model: GrowthModel::inert(self.w_p)?,
            initial: State::from_species(u1, u2, 0.0),
            t_end: self.t_end,
        })
    }
}

/// Thresholds for [`pme_validation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmeThresholds {
    pub min_order: f64,
    pub max_final_error: f64,
    pub split_tolerance: f64,
}

impl Default for PmeThresholds {
    fn default() -> Self {
        Self {
            min_order: 0.8,
            max_final_error: 0.02,
            split_tolerance: 1e-10,
        }
    }
}

/// Relative L1 error of `w` against the Barenblatt profile at `t_end` over
/// a sequence of grids, with `epsilon = h` on every level.
pub fn pme_validation(setup: &BarenblattSetup, cells: &[usize], thresholds: PmeThresholds) -> Result<StudyReport> {
    if cells.is_empty() || cells.windows(2).any(|c| c[1] <= c[0]) {
        return Err(Error::InvalidParams("grid levels must be strictly increasing".into()));
    }
    let scenarios = cells
        .iter()
        .map(|&n| {
            let h = setup.grid(n)?.spacing()[0];
            setup.scenario(n, h)
        })
        .collect::<Result<Vec<_>>>()?;
    let trajs = run_levels(scenarios.iter().collect(), |s| s.run())?;

    let oracle = setup.oracle();
    let mut report = StudyReport::new("pme");
    let mut spacings = Vec::new();
    let mut split_defect: f64 = 0.0;
    let mut min_species: f64 = 0.0;
    for (sc, traj) in scenarios.iter().zip(&trajs) {
        let grid = &sc.grid;
        let last = traj.last();
        let exact = Field::from_fn(grid, |x| barenblatt(x, last.t, &oracle));
        let err: f64 = grid.integrate(&last.w.zip_map(&exact, |a, b| (a - b).abs()));
        let norm = grid.integrate(&exact.map(f64::abs));
        report.levels.push(grid.extents()[0] as f64);
        report.errors.push(if norm > 0.0 { err / norm } else { err });
        spacings.push(grid.spacing()[0]);
        for st in &traj.states {
            split_defect = split_defect.max(st.identity_residual());
            min_species = min_species.min(st.u1.min()).min(st.u2.min());
        }
        report.records.push(record_trajectory(traj, &sc.params, grid));
    }
    report.orders = observed_orders(&spacings, &report.errors);
    report.series.insert("h".into(), spacings);

    let min_order = report.orders.iter().copied().fold(f64::INFINITY, f64::min);
    if !report.orders.is_empty() {
        report.checks.push(Check::at_least("min observed L1 order", min_order, thresholds.min_order));
    }
    report.checks.push(Check::at_most(
        "final relative L1 error",
        *report.errors.last().unwrap(),
        thresholds.max_final_error,
    ));
    report
        .checks
        .push(Check::at_most("split consistency |w - u1 - u2|", split_defect, thresholds.split_tolerance));
    report.checks.push(Check::at_least("min species density", min_species, -thresholds.split_tolerance));
    Ok(report)
}

/// Max-norm difference of the `w` trajectories of two species splits, over
/// all stored times. With `mu = nu` the `w` dynamics do not see the split.
pub fn split_invariance(setup: &BarenblattSetup, n: usize, epsilon: f64, etas: [f64; 2]) -> Result<StudyReport> {
    let scenarios = etas
        .iter()
        .map(|&eta| BarenblattSetup { eta, ..setup.clone() }.scenario(n, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let trajs = run_levels(scenarios.iter().collect(), |s| s.run())?;
    let (a, b) = (&trajs[0], &trajs[1]);
    let per_time: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| x.w.max_abs_diff(&y.w))
        .collect();
    let worst = per_time.iter().copied().fold(0.0, f64::max);
    let mut report = StudyReport::new("split");
    report.levels = etas.to_vec();
    report.errors = vec![worst];
    report.series.insert("w_difference".into(), per_time);
    report.checks.push(Check::flag(
        "same time grid",
        a.states.len() == b.states.len() && a.times() == b.times(),
    ));
    report.checks.push(Check::at_most("max |w_a - w_b|", worst, 1e-9));
    for (sc, t) in scenarios.iter().zip(&trajs) {
        report.records.push(record_trajectory(t, &sc.params, &sc.grid));
    }
    Ok(report)
}

/// Discrete `L2(0,T; H1)` distance between `w^(gamma+1)` of two runs on the
/// same grid and time levels.
pub fn h1_distance(a: &Trajectory, b: &Trajectory, gamma: f64, grid: &Grid) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::InvalidParams("trajectories have different time levels".into()));
    }
    let times = a.times();
    let integrand: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| {
            let diff: Vec<f64> = x
                .w
                .iter()
                .zip(y.w.iter())
                .map(|(p, q)| p.max(0.0).powf(gamma + 1.0) - q.max(0.0).powf(gamma + 1.0))
                .collect();
            let l2 = grid.integrate(&diff.iter().map(|d| d * d).collect::<Vec<_>>());
            l2 + face_energy(|_| 1.0, &diff, grid)
        })
        .collect();
    Ok(crate::diagnostics::trapezoid(&times, &integrand).sqrt())
}

fn check_levels_decreasing(eps: &[f64]) -> Result<()> {
    if eps.is_empty() || eps.windows(2).any(|e| e[1] >= e[0]) || eps.iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidParams(
            "epsilon levels must be positive and strictly decreasing".into(),
        ));
    }
    Ok(())
}

struct Sweep {
    scenarios: Vec<Scenario>,
    trajs: Vec<Trajectory>,
    distances: Vec<f64>,
    budgets: Vec<f64>,
}

fn sweep(base: &Scenario, eps: &[f64]) -> Result<Sweep> {
    check_levels_decreasing(eps)?;
    let scenarios: Vec<Scenario> = eps
        .iter()
        .map(|&e| {
            let mut s = base.clone();
            s.params.epsilon = e;
            s
        })
        .collect();
    let trajs = run_levels(scenarios.iter().collect(), |s| s.run())?;
    let distances = trajs
        .windows(2)
        .map(|p| h1_distance(&p[0], &p[1], base.params.gamma, &base.grid))
        .collect::<Result<Vec<_>>>()?;
    let budgets = scenarios
        .iter()
        .zip(&trajs)
        .map(|(s, t)| dissipation_budget(&record_trajectory(t, &s.params, &s.grid)))
        .collect();
    Ok(Sweep {
        scenarios,
        trajs,
        distances,
        budgets,
    })
}

/// Largest budget over smallest budget.
pub fn budget_spread(budgets: &[f64]) -> f64 {
    let hi = budgets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = budgets.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        1.0
    } else {
        hi / lo
    }
}

/// True when every increase of the budget between consecutive levels is
/// smaller than the change before it, i.e. the sequence levels off.
fn budget_trend_saturates(budgets: &[f64]) -> bool {
    let steps: Vec<f64> = budgets.windows(2).map(|b| b[1] - b[0]).collect();
    // every increase must be smaller than the one before it
    steps.windows(2).all(|s| s[1] <= 0.0 || s[1] < s[0].abs())
}

/// Sweep `epsilon` downward on a fixed grid with `mu = nu`.
pub fn epsilon_study(base: &Scenario, eps: &[f64]) -> Result<StudyReport> {
    if base.params.mu != base.params.nu {
        return Err(Error::InvalidParams("epsilon_study needs mu = nu".into()));
    }
    sweep_report("epsilon", base, eps, true)
}

/// Same sweep for unequal mobilities; reports invariants and trends, makes
/// no convergence claim.
pub fn asymmetric_mobility_study(base: &Scenario, eps: &[f64]) -> Result<StudyReport> {
    sweep_report("asymmetric", base, eps, base.params.mu == base.params.nu)
}

fn sweep_report(name: &str, base: &Scenario, eps: &[f64], assert_convergence: bool) -> Result<StudyReport> {
    let sw = sweep(base, eps)?;
    let mut report = StudyReport::new(name);
    report.levels = eps.to_vec();
    report.errors = sw.distances.clone();
    report.series.insert("h1_distance".into(), sw.distances.clone());
    report.series.insert("dissipation_budget".into(), sw.budgets.clone());

    if assert_convergence {
        let cauchy = sw.distances.windows(2).all(|d| d[1] <= d[0]);
        let strict = sw.distances.windows(2).all(|d| d[1] < d[0]);
        report.checks.push(Check::flag("consecutive distances nonincreasing", cauchy));
        report
            .checks
            .push(Check::flag("consecutive distances strictly decreasing", strict).informational());
        report
            .checks
            .push(Check::at_most("budget spread max/min", budget_spread(&sw.budgets), 2.0));
        report.checks.push(Check::flag(
            "budget shows no increasing trend",
            budget_trend_saturates(&sw.budgets),
        ));
    } else {
        let mut worst_w: f64 = f64::NEG_INFINITY;
        let mut worst_id: f64 = 0.0;
        let mut worst_neg: f64 = 0.0;
        for t in &sw.trajs {
            for r in &t.reports {
                worst_w = worst_w.max(r.max_w);
                worst_id = worst_id.max(r.identity_residual);
                worst_neg = worst_neg.min(r.min_u1_before_clip).min(r.min_u2_before_clip);
            }
        }
        report
            .checks
            .push(Check::at_most("max w", worst_w, base.model.w_p + base.params.picard_tol));
        report.checks.push(Check::at_most("identity residual", worst_id, 1e-10));
        report
            .checks
            .push(Check::at_least("min species before clipping", worst_neg, -10.0 * base.params.linear_tol));
        report.checks.push(Check::flag(
            "dissipation budgets finite",
            sw.budgets.iter().all(|b| b.is_finite()),
        ));
    }
    for (s, t) in sw.scenarios.iter().zip(&sw.trajs) {
        report.records.push(record_trajectory(t, &s.params, &s.grid));
    }
    Ok(report)
}

/// Overlap `int u1 u2` relative to `mass_u1 * mass_u2` along a run.
pub fn segregation_study(scenario: &Scenario, threshold: f64) -> Result<StudyReport> {
    if scenario.grid.dim() != 1 || scenario.params.mu != scenario.params.nu {
        return Err(Error::InvalidParams("segregation_study needs d = 1 and mu = nu".into()));
    }
    let traj = scenario.run()?;
    let records = record_trajectory(&traj, &scenario.params, &scenario.grid);
    let relative: Vec<f64> = records
        .iter()
        .map(|r| {
            let denom = r.mass_u1 * r.mass_u2;
            if denom > 0.0 {
                r.overlap / denom
            } else {
                0.0
            }
        })
        .collect();
    let worst = relative.iter().copied().fold(0.0, f64::max);
    let init = &scenario.initial;
    let disjoint = init.u1.iter().zip(init.u2.iter()).all(|(a, b)| *a == 0.0 || *b == 0.0);

    let mut report = StudyReport::new("segregation");
    report.levels = vec![scenario.params.epsilon];
    report.errors = vec![worst];
    report.series.insert("t".into(), records.iter().map(|r| r.t).collect());
    report.series.insert("relative_overlap".into(), relative);
    report
        .checks
        .push(Check::flag("initial supports disjoint", disjoint).informational());
    report
        .checks
        .push(Check::at_most("max relative overlap", worst, threshold).informational());
    report.records.push(records);
    Ok(report)
}

/// `M0` for the L2 growth bound `1/2 int w^2 (t) <= 1/2 int w^2 (0) exp(2 M0 t)`.
pub fn gronwall_bound(model: &GrowthModel) -> f64 {
    reaction_bound(model, DEFAULT_SAMPLES).map(|b| b.m0).unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_vanishes_outside_support() {
        let p = BarenblattParams::for_limit(2.0, 1.0, 0.5, 0.03, 1);
        let r = p.support_radius(0.0);
        assert_eq!(barenblatt([r * 1.001, 0.0], 0.0, &p), 0.0);
        assert!(barenblatt([r * 0.999, 0.0], 0.0, &p) > 0.0);
    }

    #[test]
    fn peak_decays() {
        for dim in [1, 2] {
            let p = BarenblattParams::for_limit(2.0, 1.0, 0.5, 0.03, dim);
            assert!(p.peak(0.1) < p.peak(0.0));
            assert!(p.peak(1.0) < p.peak(0.1));
        }
    }

    #[test]
    fn zero_mass_is_zero() {
        let p = BarenblattParams::for_limit(2.0, 1.0, 0.0, 0.03, 1);
        assert_eq!(p.peak(0.0), 0.0);
    }

    #[test]
    fn orders_of_exact_halving() {
        let o = observed_orders(&[0.1, 0.05, 0.025], &[0.4, 0.1, 0.025]);
        assert!((o[0] - 2.0).abs() < 1e-12 && (o[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn levels_must_decrease() {
        assert!(check_levels_decreasing(&[1e-1, 1e-2]).is_ok());
        assert!(check_levels_decreasing(&[1e-2, 1e-1]).is_err());
        assert!(check_levels_decreasing(&[]).is_err());
    }

    #[test]
    fn trend_rule() {
        assert!(budget_trend_saturates(&[1.0, 1.2, 1.25, 1.26]));
        assert!(budget_trend_saturates(&[1.0, 0.9, 0.85]));
        assert!(!budget_trend_saturates(&[1.0, 1.1, 1.3]));
    }
}

//! Backward-Euler time stepping of the regularized system with a Picard
//! sweep over frozen coefficients.
//!
//! One sweep, given an iterate `(omega, v1, v2)` and the previous time level:
//!
//! 1. truncate the iterate to `[0, w_p]` and freeze the face mobilities and
//!    the reaction terms;
//! 2. solve the linear `w` equation (mobility `mu m1 + nu m2` plus `epsilon`);
//! 3. solve for `u1`, then `u2`, with the `w` transport from step 2 as a
//!    source and implicit `epsilon` diffusion.
//!
//! Steps 2 and 3 share the same face mobilities, so the sum of the species
//! equations is the `w` equation and `w - u1 - u2` only sees solver noise.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{face_mobilities, FaceMobility, Field, Grid};
use crate::linalg::{LinearSystem, SolveStats};
use crate::model::{reaction_rates, GrowthModel, Params};

/// Densities of both species, the total density and the time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    pub u1: Field,
    pub u2: Field,
    pub w: Field,
    pub t: f64,
}

impl State {
    /// State with `w = u1 + u2`.
    pub fn from_species(u1: Field, u2: Field, t: f64) -> Self {
        let w = u1.zip_map(&u2, |a, b| a + b);
        Self { u1, u2, w, t }
    }

    /// Max-norm of `w - (u1 + u2)`.
    pub fn identity_residual(&self) -> f64 {
        self.w
            .iter()
            .zip(self.u1.iter().zip(self.u2.iter()))
            .map(|(w, (a, b))| (w - (a + b)).abs())
            .fold(0.0, f64::max)
    }

    /// Nonnegative species and `w <= w_p` everywhere.
    pub fn check_admissible(&self, model: &GrowthModel) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.u1.is_finite() && self.u2.is_finite() && self.w.is_finite()) {
            problems.push("non-finite values".to_string());
        }
        for (name, f) in [("u1", &self.u1), ("u2", &self.u2)] {
            if let Some(k) = f.iter().position(|&v| v < 0.0) {
                problems.push(format!("{name} is negative at cell {k} ({})", f[k]));
            }
        }
        if let Some(k) = self.w.iter().position(|&v| v > model.w_p) {
            problems.push(format!(
                "w = {} exceeds w_p = {} at cell {k}",
                self.w[k], model.w_p
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InadmissibleInitialData(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    One,
    Two,
}

/// Per-step solver bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub t: f64,
    pub dt: f64,
    pub picard_iters: usize,
    pub picard_residual: f64,
    pub linear_iters: usize,
    pub max_linear_residual: f64,
    pub identity_residual: f64,
    /// Change of `w - u1 - u2` over this step, max-norm.
    pub identity_increment: f64,
    pub min_u1_before_clip: f64,
    pub min_u2_before_clip: f64,
    pub max_w: f64,
    pub clipped: bool,
    pub floored: bool,
}

/// Coefficients frozen at a Picard iterate.
struct Frozen {
    mobility: FaceMobility,
    r1: Vec<f64>,
    r2: Vec<f64>,
}

impl Frozen {
    fn new(iterate: &State, params: &Params, model: &GrowthModel, grid: &Grid) -> Self {
        let trunc = model.truncation();
        let t1: Vec<f64> = iterate.u1.iter().map(|&v| trunc.apply(v)).collect();
        let t2: Vec<f64> = iterate.u2.iter().map(|&v| trunc.apply(v)).collect();
        let tw: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let mobility = face_mobilities(&t1, &t2, &tw, params, grid);
        let (r1, r2) = t1
            .iter()
            .zip(&t2)
            .zip(iterate.w.iter())
            .map(|((&a, &b), &om)| reaction_rates(a, b, trunc.apply(om), model))
            .unzip();
        Self { mobility, r1, r2 }
    }
}

fn accumulate(total: &mut SolveStats, s: SolveStats) {
    total.iterations += s.iterations;
    total.relative_residual = total.relative_residual.max(s.relative_residual);
}

fn solve_w(
    w_prev: &[f64],
    frozen: &Frozen,
    guess: &[f64],
    dt: f64,
    params: &Params,
    grid: &Grid,
) -> Result<(Field, SolveStats)> {
    let vol = grid.cell_volume();
    let mass = vec![vol / dt; grid.cell_count()];
    let coupling = grid
        .faces()
        .iter()
        .zip(&frozen.mobility.combined)
        .map(|(face, &m)| grid.transmissibility(face.axis) * (params.epsilon + params.gamma * m))
        .collect();
    let rhs = w_prev
        .iter()
        .zip(frozen.r1.iter().zip(&frozen.r2))
        .map(|(&w, (&a, &b))| vol * (w / dt + (a + b)))
        .collect();
    let sys = LinearSystem::new(grid, mass, coupling, rhs);
    let (x, stats) = sys.solve(params.solver, guess, params.linear_tol)?;
    Ok((Field::from_vec(x), stats))
}

#[allow(clippy::too_many_arguments)]
fn solve_species(
    u_prev: &[f64],
    w_new: &[f64],
    frozen: &Frozen,
    species: Species,
    guess: &[f64],
    dt: f64,
    params: &Params,
    grid: &Grid,
) -> Result<(Field, SolveStats)> {
    let vol = grid.cell_volume();
    let (mob, scale, react) = match species {
        Species::One => (&frozen.mobility.species1, params.mu, &frozen.r1),
        Species::Two => (&frozen.mobility.species2, params.nu, &frozen.r2),
    };
    let mut rhs: Vec<f64> = u_prev
        .iter()
        .zip(react)
        .map(|(&u, &r)| vol * (u / dt + r))
        .collect();
    for (face, &m) in grid.faces().iter().zip(mob) {
        let flux = params.gamma * scale * m * grid.transmissibility(face.axis) * (w_new[face.hi] - w_new[face.lo]);
        rhs[face.lo] += flux;
        rhs[face.hi] -= flux;
    }
    let mass = vec![vol / dt; grid.cell_count()];
    let coupling = grid
        .faces()
        .iter()
        .map(|face| grid.transmissibility(face.axis) * params.epsilon)
        .collect();
    let sys = LinearSystem::new(grid, mass, coupling, rhs);
    let (x, stats) = sys.solve(params.solver, guess, params.linear_tol)?;
    Ok((Field::from_vec(x), stats))
}

/// Linear `w` solve with coefficients frozen at `iterate`.
pub fn w_step(
    prev: &State,
    iterate: &State,
    dt: f64,
    params: &Params,
    model: &GrowthModel,
    grid: &Grid,
) -> Result<(Field, SolveStats)> {
    let frozen = Frozen::new(iterate, params, model, grid);
    solve_w(&prev.w, &frozen, &iterate.w, dt, params, grid)
}

/// Linear solve for one species, transported by `w_new` with mobility frozen
/// at `iterate`.
#[allow(clippy::too_many_arguments)]
pub fn species_step(
    u_prev: &Field,
    w_new: &Field,
    iterate: &State,
    dt: f64,
    params: &Params,
    model: &GrowthModel,
    grid: &Grid,
    species: Species,
) -> Result<(Field, SolveStats)> {
    let frozen = Frozen::new(iterate, params, model, grid);
    let guess = match species {
        Species::One => &iterate.u1,
        Species::Two => &iterate.u2,
    };
    solve_species(u_prev, w_new, &frozen, species, guess, dt, params, grid)
}

fn identity_increment(prev: &State, next: &State) -> f64 {
    (0..next.w.len())
        .map(|k| {
            let a = next.w[k] - next.u1[k] - next.u2[k];
            let b = prev.w[k] - prev.u1[k] - prev.u2[k];
            (a - b).abs()
        })
        .fold(0.0, f64::max)
}

/// One backward-Euler step: Picard sweeps from the previous level until the
/// max-norm change of `(w, u1, u2)` drops below `picard_tol`.
pub fn picard_advance(
    prev: &State,
    dt: f64,
    params: &Params,
    model: &GrowthModel,
    grid: &Grid,
) -> Result<(State, StepReport)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParams(format!("time step must be positive, got {dt}")));
    }
    let mut iterate = prev.clone();
    let mut history = Vec::new();
    let mut linear = SolveStats::default();
    let mut converged = false;
    for _ in 0..params.max_picard {
        let frozen = Frozen::new(&iterate, params, model, grid);
        let (w, s) = solve_w(&prev.w, &frozen, &iterate.w, dt, params, grid)?;
        accumulate(&mut linear, s);
        let (u1, s) = solve_species(&prev.u1, &w, &frozen, Species::One, &iterate.u1, dt, params, grid)?;
        accumulate(&mut linear, s);
        let (u2, s) = solve_species(&prev.u2, &w, &frozen, Species::Two, &iterate.u2, dt, params, grid)?;
        accumulate(&mut linear, s);
        let change = w
            .max_abs_diff(&iterate.w)
            .max(u1.max_abs_diff(&iterate.u1))
            .max(u2.max_abs_diff(&iterate.u2));
        history.push(change);
        iterate = State { u1, u2, w, t: prev.t + dt };
        if !change.is_finite() {
            break;
        }
        if change <= params.picard_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PicardDiverged {
            iterations: history.len(),
            last: history.last().copied().unwrap_or(f64::NAN),
            history,
        });
    }

    let mut next = iterate;
    let min_u1 = next.u1.min();
    let min_u2 = next.u2.min();

    let mut floored = false;
    if params.epsilon_floor {
        let floor = params.epsilon;
        for k in 0..next.w.len() {
            if next.w[k] < floor {
                let lift = floor - next.w[k];
                next.w[k] = floor;
                next.u1[k] += lift;
                floored = true;
            }
        }
    }

    let clip_below = -10.0 * params.linear_tol;
    let mut clipped = false;
    for f in [&mut next.u1, &mut next.u2] {
        for v in f.iter_mut() {
            if *v < clip_below {
                *v = 0.0;
                clipped = true;
            }
        }
    }

    let report = StepReport {
        t: next.t,
        dt,
        picard_iters: history.len(),
        picard_residual: *history.last().unwrap(),
        linear_iters: linear.iterations,
        max_linear_residual: linear.relative_residual,
        identity_residual: next.identity_residual(),
        identity_increment: identity_increment(prev, &next),
        min_u1_before_clip: min_u1,
        min_u2_before_clip: min_u2,
        max_w: next.w.max(),
        clipped,
        floored,
    };
    Ok((next, report))
}

/// Fixed step size with recursive halving of failed steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtPolicy {
    pub dt: f64,
    #[serde(default = "DtPolicy::default_halvings")]
    pub max_halvings: usize,
}

impl DtPolicy {
    pub fn fixed(dt: f64) -> Self {
        Self {
            dt,
            max_halvings: Self::default_halvings(),
        }
    }

    fn default_halvings() -> usize {
        5
    }
}

/// States at every completed macro step (index 0 is the initial state) and
/// one report per completed (sub)step.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

/// Applies the `epsilon` lift of `u1` when the floor is enabled. Call on
/// initial data before [`run`] if the caller builds states by hand.
pub fn prepare_initial(state: &State, params: &Params) -> State {
    if params.epsilon_floor {
        let u1 = state.u1.map(|v| v + params.epsilon);
        State::from_species(u1, state.u2.clone(), state.t)
    } else {
        state.clone()
    }
}

struct Stepper<'a> {
    params: &'a Params,
    model: &'a GrowthModel,
    grid: &'a Grid,
    max_halvings: usize,
    clipped_run: usize,
}

impl Stepper<'_> {
    fn advance(
        &mut self,
        state: &State,
        dt: f64,
        depth: usize,
        observer: &mut dyn FnMut(&State, &StepReport),
        reports: &mut Vec<StepReport>,
    ) -> Result<State> {
        match picard_advance(state, dt, self.params, self.model, self.grid) {
            Ok((next, report)) => {
                if report.clipped {
                    self.clipped_run += 1;
                    if self.clipped_run > self.params.max_clipped_steps {
                        return Err(Error::PersistentNegativity {
                            steps: self.clipped_run,
                            t: next.t,
                        });
                    }
                } else {
                    self.clipped_run = 0;
                }
                observer(&next, &report);
                reports.push(report);
                Ok(next)
            }
            Err(e) if depth < self.max_halvings && !matches!(e, Error::InvalidParams(_)) => {
                let half = 0.5 * dt;
                let mid = self.advance(state, half, depth + 1, observer, reports)?;
                let mut end = self.advance(&mid, dt - half, depth + 1, observer, reports)?;
                end.t = state.t + dt;
                Ok(end)
            }
            Err(e) => Err(Error::StepFailed {
                t: state.t,
                source: Box::new(e),
            }),
        }
    }
}

/// Advances `initial` to `t_end`, calling `observer` after every completed
/// (sub)step. Every `store_every`-th macro step and the final state are kept.
#[allow(clippy::too_many_arguments)]
pub fn run_with(
    initial: &State,
    t_end: f64,
    policy: DtPolicy,
    store_every: usize,
    params: &Params,
    model: &GrowthModel,
    grid: &Grid,
    observer: &mut dyn FnMut(&State, &StepReport),
) -> Result<Trajectory> {
    params.validate_for_scheme()?;
    model.validate()?;
    if !(policy.dt > 0.0 && policy.dt.is_finite()) {
        return Err(Error::InvalidParams(format!("dt must be positive, got {}", policy.dt)));
    }
    if !(t_end >= initial.t) {
        return Err(Error::InvalidParams(format!(
            "t_end = {t_end} precedes the initial time {}",
            initial.t
        )));
    }
    for f in [&initial.u1, &initial.u2, &initial.w] {
        if f.len() != grid.cell_count() {
            return Err(Error::InvalidField("state does not match the grid".into()));
        }
    }
    initial.check_admissible(model)?;

    let store_every = store_every.max(1);
    let mut traj = Trajectory {
        states: vec![initial.clone()],
        reports: Vec::new(),
    };
    let mut stepper = Stepper {
        params,
        model,
        grid,
        max_halvings: policy.max_halvings,
        clipped_run: 0,
    };
    let t0 = initial.t;
    let span = t_end - t0;
    let steps = (span / policy.dt - 1e-9).ceil().max(0.0) as usize;
    let mut state = initial.clone();
    for k in 1..=steps {
        let target = if k == steps { t_end } else { t0 + k as f64 * policy.dt };
        let dt = target - state.t;
        let mut next = stepper.advance(&state, dt, 0, observer, &mut traj.reports)?;
        next.t = target;
        if k % store_every == 0 || k == steps {
            traj.states.push(next.clone());
        }
        state = next;
    }
    Ok(traj)
}

/// [`run_with`] keeping every step and without an observer.
pub fn run(
    initial: &State,
    t_end: f64,
    policy: DtPolicy,
    params: &Params,
    model: &GrowthModel,
    grid: &Grid,
) -> Result<Trajectory> {
    run_with(initial, t_end, policy, 1, params, model, grid, &mut |_, _| {})
}

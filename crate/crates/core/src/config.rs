//! TOML run configuration.
//!
//! ```toml
//! [grid]
//! cells = [128]          # one entry per axis; 1 or 2 axes
//! lengths = [1.0]        # default 1.0 per axis
//! origin = [0.0]         # default 0.0 per axis
//!
//! [params]               # every key optional, see `Params::default`
//! gamma = 2.0
//!
//! [model]
//! w_p = 1.0
//! f1 = { kind = "logistic", alpha = 1.0 }   # omitted rates are zero
//!
//! [initial]
//! profile = "two_bumps"  # constant | bump | two_bumps | barenblatt_split
//! u1 = { center = [0.3], radius = 0.1, amplitude = 0.5 }
//! u2 = { center = [0.7], radius = 0.1, amplitude = 0.5 }
//!
//! [time]
//! t_end = 1.0
//! dt = 1e-3
//!
//! [output]               # optional
//! dir = "out"
//! snapshots = 20         # or snapshot_every = <steps> / snapshot_interval = <time>
//!
//! [study]                # optional
//! kind = "none"          # none | pme | epsilon | segregation | asymmetric
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{BarenblattParams, BarenblattSetup, PmeThresholds, Scenario};
use crate::grid::{Field, Grid};
use crate::model::{validate_h1_default, GrowthModel, H1Report, Params};
use crate::scheme::{prepare_initial, DtPolicy, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub params: Params,
    pub model: GrowthModel,
    pub initial: InitialProfile,
    pub time: TimeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub study: StudySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    #[serde(default)]
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub origin: Vec<f64>,
}

impl GridSpec {
    fn fill_defaults(&mut self) {
        let d = self.cells.len();
        if self.lengths.is_empty() {
            self.lengths = vec![1.0; d];
        }
        if self.origin.is_empty() {
            self.origin = vec![0.0; d];
        }
    }

    pub fn build(&self) -> Result<Grid> {
        if self.lengths.len() != self.cells.len() || self.origin.len() != self.cells.len() {
            return Err(Error::InvalidGrid(
                "cells, lengths and origin need one entry per axis".into(),
            ));
        }
        Ok(Grid::new(self.cells.len(), &self.cells, &self.lengths)?.with_origin(&self.origin))
    }

    fn center(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for (k, v) in c.iter_mut().enumerate().take(self.cells.len()) {
            *v = self.origin[k] + 0.5 * self.lengths[k];
        }
        c
    }
}

/// `amplitude * cos^2(pi r / (2 radius))` for `r < radius`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let r = self
            .center
            .iter()
            .enumerate()
            .map(|(k, c)| (x[k] - c).powi(2))
            .sum::<f64>()
            .sqrt();
        if r >= self.radius {
            0.0
        } else {
            self.amplitude * (0.5 * std::f64::consts::PI * r / self.radius).cos().powi(2)
        }
    }

    fn errors(&self, path: &str, dim: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.center.len() != dim {
            errs.push(format!("{path}.center: expected {dim} coordinates, got {}", self.center.len()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            errs.push(format!("{path}.radius: must be positive, got {}", self.radius));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            errs.push(format!("{path}.amplitude: must be nonnegative, got {}", self.amplitude));
        }
        errs
    }
}

fn default_eta() -> f64 {
    1.0
}

/// Named initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Constant {
        u1: f64,
        u2: f64,
    },
    /// `w = background + bump`, split as `u1 = eta w`, `u2 = (1 - eta) w`.
    Bump {
        #[serde(flatten)]
        bump: Bump,
        #[serde(default)]
        background: f64,
        #[serde(default = "default_eta")]
        eta: f64,
    },
    /// One bump per species over per-species backgrounds.
    TwoBumps {
        u1: Bump,
        u2: Bump,
        #[serde(default)]
        background: [f64; 2],
    },
    /// Barenblatt profile of the limit equation at `t0`, split by `eta`.
    /// Centered in the domain unless `center` is given.
    BarenblattSplit {
        mass: f64,
        t0: f64,
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
}

impl InitialProfile {
    fn fill_defaults(&mut self, grid: &GridSpec) {
        if let InitialProfile::BarenblattSplit { center, .. } = self {
            if center.is_empty() {
                *center = grid.center()[..grid.cells.len()].to_vec();
            }
        }
    }

    fn errors(&self, dim: usize) -> Vec<String> {
        let nonneg = |path: &str, v: f64| {
            (!(v >= 0.0 && v.is_finite())).then(|| format!("{path}: must be nonnegative, got {v}"))
        };
        let unit = |v: f64| (!(0.0..=1.0).contains(&v)).then(|| format!("initial.eta: must lie in [0, 1], got {v}"));
        match self {
            InitialProfile::Constant { u1, u2 } => {
                [nonneg("initial.u1", *u1), nonneg("initial.u2", *u2)].into_iter().flatten().collect()
            }
            InitialProfile::Bump { bump, background, eta } => {
                let mut e = bump.errors("initial", dim);
                e.extend(nonneg("initial.background", *background));
                e.extend(unit(*eta));
                e
            }
            InitialProfile::TwoBumps { u1, u2, background } => {
                let mut e = u1.errors("initial.u1", dim);
                e.extend(u2.errors("initial.u2", dim));
                e.extend(nonneg("initial.background[0]", background[0]));
                e.extend(nonneg("initial.background[1]", background[1]));
                e
            }
            InitialProfile::BarenblattSplit { mass, t0, eta, center } => {
                let mut e: Vec<String> = nonneg("initial.mass", *mass).into_iter().collect();
                if !(*t0 > 0.0 && t0.is_finite()) {
                    e.push(format!("initial.t0: must be positive, got {t0}"));
                }
                e.extend(unit(*eta));
                if center.len() != dim {
                    e.push(format!("initial.center: expected {dim} coordinates, got {}", center.len()));
                }
                e
            }
        }
    }

    /// Oracle of a Barenblatt profile, if this is one.
    pub fn barenblatt(&self, params: &Params, dim: usize) -> Option<BarenblattParams> {
        match self {
            InitialProfile::BarenblattSplit { mass, t0, center, .. } => {
                let mut c = [0.0; 2];
                c[..center.len()].copy_from_slice(center);
                Some(BarenblattParams::for_limit(params.gamma, params.mu, *mass, *t0, dim).with_center(c))
            }
            _ => None,
        }
    }

    pub fn build(&self, grid: &Grid, params: &Params) -> State {
        let (u1, u2) = match self {
            InitialProfile::Constant { u1, u2 } => (Field::constant(grid, *u1), Field::constant(grid, *u2)),
            InitialProfile::Bump { bump, background, eta } => {
                let w = Field::from_fn(grid, |x| background + bump.eval(x));
                (w.map(|v| eta * v), w.map(|v| (1.0 - eta) * v))
            }
            InitialProfile::TwoBumps { u1, u2, background } => (
                Field::from_fn(grid, |x| background[0] + u1.eval(x)),
                Field::from_fn(grid, |x| background[1] + u2.eval(x)),
            ),
            InitialProfile::BarenblattSplit { eta, .. } => {
                let p = self.barenblatt(params, grid.dim()).expect("barenblatt profile");
                let w = Field::from_fn(grid, |x| crate::experiments::barenblatt(x, 0.0, &p));
                let u1 = w.map(|v| eta * v);
                let u2 = w.zip_map(&u1, |a, b| a - b);
                (u1, u2)
            }
        };
        State::from_species(u1, u2, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_halvings")]
    pub max_halvings: usize,
}

fn default_halvings() -> usize {
    DtPolicy::fixed(1.0).max_halvings
}

impl TimeSpec {
    pub fn policy(&self) -> DtPolicy {
        DtPolicy {
            dt: self.dt,
            max_halvings: self.max_halvings,
        }
    }
}

/// When to write field snapshots. At most one of the three keys may be set;
/// with none, 20 evenly spaced snapshots are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_interval: Option<f64>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            snapshots: None,
            snapshot_every: None,
            snapshot_interval: None,
        }
    }
}

pub const DEFAULT_SNAPSHOTS: usize = 20;

/// Resolved snapshot cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cadence {
    Count(usize),
    EverySteps(usize),
    Interval(f64),
}

impl OutputSpec {
    fn fill_defaults(&mut self) {
        if self.snapshots.is_none() && self.snapshot_every.is_none() && self.snapshot_interval.is_none() {
            self.snapshots = Some(DEFAULT_SNAPSHOTS);
        }
    }

    pub fn cadence(&self) -> Cadence {
        match (self.snapshots, self.snapshot_every, self.snapshot_interval) {
            (_, Some(k), _) => Cadence::EverySteps(k),
            (_, _, Some(dt)) => Cadence::Interval(dt),
            (n, _, _) => Cadence::Count(n.unwrap_or(DEFAULT_SNAPSHOTS)),
        }
    }

    fn errors(&self) -> Vec<String> {
        let set = [
            self.snapshots.is_some(),
            self.snapshot_every.is_some(),
            self.snapshot_interval.is_some(),
        ];
        let mut e = Vec::new();
        if set.iter().filter(|s| **s).count() > 1 {
            e.push("output: set at most one of snapshots, snapshot_every, snapshot_interval".into());
        }
        if self.snapshots == Some(0) || self.snapshot_every == Some(0) {
            e.push("output: snapshot counts must be at least 1".into());
        }
        if let Some(i) = self.snapshot_interval {
            if !(i > 0.0 && i.is_finite()) {
                e.push(format!("output.snapshot_interval: must be positive, got {i}"));
            }
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    #[default]
    None,
    Pme,
    Epsilon,
    Segregation,
    Asymmetric,
}

impl std::str::FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "pme" => Ok(Self::Pme),
            "epsilon" => Ok(Self::Epsilon),
            "segregation" => Ok(Self::Segregation),
            "asymmetric" => Ok(Self::Asymmetric),
            other => Err(format!(
                "unknown study '{other}' (expected none, pme, epsilon, segregation or asymmetric)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySpec {
    pub kind: StudyKind,
    /// Cells per axis of each refinement level (`pme`); defaults to the
    /// configured grid and three doublings.
    pub levels: Vec<usize>,
    /// Decreasing `epsilon` values (`epsilon`, `asymmetric`).
    pub epsilons: Vec<f64>,
    pub overlap_threshold: f64,
    /// Second species split compared against `eta = 1` (`pme`).
    pub split_eta: f64,
    pub min_order: f64,
    pub max_final_error: f64,
}

impl Default for StudySpec {
    fn default() -> Self {
        let pme = PmeThresholds::default();
        Self {
            kind: StudyKind::None,
            levels: Vec::new(),
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            overlap_threshold: 1e-6,
            split_eta: 0.3,
            min_order: pme.min_order,
            max_final_error: pme.max_final_error,
        }
    }
}

impl RunConfig {
    fn fill_defaults(&mut self) {
        self.grid.fill_defaults();
        self.initial.fill_defaults(&self.grid);
        self.output.fill_defaults();
        if self.study.levels.is_empty() {
            if let Some(&n) = self.grid.cells.first() {
                self.study.levels = (0..4).map(|k| n << k).collect();
            }
        }
    }

    /// Every validation failure, each prefixed by its key path.
    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let grid = match self.grid.build() {
            Ok(g) => Some(g),
            Err(e) => {
                errs.push(format!("grid: {e}"));
                None
            }
        };
        errs.extend(self.params.range_errors().into_iter().map(|m| format!("params: {m}")));
        if self.params.epsilon <= 0.0 {
            errs.push("params.epsilon: the regularized scheme needs epsilon > 0".into());
        }
        if let Err(e) = self.model.validate() {
            errs.push(format!("model: {e}"));
        }
        if !(self.time.t_end > 0.0 && self.time.t_end.is_finite()) {
            errs.push(format!("time.t_end: must be positive, got {}", self.time.t_end));
        }
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) {
            errs.push(format!("time.dt: must be positive, got {}", self.time.dt));
        }
        errs.extend(self.output.errors());
        errs.extend(self.study_errors());

        let initial_errs = self.initial.errors(self.grid.cells.len());
        let initial_ok = initial_errs.is_empty();
        errs.extend(initial_errs);
        if let (Some(grid), true, true) = (grid, initial_ok, self.params.gamma > 1.0 && self.params.mu > 0.0) {
            if self.model.w_p > 0.0 {
                let state = prepare_initial(&self.initial.build(&grid, &self.params), &self.params);
                if let Err(e) = state.check_admissible(&self.model) {
                    errs.push(format!("initial: {e}"));
                }
            }
        }
        errs
    }

    fn study_errors(&self) -> Vec<String> {
        let s = &self.study;
        let mut e = Vec::new();
        match s.kind {
            StudyKind::None => {}
            StudyKind::Pme => {
                if !matches!(self.initial, InitialProfile::BarenblattSplit { .. }) {
                    e.push("study: pme needs initial.profile = \"barenblatt_split\"".into());
                }
                if !self.model.is_inert() {
                    e.push("study: pme needs all growth rates zero".into());
                }
                if self.params.mu != self.params.nu {
                    e.push("study: pme needs mu = nu".into());
                }
                if self.grid.lengths.windows(2).any(|l| l[0] != l[1]) || self.grid.cells.windows(2).any(|c| c[0] != c[1]) {
                    e.push("study: pme needs a square domain with equal cells per axis".into());
                }
                if let InitialProfile::BarenblattSplit { center, .. } = &self.initial {
                    if center[..] != self.grid.center()[..self.grid.cells.len()] {
                        e.push("study: pme needs the profile centered in the domain".into());
                    }
                }
                if s.levels.is_empty() || s.levels.windows(2).any(|l| l[1] <= l[0]) || s.levels[0] < 2 {
                    e.push("study.levels: must be strictly increasing, each at least 2".into());
                }
                if !(0.0..=1.0).contains(&s.split_eta) {
                    e.push(format!("study.split_eta: must lie in [0, 1], got {}", s.split_eta));
                }
            }
            StudyKind::Epsilon | StudyKind::Asymmetric => {
                if s.epsilons.is_empty()
                    || s.epsilons.iter().any(|v| !(*v > 0.0))
                    || s.epsilons.windows(2).any(|v| v[1] >= v[0])
                {
                    e.push("study.epsilons: must be positive and strictly decreasing".into());
                }
                if s.kind == StudyKind::Epsilon && self.params.mu != self.params.nu {
                    e.push("study: epsilon needs mu = nu (use asymmetric otherwise)".into());
                }
            }
            StudyKind::Segregation => {
                if self.grid.cells.len() != 1 {
                    e.push("study: segregation needs a 1D grid".into());
                }
                if self.params.mu != self.params.nu {
                    e.push("study: segregation needs mu = nu".into());
                }
                if !(s.overlap_threshold > 0.0) {
                    e.push("study.overlap_threshold: must be positive".into());
                }
            }
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Parses, fills defaults and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(vec![format!("{path}: {}", inner.message().trim())])
        })?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective configuration with defaults expanded.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let grid = self.build_grid()?;
        let initial = self.initial.build(&grid, &self.params);
        Ok(Scenario {
            grid,
            params: self.params.clone(),
            model: self.model.clone(),
            initial,
            t_end: self.time.t_end,
            policy: self.time.policy(),
        })
    }

    /// Barenblatt setup of a `pme` study: `dt` scales with `h` from the
    /// configured base grid.
    pub fn barenblatt_setup(&self) -> Option<BarenblattSetup> {
        let InitialProfile::BarenblattSplit { mass, t0, eta, center } = &self.initial else {
            return None;
        };
        let mut c = [0.0; 2];
        c[..center.len()].copy_from_slice(center);
        let h = self.grid.lengths[0] / self.grid.cells[0] as f64;
        Some(BarenblattSetup {
            dim: self.grid.cells.len(),
            gamma: self.params.gamma,
            mu: self.params.mu,
            mass: *mass,
            t0: *t0,
            t_end: self.time.t_end,
            half_width: 0.5 * self.grid.lengths[0],
            center: c,
            eta: *eta,
            w_p: self.model.w_p,
            dt_per_h: self.time.dt / h,
            picard_tol: self.params.picard_tol,
        })
    }

    pub fn pme_thresholds(&self) -> PmeThresholds {
        PmeThresholds {
            min_order: self.study.min_order,
            max_final_error: self.study.max_final_error,
            ..PmeThresholds::default()
        }
    }

    /// (H1) is reported, not enforced: a failing model still runs.
    pub fn h1_report(&self) -> H1Report {
        validate_h1_default(&self.model)
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text)
}

//! Executes a [`RunConfig`] and writes its run directory:
//!
//! | file              | content                                              |
//! |-------------------|------------------------------------------------------|
//! | `config.toml`     | effective configuration, defaults expanded            |
//! | `summary.json`    | status, invariant checks, study results (no clocks)   |
//! | `timing.json`     | wall-clock time of the run                            |
//! | `diagnostics.csv` | one [`DiagnosticsRecord`] per step                    |
//! | `steps.jsonl`     | one [`StepReport`] per (sub)step                      |
//! | `snapshots/`      | `index.csv` plus `{u1,u2,w}_NNNN.csv` field dumps     |
//!
//! Studies replace the last three with `<study>.csv` (levels, errors,
//! orders), `series/<study>_<name>.csv` and per-level diagnostics in
//! `levels/<study>_NN.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{Cadence, RunConfig, StudyKind};
use crate::diagnostics::{self, record, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::experiments::{
    asymmetric_mobility_study, epsilon_study, gronwall_bound, pme_validation, segregation_study, split_invariance,
    Check, StudyReport,
};
use crate::grid::Grid;
use crate::model::H1Report;
use crate::scheme::{State, StepReport};

pub const SUMMARY_SCHEMA: &str = "crossdiff.summary";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// An invariant check failed or the run could not be completed.
    InvariantViolation,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub schema_version: u32,
    pub mode: StudyKind,
    pub status: Status,
    /// Names of the failed checks.
    pub violations: Vec<String>,
    /// Step failure message, if the run stopped early.
    pub error: Option<String>,
    pub h1: H1Report,
    pub m0: f64,
    pub steps: usize,
    pub t_final: f64,
    pub invariants: Vec<Check>,
    pub final_diagnostics: Option<DiagnosticsRecord>,
    pub studies: Vec<StudyReport>,
}

impl Summary {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            schema: SUMMARY_SCHEMA,
            schema_version: SCHEMA_VERSION,
            mode: cfg.study.kind,
            status: Status::Ok,
            violations: Vec::new(),
            error: None,
            h1: cfg.h1_report(),
            m0: gronwall_bound(&cfg.model),
            steps: 0,
            t_final: 0.0,
            invariants: Vec::new(),
            final_diagnostics: None,
            studies: Vec::new(),
        }
    }

    fn fail(&mut self, name: &str) {
        self.status = Status::InvariantViolation;
        if !self.violations.iter().any(|v| v == name) {
            self.violations.push(name.to_string());
        }
    }

    fn settle(&mut self) {
        let failed: Vec<String> = self
            .invariants
            .iter()
            .chain(self.studies.iter().flat_map(|s| s.checks.iter()))
            .filter(|c| c.enforced && !c.passed)
            .map(|c| c.name.clone())
            .collect();
        for name in failed {
            self.fail(&name);
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Ok
    }
}

/// Maps a step failure to the invariant it breaks.
fn failure_name(e: &Error) -> &'static str {
    match e {
        Error::StepFailed { source, .. } => failure_name(source),
        Error::PersistentNegativity { .. } => "nonnegativity",
        Error::PicardDiverged { .. } => "picard_convergence",
        Error::LinearSolver { .. } => "linear_solver_convergence",
        _ => "step_failure",
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for study fan-out; defaults to the rayon default.
    pub workers: Option<usize>,
}

/// Runs `cfg`, writes every output file and returns the summary. `Err` is
/// reserved for I/O and setup problems; failed checks and step failures are
/// reported through [`Summary::status`].
pub fn execute(cfg: &RunConfig, opts: &RunOptions) -> Result<Summary> {
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir)?;
    let mut effective = cfg.clone();
    effective.output.dir = dir.clone();
    fs::write(dir.join("config.toml"), effective.to_toml_string())?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;

    let started = Instant::now();
    let mut summary = Summary::new(cfg);
    pool.install(|| match cfg.study.kind {
        StudyKind::None => simulate(cfg, &dir, &mut summary),
        kind => study(cfg, kind, &dir, &mut summary),
    })?;
    summary.settle();

    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    let timing = serde_json::json!({ "wall_seconds": started.elapsed().as_secs_f64() });
    fs::write(dir.join("timing.json"), timing.to_string() + "\n")?;
    log::info!("wrote {}", dir.display());
    Ok(summary)
}

/// Decides which observed states become snapshots.
struct SnapshotPlan {
    cadence: Cadence,
    t0: f64,
    t_end: f64,
    next: usize,
    steps: usize,
}

impl SnapshotPlan {
    fn target(&self, j: usize) -> f64 {
        match self.cadence {
            Cadence::Count(n) => self.t0 + (self.t_end - self.t0) * j as f64 / n as f64,
            Cadence::Interval(dt) => self.t0 + dt * j as f64,
            Cadence::EverySteps(_) => f64::INFINITY,
        }
    }

    /// Whether the state at `t` after `steps` observed steps is due.
    fn due(&mut self, t: f64, is_last: bool) -> bool {
        let slack = 1e-9 * (self.t_end - self.t0).abs().max(1.0);
        let due = match self.cadence {
            Cadence::EverySteps(k) => self.steps % k == 0,
            _ => {
                let mut hit = false;
                while self.target(self.next) <= t + slack {
                    self.next += 1;
                    hit = true;
                }
                hit
            }
        };
        due || is_last
    }
}

struct SnapshotWriter {
    dir: PathBuf,
    index: BufWriter<File>,
    count: usize,
}

impl SnapshotWriter {
    fn new(dir: &Path) -> Result<Self> {
        let dir = dir.join("snapshots");
        fs::create_dir_all(&dir)?;
        let mut index = BufWriter::new(File::create(dir.join("index.csv"))?);
        writeln!(index, "snapshot,step,t")?;
        Ok(Self { dir, index, count: 0 })
    }

    fn write(&mut self, state: &State, step: usize, grid: &Grid) -> Result<()> {
        let k = self.count;
        for (name, field) in [("u1", &state.u1), ("u2", &state.u2), ("w", &state.w)] {
            let f = BufWriter::new(File::create(self.dir.join(format!("{name}_{k:04}.csv")))?);
            field.write_csv(grid, f)?;
        }
        writeln!(self.index, "{k},{step},{:.16e}", state.t)?;
        self.count += 1;
        Ok(())
    }
}

fn simulate(cfg: &RunConfig, dir: &Path, summary: &mut Summary) -> Result<()> {
    let scenario = cfg.scenario()?;
    let grid = &scenario.grid;
    let params = &scenario.params;
    let initial = crate::scheme::prepare_initial(&scenario.initial, params);

    let mut diag = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
    writeln!(diag, "{}", DiagnosticsRecord::CSV_HEADER)?;
    let mut steps_log = BufWriter::new(File::create(dir.join("steps.jsonl"))?);
    let mut snaps = SnapshotWriter::new(dir)?;
    let mut plan = SnapshotPlan {
        cadence: cfg.output.cadence(),
        t0: initial.t,
        t_end: scenario.t_end,
        next: 0,
        steps: 0,
    };

    let first = record(&initial, params, grid);
    first.write_csv_row(&mut diag)?;
    plan.due(initial.t, false);
    snaps.write(&initial, 0, grid)?;

    let w_p = scenario.model.w_p;
    let m0 = summary.m0;
    let mut tracker = Tracker {
        max_w: initial.w.max(),
        min_u: f64::INFINITY,
        identity: 0.0,
        gronwall_excess: f64::NEG_INFINITY,
        min_w: initial.w.min(),
    };
    let l2_0 = first.l2_w;
    let mut last: Option<DiagnosticsRecord> = Some(first);
    let mut io_error: Option<std::io::Error> = None;
    let mut steps = 0usize;
    let mut t_last = initial.t;

    let result = scenario.run_observed(usize::MAX, &mut |state: &State, rep: &StepReport| {
        steps += 1;
        plan.steps = steps;
        t_last = state.t;
        let rec = record(state, params, grid);
        tracker.observe(rep, &rec, l2_0, m0);
        log::debug!(
            "t = {:.6} picard = {} residual = {:.3e} max w = {:.6}",
            rep.t,
            rep.picard_iters,
            rep.picard_residual,
            rep.max_w
        );
        let is_last = (scenario.t_end - state.t).abs() <= 1e-9 * scenario.t_end.abs().max(1.0);
        let io = (|| -> Result<()> {
            rec.write_csv_row(&mut diag)?;
            serde_json::to_writer(&mut steps_log, rep)?;
            writeln!(steps_log)?;
            if plan.due(state.t, is_last) {
                snaps.write(state, steps, grid)?;
            }
            Ok(())
        })();
        if let Err(e) = io {
            if io_error.is_none() {
                io_error = Some(std::io::Error::other(e.to_string()));
            }
        }
        last = Some(rec);
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    diag.flush()?;
    steps_log.flush()?;
    snaps.index.flush()?;

    summary.steps = steps;
    summary.t_final = t_last;
    summary.final_diagnostics = last;
    if let Err(e) = result {
        log::warn!("run stopped: {e}");
        summary.error = Some(e.to_string());
        summary.fail(failure_name(&e));
    }

    summary.invariants = vec![
        Check::at_most("max_principle", tracker.max_w, w_p + params.picard_tol),
        Check::at_least("nonnegativity", tracker.min_u.min(0.0), -10.0 * params.linear_tol),
        // per-step change of w - u1 - u2, relative to the size of w
        Check::at_most("identity", tracker.identity, 10.0 * params.linear_tol * w_p.max(1.0)),
        Check::at_most("l2_gronwall", tracker.gronwall_excess.max(0.0), 1e-6),
    ];
    if params.epsilon_floor {
        summary.invariants.push(Check::at_least(
            "epsilon_floor",
            tracker.min_w,
            params.epsilon * (1.0 - 1e-12),
        ));
    }
    Ok(())
}

struct Tracker {
    max_w: f64,
    min_u: f64,
    identity: f64,
    gronwall_excess: f64,
    min_w: f64,
}

impl Tracker {
    fn observe(&mut self, rep: &StepReport, rec: &DiagnosticsRecord, l2_0: f64, m0: f64) {
        self.max_w = self.max_w.max(rep.max_w);
        self.min_u = self.min_u.min(rep.min_u1_before_clip).min(rep.min_u2_before_clip);
        self.identity = self.identity.max(rep.identity_increment);
        let allowed = l2_0 * (2.0 * m0 * rec.t).exp();
        self.gronwall_excess = self.gronwall_excess.max(rec.l2_w - allowed);
        self.min_w = self.min_w.min(rec.min_w);
    }
}

fn write_series_csv(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{header}")?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn write_study(report: &StudyReport, dir: &Path, tag: &str) -> Result<()> {
    let orders = report.orders.iter().copied().map(Some);
    let rows = report.levels.iter().enumerate().map(|(k, &level)| {
        let error = report.errors.get(k).copied().unwrap_or(f64::NAN);
        let order = if k == 0 { None } else { orders.clone().nth(k - 1).flatten() };
        vec![k as f64, level, error, order.unwrap_or(f64::NAN)]
    });
    write_series_csv(&dir.join(format!("{tag}.csv")), "level_index,level,error,order", rows)?;

    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir)?;
    for (name, values) in &report.series {
        let rows = values.iter().enumerate().map(|(k, &v)| vec![k as f64, v]);
        write_series_csv(&series_dir.join(format!("{tag}_{name}.csv")), "index,value", rows)?;
    }
    let level_dir = dir.join("levels");
    fs::create_dir_all(&level_dir)?;
    for (k, records) in report.records.iter().enumerate() {
        let f = BufWriter::new(File::create(level_dir.join(format!("{tag}_{k:02}.csv")))?);
        diagnostics::write_csv(records, f)?;
    }
    Ok(())
}

fn study(cfg: &RunConfig, kind: StudyKind, dir: &Path, summary: &mut Summary) -> Result<()> {
    let outcome: Vec<(&str, Result<StudyReport>)> = match kind {
        StudyKind::None => Vec::new(),
        StudyKind::Pme => {
            let setup = cfg
                .barenblatt_setup()
                .ok_or_else(|| Error::Config(vec!["study: pme needs a barenblatt_split profile".into()]))?;
            let base = cfg.grid.cells[0];
            let split = {
                let h = setup.grid(base)?.spacing()[0];
                let etas = [1.0, cfg.study.split_eta];
                split_invariance(&setup, base, h, etas)
            };
            vec![
                ("pme", pme_validation(&setup, &cfg.study.levels, cfg.pme_thresholds())),
                ("split", split),
            ]
        }
        StudyKind::Epsilon => vec![("epsilon", epsilon_study(&cfg.scenario()?, &cfg.study.epsilons))],
        StudyKind::Asymmetric => vec![(
            "asymmetric",
            asymmetric_mobility_study(&cfg.scenario()?, &cfg.study.epsilons),
        )],
        StudyKind::Segregation => vec![(
            "segregation",
            segregation_study(&cfg.scenario()?, cfg.study.overlap_threshold),
        )],
    };
    for (tag, result) in outcome {
        match result {
            Ok(report) => {
                log::info!("{tag}: {}", if report.passed() { "passed" } else { "failed" });
                write_study(&report, dir, tag)?;
                summary.studies.push(report);
            }
            Err(e) => {
                log::warn!("{tag} stopped: {e}");
                summary.error = Some(format!("{tag}: {e}"));
                summary.fail(failure_name(&e));
            }
        }
    }
    Ok(())
}

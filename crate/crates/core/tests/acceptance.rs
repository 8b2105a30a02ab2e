//! Acceptance suite. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p crossdiff --test acceptance -- --nocapture` to see them.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crossdiff::config::RunConfig;
use crossdiff::diagnostics::{cosine_family, record, weak_residual};
use crossdiff::experiments::{
    epsilon_study, gronwall_bound, pme_validation, segregation_study, split_invariance, BarenblattSetup,
    PmeThresholds, Scenario, StudyReport,
};
use crossdiff::model::{quadratic_form_nonneg, reaction_rates, validate_h1_default};
use crossdiff::scheme::prepare_initial;
use crossdiff::State;

fn verdict(id: u32, title: &str, passed: bool, detail: String) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id:>2} {title}: {detail}");
}

fn logistic_config(dim: usize, gamma: f64, mu: f64, extra: &str) -> String {
    let (cells, c1, c2) = if dim == 1 {
        ("[64]", "[0.3]", "[0.65]")
    } else {
        ("[64, 64]", "[0.3, 0.3]", "[0.65, 0.6]")
    };
    format!(
        r#"
[grid]
cells = {cells}

[params]
gamma = {gamma}
mu = {mu}
nu = 1.0
{extra}

[model]
w_p = 1.0
f1 = {{ kind = "logistic", alpha = 4.0 }}
f2 = {{ kind = "logistic", alpha = 2.0 }}
g1 = {{ kind = "logistic", alpha = 2.0 }}
g2 = {{ kind = "logistic", alpha = 4.0 }}

[initial]
profile = "two_bumps"
background = [0.05, 0.05]
u1 = {{ center = {c1}, radius = 0.2, amplitude = 0.5 }}
u2 = {{ center = {c2}, radius = 0.25, amplitude = 0.4 }}

[time]
t_end = 1.0
dt = 2e-3
"#
    )
}

fn scenario(text: &str) -> Scenario {
    RunConfig::from_toml_str(text).unwrap().scenario().unwrap()
}

/// Extremes observed along one matrix run.
#[derive(Debug, Clone)]
struct MatrixRun {
    label: String,
    error: Option<String>,
    h1_valid: bool,
    steps: usize,
    max_w: f64,
    w_p: f64,
    min_u: f64,
    identity: f64,
    /// Largest `1/2 int w^2 (t) - 1/2 int w^2 (0) exp(2 M0 t)`.
    gronwall_excess: f64,
}

fn run_matrix_case(dim: usize, gamma: f64, mu: f64) -> MatrixRun {
    let sc = scenario(&logistic_config(dim, gamma, mu, ""));
    let m0 = gronwall_bound(&sc.model);
    let initial = prepare_initial(&sc.initial, &sc.params);
    let half_l2 = |s: &State| 0.5 * sc.grid.integrate(&s.w.map(|v| v * v));
    let l2_0 = half_l2(&initial);
    let mut out = MatrixRun {
        label: format!("d={dim} gamma={gamma} mu/nu={mu}"),
        error: None,
        h1_valid: validate_h1_default(&sc.model).passed(),
        steps: 0,
        max_w: initial.w.max(),
        w_p: sc.model.w_p,
        min_u: initial.u1.min().min(initial.u2.min()),
        identity: initial.identity_residual(),
        gronwall_excess: f64::NEG_INFINITY,
    };
    let result = sc.run_observed(usize::MAX, &mut |s, rep| {
        out.steps += 1;
        out.max_w = out.max_w.max(rep.max_w).max(s.w.max());
        out.min_u = out.min_u.min(rep.min_u1_before_clip).min(rep.min_u2_before_clip);
        out.identity = out.identity.max(rep.identity_residual);
        let allowed = l2_0 * (2.0 * m0 * s.t).exp();
        out.gronwall_excess = out.gronwall_excess.max(half_l2(s) - allowed);
    });
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    out
}

fn matrix() -> &'static [MatrixRun] {
    static RUNS: OnceLock<Vec<MatrixRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut cases = Vec::new();
        for dim in [1, 2] {
            for gamma in [1.5, 2.0, 3.0] {
                for mu in [1.0, 2.0] {
                    cases.push((dim, gamma, mu));
                }
            }
        }
        cases
            .into_par_iter()
            .map(|(d, g, m)| run_matrix_case(d, g, m))
            .collect()
    })
}

fn matrix_failures(pred: impl Fn(&MatrixRun) -> bool) -> Vec<String> {
    matrix()
        .iter()
        .filter(|r| r.error.is_some() || !r.h1_valid || r.steps != 500 || !pred(r))
        .map(|r| format!("{} ({})", r.label, r.error.as_deref().unwrap_or("bound")))
        .collect()
}

#[test]
fn criterion_01_max_principle() {
    let failures = matrix_failures(|r| r.max_w <= r.w_p + 1e-8);
    let worst = matrix().iter().map(|r| r.max_w - r.w_p).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        1,
        "max principle",
        failures.is_empty(),
        format!("{} runs, max(w) - w_p = {worst:.3e} (bound 1e-8) {failures:?}", matrix().len()),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_02_nonnegativity_and_identity() {
    let failures = matrix_failures(|r| r.min_u >= -1e-10 && r.identity <= 1e-10);
    let min_u = matrix().iter().map(|r| r.min_u).fold(f64::INFINITY, f64::min);
    let identity = matrix().iter().map(|r| r.identity).fold(0.0, f64::max);
    verdict(
        2,
        "nonnegativity and identity",
        failures.is_empty(),
        format!("min u before clip = {min_u:.3e}, max |w - u1 - u2| = {identity:.3e} (bounds 1e-10) {failures:?}"),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

/// Worst relative per-step gap between the mass change and `dt int R`,
/// with `R` evaluated at the end-of-step state.
fn reaction_balance(sc: &Scenario) -> (f64, usize) {
    let trunc = sc.model.truncation();
    let vol = sc.grid.cell_volume();
    let total_reaction = |s: &State| -> f64 {
        (0..sc.grid.cell_count())
            .map(|k| {
                let (r1, r2) = reaction_rates(
                    trunc.apply(s.u1[k]),
                    trunc.apply(s.u2[k]),
                    trunc.apply(s.w[k]),
                    &sc.model,
                );
                vol * (r1 + r2)
            })
            .sum()
    };
    let mut prev_mass = sc.grid.integrate(&prepare_initial(&sc.initial, &sc.params).w);
    let mut worst = 0.0f64;
    let mut steps = 0;
    sc.run_observed(usize::MAX, &mut |s, rep| {
        let mass = sc.grid.integrate(&s.w);
        let expected = rep.dt * total_reaction(s);
        worst = worst.max(((mass - prev_mass) - expected).abs() / expected.abs());
        prev_mass = mass;
        steps += 1;
    })
    .unwrap();
    (worst, steps)
}

#[test]
fn criterion_03_mass_balance() {
    // zero rates, 10^3 steps in 2D
    let inert = r#"
[grid]
cells = [32, 32]

[params]
gamma = 2.0
mu = 2.0
nu = 1.0

[model]
w_p = 1.0

[initial]
profile = "two_bumps"
background = [0.05, 0.05]
u1 = { center = [0.3, 0.3], radius = 0.2, amplitude = 0.5 }
u2 = { center = [0.65, 0.6], radius = 0.25, amplitude = 0.4 }

[time]
t_end = 1.0
dt = 1e-3
"#;
    let sc = scenario(inert);
    let traj = sc.run_observed(usize::MAX, &mut |_, _| {}).unwrap();
    let m0 = sc.grid.integrate(&traj.initial().w);
    let drift = (sc.grid.integrate(&traj.last().w) - m0).abs() / m0;
    let steps = traj.reports.len();

    let mut text = logistic_config(1, 2.0, 2.0, "");
    text = text.replace("t_end = 1.0", "t_end = 0.4");
    let (gap_1d, n1) = reaction_balance(&scenario(&text));
    let mut text = logistic_config(2, 2.0, 2.0, "");
    text = text.replace("t_end = 1.0", "t_end = 0.1");
    let (gap_2d, n2) = reaction_balance(&scenario(&text));

    let passed = steps == 1000 && drift <= 1e-10 && gap_1d <= 1e-8 && gap_2d <= 1e-8;
    verdict(
        3,
        "mass balance",
        passed,
        format!(
            "zero rates: drift {drift:.3e} over {steps} steps (bound 1e-10); \
             rates on: per-step gap {gap_1d:.3e} (1D, {n1} steps), {gap_2d:.3e} (2D, {n2} steps) (bound 1e-8)"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_04_barenblatt_validation() {
    let setup = BarenblattSetup::default();
    let thresholds = PmeThresholds::default();
    let report = pme_validation(&setup, &[128, 256, 512, 1024], thresholds).unwrap();
    let min_order = report.orders.iter().copied().fold(f64::INFINITY, f64::min);
    let final_error = *report.errors.last().unwrap();
    let passed = min_order >= 0.8 && final_error <= 0.02 && report.orders.len() == 3;
    verdict(
        4,
        "Barenblatt limit",
        passed,
        format!(
            "L1 errors {:?}, orders {:?}; min order {min_order:.3} (>= 0.8), final error {final_error:.3e} (<= 0.02)",
            short(&report.errors),
            short(&report.orders)
        ),
    );
    assert!(passed);
    assert!(report.passed());
}

fn short(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:.3e}")).collect()
}

#[test]
fn criterion_05_split_invariance() {
    let setup = BarenblattSetup::default();
    let h = setup.grid(128).unwrap().spacing()[0];
    let report = split_invariance(&setup, 128, h, [1.0, 0.3]).unwrap();
    let diff = report.check("max |w_a - w_b|").unwrap().value;
    let same_times = report.check("same time grid").unwrap().passed;
    let passed = diff <= 1e-9 && same_times;
    verdict(
        5,
        "split invariance",
        passed,
        format!("max |w(eta=1) - w(eta=0.3)| over all steps = {diff:.3e} (bound 1e-9)"),
    );
    assert!(passed);
}

fn epsilon_report() -> &'static StudyReport {
    static REPORT: OnceLock<StudyReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let setup = BarenblattSetup::default();
        let base = setup.scenario(128, 1e-1).unwrap();
        epsilon_study(&base, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap()
    })
}

#[test]
fn criterion_06_epsilon_cauchy() {
    let report = epsilon_report();
    let d = &report.series["h1_distance"];
    let passed = d.len() == 3 && d.windows(2).all(|w| w[1] < w[0]);
    verdict(
        6,
        "epsilon Cauchy",
        passed,
        format!("consecutive L2(0,T;H1) distances of w^(gamma+1): {:?}", short(d)),
    );
    assert!(passed);
}

#[test]
fn criterion_07_dissipation_budget() {
    let report = epsilon_report();
    let b = &report.series["dissipation_budget"];
    let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = b.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max / min;
    let steps: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
    // increments must shrink: the budgets level off instead of growing
    let no_trend = steps.windows(2).all(|w| w[1] <= 0.0 || w[1] < w[0].abs());
    let passed = b.len() == 4 && spread < 2.0 && no_trend;
    verdict(
        7,
        "dissipation budget",
        passed,
        format!(
            "budgets {:?}, max/min = {spread:.3} (< 2), increments {:?} shrink: {no_trend}",
            short(b),
            short(&steps)
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_08_l2_gronwall() {
    let failures = matrix_failures(|r| r.gronwall_excess <= 1e-6);
    let worst = matrix()
        .iter()
        .map(|r| r.gronwall_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        8,
        "L2 Gronwall",
        failures.is_empty(),
        format!("max excess over the bound = {worst:.3e} (allowed 1e-6) {failures:?}"),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

/// Direction pairs `(|xi|^2, xi.eta, |eta|^2)` for random Gaussian `xi, eta`
/// in `R^dim`.
fn direction_pool(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let mut xi = [0.0; 3];
            let mut eta = [0.0; 3];
            for k in 0..dim {
                xi[k] = gaussian(rng);
                eta[k] = gaussian(rng);
            }
            let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            [dot(&xi, &xi), dot(&xi, &eta), dot(&eta, &eta)]
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Most negative value of the form over the pool and the explicit witnesses,
/// relative to `|A||xi|^2 + |B||xi||eta| + |C||eta|^2`.
fn sampled_minimum(a: f64, b: f64, c: f64, pool: &[[f64; 3]]) -> f64 {
    let rel = |[xx, xe, ee]: [f64; 3]| {
        let scale = a.abs() * xx + b.abs() * (xx * ee).sqrt() + c.abs() * ee;
        if scale == 0.0 {
            0.0
        } else {
            (a * xx + b * xe + c * ee) / scale
        }
    };
    let mut worst = pool.iter().map(|&p| rel(p)).fold(f64::INFINITY, f64::min);
    // xi = s eta with |eta| = 1 gives (A s^2 + B s + C)
    let mut witness = |s: f64| worst = worst.min(rel([s * s, s, 1.0]));
    if a != 0.0 {
        witness(-b / (2.0 * a));
    } else if b != 0.0 {
        witness(-b.signum() * (c.abs() + 1.0) / b.abs());
    }
    worst = worst.min(rel([1.0, 0.0, 0.0])).min(rel([0.0, 0.0, 1.0]));
    worst
}

#[test]
fn criterion_09_quadratic_form_oracle() {
    const TRIPLES: usize = 100_000;
    const DIRECTIONS: usize = 10_000;
    const SLACK: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1234);
    let pools: Vec<Vec<[f64; 3]>> = (1..=3).map(|d| direction_pool(&mut rng, d, DIRECTIONS)).collect();
    let mut triples = Vec::with_capacity(TRIPLES);
    for _ in 0..TRIPLES {
        let mut a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-2.0..2.0);
        let mut c: f64 = rng.gen_range(-1.0..1.0);
        let mut b = b;
        match rng.gen_range(0..10) {
            0 => a = 0.0,
            1 => c = 0.0,
            2 => {
                a = a.abs();
                c = c.abs();
                b = b.signum() * 2.0 * (a * c).sqrt();
            }
            3 => {
                a = 0.0;
                b = 0.0;
            }
            _ => {}
        }
        let dim = rng.gen_range(1..=3usize);
        triples.push((a, b, c, dim));
    }
    let outcome: Vec<(f64, f64, f64, usize, bool, f64)> = triples
        .par_iter()
        .map(|&(a, b, c, dim)| {
            let closed = quadratic_form_nonneg(a, b, c);
            let min = sampled_minimum(a, b, c, &pools[dim - 1]);
            (a, b, c, dim, closed, min)
        })
        .collect();
    let mut disagreements = Vec::new();
    let mut boundary = 0usize;
    let mut positive = 0usize;
    for &(a, b, c, dim, closed, min) in &outcome {
        if closed {
            positive += 1;
        }
        let wrong = if closed { min < -SLACK } else { min >= SLACK };
        if !wrong && min.abs() < SLACK {
            boundary += 1;
        }
        if wrong {
            disagreements.push(format!("(A={a:e}, B={b:e}, C={c:e}, d={dim}) min form {min:e}"));
        }
    }
    let passed = disagreements.is_empty();
    verdict(
        9,
        "quadratic-form oracle",
        passed,
        format!(
            "{TRIPLES} triples x {DIRECTIONS} directions, {positive} nonnegative verdicts, \
             {boundary} within the 1e-12 slack, {} disagreements{}",
            disagreements.len(),
            disagreements.first().map(|w| format!("; first witness {w}")).unwrap_or_default()
        ),
    );
    assert!(passed, "{disagreements:?}");
}

#[test]
fn criterion_10_weak_residual() {
    let levels = [32usize, 64, 128, 256];
    let runs: Vec<Vec<f64>> = levels
        .par_iter()
        .map(|&n| {
            let h = 1.0 / n as f64;
            let text = logistic_config(1, 2.0, 2.0, &format!("epsilon = {h:e}"))
                .replace("[64]", &format!("[{n}]"))
                .replace("t_end = 1.0", "t_end = 0.25")
                .replace("dt = 2e-3", &format!("dt = {:e}", h / 4.0));
            let sc = scenario(&text);
            let traj = sc.run().unwrap();
            let tests = cosine_family(&sc.grid, 3);
            weak_residual(&traj, &tests, &sc.params, &sc.model, &sc.grid)
                .into_iter()
                .map(|r| r.residual)
                .collect()
        })
        .collect();
    let count = runs[0].len();
    let mut rows = Vec::new();
    let mut passed = true;
    for j in 0..count {
        let column: Vec<f64> = runs.iter().map(|r| r[j]).collect();
        passed &= column.windows(2).all(|w| w[1] < w[0]);
        rows.push(column);
    }
    let worst: Vec<f64> = (0..levels.len())
        .map(|k| rows.iter().map(|r| r[k]).fold(0.0, f64::max))
        .collect();
    verdict(
        10,
        "weak-form residual",
        passed,
        format!(
            "{count} (test, species) pairs over n = {levels:?}; largest residual per level {:?}",
            short(&worst)
        ),
    );
    assert!(passed, "{rows:?}");
}

fn segregation_config(radius: f64) -> String {
    format!(
        r#"
[grid]
cells = [128]

[params]
gamma = 2.0
epsilon = 1e-4

[model]
w_p = 1.0

[initial]
profile = "two_bumps"
u1 = {{ center = [0.25], radius = {radius}, amplitude = 0.4 }}
u2 = {{ center = [0.75], radius = {radius}, amplitude = 0.4 }}

[time]
t_end = 0.5
dt = 1e-3
"#
    )
}

#[test]
fn criterion_11_segregation() {
    const THRESHOLD: f64 = 1e-6;
    let separated = segregation_study(&scenario(&segregation_config(0.1)), THRESHOLD).unwrap();
    let disjoint = separated.check("initial supports disjoint").unwrap().passed;
    let worst = separated.errors[0];

    // the control only needs its initial overlap
    let control = scenario(&segregation_config(0.3));
    let rec = record(&prepare_initial(&control.initial, &control.params), &control.params, &control.grid);
    let initial_overlap = rec.overlap / (rec.mass_u1 * rec.mass_u2);

    let passed = disjoint && worst < THRESHOLD && initial_overlap > THRESHOLD;
    verdict(
        11,
        "segregation",
        passed,
        format!(
            "disjoint bumps: max relative overlap {worst:.3e} (< 1e-6); \
             overlapping control: {initial_overlap:.3e} at t = 0 (> 1e-6)"
        ),
    );
    assert!(passed);
}

//! Growth-rate model, truncation, reaction terms and parameter ranges.
//!
//! The rate functions `F1, F2, G1, G2` depend only on the total density `w`.
//! `R1 = u1 F1(w) + u2 G1(w)` and `R2 = u1 F2(w) + u2 G2(w)` are the sources of
//! the two species. The admissibility condition on the rates is
//!
//! ```text
//! F = F1 + F2 <= 0  and  G = G1 + G2 <= 0       on [w_p, W_max]
//! min(F1, F2, G1, G2) >= 0                       on [0, w_p)
//! ```
//!
//! and is checked by dense sampling in [`validate_h1`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of samples for rate-function checks.
pub const DEFAULT_SAMPLES: usize = 10_000;

/// Clamp to `[0, w_p]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    w_p: f64,
}

impl Truncation {
    pub fn new(w_p: f64) -> Result<Self> {
        if !(w_p > 0.0 && w_p.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "threshold w_p must be positive and finite, got {w_p}"
            )));
        }
        Ok(Self { w_p })
    }

    pub fn w_p(&self) -> f64 {
        self.w_p
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s < self.w_p {
            s
        } else {
            self.w_p
        }
    }
}

/// Truncation of `s` to `[0, w_p]`; rejects non-positive `w_p`.
pub fn theta_p(s: f64, w_p: f64) -> Result<f64> {
    Ok(Truncation::new(w_p)?.apply(s))
}

/// Built-in family of scalar rate functions of the total density.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateFn {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `alpha * (w_p - w)`.
    Logistic {
        alpha: f64,
    },
    /// Piecewise-linear interpolation through `(w, rate)` nodes, constant
    /// outside the node range. Repeated abscissae encode a jump.
    Tabulated {
        points: Vec<[f64; 2]>,
    },
}

impl RateFn {
    pub fn logistic(alpha: f64) -> Self {
        RateFn::Logistic { alpha }
    }

    #[inline]
    pub fn eval(&self, w: f64, w_p: f64) -> f64 {
        match self {
            RateFn::Zero => 0.0,
            RateFn::Constant { value } => *value,
            RateFn::Logistic { alpha } => alpha * (w_p - w),
            RateFn::Tabulated { points } => interpolate(points, w),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(format!("{name}: {msg}")));
        match self {
            RateFn::Zero => Ok(()),
            RateFn::Constant { value } if !value.is_finite() => bad(format!("non-finite value {value}")),
            RateFn::Logistic { alpha } if !alpha.is_finite() => bad(format!("non-finite alpha {alpha}")),
            RateFn::Tabulated { points } => {
                if points.is_empty() {
                    return bad("tabulated rate needs at least one node".into());
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("tabulated rate has non-finite entries".into());
                }
                if points.windows(2).any(|p| p[1][0] < p[0][0]) {
                    return bad("tabulated abscissae must be nondecreasing".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn interpolate(points: &[[f64; 2]], w: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if w < first[0] {
        return first[1];
    }
    if w >= last[0] {
        return last[1];
    }
    // first segment with w in [x0, x1)
    let k = points.partition_point(|p| p[0] <= w);
    let [x0, y0] = points[k - 1];
    let [x1, y1] = points[k];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (w - x0) / (x1 - x0)
}

/// The four rate functions and the homeostatic threshold density `w_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthModel {
    pub w_p: f64,
    #[serde(default)]
    pub f1: RateFn,
    #[serde(default)]
    pub f2: RateFn,
    #[serde(default)]
    pub g1: RateFn,
    #[serde(default)]
    pub g2: RateFn,
}

impl GrowthModel {
    pub fn new(w_p: f64, f1: RateFn, f2: RateFn, g1: RateFn, g2: RateFn) -> Result<Self> {
        let model = Self { w_p, f1, f2, g1, g2 };
        model.validate()?;
        Ok(model)
    }

    /// All four rates identically zero.
    pub fn inert(w_p: f64) -> Result<Self> {
        Self::new(w_p, RateFn::Zero, RateFn::Zero, RateFn::Zero, RateFn::Zero)
    }

    /// Logistic rates `alpha_k (w_p - w)` with `[a_f1, a_f2, a_g1, a_g2]`.
    pub fn logistic(w_p: f64, alphas: [f64; 4]) -> Result<Self> {
        let [a, b, c, d] = alphas.map(RateFn::logistic);
        Self::new(w_p, a, b, c, d)
    }

    pub fn validate(&self) -> Result<()> {
        Truncation::new(self.w_p)?;
        self.f1.validate("f1")?;
        self.f2.validate("f2")?;
        self.g1.validate("g1")?;
        self.g2.validate("g2")
    }

    pub fn truncation(&self) -> Truncation {
        Truncation { w_p: self.w_p }
    }

    /// `[F1, F2, G1, G2]` at `w`.
    #[inline]
    pub fn rates(&self, w: f64) -> [f64; 4] {
        let p = self.w_p;
        [
            self.f1.eval(w, p),
            self.f2.eval(w, p),
            self.g1.eval(w, p),
            self.g2.eval(w, p),
        ]
    }

    pub fn total_f(&self, w: f64) -> f64 {
        let [f1, f2, _, _] = self.rates(w);
        f1 + f2
    }

    pub fn total_g(&self, w: f64) -> f64 {
        let [_, _, g1, g2] = self.rates(w);
        g1 + g2
    }

    pub fn is_inert(&self) -> bool {
        [&self.f1, &self.f2, &self.g1, &self.g2]
            .iter()
            .all(|r| matches!(r, RateFn::Zero))
    }
}

/// `(R1, R2)` for densities `u1, u2` with rates evaluated at `w`.
#[inline]
pub fn reaction_rates(u1: f64, u2: f64, w: f64, model: &GrowthModel) -> (f64, f64) {
    let [f1, f2, g1, g2] = model.rates(w);
    (u1 * f1 + u2 * g1, u1 * f2 + u2 * g2)
}

/// Outcome of one sampled inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Sample with the largest violation (or the tightest sample when passing).
    pub worst_w: f64,
    /// Signed margin at `worst_w`; negative means violated.
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    pub total_f_nonpositive: InequalityCheck,
    pub total_g_nonpositive: InequalityCheck,
    pub min_rate_nonnegative: InequalityCheck,
    pub continuity: InequalityCheck,
}

impl H1Report {
    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }

    pub fn checks(&self) -> [&InequalityCheck; 4] {
        [
            &self.total_f_nonpositive,
            &self.total_g_nonpositive,
            &self.min_rate_nonnegative,
            &self.continuity,
        ]
    }

    pub fn violations(&self) -> Vec<&InequalityCheck> {
        self.checks().into_iter().filter(|c| !c.passed).collect()
    }
}

fn sample_points(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |k| if k + 1 == n { hi } else { lo + step * k as f64 })
}

/// Track the sample with the smallest margin; ties keep the first.
fn tightest(name: &'static str, samples: impl Iterator<Item = (f64, f64)>) -> InequalityCheck {
    let mut worst = (f64::NAN, f64::INFINITY);
    for (w, margin) in samples {
        if margin < worst.1 {
            worst = (w, margin);
        }
    }
    InequalityCheck {
        name,
        passed: worst.1 >= 0.0,
        worst_w: worst.0,
        worst_margin: worst.1,
    }
}

/// Sampled check of the rate admissibility conditions on `[0, W_max]`.
///
/// `n_samples` points are spread over `[0, W_max]`; `w_p` itself is always
/// sampled. Continuity is judged by refinement: the largest jump between
/// neighbouring samples must shrink when the sampling is doubled.
pub fn validate_h1(model: &GrowthModel, w_max: f64, n_samples: usize) -> Result<H1Report> {
    let w_p = model.w_p;
    if !(w_max > w_p) {
        return Err(Error::InvalidModel(format!(
            "W_max = {w_max} must exceed w_p = {w_p}"
        )));
    }
    if n_samples < 2 {
        return Err(Error::InvalidModel("need at least 2 samples".into()));
    }
    let upper: Vec<f64> = std::iter::once(w_p)
        .chain(sample_points(0.0, w_max, n_samples).filter(|&w| w > w_p))
        .collect();
    let total_f = tightest(
        "F = F1 + F2 <= 0 on [w_p, W_max]",
        upper.iter().map(|&w| (w, -model.total_f(w))),
    );
    let total_g = tightest(
        "G = G1 + G2 <= 0 on [w_p, W_max]",
        upper.iter().map(|&w| (w, -model.total_g(w))),
    );
    let min_rate = tightest(
        "min(F1, F2, G1, G2) >= 0 on [0, w_p)",
        sample_points(0.0, w_max, n_samples)
            .filter(|&w| w < w_p)
            .map(|w| (w, model.rates(w).into_iter().fold(f64::INFINITY, f64::min))),
    );

    let max_jump = |n: usize| -> (f64, f64) {
        let pts: Vec<f64> = sample_points(0.0, w_max, n).collect();
        let mut worst = (0.0, 0.0);
        for pair in pts.windows(2) {
            let (a, b) = (model.rates(pair[0]), model.rates(pair[1]));
            let jump = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if jump > worst.1 {
                worst = (pair[0], jump);
            }
        }
        worst
    };
    let (_, coarse) = max_jump(n_samples);
    let (w_fine, fine) = max_jump(2 * n_samples - 1);
    // Lipschitz pieces halve their jumps; a discontinuity keeps its size.
    let slack = 0.75 * coarse + 1e-12 * (1.0 + coarse);
    let continuity = InequalityCheck {
        name: "F1, F2, G1, G2 continuous (jump shrinks under refinement)",
        passed: fine <= slack,
        worst_w: w_fine,
        worst_margin: slack - fine,
    };

    Ok(H1Report {
        total_f_nonpositive: total_f,
        total_g_nonpositive: total_g,
        min_rate_nonnegative: min_rate,
        continuity,
    })
}

/// [`validate_h1`] with the default sampling on `[0, max(W_max, 2 w_p)]`.
pub fn validate_h1_default(model: &GrowthModel) -> H1Report {
    validate_h1(model, 2.0 * model.w_p, DEFAULT_SAMPLES).expect("default sampling is valid")
}

/// Upper bound `M0` on the net growth rates over `[0, w_p]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReactionBound {
    pub m0: f64,
}

/// `M0 = max{ max_[0,w_p] F, max_[0,w_p] G }` by sampling, floored at zero.
pub fn reaction_bound(model: &GrowthModel, n_samples: usize) -> Result<ReactionBound> {
    if n_samples < 2 {
        return Err(Error::InvalidModel("need at least 2 samples".into()));
    }
    let m0 = sample_points(0.0, model.w_p, n_samples)
        .map(|w| model.total_f(w).max(model.total_g(w)))
        .fold(0.0, f64::max);
    Ok(ReactionBound { m0 })
}

/// Whether `A|xi|^2 + B xi.eta + C|eta|^2 >= 0` for all vectors `xi, eta`.
pub fn quadratic_form_nonneg(a: f64, b: f64, c: f64) -> bool {
    if a < 0.0 || c < 0.0 {
        return false;
    }
    if a == 0.0 {
        // pure C|eta|^2 plus a cross term that can always be made negative
        return b == 0.0;
    }
    b * b <= 4.0 * a * c
}

/// Which linear solver backs the implicit solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Tridiagonal elimination in 1D, preconditioned CG otherwise.
    #[default]
    Auto,
    /// Jacobi-preconditioned conjugate gradients everywhere.
    Cg,
}

/// Mobilities, pressure exponent, regularization and solver tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Max-norm change between Picard sweeps that counts as converged.
    pub picard_tol: f64,
    /// Relative residual for the linear solves.
    pub linear_tol: f64,
    pub max_picard: usize,
    /// Keep `w >= epsilon` by lifting the initial `u1` by `epsilon`.
    pub epsilon_floor: bool,
    pub solver: SolverKind,
    /// Runs fail once this many consecutive steps needed clipping.
    pub max_clipped_steps: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            mu: 1.0,
            nu: 1.0,
            gamma: 2.0,
            epsilon: 1e-3,
            picard_tol: 1e-10,
            linear_tol: 1e-12,
            max_picard: 50,
            epsilon_floor: false,
            solver: SolverKind::Auto,
            max_clipped_steps: 5,
        }
    }
}

impl Params {
    /// Range errors, one message per violated constraint.
    pub fn range_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.mu) {
            errs.push(format!("mu must be positive, got {}", self.mu));
        }
        if !positive(self.nu) {
            errs.push(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            errs.push(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            errs.push(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !positive(self.picard_tol) {
            errs.push(format!("picard_tol must be positive, got {}", self.picard_tol));
        }
        if !positive(self.linear_tol) {
            errs.push(format!("linear_tol must be positive, got {}", self.linear_tol));
        }
        if self.max_picard == 0 {
            errs.push("max_picard must be at least 1".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.range_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(errs.join("; ")))
        }
    }

    /// The regularized scheme additionally needs `epsilon > 0`.
    pub fn validate_for_scheme(&self) -> Result<()> {
        self.validate()?;
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidParams(
                "the regularized scheme needs epsilon > 0".into(),
            ));
        }
        Ok(())
    }

    /// `w` values below this are treated as vacuum in volume fractions.
    pub fn epsilon_floor_value(&self) -> f64 {
        self.epsilon
    }
}

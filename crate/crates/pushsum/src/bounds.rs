//! Stability, optimization and excess-risk bounds for stochastic gradient push.
//!
//! Every bound comes in two flavours: a *direct* evaluator that sums the
//! step-size series term by term, and a *closed* evaluator that applies the
//! common-learning-rate simplifications (`gamma_t = gamma` or `v / (t + 1)`).
//! All long sums use compensated summation.

use std::f64::consts::E;
use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::numeric::CompensatedSum;
use crate::schedule::StepSchedule;

/// Relative slack accepted on `delta <= 1/m`, since `delta` usually comes out
/// of an eigen-solve.
const DELTA_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("invalid bound parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("horizon T = {t} too short, need T >= {min}")]
    HorizonTooShort { t: usize, min: usize },
    #[error("alpha (PL constant) is not set")]
    MissingAlpha,
    #[error("sum of step sizes is zero")]
    ZeroStepSum,
    #[error("degenerate parameters: {0}")]
    Degenerate(&'static str),
}

/// Constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Lipschitz constant of the loss.
    pub g: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Push-Sum consistency constant.
    pub c: f64,
    /// Initial disagreement `(1/m) sum_i ||w_i^0||`.
    pub c_w0: f64,
    /// Radius of the parameter domain.
    pub r: f64,
    /// Smallest stationary weight, in `(0, 1/m]`.
    pub delta: f64,
    /// Second largest eigenvalue modulus of the mixing matrix, in `[0, 1)`.
    pub lambda: f64,
    pub m: usize,
    pub n: usize,
    /// PL constant.
    pub alpha: Option<f64>,
    pub schedule: StepSchedule,
    /// Surrogate for `||w_bar^0 - w*||`; `2r` when unset.
    pub init_dist: Option<f64>,
}

impl BoundParams {
    pub fn validate(&self) -> Result<(), BoundError> {
        let nonneg = [
            ("G", self.g),
            ("L", self.l),
            ("C", self.c),
            ("C_w0", self.c_w0),
            ("r", self.r),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(BoundError::InvalidParam { name, value });
            }
        }
        if self.m == 0 {
            return Err(BoundError::InvalidParam { name: "m", value: 0.0 });
        }
        if self.n == 0 {
            return Err(BoundError::InvalidParam { name: "n", value: 0.0 });
        }
        let max_delta = (1.0 + DELTA_SLACK) / self.m as f64;
        if !(self.delta > 0.0 && self.delta <= max_delta) {
            return Err(BoundError::InvalidParam {
                name: "delta",
                value: self.delta,
            });
        }
        if !(self.lambda >= 0.0 && self.lambda < 1.0) {
            return Err(BoundError::InvalidParam {
                name: "lambda",
                value: self.lambda,
            });
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(BoundError::InvalidParam {
                    name: "alpha",
                    value: alpha,
                });
            }
        }
        if let Some(d) = self.init_dist {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(BoundError::InvalidParam {
                    name: "init_dist",
                    value: d,
                });
            }
        }
        let scale = self.schedule.scale();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(BoundError::InvalidParam {
                name: "step",
                value: scale,
            });
        }
        Ok(())
    }

    pub fn mn(&self) -> f64 {
        self.m as f64 * self.n as f64
    }

    /// `delta * (1 - lambda)`, the common network denominator.
    fn net(&self) -> f64 {
        self.delta * (1.0 - self.lambda)
    }

    pub fn init_distance(&self) -> f64 {
        self.init_dist.unwrap_or(2.0 * self.r)
    }

    pub fn alpha(&self) -> Result<f64, BoundError> {
        self.alpha.ok_or(BoundError::MissingAlpha)
    }

    /// Condition number `L / alpha`.
    pub fn kappa(&self) -> Result<f64, BoundError> {
        Ok(self.l / self.alpha()?)
    }

    /// Expansion factor `1 + L gamma - L gamma / (mn)` of the non-convex recursion.
    pub fn expansion(&self, gamma: f64) -> f64 {
        1.0 + self.l * gamma - self.l * gamma / self.mn()
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }
}

/// The three step-size series `sum gamma_t`, `sum gamma_t^2` and
/// `sum gamma_t lambda^t` over `t = 0..T-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSums {
    pub gamma: f64,
    pub gamma_sq: f64,
    pub gamma_lambda: f64,
}

/// Term-by-term evaluation of the step-size series.
pub fn step_sums(schedule: &StepSchedule, lambda: f64, t: usize) -> StepSums {
    let mut s1 = CompensatedSum::new();
    let mut s2 = CompensatedSum::new();
    let mut s3 = CompensatedSum::new();
    let mut lam_t = 1.0;
    for k in 0..t {
        let g = schedule.gamma(k);
        s1.add(g);
        s2.add(g * g);
        s3.add(g * lam_t);
        lam_t *= lambda;
    }
    StepSums {
        gamma: s1.value(),
        gamma_sq: s2.value(),
        gamma_lambda: s3.value(),
    }
}

/// Geometric-series evaluation of the same sums for a constant step.
pub fn step_sums_geometric(gamma: f64, lambda: f64, t: usize) -> StepSums {
    let tf = t as f64;
    StepSums {
        gamma: gamma * tf,
        gamma_sq: gamma * gamma * tf,
        gamma_lambda: gamma * geometric(lambda, t),
    }
}

/// `sum_{k=0}^{t-1} lambda^k = (1 - lambda^t) / (1 - lambda)`.
fn geometric(lambda: f64, t: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    if lambda == 0.0 {
        return 1.0;
    }
    -(t as f64 * lambda.ln()).exp_m1() / (1.0 - lambda)
}

fn sums_for(p: &BoundParams, t: usize) -> StepSums {
    step_sums(&p.schedule, p.lambda, t)
}

// ---------------------------------------------------------------------------
// Convex stability

/// Convex uniform stability from step-size sums.
pub fn stability_convex_from_sums(p: &BoundParams, s: &StepSums) -> f64 {
    let (g, l, c) = (p.g, p.l, p.c);
    2.0 * c * g * l * p.c_w0 / p.delta * s.gamma_lambda
        + 2.0 * c * g * g * l / p.net() * s.gamma_sq
        + 2.0 * g * g / p.mn() * s.gamma
}

/// Convex uniform stability by direct summation over `t = 0..T-1`.
pub fn stability_bound_convex(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    Ok(stability_convex_from_sums(p, &sums_for(p, t)))
}

/// Closed form of the convex stability bound for the two common schedules.
pub fn stability_bound_convex_closed(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    let (g, l, c, mn) = (p.g, p.l, p.c, p.mn());
    match p.schedule {
        StepSchedule::Constant { gamma } => Ok(2.0 * c * g * l * gamma * p.c_w0 / p.net()
            + (2.0 * c * g * g * l * gamma * gamma / p.net() + 2.0 * g * g * gamma / mn)
                * t as f64),
        StepSchedule::Diminishing { v } => {
            if t < 1 {
                return Err(BoundError::HorizonTooShort { t, min: 1 });
            }
            Ok(2.0 * g * g * v / mn * (t as f64).ln()
                + (2.0 * v * c * g * l * p.c_w0 + 4.0 * c * g * g * l * v * v) / p.net()
                + 2.0 * g * g * v / mn)
        }
    }
}

// ---------------------------------------------------------------------------
// Convex optimization

/// Convex optimization error from step-size sums.
pub fn opt_convex_from_sums(p: &BoundParams, s: &StepSums) -> Result<f64, BoundError> {
    if s.gamma <= 0.0 {
        return Err(BoundError::ZeroStepSum);
    }
    let (g, l, c, r) = (p.g, p.l, p.c, p.r);
    let d0 = p.init_distance();
    Ok(d0 * d0 / (2.0 * s.gamma)
        + 2.0 * r * c * l * p.c_w0 / (p.delta * s.gamma) * s.gamma_lambda
        + (2.0 * r * c * l * g / p.net() + g * g / 2.0) * s.gamma_sq / s.gamma)
}

/// Convex optimization error of the averaged iterate by direct summation.
pub fn opt_bound_convex(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    opt_convex_from_sums(p, &sums_for(p, t))
}

/// Closed form of the convex optimization bound (`1/T` and `1/ln T` shapes).
pub fn opt_bound_convex_closed(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    let (g, l, c, r) = (p.g, p.l, p.c, p.r);
    let d0 = p.init_distance();
    match p.schedule {
        StepSchedule::Constant { gamma } => {
            if t < 1 {
                return Err(BoundError::HorizonTooShort { t, min: 1 });
            }
            Ok(
                (d0 * d0 / (2.0 * gamma) + 2.0 * r * c * l * p.c_w0 / p.net()) / t as f64
                    + 2.0 * c * g * r * l * gamma / p.net()
                    + g * g * gamma / 2.0,
            )
        }
        StepSchedule::Diminishing { v } => {
            if t < 2 {
                return Err(BoundError::HorizonTooShort { t, min: 2 });
            }
            Ok((d0 * d0 / v
                + 4.0 * r * c * l * p.c_w0 / p.net()
                + 8.0 * v * r * c * g * l / p.net()
                + 2.0 * v * g * g)
                / (t as f64).ln())
        }
    }
}

// ---------------------------------------------------------------------------
// Excess risk, convex case

/// `A x + B / x + C` with `x = T` (constant step) or `x = ln T` (diminishing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub log_horizon: bool,
}

/// Early-stopping time and the bound there. `t_star = None` means the
/// minimizer is at infinity (or beyond `u64`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalStop {
    pub t_star: Option<u64>,
    /// Reported bound value at `t_star`.
    pub value: f64,
    /// The bound function evaluated at the returned integer `t_star`.
    pub attained: f64,
}

impl ExcessTerms {
    fn x(&self, t: f64) -> f64 {
        if self.log_horizon {
            t.ln()
        } else {
            t
        }
    }

    pub fn eval(&self, t: u64) -> f64 {
        let x = self.x(t as f64);
        self.a * x + self.b / x + self.c
    }

    fn min_horizon(&self) -> u64 {
        if self.log_horizon {
            2
        } else {
            1
        }
    }

    /// Continuous minimizer `x* = sqrt(B/A)` mapped back to an integer horizon;
    /// floor and ceiling are both tried and the better one is kept.
    pub fn optimal_stop(&self) -> OptimalStop {
        if self.a <= 0.0 {
            return OptimalStop {
                t_star: None,
                value: self.c,
                attained: self.c,
            };
        }
        let x_star = (self.b / self.a).sqrt();
        let t_cont = if self.log_horizon { x_star.exp() } else { x_star };
        let lo = self.min_horizon();
        if !(t_cont < u64::MAX as f64 / 2.0) {
            let value = 2.0 * (self.a * self.b).sqrt() + self.c;
            return OptimalStop {
                t_star: None,
                value,
                attained: value,
            };
        }
        let floor = (t_cont.floor() as u64).max(lo);
        let ceil = (t_cont.ceil() as u64).max(lo);
        let (t_star, value) = [floor, ceil]
            .into_iter()
            .map(|t| (t, self.eval(t)))
            .fold((floor, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            });
        OptimalStop {
            t_star: Some(t_star),
            value,
            attained: value,
        }
    }
}

/// The `A, B, C` decomposition of the convex excess-risk bound.
pub fn excess_convex_terms(p: &BoundParams) -> Result<ExcessTerms, BoundError> {
    p.validate()?;
    let (g, l, c, r, cw, mn, net) = (p.g, p.l, p.c, p.r, p.c_w0, p.mn(), p.net());
    let d0 = p.init_distance();
    Ok(match p.schedule {
        StepSchedule::Constant { gamma } => ExcessTerms {
            a: c * g * g * l * gamma * gamma / net + g * g * gamma / mn,
            b: d0 * d0 / (2.0 * gamma) + 2.0 * r * c * l * cw / net,
            c: c * g * l * gamma * cw / net + 2.0 * r * c * l * g * gamma / net + g * g * gamma / 2.0,
            log_horizon: false,
        },
        StepSchedule::Diminishing { v } => {
            let stab = 4.0 * g * c * l * v * cw / net
                + 8.0 * c * g * g * l * v * v / net
                + 4.0 * g * g * v / mn;
            let opt = d0 * d0 / v
                + 4.0 * r * c * l * cw / net
                + 8.0 * v * r * c * l * g / net
                + 2.0 * v * g * g;
            ExcessTerms {
                a: 2.0 * g * g * v / mn,
                b: stab + opt,
                c: stab,
                log_horizon: true,
            }
        }
    })
}

/// Convex excess-risk bound at horizon `T`.
pub fn excess_convex(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    let terms = excess_convex_terms(p)?;
    let min = terms.min_horizon() as usize;
    if t < min {
        return Err(BoundError::HorizonTooShort { t, min });
    }
    Ok(terms.eval(t as u64))
}

pub fn optimal_stop_convex(p: &BoundParams) -> Result<OptimalStop, BoundError> {
    Ok(excess_convex_terms(p)?.optimal_stop())
}

// ---------------------------------------------------------------------------
// Non-convex stability

/// Minimum over the first-divergence time `t0` and its minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonconvexStability {
    pub value: f64,
    pub t0: usize,
}

/// Which per-step perturbation the non-convex evaluator accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PerturbationForm {
    /// `2CL gamma_t / delta (lambda^t C_w0 + G sum_s lambda^{t-s} gamma_s) + 2G gamma_t/(mn)`.
    Recursion,
    /// `2CL gamma_t lambda^t C_w0/(delta m) + 2GCL gamma_t^2/(delta(1-lambda)) + 2G gamma_t/(mn)`.
    Display,
}

fn nonconvex_stability(p: &BoundParams, t: usize, form: PerturbationForm) -> NonconvexStability {
    let (g, l, c, cw, mn) = (p.g, p.l, p.c, p.c_w0, p.mn());
    // Per-step perturbations b_t.
    let mut b = Vec::with_capacity(t);
    let mut inner = 0.0;
    let mut lam_t = 1.0;
    for k in 0..t {
        let gk = p.schedule.gamma(k);
        let bk = match form {
            PerturbationForm::Recursion => {
                2.0 * c * l * gk / p.delta * (lam_t * cw + g * inner) + 2.0 * g * gk / mn
            }
            PerturbationForm::Display => {
                2.0 * c * l * gk * lam_t * cw / (p.delta * p.m as f64)
                    + 2.0 * g * c * l * gk * gk / p.net()
                    + 2.0 * g * gk / mn
            }
        };
        b.push(bk);
        inner = p.lambda * (inner + gk);
        lam_t *= p.lambda;
    }
    // Suffix sums S_{t0} = sum_{k >= t0} prod_{j=k+1}^{T-1} rho_j b_k.
    let mut suffix = vec![0.0; t + 1];
    let mut acc = CompensatedSum::new();
    let mut prod = 1.0;
    for k in (0..t).rev() {
        acc.add(prod * b[k]);
        suffix[k] = acc.value();
        prod *= p.expansion(p.schedule.gamma(k));
    }
    let t0_max = t.min(p.n);
    let mut best = NonconvexStability {
        value: f64::INFINITY,
        t0: 0,
    };
    for (t0, s) in suffix.iter().enumerate().take(t0_max + 1) {
        let value = t0 as f64 / mn + g * s;
        if value < best.value {
            best = NonconvexStability { value, t0 };
        }
    }
    best
}

/// Non-convex uniform stability from the unrolled one-step recursion, with the
/// exact consensus inner sum `sum_s lambda^{t-s} gamma_s` and `t0` ranging over
/// `0..=min(T, n)`.
pub fn stability_bound_nonconvex(
    p: &BoundParams,
    t: usize,
) -> Result<NonconvexStability, BoundError> {
    p.validate()?;
    if t < 1 {
        return Err(BoundError::HorizonTooShort { t, min: 1 });
    }
    Ok(nonconvex_stability(p, t, PerturbationForm::Recursion))
}

/// Non-convex uniform stability with the per-step perturbation written in its
/// summarized form (`C_w0 / (delta m)` and `gamma_t / (1 - lambda)`).
pub fn stability_bound_nonconvex_display(
    p: &BoundParams,
    t: usize,
) -> Result<NonconvexStability, BoundError> {
    p.validate()?;
    if t < 1 {
        return Err(BoundError::HorizonTooShort { t, min: 1 });
    }
    Ok(nonconvex_stability(p, t, PerturbationForm::Display))
}

/// Exponents `(a, p, q) = (1, 1 + vL, vL) / (2 + vL)` of the diminishing-step
/// non-convex forms.
pub fn nonconvex_exponents(v: f64, l: f64) -> (f64, f64, f64) {
    let denom = 2.0 + v * l;
    (1.0 / denom, (1.0 + v * l) / denom, v * l / denom)
}

/// Closed forms of the non-convex stability bound: exponential envelope for a
/// constant step, polynomial growth for `v / (t + 1)`.
pub fn stability_bound_nonconvex_closed(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    let (g, l, c, cw, mn) = (p.g, p.l, p.c, p.c_w0, p.mn());
    match p.schedule {
        StepSchedule::Constant { gamma } => {
            let pre = 2.0 * g * c * l * gamma * cw / p.net()
                + 4.0 * c * g * g * l * gamma * gamma / p.net()
                + 4.0 * g * g * gamma / mn;
            Ok(pre * p.expansion(gamma).powf(t as f64))
        }
        StepSchedule::Diminishing { v } => {
            let (a, pe, qe) = nonconvex_exponents(v, l);
            let va = v.powf(a);
            let tf = t as f64;
            Ok(4.0 * c * g * va * cw / p.delta * tf.powf(pe)
                + (va + 4.0 * g * g) / mn * tf.powf(pe)
                + 2.0 * c * g * g * va / p.net() * tf.powf(qe))
        }
    }
}

// ---------------------------------------------------------------------------
// PL optimization

/// PL optimization error from step-size sums.
pub fn opt_pl_from_sums(p: &BoundParams, s: &StepSums) -> Result<f64, BoundError> {
    let alpha = p.alpha()?;
    let kappa = p.l / alpha;
    if s.gamma <= 0.0 {
        return Err(BoundError::ZeroStepSum);
    }
    let (g, c, r) = (p.g, p.c, p.r);
    Ok(g * r / (alpha * s.gamma)
        + c * g * kappa * p.c_w0 / (2.0 * p.delta * s.gamma) * s.gamma_lambda
        + pl_floor_coefficient(p, kappa) * s.gamma_sq / s.gamma)
}

/// `C G^2 kappa / (2 delta (1 - lambda)) + G^2 kappa / 4`.
fn pl_floor_coefficient(p: &BoundParams, kappa: f64) -> f64 {
    let g2 = p.g * p.g;
    p.c * g2 * kappa / (2.0 * p.net()) + g2 * kappa / 4.0
}

/// Constant-step optimization floor `(C G^2 kappa / (2 delta (1-lambda)) + G^2 kappa/4) gamma`.
pub fn pl_floor(p: &BoundParams) -> Result<f64, BoundError> {
    let kappa = p.kappa()?;
    Ok(pl_floor_coefficient(p, kappa) * p.schedule.scale())
}

/// PL optimization error of the averaged iterate by direct summation.
pub fn opt_bound_pl(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    p.alpha()?;
    opt_pl_from_sums(p, &sums_for(p, t))
}

/// Closed forms of the PL optimization bound.
pub fn opt_bound_pl_closed(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    let alpha = p.alpha()?;
    let kappa = p.l / alpha;
    let (g, l, c, r, cw) = (p.g, p.l, p.c, p.r, p.c_w0);
    match p.schedule {
        StepSchedule::Constant { gamma } => {
            if t < 1 {
                return Err(BoundError::HorizonTooShort { t, min: 1 });
            }
            Ok(pl_opt_constant_coefficient(p, gamma, alpha, kappa) / t as f64
                + pl_floor_coefficient(p, kappa) * gamma)
        }
        StepSchedule::Diminishing { v } => {
            if t < 2 {
                return Err(BoundError::HorizonTooShort { t, min: 2 });
            }
            Ok(pl_opt_diminishing_coefficient(g, l, c, r, cw, v, alpha, kappa, p.net())
                / (t as f64).ln())
        }
    }
}

/// `G r / (alpha gamma) + C G kappa C_w0 / (2 delta (1 - lambda))`.
fn pl_opt_constant_coefficient(p: &BoundParams, gamma: f64, alpha: f64, kappa: f64) -> f64 {
    p.g * p.r / (alpha * gamma) + p.c * p.g * kappa * p.c_w0 / (2.0 * p.net())
}

#[allow(clippy::too_many_arguments)]
fn pl_opt_diminishing_coefficient(
    g: f64,
    l: f64,
    c: f64,
    r: f64,
    cw: f64,
    v: f64,
    alpha: f64,
    kappa: f64,
    net: f64,
) -> f64 {
    (c * g * kappa * cw + 2.0 * v * c * g * g * l * kappa) / net
        + (2.0 * r * g + v * v * g * g * l) / (v * alpha)
}

// ---------------------------------------------------------------------------
// Excess risk, PL case

/// Constants of the constant-step PL excess bound
/// `C_opt / T + C_stab rho^T / T + floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlConstantTerms {
    pub c_opt: f64,
    pub c_stab: f64,
    pub rho: f64,
    pub floor: f64,
}

impl PlConstantTerms {
    pub fn eval(&self, t: u64) -> f64 {
        let tf = t as f64;
        self.c_opt / tf + self.c_stab * self.rho.powf(tf) / tf + self.floor
    }
}

/// Constants of the diminishing-step PL excess bound
/// `(K_1 T^p + K_2 T^q + K_opt) / ln T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlDiminishingTerms {
    pub k_stab1: f64,
    pub k_stab2: f64,
    pub k_opt: f64,
    pub p: f64,
    pub q: f64,
}

impl PlDiminishingTerms {
    pub fn eval(&self, t: u64) -> f64 {
        let tf = t as f64;
        (self.k_stab1 * tf.powf(self.p) + self.k_stab2 * tf.powf(self.q) + self.k_opt) / tf.ln()
    }

    pub fn k_stab(&self) -> f64 {
        self.k_stab1 + self.k_stab2
    }
}

pub fn excess_pl_constant_terms(p: &BoundParams) -> Result<PlConstantTerms, BoundError> {
    p.validate()?;
    let alpha = p.alpha()?;
    let kappa = p.l / alpha;
    let StepSchedule::Constant { gamma } = p.schedule else {
        return Err(BoundError::Degenerate("constant-step terms need a constant schedule"));
    };
    let (g, l, c, cw, mn, net) = (p.g, p.l, p.c, p.c_w0, p.mn(), p.net());
    let growth = l * gamma * (1.0 - 1.0 / mn);
    if growth <= 0.0 {
        return Err(BoundError::Degenerate("L gamma (1 - 1/(mn)) must be positive"));
    }
    let numer = 2.0 * g * c * l * gamma * cw / net
        + 4.0 * c * g * g * l * gamma * gamma / net
        + 4.0 * g * g * gamma / mn;
    Ok(PlConstantTerms {
        c_opt: pl_opt_constant_coefficient(p, gamma, alpha, kappa),
        c_stab: numer / growth,
        rho: p.expansion(gamma),
        floor: pl_floor_coefficient(p, kappa) * gamma,
    })
}

pub fn excess_pl_diminishing_terms(p: &BoundParams) -> Result<PlDiminishingTerms, BoundError> {
    p.validate()?;
    let alpha = p.alpha()?;
    let kappa = p.l / alpha;
    let StepSchedule::Diminishing { v } = p.schedule else {
        return Err(BoundError::Degenerate("diminishing-step terms need a diminishing schedule"));
    };
    let (g, l, c, r, cw, mn, net) = (p.g, p.l, p.c, p.r, p.c_w0, p.mn(), p.net());
    if g <= 0.0 {
        return Err(BoundError::Degenerate("G must be positive"));
    }
    let (a, pe, qe) = nonconvex_exponents(v, l);
    if qe <= 0.0 {
        return Err(BoundError::Degenerate("v L must be positive"));
    }
    let va = v.powf(a);
    Ok(PlDiminishingTerms {
        k_stab1: 4.0 * g / pe * (4.0 * c * va * cw / p.delta + va / (g * mn) + 4.0 * g / mn),
        k_stab2: 8.0 * g * g * c * va / (qe * net),
        k_opt: pl_opt_diminishing_coefficient(g, l, c, r, cw, v, alpha, kappa, net),
        p: pe,
        q: qe,
    })
}

/// PL excess-risk bound at horizon `T`.
pub fn excess_pl(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    match p.schedule {
        StepSchedule::Constant { .. } => {
            let terms = excess_pl_constant_terms(p)?;
            if t < 1 {
                return Err(BoundError::HorizonTooShort { t, min: 1 });
            }
            Ok(terms.eval(t as u64))
        }
        StepSchedule::Diminishing { .. } => {
            let terms = excess_pl_diminishing_terms(p)?;
            if t < 2 {
                return Err(BoundError::HorizonTooShort { t, min: 2 });
            }
            Ok(terms.eval(t as u64))
        }
    }
}

/// Fallback horizon for the diminishing PL stop when `K_opt / (p K_stab) < e`.
pub const PL_DIMINISHING_FALLBACK_T: u64 = 3;

/// Early stopping for the PL bound.
///
/// Constant step: `T* = ceil(ln(C_opt / C_stab) / ln rho)` (floor also tried),
/// reported value `(1 + e) C_opt ln rho / ln(C_opt / C_stab) + floor`; when
/// `C_opt <= C_stab`, `T* = 1` and the value is the bound at `T = 1`.
///
/// Diminishing step: `T* = (K_opt / (p K_stab ln(K_opt / (p K_stab))))^{1/p}`
/// and value `p K_opt / ln(K_opt / (p K_stab))` when the ratio is at least `e`,
/// otherwise `T* = 3` with the bound evaluated there.
pub fn optimal_stop_pl(p: &BoundParams) -> Result<OptimalStop, BoundError> {
    match p.schedule {
        StepSchedule::Constant { .. } => {
            let terms = excess_pl_constant_terms(p)?;
            let ratio = terms.c_opt / terms.c_stab;
            if !(ratio > 1.0) {
                let v = terms.eval(1);
                return Ok(OptimalStop {
                    t_star: Some(1),
                    value: v,
                    attained: v,
                });
            }
            let mu = terms.rho.ln();
            let t_cont = ratio.ln() / mu;
            if !(t_cont < u64::MAX as f64 / 2.0) {
                return Err(BoundError::Degenerate("stopping time overflows"));
            }
            let (t_star, attained) =
                best_of(&[t_cont.ceil() as u64, t_cont.floor() as u64], 1, |t| {
                    terms.eval(t)
                });
            Ok(OptimalStop {
                t_star: Some(t_star),
                value: (1.0 + E) * terms.c_opt * mu / ratio.ln() + terms.floor,
                attained,
            })
        }
        StepSchedule::Diminishing { .. } => {
            let terms = excess_pl_diminishing_terms(p)?;
            let ratio = terms.k_opt / (terms.p * terms.k_stab());
            if !(ratio >= E) {
                let t = PL_DIMINISHING_FALLBACK_T;
                let v = terms.eval(t);
                return Ok(OptimalStop {
                    t_star: Some(t),
                    value: v,
                    attained: v,
                });
            }
            let t_cont = (ratio / ratio.ln()).powf(1.0 / terms.p);
            let value = terms.p * terms.k_opt / ratio.ln();
            if !(t_cont < u64::MAX as f64 / 2.0) {
                return Ok(OptimalStop {
                    t_star: None,
                    value,
                    attained: value,
                });
            }
            let (t_star, attained) =
                best_of(&[t_cont.ceil() as u64, t_cont.floor() as u64], 2, |t| {
                    terms.eval(t)
                });
            Ok(OptimalStop {
                t_star: Some(t_star),
                value,
                attained,
            })
        }
    }
}

/// Best candidate (ties go to the first listed) after clamping to `min`.
fn best_of(candidates: &[u64], min: u64, f: impl Fn(u64) -> f64) -> (u64, f64) {
    let mut best = (candidates[0].max(min), f64::INFINITY);
    for &c in candidates {
        let t = c.max(min);
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Push-Sum consistency

/// Consensus envelope `(C/delta)(lambda^t C_w0 + G sum_{s<t} lambda^{t-s} gamma_s)`
/// for every `t = 0..=t_max`.
pub fn pushsum_consistency_profile(p: &BoundParams, t_max: usize) -> Result<Vec<f64>, BoundError> {
    p.validate()?;
    let mut out = Vec::with_capacity(t_max + 1);
    let mut inner = 0.0;
    let mut lam_t = 1.0;
    for t in 0..=t_max {
        out.push(p.c / p.delta * (lam_t * p.c_w0 + p.g * inner));
        inner = p.lambda * (inner + p.schedule.gamma(t));
        lam_t *= p.lambda;
    }
    Ok(out)
}

/// Consensus envelope at a single `t`, summed directly.
pub fn pushsum_consistency_bound(p: &BoundParams, t: usize) -> Result<f64, BoundError> {
    p.validate()?;
    let mut inner = CompensatedSum::new();
    for s in 0..t {
        inner.add(p.lambda.powi((t - s) as i32) * p.schedule.gamma(s));
    }
    Ok(p.c / p.delta * (p.lambda.powi(t as i32) * p.c_w0 + p.g * inner.value()))
}

// ---------------------------------------------------------------------------
// Random parameters and sweeps

/// Which horizon constraints a random draw has to respect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawFamily {
    Convex,
    Nonconvex,
    Pl,
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Largest `T` keeping `rho^T` comfortably inside double range.
const MAX_LOG_GROWTH: f64 = 600.0;

/// Random bound parameters and horizon.
///
/// `G, L, C, r` are log-uniform on `[0.1, 10]`, `C_w0` uniform on `[0, 10]`,
/// `lambda` uniform on `[0, 0.999]`, `delta = u/m` with `u` uniform on
/// `[0.05, 1]`, `m` uniform on `1..=64`, `n` uniform on `2..=2000`, the step
/// scale log-uniform on `[1e-4/L, 2/L]`, `alpha` log-uniform on `[0.01L, L]`,
/// `init_dist` uniform on `[0, 2r]` and `T` log-uniform on `[1, 1e4]`
/// (`T >= 2` for diminishing steps). Non-convex draws cap `T ln rho` at 600.
pub fn random_params<R: Rng + ?Sized>(
    rng: &mut R,
    diminishing: bool,
    family: DrawFamily,
) -> (BoundParams, usize) {
    let g = log_uniform(rng, 0.1, 10.0);
    let l = log_uniform(rng, 0.1, 10.0);
    let c = log_uniform(rng, 0.1, 10.0);
    let r = log_uniform(rng, 0.1, 10.0);
    let c_w0 = rng.random::<f64>() * 10.0;
    let lambda = rng.random::<f64>() * 0.999;
    let m = rng.random_range(1..=64usize);
    let n = rng.random_range(2..=2000usize);
    let delta = rng.random_range(0.05..=1.0) / m as f64;
    let scale = log_uniform(rng, 1e-4 / l, 2.0 / l);
    let alpha = log_uniform(rng, 0.01 * l, l);
    let init_dist = rng.random::<f64>() * 2.0 * r;
    let schedule = if diminishing {
        StepSchedule::Diminishing { v: scale }
    } else {
        StepSchedule::Constant { gamma: scale }
    };
    let p = BoundParams {
        g,
        l,
        c,
        c_w0,
        r,
        delta,
        lambda,
        m,
        n,
        alpha: (family == DrawFamily::Pl).then_some(alpha),
        schedule,
        init_dist: Some(init_dist),
    };
    let min_t = if diminishing { 2.0 } else { 1.0 };
    let mut t = log_uniform(rng, min_t, 1e4).round() as usize;
    if family == DrawFamily::Nonconvex {
        let cap = (MAX_LOG_GROWTH / p.expansion(scale).ln()).floor().max(1.0) as usize;
        t = t.min(cap);
    }
    (p, t.max(min_t as usize))
}

/// Every bound evaluated at one `(params, T)`; `None` where a bound does not
/// apply (horizon too short, `alpha` unset, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub params: BoundParams,
    pub t: usize,
    pub stab_convex: Option<f64>,
    pub stab_convex_closed: Option<f64>,
    pub opt_convex: Option<f64>,
    pub opt_convex_closed: Option<f64>,
    pub excess_convex: Option<f64>,
    pub stab_nonconvex: Option<f64>,
    pub stab_nonconvex_display: Option<f64>,
    pub stab_nonconvex_closed: Option<f64>,
    pub opt_pl: Option<f64>,
    pub opt_pl_closed: Option<f64>,
    pub excess_pl: Option<f64>,
    pub consistency: Option<f64>,
}

pub fn evaluate_all(p: &BoundParams, t: usize) -> Result<BoundRow, BoundError> {
    p.validate()?;
    Ok(BoundRow {
        params: *p,
        t,
        stab_convex: stability_bound_convex(p, t).ok(),
        stab_convex_closed: stability_bound_convex_closed(p, t).ok(),
        opt_convex: opt_bound_convex(p, t).ok(),
        opt_convex_closed: opt_bound_convex_closed(p, t).ok(),
        excess_convex: excess_convex(p, t).ok(),
        stab_nonconvex: stability_bound_nonconvex(p, t).ok().map(|s| s.value),
        stab_nonconvex_display: stability_bound_nonconvex_display(p, t).ok().map(|s| s.value),
        stab_nonconvex_closed: stability_bound_nonconvex_closed(p, t).ok(),
        opt_pl: opt_bound_pl(p, t).ok(),
        opt_pl_closed: opt_bound_pl_closed(p, t).ok(),
        excess_pl: excess_pl(p, t).ok(),
        consistency: pushsum_consistency_bound(p, t).ok(),
    })
}

pub const PARAM_HEADER: &str = "G,L,C,C_w0,r,delta,lambda,m,n,alpha,schedule,step,init_dist";

pub const SWEEP_HEADER: &str = "G,L,C,C_w0,r,delta,lambda,m,n,alpha,schedule,step,init_dist,T,\
stab_convex,stab_convex_closed,opt_convex,opt_convex_closed,excess_convex,\
stab_nonconvex,stab_nonconvex_display,stab_nonconvex_closed,opt_pl,opt_pl_closed,excess_pl,consistency";

pub const OPTIMAL_STOP_HEADER: &str =
    "G,L,C,C_w0,r,delta,lambda,m,n,alpha,schedule,step,init_dist,kind,T_star,value,attained";

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn param_cells(p: &BoundParams) -> String {
    let kind = if p.schedule.is_constant() {
        "constant"
    } else {
        "diminishing"
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        p.g,
        p.l,
        p.c,
        p.c_w0,
        p.r,
        p.delta,
        p.lambda,
        p.m,
        p.n,
        opt_cell(p.alpha),
        kind,
        p.schedule.scale(),
        p.init_distance()
    )
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[BoundRow]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for row in rows {
        let values = [
            row.stab_convex,
            row.stab_convex_closed,
            row.opt_convex,
            row.opt_convex_closed,
            row.excess_convex,
            row.stab_nonconvex,
            row.stab_nonconvex_display,
            row.stab_nonconvex_closed,
            row.opt_pl,
            row.opt_pl_closed,
            row.excess_pl,
            row.consistency,
        ];
        let cells: Vec<String> = values.iter().map(|v| opt_cell(*v)).collect();
        writeln!(w, "{},{},{}", param_cells(&row.params), row.t, cells.join(","))?;
    }
    Ok(())
}

/// One optimal-stopping result: `kind` is `convex` or `pl`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalStopRow {
    pub params: BoundParams,
    pub kind: &'static str,
    pub stop: OptimalStop,
}

pub fn write_optimal_stop_csv<W: Write>(mut w: W, rows: &[OptimalStopRow]) -> io::Result<()> {
    writeln!(w, "{OPTIMAL_STOP_HEADER}")?;
    for row in rows {
        let t_star = row
            .stop
            .t_star
            .map(|t| t.to_string())
            .unwrap_or_else(|| "inf".to_string());
        writeln!(
            w,
            "{},{},{},{},{}",
            param_cells(&row.params),
            row.kind,
            t_star,
            row.stop.value,
            row.stop.attained
        )?;
    }
    Ok(())
}

/// Integer minimum of a unimodal function on `[lo, hi]`: scans upward and
/// stops once the function has increased past its running minimum.
pub fn unimodal_integer_min(lo: u64, hi: u64, f: impl Fn(u64) -> f64) -> (u64, f64) {
    let mut best = (lo, f(lo));
    let mut t = lo + 1;
    while t <= hi {
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        } else if v > best.1 {
            break;
        }
        t += 1;
    }
    best
}

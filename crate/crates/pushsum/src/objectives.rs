//! Per-sample losses, gradients and smoothness metadata.
//!
//! Two models are provided:
//!
//! * [`LossModel::LogisticL2`]: `f(w; a, b) = log(1 + exp(-b a.w)) + (mu/2)|w|^2`.
//! * [`LossModel::Quadratic`]: `f(w; a, b) = 1/2 w.A.w - c.w - s b a.w` with
//!   symmetric positive semidefinite `A`, linear term `c` and an optional
//!   per-sample shift of scale `s` (zero by default, which makes the loss and
//!   gradient sample-independent). With `lambda_min(A) = alpha > 0` every
//!   sample loss and every empirical risk satisfies the PL inequality with
//!   parameter `alpha`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::numeric::{dot, norm2};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: model has d = {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("operation requires a quadratic model")]
    NotQuadratic,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Sparse feature vector with strictly ascending 0-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        Self { indices, values }
    }

    pub fn from_dense(x: &[f64]) -> Self {
        let (indices, values) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// One past the largest index, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.iter().max().map_or(0, |&i| i as usize + 1)
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * w[i as usize])
            .sum()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }

    /// `out += c * self`.
    pub fn add_scaled_to(&self, c: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += c * v;
        }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.add_scaled_to(1.0, &mut out);
        out
    }
}

/// One training example with label in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: SparseVector,
    pub label: f64,
}

impl Sample {
    pub fn new(features: SparseVector, label: f64) -> Self {
        Self { features, label }
    }
}

/// Quadratic model `1/2 w.A.w - c.w - s b a.w` with cached spectrum extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    d: usize,
    a: Vec<f64>,
    c: Vec<f64>,
    shift: f64,
    alpha: f64,
    l: f64,
}

impl Quadratic {
    /// `a` is row-major `d x d`, symmetric and positive semidefinite.
    pub fn new(d: usize, a: Vec<f64>, c: Vec<f64>) -> Result<Self, ObjectiveError> {
        if d == 0 {
            return Err(ObjectiveError::InvalidModel("dimension must be positive".into()));
        }
        if a.len() != d * d {
            return Err(ObjectiveError::DimensionMismatch {
                expected: d * d,
                got: a.len(),
            });
        }
        if c.len() != d {
            return Err(ObjectiveError::DimensionMismatch {
                expected: d,
                got: c.len(),
            });
        }
        if a.iter().chain(&c).any(|x| !x.is_finite()) {
            return Err(ObjectiveError::InvalidModel("non-finite coefficient".into()));
        }
        let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * scale {
                    return Err(ObjectiveError::InvalidModel(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &a));
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo < -1e-12 * scale {
            return Err(ObjectiveError::InvalidModel(format!(
                "matrix not positive semidefinite (smallest eigenvalue {lo:e})"
            )));
        }
        Ok(Self {
            d,
            a,
            c,
            shift: 0.0,
            alpha: lo.max(0.0),
            l: hi.max(0.0),
        })
    }

    /// Per-sample shift scale `s`; zero leaves the loss sample-independent.
    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.c
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn smoothness(&self) -> f64 {
        self.l
    }

    fn a_times(&self, w: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.a[i * self.d..(i + 1) * self.d], w);
        }
    }

    /// Value without the per-sample term: `1/2 w.A.w - c.w`.
    pub fn base_value(&self, w: &[f64]) -> f64 {
        let mut aw = vec![0.0; self.d];
        self.a_times(w, &mut aw);
        0.5 * dot(w, &aw) - dot(&self.c, w)
    }

    /// Effective linear term of the empirical risk on `samples`:
    /// `c + s * mean(b a)`.
    pub fn effective_linear(&self, samples: &[Sample]) -> Vec<f64> {
        let mut lin = self.c.clone();
        if self.shift != 0.0 && !samples.is_empty() {
            let scale = self.shift / samples.len() as f64;
            for s in samples {
                s.features.add_scaled_to(scale * s.label, &mut lin);
            }
        }
        lin
    }

    /// Minimizer and minimum of the empirical risk over `samples` (or of the
    /// base quadratic when `samples` is empty). Requires `alpha > 0`.
    pub fn optimum(&self, samples: &[Sample]) -> Result<(Vec<f64>, f64), ObjectiveError> {
        if self.alpha <= 0.0 {
            return Err(ObjectiveError::InvalidModel(
                "optimum needs a positive definite matrix".into(),
            ));
        }
        let lin = self.effective_linear(samples);
        let a = DMatrix::from_row_slice(self.d, self.d, &self.a);
        let chol = a
            .cholesky()
            .ok_or_else(|| ObjectiveError::InvalidModel("cholesky failed".into()))?;
        let w: Vec<f64> = chol.solve(&DVector::from_column_slice(&lin)).iter().copied().collect();
        let mut aw = vec![0.0; self.d];
        self.a_times(&w, &mut aw);
        let value = 0.5 * dot(&w, &aw) - dot(&lin, &w);
        Ok((w, value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossModel {
    LogisticL2 { d: usize, mu: f64 },
    Quadratic(Quadratic),
}

/// Constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessInfo {
    pub g: f64,
    pub l: f64,
    pub alpha: f64,
    pub kappa: Option<f64>,
    pub r: f64,
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, branching on the sign of the argument.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LossModel {
    pub fn logistic(d: usize, mu: f64) -> Result<Self, ObjectiveError> {
        if d == 0 || !(mu >= 0.0 && mu.is_finite()) {
            return Err(ObjectiveError::InvalidModel(format!(
                "logistic model needs d > 0 and finite mu >= 0 (d = {d}, mu = {mu})"
            )));
        }
        Ok(LossModel::LogisticL2 { d, mu })
    }

    pub fn dim(&self) -> usize {
        match self {
            LossModel::LogisticL2 { d, .. } => *d,
            LossModel::Quadratic(q) => q.d,
        }
    }

    fn check(&self, w: &[f64], s: &Sample) -> Result<(), ObjectiveError> {
        let d = self.dim();
        if w.len() != d {
            return Err(ObjectiveError::DimensionMismatch {
                expected: d,
                got: w.len(),
            });
        }
        if s.features.min_dim() > d {
            return Err(ObjectiveError::DimensionMismatch {
                expected: d,
                got: s.features.min_dim(),
            });
        }
        Ok(())
    }

    /// Loss of `w` on sample `s`.
    pub fn loss(&self, w: &[f64], s: &Sample) -> Result<f64, ObjectiveError> {
        self.check(w, s)?;
        Ok(self.loss_unchecked(w, s))
    }

    pub(crate) fn loss_unchecked(&self, w: &[f64], s: &Sample) -> f64 {
        match self {
            LossModel::LogisticL2 { mu, .. } => {
                let margin = s.label * s.features.dot(w);
                softplus(-margin) + 0.5 * mu * dot(w, w)
            }
            LossModel::Quadratic(q) => {
                let extra = if q.shift != 0.0 {
                    q.shift * s.label * s.features.dot(w)
                } else {
                    0.0
                };
                q.base_value(w) - extra
            }
        }
    }

    /// Gradient of the loss of `w` on sample `s`.
    pub fn gradient(&self, w: &[f64], s: &Sample) -> Result<Vec<f64>, ObjectiveError> {
        self.check(w, s)?;
        let mut out = vec![0.0; w.len()];
        self.gradient_into(w, s, &mut out);
        Ok(out)
    }

    /// Writes the gradient into `out` without dimension checks.
    pub(crate) fn gradient_into(&self, w: &[f64], s: &Sample, out: &mut [f64]) {
        match self {
            LossModel::LogisticL2 { mu, .. } => {
                let margin = s.label * s.features.dot(w);
                let coef = -s.label * sigmoid(-margin);
                for (o, x) in out.iter_mut().zip(w) {
                    *o = mu * x;
                }
                s.features.add_scaled_to(coef, out);
            }
            LossModel::Quadratic(q) => {
                q.a_times(w, out);
                for (o, c) in out.iter_mut().zip(&q.c) {
                    *o -= c;
                }
                if q.shift != 0.0 {
                    s.features.add_scaled_to(-q.shift * s.label, out);
                }
            }
        }
    }

    /// Mean loss over `samples` (empirical risk). NaN for an empty set.
    pub fn empirical_risk(&self, w: &[f64], samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return f64::NAN;
        }
        crate::numeric::compensated_sum(samples.iter().map(|s| self.loss_unchecked(w, s)))
            / samples.len() as f64
    }

    /// Risk over several shards, weighting every sample equally.
    pub fn empirical_risk_shards(&self, w: &[f64], shards: &[Vec<Sample>]) -> f64 {
        let count: usize = shards.iter().map(Vec::len).sum();
        if count == 0 {
            return f64::NAN;
        }
        crate::numeric::compensated_sum(
            shards
                .iter()
                .flat_map(|sh| sh.iter().map(|s| self.loss_unchecked(w, s))),
        ) / count as f64
    }
}

/// Smoothness `L`, gradient bound `G` over the ball of radius `r`, PL constant
/// and condition number.
pub fn smoothness_info(
    model: &LossModel,
    dataset: &[Sample],
    r: f64,
) -> Result<SmoothnessInfo, ObjectiveError> {
    if dataset.is_empty() {
        return Err(ObjectiveError::EmptyDataset);
    }
    let max_norm = dataset
        .iter()
        .map(|s| s.features.norm())
        .fold(0.0, f64::max);
    let (g, l, alpha) = match model {
        LossModel::LogisticL2 { mu, .. } => {
            (max_norm + mu * r, 0.25 * max_norm * max_norm + mu, *mu)
        }
        LossModel::Quadratic(q) => {
            let g = q.l * r + norm2(&q.c) + q.shift.abs() * max_norm;
            (g, q.l, q.alpha)
        }
    };
    Ok(SmoothnessInfo {
        g,
        l,
        alpha,
        kappa: (alpha > 0.0).then(|| l / alpha),
        r,
    })
}

/// `(2 alpha (f(w) - f*), |grad f(w)|^2)` for the base quadratic; the PL
/// inequality states `lhs <= rhs`.
pub fn pl_residual(model: &LossModel, w: &[f64]) -> Result<(f64, f64), ObjectiveError> {
    let LossModel::Quadratic(q) = model else {
        return Err(ObjectiveError::NotQuadratic);
    };
    if w.len() != q.d {
        return Err(ObjectiveError::DimensionMismatch {
            expected: q.d,
            got: w.len(),
        });
    }
    let (_, f_star) = q.optimum(&[])?;
    let mut g = vec![0.0; q.d];
    q.a_times(w, &mut g);
    for (gi, ci) in g.iter_mut().zip(&q.c) {
        *gi -= ci;
    }
    let gap = (q.base_value(w) - f_star).max(0.0);
    Ok((2.0 * q.alpha * gap, dot(&g, &g)))
}

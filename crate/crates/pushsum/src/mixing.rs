//! Column-stochastic mixing matrices and their spectral quantities.
//!
//! Entry `(i, j)` is the weight node `i` applies to the message from `j`:
//! `P[i][j] = 1 / |N_j^out|` for `j` in the self-inclusive in-neighborhood of
//! `i`. Every column therefore sums to one and `sum_i x_i` is preserved by `x -> Px`.

use nalgebra::{Complex, DMatrix, Schur};
use thiserror::Error;

use crate::topology::{DirectedGraph, TopologyKind};

/// Power-iteration tolerance on `||P pi - pi||_inf`.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Power-iteration cap.
pub const STATIONARY_MAX_ITER: usize = 1_000_000;
/// Default number of matrix powers scanned for the residual constant.
pub const RESIDUAL_HORIZON: usize = 200;
/// Row-sum tolerance for classifying a matrix as doubly stochastic.
pub const DOUBLY_STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("graph on {0} nodes is not strongly connected")]
    NotStronglyConnected(usize),
    #[error("power iteration stalled at residual {residual:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("eigensolver failed: {0}")]
    Eigen(&'static str),
    #[error("horizon must be at least 1")]
    Horizon,
}

/// Dense column-stochastic matrix with a row-wise sparse view for fast mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    m: usize,
    dense: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Wraps a dense row-major matrix. Columns are not checked here.
    pub fn from_dense(m: usize, dense: Vec<f64>) -> Self {
        assert_eq!(dense.len(), m * m, "dense matrix must be m x m");
        let rows = (0..m)
            .map(|i| {
                (0..m)
                    .filter_map(|j| {
                        let v = dense[i * m + j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self { m, dense, rows }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dense[i * self.m + j]
    }

    /// Nonzero entries of row `i` as `(j, P_ij)`, ascending in `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn dense(&self) -> &[f64] {
        &self.dense
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.m, &self.dense)
    }

    /// `P x` for a scalar per node.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, p)| p * x[j]).sum())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.m)
            .map(|j| (0..self.m).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, p)| p).sum())
            .collect()
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }
}

/// Builds `P[i][j] = 1/|N_j^out|` for every `j` in `N_i^in`.
pub fn build_mixing(g: &DirectedGraph) -> Result<MixingMatrix, MixingError> {
    let m = g.m();
    if !g.is_strongly_connected() {
        return Err(MixingError::NotStronglyConnected(m));
    }
    let out_deg = g.out_degrees();
    let mut dense = vec![0.0; m * m];
    for j in 0..m {
        let w = 1.0 / (out_deg[j] + 1) as f64;
        dense[j * m + j] = w;
    }
    for (j, i) in g.edges() {
        dense[i * m + j] = 1.0 / (out_deg[j] + 1) as f64;
    }
    Ok(MixingMatrix::from_dense(m, dense))
}

/// Stationary distribution by power iteration from the uniform vector.
///
/// Iteration continues past `tol` while the residual keeps improving so that
/// slowly mixing matrices still reach near machine precision.
pub fn stationary_distribution(p: &MixingMatrix, tol: f64) -> Result<Vec<f64>, MixingError> {
    let m = p.m();
    let mut pi = vec![1.0 / m as f64; m];
    let mut best = f64::INFINITY;
    let mut best_pi = pi.clone();
    let mut since_best = 0usize;
    for it in 0..STATIONARY_MAX_ITER {
        let mut next = p.apply(&pi);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let residual = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < best {
            best = residual;
            best_pi.clone_from(&pi);
            since_best = 0;
        } else {
            since_best += 1;
        }
        pi = next;
        if residual == 0.0 || (best < tol && (residual < tol * 1e-4 || since_best > 1000)) {
            return Ok(best_pi);
        }
        if it + 1 == STATIONARY_MAX_ITER {
            break;
        }
    }
    if best < tol {
        Ok(best_pi)
    } else {
        Err(MixingError::NonConvergence {
            iterations: STATIONARY_MAX_ITER,
            residual: best,
        })
    }
}

/// Stationary distribution from the null space of `P - I` via a dense SVD.
pub fn stationary_distribution_dense(p: &MixingMatrix) -> Result<Vec<f64>, MixingError> {
    let m = p.m();
    let a = p.to_nalgebra() - DMatrix::<f64>::identity(m, m);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(MixingError::Eigen("missing right singular vectors"))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(MixingError::Eigen("empty spectrum"))?;
    let v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let s: f64 = v.iter().sum();
    if s == 0.0 || !s.is_finite() {
        return Err(MixingError::Eigen("null vector has zero mass"));
    }
    Ok(v.into_iter().map(|x| x / s).collect())
}

/// Largest asymmetry of the similarity-scaled matrix accepted as reversible.
pub const REVERSIBLE_TOL: f64 = 1e-12;

/// Iteration cap of the Schur decomposition. Unbounded, it can stall on
/// matrices with many repeated zero eigenvalues.
pub const SCHUR_MAX_ITER: usize = 20_000;

/// Complex spectrum of `P`. Reversible chains go through the symmetric solver;
/// the rest through a Schur decomposition of `P` or `P^T`, loosening the
/// deflation tolerance from machine epsilon when the iteration stalls.
pub fn eigenvalues(p: &MixingMatrix) -> Result<Vec<Complex<f64>>, MixingError> {
    let a = p.to_nalgebra();
    if let Some(s) = reversible_form(p, &a) {
        return Ok(s
            .symmetric_eigenvalues()
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .collect());
    }
    for scale in [1.0, 4.0, 16.0] {
        for m in [a.clone(), a.transpose()] {
            if let Some(s) = Schur::try_new(m, scale * f64::EPSILON, SCHUR_MAX_ITER) {
                return Ok(s.complex_eigenvalues().iter().copied().collect());
            }
        }
    }
    Err(MixingError::Eigen("Schur iteration did not converge"))
}

/// `D^(-1/2) P D^(1/2)` with `D = diag(pi)`, symmetrized, when it is symmetric
/// to rounding (the chain is reversible). It has the spectrum of `P`.
fn reversible_form(p: &MixingMatrix, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let pi = stationary_distribution(p, STATIONARY_TOL).ok()?;
    let m = p.m();
    let s = DMatrix::from_fn(m, m, |i, j| a[(i, j)] * (pi[j] / pi[i]).sqrt());
    let asym = (0..m)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (s[(i, j)] - s[(j, i)]).abs())
        .fold(0.0, f64::max);
    (asym <= REVERSIBLE_TOL).then(|| (&s + s.transpose()) * 0.5)
}

/// Second largest eigenvalue modulus. Zero for `m = 1` and for an exactly rank-one `P`.
pub fn slem(p: &MixingMatrix) -> Result<f64, MixingError> {
    let m = p.m();
    if m == 1 || is_rank_one(p) {
        return Ok(0.0);
    }
    let mut spectrum = eigenvalues(p)?;
    if spectrum.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(MixingError::Eigen("non-finite eigenvalue"));
    }
    let (k, _) = spectrum
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .ok_or(MixingError::Eigen("empty spectrum"))?;
    spectrum.swap_remove(k);
    Ok(spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn is_rank_one(p: &MixingMatrix) -> bool {
    let m = p.m();
    (0..m).all(|i| (1..m).all(|j| p.get(i, j) == p.get(i, 0)))
}

/// Topological imbalance: the smallest stationary mass.
pub fn imbalance(pi: &[f64]) -> f64 {
    pi.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Maximum absolute row sum.
fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest `C` with `||H^t||_inf <= C lambda^t` for `1 <= t <= horizon`, where
/// `H = P - pi 1^T`, from explicit powers `H^t = H H^(t-1)`.
///
/// Powers whose norm has fallen to the rounding floor are not scanned: past
/// that point the ratio measures arithmetic noise rather than `H`.
pub fn residual_constant(
    p: &MixingMatrix,
    pi: &[f64],
    lambda: f64,
    horizon: usize,
) -> Result<f64, MixingError> {
    if horizon == 0 {
        return Err(MixingError::Horizon);
    }
    let m = p.m();
    let h = DMatrix::from_fn(m, m, |i, j| p.get(i, j) - pi[i]);
    let norm1 = inf_norm(&h);
    if norm1 == 0.0 {
        return Ok(0.0);
    }
    if lambda == 0.0 {
        return Ok(f64::INFINITY);
    }
    let floor = 64.0 * f64::EPSILON * norm1.max(1.0) * m as f64;
    let mut c: f64 = 0.0;
    let mut power = h.clone();
    let mut lam_t = 1.0;
    for t in 1..=horizon {
        if t > 1 {
            power = &h * &power;
        }
        lam_t *= lambda;
        let norm = inf_norm(&power);
        if (t > 1 && norm <= floor) || !lam_t.is_normal() {
            break;
        }
        c = c.max(norm / lam_t);
    }
    Ok(c)
}

/// Spectral summary of a mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub pi: Vec<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub c_h: f64,
    pub doubly_stochastic: bool,
}

impl SpectralProfile {
    pub fn csv_header() -> &'static str {
        "kind,m,delta,lambda,c_h,doubly_stochastic"
    }

    pub fn csv_row(&self, kind: TopologyKind, m: usize) -> String {
        format!(
            "{},{},{},{},{},{}",
            kind.name(),
            m,
            self.delta,
            self.lambda,
            self.c_h,
            self.doubly_stochastic
        )
    }
}

/// Builds `P` for `g` and bundles `pi`, `delta`, `lambda`, `C_H` and the
/// doubly-stochastic flag.
pub fn spectral_profile(g: &DirectedGraph) -> Result<SpectralProfile, MixingError> {
    let p = build_mixing(g)?;
    profile_of(&p)
}

/// Spectral summary of an existing mixing matrix.
pub fn profile_of(p: &MixingMatrix) -> Result<SpectralProfile, MixingError> {
    let pi = stationary_distribution(p, STATIONARY_TOL)?;
    let lambda = slem(p)?;
    let c_h = residual_constant(p, &pi, lambda, RESIDUAL_HORIZON)?;
    Ok(SpectralProfile {
        delta: imbalance(&pi),
        doubly_stochastic: p.is_doubly_stochastic(DOUBLY_STOCHASTIC_TOL),
        pi,
        lambda,
        c_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, TopologyKind};

    fn mix(kind: TopologyKind, m: usize) -> MixingMatrix {
        build_mixing(&build_topology(kind, m).unwrap()).unwrap()
    }

    #[test]
    fn spectra_with_repeated_zero_eigenvalues_terminate() {
        // Complete bipartite with self-loops: eigenvalues 1, -(h-1)/(h+1) and 1/(h+1).
        for m in [32usize, 64] {
            let h = (m / 2) as f64;
            let lam = slem(&mix(TopologyKind::Bipartite, m)).unwrap();
            assert!((lam - (h - 1.0) / (h + 1.0)).abs() < 1e-12, "m = {m}: {lam}");
        }
        let lam = slem(&mix(TopologyKind::BTree, 40)).unwrap();
        assert!(lam > 0.0 && lam < 1.0);
        let lam = slem(&mix(TopologyKind::DiExp, 200)).unwrap();
        assert!((lam - 7.0 / 9.0).abs() < 1e-12, "{lam}");
    }

    #[test]
    fn diring_three_matches_hand_evaluation() {
        let p = mix(TopologyKind::DiRing, 3);
        let expect = [0.5, 0.0, 0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5];
        assert_eq!(p.dense(), &expect);
    }

    #[test]
    fn fully_connected_four_is_uniform() {
        let p = mix(TopologyKind::FullyConnected, 4);
        assert!(p.dense().iter().all(|&x| x == 0.25));
        assert_eq!(slem(&p).unwrap(), 0.0);
    }

    #[test]
    fn single_node_is_identity() {
        let p = mix(TopologyKind::DiRing, 1);
        assert_eq!(p.dense(), &[1.0]);
        assert_eq!(slem(&p).unwrap(), 0.0);
        let prof = profile_of(&p).unwrap();
        assert_eq!(prof.c_h, 0.0);
        assert_eq!(prof.pi, vec![1.0]);
    }

    #[test]
    fn rejects_disconnected_graph() {
        let g = DirectedGraph::new(2, &[(0, 1)]).unwrap();
        assert!(matches!(
            build_mixing(&g),
            Err(MixingError::NotStronglyConnected(2))
        ));
    }

    #[test]
    fn diring_three_slem_is_half() {
        let p = mix(TopologyKind::DiRing, 3);
        assert!((slem(&p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn star_five_has_heavier_hub() {
        let p = mix(TopologyKind::Star, 5);
        let pi = stationary_distribution(&p, STATIONARY_TOL).unwrap();
        let dense = stationary_distribution_dense(&p).unwrap();
        for (a, b) in pi.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(pi[0] > pi[1]);
        // leaf mass 2/(3m-2) from the balance equations of the out-degree rule
        let leaf = 2.0 / 13.0;
        assert!((imbalance(&pi) - leaf).abs() < 1e-12);
        assert!((pi[0] - 5.0 * leaf / 2.0).abs() < 1e-12);
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&[0.125; 8]), 0.125);
        assert_eq!(imbalance(&[0.4, 0.3, 0.3]), 0.3);
    }

    #[test]
    fn residual_constant_diring_three_matches_matrix_powers() {
        let p = mix(TopologyKind::DiRing, 3);
        let pi = vec![1.0 / 3.0; 3];
        let c = residual_constant(&p, &pi, 0.5, 20).unwrap();
        let pm = p.to_nalgebra();
        let proj = DMatrix::from_fn(3, 3, |i, _| pi[i]);
        let h = &pm - &proj;
        let mut power = h.clone();
        let mut expect: f64 = 0.0;
        for t in 1..=20 {
            if t > 1 {
                power = &h * &power;
            }
            let norm = (0..3)
                .map(|i| power.row(i).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            expect = expect.max(norm / 0.5f64.powi(t));
        }
        assert!((c - expect).abs() < 1e-12 * expect, "{c} vs {expect}");
    }

    #[test]
    fn residual_constant_zero_for_fully_connected() {
        let p = mix(TopologyKind::FullyConnected, 6);
        let prof = profile_of(&p).unwrap();
        assert_eq!(prof.lambda, 0.0);
        assert_eq!(prof.c_h, 0.0);
    }

    #[test]
    fn profile_examples() {
        let prof = spectral_profile(&build_topology(TopologyKind::DiRing, 3).unwrap()).unwrap();
        assert!((prof.delta - 1.0 / 3.0).abs() < 1e-12);
        assert!((prof.lambda - 0.5).abs() < 1e-12);
        assert!(prof.doubly_stochastic);

        let fc = spectral_profile(&build_topology(TopologyKind::FullyConnected, 8).unwrap())
            .unwrap();
        assert_eq!(fc.lambda, 0.0);
        assert!((fc.delta - 0.125).abs() < 1e-15);

        let sub = spectral_profile(&build_topology(TopologyKind::SubRing, 8).unwrap()).unwrap();
        assert!(!sub.doubly_stochastic);
        assert!(sub.delta < 0.125);
    }

    #[test]
    fn csv_row_layout() {
        let prof = spectral_profile(&build_topology(TopologyKind::FullyConnected, 4).unwrap())
            .unwrap();
        assert_eq!(
            prof.csv_row(TopologyKind::FullyConnected, 4),
            "FullyConnected,4,0.25,0,0,true"
        );
    }
}

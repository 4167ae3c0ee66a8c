//! Stochastic gradient push (SGP) and a decentralized SGD (D-SGD) baseline.
//!
//! One SGP iteration on node `i`:
//!
//! ```text
//! w_i <- sum_j P_ij (w_j - gamma_t g_j),   g_j = grad f(z_j; xi_j)
//! u_i <- sum_j P_ij u_j
//! z_i <- w_i / u_i
//! ```
//!
//! D-SGD runs the same mixing with `u` frozen at 1 and `z = w`.
//!
//! Sample indices come from generators keyed by `(seed, t)` (shared index) or
//! `(seed, node, t)` (per-node), and every reduction runs in ascending node
//! order, so results do not depend on the number of worker threads.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::mixing::MixingMatrix;
use crate::numeric::{dist2, norm2, stream_rng};
use crate::objectives::{LossModel, Sample};
use crate::schedule::StepSchedule;

const TAG_SAMPLE: u64 = 0x5EED_5A3F;
const TAG_INIT: u64 = 0x1217;

// Steps with fewer scalar updates than this run on the calling thread.
const PARALLEL_MIN_WORK: usize = 1 << 14;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("push-sum weight u_{node} = {u} is not positive after step {t}")]
    NonPositiveWeight { node: usize, t: usize, u: f64 },
    #[error("{nodes} nodes but {shards} shards")]
    ShardCount { nodes: usize, shards: usize },
    #[error("mixing matrix has {matrix} nodes, swarm has {swarm}")]
    MatrixSize { matrix: usize, swarm: usize },
    #[error("shard {0} is empty")]
    EmptyShard(usize),
    #[error("shared-index sampling needs equal shard sizes")]
    UnequalShards,
    #[error("state dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("a sample in shard {node} exceeds model dimension {d}")]
    SampleDimension { node: usize, d: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgp,
    Dsgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// One index per step, broadcast to every node.
    SharedIndex,
    /// Independent index per node and step.
    PerNode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zero,
    /// Independent `N(0, scale^2)` entries per node.
    Gaussian { scale: f64 },
}

/// Per-node Push-Sum state.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub w: Vec<f64>,
    pub u: f64,
    pub z: Vec<f64>,
}

/// All node states plus buffers reused across steps.
#[derive(Debug, Clone)]
pub struct SwarmState {
    pub nodes: Vec<NodeState>,
    half: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl PartialEq for SwarmState {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl SwarmState {
    /// States with the given numerators, `u = 1` and `z = w`.
    pub fn from_numerators(w: Vec<Vec<f64>>) -> Self {
        let d = w.first().map_or(0, Vec::len);
        let m = w.len();
        let nodes = w
            .into_iter()
            .map(|w| NodeState {
                z: w.clone(),
                w,
                u: 1.0,
            })
            .collect();
        Self {
            nodes,
            half: vec![vec![0.0; d]; m],
            grads: vec![vec![0.0; d]; m],
        }
    }

    pub fn init(m: usize, d: usize, init: Init, seed: u64) -> Self {
        let w = (0..m)
            .map(|i| match init {
                Init::Zero => vec![0.0; d],
                Init::Gaussian { scale } => {
                    let mut rng = stream_rng(seed, &[TAG_INIT, i as u64]);
                    (0..d)
                        .map(|_| {
                            let x: f64 = StandardNormal.sample(&mut rng);
                            scale * x
                        })
                        .collect()
                }
            })
            .collect();
        Self::from_numerators(w)
    }

    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.w.len())
    }

    /// `(1/m) sum_i w_i`, summed in node order.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for node in &self.nodes {
            for (a, x) in acc.iter_mut().zip(&node.w) {
                *a += x;
            }
        }
        let m = self.m() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }

    pub fn u_sum(&self) -> f64 {
        self.nodes.iter().map(|n| n.u).sum()
    }

    /// `(1/m) sum_i |w_i|`.
    pub fn mean_norm(&self) -> f64 {
        self.nodes.iter().map(|n| norm2(&n.w)).sum::<f64>() / self.m() as f64
    }

    /// Gradients used in the most recent step, one per node.
    pub fn last_gradients(&self) -> &[Vec<f64>] {
        &self.grads
    }
}

/// Draws sample indices for every `(node, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampler {
    pub seed: u64,
    pub mode: SamplingMode,
}

impl Sampler {
    pub fn new(seed: u64, mode: SamplingMode) -> Self {
        Self { seed, mode }
    }

    /// Local index used by `node` at step `t` from a shard of size `n`.
    pub fn index(&self, node: usize, t: usize, n: usize) -> usize {
        let mut rng = match self.mode {
            SamplingMode::SharedIndex => stream_rng(self.seed, &[TAG_SAMPLE, t as u64]),
            SamplingMode::PerNode => {
                stream_rng(self.seed, &[TAG_SAMPLE, t as u64, node as u64 + 1])
            }
        };
        rng.random_range(0..n)
    }
}

/// What one step did to the network average.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    pub gamma: f64,
    pub m: usize,
    pub mean_before: Vec<f64>,
    pub mean_after: Vec<f64>,
    /// `sum_i g_i`, in node order.
    pub gradient_sum: Vec<f64>,
    pub max_gradient_norm: f64,
}

/// Checks shapes once before a run.
pub fn validate_inputs(
    swarm: &SwarmState,
    p: &MixingMatrix,
    model: &LossModel,
    shards: &[Vec<Sample>],
    mode: SamplingMode,
) -> Result<(), EngineError> {
    if p.m() != swarm.m() {
        return Err(EngineError::MatrixSize {
            matrix: p.m(),
            swarm: swarm.m(),
        });
    }
    if shards.len() != swarm.m() {
        return Err(EngineError::ShardCount {
            nodes: swarm.m(),
            shards: shards.len(),
        });
    }
    if swarm.dim() != model.dim() {
        return Err(EngineError::Dimension {
            expected: model.dim(),
            got: swarm.dim(),
        });
    }
    let d = model.dim();
    for (k, sh) in shards.iter().enumerate() {
        if sh.is_empty() {
            return Err(EngineError::EmptyShard(k));
        }
        if sh.iter().any(|s| s.features.min_dim() > d) {
            return Err(EngineError::SampleDimension { node: k, d });
        }
    }
    if mode == SamplingMode::SharedIndex && shards.iter().any(|s| s.len() != shards[0].len()) {
        return Err(EngineError::UnequalShards);
    }
    Ok(())
}

fn local_update(
    i: usize,
    half: &mut [f64],
    grad: &mut [f64],
    node: &NodeState,
    ctx: &StepContext<'_>,
) {
    let shard = &ctx.shards[i];
    let idx = ctx.sampler.index(i, ctx.t, shard.len());
    ctx.model.gradient_into(&node.z, &shard[idx], grad);
    for ((h, w), g) in half.iter_mut().zip(&node.w).zip(grad.iter()) {
        *h = w - ctx.gamma * g;
    }
}

fn mix_into(i: usize, node: &mut NodeState, half: &[Vec<f64>], u_old: &[f64], ctx: &StepContext<'_>) {
    node.w.iter_mut().for_each(|x| *x = 0.0);
    let mut u = 0.0;
    for &(j, pij) in ctx.p.row(i) {
        for (x, h) in node.w.iter_mut().zip(&half[j]) {
            *x += pij * h;
        }
        u += pij * u_old[j];
    }
    match ctx.algorithm {
        Algorithm::Sgp => {
            node.u = u;
            for (z, w) in node.z.iter_mut().zip(&node.w) {
                *z = w / u;
            }
        }
        Algorithm::Dsgd => {
            node.u = 1.0;
            node.z.copy_from_slice(&node.w);
        }
    }
    if let Some(r) = ctx.projection_radius {
        let norm = norm2(&node.z);
        if norm > r {
            let s = r / norm;
            node.z.iter_mut().for_each(|z| *z *= s);
            for (w, z) in node.w.iter_mut().zip(&node.z) {
                *w = z * node.u;
            }
        }
    }
}

struct StepContext<'a> {
    p: &'a MixingMatrix,
    model: &'a LossModel,
    shards: &'a [Vec<Sample>],
    sampler: &'a Sampler,
    t: usize,
    gamma: f64,
    algorithm: Algorithm,
    projection_radius: Option<f64>,
}

/// One iteration without input validation; see [`validate_inputs`].
#[allow(clippy::too_many_arguments)]
pub fn advance(
    swarm: &mut SwarmState,
    p: &MixingMatrix,
    model: &LossModel,
    shards: &[Vec<Sample>],
    t: usize,
    gamma: f64,
    sampler: &Sampler,
    algorithm: Algorithm,
    projection_radius: Option<f64>,
) -> Result<StepTrace, EngineError> {
    step(
        swarm,
        &StepContext {
            p,
            model,
            shards,
            sampler,
            t,
            gamma,
            algorithm,
            projection_radius,
        },
    )
}

fn step(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<StepTrace, EngineError> {
    let m = swarm.m();
    let d = swarm.dim();
    let parallel = m > 1 && m * d * 4 >= PARALLEL_MIN_WORK;
    let mean_before = swarm.mean();
    let u_old: Vec<f64> = swarm.nodes.iter().map(|n| n.u).collect();

    let SwarmState { nodes, half, grads } = swarm;
    if parallel {
        half.par_iter_mut()
            .zip(grads.par_iter_mut())
            .zip(nodes.par_iter())
            .enumerate()
            .for_each(|(i, ((h, g), node))| local_update(i, h, g, node, ctx));
    } else {
        for (i, ((h, g), node)) in half.iter_mut().zip(grads.iter_mut()).zip(nodes.iter()).enumerate() {
            local_update(i, h, g, node, ctx);
        }
    }

    let half_ref: &[Vec<f64>] = half;
    if parallel {
        nodes
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, node)| mix_into(i, node, half_ref, &u_old, ctx));
    } else {
        for (i, node) in nodes.iter_mut().enumerate() {
            mix_into(i, node, half_ref, &u_old, ctx);
        }
    }

    for (i, node) in nodes.iter().enumerate() {
        if !(node.u > 0.0 && node.u.is_finite()) {
            return Err(EngineError::NonPositiveWeight {
                node: i,
                t: ctx.t,
                u: node.u,
            });
        }
    }

    let mut gradient_sum = vec![0.0; d];
    let mut max_gradient_norm: f64 = 0.0;
    for g in grads.iter() {
        for (s, x) in gradient_sum.iter_mut().zip(g) {
            *s += x;
        }
        max_gradient_norm = max_gradient_norm.max(norm2(g));
    }
    Ok(StepTrace {
        t: ctx.t,
        gamma: ctx.gamma,
        m,
        mean_before,
        mean_after: swarm.mean(),
        gradient_sum,
        max_gradient_norm,
    })
}

/// One SGP iteration in place.
pub fn sgp_step(
    swarm: &mut SwarmState,
    p: &MixingMatrix,
    model: &LossModel,
    shards: &[Vec<Sample>],
    t: usize,
    gamma: f64,
    sampler: &Sampler,
) -> Result<StepTrace, EngineError> {
    validate_inputs(swarm, p, model, shards, sampler.mode)?;
    step(
        swarm,
        &StepContext {
            p,
            model,
            shards,
            sampler,
            t,
            gamma,
            algorithm: Algorithm::Sgp,
            projection_radius: None,
        },
    )
}

/// One D-SGD iteration in place: SGP mixing without the weight correction.
pub fn dsgd_step(
    swarm: &mut SwarmState,
    p: &MixingMatrix,
    model: &LossModel,
    shards: &[Vec<Sample>],
    t: usize,
    gamma: f64,
    sampler: &Sampler,
) -> Result<StepTrace, EngineError> {
    validate_inputs(swarm, p, model, shards, sampler.mode)?;
    step(
        swarm,
        &StepContext {
            p,
            model,
            shards,
            sampler,
            t,
            gamma,
            algorithm: Algorithm::Dsgd,
            projection_radius: None,
        },
    )
}

/// `(max_i, mean_i)` of `|z_i - w_bar|` with `w_bar = (1/m) sum_i w_i`.
pub fn consensus_error(swarm: &SwarmState) -> (f64, f64) {
    let mean = swarm.mean();
    let errs: Vec<f64> = swarm.nodes.iter().map(|n| dist2(&n.z, &mean)).collect();
    let max = errs.iter().copied().fold(0.0, f64::max);
    let avg = errs.iter().sum::<f64>() / errs.len() as f64;
    (max, avg)
}

/// `|w_bar(t+1) - (w_bar(t) - (gamma/m) sum_i g_i)|`.
pub fn verify_average_dynamics(trace: &StepTrace) -> f64 {
    let c = trace.gamma / trace.m as f64;
    trace
        .mean_after
        .iter()
        .zip(&trace.mean_before)
        .zip(&trace.gradient_sum)
        .map(|((a, b), g)| {
            let r = a - (b - c * g);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub init: Init,
    pub projection_radius: Option<f64>,
    /// Rows are recorded at multiples of this stride and at `T`.
    pub record_every: usize,
    /// Evaluate train and test loss at recorded rows.
    pub evaluate_losses: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize, schedule: StepSchedule, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::Sgp,
            iterations,
            schedule,
            seed,
            sampling: SamplingMode::PerNode,
            init: Init::Zero,
            projection_radius: None,
            record_every: 1,
            evaluate_losses: true,
        }
    }

    /// Whether state `t` is a recorded row.
    pub fn records_row(&self, t: usize) -> bool {
        t == self.iterations || t % self.record_every.max(1) == 0
    }
}

/// One recorded row of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub gamma: f64,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub cons_max: f64,
    pub cons_mean: f64,
    pub u_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
    pub initial_mean: Vec<f64>,
    pub final_mean: Vec<f64>,
    /// `sum_t gamma_t w_bar(t) / sum_t gamma_t` over `t < T`; `None` when `T = 0`.
    pub averaged: Option<Vec<f64>>,
    /// `(1/m) sum_i |w_i(0)|`.
    pub c_w0: f64,
    /// Largest stochastic gradient norm used in the run.
    pub max_gradient_norm: f64,
    /// Largest `|z_i|` seen in the run.
    pub max_iterate_norm: f64,
    /// Largest average-dynamics residual divided by `1 + |w_bar|`.
    pub max_average_residual: f64,
}

pub const TRAJECTORY_HEADER: &str = "t,gamma,train_loss,test_loss,cons_max,cons_mean,u_sum";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl TrajectoryRecord {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                r.gamma,
                opt(r.train_loss),
                opt(r.test_loss),
                r.cons_max,
                r.cons_mean,
                r.u_sum
            )?;
        }
        Ok(())
    }
}

/// State handed to a run observer after every step (and once for `t = 0`).
pub struct StepView<'a> {
    pub t: usize,
    pub swarm: &'a SwarmState,
    pub mean: &'a [f64],
    /// The step that produced this state; `None` at `t = 0`.
    pub trace: Option<&'a StepTrace>,
}

/// Training and evaluation data for a run.
#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    pub shards: &'a [Vec<Sample>],
    pub test: &'a [Sample],
}

/// Runs `config.iterations` steps and records the trajectory.
pub fn run_training(
    config: &TrainConfig,
    p: &MixingMatrix,
    model: &LossModel,
    data: RunData<'_>,
) -> Result<TrajectoryRecord, EngineError> {
    run_training_with(config, p, model, data, |_| {})
}

/// [`run_training`] with a callback invoked on every state `t = 0..=T`.
pub fn run_training_with<F>(
    config: &TrainConfig,
    p: &MixingMatrix,
    model: &LossModel,
    data: RunData<'_>,
    mut observer: F,
) -> Result<TrajectoryRecord, EngineError>
where
    F: FnMut(&StepView<'_>),
{
    let m = p.m();
    let mut swarm = SwarmState::init(m, model.dim(), config.init, config.seed);
    validate_inputs(&swarm, p, model, data.shards, config.sampling)?;
    let sampler = Sampler::new(config.seed, config.sampling);
    let c_w0 = swarm.mean_norm();
    let initial_mean = swarm.mean();
    let t_end = config.iterations;

    let mut rows = Vec::new();
    let mut weighted = vec![0.0; model.dim()];
    let mut gamma_total = 0.0;
    let mut max_gradient_norm: f64 = 0.0;
    let mut max_iterate_norm: f64 = swarm
        .nodes
        .iter()
        .map(|n| norm2(&n.z))
        .fold(0.0, f64::max);
    let mut max_average_residual: f64 = 0.0;
    let mut mean = initial_mean.clone();
    let mut trace: Option<StepTrace> = None;

    for t in 0..=t_end {
        observer(&StepView {
            t,
            swarm: &swarm,
            mean: &mean,
            trace: trace.as_ref(),
        });
        let gamma = config.schedule.gamma(t);
        if t_end > 0 && config.records_row(t) {
            let (cons_max, cons_mean) = consensus_error(&swarm);
            let (train_loss, test_loss) = if config.evaluate_losses {
                (
                    Some(model.empirical_risk_shards(&mean, data.shards)),
                    (!data.test.is_empty()).then(|| model.empirical_risk(&mean, data.test)),
                )
            } else {
                (None, None)
            };
            rows.push(TrajectoryRow {
                t,
                gamma,
                train_loss,
                test_loss,
                cons_max,
                cons_mean,
                u_sum: swarm.u_sum(),
            });
        }
        if t == t_end {
            break;
        }
        gamma_total += gamma;
        for (a, x) in weighted.iter_mut().zip(&mean) {
            *a += gamma * x;
        }
        let tr = step(
            &mut swarm,
            &StepContext {
                p,
                model,
                shards: data.shards,
                sampler: &sampler,
                t,
                gamma,
                algorithm: config.algorithm,
                projection_radius: config.projection_radius,
            },
        )?;
        max_gradient_norm = max_gradient_norm.max(tr.max_gradient_norm);
        if config.projection_radius.is_none() {
            let res = verify_average_dynamics(&tr) / (1.0 + norm2(&tr.mean_before));
            max_average_residual = max_average_residual.max(res);
        }
        for n in &swarm.nodes {
            max_iterate_norm = max_iterate_norm.max(norm2(&n.z));
        }
        mean.clone_from(&tr.mean_after);
        trace = Some(tr);
    }

    let averaged = (t_end > 0).then(|| weighted.iter().map(|a| a / gamma_total).collect());
    Ok(TrajectoryRecord {
        rows,
        initial_mean,
        final_mean: mean,
        averaged,
        c_w0,
        max_gradient_norm,
        max_iterate_norm,
        max_average_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::build_mixing;
    use crate::objectives::{Quadratic, SparseVector};
    use crate::topology::{build_topology, TopologyKind};

    fn zero_model(d: usize) -> LossModel {
        LossModel::Quadratic(Quadratic::new(d, vec![0.0; d * d], vec![0.0; d]).unwrap())
    }

    fn identity_model(d: usize) -> LossModel {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        LossModel::Quadratic(Quadratic::new(d, a, vec![0.0; d]).unwrap())
    }

    fn dummy_shards(m: usize) -> Vec<Vec<Sample>> {
        vec![vec![Sample::new(SparseVector::default(), 1.0)]; m]
    }

    fn mixing(kind: TopologyKind, m: usize) -> MixingMatrix {
        build_mixing(&build_topology(kind, m).unwrap()).unwrap()
    }

    #[test]
    fn single_node_is_plain_sgd() {
        let p = mixing(TopologyKind::DiRing, 1);
        let model = identity_model(2);
        let mut swarm = SwarmState::from_numerators(vec![vec![1.0, -2.0]]);
        let sampler = Sampler::new(0, SamplingMode::PerNode);
        let tr = sgp_step(&mut swarm, &p, &model, &dummy_shards(1), 0, 0.1, &sampler).unwrap();
        assert_eq!(swarm.nodes[0].w, vec![0.9, -1.8]);
        assert_eq!(swarm.nodes[0].u, 1.0);
        assert!(verify_average_dynamics(&tr) < 1e-16);
    }

    #[test]
    fn zero_gradient_sgp_matches_matrix_powers() {
        let p = mixing(TopologyKind::SubRing, 6);
        let model = zero_model(2);
        let mut swarm = SwarmState::init(6, 2, Init::Gaussian { scale: 1.0 }, 3);
        let w0: Vec<Vec<f64>> = swarm.nodes.iter().map(|n| n.w.clone()).collect();
        let sampler = Sampler::new(0, SamplingMode::PerNode);
        let steps = 15;
        for t in 0..steps {
            sgp_step(&mut swarm, &p, &model, &dummy_shards(6), t, 0.5, &sampler).unwrap();
        }
        let pm = p.to_nalgebra().pow(steps as u32);
        for i in 0..6 {
            for k in 0..2 {
                let expect: f64 = (0..6).map(|j| pm[(i, j)] * w0[j][k]).sum();
                assert!((swarm.nodes[i].w[k] - expect).abs() < 1e-13);
            }
            let u_expect: f64 = (0..6).map(|j| pm[(i, j)]).sum();
            assert!((swarm.nodes[i].u - u_expect).abs() < 1e-13);
        }
    }

    #[test]
    fn fully_connected_equalizes_after_one_step() {
        let p = mixing(TopologyKind::FullyConnected, 5);
        let model = identity_model(3);
        let mut swarm = SwarmState::init(5, 3, Init::Gaussian { scale: 2.0 }, 1);
        let sampler = Sampler::new(0, SamplingMode::PerNode);
        sgp_step(&mut swarm, &p, &model, &dummy_shards(5), 0, 0.3, &sampler).unwrap();
        for n in &swarm.nodes[1..] {
            for (a, b) in n.z.iter().zip(&swarm.nodes[0].z) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dsgd_equals_sgp_on_doubly_stochastic_mixing() {
        let p = mixing(TopologyKind::DiExp, 8);
        let model = LossModel::logistic(3, 1e-3).unwrap();
        let shards: Vec<Vec<Sample>> =
            crate::data_io::synth_logistic(3, 40, 2.0, 4).unwrap().chunks(5).map(|c| c.to_vec()).collect();
        let mut a = SwarmState::init(8, 3, Init::Gaussian { scale: 1.0 }, 2);
        let mut b = a.clone();
        let sampler = Sampler::new(9, SamplingMode::PerNode);
        for t in 0..50 {
            sgp_step(&mut a, &p, &model, &shards, t, 0.1, &sampler).unwrap();
            dsgd_step(&mut b, &p, &model, &shards, t, 0.1, &sampler).unwrap();
        }
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            for (p, q) in x.z.iter().zip(&y.z) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consensus_error_examples() {
        let same = SwarmState::from_numerators(vec![vec![1.0, 2.0]; 3]);
        assert_eq!(consensus_error(&same), (0.0, 0.0));
        let two = SwarmState::from_numerators(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (max, mean) = consensus_error(&two);
        assert!((max - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((mean - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_average_fixed() {
        let p = mixing(TopologyKind::Star, 7);
        let model = zero_model(2);
        let mut swarm = SwarmState::init(7, 2, Init::Gaussian { scale: 1.0 }, 5);
        let start = swarm.mean();
        let sampler = Sampler::new(0, SamplingMode::PerNode);
        for t in 0..30 {
            let tr = sgp_step(&mut swarm, &p, &model, &dummy_shards(7), t, 0.2, &sampler).unwrap();
            assert!(verify_average_dynamics(&tr) < 1e-15);
        }
        for (a, b) in swarm.mean().iter().zip(&start) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_run_has_no_average() {
        let p = mixing(TopologyKind::DiRing, 2);
        let model = zero_model(1);
        let cfg = TrainConfig::new(0, StepSchedule::constant(0.1).unwrap(), 0);
        let rec = run_training(&cfg, &p, &model, RunData { shards: &dummy_shards(2), test: &[] })
            .unwrap();
        assert!(rec.rows.is_empty());
        assert!(rec.averaged.is_none());
    }

    #[test]
    fn single_node_logistic_training_reduces_loss() {
        let p = mixing(TopologyKind::DiRing, 1);
        let model = LossModel::logistic(5, 1e-4).unwrap();
        let data = crate::data_io::synth_logistic(5, 100, 4.0, 1).unwrap();
        let shards = vec![data];
        let cfg = TrainConfig::new(500, StepSchedule::constant(0.5).unwrap(), 7);
        let rec = run_training(&cfg, &p, &model, RunData { shards: &shards, test: &[] }).unwrap();
        let last = rec.rows.last().unwrap().train_loss.unwrap();
        assert!(last < 2f64.ln(), "final loss {last}");
        assert_eq!(rec.rows.len(), 501);
    }

    #[test]
    fn gradient_descent_on_half_norm_contracts() {
        let p = mixing(TopologyKind::DiRing, 1);
        let model = identity_model(2);
        let mut cfg = TrainConfig::new(20, StepSchedule::constant(0.25).unwrap(), 0);
        cfg.init = Init::Gaussian { scale: 1.0 };
        let mut norms = Vec::new();
        run_training_with(&cfg, &p, &model, RunData { shards: &dummy_shards(1), test: &[] }, |v| {
            norms.push(norm2(v.mean));
        })
        .unwrap();
        for w in norms.windows(2) {
            assert!((w[1] / w[0] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_csv_header_and_rows() {
        let p = mixing(TopologyKind::DiRing, 2);
        let model = zero_model(1);
        let mut cfg = TrainConfig::new(4, StepSchedule::constant(0.1).unwrap(), 0);
        cfg.record_every = 2;
        let rec = run_training(&cfg, &p, &model, RunData { shards: &dummy_shards(2), test: &[] })
            .unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0.1,0,,0,0,2"));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let p = mixing(TopologyKind::DiRing, 3);
        let model = zero_model(2);
        let mut swarm = SwarmState::init(3, 2, Init::Zero, 0);
        let sampler = Sampler::new(0, SamplingMode::PerNode);
        assert!(matches!(
            sgp_step(&mut swarm, &p, &model, &dummy_shards(2), 0, 0.1, &sampler),
            Err(EngineError::ShardCount { .. })
        ));
        let mut shards = dummy_shards(3);
        shards[1].clear();
        assert_eq!(
            sgp_step(&mut swarm, &p, &model, &shards, 0, 0.1, &sampler),
            Err(EngineError::EmptyShard(1))
        );
    }

    #[test]
    fn non_positive_weight_is_reported() {
        let bad = MixingMatrix::from_dense(2, vec![1.0, 0.0, 0.0, -1.0]);
        let model = zero_model(1);
        let mut swarm = SwarmState::init(2, 1, Init::Zero, 0);
        let sampler = Sampler::new(0, SamplingMode::PerNode);
        assert_eq!(
            sgp_step(&mut swarm, &bad, &model, &dummy_shards(2), 4, 0.1, &sampler),
            Err(EngineError::NonPositiveWeight { node: 1, t: 4, u: -1.0 })
        );
    }

    #[test]
    fn shared_index_is_common_across_nodes() {
        let s = Sampler::new(3, SamplingMode::SharedIndex);
        for t in 0..20 {
            let i0 = s.index(0, t, 50);
            assert!((1..10).all(|node| s.index(node, t, 50) == i0));
        }
    }
}

//! Neighboring datasets, coupled runs and the quantities uniform stability bounds.
//!
//! Two datasets that differ in one sample are trained in lockstep from the same
//! initialization with the same shared sample indices. The divergence
//! `Delta_t = |w_bar(t) - w_bar'(t)|` and the loss differences of the two
//! outputs estimate the algorithm's stability.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{
    advance, validate_inputs, EngineError, Sampler, SamplingMode, SwarmState, TrainConfig,
};
use crate::mixing::MixingMatrix;
use crate::numeric::{derive_seed, dist2, mean, std_error, stream_rng};
use crate::objectives::{LossModel, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("held-out pool is empty")]
    EmptyPool,
    #[error("position (node {node}, index {index}) is outside the dataset")]
    Position { node: usize, index: usize },
    #[error("coupled runs need shared-index sampling")]
    SamplingMode,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Which iterate a run reports as its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputIterate {
    /// `w_bar(T)`.
    #[default]
    Last,
    /// Step-size weighted average of `w_bar(t)` over `t < T`.
    Averaged,
}

/// Base shards and a copy with one sample replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborPair {
    pub base: Vec<Vec<Sample>>,
    pub perturbed: Vec<Vec<Sample>>,
    pub node: usize,
    pub local_index: usize,
    pub replacement: Sample,
}

/// Replaces sample `(node, local_index)` by a pool sample chosen with `seed`.
pub fn make_neighbor(
    shards: &[Vec<Sample>],
    node: usize,
    local_index: usize,
    pool: &[Sample],
    seed: u64,
) -> Result<NeighborPair, StabilityError> {
    if pool.is_empty() {
        return Err(StabilityError::EmptyPool);
    }
    if node >= shards.len() || local_index >= shards[node].len() {
        return Err(StabilityError::Position {
            node,
            index: local_index,
        });
    }
    let pick = stream_rng(seed, &[0x9E1]).random_range(0..pool.len());
    let replacement = pool[pick].clone();
    let mut perturbed = shards.to_vec();
    perturbed[node][local_index] = replacement.clone();
    Ok(NeighborPair {
        base: shards.to_vec(),
        perturbed,
        node,
        local_index,
        replacement,
    })
}

/// Neighbor pair with the replaced position drawn uniformly with `seed`.
pub fn random_neighbor(
    shards: &[Vec<Sample>],
    pool: &[Sample],
    seed: u64,
) -> Result<NeighborPair, StabilityError> {
    if shards.is_empty() || shards[0].is_empty() {
        return Err(StabilityError::Empty("dataset"));
    }
    let mut rng = stream_rng(seed, &[0x9E2]);
    let node = rng.random_range(0..shards.len());
    let index = rng.random_range(0..shards[node].len());
    make_neighbor(shards, node, index, pool, seed)
}

/// Mean test loss minus mean train loss at `w`.
pub fn generalization_gap(
    w: &[f64],
    model: &LossModel,
    train: &[Vec<Sample>],
    test: &[Sample],
) -> Result<f64, StabilityError> {
    if train.iter().all(Vec::is_empty) {
        return Err(StabilityError::Empty("train set"));
    }
    if test.is_empty() {
        return Err(StabilityError::Empty("test set"));
    }
    Ok(model.empirical_risk(w, test) - model.empirical_risk_shards(w, train))
}

/// One recorded point of a coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRow {
    pub t: usize,
    pub delta: f64,
    pub gen_gap: Option<f64>,
    pub gen_gap_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace {
    pub seed: u64,
    /// `Delta_t` for `t = 0..=T`.
    pub deltas: Vec<f64>,
    pub rows: Vec<CoupledRow>,
    /// `|w_avg - w_avg'|`; `None` when `T = 0`.
    pub averaged_delta: Option<f64>,
    pub output: Vec<f64>,
    pub output_prime: Vec<f64>,
    pub max_gradient_norm: f64,
}

impl CoupledTrace {
    pub fn final_delta(&self) -> f64 {
        *self.deltas.last().expect("deltas include t = 0")
    }
}

/// Trains on both halves of `pair` in lockstep. Generalization gaps are
/// evaluated at recorded rows when `test` is nonempty.
pub fn coupled_run(
    config: &TrainConfig,
    p: &MixingMatrix,
    model: &LossModel,
    pair: &NeighborPair,
    test: &[Sample],
    output: OutputIterate,
) -> Result<CoupledTrace, StabilityError> {
    if config.sampling != SamplingMode::SharedIndex {
        return Err(StabilityError::SamplingMode);
    }
    let m = p.m();
    let d = model.dim();
    let mut a = SwarmState::init(m, d, config.init, config.seed);
    let mut b = a.clone();
    validate_inputs(&a, p, model, &pair.base, config.sampling)?;
    validate_inputs(&b, p, model, &pair.perturbed, config.sampling)?;
    let sampler = Sampler::new(config.seed, config.sampling);
    let t_end = config.iterations;

    let mut mean_a = a.mean();
    let mut mean_b = b.mean();
    let mut avg_a = vec![0.0; d];
    let mut avg_b = vec![0.0; d];
    let mut gamma_total = 0.0;
    let mut deltas = Vec::with_capacity(t_end + 1);
    let mut rows = Vec::new();
    let mut max_gradient_norm: f64 = 0.0;

    let out_of = |mean: &[f64], avg: &[f64], total: f64| -> Vec<f64> {
        match output {
            OutputIterate::Averaged if total > 0.0 => avg.iter().map(|x| x / total).collect(),
            _ => mean.to_vec(),
        }
    };

    for t in 0..=t_end {
        let delta = dist2(&mean_a, &mean_b);
        deltas.push(delta);
        if config.records_row(t) {
            let (gen_gap, gen_gap_prime) = if test.is_empty() {
                (None, None)
            } else {
                let wa = out_of(&mean_a, &avg_a, gamma_total);
                let wb = out_of(&mean_b, &avg_b, gamma_total);
                (
                    Some(generalization_gap(&wa, model, &pair.base, test)?),
                    Some(generalization_gap(&wb, model, &pair.perturbed, test)?),
                )
            };
            rows.push(CoupledRow {
                t,
                delta,
                gen_gap,
                gen_gap_prime,
            });
        }
        if t == t_end {
            break;
        }
        let gamma = config.schedule.gamma(t);
        gamma_total += gamma;
        for ((x, y), (ma, mb)) in avg_a
            .iter_mut()
            .zip(avg_b.iter_mut())
            .zip(mean_a.iter().zip(&mean_b))
        {
            *x += gamma * ma;
            *y += gamma * mb;
        }
        let ta = advance(
            &mut a,
            p,
            model,
            &pair.base,
            t,
            gamma,
            &sampler,
            config.algorithm,
            config.projection_radius,
        )?;
        let tb = advance(
            &mut b,
            p,
            model,
            &pair.perturbed,
            t,
            gamma,
            &sampler,
            config.algorithm,
            config.projection_radius,
        )?;
        max_gradient_norm = max_gradient_norm
            .max(ta.max_gradient_norm)
            .max(tb.max_gradient_norm);
        mean_a = ta.mean_after;
        mean_b = tb.mean_after;
    }

    let averaged_delta = (gamma_total > 0.0).then(|| dist2(&avg_a, &avg_b) / gamma_total);
    Ok(CoupledTrace {
        seed: config.seed,
        deltas,
        rows,
        averaged_delta,
        output: out_of(&mean_a, &avg_a, gamma_total),
        output_prime: out_of(&mean_b, &avg_b, gamma_total),
        max_gradient_norm,
    })
}

/// Max over probe samples of the mean over traces of `|f(w; z) - f(w'; z)|`.
pub fn stability_estimate(
    traces: &[CoupledTrace],
    model: &LossModel,
    probes: &[Sample],
) -> Result<f64, StabilityError> {
    if traces.is_empty() {
        return Err(StabilityError::Empty("trace list"));
    }
    if probes.is_empty() {
        return Err(StabilityError::Empty("probe set"));
    }
    let k = traces.len() as f64;
    Ok(probes
        .iter()
        .map(|z| {
            traces
                .iter()
                .map(|tr| {
                    (model.loss_unchecked(&tr.output, z) - model.loss_unchecked(&tr.output_prime, z))
                        .abs()
                })
                .sum::<f64>()
                / k
        })
        .fold(0.0, f64::max))
}

/// Seed of replicate `r` under the top-level seed.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, &[0x2E9, r as u64])
}

/// Coupled runs for `replicates` seeds, each with its own neighbor pair and
/// training seed. Replicates run in parallel; results are in replicate order.
pub fn run_replicates(
    config: &TrainConfig,
    p: &MixingMatrix,
    model: &LossModel,
    shards: &[Vec<Sample>],
    pool: &[Sample],
    test: &[Sample],
    output: OutputIterate,
    replicates: usize,
) -> Result<Vec<CoupledTrace>, StabilityError> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.seed, r);
            let pair = random_neighbor(shards, pool, seed)?;
            let cfg = TrainConfig { seed, ..*config };
            coupled_run(&cfg, p, model, &pair, test, output)
        })
        .collect()
}

/// Mean and standard error of `Delta_t` across traces, for every `t`.
pub fn delta_profile(traces: &[CoupledTrace]) -> (Vec<f64>, Vec<f64>) {
    let len = traces.iter().map(|t| t.deltas.len()).min().unwrap_or(0);
    (0..len)
        .map(|t| {
            let xs: Vec<f64> = traces.iter().map(|tr| tr.deltas[t]).collect();
            (mean(&xs), std_error(&xs))
        })
        .unzip()
}

/// Aggregate statistics at a recorded row.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub delta_mean: f64,
    pub delta_stderr: f64,
    pub gen_gap_mean: Option<f64>,
    pub gen_gap_stderr: Option<f64>,
}

/// Mean and standard error over traces at every recorded row. The gap of a
/// replicate is the average of its two runs' gaps.
pub fn aggregate(traces: &[CoupledTrace]) -> Vec<AggregateRow> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    (0..first.rows.len())
        .map(|k| {
            let deltas: Vec<f64> = traces.iter().map(|tr| tr.rows[k].delta).collect();
            let gaps: Option<Vec<f64>> = traces
                .iter()
                .map(|tr| {
                    let r = &tr.rows[k];
                    Some(0.5 * (r.gen_gap? + r.gen_gap_prime?))
                })
                .collect();
            AggregateRow {
                t: first.rows[k].t,
                delta_mean: mean(&deltas),
                delta_stderr: std_error(&deltas),
                gen_gap_mean: gaps.as_ref().map(|g| mean(g)),
                gen_gap_stderr: gaps.as_ref().map(|g| std_error(g)),
            }
        })
        .collect()
}

pub const REPLICATE_HEADER: &str = "seed,t,delta,gen_gap_run,gen_gap_run_prime";
pub const AGGREGATE_HEADER: &str = "t,delta_mean,delta_stderr,gen_gap_mean,gen_gap_stderr";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn write_replicates_csv<W: std::io::Write>(
    traces: &[CoupledTrace],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{REPLICATE_HEADER}")?;
    for tr in traces {
        for r in &tr.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                tr.seed,
                r.t,
                r.delta,
                opt(r.gen_gap),
                opt(r.gen_gap_prime)
            )?;
        }
    }
    Ok(())
}

pub fn write_aggregate_csv<W: std::io::Write>(
    rows: &[AggregateRow],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            r.delta_mean,
            r.delta_stderr,
            opt(r.gen_gap_mean),
            opt(r.gen_gap_stderr)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::synth_logistic;
    use crate::mixing::build_mixing;
    use crate::schedule::StepSchedule;
    use crate::topology::{build_topology, TopologyKind};

    fn setup(m: usize, n: usize) -> (MixingMatrix, LossModel, Vec<Vec<Sample>>, Vec<Sample>) {
        let p = build_mixing(&build_topology(TopologyKind::DiRing, m).unwrap()).unwrap();
        let model = LossModel::logistic(4, 1e-3).unwrap();
        let data = synth_logistic(4, m * n + 10, 2.0, 1).unwrap();
        let shards = data[..m * n].chunks(n).map(|c| c.to_vec()).collect();
        (p, model, shards, data[m * n..].to_vec())
    }

    fn cfg(t: usize, gamma: f64) -> TrainConfig {
        let mut c = TrainConfig::new(t, StepSchedule::constant(gamma).unwrap(), 3);
        c.sampling = SamplingMode::SharedIndex;
        c.evaluate_losses = false;
        c
    }

    #[test]
    fn neighbor_differs_in_exactly_one_position() {
        let (_, _, shards, pool) = setup(3, 5);
        let pair = random_neighbor(&shards, &pool, 8).unwrap();
        let mut diffs = 0;
        for (a, b) in pair.base.iter().zip(&pair.perturbed) {
            for (x, y) in a.iter().zip(b) {
                if x != y {
                    diffs += 1;
                }
            }
        }
        assert_eq!(diffs, 1);
        assert_eq!(pair.perturbed[pair.node][pair.local_index], pair.replacement);
    }

    #[test]
    fn neighbor_errors() {
        let (_, _, shards, pool) = setup(2, 3);
        assert_eq!(
            make_neighbor(&shards, 0, 0, &[], 0).unwrap_err(),
            StabilityError::EmptyPool
        );
        assert!(matches!(
            make_neighbor(&shards, 2, 0, &pool, 0),
            Err(StabilityError::Position { .. })
        ));
    }

    #[test]
    fn identical_pair_gives_zero_divergence() {
        let (p, model, shards, _) = setup(4, 6);
        let same = shards[1][2].clone();
        let pair = make_neighbor(&shards, 1, 2, &[same], 0).unwrap();
        let tr = coupled_run(&cfg(50, 0.5), &p, &model, &pair, &[], OutputIterate::Last).unwrap();
        assert!(tr.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(
            stability_estimate(std::slice::from_ref(&tr), &model, &shards[0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn tiny_step_gives_negligible_divergence() {
        let (p, model, shards, pool) = setup(3, 4);
        let pair = random_neighbor(&shards, &pool, 2).unwrap();
        let tr = coupled_run(&cfg(30, 1e-300), &p, &model, &pair, &[], OutputIterate::Last).unwrap();
        assert_eq!(tr.deltas[0], 0.0);
        assert!(tr.deltas.iter().all(|&d| d < 1e-290));
    }

    #[test]
    fn single_sample_shards_hit_every_step() {
        let (p, model, shards, pool) = setup(3, 1);
        let pair = random_neighbor(&shards, &pool, 4).unwrap();
        let tr = coupled_run(&cfg(5, 0.1), &p, &model, &pair, &[], OutputIterate::Last).unwrap();
        assert!(tr.deltas[1] > 0.0);
    }

    #[test]
    fn requires_shared_index() {
        let (p, model, shards, pool) = setup(2, 3);
        let pair = random_neighbor(&shards, &pool, 1).unwrap();
        let mut c = cfg(3, 0.1);
        c.sampling = SamplingMode::PerNode;
        assert_eq!(
            coupled_run(&c, &p, &model, &pair, &[], OutputIterate::Last).unwrap_err(),
            StabilityError::SamplingMode
        );
    }

    #[test]
    fn single_trace_single_probe_is_loss_difference() {
        let (p, model, shards, pool) = setup(2, 2);
        let pair = random_neighbor(&shards, &pool, 6).unwrap();
        let tr = coupled_run(&cfg(20, 0.5), &p, &model, &pair, &[], OutputIterate::Last).unwrap();
        let z = &pool[0];
        let direct = (model.loss(&tr.output, z).unwrap() - model.loss(&tr.output_prime, z).unwrap()).abs();
        let est = stability_estimate(std::slice::from_ref(&tr), &model, std::slice::from_ref(z)).unwrap();
        assert_eq!(est, direct);
    }

    #[test]
    fn gap_examples() {
        let (_, model, shards, _) = setup(2, 3);
        let all: Vec<Sample> = shards.iter().flatten().cloned().collect();
        let w = [0.3, -0.2, 0.1, 0.5];
        assert!(generalization_gap(&w, &model, &shards, &all).unwrap().abs() < 1e-15);
        assert_eq!(generalization_gap(&[0.0; 4], &model, &shards, &all[..1]).unwrap(), 0.0);
        assert!(generalization_gap(&w, &model, &shards, &[]).is_err());
    }

    #[test]
    fn averaged_output_flag() {
        let (p, model, shards, pool) = setup(2, 3);
        let pair = random_neighbor(&shards, &pool, 6).unwrap();
        let last = coupled_run(&cfg(10, 0.5), &p, &model, &pair, &[], OutputIterate::Last).unwrap();
        let avg = coupled_run(&cfg(10, 0.5), &p, &model, &pair, &[], OutputIterate::Averaged).unwrap();
        assert_eq!(last.deltas, avg.deltas);
        assert_ne!(last.output, avg.output);
        assert!((dist2(&avg.output, &avg.output_prime) - avg.averaged_delta.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn replicate_csv_layout() {
        let (p, model, shards, pool) = setup(2, 3);
        let mut c = cfg(4, 0.5);
        c.record_every = 2;
        let test = pool[..3].to_vec();
        let traces = run_replicates(&c, &p, &model, &shards, &pool[3..], &test, OutputIterate::Last, 2)
            .unwrap();
        let mut buf = Vec::new();
        write_replicates_csv(&traces, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPLICATE_HEADER);
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        let agg = aggregate(&traces);
        assert_eq!(agg.len(), 3);
        assert!(agg[0].gen_gap_mean.is_some());
    }
}

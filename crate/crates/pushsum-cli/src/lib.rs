//! Configuration-driven experiment runner for the `pushsum` simulator.
//!
//! Every command reads an [`ExperimentConfig`], derives all randomness from
//! `run.seed` and writes CSV or plot-data files into `output.dir`. Each file is
//! written to a temporary sibling and renamed into place.

pub mod config;
pub mod error;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use pushsum::bounds::{
    self, evaluate_all, optimal_stop_convex, optimal_stop_pl, random_params, BoundParams, BoundRow,
    DrawFamily, OptimalStopRow,
};
use pushsum::data_io::{self, holdout_split, load_libsvm, shard, synth_logistic, synth_pl, A9aLike, ShardedDataset};
use pushsum::engine::{run_training, RunData, SamplingMode, TrainConfig};
use pushsum::mixing::{build_mixing, spectral_profile, MixingMatrix, SpectralProfile};
use pushsum::numeric::{derive_seed, stream_rng};
use pushsum::objectives::{smoothness_info, LossModel, Sample};
use pushsum::schedule::StepSchedule;
use pushsum::stability::{aggregate, run_replicates, write_aggregate_csv, write_replicates_csv, AggregateRow};
use pushsum::topology::{build_topology, DirectedGraph, TopologyKind};

pub use config::ExperimentConfig;
use config::{DataSource, Metric, ModelKind, Panel, ScheduleKind};
pub use error::CliError;

const TAG_DATA: u64 = 0xDA7A;
const TAG_TRAIN: u64 = 0x7A1;
const TAG_STABILITY: u64 = 0x57AB;
const TAG_BOUNDS: u64 = 0xB0D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Topology,
    Train,
    Stability,
    Bounds,
    Sweep,
}

/// Runs `command` and returns the files it wrote, in write order.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    match command {
        Command::Topology => cmd_topology(config),
        Command::Train => cmd_train(config),
        Command::Stability => cmd_stability(config),
        Command::Bounds => cmd_bounds(config),
        Command::Sweep => cmd_sweep(config),
    }
}

/// Writes `path` through a temporary file in the same directory.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)
            .and_then(|()| w.flush())
            .map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

// Graphs

/// A named communication graph.
#[derive(Debug, Clone)]
pub struct NamedGraph {
    pub label: String,
    pub graph: DirectedGraph,
}

fn custom_graph(config: &ExperimentConfig) -> Result<Option<NamedGraph>, CliError> {
    let Some(path) = &config.topology.edge_list else {
        return Ok(None);
    };
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let graph = DirectedGraph::read_edge_list(io::BufReader::new(file)).map_err(|e| match e {
        pushsum::topology::TopologyError::Io(source) => CliError::io(path, source),
        other => CliError::Input {
            path: path.clone(),
            message: other.to_string(),
        },
    })?;
    Ok(Some(NamedGraph {
        label: "custom".into(),
        graph,
    }))
}

fn catalog_graph(kind: TopologyKind, m: usize) -> Result<NamedGraph, CliError> {
    Ok(NamedGraph {
        label: kind.name().to_string(),
        graph: build_topology(kind, m)?,
    })
}

/// The custom graph if one is configured, else the first `(kind, m)` pair.
fn primary_graph(config: &ExperimentConfig) -> Result<NamedGraph, CliError> {
    match custom_graph(config)? {
        Some(g) => Ok(g),
        None => catalog_graph(config.topology.kinds[0], config.topology.m[0]),
    }
}

/// Every configured graph: the custom one, or all `(kind, m)` pairs.
fn all_graphs(config: &ExperimentConfig) -> Result<Vec<NamedGraph>, CliError> {
    if let Some(g) = custom_graph(config)? {
        return Ok(vec![g]);
    }
    let mut out = Vec::new();
    for &kind in &config.topology.kinds {
        for &m in &config.topology.m {
            out.push(catalog_graph(kind, m)?);
        }
    }
    Ok(out)
}

// Data

/// Model plus sharded training data.
#[derive(Debug, Clone)]
pub struct Workload {
    pub model: LossModel,
    pub data: ShardedDataset,
}

fn read_libsvm(path: &Path, dim: Option<usize>) -> Result<(Vec<Sample>, usize), CliError> {
    let parsed = load_libsvm(path, dim).map_err(|e| CliError::data(path, e))?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok((parsed.samples, parsed.dim))
}

/// Full training and test sets before sharding, plus the feature dimension.
fn population(config: &ExperimentConfig) -> Result<(Vec<Sample>, Vec<Sample>, usize), CliError> {
    let mc = &config.model;
    let (train, test, dim) = match mc.data {
        DataSource::A9a | DataSource::Libsvm => {
            let expected = (mc.data == DataSource::A9a).then_some(data_io::A9A_DIM);
            match &mc.train_path {
                Some(path) => {
                    let (train, dim) = read_libsvm(path, expected)?;
                    let test = match &mc.test_path {
                        Some(tp) => Some(read_libsvm(tp, Some(dim))?.0),
                        None => None,
                    };
                    (train, test, dim)
                }
                None if mc.data == DataSource::A9a => {
                    let (train, test) = A9aLike::new(mc.population_seed).train_test(mc.population_seed);
                    (train, Some(test), data_io::A9A_DIM)
                }
                None => {
                    return Err(CliError::Config(
                        "model.data = libsvm needs model.train_path".into(),
                    ))
                }
            }
        }
        DataSource::Synthetic => {
            let samples = synth_logistic(mc.dim, mc.count, mc.margin, mc.population_seed)?;
            (samples, None, mc.dim)
        }
    };
    match test {
        Some(test) => Ok((train, test, dim)),
        None => {
            let (train, test) = holdout_split(&train, mc.test_fraction, mc.population_seed)?;
            Ok((train, test, dim))
        }
    }
}

fn model_for(config: &ExperimentConfig, dim: usize) -> Result<LossModel, CliError> {
    let mc = &config.model;
    Ok(match mc.kind {
        ModelKind::Logistic => LossModel::logistic(dim, mc.mu)?,
        ModelKind::Quadratic => match synth_pl(dim, mc.alpha, mc.l, mc.population_seed)? {
            LossModel::Quadratic(q) => LossModel::Quadratic(q.with_shift(mc.noise)),
            other => other,
        },
    })
}

/// Loads the configured data and deals it into `m` shards of `model.n` rows.
pub fn load_workload(config: &ExperimentConfig, m: usize) -> Result<Workload, CliError> {
    let (train, test, dim) = population(config)?;
    let model = model_for(config, dim)?;
    let data_seed = derive_seed(config.run.seed, &[TAG_DATA]);
    let data = shard(&train, dim, m, config.model.n, data_seed)?.with_test(test);
    Ok(Workload { model, data })
}

// Runs

fn schedule(config: &ExperimentConfig, scale: f64) -> Result<StepSchedule, CliError> {
    Ok(match config.schedule.kind {
        ScheduleKind::Constant => StepSchedule::constant(scale)?,
        ScheduleKind::Diminishing => StepSchedule::diminishing(scale)?,
    })
}

fn train_config(config: &ExperimentConfig, schedule: StepSchedule, seed: u64) -> TrainConfig {
    let rc = &config.run;
    TrainConfig {
        algorithm: rc.algorithm,
        iterations: rc.iterations,
        schedule,
        seed,
        sampling: rc.sampling,
        init: rc.init,
        projection_radius: rc.projection_radius,
        record_every: rc.record_every,
        evaluate_losses: rc.evaluate_losses,
    }
}

fn warn_large_step(workload: &Workload, schedule: &StepSchedule, radius: Option<f64>) {
    let train: Vec<Sample> = workload.data.train_samples().cloned().collect();
    if let Ok(info) = smoothness_info(&workload.model, &train, radius.unwrap_or(1.0)) {
        if let Some(msg) = schedule.convex_step_warning(info.l) {
            eprintln!("warning: {msg}");
        }
    }
}

fn out_path(config: &ExperimentConfig, name: &str) -> PathBuf {
    config.output.dir.join(name)
}

fn profile_rows(graphs: &[NamedGraph]) -> Result<Vec<(String, usize, SpectralProfile)>, CliError> {
    graphs
        .iter()
        .map(|g| Ok((g.label.clone(), g.graph.m(), spectral_profile(&g.graph)?)))
        .collect()
}

/// Writes one spectral profile row per configured graph to `topology.csv`.
pub fn cmd_topology(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let rows = profile_rows(&all_graphs(config)?)?;
    let path = out_path(config, "topology.csv");
    write_atomic(&path, |w| {
        writeln!(w, "{}", SpectralProfile::csv_header())?;
        for (label, m, p) in &rows {
            writeln!(
                w,
                "{label},{m},{},{},{},{}",
                p.delta, p.lambda, p.c_h, p.doubly_stochastic
            )?;
        }
        Ok(())
    })?;
    Ok(vec![path])
}

fn opt_str(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// One training run on the primary graph with the first step size: writes
/// `trajectory.csv` and `summary.txt`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let g = primary_graph(config)?;
    let p = build_mixing(&g.graph)?;
    let workload = load_workload(config, g.graph.m())?;
    let sched = schedule(config, config.schedule.gamma[0])?;
    warn_large_step(&workload, &sched, config.run.projection_radius);
    let tc = train_config(config, sched, derive_seed(config.run.seed, &[TAG_TRAIN]));
    let record = run_training(
        &tc,
        &p,
        &workload.model,
        RunData {
            shards: &workload.data.shards,
            test: &workload.data.test,
        },
    )?;

    let trajectory = out_path(config, "trajectory.csv");
    write_atomic(&trajectory, |w| record.write_csv(w))?;

    let last = record.rows.last();
    let summary = out_path(config, "summary.txt");
    write_atomic(&summary, |w| {
        writeln!(w, "topology = {}", g.label)?;
        writeln!(w, "m = {}", g.graph.m())?;
        writeln!(w, "n = {}", workload.data.n())?;
        writeln!(w, "schedule = {sched}")?;
        writeln!(w, "iterations = {}", tc.iterations)?;
        writeln!(w, "final_train_loss = {}", opt_str(last.and_then(|r| r.train_loss)))?;
        writeln!(w, "final_test_loss = {}", opt_str(last.and_then(|r| r.test_loss)))?;
        writeln!(w, "final_cons_max = {}", opt_str(last.map(|r| r.cons_max)))?;
        writeln!(w, "final_u_sum = {}", opt_str(last.map(|r| r.u_sum)))?;
        writeln!(w, "c_w0 = {}", record.c_w0)?;
        writeln!(w, "max_gradient_norm = {}", record.max_gradient_norm)?;
        writeln!(w, "max_iterate_norm = {}", record.max_iterate_norm)?;
        writeln!(w, "max_average_residual = {}", record.max_average_residual)
    })?;
    Ok(vec![trajectory, summary])
}

/// Coupled replicate runs for one graph and step size.
fn replicate_cell(
    config: &ExperimentConfig,
    p: &MixingMatrix,
    workload: &Workload,
    scale: f64,
    with_gaps: bool,
) -> Result<Vec<pushsum::stability::CoupledTrace>, CliError> {
    let mut tc = train_config(
        config,
        schedule(config, scale)?,
        derive_seed(config.run.seed, &[TAG_STABILITY]),
    );
    // Coupled runs share the sample index across nodes.
    tc.sampling = SamplingMode::SharedIndex;
    let test: &[Sample] = if with_gaps { &workload.data.test } else { &[] };
    Ok(run_replicates(
        &tc,
        p,
        &workload.model,
        &workload.data.shards,
        &workload.data.pool,
        test,
        config.stability.output,
        config.stability.replicates,
    )?)
}

/// Replicated neighbor-dataset runs: writes `stability_replicates.csv` and
/// `stability_aggregate.csv`.
pub fn cmd_stability(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let g = primary_graph(config)?;
    let p = build_mixing(&g.graph)?;
    let workload = load_workload(config, g.graph.m())?;
    let traces = replicate_cell(
        config,
        &p,
        &workload,
        config.schedule.gamma[0],
        config.run.evaluate_losses,
    )?;
    let per_replicate = out_path(config, "stability_replicates.csv");
    write_atomic(&per_replicate, |w| write_replicates_csv(&traces, w))?;
    let agg = out_path(config, "stability_aggregate.csv");
    let rows = aggregate(&traces);
    write_atomic(&agg, |w| write_aggregate_csv(&rows, w))?;
    Ok(vec![per_replicate, agg])
}

fn base_bound_params(config: &ExperimentConfig, schedule: StepSchedule) -> BoundParams {
    let b = &config.bounds;
    BoundParams {
        g: b.g,
        l: b.l,
        c: b.c,
        c_w0: b.c_w0,
        r: b.r,
        delta: b.delta,
        lambda: b.lambda,
        m: b.m,
        n: b.n,
        alpha: b.alpha,
        schedule,
        init_dist: b.init_dist,
    }
}

fn stops_for(p: &BoundParams, out: &mut Vec<OptimalStopRow>) -> Result<(), CliError> {
    out.push(OptimalStopRow {
        params: *p,
        kind: "convex",
        stop: optimal_stop_convex(p)?,
    });
    if p.alpha.is_some() {
        out.push(OptimalStopRow {
            params: *p,
            kind: "pl",
            stop: optimal_stop_pl(p)?,
        });
    }
    Ok(())
}

/// Bound evaluations over step sizes and horizons: writes `bounds.csv` and
/// `optimal_stop.csv`.
pub fn cmd_bounds(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let first = schedule(config, config.schedule.gamma[0])?;
    let mut bases = Vec::new();
    if config.bounds.from_topology {
        for (_, m, prof) in profile_rows(&all_graphs(config)?)? {
            bases.push(BoundParams {
                delta: prof.delta,
                lambda: prof.lambda,
                c: prof.c_h,
                m,
                ..base_bound_params(config, first)
            });
        }
    } else {
        bases.push(base_bound_params(config, first));
    }

    let mut rows: Vec<BoundRow> = Vec::new();
    let mut stops: Vec<OptimalStopRow> = Vec::new();
    for base in &bases {
        for &scale in &config.schedule.gamma {
            let p = base.with_schedule(schedule(config, scale)?);
            p.validate()?;
            for &t in &config.bounds.horizons {
                rows.push(evaluate_all(&p, t)?);
            }
            stops_for(&p, &mut stops)?;
        }
    }

    let mut rng = stream_rng(config.run.seed, &[TAG_BOUNDS]);
    let diminishing = config.schedule.kind == ScheduleKind::Diminishing;
    for _ in 0..config.bounds.random_draws {
        let (p, t) = random_params(&mut rng, diminishing, DrawFamily::Pl);
        rows.push(evaluate_all(&p, t)?);
        stops_for(&p, &mut stops)?;
    }

    let sweep = out_path(config, "bounds.csv");
    write_atomic(&sweep, |w| bounds::write_sweep_csv(w, &rows))?;
    let stop = out_path(config, "optimal_stop.csv");
    write_atomic(&stop, |w| bounds::write_optimal_stop_csv(w, &stops))?;
    Ok(vec![sweep, stop])
}

/// One series of a sweep panel.
struct Cell {
    label: String,
    graph: NamedGraph,
    scale: f64,
}

fn panel_name(panel: Panel) -> &'static str {
    match panel {
        Panel::Gamma => "gamma",
        Panel::Nodes => "m",
        Panel::Topology => "topology",
    }
}

fn panel_cells(config: &ExperimentConfig, panel: Panel) -> Result<Vec<Cell>, CliError> {
    let custom = custom_graph(config)?;
    let kind = config.topology.kinds[0];
    let m = config.topology.m[0];
    let gamma = config.schedule.gamma[0];
    let base_graph = || -> Result<NamedGraph, CliError> {
        match &custom {
            Some(g) => Ok(g.clone()),
            None => catalog_graph(kind, m),
        }
    };
    match panel {
        Panel::Gamma => config
            .schedule
            .gamma
            .iter()
            .map(|&scale| {
                Ok(Cell {
                    label: scale.to_string(),
                    graph: base_graph()?,
                    scale,
                })
            })
            .collect(),
        Panel::Nodes => {
            if let Some(g) = &custom {
                if config.topology.m.iter().any(|&mm| mm != g.graph.m()) {
                    return Err(CliError::Config(format!(
                        "panel m: topology.m grid conflicts with the {}-node edge list",
                        g.graph.m()
                    )));
                }
            }
            config
                .topology
                .m
                .iter()
                .map(|&mm| {
                    let graph = match &custom {
                        Some(g) => g.clone(),
                        None => catalog_graph(kind, mm)?,
                    };
                    Ok(Cell {
                        label: mm.to_string(),
                        graph,
                        scale: gamma,
                    })
                })
                .collect()
        }
        Panel::Topology => {
            if custom.is_some() {
                return Err(CliError::Config(
                    "panel topology: topology.kinds conflicts with topology.edge_list".into(),
                ));
            }
            config
                .topology
                .kinds
                .iter()
                .map(|&k| {
                    Ok(Cell {
                        label: k.name().to_string(),
                        graph: catalog_graph(k, m)?,
                        scale: gamma,
                    })
                })
                .collect()
        }
    }
}

/// `(t, mean, stderr)` points of the configured metric.
fn series(rows: &[AggregateRow], metric: Metric) -> Vec<(usize, f64, f64)> {
    rows.iter()
        .filter_map(|r| match metric {
            Metric::Delta => Some((r.t, r.delta_mean, r.delta_stderr)),
            Metric::GenGap => Some((r.t, r.gen_gap_mean?, r.gen_gap_stderr?)),
        })
        .collect()
}

/// Replicated stability runs over the `gamma`, `m` and `topology` panels;
/// writes `sweep/<panel>_<label>.dat` with columns `t mean stderr`.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut plan = Vec::new();
    for &panel in &config.stability.panels {
        let cells = panel_cells(config, panel)?;
        if cells.is_empty() {
            return Err(CliError::Config(format!("panel {} has an empty grid", panel_name(panel))));
        }
        plan.push((panel, cells));
    }

    let with_gaps = config.stability.metric == Metric::GenGap;
    let metric_name = match config.stability.metric {
        Metric::Delta => "delta",
        Metric::GenGap => "gen_gap",
    };
    let mut written = Vec::new();
    for (panel, cells) in plan {
        for cell in cells {
            let p = build_mixing(&cell.graph.graph)?;
            let workload = load_workload(config, cell.graph.graph.m())?;
            let traces = replicate_cell(config, &p, &workload, cell.scale, with_gaps)?;
            let points = series(&aggregate(&traces), config.stability.metric);
            let path = config
                .output
                .dir
                .join("sweep")
                .join(format!("{}_{}.dat", panel_name(panel), cell.label));
            write_atomic(&path, |w| {
                writeln!(w, "# t {metric_name}_mean {metric_name}_stderr")?;
                for (t, mean, se) in &points {
                    writeln!(w, "{t} {mean} {se}")?;
                }
                Ok(())
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

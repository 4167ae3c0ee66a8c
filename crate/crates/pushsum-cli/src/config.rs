//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Every key has a default; unknown
//! or repeated keys are errors. Relative paths resolve against the directory of
//! the configuration file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pushsum::engine::{Algorithm, Init, SamplingMode};
use pushsum::stability::OutputIterate;
use pushsum::topology::TopologyKind;

use crate::error::CliError;

const SECTIONS: [&str; 7] = [
    "topology",
    "model",
    "schedule",
    "run",
    "stability",
    "bounds",
    "output",
];

/// Source of training data.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// a9a from `model.train_path` / `model.test_path`, or a synthetic
    /// population with the same shape when no path is given.
    A9a,
    /// Any LIBSVM file given by `model.train_path`.
    Libsvm,
    /// Unit-sphere features with planted logistic labels.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Diminishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Parameter distance between the coupled runs.
    Delta,
    /// Test minus train loss of the base run.
    GenGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Gamma,
    Nodes,
    Topology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySection {
    /// `topology.kinds`, default `DiRing`.
    pub kinds: Vec<TopologyKind>,
    /// `topology.m`, default `32`.
    pub m: Vec<usize>,
    /// `topology.edge_list`: custom graph overriding `kinds`, default unset.
    pub edge_list: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    /// `model.kind`: `logistic` (default) or `quadratic`.
    pub kind: ModelKind,
    /// `model.data`: `a9a` (default), `libsvm` or `synthetic`.
    pub data: DataSource,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// `model.dim`: feature dimension for synthetic data and quadratics, default 123.
    pub dim: usize,
    /// `model.count`: synthetic sample count, default 40000.
    pub count: usize,
    /// `model.margin`: synthetic label sharpness, default 4.
    pub margin: f64,
    /// `model.n`: samples per node, default 1000.
    pub n: usize,
    /// `model.mu`: L2 weight of the logistic loss, default 1e-4.
    pub mu: f64,
    /// `model.alpha` / `model.l`: quadratic spectrum, defaults 1 and 4.
    pub alpha: f64,
    pub l: f64,
    /// `model.noise`: per-sample shift of the quadratic, default 0.5.
    pub noise: f64,
    /// `model.test_fraction`: carve-out when no test file exists, default 0.2.
    pub test_fraction: f64,
    /// `model.population_seed`: seed of the a9a-shaped population, default 0.
    pub population_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    /// `schedule.kind`: `constant` (default) or `diminishing`.
    pub kind: ScheduleKind,
    /// `schedule.gamma`: constant step sizes, or the scale `v` of `v/(t+1)`
    /// for diminishing steps. Default `0.01`; commands other than `bounds`
    /// and `sweep` use the first entry.
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    /// `run.iterations`, default 2000.
    pub iterations: usize,
    /// `run.seed`, default 0; `--seed` overrides.
    pub seed: u64,
    /// `run.algorithm`: `sgp` (default) or `dsgd`.
    pub algorithm: Algorithm,
    /// `run.sampling`: `per_node` (default) or `shared`.
    pub sampling: SamplingMode,
    /// `run.init`: `zero` (default) or `gaussian`.
    pub init: Init,
    /// `run.projection_radius`: default unset.
    pub projection_radius: Option<f64>,
    /// `run.record_every`: stride of recorded rows, default 10.
    pub record_every: usize,
    /// `run.evaluate_losses`: train/test losses and gaps at recorded rows,
    /// default true.
    pub evaluate_losses: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySection {
    /// `stability.replicates`, default 20.
    pub replicates: usize,
    /// `stability.output`: `last` (default) or `averaged`.
    pub output: OutputIterate,
    /// `stability.metric`: `delta` (default) or `gen_gap`, for sweep plot data.
    pub metric: Metric,
    /// `stability.panels`: sweep panels, default `gamma,m,topology`.
    pub panels: Vec<Panel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSection {
    pub g: f64,
    pub l: f64,
    pub c: f64,
    pub c_w0: f64,
    pub r: f64,
    /// `bounds.delta` / `bounds.lambda`: used unless `bounds.from_topology`.
    pub delta: f64,
    pub lambda: f64,
    pub m: usize,
    pub n: usize,
    pub alpha: Option<f64>,
    pub init_dist: Option<f64>,
    /// `bounds.horizons`: T values, default `1,10,100,1000,10000`.
    pub horizons: Vec<usize>,
    /// `bounds.from_topology`: take `delta`, `lambda`, `C`, `m` from each
    /// `(topology.kinds, topology.m)` pair, default false.
    pub from_topology: bool,
    /// `bounds.random_draws`: extra rows with random parameters, default 0.
    pub random_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    /// `output.dir`, default `out`.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub run: RunSection,
    pub stability: StabilitySection,
    pub bounds: BoundsSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::parse("", Path::new(".")).expect("defaults parse")
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Raw {
    entries: BTreeMap<String, Entry>,
    base: PathBuf,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        match self.take(key) {
            None => Ok(default),
            Some(e) => parse_value(key, &e),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.take(key).map(|e| parse_value(key, &e)).transpose()
    }

    fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let (text, line) = match self.take(key) {
            Some(e) => (e.value, e.line),
            None => (default.to_string(), 0),
        };
        let items: Vec<T> = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                parse_value(
                    key,
                    &Entry {
                        value: s.to_string(),
                        line,
                    },
                )
            })
            .collect::<Result<_, _>>()?;
        if items.is_empty() {
            return Err(CliError::Config(format!("{key}: list is empty")));
        }
        Ok(items)
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|e| self.base.join(e.value))
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Result<T, CliError> {
        let Some(e) = self.take(key) else {
            return Ok(default);
        };
        options
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(&e.value))
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!(
                    "line {}: {key} = `{}`, expected one of {}",
                    e.line,
                    e.value,
                    names.join(", ")
                ))
            })
    }
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T, CliError>
where
    T::Err: Display,
{
    e.value.parse().map_err(|err| {
        CliError::Config(format!("line {}: {key} = `{}`: {err}", e.line, e.value))
    })
}

fn tokenize(text: &str, base: &Path) -> Result<Raw, CliError> {
    let mut entries = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {line}: expected `section.key = value`")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        let Some((section, name)) = key.split_once('.') else {
            return Err(CliError::Config(format!("line {line}: key `{key}` has no section")));
        };
        if !SECTIONS.contains(&section) || name.is_empty() {
            return Err(CliError::Config(format!("line {line}: unknown key `{key}`")));
        }
        if entries.insert(key.clone(), Entry { value, line }).is_some() {
            return Err(CliError::Config(format!("line {line}: duplicate key `{key}`")));
        }
    }
    Ok(Raw {
        entries,
        base: base.to_path_buf(),
    })
}

impl ExperimentConfig {
    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut raw = tokenize(text, base)?;
        let config = ExperimentConfig {
            topology: TopologySection {
                kinds: raw.list("topology.kinds", "DiRing")?,
                m: raw.list("topology.m", "32")?,
                edge_list: raw.path("topology.edge_list"),
            },
            model: ModelSection {
                kind: raw.choice(
                    "model.kind",
                    ModelKind::Logistic,
                    &[("logistic", ModelKind::Logistic), ("quadratic", ModelKind::Quadratic)],
                )?,
                data: raw.choice(
                    "model.data",
                    DataKey::A9a,
                    &[
                        ("a9a", DataKey::A9a),
                        ("libsvm", DataKey::Libsvm),
                        ("synthetic", DataKey::Synthetic),
                    ],
                )?
                .into(),
                train_path: raw.path("model.train_path"),
                test_path: raw.path("model.test_path"),
                dim: raw.get("model.dim", 123)?,
                count: raw.get("model.count", 40_000)?,
                margin: raw.get("model.margin", 4.0)?,
                n: raw.get("model.n", 1000)?,
                mu: raw.get("model.mu", 1e-4)?,
                alpha: raw.get("model.alpha", 1.0)?,
                l: raw.get("model.l", 4.0)?,
                noise: raw.get("model.noise", 0.5)?,
                test_fraction: raw.get("model.test_fraction", 0.2)?,
                population_seed: raw.get("model.population_seed", 0)?,
            },
            schedule: ScheduleSection {
                kind: raw.choice(
                    "schedule.kind",
                    ScheduleKind::Constant,
                    &[
                        ("constant", ScheduleKind::Constant),
                        ("diminishing", ScheduleKind::Diminishing),
                    ],
                )?,
                gamma: raw.list("schedule.gamma", "0.01")?,
            },
            run: RunSection {
                iterations: raw.get("run.iterations", 2000)?,
                seed: raw.get("run.seed", 0)?,
                algorithm: raw.choice(
                    "run.algorithm",
                    Algorithm::Sgp,
                    &[("sgp", Algorithm::Sgp), ("dsgd", Algorithm::Dsgd)],
                )?,
                sampling: raw.choice(
                    "run.sampling",
                    SamplingMode::PerNode,
                    &[
                        ("per_node", SamplingMode::PerNode),
                        ("shared", SamplingMode::SharedIndex),
                    ],
                )?,
                init: {
                    let gaussian = raw.choice("run.init", false, &[("zero", false), ("gaussian", true)])?;
                    let scale: f64 = raw.get("run.init_scale", 1.0)?;
                    if gaussian {
                        Init::Gaussian { scale }
                    } else {
                        Init::Zero
                    }
                },
                projection_radius: raw.opt("run.projection_radius")?,
                record_every: raw.get("run.record_every", 10)?,
                evaluate_losses: raw.get("run.evaluate_losses", true)?,
            },
            stability: StabilitySection {
                replicates: raw.get("stability.replicates", 20)?,
                output: raw.choice(
                    "stability.output",
                    OutputIterate::Last,
                    &[("last", OutputIterate::Last), ("averaged", OutputIterate::Averaged)],
                )?,
                metric: raw.choice(
                    "stability.metric",
                    Metric::Delta,
                    &[("delta", Metric::Delta), ("gen_gap", Metric::GenGap)],
                )?,
                panels: {
                    let names: Vec<String> = raw.list("stability.panels", "gamma,m,topology")?;
                    names
                        .iter()
                        .map(|n| match n.to_ascii_lowercase().as_str() {
                            "gamma" => Ok(Panel::Gamma),
                            "m" => Ok(Panel::Nodes),
                            "topology" => Ok(Panel::Topology),
                            other => Err(CliError::Config(format!(
                                "stability.panels: unknown panel `{other}`"
                            ))),
                        })
                        .collect::<Result<_, _>>()?
                },
            },
            bounds: BoundsSection {
                g: raw.get("bounds.g", 1.0)?,
                l: raw.get("bounds.l", 1.0)?,
                c: raw.get("bounds.c", 1.0)?,
                c_w0: raw.get("bounds.c_w0", 0.0)?,
                r: raw.get("bounds.r", 1.0)?,
                delta: raw.get("bounds.delta", 1.0 / 32.0)?,
                lambda: raw.get("bounds.lambda", 0.5)?,
                m: raw.get("bounds.m", 32)?,
                n: raw.get("bounds.n", 1000)?,
                alpha: raw.opt("bounds.alpha")?,
                init_dist: raw.opt("bounds.init_dist")?,
                horizons: raw.list("bounds.horizons", "1,10,100,1000,10000")?,
                from_topology: raw.get("bounds.from_topology", false)?,
                random_draws: raw.get("bounds.random_draws", 0)?,
            },
            output: OutputSection {
                dir: raw.path("output.dir").unwrap_or_else(|| base.join("out")),
            },
        };
        if let Some((key, e)) = raw.entries.iter().next() {
            return Err(CliError::Config(format!("line {}: unknown key `{key}`", e.line)));
        }
        config.check()?;
        Ok(config)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.run.iterations == 0 {
            return bad("run.iterations must be positive".into());
        }
        if self.run.record_every == 0 {
            return bad("run.record_every must be positive".into());
        }
        if self.model.n == 0 {
            return bad("model.n must be positive".into());
        }
        if self.stability.replicates == 0 {
            return bad("stability.replicates must be positive".into());
        }
        if let Some(g) = self.schedule.gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("schedule.gamma: step {g} must be positive"));
        }
        if let Init::Gaussian { scale } = self.run.init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return bad(format!("run.init_scale = {scale} must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum DataKey {
    A9a,
    Libsvm,
    Synthetic,
}

impl From<DataKey> for DataSource {
    fn from(k: DataKey) -> Self {
        match k {
            DataKey::A9a => DataSource::A9a,
            DataKey::Libsvm => DataSource::Libsvm,
            DataKey::Synthetic => DataSource::Synthetic,
        }
    }
}

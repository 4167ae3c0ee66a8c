//! Dataset ingestion, synthetic generators and sharding across nodes.
//!
//! LIBSVM lines look like `+1 3:1 11:0.5`: a label followed by 1-based
//! `index:value` pairs. Indices are 0-based everywhere inside the crate.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numeric::{norm2, stream_rng};
use crate::objectives::{sigmoid, LossModel, Quadratic, Sample, SparseVector};

/// Feature dimension of the a9a benchmark.
pub const A9A_DIM: usize = 123;
/// Rows in the a9a training file.
pub const A9A_TRAIN_COUNT: usize = 32_561;
/// Rows in the a9a test file.
pub const A9A_TEST_COUNT: usize = 16_281;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: feature index {index} exceeds expected dimension {expected}")]
    DimensionExceeded {
        line: usize,
        index: usize,
        expected: usize,
    },
    #[error("need {need} samples, have {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed LIBSVM content.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmData {
    pub samples: Vec<Sample>,
    /// `expected_d` when given, else the largest index seen.
    pub dim: usize,
    /// Non-fatal issues such as descending indices, with line numbers.
    pub warnings: Vec<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses LIBSVM text. Labels `+1`/`1`, `-1` and `0` (read as `-1`) are accepted.
pub fn parse_libsvm<R: BufRead>(input: R, expected_d: Option<usize>) -> Result<LibsvmData, DataError> {
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut max_index = 0usize;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label_val: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("non-numeric label `{label_tok}`")))?;
        let label = if label_val == 1.0 {
            1.0
        } else if label_val == -1.0 || label_val == 0.0 {
            -1.0
        } else {
            return Err(parse_err(
                lineno,
                format!("label `{label_tok}` is not +1, -1 or 0"),
            ));
        };
        let mut pairs: Vec<(u32, f64)> = Vec::new();
        let mut descending = false;
        for tok in tokens {
            let (i_str, v_str) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected index:value, found `{tok}`")))?;
            let index: i64 = i_str
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric index `{i_str}`")))?;
            if index <= 0 {
                return Err(parse_err(lineno, format!("index {index} must be positive")));
            }
            let value: f64 = v_str
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric value `{v_str}`")))?;
            if !value.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value `{v_str}`")));
            }
            let index = index as usize;
            if let Some(d) = expected_d {
                if index > d {
                    return Err(DataError::DimensionExceeded {
                        line: lineno,
                        index,
                        expected: d,
                    });
                }
            }
            if index > u32::MAX as usize {
                return Err(parse_err(lineno, format!("index {index} too large")));
            }
            if let Some(&(prev, _)) = pairs.last() {
                if index as u32 - 1 <= prev {
                    descending = true;
                }
            }
            max_index = max_index.max(index);
            pairs.push((index as u32 - 1, value));
        }
        if descending {
            pairs.sort_by_key(|&(i, _)| i);
            if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(parse_err(lineno, "duplicate feature index"));
            }
            warnings.push(format!("line {lineno}: indices not ascending; sorted"));
        }
        let (indices, values) = pairs.into_iter().unzip();
        samples.push(Sample::new(SparseVector::new(indices, values), label));
    }
    Ok(LibsvmData {
        samples,
        dim: expected_d.unwrap_or(max_index),
        warnings,
    })
}

/// Reads a LIBSVM file from disk.
pub fn load_libsvm(path: &Path, expected_d: Option<usize>) -> Result<LibsvmData, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })?;
    parse_libsvm(std::io::BufReader::new(file), expected_d)
}

/// Writes samples in LIBSVM form. Values use the shortest round-trip decimal,
/// so parsing the output reproduces every sample bit for bit.
pub fn write_libsvm<W: Write>(samples: &[Sample], mut out: W) -> std::io::Result<()> {
    for s in samples {
        out.write_all(if s.label > 0.0 { b"+1" } else { b"-1" })?;
        for (&i, &v) in s.features.indices.iter().zip(&s.features.values) {
            write!(out, " {}:{}", i as u64 + 1, v)?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Node shards of equal size plus the leftover pool and an optional test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedDataset {
    pub dim: usize,
    pub shards: Vec<Vec<Sample>>,
    /// Source row of every shard entry.
    pub shard_rows: Vec<Vec<usize>>,
    pub pool: Vec<Sample>,
    pub pool_rows: Vec<usize>,
    pub test: Vec<Sample>,
}

impl ShardedDataset {
    pub fn m(&self) -> usize {
        self.shards.len()
    }

    pub fn n(&self) -> usize {
        self.shards.first().map_or(0, Vec::len)
    }

    pub fn with_test(mut self, test: Vec<Sample>) -> Self {
        self.test = test;
        self
    }

    /// All training samples, shard by shard.
    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.shards.iter().flatten()
    }

    /// Manifest rows `shard,row`; pool rows use the shard id `pool`.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "shard,row")?;
        for (k, rows) in self.shard_rows.iter().enumerate() {
            for r in rows {
                writeln!(out, "{k},{r}")?;
            }
        }
        for r in &self.pool_rows {
            writeln!(out, "pool,{r}")?;
        }
        Ok(())
    }
}

/// Permutes rows by `seed`, deals the first `m n` round-robin into `m` shards
/// and keeps the rest as the held-out pool.
pub fn shard(samples: &[Sample], dim: usize, m: usize, n: usize, seed: u64) -> Result<ShardedDataset, DataError> {
    if m == 0 || n == 0 {
        return Err(DataError::InvalidArgument(format!(
            "m and n must be positive (m = {m}, n = {n})"
        )));
    }
    let need = m * n;
    if need > samples.len() {
        return Err(DataError::InsufficientSamples {
            need,
            have: samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream_rng(seed, &[0x5A4D]));
    let mut shards = vec![Vec::with_capacity(n); m];
    let mut shard_rows = vec![Vec::with_capacity(n); m];
    for (k, &row) in order[..need].iter().enumerate() {
        shards[k % m].push(samples[row].clone());
        shard_rows[k % m].push(row);
    }
    let pool_rows = order[need..].to_vec();
    let pool = pool_rows.iter().map(|&r| samples[r].clone()).collect();
    Ok(ShardedDataset {
        dim,
        shards,
        shard_rows,
        pool,
        pool_rows,
        test: Vec::new(),
    })
}

/// Splits off a random `fraction` of rows as a test set: `(train, test)`.
pub fn holdout_split(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(DataError::InvalidArgument(format!(
            "holdout fraction {fraction} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream_rng(seed, &[0x401D]));
    let n_test = (samples.len() as f64 * fraction).round() as usize;
    let test = order[..n_test].iter().map(|&r| samples[r].clone()).collect();
    let train = order[n_test..].iter().map(|&r| samples[r].clone()).collect();
    Ok((train, test))
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d);
        let n = norm2(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Features uniform on the unit sphere; labels drawn from a planted separator
/// with `P(+1) = sigmoid(margin * w*.x)`. An infinite margin gives the sign.
pub fn synth_logistic(d: usize, count: usize, margin: f64, seed: u64) -> Result<Vec<Sample>, DataError> {
    if d == 0 || count == 0 {
        return Err(DataError::InvalidArgument(format!(
            "d and count must be positive (d = {d}, count = {count})"
        )));
    }
    if margin.is_nan() || margin < 0.0 {
        return Err(DataError::InvalidArgument(format!("margin {margin} must be >= 0")));
    }
    let mut rng = stream_rng(seed, &[0x106]);
    let planted = unit_vec(&mut rng, d);
    Ok((0..count)
        .map(|_| {
            let x = unit_vec(&mut rng, d);
            let score: f64 = x.iter().zip(&planted).map(|(a, b)| a * b).sum();
            let label = if margin.is_infinite() {
                if score >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else if rng.random::<f64>() < sigmoid(margin * score) {
                1.0
            } else {
                -1.0
            };
            Sample::new(SparseVector::from_dense(&x), label)
        })
        .collect())
}

/// Quadratic with spectrum evenly spaced over `[alpha, l]`, a random rotation
/// and a random linear term.
pub fn synth_pl(d: usize, alpha: f64, l: f64, seed: u64) -> Result<LossModel, DataError> {
    if d == 0 {
        return Err(DataError::InvalidArgument("dimension must be positive".into()));
    }
    if !(alpha > 0.0 && alpha <= l && l.is_finite()) {
        return Err(DataError::InvalidArgument(format!(
            "spectrum needs 0 < alpha <= L (alpha = {alpha}, L = {l})"
        )));
    }
    if d == 1 && alpha != l {
        return Err(DataError::InvalidArgument(
            "a one-dimensional spectrum needs alpha = L".into(),
        ));
    }
    let spectrum: Vec<f64> = (0..d)
        .map(|k| {
            if d == 1 {
                alpha
            } else {
                alpha + (l - alpha) * k as f64 / (d - 1) as f64
            }
        })
        .collect();
    let mut rng = stream_rng(seed, &[0x9D]);
    let g = DMatrix::from_row_slice(d, d, &gaussian_vec(&mut rng, d * d));
    let q = g.qr().q();
    let a_full = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum)) * q.transpose();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = 0.5 * (a_full[(i, j)] + a_full[(j, i)]);
        }
    }
    let b = gaussian_vec(&mut rng, d);
    let quad = Quadratic::new(d, a, b)
        .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    Ok(LossModel::Quadratic(quad))
}

/// Number of one-hot slots per attribute in the a9a encoding.
const A9A_GROUPS: [usize; 14] = [5, 8, 5, 16, 5, 7, 14, 6, 5, 2, 2, 2, 5, 41];

/// Population model for data shaped like a9a: 14 categorical attributes
/// one-hot encoded into 123 binary features, about 24% positive labels.
///
/// Train and test draws from one population share category frequencies and the
/// planted labelling model.
#[derive(Debug, Clone)]
pub struct A9aLike {
    cumulative: Vec<Vec<f64>>,
    missing: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl A9aLike {
    pub fn new(population_seed: u64) -> Self {
        let mut rng = stream_rng(population_seed, &[0xA9A]);
        let mut cumulative = Vec::with_capacity(A9A_GROUPS.len());
        let mut missing = Vec::with_capacity(A9A_GROUPS.len());
        for (g, &size) in A9A_GROUPS.iter().enumerate() {
            let raw: Vec<f64> = (0..size)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (1.2 * z).exp()
                })
                .collect();
            let total: f64 = raw.iter().sum();
            let mut acc = 0.0;
            cumulative.push(
                raw.iter()
                    .map(|x| {
                        acc += x / total;
                        acc
                    })
                    .collect(),
            );
            // workclass, occupation and native-country have missing entries in a9a
            missing.push(if matches!(g, 1 | 6 | 13) { 0.04 } else { 0.0 });
        }
        let weights: Vec<f64> = (0..A9A_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.9 * z
            })
            .collect();
        let mut pop = Self {
            cumulative,
            missing,
            weights,
            bias: 0.0,
        };
        pop.bias = pop.calibrate_bias(0.24, &mut rng);
        pop
    }

    fn draw_features(&self, rng: &mut impl Rng) -> SparseVector {
        let mut indices = Vec::with_capacity(A9A_GROUPS.len());
        let mut offset = 0u32;
        for (g, cum) in self.cumulative.iter().enumerate() {
            let skip = self.missing[g] > 0.0 && rng.random::<f64>() < self.missing[g];
            let u: f64 = rng.random();
            if !skip {
                let k = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
                indices.push(offset + k as u32);
            }
            offset += cum.len() as u32;
        }
        let values = vec![1.0; indices.len()];
        SparseVector::new(indices, values)
    }

    fn score(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    fn calibrate_bias(&self, positive_rate: f64, rng: &mut impl Rng) -> f64 {
        let scores: Vec<f64> = (0..20_000)
            .map(|_| self.score(&self.draw_features(rng)))
            .collect();
        let rate = |b: f64| scores.iter().map(|s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < positive_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Draws `count` labelled samples from the stream `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Sample> {
        let mut rng = stream_rng(seed, &[0xA9B]);
        (0..count)
            .map(|_| {
                let x = self.draw_features(&mut rng);
                let p = sigmoid(self.score(&x));
                let label = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
                Sample::new(x, label)
            })
            .collect()
    }

    /// Training and test sets with the a9a row counts.
    pub fn train_test(&self, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
        (
            self.sample(A9A_TRAIN_COUNT, seed),
            self.sample(A9A_TEST_COUNT, seed ^ 0x7E57),
        )
    }
}

//! Skip-gram with negative sampling over arbitrary (center, context) id pairs.
//!
//! Centers and contexts live in separate id spaces so the same engine trains
//! word/node embeddings (both spaces are the node set) and paragraph vectors
//! (centers are documents, contexts are words).
//!
//! Per pair the objective maximized is
//! `ln σ(u·v⁺) + Σ_k ln σ(−u·v⁻_k)` with `u` the center's input row and `v`
//! context output rows; negatives come from the context unigram distribution
//! raised to `noise_exponent`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, TextError};
use crate::util::mix_seed;

pub type Pair = (u32, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    /// Starting step size, decayed linearly to `min_learning_rate`.
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub noise_exponent: f64,
    pub seed: u64,
    /// 1 = deterministic. More workers run lock-free updates in parallel and
    /// the result then depends on thread scheduling.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negative: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            noise_exponent: 0.75,
            seed: 1,
            workers: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<(), TextError> {
        let bad = |m: &str| Err(TextError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("embedding dim must be positive");
        }
        if self.negative == 0 {
            return bad("negative samples must be at least 1");
        }
        if !(self.learning_rate > 0.0) || self.min_learning_rate < 0.0 {
            return bad("learning rates must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SgnsModel {
    pub input: EmbeddingMatrix,
    pub output: EmbeddingMatrix,
    /// Unnormalized noise weights over context ids.
    pub noise_weights: Vec<f64>,
    /// Mean training objective loss (negated log-likelihood) per epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss on the monitored pairs after each epoch, if any were given.
    pub held_out_losses: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-pair objective `ln σ(u·pos) + Σ ln σ(−u·neg)`.
pub fn pair_objective(center: &[f64], positive: &[f64], negatives: &[&[f64]]) -> f64 {
    log_sigmoid(dot(center, positive))
        + negatives
            .iter()
            .map(|n| log_sigmoid(-dot(center, n)))
            .sum::<f64>()
}

/// Analytic gradient of [`pair_objective`] with respect to the center row,
/// the positive row and each negative row.
pub fn pair_gradient(
    center: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let mut d_center = vec![0.0; center.len()];
    let gp = 1.0 - sigmoid(dot(center, positive));
    let d_pos: Vec<f64> = center.iter().map(|u| gp * u).collect();
    for (dc, p) in d_center.iter_mut().zip(positive) {
        *dc += gp * p;
    }
    let d_negs = negatives
        .iter()
        .map(|n| {
            let gn = -sigmoid(dot(center, n));
            for (dc, x) in d_center.iter_mut().zip(n.iter()) {
                *dc += gn * x;
            }
            center.iter().map(|u| gn * u).collect()
        })
        .collect();
    (d_center, d_pos, d_negs)
}

/// Read/update access to embedding rows.
pub(crate) trait Rows {
    fn read(&self, row: usize, out: &mut [f64]);
    fn add_scaled(&self, row: usize, scale: f64, delta: &[f64]);
}

/// A plain matrix is a frozen row source.
impl Rows for EmbeddingMatrix {
    fn read(&self, row: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(row));
    }

    fn add_scaled(&self, _row: usize, _scale: f64, _delta: &[f64]) {
        unreachable!("frozen rows are never updated")
    }
}

/// Row storage shared between workers. Relaxed atomics keep concurrent
/// updates free of data races while staying lock-free; with one worker the
/// arithmetic is identical to plain `f64` storage.
pub(crate) struct SharedRows {
    cols: usize,
    cells: Vec<AtomicU64>,
}

impl SharedRows {
    pub(crate) fn from_matrix(m: &EmbeddingMatrix) -> Self {
        Self {
            cols: m.cols(),
            cells: m.as_slice().iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    pub(crate) fn into_matrix(self, rows: usize) -> EmbeddingMatrix {
        let cols = self.cols;
        EmbeddingMatrix::from_vec(
            rows,
            cols,
            self.cells
                .into_iter()
                .map(|c| f64::from_bits(c.into_inner()))
                .collect(),
        )
    }
}

impl Rows for SharedRows {
    fn read(&self, row: usize, out: &mut [f64]) {
        let base = row * self.cols;
        for (o, c) in out.iter_mut().zip(&self.cells[base..base + self.cols]) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn add_scaled(&self, row: usize, scale: f64, delta: &[f64]) {
        let base = row * self.cols;
        for (c, d) in self.cells[base..base + self.cols].iter().zip(delta) {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) + scale * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

/// Scratch buffers for one worker.
pub(crate) struct Scratch {
    center: Vec<f64>,
    context: Vec<f64>,
    grad_center: Vec<f64>,
    negatives: Vec<usize>,
}

impl Scratch {
    pub(crate) fn new(dim: usize, negative: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            context: vec![0.0; dim],
            grad_center: vec![0.0; dim],
            negatives: Vec::with_capacity(negative),
        }
    }
}

/// One stochastic ascent step on a single pair. Returns the pair's loss
/// (negated objective) evaluated before the update, or `None` if a
/// non-finite score appeared. Negatives equal to the target, or to the center
/// when `skip_center` is set, are dropped rather than redrawn.
pub(crate) fn step_pair<R: rand::Rng, I: Rows, O: Rows>(
    input: &I,
    output: &O,
    center: usize,
    target: usize,
    lr: f64,
    negative: usize,
    noise: &WeightedIndex<f64>,
    rng: &mut R,
    scratch: &mut Scratch,
    update_output: bool,
    skip_center: bool,
) -> Option<f64> {
    scratch.negatives.clear();
    for _ in 0..negative {
        let n = noise.sample(rng);
        if n != target && !(skip_center && n == center) {
            scratch.negatives.push(n);
        }
    }
    input.read(center, &mut scratch.center);
    scratch.grad_center.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let contexts = std::iter::once((target, 1.0)).chain(scratch.negatives.iter().map(|n| (*n, 0.0)));
    for (ctx, label) in contexts {
        output.read(ctx, &mut scratch.context);
        let score = dot(&scratch.center, &scratch.context);
        if !score.is_finite() {
            return None;
        }
        loss -= if label > 0.0 {
            log_sigmoid(score)
        } else {
            log_sigmoid(-score)
        };
        let g = label - sigmoid(score);
        for (gc, v) in scratch.grad_center.iter_mut().zip(&scratch.context) {
            *gc += g * v;
        }
        if update_output {
            output.add_scaled(ctx, lr * g, &scratch.center);
        }
    }
    input.add_scaled(center, lr, &scratch.grad_center);
    Some(loss)
}

/// Unigram counts of each context id raised to `exponent`.
pub fn noise_weights(pairs: &[Pair], num_contexts: usize, exponent: f64) -> Vec<f64> {
    let mut counts = vec![0u64; num_contexts];
    for (_, c) in pairs {
        counts[*c as usize] += 1;
    }
    counts
        .into_iter()
        .map(|c| if c == 0 { 0.0 } else { (c as f64).powf(exponent) })
        .collect()
}

pub(crate) fn init_input(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 / dim as f64;
    let dist = Uniform::new(-half, half).expect("finite bounds");
    EmbeddingMatrix::from_vec(rows, dim, (0..rows * dim).map(|_| dist.sample(&mut rng)).collect())
}

/// Centers and contexts in separate id spaces.
pub fn train_sgns(
    pairs: &[Pair],
    num_centers: usize,
    num_contexts: usize,
    config: &SgnsConfig,
) -> Result<SgnsModel, TextError> {
    train_sgns_monitored(pairs, num_centers, num_contexts, config, &[])
}

/// Centers and contexts drawn from one id space (words, graph nodes). An id
/// is never used as a negative for itself, since it trivially occurs in its
/// own neighborhood.
pub fn train_sgns_shared(pairs: &[Pair], num_ids: usize, config: &SgnsConfig) -> Result<SgnsModel, TextError> {
    train(pairs, num_ids, num_ids, config, &[], true)
}

/// As [`train_sgns`], additionally recording the mean loss on `held_out`
/// after every epoch (fixed negatives, no updates).
pub fn train_sgns_monitored(
    pairs: &[Pair],
    num_centers: usize,
    num_contexts: usize,
    config: &SgnsConfig,
    held_out: &[Pair],
) -> Result<SgnsModel, TextError> {
    train(pairs, num_centers, num_contexts, config, held_out, false)
}

fn train(
    pairs: &[Pair],
    num_centers: usize,
    num_contexts: usize,
    config: &SgnsConfig,
    held_out: &[Pair],
    shared: bool,
) -> Result<SgnsModel, TextError> {
    config.validate()?;
    for &(c, o) in pairs.iter().chain(held_out) {
        if c as usize >= num_centers || o as usize >= num_contexts {
            return Err(TextError::IdOutOfRange {
                center: c,
                context: o,
                num_centers,
                num_contexts,
            });
        }
    }
    let input = init_input(num_centers, config.dim, config.seed);
    let output = EmbeddingMatrix::zeros(num_contexts, config.dim);
    let weights = noise_weights(pairs, num_contexts, config.noise_exponent);
    if pairs.is_empty() {
        return Ok(SgnsModel {
            input,
            output,
            noise_weights: weights,
            epoch_losses: Vec::new(),
            held_out_losses: Vec::new(),
        });
    }
    let noise = WeightedIndex::new(&weights).map_err(|e| TextError::InvalidConfig(e.to_string()))?;
    let input = SharedRows::from_matrix(&input);
    let output = SharedRows::from_matrix(&output);

    let total = (pairs.len() * config.epochs).max(1) as f64;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut held_out_losses = Vec::new();
    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1 + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let offset = epoch * pairs.len();
        let workers = config.workers.min(order.len()).max(1);
        let chunk = order.len().div_ceil(workers);
        let results: Vec<Result<f64, TextError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = order
                .chunks(chunk)
                .enumerate()
                .map(|(w, slice)| {
                    let (input, output, noise) = (&input, &output, &noise);
                    let start = offset + w * chunk;
                    let run = move || {
                        let seed = mix_seed(config.seed, ((epoch as u64) << 16) | (w as u64 + 1) << 8);
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let mut scratch = Scratch::new(config.dim, config.negative);
                        let mut loss = 0.0;
                        for (i, &p) in slice.iter().enumerate() {
                            let progress = (start + i) as f64 / total;
                            let lr = (config.learning_rate * (1.0 - progress))
                                .max(config.min_learning_rate);
                            let (c, o) = pairs[p];
                            loss += step_pair(
                                input,
                                output,
                                c as usize,
                                o as usize,
                                lr,
                                config.negative,
                                noise,
                                &mut rng,
                                &mut scratch,
                                true,
                                shared,
                            )
                            .ok_or(TextError::NonFinite {
                                epoch,
                                pair_index: p,
                                center: c,
                                context: o,
                            })?;
                        }
                        Ok(loss)
                    };
                    if workers == 1 {
                        Err(run)
                    } else {
                        Ok(scope.spawn(run))
                    }
                })
                .collect();
            handles
                .into_iter()
                .map(|h| match h {
                    Ok(handle) => handle.join().expect("sgns worker panicked"),
                    Err(run) => run(),
                })
                .collect()
        });
        let mut loss = 0.0;
        for r in results {
            loss += r?;
        }
        epoch_losses.push(loss / pairs.len() as f64);
        if !held_out.is_empty() {
            held_out_losses.push(held_out_loss(&input, &output, held_out, &noise, config, shared));
        }
    }
    Ok(SgnsModel {
        input: input.into_matrix(num_centers),
        output: output.into_matrix(num_contexts),
        noise_weights: weights,
        epoch_losses,
        held_out_losses,
    })
}

fn held_out_loss(
    input: &SharedRows,
    output: &SharedRows,
    pairs: &[Pair],
    noise: &WeightedIndex<f64>,
    config: &SgnsConfig,
    shared: bool,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u64::MAX));
    let mut u = vec![0.0; config.dim];
    let mut v = vec![0.0; config.dim];
    let mut total = 0.0;
    for &(c, o) in pairs {
        input.read(c as usize, &mut u);
        output.read(o as usize, &mut v);
        total -= log_sigmoid(dot(&u, &v));
        for _ in 0..config.negative {
            let n = noise.sample(&mut rng);
            if n == o as usize || (shared && n == c as usize) {
                continue;
            }
            output.read(n, &mut v);
            total -= log_sigmoid(-dot(&u, &v));
        }
    }
    total / pairs.len() as f64
}

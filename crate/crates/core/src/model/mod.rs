//! Multi-entry network: one ReLU branch per feature view, concatenation,
//! optional post-combination layers and a softmax head.

mod checkpoint;
mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{CsrMatrix, FeatureSet, ViewMatrix};
use crate::geo::Partition;
use crate::util::mix_seed;

pub use checkpoint::{load_checkpoint, meta_path, save_checkpoint, CheckpointMeta};
pub use train::{accuracy, train, write_training_log, Dataset, EpochLog, TrainConfig, TrainOutcome};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Pass-through (no hidden layer) sparse views above this width are refused
/// rather than densified.
pub const MAX_DENSIFY: usize = 10_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("view `{view}`: expected {expected} columns, got {found}")]
    DimensionMismatch {
        view: String,
        expected: usize,
        found: usize,
    },
    #[error("view `{view}`: expected {expected} rows, got {found}")]
    RowMismatch {
        view: String,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} input views, got {found}")]
    ViewCount { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss}); last good snapshot from epoch {snapshot_epoch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        snapshot_epoch: usize,
        snapshot: Box<Model>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub view: String,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl BranchSpec {
    pub fn new(view: impl Into<String>, input_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            view: view.into(),
            input_dim,
            hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub post_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.branches.is_empty() {
            return bad("no branches".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if self.branches[..i].iter().any(|o| o.view == b.view) {
                return bad(format!("view `{}` appears twice", b.view));
            }
            if b.input_dim == 0 || b.hidden.contains(&0) {
                return bad(format!("view `{}` has a zero-width layer", b.view));
            }
        }
        if self.post_hidden.contains(&0) {
            return bad("zero-width post-combination layer".into());
        }
        Ok(())
    }

    pub fn concat_dim(&self) -> usize {
        self.branches.iter().map(BranchSpec::output_dim).sum()
    }

    pub fn views(&self) -> Vec<&str> {
        self.branches.iter().map(|b| b.view.as_str()).collect()
    }

    /// Same spec with one branch dropped.
    pub fn without_view(&self, view: &str) -> Result<Self, ModelError> {
        if !self.branches.iter().any(|b| b.view == view) {
            return Err(ModelError::InvalidSpec(format!("no branch for view `{view}`")));
        }
        let spec = Self {
            branches: self.branches.iter().filter(|b| b.view != view).cloned().collect(),
            post_hidden: self.post_hidden.clone(),
            num_classes: self.num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Layer shapes (fan-in, fan-out) in canonical order: branches, post, output.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for b in &self.branches {
            let mut fan_in = b.input_dim;
            for &h in &b.hidden {
                shapes.push((fan_in, h));
                fan_in = h;
            }
        }
        let mut fan_in = self.concat_dim();
        for &h in &self.post_hidden {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes.push((fan_in, self.num_classes));
        shapes
    }
}

/// Affine layer `x W + b` with `W` stored fan-in by fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Parameters (or gradients, or optimizer moments) of a model, laid out as
/// branch layers, post-combination layers, then the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub branches: Vec<Vec<Dense>>,
    pub post: Vec<Dense>,
    pub output: Dense,
}

impl Params {
    fn zeros(spec: &ModelSpec) -> Self {
        let mut shapes = spec.layer_shapes().into_iter();
        let mut take = || {
            let (i, o) = shapes.next().expect("shape per layer");
            Dense::zeros(i, o)
        };
        let branches = spec.branches.iter().map(|b| b.hidden.iter().map(|_| take()).collect()).collect();
        let post = spec.post_hidden.iter().map(|_| take()).collect();
        let output = take();
        Self { branches, post, output }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.branches.iter().flatten().chain(&self.post).chain(std::iter::once(&self.output))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.branches
            .iter_mut()
            .flatten()
            .chain(&mut self.post)
            .chain(std::iter::once(&mut self.output))
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(Dense::num_parameters).sum()
    }

    /// Every parameter in canonical order (per layer: weights row-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in self.layers() {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), ModelError> {
        if values.len() != self.num_parameters() {
            return Err(ModelError::Format(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for (p, v) in l.weights.iter_mut().chain(l.bias.iter_mut()).zip(&mut it) {
                *p = *v;
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.layers().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Params,
}

/// Intermediate activations kept for backpropagation.
struct Trace {
    /// Post-ReLU output of each hidden layer, per branch.
    branch_acts: Vec<Vec<Array2<f64>>>,
    concat: Array2<f64>,
    post_acts: Vec<Array2<f64>>,
    logits: Array2<f64>,
    probs: Array2<f64>,
}

impl Model {
    /// He-style uniform init: weights in ±sqrt(6 / fan_in), biases zero.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut params = Params::zeros(&spec);
        for (k, layer) in params.layers_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
            let limit = (6.0 / layer.weights.nrows() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = Params::zeros(&spec);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Params) -> Result<Self, ModelError> {
        spec.validate()?;
        let expected = Params::zeros(&spec);
        let same_shapes = expected.layers().count() == params.layers().count()
            && expected
                .layers()
                .zip(params.layers())
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len());
        if !same_shapes {
            return Err(ModelError::InvalidSpec("parameter shapes do not match the spec".into()));
        }
        if !params.all_finite() {
            return Err(ModelError::InvalidSpec("non-finite parameter".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Drop one view's branch along with its slice of the first layer after
    /// the concatenation.
    pub fn remove_branch(&self, view: &str) -> Result<Self, ModelError> {
        let spec = self.spec.without_view(view)?;
        let k = self.spec.branches.iter().position(|b| b.view == view).expect("checked by without_view");
        let start: usize = self.spec.branches[..k].iter().map(BranchSpec::output_dim).sum();
        let width = self.spec.branches[k].output_dim();
        let mut params = self.params.clone();
        params.branches.remove(k);
        let first = params.post.first_mut().unwrap_or(&mut params.output);
        let keep: Vec<usize> = (0..first.weights.nrows()).filter(|r| !(start..start + width).contains(r)).collect();
        first.weights = first.weights.select(Axis(0), &keep);
        Self::from_params(spec, params)
    }

    fn check_inputs(&self, inputs: &[ViewMatrix]) -> Result<usize, ModelError> {
        if inputs.len() != self.spec.branches.len() {
            return Err(ModelError::ViewCount {
                expected: self.spec.branches.len(),
                found: inputs.len(),
            });
        }
        let n = inputs[0].rows();
        for (b, x) in self.spec.branches.iter().zip(inputs) {
            if x.cols() != b.input_dim {
                return Err(ModelError::DimensionMismatch {
                    view: b.view.clone(),
                    expected: b.input_dim,
                    found: x.cols(),
                });
            }
            if x.rows() != n {
                return Err(ModelError::RowMismatch {
                    view: b.view.clone(),
                    expected: n,
                    found: x.rows(),
                });
            }
            if b.hidden.is_empty() && x.is_sparse() && x.cols() > MAX_DENSIFY {
                return Err(ModelError::InvalidSpec(format!(
                    "sparse view `{}` with {} columns needs a hidden layer",
                    b.view,
                    x.cols()
                )));
            }
        }
        Ok(n)
    }

    fn trace(&self, inputs: &[ViewMatrix]) -> Result<Trace, ModelError> {
        self.check_inputs(inputs)?;
        let mut branch_acts = Vec::with_capacity(inputs.len());
        let mut outs = Vec::with_capacity(inputs.len());
        for (layers, x) in self.params.branches.iter().zip(inputs) {
            let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
            for (l, layer) in layers.iter().enumerate() {
                let z = if l == 0 {
                    affine_input(x, layer)
                } else {
                    acts[l - 1].dot(&layer.weights) + &layer.bias
                };
                acts.push(z.mapv_into(relu));
            }
            outs.push(acts.last().cloned().unwrap_or_else(|| x.to_dense()));
            branch_acts.push(acts);
        }
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        let concat = ndarray::concatenate(Axis(1), &views).expect("branch outputs share row count");
        let mut post_acts: Vec<Array2<f64>> = Vec::with_capacity(self.params.post.len());
        for layer in &self.params.post {
            let input = post_acts.last().unwrap_or(&concat);
            post_acts.push((input.dot(&layer.weights) + &layer.bias).mapv_into(relu));
        }
        let head_in = post_acts.last().unwrap_or(&concat);
        let logits = head_in.dot(&self.params.output.weights) + &self.params.output.bias;
        Ok(Trace {
            branch_acts,
            concat,
            post_acts,
            probs: softmax_rows(logits.clone()),
            logits,
        })
    }

    /// Class probabilities, one row per user. `inputs` follow the spec's branch order.
    pub fn forward(&self, inputs: &[ViewMatrix]) -> Result<Array2<f64>, ModelError> {
        Ok(self.trace(inputs)?.probs)
    }

    /// Logits before the softmax.
    pub fn logits(&self, inputs: &[ViewMatrix]) -> Result<Array2<f64>, ModelError> {
        Ok(self.trace(inputs)?.logits)
    }

    /// Which hidden units are active, flattened in layer order. Finite
    /// differences are only meaningful where this does not change.
    pub fn relu_pattern(&self, inputs: &[ViewMatrix]) -> Result<Vec<bool>, ModelError> {
        let t = self.trace(inputs)?;
        Ok(t.branch_acts
            .iter()
            .flatten()
            .chain(&t.post_acts)
            .flat_map(|a| a.iter().map(|v| *v > 0.0).collect::<Vec<_>>())
            .collect())
    }

    /// Argmax class per row, lowest index on ties.
    pub fn predict(&self, inputs: &[ViewMatrix]) -> Result<Vec<usize>, ModelError> {
        Ok(self.forward(inputs)?.rows().into_iter().map(|r| argmax(r.as_slice().expect("standard layout"))).collect())
    }

    /// Cross-entropy summed over rows plus `l2 * ||W_out||^2`, and the
    /// gradient of every parameter. Label rows must sum to one.
    pub fn loss_and_gradients(
        &self,
        inputs: &[ViewMatrix],
        labels: &Array2<f64>,
        l2: f64,
    ) -> Result<(f64, Params), ModelError> {
        let t = self.trace(inputs)?;
        if labels.dim() != t.probs.dim() {
            return Err(ModelError::InvalidSpec(format!(
                "labels are {:?}, probabilities are {:?}",
                labels.dim(),
                t.probs.dim()
            )));
        }
        let w_out = &self.params.output.weights;
        let mut loss = l2 * w_out.iter().map(|w| w * w).sum::<f64>();
        for (y, p) in labels.iter().zip(t.probs.iter()) {
            if *y != 0.0 {
                loss -= y * p.clamp(PROB_FLOOR, 1.0).ln();
            }
        }

        let mut grads = Params::zeros(&self.spec);
        let dlogits = &t.probs - labels;
        let head_in = t.post_acts.last().unwrap_or(&t.concat);
        grads.output.weights = head_in.t().dot(&dlogits) + &(w_out * (2.0 * l2));
        grads.output.bias = dlogits.sum_axis(Axis(0));
        let mut delta = dlogits.dot(&w_out.t());

        for l in (0..self.params.post.len()).rev() {
            let dz = relu_backward(delta, &t.post_acts[l]);
            let input = if l == 0 { &t.concat } else { &t.post_acts[l - 1] };
            grads.post[l].weights = input.t().dot(&dz);
            grads.post[l].bias = dz.sum_axis(Axis(0));
            delta = dz.dot(&self.params.post[l].weights.t());
        }

        let mut offset = 0;
        for (k, b) in self.spec.branches.iter().enumerate() {
            let width = b.output_dim();
            let mut d = delta.slice(s![.., offset..offset + width]).to_owned();
            offset += width;
            let layers = &self.params.branches[k];
            let acts = &t.branch_acts[k];
            for l in (0..layers.len()).rev() {
                let dz = relu_backward(d, &acts[l]);
                grads.branches[k][l].weights = if l == 0 {
                    input_t_dot(&inputs[k], &dz)
                } else {
                    acts[l - 1].t().dot(&dz)
                };
                grads.branches[k][l].bias = dz.sum_axis(Axis(0));
                d = if l == 0 { dz } else { dz.dot(&layers[l].weights.t()) };
            }
        }
        Ok((loss, grads))
    }

    /// Predict one user's class and coordinate. Views absent from `views`
    /// are replaced by zero rows and reported in `missing_views`.
    pub fn predict_user(
        &self,
        partition: &Partition,
        views: &BTreeMap<String, ViewMatrix>,
    ) -> Result<UserPrediction, ModelError> {
        let mut missing_views = Vec::new();
        let inputs: Vec<ViewMatrix> = self
            .spec
            .branches
            .iter()
            .map(|b| match views.get(&b.view) {
                Some(m) => m.clone(),
                None => {
                    missing_views.push(b.view.clone());
                    ViewMatrix::Sparse(CsrMatrix::from_rows(b.input_dim, &[crate::text::SparseVector::zeros(b.input_dim)]))
                }
            })
            .collect();
        if inputs.iter().any(|x| x.rows() != 1) {
            return Err(ModelError::InvalidSpec("predict_user takes exactly one row per view".into()));
        }
        let class_id = self.predict(&inputs)?[0];
        if class_id >= partition.num_classes() {
            return Err(ModelError::LabelOutOfRange {
                label: class_id,
                num_classes: partition.num_classes(),
            });
        }
        let (lat, lon) = partition.centroid(class_id);
        Ok(UserPrediction {
            class_id,
            lat,
            lon,
            missing_views,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPrediction {
    pub class_id: usize,
    pub lat: f64,
    pub lon: f64,
    pub missing_views: Vec<String>,
}

/// Input blocks for `spec`'s branches, taken from `features` at `rows`.
pub fn select_inputs(spec: &ModelSpec, features: &FeatureSet, rows: &[usize]) -> Result<Vec<ViewMatrix>, ModelError> {
    spec.branches
        .iter()
        .map(|b| {
            features
                .view(&b.view)
                .map(|v| v.matrix.select_rows(rows))
                .map_err(|e| ModelError::InvalidSpec(e.to_string()))
        })
        .collect()
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn relu_backward(mut delta: Array2<f64>, act: &Array2<f64>) -> Array2<f64> {
    ndarray::Zip::from(&mut delta).and(act).for_each(|d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
    delta
}

fn affine_input(x: &ViewMatrix, layer: &Dense) -> Array2<f64> {
    match x {
        ViewMatrix::Dense(m) => m.dot(&layer.weights) + &layer.bias,
        ViewMatrix::Sparse(m) => {
            let mut out = Array2::zeros((m.rows(), layer.weights.ncols()));
            for (r, mut row) in out.rows_mut().into_iter().enumerate() {
                for (c, v) in m.row(r) {
                    row.scaled_add(v, &layer.weights.row(c));
                }
                row += &layer.bias;
            }
            out
        }
    }
}

/// `x^T dz` without densifying a sparse `x`.
fn input_t_dot(x: &ViewMatrix, dz: &Array2<f64>) -> Array2<f64> {
    match x {
        ViewMatrix::Dense(m) => m.t().dot(dz),
        ViewMatrix::Sparse(m) => {
            let mut out = Array2::zeros((m.cols(), dz.ncols()));
            for r in 0..m.rows() {
                let d = dz.row(r);
                for (c, v) in m.row(r) {
                    out.row_mut(c).scaled_add(v, &d);
                }
            }
            out
        }
    }
}

pub fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One-hot label matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), num_classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

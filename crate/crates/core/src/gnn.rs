//! Commute-weighted, direction-aware message passing: per-direction mean
//! aggregators scaled by proximity weights, a linear head, full-batch
//! gradient descent with decoupled weight decay, and a finite-difference
//! gradient check. Single-threaded with fixed accumulation order, so runs
//! are bit-reproducible for a fixed seed.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commute::ProximityWeights;
use crate::data::{FeatureMatrix, LabelVector, SplitAssignment};
use crate::error::{Error, Result};
use crate::graph::DiGraph;
use crate::sparse::CsrMatrix;

/// Commute computation backend selected in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CommuteBackend {
    /// Laplacian pseudoinverse factors evaluated per edge (the default).
    #[default]
    Dilap,
    /// Dense fundamental-matrix route with ground-truth Markov-chain
    /// semantics; validation scale only.
    DenseOracle,
}

impl CommuteBackend {
    pub fn tag(&self) -> &'static str {
        match self {
            CommuteBackend::Dilap => "dilap",
            CommuteBackend::DenseOracle => "dense_oracle",
        }
    }
}

impl std::str::FromStr for CommuteBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dilap" => Ok(CommuteBackend::Dilap),
            "dense_oracle" => Ok(CommuteBackend::DenseOracle),
            other => Err(Error::InvalidParam(format!(
                "unknown backend '{other}' (expected 'dilap' or 'dense_oracle')"
            ))),
        }
    }
}

/// One message-passing layer: separate transforms for the self, incoming,
/// and outgoing paths, each with a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_self: DMatrix<f64>,
    pub w_in: DMatrix<f64>,
    pub w_out: DMatrix<f64>,
    pub b_self: DVector<f64>,
    pub b_in: DVector<f64>,
    pub b_out: DVector<f64>,
}

impl LayerParams {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w_self: DMatrix::zeros(d_in, d_out),
            w_in: DMatrix::zeros(d_in, d_out),
            w_out: DMatrix::zeros(d_in, d_out),
            b_self: DVector::zeros(d_out),
            b_in: DVector::zeros(d_out),
            b_out: DVector::zeros(d_out),
        }
    }
}

/// Full parameter set: `L` layers plus a linear classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
}

impl ModelParams {
    /// Initializes weight matrices uniformly in `(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in))` from the run seed; biases start at zero. The fill
    /// order is fixed, so a seed pins every parameter.
    pub fn init(dims: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParam(
                "need at least input and one layer dimension".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) || num_classes == 0 {
            return Err(Error::InvalidParam("zero-sized dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |d_in: usize, d_out: usize| {
            let bound = 1.0 / (d_in as f64).sqrt();
            DMatrix::from_fn(d_in, d_out, |_, _| rng.random_range(-bound..bound))
        };
        let mut layers = Vec::new();
        for win in dims.windows(2) {
            let (d_in, d_out) = (win[0], win[1]);
            layers.push(LayerParams {
                w_self: uniform(d_in, d_out),
                w_in: uniform(d_in, d_out),
                w_out: uniform(d_in, d_out),
                b_self: DVector::zeros(d_out),
                b_in: DVector::zeros(d_out),
                b_out: DVector::zeros(d_out),
            });
        }
        let d_last = *dims.last().unwrap();
        let head_w = uniform(d_last, num_classes);
        Ok(Self {
            layers,
            head_w,
            head_b: DVector::zeros(num_classes),
        })
    }

    /// Zero-valued parameters with the same shapes; used as a gradient
    /// accumulator.
    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.w_self.nrows(), l.w_self.ncols()))
                .collect(),
            head_w: DMatrix::zeros(self.head_w.nrows(), self.head_w.ncols()),
            head_b: DVector::zeros(self.head_b.len()),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w_self.nrows()];
        dims.extend(self.layers.iter().map(|l| l.w_self.ncols()));
        dims
    }

    pub fn num_classes(&self) -> usize {
        self.head_w.ncols()
    }

    fn blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::new();
        for l in &self.layers {
            blocks.push(l.w_self.as_slice());
            blocks.push(l.w_in.as_slice());
            blocks.push(l.w_out.as_slice());
            blocks.push(l.b_self.as_slice());
            blocks.push(l.b_in.as_slice());
            blocks.push(l.b_out.as_slice());
        }
        blocks.push(self.head_w.as_slice());
        blocks.push(self.head_b.as_slice());
        blocks
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = Vec::new();
        for l in &mut self.layers {
            blocks.push(l.w_self.as_mut_slice());
            blocks.push(l.w_in.as_mut_slice());
            blocks.push(l.w_out.as_mut_slice());
            blocks.push(l.b_self.as_mut_slice());
            blocks.push(l.b_in.as_mut_slice());
            blocks.push(l.b_out.as_mut_slice());
        }
        blocks.push(self.head_w.as_mut_slice());
        blocks.push(self.head_b.as_mut_slice());
        blocks
    }

    pub fn flat_len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn get_flat(&self, mut idx: usize) -> f64 {
        for block in self.blocks() {
            if idx < block.len() {
                return block[idx];
            }
            idx -= block.len();
        }
        panic!("flat index out of range");
    }

    fn set_flat(&mut self, mut idx: usize, value: f64) {
        for block in self.blocks_mut() {
            if idx < block.len() {
                block[idx] = value;
                return;
            }
            idx -= block.len();
        }
        panic!("flat index out of range");
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub rank_q: usize,
    pub backend: CommuteBackend,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 200,
            seed: 0,
            rank_q: 5,
            backend: CommuteBackend::Dilap,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidParam("layers must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidParam("hidden must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam("learning rate must be > 0".into()));
        }
        if self.rank_q == 0 {
            return Err(Error::InvalidParam("rank q must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the validation split is empty.
    pub val_accuracy: f64,
}

pub type TrainHistory = Vec<EpochStats>;

/// Precomputed weighted aggregation structure for a (graph, weights) pair.
struct Propagation {
    a_in: CsrMatrix,
    a_out: CsrMatrix,
    inv_in: DVector<f64>,
    inv_out: DVector<f64>,
    has_in: Vec<bool>,
    has_out: Vec<bool>,
    inv_k: DVector<f64>,
}

impl Propagation {
    fn new(g: &DiGraph, w: &ProximityWeights) -> Result<Self> {
        let n = g.num_nodes();
        let mut rows_in = Vec::with_capacity(n);
        let mut rows_out = Vec::with_capacity(n);
        let mut inv_in = DVector::zeros(n);
        let mut inv_out = DVector::zeros(n);
        let mut has_in = vec![false; n];
        let mut has_out = vec![false; n];
        let mut inv_k = DVector::zeros(n);
        for i in 0..n {
            let inn = g.in_neighbors(i);
            let mut row = Vec::with_capacity(inn.len());
            for &j in inn {
                let w_ij = w.in_weight(i, j).ok_or(Error::MissingWeight {
                    node: i,
                    neighbor: j,
                })?;
                row.push((j, w_ij));
            }
            if !row.is_empty() {
                has_in[i] = true;
                inv_in[i] = 1.0 / row.len() as f64;
            }
            rows_in.push(row);

            let out = g.out_neighbors(i);
            let mut row = Vec::with_capacity(out.len());
            for &j in out {
                let w_ij = w.out_weight(i, j).ok_or(Error::MissingWeight {
                    node: i,
                    neighbor: j,
                })?;
                row.push((j, w_ij));
            }
            if !row.is_empty() {
                has_out[i] = true;
                inv_out[i] = 1.0 / row.len() as f64;
            }
            rows_out.push(row);

            let k = 1 + has_in[i] as usize + has_out[i] as usize;
            inv_k[i] = 1.0 / k as f64;
        }
        Ok(Self {
            a_in: CsrMatrix::from_rows(n, n, rows_in),
            a_out: CsrMatrix::from_rows(n, n, rows_out),
            inv_in,
            inv_out,
            has_in,
            has_out,
            inv_k,
        })
    }
}

fn scale_rows(m: &mut DMatrix<f64>, factors: &DVector<f64>) {
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            m[(i, k)] *= factors[i];
        }
    }
}

fn add_bias(m: &mut DMatrix<f64>, bias: &DVector<f64>, mask: Option<&[bool]>) {
    for i in 0..m.nrows() {
        if mask.map_or(true, |mk| mk[i]) {
            for k in 0..m.ncols() {
                m[(i, k)] += bias[k];
            }
        }
    }
}

struct LayerCache {
    input: DMatrix<f64>,
    agg_in: DMatrix<f64>,
    agg_out: DMatrix<f64>,
    pre: DMatrix<f64>,
}

fn layer_forward(h: &DMatrix<f64>, layer: &LayerParams, prop: &Propagation) -> LayerCache {
    let mut agg_in = prop.a_in.mul_dense(h);
    scale_rows(&mut agg_in, &prop.inv_in);
    let mut agg_out = prop.a_out.mul_dense(h);
    scale_rows(&mut agg_out, &prop.inv_out);

    let mut s = h * &layer.w_self;
    add_bias(&mut s, &layer.b_self, None);
    let mut m_in = &agg_in * &layer.w_in;
    add_bias(&mut m_in, &layer.b_in, Some(&prop.has_in));
    let mut m_out = &agg_out * &layer.w_out;
    add_bias(&mut m_out, &layer.b_out, Some(&prop.has_out));

    let mut pre = s + m_in + m_out;
    scale_rows(&mut pre, &prop.inv_k);
    LayerCache {
        input: h.clone(),
        agg_in,
        agg_out,
        pre,
    }
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn check_shapes(params: &ModelParams, g: &DiGraph, x: &FeatureMatrix) -> Result<()> {
    if x.nrows() != g.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{} feature rows for a graph with {} nodes",
                x.nrows(),
                g.num_nodes()
            ),
        });
    }
    if params.layers[0].w_self.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "first layer expects dimension {}, features have {}",
                params.layers[0].w_self.nrows(),
                x.ncols()
            ),
        });
    }
    Ok(())
}

/// One commute-weighted layer (no activation): per-direction weighted means
/// combined with the self transform by a mean over nonempty contributions.
pub fn commute_layer(
    h_prev: &DMatrix<f64>,
    g: &DiGraph,
    w: &ProximityWeights,
    layer: &LayerParams,
) -> Result<DMatrix<f64>> {
    if h_prev.nrows() != g.num_nodes() || h_prev.ncols() != layer.w_self.nrows() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "layer input is {}x{}, expected {}x{}",
                h_prev.nrows(),
                h_prev.ncols(),
                g.num_nodes(),
                layer.w_self.nrows()
            ),
        });
    }
    let prop = Propagation::new(g, w)?;
    Ok(layer_forward(h_prev, layer, &prop).pre)
}

fn forward_with(
    params: &ModelParams,
    prop: &Propagation,
    x: &FeatureMatrix,
) -> (DMatrix<f64>, Vec<LayerCache>, DMatrix<f64>) {
    let num_layers = params.layers.len();
    let mut h = x.clone();
    let mut caches = Vec::with_capacity(num_layers);
    for (idx, layer) in params.layers.iter().enumerate() {
        let cache = layer_forward(&h, layer, prop);
        h = if idx + 1 < num_layers {
            relu(&cache.pre)
        } else {
            cache.pre.clone()
        };
        caches.push(cache);
    }
    let mut logits = &h * &params.head_w;
    add_bias(&mut logits, &params.head_b, None);
    (logits, caches, h)
}

/// Stacked layers with a rectifier between them (none after the last), then
/// the linear head. Returns pre-softmax logits.
pub fn forward(
    params: &ModelParams,
    g: &DiGraph,
    x: &FeatureMatrix,
    w: &ProximityWeights,
) -> Result<DMatrix<f64>> {
    check_shapes(params, g, x)?;
    let prop = Propagation::new(g, w)?;
    Ok(forward_with(params, &prop, x).0)
}

/// Direction-aware forward pass with unweighted mean aggregation: the
/// degenerate case the commute-weighted layer reduces to when every
/// proximity weight is 1. Kept as an independent loop-based implementation.
pub fn dirgnn_forward(params: &ModelParams, g: &DiGraph, x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    check_shapes(params, g, x)?;
    let n = g.num_nodes();
    let num_layers = params.layers.len();
    let mut h = x.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        let d = h.ncols();
        let mut agg_in = DMatrix::zeros(n, d);
        let mut agg_out = DMatrix::zeros(n, d);
        let mut has_in = vec![false; n];
        let mut has_out = vec![false; n];
        for i in 0..n {
            let inn = g.in_neighbors(i);
            if !inn.is_empty() {
                has_in[i] = true;
                let inv = 1.0 / inn.len() as f64;
                for k in 0..d {
                    let mut acc = 0.0;
                    for &j in inn {
                        acc += h[(j, k)];
                    }
                    agg_in[(i, k)] = acc * inv;
                }
            }
            let out = g.out_neighbors(i);
            if !out.is_empty() {
                has_out[i] = true;
                let inv = 1.0 / out.len() as f64;
                for k in 0..d {
                    let mut acc = 0.0;
                    for &j in out {
                        acc += h[(j, k)];
                    }
                    agg_out[(i, k)] = acc * inv;
                }
            }
        }
        let mut s = &h * &layer.w_self;
        add_bias(&mut s, &layer.b_self, None);
        let mut m_in = &agg_in * &layer.w_in;
        add_bias(&mut m_in, &layer.b_in, Some(&has_in));
        let mut m_out = &agg_out * &layer.w_out;
        add_bias(&mut m_out, &layer.b_out, Some(&has_out));
        let mut pre = s + m_in + m_out;
        for i in 0..n {
            let k = 1 + has_in[i] as usize + has_out[i] as usize;
            let inv = 1.0 / k as f64;
            for c in 0..pre.ncols() {
                pre[(i, c)] *= inv;
            }
        }
        h = if idx + 1 < num_layers { relu(&pre) } else { pre };
    }
    let mut logits = &h * &params.head_w;
    add_bias(&mut logits, &params.head_b, None);
    Ok(logits)
}

/// Mean softmax cross-entropy over `nodes` and its gradient w.r.t. logits
/// (zero rows elsewhere).
fn softmax_cross_entropy(
    logits: &DMatrix<f64>,
    labels: &LabelVector,
    nodes: &[usize],
) -> (f64, DMatrix<f64>) {
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    let inv = 1.0 / nodes.len() as f64;
    let mut loss = 0.0;
    for &i in nodes {
        let row = logits.row(i);
        let max = row.max();
        let mut denom = 0.0;
        for k in 0..row.len() {
            denom += (row[k] - max).exp();
        }
        let y = labels[i];
        loss += -(row[y] - max - denom.ln());
        for k in 0..row.len() {
            let p = (row[k] - max).exp() / denom;
            grad[(i, k)] = (p - if k == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    (loss * inv, grad)
}

fn backward(
    params: &ModelParams,
    prop: &Propagation,
    caches: &[LayerCache],
    head_input: &DMatrix<f64>,
    dlogits: &DMatrix<f64>,
) -> ModelParams {
    let mut grads = params.zeros_like();
    grads.head_w = head_input.transpose() * dlogits;
    for k in 0..grads.head_b.len() {
        grads.head_b[k] = dlogits.column(k).sum();
    }
    let mut dh = dlogits * params.head_w.transpose();

    let num_layers = params.layers.len();
    for idx in (0..num_layers).rev() {
        let cache = &caches[idx];
        if idx + 1 < num_layers {
            // Activation sits between this layer's output and the next
            // layer's input.
            for i in 0..dh.nrows() {
                for c in 0..dh.ncols() {
                    if cache.pre[(i, c)] <= 0.0 {
                        dh[(i, c)] = 0.0;
                    }
                }
            }
        }
        let mut gz = dh.clone();
        scale_rows(&mut gz, &prop.inv_k);

        let layer = &params.layers[idx];
        let g = &mut grads.layers[idx];
        g.w_self = cache.input.transpose() * &gz;
        g.w_in = cache.agg_in.transpose() * &gz;
        g.w_out = cache.agg_out.transpose() * &gz;
        for k in 0..g.b_self.len() {
            g.b_self[k] = gz.column(k).sum();
            let mut acc_in = 0.0;
            let mut acc_out = 0.0;
            for i in 0..gz.nrows() {
                if prop.has_in[i] {
                    acc_in += gz[(i, k)];
                }
                if prop.has_out[i] {
                    acc_out += gz[(i, k)];
                }
            }
            g.b_in[k] = acc_in;
            g.b_out[k] = acc_out;
        }

        let mut d_in = &gz * layer.w_in.transpose();
        scale_rows(&mut d_in, &prop.inv_in);
        let mut d_out = &gz * layer.w_out.transpose();
        scale_rows(&mut d_out, &prop.inv_out);
        dh = &gz * layer.w_self.transpose()
            + prop.a_in.tr_mul_dense(&d_in)
            + prop.a_out.tr_mul_dense(&d_out);
    }
    grads
}

fn apply_update(params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64) {
    // Decoupled weight decay on the matrices; biases decay-free.
    let shrink = 1.0 - lr * weight_decay;
    for (l, g) in params.layers.iter_mut().zip(&grads.layers) {
        l.w_self = &l.w_self * shrink - &g.w_self * lr;
        l.w_in = &l.w_in * shrink - &g.w_in * lr;
        l.w_out = &l.w_out * shrink - &g.w_out * lr;
        l.b_self -= &g.b_self * lr;
        l.b_in -= &g.b_in * lr;
        l.b_out -= &g.b_out * lr;
    }
    params.head_w = &params.head_w * shrink - &grads.head_w * lr;
    params.head_b -= &grads.head_b * lr;
}

fn accuracy_of(logits: &DMatrix<f64>, labels: &LabelVector, split: &[usize]) -> f64 {
    let mut correct = 0usize;
    for &i in split {
        let row = logits.row(i);
        let mut best = 0usize;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / split.len() as f64
}

/// Full-batch gradient descent on softmax cross-entropy over the train
/// split. Deterministic for a fixed seed; history records per-epoch train
/// loss and validation accuracy (computed from the same forward pass).
pub fn train(
    g: &DiGraph,
    x: &FeatureMatrix,
    labels: &LabelVector,
    splits: &SplitAssignment,
    w: &ProximityWeights,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    if splits.train.is_empty() {
        return Err(Error::EmptySplit { split: "train" });
    }
    if labels.len() != g.num_nodes() {
        return Err(Error::MissingLabel {
            node: labels.len().min(g.num_nodes()),
        });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut dims = vec![x.ncols()];
    dims.extend(std::iter::repeat(cfg.hidden).take(cfg.layers));
    let mut params = ModelParams::init(&dims, num_classes, cfg.seed)?;
    check_shapes(&params, g, x)?;
    let prop = Propagation::new(g, w)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (logits, caches, head_input) = forward_with(&params, &prop, x);
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels, &splits.train);
        let val_accuracy = if splits.val.is_empty() {
            f64::NAN
        } else {
            accuracy_of(&logits, labels, &splits.val)
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss,
            val_accuracy,
        });
        let grads = backward(&params, &prop, &caches, &head_input, &dlogits);
        apply_update(&mut params, &grads, cfg.lr, cfg.weight_decay);
    }
    Ok((params, history))
}

/// Fraction of split nodes whose argmax logit equals the label; argmax ties
/// resolve to the lowest class index.
pub fn evaluate(
    params: &ModelParams,
    g: &DiGraph,
    x: &FeatureMatrix,
    labels: &LabelVector,
    split: &[usize],
    w: &ProximityWeights,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptySplit { split: "eval" });
    }
    let logits = forward(params, g, x, w)?;
    Ok(accuracy_of(&logits, labels, split))
}

/// Compares analytic parameter gradients against central finite differences
/// (step `1e-5`) on a small instance, returning the maximum relative error.
/// Entries whose magnitudes both fall below `1e-6` are compared absolutely
/// against that floor.
pub fn gradient_check(
    params: &ModelParams,
    g: &DiGraph,
    x: &FeatureMatrix,
    labels: &LabelVector,
    train_nodes: &[usize],
    w: &ProximityWeights,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    if train_nodes.is_empty() {
        return Err(Error::EmptySplit { split: "train" });
    }
    check_shapes(params, g, x)?;
    let prop = Propagation::new(g, w)?;

    let (logits, caches, head_input) = forward_with(params, &prop, x);
    let (_, dlogits) = softmax_cross_entropy(&logits, labels, train_nodes);
    let analytic = backward(params, &prop, &caches, &head_input, &dlogits);

    let mut probe = params.clone();
    let loss_at = |p: &ModelParams| -> f64 {
        let (logits, _, _) = forward_with(p, &prop, x);
        softmax_cross_entropy(&logits, labels, train_nodes).0
    };
    let mut max_rel = 0.0f64;
    for idx in 0..params.flat_len() {
        let original = probe.get_flat(idx);
        probe.set_flat(idx, original + STEP);
        let plus = loss_at(&probe);
        probe.set_flat(idx, original - STEP);
        let minus = loss_at(&probe);
        probe.set_flat(idx, original);
        let numeric = (plus - minus) / (2.0 * STEP);
        let exact = analytic.get_flat(idx);
        let denom = exact.abs().max(numeric.abs()).max(FLOOR);
        max_rel = max_rel.max((exact - numeric).abs() / denom);
    }
    Ok(max_rel)
}

const CHECKPOINT_HEADER: &str = "commutegraph-checkpoint v1";

fn write_matrix(out: &mut impl Write, name: &str, m: &DMatrix<f64>) -> std::io::Result<()> {
    writeln!(out, "block {name} {} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn write_vector(out: &mut impl Write, name: &str, v: &DVector<f64>) -> std::io::Result<()> {
    writeln!(out, "block {name} {} 1", v.len())?;
    for i in 0..v.len() {
        writeln!(out, "{}", v[i])?;
    }
    Ok(())
}

/// Writes the versioned plain-text checkpoint: a header with layer
/// dimensions and seed, then row-major decimal dumps per parameter block.
/// Values round-trip exactly through the shortest-representation formatter.
pub fn save_checkpoint(params: &ModelParams, seed: u64, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    let dims: Vec<String> = params.dims().iter().map(|d| d.to_string()).collect();
    writeln!(
        out,
        "seed {seed} dims {} classes {}",
        dims.join(" "),
        params.num_classes()
    )?;
    for (idx, l) in params.layers.iter().enumerate() {
        write_matrix(&mut out, &format!("layer{idx}.w_self"), &l.w_self)?;
        write_matrix(&mut out, &format!("layer{idx}.w_in"), &l.w_in)?;
        write_matrix(&mut out, &format!("layer{idx}.w_out"), &l.w_out)?;
        write_vector(&mut out, &format!("layer{idx}.b_self"), &l.b_self)?;
        write_vector(&mut out, &format!("layer{idx}.b_in"), &l.b_in)?;
        write_vector(&mut out, &format!("layer{idx}.b_out"), &l.b_out)?;
    }
    write_matrix(&mut out, "head.w", &params.head_w)?;
    write_vector(&mut out, "head.b", &params.head_b)?;
    Ok(())
}

struct CheckpointReader<R: BufRead> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
}

impl<R: BufRead> CheckpointReader<R> {
    fn next_line(&mut self) -> Result<String> {
        match self.lines.next() {
            Some((_, Ok(line))) => Ok(line),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Checkpoint("unexpected end of file".into())),
        }
    }

    fn read_block(&mut self, expect: &str) -> Result<DMatrix<f64>> {
        let header = self.next_line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "block" || parts[1] != expect {
            return Err(Error::Checkpoint(format!(
                "expected block '{expect}', found '{header}'"
            )));
        }
        let nrows: usize = parts[2]
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad row count in '{header}'")))?;
        let ncols: usize = parts[3]
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad column count in '{header}'")))?;
        let mut m = DMatrix::zeros(nrows, ncols);
        for i in 0..nrows {
            let line = self.next_line()?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != ncols {
                return Err(Error::Checkpoint(format!(
                    "block '{expect}' row {i} has {} values, expected {ncols}",
                    values.len()
                )));
            }
            for (j, v) in values.iter().enumerate() {
                m[(i, j)] = v
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad value '{v}' in '{expect}'")))?;
            }
        }
        Ok(m)
    }
}

/// Loads a checkpoint written by [`save_checkpoint`], returning the
/// parameters and the recorded seed.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64)> {
    let file = std::fs::File::open(path)?;
    let mut reader = CheckpointReader {
        lines: BufReader::new(file).lines().enumerate(),
    };
    let header = reader.next_line()?;
    if header != CHECKPOINT_HEADER {
        return Err(Error::Checkpoint(format!(
            "unsupported header '{header}'"
        )));
    }
    let meta = reader.next_line()?;
    let tokens: Vec<&str> = meta.split_whitespace().collect();
    if tokens.len() < 6 || tokens[0] != "seed" || tokens[2] != "dims" {
        return Err(Error::Checkpoint(format!("bad metadata line '{meta}'")));
    }
    let seed: u64 = tokens[1]
        .parse()
        .map_err(|_| Error::Checkpoint("bad seed".into()))?;
    let classes_pos = tokens
        .iter()
        .position(|&t| t == "classes")
        .ok_or_else(|| Error::Checkpoint("missing class count".into()))?;
    let dims: Vec<usize> = tokens[3..classes_pos]
        .iter()
        .map(|t| t.parse().map_err(|_| Error::Checkpoint("bad dim".into())))
        .collect::<Result<_>>()?;
    let num_classes: usize = tokens[classes_pos + 1]
        .parse()
        .map_err(|_| Error::Checkpoint("bad class count".into()))?;
    if dims.len() < 2 {
        return Err(Error::Checkpoint("need at least two dimensions".into()));
    }

    let mut layers = Vec::new();
    for idx in 0..dims.len() - 1 {
        let w_self = reader.read_block(&format!("layer{idx}.w_self"))?;
        let w_in = reader.read_block(&format!("layer{idx}.w_in"))?;
        let w_out = reader.read_block(&format!("layer{idx}.w_out"))?;
        let b_self = reader.read_block(&format!("layer{idx}.b_self"))?;
        let b_in = reader.read_block(&format!("layer{idx}.b_in"))?;
        let b_out = reader.read_block(&format!("layer{idx}.b_out"))?;
        layers.push(LayerParams {
            w_self,
            w_in,
            w_out,
            b_self: DVector::from_column_slice(b_self.as_slice()),
            b_in: DVector::from_column_slice(b_in.as_slice()),
            b_out: DVector::from_column_slice(b_out.as_slice()),
        });
    }
    let head_w = reader.read_block("head.w")?;
    let head_b = reader.read_block("head.b")?;
    if head_w.ncols() != num_classes {
        return Err(Error::Checkpoint("head width disagrees with class count".into()));
    }
    Ok((
        ModelParams {
            layers,
            head_w,
            head_b: DVector::from_column_slice(head_b.as_slice()),
        },
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_digraph;
    use approx::assert_abs_diff_eq;
    use std::collections::HashMap;

    fn layer_with(w_self: DMatrix<f64>, w_in: DMatrix<f64>, w_out: DMatrix<f64>) -> LayerParams {
        let d_out = w_self.ncols();
        LayerParams {
            w_self,
            w_in,
            w_out,
            b_self: DVector::zeros(d_out),
            b_in: DVector::zeros(d_out),
            b_out: DVector::zeros(d_out),
        }
    }

    #[test]
    fn isolated_node_keeps_only_self_term() {
        let g = build_digraph(2, &[]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let w_self = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, -1.0]);
        let layer = layer_with(w_self.clone(), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2));
        let weights = ProximityWeights::unit(&g);
        let h = commute_layer(&x, &g, &weights, &layer).unwrap();
        assert_abs_diff_eq!(h, &x * &w_self, epsilon = 0.0);
    }

    #[test]
    fn single_in_neighbor_scales_exactly() {
        let g = build_digraph(2, &[(0, 1)]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 0.0]);
        let w_in = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let layer = layer_with(DMatrix::zeros(2, 2), w_in.clone(), DMatrix::zeros(2, 2));
        let mut weights = ProximityWeights::unit(&g);
        weights.c_in.insert((1, 0), 0.25);
        let h = commute_layer(&x, &g, &weights, &layer).unwrap();
        // Node 1 combines the zero self term with m_in over two contributors.
        let expected = (0.25 * x.row(0) * &w_in) / 2.0;
        assert_abs_diff_eq!(h.row(1).into_owned(), expected, epsilon = 1e-15);
    }

    #[test]
    fn unit_weights_reduce_to_dirgnn() {
        let g = build_digraph(5, &[(0, 1), (1, 2), (2, 0), (3, 1), (1, 4), (4, 3)]).unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin());
        let dims = [3, 4, 4];
        let params = ModelParams::init(&dims, 2, 99).unwrap();
        let weights = ProximityWeights::unit(&g);
        let weighted = forward(&params, &g, &x, &weights).unwrap();
        let plain = dirgnn_forward(&params, &g, &x).unwrap();
        assert_eq!(weighted, plain);
    }

    #[test]
    fn identity_single_layer_collapses_to_head() {
        let g = build_digraph(2, &[]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, 2.0, 3.0]);
        let mut params = ModelParams::init(&[2, 2], 3, 1).unwrap();
        params.layers[0].w_self = DMatrix::identity(2, 2);
        let weights = ProximityWeights::unit(&g);
        let logits = forward(&params, &g, &x, &weights).unwrap();
        let mut expected = &x * &params.head_w;
        add_bias(&mut expected, &params.head_b, None);
        assert_abs_diff_eq!(logits, expected, epsilon = 0.0);
    }

    fn weights_for(g: &DiGraph, seed: u64) -> ProximityWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = HashMap::new();
        let mut c_out = HashMap::new();
        for &(i, j) in g.edges() {
            c_out.insert((i, j), rng.random_range(0.1..1.0));
            c_in.insert((j, i), rng.random_range(0.1..1.0));
        }
        ProximityWeights { c_in, c_out }
    }

    /// Straight-line re-implementation of the layer stack with per-node
    /// loops; the test oracle for `forward`.
    fn naive_forward(
        params: &ModelParams,
        g: &DiGraph,
        x: &DMatrix<f64>,
        w: &ProximityWeights,
    ) -> DMatrix<f64> {
        let n = g.num_nodes();
        let mut h = x.clone();
        for (idx, layer) in params.layers.iter().enumerate() {
            let d_out = layer.w_self.ncols();
            let mut next = DMatrix::zeros(n, d_out);
            for i in 0..n {
                let self_term =
                    h.row(i) * &layer.w_self + layer.b_self.transpose();
                let mut terms = vec![self_term];
                let inn = g.in_neighbors(i);
                if !inn.is_empty() {
                    let mut mean = nalgebra::RowDVector::zeros(h.ncols());
                    for &j in inn {
                        mean += h.row(j) * w.in_weight(i, j).unwrap();
                    }
                    mean /= inn.len() as f64;
                    terms.push(mean * &layer.w_in + layer.b_in.transpose());
                }
                let out = g.out_neighbors(i);
                if !out.is_empty() {
                    let mut mean = nalgebra::RowDVector::zeros(h.ncols());
                    for &j in out {
                        mean += h.row(j) * w.out_weight(i, j).unwrap();
                    }
                    mean /= out.len() as f64;
                    terms.push(mean * &layer.w_out + layer.b_out.transpose());
                }
                let k = terms.len() as f64;
                let mut combined = nalgebra::RowDVector::zeros(d_out);
                for t in terms {
                    combined += t;
                }
                combined /= k;
                next.set_row(i, &combined);
            }
            h = if idx + 1 < params.layers.len() {
                next.map(|v| if v > 0.0 { v } else { 0.0 })
            } else {
                next
            };
        }
        let mut logits = &h * &params.head_w;
        add_bias(&mut logits, &params.head_b, None);
        logits
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        let g = build_digraph(
            6,
            &[(0, 1), (1, 0), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (2, 5), (0, 0)],
        )
        .unwrap();
        let x = DMatrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).cos());
        let mut params = ModelParams::init(&[4, 5, 5], 3, 7).unwrap();
        // Exercise the bias paths too.
        for l in &mut params.layers {
            l.b_self = DVector::from_fn(l.b_self.len(), |k, _| 0.1 * (k as f64 + 1.0));
            l.b_in = DVector::from_fn(l.b_in.len(), |k, _| -0.05 * (k as f64 + 1.0));
            l.b_out = DVector::from_fn(l.b_out.len(), |k, _| 0.02 * (k as f64 + 1.0));
        }
        let w = weights_for(&g, 3);
        let fast = forward(&params, &g, &x, &w).unwrap();
        let naive = naive_forward(&params, &g, &x, &w);
        assert_abs_diff_eq!(fast, naive, epsilon = 1e-10);
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let g = build_digraph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 4)]).unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) as f64).sin());
        let params = ModelParams::init(&[3, 4, 4], 2, 5).unwrap();
        let w = weights_for(&g, 11);
        let logits = forward(&params, &g, &x, &w).unwrap();

        let perm = [3usize, 0, 4, 1, 2];
        let pg = crate::graph::permute(&g, Some(&perm), None).unwrap();
        let mut px = DMatrix::zeros(5, 3);
        for i in 0..5 {
            px.set_row(perm[i], &x.row(i));
        }
        let pw = ProximityWeights {
            c_in: w
                .c_in
                .iter()
                .map(|(&(i, j), &v)| ((perm[i], perm[j]), v))
                .collect(),
            c_out: w
                .c_out
                .iter()
                .map(|(&(i, j), &v)| ((perm[i], perm[j]), v))
                .collect(),
        };
        let plogits = forward(&params, &pg, &px, &pw).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(
                plogits.row(perm[i]).into_owned(),
                logits.row(i).into_owned(),
                epsilon = 1e-12
            );
        }
    }

    fn separable_instance() -> (DiGraph, DMatrix<f64>, LabelVector, SplitAssignment, ProximityWeights)
    {
        let n = 20;
        let mut edges = Vec::new();
        for i in 0..n / 2 {
            for j in 0..n / 2 {
                if i != j && (i + j) % 3 == 0 {
                    edges.push((i, j));
                    edges.push((n / 2 + i, n / 2 + j));
                }
            }
        }
        edges.push((0, n / 2));
        let g = build_digraph(n, &edges).unwrap();
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let block = (i >= n / 2) as usize;
            if j == block {
                1.0 + 0.01 * i as f64
            } else {
                0.01 * i as f64
            }
        });
        let labels: LabelVector = (0..n).map(|i| (i >= n / 2) as usize).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
        let val: Vec<usize> = (0..n).filter(|i| i % 2 == 1).collect();
        let splits = SplitAssignment::new(train, val, vec![], n).unwrap();
        let w = ProximityWeights::unit(&g);
        (g, x, labels, splits, w)
    }

    #[test]
    fn train_reaches_full_accuracy_on_separable_task() {
        let (g, x, labels, splits, w) = separable_instance();
        let cfg = TrainConfig {
            layers: 1,
            hidden: 8,
            lr: 0.5,
            weight_decay: 0.0,
            epochs: 200,
            seed: 4,
            ..TrainConfig::default()
        };
        let (params, history) = train(&g, &x, &labels, &splits, &w, &cfg).unwrap();
        let acc = evaluate(&params, &g, &x, &labels, &splits.train, &w).unwrap();
        assert_eq!(acc, 1.0, "history tail: {:?}", history.last());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (g, x, labels, splits, w) = separable_instance();
        let cfg = TrainConfig {
            layers: 1,
            hidden: 4,
            lr: 0.0,
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let (params, history) = train(&g, &x, &labels, &splits, &w, &cfg).unwrap();
        let dims = [x.ncols(), 4];
        let fresh = ModelParams::init(&dims, 2, 9).unwrap();
        assert_eq!(params, fresh);
        for s in &history {
            assert_eq!(s.train_loss, history[0].train_loss);
        }
    }

    #[test]
    fn table_shaped_config_validates() {
        // lr 0.01, wd 0 mirrors the published Chameleon configuration shape.
        let cfg = TrainConfig {
            layers: 4,
            hidden: 128,
            lr: 0.01,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn train_rejects_empty_split() {
        let (g, x, labels, _, w) = separable_instance();
        let splits = SplitAssignment::default();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&g, &x, &labels, &splits, &w, &cfg),
            Err(Error::EmptySplit { split: "train" })
        ));
    }

    #[test]
    fn evaluate_perfect_and_constant_predictors() {
        let g = build_digraph(4, &[]).unwrap();
        // One-hot features equal to the labels.
        let x = DMatrix::from_fn(4, 2, |i, j| ((i % 2 == j) as usize) as f64);
        let labels = vec![0, 1, 0, 1];
        let w = ProximityWeights::unit(&g);
        let mut params = ModelParams::init(&[2, 2], 2, 0).unwrap();
        params.layers[0].w_self = DMatrix::identity(2, 2);
        params.head_w = DMatrix::identity(2, 2);
        params.head_b = DVector::zeros(2);
        let split: Vec<usize> = (0..4).collect();
        assert_eq!(evaluate(&params, &g, &x, &labels, &split, &w).unwrap(), 1.0);

        // Constant logits: ties break to class 0, half of a balanced split.
        params.head_w = DMatrix::zeros(2, 2);
        assert_eq!(evaluate(&params, &g, &x, &labels, &split, &w).unwrap(), 0.5);
        assert!(matches!(
            evaluate(&params, &g, &x, &labels, &[], &w),
            Err(Error::EmptySplit { .. })
        ));
    }

    fn grad_check_instance(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 10;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < 0.3 {
                    edges.push((i, j));
                }
            }
        }
        let g = build_digraph(n, &edges).unwrap();
        let x = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let labels: LabelVector = (0..n).map(|_| rng.random_range(0..3)).collect();
        let w = weights_for(&g, seed ^ 0xabcd);
        let params = ModelParams::init(&[4, 6, 6], 3, seed).unwrap();
        let train_nodes: Vec<usize> = (0..n).collect();
        gradient_check(&params, &g, &x, &labels, &train_nodes, &w).unwrap()
    }

    #[test]
    fn gradient_check_small_instance() {
        let err = grad_check_instance(21);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_zero_features() {
        let g = build_digraph(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let x = DMatrix::zeros(3, 2);
        let labels = vec![0, 1, 0];
        let w = ProximityWeights::unit(&g);
        let params = {
            let mut p = ModelParams::init(&[2, 3], 2, 2).unwrap();
            for l in &mut p.layers {
                l.b_self = DVector::zeros(l.b_self.len());
            }
            p
        };
        let train_nodes = vec![0, 1, 2];
        let prop = Propagation::new(&g, &w).unwrap();
        let (logits, caches, head_input) = forward_with(&params, &prop, &x);
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels, &train_nodes);
        let grads = backward(&params, &prop, &caches, &head_input, &dlogits);
        assert_eq!(grads.layers[0].w_in, DMatrix::zeros(2, 3));
        assert_eq!(grads.layers[0].w_out, DMatrix::zeros(2, 3));
        let err = gradient_check(&params, &g, &x, &labels, &train_nodes, &w).unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn zero_weights_route_gradients_through_self_path() {
        let g = build_digraph(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.5, 2.0, 0.25, -1.0]);
        let labels = vec![0, 1, 0];
        let mut w = ProximityWeights::unit(&g);
        for v in w.c_in.values_mut().chain(w.c_out.values_mut()) {
            *v = 0.0;
        }
        let params = ModelParams::init(&[2, 3], 2, 8).unwrap();
        let train_nodes = vec![0, 1, 2];
        let prop = Propagation::new(&g, &w).unwrap();
        let (logits, caches, head_input) = forward_with(&params, &prop, &x);
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels, &train_nodes);
        let grads = backward(&params, &prop, &caches, &head_input, &dlogits);
        assert_eq!(grads.layers[0].w_in, DMatrix::zeros(2, 3));
        assert_eq!(grads.layers[0].w_out, DMatrix::zeros(2, 3));
        assert_ne!(grads.layers[0].w_self, DMatrix::zeros(2, 3));
    }

    #[test]
    fn first_epoch_loss_non_increasing_at_small_lr() {
        let (g, x, labels, splits, w) = separable_instance();
        let cfg = TrainConfig {
            layers: 2,
            hidden: 6,
            lr: 1e-4,
            epochs: 2,
            seed: 31,
            ..TrainConfig::default()
        };
        let (_, history) = train(&g, &x, &labels, &splits, &w, &cfg).unwrap();
        assert!(history[1].train_loss <= history[0].train_loss);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let params = ModelParams::init(&[3, 5, 5], 4, 1234).unwrap();
        save_checkpoint(&params, 1234, &path).unwrap();
        let (loaded, seed) = load_checkpoint(&path).unwrap();
        assert_eq!(seed, 1234);
        assert_eq!(loaded, params);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn backend_tags_round_trip() {
        assert_eq!("dilap".parse::<CommuteBackend>().unwrap(), CommuteBackend::Dilap);
        assert_eq!(
            "dense_oracle".parse::<CommuteBackend>().unwrap(),
            CommuteBackend::DenseOracle
        );
        assert!("magic".parse::<CommuteBackend>().is_err());
    }
}

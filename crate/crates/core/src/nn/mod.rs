//! The cycle-predictor network: input projection, stacked (optionally
//! bidirectional) LSTM, a two-way regime classifier, and short/long
//! regression heads, with exact reverse-mode gradients.
//!
//! All math is generic over the float type: f32 for training speed, f64 for
//! finite-difference gradient verification.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, BlobDtype, CheckpointError};

use crate::featurize::{invert_target, NormStats, FEATURE_DIM};
use ndarray::{s, Array1, Array2, Array3, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub trait Scalar: NdFloat + FromPrimitive {}
impl Scalar for f32 {}
impl Scalar for f64 {}

fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("constant conversion")
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Architecture hyperparameters. The default profile (unidirectional,
/// proj 256, hidden 256, two layers) has exactly 1,073,348 parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub cls_hidden: usize,
    pub tau: u32,
    pub lambda_cls: f64,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: FEATURE_DIM,
            proj_dim: 256,
            hidden: 256,
            layers: 2,
            bidirectional: false,
            cls_hidden: 64,
            tau: 10,
            lambda_cls: 1.0,
            dropout_p: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn state_dim(&self) -> usize {
        self.hidden * if self.bidirectional { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.proj_dim == 0 || self.hidden == 0 || self.cls_hidden == 0 {
            return Err(NnError::ShapeMismatch("zero-sized dimension".into()));
        }
        if !(1..=3).contains(&self.layers) {
            return Err(NnError::ShapeMismatch(format!(
                "layers must be in 1..=3, got {}",
                self.layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NnError::ShapeMismatch("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One LSTM direction's weights, PyTorch gate order (i, f, g, o) stacked
/// along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams<F> {
    pub w_ih: Array2<F>,
    pub w_hh: Array2<F>,
    pub b_ih: Array1<F>,
    pub b_hh: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams<F> {
    pub fwd: LstmDirParams<F>,
    pub rev: Option<LstmDirParams<F>>,
}

/// All learnable tensors. Field traversal order is the canonical tensor
/// order used by checkpoints, the optimizer, and the parameter inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<F> {
    pub input_proj_w: Array2<F>,
    pub input_proj_b: Array1<F>,
    pub layers: Vec<LstmLayerParams<F>>,
    pub cls_fc1_w: Array2<F>,
    pub cls_fc1_b: Array1<F>,
    pub cls_fc2_w: Array2<F>,
    pub cls_fc2_b: Array1<F>,
    pub short_w: Array2<F>,
    pub short_b: Array1<F>,
    pub long_w: Array2<F>,
    pub long_b: Array1<F>,
}

/// Canonical (name, shape) inventory for a configuration.
pub fn named_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden;
    let state = config.state_dim();
    let mut out = vec![
        ("input_proj.weight".to_string(), vec![config.proj_dim, config.input_dim]),
        ("input_proj.bias".to_string(), vec![config.proj_dim]),
    ];
    for l in 0..config.layers {
        let in_l = if l == 0 { config.proj_dim } else { state };
        let mut push_dir = |suffix: &str| {
            out.push((format!("rnn.weight_ih_l{l}{suffix}"), vec![4 * h, in_l]));
            out.push((format!("rnn.weight_hh_l{l}{suffix}"), vec![4 * h, h]));
            out.push((format!("rnn.bias_ih_l{l}{suffix}"), vec![4 * h]));
            out.push((format!("rnn.bias_hh_l{l}{suffix}"), vec![4 * h]));
        };
        push_dir("");
        if config.bidirectional {
            push_dir("_reverse");
        }
    }
    out.push(("cls_fc1.weight".to_string(), vec![config.cls_hidden, state]));
    out.push(("cls_fc1.bias".to_string(), vec![config.cls_hidden]));
    out.push(("cls_fc2.weight".to_string(), vec![2, config.cls_hidden]));
    out.push(("cls_fc2.bias".to_string(), vec![2]));
    out.push(("output_layer_short.weight".to_string(), vec![1, state]));
    out.push(("output_layer_short.bias".to_string(), vec![1]));
    out.push(("output_layer_long.weight".to_string(), vec![1, state]));
    out.push(("output_layer_long.bias".to_string(), vec![1]));
    out
}

pub fn param_count(config: &ModelConfig) -> usize {
    named_shapes(config).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

impl<F: Scalar> ParamBlock<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let state = config.state_dim();
        let dir = |in_l: usize| LstmDirParams {
            w_ih: Array2::zeros((4 * h, in_l)),
            w_hh: Array2::zeros((4 * h, h)),
            b_ih: Array1::zeros(4 * h),
            b_hh: Array1::zeros(4 * h),
        };
        let layers = (0..config.layers)
            .map(|l| {
                let in_l = if l == 0 { config.proj_dim } else { state };
                LstmLayerParams {
                    fwd: dir(in_l),
                    rev: config.bidirectional.then(|| dir(in_l)),
                }
            })
            .collect();
        ParamBlock {
            input_proj_w: Array2::zeros((config.proj_dim, config.input_dim)),
            input_proj_b: Array1::zeros(config.proj_dim),
            layers,
            cls_fc1_w: Array2::zeros((config.cls_hidden, state)),
            cls_fc1_b: Array1::zeros(config.cls_hidden),
            cls_fc2_w: Array2::zeros((2, config.cls_hidden)),
            cls_fc2_b: Array1::zeros(2),
            short_w: Array2::zeros((1, state)),
            short_b: Array1::zeros(1),
            long_w: Array2::zeros((1, state)),
            long_b: Array1::zeros(1),
        }
    }

    /// Flat mutable views over every tensor, in canonical order.
    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut v: Vec<&mut [F]> = Vec::new();
        v.push(self.input_proj_w.as_slice_mut().unwrap());
        v.push(self.input_proj_b.as_slice_mut().unwrap());
        for layer in &mut self.layers {
            for dir in std::iter::once(&mut layer.fwd).chain(layer.rev.as_mut()) {
                v.push(dir.w_ih.as_slice_mut().unwrap());
                v.push(dir.w_hh.as_slice_mut().unwrap());
                v.push(dir.b_ih.as_slice_mut().unwrap());
                v.push(dir.b_hh.as_slice_mut().unwrap());
            }
        }
        v.push(self.cls_fc1_w.as_slice_mut().unwrap());
        v.push(self.cls_fc1_b.as_slice_mut().unwrap());
        v.push(self.cls_fc2_w.as_slice_mut().unwrap());
        v.push(self.cls_fc2_b.as_slice_mut().unwrap());
        v.push(self.short_w.as_slice_mut().unwrap());
        v.push(self.short_b.as_slice_mut().unwrap());
        v.push(self.long_w.as_slice_mut().unwrap());
        v.push(self.long_b.as_slice_mut().unwrap());
        v
    }

    /// Flat read-only views, in canonical order.
    pub fn flat(&self) -> Vec<&[F]> {
        let mut v: Vec<&[F]> = Vec::new();
        v.push(self.input_proj_w.as_slice().unwrap());
        v.push(self.input_proj_b.as_slice().unwrap());
        for layer in &self.layers {
            for dir in std::iter::once(&layer.fwd).chain(layer.rev.as_ref()) {
                v.push(dir.w_ih.as_slice().unwrap());
                v.push(dir.w_hh.as_slice().unwrap());
                v.push(dir.b_ih.as_slice().unwrap());
                v.push(dir.b_hh.as_slice().unwrap());
            }
        }
        v.push(self.cls_fc1_w.as_slice().unwrap());
        v.push(self.cls_fc1_b.as_slice().unwrap());
        v.push(self.cls_fc2_w.as_slice().unwrap());
        v.push(self.cls_fc2_b.as_slice().unwrap());
        v.push(self.short_w.as_slice().unwrap());
        v.push(self.short_b.as_slice().unwrap());
        v.push(self.long_w.as_slice().unwrap());
        v.push(self.long_b.as_slice().unwrap());
        v
    }

    pub fn len(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model weights plus the normalization statistics they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F> {
    pub config: ModelConfig,
    pub block: ParamBlock<F>,
    pub norm: NormStats,
}

/// Gradients mirror the parameter tensors one for one.
pub type Gradients<F> = ParamBlock<F>;

/// Uniform(-k, k) with k = 1/sqrt(fan_in) per weight tensor; biases zero
/// except the LSTM forget-gate input biases, which start at 1.0.
pub fn init_params<F: Scalar>(config: &ModelConfig, seed: u64) -> ModelParameters<F> {
    config.validate().expect("invalid model config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = ParamBlock::<F>::zeros(config);
    let h = config.hidden;

    let fill = |a: &mut [F], fan_in: usize, rng: &mut ChaCha8Rng| {
        let k = 1.0 / (fan_in as f64).sqrt();
        for x in a {
            *x = c(rng.gen_range(-k..k));
        }
    };

    fill(block.input_proj_w.as_slice_mut().unwrap(), config.input_dim, &mut rng);
    for layer in &mut block.layers {
        for dir in std::iter::once(&mut layer.fwd).chain(layer.rev.as_mut()) {
            let in_l = dir.w_ih.ncols();
            fill(dir.w_ih.as_slice_mut().unwrap(), in_l, &mut rng);
            fill(dir.w_hh.as_slice_mut().unwrap(), h, &mut rng);
            dir.b_ih.slice_mut(s![h..2 * h]).fill(c(1.0));
        }
    }
    let state = config.state_dim();
    fill(block.cls_fc1_w.as_slice_mut().unwrap(), state, &mut rng);
    fill(block.cls_fc2_w.as_slice_mut().unwrap(), config.cls_hidden, &mut rng);
    fill(block.short_w.as_slice_mut().unwrap(), state, &mut rng);
    fill(block.long_w.as_slice_mut().unwrap(), state, &mut rng);

    ModelParameters {
        config: config.clone(),
        block,
        norm: NormStats { mean: [0.0; FEATURE_DIM], std: [1.0; FEATURE_DIM] },
    }
}

/// Network outputs for a batch of windows.
#[derive(Debug, Clone)]
pub struct PredictionBatch<F> {
    /// Regression output selected by predicted class, [B, R].
    pub z_hat: Array2<F>,
    /// Short-head and long-head raw outputs, [B, R] each.
    pub z_short: Array2<F>,
    pub z_long: Array2<F>,
    /// Class scores, [B, R, 2].
    pub logits: Array3<F>,
    /// Predicted regime labels (argmax, ties toward class 0), [B, R].
    pub c_hat: Array2<u8>,
    /// Integer cycle predictions via the inverse target transform, [B, R].
    pub y_hat: Array2<u32>,
}

struct DirCache<F> {
    // Per timestep: gate activations and cell state, [B, H] each.
    i: Vec<Array2<F>>,
    f: Vec<Array2<F>>,
    g: Vec<Array2<F>>,
    o: Vec<Array2<F>>,
    cell: Vec<Array2<F>>,
    h: Vec<Array2<F>>,
}

struct LayerCache<F> {
    fwd: DirCache<F>,
    rev: Option<DirCache<F>>,
    /// Inverted-dropout mask applied to this layer's output (train only,
    /// not on the last layer).
    dropout_mask: Option<Vec<Array2<F>>>,
}

/// Intermediate activations needed by [`backward`].
pub struct ForwardCache<F> {
    /// Normalized inputs, time-major [N][B, input_dim].
    inputs: Vec<Array2<F>>,
    /// Projected inputs, [N][B, proj_dim].
    projected: Vec<Array2<F>>,
    /// Per layer: caches plus the (post-dropout) output sequence.
    layers: Vec<LayerCache<F>>,
    layer_outputs: Vec<Vec<Array2<F>>>,
    /// Classifier hidden activations per target position, [R][B, cls_hidden].
    cls_hidden: Vec<Array2<F>>,
    left_context: usize,
    r: usize,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    c::<F>(1.0) / (c::<F>(1.0) + (-x).exp())
}

fn run_direction<F: Scalar>(
    p: &LstmDirParams<F>,
    inputs: &[Array2<F>],
    reverse: bool,
    want_cache: bool,
) -> (Vec<Array2<F>>, Option<DirCache<F>>) {
    let n = inputs.len();
    let b = inputs[0].nrows();
    let h = p.w_hh.ncols();
    let mut hidden = Array2::<F>::zeros((b, h));
    let mut cell = Array2::<F>::zeros((b, h));
    let mut outputs: Vec<Array2<F>> = vec![Array2::zeros((0, 0)); n];
    let mut cache = want_cache.then(|| DirCache {
        i: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        o: Vec::with_capacity(n),
        cell: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
    });

    let order: Vec<usize> =
        if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    let bias = &p.b_ih + &p.b_hh;
    for &t in &order {
        let mut gates = inputs[t].dot(&p.w_ih.t()) + hidden.dot(&p.w_hh.t());
        gates += &bias;
        let gi = gates.slice(s![.., 0..h]).mapv(sigmoid);
        let gf = gates.slice(s![.., h..2 * h]).mapv(sigmoid);
        let gg = gates.slice(s![.., 2 * h..3 * h]).mapv(|x| x.tanh());
        let go = gates.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
        cell = &gf * &cell + &gi * &gg;
        hidden = &go * &cell.mapv(|x| x.tanh());
        outputs[t] = hidden.clone();
        if let Some(cc) = cache.as_mut() {
            cc.i.push(gi);
            cc.f.push(gf);
            cc.g.push(gg);
            cc.o.push(go);
            cc.cell.push(cell.clone());
            cc.h.push(hidden.clone());
        }
    }
    (outputs, cache)
}

/// Runs the network on a normalized batch, time-major `inputs[t]` of shape
/// [B, input_dim]. `left_context` and `r` define the centered target slice.
/// Dropout is active only when a `dropout` RNG is supplied (training).
pub fn forward<F: Scalar>(
    params: &ModelParameters<F>,
    inputs: Vec<Array2<F>>,
    left_context: usize,
    r: usize,
    mut dropout: Option<&mut ChaCha8Rng>,
    want_cache: bool,
) -> Result<(PredictionBatch<F>, Option<ForwardCache<F>>), NnError> {
    let cfg = &params.config;
    let n = inputs.len();
    if n == 0 || left_context + r > n {
        return Err(NnError::ShapeMismatch(format!(
            "window of {n} steps cannot hold target slice {left_context}..{}",
            left_context + r
        )));
    }
    let b = inputs[0].nrows();
    if inputs.iter().any(|x| x.ncols() != cfg.input_dim || x.nrows() != b) {
        return Err(NnError::ShapeMismatch("inconsistent input shapes".into()));
    }

    let projected: Vec<Array2<F>> = inputs
        .iter()
        .map(|x| {
            let mut p = x.dot(&params.block.input_proj_w.t());
            p += &params.block.input_proj_b;
            p
        })
        .collect();

    let mut layer_caches: Vec<LayerCache<F>> = Vec::with_capacity(cfg.layers);
    let mut layer_outputs: Vec<Vec<Array2<F>>> = Vec::with_capacity(cfg.layers);
    let mut current: &Vec<Array2<F>> = &projected;
    for (l, layer) in params.block.layers.iter().enumerate() {
        let (fwd_out, fwd_cache) = run_direction(&layer.fwd, current, false, want_cache);
        let (mut out, rev_cache) = match &layer.rev {
            Some(rev) => {
                let (rev_out, rev_cache) = run_direction(rev, current, true, want_cache);
                let concat: Vec<Array2<F>> = fwd_out
                    .iter()
                    .zip(&rev_out)
                    .map(|(f, rv)| {
                        ndarray::concatenate(Axis(1), &[f.view(), rv.view()]).unwrap()
                    })
                    .collect();
                (concat, rev_cache)
            }
            None => (fwd_out, None),
        };

        // Inverted dropout on the layer's output sequence, between layers.
        let mut dropout_mask = None;
        if l + 1 < cfg.layers && cfg.dropout_p > 0.0 {
            if let Some(rng) = dropout.as_deref_mut() {
                let keep = 1.0 - cfg.dropout_p;
                let scale = c::<F>(1.0 / keep);
                let masks: Vec<Array2<F>> = out
                    .iter_mut()
                    .map(|x| {
                        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
                            if rng.gen_bool(keep) { scale } else { F::zero() }
                        });
                        *x *= &mask;
                        mask
                    })
                    .collect();
                dropout_mask = Some(masks);
            }
        }

        layer_caches.push(LayerCache { fwd: fwd_cache.unwrap_or_else(empty_dir), rev: rev_cache, dropout_mask });
        layer_outputs.push(out);
        current = layer_outputs.last().unwrap();
    }

    let top = layer_outputs.last().unwrap();
    let state = cfg.state_dim();
    let mut z_short = Array2::<F>::zeros((b, r));
    let mut z_long = Array2::<F>::zeros((b, r));
    let mut logits = Array3::<F>::zeros((b, r, 2));
    let mut c_hat = Array2::<u8>::zeros((b, r));
    let mut z_hat = Array2::<F>::zeros((b, r));
    let mut y_hat = Array2::<u32>::zeros((b, r));
    let mut cls_hidden_cache = Vec::with_capacity(r);

    for k in 0..r {
        let hmid = &top[left_context + k];
        debug_assert_eq!(hmid.ncols(), state);
        let mut a1 = hmid.dot(&params.block.cls_fc1_w.t());
        a1 += &params.block.cls_fc1_b;
        let a1 = a1.mapv(|x| x.max(F::zero()));
        let mut lg = a1.dot(&params.block.cls_fc2_w.t());
        lg += &params.block.cls_fc2_b;

        let zs = hmid.dot(&params.block.short_w.row(0)) + params.block.short_b[0];
        let zl = hmid.dot(&params.block.long_w.row(0)) + params.block.long_b[0];

        for row in 0..b {
            let l0 = lg[(row, 0)];
            let l1 = lg[(row, 1)];
            logits[(row, k, 0)] = l0;
            logits[(row, k, 1)] = l1;
            let cls = u8::from(l1 > l0);
            c_hat[(row, k)] = cls;
            z_short[(row, k)] = zs[row];
            z_long[(row, k)] = zl[row];
            let z = if cls == 0 { zs[row] } else { zl[row] };
            z_hat[(row, k)] = z;
            y_hat[(row, k)] = invert_target(z.to_f64().unwrap());
        }
        if want_cache {
            cls_hidden_cache.push(a1);
        }
    }

    let pred = PredictionBatch { z_hat, z_short, z_long, logits, c_hat, y_hat };
    let cache = want_cache.then(|| ForwardCache {
        inputs,
        projected,
        layers: layer_caches,
        layer_outputs,
        cls_hidden: cls_hidden_cache,
        left_context,
        r,
    });
    Ok((pred, cache))
}

fn empty_dir<F: Scalar>() -> DirCache<F> {
    DirCache { i: vec![], f: vec![], g: vec![], o: vec![], cell: vec![], h: vec![] }
}

/// Which label routes each position to its regression head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMask {
    /// Ground-truth labels (training).
    TeacherForced,
    /// Predicted classes (evaluation).
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<F> {
    pub total: F,
    pub regression: F,
    pub classification: F,
}

fn smooth_l1<F: Scalar>(d: F) -> F {
    let a = d.abs();
    if a < c(1.0) {
        c::<F>(0.5) * d * d
    } else {
        a - c(0.5)
    }
}

fn smooth_l1_grad<F: Scalar>(d: F) -> F {
    let one = c::<F>(1.0);
    if d.abs() < one {
        d
    } else if d > F::zero() {
        one
    } else {
        -one
    }
}

/// Joint objective: mean SmoothL1 on log-space regressions plus
/// `lambda` times mean cross-entropy on the regime logits. The regression
/// head per position is chosen by `mask_mode`.
pub fn loss<F: Scalar>(
    pred: &PredictionBatch<F>,
    targets_z: &Array2<F>,
    targets_c: &Array2<u8>,
    mask_mode: HeadMask,
    lambda: F,
) -> LossBreakdown<F> {
    let (b, r) = targets_z.dim();
    let count = c::<F>((b * r) as f64);
    let mut reg = F::zero();
    let mut cls = F::zero();
    for row in 0..b {
        for k in 0..r {
            let sel = match mask_mode {
                HeadMask::TeacherForced => targets_c[(row, k)],
                HeadMask::Predicted => pred.c_hat[(row, k)],
            };
            let z = if sel == 0 { pred.z_short[(row, k)] } else { pred.z_long[(row, k)] };
            reg = reg + smooth_l1(z - targets_z[(row, k)]);

            let l0 = pred.logits[(row, k, 0)];
            let l1 = pred.logits[(row, k, 1)];
            let m = l0.max(l1);
            let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            let lt = if targets_c[(row, k)] == 0 { l0 } else { l1 };
            cls = cls + (lse - lt);
        }
    }
    reg = reg / count;
    cls = cls / count;
    LossBreakdown { total: reg + lambda * cls, regression: reg, classification: cls }
}

/// Exact reverse-mode gradients of the joint loss with respect to every
/// parameter tensor. The head-selection mask is treated as constant.
pub fn backward<F: Scalar>(
    params: &ModelParameters<F>,
    pred: &PredictionBatch<F>,
    cache: &ForwardCache<F>,
    targets_z: &Array2<F>,
    targets_c: &Array2<u8>,
    mask_mode: HeadMask,
    lambda: F,
) -> Gradients<F> {
    let cfg = &params.config;
    let blk = &params.block;
    let mut g = ParamBlock::<F>::zeros(cfg);
    let n = cache.inputs.len();
    let b = cache.inputs[0].nrows();
    let r = cache.r;
    let s_ctx = cache.left_context;
    let count = c::<F>((b * r) as f64);
    let top = cache.layer_outputs.last().unwrap();

    // Gradient flowing into the top layer's output sequence.
    let state = cfg.state_dim();
    let mut d_top: Vec<Array2<F>> = (0..n).map(|_| Array2::zeros((b, state))).collect();

    for k in 0..r {
        let hmid = &top[s_ctx + k];
        let a1 = &cache.cls_hidden[k];

        // Regression heads.
        let mut dz_short = Array1::<F>::zeros(b);
        let mut dz_long = Array1::<F>::zeros(b);
        for row in 0..b {
            let sel = match mask_mode {
                HeadMask::TeacherForced => targets_c[(row, k)],
                HeadMask::Predicted => pred.c_hat[(row, k)],
            };
            let z = if sel == 0 { pred.z_short[(row, k)] } else { pred.z_long[(row, k)] };
            let d = smooth_l1_grad(z - targets_z[(row, k)]) / count;
            if sel == 0 {
                dz_short[row] = d;
            } else {
                dz_long[row] = d;
            }
        }
        // dW = dz^T h; dh += dz w.
        for (dz, w, gw, gb) in [
            (&dz_short, &blk.short_w, &mut g.short_w, &mut g.short_b),
            (&dz_long, &blk.long_w, &mut g.long_w, &mut g.long_b),
        ] {
            let dzc = dz.view().insert_axis(Axis(1)); // [B,1]
            gw.scaled_add(F::one(), &dzc.t().dot(hmid));
            gb[0] = gb[0] + dz.sum();
            d_top[s_ctx + k].scaled_add(F::one(), &dzc.dot(&w.row(0).insert_axis(Axis(0))));
        }

        // Classifier: softmax cross-entropy.
        let mut dlogits = Array2::<F>::zeros((b, 2));
        for row in 0..b {
            let l0 = pred.logits[(row, k, 0)];
            let l1 = pred.logits[(row, k, 1)];
            let m = l0.max(l1);
            let e0 = (l0 - m).exp();
            let e1 = (l1 - m).exp();
            let z = e0 + e1;
            let p0 = e0 / z;
            let p1 = e1 / z;
            let (t0, t1) = if targets_c[(row, k)] == 0 { (F::one(), F::zero()) } else { (F::zero(), F::one()) };
            dlogits[(row, 0)] = lambda * (p0 - t0) / count;
            dlogits[(row, 1)] = lambda * (p1 - t1) / count;
        }
        g.cls_fc2_w.scaled_add(F::one(), &dlogits.t().dot(a1));
        g.cls_fc2_b.scaled_add(F::one(), &dlogits.sum_axis(Axis(0)));
        let mut da1 = dlogits.dot(&blk.cls_fc2_w);
        // ReLU gate.
        ndarray::Zip::from(&mut da1).and(a1).for_each(|d, &a| {
            if a <= F::zero() {
                *d = F::zero();
            }
        });
        g.cls_fc1_w.scaled_add(F::one(), &da1.t().dot(hmid));
        g.cls_fc1_b.scaled_add(F::one(), &da1.sum_axis(Axis(0)));
        d_top[s_ctx + k].scaled_add(F::one(), &da1.dot(&blk.cls_fc1_w));
    }

    // BPTT through the stacked layers, top down.
    let mut d_out = d_top;
    for l in (0..cfg.layers).rev() {
        let layer = &blk.layers[l];
        let lcache = &cache.layers[l];
        if let Some(masks) = &lcache.dropout_mask {
            for (d, m) in d_out.iter_mut().zip(masks) {
                *d *= m;
            }
        }
        let inputs: &Vec<Array2<F>> =
            if l == 0 { &cache.projected } else { &cache.layer_outputs[l - 1] };
        let h = cfg.hidden;
        let in_dim = inputs[0].ncols();
        let mut d_in: Vec<Array2<F>> = (0..n).map(|_| Array2::zeros((b, in_dim))).collect();

        let mut run_dir_backward = |dir: &LstmDirParams<F>,
                                    dc_: &DirCache<F>,
                                    gdir: (&mut Array2<F>, &mut Array2<F>, &mut Array1<F>, &mut Array1<F>),
                                    reverse: bool,
                                    d_slice: std::ops::Range<usize>| {
            let (gw_ih, gw_hh, gb_ih, gb_hh) = gdir;
            // Timestep order the direction was run in; cache vectors are in
            // run order (index 0 = first step executed).
            let order: Vec<usize> =
                if reverse { (0..n).rev().collect() } else { (0..n).collect() };
            let mut dh_next = Array2::<F>::zeros((b, h));
            let mut dc_next = Array2::<F>::zeros((b, h));
            for step in (0..n).rev() {
                let t = order[step];
                let i = &dc_.i[step];
                let f = &dc_.f[step];
                let gg = &dc_.g[step];
                let o = &dc_.o[step];
                let cell = &dc_.cell[step];
                let tanh_c = cell.mapv(|x| x.tanh());
                let c_prev = if step == 0 {
                    Array2::<F>::zeros((b, h))
                } else {
                    dc_.cell[step - 1].clone()
                };

                let mut dh = dh_next.clone();
                dh += &d_out[t].slice(s![.., d_slice.clone()]);
                let d_o = &dh * &tanh_c;
                let mut d_cell = &dh * o * &tanh_c.mapv(|x| F::one() - x * x);
                d_cell += &dc_next;
                let d_i = &d_cell * gg;
                let d_f = &d_cell * &c_prev;
                let d_g = &d_cell * i;
                dc_next = &d_cell * f;

                // Pre-activation gate gradients, packed [B, 4H] in i,f,g,o
                // order.
                let mut d_gates = Array2::<F>::zeros((b, 4 * h));
                d_gates
                    .slice_mut(s![.., 0..h])
                    .assign(&(&d_i * i * &i.mapv(|x| F::one() - x)));
                d_gates
                    .slice_mut(s![.., h..2 * h])
                    .assign(&(&d_f * f * &f.mapv(|x| F::one() - x)));
                d_gates
                    .slice_mut(s![.., 2 * h..3 * h])
                    .assign(&(&d_g * &gg.mapv(|x| F::one() - x * x)));
                d_gates
                    .slice_mut(s![.., 3 * h..4 * h])
                    .assign(&(&d_o * o * &o.mapv(|x| F::one() - x)));

                let h_prev = if step == 0 {
                    Array2::<F>::zeros((b, h))
                } else {
                    dc_.h[step - 1].clone()
                };
                gw_ih.scaled_add(F::one(), &d_gates.t().dot(&inputs[t]));
                gw_hh.scaled_add(F::one(), &d_gates.t().dot(&h_prev));
                let db = d_gates.sum_axis(Axis(0));
                gb_ih.scaled_add(F::one(), &db);
                gb_hh.scaled_add(F::one(), &db);
                d_in[t].scaled_add(F::one(), &d_gates.dot(&dir.w_ih));
                dh_next = d_gates.dot(&dir.w_hh);
            }
        };

        {
            let gl = &mut g.layers[l];
            run_dir_backward(
                &layer.fwd,
                &lcache.fwd,
                (&mut gl.fwd.w_ih, &mut gl.fwd.w_hh, &mut gl.fwd.b_ih, &mut gl.fwd.b_hh),
                false,
                0..h,
            );
            if let (Some(rev), Some(rev_cache)) = (&layer.rev, &lcache.rev) {
                let grev = gl.rev.as_mut().unwrap();
                run_dir_backward(
                    rev,
                    rev_cache,
                    (&mut grev.w_ih, &mut grev.w_hh, &mut grev.b_ih, &mut grev.b_hh),
                    true,
                    h..2 * h,
                );
            }
        }
        d_out = d_in;
    }

    // Input projection.
    for t in 0..n {
        g.input_proj_w.scaled_add(F::one(), &d_out[t].t().dot(&cache.inputs[t]));
        g.input_proj_b.scaled_add(F::one(), &d_out[t].sum_axis(Axis(0)));
    }

    g
}

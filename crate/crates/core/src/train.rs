//! Training loop (Adam, teacher-forced joint loss, early stopping on
//! validation MAE) and the evaluation metric suite.

use crate::featurize::{apply_norm, fit_norm, FeatureWindow, NormStats};
use crate::nn::{
    backward, forward, init_params, loss, param_count, Gradients, HeadMask, ModelConfig,
    ModelParameters, ParamBlock,
};
use crate::seeds::{derive_indexed_seed, derive_seed, SeedRole};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset too small: {0} windows cannot supply train/val/holdout splits")]
    TooSmall(usize),
    #[error("windows have inconsistent geometry")]
    InconsistentWindows,
    #[error("model error: {0}")]
    Model(#[from] crate::nn::NnError),
}

/// Optimizer and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience, in epochs without a validation-MAE
    /// improvement.
    pub patience: usize,
    pub val_frac: f64,
    pub holdout_frac: f64,
    pub grad_clip_norm: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            val_frac: 0.1,
            holdout_frac: 0.1,
            grad_clip_norm: 5.0,
        }
    }
}

/// Contiguous split: train is the head, then validation, with the holdout at
/// the tail. Keeping the splits contiguous avoids leaking near-duplicate
/// neighboring windows across the split boundary.
pub fn split_dataset(
    windows: &[FeatureWindow],
    val_frac: f64,
    holdout_frac: f64,
) -> Result<(&[FeatureWindow], &[FeatureWindow], &[FeatureWindow]), TrainError> {
    let n = windows.len();
    let n_hold = ((n as f64) * holdout_frac).floor() as usize;
    let n_val = ((n as f64) * val_frac).floor() as usize;
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    if n_val == 0 || n_hold == 0 || n_val + n_hold >= n {
        return Err(TrainError::TooSmall(n));
    }
    let n_train = n - n_val - n_hold;
    Ok((
        &windows[..n_train],
        &windows[n_train..n_train + n_val],
        &windows[n_train + n_val..],
    ))
}

/// One window batch in the tensor layout the network consumes.
pub struct TensorBatch {
    /// Time-major normalized features, N entries of [B, input_dim].
    pub inputs: Vec<Array2<f32>>,
    pub targets_z: Array2<f32>,
    pub targets_c: Array2<u8>,
    /// Clipped integer ground truth, [B, R].
    pub raw_y: Array2<u32>,
    pub left_context: usize,
    pub r: usize,
}

/// Packs windows into a batch, applying z-score normalization.
pub fn batch_windows(windows: &[&FeatureWindow], norm: &NormStats) -> TensorBatch {
    let b = windows.len();
    let n = windows[0].n();
    let r = windows[0].r();
    let dim = windows[0].features[0].len();
    let mut inputs: Vec<Array2<f32>> = (0..n).map(|_| Array2::zeros((b, dim))).collect();
    let mut targets_z = Array2::<f32>::zeros((b, r));
    let mut targets_c = Array2::<u8>::zeros((b, r));
    let mut raw_y = Array2::<u32>::zeros((b, r));
    for (row, w) in windows.iter().enumerate() {
        for t in 0..n {
            let v = apply_norm(norm, &w.features[t]);
            for (d, &x) in v.iter().enumerate() {
                inputs[t][(row, d)] = x as f32;
            }
        }
        for k in 0..r {
            targets_z[(row, k)] = w.targets_z[k] as f32;
            targets_c[(row, k)] = w.targets_c[k];
            raw_y[(row, k)] = w.raw_y[k];
        }
    }
    TensorBatch {
        inputs,
        targets_z,
        targets_c,
        raw_y,
        left_context: windows[0].left_context,
        r,
    }
}

struct Adam {
    m: ParamBlock<f32>,
    v: ParamBlock<f32>,
    step: u64,
}

impl Adam {
    fn new(config: &ModelConfig) -> Self {
        Adam { m: ParamBlock::zeros(config), v: ParamBlock::zeros(config), step: 0 }
    }

    fn apply(&mut self, params: &mut ParamBlock<f32>, grads: &Gradients<f32>, spec: &TrainSpec) {
        // Global L2 gradient clipping.
        let mut sq = 0.0f64;
        for g in grads.flat() {
            for &x in g {
                sq += (x as f64) * (x as f64);
            }
        }
        let norm = sq.sqrt();
        let scale = if norm > spec.grad_clip_norm && norm > 0.0 {
            (spec.grad_clip_norm / norm) as f32
        } else {
            1.0
        };

        self.step += 1;
        let t = self.step as i32;
        let b1 = spec.beta1 as f32;
        let b2 = spec.beta2 as f32;
        let bc1 = 1.0 - (spec.beta1 as f32).powi(t);
        let bc2 = 1.0 - (spec.beta2 as f32).powi(t);
        let lr = spec.learning_rate as f32;
        let eps = spec.epsilon as f32;

        let mut p = params.flat_mut();
        let g = grads.flat();
        let mut m = self.m.flat_mut();
        let mut v = self.v.flat_mut();
        for i in 0..p.len() {
            let (ps, gs, ms, vs) = (&mut p[i], g[i], &mut m[i], &mut v[i]);
            for j in 0..ps.len() {
                let grad = gs[j] * scale;
                ms[j] = b1 * ms[j] + (1.0 - b1) * grad;
                vs[j] = b2 * vs[j] + (1.0 - b2) * grad * grad;
                let mhat = ms[j] / bc1;
                let vhat = vs[j] / bc2;
                ps[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_regression: f64,
    pub train_classification: f64,
    pub val_mae: f64,
}

/// Evaluation metrics over integer cycle predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// MAE relative to the mean clipped ground-truth latency.
    pub rae: f64,
    /// Exact-match accuracy of the integer predictions.
    pub acc_exact: f64,
    pub acc_pm1: f64,
    pub acc_pm2: f64,
    /// Fraction within max(1, 5% of ground truth).
    pub rel5: f64,
    pub n: usize,
}

pub struct TrainOutcome {
    pub params: ModelParameters<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub holdout: MetricsReport,
}

fn check_geometry(windows: &[FeatureWindow]) -> Result<(), TrainError> {
    let first = windows.first().ok_or(TrainError::EmptyDataset)?;
    let (n, r, s) = (first.n(), first.r(), first.left_context);
    if windows.iter().any(|w| w.n() != n || w.r() != r || w.left_context != s) {
        return Err(TrainError::InconsistentWindows);
    }
    Ok(())
}

/// Accumulates predicted-vs-ground-truth statistics batch by batch.
#[derive(Debug, Default, Clone)]
pub struct MetricAccumulator {
    abs_sum: f64,
    sq_sum: f64,
    y_sum: f64,
    exact: usize,
    pm1: usize,
    pm2: usize,
    rel5: usize,
    n: usize,
}

impl MetricAccumulator {
    pub fn update(&mut self, y_hat: &Array2<u32>, raw_y: &Array2<u32>) {
        for (&p, &y) in y_hat.iter().zip(raw_y.iter()) {
            let d = (p as f64 - y as f64).abs();
            self.abs_sum += d;
            self.sq_sum += d * d;
            self.y_sum += y as f64;
            self.exact += usize::from(p == y);
            self.pm1 += usize::from(d <= 1.0);
            self.pm2 += usize::from(d <= 2.0);
            self.rel5 += usize::from(d <= 1.0f64.max(0.05 * y as f64));
            self.n += 1;
        }
    }

    pub fn finish(&self) -> MetricsReport {
        let n = self.n.max(1) as f64;
        let mean_y = self.y_sum / n;
        let mae = self.abs_sum / n;
        MetricsReport {
            mae,
            rmse: (self.sq_sum / n).sqrt(),
            rae: if mean_y > 0.0 { mae / mean_y } else { f64::NAN },
            acc_exact: self.exact as f64 / n,
            acc_pm1: self.pm1 as f64 / n,
            acc_pm2: self.pm2 as f64 / n,
            rel5: self.rel5 as f64 / n,
            n: self.n,
        }
    }
}

/// Runs the model over windows (no dropout, predicted head selection) and
/// reports integer-domain metrics.
pub fn evaluate(
    params: &ModelParameters<f32>,
    windows: &[FeatureWindow],
    batch_size: usize,
) -> Result<MetricsReport, TrainError> {
    check_geometry(windows)?;
    let mut acc = MetricAccumulator::default();
    let refs: Vec<&FeatureWindow> = windows.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let tb = batch_windows(chunk, &params.norm);
        let (pred, _) = forward(params, tb.inputs, tb.left_context, tb.r, None, false)?;
        acc.update(&pred.y_hat, &tb.raw_y);
    }
    Ok(acc.finish())
}

/// Full training run: fit normalization on the training split, optimize with
/// Adam and teacher forcing, early-stop on validation MAE, and report holdout
/// metrics of the best checkpoint.
pub fn train(
    config: &ModelConfig,
    spec: &TrainSpec,
    windows: &[FeatureWindow],
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    check_geometry(windows)?;
    let (train_w, val_w, hold_w) = split_dataset(windows, spec.val_frac, spec.holdout_frac)?;

    let train_feats: Vec<_> =
        train_w.iter().flat_map(|w| w.features.iter().copied()).collect();
    let norm = fit_norm(&train_feats).map_err(|_| TrainError::EmptyDataset)?;

    let mut params = init_params::<f32>(config, derive_seed(seed, SeedRole::ModelInit));
    params.norm = norm;
    let mut adam = Adam::new(config);
    let mut dropout_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedRole::Dropout));

    let lambda = config.lambda_cls as f32;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParameters<f32>)> = None;
    let mut since_best = 0usize;
    let started = std::time::Instant::now();
    let mut positions_seen = 0usize;

    for epoch in 0..spec.max_epochs {
        let mut order: Vec<usize> = (0..train_w.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed_seed(
            seed,
            SeedRole::TrainShuffle,
            epoch as u64,
        ));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut reg_sum = 0.0f64;
        let mut cls_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(spec.batch_size.max(1)) {
            let refs: Vec<&FeatureWindow> = chunk.iter().map(|&i| &train_w[i]).collect();
            let tb = batch_windows(&refs, &params.norm);
            let dropout =
                (config.dropout_p > 0.0).then_some(&mut dropout_rng);
            let (pred, cache) =
                forward(&params, tb.inputs, tb.left_context, tb.r, dropout, true)?;
            let cache = cache.unwrap();
            let tz = tb.targets_z.clone();
            let lb = loss(&pred, &tz, &tb.targets_c, HeadMask::TeacherForced, lambda);
            let grads = backward(
                &params,
                &pred,
                &cache,
                &tz,
                &tb.targets_c,
                HeadMask::TeacherForced,
                lambda,
            );
            adam.apply(&mut params.block, &grads, spec);
            loss_sum += lb.total as f64;
            reg_sum += lb.regression as f64;
            cls_sum += lb.classification as f64;
            batches += 1;
            positions_seen += refs.len() * tb.r;
        }

        let val = evaluate(&params, val_w, spec.batch_size)?;
        let nb = batches.max(1) as f64;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / nb,
            train_regression: reg_sum / nb,
            train_classification: cls_sum / nb,
            val_mae: val.mae,
        });

        let improved = best.as_ref().map_or(true, |(b, _, _)| val.mae < *b);
        if improved {
            best = Some((val.mae, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.patience {
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed > 0.0 {
        // Throughput is environment-dependent; report it out of band.
        eprintln!(
            "trained {} target positions in {:.1}s ({:.0} positions/s, {} params)",
            positions_seen,
            elapsed,
            positions_seen as f64 / elapsed,
            param_count(config),
        );
    }
    let holdout = evaluate(&best_params, hold_w, spec.batch_size)?;
    Ok(TrainOutcome { params: best_params, history, best_epoch, holdout })
}

/// Baseline for judging learning: the best-achievable MAE of any constant
/// integer predictor on the given windows.
pub fn best_constant_mae(windows: &[FeatureWindow]) -> f64 {
    let mut ys: Vec<u32> = windows.iter().flat_map(|w| w.raw_y.iter().copied()).collect();
    if ys.is_empty() {
        return f64::NAN;
    }
    // The constant minimizing MAE is a median.
    ys.sort_unstable();
    let med = ys[ys.len() / 2];
    ys.iter().map(|&y| (y as f64 - med as f64).abs()).sum::<f64>() / ys.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::build_windows;
    use crate::sim::{default_configs, gen_workload, simulate, WorkloadKind, WorkloadSpec};
    use crate::trace::InstructionRecord;

    fn labeled_records(kind: WorkloadKind, count: usize, seed: u64) -> Vec<InstructionRecord> {
        let spec = WorkloadSpec {
            kind,
            instruction_count: count,
            seed,
            footprint_bytes: 1 << 16,
        };
        let records = gen_workload(&spec);
        let cfg = &default_configs()[1];
        simulate(&records, cfg)
    }

    #[test]
    fn split_is_contiguous_with_tail_holdout() {
        let records = labeled_records(WorkloadKind::LoopAlu, 4000, 1);
        let windows = build_windows(&records, 40, 20, 20, 10).unwrap();
        let n = windows.len();
        let (tr, va, ho) = split_dataset(&windows, 0.1, 0.1).unwrap();
        assert_eq!(tr.len() + va.len() + ho.len(), n);
        assert_eq!(ho.len(), (n as f64 * 0.1).floor() as usize);
        // Tail holdout: last window of holdout is last window overall.
        assert_eq!(
            ho.last().unwrap().trace_offset,
            windows.last().unwrap().trace_offset
        );
        assert!(tr.last().unwrap().trace_offset < va[0].trace_offset);
        assert!(va.last().unwrap().trace_offset < ho[0].trace_offset);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        let records = labeled_records(WorkloadKind::LoopAlu, 200, 1);
        let windows = build_windows(&records, 40, 20, 20, 10).unwrap();
        assert!(split_dataset(&windows, 0.1, 0.1).is_err());
    }

    #[test]
    fn metric_accumulator_hand_case() {
        let mut acc = MetricAccumulator::default();
        let y_hat = ndarray::array![[3u32, 0, 10, 100]];
        let y = ndarray::array![[1u32, 0, 12, 101]];
        acc.update(&y_hat, &y);
        let m = acc.finish();
        assert_eq!(m.n, 4);
        assert!((m.mae - 5.0 / 4.0).abs() < 1e-12);
        assert!((m.rmse - (9.0f64 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(m.acc_exact, 0.25);
        assert_eq!(m.acc_pm1, 0.5);
        assert_eq!(m.acc_pm2, 1.0);
        // rel5 tolerances: max(1, .05y) = 1, 1, 1, 5.05 -> hits at y=0 and 100.
        assert_eq!(m.rel5, 0.5);
        assert!((m.rae - (5.0 / 4.0) / (114.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn best_constant_mae_is_minimal_over_constants() {
        let records = labeled_records(WorkloadKind::Mixed, 3000, 3);
        let windows = build_windows(&records, 40, 20, 20, 10).unwrap();
        let best = best_constant_mae(&windows);
        let ys: Vec<u32> =
            windows.iter().flat_map(|w| w.raw_y.iter().copied()).collect();
        for c in 0..20u32 {
            let mae =
                ys.iter().map(|&y| (y as f64 - c as f64).abs()).sum::<f64>() / ys.len() as f64;
            assert!(best <= mae + 1e-12);
        }
    }

    #[test]
    fn short_training_run_improves_on_initial_model() {
        let records = labeled_records(WorkloadKind::LoopAlu, 6000, 7);
        let windows = build_windows(&records, 48, 24, 24, 10).unwrap();
        let config = ModelConfig {
            proj_dim: 32,
            hidden: 32,
            layers: 1,
            cls_hidden: 16,
            dropout_p: 0.0,
            ..ModelConfig::default()
        };
        let spec = TrainSpec {
            max_epochs: 4,
            patience: 4,
            batch_size: 32,
            ..TrainSpec::default()
        };
        let out = train(&config, &spec, &windows, 99).unwrap();
        assert!(!out.history.is_empty());
        let first = out.history.first().unwrap().val_mae;
        let last_best = out.history.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
        assert!(last_best <= first);
        assert!(out.holdout.n > 0);
        // Loss should decrease over the run.
        assert!(
            out.history.last().unwrap().train_loss < out.history.first().unwrap().train_loss
        );
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let records = labeled_records(WorkloadKind::Streaming, 3000, 5);
        let windows = build_windows(&records, 40, 20, 20, 10).unwrap();
        let config = ModelConfig {
            proj_dim: 16,
            hidden: 16,
            layers: 1,
            cls_hidden: 8,
            dropout_p: 0.1,
            ..ModelConfig::default()
        };
        let spec = TrainSpec { max_epochs: 2, batch_size: 16, ..TrainSpec::default() };
        let a = train(&config, &spec, &windows, 11).unwrap();
        let b = train(&config, &spec, &windows, 11).unwrap();
        assert_eq!(a.params.block, b.params.block);
        assert_eq!(a.history, b.history);
        let c = train(&config, &spec, &windows, 12).unwrap();
        assert_ne!(a.params.block, c.params.block);
    }
}

//! Losses, SGD with per-layer learning rates, and the three-stage training
//! schedule: (1) trunk + boundary branch under the joint HR/boundary
//! objective, (2) residue branch against the frozen intermediate output,
//! (3) joint fine-tuning through the fusion layer.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::TrainingTriplet;
use crate::metrics::{psnr, EvalPair};
use crate::model_io::save_model;
use crate::network::{
    build_network, forward_cached, init_fusion_delta, init_gaussian, init_structured,
    ForwardCache, ForwardScope, LayerId, NetworkConfig, NetworkParams,
};
use crate::ops::{conv2d_backward, deconv2d_backward, relu_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Weight of the boundary-prediction term in the stage-1 objective.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Zero-mean Gaussian kernels of the given std (in units of 1e-4 the
    /// published recipe), biases zero, fusion at the centre delta.
    Gaussian,
    /// Identity-preserving start: bicubic interpolators and pass-through
    /// taps, noise elsewhere. Default for desk-scale runs.
    Structured,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr_last: f64,
    pub lr_rest: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Iterations per stage (T).
    pub iters_per_stage: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Stage-3 rates are the stage-1/2 schedule scaled by this factor.
    pub stage3_lr_scale: f64,
    pub init: InitScheme,
    pub init_std: f64,
    /// When false, stage 2 is skipped and the residual output layer is
    /// zeroed, so the fused output reduces to the filtered intermediate.
    pub rcn_enabled: bool,
    pub divergence_threshold: f64,
    /// Evaluate validation PSNR every this many iterations (0 = never).
    pub val_interval: usize,
    /// Write a checkpoint model file every N iterations.
    pub checkpoint: Option<(PathBuf, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_last: 1e-5,
            lr_rest: 1e-4,
            momentum: 0.9,
            batch_size: 64,
            iters_per_stage: 50_000,
            seed: 0,
            deterministic: true,
            stage3_lr_scale: 0.1,
            init: InitScheme::Structured,
            init_std: 1e-4,
            rcn_enabled: true,
            divergence_threshold: 1e6,
            val_interval: 0,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_last > 0.0 && self.lr_rest > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.lr_last > self.lr_rest {
            return Err(Error::invalid("lr_last must not exceed lr_rest"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training log

#[derive(Debug, Clone)]
pub struct LogRow {
    pub iter: usize,
    pub stage: u8,
    pub loss_h: Option<f64>,
    pub loss_b: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_total: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn push(&mut self, row: LogRow) {
        debug_assert!(self.rows.last().map_or(true, |r| row.iter > r.iter));
        self.rows.push(row);
    }

    pub fn next_iter(&self) -> usize {
        self.rows.last().map_or(1, |r| r.iter + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,stage,loss_h,loss_b,loss_d,loss_total,val_psnr\n");
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6e},{}\n",
                r.iter,
                r.stage,
                fmt_opt(r.loss_h),
                fmt_opt(r.loss_b),
                fmt_opt(r.loss_d),
                r.loss_total,
                r.val_psnr.map(|v| format!("{v:.4}")).unwrap_or_default()
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Gradients

/// Kernel and bias gradients for every layer, aligned with
/// `NetworkParams::layer_ids()`.
#[derive(Debug, Clone)]
pub struct NetworkGrads<T> {
    ids: Vec<LayerId>,
    entries: Vec<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        let ids = params.layer_ids();
        let entries = ids
            .iter()
            .map(|&id| {
                let (k, b) = params.layer(id);
                (Tensor::zeros(k.shape()), vec![T::zero(); b.len()])
            })
            .collect();
        NetworkGrads { ids, entries }
    }

    fn index(&self, id: LayerId) -> usize {
        self.ids.iter().position(|&i| i == id).expect("known layer")
    }

    pub fn get(&self, id: LayerId) -> (&Tensor<T>, &[T]) {
        let e = &self.entries[self.index(id)];
        (&e.0, &e.1)
    }

    pub fn add_layer(&mut self, id: LayerId, kernel: &Tensor<T>, bias: &[T]) {
        let i = self.index(id);
        self.entries[i].0.scaled_add(T::one(), kernel);
        for (a, b) in self.entries[i].1.iter_mut().zip(bias) {
            *a += *b;
        }
    }

    pub fn accumulate(&mut self, other: &NetworkGrads<T>) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.0.scaled_add(T::one(), &b.0);
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for e in &mut self.entries {
            e.0.scale(s);
            for v in &mut e.1 {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> std::result::Result<(), LayerId> {
        for (&id, e) in self.ids.iter().zip(&self.entries) {
            if !e.0.is_finite() || !e.1.iter().all(|v| v.is_finite()) {
                return Err(id);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to the prediction.
pub fn mse_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_same_shape(pred, target, "mse")?;
    let m = pred.len() as f64;
    let mut acc = 0.0f64;
    let scale = T::from_f64(2.0 / m);
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = *p - *t;
        acc += d.as_f64() * d.as_f64();
        *g = d * scale;
    }
    Ok((acc / m, grad))
}

#[derive(Debug)]
pub struct Stage1Loss<T> {
    pub total: f64,
    pub hr_term: f64,
    pub boundary_term: f64,
    pub grad_intermediate: Tensor<T>,
    pub grad_boundary: Tensor<T>,
}

/// Stage-1 objective: HR reconstruction MSE plus `alpha` times the mean of
/// the boundary-prediction MSEs (one per provided boundary map).
pub fn loss_stage1<T: Scalar>(
    intermediate_hr: &Tensor<T>,
    boundary_map: &Tensor<T>,
    hr: &Tensor<T>,
    boundaries: &[Tensor<T>],
    alpha: f64,
) -> Result<Stage1Loss<T>> {
    if boundaries.is_empty() {
        return Err(Error::invalid("stage-1 loss needs at least one boundary map"));
    }
    let (hr_term, grad_intermediate) = mse_loss_grad(intermediate_hr, hr)?;
    let m = boundaries.len() as f64;
    let mut boundary_term = 0.0;
    let mut grad_boundary = Tensor::zeros(boundary_map.shape());
    for b in boundaries {
        let (lb, g) = mse_loss_grad(boundary_map, b)?;
        boundary_term += lb / m;
        grad_boundary.scaled_add(T::from_f64(alpha / m), &g);
    }
    Ok(Stage1Loss {
        total: hr_term + alpha * boundary_term,
        hr_term,
        boundary_term,
        grad_intermediate,
        grad_boundary,
    })
}

/// Stage-2 objective: MSE between the residual and the gap left by the
/// frozen intermediate HR image. Gradient flows only to the residue branch.
pub fn loss_stage2<T: Scalar>(
    residual: &Tensor<T>,
    intermediate_hr: &Tensor<T>,
    hr: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    check_same_shape(residual, hr, "stage-2 loss")?;
    check_same_shape(intermediate_hr, hr, "stage-2 loss")?;
    let m = residual.len() as f64;
    let scale = T::from_f64(2.0 / m);
    let mut acc = 0.0f64;
    let mut grad = Tensor::zeros(residual.shape());
    for i in 0..residual.len() {
        let d = intermediate_hr.data()[i] + residual.data()[i] - hr.data()[i];
        acc += d.as_f64() * d.as_f64();
        grad.data_mut()[i] = d * scale;
    }
    Ok((acc / m, grad))
}

/// Stage-3 objective: MSE between the fused output and the HR target.
pub fn loss_stage3<T: Scalar>(fused: &Tensor<T>, hr: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    mse_loss_grad(fused, hr)
}

// ---------------------------------------------------------------------------
// Backward passes

fn stack2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (h, w) = a.hw();
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[2, h, w], data).unwrap()
}

/// Backprop through the boundary branch; returns the gradient with respect
/// to the shared feature map.
fn backprop_boundary_branch<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_intermediate: &Tensor<T>,
    grad_boundary: &Tensor<T>,
    grads: &mut NetworkGrads<T>,
) -> Result<Tensor<T>> {
    let g_head = stack2(grad_intermediate, grad_boundary);
    let (g_hidden_post, gk, gb) =
        conv2d_backward(&cache.boundary_hidden_post, &params.boundary_out, &g_head)?;
    grads.add_layer(LayerId::BoundaryOut, &gk, &gb);

    let g_hidden = relu_backward(&cache.boundary_hidden_post, &g_hidden_post);
    let (g_up_post, gk, gb) =
        conv2d_backward(&cache.up_boundary_post, &params.boundary_hidden, &g_hidden)?;
    grads.add_layer(LayerId::BoundaryHidden, &gk, &gb);

    let g_up = relu_backward(&cache.up_boundary_post, &g_up_post);
    let feat = cache.extract_post.last().unwrap();
    let (g_feat, gk, gb) = deconv2d_backward(feat, &params.up_boundary, &g_up)?;
    grads.add_layer(LayerId::UpBoundary, &gk, &gb);
    Ok(g_feat)
}

/// Backprop through the residue branch. With `into_trunk` false (stage 2)
/// the walk stops after the branch's own convolutions; otherwise it
/// continues through the interpolator and returns the feature gradient.
fn backprop_residual_branch<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_residual: &Tensor<T>,
    into_trunk: bool,
    grads: &mut NetworkGrads<T>,
) -> Result<Option<Tensor<T>>> {
    let hidden_post = cache
        .residual_hidden_post
        .as_ref()
        .ok_or_else(|| Error::invalid("residual branch was not evaluated"))?;
    let up_post = cache.up_residual_post.as_ref().unwrap();

    let (g_hidden_post, gk, gb) =
        conv2d_backward(hidden_post, &params.residual_out, grad_residual)?;
    grads.add_layer(LayerId::ResidualOut, &gk, &gb);

    let g_hidden = relu_backward(hidden_post, &g_hidden_post);
    let (g_up_post, gk, gb) = conv2d_backward(up_post, &params.residual_hidden, &g_hidden)?;
    grads.add_layer(LayerId::ResidualHidden, &gk, &gb);

    if !into_trunk {
        return Ok(None);
    }
    let g_up = relu_backward(up_post, &g_up_post);
    let feat = cache.extract_post.last().unwrap();
    let (g_feat, gk, gb) = deconv2d_backward(feat, &params.up_residual, &g_up)?;
    grads.add_layer(LayerId::UpResidual, &gk, &gb);
    Ok(Some(g_feat))
}

/// Backprop the feature gradient through the extraction stack.
fn backprop_extraction<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_feat: &Tensor<T>,
    grads: &mut NetworkGrads<T>,
) -> Result<()> {
    let depth = params.extraction.len();
    let mut g = relu_backward(&cache.extract_post[depth - 1], grad_feat);
    for i in (0..depth).rev() {
        let input = if i == 0 {
            &cache.input
        } else {
            &cache.extract_post[i - 1]
        };
        let (g_in, gk, gb) = conv2d_backward(input, &params.extraction[i], &g)?;
        grads.add_layer(LayerId::Extract(i), &gk, &gb);
        if i > 0 {
            g = relu_backward(&cache.extract_post[i - 1], &g_in);
        }
    }
    Ok(())
}

/// Per-iteration loss values of one stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageLosses {
    pub hr: Option<f64>,
    pub boundary: Option<f64>,
    pub residual: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    BoundaryAndTrunk,
    Residual,
    Joint,
}

impl TrainStage {
    pub fn id(self) -> u8 {
        match self {
            TrainStage::BoundaryAndTrunk => 1,
            TrainStage::Residual => 2,
            TrainStage::Joint => 3,
        }
    }
}

/// One sample's loss and parameter gradients for the given stage. This is
/// the unit the batched trainer averages; it is public so the end-to-end
/// gradient checks can exercise exactly what training uses.
pub fn sample_loss_and_grads<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    hr: &Tensor<T>,
    boundaries: &[Tensor<T>],
    stage: TrainStage,
    loss_cfg: &LossConfig,
    include_residual_in_joint: bool,
) -> Result<(StageLosses, NetworkGrads<T>)> {
    let mut grads = NetworkGrads::zeros_like(params);
    match stage {
        TrainStage::BoundaryAndTrunk => {
            let cache = forward_cached(params, input, ForwardScope::BoundaryBranch)?;
            let loss = loss_stage1(
                &cache.intermediate_hr,
                &cache.boundary_map,
                hr,
                boundaries,
                loss_cfg.alpha,
            )?;
            let g_feat = backprop_boundary_branch(
                params,
                &cache,
                &loss.grad_intermediate,
                &loss.grad_boundary,
                &mut grads,
            )?;
            backprop_extraction(params, &cache, &g_feat, &mut grads)?;
            Ok((
                StageLosses {
                    hr: Some(loss.hr_term),
                    boundary: Some(loss.boundary_term),
                    residual: None,
                    total: loss.total,
                },
                grads,
            ))
        }
        TrainStage::Residual => {
            let cache = forward_cached(params, input, ForwardScope::Full)?;
            let (ld, g_res) =
                loss_stage2(cache.residual.as_ref().unwrap(), &cache.intermediate_hr, hr)?;
            backprop_residual_branch(params, &cache, &g_res, false, &mut grads)?;
            Ok((
                StageLosses {
                    hr: None,
                    boundary: None,
                    residual: Some(ld),
                    total: ld,
                },
                grads,
            ))
        }
        TrainStage::Joint => {
            let cache = forward_cached(params, input, ForwardScope::Full)?;
            let (l, g_y) = loss_stage3(cache.fused.as_ref().unwrap(), hr)?;
            // fused = fusion (*) intermediate + residual
            let (g_ihr, gk_fusion, _gb) =
                conv2d_backward(&cache.intermediate_hr, &params.fusion, &g_y)?;
            grads.add_layer(LayerId::Fusion, &gk_fusion, &[T::zero()]);
            let zero = Tensor::zeros(cache.boundary_map.shape());
            let mut g_feat = backprop_boundary_branch(params, &cache, &g_ihr, &zero, &mut grads)?;
            if include_residual_in_joint {
                if let Some(g_feat_r) =
                    backprop_residual_branch(params, &cache, &g_y, true, &mut grads)?
                {
                    g_feat.scaled_add(T::one(), &g_feat_r);
                }
            }
            backprop_extraction(params, &cache, &g_feat, &mut grads)?;
            Ok((
                StageLosses {
                    hr: None,
                    boundary: None,
                    residual: None,
                    total: l,
                },
                grads,
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// SGD

/// Per-layer learning rates for one stage.
pub fn stage_rates<T: Scalar>(
    params: &NetworkParams<T>,
    stage: TrainStage,
    cfg: &TrainConfig,
) -> HashMap<LayerId, f64> {
    let mut rates = HashMap::new();
    match stage {
        TrainStage::BoundaryAndTrunk => {
            for id in params.shared_layer_ids() {
                if id != LayerId::UpResidual {
                    rates.insert(id, cfg.lr_rest);
                }
            }
            rates.insert(LayerId::BoundaryHidden, cfg.lr_rest);
            rates.insert(LayerId::BoundaryOut, cfg.lr_last);
        }
        TrainStage::Residual => {
            rates.insert(LayerId::ResidualHidden, cfg.lr_rest);
            rates.insert(LayerId::ResidualOut, cfg.lr_last);
        }
        TrainStage::Joint => {
            let s = cfg.stage3_lr_scale;
            for id in params.shared_layer_ids() {
                rates.insert(id, cfg.lr_rest * s);
            }
            rates.insert(LayerId::BoundaryHidden, cfg.lr_rest * s);
            rates.insert(LayerId::BoundaryOut, cfg.lr_rest * s);
            rates.insert(LayerId::ResidualHidden, cfg.lr_rest * s);
            rates.insert(LayerId::ResidualOut, cfg.lr_rest * s);
            rates.insert(LayerId::Fusion, cfg.lr_last * s);
            if !cfg.rcn_enabled {
                rates.remove(&LayerId::UpResidual);
                rates.remove(&LayerId::ResidualHidden);
                rates.remove(&LayerId::ResidualOut);
            }
        }
    }
    rates
}

/// Momentum SGD over the layers named in `rates`:
/// `v <- momentum*v - lr*g; w <- w + v`. The fusion bias is never updated.
pub fn sgd_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &NetworkGrads<T>,
    velocity: &mut NetworkGrads<T>,
    momentum: f64,
    rates: &HashMap<LayerId, f64>,
) -> Result<()> {
    let mom = T::from_f64(momentum);
    for id in params.layer_ids() {
        let Some(&lr) = rates.get(&id) else { continue };
        let (gk, gb) = grads.get(id);
        if !gk.is_finite() || !gb.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite gradient for {}",
                id.name()
            )));
        }
        let lr_t = T::from_f64(lr);
        let vi = velocity.index(id);
        let (vk, vb) = {
            let e = &mut velocity.entries[vi];
            (&mut e.0, &mut e.1)
        };
        let (wk, wb) = params.layer_mut(id);
        for ((v, g), w) in vk.data_mut().iter_mut().zip(gk.data()).zip(wk.data_mut()) {
            *v = mom * *v - lr_t * *g;
            *w += *v;
        }
        if id != LayerId::Fusion {
            for ((v, g), w) in vb.iter_mut().zip(gb).zip(wb.iter_mut()) {
                *v = mom * *v - lr_t * *g;
                *w += *v;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage runner and the full schedule

struct Sample<T> {
    input: Tensor<T>,
    hr: Tensor<T>,
    boundaries: Vec<Tensor<T>>,
}

fn to_samples<T: Scalar>(data: &[TrainingTriplet<T>], scale: usize) -> Result<Vec<Sample<T>>> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    data.iter()
        .map(|t| {
            t.validate(scale)?;
            Ok(Sample {
                input: t.lr.to_tensor(),
                hr: t.hr.to_tensor(),
                boundaries: t.boundaries.iter().map(|b| b.to_tensor()).collect(),
            })
        })
        .collect()
}

fn validation_psnr<T: Scalar>(params: &NetworkParams<T>, val: &[Sample<T>]) -> Option<f64> {
    if val.is_empty() {
        return None;
    }
    let scale = params.scale;
    let scores: Vec<f64> = val
        .iter()
        .filter_map(|s| {
            let out = crate::network::forward(params, &s.input).ok()?;
            let gt = crate::imaging::ImagePlane::from_tensor(&s.hr);
            let pred = crate::imaging::ImagePlane::from_tensor(&out.fused);
            let pair = EvalPair::new(&gt, &pred, scale).ok()?;
            Some(psnr(&pair))
        })
        .filter(|v| v.is_finite())
        .collect();
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Run `cfg.iters_per_stage` iterations of one stage, appending to the log.
pub fn run_stage<T: Scalar>(
    params: &mut NetworkParams<T>,
    stage: TrainStage,
    data: &[TrainingTriplet<T>],
    val: &[TrainingTriplet<T>],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
    log: &mut TrainLog,
) -> Result<()> {
    cfg.validate()?;
    let samples = to_samples(data, params.scale)?;
    let val_samples: Vec<Sample<T>> = if val.is_empty() {
        Vec::new()
    } else {
        to_samples(val, params.scale)?
    };
    let rates = stage_rates(params, stage, cfg);
    let mut velocity = NetworkGrads::zeros_like(params);
    let n = samples.len();
    let batch = cfg.batch_size.min(n.max(1));
    let include_residual = cfg.rcn_enabled;

    for _ in 0..cfg.iters_per_stage {
        let iter = log.next_iter();
        let indices: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..n)).collect();

        let per_sample: Vec<Result<(StageLosses, NetworkGrads<T>)>> = indices
            .par_iter()
            .map(|&i| {
                let s = &samples[i];
                sample_loss_and_grads(
                    params,
                    &s.input,
                    &s.hr,
                    &s.boundaries,
                    stage,
                    loss_cfg,
                    include_residual,
                )
            })
            .collect();

        let mut grads = NetworkGrads::zeros_like(params);
        let mut losses = StageLosses::default();
        let mut count = 0.0f64;
        for r in per_sample {
            let (l, g) = r?;
            grads.accumulate(&g);
            losses.total += l.total;
            losses.hr = merge_opt(losses.hr, l.hr);
            losses.boundary = merge_opt(losses.boundary, l.boundary);
            losses.residual = merge_opt(losses.residual, l.residual);
            count += 1.0;
        }
        grads.scale(T::from_f64(1.0 / count));
        losses.total /= count;
        losses.hr = losses.hr.map(|v| v / count);
        losses.boundary = losses.boundary.map(|v| v / count);
        losses.residual = losses.residual.map(|v| v / count);

        if !losses.total.is_finite() || losses.total > cfg.divergence_threshold {
            return Err(Error::Divergence {
                stage: stage.id(),
                iter,
                loss: losses.total,
            });
        }

        sgd_step(params, &grads, &mut velocity, cfg.momentum, &rates)?;

        let val_psnr = if cfg.val_interval > 0
            && (iter % cfg.val_interval == 0 || iter == 1)
            && !val_samples.is_empty()
        {
            validation_psnr(params, &val_samples)
        } else {
            None
        };
        log.push(LogRow {
            iter,
            stage: stage.id(),
            loss_h: losses.hr,
            loss_b: losses.boundary,
            loss_d: losses.residual,
            loss_total: losses.total,
            val_psnr,
        });

        if let Some((path, every)) = &cfg.checkpoint {
            if *every > 0 && iter % every == 0 {
                save_model(params, path)?;
            }
        }
    }
    if let Some((path, _)) = &cfg.checkpoint {
        save_model(params, path)?;
    }
    Ok(())
}

fn merge_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (None, x) => x,
        (x, None) => x,
        (Some(x), Some(y)) => Some(x + y),
    }
}

/// Build, initialize and train a network through the three-stage schedule.
pub fn train<T: Scalar>(
    net_cfg: &NetworkConfig,
    data: &[TrainingTriplet<T>],
    val: &[TrainingTriplet<T>],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(NetworkParams<T>, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut params = build_network::<T>(net_cfg)?;
    match cfg.init {
        InitScheme::Gaussian => {
            init_gaussian(&mut params, cfg.init_std, net_cfg.seed)?;
            init_fusion_delta(&mut params);
        }
        InitScheme::Structured => init_structured(&mut params, net_cfg.seed)?,
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6E64_5F73_6764);
    let mut log = TrainLog::default();

    run_stage(
        &mut params,
        TrainStage::BoundaryAndTrunk,
        data,
        val,
        cfg,
        loss_cfg,
        &mut rng,
        &mut log,
    )?;
    if cfg.rcn_enabled {
        run_stage(
            &mut params,
            TrainStage::Residual,
            data,
            val,
            cfg,
            loss_cfg,
            &mut rng,
            &mut log,
        )?;
    } else {
        // The ablated model must evaluate with an exactly-zero residual.
        params.residual_out.kernels.fill(T::zero());
        for b in params.residual_out.bias.iter_mut() {
            *b = T::zero();
        }
    }
    run_stage(
        &mut params,
        TrainStage::Joint,
        data,
        val,
        cfg,
        loss_cfg,
        &mut rng,
        &mut log,
    )?;
    Ok((params, log))
}

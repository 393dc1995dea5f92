//! Training stack: run configuration, AdamW with decoupled weight decay and
//! global-norm clipping, the one-cycle learning-rate schedule, the
//! progressive transfer protocol with freezing, the training loop, and
//! autoregressive generation.

mod run;

pub use run::{
    generate, metrics_csv, stage2_transfer_freeze_list, train_stage, transfer_and_freeze,
    MetricRow, TrainOutcome,
};

use crate::autodiff::{AutodiffError, GradMap, ParamStore, Tensor};
use crate::data::checkpoint::Checkpoint;
use crate::data::DataError;
use crate::model::{FfnMode, ModelError, NormMode, Stage, StageConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite gradient for '{0}'; optimizer step aborted")]
    NonFinite(String),
    #[error("training diverged at step {step}; last good checkpoint attached")]
    Divergence {
        step: u64,
        last_good: Box<Checkpoint>,
    },
    #[error("transfer mismatch: {0}")]
    Transfer(String),
    #[error("generation: {0}")]
    Generation(String),
}

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

fn d_d() -> usize { 64 }
fn d_layers() -> usize { 4 }
fn d_dff() -> usize { 256 }
fn d_vocab() -> usize { 256 }
fn d_seq() -> usize { 128 }
fn d_dropout() -> f64 { 0.1 }
fn d_heads() -> usize { 1 }
fn d_zeta() -> f64 { 1.0 }
fn d_init_std() -> f64 { 0.02 }
fn d_seed() -> u64 { 42 }
fn d_steps() -> u64 { 2000 }
fn d_batch() -> usize { 16 }
fn d_lr_max() -> f64 { 1e-3 }
fn d_lr_min() -> f64 { 2e-5 }
fn d_warmup() -> u64 { 500 }
fn d_beta1() -> f64 { 0.9 }
fn d_beta2() -> f64 { 0.95 }
fn d_eps() -> f64 { 1e-8 }
fn d_wd() -> f64 { 0.1 }
fn d_clip() -> f64 { 1.0 }
fn d_eval_interval() -> u64 { 100 }
fn d_eval_batches() -> usize { 50 }
fn d_neutral_tol() -> f64 { 0.02 }
fn default_norm() -> NormMode { NormMode::Layernorm }

/// Full experiment configuration: stage, model dimensions, training
/// hyperparameters, corpus and output paths, seeding, and determinism mode.
/// Unknown JSON keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stage: usize,
    #[serde(default = "d_d")]
    pub d: usize,
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_dff")]
    pub d_ff: usize,
    #[serde(default = "d_vocab")]
    pub vocab: usize,
    #[serde(default = "d_seq")]
    pub seq_len: usize,
    #[serde(default = "default_norm")]
    pub norm_mode: NormMode,
    /// feed-forward mode; omitted means the stage default (GELU MLP for
    /// stages 1–2, none for stages 3–4)
    #[serde(default)]
    pub ffn_mode: Option<FfnMode>,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_zeta")]
    pub zeta_init: f64,
    #[serde(default = "d_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_lr_max")]
    pub lr_max: f64,
    #[serde(default = "d_lr_min")]
    pub lr_min: f64,
    #[serde(default = "d_warmup")]
    pub warmup: u64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_clip")]
    pub clip: f64,
    #[serde(default = "d_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "d_eval_batches")]
    pub eval_batches: usize,
    /// fraction of steps with transferred tensors frozen (stage 2 two-phase
    /// schedule); omitted means 0.25 for stage 2 and 0 otherwise
    #[serde(default)]
    pub freeze_frac: Option<f64>,
    #[serde(default = "d_neutral_tol")]
    pub neutral_tol: f64,
    #[serde(default)]
    pub strict_deterministic: bool,
}

impl RunConfig {
    pub fn for_stage(stage: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "stage": stage }))
            .expect("defaults are complete")
    }

    pub fn stage_enum(&self) -> Result<Stage, TrainError> {
        Stage::from_index(self.stage)
            .ok_or_else(|| TrainError::Config(format!("stage must be 1..=4, got {}", self.stage)))
    }

    pub fn stage_config(&self) -> Result<StageConfig, TrainError> {
        let stage = self.stage_enum()?;
        let cfg = StageConfig {
            stage,
            d: self.d,
            layers: self.layers,
            d_ff: self.d_ff,
            vocab: self.vocab,
            seq_len: self.seq_len,
            norm_mode: self.norm_mode,
            ffn_mode: self.ffn_mode.unwrap_or_else(|| StageConfig::default_ffn(stage)),
            dropout: self.dropout,
            heads: self.heads,
            zeta_init: self.zeta_init,
            init_std: self.init_std,
        };
        cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn optimizer_hyper(&self) -> OptimizerHyper {
        OptimizerHyper {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            warmup: self.warmup,
            max_steps: self.steps,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip: self.clip,
        }
    }

    pub fn effective_freeze_frac(&self) -> f64 {
        self.freeze_frac
            .unwrap_or(if self.stage == 2 { 0.25 } else { 0.0 })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.stage_config()?;
        if self.steps == 0 || self.batch == 0 {
            return Err(TrainError::Config("steps and batch must be positive".into()));
        }
        if !(self.lr_max > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr_max {
            return Err(TrainError::Config(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.warmup > self.steps {
            return Err(TrainError::Config(format!(
                "warmup {} exceeds total steps {}",
                self.warmup, self.steps
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(TrainError::Config(format!("{name} must be in [0,1)")));
            }
        }
        if !(self.clip > 0.0) {
            return Err(TrainError::Config("clip must be positive".into()));
        }
        if let Some(f) = self.freeze_frac {
            if !(0.0..=1.0).contains(&f) {
                return Err(TrainError::Config("freeze_frac must be in [0,1]".into()));
            }
        }
        if self.eval_interval == 0 || self.eval_batches == 0 {
            return Err(TrainError::Config(
                "eval_interval and eval_batches must be positive".into(),
            ));
        }
        if !(self.neutral_tol > 0.0) {
            return Err(TrainError::Config("neutral_tol must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct OptimizerHyper {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup: u64,
    pub max_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip: f64,
}

/// Linear warmup to `lr_max` over the warmup steps, cosine decay to `lr_min`
/// at `max_steps`, clamped to `lr_min` beyond.
pub fn onecycle_lr(h: &OptimizerHyper, step: u64) -> f64 {
    if step >= h.max_steps {
        return h.lr_min;
    }
    if h.warmup > 0 && step <= h.warmup {
        return h.lr_max * step as f64 / h.warmup as f64;
    }
    let span = (h.max_steps - h.warmup) as f64;
    let progress = (step - h.warmup) as f64 / span;
    h.lr_min + 0.5 * (h.lr_max - h.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Per-parameter first/second moments plus the shared step count.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(
        step: u64,
        m: BTreeMap<String, Tensor>,
        v: BTreeMap<String, Tensor>,
    ) -> Self {
        OptimizerState { step, m, v }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn first_moments(&self) -> &BTreeMap<String, Tensor> {
        &self.m
    }
    pub fn second_moments(&self) -> &BTreeMap<String, Tensor> {
        &self.v
    }
}

/// Scale all gradients so their joint 2-norm is at most `clip`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut GradMap, clip: f64) -> f64 {
    let norm_sq: f64 = grads
        .values()
        .map(|t| t.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = norm_sq.sqrt();
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        for t in grads.values_mut() {
            *t = t.scale(scale);
        }
    }
    norm
}

/// One AdamW step with decoupled weight decay over every non-frozen
/// parameter; parameters without a gradient entry decay only. Frozen
/// parameters are untouched. Gradients must be finite.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &GradMap,
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
    lr: f64,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFinite(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);

    let names: Vec<String> = store
        .names()
        .filter(|n| !store.is_frozen(n))
        .cloned()
        .collect();
    for name in names {
        let current = store.value(&name)?.clone();
        let (rows, cols) = (current.rows(), current.cols());
        let zero = || Tensor::zeros(rows, cols);
        let g = grads.get(&name);
        let m = state.m.entry(name.clone()).or_insert_with(zero);
        let v = state.v.entry(name.clone()).or_insert_with(zero);
        let mut updated = current.clone();
        for i in 0..rows * cols {
            let gi = g.map(|t| t.data()[i]).unwrap_or(0.0);
            let mi = hyper.beta1 * m.data()[i] + (1.0 - hyper.beta1) * gi;
            let vi = hyper.beta2 * v.data()[i] + (1.0 - hyper.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            let p = current.data()[i];
            updated.data_mut()[i] =
                p - lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * p);
        }
        store.set_value(&name, updated)?;
    }
    Ok(())
}

//! Layer and model graph builders. Each stage's layer is assembled from the
//! registered autodiff ops; the full forward maps token ids to logits through
//! embeddings, L layers, a final norm, and the output projection.

use super::{FfnMode, ModelError, NormMode, Stage, StageConfig, LAYERNORM_EPS};
use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Forward-pass mode: evaluation, or training with a dropout stream.
pub enum Mode<'a> {
    Eval,
    Train { dropout_rng: &'a mut ChaCha8Rng },
}

pub struct ForwardOutput {
    /// hidden state entering the final norm
    pub hidden: NodeId,
    pub logits: NodeId,
    /// mean cross-entropy over positions, present when targets were given
    pub loss: Option<NodeId>,
}

struct LayerParts {
    out: NodeId,
    /// feature-mapped query/key nodes, for stages with an attention path
    qf: Option<NodeId>,
    kf: Option<NodeId>,
}

fn norm(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &StageConfig,
    x: NodeId,
    gain: &str,
    bias: &str,
) -> Result<NodeId, ModelError> {
    let g = tape.param(store, gain)?;
    let b = tape.param(store, bias)?;
    let out = match cfg.norm_mode {
        NormMode::Layernorm => tape.layernorm(x, g, b, LAYERNORM_EPS)?,
        NormMode::LinearScale => tape.linear_scale_norm(x, g, b)?,
    };
    Ok(out)
}

fn mlp(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &StageConfig,
    prefix: &str,
    x: NodeId,
) -> Result<Option<NodeId>, ModelError> {
    if cfg.ffn_mode == FfnMode::None {
        return Ok(None);
    }
    let w1 = tape.param(store, &format!("{prefix}mlp.w1"))?;
    let b1 = tape.param(store, &format!("{prefix}mlp.b1"))?;
    let w2 = tape.param(store, &format!("{prefix}mlp.w2"))?;
    let b2 = tape.param(store, &format!("{prefix}mlp.b2"))?;
    let a = tape.matmul_nt(x, w1)?;
    let a = tape.add_row_bias(a, b1)?;
    let inner = match cfg.ffn_mode {
        FfnMode::GeluMlp => tape.gelu(a)?,
        FfnMode::Linear => a,
        FfnMode::None => unreachable!(),
    };
    let m = tape.matmul_nt(inner, w2)?;
    Ok(Some(tape.add_row_bias(m, b2)?))
}

/// Dropout on the nonlinear branch (stages I–II, training mode only).
fn maybe_dropout(
    tape: &mut Tape,
    cfg: &StageConfig,
    mode: &mut Mode,
    branch: NodeId,
) -> Result<NodeId, ModelError> {
    let applies = matches!(cfg.stage, Stage::I | Stage::II) && cfg.dropout > 0.0;
    match mode {
        Mode::Train { dropout_rng } if applies => {
            let v = tape.value(branch);
            let p = cfg.dropout;
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..v.rows() * v.cols())
                .map(|_| {
                    if dropout_rng.gen_range(0.0..1.0) < p {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect();
            Ok(tape.dropout(branch, &mask)?)
        }
        _ => Ok(branch),
    }
}

fn layer_parts(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &StageConfig,
    layer: usize,
    x: NodeId,
    mode: &mut Mode,
) -> Result<LayerParts, ModelError> {
    let p = format!("layers.{layer}.");
    match cfg.stage {
        Stage::I => {
            // x + FNetAR(x) + MLP(x); the Fourier branch normalizes first
            let h = norm(tape, store, cfg, x, &format!("{p}ln.g"), &format!("{p}ln.b"))?;
            let f = tape.causal_dft_real(h)?;
            let mut out = tape.add(x, f)?;
            if let Some(m) = mlp(tape, store, cfg, &p, x)? {
                let m = maybe_dropout(tape, cfg, mode, m)?;
                out = tape.add(out, m)?;
            }
            Ok(LayerParts { out, qf: None, kf: None })
        }
        Stage::II => {
            // h = Norm(x); x + K h + MLP(h)
            let h = norm(tape, store, cfg, x, &format!("{p}ln.g"), &format!("{p}ln.b"))?;
            let k = tape.param(store, &format!("{p}koopman"))?;
            let kh = tape.matmul_nt(h, k)?;
            let mut out = tape.add(x, kh)?;
            if let Some(m) = mlp(tape, store, cfg, &p, h)? {
                let m = maybe_dropout(tape, cfg, mode, m)?;
                out = tape.add(out, m)?;
            }
            Ok(LayerParts { out, qf: None, kf: None })
        }
        Stage::III | Stage::IV => {
            // x + K(Norm(x)) + ζ·LinearAttention(x), operator orthogonal in stage IV
            let h = norm(tape, store, cfg, x, &format!("{p}ln.g"), &format!("{p}ln.b"))?;
            let kh = match cfg.stage {
                Stage::III => {
                    let k = tape.param(store, &format!("{p}koopman"))?;
                    tape.matmul_nt(h, k)?
                }
                Stage::IV => {
                    let w = tape.param(store, &format!("{p}skew_w"))?;
                    let u = tape.skew_mat_exp(w)?;
                    tape.matmul_nt(h, u)?
                }
                _ => unreachable!(),
            };
            let wq = tape.param(store, &format!("{p}wq"))?;
            let wk = tape.param(store, &format!("{p}wk"))?;
            let wv = tape.param(store, &format!("{p}wv"))?;
            let c = tape.param(store, &format!("{p}c"))?;
            let q = tape.matmul_nt(x, wq)?;
            let qf = tape.add_row_bias(q, c)?;
            let kproj = tape.matmul_nt(x, wk)?;
            let kf = tape.add_row_bias(kproj, c)?;
            let v = tape.matmul_nt(x, wv)?;
            let attn = tape.prefix_linear_attention(qf, kf, v)?;
            let zeta = tape.param(store, &format!("{p}zeta"))?;
            let scaled = tape.scale_by_param(attn, zeta)?;
            let mut out = tape.add(x, kh)?;
            out = tape.add(out, scaled)?;
            if let Some(m) = mlp(tape, store, cfg, &p, h)? {
                out = tape.add(out, m)?;
            }
            Ok(LayerParts {
                out,
                qf: Some(qf),
                kf: Some(kf),
            })
        }
    }
}

/// One stage layer applied to a hidden-state node. Position i of the output
/// depends only on positions ≤ i of the input.
pub fn build_layer(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &StageConfig,
    layer: usize,
    x: NodeId,
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    Ok(layer_parts(tape, store, cfg, layer, x, mode)?.out)
}

fn validate_tokens(cfg: &StageConfig, tokens: &[usize]) -> Result<(), ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::Sequence("empty token sequence".into()));
    }
    if tokens.len() > cfg.seq_len {
        return Err(ModelError::Sequence(format!(
            "sequence length {} exceeds maximum {}",
            tokens.len(),
            cfg.seq_len
        )));
    }
    Ok(())
}

fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    tokens: &[usize],
) -> Result<NodeId, ModelError> {
    let tok = tape.param(store, "tok_emb")?;
    let te = tape.embedding(tok, tokens)?;
    let pos = tape.param(store, "pos_emb")?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pe = tape.embedding(pos, &positions)?;
    Ok(tape.add(te, pe)?)
}

/// Full token-to-logits forward; adds the mean cross-entropy when targets are
/// supplied. Logits at position t depend only on tokens ≤ t.
pub fn build_forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &StageConfig,
    tokens: &[usize],
    targets: Option<&[usize]>,
    mode: &mut Mode,
) -> Result<ForwardOutput, ModelError> {
    validate_tokens(cfg, tokens)?;
    if let Some(t) = targets {
        if t.len() != tokens.len() {
            return Err(ModelError::Sequence(format!(
                "{} tokens vs {} targets",
                tokens.len(),
                t.len()
            )));
        }
    }
    let mut x = embed(tape, store, tokens)?;
    for l in 0..cfg.layers {
        x = build_layer(tape, store, cfg, l, x, mode)?;
    }
    let hidden = x;
    let h = norm(tape, store, cfg, hidden, "final_norm.g", "final_norm.b")?;
    let out = tape.param(store, "out_proj")?;
    let logits = tape.matmul_nt(h, out)?;
    let loss = match targets {
        Some(t) => Some(tape.cross_entropy(logits, t)?),
        None => None,
    };
    Ok(ForwardOutput { hidden, logits, loss })
}

/// Evaluation-mode logits as a plain tensor.
pub fn eval_logits(
    store: &ParamStore,
    cfg: &StageConfig,
    tokens: &[usize],
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let out = build_forward(&mut tape, store, cfg, tokens, None, &mut Mode::Eval)?;
    Ok(tape.value(out.logits).clone())
}

/// Fixed-context affinity probe for the hybrid stages.
///
/// A reference pass captures the attention weights w_ts = φ(q_t)·φ(k_s) at
/// every layer; those weights are then held constant while the hidden state
/// at one position is replaced. With linear-scale norm and a linear (or
/// absent) feed-forward path, the resulting map from replacement vector to
/// logits is affine.
pub struct AffineProbe {
    tokens: Vec<usize>,
    base_hidden: Tensor,
    frozen_weights: Vec<Tensor>,
}

impl AffineProbe {
    pub fn capture(
        store: &ParamStore,
        cfg: &StageConfig,
        tokens: &[usize],
    ) -> Result<Self, ModelError> {
        if !cfg.stage.has_attention() {
            return Err(ModelError::Config(
                "affine probe applies to the attention stages only".into(),
            ));
        }
        validate_tokens(cfg, tokens)?;
        let mut tape = Tape::new();
        let x0 = embed(&mut tape, store, tokens)?;
        let base_hidden = tape.value(x0).clone();
        let mut frozen_weights = Vec::with_capacity(cfg.layers);
        let mut x = x0;
        let n = tokens.len();
        for l in 0..cfg.layers {
            let parts = layer_parts(&mut tape, store, cfg, l, x, &mut Mode::Eval)?;
            let (qf, kf) = (
                tape.value(parts.qf.expect("attention stage")),
                tape.value(parts.kf.expect("attention stage")),
            );
            let mut w = Tensor::zeros(n, n);
            for t in 0..n {
                for s in 0..=t {
                    let dot: f64 = qf.row(t).iter().zip(kf.row(s)).map(|(a, b)| a * b).sum();
                    w.set(t, s, dot);
                }
            }
            frozen_weights.push(w);
            x = parts.out;
        }
        Ok(AffineProbe {
            tokens: tokens.to_vec(),
            base_hidden,
            frozen_weights,
        })
    }

    /// Logits at `position` after replacing that position's embedded hidden
    /// state with `hidden`, attention weights frozen from the reference pass.
    pub fn logits_at(
        &self,
        store: &ParamStore,
        cfg: &StageConfig,
        position: usize,
        hidden: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        let n = self.tokens.len();
        if position >= n {
            return Err(ModelError::Sequence(format!(
                "probe position {position} out of range {n}"
            )));
        }
        if hidden.len() != cfg.d {
            return Err(ModelError::Sequence(format!(
                "probe vector has dim {}, model d={}",
                hidden.len(),
                cfg.d
            )));
        }
        let mut x0 = self.base_hidden.clone();
        for (c, &v) in hidden.iter().enumerate() {
            x0.set(position, c, v);
        }
        let mut tape = Tape::new();
        let mut x = tape.constant(x0);
        for l in 0..cfg.layers {
            let p = format!("layers.{l}.");
            let h = norm(&mut tape, store, cfg, x, &format!("{p}ln.g"), &format!("{p}ln.b"))?;
            let kh = match cfg.stage {
                Stage::III => {
                    let k = tape.param(store, &format!("{p}koopman"))?;
                    tape.matmul_nt(h, k)?
                }
                Stage::IV => {
                    let w = tape.param(store, &format!("{p}skew_w"))?;
                    let u = tape.skew_mat_exp(w)?;
                    tape.matmul_nt(h, u)?
                }
                _ => unreachable!(),
            };
            let wv = tape.param(store, &format!("{p}wv"))?;
            let v = tape.matmul_nt(x, wv)?;
            let wmat = tape.constant(self.frozen_weights[l].clone());
            let attn = tape.matmul(wmat, v)?;
            let zeta = tape.param(store, &format!("{p}zeta"))?;
            let scaled = tape.scale_by_param(attn, zeta)?;
            let mut out = tape.add(x, kh)?;
            out = tape.add(out, scaled)?;
            if let Some(m) = mlp(&mut tape, store, cfg, &p, h)? {
                out = tape.add(out, m)?;
            }
            x = out;
        }
        let h = norm(&mut tape, store, cfg, x, "final_norm.g", "final_norm.b")?;
        let out = tape.param(store, "out_proj")?;
        let logits = tape.matmul_nt(h, out)?;
        Ok(tape.value(logits).row(position).to_vec())
    }
}

/// End-to-end finite-difference check of the full token-to-loss graph:
/// every parameter gradient is compared against central differences. Used by
/// the `check-grads` command and the gradient acceptance suite.
pub fn full_model_grad_check(cfg: &StageConfig, seed: u64, h: f64) -> Result<f64, ModelError> {
    use rand::SeedableRng;
    let mut store = crate::model::init_params(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd_1234);
    let n = cfg.seq_len.min(4);
    let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.vocab)).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.vocab)).collect();
    let build = |s: &ParamStore, t: &mut Tape| {
        let out = build_forward(t, s, cfg, &tokens, Some(&targets), &mut Mode::Eval)
            .unwrap_or_else(|e| panic!("gradcheck forward failed: {e}"));
        Ok(out.loss.expect("targets supplied"))
    };
    Ok(crate::autodiff::gradcheck::max_rel_error(&mut store, &build, h))
}

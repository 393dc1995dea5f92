//! The four stage architectures as composable layers over the autodiff
//! engine.
//!
//! Stage I mixes tokens with a causal Fourier transform, stage II applies a
//! learned operator position-wise, stage III mixes the operator path with
//! causal linear attention through a learned per-layer coefficient ζ, and
//! stage IV constrains the operator to be orthogonal via the exponential of a
//! skew-symmetric parameterization.

mod forward;

pub use forward::{
    build_forward, build_layer, eval_logits, full_model_grad_check, AffineProbe, ForwardOutput,
    Mode,
};

use crate::autodiff::{AutodiffError, ParamStore, Tensor};
use crate::linalg::{mat_exp, LinalgError, RealMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad input sequence: {0}")]
    Sequence(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    I,
    #[serde(rename = "2")]
    II,
    #[serde(rename = "3")]
    III,
    #[serde(rename = "4")]
    IV,
}

impl Stage {
    pub fn from_index(i: usize) -> Option<Stage> {
        match i {
            1 => Some(Stage::I),
            2 => Some(Stage::II),
            3 => Some(Stage::III),
            4 => Some(Stage::IV),
            _ => None,
        }
    }
    pub fn index(self) -> usize {
        match self {
            Stage::I => 1,
            Stage::II => 2,
            Stage::III => 3,
            Stage::IV => 4,
        }
    }
    /// Stages whose layers carry an attention path.
    pub fn has_attention(self) -> bool {
        matches!(self, Stage::III | Stage::IV)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    Layernorm,
    LinearScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FfnMode {
    GeluMlp,
    Linear,
    None,
}

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Resolved architecture description: which stage, the dimensions, and the
/// norm / feed-forward / dropout modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    /// embedding dimension
    pub d: usize,
    /// layer count
    pub layers: usize,
    /// feed-forward inner dimension
    pub d_ff: usize,
    /// vocabulary size
    pub vocab: usize,
    /// maximum sequence length
    pub seq_len: usize,
    pub norm_mode: NormMode,
    pub ffn_mode: FfnMode,
    pub dropout: f64,
    /// attention heads; the attention equations are single-head, so only 1 is
    /// accepted (the field is a config hook)
    pub heads: usize,
    pub zeta_init: f64,
    pub init_std: f64,
}

impl StageConfig {
    /// The feed-forward mode a stage uses by default: stages I and II carry a
    /// GELU MLP, stages III and IV omit it.
    pub fn default_ffn(stage: Stage) -> FfnMode {
        match stage {
            Stage::I | Stage::II => FfnMode::GeluMlp,
            Stage::III | Stage::IV => FfnMode::None,
        }
    }

    /// Desk-scale defaults: d=64, L=4, d_ff=4d, byte vocabulary, N=128.
    pub fn desk(stage: Stage) -> Self {
        StageConfig {
            stage,
            d: 64,
            layers: 4,
            d_ff: 256,
            vocab: 256,
            seq_len: 128,
            norm_mode: NormMode::Layernorm,
            ffn_mode: Self::default_ffn(stage),
            dropout: 0.1,
            heads: 1,
            zeta_init: 1.0,
            init_std: 0.02,
        }
    }

    /// Tiny configuration for gradient checks and unit tests.
    pub fn micro(stage: Stage) -> Self {
        StageConfig {
            stage,
            d: 8,
            layers: 2,
            d_ff: 16,
            vocab: 16,
            seq_len: 8,
            norm_mode: NormMode::Layernorm,
            ffn_mode: Self::default_ffn(stage),
            dropout: 0.0,
            heads: 1,
            zeta_init: 1.0,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d", self.d),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.heads != 1 {
            return Err(ModelError::Config(
                "the attention path is single-head; heads must be 1".into(),
            ));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return Err(ModelError::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    /// Whether this stage/ffn combination has an MLP branch in its layers.
    pub fn layer_has_mlp(&self) -> bool {
        match self.stage {
            Stage::I | Stage::II => self.ffn_mode != FfnMode::None,
            // stages III and IV omit the MLP unless explicitly configured back in
            Stage::III | Stage::IV => self.ffn_mode != FfnMode::None,
        }
    }
}

/// Parameter names and shapes for a configuration, in deterministic creation
/// order. This is the single source of truth for initialization, transfer,
/// and parameter counting.
pub fn param_shapes(cfg: &StageConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.d;
    let mut shapes = vec![
        ("tok_emb".to_string(), (cfg.vocab, d)),
        ("pos_emb".to_string(), (cfg.seq_len, d)),
    ];
    for l in 0..cfg.layers {
        let p = format!("layers.{l}.");
        shapes.push((format!("{p}ln.g"), (1, d)));
        shapes.push((format!("{p}ln.b"), (1, d)));
        match cfg.stage {
            Stage::I => {}
            Stage::II | Stage::III => shapes.push((format!("{p}koopman"), (d, d))),
            Stage::IV => shapes.push((format!("{p}skew_w"), (d, d))),
        }
        if cfg.stage.has_attention() {
            shapes.push((format!("{p}wq"), (d, d)));
            shapes.push((format!("{p}wk"), (d, d)));
            shapes.push((format!("{p}wv"), (d, d)));
            shapes.push((format!("{p}c"), (1, d)));
            shapes.push((format!("{p}zeta"), (1, 1)));
        }
        if cfg.layer_has_mlp() {
            shapes.push((format!("{p}mlp.w1"), (cfg.d_ff, d)));
            shapes.push((format!("{p}mlp.b1"), (1, cfg.d_ff)));
            shapes.push((format!("{p}mlp.w2"), (d, cfg.d_ff)));
            shapes.push((format!("{p}mlp.b2"), (1, d)));
        }
    }
    shapes.push(("final_norm.g".to_string(), (1, d)));
    shapes.push(("final_norm.b".to_string(), (1, d)));
    shapes.push(("out_proj".to_string(), (cfg.vocab, d)));
    shapes
}

/// Total trainable scalar count for a configuration.
pub fn param_count(cfg: &StageConfig) -> usize {
    param_shapes(cfg).iter().map(|(_, (r, c))| r * c).sum()
}

fn init_kind(name: &str) -> InitKind {
    if name.ends_with("ln.g") || name.ends_with("final_norm.g") {
        InitKind::Ones
    } else if name.ends_with(".b")
        || name.ends_with(".b1")
        || name.ends_with(".b2")
        || name.ends_with(".c")
    {
        InitKind::Zeros
    } else if name.ends_with("zeta") {
        InitKind::Zeta
    } else {
        InitKind::ScaledNormal
    }
}

enum InitKind {
    Zeros,
    Ones,
    Zeta,
    ScaledNormal,
}

/// Fresh parameters: matrices scaled-normal with `init_std`, biases and
/// feature offsets zero, norm gains one, ζ at its configured init.
pub fn init_params(cfg: &StageConfig, seed: u64) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.init_std).expect("valid std");
    let mut store = ParamStore::new();
    for (name, (rows, cols)) in param_shapes(cfg) {
        let tensor = match init_kind(&name) {
            InitKind::Zeros => Tensor::zeros(rows, cols),
            InitKind::Ones => Tensor::from_fn(rows, cols, |_, _| 1.0),
            InitKind::Zeta => Tensor::from_fn(rows, cols, |_, _| cfg.zeta_init),
            InitKind::ScaledNormal => {
                Tensor::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
            }
        };
        store.insert(&name, tensor)?;
    }
    Ok(store)
}

/// U = exp(W − Wᵀ), a real orthogonal matrix for any square W.
pub fn hamiltonian_unitary(w: &RealMatrix) -> Result<RealMatrix, LinalgError> {
    if !w.is_square() {
        return Err(LinalgError::Dimension(format!(
            "hamiltonian_unitary needs square W, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    let a = w.sub(&w.transpose());
    mat_exp(&a, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig::eigenvalues_real;
    use rand::Rng;

    #[test]
    fn stage_iii_and_iv_parameter_counts_match() {
        let c3 = StageConfig::desk(Stage::III);
        let c4 = StageConfig::desk(Stage::IV);
        assert_eq!(param_count(&c3), param_count(&c4));
        let m3 = StageConfig::micro(Stage::III);
        let m4 = StageConfig::micro(Stage::IV);
        assert_eq!(param_count(&m3), param_count(&m4));
    }

    #[test]
    fn init_matches_declared_shapes_and_is_seeded() {
        let cfg = StageConfig::micro(Stage::III);
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        let c = init_params(&cfg, 8).unwrap();
        for (name, (rows, cols)) in param_shapes(&cfg) {
            let v = a.value(&name).unwrap();
            assert_eq!((v.rows(), v.cols()), (rows, cols), "{name}");
            assert_eq!(v.data(), b.value(&name).unwrap().data(), "{name} not seeded");
        }
        assert_ne!(
            a.value("layers.0.koopman").unwrap().data(),
            c.value("layers.0.koopman").unwrap().data()
        );
        assert_eq!(a.param_count(), param_count(&cfg));
    }

    #[test]
    fn zeta_and_norm_gains_initialized_to_config() {
        let mut cfg = StageConfig::micro(Stage::III);
        cfg.zeta_init = 0.5;
        let store = init_params(&cfg, 1).unwrap();
        assert_eq!(store.value("layers.1.zeta").unwrap().get(0, 0), 0.5);
        assert_eq!(store.value("layers.0.ln.g").unwrap().get(0, 3), 1.0);
        assert_eq!(store.value("layers.0.c").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = StageConfig::micro(Stage::I);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout = 0.1;
        cfg.heads = 2;
        assert!(cfg.validate().is_err());
        cfg.heads = 1;
        cfg.d = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unitary_of_symmetric_w_is_identity() {
        let w = RealMatrix::from_vec(2, 2, vec![1.0, 3.0, 3.0, -2.0]).unwrap();
        let u = hamiltonian_unitary(&w).unwrap();
        assert!(u.sub(&RealMatrix::identity(2)).max_abs() < 1e-14);
    }

    #[test]
    fn unitary_quarter_turn_rotation() {
        // W − Wᵀ = [[0, π/2], [−π/2, 0]] → U = [[0, 1], [−1, 0]]
        let w = RealMatrix::from_vec(
            2,
            2,
            vec![0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0],
        )
        .unwrap();
        let u = hamiltonian_unitary(&w).unwrap();
        let want = RealMatrix::from_vec(2, 2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert!(u.sub(&want).max_abs() < 1e-14);
    }

    #[test]
    fn unitary_is_orthogonal_with_unit_spectrum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let w = RealMatrix::from_fn(16, 16, |_, _| rng.gen_range(-0.5..0.5));
        let u = hamiltonian_unitary(&w).unwrap();
        let gram = u.transpose().matmul(&u);
        assert!(gram.sub(&RealMatrix::identity(16)).norm_fro() < 1e-10);
        let eigs = eigenvalues_real(&u).unwrap();
        for e in eigs {
            assert!((e.norm() - 1.0).abs() < 1e-8, "eigenvalue modulus {}", e.norm());
        }
    }
}

//! Minimal reverse-mode differentiation over exactly the op set the four
//! stage architectures require. No broadcasting beyond row-bias addition, no
//! fusion, no graph rewriting: every backward rule is small enough to audit
//! against its forward definition, and `gradcheck` does so numerically.
//!
//! A tape is single-threaded; distinct tapes may run concurrently against a
//! read-only [`ParamStore`] snapshot.

pub mod gradcheck;
mod ops;

use crate::linalg::{LinalgError, RealMatrix};
use std::collections::BTreeMap;
use thiserror::Error;

/// Tensors are dense row-major f64 matrices; vectors are 1×d, scalars 1×1.
pub type Tensor = RealMatrix;

pub type NodeId = usize;
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("parameter '{0}' already exists")]
    DuplicateParam(String),
    #[error("loss must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("token id {id} out of range for vocabulary {vocab}")]
    TokenRange { id: usize, vocab: usize },
    #[error("numeric failure in {op}: {source}")]
    Numeric {
        op: &'static str,
        #[source]
        source: LinalgError,
    },
}

pub type AdResult<T> = Result<T, AutodiffError>;

/// Named, shaped, freezable parameter tensors. Shapes are immutable after
/// creation; frozen parameters receive no gradients and no updates.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

#[derive(Debug, Clone)]
pub struct Param {
    value: Tensor,
    frozen: bool,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
    pub fn frozen(&self) -> bool {
        self.frozen
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> AdResult<()> {
        if self.entries.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.into()));
        }
        self.entries.insert(
            name.into(),
            Param {
                value,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> AdResult<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.into()))
    }

    pub fn value(&self, name: &str) -> AdResult<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    /// Replace a parameter's data; the shape is fixed at insertion.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> AdResult<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if (entry.value.rows(), entry.value.cols()) != (value.rows(), value.cols()) {
            return Err(AutodiffError::Shape {
                op: "set_value",
                detail: format!(
                    "parameter '{name}' is {}x{}, got {}x{}",
                    entry.value.rows(),
                    entry.value.cols(),
                    value.rows(),
                    value.cols()
                ),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> AdResult<()> {
        self.entries
            .get_mut(name)
            .map(|p| p.frozen = frozen)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).map(|p| p.frozen).unwrap_or(false)
    }

    /// Deterministic (sorted-name) iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across parameters.
    pub fn param_count(&self) -> usize {
        self.entries
            .values()
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }
}

/// Registered differentiable op kinds; `gradcheck` iterates this list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    MatMulTransB,
    Add,
    AddRowBias,
    ScaleByParam,
    Gelu,
    LayerNorm,
    LinearScale,
    Embedding,
    CausalDftReal,
    PrefixLinearAttention,
    CrossEntropy,
    SkewMatExp,
    Dropout,
    WeightedSum,
}

pub const ALL_OP_KINDS: &[OpKind] = &[
    OpKind::MatMul,
    OpKind::MatMulTransB,
    OpKind::Add,
    OpKind::AddRowBias,
    OpKind::ScaleByParam,
    OpKind::Gelu,
    OpKind::LayerNorm,
    OpKind::LinearScale,
    OpKind::Embedding,
    OpKind::CausalDftReal,
    OpKind::PrefixLinearAttention,
    OpKind::CrossEntropy,
    OpKind::SkewMatExp,
    OpKind::Dropout,
    OpKind::WeightedSum,
];

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::MatMulTransB => "matmul_nt",
            OpKind::Add => "add",
            OpKind::AddRowBias => "add_row_bias",
            OpKind::ScaleByParam => "scale_by_param",
            OpKind::Gelu => "gelu",
            OpKind::LayerNorm => "layernorm",
            OpKind::LinearScale => "linear_scale_norm",
            OpKind::Embedding => "embedding",
            OpKind::CausalDftReal => "causal_dft_real",
            OpKind::PrefixLinearAttention => "prefix_linear_attention",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::SkewMatExp => "skew_mat_exp",
            OpKind::Dropout => "dropout",
            OpKind::WeightedSum => "weighted_sum",
        }
    }
}

enum Op {
    Leaf { param: Option<String> },
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    Add { a: NodeId, b: NodeId },
    AddRowBias { x: NodeId, bias: NodeId },
    ScaleByParam { x: NodeId, s: NodeId },
    Gelu { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    LinearScale { x: NodeId, gain: NodeId, bias: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    CausalDftReal { x: NodeId },
    PrefixLinearAttention { qf: NodeId, kf: NodeId, v: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    SkewMatExp { w: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    WeightedSum { x: NodeId, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Topologically ordered record of forward ops; node ids are creation order,
/// so a reverse sweep visits every record exactly once after its consumers.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Constant input (no gradient tracked).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Leaf bound to a named parameter; gradients flow into it on backward.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> AdResult<NodeId> {
        let value = store.value(name)?.clone();
        Ok(self.push(
            value,
            Op::Leaf {
                param: Some(name.to_string()),
            },
        ))
    }

    /// Reverse sweep from a scalar loss; returns gradients for every
    /// non-frozen parameter leaf reached.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> AdResult<GradMap> {
        let lv = self.value(loss);
        if (lv.rows(), lv.cols()) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(lv.rows(), lv.cols()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::from_vec(1, 1, vec![1.0]).expect("scalar"));
        let mut out = GradMap::new();
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { param: Some(name) } => {
                    if !store.is_frozen(name) {
                        match out.entry(name.clone()) {
                            std::collections::btree_map::Entry::Vacant(e) => {
                                e.insert(g);
                            }
                            std::collections::btree_map::Entry::Occupied(mut e) => {
                                let merged = e.get().add(&g);
                                *e.get_mut() = merged;
                            }
                        }
                    }
                }
                Op::Leaf { param: None } => {}
                op => ops::backward_step(self, op, &g, &mut grads)?,
            }
        }
        Ok(out)
    }
}

pub(crate) fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id] {
        Some(existing) => *existing = existing.add(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn linear_matmul_gradient_is_outer_product() {
        // y = W x, loss = sum(y): dL/dW = 1 ⊗ x
        let mut store = ParamStore::new();
        store.insert("w", t(2, 3, vec![0.5; 6])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let x = tape.constant(t(3, 1, vec![1.0, 2.0, 3.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.weighted_sum(y, &[1.0, 1.0]).unwrap();
        let grads = tape.backward(loss, &store).unwrap();
        let gw = &grads["w"];
        assert_eq!(gw.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_chain_of_adds_propagates_unit_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", t(1, 1, vec![2.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, "x").unwrap();
        let z = tape.constant(t(1, 1, vec![0.0]));
        let a = tape.add(x, z).unwrap();
        let b = tape.add(a, z).unwrap();
        let c = tape.add(b, z).unwrap();
        let grads = tape.backward(c, &store).unwrap();
        assert_eq!(grads["x"].data(), &[1.0]);
    }

    #[test]
    fn frozen_parameters_receive_no_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", t(1, 1, vec![3.0])).unwrap();
        store.insert("u", t(1, 1, vec![4.0])).unwrap();
        store.set_frozen("w", true).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let u = tape.param(&store, "u").unwrap();
        let y = tape.add(w, u).unwrap();
        let loss = tape.weighted_sum(y, &[1.0]).unwrap();
        let grads = tape.backward(loss, &store).unwrap();
        assert!(!grads.contains_key("w"));
        assert!(grads.contains_key("u"));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        store.insert("x", t(2, 1, vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, "x").unwrap();
        assert!(matches!(
            tape.backward(x, &store),
            Err(AutodiffError::NonScalarLoss(2, 1))
        ));
    }

    #[test]
    fn param_store_contracts() {
        let mut store = ParamStore::new();
        store.insert("a", t(2, 2, vec![0.0; 4])).unwrap();
        assert!(store.insert("a", t(1, 1, vec![0.0])).is_err());
        assert!(store.set_value("a", t(1, 2, vec![0.0; 2])).is_err());
        assert!(store.set_value("a", t(2, 2, vec![1.0; 4])).is_ok());
        assert!(store.value("missing").is_err());
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let mut store = ParamStore::new();
        store
            .insert("w", t(3, 3, (0..9).map(|i| i as f64 * 0.13 - 0.5).collect()))
            .unwrap();
        let run = |store: &ParamStore| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let w = tape.param(store, "w").unwrap();
            let x = tape.constant(t(4, 3, (0..12).map(|i| (i as f64).sin()).collect()));
            let h = tape.matmul_nt(x, w).unwrap();
            let y = tape.gelu(h).unwrap();
            let loss = tape.weighted_sum(y, &vec![0.37; 12]).unwrap();
            let grads = tape.backward(loss, store).unwrap();
            (tape.value(loss).data().to_vec(), grads["w"].data().to_vec())
        };
        let (l1, g1) = run(&store);
        let (l2, g2) = run(&store);
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}

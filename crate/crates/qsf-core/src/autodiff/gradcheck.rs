//! Central-finite-difference gradient checking — the engine's own oracle.
//! Each registered op is exercised on seeded random inputs; the backward pass
//! is compared entrywise against (L(θ+h) − L(θ−h)) / 2h.

use super::{AdResult, NodeId, OpKind, ParamStore, Tape, Tensor, ALL_OP_KINDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Max relative discrepancy between the backward pass and central differences
/// for one op kind.
pub fn grad_check(kind: OpKind, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let (mut store, build) = harness(kind, &mut rng);
    max_rel_error(&mut store, build.as_ref(), h)
}

/// Run the checker over every registered op kind.
pub fn grad_check_all(seed: u64, h: f64) -> Vec<(OpKind, f64)> {
    ALL_OP_KINDS
        .iter()
        .map(|&k| (k, grad_check(k, seed, h)))
        .collect()
}

type Builder = Box<dyn Fn(&ParamStore, &mut Tape) -> AdResult<NodeId>>;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random inputs and a graph builder for one op kind. All differentiable
/// inputs are registered as parameters so the FD sweep covers them all.
fn harness(kind: OpKind, rng: &mut ChaCha8Rng) -> (ParamStore, Builder) {
    let mut store = ParamStore::new();
    let build: Builder = match kind {
        OpKind::MatMul => {
            store.insert("a", rand_tensor(rng, 3, 4)).unwrap();
            store.insert("b", rand_tensor(rng, 4, 2)).unwrap();
            let w = rand_weights(rng, 6);
            Box::new(move |s, t| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let y = t.matmul(a, b)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::MatMulTransB => {
            store.insert("a", rand_tensor(rng, 3, 4)).unwrap();
            store.insert("b", rand_tensor(rng, 2, 4)).unwrap();
            let w = rand_weights(rng, 6);
            Box::new(move |s, t| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let y = t.matmul_nt(a, b)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::Add => {
            store.insert("a", rand_tensor(rng, 3, 4)).unwrap();
            store.insert("b", rand_tensor(rng, 3, 4)).unwrap();
            let w = rand_weights(rng, 12);
            Box::new(move |s, t| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let y = t.add(a, b)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::AddRowBias => {
            store.insert("x", rand_tensor(rng, 3, 5)).unwrap();
            store.insert("bias", rand_tensor(rng, 1, 5)).unwrap();
            let w = rand_weights(rng, 15);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let b = t.param(s, "bias")?;
                let y = t.add_row_bias(x, b)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::ScaleByParam => {
            store.insert("x", rand_tensor(rng, 3, 4)).unwrap();
            store.insert("zeta", rand_tensor(rng, 1, 1)).unwrap();
            let w = rand_weights(rng, 12);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let z = t.param(s, "zeta")?;
                let y = t.scale_by_param(x, z)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::Gelu => {
            store.insert("x", rand_tensor(rng, 4, 4)).unwrap();
            let w = rand_weights(rng, 16);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let y = t.gelu(x)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::LayerNorm => {
            store.insert("x", rand_tensor(rng, 3, 6)).unwrap();
            store.insert("gain", rand_tensor(rng, 1, 6)).unwrap();
            store.insert("bias", rand_tensor(rng, 1, 6)).unwrap();
            let w = rand_weights(rng, 18);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let g = t.param(s, "gain")?;
                let b = t.param(s, "bias")?;
                let y = t.layernorm(x, g, b, 1e-5)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::LinearScale => {
            store.insert("x", rand_tensor(rng, 3, 6)).unwrap();
            store.insert("gain", rand_tensor(rng, 1, 6)).unwrap();
            store.insert("bias", rand_tensor(rng, 1, 6)).unwrap();
            let w = rand_weights(rng, 18);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let g = t.param(s, "gain")?;
                let b = t.param(s, "bias")?;
                let y = t.linear_scale_norm(x, g, b)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::Embedding => {
            store.insert("table", rand_tensor(rng, 7, 4)).unwrap();
            let ids = vec![3usize, 1, 6, 0, 3];
            let w = rand_weights(rng, 20);
            Box::new(move |s, t| {
                let table = t.param(s, "table")?;
                let y = t.embedding(table, &ids)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::CausalDftReal => {
            store.insert("x", rand_tensor(rng, 6, 3)).unwrap();
            let w = rand_weights(rng, 18);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let y = t.causal_dft_real(x)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::PrefixLinearAttention => {
            store.insert("qf", rand_tensor(rng, 5, 3)).unwrap();
            store.insert("kf", rand_tensor(rng, 5, 3)).unwrap();
            store.insert("v", rand_tensor(rng, 5, 3)).unwrap();
            let w = rand_weights(rng, 15);
            Box::new(move |s, t| {
                let q = t.param(s, "qf")?;
                let k = t.param(s, "kf")?;
                let v = t.param(s, "v")?;
                let y = t.prefix_linear_attention(q, k, v)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::CrossEntropy => {
            store.insert("logits", rand_tensor(rng, 4, 6)).unwrap();
            let targets = vec![2usize, 0, 5, 3];
            Box::new(move |s, t| {
                let l = t.param(s, "logits")?;
                t.cross_entropy(l, &targets)
            })
        }
        OpKind::SkewMatExp => {
            store.insert("w", rand_tensor(rng, 5, 5)).unwrap();
            let w = rand_weights(rng, 25);
            Box::new(move |s, t| {
                let wid = t.param(s, "w")?;
                let u = t.skew_mat_exp(wid)?;
                t.weighted_sum(u, &w)
            })
        }
        OpKind::Dropout => {
            store.insert("x", rand_tensor(rng, 4, 5)).unwrap();
            let p = 0.25;
            let mask: Vec<f64> = (0..20)
                .map(|_| {
                    if rng.gen_range(0.0..1.0) < p {
                        0.0
                    } else {
                        1.0 / (1.0 - p)
                    }
                })
                .collect();
            let w = rand_weights(rng, 20);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                let y = t.dropout(x, &mask)?;
                t.weighted_sum(y, &w)
            })
        }
        OpKind::WeightedSum => {
            store.insert("x", rand_tensor(rng, 3, 3)).unwrap();
            let w = rand_weights(rng, 9);
            Box::new(move |s, t| {
                let x = t.param(s, "x")?;
                t.weighted_sum(x, &w)
            })
        }
    };
    (store, build)
}

/// Compare analytic gradients against central differences over every entry of
/// every parameter. Relative error uses a unit floor so near-zero entries are
/// compared absolutely.
pub fn max_rel_error(
    store: &mut ParamStore,
    build: &dyn Fn(&ParamStore, &mut Tape) -> AdResult<NodeId>,
    h: f64,
) -> f64 {
    let eval_loss = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let loss = build(s, &mut tape).expect("gradcheck graph build failed");
        tape.value(loss).get(0, 0)
    };
    let mut tape = Tape::new();
    let loss = build(store, &mut tape).expect("gradcheck graph build failed");
    let grads = tape.backward(loss, store).expect("gradcheck backward failed");

    let names: Vec<String> = store.names().cloned().collect();
    let mut max_rel = 0.0f64;
    for name in names {
        if store.is_frozen(&name) {
            continue;
        }
        let base = store.value(&name).unwrap().clone();
        let entries = base.rows() * base.cols();
        for idx in 0..entries {
            let mut plus = base.clone();
            plus.data_mut()[idx] += h;
            store.set_value(&name, plus).unwrap();
            let lp = eval_loss(store);
            let mut minus = base.clone();
            minus.data_mut()[idx] -= h;
            store.set_value(&name, minus).unwrap();
            let lm = eval_loss(store);
            store.set_value(&name, base.clone()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let ad = grads.get(&name).map(|t| t.data()[idx]).unwrap_or(0.0);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_gradient_is_tight() {
        assert!(grad_check(OpKind::MatMul, 1, 1e-5) < 1e-6);
        assert!(grad_check(OpKind::MatMulTransB, 1, 1e-5) < 1e-6);
    }

    #[test]
    fn gelu_gradient_within_bound() {
        assert!(grad_check(OpKind::Gelu, 2, 1e-5) < 1e-5);
    }

    #[test]
    fn prefix_attention_gradient_within_bound() {
        assert!(grad_check(OpKind::PrefixLinearAttention, 3, 1e-5) < 1e-4);
    }

    #[test]
    fn every_registered_op_passes_across_seeds() {
        for seed in 0..20 {
            for (kind, err) in grad_check_all(seed, 1e-5) {
                assert!(
                    err < 1e-4,
                    "op {} failed gradcheck at seed {seed}: {err:.3e}",
                    kind.name()
                );
            }
        }
    }
}

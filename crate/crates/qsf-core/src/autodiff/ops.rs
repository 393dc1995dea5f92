//! Forward and backward rules for the registered op set.
//!
//! Conventions: activations are n×d with rows as sequence positions; weight
//! matrices multiply from the right as `x @ Wᵀ` (matmul_nt), matching the
//! column-vector equations applied position-wise.

use super::{accumulate, AdResult, AutodiffError, NodeId, Op, Tape, Tensor};
use crate::linalg::dft::prefix_table;
use crate::linalg::expm::{expm_frechet, mat_exp};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl Tape {
    /// `a @ b`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{}x{} @ {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let value = av.matmul(bv);
        Ok(self.push(value, Op::MatMul { a, b, trans_b: false }))
    }

    /// `a @ bᵀ` — the position-wise application of a weight matrix to rows.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err(
                "matmul_nt",
                format!("{}x{} @ ({}x{})ᵀ", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let value = av.matmul(&bv.transpose());
        Ok(self.push(value, Op::MatMul { a, b, trans_b: true }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if (av.rows(), av.cols()) != (bv.rows(), bv.cols()) {
            return Err(shape_err(
                "add",
                format!("{}x{} + {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let value = av.add(bv);
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Row-broadcast bias: `x + 1·bias` with bias 1×d.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> AdResult<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_row_bias",
                format!("x {}x{}, bias {}x{}", xv.rows(), xv.cols(), bv.rows(), bv.cols()),
            ));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let v = value.get(r, c) + bv.get(0, c);
                value.set(r, c, v);
            }
        }
        Ok(self.push(value, Op::AddRowBias { x, bias }))
    }

    /// Multiply a tensor by a learned 1×1 scalar.
    pub fn scale_by_param(&mut self, x: NodeId, s: NodeId) -> AdResult<NodeId> {
        let sv = self.value(s);
        if (sv.rows(), sv.cols()) != (1, 1) {
            return Err(shape_err(
                "scale_by_param",
                format!("scale must be 1x1, got {}x{}", sv.rows(), sv.cols()),
            ));
        }
        let scale = sv.get(0, 0);
        let value = self.value(x).scale(scale);
        Ok(self.push(value, Op::ScaleByParam { x, s }))
    }

    /// GELU via the exact error function: x/2 · (1 + erf(x/√2)).
    pub fn gelu(&mut self, x: NodeId) -> AdResult<NodeId> {
        let xv = self.value(x);
        let value = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| {
            let v = xv.get(r, c);
            0.5 * v * (1.0 + libm::erf(v * INV_SQRT_2))
        });
        Ok(self.push(value, Op::Gelu { x }))
    }

    /// Per-row standardization with learned affine rescale.
    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> AdResult<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d {
            return Err(shape_err(
                "layernorm",
                format!("x {}x{d}, gain {}x{}, bias {}x{}", xv.rows(), gv.rows(), gv.cols(), bv.rows(), bv.cols()),
            ));
        }
        let mut value = Tensor::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                let xhat = (row[c] - mean) * inv_std;
                value.set(r, c, gv.get(0, c) * xhat + bv.get(0, c));
            }
        }
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Elementwise learned scaling plus bias — the fully linear norm mode.
    pub fn linear_scale_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> AdResult<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d {
            return Err(shape_err(
                "linear_scale_norm",
                format!("x {}x{d}, gain {}x{}, bias {}x{}", xv.rows(), gv.rows(), gv.cols(), bv.rows(), bv.cols()),
            ));
        }
        let value = Tensor::from_fn(xv.rows(), d, |r, c| {
            xv.get(r, c) * gv.get(0, c) + bv.get(0, c)
        });
        Ok(self.push(value, Op::LinearScale { x, gain, bias }))
    }

    /// Row gather from an embedding table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> AdResult<NodeId> {
        let tv = self.value(table);
        let vocab = tv.rows();
        for &id in ids {
            if id >= vocab {
                return Err(AutodiffError::TokenRange { id, vocab });
            }
        }
        let d = tv.cols();
        let mut value = Tensor::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            for c in 0..d {
                value.set(r, c, tv.get(id, c));
            }
        }
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Causal token mixing: position i holds the real part of the last bin of
    /// the DFT over positions 0..=i, per channel.
    pub fn causal_dft_real(&mut self, x: NodeId) -> AdResult<NodeId> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let table = prefix_table(n);
        let mut value = Tensor::zeros(n, d);
        for i in 0..n {
            let coeffs = &table[i];
            for (s, &w) in coeffs.iter().enumerate() {
                let row = xv.row(s);
                for c in 0..d {
                    let v = value.get(i, c) + w * row[c];
                    value.set(i, c, v);
                }
            }
        }
        Ok(self.push(value, Op::CausalDftReal { x }))
    }

    /// Causal linear attention over pre-featurized inputs, computed by the
    /// O(N·d²) prefix-sum recurrence S_t = S_{t−1} + kf_t vᵀ_t, z_t = Sᵀ_t qf_t.
    pub fn prefix_linear_attention(&mut self, qf: NodeId, kf: NodeId, v: NodeId) -> AdResult<NodeId> {
        let (qv, kv, vv) = (self.value(qf), self.value(kf), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        if (kv.rows(), kv.cols()) != (n, d) || vv.rows() != n {
            return Err(shape_err(
                "prefix_linear_attention",
                format!(
                    "qf {}x{}, kf {}x{}, v {}x{}",
                    qv.rows(), qv.cols(), kv.rows(), kv.cols(), vv.rows(), vv.cols()
                ),
            ));
        }
        let dv = vv.cols();
        let mut state = vec![0.0f64; d * dv]; // S[a][j]
        let mut value = Tensor::zeros(n, dv);
        for t in 0..n {
            let krow = kv.row(t);
            let vrow = vv.row(t);
            for a in 0..d {
                let ka = krow[a];
                if ka != 0.0 {
                    let srow = &mut state[a * dv..(a + 1) * dv];
                    for (s, &vj) in srow.iter_mut().zip(vrow) {
                        *s += ka * vj;
                    }
                }
            }
            let qrow = qv.row(t);
            let out = &mut value.data_mut()[t * dv..(t + 1) * dv];
            for a in 0..d {
                let qa = qrow[a];
                if qa != 0.0 {
                    let srow = &state[a * dv..(a + 1) * dv];
                    for (o, &s) in out.iter_mut().zip(srow) {
                        *o += qa * s;
                    }
                }
            }
        }
        Ok(self.push(value, Op::PrefixLinearAttention { qf, kf, v }))
    }

    /// Mean negative log-likelihood of the targets under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> AdResult<NodeId> {
        let lv = self.value(logits);
        let (n, vocab) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(shape_err(
                "cross_entropy",
                format!("{n} logit rows vs {} targets", targets.len()),
            ));
        }
        for &t in targets {
            if t >= vocab {
                return Err(AutodiffError::TokenRange { id: t, vocab });
            }
        }
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        // non-finite losses must flow so the training loop can detect divergence
        let value = Tensor::from_fn(1, 1, |_, _| total / n as f64);
        Ok(self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec() }))
    }

    /// U = exp(W − Wᵀ): a real orthogonal matrix for any square W.
    pub fn skew_mat_exp(&mut self, w: NodeId) -> AdResult<NodeId> {
        let wv = self.value(w);
        if !wv.is_square() {
            return Err(shape_err(
                "skew_mat_exp",
                format!("W must be square, got {}x{}", wv.rows(), wv.cols()),
            ));
        }
        let a = wv.sub(&wv.transpose());
        let u = mat_exp(&a, 1.0).map_err(|source| AutodiffError::Numeric {
            op: "skew_mat_exp",
            source,
        })?;
        Ok(self.push(u, Op::SkewMatExp { w }))
    }

    /// Inverted dropout with a caller-supplied mask of factors 0 or 1/(1−p).
    pub fn dropout(&mut self, x: NodeId, mask: &[f64]) -> AdResult<NodeId> {
        let xv = self.value(x);
        if mask.len() != xv.rows() * xv.cols() {
            return Err(shape_err(
                "dropout",
                format!("mask length {} vs tensor {}x{}", mask.len(), xv.rows(), xv.cols()),
            ));
        }
        let value = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| {
            xv.get(r, c) * mask[r * xv.cols() + c]
        });
        Ok(self.push(value, Op::Dropout { x, mask: mask.to_vec() }))
    }

    /// Fixed-weight contraction to a scalar; the reduction used by probes and
    /// gradient checks.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &[f64]) -> AdResult<NodeId> {
        let xv = self.value(x);
        if weights.len() != xv.rows() * xv.cols() {
            return Err(shape_err(
                "weighted_sum",
                format!("weights length {} vs tensor {}x{}", weights.len(), xv.rows(), xv.cols()),
            ));
        }
        let s: f64 = xv.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let value = Tensor::from_fn(1, 1, |_, _| s);
        Ok(self.push(value, Op::WeightedSum { x, weights: weights.to_vec() }))
    }
}

/// Apply one op's backward rule, accumulating into the input slots.
pub(super) fn backward_step(
    tape: &Tape,
    op: &Op,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
) -> AdResult<()> {
    match op {
        Op::Leaf { .. } => {}
        Op::MatMul { a, b, trans_b } => {
            let (av, bv) = (tape.value(*a), tape.value(*b));
            if *trans_b {
                // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                accumulate(grads, *a, g.matmul(bv));
                accumulate(grads, *b, g.transpose().matmul(av));
            } else {
                // C = A B: dA = dC Bᵀ, dB = Aᵀ dC
                accumulate(grads, *a, g.matmul(&bv.transpose()));
                accumulate(grads, *b, av.transpose().matmul(g));
            }
        }
        Op::Add { a, b } => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::AddRowBias { x, bias } => {
            accumulate(grads, *x, g.clone());
            let mut db = Tensor::zeros(1, g.cols());
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let v = db.get(0, c) + g.get(r, c);
                    db.set(0, c, v);
                }
            }
            accumulate(grads, *bias, db);
        }
        Op::ScaleByParam { x, s } => {
            let scale = tape.value(*s).get(0, 0);
            let xv = tape.value(*x);
            accumulate(grads, *x, g.scale(scale));
            let ds: f64 = g.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
            accumulate(grads, *s, Tensor::from_fn(1, 1, |_, _| ds));
        }
        Op::Gelu { x } => {
            let xv = tape.value(*x);
            let dx = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| {
                let v = xv.get(r, c);
                let cdf = 0.5 * (1.0 + libm::erf(v * INV_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
                g.get(r, c) * (cdf + v * pdf)
            });
            accumulate(grads, *x, dx);
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let (xv, gv) = (tape.value(*x), tape.value(*gain));
            let d = xv.cols();
            let mut dx = Tensor::zeros(xv.rows(), d);
            let mut dgain = Tensor::zeros(1, d);
            let mut dbias = Tensor::zeros(1, d);
            for r in 0..xv.rows() {
                let row = xv.row(r);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv_std = 1.0 / (var + eps).sqrt();
                let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                let grow = g.row(r);
                let dxhat: Vec<f64> = (0..d).map(|c| grow[c] * gv.get(0, c)).collect();
                let m1 = dxhat.iter().sum::<f64>() / d as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for c in 0..d {
                    dx.set(r, c, inv_std * (dxhat[c] - m1 - xhat[c] * m2));
                    let vg = dgain.get(0, c) + grow[c] * xhat[c];
                    dgain.set(0, c, vg);
                    let vb = dbias.get(0, c) + grow[c];
                    dbias.set(0, c, vb);
                }
            }
            accumulate(grads, *x, dx);
            accumulate(grads, *gain, dgain);
            accumulate(grads, *bias, dbias);
        }
        Op::LinearScale { x, gain, bias } => {
            let (xv, gv) = (tape.value(*x), tape.value(*gain));
            let d = xv.cols();
            let dx = Tensor::from_fn(xv.rows(), d, |r, c| g.get(r, c) * gv.get(0, c));
            let mut dgain = Tensor::zeros(1, d);
            let mut dbias = Tensor::zeros(1, d);
            for r in 0..xv.rows() {
                for c in 0..d {
                    let vg = dgain.get(0, c) + g.get(r, c) * xv.get(r, c);
                    dgain.set(0, c, vg);
                    let vb = dbias.get(0, c) + g.get(r, c);
                    dbias.set(0, c, vb);
                }
            }
            accumulate(grads, *x, dx);
            accumulate(grads, *gain, dgain);
            accumulate(grads, *bias, dbias);
        }
        Op::Embedding { table, ids } => {
            let tv = tape.value(*table);
            let mut dt = Tensor::zeros(tv.rows(), tv.cols());
            for (r, &id) in ids.iter().enumerate() {
                for c in 0..tv.cols() {
                    let v = dt.get(id, c) + g.get(r, c);
                    dt.set(id, c, v);
                }
            }
            accumulate(grads, *table, dt);
        }
        Op::CausalDftReal { x } => {
            // the map is linear; the gradient is its exact adjoint
            let xv = tape.value(*x);
            let (n, d) = (xv.rows(), xv.cols());
            let table = prefix_table(n);
            let mut dx = Tensor::zeros(n, d);
            for i in 0..n {
                let coeffs = &table[i];
                let grow = g.row(i);
                for (s, &w) in coeffs.iter().enumerate() {
                    for c in 0..d {
                        let v = dx.get(s, c) + w * grow[c];
                        dx.set(s, c, v);
                    }
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::PrefixLinearAttention { qf, kf, v } => {
            let (qv, kv, vv) = (tape.value(*qf), tape.value(*kf), tape.value(*v));
            let (n, d) = (qv.rows(), qv.cols());
            let dv = vv.cols();
            // dqf_t = S_t dz_t with the forward prefix state
            let mut state = vec![0.0f64; d * dv];
            let mut dq = Tensor::zeros(n, d);
            for t in 0..n {
                let krow = kv.row(t);
                let vrow = vv.row(t);
                for a in 0..d {
                    let ka = krow[a];
                    if ka != 0.0 {
                        let srow = &mut state[a * dv..(a + 1) * dv];
                        for (s, &vj) in srow.iter_mut().zip(vrow) {
                            *s += ka * vj;
                        }
                    }
                }
                let grow = g.row(t);
                for a in 0..d {
                    let srow = &state[a * dv..(a + 1) * dv];
                    let acc: f64 = srow.iter().zip(grow).map(|(s, gg)| s * gg).sum();
                    dq.set(t, a, acc);
                }
            }
            // dkf_s = R_s v_s, dv_s = Rᵀ_s kf_s with the suffix state R_s = Σ_{t≥s} qf_t dzᵀ_t
            let mut suffix = vec![0.0f64; d * dv];
            let mut dk = Tensor::zeros(n, d);
            let mut dval = Tensor::zeros(n, dv);
            for t in (0..n).rev() {
                let qrow = qv.row(t);
                let grow = g.row(t);
                for a in 0..d {
                    let qa = qrow[a];
                    if qa != 0.0 {
                        let srow = &mut suffix[a * dv..(a + 1) * dv];
                        for (s, &gg) in srow.iter_mut().zip(grow) {
                            *s += qa * gg;
                        }
                    }
                }
                let vrow = vv.row(t);
                let krow = kv.row(t);
                for a in 0..d {
                    let srow = &suffix[a * dv..(a + 1) * dv];
                    let acc: f64 = srow.iter().zip(vrow).map(|(s, vj)| s * vj).sum();
                    dk.set(t, a, acc);
                }
                for j in 0..dv {
                    let mut acc = 0.0;
                    for a in 0..d {
                        acc += suffix[a * dv + j] * krow[a];
                    }
                    dval.set(t, j, acc);
                }
            }
            accumulate(grads, *qf, dq);
            accumulate(grads, *kf, dk);
            accumulate(grads, *v, dval);
        }
        Op::CrossEntropy { logits, targets } => {
            let lv = tape.value(*logits);
            let (n, vocab) = (lv.rows(), lv.cols());
            let scale = g.get(0, 0) / n as f64;
            let mut dl = Tensor::zeros(n, vocab);
            for (r, &y) in targets.iter().enumerate() {
                let row = lv.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for c in 0..vocab {
                    let p = (row[c] - m).exp() / denom;
                    let delta = if c == y { 1.0 } else { 0.0 };
                    dl.set(r, c, scale * (p - delta));
                }
            }
            accumulate(grads, *logits, dl);
        }
        Op::SkewMatExp { w } => {
            // U = exp(A), A = W − Wᵀ. With upstream Ū: dA = L(Aᵀ, Ū) (adjoint
            // of the Fréchet derivative), then dW = dA − dAᵀ.
            let wv = tape.value(*w);
            let a = wv.sub(&wv.transpose());
            let da = expm_frechet(&a.transpose(), g).map_err(|source| AutodiffError::Numeric {
                op: "skew_mat_exp backward",
                source,
            })?;
            accumulate(grads, *w, da.sub(&da.transpose()));
        }
        Op::Dropout { x, mask } => {
            let xv = tape.value(*x);
            let dx = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| {
                g.get(r, c) * mask[r * xv.cols() + c]
            });
            accumulate(grads, *x, dx);
        }
        Op::WeightedSum { x, weights } => {
            let xv = tape.value(*x);
            let scale = g.get(0, 0);
            let dx = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| {
                scale * weights[r * xv.cols() + c]
            });
            accumulate(grads, *x, dx);
        }
    }
    Ok(())
}

//! Reverse-mode automatic differentiation on a build-once tape.
//!
//! Operations are recorded in forward order into an arena of nodes; the
//! arena index order is the topological order. `backward` replays the ops in
//! reverse, accumulating vector-Jacobian products into per-node gradient
//! buffers. A tape is consumed by its single backward pass; training loops
//! construct a fresh tape per step.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a·b
    Matmul(Var, Var),
    /// a·bᵀ
    MatmulTB(Var, Var),
    /// Block-diagonal product: `batch` stacked blocks of a (bm×k) times b (bk×n).
    BatchMatmul { a: Var, b: Var, batch: usize },
    /// Block-diagonal a·bᵀ: blocks of a (bm×k) times b (bn×k) transposed.
    BatchMatmulTB { a: Var, b: Var, batch: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    /// rows of a plus vector bias
    AddRowBroadcast(Var, Var),
    /// every element of a times a 1-element var
    MulScalarVar(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, gamma: Var, beta: Var, eps: f64 },
    SumAll(Var),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize, len: usize },
    Transpose(Var),
    /// mean cross-entropy of row-softmax(logits) against integer targets
    CrossEntropyMean { logits: Var, targets: Vec<usize> },
    /// out[i] = table[ids[i]] (row gather; scatter-add backward)
    EmbedRows { table: Var, ids: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    /// Leaves with `grad = false` never receive a gradient buffer.
    grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

/// Gradients keyed by the `Var` handles of a consumed tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if no path reached it.
    pub fn get(&self, v: Var, tape: &Tape) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.nodes[v.0].value.shape()),
        }
    }

    pub fn get_opt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), spent: false }
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter or an input whose gradient is wanted).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn wants_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    // ── recorded operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::Matmul(a, b), g))
    }

    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul_tb(self.value(a), self.value(b))?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::MatmulTB(a, b), g))
    }

    /// `batch` blocks: a is (batch·m)×k, b is (batch·k)×n, result (batch·m)×n.
    pub fn batch_matmul(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (am, k) = (ta.rows(), ta.cols());
        let (bk, n) = (tb.rows(), tb.cols());
        if am % batch != 0 || bk % batch != 0 || bk / batch != k {
            return Err(Error::DimMismatch {
                op: "batch_matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let m = am / batch;
        let mut out = vec![0.0; am * n];
        for s in 0..batch {
            tensor::mm_accum(
                &ta.data()[s * m * k..(s + 1) * m * k],
                &tb.data()[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
                &mut out[s * m * n..(s + 1) * m * n],
            );
        }
        let v = Tensor::new(vec![am, n], out)?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::BatchMatmul { a, b, batch }, g))
    }

    /// `batch` blocks: a is (batch·m)×k, b is (batch·n)×k, result (batch·m)×n.
    pub fn batch_matmul_tb(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (am, k) = (ta.rows(), ta.cols());
        let (bn, k2) = (tb.rows(), tb.cols());
        if am % batch != 0 || bn % batch != 0 || k != k2 {
            return Err(Error::DimMismatch {
                op: "batch_matmul_tb",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, n) = (am / batch, bn / batch);
        let mut out = vec![0.0; am * n];
        for s in 0..batch {
            tensor::mm_tb_accum(
                &ta.data()[s * m * k..(s + 1) * m * k],
                &tb.data()[s * n * k..(s + 1) * n * k],
                m,
                k,
                n,
                &mut out[s * m * n..(s + 1) * m * n],
            );
        }
        let v = Tensor::new(vec![am, n], out)?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::BatchMatmulTB { a, b, batch }, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        let g = self.wants_grad(a) || self.wants_grad(b);
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = tensor::scale(self.value(a), c);
        let g = self.wants_grad(a);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let g = self.wants_grad(a);
        self.push(v, Op::AddScalar(a, c), g)
    }

    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = tensor::add_row_broadcast(self.value(a), self.value(bias))?;
        let g = self.wants_grad(a) || self.wants_grad(bias);
        Ok(self.push(v, Op::AddRowBroadcast(a, bias), g))
    }

    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Contract("mul_scalar_var needs a 1-element scalar".into()));
        }
        let c = self.value(s).item();
        let v = tensor::scale(self.value(a), c);
        let g = self.wants_grad(a) || self.wants_grad(s);
        Ok(self.push(v, Op::MulScalarVar(a, s), g))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tensor::sigmoid);
        let g = self.wants_grad(a);
        self.push(v, Op::Sigmoid(a), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let g = self.wants_grad(a);
        self.push(v, Op::Relu(a), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let g = self.wants_grad(a);
        self.push(v, Op::Exp(a), g)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let g = self.wants_grad(a);
        self.push(v, Op::Ln(a), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = tensor::softmax_rows(self.value(a));
        let g = self.wants_grad(a);
        self.push(v, Op::SoftmaxRows(a), g)
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = tensor::layer_norm_rows(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let g = self.wants_grad(x) || self.wants_grad(gamma) || self.wants_grad(beta);
        Ok(self.push(v, Op::LayerNormRows { x, gamma, beta, eps }, g))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let g = self.wants_grad(a);
        self.push(v, Op::SumAll(a), g)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat_cols(&tensors)?;
        let g = parts.iter().any(|&p| self.wants_grad(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if start + len > r {
            return Err(Error::InvalidDim {
                op: "slice_rows",
                shape: t.shape().to_vec(),
                reason: format!("rows {start}..{} out of range", start + len),
            });
        }
        let v = Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        let g = self.wants_grad(x);
        Ok(self.push(v, Op::SliceRows { x, start, len }, g))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let g = self.wants_grad(a);
        self.push(v, Op::Transpose(a), g)
    }

    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = (t.rows(), t.cols());
        if targets.len() != r || targets.iter().any(|&y| y >= c) {
            return Err(Error::Contract(format!(
                "cross_entropy_mean: {} targets for {} logit rows of width {}",
                targets.len(),
                r,
                c
            )));
        }
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = t.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let v = Tensor::scalar(total / r as f64);
        let g = self.wants_grad(logits);
        Ok(self.push(
            v,
            Op::CrossEntropyMean { logits, targets: targets.to_vec() },
            g,
        ))
    }

    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v_rows, d) = (t.rows(), t.cols());
        if ids.iter().any(|&i| i >= v_rows) {
            return Err(Error::Contract("embed_rows: id out of vocabulary".into()));
        }
        let mut out = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(t.row(id));
        }
        let v = Tensor::new(vec![ids.len(), d], out)?;
        let g = self.wants_grad(table);
        Ok(self.push(v, Op::EmbedRows { table, ids: ids.to_vec() }, g))
    }

    // ── composite helpers ────────────────────────────────────────────

    /// ½‖a − b‖² summed over all elements.
    pub fn half_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum_all(sq);
        Ok(self.scale(s, 0.5))
    }

    /// Mean over rows of the squared row error ‖a_i − b_i‖².
    pub fn mse_row_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let rows = self.value(a).rows() as f64;
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum_all(sq);
        Ok(self.scale(s, 1.0 / rows))
    }

    /// log Σ exp over all elements, with a detached max for stability.
    pub fn logsumexp_all(&mut self, a: Var) -> Var {
        let m = self
            .value(a)
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let shifted = self.add_scalar(a, -m);
        let e = self.exp(shifted);
        let s = self.sum_all(e);
        let l = self.ln(s);
        self.add_scalar(l, m)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar root. Consumes the tape's single backward
    /// budget; a second call is a contract error.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::Contract("tape already consumed by backward".into()));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.spent = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else { continue };
            self.backward_op(idx, &dout, &mut grads);
            grads[idx] = Some(dout);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                let gd = g.data_mut();
                for (a, b) in gd.iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            None => grads[v.0] = Some(delta),
        }
    }

    fn backward_op(&self, idx: usize, dout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}

            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].grad {
                    // dA = dout·Bᵀ
                    let mut da = vec![0.0; m * k];
                    tensor::mm_tb_accum(dout.data(), tb.data(), m, n, k, &mut da);
                    self.accum(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                }
                if self.nodes[b.0].grad {
                    // dB = Aᵀ·dout
                    let mut db = vec![0.0; k * n];
                    tensor::mm_ta_accum(ta.data(), dout.data(), k, m, n, &mut db);
                    self.accum(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }

            Op::MatmulTB(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.nodes[a.0].grad {
                    // dA = dout·B
                    let mut da = vec![0.0; m * k];
                    tensor::mm_accum(dout.data(), tb.data(), m, n, k, &mut da);
                    self.accum(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                }
                if self.nodes[b.0].grad {
                    // dB = doutᵀ·A
                    let mut db = vec![0.0; n * k];
                    tensor::mm_ta_accum(dout.data(), ta.data(), n, m, k, &mut db);
                    self.accum(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }

            Op::BatchMatmul { a, b, batch } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows() / batch, ta.cols());
                let n = tb.cols();
                if self.nodes[a.0].grad {
                    let mut da = vec![0.0; ta.len()];
                    for s in 0..*batch {
                        tensor::mm_tb_accum(
                            &dout.data()[s * m * n..(s + 1) * m * n],
                            &tb.data()[s * k * n..(s + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut da[s * m * k..(s + 1) * m * k],
                        );
                    }
                    self.accum(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                }
                if self.nodes[b.0].grad {
                    let mut db = vec![0.0; tb.len()];
                    for s in 0..*batch {
                        tensor::mm_ta_accum(
                            &ta.data()[s * m * k..(s + 1) * m * k],
                            &dout.data()[s * m * n..(s + 1) * m * n],
                            k,
                            m,
                            n,
                            &mut db[s * k * n..(s + 1) * k * n],
                        );
                    }
                    self.accum(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }

            Op::BatchMatmulTB { a, b, batch } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows() / batch, ta.cols());
                let n = tb.rows() / batch;
                if self.nodes[a.0].grad {
                    let mut da = vec![0.0; ta.len()];
                    for s in 0..*batch {
                        tensor::mm_accum(
                            &dout.data()[s * m * n..(s + 1) * m * n],
                            &tb.data()[s * n * k..(s + 1) * n * k],
                            m,
                            n,
                            k,
                            &mut da[s * m * k..(s + 1) * m * k],
                        );
                    }
                    self.accum(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                }
                if self.nodes[b.0].grad {
                    let mut db = vec![0.0; tb.len()];
                    for s in 0..*batch {
                        tensor::mm_ta_accum(
                            &dout.data()[s * m * n..(s + 1) * m * n],
                            &ta.data()[s * m * k..(s + 1) * m * k],
                            n,
                            m,
                            k,
                            &mut db[s * n * k..(s + 1) * n * k],
                        );
                    }
                    self.accum(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }

            Op::Add(a, b) => {
                self.accum(grads, *a, dout.clone());
                self.accum(grads, *b, dout.clone());
            }

            Op::Sub(a, b) => {
                self.accum(grads, *a, dout.clone());
                self.accum(grads, *b, tensor::scale(dout, -1.0));
            }

            Op::Mul(a, b) => {
                if self.nodes[a.0].grad {
                    self.accum(grads, *a, tensor::mul(dout, self.value(*b)).unwrap());
                }
                if self.nodes[b.0].grad {
                    self.accum(grads, *b, tensor::mul(dout, self.value(*a)).unwrap());
                }
            }

            Op::Scale(a, c) => self.accum(grads, *a, tensor::scale(dout, *c)),

            Op::AddScalar(a, _) => self.accum(grads, *a, dout.clone()),

            Op::AddRowBroadcast(a, bias) => {
                self.accum(grads, *a, dout.clone());
                if self.nodes[bias.0].grad {
                    let d = self.value(*bias).len();
                    let mut db = vec![0.0; d];
                    for r in 0..dout.rows() {
                        for (x, &g) in db.iter_mut().zip(dout.row(r)) {
                            *x += g;
                        }
                    }
                    self.accum(
                        grads,
                        *bias,
                        Tensor::new(self.value(*bias).shape().to_vec(), db).unwrap(),
                    );
                }
            }

            Op::MulScalarVar(a, s) => {
                let c = self.value(*s).item();
                if self.nodes[a.0].grad {
                    self.accum(grads, *a, tensor::scale(dout, c));
                }
                if self.nodes[s.0].grad {
                    let ds: f64 = dout
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, v)| g * v)
                        .sum();
                    self.accum(grads, *s, Tensor::scalar(ds));
                }
            }

            Op::Sigmoid(a) => {
                let out = &self.nodes[idx].value;
                let d = Tensor::new(
                    out.shape().to_vec(),
                    dout.data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, &o)| g * o * (1.0 - o))
                        .collect(),
                )
                .unwrap();
                self.accum(grads, *a, d);
            }

            Op::Relu(a) => {
                let x = self.value(*a);
                let d = Tensor::new(
                    x.shape().to_vec(),
                    dout.data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                self.accum(grads, *a, d);
            }

            Op::Exp(a) => {
                let out = &self.nodes[idx].value;
                self.accum(grads, *a, tensor::mul(dout, out).unwrap());
            }

            Op::Ln(a) => {
                let x = self.value(*a);
                let d = Tensor::new(
                    x.shape().to_vec(),
                    dout.data().iter().zip(x.data()).map(|(g, &v)| g / v).collect(),
                )
                .unwrap();
                self.accum(grads, *a, d);
            }

            Op::SoftmaxRows(a) => {
                let out = &self.nodes[idx].value;
                let (r, c) = (out.rows(), out.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let orow = out.row(i);
                    let grow = dout.row(i);
                    let dot: f64 = orow.iter().zip(grow).map(|(o, g)| o * g).sum();
                    for j in 0..c {
                        d[i * c + j] = orow[j] * (grow[j] - dot);
                    }
                }
                self.accum(grads, *a, Tensor::new(out.shape().to_vec(), d).unwrap());
            }

            Op::LayerNormRows { x, gamma, beta, eps } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let (r, c) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; r * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for i in 0..r {
                    let row = tx.row(i);
                    let grow = dout.row(i);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv_sigma = 1.0 / (var + eps).sqrt();
                    // u_hat and the two projection means
                    let mut gsum = 0.0;
                    let mut gu_sum = 0.0;
                    for j in 0..c {
                        let uh = (row[j] - mean) * inv_sigma;
                        let gg = grow[j] * tg.data()[j];
                        gsum += gg;
                        gu_sum += gg * uh;
                        dgamma[j] += grow[j] * uh;
                        dbeta[j] += grow[j];
                    }
                    let gmean = gsum / c as f64;
                    let gu_mean = gu_sum / c as f64;
                    for j in 0..c {
                        let uh = (row[j] - mean) * inv_sigma;
                        let gg = grow[j] * tg.data()[j];
                        dx[i * c + j] = inv_sigma * (gg - gmean - uh * gu_mean);
                    }
                }
                self.accum(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
                if self.nodes[gamma.0].grad {
                    self.accum(
                        grads,
                        *gamma,
                        Tensor::new(tg.shape().to_vec(), dgamma).unwrap(),
                    );
                }
                if self.nodes[beta.0].grad {
                    self.accum(
                        grads,
                        *beta,
                        Tensor::new(self.value(*beta).shape().to_vec(), dbeta).unwrap(),
                    );
                }
            }

            Op::SumAll(a) => {
                let g = dout.item();
                self.accum(grads, *a, Tensor::full(self.value(*a).shape(), g));
            }

            Op::ConcatCols(parts) => {
                let total = self.nodes[idx].value.cols();
                let r = self.nodes[idx].value.rows();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.nodes[p.0].grad {
                        let mut d = vec![0.0; r * c];
                        for i in 0..r {
                            d[i * c..(i + 1) * c]
                                .copy_from_slice(&dout.data()[i * total + off..i * total + off + c]);
                        }
                        self.accum(grads, p, Tensor::new(vec![r, c], d).unwrap());
                    }
                    off += c;
                }
            }

            Op::SliceRows { x, start, len } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut d = vec![0.0; tx.len()];
                d[start * c..(start + len) * c].copy_from_slice(dout.data());
                self.accum(grads, *x, Tensor::new(tx.shape().to_vec(), d).unwrap());
            }

            Op::Transpose(a) => self.accum(grads, *a, dout.transpose()),

            Op::CrossEntropyMean { logits, targets } => {
                let t = self.value(*logits);
                let (r, c) = (t.rows(), t.cols());
                let scalar = dout.item() / r as f64;
                let mut d = vec![0.0; r * c];
                for (i, &y) in targets.iter().enumerate() {
                    let row = t.row(i);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..c {
                        let e = (row[j] - m).exp();
                        d[i * c + j] = e;
                        sum += e;
                    }
                    for j in 0..c {
                        d[i * c + j] = d[i * c + j] / sum * scalar;
                    }
                    d[i * c + y] -= scalar;
                }
                self.accum(grads, *logits, Tensor::new(t.shape().to_vec(), d).unwrap());
            }

            Op::EmbedRows { table, ids } => {
                let t = self.value(*table);
                let d_model = t.cols();
                let mut d = vec![0.0; t.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for (x, &g) in d[id * d_model..(id + 1) * d_model]
                        .iter_mut()
                        .zip(dout.row(i))
                    {
                        *x += g;
                    }
                }
                self.accum(grads, *table, Tensor::new(t.shape().to_vec(), d).unwrap());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let s = tape.sum_all(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x, &tape).data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn grad_of_half_norm_sq_is_x() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![3], vec![1., -2., 0.5]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[3]));
        let loss = tape.half_squared_error(x, zero).unwrap();
        let g = tape.backward(loss).unwrap();
        let gx = g.get(x, &tape);
        assert_eq!(gx.data(), &[1., -2., 0.5]);
    }

    #[test]
    fn second_backward_errors() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn non_scalar_root_errors() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradient_accumulates_over_shared_use() {
        // out = x*x + x  => d/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let out = tape.add(sq, x).unwrap();
        let g = tape.backward(out).unwrap();
        assert!((g.get(x, &tape).item() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get_opt(c).is_none());
        assert!((g.get(x, &tape).item() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_grads_match_hand_computation() {
        // f = sum(A·B); dA = 1·Bᵀ broadcast, dB = Aᵀ·1
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
        let b = tape.param(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
        let y = tape.matmul(a, b).unwrap();
        let s = tape.sum_all(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a, &tape).data(), &[3., 4.]);
        assert_eq!(g.get(b, &tape).data(), &[1., 2.]);
    }

    #[test]
    fn logsumexp_is_stable_and_correct() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![3], vec![1000.0, 999.0, -50.0]).unwrap());
        let l = tape.logsumexp_all(x);
        let v = tape.value(l).item();
        assert!(v.is_finite());
        assert!((v - (1000.0 + (1.0f64 + (-1.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn batch_matmul_matches_blockwise_matmul() {
        let a = Tensor::new(vec![4, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let b = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64).collect()).unwrap();
        let mut tape = Tape::new();
        let va = tape.param(a.clone());
        let vb = tape.param(b.clone());
        let out = tape.batch_matmul(va, vb, 2).unwrap();
        // block 0: rows 0..2 of a times rows 0..2 of b
        let a0 = Tensor::new(vec![2, 2], a.data()[0..4].to_vec()).unwrap();
        let b0 = Tensor::new(vec![2, 3], b.data()[0..6].to_vec()).unwrap();
        let expect0 = tensor::matmul(&a0, &b0).unwrap();
        assert_eq!(&tape.value(out).data()[0..6], expect0.data());
    }
}

//! Attention mechanisms under study: multi-head softmax attention, Twicing,
//! and gradient-boosted attention with per-round projections, gates, and the
//! key/value-source flag.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const CAUSAL_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    None,
    Scalar,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvSource {
    /// Keys and values from the round's residual (Alg. 1 line 6).
    Residual,
    /// Queries from the residual; keys and values from the raw input.
    Input,
}

/// Per-round per-head projection matrices (each head: d_head x d_model).
#[derive(Debug, Clone)]
pub struct RoundWeights {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub enum GateWeights {
    /// One learnable logit broadcast over every dimension.
    Scalar(Tensor),
    /// sigma(W_g [F||c] + b) per token, per dimension.
    Mlp { w: Tensor, b: Tensor },
}

/// Parameters for one attention block of `rounds` boosted rounds.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub d_model: usize,
    pub n_heads: usize,
    pub rounds: Vec<RoundWeights>,
    pub w_out: Tensor,
    pub gate_kind: GateKind,
    /// One gate per correction round (rounds - 1 entries; empty for `None`).
    pub gates: Vec<GateWeights>,
    pub kv_source: KvSource,
    pub causal: bool,
}

impl AttentionParams {
    pub fn init(
        rng: &mut impl Rng,
        d_model: usize,
        n_heads: usize,
        rounds: usize,
        gate_kind: GateKind,
        kv_source: KvSource,
        causal: bool,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::invalid_param(
                "n_heads",
                format!("d_model {d_model} not divisible by n_heads {n_heads}"),
            ));
        }
        if rounds == 0 {
            return Err(Error::invalid_param("rounds", "at least one round"));
        }
        let d_head = d_model / n_heads;
        let std = 1.0 / (d_model as f64).sqrt();
        let mut mk = || Tensor::randn(rng, &[d_head, d_model], std);
        let round_weights = (0..rounds)
            .map(|_| RoundWeights {
                w_q: (0..n_heads).map(|_| mk()).collect(),
                w_k: (0..n_heads).map(|_| mk()).collect(),
                w_v: (0..n_heads).map(|_| mk()).collect(),
            })
            .collect();
        let w_out = Tensor::randn(rng, &[d_model, d_model], std);
        let gates = match gate_kind {
            GateKind::None => Vec::new(),
            GateKind::Scalar => (1..rounds).map(|_| GateWeights::Scalar(Tensor::scalar(0.0))).collect(),
            GateKind::Mlp => (1..rounds)
                .map(|_| GateWeights::Mlp {
                    w: Tensor::randn(rng, &[d_model, 2 * d_model], 1.0 / (2.0 * d_model as f64).sqrt()),
                    b: Tensor::zeros(&[d_model]),
                })
                .collect(),
        };
        Ok(AttentionParams {
            d_model,
            n_heads,
            rounds: round_weights,
            w_out,
            gate_kind,
            gates,
            kv_source,
            causal,
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    /// Flat views of every learnable tensor, in a stable order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for r in &self.rounds {
            for h in 0..self.n_heads {
                out.push(&r.w_q[h]);
                out.push(&r.w_k[h]);
                out.push(&r.w_v[h]);
            }
        }
        out.push(&self.w_out);
        for g in &self.gates {
            match g {
                GateWeights::Scalar(t) => out.push(t),
                GateWeights::Mlp { w, b } => {
                    out.push(w);
                    out.push(b);
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let n_heads = self.n_heads;
        let mut out: Vec<&mut Tensor> = Vec::new();
        for r in &mut self.rounds {
            let mut qs = r.w_q.iter_mut();
            let mut ks = r.w_k.iter_mut();
            let mut vs = r.w_v.iter_mut();
            for _ in 0..n_heads {
                out.push(qs.next().expect("head count"));
                out.push(ks.next().expect("head count"));
                out.push(vs.next().expect("head count"));
            }
        }
        out.push(&mut self.w_out);
        for g in &mut self.gates {
            match g {
                GateWeights::Scalar(t) => out.push(t),
                GateWeights::Mlp { w, b } => {
                    out.push(w);
                    out.push(b);
                }
            }
        }
        out
    }
}

/// Tape handles mirroring [`AttentionParams`].
pub struct AttentionVars {
    pub rounds: Vec<RoundVars>,
    pub w_out: Var,
    pub gates: Vec<GateVars>,
}

pub struct RoundVars {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
}

pub enum GateVars {
    Scalar(Var),
    Mlp { w: Var, b: Var },
}

impl AttentionParams {
    /// Register every weight on the tape (as trainable params or constants).
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> AttentionVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let rounds = self
            .rounds
            .iter()
            .map(|r| RoundVars {
                w_q: r.w_q.iter().map(&mut reg).collect(),
                w_k: r.w_k.iter().map(&mut reg).collect(),
                w_v: r.w_v.iter().map(&mut reg).collect(),
            })
            .collect();
        let w_out = reg(&self.w_out);
        let gates = self
            .gates
            .iter()
            .map(|g| match g {
                GateWeights::Scalar(t) => GateVars::Scalar(reg(t)),
                GateWeights::Mlp { w, b } => GateVars::Mlp { w: reg(w), b: reg(b) },
            })
            .collect();
        AttentionVars { rounds, w_out, gates }
    }

    /// The same flat order as [`AttentionParams::params`].
    pub fn vars_flat(vars: &AttentionVars) -> Vec<Var> {
        let mut out = Vec::new();
        for r in &vars.rounds {
            for h in 0..r.w_q.len() {
                out.push(r.w_q[h]);
                out.push(r.w_k[h]);
                out.push(r.w_v[h]);
            }
        }
        out.push(vars.w_out);
        for g in &vars.gates {
            match g {
                GateVars::Scalar(v) => out.push(*v),
                GateVars::Mlp { w, b } => {
                    out.push(*w);
                    out.push(*b);
                }
            }
        }
        out
    }
}

/// Additive causal mask for `batch` stacked T x T score blocks.
pub fn causal_mask(t: usize, batch: usize) -> Tensor {
    let mut m = Tensor::zeros(&[batch * t, t]);
    for s in 0..batch {
        for i in 0..t {
            for j in (i + 1)..t {
                m.set(s * t + i, j, CAUSAL_NEG);
            }
        }
    }
    m
}

/// One multi-head attention pass on the tape. `q_src` and `kv_src` are
/// (batch*T) x d_model activations; heads are concatenated on output and no
/// output projection is applied. Returns per-head attention matrices when
/// `collect_attn` is set.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_on_tape(
    tape: &mut Tape,
    q_src: Var,
    kv_src: Var,
    round: &RoundVars,
    d_head: usize,
    batch: usize,
    mask: Option<Var>,
    collect_attn: bool,
) -> Result<(Var, Vec<Tensor>)> {
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut head_outs = Vec::with_capacity(round.w_q.len());
    let mut attns = Vec::new();
    for h in 0..round.w_q.len() {
        let q = tape.matmul_tb(q_src, round.w_q[h])?;
        let k = tape.matmul_tb(kv_src, round.w_k[h])?;
        let v = tape.matmul_tb(kv_src, round.w_v[h])?;
        let scores = tape.batch_matmul_tb(q, k, batch)?;
        let scaled = tape.scale(scores, scale);
        let masked = match mask {
            Some(m) => tape.add(scaled, m)?,
            None => scaled,
        };
        let a = tape.softmax_rows(masked);
        if collect_attn {
            attns.push(tape.value(a).clone());
        }
        head_outs.push(tape.batch_matmul(a, v, batch)?);
    }
    let out = if head_outs.len() == 1 {
        head_outs[0]
    } else {
        tape.concat_cols(&head_outs)?
    };
    Ok((out, attns))
}

/// Gate value on the tape for correction round `m` (1-based).
pub fn gate_on_tape(
    tape: &mut Tape,
    kind: GateKind,
    gate: Option<&GateVars>,
    f: Var,
    c: Var,
) -> Result<Option<Var>> {
    match (kind, gate) {
        (GateKind::None, _) => Ok(None),
        (GateKind::Scalar, Some(GateVars::Scalar(theta))) => Ok(Some(tape.sigmoid(*theta))),
        (GateKind::Mlp, Some(GateVars::Mlp { w, b })) => {
            let joint = tape.concat_cols(&[f, c])?;
            let pre = tape.matmul_tb(joint, *w)?;
            let biased = tape.add_row_broadcast(pre, *b)?;
            Ok(Some(tape.sigmoid(biased)))
        }
        _ => Err(Error::Contract("gate kind/weights mismatch".into())),
    }
}

/// Recorded per-round internals of one boosted forward pass.
#[derive(Debug, Clone, Default)]
pub struct BoostDiagnostics {
    /// Per round, per head attention matrices ((batch*T) x T each).
    pub attn: Vec<Vec<Tensor>>,
    /// r_m for m = 1..M-1.
    pub residuals: Vec<Tensor>,
    /// c_m for m = 1..M-1.
    pub corrections: Vec<Tensor>,
    /// g_m for m = 1..M-1 (broadcast to full shape for scalar gates; all-ones
    /// tensors when the gate kind is `None`).
    pub gates: Vec<Tensor>,
    /// F_m for m = 0..M-1 (pre-output-projection cumulative predictions).
    pub cumulative: Vec<Tensor>,
}

/// Algorithm-1 forward pass on the tape: round 0 on the input, then gated
/// corrections on the residual, then the output projection. Returns the
/// output var, the pre-projection cumulative var, and diagnostics.
pub fn boosted_forward_on_tape(
    tape: &mut Tape,
    x: Var,
    params: &AttentionParams,
    vars: &AttentionVars,
    batch: usize,
    mask: Option<Var>,
    collect: bool,
) -> Result<(Var, Var, BoostDiagnostics)> {
    let d_head = params.d_head();
    let mut diag = BoostDiagnostics::default();

    let (y0, attn0) = multi_head_on_tape(tape, x, x, &vars.rounds[0], d_head, batch, mask, collect)?;
    if collect {
        diag.attn.push(attn0);
        diag.cumulative.push(tape.value(y0).clone());
    }
    let mut f = y0;

    for m in 1..params.n_rounds() {
        let r = tape.sub(x, f)?;
        let kv = match params.kv_source {
            KvSource::Residual => r,
            KvSource::Input => x,
        };
        let (c, attn_m) =
            multi_head_on_tape(tape, r, kv, &vars.rounds[m], d_head, batch, mask, collect)?;
        let gate = gate_on_tape(tape, params.gate_kind, vars.gates.get(m - 1), f, c)?;
        let update = match gate {
            None => c,
            Some(g) if params.gate_kind == GateKind::Scalar => tape.mul_scalar_var(c, g)?,
            Some(g) => tape.mul(g, c)?,
        };
        if collect {
            diag.attn.push(attn_m);
            diag.residuals.push(tape.value(r).clone());
            diag.corrections.push(tape.value(c).clone());
            let gt = match gate {
                None => Tensor::full(tape.value(c).shape(), 1.0),
                Some(g) if params.gate_kind == GateKind::Scalar => {
                    Tensor::full(tape.value(c).shape(), tape.value(g).item())
                }
                Some(g) => tape.value(g).clone(),
            };
            diag.gates.push(gt);
        }
        f = tape.add(f, update)?;
        if collect {
            diag.cumulative.push(tape.value(f).clone());
        }
    }

    let out = tape.matmul_tb(f, vars.w_out)?;
    Ok((out, f, diag))
}

// ── pure wrappers ────────────────────────────────────────────────────

fn mask_for(params: &AttentionParams, tape: &mut Tape, t: usize) -> Option<Var> {
    if params.causal {
        Some(tape.constant(causal_mask(t, 1)))
    } else {
        None
    }
}

/// Standard multi-head attention for round `round`: softmax(QK'/sqrt(d_h))V
/// with heads concatenated and no output projection.
pub fn standard_attention(x: &Tensor, params: &AttentionParams, round: usize) -> Result<Tensor> {
    if round >= params.n_rounds() {
        return Err(Error::invalid_param("round", format!("round {round} not in params")));
    }
    if x.cols() != params.d_model {
        return Err(Error::DimMismatch {
            op: "standard_attention",
            left: x.shape().to_vec(),
            right: vec![params.d_model],
        });
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let mask = mask_for(params, &mut tape, x.rows());
    let (out, _) = multi_head_on_tape(
        &mut tape,
        xv,
        xv,
        &vars.rounds[round],
        params.d_head(),
        1,
        mask,
        false,
    )?;
    Ok(tape.value(out).clone())
}

/// Twicing attention: per head (2A - A^2)V computed as AV + A(V - AV), with
/// round-0 projections and no output projection.
pub fn twicing_attention(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    if x.cols() != params.d_model {
        return Err(Error::DimMismatch {
            op: "twicing_attention",
            left: x.shape().to_vec(),
            right: vec![params.d_model],
        });
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let mask = mask_for(params, &mut tape, x.rows());
    let out = twicing_on_tape(&mut tape, xv, params, &vars, 1, mask)?;
    Ok(tape.value(out).clone())
}

/// Twicing on the tape (heads concatenated, no output projection).
pub fn twicing_on_tape(
    tape: &mut Tape,
    x: Var,
    params: &AttentionParams,
    vars: &AttentionVars,
    batch: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let d_head = params.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();
    let round = &vars.rounds[0];
    let mut head_outs = Vec::new();
    for h in 0..params.n_heads {
        let q = tape.matmul_tb(x, round.w_q[h])?;
        let k = tape.matmul_tb(x, round.w_k[h])?;
        let v = tape.matmul_tb(x, round.w_v[h])?;
        let scores = tape.batch_matmul_tb(q, k, batch)?;
        let scaled = tape.scale(scores, scale);
        let masked = match mask {
            Some(m) => tape.add(scaled, m)?,
            None => scaled,
        };
        let a = tape.softmax_rows(masked);
        let av = tape.batch_matmul(a, v, batch)?;
        let resid = tape.sub(v, av)?;
        let smoothed = tape.batch_matmul(a, resid, batch)?;
        head_outs.push(tape.add(av, smoothed)?);
    }
    if head_outs.len() == 1 {
        Ok(head_outs[0])
    } else {
        tape.concat_cols(&head_outs)
    }
}

/// Full Algorithm-1 forward pass (pure): returns W_out·F and diagnostics.
pub fn boosted_attention_forward(
    x: &Tensor,
    params: &AttentionParams,
) -> Result<(Tensor, BoostDiagnostics)> {
    if x.cols() != params.d_model {
        return Err(Error::DimMismatch {
            op: "boosted_attention_forward",
            left: x.shape().to_vec(),
            right: vec![params.d_model],
        });
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let mask = mask_for(params, &mut tape, x.rows());
    let (out, _f, diag) = boosted_forward_on_tape(&mut tape, xv, params, &vars, 1, mask, true)?;
    Ok((tape.value(out).clone(), diag))
}

/// Standalone gate evaluation (pure).
pub fn gate(f: &Tensor, c: &Tensor, weights: Option<&GateWeights>, kind: GateKind) -> Result<Tensor> {
    match kind {
        GateKind::None => Ok(Tensor::full(c.shape(), 1.0)),
        GateKind::Scalar => {
            let Some(GateWeights::Scalar(theta)) = weights else {
                return Err(Error::invalid_param("kind", "scalar gate needs scalar weights"));
            };
            Ok(Tensor::full(c.shape(), tensor::sigmoid(theta.item())))
        }
        GateKind::Mlp => {
            let Some(GateWeights::Mlp { w, b }) = weights else {
                return Err(Error::invalid_param("kind", "mlp gate needs mlp weights"));
            };
            let joint = tensor::concat_cols(&[f, c])?;
            let pre = tensor::matmul_tb(&joint, w)?;
            let biased = tensor::add_row_broadcast(&pre, b)?;
            Ok(biased.map(tensor::sigmoid))
        }
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use super::NnError;

/// Half-width of the uniform weight initialisation range.
pub const INIT_SCALE: f64 = 0.08;

pub fn init_uniform<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    shape: Vec<usize>,
    rng: &mut R,
) -> Result<ParamId, NnError> {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
        .collect();
    store.add(name, Tensor::new(shape, values)?)
}

pub fn init_zeros(store: &mut ParamStore, name: &str, shape: Vec<usize>) -> Result<ParamId, NnError> {
    store.add(name, Tensor::zeros(shape))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Tanh,
    Sigmoid,
}

/// `activation(W x + b)`.
pub fn dense(
    g: &mut Graph,
    x: Var,
    w: ParamId,
    b: ParamId,
    activation: Activation,
) -> Result<Var, NnError> {
    let z = g.affine(w, x, Some(b))?;
    Ok(match activation {
        Activation::None => z,
        Activation::Tanh => g.tanh(z),
        Activation::Sigmoid => g.sigmoid(z),
    })
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            w: init_uniform(store, &format!("{name}.w"), vec![output, input], rng)?,
            b: init_zeros(store, &format!("{name}.b"), vec![output])?,
            activation,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        dense(g, x, self.w, self.b, self.activation)
    }
}

/// Unidirectional LSTM with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Hidden and cell state after one step.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let wx = init_uniform(store, &format!("{name}.wx"), vec![4 * hidden_dim, input_dim], rng)?;
        let wh = init_uniform(store, &format!("{name}.wh"), vec![4 * hidden_dim, hidden_dim], rng)?;
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        let b = store.add(format!("{name}.b"), Tensor::new(vec![4 * hidden_dim], bias)?)?;
        Ok(Self {
            wx,
            wh,
            b,
            input_dim,
            hidden_dim,
        })
    }

    /// One recurrence step; `prev = None` means zero initial state.
    pub fn step(&self, g: &mut Graph, x: Var, prev: Option<LstmState>) -> Result<LstmState, NnError> {
        let h = self.hidden_dim;
        let mut gates = g.affine(self.wx, x, Some(self.b))?;
        if let Some(p) = prev {
            let rec = g.affine(self.wh, p.h, None)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice(gates, 0, h)?;
        let f = g.slice(gates, h, h)?;
        let c_in = g.slice(gates, 2 * h, h)?;
        let o = g.slice(gates, 3 * h, h)?;
        let i = g.sigmoid(i);
        let o = g.sigmoid(o);
        let c_in = g.tanh(c_in);
        let mut c = g.mul(i, c_in)?;
        if let Some(p) = prev {
            let f = g.sigmoid(f);
            let keep = g.mul(f, p.c)?;
            c = g.add(c, keep)?;
        }
        let tc = g.tanh(c);
        let h_out = g.mul(o, tc)?;
        Ok(LstmState { h: h_out, c })
    }

    /// Hidden states in input order; `reverse` runs right to left.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], reverse: bool) -> Result<Vec<Var>, NnError> {
        let mut out = vec![None; inputs.len()];
        let mut state = None;
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..inputs.len()).rev())
        } else {
            Box::new(0..inputs.len())
        };
        for t in order {
            if g.dim(inputs[t]) != self.input_dim {
                return Err(NnError::Shape(format!(
                    "lstm input of length {} (expected {})",
                    g.dim(inputs[t]),
                    self.input_dim
                )));
            }
            let s = self.step(g, inputs[t], state)?;
            out[t] = Some(s.h);
            state = Some(s);
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    }
}

/// Forward and backward LSTMs whose per-position outputs are concatenated.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), input_dim, hidden_dim, rng)?,
            backward: Lstm::new(store, &format!("{name}.bwd"), input_dim, hidden_dim, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn encode(&self, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>, NnError> {
        if inputs.is_empty() {
            return Err(NnError::Shape("bilstm over an empty sequence".into()));
        }
        let fw = self.forward.run(g, inputs, false)?;
        let bw = self.backward.run(g, inputs, true)?;
        Ok(fw
            .into_iter()
            .zip(bw)
            .map(|(f, b)| g.concat(&[f, b]))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Additive,
    Multiplicative,
}

/// Scores a query against a set of keys and pools the keys.
///
/// Additive: `vᵀ tanh(W_q q + W_k k_i)`. Multiplicative: `(W q)ᵀ k_i`, i.e.
/// a bilinear form with a learned `key_dim × query_dim` matrix.
#[derive(Clone, Debug)]
pub enum Attention {
    Additive { wq: ParamId, wk: ParamId, v: ParamId },
    Multiplicative { w: ParamId },
}

/// Keys prepared for repeated attention with different queries.
#[derive(Clone, Debug)]
pub struct Keys {
    pub raw: Vec<Var>,
    projected: Vec<Var>,
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kind: AttentionKind,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(match kind {
            AttentionKind::Additive => Attention::Additive {
                wq: init_uniform(store, &format!("{name}.wq"), vec![attn_dim, query_dim], rng)?,
                wk: init_uniform(store, &format!("{name}.wk"), vec![attn_dim, key_dim], rng)?,
                v: init_uniform(store, &format!("{name}.v"), vec![attn_dim], rng)?,
            },
            AttentionKind::Multiplicative => Attention::Multiplicative {
                w: init_uniform(store, &format!("{name}.w"), vec![key_dim, query_dim], rng)?,
            },
        })
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            Attention::Additive { .. } => AttentionKind::Additive,
            Attention::Multiplicative { .. } => AttentionKind::Multiplicative,
        }
    }

    pub fn prepare(&self, g: &mut Graph, keys: &[Var]) -> Result<Keys, NnError> {
        let projected = match self {
            Attention::Additive { wk, .. } => keys
                .iter()
                .map(|&k| g.affine(*wk, k, None))
                .collect::<Result<_, _>>()?,
            Attention::Multiplicative { .. } => Vec::new(),
        };
        Ok(Keys {
            raw: keys.to_vec(),
            projected,
        })
    }

    /// Unnormalised scores, one per key.
    pub fn scores(&self, g: &mut Graph, query: Var, keys: &Keys) -> Result<Var, NnError> {
        if keys.raw.is_empty() {
            return Err(NnError::EmptyKeys);
        }
        match self {
            Attention::Additive { wq, v, .. } => {
                let q = g.affine(*wq, query, None)?;
                g.additive_scores(q, &keys.projected, *v)
            }
            Attention::Multiplicative { w } => {
                let q = g.affine(*w, query, None)?;
                let s = keys
                    .raw
                    .iter()
                    .map(|&k| g.dot(q, k))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(g.concat(&s))
            }
        }
    }

    /// Returns `(weights, context)`.
    pub fn attend(&self, g: &mut Graph, query: Var, keys: &Keys) -> Result<(Var, Var), NnError> {
        let s = self.scores(g, query, keys)?;
        let w = g.softmax(s);
        let ctx = g.weighted_sum(w, &keys.raw)?;
        Ok((w, ctx))
    }
}

/// `-ln dist[target]` with clamping.
pub fn cross_entropy_node(g: &mut Graph, prob_of_target: Var) -> Var {
    let l = g.ln_clamped(prob_of_target);
    g.scale(l, -1.0)
}

/// `-label·ln p - (1-label)·ln(1-p)` scaled by `weight`.
pub fn bce_node(g: &mut Graph, p: Var, label: bool, weight: f64) -> Var {
    let q = if label { p } else { g.scale_shift(p, -1.0, 1.0) };
    let l = g.ln_clamped(q);
    g.scale(l, -weight)
}

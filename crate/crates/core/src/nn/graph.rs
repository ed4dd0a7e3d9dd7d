//! Tape-based reverse-mode differentiation over vectors.
//!
//! A [`Graph`] records every operation applied during a forward pass. Values
//! are plain `Vec<f64>`; matrices only ever appear as parameters, consumed
//! directly by [`Graph::affine`] and [`Graph::embed_sum`] so the tape never
//! copies a weight matrix. Calling [`Graph::backward`] on a scalar node
//! accumulates parameter gradients into a [`Gradients`] buffer.

use super::tensor::{Gradients, ParamId, ParamStore};
use super::{NnError, PROB_CLAMP};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    EmbedSum {
        table: ParamId,
        ids: Vec<usize>,
    },
    Affine {
        w: ParamId,
        x: Var,
        b: Option<ParamId>,
    },
    Add(Var, Var),
    Sum(Vec<Var>),
    Mul(Var, Var),
    ScaleShift {
        x: Var,
        scale: f64,
    },
    Tanh(Var),
    Sigmoid(Var),
    LnClamped(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    Mean(Vec<Var>),
    IndexSum {
        x: Var,
        idx: Vec<usize>,
    },
    ScalarMul {
        x: Var,
        s: Var,
    },
    AdditiveScores {
        query: Var,
        keys: Vec<Var>,
        v: ParamId,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.leaf(vec![0.0; n])
    }

    /// Whole parameter tensor as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).values().to_vec();
        self.push(value, Op::Param(id))
    }

    /// Sum of the rows `ids` of an embedding table.
    pub fn embed_sum(&mut self, table: ParamId, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.params.get(table);
        if ids.is_empty() {
            return Err(NnError::Shape("embedding lookup with no ids".into()));
        }
        let mut out = vec![0.0; t.cols()];
        for &id in ids {
            if id >= t.rows() {
                return Err(NnError::InvalidId {
                    id,
                    rows: t.rows(),
                });
            }
            axpy(1.0, t.row(id), &mut out);
        }
        Ok(self.push(
            out,
            Op::EmbedSum {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `W x (+ b)` where `W` is an `m × n` parameter.
    pub fn affine(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Result<Var, NnError> {
        let wt = self.params.get(w);
        let (m, n) = (wt.rows(), wt.cols());
        let xv = self.value(x);
        if xv.len() != n {
            return Err(NnError::Shape(format!(
                "{}: matrix {m}x{n} applied to vector of length {}",
                self.params.name(w),
                xv.len()
            )));
        }
        let mut out = Vec::with_capacity(m);
        let wv = wt.values();
        for i in 0..m {
            out.push(dot(&wv[i * n..(i + 1) * n], xv));
        }
        if let Some(b) = b {
            let bv = self.params.get(b).values();
            if bv.len() != m {
                return Err(NnError::Shape(format!(
                    "{}: bias of length {} for output {m}",
                    self.params.name(b),
                    bv.len()
                )));
            }
            for (o, bi) in out.iter_mut().zip(bv) {
                *o += bi;
            }
        }
        Ok(self.push(out, Op::Affine { w, x, b }))
    }

    fn same_len(&self, a: Var, b: Var) -> Result<usize, NnError> {
        let (la, lb) = (self.dim(a), self.dim(b));
        if la != lb {
            return Err(NnError::Shape(format!("length mismatch {la} vs {lb}")));
        }
        Ok(la)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_len(a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sum(&mut self, items: &[Var]) -> Result<Var, NnError> {
        let first = *items
            .first()
            .ok_or_else(|| NnError::Shape("sum of nothing".into()))?;
        let mut out = self.value(first).to_vec();
        for &v in &items[1..] {
            self.same_len(first, v)?;
            axpy(1.0, &self.nodes[v.0].value, &mut out);
        }
        Ok(self.push(out, Op::Sum(items.to_vec())))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_len(a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Element-wise `scale * x + shift`.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        self.push(out, Op::ScaleShift { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.scale_shift(x, scale, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(out, Op::Sigmoid(x))
    }

    /// Natural log after clamping into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn ln_clamped(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
            .collect();
        self.push(out, Op::LnClamped(x))
    }

    pub fn concat(&mut self, items: &[Var]) -> Var {
        let mut out = Vec::with_capacity(items.iter().map(|&v| self.dim(v)).sum());
        for &v in items {
            out.extend_from_slice(&self.nodes[v.0].value);
        }
        self.push(out, Op::Concat(items.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        if start + len > xv.len() {
            return Err(NnError::Shape(format!(
                "slice {start}..{} of length {}",
                start + len,
                xv.len()
            )));
        }
        let out = xv[start..start + len].to_vec();
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_len(a, b)?;
        let out = vec![dot(self.value(a), self.value(b))];
        Ok(self.push(out, Op::Dot(a, b)))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).to_vec();
        softmax_in_place(&mut out);
        self.push(out, Op::Softmax(x))
    }

    /// `Σ_i weights[i] · items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var, NnError> {
        if self.dim(weights) != items.len() || items.is_empty() {
            return Err(NnError::Shape(format!(
                "{} weights for {} items",
                self.dim(weights),
                items.len()
            )));
        }
        let d = self.dim(items[0]);
        let mut out = vec![0.0; d];
        for (i, &it) in items.iter().enumerate() {
            if self.dim(it) != d {
                return Err(NnError::Shape("ragged weighted sum".into()));
            }
            let w = self.nodes[weights.0].value[i];
            axpy(w, &self.nodes[it.0].value, &mut out);
        }
        Ok(self.push(
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    pub fn mean(&mut self, items: &[Var]) -> Result<Var, NnError> {
        let first = *items
            .first()
            .ok_or_else(|| NnError::Shape("mean of nothing".into()))?;
        let mut out = vec![0.0; self.dim(first)];
        for &v in items {
            self.same_len(first, v)?;
            axpy(1.0, &self.nodes[v.0].value, &mut out);
        }
        let k = 1.0 / items.len() as f64;
        out.iter_mut().for_each(|o| *o *= k);
        Ok(self.push(out, Op::Mean(items.to_vec())))
    }

    /// Scalar sum of the selected elements of `x` (indices may repeat).
    pub fn index_sum(&mut self, x: Var, idx: &[usize]) -> Result<Var, NnError> {
        let xv = self.value(x);
        let mut s = 0.0;
        for &i in idx {
            s += *xv.get(i).ok_or(NnError::IndexOutOfRange {
                index: i,
                len: xv.len(),
            })?;
        }
        Ok(self.push(
            vec![s],
            Op::IndexSum {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var, NnError> {
        self.index_sum(x, &[i])
    }

    /// Vector `x` times scalar node `s`.
    pub fn scalar_mul(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        if self.dim(s) != 1 {
            return Err(NnError::Shape("scalar_mul expects a scalar".into()));
        }
        let k = self.scalar(s);
        let out = self.value(x).iter().map(|v| v * k).collect();
        Ok(self.push(out, Op::ScalarMul { x, s }))
    }

    /// Scores `s_i = vᵀ tanh(query + keys[i])` for already-projected query and keys.
    pub fn additive_scores(
        &mut self,
        query: Var,
        keys: &[Var],
        v: ParamId,
    ) -> Result<Var, NnError> {
        let vv = self.params.get(v).values();
        let qv = self.value(query);
        if qv.len() != vv.len() {
            return Err(NnError::Shape(format!(
                "attention query of length {} vs v of length {}",
                qv.len(),
                vv.len()
            )));
        }
        let mut out = Vec::with_capacity(keys.len());
        for &k in keys {
            let kv = &self.nodes[k.0].value;
            if kv.len() != qv.len() {
                return Err(NnError::Shape("attention key length mismatch".into()));
            }
            let mut s = 0.0;
            for j in 0..kv.len() {
                s += vv[j] * (qv[j] + kv[j]).tanh();
            }
            out.push(s);
        }
        Ok(self.push(
            out,
            Op::AdditiveScores {
                query,
                keys: keys.to_vec(),
                v,
            },
        ))
    }

    /// Back-propagates from scalar `root`, adding parameter gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Gradients) -> Result<(), NnError> {
        if self.dim(root) != 1 {
            return Err(NnError::Shape("backward from a non-scalar".into()));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        g[root.0] = Some(vec![1.0]);

        fn acc(g: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            g[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=root.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    axpy(1.0, &gi, grads.get_mut(*id));
                }
                Op::EmbedSum { table, ids } => {
                    let cols = self.params.get(*table).cols();
                    let tg = grads.get_mut(*table);
                    for &id in ids {
                        axpy(1.0, &gi, &mut tg[id * cols..(id + 1) * cols]);
                    }
                }
                Op::Affine { w, x, b } => {
                    let wt = self.params.get(*w);
                    let (m, n) = (wt.rows(), wt.cols());
                    let xv = &self.nodes[x.0].value;
                    {
                        let wg = grads.get_mut(*w);
                        for r in 0..m {
                            if gi[r] != 0.0 {
                                axpy(gi[r], xv, &mut wg[r * n..(r + 1) * n]);
                            }
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &gi, grads.get_mut(*b));
                    }
                    if self.needs_grad(*x) {
                        let wv = wt.values();
                        let xg = acc(&mut g, *x, n);
                        for r in 0..m {
                            if gi[r] != 0.0 {
                                axpy(gi[r], &wv[r * n..(r + 1) * n], xg);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        axpy(1.0, &gi, acc(&mut g, v, gi.len()));
                    }
                }
                Op::Sum(items) => {
                    for &v in items {
                        axpy(1.0, &gi, acc(&mut g, v, gi.len()));
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    {
                        let ga = acc(&mut g, *a, gi.len());
                        for k in 0..gi.len() {
                            ga[k] += gi[k] * bv[k];
                        }
                    }
                    let gb = acc(&mut g, *b, gi.len());
                    for k in 0..gi.len() {
                        gb[k] += gi[k] * av[k];
                    }
                }
                Op::ScaleShift { x, scale } => {
                    axpy(*scale, &gi, acc(&mut g, *x, gi.len()));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = acc(&mut g, *x, gi.len());
                    for k in 0..gi.len() {
                        gx[k] += gi[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = acc(&mut g, *x, gi.len());
                    for k in 0..gi.len() {
                        gx[k] += gi[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::LnClamped(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = acc(&mut g, *x, gi.len());
                    for k in 0..gi.len() {
                        if xv[k] > PROB_CLAMP && xv[k] < 1.0 - PROB_CLAMP {
                            gx[k] += gi[k] / xv[k];
                        }
                    }
                }
                Op::Concat(items) => {
                    let mut off = 0;
                    for &v in items {
                        let d = self.dim(v);
                        axpy(1.0, &gi[off..off + d], acc(&mut g, v, d));
                        off += d;
                    }
                }
                Op::Slice { x, start } => {
                    let d = self.dim(*x);
                    let gx = acc(&mut g, *x, d);
                    axpy(1.0, &gi, &mut gx[*start..*start + gi.len()]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    axpy(gi[0], bv, acc(&mut g, *a, av.len()));
                    axpy(gi[0], av, acc(&mut g, *b, bv.len()));
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner = dot(&gi, y);
                    let gx = acc(&mut g, *x, gi.len());
                    for k in 0..gi.len() {
                        gx[k] += y[k] * (gi[k] - inner);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    let mut gw = vec![0.0; items.len()];
                    for (k, &it) in items.iter().enumerate() {
                        gw[k] = dot(&gi, &self.nodes[it.0].value);
                        axpy(wv[k], &gi, acc(&mut g, it, gi.len()));
                    }
                    axpy(1.0, &gw, acc(&mut g, *weights, items.len()));
                }
                Op::Mean(items) => {
                    let k = 1.0 / items.len() as f64;
                    for &v in items {
                        axpy(k, &gi, acc(&mut g, v, gi.len()));
                    }
                }
                Op::IndexSum { x, idx } => {
                    let d = self.dim(*x);
                    let gx = acc(&mut g, *x, d);
                    for &k in idx {
                        gx[k] += gi[0];
                    }
                }
                Op::ScalarMul { x, s } => {
                    let k = self.scalar(*s);
                    let xv = &self.nodes[x.0].value;
                    let gs = dot(&gi, xv);
                    axpy(k, &gi, acc(&mut g, *x, gi.len()));
                    acc(&mut g, *s, 1)[0] += gs;
                }
                Op::AdditiveScores { query, keys, v } => {
                    let vv = self.params.get(*v).values();
                    let qv = &self.nodes[query.0].value;
                    let d = qv.len();
                    let mut gq = vec![0.0; d];
                    let mut gv = vec![0.0; d];
                    for (i_key, &k) in keys.iter().enumerate() {
                        let gs = gi[i_key];
                        if gs == 0.0 {
                            continue;
                        }
                        let kv = &self.nodes[k.0].value;
                        let gk = acc(&mut g, k, d);
                        for j in 0..d {
                            let t = (qv[j] + kv[j]).tanh();
                            gv[j] += gs * t;
                            let dz = gs * vv[j] * (1.0 - t * t);
                            gq[j] += dz;
                            gk[j] += dz;
                        }
                    }
                    axpy(1.0, &gv, grads.get_mut(*v));
                    axpy(1.0, &gq, acc(&mut g, *query, d));
                }
            }
        }
        Ok(())
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }
}

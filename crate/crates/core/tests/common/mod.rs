//! Plain-arithmetic reference implementations used as test oracles. They read
//! parameter values by name and share no code with the graph engine.
#![allow(dead_code)]

use memrw_core::nn::ParamStore;

pub fn param<'a>(store: &'a ParamStore, name: &str) -> (&'a [usize], &'a [f64]) {
    let t = store.get(store.id(name).unwrap_or_else(|| panic!("no parameter {name}")));
    (t.shape(), t.values())
}

pub fn set_param(store: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    for (i, v) in store.get_mut(id).values_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

pub fn mat_vec(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let (shape, w) = param(store, name);
    assert_eq!(shape[1], x.len(), "{name}");
    (0..shape[0])
        .map(|r| (0..shape[1]).map(|c| w[r * shape[1] + c] * x[c]).sum())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn embed(store: &ParamStore, ids: &[usize]) -> Vec<f64> {
    let (shape, t) = param(store, "emb");
    let d = shape[1];
    let mut out = vec![0.0; d];
    for &i in ids {
        for j in 0..d {
            out[j] += t[i * d + j];
        }
    }
    out
}

/// One LSTM direction; gate rows ordered input, forget, cell, output.
pub fn lstm(store: &ParamStore, prefix: &str, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let (_, b) = param(store, &format!("{prefix}.b"));
    let h_dim = b.len() / 4;
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = vec![Vec::new(); xs.len()];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        let z = add(
            &add(&mat_vec(store, &format!("{prefix}.wx"), &xs[t]), &mat_vec(store, &format!("{prefix}.wh"), &h)),
            b,
        );
        for k in 0..h_dim {
            let i = sig(z[k]);
            let f = sig(z[h_dim + k]);
            let g = z[2 * h_dim + k].tanh();
            let o = sig(z[3 * h_dim + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        out[t] = h.clone();
    }
    out
}

pub fn bilstm(store: &ParamStore, prefix: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f = lstm(store, &format!("{prefix}.fwd"), xs, false);
    let b = lstm(store, &format!("{prefix}.bwd"), xs, true);
    f.into_iter().zip(b).map(|(mut a, b)| {
        a.extend(b);
        a
    }).collect()
}

pub fn mean(xs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; xs[0].len()];
    for x in xs {
        for (o, v) in out.iter_mut().zip(x) {
            *o += v / xs.len() as f64;
        }
    }
    out
}

pub fn weighted(w: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; xs[0].len()];
    for (wi, x) in w.iter().zip(xs) {
        for (o, v) in out.iter_mut().zip(x) {
            *o += wi * v;
        }
    }
    out
}

/// Additive attention weights `softmax_i(vᵀ tanh(Wq q + Wk k_i))`.
pub fn additive_weights(store: &ParamStore, prefix: &str, q: &[f64], keys: &[Vec<f64>]) -> Vec<f64> {
    let qp = mat_vec(store, &format!("{prefix}.wq"), q);
    let (_, v) = param(store, &format!("{prefix}.v"));
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| {
            let kp = mat_vec(store, &format!("{prefix}.wk"), k);
            (0..v.len()).map(|j| v[j] * (qp[j] + kp[j]).tanh()).sum()
        })
        .collect();
    softmax(&scores)
}

/// Multiplicative attention weights `softmax_i((W q)ᵀ k_i)`.
pub fn multiplicative_weights(store: &ParamStore, prefix: &str, q: &[f64], keys: &[Vec<f64>]) -> Vec<f64> {
    let wq = mat_vec(store, &format!("{prefix}.w"), q);
    let scores: Vec<f64> = keys.iter().map(|k| k.iter().zip(&wq).map(|(a, b)| a * b).sum()).collect();
    softmax(&scores)
}

pub fn dense(store: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    add(&mat_vec(store, &format!("{prefix}.w"), x), param(store, &format!("{prefix}.b")).1)
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

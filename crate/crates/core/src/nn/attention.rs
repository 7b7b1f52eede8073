use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{Linear, Params};

/// Multi-head self-attention over the rows (subbands) of its input.
///
/// The key projection carries no bias: a key bias shifts every score of a
/// query row by the same amount and cancels in the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub n_head: usize,
    pub query: Linear,
    pub key: Array2<f64>,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax weights per head, each `n x n`.
    pub weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn init(dim: usize, n_head: usize, rng: &mut impl Rng) -> Self {
        assert!(dim % n_head == 0, "embedding {dim} not divisible by {n_head} heads");
        let key = Linear::init(dim, dim, rng).weight;
        Self {
            n_head,
            query: Linear::init(dim, dim, rng),
            key,
            value: Linear::init(dim, dim, rng),
            output: Linear::init(dim, dim, rng),
        }
    }

    pub fn zeros(dim: usize, n_head: usize) -> Self {
        Self {
            n_head,
            query: Linear::zeros(dim, dim),
            key: Array2::zeros((dim, dim)),
            value: Linear::zeros(dim, dim),
            output: Linear::zeros(dim, dim),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.fan_out() / self.n_head
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = x.dot(&self.key);
        let v = self.value.forward(x);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros(q.dim());
        let mut weights = Vec::with_capacity(self.n_head);
        for h in 0..self.n_head {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let a = softmax_rows(&scores);
            concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            weights.push(a);
        }
        let y = self.output.forward(&concat);
        (y, AttentionCache { x: x.clone(), q, k, v, weights, concat })
    }

    pub fn backward(&self, c: &AttentionCache, dy: &Array2<f64>, grad: &mut MultiHeadAttention) -> Array2<f64> {
        let dconcat = self.output.backward(&c.concat, dy, &mut grad.output);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.dim());
        let mut dk = Array2::zeros(c.k.dim());
        let mut dv = Array2::zeros(c.v.dim());
        for h in 0..self.n_head {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &c.weights[h];
            let dout = dconcat.slice(cols);
            let da = dout.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dout));
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = a * &(&da - &row_dot) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut dx = self.query.backward(&c.x, &dq, &mut grad.query);
        grad.key += &c.x.t().dot(&dk);
        dx += &dk.dot(&self.key.t());
        dx += &self.value.backward(&c.x, &dv, &mut grad.value);
        dx
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.len() + self.value.param_count() + self.output.param_count()
    }
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

impl Params for MultiHeadAttention {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        let mut out = Vec::new();
        for (name, lin) in [("query", &self.query)] {
            out.extend(lin.tensors().into_iter().map(|(n, d, s)| (format!("{name}.{n}"), d, s)));
        }
        out.push(("key.weight".into(), self.key.as_slice().unwrap(), self.key.shape().to_vec()));
        for (name, lin) in [("value", &self.value), ("output", &self.output)] {
            out.extend(lin.tensors().into_iter().map(|(n, d, s)| (format!("{name}.{n}"), d, s)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.query.tensors_mut();
        out.push(self.key.as_slice_mut().unwrap());
        out.extend(self.value.tensors_mut());
        out.extend(self.output.tensors_mut());
        out
    }
}

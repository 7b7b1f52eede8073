use ndarray::Array2;
use rand::Rng;

use super::attention::AttentionCache;
use super::norm::LayerNormCache;
use super::{prefixed, LayerNorm, Linear, MultiHeadAttention, Params};

/// Fixed sinusoidal positional encoding, `n_pos x dim`.
pub fn positional_encoding(n_pos: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_pos, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

/// Two-layer ReLU feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl FeedForward {
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.fc1.forward(x);
        let hidden = pre.mapv(|v| v.max(0.0));
        let y = self.fc2.forward(&hidden);
        (y, FeedForwardCache { x: x.clone(), pre, hidden })
    }

    pub fn backward(&self, c: &FeedForwardCache, dy: &Array2<f64>, grad: &mut FeedForward) -> Array2<f64> {
        let dh = self.fc2.backward(&c.hidden, dy, &mut grad.fc2);
        let dpre = ndarray::Zip::from(&dh).and(&c.pre).map_collect(|&g, &p| if p > 0.0 { g } else { 0.0 });
        self.fc1.backward(&c.x, &dpre, &mut grad.fc1)
    }
}

/// Pre-normalized transformer encoder layer:
/// `x1 = x + MHA(LN1(x))`, `y = x1 + FFN(LN2(x1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    ln1: LayerNormCache,
    pub attn: AttentionCache,
    ln2: LayerNormCache,
    ffn: FeedForwardCache,
}

impl EncoderLayer {
    pub fn init(dim: usize, n_head: usize, ffn_width: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::init(dim, n_head, rng),
            ln2: LayerNorm::new(dim),
            ffn: FeedForward {
                fc1: Linear::init(dim, ffn_width, rng),
                fc2: Linear::init(ffn_width, dim, rng),
            },
        }
    }

    pub fn zeros(dim: usize, n_head: usize, ffn_width: usize) -> Self {
        Self {
            ln1: LayerNorm::zeros(dim),
            attn: MultiHeadAttention::zeros(dim, n_head),
            ln2: LayerNorm::zeros(dim),
            ffn: FeedForward {
                fc1: Linear::zeros(dim, ffn_width),
                fc2: Linear::zeros(ffn_width, dim),
            },
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, EncoderLayerCache) {
        let (a, ln1) = self.ln1.forward(x);
        let (m, attn) = self.attn.forward(&a);
        let x1 = x + &m;
        let (b, ln2) = self.ln2.forward(&x1);
        let (f, ffn) = self.ffn.forward(&b);
        (x1 + f, EncoderLayerCache { ln1, attn, ln2, ffn })
    }

    pub fn backward(&self, c: &EncoderLayerCache, dy: &Array2<f64>, grad: &mut EncoderLayer) -> Array2<f64> {
        let db = self.ffn.backward(&c.ffn, dy, &mut grad.ffn);
        let dx1 = dy + &self.ln2.backward(&c.ln2, &db, &mut grad.ln2);
        let da = self.attn.backward(&c.attn, &dx1, &mut grad.attn);
        &dx1 + &self.ln1.backward(&c.ln1, &da, &mut grad.ln1)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, d, _)| d.len()).sum()
    }
}

impl Params for FeedForward {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        let mut out = prefixed("fc1", self.fc1.tensors());
        out.extend(prefixed("fc2", self.fc2.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.fc1.tensors_mut();
        out.extend(self.fc2.tensors_mut());
        out
    }
}

impl Params for EncoderLayer {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        let mut out = prefixed("ln1", self.ln1.tensors());
        out.extend(prefixed("attn", self.attn.tensors()));
        out.extend(prefixed("ln2", self.ln2.tensors()));
        out.extend(prefixed("ffn", self.ffn.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.ln1.tensors_mut();
        out.extend(self.attn.tensors_mut());
        out.extend(self.ln2.tensors_mut());
        out.extend(self.ffn.tensors_mut());
        out
    }
}

/// The shared EN / DE core: positional encoding followed by a stack of
/// encoder layers. Shape is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerStack {
    pub layers: Vec<EncoderLayer>,
}

impl TransformerStack {
    pub fn init(depth: usize, dim: usize, n_head: usize, ffn_width: usize, rng: &mut impl Rng) -> Self {
        Self { layers: (0..depth).map(|_| EncoderLayer::init(dim, n_head, ffn_width, rng)).collect() }
    }

    pub fn zeros(depth: usize, dim: usize, n_head: usize, ffn_width: usize) -> Self {
        Self { layers: (0..depth).map(|_| EncoderLayer::zeros(dim, n_head, ffn_width)).collect() }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<EncoderLayerCache>) {
        let mut h = x + &positional_encoding(x.nrows(), x.ncols());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    pub fn backward(&self, caches: &[EncoderLayerCache], dy: &Array2<f64>, grad: &mut TransformerStack) -> Array2<f64> {
        let mut d = dy.clone();
        for ((layer, cache), g) in self.layers.iter().zip(caches).zip(grad.layers.iter_mut()).rev() {
            d = layer.backward(cache, &d, g);
        }
        // Positional encoding is additive and constant.
        d
    }
}

impl Params for TransformerStack {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors().into_iter().map(move |(n, d, s)| (format!("layers.{i}.{n}"), d, s)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

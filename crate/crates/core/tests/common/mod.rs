//! Shared helpers for the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scsinet::nn::Params;
use scsinet::C64;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn real_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

pub fn complex_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<C64> {
    Array2::from_shape_simple_fn((r, c), || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Adds uniform noise of amplitude `amp` to every parameter, so checks do
/// not sit on special points such as unit gains or zero biases.
pub fn jitter<P: Params>(p: &mut P, rng: &mut ChaCha8Rng, amp: f64) {
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-amp..amp);
        }
    }
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `loss` with respect to every parameter of `p`.
pub fn numeric_param_grads<P: Params + Clone>(p: &P, loss: impl Fn(&P) -> f64) -> Vec<Vec<f64>> {
    let n_tensors = p.tensors().len();
    let mut out = Vec::with_capacity(n_tensors);
    for t in 0..n_tensors {
        let len = p.tensors()[t].1.len();
        let mut g = Vec::with_capacity(len);
        for i in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[t][i] += FD_STEP;
            let mut minus = p.clone();
            minus.tensors_mut()[t][i] -= FD_STEP;
            g.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

/// Central differences of `loss` with respect to every entry of `x`.
pub fn numeric_input_grad(x: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += FD_STEP;
        let mut minus = x.clone();
        minus[[r, c]] -= FD_STEP;
        g[[r, c]] = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
    }
    g
}

/// Worst per-tensor relative error between an analytic gradient holder and
/// numeric gradients, with the tensor name.
pub fn worst_tensor<P: Params>(analytic: &P, numeric: &[Vec<f64>]) -> (String, f64) {
    analytic
        .tensors()
        .iter()
        .zip(numeric)
        .map(|((name, a, _), n)| (name.clone(), rel_err(a, n)))
        .fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

use scsinet::dataset::EigenSample;
use scsinet::model::{BlockName, ParamStore};
use scsinet::nn::{
    ds_backward, ds_forward, lpt_forward, lt_backward, lt_forward, us_backward, us_forward, EncoderLayer, FeedForward,
    Hyperparams, LayerNorm, Linear, MultiHeadAttention, TransformerStack,
};

fn weighted(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn worst(param: (String, f64), input: f64) -> f64 {
    param.1.max(input)
}

/// Each returns the worst relative error over parameters and input.
pub fn grad_linear() -> f64 {
    let mut rng = rng(1);
    let m = Linear::init(5, 3, &mut rng);
    let x = real_matrix(&mut rng, 4, 5);
    let r = real_matrix(&mut rng, 4, 3);
    let mut g = Linear::zeros(5, 3);
    let dx = m.backward(&x, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&m.forward(&x), &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&m.forward(x), &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_layer_norm() -> f64 {
    let mut rng = rng(2);
    let mut m = LayerNorm::new(6);
    jitter(&mut m, &mut rng, 0.5);
    let x = real_matrix(&mut rng, 3, 6);
    let r = real_matrix(&mut rng, 3, 6);
    let (_, cache) = m.forward(&x);
    let mut g = LayerNorm::zeros(6);
    let dx = m.backward(&cache, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&m.forward(&x).0, &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&m.forward(x).0, &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_attention() -> f64 {
    let mut rng = rng(3);
    let mut m = MultiHeadAttention::init(8, 2, &mut rng);
    jitter(&mut m, &mut rng, 0.2);
    let x = real_matrix(&mut rng, 5, 8);
    let r = real_matrix(&mut rng, 5, 8);
    let (_, cache) = m.forward(&x);
    let mut g = MultiHeadAttention::zeros(8, 2);
    let dx = m.backward(&cache, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&m.forward(&x).0, &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&m.forward(x).0, &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_feed_forward() -> f64 {
    let mut rng = rng(4);
    let mut m = FeedForward { fc1: Linear::init(4, 10, &mut rng), fc2: Linear::init(10, 4, &mut rng) };
    jitter(&mut m, &mut rng, 0.1);
    let x = real_matrix(&mut rng, 3, 4);
    let r = real_matrix(&mut rng, 3, 4);
    let (_, cache) = m.forward(&x);
    let mut g = FeedForward { fc1: Linear::zeros(4, 10), fc2: Linear::zeros(10, 4) };
    let dx = m.backward(&cache, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&m.forward(&x).0, &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&m.forward(x).0, &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_encoder_layer() -> f64 {
    let mut rng = rng(5);
    let mut m = EncoderLayer::init(8, 2, 16, &mut rng);
    jitter(&mut m, &mut rng, 0.1);
    let x = real_matrix(&mut rng, 4, 8);
    let r = real_matrix(&mut rng, 4, 8);
    let (_, cache) = m.forward(&x);
    let mut g = EncoderLayer::zeros(8, 2, 16);
    let dx = m.backward(&cache, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&m.forward(&x).0, &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&m.forward(x).0, &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_transformer_stack() -> f64 {
    let mut rng = rng(6);
    let mut m = TransformerStack::init(2, 8, 4, 12, &mut rng);
    jitter(&mut m, &mut rng, 0.1);
    let x = real_matrix(&mut rng, 3, 8);
    let r = real_matrix(&mut rng, 3, 8);
    let (_, caches) = m.forward(&x);
    let mut g = TransformerStack::zeros(2, 8, 4, 12);
    let dx = m.backward(&caches, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&m.forward(&x).0, &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&m.forward(x).0, &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_lpt() -> f64 {
    let mut rng = rng(10);
    let m = Linear::init(8, 6, &mut rng);
    let x = real_matrix(&mut rng, 3, 8);
    let r = real_matrix(&mut rng, 3, 6);
    let mut g = Linear::zeros(8, 6);
    m.backward(&x, &r, &mut g);
    worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&lpt_forward(m, &x), &r))).1
}

pub fn grad_lt() -> f64 {
    let mut rng = rng(7);
    let m = Linear::init(6, 8, &mut rng);
    let x = real_matrix(&mut rng, 3, 6);
    let r = real_matrix(&mut rng, 3, 8);
    let out = lt_forward(&m, &x);
    let mut g = Linear::zeros(6, 8);
    let dx = lt_backward(&m, &x, &out, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&lt_forward(m, &x), &r)));
    let nx = numeric_input_grad(&x, |x| weighted(&lt_forward(&m, x), &r));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_ds() -> f64 {
    let mut rng = rng(8);
    let m = Linear::init(12, 5, &mut rng);
    let x = real_matrix(&mut rng, 3, 4);
    let r: Vec<f64> = real_matrix(&mut rng, 1, 5).into_iter().collect();
    let dot = |z: Vec<f64>| z.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let z = ds_forward(&m, &x);
    let mut g = Linear::zeros(12, 5);
    let dx = ds_backward(&m, &x, &z, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| dot(ds_forward(m, &x))));
    let nx = numeric_input_grad(&x, |x| dot(ds_forward(&m, x)));
    worst(p, rel_err(dx.as_slice().unwrap(), nx.as_slice().unwrap()))
}

pub fn grad_us() -> f64 {
    let mut rng = rng(9);
    let m = Linear::init(5, 12, &mut rng);
    let y: Vec<f64> = real_matrix(&mut rng, 1, 5).into_iter().collect();
    let r = real_matrix(&mut rng, 3, 4);
    let mut g = Linear::zeros(5, 12);
    let dy = us_backward(&m, &y, &r, &mut g);
    let p = worst_tensor(&g, &numeric_param_grads(&m, |m| weighted(&us_forward(m, &y, 3), &r)));
    let y_row = Array2::from_shape_vec((1, 5), y.clone()).unwrap();
    let ny = numeric_input_grad(&y_row, |y| weighted(&us_forward(&m, y.as_slice().unwrap(), 3), &r));
    worst(p, rel_err(&dy, ny.as_slice().unwrap()))
}

pub fn tiny_hp() -> Hyperparams {
    Hyperparams {
        n_head: 2,
        n_sb: 3,
        n_ri: 1,
        n_emb: 4,
        t_en: 1,
        t_de: 1,
        ffn_width: 6,
        payloads: vec![4, 6],
        antennas: vec![4],
    }
}

/// Whole multi-payload pass with the quantizer bypassed, every parameter of
/// every routed block. Returns the worst block and its error.
pub fn grad_full_model() -> (String, f64) {
    let hp = tiny_hp();
    let mut rng = rng(11);
    let store = ParamStore::new(hp.clone(), 3).unwrap();
    let samples: Vec<EigenSample> = (0..3)
        .map(|i| EigenSample { w: complex_matrix(&mut rng, 4, 3), layer: 1, drop_id: 0, ue_id: i })
        .collect();
    let batch: Vec<&EigenSample> = samples.iter().collect();
    let loss = |s: &ParamStore| s.loss_and_grad_with(&batch, &hp.payloads, false).unwrap().loss;
    let out = store.loss_and_grad_with(&batch, &hp.payloads, false).unwrap();
    let names: Vec<BlockName> = store.blocks().keys().copied().collect();
    let mut worst_block = (String::new(), 0.0);
    for name in names {
        let block = store.block(&name).unwrap();
        let mut numeric = Vec::new();
        for t in 0..block.tensors().len() {
            let len = block.tensors()[t].1.len();
            let mut g = Vec::with_capacity(len);
            for i in 0..len {
                let mut plus = store.clone();
                plus.block_mut(&name).unwrap().tensors_mut()[t][i] += FD_STEP;
                let mut minus = store.clone();
                minus.block_mut(&name).unwrap().tensors_mut()[t][i] -= FD_STEP;
                g.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
            }
            numeric.push(g);
        }
        let (tensor, e) = worst_tensor(&out.grads.blocks[&name], &numeric);
        if e >= worst_block.1 {
            worst_block = (format!("{name}.{tensor}"), e);
        }
    }
    worst_block
}

pub const BLOCK_CHECKS: [(&str, fn() -> f64); 10] = [
    ("linear", grad_linear),
    ("layer_norm", grad_layer_norm),
    ("attention", grad_attention),
    ("feed_forward", grad_feed_forward),
    ("encoder_layer", grad_encoder_layer),
    ("transformer_stack", grad_transformer_stack),
    ("lpt", grad_lpt),
    ("lt", grad_lt),
    ("ds", grad_ds),
    ("us", grad_us),
];

//! Forward passes of the branch blocks around the shared core.
//!
//! Complex eigenvectors are packed as `N_sb x (2 N_t)` real matrices with
//! axis order (subband, antenna, re/im).

use ndarray::Array2;

use super::Linear;
use crate::C64;

pub use super::quant::lambda_map;

pub fn pack_input(w: &Array2<C64>) -> Array2<f64> {
    let (n_t, n_sb) = w.dim();
    Array2::from_shape_fn((n_sb, 2 * n_t), |(s, j)| {
        let z = w[[j / 2, s]];
        if j % 2 == 0 { z.re } else { z.im }
    })
}

pub fn unpack_output(o: &Array2<f64>) -> Array2<C64> {
    let (n_sb, two_nt) = o.dim();
    Array2::from_shape_fn((two_nt / 2, n_sb), |(a, s)| C64::new(o[[s, 2 * a]], o[[s, 2 * a + 1]]))
}

/// Inverse of [`unpack_output`] for gradients in `d/dRe + j d/dIm` packing.
pub fn pack_grad(g: &Array2<C64>) -> Array2<f64> {
    pack_input(g)
}

/// LPT: per-subband affine embedding, `N_sb x 2N_t -> N_sb x n_emb`.
pub fn lpt_forward(block: &Linear, x: &Array2<f64>) -> Array2<f64> {
    block.forward(x)
}

/// LT: per-subband affine map back to `2 N_t` values followed by `tanh`.
pub fn lt_forward(block: &Linear, x: &Array2<f64>) -> Array2<f64> {
    block.forward(x).mapv(f64::tanh)
}

/// Backward of [`lt_forward`] given its input `x` and output `out`.
pub fn lt_backward(block: &Linear, x: &Array2<f64>, out: &Array2<f64>, d_out: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
    let d_pre = d_out * &out.mapv(|t| 1.0 - t * t);
    block.backward(x, &d_pre, grad)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-major flatten of an `N_sb x n_emb` matrix into a single row.
pub fn flatten(x: &Array2<f64>) -> Array2<f64> {
    let n = x.len();
    x.as_standard_layout().to_owned().into_shape_with_order((1, n)).unwrap()
}

/// DS-k: flatten, affine to `k/2` units, sigmoid.
pub fn ds_forward(block: &Linear, x: &Array2<f64>) -> Vec<f64> {
    block.forward(&flatten(x)).iter().map(|&v| sigmoid(v)).collect()
}

/// Backward of [`ds_forward`] given its input `x` and sigmoid output `z`;
/// returns the gradient in the shape of `x`.
pub fn ds_backward(block: &Linear, x: &Array2<f64>, z: &[f64], dz: &[f64], grad: &mut Linear) -> Array2<f64> {
    let d_pre = Array2::from_shape_fn((1, z.len()), |(_, i)| dz[i] * z[i] * (1.0 - z[i]));
    block.backward(&flatten(x), &d_pre, grad).into_shape_with_order(x.dim()).unwrap()
}

/// US-k: affine from `k/2` values to `N_sb * n_emb`, reshaped to `N_sb x n_emb`.
pub fn us_forward(block: &Linear, y: &[f64], n_sb: usize) -> Array2<f64> {
    let row = Array2::from_shape_vec((1, y.len()), y.to_vec()).unwrap();
    let out = block.forward(&row);
    let n_emb = out.len() / n_sb;
    out.into_shape_with_order((n_sb, n_emb)).unwrap()
}

/// Backward of [`us_forward`]; `d_out` has the `N_sb x n_emb` output shape.
pub fn us_backward(block: &Linear, y: &[f64], d_out: &Array2<f64>, grad: &mut Linear) -> Vec<f64> {
    let row = Array2::from_shape_vec((1, y.len()), y.to_vec()).unwrap();
    block.backward(&row, &flatten(d_out), grad).into_iter().collect()
}

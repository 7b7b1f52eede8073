use ndarray::{Array1, Array2, Axis};

use super::Params;

pub const LN_EPS: f64 = 1e-5;

/// Layer normalization over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { gamma: Array1::zeros(dim), beta: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let dx = dxhat - &mean_dxhat.insert_axis(Axis(1))
            - &cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1));
        dx * &cache.inv_std.view().insert_axis(Axis(1))
    }
}

impl Params for LayerNorm {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        vec![
            ("gamma".into(), self.gamma.as_slice().unwrap(), vec![self.gamma.len()]),
            ("beta".into(), self.beta.as_slice().unwrap(), vec![self.beta.len()]),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.gamma.as_slice_mut().unwrap(), self.beta.as_slice_mut().unwrap()]
    }
}

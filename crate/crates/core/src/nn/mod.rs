//! Trainable building blocks and the differentiable substrate they run on.
//!
//! Every layer keeps its forward intermediates in an explicit cache and
//! exposes a `backward` that accumulates parameter gradients into a
//! same-shaped gradient value.

mod attention;
pub mod blocks;
mod linear;
mod norm;
pub mod quant;
mod transformer;

pub use attention::{softmax_rows, AttentionCache, MultiHeadAttention};
pub use blocks::{
    ds_backward, ds_forward, lambda_map, lpt_forward, lt_backward, lt_forward, pack_input, unpack_output, us_backward,
    us_forward,
};
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache, LN_EPS};
pub use quant::{dequantize_2bit, quantize_2bit, BitCodeword};
pub use transformer::{positional_encoding, EncoderLayer, EncoderLayerCache, FeedForward, TransformerStack};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform view over named parameter tensors.
///
/// `tensors` and `tensors_mut` enumerate the same tensors in the same order.
pub trait Params {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Prepends `prefix.` to every tensor name.
pub fn prefixed<'a>(prefix: &str, tensors: Vec<(String, &'a [f64], Vec<usize>)>) -> Vec<(String, &'a [f64], Vec<usize>)> {
    tensors.into_iter().map(|(n, d, s)| (format!("{prefix}.{n}"), d, s)).collect()
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_head: usize,
    pub n_sb: usize,
    pub n_ri: usize,
    pub n_emb: usize,
    pub t_en: usize,
    pub t_de: usize,
    pub ffn_width: usize,
    pub payloads: Vec<usize>,
    pub antennas: Vec<usize>,
}

impl Hyperparams {
    /// Full-size model: 8 heads, 12 subbands, 128-dim embedding, two encoder
    /// and two decoder layers, payloads 20..=320 step 20, 16 and 32 antennas.
    pub fn full() -> Self {
        Self {
            n_head: 8,
            n_sb: 12,
            n_ri: 4,
            n_emb: 128,
            t_en: 2,
            t_de: 2,
            ffn_width: 512,
            payloads: (1..=16).map(|i| 20 * i).collect(),
            antennas: vec![16, 32],
        }
    }

    /// Reduced model that trains end to end in minutes on a laptop.
    pub fn desk() -> Self {
        Self {
            n_emb: 32,
            t_en: 1,
            t_de: 1,
            ffn_width: 128,
            payloads: vec![20, 60, 120],
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_head == 0 || self.n_emb == 0 || self.n_emb % self.n_head != 0 {
            return bad(format!("n_emb {} not divisible by n_head {}", self.n_emb, self.n_head));
        }
        if self.n_sb == 0 || self.n_ri == 0 || self.ffn_width == 0 {
            return bad("n_sb, n_ri and ffn_width must be positive".into());
        }
        if self.payloads.is_empty() || self.antennas.is_empty() {
            return bad("payload and antenna sets must be non-empty".into());
        }
        for &k in &self.payloads {
            if k == 0 || k % 2 != 0 {
                return bad(format!("payload {k} must be a positive even bit count"));
            }
        }
        for &p in &self.antennas {
            if p == 0 {
                return bad("antenna count must be positive".into());
            }
        }
        let dedup = |v: &[usize]| v.iter().collect::<std::collections::BTreeSet<_>>().len() == v.len();
        if !dedup(&self.payloads) || !dedup(&self.antennas) {
            return bad("duplicate payload or antenna entries".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let p = Hyperparams::full();
        p.validate().unwrap();
        assert_eq!(p.payloads.len(), 16);
        assert!(p.payloads.iter().all(|k| k % 2 == 0));
        Hyperparams::desk().validate().unwrap();
    }

    #[test]
    fn rejects_odd_payload_and_bad_heads() {
        let mut h = Hyperparams::desk();
        h.payloads.push(21);
        assert!(h.validate().is_err());
        let h = Hyperparams { n_head: 5, ..Hyperparams::desk() };
        assert!(h.validate().is_err());
    }
}

//! Closed-form parameter and FLOP counts.
//!
//! FLOP convention: one multiply-add is 2 FLOPs. Affine maps, attention
//! projections, attention scores and the softmax-weighted sum, and the
//! feed-forward network are counted; bias adds, layer norms, residual adds,
//! activations, the softmax itself and the quantizer are not.

use std::collections::BTreeMap;

use super::{BlockName, BranchConfig, ParamStore};
use crate::nn::Hyperparams;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCounts {
    pub per_block: BTreeMap<BlockName, usize>,
    pub encoder: usize,
    pub decoder: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.encoder + self.decoder
    }
}

fn affine(fan_in: usize, fan_out: usize) -> usize {
    fan_in * fan_out + fan_out
}

fn encoder_layer_params(hp: &Hyperparams) -> usize {
    let d = hp.n_emb;
    let norms = 2 * 2 * d;
    // query, value and output projections carry a bias; key does not.
    let attention = 3 * affine(d, d) + d * d;
    let ffn = affine(d, hp.ffn_width) + affine(hp.ffn_width, d);
    norms + attention + ffn
}

/// Analytic per-block parameter counts. The encoder side is every LPT, EN
/// and every DS block; the decoder side every US, DE and LT block.
pub fn count_params(hp: &Hyperparams) -> ParamCounts {
    let flat = hp.n_sb * hp.n_emb;
    let per_block: BTreeMap<BlockName, usize> = ParamStore::block_names(hp)
        .into_iter()
        .map(|name| {
            let n = match name {
                BlockName::Lpt(p) => affine(2 * p, hp.n_emb),
                BlockName::Lt(p) => affine(hp.n_emb, 2 * p),
                BlockName::Ds(k) => affine(flat, k / 2),
                BlockName::Us(k) => affine(k / 2, flat),
                BlockName::En => hp.t_en * encoder_layer_params(hp),
                BlockName::De => hp.t_de * encoder_layer_params(hp),
            };
            (name, n)
        })
        .collect();
    let encoder = per_block.iter().filter(|(n, _)| n.is_encoder()).map(|(_, c)| c).sum();
    let decoder = per_block.iter().filter(|(n, _)| !n.is_encoder()).map(|(_, c)| c).sum();
    ParamCounts { per_block, encoder, decoder }
}

fn matmul(m: usize, n: usize, p: usize) -> u64 {
    2 * (m * n * p) as u64
}

fn core_flops(hp: &Hyperparams, depth: usize) -> u64 {
    let (n, d, f) = (hp.n_sb, hp.n_emb, hp.ffn_width);
    let projections = 4 * matmul(n, d, d);
    let scores = matmul(n, d, n);
    let weighted = matmul(n, n, d);
    let ffn = matmul(n, d, f) + matmul(n, f, d);
    depth as u64 * (projections + scores + weighted + ffn)
}

/// `(encoder, decoder)` FLOPs along the single path routed for `cfg`.
pub fn count_flops(hp: &Hyperparams, cfg: BranchConfig) -> Result<(u64, u64)> {
    hp.validate()?;
    if !hp.antennas.contains(&cfg.antenna_count) || !hp.payloads.contains(&cfg.payload_bits) {
        return Err(crate::Error::NoBranch(cfg.to_string()));
    }
    let (n, d) = (hp.n_sb, hp.n_emb);
    let (p, half_k) = (cfg.antenna_count, cfg.payload_bits / 2);
    let encoder = matmul(n, 2 * p, d) + core_flops(hp, hp.t_en) + matmul(1, n * d, half_k);
    let decoder = matmul(1, half_k, n * d) + core_flops(hp, hp.t_de) + matmul(n, d, 2 * p);
    Ok((encoder, decoder))
}

impl ParamStore {
    /// Parameter counts by enumerating the stored tensors.
    pub fn enumerate_params(&self) -> BTreeMap<BlockName, usize> {
        self.blocks().iter().map(|(n, b)| (*n, b.param_count())).collect()
    }
}

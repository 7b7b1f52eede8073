//! Rank-adaptive payload allocation across MIMO layers.
//!
//! The allocation table is fixed data: six payload configurations, each
//! giving the per-layer bit budget for ranks 1 to 4. Layer 1 is the
//! strongest eigenvector.

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::EigenSample;
use crate::model::{BranchConfig, ParamStore};
use crate::nn::BitCodeword;
use crate::{Error, Result, C64};

pub const N_CONFIGS: usize = 6;
pub const MAX_RANK: usize = 4;

/// `TABLE[config - 1][rank - 1]` lists per-layer payloads in bits.
pub const TABLE: [[&[usize]; MAX_RANK]; N_CONFIGS] = [
    [&[40], &[60, 20], &[40, 20, 20], &[40, 20, 20, 20]],
    [&[60], &[80, 40], &[60, 40, 20], &[60, 20, 20, 40]],
    [&[80], &[100, 60], &[80, 40, 40], &[80, 40, 20, 40]],
    [&[120], &[160, 80], &[100, 80, 60], &[120, 60, 40, 40]],
    [&[160], &[220, 100], &[160, 120, 80], &[160, 100, 60, 60]],
    [&[240], &[320, 140], &[180, 140, 120], &[180, 140, 80, 60]],
];

/// Per-layer payloads for `config` (1..=6) at `rank` (1..=4).
pub fn allocate(config: usize, rank: usize) -> Result<Vec<usize>> {
    if !(1..=N_CONFIGS).contains(&config) {
        return Err(Error::InvalidConfig(format!("allocation config {config} outside 1..={N_CONFIGS}")));
    }
    if !(1..=MAX_RANK).contains(&rank) {
        return Err(Error::InvalidConfig(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    Ok(TABLE[config - 1][rank - 1].to_vec())
}

/// Concatenated codewords of all layers of one report.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCodeword {
    pub bits: Vec<u8>,
    /// `rank + 1` offsets into `bits`; layer `i` is `bits[b[i]..b[i+1]]`.
    pub boundaries: Vec<usize>,
}

impl RankCodeword {
    pub fn total_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn segment(&self, layer: usize) -> &[u8] {
        &self.bits[self.boundaries[layer]..self.boundaries[layer + 1]]
    }
}

/// Encodes each layer through the branch allocated to it.
pub fn compress_rank(layers: &[&EigenSample], config: usize, model: &ParamStore) -> Result<RankCodeword> {
    let first = layers.first().ok_or_else(|| Error::Empty("no layers to compress".into()))?;
    let n_t = first.antenna_count();
    if let Some(bad) = layers.iter().find(|s| s.antenna_count() != n_t) {
        return Err(Error::Shape(format!(
            "layers mix antenna counts {n_t} and {}",
            bad.antenna_count()
        )));
    }
    let payloads = allocate(config, layers.len())?;
    let codes: Vec<BitCodeword> = layers
        .par_iter()
        .zip(payloads.par_iter())
        .map(|(s, &k)| model.encode(s, BranchConfig::new(n_t, k)))
        .collect::<Result<_>>()?;
    let mut bits = Vec::with_capacity(payloads.iter().sum());
    let mut boundaries = vec![0];
    for c in codes {
        bits.extend_from_slice(&c.bits);
        boundaries.push(bits.len());
    }
    Ok(RankCodeword { bits, boundaries })
}

/// Splits at the boundaries and decodes every layer on its own.
pub fn decompress_rank(
    code: &RankCodeword,
    n_t: usize,
    config: usize,
    model: &ParamStore,
) -> Result<Vec<Array2<C64>>> {
    let rank = code.boundaries.len().saturating_sub(1);
    let payloads = allocate(config, rank)?;
    if code.boundaries.last() != Some(&code.bits.len()) {
        return Err(Error::Shape("last boundary does not match bitstream length".into()));
    }
    (0..rank)
        .into_par_iter()
        .map(|i| {
            let seg = code.segment(i);
            if seg.len() != payloads[i] {
                return Err(Error::Shape(format!(
                    "layer {} segment has {} bits, allocation expects {}",
                    i + 1,
                    seg.len(),
                    payloads[i]
                )));
            }
            model.decode(&BitCodeword { bits: seg.to_vec() }, BranchConfig::new(n_t, payloads[i]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        assert_eq!(allocate(4, 2).unwrap(), vec![160, 80]);
        assert_eq!(allocate(1, 1).unwrap(), vec![40]);
        assert_eq!(allocate(6, 4).unwrap(), vec![180, 140, 80, 60]);
    }

    #[test]
    fn every_entry_is_a_branch_and_has_rank_length() {
        let k: Vec<usize> = (20..=320).step_by(20).collect();
        for c in 1..=N_CONFIGS {
            for r in 1..=MAX_RANK {
                let row = allocate(c, r).unwrap();
                assert_eq!(row.len(), r);
                assert!(row.iter().all(|p| k.contains(p)));
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        for (c, r) in [(0, 1), (7, 1), (1, 0), (1, 5)] {
            assert!(matches!(allocate(c, r), Err(Error::InvalidConfig(_))));
        }
    }
}

//! The multi-branch autoencoder: block registry, routing, encode/decode.
//!
//! Exactly one path `LPT-p -> EN -> DS-k -> US-k -> DE -> LT-p` is active for
//! a configuration `(p, k)`. `EN` and `DE` are stored once and shared by
//! every path.

mod checkpoint;
mod counters;
mod forward;

pub use checkpoint::{load_checkpoint, partial_load, save_checkpoint};
pub use counters::{count_flops, count_params, ParamCounts};
pub use forward::{BatchOutput, Grads};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::EigenSample;
use crate::nn::{self, blocks, quant, BitCodeword, Hyperparams, Linear, Params, TransformerStack};
use crate::{Error, Result, C64};

/// Canonical block names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockName {
    Lpt(usize),
    En,
    Ds(usize),
    Us(usize),
    De,
    Lt(usize),
}

impl BlockName {
    /// Encoder-side blocks: LPT, EN, DS.
    pub fn is_encoder(&self) -> bool {
        matches!(self, BlockName::Lpt(_) | BlockName::En | BlockName::Ds(_))
    }
}

impl fmt::Display for BlockName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockName::Lpt(p) => write!(f, "LPT-{p}"),
            BlockName::En => write!(f, "EN"),
            BlockName::Ds(k) => write!(f, "DS-{k}"),
            BlockName::Us(k) => write!(f, "US-{k}"),
            BlockName::De => write!(f, "DE"),
            BlockName::Lt(p) => write!(f, "LT-{p}"),
        }
    }
}

impl FromStr for BlockName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unknown block name {s:?}"));
        match s {
            "EN" => return Ok(BlockName::En),
            "DE" => return Ok(BlockName::De),
            _ => {}
        }
        let (kind, num) = s.split_once('-').ok_or_else(bad)?;
        let n: usize = num.parse().map_err(|_| bad())?;
        match kind {
            "LPT" => Ok(BlockName::Lpt(n)),
            "DS" => Ok(BlockName::Ds(n)),
            "US" => Ok(BlockName::Us(n)),
            "LT" => Ok(BlockName::Lt(n)),
            _ => Err(bad()),
        }
    }
}

/// An `(antenna count, payload bits)` pair selecting one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchConfig {
    pub antenna_count: usize,
    pub payload_bits: usize,
}

impl BranchConfig {
    pub fn new(antenna_count: usize, payload_bits: usize) -> Self {
        Self { antenna_count, payload_bits }
    }
}

impl fmt::Display for BranchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(N_t={}, k={})", self.antenna_count, self.payload_bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Linear(Linear),
    Core(TransformerStack),
}

impl Block {
    pub fn zeros_like(&self) -> Block {
        match self {
            Block::Linear(l) => Block::Linear(Linear::zeros(l.fan_in(), l.fan_out())),
            Block::Core(c) => {
                let mut z = c.clone();
                for t in z.tensors_mut() {
                    t.fill(0.0);
                }
                Block::Core(z)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, d, _)| d.len()).sum()
    }

    /// Adds `other` element-wise; both must have the same structure.
    pub fn add_assign(&mut self, other: &Block) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, d, _)| d.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
}

impl Params for Block {
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        match self {
            Block::Linear(l) => l.tensors(),
            Block::Core(c) => c.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Block::Linear(l) => l.tensors_mut(),
            Block::Core(c) => c.tensors_mut(),
        }
    }
}

/// Block-name-keyed parameters plus the set of frozen blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub hp: Hyperparams,
    blocks: BTreeMap<BlockName, Block>,
    frozen: BTreeSet<BlockName>,
    stages: BTreeSet<u8>,
}

fn stream_id(name: &BlockName) -> u64 {
    // FNV-1a of the canonical name, so a block's init does not depend on
    // which other blocks exist.
    name.to_string()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl ParamStore {
    /// Canonical block names for a hyperparameter set.
    pub fn block_names(hp: &Hyperparams) -> Vec<BlockName> {
        let mut names = vec![BlockName::En, BlockName::De];
        for &p in &hp.antennas {
            names.push(BlockName::Lpt(p));
            names.push(BlockName::Lt(p));
        }
        for &k in &hp.payloads {
            names.push(BlockName::Ds(k));
            names.push(BlockName::Us(k));
        }
        names.sort();
        names
    }

    /// Randomly initialized model; each block draws from its own stream.
    pub fn new(hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let blocks = Self::block_names(&hp)
            .into_iter()
            .map(|name| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream_id(&name));
                let block = Self::init_block(&hp, name, &mut rng);
                (name, block)
            })
            .collect();
        Ok(Self { hp, blocks, frozen: BTreeSet::new(), stages: BTreeSet::new() })
    }

    /// Model with every parameter zero (layer-norm gains included).
    pub fn zeros(hp: Hyperparams) -> Result<Self> {
        let mut s = Self::new(hp, 0)?;
        for b in s.blocks.values_mut() {
            *b = b.zeros_like();
        }
        Ok(s)
    }

    fn init_block(hp: &Hyperparams, name: BlockName, rng: &mut ChaCha8Rng) -> Block {
        let flat = hp.n_sb * hp.n_emb;
        match name {
            BlockName::Lpt(p) => Block::Linear(Linear::init(2 * p, hp.n_emb, rng)),
            BlockName::Lt(p) => Block::Linear(Linear::init(hp.n_emb, 2 * p, rng)),
            BlockName::Ds(k) => Block::Linear(Linear::init(flat, k / 2, rng)),
            BlockName::Us(k) => Block::Linear(Linear::init(k / 2, flat, rng)),
            BlockName::En => Block::Core(TransformerStack::init(hp.t_en, hp.n_emb, hp.n_head, hp.ffn_width, rng)),
            BlockName::De => Block::Core(TransformerStack::init(hp.t_de, hp.n_emb, hp.n_head, hp.ffn_width, rng)),
        }
    }

    pub fn blocks(&self) -> &BTreeMap<BlockName, Block> {
        &self.blocks
    }

    pub fn block(&self, name: &BlockName) -> Option<&Block> {
        self.blocks.get(name)
    }

    pub fn block_mut(&mut self, name: &BlockName) -> Option<&mut Block> {
        self.blocks.get_mut(name)
    }

    pub fn linear(&self, name: &BlockName) -> Result<&Linear> {
        match self.blocks.get(name) {
            Some(Block::Linear(l)) => Ok(l),
            Some(Block::Core(_)) => Err(Error::Shape(format!("{name} is not an affine block"))),
            None => Err(Error::NoBranch(name.to_string())),
        }
    }

    pub fn core(&self, name: &BlockName) -> Result<&TransformerStack> {
        match self.blocks.get(name) {
            Some(Block::Core(c)) => Ok(c),
            Some(Block::Linear(_)) => Err(Error::Shape(format!("{name} is not a transformer block"))),
            None => Err(Error::NoBranch(name.to_string())),
        }
    }

    /// Training stages this model has completed.
    pub fn completed_stages(&self) -> &BTreeSet<u8> {
        &self.stages
    }

    pub fn mark_stage(&mut self, stage: u8) {
        self.stages.insert(stage);
    }

    pub fn frozen(&self) -> &BTreeSet<BlockName> {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &BlockName) -> bool {
        self.frozen.contains(name)
    }

    pub fn freeze<I: IntoIterator<Item = BlockName>>(&mut self, names: I) -> Result<()> {
        for n in names {
            if !self.blocks.contains_key(&n) {
                return Err(Error::NoBranch(n.to_string()));
            }
            self.frozen.insert(n);
        }
        Ok(())
    }

    pub fn set_frozen(&mut self, frozen: BTreeSet<BlockName>) -> Result<()> {
        self.frozen.clear();
        self.freeze(frozen)
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    /// Ordered block names of the single path serving `cfg`.
    pub fn route(&self, cfg: BranchConfig) -> Result<Vec<BlockName>> {
        self.check_config(cfg)?;
        Ok(Self::route_names(cfg).to_vec())
    }

    /// Path block names for `cfg` without checking that they exist.
    pub fn route_names(cfg: BranchConfig) -> [BlockName; 6] {
        [
            BlockName::Lpt(cfg.antenna_count),
            BlockName::En,
            BlockName::Ds(cfg.payload_bits),
            BlockName::Us(cfg.payload_bits),
            BlockName::De,
            BlockName::Lt(cfg.antenna_count),
        ]
    }

    /// References to the blocks on the path of `cfg`, in route order.
    pub fn branch_blocks(&self, cfg: BranchConfig) -> Result<Vec<&Block>> {
        self.route(cfg)?
            .iter()
            .map(|n| self.blocks.get(n).ok_or_else(|| Error::NoBranch(n.to_string())))
            .collect()
    }

    pub fn check_config(&self, cfg: BranchConfig) -> Result<()> {
        if !self.hp.antennas.contains(&cfg.antenna_count) || !self.hp.payloads.contains(&cfg.payload_bits) {
            return Err(Error::NoBranch(format!(
                "{cfg}: supported antennas {:?}, payloads {:?}",
                self.hp.antennas, self.hp.payloads
            )));
        }
        Ok(())
    }

    pub fn configs(&self) -> Vec<BranchConfig> {
        self.hp
            .antennas
            .iter()
            .flat_map(|&p| self.hp.payloads.iter().map(move |&k| BranchConfig::new(p, k)))
            .collect()
    }

    fn check_sample(&self, w: &Array2<C64>, p: usize) -> Result<()> {
        if w.dim() != (p, self.hp.n_sb) {
            return Err(Error::Shape(format!(
                "eigenvector matrix is {:?}, branch expects ({p}, {})",
                w.dim(),
                self.hp.n_sb
            )));
        }
        Ok(())
    }

    pub fn lpt_forward(&self, x: &Array2<f64>, p: usize) -> Result<Array2<f64>> {
        let block = self.linear(&BlockName::Lpt(p))?;
        if x.dim() != (self.hp.n_sb, 2 * p) {
            return Err(Error::Shape(format!("LPT-{p} input {:?}", x.dim())));
        }
        Ok(blocks::lpt_forward(block, x))
    }

    pub fn lt_forward(&self, x: &Array2<f64>, p: usize) -> Result<Array2<f64>> {
        let block = self.linear(&BlockName::Lt(p))?;
        Ok(blocks::lt_forward(block, x))
    }

    pub fn ds_forward(&self, x: &Array2<f64>, k: usize) -> Result<Vec<f64>> {
        Ok(blocks::ds_forward(self.linear(&BlockName::Ds(k))?, x))
    }

    pub fn us_forward(&self, y: &[f64], k: usize) -> Result<Array2<f64>> {
        let block = self.linear(&BlockName::Us(k))?;
        if y.len() != k / 2 {
            return Err(Error::Shape(format!("US-{k} expects {} inputs, got {}", k / 2, y.len())));
        }
        Ok(blocks::us_forward(block, y, self.hp.n_sb))
    }

    /// Encoder: eigenvectors to a `k`-bit codeword. The layer index is not
    /// an input.
    pub fn encode_matrix(&self, w: &Array2<C64>, cfg: BranchConfig) -> Result<BitCodeword> {
        self.check_config(cfg)?;
        self.check_sample(w, cfg.antenna_count)?;
        let h = self.lpt_forward(&blocks::pack_input(w), cfg.antenna_count)?;
        let (e, _) = self.core(&BlockName::En)?.forward(&h);
        let z = self.ds_forward(&e, cfg.payload_bits)?;
        Ok(quant::quantize_2bit(&z))
    }

    pub fn encode(&self, sample: &EigenSample, cfg: BranchConfig) -> Result<BitCodeword> {
        self.encode_matrix(&sample.w, cfg)
    }

    /// Decoder: codeword to an `N_t x N_sb` complex matrix.
    pub fn decode(&self, z: &BitCodeword, cfg: BranchConfig) -> Result<Array2<C64>> {
        self.check_config(cfg)?;
        if z.len() != cfg.payload_bits {
            return Err(Error::Shape(format!(
                "codeword has {} bits, branch expects {}",
                z.len(),
                cfg.payload_bits
            )));
        }
        let q = quant::dequantize_2bit(z)?;
        let u = self.us_forward(&nn::lambda_map(&q), cfg.payload_bits)?;
        let (d, _) = self.core(&BlockName::De)?.forward(&u);
        let o = self.lt_forward(&d, cfg.antenna_count)?;
        Ok(blocks::unpack_output(&o))
    }

    pub fn reconstruct(&self, w: &Array2<C64>, cfg: BranchConfig) -> Result<Array2<C64>> {
        self.decode(&self.encode_matrix(w, cfg)?, cfg)
    }

    /// Reconstructs every sample through `cfg`, in parallel, order preserved.
    pub fn reconstruct_batch(&self, samples: &[&EigenSample], cfg: BranchConfig) -> Result<Vec<Array2<C64>>> {
        samples.par_iter().map(|s| self.reconstruct(&s.w, cfg)).collect()
    }

    /// SHA-256 over a block's tensor names, shapes and values.
    pub fn block_hash(&self, name: &BlockName) -> Result<String> {
        let block = self.blocks.get(name).ok_or_else(|| Error::NoBranch(name.to_string()))?;
        let mut h = Sha256::new();
        for (tname, data, shape) in block.tensors() {
            h.update(tname.as_bytes());
            for d in shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn hashes(&self) -> BTreeMap<BlockName, String> {
        self.blocks.keys().map(|n| (*n, self.block_hash(n).unwrap())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            n_head: 2,
            n_sb: 4,
            n_ri: 2,
            n_emb: 8,
            t_en: 1,
            t_de: 1,
            ffn_width: 16,
            payloads: vec![20, 40],
            antennas: vec![16, 32],
        }
    }

    fn random_w(n_t: usize, n_sb: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_simple_fn((n_t, n_sb), || {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let m = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
        w / C64::new(m, 0.0)
    }

    #[test]
    fn block_name_round_trip() {
        for name in ParamStore::block_names(&Hyperparams::full()) {
            assert_eq!(name.to_string().parse::<BlockName>().unwrap(), name);
        }
        assert!("XX-3".parse::<BlockName>().is_err());
        assert!("DS-".parse::<BlockName>().is_err());
    }

    #[test]
    fn canonical_block_set() {
        let names = ParamStore::block_names(&Hyperparams::full());
        assert_eq!(names.len(), 2 + 2 * 2 + 2 * 16);
        let store = ParamStore::new(tiny_hp(), 1).unwrap();
        let got: Vec<_> = store.blocks().keys().copied().collect();
        assert_eq!(got, ParamStore::block_names(&tiny_hp()));
    }

    #[test]
    fn routing() {
        let store = ParamStore::new(Hyperparams::full(), 0).unwrap();
        let r: Vec<String> = store.route(BranchConfig::new(16, 120)).unwrap().iter().map(|b| b.to_string()).collect();
        assert_eq!(r, ["LPT-16", "EN", "DS-120", "US-120", "DE", "LT-16"]);
        let r: Vec<String> = store.route(BranchConfig::new(32, 20)).unwrap().iter().map(|b| b.to_string()).collect();
        assert_eq!(r, ["LPT-32", "EN", "DS-20", "US-20", "DE", "LT-32"]);
        assert!(matches!(store.route(BranchConfig::new(16, 21)), Err(Error::NoBranch(_))));
        assert!(matches!(store.route(BranchConfig::new(8, 20)), Err(Error::NoBranch(_))));
    }

    #[test]
    fn core_blocks_are_shared_storage() {
        let store = ParamStore::new(tiny_hp(), 3).unwrap();
        let a = store.branch_blocks(BranchConfig::new(16, 20)).unwrap();
        let b = store.branch_blocks(BranchConfig::new(32, 40)).unwrap();
        assert!(std::ptr::eq(a[1], b[1]));
        assert!(std::ptr::eq(a[4], b[4]));
        assert!(!std::ptr::eq(a[2], b[2]));
    }

    #[test]
    fn encode_decode_shapes_and_bounds() {
        let store = ParamStore::new(tiny_hp(), 5).unwrap();
        for cfg in store.configs() {
            let w = random_w(cfg.antenna_count, 4, 9);
            let z = store.encode_matrix(&w, cfg).unwrap();
            assert_eq!(z.len(), cfg.payload_bits);
            let w_hat = store.decode(&z, cfg).unwrap();
            assert_eq!(w_hat.dim(), (cfg.antenna_count, 4));
            assert!(w_hat.iter().all(|z| z.re.abs() < 1.0 && z.im.abs() < 1.0));
            assert_eq!(store.encode_matrix(&w, cfg).unwrap(), z);
        }
    }

    #[test]
    fn layer_index_is_ignored() {
        let store = ParamStore::new(tiny_hp(), 5).unwrap();
        let w = random_w(16, 4, 2);
        let a = EigenSample { w: w.clone(), layer: 1, drop_id: 0, ue_id: 0 };
        let b = EigenSample { w, layer: 3, drop_id: 4, ue_id: 7 };
        let cfg = BranchConfig::new(16, 40);
        assert_eq!(store.encode(&a, cfg).unwrap(), store.encode(&b, cfg).unwrap());
    }

    #[test]
    fn shape_and_length_errors() {
        let store = ParamStore::new(tiny_hp(), 5).unwrap();
        let cfg = BranchConfig::new(16, 20);
        assert!(matches!(store.encode_matrix(&random_w(32, 4, 1), cfg), Err(Error::Shape(_))));
        let z = BitCodeword { bits: vec![0; 18] };
        assert!(matches!(store.decode(&z, cfg), Err(Error::Shape(_))));
        assert!(matches!(store.lt_forward(&Array2::zeros((4, 8)), 8), Err(Error::NoBranch(_))));
        assert!(matches!(store.ds_forward(&Array2::zeros((4, 8)), 60), Err(Error::NoBranch(_))));
        assert!(matches!(store.us_forward(&[0.0; 10], 60), Err(Error::NoBranch(_))));
        assert!(matches!(store.lpt_forward(&Array2::zeros((4, 16)), 8), Err(Error::NoBranch(_))));
    }

    #[test]
    fn inactive_branch_edit_does_not_leak() {
        let mut store = ParamStore::new(tiny_hp(), 8).unwrap();
        let w = random_w(16, 4, 3);
        let cfg = BranchConfig::new(16, 40);
        let before = store.reconstruct(&w, cfg).unwrap();
        let code_before = store.encode_matrix(&w, cfg).unwrap();
        for name in [BlockName::Ds(20), BlockName::Us(20), BlockName::Lpt(32), BlockName::Lt(32)] {
            for t in store.block_mut(&name).unwrap().tensors_mut() {
                t.iter_mut().for_each(|v| *v += 0.5);
            }
        }
        assert_eq!(store.encode_matrix(&w, cfg).unwrap(), code_before);
        assert_eq!(store.reconstruct(&w, cfg).unwrap(), before);
    }

    #[test]
    fn init_is_seeded_per_block() {
        let a = ParamStore::new(tiny_hp(), 1).unwrap();
        let b = ParamStore::new(tiny_hp(), 1).unwrap();
        assert_eq!(a, b);
        let mut hp = tiny_hp();
        hp.payloads.push(60);
        let c = ParamStore::new(hp, 1).unwrap();
        assert_eq!(a.block(&BlockName::En), c.block(&BlockName::En));
        assert_eq!(a.block(&BlockName::Ds(20)), c.block(&BlockName::Ds(20)));
    }

    #[test]
    fn freeze_requires_known_blocks() {
        let mut store = ParamStore::new(tiny_hp(), 1).unwrap();
        store.freeze([BlockName::En]).unwrap();
        assert!(store.is_frozen(&BlockName::En));
        assert!(store.freeze([BlockName::Ds(60)]).is_err());
    }
}

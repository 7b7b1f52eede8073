//! Three-stage training.
//!
//! 1. Base antenna count only (32 by default): trains `LPT-32`, `EN`, every
//!    `DS-k`/`US-k`, `DE`, `LT-32`.
//! 2. For each other antenna count `p`: everything frozen except `LPT-p` and
//!    `LT-p`.
//! 3. Everything unfrozen, round-robin over antenna counts with cosine
//!    annealing.
//!
//! Every batch goes through all configured payload branches and the loss is
//! the negative SGCS averaged over payloads.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EigenSample};
use crate::model::{BlockName, Grads, ParamStore};
use crate::nn::Params;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    pub warmup_steps: usize,
    /// Scale of the warmup/inverse-sqrt schedule; `None` means `n_emb^-1/2`.
    pub lr_scale: Option<f64>,
    pub cosine_lr_min: f64,
    pub cosine_lr_max: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Antenna count trained in stage 1.
    pub base_antenna: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs_stage1: 200,
            epochs_stage2: 100,
            epochs_stage3: 30,
            warmup_steps: 4000,
            lr_scale: None,
            cosine_lr_min: 1e-5,
            cosine_lr_max: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            base_antenna: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule matching [`crate::nn::Hyperparams::desk`].
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            epochs_stage1: 20,
            epochs_stage2: 5,
            epochs_stage3: 3,
            warmup_steps: 300,
            lr_scale: Some(0.04),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.warmup_steps == 0 {
            return Err(Error::InvalidConfig("warmup_steps must be positive".into()));
        }
        if !(self.cosine_lr_min > 0.0 && self.cosine_lr_min <= self.cosine_lr_max) {
            return Err(Error::InvalidConfig("need 0 < cosine_lr_min <= cosine_lr_max".into()));
        }
        Ok(())
    }

    pub fn epochs(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => self.epochs_stage1,
            Stage::Two => self.epochs_stage2,
            Stage::Three => self.epochs_stage3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub fn index(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }
}

/// `scale * min(step^-1/2, step * warmup^-3/2)`, peaking at `step == warmup`.
pub fn warmup_inv_sqrt(step: usize, warmup: usize, scale: f64) -> f64 {
    let s = step.max(1) as f64;
    scale * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
}

/// Cosine annealing from `max` at `epoch = 0` to `min` at `epoch = total`.
pub fn cosine_annealing(epoch: f64, total: f64, min: f64, max: f64) -> f64 {
    let t = if total > 0.0 { (epoch / total).clamp(0.0, 1.0) } else { 1.0 };
    min + 0.5 * (max - min) * (1.0 + (PI * t).cos())
}

/// Learning rate of a stage. Stages 1 and 2 use `step` (1-based, counted
/// within the stage); stage 3 uses the fractional `epoch`.
pub fn lr_schedule(cfg: &TrainConfig, n_emb: usize, stage: Stage, step: usize, epoch: f64) -> f64 {
    match stage {
        Stage::One | Stage::Two => {
            let scale = cfg.lr_scale.unwrap_or((n_emb as f64).powf(-0.5));
            warmup_inv_sqrt(step, cfg.warmup_steps, scale)
        }
        Stage::Three => cosine_annealing(
            epoch,
            cfg.epochs_stage3 as f64,
            cfg.cosine_lr_min,
            cfg.cosine_lr_max,
        ),
    }
}

/// Adam with per-block moment buffers and per-block step counters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<BlockName, (u64, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to every non-frozen block present in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        for (name, g) in &grads.blocks {
            if store.is_frozen(name) {
                continue;
            }
            let Some(block) = store.block_mut(name) else { continue };
            let gt: Vec<&[f64]> = g.tensors().into_iter().map(|(_, d, _)| d).collect();
            let params = block.tensors_mut();
            let (t, m, v) = self.state.entry(*name).or_insert_with(|| {
                let zeros: Vec<Vec<f64>> = gt.iter().map(|d| vec![0.0; d.len()]).collect();
                (0, zeros.clone(), zeros)
            });
            *t += 1;
            let bc1 = 1.0 - self.beta1.powi(*t as i32);
            let bc2 = 1.0 - self.beta2.powi(*t as i32);
            for (((p, g), m), v) in params.into_iter().zip(gt).zip(m.iter_mut()).zip(v.iter_mut()) {
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }
}

/// One optimizer update from a single-antenna batch through every payload
/// branch. Returns the batch loss.
pub fn train_step(store: &mut ParamStore, adam: &mut Adam, batch: &[&EigenSample], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let payloads = store.hp.payloads.clone();
    let out = store.loss_and_grad(batch, &payloads)?;
    adam.step(store, &out.grads, lr);
    Ok(out.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub stage: u8,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Antenna count of every batch, in the order they were processed.
    pub batch_antennas: Vec<usize>,
    pub mean_sgcs: BTreeMap<usize, f64>,
    pub last_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StageReport {
    pub epochs: Vec<EpochStats>,
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
}

impl StageReport {
    fn extend(&mut self, other: StageReport) {
        self.epochs.extend(other.epochs);
        self.losses.extend(other.losses);
    }
}

/// Fixed round-robin order: the base antenna count first, then the rest in
/// descending order.
pub fn antenna_order(antennas: impl IntoIterator<Item = usize>, base: usize) -> Vec<usize> {
    let set: BTreeSet<usize> = antennas.into_iter().collect();
    let mut order: Vec<usize> = set.iter().rev().copied().filter(|&p| p != base).collect();
    if set.contains(&base) {
        order.insert(0, base);
    }
    order
}

struct Schedule<'a> {
    cfg: &'a TrainConfig,
    stage: Stage,
    epochs: usize,
    step: usize,
}

/// One epoch of round-robin training: each loop iteration draws one batch
/// from every dataset in `order`. The epoch lasts as many iterations as the
/// largest dataset has batches; smaller datasets wrap around.
fn round_robin_epoch_inner(
    datasets: &BTreeMap<usize, &[EigenSample]>,
    order: &[usize],
    store: &mut ParamStore,
    adam: &mut Adam,
    sched: &mut Schedule,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(EpochStats, Vec<f64>)> {
    let bs = sched.cfg.batch_size;
    let mut perms: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &p in order {
        let ds = datasets.get(&p).ok_or_else(|| Error::Empty(format!("no dataset for N_t = {p}")))?;
        if ds.is_empty() {
            return Err(Error::Empty(format!("dataset for N_t = {p} is empty")));
        }
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(rng);
        perms.insert(p, idx);
    }
    let iterations = order.iter().map(|p| datasets[p].len().div_ceil(bs)).max().unwrap_or(0);
    let payloads = store.hp.payloads.clone();
    let mut losses = Vec::new();
    let mut antennas = Vec::new();
    let mut sgcs_sum: BTreeMap<usize, f64> = payloads.iter().map(|&k| (k, 0.0)).collect();
    let mut lr = 0.0;
    for it in 0..iterations {
        for &p in order {
            let ds = datasets[&p];
            let perm = &perms[&p];
            let n_batches = ds.len().div_ceil(bs);
            let b = it % n_batches;
            let batch: Vec<&EigenSample> =
                perm[b * bs..((b + 1) * bs).min(ds.len())].iter().map(|&i| &ds[i]).collect();
            sched.step += 1;
            let frac = epoch as f64 + it as f64 / iterations as f64;
            lr = lr_schedule(sched.cfg, store.hp.n_emb, sched.stage, sched.step, frac);
            let out = store.loss_and_grad(&batch, &payloads)?;
            adam.step(store, &out.grads, lr);
            losses.push(out.loss);
            antennas.push(p);
            for (k, v) in out.sgcs {
                *sgcs_sum.get_mut(&k).unwrap() += v;
            }
        }
    }
    let n = losses.len().max(1) as f64;
    let stats = EpochStats {
        stage: sched.stage.index(),
        epoch,
        mean_loss: losses.iter().sum::<f64>() / n,
        batch_antennas: antennas,
        mean_sgcs: sgcs_sum.into_iter().map(|(k, v)| (k, v / n)).collect(),
        last_lr: lr,
    };
    Ok((stats, losses))
}

fn run_epochs(
    store: &mut ParamStore,
    datasets: &BTreeMap<usize, &[EigenSample]>,
    cfg: &TrainConfig,
    stage: Stage,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<StageReport> {
    cfg.validate()?;
    let order = antenna_order(datasets.keys().copied(), cfg.base_antenna);
    let mut adam = Adam::new(cfg);
    let mut sched = Schedule { cfg, stage, epochs, step: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stage.index() as u64);
    let mut report = StageReport::default();
    for epoch in 0..sched.epochs {
        let (stats, losses) = round_robin_epoch_inner(datasets, &order, store, &mut adam, &mut sched, epoch, &mut rng)?;
        on_epoch(&stats);
        report.epochs.push(stats);
        report.losses.extend(losses);
    }
    Ok(report)
}

/// One round-robin epoch over every antenna count in `datasets` with the
/// given stage's learning-rate schedule.
pub fn round_robin_epoch(
    datasets: &BTreeMap<usize, &[EigenSample]>,
    store: &mut ParamStore,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<EpochStats> {
    let needed: Vec<usize> = store.hp.antennas.clone();
    for p in datasets.keys() {
        if !needed.contains(p) {
            return Err(Error::NoBranch(format!("no LPT/LT pair for N_t = {p}")));
        }
    }
    let mut r = run_epochs(store, datasets, cfg, stage, 1, |_| {})?;
    Ok(r.epochs.remove(0))
}

fn check_dataset(store: &ParamStore, ds: &Dataset, p: usize) -> Result<()> {
    if ds.n_t != p {
        return Err(Error::Shape(format!("dataset has N_t = {}, expected {p}", ds.n_t)));
    }
    if ds.n_sb != store.hp.n_sb {
        return Err(Error::Shape(format!("dataset has N_sb = {}, model {}", ds.n_sb, store.hp.n_sb)));
    }
    if ds.is_empty() {
        return Err(Error::Empty(format!("dataset for N_t = {p} is empty")));
    }
    Ok(())
}

/// Stage 1: base antenna count only, nothing frozen.
pub fn run_stage1(
    store: &mut ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<StageReport> {
    let p = cfg.base_antenna;
    store.check_config(crate::model::BranchConfig::new(p, store.hp.payloads[0]))?;
    check_dataset(store, data, p)?;
    store.unfreeze_all();
    let datasets = BTreeMap::from([(p, data.samples.as_slice())]);
    let report = run_epochs(store, &datasets, cfg, Stage::One, cfg.epochs_stage1, on_epoch)?;
    store.mark_stage(1);
    Ok(report)
}

/// Blocks frozen during stage 2 for antenna count `p`: everything except
/// `LPT-p` and `LT-p`.
pub fn stage2_frozen(store: &ParamStore, p: usize) -> BTreeSet<BlockName> {
    store
        .blocks()
        .keys()
        .copied()
        .filter(|n| *n != BlockName::Lpt(p) && *n != BlockName::Lt(p))
        .collect()
}

/// Stage 2: adapter pair for one non-base antenna count, all else frozen.
pub fn run_stage2(
    store: &mut ParamStore,
    data: &Dataset,
    p: usize,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<StageReport> {
    if !store.completed_stages().contains(&1) {
        return Err(Error::InvalidConfig("stage 2 requires stage-1 weights".into()));
    }
    if p == cfg.base_antenna {
        return Err(Error::InvalidConfig(format!("stage 2 trains a non-base antenna count, got {p}")));
    }
    store.check_config(crate::model::BranchConfig::new(p, store.hp.payloads[0]))?;
    check_dataset(store, data, p)?;
    let frozen = stage2_frozen(store, p);
    store.set_frozen(frozen)?;
    let datasets = BTreeMap::from([(p, data.samples.as_slice())]);
    let report = run_epochs(store, &datasets, cfg, Stage::Two, cfg.epochs_stage2, on_epoch);
    store.unfreeze_all();
    let report = report?;
    store.mark_stage(2);
    Ok(report)
}

/// Stage 3: unfreeze everything and fine-tune round-robin over all antenna
/// counts.
pub fn run_stage3(
    store: &mut ParamStore,
    data: &BTreeMap<usize, Dataset>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<StageReport> {
    let missing: Vec<String> = store
        .hp
        .antennas
        .iter()
        .filter(|p| !data.contains_key(p))
        .map(|p| format!("N_t = {p}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Empty(format!("missing datasets for {}", missing.join(", "))));
    }
    for (&p, ds) in data {
        check_dataset(store, ds, p)?;
    }
    store.unfreeze_all();
    let datasets: BTreeMap<usize, &[EigenSample]> = data.iter().map(|(&p, d)| (p, d.samples.as_slice())).collect();
    let report = run_epochs(store, &datasets, cfg, Stage::Three, cfg.epochs_stage3, on_epoch)?;
    store.mark_stage(3);
    Ok(report)
}

/// Stages 1, 2 (once per non-base antenna count) and 3 in order.
pub fn run_all(
    store: &mut ParamStore,
    data: &BTreeMap<usize, Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<StageReport> {
    let base = data
        .get(&cfg.base_antenna)
        .ok_or_else(|| Error::Empty(format!("missing dataset for base N_t = {}", cfg.base_antenna)))?;
    let mut report = run_stage1(store, base, cfg, &mut on_epoch)?;
    for p in antenna_order(store.hp.antennas.clone(), cfg.base_antenna).into_iter().skip(1) {
        let ds = data.get(&p).ok_or_else(|| Error::Empty(format!("missing dataset for N_t = {p}")))?;
        report.extend(run_stage2(store, ds, p, cfg, &mut on_epoch)?);
    }
    report.extend(run_stage3(store, data, cfg, &mut on_epoch)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert!((cosine_annealing(0.0, 30.0, 1e-5, 1e-4) - 1e-4).abs() < 1e-18);
        assert!((cosine_annealing(30.0, 30.0, 1e-5, 1e-4) - 1e-5).abs() < 1e-18);
        assert!((cosine_annealing(15.0, 30.0, 1e-5, 1e-4) - 5.5e-5).abs() < 1e-18);
        let cfg = TrainConfig::default();
        assert!((lr_schedule(&cfg, 128, Stage::Three, 1, 0.0) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(&cfg, 128, Stage::Three, 1, 30.0) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn warmup_peaks_at_warmup_step() {
        let w = 4000;
        let peak = warmup_inv_sqrt(w, w, 1.0);
        assert!(warmup_inv_sqrt(w - 1, w, 1.0) < peak);
        assert!(warmup_inv_sqrt(w + 1, w, 1.0) < peak);
        assert!((peak - (w as f64).powf(-0.5)).abs() < 1e-15);
        let cfg = TrainConfig::default();
        let lr = lr_schedule(&cfg, 128, Stage::One, w, 0.0);
        assert!((lr - 128f64.powf(-0.5) * (w as f64).powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn round_robin_order() {
        assert_eq!(antenna_order([16, 32], 32), vec![32, 16]);
        assert_eq!(antenna_order([32], 32), vec![32]);
        assert_eq!(antenna_order([16, 24, 32], 32), vec![32, 24, 16]);
    }
}

//! Evaluation, baseline, comparison and complexity reports.
//!
//! Every report is a CSV preceded by `#`-prefixed metadata lines carrying
//! the config hash, dataset hash and seed. Row order is fixed, so reruns
//! on the same inputs are byte-identical.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alloc::{compress_rank, decompress_rank};
use crate::dataset::{Dataset, EigenSample};
use crate::etype2::{round_trip, Etype2Config};
use crate::metrics::sgcs;
use crate::model::{count_flops, count_params, BranchConfig, ParamStore};
use crate::nn::Hyperparams;
use crate::{Error, Result, C64};

/// Provenance lines written ahead of the CSV body.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    pub entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }
}

/// SHA-256 over the sample contents and header fields.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in [ds.n_t as u64, ds.n_sb as u64, ds.n_ri as u64, ds.seed, ds.samples.len() as u64] {
        h.update(v.to_le_bytes());
    }
    for s in &ds.samples {
        h.update(s.layer.to_le_bytes());
        h.update(s.drop_id.to_le_bytes());
        h.update(s.ue_id.to_le_bytes());
        for z in s.w.t().iter() {
            h.update(z.re.to_le_bytes());
            h.update(z.im.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Writes metadata comment lines and then the rows as CSV.
pub fn to_csv<T: Serialize>(rows: &[T], meta: &Meta) -> Result<String> {
    let mut out = String::new();
    for (k, v) in &meta.entries {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

/// Parses rows written by [`to_csv`], skipping metadata lines.
pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

/// Mean and nearest-rank percentiles of `values`.
pub fn summarize(values: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("no values to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pct = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean, pct(0.1), pct(0.5), pct(0.9)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub antennas: usize,
    pub payload_bits: usize,
    pub layer: u32,
    pub samples: usize,
    pub sgcs_mean: f64,
    pub sgcs_p10: f64,
    pub sgcs_p50: f64,
    pub sgcs_p90: f64,
}

/// Per-sample SGCS of the model on `samples` through branch `cfg`.
pub fn model_sgcs(model: &ParamStore, samples: &[&EigenSample], cfg: BranchConfig) -> Result<Vec<f64>> {
    let recs = model.reconstruct_batch(samples, cfg)?;
    samples.iter().zip(&recs).map(|(s, r)| Ok(sgcs(&s.w, r)?.value)).collect()
}

/// SGCS per `(antenna count, payload, layer)` over all datasets.
pub fn evaluate(model: &ParamStore, datasets: &[&Dataset], payloads: &[usize]) -> Result<Vec<EvalRow>> {
    if datasets.iter().all(|d| d.is_empty()) {
        return Err(Error::Empty("evaluation dataset is empty".into()));
    }
    let mut cfgs = Vec::new();
    for ds in datasets {
        for &k in payloads {
            cfgs.push(BranchConfig::new(ds.n_t, k));
        }
    }
    let missing: Vec<String> = cfgs
        .iter()
        .flat_map(|&c| ParamStore::route_names(c))
        .filter(|n| model.block(n).is_none())
        .map(|n| n.to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBlocks(missing));
    }
    let mut rows = Vec::new();
    for ds in datasets {
        for &k in payloads {
            let cfg = BranchConfig::new(ds.n_t, k);
            for layer in 1..=ds.n_ri as u32 {
                let samples = ds.layer(layer);
                if samples.is_empty() {
                    continue;
                }
                let values = model_sgcs(model, &samples, cfg)?;
                let (mean, p10, p50, p90) = summarize(&values)?;
                rows.push(EvalRow {
                    antennas: ds.n_t,
                    payload_bits: k,
                    layer,
                    samples: values.len(),
                    sgcs_mean: mean,
                    sgcs_p10: p10,
                    sgcs_p50: p50,
                    sgcs_p90: p90,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub antennas: usize,
    pub alloc_config: usize,
    pub rank: usize,
    pub layer: usize,
    pub payload_bits: usize,
    pub total_bits: usize,
    pub reports: usize,
    pub sgcs_mean: f64,
}

/// Groups layers `1..=rank` of the same UE into one report.
pub fn rank_reports(ds: &Dataset, rank: usize) -> Vec<Vec<&EigenSample>> {
    let mut groups: BTreeMap<(u32, u32, usize), Vec<&EigenSample>> = BTreeMap::new();
    let mut seen: BTreeMap<(u32, u32, u32), usize> = BTreeMap::new();
    for s in &ds.samples {
        // Several samples per UE share ids; the n-th occurrence of a layer
        // belongs to the n-th report of that UE.
        let n = seen.entry((s.drop_id, s.ue_id, s.layer)).or_insert(0);
        if (s.layer as usize) <= rank {
            groups.entry((s.drop_id, s.ue_id, *n)).or_default().push(s);
        }
        *n += 1;
    }
    groups
        .into_values()
        .filter(|g| g.len() == rank)
        .map(|mut g| {
            g.sort_by_key(|s| s.layer);
            g
        })
        .collect()
}

/// Rank-`rank` evaluation under allocation `config`.
pub fn evaluate_rank(model: &ParamStore, ds: &Dataset, config: usize, rank: usize) -> Result<Vec<RankRow>> {
    let payloads = crate::alloc::allocate(config, rank)?;
    let reports = rank_reports(ds, rank);
    if reports.is_empty() {
        return Err(Error::Empty(format!("no complete rank-{rank} reports in dataset")));
    }
    let per_report: Vec<Vec<f64>> = reports
        .par_iter()
        .map(|layers| {
            let code = compress_rank(layers, config, model)?;
            let recs = decompress_rank(&code, ds.n_t, config, model)?;
            layers.iter().zip(&recs).map(|(s, r)| Ok(sgcs(&s.w, r)?.value)).collect()
        })
        .collect::<Result<_>>()?;
    let total: usize = payloads.iter().sum();
    Ok((0..rank)
        .map(|i| RankRow {
            antennas: ds.n_t,
            alloc_config: config,
            rank,
            layer: i + 1,
            payload_bits: payloads[i],
            total_bits: total,
            reports: per_report.len(),
            sgcs_mean: per_report.iter().map(|v| v[i]).sum::<f64>() / per_report.len() as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub antennas: usize,
    pub layer: u32,
    pub l: usize,
    pub p: f64,
    pub amp_bits: u32,
    pub phase_bits: u32,
    pub payload_bits: usize,
    pub samples: usize,
    pub sgcs_mean: f64,
}

/// Per-sample SGCS of the baseline codec, each sample coded on its own.
pub fn baseline_sgcs(samples: &[&EigenSample], cfg: &Etype2Config) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let out = round_trip(std::slice::from_ref(&s.w), cfg)?;
            Ok(sgcs(&s.w, &out[0].1)?.value)
        })
        .collect()
}

pub fn evaluate_baseline(ds: &Dataset, cfg: &Etype2Config) -> Result<Vec<BaselineRow>> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset is empty".into()));
    }
    cfg.validate(ds.n_t, ds.n_sb)?;
    let mut rows = Vec::new();
    for layer in 1..=ds.n_ri as u32 {
        let samples = ds.layer(layer);
        if samples.is_empty() {
            continue;
        }
        let values = baseline_sgcs(&samples, cfg)?;
        rows.push(BaselineRow {
            antennas: ds.n_t,
            layer,
            l: cfg.l,
            p: cfg.p,
            amp_bits: cfg.amp_bits,
            phase_bits: cfg.phase_bits,
            payload_bits: cfg.payload_bits(ds.n_t, ds.n_sb),
            samples: values.len(),
            sgcs_mean: summarize(&values)?.0,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub antennas: usize,
    pub payload_bits: usize,
    pub model_sgcs: f64,
    pub matched: bool,
    pub baseline_sgcs: Option<f64>,
    pub baseline_bits: Option<usize>,
    pub baseline_config: Option<String>,
    pub model_wins: Option<bool>,
}

/// Relative payload tolerance for matching a baseline config to a target.
pub const MATCH_TOLERANCE: f64 = 0.10;

/// Side-by-side SGCS at matched payloads. For each target the best baseline
/// config within the tolerance is kept; targets without any are flagged
/// unmatched.
pub fn compare(
    model: &ParamStore,
    ds: &Dataset,
    payloads: &[usize],
    sweep: &[Etype2Config],
) -> Result<Vec<CompareRow>> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset is empty".into()));
    }
    let samples: Vec<&EigenSample> = ds.samples.iter().collect();
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut rows = Vec::new();
    for &k in payloads {
        let model_mean = summarize(&model_sgcs(model, &samples, BranchConfig::new(ds.n_t, k))?)?.0;
        let mut best: Option<(f64, usize, &Etype2Config)> = None;
        for (i, c) in sweep.iter().enumerate() {
            if c.validate(ds.n_t, ds.n_sb).is_err() {
                continue;
            }
            let bits = c.payload_bits(ds.n_t, ds.n_sb);
            if (bits as f64 - k as f64).abs() > MATCH_TOLERANCE * k as f64 {
                continue;
            }
            let v = match cache.get(&i) {
                Some(&v) => v,
                None => {
                    let v = summarize(&baseline_sgcs(&samples, c)?)?.0;
                    cache.insert(i, v);
                    v
                }
            };
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, bits, c));
            }
        }
        rows.push(match best {
            Some((v, bits, c)) => CompareRow {
                antennas: ds.n_t,
                payload_bits: k,
                model_sgcs: model_mean,
                matched: true,
                baseline_sgcs: Some(v),
                baseline_bits: Some(bits),
                baseline_config: Some(format!(
                    "L={} p={:.4} amp={} phase={} O={}",
                    c.l, c.p, c.amp_bits, c.phase_bits, c.oversampling
                )),
                model_wins: Some(model_mean > v),
            },
            None => CompareRow {
                antennas: ds.n_t,
                payload_bits: k,
                model_sgcs: model_mean,
                matched: false,
                baseline_sgcs: None,
                baseline_bits: None,
                baseline_config: None,
                model_wins: None,
            },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    /// `flops` or `params`.
    pub quantity: String,
    /// `encoder` or `decoder`.
    pub side: String,
    /// Empty for parameter totals.
    pub antennas: Option<usize>,
    pub payload_bits: Option<usize>,
    pub value: u64,
}

/// FLOPs for every `(N_t, k, side)` followed by the two parameter totals.
pub fn complexity(hp: &Hyperparams) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::new();
    for &p in &hp.antennas {
        for side in ["encoder", "decoder"] {
            for &k in &hp.payloads {
                let (enc, dec) = count_flops(hp, BranchConfig::new(p, k))?;
                rows.push(ComplexityRow {
                    quantity: "flops".into(),
                    side: side.into(),
                    antennas: Some(p),
                    payload_bits: Some(k),
                    value: if side == "encoder" { enc } else { dec },
                });
            }
        }
    }
    let counts = count_params(hp);
    for (side, v) in [("encoder", counts.encoder), ("decoder", counts.decoder)] {
        rows.push(ComplexityRow {
            quantity: "params".into(),
            side: side.into(),
            antennas: None,
            payload_bits: None,
            value: v as u64,
        });
    }
    Ok(rows)
}

/// Reconstruction helper shared by the CLI and tests.
pub fn reconstruct_all(model: &ParamStore, ds: &Dataset, k: usize) -> Result<Vec<Array2<C64>>> {
    let samples: Vec<&EigenSample> = ds.samples.iter().collect();
    model.reconstruct_batch(&samples, BranchConfig::new(ds.n_t, k))
}

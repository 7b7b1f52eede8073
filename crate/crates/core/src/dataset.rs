//! Eigenvector samples, datasets, drop-based splitting and the binary
//! dataset file format.
//!
//! File layout (little endian):
//!
//! ```text
//! magic    8 bytes  "SCSIDATA"
//! version  u32      1
//! n_t      u32
//! n_sb     u32
//! n_ri     u32
//! count    u64
//! seed     u64
//! count x {
//!     layer    u32   (1-based)
//!     drop_id  u32
//!     ue_id    u32
//!     values   n_sb * n_t * 2 f32, ordered (subband, antenna, re/im)
//! }
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::channel::{layer_eigenvectors, ChannelRealization};
use crate::{Error, Result, C64};

const MAGIC: &[u8; 8] = b"SCSIDATA";
const VERSION: u32 = 1;

/// Subband eigenvectors of one MIMO layer: `w` is `N_t x N_sb`, column `s`
/// holds the eigenvector of subband `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSample {
    pub w: Array2<C64>,
    pub layer: u32,
    pub drop_id: u32,
    pub ue_id: u32,
}

impl EigenSample {
    pub fn antenna_count(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_sb(&self) -> usize {
        self.w.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        self.w.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Divides `W` by its largest entry magnitude.
pub fn normalize_sample(sample: &EigenSample) -> Result<EigenSample> {
    let max = sample.max_abs();
    if max == 0.0 || !max.is_finite() {
        return Err(Error::Degenerate("cannot normalize an all-zero eigenvector matrix".into()));
    }
    let mut out = sample.clone();
    if max != 1.0 {
        out.w.mapv_inplace(|z| z / max);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_t: usize,
    pub n_sb: usize,
    pub n_ri: usize,
    pub seed: u64,
    pub samples: Vec<EigenSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn drop_ids(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.drop_id).collect()
    }

    /// Sample count per layer, index 0 is layer 1.
    pub fn counts_per_layer(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_ri];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.layer as usize - 1) {
                *c += 1;
            }
        }
        counts
    }

    pub fn layer(&self, layer: u32) -> Vec<&EigenSample> {
        self.samples.iter().filter(|s| s.layer == layer).collect()
    }
}

fn round_to_f32(z: C64) -> C64 {
    C64::new(z.re as f32 as f64, z.im as f32 as f64)
}

/// Extracts `n_ri` layers of subband eigenvectors from every channel and
/// normalizes them by max amplitude.
///
/// Values are rounded to `f32` so a dataset compares equal to its stored
/// file contents.
pub fn build_dataset(
    channels: &[ChannelRealization],
    n_sb: usize,
    n_ri: usize,
    seed: u64,
) -> Result<Dataset> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Empty("no channel realizations".into()))?;
    let n_t = first.n_t();
    if channels.iter().any(|c| c.n_t() != n_t) {
        return Err(Error::Shape("channels disagree on antenna count".into()));
    }
    let per_channel: Vec<Result<Vec<EigenSample>>> = channels
        .par_iter()
        .map(|ch| {
            let layers = layer_eigenvectors(ch, n_sb, n_ri)?;
            layers
                .into_iter()
                .enumerate()
                .map(|(i, w)| {
                    let raw = EigenSample {
                        w,
                        layer: i as u32 + 1,
                        drop_id: ch.drop_id,
                        ue_id: ch.ue_id,
                    };
                    let mut s = normalize_sample(&raw)?;
                    s.w.mapv_inplace(round_to_f32);
                    Ok(s)
                })
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(channels.len() * n_ri);
    for r in per_channel {
        samples.extend(r?);
    }
    Ok(Dataset { n_t, n_sb, n_ri, seed, samples })
}

/// Splits by drop: the first `round(fraction * n_drops)` drops (ascending id)
/// form the training set, the rest the test set.
pub fn split_by_drop(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let drops: Vec<u32> = ds.drop_ids().into_iter().collect();
    if drops.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 drops to split, found {}",
            drops.len()
        )));
    }
    let n_train = ((train_fraction * drops.len() as f64).round() as usize).clamp(1, drops.len() - 1);
    let train_drops: BTreeSet<u32> = drops[..n_train].iter().copied().collect();
    let (train, test): (Vec<_>, Vec<_>) = ds
        .samples
        .iter()
        .cloned()
        .partition(|s| train_drops.contains(&s.drop_id));
    let with = |samples| Dataset { samples, ..ds.clone_meta() };
    Ok((with(train), with(test)))
}

impl Dataset {
    fn clone_meta(&self) -> Dataset {
        Dataset {
            n_t: self.n_t,
            n_sb: self.n_sb,
            n_ri: self.n_ri,
            seed: self.seed,
            samples: Vec::new(),
        }
    }
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [ds.n_t, ds.n_sb, ds.n_ri] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&(ds.samples.len() as u64).to_le_bytes())?;
    w.write_all(&ds.seed.to_le_bytes())?;
    for s in &ds.samples {
        if s.w.dim() != (ds.n_t, ds.n_sb) {
            return Err(Error::Shape(format!(
                "sample is {:?}, dataset expects ({}, {})",
                s.w.dim(),
                ds.n_t,
                ds.n_sb
            )));
        }
        for v in [s.layer, s.drop_id, s.ue_id] {
            w.write_all(&v.to_le_bytes())?;
        }
        for sb in 0..ds.n_sb {
            for a in 0..ds.n_t {
                let z = s.w[[a, sb]];
                w.write_all(&(z.re as f32).to_le_bytes())?;
                w.write_all(&(z.im as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated dataset file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n_t = read_u32(&mut r)? as usize;
    let n_sb = read_u32(&mut r)? as usize;
    let n_ri = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    if n_t == 0 || n_sb == 0 || n_ri == 0 || n_ri > n_t {
        return Err(Error::Format(format!(
            "invalid header shape n_t={n_t} n_sb={n_sb} n_ri={n_ri}"
        )));
    }
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; n_t * n_sb * 8];
    for _ in 0..count {
        let layer = read_u32(&mut r)?;
        let drop_id = read_u32(&mut r)?;
        let ue_id = read_u32(&mut r)?;
        if layer == 0 || layer as usize > n_ri {
            return Err(Error::Format(format!("layer {layer} outside 1..={n_ri}")));
        }
        r.read_exact(&mut buf).map_err(truncated)?;
        let mut w = Array2::<C64>::zeros((n_t, n_sb));
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
            w[[i % n_t, i / n_t]] = C64::new(re as f64, im as f64);
        }
        samples.push(EigenSample { w, layer, drop_id, ue_id });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last sample".into()));
    }
    Ok(Dataset { n_t, n_sb, n_ri, seed, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channels, ChannelParams};
    use crate::metrics::sgcs;

    fn sample(w: Array2<C64>) -> EigenSample {
        EigenSample { w, layer: 1, drop_id: 0, ue_id: 0 }
    }

    fn small_dataset(n_drops: usize) -> Dataset {
        let p = ChannelParams { n_t: 16, n_c: 24, ..Default::default() };
        let ch = generate_channels(&p, n_drops, 2, 9).unwrap();
        build_dataset(&ch, 12, 2, 9).unwrap()
    }

    #[test]
    fn normalize_scales_to_unit_max() {
        let w = Array2::from_shape_fn((2, 2), |(i, j)| C64::new((i + j) as f64, 0.0));
        let n = normalize_sample(&sample(w)).unwrap();
        assert!((n.max_abs() - 1.0).abs() < 1e-15);
        assert_eq!(n.w[[1, 1]], C64::new(1.0, 0.0));
    }

    #[test]
    fn normalize_is_idempotent_at_unit_max() {
        let w = Array2::from_shape_fn((2, 3), |(i, j)| C64::new(0.1 * i as f64, -0.2 * j as f64 + 0.5));
        let once = normalize_sample(&sample(w)).unwrap();
        let twice = normalize_sample(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_preserves_sgcs() {
        let ds = small_dataset(1);
        for s in &ds.samples {
            let raw = s.w.mapv(|z| z * 3.7);
            let n = normalize_sample(&sample(raw.clone())).unwrap();
            assert!((sgcs(&raw, &n.w).unwrap().value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        let w = Array2::<C64>::zeros((2, 2));
        assert!(matches!(normalize_sample(&sample(w)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn dataset_counts_and_normalization() {
        let ds = small_dataset(2);
        assert_eq!(ds.len(), 2 * 2 * 2);
        assert_eq!(ds.counts_per_layer(), vec![4, 4]);
        for s in &ds.samples {
            assert_eq!(s.w.dim(), (16, 12));
            assert!((s.max_abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fifty_drops_split_forty_ten() {
        let samples = (0..50u32)
            .map(|d| EigenSample {
                w: Array2::from_elem((2, 1), C64::new(1.0, 0.0)),
                layer: 1,
                drop_id: d,
                ue_id: 0,
            })
            .collect();
        let ds = Dataset { n_t: 2, n_sb: 1, n_ri: 1, seed: 0, samples };
        let (train, test) = split_by_drop(&ds, 0.8).unwrap();
        assert_eq!(train.drop_ids().len(), 40);
        assert_eq!(test.drop_ids().len(), 10);
        assert!(train.drop_ids().is_disjoint(&test.drop_ids()));
        assert!(split_by_drop(&ds, 1.0).is_err());
        assert!(split_by_drop(&ds, 0.0).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let ds = small_dataset(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn read_rejects_corruption() {
        let ds = small_dataset(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));

        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));

        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }
}

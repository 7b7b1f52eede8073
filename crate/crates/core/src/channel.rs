//! Synthetic frequency-selective MIMO channels and subband eigenvectors.
//!
//! The generator is a clustered multipath model with an exponential
//! power-delay profile over a dual-polarized uniform linear array at the
//! base station. It is a stand-in for a full standardized channel model:
//! it yields spatially structured, frequency-correlated eigenvectors, which
//! is what the compression pipeline needs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::{Error, Result, C64};

/// Antenna counts with a trained spatial adapter pair.
pub const SUPPORTED_ANTENNAS: [usize; 2] = [16, 32];

/// One channel snapshot: `h[f]` is the `N_r x N_t` matrix of subcarrier `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Array2<C64>>,
    pub drop_id: u32,
    pub ue_id: u32,
    pub sample_id: u32,
}

impl ChannelRealization {
    pub fn n_r(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }

    pub fn n_t(&self) -> usize {
        self.h.first().map_or(0, |h| h.ncols())
    }

    pub fn n_c(&self) -> usize {
        self.h.len()
    }
}

/// Parameters of the clustered multipath generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub n_t: usize,
    pub n_r: usize,
    pub n_c: usize,
    pub n_sb: usize,
    /// Number of multipath components per UE.
    pub n_paths: usize,
    /// Mean excess delay in units of `1 / (N_c * subcarrier spacing)`.
    pub delay_spread: f64,
    /// Angular spread (radians, standard deviation) of path departure angles
    /// around the UE's dominant direction.
    pub angle_spread: f64,
    /// UE dominant directions are uniform in `[-sector, sector]` radians.
    pub sector: f64,
    /// Snapshots per UE; geometry is fixed per UE, path gains are redrawn.
    pub samples_per_ue: usize,
    /// Optional estimation noise added to `H` before correlation.
    pub snr_db: Option<f64>,
    /// Enforce `n_t` in the supported set.
    pub strict_antennas: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            n_t: 32,
            n_r: 4,
            n_c: 48,
            n_sb: 12,
            n_paths: 6,
            delay_spread: 2.0,
            angle_spread: 0.25,
            sector: PI / 3.0,
            samples_per_ue: 1,
            snr_db: None,
            strict_antennas: true,
        }
    }
}

impl ChannelParams {
    /// Narrow-sector, low-spread channel for short training runs: all UEs
    /// share a small angular region, so a few thousand samples suffice.
    pub fn desk(n_t: usize) -> Self {
        Self { n_t, angle_spread: 0.1, sector: 0.15, samples_per_ue: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strict_antennas && !SUPPORTED_ANTENNAS.contains(&self.n_t) {
            return Err(Error::InvalidConfig(format!(
                "n_t = {} not in {:?}",
                self.n_t, SUPPORTED_ANTENNAS
            )));
        }
        if self.n_t == 0 || self.n_t % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_t = {} must be a positive even number (two polarizations)",
                self.n_t
            )));
        }
        if self.n_r == 0 {
            return Err(Error::InvalidConfig("n_r must be >= 1".into()));
        }
        if self.n_sb == 0 || self.n_c == 0 || self.n_c % self.n_sb != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_c = {} is not divisible by n_sb = {}",
                self.n_c, self.n_sb
            )));
        }
        if !(0.0..=PI / 2.0).contains(&self.sector) {
            return Err(Error::InvalidConfig(format!("sector {} outside [0, pi/2]", self.sector)));
        }
        if self.n_paths == 0 || self.samples_per_ue == 0 {
            return Err(Error::InvalidConfig(
                "n_paths and samples_per_ue must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

struct Path {
    tx_angle: f64,
    rx_angle: f64,
    delay: f64,
    power: f64,
}

fn steering(n: usize, angle: f64) -> Vec<C64> {
    (0..n)
        .map(|m| C64::from_polar(1.0, PI * m as f64 * angle.sin()))
        .collect()
}

fn cn(rng: &mut ChaCha8Rng, variance: f64) -> C64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * sd, im * sd)
}

/// Generates `n_drops * ues_per_drop * samples_per_ue` channel snapshots.
///
/// Every `(drop, ue)` pair draws from its own ChaCha stream, so the output is
/// independent of thread scheduling.
pub fn generate_channels(
    params: &ChannelParams,
    n_drops: usize,
    ues_per_drop: usize,
    seed: u64,
) -> Result<Vec<ChannelRealization>> {
    params.validate()?;
    let jobs: Vec<(usize, usize)> = (0..n_drops)
        .flat_map(|d| (0..ues_per_drop).map(move |u| (d, u)))
        .collect();
    let per_ue: Vec<Vec<ChannelRealization>> = jobs
        .par_iter()
        .map(|&(drop, ue)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((drop * ues_per_drop + ue) as u64);
            ue_snapshots(params, &mut rng, drop as u32, ue as u32)
        })
        .collect();
    Ok(per_ue.into_iter().flatten().collect())
}

fn ue_snapshots(
    params: &ChannelParams,
    rng: &mut ChaCha8Rng,
    drop_id: u32,
    ue_id: u32,
) -> Vec<ChannelRealization> {
    let n_half = params.n_t / 2;
    let centre: f64 = if params.sector > 0.0 { rng.random_range(-params.sector..params.sector) } else { 0.0 };
    let delay_dist = Exp::new(1.0 / params.delay_spread.max(1e-9)).unwrap();
    let mut paths: Vec<Path> = (0..params.n_paths)
        .map(|i| {
            let offset: f64 = rng.sample::<f64, _>(StandardNormal) * params.angle_spread;
            let delay = if i == 0 { 0.0 } else { delay_dist.sample(rng) };
            Path {
                tx_angle: (centre + offset).clamp(-PI / 2.0, PI / 2.0),
                rx_angle: rng.random_range(-PI..PI),
                delay,
                power: (-delay / params.delay_spread.max(1e-9)).exp(),
            }
        })
        .collect();
    let total: f64 = paths.iter().map(|p| p.power).sum();
    for p in &mut paths {
        p.power /= total;
    }

    (0..params.samples_per_ue)
        .map(|sample| {
            // Per-polarization complex gains are redrawn for every snapshot.
            let gains: Vec<[C64; 2]> = paths
                .iter()
                .map(|p| [cn(rng, p.power), cn(rng, p.power)])
                .collect();
            let mut h: Vec<Array2<C64>> = (0..params.n_c)
                .map(|f| {
                    let mut hf = Array2::<C64>::zeros((params.n_r, params.n_t));
                    for (p, g) in paths.iter().zip(&gains) {
                        let rot = C64::from_polar(
                            1.0,
                            -2.0 * PI * f as f64 * p.delay / params.n_c as f64,
                        );
                        let ar = steering(params.n_r, p.rx_angle);
                        let at = steering(n_half, p.tx_angle);
                        for (r, &ar_r) in ar.iter().enumerate() {
                            for pol in 0..2 {
                                let coeff = g[pol] * rot * ar_r;
                                for (m, &at_m) in at.iter().enumerate() {
                                    hf[[r, pol * n_half + m]] += coeff * at_m.conj();
                                }
                            }
                        }
                    }
                    hf
                })
                .collect();
            if let Some(snr_db) = params.snr_db {
                let power: f64 = h.iter().flat_map(|m| m.iter()).map(|z| z.norm_sqr()).sum::<f64>()
                    / (params.n_c * params.n_r * params.n_t) as f64;
                let noise_var = power / 10f64.powf(snr_db / 10.0);
                for hf in &mut h {
                    hf.mapv_inplace(|z| z + cn(rng, noise_var));
                }
            }
            ChannelRealization {
                h,
                drop_id,
                ue_id,
                sample_id: sample as u32,
            }
        })
        .collect()
}

/// Per-subband correlation `R(s) = mean_f H(f)^H H(f)` over consecutive
/// blocks of `N_c / N_sb` subcarriers.
pub fn subband_correlation(ch: &ChannelRealization, n_sb: usize) -> Result<Vec<Array2<C64>>> {
    let n_c = ch.n_c();
    if n_sb == 0 || n_c == 0 || n_c % n_sb != 0 {
        return Err(Error::InvalidConfig(format!(
            "n_c = {n_c} is not divisible by n_sb = {n_sb}"
        )));
    }
    let block = n_c / n_sb;
    let n_t = ch.n_t();
    Ok((0..n_sb)
        .map(|s| {
            let mut r = Array2::<C64>::zeros((n_t, n_t));
            for hf in &ch.h[s * block..(s + 1) * block] {
                let hh = hf.t().mapv(|z| z.conj());
                r = r + hh.dot(hf);
            }
            r / C64::new(block as f64, 0.0)
        })
        .collect())
}

/// Eigenvectors of a Hermitian PSD matrix for the `n_ri` largest eigenvalues.
///
/// Columns are sorted by descending eigenvalue and phase-canonicalized so
/// that the largest-magnitude entry (lowest index on ties) is real positive.
/// Returns the `N_t x n_ri` eigenvector matrix and the matching eigenvalues.
pub fn extract_eigenvectors(r: &Array2<C64>, n_ri: usize) -> Result<(Array2<C64>, Vec<f64>)> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(Error::Shape(format!("{}x{} is not square", n, r.ncols())));
    }
    if n_ri == 0 || n_ri > n {
        return Err(Error::InvalidConfig(format!("n_ri = {n_ri} outside 1..={n}")));
    }
    // Symmetrize against round-off before handing to the Hermitian solver.
    let m = DMatrix::from_fn(n, n, |i, j| (r[[i, j]] + r[[j, i]].conj()) * 0.5);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut out = Array2::<C64>::zeros((n, n_ri));
    let mut values = Vec::with_capacity(n_ri);
    for (col, &idx) in order.iter().take(n_ri).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut pivot = 0;
        for i in 1..n {
            if v[i].norm() > v[pivot].norm() + 1e-12 {
                pivot = i;
            }
        }
        let phase = if v[pivot].norm() > 0.0 {
            v[pivot].conj() / v[pivot].norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            out[[i, col]] = v[i] * phase / norm;
        }
        values.push(eig.eigenvalues[idx]);
    }
    Ok((out, values))
}

/// Subband eigenvectors of one realization: entry `i` is the `N_t x N_sb`
/// matrix of the `(i+1)`-th layer.
pub fn layer_eigenvectors(
    ch: &ChannelRealization,
    n_sb: usize,
    n_ri: usize,
) -> Result<Vec<Array2<C64>>> {
    let corr = subband_correlation(ch, n_sb)?;
    let n_t = ch.n_t();
    let mut layers = vec![Array2::<C64>::zeros((n_t, n_sb)); n_ri];
    for (s, r) in corr.iter().enumerate() {
        let (v, _) = extract_eigenvectors(r, n_ri)?;
        for (i, layer) in layers.iter_mut().enumerate() {
            layer.slice_mut(s![.., s]).assign(&v.column(i));
        }
    }
    Ok(layers)
}

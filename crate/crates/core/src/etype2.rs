//! Simplified enhanced Type II style DFT-codebook codec for eigenvectors.
//!
//! A layer `W` (`N_t x N_sb`) is approximated as `W_s * W~ * W_f^H`:
//!
//! * `W_s` (`N_t x 2L`): `L` DFT beams over the `N_t / 2` antennas of one
//!   polarization, replicated on both polarizations, shared by all layers;
//! * `W_f` (`N_sb x M`): `M` DFT basis vectors over the subband axis,
//!   per layer, `M = ceil(p * N_sb)`;
//! * `W~` (`2L x M`): coefficients, normalized by the strongest one and
//!   quantized with a 3 dB-step amplitude grid and a PSK phase grid.
//!
//! Bit layout of one layer:
//! `[rotation group][beam subset][basis subset][strongest index][coefficients]`
//! where subsets are sent as combinatorial indices and every non-strongest
//! coefficient is `amp_bits` amplitude bits then `phase_bits` phase bits.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Amplitude grid step in dB.
pub const AMP_STEP_DB: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Etype2Config {
    /// Spatial beams per polarization.
    pub l: usize,
    /// Frequency compression ratio; `M = ceil(p * N_sb)`.
    pub p: f64,
    pub amp_bits: u32,
    pub phase_bits: u32,
    /// Spatial DFT oversampling factor (1 = critically sampled).
    pub oversampling: usize,
}

impl Etype2Config {
    pub fn new(l: usize, p: f64, amp_bits: u32, phase_bits: u32) -> Self {
        Self { l, p, amp_bits, phase_bits, oversampling: 1 }
    }

    pub fn m(&self, n_sb: usize) -> usize {
        // Guard against p * n_sb landing a hair above an integer.
        ((self.p * n_sb as f64) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self, n_t: usize, n_sb: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if n_t < 2 || n_t % 2 != 0 {
            return bad(format!("N_t = {n_t} must be even"));
        }
        if self.l == 0 || 2 * self.l > n_t {
            return bad(format!("L = {} needs 1 <= 2L <= N_t = {n_t}", self.l));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p = {} outside (0, 1]", self.p));
        }
        let m = self.m(n_sb);
        if m == 0 || m > n_sb {
            return bad(format!("M = {m} outside 1..={n_sb}"));
        }
        if self.amp_bits == 0 || self.phase_bits == 0 || self.amp_bits > 8 || self.phase_bits > 8 {
            return bad("amp_bits and phase_bits must be in 1..=8".into());
        }
        if self.oversampling == 0 {
            return bad("oversampling must be >= 1".into());
        }
        Ok(())
    }

    /// Exact bits emitted for one layer.
    pub fn payload_bits(&self, n_t: usize, n_sb: usize) -> usize {
        let n1 = n_t / 2;
        let m = self.m(n_sb);
        let coeffs = 2 * self.l * m;
        bits_for(self.oversampling as u128)
            + bits_for(binomial(n1, self.l))
            + bits_for(binomial(n_sb, m))
            + bits_for(coeffs as u128)
            + (coeffs - 1) * (self.amp_bits + self.phase_bits) as usize
    }
}

/// Bits needed to index `n` alternatives.
fn bits_for(n: u128) -> usize {
    if n <= 1 {
        0
    } else {
        (128 - (n - 1).leading_zeros()) as usize
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Combinatorial-number-system rank of a sorted subset.
fn subset_rank(subset: &[usize]) -> u128 {
    subset.iter().enumerate().map(|(i, &s)| binomial(s, i + 1)).sum()
}

fn subset_unrank(mut rank: u128, n: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    let mut hi = n;
    for i in (0..k).rev() {
        let mut s = hi - 1;
        while binomial(s, i + 1) > rank {
            s -= 1;
        }
        out[i] = s;
        rank -= binomial(s, i + 1);
        hi = s;
    }
    out
}

/// Unit-norm DFT beam `index` over `n` antennas with oversampling `o`.
fn dft_vector(n: usize, index: usize, o: usize) -> Vec<C64> {
    let norm = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|m| C64::from_polar(norm, 2.0 * PI * (m * index) as f64 / (o * n) as f64))
        .collect()
}

/// Dual-polarized beam matrix for beam indices `beams` (grid indices in
/// `0..O*N_t/2`): columns `0..L` on the first polarization, `L..2L` on the
/// second.
pub fn beam_matrix(n_t: usize, beams: &[usize], oversampling: usize) -> Array2<C64> {
    let n1 = n_t / 2;
    let l = beams.len();
    let mut ws = Array2::<C64>::zeros((n_t, 2 * l));
    for (j, &b) in beams.iter().enumerate() {
        let v = dft_vector(n1, b, oversampling);
        for pol in 0..2 {
            for m in 0..n1 {
                ws[[pol * n1 + m, pol * l + j]] = v[m];
            }
        }
    }
    ws
}

/// Orthonormal DFT basis over `n_sb` subbands, columns `indices`.
pub fn frequency_basis(n_sb: usize, indices: &[usize]) -> Array2<C64> {
    let mut wf = Array2::<C64>::zeros((n_sb, indices.len()));
    for (j, &k) in indices.iter().enumerate() {
        let v = dft_vector(n_sb, k, 1);
        wf.column_mut(j).assign(&ndarray::Array1::from(v));
    }
    wf
}

fn hermitian(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Projection energy of beam grid index `b` (both polarizations) summed
/// over all layers and subbands.
pub fn beam_energy(layers: &[Array2<C64>], b: usize, oversampling: usize) -> f64 {
    let n_t = layers[0].nrows();
    let n1 = n_t / 2;
    let v = dft_vector(n1, b, oversampling);
    let mut e = 0.0;
    for w in layers {
        for s in 0..w.ncols() {
            for pol in 0..2 {
                let ip: C64 = (0..n1).map(|m| v[m].conj() * w[[pol * n1 + m, s]]).sum();
                e += ip.norm_sqr();
            }
        }
    }
    e
}

/// Selected spatial beams.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBasis {
    /// Rotation group `q` in `0..O`.
    pub group: usize,
    /// Sorted beam positions within the group, each in `0..N_t/2`.
    pub positions: Vec<usize>,
    pub oversampling: usize,
    pub matrix: Array2<C64>,
    pub energy: f64,
}

impl SpatialBasis {
    pub fn grid_indices(&self) -> Vec<usize> {
        self.positions.iter().map(|&j| self.group + self.oversampling * j).collect()
    }

    fn build(n_t: usize, group: usize, positions: Vec<usize>, oversampling: usize, energy: f64) -> Self {
        let grid: Vec<usize> = positions.iter().map(|&j| group + oversampling * j).collect();
        let matrix = beam_matrix(n_t, &grid, oversampling);
        Self { group, positions, oversampling, matrix, energy }
    }
}

/// Picks the `L` orthogonal DFT beams (one rotation group) with the largest
/// projection energy over all layers and subbands.
pub fn select_spatial_beams(layers: &[Array2<C64>], l: usize, oversampling: usize) -> Result<SpatialBasis> {
    let first = layers.first().ok_or_else(|| Error::Empty("no layers".into()))?;
    let n_t = first.nrows();
    if layers.iter().any(|w| w.dim() != first.dim()) {
        return Err(Error::Shape("layers disagree in shape".into()));
    }
    if n_t % 2 != 0 || l == 0 || 2 * l > n_t {
        return Err(Error::InvalidConfig(format!("L = {l} needs 1 <= 2L <= N_t = {n_t}")));
    }
    let n1 = n_t / 2;
    let o = oversampling.max(1);
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for q in 0..o {
        let mut scored: Vec<(usize, f64)> =
            (0..n1).map(|j| (j, beam_energy(layers, q + o * j, o))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut pos: Vec<usize> = scored[..l].iter().map(|x| x.0).collect();
        pos.sort_unstable();
        let energy: f64 = scored[..l].iter().map(|x| x.1).sum();
        if best.as_ref().is_none_or(|b| energy > b.0 + 1e-12) {
            best = Some((energy, q, pos));
        }
    }
    let (energy, q, pos) = best.unwrap();
    Ok(SpatialBasis::build(n_t, q, pos, o, energy))
}

/// Frequency compression of projected coefficients `c` (`2L x N_sb`):
/// keeps the `m` DFT basis columns with the largest captured energy.
/// Returns `(W_f, W~, selected indices)`.
pub fn compress_frequency(c: &Array2<C64>, m: usize) -> Result<(Array2<C64>, Array2<C64>, Vec<usize>)> {
    let n_sb = c.ncols();
    if m == 0 || m > n_sb {
        return Err(Error::InvalidConfig(format!("M = {m} outside 1..={n_sb}")));
    }
    let full = frequency_basis(n_sb, &(0..n_sb).collect::<Vec<_>>());
    let proj = c.dot(&full);
    let mut scored: Vec<(usize, f64)> = (0..n_sb)
        .map(|k| (k, proj.column(k).iter().map(|z| z.norm_sqr()).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut idx: Vec<usize> = scored[..m].iter().map(|x| x.0).collect();
    idx.sort_unstable();
    let wf = frequency_basis(n_sb, &idx);
    let wt = c.dot(&wf);
    Ok((wf, wt, idx))
}

/// `W_s * W~ * W_f^H`.
pub fn reconstruct(ws: &Array2<C64>, w_tilde: &Array2<C64>, wf: &Array2<C64>) -> Result<Array2<C64>> {
    if ws.ncols() != w_tilde.nrows() || w_tilde.ncols() != wf.ncols() {
        return Err(Error::Shape(format!(
            "W_s {:?}, W~ {:?}, W_f {:?}",
            ws.dim(),
            w_tilde.dim(),
            wf.dim()
        )));
    }
    Ok(ws.dot(w_tilde).dot(&hermitian(wf)))
}

/// Amplitude level `i` of an `amp_bits` grid; level 0 is zero, the top
/// level is 1, neighbours are `AMP_STEP_DB` apart.
pub fn amplitude_level(i: u32, amp_bits: u32) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let top = (1u32 << amp_bits) - 1;
    10f64.powf(-AMP_STEP_DB * (top - i) as f64 / 20.0)
}

fn quantize_amplitude(a: f64, amp_bits: u32) -> u32 {
    let levels = 1u32 << amp_bits;
    (0..levels)
        .min_by(|&x, &y| {
            (a - amplitude_level(x, amp_bits))
                .abs()
                .total_cmp(&(a - amplitude_level(y, amp_bits)).abs())
        })
        .unwrap()
}

fn quantize_phase(phi: f64, phase_bits: u32) -> u32 {
    let n = 1u32 << phase_bits;
    let step = 2.0 * PI / n as f64;
    ((phi.rem_euclid(2.0 * PI) / step).round() as u32) % n
}

fn phase_level(i: u32, phase_bits: u32) -> f64 {
    2.0 * PI * i as f64 / (1u32 << phase_bits) as f64
}

/// Quantized coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCoeffs {
    pub strongest: usize,
    pub amp: Vec<u32>,
    pub phase: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
}

/// Normalizes by the strongest coefficient and quantizes the others
/// (row-major order, strongest skipped).
pub fn quantize_coeffs(w_tilde: &Array2<C64>, amp_bits: u32, phase_bits: u32) -> Result<QuantizedCoeffs> {
    let (rows, cols) = w_tilde.dim();
    let flat: Vec<C64> = w_tilde.iter().copied().collect();
    let strongest = (0..flat.len())
        .max_by(|&a, &b| flat[a].norm().total_cmp(&flat[b].norm()).then(b.cmp(&a)))
        .ok_or_else(|| Error::Empty("no coefficients".into()))?;
    let reference = flat[strongest];
    if reference.norm() == 0.0 {
        return Err(Error::Degenerate("all-zero coefficient matrix".into()));
    }
    let mut amp = Vec::with_capacity(flat.len() - 1);
    let mut phase = Vec::with_capacity(flat.len() - 1);
    for (i, &c) in flat.iter().enumerate() {
        if i == strongest {
            continue;
        }
        let rel = c / reference;
        amp.push(quantize_amplitude(rel.norm(), amp_bits));
        phase.push(quantize_phase(rel.arg(), phase_bits));
    }
    Ok(QuantizedCoeffs { strongest, amp, phase, rows, cols })
}

/// Rebuilds `W~` up to a common complex scale (strongest entry = 1).
pub fn dequantize_coeffs(q: &QuantizedCoeffs, amp_bits: u32, phase_bits: u32) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((q.rows, q.cols));
    let mut it = q.amp.iter().zip(&q.phase);
    for i in 0..q.rows * q.cols {
        let z = if i == q.strongest {
            C64::new(1.0, 0.0)
        } else {
            let (&a, &p) = it.next().unwrap();
            C64::from_polar(amplitude_level(a, amp_bits), phase_level(p, phase_bits))
        };
        out[[i / q.cols, i % q.cols]] = z;
    }
    out
}

fn push_bits(bits: &mut Vec<u8>, value: u128, width: usize) {
    for i in (0..width).rev() {
        bits.push(((value >> i) & 1) as u8);
    }
}

fn pop_bits(bits: &[u8], pos: &mut usize, width: usize) -> Result<u128> {
    if *pos + width > bits.len() {
        return Err(Error::Format("bitstream too short".into()));
    }
    let mut v = 0u128;
    for &b in &bits[*pos..*pos + width] {
        v = (v << 1) | b as u128;
    }
    *pos += width;
    Ok(v)
}

/// Full encode of one layer; the spatial basis is supplied so it can be
/// shared across layers.
pub fn encode_layer(w: &Array2<C64>, spatial: &SpatialBasis, cfg: &Etype2Config) -> Result<Vec<u8>> {
    let (n_t, n_sb) = w.dim();
    cfg.validate(n_t, n_sb)?;
    if spatial.positions.len() != cfg.l {
        return Err(Error::Shape("spatial basis does not have L beams".into()));
    }
    let c = hermitian(&spatial.matrix).dot(w);
    let (_, wt, freq_idx) = compress_frequency(&c, cfg.m(n_sb))?;
    let q = quantize_coeffs(&wt, cfg.amp_bits, cfg.phase_bits)?;
    let n1 = n_t / 2;
    let mut bits = Vec::with_capacity(cfg.payload_bits(n_t, n_sb));
    push_bits(&mut bits, spatial.group as u128, bits_for(cfg.oversampling as u128));
    push_bits(&mut bits, subset_rank(&spatial.positions), bits_for(binomial(n1, cfg.l)));
    push_bits(&mut bits, subset_rank(&freq_idx), bits_for(binomial(n_sb, freq_idx.len())));
    push_bits(&mut bits, q.strongest as u128, bits_for((q.rows * q.cols) as u128));
    for (&a, &p) in q.amp.iter().zip(&q.phase) {
        push_bits(&mut bits, a as u128, cfg.amp_bits as usize);
        push_bits(&mut bits, p as u128, cfg.phase_bits as usize);
    }
    Ok(bits)
}

pub fn decode_layer(bits: &[u8], n_t: usize, n_sb: usize, cfg: &Etype2Config) -> Result<Array2<C64>> {
    cfg.validate(n_t, n_sb)?;
    if bits.len() != cfg.payload_bits(n_t, n_sb) {
        return Err(Error::Shape(format!(
            "bitstream has {} bits, config expects {}",
            bits.len(),
            cfg.payload_bits(n_t, n_sb)
        )));
    }
    let n1 = n_t / 2;
    let m = cfg.m(n_sb);
    let mut pos = 0;
    let group = pop_bits(bits, &mut pos, bits_for(cfg.oversampling as u128))? as usize;
    let beams = subset_unrank(pop_bits(bits, &mut pos, bits_for(binomial(n1, cfg.l)))?, n1, cfg.l);
    let freq = subset_unrank(pop_bits(bits, &mut pos, bits_for(binomial(n_sb, m)))?, n_sb, m);
    let rows = 2 * cfg.l;
    let strongest = pop_bits(bits, &mut pos, bits_for((rows * m) as u128))? as usize;
    let mut amp = Vec::with_capacity(rows * m - 1);
    let mut phase = Vec::with_capacity(rows * m - 1);
    for _ in 0..rows * m - 1 {
        amp.push(pop_bits(bits, &mut pos, cfg.amp_bits as usize)? as u32);
        phase.push(pop_bits(bits, &mut pos, cfg.phase_bits as usize)? as u32);
    }
    let grid: Vec<usize> = beams.iter().map(|&j| group + cfg.oversampling * j).collect();
    let ws = beam_matrix(n_t, &grid, cfg.oversampling);
    let wf = frequency_basis(n_sb, &freq);
    let q = QuantizedCoeffs { strongest, amp, phase, rows, cols: m };
    reconstruct(&ws, &dequantize_coeffs(&q, cfg.amp_bits, cfg.phase_bits), &wf)
}

/// Unquantized reconstruction of one layer through the selected bases.
pub fn project_layer(w: &Array2<C64>, spatial: &SpatialBasis, m: usize) -> Result<Array2<C64>> {
    let c = hermitian(&spatial.matrix).dot(w);
    let (wf, wt, _) = compress_frequency(&c, m)?;
    reconstruct(&spatial.matrix, &wt, &wf)
}

/// Energy of `c` captured by a given set of frequency basis columns.
pub fn captured_energy(c: &Array2<C64>, indices: &[usize]) -> f64 {
    let wf = frequency_basis(c.ncols(), indices);
    c.dot(&wf).iter().map(|z| z.norm_sqr()).sum()
}

/// Energy of `layers` captured by a spatial basis matrix.
pub fn spatial_energy(layers: &[Array2<C64>], ws: &Array2<C64>) -> f64 {
    let wsh = hermitian(ws);
    layers.iter().map(|w| wsh.dot(w).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
}

/// Encode and decode every layer of one report (shared beams).
pub fn round_trip(layers: &[Array2<C64>], cfg: &Etype2Config) -> Result<Vec<(Vec<u8>, Array2<C64>)>> {
    let spatial = select_spatial_beams(layers, cfg.l, cfg.oversampling)?;
    layers
        .iter()
        .map(|w| {
            let bits = encode_layer(w, &spatial, cfg)?;
            let w_hat = decode_layer(&bits, w.nrows(), w.ncols(), cfg)?;
            Ok((bits, w_hat))
        })
        .collect()
}

/// Default sweep used to hit target payloads.
pub fn default_sweep(n_t: usize, n_sb: usize) -> Vec<Etype2Config> {
    let mut out = Vec::new();
    for l in [1, 2, 3, 4, 6] {
        if 2 * l > n_t {
            continue;
        }
        for m in 1..=n_sb.min(6) {
            for amp in 1..=3 {
                for phase in 1..=4 {
                    out.push(Etype2Config::new(l, m as f64 / n_sb as f64, amp, phase));
                }
            }
        }
    }
    out
}

/// Keeps the sub-slice `[.., cols]` of a matrix; used by tests and the CLI.
pub fn columns(w: &Array2<C64>, cols: std::ops::Range<usize>) -> Array2<C64> {
    w.slice(s![.., cols]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sgcs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<C64> {
        Array2::from_shape_simple_fn((r, c), || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn combinatorial_index_round_trip() {
        for n in 1..8 {
            for k in 1..=n {
                let total = binomial(n, k);
                for r in 0..total {
                    let s = subset_unrank(r, n, k);
                    assert!(s.windows(2).all(|w| w[0] < w[1]));
                    assert_eq!(subset_rank(&s), r);
                }
            }
        }
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(5), 3);
        assert_eq!(bits_for(8), 3);
    }

    #[test]
    fn in_grid_beams_are_recovered() {
        let n_t = 8;
        let chosen = [1usize, 3];
        let ws = beam_matrix(n_t, &chosen, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeffs = random(&mut rng, 4, 5);
        let w = ws.dot(&coeffs);
        let sel = select_spatial_beams(std::slice::from_ref(&w), 2, 1).unwrap();
        assert_eq!(sel.positions, chosen.to_vec());
        let residual = &w - &sel.matrix.dot(&hermitian(&sel.matrix).dot(&w));
        assert!(residual.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn beam_matrix_is_orthonormal() {
        let ws = beam_matrix(16, &[0, 2, 5, 7], 1);
        let g = hermitian(&ws).dot(&ws);
        for i in 0..8 {
            for j in 0..8 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - C64::new(e, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_spectrum_needs_one_column() {
        let c = Array2::from_shape_fn((4, 6), |(r, _)| C64::new(r as f64 + 1.0, -0.5));
        let (wf, wt, idx) = compress_frequency(&c, 1).unwrap();
        assert_eq!(idx, vec![0]);
        let back = wt.dot(&hermitian(&wf));
        assert!((&back - &c).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn complete_basis_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random(&mut rng, 4, 6);
        let (wf, wt, _) = compress_frequency(&c, 6).unwrap();
        assert!((&wt.dot(&hermitian(&wf)) - &c).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn grid_points_round_trip_exactly() {
        let (amp_bits, phase_bits) = (3, 4);
        let mut w = Array2::<C64>::zeros((2, 3));
        let mut k = 0;
        for v in w.iter_mut() {
            *v = C64::from_polar(amplitude_level(k % 8, amp_bits), phase_level((3 * k) % 16, phase_bits));
            k += 1;
        }
        w[[0, 0]] = C64::new(1.0, 0.0);
        let q = quantize_coeffs(&w, amp_bits, phase_bits).unwrap();
        let back = dequantize_coeffs(&q, amp_bits, phase_bits);
        assert!((&back - &w).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn zero_coefficients_rejected() {
        assert!(matches!(quantize_coeffs(&Array2::zeros((2, 2)), 2, 2), Err(Error::Degenerate(_))));
        let ws = beam_matrix(4, &[0], 1);
        let wf = frequency_basis(3, &[0]);
        let zero = reconstruct(&ws, &Array2::zeros((2, 1)), &wf).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
        assert!(sgcs(&Array2::from_elem((4, 3), C64::new(1.0, 0.0)), &zero).is_err());
    }

    #[test]
    fn payload_formula_example() {
        // L=4, M=4 on N_t=32, N_sb=12, amp 3, phase 4:
        // beams ceil(log2 C(16,4)=1820)=11, basis ceil(log2 C(12,4)=495)=9,
        // strongest ceil(log2 32)=5, coefficients 31*7=217.
        let cfg = Etype2Config::new(4, 4.0 / 12.0, 3, 4);
        assert_eq!(cfg.m(12), 4);
        assert_eq!(cfg.payload_bits(32, 12), 11 + 9 + 5 + 217);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random(&mut rng, 32, 12);
        let out = round_trip(&[w], &cfg).unwrap();
        assert_eq!(out[0].0.len(), 242);
    }

    #[test]
    fn phase_resolution_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<Array2<C64>> = (0..20).map(|_| random(&mut rng, 4, 6)).collect();
        let mut last = f64::INFINITY;
        for phase_bits in 1..=5 {
            let err: f64 = samples
                .iter()
                .map(|w| {
                    let q = quantize_coeffs(w, 8, phase_bits).unwrap();
                    let back = dequantize_coeffs(&q, 8, phase_bits);
                    let reference = w[[q.strongest / 6, q.strongest % 6]];
                    (&back.mapv(|z| z * reference) - w).iter().map(|z| z.norm_sqr()).sum::<f64>()
                })
                .sum();
            assert!(err < last, "phase_bits={phase_bits}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Etype2Config::new(5, 0.5, 2, 2).validate(8, 4).is_err());
        assert!(Etype2Config::new(2, 0.0, 2, 2).validate(8, 4).is_err());
        assert!(Etype2Config::new(2, 0.5, 0, 2).validate(8, 4).is_err());
        assert!(select_spatial_beams(&[Array2::zeros((8, 4))], 5, 1).is_err());
    }

    #[test]
    fn oversampled_grid_selects_matching_group() {
        let n_t = 8;
        let o = 4;
        let grid = [2 + o, 2 + 3 * o];
        let ws = beam_matrix(n_t, &grid, o);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = ws.dot(&random(&mut rng, 4, 3));
        let sel = select_spatial_beams(&[w.clone()], 2, o).unwrap();
        assert_eq!(sel.group, 2);
        assert_eq!(sel.grid_indices(), grid.to_vec());
        let cfg = Etype2Config { oversampling: o, ..Etype2Config::new(2, 1.0, 3, 4) };
        let out = round_trip(&[w], &cfg).unwrap();
        assert_eq!(out[0].0.len(), cfg.payload_bits(8, 3));
    }
}

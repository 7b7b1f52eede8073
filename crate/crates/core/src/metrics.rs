//! Squared generalized cosine similarity and the multi-payload objective.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};

use crate::dataset::EigenSample;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct SgcsResult {
    pub value: f64,
    pub per_subband: Vec<f64>,
}

fn column_sgcs(w: ArrayView1<C64>, w_hat: ArrayView1<C64>) -> Option<f64> {
    let nw: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    let nh: f64 = w_hat.iter().map(|z| z.norm_sqr()).sum();
    if nw == 0.0 || nh == 0.0 {
        return None;
    }
    let ip: C64 = w.iter().zip(w_hat.iter()).map(|(a, b)| a.conj() * b).sum();
    Some((ip.norm_sqr() / (nw * nh)).min(1.0))
}

fn check_shapes(w: &Array2<C64>, w_hat: &Array2<C64>) -> Result<()> {
    if w.dim() != w_hat.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", w.dim(), w_hat.dim())));
    }
    if w.ncols() == 0 {
        return Err(Error::Empty("no subbands".into()));
    }
    Ok(())
}

/// Mean over subband columns of `|w^H w_hat|^2 / (|w|^2 |w_hat|^2)`.
pub fn sgcs(w: &Array2<C64>, w_hat: &Array2<C64>) -> Result<SgcsResult> {
    check_shapes(w, w_hat)?;
    let per_subband = (0..w.ncols())
        .map(|s| {
            column_sgcs(w.column(s), w_hat.column(s))
                .ok_or_else(|| Error::Degenerate(format!("zero column at subband {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let value = per_subband.iter().sum::<f64>() / per_subband.len() as f64;
    Ok(SgcsResult { value, per_subband })
}

/// SGCS together with its gradient with respect to `w_hat`.
///
/// The gradient is returned in complex packing: entry `n` holds
/// `d/dRe + j d/dIm` of the real-valued SGCS.
pub fn sgcs_with_grad(w: &Array2<C64>, w_hat: &Array2<C64>) -> Result<(f64, Array2<C64>)> {
    check_shapes(w, w_hat)?;
    let n_sb = w.ncols() as f64;
    let mut grad = Array2::<C64>::zeros(w_hat.dim());
    let mut total = 0.0;
    for s in 0..w.ncols() {
        let wc = w.column(s);
        let hc = w_hat.column(s);
        let nw: f64 = wc.iter().map(|z| z.norm_sqr()).sum();
        let nh: f64 = hc.iter().map(|z| z.norm_sqr()).sum();
        if nw == 0.0 || nh == 0.0 {
            return Err(Error::Degenerate(format!("zero column at subband {s}")));
        }
        let ip: C64 = wc.iter().zip(hc.iter()).map(|(a, b)| a.conj() * b).sum();
        let num = ip.norm_sqr();
        total += num / (nw * nh);
        // d|a|^2 = 2 a w ; d|w_hat|^2 = 2 w_hat
        let c1 = 2.0 / (nw * nh * n_sb);
        let c2 = 2.0 * num / (nw * nh * nh * n_sb);
        for n in 0..wc.len() {
            grad[[n, s]] = ip * wc[n] * c1 - hc[n] * c2;
        }
    }
    Ok((total / n_sb, grad))
}

/// Negative mean SGCS averaged over samples within each payload, then over
/// payloads.
pub fn multi_payload_loss(
    batch: &[EigenSample],
    reconstructions: &BTreeMap<usize, Vec<Array2<C64>>>,
    payloads: &[usize],
) -> Result<f64> {
    Ok(multi_payload_loss_with_grad(batch, reconstructions, payloads)?.0)
}

/// [`multi_payload_loss`] plus the gradient with respect to every
/// reconstruction, keyed like the input.
pub fn multi_payload_loss_with_grad(
    batch: &[EigenSample],
    reconstructions: &BTreeMap<usize, Vec<Array2<C64>>>,
    payloads: &[usize],
) -> Result<(f64, BTreeMap<usize, Vec<Array2<C64>>>)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    if payloads.is_empty() {
        return Err(Error::Empty("empty payload set".into()));
    }
    let scale = -1.0 / (payloads.len() * batch.len()) as f64;
    let mut loss = 0.0;
    let mut grads = BTreeMap::new();
    for &k in payloads {
        let recs = reconstructions.get(&k).ok_or(Error::MissingPayload(k))?;
        if recs.len() != batch.len() {
            return Err(Error::Shape(format!(
                "payload {k}: {} reconstructions for {} samples",
                recs.len(),
                batch.len()
            )));
        }
        let mut gk = Vec::with_capacity(recs.len());
        for (sample, rec) in batch.iter().zip(recs) {
            let (v, g) = sgcs_with_grad(&sample.w, rec)?;
            loss += scale * v;
            gk.push(g * C64::new(scale, 0.0));
        }
        grads.insert(k, gk);
    }
    Ok((loss, grads))
}

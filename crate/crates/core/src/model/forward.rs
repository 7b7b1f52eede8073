//! Training pass: one sample through every payload branch, with gradients.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use super::{Block, BlockName, ParamStore};
use crate::dataset::EigenSample;
use crate::metrics::sgcs_with_grad;
use crate::nn::{blocks, quant, Params};
use crate::{Error, Result, C64};

/// Gradients for the blocks touched by a pass, same layout as the store.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grads {
    pub blocks: BTreeMap<BlockName, Block>,
}

impl Grads {
    fn for_pass(store: &ParamStore, antenna: usize, payloads: &[usize]) -> Result<Self> {
        let mut names = vec![BlockName::Lpt(antenna), BlockName::En, BlockName::De, BlockName::Lt(antenna)];
        for &k in payloads {
            names.push(BlockName::Ds(k));
            names.push(BlockName::Us(k));
        }
        let blocks = names
            .into_iter()
            .map(|n| {
                store
                    .block(&n)
                    .map(|b| (n, b.zeros_like()))
                    .ok_or_else(|| Error::NoBranch(n.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    fn linear(&mut self, name: BlockName) -> &mut crate::nn::Linear {
        match self.blocks.get_mut(&name) {
            Some(Block::Linear(l)) => l,
            _ => unreachable!("gradient slot for {name} prepared by for_pass"),
        }
    }

    fn core(&mut self, name: BlockName) -> &mut crate::nn::TransformerStack {
        match self.blocks.get_mut(&name) {
            Some(Block::Core(c)) => c,
            _ => unreachable!("gradient slot for {name} prepared by for_pass"),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (name, g) in &other.blocks {
            match self.blocks.get_mut(name) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.blocks.insert(*name, g.clone());
                }
            }
        }
    }

    /// Largest absolute gradient entry per tensor, keyed `"BLOCK/tensor"`.
    pub fn max_abs_per_tensor(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, b) in &self.blocks {
            for (t, data, _) in b.tensors() {
                out.insert(format!("{name}/{t}"), data.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Negative SGCS averaged over samples, then over payloads.
    pub loss: f64,
    /// Mean SGCS per payload over the batch.
    pub sgcs: BTreeMap<usize, f64>,
    pub grads: Grads,
}

/// Samples per work unit; fixed so the reduction order never depends on the
/// thread count.
const CHUNK: usize = 4;

impl ParamStore {
    /// Forward through every payload branch in `payloads` and backward with
    /// the straight-through estimator across the quantizer.
    pub fn loss_and_grad(&self, batch: &[&EigenSample], payloads: &[usize]) -> Result<BatchOutput> {
        self.loss_and_grad_with(batch, payloads, true)
    }

    /// [`Self::loss_and_grad`] with the quantizer optionally bypassed
    /// (identity forward), which makes the whole pass differentiable for
    /// finite-difference checks.
    pub fn loss_and_grad_with(
        &self,
        batch: &[&EigenSample],
        payloads: &[usize],
        quantize: bool,
    ) -> Result<BatchOutput> {
        let first = batch.first().ok_or_else(|| Error::Empty("empty batch".into()))?;
        if payloads.is_empty() {
            return Err(Error::Empty("empty payload set".into()));
        }
        let antenna = first.antenna_count();
        if batch.iter().any(|s| s.antenna_count() != antenna) {
            return Err(Error::Shape("batch mixes antenna counts".into()));
        }
        for &k in payloads {
            self.check_config(super::BranchConfig::new(antenna, k))?;
        }
        let scale = 1.0 / (payloads.len() * batch.len()) as f64;

        let partials: Vec<Result<(Vec<f64>, Grads)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = Grads::for_pass(self, antenna, payloads)?;
                let mut sums = vec![0.0; payloads.len()];
                for s in chunk {
                    let v = self.sample_pass(s, payloads, scale, quantize, &mut grads)?;
                    for (acc, x) in sums.iter_mut().zip(v) {
                        *acc += x;
                    }
                }
                Ok((sums, grads))
            })
            .collect();

        let mut sums = vec![0.0; payloads.len()];
        let mut grads = Grads::default();
        for p in partials {
            let (s, g) = p?;
            for (acc, x) in sums.iter_mut().zip(s) {
                *acc += x;
            }
            grads.add_assign(&g);
        }
        let n = batch.len() as f64;
        let sgcs: BTreeMap<usize, f64> = payloads.iter().zip(&sums).map(|(&k, &s)| (k, s / n)).collect();
        let loss = -sgcs.values().sum::<f64>() / payloads.len() as f64;
        Ok(BatchOutput { loss, sgcs, grads })
    }

    /// One sample through all `payloads`; accumulates `-scale * dSGCS` into
    /// `grads` and returns the per-payload SGCS values.
    pub(crate) fn sample_pass(
        &self,
        sample: &EigenSample,
        payloads: &[usize],
        scale: f64,
        quantize: bool,
        grads: &mut Grads,
    ) -> Result<Vec<f64>> {
        let hp = &self.hp;
        let p = sample.antenna_count();
        if sample.w.dim() != (p, hp.n_sb) {
            return Err(Error::Shape(format!("sample {:?} vs n_sb {}", sample.w.dim(), hp.n_sb)));
        }
        let lpt = self.linear(&BlockName::Lpt(p))?;
        let lt = self.linear(&BlockName::Lt(p))?;
        let en = self.core(&BlockName::En)?;
        let de = self.core(&BlockName::De)?;

        let x = blocks::pack_input(&sample.w);
        let h = lpt.forward(&x);
        let (e, en_cache) = en.forward(&h);

        let mut d_e = Array2::<f64>::zeros(e.dim());
        let mut values = Vec::with_capacity(payloads.len());
        for &k in payloads {
            let ds = self.linear(&BlockName::Ds(k))?;
            let us = self.linear(&BlockName::Us(k))?;

            let z = blocks::ds_forward(ds, &e);
            let q = if quantize { quant::quantize_dequantize(&z) } else { z.clone() };
            let y = quant::lambda_map(&q);
            let u = blocks::us_forward(us, &y, hp.n_sb);
            let (d, de_cache) = de.forward(&u);
            let o = blocks::lt_forward(lt, &d);
            let w_hat = blocks::unpack_output(&o);

            let (v, g) = sgcs_with_grad(&sample.w, &w_hat)?;
            values.push(v);

            let d_o = blocks::pack_grad(&g.mapv(|c| c * C64::new(-scale, 0.0)));
            let d_d = blocks::lt_backward(lt, &d, &o, &d_o, grads.linear(BlockName::Lt(p)));
            let d_u = de.backward(&de_cache, &d_d, grads.core(BlockName::De));
            let d_y = blocks::us_backward(us, &y, &d_u, grads.linear(BlockName::Us(k)));
            // lambda(q) = 2q - 1, then the straight-through estimator.
            let d_q: Vec<f64> = d_y.iter().map(|g| 2.0 * g).collect();
            let d_z = quant::straight_through_backward(&d_q);
            d_e += &blocks::ds_backward(ds, &e, &z, &d_z, grads.linear(BlockName::Ds(k)));
        }

        let d_h = en.backward(&en_cache, &d_e, grads.core(BlockName::En));
        lpt.backward(&x, &d_h, grads.linear(BlockName::Lpt(p)));
        Ok(values)
    }
}

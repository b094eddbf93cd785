//! Batch normalization over axis 1 of an `[N, F, ...]` tensor.

use crate::error::{Error, Result};

/// Which statistics normalize the input.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the batch's own mean and (biased) variance.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-feature batch statistics produced in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    /// `running <- momentum * running + (1 - momentum) * batch`
    pub fn blend_into(&self, running_mean: &mut [f64], running_var: &mut [f64], momentum: f64) {
        for (r, b) in running_mean.iter_mut().zip(&self.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in running_var.iter_mut().zip(&self.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}

pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

pub(crate) struct BnLayout {
    pub n: usize,
    pub f: usize,
    pub inner: usize,
}

impl BnLayout {
    pub fn new(shape: &[usize], gamma: &[usize], beta: &[usize]) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::Dimension {
                op: "batch_norm",
                axis: "rank".into(),
                detail: format!("expected [N, F, ...], got {shape:?}"),
            });
        }
        let f = shape[1];
        if gamma != [f] || beta != [f] {
            return Err(Error::Dimension {
                op: "batch_norm",
                axis: "F".into(),
                detail: format!("gamma {gamma:?} / beta {beta:?} do not match {f} features"),
            });
        }
        Ok(BnLayout {
            n: shape[0],
            f,
            inner: shape[2..].iter().product(),
        })
    }

    fn for_feature(&self, fi: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.n).map(move |ni| {
            let s = (ni * self.f + fi) * self.inner;
            s..s + self.inner
        })
    }
}

pub(crate) fn forward(
    l: &BnLayout,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mode: BatchNormMode<'_>,
    eps: f64,
) -> Result<(Vec<f64>, BnCache, Option<BatchStats>)> {
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; l.f];
    let (stats, training) = match mode {
        BatchNormMode::Train => {
            if l.n < 2 {
                return Err(Error::invalid(format!(
                    "batch_norm needs at least 2 samples in training mode, got {}",
                    l.n
                )));
            }
            let m = (l.n * l.inner) as f64;
            let mut mean = vec![0.0; l.f];
            let mut var = vec![0.0; l.f];
            for fi in 0..l.f {
                let s: f64 = l.for_feature(fi).map(|r| x[r].iter().sum::<f64>()).sum();
                mean[fi] = s / m;
                let ss: f64 = l
                    .for_feature(fi)
                    .map(|r| x[r].iter().map(|v| (v - mean[fi]).powi(2)).sum::<f64>())
                    .sum();
                var[fi] = ss / m;
            }
            (Some(BatchStats { mean, var }), true)
        }
        BatchNormMode::Eval { mean, var } => {
            if mean.len() != l.f || var.len() != l.f {
                return Err(Error::Dimension {
                    op: "batch_norm",
                    axis: "F".into(),
                    detail: "running statistics length differs from feature count".into(),
                });
            }
            (
                Some(BatchStats {
                    mean: mean.to_vec(),
                    var: var.to_vec(),
                }),
                false,
            )
        }
    };
    let st = stats.as_ref().expect("statistics set above");
    for fi in 0..l.f {
        inv_std[fi] = 1.0 / (st.var[fi] + eps).sqrt();
        for r in l.for_feature(fi) {
            for i in r {
                xhat[i] = (x[i] - st.mean[fi]) * inv_std[fi];
                out[i] = gamma[fi] * xhat[i] + beta[fi];
            }
        }
    }
    let cache = BnCache {
        xhat,
        inv_std,
        training,
    };
    Ok((out, cache, if training { stats } else { None }))
}

pub(crate) fn backward(
    l: &BnLayout,
    cache: &BnCache,
    gamma: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; grad_out.len()];
    let mut gg = vec![0.0; l.f];
    let mut gb = vec![0.0; l.f];
    let m = (l.n * l.inner) as f64;
    for fi in 0..l.f {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for r in l.for_feature(fi) {
            for i in r {
                sum_g += grad_out[i];
                sum_gx += grad_out[i] * cache.xhat[i];
            }
        }
        gg[fi] = sum_gx;
        gb[fi] = sum_g;
        let k = gamma[fi] * cache.inv_std[fi];
        for r in l.for_feature(fi) {
            for i in r {
                gx[i] = if cache.training {
                    k * (grad_out[i] - sum_g / m - cache.xhat[i] * sum_gx / m)
                } else {
                    k * grad_out[i]
                };
            }
        }
    }
    (gx, gg, gb)
}

//! Binary cross-entropy and multi-bandwidth Gaussian MMD kernels.

use crate::error::{Error, Result};

pub(crate) const PROB_CLAMP: f64 = 1e-12;

pub(crate) fn bce_forward(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::invalid("bce_loss over an empty batch"));
    }
    if p.len() != y.len() {
        return Err(Error::invalid(format!(
            "bce_loss: {} probabilities but {} targets",
            p.len(),
            y.len()
        )));
    }
    let s: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * pc.ln() + (1.0 - y) * (1.0 - pc).ln()
        })
        .sum();
    Ok(-s / p.len() as f64)
}

pub(crate) fn bce_backward(p: &[f64], y: &[f64], upstream: f64) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                0.0
            } else {
                -upstream * (y / p - (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect()
}

/// Pooled pairwise geometry shared by the MMD forward and backward passes.
pub(crate) struct MmdCache {
    pub ns: usize,
    pub nt: usize,
    pub d: usize,
    pub pooled: Vec<f64>,
    pub dist: Vec<f64>,
    pub base: f64,
    /// Pairs `(i, j, weight)` whose squared distance defines the median
    /// bandwidth; empty when the bandwidth fell back to 1.
    pub median_pairs: Vec<(usize, usize, f64)>,
    pub multipliers: Vec<f64>,
}

impl MmdCache {
    fn weight(&self, i: usize, j: usize) -> f64 {
        let (ns, nt) = (self.ns as f64, self.nt as f64);
        match (i < self.ns, j < self.ns) {
            (true, true) => 1.0 / (ns * ns),
            (false, false) => 1.0 / (nt * nt),
            _ => -1.0 / (ns * nt),
        }
    }
}

pub(crate) fn mmd_forward(
    xs: &[f64],
    xt: &[f64],
    ns: usize,
    nt: usize,
    d: usize,
    multipliers: &[f64],
) -> Result<(f64, MmdCache)> {
    if ns < 2 || nt < 2 {
        return Err(Error::invalid(format!(
            "mmd2 needs at least 2 samples per set, got {ns} source and {nt} target"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("mmd2 needs feature dimension >= 1"));
    }
    if multipliers.is_empty() || multipliers.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::invalid(
            "mmd2 bandwidth multipliers must be positive and nonempty",
        ));
    }
    let n = ns + nt;
    let mut pooled = Vec::with_capacity(n * d);
    pooled.extend_from_slice(xs);
    pooled.extend_from_slice(xt);

    let mut dist = vec![0.0; n * n];
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let zi = &pooled[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let zj = &pooled[j * d..(j + 1) * d];
            let v: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i * n + j] = v;
            dist[j * n + i] = v;
            pairs.push((v, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let m = pairs.len();
    let (base, median_pairs) = if m % 2 == 1 {
        let (v, i, j) = pairs[m / 2];
        (v, vec![(i, j, 1.0)])
    } else {
        let (v1, i1, j1) = pairs[m / 2 - 1];
        let (v2, i2, j2) = pairs[m / 2];
        (0.5 * (v1 + v2), vec![(i1, j1, 0.5), (i2, j2, 0.5)])
    };
    let (base, median_pairs) = if base > 0.0 && base.is_finite() {
        (base, median_pairs)
    } else {
        (1.0, Vec::new())
    };

    let cache = MmdCache {
        ns,
        nt,
        d,
        pooled,
        dist,
        base,
        median_pairs,
        multipliers: multipliers.to_vec(),
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let k: f64 = cache
                .multipliers
                .iter()
                .map(|mu| (-cache.dist[i * n + j] / (mu * base)).exp())
                .sum();
            total += cache.weight(i, j) * k;
        }
    }
    Ok((total, cache))
}

/// Gradients with respect to the source and target sets, including the
/// dependence of the median bandwidth on the inputs.
pub(crate) fn mmd_backward(c: &MmdCache, upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let n = c.ns + c.nt;
    let d = c.d;
    let mut grad = vec![0.0; n * d];
    let mut d_base = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dij = c.dist[i * n + j];
            let w = c.weight(i, j);
            let mut dk_dd = 0.0;
            for mu in &c.multipliers {
                let s = mu * c.base;
                let k = (-dij / s).exp();
                dk_dd -= k / s;
                d_base += w * k * dij / (s * c.base);
            }
            // d(dist_ij)/d(z_i) = 2 (z_i - z_j); (j, i) is visited separately
            let coef = 2.0 * w * dk_dd;
            for a in 0..d {
                let diff = c.pooled[i * d + a] - c.pooled[j * d + a];
                grad[i * d + a] += coef * diff;
                grad[j * d + a] -= coef * diff;
            }
        }
    }
    for &(i, j, share) in &c.median_pairs {
        let coef = d_base * share * 2.0;
        for a in 0..d {
            let diff = c.pooled[i * d + a] - c.pooled[j * d + a];
            grad[i * d + a] += coef * diff;
            grad[j * d + a] -= coef * diff;
        }
    }
    for g in grad.iter_mut() {
        *g *= upstream;
    }
    let gt = grad.split_off(c.ns * d);
    (grad, gt)
}

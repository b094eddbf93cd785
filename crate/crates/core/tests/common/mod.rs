#![allow(dead_code)]

use dadlnet::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs() / 1e-6
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
    pub frac_below: f64,
}

impl FdReport {
    pub fn assert_within(&self, typical: f64, max: f64) {
        assert!(self.checked > 0, "no coordinates checked");
        assert!(
            self.frac_below >= 0.99 && self.max_rel < max,
            "finite-difference check failed: {self:?} (typical bound {typical}, max bound {max})"
        );
    }
}

/// Central finite differences against the tape's gradients for every
/// input flagged in `differentiable`. At most `per_input` coordinates of
/// each input are sampled.
pub fn fd_check<F>(inputs: &[Tensor], differentiable: &[bool], per_input: usize, h: f64, typical: f64, f: F) -> FdReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let l = f(&mut tape, &vars);
        tape.value(l).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(differentiable)
        .map(|(t, &d)| tape.leaf(t.clone(), d))
        .collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();

    let mut pick = rng(0xfd);
    let mut errs = Vec::new();
    for (k, t) in inputs.iter().enumerate() {
        if !differentiable[k] {
            continue;
        }
        let grad = tape
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        let n = t.numel();
        let coords: Vec<usize> = if n <= per_input {
            (0..n).collect()
        } else {
            (0..per_input).map(|_| pick.random_range(0..n)).collect()
        };
        for i in coords {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            errs.push(rel_err(grad.data()[i], num));
        }
    }
    let below = errs.iter().filter(|&&e| e < typical).count();
    FdReport {
        checked: errs.len(),
        max_rel: errs.iter().cloned().fold(0.0, f64::max),
        frac_below: below as f64 / errs.len().max(1) as f64,
    }
}

/// Weighted sum `sum(out * r)` with fixed pseudo-random weights so every
/// output element contributes a distinct gradient.
pub fn probe(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = rand_tensor(&shape, &mut rng(seed));
    let rv = tape.leaf(r, false);
    let m = tape.mul(out, rv).unwrap();
    tape.sum(m)
}

/// Direct nested-loop valid 3D convolution.
pub fn conv3d_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: (usize, usize, usize)) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let (n, c, t, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (f, kt, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let ot = (t - kt) / stride.0 + 1;
    let oh = (h - kh) / stride.1 + 1;
    let ow = (wd - kw) / stride.2 + 1;
    let xi = |a: usize, b: usize, cc: usize, d: usize, e: usize| x.data()[(((a * c + b) * t + cc) * h + d) * wd + e];
    let wi = |a: usize, b: usize, cc: usize, d: usize, e: usize| w.data()[(((a * c + b) * kt + cc) * kh + d) * kw + e];
    let mut out = Vec::new();
    for ni in 0..n {
        for fi in 0..f {
            for ti in 0..ot {
                for hi in 0..oh {
                    for wi_ in 0..ow {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        acc += wi(fi, ci, dt, dh, dw)
                                            * xi(ni, ci, ti * stride.0 + dt, hi * stride.1 + dh, wi_ * stride.2 + dw);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, f, ot, oh, ow], out).unwrap()
}

/// Rows of a `[N, D]` tensor.
pub fn rows(x: &Tensor) -> Vec<Vec<f64>> {
    x.data().chunks(x.shape()[1]).map(<[f64]>::to_vec).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Explicit double-sum squared MMD: sum of Gaussian kernels
/// `exp(-d / (mu * base))`, base = median pooled pairwise squared distance.
pub fn mmd_oracle(xs: &[Vec<f64>], xt: &[Vec<f64>], multipliers: &[f64]) -> f64 {
    let pooled: Vec<&Vec<f64>> = xs.iter().chain(xt).collect();
    let mut d = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let mut base = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if base <= 0.0 {
        base = 1.0;
    }
    let k = |a: &[f64], b: &[f64]| -> f64 { multipliers.iter().map(|mu| (-sq_dist(a, b) / (mu * base)).exp()).sum() };
    let mean_k = |u: &[Vec<f64>], v: &[Vec<f64>]| {
        let mut s = 0.0;
        for a in u {
            for b in v {
                s += k(a, b);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    mean_k(xs, xs) + mean_k(xt, xt) - 2.0 * mean_k(xs, xt)
}

pub fn bce_oracle(p: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (pi, yi) in p.iter().zip(y) {
        let q = pi.clamp(1e-12, 1.0 - 1e-12);
        s += yi * q.ln() + (1.0 - yi) * (1.0 - q).ln();
    }
    -s / p.len() as f64
}

/// Standard Gaussian cloud `[n, d]` with the first coordinate shifted by `shift`.
pub fn gaussian_cloud(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..n * d)
        .map(|i| rng.sample::<f64, _>(rand_distr::StandardNormal) + if i % d == 0 { shift } else { 0.0 })
        .collect();
    Tensor::new(vec![n, d], data).unwrap()
}

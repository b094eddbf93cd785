//! Valid (unpadded) 3D convolution kernels.
//!
//! Inputs are transposed to a time-innermost layout `[N, C, H, W, T]` so
//! the hot loops run over contiguous time rows. Work is split across the
//! batch axis; per-sample partial weight gradients are summed in sample
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub st: usize,
    pub sh: usize,
    pub sw: usize,
    pub ot: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: (usize, usize, usize)) -> Result<Self> {
        let dim = |axis: &str, detail: String| Error::Dimension {
            op: "conv3d",
            axis: axis.to_string(),
            detail,
        };
        if input.len() != 5 {
            return Err(dim("rank", format!("input must be [N,C,T,H,W], got {input:?}")));
        }
        if weight.len() != 5 {
            return Err(dim("rank", format!("weight must be [F,C,kt,kh,kw], got {weight:?}")));
        }
        let (n, c, t, h, w) = (input[0], input[1], input[2], input[3], input[4]);
        let (f, wc, kt, kh, kw) = (weight[0], weight[1], weight[2], weight[3], weight[4]);
        if wc != c {
            return Err(dim("C", format!("input has {c} channels, weight expects {wc}")));
        }
        if bias != [f] {
            return Err(dim("F", format!("bias shape {bias:?} does not match {f} filters")));
        }
        let (st, sh, sw) = stride;
        if st == 0 || sh == 0 || sw == 0 {
            return Err(Error::invalid(format!("conv3d stride {stride:?} has a zero entry")));
        }
        for (axis, k, d) in [("T", kt, t), ("H", kh, h), ("W", kw, w)] {
            if k > d {
                return Err(dim(axis, format!("kernel {k} exceeds input extent {d}")));
            }
        }
        Ok(ConvGeom {
            n,
            c,
            t,
            h,
            w,
            f,
            kt,
            kh,
            kw,
            st,
            sh,
            sw,
            ot: (t - kt) / st + 1,
            oh: (h - kh) / sh + 1,
            ow: (w - kw) / sw + 1,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.f, self.ot, self.oh, self.ow]
    }

    fn w_index(&self, f: usize, c: usize, dt: usize, dh: usize, dw: usize) -> usize {
        (((f * self.c + c) * self.kt + dt) * self.kh + dh) * self.kw + dw
    }
}

/// `[N, C, T, H, W]` -> `[N, C, H, W, T]`
pub(crate) fn time_last(x: &[f64], n: usize, c: usize, t: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let plane = t * h * w;
    for nc in 0..n * c {
        let src = &x[nc * plane..(nc + 1) * plane];
        let dst = &mut out[nc * plane..(nc + 1) * plane];
        for ti in 0..t {
            for hw in 0..h * w {
                dst[hw * t + ti] = src[ti * h * w + hw];
            }
        }
    }
    out
}

/// `[N, C, H, W, T]` -> `[N, C, T, H, W]`
pub(crate) fn time_first(x: &[f64], n: usize, c: usize, t: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let plane = t * h * w;
    for nc in 0..n * c {
        let src = &x[nc * plane..(nc + 1) * plane];
        let dst = &mut out[nc * plane..(nc + 1) * plane];
        for hw in 0..h * w {
            for ti in 0..t {
                dst[ti * h * w + hw] = src[hw * t + ti];
            }
        }
    }
    out
}

pub(crate) fn forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let xp = time_last(x, g.n, g.c, g.t, g.h, g.w);
    let in_len = g.c * g.h * g.w * g.t;
    let out_len = g.f * g.oh * g.ow * g.ot;
    let mut outp = vec![0.0; g.n * out_len];
    outp.par_chunks_mut(out_len)
        .zip(xp.par_chunks(in_len))
        .for_each(|(out_n, x_n)| forward_sample(g, x_n, weight, bias, out_n));
    time_first(&outp, g.n, g.f, g.ot, g.oh, g.ow)
}

fn forward_sample(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    for f in 0..g.f {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let start = ((f * g.oh + oh) * g.ow + ow) * g.ot;
                let row = &mut out[start..start + g.ot];
                row.fill(bias[f]);
                for c in 0..g.c {
                    for dh in 0..g.kh {
                        let ih = oh * g.sh + dh;
                        for dw in 0..g.kw {
                            let iw = ow * g.sw + dw;
                            let base = ((c * g.h + ih) * g.w + iw) * g.t;
                            let in_row = &x[base..base + g.t];
                            for dt in 0..g.kt {
                                let wv = weight[g.w_index(f, c, dt, dh, dw)];
                                if g.st == 1 {
                                    for (o, v) in row.iter_mut().zip(&in_row[dt..dt + g.ot]) {
                                        *o += wv * v;
                                    }
                                } else {
                                    for (o, r) in row.iter_mut().enumerate() {
                                        *r += wv * in_row[o * g.st + dt];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn backward(g: &ConvGeom, x: &[f64], weight: &[f64], grad_out: &[f64]) -> ConvGrads {
    let xp = time_last(x, g.n, g.c, g.t, g.h, g.w);
    let gp = time_last(grad_out, g.n, g.f, g.ot, g.oh, g.ow);
    let in_len = g.c * g.h * g.w * g.t;
    let out_len = g.f * g.oh * g.ow * g.ot;

    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = xp
        .par_chunks(in_len)
        .zip(gp.par_chunks(out_len))
        .map(|(x_n, g_n)| backward_sample(g, x_n, weight, g_n))
        .collect();

    let mut gxp = Vec::with_capacity(g.n * in_len);
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; g.f];
    for (gx_n, gw_n, gb_n) in partials {
        gxp.extend_from_slice(&gx_n);
        for (a, b) in gw.iter_mut().zip(&gw_n) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(&gb_n) {
            *a += b;
        }
    }
    ConvGrads {
        input: time_first(&gxp, g.n, g.c, g.t, g.h, g.w),
        weight: gw,
        bias: gb,
    }
}

fn backward_sample(g: &ConvGeom, x: &[f64], weight: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; g.f];
    for f in 0..g.f {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let start = ((f * g.oh + oh) * g.ow + ow) * g.ot;
                let grow = &grad_out[start..start + g.ot];
                gb[f] += grow.iter().sum::<f64>();
                for c in 0..g.c {
                    for dh in 0..g.kh {
                        let ih = oh * g.sh + dh;
                        for dw in 0..g.kw {
                            let iw = ow * g.sw + dw;
                            let base = ((c * g.h + ih) * g.w + iw) * g.t;
                            for dt in 0..g.kt {
                                let wi = g.w_index(f, c, dt, dh, dw);
                                let wv = weight[wi];
                                if g.st == 1 {
                                    let in_row = &x[base + dt..base + dt + g.ot];
                                    gw[wi] += grow.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
                                    let gx_row = &mut gx[base + dt..base + dt + g.ot];
                                    for (gi, go) in gx_row.iter_mut().zip(grow) {
                                        *gi += wv * go;
                                    }
                                } else {
                                    for (o, go) in grow.iter().enumerate() {
                                        let xi = base + o * g.st + dt;
                                        gw[wi] += go * x[xi];
                                        gx[xi] += wv * go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

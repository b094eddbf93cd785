use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal kernel lengths, as fractions of the sampling rate, compared in
/// the kernel sweep.
pub const TEMPORAL_KERNEL_FRACTIONS: [f64; 4] = [0.25, 0.125, 0.0625, 0.03125];

/// Architecture hyperparameters. Four conv blocks; attention sits between
/// blocks 3 and 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DadlNetConfig {
    /// Sampling rate of the input windows, Hz.
    pub fs: f64,
    /// Block-1 temporal kernel length as a fraction of `fs`.
    pub temporal_kernel_fraction: f64,
    /// Temporal kernel lengths of blocks 2-4.
    pub later_temporal_kernels: Vec<usize>,
    pub spatial_kernels: Vec<(usize, usize)>,
    pub spatial_strides: Vec<(usize, usize)>,
    pub filters: Vec<usize>,
    pub temporal_pools: Vec<usize>,
    pub dropout_p: f64,
    /// Squeeze-and-excitation reduction ratio.
    pub se_ratio: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for DadlNetConfig {
    fn default() -> Self {
        DadlNetConfig {
            fs: 400.0,
            temporal_kernel_fraction: 0.125,
            later_temporal_kernels: vec![3, 3, 3],
            spatial_kernels: vec![(2, 2), (2, 2), (1, 2), (2, 2)],
            spatial_strides: vec![(1, 1), (2, 2), (1, 2), (2, 2)],
            filters: vec![16, 32, 32, 64],
            temporal_pools: vec![4, 4, 4, 2],
            dropout_p: 0.5,
            se_ratio: 8,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

pub const BLOCKS: usize = 4;

impl DadlNetConfig {
    /// Block-1 temporal kernel: `floor(fraction * fs)`.
    pub fn first_temporal_kernel(&self) -> Result<usize> {
        let k = (self.temporal_kernel_fraction * self.fs).floor();
        if !(k >= 1.0) {
            return Err(Error::invalid(format!(
                "temporal kernel fraction {} at fs {} gives a kernel shorter than one sample",
                self.temporal_kernel_fraction, self.fs
            )));
        }
        Ok(k as usize)
    }

    pub fn temporal_kernel(&self, block: usize) -> Result<usize> {
        if block == 0 {
            self.first_temporal_kernel()
        } else {
            Ok(self.later_temporal_kernels[block - 1])
        }
    }

    /// Filter count seen by the attention block (output of block 3).
    pub fn attention_channels(&self) -> usize {
        self.filters[2]
    }

    pub fn feature_dim(&self) -> usize {
        self.filters[3]
    }

    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("spatial_kernels", self.spatial_kernels.len()),
            ("spatial_strides", self.spatial_strides.len()),
            ("filters", self.filters.len()),
            ("temporal_pools", self.temporal_pools.len()),
        ];
        for (name, len) in lens {
            if len != BLOCKS {
                return Err(Error::Config(format!("{name} must list {BLOCKS} blocks, got {len}")));
            }
        }
        if self.later_temporal_kernels.len() != BLOCKS - 1 {
            return Err(Error::Config(format!(
                "later_temporal_kernels must list {} blocks, got {}",
                BLOCKS - 1,
                self.later_temporal_kernels.len()
            )));
        }
        if !(self.fs > 0.0) || !(self.temporal_kernel_fraction > 0.0) {
            return Err(Error::Config("fs and temporal_kernel_fraction must be positive".into()));
        }
        let zero = |v: &[usize]| v.contains(&0);
        if zero(&self.filters) || zero(&self.temporal_pools) || zero(&self.later_temporal_kernels) {
            return Err(Error::Config("filters, pools and kernels must be >= 1".into()));
        }
        if self
            .spatial_kernels
            .iter()
            .chain(&self.spatial_strides)
            .any(|&(a, b)| a == 0 || b == 0)
        {
            return Err(Error::Config("spatial kernels and strides must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        let f = self.attention_channels();
        if self.se_ratio == 0 || !f.is_multiple_of(self.se_ratio) {
            return Err(Error::Config(format!(
                "se_ratio {} must divide the attention channel count {f}",
                self.se_ratio
            )));
        }
        self.first_temporal_kernel()?;
        Ok(())
    }
}

/// Shapes through one conv block, `(T, H, W)` at each stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub input: (usize, usize, usize),
    pub kernel: (usize, usize, usize),
    pub after_conv: (usize, usize, usize),
    pub output: (usize, usize, usize),
}

/// Walks the conv schedule over an input of `(timesteps, rows, cols)` and
/// checks that every kernel fits and the spatial grid closes to 1x1.
pub fn shape_plan(cfg: &DadlNetConfig, input: (usize, usize, usize)) -> Result<Vec<BlockShape>> {
    cfg.validate()?;
    let mut cur = input;
    let mut channels = 1;
    let mut plan = Vec::with_capacity(BLOCKS);
    for b in 0..BLOCKS {
        let (kh, kw) = cfg.spatial_kernels[b];
        let (sh, sw) = cfg.spatial_strides[b];
        let kt = cfg.temporal_kernel(b)?;
        let (t, h, w) = cur;
        if kt > t || kh > h || kw > w {
            return Err(Error::ShapeClosure {
                block: b + 1,
                detail: format!("kernel (T,H,W)=({kt},{kh},{kw}) does not fit input ({t},{h},{w})"),
            });
        }
        let after_conv = (t - kt + 1, (h - kh) / sh + 1, (w - kw) / sw + 1);
        let pooled = after_conv.0 / cfg.temporal_pools[b];
        if pooled == 0 {
            return Err(Error::ShapeClosure {
                block: b + 1,
                detail: format!(
                    "temporal pool {} empties {} remaining samples",
                    cfg.temporal_pools[b], after_conv.0
                ),
            });
        }
        let output = (pooled, after_conv.1, after_conv.2);
        plan.push(BlockShape {
            in_channels: channels,
            input: cur,
            kernel: (kt, kh, kw),
            after_conv,
            output,
        });
        channels = cfg.filters[b];
        cur = output;
    }
    if (cur.1, cur.2) != (1, 1) {
        return Err(Error::ShapeClosure {
            block: BLOCKS,
            detail: format!("spatial output is {}x{}, expected 1x1", cur.1, cur.2),
        });
    }
    Ok(plan)
}

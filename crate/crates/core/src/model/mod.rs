//! Feature extractor and classification head.
//!
//! ```text
//! input [N,1,T,H,W]
//!   -> block 1..3 (conv3d -> BN -> ELU -> temporal avg-pool -> dropout)
//!   -> spatial-channel attention, x + x * sigmoid(sa + ca)
//!   -> block 4 -> global average pool -> features [N, F4]
//!   -> FC F4->1 -> sigmoid
//! ```
//!
//! Trainable parameter count for filters `F1..F4`, input channels
//! `C1 = 1, Ci = F(i-1)`, kernels `kt_i x kh_i x kw_i`, attention channels
//! `Fa = F3`, ratio `r` and final grid `H3 x W3` (block-3 output):
//!
//! | group      | count                                  |
//! |------------|----------------------------------------|
//! | block i    | `Fi*Ci*kt_i*kh_i*kw_i + Fi + 2*Fi`     |
//! | spatial FC | `(H3*W3)^2 + H3*W3`                    |
//! | SE         | `2*Fa*(Fa/r) + Fa/r + Fa`              |
//! | classifier | `F4 + 1`                               |
//!
//! plus `2*Fi` running-statistic buffers per block.

mod config;

pub use config::{shape_plan, BlockShape, DadlNetConfig, BLOCKS, TEMPORAL_KERNEL_FRACTIONS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{fan_uniform, Bound, ParamSet};
use crate::tensor::{BatchNormMode, BatchStats, Tape, Tensor, Var};

/// Forward-pass mode.
pub enum Mode<'r> {
    /// Batch statistics and dropout driven by the given generator.
    Train(&'r mut dyn rand::RngCore),
    /// Running statistics, no dropout; a pure function of the inputs.
    Eval,
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Feature-extractor output plus the batch statistics each block saw.
pub struct Features {
    pub features: Var,
    pub bn_stats: Vec<(usize, BatchStats)>,
}

/// All learnable weights and buffers of the extractor and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct DadlNetParams {
    pub config: DadlNetConfig,
    /// `(timesteps, rows, cols)` of one input sample.
    pub input_shape: (usize, usize, usize),
    pub params: ParamSet,
}

pub fn block_name(b: usize, leaf: &str) -> String {
    format!("block{}.{leaf}", b + 1)
}

impl DadlNetParams {
    pub fn build(config: &DadlNetConfig, input_shape: (usize, usize, usize), seed: u64) -> Result<Self> {
        let plan = shape_plan(config, input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (b, shape) in plan.iter().enumerate() {
            let f = config.filters[b];
            let c = shape.in_channels;
            let (kt, kh, kw) = shape.kernel;
            let field = kt * kh * kw;
            params.insert(
                block_name(b, "conv.weight"),
                fan_uniform(&[f, c, kt, kh, kw], c * field, f * field, &mut rng),
            );
            params.insert(block_name(b, "conv.bias"), Tensor::zeros([f]));
            params.insert(block_name(b, "bn.gamma"), Tensor::full([f], 1.0));
            params.insert(block_name(b, "bn.beta"), Tensor::zeros([f]));
            params.insert(block_name(b, "bn.running_mean"), Tensor::zeros([f]));
            params.insert(block_name(b, "bn.running_var"), Tensor::full([f], 1.0));
        }
        let (_, h3, w3) = plan[2].output;
        let cells = h3 * w3;
        params.insert(
            "attention.spatial.weight",
            fan_uniform(&[cells, cells], cells, cells, &mut rng),
        );
        params.insert("attention.spatial.bias", Tensor::zeros([cells]));
        let fa = config.attention_channels();
        let fr = fa / config.se_ratio;
        params.insert("attention.se.squeeze.weight", fan_uniform(&[fa, fr], fa, fr, &mut rng));
        params.insert("attention.se.squeeze.bias", Tensor::zeros([fr]));
        params.insert("attention.se.excite.weight", fan_uniform(&[fr, fa], fr, fa, &mut rng));
        params.insert("attention.se.excite.bias", Tensor::zeros([fa]));
        let f4 = config.feature_dim();
        params.insert("classifier.weight", fan_uniform(&[f4, 1], f4, 1, &mut rng));
        params.insert("classifier.bias", Tensor::zeros([1]));
        Ok(DadlNetParams {
            config: config.clone(),
            input_shape,
            params,
        })
    }

    pub fn plan(&self) -> Result<Vec<BlockShape>> {
        shape_plan(&self.config, self.input_shape)
    }

    /// Records the learnable parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(&str) -> bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// conv3d -> BN -> ELU -> temporal average pool -> dropout.
    pub fn conv_block(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        b: usize,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let w = bound.var(&block_name(b, "conv.weight"))?;
        let bias = bound.var(&block_name(b, "conv.bias"))?;
        let gamma = bound.var(&block_name(b, "bn.gamma"))?;
        let beta = bound.var(&block_name(b, "bn.beta"))?;
        let (sh, sw) = self.config.spatial_strides[b];
        let y = tape.conv3d(x, w, bias, (1, sh, sw))?;
        let rm = self.params.require(&block_name(b, "bn.running_mean"))?;
        let rv = self.params.require(&block_name(b, "bn.running_var"))?;
        let bn_mode = if mode.is_training() {
            BatchNormMode::Train
        } else {
            BatchNormMode::Eval {
                mean: rm.data(),
                var: rv.data(),
            }
        };
        let (y, stats) = tape.batch_norm(y, gamma, beta, bn_mode, self.config.bn_eps)?;
        let y = tape.elu(y);
        let pool = self.config.temporal_pools[b];
        let y = if pool > 1 { tape.avg_pool3d(y, (pool, 1, 1))? } else { y };
        let y = match mode {
            Mode::Train(rng) => tape.dropout(y, self.config.dropout_p, true, &mut **rng)?,
            Mode::Eval => y,
        };
        Ok((y, stats))
    }

    /// Per-cell logits `[N,1,1,H,W]`: mean over filters and time, then one
    /// FC layer over the flattened grid.
    pub fn spatial_attention(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.value(x).shape().to_vec();
        let (n, h, w) = (s[0], s[3], s[4]);
        let pooled = tape.mean_axes(x, &[1, 2])?;
        let flat = tape.reshape(pooled, &[n, h * w])?;
        let wv = bound.var("attention.spatial.weight")?;
        let bv = bound.var("attention.spatial.bias")?;
        let logits = tape.linear(flat, wv, bv)?;
        tape.reshape(logits, &[n, 1, 1, h, w])
    }

    /// Per-channel squeeze-and-excitation logits `[N,F,1,1,1]`.
    pub fn channel_attention(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.value(x).shape().to_vec();
        let (n, f) = (s[0], s[1]);
        if f % self.config.se_ratio != 0 {
            return Err(Error::invalid(format!(
                "se ratio {} does not divide {f} channels",
                self.config.se_ratio
            )));
        }
        let pooled = tape.global_avg_pool(x)?;
        let sq = tape.linear(
            pooled,
            bound.var("attention.se.squeeze.weight")?,
            bound.var("attention.se.squeeze.bias")?,
        )?;
        let sq = tape.relu(sq);
        let ex = tape.linear(
            sq,
            bound.var("attention.se.excite.weight")?,
            bound.var("attention.se.excite.bias")?,
        )?;
        tape.reshape(ex, &[n, f, 1, 1, 1])
    }

    pub fn extract_features(&self, tape: &mut Tape, bound: &Bound, x: Var, mode: &mut Mode<'_>) -> Result<Features> {
        let expect = self.input_shape;
        let s = tape.value(x).shape();
        if s.len() != 5 || s[1] != 1 || (s[2], s[3], s[4]) != expect {
            return Err(Error::Dimension {
                op: "extract_features",
                axis: "input".into(),
                detail: format!("expected [N,1,{},{},{}], got {s:?}", expect.0, expect.1, expect.2),
            });
        }
        let mut bn_stats = Vec::new();
        let mut y = x;
        for b in 0..BLOCKS {
            if b == 3 {
                let sa = self.spatial_attention(tape, bound, y)?;
                let ca = self.channel_attention(tape, bound, y)?;
                y = attention_fuse(tape, y, sa, ca)?;
            }
            let (out, stats) = self.conv_block(tape, bound, y, b, mode)?;
            if let Some(st) = stats {
                bn_stats.push((b, st));
            }
            y = out;
        }
        let features = tape.global_avg_pool(y)?;
        Ok(Features { features, bn_stats })
    }

    /// Probability of class 1 for each feature row, shape `[N]`.
    pub fn classify(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
        let n = tape.value(features).shape()[0];
        let logit = tape.linear(features, bound.var("classifier.weight")?, bound.var("classifier.bias")?)?;
        let p = tape.sigmoid(logit);
        tape.reshape(p, &[n])
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_bn_stats(&mut self, stats: &[(usize, BatchStats)]) -> Result<()> {
        let momentum = self.config.bn_momentum;
        for (b, st) in stats {
            let mut rm = self.params.require(&block_name(*b, "bn.running_mean"))?.clone();
            let mut rv = self.params.require(&block_name(*b, "bn.running_var"))?.clone();
            st.blend_into(rm.data_mut(), rv.data_mut(), momentum);
            self.params.insert(block_name(*b, "bn.running_mean"), rm);
            self.params.insert(block_name(*b, "bn.running_var"), rv);
        }
        Ok(())
    }

    /// Inference-mode features `[N, F4]` for a batch `[N,1,T,H,W]`.
    pub fn features(&self, batch: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &|_| false);
        let x = tape.leaf(batch, false);
        let out = self.extract_features(&mut tape, &bound, x, &mut Mode::Eval)?;
        Ok(tape.value(out.features).clone())
    }

    /// Inference-mode class-1 probabilities for a batch `[N,1,T,H,W]`.
    pub fn predict_proba(&self, batch: Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &|_| false);
        let x = tape.leaf(batch, false);
        let out = self.extract_features(&mut tape, &bound, x, &mut Mode::Eval)?;
        let p = self.classify(&mut tape, &bound, out.features)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Count of learnable (non-buffer) scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| !crate::params::is_buffer(k))
            .map(|(_, v)| v.numel())
            .sum()
    }
}

/// `x + x * sigmoid(sa + ca)` with `sa: [N,1,1,H,W]`, `ca: [N,F,1,1,1]`.
pub fn attention_fuse(tape: &mut Tape, x: Var, sa: Var, ca: Var) -> Result<Var> {
    let logits = tape.add(sa, ca)?;
    let gate = tape.sigmoid(logits);
    let gated = tape.mul(x, gate)?;
    tape.add(x, gated)
}

/// Closed-form trainable parameter count (see the module table).
pub fn parameter_count(config: &DadlNetConfig, input_shape: (usize, usize, usize)) -> Result<usize> {
    let plan = shape_plan(config, input_shape)?;
    let mut total = 0;
    for (b, s) in plan.iter().enumerate() {
        let f = config.filters[b];
        let (kt, kh, kw) = s.kernel;
        total += f * s.in_channels * kt * kh * kw + f + 2 * f;
    }
    let cells = plan[2].output.1 * plan[2].output.2;
    let fa = config.attention_channels();
    let fr = fa / config.se_ratio;
    total += cells * cells + cells;
    total += 2 * fa * fr + fr + fa;
    total += config.feature_dim() + 1;
    Ok(total)
}

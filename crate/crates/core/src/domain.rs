//! Dynamic domain adaptation head.
//!
//! ```text
//! features [N, D] -> buffer FC D->Db -> per source i:
//!     DSA_i: FC Db->Da -> ELU -> FC Da->Da   (latent z_i, aligned by MMD)
//!     DSC_i: FC Da->1 -> sigmoid             (source-i classifier)
//! ```
//!
//! Parameter count: `D*Db + Db + K*(Db*Da + Da + Da*Da + Da + Da + 1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{fan_uniform, Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Multi-bandwidth Gaussian kernel around the median pairwise squared
/// distance of the pooled samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmdConfig {
    pub bandwidth_multipliers: Vec<f64>,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            bandwidth_multipliers: DEFAULT_MULTIPLIERS.to_vec(),
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_multipliers.is_empty() || self.bandwidth_multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config(format!(
                "bandwidth multipliers must be nonempty and positive, got {:?}",
                self.bandwidth_multipliers
            )));
        }
        Ok(())
    }
}

/// Squared MMD between two sample sets `[Ns, D]` and `[Nt, D]`.
pub fn mmd2(xs: &Tensor, xt: &Tensor, cfg: &MmdConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(xs.clone(), false);
    let b = tape.leaf(xt.clone(), false);
    let m = tape.mmd2(a, b, &cfg.bandwidth_multipliers)?;
    Ok(tape.value(m).data()[0])
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.leaf(Tensor::new(vec![p.len()], p.to_vec())?, false);
    let l = tape.bce(pv, y)?;
    Ok(tape.value(l).data()[0])
}

/// Labeled source feature sets plus the target features.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBundle {
    sources: Vec<(Tensor, Vec<f64>)>,
    target: Tensor,
    target_labels: Option<Vec<f64>>,
}

impl DomainBundle {
    pub fn new(sources: Vec<(Tensor, Vec<f64>)>, target: Tensor, target_labels: Option<Vec<f64>>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("domain bundle needs at least one source"));
        }
        let d = feature_dim(&target, "target")?;
        if target.shape()[0] < 2 {
            return Err(Error::invalid("target needs at least 2 samples"));
        }
        if let Some(y) = &target_labels {
            check_labels(y, target.shape()[0], "target")?;
        }
        for (i, (x, y)) in sources.iter().enumerate() {
            let name = format!("source {i}");
            if feature_dim(x, &name)? != d {
                return Err(Error::Shape {
                    op: "domain_bundle",
                    lhs: x.shape().to_vec(),
                    rhs: target.shape().to_vec(),
                });
            }
            if x.shape()[0] < 2 {
                return Err(Error::invalid(format!("{name} needs at least 2 samples")));
            }
            check_labels(y, x.shape()[0], &name)?;
        }
        Ok(DomainBundle {
            sources,
            target,
            target_labels,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn dim(&self) -> usize {
        self.target.shape()[1]
    }

    pub fn sources(&self) -> &[(Tensor, Vec<f64>)] {
        &self.sources
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }

    pub fn target_labels(&self) -> Option<&[f64]> {
        self.target_labels.as_deref()
    }
}

fn feature_dim(x: &Tensor, name: &str) -> Result<usize> {
    if x.ndim() != 2 {
        return Err(Error::Dimension {
            op: "domain_bundle",
            axis: "rank".into(),
            detail: format!("{name} features must be [N, D], got {:?}", x.shape()),
        });
    }
    Ok(x.shape()[1])
}

fn check_labels(y: &[f64], n: usize, name: &str) -> Result<()> {
    if y.len() != n {
        return Err(Error::invalid(format!("{name}: {} labels for {n} samples", y.len())));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{name}: labels must be 0 or 1")));
    }
    Ok(())
}

/// Per-term weights of the head objective
/// `(1/K) * sum_i (ce * ce_i + mmd * mmd_i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub mmd: f64,
}

impl LossWeights {
    pub fn joint(lambda: f64) -> Self {
        LossWeights { ce: 1.0, mmd: lambda }
    }
}

/// Loss nodes recorded on a tape.
pub struct DdaLossVars {
    pub total: Var,
    /// `(ce_i, mmd_i)`; a term is `None` when its weight is zero.
    pub per_source: Vec<(Option<Var>, Option<Var>)>,
}

/// Scalar loss values.
#[derive(Clone, Debug, PartialEq)]
pub struct DdaLosses {
    pub total: f64,
    pub per_source: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdaHead {
    pub num_sources: usize,
    pub input_dim: usize,
    pub buffer_dim: usize,
    pub adapter_dim: usize,
    pub params: ParamSet,
}

pub const BUFFER_PREFIX: &str = "buffer.";

pub fn dsa_prefix(i: usize) -> String {
    format!("dsa{i}.")
}

pub fn dsc_prefix(i: usize) -> String {
    format!("dsc{i}.")
}

/// Closed-form parameter count of a head.
pub fn head_parameter_count(num_sources: usize, d: usize, db: usize, da: usize) -> usize {
    d * db + db + num_sources * (db * da + da + da * da + da + da + 1)
}

pub fn build_dda(num_sources: usize, d: usize, db: usize, da: usize, seed: u64) -> Result<DdaHead> {
    if num_sources < 1 {
        return Err(Error::invalid("the adaptation head needs at least one source domain"));
    }
    if d == 0 || db == 0 || da == 0 {
        return Err(Error::invalid(format!(
            "head widths must be >= 1, got D={d} Db={db} Da={da}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    params.insert("buffer.weight", fan_uniform(&[d, db], d, db, &mut rng));
    params.insert("buffer.bias", Tensor::zeros([db]));
    for i in 0..num_sources {
        let a = dsa_prefix(i);
        params.insert(format!("{a}fc1.weight"), fan_uniform(&[db, da], db, da, &mut rng));
        params.insert(format!("{a}fc1.bias"), Tensor::zeros([da]));
        params.insert(format!("{a}fc2.weight"), fan_uniform(&[da, da], da, da, &mut rng));
        params.insert(format!("{a}fc2.bias"), Tensor::zeros([da]));
        let c = dsc_prefix(i);
        params.insert(format!("{c}weight"), fan_uniform(&[da, 1], da, 1, &mut rng));
        params.insert(format!("{c}bias"), Tensor::zeros([1]));
    }
    Ok(DdaHead {
        num_sources,
        input_dim: d,
        buffer_dim: db,
        adapter_dim: da,
        params,
    })
}

impl DdaHead {
    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(&str) -> bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    pub fn buffer(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let d = tape.value(x).shape();
        if d.len() != 2 || d[1] != self.input_dim {
            return Err(Error::Dimension {
                op: "dda_head",
                axis: "D".into(),
                detail: format!("expected [N, {}], got {d:?}", self.input_dim),
            });
        }
        tape.linear(x, bound.var("buffer.weight")?, bound.var("buffer.bias")?)
    }

    /// Latent features of adapter `i` for buffered input `h`.
    pub fn adapter(&self, tape: &mut Tape, bound: &Bound, h: Var, i: usize) -> Result<Var> {
        let a = dsa_prefix(i);
        let z = tape.linear(
            h,
            bound.var(&format!("{a}fc1.weight"))?,
            bound.var(&format!("{a}fc1.bias"))?,
        )?;
        let z = tape.elu(z);
        tape.linear(
            z,
            bound.var(&format!("{a}fc2.weight"))?,
            bound.var(&format!("{a}fc2.bias"))?,
        )
    }

    /// Class-1 probabilities `[N]` of classifier `i` on latent `z`.
    pub fn classifier(&self, tape: &mut Tape, bound: &Bound, z: Var, i: usize) -> Result<Var> {
        let c = dsc_prefix(i);
        let n = tape.value(z).shape()[0];
        let logit = tape.linear(z, bound.var(&format!("{c}weight"))?, bound.var(&format!("{c}bias"))?)?;
        let p = tape.sigmoid(logit);
        tape.reshape(p, &[n])
    }

    /// Records the head objective for `bundle` on `tape`.
    pub fn loss_vars(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        bundle: &DomainBundle,
        weights: LossWeights,
        mmd: &MmdConfig,
    ) -> Result<DdaLossVars> {
        if bundle.num_sources() != self.num_sources {
            return Err(Error::invalid(format!(
                "bundle has {} sources, head has {}",
                bundle.num_sources(),
                self.num_sources
            )));
        }
        if !(weights.ce >= 0.0 && weights.mmd >= 0.0) {
            return Err(Error::invalid(format!("loss weights must be >= 0, got {weights:?}")));
        }
        let ht = if weights.mmd > 0.0 {
            let xt = tape.leaf(bundle.target.clone(), false);
            Some(self.buffer(tape, bound, xt)?)
        } else {
            None
        };
        let mut terms = Vec::new();
        let mut per_source = Vec::with_capacity(self.num_sources);
        for (i, (xs, ys)) in bundle.sources.iter().enumerate() {
            let xv = tape.leaf(xs.clone(), false);
            let hs = self.buffer(tape, bound, xv)?;
            let zs = self.adapter(tape, bound, hs, i)?;
            let ce = if weights.ce > 0.0 {
                let p = self.classifier(tape, bound, zs, i)?;
                let l = tape.bce(p, ys)?;
                terms.push(tape.scale(l, weights.ce));
                Some(l)
            } else {
                None
            };
            let md = match ht {
                Some(ht) => {
                    let zt = self.adapter(tape, bound, ht, i)?;
                    let m = tape.mmd2(zs, zt, &mmd.bandwidth_multipliers)?;
                    terms.push(tape.scale(m, weights.mmd));
                    Some(m)
                }
                None => None,
            };
            per_source.push((ce, md));
        }
        let mut total = match terms.first() {
            Some(&t) => t,
            None => return Err(Error::invalid("both loss weights are zero")),
        };
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let total = tape.scale(total, 1.0 / self.num_sources as f64);
        Ok(DdaLossVars { total, per_source })
    }

    /// Mean class-1 probability over all source classifiers.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &|_| false);
        let xv = tape.leaf(x.clone(), false);
        let h = self.buffer(&mut tape, &bound, xv)?;
        let mut acc = vec![0.0; x.shape()[0]];
        for i in 0..self.num_sources {
            let z = self.adapter(&mut tape, &bound, h, i)?;
            let p = self.classifier(&mut tape, &bound, z, i)?;
            for (a, v) in acc.iter_mut().zip(tape.value(p).data()) {
                *a += v;
            }
        }
        let k = self.num_sources as f64;
        Ok(acc.into_iter().map(|v| v / k).collect())
    }
}

/// Joint objective `(1/K) * sum_i (ce_i + lambda * mmd_i)` and its pieces.
pub fn dda_losses(head: &DdaHead, bundle: &DomainBundle, lambda: f64, mmd: &MmdConfig) -> Result<DdaLosses> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut tape = Tape::new();
    let bound = head.bind(&mut tape, &|_| false);
    // mmd is always reported, even when lambda is zero
    let vars = head.loss_vars(&mut tape, &bound, bundle, LossWeights { ce: 1.0, mmd: 1.0 }, mmd)?;
    let mut total = 0.0;
    let mut per_source = Vec::with_capacity(vars.per_source.len());
    for (ce, md) in vars.per_source {
        let ce = ce.map(|v| tape.value(v).data()[0]).unwrap_or(0.0);
        let md = md.map(|v| tape.value(v).data()[0]).unwrap_or(0.0);
        total += ce + lambda * md;
        per_source.push((ce, md));
    }
    Ok(DdaLosses {
        total: total / head.num_sources as f64,
        per_source,
    })
}

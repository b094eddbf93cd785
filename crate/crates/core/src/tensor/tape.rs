use rand::Rng;

use super::conv::{self, ConvGeom};
use super::loss::{self, MmdCache};
use super::norm::{self, BatchNormMode, BatchStats, BnCache, BnLayout};
use super::{broadcast_map, broadcast_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        layout: BnLayout,
        cache: BnCache,
    },
    Elu(Var),
    Sigmoid(Var),
    Relu(Var),
    AvgPool3d {
        x: Var,
        window: (usize, usize, usize),
    },
    GlobalAvgPool(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
        map_a: Vec<usize>,
        map_b: Vec<usize>,
    },
    Mul {
        a: Var,
        b: Var,
        map_a: Vec<usize>,
        map_b: Vec<usize>,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum(Var),
    MeanAxes {
        x: Var,
        map: Vec<usize>,
        count: usize,
    },
    Reshape(Var),
    Bce {
        p: Var,
        targets: Vec<f64>,
    },
    Mmd {
        xs: Var,
        xt: Var,
        cache: Box<MmdCache>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records every evaluated operation in topological order.
///
/// A tape and the values on it belong to one worker; independent tapes may
/// be used concurrently.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_raw(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor { shape, data };
        self.push_raw(value, requires_grad, op)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Valid 3D convolution of `[N,C,T,H,W]` by `[F,C,kt,kh,kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize, usize)) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), self.shape(b), stride)?;
        let out = conv::forward(&geom, self.data(x), self.data(w), self.data(b));
        Ok(self.push(geom.out_shape(), out, &[x, w, b], Op::Conv3d { x, w, b, geom }))
    }

    /// Batch normalization over axis 1. In training mode the batch
    /// statistics are returned so the caller can update running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let layout = BnLayout::new(self.shape(x), self.shape(gamma), self.shape(beta))?;
        let (out, cache, stats) = norm::forward(&layout, self.data(x), self.data(gamma), self.data(beta), mode, eps)?;
        let shape = self.shape(x).to_vec();
        let v = self.push(
            shape,
            out,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                cache,
            },
        );
        Ok((v, stats))
    }

    /// Exponential linear unit with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self
            .data(x)
            .iter()
            .map(|&v| if v >= 0.0 { v } else { v.exp_m1() })
            .collect();
        self.push(self.shape(x).to_vec(), out, &[x], Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), out, &[x], Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(self.shape(x).to_vec(), out, &[x], Op::Relu(x))
    }

    /// Non-overlapping average pooling over the last three axes of a 5D
    /// tensor; trailing remainders are dropped.
    pub fn avg_pool3d(&mut self, x: Var, window: (usize, usize, usize)) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 5 {
            return Err(Error::Dimension {
                op: "avg_pool3d",
                axis: "rank".into(),
                detail: format!("expected [N,C,T,H,W], got {s:?}"),
            });
        }
        let (pt, ph, pw) = window;
        for (axis, p, d) in [("T", pt, s[2]), ("H", ph, s[3]), ("W", pw, s[4])] {
            if p == 0 {
                return Err(Error::invalid(format!("avg_pool3d window on axis {axis} is 0")));
            }
            if p > d {
                return Err(Error::Dimension {
                    op: "avg_pool3d",
                    axis: axis.into(),
                    detail: format!("window {p} exceeds extent {d}"),
                });
            }
        }
        let (ot, oh, ow) = (s[2] / pt, s[3] / ph, s[4] / pw);
        let xd = self.data(x);
        let scale = 1.0 / (pt * ph * pw) as f64;
        let mut out = vec![0.0; s[0] * s[1] * ot * oh * ow];
        let mut k = 0;
        for nc in 0..s[0] * s[1] {
            let base = nc * s[2] * s[3] * s[4];
            for t in 0..ot {
                for h in 0..oh {
                    for w in 0..ow {
                        let mut acc = 0.0;
                        for dt in 0..pt {
                            for dh in 0..ph {
                                let row = base + ((t * pt + dt) * s[3] + h * ph + dh) * s[4] + w * pw;
                                acc += xd[row..row + pw].iter().sum::<f64>();
                            }
                        }
                        out[k] = acc * scale;
                        k += 1;
                    }
                }
            }
        }
        Ok(self.push(vec![s[0], s[1], ot, oh, ow], out, &[x], Op::AvgPool3d { x, window }))
    }

    /// Mean over every axis after the first two: `[N,F,...] -> [N,F]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Dimension {
                op: "global_avg_pool",
                axis: "rank".into(),
                detail: format!("expected [N,F,...], got {s:?}"),
            });
        }
        let inner: usize = s[2..].iter().product();
        let out = self
            .data(x)
            .chunks(inner)
            .map(|c| c.iter().sum::<f64>() / inner as f64)
            .collect();
        Ok(self.push(vec![s[0], s[1]], out, &[x], Op::GlobalAvgPool(x)))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in training and
    /// the op is the identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.data(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        Ok(self.push(self.shape(x).to_vec(), out, &[x], Op::Dropout { x, mask }))
    }

    /// `x W + b` for `x: [N,D]`, `W: [D,K]`, `b: [K]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::Dimension {
                op: "fully_connected",
                axis: "rank".into(),
                detail: format!("expected x [N,D] and W [D,K], got {xs:?} and {ws:?}"),
            });
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        if ws[0] != d {
            return Err(Error::Dimension {
                op: "fully_connected",
                axis: "D".into(),
                detail: format!("x has {d} columns but W has {} rows", ws[0]),
            });
        }
        if bs != [k] {
            return Err(Error::Dimension {
                op: "fully_connected",
                axis: "K".into(),
                detail: format!("bias {bs:?} does not match {k} outputs"),
            });
        }
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = Vec::with_capacity(n * k);
        for row in xd.chunks(d) {
            let mut o = bd.to_vec();
            for (xi, wrow) in row.iter().zip(wd.chunks(k)) {
                for (oj, wj) in o.iter_mut().zip(wrow) {
                    *oj += xi * wj;
                }
            }
            out.extend(o);
        }
        Ok(self.push(vec![n, k], out, &[x, w, b], Op::Linear { x, w, b }))
    }

    /// Elementwise sum with broadcasting over singleton axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, map_a, map_b) = self.broadcast("add", a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let out = map_a.iter().zip(&map_b).map(|(&i, &j)| ad[i] + bd[j]).collect();
        Ok(self.push(shape, out, &[a, b], Op::Add { a, b, map_a, map_b }))
    }

    /// Elementwise product with broadcasting over singleton axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, map_a, map_b) = self.broadcast("mul", a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let out = map_a.iter().zip(&map_b).map(|(&i, &j)| ad[i] * bd[j]).collect();
        Ok(self.push(shape, out, &[a, b], Op::Mul { a, b, map_a, map_b }))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let map_a = broadcast_map(self.shape(a), &shape);
        let map_b = broadcast_map(self.shape(b), &shape);
        Ok((shape, map_a, map_b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        self.push(self.shape(x).to_vec(), out, &[x], Op::Scale { x, factor })
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(vec![1], vec![s], &[x], Op::Sum(x))
    }

    /// Mean over the given axes, keeping them as singletons.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if let Some(&bad) = axes.iter().find(|&&a| a >= s.len()) {
            return Err(Error::invalid(format!("mean_axes: axis {bad} out of range for {s:?}")));
        }
        let mut out_shape = s.clone();
        for &a in axes {
            out_shape[a] = 1;
        }
        let count: usize = axes.iter().map(|&a| s[a]).product::<usize>().max(1);
        let map = broadcast_map(&out_shape, &s);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (v, &o) in self.data(x).iter().zip(&map) {
            out[o] += v;
        }
        for o in out.iter_mut() {
            *o /= count as f64;
        }
        Ok(self.push(out_shape, out, &[x], Op::MeanAxes { x, map, count }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, &[x], Op::Reshape(x)))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let l = loss::bce_forward(self.data(p), targets)?;
        Ok(self.push(
            vec![1],
            vec![l],
            &[p],
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Biased squared MMD between the rows of `xs: [Ns,D]` and `xt: [Nt,D]`
    /// under a sum of Gaussian kernels whose widths are `multipliers`
    /// times the median pooled pairwise squared distance.
    pub fn mmd2(&mut self, xs: Var, xt: Var, multipliers: &[f64]) -> Result<Var> {
        let (ss, ts) = (self.shape(xs), self.shape(xt));
        if ss.len() != 2 || ts.len() != 2 || ss[1] != ts[1] {
            return Err(Error::Shape {
                op: "mmd2",
                lhs: ss.to_vec(),
                rhs: ts.to_vec(),
            });
        }
        let (ns, nt, d) = (ss[0], ts[0], ss[1]);
        let (v, cache) = loss::mmd_forward(self.data(xs), self.data(xt), ns, nt, d, multipliers)?;
        Ok(self.push(
            vec![1],
            vec![v],
            &[xs, xt],
            Op::Mmd {
                xs,
                xt,
                cache: Box::new(cache),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`; replaces any previous gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward: loss is not on this tape"));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor {
                    shape: self.nodes[v.0].value.shape.clone(),
                    data: delta,
                })
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let gd = g.data();
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut deltas: Vec<(Var, Vec<f64>)> = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                let grads = conv::backward(geom, self.data(*x), self.data(*w), gd);
                deltas.push((*x, grads.input));
                deltas.push((*w, grads.weight));
                deltas.push((*b, grads.bias));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                cache,
            } => {
                let (gx, gg, gb) = norm::backward(layout, cache, self.data(*gamma), gd);
                deltas.push((*x, gx));
                deltas.push((*gamma, gg));
                deltas.push((*beta, gb));
            }
            Op::Elu(x) => {
                let d = self
                    .data(*x)
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v >= 0.0 { g } else { g * v.exp() })
                    .collect();
                deltas.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let d = out.iter().zip(gd).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                deltas.push((*x, d));
            }
            Op::Relu(x) => {
                let d = self
                    .data(*x)
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                deltas.push((*x, d));
            }
            Op::AvgPool3d { x, window } => {
                let s = self.shape(*x);
                let (pt, ph, pw) = *window;
                let (ot, oh, ow) = (s[2] / pt, s[3] / ph, s[4] / pw);
                let scale = 1.0 / (pt * ph * pw) as f64;
                let mut d = vec![0.0; self.value(*x).numel()];
                let mut k = 0;
                for nc in 0..s[0] * s[1] {
                    let base = nc * s[2] * s[3] * s[4];
                    for t in 0..ot {
                        for h in 0..oh {
                            for w in 0..ow {
                                let gv = gd[k] * scale;
                                k += 1;
                                for dt in 0..pt {
                                    for dh in 0..ph {
                                        let row = base + ((t * pt + dt) * s[3] + h * ph + dh) * s[4] + w * pw;
                                        for e in &mut d[row..row + pw] {
                                            *e += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                deltas.push((*x, d));
            }
            Op::GlobalAvgPool(x) => {
                let inner = self.value(*x).numel() / gd.len();
                let d = gd
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / inner as f64, inner))
                    .collect();
                deltas.push((*x, d));
            }
            Op::Dropout { x, mask } => {
                deltas.push((*x, gd.iter().zip(mask).map(|(g, m)| g * m).collect()));
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, dd, k) = (xs[0], xs[1], ws[1]);
                let (xd, wd) = (self.data(*x), self.data(*w));
                let mut gx = vec![0.0; n * dd];
                let mut gw = vec![0.0; dd * k];
                let mut gb = vec![0.0; k];
                for r in 0..n {
                    let grow = &gd[r * k..(r + 1) * k];
                    let xrow = &xd[r * dd..(r + 1) * dd];
                    for (j, gbj) in gb.iter_mut().enumerate() {
                        *gbj += grow[j];
                    }
                    for di in 0..dd {
                        let wrow = &wd[di * k..(di + 1) * k];
                        gx[r * dd + di] = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        let gwrow = &mut gw[di * k..(di + 1) * k];
                        for (gwj, gj) in gwrow.iter_mut().zip(grow) {
                            *gwj += xrow[di] * gj;
                        }
                    }
                }
                deltas.push((*x, gx));
                deltas.push((*w, gw));
                deltas.push((*b, gb));
            }
            Op::Add { a, b, map_a, map_b } => {
                let mut da = vec![0.0; self.value(*a).numel()];
                let mut db = vec![0.0; self.value(*b).numel()];
                for ((&g, &i), &j) in gd.iter().zip(map_a).zip(map_b) {
                    da[i] += g;
                    db[j] += g;
                }
                deltas.push((*a, da));
                deltas.push((*b, db));
            }
            Op::Mul { a, b, map_a, map_b } => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for ((&g, &i), &j) in gd.iter().zip(map_a).zip(map_b) {
                    da[i] += g * bd[j];
                    db[j] += g * ad[i];
                }
                deltas.push((*a, da));
                deltas.push((*b, db));
            }
            Op::Scale { x, factor } => {
                deltas.push((*x, gd.iter().map(|g| g * factor).collect()));
            }
            Op::Sum(x) => {
                deltas.push((*x, vec![gd[0]; self.value(*x).numel()]));
            }
            Op::MeanAxes { x, map, count } => {
                let c = *count as f64;
                deltas.push((*x, map.iter().map(|&o| gd[o] / c).collect()));
            }
            Op::Reshape(x) => deltas.push((*x, gd.to_vec())),
            Op::Bce { p, targets } => {
                deltas.push((*p, loss::bce_backward(self.data(*p), targets, gd[0])));
            }
            Op::Mmd { xs, xt, cache } => {
                let (gs, gt) = loss::mmd_backward(cache, gd[0]);
                deltas.push((*xs, gs));
                deltas.push((*xt, gt));
            }
        }
        for (v, d) in deltas {
            self.accumulate(v, d);
        }
    }
}

/// Logistic function, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, gemm_acc, gemm_at_acc, gemm_bt_acc};
use super::{ParamId, ParamSet, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    RelPos {
        q: Var,
        table: Var,
        max_len: usize,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Var),
    MseTo(Var, Vec<f64>),
    LinComb(Vec<(Var, f64)>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    tracked: bool,
}

/// A tape of operations. Nodes are appended in execution order, which is a
/// topological order of the computation, so backward is a single reverse
/// sweep and is reproducible for a fixed sequence of calls.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is recorded (but that is not a parameter).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(self.params.get(id)),
            op: Op::Param(id),
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = kernels::add_row(self.value(a), self.value(row))?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = kernels::scale(self.value(a), c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = kernels::relu(self.value(a));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = kernels::sigmoid(self.value(a));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let out = kernels::softmax_lastdim(self.value(a))?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let ln = kernels::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat: ln.xhat,
            inv_std: ln.inv_std,
        };
        Ok(self.push(ln.out, op, &[x, gain, bias]))
    }

    pub fn relpos_scores(&mut self, q: Var, table: Var, max_len: usize) -> Result<Var> {
        let out = kernels::relpos_scores(self.value(q), self.value(table), max_len)?;
        Ok(self.push(out, Op::RelPos { q, table, max_len }, &[q, table]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = kernels::slice_cols(self.value(x), start, len)?;
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_cols(&vals)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = kernels::sum(self.value(a));
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mse_to(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let out = kernels::mse_to(self.value(pred), target)?;
        Ok(self.push(out, Op::MseTo(pred, target.to_vec()), &[pred]))
    }

    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let vals: Vec<(&Tensor, f64)> = terms.iter().map(|&(v, w)| (self.value(v), w)).collect();
        let out = kernels::lin_comb(&vals)?;
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(out, Op::LinComb(terms.to_vec()), &inputs))
    }

    /// Reverse sweep from a scalar `loss`, returning d(loss)/d(node) for
    /// every tracked node that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Lazily allocated accumulation buffer for an input node.
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> Option<&'a mut Vec<f64>> {
            let n = &nodes[v.0];
            if !n.tracked {
                return None;
            }
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
        }

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if let Some(ga) = slot(grads, nodes, *a) {
                    gemm_bt_acc(g, bv.data(), m, n, k, ga);
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    gemm_at_acc(av.data(), g, m, k, n, gb);
                }
            }
            Op::MatMulBt(a, b) => {
                // c = a·bᵀ with a: m×k, b: n×k
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[0];
                if let Some(ga) = slot(grads, nodes, *a) {
                    gemm_acc(g, bv.data(), m, n, k, ga);
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    gemm_at_acc(g, av.data(), m, n, k, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = slot(grads, nodes, *v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gr) = slot(grads, nodes, *row) {
                    let n = gr.len();
                    for chunk in g.chunks_exact(n) {
                        gr.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += c * x);
                }
            }
            Op::Relu(a) => {
                let av = nodes[a.0].value.data();
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), &s) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((orow, grow), yrow) in ga
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.chunks_exact(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = nodes[gain.0].value.len();
                let gv = nodes[gain.0].value.data();
                if let Some(gx) = slot(grads, nodes, *x) {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dx = 0.0;
                        let mut sum_dx_x = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            sum_dx += dxh;
                            sum_dx_x += dxh * xr[j];
                        }
                        let out = &mut gx[r * d..(r + 1) * d];
                        let df = d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            out[j] += inv / df * (df * dxh - sum_dx - xr[j] * sum_dx_x);
                        }
                    }
                }
                if let Some(gg) = slot(grads, nodes, *gain) {
                    for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if let Some(gb) = slot(grads, nodes, *bias) {
                    for gr in g.chunks_exact(d) {
                        gb.iter_mut().zip(gr).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::RelPos { q, table, max_len } => {
                let (qv, tv) = (&nodes[q.0].value, &nodes[table.0].value);
                let (t, dk) = (qv.shape()[0], qv.shape()[1]);
                let width = 2 * t - 1;
                let mut dproj = vec![0.0; t * width];
                for m in 0..t {
                    for n in 0..t {
                        dproj[m * width + m + t - 1 - n] += g[m * t + n];
                    }
                }
                if let Some(gq) = slot(grads, nodes, *q) {
                    let local = kernels::relpos_gather(tv.data(), dk, t, *max_len);
                    gemm_acc(&dproj, &local, t, width, dk, gq);
                }
                if let Some(gt) = slot(grads, nodes, *table) {
                    let mut dlocal = vec![0.0; width * dk];
                    gemm_at_acc(&dproj, qv.data(), t, width, dk, &mut dlocal);
                    let lim = *max_len as isize - 1;
                    for (s, off) in (-(t as isize - 1)..=(t as isize - 1)).enumerate() {
                        let idx = (off.clamp(-lim, lim) + lim) as usize;
                        let dst = &mut gt[idx * dk..(idx + 1) * dk];
                        dst.iter_mut()
                            .zip(&dlocal[s * dk..(s + 1) * dk])
                            .for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let c = nodes[x.0].value.shape()[1];
                let len = node.value.shape()[1];
                if let Some(gx) = slot(grads, nodes, *x) {
                    for (orow, grow) in gx.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        orow[*start..start + len]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let pc = nodes[p.0].value.shape()[1];
                    if let Some(gp) = slot(grads, nodes, *p) {
                        for (orow, grow) in gp.chunks_exact_mut(pc).zip(g.chunks_exact(total)) {
                            orow.iter_mut()
                                .zip(&grow[offset..offset + pc])
                                .for_each(|(o, v)| *o += v);
                        }
                    }
                    offset += pc;
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::MseTo(pred, target) => {
                let pv = nodes[pred.0].value.data();
                let c = 2.0 * g[0] / pv.len() as f64;
                if let Some(gp) = slot(grads, nodes, *pred) {
                    for ((o, p), t) in gp.iter_mut().zip(pv).zip(target) {
                        *o += c * (p - t);
                    }
                }
            }
            Op::LinComb(terms) => {
                for (v, w) in terms {
                    if let Some(gv) = slot(grads, nodes, *v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += w * x);
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a node, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients, summed over every use of each parameter.
    pub fn param_grads(&self) -> ParamGrads {
        let mut out: Vec<(ParamId, Vec<f64>)> = Vec::new();
        for &(id, node) in &self.params {
            let Some(g) = self.nodes[node].as_ref() else { continue };
            match out.iter_mut().find(|(p, _)| *p == id) {
                Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, x)| *a += x),
                None => out.push((id, g.clone())),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        ParamGrads(out)
    }

    /// Shorthand for accumulating [`Gradients::param_grads`] into `params`.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        params.accumulate(&self.param_grads(), 1.0);
    }
}

/// Owned gradients for the parameters a loss touched, in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads(pub Vec<(ParamId, Vec<f64>)>);

impl ParamGrads {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.0.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

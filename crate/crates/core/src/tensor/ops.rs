use alloc::borrow::Cow;
use alloc::vec::Vec;

use super::kernels;
use super::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::Result;

/// The operation set the separator is written against.
///
/// Implemented by [`Graph`] (records for backward) and [`Eval`] (plain
/// evaluation). Every method of both implementations delegates to the same
/// kernel, so the two produce identical bits for identical inputs.
pub trait Ops {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;
    fn param(&mut self, id: ParamId) -> Self::V;
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn matmul_bt(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add_row(&mut self, a: &Self::V, row: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn relu(&mut self, a: &Self::V) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn softmax_lastdim(&mut self, a: &Self::V) -> Result<Self::V>;
    fn layer_norm(&mut self, x: &Self::V, gain: &Self::V, bias: &Self::V, eps: f64) -> Result<Self::V>;
    fn relpos_scores(&mut self, q: &Self::V, table: &Self::V, max_len: usize) -> Result<Self::V>;
    fn slice_cols(&mut self, x: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V>;
}

impl Ops for Graph<'_> {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        Graph::value(self, *v)
    }
    fn param(&mut self, id: ParamId) -> Var {
        Graph::param(self, id)
    }
    fn constant(&mut self, t: Tensor) -> Var {
        Graph::constant(self, t)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::matmul(self, *a, *b)
    }
    fn matmul_bt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::matmul_bt(self, *a, *b)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::add(self, *a, *b)
    }
    fn add_row(&mut self, a: &Var, row: &Var) -> Result<Var> {
        Graph::add_row(self, *a, *row)
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        Graph::scale(self, *a, c)
    }
    fn relu(&mut self, a: &Var) -> Var {
        Graph::relu(self, *a)
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        Graph::sigmoid(self, *a)
    }
    fn softmax_lastdim(&mut self, a: &Var) -> Result<Var> {
        Graph::softmax_lastdim(self, *a)
    }
    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        Graph::layer_norm(self, *x, *gain, *bias, eps)
    }
    fn relpos_scores(&mut self, q: &Var, table: &Var, max_len: usize) -> Result<Var> {
        Graph::relpos_scores(self, *q, *table, max_len)
    }
    fn slice_cols(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        Graph::slice_cols(self, *x, start, len)
    }
    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        Graph::concat_cols(self, parts)
    }
}

/// Non-recording evaluation. Parameters are borrowed, never copied.
pub struct Eval<'p> {
    params: &'p ParamSet,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Eval { params }
    }

    /// Wraps an input without copying it.
    pub fn borrowed(&self, t: &'p Tensor) -> Cow<'p, Tensor> {
        Cow::Borrowed(t)
    }
}

type Val<'p> = Cow<'p, Tensor>;

impl<'p> Ops for Eval<'p> {
    type V = Val<'p>;

    fn value<'a>(&'a self, v: &'a Val<'p>) -> &'a Tensor {
        v
    }
    fn param(&mut self, id: ParamId) -> Val<'p> {
        Cow::Borrowed(self.params.get(id))
    }
    fn constant(&mut self, t: Tensor) -> Val<'p> {
        Cow::Owned(t)
    }
    fn matmul(&mut self, a: &Val<'p>, b: &Val<'p>) -> Result<Val<'p>> {
        kernels::matmul(a, b).map(Cow::Owned)
    }
    fn matmul_bt(&mut self, a: &Val<'p>, b: &Val<'p>) -> Result<Val<'p>> {
        kernels::matmul_bt(a, b).map(Cow::Owned)
    }
    fn add(&mut self, a: &Val<'p>, b: &Val<'p>) -> Result<Val<'p>> {
        kernels::add(a, b).map(Cow::Owned)
    }
    fn add_row(&mut self, a: &Val<'p>, row: &Val<'p>) -> Result<Val<'p>> {
        kernels::add_row(a, row).map(Cow::Owned)
    }
    fn scale(&mut self, a: &Val<'p>, c: f64) -> Val<'p> {
        Cow::Owned(kernels::scale(a, c))
    }
    fn relu(&mut self, a: &Val<'p>) -> Val<'p> {
        Cow::Owned(kernels::relu(a))
    }
    fn sigmoid(&mut self, a: &Val<'p>) -> Val<'p> {
        Cow::Owned(kernels::sigmoid(a))
    }
    fn softmax_lastdim(&mut self, a: &Val<'p>) -> Result<Val<'p>> {
        kernels::softmax_lastdim(a).map(Cow::Owned)
    }
    fn layer_norm(&mut self, x: &Val<'p>, gain: &Val<'p>, bias: &Val<'p>, eps: f64) -> Result<Val<'p>> {
        kernels::layer_norm(x, gain, bias, eps).map(|o| Cow::Owned(o.out))
    }
    fn relpos_scores(&mut self, q: &Val<'p>, table: &Val<'p>, max_len: usize) -> Result<Val<'p>> {
        kernels::relpos_scores(q, table, max_len).map(Cow::Owned)
    }
    fn slice_cols(&mut self, x: &Val<'p>, start: usize, len: usize) -> Result<Val<'p>> {
        kernels::slice_cols(x, start, len).map(Cow::Owned)
    }
    fn concat_cols(&mut self, parts: &[Val<'p>]) -> Result<Val<'p>> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| &**p).collect();
        kernels::concat_cols(&refs).map(Cow::Owned)
    }
}

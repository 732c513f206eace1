//! Reverse-mode differentiation over a closed set of operations.
//!
//! A [`Graph`] records eagerly evaluated nodes. Each node is one of a fixed
//! list of ops ([`Op`]), each with a hand-written adjoint. Values that are
//! computed outside the graph but still depend on graph nodes can be
//! recorded with [`Graph::opaque`]; the backward pass refuses to propagate
//! through them.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{attention_weights, dot};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f64> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Gradients keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Grad<S: Scalar = f64> {
    grads: BTreeMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Grad<S> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<S>)> {
        self.grads.iter_mut().map(|(&k, v)| (k, v))
    }

    /// Global L2 norm over all gradients.
    pub fn norm(&self) -> S {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .fold(S::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn scale(&mut self, k: S) {
        for t in self.grads.values_mut() {
            for x in t.data_mut() {
                *x *= k;
            }
        }
    }

    /// Accumulates `other` into `self`.
    pub fn accumulate(&mut self, other: &Grad<S>) -> Result<()> {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(mine) => mine.add_assign(g)?,
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Silu,
    Sigmoid,
    Relu,
    Square,
}

impl Nonlinearity {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Silu => x * sigmoid(x),
            Nonlinearity::Sigmoid => sigmoid(x),
            Nonlinearity::Relu => x.max(S::zero()),
            Nonlinearity::Square => x * x,
        }
    }

    /// Derivative at input `x`, given output `y = apply(x)`.
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Nonlinearity::Tanh => S::one() - y * y,
            Nonlinearity::Silu => {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            }
            Nonlinearity::Sigmoid => y * (S::one() - y),
            Nonlinearity::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Nonlinearity::Square => S::of(2.0) * x,
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Row partition for grouped attention: query rows `q[g]` attend only to
/// key rows `k[g]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGroups {
    pub query_ranges: Vec<std::ops::Range<usize>>,
    pub key_ranges: Vec<std::ops::Range<usize>>,
}

impl AttentionGroups {
    pub fn single(tq: usize, tk: usize) -> Self {
        Self {
            query_ranges: std::iter::once(0..tq).collect(),
            key_ranges: std::iter::once(0..tk).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op<S: Scalar> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    AddRow(NodeId, NodeId),
    SoftmaxRows(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        groups: Rc<AttentionGroups>,
        probs: Vec<Tensor<S>>,
    },
    Pointwise(NodeId, Nonlinearity),
    Gather(NodeId, Rc<Vec<usize>>),
    ScatterAdd(NodeId, Rc<Vec<usize>>),
    Concat(Vec<NodeId>),
    Mean(NodeId),
    Sum(NodeId),
    Opaque(String),
}

#[derive(Debug)]
struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    /// Whether any parameter is reachable below this node.
    live: bool,
}

/// An eagerly evaluated expression graph.
#[derive(Debug, Default)]
pub struct Graph<S: Scalar = f64> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[NodeId]) -> NodeId {
        let live = matches!(op, Op::Param(_)) || inputs.iter().any(|i| self.nodes[i.0].live);
        self.nodes.push(Node { value, op, live });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Constant, &[])
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, k: S) -> NodeId {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    /// `a[m×n] + bias[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = crate::ops::softmax_rows(self.value(a))?;
        Ok(self.push(v, Op::SoftmaxRows(a), &[a]))
    }

    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
        let (tq, _) = self.value(q).dims2()?;
        let (tk, _) = self.value(k).dims2()?;
        self.grouped_attention(q, k, v, Rc::new(AttentionGroups::single(tq, tk)))
    }

    /// Block-diagonal attention: each query group attends only to its key group.
    pub fn grouped_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        groups: Rc<AttentionGroups>,
    ) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, _) = qv.dims2()?;
        let (tk, _) = kv.dims2()?;
        let (tv, dv) = vv.dims2()?;
        if tv != tk {
            return Err(Error::dim("attention(k, v)", kv.shape(), vv.shape()));
        }
        if groups.query_ranges.len() != groups.key_ranges.len() {
            return Err(Error::Configuration(
                "attention groups: query and key partitions differ in length".into(),
            ));
        }
        let mut out = Tensor::zeros(&[tq, dv]);
        let mut probs = Vec::with_capacity(groups.query_ranges.len());
        for (qr, kr) in groups.query_ranges.iter().zip(&groups.key_ranges) {
            if qr.end > tq || kr.end > tk || kr.is_empty() || qr.is_empty() {
                return Err(Error::Configuration(format!(
                    "attention group {qr:?}/{kr:?} outside {tq}x{tk}"
                )));
            }
            let qg = rows(qv, qr.clone());
            let kg = rows(kv, kr.clone());
            let vg = rows(vv, kr.clone());
            let p = attention_weights(&qg, &kg, None)?;
            let og = p.matmul(&vg)?;
            out.data_mut()[qr.start * dv..qr.end * dv].copy_from_slice(og.data());
            probs.push(p);
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                groups,
                probs,
            },
            &[q, k, v],
        ))
    }

    pub fn pointwise(&mut self, a: NodeId, f: Nonlinearity) -> NodeId {
        let v = self.value(a).map(|x| f.apply(x));
        self.push(v, Op::Pointwise(a, f), &[a])
    }

    /// Row gather: `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: NodeId, index: Rc<Vec<usize>>) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2()?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Geometry(format!("gather row {bad} out of {m}")));
        }
        if index.is_empty() {
            return Err(Error::Geometry("gather with empty index".into()));
        }
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            data.extend_from_slice(av.row(i));
        }
        let v = Tensor::new(vec![index.len(), n], data)?;
        Ok(self.push(v, Op::Gather(a, index), &[a]))
    }

    /// Row scatter-add into zeros: `out[index[i]] += a[i]`, `out` has `rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: NodeId,
        index: Rc<Vec<usize>>,
        rows_out: usize,
    ) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2()?;
        if index.len() != m {
            return Err(Error::dim("scatter_add_rows", av.shape(), &[index.len()]));
        }
        let mut out = Tensor::zeros(&[rows_out, n]);
        for (src, &dst) in index.iter().enumerate() {
            if dst >= rows_out {
                return Err(Error::Geometry(format!("scatter row {dst} out of {rows_out}")));
            }
            for (o, &x) in out.row_mut(dst).iter_mut().zip(av.row(src)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::ScatterAdd(a, index), &[a]))
    }

    /// Row-wise concatenation.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::vstack(&tensors)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Records a value computed outside the closed op set. Forward use is
    /// fine; gradients cannot flow through it.
    pub fn opaque(&mut self, label: impl Into<String>, inputs: &[NodeId], value: Tensor<S>) -> NodeId {
        self.push(value, Op::Opaque(label.into()), inputs)
    }

    /// Gradients of the scalar node `loss` with respect to every parameter in
    /// `store`. Parameters that do not influence the loss get zero tensors.
    pub fn backward(&self, loss: NodeId, store: &ParamStore<S>) -> Result<Grad<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward(loss)", self.value(loss).shape(), &[1]));
        }
        let mut adj: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));
        let mut grads = Grad::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.live {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let mut single = Grad::default();
                    single.grads.insert(*pid, g);
                    grads.accumulate(&single)?;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.nodes[a.0].live {
                        accumulate(&mut adj, *a, g.matmul(&bv.transpose()?)?)?;
                    }
                    if self.nodes[b.0].live {
                        accumulate(&mut adj, *b, av.transpose()?.matmul(&g)?)?;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-S::one()))?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(self.value(*b))?;
                    let gb = g.mul(self.value(*a))?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::Scale(a, k) => accumulate(&mut adj, *a, g.scale(*k))?,
                Op::AddRow(a, bias) => {
                    let (_, n) = g.dims2()?;
                    let mut gb = vec![S::zero(); n];
                    for row in g.data().chunks(n) {
                        for (acc, &x) in gb.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    let gb = Tensor::new(self.value(*bias).shape().to_vec(), gb)?;
                    accumulate(&mut adj, *bias, gb)?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (_, n) = y.dims2()?;
                    let mut ga = g.clone();
                    for (row_g, row_y) in ga.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let inner = dot(row_g, row_y);
                        for (x, &p) in row_g.iter_mut().zip(row_y) {
                            *x = p * (*x - inner);
                        }
                    }
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    groups,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_adjoint(&g, *q, *k, *v, groups, probs)?;
                    accumulate(&mut adj, *q, gq)?;
                    accumulate(&mut adj, *k, gk)?;
                    accumulate(&mut adj, *v, gv)?;
                }
                Op::Pointwise(a, f) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for ((gi, &xi), &yi) in ga.data_mut().iter_mut().zip(x.data()).zip(node.value.data()) {
                        *gi *= f.derivative(xi, yi);
                    }
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Gather(a, index) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let mut ga = Tensor::zeros(&[m, n]);
                    for (src, &dst) in index.iter().enumerate() {
                        for (o, &x) in ga.row_mut(dst).iter_mut().zip(g.row(src)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::ScatterAdd(a, index) => {
                    let (_, n) = g.dims2()?;
                    let mut data = Vec::with_capacity(index.len() * n);
                    for &i in index.iter() {
                        data.extend_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *a, Tensor::new(vec![index.len(), n], data)?)?;
                }
                Op::Concat(parts) => {
                    let (_, n) = g.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let (m, _) = self.value(p).dims2()?;
                        let slice = g.data()[offset * n..(offset + m) * n].to_vec();
                        accumulate(&mut adj, p, Tensor::new(vec![m, n], slice)?)?;
                        offset += m;
                    }
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let k = g.data()[0] / S::of_usize(av.len());
                    accumulate(&mut adj, *a, Tensor::full(av.shape(), k))?;
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::full(av.shape(), g.data()[0]))?;
                }
                Op::Opaque(label) => {
                    return Err(Error::UnsupportedOperation(label.clone()));
                }
            }
        }

        for id in store.ids() {
            if grads.get(id).is_none() {
                grads.grads.insert(id, Tensor::zeros(store.get(id).shape()));
            }
        }
        Ok(grads)
    }

    fn attention_adjoint(
        &self,
        g: &Tensor<S>,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        groups: &AttentionGroups,
        probs: &[Tensor<S>],
    ) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (_, d) = qv.dims2()?;
        let (_, dv) = vv.dims2()?;
        let scale = S::one() / S::of_usize(d).sqrt();
        let mut gq = Tensor::zeros(qv.shape());
        let mut gk = Tensor::zeros(kv.shape());
        let mut gv = Tensor::zeros(vv.shape());
        for ((qr, kr), p) in groups.query_ranges.iter().zip(&groups.key_ranges).zip(probs) {
            let go = Tensor::new(
                vec![qr.len(), dv],
                g.data()[qr.start * dv..qr.end * dv].to_vec(),
            )?;
            let qg = rows(qv, qr.clone());
            let kg = rows(kv, kr.clone());
            let vg = rows(vv, kr.clone());
            // dV = Pᵀ dO ; dP = dO Vᵀ ; dS = P ⊙ (dP − rowsum(dP ⊙ P))
            let gvg = p.transpose()?.matmul(&go)?;
            let mut ds = go.matmul(&vg.transpose()?)?;
            let tk = kr.len();
            for (row_d, row_p) in ds.data_mut().chunks_mut(tk).zip(p.data().chunks(tk)) {
                let inner = dot(row_d, row_p);
                for (x, &pp) in row_d.iter_mut().zip(row_p) {
                    *x = pp * (*x - inner) * scale;
                }
            }
            let gqg = ds.matmul(&kg)?;
            let gkg = ds.transpose()?.matmul(&qg)?;
            add_rows_into(&mut gq, qr.start, &gqg);
            add_rows_into(&mut gk, kr.start, &gkg);
            add_rows_into(&mut gv, kr.start, &gvg);
        }
        Ok((gq, gk, gv))
    }
}

fn rows<S: Scalar>(t: &Tensor<S>, r: std::ops::Range<usize>) -> Tensor<S> {
    let n = t.shape()[1];
    Tensor::new(vec![r.len(), n], t.data()[r.start * n..r.end * n].to_vec())
        .expect("range checked by caller")
}

fn add_rows_into<S: Scalar>(dst: &mut Tensor<S>, start: usize, src: &Tensor<S>) {
    let n = src.shape()[1];
    for (d, &s) in dst.data_mut()[start * n..start * n + src.len()]
        .iter_mut()
        .zip(src.data())
    {
        *d += s;
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) -> Result<()> {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

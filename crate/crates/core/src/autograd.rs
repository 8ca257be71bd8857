//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] is built per example, borrows the model's [`ParamStore`]
//! read-only, and produces a [`Gradients`] set on [`Graph::backward`].
//! Graphs never mutate parameters, so any number of them can run against a
//! shared store concurrently.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Tensor = Array2<f64>;

/// Floor applied to probabilities before taking logs in cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        ParamId(index)
    }
}

/// Optimiser group; each group gets its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient of one parameter: dense, or a sparse set of rows for embedding
/// tables touched by a gather.
#[derive(Debug, Clone, PartialEq)]
pub enum Grad {
    Dense(Tensor),
    Rows(BTreeMap<usize, Array1<f64>>),
}

impl Grad {
    fn norm_sq(&self) -> f64 {
        match self {
            Grad::Dense(t) => t.iter().map(|v| v * v).sum(),
            Grad::Rows(rows) => rows.values().flat_map(|r| r.iter()).map(|v| v * v).sum(),
        }
    }

    fn scale(&mut self, f: f64) {
        match self {
            Grad::Dense(t) => t.mapv_inplace(|v| v * f),
            Grad::Rows(rows) => rows.values_mut().for_each(|r| r.mapv_inplace(|v| v * f)),
        }
    }
}

/// Per-parameter gradients, indexed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Grad>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            slots: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Grad> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    fn add_dense(&mut self, id: ParamId, g: ArrayView2<f64>, scale: f64) {
        let slot = &mut self.slots[id.0];
        match slot {
            None => *slot = Some(Grad::Dense(g.mapv(|v| v * scale))),
            Some(Grad::Dense(t)) => t.scaled_add(scale, &g),
            Some(Grad::Rows(rows)) => {
                let mut dense = g.mapv(|v| v * scale);
                for (&r, row) in rows.iter() {
                    let mut target = dense.row_mut(r);
                    target += row;
                }
                *slot = Some(Grad::Dense(dense));
            }
        }
    }

    fn add_row(&mut self, id: ParamId, row: usize, g: ndarray::ArrayView1<f64>, scale: f64) {
        let slot = &mut self.slots[id.0];
        match slot {
            None => {
                let mut rows = BTreeMap::new();
                rows.insert(row, g.mapv(|v| v * scale));
                *slot = Some(Grad::Rows(rows));
            }
            Some(Grad::Dense(t)) => t.row_mut(row).scaled_add(scale, &g),
            Some(Grad::Rows(rows)) => match rows.get_mut(&row) {
                Some(r) => r.scaled_add(scale, &g),
                None => {
                    rows.insert(row, g.mapv(|v| v * scale));
                }
            },
        }
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (i, g) in other.slots.iter().enumerate() {
            let id = ParamId(i);
            match g {
                None => {}
                Some(Grad::Dense(t)) => self.add_dense(id, t.view(), scale),
                Some(Grad::Rows(rows)) => {
                    for (&r, row) in rows {
                        self.add_row(id, r, row.view(), scale);
                    }
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(Grad::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        self.slots.iter_mut().flatten().for_each(|g| g.scale(f));
    }

    /// Materialise one parameter's gradient as a dense tensor.
    pub fn dense(&self, id: ParamId, shape: (usize, usize)) -> Tensor {
        match self.get(id) {
            None => Tensor::zeros(shape),
            Some(Grad::Dense(t)) => t.clone(),
            Some(Grad::Rows(rows)) => {
                let mut t = Tensor::zeros(shape);
                for (&r, row) in rows {
                    t.row_mut(r).assign(row);
                }
                t
            }
        }
    }

    /// Inner product with a direction given as one tensor per parameter.
    pub fn dot(&self, direction: &[Tensor]) -> f64 {
        let mut acc = 0.0;
        for (i, d) in direction.iter().enumerate() {
            match self.slots.get(i).and_then(Option::as_ref) {
                None => {}
                Some(Grad::Dense(t)) => acc += (t * d).sum(),
                Some(Grad::Rows(rows)) => {
                    for (&r, row) in rows {
                        acc += row.dot(&d.row(r));
                    }
                }
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Tensor),
    Gelu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normed: Tensor,
        inv_std: Array1<f64>,
    },
    SelectRows(NodeId, Vec<usize>),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    GatherCols(NodeId, Vec<Vec<usize>>),
    Sum(Vec<NodeId>),
    BceWithLogits(NodeId, Vec<f64>),
    Lca(NodeId, Vec<bool>),
    SoftmaxCrossEntropy(NodeId, usize),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Inverted-dropout mask source. A rate of zero is a no-op.
pub struct Dropout<R: Rng> {
    pub rate: f64,
    pub rng: R,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn softmax_rows(x: ArrayView2<f64>) -> Tensor {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, n: NodeId) -> ArrayView2<'_, f64> {
        let node = &self.nodes[n.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v.view(),
            (None, Op::Param(id)) => self.params.get(*id).view(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        self.value(n)[[0, 0]]
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Input,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Rows of an embedding table.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> NodeId {
        let t = self.params.get(table);
        let mut out = Tensor::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.nodes.push(Node {
            value: Some(out),
            op: Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Add a `1×N` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: NodeId, f: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x * f);
        self.push(v, Op::Scale(a, f), &[a])
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> NodeId {
        let v = &self.value(a) * &c;
        self.push(v, Op::MulConst(a, c), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise layer normalisation with affine `1×N` gamma and beta.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut normed = xv.to_owned();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, inv) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            *inv = 1.0 / (var + eps).sqrt();
            let i = *inv;
            row.mapv_inplace(|v| (v - mean) * i);
        }
        let out = &(&normed * &self.value(gamma)) + &self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn select_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::SelectRows(a, rows.to_vec()), &[a])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), &[a])
    }

    /// `out[i][j] = a[i][index[i][j]]`.
    pub fn gather_cols(&mut self, a: NodeId, index: Vec<Vec<usize>>) -> NodeId {
        let av = self.value(a);
        let cols = index.first().map_or(0, Vec::len);
        let mut v = Tensor::zeros((index.len(), cols));
        for (i, row) in index.iter().enumerate() {
            for (j, &k) in row.iter().enumerate() {
                v[[i, j]] = av[[i, k]];
            }
        }
        self.push(v, Op::GatherCols(a, index), &[a])
    }

    /// Sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = self.value(parts[0]).to_owned();
        for &p in &parts[1..] {
            v += &self.value(p);
        }
        self.push(v, Op::Sum(parts.to_vec()), parts)
    }

    pub fn dropout<R: Rng>(&mut self, a: NodeId, dropout: Option<&mut Dropout<R>>) -> NodeId {
        let Some(d) = dropout else { return a };
        if d.rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - d.rate;
        let (r, c) = self.value(a).dim();
        let mask = Tensor::from_shape_fn((r, c), |_| {
            if d.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.mul_const(a, mask)
    }

    /// Mean binary cross-entropy over all entries of a logit node.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len(), "bce target length");
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / targets.len() as f64;
        self.push(
            Tensor::from_elem((1, 1), loss),
            Op::BceWithLogits(logits, targets.to_vec()),
            &[logits],
        )
    }

    /// Label-correlation loss over a node of scores (any shape, read flat).
    pub fn lca(&mut self, scores: NodeId, labels: &[bool]) -> NodeId {
        let s: Vec<f64> = self.value(scores).iter().copied().collect();
        assert_eq!(s.len(), labels.len(), "lca label length");
        let loss = lca_value(&s, labels);
        self.push(
            Tensor::from_elem((1, 1), loss),
            Op::Lca(scores, labels.to_vec()),
            &[scores],
        )
    }

    /// `-log softmax(logits)[gold]`, floored at `log(LOG_FLOOR)`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, gold: usize) -> NodeId {
        let p = softmax_rows(self.value(logits));
        let loss = -p[[0, gold]].max(LOG_FLOOR).ln();
        self.push(
            Tensor::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy(logits, gold),
            &[logits],
        )
    }

    /// Backpropagate from a `1×1` node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones((1, 1)));
        let mut out = Gradients::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Tensor>>, to: NodeId, delta: Tensor| {
                if !self.nodes[to.0].requires_grad {
                    return;
                }
                match &mut grads[to.0] {
                    Some(acc) => *acc += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.add_dense(*id, g.view(), 1.0),
                Op::Gather { table, ids } => {
                    for (r, &id) in ids.iter().enumerate() {
                        out.add_row(*table, id, g.row(r), 1.0);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        send(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].requires_grad {
                        send(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        send(&mut grads, *a, g.dot(&self.value(*b)));
                    }
                    if self.nodes[b.0].requires_grad {
                        send(&mut grads, *b, g.t().dot(&self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    send(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(&mut grads, *a, g);
                }
                Op::Scale(a, f) => send(&mut grads, *a, g.mapv(|v| v * f)),
                Op::MulConst(a, c) => send(&mut grads, *a, &g * c),
                Op::Gelu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&self.value(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    send(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&self.value(NodeId(i)))
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    send(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(NodeId(i));
                    let mut d = Tensor::zeros(g.dim());
                    for ((mut dr, gr), yr) in d.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                        let dot = gr.dot(&yr);
                        Zip::from(&mut dr)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|d, &g, &y| *d = y * (g - dot));
                    }
                    send(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    send(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(
                        &mut grads,
                        *gamma,
                        (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    if self.nodes[x.0].requires_grad {
                        let gv = self.value(*gamma);
                        let dn = &g * &gv;
                        let n = dn.ncols() as f64;
                        let mut dx = Tensor::zeros(dn.dim());
                        for (r, mut out_row) in dx.rows_mut().into_iter().enumerate() {
                            let dr = dn.row(r);
                            let nr = normed.row(r);
                            let sum_d = dr.sum();
                            let sum_dn = dr.dot(&nr);
                            let inv = inv_std[r];
                            Zip::from(&mut out_row)
                                .and(&dr)
                                .and(&nr)
                                .for_each(|o, &d, &xh| *o = inv / n * (n * d - sum_d - xh * sum_dn));
                        }
                        send(&mut grads, *x, dx);
                    }
                }
                Op::SelectRows(a, rows) => {
                    let mut d = Tensor::zeros(self.value(*a).dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut target = d.row_mut(src);
                        target += &g.row(r);
                    }
                    send(&mut grads, *a, d);
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Tensor::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    send(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        send(&mut grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::Transpose(a) => send(&mut grads, *a, g.t().to_owned()),
                Op::GatherCols(a, index) => {
                    let mut d = Tensor::zeros(self.value(*a).dim());
                    for (r, row) in index.iter().enumerate() {
                        for (j, &k) in row.iter().enumerate() {
                            d[[r, k]] += g[[r, j]];
                        }
                    }
                    send(&mut grads, *a, d);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        send(&mut grads, *p, g.clone());
                    }
                }
                Op::BceWithLogits(a, targets) => {
                    let up = g[[0, 0]] / targets.len() as f64;
                    let z = self.value(*a);
                    let mut d = Tensor::zeros(z.dim());
                    Zip::from(&mut d)
                        .and(&z)
                        .and(&ndarray::ArrayView::from_shape(z.dim(), targets).expect("shape"))
                        .for_each(|d, &z, &y| *d = up * (sigmoid(z) - y));
                    send(&mut grads, *a, d);
                }
                Op::Lca(a, labels) => {
                    let sv = self.value(*a);
                    let s: Vec<f64> = sv.iter().copied().collect();
                    let flat = lca_grad(&s, labels);
                    let d = Tensor::from_shape_vec(sv.dim(), flat)
                        .expect("shape")
                        .mapv(|v| v * g[[0, 0]]);
                    send(&mut grads, *a, d);
                }
                Op::SoftmaxCrossEntropy(a, gold) => {
                    let p = softmax_rows(self.value(*a));
                    let mut d = Tensor::zeros(p.dim());
                    if p[[0, *gold]] > LOG_FLOOR {
                        d.assign(&p);
                        d[[0, *gold]] -= 1.0;
                        d.mapv_inplace(|v| v * g[[0, 0]]);
                    }
                    send(&mut grads, *a, d);
                }
            }
        }
        out
    }
}

/// `(Σ_{p∈neg} e^{s_p}) (Σ_{q∈pos} e^{-s_q}) / (|neg||pos|)`; zero when either
/// side is empty.
pub(crate) fn lca_value(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut neg, mut pos, mut n_neg, mut n_pos) = (0.0, 0.0, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        if y {
            pos += (-s).exp();
            n_pos += 1;
        } else {
            neg += s.exp();
            n_neg += 1;
        }
    }
    if n_neg == 0 || n_pos == 0 {
        return 0.0;
    }
    neg * pos / (n_neg * n_pos) as f64
}

fn lca_grad(scores: &[f64], labels: &[bool]) -> Vec<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_neg == 0 || n_pos == 0 {
        return vec![0.0; scores.len()];
    }
    let norm = (n_neg * n_pos) as f64;
    let neg: f64 = scores.iter().zip(labels).filter(|(_, &y)| !y).map(|(s, _)| s.exp()).sum();
    let pos: f64 = scores.iter().zip(labels).filter(|(_, &y)| y).map(|(s, _)| (-s).exp()).sum();
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            if y {
                -(-s).exp() * neg / norm
            } else {
                s.exp() * pos / norm
            }
        })
        .collect()
}

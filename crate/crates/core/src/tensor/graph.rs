//! Append-only computation tape with reverse-mode differentiation.
//!
//! Every node caches its forward value. Inputs always precede outputs, so a
//! single reverse sweep over the node list visits each node after all of its
//! consumers. Matrices are 2-D row-major; rank-1 tensors act as a single row.

use std::collections::BTreeMap;

use super::kernels::{dot, matmul, matmul_acc, matmul_nt, matmul_nt_acc, matmul_tn_acc};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    LayerNorm(NodeId),
    Softmax(NodeId),
    Gelu(NodeId),
    Silu(NodeId),
    Transpose(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    /// Per-row reciprocal standard deviation for layer norm.
    aux: Vec<f64>,
}

/// Gradients keyed by parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    map: BTreeMap<ParamId, Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.map.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.map.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Accumulates `other` into `self`, element by element.
    pub fn accumulate(&mut self, other: &Grads) {
        for (id, g) in &other.map {
            match self.map.get_mut(id) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.map.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.map.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Gradient for `id` as a tensor shaped like the parameter (zeros when absent).
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Tensor {
        let shape = store.get(id).shape().to_vec();
        match self.map.get(&id) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node so the graph can record a fresh forward pass.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.push_aux(op, value, needs_grad, Vec::new())
    }

    fn push_aux(&mut self, op: Op, value: Tensor, needs_grad: bool, aux: Vec<f64>) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            aux,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dims2().expect("matrix operand")
    }

    fn vals(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant, t, false)
    }

    /// Leaf bound to a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = store.get(id).clone();
        let ng = t.requires_grad();
        self.push(Op::Param(id), t, ng)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2_checked(a, "matmul")?;
        let (k2, n) = self.dims2_checked(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = matmul(self.vals(a), self.vals(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2_checked(a, "matmul_nt")?;
        let (n, k2) = self.dims2_checked(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{m},{k}] x [{n},{k2}]^T")));
        }
        let out = matmul_nt(self.vals(a), self.vals(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMulNT(a, b), Tensor::new(vec![m, n], out)?, ng))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn dims2_checked(&self, a: NodeId, op: &'static str) -> Result<(usize, usize)> {
        self.value(a)
            .dims2()
            .map_err(|_| Error::shape(op, format!("rank of {:?}", self.value(a).shape())))
    }

    fn elementwise2(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.same_shape(a, b, name)?;
        let data = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(op, t, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(Op::Scale(a, s), t, ng)
    }

    fn row_broadcast(
        &mut self,
        a: NodeId,
        row: NodeId,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (m, n) = self.dims2_checked(a, name)?;
        if self.value(row).numel() != n {
            return Err(Error::shape(
                name,
                format!("row of {} values against {n} columns", self.value(row).numel()),
            ));
        }
        let r = self.vals(row);
        let x = self.vals(a);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(x[i * n..(i + 1) * n].iter().zip(r).map(|(&p, &q)| f(p, q)));
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(op, t, ng))
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, Op::AddRow(a, row), "add_row", |x, r| x + r)
    }

    /// Multiplies every row of `a` by a row vector, elementwise.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, Op::MulRow(a, row), "mul_row", |x, r| x * r)
    }

    /// Row-wise normalization to zero mean and unit variance, no affine terms.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.dims2_checked(a, "layer_norm")?;
        let x = self.vals(a);
        let mut data = Vec::with_capacity(m * n);
        let mut rstd = Vec::with_capacity(m);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            data.extend(row.iter().map(|v| (v - mean) * r));
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push_aux(Op::LayerNorm(a), t, ng, rstd))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2_checked(a, "softmax")?;
        let x = self.vals(a);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut s = 0.0;
            for v in row {
                let e = (v - mx).exp();
                s += e;
                data.push(e);
            }
            data[start..].iter_mut().for_each(|e| *e /= s);
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(Op::Softmax(a), t, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| gelu(x)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(Op::Gelu(a), t, ng)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * sigmoid(x)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(Op::Silu(a), t, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2_checked(a, "transpose")?;
        let x = self.vals(a);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data)?;
        let ng = self.ng(a);
        Ok(self.push(Op::Transpose(a), t, ng))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2_checked(a, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let x = self.vals(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&x[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data)?;
        let ng = self.ng(a);
        Ok(self.push(Op::SliceCols { x: a, start }, t, ng))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let (m, _) = self.dims2_checked(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2_checked(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape("concat_cols", format!("{r} rows vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.vals(p)[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t, ng))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(Op::Reshape(a), t, ng))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.vals(a).iter().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.vals(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(a);
        self.push(Op::Mean(a), Tensor::scalar(s), ng)
    }

    /// Mean squared difference between `a` and a fixed target.
    pub fn mse(&mut self, a: NodeId, target: Tensor) -> Result<NodeId> {
        let t = self.constant(target);
        let d = self.sub(a, t)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar root. Returns gradients for every
    /// trainable parameter reachable from `root`.
    pub fn backward(&self, root: NodeId) -> Result<Grads> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, has shape {:?}", self.value(root).shape()),
            ));
        }
        let root_value = self.value(root).item();
        if !root_value.is_finite() {
            return Err(Error::non_finite(format!("loss at node {}", root.0)));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut grads = Grads::default();

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("adjoint of node {idx}")));
            }
            self.propagate(idx, node, g, &mut adj, &mut grads)?;
        }
        Ok(grads)
    }

    fn propagate(
        &self,
        idx: usize,
        node: &Node,
        g: Vec<f64>,
        adj: &mut [Option<Vec<f64>>],
        grads: &mut Grads,
    ) -> Result<()> {
        // Returns the adjoint buffer for `id` when it takes part in differentiation.
        fn slot<'a>(
            graph: &Graph,
            adj: &'a mut [Option<Vec<f64>>],
            id: NodeId,
        ) -> Option<&'a mut Vec<f64>> {
            if !graph.ng(id) {
                return None;
            }
            let n = graph.value(id).numel();
            Some(adj[id.0].get_or_insert_with(|| vec![0.0; n]))
        }

        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => match grads.map.get_mut(pid) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    grads.map.insert(*pid, g);
                }
            },
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                if let Some(da) = slot(self, adj, *a) {
                    matmul_nt_acc(&g, self.vals(*b), m, n, k, da);
                }
                if let Some(db) = slot(self, adj, *b) {
                    matmul_tn_acc(self.vals(*a), &g, m, k, n, db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let (n, _) = self.dims(*b);
                if let Some(da) = slot(self, adj, *a) {
                    matmul_acc(&g, self.vals(*b), m, n, k, da);
                }
                if let Some(db) = slot(self, adj, *b) {
                    matmul_tn_acc(&g, self.vals(*a), m, n, k, db);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                if let Some(db) = slot(self, adj, *b) {
                    db.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                if let Some(db) = slot(self, adj, *b) {
                    db.iter_mut().zip(&g).for_each(|(d, v)| *d -= v);
                }
            }
            Op::Mul(a, b) => {
                if *a == *b {
                    let x = self.vals(*a);
                    if let Some(da) = slot(self, adj, *a) {
                        for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                            *d += 2.0 * gv * xv;
                        }
                    }
                } else {
                    if let Some(da) = slot(self, adj, *a) {
                        for ((d, gv), bv) in da.iter_mut().zip(&g).zip(self.vals(*b)) {
                            *d += gv * bv;
                        }
                    }
                    if let Some(db) = slot(self, adj, *b) {
                        for ((d, gv), av) in db.iter_mut().zip(&g).zip(self.vals(*a)) {
                            *d += gv * av;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().zip(&g).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::AddRow(a, row) => {
                let (m, n) = self.dims(*a);
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                if let Some(dr) = slot(self, adj, *row) {
                    for i in 0..m {
                        dr.iter_mut()
                            .zip(&g[i * n..(i + 1) * n])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (m, n) = self.dims(*a);
                let r = self.vals(*row);
                let x = self.vals(*a);
                if let Some(da) = slot(self, adj, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[i * n + j] * r[j];
                        }
                    }
                }
                if let Some(dr) = slot(self, adj, *row) {
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g[i * n + j] * x[i * n + j];
                        }
                    }
                }
            }
            Op::LayerNorm(a) => {
                let (m, n) = self.dims(*a);
                let y = node.value.data();
                if let Some(da) = slot(self, adj, *a) {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let yr = &y[i * n..(i + 1) * n];
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gy = dot(gr, yr) / n as f64;
                        let r = node.aux[i];
                        for j in 0..n {
                            da[i * n + j] += r * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let (m, n) = self.dims(*a);
                let y = node.value.data();
                if let Some(da) = slot(self, adj, *a) {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let yr = &y[i * n..(i + 1) * n];
                        let s = dot(gr, yr);
                        for j in 0..n {
                            da[i * n + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let x = self.vals(*a);
                if let Some(da) = slot(self, adj, *a) {
                    for ((d, gv), &xv) in da.iter_mut().zip(&g).zip(x) {
                        *d += gv * gelu_grad(xv);
                    }
                }
            }
            Op::Silu(a) => {
                let x = self.vals(*a);
                if let Some(da) = slot(self, adj, *a) {
                    for ((d, gv), &xv) in da.iter_mut().zip(&g).zip(x) {
                        let s = sigmoid(xv);
                        *d += gv * (s + xv * s * (1.0 - s));
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                if let Some(da) = slot(self, adj, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims(*x);
                let len = node.value.shape()[1];
                if let Some(dx) = slot(self, adj, *x) {
                    for i in 0..m {
                        dx[i * n + start..i * n + start + len]
                            .iter_mut()
                            .zip(&g[i * len..(i + 1) * len])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = self.dims2_checked(NodeId(idx), "concat_cols")?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if let Some(dp) = slot(self, adj, p) {
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(&g[i * total + offset..i * total + offset + w])
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Sum(a) => {
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                if let Some(da) = slot(self, adj, *a) {
                    da.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
        Ok(())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

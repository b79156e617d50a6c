//! Reverse-mode gradient tape over row-batched matrix primitives.
//!
//! Every node holds a `B × width` value, one row per sample. Nodes are appended
//! in evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] visits it once from the back.

use crate::error::{MdnError, Result};
use crate::linalg::{clamp_diag, diag_index, packed_index, packed_len, DenseMatrix, DIAG_CLAMP};
use crate::scalar::Real;

use super::{Activation, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { track: bool },
    Linear { input: NodeId, layer: usize },
    Activation { input: NodeId, kind: Activation },
    Columns { input: NodeId, start: usize },
    LogSoftmax { input: NodeId },
    Exp { input: NodeId },
    ExpClamped { input: NodeId },
    ExpTriDiag { input: NodeId, n: usize },
    TriDiagSum { input: NodeId, n: usize },
    Residual { means: NodeId },
    TriMatvec { factors: NodeId, vectors: NodeId, n: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddScalar { input: NodeId },
    Neg { input: NodeId },
    GroupHalfSqNorm { input: NodeId, n: usize },
    GroupSumClamped { input: NodeId, n: usize },
    RowLogSumExp { input: NodeId },
    RowSum { input: NodeId },
    RowDot { a: NodeId, b: NodeId },
    Mean { input: NodeId },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: DenseMatrix<T>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Gradient with respect to every network weight and bias.
    pub params: Option<NetworkParams<T>>,
    leaves: Vec<(NodeId, DenseMatrix<T>)>,
}

impl<T> Gradients<T> {
    /// Gradient with respect to a leaf recorded with `track = true`.
    pub fn leaf(&self, id: NodeId) -> Option<&DenseMatrix<T>> {
        self.leaves.iter().find(|(n, _)| *n == id).map(|(_, m)| m)
    }
}

/// Records one forward evaluation for later gradient replay.
#[derive(Debug)]
pub struct Tape<'a, T> {
    params: Option<&'a NetworkParams<T>>,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

fn zip_map<T: Real>(a: &DenseMatrix<T>, b: &DenseMatrix<T>, f: impl Fn(T, T) -> T) -> Result<DenseMatrix<T>> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MdnError::shape("elementwise operand", a.rows() * a.cols(), b.rows() * b.cols()));
    }
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    DenseMatrix::new(a.rows(), a.cols(), data)
}

fn map<T: Real>(a: &DenseMatrix<T>, f: impl Fn(T) -> T) -> DenseMatrix<T> {
    let data = a.as_slice().iter().map(|&x| f(x)).collect();
    DenseMatrix::new(a.rows(), a.cols(), data).expect("same shape")
}

fn row_reduce<T: Real>(a: &DenseMatrix<T>, f: impl Fn(&[T]) -> T) -> DenseMatrix<T> {
    let data = (0..a.rows()).map(|r| f(a.row(r))).collect();
    DenseMatrix::new(a.rows(), 1, data).expect("column shape")
}

fn group_count(cols: usize, group: usize, context: &'static str) -> Result<usize> {
    if group == 0 || cols % group != 0 {
        return Err(MdnError::shape(context, group.max(1) * (cols / group.max(1)).max(1), cols));
    }
    Ok(cols / group)
}

impl<'a, T: Real> Tape<'a, T> {
    /// Tape whose `linear` nodes read weights from `params`.
    pub fn new(params: &'a NetworkParams<T>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Tape without network layers, for differentiating losses in their direct inputs.
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: DenseMatrix<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Input value; with `track` its gradient is reported by [`Gradients::leaf`].
    pub fn leaf(&mut self, value: DenseMatrix<T>, track: bool) -> NodeId {
        self.push(Op::Leaf { track }, value)
    }

    /// `out = input · Wᵀ + b` for network layer `layer`.
    pub fn linear(&mut self, input: NodeId, layer: usize) -> Result<NodeId> {
        let params = self
            .params
            .ok_or_else(|| MdnError::InvalidInput("tape has no network attached".into()))?;
        let l = params
            .layers
            .get(layer)
            .ok_or_else(|| MdnError::InvalidInput(format!("no layer {layer}")))?;
        let x = self.value(input);
        if x.cols() != l.inputs {
            return Err(MdnError::shape("linear layer input", l.inputs, x.cols()));
        }
        let mut out = DenseMatrix::zeros(x.rows(), l.outputs);
        for b in 0..x.rows() {
            let xr = x.row(b);
            let or = out.row_mut(b);
            for (o, dst) in or.iter_mut().enumerate() {
                let w = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                *dst = w.iter().zip(xr).fold(l.bias[o], |acc, (&wi, &xi)| acc + wi * xi);
            }
        }
        Ok(self.push(Op::Linear { input, layer }, out))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> NodeId {
        let v = map(self.value(input), |x| kind.apply(x));
        self.push(Op::Activation { input, kind }, v)
    }

    pub fn columns(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(input);
        if start + len > x.cols() {
            return Err(MdnError::shape("column slice", start + len, x.cols()));
        }
        let mut out = DenseMatrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push(Op::Columns { input, start }, out))
    }

    /// Row-wise `x_i − ln Σ_j exp(x_j)`.
    pub fn log_softmax(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let lse = crate::gmm::log_sum_exp(x.row(r));
            out.row_mut(r).iter_mut().for_each(|v| *v -= lse);
        }
        self.push(Op::LogSoftmax { input }, out)
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        let v = map(self.value(input), T::exp);
        self.push(Op::Exp { input }, v)
    }

    /// `exp(clamp(x))` with the diagonal clamp range.
    pub fn exp_clamped(&mut self, input: NodeId) -> NodeId {
        let v = map(self.value(input), |x| clamp_diag(x).exp());
        self.push(Op::ExpClamped { input }, v)
    }

    /// Applies the exp-diagonal map to each packed `n × n` triangle in a row.
    pub fn exp_tri_diag(&mut self, input: NodeId, n: usize) -> Result<NodeId> {
        let mut out = self.value(input).clone();
        let p = packed_len(n);
        let k = group_count(out.cols(), p, "packed triangles")?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in 0..k {
                for j in 0..n {
                    let idx = c * p + diag_index(n, j);
                    row[idx] = clamp_diag(row[idx]).exp();
                }
            }
        }
        Ok(self.push(Op::ExpTriDiag { input, n }, out))
    }

    /// Per triangle: sum of clamped raw diagonal entries.
    pub fn tri_diag_sum(&mut self, input: NodeId, n: usize) -> Result<NodeId> {
        let x = self.value(input);
        let p = packed_len(n);
        let k = group_count(x.cols(), p, "packed triangles")?;
        let mut out = DenseMatrix::zeros(x.rows(), k);
        for r in 0..x.rows() {
            for c in 0..k {
                let s = (0..n).fold(T::zero(), |acc, j| acc + clamp_diag(x.row(r)[c * p + diag_index(n, j)]));
                out.set(r, c, s);
            }
        }
        Ok(self.push(Op::TriDiagSum { input, n }, out))
    }

    /// `x − μ_i` for every group of `n` mean columns; `targets` is `B × n`.
    pub fn residual(&mut self, targets: &DenseMatrix<T>, means: NodeId, n: usize) -> Result<NodeId> {
        let m = self.value(means);
        if targets.cols() != n {
            return Err(MdnError::shape("residual targets", n, targets.cols()));
        }
        if targets.rows() != m.rows() {
            return Err(MdnError::shape("residual batch", m.rows(), targets.rows()));
        }
        let k = group_count(m.cols(), n, "mean groups")?;
        let mut out = DenseMatrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            let t = targets.row(r);
            let mr = m.row(r);
            let or = out.row_mut(r);
            for c in 0..k {
                for j in 0..n {
                    or[c * n + j] = t[j] - mr[c * n + j];
                }
            }
        }
        Ok(self.push(Op::Residual { means }, out))
    }

    /// `Ū_c · v_c` per component, triangles packed in `factors`, vectors grouped by `n`.
    pub fn tri_matvec(&mut self, factors: NodeId, vectors: NodeId, n: usize) -> Result<NodeId> {
        let f = self.value(factors);
        let v = self.value(vectors);
        let p = packed_len(n);
        let k = group_count(f.cols(), p, "packed triangles")?;
        if v.cols() != k * n || v.rows() != f.rows() {
            return Err(MdnError::shape("tri_matvec vectors", k * n, v.cols()));
        }
        let mut out = DenseMatrix::zeros(v.rows(), v.cols());
        for r in 0..v.rows() {
            let fr = f.row(r);
            let vr = v.row(r);
            let or = out.row_mut(r);
            for c in 0..k {
                let tri = &fr[c * p..(c + 1) * p];
                let vec = &vr[c * n..(c + 1) * n];
                for row in 0..n {
                    let start = packed_index(n, row, row);
                    or[c * n + row] = tri[start..start + (n - row)]
                        .iter()
                        .zip(&vec[row..])
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                }
            }
        }
        Ok(self.push(Op::TriMatvec { factors, vectors, n }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    pub fn add_scalar(&mut self, input: NodeId, c: T) -> NodeId {
        let v = map(self.value(input), |x| x + c);
        self.push(Op::AddScalar { input }, v)
    }

    pub fn neg(&mut self, input: NodeId) -> NodeId {
        let v = map(self.value(input), |x| -x);
        self.push(Op::Neg { input }, v)
    }

    /// `½ Σ x²` over consecutive groups of `n` columns.
    pub fn group_half_sq_norm(&mut self, input: NodeId, n: usize) -> Result<NodeId> {
        let x = self.value(input);
        let k = group_count(x.cols(), n, "norm groups")?;
        let half = T::lit(0.5);
        let mut out = DenseMatrix::zeros(x.rows(), k);
        for r in 0..x.rows() {
            for c in 0..k {
                let s = x.row(r)[c * n..(c + 1) * n].iter().fold(T::zero(), |acc, &v| acc + v * v);
                out.set(r, c, half * s);
            }
        }
        Ok(self.push(Op::GroupHalfSqNorm { input, n }, out))
    }

    /// `Σ clamp(x)` over consecutive groups of `n` columns.
    pub fn group_sum_clamped(&mut self, input: NodeId, n: usize) -> Result<NodeId> {
        let x = self.value(input);
        let k = group_count(x.cols(), n, "sum groups")?;
        let mut out = DenseMatrix::zeros(x.rows(), k);
        for r in 0..x.rows() {
            for c in 0..k {
                let s = x.row(r)[c * n..(c + 1) * n].iter().fold(T::zero(), |acc, &v| acc + clamp_diag(v));
                out.set(r, c, s);
            }
        }
        Ok(self.push(Op::GroupSumClamped { input, n }, out))
    }

    pub fn row_log_sum_exp(&mut self, input: NodeId) -> NodeId {
        let v = row_reduce(self.value(input), crate::gmm::log_sum_exp);
        self.push(Op::RowLogSumExp { input }, v)
    }

    pub fn row_sum(&mut self, input: NodeId) -> NodeId {
        let v = row_reduce(self.value(input), |r| r.iter().fold(T::zero(), |a, &b| a + b));
        self.push(Op::RowSum { input }, v)
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() || va.cols() != vb.cols() {
            return Err(MdnError::shape("row_dot operand", va.cols(), vb.cols()));
        }
        let data = (0..va.rows())
            .map(|r| va.row(r).iter().zip(vb.row(r)).fold(T::zero(), |acc, (&x, &y)| acc + x * y))
            .collect();
        let v = DenseMatrix::new(va.rows(), 1, data)?;
        Ok(self.push(Op::RowDot { a, b }, v))
    }

    /// Mean of all entries, summed in row-major order.
    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let count = T::lit(x.as_slice().len() as f64);
        let s = x.as_slice().iter().fold(T::zero(), |a, &b| a + b);
        let v = DenseMatrix::new(1, 1, vec![s / count]).expect("scalar");
        self.push(Op::Mean { input }, v)
    }

    /// Propagates `loss_adjoint · ∂output/∂(·)` back through every recorded node.
    ///
    /// The seed adjoint is broadcast over all entries of `output`. A tape can be
    /// replayed only once.
    pub fn backward(&mut self, output: NodeId, loss_adjoint: T) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(MdnError::TapeConsumed);
        }
        self.consumed = true;

        let mut grads_params = self.params.map(NetworkParams::zeros_like);
        let mut adj: Vec<Option<DenseMatrix<T>>> = vec![None; output.0 + 1];
        let out_value = &self.nodes[output.0].value;
        adj[output.0] = Some(map(out_value, |_| loss_adjoint));
        let mut leaves = Vec::new();

        fn slot<'s, T: Real>(adj: &'s mut [Option<DenseMatrix<T>>], nodes: &[Node<T>], id: NodeId) -> &'s mut DenseMatrix<T> {
            adj[id.0].get_or_insert_with(|| {
                let v = &nodes[id.0].value;
                DenseMatrix::zeros(v.rows(), v.cols())
            })
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf { track } => {
                    if *track {
                        leaves.push((NodeId(idx), g));
                    }
                }
                Op::Linear { input, layer } => {
                    let params = self.params.expect("linear node implies attached network");
                    let l = &params.layers[*layer];
                    let x = &nodes[input.0].value;
                    if let Some(gp) = grads_params.as_mut() {
                        let gl = &mut gp.layers[*layer];
                        for b in 0..x.rows() {
                            let xr = x.row(b);
                            let gr = g.row(b);
                            for (o, &go) in gr.iter().enumerate() {
                                gl.bias[o] += go;
                                let gw = &mut gl.weights[o * l.inputs..(o + 1) * l.inputs];
                                gw.iter_mut().zip(xr).for_each(|(w, &xi)| *w += go * xi);
                            }
                        }
                    }
                    if matches!(nodes[input.0].op, Op::Leaf { track: false }) {
                        continue;
                    }
                    let din = slot(&mut adj, nodes, *input);
                    for b in 0..g.rows() {
                        let gr = g.row(b);
                        let dr = din.row_mut(b);
                        for (o, &go) in gr.iter().enumerate() {
                            let w = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                            dr.iter_mut().zip(w).for_each(|(d, &wi)| *d += go * wi);
                        }
                    }
                }
                Op::Activation { input, kind } => {
                    let y = &node.value;
                    let din = slot(&mut adj, nodes, *input);
                    for ((d, &gv), &yv) in din.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y.as_slice()) {
                        *d += gv * kind.derivative_from_output(yv);
                    }
                }
                Op::Columns { input, start } => {
                    let din = slot(&mut adj, nodes, *input);
                    for r in 0..g.rows() {
                        let dr = &mut din.row_mut(r)[*start..*start + g.cols()];
                        dr.iter_mut().zip(g.row(r)).for_each(|(d, &v)| *d += v);
                    }
                }
                Op::LogSoftmax { input } => {
                    let y = &node.value;
                    let din = slot(&mut adj, nodes, *input);
                    for r in 0..g.rows() {
                        let total = g.row(r).iter().fold(T::zero(), |a, &b| a + b);
                        let dr = din.row_mut(r);
                        for ((d, &gv), &yv) in dr.iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *d += gv - yv.exp() * total;
                        }
                    }
                }
                Op::Exp { input } => {
                    let y = &node.value;
                    let din = slot(&mut adj, nodes, *input);
                    for ((d, &gv), &yv) in din.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y.as_slice()) {
                        *d += gv * yv;
                    }
                }
                Op::ExpClamped { input } => {
                    let y = &node.value;
                    let x = &nodes[input.0].value;
                    let din = slot(&mut adj, nodes, *input);
                    let c = T::lit(DIAG_CLAMP);
                    for (((d, &gv), &yv), &xv) in din
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(y.as_slice())
                        .zip(x.as_slice())
                    {
                        if xv.abs() <= c {
                            *d += gv * yv;
                        }
                    }
                }
                Op::ExpTriDiag { input, n } => {
                    let (n, p) = (*n, packed_len(*n));
                    let y = &node.value;
                    let x = &nodes[input.0].value;
                    let din = slot(&mut adj, nodes, *input);
                    let c = T::lit(DIAG_CLAMP);
                    for r in 0..g.rows() {
                        let dr = din.row_mut(r);
                        for (j, (d, &gv)) in dr.iter_mut().zip(g.row(r)).enumerate() {
                            let local = j % p;
                            if is_diag_position(n, local) {
                                if x.row(r)[j].abs() <= c {
                                    *d += gv * y.row(r)[j];
                                }
                            } else {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::TriDiagSum { input, n } => {
                    let (n, p) = (*n, packed_len(*n));
                    let x = &nodes[input.0].value;
                    let din = slot(&mut adj, nodes, *input);
                    let c = T::lit(DIAG_CLAMP);
                    for r in 0..g.rows() {
                        for (comp, &gv) in g.row(r).iter().enumerate() {
                            for j in 0..n {
                                let idx = comp * p + diag_index(n, j);
                                if x.row(r)[idx].abs() <= c {
                                    din.row_mut(r)[idx] += gv;
                                }
                            }
                        }
                    }
                }
                Op::Residual { means } => {
                    let din = slot(&mut adj, nodes, *means);
                    din.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(d, &v)| *d -= v);
                }
                Op::TriMatvec { factors, vectors, n } => {
                    let (n, p) = (*n, packed_len(*n));
                    let f = &nodes[factors.0].value;
                    let v = &nodes[vectors.0].value;
                    let k = f.cols() / p;
                    {
                        let df = slot(&mut adj, nodes, *factors);
                        for r in 0..g.rows() {
                            let dr = df.row_mut(r);
                            for c in 0..k {
                                for row in 0..n {
                                    let go = g.row(r)[c * n + row];
                                    for col in row..n {
                                        dr[c * p + packed_index(n, row, col)] += go * v.row(r)[c * n + col];
                                    }
                                }
                            }
                        }
                    }
                    let dv = slot(&mut adj, nodes, *vectors);
                    for r in 0..g.rows() {
                        let dr = dv.row_mut(r);
                        for c in 0..k {
                            for row in 0..n {
                                let go = g.row(r)[c * n + row];
                                for col in row..n {
                                    dr[c * n + col] += go * f.row(r)[c * p + packed_index(n, row, col)];
                                }
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for id in [*a, *b] {
                        let d = slot(&mut adj, nodes, id);
                        d.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(d, &v)| *d += v);
                    }
                }
                Op::Sub { a, b } => {
                    let d = slot(&mut adj, nodes, *a);
                    d.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(d, &v)| *d += v);
                    let d = slot(&mut adj, nodes, *b);
                    d.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(d, &v)| *d -= v);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let da: Vec<T> = g.as_slice().iter().zip(vb.as_slice()).map(|(&x, &y)| x * y).collect();
                    let db: Vec<T> = g.as_slice().iter().zip(va.as_slice()).map(|(&x, &y)| x * y).collect();
                    let d = slot(&mut adj, nodes, *a);
                    d.as_mut_slice().iter_mut().zip(da).for_each(|(d, v)| *d += v);
                    let d = slot(&mut adj, nodes, *b);
                    d.as_mut_slice().iter_mut().zip(db).for_each(|(d, v)| *d += v);
                }
                Op::AddScalar { input } => {
                    let d = slot(&mut adj, nodes, *input);
                    d.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(d, &v)| *d += v);
                }
                Op::Neg { input } => {
                    let d = slot(&mut adj, nodes, *input);
                    d.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(d, &v)| *d -= v);
                }
                Op::GroupHalfSqNorm { input, n } => {
                    let x = &nodes[input.0].value;
                    let din = slot(&mut adj, nodes, *input);
                    for r in 0..g.rows() {
                        let dr = din.row_mut(r);
                        for (j, d) in dr.iter_mut().enumerate() {
                            *d += g.row(r)[j / n] * x.row(r)[j];
                        }
                    }
                }
                Op::GroupSumClamped { input, n } => {
                    let x = &nodes[input.0].value;
                    let din = slot(&mut adj, nodes, *input);
                    let c = T::lit(DIAG_CLAMP);
                    for r in 0..g.rows() {
                        let dr = din.row_mut(r);
                        for (j, d) in dr.iter_mut().enumerate() {
                            if x.row(r)[j].abs() <= c {
                                *d += g.row(r)[j / n];
                            }
                        }
                    }
                }
                Op::RowLogSumExp { input } => {
                    let x = &nodes[input.0].value;
                    let y = &node.value;
                    let din = slot(&mut adj, nodes, *input);
                    for r in 0..g.rows() {
                        let (gv, lse) = (g.get(r, 0), y.get(r, 0));
                        if !lse.is_finite() {
                            continue;
                        }
                        for (d, &xv) in din.row_mut(r).iter_mut().zip(x.row(r)) {
                            *d += gv * (xv - lse).exp();
                        }
                    }
                }
                Op::RowSum { input } => {
                    let din = slot(&mut adj, nodes, *input);
                    for r in 0..g.rows() {
                        let gv = g.get(r, 0);
                        din.row_mut(r).iter_mut().for_each(|d| *d += gv);
                    }
                }
                Op::RowDot { a, b } => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let mut da = DenseMatrix::zeros(va.rows(), va.cols());
                    let mut db = DenseMatrix::zeros(vb.rows(), vb.cols());
                    for r in 0..g.rows() {
                        let gv = g.get(r, 0);
                        for j in 0..va.cols() {
                            da.set(r, j, gv * vb.get(r, j));
                            db.set(r, j, gv * va.get(r, j));
                        }
                    }
                    let d = slot(&mut adj, nodes, *a);
                    d.as_mut_slice().iter_mut().zip(da.as_slice()).for_each(|(d, &v)| *d += v);
                    let d = slot(&mut adj, nodes, *b);
                    d.as_mut_slice().iter_mut().zip(db.as_slice()).for_each(|(d, &v)| *d += v);
                }
                Op::Mean { input } => {
                    let x = &nodes[input.0].value;
                    let share = g.get(0, 0) / T::lit(x.as_slice().len() as f64);
                    let din = slot(&mut adj, nodes, *input);
                    din.as_mut_slice().iter_mut().for_each(|d| *d += share);
                }
            }
        }

        leaves.reverse();
        Ok(Gradients {
            params: grads_params,
            leaves,
        })
    }
}

fn is_diag_position(n: usize, local: usize) -> bool {
    (0..n).any(|j| diag_index(n, j) == local)
}

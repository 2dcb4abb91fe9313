use crate::error::{AutodiffError, Result};
use crate::kernels::{axis_split, dot, gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(F),
    MatMul { batch: usize, m: usize, k: usize, n: usize, shared_rhs: bool },
    Transpose,
    Reshape,
    Concat { axis: usize, sizes: Vec<usize> },
    Slice { axis: usize, start: usize },
    Gather { indices: Vec<usize> },
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Exp,
    Log { floor: F },
    Tanh,
    Sigmoid,
    Relu,
    Softmax { axis: usize },
    LayerNorm { xhat: Vec<F>, inv_std: Vec<F> },
    MaskedFill { mask: Vec<bool> },
    SquaredDistance,
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    inputs: Vec<Var>,
    value: Tensor<F>,
    requires_grad: bool,
}

/// A tape of recorded primitive applications.
///
/// Nodes are appended in evaluation order, so inputs always precede outputs
/// and one reverse sweep visits each node exactly once. A graph is meant to
/// live for a single forward/backward pass and is confined to one thread.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a leaf created with `requires_grad`. Leaves that do not
    /// reach the loss get an all-zero tensor; constants and intermediate
    /// nodes return `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |x| over every input to a recorded `relu`, or `None` when
    /// the graph has no relu. Finite differences are unreliable within this
    /// distance of the kink.
    pub fn relu_margin(&self) -> Option<F> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu))
            .flat_map(|n| self.nodes[n.inputs[0].0].value.data().iter())
            .map(|x| x.abs())
            .reduce(|a, b| a.min(b))
    }

    /// Records a leaf. Non-finite values are rejected.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, op: Op<F>, inputs: Vec<Var>, value: Tensor<F>) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !is_suffix(sa, sb) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok((sa.to_vec(), numel(sb)))
    }

    fn zip_bcast(&self, a: Var, b: Var, r: usize, f: impl Fn(F, F) -> F) -> Vec<F> {
        let (da, db) = (self.value(a).data(), self.value(b).data());
        da.chunks_exact(r)
            .flat_map(|blk| blk.iter().zip(db).map(|(&x, &y)| f(x, y)))
            .collect()
    }

    /// Elementwise `a + b`. `b` may have a trailing-suffix shape of `a`, in
    /// which case it is broadcast over the leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, r) = self.binary_shapes("add", a, b)?;
        let data = self.zip_bcast(a, b, r, |x, y| x + y);
        self.push("add", Op::Add, vec![a, b], Tensor::from_parts(shape, data))
    }

    /// Elementwise `a - b` with the same broadcasting rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, r) = self.binary_shapes("sub", a, b)?;
        let data = self.zip_bcast(a, b, r, |x, y| x - y);
        self.push("sub", Op::Sub, vec![a, b], Tensor::from_parts(shape, data))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, r) = self.binary_shapes("mul", a, b)?;
        let data = self.zip_bcast(a, b, r, |x, y| x * y);
        self.push("mul", Op::Mul, vec![a, b], Tensor::from_parts(shape, data))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * c).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("scale", Op::Scale(c), vec![a], t)
    }

    /// Matrix product over the last two axes. `a` is `[.., m, k]`; `b` is
    /// either `[k, n]` (shared across the batch) or `[.., k, n]` with the same
    /// leading dimensions as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sb[..sb.len() - 2] != *lead {
            return Err(mismatch());
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); batch * m * n];
        if shared_rhs {
            gemm_nn(batch * m, k, n, da, db, &mut out);
        } else {
            for i in 0..batch {
                gemm_nn(
                    m,
                    k,
                    n,
                    &da[i * m * k..(i + 1) * m * k],
                    &db[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let op = Op::MatMul {
            batch,
            m,
            k,
            n,
            shared_rhs,
        };
        self.push("matmul", op, vec![a, b], Tensor::from_parts(shape, out))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(AutodiffError::Invalid {
                op: "transpose",
                msg: format!("needs rank >= 2, got shape {s:?}"),
            });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = transpose_last(self.value(a).data(), r, c);
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        self.push("transpose", Op::Transpose, vec![a], Tensor::from_parts(shape, data))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", Op::Reshape, vec![a], t)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            sizes.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let d = self.value(p).data();
                data.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat { axis, sizes };
        self.push("concat", op, parts.to_vec(), Tensor::from_parts(shape, data))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(AutodiffError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of shape {s:?}", start + len),
            });
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * n + start) * inner;
            data.extend_from_slice(&d[off..off + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push("slice", Op::Slice { axis, start }, vec![a], Tensor::from_parts(shape, data))
    }

    /// Embedding gather: row `i` of the result is row `indices[i]` of the
    /// `[rows, width]` table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || indices.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "gather",
                msg: format!("needs a rank-2 table and indices, got {s:?} / {} ids", indices.len()),
            });
        }
        let (rows, w) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, rows });
        }
        let d = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(&d[i * w..(i + 1) * w]);
        }
        let t = Tensor::from_parts(vec![indices.len(), w], data);
        let op = Op::Gather {
            indices: indices.to_vec(),
        };
        self.push("gather", op, vec![table], t)
    }

    fn reduce(&self, op: &'static str, a: Var, axis: Option<usize>) -> Result<(Vec<usize>, Vec<F>)> {
        let v = self.value(a);
        match axis {
            None => Ok((Vec::new(), vec![v.data().iter().copied().sum()])),
            Some(ax) if ax < v.rank() => {
                let (outer, n, inner) = axis_split(v.shape(), ax);
                let d = v.data();
                let mut out = vec![F::zero(); outer * inner];
                for o in 0..outer {
                    for i in 0..n {
                        let row = &d[(o * n + i) * inner..(o * n + i + 1) * inner];
                        for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                }
                let mut shape = v.shape().to_vec();
                shape.remove(ax);
                Ok((shape, out))
            }
            Some(ax) => Err(AutodiffError::Invalid {
                op,
                msg: format!("axis {ax} out of range for shape {:?}", v.shape()),
            }),
        }
    }

    /// Sum over one axis (removed from the shape) or over everything.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let (shape, data) = self.reduce("sum", a, axis)?;
        self.push("sum", Op::Sum { axis }, vec![a], Tensor::from_parts(shape, data))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let count = match axis {
            None => self.value(a).len(),
            Some(ax) => self.shape(a).get(ax).copied().unwrap_or(1),
        };
        let (shape, mut data) = self.reduce("mean", a, axis)?;
        let inv = F::one() / F::from_usize(count).unwrap();
        data.iter_mut().for_each(|x| *x *= inv);
        self.push("mean", Op::Mean { axis }, vec![a], Tensor::from_parts(shape, data))
    }

    fn unary(&mut self, name: &'static str, op: Op<F>, a: Var, f: impl Fn(F) -> F) -> Result<Var> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(name, op, vec![a], t)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", Op::Exp, a, F::exp)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log(&mut self, a: Var, floor: F) -> Result<Var> {
        self.unary("log", Op::Log { floor }, a, |x| x.max(floor).ln())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", Op::Tanh, a, F::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", Op::Sigmoid, a, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", Op::Relu, a, |x| x.max(F::zero()))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        if axis >= v.rank() {
            return Err(AutodiffError::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {:?}", v.shape()),
            });
        }
        let (outer, n, inner) = axis_split(v.shape(), axis);
        let d = v.data();
        let mut out = vec![F::zero(); d.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * n + i) * inner + j;
                let mut mx = F::neg_infinity();
                for i in 0..n {
                    mx = mx.max(d[at(i)]);
                }
                let mut total = F::zero();
                for i in 0..n {
                    let e = (d[at(i)] - mx).exp();
                    out[at(i)] = e;
                    total += e;
                }
                let inv = F::one() / total;
                for i in 0..n {
                    out[at(i)] *= inv;
                }
            }
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        self.push("softmax", Op::Softmax { axis }, vec![a], t)
    }

    /// Layer normalization over the last axis followed by the affine map
    /// `gain ⊙ x̂ + bias`; `eps` is added to the variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or(AutodiffError::Invalid {
            op: "layer_norm",
            msg: "rank-0 input".into(),
        })?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: s.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let xd = self.value(x).data();
        let rows = xd.len() / d;
        let inv_d = F::one() / F::from_usize(d).unwrap();
        let mut xhat = Vec::with_capacity(xd.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(d) {
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::from_parts(s, out);
        self.push("layer_norm", Op::LayerNorm { xhat, inv_std }, vec![x, gain, bias], t)
    }

    /// Sets positions where `mask` is true to `value`. The mask has one
    /// entry per element; masked positions receive no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: F) -> Result<Var> {
        let v = self.value(a);
        if mask.len() != v.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_fill",
                lhs: v.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = v
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let op = Op::MaskedFill { mask: mask.to_vec() };
        self.push("masked_fill", op, vec![a], t)
    }

    /// Row-wise squared L2 distance `Σ_j (a - b)²` over the last axis; the
    /// last axis is removed from the shape.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        if sa != sb || sa.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "squared_distance",
                lhs: sa,
                rhs: sb.to_vec(),
            });
        }
        let d = sa[sa.len() - 1];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = da
            .chunks_exact(d)
            .zip(db.chunks_exact(d))
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum())
            .collect();
        let shape = sa[..sa.len() - 1].to_vec();
        self.push("squared_distance", Op::SquaredDistance, vec![a, b], Tensor::from_parts(shape, data))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let inputs = &node.inputs;
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let r = self.nodes[b.0].value.len();
                let is_mul = matches!(node.op, Op::Mul);
                if wants(a) {
                    let ga = acc(grads, a, g.len());
                    if is_mul {
                        let db = val(b);
                        for (blk_g, blk_a) in g.chunks_exact(r).zip(ga.chunks_exact_mut(r)) {
                            for ((x, &gi), &bi) in blk_a.iter_mut().zip(blk_g).zip(db) {
                                *x += gi * bi;
                            }
                        }
                    } else {
                        ga.iter_mut().zip(g).for_each(|(x, &gi)| *x += gi);
                    }
                }
                if wants(b) {
                    let da = val(a);
                    let gb = acc(grads, b, r);
                    for (blk_g, blk_a) in g.chunks_exact(r).zip(da.chunks_exact(r)) {
                        for ((x, &gi), &ai) in gb.iter_mut().zip(blk_g).zip(blk_a) {
                            match node.op {
                                Op::Add => *x += gi,
                                Op::Sub => *x -= gi,
                                _ => *x += gi * ai,
                            }
                        }
                    }
                }
            }
            Op::Scale(c) => {
                let ga = acc(grads, inputs[0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, &gi)| *x += gi * *c);
            }
            &Op::MatMul {
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (a, b) = (inputs[0], inputs[1]);
                if wants(a) {
                    let db = val(b);
                    let ga = acc(grads, a, batch * m * k);
                    if shared_rhs {
                        gemm_nt(batch * m, n, k, g, db, ga);
                    } else {
                        for i in 0..batch {
                            gemm_nt(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                &db[i * k * n..(i + 1) * k * n],
                                &mut ga[i * m * k..(i + 1) * m * k],
                            );
                        }
                    }
                }
                if wants(b) {
                    let da = val(a);
                    if shared_rhs {
                        let gb = acc(grads, b, k * n);
                        gemm_tn(k, batch * m, n, da, g, gb);
                    } else {
                        let gb = acc(grads, b, batch * k * n);
                        for i in 0..batch {
                            gemm_tn(
                                k,
                                m,
                                n,
                                &da[i * m * k..(i + 1) * m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut gb[i * k * n..(i + 1) * k * n],
                            );
                        }
                    }
                }
            }
            Op::Transpose => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let t = transpose_last(g, r, c);
                let ga = acc(grads, inputs[0], g.len());
                ga.iter_mut().zip(&t).for_each(|(x, &gi)| *x += gi);
            }
            Op::Reshape => {
                let ga = acc(grads, inputs[0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, &gi)| *x += gi);
            }
            Op::Concat { axis, sizes } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for (&p, &sz) in inputs.iter().zip(sizes) {
                    if wants(p) {
                        let gp = acc(grads, p, outer * sz * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + sz) * inner];
                            let dst = &mut gp[o * sz * inner..(o + 1) * sz * inner];
                            dst.iter_mut().zip(src).for_each(|(x, &gi)| *x += gi);
                        }
                    }
                    offset += sz;
                }
            }
            Op::Slice { axis, start } => {
                let src_shape = self.nodes[inputs[0].0].value.shape().to_vec();
                let (outer, n, inner) = axis_split(&src_shape, *axis);
                let len = node.value.shape()[*axis];
                let ga = acc(grads, inputs[0], outer * n * inner);
                for o in 0..outer {
                    let off = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    ga[off..off + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(x, &gi)| *x += gi);
                }
            }
            Op::Gather { indices } => {
                let table = &self.nodes[inputs[0].0].value;
                let w = table.shape()[1];
                let gt = acc(grads, inputs[0], table.len());
                for (r, &i) in indices.iter().enumerate() {
                    gt[i * w..(i + 1) * w]
                        .iter_mut()
                        .zip(&g[r * w..(r + 1) * w])
                        .for_each(|(x, &gi)| *x += gi);
                }
            }
            Op::Sum { axis } | Op::Mean { axis } => {
                let src = &self.nodes[inputs[0].0].value;
                let is_mean = matches!(node.op, Op::Mean { .. });
                let ga = acc(grads, inputs[0], src.len());
                match axis {
                    None => {
                        let scale = if is_mean {
                            F::one() / F::from_usize(src.len()).unwrap()
                        } else {
                            F::one()
                        };
                        let gi = g[0] * scale;
                        ga.iter_mut().for_each(|x| *x += gi);
                    }
                    Some(ax) => {
                        let (outer, n, inner) = axis_split(src.shape(), *ax);
                        let scale = if is_mean {
                            F::one() / F::from_usize(n).unwrap()
                        } else {
                            F::one()
                        };
                        for o in 0..outer {
                            let gsrc = &g[o * inner..(o + 1) * inner];
                            for i in 0..n {
                                let dst = &mut ga[(o * n + i) * inner..(o * n + i + 1) * inner];
                                dst.iter_mut().zip(gsrc).for_each(|(x, &gi)| *x += gi * scale);
                            }
                        }
                    }
                }
            }
            Op::Exp => {
                let ga = acc(grads, inputs[0], g.len());
                for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * yi;
                }
            }
            Op::Log { floor } => {
                let xs = val(inputs[0]);
                let ga = acc(grads, inputs[0], g.len());
                for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(xs) {
                    if xi > *floor {
                        *x += gi / xi;
                    }
                }
            }
            Op::Tanh => {
                let ga = acc(grads, inputs[0], g.len());
                for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * (F::one() - yi * yi);
                }
            }
            Op::Sigmoid => {
                let ga = acc(grads, inputs[0], g.len());
                for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * yi * (F::one() - yi);
                }
            }
            Op::Relu => {
                let xs = val(inputs[0]);
                let ga = acc(grads, inputs[0], g.len());
                for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(xs) {
                    if xi > F::zero() {
                        *x += gi;
                    }
                }
            }
            Op::Softmax { axis } => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let ga = acc(grads, inputs[0], g.len());
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * n + i) * inner + j;
                        let mut s = F::zero();
                        for i in 0..n {
                            s += g[at(i)] * y[at(i)];
                        }
                        for i in 0..n {
                            ga[at(i)] += y[at(i)] * (g[at(i)] - s);
                        }
                    }
                }
            }
            Op::LayerNorm { xhat, inv_std } => {
                let (x, gain, bias) = (inputs[0], inputs[1], inputs[2]);
                let d = self.nodes[gain.0].value.len();
                if wants(gain) {
                    let gg = acc(grads, gain, d);
                    for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((x, &gi), &hi) in gg.iter_mut().zip(grow).zip(hrow) {
                            *x += gi * hi;
                        }
                    }
                }
                if wants(bias) {
                    let gb = acc(grads, bias, d);
                    for grow in g.chunks_exact(d) {
                        gb.iter_mut().zip(grow).for_each(|(x, &gi)| *x += gi);
                    }
                }
                if wants(x) {
                    let gamma = val(gain);
                    let inv_d = F::one() / F::from_usize(d).unwrap();
                    let gx = acc(grads, x, g.len());
                    let mut dh = vec![F::zero(); d];
                    for (r, (grow, hrow)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = grow[j] * gamma[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<F>() * inv_d;
                        let mean_dh_h = dot(&dh, hrow) * inv_d;
                        let dst = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            dst[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::MaskedFill { mask } => {
                let ga = acc(grads, inputs[0], g.len());
                for ((x, &gi), &m) in ga.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *x += gi;
                    }
                }
            }
            Op::SquaredDistance => {
                let (a, b) = (inputs[0], inputs[1]);
                let (da, db) = (val(a), val(b));
                let d = da.len() / g.len();
                let two = F::one() + F::one();
                let diff: Vec<F> = da
                    .iter()
                    .zip(db)
                    .enumerate()
                    .map(|(i, (&p, &q))| two * g[i / d] * (p - q))
                    .collect();
                if wants(a) {
                    let ga = acc(grads, a, diff.len());
                    ga.iter_mut().zip(&diff).for_each(|(x, &v)| *x += v);
                }
                if wants(b) {
                    let gb = acc(grads, b, diff.len());
                    gb.iter_mut().zip(&diff).for_each(|(x, &v)| *x -= v);
                }
            }
        }
    }
}

/// Gradient buffer for `v`, allocated as zeros on first use.
fn acc<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn transpose_last<F: Real>(d: &[F], r: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); d.len()];
    for (blk_in, blk_out) in d.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                blk_out[j * r + i] = blk_in[i * c + j];
            }
        }
    }
    out
}

//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation records its output values into a shared arena, so the
//! forward pass is a single growing buffer and the backward pass is one
//! reverse sweep over a matching gradient buffer. [`Tape::clear`] recycles
//! the allocations between training batches.

use super::Tensor;

/// Handle to one tape node. Only valid for the tape that produced it, and
/// only until the next [`Tape::clear`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueRef(u32);

/// Range into the tape's auxiliary index buffer, for variadic ops.
#[derive(Clone, Copy, Debug)]
struct AuxSlice {
    start: u32,
    len: u32,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    /// Row `row` of matrix `x`, as a column vector.
    Row { x: u32, row: u32 },
    /// Rows [start, start+len) of column vector `x`.
    Slice { x: u32, start: u32 },
    MatMul { a: u32, b: u32 },
    Add { a: u32, b: u32 },
    Sub { a: u32, b: u32 },
    /// Elementwise mul * x + add.
    Affine { x: u32, mul: f64 },
    /// Column vectors stacked top to bottom.
    Concat { parts: AuxSlice },
    /// Elementwise mean of same-shaped column vectors.
    MeanRows { parts: AuxSlice },
    Sigmoid { x: u32 },
    Tanh { x: u32 },
    LeakyRelu { x: u32, slope: f64 },
    /// Softmax over a column vector.
    Softmax { x: u32 },
    Dot { a: u32, b: u32 },
    Square { x: u32 },
    /// ln(max(x, floor)), elementwise.
    LnClamped { x: u32, floor: f64 },
    /// Sum of scalars.
    Sum { parts: AuxSlice },
    /// sum_i weights[i] * vecs[i] for same-shaped column vectors.
    WeightedSum { weights: u32, vecs: AuxSlice },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: u32,
    rows: u32,
    cols: u32,
}

/// Read view over everything recorded before the node being built.
#[derive(Clone, Copy)]
struct Vals<'a> {
    data: &'a [f64],
    nodes: &'a [Node],
    aux: &'a [u32],
}

impl<'a> Vals<'a> {
    fn value(&self, v: ValueRef) -> &'a [f64] {
        let n = &self.nodes[v.0 as usize];
        let off = n.off as usize;
        &self.data[off..off + (n.rows * n.cols) as usize]
    }

    fn aux_ids(&self, s: AuxSlice) -> &'a [u32] {
        &self.aux[s.start as usize..(s.start + s.len) as usize]
    }
}

/// Append-only computation graph. All node outputs live in one arena.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    data: Vec<f64>,
    aux: Vec<u32>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Drops all nodes but keeps allocations for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.data.clear();
        self.aux.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: ValueRef) -> (usize, usize) {
        let n = &self.nodes[v.0 as usize];
        (n.rows as usize, n.cols as usize)
    }

    pub fn value(&self, v: ValueRef) -> &[f64] {
        let n = &self.nodes[v.0 as usize];
        let off = n.off as usize;
        &self.data[off..off + (n.rows * n.cols) as usize]
    }

    /// Value of a (1, 1) node.
    pub fn scalar(&self, v: ValueRef) -> f64 {
        assert_eq!(self.shape(v), (1, 1), "scalar expected");
        self.value(v)[0]
    }

    /// Appends a node, building its output in place. The fill closure sees
    /// every previously recorded value through [`Vals`].
    fn push_with(
        &mut self,
        op: Op,
        rows: usize,
        cols: usize,
        fill: impl FnOnce(Vals<'_>, &mut [f64]),
    ) -> ValueRef {
        let len = rows * cols;
        let off = self.data.len();
        self.data.resize(off + len, 0.0);
        let (prefix, out) = self.data.split_at_mut(off);
        fill(
            Vals {
                data: prefix,
                nodes: &self.nodes,
                aux: &self.aux,
            },
            out,
        );
        debug_assert!(
            out.iter().all(|v| v.is_finite()),
            "non-finite value out of {op:?}"
        );
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            op,
            off: off as u32,
            rows: rows as u32,
            cols: cols as u32,
        });
        ValueRef(id)
    }

    /// Copies a tensor onto the tape. Gradients accumulate against leaves.
    pub fn leaf(&mut self, t: &Tensor) -> ValueRef {
        self.push_with(Op::Leaf, t.rows(), t.cols(), |_, out| {
            out.copy_from_slice(t.data());
        })
    }

    /// Column vector of zeros without an external tensor.
    pub fn zeros(&mut self, rows: usize) -> ValueRef {
        self.push_with(Op::Leaf, rows, 1, |_, _| {})
    }

    /// Scalar constant.
    pub fn constant(&mut self, v: f64) -> ValueRef {
        self.push_with(Op::Leaf, 1, 1, |_, out| out[0] = v)
    }

    /// Row `i` of a matrix node, as a column vector.
    pub fn row(&mut self, x: ValueRef, i: usize) -> ValueRef {
        let (rows, cols) = self.shape(x);
        assert!(i < rows, "row {i} out of range for {rows}x{cols}");
        let op = Op::Row {
            x: x.0,
            row: i as u32,
        };
        self.push_with(op, cols, 1, |t, out| {
            out.copy_from_slice(&t.value(x)[i * cols..(i + 1) * cols]);
        })
    }

    /// Rows [start, start+len) of a column vector node.
    pub fn slice(&mut self, x: ValueRef, start: usize, len: usize) -> ValueRef {
        let (rows, cols) = self.shape(x);
        assert_eq!(cols, 1, "slice expects a column vector");
        assert!(start + len <= rows, "slice out of range");
        let op = Op::Slice {
            x: x.0,
            start: start as u32,
        };
        self.push_with(op, len, 1, |t, out| {
            out.copy_from_slice(&t.value(x)[start..start + len]);
        })
    }

    pub fn matmul(&mut self, a: ValueRef, b: ValueRef) -> ValueRef {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul {m}x{k} by {k2}x{n}");
        let op = Op::MatMul { a: a.0, b: b.0 };
        self.push_with(op, m, n, |t, out| {
            let av = t.value(a);
            let bv = t.value(b);
            if n == 1 {
                for i in 0..m {
                    let row = &av[i * k..(i + 1) * k];
                    out[i] = row.iter().zip(bv).map(|(x, y)| x * y).sum();
                }
            } else {
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            out[i * n + j] += x * bv[p * n + j];
                        }
                    }
                }
            }
        })
    }

    pub fn add(&mut self, a: ValueRef, b: ValueRef) -> ValueRef {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let (rows, cols) = self.shape(a);
        let op = Op::Add { a: a.0, b: b.0 };
        self.push_with(op, rows, cols, |t, out| {
            for ((o, x), y) in out.iter_mut().zip(t.value(a)).zip(t.value(b)) {
                *o = x + y;
            }
        })
    }

    pub fn sub(&mut self, a: ValueRef, b: ValueRef) -> ValueRef {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let (rows, cols) = self.shape(a);
        let op = Op::Sub { a: a.0, b: b.0 };
        self.push_with(op, rows, cols, |t, out| {
            for ((o, x), y) in out.iter_mut().zip(t.value(a)).zip(t.value(b)) {
                *o = x - y;
            }
        })
    }

    /// Elementwise mul * x + add.
    pub fn affine(&mut self, x: ValueRef, mul: f64, add: f64) -> ValueRef {
        let (rows, cols) = self.shape(x);
        let op = Op::Affine { x: x.0, mul };
        self.push_with(op, rows, cols, |t, out| {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o = mul * v + add;
            }
        })
    }

    pub fn concat(&mut self, parts: &[ValueRef]) -> ValueRef {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            assert_eq!(c, 1, "concat expects column vectors");
            rows += r;
        }
        let aux = self.aux_push(parts);
        self.push_with(Op::Concat { parts: aux }, rows, 1, |t, out| {
            let mut at = 0;
            for &id in t.aux_ids(aux) {
                let v = t.value(ValueRef(id));
                out[at..at + v.len()].copy_from_slice(v);
                at += v.len();
            }
        })
    }

    /// Elementwise mean of same-shaped column vectors, i.e. the column mean
    /// of the matrix whose rows are `parts`.
    pub fn mean_rows(&mut self, parts: &[ValueRef]) -> ValueRef {
        assert!(!parts.is_empty(), "mean of nothing");
        let (rows, cols) = self.shape(parts[0]);
        assert_eq!(cols, 1, "mean_rows expects column vectors");
        for p in parts {
            assert_eq!(self.shape(*p), (rows, 1), "mean_rows shape mismatch");
        }
        let aux = self.aux_push(parts);
        let inv = 1.0 / parts.len() as f64;
        self.push_with(Op::MeanRows { parts: aux }, rows, 1, |t, out| {
            for &id in t.aux_ids(aux) {
                for (o, v) in out.iter_mut().zip(t.value(ValueRef(id))) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        })
    }

    pub fn sigmoid(&mut self, x: ValueRef) -> ValueRef {
        let (rows, cols) = self.shape(x);
        self.push_with(Op::Sigmoid { x: x.0 }, rows, cols, |t, out| {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o = 1.0 / (1.0 + (-v).exp());
            }
        })
    }

    pub fn tanh(&mut self, x: ValueRef) -> ValueRef {
        let (rows, cols) = self.shape(x);
        self.push_with(Op::Tanh { x: x.0 }, rows, cols, |t, out| {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o = v.tanh();
            }
        })
    }

    /// slope = 0 is relu.
    pub fn leaky_relu(&mut self, x: ValueRef, slope: f64) -> ValueRef {
        let (rows, cols) = self.shape(x);
        let op = Op::LeakyRelu { x: x.0, slope };
        self.push_with(op, rows, cols, |t, out| {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o = if *v > 0.0 { *v } else { slope * v };
            }
        })
    }

    pub fn softmax(&mut self, x: ValueRef) -> ValueRef {
        let (rows, cols) = self.shape(x);
        assert_eq!(cols, 1, "softmax expects a column vector");
        self.push_with(Op::Softmax { x: x.0 }, rows, 1, |t, out| {
            let v = t.value(x);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, x) in out.iter_mut().zip(v) {
                *o = (x - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        })
    }

    pub fn dot(&mut self, a: ValueRef, b: ValueRef) -> ValueRef {
        let (rows, cols) = self.shape(a);
        assert_eq!(cols, 1, "dot expects column vectors");
        assert_eq!(self.shape(b), (rows, 1), "dot shape mismatch");
        self.push_with(Op::Dot { a: a.0, b: b.0 }, 1, 1, |t, out| {
            let av = t.value(a);
            let bv = t.value(b);
            out[0] = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        })
    }

    pub fn square(&mut self, x: ValueRef) -> ValueRef {
        let (rows, cols) = self.shape(x);
        self.push_with(Op::Square { x: x.0 }, rows, cols, |t, out| {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o = v * v;
            }
        })
    }

    /// ln(max(x, floor)). Keeps log-loss terms finite at probability 0 or 1.
    pub fn ln_clamped(&mut self, x: ValueRef, floor: f64) -> ValueRef {
        assert!(floor > 0.0, "clamp floor must be positive");
        let (rows, cols) = self.shape(x);
        let op = Op::LnClamped { x: x.0, floor };
        self.push_with(op, rows, cols, |t, out| {
            for (o, v) in out.iter_mut().zip(t.value(x)) {
                *o = v.max(floor).ln();
            }
        })
    }

    /// Sum of scalar nodes. An empty list is the constant 0.
    pub fn sum(&mut self, parts: &[ValueRef]) -> ValueRef {
        for p in parts {
            assert_eq!(self.shape(*p), (1, 1), "sum expects scalars");
        }
        let aux = self.aux_push(parts);
        self.push_with(Op::Sum { parts: aux }, 1, 1, |t, out| {
            out[0] = t
                .aux_ids(aux)
                .iter()
                .map(|&id| t.value(ValueRef(id))[0])
                .sum();
        })
    }

    /// sum_i weights[i] * vecs[i]. `weights` is a (k, 1) node, `vecs` holds k
    /// same-shaped column vectors.
    pub fn weighted_sum(&mut self, weights: ValueRef, vecs: &[ValueRef]) -> ValueRef {
        let (k, wc) = self.shape(weights);
        assert_eq!(wc, 1, "weights must be a column vector");
        assert_eq!(k, vecs.len(), "one weight per vector");
        assert!(!vecs.is_empty(), "weighted sum of nothing");
        let (rows, cols) = self.shape(vecs[0]);
        assert_eq!(cols, 1, "weighted_sum expects column vectors");
        for v in vecs {
            assert_eq!(self.shape(*v), (rows, 1), "weighted_sum shape mismatch");
        }
        let aux = self.aux_push(vecs);
        let op = Op::WeightedSum {
            weights: weights.0,
            vecs: aux,
        };
        self.push_with(op, rows, 1, |t, out| {
            let w = t.value(weights);
            for (i, &id) in t.aux_ids(aux).iter().enumerate() {
                let wv = w[i];
                for (o, v) in out.iter_mut().zip(t.value(ValueRef(id))) {
                    *o += wv * v;
                }
            }
        })
    }

    fn aux_push(&mut self, parts: &[ValueRef]) -> AuxSlice {
        let start = self.aux.len() as u32;
        self.aux.extend(parts.iter().map(|p| p.0));
        AuxSlice {
            start,
            len: parts.len() as u32,
        }
    }

    fn aux_ids(&self, s: AuxSlice) -> &[u32] {
        &self.aux[s.start as usize..(s.start + s.len) as usize]
    }

    /// Gradient of a scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: ValueRef) -> Gradients<'_> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grad = vec![0.0; self.data.len()];
        grad[self.nodes[loss.0 as usize].off as usize] = 1.0;

        for idx in (0..=loss.0 as usize).rev() {
            let node = self.nodes[idx];
            let off = node.off as usize;
            let len = (node.rows * node.cols) as usize;
            let input = |id: u32| self.nodes[id as usize];

            match node.op {
                Op::Leaf => {}
                Op::Row { x, row } => {
                    let xn = input(x);
                    let dst = xn.off as usize + row as usize * xn.cols as usize;
                    for i in 0..len {
                        grad[dst + i] += grad[off + i];
                    }
                }
                Op::Slice { x, start } => {
                    let dst = input(x).off as usize + start as usize;
                    for i in 0..len {
                        grad[dst + i] += grad[off + i];
                    }
                }
                Op::MatMul { a, b } => {
                    let an = input(a);
                    let bn = input(b);
                    let (m, k, n) = (an.rows as usize, an.cols as usize, bn.cols as usize);
                    let (ao, bo) = (an.off as usize, bn.off as usize);
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[off + i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                grad[ao + i * k + p] += g * self.data[bo + p * n + j];
                                grad[bo + p * n + j] += g * self.data[ao + i * k + p];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (ao, bo) = (input(a).off as usize, input(b).off as usize);
                    for i in 0..len {
                        let g = grad[off + i];
                        grad[ao + i] += g;
                        grad[bo + i] += g;
                    }
                }
                Op::Sub { a, b } => {
                    let (ao, bo) = (input(a).off as usize, input(b).off as usize);
                    for i in 0..len {
                        let g = grad[off + i];
                        grad[ao + i] += g;
                        grad[bo + i] -= g;
                    }
                }
                Op::Affine { x, mul } => {
                    let xo = input(x).off as usize;
                    for i in 0..len {
                        grad[xo + i] += mul * grad[off + i];
                    }
                }
                Op::Concat { parts } => {
                    let mut at = off;
                    for &id in self.aux_ids(parts) {
                        let pn = input(id);
                        let plen = (pn.rows * pn.cols) as usize;
                        let po = pn.off as usize;
                        for i in 0..plen {
                            grad[po + i] += grad[at + i];
                        }
                        at += plen;
                    }
                }
                Op::MeanRows { parts } => {
                    let ids = self.aux_ids(parts);
                    let inv = 1.0 / ids.len() as f64;
                    for &id in ids {
                        let po = input(id).off as usize;
                        for i in 0..len {
                            grad[po + i] += inv * grad[off + i];
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let xo = input(x).off as usize;
                    for i in 0..len {
                        let y = self.data[off + i];
                        grad[xo + i] += grad[off + i] * y * (1.0 - y);
                    }
                }
                Op::Tanh { x } => {
                    let xo = input(x).off as usize;
                    for i in 0..len {
                        let y = self.data[off + i];
                        grad[xo + i] += grad[off + i] * (1.0 - y * y);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xo = input(x).off as usize;
                    for i in 0..len {
                        let factor = if self.data[xo + i] > 0.0 { 1.0 } else { slope };
                        grad[xo + i] += factor * grad[off + i];
                    }
                }
                Op::Softmax { x } => {
                    let xo = input(x).off as usize;
                    let inner: f64 = (0..len)
                        .map(|i| self.data[off + i] * grad[off + i])
                        .sum();
                    for i in 0..len {
                        grad[xo + i] += self.data[off + i] * (grad[off + i] - inner);
                    }
                }
                Op::Dot { a, b } => {
                    let an = input(a);
                    let (ao, bo) = (an.off as usize, input(b).off as usize);
                    let g = grad[off];
                    if g != 0.0 {
                        for i in 0..(an.rows as usize) {
                            grad[ao + i] += g * self.data[bo + i];
                            grad[bo + i] += g * self.data[ao + i];
                        }
                    }
                }
                Op::Square { x } => {
                    let xo = input(x).off as usize;
                    for i in 0..len {
                        grad[xo + i] += 2.0 * self.data[xo + i] * grad[off + i];
                    }
                }
                Op::LnClamped { x, floor } => {
                    let xo = input(x).off as usize;
                    for i in 0..len {
                        let v = self.data[xo + i];
                        if v > floor {
                            grad[xo + i] += grad[off + i] / v;
                        }
                    }
                }
                Op::Sum { parts } => {
                    let g = grad[off];
                    for &id in self.aux_ids(parts) {
                        grad[input(id).off as usize] += g;
                    }
                }
                Op::WeightedSum { weights, vecs } => {
                    let wo = input(weights).off as usize;
                    for (i, &id) in self.aux_ids(vecs).iter().enumerate() {
                        let po = input(id).off as usize;
                        let w = self.data[wo + i];
                        let mut gw = 0.0;
                        for j in 0..len {
                            let g = grad[off + j];
                            grad[po + j] += w * g;
                            gw += g * self.data[po + j];
                        }
                        grad[wo + i] += gw;
                    }
                }
            }
        }
        Gradients { tape: self, grad }
    }
}

/// Gradient buffer aligned with a tape's value arena.
pub struct Gradients<'t> {
    tape: &'t Tape,
    grad: Vec<f64>,
}

impl<'t> Gradients<'t> {
    /// Gradient of the loss with respect to node `v`, in value layout.
    pub fn wrt(&self, v: ValueRef) -> &[f64] {
        let n = &self.tape.nodes[v.0 as usize];
        let off = n.off as usize;
        &self.grad[off..off + (n.rows * n.cols) as usize]
    }
}

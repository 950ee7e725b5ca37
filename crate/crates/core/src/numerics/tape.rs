use super::kernels::gemm;
use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    BlockMatMul { a: Var, b: Var, block: usize, trans_b: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Relu(Var),
    Scale(Var, T),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, ids: Vec<usize> },
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Sum(Var),
    SoftmaxNll { logits: Var, targets: Vec<Vec<usize>>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations in evaluation order so [`Tape::backward`] can replay them in reverse.
///
/// Every operation validates shapes and rejects non-finite results. A tape serves one forward /
/// backward pass; build a fresh one per step.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    #[cfg(test)]
    pub(crate) corrupt_relu_backward: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() });
    }
    Ok(())
}

fn require_matrix(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    if s.len() != 2 {
        return Err(Error::ShapeMismatch { op, left: s.to_vec(), right: vec![] });
    }
    Ok((s[0], s[1]))
}

fn grad_buf<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, numel: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); numel])
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            #[cfg(test)]
            corrupt_relu_backward: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("param", value, Op::Leaf, true)
    }

    /// `A (m×k) · B (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul", self.value(a).shape())?;
        let (k2, n) = require_matrix("matmul", self.value(b).shape())?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).as_slice(), false, self.value(b).as_slice(), false, &mut out, false);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul { a, b, trans_b: false }, ng)
    }

    /// `A (m×k) · Bᵀ` with `B` stored `n×k`: applies a weight matrix stored out×in to rows.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul_nt", self.value(a).shape())?;
        let (n, k2) = require_matrix("matmul_nt", self.value(b).shape())?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).as_slice(), false, self.value(b).as_slice(), true, &mut out, false);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul_nt", Tensor::matrix(m, n, out)?, Op::MatMul { a, b, trans_b: true }, ng)
    }

    /// Per block of `block` consecutive rows: `A_b · B_bᵀ`. Both inputs are `R×p`; output `R×block`.
    pub fn block_matmul_nt(&mut self, a: Var, b: Var, block: usize) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let (r, p) = require_matrix("block_matmul_nt", &sa)?;
        same_shape("block_matmul_nt", &sa, &sb)?;
        if block == 0 || r % block != 0 {
            return Err(Error::ShapeMismatch { op: "block_matmul_nt", left: sa, right: vec![block] });
        }
        let mut out = vec![T::zero(); r * block];
        let (av, bv) = (self.value(a).as_slice(), self.value(b).as_slice());
        for blk in 0..r / block {
            let ab = &av[blk * block * p..(blk + 1) * block * p];
            let bb = &bv[blk * block * p..(blk + 1) * block * p];
            let cb = &mut out[blk * block * block..(blk + 1) * block * block];
            gemm(block, p, block, ab, false, bb, true, cb, false);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("block_matmul_nt", Tensor::matrix(r, block, out)?, Op::BlockMatMul { a, b, block, trans_b: true }, ng)
    }

    /// Per block of `block` consecutive rows: `A_b (block×block) · B_b (block×q)`.
    pub fn block_matmul(&mut self, a: Var, b: Var, block: usize) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let (r, ca) = require_matrix("block_matmul", &sa)?;
        let (r2, q) = require_matrix("block_matmul", &sb)?;
        if block == 0 || r != r2 || ca != block || r % block != 0 {
            return Err(Error::ShapeMismatch { op: "block_matmul", left: sa, right: sb });
        }
        let mut out = vec![T::zero(); r * q];
        let (av, bv) = (self.value(a).as_slice(), self.value(b).as_slice());
        for blk in 0..r / block {
            let ab = &av[blk * block * block..(blk + 1) * block * block];
            let bb = &bv[blk * block * q..(blk + 1) * block * q];
            let cb = &mut out[blk * block * q..(blk + 1) * block * q];
            gemm(block, block, q, ab, false, bb, false, cb, false);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("block_matmul", Tensor::matrix(r, q, out)?, Op::BlockMatMul { a, b, block, trans_b: false }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a).shape(), self.value(b).shape())?;
        let va = self.value(a);
        let data = va.as_slice().iter().zip(self.value(b).as_slice()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("add", t, Op::Add(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a).shape(), self.value(b).shape())?;
        let va = self.value(a);
        let data = va.as_slice().iter().zip(self.value(b).as_slice()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", t, Op::Mul(a, b), ng)
    }

    /// Adds a length-`c` bias to every row of an `r×c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = require_matrix("add_bias", self.value(x).shape())?;
        if self.value(bias).numel() != c {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: self.value(x).shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).as_slice();
        let vx = self.value(x);
        let data = vx.as_slice().chunks_exact(c).flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_bias", t, Op::AddBias { x, bias }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.needs(x);
        self.push("relu", t, Op::Relu(x), ng)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push("scale", t, Op::Scale(x, c), ng)
    }

    /// Concatenates matrices with equal row counts along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first =
            parts.first().ok_or_else(|| Error::ShapeMismatch { op: "concat_cols", left: vec![], right: vec![] })?;
        let rows = require_matrix("concat_cols", self.value(*first).shape())?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.value(p).shape())?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = require_matrix("slice_cols", self.value(x).shape())?;
        if start + len > cols {
            return Err(Error::ShapeMismatch { op: "slice_cols", left: vec![rows, cols], right: vec![start, len] });
        }
        let vx = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push("slice_cols", Tensor::matrix(rows, len, out)?, Op::SliceCols { x, start }, ng)
    }

    /// Rows `ids[0], ids[1], ...` of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = require_matrix("gather_rows", self.value(x).shape())?;
        let vx = self.value(x);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(Error::ShapeMismatch { op: "gather_rows", left: vec![rows, cols], right: vec![i] });
            }
            out.extend_from_slice(vx.row(i));
        }
        let ng = self.needs(x);
        self.push("gather_rows", Tensor::matrix(ids.len(), cols, out)?, Op::GatherRows { x, ids: ids.to_vec() }, ng)
    }

    /// Softmax over the last dimension of every row, max-shifted.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.cols();
        if c == 0 {
            return Err(Error::ShapeMismatch { op: "softmax_rows", left: vx.shape().to_vec(), right: vec![] });
        }
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.as_slice().chunks_exact(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut z = T::zero();
            for &v in row {
                let e = (v - m).exp();
                z += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e /= z);
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let ng = self.needs(x);
        self.push("softmax_rows", t, Op::SoftmaxRows(x), ng)
    }

    /// Per-row standardisation over the last dimension (biased variance, `eps` inside the root)
    /// followed by the affine map `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.cols();
        if d == 0 || vx.numel() == 0 {
            return Err(Error::ShapeMismatch { op: "layer_norm", left: vx.shape().to_vec(), right: vec![] });
        }
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: vx.shape().to_vec(),
                right: self.value(gamma).shape().to_vec(),
            });
        }
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let dn = T::from_usize(d).expect("dimension fits");
        let rows = vx.numel() / d;
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.as_slice().chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        if xhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer_norm".into()));
        }
        self.push("layer_norm", t, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).as_slice().iter().copied().sum::<T>();
        let ng = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// `Σ_r Σ_{t ∈ targets[r]} −log softmax(logits_r)_t`: softmax cross-entropy where each row may
    /// carry several (possibly repeated) target columns. Returns a scalar.
    pub fn softmax_nll(&mut self, logits: Var, targets: &[Vec<usize>]) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, cols) = require_matrix("softmax_nll", vl.shape())?;
        if targets.len() != rows {
            return Err(Error::ShapeMismatch { op: "softmax_nll", left: vec![rows, cols], right: vec![targets.len()] });
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut loss = T::zero();
        for (row, tg) in vl.as_slice().chunks_exact(cols.max(1)).zip(targets) {
            if let Some(&bad) = tg.iter().find(|&&t| t >= cols) {
                return Err(Error::ShapeMismatch { op: "softmax_nll", left: vec![rows, cols], right: vec![bad] });
            }
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            probs.extend(row.iter().map(|&v| (v - m).exp() / z));
            for &t in tg {
                loss += lse - row[t];
            }
        }
        let ng = self.needs(logits);
        self.push("softmax_nll", Tensor::scalar(loss), Op::SoftmaxNll { logits, targets: targets.to_vec(), probs }, ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = node.value.cols();
                if self.needs(*a) {
                    let ga = grad_buf(grads, *a, m * k);
                    // dA = G·Bᵀ (B k×n) or G·B (B n×k)
                    gemm(m, n, k, g, false, vb.as_slice(), !*trans_b, ga, true);
                }
                if self.needs(*b) {
                    let gb = grad_buf(grads, *b, vb.numel());
                    if *trans_b {
                        gemm(n, m, k, g, true, va.as_slice(), false, gb, true);
                    } else {
                        gemm(k, m, n, va.as_slice(), true, g, false, gb, true);
                    }
                }
            }
            Op::BlockMatMul { a, b, block, trans_b } => {
                let (va, vb) = (val(*a), val(*b));
                let blk = *block;
                let rows = va.rows();
                let (ca, cb, co) = (va.cols(), vb.cols(), node.value.cols());
                for bi in 0..rows / blk {
                    let a_b = &va.as_slice()[bi * blk * ca..(bi + 1) * blk * ca];
                    let b_b = &vb.as_slice()[bi * blk * cb..(bi + 1) * blk * cb];
                    let g_b = &g[bi * blk * co..(bi + 1) * blk * co];
                    if self.needs(*a) {
                        let ga = &mut grad_buf(grads, *a, va.numel())[bi * blk * ca..(bi + 1) * blk * ca];
                        if *trans_b {
                            gemm(blk, blk, ca, g_b, false, b_b, false, ga, true);
                        } else {
                            gemm(blk, cb, blk, g_b, false, b_b, true, ga, true);
                        }
                    }
                    if self.needs(*b) {
                        let gb = &mut grad_buf(grads, *b, vb.numel())[bi * blk * cb..(bi + 1) * blk * cb];
                        if *trans_b {
                            gemm(blk, blk, cb, g_b, true, a_b, false, gb, true);
                        } else {
                            gemm(blk, blk, cb, a_b, true, g_b, false, gb, true);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        let gv = grad_buf(grads, v, g.len());
                        gv.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).as_slice(), val(*b).as_slice());
                if self.needs(*a) {
                    let ga = grad_buf(grads, *a, g.len());
                    for ((x, &gg), &o) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gg * o;
                    }
                }
                if self.needs(*b) {
                    let gb = grad_buf(grads, *b, g.len());
                    for ((x, &gg), &o) in gb.iter_mut().zip(g).zip(va) {
                        *x += gg * o;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                let c = node.value.cols();
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
                if self.needs(*bias) {
                    let gb = grad_buf(grads, *bias, c);
                    for row in g.chunks_exact(c) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Relu(x) => {
                let y = node.value.as_slice();
                #[cfg(test)]
                let corrupt = self.corrupt_relu_backward;
                #[cfg(not(test))]
                let corrupt = false;
                let gx = grad_buf(grads, *x, g.len());
                for ((a, &gg), &yy) in gx.iter_mut().zip(g).zip(y) {
                    if yy > T::zero() || corrupt {
                        *a += gg;
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = grad_buf(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *c);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.needs(p) {
                        let gp = grad_buf(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + w];
                            gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, len) = (node.value.rows(), node.value.cols());
                let cols = val(*x).cols();
                let gx = grad_buf(grads, *x, rows * cols);
                for r in 0..rows {
                    let dst = &mut gx[r * cols + start..r * cols + start + len];
                    dst.iter_mut().zip(&g[r * len..(r + 1) * len]).for_each(|(a, &b)| *a += b);
                }
            }
            Op::GatherRows { x, ids } => {
                let vx = val(*x);
                let cols = vx.cols();
                let gx = grad_buf(grads, *x, vx.numel());
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut gx[id * cols..(id + 1) * cols];
                    dst.iter_mut().zip(&g[i * cols..(i + 1) * cols]).for_each(|(a, &b)| *a += b);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.as_slice();
                let c = node.value.cols();
                let gx = grad_buf(grads, *x, g.len());
                for ((gr, yr), dr) in g.chunks_exact(c).zip(y.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gg), &yy) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += yy * (gg - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = node.value.cols();
                let dn = T::from_usize(d).expect("dimension fits");
                let gam = val(*gamma).as_slice();
                if self.needs(*gamma) {
                    let gg = grad_buf(grads, *gamma, d);
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = grad_buf(grads, *beta, d);
                    for gr in g.chunks_exact(d) {
                        gb.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                    }
                }
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, g.len());
                    for (r, ((gr, hr), dr)) in
                        g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(gx.chunks_exact_mut(d)).enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            dr[j] += inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let gx = grad_buf(grads, *x, val(*x).numel());
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
            Op::SoftmaxNll { logits, targets, probs } => {
                let cols = val(*logits).cols();
                let gl = grad_buf(grads, *logits, probs.len());
                for (r, tg) in targets.iter().enumerate() {
                    if tg.is_empty() {
                        continue;
                    }
                    let k = T::from_usize(tg.len()).expect("count fits") * g[0];
                    let row = &mut gl[r * cols..(r + 1) * cols];
                    for (d, &p) in row.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                        *d += k * p;
                    }
                    for &t in tg {
                        row[t] -= g[0];
                    }
                }
            }
        }
    }
}

use super::kernels::{gelu, gelu_grad, matmul_grad_a, matmul_grad_b, matmul_into};
use super::{numel, Real, Tensor};
use crate::{ArdError, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    // The right operand broadcasts into the left one.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Softmax(Var),
    LayerNorm { x: Var, gain: Option<Var>, bias: Option<Var>, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Linear record of primitive operations.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// the backward sweep is a single reverse pass over the node list. After the
/// first backward pass the tape is sealed: gradients are plain tensors, not
/// tape values, and recording further operations returns
/// [`ArdError::DoubleBackward`].
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    sealed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by tape variable.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `var`. Leaves the loss does not depend on get zeros.
    pub fn get(&self, var: Var) -> Tensor<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn try_get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }
}

fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    a == b || numel(b) == 1 || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), sealed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if self.sealed {
            return Err(ArdError::DoubleBackward);
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.push(t.clone(), Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push(t.clone(), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(ArdError::dim(format!("matmul inner extents differ: [{m}×{k}]·[{k2}×{n}]")));
        }
        let mut c = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut c, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b), ng)
    }

    fn binary(&mut self, a: Var, b: Var, kind: u8) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !broadcastable(&sa, &sb) {
            // add and mul commute, so try the other way round
            if kind != 1 && broadcastable(&sb, &sa) {
                return self.binary(b, a, kind);
            }
            return Err(ArdError::dim(format!("cannot broadcast {sb:?} into {sa:?}")));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let f: fn(T, T) -> T = match kind {
            0 => |x, y| x + y,
            1 => |x, y| x - y,
            _ => |x, y| x * y,
        };
        let mut out = Vec::with_capacity(xa.len());
        for row in xa.chunks_exact(xb.len().max(1)) {
            out.extend(row.iter().zip(xb).map(|(&x, &y)| f(x, y)));
        }
        let op = match kind {
            0 => Op::Add(a, b),
            1 => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(sa, out)?, op, ng)
    }

    /// Elementwise sum; the smaller operand broadcasts over leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 0)
    }

    /// `a − b` with `b` broadcast into `a`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 1)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 2)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out: Vec<T> = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(Tensor::new(shape, out)?, Op::Scale(a, c), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let ng = self.needs(a);
        self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        self.push(t, Op::Reshape(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(ArdError::dim("concat of zero tensors"));
        }
        let (_, n) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != n {
                return Err(ArdError::dim(format!("row concat of width {c} onto width {n}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(vec![rows, n], out)?, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(ArdError::dim("concat of zero tensors"));
        }
        let (m, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(ArdError::dim(format!("column concat of {r} rows onto {m} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let x = self.value(p).data();
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&x[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > m {
            return Err(ArdError::dim(format!("row slice {start}..{end} of {m} rows")));
        }
        let out = self.value(a).data()[start * n..end * n].to_vec();
        let ng = self.needs(a);
        self.push(Tensor::new(vec![end - start, n], out)?, Op::SliceRows(a, start), ng)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > n {
            return Err(ArdError::dim(format!("column slice {start}..{end} of {n} columns")));
        }
        let w = end - start;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + end]);
        }
        let ng = self.needs(a);
        self.push(Tensor::new(vec![m, w], out)?, Op::SliceCols(a, start), ng)
    }

    /// Row-wise softmax. Masked entries (`false`) come out exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(ArdError::dim(format!("mask of {} entries for a [{m}×{n}] input", mask.len())));
            }
        }
        let x = self.value(a).data();
        let allowed = |i: usize| mask.map_or(true, |mk| mk[i]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mut max: Option<T> = None;
            for (j, &v) in row.iter().enumerate() {
                if allowed(i * n + j) {
                    max = Some(match max {
                        Some(mx) if mx >= v => mx,
                        _ => v,
                    });
                }
            }
            let Some(max) = max else {
                return Err(ArdError::DegenerateMask { row: i });
            };
            let o = &mut out[i * n..(i + 1) * n];
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if allowed(i * n + j) {
                    let e = (v - max).exp();
                    o[j] = e;
                    sum = sum + e;
                }
            }
            let inv = T::one() / sum;
            for v in o.iter_mut() {
                *v = *v * inv;
            }
        }
        let ng = self.needs(a);
        self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(a), ng)
    }

    /// Layer normalisation over the last axis with optional affine terms.
    pub fn layernorm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| ArdError::dim("layernorm of a scalar"))?;
        if d < 2 {
            return Err(ArdError::dim("layernorm needs at least two features"));
        }
        for p in [gain, bias].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(ArdError::dim(format!("layernorm affine term {:?}, expected [{d}]", self.shape(p))));
            }
        }
        let rows = numel(&shape) / d;
        let xs = self.value(x).data();
        let g = gain.map(|v| self.value(v).data());
        let b = bias.map(|v| self.value(v).data());
        let inv_d = T::of(1.0 / d as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                let mut y = h;
                if let Some(g) = g {
                    y = y * g[j];
                }
                if let Some(b) = b {
                    y = y + b[j];
                }
                out[r * d + j] = y;
            }
        }
        let ng = self.needs(x) || gain.is_some_and(|v| self.needs(v)) || bias.is_some_and(|v| self.needs(v));
        self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<T> = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(Tensor::new(shape, out)?, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<T> = self.value(a).data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(Tensor::new(shape, out)?, Op::Relu(a), ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a).data();
        let s = x.iter().fold(T::zero(), |acc, &v| acc + v) / T::of(x.len() as f64);
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Gathers rows of `table[n×d]` into a `[indices.len()×d]` matrix.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (n, d) = self.value(table).dims2()?;
        let x = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(ArdError::Range { what: "embedding index", detail: format!("{i} not below {n}") });
            }
            out.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let ng = self.needs(table);
        self.push(Tensor::new(vec![indices.len(), d], out)?, Op::Gather(table, indices.to_vec()), ng)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Several backward passes from different roots are allowed; any attempt
    /// to keep recording afterwards fails with [`ArdError::DoubleBackward`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.rank() > 1 || lt.numel() != 1 {
            return Err(ArdError::Rank(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        self.sealed = true;
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut out: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        for (i, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            out.push(match (g, &node.op) {
                (Some(g), Op::Leaf) if node.needs_grad => Some(Tensor::new(node.value.shape().to_vec(), g)?),
                _ => None,
            });
        }
        out.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads: out, shapes })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let slot = |v: Var, grads: &mut [Option<Vec<T>>]| -> usize {
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![T::zero(); self.nodes[v.0].value.numel()]);
            }
            v.0
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if needs(*a) {
                    let s = slot(*a, grads);
                    matmul_grad_a(g, val(*b), grads[s].as_mut().unwrap(), m, k, n);
                }
                if needs(*b) {
                    let s = slot(*b, grads);
                    matmul_grad_b(val(*a), g, grads[s].as_mut().unwrap(), m, k, n);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if needs(*a) {
                    let s = slot(*a, grads);
                    for (d, &x) in grads[s].as_mut().unwrap().iter_mut().zip(g) {
                        *d = *d + x;
                    }
                }
                if needs(*b) {
                    let s = slot(*b, grads);
                    let db = grads[s].as_mut().unwrap();
                    for row in g.chunks_exact(db.len().max(1)) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d = *d + sign * x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let nb = xb.len().max(1);
                if needs(*a) {
                    let s = slot(*a, grads);
                    let da = grads[s].as_mut().unwrap();
                    for (da, g) in da.chunks_exact_mut(nb).zip(g.chunks_exact(nb)) {
                        for ((d, &x), &y) in da.iter_mut().zip(g).zip(xb) {
                            *d = *d + x * y;
                        }
                    }
                }
                if needs(*b) {
                    let s = slot(*b, grads);
                    let db = grads[s].as_mut().unwrap();
                    for (g, xa) in g.chunks_exact(nb).zip(xa.chunks_exact(nb)) {
                        for ((d, &x), &y) in db.iter_mut().zip(g).zip(xa) {
                            *d = *d + x * y;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                let s = slot(*a, grads);
                for (d, &x) in grads[s].as_mut().unwrap().iter_mut().zip(g) {
                    *d = *d + x * *c;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let s = slot(*a, grads);
                let da = grads[s].as_mut().unwrap();
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = da[i * n + j] + g[j * m + i];
                    }
                }
            }
            Op::Reshape(a) => {
                let s = slot(*a, grads);
                for (d, &x) in grads[s].as_mut().unwrap().iter_mut().zip(g) {
                    *d = *d + x;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.numel();
                    if needs(p) {
                        let s = slot(p, grads);
                        for (d, &x) in grads[s].as_mut().unwrap().iter_mut().zip(&g[off..off + len]) {
                            *d = *d + x;
                        }
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let m = node.value.shape()[0];
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if needs(p) {
                        let s = slot(p, grads);
                        let dp = grads[s].as_mut().unwrap();
                        for i in 0..m {
                            for j in 0..w {
                                dp[i * w + j] = dp[i * w + j] + g[i * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.shape(*a)[1];
                let s = slot(*a, grads);
                let da = &mut grads[s].as_mut().unwrap()[start * n..start * n + g.len()];
                for (d, &x) in da.iter_mut().zip(g) {
                    *d = *d + x;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.shape(*a)[1];
                let (m, w) = (node.value.shape()[0], node.value.shape()[1]);
                let s = slot(*a, grads);
                let da = grads[s].as_mut().unwrap();
                for i in 0..m {
                    for j in 0..w {
                        da[i * n + start + j] = da[i * n + start + j] + g[i * w + j];
                    }
                }
            }
            Op::Softmax(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let y = node.value.data();
                let s = slot(*a, grads);
                let da = grads[s].as_mut().unwrap();
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&y, &g)| acc + y * g);
                    for j in 0..n {
                        da[i * n + j] = da[i * n + j] + yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = *node.value.shape().last().unwrap();
                let rows = rstd.len();
                let gv = gain.map(|v| val(v).to_vec());
                if let Some(b) = bias.filter(|&b| needs(b)) {
                    let s = slot(b, grads);
                    let db = grads[s].as_mut().unwrap();
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] = db[j] + g[r * d + j];
                        }
                    }
                }
                if let Some(gn) = gain.filter(|&v| needs(v)) {
                    let s = slot(gn, grads);
                    let dg = grads[s].as_mut().unwrap();
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] = dg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if needs(*x) {
                    let s = slot(*x, grads);
                    let dx = grads[s].as_mut().unwrap();
                    let inv_d = T::of(1.0 / d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            let gj = g[r * d + j];
                            dxhat[j] = match &gv {
                                Some(gv) => gj * gv[j],
                                None => gj,
                            };
                        }
                        let h = &xhat[r * d..(r + 1) * d];
                        let m1 = dxhat.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
                        let m2 = dxhat.iter().zip(h).fold(T::zero(), |a, (&v, &hh)| a + v * hh) * inv_d;
                        for j in 0..d {
                            dx[r * d + j] = dx[r * d + j] + rstd[r] * (dxhat[j] - m1 - h[j] * m2);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let xa = val(*a);
                let s = slot(*a, grads);
                let da = grads[s].as_mut().unwrap();
                for j in 0..g.len() {
                    da[j] = da[j] + g[j] * gelu_grad(xa[j]);
                }
            }
            Op::Relu(a) => {
                let xa = val(*a);
                let s = slot(*a, grads);
                let da = grads[s].as_mut().unwrap();
                for j in 0..g.len() {
                    if xa[j] > T::zero() {
                        da[j] = da[j] + g[j];
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                let scale = if matches!(node.op, Op::Mean(_)) { T::of(1.0 / n as f64) } else { T::one() };
                let s = slot(*a, grads);
                let gv = g[0] * scale;
                for d in grads[s].as_mut().unwrap().iter_mut() {
                    *d = *d + gv;
                }
            }
            Op::Gather(table, idx) => {
                let d = self.shape(*table)[1];
                let s = slot(*table, grads);
                let dt = grads[s].as_mut().unwrap();
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] = dt[i * d + j] + g[r * d + j];
                    }
                }
            }
        }
    }
}

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{Shape, Tensor};
use super::DiffError;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddBias(usize, usize),
    AddExpand(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    Reshape(usize),
    Sum(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize),
    GatherRows { table: usize, ids: Vec<usize> },
    GatherSet { mem: usize, idx: Vec<usize> },
    Pick { src: usize, idx: Vec<usize> },
    BatchMatVec { mem: usize, q: usize },
    BatchVecMat { a: usize, mem: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Wengert list of executed primitives. Operands always precede results, so
/// a single reverse sweep yields every gradient.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by consuming a tape.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a `requires_grad` leaf. Leaves
    /// the loss does not depend on get an all-zero gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }
}

fn finite(op: &'static str, data: &[f64]) -> Result<(), DiffError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DiffError::NonFinite(op))
    }
}

fn mismatch(op: &'static str, a: &Shape, b: &Shape) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        lhs: a.dims().to_vec(),
        rhs: b.dims().to_vec(),
    }
}

/// C (m x n) += A (m x k) * B (k x n), with explicit row/column strides so
/// transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    // SAFETY: callers pass slices whose lengths cover the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, DiffError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(DiffError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn record(
        &mut self,
        name: &'static str,
        shape: Shape,
        data: Vec<f64>,
        op: Op,
        operands: &[usize],
    ) -> Result<Var, DiffError> {
        finite(name, &data)?;
        let needs = operands.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, needs))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.idx].value
    }

    /// Leaf that receives a gradient on backward.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.rank() != 2 || sb.rank() != 2 || sa.dims()[1] != sb.dims()[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa.dims()[0], sa.dims()[1], sb.dims()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.nodes[ia].value.data(),
            k as isize,
            1,
            self.nodes[ib].value.data(),
            n as isize,
            1,
            &mut out,
        );
        self.record("matmul", Shape::new(&[m, n])?, out, Op::MatMul(ia, ib), &[ia, ib])
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var, DiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().clone();
        self.record(name, shape, data, op(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `a + b` where `b` is rank 1 and matches the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if vb.shape().rank() != 1 || va.shape().last() != vb.numel() {
            return Err(mismatch("add_bias", va.shape(), vb.shape()));
        }
        let w = vb.numel();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(w) {
            for (x, y) in row.iter_mut().zip(vb.data()) {
                *x += y;
            }
        }
        let shape = va.shape().clone();
        self.record("add_bias", shape, data, Op::AddBias(ia, ib), &[ia, ib])
    }

    /// `a[b, i, :] + x[b, :]` for `a: [B, N, d]`, `x: [B, d]`.
    pub fn add_expand(&mut self, a: Var, x: Var) -> Result<Var, DiffError> {
        let (ia, ix) = (self.check(a)?, self.check(x)?);
        let (va, vx) = (&self.nodes[ia].value, &self.nodes[ix].value);
        let (da, dx) = (va.dims(), vx.dims());
        if da.len() != 3 || dx.len() != 2 || da[0] != dx[0] || da[2] != dx[1] {
            return Err(mismatch("add_expand", va.shape(), vx.shape()));
        }
        let (n, d) = (da[1], da[2]);
        let mut data = va.data().to_vec();
        for (bi, block) in data.chunks_mut(n * d).enumerate() {
            let xr = &vx.data()[bi * d..(bi + 1) * d];
            for row in block.chunks_mut(d) {
                for (v, y) in row.iter_mut().zip(xr) {
                    *v += y;
                }
            }
        }
        let shape = va.shape().clone();
        self.record("add_expand", shape, data, Op::AddExpand(ia, ix), &[ia, ix])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let data = va.data().iter().map(|x| x * s).collect();
        let shape = va.shape().clone();
        self.record("scale", shape, data, Op::Scale(ia, s), &[ia])
    }

    /// Concatenation along the last axis. Leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.check(v)).collect::<Result<_, _>>()?;
        let first = idx.first().ok_or(DiffError::EmptyOperands("concat"))?;
        let lead = {
            let d = self.nodes[*first].value.dims();
            d[..d.len().saturating_sub(1)].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s.rank() == 0 || s.dims()[..s.rank() - 1] != lead[..] {
                return Err(mismatch("concat", self.nodes[*first].value.shape(), s));
            }
            width += s.last();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let w = v.shape().last();
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut dims = lead;
        dims.push(width);
        self.record("concat", Shape::new(&dims)?, data, Op::Concat(idx.clone()), &idx)
    }

    /// `a[..., start..start+len]` along the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let w = va.shape().last();
        if va.shape().rank() == 0 || len == 0 || start + len > w {
            return Err(DiffError::SliceOutOfRange { start, len, extent: w });
        }
        let data = va
            .data()
            .chunks(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut dims = va.dims().to_vec();
        *dims.last_mut().unwrap() = len;
        self.record("slice", Shape::new(&dims)?, data, Op::Slice { src: ia, start }, &[ia])
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let shape = Shape::new(dims)?;
        let va = &self.nodes[ia].value;
        if shape.numel() != va.numel() {
            return Err(mismatch("reshape", va.shape(), &shape));
        }
        let data = va.data().to_vec();
        self.record("reshape", shape, data, Op::Reshape(ia), &[ia])
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        self.record("sum", Shape::scalar(), vec![s], Op::Sum(ia), &[ia])
    }

    fn map(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: fn(usize) -> Op,
    ) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().clone();
        self.record(name, shape, data, op(ia), &[ia])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.map("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.map("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.map("exp", a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        self.map("log", a, f64::ln, Op::Log)
    }

    /// Softmax over the last axis. Positions whose mask entry is `false`
    /// receive probability exactly zero; the mask, when given, has one entry
    /// per element of `a`.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if let Some(m) = mask {
            if m.len() != va.numel() {
                return Err(DiffError::MaskLength {
                    expected: va.numel(),
                    got: m.len(),
                });
            }
        }
        let w = va.shape().last();
        let mut out = vec![0.0; va.numel()];
        for (r, (row, dst)) in va.data().chunks(w).zip(out.chunks_mut(w)).enumerate() {
            let allowed = |j: usize| mask.is_none_or(|m| m[r * w + j]);
            let mut hi = f64::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) && x > hi {
                    hi = x;
                }
            }
            if hi == f64::NEG_INFINITY {
                return Err(DiffError::FullyMasked);
            }
            let mut z = 0.0;
            for (j, (&x, o)) in row.iter().zip(dst.iter_mut()).enumerate() {
                if allowed(j) {
                    *o = (x - hi).exp();
                    z += *o;
                }
            }
            for o in dst.iter_mut() {
                *o /= z;
            }
        }
        let shape = va.shape().clone();
        self.record("softmax", shape, out, Op::Softmax(ia), &[ia])
    }

    /// Embedding lookup: rows of `table: [V, d]` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        let it = self.check(table)?;
        let vt = &self.nodes[it].value;
        if vt.shape().rank() != 2 || ids.is_empty() {
            return Err(DiffError::EmptyOperands("gather_rows"));
        }
        let (v, d) = (vt.dims()[0], vt.dims()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(DiffError::IndexOutOfRange { index: i, extent: v });
            }
            data.extend_from_slice(vt.row(i));
        }
        let op = Op::GatherRows { table: it, ids: ids.to_vec() };
        self.record("gather_rows", Shape::new(&[ids.len(), d])?, data, op, &[it])
    }

    /// `mem[b, idx[b], :]` for `mem: [B, N, d]`.
    pub fn gather_set(&mut self, mem: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let im = self.check(mem)?;
        let vm = &self.nodes[im].value;
        let dims = vm.dims();
        if dims.len() != 3 || dims[0] != idx.len() {
            return Err(DiffError::IndexShape { op: "gather_set", dims: dims.to_vec(), len: idx.len() });
        }
        let (n, d) = (dims[1], dims[2]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for (b, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(DiffError::IndexOutOfRange { index: i, extent: n });
            }
            let off = (b * n + i) * d;
            data.extend_from_slice(&vm.data()[off..off + d]);
        }
        let op = Op::GatherSet { mem: im, idx: idx.to_vec() };
        self.record("gather_set", Shape::new(&[idx.len(), d])?, data, op, &[im])
    }

    /// `a[b, idx[b]]` for `a: [B, N]`, giving `[B]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let dims = va.dims();
        if dims.len() != 2 || dims[0] != idx.len() {
            return Err(DiffError::IndexShape { op: "pick", dims: dims.to_vec(), len: idx.len() });
        }
        let n = dims[1];
        let mut data = Vec::with_capacity(idx.len());
        for (b, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(DiffError::IndexOutOfRange { index: i, extent: n });
            }
            data.push(va.data()[b * n + i]);
        }
        let op = Op::Pick { src: ia, idx: idx.to_vec() };
        self.record("pick", Shape::new(&[idx.len()])?, data, op, &[ia])
    }

    /// Per-batch scores `out[b, i] = <mem[b, i, :], q[b, :]>`.
    pub fn batch_matvec(&mut self, mem: Var, q: Var) -> Result<Var, DiffError> {
        let (im, iq) = (self.check(mem)?, self.check(q)?);
        let (vm, vq) = (&self.nodes[im].value, &self.nodes[iq].value);
        let (dm, dq) = (vm.dims(), vq.dims());
        if dm.len() != 3 || dq.len() != 2 || dm[0] != dq[0] || dm[2] != dq[1] {
            return Err(mismatch("batch_matvec", vm.shape(), vq.shape()));
        }
        let (bsz, n, d) = (dm[0], dm[1], dm[2]);
        let mut out = Vec::with_capacity(bsz * n);
        for b in 0..bsz {
            let qr = &vq.data()[b * d..(b + 1) * d];
            for row in vm.data()[b * n * d..(b + 1) * n * d].chunks(d) {
                out.push(row.iter().zip(qr).map(|(x, y)| x * y).sum());
            }
        }
        let op = Op::BatchMatVec { mem: im, q: iq };
        self.record("batch_matvec", Shape::new(&[bsz, n])?, out, op, &[im, iq])
    }

    /// Per-batch blends `out[b, :] = sum_i a[b, i] * mem[b, i, :]`.
    pub fn batch_vecmat(&mut self, a: Var, mem: Var) -> Result<Var, DiffError> {
        let (ia, im) = (self.check(a)?, self.check(mem)?);
        let (va, vm) = (&self.nodes[ia].value, &self.nodes[im].value);
        let (da, dm) = (va.dims(), vm.dims());
        if da.len() != 2 || dm.len() != 3 || da[0] != dm[0] || da[1] != dm[1] {
            return Err(mismatch("batch_vecmat", va.shape(), vm.shape()));
        }
        let (bsz, n, d) = (dm[0], dm[1], dm[2]);
        let mut out = vec![0.0; bsz * d];
        for b in 0..bsz {
            let dst = &mut out[b * d..(b + 1) * d];
            for i in 0..n {
                let w = va.data()[b * n + i];
                let row = &vm.data()[(b * n + i) * d..(b * n + i + 1) * d];
                for (o, x) in dst.iter_mut().zip(row) {
                    *o += w * x;
                }
            }
        }
        let op = Op::BatchVecMat { a: ia, mem: im };
        self.record("batch_vecmat", Shape::new(&[bsz, d])?, out, op, &[ia, im])
    }

    /// Reverse sweep from a rank-0 `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, DiffError> {
        let il = self.check(loss)?;
        if self.nodes[il].value.shape().rank() != 0 {
            return Err(DiffError::NonScalarLoss(self.nodes[il].value.dims().to_vec()));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![1.0]);

        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> Option<&'g mut [f64]> {
            if !nodes[i].needs_grad {
                return None;
            }
            let n = nodes[i].value.numel();
            Some(grads[i].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
        }

        for k in (0..=il).rev() {
            if !nodes[k].needs_grad {
                continue;
            }
            let g = match &nodes[k].op {
                Op::Leaf => continue,
                _ => match grads[k].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let out = &nodes[k].value;
            match &nodes[k].op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, kk, n) = (va.dims()[0], va.dims()[1], vb.dims()[1]);
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        // dA = dC * B^T
                        gemm_acc(m, n, kk, &g, n as isize, 1, vb.data(), 1, n as isize, ga);
                    }
                    if let Some(gb) = acc(&mut grads, &nodes, *b) {
                        // dB = A^T * dC
                        gemm_acc(kk, m, n, va.data(), 1, kk as isize, &g, n as isize, 1, gb);
                    }
                }
                Op::Add(a, b) => {
                    for (i, s) in [(*a, 1.0), (*b, 1.0)] {
                        if let Some(ga) = acc(&mut grads, &nodes, i) {
                            ga.iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (i, s) in [(*a, 1.0), (*b, -1.0)] {
                        if let Some(ga) = acc(&mut grads, &nodes, i) {
                            ga.iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                        }
                    }
                }
                Op::AddBias(a, b) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if let Some(gb) = acc(&mut grads, &nodes, *b) {
                        let w = gb.len();
                        for row in g.chunks(w) {
                            gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::AddExpand(a, x) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(p, y)| *p += y);
                    }
                    let dims = out.dims();
                    let (n, d) = (dims[1], dims[2]);
                    if let Some(gx) = acc(&mut grads, &nodes, *x) {
                        for (bi, block) in g.chunks(n * d).enumerate() {
                            let dst = &mut gx[bi * d..(bi + 1) * d];
                            for row in block.chunks(d) {
                                dst.iter_mut().zip(row).for_each(|(p, y)| *p += y);
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if nodes[a].needs_grad {
                        let vb = nodes[b].value.data();
                        let ga = acc(&mut grads, &nodes, a).unwrap();
                        for ((x, y), z) in ga.iter_mut().zip(&g).zip(vb) {
                            *x += y * z;
                        }
                    }
                    if nodes[b].needs_grad {
                        let va = nodes[a].value.data();
                        let gb = acc(&mut grads, &nodes, b).unwrap();
                        for ((x, y), z) in gb.iter_mut().zip(&g).zip(va) {
                            *x += y * z;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                    }
                }
                Op::Concat(parts) => {
                    let w = out.shape().last();
                    let rows = out.numel() / w;
                    let mut off = 0;
                    for &p in parts {
                        let pw = nodes[p].value.shape().last();
                        if let Some(gp) = acc(&mut grads, &nodes, p) {
                            for r in 0..rows {
                                let src = &g[r * w + off..r * w + off + pw];
                                gp[r * pw..(r + 1) * pw]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, y)| *x += y);
                            }
                        }
                        off += pw;
                    }
                }
                Op::Slice { src, start } => {
                    let w = nodes[*src].value.shape().last();
                    let len = out.shape().last();
                    if let Some(gs) = acc(&mut grads, &nodes, *src) {
                        for (row, gr) in gs.chunks_mut(w).zip(g.chunks(len)) {
                            row[*start..start + len]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Reshape(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::Sigmoid(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for ((x, y), s) in ga.iter_mut().zip(&g).zip(out.data()) {
                            *x += y * s * (1.0 - s);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for ((x, y), t) in ga.iter_mut().zip(&g).zip(out.data()) {
                            *x += y * (1.0 - t * t);
                        }
                    }
                }
                Op::Exp(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for ((x, y), e) in ga.iter_mut().zip(&g).zip(out.data()) {
                            *x += y * e;
                        }
                    }
                }
                Op::Log(a) => {
                    let a = *a;
                    if nodes[a].needs_grad {
                        let va = nodes[a].value.data();
                        let ga = acc(&mut grads, &nodes, a).unwrap();
                        for ((x, y), v) in ga.iter_mut().zip(&g).zip(va) {
                            *x += y / v;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let w = out.shape().last();
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for ((gr, yr), dst) in g.chunks(w).zip(out.data().chunks(w)).zip(ga.chunks_mut(w)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                            for ((d, x), y) in dst.iter_mut().zip(gr).zip(yr) {
                                *d += y * (x - dot);
                            }
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let d = out.shape().last();
                    if let Some(gt) = acc(&mut grads, &nodes, *table) {
                        for (r, &i) in ids.iter().enumerate() {
                            gt[i * d..(i + 1) * d]
                                .iter_mut()
                                .zip(&g[r * d..(r + 1) * d])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::GatherSet { mem, idx } => {
                    let dims = nodes[*mem].value.dims();
                    let (n, d) = (dims[1], dims[2]);
                    if let Some(gm) = acc(&mut grads, &nodes, *mem) {
                        for (b, &i) in idx.iter().enumerate() {
                            let off = (b * n + i) * d;
                            gm[off..off + d]
                                .iter_mut()
                                .zip(&g[b * d..(b + 1) * d])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Pick { src, idx } => {
                    let n = nodes[*src].value.shape().last();
                    if let Some(gs) = acc(&mut grads, &nodes, *src) {
                        for (b, &i) in idx.iter().enumerate() {
                            gs[b * n + i] += g[b];
                        }
                    }
                }
                Op::BatchMatVec { mem, q } => {
                    let (mem, q) = (*mem, *q);
                    let dims = nodes[mem].value.dims().to_vec();
                    let (bsz, n, d) = (dims[0], dims[1], dims[2]);
                    if nodes[mem].needs_grad {
                        let vq = nodes[q].value.data();
                        let gm = acc(&mut grads, &nodes, mem).unwrap();
                        for b in 0..bsz {
                            for i in 0..n {
                                let s = g[b * n + i];
                                let dst = &mut gm[(b * n + i) * d..(b * n + i + 1) * d];
                                dst.iter_mut().zip(&vq[b * d..(b + 1) * d]).for_each(|(x, y)| *x += s * y);
                            }
                        }
                    }
                    if nodes[q].needs_grad {
                        let vm = nodes[mem].value.data();
                        let gq = acc(&mut grads, &nodes, q).unwrap();
                        for b in 0..bsz {
                            let dst = &mut gq[b * d..(b + 1) * d];
                            for i in 0..n {
                                let s = g[b * n + i];
                                let row = &vm[(b * n + i) * d..(b * n + i + 1) * d];
                                dst.iter_mut().zip(row).for_each(|(x, y)| *x += s * y);
                            }
                        }
                    }
                }
                Op::BatchVecMat { a, mem } => {
                    let (a, mem) = (*a, *mem);
                    let dims = nodes[mem].value.dims().to_vec();
                    let (bsz, n, d) = (dims[0], dims[1], dims[2]);
                    if nodes[a].needs_grad {
                        let vm = nodes[mem].value.data();
                        let ga = acc(&mut grads, &nodes, a).unwrap();
                        for b in 0..bsz {
                            let gr = &g[b * d..(b + 1) * d];
                            for i in 0..n {
                                let row = &vm[(b * n + i) * d..(b * n + i + 1) * d];
                                ga[b * n + i] += row.iter().zip(gr).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if nodes[mem].needs_grad {
                        let va = nodes[a].value.data();
                        let gm = acc(&mut grads, &nodes, mem).unwrap();
                        for b in 0..bsz {
                            let gr = &g[b * d..(b + 1) * d];
                            for i in 0..n {
                                let w = va[b * n + i];
                                let dst = &mut gm[(b * n + i) * d..(b * n + i + 1) * d];
                                dst.iter_mut().zip(gr).for_each(|(x, y)| *x += w * y);
                            }
                        }
                    }
                }
            }
        }

        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.needs_grad => Some(Tensor::from_parts(
                    node.value.shape().clone(),
                    g.unwrap_or_else(|| vec![0.0; node.value.numel()]),
                )),
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, grads })
    }
}

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::fmath;
use super::tensor::{gemm, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operations understood by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Square,
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var, bcast: bool },
    Sub { a: Var, b: Var, bcast: bool },
    Mul { a: Var, b: Var, bcast: bool },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Reshape(Var),
    Conv { x: Var, w: Var, dilation: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of executed operations supporting one reverse sweep.
///
/// Nodes are appended in execution order, so the reverse sweep is a plain
/// walk from the loss index down to zero.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fmath::exp(-x))
    } else {
        let e = fmath::exp(x);
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether backward
    /// fills its `grad`.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        t.grad = None;
        let needs_grad = t.requires_grad;
        self.push(t, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of a `requires_grad` tensor after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Contract(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        Ok(match op {
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Exp => self.exp(args[0]),
            Elementwise::Ln => self.ln(args[0]),
            Elementwise::Square => self.square(args[0]),
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Sub => self.sub(args[0], args[1])?,
            Elementwise::Mul => self.mul(args[0], args[1])?,
        })
    }

    /// Checks binary-op shapes. Returns `true` when `b` is a per-frame vector
    /// broadcast across the rows of a `T x m` operand `a`.
    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(false);
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            return Ok(true);
        }
        Err(dim_err(op, sa, sb))
    }

    fn binary(&mut self, a: Var, b: Var, bcast: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = &self.nodes[a.0].value;
        let bv = self.nodes[b.0].value.data();
        let mut out = av.clone();
        out.requires_grad = false;
        if bcast {
            let m = bv.len();
            for row in out.data_mut().chunks_mut(m) {
                for (o, &y) in row.iter_mut().zip(bv) {
                    *o = f(*o, y);
                }
            }
        } else {
            for (o, &y) in out.data_mut().iter_mut().zip(bv) {
                *o = f(*o, y);
            }
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.binary_shapes("add", a, b)?;
        let v = self.binary(a, b, bcast, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add { a, b, bcast }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.binary_shapes("sub", a, b)?;
        let v = self.binary(a, b, bcast, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub { a, b, bcast }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.binary_shapes("mul", a, b)?;
        let v = self.binary(a, b, bcast, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul { a, b, bcast }, ng))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.nodes[a.0].value.map(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), fmath::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), stable_sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), fmath::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), fmath::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.nodes[a.0].value.reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = gemm_new(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1));
        let ng = self.ng(a) || self.ng(b);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::MatMul {
                a,
                b,
                transpose_b: false,
            },
            ng,
        ))
    }

    /// `a[m x k] * b[n x k]^T`: applies an `out x in` weight to row frames.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(dim_err("matmul_bt", self.shape(a), self.shape(b)));
        }
        let out = gemm_new(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (1, k));
        let ng = self.ng(a) || self.ng(b);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::MatMul {
                a,
                b,
                transpose_b: true,
            },
            ng,
        ))
    }

    /// Non-causal three-tap dilated convolution with zero padding.
    ///
    /// `x` is `T x m`, `w` is `3 x m x n` holding the taps for offsets
    /// `-d, 0, +d` in that order. The output is `T x n`.
    pub fn dilated_conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::Parameter("dilation must be positive".into()));
        }
        let (t_len, m) = self.value(x).dims2()?;
        let ws = self.shape(w);
        if ws.len() != 3 || ws[0] != 3 || ws[1] != m {
            return Err(dim_err("dilated_conv1d", self.shape(x), self.shape(w)));
        }
        let n = ws[2];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        // the centre tap spans every row, so it starts the sum
        let mut out = gemm_new(t_len, m, n, xd, (m, 1), &wd[m * n..2 * m * n], (n, 1));
        for tap in [0, 2] {
            let Some((t0, t1, src0)) = tap_range(tap, dilation, t_len) else {
                continue;
            };
            let rows = t1 - t0;
            gemm(
                rows,
                m,
                n,
                &xd[src0 * m..],
                (m, 1),
                &wd[tap * m * n..(tap + 1) * m * n],
                (n, 1),
                1.0,
                &mut out[t0 * n..],
                (n, 1),
            );
        }
        let ng = self.ng(x) || self.ng(w);
        let t = Tensor::new(vec![t_len, n], out)?;
        Ok(self.push(t, Op::Conv { x, w, dilation }, ng))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    if self.nodes[i].value.requires_grad {
                        self.nodes[i].value.grad = Some(g);
                    }
                }
                Op::Add { a, b, bcast } => {
                    self.acc_copy(&mut adj, a, &g);
                    self.acc(&mut adj, b, |buf| reduce_into(buf, &g, bcast, 1.0));
                }
                Op::Sub { a, b, bcast } => {
                    self.acc_copy(&mut adj, a, &g);
                    self.acc(&mut adj, b, |buf| reduce_into(buf, &g, bcast, -1.0));
                }
                Op::Mul { a, b, bcast } => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    if self.nodes[a.0].needs_grad {
                        let buf = slot(&mut adj, a, av.len());
                        if bcast {
                            let m = bv.len();
                            for (row, grow) in buf.chunks_mut(m).zip(g.chunks(m)) {
                                for ((o, &gi), &bi) in row.iter_mut().zip(grow).zip(bv) {
                                    *o += gi * bi;
                                }
                            }
                        } else {
                            for ((o, &gi), &bi) in buf.iter_mut().zip(&g).zip(bv) {
                                *o += gi * bi;
                            }
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let buf = slot(&mut adj, b, bv.len());
                        if bcast {
                            let m = bv.len();
                            for (arow, grow) in av.chunks(m).zip(g.chunks(m)) {
                                for ((o, &gi), &ai) in buf.iter_mut().zip(grow).zip(arow) {
                                    *o += gi * ai;
                                }
                            }
                        } else {
                            for ((o, &gi), &ai) in buf.iter_mut().zip(&g).zip(av) {
                                *o += gi * ai;
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.data();
                    self.acc_unary(&mut adj, a, &g, y, |_, yi| 1.0 - yi * yi);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.data();
                    self.acc_unary(&mut adj, a, &g, y, |_, yi| yi * (1.0 - yi));
                }
                Op::Exp(a) => {
                    let y = self.nodes[i].value.data();
                    self.acc_unary(&mut adj, a, &g, y, |_, yi| yi);
                }
                Op::Ln(a) => {
                    let y = self.nodes[i].value.data();
                    self.acc_unary(&mut adj, a, &g, y, |xi, _| 1.0 / xi);
                }
                Op::Square(a) => {
                    let y = self.nodes[i].value.data();
                    self.acc_unary(&mut adj, a, &g, y, |xi, _| 2.0 * xi);
                }
                Op::Scale(a, c) => self.acc(&mut adj, a, |buf| axpy(buf, &g, c)),
                Op::AddScalar(a) | Op::Reshape(a) => self.acc_copy(&mut adj, a, &g),
                Op::Sum(a) => {
                    let s = g[0];
                    self.acc(&mut adj, a, |buf| buf.iter_mut().for_each(|o| *o += s));
                }
                Op::MatMul { a, b, transpose_b } => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let (m, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                    let n = self.nodes[i].value.shape()[1];
                    if self.nodes[a.0].needs_grad {
                        // dA = dC * B^T  (or dC * B when B was transposed)
                        let bst = if transpose_b { (k, 1) } else { (1, n) };
                        acc_gemm(&mut adj, a, m, n, k, (&g, (n, 1)), (bv, bst));
                    }
                    if self.nodes[b.0].needs_grad {
                        if transpose_b {
                            // dB[n x k] = dC^T * A
                            acc_gemm(&mut adj, b, n, m, k, (&g, (1, n)), (av, (k, 1)));
                        } else {
                            // dB[k x n] = A^T * dC
                            acc_gemm(&mut adj, b, k, m, n, (av, (1, k)), (&g, (n, 1)));
                        }
                    }
                }
                Op::Conv { x, w, dilation } => {
                    let (t_len, m) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                    let n = self.nodes[w.0].value.shape()[2];
                    let xd = self.nodes[x.0].value.data();
                    let wd = self.nodes[w.0].value.data();
                    if self.nodes[x.0].needs_grad {
                        let centre = &wd[m * n..2 * m * n];
                        acc_gemm(&mut adj, x, t_len, n, m, (&g, (n, 1)), (centre, (1, n)));
                        let buf = slot(&mut adj, x, t_len * m);
                        for tap in [0, 2] {
                            let Some((t0, t1, src0)) = tap_range(tap, dilation, t_len) else {
                                continue;
                            };
                            let wt = &wd[tap * m * n..(tap + 1) * m * n];
                            gemm(t1 - t0, n, m, &g[t0 * n..], (n, 1), wt, (1, n), 1.0, &mut buf[src0 * m..], (m, 1));
                        }
                    }
                    if self.nodes[w.0].needs_grad {
                        let buf = slot(&mut adj, w, 3 * m * n);
                        for tap in 0..3 {
                            let Some((t0, t1, src0)) = tap_range(tap, dilation, t_len) else {
                                continue;
                            };
                            let wbuf = &mut buf[tap * m * n..(tap + 1) * m * n];
                            gemm(m, t1 - t0, n, &xd[src0 * m..], (1, m), &g[t0 * n..], (n, 1), 1.0, wbuf, (n, 1));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.nodes[v.0].needs_grad {
            f(slot(adj, v, self.nodes[v.0].value.len()));
        }
    }

    fn acc_unary(
        &self,
        adj: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        y: &[f64],
        d: impl Fn(f64, f64) -> f64,
    ) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let x = self.nodes[a.0].value.data();
        match &mut adj[a.0] {
            Some(buf) => {
                for (((o, &gi), &xi), &yi) in buf.iter_mut().zip(g).zip(x).zip(y) {
                    *o += gi * d(xi, yi);
                }
            }
            empty => *empty = Some(g.iter().zip(x).zip(y).map(|((&gi, &xi), &yi)| gi * d(xi, yi)).collect()),
        }
    }

    /// Adds `g` unchanged; the first contribution is a plain copy.
    fn acc_copy(&self, adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(buf) => axpy(buf, g, 1.0),
            empty => *empty = Some(g.to_vec()),
        }
    }

    /// Clears leaf gradients so that backward may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.backward_done = false;
    }
}

/// Fresh `m x n` product; with beta zero the kernel never reads the output,
/// so the buffer is handed over uninitialized.
fn gemm_new(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize)) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(m * n);
    if k == 0 {
        out.resize(m * n, 0.0);
        return out;
    }
    super::tensor::gemm_uninit(m, k, n, a, sa, b, sb, out.spare_capacity_mut());
    // SAFETY: gemm_uninit wrote all m * n entries
    unsafe { out.set_len(m * n) };
    out
}

/// Adds an `m x n` product into the adjoint of `v`, or creates it.
fn acc_gemm(
    adj: &mut [Option<Vec<f64>>],
    v: Var,
    m: usize,
    k: usize,
    n: usize,
    (a, sa): (&[f64], (usize, usize)),
    (b, sb): (&[f64], (usize, usize)),
) {
    match &mut adj[v.0] {
        Some(buf) => gemm(m, k, n, a, sa, b, sb, 1.0, buf, (n, 1)),
        empty => *empty = Some(gemm_new(m, k, n, a, sa, b, sb)),
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(buf: &mut [f64], g: &[f64], c: f64) {
    for (o, &gi) in buf.iter_mut().zip(g) {
        *o += c * gi;
    }
}

fn reduce_into(buf: &mut [f64], g: &[f64], bcast: bool, c: f64) {
    if bcast {
        let m = buf.len();
        for row in g.chunks(m) {
            axpy(buf, row, c);
        }
    } else {
        axpy(buf, g, c);
    }
}

/// Output rows `[t0, t1)` that read input rows starting at `src0` for a tap.
fn tap_range(tap: usize, dilation: usize, t_len: usize) -> Option<(usize, usize, usize)> {
    match tap {
        0 => (dilation < t_len).then_some((dilation, t_len, 0)),
        1 => Some((0, t_len, 0)),
        _ => (dilation < t_len).then(|| (0, t_len - dilation, dilation)),
    }
}

//! Eager reverse-mode differentiation over row-major matrices.
//!
//! Every operation computes its value immediately and records how to route
//! adjoints back to its inputs. Node ids are assigned in creation order, so
//! the reverse id order is a reverse topological order.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TapeError {
    #[error("backward needs a 1x1 root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    Exp,
    Abs,
}

enum Op<T> {
    Leaf,
    Param(usize),
    /// Gradient passes through unchanged (reshape, constant offsets).
    Identity(usize),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Unary(usize, Unary),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Hypot(usize, usize),
    Scale(usize, T),
    MulConst(usize, Vec<T>),
    Column(usize, usize),
    Rows(usize, usize),
    CumsumExclusive(usize),
    WeightedSumRows(usize, usize),
    Sum(usize),
    Masked(usize, Vec<bool>),
}

struct Node<T> {
    op: Op<T>,
    rows: usize,
    cols: usize,
    value: Vec<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    num_params: usize,
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus_scalar<T: Real>(x: T) -> T {
    softplus(x)
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    sigmoid(x)
}

impl<T: Real> Tape<T> {
    /// A tape whose gradients are taken with respect to a flat parameter
    /// vector of length `num_params`.
    pub fn new(num_params: usize) -> Self {
        Self { nodes: Vec::new(), num_params }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, rows: usize, cols: usize, value: Vec<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    /// The single value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        assert_eq!(self.shape(v), (1, 1), "not a scalar node");
        self.nodes[v.0].value[0]
    }

    fn same_shape(&self, a: Var, b: Var) -> (usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "shape mismatch");
        sa
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant data length");
        self.push(Op::Leaf, rows, cols, data)
    }

    /// A `rows x cols` block of the parameter vector starting at `offset`.
    pub fn param(&mut self, params: &[T], offset: usize, rows: usize, cols: usize) -> Var {
        assert_eq!(params.len(), self.num_params, "parameter vector length");
        let data = params[offset..offset + rows * cols].to_vec();
        self.push(Op::Param(offset), rows, cols, data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            (k as isize, 1),
            &self.nodes[b.0].value,
            (n as isize, 1),
            T::zero(),
            &mut out,
        );
        self.push(Op::MatMul(a.0, b.0), m, n, out)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shape");
        let r = &self.nodes[row.0].value;
        let out: Vec<T> = self.nodes[a.0]
            .value
            .chunks_exact(n)
            .flat_map(|x| x.iter().zip(r).map(|(x, b)| *x + *b))
            .collect();
        self.push(Op::AddRow(a.0, row.0), m, n, out)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let (m, n) = self.shape(a);
        let f: fn(T) -> T = match kind {
            Unary::Relu => |x| if x > T::zero() { x } else { T::zero() },
            Unary::Softplus => softplus,
            Unary::Sigmoid => sigmoid,
            Unary::Exp => |x| x.exp(),
            Unary::Abs => |x| x.abs(),
        };
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(Op::Unary(a.0, kind), m, n, out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    /// `|a|`, with zero derivative at zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> (Vec<T>, usize, usize) {
        let (m, n) = self.same_shape(a, b);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        (out, m, n)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (v, m, n) = self.binary(a, b, |x, y| x + y);
        self.push(Op::Add(a.0, b.0), m, n, v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (v, m, n) = self.binary(a, b, |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), m, n, v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (v, m, n) = self.binary(a, b, |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), m, n, v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (v, m, n) = self.binary(a, b, |x, y| x / y);
        self.push(Op::Div(a.0, b.0), m, n, v)
    }

    /// Elementwise `sqrt(a² + b²)`, with zero derivative at the origin.
    pub fn hypot(&mut self, a: Var, b: Var) -> Var {
        let (v, m, n) = self.binary(a, b, |x, y| x.hypot(y));
        self.push(Op::Hypot(a.0, b.0), m, n, v)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (m, n) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| x * s).collect();
        self.push(Op::Scale(a.0, s), m, n, out)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let (m, n) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| x + s).collect();
        self.push(Op::Identity(a.0), m, n, out)
    }

    /// Elementwise `a + c` for a constant `c` of the same shape.
    pub fn add_const(&mut self, a: Var, c: &[T]) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(c.len(), m * n, "add_const shape");
        let out = self.nodes[a.0].value.iter().zip(c).map(|(&x, &y)| x + y).collect();
        self.push(Op::Identity(a.0), m, n, out)
    }

    /// Elementwise `a * c` for a constant `c` of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Vec<T>) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(c.len(), m * n, "mul_const shape");
        let out = self.nodes[a.0].value.iter().zip(&c).map(|(&x, &y)| x * y).collect();
        self.push(Op::MulConst(a.0, c), m, n, out)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(m * n, rows * cols, "reshape size");
        let out = self.nodes[a.0].value.clone();
        self.push(Op::Identity(a.0), rows, cols, out)
    }

    /// Column `j` of `a` as an `m x 1` node.
    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(j < n, "column index");
        let out = self.nodes[a.0].value.iter().skip(j).step_by(n).copied().collect();
        self.push(Op::Column(a.0, j), m, 1, out)
    }

    /// Rows `start..start + count` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + count <= m, "row range");
        let out = self.nodes[a.0].value[start * n..(start + count) * n].to_vec();
        self.push(Op::Rows(a.0, start), count, n, out)
    }

    /// Per row: `out[r][m] = Σ_{j<m} a[r][j]`.
    pub fn cumsum_exclusive_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = Vec::with_capacity(m * n);
        for row in self.nodes[a.0].value.chunks_exact(n) {
            let mut acc = T::zero();
            for &x in row {
                out.push(acc);
                acc += x;
            }
        }
        self.push(Op::CumsumExclusive(a.0), m, n, out)
    }

    /// For `w` of shape `R x M` and `v` of shape `(R*M) x C`:
    /// `out[r][c] = Σ_m w[r][m] * v[r*M + m][c]`.
    pub fn weighted_sum_rows(&mut self, w: Var, v: Var) -> Var {
        let (r, mm) = self.shape(w);
        let (rv, c) = self.shape(v);
        assert_eq!(rv, r * mm, "weighted_sum_rows shape");
        let wv = &self.nodes[w.0].value;
        let vv = &self.nodes[v.0].value;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let o = &mut out[i * c..(i + 1) * c];
            for j in 0..mm {
                let wt = wv[i * mm + j];
                let row = &vv[(i * mm + j) * c..(i * mm + j + 1) * c];
                for (o, x) in o.iter_mut().zip(row) {
                    *o += wt * *x;
                }
            }
        }
        self.push(Op::WeightedSumRows(w.0, v.0), r, c, out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().copied().sum();
        self.push(Op::Sum(a.0), 1, 1, vec![s])
    }

    /// Replaces the entries where `mask` is true by `fill`; those entries
    /// receive no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>, fill: T) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(mask.len(), m * n, "mask shape");
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(&x, &k)| if k { fill } else { x })
            .collect();
        self.push(Op::Masked(a.0, mask), m, n, out)
    }

    /// Gradient of a 1x1 `root` with respect to the parameter vector.
    pub fn backward(&self, root: Var) -> Result<Vec<T>, TapeError> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(TapeError::NonScalarRoot { rows, cols });
        }
        let mut grad = vec![T::zero(); self.num_params];
        let mut adj: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(vec![T::one()]);

        fn slot<'a, T: Real>(adj: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize) -> &'a mut [T] {
            adj[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.len()])
        }

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {}
                Op::Param(off) => {
                    for (d, x) in grad[*off..*off + g.len()].iter_mut().zip(&g) {
                        *d += *x;
                    }
                }
                Op::Identity(a) => {
                    for (d, x) in slot(&mut adj, nodes, *a).iter_mut().zip(&g) {
                        *d += *x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[*a].rows, nodes[*a].cols);
                    let n = nodes[*b].cols;
                    // dA += G Bᵀ
                    T::gemm(
                        m,
                        n,
                        k,
                        &g,
                        (n as isize, 1),
                        &nodes[*b].value,
                        (1, n as isize),
                        T::one(),
                        slot(&mut adj, nodes, *a),
                    );
                    // dB += Aᵀ G
                    T::gemm(
                        k,
                        m,
                        n,
                        &nodes[*a].value,
                        (1, k as isize),
                        &g,
                        (n as isize, 1),
                        T::one(),
                        slot(&mut adj, nodes, *b),
                    );
                }
                Op::AddRow(a, r) => {
                    let n = node.cols;
                    for (d, x) in slot(&mut adj, nodes, *a).iter_mut().zip(&g) {
                        *d += *x;
                    }
                    let dr = slot(&mut adj, nodes, *r);
                    for row in g.chunks_exact(n) {
                        for (d, x) in dr.iter_mut().zip(row) {
                            *d += *x;
                        }
                    }
                }
                Op::Unary(a, kind) => {
                    let x = &nodes[*a].value;
                    let y = &node.value;
                    let da = slot(&mut adj, nodes, *a);
                    for i in 0..g.len() {
                        let local = match kind {
                            Unary::Relu => {
                                if x[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Softplus => sigmoid(x[i]),
                            Unary::Sigmoid => y[i] * (T::one() - y[i]),
                            Unary::Exp => y[i],
                            Unary::Abs => {
                                if x[i] > T::zero() {
                                    T::one()
                                } else if x[i] < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                        };
                        da[i] += g[i] * local;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                    for (d, x) in slot(&mut adj, nodes, *a).iter_mut().zip(&g) {
                        *d += *x;
                    }
                    for (d, x) in slot(&mut adj, nodes, *b).iter_mut().zip(&g) {
                        *d += sign * *x;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    for ((d, x), y) in slot(&mut adj, nodes, *a).iter_mut().zip(&g).zip(vb) {
                        *d += *x * *y;
                    }
                    for ((d, x), y) in slot(&mut adj, nodes, *b).iter_mut().zip(&g).zip(va) {
                        *d += *x * *y;
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    for ((d, x), y) in slot(&mut adj, nodes, *a).iter_mut().zip(&g).zip(vb) {
                        *d += *x / *y;
                    }
                    let db = slot(&mut adj, nodes, *b);
                    for i in 0..g.len() {
                        db[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
                Op::Hypot(a, b) => {
                    let h = &node.value;
                    for src in [*a, *b] {
                        let v = &nodes[src].value;
                        let d = slot(&mut adj, nodes, src);
                        for i in 0..g.len() {
                            if h[i] > T::zero() {
                                d[i] += g[i] * v[i] / h[i];
                            }
                        }
                    }
                }
                Op::Scale(a, s) => {
                    for (d, x) in slot(&mut adj, nodes, *a).iter_mut().zip(&g) {
                        *d += *x * *s;
                    }
                }
                Op::MulConst(a, c) => {
                    for ((d, x), y) in slot(&mut adj, nodes, *a).iter_mut().zip(&g).zip(c) {
                        *d += *x * *y;
                    }
                }
                Op::Column(a, j) => {
                    let n = nodes[*a].cols;
                    let da = slot(&mut adj, nodes, *a);
                    for (i, x) in g.iter().enumerate() {
                        da[i * n + j] += *x;
                    }
                }
                Op::Rows(a, start) => {
                    let off = start * node.cols;
                    for (d, x) in slot(&mut adj, nodes, *a)[off..off + g.len()].iter_mut().zip(&g) {
                        *d += *x;
                    }
                }
                Op::CumsumExclusive(a) => {
                    let n = node.cols;
                    let da = slot(&mut adj, nodes, *a);
                    for (drow, grow) in da.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                        let mut acc = T::zero();
                        for j in (0..n).rev() {
                            drow[j] += acc;
                            acc += grow[j];
                        }
                    }
                }
                Op::WeightedSumRows(w, v) => {
                    let (r, mm) = (nodes[*w].rows, nodes[*w].cols);
                    let c = nodes[*v].cols;
                    let (wv, vv) = (&nodes[*w].value, &nodes[*v].value);
                    {
                        let dw = slot(&mut adj, nodes, *w);
                        for i in 0..r {
                            let gr = &g[i * c..(i + 1) * c];
                            for j in 0..mm {
                                let row = &vv[(i * mm + j) * c..(i * mm + j + 1) * c];
                                let mut s = T::zero();
                                for (x, y) in gr.iter().zip(row) {
                                    s += *x * *y;
                                }
                                dw[i * mm + j] += s;
                            }
                        }
                    }
                    let dv = slot(&mut adj, nodes, *v);
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        for j in 0..mm {
                            let wt = wv[i * mm + j];
                            let row = &mut dv[(i * mm + j) * c..(i * mm + j + 1) * c];
                            for (d, x) in row.iter_mut().zip(gr) {
                                *d += wt * *x;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    for d in slot(&mut adj, nodes, *a).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Masked(a, mask) => {
                    for ((d, x), k) in slot(&mut adj, nodes, *a).iter_mut().zip(&g).zip(mask) {
                        if !*k {
                            *d += *x;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

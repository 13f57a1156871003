use super::buf::{Buf, Real};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Max(Var, Var),
    Matmul(Var, Var),
    Neg(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var, T),
    AddConst(Var, T),
    MulConst(Var, T),
    ClampMin(Var, T),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    SoftmaxRows(Var),
    ExclCumsumRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    Reshape(Var),
}

struct Node<T: Real> {
    value: Buf<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in execution order, so reverse index order is a
/// reverse topological order and `backward` visits each node exactly once.
/// Gradient accumulation is additive; the walk is single-threaded and fully
/// deterministic.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true }
    }

    /// Forward-only graph: ops record no parents, backward is unavailable.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Buf<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Buf<T>, op: Op<T>, requires_grad: bool) -> Var {
        let keep = requires_grad && self.grad_enabled;
        self.nodes.push(Node { value, op: if keep { op } else { Op::Leaf }, requires_grad: keep });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf without gradient (inputs, constants).
    pub fn constant(&mut self, value: Buf<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Buf::scalar(T::from_f64(value)))
    }

    /// Leaf with gradient (parameters).
    pub fn leaf(&mut self, value: Buf<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let value = self.nodes[a.0].value.broadcast_zip(&self.nodes[b.0].value, f);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise max; on ties the gradient goes to the first argument.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Max(a, b), |x, y| if x >= y { x } else { y })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Matmul(a, b), rg)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// softplus_s(x) = ln(1 + exp(s*x)) / s, with overflow-safe evaluation.
    pub fn softplus(&mut self, a: Var, sharpness: f64) -> Var {
        let s = T::from_f64(sharpness);
        self.unary(a, Op::Softplus(a, s), move |x| softplus(x, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(a, Op::AddConst(a, c), move |x| x + c)
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(a, Op::MulConst(a, c), move |x| x * c)
    }

    /// max(x, c); gradient passes where x >= c.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(a, Op::ClampMin(a, c), move |x| if x > c { x } else { c })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Buf::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_f64(self.nodes[a.0].value.len() as f64);
        let value = Buf::scalar(self.nodes[a.0].value.sum() / n);
        let rg = self.rg(a);
        self.push(value, Op::MeanAll(a), rg)
    }

    /// (r, c) -> (r, 1) row sums.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.sum_rows();
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let (rows, cols) = x.shape();
        let mut out = Buf::zeros(rows, cols);
        for r in 0..rows {
            let mut m = x.get(r, 0);
            for c in 1..cols {
                if x.get(r, c) > m {
                    m = x.get(r, c);
                }
            }
            let mut denom = T::zero();
            for c in 0..cols {
                let e = (x.get(r, c) - m).exp();
                out.set(r, c, e);
                denom = denom + e;
            }
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / denom);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// out[i, j] = sum_{k < j} x[i, k]; used for transmittance along a ray.
    pub fn exclusive_cumsum_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let (rows, cols) = x.shape();
        let mut out = Buf::zeros(rows, cols);
        for r in 0..rows {
            let mut acc = T::zero();
            for c in 0..cols {
                out.set(r, c, acc);
                acc = acc + x.get(r, c);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ExclCumsumRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            assert_eq!(self.shape(p).1, cols, "concat_rows requires equal column counts");
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Buf::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Buf::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows(), rows, "concat_cols requires equal row counts");
            for r in 0..rows {
                for c in 0..v.cols() {
                    out.set(r, off + c, v.get(r, c));
                }
            }
            off += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.nodes[a.0].value.slice_rows(start, end);
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start, end), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.nodes[a.0].value.slice_cols(start, end);
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, end), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.nodes[a.0].value.reshaped(rows, cols);
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Reverse-mode sweep from a scalar loss. Every upstream node with
    /// `requires_grad` gets dLoss/dNode; unreached nodes keep grad `None`.
    pub fn backward(&mut self, loss: Var) -> Gradients<T> {
        assert!(self.grad_enabled, "backward on an inference graph");
        assert_eq!(self.shape(loss), (1, 1), "backward requires a scalar loss");
        let mut grads: Vec<Option<Buf<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Buf::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            // Leaf grads stay retrievable; interior grads are dropped.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Buf<T>>], v: Var, g: Buf<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Buf<T>, grads: &mut [Option<Buf<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match self.nodes[i].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.reduce_to(val(a).shape()));
                self.accumulate(grads, b, g.reduce_to(val(b).shape()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.reduce_to(val(a).shape()));
                self.accumulate(grads, b, g.map(|x| -x).reduce_to(val(b).shape()));
            }
            Op::Mul(a, b) => {
                let ga = g.broadcast_zip(val(b), |gx, bx| gx * bx).reduce_to(val(a).shape());
                let gb = g.broadcast_zip(val(a), |gx, ax| gx * ax).reduce_to(val(b).shape());
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Div(a, b) => {
                let ga = g.broadcast_zip(val(b), |gx, bx| gx / bx).reduce_to(val(a).shape());
                let y = &self.nodes[i].value; // a/b
                let gb = g
                    .broadcast_zip(y, |gx, yx| gx * yx)
                    .broadcast_zip(val(b), |t, bx| -t / bx)
                    .reduce_to(val(b).shape());
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Max(a, b) => {
                let av = val(a);
                let bv = val(b);
                let mask = av.broadcast_zip(bv, |x, y| if x >= y { T::one() } else { T::zero() });
                let ga = g.broadcast_zip(&mask, |gx, m| gx * m).reduce_to(av.shape());
                let gb = g
                    .broadcast_zip(&mask, |gx, m| gx * (T::one() - m))
                    .reduce_to(bv.shape());
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Matmul(a, b) => {
                let av = val(a);
                let bv = val(b);
                // dA = g · Bᵀ
                let mut da = Buf::zeros(av.rows(), av.cols());
                unsafe {
                    T::gemm(
                        av.rows(),
                        bv.cols(),
                        av.cols(),
                        T::one(),
                        g.data().as_ptr(),
                        g.cols() as isize,
                        1,
                        bv.data().as_ptr(),
                        1,
                        bv.cols() as isize,
                        T::zero(),
                        da.data_mut().as_mut_ptr(),
                        av.cols() as isize,
                        1,
                    );
                }
                // dB = Aᵀ · g
                let mut db = Buf::zeros(bv.rows(), bv.cols());
                unsafe {
                    T::gemm(
                        av.cols(),
                        av.rows(),
                        bv.cols(),
                        T::one(),
                        av.data().as_ptr(),
                        1,
                        av.cols() as isize,
                        g.data().as_ptr(),
                        g.cols() as isize,
                        1,
                        T::zero(),
                        db.data_mut().as_mut_ptr(),
                        bv.cols() as isize,
                        1,
                    );
                }
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            Op::Neg(a) => self.accumulate(grads, a, g.map(|x| -x)),
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                self.accumulate(grads, a, g.zip_map(y, |gx, yx| gx * yx));
            }
            Op::Sqrt(a) => {
                // Guarded at y = 0 so a clamp further up can zero the path
                // without manufacturing NaN from 0/0.
                let y = &self.nodes[i].value;
                let tiny = T::from_f64(1e-300);
                let two = T::from_f64(2.0);
                self.accumulate(
                    grads,
                    a,
                    g.zip_map(y, move |gx, yx| {
                        let d = two * yx;
                        gx / if d > tiny { d } else { tiny }
                    }),
                );
            }
            Op::Square(a) => {
                let av = val(a);
                let two = T::from_f64(2.0);
                self.accumulate(grads, a, g.zip_map(av, move |gx, x| gx * two * x));
            }
            Op::Abs(a) => {
                let av = val(a);
                self.accumulate(
                    grads,
                    a,
                    g.zip_map(av, |gx, x| {
                        if x > T::zero() {
                            gx
                        } else if x < T::zero() {
                            -gx
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Relu(a) => {
                let av = val(a);
                self.accumulate(grads, a, g.zip_map(av, |gx, x| if x > T::zero() { gx } else { T::zero() }));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                self.accumulate(grads, a, g.zip_map(y, |gx, yx| gx * yx * (T::one() - yx)));
            }
            Op::Softplus(a, s) => {
                let av = val(a);
                self.accumulate(grads, a, g.zip_map(av, move |gx, x| gx * sigmoid(s * x)));
            }
            Op::AddConst(a, _) => self.accumulate(grads, a, g.clone()),
            Op::MulConst(a, c) => self.accumulate(grads, a, g.map(|x| x * c)),
            Op::ClampMin(a, c) => {
                let av = val(a);
                self.accumulate(grads, a, g.zip_map(av, move |gx, x| if x >= c { gx } else { T::zero() }));
            }
            Op::SumAll(a) => {
                let av = val(a);
                let gv = g.item();
                self.accumulate(grads, a, Buf::full(av.rows(), av.cols(), gv));
            }
            Op::MeanAll(a) => {
                let av = val(a);
                let n = T::from_f64(av.len() as f64);
                let gv = g.item() / n;
                self.accumulate(grads, a, Buf::full(av.rows(), av.cols(), gv));
            }
            Op::SumRows(a) => {
                let av = val(a);
                let mut out = Buf::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let gv = g.get(r, 0);
                    for c in 0..av.cols() {
                        out.set(r, c, gv);
                    }
                }
                self.accumulate(grads, a, out);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let (rows, cols) = y.shape();
                let mut out = Buf::zeros(rows, cols);
                for r in 0..rows {
                    let mut dot = T::zero();
                    for c in 0..cols {
                        dot = dot + g.get(r, c) * y.get(r, c);
                    }
                    for c in 0..cols {
                        out.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.accumulate(grads, a, out);
            }
            Op::ExclCumsumRows(a) => {
                // d/dx[i,j] = sum_{k > j} g[i,k]: reversed exclusive cumsum.
                let (rows, cols) = g.shape();
                let mut out = Buf::zeros(rows, cols);
                for r in 0..rows {
                    let mut acc = T::zero();
                    for c in (0..cols).rev() {
                        out.set(r, c, acc);
                        acc = acc + g.get(r, c);
                    }
                }
                self.accumulate(grads, a, out);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let rows = val(p).rows();
                    self.accumulate(grads, p, g.slice_rows(off, off + rows));
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = val(p).cols();
                    self.accumulate(grads, p, g.slice_cols(off, off + cols));
                    off += cols;
                }
            }
            Op::SliceRows(a, start, _end) => {
                let av = val(a);
                let mut out = Buf::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        out.set(start + r, c, g.get(r, c));
                    }
                }
                self.accumulate(grads, a, out);
            }
            Op::SliceCols(a, start, _end) => {
                let av = val(a);
                let mut out = Buf::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        out.set(r, start + c, g.get(r, c));
                    }
                }
                self.accumulate(grads, a, out);
            }
            Op::Reshape(a) => {
                let shape = val(a).shape();
                self.accumulate(grads, a, g.reshaped(shape.0, shape.1));
            }
        }
    }
}

/// Gradients of leaf nodes after a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Buf<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss wrt a leaf; zero if the leaf was never reached.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Buf<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Buf::zeros(shape.0, shape.1),
        }
    }

    pub fn get_opt(&self, v: Var) -> Option<&Buf<T>> {
        self.grads[v.0].as_ref()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T, s: T) -> T {
    let sx = s * x;
    let cut = T::from_f64(30.0);
    if sx > cut {
        x
    } else {
        sx.exp().ln_1p() / s
    }
}

//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Nodes hold real vectors (scalars are length-1 vectors). Complex
//! quantities are carried as a pair of nodes for the real and imaginary
//! parts. Constant matrices are borrowed for the lifetime of the tape, so a
//! tape can be built per sample on worker threads while sharing the
//! measurement matrix.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Borrowed row-major real matrix.
#[derive(Clone, Copy, Debug)]
pub struct ConstMat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug)]
enum Op<'a> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// x ⊙ c for a constant c (activation masks live here).
    MulConst(Var, Vec<f64>),
    /// x + c for a constant c.
    AddConst(Var),
    ScaleConst(Var, f64),
    /// s·x with s a length-1 node.
    Scale(Var, Var),
    /// W x with W a rows×cols node.
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    /// Wᵀ x with W a rows×cols node.
    MatTVec { w: Var, x: Var, rows: usize, cols: usize },
    ConstMatVec(ConstMat<'a>, Var),
    ConstMatTVec(ConstMat<'a>, Var),
    SumSq(Var),
    Dot(Var, Var),
    Sqrt(Var),
    Div(Var, Var),
    /// Largest entry of a vector.
    MaxElem(Var, usize),
    /// Largest of several scalars.
    MaxOf(Vec<Var>, usize),
    Sum(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node<'a> {
    value: Vec<f64>,
    op: Op<'a>,
}

#[derive(Default, Debug)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients indexed by node; `None` for nodes the seeds do not reach.
pub struct Grads {
    g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.g[v.0].as_deref()
    }

    /// Gradient of `v`, or zeros of length `len` if unreached.
    pub fn or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.g[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

fn axpy(acc: &mut Option<Vec<f64>>, len: usize, f: impl Fn(usize) -> f64) {
    let a = acc.get_or_insert_with(|| vec![0.0; len]);
    for (i, ai) in a.iter_mut().enumerate() {
        *ai += f(i);
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Input node (parameter or constant).
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        let v = zip(self.value(a), &c, |x, y| x * y);
        self.push(v, Op::MulConst(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Var {
        let v = zip(self.value(a), c, |x, y| x + y);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(v, Op::ScaleConst(a, k))
    }

    pub fn scale(&mut self, s: Var, a: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(v, Op::Scale(s, a))
    }

    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let v = crate::nets::matvec(self.value(w), rows, cols, self.value(x));
        self.push(v, Op::MatVec { w, x, rows, cols })
    }

    pub fn matvec_t(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let v = crate::nets::tmatvec(self.value(w), rows, cols, self.value(x));
        self.push(v, Op::MatTVec { w, x, rows, cols })
    }

    pub fn const_matvec(&mut self, a: ConstMat<'a>, x: Var) -> Var {
        let v = crate::nets::matvec(a.data, a.rows, a.cols, self.value(x));
        self.push(v, Op::ConstMatVec(a, x))
    }

    pub fn const_matvec_t(&mut self, a: ConstMat<'a>, x: Var) -> Var {
        let v = crate::nets::tmatvec(a.data, a.rows, a.cols, self.value(x));
        self.push(v, Op::ConstMatTVec(a, x))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum();
        self.push(vec![v], Op::SumSq(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(vec![v], Op::Dot(a, b))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.scalar(a).sqrt();
        self.push(vec![v], Op::Sqrt(a))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.scalar(a) / self.scalar(b);
        self.push(vec![v], Op::Div(a, b))
    }

    /// Largest entry; ties go to the lowest index.
    pub fn max_elem(&mut self, a: Var) -> Var {
        let (idx, v) = argmax(self.value(a).iter().copied());
        self.push(vec![v], Op::MaxElem(a, idx))
    }

    pub fn max_of(&mut self, xs: &[Var]) -> Var {
        let (idx, v) = argmax(xs.iter().map(|x| self.scalar(*x)));
        self.push(vec![v], Op::MaxOf(xs.to_vec(), idx))
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut v = self.value(xs[0]).to_vec();
        for x in &xs[1..] {
            for (a, b) in v.iter_mut().zip(self.value(*x)) {
                *a += b;
            }
        }
        self.push(v, Op::Sum(xs.to_vec()))
    }

    /// Reverse sweep from several seeded outputs. Each node is visited once,
    /// in decreasing index order (a reverse topological order, since parents
    /// always precede children).
    pub fn backward(&self, seeds: &[(Var, Vec<f64>)]) -> Grads {
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (v, s) in seeds {
            let len = s.len();
            axpy(&mut g[v.0], len, |i| s[i]);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut g[a.0], gy.len(), |i| gy[i]);
                    axpy(&mut g[b.0], gy.len(), |i| gy[i]);
                }
                Op::Sub(a, b) => {
                    axpy(&mut g[a.0], gy.len(), |i| gy[i]);
                    axpy(&mut g[b.0], gy.len(), |i| -gy[i]);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    axpy(&mut g[a.0], gy.len(), |i| gy[i] * vb[i]);
                    axpy(&mut g[b.0], gy.len(), |i| gy[i] * va[i]);
                }
                Op::MulConst(a, c) => axpy(&mut g[a.0], gy.len(), |i| gy[i] * c[i]),
                Op::AddConst(a) => axpy(&mut g[a.0], gy.len(), |i| gy[i]),
                Op::ScaleConst(a, k) => axpy(&mut g[a.0], gy.len(), |i| gy[i] * k),
                Op::Scale(s, a) => {
                    let va = val(*a);
                    let ks = val(*s)[0];
                    let gs: f64 = gy.iter().zip(va).map(|(x, y)| x * y).sum();
                    axpy(&mut g[s.0], 1, |_| gs);
                    axpy(&mut g[a.0], gy.len(), |i| gy[i] * ks);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (vw, vx) = (val(*w), val(*x));
                    let c = *cols;
                    axpy(&mut g[w.0], rows * cols, |k| gy[k / c] * vx[k % c]);
                    let gx = crate::nets::tmatvec(vw, *rows, *cols, &gy);
                    axpy(&mut g[x.0], *cols, |i| gx[i]);
                }
                Op::MatTVec { w, x, rows, cols } => {
                    let (vw, vx) = (val(*w), val(*x));
                    let c = *cols;
                    axpy(&mut g[w.0], rows * cols, |k| vx[k / c] * gy[k % c]);
                    let gx = crate::nets::matvec(vw, *rows, *cols, &gy);
                    axpy(&mut g[x.0], *rows, |i| gx[i]);
                }
                Op::ConstMatVec(a, x) => {
                    let gx = crate::nets::tmatvec(a.data, a.rows, a.cols, &gy);
                    axpy(&mut g[x.0], a.cols, |i| gx[i]);
                }
                Op::ConstMatTVec(a, x) => {
                    let gx = crate::nets::matvec(a.data, a.rows, a.cols, &gy);
                    axpy(&mut g[x.0], a.rows, |i| gx[i]);
                }
                Op::SumSq(a) => {
                    let va = val(*a);
                    axpy(&mut g[a.0], va.len(), |i| 2.0 * gy[0] * va[i]);
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    axpy(&mut g[a.0], va.len(), |i| gy[0] * vb[i]);
                    axpy(&mut g[b.0], vb.len(), |i| gy[0] * va[i]);
                }
                Op::Sqrt(a) => {
                    let r = node.value[0];
                    let d = if r > 0.0 { gy[0] / (2.0 * r) } else { 0.0 };
                    axpy(&mut g[a.0], 1, |_| d);
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a)[0], val(*b)[0]);
                    axpy(&mut g[a.0], 1, |_| gy[0] / vb);
                    axpy(&mut g[b.0], 1, |_| -gy[0] * va / (vb * vb));
                }
                Op::MaxElem(a, k) => {
                    let n = val(*a).len();
                    let k = *k;
                    axpy(&mut g[a.0], n, |i| if i == k { gy[0] } else { 0.0 });
                }
                Op::MaxOf(xs, k) => axpy(&mut g[xs[*k].0], 1, |_| gy[0]),
                Op::Sum(xs) => {
                    for x in xs {
                        axpy(&mut g[x.0], gy.len(), |i| gy[i]);
                    }
                }
            }
            g[idx] = Some(gy);
        }
        Grads { g }
    }

    /// Reverse sweep seeded with 1 at a scalar output.
    pub fn grad(&self, out: Var) -> Grads {
        self.backward(&[(out, vec![1.0])])
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn argmax(it: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain() {
        // f(x, y) = sqrt(x² + y²) / y at (3, 4): df/dx = 3/20, df/dy = 4/20 − 5/16.
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0]);
        let y = t.leaf(vec![4.0]);
        let xx = t.mul(x, x);
        let yy = t.mul(y, y);
        let s = t.add(xx, yy);
        let r = t.sqrt(s);
        let f = t.div(r, y);
        assert!((t.scalar(f) - 1.25).abs() < 1e-15);
        let g = t.grad(f);
        assert!((g.get(x).unwrap()[0] - 0.15).abs() < 1e-15);
        assert!((g.get(y).unwrap()[0] - (0.2 - 5.0 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn matvec_and_transpose_gradients() {
        // L = ‖Wx‖² + ⟨Wᵀz, x⟩ with W 2×3.
        let w0 = vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0];
        let x0 = vec![0.2, -0.4, 1.0];
        let z0 = vec![0.7, -0.3];
        let mut t = Tape::new();
        let w = t.leaf(w0.clone());
        let x = t.leaf(x0.clone());
        let z = t.leaf(z0.clone());
        let wx = t.matvec(w, x, 2, 3);
        let a = t.sum_sq(wx);
        let wtz = t.matvec_t(w, z, 2, 3);
        let b = t.dot(wtz, x);
        let l = t.add(a, b);
        let g = t.grad(l);
        let wx0 = crate::nets::matvec(&w0, 2, 3, &x0);
        for i in 0..2 {
            for j in 0..3 {
                let want = 2.0 * wx0[i] * x0[j] + z0[i] * x0[j];
                assert!((g.get(w).unwrap()[i * 3 + j] - want).abs() < 1e-14);
            }
        }
        let gz = crate::nets::matvec(&w0, 2, 3, &x0);
        for i in 0..2 {
            assert!((g.get(z).unwrap()[i] - gz[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn max_routes_to_argmax() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.1, 0.9, 0.3]);
        let m = t.max_elem(x);
        let g = t.grad(m);
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 0.0]);
        let a = t.leaf(vec![2.0]);
        let b = t.leaf(vec![5.0]);
        let mm = t.max_of(&[a, b]);
        let g = t.grad(mm);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &[1.0]);
    }

    #[test]
    fn unreached_nodes_have_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0]);
        let y = t.leaf(vec![2.0]);
        let z = t.scale_const(x, 3.0);
        let g = t.grad(z);
        assert_eq!(g.get(x).unwrap(), &[3.0]);
        assert!(g.get(y).is_none());
        assert_eq!(g.or_zeros(y, 1), vec![0.0]);
    }
}

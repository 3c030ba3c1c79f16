//! Minimal reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse accumulating
//! gradients. Nodes that cannot reach a gradient-requiring leaf are skipped
//! during the backward sweep.

use std::borrow::Cow;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    /// a + b broadcast over rows (b is 1×n)
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// a scaled by a 1×1 node
    ScaleBy(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    CausalSoftmax(Var),
    Softmax(Var),
    LogSoftmax(Var),
    GatherRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    PickSum(Var, Vec<(usize, usize)>),
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient out, or a zero array shaped like `like` when the
    /// node never received one.
    pub fn take_or_zeros(&mut self, v: Var, like: (usize, usize)) -> Array2<f64> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Array2::zeros(like))
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Cow<'a, Array2<f64>>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.leaf(Cow::Owned(value), true)
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.leaf(Cow::Borrowed(value), true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.leaf(Cow::Borrowed(value), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let v = self.value(a) * c;
        self.push(v, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a), &[a])
    }

    /// Row-wise layer normalisation with learned gain and bias (both 1×n).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *istd = 1.0 / (var + LN_EPS).sqrt();
            let k = *istd;
            row.mapv_inplace(|v| v * k);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i + (ncols - nrows)`.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let offset = av.ncols() - av.nrows();
        let mut out = Array2::zeros(av.raw_dim());
        for (i, (row, mut o)) in av.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let lim = i + offset + 1;
            softmax_into(row.slice(s![..lim]).iter().copied(), o.slice_mut(s![..lim]).iter_mut());
        }
        self.push(out, Op::CausalSoftmax(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Array2::zeros(av.raw_dim());
        for (row, mut o) in av.rows().into_iter().zip(out.rows_mut()) {
            softmax_into(row.iter().copied(), o.iter_mut());
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a).view());
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(1), idx);
        self.push(v, Op::SelectCols(a, idx.to_vec()), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Mean over rows, giving a 1×n node.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows on empty node")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Sum of the selected `(row, col)` entries, as a 1×1 node.
    pub fn pick_sum(&mut self, a: Var, idx: &[(usize, usize)]) -> Var {
        let av = self.value(a);
        let total = idx.iter().map(|&(r, c)| av[[r, c]]).sum::<f64>();
        let v = Array2::from_elem((1, 1), total);
        self.push(v, Op::PickSum(a, idx.to_vec()), &[a])
    }

    /// Reverse sweep from a scalar node (seeded with gradient 1).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<'a>, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| -> &Array2<f64> { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.dot(&val(*b).t()));
                }
                if needs(*b) {
                    accumulate(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.dot(val(*b)));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.t().dot(val(*a)));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*row) {
                    accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g * val(*b));
                }
                if needs(*b) {
                    accumulate(grads, *b, g * val(*a));
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g * *c),
            Op::ScaleBy(a, s) => {
                let c = val(*s)[[0, 0]];
                if needs(*a) {
                    accumulate(grads, *a, g * c);
                }
                if needs(*s) {
                    let ds = (g * val(*a)).sum();
                    accumulate(grads, *s, Array2::from_elem((1, 1), ds));
                }
            }
            Op::Gelu(a) => {
                let mut d = val(*a).clone();
                Zip::from(&mut d).and(g).for_each(|x, &gv| {
                    let u = GELU_C * (*x + 0.044715 * *x * *x * *x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * *x * *x);
                    *x = gv * (0.5 * (1.0 + t) + 0.5 * *x * (1.0 - t * t) * du);
                });
                accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if needs(*gain) {
                    accumulate(grads, *gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if needs(*bias) {
                    accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if needs(*x) {
                    let dxhat = g * val(*gain);
                    let n = dxhat.ncols() as f64;
                    let mut dx = Array2::zeros(dxhat.raw_dim());
                    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let m1 = dh.sum() / n;
                        let m2 = dh.dot(&xh) / n;
                        let k = inv_std[r];
                        Zip::from(&mut out)
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &d, &h| *o = k * (d - m1 - h * m2));
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::CausalSoftmax(a) | Op::Softmax(a) => {
                // masked entries have y = 0, so the generic formula already zeroes them
                let y: &Array2<f64> = &node.value;
                let mut dx = g * y;
                for (mut row, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let dot = row.sum();
                    Zip::from(&mut row).and(&yrow).for_each(|d, &yv| *d -= yv * dot);
                }
                accumulate(grads, *a, dx);
            }
            Op::LogSoftmax(a) => {
                let y: &Array2<f64> = &node.value;
                let mut dx = g.clone();
                for (mut row, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let total = row.sum();
                    Zip::from(&mut row).and(&yrow).for_each(|d, &ly| *d -= ly.exp() * total);
                }
                accumulate(grads, *a, dx);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut dst = d.row_mut(src);
                    dst += &g.row(r);
                }
                accumulate(grads, *a, d);
            }
            Op::SelectCols(a, idx) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                for (c, &src) in idx.iter().enumerate() {
                    let mut dst = d.column_mut(src);
                    dst += &g.column(c);
                }
                accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start, end) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                d.slice_mut(s![*start..*end, ..]).assign(g);
                accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).nrows();
                    if needs(*p) {
                        accumulate(grads, *p, g.slice(s![off..off + n, ..]).to_owned());
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).ncols();
                    if needs(*p) {
                        accumulate(grads, *p, g.slice(s![.., off..off + n]).to_owned());
                    }
                    off += n;
                }
            }
            Op::MeanRows(a) => {
                let rows = val(*a).nrows();
                let d = g.broadcast(val(*a).raw_dim()).expect("mean_rows broadcast").to_owned() / rows as f64;
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(val(*a).raw_dim(), g[[0, 0]]);
                accumulate(grads, *a, d);
            }
            Op::PickSum(a, idx) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                for &(r, c) in idx {
                    d[[r, c]] += g[[0, 0]];
                }
                accumulate(grads, *a, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn softmax_into<'a>(row: impl Iterator<Item = f64> + Clone, out: impl Iterator<Item = &'a mut f64>) {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut out: Vec<&mut f64> = out.collect();
    for (o, x) in out.iter_mut().zip(row) {
        **o = (x - max).exp();
        total += **o;
    }
    for o in out {
        *o /= total;
    }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax_rows(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>) {
        let diff = (a - b).mapv(f64::abs).sum();
        let scale = a.mapv(f64::abs).sum().max(b.mapv(f64::abs).sum()).max(1e-12);
        assert!(diff / scale < 1e-6, "analytic {a:?} vs numeric {b:?}");
    }

    #[test]
    fn causal_softmax_masks_future_columns() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0, 3.0], [0.5, 0.5, 9.0], [1.0, 1.0, 1.0]]);
        let y = g.causal_softmax(a);
        let y = g.value(y);
        assert_eq!(y[[0, 1]], 0.0);
        assert_eq!(y[[0, 0]], 1.0);
        assert!((y[[1, 0]] - 0.5).abs() < 1e-15);
        assert!((y.row(2).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let x0 = array![[0.3, -0.2, 0.9], [1.1, 0.4, -0.7]];
        let w = array![[0.5, -0.1], [0.2, 0.8], [-0.3, 0.4]];
        let gain = array![[1.2, 0.7, -0.4]];
        let f = |x: &Array2<f64>, grad: bool| {
            let mut g = Graph::new();
            let xv = if grad {
                g.param(x.clone())
            } else {
                g.constant(x.clone())
            };
            let gv = g.constant(gain.clone());
            let bv = g.constant(array![[0.1, 0.0, -0.1]]);
            let ln = g.layer_norm(xv, gv, bv);
            let act = g.gelu(ln);
            let wv = g.constant(w.clone());
            let h = g.matmul(act, wv);
            let sq = g.matmul_t(h, h);
            let sm = g.causal_softmax(sq);
            let ls = g.log_softmax(h);
            let picked = g.pick_sum(ls, &[(0, 1), (1, 0)]);
            let s2 = g.sum(sm);
            let m = g.mean_rows(act);
            let ms = g.sum(m);
            let tot = g.add(picked, s2);
            let tot = g.add(tot, ms);
            (
                g.scalar(tot),
                if grad {
                    Some(g.backward(tot).get(xv).unwrap().clone())
                } else {
                    None
                },
            )
        };
        let (_, analytic) = f(&x0, true);
        let numeric = numeric_grad(|x| f(x, false).0, &x0);
        assert_close(&analytic.unwrap(), &numeric);
    }

    #[test]
    fn slicing_and_concat_route_gradients() {
        let x0 = array![[0.3, -0.2, 0.9, 0.1], [1.1, 0.4, -0.7, 0.2]];
        let f = |x: &Array2<f64>| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let a = g.slice_cols(xv, 0, 2);
            let b = g.slice_cols(xv, 2, 4);
            let ab = g.mul(a, b);
            let c = g.concat_cols(&[ab, a]);
            let r = g.slice_rows(c, 1, 2);
            let rr = g.concat_rows(&[r, r]);
            let sel = g.select_cols(rr, &[3, 0, 0]);
            let gath = g.gather_rows(xv, &[1, 1, 0]);
            let sm = g.softmax(gath);
            let sc = g.scale(sm, 2.5);
            let s1 = g.sum(sel);
            let s2 = g.pick_sum(sc, &[(0, 0), (2, 3)]);
            let t = g.add(s1, s2);
            let k = g.constant(array![[3.0]]);
            let t = g.scale_by(t, k);
            (g.scalar(t), g.backward(t).get(xv).unwrap().clone())
        };
        let (_, analytic) = f(&x0);
        let numeric = numeric_grad(|x| f(x).0, &x0);
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0]]);
        let b = g.param(array![[3.0, 4.0]]);
        let c = g.mul(a, b);
        let s = g.sum(c);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &array![[1.0, 2.0]]);
    }
}

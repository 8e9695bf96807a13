//! Reverse-mode automatic differentiation over a single-use tape.
//!
//! Sequences from several documents are packed row-wise into one matrix and
//! described by [`Segments`]; sequence operations (attention, pooling,
//! recurrences) never mix rows of different segments, so padding never
//! enters a computation.

use std::borrow::Cow;
use std::rc::Rc;

use super::mat::{gemm, Mat};
use super::params::{Grads, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Row ranges of packed sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        for &n in lengths {
            offsets.push(offsets.last().unwrap() + n);
        }
        Segments { offsets }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    pub fn len_of(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }

    pub fn start(&self, b: usize) -> usize {
        self.offsets[b]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddSeg { x: Var, s: Var, segs: Rc<Segments> },
    Mul(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, segs: Rc<Segments>, heads: usize, causal: bool, probs: Vec<f64> },
    Embed { table: Var, idx: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    SegMean { x: Var, segs: Rc<Segments> },
    ConcatCols(Vec<Var>),
    Lstm(Box<LstmCache>),
    SoftmaxXent { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Mat },
    Mse { pred: Var, target: Mat, weights: Vec<f64> },
    Kl { mu: Var, logvar: Var, weights: Vec<f64> },
    Combine(Vec<(Var, f64)>),
}

struct LstmCache {
    x: Var,
    h0: Option<Var>,
    wx: Var,
    wh: Var,
    b: Var,
    segs: Rc<Segments>,
    reverse: bool,
    /// Activated gates `[i, f, g, o]` per row.
    gates: Mat,
    cells: Mat,
}

struct Node<'p> {
    value: Cow<'p, Mat>,
    op: Op,
}

/// Computation tape bound to a parameter store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Cow::Borrowed(self.store.get(id)), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let mut c = Mat::zeros(am.rows, bm.cols);
        gemm(am, false, bm, false, 0.0, &mut c);
        self.push(c, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut c = self.value(a).clone();
        assert_eq!(c.shape(), self.value(b).shape(), "add shapes");
        c.add_assign(self.value(b));
        self.push(c, Op::Add(a, b))
    }

    /// Adds the `1 x C` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let mut c = self.value(a).clone();
        let row = self.value(r);
        assert_eq!((1, c.cols), row.shape(), "add_row shapes");
        for i in 0..c.rows {
            c.row_mut(i).iter_mut().zip(&row.data).for_each(|(x, y)| *x += y);
        }
        self.push(c, Op::AddRow(a, r))
    }

    /// Adds row `b` of `s` to every row of segment `b` of `x`.
    pub fn add_seg(&mut self, x: Var, s: Var, segs: &Rc<Segments>) -> Var {
        let mut c = self.value(x).clone();
        let sm = self.value(s);
        assert_eq!(sm.rows, segs.count());
        assert_eq!(c.rows, segs.total_rows());
        for b in 0..segs.count() {
            let srow = sm.row(b);
            for r in segs.range(b) {
                c.row_mut(r).iter_mut().zip(srow).for_each(|(x, y)| *x += y);
            }
        }
        self.push(c, Op::AddSeg { x, s, segs: segs.clone() })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut c = self.value(a).clone();
        assert_eq!(c.shape(), self.value(b).shape());
        c.data.iter_mut().zip(&self.value(b).data).for_each(|(x, y)| *x *= y);
        self.push(c, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, k: Mat) -> Var {
        let mut c = self.value(a).clone();
        assert_eq!(c.shape(), k.shape());
        c.data.iter_mut().zip(&k.data).for_each(|(x, y)| *x *= y);
        self.push(c, Op::MulConst(a, k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut c = self.value(a).clone();
        c.data.iter_mut().for_each(|x| *x *= k);
        self.push(c, Op::Scale(a, k))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut c = self.value(a).clone();
        c.data.iter_mut().for_each(|x| *x = f(*x));
        self.push(c, op)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()), Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let c = xm.cols;
        let mut xhat = Mat::zeros(xm.rows, c);
        let mut out = Mat::zeros(xm.rows, c);
        let mut inv_std = Vec::with_capacity(xm.rows);
        for r in 0..xm.rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat.data[r * c + j] = h;
                out.data[r * c + j] = h * g.data[j] + bt.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Multi-head scaled dot-product attention within each segment.
    /// With `causal`, row `i` attends only to rows `j <= i` of its segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segs: &Rc<Segments>, heads: usize, causal: bool) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let hd = qm.cols;
        assert!(hd % heads == 0);
        assert_eq!(qm.rows, segs.total_rows());
        let d = hd / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Mat::zeros(qm.rows, hd);
        let mut probs = Vec::new();
        for b in 0..segs.count() {
            let (s0, n) = (segs.start(b), segs.len_of(b));
            for h in 0..heads {
                let cols = h * d..(h + 1) * d;
                let base = probs.len();
                probs.resize(base + n * n, 0.0);
                let p = &mut probs[base..];
                for i in 0..n {
                    let qi = &qm.row(s0 + i)[cols.clone()];
                    let lim = if causal { i + 1 } else { n };
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..lim {
                        let kj = &km.row(s0 + j)[cols.clone()];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[i * n + j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = 0.0;
                    for j in 0..lim {
                        let e = (p[i * n + j] - mx).exp();
                        p[i * n + j] = e;
                        z += e;
                    }
                    let orow = &mut out.data[(s0 + i) * hd..(s0 + i + 1) * hd];
                    for j in 0..lim {
                        p[i * n + j] /= z;
                        let pij = p[i * n + j];
                        let vj = &vm.row(s0 + j)[cols.clone()];
                        for (o, vv) in orow[cols.clone()].iter_mut().zip(vj) {
                            *o += pij * vv;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, segs: segs.clone(), heads, causal, probs })
    }

    /// Looks up rows of `table`; indices outside the table give zero rows.
    pub fn embed(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            if i < t.rows {
                out.row_mut(r).copy_from_slice(t.row(i));
            }
        }
        self.push(out, Op::Embed { table, idx })
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xm = self.value(x);
        let mut out = Mat::zeros(idx.len(), xm.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xm.row(i));
        }
        self.push(out, Op::GatherRows { x, idx })
    }

    /// Mean over the rows of each segment.
    pub fn seg_mean(&mut self, x: Var, segs: &Rc<Segments>) -> Var {
        let xm = self.value(x);
        let mut out = Mat::zeros(segs.count(), xm.cols);
        for b in 0..segs.count() {
            let n = segs.len_of(b) as f64;
            let orow = out.row_mut(b);
            for r in segs.range(b) {
                orow.iter_mut().zip(xm.row(r)).for_each(|(o, v)| *o += v / n);
            }
        }
        self.push(out, Op::SegMean { x, segs: segs.clone() })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows, rows);
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Single-layer LSTM run over each segment independently. `h0` gives one
    /// initial hidden row per segment (zeros when absent); cells start at 0.
    /// Weights: `wx` is `In x 4H`, `wh` is `H x 4H`, `b` is `1 x 4H`, gate
    /// order `[input, forget, cell, output]`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm(
        &mut self,
        x: Var,
        h0: Option<Var>,
        wx: Var,
        wh: Var,
        b: Var,
        segs: &Rc<Segments>,
        reverse: bool,
    ) -> Var {
        let xm = self.value(x);
        let (whm, bm) = (self.value(wh), self.value(b));
        let h = whm.rows;
        let n = xm.rows;
        assert_eq!(n, segs.total_rows());
        let mut pre = Mat::zeros(n, 4 * h);
        gemm(xm, false, self.value(wx), false, 0.0, &mut pre);
        let mut gates = Mat::zeros(n, 4 * h);
        let mut cells = Mat::zeros(n, h);
        let mut out = Mat::zeros(n, h);
        let mut a = vec![0.0; 4 * h];
        for s in 0..segs.count() {
            let range: Vec<usize> = if reverse { segs.range(s).rev().collect() } else { segs.range(s).collect() };
            let mut h_prev: Vec<f64> = match h0 {
                Some(v) => self.value(v).row(s).to_vec(),
                None => vec![0.0; h],
            };
            let mut c_prev = vec![0.0; h];
            for &r in &range {
                a.copy_from_slice(pre.row(r));
                a.iter_mut().zip(&bm.data).for_each(|(x, y)| *x += y);
                for (k, hk) in h_prev.iter().enumerate() {
                    if *hk != 0.0 {
                        a.iter_mut().zip(whm.row(k)).for_each(|(x, w)| *x += hk * w);
                    }
                }
                let g = gates.row_mut(r);
                for j in 0..h {
                    g[j] = sigmoid(a[j]);
                    g[h + j] = sigmoid(a[h + j]);
                    g[2 * h + j] = a[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(a[3 * h + j]);
                }
                let g = gates.row(r).to_vec();
                for j in 0..h {
                    let c = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
                    cells.data[r * h + j] = c;
                    out.data[r * h + j] = g[3 * h + j] * c.tanh();
                }
                h_prev.copy_from_slice(out.row(r));
                c_prev.copy_from_slice(cells.row(r));
            }
        }
        let cache = LstmCache { x, h0, wx, wh, b, segs: segs.clone(), reverse, gates, cells };
        self.push(out, Op::Lstm(Box::new(cache)))
    }

    /// `sum_i weights[i] * CE(softmax(logits[i]), targets[i])`; rows whose
    /// target is out of range contribute nothing.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.rows, targets.len());
        assert_eq!(lm.rows, weights.len());
        let mut probs = Mat::zeros(lm.rows, lm.cols);
        let mut total = 0.0;
        for r in 0..lm.rows {
            let row = lm.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            if targets[r] < lm.cols && weights[r] != 0.0 {
                total += weights[r] * (lse - row[targets[r]]);
            }
        }
        self.push(Mat::scalar(total), Op::SoftmaxXent { logits, targets, weights, probs })
    }

    /// `sum_i weights[i] * mean_j (pred[i, j] - target[i, j])^2`.
    pub fn mse(&mut self, pred: Var, target: Mat, weights: Vec<f64>) -> Var {
        let pm = self.value(pred);
        assert_eq!(pm.shape(), target.shape());
        let d = pm.cols as f64;
        let mut total = 0.0;
        for r in 0..pm.rows {
            if weights[r] != 0.0 {
                let se: f64 = pm.row(r).iter().zip(target.row(r)).map(|(p, t)| (p - t) * (p - t)).sum();
                total += weights[r] * se / d;
            }
        }
        self.push(Mat::scalar(total), Op::Mse { pred, target, weights })
    }

    /// `sum_b weights[b] * KL(N(mu_b, exp(logvar_b)) || N(0, I))`.
    pub fn kl(&mut self, mu: Var, logvar: Var, weights: Vec<f64>) -> Var {
        let (m, lv) = (self.value(mu), self.value(logvar));
        let mut total = 0.0;
        for r in 0..m.rows {
            let k: f64 = m.row(r).iter().zip(lv.row(r)).map(|(mu, l)| mu * mu + l.exp() - l - 1.0).sum::<f64>() * 0.5;
            total += weights[r] * k;
        }
        self.push(Mat::scalar(total), Op::Kl { mu, logvar, weights })
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|(v, c)| c * self.scalar(*v)).sum();
        self.push(Mat::scalar(total), Op::Combine(terms.to_vec()))
    }

    /// Back-propagates from the scalar `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out = Grads::zeros_like(self.store);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.mats[id.0].add_assign(&dy),
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = self.grad_slot(&mut grads, *a);
                    gemm(&dy, false, bm, true, 1.0, ga);
                    let gb = self.grad_slot(&mut grads, *b);
                    gemm(am, true, &dy, false, 1.0, gb);
                }
                Op::Add(a, b) => {
                    self.grad_slot(&mut grads, *a).add_assign(&dy);
                    self.grad_slot(&mut grads, *b).add_assign(&dy);
                }
                Op::AddRow(a, r) => {
                    self.grad_slot(&mut grads, *a).add_assign(&dy);
                    let gr = self.grad_slot(&mut grads, *r);
                    for row in 0..dy.rows {
                        gr.data.iter_mut().zip(dy.row(row)).for_each(|(g, d)| *g += d);
                    }
                }
                Op::AddSeg { x, s, segs } => {
                    self.grad_slot(&mut grads, *x).add_assign(&dy);
                    let gs = self.grad_slot(&mut grads, *s);
                    for b in 0..segs.count() {
                        for r in segs.range(b) {
                            gs.row_mut(b).iter_mut().zip(dy.row(r)).for_each(|(g, d)| *g += d);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((g, d), y) in ga.data.iter_mut().zip(&dy.data).zip(&bm.data) {
                        *g += d * y;
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    for ((g, d), x) in gb.data.iter_mut().zip(&dy.data).zip(&am.data) {
                        *g += d * x;
                    }
                }
                Op::MulConst(a, k) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((g, d), y) in ga.data.iter_mut().zip(&dy.data).zip(&k.data) {
                        *g += d * y;
                    }
                }
                Op::Scale(a, k) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    ga.data.iter_mut().zip(&dy.data).for_each(|(g, d)| *g += d * k);
                }
                Op::Gelu(a) => {
                    let am = self.value(*a);
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((g, d), x) in ga.data.iter_mut().zip(&dy.data).zip(&am.data) {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *g += d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((g, d), t) in ga.data.iter_mut().zip(&dy.data).zip(&y.data) {
                        *g += d * (1.0 - t * t);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((g, d), s) in ga.data.iter_mut().zip(&dy.data).zip(&y.data) {
                        *g += d * s * (1.0 - s);
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((g, d), e) in ga.data.iter_mut().zip(&dy.data).zip(&y.data) {
                        *g += d * e;
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gm = self.value(*gamma);
                    let c = xhat.cols;
                    let mut dx = Mat::zeros(xhat.rows, c);
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dxhat = vec![0.0; c];
                    for r in 0..xhat.rows {
                        let (dyr, xh) = (dy.row(r), xhat.row(r));
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            dgamma[j] += dyr[j] * xh[j];
                            dbeta[j] += dyr[j];
                            dxhat[j] = dyr[j] * gm.data[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let k = inv_std[r] / c as f64;
                        for j in 0..c {
                            dx.data[r * c + j] = k * (c as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    self.grad_slot(&mut grads, *x).add_assign(&dx);
                    let gg = self.grad_slot(&mut grads, *gamma);
                    gg.data.iter_mut().zip(&dgamma).for_each(|(g, d)| *g += d);
                    let gb = self.grad_slot(&mut grads, *beta);
                    gb.data.iter_mut().zip(&dbeta).for_each(|(g, d)| *g += d);
                }
                Op::Attention { q, k, v, segs, heads, causal, probs } => {
                    let (dq, dk, dv) = self.attention_backward(&dy, *q, *k, *v, segs, *heads, *causal, probs);
                    self.grad_slot(&mut grads, *q).add_assign(&dq);
                    self.grad_slot(&mut grads, *k).add_assign(&dk);
                    self.grad_slot(&mut grads, *v).add_assign(&dv);
                }
                Op::Embed { table, idx } => {
                    let gt = self.grad_slot(&mut grads, *table);
                    for (r, &i) in idx.iter().enumerate() {
                        if i < gt.rows {
                            gt.row_mut(i).iter_mut().zip(dy.row(r)).for_each(|(g, d)| *g += d);
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (r, &i) in idx.iter().enumerate() {
                        gx.row_mut(i).iter_mut().zip(dy.row(r)).for_each(|(g, d)| *g += d);
                    }
                }
                Op::SegMean { x, segs } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for b in 0..segs.count() {
                        let n = segs.len_of(b) as f64;
                        for r in segs.range(b) {
                            gx.row_mut(r).iter_mut().zip(dy.row(b)).for_each(|(g, d)| *g += d / n);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let gp = self.grad_slot(&mut grads, *p);
                        for r in 0..dy.rows {
                            gp.row_mut(r).iter_mut().zip(&dy.row(r)[off..off + cols]).for_each(|(g, d)| *g += d);
                        }
                        off += cols;
                    }
                }
                Op::Lstm(cache) => self.lstm_backward(&dy, &node.value, cache, &mut grads),
                Op::SoftmaxXent { logits, targets, weights, probs } => {
                    let up = dy.data[0];
                    let gl = self.grad_slot(&mut grads, *logits);
                    for r in 0..probs.rows {
                        if targets[r] < probs.cols && weights[r] != 0.0 {
                            let w = up * weights[r];
                            let g = gl.row_mut(r);
                            for (gj, pj) in g.iter_mut().zip(probs.row(r)) {
                                *gj += w * pj;
                            }
                            g[targets[r]] -= w;
                        }
                    }
                }
                Op::Mse { pred, target, weights } => {
                    let up = dy.data[0];
                    let pm = self.value(*pred);
                    let d = pm.cols as f64;
                    let gp = self.grad_slot(&mut grads, *pred);
                    for r in 0..pm.rows {
                        if weights[r] != 0.0 {
                            let w = up * weights[r] * 2.0 / d;
                            for ((g, p), t) in gp.row_mut(r).iter_mut().zip(pm.row(r)).zip(target.row(r)) {
                                *g += w * (p - t);
                            }
                        }
                    }
                }
                Op::Kl { mu, logvar, weights } => {
                    let up = dy.data[0];
                    let (m, lv) = (self.value(*mu), self.value(*logvar));
                    let gm = self.grad_slot(&mut grads, *mu);
                    for r in 0..m.rows {
                        for (g, x) in gm.row_mut(r).iter_mut().zip(m.row(r)) {
                            *g += up * weights[r] * x;
                        }
                    }
                    let gl = self.grad_slot(&mut grads, *logvar);
                    for r in 0..lv.rows {
                        for (g, l) in gl.row_mut(r).iter_mut().zip(lv.row(r)) {
                            *g += up * weights[r] * 0.5 * (l.exp() - 1.0);
                        }
                    }
                }
                Op::Combine(terms) => {
                    for (v, c) in terms {
                        self.grad_slot(&mut grads, *v).data[0] += c * dy.data[0];
                    }
                }
            }
        }
        out
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        dy: &Mat,
        q: Var,
        k: Var,
        v: Var,
        segs: &Segments,
        heads: usize,
        causal: bool,
        probs: &[f64],
    ) -> (Mat, Mat, Mat) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let hd = qm.cols;
        let d = hd / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = Mat::zeros(qm.rows, hd);
        let mut dk = Mat::zeros(km.rows, hd);
        let mut dv = Mat::zeros(vm.rows, hd);
        let mut base = 0;
        let mut dp = Vec::new();
        for b in 0..segs.count() {
            let (s0, n) = (segs.start(b), segs.len_of(b));
            for h in 0..heads {
                let cols = h * d..(h + 1) * d;
                let p = &probs[base..base + n * n];
                base += n * n;
                dp.clear();
                dp.resize(n * n, 0.0);
                for i in 0..n {
                    let lim = if causal { i + 1 } else { n };
                    let dyi = &dy.row(s0 + i)[cols.clone()];
                    let mut dot = 0.0;
                    for j in 0..lim {
                        let vj = &vm.row(s0 + j)[cols.clone()];
                        let g = dyi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                        dp[i * n + j] = g;
                        dot += g * p[i * n + j];
                        let pij = p[i * n + j];
                        let dvj = &mut dv.data[(s0 + j) * hd..(s0 + j + 1) * hd][cols.clone()];
                        dvj.iter_mut().zip(dyi).for_each(|(x, y)| *x += pij * y);
                    }
                    for j in 0..lim {
                        let ds = p[i * n + j] * (dp[i * n + j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &km.row(s0 + j)[cols.clone()];
                        let dqi = &mut dq.data[(s0 + i) * hd..(s0 + i + 1) * hd][cols.clone()];
                        dqi.iter_mut().zip(kj).for_each(|(x, y)| *x += ds * y);
                        let qi = &qm.row(s0 + i)[cols.clone()];
                        let dkj = &mut dk.data[(s0 + j) * hd..(s0 + j + 1) * hd][cols.clone()];
                        dkj.iter_mut().zip(qi).for_each(|(x, y)| *x += ds * y);
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    fn lstm_backward(&self, dy: &Mat, out: &Mat, c: &LstmCache, grads: &mut [Option<Mat>]) {
        let whm = self.value(c.wh);
        let h = whm.rows;
        let n = out.rows;
        let mut da = Mat::zeros(n, 4 * h);
        let mut dwh = Mat::zeros(h, 4 * h);
        let mut dh0 = c.h0.map(|v| {
            let m = self.value(v);
            Mat::zeros(m.rows, m.cols)
        });
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for s in 0..c.segs.count() {
            let order: Vec<usize> = if c.reverse { c.segs.range(s).rev().collect() } else { c.segs.range(s).collect() };
            dh_next.iter_mut().for_each(|x| *x = 0.0);
            dc_next.iter_mut().for_each(|x| *x = 0.0);
            for (pos, &r) in order.iter().enumerate().rev() {
                let prev = if pos > 0 { Some(order[pos - 1]) } else { None };
                let g = c.gates.row(r);
                let dar = da.row_mut(r);
                for j in 0..h {
                    let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let cell = c.cells.data[r * h + j];
                    let th = cell.tanh();
                    let c_prev = prev.map_or(0.0, |p| c.cells.data[p * h + j]);
                    let dh = dy.data[r * h + j] + dh_next[j];
                    let d_o = dh * th;
                    let dcell = dc_next[j] + dh * og * (1.0 - th * th);
                    let di = dcell * gg;
                    let dg = dcell * ig;
                    let df = dcell * c_prev;
                    dc_next[j] = dcell * fg;
                    dar[j] = di * ig * (1.0 - ig);
                    dar[h + j] = df * fg * (1.0 - fg);
                    dar[2 * h + j] = dg * (1.0 - gg * gg);
                    dar[3 * h + j] = d_o * og * (1.0 - og);
                }
                let h_prev: Option<&[f64]> = match prev {
                    Some(p) => Some(out.row(p)),
                    None => c.h0.map(|v| self.value(v).row(s)),
                };
                let dar = da.row(r);
                if let Some(hp) = h_prev {
                    for (k, hk) in hp.iter().enumerate() {
                        if *hk != 0.0 {
                            dwh.row_mut(k).iter_mut().zip(dar).for_each(|(w, d)| *w += hk * d);
                        }
                    }
                }
                for (k, dn) in dh_next.iter_mut().enumerate() {
                    *dn = whm.row(k).iter().zip(dar).map(|(w, d)| w * d).sum();
                }
            }
            if let Some(m) = dh0.as_mut() {
                m.row_mut(s).iter_mut().zip(&dh_next).for_each(|(g, d)| *g += d);
            }
        }
        let xm = self.value(c.x);
        let gx = self.grad_slot(grads, c.x);
        gemm(&da, false, self.value(c.wx), true, 1.0, gx);
        let gwx = self.grad_slot(grads, c.wx);
        gemm(xm, true, &da, false, 1.0, gwx);
        self.grad_slot(grads, c.wh).add_assign(&dwh);
        let gb = self.grad_slot(grads, c.b);
        for r in 0..n {
            gb.data.iter_mut().zip(da.row(r)).for_each(|(g, d)| *g += d);
        }
        if let (Some(v), Some(m)) = (c.h0, dh0) {
            self.grad_slot(grads, v).add_assign(&m);
        }
    }
}

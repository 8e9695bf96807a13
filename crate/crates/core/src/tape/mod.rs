//! Minimal reverse-mode autodiff used by the model and training loop.

mod graph;
mod mat;
mod params;

pub use graph::{Graph, Segments, Var};
pub use mat::{gemm, matmul, Mat};
pub use params::{Grads, ParamId, ParamStore};

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Central-difference check of every parameter entry.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let grads = {
            let mut g = Graph::new(store);
            let loss = f(&mut g);
            g.backward(loss)
        };
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            for i in 0..store.get(id).len() {
                let orig = store.get(id).data[i];
                store.get_mut(id).data[i] = orig + h;
                let up = {
                    let mut g = Graph::new(store);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                store.get_mut(id).data[i] = orig - h;
                let down = {
                    let mut g = Graph::new(store);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                store.get_mut(id).data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let ad = grads.get(id).data[i];
                let tol = 1e-6 + 1e-5 * fd.abs().max(ad.abs());
                assert!((fd - ad).abs() <= tol, "{}[{i}]: analytic {ad} vs numeric {fd}", store.name(id));
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn dense_ops() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let x = s.add_normal("x", 5, 4, 1.0, &mut r);
        let w = s.add_normal("w", 4, 3, 1.0, &mut r);
        let b = s.add_normal("b", 1, 3, 1.0, &mut r);
        let gam = s.add_normal("gamma", 1, 3, 1.0, &mut r);
        let bet = s.add_normal("beta", 1, 3, 1.0, &mut r);
        let segs = Rc::new(Segments::from_lengths(&[2, 3]));
        let side = s.add_normal("side", 2, 3, 1.0, &mut r);
        check(&mut s, |g| {
            let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
            let y = g.matmul(xv, wv);
            let y = g.add_row(y, bv);
            let sv = g.param(side);
            let y = g.add_seg(y, sv, &segs);
            let (gv, btv) = (g.param(gam), g.param(bet));
            let y = g.layer_norm(y, gv, btv);
            let a = g.gelu(y);
            let t = g.tanh(y);
            let m = g.mul(a, t);
            let e = g.sigmoid(m);
            let e = g.exp(e);
            let e = g.scale(e, 0.7);
            let e = g.mul_const(e, Mat::from_vec(5, 3, (0..15).map(|i| i as f64 / 7.0).collect()));
            let pooled = g.seg_mean(e, &segs);
            let picked = g.gather_rows(m, vec![4, 0]);
            let cat = g.concat_cols(&[pooled, picked]);
            let l1 = g.softmax_xent(cat, vec![1, 5], vec![0.5, 2.0]);
            let l2 = g.mse(cat, Mat::from_vec(2, 6, vec![0.3; 12]), vec![1.0, 0.25]);
            let sum = g.add(pooled, picked);
            let l3 = g.softmax_xent(sum, vec![2, usize::MAX], vec![1.0, 1.0]);
            g.combine(&[(l1, 1.0), (l2, 0.5), (l3, -0.3)])
        });
    }

    #[test]
    fn attention_ops() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let q = s.add_normal("q", 6, 4, 1.0, &mut r);
        let k = s.add_normal("k", 6, 4, 1.0, &mut r);
        let v = s.add_normal("v", 6, 4, 1.0, &mut r);
        let segs = Rc::new(Segments::from_lengths(&[1, 3, 2]));
        for causal in [false, true] {
            check(&mut s, |g| {
                let (qv, kv, vv) = (g.param(q), g.param(k), g.param(v));
                let o = g.attention(qv, kv, vv, &segs, 2, causal);
                g.mse(o, Mat::from_vec(6, 4, (0..24).map(|i| (i as f64).cos()).collect()), vec![1.0; 6])
            });
        }
    }

    #[test]
    fn lstm_op() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let x = s.add_normal("x", 5, 3, 1.0, &mut r);
        let h0 = s.add_normal("h0", 2, 2, 1.0, &mut r);
        let wx = s.add_normal("wx", 3, 8, 0.7, &mut r);
        let wh = s.add_normal("wh", 2, 8, 0.7, &mut r);
        let b = s.add_normal("b", 1, 8, 0.5, &mut r);
        let segs = Rc::new(Segments::from_lengths(&[3, 2]));
        for reverse in [false, true] {
            for with_h0 in [false, true] {
                check(&mut s, |g| {
                    let (xv, wxv, whv, bv) = (g.param(x), g.param(wx), g.param(wh), g.param(b));
                    let h = with_h0.then(|| g.param(h0));
                    let o = g.lstm(xv, h, wxv, whv, bv, &segs, reverse);
                    g.mse(
                        o,
                        Mat::from_vec(5, 2, vec![0.1, -0.2, 0.3, 0.0, 0.5, 0.2, -0.1, 0.4, 0.0, 0.1]),
                        vec![1.0; 5],
                    )
                });
            }
        }
    }

    #[test]
    fn embedding_and_kl() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let table = s.add_normal("table", 4, 3, 1.0, &mut r);
        let lv = s.add_normal("lv", 2, 3, 0.5, &mut r);
        check(&mut s, |g| {
            let t = g.param(table);
            let e = g.embed(t, vec![3, usize::MAX, 0, 3]);
            let mu = g.gather_rows(e, vec![0, 2]);
            let l = g.param(lv);
            g.kl(mu, l, vec![0.5, 0.5])
        });
    }

    #[test]
    fn padded_embedding_is_zero() {
        let mut s = ParamStore::new();
        let t = s.add_const("t", 2, 2, 1.0);
        let mut g = Graph::new(&s);
        let tv = g.param(t);
        let e = g.embed(tv, vec![1, usize::MAX]);
        assert_eq!(g.value(e).data, vec![1.0, 1.0, 0.0, 0.0]);
    }
}

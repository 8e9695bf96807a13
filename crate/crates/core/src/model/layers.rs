//! Building blocks shared by the encoder and decoder.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::document::{AttrKind, AttributeSpec};
use crate::tape::{Graph, Mat, ParamId, ParamStore, Segments, Var};

/// Dropout applied only when an RNG is supplied (training).
pub(crate) struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let (r, c) = g.value(x).shape();
        let keep = 1.0 - self.rate;
        let mask = (0..r * c).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        g.mul_const(x, Mat::from_vec(r, c, mask))
    }
}

#[derive(Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, inp: usize, out: usize) -> Self {
        Self::with_std(store, rng, name, inp, out, (1.0 / inp as f64).sqrt())
    }

    pub fn with_std(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inp: usize,
        out: usize,
        std: f64,
    ) -> Self {
        let w = store.add_normal(format!("{name}.w"), inp, out, std, rng);
        let b = Some(store.add_const(format!("{name}.b"), 1, out, 0.0));
        Linear { w, b }
    }

    pub fn no_bias(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, inp: usize, out: usize) -> Self {
        let w = store.add_normal(format!("{name}.w"), inp, out, (1.0 / inp as f64).sqrt(), rng);
        Linear { w, b: None }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Norm {
            gamma: store.add_const(format!("{name}.gamma"), 1, dim, 1.0),
            beta: store.add_const(format!("{name}.beta"), 1, dim, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt)
    }
}

/// Pre-norm transformer block with a side input added between the
/// self-attention and the feed-forward sublayers:
///
/// ```text
/// h1  = h  + Attn(LN(h))
/// h2  = h1 + Side(side)
/// out = h2 + FFN(LN(h2))
/// ```
#[derive(Clone)]
pub(crate) struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    side: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

impl Block {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        hidden: usize,
        side_dim: usize,
        ffn_mult: usize,
    ) -> Self {
        Block {
            ln1: Norm::new(store, &format!("{name}.ln1"), hidden),
            q: Linear::new(store, rng, &format!("{name}.q"), hidden, hidden),
            k: Linear::new(store, rng, &format!("{name}.k"), hidden, hidden),
            v: Linear::new(store, rng, &format!("{name}.v"), hidden, hidden),
            o: Linear::new(store, rng, &format!("{name}.o"), hidden, hidden),
            side: Linear::new(store, rng, &format!("{name}.side"), side_dim, hidden),
            ln2: Norm::new(store, &format!("{name}.ln2"), hidden),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), hidden, hidden * ffn_mult),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), hidden * ffn_mult, hidden),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        h: Var,
        side: Var,
        segs: &Rc<Segments>,
        heads: usize,
        causal: bool,
        dropout: &mut Dropout,
    ) -> Var {
        let n = self.ln1.forward(g, h);
        let (q, k, v) = (self.q.forward(g, n), self.k.forward(g, n), self.v.forward(g, n));
        let a = g.attention(q, k, v, segs, heads, causal);
        let a = self.o.forward(g, a);
        let a = dropout.apply(g, a);
        let h = g.add(h, a);
        let s = self.side.forward(g, side);
        let h = g.add_seg(h, s, segs);
        let n = self.ln2.forward(g, h);
        let f = self.ff1.forward(g, n);
        let f = g.gelu(f);
        let f = self.ff2.forward(g, f);
        let f = dropout.apply(g, f);
        g.add(h, f)
    }
}

#[derive(Clone)]
pub(crate) struct LstmLayer {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, inp: usize, hidden: usize) -> Self {
        let wx = store.add_normal(format!("{name}.wx"), inp, 4 * hidden, (1.0 / inp as f64).sqrt(), rng);
        let wh = store.add_normal(format!("{name}.wh"), hidden, 4 * hidden, (1.0 / hidden as f64).sqrt(), rng);
        // forget gate bias starts at 1
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let b = store.add(format!("{name}.b"), Mat::from_vec(1, 4 * hidden, bias));
        LstmLayer { wx, wh, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, h0: Option<Var>, segs: &Rc<Segments>, reverse: bool) -> Var {
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        g.lstm(x, h0, wx, wh, b, segs, reverse)
    }
}

/// Input projection `f_k` of one attribute into the hidden space.
#[derive(Clone)]
pub(crate) enum AttrEmbedding {
    /// One table per slot; slot embeddings are summed.
    Categorical(Vec<ParamId>),
    /// Bias-free so that an absent (all-zero) value embeds to zero.
    Numerical(Linear),
}

impl AttrEmbedding {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        spec: &AttributeSpec,
        hidden: usize,
    ) -> Self {
        let name = format!("{prefix}.{}", spec.name);
        match spec.kind {
            AttrKind::Categorical => AttrEmbedding::Categorical(
                (0..spec.dims)
                    .map(|s| store.add_normal(format!("{name}.emb{s}"), spec.cardinality, hidden, 0.1, rng))
                    .collect(),
            ),
            AttrKind::Numerical => AttrEmbedding::Numerical(Linear::no_bias(store, rng, &name, spec.dims, hidden)),
        }
    }

    pub fn forward(&self, g: &mut Graph, input: &AttrInput) -> Var {
        match (self, input) {
            (AttrEmbedding::Categorical(tables), AttrInput::Categorical(slots)) => {
                let mut acc: Option<Var> = None;
                for (table, idx) in tables.iter().zip(slots) {
                    let t = g.param(*table);
                    let e = g.embed(t, idx.clone());
                    acc = Some(match acc {
                        Some(a) => g.add(a, e),
                        None => e,
                    });
                }
                acc.expect("at least one slot")
            }
            (AttrEmbedding::Numerical(lin), AttrInput::Numerical { values, .. }) => {
                let x = g.input(values.clone());
                lin.forward(g, x)
            }
            _ => unreachable!("inputs are built from the same schema"),
        }
    }
}

/// Output head of one attribute.
#[derive(Clone)]
pub(crate) enum AttrHead {
    Categorical(Vec<Linear>),
    Numerical(Linear),
}

pub(crate) enum HeadOut {
    /// Logits per slot, `rows x cardinality`.
    Categorical(Vec<Var>),
    /// Regression output, `rows x dims`.
    Numerical(Var),
}

impl AttrHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, spec: &AttributeSpec, inp: usize) -> Self {
        let name = format!("{prefix}.{}", spec.name);
        match spec.kind {
            AttrKind::Categorical => AttrHead::Categorical(
                (0..spec.dims)
                    .map(|s| Linear::new(store, rng, &format!("{name}.head{s}"), inp, spec.cardinality))
                    .collect(),
            ),
            AttrKind::Numerical => AttrHead::Numerical(Linear::new(store, rng, &name, inp, spec.dims)),
        }
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> HeadOut {
        match self {
            AttrHead::Categorical(heads) => HeadOut::Categorical(heads.iter().map(|l| l.forward(g, h)).collect()),
            AttrHead::Numerical(l) => HeadOut::Numerical(l.forward(g, h)),
        }
    }
}

/// Packed per-row values of one attribute.
#[derive(Clone, Debug)]
pub(crate) enum AttrInput {
    /// Bin per slot per row; out-of-range marks an absent value.
    Categorical(Vec<Vec<usize>>),
    Numerical {
        values: Mat,
        present: Vec<bool>,
    },
}

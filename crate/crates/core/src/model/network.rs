//! Encoder and decoder graphs for the four variants.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use super::layers::{AttrEmbedding, AttrHead, Block, Dropout, HeadOut, Linear, LstmLayer, Norm};
use super::packed::Packed;
use crate::document::DocumentSchema;
use crate::tape::{Graph, Mat, ParamId, ParamStore, Segments, Var};

/// Sequence stack with a per-document side input.
#[derive(Clone)]
enum Trunk {
    Transformer {
        blocks: Vec<Block>,
        norm: Norm,
    },
    /// Unidirectional LSTM layers whose initial state is projected from the side input.
    Lstm {
        init: Vec<Linear>,
        layers: Vec<LstmLayer>,
    },
    /// Bidirectional LSTM layers; the side input is concatenated to every step.
    BiLstm {
        layers: Vec<(LstmLayer, LstmLayer, Linear)>,
    },
}

struct TrunkCtx<'a> {
    segs: &'a Rc<Segments>,
    seg_of_row: &'a [usize],
    heads: usize,
    causal: bool,
}

impl Trunk {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, config: &ModelConfig, side_dim: usize) -> Self {
        let h = config.hidden_dim;
        let n = config.num_blocks;
        match config.variant {
            Variant::OneshotTransformer | Variant::AutoregTransformer => Trunk::Transformer {
                blocks: (0..n)
                    .map(|i| Block::new(store, rng, &format!("{name}.block{i}"), h, side_dim, config.ffn_mult))
                    .collect(),
                norm: Norm::new(store, &format!("{name}.norm"), h),
            },
            Variant::AutoregLstm => Trunk::Lstm {
                init: (0..n).map(|i| Linear::new(store, rng, &format!("{name}.init{i}"), side_dim, h)).collect(),
                layers: (0..n).map(|i| LstmLayer::new(store, rng, &format!("{name}.lstm{i}"), h, h)).collect(),
            },
            Variant::OneshotLstm => Trunk::BiLstm {
                layers: (0..n)
                    .map(|i| {
                        (
                            LstmLayer::new(store, rng, &format!("{name}.fwd{i}"), h + side_dim, h),
                            LstmLayer::new(store, rng, &format!("{name}.bwd{i}"), h + side_dim, h),
                            Linear::new(store, rng, &format!("{name}.merge{i}"), 2 * h, h),
                        )
                    })
                    .collect(),
            },
        }
    }

    fn forward(&self, g: &mut Graph, mut x: Var, side: Var, ctx: &TrunkCtx, dropout: &mut Dropout) -> Var {
        match self {
            Trunk::Transformer { blocks, norm } => {
                for b in blocks {
                    x = b.forward(g, x, side, ctx.segs, ctx.heads, ctx.causal, dropout);
                }
                norm.forward(g, x)
            }
            Trunk::Lstm { init, layers } => {
                for (proj, layer) in init.iter().zip(layers) {
                    let h0 = proj.forward(g, side);
                    let h0 = g.tanh(h0);
                    x = layer.forward(g, x, Some(h0), ctx.segs, false);
                    x = dropout.apply(g, x);
                }
                x
            }
            Trunk::BiLstm { layers } => {
                let side_rows = g.gather_rows(side, ctx.seg_of_row.to_vec());
                for (fwd, bwd, merge) in layers {
                    let inp = g.concat_cols(&[x, side_rows]);
                    let f = fwd.forward(g, inp, None, ctx.segs, false);
                    let b = bwd.forward(g, inp, None, ctx.segs, true);
                    let both = g.concat_cols(&[f, b]);
                    x = merge.forward(g, both);
                    x = dropout.apply(g, x);
                }
                x
            }
        }
    }
}

/// Decoder-side embeddings of the previous element (autoregressive variants).
#[derive(Clone)]
struct StepInput {
    bos: ParamId,
    attrs: Vec<AttrEmbedding>,
}

#[derive(Clone)]
pub(crate) struct Network {
    variant: Variant,
    heads: usize,
    canvas_emb: Vec<AttrEmbedding>,
    element_emb: Vec<AttrEmbedding>,
    pos_enc: ParamId,
    encoder: Trunk,
    mu: Linear,
    logvar: Linear,
    canvas_heads: Vec<AttrHead>,
    step_input: Option<StepInput>,
    pos_dec: ParamId,
    decoder: Trunk,
    element_heads: Vec<AttrHead>,
}

/// Graph nodes produced by one encoder pass.
pub(crate) struct Encoded {
    pub mu: Var,
    pub logvar: Var,
}

/// Graph nodes produced by one decoder pass. Canvas outputs have one row per
/// document, element outputs one row per packed element.
pub(crate) struct Decoded {
    pub canvas: Vec<HeadOut>,
    pub elements: Vec<HeadOut>,
}

impl Network {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: &ModelConfig, schema: &DocumentSchema) -> Self {
        let h = config.hidden_dim;
        let l = config.latent_dim;
        let t = config.max_length;
        let canvas_emb =
            schema.canvas_attrs.iter().map(|s| AttrEmbedding::new(store, rng, "enc.canvas", s, h)).collect();
        let element_emb =
            schema.element_attrs.iter().map(|s| AttrEmbedding::new(store, rng, "enc.element", s, h)).collect();
        let pos_enc = store.add_normal("enc.position", t, h, 0.1, rng);
        let encoder = Trunk::new(store, rng, "enc", config, h);
        let mu = Linear::new(store, rng, "enc.mu", h, l);
        let logvar = Linear::with_std(store, rng, "enc.logvar", h, l, 0.01);
        let canvas_heads = schema.canvas_attrs.iter().map(|s| AttrHead::new(store, rng, "dec.canvas", s, l)).collect();
        let step_input = config.variant.is_autoregressive().then(|| StepInput {
            bos: store.add_normal("dec.bos", 1, h, 0.1, rng),
            attrs: schema.element_attrs.iter().map(|s| AttrEmbedding::new(store, rng, "dec.input", s, h)).collect(),
        });
        let pos_dec = store.add_normal("dec.position", t, h, 0.1, rng);
        let decoder = Trunk::new(store, rng, "dec", config, l);
        let element_heads =
            schema.element_attrs.iter().map(|s| AttrHead::new(store, rng, "dec.element", s, h)).collect();
        Network {
            variant: config.variant,
            heads: config.heads,
            canvas_emb,
            element_emb,
            pos_enc,
            encoder,
            mu,
            logvar,
            canvas_heads,
            step_input,
            pos_dec,
            decoder,
            element_heads,
        }
    }

    fn sum(g: &mut Graph, parts: impl IntoIterator<Item = Var>) -> Var {
        let mut it = parts.into_iter();
        let first = it.next().expect("non-empty sum");
        it.fold(first, |acc, v| g.add(acc, v))
    }

    pub fn encode(&self, g: &mut Graph, packed: &Packed, dropout: &mut Dropout) -> Encoded {
        let canvas: Vec<Var> = self.canvas_emb.iter().zip(&packed.canvas).map(|(e, x)| e.forward(g, x)).collect();
        let h_c = Self::sum(g, canvas);
        let mut parts: Vec<Var> = self.element_emb.iter().zip(&packed.elements).map(|(e, x)| e.forward(g, x)).collect();
        let pos = g.param(self.pos_enc);
        parts.push(g.embed(pos, packed.positions.clone()));
        let h_e = Self::sum(g, parts);
        let ctx = TrunkCtx { segs: &packed.segs, seg_of_row: &packed.seg_of_row, heads: self.heads, causal: false };
        let h = self.encoder.forward(g, h_e, h_c, &ctx, dropout);
        let pooled = match self.variant {
            // the last recurrent state summarizes the sequence
            Variant::AutoregLstm => {
                let last = (0..packed.segs.count()).map(|b| packed.segs.start(b) + packed.segs.len_of(b) - 1).collect();
                g.gather_rows(h, last)
            }
            _ => g.seg_mean(h, &packed.segs),
        };
        Encoded { mu: self.mu.forward(g, pooled), logvar: self.logvar.forward(g, pooled) }
    }

    /// Canvas predictions depend on `z` alone.
    pub fn decode_canvas(&self, g: &mut Graph, z: Var) -> Vec<HeadOut> {
        self.canvas_heads.iter().map(|head| head.forward(g, z)).collect()
    }

    /// Element predictions for the layout in `packed`. Autoregressive variants
    /// read the previous elements from `packed.prev_elements`.
    pub fn decode_elements(&self, g: &mut Graph, z: Var, packed: &Packed, dropout: &mut Dropout) -> Vec<HeadOut> {
        let pos = g.param(self.pos_dec);
        let mut parts = vec![g.embed(pos, packed.positions.clone())];
        if let Some(step) = &self.step_input {
            let bos = g.param(step.bos);
            parts.push(g.embed(bos, packed.bos_index.clone()));
            for (e, x) in step.attrs.iter().zip(&packed.prev_elements) {
                parts.push(e.forward(g, x));
            }
        }
        let q = Self::sum(g, parts);
        let ctx = TrunkCtx {
            segs: &packed.segs,
            seg_of_row: &packed.seg_of_row,
            heads: self.heads,
            causal: self.variant.is_autoregressive(),
        };
        let h = self.decoder.forward(g, q, z, &ctx, dropout);
        self.element_heads.iter().map(|head| head.forward(g, h)).collect()
    }

    pub fn decode(&self, g: &mut Graph, z: Var, packed: &Packed, dropout: &mut Dropout) -> Decoded {
        Decoded { canvas: self.decode_canvas(g, z), elements: self.decode_elements(g, z, packed, dropout) }
    }
}

/// `mu + exp(logvar / 2) * eps`, differentiable in `mu` and `logvar`.
pub(crate) fn reparameterize(g: &mut Graph, enc: &Encoded, eps: Option<Mat>) -> Var {
    match eps {
        None => enc.mu,
        Some(eps) => {
            let half = g.scale(enc.logvar, 0.5);
            let sigma = g.exp(half);
            let noise = g.mul_const(sigma, eps);
            g.add(enc.mu, noise)
        }
    }
}

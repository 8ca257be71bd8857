use rand::Rng;

use super::{TokenSequence, TransformerConfig};
use crate::autograd::{Dropout, Graph, NodeId, ParamId, Tensor};
use crate::error::Result;

/// `x · W + b` with `W` stored input-major (in × out).
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    fn register<F>(prefix: &str, fan_in: usize, fan_out: usize, add: &mut F) -> Self
    where
        F: FnMut(String, (usize, usize)) -> ParamId,
    {
        Linear {
            weight: add(format!("{prefix}.weight"), (fan_in, fan_out)),
            bias: Some(add(format!("{prefix}.bias"), (1, fan_out))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    fn register<F>(prefix: &str, width: usize, eps: f64, add: &mut F) -> Self
    where
        F: FnMut(String, (usize, usize)) -> ParamId,
    {
        LayerNorm {
            gamma: add(format!("{prefix}.gamma"), (1, width)),
            beta: add(format!("{prefix}.beta"), (1, width)),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct Embeddings {
    pub word: ParamId,
    pub position: ParamId,
    pub token_type: Option<ParamId>,
    pub norm: LayerNorm,
}

impl Embeddings {
    pub(super) fn register<F>(c: &TransformerConfig, add: &mut F) -> Self
    where
        F: FnMut(String, (usize, usize)) -> ParamId,
    {
        Embeddings {
            word: add("encoder.embed.word".into(), (c.vocab_size, c.hidden)),
            position: add("encoder.embed.position".into(), (c.max_positions, c.hidden)),
            token_type: (c.type_vocab_size > 0)
                .then(|| add("encoder.embed.token_type".into(), (c.type_vocab_size, c.hidden))),
            norm: LayerNorm::register("encoder.embed.norm", c.hidden, c.layer_norm_eps, add),
        }
    }

    pub(super) fn forward(&self, g: &mut Graph, c: &TransformerConfig, t: &TokenSequence) -> Result<NodeId> {
        let word = g.gather(self.word, &t.token_ids);
        let pos_ids: Vec<usize> = (0..t.len()).map(|i| i + c.position_offset).collect();
        let pos = g.gather(self.position, &pos_ids);
        let mut x = g.add(word, pos);
        if let Some(tt) = self.token_type {
            let ids: Vec<usize> = t
                .segment_ids
                .iter()
                .map(|&s| s.min(c.type_vocab_size - 1))
                .collect();
            let ty = g.gather(tt, &ids);
            x = g.add(x, ty);
        }
        Ok(self.norm.forward(g, x))
    }
}

/// Post-norm transformer block: self-attention then a GELU feed-forward,
/// each wrapped in residual + layer norm.
#[derive(Debug, Clone)]
pub struct Block {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

impl Block {
    pub(super) fn register<F>(c: &TransformerConfig, index: usize, add: &mut F) -> Self
    where
        F: FnMut(String, (usize, usize)) -> ParamId,
    {
        let p = format!("encoder.layer{index}");
        let d = c.hidden;
        Block {
            query: Linear::register(&format!("{p}.attn.query"), d, d, add),
            key: Linear::register(&format!("{p}.attn.key"), d, d, add),
            value: Linear::register(&format!("{p}.attn.value"), d, d, add),
            attn_out: Linear::register(&format!("{p}.attn.out"), d, d, add),
            attn_norm: LayerNorm::register(&format!("{p}.attn.norm"), d, c.layer_norm_eps, add),
            ffn_in: Linear::register(&format!("{p}.ffn.in"), d, c.intermediate, add),
            ffn_out: Linear::register(&format!("{p}.ffn.out"), c.intermediate, d, add),
            ffn_norm: LayerNorm::register(&format!("{p}.ffn.norm"), d, c.layer_norm_eps, add),
        }
    }

    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        x: NodeId,
        heads: usize,
        mut dropout: Option<&mut Dropout<R>>,
    ) -> NodeId {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let d = g.value(x).ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
            };
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let probs = g.softmax_rows(scores);
            contexts.push(g.matmul(probs, vh));
        }
        let ctx = if heads == 1 {
            contexts[0]
        } else {
            g.concat_cols(&contexts)
        };
        let a = self.attn_out.forward(g, ctx);
        let a = g.dropout(a, dropout.as_deref_mut());
        let r = g.add(x, a);
        let x1 = self.attn_norm.forward(g, r);

        let f = self.ffn_in.forward(g, x1);
        let f = g.gelu(f);
        let f = self.ffn_out.forward(g, f);
        let f = g.dropout(f, dropout.as_deref_mut());
        let r = g.add(x1, f);
        self.ffn_norm.forward(g, r)
    }
}

/// Copy of a tensor with rows and columns swapped; used when loading
/// output-major linear weights.
pub(super) fn transposed(t: &Tensor) -> Tensor {
    t.t().to_owned()
}

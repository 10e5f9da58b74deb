//! Comparison topologies. Their original hyperparameters live outside this
//! project; the shapes here are stated assumptions.

use super::ModelConfig;
use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{self, Attention, Conv1d, Ctx, Dense, Init, Lstm, SequenceMask};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Parallel convolutions of widths 3 and 4, each max-pooled, then dropout
/// and a softmax layer.
#[derive(Clone, Debug)]
pub struct ConvNet {
    pub convs: Vec<Conv1d>,
    out: Dense,
    dropout: f64,
}

impl ConvNet {
    pub const KERNELS: [usize; 2] = [3, 4];

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let f = cfg.baseline_filters;
        let convs = Self::KERNELS
            .iter()
            .map(|&k| Conv1d::new(store, &format!("convnet.conv{k}"), k, cfg.embed_dim, f, Init::GlorotUniform, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            out: Dense::new(store, "convnet.out", f * convs.len(), cfg.classes, Init::Zeros, rng),
            convs,
            dropout: cfg.dropout,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<Var> {
        let mut pooled = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let h = conv.forward(ctx, emb, Some(mask))?;
            let h = ctx.graph.relu(h)?;
            pooled.push(nn::global_max_pool(ctx, h, mask)?);
        }
        let h = ctx.graph.concat_cols(&pooled)?;
        let h = nn::dropout(ctx, h, self.dropout)?;
        let logits = self.out.forward(ctx, h)?;
        ctx.graph.softmax(logits)
    }
}

/// LSTM over the sequence, additive attention over its states, softmax.
#[derive(Clone, Debug)]
pub struct AttentionLstm {
    pub lstm: Lstm,
    pub attention: Attention,
    out: Dense,
}

impl AttentionLstm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let u = cfg.lstm_units;
        Self {
            lstm: Lstm::new(store, "attlstm.lstm", cfg.embed_dim, u, Init::GlorotUniform, rng),
            attention: Attention::new(store, "attlstm.attention", u, cfg.attention_hidden, rng),
            out: Dense::new(store, "attlstm.out", u, cfg.classes, Init::Zeros, rng),
        }
    }

    /// Returns `(probabilities, attention weights)`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<(Var, Var)> {
        let h = self.lstm.forward(ctx, emb, mask, true)?;
        let (c, w) = self.attention.forward(ctx, h, mask)?;
        let logits = self.out.forward(ctx, c)?;
        Ok((ctx.graph.softmax(logits)?, w))
    }
}

/// One width-3 convolution, max-pool, softmax.
#[derive(Clone, Debug)]
pub struct SimpleConv {
    pub conv: Conv1d,
    out: Dense,
}

impl SimpleConv {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let f = cfg.baseline_filters;
        Ok(Self {
            conv: Conv1d::new(store, "simpleconv.conv", 3, cfg.embed_dim, f, Init::GlorotUniform, rng)?,
            out: Dense::new(store, "simpleconv.out", f, cfg.classes, Init::Zeros, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<Var> {
        let h = self.conv.forward(ctx, emb, Some(mask))?;
        let h = ctx.graph.relu(h)?;
        let h = nn::global_max_pool(ctx, h, mask)?;
        let logits = self.out.forward(ctx, h)?;
        ctx.graph.softmax(logits)
    }
}

/// Softmax over mean-pooled token vectors: the only weights outside the
/// embedding table are `d x C + C`.
#[derive(Clone, Debug)]
pub struct EmbeddingProbe {
    out: Dense,
}

impl EmbeddingProbe {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            out: Dense::new(store, "probe.out", cfg.embed_dim, cfg.classes, Init::Zeros, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<Var> {
        let h = nn::global_avg_pool(ctx, emb, mask)?;
        let logits = self.out.forward(ctx, h)?;
        ctx.graph.softmax(logits)
    }
}

//! The three cascades and the discriminator that aggregates them.

use super::{LearnerOutput, ModelConfig};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{self, BatchNorm, Conv1d, Ctx, Dense, Init, Lstm, SequenceMask};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Scalar;

/// dense(w1) + ReLU -> dropout -> batchnorm -> dense(w2) + ReLU.
#[derive(Clone, Debug)]
pub struct DenseStack {
    first: Dense,
    norm: BatchNorm,
    second: Dense,
    dropout: f64,
}

impl DenseStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        widths: (usize, usize),
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        Self {
            first: Dense::new(store, &format!("{name}.dense1"), inputs, widths.0, Init::GlorotUniform, rng),
            norm: BatchNorm::new(store, &format!("{name}.bn"), widths.0),
            second: Dense::new(store, &format!("{name}.dense2"), widths.0, widths.1, Init::GlorotUniform, rng),
            dropout,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.first.forward(ctx, x)?;
        let h = ctx.graph.relu(h)?;
        let h = nn::dropout(ctx, h, self.dropout)?;
        let h = self.norm.forward(ctx, h)?;
        let h = self.second.forward(ctx, h)?;
        ctx.graph.relu(h)
    }
}

/// Learner trunk plus its auxiliary softmax head.
#[derive(Clone, Debug)]
pub struct LearnerHead {
    stack: DenseStack,
    out: Dense,
}

impl LearnerHead {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            stack: DenseStack::new(store, name, inputs, cfg.learner_dense, cfg.dropout, rng),
            // Zero output weights make every head start at the uniform
            // distribution.
            out: Dense::new(store, &format!("{name}.out"), cfg.learner_dense.1, cfg.classes, Init::Zeros, rng),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, encoded: Var) -> Result<LearnerOutput> {
        let features = self.stack.forward(ctx, encoded)?;
        let logits = self.out.forward(ctx, features)?;
        let aux_probs = ctx.graph.softmax(logits)?;
        Ok(LearnerOutput { features, aux_probs })
    }
}

fn max_avg_concat<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, mask: &SequenceMask) -> Result<Var> {
    let mx = nn::global_max_pool(ctx, x, mask)?;
    let av = nn::global_avg_pool(ctx, x, mask)?;
    ctx.graph.concat_cols(&[mx, av])
}

/// conv(k1) -> ReLU -> conv(k2) -> ReLU -> [max || avg] -> head.
#[derive(Clone, Debug)]
pub struct StackedCnnLearner {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    head: LearnerHead,
}

impl StackedCnnLearner {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let f = cfg.filters;
        Ok(Self {
            conv1: Conv1d::new(store, "cnn.conv1", cfg.kernels.0, cfg.embed_dim, f, Init::GlorotUniform, rng)?,
            conv2: Conv1d::new(store, "cnn.conv2", cfg.kernels.1, f, f, Init::GlorotUniform, rng)?,
            head: LearnerHead::new(store, "cnn.head", 2 * f, cfg, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<LearnerOutput> {
        let h = self.conv1.forward(ctx, emb, Some(mask))?;
        let h = ctx.graph.relu(h)?;
        let h = self.conv2.forward(ctx, h, Some(mask))?;
        let h = ctx.graph.relu(h)?;
        let pooled = max_avg_concat(ctx, h, mask)?;
        self.head.forward(ctx, pooled)
    }
}

/// LSTM -> LSTM (both returning sequences) -> [max || avg] -> head.
#[derive(Clone, Debug)]
pub struct StackedLstmLearner {
    pub lstm1: Lstm,
    pub lstm2: Lstm,
    head: LearnerHead,
}

impl StackedLstmLearner {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let u = cfg.lstm_units;
        Self {
            lstm1: Lstm::new(store, "slstm.lstm1", cfg.embed_dim, u, Init::GlorotUniform, rng),
            lstm2: Lstm::new(store, "slstm.lstm2", u, u, Init::GlorotUniform, rng),
            head: LearnerHead::new(store, "slstm.head", 2 * u, cfg, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<LearnerOutput> {
        let h = self.lstm1.forward(ctx, emb, mask, true)?;
        let h = self.lstm2.forward(ctx, h, mask, true)?;
        let pooled = max_avg_concat(ctx, h, mask)?;
        self.head.forward(ctx, pooled)
    }
}

/// Single LSTM whose state at the last true token is the encoding.
#[derive(Clone, Debug)]
pub struct LstmLearner {
    pub lstm: Lstm,
    head: LearnerHead,
}

impl LstmLearner {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            lstm: Lstm::new(store, "lstm.lstm", cfg.embed_dim, cfg.lstm_units, Init::GlorotUniform, rng),
            head: LearnerHead::new(store, "lstm.head", cfg.lstm_units, cfg, rng),
        }
    }

    /// The `[B, U]` encoding fed to the head.
    pub fn encode<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<Var> {
        self.lstm.forward(ctx, emb, mask, false)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, emb: Var, mask: &SequenceMask) -> Result<LearnerOutput> {
        let h = self.encode(ctx, emb, mask)?;
        self.head.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    stack: DenseStack,
    out: Dense,
}

impl Discriminator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            stack: DenseStack::new(store, "disc", 3 * cfg.learner_dense.1, cfg.disc_dense, cfg.dropout, rng),
            out: Dense::new(store, "disc.out", cfg.disc_dense.1, cfg.classes, Init::Zeros, rng),
        }
    }

    /// Final class probabilities from the three learners' features.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, features: &[Var; 3]) -> Result<Var> {
        let rows: Vec<usize> = features.iter().map(|&f| ctx.value(f).shape()[0]).collect();
        if rows.iter().any(|&r| r != rows[0]) {
            return Err(Error::shape("discriminator", &rows, &[rows[0]; 3]));
        }
        let x = ctx.graph.concat_cols(features)?;
        let h = self.stack.forward(ctx, x)?;
        let logits = self.out.forward(ctx, h)?;
        ctx.graph.softmax(logits)
    }
}

#[derive(Clone, Debug)]
pub struct McmLayers {
    pub cnn: StackedCnnLearner,
    pub stacked_lstm: StackedLstmLearner,
    pub lstm: LstmLearner,
    pub discriminator: Discriminator,
}

impl McmLayers {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            cnn: StackedCnnLearner::new(store, cfg, rng)?,
            stacked_lstm: StackedLstmLearner::new(store, cfg, rng),
            lstm: LstmLearner::new(store, cfg, rng),
            discriminator: Discriminator::new(store, cfg, rng),
        })
    }
}

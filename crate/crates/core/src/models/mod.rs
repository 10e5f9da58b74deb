//! Classifiers: the multi-cascaded model (three learners with auxiliary
//! heads feeding a discriminator) and the comparison baselines.

mod baselines;
mod checkpoint;
mod mcm;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::EncodedBatch;
use crate::embeddings::{EmbeddingMatrix, PAD};
use crate::error::{Error, Result};
use crate::nn::{self, Ctx, Mode, SequenceMask};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub use baselines::{AttentionLstm, ConvNet, EmbeddingProbe, SimpleConv};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mcm::{DenseStack, Discriminator, LstmLearner, McmLayers, StackedCnnLearner, StackedLstmLearner};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mcm,
    Convnet,
    AttentionLstm,
    Simpleconv,
    EmbeddingProbe,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mcm,
        ModelKind::Convnet,
        ModelKind::AttentionLstm,
        ModelKind::Simpleconv,
        ModelKind::EmbeddingProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mcm => "mcm",
            Self::Convnet => "convnet",
            Self::AttentionLstm => "attention_lstm",
            Self::Simpleconv => "simpleconv",
            Self::EmbeddingProbe => "embedding_probe",
        }
    }

    /// Name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Mcm => "McM",
            Self::Convnet => "ConvNet",
            Self::AttentionLstm => "Attention-LSTM",
            Self::Simpleconv => "SimpleConv",
            Self::EmbeddingProbe => "Embedding probe",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" => Ok(Self::EmbeddingProbe),
            _ => Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
                Error::Config(format!(
                    "unknown model `{s}` (expected mcm|convnet|attention_lstm|simpleconv|embedding_probe)"
                ))
            }),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters. The embedding table shape is part of the
/// configuration so a checkpoint can rebuild the model before loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub finetune: bool,
    pub filters: usize,
    pub kernels: (usize, usize),
    pub lstm_units: usize,
    pub learner_dense: (usize, usize),
    pub disc_dense: (usize, usize),
    pub dropout: f64,
    pub aux_weight: f64,
    pub classes: usize,
    pub baseline_filters: usize,
    pub attention_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mcm,
            vocab_size: 2,
            embed_dim: 300,
            finetune: true,
            filters: 300,
            kernels: (1, 2),
            lstm_units: 300,
            learner_dense: (128, 64),
            disc_dense: (128, 64),
            dropout: 0.5,
            aux_weight: 1.0,
            classes: 3,
            baseline_filters: 100,
            attention_hidden: 100,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.embed_dim,
            self.filters,
            self.kernels.0,
            self.kernels.1,
            self.lstm_units,
            self.learner_dense.0,
            self.learner_dense.1,
            self.disc_dense.0,
            self.disc_dense.1,
            self.baseline_filters,
            self.attention_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("all layer widths must be positive".into()));
        }
        if self.vocab_size < 2 || self.classes < 2 {
            return Err(Error::Config("need at least 2 vocabulary entries and 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.aux_weight >= 0.0) || !self.aux_weight.is_finite() {
            return Err(Error::Config(format!("aux weight must be >= 0, got {}", self.aux_weight)));
        }
        Ok(())
    }
}

/// Features handed to the discriminator and the learner's own prediction.
#[derive(Clone, Copy, Debug)]
pub struct LearnerOutput {
    pub features: Var,
    pub aux_probs: Var,
}

/// Tape handles for one forward pass. Baselines have no learners.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub final_probs: Var,
    /// Stacked CNN, stacked LSTM, LSTM (McM only).
    pub learners: Vec<LearnerOutput>,
    /// Attention weights `[B, L]` (Attention-LSTM only).
    pub attention: Option<Var>,
}

/// Materialized probabilities of every head.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T: Scalar = f32> {
    pub final_probs: Tensor<T>,
    pub aux_probs: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
enum Arch {
    Mcm(Box<McmLayers>),
    Convnet(ConvNet),
    AttentionLstm(AttentionLstm),
    Simpleconv(SimpleConv),
    Probe(EmbeddingProbe),
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    embedding: ParamId,
    arch: Arch,
}

impl<T: Scalar> Model<T> {
    /// Builds the topology with a zero embedding table. Hidden layers get
    /// Glorot-uniform weights from `rng`; softmax heads start at zero.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let embedding = params.add(
            "embedding",
            Tensor::zeros(&[config.vocab_size, config.embed_dim]),
            config.finetune,
        );
        params.param_mut(embedding).frozen_row = Some(PAD);
        let arch = match config.kind {
            ModelKind::Mcm => Arch::Mcm(Box::new(McmLayers::new(&mut params, &config, rng)?)),
            ModelKind::Convnet => Arch::Convnet(ConvNet::new(&mut params, &config, rng)?),
            ModelKind::AttentionLstm => Arch::AttentionLstm(AttentionLstm::new(&mut params, &config, rng)),
            ModelKind::Simpleconv => Arch::Simpleconv(SimpleConv::new(&mut params, &config, rng)?),
            ModelKind::EmbeddingProbe => Arch::Probe(EmbeddingProbe::new(&mut params, &config, rng)),
        };
        Ok(Self {
            config,
            params,
            embedding,
            arch,
        })
    }

    pub fn with_embedding(config: ModelConfig, matrix: &EmbeddingMatrix, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::new(config, rng)?;
        m.set_embedding(matrix)?;
        Ok(m)
    }

    pub fn set_embedding(&mut self, matrix: &EmbeddingMatrix) -> Result<()> {
        let want = [self.config.vocab_size, self.config.embed_dim];
        if matrix.table.shape() != want {
            return Err(Error::shape("embedding", matrix.table.shape(), &want));
        }
        self.params.set(self.embedding, matrix.table.cast())
    }

    /// Same model in another precision (gradient checks run in f64).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            embedding: self.embedding,
            arch: self.arch.clone(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn mcm_layers(&self) -> Option<&McmLayers> {
        match &self.arch {
            Arch::Mcm(l) => Some(l),
            _ => None,
        }
    }

    /// Whether any layer needs at least two rows per training batch.
    pub fn uses_batch_norm(&self) -> bool {
        matches!(self.arch, Arch::Mcm(_))
    }

    /// Trainable scalars outside the embedding table.
    pub fn head_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(id, p)| *id != self.embedding && p.trainable)
            .map(|(_, p)| p.value().len())
            .sum()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, T>, indices: &[usize], mask: &SequenceMask) -> Result<ModelOutput> {
        let emb = nn::embed(ctx, self.embedding, indices, mask.batch(), mask.padded_len())?;
        let mut out = ModelOutput {
            final_probs: emb,
            learners: Vec::new(),
            attention: None,
        };
        out.final_probs = match &self.arch {
            Arch::Mcm(l) => {
                let a = l.cnn.forward(ctx, emb, mask)?;
                let b = l.stacked_lstm.forward(ctx, emb, mask)?;
                let c = l.lstm.forward(ctx, emb, mask)?;
                out.learners = vec![a, b, c];
                l.discriminator.forward(ctx, &[a.features, b.features, c.features])?
            }
            Arch::Convnet(m) => m.forward(ctx, emb, mask)?,
            Arch::AttentionLstm(m) => {
                let (p, w) = m.forward(ctx, emb, mask)?;
                out.attention = Some(w);
                p
            }
            Arch::Simpleconv(m) => m.forward(ctx, emb, mask)?,
            Arch::Probe(m) => m.forward(ctx, emb, mask)?,
        };
        Ok(out)
    }

    pub fn loss(&self, g: &mut Graph<T>, out: &ModelOutput, labels: &[usize]) -> Result<Var> {
        mcm_loss(g, out, labels, self.config.aux_weight)
    }

    /// Inference-mode probabilities of every head.
    pub fn infer(&self, indices: &[usize], mask: &SequenceMask) -> Result<Inference<T>> {
        let mut ctx = Ctx::new(&self.params, Mode::Infer, None);
        let out = self.forward(&mut ctx, indices, mask)?;
        Ok(Inference {
            final_probs: ctx.value(out.final_probs).clone(),
            aux_probs: out.learners.iter().map(|l| ctx.value(l.aux_probs).clone()).collect(),
        })
    }

    pub fn infer_batch(&self, batch: &EncodedBatch) -> Result<Inference<T>> {
        self.infer(&batch.indices, &batch.mask)
    }
}

/// `CE(final) + λ · Σ CE(aux)`. With λ = 0 the auxiliary heads are left off
/// the tape entirely, so they receive exactly zero gradient.
pub fn mcm_loss<T: Scalar>(g: &mut Graph<T>, out: &ModelOutput, labels: &[usize], lambda: f64) -> Result<Var> {
    let mut loss = g.cross_entropy(out.final_probs, labels)?;
    if lambda > 0.0 && !out.learners.is_empty() {
        let mut aux = g.cross_entropy(out.learners[0].aux_probs, labels)?;
        for l in &out.learners[1..] {
            let ce = g.cross_entropy(l.aux_probs, labels)?;
            aux = g.add(aux, ce)?;
        }
        let aux = g.scale(aux, T::from_f64_lossy(lambda))?;
        loss = g.add(loss, aux)?;
    }
    Ok(loss)
}

/// Row-wise argmax; the lowest index wins ties.
pub fn predict<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let c = probs.last_dim();
    probs
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

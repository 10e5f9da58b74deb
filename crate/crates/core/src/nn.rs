//! Layers assembled into the cascade model and the baselines.
//!
//! A layer owns [`ParamId`]s into a [`ParamStore`]; its `forward` records
//! operations on the tape held by a [`Ctx`].

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-example true lengths of a padded batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceMask {
    lengths: Vec<usize>,
    padded_len: usize,
}

impl SequenceMask {
    pub fn new(lengths: Vec<usize>, padded_len: usize) -> Result<Self> {
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > padded_len) {
            return Err(Error::Mask(format!(
                "length {bad} outside [1, {padded_len}]"
            )));
        }
        Ok(Self { lengths, padded_len })
    }

    /// Every example uses all `padded_len` steps.
    pub fn full(batch: usize, padded_len: usize) -> Self {
        Self {
            lengths: vec![padded_len; batch],
            padded_len,
        }
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn padded_len(&self) -> usize {
        self.padded_len
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        if shape.len() < 2 || shape[0] != self.lengths.len() || shape[1] != self.padded_len {
            return Err(Error::shape(
                "sequence mask",
                shape,
                &[self.lengths.len(), self.padded_len],
            ));
        }
        Ok(())
    }
}

/// Result of a backward pass through a [`Ctx`].
pub struct Step<T: Scalar> {
    pub loss: T,
    pub grads: ParamGrads<T>,
    pub buffers: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Step<T> {
    /// Writes running-statistic updates back into the store.
    pub fn apply_buffers(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, value) in self.buffers.drain(..) {
            store.set(id, value)?;
        }
        Ok(())
    }
}

/// Forward-pass context: a tape, read access to parameters, the mode, and
/// the dropout random stream.
pub struct Ctx<'p, T: Scalar> {
    pub graph: Graph<T>,
    params: &'p ParamStore<T>,
    mode: Mode,
    rng: Option<&'p mut Rng>,
    track_grads: bool,
    param_vars: Vec<Option<Var>>,
    buffers: Vec<(ParamId, Tensor<T>)>,
}

impl<'p, T: Scalar> Ctx<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode, rng: Option<&'p mut Rng>) -> Self {
        Self {
            graph: Graph::new(),
            params,
            mode,
            rng,
            track_grads: mode == Mode::Train,
            param_vars: vec![None; params.len()],
            buffers: Vec::new(),
        }
    }

    /// Inference-mode context that still records gradients (gradient checks).
    pub fn infer_with_grads(params: &'p ParamStore<T>) -> Self {
        let mut ctx = Self::new(params, Mode::Infer, None);
        ctx.track_grads = true;
        ctx
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    pub fn rng(&mut self) -> Option<&mut Rng> {
        self.rng.as_deref_mut()
    }

    /// Tape leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let p = self.params.param(id);
        let v = self
            .graph
            .leaf_shared(p.shared(), self.track_grads && p.trainable);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }

    pub(crate) fn queue_buffer(&mut self, id: ParamId, value: Tensor<T>) {
        self.buffers.push((id, value));
    }

    /// Backpropagates `loss` and collects gradients for every trainable
    /// parameter used in the forward pass (zeros where no path exists).
    pub fn backward(mut self, loss: Var) -> Result<Step<T>> {
        let loss_value = self.graph.value(loss).item();
        self.graph.backward(loss)?;
        let mut grads = ParamGrads::empty(self.params.len());
        for (idx, var) in self.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let id = ParamId(idx);
            let p = self.params.param(id);
            if !p.trainable {
                continue;
            }
            let g = match self.graph.grad(*var) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value().shape()),
            };
            grads.set(id, g);
        }
        Ok(Step {
            loss: loss_value,
            grads,
            buffers: self.buffers,
        })
    }

    /// Ends a forward-only pass, returning queued buffer updates.
    pub fn finish(self) -> Vec<(ParamId, Tensor<T>)> {
        self.buffers
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    GlorotUniform,
    Zeros,
    Constant(f64),
}

pub(crate) fn init_tensor<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, init: Init, rng: &mut Rng) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Constant(c) => Tensor::full(shape, T::from_f64_lossy(c)),
        Init::GlorotUniform => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64_lossy(rng.uniform(-limit, limit))).collect();
            Tensor::new(shape, data).expect("length matches shape")
        }
    }
}

/// Fully connected layer `x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(&[inputs, outputs], inputs, outputs, init, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.value(x).shape();
        if shape.len() != 2 || shape[1] != self.inputs {
            return Err(Error::shape("dense", shape, &[self.inputs, self.outputs]));
        }
        let (w, b) = (ctx.param(self.weight), ctx.param(self.bias));
        let xw = ctx.graph.matmul(x, w)?;
        ctx.graph.add_bias(xw, b)
    }
}

/// Stride-1 one-dimensional convolution with "same" padding. Weights are
/// stored window-major as `[kernel * in_channels, filters]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub filters: usize,
}

impl Conv1d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        in_channels: usize,
        filters: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel == 0 || filters == 0 || in_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d needs kernel, filters and channels > 0 (got {kernel}, {filters}, {in_channels})"
            )));
        }
        let fan_in = kernel * in_channels;
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(&[fan_in, filters], fan_in, kernel * filters, init, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[filters]), true);
        Ok(Self {
            weight,
            bias,
            kernel,
            in_channels,
            filters,
        })
    }

    /// `x[B, L, D] -> [B, L, F]`. With a mask, positions at or beyond each
    /// sequence's length read as zero padding.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, mask: Option<&SequenceMask>) -> Result<Var> {
        let shape = ctx.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.in_channels {
            return Err(Error::shape("conv1d", &shape, &[self.in_channels]));
        }
        if let Some(m) = mask {
            m.check(&shape)?;
        }
        let (b, l) = (shape[0], shape[1]);
        let cols = ctx.graph.im2col(x, self.kernel, mask.map(|m| m.lengths()))?;
        let (w, bias) = (ctx.param(self.weight), ctx.param(self.bias));
        let y = ctx.graph.matmul(cols, w)?;
        let y = ctx.graph.add_bias(y, bias)?;
        ctx.graph.reshape(y, &[b, l, self.filters])
    }
}

/// Long short-term memory layer with sigmoid gates and tanh squashing.
/// Gate blocks are laid out `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_weight: ParamId,
    pub recurrent_weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub units: usize,
}

impl Lstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        units: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let g = 4 * units;
        let input_weight = store.add(
            format!("{name}.input_weight"),
            init_tensor(&[inputs, g], inputs, g, init, rng),
            true,
        );
        let recurrent_weight = store.add(
            format!("{name}.recurrent_weight"),
            init_tensor(&[units, g], units, g, init, rng),
            true,
        );
        let mut bias = Tensor::zeros(&[g]);
        if init != Init::Zeros {
            // forget gate starts open
            bias.data_mut()[units..2 * units].fill(T::one());
        }
        let bias = store.add(format!("{name}.bias"), bias, true);
        Self {
            input_weight,
            recurrent_weight,
            bias,
            inputs,
            units,
        }
    }

    /// Runs the recurrence over `x[B, L, D]`. Past an example's length its
    /// state is carried unchanged, so the final state is the state at the
    /// last true token. Returns `[B, L, U]` or, without `return_sequence`,
    /// `[B, U]`.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        mask: &SequenceMask,
        return_sequence: bool,
    ) -> Result<Var> {
        let shape = ctx.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.inputs {
            return Err(Error::shape("lstm", &shape, &[self.inputs, self.units]));
        }
        mask.check(&shape)?;
        let (b, l, d, u) = (shape[0], shape[1], shape[2], self.units);
        let (wx, wh, bias) = (
            ctx.param(self.input_weight),
            ctx.param(self.recurrent_weight),
            ctx.param(self.bias),
        );
        let g = &mut ctx.graph;
        let flat = g.reshape(x, &[b * l, d])?;
        let xw = g.matmul(flat, wx)?;
        let xw = g.add_bias(xw, bias)?;
        let xw = g.reshape(xw, &[b, l, 4 * u])?;

        let mut h = g.constant(Tensor::zeros(&[b, u]));
        let mut c = g.constant(Tensor::zeros(&[b, u]));
        let mut outputs = Vec::with_capacity(l);
        for t in 0..l {
            let active: Vec<bool> = mask.lengths().iter().map(|&len| t < len).collect();
            let n_active = active.iter().filter(|&&a| a).count();
            if n_active == 0 {
                outputs.push(h);
                continue;
            }
            let mut z = g.slice_time(xw, t)?;
            if t > 0 {
                let hw = g.matmul(h, wh)?;
                z = g.add(z, hw)?;
            }
            let i = g.slice_cols(z, 0, u)?;
            let i = g.sigmoid(i)?;
            let f = g.slice_cols(z, u, 2 * u)?;
            let f = g.sigmoid(f)?;
            let cand = g.slice_cols(z, 2 * u, 3 * u)?;
            let cand = g.tanh(cand)?;
            let o = g.slice_cols(z, 3 * u, 4 * u)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            let c_new = g.add(keep, write)?;
            let squashed = g.tanh(c_new)?;
            let h_new = g.mul(o, squashed)?;
            if n_active == b {
                h = h_new;
                c = c_new;
            } else {
                h = g.select_rows(h_new, h, &active)?;
                c = g.select_rows(c_new, c, &active)?;
            }
            outputs.push(h);
        }
        if return_sequence {
            g.stack_time(&outputs)
        } else {
            Ok(h)
        }
    }
}

/// Batch normalization over the feature axis of `[B, F]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub features: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.9;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[features], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]), true),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[features])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[features], T::one())),
            features,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    /// Training mode normalizes with batch statistics and queues a running
    /// average update; inference mode uses the running statistics.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        let eps = T::from_f64_lossy(self.eps);
        match ctx.mode() {
            Mode::Train => {
                let (y, mean, var) = ctx.graph.batch_norm(x, gamma, beta, eps, None)?;
                let mom = T::from_f64_lossy(self.momentum);
                let blend = |running: &Tensor<T>, batch: &[T]| -> Tensor<T> {
                    let data = running
                        .data()
                        .iter()
                        .zip(batch)
                        .map(|(&r, &b)| mom * r + (T::one() - mom) * b)
                        .collect();
                    Tensor::new(running.shape(), data).expect("same length")
                };
                let rm = blend(ctx.params().get(self.running_mean), &mean);
                let rv = blend(ctx.params().get(self.running_var), &var);
                ctx.queue_buffer(self.running_mean, rm);
                ctx.queue_buffer(self.running_var, rv);
                Ok(y)
            }
            Mode::Infer => {
                let params = ctx.params;
                let mean = params.get(self.running_mean).data();
                let var = params.get(self.running_var).data();
                let (y, _, _) = ctx.graph.batch_norm(x, gamma, beta, eps, Some((mean, var)))?;
                Ok(y)
            }
        }
    }
}

/// Inverted dropout. Identity in inference mode or at rate 0.
pub fn dropout<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, rate: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if ctx.mode() == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let n = ctx.value(x).len();
    let rng = ctx
        .rng()
        .ok_or_else(|| Error::InvalidArgument("training-mode dropout needs a random stream".into()))?;
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let factor: Vec<T> = (0..n)
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    ctx.graph.mul_const(x, factor)
}

/// Additive attention over time: `score_t = v · tanh(W h_t + b)`, softmax over
/// unmasked steps, weighted sum of the hidden states.
#[derive(Clone, Debug)]
pub struct Attention {
    pub proj: Dense,
    pub context: ParamId,
    pub hidden: usize,
}

impl Attention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let proj = Dense::new(store, &format!("{name}.proj"), inputs, hidden, Init::GlorotUniform, rng);
        let context = store.add(
            format!("{name}.context"),
            init_tensor(&[hidden, 1], hidden, 1, Init::GlorotUniform, rng),
            true,
        );
        Self { proj, context, hidden }
    }

    /// Returns `(context vector [B, U], attention weights [B, L])`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, h: Var, mask: &SequenceMask) -> Result<(Var, Var)> {
        let shape = ctx.value(h).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape("attention", &shape, &[self.hidden]));
        }
        mask.check(&shape)?;
        let (b, l, u) = (shape[0], shape[1], shape[2]);
        let flat = ctx.graph.reshape(h, &[b * l, u])?;
        let proj = self.proj.forward(ctx, flat)?;
        let proj = ctx.graph.tanh(proj)?;
        let v = ctx.param(self.context);
        let scores = ctx.graph.matmul(proj, v)?;
        let scores = ctx.graph.reshape(scores, &[b, l])?;
        let weights = ctx.graph.masked_softmax(scores, mask.lengths())?;
        let out = ctx.graph.weighted_sum_time(h, weights)?;
        Ok((out, weights))
    }
}

/// Table lookup `indices[B, L] -> [B, L, d]`. The padding row receives no
/// gradient.
pub fn embed<T: Scalar>(ctx: &mut Ctx<'_, T>, table: ParamId, indices: &[usize], batch: usize, len: usize) -> Result<Var> {
    if indices.len() != batch * len {
        return Err(Error::shape("embed", &[indices.len()], &[batch, len]));
    }
    let frozen = ctx.params().param(table).frozen_row;
    let t = ctx.param(table);
    let d = ctx.value(t).last_dim();
    let rows = ctx.graph.gather(t, indices, frozen)?;
    ctx.graph.reshape(rows, &[batch, len, d])
}

pub fn global_max_pool<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, mask: &SequenceMask) -> Result<Var> {
    mask.check(ctx.value(x).shape())?;
    ctx.graph.global_max_pool(x, mask.lengths())
}

pub fn global_avg_pool<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, mask: &SequenceMask) -> Result<Var> {
    mask.check(ctx.value(x).shape())?;
    ctx.graph.global_avg_pool(x, mask.lengths())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn infer_ctx(store: &ParamStore<f64>) -> Ctx<'_, f64> {
        Ctx::new(store, Mode::Infer, None)
    }

    #[test]
    fn conv_k1_identity_filter() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0, Stream::Init);
        let conv = Conv1d::new(&mut store, "c", 1, 1, 1, Init::Zeros, &mut rng).unwrap();
        store.set(conv.weight, t(&[1, 1], &[1.0])).unwrap();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
        let y = conv.forward(&mut ctx, x, None).unwrap();
        assert_eq!(ctx.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_k2_right_padding() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0, Stream::Init);
        let conv = Conv1d::new(&mut store, "c", 2, 1, 1, Init::Zeros, &mut rng).unwrap();
        store.set(conv.weight, t(&[2, 1], &[1.0, 1.0])).unwrap();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
        let y = conv.forward(&mut ctx, x, None).unwrap();
        // out[t] = x[t] + x[t+1], zero beyond the end
        assert_eq!(ctx.value(y).data(), &[3.0, 5.0, 3.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0, Stream::Init);
        let conv = Conv1d::new(&mut store, "c", 1, 3, 2, Init::GlorotUniform, &mut rng).unwrap();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(Tensor::zeros(&[1, 4, 5]));
        assert!(matches!(conv.forward(&mut ctx, x, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn same_padding_preserves_length() {
        for k in 1..=3 {
            let mut store = ParamStore::<f64>::new();
            let mut rng = Rng::new(k as u64, Stream::Init);
            let conv = Conv1d::new(&mut store, "c", k, 2, 3, Init::GlorotUniform, &mut rng).unwrap();
            let mut ctx = infer_ctx(&store);
            let x = ctx.graph.constant(Tensor::full(&[2, 7, 2], 0.5));
            let y = conv.forward(&mut ctx, x, None).unwrap();
            assert_eq!(ctx.value(y).shape(), &[2, 7, 3]);
        }
    }

    #[test]
    fn lstm_zero_weights_give_zero_output() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0, Stream::Init);
        let lstm = Lstm::new(&mut store, "l", 3, 4, Init::Zeros, &mut rng);
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(Tensor::full(&[2, 5, 3], 0.7));
        let mask = SequenceMask::new(vec![5, 2], 5).unwrap();
        let y = lstm.forward(&mut ctx, x, &mask, true).unwrap();
        assert!(ctx.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_two_step_manual_recurrence() {
        // B=1, L=2, D=1, U=1; gate weights wx=[a_i, a_f, a_g, a_o],
        // recurrent wh=[r_i, r_f, r_g, r_o], bias bb.
        let wx = [0.5, -0.3, 0.8, 0.2];
        let wh = [0.1, 0.4, -0.6, 0.3];
        let bb = [0.0, 1.0, 0.1, -0.1];
        let xs = [1.0, -2.0];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for &x in &xs {
            let z: Vec<f64> = (0..4).map(|j| wx[j] * x + wh[j] * h + bb[j]).collect();
            let (i, f, g, o) = (sig(z[0]), sig(z[1]), z[2].tanh(), sig(z[3]));
            c = f * c + i * g;
            h = o * c.tanh();
        }

        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0, Stream::Init);
        let lstm = Lstm::new(&mut store, "l", 1, 1, Init::Zeros, &mut rng);
        store.set(lstm.input_weight, t(&[1, 4], &wx)).unwrap();
        store.set(lstm.recurrent_weight, t(&[1, 4], &wh)).unwrap();
        store.set(lstm.bias, t(&[4], &bb)).unwrap();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(t(&[1, 2, 1], &xs));
        let y = lstm.forward(&mut ctx, x, &SequenceMask::full(1, 2), false).unwrap();
        assert!((ctx.value(y).item() - h).abs() < 1e-12, "{} vs {h}", ctx.value(y).item());
    }

    #[test]
    fn lstm_last_state_is_at_last_true_token() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(3, Stream::Init);
        let lstm = Lstm::new(&mut store, "l", 2, 3, Init::GlorotUniform, &mut rng);
        let data: Vec<f64> = (0..12).map(|v| (v as f64 * 0.37).sin()).collect();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(t(&[2, 3, 2], &data));
        let mask = SequenceMask::new(vec![2, 3], 3).unwrap();
        let seq = lstm.forward(&mut ctx, x, &mask, true).unwrap();
        let last = lstm.forward(&mut ctx, x, &mask, false).unwrap();
        let seq_v = ctx.value(seq).clone();
        let last_v = ctx.value(last).clone();
        // example 0: state at t=1; example 1: state at t=2
        assert_eq!(&seq_v.data()[3..6], &last_v.data()[0..3]);
        assert_eq!(&seq_v.data()[9 + 6..9 + 9], &last_v.data()[3..6]);
    }

    #[test]
    fn lstm_rejects_bad_mask() {
        assert!(SequenceMask::new(vec![0, 2], 3).is_err());
        assert!(SequenceMask::new(vec![4], 3).is_err());
    }

    #[test]
    fn lstm_is_causal() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(9, Stream::Init);
        let lstm = Lstm::new(&mut store, "l", 2, 3, Init::GlorotUniform, &mut rng);
        let base: Vec<f64> = (0..8).map(|v| (v as f64).cos()).collect();
        let mut perturbed = base.clone();
        perturbed[6] += 5.0; // token t=3
        let run = |data: &[f64]| {
            let mut ctx = infer_ctx(&store);
            let x = ctx.graph.constant(t(&[1, 4, 2], data));
            let y = lstm.forward(&mut ctx, x, &SequenceMask::full(1, 4), true).unwrap();
            ctx.value(y).clone()
        };
        let (a, b) = (run(&base), run(&perturbed));
        assert_eq!(&a.data()[..9], &b.data()[..9]);
        assert_ne!(&a.data()[9..], &b.data()[9..]);
    }

    #[test]
    fn pooling_examples() {
        let store = ParamStore::<f64>::new();
        let mut ctx = infer_ctx(&store);
        // one example, L=2, F=2: rows [1,5] and [3,2]
        let x = ctx.graph.constant(t(&[1, 2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let full = SequenceMask::full(1, 2);
        let mx = global_max_pool(&mut ctx, x, &full).unwrap();
        let av = global_avg_pool(&mut ctx, x, &full).unwrap();
        assert_eq!(ctx.value(mx).data(), &[3.0, 5.0]);
        assert_eq!(ctx.value(av).data(), &[2.0, 3.5]);
        let one = SequenceMask::new(vec![1], 2).unwrap();
        let mx1 = global_max_pool(&mut ctx, x, &one).unwrap();
        let av1 = global_avg_pool(&mut ctx, x, &one).unwrap();
        assert_eq!(ctx.value(mx1).data(), &[1.0, 5.0]);
        assert_eq!(ctx.value(av1).data(), &[1.0, 5.0]);
        let c = ctx.graph.constant(Tensor::full(&[1, 3, 2], 4.0));
        let m3 = SequenceMask::full(1, 3);
        let cm = global_max_pool(&mut ctx, c, &m3).unwrap();
        let ca = global_avg_pool(&mut ctx, c, &m3).unwrap();
        assert_eq!(ctx.value(cm).data(), &[4.0, 4.0]);
        assert_eq!(ctx.value(ca).data(), &[4.0, 4.0]);
    }

    #[test]
    fn fully_masked_pool_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 1]));
        assert!(g.global_max_pool(x, &[0]).is_err());
        assert!(g.global_avg_pool(x, &[0]).is_err());
    }

    #[test]
    fn max_pool_gradient_goes_to_first_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 3, 1], &[2.0, 2.0, 1.0]), true);
        let p = g.global_max_pool(x, &[3]).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_modes() {
        let store = ParamStore::<f64>::new();
        let mut rng = Rng::new(1, Stream::Dropout);
        let mut ctx = Ctx::new(&store, Mode::Train, Some(&mut rng));
        let x = ctx.graph.constant(Tensor::full(&[4, 4], 1.0));
        let y = dropout(&mut ctx, x, 0.0).unwrap();
        assert_eq!(y, x);
        assert!(dropout(&mut ctx, x, 1.0).is_err());
        let mut ictx = infer_ctx(&store);
        let xi = ictx.graph.constant(Tensor::full(&[4, 4], 1.0));
        assert_eq!(dropout(&mut ictx, xi, 0.5).unwrap(), xi);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let store = ParamStore::<f32>::new();
        let mut rng = Rng::new(11, Stream::Dropout);
        let mut ctx = Ctx::new(&store, Mode::Train, Some(&mut rng));
        let n = 100_000;
        let x = ctx.graph.constant(Tensor::full(&[n], 1.0f32));
        let y = dropout(&mut ctx, x, 0.5).unwrap();
        let mean: f64 = ctx.value(y).data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        // each output is 0 or 2: sd of the mean is 1/sqrt(n)
        let sigma = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn batchnorm_examples() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let mut rng = Rng::new(0, Stream::Dropout);
        let mut ctx = Ctx::new(&store, Mode::Train, Some(&mut rng));
        let x = ctx.graph.constant(t(&[2, 1], &[1.0, 3.0]));
        let y = bn.forward(&mut ctx, x).unwrap();
        let v = ctx.value(y).data().to_vec();
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4, "{v:?}");
        let c = ctx.graph.constant(Tensor::full(&[3, 1], 2.5));
        let yc = bn.forward(&mut ctx, c).unwrap();
        assert!(ctx.value(yc).data().iter().all(|&v| v.abs() < 1e-9));
        let one = ctx.graph.constant(Tensor::full(&[1, 1], 2.5));
        assert!(bn.forward(&mut ctx, one).is_err());

        // running mean 0, var 1 at inference: identity up to eps
        let mut ictx = infer_ctx(&store);
        let xi = ictx.graph.constant(t(&[2, 1], &[0.3, -4.0]));
        let yi = bn.forward(&mut ictx, xi).unwrap();
        let scale = 1.0 / (1.0 + BatchNorm::EPS).sqrt();
        assert!((ictx.value(yi).data()[1] + 4.0 * scale).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_normalizes_large_batches() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let mut rng = Rng::new(4, Stream::Init);
        let data: Vec<f64> = (0..48).map(|_| rng.uniform(-3.0, 7.0)).collect();
        let mut ctx = Ctx::new(&store, Mode::Train, Some(&mut rng));
        let x = ctx.graph.constant(t(&[16, 3], &data));
        let y = bn.forward(&mut ctx, x).unwrap();
        let v = ctx.value(y).clone();
        for j in 0..3 {
            let col: Vec<f64> = (0..16).map(|i| v.at2(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-3 && (var - 1.0).abs() < 1e-3);
        }
        let updates = ctx.finish();
        assert_eq!(updates.len(), 2);
    }

    #[test]
    fn dense_examples() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0, Stream::Init);
        let dense = Dense::new(&mut store, "d", 2, 1, Init::Zeros, &mut rng);
        store.set(dense.weight, t(&[2, 1], &[1.0, 1.0])).unwrap();
        store.set(dense.bias, t(&[1], &[0.5])).unwrap();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(t(&[1, 2], &[1.0, 2.0]));
        let y = dense.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[3.5]);
        let bad = ctx.graph.constant(Tensor::zeros(&[1, 3]));
        assert!(dense.forward(&mut ctx, bad).is_err());

        let mut store = ParamStore::<f64>::new();
        let ident = Dense::new(&mut store, "i", 3, 3, Init::Zeros, &mut rng);
        store.set(ident.weight, Tensor::eye(3)).unwrap();
        let mut ctx = infer_ctx(&store);
        let x = ctx.graph.constant(t(&[1, 3], &[1.0, -2.0, 3.0]));
        let y = ident.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn attention_weights_sum_to_one_over_unmasked() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(5, Stream::Init);
        let att = Attention::new(&mut store, "a", 3, 4, &mut rng);
        let data: Vec<f64> = (0..2 * 4 * 3).map(|v| (v as f64 * 0.3).sin()).collect();
        let mut ctx = infer_ctx(&store);
        let h = ctx.graph.constant(t(&[2, 4, 3], &data));
        let mask = SequenceMask::new(vec![4, 2], 4).unwrap();
        let (_, w) = att.forward(&mut ctx, h, &mask).unwrap();
        let w = ctx.value(w);
        let s0: f64 = w.row(0).iter().sum();
        let s1: f64 = w.row(1)[..2].iter().sum();
        assert!((s0 - 1.0).abs() < 1e-6 && (s1 - 1.0).abs() < 1e-6);
        assert_eq!(&w.row(1)[2..], &[0.0, 0.0]);
    }
}

//! Gradient-descent optimizers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected adam|sgd)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: Adam keeps first/second moment buffers per parameter,
/// plain SGD keeps none.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Scalar> {
    pub kind: OptimizerKind,
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, config: AdamConfig) -> Self {
        Self {
            kind,
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn adam(config: AdamConfig) -> Self {
        Self::new(OptimizerKind::Adam, config)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moments of a parameter, once it has been updated.
    pub fn moments(&self, index: usize) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(index)?.as_ref().map(|(m, v)| (m, v))
    }

    pub(crate) fn restore(&mut self, step: u64, moments: Vec<Option<(Tensor<T>, Tensor<T>)>>) {
        self.step = step;
        self.moments = moments;
    }

    /// Applies one update to every trainable parameter and consumes the
    /// gradients. Rows flagged as frozen are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: ParamGrads<T>) -> Result<()> {
        for (id, p) in store.iter() {
            if p.trainable && grads.get(id).is_none() {
                return Err(Error::MissingGradient(p.name.clone()));
            }
        }
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        let c = self.config;
        let lr = T::from_f64_lossy(c.lr);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let eps = T::from_f64_lossy(c.eps);
        let t = self.step as i32;
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (trainable, frozen_row) = {
                let p = store.param(id);
                (p.trainable, p.frozen_row)
            };
            if !trainable {
                continue;
            }
            let g = grads.get(id).expect("checked above");
            let width = g.last_dim();
            let skip = |j: usize| frozen_row.is_some_and(|r| j / width == r);
            match self.kind {
                OptimizerKind::Sgd => {
                    let w = store.get_mut(id);
                    for (j, (wv, &gv)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
                        if !skip(j) {
                            *wv -= lr * gv;
                        }
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self.moments[id.index()]
                        .get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
                    let w = store.get_mut(id);
                    for (j, ((wv, &gv), (mv, vv))) in w
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                        .enumerate()
                    {
                        if skip(j) {
                            continue;
                        }
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let mhat = *mv / corr1;
                        let vhat = *vv / corr2;
                        *wv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore<f64>, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v), true);
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = one_param(0.5);
        let mut opt = Optimizer::adam(AdamConfig::default());
        let mut g = ParamGrads::empty(1);
        g.set(id, Tensor::scalar(0.0));
        opt.step(&mut s, g).unwrap();
        assert_eq!(s.get(id).item(), 0.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε).
        let (mut s, id) = one_param(1.0);
        let mut opt = Optimizer::adam(AdamConfig::default());
        let mut g = ParamGrads::empty(1);
        g.set(id, Tensor::scalar(0.1));
        opt.step(&mut s, g).unwrap();
        let expected = 1.0 - 0.002 * 0.1 / (0.1 + 1e-8);
        assert!((s.get(id).item() - expected).abs() < 1e-12);
        assert!((s.get(id).item() - (1.0 - 0.002)).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = one_param(1.0);
        let mut opt = Optimizer::adam(AdamConfig::default());
        let err = opt.step(&mut s, ParamGrads::empty(1)).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "w"));
    }

    #[test]
    fn frozen_row_is_never_updated() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("emb", Tensor::from_f64(&[2, 2], &[0.0, 0.0, 1.0, 1.0]).unwrap(), true);
        s.param_mut(id).frozen_row = Some(0);
        let mut opt = Optimizer::adam(AdamConfig::default());
        for _ in 0..3 {
            let mut g = ParamGrads::empty(1);
            g.set(id, Tensor::from_f64(&[2, 2], &[1.0, 1.0, 1.0, 1.0]).unwrap());
            opt.step(&mut s, g).unwrap();
        }
        assert_eq!(&s.get(id).data()[..2], &[0.0, 0.0]);
        assert!(s.get(id).data()[2] < 1.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let (mut s, id) = one_param(0.3);
            let mut opt = Optimizer::<f64>::adam(AdamConfig::default());
            for k in 0..20 {
                let mut g = ParamGrads::empty(1);
                g.set(id, Tensor::scalar((k as f64 * 0.7).sin()));
                opt.step(&mut s, g).unwrap();
            }
            s.get(id).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}

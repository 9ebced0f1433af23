use std::collections::HashMap;

use super::params::{BnUpdate, ModelParameters, Network, LEAKY_SLOPE};
use crate::autodiff::{Gradients, NormMode, Padding};
use crate::{Error, Float, Result, Tape, Tensor, Var};

/// Normalization epsilon.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics; running statistics updates are collected.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// A tape plus lazily bound parameters.
///
/// Parameters of the networks listed in `grad_for` become gradient leaves;
/// all others enter the tape as constants.
pub struct Session<'p, T> {
    pub tape: Tape<T>,
    params: &'p ModelParameters<T>,
    phase: Phase,
    grad_for: Vec<Network>,
    bound: HashMap<usize, Var>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'p, T: Float> Session<'p, T> {
    pub fn new(params: &'p ModelParameters<T>, phase: Phase, grad_for: &[Network]) -> Self {
        Self {
            tape: Tape::new(),
            params,
            phase,
            grad_for: grad_for.to_vec(),
            bound: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn params(&self) -> &'p ModelParameters<T> {
        self.params
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    /// The tape handle of a parameter, binding it on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self.params.index_of(name)?;
        if let Some(&v) = self.bound.get(&i) {
            return Ok(v);
        }
        let spec = &self.params.specs()[i];
        let grad = spec.trainable() && self.grad_for.contains(&spec.network);
        let v = self.tape.leaf(self.params.value(i).clone(), grad);
        self.bound.insert(i, v);
        Ok(v)
    }

    /// Gradients of `network`'s trainable entries, aligned with
    /// [`ModelParameters::trainable_indices`]; unused entries get zeros.
    pub fn param_grads(&self, grads: &mut Gradients<T>, network: Network) -> Vec<Tensor<T>> {
        self.params
            .trainable_indices(network)
            .into_iter()
            .map(|i| {
                self.bound
                    .get(&i)
                    .and_then(|&v| grads.take(v))
                    .unwrap_or_else(|| Tensor::zeros(self.params.value(i).shape()))
            })
            .collect()
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate<T>> {
        self.bn_updates
    }

    pub fn conv(&mut self, x: Var, layer: &str, stride: usize, transpose: bool) -> Result<Var> {
        let w = self.param(&format!("{layer}.w"))?;
        let b = self.param(&format!("{layer}.b"))?;
        if transpose {
            self.tape.conv_transpose2d(x, w, Some(b), stride)
        } else {
            self.tape.conv2d(x, w, Some(b), stride, Padding::Same)
        }
    }

    pub fn batch_norm(&mut self, x: Var, layer: &str) -> Result<Var> {
        let gamma = self.param(&format!("{layer}.bn.gamma"))?;
        let beta = self.param(&format!("{layer}.bn.beta"))?;
        let mi = self.params.index_of(&format!("{layer}.bn.mean"))?;
        let vi = self.params.index_of(&format!("{layer}.bn.var"))?;
        let params = self.params;
        let mode = match self.phase {
            Phase::Train => NormMode::Train,
            Phase::Eval => NormMode::Eval {
                mean: params.value(mi).data(),
                var: params.value(vi).data(),
            },
        };
        let (y, stats) = self.tape.batch_norm(x, gamma, beta, T::lit(BN_EPS), mode)?;
        if let Some(stats) = stats {
            self.bn_updates.push(BnUpdate {
                mean_index: mi,
                var_index: vi,
                stats,
            });
        }
        Ok(y)
    }

    /// Convolution, batch normalization, LeakyReLU.
    pub fn cbl(&mut self, x: Var, layer: &str, stride: usize, transpose: bool) -> Result<Var> {
        let y = self.conv(x, layer, stride, transpose)?;
        let y = self.batch_norm(y, layer)?;
        Ok(self.tape.leaky_relu(y, T::lit(LEAKY_SLOPE)))
    }

    pub fn dense(&mut self, x: Var, layer: &str) -> Result<Var> {
        let w = self.param(&format!("{layer}.w"))?;
        let b = self.param(&format!("{layer}.b"))?;
        self.tape.dense(x, w, b)
    }

    pub(crate) fn check_shape(&self, a: Var, b: Var, what: impl FnOnce() -> String) -> Result<()> {
        let (sa, sb) = (self.tape.value(a).shape(), self.tape.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op: "scae_forward",
                detail: format!("{}: {sa:?} vs {sb:?}", what()),
            });
        }
        Ok(())
    }
}

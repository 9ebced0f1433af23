//! Generator and discriminator networks.
//!
//! Every convolution is followed by batch normalization and LeakyReLU (a
//! "CBL") except the final 1-channel convolution of each autoencoder, which
//! is linear and zero-initialized so a fresh generator is the identity map.
//!
//! Parameters live in one [`ModelParameters`] store. A forward pass runs in a
//! [`Session`], which binds parameters onto a tape as they are used.

mod checkpoint;
mod config;
mod count;
mod network;
mod params;
mod session;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC, OPTIMIZER_PREFIX};
pub use config::{doubling_schedule, Ablation, SgConfig, NUM_SCAE};
pub use count::{conv_params, count_params, ParamCount};
pub use network::{
    decoder_forward, discriminator_forward, encoder_forward, rirb_forward, scae_forward, sg_forward, ScaeCache,
};
pub use params::{
    discriminator_specs, generator_specs, model_specs, BnUpdate, Init, ModelParameters, Network, ParamRole, ParamSpec,
    Registry, LEAKY_SLOPE,
};
pub use session::{Phase, Session, BN_EPS};

use std::collections::BTreeMap;

use crate::{Error, Float, Result, Tensor};

/// Architecture plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    config: SgConfig,
    params: ModelParameters<T>,
}

impl<T: Float> Model<T> {
    pub fn new(config: SgConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParameters::init(model_specs(&config), seed)?;
        Ok(Self { config, params })
    }

    /// Checks that `params` follows the registry of `config`.
    pub fn from_parameters(config: SgConfig, params: ModelParameters<T>) -> Result<Self> {
        config.validate()?;
        let expected = model_specs(&config);
        let ok = expected.len() == params.len()
            && expected
                .iter()
                .zip(params.specs())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !ok {
            return Err(Error::InvalidArgument(
                "parameters do not match the configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SgConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters<T> {
        &mut self.params
    }

    /// Eval-mode generator output for a `[B, 1, H, W]` batch.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.params, Phase::Eval, &[]);
        let x = s.input(x.clone());
        let y = sg_forward(&mut s, x, &self.config)?;
        Ok(s.tape.value(y).clone())
    }

    /// Eval-mode discriminator probabilities `[B, 1]`.
    pub fn discriminate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.params, Phase::Eval, &[]);
        let x = s.input(x.clone());
        let y = discriminator_forward(&mut s, x, &self.config)?;
        Ok(s.tape.value(y).clone())
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Archive of the weights plus caller-supplied state and optimizer tensors
    /// (whose names must start with [`OPTIMIZER_PREFIX`]).
    pub fn to_checkpoint(&self, state: serde_json::Value, extra: BTreeMap<String, Tensor<f32>>) -> Result<Checkpoint> {
        let mut tensors = extra;
        if let Some(name) = tensors.keys().find(|n| !n.starts_with(OPTIMIZER_PREFIX)) {
            return Err(Error::Checkpoint(format!(
                "extra tensor {name} lacks the {OPTIMIZER_PREFIX} prefix"
            )));
        }
        for (spec, v) in self.params.specs().iter().zip(self.params.values()) {
            tensors.insert(spec.name.clone(), v.cast());
        }
        Ok(Checkpoint {
            config: self.config.clone(),
            state,
            tensors,
        })
    }

    /// Rebuilds a model, requiring every registry entry with its exact shape
    /// and rejecting unknown weight names.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let specs = model_specs(&ck.config);
        let mut values = Vec::with_capacity(specs.len());
        for s in &specs {
            let t = ck
                .tensors
                .get(&s.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", s.name)))?;
            if t.shape() != s.shape {
                return Err(Error::Checkpoint(format!(
                    "{}: stored shape {:?}, configuration needs {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            values.push(t.cast());
        }
        let known = specs.len() + ck.tensors.keys().filter(|n| n.starts_with(OPTIMIZER_PREFIX)).count();
        if known != ck.tensors.len() {
            let unknown = ck
                .tensors
                .keys()
                .find(|n| !n.starts_with(OPTIMIZER_PREFIX) && !specs.iter().any(|s| &s.name == *n))
                .expect("some name is unknown");
            return Err(Error::Checkpoint(format!("unexpected tensor {unknown}")));
        }
        let params = ModelParameters::from_values(specs, values)?;
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        Ok(Self {
            config: ck.config.clone(),
            params,
        })
    }
}

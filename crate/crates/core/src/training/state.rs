use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::model::{Checkpoint, Model, ModelParameters, Network, OPTIMIZER_PREFIX};
use crate::{AdamState, Error, Result, Tensor};

/// Counter of consecutive strict validation-NMSE increases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: u32,
    pub previous: Option<f64>,
    pub increases: u32,
    pub stopped: bool,
}

impl EarlyStop {
    pub fn new(patience: u32) -> Self {
        Self {
            patience,
            previous: None,
            increases: 0,
            stopped: false,
        }
    }

    /// Records one validation score; returns whether training should stop.
    pub fn update(&mut self, nmse: f64) -> bool {
        match self.previous {
            Some(prev) if nmse > prev => self.increases += 1,
            _ => self.increases = 0,
        }
        self.previous = Some(nmse);
        if self.increases >= self.patience {
            self.stopped = true;
        }
        self.stopped
    }
}

/// Functional form of [`EarlyStop::update`].
pub fn early_stop_update(mut state: EarlyStop, nmse: f64) -> EarlyStop {
    state.update(nmse);
    state
}

/// Mutable progress of a run, excluding the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub g_adam: AdamState<f32>,
    pub d_adam: AdamState<f32>,
    pub best_val_nmse: Option<f64>,
    pub best_epoch: Option<u64>,
    pub early_stop: EarlyStop,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRecord {
    epoch: u64,
    step: u64,
    g_adam_t: u64,
    d_adam_t: u64,
    best_val_nmse: Option<f64>,
    best_epoch: Option<u64>,
    early_stop: EarlyStop,
    train_config: TrainConfig,
}

fn adam_for(params: &ModelParameters<f32>, network: Network, cfg: &TrainConfig) -> AdamState<f32> {
    let idx = params.trainable_indices(network);
    AdamState::new(
        idx.iter().map(|&i| params.value(i).shape()),
        cfg.adam_beta1 as f32,
        cfg.adam_beta2 as f32,
        cfg.adam_eps as f32,
    )
}

fn tag(network: Network) -> &'static str {
    match network {
        Network::Generator => "g",
        Network::Discriminator => "d",
    }
}

impl TrainState {
    pub fn new(params: &ModelParameters<f32>, cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            step: 0,
            g_adam: adam_for(params, Network::Generator, cfg),
            d_adam: adam_for(params, Network::Discriminator, cfg),
            best_val_nmse: None,
            best_epoch: None,
            early_stop: EarlyStop::new(cfg.patience),
        }
    }

    pub fn adam(&self, network: Network) -> &AdamState<f32> {
        match network {
            Network::Generator => &self.g_adam,
            Network::Discriminator => &self.d_adam,
        }
    }

    /// Archive holding the weights, the optimizer moments and this state.
    pub fn to_checkpoint(&self, model: &Model<f32>, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut extra = BTreeMap::new();
        for network in [Network::Generator, Network::Discriminator] {
            let adam = self.adam(network);
            let idx = model.params().trainable_indices(network);
            for (k, &i) in idx.iter().enumerate() {
                let name = &model.params().specs()[i].name;
                extra.insert(
                    format!("{OPTIMIZER_PREFIX}{}.m.{name}", tag(network)),
                    adam.m[k].clone(),
                );
                extra.insert(
                    format!("{OPTIMIZER_PREFIX}{}.v.{name}", tag(network)),
                    adam.v[k].clone(),
                );
            }
        }
        let record = StateRecord {
            epoch: self.epoch,
            step: self.step,
            g_adam_t: self.g_adam.t,
            d_adam_t: self.d_adam.t,
            best_val_nmse: self.best_val_nmse,
            best_epoch: self.best_epoch,
            early_stop: self.early_stop,
            train_config: cfg.clone(),
        };
        model.to_checkpoint(serde_json::to_value(record)?, extra)
    }

    /// Restores model, configuration and state from an archive written by
    /// [`TrainState::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model<f32>, TrainConfig, Self)> {
        let model = Model::from_checkpoint(ck)?;
        let record: StateRecord =
            serde_json::from_value(ck.state.clone()).map_err(|e| Error::Checkpoint(format!("training state: {e}")))?;
        let cfg = record.train_config;
        if cfg.model != *model.config() {
            return Err(Error::Checkpoint(
                "stored training config disagrees with the model config".into(),
            ));
        }
        let mut state = Self::new(model.params(), &cfg);
        for network in [Network::Generator, Network::Discriminator] {
            let idx = model.params().trainable_indices(network);
            let adam = match network {
                Network::Generator => &mut state.g_adam,
                Network::Discriminator => &mut state.d_adam,
            };
            for (k, &i) in idx.iter().enumerate() {
                let name = &model.params().specs()[i].name;
                for (moment, dst) in [("m", &mut adam.m[k]), ("v", &mut adam.v[k])] {
                    let key = format!("{OPTIMIZER_PREFIX}{}.{moment}.{name}", tag(network));
                    let t: &Tensor<f32> = ck
                        .tensors
                        .get(&key)
                        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                    if t.shape() != dst.shape() {
                        return Err(Error::Checkpoint(format!("{key}: shape {:?}", t.shape())));
                    }
                    *dst = t.clone();
                }
            }
        }
        let expected_extra = 2 * (state.g_adam.len() + state.d_adam.len());
        let found_extra = ck.tensors.keys().filter(|n| n.starts_with(OPTIMIZER_PREFIX)).count();
        if found_extra != expected_extra {
            return Err(Error::Checkpoint(format!(
                "{found_extra} optimizer tensors, expected {expected_extra}"
            )));
        }
        state.g_adam.t = record.g_adam_t;
        state.d_adam.t = record.d_adam_t;
        state.epoch = record.epoch;
        state.step = record.step;
        state.best_val_nmse = record.best_val_nmse;
        state.best_epoch = record.best_epoch;
        state.early_stop = record.early_stop;
        Ok((model, cfg, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_at_patience_th_increase() {
        let mut es = EarlyStop::new(3);
        assert!(!es.update(1.0));
        assert!(!es.update(1.1));
        assert!(!es.update(1.2));
        assert!(es.update(1.3));
    }

    #[test]
    fn ties_and_decreases_reset() {
        let mut es = EarlyStop::new(2);
        es.update(1.0);
        es.update(2.0);
        assert_eq!(es.increases, 1);
        es.update(2.0);
        assert_eq!(es.increases, 0);
        es.update(3.0);
        es.update(1.0);
        assert_eq!(es.increases, 0);
        assert!(!es.stopped);
    }
}

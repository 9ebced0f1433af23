use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::state::TrainState;
use crate::losses::{d_loss, es_loss, g_adv_loss, l1_loss, total_g_loss, MsSsimParams};
use crate::model::{discriminator_forward, sg_forward, BnUpdate, Model, Network, Phase, Session};
use crate::{AdamState, Error, Result, Tensor, Var};

/// Zero-filled inputs and fully sampled targets, both `[B, 1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x_zf: Tensor<f32>,
    pub x: Tensor<f32>,
}

/// Values logged for one alternating update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_adv: f64,
    pub l1: f64,
    /// Zero when the structural term is disabled.
    pub es: f64,
    pub total: f64,
}

/// Tape handles of the generator objective terms.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub x_g: Var,
    pub adv: Var,
    pub l1: Var,
    pub es: Option<Var>,
    pub total: Var,
}

pub fn ms_ssim_params(cfg: &TrainConfig) -> Result<MsSsimParams> {
    match cfg.ms_ssim_scales {
        Some(n) => Ok(MsSsimParams::with_scales(n)),
        None => MsSsimParams::for_extent(cfg.model.height.min(cfg.model.width)),
    }
}

/// `adv + alpha * l1 + beta * es` for generator input `x_zf` and target `x`.
pub fn generator_objective(s: &mut Session<'_, f32>, x_zf: Var, x: Var, cfg: &TrainConfig) -> Result<GeneratorTerms> {
    let x_g = sg_forward(s, x_zf, &cfg.model)?;
    let d_fake = discriminator_forward(s, x_g, &cfg.model)?;
    let adv = g_adv_loss(&mut s.tape, d_fake)?;
    let l1 = l1_loss(&mut s.tape, x_g, x)?;
    let (es, es_term) = if cfg.disable_es {
        (None, s.tape.constant(Tensor::scalar(0.0)))
    } else {
        let v = es_loss(&mut s.tape, x, x_g, &ms_ssim_params(cfg)?)?;
        (Some(v), v)
    };
    let total = total_g_loss(&mut s.tape, adv, l1, es_term, &cfg.weights)?;
    Ok(GeneratorTerms {
        x_g,
        adv,
        l1,
        es,
        total,
    })
}

fn finite(v: f64, what: &str, state: &TrainState) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!(
            "{what} = {v} at epoch {} step {}",
            state.epoch, state.step
        )))
    }
}

fn apply_updates(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    network: Network,
    grads: Vec<Tensor<f32>>,
    bn: Vec<BnUpdate<f32>>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let idx = model.params().trainable_indices(network);
    let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
    let mut targets = model.params_mut().select_mut(&idx);
    adam.step(&mut targets, &grad_refs, lr as f32)?;
    drop(targets);
    let params = model.params_mut();
    for u in &bn {
        if params.specs()[u.mean_index].network == network {
            params.apply_bn_update(u, momentum as f32);
        }
    }
    Ok(())
}

/// One discriminator update on the real batch against the generator output,
/// then one generator update against the refreshed discriminator.
pub fn train_step(
    model: &mut Model<f32>,
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch: &Batch,
    lr: f64,
) -> Result<StepLosses> {
    if batch.x.shape() != batch.x_zf.shape() {
        return Err(Error::shape(
            "train_step",
            format!("targets {:?} vs inputs {:?}", batch.x.shape(), batch.x_zf.shape()),
        ));
    }

    // Discriminator: generator parameters enter as constants.
    let (d_value, d_grads, d_bn) = {
        let mut s = Session::new(model.params(), Phase::Train, &[Network::Discriminator]);
        let xz = s.input(batch.x_zf.clone());
        let xr = s.input(batch.x.clone());
        let xg = sg_forward(&mut s, xz, &cfg.model)?;
        let xg = s.tape.detach(xg);
        let d_real = discriminator_forward(&mut s, xr, &cfg.model)?;
        let d_fake = discriminator_forward(&mut s, xg, &cfg.model)?;
        let loss = d_loss(&mut s.tape, d_real, d_fake)?;
        let value = finite(s.tape.value(loss).item() as f64, "d_loss", state)?;
        let mut grads = s.tape.backward(loss)?;
        let g = s.param_grads(&mut grads, Network::Discriminator);
        (value, g, s.into_bn_updates())
    };
    apply_updates(
        model,
        &mut state.d_adam,
        Network::Discriminator,
        d_grads,
        d_bn,
        lr,
        cfg.bn_momentum,
    )?;

    // Generator: discriminator parameters enter as constants.
    let (losses, g_grads, g_bn) = {
        let mut s = Session::new(model.params(), Phase::Train, &[Network::Generator]);
        let xz = s.input(batch.x_zf.clone());
        let xr = s.input(batch.x.clone());
        let t = generator_objective(&mut s, xz, xr, cfg)?;
        let item = |v: Var| s.tape.value(v).item() as f64;
        let losses = StepLosses {
            d_loss: d_value,
            g_adv: finite(item(t.adv), "g_adv", state)?,
            l1: finite(item(t.l1), "l1", state)?,
            es: finite(t.es.map_or(0.0, item), "es", state)?,
            total: finite(item(t.total), "total", state)?,
        };
        let mut grads = s.tape.backward(t.total)?;
        let g = s.param_grads(&mut grads, Network::Generator);
        (losses, g, s.into_bn_updates())
    };
    apply_updates(
        model,
        &mut state.g_adam,
        Network::Generator,
        g_grads,
        g_bn,
        lr,
        cfg.bn_momentum,
    )?;
    state.step += 1;
    Ok(losses)
}

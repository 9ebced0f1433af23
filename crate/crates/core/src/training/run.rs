use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{lr_schedule, TrainConfig};
use super::state::TrainState;
use super::step::{train_step, Batch, StepLosses};
use crate::data::{augment, derive_seed, id_seed, Batcher, Dataset, SliceRecord, Split};
use crate::kspace::{make_mask, undersample, zero_fill, Mask, NoiseSpec};
use crate::metrics::{aggregate, MetricReport, MetricRow};
use crate::model::{Checkpoint, Model};
use crate::{Error, Image, Result, Tensor};

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOG_HEADER: &str = "epoch,step,d_loss,g_adv,l1,es,total,lr,val_nmse";

/// Intensity range of normalized slices, used as the PSNR / SSIM peak.
pub const PEAK: f64 = 1.0;

/// A ground-truth slice and its zero-filled reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub x: Image<f32>,
    pub x_zf: Image<f32>,
}

/// Zero-filled image of `x` under `mask`, computed in double precision.
pub fn zero_filled(x: &Image<f32>, mask: &Mask, noise: Option<&NoiseSpec>) -> Result<Image<f32>> {
    let y = undersample(&x.to_f64(), mask, noise)?;
    Ok(zero_fill(&y)?.to_f32())
}

/// Evaluation pairs with noise seeded per slice id, so they do not depend on
/// record order.
pub fn eval_pairs(records: &[&SliceRecord], mask: &Mask, noise: Option<&NoiseSpec>) -> Result<Vec<Pair>> {
    records
        .iter()
        .map(|r| {
            let n = noise.map(|n| n.with_seed(derive_seed(n.seed, &[id_seed(&r.id)])));
            Ok(Pair {
                id: r.id.clone(),
                x: r.image.clone(),
                x_zf: zero_filled(&r.image, mask, n.as_ref())?,
            })
        })
        .collect()
}

/// Stacks equally sized images into `[B, 1, H, W]`.
pub fn stack(images: &[&Image<f32>]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero images".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::shape("stack", format!("{:?} vs {:?}", img.dims(), (h, w))));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Splits `[B, 1, H, W]` back into images.
pub fn unstack(t: &Tensor<f32>) -> Result<Vec<Image<f32>>> {
    let &[b, 1, h, w] = t.shape() else {
        return Err(Error::shape(
            "unstack",
            format!("expected [B, 1, H, W], got {:?}", t.shape()),
        ));
    };
    (0..b)
        .map(|i| Image::new(h, w, t.data()[i * h * w..(i + 1) * h * w].to_vec()))
        .collect()
}

/// Generator outputs for every pair, in eval mode.
pub fn reconstruct_pairs(model: &Model<f32>, pairs: &[Pair], batch_size: usize) -> Result<Vec<Image<f32>>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size.max(1)) {
        let zf: Vec<&Image<f32>> = chunk.iter().map(|p| &p.x_zf).collect();
        out.extend(unstack(&model.reconstruct(&stack(&zf)?)?)?);
    }
    Ok(out)
}

/// Metrics of the model reconstructions against the ground truth.
pub fn evaluate(model: &Model<f32>, pairs: &[Pair], batch_size: usize) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let recon = reconstruct_pairs(model, pairs, batch_size)?;
    let rows = pairs
        .iter()
        .zip(&recon)
        .map(|(p, xg)| MetricRow::compute(p.id.clone(), xg, &p.x, PEAK))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(rows))
}

/// Metrics of the zero-filled inputs themselves.
pub fn zero_fill_report(pairs: &[Pair]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let rows = pairs
        .iter()
        .map(|p| MetricRow::compute(p.id.clone(), &p.x_zf, &p.x, PEAK))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(rows))
}

/// Per-epoch summary returned by [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub lr: f64,
    pub steps: usize,
    pub mean_losses: StepLosses,
    pub val_nmse: f64,
    pub val_psnr: f64,
    /// Lowest validation NMSE seen so far, this epoch included.
    pub best_val_nmse: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights at the lowest validation NMSE (the initial weights if no epoch ran).
    pub best: Model<f32>,
    pub last: Model<f32>,
    pub state: TrainState,
    pub epochs: Vec<EpochSummary>,
    pub zero_fill_val: MetricReport,
}

/// Where a run keeps its artifacts; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from an archive written by an earlier run whose configuration
    /// differs at most in `max_epochs`.
    pub resume: Option<Checkpoint>,
    /// Start a fresh run from these weights instead of the seeded initialization.
    pub warm_start: Option<Model<f32>>,
}

struct Log {
    file: Option<(PathBuf, File)>,
}

impl Log {
    fn open(out_dir: Option<&Path>, append: bool) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(Self { file: None });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let fresh = !append || !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            file: Some((path, file)),
        })
    }

    fn row(&mut self, epoch: u64, step: u64, l: &StepLosses, lr: f64, val: Option<f64>) -> Result<()> {
        let Some((path, file)) = &mut self.file else {
            return Ok(());
        };
        let val = val.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            file,
            "{epoch},{step},{},{},{},{},{},{lr},{val}",
            l.d_loss, l.g_adv, l.l1, l.es, l.total
        )
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path.as_path(), e))
    }
}

fn save(out_dir: Option<&Path>, name: &str, model: &Model<f32>, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    if let Some(dir) = out_dir {
        state.to_checkpoint(model, cfg)?.save(&dir.join(name))?;
    }
    Ok(())
}

fn mean_losses(all: &[StepLosses]) -> StepLosses {
    let n = all.len().max(1) as f64;
    let avg = |f: fn(&StepLosses) -> f64| all.iter().map(f).sum::<f64>() / n;
    StepLosses {
        d_loss: avg(|l| l.d_loss),
        g_adv: avg(|l| l.g_adv),
        l1: avg(|l| l.l1),
        es: avg(|l| l.es),
        total: avg(|l| l.total),
    }
}

/// Training batch for the given record indices of one epoch.
pub fn make_batch(
    records: &[&SliceRecord],
    indices: &[usize],
    epoch: u64,
    mask: &Mask,
    cfg: &TrainConfig,
) -> Result<Batch> {
    let mut xs = Vec::with_capacity(indices.len());
    let mut zfs = Vec::with_capacity(indices.len());
    for &i in indices {
        let stream = derive_seed(cfg.data_seed, &[epoch, i as u64]);
        let x = match &cfg.augment {
            Some(spec) => augment(&records[i].image, spec, stream),
            None => records[i].image.clone(),
        };
        let noise = cfg.noise.map(|n| n.with_seed(derive_seed(n.seed, &[epoch, i as u64])));
        zfs.push(zero_filled(&x, mask, noise.as_ref())?);
        xs.push(x);
    }
    Ok(Batch {
        x_zf: stack(&zfs.iter().collect::<Vec<_>>())?,
        x: stack(&xs.iter().collect::<Vec<_>>())?,
    })
}

/// Alternating adversarial training with per-epoch validation, learning-rate
/// halving, best-checkpoint selection and early stopping.
///
/// With an output directory, `train_log.csv` gets one row per step (the
/// validation NMSE on the last row of each epoch) and `best.ckpt` /
/// `last.ckpt` are rewritten after every epoch.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out_dir = opts.out_dir.as_deref();
    let train_set = dataset.split(Split::Train);
    let valid_set = dataset.split(Split::Valid);
    let mask = make_mask(&cfg.mask)?;
    let val_pairs = eval_pairs(&valid_set, &mask, cfg.noise.as_ref())?;
    let zero_fill_val = zero_fill_report(&val_pairs)?;
    if cfg.max_epochs > 0 && train_set.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }

    let resuming = opts.resume.is_some();
    if resuming && opts.warm_start.is_some() {
        return Err(Error::InvalidArgument(
            "resume and warm start are mutually exclusive".into(),
        ));
    }
    let (mut model, mut state, mut best) = match opts.resume {
        Some(ck) => {
            let (model, mut stored, state) = TrainState::from_checkpoint(&ck)?;
            // Extending a run only changes the epoch budget.
            stored.max_epochs = cfg.max_epochs;
            if stored != *cfg {
                return Err(Error::Checkpoint(
                    "resumed archive was written with a different configuration".into(),
                ));
            }
            let best = match out_dir.map(|d| d.join(BEST_CHECKPOINT)).filter(|p| p.exists()) {
                Some(p) => TrainState::from_checkpoint(&Checkpoint::load(&p)?)?.0,
                None => model.clone(),
            };
            (model, state, best)
        }
        None => {
            let model = match opts.warm_start {
                Some(m) if m.config() != &cfg.model => {
                    return Err(Error::InvalidArgument(
                        "warm-start model has a different architecture".into(),
                    ))
                }
                Some(m) => m,
                None => Model::new(cfg.model.clone(), cfg.init_seed)?,
            };
            let state = TrainState::new(model.params(), cfg);
            let best = model.clone();
            (model, state, best)
        }
    };
    let mut log = Log::open(out_dir, resuming)?;
    if !resuming {
        save(out_dir, BEST_CHECKPOINT, &model, &state, cfg)?;
        save(out_dir, LAST_CHECKPOINT, &model, &state, cfg)?;
    }

    let batcher = Batcher::new(train_set.len(), cfg.batch_size, cfg.data_seed)?;
    let mut epochs = Vec::new();
    while state.epoch < cfg.max_epochs && !state.early_stop.stopped {
        let epoch = state.epoch;
        let lr = lr_schedule(epoch, cfg);
        let batches = batcher.epoch(epoch);
        let mut losses = Vec::with_capacity(batches.len());
        let mut last = None;
        for indices in &batches {
            if let Some(l) = last.take() {
                log.row(epoch, state.step - 1, &l, lr, None)?;
            }
            let batch = make_batch(&train_set, indices, epoch, &mask, cfg)?;
            let l = train_step(&mut model, &mut state, cfg, &batch, lr)?;
            losses.push(l);
            last = Some(l);
        }

        let report = evaluate(&model, &val_pairs, cfg.batch_size)?;
        let val_nmse = report.nmse.mean;
        if !val_nmse.is_finite() {
            return Err(Error::NonFinite(format!("validation NMSE at epoch {epoch}")));
        }
        if let Some(l) = last {
            log.row(epoch, state.step - 1, &l, lr, Some(val_nmse))?;
        }
        let stopped = state.early_stop.update(val_nmse);
        if state.best_val_nmse.is_none_or(|b| val_nmse < b) {
            state.best_val_nmse = Some(val_nmse);
            state.best_epoch = Some(epoch);
            best = model.clone();
        }
        state.epoch += 1;
        if state.best_epoch == Some(epoch) {
            save(out_dir, BEST_CHECKPOINT, &model, &state, cfg)?;
        }
        save(out_dir, LAST_CHECKPOINT, &model, &state, cfg)?;
        epochs.push(EpochSummary {
            epoch,
            lr,
            steps: losses.len(),
            mean_losses: mean_losses(&losses),
            val_nmse,
            val_psnr: report.psnr.mean,
            best_val_nmse: state.best_val_nmse.expect("set above"),
            stopped,
        });
    }

    Ok(TrainOutcome {
        best,
        last: model,
        state,
        epochs,
        zero_fill_val,
    })
}

//! TOML run configuration. Every key is optional; omitted keys take the
//! defaults below, which reproduce the reference training setup.

use std::path::Path;

use essgan::data::AugmentSpec;
use essgan::losses::LossWeights;
use essgan::model::{Ablation, SgConfig};
use essgan::{MaskKind, MaskSpec, NoiseSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::fail::{io_fail, CliResult, Fail};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelSection,
    pub loss: LossSection,
    pub mask: MaskSection,
    /// Absent means noiseless acquisition.
    pub noise: Option<NoiseSection>,
    pub train: TrainSection,
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub m: usize,
    pub f_num: usize,
    pub height: usize,
    pub width: usize,
    /// Channels at depths `0..=m`; defaults to doubling from `f_num`.
    pub channel_schedule: Option<Vec<usize>>,
    pub ablation: Ablation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            m: 4,
            f_num: 64,
            height: 256,
            width: 256,
            channel_schedule: None,
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub disable_es: bool,
    pub ms_ssim_scales: Option<usize>,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            disable_es: false,
            ms_ssim_scales: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub kind: MaskKind,
    pub rate: f64,
    pub seed: u64,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            kind: MaskKind::Radial,
            rate: 0.3,
            seed: 0,
        }
    }
}

impl MaskSection {
    fn spec(&self, height: usize, width: usize) -> MaskSpec {
        MaskSpec {
            kind: self.kind,
            target_rate: self.rate,
            seed: self.seed,
            height,
            width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub mean: f64,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halving_epochs: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub patience: u32,
    pub max_epochs: u64,
    pub bn_momentum: f64,
    pub init_seed: u64,
    pub data_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let m = ModelSection::default();
        let d = TrainConfig::new(
            SgConfig::new(m.m, m.f_num, m.height, m.width).expect("default architecture is valid"),
            MaskSection::default().spec(m.height, m.width),
        );
        Self {
            batch_size: d.batch_size,
            lr: d.lr,
            lr_halving_epochs: d.lr_halving_epochs,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_eps: d.adam_eps,
            patience: d.patience,
            max_epochs: d.max_epochs,
            bn_momentum: d.bn_momentum,
            init_seed: d.init_seed,
            data_seed: d.data_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub flip: bool,
    pub rotation_deg: f64,
    pub shift_px: f64,
    pub zoom: [f64; 2],
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub brightness: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentSpec::default();
        Self {
            enabled: true,
            flip: a.flip,
            rotation_deg: a.rotation_deg,
            shift_px: a.shift_px,
            zoom: a.zoom,
            elastic_alpha: a.elastic_alpha,
            elastic_sigma: a.elastic_sigma,
            brightness: a.brightness,
            seed: a.seed,
        }
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!(" (line {})", text[..s.start].lines().count().max(1)))
                .unwrap_or_default();
            Fail::Usage(format!("{}{at}", e.message()))
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
        Self::parse(&text).map_err(|f| f.context(path.display()))
    }

    /// The library configuration, validated.
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let usage = |e: essgan::Error| Fail::Usage(e.to_string());
        let m = &self.model;
        let model = match &m.channel_schedule {
            Some(s) => SgConfig::with_schedule(m.m, m.f_num, s.clone(), m.height, m.width),
            None => SgConfig::new(m.m, m.f_num, m.height, m.width),
        }
        .map_err(usage)?
        .with_ablation(m.ablation);
        let mask = self.mask.spec(m.height, m.width);
        let t = &self.train;
        let a = &self.augment;
        let cfg = TrainConfig {
            weights: LossWeights {
                alpha: self.loss.alpha,
                beta: self.loss.beta,
            },
            noise: self.noise.as_ref().map(|n| NoiseSpec {
                mean: n.mean,
                sigma: n.sigma,
                seed: n.seed,
            }),
            batch_size: t.batch_size,
            lr: t.lr,
            lr_halving_epochs: t.lr_halving_epochs,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            patience: t.patience,
            max_epochs: t.max_epochs,
            bn_momentum: t.bn_momentum,
            init_seed: t.init_seed,
            data_seed: t.data_seed,
            augment: a.enabled.then_some(AugmentSpec {
                flip: a.flip,
                rotation_deg: a.rotation_deg,
                shift_px: a.shift_px,
                zoom: a.zoom,
                elastic_alpha: a.elastic_alpha,
                elastic_sigma: a.elastic_sigma,
                brightness: a.brightness,
                seed: a.seed,
            }),
            disable_es: self.loss.disable_es,
            ms_ssim_scales: self.loss.ms_ssim_scales,
            ..TrainConfig::new(model, mask)
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = FileConfig::parse("").unwrap().resolve().unwrap();
        assert_eq!(
            (cfg.model.m, cfg.model.f_num, cfg.model.height, cfg.model.width),
            (4, 64, 256, 256)
        );
        assert_eq!((cfg.weights.alpha, cfg.weights.beta), (200.0, 100.0));
        assert_eq!(
            (cfg.batch_size, cfg.lr, cfg.lr_halving_epochs, cfg.patience),
            (8, 1e-4, 10, 10)
        );
        assert_eq!(cfg.augment, Some(AugmentSpec::default()));
        assert_eq!(cfg.noise, None);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = FileConfig::parse("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Fail::Usage(_)));
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = FileConfig::parse("[optimizer]\n").unwrap_err();
        assert!(err.to_string().contains("optimizer"), "{err}");
    }

    #[test]
    fn sections_override_defaults() {
        let text = "[model]\nm = 2\nf_num = 8\nheight = 32\nwidth = 32\n[mask]\nkind = \"cartesian\"\nrate = 0.25\n\
                    [noise]\nsigma = 0.1\n[augment]\nenabled = false\n";
        let cfg = FileConfig::parse(text).unwrap().resolve().unwrap();
        assert_eq!(cfg.model.channel_schedule, vec![8, 16, 32]);
        assert_eq!((cfg.mask.kind, cfg.mask.height), (MaskKind::Cartesian, 32));
        assert_eq!(cfg.noise.map(|n| n.sigma), Some(0.1));
        assert_eq!(cfg.augment, None);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let err = FileConfig::parse("[train]\nbatch_size = 0\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(matches!(err, Fail::Usage(_)), "{err}");
    }
}

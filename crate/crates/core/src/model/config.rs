use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of chained autoencoders in the generator.
pub const NUM_SCAE: usize = 2;

/// Generator / discriminator architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgConfig {
    /// Encoder (and decoder) blocks per autoencoder.
    pub m: usize,
    pub f_num: usize,
    /// Channel count at each depth `0..=m`; depth 0 is the full-resolution
    /// width produced by the first convolution.
    pub channel_schedule: Vec<usize>,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

/// Architecture switches used for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Drop the connections from the first autoencoder into the second.
    pub disable_strengthened: bool,
    /// Replace every shortcut RIRB by the identity.
    pub disable_shortcut_rirbs: bool,
    /// Insert one RIRB inside each encoder (after `conv_o`) and decoder
    /// (after `deconv_i`).
    pub block_rirbs: bool,
}

/// Doubling from `f_num` at each depth, capped at `8 * f_num`.
pub fn doubling_schedule(m: usize, f_num: usize) -> Vec<usize> {
    (0..=m).map(|d| (f_num << d.min(3)).min(8 * f_num)).collect()
}

impl SgConfig {
    /// Config with the default channel schedule.
    pub fn new(m: usize, f_num: usize, height: usize, width: usize) -> Result<Self> {
        Self::with_schedule(m, f_num, doubling_schedule(m, f_num), height, width)
    }

    pub fn with_schedule(
        m: usize,
        f_num: usize,
        channel_schedule: Vec<usize>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let cfg = Self {
            m,
            f_num,
            channel_schedule,
            height,
            width,
            ablation: Ablation::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.f_num == 0 {
            return bad("f_num must be positive".into());
        }
        if self.channel_schedule.len() != self.m + 1 {
            return bad(format!(
                "channel_schedule has {} entries, expected m + 1 = {}",
                self.channel_schedule.len(),
                self.m + 1
            ));
        }
        if self.channel_schedule[0] != self.f_num {
            return bad(format!(
                "channel_schedule starts at {} but f_num is {}",
                self.channel_schedule[0], self.f_num
            ));
        }
        if let Some(c) = self.channel_schedule.iter().find(|&&c| c == 0) {
            return bad(format!("channel count {c} must be positive"));
        }
        if self.uses_rirbs() {
            if let Some(c) = self.channel_schedule.iter().find(|&&c| c % 2 == 1) {
                return bad(format!("RIRB sites need even channel counts, schedule has {c}"));
            }
        }
        let unit = 1usize << self.m;
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(unit) || !self.width.is_multiple_of(unit)
        {
            return bad(format!(
                "extents {}x{} must be positive multiples of 2^m = {unit}",
                self.height, self.width
            ));
        }
        Ok(())
    }

    /// Channels at encoder depth `d` (0 = full resolution).
    pub fn channels(&self, depth: usize) -> usize {
        self.channel_schedule[depth]
    }

    /// Whether any RIRB is instantiated anywhere.
    pub fn uses_rirbs(&self) -> bool {
        !self.ablation.disable_shortcut_rirbs || self.ablation.block_rirbs
    }

    /// Whether the connection family is wired and routed through RIRBs.
    pub(crate) fn shortcut_rirbs(&self) -> bool {
        !self.ablation.disable_shortcut_rirbs
    }

    pub(crate) fn strengthened(&self) -> bool {
        !self.ablation.disable_strengthened
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_caps_at_eight_times() {
        assert_eq!(doubling_schedule(4, 64), vec![64, 128, 256, 512, 512]);
        assert_eq!(doubling_schedule(2, 4), vec![4, 8, 16]);
    }

    #[test]
    fn rejects_indivisible_extents() {
        assert!(SgConfig::new(3, 4, 36, 64).is_err());
        assert!(SgConfig::new(3, 4, 64, 64).is_ok());
    }

    #[test]
    fn rejects_odd_rirb_widths() {
        assert!(SgConfig::with_schedule(1, 3, vec![3, 3], 8, 8).is_err());
        let cfg = SgConfig {
            m: 1,
            f_num: 3,
            channel_schedule: vec![3, 3],
            height: 8,
            width: 8,
            ablation: Ablation {
                disable_shortcut_rirbs: true,
                ..Ablation::default()
            },
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn schedule_length_checked() {
        let err = SgConfig::with_schedule(2, 4, vec![4, 8], 16, 16).unwrap_err();
        assert!(err.to_string().contains("m + 1"));
    }
}

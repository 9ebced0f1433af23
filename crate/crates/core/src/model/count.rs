use std::collections::BTreeMap;

use serde::Serialize;

use super::config::{SgConfig, NUM_SCAE};
use super::params::names;

/// Trainable-parameter totals with a per-block breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub generator: usize,
    pub discriminator: usize,
    pub blocks: BTreeMap<String, usize>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.generator + self.discriminator
    }
}

/// `k * k * c_in * c_out + c_out`.
pub fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

fn cbl(k: usize, cin: usize, cout: usize) -> usize {
    conv_params(k, cin, cout) + 2 * cout
}

fn rirb(c: usize) -> usize {
    let h = c / 2;
    cbl(3, c, h) + 2 * cbl(1, h, h) + cbl(3, h, c)
}

fn block(cin: usize, cout: usize, with_rirb: bool) -> usize {
    cbl(3, cin, cout) + cbl(3, cout, cout) + if with_rirb { rirb(cout) } else { 0 }
}

/// Closed-form count of every trainable scalar for `cfg`.
pub fn count_params(cfg: &SgConfig) -> ParamCount {
    let m_blocks = cfg.m;
    let c = |d: usize| cfg.channels(d);
    let br = cfg.ablation.block_rirbs;
    let mut blocks = BTreeMap::new();
    for n in 1..=NUM_SCAE {
        blocks.insert(names::c1(n), cbl(3, 1, c(0)));
        for m in 1..=m_blocks {
            blocks.insert(names::enc(n, m), block(c(m - 1), c(m), br));
            blocks.insert(names::dec(n, m), block(c(m_blocks - m + 1), c(m_blocks - m), br));
        }
        blocks.insert(names::c2(n), conv_params(3, c(0), 1));
        if !cfg.ablation.disable_shortcut_rirbs {
            for m in 2..=m_blocks {
                blocks.insert(names::tc_dec(n, m), rirb(c(m_blocks - m + 1)));
            }
            if n > 1 && !cfg.ablation.disable_strengthened {
                blocks.insert(names::sc_enc(n, 1), rirb(c(0)));
                for m in 2..=m_blocks {
                    blocks.insert(names::sc_enc(n, m), rirb(c(m - 1)));
                }
                blocks.insert(names::sc_dec1(n), rirb(c(m_blocks)));
            }
        }
    }
    let generator = blocks.values().sum();
    let mut disc = 0;
    for (name, count) in std::iter::once((names::DISC_C1.to_string(), cbl(3, 1, c(0))))
        .chain((1..=m_blocks).map(|m| (names::disc_enc(m), block(c(m - 1), c(m), false))))
        .chain(std::iter::once((names::DISC_HEAD.to_string(), c(m_blocks) + 1)))
    {
        disc += count;
        blocks.insert(name, count);
    }
    ParamCount {
        generator,
        discriminator: disc,
        blocks,
    }
}

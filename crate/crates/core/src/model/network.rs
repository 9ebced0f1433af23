use super::config::{SgConfig, NUM_SCAE};
use super::params::names;
use super::session::Session;
use crate::{Error, Float, Result, Var};

/// Residual-in-residual block under `{prefix}.cbl{1..4}`.
///
/// `y1 = CBL1(x)`, `y3 = CBL3(CBL2(y1)) + y1`, `out = CBL4(y3) + x`.
pub fn rirb_forward<T: Float>(s: &mut Session<'_, T>, x: Var, prefix: &str) -> Result<Var> {
    let (_, c, _, _) = s.tape.value(x).dims4()?;
    if c % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "RIRB {prefix} needs an even channel count, got {c}"
        )));
    }
    let y1 = s.cbl(x, &format!("{prefix}.cbl1"), 1, false)?;
    let y2 = s.cbl(y1, &format!("{prefix}.cbl2"), 1, false)?;
    let y3 = s.cbl(y2, &format!("{prefix}.cbl3"), 1, false)?;
    let y3 = s.tape.add(y3, y1)?;
    let y4 = s.cbl(y3, &format!("{prefix}.cbl4"), 1, false)?;
    s.tape.add(y4, x)
}

/// `conv_i` (stride 2) then `conv_o` (stride 1); halves the extents.
pub fn encoder_forward<T: Float>(s: &mut Session<'_, T>, x: Var, block: &str, with_rirb: bool) -> Result<Var> {
    let (_, _, h, w) = s.tape.value(x).dims4()?;
    if h % 2 == 1 || w % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "encoder {block} needs even extents, got {h}x{w}"
        )));
    }
    let y = s.cbl(x, &format!("{block}.conv_i"), 2, false)?;
    let y = s.cbl(y, &format!("{block}.conv_o"), 1, false)?;
    if with_rirb {
        rirb_forward(s, y, &format!("{block}.rirb"))
    } else {
        Ok(y)
    }
}

/// `deconv_i` (stride 1) then `deconv_o` (stride 2); doubles the extents.
pub fn decoder_forward<T: Float>(s: &mut Session<'_, T>, x: Var, block: &str, with_rirb: bool) -> Result<Var> {
    let mut y = s.cbl(x, &format!("{block}.deconv_i"), 1, true)?;
    if with_rirb {
        y = rirb_forward(s, y, &format!("{block}.rirb"))?;
    }
    s.cbl(y, &format!("{block}.deconv_o"), 2, true)
}

/// Activations of one autoencoder read by the next one.
///
/// Indices are zero-based: `e_in[i]` is the input of encoder `i + 1`.
#[derive(Debug, Clone)]
pub struct ScaeCache {
    /// Input of the final convolution.
    pub c2_in: Var,
    pub e_in: Vec<Var>,
    pub d_in: Vec<Var>,
}

/// Adds `R(cached)` (or `cached` when shortcut RIRBs are off) to `target`.
fn shortcut<T: Float>(
    s: &mut Session<'_, T>,
    cfg: &SgConfig,
    target: Var,
    cached: Var,
    rirb: &str,
    what: impl Fn() -> String,
) -> Result<Var> {
    s.check_shape(target, cached, &what)?;
    let r = if cfg.shortcut_rirbs() {
        rirb_forward(s, cached, rirb)?
    } else {
        cached
    };
    s.tape.add(target, r)
}

/// Autoencoder `n` (1-based). `prev` is the cache of autoencoder `n - 1`.
pub fn scae_forward<T: Float>(
    s: &mut Session<'_, T>,
    x_prev: Var,
    prev: Option<&ScaeCache>,
    n: usize,
    cfg: &SgConfig,
) -> Result<(Var, ScaeCache)> {
    let m_blocks = cfg.m;
    if n == 0 || n > NUM_SCAE {
        return Err(Error::InvalidArgument(format!(
            "autoencoder index {n} outside 1..={NUM_SCAE}"
        )));
    }
    if prev.is_some() != (n > 1) {
        return Err(Error::InvalidArgument(format!(
            "autoencoder {n} {} a cache from its predecessor",
            if n > 1 { "needs" } else { "takes no" }
        )));
    }
    let (_, ch, h, w) = s.tape.value(x_prev).dims4()?;
    if ch != 1 || (h, w) != (cfg.height, cfg.width) {
        return Err(Error::shape(
            "scae_forward",
            format!("input is {ch}x{h}x{w}, expected 1x{}x{}", cfg.height, cfg.width),
        ));
    }
    let prev = prev.filter(|_| cfg.strengthened());
    if let Some(p) = prev {
        if p.e_in.len() != m_blocks || p.d_in.len() != m_blocks {
            return Err(Error::shape(
                "scae_forward",
                format!(
                    "cache holds {} encoder / {} decoder inputs, expected {m_blocks}",
                    p.e_in.len(),
                    p.d_in.len()
                ),
            ));
        }
    }

    let c1_out = s.cbl(x_prev, &names::c1(n), 1, false)?;
    let mut e_in = Vec::with_capacity(m_blocks);
    let mut e_out: Option<Var> = None;
    for m in 1..=m_blocks {
        let base = e_out.unwrap_or(c1_out);
        let input = match prev {
            None => base,
            Some(p) if m == 1 => shortcut(s, cfg, base, p.c2_in, &names::sc_enc(n, 1), || {
                "strengthened connection into encoder 1 (final-convolution input of the previous autoencoder)"
                    .to_string()
            })?,
            // Encoder m reads the input of decoder M-m+2 of the previous autoencoder.
            Some(p) => shortcut(s, cfg, base, p.d_in[m_blocks - m + 1], &names::sc_enc(n, m), || {
                format!(
                    "strengthened connection into encoder {m} (input of decoder {} of the previous autoencoder)",
                    m_blocks - m + 2
                )
            })?,
        };
        e_in.push(input);
        e_out = Some(encoder_forward(s, input, &names::enc(n, m), cfg.ablation.block_rirbs)?);
    }

    let mut d_in = Vec::with_capacity(m_blocks);
    let mut d_out = e_out.expect("m >= 1");
    for m in 1..=m_blocks {
        let input = if m == 1 {
            match prev {
                None => d_out,
                Some(p) => shortcut(s, cfg, d_out, p.d_in[0], &names::sc_dec1(n), || {
                    "strengthened connection into decoder 1 (input of decoder 1 of the previous autoencoder)"
                        .to_string()
                })?,
            }
        } else {
            // Decoder m reads the input of encoder M-m+2 of this autoencoder.
            let skip = e_in[m_blocks - m + 1];
            shortcut(s, cfg, d_out, skip, &names::tc_dec(n, m), || {
                format!(
                    "typical connection into decoder {m} (input of encoder {})",
                    m_blocks - m + 2
                )
            })?
        };
        d_in.push(input);
        d_out = decoder_forward(s, input, &names::dec(n, m), cfg.ablation.block_rirbs)?;
    }

    let c2_in = d_out;
    let c2_out = s.conv(c2_in, &names::c2(n), 1, false)?;
    let x_n = s.tape.add(x_prev, c2_out)?;
    Ok((x_n, ScaeCache { c2_in, e_in, d_in }))
}

/// Both autoencoders chained; `x_2 = x_0 + C2_1 + C2_2` by construction.
pub fn sg_forward<T: Float>(s: &mut Session<'_, T>, x0: Var, cfg: &SgConfig) -> Result<Var> {
    let (x1, cache) = scae_forward(s, x0, None, 1, cfg)?;
    let (x2, _) = scae_forward(s, x1, Some(&cache), 2, cfg)?;
    Ok(x2)
}

/// Probability `[B, 1]` that each image is fully sampled.
pub fn discriminator_forward<T: Float>(s: &mut Session<'_, T>, x: Var, cfg: &SgConfig) -> Result<Var> {
    let (_, ch, h, w) = s.tape.value(x).dims4()?;
    if ch != 1 || (h, w) != (cfg.height, cfg.width) {
        return Err(Error::shape(
            "discriminator_forward",
            format!("input is {ch}x{h}x{w}, expected 1x{}x{}", cfg.height, cfg.width),
        ));
    }
    let mut y = s.cbl(x, names::DISC_C1, 1, false)?;
    for m in 1..=cfg.m {
        y = encoder_forward(s, y, &names::disc_enc(m), false)?;
    }
    let pooled = s.tape.global_avg_pool(y)?;
    let logit = s.dense(pooled, names::DISC_HEAD)?;
    Ok(s.tape.sigmoid(logit))
}

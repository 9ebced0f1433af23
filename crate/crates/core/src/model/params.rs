use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::SgConfig;
use crate::autodiff::BatchStats;
use crate::{Error, Float, Result, Tensor};

/// LeakyReLU negative slope used after every normalization.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, Self::RunningMean | Self::RunningVar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
}

/// One entry of the parameter registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    /// Owning block, e.g. `sg.scae1.enc2`.
    pub block: String,
    pub network: Network,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn trainable(&self) -> bool {
        self.role.trainable()
    }
}

/// Builds the ordered list of [`ParamSpec`]s for a network.
#[derive(Debug, Clone)]
pub struct Registry {
    network: Network,
    specs: Vec<ParamSpec>,
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt()
}

impl Registry {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            specs: Vec::new(),
        }
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }

    fn push(&mut self, block: &str, name: String, role: ParamRole, shape: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec {
            name,
            block: block.to_string(),
            network: self.network,
            role,
            shape,
            init,
        });
    }

    /// Convolution weight and bias at `{layer}.w` / `{layer}.b`.
    ///
    /// Transposed weights are stored `[cin, cout, k, k]`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        block: &str,
        layer: &str,
        cin: usize,
        cout: usize,
        k: usize,
        transpose: bool,
        zero: bool,
    ) -> &mut Self {
        let shape = if transpose {
            vec![cin, cout, k, k]
        } else {
            vec![cout, cin, k, k]
        };
        let init = if zero {
            Init::Zeros
        } else {
            Init::Normal(he_std(cin * k * k))
        };
        self.push(block, format!("{layer}.w"), ParamRole::Weight, shape, init);
        self.push(block, format!("{layer}.b"), ParamRole::Bias, vec![cout], Init::Zeros);
        self
    }

    /// Batch normalization at `{layer}.bn.*`.
    pub fn batch_norm(&mut self, block: &str, layer: &str, c: usize) -> &mut Self {
        self.push(
            block,
            format!("{layer}.bn.gamma"),
            ParamRole::Scale,
            vec![c],
            Init::Ones,
        );
        self.push(
            block,
            format!("{layer}.bn.beta"),
            ParamRole::Shift,
            vec![c],
            Init::Zeros,
        );
        self.push(
            block,
            format!("{layer}.bn.mean"),
            ParamRole::RunningMean,
            vec![c],
            Init::Zeros,
        );
        self.push(
            block,
            format!("{layer}.bn.var"),
            ParamRole::RunningVar,
            vec![c],
            Init::Ones,
        );
        self
    }

    /// Convolution, batch normalization, LeakyReLU.
    pub fn cbl(&mut self, block: &str, layer: &str, cin: usize, cout: usize, k: usize, transpose: bool) -> &mut Self {
        self.conv(block, layer, cin, cout, k, transpose, false);
        self.batch_norm(block, layer, cout)
    }

    /// Residual-in-residual block of width `c` under `{prefix}.cbl{1..4}`.
    pub fn rirb(&mut self, block: &str, prefix: &str, c: usize) -> &mut Self {
        let h = c / 2;
        self.cbl(block, &format!("{prefix}.cbl1"), c, h, 3, false);
        self.cbl(block, &format!("{prefix}.cbl2"), h, h, 1, false);
        self.cbl(block, &format!("{prefix}.cbl3"), h, h, 1, false);
        self.cbl(block, &format!("{prefix}.cbl4"), h, c, 3, false)
    }

    pub fn encoder(&mut self, block: &str, cin: usize, cout: usize, with_rirb: bool) -> &mut Self {
        self.cbl(block, &format!("{block}.conv_i"), cin, cout, 3, false);
        self.cbl(block, &format!("{block}.conv_o"), cout, cout, 3, false);
        if with_rirb {
            self.rirb(block, &format!("{block}.rirb"), cout);
        }
        self
    }

    pub fn decoder(&mut self, block: &str, cin: usize, cout: usize, with_rirb: bool) -> &mut Self {
        self.cbl(block, &format!("{block}.deconv_i"), cin, cout, 3, true);
        if with_rirb {
            self.rirb(block, &format!("{block}.rirb"), cout);
        }
        self.cbl(block, &format!("{block}.deconv_o"), cout, cout, 3, true)
    }

    /// Fully connected layer `[out, in]` plus bias.
    pub fn dense(&mut self, block: &str, layer: &str, fin: usize, fout: usize) -> &mut Self {
        let std = (1.0 / fin as f64).sqrt();
        self.push(
            block,
            format!("{layer}.w"),
            ParamRole::Weight,
            vec![fout, fin],
            Init::Normal(std),
        );
        self.push(block, format!("{layer}.b"), ParamRole::Bias, vec![fout], Init::Zeros);
        self
    }
}

/// Block names used by the generator and discriminator.
pub(crate) mod names {
    pub fn c1(n: usize) -> String {
        format!("sg.scae{n}.c1")
    }
    pub fn c2(n: usize) -> String {
        format!("sg.scae{n}.c2")
    }
    pub fn enc(n: usize, m: usize) -> String {
        format!("sg.scae{n}.enc{m}")
    }
    pub fn dec(n: usize, m: usize) -> String {
        format!("sg.scae{n}.dec{m}")
    }
    /// RIRB on the connection from the previous autoencoder into encoder `m`.
    pub fn sc_enc(n: usize, m: usize) -> String {
        format!("sg.scae{n}.sc_enc{m}")
    }
    /// RIRB on the connection from the previous autoencoder into decoder 1.
    pub fn sc_dec1(n: usize) -> String {
        format!("sg.scae{n}.sc_dec1")
    }
    /// RIRB on the in-autoencoder connection into decoder `m`.
    pub fn tc_dec(n: usize, m: usize) -> String {
        format!("sg.scae{n}.tc_dec{m}")
    }
    pub const DISC_C1: &str = "disc.c1";
    pub fn disc_enc(m: usize) -> String {
        format!("disc.enc{m}")
    }
    pub const DISC_HEAD: &str = "disc.head";
}

/// Registry of the strengthened generator.
pub fn generator_specs(cfg: &SgConfig) -> Vec<ParamSpec> {
    let m_blocks = cfg.m;
    let c = |d: usize| cfg.channels(d);
    let mut reg = Registry::new(Network::Generator);
    for n in 1..=super::config::NUM_SCAE {
        let c1 = names::c1(n);
        reg.cbl(&c1, &c1, 1, c(0), 3, false);
        let strengthened = n > 1 && cfg.strengthened() && cfg.shortcut_rirbs();
        if strengthened {
            let b = names::sc_enc(n, 1);
            reg.rirb(&b, &b, c(0));
        }
        for m in 1..=m_blocks {
            if strengthened && m >= 2 {
                let b = names::sc_enc(n, m);
                reg.rirb(&b, &b, c(m - 1));
            }
            reg.encoder(&names::enc(n, m), c(m - 1), c(m), cfg.ablation.block_rirbs);
        }
        if strengthened {
            let b = names::sc_dec1(n);
            reg.rirb(&b, &b, c(m_blocks));
        }
        for m in 1..=m_blocks {
            // Decoder m consumes depth M-m+1 and produces depth M-m.
            if m >= 2 && cfg.shortcut_rirbs() {
                let b = names::tc_dec(n, m);
                reg.rirb(&b, &b, c(m_blocks - m + 1));
            }
            reg.decoder(
                &names::dec(n, m),
                c(m_blocks - m + 1),
                c(m_blocks - m),
                cfg.ablation.block_rirbs,
            );
        }
        let c2 = names::c2(n);
        reg.conv(&c2, &c2, c(0), 1, 3, false, true);
    }
    reg.into_specs()
}

pub fn discriminator_specs(cfg: &SgConfig) -> Vec<ParamSpec> {
    let mut reg = Registry::new(Network::Discriminator);
    reg.cbl(names::DISC_C1, names::DISC_C1, 1, cfg.channels(0), 3, false);
    for m in 1..=cfg.m {
        reg.encoder(&names::disc_enc(m), cfg.channels(m - 1), cfg.channels(m), false);
    }
    reg.dense(names::DISC_HEAD, names::DISC_HEAD, cfg.channels(cfg.m), 1);
    reg.into_specs()
}

/// Generator followed by discriminator entries.
pub fn model_specs(cfg: &SgConfig) -> Vec<ParamSpec> {
    let mut specs = generator_specs(cfg);
    specs.extend(discriminator_specs(cfg));
    specs
}

/// Running-statistics refresh recorded by a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub mean_index: usize,
    pub var_index: usize,
    pub stats: BatchStats<T>,
}

/// Named store of every parameter and normalization statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    specs: Vec<ParamSpec>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> ModelParameters<T> {
    /// Draws initial values in registry order from a seeded generator.
    pub fn init(specs: Vec<ParamSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, T::one()),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    Tensor::from_fn(&s.shape, |_| T::lit(dist.sample(&mut rng)))
                }
            })
            .collect();
        Self::from_values(specs, values)
    }

    pub fn from_values(specs: Vec<ParamSpec>, values: Vec<Tensor<T>>) -> Result<Self> {
        if specs.len() != values.len() {
            return Err(Error::shape(
                "ModelParameters",
                format!("{} specs, {} values", specs.len(), values.len()),
            ));
        }
        let mut index = HashMap::with_capacity(specs.len());
        for (i, (s, v)) in specs.iter().zip(&values).enumerate() {
            if s.shape != v.shape() {
                return Err(Error::shape(
                    "ModelParameters",
                    format!("{} expects {:?}, got {:?}", s.name, s.shape, v.shape()),
                ));
            }
            if index.insert(s.name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter name {}", s.name)));
            }
        }
        Ok(Self { specs, values, index })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.values[self.index_of(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self.index_of(name)?;
        Ok(&mut self.values[i])
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.values[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.values[index]
    }

    /// Indices of the trainable entries of `network`, in registry order.
    pub fn trainable_indices(&self, network: Network) -> Vec<usize> {
        (0..self.specs.len())
            .filter(|&i| self.specs[i].network == network && self.specs[i].trainable())
            .collect()
    }

    /// Mutable `(name, tensor)` pairs for sorted, distinct `indices`.
    pub fn select_mut(&mut self, indices: &[usize]) -> Vec<(&str, &mut Tensor<T>)> {
        let mut want = indices.iter().copied().peekable();
        let mut out = Vec::with_capacity(indices.len());
        for (i, (s, v)) in self.specs.iter().zip(self.values.iter_mut()).enumerate() {
            if want.peek() == Some(&i) {
                want.next();
                out.push((s.name.as_str(), v));
            }
        }
        out
    }

    /// Number of trainable scalars, optionally restricted to one network.
    pub fn count_trainable(&self, network: Option<Network>) -> usize {
        self.specs
            .iter()
            .filter(|s| s.trainable() && network.is_none_or(|n| s.network == n))
            .map(ParamSpec::numel)
            .sum()
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_update(&mut self, update: &BnUpdate<T>, momentum: T) {
        let keep = momentum;
        let take = T::one() - momentum;
        for (dst, src) in [
            (update.mean_index, &update.stats.mean),
            (update.var_index, &update.stats.var),
        ] {
            for (r, &b) in self.values[dst].data_mut().iter_mut().zip(src) {
                *r = keep * *r + take * b;
            }
        }
    }

    pub fn cast<U: Float>(&self) -> ModelParameters<U> {
        ModelParameters {
            specs: self.specs.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }
}

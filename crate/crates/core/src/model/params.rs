//! Learnable state of a network, keyed by layer path.

use std::collections::BTreeMap;

use crate::autodiff::BatchStats;
use crate::error::{Error, Result};
use crate::model::config::RedNetConfig;
use crate::tensor::{Real, Tensor};

/// Role of a learnable tensor; drives initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormGamma,
    NormBeta,
    UpsampleWeight,
}

impl ParamKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            ParamKind::ConvWeight => 0,
            ParamKind::ConvBias => 1,
            ParamKind::NormGamma => 2,
            ParamKind::NormBeta => 3,
            ParamKind::UpsampleWeight => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ParamKind::ConvWeight,
            1 => ParamKind::ConvBias,
            2 => ParamKind::NormGamma,
            3 => ParamKind::NormBeta,
            4 => ParamKind::UpsampleWeight,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Exponential moving averages of batch-norm statistics. Not learnable.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

impl<T: Real> RunningStats<T> {
    fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], initialized: false }
    }

    /// Folds in one batch observation. The first observation replaces the
    /// placeholder values outright.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: f64) {
        if !self.initialized {
            self.mean.copy_from_slice(&batch.mean);
            self.var.copy_from_slice(&batch.var);
            self.initialized = true;
            return;
        }
        let keep = T::from_f64(momentum);
        let take = T::from_f64(1.0 - momentum);
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = keep * *r + take * b;
        }
    }
}

/// Shape and role of one learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Parameters of every layer, shared by all recursion iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    pub config: RedNetConfig,
    params: BTreeMap<String, Param<T>>,
    running: BTreeMap<String, RunningStats<T>>,
}

pub(crate) fn layer_prefix(side: &str, block: usize, layer: usize) -> String {
    format!("{side}{}.l{}", block + 1, layer + 1)
}

/// Input channel count of every layer of the given block.
pub(crate) fn block_layer_inputs(block_in: usize, width: usize, layers: usize) -> Vec<usize> {
    (0..layers).map(|k| block_in + k * width).collect()
}

/// Enumerates every learnable tensor and every batch-norm layer of a config.
pub fn layout(config: &RedNetConfig) -> (Vec<ParamSpec>, Vec<(String, usize)>) {
    let mut specs = Vec::new();
    let mut norms = Vec::new();
    let mut conv_layer = |specs: &mut Vec<ParamSpec>, prefix: String, cin: usize, cout: usize, k: usize| {
        specs.push(ParamSpec { name: format!("{prefix}.conv.weight"), shape: vec![cout, cin, k, k], kind: ParamKind::ConvWeight });
        specs.push(ParamSpec { name: format!("{prefix}.bn.gamma"), shape: vec![cout], kind: ParamKind::NormGamma });
        specs.push(ParamSpec { name: format!("{prefix}.bn.beta"), shape: vec![cout], kind: ParamKind::NormBeta });
        norms.push((format!("{prefix}.bn"), cout));
    };

    let mut block_in = config.input_channels();
    for (b, block) in config.encoder.iter().enumerate() {
        let width = config.width(block);
        for (l, cin) in block_layer_inputs(block_in, width, block.num_layers).into_iter().enumerate() {
            conv_layer(&mut specs, layer_prefix("enc", b, l), cin, width, block.kernel_size);
        }
        block_in = width;
    }
    for (b, block) in config.decoder.iter().enumerate() {
        let width = config.width(block);
        if b > 0 {
            let prev = config.decoder_width(b - 1);
            let k = config.upsample_kernel;
            specs.push(ParamSpec { name: format!("up{b}.weight"), shape: vec![prev, prev, k, k], kind: ParamKind::UpsampleWeight });
            block_in = prev + config.encoder_width(4 - b);
        }
        for (l, cin) in block_layer_inputs(block_in, width, block.num_layers).into_iter().enumerate() {
            conv_layer(&mut specs, layer_prefix("dec", b, l), cin, width, block.kernel_size);
        }
        block_in = width;
    }
    let k = config.head_kernel;
    specs.push(ParamSpec { name: "head.conv.weight".into(), shape: vec![1, block_in, k, k], kind: ParamKind::ConvWeight });
    specs.push(ParamSpec { name: "head.conv.bias".into(), shape: vec![1], kind: ParamKind::ConvBias });
    (specs, norms)
}

impl<T: Real> ModelParameters<T> {
    /// Zero-filled parameters for a validated config.
    pub fn zeros(config: &RedNetConfig) -> Result<Self> {
        config.validate()?;
        let (specs, norms) = layout(config);
        let params = specs
            .into_iter()
            .map(|s| (s.name, Param { kind: s.kind, tensor: Tensor::zeros(&s.shape) }))
            .collect();
        let running = norms.into_iter().map(|(n, c)| (n, RunningStats::new(c))).collect();
        Ok(Self { config: config.clone(), params, running })
    }

    pub(crate) fn from_parts(
        config: RedNetConfig,
        params: BTreeMap<String, Param<T>>,
        running: BTreeMap<String, RunningStats<T>>,
    ) -> Result<Self> {
        let expected = Self::zeros(&config)?;
        if expected.params.len() != params.len() || expected.running.len() != running.len() {
            return Err(Error::Config("parameter set does not match the config".into()));
        }
        for (name, p) in &expected.params {
            match params.get(name) {
                Some(q) if q.tensor.shape() == p.tensor.shape() && q.kind == p.kind => {}
                _ => return Err(Error::Config(format!("parameter `{name}` missing or misshapen"))),
            }
        }
        for (name, r) in &expected.running {
            match running.get(name) {
                Some(q) if q.mean.len() == r.mean.len() && q.var.len() == r.var.len() => {}
                _ => return Err(Error::Config(format!("running stats `{name}` missing or misshapen"))),
            }
        }
        Ok(Self { config, params, running })
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params.get(name).ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn running(&self, name: &str) -> Result<&RunningStats<T>> {
        self.running.get(name).ok_or_else(|| Error::Config(format!("no batch-norm layer named `{name}`")))
    }

    pub fn running_iter(&self) -> impl Iterator<Item = (&String, &RunningStats<T>)> {
        self.running.iter()
    }

    /// Applies batch statistics gathered during a training forward pass, in order.
    pub fn apply_norm_updates(&mut self, updates: &[(String, BatchStats<T>)]) -> Result<()> {
        let momentum = self.config.bn_momentum;
        for (name, stats) in updates {
            self.running
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("no batch-norm layer named `{name}`")))?
                .update(stats, momentum);
        }
        Ok(())
    }

    /// Total learnable scalars; running statistics are excluded.
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        ModelParameters {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, p)| (k.clone(), Param { kind: p.kind, tensor: p.tensor.cast() })).collect(),
            running: self
                .running
                .iter()
                .map(|(k, r)| {
                    let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
                    (k.clone(), RunningStats { mean: conv(&r.mean), var: conv(&r.var), initialized: r.initialized })
                })
                .collect(),
        }
    }
}

/// Total learnable scalars for a config, or an error for an invalid one.
pub fn parameter_count(config: &RedNetConfig) -> Result<usize> {
    config.validate()?;
    Ok(layout(config).0.iter().map(|s| s.shape.iter().product::<usize>()).sum())
}

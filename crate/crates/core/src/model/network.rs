//! Forward pass of the recursive encoder-decoder.

use std::collections::BTreeMap;

use crate::autodiff::{BatchStats, NormStats, Tape, Var};
use crate::error::{Error, Result};
use crate::model::config::DenseBlockConfig;
use crate::model::params::{layer_prefix, ModelParameters};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, parameters tracked for gradients.
    Train,
    /// Running statistics, no parameter gradients.
    Infer,
}

/// Outputs of one recursive forward pass: `f^(0) .. f^(L)`, each `[n, 1, h, w]`.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub edge_maps: Vec<Var>,
}

/// A forward pass in progress: the tape, the parameters bound onto it, and
/// the batch-norm statistics observed so far.
pub struct Session<'p, T: Real> {
    pub tape: Tape<T>,
    params: &'p ModelParameters<T>,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    norm_updates: Vec<(String, BatchStats<T>)>,
}

impl<'p, T: Real> Session<'p, T> {
    pub fn new(params: &'p ModelParameters<T>, mode: Mode) -> Self {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|(name, p)| {
                let mut t = Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("valid param");
                t.requires_grad = mode == Mode::Train;
                (name.clone(), tape.leaf(t))
            })
            .collect();
        Self { tape, params, vars, mode, norm_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    /// Gradients accumulated on every bound parameter.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = match self.tape.grad(v) {
                    Some(g) => g.to_vec(),
                    None => vec![T::zero(); self.tape.value(v).numel()],
                };
                (name.clone(), g)
            })
            .collect()
    }

    /// Batch statistics observed in training mode, in execution order.
    pub fn norm_updates(&self) -> &[(String, BatchStats<T>)] {
        &self.norm_updates
    }

    /// conv -> batch norm -> leaky relu. The convolution has no bias; the
    /// batch norm's shift takes its place.
    fn conv_norm_act(&mut self, prefix: &str, input: Var, kernel_size: usize) -> Result<Var> {
        let w = self.param(&format!("{prefix}.conv.weight"))?;
        let gamma = self.param(&format!("{prefix}.bn.gamma"))?;
        let beta = self.param(&format!("{prefix}.bn.beta"))?;
        let conv = self.tape.conv2d(input, w, None, kernel_size / 2)?;
        let eps = self.params.config.bn_epsilon;
        let bn_name = format!("{prefix}.bn");
        let normed = match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm2d(conv, gamma, beta, NormStats::Batch { eps })?;
                self.norm_updates.push((bn_name, stats.expect("batch statistics")));
                y
            }
            Mode::Infer => {
                let running = self.params.running(&bn_name)?;
                if !running.initialized {
                    return Err(Error::invalid(
                        "batch_norm2d",
                        format!("running statistics of `{bn_name}` are uninitialized; train the model first"),
                    ));
                }
                self.tape.batch_norm2d(conv, gamma, beta, NormStats::Fixed { mean: &running.mean, var: &running.var, eps })?.0
            }
        };
        Ok(self.tape.leaky_relu(normed, T::from_f64(self.params.config.leaky_slope)))
    }

    /// Dense block: layer `k` sees the block input concatenated with the
    /// outputs of layers `1..k`. Returns the last layer's feature map.
    pub fn dense_block(&mut self, side: &str, index: usize, block: &DenseBlockConfig, input: Var) -> Result<Var> {
        let mut features = input;
        let mut out = input;
        for layer in 0..block.num_layers {
            out = self.conv_norm_act(&layer_prefix(side, index, layer), features, block.kernel_size)?;
            if layer + 1 < block.num_layers {
                features = self.tape.concat_channels(features, out)?;
            }
        }
        Ok(out)
    }

    /// Returns the 1/16-resolution bottleneck and the four pre-pooling skip
    /// features, finest first.
    pub fn encoder(&mut self, input: Var) -> Result<(Var, [Var; 4])> {
        let (_, c, h, w) = self.tape.value(input).dims4("encoder")?;
        let grid = self.params.config.grid();
        if h % grid != 0 || w % grid != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(
                "encoder",
                format!("spatial size {h}x{w} is not a multiple of {grid}; pad the input with pad_to_grid"),
            ));
        }
        if c != self.params.config.input_channels() {
            return Err(Error::invalid(
                "encoder",
                format!("expected {} input channels, got {c}", self.params.config.input_channels()),
            ));
        }
        let config = self.params.config.clone();
        let mut x = input;
        let mut skips = [input; 4];
        for (b, block) in config.encoder.iter().enumerate() {
            x = self.dense_block("enc", b, block, x)?;
            if b < 4 {
                skips[b] = x;
                x = self.tape.max_pool2d(x, 2, 2)?;
            }
        }
        Ok((x, skips))
    }

    /// Upsamples back to full resolution, merging each skip at its matching
    /// scale, and returns the sigmoid edge map.
    pub fn decoder(&mut self, bottleneck: Var, skips: &[Var; 4]) -> Result<Var> {
        let config = self.params.config.clone();
        let mut x = self.dense_block("dec", 0, &config.decoder[0], bottleneck)?;
        for b in 1..5 {
            let up = self.param(&format!("up{b}.weight"))?;
            x = self.tape.conv_transpose2d(x, up, 2, config.upsample_padding())?;
            let skip = skips[4 - b];
            let (xs, ss) = (self.tape.value(x).shape(), self.tape.value(skip).shape());
            if xs[2..] != ss[2..] {
                return Err(Error::ShapeMismatch {
                    op: "decoder skip",
                    lhs_name: "upsampled",
                    lhs: xs.to_vec(),
                    rhs_name: "skip",
                    rhs: ss.to_vec(),
                });
            }
            x = self.tape.concat_channels(x, skip)?;
            x = self.dense_block("dec", b, &config.decoder[b], x)?;
        }
        let w = self.param("head.conv.weight")?;
        let bias = self.param("head.conv.bias")?;
        let logits = self.tape.conv2d(x, w, Some(bias), config.head_kernel / 2)?;
        Ok(self.tape.sigmoid(logits))
    }

    /// One encoder-decoder pass over an image stack and an edge channel.
    pub fn step(&mut self, image: Var, edge: Var) -> Result<Var> {
        let input = self.tape.concat_channels(image, edge)?;
        let (bottleneck, skips) = self.encoder(input)?;
        self.decoder(bottleneck, &skips)
    }

    /// Runs `depth + 1` passes, feeding each edge map back as the extra input
    /// channel of the next. The first pass sees a blank edge map.
    pub fn forward(&mut self, image: Var, depth: usize) -> Result<ForwardResult> {
        let (n, _, h, w) = self.tape.value(image).dims4("rednet_forward")?;
        let blank = self.tape.leaf(Tensor::zeros(&[n, 1, h, w]));
        self.forward_from(image, blank, depth)
    }

    /// As [`Session::forward`], starting from a given edge map.
    pub fn forward_from(&mut self, image: Var, initial_edge: Var, depth: usize) -> Result<ForwardResult> {
        let mut edge = initial_edge;
        let mut edge_maps = Vec::with_capacity(depth + 1);
        for _ in 0..=depth {
            edge = self.step(image, edge)?;
            edge_maps.push(edge);
        }
        Ok(ForwardResult { edge_maps })
    }
}

/// Inference-mode forward pass on an already grid-aligned `[n, 3, h, w]`
/// batch. Returns the `depth + 1` edge maps.
pub fn rednet_forward<T: Real>(params: &ModelParameters<T>, image: &Tensor<T>, depth: usize) -> Result<Vec<Tensor<T>>> {
    let mut session = Session::new(params, Mode::Infer);
    let x = session.tape.leaf(image.clone());
    let result = session.forward(x, depth)?;
    Ok(result.edge_maps.iter().map(|&v| session.tape.value(v).clone()).collect())
}

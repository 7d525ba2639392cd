//! Architecture configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One dense block: `num_layers` conv-bn-act layers of `out_channels` each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBlockConfig {
    pub num_layers: usize,
    pub kernel_size: usize,
    pub out_channels: usize,
}

impl DenseBlockConfig {
    pub const fn new(num_layers: usize, kernel_size: usize, out_channels: usize) -> Self {
        Self { num_layers, kernel_size, out_channels }
    }
}

/// Full network description. The recursion depth is part of the config but
/// never affects the parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct RedNetConfig {
    /// Encoder blocks, finest resolution first. Blocks 1-4 are followed by 2x2 max pooling.
    pub encoder: [DenseBlockConfig; 5],
    /// Decoder blocks, coarsest resolution first. Blocks 2-5 are preceded by a x2 transposed conv.
    pub decoder: [DenseBlockConfig; 5],
    /// Number of feedback iterations `L`; the network emits `L + 1` edge maps.
    pub recursion_depth: usize,
    /// Scales every block width; `1/8` gives the desk-scale model.
    pub width_multiplier: f64,
    /// Image channels; the network input has one extra channel for the fed-back edge map.
    pub image_channels: usize,
    /// Transposed-conv kernel extent (even; stride 2, padding `k/2 - 1`).
    pub upsample_kernel: usize,
    /// Kernel extent of the final single-channel prediction conv.
    pub head_kernel: usize,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

const PAPER_ENCODER: [DenseBlockConfig; 5] = [
    DenseBlockConfig::new(2, 5, 64),
    DenseBlockConfig::new(2, 5, 64),
    DenseBlockConfig::new(3, 3, 128),
    DenseBlockConfig::new(3, 3, 256),
    DenseBlockConfig::new(4, 3, 512),
];

impl Default for RedNetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RedNetConfig {
    /// Full-width network with two feedback iterations.
    pub fn paper() -> Self {
        let mut decoder = PAPER_ENCODER;
        decoder.reverse();
        Self {
            encoder: PAPER_ENCODER,
            decoder,
            recursion_depth: 2,
            width_multiplier: 1.0,
            image_channels: 3,
            upsample_kernel: 4,
            head_kernel: 5,
            leaky_slope: 0.1,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }

    /// Full-scale structure at 1/8 width.
    pub fn desk() -> Self {
        Self { width_multiplier: 0.125, ..Self::paper() }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.recursion_depth = depth;
        self
    }

    pub fn input_channels(&self) -> usize {
        self.image_channels + 1
    }

    /// Effective width of a block after the multiplier.
    pub fn width(&self, block: &DenseBlockConfig) -> usize {
        ((block.out_channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn encoder_width(&self, i: usize) -> usize {
        self.width(&self.encoder[i])
    }

    pub fn decoder_width(&self, i: usize) -> usize {
        self.width(&self.decoder[i])
    }

    /// Spatial size must be a multiple of this.
    pub fn grid(&self) -> usize {
        16
    }

    pub fn upsample_padding(&self) -> usize {
        self.upsample_kernel / 2 - 1
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.encoder.iter().map(|b| ("encoder", b)).chain(self.decoder.iter().map(|b| ("decoder", b)));
        for (i, (side, b)) in blocks.enumerate() {
            let idx = i % 5 + 1;
            if b.num_layers == 0 {
                return Err(Error::Config(format!("{side} block {idx} has zero layers")));
            }
            if b.kernel_size == 0 || b.kernel_size % 2 == 0 {
                return Err(Error::Config(format!("{side} block {idx} kernel {} must be odd", b.kernel_size)));
            }
            if b.out_channels == 0 {
                return Err(Error::Config(format!("{side} block {idx} has zero channels")));
            }
        }
        for i in 0..5 {
            if self.decoder[i].out_channels != self.encoder[4 - i].out_channels {
                return Err(Error::Config(format!(
                    "decoder block {} has {} channels but mirrors encoder block {} with {}",
                    i + 1,
                    self.decoder[i].out_channels,
                    5 - i,
                    self.encoder[4 - i].out_channels
                )));
            }
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::Config(format!("width_multiplier {} must be positive", self.width_multiplier)));
        }
        if self.image_channels == 0 {
            return Err(Error::Config("image_channels must be positive".into()));
        }
        if self.upsample_kernel < 2 || self.upsample_kernel % 2 != 0 {
            return Err(Error::Config(format!("upsample_kernel {} must be even and >= 2", self.upsample_kernel)));
        }
        if self.head_kernel % 2 == 0 {
            return Err(Error::Config(format!("head_kernel {} must be odd", self.head_kernel)));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_epsilon must be positive and bn_momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Serializes to `key=value` lines.
    pub fn to_text(&self) -> String {
        let blocks = |bs: &[DenseBlockConfig; 5]| {
            bs.iter().map(|b| format!("{}x{}x{}", b.num_layers, b.kernel_size, b.out_channels)).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "encoder={}", blocks(&self.encoder));
        let _ = writeln!(s, "decoder={}", blocks(&self.decoder));
        let _ = writeln!(s, "recursion_depth={}", self.recursion_depth);
        let _ = writeln!(s, "width_multiplier={}", self.width_multiplier);
        let _ = writeln!(s, "image_channels={}", self.image_channels);
        let _ = writeln!(s, "upsample_kernel={}", self.upsample_kernel);
        let _ = writeln!(s, "head_kernel={}", self.head_kernel);
        let _ = writeln!(s, "leaky_slope={}", self.leaky_slope);
        let _ = writeln!(s, "bn_momentum={}", self.bn_momentum);
        let _ = writeln!(s, "bn_epsilon={}", self.bn_epsilon);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::paper();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "encoder" => self.encoder = parse_blocks(value)?,
            "decoder" => self.decoder = parse_blocks(value)?,
            "recursion_depth" => self.recursion_depth = parse_num(key, value)?,
            "width_multiplier" => self.width_multiplier = parse_fraction(key, value)?,
            "image_channels" => self.image_channels = parse_num(key, value)?,
            "upsample_kernel" => self.upsample_kernel = parse_num(key, value)?,
            "head_kernel" => self.head_kernel = parse_num(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_num(key, value)?,
            "bn_momentum" => self.bn_momentum = parse_num(key, value)?,
            "bn_epsilon" => self.bn_epsilon = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "encoder",
        "decoder",
        "recursion_depth",
        "width_multiplier",
        "image_channels",
        "upsample_kernel",
        "head_kernel",
        "leaky_slope",
        "bn_momentum",
        "bn_epsilon",
    ];
}

pub(crate) fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// Accepts plain numbers and `a/b` fractions.
pub(crate) fn parse_fraction(key: &str, value: &str) -> Result<f64> {
    match value.split_once('/') {
        Some((a, b)) => Ok(parse_num::<f64>(key, a)? / parse_num::<f64>(key, b)?),
        None => parse_num(key, value),
    }
}

fn parse_blocks(value: &str) -> Result<[DenseBlockConfig; 5]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Config(format!("expected 5 blocks, got {} in `{value}`", parts.len())));
    }
    let mut out = [DenseBlockConfig::new(0, 0, 0); 5];
    for (slot, p) in out.iter_mut().zip(parts) {
        let f: Vec<&str> = p.split('x').collect();
        if f.len() != 3 {
            return Err(Error::Config(format!("block `{p}` is not layers x kernel x channels")));
        }
        *slot = DenseBlockConfig::new(parse_num("block", f[0])?, parse_num("block", f[1])?, parse_num("block", f[2])?);
    }
    Ok(out)
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got `{raw}`", no + 1)));
        };
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", no + 1)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_channel_plan() {
        let c = RedNetConfig::paper();
        let widths: Vec<usize> = (0..5).map(|i| c.encoder_width(i)).collect();
        assert_eq!(widths, vec![64, 64, 128, 256, 512]);
        let layers: Vec<usize> = c.encoder.iter().map(|b| b.num_layers).collect();
        assert_eq!(layers, vec![2, 2, 3, 3, 4]);
        let dec: Vec<usize> = c.decoder.iter().map(|b| b.num_layers).collect();
        assert_eq!(dec, vec![4, 3, 3, 2, 2]);
        assert_eq!(c.recursion_depth, 2);
        assert_eq!(c.input_channels(), 4);
        c.validate().unwrap();
    }

    #[test]
    fn desk_divides_widths_by_eight() {
        let c = RedNetConfig::desk();
        let widths: Vec<usize> = (0..5).map(|i| c.encoder_width(i)).collect();
        assert_eq!(widths, vec![8, 8, 16, 32, 64]);
    }

    #[test]
    fn text_round_trip() {
        let c = RedNetConfig::desk().with_depth(4);
        assert_eq!(RedNetConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = RedNetConfig::paper();
        c.encoder[2].num_layers = 0;
        assert!(c.validate().is_err());
        let mut c = RedNetConfig::paper();
        c.encoder[0].kernel_size = 4;
        assert!(c.validate().is_err());
        let mut c = RedNetConfig::paper();
        c.decoder[1].out_channels = 99;
        assert!(c.validate().unwrap_err().to_string().contains("mirrors"));
        assert!(RedNetConfig::paper().set("bogus", "1").is_err());
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_fraction("k", "1/8").unwrap(), 0.125);
        assert_eq!(parse_fraction("k", "0.5").unwrap(), 0.5);
    }
}

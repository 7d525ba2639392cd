//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "RDNTCKPT"
//! version    u32      1
//! scalar     u8       4 (f32) or 8 (f64)
//! config     u32 length + UTF-8 `key=value` lines of the network config
//! meta       u32 length + UTF-8 `key=value` lines of free-form metadata
//! count      u32      number of entries
//! entry*     u8 kind      0 parameter, 1 running mean, 2 running variance,
//!                         3 Adam first moment, 4 Adam second moment, 5 Adam step
//!            u32 length + UTF-8 layer path
//!            u8 flags     parameter role for kind 0, "initialized" for kinds 1-2
//!            u32 rank, then rank x u64 extents
//!            product(extents) scalars of the declared width
//!                         (kind 5 has rank 0 and a single u64 payload instead)
//! ```
//!
//! Entries are written in sorted path order, so saving the same state twice
//! produces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::{parse_key_values, RedNetConfig};
use crate::model::params::{ModelParameters, Param, ParamKind, RunningStats};
use crate::tensor::{Real, Tensor};
use crate::training::adam::{AdamConfig, AdamState};

const MAGIC: &[u8; 8] = b"RDNTCKPT";
const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_MEAN: u8 = 1;
const KIND_VAR: u8 = 2;
const KIND_ADAM_M: u8 = 3;
const KIND_ADAM_V: u8 = 4;
const KIND_ADAM_T: u8 = 5;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParameters<T>,
    pub optimizer: Option<AdamState<T>>,
    /// Free-form `key=value` metadata (training counters, config echo, ...).
    pub meta: BTreeMap<String, String>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn entry<T: Real>(&mut self, kind: u8, name: &str, flags: u8, shape: &[usize], data: &[T]) {
        self.u8(kind);
        self.text(name);
        self.u8(flags);
        self.u32(shape.len() as u32);
        shape.iter().for_each(|&d| self.u64(d as u64));
        data.iter().for_each(|&v| v.write_le(&mut self.buf));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8 string"))
    }
}

fn meta_text(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

impl<T: Real> Checkpoint<T> {
    pub fn new(params: ModelParameters<T>) -> Self {
        Self { params, optimizer: None, meta: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u8(T::BYTES as u8);
        w.text(&self.params.config.to_text());
        let mut meta = self.meta.clone();
        if let Some(opt) = &self.optimizer {
            let c = opt.config;
            meta.insert("adam.lr".into(), c.lr.to_string());
            meta.insert("adam.beta1".into(), c.beta1.to_string());
            meta.insert("adam.beta2".into(), c.beta2.to_string());
            meta.insert("adam.eps".into(), c.eps.to_string());
            meta.insert("adam.weight_decay".into(), c.weight_decay.to_string());
        }
        w.text(&meta_text(&meta));
        let mut count = self.params.iter().count() + 2 * self.params.running_iter().count();
        if let Some(opt) = &self.optimizer {
            count += opt.m.len() + opt.v.len() + 1;
        }
        w.u32(count as u32);
        for (name, p) in self.params.iter() {
            w.entry(KIND_PARAM, name, p.kind.code(), p.tensor.shape(), p.tensor.data());
        }
        for (name, r) in self.params.running_iter() {
            w.entry(KIND_MEAN, name, r.initialized as u8, &[r.mean.len()], &r.mean);
            w.entry(KIND_VAR, name, r.initialized as u8, &[r.var.len()], &r.var);
        }
        if let Some(opt) = &self.optimizer {
            for (name, m) in &opt.m {
                w.entry(KIND_ADAM_M, name, 0, &[m.len()], m);
            }
            for (name, v) in &opt.v {
                w.entry(KIND_ADAM_V, name, 0, &[v.len()], v);
            }
            w.entry::<T>(KIND_ADAM_T, "t", 0, &[], &[]);
            w.u64(opt.t);
        }
        w.buf
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let width = r.u8()? as usize;
        if width != T::BYTES {
            return Err(Error::format(path, format!("checkpoint holds {width}-byte scalars, expected {}", T::BYTES)));
        }
        let config = RedNetConfig::from_text(&r.text()?).map_err(|e| Error::format(path, e.to_string()))?;
        let mut meta = parse_key_values(&r.text()?).map_err(|e| Error::format(path, e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        let mut means: BTreeMap<String, (Vec<T>, bool)> = BTreeMap::new();
        let mut vars: BTreeMap<String, Vec<T>> = BTreeMap::new();
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        let mut adam_t = None;
        for _ in 0..count {
            let kind = r.u8()?;
            let name = r.text()?;
            let flags = r.u8()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if kind == KIND_ADAM_T {
                adam_t = Some(r.u64()?);
                continue;
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(T::BYTES).ok_or_else(|| Error::format(path, "entry too large"))?)?;
            let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            match kind {
                KIND_PARAM => {
                    let kind = ParamKind::from_code(flags)
                        .ok_or_else(|| Error::format(path, format!("unknown parameter role {flags} for `{name}`")))?;
                    params.insert(name, Param { kind, tensor: Tensor::new(shape, data)? });
                }
                KIND_MEAN => {
                    means.insert(name, (data, flags != 0));
                }
                KIND_VAR => {
                    vars.insert(name, data);
                }
                KIND_ADAM_M => {
                    adam_m.insert(name, data);
                }
                KIND_ADAM_V => {
                    adam_v.insert(name, data);
                }
                other => return Err(Error::format(path, format!("unknown entry kind {other}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last entry"));
        }
        let mut running = BTreeMap::new();
        for (name, (mean, initialized)) in means {
            let var = vars.remove(&name).ok_or_else(|| Error::format(path, format!("`{name}` has no variance entry")))?;
            running.insert(name, RunningStats { mean, var, initialized });
        }
        let params = ModelParameters::from_parts(config, params, running).map_err(|e| Error::format(path, e.to_string()))?;
        let optimizer = match adam_t {
            None => None,
            Some(t) => {
                let mut take = |key: &str| -> Result<f64> {
                    let v = meta.remove(key).ok_or_else(|| Error::format(path, format!("missing `{key}`")))?;
                    v.parse().map_err(|_| Error::format(path, format!("bad `{key}` value `{v}`")))
                };
                let config = AdamConfig {
                    lr: take("adam.lr")?,
                    beta1: take("adam.beta1")?,
                    beta2: take("adam.beta2")?,
                    eps: take("adam.eps")?,
                    weight_decay: take("adam.weight_decay")?,
                };
                let state = AdamState { config, t, m: adam_m, v: adam_v };
                let fresh = AdamState::new(&params, config);
                let same_layout = |a: &BTreeMap<String, Vec<T>>, b: &BTreeMap<String, Vec<T>>| {
                    a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.len() == vb.len())
                };
                if !same_layout(&state.m, &fresh.m) || !same_layout(&state.v, &fresh.v) {
                    return Err(Error::format(path, "optimizer moments do not match the parameters"));
                }
                Some(state)
            }
        };
        Ok(Self { params, optimizer, meta })
    }
}

/// Scalar width (4 or 8 bytes) recorded in a checkpoint file.
pub fn checkpoint_precision(path: &Path) -> Result<usize> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    Ok(bytes[12] as usize)
}

pub fn save_checkpoint<T: Real>(checkpoint: &Checkpoint<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn sample() -> Checkpoint<f32> {
        let mut params = build_model::<f32>(&RedNetConfig::desk(), 4).unwrap();
        let update = crate::autodiff::BatchStats { mean: vec![0.5; 8], var: vec![2.0; 8] };
        params.apply_norm_updates(&[("enc1.l1.bn".into(), update)]).unwrap();
        let mut opt = AdamState::new(&params, AdamConfig::default());
        opt.t = 17;
        opt.m.get_mut("head.conv.bias").unwrap()[0] = 0.25;
        let mut ck = Checkpoint::new(params);
        ck.optimizer = Some(opt);
        ck.meta.insert("step".into(), "17".into());
        ck
    }

    #[test]
    fn bitwise_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.params.running("enc1.l1.bn").unwrap().initialized);
        assert!(!back.params.running("enc1.l2.bn").unwrap().initialized);
    }

    #[test]
    fn file_round_trip_and_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let ck = Checkpoint::new(build_model::<f64>(&RedNetConfig::desk().with_depth(1), 2).unwrap());
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(checkpoint_precision(&path).unwrap(), 8);
        assert_eq!(load_checkpoint::<f64>(&path).unwrap(), ck);
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("8-byte") && err.contains("model.ckpt"), "{err}");
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 40, bytes.len() - 1] {
            assert!(Checkpoint::<f32>::from_bytes(&bytes[..cut], Path::new("x")).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bad, Path::new("x")).is_err());
    }
}

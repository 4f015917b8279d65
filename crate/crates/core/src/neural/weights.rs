//! Named tensors for every learned head and their binary file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  "NKWT"
//! u32    version
//! u32    tensor count
//! per tensor, sorted by name:
//!   u32  name length, then UTF-8 name bytes
//!   u8   rank, then rank × u64 dimensions
//!   f64  values, row-major
//! [u8; 32] SHA-256 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ModelConfig, TransitionForm};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NKWT";
pub const WEIGHTS_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    tensors: BTreeMap<String, Tensor>,
}

/// Logit of the default transition factor 0.999.
const A_BIAS: f64 = 6.906_754_778_648_554;
/// `softplus⁻¹(1)`.
const SOFTPLUS_ONE: f64 = 0.541_324_854_612_918_1;

fn lstm_shapes(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, input: usize, hidden: usize) {
    out.insert(format!("{prefix}.w_ih"), vec![4 * hidden, input]);
    out.insert(format!("{prefix}.w_hh"), vec![4 * hidden, hidden]);
    out.insert(format!("{prefix}.b"), vec![4 * hidden]);
}

fn linear_shapes(
    out: &mut BTreeMap<String, Vec<usize>>,
    prefix: &str,
    input: usize,
    output: usize,
) {
    out.insert(format!("{prefix}.w"), vec![output, input]);
    out.insert(format!("{prefix}.b"), vec![output]);
}

/// Every tensor the configuration requires, with its shape.
pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let f = cfg.n_bins;
    let h = cfg.lstm_hidden;
    let c = cfg.conv_channels;
    let k = cfg.conv_kernel;
    let mut s = BTreeMap::new();
    linear_shapes(&mut s, "feat.proj", cfg.feature_dim(), cfg.feature_proj_dim);
    for l in 0..cfg.lstm_layers {
        let input = if l == 0 { cfg.feature_proj_dim } else { h };
        lstm_shapes(&mut s, &format!("trunk.{l}"), input, h);
    }
    linear_shapes(&mut s, "a", h, 1);
    linear_shapes(&mut s, "g.lin", h, c * f);
    s.insert("g.conv1.w".into(), vec![c, c, k]);
    s.insert("g.conv1.b".into(), vec![c]);
    s.insert("g.conv2.w".into(), vec![2 * cfg.crf_taps(), c, k]);
    s.insert("g.conv2.b".into(), vec![2 * cfg.crf_taps()]);
    let t = cfg.t_lstm_hidden;
    linear_shapes(&mut s, "t.in", 2 * f, t);
    lstm_shapes(&mut s, "t.cell", t, t);
    linear_shapes(&mut s, "t.out_re", t, f);
    linear_shapes(&mut s, "t.out_im", t, f);
    let q = cfg.psi_lstm_hidden;
    for head in ["psi_vv", "psi_dd"] {
        linear_shapes(&mut s, &format!("{head}.in"), 4 * f, q);
        lstm_shapes(&mut s, &format!("{head}.cell"), q, q);
        linear_shapes(&mut s, &format!("{head}.out"), q, f);
    }
    s
}

/// Channel of the real part of the current-frame, centre-bin cRF tap.
pub fn crf_identity_channel(cfg: &ModelConfig) -> usize {
    (cfg.crf_time_taps - 1) * cfg.crf_freq_taps + (cfg.crf_freq_taps - 1) / 2
}

impl ModelWeights {
    /// Deterministic initialization. Every head starts close to the
    /// classical filter: Â ≈ 0.999, identity cRF, identity `t(·)` (residual
    /// form) and unit covariance corrections.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in expected_shapes(cfg) {
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let bound = if shape.len() == 1 {
                // Biases share the fan-in of their weight.
                1.0 / (bias_fan_in(cfg, &name) as f64).sqrt()
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let mut t = Tensor::zeros(shape);
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
            tensors.insert(name, t);
        }
        let mut w = Self { tensors };
        w.apply_head_init(cfg);
        w.validate(cfg)?;
        Ok(w)
    }

    fn apply_head_init(&mut self, cfg: &ModelConfig) {
        let set = |w: &mut Self, name: &str, f: &dyn Fn(&mut [f64])| {
            f(&mut w.tensors.get_mut(name).expect("known tensor").data)
        };
        let forget_one =
            |h: usize| move |b: &mut [f64]| b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        for l in 0..cfg.lstm_layers {
            set(self, &format!("trunk.{l}.b"), &forget_one(cfg.lstm_hidden));
        }
        set(self, "t.cell.b", &forget_one(cfg.t_lstm_hidden));
        set(self, "a.b", &|b| b[0] = A_BIAS);
        set(self, "g.conv2.w", &|w| {
            w.iter_mut().for_each(|v| *v *= 0.01)
        });
        let id = crf_identity_channel(cfg);
        set(self, "g.conv2.b", &|b| {
            b.iter_mut().for_each(|v| *v = 0.0);
            b[id] = 1.0;
        });
        if cfg.t_form != TransitionForm::Direct {
            for name in ["t.out_re.w", "t.out_re.b", "t.out_im.w", "t.out_im.b"] {
                set(self, name, &|v| v.iter_mut().for_each(|x| *x = 0.0));
            }
        }
        for head in ["psi_vv", "psi_dd"] {
            set(
                self,
                &format!("{head}.cell.b"),
                &forget_one(cfg.psi_lstm_hidden),
            );
            set(self, &format!("{head}.out.w"), &|w| {
                w.iter_mut().for_each(|v| *v *= 0.01)
            });
            set(self, &format!("{head}.out.b"), &|b| {
                b.iter_mut().for_each(|v| *v = SOFTPLUS_ONE)
            });
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = expected_shapes(cfg);
        for (name, shape) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Weights(format!("missing tensor '{name}'")))?;
            if &t.shape != shape {
                return Err(Error::Weights(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Weights(format!(
                    "tensor '{name}' has the wrong number of values"
                )));
            }
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Weights(format!(
                    "tensor '{name}' has a non-finite value at {i}"
                )));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Weights(format!("unexpected tensor '{extra}'")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor '{name}'")))
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.num_params());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses and validates against `cfg`.
    pub fn from_bytes(bytes: &[u8], cfg: &ModelConfig) -> Result<Self> {
        let w = Self::parse(bytes)?;
        w.validate(cfg)?;
        Ok(w)
    }

    /// Parses without checking shapes against a configuration.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::Weights(format!(
                "bad magic {magic:?}, expected \"NKWT\""
            )));
        }
        let version = r.u32("version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!(
                "unsupported version {version}, expected {WEIGHTS_VERSION}"
            )));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let name_len = r.u32(&format!("name length of tensor #{i}"))? as usize;
            let name = std::str::from_utf8(r.take(name_len, &format!("name of tensor #{i}"))?)
                .map_err(|_| Error::Weights(format!("tensor #{i} name is not UTF-8")))?
                .to_string();
            let rank = r.take(1, &format!("rank of '{name}'"))?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64(&format!("shape of '{name}'"))?;
                shape.push(
                    usize::try_from(d)
                        .map_err(|_| Error::Weights(format!("'{name}' dimension too large")))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Weights(format!("truncated data for tensor '{name}'")))?;
            let raw = r.take(8 * n, &format!("data of '{name}'"))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!(
                    "tensor '{name}' holds non-finite values"
                )));
            }
            if tensors
                .insert(name.clone(), Tensor { shape, data })
                .is_some()
            {
                return Err(Error::Weights(format!("duplicate tensor '{name}'")));
            }
        }
        if r.remaining() > DIGEST_LEN {
            return Err(Error::Weights(format!(
                "{} trailing bytes after last tensor",
                r.remaining() - DIGEST_LEN
            )));
        }
        let body = r.pos;
        let stored = r.take(DIGEST_LEN, "checksum")?;
        if stored != Sha256::digest(&bytes[..body]).as_slice() {
            return Err(Error::Weights(
                "checksum mismatch: file is corrupted".into(),
            ));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, cfg).map_err(|e| match e {
            Error::Weights(msg) => Error::Weights(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn bias_fan_in(cfg: &ModelConfig, name: &str) -> usize {
    let shapes = expected_shapes(cfg);
    let stem = name.strip_suffix(".b").unwrap_or(name);
    [format!("{stem}.w"), format!("{stem}.w_ih")]
        .iter()
        .find_map(|w| shapes.get(w))
        .map(|s| s[1..].iter().product())
        .unwrap_or(1)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Weights(format!(
                "file truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

//! Binary checkpoint format.
//!
//! Layout: magic `CLGN`, u32 version, length-prefixed UTF-8 config text,
//! u32 tensor count, then per tensor: u32 name length, name, u8 dtype tag,
//! u32 rank, u32 extents, little-endian payload. RNG state (32-byte seed,
//! u64 stream, u128 word position) and the u64 Adam/step counters are
//! appended. All integers little-endian. A reload reproduces training
//! bitwise from the saved step.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator};
use crate::tensor::{DType, Scalar, Tensor};
use crate::train::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"CLGN";
pub const VERSION: u32 = 1;

/// Serializable RNG snapshot of the training-loop stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

pub struct Checkpoint<S: Scalar> {
    pub version: u32,
    pub config: TrainConfig,
    pub gen: Generator<S>,
    pub dsc: Discriminator<S>,
    pub adam_g: AdamState<S>,
    pub adam_d: AdamState<S>,
    pub rng: RngState,
    pub step: u64,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<S: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<S>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(S::DTYPE.tag());
    put_u32(out, t.shape().len() as u32);
    for &e in t.shape() {
        put_u32(out, e as u32);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        let b = self.take(16)?;
        Ok(u128::from_le_bytes(b.try_into().expect("16 bytes")))
    }
}

impl<S: Scalar> std::fmt::Debug for Checkpoint<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("version", &self.version)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        let cfg = self.config.to_text();
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());

        let n_tensors = 3 * (self.gen.params.len() + self.dsc.params.len());
        put_u32(&mut out, n_tensors as u32);
        for (prefix, params, state) in [
            ("g", &self.gen.params, &self.adam_g),
            ("d", &self.dsc.params, &self.adam_d),
        ] {
            for (i, p) in params.iter().enumerate() {
                put_tensor(&mut out, &format!("{prefix}.{}", p.name), &p.value);
                put_tensor(&mut out, &format!("m{prefix}.{}", p.name), &state.m[i]);
                put_tensor(&mut out, &format!("v{prefix}.{}", p.name), &state.v[i]);
            }
        }

        out.extend_from_slice(&self.rng.seed);
        put_u64(&mut out, self.rng.stream);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u64(&mut out, self.adam_g.t);
        put_u64(&mut out, self.adam_d.t);
        put_u64(&mut out, self.step);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path: origin.to_string(),
        };
        if r.take(4)? != MAGIC {
            r.pos = 0;
            return Err(r.err("bad magic, not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}, expected {VERSION}")));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_bytes = r.take(cfg_len)?;
        let cfg_text = std::str::from_utf8(cfg_bytes)
            .map_err(|_| r.err("config text is not valid UTF-8"))?;
        let config = TrainConfig::from_text(cfg_text)?;

        // rebuild network structure from the config, then fill values by name
        let (seed_g, seed_d, _) = super::derive_seeds(config.seed);
        let mut gen = Generator::<S>::build(config.generator_spec(), seed_g)?;
        let mut dsc = Discriminator::<S>::build(config.discriminator_spec(), seed_d)?;
        let mut adam_g = AdamState::new(config.adam, &gen.params.shapes());
        let mut adam_d = AdamState::new(config.adam, &dsc.params.shapes());

        let n_tensors = r.u32()? as usize;
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.err("tensor name is not valid UTF-8"))?
                .to_string();
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| r.err(format!("unknown dtype tag {tag}")))?;
            if dtype != S::DTYPE {
                return Err(r.err(format!(
                    "dtype mismatch for '{name}': file has {dtype:?}",
                )));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * S::DTYPE.size())?;
            let data: Vec<S> = payload
                .chunks_exact(S::DTYPE.size())
                .map(S::read_le)
                .collect();
            let tensor = Tensor::new(shape, data)?;

            let (kind, param_name) = name
                .split_once('.')
                .ok_or_else(|| r.err(format!("malformed tensor name '{name}'")))?;
            let assign = |params: &mut crate::layers::ParamSet<S>,
                          state: &mut AdamState<S>,
                          moment: u8|
             -> Result<()> {
                let idx = params
                    .iter()
                    .position(|p| p.name == param_name)
                    .ok_or_else(|| {
                        Error::Format {
                            path: origin.to_string(),
                            offset: 0,
                            msg: format!("tensor '{name}' does not match the config's architecture"),
                        }
                    })?;
                match moment {
                    0 => params.set_value(idx, tensor.clone())?,
                    1 => state.m[idx] = tensor.clone(),
                    _ => state.v[idx] = tensor.clone(),
                }
                Ok(())
            };
            match kind {
                "g" => assign(&mut gen.params, &mut adam_g, 0)?,
                "mg" => assign(&mut gen.params, &mut adam_g, 1)?,
                "vg" => assign(&mut gen.params, &mut adam_g, 2)?,
                "d" => assign(&mut dsc.params, &mut adam_d, 0)?,
                "md" => assign(&mut dsc.params, &mut adam_d, 1)?,
                "vd" => assign(&mut dsc.params, &mut adam_d, 2)?,
                other => return Err(r.err(format!("unknown tensor group '{other}'"))),
            }
        }

        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let t_g = r.u64()?;
        let t_d = r.u64()?;
        let step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        adam_g.t = t_g;
        adam_d.t = t_d;

        Ok(Checkpoint {
            version,
            config,
            gen,
            dsc,
            adam_g,
            adam_d,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref())?;
        Self::from_bytes(&bytes, &path.as_ref().display().to_string())
    }
}

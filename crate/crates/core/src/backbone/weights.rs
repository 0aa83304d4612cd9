//! Named weight tensors and their on-disk format.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic      b"PTWT"
//! version    u32 (= 1)
//! cfg_hash   u64   first 8 bytes of SHA-256 over the JSON config
//! seed       u64
//! count      u32
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, offset u64 }
//! data       f32 values; each tensor starts at `offset` bytes into this section
//! trailer    SHA-256 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{BackboneConfig, HEAD_CHANNELS, STAGES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PTWT";
const VERSION: u32 = 1;
const DIGEST_BYTES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

/// Every tensor name, shape and init rule, in canonical order.
fn layout(cfg: &BackboneConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let linear = |out: &mut Vec<_>, name: &str, o: usize, i: usize| {
        out.push((format!("{name}.weight"), vec![o, i], Init::Uniform { fan_in: i }));
        out.push((format!("{name}.bias"), vec![o], Init::Uniform { fan_in: i }));
    };
    let norm = |out: &mut Vec<_>, name: &str, c: usize| {
        out.push((format!("{name}.gamma"), vec![c], Init::Ones));
        out.push((format!("{name}.beta"), vec![c], Init::Zeros));
    };
    let mut cin = cfg.in_channels;
    for k in 0..STAGES {
        let c = cfg.channels[k];
        let s = cfg.strides[k];
        linear(&mut out, &format!("stage{k}.embed"), c, cin * s * s);
        norm(&mut out, &format!("stage{k}.embed.norm"), c);
        for b in 0..cfg.depths[k] {
            let p = format!("stage{k}.block{b}");
            norm(&mut out, &format!("{p}.norm1"), c);
            linear(&mut out, &format!("{p}.attn.q"), c, c);
            if cfg.sr_ratios[k] > 1 {
                norm(&mut out, &format!("{p}.attn.sr_norm"), c);
            }
            linear(&mut out, &format!("{p}.attn.kv"), 2 * c, c);
            linear(&mut out, &format!("{p}.attn.proj"), c, c);
            norm(&mut out, &format!("{p}.norm2"), c);
            let hidden = c * cfg.mlp_ratios[k];
            if hidden > 0 {
                linear(&mut out, &format!("{p}.mlp.fc1"), hidden, c);
                linear(&mut out, &format!("{p}.mlp.fc2"), c, hidden);
            }
        }
        norm(&mut out, &format!("stage{k}.norm"), c);
        cin = c;
    }
    let cf = cfg.fused_channels();
    for k in 0..STAGES {
        let c = cfg.channels[k];
        for proj in ["q", "k", "v", "o"] {
            linear(&mut out, &format!("neck.scale{k}.{proj}"), c, c);
        }
        linear(&mut out, &format!("neck.scale{k}.fuse"), cf, c);
    }
    linear(&mut out, "head.hidden", cf, cf);
    linear(&mut out, "head.out", HEAD_CHANNELS, cf);
    out
}

fn config_hash(cfg: &BackboneConfig) -> u64 {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Immutable after construction; share it by reference across forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub seed: u64,
    pub config_hash: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing weight tensor {name}")))
    }

    pub fn matrix(&self, name: &str) -> Result<ArrayView2<'_, f32>> {
        let t = self.get(name)?;
        if t.shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!("{name} is not a matrix")));
        }
        Ok(ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("shape matches data"))
    }

    pub fn vector(&self, name: &str) -> Result<ArrayView1<'_, f32>> {
        let t = self.get(name)?;
        Ok(ArrayView1::from(&t.data[..]))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Checks names and shapes against what `cfg` requires.
    pub fn check_against(&self, cfg: &BackboneConfig) -> Result<()> {
        let expected = layout(cfg);
        if expected.len() != self.tensors.len() {
            return Err(Error::ShapeMismatchOnLoad(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.shape == shape => {}
                Some(t) => {
                    return Err(Error::ShapeMismatchOnLoad(format!(
                        "{name}: expected {shape:?}, found {:?}",
                        t.shape
                    )));
                }
                None => return Err(Error::ShapeMismatchOnLoad(format!("missing {name}"))),
            }
        }
        Ok(())
    }
}

/// Deterministic init: weights and biases uniform in `±1/sqrt(fan_in)`,
/// norm gains 1 and offsets 0, drawn from one ChaCha8 stream in canonical
/// tensor order.
pub fn init_weights(cfg: &BackboneConfig, seed: u64) -> Result<WeightStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout(cfg)
        .into_iter()
        .map(|(name, shape, init)| {
            let t = match init {
                Init::Ones => Tensor::filled(shape, 1.0),
                Init::Zeros => Tensor::zeros(shape),
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    let n: usize = shape.iter().product();
                    Tensor {
                        shape,
                        data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                    }
                }
            };
            (name, t)
        })
        .collect();
    Ok(WeightStore {
        seed,
        config_hash: config_hash(cfg),
        tensors,
    })
}

pub fn encode_weights(w: &WeightStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&w.config_hash.to_le_bytes());
    out.extend_from_slice(&w.seed.to_le_bytes());
    out.extend_from_slice(&(w.tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &w.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.data.len() as u64;
    }
    for t in w.tensors.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptWeightFile("unexpected end of header".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and checksums a weight file image without checking it against a config.
pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < MAGIC.len() + DIGEST_BYTES || &bytes[..4] != MAGIC {
        return Err(Error::CorruptWeightFile("bad magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_BYTES);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::CorruptWeightFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptWeightFile(format!("unsupported version {version}")));
    }
    let config_hash = r.u64()?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut directory = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CorruptWeightFile("tensor name is not utf-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        directory.push((name, shape, offset));
    }
    let data = &body[r.pos..];
    let mut tensors = BTreeMap::new();
    for (name, shape, offset) in directory {
        let n: usize = shape.iter().product();
        let bytes = offset
            .checked_add(4 * n)
            .filter(|&end| end <= data.len())
            .map(|end| &data[offset..end])
            .ok_or_else(|| Error::CorruptWeightFile(format!("{name} runs past the data section")))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor { shape, data: values });
    }
    Ok(WeightStore {
        seed,
        config_hash,
        tensors,
    })
}

pub fn save_weights(w: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(w))?;
    Ok(())
}

/// Loads a weight file and verifies it matches `cfg`.
pub fn load_weights(path: impl AsRef<Path>, cfg: &BackboneConfig) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let w = decode_weights(&bytes)?;
    if w.config_hash != config_hash(cfg) {
        return Err(Error::ShapeMismatchOnLoad(
            "weights were saved for a different backbone config".into(),
        ));
    }
    w.check_against(cfg)?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BackboneConfig {
        BackboneConfig {
            in_channels: 4,
            depths: [1, 0, 1, 0],
            channels: [8, 16, 40, 64],
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_store() {
        let a = init_weights(&small(), 11).unwrap();
        assert_eq!(a, init_weights(&small(), 11).unwrap());
        assert_ne!(a, init_weights(&small(), 12).unwrap());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = init_weights(&small(), 3).unwrap();
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path, &small()).unwrap();
        assert_eq!(back, w);
        let bits = |s: &WeightStore| -> Vec<u32> {
            s.tensors.values().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&w));
    }

    #[test]
    fn wrong_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&init_weights(&small(), 3).unwrap(), &path).unwrap();
        let other = small().with_depths([2, 0, 1, 0]);
        assert!(matches!(
            load_weights(&path, &other),
            Err(Error::ShapeMismatchOnLoad(_))
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = encode_weights(&init_weights(&small(), 3).unwrap());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_weights(&bytes), Err(Error::CorruptWeightFile(_))));
        assert!(matches!(decode_weights(b"nope"), Err(Error::CorruptWeightFile(_))));
    }

    #[test]
    fn uniform_bound_respected() {
        let w = init_weights(&small(), 9).unwrap();
        let t = w.get("stage2.block0.mlp.fc2.weight").unwrap();
        let bound = 1.0 / ((40 * 4) as f32).sqrt();
        assert!(t.data.iter().all(|v| v.abs() <= bound));
        assert!(w.get("stage0.block0.norm1.gamma").unwrap().data.iter().all(|&v| v == 1.0));
    }
}

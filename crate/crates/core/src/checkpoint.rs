//! Binary checkpoints with a JSON sidecar.
//!
//! Layout (little-endian): magic `HKD1`, `u32` tensor count, then per tensor
//! a `u16` name length, the UTF-8 name, a `u8` rank, `u32` dimensions and
//! the `f32` values in row-major order. The sidecar sits next to the binary
//! with the extension replaced by `json` and holds the model configuration,
//! vocabulary, label set and training metadata.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use hkd_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, Vocabulary};
use crate::error::{HkdError, Result};
use crate::model::{Labeler, ModelConfig};

pub const MAGIC: &[u8; 4] = b"HKD1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epoch: usize,
    pub valid_accuracy: f64,
    pub precision: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub labels: LabelSet,
    pub training: TrainingMeta,
}

/// A model together with everything needed to run it on text.
#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub model: Labeler<F>,
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    pub training: TrainingMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn bad(msg: impl Into<String>) -> HkdError {
    HkdError::Checkpoint(msg.into())
}

pub fn write_tensors(mut w: impl Write, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    let count = u32::try_from(tensors.len()).map_err(|_| bad("too many tensors"))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("rank too large: {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("dimension too large: {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => bad("truncated file"),
        _ => e.into(),
    })?;
    Ok(b)
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<(String, Tensor<f32>)>> {
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_exact::<1>(&mut r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(read_exact(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|_| bad(format!("truncated values for {name}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(out)
}

impl<F: Real> Checkpoint<F> {
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            format_version: FORMAT_VERSION,
            config: self.model.config().clone(),
            vocab: self.vocab.tokens().to_vec(),
            labels: self.labels.clone(),
            training: self.training.clone(),
        }
    }

    /// Writes the binary to `path` and the sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, Tensor<f32>)> = self
            .model
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.cast()))
            .collect();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &tensors)?;
        fs::write(path, buf)?;
        let mut json = serde_json::to_vec_pretty(&self.sidecar())?;
        json.push(b'\n');
        fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        if side.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", side.format_version)));
        }
        let tensors = read_tensors(io::BufReader::new(fs::File::open(path)?))?;
        let tensors = tensors.into_iter().map(|(n, t)| (n, t.cast())).collect();
        let model = Labeler::from_params(side.config, tensors)?;
        let vocab = Vocabulary::new(side.vocab)?;
        if vocab.len() != model.config().vocab_size || side.labels.len() != model.config().label_count {
            return Err(bad("vocabulary or label set does not match the model geometry"));
        }
        Ok(Self {
            model,
            vocab,
            labels: side.labels,
            training: side.training,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2], vec![1.0f32, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("ab".into(), t)]).unwrap();
        let mut want = b"HKD1".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(2u16.to_le_bytes());
        want.extend(b"ab");
        want.push(1);
        want.extend(2u32.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
        let back = read_tensors(&buf[..]).unwrap();
        assert_eq!(back[0].0, "ab");
        assert_eq!(back[0].1.data(), &[1.0, -2.0]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(read_tensors(&b"HKD2\0\0\0\0"[..]).is_err());
        let t = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("x".into(), t)]).unwrap();
        assert!(read_tensors(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_tensors(&buf[..]).is_err());
    }
}

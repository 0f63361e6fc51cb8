//! Parameter checkpoints: a flat little-endian `f64` blob plus a JSON
//! manifest of names, shapes and byte offsets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{ParamSet, Tensor};

pub const FORMAT: &str = "flowlab-params";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub endianness: String,
    pub total_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(params: &ParamSet) -> (Vec<u8>, Manifest) {
    let mut blob = Vec::with_capacity(params.num_scalars() * 8);
    let mut tensors = Vec::new();
    for (name, t) in params.iter() {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            nbytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        dtype: "f64".into(),
        endianness: "little".into(),
        total_bytes: blob.len(),
        tensors,
    };
    (blob, manifest)
}

pub fn decode(blob: &[u8], manifest: &Manifest) -> Result<ParamSet> {
    if manifest.format != FORMAT || manifest.dtype != "f64" || manifest.endianness != "little" {
        return Err(LabError::config("unsupported checkpoint manifest"));
    }
    if blob.len() != manifest.total_bytes {
        return Err(LabError::config(format!(
            "checkpoint blob is {} bytes, manifest says {}",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        if e.nbytes != n * 8 || e.offset + e.nbytes > blob.len() {
            return Err(LabError::config(format!("bad extent for `{}`", e.name)));
        }
        let data = blob[e.offset..e.offset + e.nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok(params)
}

/// Write `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save(params: &ParamSet, dir: &Path, stem: &str) -> Result<()> {
    let (blob, manifest) = encode(params);
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    fs::write(&bin, blob).map_err(|e| LabError::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&json, text + "\n").map_err(|e| LabError::io(&json, e))?;
    Ok(())
}

pub fn load(dir: &Path, stem: &str) -> Result<ParamSet> {
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    let blob = fs::read(&bin).map_err(|e| LabError::io(&bin, e))?;
    let text = fs::read_to_string(&json).map_err(|e| LabError::io(&json, e))?;
    decode(&blob, &serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_contiguous_little_endian() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap()).unwrap();
        p.insert("b", Tensor::scalar(0.5)).unwrap();
        let (blob, m) = encode(&p);
        assert_eq!(m.tensors[1].offset, 16);
        assert_eq!(&blob[16..24], &0.5f64.to_le_bytes());
        assert!(decode(&blob, &m).unwrap().bit_identical(&p));
        assert!(decode(&blob[..8], &m).is_err());
    }
}

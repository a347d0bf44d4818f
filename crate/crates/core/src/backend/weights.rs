//! Flat tensor manifest: a directory with `index.json` mapping tensor names
//! to shapes and blob files, each blob raw little-endian `f32`.
//!
//! ```json
//! {"tensors": {"patch_embed.weight": {"shape": [64, 1024], "file": "patch_embed.weight.bin"}}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ModelConfig, TinyVit};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ManifestIndex {
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// Reads every tensor listed in `dir/index.json`.
pub fn load_tensors(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    let dir = dir.as_ref();
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: ManifestIndex = serde_json::from_str(&text)?;
    let mut out = BTreeMap::new();
    for (name, entry) in index.tensors {
        if entry.file.contains("..") || Path::new(&entry.file).is_absolute() {
            return Err(Error::Weights(format!(
                "tensor {name}: blob path escapes the manifest dir"
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n: usize = entry.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Weights(format!(
                "tensor {name}: blob holds {} bytes, shape {:?} needs {}",
                bytes.len(),
                entry.shape,
                n * 4
            )));
        }
        let mut data = vec![0f32; n];
        LittleEndian::read_f32_into(&bytes, &mut data);
        out.insert(
            name,
            Tensor {
                shape: entry.shape,
                data,
            },
        );
    }
    Ok(out)
}

pub fn save_tensors<'a>(
    dir: impl AsRef<Path>,
    tensors: impl IntoIterator<Item = (String, &'a Tensor)>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = ManifestIndex::default();
    for (name, t) in tensors {
        let file = format!("{name}.bin");
        let mut bytes = vec![0u8; t.data.len() * 4];
        LittleEndian::write_f32_into(&t.data, &mut bytes);
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        index.tensors.insert(
            name,
            TensorEntry {
                shape: t.shape.clone(),
                file,
            },
        );
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))
}

impl TinyVit {
    pub fn load_manifest(cfg: &ModelConfig, dir: impl AsRef<Path>) -> Result<Self> {
        TinyVit::from_tensors(cfg, load_tensors(dir)?)
    }

    pub fn save_manifest(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_tensors(dir, self.named_tensors())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Backend;
    use crate::prompts::{PointPrompt, PromptSet};
    use crate::volume::{IntensityVolume, VolumeMeta};

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_shape: [16, 16, 8],
            patch: [8, 8, 4],
            embed_dim: 8,
            depth: 1,
            heads: 2,
            seed: 3,
            pos_embed: true,
        }
    }

    #[test]
    fn manifest_roundtrip_reproduces_model() {
        let dir = tempfile::tempdir().unwrap();
        let m = TinyVit::new(&cfg()).unwrap();
        m.save_manifest(dir.path()).unwrap();
        let loaded = TinyVit::load_manifest(&cfg(), dir.path()).unwrap();
        let v = IntensityVolume::filled(VolumeMeta::new([16, 16, 8]), 0.25).unwrap();
        let ps = PromptSet::from_point(PointPrompt::positive([3, 3, 3]));
        let a = m.decode(&m.encode(&v).unwrap(), &ps).unwrap();
        let b = loaded.decode(&loaded.encode(&v).unwrap(), &ps).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_and_misshapen_tensors_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = TinyVit::new(&cfg()).unwrap();
        m.save_manifest(dir.path()).unwrap();
        let mut tensors = load_tensors(dir.path()).unwrap();
        tensors.remove("pos_embed");
        assert!(matches!(
            TinyVit::from_tensors(&cfg(), tensors),
            Err(Error::Weights(_))
        ));

        let mut tensors = load_tensors(dir.path()).unwrap();
        tensors.insert("decoder.head_bias".into(), Tensor::zeros(vec![2]));
        assert!(matches!(
            TinyVit::from_tensors(&cfg(), tensors),
            Err(Error::Weights(_))
        ));

        fs::write(dir.path().join("pos_embed.bin"), [0u8; 3]).unwrap();
        assert!(matches!(load_tensors(dir.path()), Err(Error::Weights(_))));
    }
}

//! Single-file `fusor-v1` checkpoints.
//!
//! Layout: the 8-byte magic `FUSORCKP`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor's values as little-endian
//! `f64` in manifest order. The manifest carries the format version, the
//! [`FusorConfig`], free-form metadata and each tensor's name and shape.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::FusorConfig;
use crate::error::{FusorError, Result};
use crate::param::{ParamBuilder, ParamGroup, Parameterized};
use crate::state::{FusorState, Linear};
use crate::tensor::Matrix;
use crate::train::RoutingModel;

pub const MAGIC: &[u8; 8] = b"FUSORCKP";
pub const FORMAT_VERSION: &str = "fusor-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: FusorConfig,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub values: Vec<Matrix>,
}

impl Checkpoint {
    pub fn capture(config: &FusorConfig, model: &dyn Parameterized) -> Self {
        let mut tensors = Vec::new();
        let mut values = Vec::new();
        model.visit_params(&mut |p| {
            tensors.push(TensorEntry {
                name: p.name().to_string(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            });
            values.push(p.value.clone());
        });
        Self {
            manifest: Manifest {
                format: FORMAT_VERSION.to_string(),
                config: config.clone(),
                meta: BTreeMap::new(),
                tensors,
            },
            values,
        }
    }

    pub fn with_meta(mut self, key: &str, value: serde_json::Value) -> Self {
        self.manifest.meta.insert(key.to_string(), value);
        self
    }

    /// Copies stored tensors into `model`, matching by name. Every model
    /// parameter must be present with the same shape.
    pub fn restore(&self, model: &mut dyn Parameterized) -> Result<()> {
        let by_name: BTreeMap<&str, (&TensorEntry, &Matrix)> = self
            .manifest
            .tensors
            .iter()
            .zip(&self.values)
            .map(|(e, v)| (e.name.as_str(), (e, v)))
            .collect();
        let mut err = None;
        let mut used = 0;
        model.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match by_name.get(p.name()) {
                Some((_, v)) if v.shape() == p.value.shape() => {
                    p.value = (*v).clone();
                    used += 1;
                }
                Some((e, _)) => {
                    err = Some(FusorError::Checkpoint(format!(
                        "tensor {} is {}x{}, model expects {:?}",
                        e.name,
                        e.rows,
                        e.cols,
                        p.value.shape()
                    )))
                }
                None => err = Some(FusorError::Checkpoint(format!("missing tensor {}", p.name()))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != by_name.len() {
            return Err(FusorError::Checkpoint(format!(
                "checkpoint holds {} tensors, model uses {used}",
                by_name.len()
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        out.write_all(MAGIC)?;
        out.write_all(&(manifest.len() as u64).to_le_bytes())?;
        out.write_all(&manifest)?;
        for m in &self.values {
            for v in m.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FusorError::Checkpoint("not a fusor checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| FusorError::Checkpoint("manifest length overflows".into()))?;
        let mut manifest = vec![0u8; len];
        input.read_exact(&mut manifest)?;
        let manifest: Manifest = serde_json::from_slice(&manifest)?;
        if manifest.format != FORMAT_VERSION {
            return Err(FusorError::Checkpoint(format!(
                "unsupported format `{}`, expected {FORMAT_VERSION}",
                manifest.format
            )));
        }
        let mut values = Vec::with_capacity(manifest.tensors.len());
        let mut buf = [0u8; 8];
        for e in &manifest.tensors {
            let mut data = Vec::with_capacity(e.rows * e.cols);
            for _ in 0..e.rows * e.cols {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            values.push(Matrix::from_vec(e.rows, e.cols, data));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(FusorError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { manifest, values })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(fs::File::open(path)?))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| FusorError::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_state(path: &Path, state: &FusorState) -> Result<()> {
    Checkpoint::capture(state.config(), state).save(path)
}

pub fn load_state(path: &Path) -> Result<FusorState> {
    let ckpt = Checkpoint::load(path)?;
    let mut state = FusorState::new(&ckpt.manifest.config)?;
    ckpt.restore(&mut state)?;
    Ok(state)
}

const CLASSES_KEY: &str = "num_classes";

pub fn save_model(path: &Path, model: &RoutingModel) -> Result<()> {
    Checkpoint::capture(model.config(), model)
        .with_meta(CLASSES_KEY, model.num_classes().into())
        .save(path)
}

pub fn load_model(path: &Path) -> Result<RoutingModel> {
    let ckpt = Checkpoint::load(path)?;
    let classes = ckpt
        .manifest
        .meta
        .get(CLASSES_KEY)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FusorError::Checkpoint("checkpoint has no classification head".into()))?;
    let fusor = FusorState::new(&ckpt.manifest.config)?;
    let mut b = ParamBuilder::starting_at(fusor.num_tensors(), 0);
    let head = Linear::new(&mut b, "head", ParamGroup::Head, ckpt.manifest.config.out_dim, classes as usize, true);
    let mut model = RoutingModel::from_parts(fusor, head)?;
    ckpt.restore(&mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::randomize;

    #[test]
    fn state_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.fusor");
        let mut state = FusorState::new(&FusorConfig::tiny()).unwrap();
        randomize(&mut state, 4, 0.7);
        save_state(&path, &state).unwrap();
        let back = load_state(&path).unwrap();
        assert_eq!(back, state);
        let mut a = Vec::new();
        let mut b = Vec::new();
        Checkpoint::capture(state.config(), &state).write_to(&mut a).unwrap();
        Checkpoint::capture(back.config(), &back).write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fusor");
        let mut model = RoutingModel::new(&FusorConfig::tiny(), 4).unwrap();
        randomize(&mut model, 9, 0.3);
        save_model(&path, &model).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        assert!(load_state(&path).is_err(), "head tensors are not part of a bare state");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let state = FusorState::new(&FusorConfig::tiny()).unwrap();
        let mut bytes = Vec::new();
        Checkpoint::capture(state.config(), &state).write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&bad[..]).is_err());
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::read_from(&long[..]).is_err());
    }
}

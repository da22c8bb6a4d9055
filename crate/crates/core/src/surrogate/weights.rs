//! Model files: a JSON manifest naming every tensor, plus a raw
//! little-endian `f32` payload next to it (`model.json` + `model.bin`).

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::TrainingMeta;
use super::{Architecture, PointwiseModel, SurrogateModel};
use crate::cochlea::{PARAM_NAMES, PARAM_RANGES};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::io::write_atomic;

pub const MODEL_FORMAT: &str = "sdmforge-model";
pub const MODEL_VERSION: u32 = 1;

/// Manifest entry for one tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    GridDecoder { architecture: Architecture },
    Pointwise { hidden: Vec<usize>, box_lo: Vec3, box_hi: Vec3, delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub kind: ModelKind,
    pub param_names: Vec<String>,
    pub param_ranges: Vec<(f64, f64)>,
    pub tensors: Vec<TensorEntry>,
    pub weight_count: usize,
    pub dtype: String,
    pub payload: String,
    pub meta: TrainingMeta,
}

/// Either kind of model file.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Grid(SurrogateModel),
    Pointwise(PointwiseModel),
}

/// Payload path for a manifest path: same stem, `.bin` extension.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn entries(tensors: Vec<super::TensorInfo>) -> Vec<TensorEntry> {
    tensors
        .into_iter()
        .map(|t| TensorEntry { name: t.name, shape: t.shape, offset: t.offset })
        .collect()
}

fn write_model(path: &Path, kind: ModelKind, tensors: Vec<TensorEntry>, weights: &[f32], meta: &TrainingMeta) -> Result<()> {
    let bin = payload_path(path);
    let manifest = Manifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind,
        param_names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        param_ranges: PARAM_RANGES.to_vec(),
        tensors,
        weight_count: weights.len(),
        dtype: "f32-le".into(),
        payload: bin.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        meta: meta.clone(),
    };
    write_atomic(&bin, |w| {
        for v in weights {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })?;
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn save_surrogate(model: &SurrogateModel, path: &Path) -> Result<()> {
    let kind = ModelKind::GridDecoder { architecture: model.architecture().clone() };
    write_model(path, kind, entries(model.tensors()), model.weights(), &model.meta)
}

pub fn save_pointwise(model: &PointwiseModel, path: &Path) -> Result<()> {
    let kind = ModelKind::Pointwise {
        hidden: model.hidden().to_vec(),
        box_lo: model.box_lo,
        box_hi: model.box_hi,
        delta: model.delta,
    };
    write_model(path, kind, entries(model.tensors()), model.weights(), &model.meta)
}

/// Reads and checks a manifest without touching the payload.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    match value.get("version") {
        Some(v) if v.as_u64() == Some(MODEL_VERSION as u64) => {}
        Some(v) => return Err(Error::format("model manifest", format!("unsupported version {v}"))),
        None => return Err(Error::format("model manifest", "missing version field")),
    }
    let m: Manifest = serde_json::from_value(value)?;
    if m.format != MODEL_FORMAT || m.dtype != "f32-le" {
        return Err(Error::format("model manifest", format!("unsupported {} / {}", m.format, m.dtype)));
    }
    if m.param_ranges != PARAM_RANGES.to_vec() {
        return Err(Error::format("model manifest", "normalization ranges differ from the parameter ranges"));
    }
    Ok(m)
}

fn read_payload(path: &Path, m: &Manifest, expected: Vec<TensorEntry>) -> Result<Vec<f32>> {
    if m.tensors != expected {
        return Err(Error::format("model manifest", "tensor list does not match the architecture"));
    }
    let count: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if m.weight_count != count {
        return Err(Error::format("model manifest", format!("weight_count {} but tensors hold {count}", m.weight_count)));
    }
    let bin = path.with_file_name(&m.payload);
    let bytes = fs::read(&bin)?;
    if bytes.len() != count * 4 {
        return Err(Error::format(
            "model payload",
            format!("{} bytes, manifest needs {}", bytes.len(), count * 4),
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let m = read_manifest(path)?;
    match &m.kind {
        ModelKind::GridDecoder { architecture } => {
            architecture.validate()?;
            let weights = read_payload(path, &m, entries(architecture.tensors()))?;
            Ok(ModelFile::Grid(SurrogateModel::from_parts(
                architecture.clone(),
                weights,
                PARAM_RANGES,
                m.meta.clone(),
            )?))
        }
        ModelKind::Pointwise { hidden, box_lo, box_hi, delta } => {
            // layout follows from the widths; a throwaway model lists the tensors
            let probe = PointwiseModel::from_parts(
                hidden.clone(),
                vec![0.0; m.weight_count],
                *box_lo,
                *box_hi,
                *delta,
                TrainingMeta::default(),
            )
            .map_err(|e| Error::format("model manifest", e.to_string()))?;
            let weights = read_payload(path, &m, entries(probe.tensors()))?;
            Ok(ModelFile::Pointwise(PointwiseModel::from_parts(
                hidden.clone(),
                weights,
                *box_lo,
                *box_hi,
                *delta,
                m.meta.clone(),
            )?))
        }
    }
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateModel> {
    match load_model(path)? {
        ModelFile::Grid(m) => Ok(m),
        ModelFile::Pointwise(_) => Err(Error::format("model file", "expected a grid decoder, found a point-wise model")),
    }
}

pub fn load_pointwise(path: &Path) -> Result<PointwiseModel> {
    match load_model(path)? {
        ModelFile::Pointwise(m) => Ok(m),
        ModelFile::Grid(_) => Err(Error::format("model file", "expected a point-wise model, found a grid decoder")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cochlea::default_grid_spec;
    use crate::surrogate::init_model_with;

    #[test]
    fn surrogate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = init_model_with(Architecture::reduced(), 4).unwrap();
        m.meta.final_loss = Some(0.25);
        save_surrogate(&m, &path).unwrap();
        assert!(dir.path().join("m.bin").exists());
        let back = load_surrogate(&path).unwrap();
        assert_eq!(back, m);
        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.version, 1);
        assert_eq!(manifest.tensors[0].name, "embed.0.weight");
        assert_eq!(manifest.tensors[0].shape, vec![8, 4]);
        assert!(load_pointwise(&path).is_err());
    }

    #[test]
    fn pointwise_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pw.json");
        let m = PointwiseModel::with_hidden(&[8, 8], 1, &default_grid_spec()).unwrap();
        save_pointwise(&m, &path).unwrap();
        assert_eq!(load_pointwise(&path).unwrap(), m);
    }

    #[test]
    fn missing_version_and_truncated_payload_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = init_model_with(Architecture::reduced(), 4).unwrap();
        save_surrogate(&m, &path).unwrap();

        let bin = payload_path(&path);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
        fs::write(&bin, &bytes).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("version");
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        v["version"] = serde_json::json!(2);
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn tampered_tensor_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_surrogate(&init_model_with(Architecture::reduced(), 4).unwrap(), &path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["tensors"][1]["offset"] = serde_json::json!(3);
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    }
}

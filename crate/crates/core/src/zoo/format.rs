//! Binary artifact envelope.
//!
//! ```text
//! "CDEC"                 4 bytes magic
//! version                u32 LE (currently 1)
//! header_len             u64 LE
//! header                 header_len bytes of UTF-8 JSON; `blocks` lists
//!                        {"name", "shape"} for every tensor block in order
//! blocks                 raw f64 LE, concatenated in header order
//! crc32                  u32 LE, CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Models, datasets, contribution matrices and SAE checkpoints all use this
//! envelope; the header's `kind` field says which.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::dataset::{Dataset, DatasetSpec, GroundTruth, Targets};
use crate::error::{CodecError, Result};
use crate::nn::{LayerKind, LayerSpec, ModelSpec, Tap};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CDEC";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    /// Free-form JSON object; `blocks` is filled in by the writer.
    pub header: Value,
    pub blocks: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    shape: Vec<usize>,
}

impl Envelope {
    pub fn new(kind: &str) -> Self {
        Envelope {
            header: json!({ "kind": kind }),
            blocks: Vec::new(),
        }
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(Value::as_str)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.blocks.push((name.into(), t));
    }

    pub fn block(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CodecError::Format(format!("missing block `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        let infos: Vec<BlockInfo> = self
            .blocks
            .iter()
            .map(|(n, t)| BlockInfo {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        header
            .as_object_mut()
            .ok_or_else(|| CodecError::Format("header must be a JSON object".into()))?
            .insert("blocks".into(), serde_json::to_value(infos)?);
        let header_bytes = serde_json::to_vec(&header)?;
        let n_values: usize = self.blocks.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(PREFIX + header_bytes.len() + 8 * n_values + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, t) in &self.blocks {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || CodecError::Format("truncated file".into());
        if bytes.len() < PREFIX + 4 {
            return Err(truncated());
        }
        if &bytes[..4] != MAGIC {
            return Err(CodecError::Format("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if header_len > bytes.len() || PREFIX + header_len + 4 > bytes.len() {
            return Err(truncated());
        }
        let header: std::result::Result<Value, _> = serde_json::from_slice(&bytes[PREFIX..PREFIX + header_len]);
        let infos: Option<Vec<BlockInfo>> = header
            .as_ref()
            .ok()
            .and_then(|h| h.get("blocks"))
            .and_then(|b| serde_json::from_value(b.clone()).ok());
        if let Some(infos) = &infos {
            let n_values: usize = infos.iter().map(|b| b.shape.iter().product::<usize>()).sum();
            let expected = PREFIX + header_len + 8 * n_values + 4;
            if bytes.len() < expected {
                return Err(truncated());
            }
            if bytes.len() > expected {
                return Err(CodecError::Format(format!(
                    "{} trailing bytes after payload",
                    bytes.len() - expected
                )));
            }
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CodecError::Checksum { stored, computed });
        }
        if version != FORMAT_VERSION {
            return Err(CodecError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header = header.map_err(|e| CodecError::Format(format!("header: {e}")))?;
        let infos = infos.ok_or_else(|| CodecError::Format("header lacks a block table".into()))?;
        let mut offset = PREFIX + header_len;
        let mut blocks = Vec::with_capacity(infos.len());
        for info in infos {
            let n: usize = info.shape.iter().product();
            let data = body[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
            blocks.push((info.name, Tensor::new(info.shape, data)?));
        }
        Ok(Envelope { header, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CodecError::MissingArtifact(path.display().to_string()),
            _ => CodecError::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        self.check_kind(kind)?;
        Ok(self)
    }

    pub fn check_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(CodecError::Format(format!("expected a `{kind}` artifact, found {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    kind: LayerKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    weight_shape: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    kernel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    source: Option<usize>,
}

pub fn model_to_envelope(model: &ModelSpec) -> Envelope {
    let mut env = Envelope::new("model");
    let mut layers = Vec::new();
    for (i, l) in model.layers().iter().enumerate() {
        let mut h = LayerHeader {
            kind: l.kind(),
            weight_shape: None,
            stride: None,
            padding: None,
            kernel: None,
            source: None,
        };
        match l {
            LayerSpec::Conv2d { stride, padding, .. } => {
                h.stride = Some(*stride);
                h.padding = Some(*padding);
            }
            LayerSpec::AvgPool { kernel, stride } => {
                h.kernel = Some(*kernel);
                h.stride = Some(*stride);
            }
            LayerSpec::ResidualAdd { source } => h.source = Some(*source),
            _ => {}
        }
        if let Some((w, b)) = l.params() {
            h.weight_shape = Some(w.shape().to_vec());
            env.push(format!("layer{i}.weight"), w.clone());
            env.push(format!("layer{i}.bias"), b.clone());
        }
        layers.push(h);
    }
    let obj = env.header.as_object_mut().expect("object");
    obj.insert("input_shape".into(), json!(model.input_shape()));
    obj.insert("layers".into(), serde_json::to_value(layers).expect("serializable"));
    obj.insert("taps".into(), serde_json::to_value(model.taps()).expect("serializable"));
    env
}

pub fn model_from_envelope(env: &Envelope) -> Result<ModelSpec> {
    let h = &env.header;
    let input_shape: Vec<usize> = serde_json::from_value(h.get("input_shape").cloned().unwrap_or(Value::Null))?;
    let headers: Vec<LayerHeader> = serde_json::from_value(h.get("layers").cloned().unwrap_or(Value::Null))?;
    let taps: Vec<Tap> = serde_json::from_value(h.get("taps").cloned().unwrap_or(Value::Null))?;
    let missing = |what: &str, i: usize| CodecError::Format(format!("layer {i}: missing `{what}`"));
    let mut layers = Vec::with_capacity(headers.len());
    for (i, lh) in headers.into_iter().enumerate() {
        let params = || -> Result<(Tensor, Tensor)> {
            Ok((
                env.block(&format!("layer{i}.weight"))?.clone(),
                env.block(&format!("layer{i}.bias"))?.clone(),
            ))
        };
        let layer = match lh.kind {
            LayerKind::Dense => {
                let (weight, bias) = params()?;
                LayerSpec::Dense { weight, bias }
            }
            LayerKind::Conv2d => {
                let (weight, bias) = params()?;
                LayerSpec::Conv2d {
                    weight,
                    bias,
                    stride: lh.stride.ok_or_else(|| missing("stride", i))?,
                    padding: lh.padding.ok_or_else(|| missing("padding", i))?,
                }
            }
            LayerKind::Relu => LayerSpec::Relu,
            LayerKind::Softplus => LayerSpec::Softplus,
            LayerKind::Flatten => LayerSpec::Flatten,
            LayerKind::ResidualAdd => LayerSpec::ResidualAdd {
                source: lh.source.ok_or_else(|| missing("source", i))?,
            },
            LayerKind::Avgpool => LayerSpec::AvgPool {
                kernel: lh.kernel.ok_or_else(|| missing("kernel", i))?,
                stride: lh.stride.ok_or_else(|| missing("stride", i))?,
            },
        };
        layers.push(layer);
    }
    ModelSpec::new(input_shape, layers, taps)
}

pub fn save_model(path: &Path, model: &ModelSpec) -> Result<()> {
    model_to_envelope(model).write(path)
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    model_from_envelope(&Envelope::read(path)?.expect_kind("model")?)
}

fn stack(ts: &[Tensor]) -> Result<Tensor> {
    let first = ts.first().ok_or_else(|| CodecError::Format("cannot stack zero tensors".into()))?;
    let mut shape = vec![ts.len()];
    shape.extend_from_slice(first.shape());
    let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

fn unstack(t: &Tensor) -> Result<Vec<Tensor>> {
    let inner = t.shape()[1..].to_vec();
    if inner.is_empty() {
        return Err(CodecError::Format("block is not stackable".into()));
    }
    let n: usize = inner.iter().product();
    t.data()
        .chunks_exact(n)
        .map(|c| Tensor::new(inner.clone(), c.to_vec()))
        .collect()
}

pub fn dataset_to_envelope(d: &Dataset) -> Result<Envelope> {
    let mut env = Envelope::new("dataset");
    env.header
        .as_object_mut()
        .expect("object")
        .insert("spec".into(), serde_json::to_value(&d.spec)?);
    env.push("inputs", stack(&d.inputs)?);
    match &d.targets {
        Targets::Labels(l) => env.push("labels", Tensor::from_vec(l.iter().map(|&c| c as f64).collect())),
        Targets::Rates(r) => env.push("rates", stack(r)?),
    }
    if let Some(gt) = &d.ground_truth {
        env.push("clean_rates", stack(&gt.clean_rates)?);
        env.push("cell_types", Tensor::from_vec(gt.cell_types.iter().map(|&c| c as f64).collect()));
        let gm = model_to_envelope(&gt.model);
        env.header
            .as_object_mut()
            .expect("object")
            .insert("ground_truth_model".into(), gm.header.clone());
        for (n, t) in gm.blocks {
            env.push(format!("gt.{n}"), t);
        }
    }
    Ok(env)
}

pub fn dataset_from_envelope(env: &Envelope) -> Result<Dataset> {
    let spec: DatasetSpec = serde_json::from_value(env.header.get("spec").cloned().unwrap_or(Value::Null))?;
    let inputs = unstack(env.block("inputs")?)?;
    let targets = if let Ok(l) = env.block("labels") {
        Targets::Labels(l.data().iter().map(|&v| v as usize).collect())
    } else {
        Targets::Rates(unstack(env.block("rates")?)?)
    };
    let ground_truth = match env.header.get("ground_truth_model") {
        Some(gh) => {
            let sub = Envelope {
                header: gh.clone(),
                blocks: env
                    .blocks
                    .iter()
                    .filter_map(|(n, t)| n.strip_prefix("gt.").map(|s| (s.to_string(), t.clone())))
                    .collect(),
            };
            Some(GroundTruth {
                model: model_from_envelope(&sub)?,
                clean_rates: unstack(env.block("clean_rates")?)?,
                cell_types: env.block("cell_types")?.data().iter().map(|&v| v as usize).collect(),
            })
        }
        None => None,
    };
    Ok(Dataset {
        spec,
        inputs,
        targets,
        ground_truth,
    })
}

pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    dataset_to_envelope(d)?.write(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_envelope(&Envelope::read(path)?.expect_kind("dataset")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_toy_cnn, generate_dataset, DatasetSpec, ToyCnnConfig};

    #[test]
    fn model_roundtrip_is_bit_exact() {
        let m = build_toy_cnn(&ToyCnnConfig::default()).unwrap();
        let bytes = model_to_envelope(&m).to_bytes().unwrap();
        let back = model_from_envelope(&Envelope::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_envelope(&back).to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let m = build_toy_cnn(&ToyCnnConfig::default()).unwrap();
        let mut bytes = model_to_envelope(&m).to_bytes().unwrap();
        let i = bytes.len() - 20;
        bytes[i] ^= 0x40;
        assert!(matches!(Envelope::from_bytes(&bytes), Err(CodecError::Checksum { .. })));
    }

    #[test]
    fn truncation_and_version_detected() {
        let m = build_toy_cnn(&ToyCnnConfig::default()).unwrap();
        let bytes = model_to_envelope(&m).to_bytes().unwrap();
        assert!(matches!(
            Envelope::from_bytes(&bytes[..bytes.len() - 9]),
            Err(CodecError::Format(msg)) if msg.contains("truncated")
        ));
        assert!(Envelope::from_bytes(&bytes[..10]).is_err());
        let mut v2 = bytes[..bytes.len() - 4].to_vec();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        let crc = crc32fast::hash(&v2);
        v2.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(Envelope::from_bytes(&v2), Err(CodecError::Version { found: 2, .. })));
    }

    #[test]
    fn dataset_roundtrip() {
        for spec in [DatasetSpec::shapes(12, 4, 2), DatasetSpec::stimulus(6, 4, 2)] {
            let d = generate_dataset(&spec).unwrap();
            let env = dataset_to_envelope(&d).unwrap();
            let back = dataset_from_envelope(&Envelope::from_bytes(&env.to_bytes().unwrap()).unwrap()).unwrap();
            assert_eq!(back, d);
        }
    }
}

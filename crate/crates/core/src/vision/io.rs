//! Binary model container.
//!
//! Layout: magic `WFMODEL\0`, `u32` format version, `u32` header length, JSON
//! header, normalization statistics as `f64`, then every parameter tensor in
//! header order as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nn::{Conv2d, Dense};
use crate::optim::LayerParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::backbone::{Backbone, BackboneConfig};
use super::model::{Head, MultiTaskModel, Normalization};
use super::schema::{LabelSchema, Task};

const MAGIC: &[u8; 8] = b"WFMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_hash: String,
    schema: LabelSchema,
    backbone: BackboneConfig,
    tasks: Vec<Task>,
    normalization_len: usize,
    tensors: Vec<TensorEntry>,
}

pub fn encode_model<T: Scalar>(model: &MultiTaskModel<T>) -> Result<Vec<u8>> {
    let params = model.params();
    let header = Header {
        schema_hash: model.schema.hash(),
        schema: model.schema.clone(),
        backbone: model.config.clone(),
        tasks: model.tasks(),
        normalization_len: model.normalization.mean.len(),
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.normalization.mean.iter().chain(&model.normalization.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::ModelFormat("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn tensor<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let data = self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Ok(Tensor::new(shape.to_vec(), data)?)
    }
}

/// Decodes a model, refusing files written under a different label schema.
pub fn decode_model<T: Scalar>(bytes: &[u8], expected: &LabelSchema) -> Result<MultiTaskModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let expected_hash = expected.hash();
    if header.schema_hash != expected_hash || header.schema.hash() != expected_hash {
        return Err(Error::SchemaMismatch {
            expected: expected_hash,
            found: header.schema_hash,
        });
    }
    let mean = r.f64s(header.normalization_len)?;
    let std = r.f64s(header.normalization_len)?;

    let mut model = MultiTaskModel::<T>::build(&header.schema, &header.backbone, &header.tasks, 0)?;
    let expected_entries: Vec<(String, Vec<usize>)> =
        model.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
    let found: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|e| (e.name, e.shape)).collect();
    if expected_entries != found {
        return Err(Error::ModelFormat("tensor list does not match the declared architecture".into()));
    }
    let mut values = Vec::with_capacity(found.len());
    for (_, shape) in &found {
        values.push(r.tensor::<T>(shape)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut values = values.into_iter();
    let mut next = |name: &str| LayerParams::new(name, values.next().unwrap(), values.next().unwrap());
    if let Some(b) = &model.backbone {
        let convs = b
            .convs()
            .enumerate()
            .map(|(i, c)| Conv2d::from_params(next(&format!("block{i}.conv")), c.stride, c.padding))
            .collect();
        model.backbone = Some(Backbone::from_convs(&header.backbone, convs)?);
    }
    for h in &mut model.heads {
        *h = Head {
            task: h.task,
            kind: h.kind,
            dense: Dense::from_params(next(&format!("head.{}", h.task))),
        };
    }
    model.normalization = Normalization { mean, std };
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &MultiTaskModel<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?).at(path)
}

pub fn load_model<T: Scalar>(path: &Path, expected: &LabelSchema) -> Result<MultiTaskModel<T>> {
    decode_model(&fs::read(path).at(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::BlockSpec;

    fn model() -> MultiTaskModel<f64> {
        let cfg = BackboneConfig {
            input_size: [8, 8],
            blocks: vec![BlockSpec::new(3), BlockSpec::new(5)],
            embedding_dim: 5,
            ..BackboneConfig::default()
        };
        let mut m = MultiTaskModel::build(&LabelSchema::default(), &cfg, &[Task::Stage, Task::JointNecrosisExposed], 8)
            .unwrap();
        m.normalization = Normalization {
            mean: vec![0.1, 0.2, 0.3],
            std: vec![1.5, 2.5, 3.5],
        };
        m.quantize_f32();
        m
    }

    #[test]
    fn round_trip_after_quantization_is_exact() {
        let m = model();
        let back: MultiTaskModel<f64> = decode_model(&encode_model(&m).unwrap(), &LabelSchema::default()).unwrap();
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i % 11) as f64 / 11.0);
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert_eq!(back.normalization, m.normalization);
    }

    #[test]
    fn schema_mismatch_refused() {
        let bytes = encode_model(&model()).unwrap();
        let mut other = LabelSchema::default();
        other.locations.push("Hip".into());
        assert!(matches!(
            decode_model::<f64>(&bytes, &other),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn truncated_and_foreign_files_refused() {
        let bytes = encode_model(&model()).unwrap();
        assert!(matches!(
            decode_model::<f64>(&bytes[..bytes.len() - 3], &LabelSchema::default()),
            Err(Error::ModelFormat(_))
        ));
        assert!(matches!(
            decode_model::<f64>(b"PNG....", &LabelSchema::default()),
            Err(Error::ModelFormat(_))
        ));
    }
}

//! Checkpoint container: magic "QSFC", u32 version, a length-prefixed JSON
//! header (config, training metadata, tensor table with byte offsets), then
//! the raw little-endian f64 tensor payloads. Save → load → save is
//! byte-identical.

use super::DataError;
use crate::autodiff::{ParamStore, Tensor};
use crate::fsio::write_atomic;
use crate::model::{param_shapes, StageConfig};
use crate::spectral::ZetaTrace;
use crate::train::OptimizerState;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"QSFC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainMeta {
    pub step: u64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    #[serde(default)]
    pub zeta: ZetaTrace,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    dtype: String,
    offset: u64,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct OptHeader {
    step: u64,
    /// parameter names whose first/second moments follow the parameter
    /// payloads, m then v per name, shaped like the parameter
    order: Vec<String>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: StageConfig,
    meta: TrainMeta,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptHeader>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config: StageConfig,
    pub meta: TrainMeta,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

fn push_tensor(payload: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(
    payload: &[u8],
    offset: u64,
    rows: usize,
    cols: usize,
) -> Result<Tensor, DataError> {
    let start = offset as usize;
    let len = rows * cols * 8;
    let end = start
        .checked_add(len)
        .ok_or_else(|| DataError::Format("tensor offset overflow".into()))?;
    if end > payload.len() {
        return Err(DataError::Format(format!(
            "tensor payload out of bounds: {start}..{end} of {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload[start..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(rows, cols, data)
        .map_err(|e| DataError::Format(format!("tensor decode: {e}")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        for (name, p) in self.params.iter() {
            let t = p.value();
            tensors.push(TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
                dtype: "f64".into(),
                offset: payload.len() as u64,
                frozen: p.frozen(),
            });
            push_tensor(&mut payload, t);
        }
        let optimizer = self.optimizer.as_ref().map(|opt| {
            let offset = payload.len() as u64;
            let order: Vec<String> = opt.first_moments().keys().cloned().collect();
            for name in &order {
                push_tensor(&mut payload, &opt.first_moments()[name]);
                push_tensor(&mut payload, &opt.second_moments()[name]);
            }
            OptHeader {
                step: opt.step(),
                order,
                offset,
            }
        });
        let header = Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
            optimizer,
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");

        let mut out = Vec::with_capacity(12 + header_json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(DataError::Format("not a QSFC checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(DataError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if 12 + header_len > bytes.len() {
            return Err(DataError::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| DataError::Format(format!("header parse: {e}")))?;
        let payload = &bytes[12 + header_len..];

        // the tensor table must agree with the architecture the config declares
        let expected: BTreeMap<String, (usize, usize)> =
            param_shapes(&header.config).into_iter().collect();
        let mut params = ParamStore::new();
        let mut seen = 0usize;
        for e in &header.tensors {
            if e.dtype != "f64" {
                return Err(DataError::Format(format!(
                    "tensor '{}' has unsupported dtype {}",
                    e.name, e.dtype
                )));
            }
            let Some(&(rows, cols)) = expected.get(&e.name) else {
                return Err(DataError::Shape(format!(
                    "tensor '{}' is not part of a stage-{} model",
                    e.name,
                    header.config.stage.index()
                )));
            };
            if (rows, cols) != (e.rows, e.cols) {
                return Err(DataError::Shape(format!(
                    "tensor '{}' is {}x{}, config demands {}x{}",
                    e.name, e.rows, e.cols, rows, cols
                )));
            }
            let t = read_tensor(payload, e.offset, e.rows, e.cols)?;
            params
                .insert(&e.name, t)
                .map_err(|err| DataError::Format(format!("duplicate tensor: {err}")))?;
            params
                .set_frozen(&e.name, e.frozen)
                .expect("tensor just inserted");
            seen += 1;
        }
        if seen != expected.len() {
            return Err(DataError::Shape(format!(
                "checkpoint has {seen} tensors, config demands {}",
                expected.len()
            )));
        }

        let optimizer = match &header.optimizer {
            None => None,
            Some(oh) => {
                let mut m = BTreeMap::new();
                let mut v = BTreeMap::new();
                let mut cursor = oh.offset;
                for name in &oh.order {
                    let &(rows, cols) = expected.get(name).ok_or_else(|| {
                        DataError::Shape(format!("optimizer moment for unknown tensor '{name}'"))
                    })?;
                    m.insert(name.clone(), read_tensor(payload, cursor, rows, cols)?);
                    cursor += (rows * cols * 8) as u64;
                    v.insert(name.clone(), read_tensor(payload, cursor, rows, cols)?);
                    cursor += (rows * cols * 8) as u64;
                }
                Some(OptimizerState::from_parts(oh.step, m, v))
            }
        };

        Ok(Checkpoint {
            config: header.config,
            meta: header.meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Stage};

    fn sample_checkpoint() -> Checkpoint {
        let cfg = StageConfig::micro(Stage::III);
        let mut params = init_params(&cfg, 5).unwrap();
        params.set_frozen("tok_emb", true).unwrap();
        Checkpoint {
            config: cfg,
            meta: TrainMeta {
                step: 123,
                train_loss: Some(1.5),
                val_loss: Some(1.75),
                zeta: {
                    let mut z = ZetaTrace::default();
                    z.push(100, vec![1.0, 0.9]);
                    z
                },
            },
            params,
            optimizer: None,
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, reloaded.to_bytes());
        assert_eq!(reloaded.meta, ckpt.meta);
        assert!(reloaded.params.is_frozen("tok_emb"));
        for (name, p) in ckpt.params.iter() {
            assert_eq!(p.value().data(), reloaded.params.value(name).unwrap().data());
        }
    }

    #[test]
    fn save_load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qsfc");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
    }

    #[test]
    fn wrong_dimension_fails_loudly() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        // corrupt the declared embedding dimension in the config
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[12..12 + header_len].to_vec()).unwrap();
        let corrupted = header.replacen("\"d\":8", "\"d\":16", 1);
        assert_ne!(header, corrupted);
        let new_len = corrupted.len();
        bytes.splice(12..12 + header_len, corrupted.into_bytes());
        bytes[8..12].copy_from_slice(&(new_len as u32).to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes);
        assert!(matches!(err, Err(DataError::Shape(_))), "{err:?}");
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(DataError::Format(_))
        ));
        let mut bytes2 = ckpt.to_bytes();
        bytes2[4] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes2),
            Err(DataError::Format(_))
        ));
    }
}

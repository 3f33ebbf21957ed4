//! Model container: a magic line, a one-line JSON header (spec, schema
//! version, parameter manifest with byte offsets, SHA-256 of the blob), then
//! little-endian `f64` parameter data in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelSpec, TrainedModel, TrainingFingerprint};
use crate::dataset::Normalizer;
use crate::error::{Error, LoadError, Result};
use crate::params::{ParamKind, Parameters};
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8] = b"RESNLS-MODEL\n";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    spec: ModelSpec,
    normalizer: Option<Normalizer>,
    fingerprint: Option<TrainingFingerprint>,
    parameters: Vec<ManifestEntry>,
    blob_bytes: usize,
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.parameters.numel() * 8);
    let mut manifest = Vec::with_capacity(model.parameters.len());
    for (name, p) in model.parameters.iter() {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            kind: p.kind,
            shape: p.tensor.shape().to_vec(),
            offset: blob.len(),
            len: p.tensor.numel(),
        });
        for v in p.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        spec: model.spec.clone(),
        normalizer: model.normalizer,
        fingerprint: model.fingerprint.clone(),
        parameters: manifest,
        blob_bytes: blob.len(),
        checksum: sha256_hex(&blob),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) { LoadError::Truncated } else { LoadError::BadMagic }.into());
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(LoadError::BadMagic.into());
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest.iter().position(|&b| b == b'\n').ok_or(LoadError::Truncated)?;
    let (json, blob) = (&rest[..nl], &rest[nl + 1..]);

    let raw: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| LoadError::CorruptHeader(e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| LoadError::CorruptHeader("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(LoadError::VersionMismatch {
            found: version as u32,
            expected: SCHEMA_VERSION,
        }
        .into());
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| LoadError::CorruptHeader(e.to_string()))?;

    let actual = sha256_hex(blob);
    if actual != header.checksum {
        return Err(LoadError::ChecksumMismatch {
            expected: header.checksum,
            actual,
        }
        .into());
    }
    if blob.len() != header.blob_bytes {
        return Err(LoadError::CorruptHeader("blob size disagrees with header".into()).into());
    }

    let mut params = Parameters::new();
    for e in &header.parameters {
        let end = e.offset + e.len * 8;
        if end > blob.len() {
            return Err(LoadError::CorruptHeader(format!("`{}` runs past the blob", e.name)).into());
        }
        let data = blob[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&e.shape, data).map_err(|err| LoadError::CorruptHeader(err.to_string()))?;
        params.insert(e.name.clone(), e.kind, t);
    }
    TrainedModel::from_parts(header.spec, params, header.normalizer, header.fingerprint)
        .map_err(|e| LoadError::CorruptHeader(e.to_string()).into())
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use crate::series::DateRange;
    use chrono::NaiveDate;

    fn sample() -> TrainedModel {
        let mut m = TrainedModel::build(ModelSpec {
            init_seed: 9,
            ..ModelSpec::new(Architecture::Resnls, 5)
        })
        .unwrap();
        let d = NaiveDate::from_ymd_opt(2011, 1, 1).unwrap();
        m.normalizer = Some(Normalizer::new(2441.91, 3651.77, DateRange::new(d, d).unwrap()).unwrap());
        m.fingerprint = Some(TrainingFingerprint {
            init_seed: 9,
            shuffle_seed: 3,
            epochs: 50,
            final_train_mse: 1.0 / 3.0,
            final_test_mse: 0.1,
        });
        m
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = sample();
        let a = to_bytes(&m);
        let back = from_bytes(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), a);
    }

    #[test]
    fn header_floats_round_trip_exactly() {
        let mut m = sample();
        let d = NaiveDate::from_ymd_opt(2011, 1, 1).unwrap();
        m.normalizer = Some(Normalizer::new(93.40836066321658, 112.24651931720703, DateRange::new(d, d).unwrap()).unwrap());
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back.normalizer.unwrap().max.to_bits(), 112.24651931720703f64.to_bits());
    }

    #[test]
    fn truncated_blob_is_checksum_failure() {
        let bytes = to_bytes(&sample());
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(from_bytes(cut), Err(Error::Load(LoadError::ChecksumMismatch { .. }))));
    }

    #[test]
    fn truncated_header_and_bad_magic() {
        let bytes = to_bytes(&sample());
        assert!(matches!(from_bytes(&bytes[..40]), Err(Error::Load(LoadError::Truncated))));
        assert!(matches!(from_bytes(b"RESNLS"), Err(Error::Load(LoadError::Truncated))));
        assert!(matches!(from_bytes(b"hello world, not a model"), Err(Error::Load(LoadError::BadMagic))));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let bytes = to_bytes(&sample());
        let text = String::from_utf8_lossy(&bytes[..200]).to_string();
        assert!(text.contains("\"schema_version\":1"));
        let patched: Vec<u8> = {
            let s = bytes.clone();
            let pos = s.windows(18).position(|w| w == b"\"schema_version\":1").unwrap();
            let mut v = s;
            v[pos + 17] = b'7';
            v
        };
        assert!(matches!(
            from_bytes(&patched),
            Err(Error::Load(LoadError::VersionMismatch { found: 7, expected: 1 }))
        ));
    }

    #[test]
    fn flipped_blob_bit_is_detected() {
        let mut bytes = to_bytes(&sample());
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::Load(LoadError::ChecksumMismatch { .. }))));
    }
}

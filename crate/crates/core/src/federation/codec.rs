//! Parameter bundle wire codec.
//!
//! Layout: the encoded manifest (dtype tag, entry count, then name/shape per
//! tensor) followed by every value flat little-endian in manifest order.
//! Round-trips are bit-exact and the total length equals
//! `Manifest::payload_len` — which is what `param_count` predicts.

use crate::model::{Manifest, ModuleId, ParamBundle, ParamEntry};
use crate::scalar::Scalar;

use super::FedError;

pub fn serialize_params<T: Scalar>(bundle: &ParamBundle<T>) -> Vec<u8> {
    let manifest = bundle.manifest();
    let mut out = Vec::with_capacity(manifest.payload_len());
    out.extend_from_slice(&manifest.encode());
    for entry in bundle.entries() {
        for &v in &entry.values {
            v.write_le(&mut out);
        }
    }
    debug_assert_eq!(out.len(), manifest.payload_len());
    out
}

pub fn deserialize_params<T: Scalar>(bytes: &[u8]) -> Result<ParamBundle<T>, FedError> {
    let (manifest, header_len) = Manifest::decode(bytes).map_err(FedError::Codec)?;
    if manifest.dtype != T::DTYPE {
        return Err(FedError::Codec(format!(
            "payload dtype {} does not match expected {}",
            manifest.dtype.name(),
            T::DTYPE.name()
        )));
    }
    let expected = manifest.payload_len();
    if bytes.len() != expected {
        return Err(FedError::Codec(format!(
            "payload length {} does not match manifest ({expected})",
            bytes.len()
        )));
    }
    let width = manifest.dtype.size_bytes();
    let mut pos = header_len;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for spec in &manifest.entries {
        let module = ModuleId::from_param_name(&spec.name).ok_or_else(|| {
            FedError::Codec(format!("parameter {} has no module prefix", spec.name))
        })?;
        let count: usize = spec.shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(T::read_le(&bytes[pos..pos + width]));
            pos += width;
        }
        entries.push(ParamEntry {
            name: spec.name.clone(),
            module,
            shape: spec.shape.clone(),
            values,
        });
    }
    Ok(ParamBundle::from_entries(entries))
}

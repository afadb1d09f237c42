//! Binary container: an 8-byte little-endian header length, a UTF-8 JSON
//! header, then the payload as little-endian `f64` values. The header always
//! carries `blob_len`, the number of floats that follow.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub fn encode<H: Serialize>(header: &H, blob: &[f64]) -> Result<Vec<u8>> {
    let mut value = serde_json::to_value(header)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::InvalidInput("container header must be a JSON object".into()))?;
    obj.insert("blob_len".into(), Value::from(blob.len()));
    let head = serde_json::to_vec(&value)?;
    let mut out = Vec::with_capacity(8 + head.len() + 8 * blob.len());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 8 {
        return Err(Error::Corrupt("file shorter than its length prefix".into()));
    }
    let head_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if head_len > body.len() {
        return Err(Error::Corrupt(format!("header claims {} bytes, {} available", head_len, body.len())));
    }
    let value: Value =
        serde_json::from_slice(&body[..head_len]).map_err(|e| Error::Corrupt(format!("unreadable header: {}", e)))?;
    let blob_len = value
        .get("blob_len")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupt("header lacks blob_len".into()))? as usize;
    let raw = &body[head_len..];
    if raw.len() != blob_len * 8 {
        return Err(Error::Corrupt(format!(
            "header declares {} floats but {} bytes follow",
            blob_len,
            raw.len()
        )));
    }
    let blob = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let header = serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("header fields: {}", e)))?;
    Ok((header, blob))
}

pub fn write<H: Serialize>(path: &Path, header: &H, blob: &[f64]) -> Result<()> {
    fs::write(path, encode(header, blob)?)?;
    Ok(())
}

pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct H {
        name: String,
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let blob = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300];
        let bytes = encode(&H { name: "x".into() }, &blob).unwrap();
        let (h, back): (H, Vec<f64>) = decode(&bytes).unwrap();
        assert_eq!(h.name, "x");
        assert_eq!(blob.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), back.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = encode(&H { name: "x".into() }, &[1.0, 2.0]).unwrap();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(decode::<H>(&bytes[..cut]), Err(Error::Corrupt(_))));
        }
    }
}

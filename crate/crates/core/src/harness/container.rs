//! `EEGB` binary epoch container.
//!
//! Layout: magic `EEGB`, `u16` version, `u32` header length, JSON header,
//! then little-endian `f32` data (`N x C x T` row-major), `N` `i16` labels
//! and `N` `u16` subject ids.

use std::path::Path;

use advkit_diff::Tensor;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EEGB";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub fs: f64,
    pub n_epochs: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// An epoch set with the free-form provenance stored beside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub set: EpochSet,
    pub provenance: serde_json::Value,
}

impl Container {
    pub fn new(set: EpochSet, provenance: serde_json::Value) -> Self {
        Self { set, provenance }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.set;
        let header = Header {
            fs: s.fs(),
            n_epochs: s.len(),
            n_channels: s.n_channels(),
            n_samples: s.n_samples(),
            class_names: s.class_names().to_vec(),
            channel_names: s.channel_names().to_vec(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;
        let n = s.len();
        let mut out = Vec::with_capacity(10 + json.len() + s.data().len() * 4 + n * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for v in s.data().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in s.labels() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for id in s.subjects() {
            out.extend_from_slice(&id.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes cannot hold the magic", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < 10 {
            return Err(Error::Truncated(format!("{} bytes cannot hold the preamble", bytes.len())));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(Error::Truncated(format!("header needs {header_len} bytes, {} present", body.len())));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Header(e.to_string()))?;
        let payload = &body[header_len..];
        let (n, c, t) = (header.n_epochs, header.n_channels, header.n_samples);
        let per_epoch = c
            .checked_mul(t)
            .and_then(|ct| ct.checked_mul(4))
            .and_then(|b| b.checked_add(4))
            .ok_or_else(|| Error::Header(format!("dimensions {c} x {t} overflow")))?;
        let expected = n.checked_mul(per_epoch).ok_or_else(|| Error::Header(format!("{n} epochs overflow")))?;
        if payload.len() != expected {
            if payload.len().is_multiple_of(per_epoch) {
                return Err(Error::CountMismatch(format!(
                    "header declares {n} epochs, payload holds {}",
                    payload.len() / per_epoch
                )));
            }
            if payload.len() < expected {
                return Err(Error::Truncated(format!("payload needs {expected} bytes, {} present", payload.len())));
            }
            return Err(Error::CountMismatch(format!(
                "payload has {} bytes beyond the declared {n} epochs",
                payload.len() - expected
            )));
        }
        let n_values = n * c * t;
        let (values, rest) = payload.split_at(n_values * 4);
        let (labels, subjects) = rest.split_at(n * 2);
        let data: Vec<f32> = values.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let labels: Vec<i16> = labels.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
        let subjects: Vec<u16> = subjects.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        let set = EpochSet::new(
            Tensor::new(vec![n, c, t], data)?,
            labels,
            subjects,
            header.fs,
            header.class_names,
            header.channel_names,
        )?;
        Ok(Self { set, provenance: header.provenance })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EpochSet> {
    Ok(Container::read(path)?.set)
}

pub fn write_container(set: &EpochSet, path: impl AsRef<Path>) -> Result<()> {
    Container::new(set.clone(), serde_json::Value::Null).write(path)
}

//! Checkpoint files: a little-endian `u32` header length, a JSON header,
//! then every tensor as row-major little-endian `f32`, in header order. The
//! user table comes first, then the item table, then the denoiser and the
//! posterior head.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use cnsdiff_core::objectives::Params;
use cnsdiff_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    #[serde(rename = "M")]
    pub num_users: usize,
    #[serde(rename = "N")]
    pub num_items: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub layers: usize,
    pub seed: u64,
    pub epoch: usize,
    pub config: TrainConfig,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, params: &Params, epoch: usize) -> Self {
        let views = params.tensors();
        let header = Header {
            num_users: params.embeddings.num_users,
            num_items: params.embeddings.num_items,
            d: params.embeddings.dim,
            layers: config.layers,
            seed: config.seed,
            epoch,
            config: config.clone(),
            sections: views
                .iter()
                .map(|(name, t)| Section {
                    name: (*name).to_string(),
                    len: t.len(),
                })
                .collect(),
        };
        let tensors = views
            .iter()
            .map(|(_, t)| t.iter().map(|&x| x as f32).collect())
            .collect();
        Self { header, tensors }
    }

    /// Copy the stored tensors into `params`, which must have the same
    /// shapes.
    pub fn restore(&self, params: &mut Params) -> Result<()> {
        let mut views = params.tensors_mut();
        if views.len() != self.header.sections.len() {
            return Err(Error::Usage(format!(
                "checkpoint has {} sections, model expects {}",
                self.header.sections.len(),
                views.len()
            )));
        }
        for ((name, dst), (section, src)) in views
            .iter_mut()
            .zip(self.header.sections.iter().zip(&self.tensors))
        {
            if *name != section.name || dst.len() != src.len() {
                return Err(Error::Usage(format!(
                    "checkpoint section {} ({}) does not match {name} ({})",
                    section.name,
                    src.len(),
                    dst.len()
                )));
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as f64;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let total: usize = self.tensors.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(4 + header.len() + 4 * total);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::format(path, "truncated checkpoint");
        let len_bytes: [u8; 4] = bytes.get(..4).ok_or_else(truncated)?.try_into().unwrap();
        let len = u32::from_le_bytes(len_bytes) as usize;
        let header_bytes = bytes.get(4..4 + len).ok_or_else(truncated)?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        let mut body = &bytes[4 + len..];
        let mut tensors = Vec::with_capacity(header.sections.len());
        for s in &header.sections {
            let mut t = vec![0f32; s.len];
            for x in t.iter_mut() {
                let mut b = [0u8; 4];
                body.read_exact(&mut b).map_err(|_| truncated())?;
                *x = f32::from_le_bytes(b);
            }
            tensors.push(t);
        }
        if !body.is_empty() {
            return Err(Error::format(path, "trailing bytes after the last section"));
        }
        if header.sections.first().map(|s| s.len) != Some(header.num_users * header.d)
            || header.sections.get(1).map(|s| s.len) != Some(header.num_items * header.d)
        {
            return Err(Error::format(
                path,
                "embedding tables disagree with M, N, d",
            ));
        }
        Ok(Self { header, tensors })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ckpt.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(path, &bytes)
}

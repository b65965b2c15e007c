//! `.inrs` session archives.
//!
//! ```text
//! magic "INRS" · version u32 · header_len u32 · header JSON · tensor blocks
//! ```
//!
//! All integers are little-endian. The tensor blocks hold `layer{k}.weight`
//! (`out × in`) and `layer{k}.bias` (`out`) for every generator layer.

use serde::{Deserialize, Serialize};

use crate::coords::encoding_dim;
use crate::error::{Error, Result};
use crate::generator::{GeneratorArch, GeneratorParams};
use crate::latent::LatentPair;
use crate::perceptual::{LayerPreset, TapSet};
use crate::tensors::{self, Reader};
use crate::trainer::{LossRecord, Session, TrainConfig, SESSION_VERSION};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"INRS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub iterations: usize,
    pub first_total: Option<f64>,
    pub final_total: Option<f64>,
    pub min_total: Option<f64>,
}

impl LossSummary {
    pub fn of(history: &[LossRecord]) -> Self {
        Self {
            iterations: history.len(),
            first_total: history.first().map(|r| r.total),
            final_total: history.last().map(|r| r.total),
            min_total: history.iter().map(|r| r.total).reduce(f64::min),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingInfo {
    pub n_freqs: usize,
    pub dim: usize,
    /// Per axis `sin(2ᵏπp), cos(2ᵏπp)` pairs, x then y, on an align-corners grid.
    pub layout: String,
}

/// JSON header of an archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub arch: GeneratorArch,
    pub params_seed: u64,
    pub config: TrainConfig,
    pub preset: LayerPreset,
    pub taps: TapSet,
    pub latents: LatentPair,
    pub image_dims: ImageDims,
    pub encoding: EncodingInfo,
    pub loss_summary: LossSummary,
    pub loss_history: Vec<LossRecord>,
}

pub fn header_of(session: &Session) -> ArchiveHeader {
    let arch = session.arch().clone();
    ArchiveHeader {
        encoding: EncodingInfo {
            n_freqs: arch.n_freqs,
            dim: encoding_dim(arch.n_freqs),
            layout: "interleaved_sin_cos_xy".into(),
        },
        arch,
        params_seed: session.params.seed(),
        config: session.config.clone(),
        preset: session.preset,
        taps: session.taps.clone(),
        latents: session.latents.clone(),
        image_dims: ImageDims {
            height: session.train_dims.0,
            width: session.train_dims.1,
        },
        loss_summary: LossSummary::of(&session.loss_history),
        loss_history: session.loss_history.clone(),
    }
}

pub fn write_archive(session: &Session) -> Vec<u8> {
    let header = serde_json::to_vec(&header_of(session)).expect("header serialises");
    let mut out = Vec::with_capacity(12 + header.len() + 4 * session.params.num_parameters() + 1024);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&SESSION_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    tensors::write_blocks(&mut out, &session.params.to_tensors());
    out
}

pub fn read_archive(bytes: &[u8]) -> Result<Session> {
    let mut reader = Reader::new(bytes);
    if reader.take(4, "magic")? != ARCHIVE_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = reader.u32("version")?;
    if version != SESSION_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = reader.u32("header length")? as usize;
    let header: ArchiveHeader = serde_json::from_slice(reader.take(len, "header")?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    header.arch.validate()?;
    if header.encoding.n_freqs != header.arch.n_freqs || header.encoding.dim != encoding_dim(header.arch.n_freqs) {
        return Err(Error::Format("encoding info disagrees with arch".into()));
    }
    if header.image_dims.height == 0 || header.image_dims.width == 0 {
        return Err(Error::Format("image dims must be positive".into()));
    }
    if !header.latents.is_finite() {
        return Err(Error::Format("latents are not finite".into()));
    }
    header.taps.validate()?;
    let blocks = tensors::read_blocks(&mut reader)?;
    if reader.remaining() != 0 {
        return Err(Error::Format("trailing bytes after tensor blocks".into()));
    }
    let params = GeneratorParams::from_tensors(header.arch, header.params_seed, blocks)?;
    if !params.is_finite() {
        return Err(Error::Format("parameters are not finite".into()));
    }
    Ok(Session {
        params,
        latents: header.latents,
        preset: header.preset,
        taps: header.taps,
        config: header.config,
        train_dims: (header.image_dims.height, header.image_dims.width),
        loss_history: header.loss_history,
        version,
    })
}

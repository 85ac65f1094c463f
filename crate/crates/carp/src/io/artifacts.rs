//! Versioned binary artifacts for decoder and reward-model parameters.
//!
//! Decoder: 8-byte magic `CARPDEC1`, u32 LE d_x, u32 LE sae_width, L in
//! row-major f64 LE, b in f64 LE, JSON metadata trailer.
//!
//! Reward model: magic `CARPRM1`, u8 mode (0 linear, 1 tabular), u32 LE
//! parameter count, θ in f64 LE, JSON metadata trailer.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::decoder::{DecoderMeta, DecoderParams};
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::reward::{RewardMode, RewardParams};

pub const DECODER_MAGIC: &[u8; 8] = b"CARPDEC1";
pub const REWARD_MAGIC: &[u8; 7] = b"CARPRM1";

pub fn write_decoder(path: &Path, params: &DecoderParams) -> Result<()> {
    let d_x = params.l.rows() as u32;
    let width = params.l.cols() as u32;
    let mut buf = Vec::with_capacity(16 + (params.l.data().len() + params.b.len()) * 8);
    buf.extend_from_slice(DECODER_MAGIC);
    buf.extend_from_slice(&d_x.to_le_bytes());
    buf.extend_from_slice(&width.to_le_bytes());
    for &v in params.l.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &params.b {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&serde_json::to_vec(&params.meta)?);
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_decoder(path: &Path) -> Result<DecoderParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    if bytes.len() < 16 || &bytes[..8] != DECODER_MAGIC {
        return Err(Error::format(&display, "not a decoder artifact"));
    }
    let d_x = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let l_bytes = d_x * width * 8;
    let b_bytes = d_x * 8;
    let end = 16 + l_bytes + b_bytes;
    if bytes.len() < end {
        return Err(Error::format(
            &display,
            format!(
                "truncated decoder artifact: need {end} bytes before trailer, found {}",
                bytes.len()
            ),
        ));
    }
    let mut l_data = Vec::with_capacity(d_x * width);
    for chunk in bytes[16..16 + l_bytes].chunks_exact(8) {
        l_data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut b = Vec::with_capacity(d_x);
    for chunk in bytes[16 + l_bytes..end].chunks_exact(8) {
        b.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let meta: DecoderMeta = serde_json::from_slice(&bytes[end..])
        .map_err(|e| Error::format(&display, format!("bad metadata trailer: {e}")))?;
    let l = Matrix::from_vec(d_x, width, l_data)
        .map_err(|e| Error::format(&display, format!("weight payload invalid: {e}")))?;
    Ok(DecoderParams { l, b, meta })
}

/// Metadata trailer for reward-model artifacts. The safety threshold is
/// stored as an option because JSON has no +∞.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RewardArtifactMeta {
    pub sas_weight: f64,
    #[serde(default)]
    pub safety_threshold: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub curriculum: bool,
    pub seed: u64,
    pub final_loss: f64,
}

pub fn write_reward(path: &Path, params: &RewardParams, meta: &RewardArtifactMeta) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + params.theta.len() * 8);
    buf.extend_from_slice(REWARD_MAGIC);
    buf.push(match params.mode {
        RewardMode::Linear => 0,
        RewardMode::Tabular => 1,
    });
    buf.extend_from_slice(&(params.theta.len() as u32).to_le_bytes());
    for &v in &params.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&serde_json::to_vec(meta)?);
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_reward(path: &Path) -> Result<(RewardParams, RewardArtifactMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    if bytes.len() < 12 || &bytes[..7] != REWARD_MAGIC {
        return Err(Error::format(&display, "not a reward-model artifact"));
    }
    let mode = match bytes[7] {
        0 => RewardMode::Linear,
        1 => RewardMode::Tabular,
        other => {
            return Err(Error::format(&display, format!("unknown reward mode byte {other}")));
        }
    };
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let end = 12 + dim * 8;
    if bytes.len() < end {
        return Err(Error::format(
            &display,
            format!(
                "truncated reward artifact: need {end} bytes before trailer, found {}",
                bytes.len()
            ),
        ));
    }
    let mut theta = Vec::with_capacity(dim);
    for chunk in bytes[12..end].chunks_exact(8) {
        theta.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let meta: RewardArtifactMeta = serde_json::from_slice(&bytes[end..])
        .map_err(|e| Error::format(&display, format!("bad metadata trailer: {e}")))?;
    Ok((RewardParams { mode, theta }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn decoder_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.carpdec");
        let mut rng = Rng::from_seed(3);
        let params = DecoderParams {
            l: Matrix::from_vec(3, 5, rng.normal_vec(15, 1.0)).unwrap(),
            b: rng.normal_vec(3, 1.0),
            meta: DecoderMeta {
                fit_method: "closed_form".into(),
                ridge: 1e-6,
                epochs: 0,
                lr: 0.0,
                train_loss_final: 0.123,
            },
        };
        write_decoder(&path, &params).unwrap();
        let back = read_decoder(&path).unwrap();
        assert_eq!(params, back);

        let path2 = dir.path().join("d2.carpdec");
        write_decoder(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn reward_roundtrip_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::from_seed(4);
        for (i, mode) in [RewardMode::Linear, RewardMode::Tabular].into_iter().enumerate() {
            let path = dir.path().join(format!("r{i}.carprm"));
            let params = RewardParams {
                mode,
                theta: rng.normal_vec(7, 1.0),
            };
            let meta = RewardArtifactMeta {
                sas_weight: 0.5,
                safety_threshold: None,
                epochs: 4,
                lr: 0.1,
                curriculum: true,
                seed: 9,
                final_loss: 2.5,
            };
            write_reward(&path, &params, &meta).unwrap();
            let (back, meta_back) = read_reward(&path).unwrap();
            assert_eq!(params, back);
            assert_eq!(meta, meta_back);
        }
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.carprm");
        let params = RewardParams {
            mode: RewardMode::Tabular,
            theta: vec![1.0, 2.0, 3.0],
        };
        let meta = RewardArtifactMeta {
            sas_weight: 0.0,
            safety_threshold: Some(0.005),
            epochs: 1,
            lr: 0.1,
            curriculum: false,
            seed: 0,
            final_loss: 0.0,
        };
        write_reward(&path, &params, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..15]).unwrap();
        assert!(read_reward(&path).is_err());
    }
}

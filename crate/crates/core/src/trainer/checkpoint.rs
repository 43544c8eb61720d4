//! Binary checkpoint format.
//!
//! Layout: magic "VCXC", u32 version=1, u32 header length, JSON header
//! (config echo, step counter, tensor manifest), then little-endian f32
//! tensor payloads in manifest order. All state tensors are
//! f32-representable by construction, so save -> load -> save is
//! byte-identical and resume replays training exactly.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, EncoderParams, TENSOR_NAMES};
use crate::{Error, Result};

use super::{TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"VCXC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    step: u64,
    enc: EncoderConfig,
    train: TrainConfig,
    manifest: Vec<ManifestEntry>,
}

/// State tensors in manifest order: parameters, then first and second
/// Adam moments, each in parameter-tensor order.
fn state_tensors(state: &TrainState) -> Vec<(String, &[f64])> {
    let mut out = Vec::with_capacity(15);
    for (prefix, tensors) in [
        ("param", &state.params),
        ("adam_m", &state.adam_m),
        ("adam_v", &state.adam_v),
    ] {
        for (name, data, _, _) in tensors.tensors() {
            out.push((format!("{prefix}.{name}"), data));
        }
    }
    out
}

/// Serialize the training state. The encoder and trainer configs ride in
/// the header as the run's config echo.
pub fn save_checkpoint(
    state: &TrainState,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    state.params.validate(enc_cfg)?;
    let shapes = EncoderParams::shapes(enc_cfg);
    let tensors = state_tensors(state);
    let manifest: Vec<ManifestEntry> = tensors
        .iter()
        .map(|(name, data)| {
            let base = name.split('.').nth(1).unwrap_or(name);
            let shape = shapes
                .iter()
                .find(|(n, _)| *n == base)
                .map(|(_, s)| s.clone())
                .unwrap_or_default();
            ManifestEntry {
                name: name.clone(),
                shape,
                len: data.len(),
            }
        })
        .collect();
    let header = Header {
        step: state.step,
        enc: enc_cfg.clone(),
        train: train_cfg.clone(),
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, data) in &tensors {
        for &x in *data {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Deserialize a checkpoint, validating magic, version, manifest shapes,
/// and exact payload length.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TrainState, EncoderConfig, TrainConfig)> {
    let path = path.as_ref();
    let mut file = fs::File::open(path)?;
    let mut fixed = [0u8; 12];
    file.read_exact(&mut fixed)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    if &fixed[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?} (expected \"VCXC\")",
            path.display(),
            String::from_utf8_lossy(&fixed[0..4]),
        )));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated JSON header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: header parse: {e}", path.display())))?;

    // The manifest must be exactly the canonical tensor listing.
    let expect_names: Vec<String> = ["param", "adam_m", "adam_v"]
        .iter()
        .flat_map(|p| TENSOR_NAMES.iter().map(move |n| format!("{p}.{n}")))
        .collect();
    let got_names: Vec<&str> = header.manifest.iter().map(|e| e.name.as_str()).collect();
    if got_names != expect_names.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(Error::Checkpoint(format!(
            "{}: unexpected tensor manifest {:?}",
            path.display(),
            got_names
        )));
    }

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let total_len: usize = header.manifest.iter().map(|e| e.len).sum();
    if payload.len() != total_len * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: payload of {} bytes does not match manifest total {}",
            path.display(),
            payload.len(),
            total_len * 4
        )));
    }

    let mut offset = 0usize;
    let mut read_tensor = |len: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let at = (offset + i) * 4;
            let bits = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
            out.push(bits as f64);
        }
        offset += len;
        out
    };
    let mut groups: Vec<EncoderParams> = Vec::with_capacity(3);
    for group in 0..3 {
        let lens: Vec<usize> = header.manifest[group * 5..(group + 1) * 5]
            .iter()
            .map(|e| e.len)
            .collect();
        let tensors: Vec<Vec<f64>> = lens.into_iter().map(&mut read_tensor).collect();
        let mut it = tensors.into_iter();
        groups.push(EncoderParams {
            text_embed: it.next().unwrap(),
            text_proj: it.next().unwrap(),
            text_bias: it.next().unwrap(),
            video_proj: it.next().unwrap(),
            video_bias: it.next().unwrap(),
        });
    }
    let mut it = groups.into_iter();
    let state = TrainState {
        params: it.next().unwrap(),
        adam_m: it.next().unwrap(),
        adam_v: it.next().unwrap(),
        step: header.step,
    };
    state
        .params
        .validate(&header.enc)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok((state, header.enc, header.train))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::init_params;

    fn tiny_state() -> (TrainState, EncoderConfig, TrainConfig) {
        let enc_cfg = EncoderConfig {
            vocab: 16,
            d_embed: 4,
            d: 8,
            d_in: 48,
            n_frames: 2,
        };
        let state = TrainState {
            params: init_params(&enc_cfg, 5).unwrap(),
            adam_m: EncoderParams::zeros(&enc_cfg),
            adam_v: EncoderParams::zeros(&enc_cfg),
            step: 42,
        };
        (state, enc_cfg, TrainConfig::default())
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (state, enc_cfg, train_cfg) = tiny_state();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.vcxc");
        let p2 = dir.path().join("b.vcxc");
        save_checkpoint(&state, &enc_cfg, &train_cfg, &p1).unwrap();
        let (loaded, enc2, train2) = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, state);
        assert_eq!(enc2, enc_cfg);
        assert_eq!(train2, train_cfg);
        save_checkpoint(&loaded, &enc2, &train2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_magic_is_named() {
        let (state, enc_cfg, train_cfg) = tiny_state();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vcxc");
        save_checkpoint(&state, &enc_cfg, &train_cfg, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
        assert!(err.to_string().contains("VCXC"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let (state, enc_cfg, train_cfg) = tiny_state();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vcxc");
        save_checkpoint(&state, &enc_cfg, &train_cfg, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("manifest total"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (state, enc_cfg, train_cfg) = tiny_state();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vcxc");
        save_checkpoint(&state, &enc_cfg, &train_cfg, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}

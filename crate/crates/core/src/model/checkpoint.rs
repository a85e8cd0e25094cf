//! Versioned JSON checkpoints.
//!
//! ```text
//! {
//!   "format": "perm-checkpoint",
//!   "version": 1,
//!   "config": { TrainConfig },
//!   "normalizer": { "mean", "sd", "count" } | null,
//!   "trained": bool,
//!   "response_weight_raw": [f64; latent_dim],   // w = softplus(raw)
//!   "log_response_sd": f64,
//!   "networks": {
//!     "enc_difficulty" | "enc_ability" | "dec_level": {
//!       "layers": [{ "in_dim", "out_dim", "activation", "weights": [..], "bias": [..] }]
//!     }
//!   }
//! }
//! ```
//!
//! Weights are plain JSON numbers written in shortest round-trip form, so
//! save -> load -> save reproduces identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::DenseNet;
use super::{PermModel, TrainConfig, LEVEL_FEATURES, LEVEL_OUTPUTS};
use crate::irt::Normalizer;

pub const CHECKPOINT_FORMAT: &str = "perm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a checkpoint (format tag {0:?})")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

#[derive(Serialize, Deserialize)]
struct Networks {
    enc_difficulty: DenseNet,
    enc_ability: DenseNet,
    dec_level: DenseNet,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    config: TrainConfig,
    normalizer: Option<Normalizer>,
    trained: bool,
    response_weight_raw: Vec<f64>,
    log_response_sd: f64,
    networks: Networks,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn to_bytes(model: &PermModel) -> Vec<u8> {
    let (enc_difficulty, enc_ability, dec_level, raw, log_sd) = model.parts();
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        normalizer: model.normalizer().copied(),
        trained: model.is_trained(),
        response_weight_raw: raw.to_vec(),
        log_response_sd: log_sd,
        networks: Networks {
            enc_difficulty: enc_difficulty.clone(),
            enc_ability: enc_ability.clone(),
            dec_level: dec_level.clone(),
        },
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("checkpoint serializes");
    bytes.push(b'\n');
    bytes
}

pub fn from_bytes(bytes: &[u8]) -> Result<PermModel, CheckpointError> {
    let header: Header = serde_json::from_slice(bytes)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(header.format));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: header.version,
        });
    }
    let doc: CheckpointDoc = serde_json::from_slice(bytes)?;
    validate(&doc)?;
    Ok(PermModel::from_parts(
        doc.config,
        doc.networks.enc_difficulty,
        doc.networks.enc_ability,
        doc.networks.dec_level,
        doc.response_weight_raw,
        doc.log_response_sd,
        doc.normalizer,
        doc.trained,
    ))
}

fn validate(doc: &CheckpointDoc) -> Result<(), CheckpointError> {
    let bad = |m: String| Err(CheckpointError::Inconsistent(m));
    if let Err(e) = doc.config.validate() {
        return bad(e.to_string());
    }
    let n = doc.config.latent_dim;
    let nets = &doc.networks;
    let shapes = [
        (
            "enc_difficulty",
            &nets.enc_difficulty,
            1 + LEVEL_FEATURES,
            2 * n,
        ),
        (
            "enc_ability",
            &nets.enc_ability,
            n + 1 + LEVEL_FEATURES,
            2 * n,
        ),
        ("dec_level", &nets.dec_level, n, LEVEL_OUTPUTS),
    ];
    for (name, net, input, output) in shapes {
        if !net.is_well_formed() {
            return bad(format!(
                "{name}: layers do not chain or contain non-finite values"
            ));
        }
        if net.input_dim() != input || net.output_dim() != output {
            return bad(format!(
                "{name}: expected {input} -> {output}, found {} -> {}",
                net.input_dim(),
                net.output_dim()
            ));
        }
    }
    if doc.response_weight_raw.len() != n {
        return bad(format!(
            "response weights have length {}",
            doc.response_weight_raw.len()
        ));
    }
    if !doc.log_response_sd.is_finite() || doc.response_weight_raw.iter().any(|v| !v.is_finite()) {
        return bad("non-finite response head".to_string());
    }
    if let Some(norm) = &doc.normalizer {
        if let Err(e) = norm.validate() {
            return bad(e.to_string());
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &PermModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PermModel, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> PermModel {
        let cfg = TrainConfig {
            hidden: vec![6, 5],
            latent_dim: 2,
            ..TrainConfig::default()
        };
        let mut m = PermModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        m.set_normalizer(Normalizer::fit(&[0.1, 0.7, 1.9]).unwrap());
        m
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let m = model();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let bytes = to_bytes(&model());
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(from_bytes(cut), Err(CheckpointError::Parse(_))));
        assert!(matches!(from_bytes(b""), Err(CheckpointError::Parse(_))));
    }

    #[test]
    fn wrong_version_and_format_rejected() {
        let text = String::from_utf8(to_bytes(&model())).unwrap();
        let v2 = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            from_bytes(v2.as_bytes()),
            Err(CheckpointError::Version { found: 2 })
        ));
        let other = text.replacen(CHECKPOINT_FORMAT, "something-else", 1);
        assert!(matches!(
            from_bytes(other.as_bytes()),
            Err(CheckpointError::Format(_))
        ));
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let text = String::from_utf8(to_bytes(&model())).unwrap();
        let shrunk = text.replacen("\"latent_dim\": 2", "\"latent_dim\": 3", 1);
        assert!(matches!(
            from_bytes(shrunk.as_bytes()),
            Err(CheckpointError::Inconsistent(_))
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(CheckpointError::Io { .. })
        ));
    }
}

//! Binary checkpoints: magic, manifest length (u64 LE), JSON manifest, then
//! every tensor's values as little-endian f64 in manifest order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrajSurv};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TRJSURV\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub n_features: usize,
    pub best_epoch: Option<usize>,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: TrajSurv,
    pub stats: FeatureStats,
}

fn named_tensors(model: &TrajSurv, stats: &FeatureStats) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec()))
        .collect();
    out.push(("stats.mean".into(), vec![stats.mean.len()], stats.mean.clone()));
    out.push(("stats.std".into(), vec![stats.std.len()], stats.std.clone()));
    out.push(("stats.count".into(), vec![stats.count.len()], stats.count.iter().map(|&c| c as f64).collect()));
    out
}

pub fn to_bytes(model: &TrajSurv, stats: &FeatureStats, config_hash: &str, best_epoch: Option<usize>) -> Result<Vec<u8>> {
    if stats.len() != model.n_features() || stats.count.len() != stats.len() {
        return Err(Error::Checkpoint(format!(
            "feature statistics cover {} features, model expects {}",
            stats.len(),
            model.n_features()
        )));
    }
    let tensors = named_tensors(model, stats);
    let manifest = Manifest {
        version: VERSION,
        config_hash: config_hash.to_string(),
        n_features: model.n_features(),
        best_epoch,
        entries: tensors
            .iter()
            .map(|(name, shape, _)| Entry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: &Path, model: &TrajSurv, stats: &FeatureStats, config_hash: &str, best_epoch: Option<usize>) -> Result<()> {
    let bytes = to_bytes(model, stats, config_hash, best_epoch)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model described by `bytes`. With `expected_hash` set, a
/// checkpoint written under a different configuration is refused.
pub fn from_bytes(bytes: &[u8], config: &ModelConfig, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("bad manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {}", manifest.version)));
    }
    if let Some(h) = expected_hash {
        if h != manifest.config_hash {
            return Err(bad(format!(
                "configuration hash mismatch: checkpoint {} vs current {h}",
                manifest.config_hash
            )));
        }
    }
    let payload = &bytes[16 + len..];
    let total: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(bad(format!("payload holds {} bytes, manifest needs {}", payload.len(), total * 8)));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    let mut model = TrajSurv::init(manifest.n_features, *config, &mut ChaCha8Rng::seed_from_u64(0));
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let n_params = expected.len();
    if manifest.entries.len() != n_params + 3 {
        return Err(bad(format!(
            "checkpoint has {} tensors, configuration expects {}",
            manifest.entries.len(),
            n_params + 3
        )));
    }
    for (slot, (entry, (name, shape))) in model.params_mut().into_iter().zip(manifest.entries.iter().zip(&expected)) {
        if &entry.name != name || &entry.shape != shape {
            return Err(bad(format!(
                "tensor {} {:?} does not match configured {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        *slot = Tensor::new(shape.clone(), take(shape.iter().product()))?;
    }
    let mut stat = |i: usize, name: &str| -> Result<Vec<f64>> {
        let e = &manifest.entries[n_params + i];
        if e.name != name || e.shape != [manifest.n_features] {
            return Err(bad(format!("expected {name} of length {}", manifest.n_features)));
        }
        Ok(take(manifest.n_features))
    };
    let mean = stat(0, "stats.mean")?;
    let std = stat(1, "stats.std")?;
    let count = stat(2, "stats.count")?.into_iter().map(|c| c as usize).collect();
    Ok(Checkpoint {
        manifest,
        model,
        stats: FeatureStats { mean, std, count },
    })
}

pub fn load(path: &Path, config: &ModelConfig, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, config, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controlpath::{build_path, ObservationSeq, Scheme};

    fn small() -> (ModelConfig, TrajSurv, FeatureStats) {
        let cfg = ModelConfig {
            latent_dim: 4,
            hidden: 5,
            head_hidden: 3,
            ..ModelConfig::default()
        };
        let model = TrajSurv::init(3, cfg, &mut ChaCha8Rng::seed_from_u64(11));
        let stats = FeatureStats {
            mean: vec![0.5, -1.0, 2.0],
            std: vec![1.0, 0.25, 3.0],
            count: vec![4, 4, 4],
        };
        (cfg, model, stats)
    }

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let (cfg, model, stats) = small();
        let bytes = to_bytes(&model, &stats, "abc", Some(3)).unwrap();
        let ck = from_bytes(&bytes, &cfg, Some("abc")).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.stats, stats);
        assert_eq!(ck.manifest.best_epoch, Some(3));

        let seq = ObservationSeq::complete(vec![0.0, 1.5, 4.0], vec![vec![0.1, 0.2, 0.3], vec![0.0, -1.0, 0.5], vec![1.0, 1.0, 1.0]]).unwrap();
        let path = build_path(&seq, Scheme::CubicHermiteBackward).unwrap();
        let a = model.risks(&model.encode(&[&path]).unwrap()).unwrap();
        let b = ck.model.risks(&ck.model.encode(&[&path]).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_bytes(&ck.model, &ck.stats, "abc", Some(3)).unwrap(), bytes);
    }

    #[test]
    fn payload_size_is_exact() {
        let (_, model, stats) = small();
        let bytes = to_bytes(&model, &stats, "h", None).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 16 - len, 8 * (model.num_params() + 9));
    }

    #[test]
    fn refusals() {
        let (cfg, model, stats) = small();
        let bytes = to_bytes(&model, &stats, "abc", None).unwrap();
        let e = from_bytes(&bytes, &cfg, Some("xyz")).unwrap_err();
        assert!(e.to_string().contains("hash mismatch"));
        assert_eq!(e.exit_code(), 2);
        assert!(from_bytes(&bytes[..bytes.len() - 8], &cfg, None).is_err());
        assert!(from_bytes(b"garbage", &cfg, None).is_err());
        let other = ModelConfig {
            latent_dim: 5,
            ..cfg
        };
        assert!(from_bytes(&bytes, &other, None).is_err());
    }
}

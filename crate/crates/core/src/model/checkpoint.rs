use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelParams, TrainConfig};
use crate::error::{Error, Result};

const FORMAT: &str = "gderec-checkpoint";
const VERSION: u32 = 1;

/// Trained parameters together with what produced them.
///
/// Stored as JSON; floats use shortest round-trip formatting, so a save/load
/// cycle reproduces every tensor bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: TrainConfig,
    /// Source text of the experiment config, empty when trained from code.
    pub config_text: String,
    /// SHA-256 over `config_text` and the serialized `config`.
    pub config_hash: String,
    pub best_epoch: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, config: TrainConfig, config_text: impl Into<String>, best_epoch: usize) -> Result<Self> {
        let config_text = config_text.into();
        let config_hash = config_hash(&config, &config_text)?;
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: config.seed,
            config,
            config_text,
            config_hash,
            best_epoch,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if !self.params.is_finite() {
            return Err(Error::NonFinite {
                op: "checkpoint parameters".into(),
            });
        }
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    /// Loads and checks format, version, hash and tensor shapes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Invalid(format!(
                "{}: expected {FORMAT} v{VERSION}, found {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        if ck.config_hash != config_hash(&ck.config, &ck.config_text)? {
            return Err(Error::Invalid(format!("{}: config hash mismatch", path.display())));
        }
        ck.check_shapes()?;
        Ok(ck)
    }

    fn check_shapes(&self) -> Result<()> {
        let p = &self.params;
        let d = p.dim();
        let dt = p.time_encoder.dim();
        if p.embeddings.as_slice().len() != p.embeddings.rows() * d {
            return Err(Error::shape("checkpoint", "embedding buffer length".to_string()));
        }
        for (k, l) in p.layers.iter().enumerate() {
            if l.alpha.len() != 2 * d + 2 * dt || l.w_q.shape() != (d, d) || l.w_k.shape() != (d, d) {
                return Err(Error::shape("checkpoint", format!("layer {k} does not match d={d}, d_T={dt}")));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of a run's configuration.
pub fn config_hash(config: &TrainConfig, text: &str) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update([0u8]);
    hasher.update(serde_json::to_vec(config)?);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::init(7, 2, 3, 2, 0.1, &mut rng).unwrap();
        // Values whose decimal forms need all 17 digits.
        params.embeddings.as_mut_slice()[0] = 0.1 + 0.2;
        params.embeddings.as_mut_slice()[1] = f64::MIN_POSITIVE;
        params.layers[1].alpha[0] = -1.0 / 3.0;
        Checkpoint::new(params, TrainConfig::default(), "k = 2\n", 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.params.slices().iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&ck), bits(&back));
        assert_eq!(ck, back);
    }

    #[test]
    fn tampered_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = sample();
        ck.save(&path).unwrap();
        ck.config.lr = 0.5;
        std::fs::write(&path, serde_json::to_vec(&ck).unwrap()).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn hash_depends_on_text() {
        let c = TrainConfig::default();
        assert_ne!(config_hash(&c, "a").unwrap(), config_hash(&c, "b").unwrap());
        assert_eq!(config_hash(&c, "a").unwrap().len(), 64);
    }
}

//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size      field
//! 0       8         magic b"SVATCKPT"
//! 8       4         format version, u32 (currently 1)
//! 12      8         header length H, u64
//! 20      H         header, UTF-8 JSON (configs, epoch, RNG state, Adam
//!                   scalars, ordered parameter names/groups/shapes)
//! 20+H    ...       per parameter, in header order: values, first moment,
//!                   second moment -- each `numel` f64s
//! ```
//!
//! The f64 payload is byte-exact, so save -> load reproduces forward scores
//! bit for bit.

use crate::adam::AdamState;
use crate::data::SplitSpec;
use crate::error::{Result, SvatError};
use crate::model::{Model, ModelConfig};
use crate::params::ParamGroup;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SVATCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Restorable ChaCha stream position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step_count: u64,
    beta1: f64,
    beta2: f64,
    numeric_floor: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    split: SplitSpec,
    epoch: usize,
    valid_sr: Option<f64>,
    rng: RngState,
    adam: AdamMeta,
    params: Vec<ParamMeta>,
}

/// A full training snapshot: parameters, optimizer state, configs and the
/// RNG position at capture time.
#[derive(Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub rng: RngState,
    pub train_config: TrainConfig,
    /// The split the model was trained under; test-time consumers reuse its
    /// training range for normalization statistics and its test range for
    /// evaluation.
    pub split: SplitSpec,
    pub epoch: usize,
    pub valid_sr: Option<f64>,
}

impl Checkpoint {
    pub fn snapshot(
        model: &Model,
        adam: &AdamState,
        rng: &ChaCha8Rng,
        train_config: &TrainConfig,
        split: &SplitSpec,
        epoch: usize,
        valid_sr: Option<f64>,
    ) -> Self {
        Checkpoint {
            model: model.clone(),
            adam: adam.clone(),
            rng: RngState::capture(rng),
            train_config: *train_config,
            split: *split,
            epoch,
            valid_sr,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params: Vec<ParamMeta> = self
            .model
            .params
            .iter()
            .map(|(_, p)| ParamMeta {
                name: p.name.clone(),
                group: p.group,
                shape: p.tensor.shape().to_vec(),
            })
            .collect();
        let header = Header {
            model_config: self.model.config.clone(),
            train_config: self.train_config,
            split: self.split,
            epoch: self.epoch,
            valid_sr: self.valid_sr,
            rng: self.rng,
            adam: AdamMeta {
                step_count: self.adam.step_count(),
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                numeric_floor: self.adam.numeric_floor,
            },
            params,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| SvatError::CheckpointFormat(format!("header encode: {e}")))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (pid, p) in self.model.params.iter() {
            write_f64s(&mut out, p.tensor.values());
            let (m, v) = self.adam.moments(pid);
            write_f64s(&mut out, m.values());
            write_f64s(&mut out, v.values());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::load_bytes(&bytes)
    }

    pub fn load_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(8)?;
        if magic != MAGIC {
            return Err(SvatError::CheckpointFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(cursor.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(SvatError::CheckpointFormat(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(cursor.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(cursor.take(header_len)?)
            .map_err(|e| SvatError::CheckpointFormat(format!("header decode: {e}")))?;

        let mut named = Vec::with_capacity(header.params.len());
        let mut first = Vec::with_capacity(header.params.len());
        let mut second = Vec::with_capacity(header.params.len());
        for meta in &header.params {
            let numel: usize = meta.shape.iter().product();
            let values = read_f64s(&mut cursor, numel)?;
            let m = read_f64s(&mut cursor, numel)?;
            let v = read_f64s(&mut cursor, numel)?;
            named.push((meta.name.clone(), Tensor::new(meta.shape.clone(), values)?));
            first.push(Tensor::new(meta.shape.clone(), m)?);
            second.push(Tensor::new(meta.shape.clone(), v)?);
        }
        if cursor.pos != bytes.len() {
            return Err(SvatError::CheckpointFormat(format!(
                "{} trailing bytes",
                bytes.len() - cursor.pos
            )));
        }

        // Rebuild the model skeleton, then drop in the stored values.
        let mut throwaway = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::init(header.model_config, &mut throwaway)?;
        model.load_values(&named)?;
        for (meta, (_, p)) in header.params.iter().zip(model.params.iter()) {
            if meta.group != p.group || meta.name != p.name {
                return Err(SvatError::CheckpointFormat(format!(
                    "parameter order mismatch at {}",
                    meta.name
                )));
            }
        }
        let adam = AdamState::from_parts(
            first,
            second,
            header.adam.step_count,
            header.adam.beta1,
            header.adam.beta2,
            header.adam.numeric_floor,
        );
        Ok(Checkpoint {
            model,
            adam,
            rng: header.rng,
            train_config: header.train_config,
            split: header.split,
            epoch: header.epoch,
            valid_sr: header.valid_sr,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SvatError::CheckpointFormat(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(cursor: &mut Cursor, n: usize) -> Result<Vec<f64>> {
    let raw = cursor.take(n * 8)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::{BackboneConfig, PsiKind};
    use crate::vpg::VpgConfig;

    fn sample_checkpoint() -> Checkpoint {
        let config = ModelConfig {
            lookback: 3,
            feature_dim: crate::data::FEATURE_DIM,
            backbone: BackboneConfig {
                psi_kind: PsiKind::Recurrent,
                embed_dim: 4,
                head_hidden: vec![5],
            },
            vpg: VpgConfig {
                epsilon: 0.02,
                latent_dim: 2,
                encoder_hidden: vec![4],
                prior_hidden: vec![4],
                decoder_hidden: vec![4],
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let model = Model::init(config, &mut rng).unwrap();
        let adam = AdamState::new(&model.params);
        let day = |s: &str| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let split = SplitSpec::new(
            crate::data::DateRange::new(day("2020-01-01"), day("2020-03-01")).unwrap(),
            crate::data::DateRange::new(day("2020-03-02"), day("2020-04-01")).unwrap(),
            crate::data::DateRange::new(day("2020-04-02"), day("2020-05-01")).unwrap(),
        )
        .unwrap();
        Checkpoint::snapshot(&model, &adam, &rng, &TrainConfig::default(), &split, 7, Some(1.25))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let loaded = Checkpoint::load_bytes(&bytes).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.valid_sr, Some(1.25));
        assert_eq!(loaded.rng, ck.rng);
        for ((_, a), (_, b)) in ck.model.params.iter().zip(loaded.model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            let av: Vec<u64> = a.tensor.values().iter().map(|v| v.to_bits()).collect();
            let bv: Vec<u64> = b.tensor.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(av, bv);
        }
        // Re-serialization is byte-identical.
        assert_eq!(bytes, loaded.to_bytes().unwrap());
    }

    #[test]
    fn rng_state_restores_stream_position() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        let _: u64 = rng.random();
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        let a: Vec<u64> = (0..8).map(|_| rng.random()).collect();
        let b: Vec<u64> = (0..8).map(|_| restored.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_inputs_are_rejected() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes().unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Checkpoint::load_bytes(&bad_magic).is_err());

        let mut bad_version = bytes.clone();
        bad_version[8] = 99;
        assert!(Checkpoint::load_bytes(&bad_version).is_err());

        let truncated = &bytes[..bytes.len() - 3];
        assert!(Checkpoint::load_bytes(truncated).is_err());

        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Checkpoint::load_bytes(&padded).is_err());
    }
}

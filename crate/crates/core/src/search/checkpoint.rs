//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MSNASCKP"  u32 version
//! u32 len, config as TOML
//! u64 completed epochs, u128 data-stream word position
//! u32 param count, then per param:
//!   u32 len, name, u8 group, u8 requires_grad, 4 x u32 shape,
//!   values as f64, momentum as f64
//! 32-byte SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use super::config::SearchConfig;
use crate::binio::{hex, put_params, put_u32, seal, unseal, Cursor};
use crate::error::{Error, Result};
use crate::relaxation::SupernetModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSNASCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: SearchConfig,
    /// Number of fully completed epochs.
    pub epoch: usize,
    /// Position of the data-order stream, for resuming.
    pub data_word_pos: u128,
    pub model: SupernetModel,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let cfg = toml::to_string(&self.config).expect("config serializes");
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.data_word_pos.to_le_bytes());
        put_params(&mut out, &self.model.store);
        seal(out)
    }

    /// Hex SHA-256 of the serialized checkpoint body.
    pub fn digest(&self) -> String {
        let bytes = self.to_bytes();
        hex(&bytes[bytes.len() - 32..])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let body = unseal(bytes, "checkpoint", CHECKPOINT_MAGIC.len() + 4)?;
        let mut c = Cursor::new(body, "checkpoint");
        c.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let len = c.u32()? as usize;
        let text = std::str::from_utf8(c.take(len)?).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let config: SearchConfig =
            toml::from_str(text).map_err(|e| Error::format("checkpoint config", e.to_string()))?;
        config.validate()?;
        let epoch = c.u64()? as usize;
        let data_word_pos = c.u128()?;
        // the structure is rebuilt from the config; values are then overwritten
        let mut rng = crate::rng::stream(0, crate::rng::Purpose::Init);
        let mut model = SupernetModel::new(config.supernet(), &mut rng.clone(), &mut rng, 0.0)?;
        c.params(&mut model.store)?;
        c.finish()?;
        Ok(Checkpoint {
            config,
            epoch,
            data_word_pos,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

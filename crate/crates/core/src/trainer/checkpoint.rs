//! Binary checkpoints of a [`TrainerState`].
//!
//! Layout, little-endian throughout, modeled on the EMB1 container:
//!
//! ```text
//! 0..4    magic "MRC1"
//! 4..8    u32 format version (1)
//! 8..16   u64 step
//! 16..48  ChaCha seed (32 bytes)
//! 48..56  u64 ChaCha stream
//! 56..72  u128 ChaCha word position
//! 72..112 five u64 rejection counters (draws, rejected, fallbacks,
//!         generator samples, violations)
//! then two network blocks (generator, discriminator), each:
//!         u32 input, u32 hidden, u32 output, u64 Adam step count,
//!         u32 parameter count P, then P f64 parameters, P f64 first
//!         moments, P f64 second moments
//! then    u32 length + UTF-8 JSON of the trainer config and metric log
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

use super::adam::Adam;
use super::mlp::Mlp;
use super::train::{LogEntry, RejectionCounters, TrainerConfig, TrainerState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRC1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainerConfig,
    log: Vec<LogEntry>,
    logged_counters: RejectionCounters,
}

fn put_net(out: &mut Vec<u8>, net: &Mlp, opt: &Adam) {
    for d in [net.input_dim(), net.hidden_dim(), net.output_dim()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&opt.t.to_le_bytes());
    out.extend_from_slice(&(net.num_params() as u32).to_le_bytes());
    for block in [&net.params, &opt.m, &opt.v] {
        for v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(state: &TrainerState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.rng.get_seed());
    out.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    let c = state.counters;
    for v in [c.draws, c.rejected, c.fallbacks, c.generator_samples, c.violations] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_net(&mut out, &state.generator, &state.g_opt);
    put_net(&mut out, &state.discriminator, &state.d_opt);
    let meta = serde_json::to_vec(&Meta {
        config: state.config.clone(),
        log: state.log.clone(),
        logged_counters: state.logged_counters,
    })
    .expect("checkpoint metadata serializes");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated checkpoint: needed {n} bytes at {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn net(&mut self, cfg: &TrainerConfig) -> Result<(Mlp, Adam)> {
        let at = self.pos;
        let (input, hidden, output) = (self.u32()? as usize, self.u32()? as usize, self.u32()? as usize);
        let t = self.u64()?;
        let n = self.u32()? as usize;
        let params = self.f64s(n)?;
        let m = self.f64s(n)?;
        let v = self.f64s(n)?;
        let net = Mlp::from_params(input, hidden, output, params).ok_or_else(|| Error::Format {
            offset: at as u64,
            message: format!("{n} parameters do not fit a {input}-{hidden}-{output} network"),
        })?;
        let mut opt = Adam::new(n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        opt.m = m;
        opt.v = v;
        opt.t = t;
        Ok((net, opt))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainerState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected MRC1".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let step = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let counters = RejectionCounters {
        draws: r.u64()?,
        rejected: r.u64()?,
        fallbacks: r.u64()?,
        generator_samples: r.u64()?,
        violations: r.u64()?,
    };
    // networks precede the metadata, so read them with a placeholder config
    // and patch the optimizer hyperparameters afterwards
    let placeholder = TrainerConfig::default();
    let (generator, mut g_opt) = r.net(&placeholder)?;
    let (discriminator, mut d_opt) = r.net(&placeholder)?;
    let meta_len = r.u32()? as usize;
    let meta_at = r.pos;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format {
        offset: meta_at as u64,
        message: format!("bad checkpoint metadata: {e}"),
    })?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: "trailing bytes after checkpoint".into(),
        });
    }
    for opt in [&mut g_opt, &mut d_opt] {
        opt.lr = meta.config.lr;
        opt.beta1 = meta.config.adam_beta1;
        opt.beta2 = meta.config.adam_beta2;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(TrainerState {
        config: meta.config,
        step,
        generator,
        discriminator,
        g_opt,
        d_opt,
        log: meta.log,
        counters,
        logged_counters: meta.logged_counters,
        rng,
    })
}

pub fn save_checkpoint(state: &TrainerState, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainerState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

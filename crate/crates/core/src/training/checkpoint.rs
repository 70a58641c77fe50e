//! Checkpoint directory layout:
//!
//! ```text
//! params.bin       binary parameter container
//! config.txt       TrainConfig as key=value
//! vocab.txt        utterance vocabulary
//! label_vocab.txt  label-word vocabulary
//! intents.txt      intent names and verbalized words
//! slots.txt        slot names and verbalized words
//! ```
//!
//! `params.bin` is the magic `DGIFPRM\0`, a little-endian u32 version, a u32
//! tensor count, then per tensor: u32 name length, UTF-8 name, u32 rank,
//! u64 extents, and the values as little-endian f64.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::Model;
use crate::data_io::Vocabularies;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};
use crate::label_space::{LabelSet, Task};
use crate::numerics::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"DGIFPRM\0";
const VERSION: u32 = 1;

pub fn params_to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated parameter file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Named tensors in file order.
pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a parameter file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(dir: &Path, model: &Model, store: &ParamStore) -> Result<()> {
    let v = model.vocabs();
    write_atomic(&dir.join("config.txt"), model.config().to_text().as_bytes())?;
    write_atomic(&dir.join("vocab.txt"), v.tokens.to_text().as_bytes())?;
    write_atomic(&dir.join("label_vocab.txt"), v.label_words.to_text().as_bytes())?;
    write_atomic(&dir.join("intents.txt"), v.intents.to_text().as_bytes())?;
    write_atomic(&dir.join("slots.txt"), v.slots.to_text().as_bytes())?;
    // Parameters last: a complete params.bin implies complete metadata.
    write_atomic(&dir.join("params.bin"), &params_to_bytes(store))
}

/// Rebuilds the model from its config and vocabularies, then overwrites
/// every parameter from `params.bin` (names and shapes must match).
pub fn load_checkpoint(dir: &Path) -> Result<(Model, ParamStore)> {
    let config = TrainConfig::load(&dir.join("config.txt"))?;
    let label_set = |task, file: &str| {
        let path = dir.join(file);
        LabelSet::parse(task, &read_to_string(&path)?, &path.display().to_string())
    };
    let vocabs = Vocabularies {
        tokens: Vocab::load(&dir.join("vocab.txt"))?,
        label_words: Vocab::load(&dir.join("label_vocab.txt"))?,
        intents: label_set(Task::Intent, "intents.txt")?,
        slots: label_set(Task::Slot, "slots.txt")?,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::new(&config, vocabs, &mut store, &mut rng)?;

    let path = dir.join("params.bin");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let tensors = params_from_bytes(&bytes)?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name}")))?;
        let slot = store.get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} but model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        slot.values_mut().copy_from_slice(t.values());
    }
    Ok((model, store))
}

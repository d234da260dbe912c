//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MININETW" | u32 version | u32 len, JSON ModelConfig | u32 count
//! count x ( u32 len, UTF-8 name | u8 trainable | dtype, u32 rank, u64 dims, payload )
//! u32 CRC-32 of every preceding byte
//! ```

use std::collections::HashSet;
use std::path::Path;

use mininet_core::depthnet::DepthNet;
use mininet_core::params::ParamStore;
use mininet_core::posenet::PoseNet;
use mininet_core::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, IoContext, Result};
use crate::wire::{put_tensor, put_u32, AnyTensor, Reader};

pub const MAGIC: &[u8; 8] = b"MININETW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub trainable: bool,
    pub value: AnyTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub records: Vec<Record>,
}

/// Both networks and their weights.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub depth: DepthNet,
    pub pose: PoseNet,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialised networks (`depth.*` then `pose.*` in one store).
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let depth = DepthNet::build(&mut store, "depth", config.depth()?, &mut rng)?;
        let pose = PoseNet::build(&mut store, "pose", config.pose()?, &mut rng)?;
        Ok(Model { config: config.clone(), depth, pose, store })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.config, &self.store)
    }

    /// Rebuilds the networks described by the file and fills in its weights.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = read_checkpoint(path)?;
        let mut model = Model::build(&ckpt.config, 0)?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }
}

pub fn encode<T: Scalar>(config: &ModelConfig, store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_vec(config)?;
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    put_u32(&mut out, store.len() as u32);
    for (_, p) in store.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        out.push(u8::from(p.trainable));
        put_tensor(&mut out, &p.value);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(MAGIC.len())?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let trainable = r.u8()? != 0;
        let value = r.tensor().map_err(|e| Error::Record { name: name.clone(), reason: e.to_string() })?;
        if !seen.insert(name.clone()) {
            return Err(Error::Record { name, reason: "appears twice".into() });
        }
        records.push(Record { name, trainable, value });
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} unread bytes after the last record", r.remaining())));
    }
    Ok(Checkpoint { config, records })
}

impl Checkpoint {
    /// Copies every record into `store`. Records are checked in file order:
    /// the first one that is unknown to the model or has the wrong shape is
    /// named in the error, then any parameter the file lacks.
    pub fn restore<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut pending = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| Error::Record { name: rec.name.clone(), reason: "not a parameter of this model".into() })?;
            let expected = store.value(id).shape();
            if rec.value.shape() != expected {
                return Err(Error::Record {
                    name: rec.name.clone(),
                    reason: format!("checkpoint shape {:?}, model expects {:?}", rec.value.shape(), expected),
                });
            }
            pending.push((id, rec));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| !self.records.iter().any(|r| r.name == p.name)) {
            return Err(Error::Record { name: p.name.clone(), reason: "missing from checkpoint".into() });
        }
        for (id, rec) in pending {
            *store.value_mut(id) = rec.value.cast();
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig, store: &ParamStore<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(config, store)?).at(path)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).at(path)?;
    decode(&bytes)
}

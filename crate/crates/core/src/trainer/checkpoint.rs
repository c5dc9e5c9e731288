//! Checkpoint container: a small JSON header followed by named f64 blobs.
//!
//! Layout: magic `SVCK`, format version, header length, header JSON, then
//! raw little-endian f64 data. Parameters and optimizer moments round-trip
//! bit-exactly; the header pins the config fingerprint so a checkpoint
//! cannot resume under a different architecture.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;

use super::TrainState;

const MAGIC: &[u8; 4] = b"SVCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    fingerprint: String,
    opt_g_t: u64,
    opt_d_t: u64,
    blobs: Vec<BlobEntry>,
}

struct BlobWriter {
    entries: Vec<BlobEntry>,
    data: Vec<u8>,
}

impl BlobWriter {
    fn new() -> Self {
        BlobWriter {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    fn push(&mut self, name: String, values: &[f64]) {
        // Offsets and lengths count f64 elements, not bytes.
        let offset = (self.data.len() / 8) as u64;
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(BlobEntry {
            name,
            offset,
            len: values.len() as u64,
        });
    }
}

pub fn save_checkpoint(state: &mut TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = BlobWriter::new();

    visit_state_params(state, &mut |name, values| {
        writer.push(name.to_string(), values);
    });
    for (name, m1, m2) in state.opt_g.moments() {
        writer.push(format!("optg.m1.{name}"), m1);
        writer.push(format!("optg.m2.{name}"), m2);
    }
    for (name, m1, m2) in state.opt_d.moments() {
        writer.push(format!("optd.m1.{name}"), m1);
        writer.push(format!("optd.m2.{name}"), m2);
    }

    let header = Header {
        version: VERSION,
        step: state.step,
        fingerprint: state.config.fingerprint(),
        opt_g_t: state.opt_g.t,
        opt_d_t: state.opt_d.t,
        blobs: writer.entries,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut bytes = Vec::with_capacity(16 + header_json.len() + writer.data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&writer.data);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint into a freshly constructed state of the same config.
pub fn load_checkpoint(state: &mut TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |detail: &str| Error::MalformedCheckpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(malformed("unsupported version"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > bytes.len() {
        return Err(malformed("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::json(path, e))?;
    if header.fingerprint != state.config.fingerprint() {
        return Err(Error::FingerprintMismatch);
    }
    let data = &bytes[16 + header_len..];

    let read_blob = |entry: &BlobEntry| -> Result<Vec<f64>> {
        let start = entry.offset as usize * 8;
        let end = start + entry.len as usize * 8;
        if end > data.len() {
            return Err(malformed(&format!("blob {} out of bounds", entry.name)));
        }
        Ok(data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let mut by_name = std::collections::BTreeMap::new();
    for e in &header.blobs {
        by_name.insert(e.name.clone(), e);
    }

    // Parameters.
    let mut missing: Option<String> = None;
    visit_state_params_mut(state, &mut |name, values| {
        match by_name.get(name) {
            Some(entry) if entry.len as usize == values.len() => {
                if let Ok(blob) = read_blob(entry) {
                    values.copy_from_slice(&blob);
                } else {
                    missing = Some(format!("unreadable blob {name}"));
                }
            }
            Some(_) => missing = Some(format!("size mismatch for {name}")),
            None => missing = Some(format!("missing parameter {name}")),
        }
    });
    if let Some(detail) = missing {
        return Err(malformed(&detail));
    }

    // Optimizer moments, in the exact parameter visitation order.
    let restore = |prefix: &str,
                   names: &[String]|
     -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
        let mut slots = Vec::new();
        for name in names {
            let k1 = format!("{prefix}.m1.{name}");
            let k2 = format!("{prefix}.m2.{name}");
            match (by_name.get(&k1), by_name.get(&k2)) {
                (Some(e1), Some(e2)) => {
                    slots.push((name.clone(), read_blob(e1)?, read_blob(e2)?));
                }
                (None, None) => {} // checkpoint taken before the first step
                _ => return Err(malformed(&format!("inconsistent moments for {name}"))),
            }
        }
        Ok(slots)
    };

    let mut g_names = Vec::new();
    {
        let mut part = super::GenPartition {
            generator: &mut state.generator,
            encoder: &mut state.encoder,
            singers: &mut state.singers,
        };
        part.for_each_param(&mut |name, _| g_names.push(name.to_string()));
    }
    let mut d_names = Vec::new();
    state
        .discriminators
        .for_each_param(&mut |name, _| d_names.push(name.to_string()));

    state.opt_g.restore(header.opt_g_t, restore("optg", &g_names)?);
    state.opt_d.restore(header.opt_d_t, restore("optd", &d_names)?);
    state.step = header.step;
    Ok(())
}

fn visit_state_params(state: &mut TrainState, f: &mut dyn FnMut(&str, &[f64])) {
    let mut part = super::GenPartition {
        generator: &mut state.generator,
        encoder: &mut state.encoder,
        singers: &mut state.singers,
    };
    part.for_each_param(&mut |name, slot| f(name, slot.value));
    state
        .discriminators
        .for_each_param(&mut |name, slot| f(name, slot.value));
}

fn visit_state_params_mut(state: &mut TrainState, f: &mut dyn FnMut(&str, &mut [f64])) {
    let mut part = super::GenPartition {
        generator: &mut state.generator,
        encoder: &mut state.encoder,
        singers: &mut state.singers,
    };
    part.for_each_param(&mut |name, slot| f(name, slot.value));
    state
        .discriminators
        .for_each_param(&mut |name, slot| f(name, slot.value));
}

//! Checkpoint file format.
//!
//! Layout: an 8-byte magic `FREBISCK`, a little-endian u64 manifest length,
//! a JSON manifest (parameter names, shapes, precision, format version, and
//! resume state), then raw little-endian floating-point payloads in manifest
//! order: all parameter values, then — when optimizer state is present — all
//! Adam first moments, then all second moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::buf::{Buf, Precision, Real};
use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FREBISCK";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Snapshot of the training ChaCha8 generator, enough to resume bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: Vec<u8>,
    pub word_pos: u128,
    pub stream: u64,
}

impl RngSnapshot {
    pub fn capture(rng: &super::rng::Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed().to_vec(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> Result<super::rng::Rng> {
        use rand::SeedableRng;
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format("rng seed must be 32 bytes".into()))?;
        let mut rng = super::rng::Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub precision: Precision,
    pub iteration: u64,
    /// Opaque model description (band assignment, layer sizes, ...) owned by
    /// the field module; the tensor layer round-trips it untouched.
    pub model: serde_json::Value,
    pub params: Vec<ParamEntry>,
    pub has_adam: bool,
    pub adam_step: u64,
    pub rng: Option<RngSnapshot>,
}

pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub values: Vec<Buf<T>>,
    pub adam: Option<AdamState<T>>,
}

fn write_payload<T: Real>(w: &mut impl Write, buf: &Buf<T>) -> std::io::Result<()> {
    match T::PRECISION {
        Precision::F32 => {
            for &x in buf.data() {
                w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
            }
        }
        Precision::F64 => {
            for &x in buf.data() {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_payload<T: Real>(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<Buf<T>> {
    let n = rows * cols;
    let mut data = Vec::with_capacity(n);
    match T::PRECISION {
        Precision::F32 => {
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)?;
            for chunk in bytes.chunks_exact(4) {
                data.push(T::from_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64));
            }
        }
        Precision::F64 => {
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            for chunk in bytes.chunks_exact(8) {
                data.push(T::from_f64(f64::from_le_bytes(chunk.try_into().unwrap())));
            }
        }
    }
    Ok(Buf::from_vec(rows, cols, data))
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint<T: Real>(
    path: &Path,
    store: &ParamStore<T>,
    adam: Option<&AdamState<T>>,
    iteration: u64,
    model: serde_json::Value,
    rng: Option<RngSnapshot>,
) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        precision: T::PRECISION,
        iteration,
        model,
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect(),
        has_adam: adam.is_some(),
        adam_step: adam.map(|a| a.step).unwrap_or(0),
        rng,
    };
    let manifest = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;

    let ctx = || format!("writing checkpoint {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for (_, p) in store.iter() {
            write_payload(&mut w, &p.value)?;
        }
        if let Some(adam) = adam {
            for m in &adam.m {
                write_payload(&mut w, m)?;
            }
            for v in &adam.v {
                write_payload(&mut w, v)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(ctx(), e))
}

/// Read just the manifest, e.g. to learn the precision before choosing a
/// monomorphization to load into.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let ctx = || format!("reading checkpoint {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut r = BufReader::new(file);
    read_meta_from(&mut r, path)
}

fn read_meta_from(r: &mut impl Read, path: &Path) -> Result<CheckpointMeta> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut manifest = vec![0u8; len];
    r.read_exact(&mut manifest)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {} (expected {})",
            meta.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    Ok(meta)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let ctx = || format!("reading checkpoint {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut r = BufReader::new(file);
    let meta = read_meta_from(&mut r, path)?;
    if meta.precision != T::PRECISION {
        return Err(Error::Format(format!(
            "checkpoint precision {:?} does not match requested {:?}",
            meta.precision,
            T::PRECISION
        )));
    }
    let mut values = Vec::with_capacity(meta.params.len());
    for p in &meta.params {
        values.push(read_payload::<T>(&mut r, p.rows, p.cols).map_err(|e| Error::io(ctx(), e))?);
    }
    let adam = if meta.has_adam {
        let shapes: Vec<_> = meta.params.iter().map(|p| (p.rows, p.cols)).collect();
        let mut state = AdamState::new(&shapes);
        for i in 0..meta.params.len() {
            state.m[i] = read_payload::<T>(&mut r, shapes[i].0, shapes[i].1)
                .map_err(|e| Error::io(ctx(), e))?;
        }
        for i in 0..meta.params.len() {
            state.v[i] = read_payload::<T>(&mut r, shapes[i].0, shapes[i].1)
                .map_err(|e| Error::io(ctx(), e))?;
        }
        state.step = meta.adam_step;
        Some(state)
    } else {
        None
    };
    Ok(Checkpoint { meta, values, adam })
}

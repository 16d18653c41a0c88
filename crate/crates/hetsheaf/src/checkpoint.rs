//! Versioned binary model checkpoints.
//!
//! Layout: 4 magic bytes `HSHF`, a little-endian u32 format version, a
//! little-endian u64 header length, the header as JSON, then one raw blob
//! of little-endian f64 values per parameter in header order. The header
//! echoes the run configuration and the graph schema the model was built
//! against, so a checkpoint can be validated against a dataset before any
//! weights are touched.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;
use crate::train::RunConfig;

pub const MAGIC: [u8; 4] = *b"HSHF";
pub const FORMAT_VERSION: u32 = 1;

/// Name and shape of one serialized parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Echo of the configuration the run was launched with.
    pub config: RunConfig,
    pub num_node_types: usize,
    pub num_edge_types: usize,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &RunConfig,
    num_node_types: usize,
    num_edge_types: usize,
    store: &ParamStore,
) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        config: config.clone(),
        num_node_types,
        num_edge_types,
        params: store
            .entries()
            .iter()
            .map(|p| ParamSpec { name: p.name.clone(), rows: p.rows, cols: p.cols })
            .collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::validation(format!("checkpoint header serialization: {e}")))?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    write(&MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for p in store.entries() {
        for &x in &p.data {
            write(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |what: &str| {
        Error::validation(format!("{}: truncated checkpoint while reading {what}", path.display()))
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("magic"))?;
    if magic != MAGIC {
        return Err(Error::validation(format!(
            "{}: not a model checkpoint (bad magic bytes)",
            path.display()
        )));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| bad("version"))?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::validation(format!(
            "{}: checkpoint format version {version}, this build reads {FORMAT_VERSION}",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("header length"))?;
    let json_len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|_| bad("header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::validation(format!("{}: checkpoint header: {e}", path.display())))?;

    let mut store = ParamStore::new();
    for spec in &header.params {
        let count = spec.rows * spec.cols;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(&format!("parameter {}", spec.name)))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!(
                "{}: non-finite value in parameter {}[{i}]",
                path.display(),
                spec.name
            )));
        }
        store.add(spec.name.clone(), spec.rows, spec.cols, data)?;
    }
    let mut trail = [0u8; 1];
    if r.read(&mut trail).map_err(|e| io_err(path, e))? != 0 {
        return Err(Error::validation(format!(
            "{}: trailing bytes after the last parameter blob",
            path.display()
        )));
    }
    Ok(Checkpoint { header, store })
}

/// The loaded parameter set must carry exactly the names and shapes a model
/// freshly built for the dataset would have.
pub fn check_schema(expected: &ParamStore, loaded: &ParamStore) -> Result<()> {
    for p in expected.entries() {
        match loaded.by_name(&p.name) {
            None => {
                return Err(Error::validation(format!(
                    "checkpoint is missing parameter {}",
                    p.name
                )))
            }
            Some(q) if q.rows != p.rows || q.cols != p.cols => {
                return Err(Error::validation(format!(
                    "parameter {}: checkpoint shape {}x{}, model expects {}x{}",
                    p.name, q.rows, q.cols, p.rows, p.cols
                )))
            }
            Some(_) => {}
        }
    }
    for q in loaded.entries() {
        if expected.by_name(&q.name).is_none() {
            return Err(Error::validation(format!(
                "checkpoint has unexpected parameter {}",
                q.name
            )));
        }
    }
    Ok(())
}

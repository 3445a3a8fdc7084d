//! On-disk formats. Everything is little-endian.
//!
//! Dataset split (`.bin`):
//!
//! ```text
//! b"DSGD"  u32 version  u64 graph_count
//! per graph:
//!   u64 nodes  u64 edges  u64 feature_dim  u64 coord_dim  u64 edge_attr_dim
//!   u8 has_velocities  u8 target (0 none, 1 positions, 2 adjacency)
//!   u64 × 2·edges             (center, neighbor) pairs
//!   f64 × nodes·feature_dim   features
//!   f64 × nodes·coord_dim     coordinates
//!   f64 × nodes·coord_dim     velocities, if present
//!   f64 × edges·edge_attr_dim edge attributes, if edge_attr_dim > 0
//!   f64 × nodes·coord_dim | nodes·nodes   target, if any
//! ```
//!
//! Checkpoint (`.ckpt`):
//!
//! ```text
//! b"DSGC"  u32 version  u64 hash_len  hash bytes (UTF-8)  u64 param_count
//! per parameter: u64 name_len  name  u64 rank  u64 × rank dims  f64 × numel data
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use autodiff::Tensor;

use crate::error::{Error, Result};
use crate::graph::{GraphInstance, Target};
use crate::params::ParamStore;

const DATASET_MAGIC: &[u8; 4] = b"DSGD";
const CHECKPOINT_MAGIC: &[u8; 4] = b"DSGC";
pub const FORMAT_VERSION: u32 = 1;

/// Writes to a temporary sibling, syncs, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("implausible length {v}")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("array size overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_dataset(graphs: &[GraphInstance]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len(graphs.len());
    for g in graphs {
        w.len(g.num_nodes());
        w.len(g.edges().len());
        w.len(g.feature_dim());
        w.len(g.coord_dim());
        w.len(g.edge_attr_dim());
        w.u8(u8::from(g.velocities().is_some()));
        w.u8(match g.target() {
            Target::None => 0,
            Target::Positions(_) => 1,
            Target::Adjacency(_) => 2,
        });
        for &(i, j) in g.edges() {
            w.len(i);
            w.len(j);
        }
        w.f64s(g.features().data());
        w.f64s(g.coords().data());
        if let Some(v) = g.velocities() {
            w.f64s(v.data());
        }
        if let Some(a) = g.edge_attr() {
            w.f64s(a.data());
        }
        match g.target() {
            Target::None => {}
            Target::Positions(t) | Target::Adjacency(t) => w.f64s(t.data()),
        }
    }
    w.0
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<GraphInstance>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(DATASET_MAGIC)?;
    let count = r.len()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let m = r.len()?;
        let e = r.len()?;
        let f = r.len()?;
        let n = r.len()?;
        let a = r.len()?;
        let has_v = r.u8()?;
        let target_kind = r.u8()?;
        let mut edges = Vec::with_capacity(e);
        for _ in 0..e {
            edges.push((r.len()?, r.len()?));
        }
        let features = Tensor::matrix(m, f, r.f64s(m * f)?)?;
        let coords = Tensor::matrix(m, n, r.f64s(m * n)?)?;
        let mut g = GraphInstance::new(features, coords, edges)?;
        match has_v {
            0 => {}
            1 => g = g.with_velocities(Tensor::matrix(m, n, r.f64s(m * n)?)?)?,
            v => return Err(Error::Format(format!("bad velocity flag {v}"))),
        }
        if a > 0 {
            g = g.with_edge_attr(Tensor::matrix(e, a, r.f64s(e * a)?)?)?;
        }
        let target = match target_kind {
            0 => Target::None,
            1 => Target::Positions(Tensor::matrix(m, n, r.f64s(m * n)?)?),
            2 => Target::Adjacency(Tensor::matrix(m, m, r.f64s(m * m)?)?),
            k => return Err(Error::Format(format!("bad target kind {k}"))),
        };
        out.push(g.with_target(target)?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_dataset(path: &Path, graphs: &[GraphInstance]) -> Result<()> {
    atomic_write(path, &encode_dataset(graphs))
}

pub fn read_dataset(path: &Path) -> Result<Vec<GraphInstance>> {
    decode_dataset(&fs::read(path)?)
}

pub fn encode_checkpoint(store: &ParamStore, config_hash: &str) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(config_hash);
    w.len(store.len());
    for (name, t) in store.names().iter().zip(store.tensors()) {
        w.str(name);
        w.len(t.rank());
        for &d in t.shape() {
            w.len(d);
        }
        w.f64s(t.data());
    }
    w.0
}

/// Returns the stored config hash and the parameters in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(CHECKPOINT_MAGIC)?;
    let hash = r.str()?;
    let count = r.len()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Format("shape overflows".into()))?;
        params.push((name, Tensor::new(shape, r.f64s(numel)?)?));
    }
    r.finish()?;
    Ok((hash, params))
}

/// Overwrites `store` from a checkpoint whose names and shapes must match.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore, expected_hash: &str) -> Result<()> {
    let (hash, params) = decode_checkpoint(&fs::read(path)?)?;
    if hash != expected_hash {
        return Err(Error::Format(format!(
            "checkpoint was written for config {hash}, current config is {expected_hash}"
        )));
    }
    if params.len() != store.len() {
        return Err(Error::Format(format!("checkpoint has {} arrays, model {}", params.len(), store.len())));
    }
    for (k, (name, t)) in params.into_iter().enumerate() {
        if store.names()[k] != name || store.tensors()[k].shape() != t.shape() {
            return Err(Error::Format(format!(
                "checkpoint array {k} is {name} {:?}, model expects {} {:?}",
                t.shape(),
                store.names()[k],
                store.tensors()[k].shape()
            )));
        }
        store.tensors_mut()[k] = t;
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, store: &ParamStore, config_hash: &str) -> Result<()> {
    atomic_write(path, &encode_checkpoint(store, config_hash))
}

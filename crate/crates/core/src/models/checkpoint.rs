//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GPTH1"  u8 dataset kind  u8 topology
//! repeated until EOF:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank × u32 dims
//!   numel × f32 values
//! ```
//!
//! Trainable tensors and batchnorm running statistics are stored. Values
//! are written as `f32`, so an `f32` network round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DatasetKind, Network, Topology};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 5] = b"GPTH1";

pub fn write_checkpoint<T: Scalar, W: Write>(network: &Network<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[network.kind().code(), network.topology().code()])?;
    let params = network.named_params().into_iter().map(|(n, p)| (n, p.value()));
    for (name, tensor) in params.chain(network.named_buffers()) {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.dims().len() as u32).to_le_bytes())?;
        for &d in tensor.dims() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn save_checkpoint<T: Scalar>(network: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(network, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Byte reader that tracks its offset for error messages.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::format(self.path, offset as u64, msg)
    }
}

/// Parses a checkpoint and rebuilds the network it describes.
///
/// `origin` only labels error messages.
pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R, origin: &Path) -> Result<Network<T>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path: origin };

    if cur.take(5, "magic")? != MAGIC {
        return Err(cur.fail(0, "bad magic, expected GPTH1"));
    }
    let header = cur.take(2, "header")?;
    let kind = DatasetKind::from_code(header[0])
        .ok_or_else(|| cur.fail(5, format!("unknown dataset kind code {}", header[0])))?;
    let topology = Topology::from_code(header[1])
        .ok_or_else(|| cur.fail(6, format!("unknown topology code {}", header[1])))?;

    let mut network = super::build_model::<T>(kind, topology, 0)?;
    let expected = network.named_params().len() + network.named_buffers().len();
    let mut seen = std::collections::HashSet::new();
    while cur.pos < bytes.len() {
        let record = cur.pos;
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| cur.fail(record + 4, "tensor name is not UTF-8"))?
            .to_owned();
        let rank = cur.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dimension")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();

        let slot = network
            .named_tensor_mut(&name)
            .ok_or_else(|| cur.fail(record, format!("unexpected tensor {name:?}")))?;
        if slot.dims() != dims {
            return Err(cur.fail(
                record,
                format!("tensor {name:?} has dims {dims:?}, model expects {:?}", slot.dims()),
            ));
        }
        *slot = Tensor::new(dims, data)?;
        if !seen.insert(name.clone()) {
            return Err(cur.fail(record, format!("duplicate tensor {name:?}")));
        }
    }
    if seen.len() != expected {
        return Err(cur.fail(
            bytes.len(),
            format!("checkpoint holds {} of {expected} tensors", seen.len()),
        ));
    }
    Ok(network)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), path)
}

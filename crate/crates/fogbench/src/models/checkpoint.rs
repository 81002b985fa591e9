//! Binary checkpoint format, bit-exact across save/load cycles.
//!
//! Layout (all integers and floats little-endian): magic `FGB1`; u16
//! version = 1; u16 tag length + UTF-8 tag; u32 tensor count; then per
//! tensor: u16 name length + UTF-8 name, u8 rank, rank×u32 dims,
//! dim-product×f32 values.

use crate::error::{Error, Result};
use crate::tensor::{Param, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FGB1";
const VERSION: u16 = 1;

pub fn write_checkpoint(path: &Path, tag: &str, named: &[(String, Param)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let tag_bytes = tag.as_bytes();
    w.write_all(&(tag_bytes.len() as u16).to_le_bytes())
        .map_err(io)?;
    w.write_all(tag_bytes).map_err(io)?;
    w.write_all(&(named.len() as u32).to_le_bytes())
        .map_err(io)?;
    for (name, p) in named {
        let t = p.borrow();
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())
            .map_err(io)?;
        w.write_all(name_bytes).map_err(io)?;
        w.write_all(&[t.shape().len() as u8]).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::checkpoint(self.path, format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let b = self.bytes(len, what)?;
        String::from_utf8(b)
            .map_err(|_| Error::checkpoint(self.path, format!("{what} is not valid UTF-8")))
    }
}

/// Reads a checkpoint, returning its architecture tag and named tensors.
pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };

    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::checkpoint(
            path,
            format!("bad magic bytes {magic:02x?}"),
        ));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::checkpoint(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let tag = r.string("architecture tag")?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name = r.string(&format!("name of tensor {i}"))?;
        let rank = r.bytes(1, &format!("rank of {name}"))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for d in 0..rank {
            shape.push(r.u32(&format!("dim {d} of {name}"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.bytes(numel * 4, &format!("values of {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::checkpoint(path, format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    // A valid checkpoint ends exactly at the last value.
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::checkpoint(
            path,
            "trailing bytes after last tensor".to_string(),
        ));
    }
    Ok((tag, tensors))
}

/// Loads a checkpoint into existing parameters, enforcing the expected
/// architecture tag and exact name/shape agreement in order.
pub fn load_into(path: &Path, expected_tag: &str, named: &[(String, Param)]) -> Result<()> {
    let (tag, tensors) = read_checkpoint(path)?;
    if tag != expected_tag {
        return Err(Error::checkpoint(
            path,
            format!("architecture tag mismatch: file has \"{tag}\", expected \"{expected_tag}\""),
        ));
    }
    if tensors.len() != named.len() {
        return Err(Error::checkpoint(
            path,
            format!("expected {} tensors, found {}", named.len(), tensors.len()),
        ));
    }
    for ((name, param), (file_name, tensor)) in named.iter().zip(&tensors) {
        if name != file_name {
            return Err(Error::checkpoint(
                path,
                format!("tensor name mismatch: expected {name}, found {file_name}"),
            ));
        }
        let mut t = param.borrow_mut();
        if t.shape() != tensor.shape() {
            return Err(Error::checkpoint(
                path,
                format!(
                    "tensor {name}: shape {:?} does not match model's {:?}",
                    tensor.shape(),
                    t.shape()
                ),
            ));
        }
        t.data_mut().copy_from_slice(tensor.data());
    }
    Ok(())
}

//! Named-tensor container.
//!
//! ```text
//! magic     8 bytes   "SGTENSOR"
//! version   u32 LE    1
//! count     u32 LE
//! manifest  count × { name_len u32, name utf-8, rank u32 (=2), dims u64 × rank }
//! payload   count × rows·cols f64 LE, in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"SGTENSOR";
const VERSION: u32 = 1;

pub fn write_tensors<'a, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Matrix)>,
) -> std::io::Result<()> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in &tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
    }
    for (_, m) in &tensors {
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Matrix)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("`{name}`: rank {rank}, expected 2")));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        manifest.push((name, rows, cols));
    }
    let mut out = Vec::with_capacity(count);
    for (name, rows, cols) in manifest {
        let mut bytes = vec![0u8; rows * cols * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("`{name}`: truncated payload: {e}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(out)
}

pub fn save_store(store: &ParameterStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(
        BufWriter::new(file),
        store.iter().map(|(_, p)| (p.name.as_str(), &p.tensor.value)),
    )
    .map_err(|e| Error::io(path, e))
}

/// Overwrites the values of `store` from a container holding exactly the
/// same names and shapes.
pub fn load_into_store(store: &mut ParameterStore, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_tensors(BufReader::new(file))?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} tensors, model expects {}",
            path.display(),
            tensors.len(),
            store.len()
        )));
    }
    for (name, value) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
        let dst = store.value_mut(id);
        if dst.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}`: shape {:?}, model expects {:?}",
                value.shape(),
                dst.shape()
            )));
        }
        *dst = value;
    }
    Ok(())
}

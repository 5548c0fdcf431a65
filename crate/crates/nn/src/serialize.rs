//! Binary array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "DSNARR01"
//! count   u32
//! repeat count times:
//!   name_len u32, name (UTF-8)
//!   dims     4 x u32 (NCHW)
//!   data     prod(dims) x f32
//! ```

use std::io::{Read, Write};

use crate::{NnError, Result, Tensor};

const MAGIC: &[u8; 8] = b"DSNARR01";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_arrays<W: Write>(mut out: W, arrays: &[NamedArray]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        out.write_all(&(a.name.len() as u32).to_le_bytes())?;
        out.write_all(a.name.as_bytes())?;
        for d in a.tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(a.tensor.len() * 4);
        for v in a.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_arrays<R: Read>(mut input: R) -> Result<Vec<NamedArray>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let count = read_u32(&mut input)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        if len > 1 << 16 {
            return Err(NnError::Format(format!("array name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Format("array name is not UTF-8".into()))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = read_u32(&mut input)? as usize;
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedArray {
            name,
            tensor: Tensor::from_vec(shape, data)?,
        });
    }
    Ok(out)
}

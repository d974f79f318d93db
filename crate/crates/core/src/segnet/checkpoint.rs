//! Binary tensor container.
//!
//! ```text
//! magic   b"FTSGCKPT"
//! u32     format version (1)
//! u64     header length N
//! N bytes JSON header {"config": NetConfig, "step": u64, "role": string}
//! u32     tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u8  dtype (0 = f32, 1 = f64)
//!   u32 rank, rank x u64 dims
//!   little-endian payload
//! ```
//! All integers are little-endian.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FTSGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    step: u64,
    role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub step: u64,
    /// Free-form tag such as `"student"` or `"teacher"`.
    pub role: String,
}

pub fn encode_checkpoint(ckpt: &Checkpoint, dtype: Dtype) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: *ckpt.params.config(),
        step: ckpt.step,
        role: ckpt.role.clone(),
    })?;
    let mut buf = Vec::with_capacity(64 + header.len() + ckpt.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(ckpt.params.tensors().len() as u32).to_le_bytes());
    for t in ckpt.params.tensors() {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(dtype.code());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let data = &ckpt.params.values()[t.offset..t.offset + t.len()];
        match dtype {
            Dtype::F32 => data
                .iter()
                .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64 => data
                .iter()
                .for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
        }
    }
    Ok(buf)
}

fn read_exact<const N: usize>(cur: &mut Cursor<&[u8]>, path: &Path) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format(path, "truncated checkpoint"))?;
    Ok(b)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut cur = Cursor::new(bytes);
    if &read_exact::<8>(&mut cur, path)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(read_exact(&mut cur, path)?);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(read_exact(&mut cur, path)?) as usize;
    let start = cur.position() as usize;
    let header_bytes = bytes
        .get(start..start + hlen)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    cur.set_position((start + hlen) as u64);

    let mut params = NetParams::zeros(header.config)?;
    let count = u32::from_le_bytes(read_exact(&mut cur, path)?) as usize;
    if count != params.tensors().len() {
        return Err(Error::format(
            path,
            format!("expected {} tensors, found {count}", params.tensors().len()),
        ));
    }
    let table = params.tensors().to_vec();
    for info in &table {
        let nlen = u32::from_le_bytes(read_exact(&mut cur, path)?) as usize;
        let mut name = vec![0u8; nlen];
        cur.read_exact(&mut name)
            .map_err(|_| Error::format(path, "truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::format(path, "bad tensor name"))?;
        if name != info.name {
            return Err(Error::format(
                path,
                format!("expected tensor {}, found {name}", info.name),
            ));
        }
        let dtype = read_exact::<1>(&mut cur, path)?[0];
        let rank = u32::from_le_bytes(read_exact(&mut cur, path)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(&mut cur, path)?) as usize);
        }
        if shape != info.shape {
            return Err(Error::format(
                path,
                format!("tensor {name}: shape {shape:?} != {:?}", info.shape),
            ));
        }
        let dst = &mut params.values_mut()[info.offset..info.offset + info.len()];
        match dtype {
            0 => {
                for v in dst.iter_mut() {
                    *v = f32::from_le_bytes(read_exact(&mut cur, path)?) as f64;
                }
            }
            1 => {
                for v in dst.iter_mut() {
                    *v = f64::from_le_bytes(read_exact(&mut cur, path)?);
                }
            }
            other => return Err(Error::format(path, format!("unknown dtype code {other}"))),
        }
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    if params.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite parameter"));
    }
    Ok(Checkpoint {
        params,
        step: header.step,
        role: header.role,
    })
}

/// Writes a checkpoint. `Dtype::F64` round-trips bit-exactly.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, dtype: Dtype) -> Result<()> {
    let bytes = encode_checkpoint(ckpt, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::init_params;
    use proptest::prelude::*;

    fn cfg() -> NetConfig {
        NetConfig {
            depth: 2,
            base_channels: 4,
            input_size: (16, 16),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn f64_round_trip_is_bit_exact(seed in any::<u64>(), step in any::<u64>()) {
            let ckpt = Checkpoint { params: init_params(cfg(), seed).unwrap(), step, role: "student".into() };
            let bytes = encode_checkpoint(&ckpt, Dtype::F64).unwrap();
            let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            ckpt.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.step, step);
            prop_assert_eq!(encode_checkpoint(&back, Dtype::F64).unwrap(), bytes);
        }
    }

    #[test]
    fn f32_payload_rounds_each_value() {
        let ckpt = Checkpoint {
            params: init_params(cfg(), 2).unwrap(),
            step: 7,
            role: "teacher".into(),
        };
        let bytes = encode_checkpoint(&ckpt, Dtype::F32).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        for (a, b) in back.params.values().iter().zip(ckpt.params.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        // f32 content survives a second round trip unchanged
        assert_eq!(encode_checkpoint(&back, Dtype::F32).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let ckpt = Checkpoint {
            params: init_params(cfg(), 2).unwrap(),
            step: 1,
            role: "student".into(),
        };
        let bytes = encode_checkpoint(&ckpt, Dtype::F64).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, Path::new("x")).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra, Path::new("x")).is_err());
    }
}

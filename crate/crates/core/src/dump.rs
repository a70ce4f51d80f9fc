//! `QLBM1` binary field dumps.
//!
//! Layout: magic `b"QLBM1\0"`, `u32` version, `u8` kind, `u32` d, `u32` q,
//! `u32` dims[d], then little-endian `f64` values in node order (x fastest)
//! with the per-node components fastest. Integers are little-endian.

use std::io::{Read, Write};

use crate::error::BenchError;

pub const MAGIC: &[u8; 6] = b"QLBM1\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Population = 0,
    Amplitude = 1,
    /// `q` holds the number of per-node macroscopic components (`1 + d`).
    Macro = 2,
}

impl DumpKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DumpKind::Population),
            1 => Some(DumpKind::Amplitude),
            2 => Some(DumpKind::Macro),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub kind: DumpKind,
    pub d: u32,
    pub q: u32,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl FieldDump {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), BenchError> {
        let nodes: usize = self.dims.iter().map(|&x| x as usize).product();
        if self.dims.len() != self.d as usize || self.data.len() != nodes * self.q as usize {
            return Err(BenchError::Dump("header does not match payload length".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.kind as u8])?;
        w.write_all(&self.d.to_le_bytes())?;
        w.write_all(&self.q.to_le_bytes())?;
        for x in &self.dims {
            w.write_all(&x.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BenchError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(BenchError::Dump("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(BenchError::Dump(format!("unsupported version {version}")));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = DumpKind::from_u8(kind[0]).ok_or_else(|| BenchError::Dump(format!("unknown kind {}", kind[0])))?;
        let d = read_u32(&mut r)?;
        let q = read_u32(&mut r)?;
        if d == 0 || d > 3 {
            return Err(BenchError::Dump(format!("bad dimension {d}")));
        }
        let dims = (0..d).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().map(|&x| x as usize).product::<usize>() * q as usize;
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { kind, d, q, dims, data })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, BenchError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let d = FieldDump {
            kind: DumpKind::Amplitude,
            d: 2,
            q: 3,
            dims: vec![2, 2],
            data: (0..12).map(|x| x as f64 * -0.25).collect(),
        };
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], MAGIC);
        assert_eq!(buf.len(), 6 + 4 + 1 + 4 + 4 + 8 + 12 * 8);
        assert_eq!(FieldDump::read_from(&buf[..]).unwrap(), d);
    }

    #[test]
    fn rejects_garbage() {
        assert!(FieldDump::read_from(&b"QLBM2\0...."[..]).is_err());
        let d = FieldDump {
            kind: DumpKind::Macro,
            d: 1,
            q: 2,
            dims: vec![3],
            data: vec![0.0; 5],
        };
        assert!(d.write_to(Vec::new()).is_err());
    }
}

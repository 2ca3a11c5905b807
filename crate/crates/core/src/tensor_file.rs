//! Binary tensor records shared by the feature cache and checkpoints:
//! `b"MCTA"`, a version byte, `u32` rank, `rank` x `u32` dims, then
//! row-major little-endian `f32` values.

use std::io::{self, Read, Write};

pub const MAGIC: &[u8; 4] = b"MCTA";
pub const VERSION: u8 = 1;

pub fn write_tensor<W: Write>(w: &mut W, shape: &[usize], data: &[f32]) -> io::Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("shape {shape:?} does not hold {} values", data.len()),
        ));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_tensor<R: Read>(r: &mut R) -> io::Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    if magic[4] != VERSION {
        return Err(bad(format!("unsupported version {}", magic[4])));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(bad(format!("implausible rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<io::Result<_>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= 1 << 31)
        .ok_or_else(|| bad("tensor too large"))?;
    let mut bytes = vec![0u8; numel * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &[2, 1], &[1.0, -2.0]).unwrap();
        assert_eq!(&buf[..5], b"MCTA\x01");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..13], &2u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1u32.to_le_bytes());
        assert_eq!(&buf[17..21], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 25);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &[3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(read_tensor(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_tensor(&mut &buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let numel: usize = dims.iter().product();
            let data: Vec<f32> = (0..numel).map(|i| (i as f32 + seed as f32).sin()).collect();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &dims, &data).unwrap();
            let (shape, back) = read_tensor(&mut &buf[..]).unwrap();
            prop_assert_eq!(shape, dims);
            prop_assert_eq!(back, data);
        }
    }
}

//! `CTX1` tensor records.
//!
//! ```text
//! record    := "CTX1" | dtype:u8 (0 = f64) | ndim:u8 | dims: ndim × u32 LE | payload: f64 LE, row-major
//! container := record* | count:u64 LE
//! ```
//!
//! A single-tensor file is one bare record; a container appends the record
//! count after the last record.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: [u8; 4] = *b"CTX1";
const DTYPE_F64: u8 = 0;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.shape().len() + 8 * t.len());
    push_record(&mut out, t);
    out
}

fn push_record(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F64);
    out.push(u8::try_from(t.shape().len()).expect("tensor rank fits in u8"));
    for &d in t.shape() {
        out.extend_from_slice(&u32::try_from(d).expect("dimension fits in u32").to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Parses one record at the start of `bytes`; returns it and its length.
fn parse_record(bytes: &[u8]) -> Result<(Tensor, usize)> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(Error::TruncatedHeader);
    }
    if bytes[4] != DTYPE_F64 {
        return Err(Error::UnsupportedDtype(bytes[4]));
    }
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::TruncatedHeader);
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    if ndim == 0 || dims.contains(&0) {
        return Err(Error::InvalidShape(dims, "dimensions must be >= 1"));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::InvalidShape(dims.clone(), "element count overflows"))?;
    let available = bytes.len() - header;
    if available < count {
        return Err(Error::TruncatedPayload {
            expected: count,
            found: available,
        });
    }
    let data: Vec<f64> = bytes[header..header + count]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((Tensor::new(dims, data)?, header + count))
}

/// Decodes a single-tensor file; extra bytes after the record are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let (t, used) = parse_record(bytes)?;
    if used != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - used));
    }
    Ok(t)
}

pub fn encode_container(ts: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in ts {
        push_record(&mut out, t);
    }
    out.extend_from_slice(&(ts.len() as u64).to_le_bytes());
    out
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut rest = bytes;
    let mut out = Vec::new();
    while rest.len() != 8 {
        if rest.len() < 8 {
            return Err(Error::TruncatedHeader);
        }
        let (t, used) = parse_record(rest)?;
        out.push(t);
        rest = &rest[used..];
    }
    let declared = u64::from_le_bytes(rest.try_into().expect("8 bytes"));
    if declared != out.len() as u64 {
        return Err(Error::RecordCount {
            declared,
            found: out.len(),
        });
    }
    Ok(out)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_container(path: impl AsRef<Path>, ts: &[Tensor]) -> Result<()> {
    fs::write(path, encode_container(ts))?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    decode_container(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Tensor {
        Tensor::new(vec![2, 3], (1..=6).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn known_layout() {
        let b = encode_tensor(&sample());
        assert_eq!(&b[..4], b"CTX1");
        assert_eq!(b[4..6], [0, 2]);
        assert_eq!(b[6..14], [2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(b[14..22], 1.0f64.to_le_bytes());
        assert_eq!(b.len(), 14 + 48);
        assert_eq!(encode_tensor(&decode_tensor(&b).unwrap()), b);
    }

    #[test]
    fn distinct_errors() {
        let b = encode_tensor(&sample());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::BadMagic(_))));
        let mut bad = b.clone();
        bad[4] = 1;
        assert_eq!(decode_tensor(&bad).unwrap_err(), Error::UnsupportedDtype(1));
        assert_eq!(decode_tensor(&b[..9]).unwrap_err(), Error::TruncatedHeader);
        let err = decode_tensor(&b[..b.len() - 3]).unwrap_err();
        assert_eq!(
            err,
            Error::TruncatedPayload {
                expected: 48,
                found: 45
            }
        );
        assert!(err.to_string().contains("truncated payload"));
        let mut long = b.clone();
        long.push(0);
        assert_eq!(decode_tensor(&long).unwrap_err(), Error::TrailingBytes(1));
    }

    #[test]
    fn container_round_trip_and_count() {
        let ts = vec![
            sample(),
            Tensor::ones(&[1, 4, 4]),
            Tensor::new(vec![1], vec![-0.0]).unwrap(),
        ];
        let b = encode_container(&ts);
        let back = decode_container(&b).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(encode_container(&back), b);
        let mut wrong = b.clone();
        let n = wrong.len();
        wrong[n - 8] = 5;
        assert_eq!(
            decode_container(&wrong).unwrap_err(),
            Error::RecordCount { declared: 5, found: 3 }
        );
        assert!(decode_container(&encode_container(&[])).unwrap().is_empty());
        assert!(decode_container(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ctx");
        write_tensor(&p, &sample()).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), sample());
        assert!(matches!(read_tensor(dir.path().join("missing")), Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn bit_exact(bits in prop::collection::vec(any::<u64>(), 1..200)) {
            let data: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let t = Tensor::new(vec![data.len()], data).unwrap();
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn header_mutations_never_panic(pos in 0usize..30, byte in any::<u8>(), cut in 0usize..70) {
            let mut b = encode_container(&[sample()]);
            if pos < b.len() {
                b[pos] = byte;
            }
            let cut = cut.min(b.len());
            let _ = decode_container(&b[..cut]);
            let _ = decode_tensor(&b[..cut]);
        }
    }
}

//! GRD1: a minimal container for gridded float arrays.
//!
//! Layout of one record, all integers little-endian:
//!
//! ```text
//! magic     4 bytes  "GRD1"
//! version   u16      currently 1
//! dtype     u8       0 = float32, 1 = float64
//! ndim      u8
//! dims      ndim x u64
//! names     u32 count, then per name: u32 byte length + UTF-8 bytes
//! payload   product(dims) values, row-major, contiguous
//! ```
//!
//! Several records may be concatenated in one file; readers stop at a clean EOF.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRD1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dims: Vec<u64>,
    pub names: Vec<String>,
    pub payload: Payload,
}

impl Record {
    pub fn from_array(array: &ArrayD<f64>, names: Vec<String>, dtype: Dtype) -> Self {
        let flat: Vec<f64> = array.as_standard_layout().iter().copied().collect();
        let payload = match dtype {
            Dtype::F64 => Payload::F64(flat),
            Dtype::F32 => Payload::F32(flat.into_iter().map(|v| v as f32).collect()),
        };
        Self { dims: array.shape().iter().map(|&d| d as u64).collect(), names, payload }
    }

    /// Metadata-only record (empty payload).
    pub fn header(names: Vec<String>) -> Self {
        Self { dims: vec![0], names, payload: Payload::F64(Vec::new()) }
    }

    pub fn to_array(&self) -> Result<ArrayD<f64>> {
        let dims: Vec<usize> = self.dims.iter().map(|&d| d as usize).collect();
        ArrayD::from_shape_vec(IxDyn(&dims), self.payload.to_f64()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let expected: u64 = self.dims.iter().product();
        if expected != self.payload.len() as u64 {
            return Err(Error::Format(format!(
                "payload holds {} values but dims {:?} need {expected}",
                self.payload.len(),
                self.dims
            )));
        }
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::Format("too many dimensions".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.payload.dtype().code(), self.dims.len() as u8])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&(self.names.len() as u32).to_le_bytes())?;
        for n in &self.names {
            w.write_all(&(n.len() as u32).to_le_bytes())?;
            w.write_all(n.as_bytes())?;
        }
        match &self.payload {
            Payload::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Payload::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads one record; `Ok(None)` on EOF before the first byte.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut magic = [0u8; 4];
        match read_exact_or_eof(r, &mut magic)? {
            false => return Ok(None),
            true if &magic != MAGIC => {
                return Err(Error::Format(format!("bad magic {magic:?}, expected GRD1")));
            }
            true => {}
        }
        let version = u16::from_le_bytes(read_n::<2>(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported GRD1 version {version}")));
        }
        let [dtype, ndim] = read_n::<2>(r)?;
        let dtype = Dtype::from_code(dtype)?;
        let dims: Vec<u64> = (0..ndim).map(|_| read_n::<8>(r).map(u64::from_le_bytes)).collect::<Result<_>>()?;
        let nnames = u32::from_le_bytes(read_n::<4>(r)?) as usize;
        let mut names = Vec::with_capacity(nnames.min(1024));
        for _ in 0..nnames {
            let len = u32::from_le_bytes(read_n::<4>(r)?) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(truncated)?;
            names.push(String::from_utf8(buf).map_err(|e| Error::Format(format!("channel name: {e}")))?);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))? as usize;
        let mut bytes = vec![0u8; count * dtype.size()];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let payload = match dtype {
            Dtype::F32 => Payload::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            ),
            Dtype::F64 => Payload::F64(
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            ),
        };
        Ok(Some(Record { dims, names, payload }))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated GRD1 record: payload shorter than dims require".into())
    } else {
        Error::Io(e)
    }
}

fn read_n<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(Error::Format("truncated GRD1 magic".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in records {
            r.write_to(&mut w)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut r = open(path)?;
    let mut out = Vec::new();
    while let Some(rec) = Record::read_from(&mut r)? {
        out.push(rec);
    }
    Ok(out)
}

pub fn write_array(path: &Path, array: &ArrayD<f64>, names: Vec<String>, dtype: Dtype) -> Result<()> {
    write_records(path, &[Record::from_array(array, names, dtype)])
}

/// Reads the first record of `path`.
pub fn read_array(path: &Path) -> Result<(ArrayD<f64>, Vec<String>)> {
    let mut r = open(path)?;
    let rec = Record::read_from(&mut r)?.ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?;
    Ok((rec.to_array()?, rec.names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let rec = Record {
            dims: vec![1, 2],
            names: vec!["u".into()],
            payload: Payload::F32(vec![1.0, -2.0]),
        };
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();
        let mut expected = b"GRD1".to_vec();
        expected.extend(1u16.to_le_bytes());
        expected.extend([0u8, 2u8]);
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"u");
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn unknown_version_is_hard_error() {
        let rec = Record::header(vec![]);
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();
        buf[4] = 2;
        let err = Record::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
    }

    #[test]
    fn short_payload_rejected() {
        let rec = Record { dims: vec![3], names: vec![], payload: Payload::F64(vec![1.0, 2.0, 3.0]) };
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(Record::read_from(&mut buf.as_slice()).is_err());
        let bad = Record { dims: vec![4], names: vec![], payload: Payload::F64(vec![1.0]) };
        assert!(bad.write_to(&mut Vec::new()).is_err());
    }

    #[test]
    fn concatenated_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("multi.grd1");
        let a = Record::header(vec!["meta".into(), "{}".into()]);
        let b = Record::from_array(&ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn(), vec!["w".into()], Dtype::F64);
        write_records(&p, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_records(&p).unwrap(), vec![a, b]);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            dims in proptest::collection::vec(1u64..5, 1..4),
            names in proptest::collection::vec("[a-zA-Z_ äö]{0,8}", 0..3),
            f64s in proptest::collection::vec(any::<f64>(), 64),
            single in any::<bool>(),
        ) {
            let n: u64 = dims.iter().product();
            let payload = if single {
                Payload::F32(f64s.iter().take(n as usize).map(|&v| v as f32).collect())
            } else {
                Payload::F64(f64s[..n as usize].to_vec())
            };
            let rec = Record { dims, names, payload };
            let mut buf = Vec::new();
            rec.write_to(&mut buf).unwrap();
            let back = Record::read_from(&mut buf.as_slice()).unwrap().unwrap();
            let mut buf2 = Vec::new();
            back.write_to(&mut buf2).unwrap();
            prop_assert_eq!(buf, buf2);
            prop_assert_eq!(back.names, rec.names);
        }
    }
}

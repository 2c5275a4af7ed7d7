//! Little-endian tensor files.
//!
//! View files: `ALIADV01`, three `u64` dimensions `[samples, channels, time]`,
//! then `f32` values. Parameter files: `ALIADP01`, a `u32` name length and
//! the UTF-8 name, a `u32` rank and that many `u64` dimensions, then `f32`
//! values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const VIEW_MAGIC: [u8; 8] = *b"ALIADV01";
pub const PARAM_MAGIC: [u8; 8] = *b"ALIADP01";

/// Upper bound on ranks and name lengths accepted when reading, so a
/// corrupt header cannot request a huge allocation.
const MAX_HEADER_ITEMS: u64 = 1 << 16;

struct Writer<'a> {
    path: &'a Path,
    out: BufWriter<File>,
}

impl<'a> Writer<'a> {
    fn create(path: &'a Path) -> Result<Self> {
        let file = File::create(path).map_err(Error::io(path))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.out.write_all(b).map_err(Error::io(self.path))
    }

    fn u32(&mut self, x: u32) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    fn u64(&mut self, x: u64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    fn values(&mut self, data: &[f64]) -> Result<()> {
        for &x in data {
            self.bytes(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(self.path))
    }
}

struct Reader<'a> {
    path: &'a Path,
    inp: BufReader<File>,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(path))?;
        Ok(Self {
            path,
            inp: BufReader::new(file),
        })
    }

    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inp.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "file is truncated")
            } else {
                Error::io(self.path)(e)
            }
        })?;
        Ok(buf)
    }

    fn magic(&mut self, expect: &[u8; 8]) -> Result<()> {
        let got = self.exact::<8>()?;
        if &got != expect {
            return Err(Error::format(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    fn bounded(&mut self, x: u64, what: &str) -> Result<usize> {
        if x > MAX_HEADER_ITEMS {
            return Err(Error::format(self.path, format!("implausible {what} {x}")));
        }
        Ok(x as usize)
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; count * 4];
        self.inp.read_exact(&mut raw).map_err(|_| {
            Error::format(self.path, format!("expected {count} values, file is shorter"))
        })?;
        let mut rest = [0u8; 1];
        if self.inp.read(&mut rest).map_err(Error::io(self.path))? != 0 {
            return Err(Error::format(self.path, "trailing bytes after the data"));
        }
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    }
}

fn numel(path: &Path, shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, format!("shape {shape:?} overflows")))
}

/// Writes one view block `[samples, channels, time]`.
pub fn write_view(path: &Path, shape: [usize; 3], data: &[f64]) -> Result<()> {
    if numel(path, &shape)? != data.len() {
        return Err(Error::format(
            path,
            format!("{} values for shape {shape:?}", data.len()),
        ));
    }
    let mut w = Writer::create(path)?;
    w.bytes(&VIEW_MAGIC)?;
    for d in shape {
        w.u64(d as u64)?;
    }
    w.values(data)?;
    w.finish()
}

pub fn read_view(path: &Path) -> Result<([usize; 3], Vec<f64>)> {
    let mut r = Reader::open(path)?;
    r.magic(&VIEW_MAGIC)?;
    let mut shape = [0usize; 3];
    for d in &mut shape {
        let x = r.u64()?;
        *d = usize::try_from(x).map_err(|_| Error::format(path, "dimension too large"))?;
    }
    let n = numel(path, &shape)?;
    Ok((shape, r.values(n)?))
}

/// Writes one named parameter tensor.
pub fn write_param(path: &Path, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    if numel(path, shape)? != data.len() {
        return Err(Error::format(
            path,
            format!("{} values for shape {shape:?}", data.len()),
        ));
    }
    let mut w = Writer::create(path)?;
    w.bytes(&PARAM_MAGIC)?;
    w.u32(name.len() as u32)?;
    w.bytes(name.as_bytes())?;
    w.u32(shape.len() as u32)?;
    for &d in shape {
        w.u64(d as u64)?;
    }
    w.values(data)?;
    w.finish()
}

/// Reads a parameter file as `(name, shape, values)`.
pub fn read_param(path: &Path) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let mut r = Reader::open(path)?;
    r.magic(&PARAM_MAGIC)?;
    let len = r.u32()?;
    let len = r.bounded(len as u64, "name length")?;
    let mut name = vec![0u8; len];
    r.inp
        .read_exact(&mut name)
        .map_err(|_| Error::format(path, "file is truncated"))?;
    let name = String::from_utf8(name).map_err(|_| Error::format(path, "name is not UTF-8"))?;
    let rank = r.u32()?;
    let rank = r.bounded(rank as u64, "rank")?;
    let shape = (0..rank)
        .map(|_| {
            let d = r.u64()?;
            usize::try_from(d).map_err(|_| Error::format(path, "dimension too large"))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = numel(path, &shape)?;
    Ok((name, shape, r.values(n)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        write_view(&path, [2, 3, 2], &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"ALIADV01");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 8 + 24 + 12 * 4);
        assert_eq!(f32::from_le_bytes(bytes[32..36].try_into().unwrap()), -1.0);
        let (shape, back) = read_view(&path).unwrap();
        assert_eq!(shape, [2, 3, 2]);
        assert_eq!(back, data);
    }

    #[test]
    fn param_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        write_param(&path, "enc.block0.conv1.weight", &[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let (name, shape, values) = read_param(&path).unwrap();
        assert_eq!(name, "enc.block0.conv1.weight");
        assert_eq!(shape, vec![2, 1, 3]);
        assert_eq!(values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        write_view(&path, [1, 1, 4], &[0.0; 4]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_view(&path), Err(Error::Format { .. })));

        bytes.extend([0, 0, 0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_view(&path), Err(Error::Format { .. })));

        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = read_view(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");

        assert!(write_view(&path, [2, 2, 2], &[0.0; 3]).is_err());
        assert!(matches!(read_param(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}

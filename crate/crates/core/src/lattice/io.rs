//! `PHOM` binary field dumps.
//!
//! Layout: the four magic bytes `PHOM`, then little-endian `u32` format
//! version, `d`, `n`, `n_t`, then `n^d * n_t` little-endian `f64` values in
//! the lattice's time-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Lattice, ScalarField};
use crate::error::{Error, Result};

pub const PHOM_MAGIC: [u8; 4] = *b"PHOM";
pub const PHOM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhomHeader {
    pub version: u32,
    pub d: u32,
    pub n: u32,
    pub n_t: u32,
}

impl PhomHeader {
    fn value_count(&self) -> Result<usize> {
        (self.n as usize)
            .checked_pow(self.d)
            .and_then(|s| s.checked_mul(self.n_t as usize))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))
    }
}

pub fn write_phom(path: &Path, lattice: &Lattice, values: &[f64]) -> Result<()> {
    if values.len() != lattice.sites() {
        return Err(Error::LatticeMismatch(format!(
            "{} values for {} sites",
            values.len(),
            lattice.sites()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&PHOM_MAGIC)?;
    for v in [PHOM_VERSION, lattice.d() as u32, lattice.n() as u32, lattice.n_t() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_phom(path: &Path) -> Result<(PhomHeader, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != PHOM_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    let mut next = || -> Result<u32> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let header = PhomHeader { version: next()?, d: next()?, n: next()?, n_t: next()? };
    if header.version != PHOM_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    let count = header.value_count()?;
    let mut bytes = Vec::with_capacity(count * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

impl ScalarField {
    pub fn write_phom(&self, path: &Path) -> Result<()> {
        write_phom(path, self.lattice(), self.values())
    }

    /// Reads a dump and attaches it to `lattice`, whose sizes must match the header.
    pub fn read_phom(path: &Path, lattice: &Lattice) -> Result<Self> {
        let (h, values) = read_phom(path)?;
        if (h.d as usize, h.n as usize, h.n_t as usize) != (lattice.d(), lattice.n(), lattice.n_t())
        {
            return Err(Error::LatticeMismatch(format!("file header {h:?} vs {lattice:?}")));
        }
        ScalarField::from_values(lattice, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.phom");
        let l = Lattice::new(2, 3, 2, 1.0).unwrap();
        let f = ScalarField::from_fn(&l, |x, t| x[0] - 2.0 * x[1] + t);
        f.write_phom(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"PHOM");
        assert_eq!(&bytes[4..20], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 18 * 8);
        assert_eq!(&bytes[20 + 8..20 + 16], &f.values()[1].to_le_bytes());
        let back = ScalarField::read_phom(&p, &l).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.phom");
        std::fs::write(&p, b"NOPE\x01\0\0\0").unwrap();
        assert!(matches!(read_phom(&p), Err(Error::Format(_))));
        let l = Lattice::new(1, 2, 2, 1.0).unwrap();
        ScalarField::zeros(&l).write_phom(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_phom(&p), Err(Error::Format(_))));
        let other = Lattice::new(1, 4, 2, 1.0).unwrap();
        ScalarField::zeros(&l).write_phom(&p).unwrap();
        assert!(ScalarField::read_phom(&p, &other).is_err());
    }
}

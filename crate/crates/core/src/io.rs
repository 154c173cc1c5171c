//! Little-endian binary formats for datasets and modems.
//!
//! Dataset (`UWAD`):
//!
//! ```text
//! magic "UWAD" | version u32 | config_len u64 | config JSON | count u64 |
//! count x ( H: M' x M complex | H_e,OFDM: N x N complex )
//! ```
//!
//! Modem (`UWMD`):
//!
//! ```text
//! magic "UWMD" | version u32 | M u64 | N u64 | M' u64 | Phi (M x N) | Psi^H (N x M')
//! ```
//!
//! Complex matrices are row-major, each entry two `f64` (re, im).

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelMatrix;
use crate::config::SystemConfig;
use crate::dataset::DatasetPair;
use crate::error::{Error, Result};
use crate::modem::{EquivalentChannel, Modem};

pub const DATASET_MAGIC: [u8; 4] = *b"UWAD";
pub const MODEM_MAGIC: [u8; 4] = *b"UWMD";
pub const DATASET_VERSION: u32 = 1;
pub const MODEM_VERSION: u32 = 1;

/// Append-only little-endian encoder.
#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    /// Length-prefixed (u64) UTF-8.
    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn complex_matrix(&mut self, m: &DMatrix<Complex64>) {
        self.buf.reserve(m.len() * 16);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)].re);
                self.f64(m[(i, j)].im);
            }
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Bounds-checked little-endian decoder.
#[derive(Debug)]
pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self) -> Result<[u8; 4]> {
        Ok(self.take(4)?.try_into().expect("four bytes"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    /// A u64 that must fit in memory-sized counts.
    pub fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Malformed(format!("length {v} too large")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    pub fn str(&mut self) -> Result<&'a str> {
        let len = self.len_u64()?;
        std::str::from_utf8(self.take(len)?).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Malformed("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }

    pub fn complex_matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<Complex64>> {
        let values = self.f64_vec(2 * rows * cols)?;
        Ok(DMatrix::from_fn(rows, cols, |i, j| {
            let k = 2 * (i * cols + j);
            Complex64::new(values[k], values[k + 1])
        }))
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

/// A set of channel pairs plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SystemConfig,
    pub pairs: Vec<DatasetPair>,
}

impl Dataset {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.str(&self.config.to_json());
        w.u64(self.pairs.len() as u64);
        for pair in &self.pairs {
            w.complex_matrix(pair.h.matrix());
            w.complex_matrix(pair.h_e_ofdm.matrix());
        }
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.magic()?;
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion {
                kind: "dataset",
                version,
            });
        }
        let config = SystemConfig::from_json(r.str()?)?;
        let dims = config.dims()?;
        let count = r.len_u64()?;
        let per_pair = 16 * (dims.m_prime * dims.m + dims.n * dims.n);
        if count.checked_mul(per_pair) != Some(r.remaining()) {
            if count.saturating_mul(per_pair) > r.remaining() {
                return Err(Error::Truncated {
                    offset: bytes.len(),
                    needed: count.saturating_mul(per_pair) - r.remaining(),
                });
            }
            return Err(Error::Malformed(format!(
                "declared {count} pairs but payload holds {} bytes",
                r.remaining()
            )));
        }
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let h = ChannelMatrix(r.complex_matrix(dims.m_prime, dims.m)?);
            let h_e_ofdm = EquivalentChannel(r.complex_matrix(dims.n, dims.n)?);
            pairs.push(DatasetPair { h, h_e_ofdm });
        }
        r.finish()?;
        Ok(Self { config, pairs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Byte size of an encoded dataset with `count` pairs.
    pub fn encoded_len(config: &SystemConfig, count: usize) -> Result<usize> {
        let d = config.dims()?;
        Ok(4 + 4 + 8 + config.to_json().len() + 8 + count * 16 * (d.m_prime * d.m + d.n * d.n))
    }
}

pub fn encode_modem(modem: &Modem) -> Vec<u8> {
    let (m, n, m_prime) = modem.dims();
    let mut w = ByteWriter::new();
    w.bytes(&MODEM_MAGIC);
    w.u32(MODEM_VERSION);
    w.u64(m as u64);
    w.u64(n as u64);
    w.u64(m_prime as u64);
    w.complex_matrix(modem.phi());
    w.complex_matrix(modem.psi_h());
    w.into_inner()
}

/// Decodes and re-checks both energy budgets.
pub fn decode_modem(bytes: &[u8]) -> Result<Modem> {
    let mut r = ByteReader::new(bytes);
    let magic = r.magic()?;
    if magic != MODEM_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != MODEM_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: "modem",
            version,
        });
    }
    let m = r.len_u64()?;
    let n = r.len_u64()?;
    let m_prime = r.len_u64()?;
    let phi = r.complex_matrix(m, n)?;
    let psi_h = r.complex_matrix(n, m_prime)?;
    r.finish()?;
    Modem::new(phi, psi_h)
}

pub fn save_modem(modem: &Modem, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_modem(modem))?;
    Ok(())
}

pub fn load_modem(path: impl AsRef<Path>) -> Result<Modem> {
    decode_modem(&fs::read(path)?)
}

/// Human-readable summary of a dataset or modem file.
pub fn describe(bytes: &[u8]) -> Result<String> {
    let magic = ByteReader::new(bytes).magic()?;
    match magic {
        DATASET_MAGIC => {
            let ds = Dataset::decode(bytes)?;
            let d = ds.config.dims()?;
            Ok(format!(
                "dataset (UWAD v{DATASET_VERSION})\n  config: {}\n  dims: M={} M'={} L={} N={}\n  pairs: {}",
                ds.config.to_json(),
                d.m,
                d.m_prime,
                d.l,
                d.n,
                ds.pairs.len()
            ))
        }
        MODEM_MAGIC => {
            let modem = decode_modem(bytes)?;
            let (m, n, m_prime) = modem.dims();
            let (e_phi, e_psi) = modem.energies();
            Ok(format!(
                "modem (UWMD v{MODEM_VERSION})\n  dims: M={m} N={n} M'={m_prime}\n  \
                 energy(phi) = {e_phi:.12} (target {n})\n  energy(psi_h) = {e_psi:.12} (target {:.12})",
                n as f64 * m_prime as f64 / m as f64
            ))
        }
        other => Err(Error::BadMagic(other)),
    }
}

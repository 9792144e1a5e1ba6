//! Binary field checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "NSLABCK\0"
//! version    u32
//! header_len u32
//! header     JSON (grid, seed, field and array directory, free-form metadata)
//! payload    f64 values: every field in (k1, k2, k3, component) order with
//!            (re, im) per coefficient, then every named array
//! crc32      u32 over all preceding bytes
//! ```
//!
//! Floating-point grid parameters are stored as IEEE bit patterns so that a
//! reloaded grid compares equal to the original.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::field::SpectralVectorField;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const MAGIC: &[u8; 8] = b"NSLABCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct GridHeader {
    box_length: f64,
    box_length_bits: u64,
    points_per_axis: usize,
    dealias_fraction: f64,
    dealias_fraction_bits: u64,
}

impl GridHeader {
    fn from_grid(g: &GridSpec) -> Self {
        Self {
            box_length: g.box_length(),
            box_length_bits: g.box_length().to_bits(),
            points_per_axis: g.points_per_axis(),
            dealias_fraction: g.dealias_fraction(),
            dealias_fraction_bits: g.dealias_fraction().to_bits(),
        }
    }

    fn to_grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            f64::from_bits(self.box_length_bits),
            self.points_per_axis,
            f64::from_bits(self.dealias_fraction_bits),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    grid: GridHeader,
    seed: Option<u64>,
    fields: Vec<String>,
    arrays: Vec<(String, usize)>,
    metadata: BTreeMap<String, String>,
}

/// Everything a checkpoint file carries.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub grid: GridSpec,
    pub seed: Option<u64>,
    pub fields: Vec<(String, SpectralVectorField)>,
    pub arrays: Vec<(String, Vec<f64>)>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(grid: &GridSpec) -> Self {
        Self { grid: *grid, seed: None, fields: Vec::new(), arrays: Vec::new(), metadata: BTreeMap::new() }
    }

    pub fn field(&self, name: &str) -> Option<&SpectralVectorField> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for (name, f) in &self.fields {
            if f.grid() != &self.grid {
                return Err(Error::Inconsistent(format!("field {name} is on a different grid")));
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            grid: GridHeader::from_grid(&self.grid),
            seed: self.seed,
            fields: self.fields.iter().map(|(n, _)| n.clone()).collect(),
            arrays: self.arrays.iter().map(|(n, a)| (n.clone(), a.len())).collect(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Inconsistent(e.to_string()))?;
        let modes = self.grid.mode_count();
        let payload_values = self.fields.len() * modes * 6 + self.arrays.iter().map(|(_, a)| a.len()).sum::<usize>();
        let mut out = Vec::with_capacity(20 + header.len() + 8 * payload_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, f) in &self.fields {
            for m in 0..modes {
                for c in f.coeff(m) {
                    out.extend_from_slice(&c.re.to_le_bytes());
                    out.extend_from_slice(&c.im.to_le_bytes());
                }
            }
        }
        for (_, a) in &self.arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: &str| Error::Checkpoint { path: path.to_path_buf(), reason: reason.to_string() };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("four bytes"));
        if version != FORMAT_VERSION {
            return Err(fail(&format!("unsupported version {version}, expected {FORMAT_VERSION}")));
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().expect("four bytes")) as usize;
        let header_end = 16 + header_len;
        if body.len() < header_end {
            return Err(fail("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[16..header_end]).map_err(|e| fail(&format!("bad header: {e}")))?;
        let grid = header.grid.to_grid().map_err(|e| fail(&e.to_string()))?;
        let modes = grid.mode_count();
        let expected = header.fields.len() * modes * 6 + header.arrays.iter().map(|(_, n)| n).sum::<usize>();
        let payload = &body[header_end..];
        if payload.len() != 8 * expected {
            return Err(fail("payload size does not match header"));
        }
        let mut values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")));
        let mut fields = Vec::with_capacity(header.fields.len());
        for name in header.fields {
            let mut comps = [vec![Complex64::default(); modes], vec![Complex64::default(); modes], vec![Complex64::default(); modes]];
            for m in 0..modes {
                for comp in comps.iter_mut() {
                    let re = values.next().expect("size checked");
                    let im = values.next().expect("size checked");
                    comp[m] = Complex64::new(re, im);
                }
            }
            let f = SpectralVectorField::from_components(&grid, comps)?;
            let f = if f.divergence_residual() <= 1e-12 { f.mark_divergence_free() } else { f };
            fields.push((name, f));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for (name, len) in header.arrays {
            arrays.push((name, values.by_ref().take(len).collect()));
        }
        Ok(Self { grid, seed: header.seed, fields, arrays, metadata: header.metadata })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

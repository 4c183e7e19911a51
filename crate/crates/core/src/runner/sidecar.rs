// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation sidecar: magic `EACT`, u32 version, u32 dim, then rows of
//! `dim` little-endian f32 values. Run logs reference rows by byte offset.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::steering::Cursor;

pub const SIDECAR_MAGIC: &[u8; 4] = b"EACT";
pub const SIDECAR_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
}

impl Sidecar {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    /// Append a row, returning its byte offset.
    pub fn push(&mut self, row: Vec<f32>) -> Result<u64> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        let offset = self.offset_of(self.rows.len());
        self.rows.push(row);
        Ok(offset)
    }

    pub fn offset_of(&self, row: usize) -> u64 {
        HEADER_LEN + (row as u64) * 4 * self.dim as u64
    }

    /// Row stored at byte `offset`.
    pub fn row_at(&self, offset: u64) -> Result<&[f32]> {
        let stride = 4 * self.dim as u64;
        let bad = || Error::Truncated {
            what: "activation sidecar",
            detail: format!("no row at offset {offset}"),
        };
        if offset < HEADER_LEN || stride == 0 || (offset - HEADER_LEN) % stride != 0 {
            return Err(bad());
        }
        self.rows
            .get(((offset - HEADER_LEN) / stride) as usize)
            .map(Vec::as_slice)
            .ok_or_else(bad)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize + 4 * self.dim * self.rows.len());
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for row in &self.rows {
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes, "activation sidecar");
        c.header(SIDECAR_MAGIC, SIDECAR_VERSION)?;
        let dim = c.u32()? as usize;
        if dim == 0 {
            return Err(Error::Truncated {
                what: "activation sidecar",
                detail: "zero dimension".into(),
            });
        }
        if c.remaining() % (4 * dim) != 0 {
            return Err(Error::Truncated {
                what: "activation sidecar",
                detail: format!("{} payload bytes is not a whole number of rows", c.remaining()),
            });
        }
        let mut rows = Vec::with_capacity(c.remaining() / (4 * dim));
        while c.remaining() > 0 {
            rows.push((0..dim).map(|_| c.f32()).collect::<Result<Vec<f32>>>()?);
        }
        Ok(Self { dim, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

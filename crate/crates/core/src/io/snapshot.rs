//! Binary snapshot files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "KSNS"  version:u32  dim:u32  bc:u8  shape:3×u64  extent:3×f64  t:f64
//! nfields:u32  { name_len:u32 name:bytes count:u64 }×nfields
//! payload: each field's f64 values in header order
//! ```
//!
//! Scalar fields are stored in cell order; velocity components `u0`, `u1`,
//! `u2` in face order.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::grid::{BcMode, Grid, GridError, Quantity, ScalarField, VectorField};
use crate::model::SimState;

pub const MAGIC: &[u8; 4] = b"KSNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0} (expected {VERSION})")]
    Version(u32),
    #[error("truncated snapshot: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn field_list(state: &SimState) -> Vec<(String, &[f64])> {
    let mut out = vec![
        ("n".to_string(), state.n.values()),
        ("c".to_string(), state.c.values()),
        ("m".to_string(), state.m.values()),
    ];
    for (a, comp) in state.u.components().iter().enumerate() {
        out.push((format!("u{a}"), comp.as_slice()));
    }
    out.push(("p".to_string(), state.p.values()));
    out
}

pub fn encode_snapshot(state: &SimState) -> Vec<u8> {
    let g = state.grid();
    let fields = field_list(state);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    buf.push(match g.bc() {
        BcMode::Box => 0,
        BcMode::Periodic => 1,
    });
    for s in g.shape() {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for e in g.extent() {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    buf.extend_from_slice(&state.t.to_le_bytes());
    buf.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for (name, vals) in &fields {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    }
    for (_, vals) in &fields {
        for v in vals.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], SnapshotError> {
        if self.bytes.len() - self.pos < k {
            return Err(SnapshotError::Truncated { offset: self.pos, needed: k, len: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<SimState, SnapshotError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| SnapshotError::BadMagic)? != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let dim = r.u32()? as usize;
    let bc = match r.take(1)?[0] {
        0 => BcMode::Box,
        1 => BcMode::Periodic,
        b => return Err(SnapshotError::Header(format!("unknown boundary code {b}"))),
    };
    let mut shape = [0usize; 3];
    for s in &mut shape {
        *s = r.u64()? as usize;
    }
    let mut extent = [0.0; 3];
    for e in &mut extent {
        *e = r.f64()?;
    }
    if !(2..=3).contains(&dim) {
        return Err(SnapshotError::Header(format!("dimension {dim}")));
    }
    let grid = Grid::new(dim, &shape[..dim], &extent[..dim], bc)?;
    let t = r.f64()?;
    let nfields = r.u32()? as usize;
    let expected: Vec<(String, usize)> = {
        let z = SimState::zeros(grid);
        field_list(&z).into_iter().map(|(k, v)| (k, v.len())).collect()
    };
    if nfields != expected.len() {
        return Err(SnapshotError::Header(format!("{nfields} fields, expected {}", expected.len())));
    }
    for (name, count) in &expected {
        let len = r.u32()? as usize;
        let got = r.take(len)?;
        let cnt = r.u64()? as usize;
        if got != name.as_bytes() || cnt != *count {
            return Err(SnapshotError::Header(format!(
                "field {:?} with {cnt} values, expected {name:?} with {count}",
                String::from_utf8_lossy(got)
            )));
        }
    }
    let payload: usize = expected.iter().map(|(_, c)| c * 8).sum();
    if bytes.len() - r.pos < payload {
        return Err(SnapshotError::Truncated { offset: r.pos, needed: payload, len: bytes.len() });
    }
    if bytes.len() - r.pos > payload {
        return Err(SnapshotError::Header(format!("{} trailing bytes", bytes.len() - r.pos - payload)));
    }
    let mut read_vec = |count: usize| -> Result<Vec<f64>, SnapshotError> { (0..count).map(|_| r.f64()).collect() };
    let scalar = |v: Vec<f64>, q: Quantity| ScalarField::from_values(grid, v).with_quantity(q);
    let n = scalar(read_vec(expected[0].1)?, Quantity::Density);
    let c = scalar(read_vec(expected[1].1)?, Quantity::Concentration);
    let m = scalar(read_vec(expected[2].1)?, Quantity::Density);
    let comps = (0..dim).map(|a| read_vec(expected[3 + a].1)).collect::<Result<Vec<_>, _>>()?;
    let p = scalar(read_vec(expected[3 + dim].1)?, Quantity::Pressure);
    Ok(SimState { t, n, c, m, u: VectorField::from_components(grid, comps), p })
}

pub fn write_snapshot(state: &SimState, path: &Path) -> Result<(), SnapshotError> {
    fs::write(path, encode_snapshot(state))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<SimState, SnapshotError> {
    decode_snapshot(&fs::read(path)?)
}

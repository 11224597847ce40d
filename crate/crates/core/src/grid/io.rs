//! Raw field dumps (`GDF1`) and CSV export.
//!
//! A GDF1 file is a 32-byte header followed by the node values as
//! little-endian 64-bit floats, row-major over nodes with components
//! innermost:
//!
//! ```text
//! bytes 0..4    magic "GDF1"
//! bytes 4..8    spatial dimension N        (u32 LE)
//! bytes 8..12   component count M          (u32 LE)
//! bytes 12..16  nodes along x              (u32 LE)
//! bytes 16..20  nodes along y (1 in 1D)    (u32 LE)
//! bytes 20..32  reserved, zero
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use thiserror::Error;

use super::{FieldError, Grid, VectorField};
use crate::tensor::MAX_DIM;

const MAGIC: &[u8; 4] = b"GDF1";
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a GDF1 dump")]
    BadMagic,
    #[error("header declares an unsupported layout: {0}")]
    BadHeader(String),
    #[error("payload truncated: expected {expected} values, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Header plus payload of a raw dump, before attachment to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub dim: usize,
    pub m: usize,
    pub nodes: [usize; MAX_DIM],
    pub values: Vec<f64>,
}

pub fn write_gdf<W: Write>(w: &mut W, field: &VectorField) -> Result<(), DumpError> {
    let grid = field.grid();
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&(grid.dim() as u32).to_le_bytes());
    header[8..12].copy_from_slice(&(field.components() as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(grid.node_counts()[0] as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(grid.node_counts()[1] as u32).to_le_bytes());
    w.write_all(&header)?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gdf<R: Read>(r: &mut R) -> Result<FieldDump, DumpError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(DumpError::BadMagic);
    }
    let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (dim, m, nx, ny) = (word(4), word(8), word(12), word(16));
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(DumpError::BadHeader(format!("dimension {dim}")));
    }
    if m == 0 || m > crate::tensor::MAX_COMPONENTS {
        return Err(DumpError::BadHeader(format!("component count {m}")));
    }
    if nx < 2 || (dim == 2 && ny < 2) || (dim == 1 && ny != 1) {
        return Err(DumpError::BadHeader(format!("node counts {nx}x{ny}")));
    }
    let expected = m * nx * ny;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(DumpError::Truncated { expected, got: payload.len() / 8 });
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(FieldDump { dim, m, nodes: [nx, ny], values })
}

impl FieldDump {
    /// Attach the dump to a grid with matching node counts.
    pub fn into_field(self, grid: &Arc<Grid>) -> Result<VectorField, DumpError> {
        if grid.dim() != self.dim || grid.node_counts() != self.nodes {
            return Err(DumpError::BadHeader(format!(
                "dump is {}D {}x{}, grid is {}D {}x{}",
                self.dim,
                self.nodes[0],
                self.nodes[1],
                grid.dim(),
                grid.node_counts()[0],
                grid.node_counts()[1]
            )));
        }
        Ok(VectorField::from_values(grid, self.m, self.values)?)
    }
}

/// One row per node: coordinates then components.
pub fn write_csv<W: Write>(w: &mut W, field: &VectorField) -> Result<(), std::io::Error> {
    let grid = field.grid();
    let m = field.components();
    let mut header = String::from("x");
    if grid.dim() == 2 {
        header.push_str(",y");
    }
    for k in 0..m {
        header.push_str(&format!(",u{k}"));
    }
    writeln!(w, "{header}")?;
    for node in 0..grid.num_nodes() {
        let pos = grid.node_pos(node);
        let mut row = format!("{}", pos[0]);
        if grid.dim() == 2 {
            row.push_str(&format!(",{}", pos[1]));
        }
        for k in 0..m {
            row.push_str(&format!(",{}", field.values()[node * m + k]));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gdf_round_trip_is_exact() {
        let grid = Grid::rect(3, 4, 1.0, 2.0).unwrap();
        let field = VectorField::from_fn(&grid, 2, |p| {
            crate::tensor::SVec::from_slice(&[p[0] * 0.3 - p[1], (p[0] + p[1]).sin()])
        });
        let mut buf = Vec::new();
        write_gdf(&mut buf, &field).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 2 * 12);
        let dump = read_gdf(&mut buf.as_slice()).unwrap();
        let back = dump.into_field(&grid).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn gdf_rejects_corruption() {
        let grid = Grid::line(4, 1.0).unwrap();
        let field = VectorField::zeros(&grid, 1);
        let mut buf = Vec::new();
        write_gdf(&mut buf, &field).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_gdf(&mut bad_magic.as_slice()), Err(DumpError::BadMagic)));

        let truncated = &buf[..buf.len() - 8];
        assert!(matches!(
            read_gdf(&mut &truncated[..]),
            Err(DumpError::Truncated { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let grid = Grid::line(5, 1.0).unwrap();
        let field = VectorField::zeros(&grid, 2);
        let mut buf = Vec::new();
        write_csv(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("x,u0,u1\n"));
    }
}

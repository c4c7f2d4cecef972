//! Binary field dump: `"CDL1"`, `u8` dim, `u32` n, `u32` slice count, then
//! little-endian `f64` values, row-major within a slice, slices in order.

use super::{Field, Grid, Trajectory};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"CDL1";
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub dim: usize,
    pub n: usize,
    pub slices: Vec<Vec<f64>>,
}

impl FieldDump {
    pub fn from_fields(fields: &[Field]) -> Self {
        let grid = fields.first().map(|f| *f.grid());
        FieldDump {
            dim: grid.map_or(1, |g| g.dim()),
            n: grid.map_or(0, |g| g.n()),
            slices: fields.iter().map(Field::to_vec).collect(),
        }
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        FieldDump::from_fields(traj.slices())
    }

    /// Turns slice `k` into a field on `grid`, checking the space discretization.
    pub fn field(&self, grid: Grid, k: usize) -> Result<Field> {
        if grid.dim() != self.dim || grid.n() != self.n {
            return Err(Error::Dump(format!(
                "dump is dim={} n={}, grid is dim={} n={}",
                self.dim,
                self.n,
                grid.dim(),
                grid.n()
            )));
        }
        let values = self
            .slices
            .get(k)
            .ok_or_else(|| Error::Dump(format!("slice {k} out of range ({} slices)", self.slices.len())))?;
        Field::new(grid, values.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let per = self.slices.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * per * self.slices.len());
        out.extend_from_slice(DUMP_MAGIC);
        out.push(self.dim as u8);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.slices.len() as u32).to_le_bytes());
        for slice in &self.slices {
            for v in slice {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub fn encode_dump(fields: &[Field]) -> Vec<u8> {
    FieldDump::from_fields(fields).encode()
}

pub fn decode_dump(bytes: &[u8]) -> Result<FieldDump> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Dump("truncated header".into()));
    }
    if &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Dump("bad magic bytes".into()));
    }
    let dim = bytes[4] as usize;
    if !(dim == 1 || dim == 2) {
        return Err(Error::Dump(format!("unsupported dim {dim}")));
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let count = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let per = n.pow(dim as u32);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * per * count {
        return Err(Error::Dump(format!(
            "expected {} payload bytes, found {}",
            8 * per * count,
            body.len()
        )));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let slices = (0..count).map(|_| values.by_ref().take(per).collect()).collect();
    Ok(FieldDump { dim, n, slices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = Grid::new(2, 8, 1.0, 1).unwrap();
        let bytes = encode_dump(&[Field::constant(g, 1.5)]);
        assert_eq!(&bytes[..4], b"CDL1");
        assert_eq!(bytes[4], 2);
        assert_eq!(&bytes[5..9], &8u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 13 + 64 * 8);
        assert_eq!(&bytes[13..21], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let g = Grid::new(1, 8, 1.0, 1).unwrap();
        let mut bytes = encode_dump(&[Field::zeros(g)]);
        assert!(decode_dump(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_dump(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            dim in 1usize..=2,
            log_n in 3u32..=5,
            count in 1usize..4,
            seed in any::<u64>(),
        ) {
            let n = 1usize << log_n;
            let per = n.pow(dim as u32);
            // arbitrary bit patterns, including NaN payloads and signed zeros
            let mut state = seed;
            let slices: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..per).map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(state)
                }).collect())
                .collect();
            let dump = FieldDump { dim, n, slices };
            let back = decode_dump(&dump.encode()).unwrap();
            prop_assert_eq!(back.dim, dim);
            prop_assert_eq!(back.n, n);
            for (a, b) in dump.slices.iter().zip(back.slices.iter()) {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}

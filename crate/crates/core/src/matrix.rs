//! Block matrices distributed block-cyclically over a process grid.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::DenseBlock;
use crate::error::{invalid, Result};
use crate::grid::{owner, NodeCoord, ProcessGrid};
use crate::tiling::Tiling;

/// A dense matrix stored as one [`DenseBlock`] per `(block_row, block_col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    row_tiling: Tiling,
    col_tiling: Tiling,
    grid: ProcessGrid,
    blocks: BTreeMap<(usize, usize), DenseBlock>,
}

impl BlockMatrix {
    /// Checks that every block is present with the shape its tilings dictate.
    pub fn new(
        row_tiling: Tiling,
        col_tiling: Tiling,
        grid: ProcessGrid,
        blocks: BTreeMap<(usize, usize), DenseBlock>,
    ) -> Result<Self> {
        for i in 0..row_tiling.block_count() {
            for j in 0..col_tiling.block_count() {
                let b = blocks
                    .get(&(i, j))
                    .ok_or_else(|| invalid(format!("block ({i},{j}) is missing")))?;
                if b.rows() != row_tiling.extent(i) || b.cols() != col_tiling.extent(j) {
                    return Err(invalid(format!(
                        "block ({i},{j}) is {}x{}, tiling requires {}x{}",
                        b.rows(),
                        b.cols(),
                        row_tiling.extent(i),
                        col_tiling.extent(j)
                    )));
                }
            }
        }
        if blocks.len() != row_tiling.block_count() * col_tiling.block_count() {
            return Err(invalid("block map holds coordinates outside the tilings"));
        }
        Ok(Self {
            row_tiling,
            col_tiling,
            grid,
            blocks,
        })
    }

    pub fn from_fn(
        row_tiling: Tiling,
        col_tiling: Tiling,
        grid: ProcessGrid,
        mut f: impl FnMut(usize, usize) -> DenseBlock,
    ) -> Result<Self> {
        let mut blocks = BTreeMap::new();
        for i in 0..row_tiling.block_count() {
            for j in 0..col_tiling.block_count() {
                blocks.insert((i, j), f(i, j));
            }
        }
        Self::new(row_tiling, col_tiling, grid, blocks)
    }

    pub fn zeros(row_tiling: Tiling, col_tiling: Tiling, grid: ProcessGrid) -> Self {
        let (rt, ct) = (row_tiling.clone(), col_tiling.clone());
        Self::from_fn(row_tiling, col_tiling, grid, |i, j| {
            DenseBlock::zeros(rt.extent(i), ct.extent(j))
        })
        .expect("shapes follow the tilings")
    }

    /// Identity matrix; both tilings must cover the same extent.
    pub fn identity(row_tiling: Tiling, col_tiling: Tiling, grid: ProcessGrid) -> Result<Self> {
        if row_tiling.len() != col_tiling.len() {
            return Err(invalid("identity matrix must be square"));
        }
        let dense = DenseBlock::identity(row_tiling.len());
        Self::from_dense(&dense, row_tiling, col_tiling, grid)
    }

    pub fn from_dense(
        dense: &DenseBlock,
        row_tiling: Tiling,
        col_tiling: Tiling,
        grid: ProcessGrid,
    ) -> Result<Self> {
        if dense.rows() != row_tiling.len() || dense.cols() != col_tiling.len() {
            return Err(invalid("dense matrix does not match tilings"));
        }
        let (rt, ct) = (row_tiling.clone(), col_tiling.clone());
        Self::from_fn(row_tiling, col_tiling, grid, |i, j| {
            dense.slice(rt.range(i), ct.range(j))
        })
    }

    pub fn row_tiling(&self) -> &Tiling {
        &self.row_tiling
    }

    pub fn col_tiling(&self) -> &Tiling {
        &self.col_tiling
    }

    pub fn grid(&self) -> &ProcessGrid {
        &self.grid
    }

    pub fn block_rows(&self) -> usize {
        self.row_tiling.block_count()
    }

    pub fn block_cols(&self) -> usize {
        self.col_tiling.block_count()
    }

    pub fn rows(&self) -> usize {
        self.row_tiling.len()
    }

    pub fn cols(&self) -> usize {
        self.col_tiling.len()
    }

    pub fn block(&self, i: usize, j: usize) -> &DenseBlock {
        &self.blocks[&(i, j)]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut DenseBlock {
        self.blocks.get_mut(&(i, j)).expect("block in range")
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &DenseBlock)> {
        self.blocks.iter()
    }

    pub fn owner_of(&self, i: usize, j: usize) -> NodeCoord {
        owner(&self.grid, i, j)
    }

    /// Bytes of the blocks a node owns.
    pub fn owned_bytes(&self, node: NodeCoord) -> u64 {
        let mut bytes = 0;
        for i in (node.row..self.block_rows()).step_by(self.grid.p_row()) {
            for j in (node.col..self.block_cols()).step_by(self.grid.p_col()) {
                bytes += 8 * (self.row_tiling.extent(i) * self.col_tiling.extent(j)) as u64;
            }
        }
        bytes
    }

    /// Element `(r, c)` in global coordinates.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let i = self.row_tiling.boundaries().partition_point(|&b| b <= r) - 1;
        let j = self.col_tiling.boundaries().partition_point(|&b| b <= c) - 1;
        self.block(i, j)
            .get(r - self.row_tiling.boundaries()[i], c - self.col_tiling.boundaries()[j])
    }

    /// Flattens to one row-major dense block.
    pub fn to_dense(&self) -> DenseBlock {
        let mut out = DenseBlock::zeros(self.rows(), self.cols());
        for (&(i, j), b) in &self.blocks {
            out.write_sub(self.row_tiling.boundaries()[i], self.col_tiling.boundaries()[j], b);
        }
        out
    }
}

/// Fills every block with values uniform in `[-1, 1]`.
///
/// Block `(i, j)` draws from ChaCha8 seeded with `seed` on stream
/// `(i << 32) | j`, so its contents depend only on `(seed, i, j)` and the
/// block's shape.
pub fn random_block_matrix(
    row_tiling: &Tiling,
    col_tiling: &Tiling,
    grid: &ProcessGrid,
    seed: u64,
) -> BlockMatrix {
    BlockMatrix::from_fn(row_tiling.clone(), col_tiling.clone(), *grid, |i, j| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((i as u64) << 32) | j as u64);
        let (r, c) = (row_tiling.extent(i), col_tiling.extent(j));
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        DenseBlock::from_vec(r, c, data).expect("length matches")
    })
    .expect("shapes follow the tilings")
}

/// Writes `rows`, `cols` as little-endian u64 followed by the row-major
/// values as little-endian f64.
pub fn write_dense<W: Write>(mut w: W, dense: &DenseBlock) -> Result<()> {
    w.write_all(&(dense.rows() as u64).to_le_bytes())?;
    w.write_all(&(dense.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * dense.len());
    for v in dense.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dense<R: Read>(mut r: R) -> Result<DenseBlock> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    let rows = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[8..].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid("dense header overflows"))?;
    let mut buf = vec![0u8; 8 * count];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseBlock::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::{make_nonuniform_tiling, make_uniform_tiling};

    fn grid(r: usize, c: usize) -> ProcessGrid {
        ProcessGrid::new(r, c).unwrap()
    }

    #[test]
    fn random_is_reproducible() {
        let t = Tiling::from_boundaries(vec![0, 2]).unwrap();
        let a = random_block_matrix(&t, &t, &grid(1, 1), 11);
        let b = random_block_matrix(&t, &t, &grid(1, 1), 11);
        assert_eq!(a.block_rows(), 1);
        assert_eq!(a.block(0, 0).rows(), 2);
        assert_eq!(a, b);
        let c = random_block_matrix(&t, &t, &grid(1, 1), 12);
        assert!(a.block(0, 0).data().iter().zip(c.block(0, 0).data()).any(|(x, y)| x != y));
    }

    #[test]
    fn random_values_in_range() {
        let t = make_nonuniform_tiling(50, 7, 3).unwrap();
        let m = random_block_matrix(&t, &t, &grid(2, 3), 5);
        for (_, b) in m.blocks() {
            assert!(b.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_wrong_block_shape() {
        let t = make_uniform_tiling(4, 2).unwrap();
        let mut blocks = BTreeMap::new();
        for i in 0..2 {
            for j in 0..2 {
                blocks.insert((i, j), DenseBlock::zeros(2, 2));
            }
        }
        blocks.insert((1, 1), DenseBlock::zeros(2, 3));
        assert!(BlockMatrix::new(t.clone(), t, grid(1, 1), blocks).is_err());
    }

    #[test]
    fn dense_round_trip_and_get() {
        let rt = make_nonuniform_tiling(9, 3, 1).unwrap();
        let ct = make_uniform_tiling(5, 2).unwrap();
        let m = random_block_matrix(&rt, &ct, &grid(2, 2), 9);
        let d = m.to_dense();
        for r in 0..9 {
            for c in 0..5 {
                assert_eq!(d.get(r, c), m.get(r, c));
            }
        }
        let back = BlockMatrix::from_dense(&d, rt, ct, grid(2, 2)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn binary_format_layout() {
        let d = DenseBlock::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let mut buf = Vec::new();
        write_dense(&mut buf, &d).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(read_dense(&buf[..]).unwrap(), d);
        assert!(read_dense(&buf[..20]).is_err());
    }

    #[test]
    fn owned_bytes_sum_to_total() {
        let t = make_nonuniform_tiling(40, 6, 2).unwrap();
        let g = grid(2, 3);
        let m = random_block_matrix(&t, &t, &g, 1);
        let total: u64 = g.nodes().map(|n| m.owned_bytes(n)).sum();
        assert_eq!(total, 8 * 40 * 40);
    }
}

//! The 2D process mesh and the cyclic block-to-node map.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Coordinates of one node in the process mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeCoord {
    pub row: usize,
    pub col: usize,
}

impl NodeCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for NodeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessGrid {
    p_row: usize,
    p_col: usize,
}

impl ProcessGrid {
    pub fn new(p_row: usize, p_col: usize) -> Result<Self> {
        if p_row == 0 || p_col == 0 {
            return Err(invalid(format!(
                "process grid dimensions must be positive, got {p_row}x{p_col}"
            )));
        }
        Ok(Self { p_row, p_col })
    }

    pub fn p_row(&self) -> usize {
        self.p_row
    }

    pub fn p_col(&self) -> usize {
        self.p_col
    }

    pub fn node_count(&self) -> usize {
        self.p_row * self.p_col
    }

    /// Row-major rank of a node.
    pub fn rank(&self, node: NodeCoord) -> usize {
        node.row * self.p_col + node.col
    }

    pub fn coord(&self, rank: usize) -> NodeCoord {
        NodeCoord::new(rank / self.p_col, rank % self.p_col)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeCoord> + '_ {
        (0..self.node_count()).map(|r| self.coord(r))
    }

    pub fn contains(&self, node: NodeCoord) -> bool {
        node.row < self.p_row && node.col < self.p_col
    }
}

impl fmt::Display for ProcessGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.p_row, self.p_col)
    }
}

/// Node holding block `(i, j)` under the block-cyclic embedding.
pub fn owner(grid: &ProcessGrid, i: usize, j: usize) -> NodeCoord {
    NodeCoord::new(i % grid.p_row, j % grid.p_col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn owner_examples() {
        let g = ProcessGrid::new(2, 3).unwrap();
        assert_eq!(owner(&g, 5, 7), NodeCoord::new(1, 1));
        let g = ProcessGrid::new(1, 1).unwrap();
        assert_eq!(owner(&g, 9, 9), NodeCoord::new(0, 0));
        let g = ProcessGrid::new(4, 4).unwrap();
        assert_eq!(owner(&g, 0, 3), NodeCoord::new(0, 3));
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(ProcessGrid::new(0, 2).is_err());
        assert!(ProcessGrid::new(2, 0).is_err());
    }

    #[test]
    fn rank_round_trip() {
        let g = ProcessGrid::new(3, 5).unwrap();
        for r in 0..g.node_count() {
            assert_eq!(g.rank(g.coord(r)), r);
        }
    }

    fn owned_counts(g: &ProcessGrid, m: usize, n: usize) -> Vec<usize> {
        let mut counts = vec![0; g.node_count()];
        for i in 0..m {
            for j in 0..n {
                counts[g.rank(owner(g, i, j))] += 1;
            }
        }
        counts
    }

    proptest! {
        #[test]
        fn balanced_when_divisible(pr in 1usize..6, pc in 1usize..6, a in 1usize..5, b in 1usize..5) {
            let g = ProcessGrid::new(pr, pc).unwrap();
            let counts = owned_counts(&g, pr * a, pc * b);
            prop_assert!(counts.iter().all(|&c| c == a * b));
        }

        // Per-node counts are products of per-row and per-column counts, each
        // of which is floor or ceil of M/p_row (resp. N/p_col).
        #[test]
        fn near_balanced_otherwise(pr in 1usize..6, pc in 1usize..6, m in 1usize..30, n in 1usize..30) {
            let g = ProcessGrid::new(pr, pc).unwrap();
            let counts = owned_counts(&g, m, n);
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            let bound = (m.div_ceil(pr) + n.div_ceil(pc)).saturating_sub(1);
            prop_assert!(spread <= bound, "spread {} bound {}", spread, bound);
        }
    }
}

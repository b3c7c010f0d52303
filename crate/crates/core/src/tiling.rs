//! Partitions of one matrix dimension into contiguous blocks.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Block boundaries along one dimension: `0 = b[0] < b[1] < ... < b[n] = extent`.
///
/// Serializes as a plain JSON array of boundary offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Tiling {
    boundaries: Vec<usize>,
}

impl Tiling {
    pub fn from_boundaries(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(invalid("a tiling needs at least two boundaries"));
        }
        if boundaries[0] != 0 {
            return Err(invalid("first tiling boundary must be 0"));
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "tiling boundaries must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { boundaries })
    }

    /// Builds a tiling from block extents; every extent must be positive.
    pub fn from_extents(extents: &[usize]) -> Result<Self> {
        let mut boundaries = Vec::with_capacity(extents.len() + 1);
        boundaries.push(0);
        let mut acc = 0;
        for &e in extents {
            acc += e;
            boundaries.push(acc);
        }
        Self::from_boundaries(boundaries)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn block_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Total number of elements covered.
    pub fn len(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extent(&self, b: usize) -> usize {
        self.boundaries[b + 1] - self.boundaries[b]
    }

    pub fn range(&self, b: usize) -> Range<usize> {
        self.boundaries[b]..self.boundaries[b + 1]
    }

    pub fn extents(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundaries.windows(2).map(|w| w[1] - w[0])
    }

    pub fn max_extent(&self) -> usize {
        self.extents().max().expect("non-empty")
    }

    pub fn min_extent(&self) -> usize {
        self.extents().min().expect("non-empty")
    }

    /// Mean block extent.
    pub fn mean_extent(&self) -> f64 {
        self.len() as f64 / self.block_count() as f64
    }
}

impl TryFrom<Vec<usize>> for Tiling {
    type Error = Error;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Self::from_boundaries(value)
    }
}

impl From<Tiling> for Vec<usize> {
    fn from(t: Tiling) -> Self {
        t.boundaries
    }
}

/// Fixed-size blocks; the last block takes the remainder.
pub fn make_uniform_tiling(extent: usize, block_size: usize) -> Result<Tiling> {
    if extent == 0 || block_size == 0 {
        return Err(invalid(format!(
            "extent and block size must be positive (got {extent}, {block_size})"
        )));
    }
    let mut boundaries: Vec<usize> = (0..extent).step_by(block_size).collect();
    boundaries.push(extent);
    Tiling::from_boundaries(boundaries)
}

/// Randomly sized blocks averaging `extent / block_count` elements.
///
/// Every block starts with one element; the remaining elements are handed out
/// one at a time to a uniformly chosen block.
pub fn make_nonuniform_tiling(extent: usize, block_count: usize, seed: u64) -> Result<Tiling> {
    if block_count == 0 {
        return Err(invalid("block count must be at least 1"));
    }
    if block_count > extent {
        return Err(invalid(format!(
            "cannot split {extent} elements into {block_count} non-empty blocks"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extents = vec![1usize; block_count];
    for _ in block_count..extent {
        extents[rng.gen_range(0..block_count)] += 1;
    }
    Tiling::from_extents(&extents)
}

/// Splits `0..extent` into `min(parts, extent)` nearly equal contiguous ranges.
pub fn split_ranges(extent: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.clamp(1, extent.max(1));
    (0..parts)
        .map(|p| (p * extent / parts)..((p + 1) * extent / parts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(make_uniform_tiling(8, 4).unwrap().boundaries(), &[0, 4, 8]);
        assert_eq!(
            make_uniform_tiling(10, 4).unwrap().boundaries(),
            &[0, 4, 8, 10]
        );
        assert_eq!(make_uniform_tiling(4, 8).unwrap().boundaries(), &[0, 4]);
    }

    #[test]
    fn uniform_rejects_zero() {
        assert!(matches!(
            make_uniform_tiling(0, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_uniform_tiling(4, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn nonuniform_examples() {
        for seed in [0, 1, 99] {
            assert_eq!(
                make_nonuniform_tiling(100, 1, seed).unwrap().boundaries(),
                &[0, 100]
            );
            let t = make_nonuniform_tiling(6, 6, seed).unwrap();
            assert!(t.extents().all(|e| e == 1));
        }
        let t = make_nonuniform_tiling(32768, 128, 42).unwrap();
        assert_eq!(t.block_count(), 128);
        assert_eq!(t.extents().sum::<usize>(), 32768);
        assert!(t.extents().all(|e| e >= 1));
        assert_eq!(t, make_nonuniform_tiling(32768, 128, 42).unwrap());
        assert_ne!(t, make_nonuniform_tiling(32768, 128, 43).unwrap());
    }

    #[test]
    fn nonuniform_rejects_too_many_blocks() {
        assert!(matches!(
            make_nonuniform_tiling(5, 6, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(make_nonuniform_tiling(5, 0, 0).is_err());
    }

    #[test]
    fn rejects_bad_boundaries() {
        assert!(Tiling::from_boundaries(vec![0]).is_err());
        assert!(Tiling::from_boundaries(vec![1, 2]).is_err());
        assert!(Tiling::from_boundaries(vec![0, 2, 2]).is_err());
        assert!(Tiling::from_extents(&[3, 0, 1]).is_err());
    }

    #[test]
    fn json_is_boundary_array() {
        let t = make_uniform_tiling(10, 4).unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), "[0,4,8,10]");
        let back: Tiling = serde_json::from_str("[0,4,8,10]").unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<Tiling>("[0,4,4]").is_err());
    }

    #[test]
    fn split_ranges_cover() {
        assert_eq!(split_ranges(10, 3), vec![0..3, 3..6, 6..10]);
        assert_eq!(split_ranges(2, 4), vec![0..1, 1..2]);
        assert_eq!(split_ranges(5, 1), vec![0..5]);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn extents_round_trip(extents in proptest::collection::vec(1usize..50, 1..40)) {
                let t = Tiling::from_extents(&extents).unwrap();
                prop_assert_eq!(t.extents().sum::<usize>(), t.len());
                let back: Vec<usize> = t.extents().collect();
                prop_assert_eq!(&back, &extents);
                prop_assert_eq!(Tiling::from_extents(&back).unwrap(), t);
            }

            #[test]
            fn nonuniform_sums_to_extent(extent in 1usize..5000, frac in 0.0f64..1.0, seed in any::<u64>()) {
                let count = ((extent as f64 * frac) as usize).clamp(1, extent);
                let t = make_nonuniform_tiling(extent, count, seed).unwrap();
                prop_assert_eq!(t.block_count(), count);
                prop_assert_eq!(t.len(), extent);
                prop_assert!(t.extents().all(|e| e >= 1));
                prop_assert_eq!(t, make_nonuniform_tiling(extent, count, seed).unwrap());
            }
        }
    }
}

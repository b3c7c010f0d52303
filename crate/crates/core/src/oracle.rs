//! Reference products used as ground truth. Deliberately naive and independent
//! of the runtime's kernel.

use crate::block::DenseBlock;
use crate::error::{invalid, Result};
use crate::grid::ProcessGrid;
use crate::matrix::BlockMatrix;

fn check_conformable(a: &BlockMatrix, b: &BlockMatrix) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(invalid(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Flattens both operands and runs an i-k-j triple loop from a zero result.
pub fn oracle_multiply(a: &BlockMatrix, b: &BlockMatrix) -> Result<DenseBlock> {
    check_conformable(a, b)?;
    let (ad, bd) = (a.to_dense(), b.to_dense());
    let (m, k, n) = (ad.rows(), ad.cols(), bd.cols());
    let (av, bv) = (ad.data(), bd.data());
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = 1.0 * av[i * k + p];
            for j in 0..n {
                c[i * n + j] += aip * bv[p * n + j];
            }
        }
    }
    DenseBlock::from_vec(m, n, c)
}

/// Blockwise product: each result block starts at zero and absorbs
/// `A(i,k) * B(k,j)` for ascending `k`, each block product itself an i-k-j
/// loop. Requires A's column tiling to equal B's row tiling.
pub fn oracle_multiply_blocked(a: &BlockMatrix, b: &BlockMatrix) -> Result<DenseBlock> {
    check_conformable(a, b)?;
    if a.col_tiling() != b.row_tiling() {
        return Err(invalid("blocked oracle needs matching inner tilings"));
    }
    let mut out = DenseBlock::zeros(a.rows(), b.cols());
    for i in 0..a.block_rows() {
        for j in 0..b.block_cols() {
            let (m, n) = (a.row_tiling().extent(i), b.col_tiling().extent(j));
            let mut c = vec![0.0f64; m * n];
            for kb in 0..a.block_cols() {
                let (ab, bb) = (a.block(i, kb), b.block(kb, j));
                let k = ab.cols();
                for r in 0..m {
                    for p in 0..k {
                        let arp = 1.0 * ab.data()[r * k + p];
                        for s in 0..n {
                            c[r * n + s] += arp * bb.data()[p * n + s];
                        }
                    }
                }
            }
            let blk = DenseBlock::from_vec(m, n, c)?;
            out.write_sub(a.row_tiling().boundaries()[i], b.col_tiling().boundaries()[j], &blk);
        }
    }
    Ok(out)
}

/// `|A| * |B|`: for each entry, the sum of absolute products in its dot
/// product. Used to scale reordering errors.
pub fn magnitude_product(a: &BlockMatrix, b: &BlockMatrix) -> Result<DenseBlock> {
    check_conformable(a, b)?;
    let (ad, bd) = (a.to_dense(), b.to_dense());
    let (m, k, n) = (ad.rows(), ad.cols(), bd.cols());
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = ad.data()[i * k + p].abs();
            for j in 0..n {
                c[i * n + j] += aip * bd.data()[p * n + j].abs();
            }
        }
    }
    DenseBlock::from_vec(m, n, c)
}

/// Outcome of comparing a computed product against a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub bitwise_equal: bool,
    pub max_rel_err: f64,
    /// `(row, col, got, want)` at the largest relative error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl Comparison {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Component-wise comparison. The error at `(r, c)` is
/// `|got - want| / max(|want|, scale(r, c))`; without a scale it is relative
/// to `|want|` alone. A zero denominator demands an exact match.
pub fn compare(got: &DenseBlock, want: &DenseBlock, scale: Option<&DenseBlock>) -> Result<Comparison> {
    if got.rows() != want.rows() || got.cols() != want.cols() {
        return Err(invalid(format!(
            "comparing {}x{} against {}x{}",
            got.rows(),
            got.cols(),
            want.rows(),
            want.cols()
        )));
    }
    let mut cmp = Comparison {
        bitwise_equal: true,
        max_rel_err: 0.0,
        worst: None,
    };
    for (idx, (&g, &w)) in got.data().iter().zip(want.data()).enumerate() {
        if g.to_bits() != w.to_bits() {
            cmp.bitwise_equal = false;
        }
        let denom = scale.map_or(w.abs(), |s| s.data()[idx].max(w.abs()));
        let diff = (g - w).abs();
        let err = if diff == 0.0 {
            0.0
        } else if denom == 0.0 || diff.is_nan() {
            f64::INFINITY
        } else {
            diff / denom
        };
        let at = Some((idx / got.cols(), idx % got.cols(), g, w));
        if err > cmp.max_rel_err {
            cmp.max_rel_err = err;
            cmp.worst = at;
        } else if cmp.worst.is_none() && g.to_bits() != w.to_bits() {
            cmp.worst = at;
        }
    }
    Ok(cmp)
}

/// Per-node, per-iteration memory overhead in elements:
/// `M*m*k / p_row + N*k*n / p_col + M*N*m*n / (p_row*p_col)`.
pub fn iteration_memory_overhead(
    block_rows: usize,
    block_cols: usize,
    m: f64,
    n: f64,
    k: f64,
    grid: &ProcessGrid,
) -> f64 {
    let (big_m, big_n) = (block_rows as f64, block_cols as f64);
    let (pr, pc) = (grid.p_row() as f64, grid.p_col() as f64);
    big_m * m * k / pr + big_n * k * n / pc + big_m * big_n * m * n / (pr * pc)
}

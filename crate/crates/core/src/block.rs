//! Dense row-major blocks and the block multiply-add kernel.

use std::ops::Range;

use crate::error::{invalid, Result};

/// A dense `rows x cols` block of `f64`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "block data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        Self {
            rows: rows.len(),
            cols: C,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n, n);
        for i in 0..n {
            b.data[i * n + i] = 1.0;
        }
        b
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Payload size in bytes (8 per element).
    pub fn bytes(&self) -> u64 {
        8 * self.data.len() as u64
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copies out the sub-block covering `rows x cols`.
    pub fn slice(&self, rows: Range<usize>, cols: Range<usize>) -> DenseBlock {
        debug_assert!(rows.end <= self.rows && cols.end <= self.cols);
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            data.extend_from_slice(&self.data[r * self.cols + cols.start..r * self.cols + cols.end]);
        }
        DenseBlock {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }

    /// Writes `src` into this block with its top-left corner at `(row0, col0)`.
    pub fn write_sub(&mut self, row0: usize, col0: usize, src: &DenseBlock) {
        debug_assert!(row0 + src.rows <= self.rows && col0 + src.cols <= self.cols);
        for r in 0..src.rows {
            let dst = (row0 + r) * self.cols + col0;
            self.data[dst..dst + src.cols].copy_from_slice(&src.data[r * src.cols..(r + 1) * src.cols]);
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &DenseBlock) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(invalid(format!(
                "cannot add {}x{} block into {}x{} block",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        for (c, t) in self.data.iter_mut().zip(&other.data) {
            *c += *t;
        }
        Ok(())
    }
}

/// Returns `alpha * a * b + c`.
pub fn gemm_block(alpha: f64, a: &DenseBlock, b: &DenseBlock, mut c: DenseBlock) -> Result<DenseBlock> {
    gemm_into(alpha, a, b, &mut c)?;
    Ok(c)
}

/// In-place `c = alpha * a * b + c`.
///
/// Every element accumulates its products in ascending inner index, each term
/// formed as `(alpha * a[i][p]) * b[p][j]`, exactly as the plain i-k-j loop
/// would. Register tiling only changes which elements are in flight together,
/// so results are bitwise identical to that loop.
pub fn gemm_into(alpha: f64, a: &DenseBlock, b: &DenseBlock, c: &mut DenseBlock) -> Result<()> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(invalid(format!(
            "gemm shape mismatch: A {}x{}, B {}x{}, C {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature check above guarantees AVX2 is available.
            unsafe { kernel_avx2(alpha, m, k, n, &a.data, &b.data, &mut c.data) };
            return Ok(());
        }
    }
    kernel_generic(alpha, m, k, n, &a.data, &b.data, &mut c.data);
    Ok(())
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_avx2(alpha: f64, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    kernel_body(alpha, m, k, n, a, b, c);
}

fn kernel_generic(alpha: f64, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    kernel_body(alpha, m, k, n, a, b, c);
}

const MR: usize = 4;
const NR: usize = 8;

#[inline(always)]
fn kernel_body(alpha: f64, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let full_rows = m - m % MR;
    for i in (0..full_rows).step_by(MR) {
        row_band::<MR>(alpha, k, n, i, a, b, c);
    }
    for i in full_rows..m {
        row_band::<1>(alpha, k, n, i, a, b, c);
    }
}

/// Rows `i..i+R`, all columns, in tiles of 8, then 4, 2 and 1 columns.
#[inline(always)]
fn row_band<const R: usize>(alpha: f64, k: usize, n: usize, i: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let mut j = 0;
    while j + NR <= n {
        tile::<R, NR>(alpha, k, n, i, j, a, b, c);
        j += NR;
    }
    if j + 4 <= n {
        tile::<R, 4>(alpha, k, n, i, j, a, b, c);
        j += 4;
    }
    if j + 2 <= n {
        tile::<R, 2>(alpha, k, n, i, j, a, b, c);
        j += 2;
    }
    if j < n {
        tile::<R, 1>(alpha, k, n, i, j, a, b, c);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile<const R: usize, const W: usize>(
    alpha: f64,
    k: usize,
    n: usize,
    i: usize,
    j: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
) {
    let arows: [&[f64]; R] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    let mut acc = [[0.0f64; W]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + W]);
    }
    for (bfull, p) in b.chunks_exact(n).zip(0..k) {
        let brow: &[f64; W] = bfull[j..j + W].try_into().unwrap();
        for (row, arow) in acc.iter_mut().zip(&arows) {
            let av = alpha * arow[p];
            for q in 0..W {
                row[q] += av * brow[q];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i + r) * n + j..(i + r) * n + j + W].copy_from_slice(row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Plain i-k-j loop kept separate from the tiled kernel.
    fn triple_loop(alpha: f64, a: &DenseBlock, b: &DenseBlock, c: &DenseBlock) -> Vec<f64> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = c.data().to_vec();
        for i in 0..m {
            for p in 0..k {
                let av = alpha * a.get(i, p);
                for j in 0..n {
                    out[i * n + j] += av * b.get(p, j);
                }
            }
        }
        out
    }

    #[test]
    fn identity_times_b() {
        let b = DenseBlock::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let c = gemm_block(1.0, &DenseBlock::identity(2), &b, DenseBlock::zeros(2, 2)).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn zero_alpha_keeps_c() {
        let a = DenseBlock::from_rows(&[[3.0]]);
        let b = DenseBlock::from_rows(&[[7.0]]);
        let c = gemm_block(0.0, &a, &b, DenseBlock::from_rows(&[[5.0]])).unwrap();
        assert_eq!(c.data(), &[5.0]);
    }

    #[test]
    fn two_by_two_product() {
        let a = DenseBlock::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = DenseBlock::from_rows(&[[5.0, 6.0], [7.0, 8.0]]);
        let c = gemm_block(1.0, &a, &b, DenseBlock::zeros(2, 2)).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn shape_mismatch() {
        let a = DenseBlock::zeros(2, 3);
        let b = DenseBlock::zeros(2, 3);
        assert!(gemm_block(1.0, &a, &b, DenseBlock::zeros(2, 3)).is_err());
        let b = DenseBlock::zeros(3, 4);
        assert!(gemm_block(1.0, &a, &b, DenseBlock::zeros(2, 5)).is_err());
        assert!(DenseBlock::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn slice_and_write_back() {
        let data: Vec<f64> = (0..20).map(f64::from).collect();
        let b = DenseBlock::from_vec(4, 5, data).unwrap();
        let s = b.slice(1..3, 2..5);
        assert_eq!(s.data(), &[7.0, 8.0, 9.0, 12.0, 13.0, 14.0]);
        let mut z = DenseBlock::zeros(4, 5);
        z.write_sub(1, 2, &s);
        assert_eq!(z.get(2, 4), 14.0);
        assert_eq!(z.get(0, 0), 0.0);
    }

    fn block(rows: usize, cols: usize) -> impl Strategy<Value = DenseBlock> {
        proptest::collection::vec(-1.0f64..1.0, rows * cols)
            .prop_map(move |d| DenseBlock::from_vec(rows, cols, d).unwrap())
    }

    fn operands() -> impl Strategy<Value = (f64, DenseBlock, DenseBlock, DenseBlock)> {
        (1usize..19, 1usize..19, 1usize..27).prop_flat_map(|(m, k, n)| {
            (prop_oneof![Just(1.0), -2.0f64..2.0], block(m, k), block(k, n), block(m, n))
        })
    }

    proptest! {
        #[test]
        fn kernel_matches_triple_loop_bitwise((alpha, a, b, c) in operands()) {
            let want = triple_loop(alpha, &a, &b, &c);
            let got = gemm_block(alpha, &a, &b, c).unwrap();
            let same = got.data().iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }
}

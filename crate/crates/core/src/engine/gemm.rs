//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Row-major operand view, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Operand<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = beta * out + op(a) · op(b)` with `out` row-major `m × n`.
pub(crate) fn gemm(a: Operand<'_>, b: Operand<'_>, out: &mut [f64], beta: f64) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(out.len(), m * n, "gemm output size");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the assertions above guarantee every index dgemm touches,
    // derived from (m, k, n) and the row-major strides, lies inside the
    // respective slices; `out` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Column block `[col_start, col_start + width)` of a row-major matrix
/// with `ld` columns, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Block<'a> {
    pub data: &'a [f64],
    pub ld: usize,
    pub col_start: usize,
    pub rows: usize,
    pub width: usize,
    pub transposed: bool,
}

impl<'a> Block<'a> {
    pub fn new(data: &'a [f64], ld: usize, col_start: usize, width: usize) -> Self {
        debug_assert_eq!(data.len() % ld, 0);
        Self { data, ld, col_start, rows: data.len() / ld, width, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn check(&self) {
        assert!(self.col_start + self.width <= self.ld, "block columns exceed row length");
        assert_eq!(self.data.len(), self.rows * self.ld, "block data size");
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.width, self.rows)
        } else {
            (self.rows, self.width)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }
}

/// `out_block = beta * out_block + alpha * op(a) · op(b)`, where
/// `out_block` is the column block `[col_start, col_start + n)` of the
/// row-major `out` with `ld` columns.
pub(crate) fn gemm_block(alpha: f64, a: Block<'_>, b: Block<'_>, beta: f64, out: &mut [f64], ld: usize, col_start: usize) {
    a.check();
    b.check();
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert!(col_start + n <= ld && out.len() == m * ld, "gemm output block");
    if m == 0 || n == 0 || k == 0 {
        assert!(k > 0 || beta == 1.0, "empty inner dimension");
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: `check` and the assertions bound every accessed element:
    // a block's last element sits at (rows-1)·ld + col_start + width - 1,
    // which is inside its slice, and likewise for the output block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.col_start),
            rsa,
            csa,
            b.data.as_ptr().add(b.col_start),
            rsb,
            csb,
            beta,
            out.as_mut_ptr().add(col_start),
            ld as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn transposed_views_match_naive_product() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let want = naive(&a, &b, 2, 3, 4);

        let mut out = vec![0.0; 8];
        gemm(Operand::new(&a, 2, 3), Operand::new(&b, 3, 4), &mut out, 0.0);
        for (o, w) in out.iter().zip(&want) {
            assert!((o - w).abs() < 1e-12);
        }

        // aᵀ stored as 3x2, bᵀ stored as 4x3
        let at: Vec<f64> = (0..6).map(|i| a[(i % 2) * 3 + i / 2]).collect();
        let bt: Vec<f64> = (0..12).map(|i| b[(i % 3) * 4 + i / 3]).collect();
        let mut out2 = vec![1.0; 8];
        gemm(Operand::new(&at, 3, 2).t(), Operand::new(&bt, 4, 3).t(), &mut out2, 1.0);
        for (o, w) in out2.iter().zip(&want) {
            assert!((o - (w + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn column_blocks_match_naive_product() {
        // a: 3x4 with block cols [1,3); b: 5x4 with block cols [2,4) read transposed
        let a: Vec<f64> = (0..12).map(|v| (v as f64 * 0.7).cos()).collect();
        let b: Vec<f64> = (0..20).map(|v| (v as f64 * 0.3).sin()).collect();
        let mut out = vec![1.0; 3 * 8];
        gemm_block(0.5, Block::new(&a, 4, 1, 2), Block::new(&b, 4, 2, 2).t(), 1.0, &mut out, 8, 3);
        for i in 0..3 {
            for j in 0..8 {
                let want = if (3..8).contains(&j) {
                    let jj = j - 3;
                    1.0 + 0.5 * (0..2).map(|t| a[i * 4 + 1 + t] * b[jj * 4 + 2 + t]).sum::<f64>()
                } else {
                    1.0
                };
                assert!((out[i * 8 + j] - want).abs() < 1e-12, "{i} {j}");
            }
        }
    }
}

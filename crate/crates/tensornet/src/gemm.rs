//! Thin strided wrapper over `matrixmultiply::dgemm`.

#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, 0, rows, cols, cols, 1)
    }

    pub fn strided(
        data: &'a [f64],
        offset: usize,
        rows: usize,
        cols: usize,
        rs: usize,
        cs: usize,
    ) -> Self {
        let m = Self {
            data,
            offset,
            rows,
            cols,
            rs,
            cs,
        };
        assert!(m.in_bounds(data.len()), "matrix view out of bounds");
        m
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn in_bounds(&self, len: usize) -> bool {
        if self.rows == 0 || self.cols == 0 {
            return true;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

pub(crate) struct MatMut<'a> {
    data: &'a mut [f64],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, 0, rows, cols, cols, 1)
    }

    pub fn strided(
        data: &'a mut [f64],
        offset: usize,
        rows: usize,
        cols: usize,
        rs: usize,
        cs: usize,
    ) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                offset + (rows - 1) * rs + (cols - 1) * cs < data.len(),
                "matrix view out of bounds"
            );
        }
        Self {
            data,
            offset,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

/// `c = alpha * a * b + beta * c`
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.data[c.offset + i * c.rs + j * c.cs];
                *v = if beta == 0.0 { 0.0 } else { *v * beta };
            }
        }
        return;
    }
    if b.cs == 1 && c.cs == 1 && m <= SMALL_M {
        gemm_rows(alpha, a, b, beta, c);
        return;
    }
    // SAFETY: every view was bounds-checked on construction against its
    // backing slice, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Below this many output rows the packed kernel's setup outweighs its
/// throughput; rows are computed directly instead.
const SMALL_M: usize = 4;

/// Row-at-a-time product for short `a` and contiguous `b`/`c` rows:
/// each output row accumulates scaled rows of `b`, which vectorizes.
fn gemm_rows(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    let (k, n) = (a.cols, b.cols);
    for i in 0..a.rows {
        let row = &mut c.data[c.offset + i * c.rs..][..n];
        if beta == 0.0 {
            row.fill(0.0);
        } else if beta != 1.0 {
            row.iter_mut().for_each(|v| *v *= beta);
        }
        for p in 0..k {
            let f = alpha * a.data[a.offset + i * a.rs + p * a.cs];
            let brow = &b.data[b.offset + p * b.rs..][..n];
            for (v, bv) in row.iter_mut().zip(brow) {
                *v += f * bv;
            }
        }
    }
}

/// Adds column sums of a `rows x cols` row-major buffer into `acc`.
pub(crate) fn add_col_sums(acc: &mut [f64], data: &[f64], cols: usize) {
    for row in data.chunks_exact(cols) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
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
    fn matches_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::new(&a, m, k),
            MatRef::new(&b, k, n),
            0.0,
            MatMut::new(&mut c, m, n),
        );
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_view() {
        // a^T stored as k x m
        let (m, k, n) = (2, 3, 2);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::new(&at, k, m).t(),
            MatRef::new(&b, k, n),
            0.0,
            MatMut::new(&mut c, m, n),
        );
        assert_eq!(c, vec![4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn short_products_match_naive_with_alpha_beta() {
        for m in 1..=SMALL_M + 1 {
            let (k, n) = (9, 13);
            let at: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.29).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.13).cos()).collect();
            let c0: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.01).collect();
            let mut c = c0.clone();
            // a is read through a transposed view to exercise strides.
            gemm(0.5, MatRef::new(&at, k, m).t(), MatRef::new(&b, k, n), 2.0, MatMut::new(&mut c, m, n));
            let a: Vec<f64> = (0..m * k).map(|idx| at[(idx % k) * m + idx / k]).collect();
            let want = naive(&a, &b, m, k, n);
            for ((x, w), c0) in c.iter().zip(&want).zip(&c0) {
                assert!((x - (0.5 * w + 2.0 * c0)).abs() < 1e-12);
            }
        }
    }
}

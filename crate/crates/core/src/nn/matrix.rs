use alloc::vec::Vec;

use crate::error::{ensure_len, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_len("matrix data", rows * cols, data.len())?;
        Ok(Mat { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Mat {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Mat {
            rows: 1,
            cols: 1,
            data: alloc::vec![v],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `idx[0], idx[1], ...` stacked into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// The matrix repeated `times` times vertically.
    pub fn tile_rows(&self, times: usize) -> Mat {
        let mut data = Vec::with_capacity(times * self.data.len());
        for _ in 0..times {
            data.extend_from_slice(&self.data);
        }
        Mat {
            rows: self.rows * times,
            cols: self.cols,
            data,
        }
    }
}

/// `out += x Wᵀ` for `x: n × k`, `w: m × k`, `out: n × m`.
pub(crate) fn matmul_nt_acc(x: &[f64], n: usize, k: usize, w: &[f64], m: usize, out: &mut [f64]) {
    let mut r = 0;
    // four rows share each pass over a weight row
    while r + 4 <= n {
        let x0 = &x[r * k..(r + 1) * k];
        let x1 = &x[(r + 1) * k..(r + 2) * k];
        let x2 = &x[(r + 2) * k..(r + 3) * k];
        let x3 = &x[(r + 3) * k..(r + 4) * k];
        for (j, wrow) in w.chunks_exact(k).enumerate().take(m) {
            let mut a = [[0.0f64; 2]; 4];
            let pairs = k / 2;
            for p in 0..pairs {
                let i = 2 * p;
                for l in 0..2 {
                    let wv = wrow[i + l];
                    a[0][l] += x0[i + l] * wv;
                    a[1][l] += x1[i + l] * wv;
                    a[2][l] += x2[i + l] * wv;
                    a[3][l] += x3[i + l] * wv;
                }
            }
            let mut s = [a[0][0] + a[0][1], a[1][0] + a[1][1], a[2][0] + a[2][1], a[3][0] + a[3][1]];
            if k % 2 == 1 {
                let wv = wrow[k - 1];
                s[0] += x0[k - 1] * wv;
                s[1] += x1[k - 1] * wv;
                s[2] += x2[k - 1] * wv;
                s[3] += x3[k - 1] * wv;
            }
            for (t, v) in s.iter().enumerate() {
                out[(r + t) * m + j] += v;
            }
        }
        r += 4;
    }
    for r in r..n {
        let xr = &x[r * k..(r + 1) * k];
        let or = &mut out[r * m..(r + 1) * m];
        for (o, wrow) in or.iter_mut().zip(w.chunks_exact(k)) {
            *o += dot(xr, wrow);
        }
    }
}

/// `out += dy W` for `dy: n × m`, `w: m × k`, `out: n × k`.
pub(crate) fn matmul_nn_acc(dy: &[f64], n: usize, m: usize, w: &[f64], k: usize, out: &mut [f64]) {
    for r in 0..n {
        let dr = &dy[r * m..(r + 1) * m];
        let or = &mut out[r * k..(r + 1) * k];
        axpy_rows(dr, w, k, or);
    }
}

/// `dw += dyᵀ x` for `dy: n × m`, `x: n × k`, `dw: m × k`.
pub(crate) fn matmul_tn_acc(dy: &[f64], n: usize, m: usize, x: &[f64], k: usize, dw: &mut [f64]) {
    let mut r = 0;
    let mut g = [0.0f64; 4];
    while r + 4 <= n {
        let xs = &x[r * k..(r + 4) * k];
        for (j, wrow) in dw.chunks_exact_mut(k).enumerate().take(m) {
            for (t, gt) in g.iter_mut().enumerate() {
                *gt = dy[(r + t) * m + j];
            }
            axpy_rows(&g, xs, k, wrow);
        }
        r += 4;
    }
    for r in r..n {
        let dr = &dy[r * m..(r + 1) * m];
        let xr = &x[r * k..(r + 1) * k];
        for (&g, wrow) in dr.iter().zip(dw.chunks_exact_mut(k)) {
            if g != 0.0 {
                axpy(g, xr, wrow);
            }
        }
    }
}

/// `out += Σ_j c_j · rows_j` with `rows` holding `c.len()` rows of length `k`,
/// four rows per pass over `out`.
#[inline]
fn axpy_rows(c: &[f64], rows: &[f64], k: usize, out: &mut [f64]) {
    let mut j = 0;
    while j + 4 <= c.len() {
        let (c0, c1, c2, c3) = (c[j], c[j + 1], c[j + 2], c[j + 3]);
        if c0 != 0.0 || c1 != 0.0 || c2 != 0.0 || c3 != 0.0 {
            let w0 = &rows[j * k..(j + 1) * k];
            let w1 = &rows[(j + 1) * k..(j + 2) * k];
            let w2 = &rows[(j + 2) * k..(j + 3) * k];
            let w3 = &rows[(j + 3) * k..(j + 4) * k];
            for i in 0..k {
                out[i] += (c0 * w0[i] + c1 * w1[i]) + (c2 * w2[i] + c3 * w3[i]);
            }
        }
        j += 4;
    }
    for j in j..c.len() {
        if c[j] != 0.0 {
            axpy(c[j], &rows[j * k..(j + 1) * k], out);
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, ta: bool, tb: bool) -> Vec<f64> {
        // out[r][c] = Σ_i A[r][i] B[i][c] with optional transposes of the stored layouts
        let mut out = alloc::vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                for i in 0..k {
                    let av = if ta { a[i * n + r] } else { a[r * k + i] };
                    let bv = if tb { b[c * k + i] } else { b[i * m + c] };
                    out[r * m + c] += av * bv;
                }
            }
        }
        out
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
    }

    proptest! {
        #[test]
        fn kernels_match_naive_products(
            n in 1usize..11, k in 1usize..11, m in 1usize..11,
            seed in proptest::collection::vec(-1.0f64..1.0, 300),
        ) {
            let a: Vec<f64> = seed.iter().cycle().take(n * k).copied().collect();
            let b: Vec<f64> = seed.iter().rev().cycle().take(m * k).map(|v| if *v > 0.7 { 0.0 } else { *v }).collect();
            let mut out = alloc::vec![0.5; n * m];
            matmul_nt_acc(&a, n, k, &b, m, &mut out);
            let want: Vec<f64> = naive(&a, &b, n, k, m, false, true).iter().map(|v| v + 0.5).collect();
            prop_assert!(close(&out, &want));

            // dy: n × m, w: m × k
            let dy: Vec<f64> = b.iter().cycle().take(n * m).copied().collect();
            let w: Vec<f64> = a.iter().cycle().take(m * k).copied().collect();
            let mut dx = alloc::vec![0.0; n * k];
            matmul_nn_acc(&dy, n, m, &w, k, &mut dx);
            prop_assert!(close(&dx, &naive(&dy, &w, n, m, k, false, false)));

            // dw: m × k = dyᵀ x with x: n × k
            let mut dw = alloc::vec![0.0; m * k];
            matmul_tn_acc(&dy, n, m, &a, k, &mut dw);
            prop_assert!(close(&dw, &naive(&dy, &a, m, n, k, true, false)));
        }
    }
}

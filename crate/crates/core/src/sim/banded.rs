//! Symmetric banded storage and an in-place Cholesky factorisation.
//!
//! Only the upper band is stored: `band[i * (bw + 1) + k] = A[i][i + k]`.

#[derive(Debug, Clone)]
pub(crate) struct SymBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, k: usize) -> usize {
        i * (self.bw + 1) + k
    }

    /// Adds `v` to `A[i][j]` (and implicitly `A[j][i]`). Requires `|i - j| <= bw`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(c - r <= self.bw);
        let id = self.idx(r, c - r);
        self.data[id] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        if c - r > self.bw {
            0.0
        } else {
            self.data[self.idx(r, c - r)]
        }
    }

    pub fn copy_from(&mut self, other: &SymBand) {
        self.data.copy_from_slice(&other.data);
    }

    /// Replaces row and column `p` with the identity.
    pub fn pin(&mut self, p: usize) {
        for k in 1..=self.bw {
            if p + k < self.n {
                let id = self.idx(p, k);
                self.data[id] = 0.0;
            }
            if p >= k {
                let id = self.idx(p - k, k);
                self.data[id] = 0.0;
            }
        }
        let id = self.idx(p, 0);
        self.data[id] = 1.0;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            y[i] += self.data[self.idx(i, 0)] * x[i];
            for k in 1..=self.bw.min(self.n - 1 - i) {
                let a = self.data[self.idx(i, k)];
                y[i] += a * x[i + k];
                y[i + k] += a * x[i];
            }
        }
    }

    /// Factorises in place into `Uᵀ U`. Returns false if a pivot is not positive.
    pub fn cholesky_in_place(&mut self) -> bool {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut d = self.data[self.idx(i, 0)];
            for k in 1..=bw.min(i) {
                let u = self.data[self.idx(i - k, k)];
                d -= u * u;
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            let id = self.idx(i, 0);
            self.data[id] = d;
            for j in 1..=bw.min(n - 1 - i) {
                // A[i][i+j] - sum_k U[i-k][i] U[i-k][i+j]
                let mut s = self.data[self.idx(i, j)];
                for k in 1..=(bw - j).min(i) {
                    s -= self.data[self.idx(i - k, k)] * self.data[self.idx(i - k, k + j)];
                }
                let id = self.idx(i, j);
                self.data[id] = s / d;
            }
        }
        true
    }

    /// Solves `Uᵀ U x = b` in place using a factor from [`cholesky_in_place`].
    pub fn cholesky_solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        // Uᵀ z = b
        for i in 0..n {
            let mut s = b[i];
            for k in 1..=bw.min(i) {
                s -= self.data[self.idx(i - k, k)] * b[i - k];
            }
            b[i] = s / self.data[self.idx(i, 0)];
        }
        // U x = z
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in 1..=bw.min(n - 1 - i) {
                s -= self.data[self.idx(i, k)] * b[i + k];
            }
            b[i] = s / self.data[self.idx(i, 0)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn sample(n: usize, bw: usize) -> (SymBand, DMatrix<f64>) {
        let mut b = SymBand::zeros(n, bw);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..=bw.min(n - 1 - i) {
                let v = if k == 0 {
                    10.0 + i as f64
                } else {
                    ((i * 7 + k * 3) % 5) as f64 * 0.3 - 0.6
                };
                b.add(i, i + k, v);
                m[(i, i + k)] += v;
                if k > 0 {
                    m[(i + k, i)] += v;
                }
            }
        }
        (b, m)
    }

    #[test]
    fn matvec_and_solve_agree_with_dense() {
        let (mut band, dense) = sample(17, 3);
        let x: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 17];
        band.mul_vec(&x, &mut y);
        let yd = &dense * DVector::from_vec(x.clone());
        for i in 0..17 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
        assert!(band.cholesky_in_place());
        band.cholesky_solve(&mut y);
        for i in 0..17 {
            assert!((y[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn pin_gives_identity_row() {
        let (mut band, _) = sample(8, 3);
        band.pin(3);
        for j in 0..8 {
            assert_eq!(band.get(3, j), if j == 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut b = SymBand::zeros(2, 1);
        b.add(0, 0, 1.0);
        b.add(0, 1, 2.0);
        b.add(1, 1, 1.0);
        assert!(!b.cholesky_in_place());
    }
}

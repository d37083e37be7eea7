//! Small direct solvers for the banded systems produced by the radial stencil.

/// Thomas algorithm for a tridiagonal system. `lower[0]` and `upper[n-1]` are ignored.
///
/// Intended for diagonally dominant matrices (the shifted radial operator), so
/// no pivoting is done.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// General band matrix with `kl` sub- and `ku` super-diagonals, factored by
/// Gaussian elimination with partial pivoting. Storage keeps room for the
/// `kl` extra super-diagonals created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku + self.kl
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` at (i, j). Panics when (i, j) lies outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band"
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Factors in place and solves `A x = b`. Returns `None` on an exactly
    /// singular pivot.
    pub fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for c in 0..n {
            let last = (c + kl).min(n - 1);
            let mut p = c;
            let mut best = self.get(c, c).abs();
            for r in c + 1..=last {
                let v = self.get(r, c).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            piv[c] = p;
            let col_end = (c + ku + kl).min(n - 1);
            if p != c {
                for j in c..=col_end {
                    let a = self.idx(c, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(c, c)];
            for r in c + 1..=last {
                let ir = self.idx(r, c);
                let m = self.data[ir] / pivot;
                self.data[ir] = m;
                if m != 0.0 {
                    for j in c + 1..=col_end {
                        let src = self.data[self.idx(c, j)];
                        let dst = self.idx(r, j);
                        self.data[dst] -= m * src;
                    }
                }
            }
        }
        let mut x = rhs.to_vec();
        for c in 0..n {
            let p = piv[c];
            if p != c {
                x.swap(c, p);
            }
            let last = (c + kl).min(n - 1);
            let xc = x[c];
            for r in c + 1..=last {
                x[r] -= self.data[self.idx(r, c)] * xc;
            }
        }
        for i in (0..n).rev() {
            let col_end = (i + ku + kl).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=col_end {
                s -= self.data[self.idx(i, j)] * x[j];
            }
            x[i] = s / self.data[self.idx(i, i)];
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    #[test]
    fn band_solve_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (9, 1, 1), (30, 3, 3), (25, 2, 1)] {
            let mut dense = vec![vec![0.0; n]; n];
            let mut band = BandMatrix::zeros(n, kl, ku);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    dense[i][j] = v;
                    band.add(i, j, v);
                }
            }
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = dense_mul(&dense, &x);
            let got = band.solve(&b).unwrap();
            for (g, e) in got.iter().zip(&x) {
                assert!((g - e).abs() < 1e-8, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut band = BandMatrix::zeros(2, 1, 1);
        band.add(0, 1, 1.0);
        band.add(1, 0, 1.0);
        let x = band.solve(&[3.0, 5.0]).unwrap();
        assert_eq!(x, vec![5.0, 3.0]);
    }

    #[test]
    fn tridiagonal_identity_like() {
        let n = 5;
        let lower = vec![-1.0; n];
        let diag = vec![4.0; n];
        let upper = vec![-1.0; n];
        let x_true: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = diag[i] * x_true[i];
            if i > 0 {
                rhs[i] += lower[i] * x_true[i - 1];
            }
            if i + 1 < n {
                rhs[i] += upper[i] * x_true[i + 1];
            }
        }
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Banded LU factorization with partial pivoting.
//!
//! Both solvers produce chain-structured Jacobians whose bandwidth is set by
//! the per-cell node count (times the per-node harmonic block for harmonic
//! balance), so a band solver keeps every linear solve O(n·b²).

use num_complex::Complex64;

use crate::{Error, Result};

pub trait Scalar:
    Copy
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    const ZERO: Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Band matrix in LAPACK-style storage with room for pivoting fill-in:
/// entry (i, j) lives at `data[j * stride + (kl + ku + i - j)]` for
/// `-(ku + kl) <= i - j <= kl`.
pub struct BandedMatrix<T: Scalar> {
    n: usize,
    kl: usize,
    ku: usize,
    stride: usize,
    data: Vec<T>,
    pivots: Vec<usize>,
    factored: bool,
}

impl<T: Scalar> BandedMatrix<T> {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let stride = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            stride,
            data: vec![T::ZERO; stride * n],
            pivots: vec![0; n],
            factored: false,
        }
    }

    #[allow(dead_code)]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Zero all entries, keeping the allocation.
    pub fn reset(&mut self) {
        self.data.fill(T::ZERO);
        self.factored = false;
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku + self.kl >= j && j + self.kl >= i, "({i},{j}) outside band");
        j * self.stride + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(!self.factored);
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    #[inline]
    #[allow(dead_code)]
    pub fn get(&self, i: usize, j: usize) -> T {
        if i + self.ku + self.kl >= j && j + self.kl >= i {
            self.data[self.idx(i, j)]
        } else {
            T::ZERO
        }
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(&mut self) -> Result<()> {
        assert!(!self.factored);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku; // upper band after fill-in
        for j in 0..n {
            // Pivot search in column j, rows j..=j+kl.
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.data[self.idx(j, j)].modulus();
            for i in j + 1..=last {
                let m = self.data[self.idx(i, j)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::domain(format!(
                    "singular or non-finite matrix at column {j}"
                )));
            }
            self.pivots[j] = p;
            let hi_col = (j + width).min(n - 1);
            if p != j {
                for c in j..=hi_col {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(j, j)];
            for i in j + 1..=last {
                let k = self.idx(i, j);
                let m = self.data[k] / pivot;
                self.data[k] = m;
                if m != T::ZERO {
                    for c in j + 1..=hi_col {
                        let up = self.data[self.idx(j, c)];
                        if up != T::ZERO {
                            let k2 = self.idx(i, c);
                            self.data[k2] = self.data[k2] - m * up;
                        }
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve A x = b using a prior [`factor`](Self::factor); `rhs` is
    /// overwritten with the solution.
    pub fn solve_factored(&self, rhs: &mut [T]) {
        assert!(self.factored && rhs.len() == self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                rhs.swap(j, p);
            }
            let last = (j + kl).min(n - 1);
            for i in j + 1..=last {
                let m = self.data[self.idx(i, j)];
                rhs[i] = rhs[i] - m * rhs[j];
            }
        }
        for j in (0..n).rev() {
            let mut x = rhs[j];
            let hi = (j + width).min(n - 1);
            for c in j + 1..=hi {
                x = x - self.data[self.idx(j, c)] * rhs[c];
            }
            rhs[j] = x / self.data[self.idx(j, j)];
        }
    }

    /// Factor and solve in one call.
    pub fn solve(&mut self, rhs: &mut [T]) -> Result<()> {
        self.factor()?;
        self.solve_factored(rhs);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Deterministic pseudo-random stream for test matrices.
    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        }
    }

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for j in 0..n {
            let p = (j..n).max_by(|&x, &y| a[x][j].abs().total_cmp(&a[y][j].abs())).unwrap();
            a.swap(j, p);
            b.swap(j, p);
            for i in j + 1..n {
                let m = a[i][j] / a[j][j];
                for c in j..n {
                    a[i][c] -= m * a[j][c];
                }
                b[i] -= m * b[j];
            }
        }
        for j in (0..n).rev() {
            for c in j + 1..n {
                b[j] -= a[j][c] * b[c];
            }
            b[j] /= a[j][j];
        }
        b
    }

    #[test]
    fn banded_matches_dense_oracle() {
        let mut rng = Lcg(42);
        for &(n, kl, ku) in &[(1usize, 0usize, 0usize), (5, 1, 1), (24, 3, 2), (60, 4, 4)] {
            let mut band = BandedMatrix::<f64>::new(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i + ku >= j && j + kl >= i {
                        let v = rng.next() + if i == j { 3.0 } else { 0.0 };
                        band.add(i, j, v);
                        dense[i][j] = v;
                    }
                }
            }
            let mut rhs: Vec<f64> = (0..n).map(|_| rng.next()).collect();
            let expect = dense_solve(dense, rhs.clone());
            band.solve(&mut rhs).unwrap();
            for (x, y) in rhs.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-9, "n={n} kl={kl} ku={ku}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn complex_solve_round_trip() {
        let mut rng = Lcg(7);
        let (n, kl, ku) = (30usize, 2usize, 3usize);
        let mut band = BandedMatrix::<Complex64>::new(n, kl, ku);
        let mut entries = vec![];
        for i in 0..n {
            for j in 0..n {
                if i + ku >= j && j + kl >= i {
                    let v = Complex64::new(rng.next() + if i == j { 2.0 } else { 0.0 }, rng.next());
                    band.add(i, j, v);
                    entries.push((i, j, v));
                }
            }
        }
        let x_true: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(rng.next(), rng.next())).collect();
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        for &(i, j, v) in &entries {
            rhs[i] += v * x_true[j];
        }
        band.solve(&mut rhs).unwrap();
        for (x, y) in rhs.iter().zip(&x_true) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn singular_matrix_reports_error() {
        let mut band = BandedMatrix::<f64>::new(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(2, 2, 1.0);
        assert!(band.solve(&mut vec![1.0, 1.0, 1.0]).is_err());
    }
}

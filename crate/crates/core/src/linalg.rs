//! Small dense symmetric matrices (dimension 1..=4 in practice) and a cyclic Jacobi
//! eigen-solver. Speed functions only ever look at a handful of principal curvatures, so
//! nothing here is tuned for size.

use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};

/// Dense symmetric `n x n` matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![T::one(); n])
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from row-major data, symmetrising `(a + a^T) / 2`.
    pub fn from_rows(n: usize, rows: &[T]) -> Self {
        assert_eq!(rows.len(), n * n, "row data length");
        let mut m = Self::zeros(n);
        let half = lit::<T>(0.5);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = half * (rows[i * n + j] + rows[j * n + i]);
            }
        }
        m
    }

    /// `q diag(eig) q^T` for an orthogonal `q` given row-major.
    pub fn from_spectral(q: &[T], eig: &[T]) -> Self {
        let n = eig.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for k in 0..n {
                    acc = acc + q[i * n + k] * eig[k] * q[j * n + k];
                }
                m.data[i * n + j] = acc;
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, c: T) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&v| v * c).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    /// `lambda * a + (1 - lambda) * b`.
    pub fn lerp(a: &Self, b: &Self, lambda: T) -> Self {
        a.scale(lambda).add(&b.scale(T::one() - lambda))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        let (mut vals, _) = self.eigen();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        vals
    }

    /// Cyclic Jacobi: returns (eigenvalues, eigenvectors as columns of a row-major matrix).
    pub fn eigen(&self) -> (Vec<T>, Vec<T>) {
        let n = self.n;
        let mut a = self.data.clone();
        let mut v = vec![T::zero(); n * n];
        for i in 0..n {
            v[i * n + i] = T::one();
        }
        let eps = T::epsilon();
        for _sweep in 0..64 {
            let mut off = T::zero();
            let mut diag = T::zero();
            for i in 0..n {
                diag = diag + a[i * n + i] * a[i * n + i];
                for j in (i + 1)..n {
                    off = off + a[i * n + j] * a[i * n + j];
                }
            }
            if off <= eps * eps * diag || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (lit::<T>(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i * n + i]).collect(), v)
    }
}

/// Eigenvalues `(min, max)` of the symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[inline]
pub fn sym2_eigenvalues<T: Real>(a: T, b: T, c: T) -> (T, T) {
    let half = lit::<T>(0.5);
    let mean = half * (a + c);
    let rad = (half * (a - c)).hypot(b);
    (mean - rad, mean + rad)
}

/// 2x2 symmetric matrix `[[xx, xy], [xy, yy]]`.
pub type Mat2<T> = [[T; 2]; 2];

/// `r^T m r` where the columns of `r` are the frame vectors `e1`, `e2`.
pub fn in_frame<T: Real>(m: &Mat2<T>, e1: [T; 2], e2: [T; 2]) -> Mat2<T> {
    let form = |a: [T; 2], b: [T; 2]| {
        a[0] * (m[0][0] * b[0] + m[0][1] * b[1]) + a[1] * (m[1][0] * b[0] + m[1][1] * b[1])
    };
    let off = form(e1, e2);
    [[form(e1, e1), off], [off, form(e2, e2)]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_spectrum() {
        let c = 0.3f64.cos();
        let s = 0.3f64.sin();
        // rotation in the (0, 2) plane
        let q = [c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c];
        let m = SymMatrix::from_spectral(&q, &[0.5, 2.0, 7.0]);
        let e = m.eigenvalues();
        for (got, want) in e.iter().zip([0.5, 2.0, 7.0]) {
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let (lo, hi) = sym2_eigenvalues(2.0f64, 1.0, 2.0);
        assert!((lo - 1.0).abs() < 1e-15);
        assert!((hi - 3.0).abs() < 1e-15);
    }
}

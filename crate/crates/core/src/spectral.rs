//! Differentiation and interpolation of 2π-periodic samples on a uniform grid
//! `θ_j = 2πj/N`.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};

/// How θ-derivatives of periodic samples are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffScheme {
    /// Trigonometric interpolation (FFT).
    #[default]
    Spectral,
    /// Fourth-order central differences.
    FourthOrder,
}

impl DiffScheme {
    /// Largest magnitude of the discrete second-derivative operator on `n` nodes.
    pub fn max_second_derivative_eigenvalue<T: Real>(self, n: usize) -> T {
        let nn = T::from_usize(n).unwrap();
        match self {
            DiffScheme::Spectral => {
                let k = nn * lit(0.5);
                k * k
            }
            DiffScheme::FourthOrder => {
                let dtheta = T::TAU() / nn;
                lit::<T>(16.0 / 3.0) / (dtheta * dtheta)
            }
        }
    }
}

/// First and second θ-derivatives of periodic samples.
pub fn derivatives<T: Real>(values: &[T], scheme: DiffScheme) -> (Vec<T>, Vec<T>) {
    match scheme {
        DiffScheme::Spectral => spectral_derivatives(values),
        DiffScheme::FourthOrder => fd4_derivatives(values),
    }
}

/// Second θ-derivative only (cheaper for the flow right-hand side).
pub fn second_derivative<T: Real>(values: &[T], scheme: DiffScheme) -> Vec<T> {
    match scheme {
        DiffScheme::Spectral => {
            let n = values.len();
            let mut hat: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
            T::fft_forward(&mut hat);
            for (k, c) in hat.iter_mut().enumerate() {
                let w = T::from_isize(wavenumber(k, n)).unwrap();
                *c = *c * (-(w * w));
            }
            T::fft_inverse(&mut hat);
            let inv_n = T::one() / T::from_usize(n).unwrap();
            hat.iter().map(|c| c.re * inv_n).collect()
        }
        DiffScheme::FourthOrder => fd4_derivatives(values).1,
    }
}

fn spectral_derivatives<T: Real>(values: &[T]) -> (Vec<T>, Vec<T>) {
    let n = values.len();
    let mut hat: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
    T::fft_forward(&mut hat);
    let mut d1 = hat.clone();
    let mut d2 = hat;
    for k in 0..n {
        let w = T::from_isize(wavenumber(k, n)).unwrap();
        let i_w = Complex::new(T::zero(), w);
        if n.is_multiple_of(2) && k == n / 2 {
            // the Nyquist mode has no odd derivative on the grid
            d1[k] = Complex::new(T::zero(), T::zero());
        } else {
            d1[k] = d1[k] * i_w;
        }
        d2[k] = d2[k] * (-(w * w));
    }
    T::fft_inverse(&mut d1);
    T::fft_inverse(&mut d2);
    let inv_n = T::one() / T::from_usize(n).unwrap();
    (
        d1.iter().map(|c| c.re * inv_n).collect(),
        d2.iter().map(|c| c.re * inv_n).collect(),
    )
}

fn fd4_derivatives<T: Real>(values: &[T]) -> (Vec<T>, Vec<T>) {
    let n = values.len();
    let h = T::TAU() / T::from_usize(n).unwrap();
    let at = |j: isize| values[j.rem_euclid(n as isize) as usize];
    let (c8, c12, c16, c30) = (lit::<T>(8.0), lit::<T>(12.0), lit::<T>(16.0), lit::<T>(30.0));
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    for j in 0..n as isize {
        let (m2, m1, z, p1, p2) = (at(j - 2), at(j - 1), at(j), at(j + 1), at(j + 2));
        d1.push((m2 - c8 * m1 + c8 * p1 - p2) / (c12 * h));
        d2.push((-m2 + c16 * m1 - c30 * z + c16 * p1 - p2) / (c12 * h * h));
    }
    (d1, d2)
}

#[inline]
fn wavenumber(k: usize, n: usize) -> isize {
    if k <= n / 2 {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Real trigonometric interpolant `a_0 + Σ_{k≥1} (a_k cos kθ + b_k sin kθ)` through
/// periodic samples. Evaluates value and two θ-derivatives at arbitrary angles.
#[derive(Clone, Debug)]
pub struct TrigSeries<T> {
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: Real> TrigSeries<T> {
    pub fn from_samples(values: &[T]) -> Self {
        let n = values.len();
        let mut hat: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        T::fft_forward(&mut hat);
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let two = lit::<T>(2.0);
        let half = n / 2;
        let mut a = Vec::with_capacity(half + 1);
        let mut b = Vec::with_capacity(half + 1);
        for (k, c) in hat.iter().take(half + 1).enumerate() {
            let scale = if k == 0 || (n.is_multiple_of(2) && k == half) { inv_n } else { two * inv_n };
            a.push(c.re * scale);
            b.push(-c.im * scale);
        }
        if n.is_multiple_of(2) {
            // sin(Nθ/2) vanishes on every node; its coefficient is not determined
            b[half] = T::zero();
        }
        Self { a, b }
    }

    pub fn modes(&self) -> usize {
        self.a.len()
    }

    /// Cosine/sine coefficients.
    pub fn coefficients(&self) -> (&[T], &[T]) {
        (&self.a, &self.b)
    }

    /// `(f, f_θ, f_θθ)` at `theta`.
    pub fn eval(&self, theta: T) -> (T, T, T) {
        let (c1, s1) = (theta.cos(), theta.sin());
        let mut ck = T::one();
        let mut sk = T::zero();
        let mut f = self.a[0];
        let mut d1 = T::zero();
        let mut d2 = T::zero();
        for k in 1..self.a.len() {
            let c_next = ck * c1 - sk * s1;
            let s_next = sk * c1 + ck * s1;
            ck = c_next;
            sk = s_next;
            let kk = T::from_usize(k).unwrap();
            let (ak, bk) = (self.a[k], self.b[k]);
            let term = ak * ck + bk * sk;
            f = f + term;
            d1 = d1 + kk * (bk * ck - ak * sk);
            d2 = d2 - kk * kk * term;
        }
        (f, d1, d2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|j| std::f64::consts::TAU * j as f64 / n as f64).collect()
    }

    #[test]
    fn spectral_is_exact_on_trig_polynomials() {
        let th = grid(64);
        let v: Vec<f64> = th.iter().map(|t| 1.0 + 0.3 * (2.0 * t).cos() - 0.1 * (5.0 * t).sin()).collect();
        let (d1, d2) = derivatives(&v, DiffScheme::Spectral);
        for (j, t) in th.iter().enumerate() {
            let e1 = -0.6 * (2.0 * t).sin() - 0.5 * (5.0 * t).cos();
            let e2 = -1.2 * (2.0 * t).cos() + 2.5 * (5.0 * t).sin();
            assert!((d1[j] - e1).abs() < 1e-12);
            assert!((d2[j] - e2).abs() < 1e-12);
        }
    }

    #[test]
    fn fourth_order_converges_at_nominal_rate() {
        let err = |n: usize| {
            let th = grid(n);
            let v: Vec<f64> = th.iter().map(|t| (t.sin()).exp()).collect();
            let (_, d2) = derivatives(&v, DiffScheme::FourthOrder);
            th.iter()
                .zip(&d2)
                .map(|(t, d)| {
                    let exact = (t.cos().powi(2) - t.sin()) * t.sin().exp();
                    (d - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let order = (err(64) / err(128)).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn trig_series_interpolates_between_nodes() {
        let th = grid(32);
        let f = |t: f64| 2.0 + (t).cos() * 0.5 + (3.0 * t).sin() * 0.25;
        let v: Vec<f64> = th.iter().map(|&t| f(t)).collect();
        let s = TrigSeries::from_samples(&v);
        let t = 0.123;
        let (val, d1, d2) = s.eval(t);
        assert!((val - f(t)).abs() < 1e-13);
        assert!((d1 - (-0.5 * t.sin() + 0.75 * (3.0 * t).cos())).abs() < 1e-12);
        assert!((d2 - (-0.5 * t.cos() - 2.25 * (3.0 * t).sin())).abs() < 1e-12);
    }
}

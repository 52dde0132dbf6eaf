//! Isotropic curvature speeds `f` on the positive cone, their duals
//! `f_*(r) = 1 / f(r^{-1})`, and sampling classifiers for monotonicity and
//! inverse-concavity.
//!
//! A speed is a symmetric function of the principal curvatures. The realised normal
//! speed of a flow is `F = f^α`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::{lit, Real};

/// Eigenvalue floor defining the working boundary of the positive cone.
pub const CONE_FLOOR: f64 = 1e-10;

/// Built-in speed families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedKind {
    /// Curve curvature κ (the identity in one variable).
    Curvature,
    /// Mean curvature `H = Σ λ_i`.
    Mean,
    /// Gauss curvature `K = Π λ_i`.
    Gauss,
    /// `K^{1/n}`.
    GaussRoot,
    /// `(Σ λ_i^{-1})^{-1}`.
    Harmonic,
    /// Normalised power mean `((1/n) Σ λ_i^p)^{1/p}`, `p ∈ [-1, 1]`; `p = 0` is the geometric mean.
    PowerMean { p: f64 },
    /// Smallest principal curvature.
    MinCurvature,
    /// `-H`. Only meaningful as a negative control for the monotonicity check.
    NegMean,
    /// `1 / f(λ^{-1})`.
    Dual { inner: Box<SpeedKind> },
}

impl SpeedKind {
    /// Raw value on eigenvalues, no positivity checks.
    pub fn value<T: Real>(&self, eig: &[T]) -> T {
        let n = T::from_usize(eig.len()).unwrap();
        match self {
            SpeedKind::Curvature | SpeedKind::Mean => eig.iter().copied().sum(),
            SpeedKind::NegMean => -eig.iter().copied().sum::<T>(),
            SpeedKind::Gauss => eig.iter().fold(T::one(), |acc, &l| acc * l),
            SpeedKind::GaussRoot => eig.iter().fold(T::one(), |acc, &l| acc * l).powf(T::one() / n),
            SpeedKind::Harmonic => T::one() / eig.iter().map(|&l| T::one() / l).sum::<T>(),
            SpeedKind::PowerMean { p } => {
                let p = lit::<T>(*p);
                if p == T::zero() {
                    (eig.iter().map(|l| l.ln()).sum::<T>() / n).exp()
                } else {
                    (eig.iter().map(|l| l.powf(p)).sum::<T>() / n).powf(T::one() / p)
                }
            }
            SpeedKind::MinCurvature => eig.iter().copied().fold(T::infinity(), T::min),
            SpeedKind::Dual { inner } => {
                let inv: Vec<T> = eig.iter().map(|&l| T::one() / l).collect();
                T::one() / inner.value(&inv)
            }
        }
    }

    /// `(f(x), f'(x))` in one variable.
    pub fn value_and_derivative_1d<T: Real>(&self, x: T) -> (T, T) {
        match self {
            SpeedKind::NegMean => (-x, -T::one()),
            SpeedKind::Dual { inner } => {
                let (g, dg) = inner.value_and_derivative_1d(T::one() / x);
                // d/dx [1 / g(1/x)] = g'(1/x) / (x^2 g(1/x)^2)
                (T::one() / g, dg / (x * x * g * g))
            }
            // every other family reduces to the identity for a single curvature
            _ => (x, T::one()),
        }
    }

    pub fn is_one_homogeneous(&self) -> bool {
        match self {
            SpeedKind::Gauss => false,
            SpeedKind::Dual { inner } => inner.is_one_homogeneous(),
            _ => true,
        }
    }
}

/// Classification verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Counterexample found by a classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    /// Segment (or sample) index in generation order.
    pub index: usize,
    /// First matrix (segment endpoint `r0`, or base point `r`).
    pub first: Vec<f64>,
    /// Second matrix (segment endpoint `r1`, or perturbation `s`).
    pub second: Vec<f64>,
    /// Interpolation parameter (inverse-concavity only).
    pub lambda: Option<f64>,
    /// Amount by which the inequality is violated.
    pub violation: f64,
    /// Violation at the segment midpoint (inverse-concavity only).
    pub midpoint_violation: Option<f64>,
}

/// Outcome of a sampling classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
}

/// Cached classification flags.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SpeedFlags {
    pub monotone: Option<ClassificationResult>,
    pub inverse_concave: Option<ClassificationResult>,
}

/// Segment `[r0, r1]` in the positive-definite cone with a sample count.
#[derive(Clone, Debug)]
pub struct ConeSegment<T> {
    pub r0: SymMatrix<T>,
    pub r1: SymMatrix<T>,
    pub samples: usize,
}

impl<T: Real> ConeSegment<T> {
    pub fn new(r0: SymMatrix<T>, r1: SymMatrix<T>, samples: usize) -> Self {
        Self { r0, r1, samples }
    }

    fn is_valid(&self) -> bool {
        let floor = lit::<T>(CONE_FLOOR);
        self.r0.dim() == self.r1.dim()
            && self.r0.eigenvalues()[0] > floor
            && self.r1.eigenvalues()[0] > floor
    }

    /// Interior sample parameters; always contains 1/2.
    fn lambdas(&self) -> Vec<T> {
        let m = self.samples.max(1) | 1;
        let denom = T::from_usize(m + 1).unwrap();
        (1..=m).map(|k| T::from_usize(k).unwrap() / denom).collect()
    }
}

/// An isotropic speed together with its exponent.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SpeedSpec<T> {
    pub name: String,
    pub dimension: usize,
    pub alpha: T,
    pub kind: SpeedKind,
    #[serde(default)]
    pub flags: SpeedFlags,
}

impl<T: Real> SpeedSpec<T> {
    pub fn new(name: impl Into<String>, kind: SpeedKind, dimension: usize, alpha: T) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("speed dimension must be positive".into()));
        }
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("exponent alpha must be positive, got {alpha}")));
        }
        if let SpeedKind::PowerMean { p } = kind {
            if !(-1.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("power mean exponent {p} outside [-1, 1]")));
            }
        }
        Ok(Self { name: name.into(), dimension, alpha, kind, flags: SpeedFlags::default() })
    }

    /// Looks up a built-in by name: `curvature`, `mean`, `gauss`, `gauss_root`, `harmonic`,
    /// `power_mean` (needs `p`), `min_curvature`, `neg_mean`.
    pub fn builtin(name: &str, dimension: usize, alpha: T, p: Option<f64>) -> Result<Self> {
        let kind = match name {
            "curvature" | "kappa" => {
                if dimension != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: dimension });
                }
                SpeedKind::Curvature
            }
            "mean" => SpeedKind::Mean,
            "gauss" => SpeedKind::Gauss,
            "gauss_root" => SpeedKind::GaussRoot,
            "harmonic" => SpeedKind::Harmonic,
            "power_mean" => SpeedKind::PowerMean {
                p: p.ok_or_else(|| Error::InvalidInput("power_mean needs parameter p".into()))?,
            },
            "min_curvature" => SpeedKind::MinCurvature,
            "neg_mean" => SpeedKind::NegMean,
            other => return Err(Error::UnknownSpeed(other.to_string())),
        };
        Self::new(name, kind, dimension, alpha)
    }

    /// The dual speed `f_*` (same dimension and exponent).
    pub fn dual(&self) -> Self {
        let kind = match &self.kind {
            SpeedKind::Dual { inner } => (**inner).clone(),
            k => SpeedKind::Dual { inner: Box::new(k.clone()) },
        };
        Self {
            name: format!("dual({})", self.name),
            dimension: self.dimension,
            alpha: self.alpha,
            kind,
            flags: SpeedFlags::default(),
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got });
        }
        Ok(())
    }

    fn check_cone(eig: &[T]) -> Result<()> {
        let floor = lit::<T>(CONE_FLOOR);
        for &l in eig {
            if !(l > floor) {
                return Err(Error::NonPositiveCurvature { value: l.to_f64_lossy(), floor: CONE_FLOOR });
            }
        }
        Ok(())
    }

    fn checked_value(&self, eig: &[T]) -> Result<T> {
        Self::check_cone(eig)?;
        let v = self.kind.value(eig);
        if !(v > T::zero()) || !v.is_finite() {
            return Err(Error::NonPositiveSpeed { name: self.name.clone(), value: v.to_f64_lossy() });
        }
        Ok(v)
    }

    /// `f` on principal curvatures.
    pub fn evaluate_eigenvalues(&self, eig: &[T]) -> Result<T> {
        self.check_dim(eig.len())?;
        self.checked_value(eig)
    }

    /// `f(eigenvalues of r)`.
    pub fn evaluate(&self, r: &SymMatrix<T>) -> Result<T> {
        self.check_dim(r.dim())?;
        self.checked_value(&r.eigenvalues())
    }

    /// `f_*(r) = 1 / f(r^{-1})`.
    pub fn dual_evaluate(&self, r: &SymMatrix<T>) -> Result<T> {
        self.check_dim(r.dim())?;
        let eig = r.eigenvalues();
        Self::check_cone(&eig)?;
        let inv: Vec<T> = eig.iter().map(|&l| T::one() / l).collect();
        Ok(T::one() / self.checked_value(&inv)?)
    }

    /// Realised speed `F = f(κ)^α` of a curve with curvature `kappa`.
    pub fn realized_1d(&self, kappa: T) -> Result<T> {
        self.check_dim(1)?;
        Ok(pow_alpha(self.checked_value(&[kappa])?, self.alpha))
    }

    /// `(F, dF/dκ)` with `F = f(κ)^α`.
    pub fn realized_with_derivative_1d(&self, kappa: T) -> Result<(T, T)> {
        self.check_dim(1)?;
        Self::check_cone(&[kappa])?;
        let (f, df) = self.kind.value_and_derivative_1d(kappa);
        if !(f > T::zero()) {
            return Err(Error::NonPositiveSpeed { name: self.name.clone(), value: f.to_f64_lossy() });
        }
        let big_f = pow_alpha(f, self.alpha);
        Ok((big_f, self.alpha * big_f / f * df))
    }

    /// Requires `f' > 0` on a log-spaced range of curvatures; the curve flow is only
    /// parabolic for strictly increasing speeds.
    pub fn require_strictly_increasing_1d(&self, lo: T, hi: T, samples: usize) -> Result<()> {
        self.check_dim(1)?;
        let m = samples.max(2);
        let (llo, lhi) = (lo.ln(), hi.ln());
        for k in 0..m {
            let s = T::from_usize(k).unwrap() / T::from_usize(m - 1).unwrap();
            let x = (llo + (lhi - llo) * s).exp();
            let (_, d) = self.realized_with_derivative_1d(x)?;
            if !(d > T::zero()) {
                return Err(Error::NotParabolic { name: self.name.clone(), at: x.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// Sampling test of inverse-concavity: along each segment the dual must satisfy
    /// `f_*(λ r0 + (1-λ) r1) ≥ λ f_*(r0) + (1-λ) f_*(r1) - tol`.
    ///
    /// `seed` is only recorded in the result; segment generation is the caller's business
    /// (see [`SpeedSpec::classify_inverse_concavity`]).
    pub fn check_inverse_concavity(
        &self,
        segments: &[ConeSegment<T>],
        tol: T,
        seed: u64,
    ) -> Result<ClassificationResult> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("at least one segment is required".into()));
        }
        for (index, seg) in segments.iter().enumerate() {
            if seg.r0.dim() != self.dimension || !seg.is_valid() {
                return Err(Error::InvalidSegment { index });
            }
        }
        let per_segment: Vec<Result<(T, T, T)>> = segments
            .par_iter()
            .map(|seg| {
                let d0 = self.dual_evaluate(&seg.r0)?;
                let d1 = self.dual_evaluate(&seg.r1)?;
                let mut worst = (T::neg_infinity(), T::zero());
                let mut mid = T::zero();
                for lam in seg.lambdas() {
                    let r = SymMatrix::lerp(&seg.r0, &seg.r1, lam);
                    let chord = lam * d0 + (T::one() - lam) * d1;
                    let violation = chord - self.dual_evaluate(&r)?;
                    if violation > worst.0 {
                        worst = (violation, lam);
                    }
                    if lam == lit(0.5) {
                        mid = violation;
                    }
                }
                Ok((worst.0, worst.1, mid))
            })
            .collect();

        // ordered reduction
        let mut best: Option<(usize, T, T, T)> = None;
        for (index, res) in per_segment.into_iter().enumerate() {
            let (v, lam, mid) = res?;
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((index, v, lam, mid));
            }
        }
        let (index, violation, lambda, mid) = best.expect("non-empty");
        let samples = segments.iter().map(|s| s.lambdas().len()).sum();
        let pass = violation <= tol;
        Ok(ClassificationResult {
            verdict: Verdict::from_pass(pass),
            witness: (!pass).then(|| Witness {
                index,
                first: matrix_to_vec(&segments[index].r0),
                second: matrix_to_vec(&segments[index].r1),
                lambda: Some(lambda.to_f64_lossy()),
                violation: violation.to_f64_lossy(),
                midpoint_violation: Some(mid.to_f64_lossy()),
            }),
            samples,
            tol: tol.to_f64_lossy(),
            seed,
        })
    }

    /// Generates `count` seeded random segments plus axis-aligned ones and runs
    /// [`SpeedSpec::check_inverse_concavity`]. Caches the result in `flags`.
    pub fn classify_inverse_concavity(
        &mut self,
        count: usize,
        samples_per_segment: usize,
        tol: T,
        seed: u64,
    ) -> Result<ClassificationResult> {
        let segments = sample_segments(self.dimension, count, samples_per_segment, seed);
        let res = self.check_inverse_concavity(&segments, tol, seed)?;
        self.flags.inverse_concave = Some(res.clone());
        Ok(res)
    }

    /// Sampling test of monotonicity: `f(r + s) ≥ f(r) - tol` for random `r` in the cone
    /// and random positive-semidefinite `s`. Uses raw values so sign-reversed speeds can be
    /// classified at all.
    pub fn check_monotonicity(&mut self, samples: usize, tol: T, seed: u64) -> Result<ClassificationResult> {
        if samples == 0 {
            return Err(Error::InvalidInput("samples must be at least 1".into()));
        }
        let n = self.dimension;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(SymMatrix<T>, SymMatrix<T>)> = (0..samples)
            .map(|_| {
                let r = random_spd(&mut rng, n);
                let s = random_psd(&mut rng, n);
                (r, s)
            })
            .collect();
        let drops: Vec<T> = pairs
            .par_iter()
            .map(|(r, s)| {
                let base = self.kind.value(&r.eigenvalues());
                let bumped = self.kind.value(&r.add(s).eigenvalues());
                base - bumped
            })
            .collect();
        let mut worst: Option<(usize, T)> = None;
        for (i, &d) in drops.iter().enumerate() {
            if worst.is_none_or(|w| d > w.1) {
                worst = Some((i, d));
            }
        }
        let (index, violation) = worst.expect("samples >= 1");
        let pass = violation <= tol;
        let res = ClassificationResult {
            verdict: Verdict::from_pass(pass),
            witness: (!pass).then(|| Witness {
                index,
                first: matrix_to_vec(&pairs[index].0),
                second: matrix_to_vec(&pairs[index].1),
                lambda: None,
                violation: violation.to_f64_lossy(),
                midpoint_violation: None,
            }),
            samples,
            tol: tol.to_f64_lossy(),
            seed,
        };
        self.flags.monotone = Some(res.clone());
        Ok(res)
    }

    /// One-variable inverse-concavity test by second differences of `x ↦ 1/f(1/x)` on a
    /// log-spaced grid. Only defined for `dimension == 1`.
    pub fn scalar_dual_second_difference(&self, lo: T, hi: T, samples: usize, tol: T) -> Result<Verdict> {
        self.check_dim(1)?;
        let m = samples.max(3);
        let (llo, lhi) = (lo.ln(), hi.ln());
        let xs: Vec<T> = (0..m)
            .map(|k| (llo + (lhi - llo) * T::from_usize(k).unwrap() / T::from_usize(m - 1).unwrap()).exp())
            .collect();
        let dual = |x: T| -> Result<T> { Ok(T::one() / self.checked_value(&[T::one() / x])?) };
        for w in xs.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            // concavity on a nonuniform stencil: chord through a and c lies below f(b)
            let lam = (c - b) / (c - a);
            let chord = lam * dual(a)? + (T::one() - lam) * dual(c)?;
            if chord - dual(b)? > tol {
                return Ok(Verdict::Fail);
            }
        }
        Ok(Verdict::Pass)
    }
}

/// `x^alpha`, using repeated multiplication for small integer exponents.
#[inline]
fn pow_alpha<T: Real>(x: T, alpha: T) -> T {
    if alpha == T::one() {
        x
    } else if alpha.fract() == T::zero() && alpha <= lit(8.0) {
        x.powi(alpha.to_i32().unwrap_or(1))
    } else {
        x.powf(alpha)
    }
}

fn matrix_to_vec<T: Real>(m: &SymMatrix<T>) -> Vec<f64> {
    let n = m.dim();
    (0..n * n).map(|k| m.get(k / n, k % n).to_f64_lossy()).collect()
}

fn random_orthogonal<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    // Gram-Schmidt on a Gaussian matrix
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let nrm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nrm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= nrm);
            cols.push(v);
        }
    }
    let mut q = vec![T::zero(); n * n];
    for (k, c) in cols.iter().enumerate() {
        for i in 0..n {
            q[i * n + k] = lit(c[i]);
        }
    }
    q
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random SPD matrix with log-uniform eigenvalues in `[e^-2, e^2]`.
pub fn random_spd<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix<T> {
    let q = random_orthogonal::<T>(rng, n);
    let eig: Vec<T> = (0..n).map(|_| lit(rng.random_range(-2.0f64..2.0).exp())).collect();
    SymMatrix::from_spectral(&q, &eig)
}

/// Random positive-semidefinite perturbation (rank between 1 and n).
pub fn random_psd<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix<T> {
    let q = random_orthogonal::<T>(rng, n);
    let rank = rng.random_range(1..=n);
    let eig: Vec<T> = (0..n)
        .map(|k| if k < rank { lit(rng.random_range(0.0f64..3.0)) } else { T::zero() })
        .collect();
    SymMatrix::from_spectral(&q, &eig)
}

/// `count` random segments followed by `n` deterministic axis-aligned ones.
pub fn sample_segments<T: Real>(n: usize, count: usize, samples: usize, seed: u64) -> Vec<ConeSegment<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segs: Vec<ConeSegment<T>> = (0..count)
        .map(|_| ConeSegment::new(random_spd(&mut rng, n), random_spd(&mut rng, n), samples))
        .collect();
    for axis in 0..n {
        let mut a = vec![T::one(); n];
        let mut b = vec![T::one(); n];
        a[axis] = lit(0.1);
        b[axis] = lit(10.0);
        b[(axis + 1) % n] = b[(axis + 1) % n] * lit(0.5);
        segs.push(ConeSegment::new(SymMatrix::diag(&a), SymMatrix::diag(&b), samples));
    }
    segs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, n: usize) -> SpeedSpec<f64> {
        SpeedSpec::builtin(name, n, 1.0, None).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let r = SymMatrix::diag(&[1.0, 2.0]);
        assert_eq!(spec("mean", 2).evaluate(&r).unwrap(), 3.0);
        assert_eq!(spec("gauss", 2).evaluate(&r).unwrap(), 2.0);
        assert_eq!(spec("curvature", 1).evaluate(&SymMatrix::diag(&[2.0])).unwrap(), 2.0);
    }

    #[test]
    fn dual_examples() {
        let r = SymMatrix::diag(&[1.0, 2.0]);
        assert!((spec("mean", 2).dual_evaluate(&r).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(spec("curvature", 1).dual_evaluate(&SymMatrix::diag(&[0.37])).unwrap(), 0.37);
        let h = spec("harmonic", 2).dual_evaluate(&SymMatrix::diag(&[1.0, 3.0])).unwrap();
        assert!((h - 4.0).abs() < 1e-14);
    }

    #[test]
    fn non_positive_curvature_is_rejected() {
        let r = SymMatrix::diag(&[1.0, 0.0]);
        assert!(matches!(spec("mean", 2).evaluate(&r), Err(Error::NonPositiveCurvature { .. })));
        assert!(matches!(spec("mean", 2).dual_evaluate(&r), Err(Error::NonPositiveCurvature { .. })));
    }

    #[test]
    fn neg_mean_fails_positivity() {
        let r = SymMatrix::diag(&[1.0, 1.0]);
        assert!(matches!(spec("neg_mean", 2).evaluate(&r), Err(Error::NonPositiveSpeed { .. })));
    }

    #[test]
    fn power_mean_parameter_range() {
        assert!(SpeedSpec::<f64>::builtin("power_mean", 2, 1.0, Some(1.5)).is_err());
        assert!(SpeedSpec::<f64>::builtin("power_mean", 2, 1.0, None).is_err());
        let g = SpeedSpec::<f64>::builtin("power_mean", 2, 1.0, Some(0.0)).unwrap();
        let v = g.evaluate(&SymMatrix::diag(&[1.0, 4.0])).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kappa_is_inverse_concave_with_zero_violation() {
        let mut s = spec("curvature", 1);
        // f_* is linear, so only rounding error can show up
        let res = s.classify_inverse_concavity(200, 9, 1e-13, 3).unwrap();
        assert_eq!(res.verdict, Verdict::Pass);
    }

    #[test]
    fn min_curvature_fails_inverse_concavity() {
        let mut s = spec("min_curvature", 2);
        let res = s.classify_inverse_concavity(500, 9, 1e-9, 11).unwrap();
        assert_eq!(res.verdict, Verdict::Fail);
        assert!(res.witness.unwrap().violation > 1e-6);
    }

    #[test]
    fn monotonicity_examples() {
        assert!(spec("mean", 2).check_monotonicity(2000, 1e-12, 1).unwrap().verdict.passed());
        assert!(spec("gauss", 2).check_monotonicity(2000, 1e-12, 1).unwrap().verdict.passed());
        let res = spec("neg_mean", 2).check_monotonicity(100, 1e-12, 1).unwrap();
        assert_eq!(res.verdict, Verdict::Fail);
        assert!(res.witness.is_some());
    }

    #[test]
    fn solver_speeds_are_strictly_increasing() {
        let s = SpeedSpec::builtin("curvature", 1, 1.0 / 3.0, None).unwrap();
        s.require_strictly_increasing_1d(1e-3, 1e3, 50).unwrap();
        let neg = SpeedSpec::builtin("neg_mean", 1, 1.0, None).unwrap();
        assert!(neg.require_strictly_increasing_1d(1e-3, 1e3, 50).is_err());
    }

    #[test]
    fn realized_derivative_matches_finite_difference() {
        let s = SpeedSpec::builtin("curvature", 1, 3.0, None).unwrap().dual().dual();
        let (f, df) = s.realized_with_derivative_1d(1.7).unwrap();
        let h = 1e-6;
        let fd = (s.realized_1d(1.7 + h).unwrap() - s.realized_1d(1.7 - h).unwrap()) / (2.0 * h);
        assert!((f - 1.7f64.powi(3)).abs() < 1e-12);
        assert!((df - fd).abs() < 1e-6);
    }
}

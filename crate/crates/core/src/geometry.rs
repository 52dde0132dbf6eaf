//! Convex plane curves represented by their support function `h(θ)` sampled on a uniform
//! angular grid `θ_j = 2πj/N`, measured from a fixed origin.
//!
//! The outward normal at parameter θ is `ν = (cos θ, sin θ)`, the boundary point is
//! `origin + h ν + h' T` with `T = (-sin θ, cos θ)`, and the radius of curvature is
//! `ρ = h'' + h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, lit, Point, Real};
use crate::spectral::{derivatives, second_derivative, DiffScheme};

/// Radius-of-curvature floor below which a curve is considered to have lost convexity.
pub const RHO_FLOOR: f64 = 1e-12;

/// Points whose support residual `max_j [x·ν_j - h_j]` lies in `[-MEMBERSHIP_TIE, 0]`
/// are classified as outside.
pub const MEMBERSHIP_TIE: f64 = 1e-12;

/// Smallest and largest admissible angular grid sizes.
pub const MIN_THETA_COUNT: usize = 64;
pub const MAX_THETA_COUNT: usize = 2048;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SupportCurve<T> {
    h: Vec<T>,
    origin: Point<T>,
    scheme: DiffScheme,
}

/// A point of the curve with its outward normal and curvature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPoint<T> {
    pub position: Point<T>,
    pub normal: Point<T>,
    pub curvature: T,
    pub theta: T,
}

#[inline]
pub fn unit_normal<T: Real>(theta: T) -> Point<T> {
    [theta.cos(), theta.sin()]
}

#[inline]
pub fn unit_tangent<T: Real>(theta: T) -> Point<T> {
    [-theta.sin(), theta.cos()]
}

pub fn theta_grid<T: Real>(n: usize) -> Vec<T> {
    let nn = T::from_usize(n).unwrap();
    (0..n).map(|j| T::TAU() * T::from_usize(j).unwrap() / nn).collect()
}

impl<T: Real> SupportCurve<T> {
    /// Wraps samples of a support function. Fails if the grid size is not a power of two in
    /// `[64, 2048]` or if the curve is not strictly convex.
    pub fn new(h: Vec<T>, origin: Point<T>, scheme: DiffScheme) -> Result<Self> {
        let n = h.len();
        if !n.is_power_of_two() || !(MIN_THETA_COUNT..=MAX_THETA_COUNT).contains(&n) {
            return Err(Error::InvalidGrid(format!(
                "theta_count must be a power of two in [{MIN_THETA_COUNT}, {MAX_THETA_COUNT}], got {n}"
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("support function has non-finite samples".into()));
        }
        let curve = Self { h, origin, scheme };
        curve.check_convex()?;
        Ok(curve)
    }

    /// Builds without the convexity check. Used inside time stepping, where the check is
    /// done on the radius of curvature that is computed anyway.
    pub(crate) fn new_unchecked(h: Vec<T>, origin: Point<T>, scheme: DiffScheme) -> Self {
        Self { h, origin, scheme }
    }

    pub fn circle(radius: T, center: Point<T>, n: usize, scheme: DiffScheme) -> Result<Self> {
        Self::new(vec![radius; n], center, scheme)
    }

    /// Axis-aligned ellipse with semi-axes `a` (x) and `b` (y) centred at `center`, whose
    /// support function is measured from the centre.
    pub fn ellipse(a: T, b: T, center: Point<T>, n: usize, scheme: DiffScheme) -> Result<Self> {
        let h = theta_grid::<T>(n)
            .into_iter()
            .map(|t| (a * a * t.cos().powi(2) + b * b * t.sin().powi(2)).sqrt())
            .collect();
        Self::new(h, center, scheme)
    }

    /// `h(θ) = Σ_k c_k cos kθ + s_k sin kθ` (index `k` starting at 0; `s_0` is ignored).
    pub fn fourier(cos: &[T], sin: &[T], origin: Point<T>, n: usize, scheme: DiffScheme) -> Result<Self> {
        let h = theta_grid::<T>(n)
            .into_iter()
            .map(|t| {
                let c: T = cos
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c * (T::from_usize(k).unwrap() * t).cos())
                    .sum();
                let s: T = sin
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, &s)| s * (T::from_usize(k).unwrap() * t).sin())
                    .sum();
                c + s
            })
            .collect();
        Self::new(h, origin, scheme)
    }

    #[inline]
    pub fn theta_count(&self) -> usize {
        self.h.len()
    }

    #[inline]
    pub fn h(&self) -> &[T] {
        &self.h
    }

    #[inline]
    pub fn origin(&self) -> Point<T> {
        self.origin
    }

    #[inline]
    pub fn scheme(&self) -> DiffScheme {
        self.scheme
    }

    #[inline]
    pub fn theta(&self, j: usize) -> T {
        T::TAU() * T::from_usize(j).unwrap() / T::from_usize(self.h.len()).unwrap()
    }

    #[inline]
    pub fn normal(&self, j: usize) -> Point<T> {
        unit_normal(self.theta(j))
    }

    #[inline]
    pub fn tangent(&self, j: usize) -> Point<T> {
        unit_tangent(self.theta(j))
    }

    /// `(h', h'')` on the grid.
    pub fn theta_derivatives(&self) -> (Vec<T>, Vec<T>) {
        derivatives(&self.h, self.scheme)
    }

    /// Radius of curvature `h'' + h` at every node (no convexity check).
    pub fn radii_of_curvature(&self) -> Vec<T> {
        let d2 = second_derivative(&self.h, self.scheme);
        d2.iter().zip(&self.h).map(|(&a, &b)| a + b).collect()
    }

    fn check_rho(rho: &[T]) -> Result<()> {
        let floor = lit::<T>(RHO_FLOOR);
        match rho.iter().enumerate().find(|(_, r)| !(**r > floor)) {
            Some((node, r)) => Err(Error::ConvexityLost { node, rho: r.to_f64_lossy() }),
            None => Ok(()),
        }
    }

    pub fn check_convex(&self) -> Result<()> {
        Self::check_rho(&self.radii_of_curvature())
    }

    /// Curvature `1 / (h'' + h)` at every node.
    pub fn curvatures(&self) -> Result<Vec<T>> {
        let rho = self.radii_of_curvature();
        Self::check_rho(&rho)?;
        Ok(rho.into_iter().map(|r| T::one() / r).collect())
    }

    pub fn curvature(&self, j: usize) -> Result<T> {
        Ok(self.curvatures()?[j])
    }

    pub fn boundary_point(&self, j: usize) -> Result<BoundaryPoint<T>> {
        let (d1, d2) = self.theta_derivatives();
        let rho = d2[j] + self.h[j];
        if !(rho > lit(RHO_FLOOR)) {
            return Err(Error::ConvexityLost { node: j, rho: rho.to_f64_lossy() });
        }
        Ok(self.point_from(j, self.h[j], d1[j], T::one() / rho))
    }

    /// All boundary points.
    pub fn boundary_points(&self) -> Result<Vec<BoundaryPoint<T>>> {
        let (d1, d2) = self.theta_derivatives();
        let rho: Vec<T> = d2.iter().zip(&self.h).map(|(&a, &b)| a + b).collect();
        Self::check_rho(&rho)?;
        Ok((0..self.h.len()).map(|j| self.point_from(j, self.h[j], d1[j], T::one() / rho[j])).collect())
    }

    fn point_from(&self, j: usize, h: T, dh: T, kappa: T) -> BoundaryPoint<T> {
        let theta = self.theta(j);
        let nu = unit_normal(theta);
        let tau = unit_tangent(theta);
        BoundaryPoint {
            position: [
                self.origin[0] + h * nu[0] + dh * tau[0],
                self.origin[1] + h * nu[1] + dh * tau[1],
            ],
            normal: nu,
            curvature: kappa,
            theta,
        }
    }

    /// First and second arc-length derivatives of a nodal field, using `ds = ρ dθ`.
    pub fn arclength_derivatives(&self, field: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if field.len() != self.h.len() {
            return Err(Error::DimensionMismatch { expected: self.h.len(), got: field.len() });
        }
        let rho = self.radii_of_curvature();
        Self::check_rho(&rho)?;
        let (ft, _) = derivatives(field, self.scheme);
        let first: Vec<T> = ft.iter().zip(&rho).map(|(&a, &r)| a / r).collect();
        let (fst, _) = derivatives(&first, self.scheme);
        let second = fst.iter().zip(&rho).map(|(&a, &r)| a / r).collect();
        Ok((first, second))
    }

    /// `max_j [x·ν_j - h_j]` for `x` relative to the origin; negative inside.
    pub fn support_residual(&self, x: Point<T>) -> T {
        let rel = [x[0] - self.origin[0], x[1] - self.origin[1]];
        (0..self.h.len())
            .map(|j| dot(rel, self.normal(j)) - self.h[j])
            .fold(T::neg_infinity(), T::max)
    }

    /// Strict membership; the boundary and the tie band count as outside.
    pub fn contains(&self, x: Point<T>) -> bool {
        self.support_residual(x) < -lit::<T>(MEMBERSHIP_TIE)
    }

    /// Area `(1/2) ∮ (h² - h'²) dθ`.
    pub fn area(&self) -> T {
        let (d1, _) = self.theta_derivatives();
        let dtheta = T::TAU() / T::from_usize(self.h.len()).unwrap();
        let sum: T = self.h.iter().zip(&d1).map(|(&h, &d)| h * h - d * d).sum();
        lit::<T>(0.5) * sum * dtheta
    }

    /// Perimeter `∮ h dθ`.
    pub fn perimeter(&self) -> T {
        let dtheta = T::TAU() / T::from_usize(self.h.len()).unwrap();
        self.h.iter().copied().sum::<T>() * dtheta
    }

    /// Steiner point `origin + (1/π) ∮ h ν dθ`.
    pub fn steiner_point(&self) -> Point<T> {
        let n = self.h.len();
        let dtheta = T::TAU() / T::from_usize(n).unwrap();
        let mut acc = [T::zero(), T::zero()];
        for j in 0..n {
            let nu = self.normal(j);
            acc[0] = acc[0] + self.h[j] * nu[0];
            acc[1] = acc[1] + self.h[j] * nu[1];
        }
        let c = dtheta / T::PI();
        [self.origin[0] + acc[0] * c, self.origin[1] + acc[1] * c]
    }

    /// Distance from the Steiner point to the nearest support line; a lower bound for the
    /// inradius that is exact for discs.
    pub fn inradius_estimate(&self) -> T {
        let s = self.steiner_point();
        let rel = [s[0] - self.origin[0], s[1] - self.origin[1]];
        (0..self.h.len())
            .map(|j| self.h[j] - dot(rel, self.normal(j)))
            .fold(T::infinity(), T::min)
    }

    /// Same curve, support function measured from `origin + v`.
    pub fn with_origin_shift(&self, v: Point<T>) -> Self {
        let h = (0..self.h.len()).map(|j| self.h[j] - dot(v, self.normal(j))).collect();
        Self {
            h,
            origin: [self.origin[0] + v[0], self.origin[1] + v[1]],
            scheme: self.scheme,
        }
    }

    /// Dilation by `lambda` about the origin.
    pub fn scaled(&self, lambda: T) -> Self {
        Self {
            h: self.h.iter().map(|&v| v * lambda).collect(),
            origin: self.origin,
            scheme: self.scheme,
        }
    }

    /// Axis-aligned bounding box `([xmin, ymin], [xmax, ymax])`.
    pub fn bounding_box(&self) -> Result<(Point<T>, Point<T>)> {
        let pts = self.boundary_points()?;
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in &pts {
            for a in 0..2 {
                lo[a] = lo[a].min(p.position[a]);
                hi[a] = hi[a].max(p.position[a]);
            }
        }
        Ok((lo, hi))
    }
}

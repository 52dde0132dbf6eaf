//! Arrival time `u` of a contracting flow on a Cartesian grid, transformed fields
//! `w = φ(u)`, and the finite-difference machinery (gradients, Hessians, level-set
//! curvature, level-set residual, gradient identity) the verifiers are built on.
//!
//! A point `x` is reached at the time `t` where the support gap
//! `g(t) = max_θ [x·ν(θ) - h(θ, t)]` crosses zero. Between snapshots `h` is interpolated
//! by cubic Hermite in time (using `∂ₜh = -F`) and trigonometrically in θ; the crossing is
//! found by a Newton solve on `(θ, t)` for
//! `x·ν - h = 0`, `x·T - h_θ = 0`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::geometry::{unit_normal, unit_tangent, MEMBERSHIP_TIE};
use crate::linalg::{sym2_eigenvalues, Mat2};
use crate::scalar::{dot, lit, Point, Real};
use crate::spectral::{second_derivative, TrigSeries};
use crate::speed::SpeedSpec;

/// Uniform node-centred Cartesian grid. Node `(i, j)` sits at `origin + (i dx, j dy)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Grid<T> {
    pub origin: Point<T>,
    pub dx: T,
    pub dy: T,
    pub nx: usize,
    pub ny: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(origin: Point<T>, dx: T, dy: T, nx: usize, ny: usize) -> Result<Self> {
        if !(dx > T::zero() && dy > T::zero()) || nx < 8 || ny < 8 {
            return Err(Error::InvalidGrid(format!("bad grid {nx}x{ny} with spacing ({dx}, {dy})")));
        }
        Ok(Self { origin, dx, dy, nx, ny })
    }

    /// Square-celled grid covering `[lo, hi]` plus `margin` cells, with `anchor` on a node.
    pub fn covering(lo: Point<T>, hi: Point<T>, dx: T, margin: usize, anchor: Point<T>) -> Result<Self> {
        let m = T::from_usize(margin).unwrap();
        let start = |a: usize| anchor[a] - ((anchor[a] - lo[a]) / dx).ceil() * dx - m * dx;
        let origin = [start(0), start(1)];
        let count = |a: usize| ((hi[a] - origin[a]) / dx).ceil().to_usize().unwrap_or(0) + margin + 1;
        Self::new(origin, dx, dx, count(0), count(1))
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point<T> {
        [
            self.origin[0] + T::from_usize(i).unwrap() * self.dx,
            self.origin[1] + T::from_usize(j).unwrap() * self.dy,
        ]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smaller of the two spacings.
    pub fn spacing(&self) -> T {
        self.dx.min(self.dy)
    }
}

/// How the grid is sized from the initial curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Square cells of the given spacing.
    Spacing { dx: f64 },
    /// Number of cells across the bounding box in x.
    Cells { nx: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMask {
    Interior,
    BoundaryLayer,
    ExtinctionBall,
    Exterior,
}

impl CellMask {
    /// Cells whose values finite-difference stencils and interpolation may read.
    #[inline]
    pub fn readable(self) -> bool {
        matches!(self, CellMask::Interior | CellMask::BoundaryLayer)
    }

    fn code(self) -> u8 {
        match self {
            CellMask::Interior => 0,
            CellMask::BoundaryLayer => 1,
            CellMask::ExtinctionBall => 2,
            CellMask::Exterior => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StencilOrder {
    Second,
    #[default]
    Fourth,
}

impl StencilOrder {
    pub fn reach(self) -> usize {
        match self {
            StencilOrder::Second => 1,
            StencilOrder::Fourth => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    /// Tensor-product 4-point Lagrange (exact on bicubic polynomials).
    #[default]
    Bicubic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct ArrivalOptions<T> {
    pub grid: GridSpec,
    /// Width of the boundary layer, in cells.
    pub boundary_layer_cells: T,
    /// Exclusion radius around the extinction point; `None` means
    /// `max(5 Δx, 0.02 × initial inradius)`.
    pub r_excl: Option<T>,
    pub stencil: StencilOrder,
    pub interpolation: Interpolation,
    /// `|Du|` below this is treated as degenerate.
    pub gradient_floor: T,
}

impl<T: Real> Default for ArrivalOptions<T> {
    fn default() -> Self {
        Self {
            grid: GridSpec::Spacing { dx: 1.0 / 128.0 },
            boundary_layer_cells: lit(2.0),
            r_excl: None,
            stencil: StencilOrder::Fourth,
            interpolation: Interpolation::Bicubic,
            gradient_floor: lit(1e-8),
        }
    }
}

/// Arrival time sampled on a grid.
#[derive(Clone, Debug)]
pub struct ArrivalField<T> {
    pub grid: Grid<T>,
    /// `t0` on exterior cells.
    pub u: Vec<T>,
    pub mask: Vec<CellMask>,
    pub t0: T,
    pub t_ext: T,
    pub p_ext: Point<T>,
    pub alpha: T,
    pub r_excl: T,
    pub stencil: StencilOrder,
    pub interpolation: Interpolation,
    pub gradient_floor: T,
}

/// Gradient and Hessian at a node or point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivatives<T> {
    pub grad: Point<T>,
    pub hess: Mat2<T>,
}

impl<T: Real> Derivatives<T> {
    pub fn grad_norm(&self) -> T {
        self.grad[0].hypot(self.grad[1])
    }

    /// Largest Hessian eigenvalue.
    pub fn max_eigenvalue(&self) -> T {
        sym2_eigenvalues(self.hess[0][0], self.hess[0][1], self.hess[1][1]).1
    }

    /// `-(T·D²·T)/|D|` with `T` the unit vector perpendicular to the gradient: the
    /// curvature of the level line through the point, positive for convex sublevel
    /// complements (i.e. for superlevel sets that are convex).
    pub fn level_set_curvature(&self, floor: T) -> Option<T> {
        let g = self.grad_norm();
        if !(g > floor) {
            return None;
        }
        let t = [-self.grad[1] / g, self.grad[0] / g];
        let tht = t[0] * (self.hess[0][0] * t[0] + self.hess[0][1] * t[1])
            + t[1] * (self.hess[1][0] * t[0] + self.hess[1][1] * t[1]);
        Some(-tht / g)
    }

    fn scaled_sum(parts: &[(T, &Self)]) -> Self {
        let mut out = Self { grad: [T::zero(); 2], hess: [[T::zero(); 2]; 2] };
        for (w, d) in parts {
            for a in 0..2 {
                out.grad[a] = out.grad[a] + *w * d.grad[a];
                for b in 0..2 {
                    out.hess[a][b] = out.hess[a][b] + *w * d.hess[a][b];
                }
            }
        }
        out
    }
}

/// Which monotone transform of `u` a [`TransformedField`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// `w = ((1+α)(u - t0))^{1/(1+α)}`.
    SqrtPower,
    /// `log(u - t0)`.
    Log,
    /// `u` itself.
    Raw,
}

/// How derivatives of a transformed field are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianRoute {
    /// Finite differences applied to the transformed values.
    Direct,
    /// Finite differences of `u`, then the chain rule `D²w = φ' D²u + φ'' Du⊗Du`.
    #[default]
    ChainRule,
}

/// `w = φ(u)` on the grid of an [`ArrivalField`]. Unreadable cells hold NaN, except that
/// `SqrtPower` and `Raw` hold `0` / `t0` on the exterior.
#[derive(Clone, Debug)]
pub struct TransformedField<'a, T> {
    pub kind: TransformKind,
    pub values: Vec<T>,
    pub source: &'a ArrivalField<T>,
}

impl<T: Real> ArrivalField<T> {
    /// Builds a field from closed forms: `u(x)` and a signed distance to the domain
    /// boundary (positive inside). Used for analytic oracles and synthetic test inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fn(
        grid: Grid<T>,
        t0: T,
        t_ext: T,
        p_ext: Point<T>,
        alpha: T,
        r_excl: T,
        opts: &ArrivalOptions<T>,
        u: impl Fn(Point<T>) -> T + Sync,
        distance: impl Fn(Point<T>) -> T + Sync,
    ) -> Self {
        let layer = opts.boundary_layer_cells * grid.spacing();
        let (vals, mask): (Vec<T>, Vec<CellMask>) = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx % grid.nx, idx / grid.nx);
                let d = distance(x);
                classify(x, d, layer, p_ext, r_excl, || u(x), t0)
            })
            .unzip();
        Self {
            grid,
            u: vals,
            mask,
            t0,
            t_ext,
            p_ext,
            alpha,
            r_excl,
            stencil: opts.stencil,
            interpolation: opts.interpolation,
            gradient_floor: opts.gradient_floor,
        }
    }

    /// Reconstructs the arrival time of a completed trajectory.
    pub fn reconstruct(traj: &FlowTrajectory<T>, opts: &ArrivalOptions<T>) -> Result<Self> {
        traj.require_completed()?;
        let index = ArrivalIndex::new(traj);
        let initial = &traj.initial().curve;
        let (lo, hi) = initial.bounding_box()?;
        let dx = match opts.grid {
            GridSpec::Spacing { dx } => lit::<T>(dx),
            GridSpec::Cells { nx } => {
                if nx < 8 {
                    return Err(Error::InvalidGrid(format!("grid_nx = {nx} is too small")));
                }
                (hi[0] - lo[0]) / T::from_usize(nx).unwrap()
            }
        };
        let margin = opts.stencil.reach() + 2;
        let grid = Grid::covering(lo, hi, dx, margin, initial.origin())?;
        let r_excl = opts
            .r_excl
            .unwrap_or_else(|| (lit::<T>(5.0) * dx).max(lit::<T>(0.02) * traj.initial_inradius));
        let layer = opts.boundary_layer_cells * grid.spacing();

        let cells: Vec<Result<(T, CellMask)>> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx % grid.nx, idx / grid.nx);
                let (g0, _) = index.snapshot_gap(0, x, None);
                if g0 >= -lit::<T>(MEMBERSHIP_TIE) {
                    return Ok((traj.t0, CellMask::Exterior));
                }
                let t = index.arrival_time(x)?;
                Ok(classify(x, -g0, layer, traj.p_ext, r_excl, || t, traj.t0))
            })
            .collect();
        let mut u = Vec::with_capacity(grid.len());
        let mut mask = Vec::with_capacity(grid.len());
        for c in cells {
            let (v, m) = c?;
            u.push(v);
            mask.push(m);
        }
        Ok(Self {
            grid,
            u,
            mask,
            t0: traj.t0,
            t_ext: traj.t_ext,
            p_ext: traj.p_ext,
            alpha: traj.alpha(),
            r_excl,
            stencil: opts.stencil,
            interpolation: opts.interpolation,
            gradient_floor: opts.gradient_floor,
        })
    }

    #[inline]
    pub fn mask_at(&self, i: usize, j: usize) -> CellMask {
        self.mask[self.grid.index(i, j)]
    }

    /// Cell counts per mask class `[interior, boundary_layer, extinction_ball, exterior]`.
    pub fn mask_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for m in &self.mask {
            c[m.code() as usize] += 1;
        }
        c
    }

    /// Interior node whose whole stencil is readable.
    pub fn is_valid_node(&self, i: usize, j: usize) -> bool {
        let r = self.stencil.reach();
        if i < r || j < r || i + r >= self.grid.nx || j + r >= self.grid.ny {
            return false;
        }
        if self.mask_at(i, j) != CellMask::Interior {
            return false;
        }
        for jj in j - r..=j + r {
            for ii in i - r..=i + r {
                if !self.mask_at(ii, jj).readable() {
                    return false;
                }
            }
        }
        true
    }

    /// Valid nodes in index order.
    pub fn valid_nodes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                if self.is_valid_node(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Finite-difference derivatives of `values` at a valid node.
    pub fn node_derivatives(&self, values: &[T], i: usize, j: usize) -> Derivatives<T> {
        let g = &self.grid;
        let at = |di: isize, dj: isize| {
            values[g.index((i as isize + di) as usize, (j as isize + dj) as usize)]
        };
        let (dx, dy) = (g.dx, g.dy);
        match self.stencil {
            StencilOrder::Second => {
                let two = lit::<T>(2.0);
                let four = lit::<T>(4.0);
                let c = at(0, 0);
                let ux = (at(1, 0) - at(-1, 0)) / (two * dx);
                let uy = (at(0, 1) - at(0, -1)) / (two * dy);
                let uxx = (at(1, 0) - two * c + at(-1, 0)) / (dx * dx);
                let uyy = (at(0, 1) - two * c + at(0, -1)) / (dy * dy);
                let uxy = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (four * dx * dy);
                Derivatives { grad: [ux, uy], hess: [[uxx, uxy], [uxy, uyy]] }
            }
            StencilOrder::Fourth => {
                let w1 = [lit::<T>(1.0 / 12.0), lit(-8.0 / 12.0), T::zero(), lit(8.0 / 12.0), lit(-1.0 / 12.0)];
                let w2 = [
                    lit::<T>(-1.0 / 12.0),
                    lit(16.0 / 12.0),
                    lit(-30.0 / 12.0),
                    lit(16.0 / 12.0),
                    lit(-1.0 / 12.0),
                ];
                let mut ux = T::zero();
                let mut uy = T::zero();
                let mut uxx = T::zero();
                let mut uyy = T::zero();
                let mut uxy = T::zero();
                for a in 0..5 {
                    let da = a as isize - 2;
                    ux = ux + w1[a] * at(da, 0);
                    uy = uy + w1[a] * at(0, da);
                    uxx = uxx + w2[a] * at(da, 0);
                    uyy = uyy + w2[a] * at(0, da);
                    for b in 0..5 {
                        if w1[a] != T::zero() && w1[b] != T::zero() {
                            uxy = uxy + w1[a] * w1[b] * at(da, b as isize - 2);
                        }
                    }
                }
                Derivatives {
                    grad: [ux / dx, uy / dy],
                    hess: [[uxx / (dx * dx), uxy / (dx * dy)], [uxy / (dx * dy), uyy / (dy * dy)]],
                }
            }
        }
    }

    /// Derivatives of `u` at a node; `None` if the node is not valid.
    pub fn derivatives_at_node(&self, i: usize, j: usize) -> Option<Derivatives<T>> {
        self.is_valid_node(i, j).then(|| self.node_derivatives(&self.u, i, j))
    }

    /// Interpolation support: lower-left node and weights in each direction.
    fn stencil_weights(&self, p: Point<T>) -> Option<(usize, usize, Vec<T>, Vec<T>)> {
        let g = &self.grid;
        let fx = (p[0] - g.origin[0]) / g.dx;
        let fy = (p[1] - g.origin[1]) / g.dy;
        if !(fx >= T::zero() && fy >= T::zero()) {
            return None;
        }
        let (ix, iy) = (fx.floor().to_usize()?, fy.floor().to_usize()?);
        let (sx, sy) = (fx - fx.floor(), fy - fy.floor());
        match self.interpolation {
            Interpolation::Bilinear => {
                if ix + 1 >= g.nx || iy + 1 >= g.ny {
                    return None;
                }
                Some((ix, iy, vec![T::one() - sx, sx], vec![T::one() - sy, sy]))
            }
            Interpolation::Bicubic => {
                if ix < 1 || iy < 1 || ix + 2 >= g.nx || iy + 2 >= g.ny {
                    return None;
                }
                Some((ix - 1, iy - 1, lagrange4(sx), lagrange4(sy)))
            }
        }
    }

    /// Interpolated `u` at an arbitrary point; `None` unless every support node is readable.
    pub fn value_at(&self, p: Point<T>) -> Option<T> {
        let (i0, j0, wx, wy) = self.stencil_weights(p)?;
        let mut acc = T::zero();
        for (b, &wyb) in wy.iter().enumerate() {
            for (a, &wxa) in wx.iter().enumerate() {
                let idx = self.grid.index(i0 + a, j0 + b);
                if !self.mask[idx].readable() {
                    return None;
                }
                acc = acc + wxa * wyb * self.u[idx];
            }
        }
        Some(acc)
    }

    /// Derivatives of `u` at a point, interpolated from valid nodes.
    pub fn derivatives_at(&self, p: Point<T>) -> Option<Derivatives<T>> {
        let (i0, j0, wx, wy) = self.stencil_weights(p)?;
        let mut parts = Vec::with_capacity(wx.len() * wy.len());
        for (b, &wyb) in wy.iter().enumerate() {
            for (a, &wxa) in wx.iter().enumerate() {
                parts.push((wxa * wyb, self.derivatives_at_node(i0 + a, j0 + b)?));
            }
        }
        let refs: Vec<(T, &Derivatives<T>)> = parts.iter().map(|(w, d)| (*w, d)).collect();
        Some(Derivatives::scaled_sum(&refs))
    }

    /// Level-set flow residual `|Du| f^α(A_x) - 1` at a valid node, where `A_x` is the
    /// curvature of the level line through the node.
    pub fn level_set_residual(&self, speed: &SpeedSpec<T>, i: usize, j: usize) -> Result<T> {
        let d = self
            .derivatives_at_node(i, j)
            .ok_or_else(|| Error::MaskedPoint { x: self.grid.node(i, j)[0].to_f64_lossy(), y: self.grid.node(i, j)[1].to_f64_lossy() })?;
        let g = d.grad_norm();
        let a = d
            .level_set_curvature(self.gradient_floor)
            .ok_or(Error::DegenerateGradient { i, j, norm: g.to_f64_lossy() })?;
        Ok(g * speed.realized_1d(a)? - T::one())
    }

    /// Level-set residual over every valid node.
    pub fn level_set_residual_sweep(&self, speed: &SpeedSpec<T>) -> Result<ResidualSweep> {
        let nodes = self.valid_nodes();
        let vals: Vec<Result<T>> = nodes.par_iter().map(|&(i, j)| self.level_set_residual(speed, i, j)).collect();
        let mut max_abs = 0.0f64;
        let mut sum = 0.0f64;
        let mut worst = None;
        for (&(i, j), v) in nodes.iter().zip(vals) {
            let r = v?.to_f64_lossy().abs();
            sum += r;
            if r > max_abs || worst.is_none() {
                max_abs = max_abs.max(r);
                worst = Some([i, j]);
            }
        }
        Ok(ResidualSweep {
            max_abs,
            mean_abs: if nodes.is_empty() { 0.0 } else { sum / nodes.len() as f64 },
            worst_cell: worst,
            cells: nodes.len(),
        })
    }

    /// Compares the finite-difference gradient of `u` with `-ν/F` at boundary points of
    /// intermediate snapshots.
    pub fn gradient_identity_residual(&self, traj: &FlowTrajectory<T>, samples: usize) -> ResidualReport {
        let picks = snapshot_samples(traj, samples);
        let errs: Vec<Option<f64>> = picks
            .par_iter()
            .map(|&(k, j)| {
                let snap = &traj.snapshots[k];
                let bp = snap.curve.boundary_point(j).ok()?;
                let d = self.derivatives_at(bp.position)?;
                let f = snap.f[j];
                let ex = [d.grad[0] + bp.normal[0] / f, d.grad[1] + bp.normal[1] / f];
                Some((f * ex[0].hypot(ex[1])).to_f64_lossy())
            })
            .collect();
        ResidualReport::from_samples(&errs)
    }

    /// Checks that `u` does not increase along rays from the extinction point to the
    /// boundary. Returns the largest increase found (0 when monotone).
    pub fn ray_monotonicity(&self, rays: usize, steps: usize) -> T {
        let h = self.grid.spacing() * lit(0.5);
        let mut worst = T::zero();
        for r in 0..rays {
            let th = T::TAU() * T::from_usize(r).unwrap() / T::from_usize(rays).unwrap();
            let dir = unit_normal(th);
            let mut prev: Option<T> = None;
            let mut s = self.r_excl;
            for _ in 0..steps {
                let p = [self.p_ext[0] + s * dir[0], self.p_ext[1] + s * dir[1]];
                match self.value_at(p) {
                    Some(v) => {
                        if let Some(pv) = prev {
                            worst = worst.max(v - pv);
                        }
                        prev = Some(v);
                    }
                    None if prev.is_some() => break,
                    None => {}
                }
                s = s + h;
            }
        }
        worst
    }

    pub fn transformed(&self, kind: TransformKind) -> TransformedField<'_, T> {
        let values = self
            .u
            .iter()
            .zip(&self.mask)
            .map(|(&u, &m)| {
                if m.readable() {
                    transform(kind, u, self.t0, self.alpha)
                } else if m == CellMask::Exterior && kind != TransformKind::Log {
                    transform(kind, self.t0, self.t0, self.alpha)
                } else {
                    T::nan()
                }
            })
            .collect();
        TransformedField { kind, values, source: self }
    }

    /// Writes `field.csv` (x, y, u, mask) and `field.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("field.csv"))?;
        w.write_record(["x", "y", "u", "mask"])?;
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let p = self.grid.node(i, j);
                let idx = self.grid.index(i, j);
                let mask = serde_json::to_value(self.mask[idx])?;
                w.write_record([
                    p[0].to_string(),
                    p[1].to_string(),
                    self.u[idx].to_string(),
                    mask.as_str().unwrap_or_default().to_string(),
                ])?;
            }
        }
        w.flush()?;
        let sidecar = FieldSidecar {
            grid: self.grid.clone(),
            t0: self.t0,
            t_ext: self.t_ext,
            p_ext: self.p_ext,
            alpha: self.alpha,
            r_excl: self.r_excl,
            stencil: self.stencil,
            interpolation: self.interpolation,
            mask_counts: self.mask_counts(),
        };
        fs::write(dir.join("field.json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(bound = "T: Real")]
struct FieldSidecar<T> {
    grid: Grid<T>,
    t0: T,
    t_ext: T,
    p_ext: Point<T>,
    alpha: T,
    r_excl: T,
    stencil: StencilOrder,
    interpolation: Interpolation,
    mask_counts: [usize; 4],
}

fn classify<T: Real>(
    x: Point<T>,
    distance: T,
    layer: T,
    p_ext: Point<T>,
    r_excl: T,
    u: impl FnOnce() -> T,
    t0: T,
) -> (T, CellMask) {
    if !(distance > lit(MEMBERSHIP_TIE)) {
        return (t0, CellMask::Exterior);
    }
    let v = u();
    let m = if distance < layer {
        CellMask::BoundaryLayer
    } else if (x[0] - p_ext[0]).hypot(x[1] - p_ext[1]) < r_excl {
        CellMask::ExtinctionBall
    } else {
        CellMask::Interior
    };
    (v, m)
}

fn lagrange4<T: Real>(s: T) -> Vec<T> {
    // nodes at -1, 0, 1, 2
    let (one, two, six) = (T::one(), lit::<T>(2.0), lit::<T>(6.0));
    vec![
        -s * (s - one) * (s - two) / six,
        (s + one) * (s - one) * (s - two) / two,
        -(s + one) * s * (s - two) / two,
        (s + one) * s * (s - one) / six,
    ]
}

/// `φ(u)` for a transform kind.
#[inline]
pub fn transform<T: Real>(kind: TransformKind, u: T, t0: T, alpha: T) -> T {
    match kind {
        TransformKind::SqrtPower => {
            let v = ((T::one() + alpha) * (u - t0)).max(T::zero());
            v.powf(T::one() / (T::one() + alpha))
        }
        TransformKind::Log => (u - t0).ln(),
        TransformKind::Raw => u,
    }
}

/// `(φ'(u), φ''(u))`.
#[inline]
pub fn transform_derivatives<T: Real>(kind: TransformKind, u: T, t0: T, alpha: T) -> (T, T) {
    match kind {
        TransformKind::SqrtPower => {
            let w = transform(kind, u, t0, alpha);
            let wa = w.powf(-alpha);
            (wa, -alpha * wa * wa / w)
        }
        TransformKind::Log => {
            let v = u - t0;
            (T::one() / v, -T::one() / (v * v))
        }
        TransformKind::Raw => (T::one(), T::zero()),
    }
}

impl<T: Real> TransformedField<'_, T> {
    /// Derivatives at a valid node by the chosen route.
    pub fn node_derivatives(&self, i: usize, j: usize, route: HessianRoute) -> Option<Derivatives<T>> {
        let f = self.source;
        if !f.is_valid_node(i, j) {
            return None;
        }
        match route {
            HessianRoute::Direct => Some(f.node_derivatives(&self.values, i, j)),
            HessianRoute::ChainRule => {
                let du = f.node_derivatives(&f.u, i, j);
                let u = f.u[f.grid.index(i, j)];
                Some(chain_rule(self.kind, u, f.t0, f.alpha, &du))
            }
        }
    }

    /// `φ(interpolated u)`.
    pub fn value_at(&self, p: Point<T>) -> Option<T> {
        let u = self.source.value_at(p)?;
        let v = transform(self.kind, u, self.source.t0, self.source.alpha);
        v.is_finite().then_some(v)
    }

    /// Curvature of the level line through a valid node.
    pub fn level_set_curvature(&self, i: usize, j: usize, route: HessianRoute) -> Result<T> {
        let f = self.source;
        let d = self.node_derivatives(i, j, route).ok_or_else(|| {
            let p = f.grid.node(i, j);
            Error::MaskedPoint { x: p[0].to_f64_lossy(), y: p[1].to_f64_lossy() }
        })?;
        d.level_set_curvature(f.gradient_floor)
            .ok_or(Error::DegenerateGradient { i, j, norm: d.grad_norm().to_f64_lossy() })
    }
}

/// `Dw = φ' Du`, `D²w = φ' D²u + φ'' Du⊗Du`.
pub fn chain_rule<T: Real>(kind: TransformKind, u: T, t0: T, alpha: T, du: &Derivatives<T>) -> Derivatives<T> {
    let (d1, d2) = transform_derivatives(kind, u, t0, alpha);
    let g = du.grad;
    let mut hess = [[T::zero(); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            hess[a][b] = d1 * du.hess[a][b] + d2 * g[a] * g[b];
        }
    }
    Derivatives { grad: [d1 * g[0], d1 * g[1]], hess }
}

/// Deterministic `(snapshot, node)` picks, spread evenly in time over `(t0, T_ext)`.
pub(crate) fn snapshot_samples<T: Real>(traj: &FlowTrajectory<T>, samples: usize) -> Vec<(usize, usize)> {
    let k = traj.snapshots.len();
    if k < 3 || samples == 0 {
        return Vec::new();
    }
    let n = traj.initial().theta_count();
    let span = traj.t_ext - traj.t0;
    let mut out = Vec::with_capacity(samples);
    let mut snap = 1;
    for s in 0..samples {
        let t = traj.t0 + span * T::from_f64((s as f64 + 0.5) / samples as f64).unwrap();
        while snap + 2 < k && traj.snapshots[snap + 1].t <= t {
            snap += 1;
        }
        out.push((snap, (s * 7919 + s / 3) % n));
    }
    out
}

/// Summary of a level-set residual sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSweep {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub worst_cell: Option<[usize; 2]>,
    pub cells: usize,
}

/// Max/mean of sampled relative errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub samples_used: usize,
    pub skipped: usize,
}

impl ResidualReport {
    pub(crate) fn from_samples(errs: &[Option<f64>]) -> Self {
        let used: Vec<f64> = errs.iter().flatten().copied().collect();
        Self {
            max_rel: used.iter().copied().fold(0.0, f64::max),
            mean_rel: if used.is_empty() { 0.0 } else { used.iter().sum::<f64>() / used.len() as f64 },
            samples_used: used.len(),
            skipped: errs.len() - used.len(),
        }
    }
}

/// Quintic Hermite basis on `[0, 1]` and its s-derivative, ordered as weights for
/// `[p0, p0', p0'', p1, p1', p1'']` (derivatives already scaled to unit interval).
fn quintic_hermite<T: Real>(s: T) -> ([T; 6], [T; 6]) {
    let c = |v: f64| lit::<T>(v);
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let b = [
        T::one() - c(10.0) * s3 + c(15.0) * s4 - c(6.0) * s5,
        s - c(6.0) * s3 + c(8.0) * s4 - c(3.0) * s5,
        c(0.5) * s2 - c(1.5) * s3 + c(1.5) * s4 - c(0.5) * s5,
        c(10.0) * s3 - c(15.0) * s4 + c(6.0) * s5,
        -c(4.0) * s3 + c(7.0) * s4 - c(3.0) * s5,
        c(0.5) * s3 - s4 + c(0.5) * s5,
    ];
    let d = [
        -c(30.0) * s2 + c(60.0) * s3 - c(30.0) * s4,
        T::one() - c(18.0) * s2 + c(32.0) * s3 - c(15.0) * s4,
        s - c(4.5) * s2 + c(6.0) * s3 - c(2.5) * s4,
        c(30.0) * s2 - c(60.0) * s3 + c(30.0) * s4,
        -c(12.0) * s2 + c(28.0) * s3 - c(15.0) * s4,
        c(1.5) * s2 - c(4.0) * s3 + c(2.5) * s4,
    ];
    (b, d)
}

/// Per-trajectory lookup structure for point queries of the arrival time.
pub struct ArrivalIndex<'a, T> {
    traj: &'a FlowTrajectory<T>,
    times: Vec<T>,
    h_series: Vec<TrigSeries<T>>,
    f_series: Vec<TrigSeries<T>>,
    dtf_series: Vec<TrigSeries<T>>,
    theta_rates: Vec<Vec<T>>,
    normals: Vec<Point<T>>,
    /// Per snapshot, `max|h''|`: bounds how far a nodal maximum undershoots the true one.
    curvature_bound: Vec<T>,
    origin: Point<T>,
    dtheta: T,
}

struct SeriesEval<T> {
    h: T,
    h1: T,
    h2: T,
}

impl<'a, T: Real> ArrivalIndex<'a, T> {
    pub fn new(traj: &'a FlowTrajectory<T>) -> Self {
        let first = &traj.initial().curve;
        let n = first.theta_count();
        // ∂ₜF at fixed normal angle; the stored ∂ₜF follows normal trajectories
        let theta_rates: Vec<Vec<T>> = traj
            .snapshots
            .iter()
            .map(|s| (0..n).map(|j| s.dt_f[j] - s.f_s[j] * s.f_s[j] / s.kappa[j]).collect())
            .collect();
        Self {
            traj,
            times: traj.snapshots.iter().map(|s| s.t).collect(),
            h_series: traj.snapshots.iter().map(|s| TrigSeries::from_samples(s.curve.h())).collect(),
            f_series: traj.snapshots.iter().map(|s| TrigSeries::from_samples(&s.f)).collect(),
            dtf_series: theta_rates.iter().map(|r| TrigSeries::from_samples(r)).collect(),
            theta_rates,
            normals: (0..n).map(|j| first.normal(j)).collect(),
            curvature_bound: traj
                .snapshots
                .iter()
                .map(|s| {
                    second_derivative(s.curve.h(), s.curve.scheme())
                        .into_iter()
                        .fold(T::zero(), |m, v| m.max(v.abs()))
                })
                .collect(),
            origin: first.origin(),
            dtheta: T::TAU() / T::from_usize(n).unwrap(),
        }
    }

    fn rel(&self, x: Point<T>) -> Point<T> {
        [x[0] - self.origin[0], x[1] - self.origin[1]]
    }

    /// Interpolated `h` at time fraction `s ∈ [0, 1]` of interval `k` and angle θ, with
    /// θ-derivatives and the time derivative of each (per unit time).
    fn hermite(&self, k: usize, s: T, theta: T) -> (SeriesEval<T>, SeriesEval<T>) {
        let dt = self.times[k + 1] - self.times[k];
        let ends = [
            (self.h_series[k].eval(theta), self.f_series[k].eval(theta), self.dtf_series[k].eval(theta)),
            (self.h_series[k + 1].eval(theta), self.f_series[k + 1].eval(theta), self.dtf_series[k + 1].eval(theta)),
        ];
        let (b, d) = quintic_hermite(s);
        let pick = |c: &[T; 6], part: fn(&(T, T, T)) -> T| {
            let mut acc = T::zero();
            for (e, (h, f, df)) in ends.iter().enumerate() {
                // ∂ₜh = -F, ∂ₜ²h = -∂ₜF|_θ
                acc = acc + c[3 * e] * part(h) - c[3 * e + 1] * dt * part(f) - c[3 * e + 2] * dt * dt * part(df);
            }
            acc
        };
        let val = SeriesEval { h: pick(&b, |v| v.0), h1: pick(&b, |v| v.1), h2: pick(&b, |v| v.2) };
        let inv = T::one() / dt;
        let dtv = SeriesEval { h: pick(&d, |v| v.0) * inv, h1: pick(&d, |v| v.1) * inv, h2: T::zero() };
        (val, dtv)
    }

    /// Refines a grid maximiser of `θ ↦ x·ν(θ) - h(θ)` with Newton steps on the
    /// trigonometric interpolant. Falls back to the grid value where the maximum is flat.
    fn refine_max(&self, x: Point<T>, j: usize, grid_val: T, eval: impl Fn(T) -> (T, T, T)) -> (T, T) {
        let mut theta = T::from_usize(j).unwrap() * self.dtheta;
        let mut best = (grid_val, theta);
        for _ in 0..10 {
            let (h, h1, h2) = eval(theta);
            let nu = unit_normal(theta);
            let tau = unit_tangent(theta);
            let g = dot(x, nu) - h;
            if g > best.0 {
                best = (g, theta);
            }
            let g1 = dot(x, tau) - h1;
            let g2 = -dot(x, nu) - h2;
            if !(g2 < T::zero()) {
                break;
            }
            let step = (-g1 / g2).max(-self.dtheta).min(self.dtheta);
            theta = theta + step;
            if step.abs() < lit(1e-9) {
                let (h, _, _) = eval(theta);
                let g = dot(x, unit_normal(theta)) - h;
                if g > best.0 {
                    best = (g, theta);
                }
                break;
            }
        }
        best
    }

    /// Support gap `max_θ [x·ν - h_k(θ)]` at snapshot `k` and its maximiser.
    pub fn snapshot_gap(&self, k: usize, x: Point<T>, _hint: Option<T>) -> (T, T) {
        let rel = self.rel(x);
        let h = self.traj.snapshots[k].curve.h();
        let (j, gv) = h
            .iter()
            .zip(&self.normals)
            .map(|(&hv, nu)| dot(rel, *nu) - hv)
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (j, g)| if g > acc.1 { (j, g) } else { acc });
        self.refine_max(rel, j, gv, |th| self.h_series[k].eval(th))
    }

    /// Like [`Self::snapshot_gap`], but skips refinement when the nodal maximum already
    /// decides the sign of the gap.
    fn snapshot_gap_screened(&self, k: usize, x: Point<T>) -> (T, T) {
        let rel = self.rel(x);
        let h = self.traj.snapshots[k].curve.h();
        let (j, gv) = h
            .iter()
            .zip(&self.normals)
            .map(|(&hv, nu)| dot(rel, *nu) - hv)
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (j, g)| if g > acc.1 { (j, g) } else { acc });
        let slack = self.dtheta * self.dtheta * lit(0.25) * (rel[0].hypot(rel[1]) + self.curvature_bound[k]);
        if gv >= T::zero() || gv < -slack {
            return (gv, T::from_usize(j).unwrap() * self.dtheta);
        }
        self.refine_max(rel, j, gv, |th| self.h_series[k].eval(th))
    }

    /// Support gap at time fraction `s` of interval `k`.
    fn interval_gap(&self, k: usize, s: T, x: Point<T>) -> (T, T) {
        let rel = self.rel(x);
        let dt = self.times[k + 1] - self.times[k];
        let (s0, s1) = (&self.traj.snapshots[k], &self.traj.snapshots[k + 1]);
        let (b, _) = quintic_hermite(s);
        let (mut jbest, mut gbest) = (0, T::neg_infinity());
        for (j, nu) in self.normals.iter().enumerate() {
            let (r0, r1) = (&self.theta_rates[k], &self.theta_rates[k + 1]);
            let h = b[0] * s0.curve.h()[j] - b[1] * dt * s0.f[j] - b[2] * dt * dt * r0[j]
                + b[3] * s1.curve.h()[j]
                - b[4] * dt * s1.f[j]
                - b[5] * dt * dt * r1[j];
            let g = dot(rel, *nu) - h;
            if g > gbest {
                gbest = g;
                jbest = j;
            }
        }
        self.refine_max(rel, jbest, gbest, |th| {
            let (v, _) = self.hermite(k, s, th);
            (v.h, v.h1, v.h2)
        })
    }

    /// Arrival time at `x`: `t0` outside the initial curve, `T_ext` inside the last curve.
    pub fn arrival_time(&self, x: Point<T>) -> Result<T> {
        let tie = lit::<T>(MEMBERSHIP_TIE);
        let last = self.times.len() - 1;
        let (g0, _) = self.snapshot_gap(0, x, None);
        if g0 >= -tie {
            return Ok(self.traj.t0);
        }
        let (gl, _) = self.snapshot_gap_screened(last, x);
        if gl < T::zero() {
            return Ok(self.traj.t_ext);
        }
        // first snapshot at which x is no longer strictly inside
        let (mut lo, mut hi) = (0usize, last);
        let (mut g_lo, mut g_hi) = (g0, gl);
        let mut theta_hi = T::zero();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let (g, th) = self.snapshot_gap_screened(mid, x);
            if g < T::zero() {
                lo = mid;
                g_lo = g;
            } else {
                hi = mid;
                g_hi = g;
                theta_hi = th;
            }
        }
        if theta_hi == T::zero() {
            theta_hi = self.snapshot_gap(hi, x, None).1;
        }
        let s_guess = -g_lo / (g_hi - g_lo);
        match self.newton(lo, x, s_guess, theta_hi) {
            Some(s) => Ok(self.times[lo] + s * (self.times[lo + 1] - self.times[lo])),
            None => self.bisect(lo, x),
        }
    }

    /// Joint Newton on `(θ, s)`; returns the time fraction `s` of interval `k`.
    fn newton(&self, k: usize, x: Point<T>, s0: T, theta0: T) -> Option<T> {
        let rel = self.rel(x);
        let dt = self.times[k + 1] - self.times[k];
        let mut s = s0;
        let mut theta = theta0;
        let eps = lit::<T>(1e-14);
        // roundoff in g is amplified by 1/(F dt) in s, so convergence is judged in time units
        let t_tol = lit::<T>(1e-14) * (T::one() + self.times[k + 1].abs());
        for _ in 0..30 {
            let (v, d) = self.hermite(k, s, theta);
            let nu = unit_normal(theta);
            let tau = unit_tangent(theta);
            let g1 = dot(rel, nu) - v.h;
            let g2 = dot(rel, tau) - v.h1;
            // Jacobian w.r.t. (θ, s)
            let a11 = g2;
            let a12 = -d.h * dt;
            let a21 = -dot(rel, nu) - v.h2;
            let a22 = -d.h1 * dt;
            let det = a11 * a22 - a12 * a21;
            if !(det.abs() > T::min_positive_value()) {
                return None;
            }
            let ds = -(a11 * g2 - a21 * g1) / det;
            let dth = -(a22 * g1 - a12 * g2) / det;
            s = s + ds;
            theta = theta + dth;
            if !(s > lit(-0.5) && s < lit(1.5)) {
                return None;
            }
            if ds.abs() * dt < t_tol && dth.abs() < lit(1e-10) {
                return (s >= -eps && s <= T::one() + eps).then(|| s.max(T::zero()).min(T::one()));
            }
        }
        None
    }

    fn bisect(&self, k: usize, x: Point<T>) -> Result<T> {
        let (mut a, mut b) = (T::zero(), T::one());
        let (ga, _) = self.interval_gap(k, a, x);
        let (gb, _) = self.interval_gap(k, b, x);
        if !(ga < T::zero() && gb >= T::zero()) {
            return Err(Error::NonMonotoneContainment { x: x[0].to_f64_lossy(), y: x[1].to_f64_lossy() });
        }
        for _ in 0..60 {
            let m = lit::<T>(0.5) * (a + b);
            let (g, _) = self.interval_gap(k, m, x);
            if g < T::zero() {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(self.times[k] + lit::<T>(0.5) * (a + b) * (self.times[k + 1] - self.times[k]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_field(alpha: f64, dx: f64, kind_u: impl Fn(f64) -> f64 + Sync) -> ArrivalField<f64> {
        let grid = Grid::covering([-1.0, -1.0], [1.0, 1.0], dx, 4, [0.0, 0.0]).unwrap();
        let opts = ArrivalOptions { r_excl: Some(0.05), ..ArrivalOptions::default() };
        ArrivalField::from_fn(
            grid,
            0.0,
            1.0 / (1.0 + alpha),
            [0.0, 0.0],
            alpha,
            0.05,
            &opts,
            |x| kind_u(x[0].hypot(x[1])),
            |x| 1.0 - x[0].hypot(x[1]),
        )
    }

    #[test]
    fn lagrange_weights_partition_unity() {
        let w = lagrange4(0.37f64);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_mcf_field_has_zero_residual() {
        let f = disc_field(1.0, 1.0 / 256.0, |r| (1.0 - r * r) / 2.0);
        let speed = SpeedSpec::builtin("curvature", 1, 1.0, None).unwrap();
        let sweep = f.level_set_residual_sweep(&speed).unwrap();
        assert!(sweep.cells > 10_000);
        assert!(sweep.max_abs < 1e-6, "{}", sweep.max_abs);
    }

    #[test]
    fn exact_power_fields_have_small_residual() {
        for alpha in [1.0 / 3.0, 2.0, 3.0] {
            let f = disc_field(alpha, 1.0 / 256.0, |r| (1.0 - r.powf(1.0 + alpha)) / (1.0 + alpha));
            let speed = SpeedSpec::builtin("curvature", 1, alpha, None).unwrap();
            let sweep = f.level_set_residual_sweep(&speed).unwrap();
            assert!(sweep.max_abs < 1e-5, "alpha {alpha}: {}", sweep.max_abs);
        }
    }

    #[test]
    fn cone_level_set_curvature() {
        let f = disc_field(1.0, 1.0 / 128.0, |r| 1.0 - r);
        let w = f.transformed(TransformKind::Raw);
        let (i, j) = (((0.5 - f.grid.origin[0]) / f.grid.dx).round() as usize, ((0.0 - f.grid.origin[1]) / f.grid.dy).round() as usize);
        let k = w.level_set_curvature(i, j, HessianRoute::Direct).unwrap();
        assert!((k - 2.0).abs() < 1e-6, "{k}");
    }

    #[test]
    fn hemisphere_level_set_curvature() {
        let f = disc_field(1.0, 1.0 / 128.0, |r| (1.0 - r * r) / 2.0);
        let w = f.transformed(TransformKind::SqrtPower);
        let (i, j) = (((0.6 - f.grid.origin[0]) / f.grid.dx).round() as usize, ((0.0 - f.grid.origin[1]) / f.grid.dy).round() as usize);
        let x = f.grid.node(i, j)[0];
        for route in [HessianRoute::Direct, HessianRoute::ChainRule] {
            let k = w.level_set_curvature(i, j, route).unwrap();
            assert!((k - 1.0 / x).abs() < 1e-6, "{route:?}: {k}");
        }
    }

    #[test]
    fn transforms_share_level_set_curvature() {
        let f = disc_field(2.0, 1.0 / 64.0, |r| (1.0 - r.powi(3)) / 3.0);
        let raw = f.transformed(TransformKind::Raw);
        let sq = f.transformed(TransformKind::SqrtPower);
        let lg = f.transformed(TransformKind::Log);
        for (i, j) in f.valid_nodes().into_iter().step_by(37) {
            let a = raw.level_set_curvature(i, j, HessianRoute::ChainRule).unwrap();
            let b = sq.level_set_curvature(i, j, HessianRoute::ChainRule).unwrap();
            let c = lg.level_set_curvature(i, j, HessianRoute::ChainRule).unwrap();
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
            assert!((a - c).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn mask_partitions_grid() {
        let f = disc_field(1.0, 1.0 / 64.0, |r| (1.0 - r * r) / 2.0);
        let c = f.mask_counts();
        assert_eq!(c.iter().sum::<usize>(), f.grid.len());
        assert!(c.iter().all(|&n| n > 0));
        // stencils never touch the ball or the exterior
        for (i, j) in f.valid_nodes() {
            let r = f.stencil.reach();
            for jj in j - r..=j + r {
                for ii in i - r..=i + r {
                    assert!(f.mask_at(ii, jj).readable());
                }
            }
        }
    }

    #[test]
    fn interpolation_is_exact_on_quadratics() {
        let f = disc_field(1.0, 1.0 / 32.0, |r| r * r);
        let v = f.value_at([0.123, -0.301]).unwrap();
        assert!((v - (0.123f64.powi(2) + 0.301f64.powi(2))).abs() < 1e-14);
    }
}

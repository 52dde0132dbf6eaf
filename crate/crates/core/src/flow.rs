//! Contracting curvature flow of a convex curve, `∂ₜh = -F` with `F = f(κ)^α`, integrated
//! with explicit RK4 on the support function.
//!
//! The equation is parabolic with diffusion coefficient `D = Ḟ κ²` acting on `h'' + h`, so
//! the admissible step is limited by `D_max` times the largest eigenvalue of the discrete
//! second derivative. The step is also capped by `c ρ_min^{1+α} / α`, the time scale on
//! which the smallest radius of curvature changes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SupportCurve;
use crate::scalar::{lit, Point, Real};
use crate::spectral::DiffScheme;
use crate::speed::SpeedSpec;

/// Real-axis stability limit of classical RK4.
const RK4_REAL_STABILITY: f64 = 2.785;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct FlowOptions<T> {
    /// Fraction of the RK4 stability bound used for adaptive steps.
    pub cfl: T,
    /// `c` in the accuracy cap `dt ≤ c ρ_min^{1+α} / α`.
    pub accuracy_factor: T,
    /// Run stops once the inradius drops below this fraction of the initial inradius.
    pub extinction_fraction: T,
    /// Snapshot cadence in units of the local time scale `ρ_min / F_max`.
    pub snapshot_spacing: T,
    pub max_steps: usize,
    /// Number of times a step that destroys convexity is halved before giving up.
    pub max_halvings: usize,
}

impl<T: Real> Default for FlowOptions<T> {
    fn default() -> Self {
        Self {
            cfl: lit(0.5),
            accuracy_factor: lit(0.1),
            extinction_fraction: lit(1e-3),
            snapshot_spacing: lit(0.005),
            max_steps: 20_000_000,
            max_halvings: 8,
        }
    }
}

/// State of the flow at one instant together with the intrinsic quantities used by the
/// Harnack check.
#[derive(Clone, Debug)]
pub struct FlowSnapshot<T> {
    pub t: T,
    pub curve: SupportCurve<T>,
    pub kappa: Vec<T>,
    /// `F = f(κ)^α`.
    pub f: Vec<T>,
    /// `∂F/∂s`.
    pub f_s: Vec<T>,
    /// `∂²F/∂s²`.
    pub f_ss: Vec<T>,
    /// `∂ₜF = Ḟ (F_ss + κ² F)`.
    pub dt_f: Vec<T>,
}

impl<T: Real> FlowSnapshot<T> {
    pub fn new(t: T, curve: SupportCurve<T>, speed: &SpeedSpec<T>) -> Result<Self> {
        let kappa = curve.curvatures()?;
        let mut f = Vec::with_capacity(kappa.len());
        let mut df = Vec::with_capacity(kappa.len());
        for &k in &kappa {
            let (v, d) = speed.realized_with_derivative_1d(k)?;
            f.push(v);
            df.push(d);
        }
        let (f_s, f_ss) = curve.arclength_derivatives(&f)?;
        let dt_f = (0..kappa.len())
            .map(|j| df[j] * (f_ss[j] + kappa[j] * kappa[j] * f[j]))
            .collect();
        Ok(Self { t, curve, kappa, f, f_s, f_ss, dt_f })
    }

    pub fn theta_count(&self) -> usize {
        self.kappa.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Completed,
    ConvexityLost,
    StepLimit,
}

/// Time-ordered snapshots of a run with extinction estimates.
#[derive(Clone, Debug)]
pub struct FlowTrajectory<T> {
    pub snapshots: Vec<FlowSnapshot<T>>,
    pub t0: T,
    /// Extrapolated extinction time.
    pub t_ext: T,
    /// Steiner point of the last curve.
    pub p_ext: Point<T>,
    pub initial_inradius: T,
    pub speed: SpeedSpec<T>,
    pub status: FlowStatus,
    pub options: FlowOptions<T>,
    pub steps: usize,
}

impl<T: Real> FlowTrajectory<T> {
    pub fn alpha(&self) -> T {
        self.speed.alpha
    }

    pub fn initial(&self) -> &FlowSnapshot<T> {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &FlowSnapshot<T> {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    pub fn require_completed(&self) -> Result<()> {
        if self.status != FlowStatus::Completed {
            return Err(Error::IncompleteTrajectory(format!("run ended with status {:?}", self.status)));
        }
        Ok(())
    }
}

struct StageEval<T> {
    neg_f: Vec<T>,
    max_diffusion: T,
    min_rho: T,
    max_f: T,
}

/// Integrator for a fixed speed.
#[derive(Clone, Debug)]
pub struct FlowSolver<T> {
    speed: SpeedSpec<T>,
    opts: FlowOptions<T>,
}

impl<T: Real> FlowSolver<T> {
    /// Requires a one-variable speed that is strictly increasing on `[1e-6, 1e6]`.
    pub fn new(speed: SpeedSpec<T>, opts: FlowOptions<T>) -> Result<Self> {
        if speed.dimension != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: speed.dimension });
        }
        speed.require_strictly_increasing_1d(lit(1e-6), lit(1e6), 121)?;
        Ok(Self { speed, opts })
    }

    pub fn speed(&self) -> &SpeedSpec<T> {
        &self.speed
    }

    pub fn options(&self) -> &FlowOptions<T> {
        &self.opts
    }

    fn eval(&self, curve: &SupportCurve<T>) -> Result<StageEval<T>> {
        let rho = curve.radii_of_curvature();
        let floor = lit::<T>(crate::geometry::RHO_FLOOR);
        let mut neg_f = Vec::with_capacity(rho.len());
        let mut max_diffusion = T::zero();
        let mut min_rho = T::infinity();
        let mut max_f = T::zero();
        for (node, &r) in rho.iter().enumerate() {
            if !(r > floor) {
                return Err(Error::ConvexityLost { node, rho: r.to_f64_lossy() });
            }
            let k = T::one() / r;
            let (f, df) = self.speed.realized_with_derivative_1d(k)?;
            neg_f.push(-f);
            max_diffusion = max_diffusion.max(df * k * k);
            min_rho = min_rho.min(r);
            max_f = max_f.max(f);
        }
        Ok(StageEval { neg_f, max_diffusion, min_rho, max_f })
    }

    fn stability_bound(&self, ev: &StageEval<T>, n: usize, scheme: DiffScheme) -> T {
        let lam = ev.max_diffusion * scheme.max_second_derivative_eigenvalue::<T>(n);
        lit::<T>(RK4_REAL_STABILITY) / lam
    }

    fn adaptive_dt(&self, ev: &StageEval<T>, n: usize, scheme: DiffScheme) -> T {
        let stab = self.opts.cfl * self.stability_bound(ev, n, scheme);
        let alpha = self.speed.alpha;
        let acc = self.opts.accuracy_factor * ev.min_rho.powf(T::one() + alpha) / alpha;
        stab.min(acc)
    }

    fn axpy(curve: &SupportCurve<T>, dt: T, k: &[T]) -> SupportCurve<T> {
        let h = curve.h().iter().zip(k).map(|(&h, &v)| h + dt * v).collect();
        SupportCurve::new_unchecked(h, curve.origin(), curve.scheme())
    }

    /// Classical RK4. The returned evaluation belongs to the new state; it doubles as the
    /// convexity check and as the first stage of the following step.
    fn rk4(&self, curve: &SupportCurve<T>, first: &StageEval<T>, dt: T) -> Result<(SupportCurve<T>, StageEval<T>)> {
        let half = lit::<T>(0.5);
        let k1 = &first.neg_f;
        let k2 = self.eval(&Self::axpy(curve, half * dt, k1))?.neg_f;
        let k3 = self.eval(&Self::axpy(curve, half * dt, &k2))?.neg_f;
        let k4 = self.eval(&Self::axpy(curve, dt, &k3))?.neg_f;
        let sixth = dt / lit(6.0);
        let two = lit::<T>(2.0);
        let h = (0..k1.len())
            .map(|j| curve.h()[j] + sixth * (k1[j] + two * k2[j] + two * k3[j] + k4[j]))
            .collect();
        let next = SupportCurve::new_unchecked(h, curve.origin(), curve.scheme());
        let ev = self.eval(&next)?;
        Ok((next, ev))
    }

    /// One RK4 step of size `dt`, halved (and taken as two sub-steps) if it destroys
    /// convexity.
    fn step_curve(
        &self,
        curve: &SupportCurve<T>,
        dt: T,
        halvings: usize,
    ) -> Result<(SupportCurve<T>, StageEval<T>)> {
        let ev = self.eval(curve)?;
        match self.rk4(curve, &ev, dt) {
            Ok(c) => Ok(c),
            Err(Error::ConvexityLost { .. }) if halvings < self.opts.max_halvings => {
                let half = dt * lit(0.5);
                let (mid, _) = self.step_curve(curve, half, halvings + 1)?;
                self.step_curve(&mid, half, halvings + 1)
            }
            Err(e) => Err(e),
        }
    }

    /// Largest stable step for the current state.
    pub fn stability_limit(&self, curve: &SupportCurve<T>) -> Result<T> {
        let ev = self.eval(curve)?;
        Ok(self.stability_bound(&ev, curve.theta_count(), curve.scheme()))
    }

    /// A single RK4 step of exactly `dt`. Fails with `StabilityViolation` if `dt` exceeds
    /// the linear stability bound.
    pub fn step(&self, snapshot: &FlowSnapshot<T>, dt: T) -> Result<FlowSnapshot<T>> {
        if dt == T::zero() {
            return Ok(snapshot.clone());
        }
        if !(dt > T::zero()) {
            return Err(Error::InvalidInput(format!("time step must be nonnegative, got {dt}")));
        }
        let bound = self.stability_limit(&snapshot.curve)?;
        if dt > bound {
            return Err(Error::StabilityViolation { dt: dt.to_f64_lossy(), bound: bound.to_f64_lossy() });
        }
        let (next, _) = self.step_curve(&snapshot.curve, dt, 0)?;
        FlowSnapshot::new(snapshot.t + dt, next, &self.speed)
    }

    /// Integrates over `duration` with adaptive sub-steps.
    pub fn advance(&self, snapshot: &FlowSnapshot<T>, duration: T) -> Result<FlowSnapshot<T>> {
        if duration == T::zero() {
            return Ok(snapshot.clone());
        }
        let mut curve = snapshot.curve.clone();
        let mut ev = self.eval(&curve)?;
        let mut t = snapshot.t;
        let end = snapshot.t + duration;
        let mut steps = 0usize;
        while t < end {
            let dt = self.adaptive_dt(&ev, curve.theta_count(), curve.scheme());
            if !(dt > T::zero()) || !dt.is_finite() {
                return Err(Error::StabilityViolation { dt: dt.to_f64_lossy(), bound: 0.0 });
            }
            let dt = dt.min(end - t);
            (curve, ev) = match self.rk4(&curve, &ev, dt) {
                Ok(next) => next,
                Err(Error::ConvexityLost { .. }) => self.step_curve(&curve, dt, 1)?,
                Err(e) => return Err(e),
            };
            t = if end - t <= dt { end } else { t + dt };
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(Error::IncompleteTrajectory("step limit reached in advance".into()));
            }
        }
        FlowSnapshot::new(end, curve, &self.speed)
    }

    /// Runs until the inradius falls below `extinction_fraction` times its initial value.
    pub fn run(&self, initial: &SupportCurve<T>, t0: T) -> Result<FlowTrajectory<T>> {
        initial.check_convex()?;
        let r0 = initial.inradius_estimate();
        if !(r0 > T::zero()) {
            return Err(Error::InvalidInput("initial curve has no positive inradius".into()));
        }
        let threshold = self.opts.extinction_fraction * r0;
        let n = initial.theta_count();
        let scheme = initial.scheme();

        let mut snapshots = vec![FlowSnapshot::new(t0, initial.clone(), &self.speed)?];
        let mut radii = vec![r0];
        let mut curve = initial.clone();
        let mut ev = self.eval(&curve)?;
        let mut t = t0;
        let mut last_recorded = t0;
        let mut status = FlowStatus::StepLimit;
        let mut steps = 0usize;
        let normals: Vec<Point<T>> = (0..n).map(|j| initial.normal(j)).collect();

        while steps < self.opts.max_steps {
            let dt = self.adaptive_dt(&ev, n, scheme);
            if !(dt > T::zero()) || !dt.is_finite() {
                return Err(Error::StabilityViolation { dt: dt.to_f64_lossy(), bound: 0.0 });
            }
            let scale = ev.min_rho / ev.max_f;
            let next = match self.rk4(&curve, &ev, dt) {
                Ok(c) => Ok(c),
                Err(Error::ConvexityLost { .. }) => self.step_curve(&curve, dt, 1),
                Err(e) => Err(e),
            };
            (curve, ev) = match next {
                Ok(c) => c,
                Err(Error::ConvexityLost { node, rho }) => {
                    log::warn!("convexity lost at t = {t} (node {node}, rho {rho:e})");
                    status = FlowStatus::ConvexityLost;
                    break;
                }
                Err(e) => return Err(e),
            };
            t = t + dt;
            steps += 1;

            let r_in = inradius_with_table(curve.h(), &normals);
            let extinct = r_in < threshold;
            if extinct || t - last_recorded >= self.opts.snapshot_spacing * scale {
                snapshots.push(FlowSnapshot::new(t, curve.clone(), &self.speed)?);
                radii.push(r_in);
                last_recorded = t;
            }
            if extinct {
                status = FlowStatus::Completed;
                break;
            }
        }

        let p_ext = snapshots.last().expect("non-empty").curve.steiner_point();
        let t_ext = extrapolate_extinction(&snapshots, &radii, self.speed.alpha);
        log::info!(
            "flow {}: {} steps, {} snapshots, status {:?}, T_ext = {}",
            self.speed.name,
            steps,
            snapshots.len(),
            status,
            t_ext
        );
        Ok(FlowTrajectory {
            snapshots,
            t0,
            t_ext,
            p_ext,
            initial_inradius: r0,
            speed: self.speed.clone(),
            status,
            options: self.opts.clone(),
            steps,
        })
    }
}

/// Same as [`SupportCurve::inradius_estimate`] with precomputed normals.
fn inradius_with_table<T: Real>(h: &[T], normals: &[Point<T>]) -> T {
    let dtheta = T::TAU() / T::from_usize(h.len()).unwrap();
    let mut s = [T::zero(), T::zero()];
    for (&v, nu) in h.iter().zip(normals) {
        s[0] = s[0] + v * nu[0];
        s[1] = s[1] + v * nu[1];
    }
    let c = dtheta / T::PI();
    let s = [s[0] * c, s[1] * c];
    h.iter()
        .zip(normals)
        .map(|(&v, nu)| v - (s[0] * nu[0] + s[1] * nu[1]))
        .fold(T::infinity(), T::min)
}

/// Linear extrapolation of `r^{1+α}` through the last two recorded snapshots (exact for
/// shrinking circles and for homothetically shrinking solutions).
fn extrapolate_extinction<T: Real>(snaps: &[FlowSnapshot<T>], radii: &[T], alpha: T) -> T {
    let k = snaps.len();
    if k < 2 {
        return snaps[0].t;
    }
    let p = T::one() + alpha;
    let (ta, tb) = (snaps[k - 2].t, snaps[k - 1].t);
    let (ya, yb) = (radii[k - 2].powf(p), radii[k - 1].powf(p));
    if !(ya > yb) {
        return tb;
    }
    tb + yb * (tb - ta) / (ya - yb)
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct TrajectoryMeta<T> {
    t0: T,
    t_ext: T,
    p_ext: Point<T>,
    initial_inradius: T,
    speed: SpeedSpec<T>,
    options: FlowOptions<T>,
    status: FlowStatus,
    steps: usize,
    origin: Point<T>,
    scheme: DiffScheme,
    theta_count: usize,
    snapshot_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRow {
    t: f64,
    theta: f64,
    h: f64,
    kappa: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "F_s")]
    f_s: f64,
    #[serde(rename = "F_ss")]
    f_ss: f64,
    #[serde(rename = "dtF")]
    dt_f: f64,
}

impl<T: Real> FlowTrajectory<T> {
    /// Writes `meta.json` and `snapshots.csv` into `dir` (created if missing).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let first = self.initial();
        let meta = TrajectoryMeta {
            t0: self.t0,
            t_ext: self.t_ext,
            p_ext: self.p_ext,
            initial_inradius: self.initial_inradius,
            speed: self.speed.clone(),
            options: self.options.clone(),
            status: self.status,
            steps: self.steps,
            origin: first.curve.origin(),
            scheme: first.curve.scheme(),
            theta_count: first.theta_count(),
            snapshot_count: self.snapshots.len(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        let mut w = csv::Writer::from_path(dir.join("snapshots.csv"))?;
        for s in &self.snapshots {
            for j in 0..s.theta_count() {
                w.serialize(SnapshotRow {
                    t: s.t.to_f64_lossy(),
                    theta: s.curve.theta(j).to_f64_lossy(),
                    h: s.curve.h()[j].to_f64_lossy(),
                    kappa: s.kappa[j].to_f64_lossy(),
                    f: s.f[j].to_f64_lossy(),
                    f_s: s.f_s[j].to_f64_lossy(),
                    f_ss: s.f_ss[j].to_f64_lossy(),
                    dt_f: s.dt_f[j].to_f64_lossy(),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a directory written by [`FlowTrajectory::save_dir`]. Intrinsic quantities are
    /// taken from the file, not recomputed.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta: TrajectoryMeta<T> = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let mut r = csv::Reader::from_path(dir.join("snapshots.csv"))?;
        let rows: Vec<SnapshotRow> = r.deserialize().collect::<Result<_, _>>()?;
        let n = meta.theta_count;
        if n == 0 || rows.len() != n * meta.snapshot_count {
            return Err(Error::InvalidInput(format!(
                "snapshots.csv has {} rows, expected {} x {}",
                rows.len(),
                meta.snapshot_count,
                n
            )));
        }
        let col = |chunk: &[SnapshotRow], f: fn(&SnapshotRow) -> f64| -> Vec<T> {
            chunk.iter().map(|row| lit(f(row))).collect()
        };
        let mut snapshots = Vec::with_capacity(meta.snapshot_count);
        for chunk in rows.chunks(n) {
            let curve = SupportCurve::new_unchecked(col(chunk, |r| r.h), meta.origin, meta.scheme);
            snapshots.push(FlowSnapshot {
                t: lit(chunk[0].t),
                curve,
                kappa: col(chunk, |r| r.kappa),
                f: col(chunk, |r| r.f),
                f_s: col(chunk, |r| r.f_s),
                f_ss: col(chunk, |r| r.f_ss),
                dt_f: col(chunk, |r| r.dt_f),
            });
        }
        Ok(Self {
            snapshots,
            t0: meta.t0,
            t_ext: meta.t_ext,
            p_ext: meta.p_ext,
            initial_inradius: meta.initial_inradius,
            speed: meta.speed,
            status: meta.status,
            options: meta.options,
            steps: meta.steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(alpha: f64) -> FlowSolver<f64> {
        let speed = SpeedSpec::builtin("curvature", 1, alpha, None).unwrap();
        FlowSolver::new(speed, FlowOptions::default()).unwrap()
    }

    fn unit_circle(n: usize) -> SupportCurve<f64> {
        SupportCurve::circle(1.0, [0.0, 0.0], n, DiffScheme::Spectral).unwrap()
    }

    #[test]
    fn zero_step_is_identity() {
        let s = solver(1.0);
        let snap = FlowSnapshot::new(0.0, unit_circle(64), s.speed()).unwrap();
        let same = s.step(&snap, 0.0).unwrap();
        assert_eq!(same.curve.h(), snap.curve.h());
        assert_eq!(same.t, snap.t);
    }

    #[test]
    fn oversized_step_is_a_stability_violation() {
        let s = solver(1.0);
        let snap = FlowSnapshot::new(0.0, unit_circle(64), s.speed()).unwrap();
        let bound = s.stability_limit(&snap.curve).unwrap();
        assert!(matches!(s.step(&snap, 2.0 * bound), Err(Error::StabilityViolation { .. })));
        assert!(s.step(&snap, 0.5 * bound).is_ok());
    }

    #[test]
    fn mcf_circle_reaches_half_radius() {
        let s = solver(1.0);
        let snap = FlowSnapshot::new(0.0, unit_circle(64), s.speed()).unwrap();
        let end = s.advance(&snap, 0.375).unwrap();
        for &h in end.curve.h() {
            assert!((h - 0.5).abs() < 1e-8, "{h}");
        }
    }

    #[test]
    fn cubic_power_circle_reaches_half_radius() {
        let s = solver(3.0);
        let snap = FlowSnapshot::new(0.0, unit_circle(64), s.speed()).unwrap();
        let end = s.advance(&snap, 0.234375).unwrap();
        for &h in end.curve.h() {
            assert!((h - 0.5).abs() < 1e-8, "{h}");
        }
    }

    #[test]
    fn circle_snapshot_time_derivative() {
        // F = κ, F_s = 0, ∂ₜF = κ³ on a circle
        let s = solver(1.0);
        let c = SupportCurve::circle(0.5, [0.0, 0.0], 64, DiffScheme::Spectral).unwrap();
        let snap = FlowSnapshot::new(0.1, c, s.speed()).unwrap();
        for j in 0..64 {
            assert!((snap.f[j] - 2.0).abs() < 1e-12);
            assert!(snap.f_s[j].abs() < 1e-10);
            assert!((snap.dt_f[j] - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_parabolic_speed() {
        let speed = SpeedSpec::builtin("neg_mean", 1, 1.0, None).unwrap();
        assert!(FlowSolver::new(speed, FlowOptions::default()).is_err());
        let speed = SpeedSpec::builtin("mean", 2, 1.0, None).unwrap();
        assert!(matches!(
            FlowSolver::new(speed, FlowOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

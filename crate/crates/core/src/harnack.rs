//! Differential Harnack quantity along the flow and its cross-check against the
//! finite-difference Hessian of the transformed arrival time.
//!
//! For a curve the Harnack quadratic in a tangential direction `v` is
//! `q(v) = ∂ₜF + 2 v F_s + κ v² + αF/((1+α)(t-t0))`, minimised exactly at `v = -F_s/κ`:
//! `Q = ∂ₜF + αF/((1+α)(t-t0)) - F_s²/κ`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrival::{chain_rule, ArrivalField, TransformKind};
use crate::error::{Error, Result};
use crate::flow::{FlowSnapshot, FlowTrajectory};
use crate::linalg::{in_frame, sym2_eigenvalues, Mat2};
use crate::scalar::{lit, Real};
use crate::speed::Verdict;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnackMode {
    #[default]
    WithTimeTerm,
    /// Drops the time term.
    Ancient,
}

fn time_term<T: Real>(f: T, t: T, t0: T, alpha: T, mode: HarnackMode) -> T {
    match mode {
        HarnackMode::WithTimeTerm => alpha * f / ((T::one() + alpha) * (t - t0)),
        HarnackMode::Ancient => T::zero(),
    }
}

/// `q(v)` at node `j`; used as an oracle for the closed-form minimum.
pub fn harnack_quadratic<T: Real>(snap: &FlowSnapshot<T>, j: usize, t0: T, alpha: T, mode: HarnackMode, v: T) -> T {
    snap.dt_f[j] + lit::<T>(2.0) * v * snap.f_s[j] + snap.kappa[j] * v * v + time_term(snap.f[j], snap.t, t0, alpha, mode)
}

/// Closed-form minimum over directions of the Harnack quadratic at every node.
pub fn harnack_min<T: Real>(snap: &FlowSnapshot<T>, t0: T, alpha: T, mode: HarnackMode) -> Result<Vec<T>> {
    if mode == HarnackMode::WithTimeTerm && !(snap.t > t0) {
        return Err(Error::InvalidInput(format!("snapshot time {} is not after t0 = {t0}", snap.t)));
    }
    (0..snap.theta_count())
        .map(|j| {
            let k = snap.kappa[j];
            if !(k > T::zero()) {
                return Err(Error::NonPositiveCurvature { value: k.to_f64_lossy(), floor: 0.0 });
            }
            let fs = snap.f_s[j];
            Ok(snap.dt_f[j] + time_term(snap.f[j], snap.t, t0, alpha, mode) - fs * fs / k)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotMin {
    pub t: f64,
    pub min_q: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnackReport {
    pub mode: HarnackMode,
    pub alpha: f64,
    pub t0: f64,
    pub per_snapshot: Vec<SnapshotMin>,
    pub min_q: f64,
    pub witness_t: f64,
    pub witness_theta: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Snapshots skipped because they sit too close to `t0`.
    pub skipped_snapshots: usize,
    pub cross_check: Option<CrossCheckReport>,
}

/// Fraction of `T_ext - t0` near `t0` where snapshots are left out in
/// [`HarnackMode::WithTimeTerm`].
pub const EARLY_SKIP: f64 = 1e-3;

pub fn harnack_report<T: Real>(traj: &FlowTrajectory<T>, t0: T, mode: HarnackMode, tol: f64) -> Result<HarnackReport> {
    let skip_before = traj.t0 + lit::<T>(EARLY_SKIP) * (traj.t_ext - traj.t0);
    let used: Vec<&FlowSnapshot<T>> = traj
        .snapshots
        .iter()
        .filter(|s| mode == HarnackMode::Ancient || (s.t > t0 && s.t >= skip_before))
        .collect();
    let mins: Vec<Result<SnapshotMin>> = used
        .par_iter()
        .map(|s| {
            let q = harnack_min(s, t0, traj.alpha(), mode)?;
            let (j, v) = q
                .iter()
                .enumerate()
                .fold((0, T::infinity()), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
            Ok(SnapshotMin { t: s.t.to_f64_lossy(), min_q: v.to_f64_lossy(), theta: s.curve.theta(j).to_f64_lossy() })
        })
        .collect();
    let per_snapshot = mins.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = per_snapshot
        .iter()
        .fold(None::<&SnapshotMin>, |acc, m| match acc {
            Some(a) if a.min_q <= m.min_q => Some(a),
            _ => Some(m),
        })
        .ok_or_else(|| Error::IncompleteTrajectory("no snapshot left for the Harnack check".into()))?;
    let (min_q, witness_t, witness_theta) = (worst.min_q, worst.t, worst.theta);
    Ok(HarnackReport {
        mode,
        alpha: traj.alpha().to_f64_lossy(),
        t0: t0.to_f64_lossy(),
        skipped_snapshots: traj.snapshots.len() - per_snapshot.len(),
        per_snapshot,
        min_q,
        witness_t,
        witness_theta,
        tolerance: tol,
        verdict: Verdict::from_pass(min_q >= -tol),
        cross_check: None,
    })
}

/// Writes `(t, theta, Q)` for every used snapshot and node.
pub fn write_q_csv<T: Real>(traj: &FlowTrajectory<T>, t0: T, mode: HarnackMode, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "theta", "Q"])?;
    let skip_before = traj.t0 + lit::<T>(EARLY_SKIP) * (traj.t_ext - traj.t0);
    for s in &traj.snapshots {
        if mode == HarnackMode::WithTimeTerm && (s.t <= t0 || s.t < skip_before) {
            continue;
        }
        for (j, q) in harnack_min(s, t0, traj.alpha(), mode)?.into_iter().enumerate() {
            w.write_record([s.t.to_string(), s.curve.theta(j).to_string(), q.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `D²w` at the boundary point of node `j`, assembled from intrinsic data in the frame
/// (unit tangent, outward normal):
/// `w^{-α} [[-κ/F, F_s/F²], [F_s/F², -(∂ₜF + αF/w^{1+α})/F³]]` with `w^{1+α} = (1+α)(t-t0)`.
pub fn intrinsic_hessian<T: Real>(snap: &FlowSnapshot<T>, j: usize, t0: T, alpha: T) -> Mat2<T> {
    let w1a = (T::one() + alpha) * (snap.t - t0);
    let w = w1a.powf(T::one() / (T::one() + alpha));
    let scale = w.powf(-alpha);
    let (k, f, fs, dtf) = (snap.kappa[j], snap.f[j], snap.f_s[j], snap.dt_f[j]);
    let off = scale * fs / (f * f);
    [
        [-scale * k / f, off],
        [off, -scale * (dtf + alpha * f / w1a) / (f * f * f)],
    ]
}

/// Intrinsic and finite-difference `D²w` at the boundary point of node `j` of snapshot `k`,
/// both in the (tangent, normal) frame.
pub fn equivalence_at<T: Real>(traj: &FlowTrajectory<T>, field: &ArrivalField<T>, k: usize, j: usize) -> Result<(Mat2<T>, Mat2<T>)> {
    let snap = &traj.snapshots[k];
    let bp = snap.curve.boundary_point(j)?;
    let masked = || Error::MaskedPoint { x: bp.position[0].to_f64_lossy(), y: bp.position[1].to_f64_lossy() };
    let du = field.derivatives_at(bp.position).ok_or_else(masked)?;
    let u = field.value_at(bp.position).ok_or_else(masked)?;
    let dw = chain_rule(TransformKind::SqrtPower, u, field.t0, field.alpha, &du);
    let tangent = snap.curve.tangent(j);
    let ext = in_frame(&dw.hess, tangent, bp.normal);
    Ok((intrinsic_hessian(snap, j, traj.t0, traj.alpha()), ext))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossCheckReport {
    /// Max over samples of `‖intrinsic - extrinsic‖ / ‖intrinsic‖` (Frobenius).
    pub max_rel: f64,
    pub mean_rel: f64,
    pub samples_used: usize,
    /// Samples whose matched point was masked.
    pub skipped: usize,
    /// Largest eigenvalue of the extrinsic matrices.
    pub extrinsic_worst: f64,
    /// Smallest Harnack `Q` at the same samples.
    pub intrinsic_worst: f64,
    pub signs_agree: bool,
}

/// Compares intrinsic and extrinsic Hessians of `w` at sampled `(t, θ)`.
pub fn equivalence_check<T: Real>(
    traj: &FlowTrajectory<T>,
    field: &ArrivalField<T>,
    samples: usize,
    hessian_tol: f64,
    harnack_tol: f64,
) -> Result<CrossCheckReport> {
    let picks = crate::arrival::snapshot_samples(traj, samples);
    let skip_before = traj.t0 + lit::<T>(EARLY_SKIP) * (traj.t_ext - traj.t0);
    let rows: Vec<Result<Option<(f64, f64, f64)>>> = picks
        .par_iter()
        .map(|&(k, j)| {
            if traj.snapshots[k].t < skip_before {
                return Ok(None);
            }
            match equivalence_at(traj, field, k, j) {
                Ok((a, b)) => {
                    let diff = frob(&[[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]);
                    let rel = (diff / frob(&a)).to_f64_lossy();
                    let eig = sym2_eigenvalues(b[0][0], b[0][1], b[1][1]).1.to_f64_lossy();
                    let snap = &traj.snapshots[k];
                    let fs = snap.f_s[j];
                    let q = snap.dt_f[j] + time_term(snap.f[j], snap.t, traj.t0, traj.alpha(), HarnackMode::WithTimeTerm)
                        - fs * fs / snap.kappa[j];
                    Ok(Some((rel, eig, q.to_f64_lossy())))
                }
                Err(Error::MaskedPoint { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let used: Vec<(f64, f64, f64)> = rows.iter().flatten().copied().collect();
    let max_rel = used.iter().map(|r| r.0).fold(0.0, f64::max);
    let mean_rel = if used.is_empty() { 0.0 } else { used.iter().map(|r| r.0).sum::<f64>() / used.len() as f64 };
    let extrinsic_worst = used.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let intrinsic_worst = used.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    Ok(CrossCheckReport {
        max_rel,
        mean_rel,
        samples_used: used.len(),
        skipped: rows.len() - used.len(),
        extrinsic_worst,
        intrinsic_worst,
        signs_agree: (extrinsic_worst <= hessian_tol) == (intrinsic_worst >= -harnack_tol),
    })
}

fn frob<T: Real>(m: &Mat2<T>) -> T {
    (m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]).sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub t0s: Vec<f64>,
    pub min_q: Vec<f64>,
    pub ancient_min_q: f64,
    /// `min Q` never increases as `t0` decreases.
    pub nonincreasing: bool,
    /// ... and strictly decreases.
    pub strictly_decreasing: bool,
    /// Every with-time-term minimum stays above the ancient one.
    pub above_ancient: bool,
}

impl MonotonicityReport {
    pub fn verdict(&self) -> Verdict {
        Verdict::from_pass(self.nonincreasing && self.above_ancient)
    }
}

/// `min Q` over the trajectory for each `t0` in a strictly decreasing list.
pub fn time_term_monotonicity<T: Real>(traj: &FlowTrajectory<T>, t0s: &[T]) -> Result<MonotonicityReport> {
    let first = traj.initial().t;
    if t0s.windows(2).any(|w| !(w[1] < w[0])) || t0s.iter().any(|&t| t > first) {
        return Err(Error::InvalidInput("t0 list must be strictly decreasing and not after the first snapshot".into()));
    }
    // one common snapshot set, so only the time term varies
    let skip_before = first + lit::<T>(EARLY_SKIP) * (traj.t_ext - traj.t0);
    let snaps: Vec<&FlowSnapshot<T>> = traj.snapshots.iter().filter(|s| s.t >= skip_before && s.t > first).collect();
    let min_over = |t0: T, mode: HarnackMode| -> Result<f64> {
        let mut m = f64::INFINITY;
        for s in &snaps {
            for q in harnack_min(s, t0, traj.alpha(), mode)? {
                m = m.min(q.to_f64_lossy());
            }
        }
        Ok(m)
    };
    let min_q = t0s.iter().map(|&t| min_over(t, HarnackMode::WithTimeTerm)).collect::<Result<Vec<_>>>()?;
    let ancient_min_q = min_over(first, HarnackMode::Ancient)?;
    Ok(MonotonicityReport {
        t0s: t0s.iter().map(|t| t.to_f64_lossy()).collect(),
        nonincreasing: min_q.windows(2).all(|w| w[1] <= w[0]),
        strictly_decreasing: min_q.windows(2).all(|w| w[1] < w[0]),
        above_ancient: min_q.iter().all(|&q| q >= ancient_min_q),
        min_q,
        ancient_min_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SupportCurve;
    use crate::spectral::DiffScheme;
    use crate::speed::SpeedSpec;

    fn circle_snapshot(alpha: f64, t: f64) -> FlowSnapshot<f64> {
        let r = (1.0 - (1.0 + alpha) * t).powf(1.0 / (1.0 + alpha));
        let c = SupportCurve::circle(r, [0.0, 0.0], 64, DiffScheme::Spectral).unwrap();
        FlowSnapshot::new(t, c, &SpeedSpec::builtin("curvature", 1, alpha, None).unwrap()).unwrap()
    }

    #[test]
    fn mcf_circle_closed_form() {
        let s = circle_snapshot(1.0, 0.25);
        let q = harnack_min(&s, 0.0, 1.0, HarnackMode::WithTimeTerm).unwrap();
        let expected = 4.0 * 2f64.sqrt();
        assert!(q.iter().all(|v| ((v - expected) / expected).abs() < 1e-10), "{}", q[0]);
    }

    #[test]
    fn alpha3_circle_closed_form() {
        let s = circle_snapshot(3.0, 0.125);
        let q = harnack_min(&s, 0.0, 3.0, HarnackMode::WithTimeTerm).unwrap();
        let expected = 3.0 * 0.5f64.powf(-1.75) + 6.0 * 0.5f64.powf(-0.75);
        assert!(((q[7] - expected) / expected).abs() < 1e-10);
        let a = harnack_min(&s, 0.0, 3.0, HarnackMode::Ancient).unwrap();
        assert!(((a[7] - 3.0 * 0.5f64.powf(-1.75)) / a[7]).abs() < 1e-10);
    }

    #[test]
    fn sampled_directions_bound_the_minimum() {
        let c = SupportCurve::ellipse(2.0, 1.0, [0.0, 0.0], 128, DiffScheme::Spectral).unwrap();
        let s = FlowSnapshot::new(0.1, c, &SpeedSpec::builtin("curvature", 1, 1.0, None).unwrap()).unwrap();
        let q = harnack_min(&s, 0.0, 1.0, HarnackMode::WithTimeTerm).unwrap();
        for j in [0, 17, 40, 99] {
            let mut best_coarse = f64::INFINITY;
            let mut best_fine = f64::INFINITY;
            for i in -400..=400 {
                let v = i as f64 * 0.01;
                let qv = harnack_quadratic(&s, j, 0.0, 1.0, HarnackMode::WithTimeTerm, v);
                assert!(qv >= q[j] - 1e-12);
                best_fine = best_fine.min(qv);
                if i % 10 == 0 {
                    best_coarse = best_coarse.min(qv);
                }
            }
            assert!(best_fine - q[j] <= best_coarse - q[j]);
            assert!(best_fine - q[j] < 1e-3);
        }
    }

    #[test]
    fn time_term_requires_later_snapshot() {
        let s = circle_snapshot(1.0, 0.0);
        assert!(harnack_min(&s, 0.0, 1.0, HarnackMode::WithTimeTerm).is_err());
        assert!(harnack_min(&s, 0.0, 1.0, HarnackMode::Ancient).is_ok());
    }

    #[test]
    fn circle_intrinsic_hessian_matches_hemisphere() {
        // MCF circle: w = sqrt(1 - |x|²); at |x| = r, D²w has tangential entry -1/w and
        // normal entry -1/w³.
        let t = 0.2;
        let s = circle_snapshot(1.0, t);
        let r = (1.0 - 2.0 * t).sqrt();
        let w = (1.0 - r * r).sqrt();
        let m = intrinsic_hessian(&s, 5, 0.0, 1.0);
        assert!((m[0][0] + 1.0 / w).abs() < 1e-10);
        assert!((m[1][1] + 1.0 / w.powi(3)).abs() < 1e-9);
        assert!(m[0][1].abs() < 1e-10);
    }
}

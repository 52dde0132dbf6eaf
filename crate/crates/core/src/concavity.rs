//! Concavity tests for transformed arrival-time fields: the largest Hessian eigenvalue
//! over valid cells, a seeded search over Korevaar's concavity function
//! `Z(r, x, y) = w(rx + (1-r)y) - (r w(x) + (1-r) w(y))`, and the finite-`t_ref` proxy for
//! the ancient-solution statement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrival::{ArrivalField, HessianRoute, TransformKind, TransformedField};
use crate::error::{Error, Result};
use crate::linalg::sym2_eigenvalues;
use crate::scalar::{lit, Point, Real};
use crate::speed::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcavityMethod {
    Hessian,
    KorevaarZ,
    AncientProxy,
}

/// Where the worst value was found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConcavityWitness {
    Cell { i: usize, j: usize, x: [f64; 2] },
    Triple { r: f64, x: [f64; 2], y: [f64; 2] },
    None,
}

/// Worst value at one resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub dx: f64,
    pub worst: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub method: ConcavityMethod,
    pub kind: Option<TransformKind>,
    /// Max Hessian eigenvalue (Hessian, proxy) or min Z (Korevaar).
    pub worst_value: f64,
    pub verdict: Verdict,
    pub witness: ConcavityWitness,
    pub tolerance: f64,
    /// Cells or triples that entered the statistic.
    pub evaluated: usize,
    /// Triples rejected because a point could not be interpolated.
    pub skipped: usize,
    /// Proxy only: largest Rayleigh quotient along `Du`.
    pub gradient_margin: Option<f64>,
    pub refinement_trend: Vec<TrendPoint>,
}

impl ConcavityReport {
    /// Size of the violation: positive part of the worst value in the failing direction.
    pub fn violation(&self) -> f64 {
        violation(self.method, self.worst_value)
    }

    /// Whether the violation never grows along the refinement trend (coarse to fine).
    pub fn improving_monotonically(&self) -> bool {
        let v: Vec<f64> = self.refinement_trend.iter().map(|p| violation(self.method, p.worst)).collect();
        v.windows(2).all(|w| w[1] <= w[0])
    }

    fn judge(&mut self) {
        self.verdict = Verdict::from_pass(match self.method {
            ConcavityMethod::KorevaarZ => self.worst_value >= -self.tolerance,
            _ => self.worst_value <= self.tolerance,
        });
    }
}

fn violation(method: ConcavityMethod, worst: f64) -> f64 {
    match method {
        ConcavityMethod::KorevaarZ => (-worst).max(0.0),
        _ => worst.max(0.0),
    }
}

/// Attaches a refinement trend (coarse to fine) to the finest report.
pub fn with_trend(mut finest: ConcavityReport, levels: &[(f64, &ConcavityReport)]) -> ConcavityReport {
    finest.refinement_trend = levels.iter().map(|(dx, r)| TrendPoint { dx: *dx, worst: r.worst_value }).collect();
    finest
}

/// Largest eigenvalue of `D²w` over valid cells.
pub fn hessian_concavity<T: Real>(field: &TransformedField<'_, T>, tol: f64, route: HessianRoute) -> ConcavityReport {
    let src = field.source;
    let nodes = src.valid_nodes();
    let vals: Vec<Option<f64>> = nodes
        .par_iter()
        .map(|&(i, j)| field.node_derivatives(i, j, route).map(|d| d.max_eigenvalue().to_f64_lossy()))
        .collect();
    let mut report = max_over_cells(src, &nodes, &vals, tol, ConcavityMethod::Hessian);
    report.kind = Some(field.kind);
    report
}

fn max_over_cells<T: Real>(
    src: &ArrivalField<T>,
    nodes: &[(usize, usize)],
    vals: &[Option<f64>],
    tol: f64,
    method: ConcavityMethod,
) -> ConcavityReport {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = ConcavityWitness::None;
    let mut evaluated = 0;
    for (&(i, j), v) in nodes.iter().zip(vals) {
        let Some(v) = *v else { continue };
        evaluated += 1;
        // NaN counts as a failure
        if v > worst || v.is_nan() && !worst.is_nan() {
            worst = v;
            let p = src.grid.node(i, j);
            witness = ConcavityWitness::Cell { i, j, x: [p[0].to_f64_lossy(), p[1].to_f64_lossy()] };
        }
    }
    let mut r = ConcavityReport {
        method,
        kind: None,
        worst_value: worst,
        verdict: Verdict::Fail,
        witness,
        tolerance: tol,
        evaluated,
        skipped: nodes.len() - evaluated,
        gradient_margin: None,
        refinement_trend: Vec::new(),
    };
    r.judge();
    r
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZSearchOptions {
    /// Number of random triples.
    pub triples: usize,
    /// Best candidates refined by coordinate descent.
    pub refine: usize,
    pub seed: u64,
    /// Rejection-sampling attempts per point before a triple is dropped.
    pub max_attempts: usize,
}

impl Default for ZSearchOptions {
    fn default() -> Self {
        Self { triples: 100_000, refine: 32, seed: 0, max_attempts: 64 }
    }
}

/// `Z(r, x, y)`, or `None` when any of the three points cannot be interpolated.
pub fn z_value<T: Real>(field: &TransformedField<'_, T>, r: T, x: Point<T>, y: Point<T>) -> Option<T> {
    let s = T::one() - r;
    let z = [r * x[0] + s * y[0], r * x[1] + s * y[1]];
    let wz = field.value_at(z)?;
    let wx = field.value_at(x)?;
    let wy = field.value_at(y)?;
    Some(wz - (r * wx + s * wy))
}

#[derive(Clone, Copy, Debug)]
struct Triple {
    r: f64,
    x: [f64; 2],
    y: [f64; 2],
    z: f64,
}

/// Seeded search for the minimum of `Z` followed by coordinate descent on the best
/// candidates. Triple `m` draws from its own ChaCha stream, so results do not depend on
/// the thread count.
pub fn korevaar_z_search<T: Real>(field: &TransformedField<'_, T>, opts: &ZSearchOptions, tol: f64) -> ConcavityReport {
    let src = field.source;
    let (lo, hi) = readable_box(src);
    let eval = |r: f64, x: [f64; 2], y: [f64; 2]| -> Option<f64> {
        let p = |a: [f64; 2]| [lit::<T>(a[0]), lit::<T>(a[1])];
        z_value(field, lit(r), p(x), p(y)).map(|v| v.to_f64_lossy())
    };
    let draw_point = |rng: &mut ChaCha8Rng| -> Option<[f64; 2]> {
        for _ in 0..opts.max_attempts {
            let p = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            if field.value_at([lit(p[0]), lit(p[1])]).is_some() {
                return Some(p);
            }
        }
        None
    };
    let samples: Vec<Option<Triple>> = (0..opts.triples)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(m as u64);
            let x = draw_point(&mut rng)?;
            let y = draw_point(&mut rng)?;
            let r: f64 = rng.random();
            eval(r, x, y).map(|z| Triple { r, x, y, z })
        })
        .collect();
    let skipped = samples.iter().filter(|s| s.is_none()).count();
    let mut found: Vec<Triple> = samples.into_iter().flatten().collect();
    // stable sort keeps index order among ties
    found.sort_by(|a, b| a.z.total_cmp(&b.z));
    let h0 = 4.0 * src.grid.spacing().to_f64_lossy();
    let refined: Vec<Triple> = found
        .iter()
        .take(opts.refine)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|t| coordinate_descent(**t, h0, &eval))
        .collect();
    let best = refined
        .iter()
        .chain(found.iter().skip(opts.refine))
        .fold(None::<Triple>, |acc, t| match acc {
            Some(a) if a.z <= t.z => Some(a),
            _ => Some(*t),
        });
    let mut report = ConcavityReport {
        method: ConcavityMethod::KorevaarZ,
        kind: Some(field.kind),
        worst_value: best.map_or(f64::NAN, |t| t.z),
        verdict: Verdict::Fail,
        witness: best.map_or(ConcavityWitness::None, |t| ConcavityWitness::Triple { r: t.r, x: t.x, y: t.y }),
        tolerance: tol,
        evaluated: found.len(),
        skipped,
        gradient_margin: None,
        refinement_trend: Vec::new(),
    };
    report.judge();
    report
}

fn coordinate_descent(mut t: Triple, h0: f64, eval: &impl Fn(f64, [f64; 2], [f64; 2]) -> Option<f64>) -> Triple {
    let mut h = h0;
    let mut hr = 0.1;
    while h > h0 / 256.0 {
        let mut improved = false;
        for coord in 0..5 {
            for sign in [-1.0, 1.0] {
                let mut c = t;
                match coord {
                    0 => c.r = (c.r + sign * hr).clamp(0.0, 1.0),
                    1 | 2 => c.x[coord - 1] += sign * h,
                    _ => c.y[coord - 3] += sign * h,
                }
                if let Some(z) = eval(c.r, c.x, c.y) {
                    if z < t.z {
                        c.z = z;
                        t = c;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            h *= 0.5;
            hr *= 0.5;
        }
    }
    t
}

fn readable_box<T: Real>(f: &ArrivalField<T>) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for j in 0..f.grid.ny {
        for i in 0..f.grid.nx {
            if f.mask_at(i, j).readable() {
                let p = f.grid.node(i, j);
                for a in 0..2 {
                    lo[a] = lo[a].min(p[a].to_f64_lossy());
                    hi[a] = hi[a].max(p[a].to_f64_lossy());
                }
            }
        }
    }
    (lo, hi)
}

/// Largest eigenvalue of `D²u - c_α Du⊗Du/(u - t_ref)`, `c_α = α/(1+α)`, over valid cells.
/// At `t_ref = t0` this is `w^α D²w`; as `t_ref` decreases the subtracted term shrinks.
pub fn ancient_proxy_check<T: Real>(field: &ArrivalField<T>, t_ref: T, tol: f64) -> Result<ConcavityReport> {
    if t_ref > field.t0 {
        return Err(Error::InvalidInput(format!("t_ref = {t_ref} exceeds t0 = {}", field.t0)));
    }
    let c = field.alpha / (T::one() + field.alpha);
    let nodes = field.valid_nodes();
    let vals: Vec<Option<(f64, f64)>> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let d = field.derivatives_at_node(i, j)?;
            let u = field.u[field.grid.index(i, j)];
            let g = d.grad;
            let s = c / (u - t_ref);
            let m = [
                [d.hess[0][0] - s * g[0] * g[0], d.hess[0][1] - s * g[0] * g[1]],
                [d.hess[1][0] - s * g[1] * g[0], d.hess[1][1] - s * g[1] * g[1]],
            ];
            let top = sym2_eigenvalues(m[0][0], m[0][1], m[1][1]).1;
            let n2 = g[0] * g[0] + g[1] * g[1];
            let along = (g[0] * (m[0][0] * g[0] + m[0][1] * g[1]) + g[1] * (m[1][0] * g[0] + m[1][1] * g[1])) / n2;
            Some((top.to_f64_lossy(), along.to_f64_lossy()))
        })
        .collect();
    let tops: Vec<Option<f64>> = vals.iter().map(|v| v.map(|p| p.0)).collect();
    let mut report = max_over_cells(field, &nodes, &tops, tol, ConcavityMethod::AncientProxy);
    report.gradient_margin = vals.iter().flatten().map(|p| p.1).reduce(f64::max);
    Ok(report)
}

/// Proxy reports for a decreasing list of reference times.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AncientSweep {
    pub t_refs: Vec<f64>,
    pub reports: Vec<ConcavityReport>,
    /// Worst values are nondecreasing as `t_ref` decreases, up to roundoff.
    pub worst_monotone: bool,
    /// Gradient-direction margins strictly increase as `t_ref` decreases.
    pub gradient_strict: bool,
}

impl AncientSweep {
    /// Margins are only reported for `t_ref < t0`: a finite-time flow need not satisfy the
    /// ancient inequality there. The sweep passes when the margins move the right way and
    /// the first member, which is the concavity of `w` when `t_ref = t0`, passes.
    pub fn verdict(&self) -> Verdict {
        let first = self.reports.first().is_some_and(|r| r.verdict.passed());
        Verdict::from_pass(first && self.worst_monotone && self.gradient_strict)
    }
}

pub fn ancient_proxy_sweep<T: Real>(field: &ArrivalField<T>, t_refs: &[T], tol: f64) -> Result<AncientSweep> {
    if t_refs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("t_ref list must be strictly decreasing".into()));
    }
    let reports = t_refs.iter().map(|&t| ancient_proxy_check(field, t, tol)).collect::<Result<Vec<_>>>()?;
    let worst_monotone = reports.windows(2).all(|w| w[1].worst_value >= w[0].worst_value - 1e-9 * (1.0 + w[0].worst_value.abs()));
    let gradient_strict = reports.windows(2).all(|w| match (w[0].gradient_margin, w[1].gradient_margin) {
        (Some(a), Some(b)) => b > a,
        _ => false,
    });
    Ok(AncientSweep {
        t_refs: t_refs.iter().map(|t| t.to_f64_lossy()).collect(),
        reports,
        worst_monotone,
        gradient_strict,
    })
}

//! Configuration-driven runs: one JSON document picks an initial curve, a speed, grid
//! sizes, tolerances and a list of checks; [`run_experiment`] executes them in dependency
//! order (flow, arrival, verifiers) and writes `report.json` plus CSV/SVG artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arrival::{ArrivalField, ArrivalOptions, CellMask, GridSpec, HessianRoute, Interpolation, StencilOrder, TransformKind};
use crate::concavity::{self, ConcavityReport, ZSearchOptions};
use crate::error::{Error, Result};
use crate::flow::{FlowOptions, FlowSolver, FlowTrajectory};
use crate::geometry::SupportCurve;
use crate::harnack::{self, HarnackMode};
use crate::spectral::DiffScheme;
use crate::speed::{SpeedSpec, Verdict};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Circle {
        #[serde(default = "one")]
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    Ellipse {
        a: f64,
        b: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// `h(θ) = Σ cos[k] cos kθ + sin[k] sin kθ` about `origin`.
    Fourier {
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
        #[serde(default)]
        origin: [f64; 2],
    },
}

fn one() -> f64 {
    1.0
}

impl CurveSpec {
    pub fn build(&self, n: usize, scheme: DiffScheme) -> Result<SupportCurve<f64>> {
        match self {
            CurveSpec::Circle { radius, center } => SupportCurve::circle(*radius, *center, n, scheme),
            CurveSpec::Ellipse { a, b, center } => SupportCurve::ellipse(*a, *b, *center, n, scheme),
            CurveSpec::Fourier { cos, sin, origin } => SupportCurve::fourier(cos, sin, *origin, n, scheme),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedConfig {
    pub name: String,
    pub alpha: f64,
    #[serde(default = "dim_one")]
    pub dimension: usize,
    #[serde(default)]
    pub p: Option<f64>,
}

fn dim_one() -> usize {
    1
}

impl SpeedConfig {
    pub fn build(&self) -> Result<SpeedSpec<f64>> {
        SpeedSpec::builtin(&self.name, self.dimension, self.alpha, self.p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub theta_count: usize,
    /// Cells across the initial bounding box in x.
    #[serde(default)]
    pub grid_nx: Option<usize>,
    /// Cell size; used when `grid_nx` is absent.
    #[serde(default)]
    pub grid_dx: Option<f64>,
}

impl GridConfig {
    fn spec(&self) -> Result<GridSpec> {
        match (self.grid_nx, self.grid_dx) {
            (Some(nx), None) => Ok(GridSpec::Cells { nx }),
            (None, Some(dx)) if dx > 0.0 => Ok(GridSpec::Spacing { dx }),
            (None, None) => Ok(GridSpec::Spacing { dx: 1.0 / 128.0 }),
            _ => Err(Error::InvalidInput("give exactly one of grid_nx and a positive grid_dx".into())),
        }
    }

    /// The next level of a convergence study.
    fn refined(&self) -> Self {
        Self {
            theta_count: self.theta_count * 2,
            grid_nx: self.grid_nx.map(|n| n * 2),
            grid_dx: self.grid_dx.map(|d| d / 2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub extinction: f64,
    pub arrival: f64,
    pub residual: f64,
    pub hessian: f64,
    pub korevaar_z: f64,
    pub harnack: f64,
    pub equivalence: f64,
    pub gradient: f64,
    pub inverse_concavity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            extinction: 1e-5,
            arrival: 1e-4,
            residual: 1e-2,
            hessian: 1e-3,
            korevaar_z: 1e-4,
            harnack: 1e-3,
            equivalence: 5e-2,
            gradient: 5e-2,
            inverse_concavity: 1e-13,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Flow,
    Arrival,
    Residual,
    GradientIdentity,
    ConcavityHessian,
    ConcavityZ,
    Harnack,
    Equivalence,
    InverseConcavity,
    LogConcavity,
    AncientProxy,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::Flow,
        Check::Arrival,
        Check::Residual,
        Check::GradientIdentity,
        Check::ConcavityHessian,
        Check::ConcavityZ,
        Check::Harnack,
        Check::Equivalence,
        Check::InverseConcavity,
        Check::LogConcavity,
        Check::AncientProxy,
    ];

    fn needs_flow(self) -> bool {
        self != Check::InverseConcavity
    }

    fn needs_field(self) -> bool {
        !matches!(self, Check::Flow | Check::Harnack | Check::InverseConcavity)
    }

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrivalConfig {
    pub r_excl: Option<f64>,
    pub boundary_layer_cells: f64,
    pub stencil: StencilOrder,
    pub interpolation: Interpolation,
    pub hessian_route: HessianRoute,
}

impl Default for ArrivalConfig {
    fn default() -> Self {
        let d = ArrivalOptions::<f64>::default();
        Self {
            r_excl: None,
            boundary_layer_cells: d.boundary_layer_cells,
            stencil: d.stencil,
            interpolation: d.interpolation,
            hessian_route: HessianRoute::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub segments: usize,
    pub samples_per_segment: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { segments: 10_000, samples_per_segment: 9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub initial_curve: CurveSpec,
    pub speed: SpeedConfig,
    pub grids: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "all_checks")]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scheme: DiffScheme,
    #[serde(default)]
    pub flow: FlowOptions<f64>,
    #[serde(default)]
    pub arrival: ArrivalConfig,
    #[serde(default = "default_z")]
    pub z_search: ZSearchConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    /// Boundary points sampled by the gradient identity and equivalence checks.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Reference times for the ancient proxy, as offsets from `t0` (strictly decreasing).
    #[serde(default = "default_t_refs")]
    pub t_ref_offsets: Vec<f64>,
}

/// Z-search settings; the seed comes from the top-level config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZSearchConfig {
    pub triples: usize,
    pub refine: usize,
}

impl Default for ZSearchConfig {
    fn default() -> Self {
        Self { triples: 100_000, refine: 32 }
    }
}

fn all_checks() -> Vec<Check> {
    Check::ALL.to_vec()
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_z() -> ZSearchConfig {
    ZSearchConfig::default()
}
fn default_samples() -> usize {
    400
}
fn default_t_refs() -> Vec<f64> {
    vec![0.0, -1.0, -10.0]
}

pub const PRESETS: [&str; 5] = ["circle_mcf", "circle_alpha3", "ellipse_mcf", "ellipse_alpha13", "fourier_blob_mcf"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let circle = CurveSpec::Circle { radius: 1.0, center: [0.0, 0.0] };
        let ellipse = CurveSpec::Ellipse { a: 2.0, b: 1.0, center: [0.0, 0.0] };
        let blob = CurveSpec::Fourier { cos: vec![1.0, 0.1, 0.1, 0.0], sin: vec![0.0, 0.0, 0.0, 0.04], origin: [0.0, 0.0] };
        let (curve, alpha) = match name {
            "circle_mcf" => (circle, 1.0),
            "circle_alpha3" => (circle, 3.0),
            "ellipse_mcf" => (ellipse, 1.0),
            "ellipse_alpha13" => (ellipse, 1.0 / 3.0),
            "fourier_blob_mcf" => (blob, 1.0),
            other => return Err(Error::InvalidInput(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
        };
        let mut tolerances = Tolerances::default();
        if matches!(curve, CurveSpec::Circle { .. }) {
            tolerances.residual = 1e-5;
            tolerances.gradient = 2e-3;
            tolerances.equivalence = 1e-2;
        }
        let cfg = Self {
            name: name.to_string(),
            initial_curve: curve,
            speed: SpeedConfig { name: "curvature".into(), alpha, dimension: 1, p: None },
            grids: GridConfig { theta_count: 256, grid_nx: None, grid_dx: Some(1.0 / 128.0) },
            tolerances,
            checks: all_checks(),
            seed: 0,
            output_dir: PathBuf::from("out").join(name),
            scheme: DiffScheme::Spectral,
            flow: FlowOptions::default(),
            arrival: ArrivalConfig::default(),
            z_search: ZSearchConfig::default(),
            classify: ClassifyConfig::default(),
            samples: default_samples(),
            t_ref_offsets: default_t_refs(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without running the flow.
    pub fn validate(&self) -> Result<()> {
        let speed = self.speed.build()?;
        if self.checks.is_empty() {
            return Err(Error::InvalidInput("no checks requested".into()));
        }
        if self.checks.iter().any(|c| c.needs_flow()) {
            if speed.dimension != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: speed.dimension });
            }
            self.initial_curve.build(self.grids.theta_count, self.scheme)?;
            self.grids.spec()?;
        }
        if self.t_ref_offsets.is_empty()
            || self.t_ref_offsets[0] > 0.0
            || self.t_ref_offsets.windows(2).any(|w| !(w[1] < w[0]))
        {
            return Err(Error::InvalidInput("t_ref_offsets must be nonpositive and strictly decreasing".into()));
        }
        Ok(())
    }

    fn arrival_options(&self) -> Result<ArrivalOptions<f64>> {
        Ok(ArrivalOptions {
            grid: self.grids.spec()?,
            boundary_layer_cells: self.arrival.boundary_layer_cells,
            r_excl: self.arrival.r_excl,
            stencil: self.arrival.stencil,
            interpolation: self.arrival.interpolation,
            ..ArrivalOptions::default()
        })
    }

    fn circle_radius(&self) -> Option<(f64, [f64; 2])> {
        match (&self.initial_curve, self.speed.name.as_str()) {
            (CurveSpec::Circle { radius, center }, "curvature" | "kappa") => Some((*radius, *center)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: Check,
    pub verdict: Verdict,
    pub summary: String,
    pub details: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub verdict: Verdict,
    pub checks: Vec<CheckResult>,
    pub flow: Option<Value>,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    /// 0 iff every requested check passed.
    pub fn exit_code(&self) -> i32 {
        if self.verdict.passed() {
            0
        } else {
            1
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// One line per check.
    pub fn verdict_lines(&self) -> Vec<String> {
        self.checks.iter().map(|c| format!("{:<18} {:?}  {}", c.check.name(), c.verdict, c.summary)).collect()
    }
}

/// Everything computed for one configuration, kept in memory for callers that need more
/// than the report.
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub trajectory: Option<FlowTrajectory<f64>>,
    pub field: Option<ArrivalField<f64>>,
}

/// Runs the requested checks and writes `report.json` and artifacts to `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let run = execute(cfg, true)?;
    Ok(run.report)
}

/// Like [`run_experiment`]; `write = false` keeps everything in memory.
pub fn execute(cfg: &ExperimentConfig, write: bool) -> Result<ExperimentRun> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    if write {
        fs::create_dir_all(out)?;
    }
    let mut checks: Vec<Check> = cfg.checks.clone();
    checks.sort();
    checks.dedup();
    let mut results = Vec::new();
    let mut artifacts = Vec::new();

    let speed = cfg.speed.build()?;
    let mut trajectory = None;
    let mut flow_error = None;
    if checks.iter().any(|c| c.needs_flow()) {
        let initial = cfg.initial_curve.build(cfg.grids.theta_count, cfg.scheme)?;
        let solver = FlowSolver::new(speed.clone(), cfg.flow.clone())?;
        info!("flow: N = {}, alpha = {}", cfg.grids.theta_count, speed.alpha);
        match solver.run(&initial, 0.0).and_then(|t| t.require_completed().map(|_| t)) {
            Ok(t) => {
                if write {
                    t.save_dir(&out.join("trajectory"))?;
                    artifacts.push("trajectory/meta.json".into());
                    artifacts.push("trajectory/snapshots.csv".into());
                    fs::write(out.join("curves.svg"), curves_svg(&t))?;
                    artifacts.push("curves.svg".into());
                }
                trajectory = Some(t);
            }
            Err(e) => flow_error = Some(e.to_string()),
        }
    }
    let mut field = None;
    let mut field_error = None;
    if let Some(t) = &trajectory {
        if checks.iter().any(|c| c.needs_field()) {
            info!("arrival: reconstructing on {:?}", cfg.grids.spec()?);
            match ArrivalField::reconstruct(t, &cfg.arrival_options()?) {
                Ok(f) => {
                    if write {
                        f.save(out)?;
                        artifacts.push("field.csv".into());
                        artifacts.push("field.json".into());
                    }
                    field = Some(f);
                }
                Err(e) => field_error = Some(e.to_string()),
            }
        }
    }

    for &check in &checks {
        info!("check {}", check.name());
        let res = if check.needs_flow() && trajectory.is_none() {
            Err(Error::IncompleteTrajectory(flow_error.clone().unwrap_or_default()))
        } else if check.needs_field() && field.is_none() {
            Err(Error::IncompleteTrajectory(field_error.clone().unwrap_or_else(|| "no arrival field".into())))
        } else {
            run_check(cfg, check, &speed, trajectory.as_ref(), field.as_ref())
        };
        let res = res.unwrap_or_else(|e| CheckResult {
            check,
            verdict: Verdict::Fail,
            summary: format!("error: {e}"),
            details: json!({ "error": e.to_string() }),
        });
        info!("{} -> {:?}: {}", check.name(), res.verdict, res.summary);
        results.push(res);
    }

    if write {
        if let Some(t) = &trajectory {
            if checks.contains(&Check::Harnack) {
                harnack::write_q_csv(t, t.t0, HarnackMode::WithTimeTerm, &out.join("harnack_q.csv"))?;
                artifacts.push("harnack_q.csv".into());
                if let Ok(r) = harnack::harnack_report(t, t.t0, HarnackMode::WithTimeTerm, cfg.tolerances.harnack) {
                    let pts: Vec<(f64, f64)> = r.per_snapshot.iter().map(|m| (m.t, m.min_q)).collect();
                    fs::write(out.join("q_trace.svg"), line_svg(&pts, "t", "min Q"))?;
                    artifacts.push("q_trace.svg".into());
                }
            }
        }
    }

    let verdict = Verdict::from_pass(results.iter().all(|r| r.verdict.passed()));
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        seed: cfg.seed,
        verdict,
        checks: results,
        flow: trajectory.as_ref().map(|t| {
            json!({
                "t0": t.t0, "t_ext": t.t_ext, "p_ext": t.p_ext, "steps": t.steps,
                "snapshots": t.snapshots.len(), "initial_inradius": t.initial_inradius,
            })
        }),
        artifacts,
        config: cfg.clone(),
    };
    if write {
        fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(ExperimentRun { report, trajectory, field })
}

fn concavity_result(check: Check, r: &ConcavityReport, label: &str) -> Result<CheckResult> {
    Ok(CheckResult {
        check,
        verdict: r.verdict,
        summary: format!("{label} {:.3e} (tol {:.1e}) at {}", r.worst_value, r.tolerance, serde_json::to_string(&r.witness)?),
        details: serde_json::to_value(r)?,
    })
}

fn run_check(
    cfg: &ExperimentConfig,
    check: Check,
    speed: &SpeedSpec<f64>,
    traj: Option<&FlowTrajectory<f64>>,
    field: Option<&ArrivalField<f64>>,
) -> Result<CheckResult> {
    let tol = &cfg.tolerances;
    let traj = || traj.ok_or_else(|| Error::IncompleteTrajectory("no trajectory".into()));
    let field = || field.ok_or_else(|| Error::IncompleteTrajectory("no arrival field".into()));
    match check {
        Check::Flow => {
            let t = traj()?;
            let (verdict, summary, exact) = match cfg.circle_radius() {
                Some((r, _)) => {
                    let a = speed.alpha;
                    let exact = t.t0 + r.powf(1.0 + a) / (1.0 + a);
                    let err = (t.t_ext - exact).abs();
                    (Verdict::from_pass(err <= tol.extinction), format!("T_ext {:.10} error {err:.2e}", t.t_ext), Some(exact))
                }
                None => (Verdict::Pass, format!("T_ext {:.10} at {:?}", t.t_ext, t.p_ext), None),
            };
            Ok(CheckResult {
                check,
                verdict,
                summary,
                details: json!({ "t_ext": t.t_ext, "p_ext": t.p_ext, "exact_t_ext": exact, "steps": t.steps }),
            })
        }
        Check::Arrival => {
            let f = field()?;
            let mono = f.ray_monotonicity(64, 4 * f.grid.nx.max(f.grid.ny));
            let mut details = json!({ "ray_increase": mono, "mask_counts": f.mask_counts(), "r_excl": f.r_excl });
            let (pass, summary) = match cfg.circle_radius() {
                Some((r, c)) => {
                    let a = speed.alpha;
                    let mut err: f64 = 0.0;
                    for j in 0..f.grid.ny {
                        for i in 0..f.grid.nx {
                            if f.mask_at(i, j).readable() {
                                let x = f.grid.node(i, j);
                                let d = (x[0] - c[0]).hypot(x[1] - c[1]);
                                let exact = f.t0 + (r.powf(1.0 + a) - d.powf(1.0 + a)) / (1.0 + a);
                                err = err.max((f.u[f.grid.index(i, j)] - exact).abs());
                            }
                        }
                    }
                    details["max_error"] = json!(err);
                    (err <= tol.arrival && mono <= 0.0, format!("max error vs closed form {err:.2e}"))
                }
                None => (mono <= 0.0, format!("largest increase along rays {mono:.2e}")),
            };
            Ok(CheckResult { check, verdict: Verdict::from_pass(pass), summary, details })
        }
        Check::Residual => {
            let s = field()?.level_set_residual_sweep(speed)?;
            Ok(CheckResult {
                check,
                verdict: Verdict::from_pass(s.max_abs <= tol.residual),
                summary: format!("max |residual| {:.2e} over {} cells (tol {:.1e})", s.max_abs, s.cells, tol.residual),
                details: serde_json::to_value(&s)?,
            })
        }
        Check::GradientIdentity => {
            let r = field()?.gradient_identity_residual(traj()?, cfg.samples);
            Ok(CheckResult {
                check,
                verdict: Verdict::from_pass(r.samples_used > 0 && r.max_rel <= tol.gradient),
                summary: format!("max relative error {:.2e} over {} samples", r.max_rel, r.samples_used),
                details: serde_json::to_value(&r)?,
            })
        }
        Check::ConcavityHessian => {
            let w = field()?.transformed(TransformKind::SqrtPower);
            concavity_result(check, &concavity::hessian_concavity(&w, tol.hessian, cfg.arrival.hessian_route), "max eigenvalue")
        }
        Check::LogConcavity => {
            let w = field()?.transformed(TransformKind::Log);
            concavity_result(check, &concavity::hessian_concavity(&w, tol.hessian, cfg.arrival.hessian_route), "max eigenvalue")
        }
        Check::ConcavityZ => {
            let w = field()?.transformed(TransformKind::SqrtPower);
            let opts = ZSearchOptions { triples: cfg.z_search.triples, refine: cfg.z_search.refine, seed: cfg.seed, ..Default::default() };
            concavity_result(check, &concavity::korevaar_z_search(&w, &opts, tol.korevaar_z), "min Z")
        }
        Check::AncientProxy => {
            let f = field()?;
            let t_refs: Vec<f64> = cfg.t_ref_offsets.iter().map(|o| f.t0 + o).collect();
            let s = concavity::ancient_proxy_sweep(f, &t_refs, tol.hessian)?;
            let worst: Vec<String> = s.reports.iter().map(|r| format!("{:.3e}", r.worst_value)).collect();
            Ok(CheckResult {
                check,
                verdict: s.verdict(),
                summary: format!("worst [{}], monotone {}, gradient strict {}", worst.join(", "), s.worst_monotone, s.gradient_strict),
                details: serde_json::to_value(&s)?,
            })
        }
        Check::Harnack => {
            let t = traj()?;
            let r = harnack::harnack_report(t, t.t0, HarnackMode::WithTimeTerm, tol.harnack)?;
            Ok(CheckResult {
                check,
                verdict: r.verdict,
                summary: format!("min Q {:.4e} at t = {:.6}, theta = {:.4}", r.min_q, r.witness_t, r.witness_theta),
                details: serde_json::to_value(&r)?,
            })
        }
        Check::Equivalence => {
            let r = harnack::equivalence_check(traj()?, field()?, cfg.samples, tol.hessian, tol.harnack)?;
            Ok(CheckResult {
                check,
                verdict: Verdict::from_pass(r.samples_used > 0 && r.max_rel <= tol.equivalence && r.signs_agree),
                summary: format!("max relative discrepancy {:.2e}, signs agree {}", r.max_rel, r.signs_agree),
                details: serde_json::to_value(&r)?,
            })
        }
        Check::InverseConcavity => {
            let mut s = speed.clone();
            let r = s.classify_inverse_concavity(cfg.classify.segments, cfg.classify.samples_per_segment, tol.inverse_concavity, cfg.seed)?;
            let summary = match &r.witness {
                Some(w) => format!("violation {:.3e} on segment {}", w.violation, w.index),
                None => format!("no violation on {} segments", r.samples),
            };
            Ok(CheckResult { check, verdict: r.verdict, summary, details: serde_json::to_value(&r)? })
        }
    }
}

/// One row of a convergence table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub theta_count: usize,
    pub dx: f64,
    pub worst_z: f64,
    pub worst_hessian: f64,
    pub worst_q: f64,
    pub max_residual: f64,
    pub gradient_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `log2(e_k / e_{k+1})` of the max residual between consecutive levels.
    pub residual_orders: Vec<f64>,
    pub gradient_orders: Vec<f64>,
}

/// Reruns the scenario `levels` times, doubling `theta_count` and the grid resolution.
pub fn convergence_study(cfg: &ExperimentConfig, levels: usize) -> Result<ConvergenceTable> {
    if levels < 2 {
        return Err(Error::InvalidInput(format!("a convergence study needs at least 2 levels, got {levels}")));
    }
    cfg.validate()?;
    let mut level_cfg = cfg.clone();
    let mut rows = Vec::with_capacity(levels);
    for _ in 0..levels {
        let speed = level_cfg.speed.build()?;
        let initial = level_cfg.initial_curve.build(level_cfg.grids.theta_count, level_cfg.scheme)?;
        let traj = FlowSolver::new(speed.clone(), level_cfg.flow.clone())?.run(&initial, 0.0)?;
        traj.require_completed()?;
        let field = ArrivalField::reconstruct(&traj, &level_cfg.arrival_options()?)?;
        let w = field.transformed(TransformKind::SqrtPower);
        let tol = &level_cfg.tolerances;
        let z_opts = ZSearchOptions {
            triples: level_cfg.z_search.triples,
            refine: level_cfg.z_search.refine,
            seed: level_cfg.seed,
            ..Default::default()
        };
        rows.push(ConvergenceRow {
            theta_count: level_cfg.grids.theta_count,
            dx: field.grid.dx,
            worst_z: concavity::korevaar_z_search(&w, &z_opts, tol.korevaar_z).worst_value,
            worst_hessian: concavity::hessian_concavity(&w, tol.hessian, level_cfg.arrival.hessian_route).worst_value,
            worst_q: harnack::harnack_report(&traj, traj.t0, HarnackMode::WithTimeTerm, tol.harnack)?.min_q,
            max_residual: field.level_set_residual_sweep(&speed)?.max_abs,
            gradient_error: field.gradient_identity_residual(&traj, level_cfg.samples).max_rel,
        });
        info!("level N = {}: {:?}", level_cfg.grids.theta_count, rows.last());
        level_cfg.grids = level_cfg.grids.refined();
    }
    let orders = |f: fn(&ConvergenceRow) -> f64| rows.windows(2).map(|w| (f(&w[0]) / f(&w[1])).log2()).collect();
    Ok(ConvergenceTable { residual_orders: orders(|r| r.max_residual), gradient_orders: orders(|r| r.gradient_error), rows })
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

const SVG_SIZE: f64 = 480.0;

/// Snapshot curves, at most 24 of them, evenly spread over the run.
pub fn curves_svg(traj: &FlowTrajectory<f64>) -> String {
    let (lo, hi) = traj.initial().curve.bounding_box().unwrap_or(([-1.0, -1.0], [1.0, 1.0]));
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]) * 1.1;
    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let map = |p: [f64; 2]| {
        ((p[0] - cx) / span * SVG_SIZE + SVG_SIZE / 2.0, SVG_SIZE / 2.0 - (p[1] - cy) / span * SVG_SIZE)
    };
    let mut s = svg_open();
    let k = traj.snapshots.len();
    let stride = k.div_ceil(24).max(1);
    for snap in traj.snapshots.iter().step_by(stride) {
        let Ok(pts) = snap.curve.boundary_points() else { continue };
        let mut path = String::new();
        for (i, bp) in pts.iter().enumerate() {
            let (x, y) = map(bp.position);
            let _ = write!(path, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = writeln!(s, r#"<path d="{path}Z" fill="none" stroke="steelblue" stroke-width="1"/>"#);
    }
    let (px, py) = map(traj.p_ext);
    let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="crimson"/>"#);
    s.push_str("</svg>\n");
    s
}

/// Single polyline with axis labels.
pub fn line_svg(points: &[(f64, f64)], xlabel: &str, ylabel: &str) -> String {
    let mut s = svg_open();
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (wx, wy) = ((x1 - x0).max(1e-300), (y1 - y0).max(1e-300));
    let m = 40.0;
    let inner = SVG_SIZE - 2.0 * m;
    let mut path = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let px = m + (x - x0) / wx * inner;
        let py = SVG_SIZE - m - (y - y0) / wy * inner;
        let _ = write!(path, "{}{px:.2},{py:.2} ", if i == 0 { "M" } else { "L" });
    }
    let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{xlabel} [{x0:.3e}, {x1:.3e}]</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE - 10.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="12">{ylabel} [{y0:.3e}, {y1:.3e}]</text>"#);
    s.push_str("</svg>\n");
    s
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Counts cells of each mask class in a field, for summaries.
pub fn mask_summary(f: &ArrivalField<f64>) -> Value {
    let c = f.mask_counts();
    let names = [CellMask::Interior, CellMask::BoundaryLayer, CellMask::ExtinctionBall, CellMask::Exterior];
    let mut m = serde_json::Map::new();
    for (n, v) in names.iter().zip(c) {
        m.insert(serde_json::to_value(n).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(), json!(v));
    }
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let text = r#"{"initial_curve": {"type": "circle"}, "speed": {"name": "curvature", "alpha_": 1.0},
                       "grids": {"theta_count": 64}}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Json(_))));
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let c = ExperimentConfig::preset(p).unwrap();
            let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn one_level_is_a_usage_error() {
        let c = ExperimentConfig::preset("circle_mcf").unwrap();
        assert!(matches!(convergence_study(&c, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn min_curvature_classification_fails() {
        let mut c = ExperimentConfig::preset("circle_mcf").unwrap();
        c.speed = SpeedConfig { name: "min_curvature".into(), alpha: 1.0, dimension: 2, p: None };
        c.checks = vec![Check::InverseConcavity];
        c.classify.segments = 500;
        let run = execute(&c, false).unwrap();
        assert_eq!(run.report.exit_code(), 1);
        assert!(run.report.checks[0].details["witness"].is_object());
    }

    #[test]
    fn flow_checks_need_curve_speeds() {
        let mut c = ExperimentConfig::preset("circle_mcf").unwrap();
        c.speed = SpeedConfig { name: "mean".into(), alpha: 1.0, dimension: 2, p: None };
        assert!(matches!(c.validate(), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn small_circle_run_passes() {
        let mut c = ExperimentConfig::preset("circle_mcf").unwrap();
        c.grids = GridConfig { theta_count: 64, grid_nx: None, grid_dx: Some(1.0 / 32.0) };
        c.z_search.triples = 2_000;
        c.classify.segments = 200;
        c.tolerances.residual = 1e-4;
        c.samples = 100;
        let run = execute(&c, false).unwrap();
        for r in &run.report.checks {
            assert!(r.verdict.passed(), "{:?}: {}", r.check, r.summary);
        }
    }
}

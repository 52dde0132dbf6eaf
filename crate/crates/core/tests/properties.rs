use arrivallab::arrival::{ArrivalField, ArrivalOptions, Grid, Interpolation, TransformKind};
use arrivallab::concavity::z_value;
use arrivallab::flow::{FlowOptions, FlowSnapshot, FlowSolver};
use arrivallab::geometry::SupportCurve;
use arrivallab::linalg::SymMatrix;
use arrivallab::spectral::DiffScheme;
use arrivallab::speed::SpeedSpec;
use arrivallab::{SupportCurve32, SupportCurve64};
use proptest::prelude::*;

fn blob(c: [f64; 3], s: [f64; 3], n: usize) -> SupportCurve64 {
    SupportCurve::fourier(&[1.0, c[0], c[1], c[2]], &[0.0, s[0], s[1], s[2]], [0.0, 0.0], n, DiffScheme::Spectral).unwrap()
}

// Fourier coefficients small enough that h'' + h stays positive.
fn coeffs() -> impl Strategy<Value = [f64; 3]> {
    [-0.06..0.06f64, -0.04..0.04f64, -0.02..0.02f64]
}

fn spd2() -> impl Strategy<Value = SymMatrix<f64>> {
    (0.1..10.0f64, 0.1..10.0f64, 0.0..std::f64::consts::PI).prop_map(|(a, b, phi)| {
        let (s, c) = phi.sin_cos();
        SymMatrix::from_spectral(&[c, s, -s, c], &[a, b])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dual_is_an_involution(r in spd2(), which in 0usize..4) {
        let name = ["mean", "gauss_root", "harmonic", "min_curvature"][which];
        let f = SpeedSpec::<f64>::builtin(name, 2, 1.0, None).unwrap();
        let a = f.evaluate(&r).unwrap();
        let b = f.dual().dual().evaluate(&r).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let d = f.dual_evaluate(&r).unwrap();
        prop_assert!((d - f.dual().evaluate(&r).unwrap()).abs() <= 1e-12 * d.abs().max(1.0));
    }

    #[test]
    fn curvature_ignores_the_origin(c in coeffs(), s in coeffs(), vx in -0.2..0.2f64, vy in -0.2..0.2f64) {
        let curve = blob(c, s, 128);
        let moved = curve.with_origin_shift([vx, vy]);
        for (a, b) in curve.curvatures().unwrap().iter().zip(moved.curvatures().unwrap()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for j in (0..128).step_by(16) {
            let p = curve.boundary_point(j).unwrap().position;
            let q = moved.boundary_point(j).unwrap().position;
            prop_assert!((p[0] - q[0]).abs() < 1e-10 && (p[1] - q[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn curvature_scales_inversely(c in coeffs(), s in coeffs(), lambda in 0.2..5.0f64) {
        let curve = blob(c, s, 128);
        let big = curve.scaled(lambda);
        for (a, b) in curve.curvatures().unwrap().iter().zip(big.curvatures().unwrap()) {
            prop_assert!((a / lambda - b).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn containment_grows_with_dilation(c in coeffs(), s in coeffs(), x in -1.2..1.2f64, y in -1.2..1.2f64, lambda in 1.0..2.0f64) {
        let curve = blob(c, s, 128);
        if curve.contains([x, y]) {
            prop_assert!(curve.scaled(lambda).contains([x, y]));
        }
    }

    #[test]
    fn z_endpoints_and_swap(x0 in -0.6..0.6f64, x1 in -0.6..0.6f64, y0 in -0.6..0.6f64, y1 in -0.6..0.6f64, r in 0.0..1.0f64) {
        let grid = Grid::covering([-1.0, -1.0], [1.0, 1.0], 1.0 / 32.0, 4, [0.0, 0.0]).unwrap();
        let opts = ArrivalOptions { interpolation: Interpolation::Bicubic, ..ArrivalOptions::default() };
        let f = ArrivalField::from_fn(grid, 0.0, 0.5, [0.0, 0.0], 1.0, 0.0, &opts,
            |p: [f64; 2]| 0.5 * (1.0 - p[0] * p[0] - p[1] * p[1]), |p: [f64; 2]| 1.0 - p[0].hypot(p[1]));
        let w = f.transformed(TransformKind::SqrtPower);
        let (x, y) = ([x0, x1], [y0, y1]);
        prop_assert_eq!(z_value(&w, 0.0, x, y), Some(0.0));
        prop_assert_eq!(z_value(&w, 1.0, x, y), Some(0.0));
        let a = z_value(&w, r, x, y).unwrap();
        let b = z_value(&w, 1.0 - r, y, x).unwrap();
        prop_assert!((a - b).abs() < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // the stored rate follows normal trajectories; at fixed angle it loses F_s^2 / kappa
    #[test]
    fn speed_rate_matches_finite_difference(c in coeffs(), s in coeffs(), alpha in prop::sample::select(vec![1.0 / 3.0, 1.0, 2.0])) {
        let speed = SpeedSpec::builtin("curvature", 1, alpha, None).unwrap();
        let solver = FlowSolver::new(speed.clone(), FlowOptions::default()).unwrap();
        let snap = FlowSnapshot::new(0.0, blob(c, s, 128), &speed).unwrap();
        let d = 1e-5;
        let one = solver.advance(&snap, d).unwrap();
        let two = solver.advance(&snap, 2.0 * d).unwrap();
        let rate: Vec<f64> = (0..128).map(|j| snap.dt_f[j] - snap.f_s[j] * snap.f_s[j] / snap.kappa[j]).collect();
        let scale = rate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (j, r) in rate.iter().enumerate() {
            let fd = (-3.0 * snap.f[j] + 4.0 * one.f[j] - two.f[j]) / (2.0 * d);
            prop_assert!((fd - r).abs() < 1e-5 * scale, "j = {j}: {fd} vs {r}");
        }
    }
}

#[test]
fn single_precision_curves() {
    let c: SupportCurve32 = SupportCurve::circle(2.0f32, [0.0, 0.0], 64, DiffScheme::Spectral).unwrap();
    for k in c.curvatures().unwrap() {
        assert!((k - 0.5).abs() < 1e-5);
    }
}

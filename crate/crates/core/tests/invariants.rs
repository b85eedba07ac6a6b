use formbound::analysis::form_quotient;
use formbound::field::{gradient, ScalarField};
use formbound::mesh::{Mesh, MeshSpec};
use formbound::operators::{eval_a, p_laplacian_monotonicity, OperatorSpec};
use formbound::params::exact::{self, Rational};
use formbound::params::{p_sharp, ProblemParams};
use formbound::pipeline::lambda_s;
use formbound::quadrature::ball_volume;
use formbound::weights::hardy_weight;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p_sharp_in_unit_interval(p in 1.01f64..8.0) {
        let s = p_sharp(p);
        prop_assert!(s > 0.0 && s <= 1.0);
        if p <= 2.0 {
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn exact_and_float_constants_agree(n in 3i128..9, p in 2i128..3) {
        let h = exact::hardy_constant(n, Rational::from_integer(p)).unwrap();
        let f = ProblemParams::new(n as usize, p as f64).unwrap().c0.unwrap();
        prop_assert!((*h.numer() as f64 / *h.denom() as f64 - f).abs() <= 1e-12 * f.max(1.0));
    }

    #[test]
    fn lambda_s_decreasing(p in 1.5f64..5.0, s in 0.01f64..10.0, ds in 0.01f64..5.0) {
        let a = lambda_s(p + s, p).unwrap();
        let b = lambda_s(p + s + ds, p).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b < a);
    }

    #[test]
    fn p_laplacian_is_monotone_and_homogeneous(
        p in 1.2f64..5.0,
        xi in prop::collection::vec(-3.0f64..3.0, 3),
        eta in prop::collection::vec(-3.0f64..3.0, 3),
        t in 0.1f64..4.0,
    ) {
        let op = OperatorSpec::p_laplacian(p);
        let x = [0.5, 0.0, 0.0];
        let a = eval_a(&op, &x, &xi).unwrap();
        let b = eval_a(&op, &x, &eta).unwrap();
        let diff: Vec<f64> = xi.iter().zip(&eta).map(|(u, v)| u - v).collect();
        let gap: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
        prop_assert!(dot(&gap, &diff) >= -1e-12);
        // A(tξ) = t^{p-1} A(ξ)
        let scaled: Vec<f64> = xi.iter().map(|v| t * v).collect();
        let at = eval_a(&op, &x, &scaled).unwrap();
        for (u, v) in at.iter().zip(&a) {
            prop_assert!((u - t.powf(p - 1.0) * v).abs() <= 1e-9 * (1.0 + u.abs()));
        }
        // A(ξ)·ξ = |ξ|^p
        prop_assert!((dot(&a, &xi) - norm(&xi).powf(p)).abs() <= 1e-9 * (1.0 + norm(&xi).powf(p)));
        prop_assert!(p_laplacian_monotonicity(p) > 0.0);
    }

    #[test]
    fn form_quotient_scale_invariant(
        coeffs in prop::collection::vec(-1.0f64..1.0, 4),
        c in 0.1f64..10.0,
    ) {
        let params = ProblemParams::new(4, 2.0).unwrap();
        let m = Mesh::build(&MeshSpec::<f64>::radial(4, 0.1, 1.0, 64)).unwrap();
        let sigma = hardy_weight(&params, 0.5, &m).unwrap();
        let op = OperatorSpec::p_laplacian(2.0);
        let bump = |r: f64| (r - 0.1) * (1.0 - r) * (1.0 + coeffs.iter().enumerate().map(|(k, a)| a * r.powi(k as i32 + 1) / 2.0).sum::<f64>());
        let h = ScalarField::from_fn(&m, |x| bump(x[0])).unwrap();
        let hc = h.map(&m, |v| c * v).unwrap();
        let q1 = form_quotient(&sigma, &op, &m, &h).unwrap();
        let q2 = form_quotient(&sigma, &op, &m, &hc).unwrap();
        prop_assert!((q1 - q2).abs() <= 1e-10 * q1.abs().max(1.0));
        // Hardy: the quotient never exceeds t
        prop_assert!(q1 <= 0.5 + 1e-9);
    }

    #[test]
    fn radial_volume_is_annulus_volume(n in 2usize..6, a in 0.0f64..0.5, cells in 4usize..200) {
        let m = Mesh::build(&MeshSpec::<f64>::radial(n, a, 1.0, cells)).unwrap();
        let exact = ball_volume::<f64>(n) * (1.0 - a.powi(n as i32));
        prop_assert!((m.total_volume() - exact).abs() <= 1e-10 * exact);
    }

    #[test]
    fn gradient_of_affine_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 6)).unwrap();
        let u = ScalarField::from_fn(&m, |x| a + b * x[0] + c * x[1]).unwrap();
        let g = gradient(&u, &m).unwrap();
        for k in 0..g.num_cells() {
            prop_assert!((g.get(k)[0] - b).abs() < 1e-10);
            prop_assert!((g.get(k)[1] - c).abs() < 1e-10);
        }
    }
}

use std::sync::OnceLock;

use hjprop::clock::ClockSpec;
use hjprop::convergence::fit_order;
use hjprop::model::{make_scenario, Axis, Overrides, PacketSpec, Scenario, TimeAxis};
use hjprop::oracle::analytic::{free_gaussian, sample_field};
use hjprop::oracle::crank_nicolson::solve_tridiagonal;
use hjprop::oracle::{bohm_potential, compare_waves, crank_nicolson_evolve, madelung_decompose, recompose};
use hjprop::runner;
use hjprop::superposition::{build_kernel_family, gaussian_packet, superpose_raw, FamilySpec, KernelFamily};
use num_complex::Complex64;
use proptest::prelude::*;

fn ov(pairs: &[(&str, String)]) -> Overrides {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn family() -> &'static KernelFamily {
    static FAMILY: OnceLock<KernelFamily> = OnceLock::new();
    FAMILY.get_or_init(|| {
        let s = make_scenario(
            "harmonic",
            &ov(&[("sup.n", "33".into()), ("sup.n_t", "3".into()), ("sup.min", "-1".into()), ("sup.max", "1".into())]),
        )
        .unwrap();
        let spec = FamilySpec::from_scenario(&s.setup, &s.superposition, s.initial.epsilon, s.energy_scale);
        build_kernel_family(&spec, &vec![true; spec.axis.n]).unwrap()
    })
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comparison_ignores_global_phase(phase in -3.0..3.0f64, p in -2.0..2.0f64, c in -1.0..1.0f64) {
        let axis = Axis::new(-6.0, 6.0, 121).unwrap();
        let time = TimeAxis::new(0.0, 0.5, 2).unwrap();
        let a = sample_field(axis, time, |x, t| free_gaussian(1.0, 1.0, 0.8, c, p, x, t));
        let mut b = a.clone();
        for v in &mut b.values {
            *v *= Complex64::from_polar(1.0, phase);
        }
        let r = compare_waves(&a, &b).unwrap();
        prop_assert!(r.l2_error < 1e-12);
        prop_assert!(r.linf_error < 1e-12);
    }

    #[test]
    fn superposition_is_linear(a in complex(), b in complex(), c1 in -0.3..0.3f64, c2 in -0.3..0.3f64) {
        let fam = family();
        let axis = fam.axis;
        let g = |c: f64| -> Vec<Complex64> {
            axis.nodes().iter().map(|&x| gaussian_packet(&PacketSpec { center: c, width: 0.3, momentum: 1.0 }, 1.0, x)).collect()
        };
        let (u, v) = (g(c1), g(c2));
        let mix: Vec<Complex64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let (wu, wv, wm) = (superpose_raw(fam, &u).unwrap(), superpose_raw(fam, &v).unwrap(), superpose_raw(fam, &mix).unwrap());
        let scale = wu.values.iter().chain(&wv.values).map(|z| z.norm()).fold(0.0, f64::max);
        for j in 0..wm.values.len() {
            if wm.valid[j] {
                let want = a * wu.values[j] + b * wv.values[j];
                prop_assert!((wm.values[j] - want).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn madelung_round_trip(width in 0.4..1.5f64, p in -3.0..3.0f64, c in -1.0..1.0f64, t in 0.0..1.0f64) {
        let axis = Axis::new(-6.0, 6.0, 241).unwrap();
        let time = TimeAxis::new(t, 0.01, 1).unwrap();
        let psi = sample_field(axis, time, |x, t| free_gaussian(1.0, 1.0, width, c, p, x, t));
        let pair = madelung_decompose(&psi, 1.0).unwrap();
        let back = recompose(&pair, 1.0);
        let peak = psi.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for j in 0..back.len() {
            if pair.valid[j] {
                prop_assert!((back[j] - psi.values[j]).norm() <= 1e-12 * peak);
            }
        }
    }

    #[test]
    fn crank_nicolson_conserves_norm(harmonic in any::<bool>(), c in -1.0..1.0f64, p in -2.0..2.0f64, width in 0.3..1.0f64) {
        let s = make_scenario(if harmonic { "harmonic" } else { "free" }, &Overrides::new()).unwrap();
        let axis = Axis::new(-10.0, 10.0, 401).unwrap();
        let packet = PacketSpec { center: c, width, momentum: p };
        let psi0: Vec<Complex64> = axis.nodes().iter().map(|&x| gaussian_packet(&packet, 1.0, x)).collect();
        let (_, report) = crank_nicolson_evolve(&s.setup, &psi0, axis, 0.0, TimeAxis::new(0.1, 0.1, 3).unwrap(), 1e-2).unwrap();
        prop_assert!(report.max_norm_drift_per_step <= 1e-12);
    }

    #[test]
    fn tridiagonal_solve_satisfies_system(seed in proptest::collection::vec(complex(), 3 * 12)) {
        let n = 12;
        let a: Vec<Complex64> = seed[..n].to_vec();
        let c: Vec<Complex64> = seed[n..2 * n].to_vec();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(3.0, 0.5) + a[i] * 0.1).collect();
        let rhs: Vec<Complex64> = seed[2 * n..].to_vec();
        let mut x = rhs.clone();
        let mut scratch = Vec::new();
        solve_tridiagonal(&a, &b, &c, &mut x, &mut scratch);
        for i in 0..n {
            let mut lhs = b[i] * x[i];
            if i > 0 { lhs += a[i] * x[i - 1]; }
            if i + 1 < n { lhs += c[i] * x[i + 1]; }
            prop_assert!((lhs - rhs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn bohm_potential_ignores_density_scale(scale in 1e-3..1e3f64, w in 0.5..1.5f64) {
        let s = make_scenario("free", &Overrides::new()).unwrap();
        let axis = Axis::new(-3.0, 3.0, 121).unwrap();
        let rho: Vec<f64> = axis.nodes().iter().map(|x| (-x * x / (2.0 * w * w)).exp() * (1.0 + 0.1 * x.sin())).collect();
        let scaled: Vec<f64> = rho.iter().map(|r| r * scale).collect();
        let valid = vec![true; axis.n];
        let q1 = bohm_potential(&rho, &valid, &axis, &s.setup).unwrap();
        let q2 = bohm_potential(&scaled, &valid, &axis, &s.setup).unwrap();
        for i in 0..axis.n {
            if q1.valid[i] && q2.valid[i] {
                prop_assert!((q1.values[i] - q2.values[i]).abs() <= 1e-9 * (1.0 + q1.values[i].abs()));
            }
        }
    }

    #[test]
    fn fitted_order_recovers_power_laws(p in 0.5..4.0f64, c in 1e-3..1e3f64) {
        let x = [0.1f64, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|h| c * h.powf(p)).collect();
        prop_assert!((fit_order(&x, &y).unwrap() - p).abs() < 1e-9);
    }

    #[test]
    fn scenarios_are_deterministic_and_serializable(
        name in prop::sample::select(vec!["free", "linear", "harmonic", "quartic", "two-source"]),
        eps in 5e-4..5e-3f64,
        n in 51usize..401,
    ) {
        let o = ov(&[("eps", eps.to_string()), ("grid.n", n.to_string())]);
        let a = make_scenario(name, &o).unwrap();
        let b = make_scenario(name, &o).unwrap();
        prop_assert_eq!(&a, &b);
        let text = serde_json::to_string(&a).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn transport_matches_jacobian_ratio(
        name in prop::sample::select(vec!["free", "linear", "harmonic", "quartic"]),
        x0 in -0.5..0.5f64,
    ) {
        let s = make_scenario(name, &ov(&[
            ("x0", x0.to_string()),
            ("t_max", "0.3".into()),
            ("grid.n", "101".into()),
            ("fan.n", "401".into()),
        ])).unwrap();
        let stage = runner::run_kernels(&s, ClockSpec::default(), |_, _| {}).unwrap();
        prop_assert!(stage.transport_max_rel() <= 1e-6);
        prop_assert!(stage.energy_drift() <= 1e-8);
    }
}

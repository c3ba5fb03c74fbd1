//! Primary acceptance criteria. Each criterion prints one PASS/FAIL line.
//!
//! Runs sequentially inside one test so the per-scenario timings are not
//! distorted by other tests sharing the machine.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use hjprop::clock::ClockSpec;
use hjprop::convergence::fit_order;
use hjprop::model::{make_scenario, Axis, Overrides, PacketSpec, PhysicalSetup, TimeAxis};
use hjprop::oracle::crank_nicolson::regularized_dirac;
use hjprop::oracle::{bohm_potential, compare_waves, evolve_profile, residual_report, ResidualOptions};
use hjprop::runner::{self, Check, CheckStatus, RunConfig, RunOutcome};
use hjprop::superposition::gaussian_packet;
use num_complex::Complex64;

struct Ledger {
    failed: Vec<String>,
}

impl Ledger {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        if !pass {
            self.failed.push(name.to_string());
        }
    }
}

fn overrides(pairs: &[(&str, &str)]) -> Overrides {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn run(dir: &std::path::Path, scenario: &str, edit: impl FnOnce(&mut RunConfig)) -> (RunOutcome, f64) {
    let mut c = RunConfig::new(scenario);
    c.output_dir = dir.to_path_buf();
    c.run_name = Some(format!("{scenario}-{}", std::fs::read_dir(dir).unwrap().count()));
    edit(&mut c);
    let start = Instant::now();
    let out = runner::run(&c).expect("run succeeds");
    (out, start.elapsed().as_secs_f64())
}

fn check<'a>(out: &'a RunOutcome, name: &str) -> &'a Check {
    out.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no check {name}"))
}

fn passed(c: &Check) -> bool {
    c.status == CheckStatus::Pass
}

fn value(c: &Check) -> f64 {
    c.measured.unwrap_or(f64::NAN)
}

fn unit_setup(s: &str, ov: &[(&str, &str)]) -> PhysicalSetup {
    make_scenario(s, &overrides(ov)).unwrap().setup
}

/// Harmonic kernel without the caustic phase, `omega = m = hbar = 1`,
/// source at the origin.
fn naive_harmonic(x: f64, t: f64) -> Complex64 {
    let (s, c) = t.sin_cos();
    let amp = (1.0 / (2.0 * PI * s.abs())).sqrt();
    Complex64::from_polar(amp, x * x * c / (2.0 * s) - 0.25 * PI)
}

/// Phase of `sum w conj(naive) psi` over `|x| < 3`.
fn window_phase(axis: &Axis, values: &[Complex64], valid: &[bool], t: f64) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..axis.n {
        let x = axis.node(i);
        if x.abs() < 3.0 && valid[i] {
            let w = (0.5 * PI * x / 3.0).cos().powi(2);
            acc += w * naive_harmonic(x, t).conj() * values[i];
        }
    }
    acc.arg()
}

fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Phase jump of the assembled harmonic kernel and of the Crank-Nicolson
/// regularized Dirac between `omega t = 0.8 pi` and `1.2 pi`.
fn maslov_jump() -> (f64, f64) {
    let eps = 2e-3;
    let s = make_scenario("harmonic", &overrides(&[("t_max", "3.8"), ("eps", "0.002")])).unwrap();
    let stage = runner::run_kernels(&s, ClockSpec::default(), |_, _| {}).unwrap();
    let field = &stage.sum;
    let (k1, k2) = (field.time.nearest(0.8 * PI), field.time.nearest(1.2 * PI));
    let (t1, t2) = (field.time.time(k1), field.time.time(k2));
    let axis = field.axis;
    let jump_kernel = wrap(
        window_phase(&axis, field.slice(k2), field.valid_slice(k2), t2)
            - window_phase(&axis, field.slice(k1), field.valid_slice(k1), t1),
    );
    // Momenta that matter stay below ~85; the box holds their orbits.
    let record = TimeAxis::new(t1, t2 - t1, 2).unwrap();
    let (cn, _) = evolve_profile(
        &s.setup,
        axis,
        record,
        0.0,
        |x| regularized_dirac(1.0, 1.0, eps, 0.0, x),
        4,
        96.0,
        2e-4,
    )
    .unwrap();
    let jump_cn = wrap(
        window_phase(&axis, cn.slice(1), cn.valid_slice(1), t2) - window_phase(&axis, cn.slice(0), cn.valid_slice(0), t1),
    );
    (jump_kernel, jump_cn)
}

fn coherent_return() -> (f64, f64, f64) {
    let setup = unit_setup("harmonic", &[]);
    let packet = PacketSpec {
        center: 1.0,
        width: 0.5_f64.sqrt(),
        momentum: 0.0,
    };
    let axis = Axis::new(-6.0, 6.0, 601).unwrap();
    let period = 2.0 * PI;
    let (wave, report) = evolve_profile(
        &setup,
        axis,
        TimeAxis::new(period, 1.0, 1).unwrap(),
        0.0,
        |x| gaussian_packet(&packet, 1.0, x),
        4,
        4.0,
        5e-4,
    )
    .unwrap();
    let mut start = wave.clone();
    for (i, v) in start.values.iter_mut().enumerate() {
        *v = gaussian_packet(&packet, 1.0, axis.node(i));
    }
    let c = compare_waves(&start, &wave).unwrap();
    // Exact return phase is exp(-i omega T / 2) = -1.
    let phase_err = wrap(c.phase_used - PI).abs();
    (c.l2_error, phase_err, report.max_norm_drift_per_step)
}

fn spreading_law() -> f64 {
    let setup = unit_setup("free", &[]);
    let s0 = 0.5;
    let packet = PacketSpec {
        center: 0.0,
        width: s0,
        momentum: 1.0,
    };
    let axis = Axis::new(-8.0, 10.0, 901).unwrap();
    let t = 1.0;
    let (wave, _) = evolve_profile(
        &setup,
        axis,
        TimeAxis::new(t, 1.0, 1).unwrap(),
        0.0,
        |x| gaussian_packet(&packet, 1.0, x),
        4,
        4.0,
        2.5e-4,
    )
    .unwrap();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..axis.n {
        let (x, w, p) = (axis.node(i), axis.weight(i), wave.values[i].norm_sqr());
        m0 += w * p;
        m1 += w * p * x;
        m2 += w * p * x * x;
    }
    let var = m2 / m0 - (m1 / m0).powi(2);
    let expected = s0 * (1.0 + (t / (2.0 * s0 * s0)).powi(2)).sqrt();
    (var.sqrt() - expected).abs() / expected
}

/// Schroedinger-consistent Madelung residual of a Crank-Nicolson harmonic
/// packet, with and without the quantum potential.
fn madelung_residuals() -> (f64, f64) {
    let s = make_scenario("harmonic", &Overrides::new()).unwrap();
    let sup = &s.superposition;
    let packet = sup.packet;
    let axis = sup.axis;
    let (wave, _) = evolve_profile(
        &s.setup,
        axis,
        TimeAxis::new(0.299, 0.001, 3).unwrap(),
        0.0,
        |x| gaussian_packet(&packet, 1.0, x),
        8,
        10.0,
        2e-4,
    )
    .unwrap();
    let r = residual_report(&wave, &s.setup, ResidualOptions::new(s.energy_scale)).unwrap();
    (r.hjq_l2, r.hj_l2)
}

/// Order of the discrete quantum potential on a Gaussian density.
fn bohm_operator_order() -> (Vec<f64>, Option<f64>) {
    let setup = unit_setup("free", &[]);
    let s = 0.7;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [201, 401, 801] {
        let axis = Axis::new(-4.0, 4.0, n).unwrap();
        let rho: Vec<f64> = axis.nodes().iter().map(|x| (-x * x / (2.0 * s * s)).exp()).collect();
        let q = bohm_potential(&rho, &vec![true; n], &axis, &setup).unwrap();
        let mut err = 0.0_f64;
        for i in 0..n {
            let x = axis.node(i);
            if x.abs() < 3.0 && q.valid[i] {
                let exact = -0.5 * (x * x / (4.0 * s.powi(4)) - 1.0 / (2.0 * s * s));
                err = err.max((q.values[i] - exact).abs());
            }
        }
        hs.push(axis.h());
        errs.push(err);
    }
    let order = fit_order(&hs, &errs);
    (errs, order)
}

#[test]
fn primary_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut ledger = Ledger { failed: Vec::new() };

    // Shared runs.
    let (free, free_secs) = run(dir, "free", |c| {
        c.oracle = true;
        c.superpose = true;
        c.rescale = true;
        c.eps_sweep = vec![4e-3, 2e-3, 1e-3];
    });
    let (harmonic, harm_secs) = run(dir, "harmonic", |c| {
        c.oracle = true;
        c.superpose = true;
        c.rescale = true;
    });
    let (linear, _) = run(dir, "linear", |c| c.rescale = true);
    let (quartic, _) = run(dir, "quartic", |c| c.rescale = true);
    let (two, _) = run(dir, "two-source", |c| c.superpose = true);
    let (affine, _) = run(dir, "quartic", |c| {
        c.rescale = true;
        c.clock = ClockSpec::Affine { a: 1.0, b: 0.5 };
    });

    // Bohm vanishing on branches.
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for name in ["free", "linear", "harmonic"] {
            let s = make_scenario(name, &Overrides::new()).unwrap();
            let start = Instant::now();
            let stage = runner::run_kernels(&s, ClockSpec::default(), |_, _| {}).unwrap();
            let fan_q = stage.fan_bohm_max();
            let branch_q = stage.branch_bohm_max(&s).unwrap() / s.energy_scale;
            let secs = start.elapsed().as_secs_f64();
            ok &= fan_q <= 1e-8 && branch_q <= 1e-4 && secs < 30.0;
            parts.push(format!("{name} fan {fan_q:.1e} grid {branch_q:.1e}/E {secs:.1}s"));
        }
        let mut refined = Vec::new();
        for n in ["201", "401", "801"] {
            let s = make_scenario("free", &overrides(&[("grid.n", n), ("t_max", "0.5")])).unwrap();
            let stage = runner::run_kernels(&s, ClockSpec::default(), |_, _| {}).unwrap();
            refined.push(stage.branch_bohm_max(&s).unwrap() / s.energy_scale);
        }
        ok &= refined.iter().all(|q| *q <= 1e-4);
        let (errs, order) = bohm_operator_order();
        let order = order.unwrap_or(f64::NAN);
        ok &= (order - 2.0).abs() <= 0.2;
        parts.push(format!(
            "refined h=0.04/0.02/0.01 max|Q_j|/E {:.1e}/{:.1e}/{:.1e}; operator error {:.2e}->{:.2e}, order {order:.3}",
            refined[0], refined[1], refined[2], errs[0], errs[2]
        ));
        ledger.report("bohm_vanishing", ok, parts.join("; "));
    }

    // Free-particle kernel.
    {
        let a = check(&free, "kernel_vs_analytic");
        let d = check(&free, "eps_decreasing");
        let o = check(&free, "eps_order");
        let sweep = check(&free, "eps_kernel_vs_analytic");
        let ok = passed(a) && passed(d) && passed(o) && passed(sweep);
        ledger.report(
            "free_kernel",
            ok,
            format!(
                "Linf vs closed form {:.2e} (tol 1e-3), sweep worst {:.2e}; oracle L2 decreasing: {}; {}",
                value(a),
                value(sweep),
                passed(d),
                o.detail
            ),
        );
    }

    // Harmonic pre-caustic density and caustic phase.
    {
        let dens = check(&harmonic, "harmonic_density");
        let (jk, jc) = maslov_jump();
        let err_cn = (jc + 0.5 * PI).abs();
        let err_kernel = (jk - jc).abs();
        let ok = passed(dens) && err_cn <= 1e-2 && err_kernel <= 1e-2;
        ledger.report(
            "harmonic_kernel",
            ok,
            format!(
                "density rel err {:.2e} (tol 1e-3); phase jump across omega t = pi: CN {jc:.5}, kernel {jk:.5}, |CN + pi/2| {err_cn:.2e}, |kernel - CN| {err_kernel:.2e} (tol 1e-2)",
                value(dens)
            ),
        );
    }

    // Madelung contrast.
    {
        let packet = check(&harmonic, "madelung_packet");
        let branch = check(&harmonic, "madelung_branch");
        let (hjq, hj) = madelung_residuals();
        let ok = passed(packet) && passed(branch) && hjq <= 1e-3 && hj >= 100.0 * hjq;
        ledger.report(
            "madelung_contrast",
            ok,
            format!(
                "packet max|Q| {:.3e} hbar omega (>= 1e-2), constituent max|Q_j| {:.1e} hbar omega (<= 1e-4); CN packet HJ+Q residual {hjq:.2e} (<= 1e-3), without Q {hj:.2e} (ratio {:.0})",
                value(packet),
                value(branch),
                hj / hjq
            ),
        );
    }

    // Superposition against the oracle.
    {
        let f = check(&free, "superposition_vs_oracle");
        let h = check(&harmonic, "superposition_vs_oracle");
        let fr = check(&two, "fringe_spacing");
        let ok = passed(f) && passed(h) && passed(fr);
        ledger.report(
            "superposition",
            ok,
            format!(
                "free L2 {:.2e}, harmonic L2 {:.2e} (tol 1e-3); fringe rel err {:.2e} (tol 2e-2)",
                value(f),
                value(h),
                value(fr)
            ),
        );
    }

    // Clock rescaling.
    {
        let mut ok = true;
        let mut worst = 0.0_f64;
        for out in [&free, &harmonic, &linear, &quartic, &affine] {
            let c = check(out, "clock_formula");
            ok &= passed(c);
            worst = worst.max(value(c));
        }
        let closed = check(&free, "clock_closed_form");
        let halving = check(&free, "clock_step_halving");
        ok &= passed(closed) && passed(halving);
        let collapse = check(&quartic, "collapse");
        ledger.report(
            "clock_rescaling",
            ok,
            format!(
                "formula worst {worst:.1e} over catalog and an affine clock (tol 1e-6); free t' = ln(t/eps) err {:.2e} (tol 1e-8); quartic collapse {:.2e} measured against target 1e-3{}",
                value(closed),
                value(collapse),
                if value(collapse) <= 1e-3 { "" } else { " (above target)" }
            ),
        );
    }

    // Oracle self-checks.
    {
        let mut drift = 0.0_f64;
        for out in [&free, &harmonic] {
            drift = drift.max(value(check(out, "cn_norm_drift")));
        }
        let (ret, ret_phase, ret_drift) = coherent_return();
        drift = drift.max(ret_drift);
        let spread = spreading_law();
        let ok = drift <= 1e-12 && ret <= 1e-4 && ret_phase <= 1e-4 && spread <= 1e-4;
        ledger.report(
            "oracle_self_checks",
            ok,
            format!(
                "norm drift/step {drift:.1e} (tol 1e-12); coherent return L2 {ret:.2e}, phase {ret_phase:.2e} (tol 1e-4); spreading law {spread:.2e} (tol 1e-4)"
            ),
        );
    }

    // Transport equivalence.
    {
        let mut worst = BTreeMap::new();
        for (name, out) in [
            ("free", &free),
            ("linear", &linear),
            ("harmonic", &harmonic),
            ("quartic", &quartic),
            ("two-source", &two),
        ] {
            worst.insert(name, value(check(out, "transport")));
        }
        let ok = worst.values().all(|v| *v <= 1e-6);
        let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
        ledger.report("transport", ok, format!("{} (tol 1e-6)", detail.join(", ")));
    }

    let mut out = std::io::stdout();
    writeln!(
        out,
        "runs: free {free_secs:.1}s (all stages), harmonic {harm_secs:.1}s (all stages)"
    )
    .unwrap();
    assert!(ledger.failed.is_empty(), "failed criteria: {:?}", ledger.failed);
}

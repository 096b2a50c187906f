//! End-to-end acceptance checks. Each test prints one PASS/FAIL line (written
//! straight to stderr so it shows even when output capture is on) and then
//! asserts the same condition.

use std::f64::consts::PI;
use std::io::Write;

use chiral_chaos::analysis::{chirality, symmetry};
use chiral_chaos::analytic::{
    achievable_region, delta_intensity_steady, region_boundary, steady_residual, steady_state,
    TipConfig,
};
use chiral_chaos::integrator::{integrate, IntegrationConfig};
use chiral_chaos::lyapunov::{linear_lambda_oracle, max_lyapunov, LyapunovConfig};
use chiral_chaos::model::{rhs, DriveSpec, Model, Port, StateVector, SystemParams, DIM};
use chiral_chaos::pipeline::{Control, RunSettings};
use chiral_chaos::sensing::{
    baselines, build_window, run_ports, theta_grid, Protocol, SensingConfig, SignalSpec, Window,
    WindowSpec,
};
use chiral_chaos::sweep::{run_sweep, run_sweep_persisted, Axis, SweepGrid, TaskKind};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {n:>2}: {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Random device in a weakly pumped (ordered) regime.
fn random_ordered(rng: &mut StdRng) -> (SystemParams, f64) {
    let p = SystemParams {
        delta_a: rng.random_range(-1.0..1.0),
        delta_b: rng.random_range(-1.0..1.0),
        kappa: rng.random_range(0.1..0.5),
        gamma: rng.random_range(1.0..6.0),
        g_om: 5e-5,
        gamma_m: 5e-3,
        eta: rng.random_range(0.0..0.5),
        xi_mag: rng.random_range(0.0..5.0),
        phi: rng.random_range(-PI..PI),
        j_coupling: rng.random_range(0.5..3.0),
    };
    (p, rng.random_range(10.0..1000.0))
}

fn short_rk4() -> IntegrationConfig {
    IntegrationConfig {
        t_transient: 100.0 * 2.0 * PI,
        t_record: 20.0 * 2.0 * PI,
        ..IntegrationConfig::rk4()
    }
}

fn random_state(rng: &mut StdRng, scale: f64) -> StateVector {
    let mut c = || {
        Complex64::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    };
    let (a, b, cc, d) = (c(), c(), c(), c());
    StateVector {
        a_cw: a,
        a_ccw: b,
        b_cw: cc,
        b_ccw: d,
        q: rng.random_range(-scale..scale),
        p: rng.random_range(-scale..scale),
    }
}

#[test]
fn criterion_01_swap_symmetry() {
    let mut rng = StdRng::seed_from_u64(1);
    let cfg = short_rk4();
    let mut worst_traj = 0.0f64;
    for _ in 0..20 {
        let (p, eps) = random_ordered(&mut rng);
        let t1 = integrate(&p, &DriveSpec::pump(Port::Port1, eps), &cfg).unwrap();
        let t2 = integrate(&p.mirrored(), &DriveSpec::pump(Port::Port2, eps), &cfg).unwrap();
        let a: Vec<f64> = t1.states.iter().flat_map(|s| s.to_flat()).collect();
        let b: Vec<f64> = t2
            .states
            .iter()
            .flat_map(|s| s.swapped().to_flat())
            .collect();
        worst_traj = worst_traj.max(rel_dev(&a, &b));
    }
    let mut worst_rhs = 0.0f64;
    for _ in 0..200 {
        let (p, eps) = random_ordered(&mut rng);
        let s = random_state(&mut rng, 1e3);
        let tau = rng.random_range(0.0..100.0);
        let f1 = rhs(&p, &DriveSpec::pump(Port::Port1, eps), tau, &s).unwrap();
        let f2 = rhs(
            &p.mirrored(),
            &DriveSpec::pump(Port::Port2, eps),
            tau,
            &s.swapped(),
        )
        .unwrap();
        worst_rhs = worst_rhs.max(rel_dev(&f1.to_flat(), &f2.swapped().to_flat()));
    }
    let pass = worst_traj < 1e-6 && worst_rhs < 1e-12;
    report(
        1,
        pass,
        &format!(
            "max trajectory dev {worst_traj:.2e} (< 1e-6), max rhs dev {worst_rhs:.2e} (< 1e-12)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_reciprocity_at_trivial_phase() {
    let mut rng = StdRng::seed_from_u64(2);
    let cfg = short_rk4();
    let mut worst = 0.0f64;
    for phi in [0.0, PI] {
        for _ in 0..5 {
            let (mut p, eps) = random_ordered(&mut rng);
            p.phi = phi;
            let t1 = integrate(&p, &DriveSpec::pump(Port::Port1, eps), &cfg).unwrap();
            let t2 = integrate(&p, &DriveSpec::pump(Port::Port2, eps), &cfg).unwrap();
            worst = worst.max(rel_dev(&t1.i_a, &t2.i_a));
        }
    }
    let pass = worst < 1e-6;
    report(
        2,
        pass,
        &format!("max I_A dev between ports at phi in {{0, pi}}: {worst:.2e} (< 1e-6)"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_steady_state_oracle() {
    let eps = 10.0;
    let cfg = IntegrationConfig {
        t_transient: 3000.0 * 2.0 * PI,
        t_record: 2.0 * PI,
        rel_tol: 1e-12,
        abs_tol: 1e-12,
        ..IntegrationConfig::default()
    };
    let (mut worst_int, mut worst_odd, mut worst_res) = (0.0f64, 0.0f64, 0.0f64);
    for phi in [-0.75 * PI, -0.3 * PI, 0.0, 0.4 * PI, 0.9 * PI] {
        let p = SystemParams {
            phi,
            ..SystemParams::default()
        };
        for port in [Port::Port1, Port::Port2] {
            let s = steady_state(&p, port, eps).unwrap();
            let tr = integrate(&p, &DriveSpec::pump(port, eps), &cfg).unwrap();
            let ia = *tr.i_a.last().unwrap();
            worst_int = worst_int.max((ia - s.i_a).abs() / s.i_a);
            worst_res = worst_res.max(steady_residual(&p, port, eps, &s));
        }
        let d_plus = delta_intensity_steady(&p, eps).unwrap();
        let d_minus = delta_intensity_steady(&p.mirrored(), eps).unwrap();
        let scale = steady_state(&p, Port::Port1, eps).unwrap().i_a;
        worst_odd = worst_odd.max((d_plus + d_minus).abs() / scale);
    }
    let pass = worst_int < 1e-6 && worst_odd < 1e-12 && worst_res < 1e-10;
    report(
        3,
        pass,
        &format!("integration vs closed form {worst_int:.2e} (< 1e-6), oddness {worst_odd:.2e} (< 1e-12), residual {worst_res:.2e} (< 1e-10)"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_jacobian_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, eps) = random_ordered(&mut rng);
        let model = Model::new(&p, &DriveSpec::pump(Port::Port1, eps));
        let x = random_state(&mut rng, 100.0).to_flat();
        let mut v = [0.0; DIM];
        for c in v.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        let mut jv = [0.0; DIM];
        model.jvp(&x, &v, &mut jv);
        let h = 1e-4;
        let (mut xp, mut xm) = (x, x);
        for k in 0..DIM {
            xp[k] += h * v[k];
            xm[k] -= h * v[k];
        }
        let (mut fp, mut fm) = ([0.0; DIM], [0.0; DIM]);
        model.deriv(0.0, &xp, &mut fp);
        model.deriv(0.0, &xm, &mut fm);
        let fd: Vec<f64> = fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let num: f64 = fd
            .iter()
            .zip(&jv)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let pass = worst < 1e-5;
    report(
        4,
        pass,
        &format!("max relative JVP error over 100 samples {worst:.2e} (< 1e-5)"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_lyapunov_linear_oracle() {
    let base = SystemParams {
        g_om: 0.0,
        ..SystemParams::default()
    };
    let sets = [
        SystemParams {
            j_coupling: 0.0,
            eta: 0.0,
            xi_mag: 0.0,
            ..base
        },
        base,
        SystemParams {
            phi: 0.6 * PI,
            ..base
        },
        SystemParams {
            kappa: 0.001,
            gamma_m: 1.0,
            gamma: 0.5,
            j_coupling: 0.3,
            xi_mag: 1.0,
            phi: -0.4 * PI,
            ..base
        },
        SystemParams {
            delta_a: 1.2,
            gamma_m: 2.0,
            delta_b: -0.8,
            eta: 0.4,
            xi_mag: 5.0,
            phi: 0.25 * PI,
            ..base
        },
    ];
    let cfg = LyapunovConfig {
        t_transient: 0.0,
        ..LyapunovConfig::default()
    };
    let drive = DriveSpec::pump(Port::Port1, 1.0);
    let mut worst = 0.0f64;
    let mut details = vec![];
    for (k, p) in sets.iter().enumerate() {
        let oracle = linear_lambda_oracle(p, &drive).unwrap();
        if k == 0 {
            let analytic = (-p.kappa).max(-p.gamma).max(-p.gamma_m / 2.0);
            assert!((oracle - analytic).abs() < 1e-12);
        }
        let est = max_lyapunov(p, &drive, &cfg).unwrap();
        let err = (est.lambda_max - oracle).abs();
        details.push(format!("{:.5}/{:.5}", est.lambda_max, oracle));
        worst = worst.max(err);
    }
    let pass = worst < 1e-3;
    report(
        5,
        pass,
        &format!(
            "max |benettin - eigen| {worst:.2e} (< 1e-3); pairs {}",
            details.join(" ")
        ),
    );
    assert!(pass);
}

fn phi_scan(port: Port) -> Vec<f64> {
    let grid = SweepGrid::new(
        vec![Axis {
            control: Control::PhiOverPi,
            min: -1.0,
            max: 1.0,
            count: 41,
        }],
        SystemParams::default(),
        DriveSpec::pump(port, 5.8e4),
    )
    .unwrap();
    let table = run_sweep(&grid, &TaskKind::Lyapunov, &RunSettings::default(), 1).unwrap();
    assert_eq!(table.failures(), 0);
    table.lambdas()
}

#[test]
fn criterion_06_chaos_and_chirality() {
    let l1 = phi_scan(Port::Port1);
    let l2 = phi_scan(Port::Port2);
    let n = l1.len();
    let max1 = l1.iter().cloned().fold(f64::MIN, f64::max);
    let c = chirality(&l1, &l2).unwrap();
    let s_self = symmetry(&l1, &l1).unwrap();
    let matched = (0..n)
        .filter(|&i| (l1[i] - l2[n - 1 - i]).abs() < 0.02)
        .count();
    let frac = matched as f64 / n as f64;
    let pass = max1 > 0.01 && c > 0.9 && s_self == 1.0 && frac >= 0.9;
    report(
        6,
        pass,
        &format!("max port-1 lambda {max1:.4} (> 0.01), C {c:.4} (> 0.9), S(self) {s_self} (= 1), mirror match {frac:.3} (>= 0.9)"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_metric_identities() {
    let l = [0.31, -0.02, 0.0, 0.07];
    let neg: Vec<f64> = l.iter().map(|x| -x).collect();
    let rev: Vec<f64> = l.iter().rev().cloned().collect();
    let rev_neg: Vec<f64> = neg.iter().rev().cloned().collect();
    let checks = [
        symmetry(&l, &l).unwrap() == 1.0,
        symmetry(&l[..2], &neg[..2]).unwrap() == 0.0,
        chirality(&l, &rev).unwrap() == 1.0,
        chirality(&l[..2], &rev_neg[2..]).unwrap() == 0.0,
        chirality(&l, &neg).unwrap() == symmetry(&l, &rev_neg).unwrap(),
        symmetry(&[1.0, -1.0], &[1.0, 1.0]).unwrap() == 0.5,
        chirality(&[1.0, -1.0], &[1.0, 1.0]).unwrap() == 0.5,
    ];
    let pass = checks.iter().all(|c| *c);
    report(7, pass, &format!("identity checks {checks:?}"));
    assert!(pass);
}

fn right_window(sign: f64) -> Window {
    let spec = WindowSpec {
        control: Control::PhiOverPi,
        range: if sign > 0.0 { (0.5, 0.7) } else { (-0.7, -0.5) },
        resolution: 1e-3,
        working_point: None,
    };
    build_window(
        &SystemParams::default(),
        &DriveSpec::pump(Port::Port1, 5.8e4),
        &spec,
        &RunSettings::default(),
    )
    .unwrap()
}

#[test]
fn criterion_08_window_geometry() {
    let res = 1e-3;
    let w = right_window(1.0);
    let m = right_window(-1.0);
    let arithmetic = w.half_width == 0.5 * (w.crit_port1 - w.crit_port2).abs()
        && w.position == 0.5 * (w.crit_port1 + w.crit_port2)
        && w.working_point == w.position;
    let mirror = (m.crit_port1 + w.crit_port2).abs() <= 2.0 * res
        && (m.crit_port2 + w.crit_port1).abs() <= 2.0 * res;
    let pass = w.half_width > 0.0 && arithmetic && mirror;
    report(
        8,
        pass,
        &format!(
            "crit phi/pi port1 {:.4} port2 {:.4} D {:.4} P {:.4}; mirror port1 {:.4} port2 {:.4}",
            w.crit_port1, w.crit_port2, w.half_width, w.position, m.crit_port1, m.crit_port2
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_sensing_advantage() {
    let f = 54887.0;
    let params = SystemParams {
        xi_mag: 5.0,
        phi: 0.5 * PI,
        delta_a: 0.5598,
        delta_b: 0.5598,
        ..SystemParams::default()
    };
    let drive = DriveSpec::pump(Port::Port1, f);
    let window = Window::from_criticals(Control::Eps, f, f, Some(f));
    let cfg = SensingConfig::default();
    let d_eps = 0.05 * f;
    let bases = baselines(&params, &drive, &window, &cfg).unwrap();
    let mut single = vec![];
    let mut dual = vec![];
    let mut transitions = (0usize, 0usize);
    let mut max_change = 0.0f64;
    for theta in theta_grid(16) {
        let signal = SignalSpec {
            d_eps,
            d_omega: 0.0,
            theta,
        };
        let out = run_ports(&params, &drive, &window, &bases, &signal, &cfg).unwrap();
        single.push(out.success(Protocol::SinglePort));
        dual.push(out.success(Protocol::DualPort));
        transitions.0 += out.port2.transition_induced as usize;
        transitions.1 += (out.port1.transition_induced || out.port2.transition_induced) as usize;
        max_change = max_change
            .max((out.port1.delta_i_a / bases[0].run.i_a_max).abs())
            .max((out.port2.delta_i_a / bases[1].run.i_a_max).abs());
    }
    let rate = |v: &[bool]| v.iter().filter(|x| **x).count() as f64 / v.len() as f64;
    let (rs, rd) = (rate(&single), rate(&dual));
    let contains = single.iter().zip(&dual).all(|(s, d)| !s || *d);
    let pass = rd >= 0.9 && rs <= 0.6 && contains;
    report(
        9,
        pass,
        &format!(
            "baselines {}/{}; dual rate {rd:.3} (>= 0.9), single rate {rs:.3} (<= 0.6), dual contains single {contains}; \
             label changes single {}/16 dual {}/16, max |dI_A|/I_A {max_change:.3} vs tol {}",
            bases[0].run.phase.label, bases[1].run.phase.label, transitions.0, transitions.1, cfg.amp_change_tol
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_tip_map() {
    let cfg = TipConfig::default();
    let region = achievable_region(&cfg).unwrap();
    let coarse = region.boundary(cfg.boundary_bins);
    let fine = region_boundary(&cfg.refined(4), cfg.boundary_bins).unwrap();
    let shift = coarse.hausdorff(&fine) / region.diameter();
    let paired = region.min_paired_separation();
    let literal_ok = region
        .points
        .iter()
        .filter(|p| p.cross_separation() > 10.0)
        .count() as f64
        / region.points.len() as f64;
    let pass = shift < 0.02 && paired > 10.0;
    report(
        10,
        pass,
        &format!(
            "boundary shift {:.4} of diameter (< 0.02); min coherent/dissipative ratio {paired:.1} (> 10); \
             cross ratio min(|xi|,delta)/max(|zeta|,gamma_t) > 10 at {:.4} of points (vanishes where |xi| cancels)",
            shift, literal_ok
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let grid = SweepGrid::new(
        vec![
            Axis {
                control: Control::PhiOverPi,
                min: 0.55,
                max: 0.75,
                count: 3,
            },
            Axis {
                control: Control::XiMag,
                min: 2.8,
                max: 3.2,
                count: 2,
            },
        ],
        SystemParams::default(),
        DriveSpec::pump(Port::Port1, 5.8e4),
    )
    .unwrap();
    let mut settings = RunSettings::fast();
    settings.integration.t_transient = 200.0 * 2.0 * PI;
    settings.lyapunov.t_average = 200.0 * 2.0 * PI;
    let mut files = vec![];
    for (k, workers) in [1usize, 4, 4].iter().enumerate() {
        let stem = dir.path().join(format!("run{k}"));
        run_sweep_persisted(&grid, &TaskKind::Classify, &settings, *workers, &stem).unwrap();
        files.push(std::fs::read(dir.path().join(format!("run{k}.csv"))).unwrap());
    }
    let pass = files.windows(2).all(|w| w[0] == w[1]) && !files[0].is_empty();
    report(
        11,
        pass,
        &format!(
            "3 runs (1, 4, 4 workers) byte-identical: {pass} ({} bytes)",
            files[0].len()
        ),
    );
    assert!(pass);
}

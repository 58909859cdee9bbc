//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with its measured figures (visible with `--nocapture`).
//!
//! Every tolerance is pinned here; external high-precision reference points
//! whose generating parameters are not recorded live in the ignored anchor
//! test at the bottom.

use std::f64::consts::PI;
use std::time::Instant;

use pwscatter_core::hetero::{
    self, average_diff_first_order, classify, delta_u_first_order, find_heteroclinic, measured_average_diff, Classification, HeteroSettings,
    ScanParams,
};
use pwscatter_core::impact::ImpactMap;
use pwscatter_core::integrator::{Integrator, StepControl, StopSet};
use pwscatter_core::melnikov::{
    find_zeros, melnikov, melnikov_profile, melnikov_uncoupled_closed_form, QuadSettings,
};
use pwscatter_core::model::{
    eval_energy, Connection, ExtendedState, Flows, Model, ReferenceCoords, RockingBlock,
    RockingBlockParams,
};
use pwscatter_core::parallel::map_indexed;
use pwscatter_core::report;
use pwscatter_core::{SectionPoint64, ZeroRecord64};

fn block(delta: f64, k: f64, omega: f64, eps: f64) -> RockingBlock<f64> {
    RockingBlock::new(RockingBlockParams {
        delta,
        k,
        omega,
        eps,
        v_max: 0.999,
    })
}

fn defaults(eps: f64) -> RockingBlock<f64> {
    block(1.0, 1.0, 3.0, eps)
}

fn report_line(criterion: u32, pass: bool, detail: &str, elapsed_s: f64, budget_s: f64) {
    println!(
        "ACCEPTANCE {criterion:>2}: {} — {detail} [{elapsed_s:.2} s / budget {budget_s} s]",
        if pass { "PASS" } else { "FAIL" },
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
    assert!(
        elapsed_s < budget_s,
        "criterion {criterion} exceeded its runtime budget: {elapsed_s:.1} s"
    );
}

/// Double-exponential (tanh-sinh) quadrature of `f` on `(0, b)`; handles the
/// inverse-square-root endpoint singularity of the half-turn time integrand.
/// The integrand receives `(x, b - x)` with the endpoint distance computed
/// in a cancellation-free form. Test-side oracle, independent of the library
/// quadrature.
fn tanh_sinh<F: Fn(f64, f64) -> f64>(f: F, b: f64) -> f64 {
    let h = 5e-3;
    let n = (4.0 / h) as i64;
    let mut sum = 0.0;
    for i in -n..=n {
        let t = h * i as f64;
        let w = 0.5 * PI * t.sinh();
        // x = b/2 (1 + tanh w), written to avoid cancellation at both ends
        let x = b / (1.0 + (-2.0 * w).exp());
        let bmx = b / (1.0 + (2.0 * w).exp());
        let cw = w.cosh();
        let dxdt = 0.5 * b * 0.5 * PI * t.cosh() / (cw * cw);
        if x > 0.0 && bmx > 0.0 && dxdt.is_finite() && dxdt > 0.0 {
            sum += f(x, bmx) * dxdt;
        }
    }
    sum * h
}

#[test]
fn acceptance_01_closed_form_flow_oracle() {
    let t0 = Instant::now();
    let m = defaults(0.0);
    let mut worst_flow = 0.0_f64;
    let mut worst_alpha = 0.0_f64;
    for i in 1..=9 {
        let v = 0.1 * i as f64;
        let a_plus = m.alpha_plus(v).unwrap();
        let alpha = m.alpha(v).unwrap();

        let (u_half, v_half) = m.phi_u(a_plus, v).unwrap();
        let (u_full, v_full) = m.phi_u(alpha, v).unwrap();
        worst_flow = worst_flow
            .max(u_half.abs())
            .max((v_half + v).abs())
            .max(u_full.abs())
            .max((v_full - v).abs());

        // half-turn time by independent quadrature of
        // 2 int_0^{u_max} dx / sqrt(v^2 + x^2 - 2x); the radicand factors as
        // (u_max - x)(u_out - x) with u_out the outer root, which keeps the
        // square root stable at the singular endpoint
        let u_max = 1.0 - (1.0 - v * v).sqrt();
        let u_out = 1.0 + (1.0 - v * v).sqrt();
        let quad = 2.0 * tanh_sinh(|x, bmx| 1.0 / (bmx * (u_out - x)).sqrt(), u_max);
        worst_alpha = worst_alpha.max((quad - a_plus).abs() / a_plus);
    }
    let pass = worst_flow <= 1e-12 && worst_alpha <= 1e-10;
    report_line(
        1,
        pass,
        &format!("flow residual {worst_flow:.2e} (<=1e-12), alpha quadrature rel err {worst_alpha:.2e} (<=1e-10)"),
        t0.elapsed().as_secs_f64(),
        1.0,
    );
}

#[test]
fn acceptance_02_integrator_vs_closed_form() {
    let t0 = Instant::now();
    let m = defaults(0.0);
    let v0 = 0.48;
    let w0 = 0.3;
    let z0 = ExtendedState::new(0.0, v0, 0.0, w0, 0.0);
    let ctrl = StepControl::<f64>::default(); // rel_tol 1e-12
    let mut integ = Integrator::new(&m, ctrl);

    let period = m.alpha(v0).unwrap();
    let traj = integ.integrate(&z0, period, StopSet::none());
    let mut worst = 0.0_f64;
    for &(t, z) in &traj.samples {
        let (u, v) = m.phi_u(t, v0).unwrap();
        let (x, y) = m.phi_u(t, w0).unwrap();
        worst = worst
            .max((z.u - u).abs())
            .max((z.v - v).abs())
            .max((z.x - x).abs())
            .max((z.y - y).abs());
    }

    let long = integ.integrate(&z0, 100.0 * period, StopSet::none());
    let e = eval_energy(&m, &long.final_state());
    let drift = (e.u_energy - 0.5 * v0 * v0)
        .abs()
        .max((e.x_energy - 0.5 * w0 * w0).abs());

    let pass = worst <= 1e-9 && drift <= 1e-10 && long.termination.is_time_reached();
    report_line(
        2,
        pass,
        &format!("one-period closed-form error {worst:.2e} (<=1e-9), energy drift over 100 periods {drift:.2e} (<=1e-10)"),
        t0.elapsed().as_secs_f64(),
        10.0,
    );
}

#[test]
fn acceptance_03_unperturbed_impact_map() {
    let t0 = Instant::now();
    let m = defaults(0.0);
    let map = ImpactMap::new(&m, StepControl::default());
    let t_period = m.forcing_period();
    let s0 = 0.25;
    let mut worst_map = 0.0_f64;
    let mut worst_inv = 0.0_f64;
    for i in 1..=9 {
        let v = 0.1 * i as f64;
        let alpha = m.alpha(v).unwrap();
        for q in [1.0, -1.0] {
            let w = SectionPoint64::new(v, q, 0.0, s0);
            let res = map.impact_map(&w).unwrap();
            let ds = (res.point.s - (s0 + alpha).rem_euclid(t_period)).abs();
            let ds = ds.min((ds - t_period).abs());
            worst_map = worst_map
                .max((res.point.v - v).abs())
                .max((res.point.x - q).abs())
                .max(res.point.y.abs())
                .max(ds);

            let back = map.impact_map_inverse(&res.point).unwrap();
            let dsb = (back.point.s - s0).abs();
            let dsb = dsb.min((dsb - t_period).abs());
            worst_inv = worst_inv
                .max((back.point.v - v).abs())
                .max((back.point.x - q).abs())
                .max(back.point.y.abs())
                .max(dsb);
        }
    }
    let pass = worst_map <= 1e-10 && worst_inv <= 1e-9;
    report_line(
        3,
        pass,
        &format!("phase-shift-form error {worst_map:.2e} (<=1e-10), inverse round trip {worst_inv:.2e} (<=1e-9)"),
        t0.elapsed().as_secs_f64(),
        5.0,
    );
}

#[test]
fn acceptance_04_melnikov_oracle() {
    let t0 = Instant::now();
    let quad = QuadSettings::with_tol(1e-10);
    let omegas = [0.9, 1.7, 3.0, 4.2, 5.5];
    let mut worst = 0.0_f64;
    let mut count = 0usize;
    for (i, &omega) in omegas.iter().enumerate() {
        let m = block(1.0, 0.0, omega, 0.01);
        let t_period = m.forcing_period();
        for j in 0..8 {
            let zeta = -2.0 + 4.7 * j as f64 / 8.0 + 0.11 * i as f64;
            for k in 0..5 {
                let s = t_period * (0.07 + 0.19 * k as f64);
                let c = ReferenceCoords::new(&m, 0.3, 0.48, s).unwrap();
                let got = melnikov(&m, Connection::Up, zeta, &c, &quad).unwrap();
                let want = melnikov_uncoupled_closed_form(omega, c.s, zeta);
                let amplitude = 2.0 / (1.0 + omega * omega);
                worst = worst.max((got - want).abs() / amplitude);
                count += 1;
            }
        }
    }
    let pass = worst <= 1e-8 && count == 200;
    report_line(
        4,
        pass,
        &format!("uncoupled closed-form agreement over {count} (zeta, s, omega) samples: rel err {worst:.2e} (<=1e-8)"),
        t0.elapsed().as_secs_f64(),
        10.0,
    );
}

#[test]
fn acceptance_05_melnikov_distance_convergence() {
    let t0 = Instant::now();
    let omega = 3.0;
    let quad = QuadSettings::default();
    let zetas: Vec<f64> = (0..40).map(|i| 2.0 * PI / omega * i as f64 / 40.0).collect();
    let mut sups = Vec::new();
    for eps in [0.02, 0.01, 0.005] {
        let m = defaults(eps);
        let c = ReferenceCoords::new(&m, 0.0, 0.48, 0.0).unwrap();
        let settings = HeteroSettings {
            workers: 1,
            ..HeteroSettings::default()
        };
        let sup = map_indexed(zetas.len(), 8, |i| {
            let zeta = zetas[i];
            let d = hetero::real_distance(&m, Connection::Up, zeta, &c, &settings).unwrap();
            let mel = melnikov(&m, Connection::Up, zeta, &c, &quad).unwrap();
            (d.delta / eps - mel).abs()
        })
        .into_iter()
        .fold(0.0_f64, f64::max);
        sups.push(sup);
    }
    let r01 = sups[0] / sups[1];
    let r12 = sups[1] / sups[2];
    let pass = sups[1] < sups[0]
        && sups[2] < sups[1]
        && (1.5..=3.0).contains(&r01)
        && (1.5..=3.0).contains(&r12);
    report_line(
        5,
        pass,
        &format!(
            "sup|Delta/eps - M| = {:.3e} / {:.3e} / {:.3e}; ratios {r01:.2}, {r12:.2} (in [1.5, 3])",
            sups[0], sups[1], sups[2]
        ),
        t0.elapsed().as_secs_f64(),
        600.0,
    );
}

#[test]
fn acceptance_06_heteroclinic_residual() {
    let t0 = Instant::now();
    let m = defaults(0.01);
    let c = ReferenceCoords::new(&m, 0.0, 0.48, 0.0).unwrap();
    let settings = HeteroSettings {
        workers: 8,
        ..HeteroSettings::default() // bisect 1e-12, distance_tol 1e-10
    };
    let profile = melnikov_profile(
        &m,
        Connection::Up,
        &c,
        (0.0, 4.0 * PI / 3.0),
        160,
        &settings.quad,
        8,
    )
    .unwrap();
    let zeros = find_zeros(&m, &profile, 1e-9).unwrap();

    let mut worst_residual = 0.0_f64;
    let mut flips_ok = true;
    for idx in 1..=3 {
        let zero = zeros
            .zeros
            .iter()
            .find(|z| z.index == Some(idx))
            .expect("first three positive zeros in span");
        let conn = find_heteroclinic(&m, Connection::Up, zero, &c, &settings).unwrap();
        worst_residual = worst_residual.max((conn.y_unstable - conn.y_stable).abs());
        let base = conn.z_star_section;
        let probe = |dy: f64| {
            let z = ExtendedState::new(base.u, base.v, 0.0, conn.y_stable + dy, base.s);
            classify(&m, &z, true, &settings.step, 200.0).classification
        };
        flips_ok &= probe(2e-10) == Classification::Escape;
        flips_ok &= probe(-2e-10) == Classification::ReturnToSection;
    }
    let pass = worst_residual <= 1e-10 && flips_ok;
    report_line(
        6,
        pass,
        &format!("worst |y_u - y_s| = {worst_residual:.2e} (<=1e-10), classification flips across y* +/- 2e-10: {flips_ok}"),
        t0.elapsed().as_secs_f64(),
        300.0,
    );
}

#[test]
fn acceptance_07_first_order_cancellation() {
    let t0 = Instant::now();
    let omega = 3.0_f64;
    // forcing phase chosen so the first-order fluctuation integrand is odd
    // along the connection orbit: the finite-horizon measurement then sees
    // the genuine second-order energy jump
    let s0 = 0.5 * PI / omega;
    let quad = QuadSettings::default();

    let mut first_order_ok = true;
    let mut measured = Vec::new();
    for eps in [0.02, 0.01, 0.005] {
        let m = block(1.0, 0.0, omega, eps);
        let c = ReferenceCoords::new(&m, 0.0, 0.48, s0).unwrap();
        let settings = HeteroSettings {
            bisect_tol: 1e-13,
            distance_tol: 1e-12,
            workers: 8,
            ..HeteroSettings::default()
        };
        let profile =
            melnikov_profile(&m, Connection::Up, &c, (0.0, 2.2), 80, &quad, 8).unwrap();
        let zeros = find_zeros(&m, &profile, 1e-9).unwrap();
        let zero = zeros.zeros.iter().find(|z| z.index == Some(1)).unwrap();

        let du = delta_u_first_order(&m, Connection::Up, zero.zeta_bar, &c, &quad).unwrap();
        let avg = average_diff_first_order(&m, Connection::Up, zero.zeta_bar, &c, 200.0, &quad)
            .unwrap();
        first_order_ok &= du.abs() <= 1e-12 && avg.limit.abs() <= 1e-12;

        let conn = find_heteroclinic(&m, Connection::Up, zero, &c, &settings).unwrap();
        let meas = measured_average_diff(&m, &conn.z_star, 12.0, &settings.step, 0.2);
        measured.push(meas.diff_at_horizon.abs());
    }
    let r01 = measured[0] / measured[1];
    let r12 = measured[1] / measured[2];
    let quartering = (2.0..=8.0).contains(&r01) && (2.0..=8.0).contains(&r12);
    let pass = first_order_ok && quartering;
    report_line(
        7,
        pass,
        &format!(
            "uncoupled first-order terms = 0: {first_order_ok}; measured energy-jump ratios under eps halving {r01:.2}, {r12:.2} (quartering within factor 2)",
        ),
        t0.elapsed().as_secs_f64(),
        600.0,
    );
}

#[test]
fn acceptance_08_first_order_average_consistency() {
    let t0 = Instant::now();
    let quad = QuadSettings::default();
    let horizon = 12.0;
    let mut remainders = Vec::new();
    for eps in [0.02, 0.01, 0.005] {
        let m = defaults(eps);
        let c = ReferenceCoords::new(&m, 0.0, 0.48, 0.0).unwrap();
        let settings = HeteroSettings {
            bisect_tol: 1e-13,
            distance_tol: 1e-12,
            workers: 8,
            ..HeteroSettings::default()
        };
        let profile =
            melnikov_profile(&m, Connection::Up, &c, (0.0, 2.2), 80, &quad, 8).unwrap();
        let zeros = find_zeros(&m, &profile, 1e-9).unwrap();
        let zero = zeros.zeros.iter().find(|z| z.index == Some(1)).unwrap();
        let conn = find_heteroclinic(&m, Connection::Up, zero, &c, &settings).unwrap();

        let meas = measured_average_diff(&m, &conn.z_star, horizon, &settings.step, 0.2);
        // first-order prediction truncated at the same horizon the
        // measurement reached
        let avg = average_diff_first_order(
            &m,
            Connection::Up,
            conn.zeta_bar,
            &c,
            meas.horizon,
            &quad,
        )
        .unwrap();
        let a_matched = avg.a_grid.last().unwrap().1;
        remainders.push((meas.diff_at_horizon - eps * a_matched).abs() / eps);
    }
    let pass = remainders[1] < remainders[0] && remainders[2] < remainders[1];
    report_line(
        8,
        pass,
        &format!(
            "per-eps remainder |measured - eps*A(T)|/eps = {:.3e} / {:.3e} / {:.3e} (strictly decreasing)",
            remainders[0], remainders[1], remainders[2]
        ),
        t0.elapsed().as_secs_f64(),
        900.0,
    );
}

#[test]
fn acceptance_09_up_down_symmetry_and_identity() {
    let t0 = Instant::now();
    let quad = QuadSettings::with_tol(1e-11);
    let m = defaults(0.01);
    let c = ReferenceCoords::new(&m, 0.2, 0.48, 0.6).unwrap();
    let mut worst_sym = 0.0_f64;
    for i in 0..12 {
        let zeta = -1.5 + 0.46 * i as f64;
        let up = melnikov(&m, Connection::Up, zeta, &c, &quad).unwrap();
        let down = melnikov(&m, Connection::Down, zeta, &c, &quad).unwrap();
        worst_sym = worst_sym.max((down + up).abs());
    }

    // eps = 0: both scattering pipelines are the identity, so the composed
    // map shifts nothing
    let m0 = defaults(0.0);
    let c0 = ReferenceCoords::new(&m0, 0.0, 0.48, 0.0).unwrap();
    let settings = HeteroSettings {
        workers: 8,
        ..HeteroSettings::default()
    };
    let seed = |zeta_bar: f64| ZeroRecord64 {
        zeta_bar,
        slope: 1.0,
        index: Some(1),
        bracket: (zeta_bar - 0.1, zeta_bar + 0.1),
    };
    let mut identity_err = 0.0_f64;
    let mut ordinate_err = 0.0_f64;
    for conn_kind in [Connection::Up, Connection::Down] {
        let conn = find_heteroclinic(&m0, conn_kind, &seed(0.9), &c0, &settings).unwrap();
        let y_expect = match conn_kind {
            Connection::Up => 1.0,
            Connection::Down => -1.0,
        };
        ordinate_err = ordinate_err
            .max((conn.y_stable - y_expect).abs())
            .max((conn.y_unstable - y_expect).abs());
        identity_err = identity_err.max((conn.zeta_star - 0.9).abs());
        let meas = measured_average_diff(&m0, &conn.z_star, 18.0, &settings.step, 0.2);
        identity_err = identity_err.max(meas.diff_at_horizon.abs());
    }

    let pass = worst_sym <= 1e-9 && ordinate_err <= 1e-9 && identity_err <= 1e-9;
    report_line(
        9,
        pass,
        &format!("max |M_down + M_up| = {worst_sym:.2e} (<=1e-9); eps=0 composed-pipeline identity error {identity_err:.2e}, ordinate error {ordinate_err:.2e}"),
        t0.elapsed().as_secs_f64(),
        60.0,
    );
}

#[test]
fn acceptance_10_scan_determinism_and_relabel() {
    let t0 = Instant::now();
    let m = defaults(0.01);
    let thetas: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
    let vs: Vec<f64> = (0..32).map(|i| 0.1 + 0.8 * i as f64 / 32.0).collect();
    let params = ScanParams::<f64> {
        zero_index: 1,
        profile_points: 240,
        avg_t_max: 200.0,
        ..ScanParams::default()
    };
    let run = |workers: usize| {
        let settings = HeteroSettings {
            workers,
            ..HeteroSettings::default()
        };
        let result = hetero::scan(&m, Connection::Up, &thetas, &vs, 0.0, &params, &settings);
        report::scan_csv(&result)
    };
    let csv1 = run(1);
    let csv8 = run(8);
    let identical = csv1 == csv8;
    let relabels = csv1
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",1"))
        .count();
    let pass = identical && relabels >= 1;
    report_line(
        10,
        pass,
        &format!(
            "1-vs-8-worker scan CSV byte-identical: {identical}; relabel boundary cells: {relabels} (>=1)"
        ),
        t0.elapsed().as_secs_f64(),
        1800.0,
    );
}

/// High-precision reference points for the third and fourth positive zeros
/// at v = 0.48, theta = s = 0, computed externally with multiprecision
/// arithmetic for a forcing-parameter set that was not recorded. They cannot
/// be reproduced until (delta, k, omega) are recovered; once known, set them
/// below and remove the ignore attribute.
#[test]
#[ignore = "generating forcing parameters unknown; anchors retained for future activation"]
fn reference_point_anchors() {
    let anchors_z_star = [
        [
            -0.11379311572593962,
            0.1255493597543924,
            0.0,
            1.1115014390242974,
            1.7115826988573189,
        ],
        [
            0.09636673455802006,
            -0.21668659029422145,
            0.0,
            1.120_336_644_341_685,
            2.8594778077860234,
        ],
    ];
    let anchor_avg_diffs = [0.4, -0.3];

    // placeholder parameters: replace with the recovered set
    let m = defaults(0.01);
    let c = ReferenceCoords::new(&m, 0.0, 0.48, 0.0).unwrap();
    let settings = HeteroSettings {
        workers: 8,
        ..HeteroSettings::default()
    };
    let profile = melnikov_profile(
        &m,
        Connection::Up,
        &c,
        (0.0, 4.0 * PI),
        480,
        &settings.quad,
        8,
    )
    .unwrap();
    let zeros = find_zeros(&m, &profile, 1e-9).unwrap();
    for (i, idx) in [3usize, 4usize].iter().enumerate() {
        let zero = zeros.zeros.iter().find(|z| z.index == Some(*idx)).unwrap();
        let conn = find_heteroclinic(&m, Connection::Up, zero, &c, &settings).unwrap();
        let z = conn.z_star;
        let got = [z.u, z.v, z.x, z.y, z.s];
        for (g, a) in got.iter().zip(anchors_z_star[i].iter()) {
            assert!(
                (g - a).abs() < 1e-6,
                "zero {idx}: z* component {g} vs anchor {a}"
            );
        }
        assert!((conn.avg_diff_first_order - anchor_avg_diffs[i]).abs() < 0.05);
    }
}

use std::f64::consts::PI;

use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use mmc_modlab::fmt::{csv_string, g9};
use mmc_modlab::region::{self, Scanner, BOUNDARY_HEADER};
use mmc_modlab::steady_state::{self, arm_energy_ripple, arm_power, Arm};
use mmc_modlab::waveform::{self, RwfEvaluator};
use mmc_modlab::{boundary_profile, pq_of, ConverterParams, OperatingPoint, RequiredRange, Scheme};

fn table1() -> (ConverterParams, RequiredRange) {
    ConverterParams::preset("table1").unwrap()
}

/// Central-difference Jacobian of `f` at `x` against the supplied one, entrywise relative to the row scale.
fn fd_mismatch<const N: usize>(f: impl Fn([f64; N]) -> [f64; N], x: [f64; N], jac: [[f64; N]; N]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..N {
        let h = 1e-6 * x[j].abs().max(1.0);
        let (mut xp, mut xm) = (x, x);
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(xp), f(xm));
        for i in 0..N {
            let scale = jac[i].iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            worst = worst.max((fd - jac[i][j]).abs() / scale);
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10, failure_persistence: None, rng_seed: RngSeed::Fixed(0x4d4d43), ..ProptestConfig::default() })]

    #[test]
    fn direct_jacobian_matches_differences(i in 0.05f64..1.0, phi in -PI..PI, dm in -0.05f64..0.05, dd in -0.1f64..0.1) {
        let (p, _) = table1();
        let pt = OperatingPoint::new(i, phi).unwrap();
        let s = steady_state::solve_direct(&p, &pt).unwrap();
        let x = [s.m_ref1 + dm, s.delta_ref1 + dd];
        let (_, jac) = steady_state::direct_system(&p, &pt, x).unwrap();
        let f = |v: [f64; 2]| steady_state::direct_system(&p, &pt, v).unwrap().0;
        prop_assert!(fd_mismatch(f, x, jac) < 1e-5);
    }

    #[test]
    fn improved_jacobian_matches_differences(i in 0.05f64..1.0, phi in -PI..PI, d in -0.02f64..0.02) {
        let (p, _) = table1();
        let pt = OperatingPoint::new(i, phi).unwrap();
        let s = steady_state::solve_improved_direct(&p, &pt).unwrap();
        let x = [s.h + d, s.m_ref1 - d, s.delta_ref1 + 2.0 * d, s.m_ref2 * s.delta_ref2.cos() + d, s.m_ref2 * s.delta_ref2.sin() - d];
        let (_, jac) = steady_state::improved_system(&p, &pt, x).unwrap();
        let f = |v: [f64; 5]| steady_state::improved_system(&p, &pt, v).unwrap().0;
        prop_assert!(fd_mismatch(f, x, jac) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, rng_seed: RngSeed::Fixed(0x4d4d43), ..ProptestConfig::default() })]

    #[test]
    fn margin_is_distance_to_nearest_limit(i in 0.0f64..1.0, phi in -PI..PI) {
        let (p, _) = table1();
        let pt = OperatingPoint::new(i, phi).unwrap();
        for scheme in [Scheme::Direct, Scheme::IndirectClosedLoop, Scheme::ImprovedDirect] {
            let r = waveform::evaluate_point(scheme, &p, &pt, 2048).unwrap();
            let m = r.margin;
            prop_assert!((m.delta_f_margin - m.f_valley.min(1.0 - m.f_peak)).abs() < 1e-15);
            prop_assert_eq!(m.linear, m.delta_f_margin >= 0.0);
        }
    }

    #[test]
    fn lower_arm_is_upper_arm_half_a_period_later(i in 0.0f64..1.0, phi in -PI..PI, t in 0.0f64..0.02) {
        let (p, _) = table1();
        let pt = OperatingPoint::new(i, phi).unwrap();
        let half = p.period() / 2.0;
        for scheme in [Scheme::Direct, Scheme::IndirectClosedLoop, Scheme::ImprovedDirect] {
            let s = steady_state::solve(scheme, &p, &pt).unwrap();
            let ev = RwfEvaluator::new(scheme, &p, &s).unwrap();
            let (a, b) = (ev.eval(Arm::Lower, t).unwrap(), ev.eval(Arm::Upper, t + half).unwrap());
            prop_assert!((a - b).abs() < 1e-9, "{} {} {}", scheme, a, b);
        }
    }

    #[test]
    fn indirect_variants_share_analytics(i in 0.0f64..1.0, phi in -PI..PI) {
        let (p, _) = table1();
        let pt = OperatingPoint::new(i, phi).unwrap();
        let a = waveform::evaluate_point(Scheme::IndirectClosedLoop, &p, &pt, 1024).unwrap();
        let b = waveform::evaluate_point(Scheme::IndirectOpenLoop, &p, &pt, 1024).unwrap();
        prop_assert_eq!(a.margin, b.margin);
        prop_assert_eq!(a.cap_peak_pu, b.cap_peak_pu);
    }

    #[test]
    fn reactive_power_sign_follows_angle(i in 0.01f64..1.0, phi in -PI..PI) {
        let pt = OperatingPoint::new(i, phi).unwrap();
        let (_, q) = pq_of(&pt);
        prop_assert!((q - i * phi.sin()).abs() < 1e-15);
        if phi > 1e-9 && phi < PI - 1e-9 {
            prop_assert!(q > 0.0);
        }
        if phi < -1e-9 && phi > -PI + 1e-9 {
            prop_assert!(q < 0.0);
        }
    }

    #[test]
    fn boundary_profile_stays_in_range(q_max in 0.05f64..1.0, phi in -PI..PI) {
        let range = RequiredRange::new(q_max).unwrap();
        let i = boundary_profile(&range, phi);
        let (_, q) = pq_of(&OperatingPoint { i_ac_pu: i, phi });
        prop_assert!(i <= 1.0 + 1e-12);
        prop_assert!(q.abs() <= q_max + 1e-12);
    }

    #[test]
    fn g9_round_trips_nine_digits(x in -1e12f64..1e12) {
        let s = g9(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs());
        prop_assert!(!s.contains(','));
    }
}

#[test]
fn arm_energy_closed_form_matches_quadrature() {
    let (p, _) = table1();
    let period = p.period();
    for (i, phi) in [(1.0, 0.3), (0.6, -2.0), (1.0, PI / 2.0), (0.2, 3.0)] {
        let pt = OperatingPoint::new(i, phi).unwrap();
        let s = steady_state::solve_indirect(&p, &pt, Scheme::IndirectClosedLoop).unwrap();
        let e = arm_energy_ripple(&p, &s).unwrap();
        for arm in [Arm::Upper, Arm::Lower] {
            let scale =
                (0..400).map(|k| e.ripple(arm, period * k as f64 / 400.0).abs()).fold(0.0f64, f64::max).max(1e-300);
            // composite Simpson from 0 to t, 2000 panels per period
            let n = 2000;
            let h = period / n as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let (a, m, b) = (k as f64 * h, (k as f64 + 0.5) * h, (k + 1) as f64 * h);
                acc +=
                    h / 6.0 * (arm_power(&p, &s, arm, a) + 4.0 * arm_power(&p, &s, arm, m) + arm_power(&p, &s, arm, b));
                if (k + 1) % 125 == 0 {
                    let closed = e.ripple(arm, b) - e.ripple(arm, 0.0);
                    assert!((acc - closed).abs() <= 1e-9 * scale, "{i} {phi} t={b}: {acc} vs {closed}");
                }
            }
        }
    }
}

#[test]
fn boundary_csv_independent_of_workers() {
    let (p, range) = table1();
    let one = region::scan_boundary_with(&Scanner::with_threads(1), &p, Scheme::IndirectClosedLoop, &range, PI / 90.0)
        .unwrap();
    let four = region::scan_boundary_with(&Scanner::with_threads(4), &p, Scheme::IndirectClosedLoop, &range, PI / 90.0)
        .unwrap();
    let a = csv_string(&BOUNDARY_HEADER, &one.rows()).unwrap();
    let b = csv_string(&BOUNDARY_HEADER, &four.rows()).unwrap();
    assert_eq!(a, b);
    assert!(a.ends_with('\n') && !a.contains('\r'));
}

#[test]
fn required_region_area_is_analytic() {
    // unit disc cut to the band |Q| <= q: area = 2·(asin q + q·sqrt(1 - q²))
    let range = RequiredRange::new(0.5).unwrap();
    let r = region::required_region(&range, PI / 3600.0);
    let q: f64 = 0.5;
    let exact = 2.0 * (q.asin() + q * (1.0 - q * q).sqrt());
    assert!((r.area - exact).abs() < 1e-4, "{} vs {}", r.area, exact);
}

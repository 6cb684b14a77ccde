use std::f64::consts::{PI, SQRT_2};

use mmc_modlab::simulator::*;
use mmc_modlab::steady_state;
use mmc_modlab::waveform::{cap_voltage_report, RwfEvaluator};
use mmc_modlab::{derive_constants, ConverterParams, Error, OperatingPoint, Scheme};

fn table1() -> ConverterParams {
    ConverterParams::preset("table1").unwrap().0
}

fn settled(p: &ConverterParams, cfg: &ControllerConfig, periods: usize) -> ExtractedMetrics {
    let s = simulate_with(p, cfg, &SimOptions::periods(p, periods).keep_last(p, 2)).unwrap();
    extract_metrics(&s, 1).unwrap()
}

fn corner(c: char) -> OperatingPoint {
    OperatingPoint::corner(c).unwrap()
}

#[test]
fn no_load_equilibrium() {
    let p = table1();
    let cfg = ControllerConfig::new(&p, Scheme::Direct, OperatingPoint::new(0.0, 0.0).unwrap());
    let s = simulate(&p, &cfg, 20.0 * p.period(), p.period() / 4000.0).unwrap();
    let n_ref = p.u_dc_nominal;
    for x in s.samples.iter().filter(|x| x.state.t >= 10.0 * p.period()) {
        for j in 0..3 {
            for a in 0..2 {
                assert!((x.state.u_sigma[j][a] / n_ref - 1.0).abs() < 1e-3);
            }
        }
    }
    // the index swings with the grid voltage; its period mean sits at one half
    let last = s.period_slice(0);
    for j in 0..3 {
        for a in 0..2 {
            let mean = last.iter().map(|x| x.f[j][a]).sum::<f64>() / last.len() as f64;
            assert!((mean - 0.5).abs() < 1e-3, "mean f {mean}");
        }
    }
}

#[test]
fn dft_is_exact_on_pure_tones() {
    let p = table1();
    let dc = derive_constants(&p).unwrap();
    let cfg = ControllerConfig::new(&p, Scheme::Direct, OperatingPoint::new(0.0, 0.0).unwrap());
    let spp = 400;
    let w = p.omega();
    let u_sm = p.u_cap_nominal();
    let n = p.n_submodules as f64;
    let samples = (0..3 * spp)
        .map(|i| {
            let t = i as f64 * p.period() / spp as f64;
            let u = n * (u_sm + 30.0 * (w * t).sin());
            Sample {
                state: PlantState {
                    t,
                    u_sigma: [[u; 2]; 3],
                    i_com: [0.0; 3],
                    i_ac: [0, 1, 2].map(|j| 30.0 * (w * t - 2.0 * PI * j as f64 / 3.0).sin()),
                },
                f: [[0.5; 2]; 3],
                e_d_ref: [p.u_dc_nominal; 3],
                v2: [0.0; 3],
                p_pu: 0.0,
                q_pu: 0.0,
            }
        })
        .collect();
    let series = SimSeries {
        params: p,
        config: cfg,
        dt: p.period() / 4000.0,
        steps_per_period: 4000,
        samples_per_period: spp,
        samples,
    };
    let m = extract_metrics(&series, 3).unwrap();
    assert!((m.cap_dc_pu[0][0] - 1.0).abs() < 1e-12);
    assert!((m.cap_peak_pu[0][0] - (u_sm + 30.0) / u_sm).abs() < 1e-9);
    for j in 0..3 {
        assert!((m.i_ac_pu[j] * SQRT_2 * dc.i_base - 30.0).abs() < 1e-9);
        assert!(m.i_ac_angle[j].abs() < 1e-9);
    }
    assert!(m.k_cir[0].abs() < 1e-12);
}

#[test]
fn unsettled_series_is_reported() {
    let p = table1();
    let cfg = ControllerConfig::new(&p, Scheme::Direct, corner('A'));
    let s = simulate(&p, &cfg, 20.0 * p.period(), p.period() / 4000.0).unwrap();
    // still inside the start-up transient after the ramp
    let early = SimSeries { samples: s.samples[..6 * 400].to_vec(), ..s };
    assert!(matches!(extract_metrics(&early, 1), Err(Error::NotSettled { .. })));
}

#[test]
fn rejects_bad_options() {
    let p = table1();
    let cfg = ControllerConfig::new(&p, Scheme::Direct, corner('A'));
    let t = p.period();
    assert!(simulate(&p, &cfg, 20.0 * t, t / 1000.0).is_err());
    assert!(simulate(&p, &cfg, 10.0 * t, t / 4000.0).is_err());
    let open = ControllerConfig::new(&p, Scheme::ImprovedDirect, corner('A')).open_loop();
    assert!(simulate(&p, &open, 20.0 * t, t / 4000.0).is_err());
}

#[test]
fn energy_bookkeeping_lossless() {
    let p = table1();
    let mut cfg = ControllerConfig::new(&p, Scheme::Direct, corner('A'));
    cfg.arm_resistance_pu = 0.0;
    let opts = SimOptions { samples_per_period: 4000, ..SimOptions::periods(&p, 30).keep_last(&p, 2) };
    let s = simulate_with(&p, &cfg, &opts).unwrap();
    let terms: Vec<[f64; 5]> = s.samples.iter().map(|x| energy_terms(&p, &cfg, &x.state).unwrap()).collect();
    let h = s.dt;
    let mut worst: f64 = 0.0;
    for w in terms.windows(2) {
        let stored = (w[1][0] + w[1][1] - w[0][0] - w[0][1]) / h;
        let net = |a: &[f64; 5]| a[2] - a[3] - a[4];
        let flow = 0.5 * (net(&w[0]) + net(&w[1]));
        worst = worst.max((stored - flow).abs());
    }
    assert!(worst < 1e-3 * p.s_rated, "bookkeeping error {:.3e} W", worst);
}

#[test]
fn step_halving_changes_metrics_little() {
    let p = table1();
    let cfg = ControllerConfig::new(&p, Scheme::Direct, corner('A'));
    let coarse = settled(&p, &cfg, 100);
    let mut fine_cfg = cfg;
    fine_cfg.decimation = 2 * cfg.decimation;
    let opts = SimOptions::periods(&p, 100).with_steps_per_period(&p, 8000).keep_last(&p, 2);
    let fine = extract_metrics(&simulate_with(&p, &fine_cfg, &opts).unwrap(), 1).unwrap();
    let pairs = [
        (coarse.i_ac_pu[0], fine.i_ac_pu[0]),
        (coarse.k_cir[0], fine.k_cir[0]),
        (coarse.cap_dc_pu[0][0], fine.cap_dc_pu[0][0]),
        (coarse.cap_peak_pu[0][0], fine.cap_peak_pu[0][0]),
        (coarse.margin.f_peak, fine.margin.f_peak),
        (coarse.margin.f_valley, fine.margin.f_valley),
    ];
    for (a, b) in pairs {
        assert!(((a - b) / a).abs() < 5e-4, "{a} vs {b}");
    }
}

#[test]
fn open_loop_feed_reaches_target_current() {
    let p = table1();
    let pt = corner('A');
    let m = settled(&p, &ControllerConfig::new(&p, Scheme::Direct, pt).open_loop(), 150);
    assert!((m.i_ac_pu[0] - pt.i_ac_pu).abs() < 0.01 * pt.i_ac_pu, "I {}", m.i_ac_pu[0]);
    assert!((m.i_ac_angle[0] + pt.phi).abs() < 1f64.to_radians(), "angle {}", m.i_ac_angle[0]);
}

#[test]
fn ccsc_suppresses_circulating_current() {
    let p = table1();
    let m = settled(&p, &ControllerConfig::new(&p, Scheme::ImprovedDirect, corner('A')), 150);
    for j in 0..3 {
        assert!(m.i_cir_pu[j] < 0.02 * m.i_ac_pu[j], "residual {}", m.i_cir_pu[j]);
    }
}

#[test]
fn inductive_direct_capacitor_dc_rises() {
    let p = table1();
    let m = settled(&p, &ControllerConfig::new(&p, Scheme::Direct, corner('B')), 150);
    assert!(m.cap_dc_pu.iter().flatten().all(|&d| d > 1.0));
}

#[test]
fn indirect_margin_matches_analytics_at_d() {
    let p = table1();
    let pt = corner('D');
    let m = settled(&p, &ControllerConfig::new(&p, Scheme::IndirectClosedLoop, pt), 150);
    let sol = steady_state::solve(Scheme::IndirectClosedLoop, &p, &pt).unwrap();
    let analytic = RwfEvaluator::new(Scheme::IndirectClosedLoop, &p, &sol).unwrap().margin(p.period(), 4096).unwrap();
    assert!((m.margin.delta_f_margin - analytic.delta_f_margin).abs() < 0.01);
}

#[test]
fn open_loop_indirect_matches_closed_loop() {
    let p = table1();
    let pt = corner('B');
    let sol = steady_state::solve(Scheme::IndirectOpenLoop, &p, &pt).unwrap();
    let ev = RwfEvaluator::new(Scheme::IndirectOpenLoop, &p, &sol).unwrap();
    let cap = cap_voltage_report(Scheme::IndirectOpenLoop, &p, &sol).unwrap();
    let m = settled(&p, &ControllerConfig::new(&p, Scheme::IndirectOpenLoop, pt), 150);
    assert!(m.rwf_gap(&ev, p.period()).unwrap() < 0.01);
    assert!((m.cap_dc_pu[0][0] / cap.dc - 1.0).abs() < 0.01);
    assert!((m.cap_peak_pu[0][0] / cap.peak - 1.0).abs() < 0.01);
}

#[test]
fn phase_legs_agree() {
    let p = table1();
    let m = settled(&p, &ControllerConfig::new(&p, Scheme::Direct, corner('C')), 150);
    for j in 1..3 {
        assert!((m.i_ac_pu[j] / m.i_ac_pu[0] - 1.0).abs() < 1e-3);
        assert!((m.k_cir[j] / m.k_cir[0] - 1.0).abs() < 1e-3);
        for a in 0..2 {
            assert!((m.cap_dc_pu[j][a] / m.cap_dc_pu[0][a] - 1.0).abs() < 1e-3);
            assert!((m.cap_peak_pu[j][a] / m.cap_peak_pu[0][a] - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn active_power_reversal_settles_for_every_scheme() {
    let p = table1();
    let t1 = p.period();
    let from = OperatingPoint::new(1.0, 0.0).unwrap();
    let to = OperatingPoint::new(1.0, PI).unwrap();
    for scheme in [Scheme::Direct, Scheme::IndirectClosedLoop, Scheme::IndirectOpenLoop, Scheme::ImprovedDirect] {
        let r = simulate_step(&p, scheme, from, to, 100.0 * t1, 250.0 * t1).unwrap();
        assert!(r.settled, "{scheme} did not settle");
        assert!(r.final_p_error.abs() < STEP_BAND);
        assert!(r.final_q_error.abs() < STEP_BAND);
        assert!(r.final_dc_error.abs() < STEP_BAND * r.target_dc_pu);
    }
}

#[test]
fn reactive_step_leaves_active_power_alone() {
    let p = table1();
    let t1 = p.period();
    let from = OperatingPoint::new(0.5, -PI / 2.0).unwrap();
    let to = OperatingPoint::new(0.5, PI / 2.0).unwrap();
    let r = simulate_step(&p, Scheme::IndirectClosedLoop, from, to, 100.0 * t1, 200.0 * t1).unwrap();
    assert!(r.settled);
    assert!(r.max_p_excursion < 0.05, "P excursion {}", r.max_p_excursion);
}

#[test]
fn zero_step_matches_plain_run() {
    let p = table1();
    let t1 = p.period();
    let pt = corner('A');
    let r = simulate_step(&p, Scheme::Direct, pt, pt, 10.0 * t1, 20.0 * t1).unwrap();
    let plain = simulate(&p, &ControllerConfig::new(&p, Scheme::Direct, pt), 20.0 * t1, t1 / 4000.0).unwrap();
    assert_eq!(r.series.samples.len(), plain.samples.len());
    for (a, b) in r.series.samples.iter().zip(&plain.samples) {
        for j in 0..3 {
            assert!((a.state.i_ac[j] - b.state.i_ac[j]).abs() <= 1e-9 * (1.0 + b.state.i_ac[j].abs()));
            for k in 0..2 {
                assert!((a.state.u_sigma[j][k] - b.state.u_sigma[j][k]).abs() <= 1e-9 * b.state.u_sigma[j][k]);
            }
        }
    }
}

#[test]
fn series_csv_has_one_row_per_sample() {
    let p = table1();
    let s =
        simulate(&p, &ControllerConfig::new(&p, Scheme::Direct, corner('A')), 20.0 * p.period(), p.period() / 4000.0)
            .unwrap();
    let mut buf = Vec::new();
    write_series_csv(&s, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), SERIES_HEADER.len());
    assert_eq!(lines.count(), s.samples.len());
}

#[test]
fn hybrid_modes_reject_other_schemes() {
    let p = table1();
    assert!(hybrid_mode_margin(&p, &corner('A'), Scheme::Direct).is_err());
}

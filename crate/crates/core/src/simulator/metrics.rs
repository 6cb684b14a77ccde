//! Steady-state extraction, step reports and the hybrid-mode margin.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use super::{simulate_with, ControllerConfig, SimOptions, SimSeries, StepChange};
use crate::error::{Error, Result};
use crate::fmt::{g9, write_csv};
use crate::params::{derive_constants, wrap_angle, ConverterParams, OperatingPoint, Scheme};
use crate::steady_state::{self, Arm};
use crate::waveform::{self, MarginReport, PeriodWaveform, RwfEvaluator, TrigInterpolant, DEFAULT_SAMPLES};

/// Largest per-period change (p.u.) between the last two periods accepted as settled.
pub const SETTLED_DRIFT: f64 = 0.002;
/// Periods simulated for a hybrid-mode margin.
pub const HYBRID_PERIODS: usize = 200;
/// Settling band for step reports (p.u. for P and Q, relative for capacitor dc).
pub const STEP_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractedMetrics {
    pub n_periods: usize,
    /// RMS ac current per phase (p.u.).
    pub i_ac_pu: [f64; 3],
    /// Angle of each phase current against its own grid-voltage phase (equals −φ).
    pub i_ac_angle: [f64; 3],
    pub p_pu: f64,
    pub q_pu: f64,
    /// RMS of the 2ω circulating current per leg (p.u.).
    pub i_cir_pu: [f64; 3],
    pub k_cir: [f64; 3],
    /// Phase of the 2ω circulating current, referred to twice the leg's phase angle.
    pub theta_cir: [f64; 3],
    /// [phase][upper, lower] capacitor dc (p.u. of U_capN).
    pub cap_dc_pu: [[f64; 2]; 3],
    pub cap_peak_pu: [[f64; 2]; 3],
    /// Margin of phase a's measured insertion indices.
    pub margin: MarginReport,
    pub e_d_ref_mean: f64,
    pub v2_amplitude: f64,
    pub drift: f64,
    #[serde(skip)]
    pub rwf: [Vec<f64>; 2],
}

impl ExtractedMetrics {
    /// Flat record for CSV emission (phase a where a field is per phase).
    pub fn record(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("n_periods", self.n_periods as f64),
            ("i_ac_pu", self.i_ac_pu[0]),
            ("i_ac_angle", self.i_ac_angle[0]),
            ("p_pu", self.p_pu),
            ("q_pu", self.q_pu),
            ("i_cir_pu", self.i_cir_pu[0]),
            ("k_cir", self.k_cir[0]),
            ("theta_cir", self.theta_cir[0]),
            ("cap_dc_pu", self.cap_dc_pu[0][0]),
            ("cap_peak_pu", self.cap_peak_pu[0][0]),
            ("f_peak", self.margin.f_peak),
            ("f_valley", self.margin.f_valley),
            ("delta_f_margin", self.margin.delta_f_margin),
            ("e_d_ref_mean", self.e_d_ref_mean),
            ("v2_amplitude", self.v2_amplitude),
            ("drift", self.drift),
        ]
    }

    /// Band-limited interpolant of phase a's measured insertion index over the last period.
    pub fn rwf_interpolant(&self, arm: Arm, period: f64) -> TrigInterpolant {
        let i = match arm {
            Arm::Upper => 0,
            Arm::Lower => 1,
        };
        TrigInterpolant::new(period, &self.rwf[i])
    }

    /// Max pointwise gap between the measured and an analytic RWF over both arms.
    pub fn rwf_gap(&self, analytic: &RwfEvaluator, period: f64) -> Result<f64> {
        let mut gap: f64 = 0.0;
        for arm in [Arm::Upper, Arm::Lower] {
            let m = self.rwf_interpolant(arm, period);
            for k in 0..DEFAULT_SAMPLES {
                let t = period * k as f64 / DEFAULT_SAMPLES as f64;
                gap = gap.max((m.eval(t) - analytic.eval(arm, t)?).abs());
            }
        }
        Ok(gap)
    }
}

/// Sine-referenced phasor of harmonic `h` of uniformly sampled data.
fn phasor(values: impl Iterator<Item = (f64, f64)>, omega: f64, h: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut n = 0usize;
    for (t, v) in values {
        acc += v * Complex64::from_polar(1.0, -h * omega * t);
        n += 1;
    }
    Complex64::i() * acc * (2.0 / n as f64)
}

struct PeriodSummary {
    cap_dc: [[f64; 2]; 3],
    i_ac: f64,
    i_cir: f64,
    f_max: f64,
    f_min: f64,
}

fn summarize(series: &SimSeries, k: usize, u_cap: f64, n: f64, i_base: f64, omega: f64) -> PeriodSummary {
    let s = series.period_slice(k);
    let len = s.len() as f64;
    let mut cap_dc = [[0.0; 2]; 3];
    for j in 0..3 {
        for a in 0..2 {
            cap_dc[j][a] = s.iter().map(|x| x.state.u_sigma[j][a]).sum::<f64>() / len / (n * u_cap);
        }
    }
    let i1 = phasor(s.iter().map(|x| (x.state.t, x.state.i_ac[0])), omega, 1.0);
    let i2 = phasor(s.iter().map(|x| (x.state.t, x.state.i_com[0])), omega, 2.0);
    let f = s.iter().flat_map(|x| x.f[0]);
    let (f_max, f_min) = f.fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), v| (a.max(v), b.min(v)));
    PeriodSummary { cap_dc, i_ac: i1.norm() / SQRT_2 / i_base, i_cir: i2.norm() / SQRT_2 / i_base, f_max, f_min }
}

/// Fourier metrics over the last `n_periods` whole periods of a settled series.
pub fn extract_metrics(series: &SimSeries, n_periods: usize) -> Result<ExtractedMetrics> {
    let params = &series.params;
    let dc = derive_constants(params)?;
    let omega = dc.omega;
    let period = params.period();
    let n = params.n_submodules as f64;
    let u_cap = params.u_cap_nominal();
    if n_periods == 0 || series.whole_periods() < n_periods.max(2) {
        return Err(Error::InvalidParameter {
            field: "n_periods",
            reason: format!("need {} recorded periods, series holds {}", n_periods.max(2), series.whole_periods()),
        });
    }
    let last = summarize(series, 0, u_cap, n, dc.i_base, omega);
    let prev = summarize(series, 1, u_cap, n, dc.i_base, omega);
    let mut drift: f64 = 0.0;
    for j in 0..3 {
        for a in 0..2 {
            drift = drift.max((last.cap_dc[j][a] - prev.cap_dc[j][a]).abs());
        }
    }
    drift = drift
        .max((last.i_ac - prev.i_ac).abs())
        .max((last.i_cir - prev.i_cir).abs())
        .max((last.f_max - prev.f_max).abs())
        .max((last.f_min - prev.f_min).abs());
    if drift >= SETTLED_DRIFT {
        return Err(Error::NotSettled {
            drift: format!("largest per-period change {drift:.3e} p.u. over the last two periods"),
        });
    }

    let spp = series.samples_per_period;
    let all = &series.samples[series.samples.len() - n_periods * spp..];
    let len = all.len() as f64;
    let mut i_ac_pu = [0.0; 3];
    let mut i_ac_angle = [0.0; 3];
    let mut i_cir_pu = [0.0; 3];
    let mut k_cir = [0.0; 3];
    let mut theta_cir = [0.0; 3];
    let mut cap_dc_pu = [[0.0; 2]; 3];
    let mut cap_peak_pu = [[0.0; 2]; 3];
    let tail = series.period_slice(0);
    for j in 0..3 {
        let shift = 2.0 * PI * j as f64 / 3.0;
        let i1 = phasor(all.iter().map(|x| (x.state.t, x.state.i_ac[j])), omega, 1.0);
        let i2 = phasor(all.iter().map(|x| (x.state.t, x.state.i_com[j])), omega, 2.0);
        i_ac_pu[j] = i1.norm() / SQRT_2 / dc.i_base;
        i_ac_angle[j] = wrap_angle(i1.arg() + shift);
        i_cir_pu[j] = i2.norm() / SQRT_2 / dc.i_base;
        k_cir[j] = if i1.norm() > 0.0 { i2.norm() / i1.norm() } else { 0.0 };
        theta_cir[j] = wrap_angle(i2.arg() + 2.0 * shift);
        for a in 0..2 {
            cap_dc_pu[j][a] = all.iter().map(|x| x.state.u_sigma[j][a]).sum::<f64>() / len / (n * u_cap);
            let vals: Vec<f64> = tail.iter().map(|x| x.state.u_sigma[j][a] / (n * u_cap)).collect();
            cap_peak_pu[j][a] = resampled(period, &vals).peak.1;
        }
    }
    let p_pu = all.iter().map(|x| x.p_pu).sum::<f64>() / len;
    let q_pu = all.iter().map(|x| x.q_pu).sum::<f64>() / len;
    let rwf = [tail.iter().map(|x| x.f[0][0]).collect::<Vec<_>>(), tail.iter().map(|x| x.f[0][1]).collect::<Vec<_>>()];
    let wp = resampled(period, &rwf[0]);
    let wn = resampled(period, &rwf[1]);
    let margin = waveform::margin_of(&[&wp, &wn]);
    let e_d_ref_mean = all.iter().map(|x| x.e_d_ref[0]).sum::<f64>() / len;
    let v2_amplitude = phasor(all.iter().map(|x| (x.state.t, x.v2[0])), omega, 2.0).norm();
    Ok(ExtractedMetrics {
        n_periods,
        i_ac_pu,
        i_ac_angle,
        p_pu,
        q_pu,
        i_cir_pu,
        k_cir,
        theta_cir,
        cap_dc_pu,
        cap_peak_pu,
        margin,
        e_d_ref_mean,
        v2_amplitude,
        drift,
        rwf,
    })
}

/// Waveform of one recorded period, refined on its band-limited interpolant.
fn resampled(period: f64, values: &[f64]) -> PeriodWaveform {
    let interp = TrigInterpolant::new(period, values);
    PeriodWaveform::from_fn(period, DEFAULT_SAMPLES, |t| interp.eval(t))
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    #[serde(skip)]
    pub series: SimSeries,
    pub settled: bool,
    /// Time after the step until P, Q and capacitor dc stay inside their bands.
    pub settling_time: Option<f64>,
    pub max_p_excursion: f64,
    pub max_q_excursion: f64,
    pub max_dc_excursion: f64,
    pub final_p_error: f64,
    pub final_q_error: f64,
    pub final_dc_error: f64,
    pub target_dc_pu: f64,
    pub metrics: Option<ExtractedMetrics>,
}

/// Post-step analytic capacitor dc (p.u.); schemes without analytics use 1.
fn analytic_dc(scheme: Scheme, params: &ConverterParams, point: &OperatingPoint) -> Result<f64> {
    match scheme {
        Scheme::DirectCvcOnly | Scheme::DirectCcscOnly => Ok(1.0),
        _ => {
            let sol = steady_state::solve(scheme, params, point)?;
            Ok(waveform::cap_voltage_report(scheme, params, &sol)?.dc)
        }
    }
}

pub fn simulate_step(
    params: &ConverterParams,
    scheme: Scheme,
    from: OperatingPoint,
    to: OperatingPoint,
    t_step: f64,
    duration: f64,
) -> Result<StepReport> {
    let period = params.period();
    for p in [&from, &to] {
        if !matches!(scheme, Scheme::DirectCvcOnly | Scheme::DirectCcscOnly) {
            steady_state::solve(scheme, params, p)?;
        } else {
            steady_state::solve_direct(params, p)?;
        }
    }
    if !(t_step > 0.0 && t_step < duration) {
        return Err(Error::InvalidParameter { field: "t_step", reason: format!("must lie in (0, {duration})") });
    }
    let mut cfg = ControllerConfig::new(params, scheme, from);
    cfg.step = Some(StepChange { t_step, to });
    let opts = SimOptions::periods(params, 20);
    let opts = SimOptions { duration, ..opts };
    let series = simulate_with(params, &cfg, &opts)?;

    let dc_target = analytic_dc(scheme, params, &to)?;
    let (p_t, q_t) = crate::params::pq_of(&to);
    let n = params.n_submodules as f64;
    let u_cap = params.u_cap_nominal();
    let spp = series.samples_per_period;
    let first = (t_step / period).ceil() as usize;
    let mut per: Vec<(f64, f64, f64, f64)> = Vec::new();
    let total = series.whole_periods();
    for k in first..total {
        let s = &series.samples[k * spp..(k + 1) * spp];
        let len = s.len() as f64;
        let p = s.iter().map(|x| x.p_pu).sum::<f64>() / len;
        let q = s.iter().map(|x| x.q_pu).sum::<f64>() / len;
        let d = s.iter().map(|x| x.state.u_sigma.iter().map(|a| a[0] + a[1]).sum::<f64>() / 6.0).sum::<f64>()
            / len
            / (n * u_cap);
        per.push(((k + 1) as f64 * period, p, q, d));
    }
    let in_band = |&(_, p, q, d): &(f64, f64, f64, f64)| {
        (p - p_t).abs() <= STEP_BAND && (q - q_t).abs() <= STEP_BAND && (d - dc_target).abs() <= STEP_BAND * dc_target
    };
    let mut settle_idx = None;
    for i in (0..per.len()).rev() {
        if in_band(&per[i]) {
            settle_idx = Some(i);
        } else {
            break;
        }
    }
    let settling_time = settle_idx.map(|i| per[i].0 - t_step);
    let after = series.samples.iter().filter(|x| x.state.t >= t_step);
    let (mut mp, mut mq) = (0.0f64, 0.0f64);
    for x in after {
        mp = mp.max((x.p_pu - p_t).abs());
        mq = mq.max((x.q_pu - q_t).abs());
    }
    let md = per.iter().map(|x| (x.3 - dc_target).abs()).fold(0.0, f64::max);
    let (fp, fq, fd) =
        per.last().map(|x| (x.1 - p_t, x.2 - q_t, x.3 - dc_target)).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let metrics = extract_metrics(&series, 1).ok();
    Ok(StepReport {
        settled: settling_time.is_some() && metrics.is_some(),
        settling_time,
        max_p_excursion: mp,
        max_q_excursion: mq,
        max_dc_excursion: md,
        final_p_error: fp,
        final_q_error: fq,
        final_dc_error: fd,
        target_dc_pu: dc_target,
        metrics,
        series,
    })
}

/// Steady-state margin with only one auxiliary loop added to direct modulation.
pub fn hybrid_mode_margin(params: &ConverterParams, point: &OperatingPoint, mode: Scheme) -> Result<MarginReport> {
    if !matches!(mode, Scheme::DirectCvcOnly | Scheme::DirectCcscOnly) {
        return Err(Error::InvalidParameter {
            field: "mode",
            reason: format!("expected direct-cvc-only or direct-ccsc-only, got {mode}"),
        });
    }
    steady_state::solve_direct(params, point)?;
    let cfg = ControllerConfig::new(params, mode, *point);
    let opts = SimOptions::periods(params, HYBRID_PERIODS).keep_last(params, 2);
    let series = simulate_with(params, &cfg, &opts)?;
    Ok(extract_metrics(&series, 1)?.margin)
}

pub const SERIES_HEADER: [&str; 27] = [
    "t_s",
    "u_sigma_ap_v",
    "u_sigma_an_v",
    "u_sigma_bp_v",
    "u_sigma_bn_v",
    "u_sigma_cp_v",
    "u_sigma_cn_v",
    "i_ap_a",
    "i_an_a",
    "i_bp_a",
    "i_bn_a",
    "i_cp_a",
    "i_cn_a",
    "i_ac_a_a",
    "i_ac_b_a",
    "i_ac_c_a",
    "f_ap",
    "f_an",
    "f_bp",
    "f_bn",
    "f_cp",
    "f_cn",
    "e_d_ref_v",
    "v2_ref_v",
    "p_pu",
    "q_pu",
    "i_com_a_a",
];

pub fn write_series_csv<W: Write>(series: &SimSeries, out: W) -> Result<()> {
    let rows = series.samples.iter().map(|x| {
        let s = &x.state;
        let mut r = Vec::with_capacity(SERIES_HEADER.len());
        r.push(g9(s.t));
        for j in 0..3 {
            r.push(g9(s.u_sigma[j][0]));
            r.push(g9(s.u_sigma[j][1]));
        }
        for j in 0..3 {
            r.push(g9(s.arm_current(j, false)));
            r.push(g9(s.arm_current(j, true)));
        }
        for j in 0..3 {
            r.push(g9(s.i_ac[j]));
        }
        for j in 0..3 {
            r.push(g9(x.f[j][0]));
            r.push(g9(x.f[j][1]));
        }
        r.push(g9(x.e_d_ref[0]));
        r.push(g9(x.v2[0]));
        r.push(g9(x.p_pu));
        r.push(g9(x.q_pu));
        r.push(g9(s.i_com[0]));
        r
    });
    write_csv(out, &SERIES_HEADER, rows)
}

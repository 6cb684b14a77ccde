//! Reference waveform functions and capacitor voltages over one fundamental period.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{derive_constants, ConverterParams, OperatingPoint, Scheme};
use crate::steady_state::{
    self, arm_energy_ripple, cap_ripple_harmonics, Arm, ArmEnergyRipple, CapRippleHarmonics, SteadyStateSolution,
};

pub const DEFAULT_SAMPLES: usize = 4096;
pub const MIN_SAMPLES: usize = 1024;
/// Pointwise RWF tolerance for the indirect/improved-direct equivalence check.
pub const EQUIVALENCE_TOL: f64 = 0.01;

const GOLDEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodWaveform {
    pub period: f64,
    pub samples: Vec<(f64, f64)>,
    pub n_samples: usize,
    pub peak: (f64, f64),
    pub valley: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginReport {
    pub f_peak: f64,
    pub f_valley: f64,
    pub delta_f_margin: f64,
    pub linear: bool,
}

impl MarginReport {
    pub fn from_extrema(f_peak: f64, f_valley: f64) -> Self {
        let delta_f_margin = f_valley.min(1.0 - f_peak);
        MarginReport { f_peak, f_valley, delta_f_margin, linear: delta_f_margin > 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapVoltageReport {
    pub peak: f64,
    pub dc: f64,
    pub waveform: PeriodWaveform,
}

/// Maximise `f` on [a, b] by golden-section search until the bracket is below `tol`.
pub fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

fn refine(f: &impl Fn(f64) -> f64, samples: &[(f64, f64)], idx: usize, period: f64, sign: f64) -> (f64, f64) {
    let h = period / samples.len() as f64;
    let (t0, v0) = samples[idx];
    let g = |t: f64| sign * f(t);
    let (t, gv) = golden_max(&g, t0 - h, t0 + h, GOLDEN_TOL * period);
    let v = sign * gv;
    if sign * v >= sign * v0 && v.is_finite() {
        (t.rem_euclid(period), v)
    } else {
        (t0, v0)
    }
}

/// Grid argmax/argmin refined by golden-section search on the continuous evaluator.
pub fn extrema(samples: &[(f64, f64)], period: f64, f: &impl Fn(f64) -> f64) -> ((f64, f64), (f64, f64)) {
    let (mut imax, mut imin) = (0, 0);
    for (i, &(_, v)) in samples.iter().enumerate() {
        if v > samples[imax].1 {
            imax = i;
        }
        if v < samples[imin].1 {
            imin = i;
        }
    }
    let (tp, vp) = refine(f, samples, imax, period, 1.0);
    let (tv, vv) = refine(f, samples, imin, period, -1.0);
    ((tp, vp), (tv, vv))
}

impl PeriodWaveform {
    pub fn from_fn(period: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = n.max(MIN_SAMPLES);
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = period * k as f64 / n as f64;
                (t, f(t))
            })
            .collect();
        let (peak, valley) = extrema(&samples, period, &f);
        PeriodWaveform { period, n_samples: n, samples, peak, valley }
    }

    pub fn try_from_fn(period: f64, n: usize, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let n = n.max(MIN_SAMPLES);
        for k in 0..n {
            f(period * k as f64 / n as f64)?;
        }
        Ok(Self::from_fn(period, n, |t| f(t).unwrap_or(f64::NAN)))
    }

    /// Uniform samples over [0, T) refined on their trigonometric interpolant.
    pub fn from_samples(period: f64, values: &[f64]) -> Self {
        let interp = TrigInterpolant::new(period, values);
        let n = values.len();
        let samples: Vec<(f64, f64)> =
            values.iter().enumerate().map(|(k, &v)| (period * k as f64 / n as f64, v)).collect();
        let (peak, valley) = extrema(&samples, period, &|t| interp.eval(t));
        PeriodWaveform { period, n_samples: n, samples, peak, valley }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|s| s.1).sum::<f64>() / self.samples.len() as f64
    }
}

/// Band-limited interpolant of uniformly sampled periodic data.
pub struct TrigInterpolant {
    omega: f64,
    a0: f64,
    coeffs: Vec<(f64, f64)>,
}

impl TrigInterpolant {
    pub fn new(period: f64, values: &[f64]) -> Self {
        let n = values.len();
        let omega = 2.0 * std::f64::consts::PI / period;
        let a0 = values.iter().sum::<f64>() / n as f64;
        let hmax = (n - 1) / 2;
        let coeffs = (1..=hmax)
            .map(|h| {
                let (mut a, mut b) = (0.0, 0.0);
                for (k, v) in values.iter().enumerate() {
                    let x = 2.0 * std::f64::consts::PI * (h * k % n) as f64 / n as f64;
                    a += v * x.cos();
                    b += v * x.sin();
                }
                (2.0 * a / n as f64, 2.0 * b / n as f64)
            })
            .collect();
        TrigInterpolant { omega, a0, coeffs }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut s = self.a0;
        for (h, (a, b)) in self.coeffs.iter().enumerate() {
            let x = (h + 1) as f64 * self.omega * t;
            s += a * x.cos() + b * x.sin();
        }
        s
    }
}

pub fn margin(waveform: &PeriodWaveform) -> MarginReport {
    MarginReport::from_extrema(waveform.peak.1, waveform.valley.1)
}

/// Combined margin over several waveforms (typically both arms).
pub fn margin_of(waveforms: &[&PeriodWaveform]) -> MarginReport {
    let peak = waveforms.iter().map(|w| w.peak.1).fold(f64::NEG_INFINITY, f64::max);
    let valley = waveforms.iter().map(|w| w.valley.1).fold(f64::INFINITY, f64::min);
    MarginReport::from_extrema(peak, valley)
}

/// Continuous RWF of one scheme's steady state.
#[derive(Debug, Clone)]
pub enum RwfEvaluator {
    Direct { omega: f64, m: f64, d: f64 },
    Improved { omega: f64, h: f64, m1: f64, d1: f64, m2: f64, d2: f64 },
    Indirect { omega: f64, half_udc: f64, uc_amp: f64, dconv: f64, n: f64, c: f64, energy: ArmEnergyRipple },
}

fn check_scheme(scheme: Scheme, sol: &SteadyStateSolution) -> Result<()> {
    let ok = scheme == sol.scheme || (scheme.is_indirect() && sol.scheme.is_indirect());
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field: "scheme",
            reason: format!("solution was computed for {}, not {}", sol.scheme, scheme),
        })
    }
}

impl RwfEvaluator {
    pub fn new(scheme: Scheme, params: &ConverterParams, sol: &SteadyStateSolution) -> Result<Self> {
        check_scheme(scheme, sol)?;
        let omega = params.omega();
        Ok(match scheme {
            Scheme::Direct => RwfEvaluator::Direct { omega, m: sol.m_ref1, d: sol.delta_ref1 },
            Scheme::ImprovedDirect => RwfEvaluator::Improved {
                omega,
                h: sol.h,
                m1: sol.m_ref1,
                d1: sol.delta_ref1,
                m2: sol.m_ref2,
                d2: sol.delta_ref2,
            },
            Scheme::IndirectClosedLoop | Scheme::IndirectOpenLoop => {
                let uc = sol.m_conv1 * (params.u_dc_nominal / 2.0) / SQRT_2;
                RwfEvaluator::Indirect {
                    omega,
                    half_udc: params.u_dc_nominal / 2.0,
                    uc_amp: SQRT_2 * uc,
                    dconv: sol.delta_conv1,
                    n: params.n_submodules as f64,
                    c: params.c_sm,
                    energy: arm_energy_ripple(params, sol)?,
                }
            }
            Scheme::DirectCvcOnly | Scheme::DirectCcscOnly => return Err(Error::NoAnalytic(scheme)),
        })
    }

    pub fn eval(&self, arm: Arm, t: f64) -> Result<f64> {
        let s = match arm {
            Arm::Upper => -1.0,
            Arm::Lower => 1.0,
        };
        Ok(match self {
            RwfEvaluator::Direct { omega, m, d } => 0.5 + s * m / 2.0 * (omega * t + d).sin(),
            RwfEvaluator::Improved { omega, h, m1, d1, m2, d2 } => {
                0.5 / h + s * m1 / 2.0 * (omega * t + d1).sin() + m2 / 2.0 * (2.0 * omega * t + d2).sin()
            }
            RwfEvaluator::Indirect { omega, half_udc, uc_amp, dconv, n, c, energy } => {
                let w = energy.energy(arm, t);
                if w <= 0.0 {
                    return Err(Error::NegativeEnergy { t, energy: w });
                }
                let u_cap = (2.0 * w / (n * c)).sqrt();
                (half_udc + s * uc_amp * (omega * t + dconv).sin()) / (n * u_cap)
            }
        })
    }

    pub fn waveform(&self, period: f64, arm: Arm, n: usize) -> Result<PeriodWaveform> {
        PeriodWaveform::try_from_fn(period, n, |t| self.eval(arm, t))
    }

    /// Margin over both arms.
    pub fn margin(&self, period: f64, n: usize) -> Result<MarginReport> {
        let up = self.waveform(period, Arm::Upper, n)?;
        let lo = self.waveform(period, Arm::Lower, n)?;
        Ok(margin_of(&[&up, &lo]))
    }
}

pub fn rwf_eval(scheme: Scheme, params: &ConverterParams, sol: &SteadyStateSolution, arm: Arm, t: f64) -> Result<f64> {
    RwfEvaluator::new(scheme, params, sol)?.eval(arm, t)
}

/// Continuous capacitor voltage (V) of one arm.
#[derive(Debug, Clone)]
pub enum CapEvaluator {
    Harmonic { dc: f64, ripple: CapRippleHarmonics },
    Energy { n: f64, c: f64, energy: ArmEnergyRipple },
}

impl CapEvaluator {
    pub fn new(scheme: Scheme, params: &ConverterParams, sol: &SteadyStateSolution) -> Result<Self> {
        check_scheme(scheme, sol)?;
        let n = params.n_submodules as f64;
        Ok(match scheme {
            Scheme::Direct => CapEvaluator::Harmonic {
                dc: params.u_cap_nominal() * (1.0 + sol.dc_cap_deviation_pu),
                ripple: cap_ripple_harmonics(params, sol)?,
            },
            Scheme::ImprovedDirect | Scheme::IndirectClosedLoop | Scheme::IndirectOpenLoop => {
                CapEvaluator::Energy { n, c: params.c_sm, energy: arm_energy_ripple(params, sol)? }
            }
            Scheme::DirectCvcOnly | Scheme::DirectCcscOnly => return Err(Error::NoAnalytic(scheme)),
        })
    }

    pub fn eval(&self, arm: Arm, t: f64) -> Result<f64> {
        match self {
            CapEvaluator::Harmonic { dc, ripple } => Ok(dc + ripple.eval(arm, t)),
            CapEvaluator::Energy { n, c, energy } => {
                let w = energy.energy(arm, t);
                if w <= 0.0 {
                    return Err(Error::NegativeEnergy { t, energy: w });
                }
                Ok((2.0 * w / (n * c)).sqrt())
            }
        }
    }
}

pub fn cap_voltage_report(
    scheme: Scheme,
    params: &ConverterParams,
    sol: &SteadyStateSolution,
) -> Result<CapVoltageReport> {
    cap_voltage_report_n(scheme, params, sol, DEFAULT_SAMPLES)
}

pub fn cap_voltage_report_n(
    scheme: Scheme,
    params: &ConverterParams,
    sol: &SteadyStateSolution,
    n: usize,
) -> Result<CapVoltageReport> {
    let ev = CapEvaluator::new(scheme, params, sol)?;
    let waveform = PeriodWaveform::try_from_fn(params.period(), n, |t| ev.eval(Arm::Upper, t))?;
    let base = params.u_cap_nominal();
    Ok(CapVoltageReport { peak: waveform.peak.1 / base, dc: waveform.mean() / base, waveform })
}

/// Max over the period and both arms of |f_indirect − f_improved|.
pub fn equivalence_gap(params: &ConverterParams, point: &OperatingPoint) -> Result<f64> {
    equivalence_gap_n(params, point, DEFAULT_SAMPLES)
}

pub fn equivalence_gap_n(params: &ConverterParams, point: &OperatingPoint, n: usize) -> Result<f64> {
    let ind = steady_state::solve_indirect(params, point, Scheme::IndirectClosedLoop)?;
    let imp = steady_state::solve_improved_direct(params, point)?;
    let a = RwfEvaluator::new(Scheme::IndirectClosedLoop, params, &ind)?;
    let b = RwfEvaluator::new(Scheme::ImprovedDirect, params, &imp)?;
    let period = params.period();
    let mut gap: f64 = 0.0;
    for arm in [Arm::Upper, Arm::Lower] {
        for k in 0..n {
            let t = period * k as f64 / n as f64;
            gap = gap.max((a.eval(arm, t)? - b.eval(arm, t)?).abs());
        }
    }
    Ok(gap)
}

/// Margin and capacitor report for one scheme at one point.
#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub solution: SteadyStateSolution,
    pub margin: MarginReport,
    pub cap_peak_pu: f64,
    pub cap_dc_pu: f64,
}

pub fn evaluate_point(
    scheme: Scheme,
    params: &ConverterParams,
    point: &OperatingPoint,
    n: usize,
) -> Result<PointReport> {
    let solution = steady_state::solve(scheme, params, point)?;
    let margin = RwfEvaluator::new(scheme, params, &solution)?.margin(params.period(), n)?;
    let cap = cap_voltage_report_n(scheme, params, &solution, n)?;
    Ok(PointReport { solution, margin, cap_peak_pu: cap.peak, cap_dc_pu: cap.dc })
}

/// Unit check used by tests: the per-unit base voltage for the RWF.
pub fn rwf_unit(params: &ConverterParams) -> Result<f64> {
    Ok(derive_constants(params)?.u_cap_nominal * params.n_submodules as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady_state::{solve_direct, solve_improved_direct, solve_indirect};
    use std::f64::consts::PI;

    fn t1() -> ConverterParams {
        ConverterParams::table1()
    }

    fn pt(i: f64, phi: f64) -> OperatingPoint {
        OperatingPoint::new(i, phi).unwrap()
    }

    #[test]
    fn direct_rwf_example() {
        let p = t1();
        let mut s = solve_direct(&p, &pt(0.0, 0.0)).unwrap();
        s.m_ref1 = 0.9;
        s.delta_ref1 = 0.0;
        let v = rwf_eval(Scheme::Direct, &p, &s, Arm::Upper, p.period() / 4.0).unwrap();
        assert!((v - 0.05).abs() < 1e-12);
    }

    #[test]
    fn indirect_zero_current_is_plain_sinusoid() {
        let p = t1();
        let s = solve_indirect(&p, &pt(0.0, 0.0), Scheme::IndirectClosedLoop).unwrap();
        let ev = RwfEvaluator::new(Scheme::IndirectClosedLoop, &p, &s).unwrap();
        let w = p.omega();
        for k in 0..100 {
            let t = k as f64 * p.period() / 100.0;
            let want = 0.5 - 0.43 * (w * t).sin();
            assert!((ev.eval(Arm::Upper, t).unwrap() - want).abs() < 1e-12);
        }
        let cap = cap_voltage_report(Scheme::IndirectClosedLoop, &p, &s).unwrap();
        assert!((cap.peak - 1.0).abs() < 1e-12 && (cap.dc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extrema_of_sinusoid_and_constant() {
        let period = 0.02;
        let w = 2.0 * PI / period;
        let wf = PeriodWaveform::from_fn(period, 4096, |t| 0.5 - 0.45 * (w * t).sin());
        assert!((wf.peak.1 - 0.95).abs() < 1e-12);
        assert!((wf.valley.1 - 0.05).abs() < 1e-12);
        assert!((w * wf.peak.0 - 1.5 * PI).abs() < 1e-6);
        assert!((w * wf.valley.0 - 0.5 * PI).abs() < 1e-6);
        let c = PeriodWaveform::from_fn(period, 1024, |_| 0.5);
        assert_eq!((c.peak.1, c.valley.1), (0.5, 0.5));
    }

    #[test]
    fn extrema_match_dense_scan() {
        let period = 1.0;
        let w = 2.0 * PI;
        let f = |t: f64| 0.5 - 0.4 * (w * t).sin() + 0.05 * (2.0 * w * t).sin();
        let wf = PeriodWaveform::from_fn(period, 4096, f);
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..1_000_000 {
            let v = f(k as f64 / 1e6);
            hi = hi.max(v);
            lo = lo.min(v);
        }
        assert!((wf.peak.1 - hi).abs() < 1e-6);
        assert!((wf.valley.1 - lo).abs() < 1e-6);
        assert!(wf.samples.iter().all(|s| s.1 <= wf.peak.1 && s.1 >= wf.valley.1));
    }

    #[test]
    fn sampled_refinement_uses_interpolant() {
        let period = 0.02;
        let w = 2.0 * PI / period;
        let vals: Vec<f64> = (0..400)
            .map(|k| {
                let t = period * k as f64 / 400.0;
                0.5 - 0.44 * (w * t + 0.3).sin() + 0.03 * (2.0 * w * t - 1.0).sin()
            })
            .collect();
        let wf = PeriodWaveform::from_samples(period, &vals);
        let dense = PeriodWaveform::from_fn(period, 65536, |t| {
            0.5 - 0.44 * (w * t + 0.3).sin() + 0.03 * (2.0 * w * t - 1.0).sin()
        });
        assert!((wf.peak.1 - dense.peak.1).abs() < 1e-9);
        assert!((wf.valley.1 - dense.valley.1).abs() < 1e-9);
    }

    #[test]
    fn margin_examples() {
        let m = MarginReport::from_extrema(0.95, 0.05);
        assert!((m.delta_f_margin - 0.05).abs() < 1e-15 && m.linear);
        let m = MarginReport::from_extrema(1.02, 0.1);
        assert!((m.delta_f_margin + 0.02).abs() < 1e-15 && !m.linear);
        let p = t1().with_u_acv(0.91);
        let s = solve_indirect(&p, &pt(0.5, PI / 2.0), Scheme::IndirectClosedLoop).unwrap();
        let m = RwfEvaluator::new(Scheme::IndirectClosedLoop, &p, &s).unwrap().margin(p.period(), 4096).unwrap();
        assert!(m.delta_f_margin < 0.0 && !m.linear);
    }

    #[test]
    fn direct_complementarity_and_half_period_symmetry() {
        let p = t1();
        let s = solve_direct(&p, &pt(1.0, 0.4)).unwrap();
        let ev = RwfEvaluator::new(Scheme::Direct, &p, &s).unwrap();
        let si = solve_indirect(&p, &pt(1.0, 0.4), Scheme::IndirectClosedLoop).unwrap();
        let ei = RwfEvaluator::new(Scheme::IndirectClosedLoop, &p, &si).unwrap();
        let tp = p.period();
        for k in 0..64 {
            let t = k as f64 * tp / 64.0;
            let (u, l) = (ev.eval(Arm::Upper, t).unwrap(), ev.eval(Arm::Lower, t).unwrap());
            assert!((u + l - 1.0).abs() < 1e-15);
            assert!((l - ev.eval(Arm::Upper, t + tp / 2.0).unwrap()).abs() < 1e-12);
            let li = ei.eval(Arm::Lower, t).unwrap();
            assert!((li - ei.eval(Arm::Upper, t + tp / 2.0).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn indirect_reconstruction() {
        let p = t1();
        let s = solve_indirect(&p, &pt(0.8, -1.0), Scheme::IndirectClosedLoop).unwrap();
        let ev = RwfEvaluator::new(Scheme::IndirectClosedLoop, &p, &s).unwrap();
        let cap = CapEvaluator::new(Scheme::IndirectClosedLoop, &p, &s).unwrap();
        let uc = s.m_conv1 * 200e3;
        for k in 0..64 {
            let t = k as f64 * p.period() / 64.0;
            let v = ev.eval(Arm::Upper, t).unwrap() * 200.0 * cap.eval(Arm::Upper, t).unwrap();
            let want = 200e3 - uc * (p.omega() * t + s.delta_conv1).sin();
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn direct_common_mode_dc_matches_dc_link() {
        let p = t1();
        for phi in [-PI / 2.0, 0.0, PI / 6.0, PI / 2.0, 2.5] {
            let s = solve_direct(&p, &pt(1.0, phi)).unwrap();
            let ev = RwfEvaluator::new(Scheme::Direct, &p, &s).unwrap();
            let cap = CapEvaluator::new(Scheme::Direct, &p, &s).unwrap();
            let n = 2048;
            let mut mean = 0.0;
            for k in 0..n {
                let t = k as f64 * p.period() / n as f64;
                let up = ev.eval(Arm::Upper, t).unwrap() * cap.eval(Arm::Upper, t).unwrap();
                let lo = ev.eval(Arm::Lower, t).unwrap() * cap.eval(Arm::Lower, t).unwrap();
                mean += 200.0 * (up + lo) / n as f64;
            }
            assert!((mean / 400e3 - 1.0).abs() < 1e-3, "phi {phi}: {}", mean / 400e3);
        }
    }

    #[test]
    fn cap_reports() {
        let p = t1();
        let s = solve_direct(&p, &pt(0.0, 0.0)).unwrap();
        let r = cap_voltage_report(Scheme::Direct, &p, &s).unwrap();
        assert!((r.peak - 1.0).abs() < 1e-12 && (r.dc - 1.0).abs() < 1e-12);
        let q = pt(1.0, -PI / 2.0);
        let d = cap_voltage_report(Scheme::Direct, &p, &solve_direct(&p, &q).unwrap()).unwrap();
        let i = cap_voltage_report(
            Scheme::IndirectClosedLoop,
            &p,
            &solve_indirect(&p, &q, Scheme::IndirectClosedLoop).unwrap(),
        )
        .unwrap();
        assert!(d.dc > 1.0 && d.peak > i.peak);
        assert!(d.peak >= d.dc && i.peak >= i.dc);
        // With W_0 taken verbatim the mean of √W sits slightly below U_capN.
        let s = solve_indirect(&p, &pt(1.0, 0.0), Scheme::IndirectClosedLoop).unwrap();
        let r = cap_voltage_report(Scheme::IndirectClosedLoop, &p, &s).unwrap();
        assert!((r.dc - 1.0).abs() < 0.002, "{}", r.dc);
    }

    #[test]
    fn equivalence_examples() {
        let p = t1();
        assert!(equivalence_gap(&p, &pt(0.0, 0.3)).unwrap() < 1e-12);
        for c in ['A', 'C'] {
            let g = equivalence_gap(&p, &OperatingPoint::corner(c).unwrap()).unwrap();
            assert!(g < EQUIVALENCE_TOL, "{c}: {g}");
        }
    }

    #[test]
    fn improved_matches_indirect_at_point_a() {
        let p = t1();
        let a = OperatingPoint::corner('A').unwrap();
        let imp = solve_improved_direct(&p, &a).unwrap();
        let ind = solve_indirect(&p, &a, Scheme::IndirectClosedLoop).unwrap();
        let e1 = RwfEvaluator::new(Scheme::ImprovedDirect, &p, &imp).unwrap();
        let e2 = RwfEvaluator::new(Scheme::IndirectClosedLoop, &p, &ind).unwrap();
        for k in 0..500 {
            let t = k as f64 * p.period() / 500.0;
            assert!((e1.eval(Arm::Upper, t).unwrap() - e2.eval(Arm::Upper, t).unwrap()).abs() < 0.01);
        }
    }
}

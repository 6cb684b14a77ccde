//! Average-arm-model MMC in the time domain, used as an oracle for the analytics.
//!
//! Three legs, six arms. Each arm is a controlled voltage `f·u_Σ` in series with
//! the arm inductor; `u_Σ` is the sum of its submodule capacitor voltages. The dc
//! link is stiff and the grid is a stiff balanced source behind the transformer
//! leakage, with a floating star point.

mod metrics;

pub use metrics::{
    extract_metrics, hybrid_mode_margin, simulate_step, write_series_csv, ExtractedMetrics, StepReport, HYBRID_PERIODS,
    SERIES_HEADER, SETTLED_DRIFT, STEP_BAND,
};

use std::f64::consts::{PI, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{derive_constants, ConverterParams, OperatingPoint, Scheme};
use crate::steady_state::{self, SteadyStateSolution};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 4000;
pub const DEFAULT_SAMPLES_PER_PERIOD: usize = 400;
pub const DEFAULT_DECIMATION: usize = 10;
/// Arm resistance default in p.u. of the impedance base; it damps the leg LC mode.
pub const DEFAULT_ARM_RESISTANCE_PU: f64 = 1e-3;
pub const DEFAULT_RAMP_PERIODS: f64 = 5.0;
pub const OPEN_LOOP_RAMP_FACTOR: f64 = 10.0;
/// Guard: any state beyond this multiple of its rating aborts the run.
pub const GUARD_FACTOR: f64 = 10.0;

const PHASES: usize = 3;
const NX: usize = 18;

/// Loop bandwidths in rad/s. The ac and CCSC loops run faster than the slowest
/// settings that still settle: at ω/10 (ac) or ω/5 (CCSC) a slow mode that couples
/// capacitor dc and output current grows under direct-family modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gains {
    pub ac_bandwidth: f64,
    pub ccsc_bandwidth: f64,
    pub cvc_bandwidth: f64,
    pub energy_bandwidth: f64,
    pub circulating_bandwidth: f64,
}

impl Gains {
    pub fn defaults(omega: f64) -> Self {
        Gains {
            ac_bandwidth: omega / 3.0,
            ccsc_bandwidth: omega,
            cvc_bandwidth: omega / 100.0,
            energy_bandwidth: omega / 100.0,
            circulating_bandwidth: omega,
        }
    }

    fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("ac_bandwidth", self.ac_bandwidth),
            ("ccsc_bandwidth", self.ccsc_bandwidth),
            ("cvc_bandwidth", self.cvc_bandwidth),
            ("energy_bandwidth", self.energy_bandwidth),
            ("circulating_bandwidth", self.circulating_bandwidth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { field, reason: format!("gain must be positive, got {v}") });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepChange {
    pub t_step: f64,
    pub to: OperatingPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub scheme: Scheme,
    pub target: OperatingPoint,
    pub step: Option<StepChange>,
    /// Direct scheme only: feed the solved references with the ac current loop disabled.
    pub open_loop: bool,
    pub ramp_time: f64,
    pub gains: Gains,
    /// Controller period in plant steps.
    pub decimation: usize,
    pub arm_resistance_pu: f64,
}

impl ControllerConfig {
    pub fn new(params: &ConverterParams, scheme: Scheme, target: OperatingPoint) -> Self {
        ControllerConfig {
            scheme,
            target,
            step: None,
            open_loop: false,
            ramp_time: DEFAULT_RAMP_PERIODS * params.period(),
            gains: Gains::defaults(params.omega()),
            decimation: DEFAULT_DECIMATION,
            arm_resistance_pu: DEFAULT_ARM_RESISTANCE_PU,
        }
    }

    /// Reference feed without the ac loop. Only the arm resistance damps the plant, so
    /// the ramp is stretched to keep the start-up from ringing.
    pub fn open_loop(mut self) -> Self {
        self.open_loop = true;
        self.ramp_time *= OPEN_LOOP_RAMP_FACTOR;
        self
    }

    fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        if self.open_loop && self.scheme != Scheme::Direct {
            return Err(Error::InvalidParameter {
                field: "open_loop",
                reason: format!("reference feed is defined for the direct scheme only, not {}", self.scheme),
            });
        }
        if self.decimation == 0 {
            return Err(Error::InvalidParameter { field: "decimation", reason: "must be >= 1".into() });
        }
        if !(self.arm_resistance_pu >= 0.0) {
            return Err(Error::InvalidParameter { field: "arm_resistance_pu", reason: "must be >= 0".into() });
        }
        if !(self.ramp_time >= 0.0) {
            return Err(Error::InvalidParameter { field: "ramp_time", reason: "must be >= 0".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOptions {
    pub dt: f64,
    pub duration: f64,
    pub samples_per_period: usize,
    /// Samples before this time are not stored.
    pub record_from: f64,
}

impl SimOptions {
    /// Default step over a whole number of fundamental periods.
    pub fn periods(params: &ConverterParams, n: usize) -> Self {
        let t = params.period();
        SimOptions {
            dt: t / DEFAULT_STEPS_PER_PERIOD as f64,
            duration: n as f64 * t,
            samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
            record_from: 0.0,
        }
    }

    /// Keep only the last `n` periods in memory.
    pub fn keep_last(mut self, params: &ConverterParams, n: usize) -> Self {
        self.record_from = (self.duration - n as f64 * params.period()).max(0.0);
        self
    }

    pub fn with_steps_per_period(mut self, params: &ConverterParams, steps: usize) -> Self {
        self.dt = params.period() / steps as f64;
        self
    }
}

/// Plant state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantState {
    pub t: f64,
    /// [phase][upper, lower] arm capacitor-voltage sums (V).
    pub u_sigma: [[f64; 2]; 3],
    pub i_com: [f64; 3],
    pub i_ac: [f64; 3],
}

impl PlantState {
    pub fn arm_current(&self, phase: usize, lower: bool) -> f64 {
        if lower {
            self.i_com[phase] - 0.5 * self.i_ac[phase]
        } else {
            self.i_com[phase] + 0.5 * self.i_ac[phase]
        }
    }
}

/// One recorded instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub state: PlantState,
    /// Controller insertion index per arm before the plant's [0, 1] clamp.
    pub f: [[f64; 2]; 3],
    pub e_d_ref: [f64; 3],
    pub v2: [f64; 3],
    pub p_pu: f64,
    pub q_pu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSeries {
    pub params: ConverterParams,
    pub config: ControllerConfig,
    pub dt: f64,
    pub steps_per_period: usize,
    pub samples_per_period: usize,
    pub samples: Vec<Sample>,
}

impl SimSeries {
    pub fn period(&self) -> f64 {
        self.params.period()
    }

    /// Number of complete periods recorded, counted back from the end.
    pub fn whole_periods(&self) -> usize {
        self.samples.len() / self.samples_per_period
    }

    /// Samples of the k-th period counted back from the end (k = 0 is the last).
    pub fn period_slice(&self, k: usize) -> &[Sample] {
        let n = self.samples.len();
        let spp = self.samples_per_period;
        &self.samples[n - (k + 1) * spp..n - k * spp]
    }
}

#[derive(Debug, Clone, Copy)]
struct Constants {
    omega: f64,
    u_dc: f64,
    n_ref: f64,
    n_over_c: f64,
    c_over_n: f64,
    l_arm: f64,
    l_ac: f64,
    r_arm: f64,
    i_base: f64,
    s_rated: f64,
    u_grid: f64,
    w0: f64,
}

/// Held controller outputs between ticks.
#[derive(Debug, Clone, Copy)]
struct Hold {
    i_ref_dq: (f64, f64),
    e_dq: (f64, f64),
    v2_dq: (f64, f64),
    e_d_ref: [f64; 3],
    i_dc_ref: [f64; 3],
    c_bal: [f64; 3],
    xi_cir: [f64; 3],
}

#[derive(Debug, Clone)]
struct MovingAverage {
    buf: Vec<f64>,
    pos: usize,
    sum: f64,
}

impl MovingAverage {
    fn new(len: usize, init: f64) -> Self {
        MovingAverage { buf: vec![init; len], pos: 0, sum: init * len as f64 }
    }

    fn push(&mut self, v: f64) -> f64 {
        self.sum += v - self.buf[self.pos];
        self.buf[self.pos] = v;
        self.pos += 1;
        if self.pos == self.buf.len() {
            self.pos = 0;
            // refresh to keep the running sum from drifting
            self.sum = self.buf.iter().sum();
        }
        self.sum / self.buf.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Normaliser {
    Fixed,
    Measured,
    Estimated,
}

struct Controller {
    cfg: ControllerConfig,
    k: Constants,
    norm: Normaliser,
    ccsc: bool,
    cvc: bool,
    /// Open-loop direct feed: references before and after the step.
    feed: Option<(SteadyStateSolution, Option<SteadyStateSolution>)>,
    hold: Hold,
    tick_dt: f64,
    ac_int: (f64, f64),
    ccsc_int: (f64, f64),
    cvc_int: [f64; 3],
    energy_int: [f64; 3],
    avg_u: Vec<MovingAverage>,
    avg_w: Vec<MovingAverage>,
    avg_wd: Vec<MovingAverage>,
}

fn phase_angle(omega: f64, t: f64, j: usize) -> f64 {
    omega * t - 2.0 * PI * j as f64 / 3.0
}

/// Raised-cosine ramp from 0 to 1 over `t_ramp`.
fn ramp(t: f64, t_ramp: f64) -> f64 {
    if t_ramp <= 0.0 || t >= t_ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * t / t_ramp).cos()
    }
}

fn park(x: [f64; 3], omega: f64, t: f64, order: f64) -> (f64, f64) {
    let (mut d, mut q) = (0.0, 0.0);
    for (j, v) in x.iter().enumerate() {
        let th = order * phase_angle(omega, t, j);
        d += v * th.sin();
        q += v * th.cos();
    }
    (2.0 * d / 3.0, 2.0 * q / 3.0)
}

impl Controller {
    fn new(params: &ConverterParams, cfg: &ControllerConfig, k: Constants, ticks_per_period: usize) -> Result<Self> {
        let (norm, ccsc, cvc) = match cfg.scheme {
            Scheme::Direct => (Normaliser::Fixed, false, false),
            Scheme::ImprovedDirect => (Normaliser::Fixed, true, true),
            Scheme::DirectCvcOnly => (Normaliser::Fixed, false, true),
            Scheme::DirectCcscOnly => (Normaliser::Fixed, true, false),
            Scheme::IndirectClosedLoop => (Normaliser::Measured, false, false),
            Scheme::IndirectOpenLoop => (Normaliser::Estimated, false, false),
        };
        let feed = if cfg.open_loop {
            let a = steady_state::solve_direct(params, &cfg.target)?;
            let b = match cfg.step {
                Some(s) => Some(steady_state::solve_direct(params, &s.to)?),
                None => None,
            };
            Some((a, b))
        } else {
            None
        };
        let u_sum = k.n_ref;
        let hold = Hold {
            i_ref_dq: (0.0, 0.0),
            e_dq: (k.u_grid, 0.0),
            v2_dq: (0.0, 0.0),
            e_d_ref: [k.u_dc; 3],
            i_dc_ref: [0.0; 3],
            c_bal: [0.0; 3],
            xi_cir: [0.0; 3],
        };
        Ok(Controller {
            cfg: *cfg,
            k,
            norm,
            ccsc,
            cvc,
            feed,
            hold,
            tick_dt: 0.0,
            ac_int: (0.0, 0.0),
            ccsc_int: (0.0, 0.0),
            cvc_int: [0.0; 3],
            energy_int: [0.0; 3],
            avg_u: (0..PHASES).map(|_| MovingAverage::new(ticks_per_period, u_sum)).collect(),
            avg_w: (0..PHASES).map(|_| MovingAverage::new(ticks_per_period, 2.0 * k.w0)).collect(),
            avg_wd: (0..PHASES).map(|_| MovingAverage::new(ticks_per_period, 0.0)).collect(),
        })
    }

    fn current_ref_dq(&self, t: f64) -> (f64, f64) {
        let dq = |p: &OperatingPoint| {
            let amp = SQRT_2 * p.i_ac_pu * self.k.i_base;
            (amp * p.phi.cos(), -amp * p.phi.sin())
        };
        let a = dq(&self.cfg.target);
        let r = ramp(t, self.cfg.ramp_time);
        match self.cfg.step {
            // reference steps are slewed over the same raised-cosine ramp as the start-up
            Some(s) if t >= s.t_step => {
                let b = dq(&s.to);
                let w = ramp(t - s.t_step, self.cfg.ramp_time);
                (r * (a.0 + w * (b.0 - a.0)), r * (a.1 + w * (b.1 - a.1)))
            }
            _ => (r * a.0, r * a.1),
        }
    }

    /// Converter ac voltage reference e (dq, volts).
    fn e_dq(&self, t: f64) -> (f64, f64) {
        match &self.feed {
            Some((a, b)) => {
                let half = 0.5 * self.k.u_dc;
                let (ma, mb) = (a.m_ref1 * a.delta_ref1.cos(), a.m_ref1 * a.delta_ref1.sin());
                let (md, mq) = match (self.cfg.step, b) {
                    (Some(s), Some(b)) if t >= s.t_step => {
                        let w = ramp(t - s.t_step, self.cfg.ramp_time);
                        let (bd, bq) = (b.m_ref1 * b.delta_ref1.cos(), b.m_ref1 * b.delta_ref1.sin());
                        (ma + w * (bd - ma), mb + w * (bq - mb))
                    }
                    _ => (ma, mb),
                };
                let r = ramp(t, self.cfg.ramp_time);
                let m0 = self.k.u_grid / half;
                (half * ((1.0 - r) * m0 + r * md), half * r * mq)
            }
            None => self.hold.e_dq,
        }
    }

    /// Insertion indices (unclamped), ac voltage references and 2ω injection per phase,
    /// plus the open-loop estimator derivative.
    fn signals(&self, t: f64, x: &[f64; NX]) -> Signals {
        let k = &self.k;
        let h = &self.hold;
        let (ed, eq) = self.e_dq(t);
        let mut s = Signals::default();
        for j in 0..PHASES {
            let th = phase_angle(k.omega, t, j);
            let (sn, cs) = th.sin_cos();
            let e = ed * sn + eq * cs;
            let (s2, c2) = (2.0 * th).sin_cos();
            let v2 = if self.ccsc { h.v2_dq.0 * s2 + h.v2_dq.1 * c2 } else { 0.0 };
            let (up, un, icom) = (x[4 * j], x[4 * j + 1], x[4 * j + 2]);
            let edr = h.e_d_ref[j];
            let (fp, fn_) = match self.norm {
                Normaliser::Fixed => ((0.5 * edr - e + v2) / k.n_ref, (0.5 * edr + e + v2) / k.n_ref),
                Normaliser::Measured | Normaliser::Estimated => {
                    let i_ref = h.i_dc_ref[j] + h.c_bal[j] * e;
                    let kc = k.l_arm * self.cfg.gains.circulating_bandwidth;
                    let e_cir = -kc * (i_ref - icom) - h.xi_cir[j];
                    let vp = 0.5 * k.u_dc - e + e_cir;
                    let vn = 0.5 * k.u_dc + e + e_cir;
                    if self.norm == Normaliser::Measured {
                        (vp / up, vn / un)
                    } else {
                        let (wp, wn) = (x[12 + 2 * j], x[13 + 2 * j]);
                        let (ep, en) = (energy_voltage(wp, k.c_over_n), energy_voltage(wn, k.c_over_n));
                        s.u_est[j] = [ep, en];
                        (vp / ep, vn / en)
                    }
                }
            };
            s.f[j] = [fp, fn_];
            s.e[j] = e;
            s.v2[j] = v2;
        }
        s
    }

    fn rhs(&self, t: f64, x: &[f64; NX]) -> [f64; NX] {
        let k = &self.k;
        let s = self.signals(t, x);
        let mut dx = [0.0; NX];
        let mut e_out = [0.0; 3];
        let mut v_g = [0.0; 3];
        for j in 0..PHASES {
            let (up, un, icom, iac) = (x[4 * j], x[4 * j + 1], x[4 * j + 2], x[4 * j + 3]);
            let fp = s.f[j][0].clamp(0.0, 1.0);
            let fn_ = s.f[j][1].clamp(0.0, 1.0);
            let ip = icom + 0.5 * iac;
            let in_ = icom - 0.5 * iac;
            let (vp, vn) = (fp * up, fn_ * un);
            dx[4 * j] = k.n_over_c * fp * ip;
            dx[4 * j + 1] = k.n_over_c * fn_ * in_;
            dx[4 * j + 2] = (k.u_dc - vp - vn - 2.0 * k.r_arm * icom) / (2.0 * k.l_arm);
            e_out[j] = 0.5 * (vn - vp);
            v_g[j] = k.u_grid * phase_angle(k.omega, t, j).sin();
            if self.norm == Normaliser::Estimated {
                // arm power from the inserted index, the estimate and the measured arm current
                dx[12 + 2 * j] = fp * s.u_est[j][0] * ip;
                dx[13 + 2 * j] = fn_ * s.u_est[j][1] * in_;
            }
        }
        let v_star = (0..PHASES).map(|j| e_out[j] - v_g[j]).sum::<f64>() / 3.0;
        for j in 0..PHASES {
            let iac = x[4 * j + 3];
            dx[4 * j + 3] = (e_out[j] - v_g[j] - v_star - 0.5 * k.r_arm * iac) / k.l_ac;
        }
        dx
    }

    /// Discrete controller update at a tick; outputs are held until the next one.
    fn tick(&mut self, t: f64, x: &[f64; NX]) {
        let k = self.k;
        let g = self.cfg.gains;
        let dt = self.tick_dt;
        let i_ref = self.current_ref_dq(t);
        self.hold.i_ref_dq = i_ref;
        let i_ac = [x[3], x[7], x[11]];
        let (id, iq) = park(i_ac, k.omega, t, 1.0);

        if self.feed.is_none() {
            let kp = k.l_ac * g.ac_bandwidth;
            let ki = kp * g.ac_bandwidth / 4.0;
            let (ed, eq) = (i_ref.0 - id, i_ref.1 - iq);
            self.ac_int.0 += ki * ed * dt;
            self.ac_int.1 += ki * eq * dt;
            let wl = k.omega * k.l_ac;
            self.hold.e_dq = (k.u_grid - wl * iq + kp * ed + self.ac_int.0, wl * id + kp * eq + self.ac_int.1);
        }

        if self.ccsc {
            let icom = [x[2], x[6], x[10]];
            let (d2, q2) = park(icom, k.omega, t, 2.0);
            let kp = k.l_arm * g.ccsc_bandwidth;
            let ki = kp * g.ccsc_bandwidth;
            self.ccsc_int.0 += ki * d2 * dt;
            self.ccsc_int.1 += ki * q2 * dt;
            let wl2 = 2.0 * k.omega * k.l_arm;
            self.hold.v2_dq = (wl2 * q2 + kp * d2 + self.ccsc_int.0, -wl2 * d2 + kp * q2 + self.ccsc_int.1);
        }

        let (ed, eq) = self.e_dq(t);
        let p_leg = 0.5 * (ed * i_ref.0 + eq * i_ref.1);
        let e_amp_sq = k.u_grid * k.u_grid;
        for j in 0..PHASES {
            let (up, un) = (x[4 * j], x[4 * j + 1]);
            let u_avg = self.avg_u[j].push(0.5 * (up + un));
            let (w_p, w_n) = if self.norm == Normaliser::Estimated {
                (x[12 + 2 * j], x[13 + 2 * j])
            } else {
                (0.5 * k.c_over_n * up * up, 0.5 * k.c_over_n * un * un)
            };
            let w_sum = self.avg_w[j].push(w_p + w_n);
            let w_diff = self.avg_wd[j].push(w_p - w_n);

            if self.cvc {
                // steady state: mean arm sum ≈ U_dc²/e_d_ref, so the plant gain is about −1
                self.cvc_int[j] += g.cvc_bandwidth * (k.n_ref - u_avg) * dt;
                self.hold.e_d_ref[j] = k.u_dc - self.cvc_int[j];
            }

            match self.norm {
                Normaliser::Measured | Normaliser::Estimated => {
                    let kw = g.energy_bandwidth;
                    let err = 2.0 * k.w0 - w_sum;
                    self.energy_int[j] += kw * kw / 4.0 * err * dt;
                    self.hold.i_dc_ref[j] = (p_leg + kw * err + self.energy_int[j]) / k.u_dc;
                    self.hold.c_bal[j] = g.energy_bandwidth * w_diff / e_amp_sq;
                }
                Normaliser::Fixed => {}
            }
            if self.norm != Normaliser::Fixed {
                let th = phase_angle(k.omega, t, j);
                let e = ed * th.sin() + eq * th.cos();
                let i_ref_j = self.hold.i_dc_ref[j] + self.hold.c_bal[j] * e;
                let kc = k.l_arm * g.circulating_bandwidth;
                self.hold.xi_cir[j] += kc * g.circulating_bandwidth / 20.0 * (i_ref_j - x[4 * j + 2]) * dt;
            }
        }
    }

    fn sample(&self, t: f64, x: &[f64; NX]) -> Sample {
        let k = &self.k;
        let s = self.signals(t, x);
        let mut u_sigma = [[0.0; 2]; 3];
        let mut i_com = [0.0; 3];
        let mut i_ac = [0.0; 3];
        for j in 0..PHASES {
            u_sigma[j] = [x[4 * j], x[4 * j + 1]];
            i_com[j] = x[4 * j + 2];
            i_ac[j] = x[4 * j + 3];
        }
        let (id, iq) = park(i_ac, k.omega, t, 1.0);
        let p = 1.5 * k.u_grid * id / k.s_rated;
        let q = -1.5 * k.u_grid * iq / k.s_rated;
        Sample {
            state: PlantState { t, u_sigma, i_com, i_ac },
            f: s.f,
            e_d_ref: self.hold.e_d_ref,
            v2: s.v2,
            p_pu: p,
            q_pu: q,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Signals {
    f: [[f64; 2]; 3],
    e: [f64; 3],
    v2: [f64; 3],
    u_est: [[f64; 2]; 3],
}

fn constants(params: &ConverterParams, cfg: &ControllerConfig) -> Result<Constants> {
    let dc = derive_constants(params)?;
    let n = params.n_submodules as f64;
    let n_ref = n * params.u_cap_ref;
    Ok(Constants {
        omega: dc.omega,
        u_dc: params.u_dc_nominal,
        n_ref,
        n_over_c: n / params.c_sm,
        c_over_n: params.c_sm / n,
        l_arm: dc.l_arm,
        l_ac: 0.5 * dc.l_arm + dc.l_t,
        r_arm: cfg.arm_resistance_pu * dc.z_base,
        i_base: dc.i_base,
        s_rated: params.s_rated,
        u_grid: params.u_acv_pu * 0.5 * params.u_dc_nominal,
        w0: 0.5 * (params.c_sm / n) * n_ref * n_ref,
    })
}

fn whole(x: f64, what: &'static str) -> Result<usize> {
    let r = x.round();
    if (x - r).abs() > 1e-6 * x.max(1.0) || r < 1.0 {
        return Err(Error::InvalidParameter { field: what, reason: format!("must be a whole number, got {x}") });
    }
    Ok(r as usize)
}

fn guard(t: f64, x: &[f64; NX], k: &Constants) -> Result<()> {
    let i_lim = GUARD_FACTOR * SQRT_2 * k.i_base;
    let u_lim = GUARD_FACTOR * k.n_ref;
    for j in 0..PHASES {
        for (a, name) in [(0, "upper"), (1, "lower")] {
            let u = x[4 * j + a];
            if !(u > 0.0) {
                return Err(Error::Unstable {
                    t,
                    diagnostic: format!("phase {} {name} arm capacitor sum not positive ({u:.6e} V)", j),
                });
            }
            if u > u_lim {
                return Err(Error::Unstable {
                    t,
                    diagnostic: format!("phase {} {name} arm capacitor sum {u:.6e} V exceeds {u_lim:.3e} V", j),
                });
            }
        }
        for (idx, name) in [(2, "circulating"), (3, "ac")] {
            let i = x[4 * j + idx];
            if !(i.abs() <= i_lim) {
                return Err(Error::Unstable {
                    t,
                    diagnostic: format!("phase {} {name} current {i:.6e} A exceeds {i_lim:.3e} A", j),
                });
            }
        }
    }
    Ok(())
}

/// Fixed-step RK4 run from the no-load equilibrium.
pub fn simulate(params: &ConverterParams, controller: &ControllerConfig, duration: f64, dt: f64) -> Result<SimSeries> {
    let t1 = params.period();
    simulate_with(
        params,
        controller,
        &SimOptions { dt, duration, samples_per_period: DEFAULT_SAMPLES_PER_PERIOD, record_from: 0.0 },
    )
    .map_err(|e| match e {
        Error::InvalidParameter { field: "samples_per_period", .. } => Error::InvalidParameter {
            field: "dt",
            reason: format!("T_1/dt must be a multiple of {DEFAULT_SAMPLES_PER_PERIOD} (T_1 = {t1})"),
        },
        e => e,
    })
}

pub fn simulate_with(params: &ConverterParams, controller: &ControllerConfig, opts: &SimOptions) -> Result<SimSeries> {
    params.validate()?;
    controller.validate()?;
    let t1 = params.period();
    if !(opts.dt > 0.0 && opts.dt <= t1 / 2000.0 * (1.0 + 1e-9)) {
        return Err(Error::InvalidParameter {
            field: "dt",
            reason: format!("must lie in (0, T_1/2000], got {}", opts.dt),
        });
    }
    if !(opts.duration >= 20.0 * t1 * (1.0 - 1e-9)) {
        return Err(Error::InvalidParameter {
            field: "duration",
            reason: format!("must be at least 20 fundamental periods, got {} s", opts.duration),
        });
    }
    let steps_per_period = whole(t1 / opts.dt, "dt")?;
    if opts.samples_per_period == 0 || steps_per_period % opts.samples_per_period != 0 {
        return Err(Error::InvalidParameter {
            field: "samples_per_period",
            reason: format!("must divide the {steps_per_period} steps per period"),
        });
    }
    if steps_per_period % controller.decimation != 0 {
        return Err(Error::InvalidParameter {
            field: "decimation",
            reason: format!("must divide the {steps_per_period} steps per period"),
        });
    }
    let n_steps = whole(opts.duration / opts.dt, "duration")?;
    let dt = t1 / steps_per_period as f64;
    let stride = steps_per_period / opts.samples_per_period;
    let k = constants(params, controller)?;
    let mut ctl = Controller::new(params, controller, k, steps_per_period / controller.decimation)?;
    ctl.tick_dt = dt * controller.decimation as f64;

    let mut x = [0.0; NX];
    for j in 0..PHASES {
        x[4 * j] = k.n_ref;
        x[4 * j + 1] = k.n_ref;
        x[12 + 2 * j] = k.w0;
        x[13 + 2 * j] = k.w0;
    }
    let mut samples = Vec::with_capacity((n_steps / stride + 1).min(4_000_000));
    for step in 0..=n_steps {
        // time from the step index keeps sampling instants exact
        let t = step as f64 * dt;
        if step % controller.decimation == 0 {
            ctl.tick(t, &x);
        }
        if step % stride == 0 && t >= opts.record_from - 0.5 * dt && step < n_steps {
            samples.push(ctl.sample(t, &x));
        }
        if step == n_steps {
            break;
        }
        let k1 = ctl.rhs(t, &x);
        let k2 = ctl.rhs(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k1));
        let k3 = ctl.rhs(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k2));
        let k4 = ctl.rhs(t + dt, &axpy(&x, dt, &k3));
        for i in 0..NX {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        guard(t + dt, &x, &k)?;
    }
    Ok(SimSeries {
        params: *params,
        config: *controller,
        dt,
        steps_per_period,
        samples_per_period: opts.samples_per_period,
        samples,
    })
}

fn axpy(x: &[f64; NX], a: f64, y: &[f64; NX]) -> [f64; NX] {
    let mut out = *x;
    for i in 0..NX {
        out[i] += a * y[i];
    }
    out
}

/// Energy bookkeeping terms at one state, for tests: (stored capacitor energy,
/// inductor energy, dc power in, grid power out, resistive loss).
pub fn energy_terms(params: &ConverterParams, controller: &ControllerConfig, s: &PlantState) -> Result<[f64; 5]> {
    let k = constants(params, controller)?;
    let mut w_cap = 0.0;
    let mut w_l = 0.0;
    let mut p_dc = 0.0;
    let mut p_ac = 0.0;
    let mut loss = 0.0;
    for j in 0..PHASES {
        let (ip, in_) = (s.arm_current(j, false), s.arm_current(j, true));
        w_cap += 0.5 * k.c_over_n * (s.u_sigma[j][0].powi(2) + s.u_sigma[j][1].powi(2));
        w_l += 0.5 * k.l_arm * (ip * ip + in_ * in_) + 0.5 * (k.l_ac - 0.5 * k.l_arm) * s.i_ac[j].powi(2);
        p_dc += k.u_dc * s.i_com[j];
        p_ac += k.u_grid * phase_angle(k.omega, s.t, j).sin() * s.i_ac[j];
        loss += k.r_arm * (ip * ip + in_ * in_);
    }
    Ok([w_cap, w_l, p_dc, p_ac, loss])
}

/// Capacitor-sum voltage holding arm energy `w`.
fn energy_voltage(w: f64, c_over_n: f64) -> f64 {
    (2.0 * w.max(0.0) / c_over_n).sqrt()
}

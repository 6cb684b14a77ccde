//! Boundary scans, linear PQ region, MS-ACV search and capacitance sizing.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::params::{
    boundary_profile, derive_constants, pq_of, ConverterParams, OperatingPoint, RequiredRange, Scheme,
};
use crate::steady_state;
use crate::waveform::{self, RwfEvaluator, DEFAULT_SAMPLES};

pub const THREADS_ENV: &str = "MMC_MODLAB_THREADS";
pub const DEFAULT_DPHI_REGION: f64 = PI / 360.0;
pub const DEFAULT_DI_REGION: f64 = 0.005;
pub const MSACV_DPHI: f64 = PI / 180.0;
pub const MSACV_BRACKET: (f64, f64) = (0.5, 1.2);
/// Step of the upward search for a feasible lower end of the MS-ACV bracket.
pub const MSACV_LOW_STEP: f64 = 0.05;
pub const SIZING_BRACKET: (f64, f64) = (1e-3, 100e-3);

/// Execution settings for sweeps. Results do not depend on the worker count.
#[derive(Debug, Clone, Copy)]
pub struct Scanner {
    pub threads: Option<usize>,
    pub samples: usize,
}

impl Default for Scanner {
    fn default() -> Self {
        Scanner { threads: None, samples: DEFAULT_SAMPLES }
    }
}

impl Scanner {
    /// Worker cap from `MMC_MODLAB_THREADS` when set.
    pub fn from_env() -> Self {
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0);
        Scanner { threads, samples: DEFAULT_SAMPLES }
    }

    pub fn with_threads(threads: usize) -> Self {
        Scanner { threads: Some(threads.max(1)), samples: DEFAULT_SAMPLES }
    }

    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self.threads {
            Some(1) => items.iter().map(f).collect(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|pool| pool.install(|| items.par_iter().map(&f).collect()))
                .unwrap_or_else(|_| items.iter().map(&f).collect()),
            None => items.par_iter().map(f).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRecord {
    pub phi: f64,
    pub i_ac_pu: f64,
    pub f_peak: f64,
    pub f_valley: f64,
    pub delta_f_margin: f64,
    pub cap_peak_pu: f64,
    pub cap_dc_pu: f64,
    pub status: String,
}

impl BoundaryRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryScan {
    pub scheme: Scheme,
    pub records: Vec<BoundaryRecord>,
}

pub const BOUNDARY_HEADER: [&str; 8] =
    ["phi_rad", "i_ac_pu", "f_peak", "f_valley", "delta_f_margin", "cap_peak_pu", "cap_dc_pu", "status"];

impl BoundaryScan {
    /// Smallest margin and its record; a failed row counts as −∞.
    pub fn min_margin(&self) -> Option<&BoundaryRecord> {
        self.records.iter().min_by(|a, b| key(a).total_cmp(&key(b)))
    }

    pub fn all_ok(&self) -> bool {
        self.records.iter().all(BoundaryRecord::ok)
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                vec![
                    g9(r.phi),
                    g9(r.i_ac_pu),
                    g9(r.f_peak),
                    g9(r.f_valley),
                    g9(r.delta_f_margin),
                    g9(r.cap_peak_pu),
                    g9(r.cap_dc_pu),
                    r.status.clone(),
                ]
            })
            .collect()
    }
}

fn key(r: &BoundaryRecord) -> f64 {
    if r.ok() {
        r.delta_f_margin
    } else {
        f64::NEG_INFINITY
    }
}

fn check_dphi(dphi: f64, max: f64) -> Result<()> {
    if dphi > 0.0 && dphi <= max + 1e-15 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { field: "dphi", reason: format!("must lie in (0, {max:.6}], got {dphi}") })
    }
}

/// Grid −π + k·dφ, k = 1..n, covering (−π, π].
pub fn boundary_grid(dphi: f64) -> Vec<f64> {
    let n = (2.0 * PI / dphi + 1e-9).floor() as usize;
    (1..=n).map(|k| -PI + k as f64 * dphi).collect()
}

/// Grid −π + k·dφ, k = 0..n, starting at −π.
pub fn region_grid(dphi: f64) -> Vec<f64> {
    let n = (2.0 * PI / dphi + 1e-9).floor() as usize;
    (0..=n).map(|k| (-PI + k as f64 * dphi).min(PI)).collect()
}

fn record_at(
    scheme: Scheme,
    params: &ConverterParams,
    point: OperatingPoint,
    samples: usize,
    full: bool,
) -> BoundaryRecord {
    let nan = f64::NAN;
    let mut rec = BoundaryRecord {
        phi: point.phi,
        i_ac_pu: point.i_ac_pu,
        f_peak: nan,
        f_valley: nan,
        delta_f_margin: nan,
        cap_peak_pu: nan,
        cap_dc_pu: nan,
        status: "ok".into(),
    };
    let res = if full {
        waveform::evaluate_point(scheme, params, &point, samples)
            .map(|r| (r.margin, Some((r.cap_peak_pu, r.cap_dc_pu))))
    } else {
        steady_state::solve(scheme, params, &point)
            .and_then(|s| RwfEvaluator::new(scheme, params, &s)?.margin(params.period(), samples))
            .map(|m| (m, None))
    };
    match res {
        Ok((m, cap)) => {
            rec.f_peak = m.f_peak;
            rec.f_valley = m.f_valley;
            rec.delta_f_margin = m.delta_f_margin;
            if let Some((peak, dc)) = cap {
                rec.cap_peak_pu = peak;
                rec.cap_dc_pu = dc;
            }
        }
        Err(e) => rec.status = format!("error: {e}"),
    }
    rec
}

pub fn scan_points(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    points: &[OperatingPoint],
) -> BoundaryScan {
    let records = scanner.map(points, |p| record_at(scheme, params, *p, scanner.samples, true));
    BoundaryScan { scheme, records }
}

fn boundary_points(range: &RequiredRange, dphi: f64) -> Vec<OperatingPoint> {
    boundary_grid(dphi).into_iter().map(|phi| OperatingPoint { i_ac_pu: boundary_profile(range, phi), phi }).collect()
}

pub fn scan_boundary(
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    dphi: f64,
) -> Result<BoundaryScan> {
    scan_boundary_with(&Scanner::from_env(), params, scheme, range, dphi)
}

pub fn scan_boundary_with(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    dphi: f64,
) -> Result<BoundaryScan> {
    params.validate()?;
    check_dphi(dphi, PI / 18.0)?;
    Ok(scan_points(scanner, params, scheme, &boundary_points(range, dphi)))
}

/// Margins only (no capacitor report) along the boundary.
fn margin_scan(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    dphi: f64,
) -> BoundaryScan {
    let pts = boundary_points(range, dphi);
    let records = scanner.map(&pts, |p| record_at(scheme, params, *p, scanner.samples, false));
    BoundaryScan { scheme, records }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PqRegion {
    pub scheme: Scheme,
    pub records: Vec<(f64, f64)>,
    pub area: f64,
}

pub const REGION_HEADER: [&str; 4] = ["phi_rad", "i_max_pu", "p_pu", "q_pu"];

impl PqRegion {
    pub fn rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|&(phi, i)| {
                let (p, q) = pq_of(&OperatingPoint { i_ac_pu: i, phi });
                vec![g9(phi), g9(i), g9(p), g9(q)]
            })
            .collect()
    }
}

fn linear_at(scheme: Scheme, params: &ConverterParams, point: OperatingPoint, samples: usize) -> bool {
    let rec = record_at(scheme, params, point, samples, false);
    rec.ok() && rec.delta_f_margin > 0.0
}

/// Largest current on the flowchart's descending ladder that keeps linear modulation.
fn max_linear_current(
    scheme: Scheme,
    params: &ConverterParams,
    range: &RequiredRange,
    phi: f64,
    di: f64,
    samples: usize,
) -> f64 {
    let mut i = boundary_profile(range, phi);
    loop {
        if linear_at(scheme, params, OperatingPoint { i_ac_pu: i, phi }, samples) {
            return i;
        }
        i -= di;
        if i < 0.0 {
            return 0.0;
        }
    }
}

pub fn scan_region(
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    dphi: f64,
    di: f64,
) -> Result<PqRegion> {
    scan_region_with(&Scanner::from_env(), params, scheme, range, dphi, di)
}

pub fn scan_region_with(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    dphi: f64,
    di: f64,
) -> Result<PqRegion> {
    params.validate()?;
    check_dphi(dphi, PI)?;
    if !(di > 0.0) {
        return Err(Error::InvalidParameter { field: "di", reason: format!("must be > 0, got {di}") });
    }
    let grid = region_grid(dphi);
    let currents = scanner.map(&grid, |&phi| max_linear_current(scheme, params, range, phi, di, scanner.samples));
    let records: Vec<(f64, f64)> = grid.into_iter().zip(currents).collect();
    let area = polar_area(&records);
    Ok(PqRegion { scheme, records, area })
}

/// Polar trapezoid rule ½∮I²dφ, closing the curve across ±π.
fn polar_area(records: &[(f64, f64)]) -> f64 {
    if records.len() < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for w in records.windows(2) {
        s += 0.5 * (w[0].1 * w[0].1 + w[1].1 * w[1].1) * (w[1].0 - w[0].0);
    }
    let (first, last) = (records[0], records[records.len() - 1]);
    s += 0.5 * (first.1 * first.1 + last.1 * last.1) * (first.0 + 2.0 * PI - last.0);
    0.5 * s
}

pub fn region_area(region: &PqRegion) -> f64 {
    polar_area(&region.records)
}

/// Area of the required range itself on the same grid.
pub fn required_region(range: &RequiredRange, dphi: f64) -> PqRegion {
    let records: Vec<(f64, f64)> =
        region_grid(dphi).into_iter().map(|phi| (phi, boundary_profile(range, phi))).collect();
    let area = polar_area(&records);
    PqRegion { scheme: Scheme::Direct, records, area }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingResult {
    pub u_msacv_pu: f64,
    pub c_sm_required: f64,
    pub e_req_at_solution: f64,
    pub worst_point: (f64, f64),
}

pub const SIZING_HEADER: [&str; 6] =
    ["scheme", "u_msacv_pu", "c_sm_required_f", "e_req_s", "worst_phi_rad", "worst_i_ac_pu"];

impl SizingResult {
    pub fn row(&self, scheme: Scheme) -> Vec<String> {
        vec![
            scheme.name().to_string(),
            g9(self.u_msacv_pu),
            g9(self.c_sm_required),
            g9(self.e_req_at_solution),
            g9(self.worst_point.0),
            g9(self.worst_point.1),
        ]
    }
}

fn msacv_predicate(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    u: f64,
) -> (bool, BoundaryScan) {
    let scan = margin_scan(scanner, &params.with_u_acv(u), scheme, range, MSACV_DPHI);
    let ok = scan.all_ok() && scan.records.iter().all(|r| r.delta_f_margin >= 0.0);
    (ok, scan)
}

pub fn msacv(params: &ConverterParams, scheme: Scheme, range: &RequiredRange, tol: f64) -> Result<SizingResult> {
    msacv_with(&Scanner::from_env(), params, scheme, range, tol)
}

pub fn msacv_with(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    tol: f64,
) -> Result<SizingResult> {
    params.validate()?;
    if !(tol >= 1e-5) {
        return Err(Error::InvalidParameter { field: "tol", reason: format!("must be >= 1e-5, got {tol}") });
    }
    let (mut lo, mut hi) = MSACV_BRACKET;
    // At low voltage with a wide range the direct steady state can cease to exist, which
    // the predicate reads as a failure; step up until the whole range is linear.
    let mut start = None;
    let mut u = lo;
    while u < hi {
        let (ok, scan) = msacv_predicate(scanner, params, scheme, range, u);
        if ok {
            start = Some((u, scan));
            break;
        }
        u += MSACV_LOW_STEP;
    }
    let Some((u0, mut best)) = start else {
        return Err(Error::Bracket {
            lo,
            hi,
            reason: "boundary margin negative or unsolved across the bracket".into(),
        });
    };
    lo = u0;
    if msacv_predicate(scanner, params, scheme, range, hi).0 {
        return Err(Error::Bracket { lo, hi, reason: "boundary margin still non-negative at the upper end".into() });
    }
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        let (ok, scan) = msacv_predicate(scanner, params, scheme, range, mid);
        if ok {
            lo = mid;
            best = scan;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    let worst = best.min_margin().map(|r| (r.phi, r.i_ac_pu)).unwrap_or((f64::NAN, f64::NAN));
    Ok(SizingResult {
        u_msacv_pu: u,
        c_sm_required: params.c_sm,
        e_req_at_solution: derive_constants(&params.with_u_acv(u))?.e_req,
        worst_point: worst,
    })
}

/// Worst boundary capacitor peak (p.u.); a failed point counts as +∞.
fn worst_cap_peak(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
) -> (f64, (f64, f64)) {
    let scan = scan_points(scanner, params, scheme, &boundary_points(range, MSACV_DPHI));
    let mut worst = (f64::NEG_INFINITY, (f64::NAN, f64::NAN));
    for r in &scan.records {
        let v = if r.ok() && r.cap_peak_pu.is_finite() { r.cap_peak_pu } else { f64::INFINITY };
        if v > worst.0 {
            worst = (v, (r.phi, r.i_ac_pu));
        }
    }
    worst
}

pub fn size_energy_storage(
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    peak_limit: f64,
    tol: f64,
) -> Result<SizingResult> {
    size_energy_storage_with(&Scanner::from_env(), params, scheme, range, peak_limit, tol)
}

pub fn size_energy_storage_with(
    scanner: &Scanner,
    params: &ConverterParams,
    scheme: Scheme,
    range: &RequiredRange,
    peak_limit: f64,
    tol: f64,
) -> Result<SizingResult> {
    if !(peak_limit > 1.0) {
        return Err(Error::InvalidParameter { field: "peak_limit", reason: format!("must be > 1, got {peak_limit}") });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter { field: "tol", reason: format!("must be > 0, got {tol}") });
    }
    let u = msacv_with(scanner, params, scheme, range, 1e-3)?.u_msacv_pu;
    let base = params.with_u_acv(u);
    let (mut lo, mut hi) = SIZING_BRACKET;
    let excess = |c: f64| {
        let (peak, at) = worst_cap_peak(scanner, &base.with_c_sm(c), scheme, range);
        (peak - peak_limit, at)
    };
    if excess(lo).0 <= 0.0 {
        return Err(Error::Bracket { lo, hi, reason: "peak limit already met at the smallest capacitance".into() });
    }
    let (mut g_hi, mut at_hi) = excess(hi);
    if g_hi > 0.0 {
        return Err(Error::Bracket { lo, hi, reason: "peak limit not met at the largest capacitance".into() });
    }
    while g_hi < -tol && (hi - lo) > 1e-9 {
        let mid = 0.5 * (lo + hi);
        let (g, at) = excess(mid);
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            g_hi = g;
            at_hi = at;
        }
    }
    Ok(SizingResult {
        u_msacv_pu: u,
        c_sm_required: hi,
        e_req_at_solution: derive_constants(&base.with_c_sm(hi))?.e_req,
        worst_point: at_hi,
    })
}

//! Converter ratings, per-unit bases and the required operating envelope.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound accepted for `u_acv_pu`; the MS-ACV bisection brackets [0.5, 1.2].
pub const U_ACV_MAX: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub u_dc_nominal: f64,
    pub n_submodules: u32,
    pub c_sm: f64,
    pub s_rated: f64,
    pub p_rated: f64,
    pub x_eq_pu: f64,
    /// Valve-side referred arm reactance. Each physical arm carries twice this value.
    pub x_arm_pu: f64,
    pub x_t_pu: f64,
    /// Amplitude of the valve-side voltage in units of U_dcN/2.
    pub u_acv_pu: f64,
    pub frequency: f64,
    pub u_cap_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub u_cap_nominal: f64,
    pub e_req: f64,
    pub c1: f64,
    pub i_base: f64,
    pub u_acv_rms: f64,
    pub omega: f64,
    pub z_base: f64,
    /// Reactance of one physical arm in p.u. (2·x_arm_pu).
    pub x_arm_branch_pu: f64,
    pub l_arm: f64,
    pub l_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub i_ac_pu: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequiredRange {
    pub q_max_pu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Direct,
    IndirectClosedLoop,
    IndirectOpenLoop,
    ImprovedDirect,
    DirectCvcOnly,
    DirectCcscOnly,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Direct => "direct",
            Scheme::IndirectClosedLoop => "indirect",
            Scheme::IndirectOpenLoop => "indirect-open-loop",
            Scheme::ImprovedDirect => "improved-direct",
            Scheme::DirectCvcOnly => "direct-cvc-only",
            Scheme::DirectCcscOnly => "direct-ccsc-only",
        }
    }

    pub fn is_indirect(self) -> bool {
        matches!(self, Scheme::IndirectClosedLoop | Scheme::IndirectOpenLoop)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "direct" => Scheme::Direct,
            "indirect" | "indirect-closed-loop" => Scheme::IndirectClosedLoop,
            "indirect-open-loop" => Scheme::IndirectOpenLoop,
            "improved-direct" | "improved" => Scheme::ImprovedDirect,
            "direct-cvc-only" | "cvc-only" => Scheme::DirectCvcOnly,
            "direct-ccsc-only" | "ccsc-only" => Scheme::DirectCcscOnly,
            _ => return Err(Error::InvalidParameter { field: "scheme", reason: format!("unknown scheme `{s}`") }),
        })
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

impl ConverterParams {
    /// Table I case: 1250 MVA, ±200 kV, N = 200, C_d = 18.6 mF, 50 Hz, U_ACV* = 0.86.
    pub fn table1() -> Self {
        ConverterParams {
            u_dc_nominal: 400e3,
            n_submodules: 200,
            c_sm: 18.6e-3,
            s_rated: 1250e6,
            p_rated: 1250e6,
            x_eq_pu: 0.25,
            x_arm_pu: 0.15,
            x_t_pu: 0.10,
            u_acv_pu: 0.86,
            frequency: 50.0,
            u_cap_ref: 400e3 / 200.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("u_dc_nominal", self.u_dc_nominal)?;
        if self.n_submodules == 0 {
            return Err(invalid("n_submodules", "must be > 0"));
        }
        positive("c_sm", self.c_sm)?;
        positive("s_rated", self.s_rated)?;
        positive("p_rated", self.p_rated)?;
        positive("x_eq_pu", self.x_eq_pu)?;
        positive("x_arm_pu", self.x_arm_pu)?;
        positive("x_t_pu", self.x_t_pu)?;
        positive("frequency", self.frequency)?;
        positive("u_cap_ref", self.u_cap_ref)?;
        if !(self.u_acv_pu > 0.0 && self.u_acv_pu <= U_ACV_MAX) {
            return Err(invalid("u_acv_pu", format!("must lie in (0, {U_ACV_MAX}], got {}", self.u_acv_pu)));
        }
        if (self.x_eq_pu - self.x_t_pu - self.x_arm_pu).abs() > 1e-12 {
            return Err(invalid(
                "x_eq_pu",
                format!("must equal x_t_pu + x_arm_pu = {}, got {}", self.x_t_pu + self.x_arm_pu, self.x_eq_pu),
            ));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn u_cap_nominal(&self) -> f64 {
        self.u_dc_nominal / self.n_submodules as f64
    }

    /// True when the capacitor target is the default U_dcN/N.
    pub fn default_cap_ref(&self) -> bool {
        (self.u_cap_ref - self.u_cap_nominal()).abs() <= 1e-12 * self.u_cap_nominal()
    }

    pub fn with_u_acv(mut self, u_acv_pu: f64) -> Self {
        self.u_acv_pu = u_acv_pu;
        self
    }

    pub fn with_c_sm(mut self, c_sm: f64) -> Self {
        self.c_sm = c_sm;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<(Self, RequiredRange)> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.resolve()
    }

    pub fn from_file(path: &Path) -> Result<(Self, RequiredRange)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<(Self, RequiredRange)> {
        match name {
            "table1" => Ok((Self::table1(), RequiredRange { q_max_pu: 0.5 })),
            _ => Err(Error::Config(format!("unknown preset `{name}`"))),
        }
    }
}

/// On-disk configuration: a `[converter]` section and a `[range]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub converter: ConverterSection,
    pub range: RangeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterSection {
    pub u_dc_nominal_v: f64,
    pub n_submodules: u32,
    pub c_sm_farads: f64,
    pub s_rated_va: f64,
    pub p_rated_w: f64,
    pub x_eq_pu: f64,
    pub x_arm_pu: f64,
    pub x_t_pu: f64,
    pub u_acv_pu: f64,
    pub frequency_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_cap_ref_v: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSection {
    pub q_max_pu: f64,
}

impl ConfigFile {
    pub fn resolve(&self) -> Result<(ConverterParams, RequiredRange)> {
        let c = &self.converter;
        let params = ConverterParams {
            u_dc_nominal: c.u_dc_nominal_v,
            n_submodules: c.n_submodules,
            c_sm: c.c_sm_farads,
            s_rated: c.s_rated_va,
            p_rated: c.p_rated_w,
            x_eq_pu: c.x_eq_pu,
            x_arm_pu: c.x_arm_pu,
            x_t_pu: c.x_t_pu,
            u_acv_pu: c.u_acv_pu,
            frequency: c.frequency_hz,
            u_cap_ref: c.u_cap_ref_v.unwrap_or(c.u_dc_nominal_v / c.n_submodules.max(1) as f64),
        };
        params.validate()?;
        let range = RequiredRange::new(self.range.q_max_pu)?;
        Ok((params, range))
    }

    pub fn from_params(params: &ConverterParams, range: &RequiredRange) -> Self {
        ConfigFile {
            converter: ConverterSection {
                u_dc_nominal_v: params.u_dc_nominal,
                n_submodules: params.n_submodules,
                c_sm_farads: params.c_sm,
                s_rated_va: params.s_rated,
                p_rated_w: params.p_rated,
                x_eq_pu: params.x_eq_pu,
                x_arm_pu: params.x_arm_pu,
                x_t_pu: params.x_t_pu,
                u_acv_pu: params.u_acv_pu,
                frequency_hz: params.frequency,
                u_cap_ref_v: Some(params.u_cap_ref),
            },
            range: RangeSection { q_max_pu: range.q_max_pu },
        }
    }
}

impl RequiredRange {
    pub fn new(q_max_pu: f64) -> Result<Self> {
        if q_max_pu > 0.0 && q_max_pu <= 1.0 {
            Ok(RequiredRange { q_max_pu })
        } else {
            Err(invalid("q_max_pu", format!("must lie in (0, 1], got {q_max_pu}")))
        }
    }
}

impl OperatingPoint {
    pub fn new(i_ac_pu: f64, phi: f64) -> Result<Self> {
        if !(i_ac_pu.is_finite() && i_ac_pu >= 0.0) {
            return Err(invalid("i_ac_pu", format!("must be finite and >= 0, got {i_ac_pu}")));
        }
        if !(phi.is_finite() && (-PI..=PI).contains(&phi)) {
            return Err(invalid("phi", format!("must lie in [-pi, pi], got {phi}")));
        }
        Ok(OperatingPoint { i_ac_pu, phi })
    }

    /// Corner points A to D of the Q_max = 0.5 required range.
    pub fn corner(label: char) -> Option<Self> {
        let phi = match label {
            'A' => PI / 6.0,
            'B' => -PI / 6.0,
            'C' => -5.0 * PI / 6.0,
            'D' => 5.0 * PI / 6.0,
            _ => return None,
        };
        Some(OperatingPoint { i_ac_pu: 1.0, phi })
    }
}

pub fn derive_constants(params: &ConverterParams) -> Result<DerivedConstants> {
    params.validate()?;
    let omega = params.omega();
    let n = params.n_submodules as f64;
    let u_cap_nominal = params.u_cap_nominal();
    let u_acv_rms = params.u_acv_pu * (params.u_dc_nominal / 2.0) / SQRT_2;
    let i_base = params.s_rated / (3.0 * u_acv_rms);
    let z_base = u_acv_rms / i_base;
    let e_req = 6.0 * (0.5 * params.c_sm * u_cap_nominal * u_cap_nominal * n) / params.s_rated;
    let c1 = 1.0 / (8.0 * params.u_acv_pu * omega * e_req);
    let x_arm_branch_pu = 2.0 * params.x_arm_pu;
    Ok(DerivedConstants {
        u_cap_nominal,
        e_req,
        c1,
        i_base,
        u_acv_rms,
        omega,
        z_base,
        x_arm_branch_pu,
        l_arm: x_arm_branch_pu * z_base / omega,
        l_t: params.x_t_pu * z_base / omega,
    })
}

/// Required-range boundary current I(φ) = min(1, Q_max/|sin φ|).
pub fn boundary_profile(range: &RequiredRange, phi: f64) -> f64 {
    let s = phi.sin().abs();
    if s <= range.q_max_pu {
        1.0
    } else {
        range.q_max_pu / s
    }
}

pub fn pq_of(point: &OperatingPoint) -> (f64, f64) {
    (point.i_ac_pu * point.phi.cos(), point.i_ac_pu * point.phi.sin())
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

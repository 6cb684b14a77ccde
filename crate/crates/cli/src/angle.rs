//! Angle and point arguments: plain numbers or multiples of pi such as `pi/360`, `-5*pi/6`.

use std::f64::consts::PI;

/// Parse a number or a `[k*]pi[/n]` expression (radians before any degree conversion).
pub fn parse_angle_expr(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1.0, rest.trim()),
        None => (1.0, t.strip_prefix('+').unwrap_or(t).trim()),
    };
    if !body.contains("pi") {
        return body.parse::<f64>().map(|v| sign * v).map_err(|_| format!("not a number: `{s}`"));
    }
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n.trim(), Some(d.trim())),
        None => (body, None),
    };
    let k = match num.strip_suffix("pi").map(str::trim) {
        Some("") => 1.0,
        Some(coef) => {
            let coef = coef.strip_suffix('*').map(str::trim).unwrap_or(coef);
            coef.parse::<f64>().map_err(|_| format!("bad multiple of pi: `{s}`"))?
        }
        None => return Err(format!("expected `pi`, `k*pi`, `pi/n` or `k*pi/n`: `{s}`")),
    };
    let d = match den {
        Some(d) => d.parse::<f64>().map_err(|_| format!("bad divisor: `{s}`"))?,
        None => 1.0,
    };
    if d == 0.0 {
        return Err(format!("division by zero: `{s}`"));
    }
    let v = sign * k * PI / d;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: `{s}`"))
    }
}

/// `i,phi` pair as used by `--from` and `--to`.
pub fn parse_pair(s: &str) -> Result<(f64, String), String> {
    let (i, phi) = s.split_once(',').ok_or_else(|| format!("expected `i,phi`, got `{s}`"))?;
    let i = i.trim().parse::<f64>().map_err(|_| format!("bad current in `{s}`"))?;
    Ok((i, phi.trim().to_string()))
}

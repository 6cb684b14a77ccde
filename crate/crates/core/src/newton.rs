//! Damped Newton iteration for small dense systems with exact (dual-number) Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::dual::Dual;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonResult<const N: usize> {
    pub x: [f64; N],
    pub residual_norm: f64,
    pub iterations: usize,
}

pub fn residual_and_jacobian<const N: usize, F>(f: &F, x: &[f64; N]) -> ([f64; N], [[f64; N]; N])
where
    F: Fn(&[Dual<N>; N]) -> [Dual<N>; N],
{
    let vars: [Dual<N>; N] = std::array::from_fn(|i| Dual::var(x[i], i));
    let r = f(&vars);
    (std::array::from_fn(|i| r[i].v), std::array::from_fn(|i| r[i].d))
}

fn norm<const N: usize>(r: &[f64; N]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn solve<const N: usize, F>(
    block: &'static str,
    f: F,
    x0: [f64; N],
    opts: &NewtonOptions,
) -> Result<NewtonResult<N>>
where
    F: Fn(&[Dual<N>; N]) -> [Dual<N>; N],
{
    let mut x = x0;
    let (mut r, mut jac) = residual_and_jacobian(&f, &x);
    let mut rn = norm(&r);
    for it in 0..opts.max_iter {
        if !rn.is_finite() {
            break;
        }
        if rn < opts.tol {
            return Ok(NewtonResult { x, residual_norm: rn, iterations: it });
        }
        let j = DMatrix::<f64>::from_fn(N, N, |i, k| jac[i][k]);
        let rhs = DVector::<f64>::from_fn(N, |i, _| -r[i]);
        let step = j
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::SingularJacobian { block, iterate: x.to_vec() })?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: [f64; N] = std::array::from_fn(|i| x[i] + lambda * step[i]);
            let (tr, tj) = residual_and_jacobian(&f, &trial);
            let tn = norm(&tr);
            if tn.is_finite() && tn <= rn {
                accepted = Some((trial, tr, tj, tn));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nx, nr, nj, nn)) => {
                x = nx;
                r = nr;
                jac = nj;
                rn = nn;
            }
            None => break,
        }
    }
    if rn < opts.tol {
        return Ok(NewtonResult { x, residual_norm: rn, iterations: opts.max_iter });
    }
    Err(Error::NoConvergence {
        block,
        iterations: opts.max_iter,
        residual: rn,
        residuals: r.to_vec(),
        iterate: x.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Real;

    #[test]
    fn solves_circle_line_intersection() {
        let f = |x: &[Dual<2>; 2]| [x[0] * x[0] + x[1] * x[1] - 1.0, x[0] - x[1]];
        let r = solve("test", f, [1.0, 0.2], &NewtonOptions::default()).unwrap();
        let s = 0.5f64.sqrt();
        assert!((r.x[0] - s).abs() < 1e-12 && (r.x[1] - s).abs() < 1e-12);
        assert!(r.residual_norm < 1e-10);
    }

    #[test]
    fn reports_failure() {
        let f = |x: &[Dual<1>; 1]| [x[0] * x[0] + 1.0];
        let e = solve("block", f, [0.3], &NewtonOptions::default()).unwrap_err();
        assert!(matches!(e, Error::NoConvergence { .. } | Error::SingularJacobian { .. }));
    }

    #[test]
    fn jacobian_of_trig_system() {
        let f = |x: &[Dual<2>; 2]| [x[0].sin() * x[1], x[1].atan2(x[0])];
        let (_, j) = residual_and_jacobian(&f, &[0.4, 1.3]);
        assert!((j[0][0] - 0.4f64.cos() * 1.3).abs() < 1e-14);
        assert!((j[0][1] - 0.4f64.sin()).abs() < 1e-14);
    }
}

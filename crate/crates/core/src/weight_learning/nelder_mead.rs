//! Derivative-free simplex minimizer.

use crate::error::{Error, Result};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Relative step for non-zero start coordinates.
const NONZERO_STEP: f64 = 0.05;
/// Absolute step for zero start coordinates.
const ZERO_STEP: f64 = 0.00025;
/// Stop once `max f - min f` over the simplex falls below this...
pub const F_SPREAD_TOL: f64 = 1e-10;
/// ...and every vertex lies within this distance (max norm) of the best.
/// Without it a simplex straddling a minimum symmetrically has zero spread.
pub const X_SPREAD_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn toward(from: &[f64], to: &[f64], t: f64) -> Vec<f64> {
    from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
}

/// Minimizes `f` from `start` with the textbook coefficients (reflection 1,
/// expansion 2, contraction ½, shrink ½).
///
/// The initial simplex is `start` plus one vertex per coordinate, that
/// coordinate scaled by 1.05 (or set to 0.00025 when it is zero). Non-finite
/// values met along the way are treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, start: &[f64], max_iters: usize) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(start);
    if !f0.is_finite() {
        return Err(Error::Optimizer(format!("objective is {f0} at the start point")));
    }
    if n == 0 {
        return Ok(NelderMeadResult {
            x: Vec::new(),
            fx: f0,
            iterations: 0,
            evaluations: 1,
        });
    }

    let mut simplex = vec![start.to_vec()];
    let mut values = vec![f0];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] = if v[i] != 0.0 {
            v[i] * (1.0 + NONZERO_STEP)
        } else {
            ZERO_STEP
        };
        values.push(eval(&v));
        simplex.push(v);
    }

    let mut iterations = 0;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if iterations >= max_iters || (values[n] - values[0] < F_SPREAD_TOL && x_spread < X_SPREAD_TOL) {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();

        let xr = toward(&centroid, &worst, -REFLECT);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = toward(&centroid, &worst, -REFLECT * EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < values[n] {
            // outside contraction
            let xc = toward(&centroid, &worst, -REFLECT * CONTRACT);
            let fc = eval(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            // inside contraction
            let xc = toward(&centroid, &worst, CONTRACT);
            let fc = eval(&xc);
            let ok = fc < values[n];
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            simplex[i] = toward(&best, &simplex[i], SHRINK);
            values[i] = eval(&simplex[i]);
        }
    }

    Ok(NelderMeadResult {
        x: simplex[0].clone(),
        fx: values[0],
        iterations,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_parabola() {
        let r = nelder_mead(|t| (t[0] - 3.0).powi(2), &[0.0], 500).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-6, "{:?}", r);
        assert!(r.iterations <= 500);
    }

    #[test]
    fn anisotropic_bowl() {
        let r = nelder_mead(|t| t[0] * t[0] + 10.0 * t[1] * t[1], &[5.0, 5.0], 500).unwrap();
        assert!(r.x[0].abs() < 1e-5 && r.x[1].abs() < 1e-5, "{:?}", r);
    }

    #[test]
    fn rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], 2000).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r);
    }

    #[test]
    fn constant_function_stops_at_start_simplex() {
        let r = nelder_mead(|_| 7.0, &[1.0, 0.0], 500).unwrap();
        assert_eq!(r.fx, 7.0);
        // shrinking keeps the best vertex fixed
        let initial = [vec![1.0, 0.0], vec![1.05, 0.0], vec![1.0, 0.00025]];
        assert!(initial.contains(&r.x));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        assert!(matches!(
            nelder_mead(|_| f64::NAN, &[0.0], 10),
            Err(Error::Optimizer(_))
        ));
        assert!(nelder_mead(|_| f64::INFINITY, &[0.0], 10).is_err());
    }

    #[test]
    fn respects_iteration_budget() {
        let r = nelder_mead(|t| (t[0] - 1e6).powi(2), &[0.0], 3).unwrap();
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |t: &[f64]| (t[0].sin() * 3.0 + t[1].cos()).abs() + 0.1 * t[0] * t[0];
        let start = [2.0, -1.0];
        let r = nelder_mead(f, &start, 200).unwrap();
        assert!(r.fx <= f(&start));
    }
}

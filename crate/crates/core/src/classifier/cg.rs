//! Polak-Ribiere nonlinear conjugate gradient with a strong-Wolfe line search.
//!
//! Line search follows the interpolate/extrapolate scheme of Rasmussen's
//! `minimize`: cubic extrapolation bracketed by `EXT`, quadratic or cubic
//! interpolation clamped by `INT`, and an initial step for each new direction
//! scaled by the ratio of successive directional slopes.

/// Wolfe sufficient-decrease constant.
const RHO: f64 = 0.01;
/// Wolfe curvature constant; `RHO < SIG < 1`.
const SIG: f64 = 0.5;
/// Do not re-evaluate within this fraction of the bracket ends.
const INT: f64 = 0.1;
/// Extrapolate at most this many times the current step.
const EXT: f64 = 3.0;
/// Function evaluations allowed per line search.
const MAX_EVALS: usize = 20;
/// Largest allowed growth of the initial step between directions.
const RATIO: f64 = 100.0;

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    /// Objective value after every accepted iteration; `values[0]` is the start.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// True when two line searches in a row failed and the run ended early.
    pub stalled: bool,
}

impl CgResult {
    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("at least the starting value")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Minimizes `f` starting at `x0` for at most `max_iter` line searches.
///
/// `f` returns the objective value and its gradient. A non-finite value is
/// treated as a failed point and the line search backs off from it.
pub fn minimize<F>(x0: &[f64], max_iter: usize, mut f: F) -> CgResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut f1, mut df1) = f(&x);
    let mut evaluations = 1;
    let mut values = vec![f1];
    let mut s: Vec<f64> = df1.iter().map(|g| -g).collect();
    let mut d1 = -dot(&s, &s);
    let mut z1 = 1.0 / (1.0 - d1);
    let mut iterations = 0;
    let mut ls_failed = false;
    let mut stalled = false;

    if d1 == 0.0 || !f1.is_finite() {
        return CgResult {
            x,
            values,
            iterations,
            evaluations,
            stalled,
        };
    }

    while iterations < max_iter {
        iterations += 1;
        let (x0, f0, df0) = (x.clone(), f1, df1.clone());

        axpy(z1, &s, &mut x);
        let (mut f2, mut df2) = f(&x);
        evaluations += 1;
        let mut d2 = dot(&df2, &s);
        let (mut f3, mut d3, mut z3) = (f1, d1, -z1);
        let mut budget = MAX_EVALS;
        let mut success = false;
        let mut limit = -1.0;

        loop {
            // shrink until sufficient decrease and a non-positive-enough slope hold
            while (!f2.is_finite() || f2 > f1 + z1 * RHO * d1 || d2 > -SIG * d1) && budget > 0 {
                limit = z1;
                let mut z2 = if !f2.is_finite() {
                    f64::NAN
                } else if f2 > f1 {
                    z3 - (0.5 * d3 * z3 * z3) / (d3 * z3 + f2 - f3)
                } else {
                    let a = 6.0 * (f2 - f3) / z3 + 3.0 * (d2 + d3);
                    let b = 3.0 * (f3 - f2) - z3 * (d3 + 2.0 * d2);
                    ((b * b - a * d2 * z3 * z3).sqrt() - b) / a
                };
                if !z2.is_finite() {
                    z2 = z3 / 2.0;
                }
                z2 = z2.min(INT * z3).max((1.0 - INT) * z3);
                z1 += z2;
                axpy(z2, &s, &mut x);
                (f2, df2) = f(&x);
                evaluations += 1;
                budget -= 1;
                d2 = dot(&df2, &s);
                z3 -= z2;
            }
            if !f2.is_finite() || f2 > f1 + z1 * RHO * d1 || d2 > -SIG * d1 {
                break;
            } else if d2 > SIG * d1 {
                success = true;
                break;
            } else if budget == 0 {
                break;
            }
            // extrapolate with a cubic fit
            let a = 6.0 * (f2 - f3) / z3 + 3.0 * (d2 + d3);
            let b = 3.0 * (f3 - f2) - z3 * (d3 + 2.0 * d2);
            let disc = b * b - a * d2 * z3 * z3;
            let mut z2 = -d2 * z3 * z3 / (b + disc.sqrt());
            if disc < 0.0 || !z2.is_finite() || z2 < 0.0 {
                z2 = if limit < -0.5 {
                    z1 * (EXT - 1.0)
                } else {
                    (limit - z1) / 2.0
                };
            } else if limit > -0.5 && z2 + z1 > limit {
                z2 = (limit - z1) / 2.0;
            } else if limit < -0.5 && z2 + z1 > z1 * EXT {
                z2 = z1 * (EXT - 1.0);
            } else if z2 < -z3 * INT {
                z2 = -z3 * INT;
            } else if limit > -0.5 && z2 < (limit - z1) * (1.0 - INT) {
                z2 = (limit - z1) * (1.0 - INT);
            }
            f3 = f2;
            d3 = d2;
            z3 = -z2;
            z1 += z2;
            axpy(z2, &s, &mut x);
            (f2, df2) = f(&x);
            evaluations += 1;
            budget -= 1;
            d2 = dot(&df2, &s);
        }

        if success {
            f1 = f2;
            values.push(f1);
            // Polak-Ribiere direction update
            let beta = (dot(&df2, &df2) - dot(&df1, &df2)) / dot(&df1, &df1);
            for (si, gi) in s.iter_mut().zip(&df2) {
                *si = beta * *si - gi;
            }
            std::mem::swap(&mut df1, &mut df2);
            let mut d2 = dot(&df1, &s);
            if d2 > 0.0 {
                s = df1.iter().map(|g| -g).collect();
                d2 = -dot(&s, &s);
            }
            z1 *= RATIO.min(d1 / (d2 - f64::MIN_POSITIVE));
            d1 = d2;
            ls_failed = false;
            if d1 == 0.0 {
                break;
            }
        } else {
            x = x0;
            f1 = f0;
            df1 = df0;
            if ls_failed {
                stalled = true;
                break;
            }
            s = df1.iter().map(|g| -g).collect();
            d1 = -dot(&s, &s);
            if d1 == 0.0 {
                break;
            }
            z1 = 1.0 / (1.0 - d1);
            ls_failed = true;
        }
    }

    CgResult {
        x,
        values,
        iterations,
        evaluations,
        stalled,
    }
}

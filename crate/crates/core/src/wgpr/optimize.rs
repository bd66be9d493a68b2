//! Box-constrained BFGS with a backtracking Armijo line search.
//!
//! Deterministic: no randomized steps, fixed iteration and backtracking caps.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm falls below this times
    /// `max(1, |f|)`.
    pub grad_tol: f64,
    pub lower: f64,
    pub upper: f64,
    /// Longest step (max-norm) a single line search may try.
    pub max_step: f64,
    /// Stop once an accepted step lowers `f` by less than this times
    /// `max(1, |f|)`.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-6,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            max_step: 5.0,
            f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;
const MIN_STEP: f64 = 1e-12;

fn project(x: &mut DVector<f64>, lo: f64, hi: f64) {
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

/// Gradient with components that push against an active bound removed.
fn projected_grad(x: &DVector<f64>, g: &DVector<f64>, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_iterator(
        g.len(),
        x.iter().zip(g.iter()).map(|(&xi, &gi)| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        }),
    )
}

/// An objective that may be undefined (`None`) at some points. Line-search
/// trials only ask for the value.
pub trait Problem {
    fn value_grad(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;

    fn value(&mut self, x: &[f64]) -> Option<f64> {
        self.value_grad(x).map(|(f, _)| f)
    }
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Problem for F {
    fn value_grad(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

/// Minimizes `f`. Returns `None` only if `x0` itself cannot be evaluated.
pub fn minimize<F: Problem>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsOutcome> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    project(&mut x, opts.lower, opts.upper);
    let (mut fx, g0) = f.value_grad(x.as_slice())?;
    if !fx.is_finite() {
        return None;
    }
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = false;
    let mut fresh_hessian = true;

    let small = |pg: &DVector<f64>, fx: f64| pg.amax() < opts.grad_tol * fx.abs().max(1.0);

    while iterations < opts.max_iter {
        let pg = projected_grad(&x, &g, opts.lower, opts.upper);
        if small(&pg, fx) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = -(&h * &pg);
        if dir.dot(&pg) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -pg.clone();
        }
        let longest = dir.amax();
        if longest > opts.max_step {
            dir *= opts.max_step / longest;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut trial = &x + &dir * step;
            project(&mut trial, opts.lower, opts.upper);
            let s = &trial - &x;
            if s.amax() < MIN_STEP {
                break;
            }
            let armijo = |ft: f64| ft.is_finite() && ft <= fx + ARMIJO * g.dot(&s);
            if f.value(trial.as_slice()).is_some_and(armijo) {
                if let Some((ft, gt)) = f.value_grad(trial.as_slice()) {
                    if armijo(ft) {
                        accepted = Some((trial, ft, DVector::from_vec(gt)));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh_hessian {
                // steepest descent failed as well; nothing left to try
                break;
            }
            h = DMatrix::identity(n, n);
            fresh_hessian = true;
            continue;
        };

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - (&s * yv.transpose()) * rho;
            let right = &eye - (&yv * s.transpose()) * rho;
            h = &left * &h * &right + (&s * s.transpose()) * rho;
            fresh_hessian = false;
        }
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if decrease <= opts.f_tol * fx.abs().max(1.0) {
            // stalled: further iterations cannot move the objective
            let pg = projected_grad(&x, &g, opts.lower, opts.upper);
            converged = small(&pg, fx);
            break;
        }
    }
    if !converged && iterations >= opts.max_iter {
        let pg = projected_grad(&x, &g, opts.lower, opts.upper);
        converged = small(&pg, fx);
    }

    Some(BfgsOutcome {
        x: x.as_slice().to_vec(),
        f: fx,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
    })
}

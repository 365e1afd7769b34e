//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    /// Stop once the largest gradient component falls below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iter: 500,
            grad_tol: 1e-8,
            memory: 10,
        }
    }
}

/// Why the minimizer returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Largest gradient component below the tolerance.
    GradientTolerance,
    /// The predicted decrease along the search direction is below the
    /// rounding error of the energy, so no further progress is measurable.
    Precision,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub energy: f64,
    pub iterations: usize,
    /// Gradient tolerance reached.
    pub converged: bool,
    pub stop: StopReason,
    /// Energy at the start and after every accepted step.
    pub history: Vec<f64>,
}

/// Minimize `f`, which returns the value and writes the gradient.
///
/// `precond` applies an approximation of the inverse Hessian and seeds the
/// two-loop recursion in place of the usual scalar scaling.
pub fn minimize(
    x0: DVector<f64>,
    mut f: impl FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
    precond: impl Fn(&DVector<f64>) -> DVector<f64>,
    cfg: &LbfgsConfig,
) -> LbfgsResult {
    const C1: f64 = 1e-4;
    let n = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(n);
    let mut fx = f(&x, &mut g);
    let mut history = vec![fx];
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut g_new = DVector::zeros(n);
    let mut iterations = 0;
    let mut converged = g.amax() < cfg.grad_tol;
    let mut stop = StopReason::MaxIterations;
    while !converged && iterations < cfg.max_iter {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        let mut r = precond(&q);
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&r);
            r.axpy(a - b, s, 1.0);
        }
        let mut dir = -r;
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            // not a descent direction; fall back to the preconditioned gradient
            mem.clear();
            dir = -precond(&g);
            slope = g.dot(&dir);
            if !(slope < 0.0) {
                stop = StopReason::Precision;
                break;
            }
        }
        if -slope <= 4.0 * f64::EPSILON * fx.abs() {
            stop = StopReason::Precision;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt = &x + t * &dir;
            let ft = f(&xt, &mut g_new);
            // Near the minimum the energy decrease drops below rounding, so
            // also accept a non-increasing step whose end slope satisfies the
            // derivative form of the sufficient-decrease test (approximate
            // Wolfe condition of Hager and Zhang).
            let armijo = ft <= fx + C1 * t * slope;
            let approx_wolfe = ft <= fx && g_new.dot(&dir) <= -(1.0 - 2.0 * C1) * slope;
            if ft.is_finite() && (armijo || approx_wolfe) {
                accepted = Some((xt, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if mem.is_empty() {
                stop = StopReason::Precision;
                break;
            }
            mem.clear();
            continue;
        };
        iterations += 1;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let stalled = s.amax() == 0.0;
        if sy > 0.0 {
            if mem.len() == cfg.memory.max(1) {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        std::mem::swap(&mut g, &mut g_new);
        history.push(fx);
        converged = g.amax() < cfg.grad_tol;
        if stalled && !converged {
            // The accepted step did not move the iterate.
            stop = StopReason::Precision;
            break;
        }
    }
    if converged {
        stop = StopReason::GradientTolerance;
    }
    LbfgsResult {
        x,
        energy: fx,
        iterations,
        converged,
        stop,
        history,
    }
}

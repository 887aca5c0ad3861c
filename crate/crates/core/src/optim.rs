//! Quasi-Newton maximization with finite-difference derivatives.
//!
//! Objectives return `None` at inadmissible points, which the line search
//! treats as minus infinity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Converged once the sup-norm of the gradient falls below this.
    pub tol_grad: f64,
    pub max_iter: usize,
    /// Finite-difference step relative to `max(1, |x_i|)`.
    pub rel_step: f64,
    /// Cap on the sup-norm of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { tol_grad: 1e-6, max_iter: 500, rel_step: 1e-5, max_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// Also `true` when the search stalled at the gradient noise floor with a
    /// negligible predicted gain.
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
}

fn steps(x: &[f64], rel: f64) -> Vec<f64> {
    x.iter().map(|v| rel * v.abs().max(1.0)).collect()
}

/// Central-difference gradient; falls back to a one-sided difference when
/// one neighbor is inadmissible.
pub fn fd_gradient<F>(f: &F, x: &[f64], fx: f64, rel_step: f64) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    gradient_with_steps(f, x, fx, &steps(x, rel_step))
}

fn gradient_with_steps<F>(f: &F, x: &[f64], fx: f64, h: &[f64]) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h[i];
        let up = f(&probe);
        probe[i] = x[i] - h[i];
        let down = f(&probe);
        probe[i] = x[i];
        grad.push(match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h[i]),
            (Some(u), None) => (u - fx) / h[i],
            (None, Some(d)) => (fx - d) / h[i],
            (None, None) => return None,
        });
    }
    Some(grad)
}

/// Central-difference Hessian with steps `rel_step * max(1, |x_i|)`.
pub fn fd_hessian<F>(f: &F, x: &[f64], fx: f64, rel_step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    hessian_with_steps(f, x, fx, &steps(x, rel_step))
}

/// Central-difference Hessian whose steps shrink to a small fraction of the
/// local curvature scale `1 / sqrt|H_ii|` in sharply peaked coordinates.
/// Returns the Hessian and the steps it was computed with.
pub fn fd_hessian_adaptive<F>(f: &F, x: &[f64], fx: f64, rel_step: f64) -> Option<(DMatrix<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut h = steps(x, rel_step);
    let mut hess = hessian_with_steps(f, x, fx, &h)?;
    for _ in 0..4 {
        let mut changed = false;
        for i in 0..x.len() {
            let scale = hess[(i, i)].abs().sqrt();
            let cap = CURVATURE_FRACTION / scale;
            let floor = MIN_REL_STEP * x[i].abs().max(1.0);
            if scale.is_finite() && cap < 0.5 * h[i] && h[i] > floor {
                h[i] = cap.max(floor);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        hess = hessian_with_steps(f, x, fx, &h)?;
    }
    Some((hess, h))
}

/// Steps are capped at this fraction of `1 / sqrt|H_ii|`.
const CURVATURE_FRACTION: f64 = 1e-2;
const MIN_REL_STEP: f64 = 1e-10;

fn hessian_with_steps<F>(f: &F, x: &[f64], fx: f64, h: &[f64]) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let k = x.len();
    let mut hess = DMatrix::zeros(k, k);
    let mut probe = x.to_vec();
    let at = |probe: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(i, d) in moves {
            probe[i] = x[i] + d;
        }
        let v = f(probe);
        for &(i, _) in moves {
            probe[i] = x[i];
        }
        v
    };
    for i in 0..k {
        let up = at(&mut probe, &[(i, h[i])])?;
        let down = at(&mut probe, &[(i, -h[i])])?;
        hess[(i, i)] = (up - 2.0 * fx + down) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&mut probe, &[(i, h[i]), (j, h[j])])?;
            let pm = at(&mut probe, &[(i, h[i]), (j, -h[j])])?;
            let mp = at(&mut probe, &[(i, -h[i]), (j, h[j])])?;
            let mm = at(&mut probe, &[(i, -h[i]), (j, -h[j])])?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Some(hess)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes `f` by BFGS with a backtracking Armijo line search.
pub fn maximize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Result<Maximum>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let evaluations = std::cell::Cell::new(0usize);
    let f = |x: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        f(x).filter(|v| v.is_finite())
    };
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x).ok_or_else(|| Error::OptimFailed("starting point is inadmissible".into()))?;
    let mut trace = Vec::new();
    let finish = |x: Vec<f64>, value, grad, iterations, converged, trace, evaluations: usize| Maximum {
        x,
        value,
        grad,
        iterations,
        converged,
        trace,
        evaluations,
    };
    if k == 0 {
        return Ok(finish(x, fx, Vec::new(), 0, true, trace, evaluations.get()));
    }

    // Per-coordinate steps as fractions of max(1, |x_i|); tightened by
    // curvature refreshes.
    let mut rel = vec![opts.rel_step; k];
    let gradient = |x: &[f64], fx: f64, rel: &[f64]| {
        let h: Vec<f64> = x.iter().zip(rel).map(|(v, r)| r * v.abs().max(1.0)).collect();
        gradient_with_steps(&f, x, fx, &h)
            .ok_or_else(|| Error::OptimFailed("no admissible neighbors for the gradient".into()))
    };
    // Work with the minimization of -f throughout.
    let mut g = DVector::from_vec(gradient(&x, fx, &rel)?).map(|v| -v);
    let mut inv_h = DMatrix::<f64>::identity(k, k);
    let mut scaled = false;
    // Iteration of the last curvature refresh, and how many were spent.
    let mut refreshed_at: Option<usize> = None;
    let mut refreshes = 0usize;
    let mut flat = 0usize;

    for iter in 0..opts.max_iter {
        let gnorm = g.amax();
        trace.push(TraceEntry { iteration: iter, value: fx, grad_norm: gnorm, step: 0.0 });
        if gnorm < opts.tol_grad {
            let grad = g.iter().map(|v| -v).collect();
            return Ok(finish(x, fx, grad, iter, true, trace, evaluations.get()));
        }
        let periodic = iter > 0 && iter % REFRESH_EVERY == 0;
        if (flat >= STALL_ITERS || periodic) && refreshes < MAX_REFRESHES {
            if flat >= STALL_ITERS && refreshed_at.is_some_and(|at| iter - at <= STALL_ITERS + 1) {
                // Fresh curvature did not help: the gradient is at its noise floor.
                return Ok(stalled(x, fx, &g, &inv_h, iter, trace, evaluations.get()));
            }
            if let Some((h, used)) = curvature(&f, &x, fx, opts.rel_step) {
                inv_h = h;
                scaled = true;
                let before = rel.clone();
                for i in 0..k {
                    rel[i] = used[i] / x[i].abs().max(1.0);
                }
                if rel != before {
                    g = DVector::from_vec(gradient(&x, fx, &rel)?).map(|v| -v);
                    if g.amax() < opts.tol_grad {
                        let grad = g.iter().map(|v| -v).collect();
                        return Ok(finish(x, fx, grad, iter, true, trace, evaluations.get()));
                    }
                }
            }
            refreshed_at = Some(iter);
            refreshes += 1;
            flat = 0;
        }
        let mut d = -(&inv_h * &g);
        if d.dot(&g) >= 0.0 {
            inv_h = DMatrix::identity(k, k);
            d = -g.clone();
        }
        let dmax = d.amax();
        if dmax > opts.max_step {
            d *= opts.max_step / dmax;
        }
        let slope = d.dot(&g);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(xi, di)| xi + alpha * di).collect();
            if let Some(ft) = f(&trial) {
                if -ft <= -fx + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if refreshes < MAX_REFRESHES && refreshed_at != Some(iter) {
                flat = STALL_ITERS;
                continue;
            }
            if gnorm < 1e4 * opts.tol_grad {
                return Ok(stalled(x, fx, &g, &inv_h, iter, trace, evaluations.get()));
            }
            return Err(Error::OptimFailed(format!(
                "line search failed at iteration {iter} with gradient norm {gnorm:.3e}"
            )));
        };
        if f_new - fx <= 1e-13 * (1.0 + fx.abs()) {
            flat += 1;
        } else {
            flat = 0;
        }
        let g_new = DVector::from_vec(gradient(&x_new, f_new, &rel)?).map(|v| -v);
        let s = DVector::from_iterator(k, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if !scaled {
                inv_h = DMatrix::identity(k, k) * (sy / yv.norm_squared());
                scaled = true;
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(k, k);
            let left = &eye - rho * &s * yv.transpose();
            let right = &eye - rho * &yv * s.transpose();
            inv_h = &left * &inv_h * &right + rho * &s * s.transpose();
        }
        if let Some(last) = trace.last_mut() {
            last.step = alpha * d.amax();
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    let gnorm = sup_norm(g.as_slice());
    let grad = g.iter().map(|v| -v).collect();
    Ok(finish(x, fx, grad, opts.max_iter, gnorm < opts.tol_grad, trace, evaluations.get()))
}

const REFRESH_EVERY: usize = 100;
const MAX_REFRESHES: usize = 10;
const STALL_ITERS: usize = 4;
/// A stalled search is accepted when the predicted remaining gain is below this,
/// relative to `1 + |f|`.
const STALL_GAIN: f64 = 1e-10;

/// Inverse of the negated finite-difference Hessian, with eigenvalues lifted so
/// that the result is positive definite, and the steps used.
fn curvature<F>(f: &F, x: &[f64], fx: f64, rel_step: f64) -> Option<(DMatrix<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let (hess, used) = fd_hessian_adaptive(f, x, fx, rel_step)?;
    let neg = -hess;
    let sym = (&neg + neg.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !top.is_finite() || top <= 0.0 {
        return None;
    }
    let floor = 1e-8 * top;
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    Some((&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose(), used))
}

fn stalled(
    x: Vec<f64>,
    value: f64,
    g: &DVector<f64>,
    inv_h: &DMatrix<f64>,
    iterations: usize,
    trace: Vec<TraceEntry>,
    evaluations: usize,
) -> Maximum {
    let gain = 0.5 * g.dot(&(inv_h * g)).abs();
    Maximum {
        x,
        value,
        grad: g.iter().map(|v| -v).collect(),
        iterations,
        converged: gain < STALL_GAIN * (1.0 + value.abs()),
        trace,
        evaluations,
    }
}

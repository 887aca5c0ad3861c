//! Iterative MAP estimation and the Laplace approximation for the Durbin
//! model with heterogeneous susceptibility.
//!
//! With `S(beta, gamma) = b + |y - X~ beta|^2 + |beta|^2/g1 + |gamma|^2/g2`
//! the log posterior is
//!
//! ```text
//! l = const - (c/2) log(s2) - S / (2 s2),   c = a + n + p1 + p2 + q1 + 2,
//! ```
//!
//! so the mode in `(beta, gamma)` minimizes `S` and `s2_hat = S / c`. Each
//! block update below solves its conditional problem exactly, so `S` never
//! increases from one sweep to the next.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{PosteriorDraws, Warning};
use crate::linalg;
use crate::model::{susceptibility_diag_x, ParameterState, Problem, Variant};
use crate::rng::substream;

/// How the `(s2, s2)` entry of the Laplace precision is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaPrecision {
    /// `(a + n + p1 + p2 + q1 + 2) / (2 s2_hat)`, the exact negative Hessian
    /// of the log posterior at the mode (scaled by `s2_hat`).
    #[default]
    Exact,
    /// `(a + n + p1 + p2 + q1) / (2 s2_hat)`, as the closed form is usually
    /// printed. Slightly inflates the variance of `s2`.
    Verbatim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurbinOptions {
    /// Relative change of the stacked `(beta, gamma_x)` that ends iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub init: Option<ParameterState>,
    pub sigma_precision: SigmaPrecision,
}

impl Default for DurbinOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, init: None, sigma_precision: SigmaPrecision::Exact }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurbinFit {
    pub beta_hat: DVector<f64>,
    pub gamma_x_hat: DVector<f64>,
    pub sigma2_hat: f64,
    /// Ordered `(s2, beta, gamma_x)`.
    pub laplace_cov: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `S` after each sweep.
    pub objective_trace: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl DurbinFit {
    /// The mode stacked as `(s2, beta, gamma_x)`.
    pub fn mode(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.laplace_cov.nrows());
        v.push(self.sigma2_hat);
        v.extend(self.beta_hat.iter());
        v.extend(self.gamma_x_hat.iter());
        DVector::from_vec(v)
    }
}

fn require_durbin(problem: &Problem) -> Result<()> {
    if problem.variant() != Variant::Durbin {
        return Err(Error::UnsupportedVariant(format!(
            "{} is not fitted by the closed-form iteration",
            problem.variant()
        )));
    }
    Ok(())
}

/// `c` in the power of `s2`.
fn sigma_exponent(problem: &Problem) -> f64 {
    problem.spec().priors.a + (problem.n() + problem.p() + problem.q1() + 2) as f64
}

/// `S(beta, gamma)`.
pub fn penalized_sse(problem: &Problem, beta: &DVector<f64>, gamma_x: &DVector<f64>) -> f64 {
    let pr = &problem.spec().priors;
    let r = problem.y() - problem.xtilde_base(gamma_x) * beta;
    pr.b + r.norm_squared() + beta.norm_squared() / pr.g1 + gamma_x.norm_squared() / pr.g2
}

/// The log posterior up to its additive constant.
pub fn log_posterior(problem: &Problem, sigma2: f64, beta: &DVector<f64>, gamma_x: &DVector<f64>) -> f64 {
    let c = sigma_exponent(problem);
    -0.5 * c * sigma2.ln() - penalized_sse(problem, beta, gamma_x) / (2.0 * sigma2)
}

/// Analytic gradient of [`log_posterior`], ordered `(s2, beta, gamma_x)`.
pub fn log_posterior_gradient(
    problem: &Problem,
    sigma2: f64,
    beta: &DVector<f64>,
    gamma_x: &DVector<f64>,
) -> DVector<f64> {
    let pr = &problem.spec().priors;
    let p1 = problem.design().p1();
    let xt = problem.xtilde_base(gamma_x);
    let r = problem.y() - &xt * beta;
    let d = problem.ax2() * beta.rows(p1, beta.len() - p1);
    let s = penalized_sse(problem, beta, gamma_x);
    let c = sigma_exponent(problem);

    let gb = (xt.tr_mul(&r) - beta / pr.g1) / sigma2;
    let dr = r.component_mul(&d);
    let gg = (problem.design().wx.tr_mul(&dr) - gamma_x / pr.g2) / sigma2;
    let mut out = Vec::with_capacity(1 + beta.len() + gamma_x.len());
    out.push(-0.5 * c / sigma2 + s / (2.0 * sigma2 * sigma2));
    out.extend(gb.iter());
    out.extend(gg.iter());
    DVector::from_vec(out)
}

fn ridge_beta(problem: &Problem, xt: &DMatrix<f64>) -> Result<DVector<f64>> {
    let g1 = problem.spec().priors.g1;
    let mut m = xt.tr_mul(xt);
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0 / g1;
    }
    let chol = Cholesky::new(m).ok_or(Error::RankDeficientStep(3))?;
    Ok(chol.solve(&xt.tr_mul(problem.y())))
}

fn gamma_step(problem: &Problem, beta: &DVector<f64>) -> Result<DVector<f64>> {
    let design = problem.design();
    let (p1, q1) = (design.p1(), design.q1());
    let b1 = beta.rows(0, p1);
    let b2 = beta.rows(p1, beta.len() - p1);
    let d = problem.ax2() * b2;
    let resid0 = problem.y() - &design.x1 * b1 - &d;
    // W_x' D^2 W_x + I/g2 and W_x' D (y - X1 b1 - A X2 b2).
    let dw = DMatrix::from_fn(problem.n(), q1, |i, k| d[i] * design.wx[(i, k)]);
    let mut m = dw.tr_mul(&dw);
    for k in 0..q1 {
        m[(k, k)] += 1.0 / problem.spec().priors.g2;
    }
    let chol = Cholesky::new(m).ok_or(Error::RankDeficientStep(5))?;
    Ok(chol.solve(&dw.tr_mul(&resid0)))
}

/// Runs the alternating ridge updates to convergence, then sets `s2_hat`.
pub fn fit_durbin(problem: &Problem, opts: &DurbinOptions) -> Result<DurbinFit> {
    require_durbin(problem)?;
    let q1 = problem.q1();
    let mut gamma = match &opts.init {
        Some(s) if s.gamma_x.len() == q1 => s.gamma_x.clone(),
        Some(_) => return Err(Error::DimensionMismatch("initial gamma_x has the wrong length".into())),
        None => DVector::zeros(q1),
    };
    let mut beta = match &opts.init {
        Some(s) if s.beta.len() == problem.p() => s.beta.clone(),
        Some(_) => return Err(Error::DimensionMismatch("initial beta has the wrong length".into())),
        None => ridge_beta(problem, &problem.xtilde_base(&gamma))?,
    };

    let mut warnings = Vec::new();
    let mut trace = vec![penalized_sse(problem, &beta, &gamma)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let xt = problem.xtilde_base(&gamma);
        let beta_new = ridge_beta(problem, &xt)?;
        let gamma_new = gamma_step(problem, &beta_new)?;
        if beta_new.iter().chain(gamma_new.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate(iterations));
        }
        let change = (beta_new.iter().zip(beta.iter()))
            .chain(gamma_new.iter().zip(gamma.iter()))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let size = beta_new.norm_squared().sqrt().hypot(gamma_new.norm());
        beta = beta_new;
        gamma = gamma_new;

        let s = penalized_sse(problem, &beta, &gamma);
        let last = *trace.last().unwrap();
        if s > last * (1.0 + 1e-12) {
            log::warn!("Durbin objective decreased at iteration {iterations}");
            warnings.push(Warning::ObjectiveDecreased { iteration: iterations });
        }
        trace.push(s);
        if change <= opts.tol * size {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(Warning::NotConverged { iterations });
    }

    let sigma2 = trace.last().unwrap() / sigma_exponent(problem);
    let laplace_cov = durbin_laplace(problem, &beta, &gamma, sigma2, opts.sigma_precision)?;
    Ok(DurbinFit {
        beta_hat: beta,
        gamma_x_hat: gamma,
        sigma2_hat: sigma2,
        laplace_cov,
        iterations,
        converged,
        objective_trace: trace,
        warnings,
    })
}

/// The bracketed matrix of the closed-form Laplace covariance, ordered
/// `(s2, beta, gamma_x)`. The covariance is `s2_hat` times its inverse, so
/// the negative Hessian of the log posterior is this matrix over `s2_hat`.
pub fn durbin_precision(
    problem: &Problem,
    beta: &DVector<f64>,
    gamma_x: &DVector<f64>,
    sigma2: f64,
    mode: SigmaPrecision,
) -> DMatrix<f64> {
    let design = problem.design();
    let pr = &problem.spec().priors;
    let (n, p1, p, q1) = (problem.n(), design.p1(), problem.p(), problem.q1());
    let b1 = beta.rows(0, p1);
    let b2 = beta.rows(p1, p - p1);
    let xt = problem.xtilde_base(gamma_x);
    let ax2b2 = problem.ax2() * b2;
    let rx = susceptibility_diag_x(&design.wx, gamma_x);

    let k = 1 + p + q1;
    let mut m = DMatrix::zeros(k, k);
    let extra = match mode {
        SigmaPrecision::Exact => 2.0,
        SigmaPrecision::Verbatim => 0.0,
    };
    m[(0, 0)] = (pr.a + (n + p + q1) as f64 + extra) / (2.0 * sigma2);

    let mut bb = xt.tr_mul(&xt);
    for i in 0..p {
        bb[(i, i)] += 1.0 / pr.g1;
    }
    m.view_mut((1, 1), (p, p)).copy_from(&bb);

    let dw = DMatrix::from_fn(n, q1, |i, c| ax2b2[i] * design.wx[(i, c)]);
    let mut gg = dw.tr_mul(&dw);
    for c in 0..q1 {
        gg[(c, c)] += 1.0 / pr.g2;
    }
    m.view_mut((1 + p, 1 + p), (q1, q1)).copy_from(&gg);

    // (beta1, gamma) block: X1' D W_x.
    let top = design.x1.tr_mul(&dw);
    // (beta2, gamma) block: -X2' A' Diag(y - X1 b1 - 2 R_x A X2 b2) W_x,
    // with A X2 precomputed.
    let e = problem.y() - &design.x1 * b1 - 2.0 * rx.component_mul(&ax2b2);
    let ew = DMatrix::from_fn(n, q1, |i, c| e[i] * design.wx[(i, c)]);
    let bottom = -problem.ax2().tr_mul(&ew);
    for c in 0..q1 {
        for r in 0..p1 {
            m[(1 + r, 1 + p + c)] = top[(r, c)];
            m[(1 + p + c, 1 + r)] = top[(r, c)];
        }
        for r in 0..(p - p1) {
            m[(1 + p1 + r, 1 + p + c)] = bottom[(r, c)];
            m[(1 + p + c, 1 + p1 + r)] = bottom[(r, c)];
        }
    }
    m
}

/// `s2_hat * precision^-1`.
pub fn durbin_laplace(
    problem: &Problem,
    beta: &DVector<f64>,
    gamma_x: &DVector<f64>,
    sigma2: f64,
    mode: SigmaPrecision,
) -> Result<DMatrix<f64>> {
    let m = durbin_precision(problem, beta, gamma_x, sigma2, mode);
    let chol = Cholesky::new(m)
        .ok_or_else(|| Error::NotPositiveDefinite("Laplace precision (the fit is not at a local maximum)".into()))?;
    let mut cov = chol.inverse() * sigma2;
    linalg::symmetrize(&mut cov);
    Ok(cov)
}

/// Independent draws from `N(mode, laplace_cov)`; draws with `s2 <= 0` are
/// rejected and redrawn from the same substream.
pub fn sample_durbin(problem: &Problem, fit: &DurbinFit, draws: usize, seed: u64) -> Result<PosteriorDraws> {
    require_durbin(problem)?;
    let root = linalg::covariance_root(&fit.laplace_cov).ok_or(Error::DegenerateCovariance)?;
    let mode = fit.mode();
    let (p, k) = (problem.p(), mode.len());
    if root.nrows() != k {
        return Err(Error::DimensionMismatch("fit does not match the problem".into()));
    }
    if root.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance);
    }
    const MAX_TRIES: usize = 10_000;
    let results: Vec<Result<(ParameterState, usize)>> = (0..draws)
        .into_par_iter()
        .map(|m| {
            let mut rng = substream(seed, m as u64);
            for tries in 0..MAX_TRIES {
                let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let theta = &mode + &root * z;
                if theta[0] > 0.0 {
                    return Ok((
                        ParameterState {
                            beta: theta.rows(1, p).into_owned(),
                            gamma_x: theta.rows(1 + p, k - 1 - p).into_owned(),
                            gamma_eps: DVector::zeros(0),
                            sigma2: theta[0],
                        },
                        tries,
                    ));
                }
            }
            Err(Error::ExcessiveRejection { rejected: MAX_TRIES, proposed: MAX_TRIES })
        })
        .collect();
    let mut out = Vec::with_capacity(draws);
    let mut rejected = 0;
    for r in results {
        let (state, rej) = r?;
        rejected += rej;
        out.push(state);
    }
    let mut warnings = fit.warnings.clone();
    if rejected > 0 {
        log::info!("{rejected} Gaussian draws with non-positive variance were redrawn");
        warnings.push(Warning::Rejections { rejected, proposed: draws + rejected });
    }
    Ok(PosteriorDraws {
        variant: Variant::Durbin,
        names: problem.design().names.clone(),
        p1: problem.design().p1(),
        draws: out,
        proposed: draws + rejected,
        rejected,
        warnings,
    })
}

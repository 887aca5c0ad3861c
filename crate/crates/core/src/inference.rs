//! Laplace-approximate inference for the correlated-error variants.
//!
//! The marginal posterior of `gamma = (gamma_x', gamma_eps')'` is maximized
//! numerically and approximated by `N(mu_gamma, Sigma_gamma)`. Draws then go
//! `gamma -> s2 | gamma -> beta | gamma, s2`, the last two exactly.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::durbin::{self, DurbinFit, DurbinOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    susceptibility_diag_eps, susceptibility_diag_x, AssembledModel, DesignNames, DesignSet, ParameterState, Problem,
    Variant,
};
use crate::optim::{self, BfgsOptions, TraceEntry};
use crate::report::num;
use crate::rng::{substream, Rng};

/// Non-fatal diagnostics attached to fits and draws.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// `-H` at the mode was not positive definite; `lifted` eigenvalues were raised.
    NonPdHessian {
        lifted: usize,
    },
    ObjectiveDecreased {
        iteration: usize,
    },
    NotConverged {
        iterations: usize,
    },
    Rejections {
        rejected: usize,
        proposed: usize,
    },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NonPdHessian { lifted } => {
                write!(f, "Hessian at the mode not negative definite; {lifted} eigenvalue(s) lifted")
            }
            Warning::ObjectiveDecreased { iteration } => write!(f, "objective decreased at iteration {iteration}"),
            Warning::NotConverged { iterations } => write!(f, "no convergence after {iterations} iterations"),
            Warning::Rejections { rejected, proposed } => {
                write!(f, "{rejected} of {proposed} proposals rejected")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub bfgs: BfgsOptions,
    /// Starting point; `gamma = 0` (where `V = I`) when absent.
    pub init: Option<Vec<f64>>,
    /// Relative step for the Hessian at the mode.
    pub hessian_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { bfgs: BfgsOptions::default(), init: None, hessian_step: 1e-5 }
    }
}

/// Gaussian approximation to the marginal posterior of `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPosterior {
    /// `gamma_x` stacked over `gamma_eps`.
    pub mu_gamma: DVector<f64>,
    pub sigma_gamma: DMatrix<f64>,
    pub objective_at_mode: f64,
    pub gradient_at_mode: Vec<f64>,
    pub converged: bool,
    pub optimizer_trace: Vec<TraceEntry>,
    pub warnings: Vec<Warning>,
}

fn require_correlated(problem: &Problem) -> Result<()> {
    if problem.variant() == Variant::Durbin {
        return Err(Error::UnsupportedVariant("the Durbin variant is fitted by the closed-form iteration".into()));
    }
    Ok(())
}

/// Inadmissible `gamma` (singular `I - R_eps A`, indefinite `V`) maps to `None`.
fn objective(problem: &Problem) -> impl Fn(&[f64]) -> Option<f64> + '_ {
    move |theta: &[f64]| {
        let (gx, ge) = problem.split_gamma(theta);
        problem.marginal_log_posterior(&gx, &ge).ok()
    }
}

/// Maximizes the log marginal posterior of `gamma` and forms its Laplace
/// approximation from a finite-difference Hessian.
pub fn optimize_marginal(problem: &Problem, opts: &OptimizeOptions) -> Result<GammaPosterior> {
    require_correlated(problem)?;
    let k = problem.q1() + problem.q2();
    let x0 = opts.init.clone().unwrap_or_else(|| vec![0.0; k]);
    if x0.len() != k {
        return Err(Error::DimensionMismatch(format!("initial gamma has length {}, expected {k}", x0.len())));
    }
    let f = objective(problem);
    let max = optim::maximize(&f, &x0, &opts.bfgs)?;
    let mut warnings = Vec::new();
    if !max.converged {
        warnings.push(Warning::NotConverged { iterations: max.iterations });
    }
    let (hess, _) = optim::fd_hessian_adaptive(&f, &max.x, max.value, opts.hessian_step)
        .ok_or_else(|| Error::OptimFailed("mode lies on the admissible boundary".into()))?;
    let (sigma_gamma, lifted) = laplace_covariance(-hess)?;
    if lifted > 0 {
        log::warn!("lifted {lifted} non-positive curvature direction(s) at the mode");
        warnings.push(Warning::NonPdHessian { lifted });
    }
    Ok(GammaPosterior {
        mu_gamma: DVector::from_vec(max.x),
        sigma_gamma,
        objective_at_mode: max.value,
        gradient_at_mode: max.grad,
        converged: max.converged,
        optimizer_trace: max.trace,
        warnings,
    })
}

/// `(-H)^-1`, lifting eigenvalues of `-H` below `1e-8` times the largest.
fn laplace_covariance(mut neg_hess: DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if neg_hess.is_empty() {
        return Ok((neg_hess, 0));
    }
    linalg::symmetrize(&mut neg_hess);
    let eig = SymmetricEigen::new(neg_hess);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::OptimFailed("no direction of negative curvature at the mode".into()));
    }
    let floor = 1e-8 * top;
    let mut lifted = 0;
    let inv = eig.eigenvalues.map(|v| {
        if v < floor {
            lifted += 1;
            1.0 / floor
        } else {
            1.0 / v
        }
    });
    let mut cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    linalg::symmetrize(&mut cov);
    Ok((cov, lifted))
}

/// Posterior draws with enough context to label and summarize them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub variant: Variant,
    pub names: DesignNames,
    pub p1: usize,
    pub draws: Vec<ParameterState>,
    /// Proposals made, including rejected ones.
    pub proposed: usize,
    pub rejected: usize,
    pub warnings: Vec<Warning>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// `(name, block)` for each scalar parameter, in reporting order:
    /// `gamma_x`, `gamma_eps`, `beta1`, `beta2`, `sigma2`.
    pub fn parameters(&self) -> Vec<(String, Block)> {
        let n = &self.names;
        let mut out = Vec::new();
        out.extend(n.wx.iter().map(|s| (s.clone(), Block::GammaX)));
        if self.variant.has_eps() {
            out.extend(n.weps.iter().map(|s| (s.clone(), Block::GammaEps)));
        }
        out.extend(n.x1.iter().map(|s| (s.clone(), Block::Beta1)));
        out.extend(n.x2.iter().map(|s| (s.clone(), Block::Beta2)));
        out.push(("sigma2".to_string(), Block::Sigma2));
        out
    }

    /// One draw flattened in [`Self::parameters`] order.
    pub fn flatten(&self, d: &ParameterState) -> Vec<f64> {
        let mut v: Vec<f64> = d.gamma_x.iter().copied().collect();
        if self.variant.has_eps() {
            v.extend(d.gamma_eps.iter());
        }
        v.extend(d.beta.iter());
        v.push(d.sigma2);
        v
    }

    /// Draws as a `M x k` matrix in [`Self::parameters`] order.
    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.parameters().len();
        let mut m = DMatrix::zeros(self.draws.len(), k);
        for (i, d) in self.draws.iter().enumerate() {
            for (j, v) in self.flatten(d).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Draws `s2 ~ IG(a*/2, b*/2)` and `beta ~ N(mu_beta, s2 Sigma_beta)`.
pub fn sample_conditional(model: &AssembledModel, rng: &mut Rng) -> (f64, DVector<f64>) {
    let gamma = Gamma::new(0.5 * model.astar, 2.0 / model.bstar).expect("a* and b* are positive");
    let sigma2 = 1.0 / gamma.sample(rng);
    let p = model.mu_beta.len();
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    // With L L' = Sigma_beta^-1, L'^-1 z has covariance Sigma_beta.
    let w = model
        .precision_chol()
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    let beta = &model.mu_beta + w * sigma2.sqrt();
    (sigma2, beta)
}

/// Rejection-rate ceiling before the approximation is declared unusable.
pub const MAX_REJECTION_RATE: f64 = 0.10;

/// Draws `M` samples. Draw `m` uses its own substream of `seed`, so output
/// does not depend on the number of worker threads.
pub fn sample_posterior(problem: &Problem, gp: &GammaPosterior, draws: usize, seed: u64) -> Result<PosteriorDraws> {
    require_correlated(problem)?;
    let k = gp.mu_gamma.len();
    if k != problem.q1() + problem.q2() || gp.sigma_gamma.shape() != (k, k) {
        return Err(Error::DimensionMismatch("gamma posterior does not match the problem".into()));
    }
    let root = linalg::covariance_root(&gp.sigma_gamma).ok_or(Error::DegenerateCovariance)?;
    // Each draw gives up after this many consecutive inadmissible proposals.
    let per_draw_cap = 1000;
    let results: Vec<Result<(ParameterState, usize)>> = (0..draws)
        .into_par_iter()
        .map(|m| {
            let mut rng = substream(seed, m as u64);
            let mut rejected = 0;
            loop {
                let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let theta = &gp.mu_gamma + &root * z;
                let (gx, ge) = problem.split_gamma(theta.as_slice());
                match problem.assemble(&gx, &ge) {
                    Ok(model) => {
                        let (sigma2, beta) = sample_conditional(&model, &mut rng);
                        let state = ParameterState { beta, gamma_x: gx, gamma_eps: ge, sigma2 };
                        return Ok((state, rejected));
                    }
                    Err(Error::SingularInfluence | Error::NotPositiveDefinite(_)) => {
                        rejected += 1;
                        if rejected >= per_draw_cap {
                            return Err(Error::ExcessiveRejection { rejected, proposed: rejected });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut out = Vec::with_capacity(draws);
    let mut rejected = 0;
    for r in results {
        let (state, rej) = r?;
        rejected += rej;
        out.push(state);
    }
    let proposed = draws + rejected;
    if rejected as f64 > MAX_REJECTION_RATE * proposed as f64 {
        return Err(Error::ExcessiveRejection { rejected, proposed });
    }
    let mut warnings = gp.warnings.clone();
    if rejected > 0 {
        warnings.push(Warning::Rejections { rejected, proposed });
    }
    Ok(PosteriorDraws {
        variant: problem.variant(),
        names: problem.design().names.clone(),
        p1: problem.design().p1(),
        draws: out,
        proposed,
        rejected,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    GammaX,
    GammaEps,
    Beta1,
    Beta2,
    Sigma2,
}

impl Block {
    pub fn as_str(self) -> &'static str {
        match self {
            Block::GammaX => "gamma_x",
            Block::GammaEps => "gamma_eps",
            Block::Beta1 => "beta1",
            Block::Beta2 => "beta2",
            Block::Sigma2 => "sigma2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub block: Block,
    pub mean: f64,
    /// Sample standard deviation of the draws.
    pub se: f64,
    pub lb95: f64,
    pub ub95: f64,
    pub excludes_zero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub parameters: Vec<ParameterSummary>,
    /// `1 + W_x * mean(gamma_x)` per actor.
    pub susceptibility_x: DVector<f64>,
    /// `W_eps * mean(gamma_eps)` per actor (empty for the Durbin variant).
    pub susceptibility_eps: DVector<f64>,
}

impl Summary {
    pub fn get(&self, block: Block, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.block == block && p.name == name)
    }

    /// Posterior means stacked as `gamma_x`, `gamma_eps`.
    pub fn gamma_means(&self) -> (DVector<f64>, DVector<f64>) {
        let pick = |b: Block| {
            DVector::from_iterator_generic(
                nalgebra::Dyn(self.parameters.iter().filter(|p| p.block == b).count()),
                nalgebra::Const::<1>,
                self.parameters.iter().filter(|p| p.block == b).map(|p| p.mean),
            )
        };
        (pick(Block::GammaX), pick(Block::GammaEps))
    }
}

/// Minimum number of draws accepted by [`summarize`].
pub const MIN_SUMMARY_DRAWS: usize = 100;

/// Per-parameter summaries: mean, draw SD, empirical 2.5% and 97.5% points.
pub fn summarize(draws: &PosteriorDraws, design: &DesignSet) -> Result<Summary> {
    if draws.len() < MIN_SUMMARY_DRAWS {
        return Err(Error::InsufficientDraws { needed: MIN_SUMMARY_DRAWS, got: draws.len() });
    }
    let m = draws.matrix();
    let count = m.nrows() as f64;
    let parameters = draws
        .parameters()
        .into_iter()
        .enumerate()
        .map(|(j, (name, block))| {
            let col = m.column(j);
            let mean = col.sum() / count;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
            let mut sorted: Vec<f64> = col.iter().copied().collect();
            sorted.sort_by(|a, b| a.total_cmp(b));
            // Clamp so lb <= mean <= ub survives rounding with constant draws.
            let lb95 = linalg::quantile_sorted(&sorted, 0.025).min(mean);
            let ub95 = linalg::quantile_sorted(&sorted, 0.975).max(mean);
            ParameterSummary { name, block, mean, se: var.sqrt(), lb95, ub95, excludes_zero: lb95 > 0.0 || ub95 < 0.0 }
        })
        .collect::<Vec<_>>();
    let mut summary =
        Summary { parameters, susceptibility_x: DVector::zeros(0), susceptibility_eps: DVector::zeros(0) };
    let (gx, ge) = summary.gamma_means();
    summary.susceptibility_x = susceptibility_diag_x(&design.wx, &gx);
    if draws.variant.has_eps() {
        summary.susceptibility_eps = susceptibility_diag_eps(&design.weps, &ge);
    }
    Ok(summary)
}

/// `parameter,block,mean,se,lb95,ub95,excludes_zero`.
pub fn write_summary_csv<W: Write>(out: W, summary: &Summary) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "block", "mean", "se", "lb95", "ub95", "excludes_zero"])?;
    for p in &summary.parameters {
        w.write_record([
            p.name.clone(),
            p.block.as_str().to_string(),
            num(p.mean),
            num(p.se),
            num(p.lb95),
            num(p.ub95),
            p.excludes_zero.to_string(),
        ])?;
    }
    w.flush()
}

/// `actor,susceptibility_x,susceptibility_eps`.
pub fn write_susceptibility_csv<W: Write>(out: W, labels: &[String], summary: &Summary) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["actor", "susceptibility_x", "susceptibility_eps"])?;
    for (i, label) in labels.iter().enumerate() {
        let eps = summary.susceptibility_eps.get(i).map(|v| num(*v)).unwrap_or_default();
        w.write_record([label.clone(), num(summary.susceptibility_x[i]), eps])?;
    }
    w.flush()
}

/// One row per draw with columns `block:name`.
pub fn write_draws_csv<W: Write>(out: W, draws: &PosteriorDraws) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = draws.parameters().iter().map(|(n, b)| format!("{}:{n}", b.as_str())).collect();
    w.write_record(&header)?;
    for d in &draws.draws {
        w.write_record(draws.flatten(d).into_iter().map(num))?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub optimize: OptimizeOptions,
    pub durbin: DurbinOptions,
    pub draws: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { optimize: OptimizeOptions::default(), durbin: DurbinOptions::default(), draws: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitDetail {
    Durbin(DurbinFit),
    Marginal(GammaPosterior),
}

impl FitDetail {
    pub fn converged(&self) -> bool {
        match self {
            FitDetail::Durbin(f) => f.converged,
            FitDetail::Marginal(g) => g.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub detail: FitDetail,
    pub draws: PosteriorDraws,
    pub summary: Summary,
}

/// Fits any variant: the closed-form iteration for Durbin problems, the
/// marginal-posterior route otherwise.
pub fn fit(problem: &Problem, opts: &FitOptions, seed: u64) -> Result<Fit> {
    let (detail, draws) = if problem.variant() == Variant::Durbin {
        let f = durbin::fit_durbin(problem, &opts.durbin)?;
        let d = durbin::sample_durbin(problem, &f, opts.draws, seed)?;
        (FitDetail::Durbin(f), d)
    } else {
        let gp = optimize_marginal(problem, &opts.optimize)?;
        let d = sample_posterior(problem, &gp, opts.draws, seed)?;
        (FitDetail::Marginal(gp), d)
    };
    let summary = summarize(&draws, problem.design())?;
    Ok(Fit { detail, draws, summary })
}

//! Synthetic data at known parameters and replicated coverage studies.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{standardize, LocalFeatures, Network};
use crate::inference::{self, Block, FitOptions, Summary};
use crate::linalg;
use crate::model::{
    susceptibility_diag_eps, susceptibility_diag_x, DesignNames, DesignSet, ModelSpec, ParameterState, Priors, Variant,
    RCOND_MIN,
};
use crate::report::num;
use crate::rng::{child_seed, substream, Rng};

/// Draws `y` from the chosen variant at `params`, with `eps ~ N(0, s2 I)`.
/// The egocentric variant generates like the full moving-average model.
pub fn simulate_response(
    variant: Variant,
    net: &Network,
    design: &DesignSet,
    params: &ParameterState,
    seed: u64,
) -> Result<DVector<f64>> {
    let n = net.n();
    if design.n() != n || params.beta.len() != design.p1() + design.p2() || params.gamma_x.len() != design.q1() {
        return Err(Error::DimensionMismatch("parameters do not match the design".into()));
    }
    if variant.has_eps() && params.gamma_eps.len() != design.q2() {
        return Err(Error::DimensionMismatch("gamma_eps does not match W_eps".into()));
    }
    if !(params.sigma2 >= 0.0) {
        return Err(Error::InvalidConfig("sigma2 must be non-negative".into()));
    }
    let a = net.adjacency();
    let p1 = design.p1();
    let rx = susceptibility_diag_x(&design.wx, &params.gamma_x);
    let ax2b2 = a * (&design.x2 * params.beta2(p1));
    let mean = &design.x1 * params.beta1(p1) + rx.component_mul(&ax2b2);

    let mut rng = substream(seed, 0);
    let sd = params.sigma2.sqrt();
    let eps = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    });
    if !variant.has_eps() {
        return Ok(mean + eps);
    }
    let reps = susceptibility_diag_eps(&design.weps, &params.gamma_eps);
    let ra = DMatrix::from_fn(n, n, |i, j| reps[i] * a[(i, j)]);
    let solve = |rhs: DVector<f64>| -> Result<DVector<f64>> {
        let b = DMatrix::identity(n, n) - &ra;
        let lu = b.clone().lu();
        if linalg::lu_rcond(&b, &lu) < RCOND_MIN {
            return Err(Error::SingularInfluence);
        }
        lu.solve(&rhs).ok_or(Error::SingularInfluence)
    };
    match variant {
        Variant::Durbin => unreachable!(),
        Variant::Effects => solve(mean + eps),
        Variant::Disturbances => Ok(mean + solve(eps)?),
        Variant::MovingAverage | Variant::EgoMovingAverage => Ok(mean + &eps + &ra * &eps),
    }
}

/// An undirected Erdos–Renyi graph with the given expected degree, redrawn
/// until no actor is isolated.
pub fn erdos_renyi(n: usize, mean_degree: f64, seed: u64) -> Result<Network> {
    if n < 2 || !(mean_degree > 0.0) || mean_degree > (n - 1) as f64 {
        return Err(Error::InvalidConfig(format!("no Erdos-Renyi graph with n = {n}, mean degree {mean_degree}")));
    }
    let p = mean_degree / (n - 1) as f64;
    for attempt in 0..10_000u64 {
        let mut rng = substream(seed, attempt);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
            }
        }
        if (0..n).all(|i| a.row(i).iter().any(|&v| v != 0.0)) {
            return Network::new(a, false);
        }
    }
    Err(Error::InvalidConfig("could not draw a graph without isolated actors".into()))
}

/// Directed friendship nominations inside classrooms: actors are split into
/// `classes` blocks and each names `1 + Poisson(mean_out - 1)` classmates.
pub fn classroom_network(n: usize, classes: usize, mean_out: f64, seed: u64) -> Result<Network> {
    if classes == 0 || n / classes < 3 || !(mean_out >= 1.0) {
        return Err(Error::InvalidConfig("classrooms need at least three students each".into()));
    }
    let mut rng = substream(seed, 0);
    let extra = Poisson::new(mean_out - 1.0).ok();
    let block = |i: usize| i * classes / n;
    let members: Vec<Vec<usize>> = (0..classes).map(|c| (0..n).filter(|&i| block(i) == c).collect()).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mates: Vec<usize> = members[block(i)].iter().copied().filter(|&j| j != i).collect();
        let k = 1 + extra.as_ref().map_or(0, |d| d.sample(&mut rng) as usize);
        for j in rand::seq::index::sample(&mut rng, mates.len(), k.min(mates.len())) {
            a[(i, mates[j])] = 1.0;
        }
    }
    Network::new(a, true)
}

/// Covariate recipe of the replication study: a Bernoulli(0.5) and a
/// standard-normal covariate form `X2`, `X1 = (1 | X2)`,
/// `W_x = (normal, inv_size, betweenness, lcc, eigencentrality)` and
/// `W_eps = (1 | W_x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateRecipe {
    /// Standardize the four network features (the normal column already is).
    pub standardize: bool,
}

impl Default for CovariateRecipe {
    fn default() -> Self {
        Self { standardize: true }
    }
}

pub const FEATURE_NAMES: [&str; 4] = ["inv_size", "betweenness", "lcc", "eigencentrality"];

/// Network features in recipe order, standardized if requested.
pub fn recipe_features(net: &Network, recipe: &CovariateRecipe) -> Result<DMatrix<f64>> {
    let f = LocalFeatures::compute(net)?;
    let cols = [f.inv_size_column()?, f.betweenness.clone(), f.lcc.clone(), f.eigencentrality.clone()];
    let m = DMatrix::from_fn(net.n(), 4, |i, j| cols[j][i]);
    if recipe.standardize {
        Ok(standardize(&m, &[false; 4])?.0)
    } else {
        Ok(m)
    }
}

/// Draws the covariates for one data set. `features` comes from
/// [`recipe_features`] so it can be shared across replicates.
pub fn simulate_covariates_with(features: &DMatrix<f64>, seed: u64) -> Result<DesignSet> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::TooSmall(n));
    }
    let mut rng = substream(seed, 0);
    let coin = Bernoulli::new(0.5).unwrap();
    let binary: Vec<f64> = (0..n).map(|_| if coin.sample(&mut rng) { 1.0 } else { 0.0 }).collect();
    let normal: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x2 = DMatrix::from_fn(n, 2, |i, j| if j == 0 { binary[i] } else { normal[i] });
    let x1 = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { x2[(i, j - 1)] });
    let wx = DMatrix::from_fn(n, 5, |i, j| if j == 0 { normal[i] } else { features[(i, j - 1)] });
    let weps = DMatrix::from_fn(n, 6, |i, j| if j == 0 { 1.0 } else { wx[(i, j - 1)] });
    let s = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut wx_names = s(&["normal"]);
    wx_names.extend(s(&FEATURE_NAMES));
    let mut weps_names = s(&["intercept"]);
    weps_names.extend(wx_names.iter().cloned());
    let names = DesignNames {
        x1: s(&["intercept", "binary", "normal"]),
        x2: s(&["binary", "normal"]),
        wx: wx_names,
        weps: weps_names,
    };
    DesignSet::with_names(x1, x2, wx, weps, names)
}

pub fn simulate_covariates(net: &Network, recipe: &CovariateRecipe, seed: u64) -> Result<DesignSet> {
    simulate_covariates_with(&recipe_features(net, recipe)?, seed)
}

/// Classroom-survey shaped covariates: `X1 = (1, two Likert items)` with no
/// `X2` or `W_x`, and `W_eps = (1, three Likert items, inverse network size)`.
/// Likert items are uniform on `1..=4`.
pub fn classroom_design(net: &Network, seed: u64) -> Result<DesignSet> {
    let n = net.n();
    let inv = LocalFeatures::compute(net)?.inv_size_column()?;
    let mut rng = substream(seed, 0);
    let mut likert = || f64::from(rng.random_range(1u8..=4));
    let x1 = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { likert() });
    let weps = DMatrix::from_fn(n, 5, |i, j| match j {
        0 => 1.0,
        4 => inv[i],
        _ => likert(),
    });
    let s = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let names = DesignNames {
        x1: s(&["intercept", "importance", "subject"]),
        x2: Vec::new(),
        wx: Vec::new(),
        weps: s(&["intercept", "classmates", "socialize", "friends", "inv_size"]),
    };
    DesignSet::with_names(x1, DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), weps, names)
}

/// Generating values for [`classroom_design`], taken from a fitted
/// moving-average model of classroom misbehavior.
pub fn classroom_truth() -> ParameterState {
    ParameterState {
        beta: DVector::from_vec(vec![3.04, 0.03, -0.29]),
        gamma_x: DVector::zeros(0),
        gamma_eps: DVector::from_vec(vec![0.61, 0.03, -0.16, 0.01, 0.12]),
        sigma2: 1.27 * 1.27,
    }
}

/// The replication study's generating values: every `gamma` entry 0.1,
/// `beta1` entries 2, `beta2` entries 0.5 and `s2 = 0.5`.
pub fn reference_truth() -> ParameterState {
    ParameterState {
        beta: DVector::from_vec(vec![2.0, 2.0, 2.0, 0.5, 0.5]),
        gamma_x: DVector::from_element(5, 0.1),
        gamma_eps: DVector::from_element(6, 0.1),
        sigma2: 0.5,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSource {
    Fixed(Network),
    ErdosRenyi { n: usize, mean_degree: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub replicates: usize,
    pub truth: ParameterState,
    pub variant: Variant,
    pub network: NetworkSource,
    pub recipe: CovariateRecipe,
    pub priors: Priors,
    pub fit: FitOptions,
    pub seed: u64,
}

impl StudyConfig {
    /// The replication study: disturbances model, `n = 122` Erdos–Renyi
    /// graph with mean degree 6, priors `g = n`, `a = 2.1`, `b = 1`.
    pub fn reference(replicates: usize, draws: usize, seed: u64) -> Self {
        Self {
            replicates,
            truth: reference_truth(),
            variant: Variant::Disturbances,
            network: NetworkSource::ErdosRenyi { n: 122, mean_degree: 6.0 },
            recipe: CovariateRecipe::default(),
            priors: Priors::uniform_scale(122.0, 2.1, 1.0),
            fit: FitOptions { draws, ..Default::default() },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.truth.sigma2 > 0.0) {
            return Err(Error::InvalidConfig("generating sigma2 must be positive".into()));
        }
        self.priors.validate()
    }

    pub fn build_network(&self) -> Result<Network> {
        match &self.network {
            NetworkSource::Fixed(net) => Ok(net.clone()),
            NetworkSource::ErdosRenyi { n, mean_degree } => {
                erdos_renyi(*n, *mean_degree, child_seed(self.seed, u64::MAX))
            }
        }
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub summary: Summary,
    pub converged: bool,
    /// Median over actors of `(W_eps g_hat) / (W_eps g)`; NaN without `W_eps`.
    pub ratio_eps: f64,
    /// Median over actors of `(W_x g_hat) / (W_x g)`; NaN without `W_x`.
    pub ratio_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    /// `(name, block, generating value)` in reporting order.
    pub parameters: Vec<(String, Block, f64)>,
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<(usize, Error)>,
}

impl StudyReport {
    /// Fraction of successful replicates whose interval covers the truth.
    pub fn coverage(&self) -> Vec<f64> {
        let k = self.results.len() as f64;
        self.parameters
            .iter()
            .map(|(name, block, truth)| {
                let hits = self
                    .results
                    .iter()
                    .filter(|r| r.summary.get(*block, name).is_some_and(|p| p.lb95 <= *truth && *truth <= p.ub95))
                    .count();
                hits as f64 / k
            })
            .collect()
    }

    /// Median over replicates of the per-replicate median ratios.
    pub fn median_ratios(&self) -> (f64, f64) {
        let med = |mut v: Vec<f64>| {
            v.retain(|x| x.is_finite());
            if v.is_empty() {
                return f64::NAN;
            }
            v.sort_by(|a, b| a.total_cmp(b));
            linalg::quantile_sorted(&v, 0.5)
        };
        (med(self.results.iter().map(|r| r.ratio_eps).collect()), med(self.results.iter().map(|r| r.ratio_x).collect()))
    }

    /// `parameter,coverage,replicates`, with parameters written `block:name`.
    pub fn write_coverage_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "coverage", "replicates"])?;
        for ((name, block, _), c) in self.parameters.iter().zip(self.coverage()) {
            w.write_record([format!("{}:{name}", block.as_str()), num(c), self.results.len().to_string()])?;
        }
        w.flush()
    }

    /// `replicate,ratio_eps,ratio_x`.
    pub fn write_ratios_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "ratio_eps", "ratio_x"])?;
        for r in &self.results {
            w.write_record([r.replicate.to_string(), num(r.ratio_eps), num(r.ratio_x)])?;
        }
        w.flush()
    }

    /// One row per replicate and parameter.
    pub fn write_replicates_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "parameter", "block", "truth", "mean", "lb95", "ub95", "covered", "converged"])?;
        for r in &self.results {
            for (name, block, truth) in &self.parameters {
                if let Some(p) = r.summary.get(*block, name) {
                    w.write_record([
                        r.replicate.to_string(),
                        name.clone(),
                        block.as_str().to_string(),
                        num(*truth),
                        num(p.mean),
                        num(p.lb95),
                        num(p.ub95),
                        (p.lb95 <= *truth && *truth <= p.ub95).to_string(),
                        r.converged.to_string(),
                    ])?;
                }
            }
        }
        w.flush()
    }
}

fn median_ratio(w: &DMatrix<f64>, est: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    if w.ncols() == 0 {
        return f64::NAN;
    }
    let num = w * est;
    let den = w * truth;
    let mut r: Vec<f64> = num.iter().zip(den.iter()).map(|(a, b)| a / b).filter(|v| v.is_finite()).collect();
    if r.is_empty() {
        return f64::NAN;
    }
    r.sort_by(|a, b| a.total_cmp(b));
    linalg::quantile_sorted(&r, 0.5)
}

/// Replicates allowed to fail before the study is abandoned.
pub const MAX_FAILURE_RATE: f64 = 0.05;

fn run_replicate(
    cfg: &StudyConfig,
    net: &Network,
    features: &DMatrix<f64>,
    spec: ModelSpec,
    replicate: usize,
) -> Result<ReplicateResult> {
    let seed = child_seed(cfg.seed, replicate as u64);
    let mut design = simulate_covariates_with(features, child_seed(seed, 0))?;
    if !cfg.variant.has_eps() {
        design = design.without_eps();
    }
    let y = simulate_response(cfg.variant, net, &design, &cfg.truth, child_seed(seed, 1))?;
    let problem = crate::model::Problem::new(net, &design, &y, spec)?;
    let fit = inference::fit(&problem, &cfg.fit, child_seed(seed, 2))?;
    let (gx, ge) = fit.summary.gamma_means();
    let ratio_eps =
        if cfg.variant.has_eps() { median_ratio(&design.weps, &ge, &cfg.truth.gamma_eps) } else { f64::NAN };
    let ratio_x = median_ratio(&design.wx, &gx, &cfg.truth.gamma_x);
    Ok(ReplicateResult { replicate, converged: fit.detail.converged(), summary: fit.summary, ratio_eps, ratio_x })
}

/// Simulates and refits `cfg.replicates` data sets on one network. Fails
/// with [`Error::StudyAborted`] when more than 5% of replicates fail.
pub fn coverage_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let net = cfg.build_network()?;
    let features = recipe_features(&net, &cfg.recipe)?;
    let spec = ModelSpec::new(cfg.variant, cfg.priors)?;

    let outcomes: Vec<Result<ReplicateResult>> =
        (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, &net, &features, spec, r)).collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(res) => results.push(res),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 || results.is_empty() {
        return Err(Error::StudyAborted { failed: failures.len(), total: cfg.replicates });
    }

    let first = &results[0].summary;
    let t = &cfg.truth;
    let parameters = first
        .parameters
        .iter()
        .map(|p| {
            let idx = first.parameters.iter().filter(|q| q.block == p.block).position(|q| q.name == p.name).unwrap();
            let truth = match p.block {
                Block::GammaX => t.gamma_x[idx],
                Block::GammaEps => t.gamma_eps[idx],
                Block::Beta1 => t.beta[idx],
                Block::Beta2 => t.beta[first.parameters.iter().filter(|q| q.block == Block::Beta1).count() + idx],
                Block::Sigma2 => t.sigma2,
            };
            (p.name.clone(), p.block, truth)
        })
        .collect();
    Ok(StudyReport { parameters, results, failures })
}

/// Convenience: one seeded standard-normal vector.
pub fn normal_vector(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;

    fn small_design(net: &Network, seed: u64) -> DesignSet {
        let n = net.n();
        let mut rng = substream(seed, 9);
        let x1 = DMatrix::from_fn(n, 1, |_, _| 1.0);
        let x2 = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let wx = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let weps = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { 0.1 * i as f64 });
        DesignSet::new(x1, x2, wx, weps).unwrap()
    }

    fn params() -> ParameterState {
        ParameterState {
            beta: DVector::from_vec(vec![1.0, 0.5]),
            gamma_x: DVector::from_element(1, 0.3),
            gamma_eps: DVector::from_vec(vec![0.2, 0.1]),
            sigma2: 0.7,
        }
    }

    #[test]
    fn noiseless_response_is_the_mean() {
        let net = fixtures::cycle(6);
        let design = small_design(&net, 1);
        let mut p = params();
        p.sigma2 = 0.0;
        let rx = susceptibility_diag_x(&design.wx, &p.gamma_x);
        let mean = &design.x1 * p.beta1(1) + rx.component_mul(&(net.adjacency() * &design.x2 * p.beta2(1)));
        for v in [Variant::Disturbances, Variant::MovingAverage, Variant::Durbin] {
            assert_eq!(simulate_response(v, &net, &design, &p, 3).unwrap(), mean);
        }
        // Effects filters the mean through (I - R A)^-1.
        let y = simulate_response(Variant::Effects, &net, &design, &p, 3).unwrap();
        let reps = susceptibility_diag_eps(&design.weps, &p.gamma_eps);
        let b = DMatrix::identity(6, 6) - DMatrix::from_diagonal(&reps) * net.adjacency();
        assert!((b * y - mean).amax() < 1e-12);
    }

    #[test]
    fn variants_coincide_without_influence() {
        let net = fixtures::cycle(6);
        let design = small_design(&net, 2);
        let mut p = params();
        p.gamma_x.fill(0.0);
        p.gamma_eps.fill(0.0);
        let base = simulate_response(Variant::Durbin, &net, &design, &p, 5).unwrap();
        for v in [Variant::Effects, Variant::Disturbances, Variant::MovingAverage] {
            let y = simulate_response(v, &net, &design, &p, 5).unwrap();
            assert!((y - &base).amax() < 1e-12);
        }
    }

    #[test]
    fn erdos_renyi_has_no_isolates_and_matches_density() {
        let net = erdos_renyi(122, 6.0, 1).unwrap();
        assert!(!net.is_directed());
        assert!(net.degree().iter().all(|&d| d > 0.0));
        let mean = net.degree().iter().sum::<f64>() / 122.0;
        assert!((mean - 6.0).abs() < 1.0, "{mean}");
        assert_eq!(net, erdos_renyi(122, 6.0, 1).unwrap());
    }

    #[test]
    fn classroom_network_stays_in_blocks() {
        let net = classroom_network(60, 4, 3.0, 2).unwrap();
        assert!(net.is_directed());
        for i in 0..60 {
            assert!(!net.out_neighbors(i).is_empty());
            assert!(net.out_neighbors(i).iter().all(|&j| j * 4 / 60 == i * 4 / 60));
        }
    }

    #[test]
    fn recipe_structure() {
        let net = erdos_renyi(40, 5.0, 3).unwrap();
        let d = simulate_covariates(&net, &CovariateRecipe::default(), 4).unwrap();
        assert_eq!((d.p1(), d.p2(), d.q1(), d.q2()), (3, 2, 5, 6));
        assert!(d.x1.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.x1.columns(1, 2), d.x2);
        assert!(d.x2.column(0).iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(d.wx.column(0), d.x2.column(1));
        assert!(d.weps.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.weps.columns(1, 5), d.wx);
        assert_eq!(d.names.wx, ["normal", "inv_size", "betweenness", "lcc", "eigencentrality"]);
        // Feature columns come from the graph module, standardized.
        let f = LocalFeatures::compute(&net).unwrap();
        let (raw, _) = standardize(&DMatrix::from_column_slice(40, 1, &f.betweenness), &[false]).unwrap();
        assert!((d.wx.column(2) - raw.column(0)).amax() < 1e-12);
        assert_eq!(d, simulate_covariates(&net, &CovariateRecipe::default(), 4).unwrap());
    }

    #[test]
    fn disturbance_covariance_matches_closed_form() {
        let net = fixtures::cycle(6);
        let n = 6;
        let design = small_design(&net, 6);
        let mut p = params();
        p.beta.fill(0.0);
        let reps = susceptibility_diag_eps(&design.weps, &p.gamma_eps);
        let b = DMatrix::identity(n, n) - DMatrix::from_diagonal(&reps) * net.adjacency();
        let binv = b.try_inverse().unwrap();
        let exact = &binv * binv.transpose() * p.sigma2;
        let m = 20_000;
        let mut acc = DMatrix::zeros(n, n);
        let mut sq = DMatrix::zeros(n, n);
        for s in 0..m {
            let y = simulate_response(Variant::Disturbances, &net, &design, &p, s).unwrap();
            let outer = &y * y.transpose();
            sq += outer.map(|v| v * v);
            acc += outer;
        }
        let mean = &acc / m as f64;
        for i in 0..n {
            for j in 0..n {
                let var = sq[(i, j)] / m as f64 - mean[(i, j)].powi(2);
                let se = (var / m as f64).sqrt();
                assert!((mean[(i, j)] - exact[(i, j)]).abs() < 4.0 * se + 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn tiny_study_runs() {
        let mut cfg = StudyConfig::reference(2, 100, 5);
        cfg.network = NetworkSource::ErdosRenyi { n: 40, mean_degree: 5.0 };
        cfg.priors = Priors::uniform_scale(40.0, 2.1, 1.0);
        let report = coverage_study(&cfg).unwrap();
        assert_eq!(report.parameters.len(), 17);
        assert_eq!(report.results.len() + report.failures.len(), 2);
        let truths: Vec<f64> = report.parameters.iter().map(|p| p.2).collect();
        assert_eq!(truths[..11], [0.1; 11]);
        assert_eq!(truths[11..], [2.0, 2.0, 2.0, 0.5, 0.5, 0.5]);
        let mut buf = Vec::new();
        report.write_coverage_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 18);
    }
}

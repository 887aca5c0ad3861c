//! Egocentric samples under the moving-average model.
//!
//! Actors split into sampled egos, their non-sampled alters, and everyone
//! else. Only ego rows of the design and response are used, plus `X2` for
//! the alters; nothing about the other actors is ever read.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::inference::{self, Block, FitOptions, Summary};
use crate::model::{AssembledModel, DesignSet, ModelSpec, Problem, Variant};
use crate::report::num;
use crate::rng::{child_seed, substream};

#[derive(Debug, Clone, PartialEq)]
pub struct EgoPartition {
    pub ego_ids: Vec<usize>,
    /// Non-ego actors with a tie from some ego, ascending.
    pub alter_ids: Vec<usize>,
    pub other_ids: Vec<usize>,
    /// Ties among egos.
    pub a_e: DMatrix<f64>,
    /// Ties from egos to alters.
    pub a_ea: DMatrix<f64>,
}

impl EgoPartition {
    pub fn n_e(&self) -> usize {
        self.ego_ids.len()
    }
    pub fn n_a(&self) -> usize {
        self.alter_ids.len()
    }
}

/// Splits actors into egos (in the given order), alters and others.
pub fn partition(net: &Network, ego_ids: &[usize]) -> Result<EgoPartition> {
    if ego_ids.is_empty() {
        return Err(Error::EmptyEgoSet);
    }
    let n = net.n();
    let mut is_ego = vec![false; n];
    for &e in ego_ids {
        if e >= n {
            return Err(Error::InvalidEgo(format!("actor {e} out of range for {n} actors")));
        }
        if is_ego[e] {
            return Err(Error::InvalidEgo(format!("actor {e} listed twice")));
        }
        is_ego[e] = true;
    }
    let mut is_alter = vec![false; n];
    for &e in ego_ids {
        for &j in net.out_neighbors(e) {
            if !is_ego[j] {
                is_alter[j] = true;
            }
        }
    }
    let alter_ids: Vec<usize> = (0..n).filter(|&j| is_alter[j]).collect();
    let other_ids: Vec<usize> = (0..n).filter(|&j| !is_ego[j] && !is_alter[j]).collect();
    let a = net.adjacency();
    let a_e = DMatrix::from_fn(ego_ids.len(), ego_ids.len(), |i, j| a[(ego_ids[i], ego_ids[j])]);
    let a_ea = DMatrix::from_fn(ego_ids.len(), alter_ids.len(), |i, j| a[(ego_ids[i], alter_ids[j])]);
    Ok(EgoPartition { ego_ids: ego_ids.to_vec(), alter_ids, other_ids, a_e, a_ea })
}

/// Observed data for an egocentric sample.
#[derive(Debug, Clone)]
pub struct EgoSample {
    pub partition: EgoPartition,
    /// Design rows of the egos, in ego order.
    pub design: DesignSet,
    /// `X2` rows of the alters, in alter order.
    pub x2_alters: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl EgoSample {
    /// Extracts an egocentric sample from full-network data.
    pub fn from_full(net: &Network, design: &DesignSet, y: &DVector<f64>, ego_ids: &[usize]) -> Result<Self> {
        if design.n() != net.n() || y.len() != net.n() {
            return Err(Error::DimensionMismatch("design and response must cover every actor".into()));
        }
        let partition = partition(net, ego_ids)?;
        let ego_design = design.select_rows(&partition.ego_ids)?;
        let x2_alters = design.x2.select_rows(&partition.alter_ids);
        let y = DVector::from_iterator(partition.n_e(), partition.ego_ids.iter().map(|&i| y[i]));
        Ok(Self { partition, design: ego_design, x2_alters, y })
    }

    pub fn problem(&self, spec: ModelSpec) -> Result<Problem> {
        ego_problem(&self.partition, &self.design, &self.x2_alters, &self.y, spec)
    }
}

/// The observed-data problem for the egos: `X~ = (X1e | R_xe (A_e X2e + A_ea X2a))`
/// and `V = (I + R_e A_e)(I + A_e' R_e) + R_e A_ea A_ea' R_e`.
///
/// The Durbin variant is accepted too (it is the `R_eps = 0` case).
pub fn ego_problem(
    part: &EgoPartition,
    design_e: &DesignSet,
    x2_alters: &DMatrix<f64>,
    y_e: &DVector<f64>,
    spec: ModelSpec,
) -> Result<Problem> {
    if !matches!(spec.variant, Variant::EgoMovingAverage | Variant::Durbin) {
        return Err(Error::UnsupportedVariant(format!(
            "egocentric data support only the moving-average and Durbin variants, not {}",
            spec.variant
        )));
    }
    let (n_e, n_a) = (part.n_e(), part.n_a());
    if design_e.n() != n_e || y_e.len() != n_e {
        return Err(Error::DimensionMismatch(format!("expected {n_e} ego rows")));
    }
    if x2_alters.nrows() != n_a || x2_alters.ncols() != design_e.p2() {
        return Err(Error::DimensionMismatch(format!(
            "alter covariates are {}x{}, expected {n_a}x{}",
            x2_alters.nrows(),
            x2_alters.ncols(),
            design_e.p2()
        )));
    }
    if let Some(row) = (0..n_a).find(|&r| x2_alters.row(r).iter().any(|v| !v.is_finite())) {
        return Err(Error::MissingAlterCovariates(part.alter_ids[row]));
    }
    let mut ax2 = &part.a_e * &design_e.x2;
    if n_a > 0 {
        ax2 += &part.a_ea * x2_alters;
    }
    let gram = (spec.variant == Variant::EgoMovingAverage).then(|| {
        let mut g = &part.a_e * part.a_e.transpose();
        if n_a > 0 {
            g += &part.a_ea * part.a_ea.transpose();
        }
        g
    });
    Problem::from_parts(spec, design_e.clone(), y_e.clone(), part.a_e.clone(), ax2, gram)
}

/// Builds and assembles the egocentric model in one call.
pub fn assemble_ego_ma(
    part: &EgoPartition,
    design_e: &DesignSet,
    x2_alters: &DMatrix<f64>,
    gamma_x: &DVector<f64>,
    gamma_eps: &DVector<f64>,
    y_e: &DVector<f64>,
    spec: ModelSpec,
) -> Result<AssembledModel> {
    ego_problem(part, design_e, x2_alters, y_e, spec)?.assemble(gamma_x, gamma_eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_e: usize,
    pub replicate: usize,
    pub parameter: String,
    pub block: Block,
    pub mean: f64,
    pub lb95: f64,
    pub ub95: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub n_e: usize,
    pub replicate: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n_e: usize,
    pub parameter: String,
    pub block: Block,
    pub mean: f64,
    pub lb95: f64,
    pub ub95: f64,
    /// Successful replicates averaged over.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Fit to the complete network, for reference.
    pub full: Summary,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    /// Averages of posterior means and interval bounds per `(n_e, parameter)`.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut out: Vec<AggregateRow> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|a| a.n_e == r.n_e && a.block == r.block && a.parameter == r.parameter) {
                Some(a) => {
                    a.mean += r.mean;
                    a.lb95 += r.lb95;
                    a.ub95 += r.ub95;
                    a.replicates += 1;
                }
                None => out.push(AggregateRow {
                    n_e: r.n_e,
                    parameter: r.parameter.clone(),
                    block: r.block,
                    mean: r.mean,
                    lb95: r.lb95,
                    ub95: r.ub95,
                    replicates: 1,
                }),
            }
        }
        for a in &mut out {
            let k = a.replicates as f64;
            a.mean /= k;
            a.lb95 /= k;
            a.ub95 /= k;
        }
        out
    }

    /// Average over parameters of the averaged interval width at `n_e`.
    pub fn mean_width(&self, n_e: usize) -> Option<f64> {
        let rows: Vec<_> = self.aggregate().into_iter().filter(|a| a.n_e == n_e).collect();
        (!rows.is_empty()).then(|| rows.iter().map(|a| a.ub95 - a.lb95).sum::<f64>() / rows.len() as f64)
    }

    /// `n_e,replicate,parameter,block,mean,lb95,ub95,converged`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_e", "replicate", "parameter", "block", "mean", "lb95", "ub95", "converged"])?;
        for r in &self.rows {
            w.write_record([
                r.n_e.to_string(),
                r.replicate.to_string(),
                r.parameter.clone(),
                r.block.as_str().to_string(),
                num(r.mean),
                num(r.lb95),
                num(r.ub95),
                r.converged.to_string(),
            ])?;
        }
        w.flush()
    }

    /// Per-size averages next to the full-network values, ready for plotting.
    pub fn write_aggregate_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n_e",
            "parameter",
            "block",
            "mean",
            "lb95",
            "ub95",
            "full_mean",
            "full_lb95",
            "full_ub95",
            "replicates",
        ])?;
        for a in self.aggregate() {
            let full = self.full.get(a.block, &a.parameter);
            let f = |v: Option<f64>| v.map(num).unwrap_or_default();
            w.write_record([
                a.n_e.to_string(),
                a.parameter.clone(),
                a.block.as_str().to_string(),
                num(a.mean),
                num(a.lb95),
                num(a.ub95),
                f(full.map(|p| p.mean)),
                f(full.map(|p| p.lb95)),
                f(full.map(|p| p.ub95)),
                a.replicates.to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Ego subset for one replicate, drawn uniformly without replacement.
pub fn sample_egos(n: usize, n_e: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = substream(child_seed(seed, n_e as u64), replicate as u64);
    let mut ids = index::sample(&mut rng, n, n_e).into_vec();
    ids.sort_unstable();
    ids
}

/// Fits the full network and `replicates` egocentric subsamples per size.
/// Replicate failures are recorded rather than fatal.
pub fn ego_sweep(
    net: &Network,
    design: &DesignSet,
    y: &DVector<f64>,
    spec: ModelSpec,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    let n = net.n();
    if let Some(&bad) = opts.sizes.iter().find(|&&s| s == 0 || s > n) {
        return Err(Error::InvalidConfig(format!("ego sample size {bad} must lie in 1..={n}")));
    }
    let ego_spec = ModelSpec { variant: Variant::EgoMovingAverage, ..spec };
    let full_spec = ModelSpec { variant: Variant::MovingAverage, ..spec };
    let full_problem = Problem::new(net, design, y, full_spec)?;
    let full = inference::fit(&full_problem, &opts.fit, opts.seed)?.summary;

    let jobs: Vec<(usize, usize)> =
        opts.sizes.iter().flat_map(|&s| (0..opts.replicates).map(move |r| (s, r))).collect();
    type Job = (usize, usize, Result<(Summary, bool)>);
    let results: Vec<Job> = jobs
        .into_par_iter()
        .map(|(n_e, rep)| {
            let run = || {
                let egos = sample_egos(n, n_e, opts.seed, rep);
                let problem = EgoSample::from_full(net, design, y, &egos)?.problem(ego_spec)?;
                // Common random numbers: every fit samples from the sweep seed,
                // so sizes differ only through the egos drawn.
                let fit = inference::fit(&problem, &opts.fit, opts.seed)?;
                Ok((fit.summary, fit.detail.converged()))
            };
            (n_e, rep, run())
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n_e, replicate, res) in results {
        match res {
            Ok((summary, converged)) => rows.extend(summary.parameters.into_iter().map(|p| SweepRow {
                n_e,
                replicate,
                parameter: p.name,
                block: p.block,
                mean: p.mean,
                lb95: p.lb95,
                ub95: p.ub95,
                converged,
            })),
            Err(error) => {
                log::warn!("ego replicate {replicate} at n_e = {n_e} failed: {error}");
                failures.push(SweepFailure { n_e, replicate, error });
            }
        }
    }
    Ok(SweepReport { full, rows, failures })
}

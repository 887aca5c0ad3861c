//! The four subcommands. Each returns the files it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use suscept::durbin::DurbinOptions;
use suscept::ego::{ego_sweep, EgoSample, SweepOptions};
use suscept::graph::write_features_csv;
use suscept::inference::{self, write_draws_csv, write_summary_csv, write_susceptibility_csv, FitDetail, FitOptions};
use suscept::sim::{self, CovariateRecipe, NetworkSource, StudyConfig};
use suscept::{LocalFeatures, ModelSpec, ParameterState, Problem, Variant};

use crate::config::{self, EgoStudyConfig, FitConfig, Loaded, ModelSection, StudyFile};
use crate::data;
use crate::error::{CliError, Result};
use crate::output::{write_with_header, Header};

fn header<T>(loaded: &Loaded<T>, seed: Option<u64>) -> Header {
    Header { hash: loaded.hash.clone(), seed, canonical: loaded.canonical.clone(), notes: Vec::new() }
}

/// Writes the per-actor features of an edge list.
pub fn features(edges: &Path, out: &Path, directed: bool) -> Result<Vec<PathBuf>> {
    let list = data::read_edges(edges, directed)?;
    let net = list.to_network(directed).map_err(|source| CliError::Input { path: edges.into(), source })?;
    let feats = LocalFeatures::compute(&net)?;
    let isolated: Vec<&str> = feats
        .inv_network_size
        .iter()
        .zip(&list.labels)
        .filter_map(|(v, l)| v.is_none().then_some(l.as_str()))
        .collect();
    if !isolated.is_empty() {
        log::warn!("actors without ties (inv_size left empty): {}", isolated.join(", "));
    }
    let resolved = serde_json::json!({ "edges": edges.to_string_lossy(), "directed": directed });
    let loaded = config::fingerprint(resolved, PathBuf::new());
    let h = header(&loaded, None);
    let path = write_with_header(out, &h, |buf| write_features_csv(buf, &list.labels, &feats))?;
    Ok(vec![path])
}

/// Checks the model section against the variant before any data is read.
fn check_model(variant: Variant, model: &ModelSection, egos: bool) -> Result<()> {
    if model.x1.is_empty() {
        return Err(CliError::config("model.x1", "needs at least one column"));
    }
    if model.w_x.is_empty() && model.w_eps.is_empty() {
        let hint = if variant == Variant::Durbin {
            "set w_x to at least one covariate"
        } else {
            "for homogeneous susceptibility use w_eps = [\"intercept\"]"
        };
        return Err(CliError::config("model", format!("w_x and w_eps are both empty; {hint}")));
    }
    if variant == Variant::Durbin && !model.w_eps.is_empty() {
        return Err(CliError::config("model.w_eps", "the durbin variant has no correlated errors; leave w_eps empty"));
    }
    if variant.has_eps() && !model.w_eps.is_empty() && !model.w_eps.iter().any(|c| c == "intercept") {
        log::warn!("w_eps has no intercept column");
    }
    match (variant == Variant::EgoMovingAverage, egos) {
        (true, false) => Err(CliError::config("data.egos", "required by the ego_moving_average variant")),
        (false, true) => Err(CliError::config("data.egos", "only used by the ego_moving_average variant")),
        _ => Ok(()),
    }
}

fn fit_options(draws: usize, field: &str, model: &ModelSection) -> Result<FitOptions> {
    if draws == 0 {
        return Err(CliError::config(field, "must be at least 1"));
    }
    let sigma_precision = config::parse_sigma_precision(model.sigma_precision.as_deref())?;
    Ok(FitOptions { draws, durbin: DurbinOptions { sigma_precision, ..Default::default() }, ..Default::default() })
}

fn diagnostics(detail: &FitDetail, draws: &inference::PosteriorDraws) -> Vec<String> {
    let (converged, warnings) = match detail {
        FitDetail::Durbin(f) => (f.converged, &f.warnings),
        FitDetail::Marginal(g) => (g.converged, &g.warnings),
    };
    let mut notes = vec![format!("converged {converged}")];
    for w in warnings.iter().chain(&draws.warnings) {
        log::warn!("{w}");
        notes.push(format!("warning {w}"));
    }
    notes
}

/// Fits one model and writes its summary, per-actor susceptibilities and
/// optionally the draws.
pub fn fit(config_path: &Path) -> Result<Vec<PathBuf>> {
    let loaded: Loaded<FitConfig> = config::load(config_path)?;
    let cfg = &loaded.config;
    let variant = config::parse_variant("model.variant", &cfg.model.variant)?;
    check_model(variant, &cfg.model, cfg.data.egos.is_some())?;
    let opts = fit_options(cfg.sampling.draws, "sampling.draws", &cfg.model)?;
    let ds = data::load_dataset(&cfg.data, &cfg.model, |p| loaded.path(p))?;

    let (problem, labels) = match &ds.egos {
        Some(egos) => {
            let priors = cfg.priors.resolve(egos.len())?;
            let sample = EgoSample::from_full(&ds.net, &ds.design, &ds.y, egos)?;
            let labels = sample.partition.ego_ids.iter().map(|&i| ds.labels[i].clone()).collect();
            (sample.problem(ModelSpec::new(variant, priors)?)?, labels)
        }
        None => {
            let priors = cfg.priors.resolve(ds.net.n())?;
            (Problem::new(&ds.net, &ds.design, &ds.y, ModelSpec::new(variant, priors)?)?, ds.labels.clone())
        }
    };
    let fit = inference::fit(&problem, &opts, cfg.sampling.seed)?;

    let dir = loaded.path(&cfg.output.dir);
    let h = header(&loaded, Some(cfg.sampling.seed)).with_notes(
        [format!("variant {variant}"), format!("actors {}", problem.n())]
            .into_iter()
            .chain(diagnostics(&fit.detail, &fit.draws)),
    );
    let mut written = vec![
        write_with_header(&dir.join("summary.csv"), &h, |b| write_summary_csv(b, &fit.summary))?,
        write_with_header(&dir.join("susceptibility.csv"), &h, |b| write_susceptibility_csv(b, &labels, &fit.summary))?,
    ];
    if cfg.output.draws {
        written.push(write_with_header(&dir.join("draws.csv"), &h, |b| write_draws_csv(b, &fit.draws))?);
    }
    Ok(written)
}

fn study_truth(model: &config::StudyModel, variant: Variant) -> Result<ParameterState> {
    let reference = sim::reference_truth();
    let pick = |field: &str, given: &Option<Vec<f64>>, default: &DVector<f64>| -> Result<DVector<f64>> {
        match given {
            None => Ok(default.clone()),
            Some(v) if v.len() == default.len() => Ok(DVector::from_vec(v.clone())),
            Some(v) => Err(CliError::config(
                format!("model.{field}"),
                format!("needs {} values, got {}", default.len(), v.len()),
            )),
        }
    };
    let gamma_eps = if variant.has_eps() {
        pick("gamma_eps", &model.gamma_eps, &reference.gamma_eps)?
    } else if model.gamma_eps.as_ref().is_some_and(|v| !v.is_empty()) {
        return Err(CliError::config("model.gamma_eps", "the durbin variant has no correlated errors"));
    } else {
        DVector::zeros(0)
    };
    let sigma2 = model.sigma2.unwrap_or(reference.sigma2);
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(CliError::config("model.sigma2", format!("must be positive, got {sigma2}")));
    }
    Ok(ParameterState {
        beta: pick("beta", &model.beta, &reference.beta)?,
        gamma_x: pick("gamma_x", &model.gamma_x, &reference.gamma_x)?,
        gamma_eps,
        sigma2,
    })
}

/// Runs the simulation study and writes coverage, ratio and per-replicate
/// tables plus a readable summary.
pub fn simulate(config_path: &Path) -> Result<Vec<PathBuf>> {
    let loaded: Loaded<StudyFile> = config::load(config_path)?;
    let cfg = &loaded.config;
    let variant = config::parse_variant("model.variant", &cfg.model.variant)?;
    if variant == Variant::EgoMovingAverage {
        return Err(CliError::config("model.variant", "studies simulate full-network data; use moving_average"));
    }
    if cfg.sampling.replicates == 0 {
        return Err(CliError::config("sampling.replicates", "must be at least 1"));
    }
    let truth = study_truth(&cfg.model, variant)?;
    let (network, n, provenance) = match (&cfg.data.edges, &cfg.data.erdos_renyi) {
        (Some(_), Some(_)) => return Err(CliError::config("data", "set either edges or erdos_renyi, not both")),
        (Some(p), None) => {
            let path = loaded.path(p);
            let list = data::read_edges(&path, cfg.data.directed)?;
            let net = list.to_network(cfg.data.directed).map_err(|source| CliError::Input { path, source })?;
            let n = net.n();
            (NetworkSource::Fixed(net), n, format!("network edge list {p}"))
        }
        (None, g) => {
            let g = g.unwrap_or(config::RandomGraph { n: 122, mean_degree: 6.0 });
            (
                NetworkSource::ErdosRenyi { n: g.n, mean_degree: g.mean_degree },
                g.n,
                format!("network synthetic Erdos-Renyi graph, n = {}, mean degree {}", g.n, g.mean_degree),
            )
        }
    };
    let priors = cfg.priors.resolve(n)?;
    if cfg.sampling.draws == 0 {
        return Err(CliError::config("sampling.draws", "must be at least 1"));
    }
    let study = StudyConfig {
        replicates: cfg.sampling.replicates,
        truth,
        variant,
        network,
        recipe: CovariateRecipe { standardize: cfg.data.standardize },
        priors,
        fit: FitOptions { draws: cfg.sampling.draws, ..Default::default() },
        seed: cfg.sampling.seed,
    };
    let report = sim::coverage_study(&study)?;

    let failed = report.failures.len();
    let h = header(&loaded, Some(cfg.sampling.seed))
        .with_notes([provenance.clone(), format!("failed_replicates {failed}")]);
    let dir = loaded.path(&cfg.output.dir);
    let mut written = vec![
        write_with_header(&dir.join("coverage.csv"), &h, |b| report.write_coverage_csv(b))?,
        write_with_header(&dir.join("ratios.csv"), &h, |b| report.write_ratios_csv(b))?,
        write_with_header(&dir.join("replicates.csv"), &h, |b| report.write_replicates_csv(b))?,
    ];

    let (med_eps, med_x) = report.median_ratios();
    let mut text = String::new();
    writeln!(text, "Coverage of 95% intervals over {} replicates ({failed} failed)", report.results.len()).unwrap();
    writeln!(text, "{provenance}\n").unwrap();
    writeln!(text, "{:<28} {:>10} {:>10}", "parameter", "truth", "coverage").unwrap();
    for ((name, block, t), c) in report.parameters.iter().zip(report.coverage()) {
        writeln!(text, "{:<28} {t:>10.4} {c:>10.3}", format!("{}:{name}", block.as_str())).unwrap();
    }
    writeln!(text, "\nmedian estimated / true susceptibility (median over replicates)").unwrap();
    writeln!(text, "  correlated errors: {med_eps:.4}").unwrap();
    writeln!(text, "  covariates:        {med_x:.4}").unwrap();
    print!("{text}");
    written.push(write_with_header(&dir.join("summary.txt"), &h, |b| {
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })?);
    Ok(written)
}

/// Fits the full network and repeated egocentric subsamples of each size.
pub fn ego_study(config_path: &Path) -> Result<Vec<PathBuf>> {
    let loaded: Loaded<EgoStudyConfig> = config::load(config_path)?;
    let cfg = &loaded.config;
    let variant = config::parse_variant("model.variant", &cfg.model.variant)?;
    if !matches!(variant, Variant::MovingAverage | Variant::EgoMovingAverage) {
        return Err(CliError::config("model.variant", "ego studies need the moving_average variant"));
    }
    if cfg.data.egos.is_some() {
        return Err(CliError::config("data.egos", "ego studies draw their own egos; remove this key"));
    }
    check_model(Variant::MovingAverage, &cfg.model, false)?;
    let fit = fit_options(cfg.sampling.draws, "sampling.draws", &cfg.model)?;
    if cfg.sampling.sizes.is_empty() {
        return Err(CliError::config("sampling.sizes", "needs at least one size"));
    }
    if cfg.sampling.replicates == 0 {
        return Err(CliError::config("sampling.replicates", "must be at least 1"));
    }
    let ds = data::load_dataset(&cfg.data, &cfg.model, |p| loaded.path(p))?;
    let n = ds.net.n();
    if let Some(k) = cfg.sampling.sizes.iter().position(|&s| s == 0 || s > n) {
        return Err(CliError::config(
            format!("sampling.sizes[{k}]"),
            format!("size {} must lie in 1..={n}", cfg.sampling.sizes[k]),
        ));
    }
    let priors = cfg.priors.resolve(n)?;
    let opts = SweepOptions {
        sizes: cfg.sampling.sizes.clone(),
        replicates: cfg.sampling.replicates,
        seed: cfg.sampling.seed,
        fit,
    };
    let report = ego_sweep(&ds.net, &ds.design, &ds.y, ModelSpec::new(Variant::MovingAverage, priors)?, &opts)?;
    for f in &report.failures {
        log::warn!("n_e = {} replicate {} failed: {}", f.n_e, f.replicate, f.error);
    }
    let h = header(&loaded, Some(cfg.sampling.seed))
        .with_notes([format!("actors {n}"), format!("failed_subsamples {}", report.failures.len())]);
    let dir = loaded.path(&cfg.output.dir);
    Ok(vec![
        write_with_header(&dir.join("full_summary.csv"), &h, |b| write_summary_csv(b, &report.full))?,
        write_with_header(&dir.join("sweep.csv"), &h, |b| report.write_csv(b))?,
        write_with_header(&dir.join("sweep_summary.csv"), &h, |b| report.write_aggregate_csv(b))?,
    ])
}

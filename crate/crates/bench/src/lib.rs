//! Shared fixtures for the benchmarks: seeded problems at the sizes of the
//! replication study (`n = 122`) and the classroom sweep (`n = 472`).

use nalgebra::DVector;
use suscept::sim::{self, CovariateRecipe};
use suscept::{DesignSet, ModelSpec, Network, Priors, Problem, Variant};

/// The replication-study design on a seeded Erdos–Renyi graph.
pub fn study_problem(variant: Variant, seed: u64) -> (Network, DesignSet, Problem) {
    let net = sim::erdos_renyi(122, 6.0, seed).unwrap();
    let mut design = sim::simulate_covariates(&net, &CovariateRecipe::default(), seed).unwrap();
    if !variant.has_eps() {
        design = design.without_eps();
    }
    let mut truth = sim::reference_truth();
    if !variant.has_eps() {
        truth.gamma_eps = DVector::zeros(0);
    }
    let y = sim::simulate_response(variant, &net, &design, &truth, seed).unwrap();
    let spec = ModelSpec::new(variant, Priors::uniform_scale(122.0, 2.1, 1.0)).unwrap();
    let problem = Problem::new(&net, &design, &y, spec).unwrap();
    (net, design, problem)
}

/// The classroom-shaped moving-average data set.
pub fn classroom() -> (Network, DesignSet, DVector<f64>) {
    let net = sim::classroom_network(472, 20, 4.0, 8).unwrap();
    let design = sim::classroom_design(&net, 9).unwrap();
    let y = sim::simulate_response(Variant::MovingAverage, &net, &design, &sim::classroom_truth(), 10).unwrap();
    (net, design, y)
}

/// Dense `W_eps gamma` evaluation point used by the log-determinant benches.
pub fn gamma_point(q: usize) -> DVector<f64> {
    DVector::from_element(q, 0.05)
}

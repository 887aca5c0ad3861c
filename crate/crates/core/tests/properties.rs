//! Invariants that hold for any labeling of the actors and any simulated
//! variant.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use suscept::graph::{row_normalize, Network};
use suscept::inference::{self, FitOptions};
use suscept::model::{susceptibility_diag_eps, DesignSet, ModelSpec, ParameterState, Priors, Problem, Variant};
use suscept::rng::{substream, Rng};
use suscept::sim;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Instance {
    net: Network,
    design: DesignSet,
    y: DVector<f64>,
}

fn instance(n: usize, seed: u64) -> Instance {
    let mut rng = substream(seed, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        let k = rng.random_range(1..=3);
        for j in rand::seq::index::sample(&mut rng, n - 1, k) {
            edges.push((i, if j >= i { j + 1 } else { j }));
        }
    }
    let raw = Network::from_edges(n, &edges, true).unwrap();
    let net = Network::new(row_normalize(&raw).unwrap(), true).unwrap();
    let mut col =
        |intercept: bool| DMatrix::from_fn(n, 2, |_, j| if intercept && j == 0 { 1.0 } else { normal(&mut rng) });
    let x1 = col(true);
    let x2 = col(false);
    let wx = col(false);
    let weps = col(true);
    let y = DVector::from_fn(n, |_, _| normal(&mut rng));
    Instance { net, design: DesignSet::new(x1, x2, wx, weps).unwrap(), y }
}

fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

/// Relabels actors so that new actor `i` is old actor `perm[i]`.
fn permuted(inst: &Instance, perm: &[usize]) -> Instance {
    let a = inst.net.adjacency();
    let n = a.nrows();
    let pa = DMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
    let d = &inst.design;
    Instance {
        net: Network::new(pa, true).unwrap(),
        design: DesignSet::new(
            permute_rows(&d.x1, perm),
            permute_rows(&d.x2, perm),
            permute_rows(&d.wx, perm),
            permute_rows(&d.weps, perm),
        )
        .unwrap(),
        y: DVector::from_fn(n, |i, _| inst.y[perm[i]]),
    }
}

fn problem(inst: &Instance, variant: Variant) -> Problem {
    let design = if variant.has_eps() { inst.design.clone() } else { inst.design.clone().without_eps() };
    let priors = Priors::uniform_scale(inst.y.len() as f64, 2.1, 1.0);
    Problem::new(&inst.net, &design, &inst.y, ModelSpec::new(variant, priors).unwrap()).unwrap()
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, 1);
    rand::seq::index::sample(&mut rng, n, n).into_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn marginal_posterior_ignores_actor_labels(
        seed in 0u64..1000,
        variant in prop::sample::select(vec![Variant::Effects, Variant::Disturbances, Variant::MovingAverage]),
        gx in prop::collection::vec(-0.3f64..0.3, 2),
        ge in prop::collection::vec(-0.3f64..0.3, 2),
    ) {
        let inst = instance(15, seed);
        let perm = shuffled(15, seed);
        let (gx, ge) = (DVector::from_vec(gx), DVector::from_vec(ge));
        let a = problem(&inst, variant).marginal_log_posterior(&gx, &ge).unwrap();
        let b = problem(&permuted(&inst, &perm), variant).marginal_log_posterior(&gx, &ge).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn fit_ignores_actor_labels() {
    let inst = instance(40, 7);
    let perm = shuffled(40, 7);
    let other = permuted(&inst, &perm);
    // Relabeling only reorders floating-point sums, so fits agree to optimizer
    // precision, which is far below posterior uncertainty.
    let opts = FitOptions { draws: 2000, ..FitOptions::default() };
    for variant in [Variant::Durbin, Variant::Disturbances, Variant::MovingAverage] {
        let a = inference::fit(&problem(&inst, variant), &opts, 3).unwrap();
        let b = inference::fit(&problem(&other, variant), &opts, 3).unwrap();
        for (pa, pb) in a.summary.parameters.iter().zip(&b.summary.parameters) {
            assert_eq!((pa.block, &pa.name), (pb.block, &pb.name));
            for (u, v) in [(pa.mean, pb.mean), (pa.lb95, pb.lb95), (pa.ub95, pb.ub95)] {
                assert!((u - v).abs() < 1e-3 * pa.se, "{variant:?} {}: {u} vs {v}", pa.name);
            }
        }
        for i in 0..40 {
            let (u, v) = (a.summary.susceptibility_x[perm[i]], b.summary.susceptibility_x[i]);
            assert!((u - v).abs() < 1e-4, "{variant:?} actor {i}");
            if variant.has_eps() {
                let (u, v) = (a.summary.susceptibility_eps[perm[i]], b.summary.susceptibility_eps[i]);
                assert!((u - v).abs() < 1e-4, "{variant:?} actor {i}");
            }
        }
    }
}

/// Monte Carlo mean and covariance of simulated responses match the closed
/// forms of every variant within four standard errors.
#[test]
fn simulated_moments_match_closed_forms() {
    let n = 6;
    let inst = instance(n, 21);
    let d = &inst.design;
    let a = inst.net.adjacency();
    let truth = ParameterState {
        beta: DVector::from_vec(vec![0.5, -0.3, 0.4, 0.2]),
        gamma_x: DVector::from_vec(vec![0.2, -0.1]),
        gamma_eps: DVector::from_vec(vec![0.3, 0.15]),
        sigma2: 0.8,
    };
    let rx = DVector::from_fn(n, |i, _| 1.0 + (d.wx.row(i) * &truth.gamma_x)[0]);
    let base = &d.x1 * truth.beta.rows(0, 2) + rx.component_mul(&(a * (&d.x2 * truth.beta.rows(2, 2))));
    let ra = DMatrix::from_diagonal(&susceptibility_diag_eps(&d.weps, &truth.gamma_eps)) * a;
    let id = DMatrix::<f64>::identity(n, n);
    let binv = (&id - &ra).try_inverse().unwrap();

    for variant in [Variant::Durbin, Variant::Effects, Variant::Disturbances, Variant::MovingAverage] {
        let (mean, root) = match variant {
            Variant::Durbin => (base.clone(), id.clone()),
            Variant::Effects => (&binv * &base, binv.clone()),
            Variant::Disturbances => (base.clone(), binv.clone()),
            _ => (base.clone(), &id + &ra),
        };
        let cov = &root * root.transpose() * truth.sigma2;
        let design = if variant.has_eps() { d.clone() } else { d.clone().without_eps() };
        let params = if variant.has_eps() {
            truth.clone()
        } else {
            ParameterState { gamma_eps: DVector::zeros(0), ..truth.clone() }
        };
        let m = 100_000;
        let mut sum = DVector::zeros(n);
        let mut sum2 = DVector::zeros(n);
        let mut outer = DMatrix::zeros(n, n);
        let mut outer2 = DMatrix::zeros(n, n);
        for s in 0..m {
            let y = sim::simulate_response(variant, &inst.net, &design, &params, s).unwrap();
            let e = &y - &mean;
            sum += &e;
            sum2 += e.map(|v| v * v);
            let o = &e * e.transpose();
            outer2 += o.map(|v| v * v);
            outer += o;
        }
        let mf = m as f64;
        for i in 0..n {
            let se = ((sum2[i] / mf - (sum[i] / mf).powi(2)) / mf).sqrt();
            assert!((sum[i] / mf).abs() < 4.0 * se, "{variant:?} mean {i}");
            for j in 0..n {
                let c = outer[(i, j)] / mf;
                let se = ((outer2[(i, j)] / mf - c * c) / mf).sqrt();
                assert!(
                    (c - cov[(i, j)]).abs() < 4.0 * se + 1e-12,
                    "{variant:?} cov ({i},{j}): {c} vs {}",
                    cov[(i, j)]
                );
            }
        }
    }
}

/// Doubling the generating `gamma_eps` roughly doubles the estimated
/// per-actor susceptibility when the signal is strong.
#[test]
fn susceptibility_scales_with_gamma_eps() {
    let n = 150;
    let net = sim::erdos_renyi(n, 5.0, 4).unwrap();
    let net = Network::new(row_normalize(&net).unwrap(), true).unwrap();
    let mut rng = substream(4, 2);
    let x1 = DMatrix::from_fn(n, 1, |_, _| 1.0);
    let weps = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { normal(&mut rng) });
    let design = DesignSet::new(x1, DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), weps.clone()).unwrap();
    let opts = FitOptions { draws: 2000, ..FitOptions::default() };
    let mut centers = Vec::new();
    for scale in [1.0, 2.0] {
        let truth = ParameterState {
            beta: DVector::from_vec(vec![1.0]),
            gamma_x: DVector::zeros(0),
            gamma_eps: DVector::from_vec(vec![0.2 * scale, 0.1 * scale]),
            sigma2: 0.25,
        };
        let y = sim::simulate_response(Variant::Disturbances, &net, &design, &truth, 9).unwrap();
        let fit = inference::fit(
            &Problem::new(
                &net,
                &design,
                &y,
                ModelSpec::new(Variant::Disturbances, Priors::uniform_scale(n as f64, 2.1, 1.0)).unwrap(),
            )
            .unwrap(),
            &opts,
            9,
        )
        .unwrap();
        centers.push(fit.summary.susceptibility_eps.mean());
    }
    let ratio = centers[1] / centers[0];
    assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio} from {centers:?}");
}

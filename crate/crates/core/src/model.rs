//! Design matrices, susceptibility diagonals, and the general posterior.
//!
//! Every variant reduces to the same Gaussian-inverse-gamma form once the
//! regressor matrix `X~` and the correlation shape `V` are fixed:
//!
//! ```text
//! a*       = a + n + q1 + q2
//! Sigma_b^-1 = X~' V^-1 X~ + I / g1
//! mu_b     = Sigma_b X~' V^-1 y
//! b*       = b + y' V^-1 y - mu_b' Sigma_b^-1 mu_b + |gx|^2 / g2 + |ge|^2 / g3
//! ```
//!
//! `V^-1` is never formed. Quadratic forms go through a whitening map `T`
//! with `T' T = V^-1`: `T = I - R_eps A` for effects and disturbances, and
//! `T = L^-1` with `L L' = V` for the moving-average models.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::linalg;

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Durbin,
    Effects,
    Disturbances,
    MovingAverage,
    EgoMovingAverage,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Durbin, Variant::Effects, Variant::Disturbances, Variant::MovingAverage, Variant::EgoMovingAverage];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Durbin => "durbin",
            Variant::Effects => "effects",
            Variant::Disturbances => "disturbances",
            Variant::MovingAverage => "moving_average",
            Variant::EgoMovingAverage => "ego_moving_average",
        }
    }

    /// Whether the variant carries correlated errors (and hence `gamma_eps`).
    pub fn has_eps(self) -> bool {
        self != Variant::Durbin
    }

    fn is_moving_average(self) -> bool {
        matches!(self, Variant::MovingAverage | Variant::EgoMovingAverage)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model variant {s:?}")))
    }
}

/// Prior hyperparameters: `beta ~ N(0, g1 s2 I)`, `gamma_x ~ N(0, g2 s2 I)`,
/// `gamma_eps ~ N(0, g3 s2 I)` and `s2 ~ IG(a/2, b/2)`, where `IG(s, c)` has
/// density proportional to `x^(-s-1) exp(-c/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub a: f64,
    pub b: f64,
}

impl Priors {
    /// `g1 = g2 = g3 = g` with the given inverse-gamma inputs.
    pub fn uniform_scale(g: f64, a: f64, b: f64) -> Self {
        Self { g1: g, g2: g, g3: g, a, b }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("g1", self.g1), ("g2", self.g2), ("g3", self.g3), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidPrior(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub priors: Priors,
}

impl ModelSpec {
    pub fn new(variant: Variant, priors: Priors) -> Result<Self> {
        priors.validate()?;
        Ok(Self { variant, priors })
    }
}

/// Column labels for a [`DesignSet`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignNames {
    pub x1: Vec<String>,
    pub x2: Vec<String>,
    pub wx: Vec<String>,
    pub weps: Vec<String>,
}

impl DesignNames {
    fn generic(p1: usize, p2: usize, q1: usize, q2: usize) -> Self {
        let mk = |prefix: &str, k: usize| (0..k).map(|j| format!("{prefix}{}", j + 1)).collect();
        Self { x1: mk("x1_", p1), x2: mk("x2_", p2), wx: mk("wx_", q1), weps: mk("weps_", q2) }
    }
}

/// Regressors `X1` (own covariates), `X2` (covariates whose neighbor sums enter
/// the mean), and the susceptibility designs `W_x`, `W_eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub wx: DMatrix<f64>,
    pub weps: DMatrix<f64>,
    pub names: DesignNames,
}

impl DesignSet {
    pub fn new(x1: DMatrix<f64>, x2: DMatrix<f64>, wx: DMatrix<f64>, weps: DMatrix<f64>) -> Result<Self> {
        let names = DesignNames::generic(x1.ncols(), x2.ncols(), wx.ncols(), weps.ncols());
        Self::with_names(x1, x2, wx, weps, names)
    }

    pub fn with_names(
        x1: DMatrix<f64>,
        x2: DMatrix<f64>,
        wx: DMatrix<f64>,
        weps: DMatrix<f64>,
        names: DesignNames,
    ) -> Result<Self> {
        let n = x1.nrows();
        for (label, m) in [("X2", &x2), ("W_x", &wx), ("W_eps", &weps)] {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch(format!("{label} has {} rows, X1 has {n}", m.nrows())));
            }
        }
        let counts = [
            (x1.ncols(), names.x1.len()),
            (x2.ncols(), names.x2.len()),
            (wx.ncols(), names.wx.len()),
            (weps.ncols(), names.weps.len()),
        ];
        if counts.iter().any(|(c, l)| c != l) {
            return Err(Error::DimensionMismatch("column names do not match design widths".into()));
        }
        for (label, m) in [("X1", &x1), ("X2", &x2), ("W_x", &wx), ("W_eps", &weps)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::DimensionMismatch(format!("{label} has non-finite entries")));
            }
            if !full_column_rank(m) {
                return Err(Error::RankDeficient(label.into()));
            }
        }
        for j in 0..wx.ncols() {
            let col = wx.column(j);
            let first = col[0];
            if col.iter().all(|&v| (v - first).abs() <= 1e-12 * first.abs().max(1.0)) {
                return Err(Error::ProportionalToIntercept(j));
            }
        }
        Ok(Self { x1, x2, wx, weps, names })
    }

    pub fn n(&self) -> usize {
        self.x1.nrows()
    }
    pub fn p1(&self) -> usize {
        self.x1.ncols()
    }
    pub fn p2(&self) -> usize {
        self.x2.ncols()
    }
    pub fn q1(&self) -> usize {
        self.wx.ncols()
    }
    pub fn q2(&self) -> usize {
        self.weps.ncols()
    }

    /// The same design restricted to (or reordered by) the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::with_names(
            self.x1.select_rows(rows),
            self.x2.select_rows(rows),
            self.wx.select_rows(rows),
            self.weps.select_rows(rows),
            self.names.clone(),
        )
    }

    /// Drops `W_eps`, for the independent-error Durbin model.
    pub fn without_eps(mut self) -> Self {
        self.weps = DMatrix::zeros(self.n(), 0);
        self.names.weps.clear();
        self
    }
}

fn full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.nrows() < m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > max * 1e-10
}

/// One point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    /// `(beta_1', beta_2')'`.
    pub beta: DVector<f64>,
    pub gamma_x: DVector<f64>,
    pub gamma_eps: DVector<f64>,
    pub sigma2: f64,
}

impl ParameterState {
    pub fn beta1(&self, p1: usize) -> DVector<f64> {
        self.beta.rows(0, p1).into_owned()
    }
    pub fn beta2(&self, p1: usize) -> DVector<f64> {
        self.beta.rows(p1, self.beta.len() - p1).into_owned()
    }
}

/// `diag(R_x) = 1 + W_x gamma_x`.
pub fn susceptibility_diag_x(wx: &DMatrix<f64>, gamma_x: &DVector<f64>) -> DVector<f64> {
    let mut r = DVector::from_element(wx.nrows(), 1.0);
    if wx.ncols() > 0 {
        r += wx * gamma_x;
    }
    r
}

/// `diag(R_eps) = W_eps gamma_eps`, with no constrained leading term.
pub fn susceptibility_diag_eps(weps: &DMatrix<f64>, gamma_eps: &DVector<f64>) -> DVector<f64> {
    if weps.ncols() == 0 {
        return DVector::zeros(weps.nrows());
    }
    weps * gamma_eps
}

/// Data and precomputed network products for fitting one model.
///
/// For full-network variants `influence` is `A`. For the egocentric model it
/// is `A_e`, with `A_ea X2_a` folded into `ax2` and `A_ea A_ea'` into `gram`.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ModelSpec,
    design: DesignSet,
    y: DVector<f64>,
    influence: DMatrix<f64>,
    ax2: DMatrix<f64>,
    /// `A A'` (plus the alter block for egocentric data); moving average only.
    gram: Option<DMatrix<f64>>,
}

impl Problem {
    /// A full-network problem. The egocentric variant here treats every actor
    /// as an ego.
    pub fn new(net: &Network, design: &DesignSet, y: &DVector<f64>, spec: ModelSpec) -> Result<Self> {
        if design.n() != net.n() || y.len() != net.n() {
            return Err(Error::DimensionMismatch(format!(
                "network has {} actors, design {} rows, response {}",
                net.n(),
                design.n(),
                y.len()
            )));
        }
        let a = net.adjacency();
        let ax2 = a * &design.x2;
        let gram = spec.variant.is_moving_average().then(|| a * a.transpose());
        Self::from_parts(spec, design.clone(), y.clone(), a.clone(), ax2, gram)
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        design: DesignSet,
        y: DVector<f64>,
        influence: DMatrix<f64>,
        ax2: DMatrix<f64>,
        gram: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        spec.priors.validate()?;
        if spec.variant == Variant::Durbin && design.q2() > 0 {
            return Err(Error::DimensionMismatch("the Durbin variant takes no W_eps columns".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("response has non-finite entries".into()));
        }
        Ok(Self { spec, design, y, influence, ax2, gram })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    pub fn variant(&self) -> Variant {
        self.spec.variant
    }
    pub fn design(&self) -> &DesignSet {
        &self.design
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q1(&self) -> usize {
        self.design.q1()
    }
    pub fn q2(&self) -> usize {
        self.design.q2()
    }
    /// Width of `beta`.
    pub fn p(&self) -> usize {
        self.design.p1() + self.design.p2()
    }
    /// The influence matrix acting on observed actors.
    pub fn influence(&self) -> &DMatrix<f64> {
        &self.influence
    }
    /// `A X2` (or `A_e X2_e + A_ea X2_a`).
    pub fn ax2(&self) -> &DMatrix<f64> {
        &self.ax2
    }

    /// Same design and network, new response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch("response length changed".into()));
        }
        Self::from_parts(self.spec, self.design.clone(), y, self.influence.clone(), self.ax2.clone(), self.gram.clone())
    }

    /// `X~` before any effects-model transformation: `(X1 | R_x A X2)`.
    pub fn xtilde_base(&self, gamma_x: &DVector<f64>) -> DMatrix<f64> {
        let rx = susceptibility_diag_x(&self.design.wx, gamma_x);
        let (n, p1, p2) = (self.n(), self.design.p1(), self.design.p2());
        let mut xt = DMatrix::zeros(n, p1 + p2);
        xt.columns_mut(0, p1).copy_from(&self.design.x1);
        for j in 0..p2 {
            for i in 0..n {
                xt[(i, p1 + j)] = rx[i] * self.ax2[(i, j)];
            }
        }
        xt
    }

    /// Dense `V` for moving-average variants:
    /// `I + R A + A' R + R (A A') R` (`(I + R A)(I + A' R)` expanded, plus the
    /// alter block for egocentric data).
    fn moving_average_v(&self, reps: &DVector<f64>) -> DMatrix<f64> {
        let a = &self.influence;
        let gram = self.gram.as_ref().expect("moving-average problems carry A A'");
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta + reps[i] * a[(i, j)] + a[(j, i)] * reps[j] + reps[i] * gram[(i, j)] * reps[j]
        })
    }

    /// The explicit covariance shape `V`, formed densely. Diagnostic use only.
    pub fn covariance_v(&self, gamma_eps: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_gamma(&DVector::zeros(self.q1()), gamma_eps)?;
        let n = self.n();
        let reps = susceptibility_diag_eps(&self.design.weps, gamma_eps);
        match self.spec.variant {
            Variant::Durbin => Ok(DMatrix::identity(n, n)),
            Variant::Effects | Variant::Disturbances => {
                let b = influence_factor(&self.influence, &reps, -1.0);
                let inv = b.try_inverse().ok_or(Error::SingularInfluence)?;
                Ok(&inv * inv.transpose())
            }
            Variant::MovingAverage | Variant::EgoMovingAverage => Ok(self.moving_average_v(&reps)),
        }
    }

    fn check_gamma(&self, gamma_x: &DVector<f64>, gamma_eps: &DVector<f64>) -> Result<()> {
        if gamma_x.len() != self.q1() || gamma_eps.len() != self.q2() {
            return Err(Error::DimensionMismatch(format!(
                "expected gamma_x of length {} and gamma_eps of length {}, got {} and {}",
                self.q1(),
                self.q2(),
                gamma_x.len(),
                gamma_eps.len()
            )));
        }
        Ok(())
    }

    /// Builds `X~`, `V` (in factored form) and the conditional posterior of
    /// `(beta, sigma2)` at the given susceptibility coefficients.
    pub fn assemble(&self, gamma_x: &DVector<f64>, gamma_eps: &DVector<f64>) -> Result<AssembledModel> {
        self.check_gamma(gamma_x, gamma_eps)?;
        let variant = self.spec.variant;
        let xbase = self.xtilde_base(gamma_x);
        let reps = susceptibility_diag_eps(&self.design.weps, gamma_eps);
        let rx = susceptibility_diag_x(&self.design.wx, gamma_x);

        let (xtilde, whitener, logdet_v, xw, yw) = if reps.iter().all(|&r| r == 0.0) {
            let (xw, yw) = (xbase.clone(), self.y.clone());
            (xbase, Whitener::Identity, 0.0, xw, yw)
        } else {
            match variant {
                Variant::Durbin => unreachable!("Durbin problems have no W_eps"),
                Variant::Effects | Variant::Disturbances => {
                    let b = influence_factor(&self.influence, &reps, -1.0);
                    let lu = b.clone().lu();
                    let log_abs_det = linalg::lu_log_abs_det(&lu).ok_or(Error::SingularInfluence)?;
                    if linalg::lu_rcond(&b, &lu) < RCOND_MIN {
                        return Err(Error::SingularInfluence);
                    }
                    let yw = &b * &self.y;
                    let (xtilde, xw) = if variant == Variant::Effects {
                        // X~ = B^-1 X, so the whitened regressors are X itself.
                        let xt = lu.solve(&xbase).ok_or(Error::SingularInfluence)?;
                        (xt, xbase)
                    } else {
                        let xw = &b * &xbase;
                        (xbase, xw)
                    };
                    (xtilde, Whitener::Influence { b, lu }, -2.0 * log_abs_det, xw, yw)
                }
                Variant::MovingAverage | Variant::EgoMovingAverage => {
                    let v = self.moving_average_v(&reps);
                    let chol = Cholesky::new(v).ok_or_else(|| Error::NotPositiveDefinite("V".into()))?;
                    if linalg::chol_rcond(&chol) < RCOND_MIN {
                        return Err(Error::NotPositiveDefinite("V is numerically singular".into()));
                    }
                    let l = chol.l_dirty();
                    let xw = l.solve_lower_triangular(&xbase).ok_or_else(|| Error::NotPositiveDefinite("V".into()))?;
                    let yw = l.solve_lower_triangular(&self.y).ok_or_else(|| Error::NotPositiveDefinite("V".into()))?;
                    let logdet = linalg::chol_logdet(&chol);
                    (xbase, Whitener::Cholesky(chol), logdet, xw, yw)
                }
            }
        };

        let pr = &self.spec.priors;
        let p = xw.ncols();
        let mut precision = xw.tr_mul(&xw);
        for i in 0..p {
            precision[(i, i)] += 1.0 / pr.g1;
        }
        linalg::symmetrize(&mut precision);
        let precision_chol =
            Cholesky::new(precision).ok_or_else(|| Error::NotPositiveDefinite("Sigma_beta^-1".into()))?;
        let xty = xw.tr_mul(&yw);
        let mu_beta = precision_chol.solve(&xty);
        // Completed square: y'V^-1 y - mu' Sigma^-1 mu = min over beta of the
        // ridge objective, evaluated at its minimizer for accuracy.
        let resid = &yw - &xw * &mu_beta;
        let bstar = pr.b
            + resid.norm_squared()
            + mu_beta.norm_squared() / pr.g1
            + gamma_x.norm_squared() / pr.g2
            + if variant.has_eps() { gamma_eps.norm_squared() / pr.g3 } else { 0.0 };
        if !(bstar > 0.0 && bstar.is_finite()) || !logdet_v.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("b* = {bstar}")));
        }
        let logdet_sigma_beta = -linalg::chol_logdet(&precision_chol);
        let sigma_beta = precision_chol.inverse();
        let astar = pr.a + (self.n() + self.q1() + self.q2()) as f64;
        Ok(AssembledModel {
            variant,
            xtilde,
            whitener,
            logdet_v,
            astar,
            bstar,
            mu_beta,
            sigma_beta,
            precision_chol,
            logdet_sigma_beta,
            susceptibility_x: rx,
            susceptibility_eps: reps,
        })
    }

    /// `log( |V|^-1/2 (b*)^(-a*/2) |Sigma_beta|^1/2 )`, the log marginal
    /// posterior of `(gamma_x, gamma_eps)` up to an additive constant.
    pub fn marginal_log_posterior(&self, gamma_x: &DVector<f64>, gamma_eps: &DVector<f64>) -> Result<f64> {
        Ok(self.assemble(gamma_x, gamma_eps)?.marginal_log_posterior())
    }

    /// Splits a stacked `(gamma_x', gamma_eps')'` vector.
    pub fn split_gamma(&self, theta: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let q1 = self.q1();
        (DVector::from_column_slice(&theta[..q1]), DVector::from_column_slice(&theta[q1..]))
    }
}

/// `I + sign * diag(r) A`.
fn influence_factor(a: &DMatrix<f64>, r: &DVector<f64>, sign: f64) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta + sign * r[i] * a[(i, j)]
    })
}

#[derive(Debug, Clone)]
enum Whitener {
    Identity,
    /// `V^-1 = B' B` with `B = I - R_eps A`.
    Influence {
        b: DMatrix<f64>,
        lu: LU<f64, Dyn, Dyn>,
    },
    /// `V = L L'`.
    Cholesky(Cholesky<f64, Dyn>),
}

/// The posterior pieces at one `(gamma_x, gamma_eps)`. Immutable once built.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub variant: Variant,
    pub xtilde: DMatrix<f64>,
    whitener: Whitener,
    pub logdet_v: f64,
    pub astar: f64,
    pub bstar: f64,
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    precision_chol: Cholesky<f64, Dyn>,
    pub logdet_sigma_beta: f64,
    /// `diag(R_x)`.
    pub susceptibility_x: DVector<f64>,
    /// `diag(R_eps)`.
    pub susceptibility_eps: DVector<f64>,
}

impl AssembledModel {
    pub fn marginal_log_posterior(&self) -> f64 {
        -0.5 * self.logdet_v - 0.5 * self.astar * self.bstar.ln() + 0.5 * self.logdet_sigma_beta
    }

    /// Applies a whitening map `T` with `T' T = V^-1`.
    pub fn whiten(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.whitener {
            Whitener::Identity => z.clone(),
            Whitener::Influence { b, .. } => b * z,
            Whitener::Cholesky(chol) => {
                chol.l_dirty().solve_lower_triangular(z).expect("Cholesky factor has a positive diagonal")
            }
        }
    }

    /// `z' V^-1 z`.
    pub fn quad_form(&self, z: &DVector<f64>) -> f64 {
        self.whiten(z).norm_squared()
    }

    /// Dense `V`; `O(n^3)` for effects and disturbances.
    pub fn v(&self) -> DMatrix<f64> {
        match &self.whitener {
            Whitener::Identity => {
                let n = self.xtilde.nrows();
                DMatrix::identity(n, n)
            }
            Whitener::Influence { lu, .. } => {
                let inv = lu.try_inverse().expect("factor checked nonsingular");
                &inv * inv.transpose()
            }
            Whitener::Cholesky(chol) => {
                let l = chol.l();
                &l * l.transpose()
            }
        }
    }

    /// Cholesky factor of `V`.
    pub fn v_chol(&self) -> Option<Cholesky<f64, Dyn>> {
        match &self.whitener {
            Whitener::Cholesky(chol) => Some(chol.clone()),
            _ => Cholesky::new(self.v()),
        }
    }

    /// Cholesky factor of `Sigma_beta^-1`, used to draw `beta`.
    pub fn precision_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.precision_chol
    }
}

/// Builds and assembles in one call.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    net: &Network,
    design: &DesignSet,
    gamma_x: &DVector<f64>,
    gamma_eps: &DVector<f64>,
    y: &DVector<f64>,
    spec: ModelSpec,
) -> Result<AssembledModel> {
    Problem::new(net, design, y, spec)?.assemble(gamma_x, gamma_eps)
}

/// `log |V|` from the structure of `V`: `-2 log|det(I - R_eps A)|` for
/// effects and disturbances, `2 log|det(I + R_eps A)|` for the moving average,
/// and a Cholesky factorization of the explicit `V` for the egocentric model
/// (here every actor is an ego).
pub fn log_determinant_fast(
    variant: Variant,
    net: &Network,
    weps: &DMatrix<f64>,
    gamma_eps: &DVector<f64>,
) -> Result<f64> {
    if weps.nrows() != net.n() || weps.ncols() != gamma_eps.len() {
        return Err(Error::DimensionMismatch("W_eps does not match network / gamma_eps".into()));
    }
    let reps = susceptibility_diag_eps(weps, gamma_eps);
    if variant == Variant::Durbin || reps.iter().all(|&r| r == 0.0) {
        return Ok(0.0);
    }
    let a = net.adjacency();
    match variant {
        Variant::Durbin => Ok(0.0),
        Variant::Effects | Variant::Disturbances => {
            let b = influence_factor(a, &reps, -1.0);
            let lu = b.clone().lu();
            let ld = linalg::lu_log_abs_det(&lu).ok_or(Error::SingularInfluence)?;
            if linalg::lu_rcond(&b, &lu) < RCOND_MIN {
                return Err(Error::SingularInfluence);
            }
            Ok(-2.0 * ld)
        }
        Variant::MovingAverage => {
            let c = influence_factor(a, &reps, 1.0);
            let lu = c.lu();
            let ld = linalg::lu_log_abs_det(&lu)
                .ok_or_else(|| Error::NotPositiveDefinite("I + R_eps A is singular".into()))?;
            Ok(2.0 * ld)
        }
        Variant::EgoMovingAverage => {
            let c = influence_factor(a, &reps, 1.0);
            let v = &c * c.transpose();
            let chol = Cholesky::new(v).ok_or_else(|| Error::NotPositiveDefinite("V".into()))?;
            Ok(linalg::chol_logdet(&chol))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::toy;
    use crate::graph::row_normalize;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        n: usize,
        rng: &mut ChaCha8Rng,
        q1: usize,
        q2: usize,
        directed: bool,
    ) -> (Network, DesignSet, DVector<f64>) {
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n));
            for j in 0..n {
                if i != j && rng.random::<f64>() < 0.25 {
                    edges.push((i, j));
                }
            }
        }
        let net = Network::from_edges(n, &edges, directed).unwrap();
        let normal = |rng: &mut ChaCha8Rng, c: usize| DMatrix::from_fn(n, c, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut x1 = normal(rng, 2);
        x1.column_mut(0).fill(1.0);
        let x2 = normal(rng, 2);
        let wx = normal(rng, q1);
        let mut weps = normal(rng, q2);
        if q2 > 0 {
            weps.column_mut(0).fill(1.0);
        }
        let design = DesignSet::new(x1, x2, wx, weps).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 3.0);
        (net, design, y)
    }

    fn spec(variant: Variant) -> ModelSpec {
        ModelSpec::new(variant, Priors { g1: 10.0, g2: 5.0, g3: 3.0, a: 2.0, b: 1.5 }).unwrap()
    }

    #[test]
    fn susceptibility_examples() {
        let wx = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let rx = susceptibility_diag_x(&wx, &DVector::from_vec(vec![0.1]));
        assert_abs_diff_eq!(rx[0], 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(rx[1], 0.9, epsilon = 1e-15);
        assert_eq!(susceptibility_diag_x(&wx, &DVector::zeros(1)), DVector::from_element(2, 1.0));

        let ones = DMatrix::from_element(3, 1, 1.0);
        let re = susceptibility_diag_eps(&ones, &DVector::from_vec(vec![0.3]));
        assert_eq!(re, DVector::from_element(3, 0.3));
        assert_eq!(susceptibility_diag_eps(&ones, &DVector::zeros(1)), DVector::zeros(3));
    }

    #[test]
    fn row_normalization_is_rank_one_susceptibility() {
        let net = toy();
        let (_, inv) = net.degree_and_inverse().unwrap();
        let weps = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { inv[i] });
        let re = susceptibility_diag_eps(&weps, &DVector::from_vec(vec![0.0, 0.4]));
        let scaled = DMatrix::from_diagonal(&re) * net.adjacency();
        assert_abs_diff_eq!(scaled, row_normalize(&net).unwrap() * 0.4, epsilon = 1e-15);

        let wx = DMatrix::from_column_slice(7, 1, &inv);
        let rx = susceptibility_diag_x(&wx, &DVector::from_vec(vec![0.5]));
        assert_abs_diff_eq!(rx[1], 1.0 + 0.5 / 5.0, epsilon = 1e-15);
    }

    #[test]
    fn toy_moving_average_covariances() {
        // Row-normalized A with homogeneous rho: V = (I + rho W)(I + rho W').
        let net = toy();
        let w = row_normalize(&net).unwrap();
        let wnet = Network::new(w, true).unwrap();
        let ones = DMatrix::from_element(7, 1, 1.0);
        let design = DesignSet::new(ones.clone(), DMatrix::zeros(7, 0), DMatrix::zeros(7, 0), ones).unwrap();
        let y = DVector::from_element(7, 1.0);
        let problem = Problem::new(&wnet, &design, &y, spec(Variant::MovingAverage)).unwrap();
        for rho in [0.1, 0.5] {
            let v = problem.covariance_v(&DVector::from_vec(vec![rho])).unwrap();
            // ego1 and alter1 share no neighbor, nor do ego2 and alter1, so
            // the rho^2 W W' term vanishes for both pairs.
            assert_abs_diff_eq!(v[(0, 2)], 1.5 * rho, epsilon = 1e-15);
            assert_abs_diff_eq!(v[(1, 2)], 0.7 * rho, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_influence_collapses_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (net, design, y) = random_instance(7, &mut rng, 1, 2, false);
        let gx = DVector::from_vec(vec![0.2]);
        let ge = DVector::zeros(2);
        let base = Problem::new(&net, &design.clone().without_eps(), &y, spec(Variant::Durbin))
            .unwrap()
            .assemble(&gx, &DVector::zeros(0))
            .unwrap();
        for v in [Variant::Effects, Variant::Disturbances, Variant::MovingAverage] {
            let m = Problem::new(&net, &design, &y, spec(v)).unwrap().assemble(&gx, &ge).unwrap();
            assert_eq!(m.logdet_v, 0.0);
            assert_eq!(m.v(), DMatrix::identity(7, 7));
            assert_eq!(m.xtilde, base.xtilde);
            assert_abs_diff_eq!(m.mu_beta, base.mu_beta, epsilon = 1e-12);
        }
    }

    /// Dense evaluation of the posterior constants with explicit `V^-1`.
    fn dense_bstar(
        problem: &Problem,
        xt: &DMatrix<f64>,
        v: &DMatrix<f64>,
        gx: &DVector<f64>,
        ge: &DVector<f64>,
    ) -> (f64, DVector<f64>) {
        let pr = problem.spec().priors;
        let vinv = v.clone().try_inverse().unwrap();
        let y = problem.y();
        let p = xt.ncols();
        let prec = xt.transpose() * &vinv * xt + DMatrix::identity(p, p) / pr.g1;
        let sigma = prec.clone().try_inverse().unwrap();
        let mu = &sigma * xt.transpose() * &vinv * y;
        let bstar = pr.b + (y.transpose() * &vinv * y)[0] - (mu.transpose() * &prec * &mu)[0]
            + gx.norm_squared() / pr.g2
            + ge.norm_squared() / pr.g3;
        (bstar, mu)
    }

    #[test]
    fn bstar_groupings_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for variant in [Variant::Effects, Variant::Disturbances, Variant::MovingAverage] {
            let (net, design, y) = random_instance(5, &mut rng, 1, 2, false);
            let problem = Problem::new(&net, &design, &y, spec(variant)).unwrap();
            let gx = DVector::from_vec(vec![0.3]);
            let ge = DVector::from_vec(vec![0.15, -0.05]);
            let m = problem.assemble(&gx, &ge).unwrap();
            let v = problem.covariance_v(&ge).unwrap();
            let (bstar, mu) = dense_bstar(&problem, &m.xtilde, &v, &gx, &ge);
            assert_abs_diff_eq!(m.bstar, bstar, epsilon = 1e-10);
            assert_abs_diff_eq!(m.mu_beta, mu, epsilon = 1e-10);
        }
    }

    #[test]
    fn assembled_v_is_symmetric_and_factorizable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in [Variant::Effects, Variant::Disturbances, Variant::MovingAverage] {
            let (net, design, y) = random_instance(8, &mut rng, 0, 2, true);
            let problem = Problem::new(&net, &design, &y, spec(variant)).unwrap();
            let m = problem.assemble(&DVector::zeros(0), &DVector::from_vec(vec![0.1, 0.05])).unwrap();
            let v = m.v();
            assert!((&v - v.transpose()).amax() < 1e-12);
            let chol = m.v_chol().unwrap();
            assert_abs_diff_eq!(linalg::chol_logdet(&chol), m.logdet_v, epsilon = 1e-9);
        }
    }

    #[test]
    fn fast_log_determinant_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for variant in [Variant::Disturbances, Variant::Effects, Variant::MovingAverage, Variant::EgoMovingAverage] {
            let (net, design, y) = random_instance(6, &mut rng, 0, 2, false);
            let ge = DVector::from_vec(vec![rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3]);
            let fast = log_determinant_fast(variant, &net, &design.weps, &ge).unwrap();
            let problem = Problem::new(&net, &design, &y, spec(variant)).unwrap();
            let v = problem.covariance_v(&ge).unwrap();
            let dense = linalg::chol_logdet(&Cholesky::new(v).unwrap());
            assert_abs_diff_eq!(fast, dense, epsilon = 1e-8);
        }
    }

    #[test]
    fn fast_log_determinant_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (net, design, _) = random_instance(6, &mut rng, 0, 2, false);
        for v in Variant::ALL {
            assert_eq!(log_determinant_fast(v, &net, &design.weps, &DVector::zeros(2)).unwrap(), 0.0);
        }
        // I + R A is unit upper triangular on a directed 2-chain.
        let chain = Network::from_edges(3, &[(0, 1), (1, 2)], true).unwrap();
        let ones = DMatrix::from_element(3, 1, 1.0);
        let ld = log_determinant_fast(Variant::MovingAverage, &chain, &ones, &DVector::from_vec(vec![0.7])).unwrap();
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn singular_influence_is_reported() {
        // K2 with rho = 1: I - A is singular.
        let k2 = Network::from_edges(2, &[(0, 1)], false).unwrap();
        let ones = DMatrix::from_element(2, 1, 1.0);
        let design = DesignSet::new(ones.clone(), DMatrix::zeros(2, 0), DMatrix::zeros(2, 0), ones).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let problem = Problem::new(&k2, &design, &y, spec(Variant::Disturbances)).unwrap();
        let err = problem.assemble(&DVector::zeros(0), &DVector::from_vec(vec![1.0])).unwrap_err();
        assert_eq!(err, Error::SingularInfluence);
        // MA with rho = -1 makes I + R A singular, hence V singular.
        let problem = problem.clone();
        let ma = Problem::new(&k2, problem.design(), &y, spec(Variant::MovingAverage)).unwrap();
        let err = ma.assemble(&DVector::zeros(0), &DVector::from_vec(vec![-1.0])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)), "{err:?}");
    }

    #[test]
    fn marginal_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (net, design, y) = random_instance(9, &mut rng, 1, 2, false);
        let problem = Problem::new(&net, &design, &y, spec(Variant::Disturbances)).unwrap();
        let gx = DVector::from_vec(vec![0.1]);
        let ge = DVector::from_vec(vec![0.2, 0.1]);
        let a = problem.marginal_log_posterior(&gx, &ge).unwrap();
        let b = problem.marginal_log_posterior(&gx, &ge).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn design_validation() {
        let ones = DMatrix::from_element(4, 1, 1.0);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 5.0]);
        let err = DesignSet::new(ones.clone(), x.clone(), ones.clone() * 2.0, ones.clone()).unwrap_err();
        assert_eq!(err, Error::ProportionalToIntercept(0));
        let dup = DMatrix::from_fn(4, 2, |i, _| x[i]);
        let err = DesignSet::new(ones.clone(), dup, x.clone(), ones.clone()).unwrap_err();
        assert_eq!(err, Error::RankDeficient("X2".into()));
        let err = DesignSet::new(ones.clone(), DMatrix::zeros(3, 0), x, ones).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("spatial_lag".parse::<Variant>().is_err());
    }
}

//! Per-user ridge statistics, confidence widths and sample-size thresholds.
//!
//! Everything here is a pure function of its inputs. Users without samples
//! get `M_u = λI`, `θ̂_u = 0` and an infinite confidence width; the infinite
//! width propagates through the graph rules so that such users never connect
//! (connect rule) and never lose edges (remove rule).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::quadrature;

/// Tolerance on `‖a‖₂ ≤ 1` for actions and candidates.
pub const NORM_SLACK: f64 = 1e-9;

/// Absolute tolerance used by [`smoothed_regularity`].
/// Relative accuracy demanded of [`smoothed_regularity`] on top of the
/// absolute tolerance.
pub const RELATIVE_TOL: f64 = 1e-11;

pub const SMOOTHED_REGULARITY_TOL: f64 = 1e-9;

/// Algorithm parameters shared by both clustering algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    /// Scaling of the confidence widths in the cluster-phase conditions.
    pub alpha: f64,
    /// Ridge regularizer.
    pub lambda: f64,
    /// Failure probability.
    pub delta: f64,
    /// Smoothed regularity parameter of the logged actions.
    pub lambda_tilde: f64,
    pub num_users: usize,
    pub dim: usize,
}

impl AlgoConfig {
    /// `α = 1`, `λ = 1`, `δ = 0.1`, `λ̃_a = 1`.
    pub fn theory(num_users: usize, dim: usize) -> Self {
        AlgoConfig {
            alpha: 1.0,
            lambda: 1.0,
            delta: 0.1,
            lambda_tilde: 1.0,
            num_users,
            dim,
        }
    }

    /// `α = 0.1`, `λ = 0.5`, `δ = 0.01`, `λ̃_a = 1`.
    pub fn paper_exp(num_users: usize, dim: usize) -> Self {
        AlgoConfig {
            alpha: 0.1,
            lambda: 0.5,
            delta: 0.01,
            lambda_tilde: 1.0,
            num_users,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        }
        positive("alpha", self.alpha)?;
        positive("lambda", self.lambda)?;
        positive("delta", self.delta)?;
        positive("lambda_tilde", self.lambda_tilde)?;
        if self.delta >= 1.0 {
            return Err(Error::invalid("delta", format!("must be < 1, got {}", self.delta)));
        }
        if self.num_users == 0 {
            return Err(Error::invalid("num_users", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        Ok(())
    }

    /// `log(2U/δ)`, the union-bound term shared by every width.
    pub(crate) fn union_log(&self) -> f64 {
        (2.0 * self.num_users as f64 / self.delta).ln()
    }
}

/// One logged interaction: the action shown and the reward observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub action: Vec<f64>,
    pub reward: f64,
}

impl Sample {
    pub fn new(action: Vec<f64>, reward: f64) -> Self {
        Sample { action, reward }
    }
}

/// Per-user ordered sample lists over the contiguous user range `0..U`.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    dim: usize,
    per_user: Vec<Vec<Sample>>,
}

impl OfflineDataset {
    pub fn new(dim: usize, num_users: usize) -> Self {
        OfflineDataset {
            dim,
            per_user: vec![Vec::new(); num_users],
        }
    }

    /// Builds a dataset from per-user lists, checking dimension and norm of
    /// every action.
    pub fn from_per_user(dim: usize, per_user: Vec<Vec<Sample>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        for samples in &per_user {
            check_samples(samples, dim)?;
        }
        Ok(OfflineDataset { dim, per_user })
    }

    pub fn push(&mut self, user: usize, sample: Sample) -> Result<()> {
        let num_users = self.num_users();
        let dim = self.dim;
        let list = self
            .per_user
            .get_mut(user)
            .ok_or(Error::UserOutOfRange { user, num_users })?;
        check_action(&sample.action, dim, list.len())?;
        list.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn user(&self, u: usize) -> &[Sample] {
        &self.per_user[u]
    }

    pub fn per_user(&self) -> &[Vec<Sample>] {
        &self.per_user
    }

    /// `N_u`.
    pub fn count(&self, u: usize) -> usize {
        self.per_user[u].len()
    }

    /// `N_S = Σ_{v∈S} N_v`.
    pub fn count_in(&self, users: impl IntoIterator<Item = usize>) -> usize {
        users.into_iter().map(|u| self.count(u)).sum()
    }

    pub fn total(&self) -> usize {
        self.per_user.iter().map(Vec::len).sum()
    }
}

fn check_action(action: &[f64], dim: usize, index: usize) -> Result<()> {
    if action.len() != dim {
        return Err(Error::DimensionMismatch {
            index,
            expected: dim,
            found: action.len(),
        });
    }
    let n = linalg::norm(action);
    if !(n <= 1.0 + NORM_SLACK) {
        return Err(Error::invalid(
            "action",
            format!("sample {index} has norm {n}, must be at most 1"),
        ));
    }
    Ok(())
}

fn check_samples(samples: &[Sample], dim: usize) -> Result<()> {
    samples
        .iter()
        .enumerate()
        .try_for_each(|(i, s)| check_action(&s.action, dim, i))
}

/// Unregularized sufficient statistics `(Σ a aᵀ, Σ r a, N)`.
///
/// Pooling users amounts to summing these, which is what the aggregation
/// step relies on.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    pub n: usize,
}

impl SufficientStats {
    pub fn zeros(dim: usize) -> Self {
        SufficientStats {
            gram: DMatrix::zeros(dim, dim),
            moment: DVector::zeros(dim),
            n: 0,
        }
    }

    pub fn from_samples(samples: &[Sample], dim: usize) -> Result<Self> {
        let mut s = SufficientStats::zeros(dim);
        for (i, sample) in samples.iter().enumerate() {
            if sample.action.len() != dim {
                return Err(Error::DimensionMismatch {
                    index: i,
                    expected: dim,
                    found: sample.action.len(),
                });
            }
            s.push(&sample.action, sample.reward);
        }
        Ok(s)
    }

    pub fn push(&mut self, action: &[f64], reward: f64) {
        linalg::add_outer(&mut self.gram, action);
        for (m, a) in self.moment.iter_mut().zip(action) {
            *m += reward * a;
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        self.gram += &other.gram;
        self.moment += &other.moment;
        self.n += other.n;
    }

    pub fn dim(&self) -> usize {
        self.moment.len()
    }
}

/// Ridge statistics of a single user.
#[derive(Clone, Debug)]
pub struct UserStats {
    /// `M_u = λI + Σ a aᵀ`.
    pub m: DMatrix<f64>,
    /// `b_u = Σ r a`.
    pub b: DVector<f64>,
    /// Ridge estimate `θ̂_u` solving `M_u θ = b_u`.
    pub theta_hat: DVector<f64>,
    /// Confidence width `CI_u`; `+∞` iff `n == 0`.
    pub ci: f64,
    pub n: usize,
}

impl UserStats {
    pub fn from_sufficient(suff: &SufficientStats, cfg: &AlgoConfig) -> Result<Self> {
        let d = suff.dim();
        let m = DMatrix::identity(d, d) * cfg.lambda + &suff.gram;
        let factor = SpdFactor::new(&m)?;
        let theta_hat = factor.solve(&suff.moment);
        Ok(UserStats {
            m,
            b: suff.moment.clone(),
            theta_hat,
            ci: confidence_width(suff.n, cfg),
            n: suff.n,
        })
    }
}

/// Ridge statistics of one user's samples.
pub fn ridge_stats(data_u: &[Sample], cfg: &AlgoConfig) -> Result<UserStats> {
    let suff = SufficientStats::from_samples(data_u, cfg.dim)?;
    UserStats::from_sufficient(&suff, cfg)
}

/// Computes [`UserStats`] for every user of `data`.
pub fn all_user_stats(data: &OfflineDataset, cfg: &AlgoConfig) -> Result<Vec<UserStats>> {
    crate::par::map_range(data.num_users(), crate::par::Exec::default(), |u| {
        ridge_stats(data.user(u), cfg)
    })
    .into_iter()
    .collect()
}

/// `CI(n) = (√(d log(1 + n/(λd)) + 2 log(2U/δ)) + √λ) / √(λ̃_a n / 2)`,
/// and `+∞` for `n = 0`.
pub fn confidence_width(n: usize, cfg: &AlgoConfig) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let n = n as f64;
    let d = cfg.dim as f64;
    let radius = (d * (1.0 + n / (cfg.lambda * d)).ln() + 2.0 * cfg.union_log()).sqrt()
        + cfg.lambda.sqrt();
    radius / (cfg.lambda_tilde * n / 2.0).sqrt()
}

fn n_min_real(cfg: &AlgoConfig) -> f64 {
    let lt2 = cfg.lambda_tilde * cfg.lambda_tilde;
    let arg = 8.0 * cfg.num_users as f64 * cfg.dim as f64 / (lt2 * cfg.delta);
    if arg <= 1.0 {
        return 1.0;
    }
    16.0 / lt2 * arg.ln()
}

/// Minimum per-user sample count `N_min` for a user to be connectable:
/// `⌈(16/λ̃_a²) log(8Ud/(λ̃_a² δ))⌉`, at least 1.
pub fn n_min_threshold(cfg: &AlgoConfig) -> usize {
    (n_min_real(cfg).ceil() as usize).max(1)
}

/// Smoothed regularity `λ̃_a = ∫₀^{λ_a} (1 − exp(−(λ_a − x)²/(2σ²)))^S dx`.
pub fn smoothed_regularity(lambda_a: f64, sigma: f64, s: u32) -> Result<f64> {
    if !(lambda_a.is_finite() && lambda_a > 0.0) {
        return Err(Error::invalid("lambda_a", format!("must be > 0, got {lambda_a}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    if s == 0 {
        return Err(Error::invalid("s", "candidate-set size must be positive"));
    }
    let two_var = 2.0 * sigma * sigma;
    let exponent = s as i32;
    let integrand = |x: f64| {
        let t = lambda_a - x;
        (-(-(t * t) / two_var).exp_m1()).powi(exponent)
    };
    // The integral can be far below the absolute tolerance (small λ_a, wide
    // σ, large S), so also demand relative accuracy against a coarse pass.
    let coarse = quadrature::adaptive_simpson(integrand, 0.0, lambda_a, SMOOTHED_REGULARITY_TOL, quadrature::MAX_DEPTH)?;
    let tol = SMOOTHED_REGULARITY_TOL.min(RELATIVE_TOL * coarse.abs()).max(f64::MIN_POSITIVE);
    quadrature::adaptive_simpson(integrand, 0.0, lambda_a, tol, quadrature::MAX_DEPTH)
}

/// Regularization of pooled statistics: `λ ñ_u I` (one `λI` per pooled
/// user) or a single `λI`. The same choice selects the count used inside the
/// decision-phase width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regularizer {
    PerNeighbor,
    Single,
}

/// `β = √(d log(1 + Ñ/(λ ñ d)) + 2 log(2U/δ)) + √λ`, with `ñ` forced to 1
/// for [`Regularizer::Single`].
pub fn beta_width(n_tilde: usize, n_count: usize, cfg: &AlgoConfig, variant: Regularizer) -> f64 {
    let n_count = match variant {
        Regularizer::PerNeighbor => n_count.max(1),
        Regularizer::Single => 1,
    } as f64;
    let d = cfg.dim as f64;
    let inner = d * (1.0 + n_tilde as f64 / (cfg.lambda * n_count * d)).ln() + 2.0 * cfg.union_log();
    inner.sqrt() + cfg.lambda.sqrt()
}

/// Real-valued per-user sample requirement for the dataset to be
/// δ-sufficient at heterogeneity gap `gamma`.
pub fn sufficiency_bound(gamma: f64, cfg: &AlgoConfig) -> f64 {
    let lt = cfg.lambda_tilde;
    let d = cfg.dim as f64;
    let eigen_branch = 16.0 / (lt * lt) * (8.0 * d * cfg.num_users as f64 / (lt * lt * cfg.delta)).ln();
    let separation_branch = 512.0 * d / (gamma * gamma * lt) * cfg.union_log();
    eigen_branch.max(separation_branch)
}

/// Smallest integer sample count that is δ-sufficient at gap `gamma`.
pub fn sufficiency_threshold(gamma: f64, cfg: &AlgoConfig) -> usize {
    sufficiency_bound(gamma, cfg).ceil().max(1.0) as usize
}

/// Whether `n` samples make a user's dataset δ-sufficient at gap `gamma`.
pub fn sufficiency_check(n: usize, gamma: f64, cfg: &AlgoConfig) -> bool {
    n as f64 >= sufficiency_bound(gamma, cfg)
}

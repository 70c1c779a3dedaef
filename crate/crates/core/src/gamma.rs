//! Data-driven choice of the connection threshold `γ̂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{AlgoConfig, UserStats};
use crate::linalg;

/// Lower and upper confidence bounds on `‖θ_u − θ_v‖₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEstimate {
    /// `Γ(u, v) = ‖θ̂_u − θ̂_v‖ − α(CI_u + CI_v)`.
    pub lcb: f64,
    /// `Γ̃(u, v) = ‖θ̂_u − θ̂_v‖ + α(CI_u + CI_v)`.
    pub ucb: f64,
    pub pair: (usize, usize),
}

/// How `γ̂` is chosen for a test user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GammaPolicy {
    /// Smallest lower bound over the certified-heterogeneous set.
    Underestimate,
    /// Smallest upper bound over the certified-heterogeneous set.
    Overestimate,
    /// A fixed threshold, used by the sweep harness.
    Fixed(f64),
}

impl GammaPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GammaPolicy::Fixed(v) if !(v.is_finite() && v >= 0.0) => {
                Err(Error::invalid("gamma_hat", format!("fixed threshold must be finite and >= 0, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

fn check_user(u: usize, n: usize) -> Result<()> {
    if u >= n {
        Err(Error::UserOutOfRange { user: u, num_users: n })
    } else {
        Ok(())
    }
}

/// Confidence bounds on the preference gap between `u` and `v`; both bounds
/// are infinite when either user has no data.
pub fn pairwise_gap(u: usize, v: usize, stats: &[UserStats], cfg: &AlgoConfig) -> Result<GapEstimate> {
    if u == v {
        return Err(Error::SameUser(u));
    }
    check_user(u, stats.len())?;
    check_user(v, stats.len())?;
    let (su, sv) = (&stats[u], &stats[v]);
    let width = su.ci + sv.ci;
    if width.is_infinite() {
        return Ok(GapEstimate {
            lcb: f64::NEG_INFINITY,
            ucb: f64::INFINITY,
            pair: (u, v),
        });
    }
    let dist = linalg::distance(&su.theta_hat, &sv.theta_hat);
    let slack = cfg.alpha * width;
    Ok(GapEstimate {
        lcb: dist - slack,
        ucb: dist + slack,
        pair: (u, v),
    })
}

/// `M(u) = {v ≠ u : Γ(u, v) > 0}`, users certified to sit in another cluster.
pub fn candidate_set(u_test: usize, stats: &[UserStats], cfg: &AlgoConfig) -> Result<Vec<usize>> {
    Ok(certified_gaps(u_test, stats, cfg)?.into_iter().map(|g| g.pair.1).collect())
}

fn certified_gaps(u_test: usize, stats: &[UserStats], cfg: &AlgoConfig) -> Result<Vec<GapEstimate>> {
    check_user(u_test, stats.len())?;
    (0..stats.len())
        .filter(|&v| v != u_test)
        .map(|v| pairwise_gap(u_test, v, stats, cfg))
        .filter(|g| g.as_ref().map_or(true, |g| g.lcb > 0.0))
        .collect()
}

/// Picks `γ̂` for `u_test`. Both data-driven policies return 0 when `M(u)`
/// is empty.
pub fn select_gamma_hat(u_test: usize, stats: &[UserStats], cfg: &AlgoConfig, policy: GammaPolicy) -> Result<f64> {
    policy.validate()?;
    if let GammaPolicy::Fixed(v) = policy {
        return Ok(v);
    }
    let gaps = certified_gaps(u_test, stats, cfg)?;
    let pick = |g: &GapEstimate| match policy {
        GammaPolicy::Underestimate => g.lcb,
        _ => g.ucb,
    };
    Ok(gaps.iter().map(pick).reduce(f64::min).unwrap_or(0.0))
}

/// `γ̂` from a precomputed row of distances `‖θ̂_u − θ̂_v‖` and widths.
/// Shares the semantics of [`select_gamma_hat`] without recomputing norms.
pub(crate) fn select_from_row(u: usize, dist_row: &[f64], stats: &[UserStats], alpha: f64, policy: GammaPolicy) -> f64 {
    match policy {
        GammaPolicy::Fixed(v) => v,
        GammaPolicy::Underestimate | GammaPolicy::Overestimate => {
            let mut best = f64::INFINITY;
            let mut any = false;
            for (v, &dist) in dist_row.iter().enumerate() {
                if v == u {
                    continue;
                }
                let width = stats[u].ci + stats[v].ci;
                if width.is_infinite() {
                    continue;
                }
                let slack = alpha * width;
                if dist - slack > 0.0 {
                    any = true;
                    let value = if policy == GammaPolicy::Underestimate {
                        dist - slack
                    } else {
                        dist + slack
                    };
                    best = best.min(value);
                }
            }
            if any {
                best
            } else {
                0.0
            }
        }
    }
}

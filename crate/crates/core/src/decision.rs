//! Pessimistic action selection and the end-to-end recommenders.
//!
//! The free functions (`off_c2lub_recommend` and friends) recompute all
//! statistics from scratch on every call. [`PreparedData`] and
//! [`PreparedMethod`] compute the same quantities once per dataset and answer
//! many queries against them; both paths produce identical recommendations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    all_user_stats, beta_width, n_min_threshold, AlgoConfig, OfflineDataset, Regularizer, SufficientStats, UserStats,
    NORM_SLACK,
};
use crate::gamma::{self, select_gamma_hat, GammaPolicy};
use crate::graph::{self, build_graph_connect, build_graph_remove, AggregatedStats, PoolMode, UserGraph};
use crate::linalg;
use crate::par::{self, Exec};

/// A user to serve and the actions on offer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestQuery {
    #[serde(rename = "u")]
    pub user: usize,
    pub candidates: Vec<Vec<f64>>,
}

impl TestQuery {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        for (i, a) in self.candidates.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::DimensionMismatch {
                    index: i,
                    expected: dim,
                    found: a.len(),
                });
            }
            let n = linalg::norm(a);
            if !(n <= 1.0 + NORM_SLACK) {
                return Err(Error::invalid("candidates", format!("candidate {i} has norm {n}")));
            }
        }
        Ok(())
    }
}

/// The chosen candidate and its pessimistic score `θ̃ᵀa − β‖a‖_{M̃⁻¹}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recommendation {
    pub chosen_index: usize,
    pub score: f64,
}

/// Maximizes `θ̃ᵀa − β‖a‖_{M̃⁻¹}` over the candidates; ties go to the lowest
/// index.
pub fn pessimistic_select(agg: &AggregatedStats, query: &TestQuery, beta: f64) -> Result<Recommendation> {
    if query.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let theta = agg.theta_tilde.as_slice();
    let mut best: Option<Recommendation> = None;
    for (i, a) in query.candidates.iter().enumerate() {
        if a.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                index: i,
                expected: theta.len(),
                found: a.len(),
            });
        }
        let score = linalg::dot(theta, a) - beta * agg.inv_norm(a);
        if best.is_none_or(|b| score > b.score) {
            best = Some(Recommendation { chosen_index: i, score });
        }
    }
    Ok(best.expect("nonempty candidates"))
}

fn check_query(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig) -> Result<()> {
    cfg.validate()?;
    if data.dim() != cfg.dim {
        return Err(Error::invalid(
            "dim",
            format!("dataset dimension {} differs from config {}", data.dim(), cfg.dim),
        ));
    }
    if data.num_users() != cfg.num_users {
        return Err(Error::invalid(
            "num_users",
            format!("dataset has {} users, config says {}", data.num_users(), cfg.num_users),
        ));
    }
    if query.user >= data.num_users() {
        return Err(Error::UserOutOfRange {
            user: query.user,
            num_users: data.num_users(),
        });
    }
    Ok(())
}

fn decide(
    graph: &UserGraph,
    data: &OfflineDataset,
    query: &TestQuery,
    cfg: &AlgoConfig,
    mode: PoolMode,
    reg: Regularizer,
) -> Result<Recommendation> {
    let agg = graph::aggregate(query.user, graph, data, cfg, mode, reg)?;
    let beta = beta_width(agg.n_samples, agg.n_users, cfg, reg);
    pessimistic_select(&agg, query, beta)
}

/// Connection-based clustering: empty graph, connect close and data-rich
/// pairs below `γ̂`, pool one-hop neighbors with `λ ñ I`, act pessimistically.
pub fn off_c2lub_recommend(
    data: &OfflineDataset,
    query: &TestQuery,
    cfg: &AlgoConfig,
    policy: GammaPolicy,
) -> Result<Recommendation> {
    check_query(data, query, cfg)?;
    let stats = all_user_stats(data, cfg)?;
    let gamma_hat = select_gamma_hat(query.user, &stats, cfg, policy)?;
    let g = build_graph_connect(&stats, gamma_hat, cfg);
    decide(&g, data, query, cfg, PoolMode::OneHop, Regularizer::PerNeighbor)
}

/// Removal-based clustering: complete graph, drop certified-different
/// pairs, pool one-hop neighbors with `λ I`, act pessimistically.
pub fn off_club_recommend(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig) -> Result<Recommendation> {
    check_query(data, query, cfg)?;
    let stats = all_user_stats(data, cfg)?;
    let g = build_graph_remove(&stats, cfg);
    decide(&g, data, query, cfg, PoolMode::OneHop, Regularizer::Single)
}

/// Per-user pessimistic ridge baseline using only the query user's data.
pub fn linucb_ind_recommend(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig) -> Result<Recommendation> {
    check_query(data, query, cfg)?;
    let g = UserGraph::empty(data.num_users(), graph::GraphRule::ConnectBuilt);
    decide(&g, data, query, cfg, PoolMode::OneHop, Regularizer::Single)
}

/// Removal graph pooled over whole connected components, as online CLUB
/// does.
pub fn club_component_recommend(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig) -> Result<Recommendation> {
    check_query(data, query, cfg)?;
    let stats = all_user_stats(data, cfg)?;
    let g = build_graph_remove(&stats, cfg);
    decide(&g, data, query, cfg, PoolMode::Component, Regularizer::Single)
}

/// A recommender configuration evaluated by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Method {
    OffC2lub(GammaPolicy),
    OffClub,
    LinucbInd,
    ClubComponent,
}

impl Method {
    pub fn recommend(&self, data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig) -> Result<Recommendation> {
        match *self {
            Method::OffC2lub(p) => off_c2lub_recommend(data, query, cfg, p),
            Method::OffClub => off_club_recommend(data, query, cfg),
            Method::LinucbInd => linucb_ind_recommend(data, query, cfg),
            Method::ClubComponent => club_component_recommend(data, query, cfg),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::OffC2lub(GammaPolicy::Underestimate) => f.write_str("off-c2lub-under"),
            Method::OffC2lub(GammaPolicy::Overestimate) => f.write_str("off-c2lub-over"),
            Method::OffC2lub(GammaPolicy::Fixed(v)) => write!(f, "off-c2lub-fixed={v}"),
            Method::OffClub => f.write_str("off-club"),
            Method::LinucbInd => f.write_str("linucb-ind"),
            Method::ClubComponent => f.write_str("club-component"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts the names produced by `Display`; bare `off-c2lub` means the
    /// overestimation policy.
    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "off-c2lub" | "off-c2lub-over" => Method::OffC2lub(GammaPolicy::Overestimate),
            "off-c2lub-under" => Method::OffC2lub(GammaPolicy::Underestimate),
            "off-club" => Method::OffClub,
            "linucb-ind" => Method::LinucbInd,
            "club-component" => Method::ClubComponent,
            other => {
                let value = other
                    .strip_prefix("off-c2lub-fixed=")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid("algorithm", format!("unknown algorithm `{other}`")))?;
                let policy = GammaPolicy::Fixed(value);
                policy.validate()?;
                Method::OffC2lub(policy)
            }
        };
        Ok(m)
    }
}

/// Per-dataset statistics shared by every method.
#[derive(Clone, Debug)]
pub struct PreparedData {
    cfg: AlgoConfig,
    suff: Vec<SufficientStats>,
    stats: Vec<UserStats>,
    n_min: usize,
}

impl PreparedData {
    pub fn new(data: &OfflineDataset, cfg: &AlgoConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        if data.dim() != cfg.dim || data.num_users() != cfg.num_users {
            return Err(Error::invalid(
                "cfg",
                format!(
                    "config (U={}, d={}) does not match dataset (U={}, d={})",
                    cfg.num_users,
                    cfg.dim,
                    data.num_users(),
                    data.dim()
                ),
            ));
        }
        let suff = par::map_range(data.num_users(), exec, |u| SufficientStats::from_samples(data.user(u), cfg.dim))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let stats = par::map_slice(&suff, exec, |s| UserStats::from_sufficient(s, cfg))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            cfg: *cfg,
            suff,
            stats,
            n_min: n_min_threshold(cfg),
        })
    }

    pub fn stats(&self) -> &[UserStats] {
        &self.stats
    }

    pub fn cfg(&self) -> &AlgoConfig {
        &self.cfg
    }

    fn distances_from(&self, u: usize) -> Vec<f64> {
        let tu = &self.stats[u].theta_hat;
        self.stats.iter().map(|s| linalg::distance(tu, &s.theta_hat)).collect()
    }

    /// `γ̂` that `policy` selects for user `u`.
    pub fn gamma_hat(&self, u: usize, policy: GammaPolicy) -> f64 {
        gamma::select_from_row(u, &self.distances_from(u), &self.stats, self.cfg.alpha, policy)
    }

    /// Connect-rule neighbors of `u` at threshold `gamma_hat`.
    pub fn connect_neighbors(&self, u: usize, gamma_hat: f64) -> Vec<usize> {
        let su = &self.stats[u];
        (0..self.stats.len())
            .filter(|&v| v != u && graph::connect_condition(su, &self.stats[v], gamma_hat, self.cfg.alpha, self.n_min))
            .collect()
    }

    pub fn remove_graph(&self, exec: Exec) -> UserGraph {
        graph::build_graph_remove_with(&self.stats, &self.cfg, exec)
    }

    fn pooled(&self, members: &[usize], reg: Regularizer) -> Result<UserModel> {
        let agg = AggregatedStats::pool(members, &self.suff, &self.cfg, reg)?;
        let beta = beta_width(agg.n_samples, agg.n_users, &self.cfg, reg);
        Ok(UserModel { agg, beta, gamma_hat: None })
    }
}

#[derive(Clone, Debug)]
struct UserModel {
    agg: AggregatedStats,
    beta: f64,
    gamma_hat: Option<f64>,
}

/// A method's pooled statistics for a set of users, ready to answer queries.
#[derive(Clone, Debug)]
pub struct PreparedMethod {
    method: Method,
    models: Vec<Option<UserModel>>,
}

impl PreparedMethod {
    /// Prepares `method` for the users listed in `users` (duplicates are
    /// fine); queries for other users fail.
    pub fn new(prep: &PreparedData, method: Method, users: &[usize], exec: Exec) -> Result<Self> {
        let n = prep.stats.len();
        let mut needed = vec![false; n];
        for &u in users {
            if u >= n {
                return Err(Error::UserOutOfRange { user: u, num_users: n });
            }
            needed[u] = true;
        }
        if let Method::OffC2lub(p) = method {
            p.validate()?;
        }
        let remove = match method {
            Method::OffClub | Method::ClubComponent => Some(prep.remove_graph(exec)),
            _ => None,
        };
        let components = match (&remove, method) {
            (Some(g), Method::ClubComponent) => Some(g.components()),
            _ => None,
        };
        let models = par::map_range(n, exec, |u| -> Result<Option<UserModel>> {
            if !needed[u] {
                return Ok(None);
            }
            let model = match method {
                Method::LinucbInd => prep.pooled(&[u], Regularizer::Single)?,
                Method::OffClub => {
                    let members = remove.as_ref().expect("graph").pool_members(u, PoolMode::OneHop);
                    prep.pooled(&members, Regularizer::Single)?
                }
                Method::ClubComponent => {
                    let labels = components.as_ref().expect("components");
                    let members: Vec<usize> = (0..n).filter(|&v| labels[v] == labels[u]).collect();
                    prep.pooled(&members, Regularizer::Single)?
                }
                Method::OffC2lub(policy) => {
                    let gamma_hat = prep.gamma_hat(u, policy);
                    let mut members = prep.connect_neighbors(u, gamma_hat);
                    members.push(u);
                    members.sort_unstable();
                    let mut m = prep.pooled(&members, Regularizer::PerNeighbor)?;
                    m.gamma_hat = Some(gamma_hat);
                    m
                }
            };
            Ok(Some(model))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(PreparedMethod { method, models })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn recommend(&self, query: &TestQuery) -> Result<Recommendation> {
        let model = self
            .models
            .get(query.user)
            .and_then(Option::as_ref)
            .ok_or(Error::UserOutOfRange {
                user: query.user,
                num_users: self.models.len(),
            })?;
        pessimistic_select(&model.agg, query, model.beta)
    }

    /// `γ̂` chosen for user `u` (connection-based method only).
    pub fn gamma_hat(&self, u: usize) -> Option<f64> {
        self.models.get(u).and_then(Option::as_ref).and_then(|m| m.gamma_hat)
    }

    /// Pooled sample count `Ñ_u` for a prepared user.
    pub fn pooled_samples(&self, u: usize) -> Option<usize> {
        self.models.get(u).and_then(Option::as_ref).map(|m| m.agg.n_samples)
    }
}

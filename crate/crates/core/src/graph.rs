//! User similarity graphs and neighbor pooling.
//!
//! Both cluster-phase rules visit every unordered pair `u₁ < u₂` exactly once,
//! so a build costs `O(U² d)`. The conditions are symmetric, which makes the
//! visiting order irrelevant; rows are evaluated in parallel into a
//! write-once adjacency buffer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    n_min_threshold, AlgoConfig, OfflineDataset, Regularizer, SufficientStats, UserStats,
};
use crate::linalg::{self, SpdFactor};
use crate::par::{self, Exec};

/// Which cluster-phase rule produced a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphRule {
    /// Started empty; edges added by the connect condition.
    ConnectBuilt,
    /// Started complete; edges dropped by the remove condition.
    RemoveBuilt,
}

/// Undirected simple graph over users `0..U`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserGraph {
    num_users: usize,
    adjacency: Vec<bool>,
    rule: GraphRule,
}

impl UserGraph {
    pub fn empty(num_users: usize, rule: GraphRule) -> Self {
        UserGraph {
            num_users,
            adjacency: vec![false; num_users * num_users],
            rule,
        }
    }

    pub fn complete(num_users: usize, rule: GraphRule) -> Self {
        let mut g = UserGraph {
            num_users,
            adjacency: vec![true; num_users * num_users],
            rule,
        };
        for u in 0..num_users {
            g.adjacency[u * num_users + u] = false;
        }
        g
    }

    /// Builds a graph from an explicit edge list; self-loops are ignored.
    pub fn from_edges(num_users: usize, rule: GraphRule, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = UserGraph::empty(num_users, rule);
        for &(u, v) in edges {
            for w in [u, v] {
                if w >= num_users {
                    return Err(Error::UserOutOfRange { user: w, num_users });
                }
            }
            if u != v {
                g.set(u, v, true);
            }
        }
        Ok(g)
    }

    fn set(&mut self, u: usize, v: usize, on: bool) {
        self.adjacency[u * self.num_users + v] = on;
        self.adjacency[v * self.num_users + u] = on;
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn rule(&self) -> GraphRule {
        self.rule
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u * self.num_users + v]
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.adjacency[u * self.num_users..(u + 1) * self.num_users];
        row.iter().enumerate().filter(|(_, &e)| e).map(|(v, _)| v)
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).count()
    }

    /// Edges as ordered pairs `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_users;
        (0..n)
            .flat_map(|u| ((u + 1)..n).filter(move |&v| self.has_edge(u, v)).map(move |v| (u, v)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&e| e).count() / 2
    }

    pub fn is_symmetric_irreflexive(&self) -> bool {
        let n = self.num_users;
        (0..n).all(|u| !self.has_edge(u, u) && (0..n).all(|v| self.has_edge(u, v) == self.has_edge(v, u)))
    }

    /// Component label of every user; each component is labeled by its
    /// smallest member.
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.num_users);
        for (u, v) in self.edges() {
            uf.union(u, v);
        }
        let mut smallest = vec![usize::MAX; self.num_users];
        for u in 0..self.num_users {
            let r = uf.find(u);
            smallest[r] = smallest[r].min(u);
        }
        (0..self.num_users).map(|u| smallest[uf.find(u)]).collect()
    }

    /// Users pooled with `u` under `mode`, in increasing order, `u` included.
    pub fn pool_members(&self, u: usize, mode: PoolMode) -> Vec<usize> {
        match mode {
            PoolMode::OneHop => {
                let mut members: Vec<usize> = self.neighbors(u).collect();
                members.push(u);
                members.sort_unstable();
                members
            }
            PoolMode::Component => {
                let labels = self.components();
                let target = labels[u];
                (0..self.num_users).filter(|&v| labels[v] == target).collect()
            }
        }
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `false` if `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Connect rule: `‖θ̂₁ − θ̂₂‖ < γ̂ − α(CI₁ + CI₂)` and both users hold at
/// least `n_min` samples. Infinite widths never connect.
///
/// Evaluated as `‖θ̂₁ − θ̂₂‖ + α(CI₁ + CI₂) < γ̂`, the same rounding as the
/// overestimated threshold, so the user that defines that threshold is never
/// connected by a one-ulp accident.
pub fn connect_condition(a: &UserStats, b: &UserStats, gamma_hat: f64, alpha: f64, n_min: usize) -> bool {
    a.n.min(b.n) >= n_min && linalg::distance(&a.theta_hat, &b.theta_hat) + alpha * (a.ci + b.ci) < gamma_hat
}

/// Remove rule: `‖θ̂₁ − θ̂₂‖ > α(CI₁ + CI₂)`. Never holds when either width
/// is infinite.
pub fn remove_condition(a: &UserStats, b: &UserStats, alpha: f64) -> bool {
    linalg::distance(&a.theta_hat, &b.theta_hat) > alpha * (a.ci + b.ci)
}

fn build_by_pairs<F>(n: usize, start: bool, rule: GraphRule, exec: Exec, flip: F) -> UserGraph
where
    F: Fn(usize, usize) -> bool + Sync + Send,
{
    let rows = par::map_range(n, exec, |u| ((u + 1)..n).filter(|&v| flip(u, v)).collect::<Vec<_>>());
    let mut g = if start {
        UserGraph::complete(n, rule)
    } else {
        UserGraph::empty(n, rule)
    };
    for (u, row) in rows.into_iter().enumerate() {
        for v in row {
            g.set(u, v, !start);
        }
    }
    g
}

/// Connect-rule graph for threshold `gamma_hat`.
pub fn build_graph_connect(stats: &[UserStats], gamma_hat: f64, cfg: &AlgoConfig) -> UserGraph {
    build_graph_connect_with(stats, gamma_hat, cfg, Exec::default())
}

pub fn build_graph_connect_with(stats: &[UserStats], gamma_hat: f64, cfg: &AlgoConfig, exec: Exec) -> UserGraph {
    let n_min = n_min_threshold(cfg);
    build_by_pairs(stats.len(), false, GraphRule::ConnectBuilt, exec, |u, v| {
        connect_condition(&stats[u], &stats[v], gamma_hat, cfg.alpha, n_min)
    })
}

/// Remove-rule graph.
pub fn build_graph_remove(stats: &[UserStats], cfg: &AlgoConfig) -> UserGraph {
    build_graph_remove_with(stats, cfg, Exec::default())
}

pub fn build_graph_remove_with(stats: &[UserStats], cfg: &AlgoConfig, exec: Exec) -> UserGraph {
    build_by_pairs(stats.len(), true, GraphRule::RemoveBuilt, exec, |u, v| {
        remove_condition(&stats[u], &stats[v], cfg.alpha)
    })
}

/// Whether a user pools only with direct neighbors or with its whole
/// connected component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMode {
    OneHop,
    Component,
}

/// Pooled ridge statistics of a user and its graph neighborhood.
#[derive(Clone, Debug)]
pub struct AggregatedStats {
    /// `M̃_u`: pooled Gramian plus `λ ñ_u I` or `λ I`.
    pub m_tilde: DMatrix<f64>,
    pub b_tilde: DVector<f64>,
    pub theta_tilde: DVector<f64>,
    /// `Ñ_u`, pooled sample count.
    pub n_samples: usize,
    /// `ñ_u`, number of pooled users (the user itself included).
    pub n_users: usize,
    factor: SpdFactor,
}

impl AggregatedStats {
    /// Pools the sufficient statistics of `members`.
    pub fn pool(members: &[usize], suff: &[SufficientStats], cfg: &AlgoConfig, reg: Regularizer) -> Result<Self> {
        let d = cfg.dim;
        let mut total = SufficientStats::zeros(d);
        for &v in members {
            total.merge(&suff[v]);
        }
        let n_users = members.len().max(1);
        let reg_weight = match reg {
            Regularizer::PerNeighbor => cfg.lambda * n_users as f64,
            Regularizer::Single => cfg.lambda,
        };
        let m_tilde = DMatrix::identity(d, d) * reg_weight + total.gram;
        let factor = SpdFactor::new(&m_tilde)?;
        let theta_tilde = factor.solve(&total.moment);
        Ok(AggregatedStats {
            m_tilde,
            b_tilde: total.moment,
            theta_tilde,
            n_samples: total.n,
            n_users,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_tilde.len()
    }

    /// `‖a‖_{M̃⁻¹}`.
    pub fn inv_norm(&self, a: &[f64]) -> f64 {
        self.factor.inv_norm(a)
    }
}

/// Pools the data of `u` with its one-hop neighborhood or its connected
/// component in `graph`.
pub fn aggregate(
    u: usize,
    graph: &UserGraph,
    data: &OfflineDataset,
    cfg: &AlgoConfig,
    mode: PoolMode,
    reg: Regularizer,
) -> Result<AggregatedStats> {
    let num_users = graph.num_users();
    if u >= num_users {
        return Err(Error::UserOutOfRange { user: u, num_users });
    }
    if data.num_users() != num_users {
        return Err(Error::invalid(
            "data",
            format!("dataset has {} users, graph has {num_users}", data.num_users()),
        ));
    }
    let members = graph.pool_members(u, mode);
    let suff = members
        .iter()
        .map(|&v| SufficientStats::from_samples(data.user(v), cfg.dim))
        .collect::<Result<Vec<_>>>()?;
    let local: Vec<usize> = (0..members.len()).collect();
    AggregatedStats::pool(&local, &suff, cfg, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{ridge_stats, Sample};

    fn cfg(u: usize, d: usize) -> AlgoConfig {
        AlgoConfig {
            alpha: 1.0,
            lambda: 1.0,
            delta: 0.1,
            lambda_tilde: 1.0,
            num_users: u,
            dim: d,
        }
    }

    fn user(d: usize, n: usize, theta: &[f64], phase: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut a: Vec<f64> = (0..d).map(|k| ((i * (k + 3)) as f64 * 0.7 + phase + k as f64).sin()).collect();
                let nrm = linalg::norm(&a);
                a.iter_mut().for_each(|x| *x /= nrm);
                let r = linalg::dot(&a, theta);
                Sample::new(a, r)
            })
            .collect()
    }

    #[test]
    fn zero_gamma_gives_edgeless_graph() {
        let d = 2;
        let data: Vec<_> = (0..4).map(|u| ridge_stats(&user(d, 50, &[0.6, 0.8], u as f64), &cfg(4, d)).unwrap()).collect();
        let g = build_graph_connect(&data, 0.0, &cfg(4, d));
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.rule(), GraphRule::ConnectBuilt);
    }

    #[test]
    fn empty_users_keep_complete_graph_under_remove() {
        let c = cfg(5, 3);
        let stats: Vec<_> = (0..5).map(|_| ridge_stats(&[], &c).unwrap()).collect();
        let g = build_graph_remove(&stats, &c);
        assert_eq!(g.edge_count(), 10);
        assert!(g.is_symmetric_irreflexive());
        // and never connect under the connect rule, whatever the threshold
        assert_eq!(build_graph_connect(&stats, 1e9, &c).edge_count(), 0);
    }

    #[test]
    fn identical_users_keep_their_edge() {
        let c = cfg(2, 3);
        let samples = user(3, 20, &[1.0, 0.0, 0.0], 0.3);
        let stats = vec![ridge_stats(&samples, &c).unwrap(), ridge_stats(&samples, &c).unwrap()];
        assert!(build_graph_remove(&stats, &c).has_edge(0, 1));
    }

    #[test]
    fn components_labeled_by_smallest_member() {
        let g = UserGraph::from_edges(6, GraphRule::RemoveBuilt, &[(4, 2), (2, 5), (1, 3)]).unwrap();
        assert_eq!(g.components(), vec![0, 1, 2, 1, 2, 2]);
        assert_eq!(g.pool_members(5, PoolMode::Component), vec![2, 4, 5]);
        assert_eq!(g.pool_members(5, PoolMode::OneHop), vec![2, 5]);
    }

    #[test]
    fn chain_one_hop_excludes_two_hop_user() {
        let c = cfg(3, 2);
        let mut data = OfflineDataset::new(2, 3);
        for (u, n) in [(0, 3), (1, 5), (2, 7)] {
            for s in user(2, n, &[0.0, 1.0], u as f64) {
                data.push(u, s).unwrap();
            }
        }
        let g = UserGraph::from_edges(3, GraphRule::RemoveBuilt, &[(0, 1), (1, 2)]).unwrap();
        let one = aggregate(0, &g, &data, &c, PoolMode::OneHop, Regularizer::PerNeighbor).unwrap();
        assert_eq!(one.n_samples, 8);
        assert_eq!(one.n_users, 2);
        let comp = aggregate(0, &g, &data, &c, PoolMode::Component, Regularizer::PerNeighbor).unwrap();
        assert_eq!(comp.n_samples, 15);
    }

    #[test]
    fn isolated_user_matches_ridge_stats() {
        let c = cfg(2, 3);
        let mut data = OfflineDataset::new(3, 2);
        for s in user(3, 9, &[0.0, 0.6, 0.8], 1.0) {
            data.push(0, s).unwrap();
        }
        let g = UserGraph::empty(2, GraphRule::ConnectBuilt);
        for reg in [Regularizer::PerNeighbor, Regularizer::Single] {
            let agg = aggregate(0, &g, &data, &c, PoolMode::OneHop, reg).unwrap();
            let own = ridge_stats(data.user(0), &c).unwrap();
            assert_eq!(agg.n_users, 1);
            assert_eq!(agg.m_tilde, own.m);
            assert_eq!(agg.b_tilde, own.b);
            assert!((agg.theta_tilde - own.theta_hat).amax() < 1e-14);
        }
    }

    #[test]
    fn aggregate_rejects_bad_user() {
        let c = cfg(2, 2);
        let data = OfflineDataset::new(2, 2);
        let g = UserGraph::empty(2, GraphRule::ConnectBuilt);
        assert!(matches!(
            aggregate(2, &g, &data, &c, PoolMode::OneHop, Regularizer::Single),
            Err(Error::UserOutOfRange { .. })
        ));
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(4);
        assert!(uf.union(0, 1));
        assert!(!uf.union(1, 0));
        assert!(uf.union(2, 3));
        assert_ne!(uf.find(0), uf.find(3));
        uf.union(1, 3);
        assert_eq!(uf.find(0), uf.find(2));
    }
}

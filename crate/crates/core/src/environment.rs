//! Synthetic clustered environments, logged-dataset synthesis and
//! preference extraction from rating triples.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decision::TestQuery;
use crate::error::{Error, Result};
use crate::estimation::{OfflineDataset, Sample};
use crate::linalg;

/// Ground truth: cluster preference vectors and the user partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub d: usize,
    pub num_users: usize,
    pub num_clusters: usize,
    /// Unit-norm preference vector of each cluster.
    pub thetas: Vec<Vec<f64>>,
    /// Cluster of each user.
    pub assignment: Vec<usize>,
    /// Smallest distance between two cluster vectors; `+∞` (stored as
    /// `null`) with a single cluster.
    #[serde(with = "infinite_as_null")]
    pub gamma: f64,
    pub noise_sigma: f64,
    pub candidate_size: usize,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl EnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.num_users == 0 || self.num_clusters == 0 || self.candidate_size == 0 {
            return Err(Error::invalid("env", "d, num_users, num_clusters and candidate_size must be positive"));
        }
        if self.num_clusters > self.num_users {
            return Err(Error::TooManyClusters {
                clusters: self.num_clusters,
                users: self.num_users,
            });
        }
        if self.thetas.len() != self.num_clusters || self.assignment.len() != self.num_users {
            return Err(Error::invalid("env", "thetas/assignment lengths disagree with counts"));
        }
        for (j, t) in self.thetas.iter().enumerate() {
            if t.len() != self.d {
                return Err(Error::DimensionMismatch {
                    index: j,
                    expected: self.d,
                    found: t.len(),
                });
            }
            if (linalg::norm(t) - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("thetas", format!("cluster {j} vector is not unit norm")));
            }
        }
        let mut seen = vec![false; self.num_clusters];
        for &j in &self.assignment {
            if j >= self.num_clusters {
                return Err(Error::invalid("assignment", format!("cluster id {j} out of range")));
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("assignment", "every cluster needs at least one user"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        Ok(())
    }

    /// `θ_{j_u}`.
    pub fn theta_of(&self, u: usize) -> &[f64] {
        &self.thetas[self.assignment[u]]
    }

    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.num_users).filter(|&u| self.assignment[u] == j).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &j in &self.assignment {
            sizes[j] += 1;
        }
        sizes
    }
}

/// Smallest pairwise distance between the given vectors, `+∞` for fewer
/// than two.
pub fn measure_gamma(thetas: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in thetas.iter().enumerate() {
        for b in &thetas[i + 1..] {
            let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    best
}

fn unit_gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Draws `J` standard-Gaussian cluster vectors normalized to unit length
/// and assigns user `u` to cluster `u mod J`.
pub fn generate_environment(
    d: usize,
    num_users: usize,
    num_clusters: usize,
    noise_sigma: f64,
    candidate_size: usize,
    seed: u64,
) -> Result<EnvironmentSpec> {
    if num_clusters > num_users {
        return Err(Error::TooManyClusters {
            clusters: num_clusters,
            users: num_users,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas: Vec<Vec<f64>> = (0..num_clusters).map(|_| unit_gaussian(&mut rng, d)).collect();
    let env = EnvironmentSpec {
        d,
        num_users,
        num_clusters,
        gamma: measure_gamma(&thetas),
        thetas,
        assignment: (0..num_users).map(|u| u % num_clusters.max(1)).collect(),
        noise_sigma,
        candidate_size,
    };
    env.validate()?;
    Ok(env)
}

/// How logged events are spread over users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserDistribution {
    /// Every user equally likely.
    Equal,
    /// Cluster `j` drawn with probability `p[j]`, then a uniform member.
    SemiRandom(Vec<f64>),
}

impl UserDistribution {
    /// Semi-random distribution with cluster probabilities drawn from a flat
    /// Dirichlet, deterministically in `seed`.
    pub fn semi_random_dirichlet(num_clusters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_D1C1_17E7_0000);
        let g = Gamma::new(1.0, 1.0).expect("valid gamma");
        let raw: Vec<f64> = (0..num_clusters).map(|_| g.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        UserDistribution::SemiRandom(raw.into_iter().map(|x| x / total).collect())
    }

    fn validate(&self, num_clusters: usize) -> Result<()> {
        if let UserDistribution::SemiRandom(p) = self {
            if p.len() != num_clusters {
                return Err(Error::invalid("p", format!("expected {num_clusters} probabilities, got {}", p.len())));
            }
            if p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::invalid("p", "probabilities must be nonnegative"));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("p", format!("probabilities sum to {s}, not 1")));
            }
        }
        Ok(())
    }
}

/// Rule that picked the logged action from each candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingPolicy {
    UniformRandom,
    /// Optimistic per-user LinUCB with exploration weight `alpha_log`.
    Linucb { alpha_log: f64 },
}

/// Ridge weight of the LinUCB logging learner.
pub const LOGGING_LAMBDA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// `|D|`: training plus evaluation events.
    pub total_samples: usize,
    pub user_distribution: UserDistribution,
    pub logging_policy: LoggingPolicy,
    pub seed: u64,
}

/// Output of [`generate_offline_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedData {
    pub dataset: OfflineDataset,
    /// User of each training event, in event order.
    pub event_users: Vec<usize>,
    pub eval: Vec<TestQuery>,
}

impl GeneratedData {
    /// Training samples in event order.
    pub fn events(&self) -> impl Iterator<Item = (usize, &Sample)> + '_ {
        let mut cursor = vec![0usize; self.dataset.num_users()];
        self.event_users.iter().map(move |&u| {
            let s = &self.dataset.user(u)[cursor[u]];
            cursor[u] += 1;
            (u, s)
        })
    }
}

struct UserSampler {
    cumulative: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl UserSampler {
    fn new(env: &EnvironmentSpec, dist: &UserDistribution) -> Self {
        match dist {
            UserDistribution::Equal => UserSampler {
                cumulative: Vec::new(),
                members: Vec::new(),
            },
            UserDistribution::SemiRandom(p) => {
                let mut acc = 0.0;
                let cumulative = p
                    .iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect();
                UserSampler {
                    cumulative,
                    members: (0..env.num_clusters).map(|j| env.members(j)).collect(),
                }
            }
        }
    }

    fn draw(&self, rng: &mut impl Rng, num_users: usize) -> usize {
        if self.cumulative.is_empty() {
            return rng.random_range(0..num_users);
        }
        let x: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let j = self
            .cumulative
            .iter()
            .position(|&c| x < c)
            .unwrap_or(self.cumulative.len() - 1);
        // zero-probability clusters have no mass below them
        let group = &self.members[j];
        group[rng.random_range(0..group.len())]
    }
}

/// Per-user optimistic LinUCB state kept through Sherman–Morrison updates.
struct LoggingLearner {
    alpha: f64,
    a_inv: Vec<DMatrix<f64>>,
    b: Vec<Vec<f64>>,
}

impl LoggingLearner {
    fn new(alpha: f64, num_users: usize, d: usize) -> Self {
        LoggingLearner {
            alpha,
            a_inv: vec![DMatrix::identity(d, d) / LOGGING_LAMBDA; num_users],
            b: vec![vec![0.0; d]; num_users],
        }
    }

    fn select(&self, u: usize, candidates: &[Vec<f64>]) -> usize {
        let a_inv = &self.a_inv[u];
        let theta = a_inv * nalgebra::DVector::from_column_slice(&self.b[u]);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, a) in candidates.iter().enumerate() {
            let av = nalgebra::DVector::from_column_slice(a);
            let width = (av.dot(&(a_inv * &av))).max(0.0).sqrt();
            let score = theta.dot(&av) + self.alpha * width;
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }

    fn update(&mut self, u: usize, a: &[f64], r: f64) {
        let av = nalgebra::DVector::from_column_slice(a);
        let a_inv = &mut self.a_inv[u];
        let w = &*a_inv * &av;
        let denom = 1.0 + av.dot(&w);
        *a_inv -= (&w * w.transpose()) / denom;
        for (bi, ai) in self.b[u].iter_mut().zip(a) {
            *bi += r * ai;
        }
    }
}

fn check_gen(env: &EnvironmentSpec, gen: &GenConfig) -> Result<()> {
    env.validate()?;
    gen.user_distribution.validate(env.num_clusters)?;
    if let LoggingPolicy::Linucb { alpha_log } = gen.logging_policy {
        if !(alpha_log.is_finite() && alpha_log > 0.0) {
            return Err(Error::invalid("alpha_log", "must be > 0"));
        }
    }
    Ok(())
}

/// Synthesizes `|D|` logged events: each draws a user, a fresh candidate set
/// of unit Gaussian vectors, and (for training events) a logged action and
/// noisy reward. The first `⌈|D|/2⌉` events train; the rest become
/// evaluation queries.
pub fn generate_offline_dataset(env: &EnvironmentSpec, gen: &GenConfig) -> Result<GeneratedData> {
    check_gen(env, gen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    let sampler = UserSampler::new(env, &gen.user_distribution);
    let n_train = gen.total_samples.div_ceil(2);
    let mut dataset = OfflineDataset::new(env.d, env.num_users);
    let mut event_users = Vec::with_capacity(n_train);
    let mut learner = match gen.logging_policy {
        LoggingPolicy::Linucb { alpha_log } => Some(LoggingLearner::new(alpha_log, env.num_users, env.d)),
        LoggingPolicy::UniformRandom => None,
    };
    let mut eval = Vec::with_capacity(gen.total_samples - n_train);
    for event in 0..gen.total_samples {
        let u = sampler.draw(&mut rng, env.num_users);
        let candidates: Vec<Vec<f64>> = (0..env.candidate_size).map(|_| unit_gaussian(&mut rng, env.d)).collect();
        if event >= n_train {
            eval.push(TestQuery { user: u, candidates });
            continue;
        }
        let pick = match &learner {
            Some(l) => l.select(u, &candidates),
            None => rng.random_range(0..candidates.len()),
        };
        let action = candidates.into_iter().nth(pick).expect("pick in range");
        let noise: f64 = StandardNormal.sample(&mut rng);
        let reward = linalg::dot(env.theta_of(u), &action) + env.noise_sigma * noise;
        if let Some(l) = learner.as_mut() {
            l.update(u, &action, reward);
        }
        dataset.push(u, Sample::new(action, reward))?;
        event_users.push(u);
    }
    Ok(GeneratedData {
        dataset,
        event_users,
        eval,
    })
}

/// Training data with an exact per-user sample count, logged uniformly at
/// random. Selecting uniformly among `S` i.i.d. candidates has the same law
/// as a single draw, so only the logged action is materialized.
pub fn generate_fixed_count_dataset(env: &EnvironmentSpec, counts: &[usize], seed: u64) -> Result<OfflineDataset> {
    env.validate()?;
    if counts.len() != env.num_users {
        return Err(Error::invalid("counts", format!("expected {} counts, got {}", env.num_users, counts.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_user = counts
        .iter()
        .enumerate()
        .map(|(u, &n)| {
            (0..n)
                .map(|_| {
                    let a = unit_gaussian(&mut rng, env.d);
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let r = linalg::dot(env.theta_of(u), &a) + env.noise_sigma * noise;
                    Sample::new(a, r)
                })
                .collect()
        })
        .collect();
    OfflineDataset::from_per_user(env.d, per_user)
}

/// `count` evaluation queries with users drawn uniformly.
pub fn generate_queries(env: &EnvironmentSpec, count: usize, seed: u64) -> Vec<TestQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| TestQuery {
            user: rng.random_range(0..env.num_users),
            candidates: (0..env.candidate_size).map(|_| unit_gaussian(&mut rng, env.d)).collect(),
        })
        .collect()
}

/// One `(user, item, rating)` triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

/// Preference vectors recovered from a ratings matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdPreferences {
    /// User ids, in the row order of `thetas`.
    pub users: Vec<String>,
    pub thetas: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Default number of users and of items kept by [`svd_preferences`].
pub const DEFAULT_TOP_K: usize = 1000;

fn top_by_count<'a>(keys: impl Iterator<Item = &'a str>, k: usize) -> Vec<&'a str> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for key in keys {
        *counts.entry(key).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    let mut kept: Vec<&str> = ranked.into_iter().map(|(key, _)| key).collect();
    kept.sort_unstable();
    kept
}

/// Keeps the `top_k` most active users and items, fills a dense ratings
/// matrix (duplicate pairs averaged), and returns each user's row of the
/// rank-`d` left singular factor, normalized to unit length.
///
/// Each singular vector is sign-fixed so that its largest-magnitude entry is
/// positive. Rows that vanish in the truncated factor map to the zero vector
/// and are reported in `warnings`.
pub fn svd_preferences(ratings: &[Rating], d: usize, top_k: usize) -> Result<SvdPreferences> {
    if d == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    let users = top_by_count(ratings.iter().map(|r| r.user.as_str()), top_k);
    let items = top_by_count(ratings.iter().map(|r| r.item.as_str()), top_k);
    if users.len() < d || items.len() < d {
        return Err(Error::NotEnoughRatings {
            users: users.len(),
            items: items.len(),
            dim: d,
        });
    }
    let user_idx: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let item_idx: HashMap<&str, usize> = items.iter().enumerate().map(|(i, u)| (*u, i)).collect();

    let mut cells: Vec<(usize, usize, f64)> = ratings
        .iter()
        .filter_map(|r| Some((*user_idx.get(r.user.as_str())?, *item_idx.get(r.item.as_str())?, r.rating)))
        .collect();
    cells.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    let mut sum = DMatrix::<f64>::zeros(users.len(), items.len());
    let mut count = DMatrix::<f64>::zeros(users.len(), items.len());
    for (u, i, r) in cells {
        sum[(u, i)] += r;
        count[(u, i)] += 1.0;
    }
    let matrix = sum.zip_map(&count, |s, c| if c > 0.0 { s / c } else { 0.0 });

    let left = top_left_singular_vectors(matrix, d)?;
    let mut warnings = Vec::new();
    let thetas = (0..users.len())
        .map(|u| {
            let row: Vec<f64> = (0..d).map(|k| left[(u, k)]).collect();
            let n = linalg::norm(&row);
            if n > 1e-12 {
                row.iter().map(|x| x / n).collect()
            } else {
                warnings.push(format!("user {} has no component in the top-{d} subspace", users[u]));
                vec![0.0; d]
            }
        })
        .collect();
    Ok(SvdPreferences {
        users: users.into_iter().map(String::from).collect(),
        thetas,
        warnings,
    })
}

/// First `d` left singular vectors by decreasing singular value, sign-fixed.
pub fn top_left_singular_vectors(matrix: DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let rows = matrix.nrows();
    let svd = matrix.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::invalid("svd", "left singular vectors unavailable"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    if order.len() < d {
        return Err(Error::invalid("d", format!("rank {d} requested from {} singular values", order.len())));
    }
    let mut out = DMatrix::zeros(rows, d);
    for (k, &src) in order.iter().take(d).enumerate() {
        let col = u.column(src);
        let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        out.set_column(k, &(col * sign));
    }
    Ok(out)
}

/// Environment whose clusters are the distinct non-degenerate users of
/// `prefs`. Users with a zero preference vector are dropped.
pub fn environment_from_preferences(
    prefs: &SvdPreferences,
    noise_sigma: f64,
    candidate_size: usize,
) -> Result<EnvironmentSpec> {
    let thetas: Vec<Vec<f64>> = prefs.thetas.iter().filter(|t| linalg::norm(t) > 0.0).cloned().collect();
    if thetas.is_empty() {
        return Err(Error::invalid("ratings", "no user has a usable preference vector"));
    }
    let n = thetas.len();
    let env = EnvironmentSpec {
        d: thetas[0].len(),
        num_users: n,
        num_clusters: n,
        gamma: measure_gamma(&thetas),
        thetas,
        assignment: (0..n).collect(),
        noise_sigma,
        candidate_size,
    };
    env.validate()?;
    Ok(env)
}

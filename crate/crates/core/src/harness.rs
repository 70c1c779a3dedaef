//! Seeded experiment driver: suboptimality evaluation, algorithm
//! comparisons, `γ̂` sweeps and CSV reports.
//!
//! Every `(generator config, seed)` cell is an independent job. Inside a cell
//! the per-user statistics and graphs are computed once and shared by all
//! evaluation queries. Results are sorted by `(algorithm, dataset_size,
//! seed)` so output files diff cleanly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{Method, PreparedData, PreparedMethod, TestQuery};
use crate::environment::{generate_offline_dataset, EnvironmentSpec, GenConfig};
use crate::error::{Error, Result};
use crate::estimation::{AlgoConfig, OfflineDataset};
use crate::gamma::GammaPolicy;
use crate::linalg;
use crate::par::{self, Exec};

/// Something that picks one candidate per query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Algorithm {
    Method(Method),
    /// Reads the true preference vectors; always optimal.
    Oracle,
    /// Uniformly random candidate, seeded per run.
    UniformRandom,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Method(m) => m.fmt(f),
            Algorithm::Oracle => f.write_str("oracle"),
            Algorithm::UniformRandom => f.write_str("uniform-random"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Algorithm::Oracle),
            "uniform-random" => Ok(Algorithm::UniformRandom),
            other => other.parse().map(Algorithm::Method),
        }
    }
}

impl From<Method> for Algorithm {
    fn from(m: Method) -> Self {
        Algorithm::Method(m)
    }
}

/// Knobs that do not change results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HarnessOptions {
    pub exec: Exec,
    /// Record elapsed milliseconds; otherwise `wall_time_ms` is 0 and result
    /// files are byte-reproducible.
    pub record_wall_time: bool,
}

/// One `(algorithm, dataset, seed)` outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: String,
    pub dataset_size: usize,
    pub seed: u64,
    pub mean_gap: f64,
    pub stderr: f64,
    pub n_queries: usize,
    pub wall_time_ms: u64,
}

/// Regret of `chosen_index` against the best candidate under the query
/// user's true preference vector.
pub fn suboptimality(env: &EnvironmentSpec, query: &TestQuery, chosen_index: usize) -> Result<f64> {
    if chosen_index >= query.candidates.len() {
        return Err(Error::IndexOutOfRange {
            index: chosen_index,
            len: query.candidates.len(),
        });
    }
    if query.user >= env.num_users {
        return Err(Error::UserOutOfRange {
            user: query.user,
            num_users: env.num_users,
        });
    }
    let theta = env.theta_of(query.user);
    let best = query
        .candidates
        .iter()
        .map(|a| linalg::dot(theta, a))
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = linalg::dot(theta, &query.candidates[chosen_index]);
    Ok((best - chosen).max(0.0))
}

/// Sample mean and standard error (`s / √n`, with `s` the `n − 1` standard
/// deviation; 0 for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-query gaps of one algorithm over an evaluation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub gaps: Vec<f64>,
    /// Mean `γ̂` over queries, for the connection-based method.
    pub mean_gamma_hat: Option<f64>,
}

impl Evaluation {
    pub fn mean_stderr(&self) -> (f64, f64) {
        mean_stderr(&self.gaps)
    }
}

fn query_users(queries: &[TestQuery]) -> Vec<usize> {
    let mut users: Vec<usize> = queries.iter().map(|q| q.user).collect();
    users.sort_unstable();
    users.dedup();
    users
}

/// Answers every query with `algorithm` and scores it against `env`.
pub fn evaluate(
    env: &EnvironmentSpec,
    prep: &PreparedData,
    algorithm: Algorithm,
    queries: &[TestQuery],
    seed: u64,
    exec: Exec,
) -> Result<Evaluation> {
    if queries.is_empty() {
        return Err(Error::invalid("queries", "evaluation stream is empty"));
    }
    match algorithm {
        Algorithm::Oracle => {
            let gaps = par::map_slice(queries, exec, |q| -> Result<f64> {
                let theta = env.theta_of(q.user);
                let mut best = (0, f64::NEG_INFINITY);
                for (i, a) in q.candidates.iter().enumerate() {
                    let v = linalg::dot(theta, a);
                    if v > best.1 {
                        best = (i, v);
                    }
                }
                suboptimality(env, q, best.0)
            });
            Ok(Evaluation {
                gaps: gaps.into_iter().collect::<Result<_>>()?,
                mean_gamma_hat: None,
            })
        }
        Algorithm::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
            let gaps = queries
                .iter()
                .map(|q| {
                    if q.candidates.is_empty() {
                        return Err(Error::EmptyCandidates);
                    }
                    suboptimality(env, q, rng.random_range(0..q.candidates.len()))
                })
                .collect::<Result<_>>()?;
            Ok(Evaluation {
                gaps,
                mean_gamma_hat: None,
            })
        }
        Algorithm::Method(method) => {
            let users = query_users(queries);
            let prepared = PreparedMethod::new(prep, method, &users, exec)?;
            let gaps = par::map_slice(queries, exec, |q| {
                let rec = prepared.recommend(q)?;
                suboptimality(env, q, rec.chosen_index)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mean_gamma_hat = match method {
                Method::OffC2lub(_) => {
                    let sum: f64 = queries.iter().filter_map(|q| prepared.gamma_hat(q.user)).sum();
                    Some(sum / queries.len() as f64)
                }
                _ => None,
            };
            Ok(Evaluation { gaps, mean_gamma_hat })
        }
    }
}

fn check_env_cfg(env: &EnvironmentSpec, cfg: &AlgoConfig) -> Result<()> {
    if env.num_users != cfg.num_users || env.d != cfg.dim {
        return Err(Error::invalid(
            "cfg",
            format!(
                "config (U={}, d={}) does not match environment (U={}, d={})",
                cfg.num_users, cfg.dim, env.num_users, env.d
            ),
        ));
    }
    Ok(())
}

/// Evaluates `algorithms` on one prepared dataset.
#[allow(clippy::too_many_arguments)]
pub fn run_on_data(
    env: &EnvironmentSpec,
    data: &OfflineDataset,
    queries: &[TestQuery],
    algorithms: &[Algorithm],
    cfg: &AlgoConfig,
    dataset_size: usize,
    seed: u64,
    opts: HarnessOptions,
) -> Result<Vec<RunResult>> {
    check_env_cfg(env, cfg)?;
    let start = Instant::now();
    let prep = PreparedData::new(data, cfg, opts.exec)?;
    let shared_ms = start.elapsed().as_millis() as u64;
    algorithms
        .iter()
        .map(|&alg| {
            let t = Instant::now();
            let eval = evaluate(env, &prep, alg, queries, seed, opts.exec)?;
            let (mean_gap, stderr) = eval.mean_stderr();
            Ok(RunResult {
                algorithm: alg.to_string(),
                dataset_size,
                seed,
                mean_gap,
                stderr,
                n_queries: eval.gaps.len(),
                wall_time_ms: if opts.record_wall_time {
                    shared_ms + t.elapsed().as_millis() as u64
                } else {
                    0
                },
            })
        })
        .collect()
}

/// Generates one dataset per `(gen, seed)` pair (the seed replaces
/// `gen.seed`) and evaluates every algorithm on it.
pub fn run_experiment(
    env: &EnvironmentSpec,
    gens: &[GenConfig],
    algorithms: &[Algorithm],
    seeds: &[u64],
    cfg: &AlgoConfig,
    opts: HarnessOptions,
) -> Result<Vec<RunResult>> {
    if gens.is_empty() || algorithms.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("run", "generator, algorithm and seed lists must be nonempty"));
    }
    check_env_cfg(env, cfg)?;
    let cells: Vec<(&GenConfig, u64)> = gens.iter().flat_map(|g| seeds.iter().map(move |&s| (g, s))).collect();
    let nested = par::map_slice(&cells, opts.exec, |&(gen, seed)| {
        let gen = GenConfig { seed, ..gen.clone() };
        let out = generate_offline_dataset(env, &gen)?;
        run_on_data(env, &out.dataset, &out.eval, algorithms, cfg, gen.total_samples, seed, opts)
    });
    let mut rows = Vec::new();
    for r in nested {
        rows.extend(r?);
    }
    sort_results(&mut rows);
    Ok(rows)
}

pub fn sort_results(rows: &mut [RunResult]) {
    rows.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.dataset_size.cmp(&b.dataset_size))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Where a sweep row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSource {
    Grid,
    Underestimate,
    Overestimate,
}

impl fmt::Display for SweepSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepSource::Grid => "grid",
            SweepSource::Underestimate => "underestimate",
            SweepSource::Overestimate => "overestimate",
        })
    }
}

/// Mean gap of a data-driven policy together with the `γ̂` it picked,
/// averaged over test users and seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub gamma_hat: f64,
    pub mean_gap: f64,
    pub stderr: f64,
}

/// Connection-based method across a `γ̂` grid plus both data-driven
/// policies. Gaps are means of per-seed means; stderr is across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub gamma_grid: Vec<f64>,
    pub mean_gap_at: Vec<f64>,
    pub stderr_at: Vec<f64>,
    pub policy_points: BTreeMap<SweepSource, PolicyPoint>,
}

/// Grid means, then `(γ̂, mean gap)` per policy, for one seed.
type SeedSweep = (Vec<f64>, Vec<(f64, f64)>);

/// Sweeps fixed `γ̂` values over `grid` (nonempty, ascending) and evaluates
/// both data-driven policies on the same datasets.
pub fn gamma_sweep(
    env: &EnvironmentSpec,
    gen: &GenConfig,
    grid: &[f64],
    seeds: &[u64],
    cfg: &AlgoConfig,
    opts: HarnessOptions,
) -> Result<SweepResult> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("grid", "grid and seed lists must be nonempty"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) || grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::invalid("grid", "must be finite, nonnegative and ascending"));
    }
    check_env_cfg(env, cfg)?;
    let policies = [
        (SweepSource::Underestimate, GammaPolicy::Underestimate),
        (SweepSource::Overestimate, GammaPolicy::Overestimate),
    ];
    let per_seed = par::map_slice(seeds, opts.exec, |&seed| -> Result<SeedSweep> {
        let out = generate_offline_dataset(env, &GenConfig { seed, ..gen.clone() })?;
        let prep = PreparedData::new(&out.dataset, cfg, opts.exec)?;
        let grid_means = grid
            .iter()
            .map(|&g| {
                let alg = Algorithm::Method(Method::OffC2lub(GammaPolicy::Fixed(g)));
                Ok(evaluate(env, &prep, alg, &out.eval, seed, opts.exec)?.mean_stderr().0)
            })
            .collect::<Result<Vec<_>>>()?;
        let policy_means = policies
            .iter()
            .map(|&(_, p)| {
                let e = evaluate(env, &prep, Algorithm::Method(Method::OffC2lub(p)), &out.eval, seed, opts.exec)?;
                Ok((e.mean_gamma_hat.unwrap_or(0.0), e.mean_stderr().0))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((grid_means, policy_means))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut mean_gap_at = Vec::with_capacity(grid.len());
    let mut stderr_at = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let xs: Vec<f64> = per_seed.iter().map(|(g, _)| g[i]).collect();
        let (m, s) = mean_stderr(&xs);
        mean_gap_at.push(m);
        stderr_at.push(s);
    }
    let mut policy_points = BTreeMap::new();
    for (k, (source, _)) in policies.iter().enumerate() {
        let gammas: Vec<f64> = per_seed.iter().map(|(_, p)| p[k].0).collect();
        let gaps: Vec<f64> = per_seed.iter().map(|(_, p)| p[k].1).collect();
        let (mean_gap, stderr) = mean_stderr(&gaps);
        policy_points.insert(
            *source,
            PolicyPoint {
                gamma_hat: mean_stderr(&gammas).0,
                mean_gap,
                stderr,
            },
        );
    }
    Ok(SweepResult {
        gamma_grid: grid.to_vec(),
        mean_gap_at,
        stderr_at,
        policy_points,
    })
}

/// `√(8d / N)` for a cluster holding `N` samples; `+∞` when `N = 0`.
pub fn lower_bound_value(d: usize, n: usize) -> f64 {
    if n == 0 {
        f64::INFINITY
    } else {
        (8.0 * d as f64 / n as f64).sqrt()
    }
}

/// Minimax lower-bound diagnostic per cluster, from the cluster's pooled
/// sample count in `data`.
pub fn lower_bound_reference(env: &EnvironmentSpec, data: &OfflineDataset) -> Result<BTreeMap<usize, f64>> {
    if data.num_users() != env.num_users || data.dim() != env.d {
        return Err(Error::invalid("data", "dataset does not match environment"));
    }
    let mut counts = vec![0usize; env.num_clusters];
    for u in 0..env.num_users {
        counts[env.assignment[u]] += data.count(u);
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(j, n)| (j, lower_bound_value(env.d, n)))
        .collect())
}

/// Lower-bound diagnostic from the expected training count of each cluster
/// under the equal user distribution with `dataset_size` total events.
pub fn expected_lower_bound(env: &EnvironmentSpec, dataset_size: usize) -> BTreeMap<usize, f64> {
    let train = dataset_size.div_ceil(2) as f64;
    env.cluster_sizes()
        .into_iter()
        .enumerate()
        .map(|(j, size)| {
            let n = train * size as f64 / env.num_users as f64;
            let v = if n > 0.0 { (8.0 * env.d as f64 / n).sqrt() } else { f64::INFINITY };
            (j, v)
        })
        .collect()
}

fn fmt9(x: f64) -> String {
    format!("{x:.9}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub const RESULTS_HEADER: &str = "algorithm,dataset_size,seed,mean_gap,stderr,n_queries,wall_time_ms";
pub const SWEEP_HEADER: &str = "gamma_hat,mean_gap,stderr,source";
pub const REPORT_HEADER: &str = "algorithm,dataset_size,n_seeds,mean_gap,stderr,lower_bound";

pub fn write_results(path: &Path, rows: &[RunResult]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from(RESULTS_HEADER);
    body.push('\n');
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.dataset_size,
            r.seed,
            fmt9(r.mean_gap),
            fmt9(r.stderr),
            r.n_queries,
            r.wall_time_ms
        ));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(parse_err(path, 1, format!("expected header `{RESULTS_HEADER}`")));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| parse_err(path, i + 2, e)))
        .collect()
}

fn parse_err(path: &Path, line: usize, reason: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}

pub fn write_sweep(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut body = String::from(SWEEP_HEADER);
    body.push('\n');
    for ((g, m), s) in sweep.gamma_grid.iter().zip(&sweep.mean_gap_at).zip(&sweep.stderr_at) {
        body.push_str(&format!("{},{},{},{}\n", fmt9(*g), fmt9(*m), fmt9(*s), SweepSource::Grid));
    }
    for (source, p) in &sweep.policy_points {
        body.push_str(&format!("{},{},{},{}\n", fmt9(p.gamma_hat), fmt9(p.mean_gap), fmt9(p.stderr), source));
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Across-seed aggregate of result rows sharing an algorithm and size.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub dataset_size: usize,
    pub n_seeds: usize,
    pub mean_gap: f64,
    pub stderr: f64,
}

/// Mean of per-seed mean gaps with across-seed stderr, grouped by
/// `(algorithm, dataset_size)` in sorted order.
pub fn summarize(rows: &[RunResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.algorithm.clone(), r.dataset_size)).or_default().push(r.mean_gap);
    }
    groups
        .into_iter()
        .map(|((algorithm, dataset_size), gaps)| {
            let (mean_gap, stderr) = mean_stderr(&gaps);
            SummaryRow {
                algorithm,
                dataset_size,
                n_seeds: gaps.len(),
                mean_gap,
                stderr,
            }
        })
        .collect()
}

/// Writes the summary with the largest per-cluster lower bound for each
/// dataset size (`inf` when some cluster is empty, blank when unknown).
pub fn write_report(path: &Path, summary: &[SummaryRow], lower_bound: &BTreeMap<usize, f64>) -> Result<()> {
    let mut body = String::from(REPORT_HEADER);
    body.push('\n');
    for s in summary {
        let lb = match lower_bound.get(&s.dataset_size) {
            Some(v) if v.is_finite() => fmt9(*v),
            Some(_) => "inf".to_string(),
            None => String::new(),
        };
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.algorithm,
            s.dataset_size,
            s.n_seeds,
            fmt9(s.mean_gap),
            fmt9(s.stderr),
            lb
        ));
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::generate_environment;

    #[test]
    fn hand_computed_gap() {
        let env = EnvironmentSpec {
            d: 2,
            num_users: 1,
            num_clusters: 1,
            thetas: vec![vec![1.0, 0.0]],
            assignment: vec![0],
            gamma: f64::INFINITY,
            noise_sigma: 0.0,
            candidate_size: 3,
        };
        let q = TestQuery {
            user: 0,
            candidates: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]],
        };
        assert_eq!(suboptimality(&env, &q, 0).unwrap(), 0.0);
        assert_eq!(suboptimality(&env, &q, 1).unwrap(), 1.0);
        assert!((suboptimality(&env, &q, 2).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(suboptimality(&env, &q, 3), Err(Error::IndexOutOfRange { index: 3, len: 3 })));
    }

    #[test]
    fn stderr_definition() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn lower_bound_identities() {
        assert_eq!(lower_bound_value(20, 160), 1.0);
        assert!(lower_bound_value(3, 0).is_infinite());
        assert_eq!(lower_bound_value(20, 5000), (160.0f64 / 5000.0).sqrt());
    }

    #[test]
    fn algorithm_names() {
        for s in ["oracle", "uniform-random", "off-club", "off-c2lub-under", "club-component"] {
            assert_eq!(s.parse::<Algorithm>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let env = generate_environment(2, 4, 2, 0.05, 3, 0).unwrap();
        let gen = GenConfig {
            total_samples: 20,
            user_distribution: crate::environment::UserDistribution::Equal,
            logging_policy: crate::environment::LoggingPolicy::UniformRandom,
            seed: 0,
        };
        let cfg = AlgoConfig::paper_exp(4, 2);
        assert!(gamma_sweep(&env, &gen, &[0.5, 0.1], &[0], &cfg, HarnessOptions::default()).is_err());
        assert!(gamma_sweep(&env, &gen, &[], &[0], &cfg, HarnessOptions::default()).is_err());
    }

    #[test]
    fn summary_groups_seeds() {
        let row = |alg: &str, size, seed, gap| RunResult {
            algorithm: alg.into(),
            dataset_size: size,
            seed,
            mean_gap: gap,
            stderr: 0.0,
            n_queries: 1,
            wall_time_ms: 0,
        };
        let s = summarize(&[row("b", 10, 0, 1.0), row("a", 10, 1, 2.0), row("a", 10, 0, 4.0)]);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].algorithm.as_str(), s[0].n_seeds, s[0].mean_gap), ("a", 2, 3.0));
    }
}

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use offclus_core::environment::{
    environment_from_preferences, generate_environment, generate_offline_dataset, svd_preferences, DEFAULT_TOP_K,
};
use offclus_core::estimation::smoothed_regularity;
use offclus_core::harness::{
    expected_lower_bound, gamma_sweep, read_results, run_experiment, run_on_data, sort_results, summarize, write_report,
    write_results, write_sweep,
};
use offclus_core::io::{read_dataset, read_env, read_queries, read_ratings, write_dataset, write_env, write_queries};
use offclus_core::{
    AlgoConfig, Algorithm, Exec, GenConfig, HarnessOptions, LoggingPolicy, SweepResult, UserDistribution,
};

#[derive(Parser)]
#[command(name = "offclus", version, about = "Offline clustering-of-bandits benchmark", arg_required_else_help = true)]
struct Cli {
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, env = "OFFCLUB_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic environment.
    GenEnv(GenEnvArgs),
    /// Log an offline dataset and evaluation queries from an environment.
    GenData(GenDataArgs),
    /// Build an environment from `user_id,item_id,rating` triples.
    Ingest(IngestArgs),
    /// Evaluate algorithms over dataset sizes and seeds.
    Run(RunArgs),
    /// Sweep the connection threshold and evaluate both threshold policies.
    SweepGamma(SweepArgs),
    /// Merge result files into a per-size summary with the lower bound.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    /// Reward noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 20)]
    candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "env.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distribution {
    Equal,
    SemiRandom,
}

#[derive(Clone, Copy, ValueEnum)]
enum Logging {
    Uniform,
    Linucb,
}

#[derive(Args)]
struct DataGenArgs {
    #[arg(long, value_enum, default_value_t = Distribution::Equal)]
    distribution: Distribution,
    /// Cluster probabilities for the semi-random distribution; drawn from a
    /// flat Dirichlet when omitted.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Logging::Uniform)]
    logging: Logging,
    #[arg(long, default_value_t = 0.1)]
    alpha_log: f64,
}

impl DataGenArgs {
    fn gen_config(&self, total_samples: usize, num_clusters: usize, seed: u64) -> GenConfig {
        let user_distribution = match (self.distribution, &self.p) {
            (Distribution::Equal, _) => UserDistribution::Equal,
            (Distribution::SemiRandom, Some(p)) => UserDistribution::SemiRandom(p.clone()),
            (Distribution::SemiRandom, None) => UserDistribution::semi_random_dirichlet(num_clusters, seed),
        };
        let logging_policy = match self.logging {
            Logging::Uniform => LoggingPolicy::UniformRandom,
            Logging::Linucb => LoggingPolicy::Linucb { alpha_log: self.alpha_log },
        };
        GenConfig {
            total_samples,
            user_distribution,
            logging_policy,
            seed,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    env: PathBuf,
    /// Total logged events, split evenly into training and evaluation.
    #[arg(long)]
    samples: usize,
    #[command(flatten)]
    data: DataGenArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data.jsonl")]
    out: PathBuf,
    #[arg(long, default_value = "eval.jsonl")]
    eval_out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 20)]
    candidates: usize,
    /// Accepted for uniformity; ingestion is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "env.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Theory,
    PaperExp,
}

#[derive(Args)]
struct AlgoArgs {
    #[arg(long, value_enum, default_value_t = Preset::PaperExp)]
    preset: Preset,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, conflicts_with = "auto_lambda_tilde")]
    lambda_tilde: Option<f64>,
    /// Compute the action regularity from the candidate distribution below.
    #[arg(long, requires_all = ["lambda_a", "sigma_a"])]
    auto_lambda_tilde: bool,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    sigma_a: Option<f64>,
    /// Candidate-set size for the regularity integral; defaults to the
    /// environment's.
    #[arg(long)]
    candidates: Option<u32>,
}

impl AlgoArgs {
    fn config(&self, num_users: usize, dim: usize, env_candidates: usize) -> Result<AlgoConfig> {
        let mut cfg = match self.preset {
            Preset::Theory => AlgoConfig::theory(num_users, dim),
            Preset::PaperExp => AlgoConfig::paper_exp(num_users, dim),
        };
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.lambda_tilde {
            cfg.lambda_tilde = v;
        }
        if self.auto_lambda_tilde {
            let s = self.candidates.unwrap_or(env_candidates as u32);
            cfg.lambda_tilde = smoothed_regularity(self.lambda_a.unwrap_or_default(), self.sigma_a.unwrap_or_default(), s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    env: PathBuf,
    /// Dataset sizes for generated runs.
    #[arg(long, value_delimiter = ',', required_unless_present = "data", conflicts_with = "data")]
    sizes: Option<Vec<usize>>,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Evaluate a dataset file instead of generating data.
    #[arg(long, requires = "eval")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    eval: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "off-c2lub,off-club,linucb-ind")]
    algorithms: Vec<String>,
    #[command(flatten)]
    gen: DataGenArgs,
    #[command(flatten)]
    algo: AlgoArgs,
    /// Record elapsed milliseconds in the results.
    #[arg(long)]
    wall_time: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    samples: usize,
    /// Explicit ascending grid of thresholds.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["grid_max", "grid_steps"])]
    grid: Option<Vec<f64>>,
    /// Evenly spaced grid from 0 to this value; defaults to twice the true gap.
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long, default_value_t = 21)]
    grid_steps: usize,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[command(flatten)]
    gen: DataGenArgs,
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Result files to merge.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Environment for the lower-bound column; left blank when omitted.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Accepted for uniformity; reports are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

fn seed_list(start: u64, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        bail!("--seeds must be positive");
    }
    Ok((start..start + count).collect())
}

fn parse_algorithms(names: &[String]) -> Result<Vec<Algorithm>> {
    names.iter().map(|n| n.parse::<Algorithm>().map_err(Into::into)).collect()
}

fn exec_for(jobs: Option<usize>) -> Result<Exec> {
    match jobs {
        Some(0) => bail!("--jobs must be positive"),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| anyhow::anyhow!("configuring worker threads: {e}"))?;
            #[cfg(not(feature = "parallel"))]
            let _ = n;
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::Parallel),
    }
}

fn gen_env(a: GenEnvArgs) -> Result<String> {
    let env = generate_environment(a.d, a.users, a.clusters, a.sigma, a.candidates, a.seed)?;
    write_env(&a.out, &env)?;
    Ok(format!(
        "wrote {}: d={} users={} clusters={} gamma={:.6}",
        a.out.display(),
        env.d,
        env.num_users,
        env.num_clusters,
        env.gamma
    ))
}

fn gen_data(a: GenDataArgs) -> Result<String> {
    let env = read_env(&a.env)?;
    let gen = a.data.gen_config(a.samples, env.num_clusters, a.seed);
    let out = generate_offline_dataset(&env, &gen)?;
    write_dataset(&a.out, &out)?;
    write_queries(&a.eval_out, &out.eval)?;
    Ok(format!(
        "wrote {} ({} events) and {} ({} queries)",
        a.out.display(),
        out.dataset.total(),
        a.eval_out.display(),
        out.eval.len()
    ))
}

fn ingest(a: IngestArgs) -> Result<String> {
    let ratings = read_ratings(&a.ratings)?;
    let prefs = svd_preferences(&ratings, a.d, a.top_k)?;
    for w in &prefs.warnings {
        eprintln!("warning: {w}");
    }
    let env = environment_from_preferences(&prefs, a.sigma, a.candidates)?;
    write_env(&a.out, &env)?;
    Ok(format!(
        "wrote {}: {} users from {} ratings, d={}",
        a.out.display(),
        env.num_users,
        ratings.len(),
        env.d
    ))
}

fn run(a: RunArgs, exec: Exec) -> Result<String> {
    let env = read_env(&a.env)?;
    let cfg = a.algo.config(env.num_users, env.d, env.candidate_size)?;
    let algorithms = parse_algorithms(&a.algorithms)?;
    let opts = HarnessOptions {
        exec,
        record_wall_time: a.wall_time,
    };
    let rows = match (&a.data, &a.eval, &a.sizes) {
        (Some(data), Some(eval), _) => {
            let dataset = read_dataset(data, env.d, env.num_users)?;
            let queries = read_queries(eval, env.d)?;
            let size = dataset.total() + queries.len();
            let mut rows = run_on_data(&env, &dataset, &queries, &algorithms, &cfg, size, a.seed, opts)?;
            sort_results(&mut rows);
            rows
        }
        (_, _, Some(sizes)) => {
            let gens: Vec<GenConfig> = sizes.iter().map(|&n| a.gen.gen_config(n, env.num_clusters, a.seed)).collect();
            run_experiment(&env, &gens, &algorithms, &seed_list(a.seed, a.seeds)?, &cfg, opts)?
        }
        _ => bail!("either --sizes or --data with --eval is required"),
    };
    write_results(&a.out, &rows)?;
    Ok(format!("wrote {}: {} rows", a.out.display(), rows.len()))
}

fn sweep(a: SweepArgs, exec: Exec) -> Result<String> {
    let env = read_env(&a.env)?;
    let cfg = a.algo.config(env.num_users, env.d, env.candidate_size)?;
    let grid = match &a.grid {
        Some(g) => g.clone(),
        None => {
            let top = a.grid_max.unwrap_or(if env.gamma.is_finite() { 2.0 * env.gamma } else { 2.0 });
            if a.grid_steps < 2 {
                bail!("--grid-steps must be at least 2");
            }
            (0..a.grid_steps).map(|i| top * i as f64 / (a.grid_steps - 1) as f64).collect()
        }
    };
    let gen = a.gen.gen_config(a.samples, env.num_clusters, a.seed);
    let opts = HarnessOptions {
        exec,
        record_wall_time: false,
    };
    let result: SweepResult = gamma_sweep(&env, &gen, &grid, &seed_list(a.seed, a.seeds)?, &cfg, opts)?;
    write_sweep(&a.out, &result)?;
    let best = result.mean_gap_at.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "wrote {}: {} grid points, best grid gap {:.6}",
        a.out.display(),
        grid.len(),
        best
    ))
}

fn report(a: ReportArgs) -> Result<String> {
    let mut rows = Vec::new();
    for path in &a.inputs {
        rows.extend(read_results(path)?);
    }
    sort_results(&mut rows);
    let summary = summarize(&rows);
    let mut lower_bound = BTreeMap::new();
    if let Some(env_path) = &a.env {
        let env = read_env(env_path)?;
        for s in &summary {
            let worst = expected_lower_bound(&env, s.dataset_size).into_values().fold(0.0, f64::max);
            lower_bound.insert(s.dataset_size, worst);
        }
    }
    write_report(&a.out, &summary, &lower_bound)?;
    Ok(format!(
        "wrote {}: {} summary rows from {} result rows",
        a.out.display(),
        summary.len(),
        rows.len()
    ))
}

fn dispatch(cli: Cli) -> Result<String> {
    let exec = exec_for(cli.jobs)?;
    match cli.command {
        Command::GenEnv(a) => gen_env(a),
        Command::GenData(a) => gen_data(a),
        Command::Ingest(a) => ingest(a),
        Command::Run(a) => run(a, exec),
        Command::SweepGamma(a) => sweep(a, exec),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

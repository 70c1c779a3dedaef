//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's linear algebra, estimation or graph code; plain
//! `Vec`s and textbook algorithms only.

#![allow(dead_code, clippy::needless_range_loop)]

use offclus_core::{AlgoConfig, OfflineDataset, Sample, TestQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction on the sphere scaled by a radius in `[0, 1]`.
pub fn random_action(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_dataset(r: &mut ChaCha8Rng, d: usize, u: usize, max_per_user: usize) -> OfflineDataset {
    let thetas: Vec<Vec<f64>> = (0..u).map(|_| random_action(r, d)).collect();
    let per_user = (0..u)
        .map(|k| {
            let n = r.random_range(0..=max_per_user);
            (0..n)
                .map(|_| {
                    let a = random_action(r, d);
                    let reward = dot(&thetas[k], &a) + r.random_range(-0.1..0.1);
                    Sample::new(a, reward)
                })
                .collect()
        })
        .collect();
    OfflineDataset::from_per_user(d, per_user).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn identity(d: usize, s: f64) -> Mat {
    (0..d).map(|i| (0..d).map(|j| if i == j { s } else { 0.0 }).collect()).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Mat = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// `(reg I + Σ aaᵀ, Σ r a)` over raw samples.
pub fn ridge_system(samples: &[&Sample], d: usize, reg: f64) -> (Mat, Vec<f64>) {
    let mut m = identity(d, reg);
    let mut b = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                m[i][j] += s.action[i] * s.action[j];
            }
            b[i] += s.reward * s.action[i];
        }
    }
    (m, b)
}

pub fn ci_oracle(n: usize, cfg: &AlgoConfig) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let (n, d) = (n as f64, cfg.dim as f64);
    let top = (d * (1.0 + n / (cfg.lambda * d)).ln() + 2.0 * (2.0 * cfg.num_users as f64 / cfg.delta).ln()).sqrt()
        + cfg.lambda.sqrt();
    top / (cfg.lambda_tilde * n / 2.0).sqrt()
}

pub fn n_min_oracle(cfg: &AlgoConfig) -> f64 {
    let l2 = cfg.lambda_tilde.powi(2);
    16.0 / l2 * (8.0 * cfg.num_users as f64 * cfg.dim as f64 / (l2 * cfg.delta)).ln()
}

pub fn beta_oracle(n_pooled: usize, n_users: usize, cfg: &AlgoConfig) -> f64 {
    let d = cfg.dim as f64;
    (d * (1.0 + n_pooled as f64 / (cfg.lambda * n_users as f64 * d)).ln()
        + 2.0 * (2.0 * cfg.num_users as f64 / cfg.delta).ln())
    .sqrt()
        + cfg.lambda.sqrt()
}

/// Composite Simpson on `n` (even) panels.
pub fn simpson_dense(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

struct UserEst {
    theta: Vec<f64>,
    ci: f64,
    n: usize,
}

fn user_estimates(data: &OfflineDataset, cfg: &AlgoConfig) -> Vec<UserEst> {
    (0..data.num_users())
        .map(|u| {
            let samples: Vec<&Sample> = data.user(u).iter().collect();
            let (m, b) = ridge_system(&samples, cfg.dim, cfg.lambda);
            UserEst {
                theta: gauss_solve(&m, &b),
                ci: ci_oracle(samples.len(), cfg),
                n: samples.len(),
            }
        })
        .collect()
}

fn decide(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig, neighbors: &[usize], reg: f64, n_count: usize) -> usize {
    let d = cfg.dim;
    let mut pooled: Vec<&Sample> = data.user(query.user).iter().collect();
    for &v in neighbors {
        pooled.extend(data.user(v).iter());
    }
    let (m, b) = ridge_system(&pooled, d, reg);
    let theta = gauss_solve(&m, &b);
    let beta = beta_oracle(pooled.len(), n_count, cfg);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, a) in query.candidates.iter().enumerate() {
        let w = gauss_solve(&m, a);
        let score = dot(&theta, a) - beta * dot(a, &w).sqrt();
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

/// Overestimation (`over = true`) or underestimation `γ̂` by direct search.
pub fn gamma_policy_oracle(u: usize, data: &OfflineDataset, cfg: &AlgoConfig, over: bool) -> f64 {
    let est = user_estimates(data, cfg);
    let mut best: Option<f64> = None;
    for v in 0..est.len() {
        if v == u || est[u].ci.is_infinite() || est[v].ci.is_infinite() {
            continue;
        }
        let dd = dist(&est[u].theta, &est[v].theta);
        let slack = cfg.alpha * (est[u].ci + est[v].ci);
        if dd - slack > 0.0 {
            let val = if over { dd + slack } else { dd - slack };
            best = Some(best.map_or(val, |b: f64| b.min(val)));
        }
    }
    best.unwrap_or(0.0)
}

/// Line-by-line version of the connection-based algorithm with a given `γ̂`.
pub fn transliterate_connect(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig, gamma_hat: f64) -> usize {
    let est = user_estimates(data, cfg);
    let n_min = n_min_oracle(cfg);
    let u = query.user;
    let mut neighbors = Vec::new();
    for v in 0..est.len() {
        if v == u {
            continue;
        }
        // `dist < γ̂ − slack`, compared in the same rounding as `γ̂ = dist + slack`.
        let close = dist(&est[u].theta, &est[v].theta) + cfg.alpha * (est[u].ci + est[v].ci) < gamma_hat;
        if close && (est[u].n as f64) >= n_min && (est[v].n as f64) >= n_min {
            neighbors.push(v);
        }
    }
    let n_tilde = 1 + neighbors.len();
    decide(data, query, cfg, &neighbors, cfg.lambda * n_tilde as f64, n_tilde)
}

/// Line-by-line version of the removal-based algorithm.
pub fn transliterate_remove(data: &OfflineDataset, query: &TestQuery, cfg: &AlgoConfig) -> usize {
    let est = user_estimates(data, cfg);
    let u = query.user;
    let mut neighbors = Vec::new();
    for v in 0..est.len() {
        if v == u {
            continue;
        }
        let separated = dist(&est[u].theta, &est[v].theta) > cfg.alpha * (est[u].ci + est[v].ci);
        if !separated {
            neighbors.push(v);
        }
    }
    decide(data, query, cfg, &neighbors, cfg.lambda, 1)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns of the returned matrix).
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut m = a.clone();
    let mut v = identity(n, 1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}

//! Model Confidence Set: sequential equal-predictive-ability tests with a
//! moving-block bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AveragingError;

pub const MIN_PERIODS: usize = 10;
const MAX_AR_ORDER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McsStatistic {
    /// Largest absolute pairwise t-statistic.
    Range,
    /// Largest t-statistic of a model's loss relative to the set average.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLength {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsOptions {
    pub alpha: f64,
    pub statistic: McsStatistic,
    pub bootstrap: usize,
    pub block_length: BlockLength,
    pub seed: u64,
}

impl Default for McsOptions {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            statistic: McsStatistic::Max,
            bootstrap: 5000,
            block_length: BlockLength::Auto,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    /// Indices of the surviving models, ascending.
    pub survivors: Vec<usize>,
    /// Eliminated models with their MCS p-values, in elimination order.
    pub eliminated: Vec<(usize, f64)>,
    pub statistic: McsStatistic,
    pub alpha: f64,
    pub bootstrap: usize,
    pub block_length: usize,
    pub seed: u64,
}

/// Moving-block resample of `0..n`: uniform block starts, blocks of length
/// `block` concatenated and cut to `n`.
fn block_indices(rng: &mut ChaCha8Rng, n: usize, block: usize) -> Vec<usize> {
    let block = block.clamp(1, n);
    let mut idx = Vec::with_capacity(n + block);
    while idx.len() < n {
        let start = rng.random_range(0..=n - block);
        idx.extend(start..start + block);
    }
    idx.truncate(n);
    idx
}

/// Number of AR coefficients more than two standard errors from zero in
/// the AICc-best least-squares AR(p), `p ≤ 10`.
fn significant_ar_terms(d: &[f64]) -> usize {
    let n = d.len();
    let max_p = MAX_AR_ORDER.min(n.saturating_sub(3) / 3);
    let mut best: Option<(f64, usize)> = None;
    for p in 0..=max_p {
        let m = n - p;
        let k = p + 1;
        let x = DMatrix::from_fn(m, k, |i, j| if j == 0 { 1.0 } else { d[p + i - j] });
        let y = DVector::from_fn(m, |i, _| d[p + i]);
        let xtx = x.transpose() * &x;
        let Some(inv) = xtx.clone().try_inverse() else { continue };
        let beta = &inv * x.transpose() * &y;
        let resid = &y - &x * &beta;
        let rss = resid.norm_squared();
        let (mf, kf) = (m as f64, (k + 1) as f64);
        if mf - kf - 1.0 <= 0.0 {
            continue;
        }
        let s2 = (rss / mf).max(1e-300);
        let aicc = mf * s2.ln() + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (mf - kf - 1.0);
        let sigma2 = rss / (m - k).max(1) as f64;
        let count = (1..k)
            .filter(|&j| beta[j].abs() > 2.0 * (sigma2 * inv[(j, j)]).max(0.0).sqrt())
            .count();
        if best.is_none_or(|(a, _)| aicc < a) {
            best = Some((aicc, count));
        }
    }
    best.map_or(0, |b| b.1)
}

/// Largest count of significant AR terms over all pairwise loss
/// differentials, at least one.
pub fn auto_block_length(losses: &DMatrix<f64>) -> usize {
    let m = losses.nrows();
    let mut block = 1;
    for i in 0..m {
        for j in i + 1..m {
            let d: Vec<f64> = (0..losses.ncols()).map(|t| losses[(i, t)] - losses[(j, t)]).collect();
            if d.iter().any(|v| *v != d[0]) {
                block = block.max(significant_ar_terms(&d));
            }
        }
    }
    block
}

/// Bootstrap means of every model's losses, replicate × model. Replicate
/// `b` draws from its own stream of the seeded generator.
fn bootstrap_means(losses: &DMatrix<f64>, b: usize, block: usize, seed: u64) -> DMatrix<f64> {
    let (m, n) = losses.shape();
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let idx = block_indices(&mut rng, n, block);
            (0..m)
                .map(|i| idx.iter().map(|&t| losses[(i, t)]).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    DMatrix::from_fn(b, m, |r, i| rows[r][i])
}

struct Step {
    p_value: f64,
    worst: usize,
}

fn t_ratio(num: f64, var: f64) -> f64 {
    if var > 0.0 {
        num / var.sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        num.signum() * f64::INFINITY
    }
}

fn test_step(mean: &[f64], boot: &DMatrix<f64>, set: &[usize], statistic: McsStatistic) -> Step {
    let b = boot.nrows();
    let k = set.len() as f64;
    match statistic {
        McsStatistic::Max => {
            // relative loss: own mean minus the set average
            let rel = |vals: &dyn Fn(usize) -> f64, i: usize| vals(i) - set.iter().map(|&j| vals(j)).sum::<f64>() / k;
            let obs: Vec<f64> = set.iter().map(|&i| rel(&|j| mean[j], i)).collect();
            let centred: Vec<Vec<f64>> = (0..b)
                .map(|r| {
                    set.iter()
                        .zip(&obs)
                        .map(|(&i, o)| rel(&|j| boot[(r, j)], i) - o)
                        .collect()
                })
                .collect();
            let var: Vec<f64> = (0..set.len())
                .map(|s| centred.iter().map(|c| c[s] * c[s]).sum::<f64>() / b as f64)
                .collect();
            let t: Vec<f64> = obs.iter().zip(&var).map(|(o, v)| t_ratio(*o, *v)).collect();
            let (worst, stat) =
                t.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (s, v)| {
                        if *v > acc.1 {
                            (s, *v)
                        } else {
                            acc
                        }
                    },
                );
            let exceed = centred
                .iter()
                .filter(|c| {
                    let tb = c
                        .iter()
                        .zip(&var)
                        .map(|(x, v)| if *v > 0.0 { x / v.sqrt() } else { 0.0 })
                        .fold(f64::NEG_INFINITY, f64::max);
                    tb >= stat
                })
                .count();
            Step {
                p_value: exceed as f64 / b as f64,
                worst: set[worst],
            }
        }
        McsStatistic::Range => {
            let pairs: Vec<(usize, usize)> = (0..set.len())
                .flat_map(|a| (a + 1..set.len()).map(move |c| (a, c)))
                .collect();
            let obs: Vec<f64> = pairs.iter().map(|&(a, c)| mean[set[a]] - mean[set[c]]).collect();
            let var: Vec<f64> = pairs
                .iter()
                .zip(&obs)
                .map(|(&(a, c), o)| {
                    (0..b)
                        .map(|r| (boot[(r, set[a])] - boot[(r, set[c])] - o).powi(2))
                        .sum::<f64>()
                        / b as f64
                })
                .collect();
            let t: Vec<f64> = obs.iter().zip(&var).map(|(o, v)| t_ratio(*o, *v)).collect();
            let stat = t.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let exceed = (0..b)
                .filter(|&r| {
                    pairs
                        .iter()
                        .zip(obs.iter().zip(&var))
                        .map(|(&(a, c), (o, v))| {
                            if *v > 0.0 {
                                ((boot[(r, set[a])] - boot[(r, set[c])] - o) / v.sqrt()).abs()
                            } else {
                                0.0
                            }
                        })
                        .fold(0.0, f64::max)
                        >= stat
                })
                .count();
            // eliminate the model with the largest t against any other
            let mut worst_score = vec![f64::NEG_INFINITY; set.len()];
            for (&(a, c), tv) in pairs.iter().zip(&t) {
                worst_score[a] = worst_score[a].max(*tv);
                worst_score[c] = worst_score[c].max(-tv);
            }
            let worst = (0..set.len()).fold(0, |w, s| if worst_score[s] > worst_score[w] { s } else { w });
            Step {
                p_value: exceed as f64 / b as f64,
                worst: set[worst],
            }
        }
    }
}

/// Runs the elimination sequence on a model × period loss matrix. A model
/// leaves the set while the equal-predictive-ability test rejects at
/// `alpha`; recorded p-values are the running maximum of the test p-values.
pub fn mcs_select(losses: &DMatrix<f64>, opts: &McsOptions) -> Result<McsResult, AveragingError> {
    let (m, n) = losses.shape();
    if m < 2 {
        return Err(AveragingError::TooFewModels);
    }
    if n < MIN_PERIODS {
        return Err(AveragingError::TooFewPeriods {
            got: n,
            need: MIN_PERIODS,
        });
    }
    let block = match opts.block_length {
        BlockLength::Auto => auto_block_length(losses),
        BlockLength::Fixed(l) => l.max(1),
    };
    let boot = bootstrap_means(losses, opts.bootstrap.max(1), block, opts.seed);
    let mean: Vec<f64> = (0..m).map(|i| losses.row(i).mean()).collect();

    let mut set: Vec<usize> = (0..m).collect();
    let mut eliminated = Vec::new();
    let mut running_p: f64 = 0.0;
    while set.len() > 1 {
        let degenerate = set
            .iter()
            .all(|&i| (0..n).all(|t| losses[(i, t)] == losses[(set[0], t)]));
        if degenerate {
            break;
        }
        let step = test_step(&mean, &boot, &set, opts.statistic);
        running_p = running_p.max(step.p_value);
        if running_p >= opts.alpha {
            break;
        }
        set.retain(|&i| i != step.worst);
        eliminated.push((step.worst, running_p));
    }
    Ok(McsResult {
        survivors: set,
        eliminated,
        statistic: opts.statistic,
        alpha: opts.alpha,
        bootstrap: opts.bootstrap,
        block_length: block,
        seed: opts.seed,
    })
}

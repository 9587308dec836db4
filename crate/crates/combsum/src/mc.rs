//! Monte Carlo engines for permutation sums.
//!
//! Three estimators of `P(S >= u * sqrt(B))` live here, ordered by how deep
//! into the tail they stay useful:
//!
//! * [`naive_tail`]: draw permutations uniformly, count exceedances. Exact
//!   binomial error bars, useless once the target probability drops below
//!   a few dozen hits per run.
//! * [`tilted_is_tail`]: importance sampling under the conjugate measure.
//!   A Metropolis chain over permutations with stationary weights
//!   `prod_i E e^{w X[i][p(i)]}` (one transposition per step touches only
//!   four factors), entries drawn from the tilted cell laws, and the
//!   unbiased reweighting `p = phi(h) * E[e^{-h T} 1{T >= u}]`.
//! * exact enumeration, delegated to [`crate::exact`], for the sizes where
//!   it is feasible.
//!
//! [`ratio_experiment`] and [`esseen_decay`] drive these across a family of
//! sizes to watch the normal-tail ratio and the Kolmogorov distance decay.
//!
//! # Reproducibility
//!
//! Every sampler chunks its work into blocks of [`SAMPLE_CHUNK`] draws and
//! gives chunk `c` the ChaCha12 stream `c` of the run's seed (see
//! [`crate::rng`]). Chunks are merged in index order, so results are
//! bit-identical for any worker count, including a single thread.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::ensemble::{EntryDistribution, MatrixEnsemble};
use crate::error::Error;
use crate::exact::{exact_tail, mgf_exact};
use crate::normal;
use crate::rng::{shuffle, stream};
use crate::stats::{moment_summary, norming_constant, zone_u_max};
use crate::tilt::{self, log_mgf_tilted, max_tilt, reachable_mean, solve_saddlepoint};
use crate::Result;

/// Draws per RNG stream; chunk `c` of a run always uses stream `c`, which
/// makes estimates independent of the worker count.
pub const SAMPLE_CHUNK: u64 = 1 << 16;

/// Tail targets at or above this fraction of the reachable conjugate mean
/// are solved at the fraction instead. The estimator stays unbiased for any
/// tilt; backing off the saturation edge keeps the chain and the error
/// estimator alive when `u` sits exactly at the top of the support.
pub const TILT_BOUNDARY_FRACTION: f64 = 0.95;

/// How a tail estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    TiltedIs,
    Exact,
    Saddlepoint,
}

impl Method {
    /// Stable lowercase tag used in CSV output.
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::TiltedIs => "tilted_is",
            Method::Exact => "exact",
            Method::Saddlepoint => "saddlepoint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A tail probability estimate with its own error assessment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub p_hat: f64,
    /// Binomial for [`naive_tail`], batch means for [`tilted_is_tail`],
    /// zero for exact enumeration.
    pub std_err: f64,
    pub n_samples: u64,
    pub method: Method,
    /// No sample landed in the tail: the target is below what this run can
    /// resolve, and `p_hat` is 0 without a meaningful error bar.
    pub below_resolution: bool,
    /// Estimate came from the self-normalized ratio (normalizer permanent
    /// out of reach), which carries an `O(1/n_samples)` bias.
    pub self_normalized: bool,
}

/// One draw of `S`: a uniform permutation via Fisher-Yates, then one draw
/// from each selected entry.
pub fn sample_sum<R: Rng + ?Sized>(e: &MatrixEnsemble, rng: &mut R) -> f64 {
    let mut perm: Vec<usize> = (0..e.n()).collect();
    draw_sum(e, &mut perm, rng)
}

// Fisher-Yates output is uniform whatever the starting arrangement, so the
// buffer is reused across draws without resetting.
fn draw_sum<R: Rng + ?Sized>(e: &MatrixEnsemble, perm: &mut [usize], rng: &mut R) -> f64 {
    shuffle(perm, rng);
    let mut s = 0.0;
    for (i, &j) in perm.iter().enumerate() {
        s += e.entry(i, j).sample(rng);
    }
    s
}

fn chunk_lengths(total: u64) -> impl Iterator<Item = (u64, u64)> {
    let chunks = total.div_ceil(SAMPLE_CHUNK);
    (0..chunks).map(move |c| (c, SAMPLE_CHUNK.min(total - c * SAMPLE_CHUNK)))
}

// splitmix64 finalizer; decorrelates the per-row seeds handed to samplers
// inside the table-producing experiments.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Plain Monte Carlo estimate of `P(S >= u * sqrt(B))`.
///
/// Requires `n_samples >= 10_000`; the binomial error bar is meaningless
/// below that for tail work. Zero hits set `below_resolution` instead of
/// pretending to an error bar.
pub fn naive_tail(e: &MatrixEnsemble, u: f64, n_samples: u64, seed: u64) -> Result<TailEstimate> {
    if n_samples < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "naive tail estimation needs at least 10000 samples, got {n_samples}"
        )));
    }
    let threshold = u * norming_constant(e)?.sqrt();
    let n = e.n();
    let hits: u64 = chunk_lengths(n_samples)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = stream(seed, c);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut hits = 0u64;
            for _ in 0..len {
                if draw_sum(e, &mut perm, &mut rng) >= threshold {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p_hat = hits as f64 / n_samples as f64;
    Ok(TailEstimate {
        p_hat,
        std_err: (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt(),
        n_samples,
        method: Method::Naive,
        below_resolution: hits == 0,
        self_normalized: false,
    })
}

/// Parameters of the conjugate-measure Metropolis chain.
///
/// `burn_in` and `thin` count transposition proposals (one "sweep" of the
/// chain is `n` proposals). The defaults from [`TiltedChainConfig::auto`]
/// are 50 sweeps of burn-in per matrix row and one sweep between kept
/// samples, generous for the bounded-weight matrices the tilt produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedChainConfig {
    /// Tilt parameter, normally the saddlepoint solution for the target `u`.
    pub h: f64,
    /// Proposals discarded before sampling starts; at least `10 * n`.
    pub burn_in: u64,
    /// Proposals between kept samples; at least 1.
    pub thin: u64,
    /// Batches for the batch-means error estimator; at least 20.
    pub n_batches: u32,
    /// Kept samples per batch.
    pub batch_size: u64,
    pub seed: u64,
}

impl TiltedChainConfig {
    /// Chain configuration for a target `u`, with the tilt solved from the
    /// saddlepoint equation where the permanent calculus allows
    /// (`n <= `[`tilt::TILT_MAX_N`]) and set to `u` itself beyond that (the
    /// tilt tracks the tail location asymptotically, and the estimator is
    /// unbiased for any tilt). Targets at the saturation edge back off per
    /// [`TILT_BOUNDARY_FRACTION`]. `target_samples` is rounded up to a
    /// multiple of 32 batches, at least 64 samples each.
    pub fn auto(e: &MatrixEnsemble, u: f64, target_samples: u64, seed: u64) -> Result<Self> {
        let n = e.n() as u64;
        let h = if e.n() <= tilt::TILT_MAX_N {
            let reach = reachable_mean(e)?;
            let target = if u >= TILT_BOUNDARY_FRACTION * reach {
                TILT_BOUNDARY_FRACTION * reach
            } else {
                u
            };
            solve_saddlepoint(e, target)?.h
        } else {
            u.min(max_tilt(e)?)
        };
        let n_batches = 32u32;
        Ok(TiltedChainConfig {
            h,
            burn_in: 50 * n * n,
            thin: n,
            n_batches,
            batch_size: target_samples.div_ceil(n_batches as u64).max(64),
            seed,
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !self.h.is_finite() {
            return Err(Error::InvalidParameter(format!("tilt {} must be finite", self.h)));
        }
        if self.burn_in < 10 * n as u64 {
            return Err(Error::InvalidParameter(format!(
                "burn-in of {} proposals is below the floor of 10 per row ({})",
                self.burn_in,
                10 * n
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thinning interval must be >= 1".into()));
        }
        if self.n_batches < 20 {
            return Err(Error::InvalidParameter(format!(
                "batch-means error bars need >= 20 batches, got {}",
                self.n_batches
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Metropolis chain over permutations with stationary law proportional to
/// `prod_i exp(log_weight[i][p(i)])`. A proposal transposes two positions,
/// so the acceptance ratio touches exactly four factors.
struct TiltedChain {
    n: usize,
    /// Row-major `n * n` log entry-m.g.f. values at the tilt.
    log_weight: Vec<f64>,
    perm: Vec<usize>,
}

impl TiltedChain {
    fn new(n: usize, log_weight: Vec<f64>) -> Self {
        TiltedChain { n, log_weight, perm: (0..n).collect() }
    }

    #[inline]
    fn lw(&self, i: usize, j: usize) -> f64 {
        self.log_weight[i * self.n + j]
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let a = rng.random_range(0..self.n);
        let mut b = rng.random_range(0..self.n - 1);
        if b >= a {
            b += 1;
        }
        let (pa, pb) = (self.perm[a], self.perm[b]);
        let delta = self.lw(a, pb) + self.lw(b, pa) - self.lw(a, pa) - self.lw(b, pb);
        if delta >= 0.0 || rng.random::<f64>() < delta.exp() {
            self.perm.swap(a, b);
        }
    }
}

/// Importance-sampling estimate of `P(S >= u * sqrt(B))` under the
/// conjugate measure at `cfg.h`.
///
/// The chain samples permutations from the tilted weight law, entries come
/// from the tilted cell laws, and each kept sample contributes
/// `e^{-h T} 1{T >= u}`; multiplying by `phi(h)` makes the average unbiased
/// for the tail probability. The error bar is batch means over
/// `cfg.n_batches` contiguous batches, which absorbs the chain correlation
/// a binomial error bar would ignore.
///
/// `phi(h)` needs a permanent. Beyond [`crate::exact::PERMANENT_MAX_N`]
/// (or if the unscaled permanent overflows) the estimate falls back to the
/// self-normalized ratio `sum(e^{-hT} 1)/sum(e^{-hT})`, which needs no
/// normalizer but carries an `O(1/n_samples)` bias; the result is flagged
/// `self_normalized`.
pub fn tilted_is_tail(e: &MatrixEnsemble, u: f64, cfg: &TiltedChainConfig) -> Result<TailEstimate> {
    let n = e.n();
    cfg.validate(n)?;
    let b = norming_constant(e)?;
    let root_b = b.sqrt();
    let w = cfg.h / root_b;

    let mut log_weight = vec![0.0f64; n * n];
    let mut tilted: Vec<Vec<EntryDistribution>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            log_weight[i * n + j] = e.entry(i, j).log_mgf_real(w)?;
            row.push(e.entry(i, j).tilt(w)?);
        }
        tilted.push(row);
    }

    let log_phi = if n <= tilt::TILT_MAX_N {
        Some(log_mgf_tilted(e, cfg.h)?)
    } else {
        match mgf_exact(e, Complex64::new(cfg.h, 0.0)) {
            Ok(v) if v.re > 0.0 && v.re.is_finite() => Some(v.re.ln()),
            _ => None,
        }
    };

    let mut rng = stream(cfg.seed, 0);
    let mut chain = TiltedChain::new(n, log_weight);
    for _ in 0..cfg.burn_in {
        chain.step(&mut rng);
    }

    let nb = cfg.n_batches as usize;
    let kept = cfg.n_batches as u64 * cfg.batch_size;
    let mut batch_tail = vec![0.0f64; nb]; // sums of e^{-hT} 1{T >= u}
    let mut batch_all = vec![0.0f64; nb]; // sums of e^{-hT}
    for k in 0..kept {
        for _ in 0..cfg.thin {
            chain.step(&mut rng);
        }
        let mut s = 0.0;
        for (i, &j) in chain.perm.iter().enumerate() {
            s += tilted[i][j].sample(&mut rng);
        }
        let t = s / root_b;
        let weight = (-cfg.h * t).exp();
        let batch = (k / cfg.batch_size) as usize;
        batch_all[batch] += weight;
        if t >= u {
            batch_tail[batch] += weight;
        }
    }

    let bs = cfg.batch_size as f64;
    let tail_means: Vec<f64> = batch_tail.iter().map(|s| s / bs).collect();
    let tail_bar = tail_means.iter().sum::<f64>() / nb as f64;

    let estimate = match log_phi {
        Some(log_phi) => {
            // p = phi(h) * mean, assembled in log space: phi alone can sit
            // near e^600 while the mean undoes almost all of it.
            let spread = tail_means.iter().map(|y| (y - tail_bar).powi(2)).sum::<f64>()
                / (nb as f64 - 1.0);
            let sd_of_mean = (spread / nb as f64).sqrt();
            TailEstimate {
                p_hat: if tail_bar > 0.0 { (log_phi + tail_bar.ln()).exp() } else { 0.0 },
                std_err: if sd_of_mean > 0.0 { (log_phi + sd_of_mean.ln()).exp() } else { 0.0 },
                n_samples: kept,
                method: Method::TiltedIs,
                below_resolution: tail_bar == 0.0,
                self_normalized: false,
            }
        }
        None => {
            // Self-normalized ratio: E_h[e^{-hT}] = 1/phi cancels the
            // missing normalizer. Delta-method error from the batch pairs.
            let all_means: Vec<f64> = batch_all.iter().map(|s| s / bs).collect();
            let all_bar = all_means.iter().sum::<f64>() / nb as f64;
            let ratio = tail_bar / all_bar;
            let spread = tail_means
                .iter()
                .zip(&all_means)
                .map(|(y, z)| (y - ratio * z).powi(2))
                .sum::<f64>()
                / (nb as f64 - 1.0);
            TailEstimate {
                p_hat: ratio,
                std_err: (spread / nb as f64).sqrt() / all_bar,
                n_samples: kept,
                method: Method::TiltedIs,
                below_resolution: tail_bar == 0.0,
                self_normalized: true,
            }
        }
    };
    Ok(estimate)
}

/// How the tail location is chosen for each size in [`ratio_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum URule {
    /// Same `u` for every size.
    Fixed(f64),
    /// `u = fraction * zone_u_max(e, 1.0)`, so the target scales with the
    /// admissible moderate-deviation zone.
    ZoneFraction(f64),
}

/// One size's outcome in the normal-tail ratio table.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub n: usize,
    pub u: f64,
    pub gamma: f64,
    pub outcome: RowOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Estimated {
        estimate: TailEstimate,
        /// `1 - Phi(u)`.
        gauss_tail: f64,
        /// `p_hat / (1 - Phi(u))`; the quantity that drifts to 1.
        ratio: f64,
    },
    Skipped {
        reason: String,
    },
}

/// Estimates `P(S >= u sqrt(B)) / (1 - Phi(u))` across sizes.
///
/// For each `n` the method is auto-selected: exact enumeration when the law
/// is enumerable, the tilted sampler when the saddlepoint calculus applies
/// (`n <= `[`tilt::TILT_MAX_N`]), plain Monte Carlo otherwise. Exact rows
/// carry a zero error bar; tilted rows cap their kept-sample count at
/// `2^18` since the sampler needs far fewer draws for the same error.
///
/// `enforce_zone` skips sizes whose `u` exceeds `zone_u_max(e, 1.0)`, the
/// edge of the range where the normal-tail comparison is meaningful; pass
/// `false` to run outside it anyway (the ratio then documents how the
/// approximation degrades). Infeasible sizes produce [`RowOutcome::Skipped`]
/// with the reason, never an error.
pub fn ratio_experiment<F>(
    family: F,
    n_list: &[usize],
    u_rule: URule,
    n_samples: u64,
    seed: u64,
    enforce_zone: bool,
) -> Vec<RatioRow>
where
    F: Fn(usize) -> Result<MatrixEnsemble>,
{
    n_list
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let row_seed = mix_seed(seed, idx as u64);
            match ratio_row(&family, n, u_rule, n_samples, row_seed, enforce_zone) {
                Ok(row) => row,
                Err(err) => RatioRow {
                    n,
                    u: f64::NAN,
                    gamma: f64::NAN,
                    outcome: RowOutcome::Skipped { reason: err.to_string() },
                },
            }
        })
        .collect()
}

fn ratio_row<F>(
    family: &F,
    n: usize,
    u_rule: URule,
    n_samples: u64,
    seed: u64,
    enforce_zone: bool,
) -> Result<RatioRow>
where
    F: Fn(usize) -> Result<MatrixEnsemble>,
{
    let e = family(n)?;
    let summary = moment_summary(&e)?;
    let zone_edge = zone_u_max(&e, 1.0)?;
    let u = match u_rule {
        URule::Fixed(u) => u,
        URule::ZoneFraction(f) => f * zone_edge,
    };
    if enforce_zone && u > zone_edge {
        return Ok(RatioRow {
            n,
            u,
            gamma: summary.gamma,
            outcome: RowOutcome::Skipped {
                reason: format!(
                    "u = {u:.6} exceeds the admissible zone edge {zone_edge:.6} at n = {n}"
                ),
            },
        });
    }

    let threshold = u * summary.norming.sqrt();
    let estimate = match exact_tail(&e, threshold) {
        Ok(p) => TailEstimate {
            p_hat: p,
            std_err: 0.0,
            n_samples: 0,
            method: Method::Exact,
            below_resolution: false,
            self_normalized: false,
        },
        Err(_) => {
            let tilted = if e.n() <= tilt::TILT_MAX_N {
                let target = n_samples.min(1 << 18);
                TiltedChainConfig::auto(&e, u, target, seed)
                    .and_then(|cfg| tilted_is_tail(&e, u, &cfg))
                    .ok()
            } else {
                None
            };
            match tilted {
                Some(estimate) => estimate,
                None => naive_tail(&e, u, n_samples, seed)?,
            }
        }
    };
    let gauss_tail = normal::sf(u);
    Ok(RatioRow {
        n,
        u,
        gamma: summary.gamma,
        outcome: RowOutcome::Estimated { estimate, gauss_tail, ratio: estimate.p_hat / gauss_tail },
    })
}

/// One size's Kolmogorov distance in [`esseen_decay`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsseenRow {
    pub n: usize,
    /// Kolmogorov distance between the empirical law of `T` and the
    /// standard normal.
    pub ks: f64,
    /// The moment-ratio decay rate this distance is compared against; NaN
    /// for a degenerate (zero-variance) ensemble.
    pub gamma_over_root_n: f64,
}

/// Kolmogorov distances across sizes, with the smallest constant `C` such
/// that `ks <= C * gamma / sqrt(n)` holds on every (nondegenerate) row.
#[derive(Debug, Clone, PartialEq)]
pub struct EsseenReport {
    pub rows: Vec<EsseenRow>,
    pub fitted_c: f64,
}

/// Samples the empirical law of `T = S / sqrt(B)` at each size and measures
/// its Kolmogorov distance to the standard normal.
///
/// A degenerate ensemble (every entry a point mass at zero) has `S = 0`
/// identically; its "normalized" law is taken as the point mass at zero,
/// whose distance to the normal is exactly 0.5. Those rows carry a NaN
/// decay rate and do not enter the fitted constant.
pub fn esseen_decay<F>(
    family: F,
    n_list: &[usize],
    n_samples: u64,
    seed: u64,
) -> Result<EsseenReport>
where
    F: Fn(usize) -> Result<MatrixEnsemble>,
{
    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let e = family(n)?;
        let row_seed = mix_seed(seed, idx as u64);
        let (values, gamma_over_root_n) = match norming_constant(&e) {
            Ok(b) => {
                let root_b = b.sqrt();
                let mut values = sample_values(&e, n_samples, row_seed);
                for v in &mut values {
                    *v /= root_b;
                }
                let summary = moment_summary(&e)?;
                (values, summary.gamma / (n as f64).sqrt())
            }
            Err(Error::DegenerateEnsemble) => (vec![0.0; n_samples as usize], f64::NAN),
            Err(other) => return Err(other),
        };
        rows.push(EsseenRow { n, ks: kolmogorov_distance(values), gamma_over_root_n });
    }
    let fitted_c = rows
        .iter()
        .filter(|r| r.gamma_over_root_n.is_finite())
        .map(|r| r.ks / r.gamma_over_root_n)
        .fold(f64::NAN, f64::max);
    Ok(EsseenReport { rows, fitted_c })
}

fn sample_values(e: &MatrixEnsemble, n_samples: u64, seed: u64) -> Vec<f64> {
    let n = e.n();
    // Chunks are concatenated in index order after the parallel phase, so
    // the value sequence is independent of the worker count.
    let per_chunk: Vec<Vec<f64>> = chunk_lengths(n_samples)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = stream(seed, c);
            let mut perm: Vec<usize> = (0..n).collect();
            (0..len).map(|_| draw_sum(e, &mut perm, &mut rng)).collect::<Vec<f64>>()
        })
        .collect();
    per_chunk.into_iter().flatten().collect()
}

/// Kolmogorov distance of a sample to the standard normal: sort once, then
/// the sup over the two one-sided gaps at each order statistic.
fn kolmogorov_distance(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in values.iter().enumerate() {
        let cdf = normal::cdf(x);
        d = d.max((i + 1) as f64 / n - cdf).max(cdf - i as f64 / n);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::for_each_permutation;
    use crate::stats;

    fn anchor_grid() -> MatrixEnsemble {
        MatrixEnsemble::degenerate(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 0.0, 1.0],
            vec![0.0, 1.0, -1.0],
        ])
        .unwrap()
    }

    // Lexicographic rank via the factorial number system.
    fn perm_rank(p: &[usize]) -> usize {
        let n = p.len();
        let mut rank = 0;
        for i in 0..n {
            let smaller = p[i + 1..].iter().filter(|&&x| x < p[i]).count();
            rank = rank * (n - i) + smaller;
        }
        rank
    }

    fn binom(n: u32, k: u32) -> f64 {
        (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
    }

    // P(sum of n independent unit coin flips >= threshold).
    fn coin_sum_tail(n: u32, threshold: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..=n {
            if 2.0 * k as f64 - n as f64 >= threshold {
                total += binom(n, k);
            }
        }
        total / (n as f64).exp2()
    }

    fn random_two_atom_grid(n: usize, seed: u64) -> MatrixEnsemble {
        let mut rng = stream(seed, 99);
        let rows = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let a = rng.random_range(0.5..2.0);
                        let p = rng.random_range(0.2..0.8);
                        let b = -a * p / (1.0 - p);
                        EntryDistribution::finite_discrete(vec![(a, p), (b, 1.0 - p)]).unwrap()
                    })
                    .collect()
            })
            .collect();
        MatrixEnsemble::new(rows, None).unwrap()
    }

    #[test]
    fn all_zero_grid_always_sums_to_zero() {
        let e = MatrixEnsemble::degenerate(&vec![vec![0.0; 3]; 3]).unwrap();
        let mut rng = stream(5, 0);
        for _ in 0..100 {
            assert_eq!(sample_sum(&e, &mut rng), 0.0);
        }
    }

    #[test]
    fn fisher_yates_is_uniform_over_permutations() {
        let draws = 1_000_000u64;
        let mut rng = stream(7, 0);
        let mut perm: Vec<usize> = (0..4).collect();
        let mut counts = [0u64; 24];
        for _ in 0..draws {
            shuffle(&mut perm, &mut rng);
            counts[perm_rank(&perm)] += 1;
        }
        let expected = draws as f64 / 24.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 1 - 1e-6 quantile of chi-square with 23 degrees of freedom.
        assert!(chi2 < 70.54955713680532, "chi2 = {chi2}");
    }

    #[test]
    fn empirical_law_matches_enumeration() {
        let e = anchor_grid();
        let draws = 1_000_000u64;
        let mut rng = stream(11, 0);
        let mut counts = [0u64; 3]; // S in {-3, 0, 3}
        for _ in 0..draws {
            match sample_sum(&e, &mut rng).round() as i64 {
                -3 => counts[0] += 1,
                0 => counts[1] += 1,
                3 => counts[2] += 1,
                other => panic!("impossible sum {other}"),
            }
        }
        for (count, p) in counts.iter().zip([1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]) {
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let dev = (*count as f64 - draws as f64 * p).abs();
            assert!(dev <= 4.0 * sigma, "atom count off by {dev} > 4 sigma {sigma}");
        }
    }

    #[test]
    fn empirical_variance_matches_moment_formula() {
        let e = MatrixEnsemble::checkerboard_exponential(4, 1.0).unwrap();
        let n_draws = 1_000_000u64;
        let values = sample_values(&e, n_draws, 13);
        let nf = n_draws as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
        let exact = stats::variance(&e).unwrap();
        let se = ((m4 - m2 * m2) / nf).sqrt();
        assert!((m2 - exact).abs() <= 5.0 * se, "var {m2} vs {exact}, se {se}");
    }

    #[test]
    fn naive_is_certain_below_the_support() {
        let est = naive_tail(&anchor_grid(), -10.0, 10_000, 3).unwrap();
        assert_eq!(est.p_hat, 1.0);
        assert!(!est.below_resolution);
        assert_eq!(est.method, Method::Naive);
    }

    #[test]
    fn naive_rejects_tiny_sample_counts() {
        assert!(matches!(
            naive_tail(&anchor_grid(), 1.0, 9_999, 3),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn naive_matches_exact_anchor_tail() {
        // P(T >= 3/sqrt(2)) = P(S = 3) = 1/6.
        let u = 3.0 / (2.0f64).sqrt();
        let est = naive_tail(&anchor_grid(), u, 1_000_000, 17).unwrap();
        assert!((est.p_hat - 1.0 / 6.0).abs() <= 4.0 * est.std_err);
    }

    #[test]
    fn naive_is_identical_for_any_worker_count() {
        let e = MatrixEnsemble::checkerboard_exponential(4, 1.0).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| naive_tail(&e, 1.0, 200_000, 23).unwrap())
        };
        let single = run(1);
        let multi = run(3);
        assert_eq!(single.p_hat.to_bits(), multi.p_hat.to_bits());
        assert_eq!(single.std_err.to_bits(), multi.std_err.to_bits());

        let again = run(3);
        assert_eq!(multi, again);
    }

    #[test]
    fn chain_stationary_law_matches_its_weights() {
        let e = anchor_grid();
        let b = norming_constant(&e).unwrap();
        let w = 0.8 / b.sqrt();

        let mut perms: Vec<Vec<usize>> = Vec::new();
        for_each_permutation(3, |p| perms.push(p.to_vec()));
        let weights: Vec<f64> = perms
            .iter()
            .map(|p| {
                (0..3)
                    .map(|i| e.entry(i, p[i]).log_mgf_real(w).unwrap())
                    .sum::<f64>()
                    .exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();

        let mut log_weight = vec![0.0; 9];
        for (i, j, cell) in e.cells() {
            log_weight[i * 3 + j] = cell.log_mgf_real(w).unwrap();
        }
        let mut chain = TiltedChain::new(3, log_weight);
        let mut rng = stream(31, 0);
        for _ in 0..2_000 {
            chain.step(&mut rng);
        }
        let kept = 100_000u64;
        let mut counts = [0u64; 6];
        for _ in 0..kept {
            for _ in 0..30 {
                chain.step(&mut rng);
            }
            counts[perm_rank(&chain.perm)] += 1;
        }
        for (idx, &count) in counts.iter().enumerate() {
            let p = weights[idx] / z;
            let sigma = (kept as f64 * p * (1.0 - p)).sqrt();
            let dev = (count as f64 - kept as f64 * p).abs();
            assert!(dev <= 4.0 * sigma, "perm {idx}: dev {dev} > 4 sigma {sigma}");
        }
    }

    #[test]
    fn tilted_matches_exact_at_interior_target() {
        let e = anchor_grid();
        let cfg = TiltedChainConfig::auto(&e, 1.2, 16_384, 41).unwrap();
        let est = tilted_is_tail(&e, 1.2, &cfg).unwrap();
        assert_eq!(est.method, Method::TiltedIs);
        assert!(!est.self_normalized);
        assert_eq!(est.n_samples, 16_384);
        assert!(est.std_err > 0.0);
        assert!((est.p_hat - 1.0 / 6.0).abs() <= 4.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn tilted_backs_off_a_saturated_target_and_stays_unbiased() {
        // u = 3/sqrt(2) is the top of the support: the conjugate mean never
        // reaches it, and the config backs the tilt off the edge. The
        // estimator is unbiased for any tilt, so the answer is still 1/6.
        let e = anchor_grid();
        let u = 3.0 / (2.0f64).sqrt();
        let cfg = TiltedChainConfig::auto(&e, u, 16_384, 43).unwrap();
        let reach = reachable_mean(&e).unwrap();
        let sol = solve_saddlepoint(&e, TILT_BOUNDARY_FRACTION * reach).unwrap();
        assert!((cfg.h - sol.h).abs() <= 1e-12, "expected the backed-off tilt");

        let est = tilted_is_tail(&e, u, &cfg).unwrap();
        assert!((est.p_hat - 1.0 / 6.0).abs() <= 4.0 * est.std_err.max(1e-12), "{est:?}");
    }

    #[test]
    fn zero_tilt_reduces_to_plain_sampling() {
        let e = MatrixEnsemble::checkerboard_exponential(4, 1.0).unwrap();
        let cfg = TiltedChainConfig {
            h: 0.0,
            burn_in: 1_000,
            thin: 4,
            n_batches: 25,
            batch_size: 8_000,
            seed: 47,
        };
        let tilted = tilted_is_tail(&e, 1.0, &cfg).unwrap();
        let naive = naive_tail(&e, 1.0, 200_000, 48).unwrap();
        let combined = tilted.std_err.hypot(naive.std_err);
        assert!(
            (tilted.p_hat - naive.p_hat).abs() <= 4.0 * combined,
            "tilted {tilted:?} vs naive {naive:?}"
        );
    }

    #[test]
    fn self_normalized_fallback_beyond_the_permanent_range() {
        // Identical coin-flip cells: S is a sum of n independent signs, so
        // the binomial tail is an exact oracle even where no permanent fits.
        let n = 22;
        let e = MatrixEnsemble::rademacher_grid(n, 1.0).unwrap();
        let u = 1.0;
        let cfg = TiltedChainConfig::auto(&e, u, 16_384, 53).unwrap();
        assert_eq!(cfg.h, 1.0, "beyond the solver range the tilt is u itself");
        let est = tilted_is_tail(&e, u, &cfg).unwrap();
        assert!(est.self_normalized, "n = 22 exceeds every permanent guard");

        let exact = coin_sum_tail(n as u32, u * (n as f64).sqrt());
        assert!((est.p_hat - exact).abs() <= 4.0 * est.std_err, "{est:?} vs exact {exact}");
    }

    #[test]
    fn tilted_is_bit_reproducible() {
        let e = anchor_grid();
        let cfg = TiltedChainConfig::auto(&e, 1.2, 4_096, 59).unwrap();
        let one = tilted_is_tail(&e, 1.2, &cfg).unwrap();
        let two = tilted_is_tail(&e, 1.2, &cfg).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn exact_naive_and_tilted_agree_on_random_small_ensembles() {
        for case in 0..20u64 {
            let n = 3 + (case as usize % 4);
            let e = random_two_atom_grid(n, 1_000 + case);
            let b = norming_constant(&e).unwrap();
            let u = 0.5;
            let exact = exact_tail(&e, u * b.sqrt()).unwrap();

            let naive = naive_tail(&e, u, 100_000, 2_000 + case).unwrap();
            assert!(
                (naive.p_hat - exact).abs() <= 4.0 * naive.std_err,
                "case {case}: naive {naive:?} vs exact {exact}"
            );

            let cfg = TiltedChainConfig::auto(&e, u, 8_192, 3_000 + case).unwrap();
            let tilted = tilted_is_tail(&e, u, &cfg).unwrap();
            assert!(!tilted.self_normalized);
            assert!(
                (tilted.p_hat - exact).abs() <= 4.0 * tilted.std_err,
                "case {case}: tilted {tilted:?} vs exact {exact}"
            );
        }
    }

    #[test]
    fn chain_config_floors_are_enforced() {
        let e = anchor_grid();
        let good = TiltedChainConfig::auto(&e, 1.0, 4_096, 61).unwrap();
        assert_eq!(good.burn_in, 50 * 9);
        assert_eq!(good.thin, 3);
        assert_eq!(good.n_batches, 32);
        assert_eq!(good.batch_size, 128);

        let short_burn = TiltedChainConfig { burn_in: 29, ..good };
        assert!(matches!(
            tilted_is_tail(&e, 1.0, &short_burn),
            Err(Error::InvalidParameter(_))
        ));
        let few_batches = TiltedChainConfig { n_batches: 19, ..good };
        assert!(matches!(
            tilted_is_tail(&e, 1.0, &few_batches),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn ratio_experiment_selects_methods_and_honors_the_zone() {
        let family = |n: usize| MatrixEnsemble::rademacher_grid(n, 1.0);
        let sizes = [4usize, 12, 30];

        // u = 2 is outside the admissible zone at all three sizes.
        let guarded = ratio_experiment(family, &sizes, URule::Fixed(2.0), 20_000, 71, true);
        for row in &guarded {
            match &row.outcome {
                RowOutcome::Skipped { reason } => {
                    assert!(reason.contains("zone"), "reason: {reason}")
                }
                other => panic!("expected a zone skip, got {other:?}"),
            }
        }

        let rows = ratio_experiment(family, &sizes, URule::Fixed(2.0), 20_000, 71, false);
        for row in &rows {
            assert!((row.gamma - 1.0).abs() <= 1e-12, "coin flip grids have ratio 1");
            let exact = coin_sum_tail(row.n as u32, 2.0 * (row.n as f64).sqrt());
            match &row.outcome {
                RowOutcome::Estimated { estimate, gauss_tail, ratio } => {
                    assert!((gauss_tail - normal::sf(2.0)).abs() <= 1e-15);
                    match row.n {
                        4 => {
                            assert_eq!(estimate.method, Method::Exact);
                            assert!((estimate.p_hat - exact).abs() <= 1e-12);
                            assert_eq!(estimate.std_err, 0.0);
                            assert!((ratio - exact / normal::sf(2.0)).abs() <= 1e-9);
                        }
                        12 => {
                            assert_eq!(estimate.method, Method::TiltedIs);
                            assert!((estimate.p_hat - exact).abs() <= 4.0 * estimate.std_err);
                        }
                        _ => {
                            assert_eq!(estimate.method, Method::Naive);
                            assert!((estimate.p_hat - exact).abs() <= 4.0 * estimate.std_err);
                        }
                    }
                }
                RowOutcome::Skipped { reason } => panic!("unexpected skip: {reason}"),
            }
        }
    }

    #[test]
    fn degenerate_family_pins_the_distance_at_half() {
        let family = |n: usize| MatrixEnsemble::degenerate(&vec![vec![0.0; n]; n]);
        let report = esseen_decay(family, &[3, 5], 1_000, 83).unwrap();
        for row in &report.rows {
            assert_eq!(row.ks, 0.5);
            assert!(row.gamma_over_root_n.is_nan());
        }
        assert!(report.fitted_c.is_nan());
    }

    #[test]
    fn normal_distance_decays_along_the_checkerboard_family() {
        let family = |n: usize| MatrixEnsemble::checkerboard_exponential(n, 1.0);
        let report = esseen_decay(family, &[4, 16], 40_000, 89).unwrap();
        assert!(
            report.rows[1].ks < report.rows[0].ks,
            "ks did not decay: {:?}",
            report.rows
        );
        assert!(report.fitted_c.is_finite() && report.fitted_c > 0.0);
        assert!(report.rows[0].gamma_over_root_n > report.rows[1].gamma_over_root_n);
    }
}

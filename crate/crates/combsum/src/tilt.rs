//! Exponential tilting for permutation sums.
//!
//! For the normalized sum `T = S / sqrt(B)` the tilted measure at parameter
//! `h` reweights permutation outcomes by `e^{hT}`. Its normalizer is the
//! moment generating function `phi(h) = E e^{hT}`, a permanent of entry
//! m.g.f.s, and its first two log-derivatives give the conjugate mean `m(h)`
//! and variance `sigma^2(h)`. The saddlepoint construction inverts `m`: given
//! a tail location `u` it finds the tilt whose conjugate mean equals `u`, and
//! from it a closed-form tail approximation
//!
//! ```text
//! P(T >= u)  ~  phi(h) * exp(-h^2 / 2) * (1 - Phi(u)),   m(h) = u.
//! ```
//!
//! All derivatives are exact permanent identities, not finite differences:
//! differentiating a permanent in `h` replaces one column at a time by its
//! entrywise m.g.f. derivative, so `m` costs `n` extra permanents and
//! `sigma^2` another `n + n(n-1)/2`. Rows are rescaled by their largest
//! entry before each permanent; the scale factors cancel in every ratio and
//! re-enter `log phi` as an exact sum of logs, which keeps the arithmetic in
//! range even when single entries reach `e^{40}`.

use rayon::prelude::*;

use crate::ensemble::MatrixEnsemble;
use crate::error::Error;
use crate::exact::{factorial_f64, permanent_real};
use crate::normal;
use crate::stats::norming_constant;
use crate::Result;

/// Largest matrix order accepted by the permanent-based tilt calculus.
///
/// A conjugate mean and variance costs `1 + 2n + n(n-1)/2` permanents of an
/// `n x n` matrix, each `O(2^n n)`; at `n = 16` that is a fraction of a
/// second, at `n = 20` it is minutes.
pub const TILT_MAX_N: usize = 16;

/// Exponent ceiling for entries with bounded support.
///
/// Their m.g.f.s are entire, so the only limit on the tilt is arithmetic:
/// we keep every entry exponent `|w| * max|x|` at or below this value, far
/// from the `~709` overflow threshold so that products and derivative
/// columns stay in range too.
pub const ENTIRE_EXPONENT_CAP: f64 = 40.0;

/// Fraction of the analyticity edge actually used for tilting.
///
/// Rate-limited entries have a pole at `w = rate`; stopping short of it
/// keeps the conjugate variance and the Newton step well conditioned.
pub const DOMAIN_SAFETY: f64 = 0.95;

/// Residual bound the solver guarantees on return: `|m(h) - u|` at most
/// this multiple of `max(1, u)`.
pub const ACCEPTED_RESIDUAL: f64 = 1e-10;

const MAX_NEWTON_ITERS: u32 = 100;
// Early-exit target, well below the guarantee; permanent round-off may keep
// it out of reach for larger n, in which case the best bracketed iterate is
// accepted instead (and still checked against ACCEPTED_RESIDUAL).
const RESIDUAL_TARGET: f64 = 1e-12;

/// Conjugate mean, variance, and log-normalizer of `T` at tilt `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedState {
    pub h: f64,
    /// `log E e^{hT}`.
    pub log_mgf: f64,
    /// Mean of `T` under the tilted measure.
    pub mean: f64,
    /// Variance of `T` under the tilted measure; strictly positive.
    pub variance: f64,
}

/// Saddlepoint tilt for a tail location `u`, with the tail approximation it
/// induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddlepointSolution {
    pub u: f64,
    /// Tilt with conjugate mean `u`.
    pub h: f64,
    /// `log E e^{hT}` at the solution, needed by importance-sampling
    /// estimators.
    pub log_mgf: f64,
    /// Conjugate variance at the solution.
    pub tilted_variance: f64,
    /// `phi(h) exp(-h^2/2) (1 - Phi(u))`.
    pub tail_approx: f64,
    /// The plain normal tail `1 - Phi(u)`, for ratio diagnostics.
    pub gauss_tail: f64,
    pub newton_iters: u32,
    /// `|m(h) - u|` at return; at most [`ACCEPTED_RESIDUAL`]` * max(1, u)`.
    pub residual: f64,
}

/// One permanent evaluation in the derivative calculus. Columns are either
/// the plain m.g.f. column or its first or second entrywise derivative.
enum PermanentJob {
    Base,
    FirstDerivative(usize),
    SecondDerivative(usize),
    CrossDerivative(usize, usize),
}

/// Raw conjugate quantities; `variance` is NaN when not requested and may be
/// nonpositive when cancellation swamps it at a saturated tilt. Callers that
/// hand a variance out validate it first.
#[derive(Clone, Copy)]
struct ConjugateParts {
    log_mgf: f64,
    mean: f64,
    variance: f64,
}

fn guard_size(e: &MatrixEnsemble) -> Result<()> {
    let n = e.n();
    if n > TILT_MAX_N {
        let per_permanent = (n as f64) * (n as f64).exp2();
        let order = 1.0 + 2.0 * n as f64 + (n * (n - 1)) as f64 / 2.0;
        return Err(Error::SizeGuard {
            what: "tilt permanent calculus",
            n,
            cost: order * per_permanent,
            limit: 153.0 * 16.0 * (16f64).exp2(),
        });
    }
    Ok(())
}

fn conjugate_parts(e: &MatrixEnsemble, h: f64, with_variance: bool) -> Result<ConjugateParts> {
    guard_size(e)?;
    let n = e.n();
    let b = norming_constant(e)?;
    let root_b = b.sqrt();
    let w = h / root_b;

    // Entrywise m.g.f. and its first two derivatives at w, then each row
    // rescaled by its largest m.g.f. value. The permanent picks one entry
    // per row, so the rescale multiplies every permanent below by the same
    // product and cancels in all ratios.
    let mut base = vec![vec![0.0f64; n]; n];
    let mut d1 = vec![vec![0.0f64; n]; n];
    let mut d2 = vec![vec![0.0f64; n]; n];
    for (i, j, cell) in e.cells() {
        let (f, f1, f2) = cell.mgf_with_derivatives(w)?;
        base[i][j] = f;
        d1[i][j] = f1;
        d2[i][j] = f2;
    }
    let mut log_row_scale = 0.0;
    for i in 0..n {
        let r = base[i].iter().copied().fold(0.0f64, f64::max);
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::NumericalDegeneracy(format!(
                "row {i} of the m.g.f. matrix degenerated at tilt {h}"
            )));
        }
        log_row_scale += r.ln();
        for j in 0..n {
            base[i][j] /= r;
            d1[i][j] /= r;
            d2[i][j] /= r;
        }
    }

    let mut jobs = Vec::with_capacity(1 + 2 * n + n * (n - 1) / 2);
    jobs.push(PermanentJob::Base);
    jobs.extend((0..n).map(PermanentJob::FirstDerivative));
    if with_variance {
        jobs.extend((0..n).map(PermanentJob::SecondDerivative));
        for j in 0..n {
            for k in j + 1..n {
                jobs.push(PermanentJob::CrossDerivative(j, k));
            }
        }
    }
    let values: Result<Vec<f64>> = jobs
        .par_iter()
        .map(|job| {
            let mut m = base.clone();
            match *job {
                PermanentJob::Base => {}
                PermanentJob::FirstDerivative(j) => replace_column(&mut m, &d1, j),
                PermanentJob::SecondDerivative(j) => replace_column(&mut m, &d2, j),
                PermanentJob::CrossDerivative(j, k) => {
                    replace_column(&mut m, &d1, j);
                    replace_column(&mut m, &d1, k);
                }
            }
            permanent_real(&m)
        })
        .collect();
    let values = values?;

    let p = values[0];
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::NumericalDegeneracy(format!(
            "normalizing permanent underflowed at tilt {h}"
        )));
    }
    let sum_d1: f64 = values[1..1 + n].iter().sum();
    let mean = sum_d1 / (p * root_b);
    if !mean.is_finite() {
        return Err(Error::NumericalDegeneracy(format!(
            "conjugate mean overflowed at tilt {h}"
        )));
    }
    let variance = if with_variance {
        let sum_d2: f64 = values[1 + n..1 + 2 * n].iter().sum();
        let sum_cross: f64 = values[1 + 2 * n..].iter().sum();
        (sum_d2 + 2.0 * sum_cross) / (p * b) - mean * mean
    } else {
        f64::NAN
    };
    let log_mgf = p.ln() + log_row_scale - factorial_f64(n).ln();
    Ok(ConjugateParts { log_mgf, mean, variance })
}

fn replace_column(m: &mut [Vec<f64>], source: &[Vec<f64>], j: usize) {
    for (row, src) in m.iter_mut().zip(source) {
        row[j] = src[j];
    }
}

/// Evaluates the conjugate state of `T = S / sqrt(B)` at tilt `h`.
///
/// Errors with [`Error::MgfDomain`] when `h / sqrt(B)` leaves some entry's
/// analyticity strip, with [`Error::SizeGuard`] above [`TILT_MAX_N`], and
/// with [`Error::NumericalDegeneracy`] when the conjugate variance cancels
/// to nothing, which signals a tilt at the saturation edge.
pub fn tilted_state(e: &MatrixEnsemble, h: f64) -> Result<TiltedState> {
    let parts = conjugate_parts(e, h, true)?;
    if !parts.variance.is_finite() || parts.variance <= 0.0 {
        return Err(Error::NumericalDegeneracy(format!(
            "conjugate variance lost all precision at tilt {h}"
        )));
    }
    Ok(TiltedState {
        h,
        log_mgf: parts.log_mgf,
        mean: parts.mean,
        variance: parts.variance,
    })
}

/// `log E e^{hT}` alone, by the same row-scaled permanent calculus; cheaper
/// than [`tilted_state`] and usable even at saturated tilts where the
/// conjugate variance cancels away.
pub fn log_mgf_tilted(e: &MatrixEnsemble, h: f64) -> Result<f64> {
    Ok(conjugate_parts(e, h, false)?.log_mgf)
}

/// Largest upward tilt the ensemble supports, with [`DOMAIN_SAFETY`] applied.
///
/// Rate-limited cells (exponential, Gamma) whose positive direction faces the
/// pole cap the tilt at `sqrt(B) * rate`; bounded-support cells cap it at
/// `sqrt(B) * `[`ENTIRE_EXPONENT_CAP`]` / max|x|` to keep exponents in
/// floating-point range. The result is the safety fraction of the smallest
/// cap over all cells.
pub fn max_tilt(e: &MatrixEnsemble) -> Result<f64> {
    let b = norming_constant(e)?;
    let mut w_edge = f64::INFINITY;
    for (_, _, cell) in e.cells() {
        let cap = if cell.is_entire() {
            // Scale-zero cells are constant zero and never constrain.
            ENTIRE_EXPONENT_CAP / cell.canonical_scale()
        } else {
            cell.real_domain().1
        };
        w_edge = w_edge.min(cap);
    }
    if !w_edge.is_finite() {
        return Err(Error::NumericalDegeneracy(
            "no cell bounds the upward tilt; the tilt ceiling is infinite".into(),
        ));
    }
    Ok(DOMAIN_SAFETY * b.sqrt() * w_edge)
}

/// Conjugate mean at [`max_tilt`]: the largest tail location the solver can
/// reach for this ensemble. Cheap (skips the variance permanents) and safe
/// even where the variance would cancel away.
pub fn reachable_mean(e: &MatrixEnsemble) -> Result<f64> {
    let h_cap = max_tilt(e)?;
    Ok(conjugate_parts(e, h_cap, false)?.mean)
}

/// Finds the tilt whose conjugate mean equals `u` and evaluates the induced
/// tail approximation.
///
/// `m` is strictly increasing with `m(0) = 0`, so for `u >= 0` the solution
/// is unique when it exists. When `u` exceeds the conjugate mean reachable
/// at [`max_tilt`], the error is [`Error::ZoneExceeded`] carrying that
/// reachable mean, so callers can fall back to a shorter tilt.
///
/// The iteration is Newton on `m(h) - u`, started at `u` itself (the tilt
/// tracks the tail location in the moderate range) and using the conjugate
/// variance as the exact derivative, safeguarded by bisection on a bracket
/// that the monotonicity of `m` keeps valid. Permanent round-off puts a
/// floor under how small the residual can get, so the iteration accepts the
/// best bracketed iterate once steps stop making progress; the returned
/// `residual` is guaranteed at most [`ACCEPTED_RESIDUAL`]` * max(1, u)`.
pub fn solve_saddlepoint(e: &MatrixEnsemble, u: f64) -> Result<SaddlepointSolution> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tail location must be finite and nonnegative, got {u}"
        )));
    }
    let h_cap = max_tilt(e)?;
    let m_reach = conjugate_parts(e, h_cap, false)?.mean;
    if m_reach < u {
        return Err(Error::ZoneExceeded { m_reach });
    }

    let target = RESIDUAL_TARGET * u.max(1.0);
    let accepted = ACCEPTED_RESIDUAL * u.max(1.0);
    // Bracket invariant: m(lo) <= u <= m(hi).
    let mut lo = 0.0f64;
    let mut hi = h_cap;
    let mut h = u.min(0.5 * h_cap);
    let mut iters = 0u32;
    let mut best: Option<(f64, f64, ConjugateParts)> = None;
    loop {
        let state = conjugate_parts(e, h, true)?;
        let residual = state.mean - u;
        let healthy = state.variance.is_finite() && state.variance > 0.0;
        if healthy && best.is_none_or(|(r, _, _)| residual.abs() < r) {
            best = Some((residual.abs(), h, state));
        }
        if healthy && residual.abs() <= target {
            return Ok(finish(u, h, &state, iters, residual.abs()));
        }
        if residual < 0.0 {
            lo = h;
        } else {
            hi = h;
        }
        iters += 1;

        let newton = if healthy { h - residual / state.variance } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let stalled = next == h || hi - lo <= 4.0 * f64::EPSILON * hi.max(1.0);
        if stalled || iters >= MAX_NEWTON_ITERS {
            // Progress has hit the permanent round-off floor; take the best
            // bracketed iterate if it meets the documented bound.
            return match best {
                Some((r, h_best, parts)) if r <= accepted => {
                    Ok(finish(u, h_best, &parts, iters, r))
                }
                _ => Err(Error::NumericalDegeneracy(format!(
                    "saddle point iteration stalled at h = {h}, residual {residual:+e}"
                ))),
            };
        }
        h = next;
    }
}

fn finish(u: f64, h: f64, state: &ConjugateParts, iters: u32, residual: f64) -> SaddlepointSolution {
    let gauss_tail = normal::sf(u);
    SaddlepointSolution {
        u,
        h,
        log_mgf: state.log_mgf,
        tilted_variance: state.variance,
        tail_approx: (state.log_mgf - 0.5 * h * h).exp() * gauss_tail,
        gauss_tail,
        newton_iters: iters,
        residual,
    }
}

/// Tail approximation `phi(h) exp(-h^2/2) (1 - Phi(u))` at the saddlepoint
/// tilt for `u`.
pub fn saddlepoint_tail(e: &MatrixEnsemble, u: f64) -> Result<f64> {
    Ok(solve_saddlepoint(e, u)?.tail_approx)
}

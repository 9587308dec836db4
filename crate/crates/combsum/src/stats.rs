//! Moment functionals of the permuted sum: norming constant, variance, and
//! the moment ratio that measures how far the ensemble is from the
//! normal-approximation regime.

use crate::ensemble::MatrixEnsemble;
use crate::error::Error;
use crate::Result;

/// Default slack multiplier applied to the admissible-`u` edge; the theorem
/// behind the edge is asymptotic, so experiments stay at half the nominal
/// boundary unless told otherwise.
pub const DEFAULT_ZONE_SLACK: f64 = 0.5;

/// Scalar summaries of an ensemble's first three moment layers.
#[derive(Debug, Clone, Copy)]
pub struct MomentSummary {
    pub n: usize,
    /// Norming constant: average of all entry second moments.
    pub norming: f64,
    /// Variance of the permuted sum.
    pub variance: f64,
    /// Largest entry first absolute moment, scaled by `sqrt(n / norming)`.
    pub scaled_mean_max: f64,
    /// Largest row sum of second moments, relative to the norming constant.
    pub row_energy_max: f64,
    /// Largest column sum of second moments, relative to the norming
    /// constant.
    pub col_energy_max: f64,
    /// All third absolute moments, scaled by `sqrt(n) * norming^(3/2)`.
    pub third_moment_sum: f64,
    /// Maximum of the four terms above; always at least 1.
    pub gamma: f64,
    /// Admissible-`u` edge at [`DEFAULT_ZONE_SLACK`].
    pub zone_u_max: f64,
}

/// Norming constant `B = (1/n) * sum of all entry second moments`.
/// Errors when every entry is a point mass at zero.
pub fn norming_constant(e: &MatrixEnsemble) -> Result<f64> {
    let mut b = 0.0;
    for (_, _, d) in e.cells() {
        b += d.raw_moment(2)?;
    }
    if b == 0.0 {
        return Err(Error::DegenerateEnsemble);
    }
    Ok(b / e.n() as f64)
}

/// Variance of the permuted sum.
///
/// For a uniform permutation and centered entry means this is
/// `(1/n) * sum E X^2 + (1/(n(n-1))) * sum (E X)^2`: the diagonal term of
/// the square is the norming constant, and the cross terms collapse to the
/// squared means because row and column mean sums vanish.
pub fn variance(e: &MatrixEnsemble) -> Result<f64> {
    let n = e.n() as f64;
    let mut sum_sq = 0.0;
    let mut sum_mean_sq = 0.0;
    for (_, _, d) in e.cells() {
        sum_sq += d.raw_moment(2)?;
        let m = d.mean();
        sum_mean_sq += m * m;
    }
    Ok(sum_sq / n + sum_mean_sq / (n * (n - 1.0)))
}

/// Computes the four-term moment ratio and the admissible-`u` edge.
///
/// The ratio is the maximum of: the largest scaled first absolute moment,
/// the largest row and column second-moment concentrations, and the scaled
/// third-moment mass. It is scale-invariant and never below 1 (the row
/// concentrations average to exactly 1 over rows).
pub fn moment_summary(e: &MatrixEnsemble) -> Result<MomentSummary> {
    let n = e.n();
    let nf = n as f64;
    let b = norming_constant(e)?;
    let sqrt_b = b.sqrt();

    let mut abs1_max: f64 = 0.0;
    let mut row_sq = vec![0.0; n];
    let mut col_sq = vec![0.0; n];
    let mut abs3_sum = 0.0;
    for (i, j, d) in e.cells() {
        abs1_max = abs1_max.max(d.abs_moment(1)?);
        let sq = d.raw_moment(2)?;
        row_sq[i] += sq;
        col_sq[j] += sq;
        abs3_sum += d.abs_moment(3)?;
    }

    let scaled_mean_max = nf.sqrt() / sqrt_b * abs1_max;
    let row_energy_max = row_sq.iter().fold(0.0f64, |a, &v| a.max(v)) / b;
    let col_energy_max = col_sq.iter().fold(0.0f64, |a, &v| a.max(v)) / b;
    let third_moment_sum = abs3_sum / (nf.sqrt() * b * sqrt_b);
    let gamma = scaled_mean_max
        .max(row_energy_max)
        .max(col_energy_max)
        .max(third_moment_sum);

    Ok(MomentSummary {
        n,
        norming: b,
        variance: variance(e)?,
        scaled_mean_max,
        row_energy_max,
        col_energy_max,
        third_moment_sum,
        gamma,
        zone_u_max: zone_edge_from(nf, gamma, sqrt_b, e.scale_bound(), DEFAULT_ZONE_SLACK),
    })
}

/// Admissible-`u` edge: `slack * min((sqrt(n)/gamma)^(1/3), sqrt(B)/M)`.
/// Tail points below this edge are inside the regime where the normal tail
/// is the right yardstick.
pub fn zone_u_max(e: &MatrixEnsemble, slack: f64) -> Result<f64> {
    if !(slack > 0.0 && slack.is_finite()) {
        return Err(Error::InvalidParameter(format!("zone slack {slack} must be > 0")));
    }
    let s = moment_summary(e)?;
    Ok(zone_edge_from(
        e.n() as f64,
        s.gamma,
        s.norming.sqrt(),
        e.scale_bound(),
        slack,
    ))
}

fn zone_edge_from(n: f64, gamma: f64, sqrt_b: f64, m: f64, slack: f64) -> f64 {
    slack * (n.sqrt() / gamma).cbrt().min(sqrt_b / m)
}

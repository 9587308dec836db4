//! Entry distributions and the square arrays of them that drive every other
//! module.
//!
//! An ensemble is an `n x n` grid of independent scalar distributions
//! together with a dominating scale `M`. The sum under study picks one entry
//! per row through a uniform random permutation of the columns, so all
//! normalization below (means canceling along rows and columns, the scale
//! `M` bounding every entry) is what makes that sum centered and its tails
//! controllable.
//!
//! Four entry families are supported: point masses, finite discrete laws,
//! and exponential / Gamma laws carrying an explicit sign. The sign flips
//! the support to the negative half-line, which is how mean-zero grids are
//! assembled from one-sided building blocks.

use crate::error::{Error, Line};
use crate::Result;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::Distribution;

/// Largest moment order the closed-form moment evaluators accept. Beyond
/// this, factorial-type growth exceeds the f64 range even for unit scales.
pub const MAX_MOMENT_ORDER: u32 = 170;

/// Absolute tolerance on row and column sums of entry means.
pub const CENTERING_TOL: f64 = 1e-10;

/// Orientation of a one-sided entry law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    /// (-1)^k for the sign raised to the k-th power.
    fn pow(self, k: u32) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus if k.is_multiple_of(2) => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// One cell of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum EntryDistribution {
    /// Deterministic value `c`.
    PointMass { c: f64 },
    /// Finitely many atoms `(value, prob)`; probabilities are positive and
    /// sum to one. Atoms are kept sorted by value.
    FiniteDiscrete { atoms: Vec<(f64, f64)> },
    /// `sign * Exp(rate)`.
    SignedExponential { rate: f64, sign: Sign },
    /// `sign * Gamma(shape, rate)`.
    SignedGamma { shape: f64, rate: f64, sign: Sign },
}

use EntryDistribution::*;

impl EntryDistribution {
    pub fn point_mass(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidParameter("point mass value must be finite".into()));
        }
        Ok(PointMass { c })
    }

    pub fn finite_discrete(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("discrete law needs at least one atom".into()));
        }
        let mut total = 0.0;
        for &(x, p) in &atoms {
            if !x.is_finite() || !p.is_finite() {
                return Err(Error::InvalidParameter("discrete atom not finite".into()));
            }
            if p <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "atom at {x} has non-positive probability {p}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "atom probabilities sum to {total}, not 1"
            )));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(FiniteDiscrete { atoms })
    }

    pub fn signed_exponential(rate: f64, sign: Sign) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("exponential rate {rate} must be > 0")));
        }
        Ok(SignedExponential { rate, sign })
    }

    pub fn signed_gamma(shape: f64, rate: f64, sign: Sign) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma shape {shape} must be > 0")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma rate {rate} must be > 0")));
        }
        Ok(SignedGamma { shape, rate, sign })
    }

    /// Symmetric two-point law on `{-scale, +scale}`.
    pub fn rademacher(scale: f64) -> Result<Self> {
        Self::finite_discrete(vec![(-scale, 0.5), (scale, 0.5)])
    }

    fn family_name(&self) -> &'static str {
        match self {
            PointMass { .. } => "point mass",
            FiniteDiscrete { .. } => "finite discrete",
            SignedExponential { .. } => "signed exponential",
            SignedGamma { .. } => "signed gamma",
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            PointMass { c } => *c,
            FiniteDiscrete { atoms } => atoms.iter().map(|&(x, p)| x * p).sum(),
            SignedExponential { rate, sign } => sign.as_f64() / rate,
            SignedGamma { shape, rate, sign } => sign.as_f64() * shape / rate,
        }
    }

    /// `E X^k`. Factorial-type factors are accumulated as interleaved
    /// products `(t / rate)` so intermediates never overflow unless the
    /// result itself does.
    pub fn raw_moment(&self, k: u32) -> Result<f64> {
        if k > MAX_MOMENT_ORDER {
            return Err(Error::MomentRange { family: self.family_name(), k });
        }
        let v = match self {
            PointMass { c } => c.powi(k as i32),
            FiniteDiscrete { atoms } => atoms.iter().map(|&(x, p)| p * x.powi(k as i32)).sum(),
            SignedExponential { rate, sign } => {
                sign.pow(k) * rising_over_rate(1.0, *rate, k)
            }
            SignedGamma { shape, rate, sign } => {
                sign.pow(k) * rising_over_rate(*shape, *rate, k)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::MomentRange { family: self.family_name(), k })
        }
    }

    /// `E |X|^k`.
    pub fn abs_moment(&self, k: u32) -> Result<f64> {
        if k > MAX_MOMENT_ORDER {
            return Err(Error::MomentRange { family: self.family_name(), k });
        }
        let v = match self {
            PointMass { c } => c.abs().powi(k as i32),
            FiniteDiscrete { atoms } => {
                atoms.iter().map(|&(x, p)| p * x.abs().powi(k as i32)).sum()
            }
            SignedExponential { rate, .. } => rising_over_rate(1.0, *rate, k),
            SignedGamma { shape, rate, .. } => rising_over_rate(*shape, *rate, k),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::MomentRange { family: self.family_name(), k })
        }
    }

    pub fn variance(&self) -> Result<f64> {
        let m1 = self.mean();
        Ok(self.raw_moment(2)? - m1 * m1)
    }

    /// Open interval of real m.g.f. arguments, `(lo, hi)`; infinite for
    /// entire families.
    pub fn real_domain(&self) -> (f64, f64) {
        match self {
            PointMass { .. } | FiniteDiscrete { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            SignedExponential { rate, sign: Sign::Plus }
            | SignedGamma { rate, sign: Sign::Plus, .. } => (f64::NEG_INFINITY, *rate),
            SignedExponential { rate, sign: Sign::Minus }
            | SignedGamma { rate, sign: Sign::Minus, .. } => (-rate, f64::INFINITY),
        }
    }

    fn check_domain_complex(&self, z: Complex64) -> Result<()> {
        match self {
            SignedExponential { rate, sign } | SignedGamma { rate, sign, .. } => {
                if sign.as_f64() * z.re < *rate {
                    Ok(())
                } else {
                    Err(Error::MgfDomain { max_abs: *rate })
                }
            }
            _ => Ok(()),
        }
    }

    /// `E e^{zX}` for complex `z` inside the analyticity domain.
    pub fn mgf(&self, z: Complex64) -> Result<Complex64> {
        self.check_domain_complex(z)?;
        let v = match self {
            PointMass { c } => (z * *c).exp(),
            FiniteDiscrete { atoms } => atoms
                .iter()
                .map(|&(x, p)| (z * x).exp() * p)
                .sum::<Complex64>(),
            SignedExponential { rate, sign } => {
                let denom = Complex64::new(*rate, 0.0) - z * sign.as_f64();
                Complex64::new(*rate, 0.0) / denom
            }
            SignedGamma { shape, rate, sign } => {
                let base = Complex64::new(*rate, 0.0)
                    / (Complex64::new(*rate, 0.0) - z * sign.as_f64());
                base.powf(*shape)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericalDegeneracy(format!(
                "m.g.f. overflow at z = {z} for {}",
                self.family_name()
            )))
        }
    }

    /// `E e^{hX}` for real `h`; the fast path used by tilting and sampling.
    pub fn mgf_real(&self, h: f64) -> Result<f64> {
        Ok(self.log_mgf_real(h)?.exp())
    }

    /// `log E e^{hX}` without intermediate overflow.
    pub fn log_mgf_real(&self, h: f64) -> Result<f64> {
        let (lo, hi) = self.real_domain();
        if !(h > lo && h < hi) {
            return Err(Error::MgfDomain { max_abs: lo.abs().min(hi.abs()) });
        }
        let v = match self {
            PointMass { c } => h * c,
            FiniteDiscrete { atoms } => {
                // log-sum-exp against the dominant exponent
                let m = atoms
                    .iter()
                    .map(|&(x, _)| h * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = atoms.iter().map(|&(x, p)| p * (h * x - m).exp()).sum();
                m + s.ln()
            }
            SignedExponential { rate, sign } => rate.ln() - (rate - sign.as_f64() * h).ln(),
            SignedGamma { shape, rate, sign } => {
                shape * (rate.ln() - (rate - sign.as_f64() * h).ln())
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericalDegeneracy(format!(
                "log m.g.f. overflow at h = {h} for {}",
                self.family_name()
            )))
        }
    }

    /// M.g.f. and its first two derivatives in the argument, at real `w`.
    /// Closed forms per family; no differencing.
    pub fn mgf_with_derivatives(&self, w: f64) -> Result<(f64, f64, f64)> {
        let (lo, hi) = self.real_domain();
        if !(w > lo && w < hi) {
            return Err(Error::MgfDomain { max_abs: lo.abs().min(hi.abs()) });
        }
        let triple = match self {
            PointMass { c } => {
                let f = (w * c).exp();
                (f, c * f, c * c * f)
            }
            FiniteDiscrete { atoms } => {
                let (mut f, mut f1, mut f2) = (0.0, 0.0, 0.0);
                for &(x, p) in atoms {
                    let e = p * (w * x).exp();
                    f += e;
                    f1 += x * e;
                    f2 += x * x * e;
                }
                (f, f1, f2)
            }
            SignedExponential { rate, sign } => {
                let s = sign.as_f64();
                let d = rate - s * w;
                let f = rate / d;
                (f, s * rate / (d * d), 2.0 * rate / (d * d * d))
            }
            SignedGamma { shape, rate, sign } => {
                let s = sign.as_f64();
                let d = rate - s * w;
                let f = (rate / d).powf(*shape);
                (f, s * shape / d * f, shape * (shape + 1.0) / (d * d) * f)
            }
        };
        if triple.0.is_finite() && triple.1.is_finite() && triple.2.is_finite() {
            Ok(triple)
        } else {
            Err(Error::NumericalDegeneracy(format!(
                "m.g.f. derivative overflow at w = {w} for {}",
                self.family_name()
            )))
        }
    }

    /// Exponentially tilted law: density reweighted by `e^{h x} / E e^{hX}`.
    ///
    /// Point masses are invariant; discrete laws reweight their atoms;
    /// exponential and Gamma laws keep their family with the rate shifted to
    /// `rate - sign * h`.
    pub fn tilt(&self, h: f64) -> Result<Self> {
        let (lo, hi) = self.real_domain();
        if !(h > lo && h < hi) {
            return Err(Error::MgfDomain { max_abs: lo.abs().min(hi.abs()) });
        }
        Ok(match self {
            PointMass { c } => PointMass { c: *c },
            FiniteDiscrete { atoms } => {
                let m = atoms
                    .iter()
                    .map(|&(x, _)| h * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> =
                    atoms.iter().map(|&(x, p)| p * (h * x - m).exp()).collect();
                let z: f64 = weights.iter().sum();
                FiniteDiscrete {
                    atoms: atoms
                        .iter()
                        .zip(&weights)
                        .map(|(&(x, _), &wt)| (x, wt / z))
                        .collect(),
                }
            }
            SignedExponential { rate, sign } => SignedExponential {
                rate: rate - sign.as_f64() * h,
                sign: *sign,
            },
            SignedGamma { shape, rate, sign } => SignedGamma {
                shape: *shape,
                rate: rate - sign.as_f64() * h,
                sign: *sign,
            },
        })
    }

    /// Entry scaled by `lambda > 0`: the law of `lambda * X`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale factor {lambda} must be > 0")));
        }
        Ok(match self {
            PointMass { c } => PointMass { c: c * lambda },
            FiniteDiscrete { atoms } => FiniteDiscrete {
                atoms: atoms.iter().map(|&(x, p)| (x * lambda, p)).collect(),
            },
            SignedExponential { rate, sign } => SignedExponential {
                rate: rate / lambda,
                sign: *sign,
            },
            SignedGamma { shape, rate, sign } => SignedGamma {
                shape: *shape,
                rate: rate / lambda,
                sign: *sign,
            },
        })
    }

    /// Natural magnitude of the entry: the support bound for bounded laws,
    /// `1 / rate` for exponential and Gamma laws.
    pub fn canonical_scale(&self) -> f64 {
        match self {
            PointMass { c } => c.abs(),
            FiniteDiscrete { atoms } => atoms.iter().map(|&(x, _)| x.abs()).fold(0.0, f64::max),
            SignedExponential { rate, .. } | SignedGamma { rate, .. } => 1.0 / rate,
        }
    }

    /// True when the m.g.f. is entire (bounded support).
    pub fn is_entire(&self) -> bool {
        matches!(self, PointMass { .. } | FiniteDiscrete { .. })
    }

    pub fn is_zero_mass(&self) -> bool {
        matches!(self, PointMass { c } if *c == 0.0)
    }

    /// Atom list for exactly representable laws; `None` for continuous ones.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            PointMass { c } => Some(vec![(*c, 1.0)]),
            FiniteDiscrete { atoms } => Some(atoms.clone()),
            _ => None,
        }
    }

    /// One draw. Discrete laws invert a single uniform against the
    /// cumulative atom weights; exponential laws invert `-ln(1-U)/rate`;
    /// Gamma laws delegate to the library sampler.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PointMass { c } => *c,
            FiniteDiscrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(x, p) in atoms {
                    acc += p;
                    if u < acc {
                        return x;
                    }
                }
                atoms[atoms.len() - 1].0
            }
            SignedExponential { rate, sign } => {
                let u: f64 = rng.random();
                sign.as_f64() * (-(1.0 - u).ln()) / rate
            }
            SignedGamma { shape, rate, sign } => {
                let g = rand_distr::Gamma::new(*shape, 1.0 / rate)
                    .expect("parameters validated at construction");
                sign.as_f64() * g.sample(rng)
            }
        }
    }
}

/// Interleaved product `prod_{t=0}^{k-1} (start + t) / rate`; equals the
/// rising factorial of `start` divided by `rate^k` without intermediate
/// overflow (partial products are bracketed by the first factor and the
/// final value).
fn rising_over_rate(start: f64, rate: f64, k: u32) -> f64 {
    let mut acc = 1.0;
    for t in 0..k {
        acc *= (start + t as f64) / rate;
    }
    acc
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// An `n x n` grid of independent entry distributions plus a dominating
/// scale `M`, with entry means canceling along every row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEnsemble {
    n: usize,
    entries: Vec<EntryDistribution>,
    scale_bound: f64,
}

impl MatrixEnsemble {
    /// Validating constructor: requires a square grid with `n >= 2`, mean
    /// sums below [`CENTERING_TOL`] on every row and column, and a positive
    /// scale. Passing `None` derives the scale as the largest canonical
    /// entry scale (1.0 for an all-zero grid).
    pub fn new(rows: Vec<Vec<EntryDistribution>>, scale_bound: Option<f64>) -> Result<Self> {
        let report = centering_report(&rows)?;
        if !report.pass {
            let (line, index, residual) = report.worst();
            return Err(Error::Centering { line, index, residual });
        }
        Self::from_parts_unchecked(rows, scale_bound)
    }

    /// Shape-checked constructor that skips the centering requirement.
    /// Exists so diagnostic paths can inspect deliberately off-center grids;
    /// every builder and parser in this crate goes through [`Self::new`].
    pub fn from_parts_unchecked(
        rows: Vec<Vec<EntryDistribution>>,
        scale_bound: Option<f64>,
    ) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!("ensemble size {n} must be >= 2")));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("ensemble grid must be square".into()));
        }
        let auto = rows
            .iter()
            .flatten()
            .map(EntryDistribution::canonical_scale)
            .fold(0.0, f64::max);
        let scale_bound = match scale_bound {
            Some(m) if m > 0.0 && m.is_finite() => m,
            Some(m) => {
                return Err(Error::InvalidParameter(format!("scale bound {m} must be > 0")))
            }
            None if auto > 0.0 => auto,
            None => 1.0,
        };
        Ok(MatrixEnsemble {
            n,
            entries: rows.into_iter().flatten().collect(),
            scale_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dominating scale `M`.
    pub fn scale_bound(&self) -> f64 {
        self.scale_bound
    }

    pub fn entry(&self, i: usize, j: usize) -> &EntryDistribution {
        &self.entries[i * self.n + j]
    }

    /// Row-major iteration as `(i, j, entry)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, &EntryDistribution)> {
        let n = self.n;
        self.entries
            .iter()
            .enumerate()
            .map(move |(k, d)| (k / n, k % n, d))
    }

    pub fn rows(&self) -> Vec<Vec<EntryDistribution>> {
        self.entries.chunks(self.n).map(|c| c.to_vec()).collect()
    }

    /// The ensemble of `lambda * X` entries; centering is preserved exactly,
    /// so no re-validation happens.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        let rows = self
            .entries
            .chunks(self.n)
            .map(|row| row.iter().map(|d| d.scaled(lambda)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts_unchecked(rows, Some(self.scale_bound * lambda))
    }

    /// Grid of point masses. Fails constructively if the constants do not
    /// cancel along every row and column.
    pub fn degenerate(grid: &[Vec<f64>]) -> Result<Self> {
        let rows = grid
            .iter()
            .map(|row| row.iter().map(|&c| EntryDistribution::point_mass(c)).collect())
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, None)
    }

    /// Alternating `+Exp(rate)` / `-Exp(rate)` by cell parity; `n` must be
    /// even for the means to cancel.
    pub fn checkerboard_exponential(n: usize, rate: f64) -> Result<Self> {
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "checkerboard needs even n, got {n}"
            )));
        }
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let sign = if (i + j) % 2 == 0 { Sign::Plus } else { Sign::Minus };
                        EntryDistribution::signed_exponential(rate, sign)
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, None)
    }

    /// Every cell the symmetric two-point law on `{-scale, +scale}`.
    pub fn rademacher_grid(n: usize, scale: f64) -> Result<Self> {
        let cell = EntryDistribution::rademacher(scale)?;
        let rows = vec![vec![cell; n]; n];
        Self::new(rows, None)
    }

    /// Grid assembled from a palette of laws and a pattern of palette
    /// indices. The centering check runs on the assembled grid, so patterns
    /// whose palette means do not cancel fail constructively.
    pub fn from_palette(
        palette: &[EntryDistribution],
        pattern: &[Vec<usize>],
    ) -> Result<Self> {
        let rows = pattern
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&ix| {
                        palette.get(ix).cloned().ok_or_else(|| {
                            Error::InvalidParameter(format!(
                                "pattern index {ix} outside palette of {}",
                                palette.len()
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, None)
    }

    /// Cells cycle through `+Exp(rate_a), -Exp(rate_a), +Exp(rate_b),
    /// -Exp(rate_b)` by `(i + j) mod 4`; `n` must be divisible by 4.
    pub fn four_cycle_exponential(n: usize, rate_a: f64, rate_b: f64) -> Result<Self> {
        if !n.is_multiple_of(4) {
            return Err(Error::InvalidParameter(format!(
                "four-law cycle needs n divisible by 4, got {n}"
            )));
        }
        let palette = vec![
            EntryDistribution::signed_exponential(rate_a, Sign::Plus)?,
            EntryDistribution::signed_exponential(rate_a, Sign::Minus)?,
            EntryDistribution::signed_exponential(rate_b, Sign::Plus)?,
            EntryDistribution::signed_exponential(rate_b, Sign::Minus)?,
        ];
        let pattern: Vec<Vec<usize>> =
            (0..n).map(|i| (0..n).map(|j| (i + j) % 4).collect()).collect();
        Self::from_palette(&palette, &pattern)
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Result of checking mean cancellation along rows and columns.
#[derive(Debug, Clone)]
pub struct CenteringReport {
    pub pass: bool,
    pub tol: f64,
    /// `(row index, |sum of means|)` for the worst row.
    pub worst_row: (usize, f64),
    /// `(column index, |sum of means|)` for the worst column.
    pub worst_col: (usize, f64),
}

impl CenteringReport {
    fn worst(&self) -> (Line, usize, f64) {
        if self.worst_row.1 >= self.worst_col.1 {
            (Line::Row, self.worst_row.0, self.worst_row.1)
        } else {
            (Line::Column, self.worst_col.0, self.worst_col.1)
        }
    }
}

/// Checks that entry means cancel along every row and column of a square
/// grid, within [`CENTERING_TOL`]. Works on raw grids so that deliberately
/// broken ones can be inspected.
pub fn centering_report(rows: &[Vec<EntryDistribution>]) -> Result<CenteringReport> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter("centering check needs a square grid".into()));
    }
    let mut row_sums = vec![0.0; n];
    let mut col_sums = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            let m = d.mean();
            row_sums[i] += m;
            col_sums[j] += m;
        }
    }
    let worst = |sums: &[f64]| {
        sums.iter()
            .map(|s| s.abs())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty grid")
    };
    let worst_row = worst(&row_sums);
    let worst_col = worst(&col_sums);
    Ok(CenteringReport {
        pass: worst_row.1 <= CENTERING_TOL && worst_col.1 <= CENTERING_TOL,
        tol: CENTERING_TOL,
        worst_row,
        worst_col,
    })
}

/// Worst cell found by the moment-domination check.
#[derive(Debug, Clone, Copy)]
pub struct BernsteinWitness {
    pub row: usize,
    pub col: usize,
    /// Moment order on the right-hand side (1, 2, or 3).
    pub s: u32,
    /// Moment order on the left-hand side.
    pub k: u32,
    pub ratio: f64,
}

/// Result of checking `|E X^k| <= D k! M^{k-s} E|X|^s` over all cells,
/// `s in {1,2,3}` and `s <= k <= k_max`.
#[derive(Debug, Clone)]
pub struct BernsteinReport {
    pub pass: bool,
    /// The constant the caller asked to verify.
    pub d: f64,
    pub k_max: u32,
    /// Largest `|E X^k| / (k! M^{k-s} E|X|^s)` observed.
    pub max_ratio: f64,
    /// Smallest constant that would pass: equals `max_ratio`.
    pub minimal_d: f64,
    pub worst: Option<BernsteinWitness>,
    /// Cells skipped because `E|X|^s = 0` (point masses at zero); the
    /// numerator vanishes with the denominator there, so they constrain
    /// nothing.
    pub skipped: Vec<(usize, usize)>,
}

/// Relative slack in the pass verdict. Saturating families (signed
/// exponential against `M = 1/rate`) make the ratio exactly 1 analytically,
/// but both sides are built from O(k_max) float multiplications, so the
/// computed ratio can land a few ulp above the constant being verified. Real
/// violations differ by factors, not parts in 1e9.
pub const BERNSTEIN_ROUNDOFF_SLACK: f64 = 1e-9;

/// Verifies the factorial moment-domination condition for every cell of the
/// ensemble against its scale bound `M`.
pub fn bernstein_report(e: &MatrixEnsemble, d: f64, k_max: u32) -> Result<BernsteinReport> {
    if !(1..=MAX_MOMENT_ORDER).contains(&k_max) {
        return Err(Error::InvalidParameter(format!(
            "moment order cap {k_max} out of range 1..={MAX_MOMENT_ORDER}"
        )));
    }
    let m = e.scale_bound();
    let mut max_ratio: f64 = 0.0;
    let mut worst = None;
    let mut skipped = Vec::new();
    for (i, j, dist) in e.cells() {
        if dist.is_zero_mass() {
            skipped.push((i, j));
            continue;
        }
        for s in 1..=3u32.min(k_max) {
            let base = dist.abs_moment(s)?;
            let mut bound = factorial(s) * base;
            for k in s..=k_max {
                if k > s {
                    // advance k! M^{k-s} E|X|^s by one order
                    bound *= k as f64 * m;
                }
                let ratio = dist.raw_moment(k)?.abs() / bound;
                if ratio > max_ratio {
                    max_ratio = ratio;
                    worst = Some(BernsteinWitness { row: i, col: j, s, k, ratio });
                }
            }
        }
    }
    Ok(BernsteinReport {
        pass: max_ratio <= d * (1.0 + BERNSTEIN_ROUNDOFF_SLACK),
        d,
        k_max,
        max_ratio,
        minimal_d: max_ratio,
        worst,
        skipped,
    })
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(|t| t as f64).product()
}

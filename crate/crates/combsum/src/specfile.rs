//! Ensemble description files.
//!
//! An ensemble is described by a small TOML document with an explicit
//! `schema` version so archived experiment configs stay replayable:
//!
//! ```toml
//! schema = 1
//!
//! [ensemble]
//! kind = "checkerboard"
//! n = 4
//! rate = 1.0
//! ```
//!
//! `kind` selects one of six constructions:
//!
//! | kind            | fields                        |
//! |-----------------|-------------------------------|
//! | `degenerate`    | `grid` (rows of constants)    |
//! | `checkerboard`  | `n`, `rate`                   |
//! | `rademacher`    | `n`, `scale`                  |
//! | `four_cycle`    | `n`, `rate_a`, `rate_b`       |
//! | `palette`       | `palette` (laws), `pattern`   |
//! | `explicit`      | `rows` (grid of laws)         |
//!
//! Every kind accepts an optional `scale_bound` overriding the derived
//! dominating scale. Individual laws (in `palette` and `explicit`) carry a
//! `family` tag:
//!
//! ```toml
//! [[ensemble.palette]]
//! family = "exponential"
//! rate = 1.0
//! sign = 1
//! ```
//!
//! with families `point_mass{c}`, `discrete{values, probs}`,
//! `exponential{rate, sign}`, and `gamma{shape, rate, sign}`. Unknown keys
//! are rejected everywhere, numbers are parsed at full double precision, and
//! documents round-trip: parse, re-serialize, re-parse is an identity.

use serde::{Deserialize, Serialize};

use crate::ensemble::{EntryDistribution, MatrixEnsemble, Sign};
use crate::error::Error;
use crate::Result;

/// Version emitted by [`EnsembleSpec::to_toml`] and the only one accepted
/// by [`parse_str`].
pub const CURRENT_SCHEMA: u32 = 1;

/// Parsed description file: schema version plus the ensemble construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub schema: u32,
    pub ensemble: EnsembleKind,
}

/// The `[ensemble]` table, discriminated by its `kind` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    Degenerate(DegenerateSpec),
    Checkerboard(CheckerboardSpec),
    Rademacher(RademacherSpec),
    FourCycle(FourCycleSpec),
    Palette(PaletteSpec),
    Explicit(ExplicitSpec),
}

/// Grid of deterministic entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateSpec {
    pub grid: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
}

/// Alternating `+Exp(rate)` / `-Exp(rate)` by cell parity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerboardSpec {
    pub n: usize,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
}

/// Every cell the symmetric two-point law on `{-scale, +scale}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RademacherSpec {
    pub n: usize,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
}

/// Four signed exponential laws cycling by `(i + j) mod 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourCycleSpec {
    pub n: usize,
    pub rate_a: f64,
    pub rate_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
}

/// Grid assembled from a palette of laws and a pattern of palette indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteSpec {
    pub palette: Vec<EntrySpec>,
    pub pattern: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
}

/// Fully explicit grid, one law per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSpec {
    pub rows: Vec<Vec<EntrySpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
}

/// One entry law, discriminated by its `family` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EntrySpec {
    PointMass(PointMassSpec),
    Discrete(DiscreteSpec),
    Exponential(ExponentialSpec),
    Gamma(GammaSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassSpec {
    pub c: f64,
}

/// Finitely many atoms as parallel `values` / `probs` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpec {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialSpec {
    pub rate: f64,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSpec {
    pub shape: f64,
    pub rate: f64,
    pub sign: i8,
}

fn parse_sign(sign: i8) -> Result<Sign> {
    match sign {
        1 => Ok(Sign::Plus),
        -1 => Ok(Sign::Minus),
        other => Err(Error::Spec(format!("sign must be 1 or -1, got {other}"))),
    }
}

impl EntrySpec {
    /// Converts the description into a validated law.
    pub fn build(&self) -> Result<EntryDistribution> {
        match self {
            EntrySpec::PointMass(s) => EntryDistribution::point_mass(s.c),
            EntrySpec::Discrete(s) => {
                if s.values.len() != s.probs.len() {
                    return Err(Error::Spec(format!(
                        "discrete law has {} values but {} probs",
                        s.values.len(),
                        s.probs.len()
                    )));
                }
                let atoms = s.values.iter().copied().zip(s.probs.iter().copied()).collect();
                EntryDistribution::finite_discrete(atoms)
            }
            EntrySpec::Exponential(s) => {
                EntryDistribution::signed_exponential(s.rate, parse_sign(s.sign)?)
            }
            EntrySpec::Gamma(s) => {
                EntryDistribution::signed_gamma(s.shape, s.rate, parse_sign(s.sign)?)
            }
        }
    }

    /// Inverse of [`EntrySpec::build`], used to re-serialize ensembles.
    pub fn from_distribution(d: &EntryDistribution) -> Self {
        match d {
            EntryDistribution::PointMass { c } => EntrySpec::PointMass(PointMassSpec { c: *c }),
            EntryDistribution::FiniteDiscrete { atoms } => EntrySpec::Discrete(DiscreteSpec {
                values: atoms.iter().map(|&(v, _)| v).collect(),
                probs: atoms.iter().map(|&(_, p)| p).collect(),
            }),
            EntryDistribution::SignedExponential { rate, sign } => {
                EntrySpec::Exponential(ExponentialSpec {
                    rate: *rate,
                    sign: sign.as_f64() as i8,
                })
            }
            EntryDistribution::SignedGamma { shape, rate, sign } => EntrySpec::Gamma(GammaSpec {
                shape: *shape,
                rate: *rate,
                sign: sign.as_f64() as i8,
            }),
        }
    }
}

impl EnsembleSpec {
    /// Builds the described ensemble, running every constructor check
    /// (square shape, centering, positive parameters).
    pub fn build(&self) -> Result<MatrixEnsemble> {
        let (base, scale_bound) = match &self.ensemble {
            EnsembleKind::Degenerate(s) => (MatrixEnsemble::degenerate(&s.grid)?, s.scale_bound),
            EnsembleKind::Checkerboard(s) => {
                (MatrixEnsemble::checkerboard_exponential(s.n, s.rate)?, s.scale_bound)
            }
            EnsembleKind::Rademacher(s) => {
                (MatrixEnsemble::rademacher_grid(s.n, s.scale)?, s.scale_bound)
            }
            EnsembleKind::FourCycle(s) => {
                (MatrixEnsemble::four_cycle_exponential(s.n, s.rate_a, s.rate_b)?, s.scale_bound)
            }
            EnsembleKind::Palette(s) => {
                let palette = s.palette.iter().map(EntrySpec::build).collect::<Result<Vec<_>>>()?;
                (MatrixEnsemble::from_palette(&palette, &s.pattern)?, s.scale_bound)
            }
            EnsembleKind::Explicit(s) => {
                let rows = s
                    .rows
                    .iter()
                    .map(|row| row.iter().map(EntrySpec::build).collect())
                    .collect::<Result<Vec<_>>>()?;
                (MatrixEnsemble::new(rows, None)?, s.scale_bound)
            }
        };
        match scale_bound {
            None => Ok(base),
            Some(m) => MatrixEnsemble::new(base.rows(), Some(m)),
        }
    }

    /// Serializes back to TOML. Field order and formatting are canonical,
    /// so parse -> serialize -> parse is an identity.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Spec(e.to_string()))
    }
}

/// Parses a description document and checks its schema version.
pub fn parse_str(text: &str) -> Result<EnsembleSpec> {
    let spec: EnsembleSpec = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
    if spec.schema != CURRENT_SCHEMA {
        return Err(Error::Spec(format!(
            "unsupported schema version {} (this build reads {CURRENT_SCHEMA})",
            spec.schema
        )));
    }
    Ok(spec)
}

/// Reads and parses a description file.
pub fn from_path(path: &std::path::Path) -> Result<EnsembleSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

/// Convenience: parse a file and build its ensemble in one step.
pub fn load(path: &std::path::Path) -> Result<MatrixEnsemble> {
    from_path(path)?.build()
}

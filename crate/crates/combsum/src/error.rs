//! Error type shared by all modules.

use thiserror::Error;

/// Which side of the centering condition a grid violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Line {
    Row,
    Column,
}

impl std::fmt::Display for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Line::Row => write!(f, "row"),
            Line::Column => write!(f, "column"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Distribution or ensemble parameters violate a constructor invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A moment of order `k` is not representable (order too large or the
    /// value overflows f64).
    #[error("moment of order {k} out of range for {family}")]
    MomentRange { family: &'static str, k: u32 },

    /// The m.g.f. argument lies outside the distribution's analyticity
    /// domain. `max_abs` is the largest admissible |z| along the offending
    /// direction.
    #[error("m.g.f. argument out of domain (|z| must stay below {max_abs})")]
    MgfDomain { max_abs: f64 },

    /// Entry means do not cancel along some row or column; the sum would not
    /// be centered.
    #[error("centering violated: {line} {index} has mean-sum residual {residual:e}")]
    Centering {
        line: Line,
        index: usize,
        residual: f64,
    },

    /// Every entry is a point mass at zero, so the norming constant vanishes
    /// and normalized quantities are undefined.
    #[error("degenerate ensemble: all entries are point masses at zero")]
    DegenerateEnsemble,

    /// A cost guard tripped: the requested computation grows too fast in `n`.
    #[error("{what} refused at n={n}: estimated cost {cost:.1e} exceeds guard {limit:.1e}")]
    SizeGuard {
        what: &'static str,
        n: usize,
        cost: f64,
        limit: f64,
    },

    /// Exact enumeration is impossible for this ensemble (continuous entries).
    #[error("exact enumeration impossible: {0}")]
    NotEnumerable(String),

    /// The requested tail point cannot be reached by tilting inside the
    /// admissible domain; `m_reach` is the largest attainable tilted mean.
    #[error("target beyond tilt domain: largest reachable tilted mean is {m_reach:.6}")]
    ZoneExceeded { m_reach: f64 },

    /// A computed quantity lost its defining sign or finiteness.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// Malformed ensemble description file.
    #[error("ensemble spec: {0}")]
    Spec(String),
}

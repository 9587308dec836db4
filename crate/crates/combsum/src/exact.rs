//! Exact computations for small ensembles: permanents, the exact moment
//! generating function of the normalized sum, and full law enumeration.
//!
//! The m.g.f. of `S / sqrt(B)` is a permanent: conditioning on the
//! permutation factors the expectation into a product of entry m.g.f.s, and
//! averaging over all permutations is exactly `per(matrix of entry m.g.f.s
//! at z / sqrt(B)) / n!`. Everything here is exponential in `n` and sits
//! behind explicit cost guards.

use crate::ensemble::MatrixEnsemble;
use crate::error::Error;
use crate::stats;
use crate::Result;
use num_complex::Complex64;

/// Permanents are refused above this size (cost `2^n * n`).
pub const PERMANENT_MAX_N: usize = 20;

/// Law enumeration bound for grids of point masses (cost `n! * n`).
pub const ENUM_MAX_N_DEGENERATE: usize = 10;

/// Law enumeration bound for grids with discrete entries (cost
/// `n! * support product`).
pub const ENUM_MAX_N_DISCRETE: usize = 7;

/// Largest admissible per-permutation support product for enumeration.
pub const ENUM_MAX_SUPPORT_PRODUCT: f64 = 1e6;

/// Atoms closer than this coalesce during enumeration, and tail queries
/// treat values within this distance of the threshold as equal to it.
pub const ATOM_MERGE_TOL: f64 = 1e-9;

/// `n!` as an exact f64: for n <= 20 the odd part of n! stays below 2^53,
/// so the value is exactly representable.
pub fn factorial_f64(n: usize) -> f64 {
    (1..=n).map(|t| t as f64).product()
}

/// Calls `f` with every permutation of `{0, .., n-1}` in lexicographic
/// order. Iterative successor stepping; no recursion, no allocation beyond
/// the single buffer.
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut perm: Vec<usize> = (0..n).collect();
    if n == 0 {
        return;
    }
    loop {
        f(&perm);
        // find the rightmost ascent, flip the tail
        let Some(k) = (0..n.saturating_sub(1)).rev().find(|&k| perm[k] < perm[k + 1]) else {
            return;
        };
        let l = (k + 1..n).rev().find(|&l| perm[l] > perm[k]).unwrap();
        perm.swap(k, l);
        perm[k + 1..].reverse();
    }
}

trait Ring:
    Copy
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::Mul<Output = Self>
    + std::ops::MulAssign
{
    fn zero() -> Self;
    fn one() -> Self;
}

impl Ring for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
}

impl Ring for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
}

/// Inclusion-exclusion over column subsets, visited in Gray-code order so
/// each step updates the row sums by a single column. `2^n - 1` steps of
/// `O(n)` work each.
fn permanent_ryser<T: Ring>(a: &[Vec<T>]) -> Result<T> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidParameter("permanent needs a square matrix".into()));
    }
    if n > PERMANENT_MAX_N {
        return Err(Error::SizeGuard {
            what: "permanent",
            n,
            cost: 2f64.powi(n as i32) * n as f64,
            limit: 2f64.powi(PERMANENT_MAX_N as i32) * PERMANENT_MAX_N as f64,
        });
    }
    if n == 0 {
        return Ok(T::one());
    }
    let mut row_sums = vec![T::zero(); n];
    let mut total = T::zero();
    let mut gray: u64 = 0;
    for g in 1..(1u64 << n) {
        let next = g ^ (g >> 1);
        let flipped = (gray ^ next).trailing_zeros() as usize;
        if next & (1 << flipped) != 0 {
            for (i, row) in a.iter().enumerate() {
                row_sums[i] += row[flipped];
            }
        } else {
            for (i, row) in a.iter().enumerate() {
                row_sums[i] -= row[flipped];
            }
        }
        gray = next;
        let mut prod = T::one();
        for &s in &row_sums {
            prod *= s;
        }
        // sign (-1)^(n - |subset|)
        if (n as u32).wrapping_sub(next.count_ones()) % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    Ok(total)
}

/// Permanent of a complex matrix, `n <= 20`.
pub fn permanent(a: &[Vec<Complex64>]) -> Result<Complex64> {
    permanent_ryser(a)
}

/// Permanent of a real matrix, `n <= 20`.
pub fn permanent_real(a: &[Vec<f64>]) -> Result<f64> {
    permanent_ryser(a)
}

/// Exact m.g.f. of the normalized sum `S / sqrt(B)` at complex `z`:
/// `per(entry_mgf[i][j](z / sqrt(B))) / n!`.
pub fn mgf_exact(e: &MatrixEnsemble, z: Complex64) -> Result<Complex64> {
    let b = stats::norming_constant(e)?;
    let w = z / b.sqrt();
    let n = e.n();
    let mut a = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, j, d) in e.cells() {
        a[i][j] = d.mgf(w)?;
    }
    Ok(permanent(&a)? / factorial_f64(n))
}

/// Neumaier compensated accumulator; keeps long probability sums exact to
/// a few ulps instead of drifting by `count * eps`.
#[derive(Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// A finitely supported law: atoms sorted by strictly increasing value with
/// positive probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    atoms: Vec<(f64, f64)>,
}

impl ExactDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("law needs at least one atom".into()));
        }
        let mut total = Compensated::default();
        for pair in atoms.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::InvalidParameter(
                    "law atoms must be strictly increasing in value".into(),
                ));
            }
        }
        for &(v, p) in &atoms {
            if !(v.is_finite() && p.is_finite()) || p <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "bad atom ({v}, {p}) in exact law"
                )));
            }
            total.add(p);
        }
        let total = total.value();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "law probabilities sum to {total}, not 1"
            )));
        }
        Ok(ExactDistribution { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// `P(S >= x)`, closed at `x`: atoms within [`ATOM_MERGE_TOL`] of the
    /// threshold count as lying on it.
    pub fn tail(&self, x: f64) -> f64 {
        let mut acc = Compensated::default();
        for &(v, p) in self.atoms.iter().rev() {
            if v >= x - ATOM_MERGE_TOL {
                acc.add(p);
            } else {
                break;
            }
        }
        acc.value()
    }

    pub fn mean(&self) -> f64 {
        let mut acc = Compensated::default();
        for &(v, p) in &self.atoms {
            acc.add(v * p);
        }
        acc.value()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let mut acc = Compensated::default();
        for &(v, p) in &self.atoms {
            acc.add((v - m) * (v - m) * p);
        }
        acc.value()
    }

    /// `E e^{z S / scale}` straight off the atoms; the enumeration-side
    /// counterpart of [`mgf_exact`].
    pub fn mgf_normalized(&self, z: Complex64, scale: f64) -> Complex64 {
        self.atoms
            .iter()
            .map(|&(v, p)| (z * (v / scale)).exp() * p)
            .sum()
    }
}

/// Enumerates the exact law of the (unnormalized) sum by walking every
/// permutation and convolving the selected entries. Requires exactly
/// representable entries: point masses or finite discrete laws.
pub fn enumerate_law(e: &MatrixEnsemble) -> Result<ExactDistribution> {
    let n = e.n();
    let mut supports: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n * n);
    for (_, _, d) in e.cells() {
        supports.push(d.atoms().ok_or_else(|| {
            Error::NotEnumerable(
                "ensemble has exponential or Gamma entries with infinite support".into(),
            )
        })?);
    }
    let degenerate = supports.iter().all(|s| s.len() == 1);
    // worst-case per-permutation convolution size
    let product: f64 = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| supports[i * n + j].len())
                .max()
                .expect("n >= 2") as f64
        })
        .product();
    let cost = factorial_f64(n) * product;
    if degenerate {
        if n > ENUM_MAX_N_DEGENERATE {
            return Err(Error::SizeGuard {
                what: "law enumeration (point-mass grid)",
                n,
                cost,
                limit: factorial_f64(ENUM_MAX_N_DEGENERATE),
            });
        }
    } else if n > ENUM_MAX_N_DISCRETE || product > ENUM_MAX_SUPPORT_PRODUCT {
        return Err(Error::SizeGuard {
            what: "law enumeration (discrete grid)",
            n,
            cost,
            limit: factorial_f64(ENUM_MAX_N_DISCRETE) * ENUM_MAX_SUPPORT_PRODUCT,
        });
    }

    let inv_fact = 1.0 / factorial_f64(n);
    let mut raw: Vec<(f64, f64)> = Vec::new();
    if degenerate {
        let grid: Vec<f64> = supports.iter().map(|s| s[0].0).collect();
        for_each_permutation(n, |perm| {
            let mut s = 0.0;
            for (i, &j) in perm.iter().enumerate() {
                s += grid[i * n + j];
            }
            raw.push((s, inv_fact));
        });
    } else {
        let mut acc: Vec<(f64, f64)> = Vec::new();
        let mut next: Vec<(f64, f64)> = Vec::new();
        for_each_permutation(n, |perm| {
            acc.clear();
            acc.push((0.0, 1.0));
            for (i, &j) in perm.iter().enumerate() {
                next.clear();
                for &(v, p) in &acc {
                    for &(x, q) in &supports[i * n + j] {
                        next.push((v + x, p * q));
                    }
                }
                std::mem::swap(&mut acc, &mut next);
            }
            raw.extend(acc.iter().map(|&(v, p)| (v, p * inv_fact)));
        });
    }

    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let mut j = i + 1;
        while j < raw.len() && raw[j].0 - raw[j - 1].0 <= ATOM_MERGE_TOL {
            j += 1;
        }
        let mut prob = Compensated::default();
        let mut weighted = Compensated::default();
        for &(v, p) in &raw[i..j] {
            prob.add(p);
            weighted.add(v * p);
        }
        let p = prob.value();
        merged.push((weighted.value() / p, p));
        i = j;
    }
    ExactDistribution::new(merged)
}

/// `P(S >= x)` exactly, via [`enumerate_law`].
pub fn exact_tail(e: &MatrixEnsemble, x: f64) -> Result<f64> {
    Ok(enumerate_law(e)?.tail(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EntryDistribution;
    use rand::{Rng, SeedableRng};

    fn anchor_grid() -> MatrixEnsemble {
        MatrixEnsemble::degenerate(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 0.0, 1.0],
            vec![0.0, 1.0, -1.0],
        ])
        .unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Definition-level permanent: sum over permutations of entry products.
    fn permanent_naive(a: &[Vec<Complex64>]) -> Complex64 {
        let n = a.len();
        let mut total = c(0.0, 0.0);
        for_each_permutation(n, |perm| {
            let mut prod = c(1.0, 0.0);
            for (i, &j) in perm.iter().enumerate() {
                prod *= a[i][j];
            }
            total += prod;
        });
        total
    }

    #[test]
    fn permanent_small_anchors() {
        let a = vec![vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(3.0, 0.0), c(4.0, 0.0)]];
        assert_eq!(permanent(&a).unwrap(), c(10.0, 0.0));

        let ones = vec![vec![c(1.0, 0.0); 4]; 4];
        assert_eq!(permanent(&ones).unwrap(), c(24.0, 0.0));

        let eye: Vec<Vec<Complex64>> = (0..3)
            .map(|i| (0..3).map(|j| c(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        assert_eq!(permanent(&eye).unwrap(), c(1.0, 0.0));

        let real = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(permanent_real(&real).unwrap(), 10.0);
    }

    #[test]
    fn ryser_matches_naive_expansion() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for n in 2..=7usize {
            for _ in 0..3 {
                let a: Vec<Vec<Complex64>> = (0..n)
                    .map(|_| {
                        (0..n)
                            .map(|_| {
                                c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
                            })
                            .collect()
                    })
                    .collect();
                let fast = permanent(&a).unwrap();
                let slow = permanent_naive(&a);
                assert!(
                    (fast - slow).norm() <= 1e-12 * slow.norm().max(1.0),
                    "n={n}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn permanent_size_guard() {
        let a = vec![vec![c(1.0, 0.0); 21]; 21];
        assert!(matches!(permanent(&a), Err(Error::SizeGuard { n: 21, .. })));
    }

    #[test]
    fn anchor_mgf_closed_form() {
        // per of elementwise exp(w * c) over the anchor grid collapses to
        // (4 + e^{3w} + e^{-3w}) with w = z / sqrt(2)
        let e = anchor_grid();
        for z in [c(0.5, 0.0), c(-1.2, 0.0), c(0.7, 0.4), c(0.0, 1.3)] {
            let w = z / 2.0f64.sqrt();
            let want = ((w * 3.0).exp() + (-w * 3.0).exp() + 4.0) / 6.0;
            let got = mgf_exact(&e, z).unwrap();
            assert!(
                (got - want).norm() <= 1e-12 * want.norm(),
                "z={z}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn anchor_law_and_tails() {
        let law = enumerate_law(&anchor_grid()).unwrap();
        let atoms = law.atoms();
        assert_eq!(atoms.len(), 3);
        assert!((atoms[0].0 + 3.0).abs() < 1e-15 && (atoms[0].1 - 1.0 / 6.0).abs() < 1e-15);
        assert!((atoms[1].0 - 0.0).abs() < 1e-15 && (atoms[1].1 - 4.0 / 6.0).abs() < 1e-15);
        assert!((atoms[2].0 - 3.0).abs() < 1e-15 && (atoms[2].1 - 1.0 / 6.0).abs() < 1e-15);

        let e = anchor_grid();
        assert!((exact_tail(&e, 3.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((exact_tail(&e, 0.0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((exact_tail(&e, 2.5).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(exact_tail(&e, 3.1).unwrap(), 0.0);
        assert_eq!(exact_tail(&e, -5.0).unwrap(), 1.0);
    }

    #[test]
    fn law_moments_match_closed_forms() {
        let cases = vec![
            anchor_grid(),
            MatrixEnsemble::rademacher_grid(4, 1.0).unwrap(),
            MatrixEnsemble::new(
                vec![
                    vec![
                        EntryDistribution::finite_discrete(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap(),
                        EntryDistribution::point_mass(0.5).unwrap(),
                        EntryDistribution::point_mass(-0.5).unwrap(),
                    ],
                    vec![
                        EntryDistribution::point_mass(-0.5).unwrap(),
                        EntryDistribution::finite_discrete(vec![(-2.0, 0.25), (2.0 / 3.0, 0.75)])
                            .unwrap(),
                        EntryDistribution::point_mass(0.5).unwrap(),
                    ],
                    vec![
                        EntryDistribution::point_mass(0.5).unwrap(),
                        EntryDistribution::point_mass(-0.5).unwrap(),
                        EntryDistribution::rademacher(2.0).unwrap(),
                    ],
                ],
                None,
            )
            .unwrap(),
        ];
        for e in cases {
            let law = enumerate_law(&e).unwrap();
            assert!(law.mean().abs() < 1e-10, "law mean {}", law.mean());
            let want = stats::variance(&e).unwrap();
            assert!(
                (law.variance() - want).abs() < 1e-10 * want.max(1.0),
                "law variance {} vs {}",
                law.variance(),
                want
            );
        }
    }

    #[test]
    fn law_mgf_agrees_with_permanent_mgf() {
        let cases = vec![anchor_grid(), MatrixEnsemble::rademacher_grid(4, 1.0).unwrap()];
        for e in cases {
            let law = enumerate_law(&e).unwrap();
            let sqrt_b = stats::norming_constant(&e).unwrap().sqrt();
            for z in [c(0.3, 0.0), c(-0.9, 0.0), c(0.4, 0.8)] {
                let a = mgf_exact(&e, z).unwrap();
                let b = law.mgf_normalized(z, sqrt_b);
                assert!(
                    (a - b).norm() <= 1e-10 * b.norm(),
                    "z={z}: permanent {a} vs law {b}"
                );
            }
        }
    }

    #[test]
    fn symmetric_mgf_product_bound() {
        // E e^{zS'} * E e^{-zS'} >= 1 for real z
        let e = MatrixEnsemble::rademacher_grid(4, 1.0).unwrap();
        for z in [0.3, 1.0, 2.0] {
            let p = mgf_exact(&e, c(z, 0.0)).unwrap().re;
            let m = mgf_exact(&e, c(-z, 0.0)).unwrap().re;
            assert!(p * m >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn enumeration_guards() {
        let cont = MatrixEnsemble::checkerboard_exponential(4, 1.0).unwrap();
        assert!(matches!(enumerate_law(&cont), Err(Error::NotEnumerable(_))));

        let big_discrete = MatrixEnsemble::rademacher_grid(8, 1.0).unwrap();
        assert!(matches!(
            enumerate_law(&big_discrete),
            Err(Error::SizeGuard { n: 8, .. })
        ));

        let grid: Vec<Vec<f64>> = (0..11).map(|_| vec![0.0; 11]).collect();
        let big_degenerate = MatrixEnsemble::degenerate(&grid).unwrap();
        assert!(matches!(
            enumerate_law(&big_degenerate),
            Err(Error::SizeGuard { n: 11, .. })
        ));
    }

    #[test]
    fn identical_columns_reduce_to_independent_convolution() {
        // every row constant across columns: the permutation picks the same
        // law regardless, so S is an independent sum
        let rows: Vec<EntryDistribution> = vec![
            EntryDistribution::rademacher(1.0).unwrap(),
            EntryDistribution::finite_discrete(vec![(-1.5, 0.4), (1.0, 0.6)]).unwrap(),
            EntryDistribution::finite_discrete(vec![(-0.5, 0.8), (2.0, 0.2)]).unwrap(),
            EntryDistribution::rademacher(0.25).unwrap(),
        ];
        let grid: Vec<Vec<EntryDistribution>> =
            rows.iter().map(|d| vec![d.clone(); rows.len()]).collect();
        let e = MatrixEnsemble::new(grid, None).unwrap();
        let law = enumerate_law(&e).unwrap();

        // independent convolution, merged the same way
        let mut conv: Vec<(f64, f64)> = vec![(0.0, 1.0)];
        for d in &rows {
            let mut next = Vec::new();
            for &(v, p) in &conv {
                for &(x, q) in &d.atoms().unwrap() {
                    next.push((v + x, p * q));
                }
            }
            conv = next;
        }
        conv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (v, p) in conv {
            match merged.last_mut() {
                Some(last) if v - last.0 <= ATOM_MERGE_TOL => last.1 += p,
                _ => merged.push((v, p)),
            }
        }

        assert_eq!(law.atoms().len(), merged.len());
        for (got, want) in law.atoms().iter().zip(&merged) {
            assert!(
                (got.0 - want.0).abs() <= 1e-12 && (got.1 - want.1).abs() <= 1e-12,
                "atom {got:?} vs {want:?}"
            );
        }
    }
}

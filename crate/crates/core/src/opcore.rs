//! Dense complex operator algebra on finite-dimensional Hilbert spaces.
//!
//! Plain `CMat`/`CVec` values are used throughout the crate; `OperatorMatrix`
//! attaches a role tag that can be checked on demand.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Entrywise tolerance for hermiticity, relative to `1 + max|A|`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues in `[-POSITIVE_TOL, 0)` are treated as zero.
pub const POSITIVE_TOL: f64 = 1e-10;
pub const UNITARY_TOL: f64 = 1e-10;
/// Smallest singular value that still counts as bijective.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    General,
    Hermitian,
    Positive,
    Unitary,
}

/// A square matrix with an advisory role tag.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub entries: CMat,
    pub tag: OpTag,
}

impl OperatorMatrix {
    pub fn new(entries: CMat, tag: OpTag) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "operator dimension must be positive".into(),
            ));
        }
        Ok(Self { entries, tag })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Verifies the invariant implied by the tag.
    pub fn check(&self) -> Result<()> {
        if !is_finite(&self.entries) {
            return Err(Error::NonFinite("operator entries"));
        }
        match self.tag {
            OpTag::General => Ok(()),
            OpTag::Hermitian => check_hermitian(&self.entries),
            OpTag::Positive => {
                check_hermitian(&self.entries)?;
                let min = min_eigenvalue(&self.entries);
                if min < -POSITIVE_TOL {
                    Err(Error::NegativeEigenvalue { min })
                } else {
                    Ok(())
                }
            }
            OpTag::Unitary => {
                let deviation = unitarity_deviation(&self.entries);
                if deviation > UNITARY_TOL {
                    Err(Error::NotUnitary { deviation })
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Operators indexed by grid cells and/or labels, each with a measure weight.
#[derive(Clone, Debug)]
pub struct WeightedFamily {
    pub ops: Vec<CMat>,
    pub weights: Vec<f64>,
}

impl WeightedFamily {
    pub fn new(ops: Vec<CMat>, weights: Vec<f64>) -> Result<Self> {
        if ops.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: ops.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { ops, weights })
    }

    /// Same weight for every member.
    pub fn uniform(ops: Vec<CMat>, weight: f64) -> Result<Self> {
        let weights = vec![weight; ops.len()];
        Self::new(ops, weights)
    }
}

/// Σ weight·operator. Tagged positive when every member is positive.
pub fn weak_integral(family: &WeightedFamily) -> Result<OperatorMatrix> {
    let first = family.ops.first().ok_or(Error::EmptyFamily)?;
    let d = first.nrows();
    let mut acc = CMat::zeros(d, d);
    let mut all_positive = true;
    for (op, &w) in family.ops.iter().zip(&family.weights) {
        if op.nrows() != d || op.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: op.nrows(),
            });
        }
        acc += op * C64::from(w);
        if all_positive && !is_positive(op) {
            all_positive = false;
        }
    }
    let tag = if all_positive {
        OpTag::Positive
    } else {
        OpTag::General
    };
    OperatorMatrix::new(acc, tag)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn is_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

pub fn hermitian_deviation(a: &CMat) -> f64 {
    max_abs_diff(a, &a.adjoint())
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * C64::from(0.5)
}

fn check_hermitian(a: &CMat) -> Result<()> {
    let deviation = hermitian_deviation(a);
    if deviation > HERMITIAN_TOL * (1.0 + max_abs(a)) {
        Err(Error::NotHermitian { deviation })
    } else {
        Ok(())
    }
}

pub fn unitarity_deviation(a: &CMat) -> f64 {
    max_abs_diff(&(a.adjoint() * a), &identity(a.nrows()))
}

/// Eigen-decomposition of the hermitian part of `a`, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(a.nrows(), a.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigen(a).0[0]
}

pub fn max_eigenvalue(a: &CMat) -> f64 {
    *hermitian_eigen(a).0.last().expect("nonempty matrix")
}

pub fn is_positive(a: &CMat) -> bool {
    hermitian_deviation(a) <= HERMITIAN_TOL * (1.0 + max_abs(a))
        && min_eigenvalue(a) >= -POSITIVE_TOL
}

/// Applies `f` to the spectrum of a hermitian matrix.
pub fn hermitian_function(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (values, v) = hermitian_eigen(a);
    let d = CMat::from_diagonal(&CVec::from_iterator(
        values.len(),
        values.iter().map(|&x| C64::from(f(x))),
    ));
    &v * d * v.adjoint()
}

/// Unique positive square root.
pub fn positive_sqrt(a: &CMat) -> Result<CMat> {
    check_hermitian(a)?;
    let (values, v) = hermitian_eigen(a);
    if values[0] < -POSITIVE_TOL {
        return Err(Error::NegativeEigenvalue { min: values[0] });
    }
    let d = CMat::from_diagonal(&CVec::from_iterator(
        values.len(),
        values.iter().map(|&x| C64::from(x.max(0.0).sqrt())),
    ));
    Ok(&v * d * v.adjoint())
}

/// Inverse of the positive square root; requires the spectrum above the cutoff.
pub fn positive_inv_sqrt(a: &CMat) -> Result<CMat> {
    check_hermitian(a)?;
    let (values, v) = hermitian_eigen(a);
    if values[0] <= SINGULAR_CUTOFF {
        return Err(Error::Singular {
            min_singular: values[0],
        });
    }
    let d = CMat::from_diagonal(&CVec::from_iterator(
        values.len(),
        values.iter().map(|&x| C64::from(1.0 / x.sqrt())),
    ));
    Ok(&v * d * v.adjoint())
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

pub fn min_singular_value(a: &CMat) -> f64 {
    singular_values(a).into_iter().fold(f64::INFINITY, f64::min)
}

/// Inverse with the given singular-value cutoff.
pub fn inverse_with_cutoff(a: &CMat, cutoff: f64) -> Result<CMat> {
    let svd = a.clone().svd(true, true);
    let min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min > cutoff) {
        return Err(Error::Singular { min_singular: min });
    }
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let sinv = CMat::from_diagonal(&CVec::from_iterator(
        min_len(a),
        svd.singular_values.iter().map(|&s| C64::from(1.0 / s)),
    ));
    Ok(vt.adjoint() * sinv * u.adjoint())
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    inverse_with_cutoff(a, SINGULAR_CUTOFF)
}

fn min_len(a: &CMat) -> usize {
    a.nrows().min(a.ncols())
}

/// The unitary factor U of the polar decomposition T = U·(T*T)^{1/2}.
pub fn polar_unitary(t: &CMat) -> Result<CMat> {
    let svd = t.clone().svd(true, true);
    let min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min > SINGULAR_CUTOFF) {
        return Err(Error::Singular { min_singular: min });
    }
    Ok(svd.u.expect("requested") * svd.v_t.expect("requested"))
}

/// u·v_t from the SVD without the bijectivity check; unique only when T is invertible.
pub fn polar_unitary_unchecked(t: &CMat) -> CMat {
    let svd = t.clone().svd(true, true);
    svd.u.expect("requested") * svd.v_t.expect("requested")
}

/// Positive factor (T*T)^{1/2} of the polar decomposition, computed from the SVD.
pub fn polar_positive(t: &CMat) -> CMat {
    let svd = t.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let s = CMat::from_diagonal(&CVec::from_iterator(
        min_len(t),
        svd.singular_values.iter().map(|&x| C64::from(x)),
    ));
    vt.adjoint() * s * vt
}

/// e^{s·a}.
pub fn matrix_exp(a: &CMat, s: f64) -> CMat {
    if s == 0.0 {
        return identity(a.nrows());
    }
    (a * C64::from(s)).exp()
}

pub fn norm_sq(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn normalized(v: &CVec) -> Result<CVec> {
    let n = norm_sq(v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroCollapseNorm { norm: n });
    }
    Ok(v / C64::from(n))
}

/// ⟨v|A|v⟩, real part.
pub fn expectation(a: &CMat, v: &CVec) -> f64 {
    v.dotc(&(a * v)).re
}

/// L_φ A (· ⊗ φ): partial inner product with the environment factor of a sys ⊗ env operator.
pub fn partial_env_expectation(a: &CMat, phi: &CVec, dim_sys: usize) -> Result<CMat> {
    let dim_env = phi.len();
    if a.nrows() != dim_sys * dim_env {
        return Err(Error::DimensionMismatch {
            expected: dim_sys * dim_env,
            found: a.nrows(),
        });
    }
    Ok(CMat::from_fn(dim_sys, dim_sys, |i, j| {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..dim_env {
            for l in 0..dim_env {
                acc += phi[k].conj() * a[(i * dim_env + k, j * dim_env + l)] * phi[l];
            }
        }
        acc
    }))
}

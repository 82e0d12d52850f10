//! Whitening, orthogonal projectors and SVD-based least squares.
//!
//! Projectors are kept as an orthonormal basis of their range (`M x r`);
//! the explicit `M x M` matrix is materialized only on request.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Eigenvalues at or below this fraction of the largest one mark a
/// covariance as singular.
const COVARIANCE_COND_TOL: f64 = 1e-12;

/// Hermitian inverse square root `C^{-1/2}` of a noise covariance.
#[derive(Clone, Debug)]
pub struct Whitener {
    root_inverse: DMatrix<Complex64>,
    covariance: DMatrix<Complex64>,
    /// Set when the covariance is a multiple of the identity.
    scale: Option<f64>,
}

impl Whitener {
    pub fn from_covariance(c: &DMatrix<Complex64>) -> Result<Self> {
        if !c.is_square() || c.nrows() == 0 {
            return Err(Error::SingularCovariance(format!(
                "covariance must be square and non-empty, got {:?}",
                c.shape()
            )));
        }
        let scale = c.norm().max(f64::MIN_POSITIVE);
        if (c - c.adjoint()).norm() > 1e-12 * scale {
            return Err(Error::SingularCovariance("covariance is not Hermitian".into()));
        }
        let hermitian = (c + c.adjoint()).scale(0.5);
        let eig = hermitian.symmetric_eigen();
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        if !(lmax > 0.0) || lmin <= COVARIANCE_COND_TOL * lmax {
            return Err(Error::SingularCovariance(format!(
                "eigenvalue range [{lmin:e}, {lmax:e}] is not positive definite"
            )));
        }
        let inv_sqrt = eig.eigenvalues.map(|l| Complex64::new(1.0 / l.sqrt(), 0.0));
        let u = &eig.eigenvectors;
        let root_inverse = u * DMatrix::from_diagonal(&inv_sqrt) * u.adjoint();
        Ok(Self { root_inverse, covariance: c.clone(), scale: None })
    }

    /// Whitener of `sigma2 * I`.
    pub fn scaled_identity(m: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::SingularCovariance(format!("noise power {sigma2} is not positive")));
        }
        Ok(Self {
            root_inverse: DMatrix::identity(m, m).scale(1.0 / sigma2.sqrt()),
            covariance: DMatrix::identity(m, m).scale(sigma2),
            scale: Some(1.0 / sigma2.sqrt()),
        })
    }

    pub fn root_inverse(&self) -> &DMatrix<Complex64> {
        &self.root_inverse
    }

    pub fn covariance(&self) -> &DMatrix<Complex64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.root_inverse.nrows()
    }

    pub fn whiten_vector(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        match self.scale {
            Some(s) => v.scale(s),
            None => &self.root_inverse * v,
        }
    }

    pub fn whiten_matrix(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        match self.scale {
            Some(s) => m.scale(s),
            None => &self.root_inverse * m,
        }
    }
}

/// Free-function form of [`Whitener::from_covariance`].
pub fn whitener_from(c: &DMatrix<Complex64>) -> Result<Whitener> {
    Whitener::from_covariance(c)
}

/// Orthogonal projector represented by an orthonormal basis of its range.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    basis: DMatrix<Complex64>,
}

impl Projector {
    pub fn zero(m: usize) -> Self {
        Self { basis: DMatrix::zeros(m, 0) }
    }

    /// Wraps a basis that is already orthonormal.
    pub fn from_orthonormal(basis: DMatrix<Complex64>) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &DMatrix<Complex64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// The explicit `M x M` projector matrix.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        &self.basis * self.basis.adjoint()
    }

    /// `||P y||^2`.
    pub fn energy(&self, y: &DVector<Complex64>) -> f64 {
        (self.basis.adjoint() * y).norm_squared()
    }

    pub fn apply(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        &self.basis * (self.basis.adjoint() * y)
    }

    /// `(I - P) A`.
    pub fn reject(&self, a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        if self.rank() == 0 {
            return a.clone();
        }
        a - complex_mul(&self.basis, &complex_mul(&self.basis.adjoint(), a))
    }

    /// `(I - P) y`.
    pub fn reject_vector(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        if self.rank() == 0 {
            return y.clone();
        }
        y - self.apply(y)
    }
}

fn split(a: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|z| z.re), a.map(|z| z.im))
}

/// Complex product through four real products, which use the optimized
/// real matrix kernel.
pub(crate) fn complex_mul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

/// Largest singular value, or zero for empty input.
pub fn spectral_norm(a: &DMatrix<Complex64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Left singular vectors of `a` whose singular value exceeds `threshold`,
/// sorted by decreasing singular value, and the full sorted spectrum.
pub(crate) fn left_singular(
    a: &DMatrix<Complex64>,
    threshold: f64,
) -> (DMatrix<Complex64>, Vec<f64>) {
    let m = a.nrows();
    if a.is_empty() {
        return (DMatrix::zeros(m, 0), Vec::new());
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sorted: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let keep: Vec<_> = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > threshold)
        .map(|&i| u.column(i).into_owned())
        .collect();
    let basis = if keep.is_empty() { DMatrix::zeros(m, 0) } else { DMatrix::from_columns(&keep) };
    (basis, sorted)
}

/// Eigenpairs of `a a^H` (squared singular values of `a` with their left
/// singular vectors), sorted by decreasing value and clamped at zero. Cheaper
/// than an SVD when `a` is much wider than tall.
pub(crate) fn gram_spectrum(a: &DMatrix<Complex64>) -> (DMatrix<Complex64>, Vec<f64>) {
    let m = a.nrows();
    if a.ncols() == 0 {
        return (DMatrix::zeros(m, 0), Vec::new());
    }
    let (ar, ai) = split(a);
    let re = &ar * ar.transpose() + &ai * ai.transpose();
    let im = &ai * ar.transpose() - &ar * ai.transpose();
    let gram = re.zip_map(&im, Complex64::new);
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let cols: Vec<_> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    (DMatrix::from_columns(&cols), lambda)
}

/// Projector onto the column span of `b`. Singular values at or below
/// `rel_tol * sigma_max` count as zero; an empty or all-zero `b` yields the
/// zero projector.
pub fn column_space_projector(b: &DMatrix<Complex64>, rel_tol: f64) -> Projector {
    let m = b.nrows();
    if b.ncols() == 0 {
        return Projector::zero(m);
    }
    let smax = spectral_norm(b);
    if smax == 0.0 {
        return Projector::zero(m);
    }
    let (basis, _) = left_singular(b, rel_tol * smax);
    Projector { basis }
}

/// Projector onto the part of `span(whitened_mode)` outside the interference
/// subspace: the range of `(I - Xi) A`. The rank threshold is relative to the
/// largest singular value of `A` itself, so a candidate fully inside the
/// interference subspace gets rank zero.
pub fn residual_target_projector(
    whitened_mode: &DMatrix<Complex64>,
    interference: &Projector,
    rel_tol: f64,
) -> Projector {
    residual_projector_scaled(whitened_mode, spectral_norm(whitened_mode), interference, rel_tol)
}

/// As [`residual_target_projector`] with a precomputed `sigma_max(A)`.
pub(crate) fn residual_projector_scaled(
    whitened_mode: &DMatrix<Complex64>,
    mode_norm: f64,
    interference: &Projector,
    rel_tol: f64,
) -> Projector {
    let m = whitened_mode.nrows();
    if mode_norm == 0.0 {
        return Projector::zero(m);
    }
    let residual = interference.reject(whitened_mode);
    let (basis, _) = left_singular(&residual, rel_tol * mode_norm);
    Projector { basis }
}

/// Minimum-norm least-squares solution of `a x = y` via the SVD
/// pseudo-inverse. Returns the solution and whether `a` was rank deficient.
pub fn least_squares(
    a: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    rel_tol: f64,
) -> (DVector<Complex64>, bool) {
    let d = a.ncols();
    if d == 0 {
        return (DVector::zeros(0), false);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rel_tol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut x = DVector::zeros(d);
    let mut kept = 0usize;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            kept += 1;
            let coef = u.column(i).dotc(y) / s;
            x += vt.row(i).adjoint() * coef;
        }
    }
    (x, kept < d)
}

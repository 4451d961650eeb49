//! Linear algebra on the cone of symmetric positive definite matrices.
//!
//! The polymer recurrence composes thousands of congruence products, so every
//! operation re-symmetrizes its output as `(M + Mᵀ)/2` to suppress floating
//! point drift. Positive definiteness is always certified through a Cholesky
//! factorization rather than an eigenvalue threshold; when a factorization
//! fails we return an error carrying the caller's context instead of
//! regularizing, since silent regularization would bias the stationarity
//! tests downstream.

use nalgebra::{Cholesky, DMatrix, Dyn};
use thiserror::Error;

/// Absolute per-entry symmetry tolerance accepted at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Smallest admissible eigenvalue for a positive semi-definite matrix.
pub const PSD_EIGEN_TOL: f64 = -1e-12;

#[derive(Debug, Error)]
pub enum SpdError {
    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not symmetric (|a_ij - a_ji| = {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },
    #[error("matrix has an eigenvalue {eigenvalue:.3e} below the PSD tolerance")]
    NotPositiveSemiDefinite { eigenvalue: f64 },
    #[error("numerical failure: {context}")]
    Numerical { context: String },
}

pub type Result<T> = std::result::Result<T, SpdError>;

/// Absolute/relative tolerance pair used by the checkers.
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        assert!(abs >= 0.0 && rel >= 0.0, "tolerances must be nonnegative");
        Tolerance { abs, rel }
    }

    pub fn close(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.abs + self.rel * a.abs().max(b.abs())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// A symmetric strictly positive definite matrix.
///
/// Construction certifies symmetry (within [`SYMMETRY_TOL`]) and positive
/// definiteness (via Cholesky); all further operations preserve both.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn from_matrix(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SpdError::DimensionMismatch(m.nrows(), m.ncols()));
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(SpdError::NotSymmetric(asym));
        }
        symmetrize(&mut m);
        let candidate = SpdMatrix { m };
        candidate.cholesky("from_matrix")?;
        Ok(candidate)
    }

    /// Trusted constructor for matrices that are symmetric by construction
    /// (products of the form B Bᵀ, congruences of SPD matrices). Still
    /// re-symmetrizes; skips the Cholesky certificate.
    pub(crate) fn from_symmetric_unchecked(mut m: DMatrix<f64>) -> Self {
        symmetrize(&mut m);
        SpdMatrix { m }
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix { m: DMatrix::identity(d, d) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|&x| x <= 0.0) {
            return Err(SpdError::NotPositiveDefinite {
                context: "diagonal entries must be strictly positive".into(),
            });
        }
        Ok(SpdMatrix { m: DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag)) })
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::from_diagonal(&[x])
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    fn cholesky(&self, context: &str) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.m.clone()).ok_or_else(|| SpdError::NotPositiveDefinite {
            context: context.to_string(),
        })
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// log |x| through the Cholesky factor: 2 Σ log L_kk.
    pub fn logdet(&self) -> Result<f64> {
        let chol = self.cholesky("logdet")?;
        let l = chol.l();
        let mut acc = 0.0;
        for k in 0..self.dim() {
            acc += l[(k, k)].ln();
        }
        Ok(2.0 * acc)
    }

    pub fn det(&self) -> Result<f64> {
        Ok(self.logdet()?.exp())
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        let chol = self.cholesky("inverse")?;
        Ok(SpdMatrix::from_symmetric_unchecked(chol.inverse()))
    }

    /// The unique SPD square root, via symmetric eigendecomposition.
    pub fn sqrt(&self) -> Result<SpdMatrix> {
        let eig = self.m.clone().symmetric_eigen();
        let mut vals = eig.eigenvalues;
        for v in vals.iter_mut() {
            if *v <= 0.0 {
                return Err(SpdError::NotPositiveDefinite {
                    context: format!("sqrt: eigenvalue {v:.3e}"),
                });
            }
            *v = v.sqrt();
        }
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        Ok(SpdMatrix::from_symmetric_unchecked(root))
    }

    pub fn add(&self, other: &SpdMatrix) -> Result<SpdMatrix> {
        if self.dim() != other.dim() {
            return Err(SpdError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(SpdMatrix::from_symmetric_unchecked(&self.m + &other.m))
    }

    /// Scales by a strictly positive factor.
    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        if c <= 0.0 {
            return Err(SpdError::NotPositiveDefinite { context: format!("scale by {c}") });
        }
        Ok(SpdMatrix { m: &self.m * c })
    }

    /// tr[self · other]
    pub fn trace_product(&self, other: &SpdMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(SpdError::DimensionMismatch(self.dim(), other.dim()));
        }
        let mut acc = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += self.m[(i, j)] * other.m[(j, i)];
            }
        }
        Ok(acc)
    }

    /// tr[self · other⁻¹], computed through a Cholesky solve.
    pub fn trace_product_inv(&self, other: &SpdMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(SpdError::DimensionMismatch(self.dim(), other.dim()));
        }
        let chol = other.cholesky("trace_product_inv")?;
        let solved = chol.solve(&self.m);
        Ok(solved.trace())
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        let eig = self.m.clone().symmetric_eigen();
        eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    pub fn to_psd(&self) -> PsdMatrix {
        PsdMatrix { m: self.m.clone() }
    }

    pub fn max_abs_diff(&self, other: &SpdMatrix) -> f64 {
        (&self.m - &other.m).abs().max()
    }
}

/// The product x ⋆ y = y^{1/2} x y^{1/2}.
///
/// Non-commutative and non-associative; the right slot is the one that gets
/// square-rooted and therefore must be strictly positive definite.
pub fn star(x: &SpdMatrix, y: &SpdMatrix) -> Result<SpdMatrix> {
    if x.dim() != y.dim() {
        return Err(SpdError::DimensionMismatch(x.dim(), y.dim()));
    }
    let r = y.sqrt()?;
    Ok(SpdMatrix::from_symmetric_unchecked(r.matrix() * x.matrix() * r.matrix()))
}

/// x ⋆ y⁻¹ = y^{-1/2} x y^{-1/2}, the increment extraction used throughout
/// the walk laws. Equivalent to `star(x, &y.inverse()?)` but computed from a
/// single square root.
pub fn star_inv(x: &SpdMatrix, y: &SpdMatrix) -> Result<SpdMatrix> {
    if x.dim() != y.dim() {
        return Err(SpdError::DimensionMismatch(x.dim(), y.dim()));
    }
    let r = y.sqrt()?.inverse()?;
    Ok(SpdMatrix::from_symmetric_unchecked(r.matrix() * x.matrix() * r.matrix()))
}

/// A symmetric positive semi-definite matrix. The boundary conditions of the
/// quadrant model place exact zero matrices on the axes, so sums and left ⋆
/// arguments must accept PSD values; PSD values are never inverted and never
/// appear in the right ⋆ slot.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix {
    m: DMatrix<f64>,
}

impl PsdMatrix {
    pub fn from_matrix(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SpdError::DimensionMismatch(m.nrows(), m.ncols()));
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(SpdError::NotSymmetric(asym));
        }
        symmetrize(&mut m);
        let eig = m.clone().symmetric_eigen();
        if let Some(&lo) = eig
            .eigenvalues
            .iter()
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            if lo < PSD_EIGEN_TOL {
                return Err(SpdError::NotPositiveSemiDefinite { eigenvalue: lo });
            }
        }
        Ok(PsdMatrix { m })
    }

    pub fn zero(d: usize) -> Self {
        PsdMatrix { m: DMatrix::zeros(d, d) }
    }

    pub fn identity(d: usize) -> Self {
        PsdMatrix { m: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().all(|&x| x == 0.0)
    }

    pub fn add(&self, other: &PsdMatrix) -> Result<PsdMatrix> {
        if self.dim() != other.dim() {
            return Err(SpdError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(PsdMatrix { m: &self.m + &other.m })
    }

    /// Interprets the value as strictly positive definite, failing with the
    /// caller's context if the Cholesky certificate does not exist.
    pub fn as_spd(&self, context: &str) -> Result<SpdMatrix> {
        let candidate = SpdMatrix { m: self.m.clone() };
        candidate.cholesky(context)?;
        Ok(candidate)
    }
}

/// x ⋆ y for a PSD left argument. The result is PSD (SPD iff x is SPD).
pub fn star_psd(x: &PsdMatrix, y: &SpdMatrix) -> Result<PsdMatrix> {
    if x.dim() != y.dim() {
        return Err(SpdError::DimensionMismatch(x.dim(), y.dim()));
    }
    let r = y.sqrt()?;
    let mut m = r.matrix() * x.matrix() * r.matrix();
    symmetrize(&mut m);
    Ok(PsdMatrix { m })
}

/// Solves the simultaneous trace equations tr[W X⁻¹] = tr[V Y] and
/// tr[V X] = tr[W Y⁻¹] for X, given (W, V, Y):
///
///   X = (W^{-1/2} U^{1/2} W^{-1/2} · Y · W^{-1/2} U^{1/2} W^{-1/2})⁻¹,
///   U = W^{1/2} V W^{1/2}.
///
/// The map preserves the reference measure on the cone.
pub fn change_of_variable(w: &SpdMatrix, v: &SpdMatrix, y: &SpdMatrix) -> Result<SpdMatrix> {
    if w.dim() != v.dim() || w.dim() != y.dim() {
        return Err(SpdError::DimensionMismatch(w.dim(), v.dim().max(y.dim())));
    }
    let w_half = w.sqrt()?;
    let w_half_inv = w_half.inverse()?;
    let u = SpdMatrix::from_symmetric_unchecked(w_half.matrix() * v.matrix() * w_half.matrix());
    let u_half = u.sqrt()?;
    let conj = w_half_inv.matrix() * u_half.matrix() * w_half_inv.matrix();
    let inner = &conj * y.matrix() * &conj;
    SpdMatrix::from_symmetric_unchecked(inner).inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use rand::Rng;

    pub(crate) fn random_spd(d: usize, rng: &mut impl Rng) -> SpdMatrix {
        // B Bᵀ + εI with Gaussian B: generic SPD test matrices
        let b = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let m = &b * b.transpose() + DMatrix::identity(d, d) * 0.05;
        SpdMatrix::from_matrix(m).unwrap()
    }

    #[test]
    fn star_identity_is_exact() {
        let mut rng = Seed::new(1).rng();
        for d in [1usize, 2, 3, 6] {
            let x = random_spd(d, &mut rng);
            let id = SpdMatrix::identity(d);
            let y = star(&x, &id).unwrap();
            assert_eq!(x.matrix(), y.matrix());
        }
    }

    #[test]
    fn star_scalar_multiplies() {
        let x = SpdMatrix::scalar(3.0).unwrap();
        let y = SpdMatrix::scalar(2.0).unwrap();
        let z = star(&x, &y).unwrap();
        assert!((z.entry(0, 0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn star_diagonal_case() {
        // y^{1/2} = diag(1,2), so y^{1/2} x y^{1/2} = [[2,2],[2,8]]
        let x = SpdMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let y = SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap();
        let z = star(&x, &y).unwrap();
        let expect = [[2.0, 2.0], [2.0, 8.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((z.entry(i, j) - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn star_determinant_multiplicative() {
        let mut rng = Seed::new(2).rng();
        for d in [1usize, 2, 3, 6] {
            for _ in 0..50 {
                let x = random_spd(d, &mut rng);
                let y = random_spd(d, &mut rng);
                let z = star(&x, &y).unwrap();
                let lhs = z.logdet().unwrap();
                let rhs = x.logdet().unwrap() + y.logdet().unwrap();
                assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs().max(rhs.abs())));
            }
        }
    }

    #[test]
    fn sqrt_round_trip() {
        let mut rng = Seed::new(3).rng();
        for d in [1usize, 2, 3, 6] {
            for _ in 0..100 {
                let y = random_spd(d, &mut rng);
                let r = y.sqrt().unwrap();
                let back = SpdMatrix::from_symmetric_unchecked(r.matrix() * r.matrix());
                let err = back.max_abs_diff(&y);
                let scale = y.matrix().abs().max();
                assert!(err <= 1e-10 * scale.max(1.0), "d={d} err={err}");
            }
        }
    }

    #[test]
    fn sqrt_diagonal() {
        let y = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let r = y.sqrt().unwrap();
        assert!((r.entry(0, 0) - 2.0).abs() < 1e-12);
        assert!((r.entry(1, 1) - 3.0).abs() < 1e-12);
        assert!(r.entry(0, 1).abs() < 1e-12);
    }

    #[test]
    fn logdet_values() {
        assert!(SpdMatrix::identity(3).logdet().unwrap().abs() < 1e-14);
        let y = SpdMatrix::from_diagonal(&[std::f64::consts::E, std::f64::consts::E.powi(2)]).unwrap();
        assert!((y.logdet().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn change_of_variable_identity_case() {
        for d in [1usize, 2, 4] {
            let id = SpdMatrix::identity(d);
            let x = change_of_variable(&id, &id, &id).unwrap();
            assert!(x.max_abs_diff(&id) < 1e-12);
            assert!((x.trace() - d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn change_of_variable_scalar() {
        // d=1: X = W²/(UY) with U = WV, i.e. X = W/(VY)
        let w = SpdMatrix::scalar(2.0).unwrap();
        let v = SpdMatrix::scalar(3.0).unwrap();
        let y = SpdMatrix::scalar(5.0).unwrap();
        let x = change_of_variable(&w, &v, &y).unwrap();
        assert!((x.entry(0, 0) - 2.0 / 15.0).abs() < 1e-12);
        // tr[W X⁻¹] = tr[V Y]
        assert!((w.trace_product_inv(&x).unwrap() - 15.0).abs() < 1e-10);
        // tr[V X] = tr[W Y⁻¹]
        assert!((v.trace_product(&x).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn change_of_variable_trace_identities_random() {
        let mut rng = Seed::new(4).rng();
        for d in [1usize, 2, 3] {
            for _ in 0..1000 {
                let w = random_spd(d, &mut rng);
                let v = random_spd(d, &mut rng);
                let y = random_spd(d, &mut rng);
                let x = change_of_variable(&w, &v, &y).unwrap();
                let t1l = w.trace_product_inv(&x).unwrap();
                let t1r = v.trace_product(&y).unwrap();
                let t2l = v.trace_product(&x).unwrap();
                let t2r = w.trace_product_inv(&y).unwrap();
                assert!((t1l - t1r).abs() <= 1e-9 * t1l.abs().max(t1r.abs()).max(1.0));
                assert!((t2l - t2r).abs() <= 1e-9 * t2l.abs().max(t2r.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn minkowski_determinant_inequality() {
        let mut rng = Seed::new(5).rng();
        for d in [1usize, 2, 3, 6] {
            for _ in 0..200 {
                let a = random_spd(d, &mut rng);
                let b = random_spd(d, &mut rng);
                let s = a.add(&b).unwrap();
                let lhs = (a.logdet().unwrap() / d as f64).exp() + (b.logdet().unwrap() / d as f64).exp();
                let rhs = (s.logdet().unwrap() / d as f64).exp();
                assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
            }
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(SpdMatrix::from_matrix(m), Err(SpdError::NotSymmetric(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SpdMatrix::from_matrix(m),
            Err(SpdError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn psd_zero_arithmetic() {
        let z = PsdMatrix::zero(3);
        assert!(z.is_zero());
        let id = SpdMatrix::identity(3);
        let s = z.add(&id.to_psd()).unwrap();
        assert!(s.as_spd("sum").is_ok());
        // 0 ⋆ y = 0 exactly
        let mut rng = Seed::new(6).rng();
        let y = random_spd(3, &mut rng);
        let zy = star_psd(&z, &y).unwrap();
        assert!(zy.is_zero());
        assert!(z.as_spd("zero").is_err());
    }
}

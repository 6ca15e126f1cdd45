//! Dense complex linear algebra for qudit states.
//!
//! Everything here is dimension generic, although the rest of the crate only
//! ever uses `d = 4`. Operators are stored as `nalgebra::DMatrix<Complex64>`
//! and vectorized in row-major order: `vec(A)[i * d + j] = A[(i, j)]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues below this make `fidelity` reject its input.
pub const FIDELITY_PSD_TOL: f64 = 1e-8;

/// Anything that can be viewed as a square complex matrix.
pub trait Operator {
    fn matrix(&self) -> &CMatrix;

    fn dim(&self) -> usize {
        self.matrix().nrows()
    }
}

impl Operator for CMatrix {
    fn matrix(&self) -> &CMatrix {
        self
    }
}

/// A normalized state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    amplitudes: Vec<Complex64>,
}

impl PureState {
    /// Wraps already normalized amplitudes, rejecting anything off by more than `NORM_TOL`.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidDimension(amplitudes.len()));
        }
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > NORM_TOL || !norm_sq.is_finite() {
            return Err(Error::InvalidState(format!(
                "squared norm {norm_sq} differs from 1"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes arbitrary (non-zero) amplitudes.
    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidDimension(amplitudes.len()));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateInput("zero or non-finite state vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { amplitudes })
    }

    /// Computational basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if k >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: k + 1,
            });
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[k] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn to_vector(&self) -> CVector {
        CVector::from_column_slice(&self.amplitudes)
    }

    /// `<self|other>`
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|self><self|`
    pub fn projector(&self) -> CMatrix {
        let v = self.to_vector();
        &v * v.adjoint()
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix(self.projector())
    }
}

/// Hermitian, positive semidefinite, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        let dev = hermitian_deviation(&m);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "minimum eigenvalue {min_eig:e} is negative"
            )));
        }
        Ok(Self(m))
    }

    /// Skips validation. Only for matrices that are valid by construction.
    pub(crate) fn new_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self(
            CMatrix::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0),
        ))
    }

    pub fn purity(&self) -> f64 {
        hs_inner(&self.0, &self.0).map(|z| z.re).unwrap_or(f64::NAN)
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }
}

impl Operator for DensityMatrix {
    fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

/// Hermitian operator with no trace or positivity constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator(CMatrix);

impl HermitianOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        let dev = hermitian_deviation(&m);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + m†) / 2`.
    pub fn symmetrized(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(Self(h))
    }

    /// Eigenvalues in descending order with matching eigenvectors (columns).
    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        sorted_eigen(&self.0)
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }
}

impl Operator for HermitianOperator {
    fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

impl From<DensityMatrix> for HermitianOperator {
    fn from(rho: DensityMatrix) -> Self {
        Self(rho.0)
    }
}

/// Row-major flattening of a square operator.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedOperator(CVector);

impl VectorizedOperator {
    pub fn from_vec(v: Vec<Complex64>) -> Self {
        Self(CVector::from_vec(v))
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `<<self|other>>` (conjugate-linear in `self`).
    pub fn dot(&self, other: &VectorizedOperator) -> Result<Complex64> {
        check_dims(self.len(), other.len())?;
        Ok(self.0.dotc(&other.0))
    }
}

pub fn vectorize<A: Operator + ?Sized>(a: &A) -> VectorizedOperator {
    let m = a.matrix();
    let (r, c) = m.shape();
    let mut v = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            v.push(m[(i, j)]);
        }
    }
    VectorizedOperator(CVector::from_vec(v))
}

pub fn devectorize(v: &VectorizedOperator) -> Result<CMatrix> {
    let len = v.len();
    let d = (len as f64).sqrt().round() as usize;
    if d * d != len || d == 0 {
        return Err(Error::NotPerfectSquare(len));
    }
    Ok(CMatrix::from_row_slice(d, d, v.as_slice()))
}

/// Hilbert-Schmidt inner product `Tr(A† B)`.
pub fn hs_inner<A: Operator + ?Sized, B: Operator + ?Sized>(a: &A, b: &B) -> Result<Complex64> {
    let (ma, mb) = (a.matrix(), b.matrix());
    if ma.shape() != mb.shape() {
        return Err(Error::DimensionMismatch {
            expected: ma.nrows(),
            found: mb.nrows(),
        });
    }
    Ok(ma.iter().zip(mb.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// Uhlmann fidelity `[Tr sqrt(sqrt(rho) sigma sqrt(rho))]^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    let sqrt_rho = psd_sqrt(rho.matrix(), "first argument")?;
    // only the sign check is needed for sigma
    let min_sigma = min_eigenvalue(sigma.matrix());
    if min_sigma < -FIDELITY_PSD_TOL {
        return Err(Error::InvalidState(format!(
            "second argument has eigenvalue {min_sigma:e}"
        )));
    }
    let inner = &sqrt_rho * sigma.matrix() * &sqrt_rho;
    let (vals, _) = sorted_eigen(&inner);
    let floor = roundoff_floor(&vals);
    let tr: f64 = vals.iter().filter(|&&l| l > floor).map(|&l| l.sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// Fidelity between a density matrix and a pure state, `<psi|rho|psi>`.
pub fn pure_fidelity(rho: &DensityMatrix, psi: &PureState) -> Result<f64> {
    check_dims(rho.dim(), psi.dim())?;
    let v = psi.to_vector();
    let val = (v.adjoint() * rho.matrix() * &v)[(0, 0)].re;
    Ok(val.clamp(0.0, 1.0))
}

/// Haar-random pure state from a seeded ChaCha stream.
pub fn random_pure_state(dim: usize, seed: u64) -> Result<PureState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_pure_state_with(dim, &mut rng)
}

/// Haar-random pure state drawn from a caller-owned generator.
pub fn random_pure_state_with<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<PureState> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let amps: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    PureState::normalized(amps)
}

/// Density of the fidelity between two independent Haar-random pure states.
pub fn fidelity_pdf(f: f64, dim: usize) -> Result<f64> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::OutOfRange {
            what: "fidelity",
            value: f,
        });
    }
    Ok((dim as f64 - 1.0) * (1.0 - f).powi(dim as i32 - 2))
}

/// Cumulative distribution matching [`fidelity_pdf`].
pub fn fidelity_cdf(f: f64, dim: usize) -> Result<f64> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::OutOfRange {
            what: "fidelity",
            value: f,
        });
    }
    Ok(1.0 - (1.0 - f).powi(dim as i32 - 1))
}

/// Clips negative eigenvalues and renormalizes the trace.
pub fn project_to_density(a: &HermitianOperator) -> Result<DensityMatrix> {
    let (vals, vecs) = a.eigen();
    let clipped: Vec<f64> = vals.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateInput(
            "no positive eigenvalue left after clipping",
        ));
    }
    let d = a.dim();
    let mut out = CMatrix::zeros(d, d);
    for (k, &l) in clipped.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let v = vecs.column(k);
        out += v * v.adjoint() * Complex64::new(l / total, 0.0);
    }
    let out = (&out + out.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(DensityMatrix(out))
}

/// Largest eigenvalue and its eigenvector. `value * |v><v|` is the best
/// rank-one approximation of a Hermitian operator with a non-negative top eigenvalue.
///
/// The returned vector is phased so that its largest component is real and positive.
pub fn dominant_eigenpair(a: &HermitianOperator) -> Result<(f64, PureState)> {
    let (vals, vecs) = a.eigen();
    let top = vals[0];
    if top < 0.0 {
        return Err(Error::NoValidProjector(top));
    }
    let col: Vec<Complex64> = vecs.column(0).iter().copied().collect();
    Ok((top, PureState::normalized(fix_phase(col))?))
}

/// Trace distance `||a - b||_1 / 2` between two Hermitian matrices.
pub fn trace_distance<A: Operator + ?Sized, B: Operator + ?Sized>(a: &A, b: &B) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let diff = a.matrix() - b.matrix();
    let (vals, _) = sorted_eigen(&diff);
    Ok(0.5 * vals.iter().map(|l| l.abs()).sum::<f64>())
}

/// Rotates a vector so its largest-magnitude entry is real and positive.
pub(crate) fn fix_phase(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let pivot = v.iter().copied().fold(Complex64::new(0.0, 0.0), |best, z| {
        if z.norm_sqr() > best.norm_sqr() * (1.0 + 1e-12) {
            z
        } else {
            best
        }
    });
    if pivot.norm() > 0.0 {
        let rot = pivot.conj() / pivot.norm();
        v.iter_mut().for_each(|z| *z *= rot);
    }
    v
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
pub(crate) fn sorted_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

fn min_eigenvalue(m: &CMatrix) -> f64 {
    let (vals, _) = sorted_eigen(m);
    vals.last().copied().unwrap_or(0.0)
}

/// Eigenvalues at or below this are indistinguishable from rounding noise.
/// Taking square roots would otherwise turn 1e-17 into 3e-9.
fn roundoff_floor(vals: &[f64]) -> f64 {
    let scale = vals.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    1e-13 * scale
}

fn psd_sqrt(m: &CMatrix, which: &str) -> Result<CMatrix> {
    let (vals, vecs) = sorted_eigen(m);
    if let Some(&min) = vals.last() {
        if min < -FIDELITY_PSD_TOL {
            return Err(Error::InvalidState(format!(
                "{which} has eigenvalue {min:e}"
            )));
        }
    }
    let d = m.nrows();
    let floor = roundoff_floor(&vals);
    let mut out = CMatrix::zeros(d, d);
    for (k, &l) in vals.iter().enumerate() {
        if l <= floor {
            continue;
        }
        let s = l.sqrt();
        let v = vecs.column(k);
        out += v * v.adjoint() * Complex64::new(s, 0.0);
    }
    Ok(out)
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    let d = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..d {
        for j in i..d {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.nrows() < 2 {
        return Err(Error::InvalidDimension(m.nrows()));
    }
    Ok(())
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag(vals: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_iterator(
            vals.len(),
            vals.iter().map(|&v| c(v, 0.0)),
        ))
    }

    fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(d, d, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    fn random_density(d: usize, rank: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let g = CMatrix::from_fn(d, rank, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let m = &g * g.adjoint();
        let tr = m.trace();
        let m = m / tr;
        DensityMatrix::new((&m + m.adjoint()) * c(0.5, 0.0)).unwrap()
    }

    #[test]
    fn fidelity_identity_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = random_density(4, 3, &mut rng);
        assert_abs_diff_eq!(fidelity(&rho, &rho).unwrap(), 1.0, epsilon = 1e-9);

        let e0 = PureState::basis(4, 0).unwrap().density();
        let e1 = PureState::basis(4, 1).unwrap().density();
        assert_abs_diff_eq!(fidelity(&e0, &e1).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_pure_against_maximally_mixed() {
        // sqrt(|0><0|) = |0><0|, sqrt(|0><0| I/4 |0><0|) = |0><0| / 2, trace 1/2
        let e0 = PureState::basis(4, 0).unwrap().density();
        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        assert_abs_diff_eq!(fidelity(&e0, &mixed).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(&mixed, &e0).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_rejects_bad_inputs() {
        let a = DensityMatrix::maximally_mixed(4).unwrap();
        let b = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(matches!(
            fidelity(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = DensityMatrix::new_unchecked(diag(&[1.1, -0.1]));
        assert!(matches!(fidelity(&bad, &b), Err(Error::InvalidState(_))));
        assert!(matches!(fidelity(&b, &bad), Err(Error::InvalidState(_))));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(matches!(
            DensityMatrix::new(diag(&[0.5, 0.4])),
            Err(Error::InvalidState(_))
        ));
        assert!(matches!(
            DensityMatrix::new(diag(&[1.2, -0.2])),
            Err(Error::InvalidState(_))
        ));
        let mut m = diag(&[0.5, 0.5]);
        m[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn hs_inner_basics() {
        let id = CMatrix::identity(4, 4);
        assert_abs_diff_eq!(hs_inner(&id, &id).unwrap().re, 4.0, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(4, &mut rng);
        let z = hs_inner(&a, &a).unwrap();
        assert!(z.re >= 0.0 && z.im.abs() < 1e-12);
        assert!(hs_inner(&a, &CMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn vectorize_examples() {
        let id2 = CMatrix::identity(2, 2);
        let v = vectorize(&id2);
        assert_eq!(
            v.as_slice(),
            &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]
        );
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(2.0, 0.0);
        assert_eq!(vectorize(&m).as_slice()[1], c(2.0, 0.0));
        assert!(matches!(
            devectorize(&VectorizedOperator::from_vec(vec![c(1.0, 0.0); 5])),
            Err(Error::NotPerfectSquare(5))
        ));
    }

    #[test]
    fn vectorization_isometry_many_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let a = random_matrix(4, &mut rng);
            let b = random_matrix(4, &mut rng);
            // independent route: Tr(A† B) via an explicit product
            let direct = (a.adjoint() * &b).trace();
            let via_vec = vectorize(&a).dot(&vectorize(&b)).unwrap();
            worst = worst.max((direct - via_vec).norm());
        }
        assert!(worst < 1e-10, "worst {worst}");
    }

    #[test]
    fn random_state_determinism_and_norm() {
        let a = random_pure_state(4, 99).unwrap();
        let b = random_pure_state(4, 99).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.amplitudes().iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        assert!(matches!(
            random_pure_state(1, 0),
            Err(Error::InvalidDimension(1))
        ));
    }

    #[test]
    fn mean_random_fidelity_is_one_over_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| {
                let a = random_pure_state_with(4, &mut rng).unwrap();
                let b = random_pure_state_with(4, &mut rng).unwrap();
                a.inner(&b).unwrap().norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn fidelity_pdf_examples() {
        assert_eq!(fidelity_pdf(1.0, 4).unwrap(), 0.0);
        assert_eq!(fidelity_pdf(0.0, 4).unwrap(), 3.0);
        assert!(fidelity_pdf(1.1, 4).is_err());
        assert!(fidelity_pdf(-0.1, 4).is_err());
        // tail mass above 0.9: (1 - 0.9)^3
        let tail = 1.0 - fidelity_cdf(0.9, 4).unwrap();
        assert_abs_diff_eq!(tail, 1e-3, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_pdf_integrates_to_one() {
        // composite Simpson quadrature
        for d in 2..8 {
            let n = 2000;
            let h = 1.0 / n as f64;
            let mut s = fidelity_pdf(0.0, d).unwrap() + fidelity_pdf(1.0, d).unwrap();
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * fidelity_pdf(k as f64 * h, d).unwrap();
            }
            assert_abs_diff_eq!(s * h / 3.0, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn project_to_density_examples() {
        let h = HermitianOperator::new(diag(&[1.2, -0.2])).unwrap();
        let rho = project_to_density(&h).unwrap();
        assert_abs_diff_eq!(rho.matrix()[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.matrix()[(1, 1)].re, 0.0, epsilon = 1e-14);

        let zero = HermitianOperator::new(diag(&[-1.0, -0.5])).unwrap();
        assert!(matches!(
            project_to_density(&zero),
            Err(Error::DegenerateInput(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density(4, 2, &mut rng);
        let back = project_to_density(&rho.clone().into()).unwrap();
        let err = (back.matrix() - rho.matrix())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "idempotence error {err}");
    }

    #[test]
    fn small_perturbation_of_pure_state_stays_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let psi = random_pure_state_with(4, &mut rng).unwrap();
            let mut noise = random_matrix(4, &mut rng);
            noise = (&noise + noise.adjoint()) * c(0.5, 0.0);
            let scale = 1e-3 / noise.norm();
            let h =
                HermitianOperator::symmetrized(psi.projector() + noise * c(scale, 0.0)).unwrap();
            let rho = project_to_density(&h).unwrap();
            assert!(pure_fidelity(&rho, &psi).unwrap() >= 0.99);
        }
    }

    #[test]
    fn dominant_eigenpair_examples() {
        let h = HermitianOperator::new(diag(&[0.9, 0.05, 0.03, 0.02])).unwrap();
        let (l, v) = dominant_eigenpair(&h).unwrap();
        assert_abs_diff_eq!(l, 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(v.amplitudes()[0].re, 1.0, epsilon = 1e-14);

        let psi = random_pure_state(4, 8).unwrap();
        let h = HermitianOperator::symmetrized(psi.projector() * c(0.37, 0.0)).unwrap();
        let (l, v) = dominant_eigenpair(&h).unwrap();
        assert_abs_diff_eq!(l, 0.37, epsilon = 1e-12);
        assert_abs_diff_eq!(v.inner(&psi).unwrap().norm_sqr(), 1.0, epsilon = 1e-12);

        let neg = HermitianOperator::new(diag(&[-0.1, -0.3])).unwrap();
        assert!(matches!(
            dominant_eigenpair(&neg),
            Err(Error::NoValidProjector(_))
        ));
    }

    #[test]
    fn dominant_pair_is_best_rank_one_psd_fit() {
        // brute force: no candidate t|u><u| built from random directions does better
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let a = random_matrix(4, &mut rng);
            let h = HermitianOperator::symmetrized(a).unwrap();
            let top = h.eigen().0[0];
            if top < 0.0 {
                continue;
            }
            let (l, v) = dominant_eigenpair(&h).unwrap();
            let best = (h.matrix() - v.projector() * c(l, 0.0)).norm();
            for _ in 0..2000 {
                let u = random_pure_state_with(4, &mut rng).unwrap();
                // optimal scale for fixed direction: max(<u|H|u>, 0)
                let uv = u.to_vector();
                let t = (uv.adjoint() * h.matrix() * &uv)[(0, 0)].re.max(0.0);
                let err = (h.matrix() - u.projector() * c(t, 0.0)).norm();
                assert!(err >= best - 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fidelity_axioms(seed in any::<u64>(), r1 in 1usize..=4, r2 in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(4, r1, &mut rng);
            let sigma = random_density(4, r2, &mut rng);
            let f = fidelity(&rho, &sigma).unwrap();
            let g = fidelity(&sigma, &rho).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!((f - g).abs() < 1e-9);
            prop_assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn fidelity_pure_reduction(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pure_state_with(4, &mut rng).unwrap();
            let b = random_pure_state_with(4, &mut rng).unwrap();
            let f = fidelity(&a.density(), &b.density()).unwrap();
            prop_assert!((f - a.inner(&b).unwrap().norm_sqr()).abs() < 1e-9);
        }

        #[test]
        fn devectorize_inverts_vectorize(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(d, &mut rng);
            prop_assert_eq!(devectorize(&vectorize(&a)).unwrap(), a);
        }

        #[test]
        fn projection_always_yields_valid_density(seed in any::<u64>(), scale in 0.01f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(4, &mut rng) * c(scale, 0.0);
            let mut h = HermitianOperator::symmetrized(a).unwrap();
            if h.eigen().0[0] <= 0.0 {
                h = HermitianOperator::symmetrized(h.into_inner() * c(-1.0, 0.0)).unwrap();
            }
            let rho = project_to_density(&h).unwrap();
            prop_assert!(DensityMatrix::new(rho.into_inner()).is_ok());
        }
    }
}

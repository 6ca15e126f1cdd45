//! Photon counting, detector tomography and state reconstruction.
//!
//! A measurement setting `j` is a rank-one operator `Π_j = ε_j |P_j><P_j|`.
//! Probabilities are always arranged with input states along rows and
//! settings along columns.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlin::{
    check_dims, dominant_eigenpair, fix_phase, project_to_density, trace_distance, CMatrix,
    CVector, DensityMatrix, HermitianOperator, Operator, PureState,
};

/// Largest efficiency accepted by [`Projector::new`].
pub const EFFICIENCY_TOL: f64 = 1e-6;
/// Relative singular-value threshold below which a design is considered rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Rank-one measurement operator `ε |P><P|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    efficiency: f64,
    direction: PureState,
}

impl Projector {
    pub fn new(efficiency: f64, direction: PureState) -> Result<Self> {
        if !(0.0..=1.0 + EFFICIENCY_TOL).contains(&efficiency) {
            return Err(Error::OutOfRange {
                what: "projector efficiency",
                value: efficiency,
            });
        }
        Ok(Self {
            efficiency,
            direction,
        })
    }

    /// Unit-efficiency projector onto `direction`.
    pub fn ideal(direction: PureState) -> Self {
        Self {
            efficiency: 1.0,
            direction,
        }
    }

    /// Splits `v` into `‖v‖²` and `v / ‖v‖`.
    pub fn from_unnormalized(v: Vec<Complex64>) -> Result<Self> {
        let norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if norm_sq <= 0.0 || !norm_sq.is_finite() {
            return Err(Error::NoValidProjector(norm_sq));
        }
        let direction = PureState::normalized(fix_phase(v))?;
        Self::new(norm_sq, direction)
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn direction(&self) -> &PureState {
        &self.direction
    }

    pub fn dim(&self) -> usize {
        self.direction.dim()
    }

    pub fn operator(&self) -> CMatrix {
        self.direction.projector() * Complex64::new(self.efficiency, 0.0)
    }

    /// `sqrt(ε) |P>`, so that `Π = v v†`.
    fn scaled_vector(&self) -> CVector {
        self.direction.to_vector() * Complex64::new(self.efficiency.sqrt(), 0.0)
    }

    #[cfg(test)]
    fn rescaled(&self, factor: f64) -> Self {
        Self {
            efficiency: self.efficiency * factor,
            direction: self.direction.clone(),
        }
    }
}

/// Passing probabilities, rows = input states, columns = settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    values: Vec<Vec<f64>>,
}

impl ProbabilityMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let cols = values.first().map_or(0, Vec::len);
        if let Some(bad) = values.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        if let Some(&v) = values
            .iter()
            .flatten()
            .find(|v| !(0.0..=1.0 + EFFICIENCY_TOL).contains(*v))
        {
            return Err(Error::OutOfRange {
                what: "probability",
                value: v,
            });
        }
        Ok(Self { values })
    }

    /// Clamps every entry into `[0, 1]`; for estimates that noise pushed slightly outside.
    pub fn clamped(mut values: Vec<Vec<f64>>) -> Result<Self> {
        values
            .iter_mut()
            .flatten()
            .for_each(|v| *v = if v.is_nan() { *v } else { v.clamp(0.0, 1.0) });
        Self::new(values)
    }

    /// Exact Born-rule probabilities of pure `inputs` against `projectors`.
    pub fn predicted(inputs: &[PureState], projectors: &[Projector]) -> Result<Self> {
        let values = inputs
            .iter()
            .map(|phi| {
                let rho = phi.density();
                projectors
                    .iter()
                    .map(|p| predicted_probability(&rho, p))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    /// Reference-normalized estimates from counts, clamped into `[0, 1]`.
    pub fn from_counts(record: &CountsRecord) -> Result<Self> {
        let values = record
            .rows
            .iter()
            .map(StateCounts::estimated_probabilities)
            .collect::<Result<Vec<_>>>()?;
        Self::clamped(values)
    }

    pub fn nrows(&self) -> usize {
        self.values.len()
    }

    pub fn ncols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.ncols())
            .map(|j| self.column(j).iter().sum())
            .collect()
    }
}

/// Source brightness and detection chain of the counting simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingModel {
    /// Mean photons per setting entering the beam splitter.
    pub mean_photons: f64,
    /// Fraction sent to the mirror arm.
    pub split_ratio: f64,
    /// Detection efficiency of the signal arm; unknown to the estimators.
    pub detector_efficiency: f64,
}

impl CountingModel {
    pub fn new(mean_photons: f64, split_ratio: f64, detector_efficiency: f64) -> Result<Self> {
        if !(mean_photons > 0.0 && mean_photons.is_finite()) {
            return Err(Error::OutOfRange {
                what: "mean photon number",
                value: mean_photons,
            });
        }
        if !(split_ratio > 0.0 && split_ratio < 1.0) {
            return Err(Error::OutOfRange {
                what: "split ratio",
                value: split_ratio,
            });
        }
        if !(detector_efficiency > 0.0 && detector_efficiency <= 1.0) {
            return Err(Error::OutOfRange {
                what: "detector efficiency",
                value: detector_efficiency,
            });
        }
        Ok(Self {
            mean_photons,
            split_ratio,
            detector_efficiency,
        })
    }
}

/// Signal and reference counts of one input state across all settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCounts {
    pub signal: Vec<u64>,
    pub reference: Vec<u64>,
    pub split_ratio: f64,
}

impl StateCounts {
    pub fn new(signal: Vec<u64>, reference: Vec<u64>, split_ratio: f64) -> Result<Self> {
        if signal.len() != reference.len() {
            return Err(Error::DimensionMismatch {
                expected: signal.len(),
                found: reference.len(),
            });
        }
        if !(split_ratio > 0.0 && split_ratio < 1.0) {
            return Err(Error::OutOfRange {
                what: "split ratio",
                value: split_ratio,
            });
        }
        Ok(Self {
            signal,
            reference,
            split_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    /// Expected photons on the mirror arm per setting, inferred from the reference arm.
    pub fn incident_photons(&self) -> Result<Vec<f64>> {
        let s = self.split_ratio;
        self.reference
            .iter()
            .map(|&r| {
                if r == 0 {
                    Err(Error::DegenerateInput("reference arm recorded zero counts"))
                } else {
                    Ok(r as f64 * s / (1.0 - s))
                }
            })
            .collect()
    }

    /// `signal / reference · (1 - s) / s` per setting.
    pub fn estimated_probabilities(&self) -> Result<Vec<f64>> {
        Ok(self
            .incident_photons()?
            .iter()
            .zip(&self.signal)
            .map(|(n, &c)| c as f64 / n)
            .collect())
    }
}

/// Counts for a set of input states, e.g. a detector-tomography run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub rows: Vec<StateCounts>,
}

impl CountsRecord {
    /// One line per `(i, j)`: `i,j,signal,reference`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,signal,reference\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (j, (s, r)) in row.signal.iter().zip(&row.reference).enumerate() {
                out.push_str(&format!("{i},{j},{s},{r}\n"));
            }
        }
        out
    }
}

/// `ε <P|ρ|P>`.
pub fn predicted_probability(rho: &DensityMatrix, proj: &Projector) -> Result<f64> {
    check_dims(rho.dim(), proj.dim())?;
    let v = proj.direction.to_vector();
    let val = (v.adjoint() * rho.matrix() * &v)[(0, 0)].re;
    Ok((proj.efficiency * val).clamp(0.0, proj.efficiency))
}

/// Poisson counts for one input state. Draws signal then reference per setting.
pub fn simulate_counts(
    rho: &DensityMatrix,
    projectors: &[Projector],
    model: &CountingModel,
    seed: u64,
) -> Result<StateCounts> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mean: f64| -> u64 {
        if mean <= 0.0 {
            0
        } else {
            Poisson::new(mean)
                .map(|d| d.sample(&mut rng) as u64)
                .unwrap_or(0)
        }
    };
    let ref_mean = model.mean_photons * (1.0 - model.split_ratio);
    let sig_scale = model.mean_photons * model.split_ratio * model.detector_efficiency;
    let mut signal = Vec::with_capacity(projectors.len());
    let mut reference = Vec::with_capacity(projectors.len());
    for p in projectors {
        let prob = predicted_probability(rho, p)?;
        signal.push(draw(sig_scale * prob));
        reference.push(draw(ref_mean));
    }
    StateCounts::new(signal, reference, model.split_ratio)
}

/// Real basis of the Hermitian `d × d` matrices: `E_kk`, `E_kl + E_lk`, `i E_kl - i E_lk`.
fn hermitian_basis(d: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(d * d);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    for k in 0..d {
        let mut m = CMatrix::zeros(d, d);
        m[(k, k)] = one;
        out.push(m);
    }
    for k in 0..d {
        for l in k + 1..d {
            let mut re = CMatrix::zeros(d, d);
            re[(k, l)] = one;
            re[(l, k)] = one;
            out.push(re);
            let mut im = CMatrix::zeros(d, d);
            im[(k, l)] = i;
            im[(l, k)] = -i;
            out.push(im);
        }
    }
    out
}

/// Least-squares solver for `values_i = Tr(op_i X)` over Hermitian `X`.
#[derive(Debug, Clone)]
pub struct HermitianLeastSquares {
    dim: usize,
    basis: Vec<CMatrix>,
    pinv: DMatrix<f64>,
}

impl HermitianLeastSquares {
    pub fn new(ops: &[CMatrix]) -> Result<Self> {
        let dim = ops.first().map_or(0, |m| m.nrows());
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let basis = hermitian_basis(dim);
        let params = basis.len();
        let design = DMatrix::from_fn(ops.len(), params, |i, a| {
            let op = &ops[i];
            let b = &basis[a];
            let mut tr = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                for l in 0..dim {
                    tr += op[(k, l)] * b[(l, k)];
                }
            }
            tr.re
        });
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > RANK_TOL * smax)
            .count();
        if rank < params {
            return Err(Error::RankDeficient {
                rank,
                required: params,
            });
        }
        let pinv = svd
            .pseudo_inverse(RANK_TOL * smax)
            .map_err(|_| Error::DegenerateInput("pseudo-inverse failed"))?;
        Ok(Self { dim, basis, pinv })
    }

    pub fn solve(&self, values: &[f64]) -> Result<HermitianOperator> {
        if values.len() != self.pinv.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.pinv.ncols(),
                found: values.len(),
            });
        }
        let b = nalgebra::DVector::from_column_slice(values);
        let x = &self.pinv * b;
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (coef, basis) in x.iter().zip(&self.basis) {
            m += basis * Complex64::new(*coef, 0.0);
        }
        HermitianOperator::symmetrized(m)
    }
}

/// Result of detector tomography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCalibration {
    pub projectors: Vec<Projector>,
    /// Weight of the dropped eigenvalues, `Σ_{k>0} |λ_k| / Σ_k |λ_k|`, per setting.
    pub discarded_weight: Vec<f64>,
    /// Global factor applied so no efficiency exceeds 1 (1 when none did).
    pub rescale: f64,
}

/// Recovers one rank-one operator per column of `p` from responses to known inputs.
pub fn detector_tomography(
    p: &ProbabilityMatrix,
    inputs: &[PureState],
) -> Result<DetectorCalibration> {
    if inputs.len() != p.nrows() {
        return Err(Error::DimensionMismatch {
            expected: p.nrows(),
            found: inputs.len(),
        });
    }
    let ops: Vec<CMatrix> = inputs.iter().map(PureState::projector).collect();
    let solver = HermitianLeastSquares::new(&ops)?;
    let mut raw = Vec::with_capacity(p.ncols());
    let mut discarded_weight = Vec::with_capacity(p.ncols());
    for j in 0..p.ncols() {
        let op = solver.solve(&p.column(j))?;
        let (vals, _) = op.eigen();
        let total: f64 = vals.iter().map(|l| l.abs()).sum();
        let (top, dir) = dominant_eigenpair(&op)?;
        if top <= 0.0 {
            return Err(Error::NoValidProjector(top));
        }
        discarded_weight.push(if total > 0.0 { 1.0 - top / total } else { 0.0 });
        raw.push((top, dir));
    }
    let max_eff = raw.iter().map(|r| r.0).fold(0.0, f64::max);
    let rescale = if max_eff > 1.0 { 1.0 / max_eff } else { 1.0 };
    let projectors = raw
        .into_iter()
        .map(|(e, d)| Projector::new((e * rescale).min(1.0), d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectorCalibration {
        projectors,
        discarded_weight,
        rescale,
    })
}

/// Precomputed linear-inversion solver for a fixed projector set.
#[derive(Debug, Clone)]
pub struct LinearInverter {
    solver: HermitianLeastSquares,
}

impl LinearInverter {
    pub fn new(projectors: &[Projector]) -> Result<Self> {
        let ops: Vec<CMatrix> = projectors.iter().map(Projector::operator).collect();
        Ok(Self {
            solver: HermitianLeastSquares::new(&ops)?,
        })
    }

    /// Unconstrained least-squares estimate before the physicality repair.
    pub fn raw(&self, probabilities: &[f64]) -> Result<HermitianOperator> {
        self.solver.solve(probabilities)
    }

    pub fn reconstruct(&self, probabilities: &[f64]) -> Result<DensityMatrix> {
        project_to_density(&self.raw(probabilities)?)
    }
}

/// Least-squares state estimate clipped onto the density matrices.
pub fn linear_inversion(probabilities: &[f64], projectors: &[Projector]) -> Result<DensityMatrix> {
    LinearInverter::new(projectors)?.reconstruct(probabilities)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Initial dilution step of every iteration; halved while the likelihood would drop.
    pub damping: f64,
    /// Stop once an accepted step moves the estimate less than this in trace distance.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-8,
            max_iterations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOutcome {
    pub rho: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood (up to a constant) of the start point and every accepted iterate.
    pub log_likelihood: Vec<f64>,
}

struct Likelihood {
    /// `sqrt(N_j ε_j) |P_j>` so that `Q_j = q q†`.
    q: Vec<CVector>,
    weights: Vec<f64>,
    total: f64,
    g: CMatrix,
}

impl Likelihood {
    fn expectation(q: &CVector, rho: &CMatrix) -> f64 {
        (q.adjoint() * rho * q)[(0, 0)].re
    }

    fn trace_g(&self, rho: &CMatrix) -> f64 {
        (&self.g * rho).trace().re
    }

    /// `Σ n_j ln Tr(ρ Q_j) - n ln Tr(ρ G)`; invariant under rescaling ρ.
    fn value(&self, rho: &CMatrix) -> f64 {
        let data: f64 = self
            .q
            .iter()
            .zip(&self.weights)
            .filter(|(_, &n)| n > 0.0)
            .map(|(q, &n)| n * Self::expectation(q, rho).max(f64::MIN_POSITIVE).ln())
            .sum();
        data - self.total * self.trace_g(rho).ln()
    }

    /// Normalized gradient `Σ (n_j/n) Q_j / Tr(ρQ_j) - G / Tr(ρG)`.
    fn gradient(&self, rho: &CMatrix) -> CMatrix {
        let d = rho.nrows();
        let mut r = CMatrix::zeros(d, d);
        for (q, &n) in self.q.iter().zip(&self.weights) {
            if n > 0.0 {
                let e = Self::expectation(q, rho).max(f64::MIN_POSITIVE);
                r += q * q.adjoint() * Complex64::new(n / (self.total * e), 0.0);
            }
        }
        r - &self.g * Complex64::new(1.0 / self.trace_g(rho), 0.0)
    }
}

fn normalize(m: CMatrix) -> CMatrix {
    let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = h.trace().re;
    h / Complex64::new(tr, 0.0)
}

/// Diluted RρR maximum-likelihood estimate from one state's counts.
///
/// The model is `signal_j ~ Poisson(N_j Tr(ρ Π_j))` with `N_j` taken from the
/// reference arm. The overall intensity is profiled out, so a common
/// efficiency factor on all projectors does not bias the estimate.
pub fn mle_reconstruct(
    counts: &StateCounts,
    projectors: &[Projector],
    opts: &MleOptions,
) -> Result<MleOutcome> {
    if counts.len() != projectors.len() {
        return Err(Error::DimensionMismatch {
            expected: projectors.len(),
            found: counts.len(),
        });
    }
    let dim = projectors
        .first()
        .map(Projector::dim)
        .ok_or(Error::DegenerateInput("no projectors"))?;
    if projectors.len() < dim * dim {
        return Err(Error::RankDeficient {
            rank: projectors.len(),
            required: dim * dim,
        });
    }
    let total: f64 = counts.signal.iter().map(|&c| c as f64).sum();
    if total == 0.0 {
        return Err(Error::DegenerateInput("all signal counts are zero"));
    }
    let incident = counts.incident_photons()?;
    let q: Vec<CVector> = projectors
        .iter()
        .zip(&incident)
        .map(|(p, n)| p.scaled_vector() * Complex64::new(n.sqrt(), 0.0))
        .collect();
    let mut g = CMatrix::zeros(dim, dim);
    for v in &q {
        g += v * v.adjoint();
    }
    let like = Likelihood {
        q,
        weights: counts.signal.iter().map(|&c| c as f64).collect(),
        total,
        g,
    };

    let eye = CMatrix::identity(dim, dim);
    let mut rho = DensityMatrix::maximally_mixed(dim)?.into_inner();
    let mut current = like.value(&rho);
    let mut log_likelihood = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let grad = like.gradient(&rho);
        let mut eps = opts.damping;
        let accepted = loop {
            let a = &eye + &grad * Complex64::new(eps, 0.0);
            let candidate = normalize(&a * &rho * &a);
            let value = like.value(&candidate);
            if value >= current {
                break Some((candidate, value));
            }
            eps *= 0.5;
            if eps < 1e-12 {
                break None;
            }
        };
        let Some((next, value)) = accepted else {
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        let step = trace_distance(&next, &rho)?;
        rho = next;
        current = value;
        log_likelihood.push(value);
        if step < opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(MleOutcome {
        rho: DensityMatrix::new_unchecked(rho),
        iterations,
        converged,
        log_likelihood,
    })
}

/// Which reconstruction to run on counted data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Mle,
    Linear,
}

/// Ratio of the largest to the smallest singular value of the stacked `vec(Π_j)`.
pub fn eta(projectors: &[Projector]) -> Result<f64> {
    let dim = projectors
        .first()
        .map(Projector::dim)
        .ok_or(Error::InfiniteConditioning)?;
    let cols = dim * dim;
    if projectors.len() < cols {
        return Err(Error::InfiniteConditioning);
    }
    let ops: Vec<CMatrix> = projectors.iter().map(Projector::operator).collect();
    // row-major vec(Π)
    let stack = CMatrix::from_fn(projectors.len(), cols, |i, a| ops[i][(a / dim, a % dim)]);
    let sv = stack.svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(min > RANK_TOL * max) {
        return Err(Error::InfiniteConditioning);
    }
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::build_mub_d4;
    use crate::qlin::{fidelity, pure_fidelity, random_pure_state, random_pure_state_with};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ideal_projectors() -> Vec<Projector> {
        build_mub_d4()
            .elements()
            .into_iter()
            .map(Projector::ideal)
            .collect()
    }

    fn random_projectors(seed: u64) -> Vec<Projector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20)
            .map(|_| {
                let e = rng.random_range(0.3..1.0);
                Projector::new(e, random_pure_state_with(4, &mut rng).unwrap()).unwrap()
            })
            .collect()
    }

    fn exact(rho: &DensityMatrix, projectors: &[Projector]) -> Vec<f64> {
        projectors
            .iter()
            .map(|p| predicted_probability(rho, p).unwrap())
            .collect()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn projector_validation() {
        let e0 = PureState::basis(4, 0).unwrap();
        assert!(Projector::new(1.0 + 2e-6, e0.clone()).is_err());
        assert!(Projector::new(-0.1, e0.clone()).is_err());
        let p = Projector::from_unnormalized(vec![
            Complex64::new(0.0, 0.6),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        ])
        .unwrap();
        assert_abs_diff_eq!(p.efficiency(), 0.36, epsilon = 1e-15);
        assert_eq!(p.direction(), &e0);
        assert!(Projector::from_unnormalized(vec![Complex64::new(0.0, 0.0); 4]).is_err());
    }

    #[test]
    fn predicted_probability_examples() {
        let psi = random_pure_state(4, 3).unwrap();
        let p = Projector::ideal(psi.clone());
        assert_abs_diff_eq!(
            predicted_probability(&psi.density(), &p).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let a = PureState::basis(4, 1).unwrap();
        let b = Projector::ideal(PureState::basis(4, 2).unwrap());
        assert_eq!(predicted_probability(&a.density(), &b).unwrap(), 0.0);

        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        let q = Projector::new(0.37, psi).unwrap();
        assert_abs_diff_eq!(
            predicted_probability(&mixed, &q).unwrap(),
            0.37 / 4.0,
            epsilon = 1e-15
        );

        let small = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(predicted_probability(&small, &q).is_err());
    }

    #[test]
    fn counts_follow_the_law_of_large_numbers() {
        let rho = random_pure_state(4, 11).unwrap().density();
        let proj = ideal_projectors();
        let model = CountingModel::new(1e7, 0.5, 1.0).unwrap();
        let counts = simulate_counts(&rho, &proj, &model, 5).unwrap();
        let est = counts.estimated_probabilities().unwrap();
        for (e, t) in est.iter().zip(exact(&rho, &proj)) {
            if t > 0.01 {
                assert!((e - t).abs() / t < 0.01, "{e} vs {t}");
            }
        }
    }

    #[test]
    fn zero_probability_gives_zero_signal() {
        let rho = PureState::basis(4, 0).unwrap().density();
        let proj = vec![Projector::ideal(PureState::basis(4, 3).unwrap()); 4];
        let model = CountingModel::new(1e6, 0.5, 1.0).unwrap();
        let counts = simulate_counts(&rho, &proj, &model, 1).unwrap();
        assert!(counts.signal.iter().all(|&c| c == 0));
        assert!(counts.reference.iter().all(|&c| c > 0));
    }

    #[test]
    fn signal_counts_stay_inside_poisson_band() {
        // p = 1/2 through a half-efficiency projector onto the input itself
        let psi = PureState::basis(4, 0).unwrap();
        let proj = vec![Projector::new(0.5, psi.clone()).unwrap()];
        let model = CountingModel::new(1e4, 0.5, 1.0).unwrap();
        let inside = (0..1000)
            .filter(|&s| {
                let c = simulate_counts(&psi.density(), &proj, &model, s)
                    .unwrap()
                    .signal[0];
                (2300..=2700).contains(&c)
            })
            .count();
        assert!(inside >= 997, "{inside}");
    }

    #[test]
    fn counts_are_deterministic_per_seed() {
        let rho = random_pure_state(4, 2).unwrap().density();
        let proj = ideal_projectors();
        let model = CountingModel::new(1e5, 0.3, 0.8).unwrap();
        let a = simulate_counts(&rho, &proj, &model, 77).unwrap();
        assert_eq!(a, simulate_counts(&rho, &proj, &model, 77).unwrap());
        assert_ne!(a, simulate_counts(&rho, &proj, &model, 78).unwrap());
    }

    #[test]
    fn counting_model_validation() {
        assert!(CountingModel::new(0.0, 0.5, 1.0).is_err());
        assert!(CountingModel::new(1.0, 1.0, 1.0).is_err());
        assert!(CountingModel::new(1.0, 0.5, 0.0).is_err());
        let c = StateCounts::new(vec![1], vec![0], 0.5).unwrap();
        assert!(c.estimated_probabilities().is_err());
    }

    #[test]
    fn counts_csv_layout() {
        let rec = CountsRecord {
            rows: vec![StateCounts::new(vec![3, 4], vec![10, 11], 0.5).unwrap()],
        };
        assert_eq!(rec.to_csv(), "i,j,signal,reference\n0,0,3,10\n0,1,4,11\n");
    }

    #[test]
    fn detector_tomography_round_trip() {
        let inputs = build_mub_d4().elements();
        let truth = random_projectors(21);
        let p = ProbabilityMatrix::predicted(&inputs, &truth).unwrap();
        let cal = detector_tomography(&p, &inputs).unwrap();
        assert_eq!(cal.rescale, 1.0);
        for (t, r) in truth.iter().zip(&cal.projectors) {
            let f = t.direction().inner(r.direction()).unwrap().norm_sqr();
            assert!(f >= 1.0 - 1e-9);
            assert_abs_diff_eq!(t.efficiency(), r.efficiency(), epsilon = 1e-9);
        }
        assert!(cal.discarded_weight.iter().all(|&w| w < 1e-9));
    }

    #[test]
    fn ideal_matrix_recovers_the_mubs() {
        let inputs = build_mub_d4().elements();
        let p = ProbabilityMatrix::predicted(&inputs, &ideal_projectors()).unwrap();
        let cal = detector_tomography(&p, &inputs).unwrap();
        for (phi, r) in inputs.iter().zip(&cal.projectors) {
            assert_abs_diff_eq!(r.efficiency(), 1.0, epsilon = 1e-12);
            assert!(phi.inner(r.direction()).unwrap().norm_sqr() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn detector_tomography_tolerates_one_percent_noise() {
        let inputs = build_mub_d4().elements();
        let truth = random_projectors(8);
        let clean = ProbabilityMatrix::predicted(&inputs, &truth).unwrap();
        let mut per_seed = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let noisy: Vec<Vec<f64>> = clean
                .rows()
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|&v| {
                            let z: f64 = rng.sample(StandardNormal);
                            v * (1.0 + 0.01 * z)
                        })
                        .collect()
                })
                .collect();
            let cal =
                detector_tomography(&ProbabilityMatrix::clamped(noisy).unwrap(), &inputs).unwrap();
            let worst = truth
                .iter()
                .zip(&cal.projectors)
                .map(|(t, r)| t.direction().inner(r.direction()).unwrap().norm_sqr())
                .fold(1.0, f64::min);
            per_seed.push(worst);
        }
        assert!(median(per_seed) >= 0.99);
    }

    #[test]
    fn detector_tomography_needs_complete_inputs() {
        let inputs: Vec<_> = build_mub_d4().bases()[0].clone();
        let p = ProbabilityMatrix::predicted(&inputs, &ideal_projectors()).unwrap();
        assert!(matches!(
            detector_tomography(&p, &inputs),
            Err(Error::RankDeficient {
                rank: 4,
                required: 16
            })
        ));
    }

    #[test]
    fn detector_tomography_rescales_overshooting_efficiencies() {
        let inputs = build_mub_d4().elements();
        let p = ProbabilityMatrix::predicted(&inputs, &ideal_projectors()).unwrap();
        let boosted: Vec<Vec<f64>> = p
            .rows()
            .iter()
            .map(|r| r.iter().map(|v| v * 0.999).collect())
            .collect();
        let mut boosted = boosted;
        boosted[0][0] = 1.0;
        let cal = detector_tomography(&ProbabilityMatrix::new(boosted).unwrap(), &inputs).unwrap();
        assert!(cal.projectors.iter().all(|p| p.efficiency() <= 1.0));
    }

    #[test]
    fn linear_inversion_examples() {
        let proj = ideal_projectors();
        for seed in 0..10 {
            let psi = random_pure_state(4, seed).unwrap();
            let est = linear_inversion(&exact(&psi.density(), &proj), &proj).unwrap();
            assert!(pure_fidelity(&est, &psi).unwrap() >= 1.0 - 1e-9);
        }
        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        let est = linear_inversion(&exact(&mixed, &proj), &proj).unwrap();
        assert!(trace_distance(&est, &mixed).unwrap() < 1e-9);

        // poorly conditioned set
        let bad = random_projectors(99);
        assert!(eta(&bad).unwrap() > eta(&proj).unwrap());
        let psi = random_pure_state(4, 123).unwrap();
        let est = linear_inversion(&exact(&psi.density(), &bad), &bad).unwrap();
        assert!(pure_fidelity(&est, &psi).unwrap() >= 1.0 - 1e-6);

        assert!(linear_inversion(&[0.5; 4], &proj[..4]).is_err());
    }

    #[test]
    fn mle_at_high_counts_is_accurate() {
        let proj = ideal_projectors();
        let model = CountingModel::new(1e7, 0.5, 1.0).unwrap();
        for seed in 0..5 {
            let psi = random_pure_state(4, 40 + seed).unwrap();
            let counts = simulate_counts(&psi.density(), &proj, &model, seed).unwrap();
            let out = mle_reconstruct(&counts, &proj, &MleOptions::default()).unwrap();
            assert!(pure_fidelity(&out.rho, &psi).unwrap() >= 0.999);
            assert!(out.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn mle_recovers_the_mixed_state() {
        let proj = ideal_projectors();
        let model = CountingModel::new(1e6, 0.5, 1.0).unwrap();
        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        let counts = simulate_counts(&mixed, &proj, &model, 3).unwrap();
        let out = mle_reconstruct(&counts, &proj, &MleOptions::default()).unwrap();
        let purity = out.rho.purity();
        assert!((0.25..=0.30).contains(&purity), "{purity}");
        assert!(fidelity(&out.rho, &mixed).unwrap() > 0.999);
    }

    #[test]
    fn mle_output_is_a_density_matrix_and_scale_free() {
        let proj = random_projectors(5);
        let model = CountingModel::new(1e4, 0.5, 0.6).unwrap();
        let psi = random_pure_state(4, 6).unwrap();
        let counts = simulate_counts(&psi.density(), &proj, &model, 9).unwrap();
        let out = mle_reconstruct(&counts, &proj, &MleOptions::default()).unwrap();
        assert!(DensityMatrix::new(out.rho.clone().into_inner()).is_ok());
        // a common efficiency factor must not change the estimate
        let halved: Vec<_> = proj.iter().map(|p| p.rescaled(0.5)).collect();
        let other = mle_reconstruct(&counts, &halved, &MleOptions::default()).unwrap();
        assert!(trace_distance(&out.rho, &other.rho).unwrap() < 1e-6);
    }

    #[test]
    fn mle_beats_linear_inversion_at_low_counts() {
        let proj = ideal_projectors();
        let inverter = LinearInverter::new(&proj).unwrap();
        let model = CountingModel::new(1e4, 0.5, 1.0).unwrap();
        let wins = (0..200u64)
            .filter(|&seed| {
                let psi = random_pure_state(4, 5000 + seed).unwrap();
                let counts = simulate_counts(&psi.density(), &proj, &model, seed).unwrap();
                let mle = mle_reconstruct(&counts, &proj, &MleOptions::default()).unwrap();
                let lin = inverter
                    .reconstruct(&counts.estimated_probabilities().unwrap())
                    .unwrap();
                pure_fidelity(&mle.rho, &psi).unwrap() >= pure_fidelity(&lin, &psi).unwrap()
            })
            .count();
        assert!(wins >= 120, "{wins}");
    }

    #[test]
    fn mle_rejects_empty_data() {
        let proj = ideal_projectors();
        let counts = StateCounts::new(vec![0; 20], vec![100; 20], 0.5).unwrap();
        assert!(matches!(
            mle_reconstruct(&counts, &proj, &MleOptions::default()),
            Err(Error::DegenerateInput(_))
        ));
        let short = StateCounts::new(vec![1; 19], vec![100; 19], 0.5).unwrap();
        assert!(mle_reconstruct(&short, &proj, &MleOptions::default()).is_err());
    }

    #[test]
    fn mle_reports_non_convergence() {
        let proj = ideal_projectors();
        let model = CountingModel::new(1e5, 0.5, 1.0).unwrap();
        let psi = random_pure_state(4, 1).unwrap();
        let counts = simulate_counts(&psi.density(), &proj, &model, 2).unwrap();
        let out = mle_reconstruct(
            &counts,
            &proj,
            &MleOptions {
                max_iterations: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn infidelity_shrinks_with_photon_number() {
        let proj = ideal_projectors();
        let medians: Vec<f64> = [1e3, 1e4, 1e5, 1e6]
            .iter()
            .map(|&n| {
                let model = CountingModel::new(n, 0.5, 1.0).unwrap();
                median(
                    (0..200u64)
                        .map(|seed| {
                            let psi = random_pure_state(4, 9000 + seed).unwrap();
                            let c = simulate_counts(&psi.density(), &proj, &model, seed).unwrap();
                            let out = mle_reconstruct(&c, &proj, &MleOptions::default()).unwrap();
                            1.0 - pure_fidelity(&out.rho, &psi).unwrap()
                        })
                        .collect(),
                )
            })
            .collect();
        assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
    }

    #[test]
    fn eta_of_ideal_mubs_is_sqrt5() {
        assert_abs_diff_eq!(
            eta(&ideal_projectors()).unwrap(),
            5f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn eta_ignores_duplication() {
        let proj = random_projectors(3);
        let doubled: Vec<_> = proj.iter().chain(&proj).cloned().collect();
        assert_abs_diff_eq!(eta(&doubled).unwrap(), eta(&proj).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn eta_rejects_incomplete_sets() {
        let proj = ideal_projectors();
        assert!(matches!(eta(&proj[..15]), Err(Error::InfiniteConditioning)));
        let first_basis: Vec<_> = proj[..4].iter().cycle().take(20).cloned().collect();
        assert!(matches!(
            eta(&first_basis),
            Err(Error::InfiniteConditioning)
        ));
    }

    #[test]
    fn duality_of_detector_and_state_tomography() {
        let inputs = build_mub_d4().elements();
        let truth = random_projectors(31);
        let p = ProbabilityMatrix::predicted(&inputs, &truth).unwrap();
        let recovered = detector_tomography(&p, &inputs).unwrap().projectors;
        let inverter = LinearInverter::new(&recovered).unwrap();
        for seed in 0..20 {
            let psi = random_pure_state(4, 700 + seed).unwrap();
            let est = inverter
                .reconstruct(&exact(&psi.density(), &truth))
                .unwrap();
            assert!(pure_fidelity(&est, &psi).unwrap() >= 1.0 - 1e-6);
        }
    }

    fn random_unitary(seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = CMatrix::from_fn(4, 4, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        m.qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn noiseless_linear_inversion_is_exact(seed in any::<u64>(), pseed in 0u64..1000) {
            let proj = random_projectors(pseed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // random mixed state from a Ginibre matrix
            let g = CMatrix::from_fn(4, 4, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let rho = DensityMatrix::new(normalize(&g * g.adjoint())).unwrap();
            let est = linear_inversion(&exact(&rho, &proj), &proj).unwrap();
            prop_assert!(fidelity(&est, &rho).unwrap() >= 1.0 - 1e-8);
        }

        #[test]
        fn eta_is_rotation_invariant(seed in any::<u64>(), pseed in 0u64..1000) {
            let proj = random_projectors(pseed);
            let u = random_unitary(seed);
            let rotated: Vec<_> = proj
                .iter()
                .map(|p| {
                    let v = &u * p.direction().to_vector();
                    Projector::new(p.efficiency(), PureState::normalized(v.iter().copied().collect()).unwrap())
                        .unwrap()
                })
                .collect();
            let a = eta(&proj).unwrap();
            let b = eta(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-8 * a);
        }

        #[test]
        fn mle_likelihood_never_decreases(seed in any::<u64>()) {
            let proj = random_projectors(seed % 50);
            let model = CountingModel::new(1e3, 0.5, 1.0).unwrap();
            let psi = random_pure_state(4, seed).unwrap();
            let c = simulate_counts(&psi.density(), &proj, &model, seed).unwrap();
            let out = mle_reconstruct(&c, &proj, &MleOptions::default()).unwrap();
            prop_assert!(out.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

//! Deformable mirror model.
//!
//! 32 actuators sit on a 6×6 lattice with the corners removed. Each actuator
//! pushes the continuous membrane with a Gaussian influence function, so
//! neighbouring pixels are coupled. The reflected field picks up a phase of
//! `4π s / λ` for a surface deflection `s`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{Field, Grid, ModeBasis};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::qlin::PureState;
use crate::tomo::Projector;

pub const LATTICE: usize = 6;
pub const NUM_ACTUATORS: usize = 32;
pub const DEFAULT_PITCH: f64 = 302.5e-6;
pub const DEFAULT_SIGMA_RATIO: f64 = 0.6;
pub const DEFAULT_MAX_STROKE: f64 = 1.75e-6;

/// Actuator centers on a square lattice with the four corners missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLayout {
    pitch: f64,
    /// (row, col) lattice cell of each actuator, row-major, row along y.
    cells: Vec<(usize, usize)>,
}

impl ActuatorLayout {
    pub fn new(pitch: f64) -> Result<Self> {
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "actuator pitch must be positive, got {pitch}"
            )));
        }
        let last = LATTICE - 1;
        let cells = (0..LATTICE)
            .flat_map(|r| (0..LATTICE).map(move |c| (r, c)))
            .filter(|&(r, c)| !((r == 0 || r == last) && (c == 0 || c == last)))
            .collect();
        Ok(Self { pitch, cells })
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// Center offset of lattice index `i` along one axis.
    pub fn lattice_coord(&self, i: usize) -> f64 {
        (i as f64 - (LATTICE as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .map(|&(r, c)| (self.lattice_coord(c), self.lattice_coord(r)))
            .collect()
    }

    /// Lattice cell containing `(x, y)`, if inside the 6×6 footprint.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = LATTICE as f64 / 2.0;
        let c = (x / self.pitch + half).floor();
        let r = (y / self.pitch + half).floor();
        let range = 0.0..LATTICE as f64;
        (range.contains(&c) && range.contains(&r)).then_some((r as usize, c as usize))
    }

    /// Actuator index of a lattice cell; `None` for the dead corners.
    pub fn actuator_index(&self, cell: (usize, usize)) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    /// The layout maps onto itself under a 90° rotation.
    pub fn is_four_fold_symmetric(&self) -> bool {
        let last = LATTICE - 1;
        self.cells
            .iter()
            .all(|&(r, c)| self.cells.contains(&(c, last - r)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InfluenceModel {
    /// `s(r) = exp(-r² / 2σ²)` per unit stroke.
    Gaussian { sigma: f64 },
}

impl InfluenceModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "influence width must be positive, got {sigma}"
            )));
        }
        Ok(Self::Gaussian { sigma })
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma,
        }
    }

    pub fn response(&self, dx: f64, dy: f64) -> f64 {
        match *self {
            Self::Gaussian { sigma } => (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// Response one pitch away relative to the response at the actuator.
    pub fn coupling_ratio(&self, pitch: f64) -> f64 {
        self.response(pitch, 0.0) / self.response(0.0, 0.0)
    }
}

/// Actuator strokes in meters of surface deflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorState {
    strokes: Vec<f64>,
}

impl MirrorState {
    pub fn new(strokes: Vec<f64>, max_stroke: f64) -> Result<Self> {
        if let Some(&bad) = strokes
            .iter()
            .find(|s| !s.is_finite() || s.abs() > max_stroke)
        {
            return Err(Error::OutOfRange {
                what: "actuator stroke",
                value: bad,
            });
        }
        Ok(Self { strokes })
    }

    pub fn flat(n: usize) -> Self {
        Self {
            strokes: vec![0.0; n],
        }
    }

    pub fn strokes(&self) -> &[f64] {
        &self.strokes
    }

    /// Sum of two states (no stroke limit applied).
    pub fn superpose(&self, other: &MirrorState) -> MirrorState {
        MirrorState {
            strokes: self
                .strokes
                .iter()
                .zip(&other.strokes)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Layout, membrane response and stroke limit bundled together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorModel {
    pub layout: ActuatorLayout,
    pub influence: InfluenceModel,
    pub max_stroke: f64,
}

impl MirrorModel {
    pub fn new(pitch: f64, sigma_ratio: f64, max_stroke: f64) -> Result<Self> {
        if !(max_stroke > 0.0 && max_stroke.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "max stroke must be positive, got {max_stroke}"
            )));
        }
        Ok(Self {
            layout: ActuatorLayout::new(pitch)?,
            influence: InfluenceModel::gaussian(sigma_ratio * pitch)?,
            max_stroke,
        })
    }
}

impl Default for MirrorModel {
    fn default() -> Self {
        Self::new(DEFAULT_PITCH, DEFAULT_SIGMA_RATIO, DEFAULT_MAX_STROKE)
            .expect("default mirror parameters are valid")
    }
}

/// Surface deflection in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    grid: Grid,
    heights: Vec<f64>,
}

impl Surface {
    pub fn new(grid: Grid, heights: Vec<f64>) -> Result<Self> {
        if heights.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: heights.len(),
            });
        }
        Ok(Self { grid, heights })
    }

    pub fn uniform(grid: Grid, h: f64) -> Self {
        Self {
            grid,
            heights: vec![h; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Height at the grid point nearest to `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let n = self.grid.n();
        let idx = |v: f64| {
            let i = (v / self.grid.spacing() + (n as f64 - 1.0) / 2.0).round();
            i.clamp(0.0, n as f64 - 1.0) as usize
        };
        self.heights[idx(y) * n + idx(x)]
    }
}

pub fn surface_from_strokes(
    state: &MirrorState,
    influence: &InfluenceModel,
    layout: &ActuatorLayout,
    grid: &Grid,
) -> Result<Surface> {
    if state.strokes.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            found: state.strokes.len(),
        });
    }
    let positions = layout.positions();
    let heights = grid
        .points()
        .map(|(x, y)| {
            positions
                .iter()
                .zip(&state.strokes)
                .map(|(&(ax, ay), &s)| s * influence.response(x - ax, y - ay))
                .sum()
        })
        .collect();
    Ok(Surface {
        grid: *grid,
        heights,
    })
}

/// Phase screen in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    grid: Grid,
    phase: Vec<f64>,
}

impl PhaseMask {
    pub fn new(grid: Grid, phase: Vec<f64>) -> Result<Self> {
        if phase.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: phase.len(),
            });
        }
        if phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("phase mask must be finite".into()));
        }
        Ok(Self { grid, phase })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::uniform(grid, 0.0)
    }

    pub fn uniform(grid: Grid, phi: f64) -> Self {
        Self {
            grid,
            phase: vec![phi; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    /// Number of distinct phase values (exact comparison).
    pub fn distinct_values(&self) -> usize {
        let mut v = self.phase.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    }
}

/// Double-pass reflection: `φ = 4π s / λ`.
pub fn phase_from_surface(surface: &Surface, wavelength: f64) -> PhaseMask {
    let k = 4.0 * PI / wavelength;
    PhaseMask {
        grid: surface.grid,
        phase: surface.heights.iter().map(|h| k * h).collect(),
    }
}

pub fn apply_mask(field: &Field, mask: &PhaseMask) -> Result<Field> {
    if field.grid() != &mask.grid {
        return Err(Error::GridMismatch);
    }
    let mut out = field.clone();
    out.data_mut()
        .iter_mut()
        .zip(&mask.phase)
        .for_each(|(z, &p)| *z *= Complex64::from_polar(1.0, p));
    Ok(out)
}

/// Mirror action restricted to the four-mode subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    /// `M[k][l] = <HG_k| exp(iφ) |HG_l>`
    pub matrix: Matrix4<Complex64>,
    /// `<Ψ00| exp(iφ) |HG_l>`
    pub fiber_row: [Complex64; 4],
}

impl TransferMatrix {
    pub fn singular_values(&self) -> Vec<f64> {
        self.matrix
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect()
    }

    /// Probability that `psi` is coupled into the fiber.
    pub fn coupling(&self, psi: &PureState) -> Result<f64> {
        if psi.dim() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: psi.dim(),
            });
        }
        let amp: Complex64 = self
            .fiber_row
            .iter()
            .zip(psi.amplitudes())
            .map(|(f, a)| f * a)
            .sum();
        Ok(amp.norm_sqr())
    }

    /// The effective measurement operator `M† |Ψ00><Ψ00| M`, as efficiency and direction.
    pub fn projector(&self) -> Result<Projector> {
        Projector::from_unnormalized(self.fiber_row.iter().map(|z| z.conj()).collect())
    }
}

pub fn transfer_matrix(mask: &PhaseMask, basis: &ModeBasis) -> Result<TransferMatrix> {
    if &mask.grid != basis.grid() {
        return Err(Error::GridMismatch);
    }
    let area = basis.grid().cell_area();
    let rot: Vec<Complex64> = mask
        .phase
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect();
    let modes = basis.modes();
    let project = |bra: &Field, l: usize| -> Complex64 {
        bra.data()
            .iter()
            .zip(&rot)
            .zip(modes[l].data())
            .map(|((b, r), k)| b.conj() * r * k)
            .sum::<Complex64>()
            * area
    };
    let matrix = Matrix4::from_fn(|k, l| project(&modes[k], l));
    let fiber_row = std::array::from_fn(|l| project(basis.fiber(), l));
    Ok(TransferMatrix { matrix, fiber_row })
}

/// Exact phase conjugation of the target field (infinite size and resolution).
pub fn ideal_phase_mirror(target: &PureState, basis: &ModeBasis) -> Result<PhaseMask> {
    let field = basis.synthesize(target)?;
    Ok(PhaseMask {
        grid: *basis.grid(),
        phase: field.data().iter().map(|z| -z.arg()).collect(),
    })
}

/// Independent square pixels with the conjugate target phase sampled at each
/// pixel center. Dead corners and everything outside the footprint stay at 0.
pub fn pixelated_mirror(
    target: &PureState,
    layout: &ActuatorLayout,
    basis: &ModeBasis,
) -> Result<PhaseMask> {
    if target.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: target.dim(),
        });
    }
    let cell_phase: Vec<f64> = layout
        .cells()
        .iter()
        .map(|&(r, c)| {
            -basis
                .evaluate(target, layout.lattice_coord(c), layout.lattice_coord(r))
                .arg()
        })
        .collect();
    let phase = basis
        .grid()
        .points()
        .map(|(x, y)| {
            layout
                .cell_at(x, y)
                .and_then(|cell| layout.actuator_index(cell))
                .map_or(0.0, |k| cell_phase[k])
        })
        .collect();
    Ok(PhaseMask {
        grid: *basis.grid(),
        phase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// Evaluation budget of a single simplex run.
    pub max_evals: usize,
    /// Additional runs restarted from the best point with a smaller simplex.
    pub restarts: usize,
    /// Convergence threshold on the coupling spread across the simplex.
    pub ftol: f64,
    /// Convergence threshold on stroke spread, meters.
    pub xtol: f64,
    /// Samples per side of the grid the search runs on (same extent as the
    /// analysis grid). The final coupling is always re-evaluated on the full grid.
    pub work_n: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_evals: 6_000,
            restarts: 2,
            ftol: 1e-10,
            xtol: 1e-13,
            work_n: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedMirror {
    pub state: MirrorState,
    /// Coupling into the fiber on the full grid.
    pub coupling: f64,
    pub converged: bool,
    pub evals: usize,
    /// Best working-grid coupling after every simplex iteration, across restarts.
    pub history: Vec<f64>,
}

/// Gaussian influence profiles along x and y for one grid. The lattice makes
/// the surface separable: `h(x, y) = Σ_r gy_r(y) Σ_c s_rc gx_c(x)`.
#[derive(Debug, Clone)]
struct SeparableSurface {
    n: usize,
    /// profiles[i][ix]: influence of lattice line `i` at coordinate `ix`.
    profiles: Vec<Vec<f64>>,
}

impl SeparableSurface {
    fn new(layout: &ActuatorLayout, sigma: f64, grid: &Grid) -> Self {
        let coords = grid.coords();
        let profiles = (0..LATTICE)
            .map(|i| {
                let a = layout.lattice_coord(i);
                coords
                    .iter()
                    .map(|&x| (-(x - a) * (x - a) / (2.0 * sigma * sigma)).exp())
                    .collect()
            })
            .collect();
        Self {
            n: grid.n(),
            profiles,
        }
    }

    fn heights(&self, layout: &ActuatorLayout, strokes: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut lattice = [[0.0f64; LATTICE]; LATTICE];
        for (&(r, c), &s) in layout.cells().iter().zip(strokes) {
            lattice[r][c] = s;
        }
        // rows[r][ix] = Σ_c s_rc gx_c(ix)
        let mut rows = vec![0.0; LATTICE * n];
        for (r, line) in lattice.iter().enumerate() {
            for (c, &s) in line.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                rows[r * n..(r + 1) * n]
                    .iter_mut()
                    .zip(&self.profiles[c])
                    .for_each(|(v, g)| *v += s * g);
            }
        }
        for iy in 0..n {
            let out_row = &mut out[iy * n..(iy + 1) * n];
            out_row.fill(0.0);
            for r in 0..LATTICE {
                let g = self.profiles[r][iy];
                if g < 1e-300 {
                    continue;
                }
                out_row
                    .iter_mut()
                    .zip(&rows[r * n..(r + 1) * n])
                    .for_each(|(v, a)| *v += g * a);
            }
        }
    }
}

/// Coupling `|Σ_p w_p exp(i k h_p)|²` with `w = conj(Ψ00) · field · dA` precomputed.
struct CouplingObjective<'s> {
    surface: &'s SeparableSurface,
    layout: &'s ActuatorLayout,
    weights: Vec<Complex64>,
    wavenumber: f64,
    scratch: Vec<f64>,
}

impl<'s> CouplingObjective<'s> {
    fn new(
        surface: &'s SeparableSurface,
        layout: &'s ActuatorLayout,
        basis: &ModeBasis,
        target: &PureState,
    ) -> Result<Self> {
        let field = basis.synthesize(target)?;
        let area = basis.grid().cell_area();
        let weights: Vec<Complex64> = basis
            .fiber()
            .data()
            .iter()
            .zip(field.data())
            .map(|(f, u)| f.conj() * u * area)
            .collect();
        Ok(Self {
            surface,
            layout,
            scratch: vec![0.0; weights.len()],
            weights,
            wavenumber: 4.0 * PI / basis.beam().wavelength(),
        })
    }

    fn eval(&mut self, strokes: &[f64]) -> f64 {
        self.surface
            .heights(self.layout, strokes, &mut self.scratch);
        let k = self.wavenumber;
        let amp: Complex64 = self
            .weights
            .iter()
            .zip(&self.scratch)
            .map(|(w, &h)| {
                let (s, c) = (k * h).sin_cos();
                w * Complex64::new(c, s)
            })
            .sum();
        amp.norm_sqr()
    }
}

/// Stroke optimizer with precomputed influence profiles.
#[derive(Debug, Clone)]
pub struct MirrorOptimizer<'a> {
    model: &'a MirrorModel,
    basis: &'a ModeBasis,
    full: SeparableSurface,
    wavenumber: f64,
}

impl<'a> MirrorOptimizer<'a> {
    pub fn new(model: &'a MirrorModel, basis: &'a ModeBasis) -> Self {
        Self {
            model,
            basis,
            full: SeparableSurface::new(&model.layout, model.influence.sigma(), basis.grid()),
            wavenumber: 4.0 * PI / basis.beam().wavelength(),
        }
    }

    fn clamp(&self, strokes: &[f64]) -> Vec<f64> {
        let m = self.model.max_stroke;
        strokes.iter().map(|s| s.clamp(-m, m)).collect()
    }

    /// Stroke vector whose surface matches the conjugate target phase at the actuator centers.
    pub fn initial_strokes(&self, target: &PureState) -> Result<Vec<f64>> {
        let layout = &self.model.layout;
        let positions = layout.positions();
        let n = positions.len();
        let desired = DVector::from_iterator(
            n,
            positions
                .iter()
                .map(|&(x, y)| -self.basis.evaluate(target, x, y).arg() / self.wavenumber),
        );
        let interaction = DMatrix::from_fn(n, n, |i, j| {
            let (xi, yi) = positions[i];
            let (xj, yj) = positions[j];
            self.model.influence.response(xi - xj, yi - yj)
        });
        let strokes = interaction
            .lu()
            .solve(&desired)
            .ok_or(Error::DegenerateInput(
                "singular actuator interaction matrix",
            ))?;
        Ok(self.clamp(strokes.as_slice()))
    }

    /// Full-grid coupling of `target` for the given strokes (clamped to the stroke limit).
    pub fn coupling(&self, target: &PureState, strokes: &[f64]) -> Result<f64> {
        if strokes.len() != self.model.layout.len() {
            return Err(Error::DimensionMismatch {
                expected: self.model.layout.len(),
                found: strokes.len(),
            });
        }
        let mut obj = CouplingObjective::new(&self.full, &self.model.layout, self.basis, target)?;
        Ok(obj.eval(&self.clamp(strokes)))
    }

    pub fn optimize(
        &self,
        target: &PureState,
        opts: &OptimizerOptions,
        seed: u64,
    ) -> Result<OptimizedMirror> {
        let grid = self.basis.grid();
        let work_basis;
        let work_surface;
        let (basis, surface) = if opts.work_n > 0 && opts.work_n < grid.n() {
            work_basis =
                ModeBasis::new(*self.basis.beam(), Grid::new(opts.work_n, grid.extent())?)?;
            work_surface = SeparableSurface::new(
                &self.model.layout,
                self.model.influence.sigma(),
                work_basis.grid(),
            );
            (&work_basis, &work_surface)
        } else {
            (self.basis, &self.full)
        };
        let mut obj = CouplingObjective::new(surface, &self.model.layout, basis, target)?;
        let mut coupling = |s: &[f64]| obj.eval(&self.clamp(s));

        let n = self.model.layout.len();
        let flat = vec![0.0; n];
        let init = self.initial_strokes(target)?;
        let mut best = if coupling(&init) >= coupling(&flat) {
            init
        } else {
            flat.clone()
        };
        let mut best_value = coupling(&best);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut step = self.basis.beam().wavelength() / 16.0;
        let mut history = Vec::new();
        let mut evals = 0;
        let mut converged = false;
        let nm = NelderMeadOptions {
            max_evals: opts.max_evals,
            ftol: opts.ftol,
            xtol: opts.xtol,
        };
        for _ in 0..=opts.restarts {
            let steps: Vec<f64> = (0..n)
                .map(|_| if rng.random::<bool>() { step } else { -step })
                .collect();
            let run = nelder_mead(|s| -coupling(s), &best, &steps, &nm);
            evals += run.evals;
            history.extend(run.history.iter().map(|v| -v));
            converged = run.converged;
            let gain = -run.value - best_value;
            if gain >= 0.0 {
                best = self.clamp(&run.x);
                best_value = -run.value;
            }
            if run.converged && gain <= opts.ftol {
                break;
            }
            step /= 4.0;
        }

        // the flat mirror stays a valid fallback on the full grid
        let mut full = CouplingObjective::new(&self.full, &self.model.layout, self.basis, target)?;
        let mut final_value = full.eval(&best);
        let flat_value = full.eval(&flat);
        if flat_value > final_value {
            best = flat;
            final_value = flat_value;
        }
        Ok(OptimizedMirror {
            state: MirrorState::new(best, self.model.max_stroke)?,
            coupling: final_value,
            converged,
            evals,
            history,
        })
    }

    /// Phase mask of a mirror state on the analysis grid.
    pub fn mask(&self, state: &MirrorState) -> Result<PhaseMask> {
        if state.strokes.len() != self.model.layout.len() {
            return Err(Error::DimensionMismatch {
                expected: self.model.layout.len(),
                found: state.strokes.len(),
            });
        }
        let mut h = vec![0.0; self.basis.grid().len()];
        self.full
            .heights(&self.model.layout, &state.strokes, &mut h);
        Ok(PhaseMask {
            grid: *self.basis.grid(),
            phase: h.iter().map(|v| v * self.wavenumber).collect(),
        })
    }
}

/// Strokes maximizing `|<Ψ00| M(strokes) |target>|²` by local simplex search.
pub fn optimize_mirror(
    target: &PureState,
    model: &MirrorModel,
    basis: &ModeBasis,
    opts: &OptimizerOptions,
    seed: u64,
) -> Result<OptimizedMirror> {
    MirrorOptimizer::new(model, basis).optimize(target, opts, seed)
}

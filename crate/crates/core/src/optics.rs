//! Sampled scalar fields at the mirror plane.
//!
//! The beam waist sits in the evaluation plane, so every mode is the real
//! Hermite-Gaussian waist profile. Fields are stored row-major with the row
//! index running along `y` and the column index along `x`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlin::PureState;

/// Mode order of the four basis fields.
pub const HG_ORDER: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    wavelength: f64,
    waist: f64,
}

impl BeamParams {
    pub fn new(wavelength: f64, waist: f64) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if !(waist > 0.0 && waist.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "waist must be positive, got {waist}"
            )));
        }
        Ok(Self { wavelength, waist })
    }

    /// 780 nm light with a 0.9 mm waist.
    pub fn reference() -> Self {
        Self {
            wavelength: 780e-9,
            waist: 0.9e-3,
        }
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn rayleigh_range(&self) -> f64 {
        rayleigh_range(self)
    }
}

/// `π w0² / λ`
pub fn rayleigh_range(beam: &BeamParams) -> f64 {
    PI * beam.waist * beam.waist / beam.wavelength
}

/// Gouy phase `(m + n + 1) atan(z / z_R)` of an HG mode of total order `m + n`.
pub fn gouy_phase(z: f64, beam: &BeamParams, mode_order: usize) -> f64 {
    (mode_order as f64 + 1.0) * (z / rayleigh_range(beam)).atan()
}

/// Square, cell-centered sampling of the transverse plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    extent: f64,
}

impl Grid {
    pub const MIN_SAMPLES: usize = 16;

    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n < Self::MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least {} samples per side, got {n}",
                Self::MIN_SAMPLES
            )));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid extent must be positive, got {extent}"
            )));
        }
        Ok(Self { n, extent })
    }

    /// 256 samples over six waists.
    pub fn reference(beam: &BeamParams) -> Self {
        Self {
            n: 256,
            extent: 6.0 * beam.waist,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing() * self.spacing()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Coordinate of sample `i` along either axis; the grid is symmetric about 0.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Iterates `(x, y)` in storage order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = self.coords();
        (0..self.n).flat_map(move |iy| {
            let y = c[iy];
            let row = c.clone();
            (0..self.n).map(move |ix| (row[ix], y))
        })
    }

    fn check_resolution(&self, beam: &BeamParams) -> Result<()> {
        let limit = beam.waist / 4.0;
        if self.spacing() > limit {
            return Err(Error::GridTooCoarse {
                spacing: self.spacing(),
                limit,
            });
        }
        if self.extent < 6.0 * beam.waist * (1.0 - 1e-12) {
            log::warn!(
                "grid extent {:.3e} m covers less than six waists ({:.3e} m)",
                self.extent,
                6.0 * beam.waist
            );
        }
        Ok(())
    }
}

/// Complex amplitude samples on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    data: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Grid, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Discrete squared L² norm `Σ |u|² dA`.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    pub fn scaled(&self, s: Complex64) -> Field {
        Field {
            grid: self.grid,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self + s * other`
    pub fn add_scaled(&mut self, other: &Field, s: Complex64) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b * s);
        Ok(())
    }
}

/// Discrete inner product `Σ conj(a) b dA`.
pub fn overlap(a: &Field, b: &Field) -> Result<Complex64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    let s: Complex64 = a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum();
    Ok(s * a.grid.cell_area())
}

/// Physicists' Hermite polynomial `H_n(x)` via the three-term recurrence.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    match n {
        0 => h0,
        _ => {
            for k in 1..n {
                let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
                h0 = h1;
                h1 = h2;
            }
            h1
        }
    }
}

/// Continuum-normalized 1D HG profile at the waist.
pub fn hg_profile(m: usize, x: f64, waist: f64) -> f64 {
    let fact: f64 = (1..=m).map(|k| k as f64).product();
    let norm = (2.0 / PI).sqrt().sqrt() / (2f64.powi(m as i32) * fact * waist).sqrt();
    norm * hermite(m, 2f64.sqrt() * x / waist) * (-(x * x) / (waist * waist)).exp()
}

/// `HG_mn` sampled on the grid and normalized discretely.
pub fn hg_mode(m: usize, n: usize, beam: &BeamParams, grid: &Grid) -> Result<Field> {
    grid.check_resolution(beam)?;
    let c = grid.coords();
    let ux: Vec<f64> = c.iter().map(|&x| hg_profile(m, x, beam.waist)).collect();
    let uy: Vec<f64> = c.iter().map(|&y| hg_profile(n, y, beam.waist)).collect();
    let mut data = Vec::with_capacity(grid.len());
    for &vy in &uy {
        for &vx in &ux {
            data.push(Complex64::new(vx * vy, 0.0));
        }
    }
    let mut f = Field { grid: *grid, data };
    let norm = f.norm_sqr().sqrt();
    f.data.iter_mut().for_each(|z| *z /= norm);
    Ok(f)
}

/// Back-propagated fundamental mode of the collection fiber. Mode matched to the beam.
pub fn fiber_mode(beam: &BeamParams, grid: &Grid) -> Result<Field> {
    hg_mode(0, 0, beam, grid)
}

/// The four computational-basis fields plus the fiber mode, sampled once.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    beam: BeamParams,
    grid: Grid,
    modes: [Field; 4],
    fiber: Field,
}

impl ModeBasis {
    pub fn new(beam: BeamParams, grid: Grid) -> Result<Self> {
        let modes = [
            hg_mode(HG_ORDER[0].0, HG_ORDER[0].1, &beam, &grid)?,
            hg_mode(HG_ORDER[1].0, HG_ORDER[1].1, &beam, &grid)?,
            hg_mode(HG_ORDER[2].0, HG_ORDER[2].1, &beam, &grid)?,
            hg_mode(HG_ORDER[3].0, HG_ORDER[3].1, &beam, &grid)?,
        ];
        let fiber = fiber_mode(&beam, &grid)?;
        Ok(Self {
            beam,
            grid,
            modes,
            fiber,
        })
    }

    pub fn beam(&self) -> &BeamParams {
        &self.beam
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn modes(&self) -> &[Field; 4] {
        &self.modes
    }

    pub fn fiber(&self) -> &Field {
        &self.fiber
    }

    /// `Σ a_k HG_k`
    pub fn synthesize(&self, psi: &PureState) -> Result<Field> {
        if psi.dim() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: psi.dim(),
            });
        }
        let mut f = Field::zeros(self.grid);
        for (mode, &a) in self.modes.iter().zip(psi.amplitudes()) {
            f.add_scaled(mode, a)?;
        }
        Ok(f)
    }

    /// Continuum value of the synthesized field at an arbitrary point.
    pub fn evaluate(&self, psi: &PureState, x: f64, y: f64) -> Complex64 {
        let w = self.beam.waist;
        HG_ORDER
            .iter()
            .zip(psi.amplitudes())
            .map(|(&(m, n), &a)| a * hg_profile(m, x, w) * hg_profile(n, y, w))
            .sum()
    }
}

/// Field of a d = 4 state in the HG basis.
pub fn state_to_field(psi: &PureState, beam: &BeamParams, grid: &Grid) -> Result<Field> {
    ModeBasis::new(*beam, *grid)?.synthesize(psi)
}

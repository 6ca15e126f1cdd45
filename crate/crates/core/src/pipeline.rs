//! End-to-end virtual experiment: synthesis, mirror optimization, detector
//! tomography and state tomography of MUB and random inputs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::{
    ideal_phase_mirror, pixelated_mirror, transfer_matrix, MirrorModel, MirrorOptimizer,
    MirrorState, OptimizedMirror, OptimizerOptions, DEFAULT_MAX_STROKE, DEFAULT_PITCH,
    DEFAULT_SIGMA_RATIO,
};
use crate::optics::{BeamParams, Grid, ModeBasis};
use crate::protocol::{build_mub_d4, MubSet};
use crate::qlin::{pure_fidelity, random_pure_state, DensityMatrix, PureState};
use crate::tomo::{
    detector_tomography, eta, mle_reconstruct, simulate_counts, CountingModel, CountsRecord,
    Estimator, LinearInverter, MleOptions, ProbabilityMatrix, Projector, StateCounts,
};

/// Mixes a base seed with a stream tag and an index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod stream {
    pub const MIRROR: u64 = 1;
    pub const DETECTOR_COUNTS: u64 = 2;
    pub const MUB_COUNTS: u64 = 3;
    pub const RANDOM_STATES: u64 = 4;
    pub const RANDOM_COUNTS: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    /// meters
    pub wavelength: f64,
    /// meters
    pub waist: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        let b = BeamParams::reference();
        Self {
            wavelength: b.wavelength(),
            waist: b.waist(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Side length in meters; six waists when absent.
    pub extent: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: 256,
            extent: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorConfig {
    /// Actuator spacing, meters.
    pub pitch: f64,
    /// Influence width in units of the pitch.
    pub sigma_ratio: f64,
    /// meters
    pub max_stroke: f64,
    pub optimizer: OptimizerOptions,
}

impl Default for MirrorConfig {
    fn default() -> Self {
        Self {
            pitch: DEFAULT_PITCH,
            sigma_ratio: DEFAULT_SIGMA_RATIO,
            max_stroke: DEFAULT_MAX_STROKE,
            optimizer: OptimizerOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingConfig {
    /// Mean photons per setting.
    pub photons: f64,
    pub split_ratio: f64,
    pub detector_efficiency: f64,
    /// Use exact probabilities instead of simulated counts.
    pub noiseless: bool,
}

impl Default for CountingConfig {
    fn default() -> Self {
        Self {
            photons: 1e6,
            split_ratio: 0.5,
            detector_efficiency: 1.0,
            noiseless: false,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub random_states: usize,
    pub estimator: Estimator,
    pub beam: BeamConfig,
    pub grid: GridConfig,
    pub mirror: MirrorConfig,
    pub counting: CountingConfig,
    pub mle: MleOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            random_states: 210,
            estimator: Estimator::Mle,
            beam: BeamConfig::default(),
            grid: GridConfig::default(),
            mirror: MirrorConfig::default(),
            counting: CountingConfig::default(),
            mle: MleOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn beam_params(&self) -> Result<BeamParams> {
        BeamParams::new(self.beam.wavelength, self.beam.waist)
    }

    pub fn grid_spec(&self) -> Result<Grid> {
        let extent = self.grid.extent.unwrap_or(6.0 * self.beam.waist);
        Grid::new(self.grid.n, extent)
    }

    pub fn mirror_model(&self) -> Result<MirrorModel> {
        MirrorModel::new(
            self.mirror.pitch,
            self.mirror.sigma_ratio,
            self.mirror.max_stroke,
        )
    }

    pub fn counting_model(&self) -> Result<CountingModel> {
        CountingModel::new(
            self.counting.photons,
            self.counting.split_ratio,
            self.counting.detector_efficiency,
        )
    }

    /// Checks every physical quantity without building anything expensive.
    pub fn validate(&self) -> Result<()> {
        self.beam_params()?;
        self.grid_spec()?;
        self.mirror_model()?;
        self.counting_model()?;
        if !(self.mle.damping > 0.0 && self.mle.damping <= 1.0) {
            return Err(Error::OutOfRange {
                what: "MLE damping",
                value: self.mle.damping,
            });
        }
        if self.mirror.optimizer.max_evals == 0 {
            return Err(Error::InvalidParameter(
                "optimizer needs a positive evaluation budget".into(),
            ));
        }
        Ok(())
    }
}

/// Which family of measurement operators to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Exact projectors onto the MUB elements.
    Ideal,
    /// Exact phase conjugation with an unlimited mirror.
    Inf,
    /// 6×6 independent square pixels.
    Pixel,
    /// Simulated membrane mirror with optimized strokes.
    Dm,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Ideal,
        Scenario::Inf,
        Scenario::Pixel,
        Scenario::Dm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ideal => "ideal",
            Scenario::Inf => "inf",
            Scenario::Pixel => "pixel",
            Scenario::Dm => "dm",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario `{s}`")))
    }
}

/// Shared optical setup: MUB targets, mode basis and mirror model.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    mubs: MubSet,
    basis: ModeBasis,
    model: MirrorModel,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate().map_err(|e| e.in_stage("config"))?;
        let beam = config.beam_params()?;
        let grid = config.grid_spec()?;
        let basis = ModeBasis::new(beam, grid).map_err(|e| e.in_stage("modes"))?;
        Ok(Self {
            model: config.mirror_model()?,
            mubs: build_mub_d4(),
            basis,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn mubs(&self) -> &MubSet {
        &self.mubs
    }

    pub fn basis(&self) -> &ModeBasis {
        &self.basis
    }

    pub fn model(&self) -> &MirrorModel {
        &self.model
    }

    /// Optimizes one mirror shape per MUB element (in parallel, per-target seeds).
    pub fn optimize_mirrors(&self) -> Result<Vec<OptimizedMirror>> {
        let optimizer = MirrorOptimizer::new(&self.model, &self.basis);
        let opts = self.config.mirror.optimizer;
        let targets = self.mubs.elements();
        targets
            .par_iter()
            .enumerate()
            .map(|(j, t)| {
                let seed = derive_seed(self.config.seed, stream::MIRROR, j as u64);
                let out = optimizer.optimize(t, &opts, seed)?;
                log::debug!(
                    "mirror {j}: coupling {:.6}, {} evals, converged {}",
                    out.coupling,
                    out.evals,
                    out.converged
                );
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("mirror optimization"))
    }

    /// Measurement operators of the mirrors given by `states`.
    pub fn mirror_projectors(&self, states: &[MirrorState]) -> Result<Vec<Projector>> {
        let optimizer = MirrorOptimizer::new(&self.model, &self.basis);
        states
            .par_iter()
            .map(|s| transfer_matrix(&optimizer.mask(s)?, &self.basis)?.projector())
            .collect()
    }

    /// Measurement operators for a scenario. `Dm` runs the optimizer.
    pub fn projectors(&self, scenario: Scenario) -> Result<Vec<Projector>> {
        let targets = self.mubs.elements();
        let stage = scenario.name();
        let out = match scenario {
            Scenario::Ideal => Ok(targets.into_iter().map(Projector::ideal).collect()),
            Scenario::Inf => targets
                .par_iter()
                .map(|t| {
                    transfer_matrix(&ideal_phase_mirror(t, &self.basis)?, &self.basis)?.projector()
                })
                .collect(),
            Scenario::Pixel => targets
                .par_iter()
                .map(|t| {
                    let mask = pixelated_mirror(t, &self.model.layout, &self.basis)?;
                    transfer_matrix(&mask, &self.basis)?.projector()
                })
                .collect(),
            Scenario::Dm => {
                let states: Vec<MirrorState> = self
                    .optimize_mirrors()?
                    .into_iter()
                    .map(|m| m.state)
                    .collect();
                self.mirror_projectors(&states)
            }
        };
        out.map_err(|e| e.in_stage(stage))
    }

    fn counting(&self) -> Result<CountingModel> {
        self.config.counting_model()
    }

    /// Detector tomography of `truth` with the MUB elements as probe states.
    /// Returns the measured probability matrix, the counts (empty when noiseless)
    /// and the calibration.
    pub fn calibrate(
        &self,
        truth: &[Projector],
    ) -> Result<(
        ProbabilityMatrix,
        CountsRecord,
        crate::tomo::DetectorCalibration,
    )> {
        let inputs = self.mubs.elements();
        let (matrix, record) = if self.config.counting.noiseless {
            (
                ProbabilityMatrix::predicted(&inputs, truth)?,
                CountsRecord { rows: Vec::new() },
            )
        } else {
            let model = self.counting()?;
            let rows = inputs
                .par_iter()
                .enumerate()
                .map(|(i, phi)| {
                    let seed = derive_seed(self.config.seed, stream::DETECTOR_COUNTS, i as u64);
                    simulate_counts(&phi.density(), truth, &model, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let record = CountsRecord { rows };
            (ProbabilityMatrix::from_counts(&record)?, record)
        };
        let cal = detector_tomography(&matrix, &inputs)?;
        Ok((matrix, record, cal))
    }

    /// Reconstructs each state from data taken with `truth` and analysed with `model_projectors`.
    /// Returns the estimates and their fidelities with the inputs.
    pub fn state_tomography(
        &self,
        states: &[PureState],
        truth: &[Projector],
        model_projectors: &[Projector],
        stream_tag: u64,
    ) -> Result<Vec<(DensityMatrix, f64)>> {
        let inverter = LinearInverter::new(model_projectors)?;
        let model = self.counting()?;
        states
            .par_iter()
            .enumerate()
            .map(|(k, psi)| {
                let rho = psi.density();
                let est = if self.config.counting.noiseless {
                    let p = truth
                        .iter()
                        .map(|pr| crate::tomo::predicted_probability(&rho, pr))
                        .collect::<Result<Vec<_>>>()?;
                    inverter.reconstruct(&p)?
                } else {
                    let seed = derive_seed(self.config.seed, stream_tag, k as u64);
                    let counts = simulate_counts(&rho, truth, &model, seed)?;
                    self.estimate(&counts, model_projectors, &inverter)?
                };
                let f = pure_fidelity(&est, psi)?;
                Ok((est, f))
            })
            .collect()
    }

    fn estimate(
        &self,
        counts: &StateCounts,
        projectors: &[Projector],
        inverter: &LinearInverter,
    ) -> Result<DensityMatrix> {
        match self.config.estimator {
            Estimator::Mle => {
                let out = mle_reconstruct(counts, projectors, &self.config.mle)?;
                if !out.converged {
                    log::warn!(
                        "MLE stopped after {} iterations without converging",
                        out.iterations
                    );
                }
                Ok(out.rho)
            }
            Estimator::Linear => inverter.reconstruct(&counts.estimated_probabilities()?),
        }
    }

    /// Haar-random test states of the run.
    pub fn random_states(&self) -> Result<Vec<PureState>> {
        (0..self.config.random_states)
            .map(|k| {
                random_pure_state(
                    4,
                    derive_seed(self.config.seed, stream::RANDOM_STATES, k as u64),
                )
            })
            .collect()
    }
}

/// Width-0.01 bins over [0.9, 1.0] plus everything below 0.9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Lower edge of every regular bin.
    pub lower_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
}

impl Histogram {
    pub const LOW: f64 = 0.9;
    pub const WIDTH: f64 = 0.01;
    pub const BINS: usize = 10;

    pub fn from_fidelities(values: &[f64]) -> Self {
        let mut counts = vec![0; Self::BINS];
        let mut underflow = 0;
        for &f in values {
            if f < Self::LOW {
                underflow += 1;
            } else {
                // rounding keeps e.g. 0.93 in the bin starting at 0.93
                let k = ((f - Self::LOW) / Self::WIDTH + 1e-9).floor() as usize;
                counts[k.min(Self::BINS - 1)] += 1;
            }
        }
        Self {
            lower_edges: (0..Self::BINS).map(|k| (90 + k) as f64 / 100.0).collect(),
            counts,
            underflow,
        }
    }

    pub fn total(&self) -> usize {
        self.underflow + self.counts.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityStats {
    pub mean: f64,
    pub min: f64,
    pub count: usize,
}

impl FidelityStats {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = if count == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / count as f64
        };
        Self {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    pub ideal: f64,
    pub inf: f64,
    pub pixel: f64,
    /// From the simulated mirror's actual operators.
    pub dm: f64,
    /// From the operators recovered by detector tomography.
    pub dm_recovered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorSummary {
    /// Fiber coupling of each MUB target with its own optimized mirror.
    pub coupling: Vec<f64>,
    pub converged: Vec<bool>,
    pub strokes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub ideal_matrix: ProbabilityMatrix,
    pub inf_matrix: ProbabilityMatrix,
    /// As measured (reference-normalized counts, or exact when noiseless).
    pub dm_matrix: ProbabilityMatrix,
    pub recovered_projectors: Vec<Projector>,
    pub discarded_weight: Vec<f64>,
    pub eta: EtaReport,
    pub mirrors: MirrorSummary,
    pub mub_fidelities: Vec<f64>,
    pub random_fidelities: Vec<f64>,
    pub mub_summary: FidelityStats,
    pub random_summary: FidelityStats,
    pub histogram: Histogram,
}

/// Runs the whole virtual experiment. Deterministic for a given config.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunReport> {
    let exp = Experiment::new(config.clone())?;
    log::info!("optimizing 20 mirror shapes");
    let mirrors = exp.optimize_mirrors()?;
    run_with(&exp, &mirrors)
}

/// [`run_pipeline`] on an existing setup with already optimized mirrors.
pub fn run_with(exp: &Experiment, mirrors: &[OptimizedMirror]) -> Result<RunReport> {
    let inputs = exp.mubs().elements();
    if mirrors.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: mirrors.len(),
        }
        .in_stage("dm"));
    }
    let ideal = exp.projectors(Scenario::Ideal)?;
    let inf = exp.projectors(Scenario::Inf)?;
    let pixel = exp.projectors(Scenario::Pixel)?;
    let states: Vec<MirrorState> = mirrors.iter().map(|m| m.state.clone()).collect();
    let dm = exp
        .mirror_projectors(&states)
        .map_err(|e| e.in_stage("dm"))?;

    let matrices = (|| {
        Ok::<_, Error>((
            ProbabilityMatrix::predicted(&inputs, &ideal)?,
            ProbabilityMatrix::predicted(&inputs, &inf)?,
        ))
    })()
    .map_err(|e| e.in_stage("probabilities"))?;

    log::info!("detector tomography");
    let (dm_matrix, _, cal) = exp
        .calibrate(&dm)
        .map_err(|e| e.in_stage("detector tomography"))?;

    let eta_of = |p: &[Projector], stage| eta(p).map_err(|e: Error| e.in_stage(stage));
    let eta_report = EtaReport {
        ideal: eta_of(&ideal, "eta ideal")?,
        inf: eta_of(&inf, "eta inf")?,
        pixel: eta_of(&pixel, "eta pixel")?,
        dm: eta_of(&dm, "eta dm")?,
        dm_recovered: eta_of(&cal.projectors, "eta dm recovered")?,
    };

    log::info!("state tomography");
    let mub_fidelities: Vec<f64> = exp
        .state_tomography(&inputs, &dm, &cal.projectors, stream::MUB_COUNTS)
        .map_err(|e| e.in_stage("state tomography (MUB inputs)"))?
        .into_iter()
        .map(|r| r.1)
        .collect();
    let randoms = exp.random_states()?;
    let random_fidelities: Vec<f64> = exp
        .state_tomography(&randoms, &dm, &cal.projectors, stream::RANDOM_COUNTS)
        .map_err(|e| e.in_stage("state tomography (random inputs)"))?
        .into_iter()
        .map(|r| r.1)
        .collect();

    Ok(RunReport {
        seed: exp.config().seed,
        ideal_matrix: matrices.0,
        inf_matrix: matrices.1,
        dm_matrix,
        recovered_projectors: cal.projectors,
        discarded_weight: cal.discarded_weight,
        eta: eta_report,
        mirrors: MirrorSummary {
            coupling: mirrors.iter().map(|m| m.coupling).collect(),
            converged: mirrors.iter().map(|m| m.converged).collect(),
            strokes: states.iter().map(|s| s.strokes().to_vec()).collect(),
        },
        mub_summary: FidelityStats::of(&mub_fidelities),
        random_summary: FidelityStats::of(&random_fidelities),
        histogram: Histogram::from_fidelities(&random_fidelities),
        mub_fidelities,
        random_fidelities,
    })
}

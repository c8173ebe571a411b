//! Ensemble evolution of compiled programs.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::compile::{compile, CompileOptions, CompiledSequence};
use super::dsl::PulseSequence;
use crate::decoherence::{sample_segment_integrals, substream, NoiseCorrelation, NoisePreset};
use crate::error::{NvError, Result};
use crate::hamiltonian::SpinSystem;
use crate::spin::{c, zeros, CMatrix, CVector, DensityMatrix, DIMS_ELECTRON, DIMS_FULL};

/// Relative Rabi-amplitude error drawn once per shot and defect, `ε ~ N(0, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeJitter {
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McOptions {
    pub n_traj: usize,
    pub seed: u64,
    pub correlation: NoiseCorrelation,
    pub pulse_error: Option<AmplitudeJitter>,
    pub compile: CompileOptions,
}

impl McOptions {
    pub fn new(n_traj: usize, seed: u64) -> Self {
        McOptions {
            n_traj,
            seed,
            correlation: NoiseCorrelation::Independent,
            pulse_error: None,
            compile: CompileOptions::default(),
        }
    }
}

const CHUNK: usize = 128;

fn trajectory(
    seq: &PulseSequence,
    base: &CompiledSequence,
    system: &SpinSystem,
    noise: [&NoisePreset; 2],
    psi0: &CVector,
    opts: &McOptions,
    k: u64,
) -> Result<CVector> {
    let mut rng = substream(opts.seed, k);
    let durations = base.free_durations();
    let ia = sample_segment_integrals(noise[0], &durations, &mut rng);
    let ib = match opts.correlation {
        NoiseCorrelation::Independent => sample_segment_integrals(noise[1], &durations, &mut rng),
        NoiseCorrelation::Shared => ia.clone(),
    };
    let phases: Vec<[f64; 2]> = ia.iter().zip(&ib).map(|(a, b)| [*a, *b]).collect();
    match opts.pulse_error {
        Some(j) if j.sigma > 0.0 => {
            let ea: f64 = rng.sample(StandardNormal);
            let eb: f64 = rng.sample(StandardNormal);
            let mut co = opts.compile;
            co.angle_scale = [1.0 + j.sigma * ea, 1.0 + j.sigma * eb];
            compile(seq, system, &co)?.propagate(psi0, Some(&phases))
        }
        _ => base.propagate(psi0, Some(&phases)),
    }
}

/// Trajectory-averaged density matrix; reproducible for a given seed irrespective of thread count.
pub fn evolve_mc(
    seq: &PulseSequence,
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    initial: &CVector,
    opts: &McOptions,
) -> Result<DensityMatrix> {
    if opts.n_traj == 0 {
        return Err(NvError::InvalidArgument("need at least one trajectory".into()));
    }
    let base = compile(seq, system, &opts.compile)?;
    let dim = base.dim;
    let n_chunks = (opts.n_traj + CHUNK - 1) / CHUNK;
    let partial: Vec<Result<CMatrix>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut acc = zeros(dim);
            let end = ((ci + 1) * CHUNK).min(opts.n_traj);
            for k in ci * CHUNK..end {
                let psi = trajectory(seq, &base, system, [noise_a, noise_b], initial, opts, k as u64)?;
                acc += &psi * psi.adjoint();
            }
            Ok(acc)
        })
        .collect();
    let mut total = zeros(dim);
    for p in partial {
        total += p?;
    }
    total /= c(opts.n_traj as f64, 0.0);
    let dims: &[usize] = if base.full { &DIMS_FULL } else { &DIMS_ELECTRON };
    let herm = (&total + total.adjoint()) * c(0.5, 0.0);
    Ok(DensityMatrix::unchecked(herm, dims))
}

/// Noise-free evolution of a density matrix through a sequence.
pub fn apply_sequence(
    rho: &DensityMatrix,
    seq: &PulseSequence,
    system: &SpinSystem,
    opts: &CompileOptions,
) -> Result<DensityMatrix> {
    let prog = compile(seq, system, opts)?;
    if prog.dim != rho.dim() {
        return Err(NvError::Dimension(format!("program dim {} vs state dim {}", prog.dim, rho.dim())));
    }
    Ok(rho.evolve(&prog.unitary()))
}

//! Density-matrix tomography by linear inversion.
//!
//! Every probe is a real linear functional `Re Tr[E ρ]`:
//! joint populations, joint populations after a local π/2 pulse, or the 4δ cosine
//! coefficient of a collective phase scan after a local π-pulse prefix that moves the
//! probed coherence onto the `⟨−1−1|ρ|+1+1⟩` slot.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lifetime::{preparation, StateKind};
use super::readout::MeasurementModel;
use super::scan::ScanSettings;
use crate::decoherence::{
    coherence_factor, decoherence_envelope, substream, DephasingSpec, EnvelopeReference, Experiment, NoisePreset,
};
use crate::error::{NvError, Result};
use crate::fit::linear_least_squares;
use crate::hamiltonian::SpinSystem;
use crate::pulse::{
    compile, phi_dq_plus_target, Angle, CompileOptions, Defect, Phase, PulseOp, PulseSequence, SequenceItem, Target,
    Transition,
};
use crate::spin::{c, zeros, BasisLabel, CMatrix, DensityMatrix, Unitary, TWO_PI};

/// Pair of basis labels `(x, y)` naming the coherence `⟨x|ρ|y⟩`.
pub type Coherence = (BasisLabel, BasisLabel);

pub fn collective_slot() -> Coherence {
    (BasisLabel::electron(-1, -1), BasisLabel::electron(1, 1))
}

const PREFIX_TRANSITIONS: [Transition; 3] = [Transition::ZeroMinus, Transition::ZeroPlus, Transition::DoubleQuantum];

fn swap_level(ms: i8, tr: Transition) -> i8 {
    let (a, b) = match tr {
        Transition::ZeroPlus => (0, 1),
        Transition::ZeroMinus => (0, -1),
        Transition::DoubleQuantum => (1, -1),
        Transition::Nuclear => return ms,
    };
    if ms == a {
        b
    } else if ms == b {
        a
    } else {
        ms
    }
}

/// Shortest sequence of local π pulses taking `target` onto the collective slot.
pub fn tomography_plan(target: Coherence) -> Result<PulseSequence> {
    let (x, y) = target;
    if x.is_full() || y.is_full() {
        return Err(NvError::Dimension("tomography targets live in the 9-dim electron space".into()));
    }
    if x.ms_a == y.ms_a || x.ms_b == y.ms_b {
        return Err(NvError::Unreachable(format!(
            "({},{}) and ({},{}) share a level on one defect",
            x.ms_a, x.ms_b, y.ms_a, y.ms_b
        )));
    }
    let goal = collective_slot();
    let key = |x: BasisLabel, y: BasisLabel| (x.ms_a, x.ms_b, y.ms_a, y.ms_b);
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(key(x, y));
    queue.push_back((x, y, Vec::<PulseOp>::new()));
    while let Some((u, v, ops)) = queue.pop_front() {
        if (u, v) == goal {
            return Ok(PulseSequence::from_items(ops.into_iter().map(SequenceItem::Pulse).collect()));
        }
        for defect in [Defect::B, Defect::A] {
            for tr in PREFIX_TRANSITIONS {
                let step = |l: BasisLabel| match defect {
                    Defect::A => BasisLabel::electron(swap_level(l.ms_a, tr), l.ms_b),
                    Defect::B => BasisLabel::electron(l.ms_a, swap_level(l.ms_b, tr)),
                };
                let (nu, nv) = (step(u), step(v));
                if seen.insert(key(nu, nv)) {
                    let target = match defect {
                        Defect::A => Target::A,
                        Defect::B => Target::B,
                    };
                    let mut next = ops.clone();
                    next.push(PulseOp::new(Angle::Pi, target, tr, Phase::X));
                    queue.push_back((nu, nv, next));
                }
            }
        }
    }
    Err(NvError::Unreachable("no local π-pulse prefix found".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Probe {
    /// Joint population of one basis state.
    Population(usize),
    /// Joint population after a π/2 pulse on one transition of one defect.
    Local {
        defect: Defect,
        transition: Transition,
        phase: Phase,
        outcome: usize,
    },
    /// 4δ line of the collective phase scan after `prefix`.
    Collective {
        target: Coherence,
        prefix: PulseSequence,
        quadrature: Quadrature,
    },
}

impl Probe {
    pub fn is_collective(&self) -> bool {
        matches!(self, Probe::Collective { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySettings {
    pub scan: ScanSettings,
    /// Standard deviation of the Gaussian noise added to every datum.
    pub shot_noise: f64,
    /// Attenuation of the collective amplitudes by the readout gate, `L_A L_B`.
    pub readout_attenuation: f64,
    pub seed: u64,
}

impl Default for TomographySettings {
    fn default() -> Self {
        TomographySettings {
            scan: ScanSettings {
                n_samples: 400,
                dephasing: false,
                dipolar: false,
                ..Default::default()
            },
            shot_noise: 0.0,
            readout_attenuation: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    pub fidelity: f64,
    pub residual: f64,
}

/// A fixed probe set with its measurement operators.
pub struct Tomography {
    pub settings: TomographySettings,
    pub probes: Vec<Probe>,
    operators: Vec<CMatrix>,
    design: DMatrix<f64>,
}

fn rotation_unitary(system: &SpinSystem, op: PulseOp) -> Result<Unitary> {
    let seq = PulseSequence::from_items(vec![SequenceItem::Pulse(op)]);
    Ok(compile(&seq, system, &CompileOptions::default())?.unitary())
}

/// Basis of Hermitian 9×9 matrices: diagonal units, then real and imaginary off-diagonal pairs.
pub(crate) fn hermitian_basis(n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut m = zeros(n);
        m[(i, i)] = c(1.0, 0.0);
        out.push(m);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut m = zeros(n);
            m[(i, j)] = c(1.0, 0.0);
            m[(j, i)] = c(1.0, 0.0);
            out.push(m);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut m = zeros(n);
            m[(i, j)] = c(0.0, 1.0);
            m[(j, i)] = c(0.0, -1.0);
            out.push(m);
        }
    }
    out
}

pub(crate) fn from_parameters(p: &DVector<f64>, n: usize) -> CMatrix {
    let mut m = zeros(n);
    let mut k = n;
    for i in 0..n {
        m[(i, i)] = c(p[i], 0.0);
    }
    let pairs = n * (n - 1) / 2;
    for i in 0..n {
        for j in i + 1..n {
            let z = c(p[k], p[k + pairs]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 1;
        }
    }
    m
}

fn functional(e: &CMatrix, rho: &CMatrix) -> f64 {
    (e * rho).trace().re
}

/// Row vector `h` such that `h · s` is the cosine coefficient at `f_target` in a least-squares
/// harmonic fit of `s` over the frequencies `freqs`.
fn harmonic_row(times: &[f64], freqs: &[f64], f_target: f64) -> Result<Vec<f64>> {
    let mut cols = vec![vec![1.0; times.len()]];
    let mut target_col = None;
    for &f in freqs.iter().filter(|f| **f > 0.0) {
        if (f - f_target).abs() < 1e-6 * f_target.max(1.0) {
            target_col = Some(cols.len());
        }
        cols.push(times.iter().map(|t| (TWO_PI * f * t).cos()).collect());
        cols.push(times.iter().map(|t| (TWO_PI * f * t).sin()).collect());
    }
    let k = target_col.ok_or_else(|| NvError::InvalidArgument("probe frequency not in the harmonic set".into()))?;
    let x = DMatrix::from_fn(times.len(), cols.len(), |i, j| cols[j][i]);
    let pinv = x.pseudo_inverse(1e-12).map_err(|e| NvError::Fit(e.to_string()))?;
    Ok(pinv.row(k).iter().cloned().collect())
}

/// Frequency of each entry `(i, j)` per nuclear branch, ignoring the dipolar term.
fn entry_frequencies(settings: &ScanSettings) -> Vec<Vec<[f64; 4]>> {
    let labels = BasisLabel::all(false);
    let branches = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    labels
        .iter()
        .map(|x| {
            labels
                .iter()
                .map(|y| {
                    let (da, db) = ((x.ms_a - y.ms_a) as f64, (x.ms_b - y.ms_b) as f64);
                    let mut f = [0.0; 4];
                    for (k, (sa, sb)) in branches.iter().enumerate() {
                        f[k] = da * sa * settings.detuning_hz[0] + db * sb * settings.detuning_hz[1];
                    }
                    f
                })
                .collect()
        })
        .collect()
}

/// Operator `G` with `Re Tr[G ρ] = h · scan(ρ, readout)`.
fn scan_functional(readout: &CMatrix, h: &[f64], settings: &ScanSettings, noise: [&NoisePreset; 2]) -> CMatrix {
    let labels = BasisLabel::all(false);
    let times = settings.times();
    let freqs = entry_frequencies(settings);
    let spec = DephasingSpec {
        reference: EnvelopeReference::SingleQuantum,
        correlation: settings.correlation,
    };
    let env: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            if settings.dephasing {
                (
                    decoherence_envelope(noise[0], Experiment::Fid, 1.0, t),
                    decoherence_envelope(noise[1], Experiment::Fid, 1.0, t),
                )
            } else {
                (1.0, 1.0)
            }
        })
        .collect();
    let mut g = zeros(9);
    for (i, x) in labels.iter().enumerate() {
        for (j, y) in labels.iter().enumerate() {
            if readout[(j, i)].norm() == 0.0 {
                continue;
            }
            let (da, db) = ((x.ms_a - y.ms_a) as i32, (x.ms_b - y.ms_b) as i32);
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &t) in times.iter().enumerate() {
                let d = coherence_factor(env[k].0, env[k].1, da, db, &spec);
                for f in freqs[i][j] {
                    acc += Complex64::from_polar(0.25 * h[k] * d, -TWO_PI * f * t);
                }
            }
            g[(j, i)] = readout[(j, i)] * acc;
        }
    }
    g
}

/// Readout of the collective scan: undo the Φ_DQ⁺ preparation, then fluorescence.
/// The sine quadrature adds a virtual `exp(−i π/4 m_A)` before the inverse preparation.
fn collective_readout(system: &SpinSystem, quadrature: Quadrature) -> Result<CMatrix> {
    let (prep, _) = preparation(StateKind::Phi, system)?;
    let u = compile(&prep, system, &CompileOptions::default())?.unitary();
    let m = MeasurementModel::default().operator(false);
    let r = u.matrix() * m * u.matrix().adjoint();
    Ok(match quadrature {
        Quadrature::Cos => r,
        Quadrature::Sin => {
            let mut z = zeros(9);
            for (i, l) in BasisLabel::all(false).iter().enumerate() {
                z[(i, i)] = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4 * l.ms_a as f64);
            }
            z.adjoint() * r * z
        }
    })
}

/// All coherences `⟨x|ρ|y⟩` with both defects changing level, `x` after `y` in basis order.
pub fn nv_nv_coherences() -> Vec<Coherence> {
    let labels = BasisLabel::all(false);
    let mut out = Vec::new();
    for (i, y) in labels.iter().enumerate() {
        for x in &labels[i + 1..] {
            if x.ms_a != y.ms_a && x.ms_b != y.ms_b {
                out.push((*x, *y));
            }
        }
    }
    out
}

impl Tomography {
    pub fn new(system: &SpinSystem, settings: TomographySettings) -> Result<Self> {
        if !(settings.readout_attenuation > 0.0) {
            return Err(NvError::InvalidArgument("readout attenuation must be positive".into()));
        }
        let mut probes = Vec::new();
        let mut operators = Vec::new();
        let proj = |k: usize| {
            let mut p = zeros(9);
            p[(k, k)] = c(1.0, 0.0);
            p
        };
        for k in 0..9 {
            probes.push(Probe::Population(k));
            operators.push(proj(k));
        }
        for defect in [Defect::A, Defect::B] {
            let target = match defect {
                Defect::A => Target::A,
                Defect::B => Target::B,
            };
            for transition in PREFIX_TRANSITIONS {
                for phase in [Phase::X, Phase::Y] {
                    let u = rotation_unitary(system, PulseOp::new(Angle::HalfPi, target, transition, phase))?;
                    for k in 0..9 {
                        probes.push(Probe::Local {
                            defect,
                            transition,
                            phase,
                            outcome: k,
                        });
                        operators.push(u.matrix().adjoint() * proj(k) * u.matrix());
                    }
                }
            }
        }

        let scan = settings.scan;
        let mut freqs: Vec<f64> = entry_frequencies(&scan)
            .iter()
            .flatten()
            .flat_map(|f| f.iter().map(|v| v.abs()))
            .collect();
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        freqs.dedup_by(|a, b| (*a - *b).abs() < 1.0);
        let f4 = 2.0 * (scan.detuning_hz[0] + scan.detuning_hz[1]);
        let h = harmonic_row(&scan.times(), &freqs, f4)?;
        let noise = [&NoisePreset::nv_a(), &NoisePreset::nv_b()];
        let g = [
            scan_functional(&collective_readout(system, Quadrature::Cos)?, &h, &scan, noise),
            scan_functional(&collective_readout(system, Quadrature::Sin)?, &h, &scan, noise),
        ];
        for target in nv_nv_coherences() {
            let prefix = tomography_plan(target)?;
            let p = compile(&prefix, system, &CompileOptions::default())?.unitary();
            for (q, quadrature) in [Quadrature::Cos, Quadrature::Sin].into_iter().enumerate() {
                operators.push(p.matrix().adjoint() * &g[q] * p.matrix());
                probes.push(Probe::Collective {
                    target,
                    prefix: prefix.clone(),
                    quadrature,
                });
            }
        }

        let basis = hermitian_basis(9);
        let design = DMatrix::from_fn(operators.len(), basis.len(), |r, k| functional(&operators[r], &basis[k]));
        Ok(Tomography {
            settings,
            probes,
            operators,
            design,
        })
    }

    /// Rank of the linear map from Hermitian matrices to data.
    pub fn rank(&self) -> usize {
        self.design.clone().svd(false, false).rank(1e-9 * self.design.norm())
    }

    /// Noiseless probe values, with the readout attenuation on collective probes.
    pub fn expected(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        if rho.dim() != 9 {
            return Err(NvError::Dimension("tomography runs in the 9-dim electron space".into()));
        }
        Ok(self
            .probes
            .iter()
            .zip(&self.operators)
            .map(|(p, e)| {
                let v = functional(e, rho.matrix());
                if p.is_collective() {
                    v * self.settings.readout_attenuation
                } else {
                    v
                }
            })
            .collect())
    }

    /// Synthetic data set: expected values plus Gaussian shot noise.
    pub fn measure(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        let mut data = self.expected(rho)?;
        if self.settings.shot_noise > 0.0 {
            let normal = Normal::new(0.0, self.settings.shot_noise)
                .map_err(|e| NvError::InvalidArgument(e.to_string()))?;
            let mut rng = substream(self.settings.seed, 0);
            for d in data.iter_mut() {
                *d += normal.sample(&mut rng);
            }
        }
        Ok(data)
    }

    /// Linear-inversion estimate; collective data are divided by the readout attenuation.
    pub fn reconstruct(&self, data: &[f64]) -> Result<DensityMatrix> {
        if data.len() != self.probes.len() {
            return Err(NvError::Dimension(format!("{} data for {} probes", data.len(), self.probes.len())));
        }
        let corrected = DVector::from_iterator(
            data.len(),
            self.probes.iter().zip(data).map(|(p, d)| {
                if p.is_collective() {
                    d / self.settings.readout_attenuation
                } else {
                    *d
                }
            }),
        );
        if corrected.iter().all(|d| *d == 0.0) {
            return Err(NvError::InvalidState("all measured amplitudes are zero".into()));
        }
        let p = linear_least_squares(&self.design, &corrected)?;
        let m = from_parameters(&p, 9);
        let tr = m.trace().re;
        if !(tr.abs() > 1e-12) {
            return Err(NvError::InvalidState("reconstructed trace vanishes".into()));
        }
        Ok(DensityMatrix::unchecked(m.map(|z| z / tr), &[3, 3]))
    }

    /// Reconstructs and reports the fidelity with Φ_DQ⁺.
    pub fn reconstruct_with_fidelity(&self, data: &[f64]) -> Result<TomographyResult> {
        let rho = self.reconstruct(data)?;
        let fidelity = rho.fidelity(&phi_dq_plus_target())?;
        let pred = self.design.clone()
            * DVector::from_iterator(
                81,
                hermitian_basis(9).iter().map(|b| {
                    let z = (b.adjoint() * rho.matrix()).trace().re;
                    let norm = (b.adjoint() * b).trace().re;
                    z / norm
                }),
            );
        let residual = pred
            .iter()
            .zip(self.probes.iter().zip(data))
            .map(|(p, (probe, d))| {
                let d = if probe.is_collective() {
                    d / self.settings.readout_attenuation
                } else {
                    *d
                };
                (p - d).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        Ok(TomographyResult { rho, fidelity, residual })
    }

    /// 4δ line amplitude of the probe for `target`, in units of `|⟨x|ρ|y⟩|`.
    pub fn probe_amplitude(&self, data: &[f64], target: Coherence) -> Result<f64> {
        let rows: Vec<usize> = self
            .probes
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Probe::Collective { target: t, .. } if *t == target))
            .map(|(i, _)| i)
            .collect();
        if rows.len() != 2 {
            return Err(NvError::Unreachable("no collective probe for this coherence".into()));
        }
        let (i, j) = (target.0.index(), target.1.index());
        let (lo, hi) = (i.min(j), i.max(j));
        let basis = hermitian_basis(9);
        let pos = 9 + (0..lo).map(|r| 8 - r).sum::<usize>() + (hi - lo - 1);
        let (re, im) = (&basis[pos], &basis[pos + 36]);
        let e = &self.operators[rows[0]];
        let k = functional(e, re).hypot(functional(e, im));
        if k == 0.0 {
            return Err(NvError::InvalidState("probe has no response to its target".into()));
        }
        let g = self.settings.readout_attenuation;
        Ok((data[rows[0]] / g).hypot(data[rows[1]] / g) / k)
    }
}

/// Closed-loop tomography of `rho` with `settings`.
pub fn reconstruct_density_matrix(
    system: &SpinSystem,
    rho: &DensityMatrix,
    settings: TomographySettings,
) -> Result<TomographyResult> {
    let tomo = Tomography::new(system, settings)?;
    let data = tomo.measure(rho)?;
    tomo.reconstruct_with_fidelity(&data)
}

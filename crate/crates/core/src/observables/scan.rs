//! Collective-phase scans: free evolution under symmetric hyperfine detunings, then the inverse preparation.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::charge::ChargeModel;
use super::readout::MeasurementModel;
use crate::decoherence::{
    coherence_factor, decoherence_envelope, DephasingSpec, EnvelopeReference, Experiment, NoiseCorrelation, NoisePreset,
};
use crate::error::{NvError, Result};
use crate::hamiltonian::SpinSystem;
use crate::pulse::{compile, Block, CompileOptions, PulseSequence, SequenceItem};
use crate::spin::{BasisLabel, CMatrix, TWO_PI};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSettings {
    /// Magnitude of the drive detuning per defect; each nuclear branch sees `±δ`.
    pub detuning_hz: [f64; 2],
    pub dt_s: f64,
    pub n_samples: usize,
    pub correlation: NoiseCorrelation,
    /// Apply free-induction dephasing during the scan.
    pub dephasing: bool,
    /// Include the dipolar phase during the scan.
    pub dipolar: bool,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            detuning_hz: [1.5e6, 1.5e6],
            dt_s: 20e-9,
            n_samples: 2048,
            correlation: NoiseCorrelation::Independent,
            dephasing: true,
            dipolar: true,
        }
    }
}

impl ScanSettings {
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples).map(|i| i as f64 * self.dt_s).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChargeHandling {
    /// Both defects always negative.
    Ideal,
    /// Shots from all charge configurations are averaged.
    Mixed(ChargeModel),
    /// Shots kept only when both defects pass the count threshold.
    Preselected(ChargeModel),
}

impl ChargeHandling {
    /// Weights of (pair, A only, B only, neither).
    pub fn weights(&self) -> [f64; 4] {
        match self {
            ChargeHandling::Ideal => [1.0, 0.0, 0.0, 0.0],
            ChargeHandling::Mixed(m) => m.prior_weights(),
            ChargeHandling::Preselected(m) => m.preselected_weights(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub detuning_a_hz: f64,
    pub detuning_b_hz: f64,
    pub t: Vec<f64>,
    pub signal: Vec<f64>,
}

impl PhaseScan {
    pub fn dt(&self) -> f64 {
        if self.t.len() > 1 {
            self.t[1] - self.t[0]
        } else {
            0.0
        }
    }
}

/// `Σ_branches ¼ Re Tr[M ρ(t)]` with `ρ(t)_xy = ρ_xy e^{-i(θx-θy)} D_xy(t)`.
pub fn scan_signal(
    rho: &CMatrix,
    readout: &CMatrix,
    nu_dip: f64,
    noise: [&NoisePreset; 2],
    settings: &ScanSettings,
) -> Result<Vec<f64>> {
    if rho.nrows() != 9 || readout.nrows() != 9 {
        return Err(NvError::Dimension("phase scans run in the 9-dim electron space".into()));
    }
    let labels = BasisLabel::all(false);
    let spec = DephasingSpec {
        reference: EnvelopeReference::SingleQuantum,
        correlation: settings.correlation,
    };
    let nu = if settings.dipolar { nu_dip } else { 0.0 };
    let branches = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    // per entry: weight, electron differences, and per-branch frequencies
    let mut terms = Vec::new();
    for (i, x) in labels.iter().enumerate() {
        for (j, y) in labels.iter().enumerate() {
            let w = readout[(j, i)] * rho[(i, j)];
            if w.norm() == 0.0 {
                continue;
            }
            let (da, db) = ((x.ms_a - y.ms_a) as f64, (x.ms_b - y.ms_b) as f64);
            let dj = (x.ms_a * x.ms_b - y.ms_a * y.ms_b) as f64;
            let freqs: Vec<f64> = branches
                .iter()
                .map(|(sa, sb)| da * sa * settings.detuning_hz[0] + db * sb * settings.detuning_hz[1] + nu * dj)
                .collect();
            terms.push((w, da as i32, db as i32, freqs));
        }
    }
    let times = settings.times();
    Ok(times
        .par_iter()
        .map(|&t| {
            let (la, lb) = if settings.dephasing {
                (
                    decoherence_envelope(noise[0], Experiment::Fid, 1.0, t),
                    decoherence_envelope(noise[1], Experiment::Fid, 1.0, t),
                )
            } else {
                (1.0, 1.0)
            };
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, da, db, freqs) in &terms {
                let d = coherence_factor(la, lb, *da, *db, &spec);
                let mut ph = Complex64::new(0.0, 0.0);
                for f in freqs {
                    ph += Complex64::from_polar(0.25, -TWO_PI * f * t);
                }
                acc += w * ph * d;
            }
            acc.re
        })
        .collect())
}

fn operator_without(model: &MeasurementModel, drop_a: bool, drop_b: bool) -> CMatrix {
    let m = MeasurementModel {
        alpha: if drop_a { 0.0 } else { model.alpha },
        beta: if drop_b { 0.0 } else { model.beta },
        offset: 0.0,
        scale: 1.0,
    };
    m.operator(false)
}

/// Leading pulse block of `prep`: the part a lone negative defect still experiences as a
/// double-quantum superposition, since the interaction-mediated echo never builds up.
fn leading_block(prep: &PulseSequence) -> PulseSequence {
    let items = match prep.blocks().into_iter().next() {
        Some(Block::Pulses(p)) => p.into_iter().map(SequenceItem::Pulse).collect(),
        _ => Vec::new(),
    };
    PulseSequence::from_items(items)
}

/// Raw (uncalibrated) signals of each charge branch: pair, A alone, B alone.
///
/// With the partner neutral, a single defect undergoes a double-quantum Ramsey built from the
/// leading pulse block of `prep`, oscillating at twice its own detuning.
pub fn branch_signals(
    prep: &PulseSequence,
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    model: &MeasurementModel,
    settings: &ScanSettings,
) -> Result<[Vec<f64>; 3]> {
    let opts = CompileOptions::default();
    let psi0 = BasisLabel::electron(0, 0).ket();
    let mk = |seq: &PulseSequence, sys: &SpinSystem, drop_a: bool, drop_b: bool| -> Result<Vec<f64>> {
        let u = compile(seq, sys, &opts)?.unitary();
        let psi = u.matrix() * &psi0;
        let rho = &psi * psi.adjoint();
        let readout = u.matrix() * operator_without(model, drop_a, drop_b) * u.matrix().adjoint();
        scan_signal(&rho, &readout, sys.nu_dip_hz, [noise_a, noise_b], settings)
    };
    let uncoupled = system.with_nu_dip(0.0);
    let single = leading_block(prep);
    Ok([
        mk(prep, system, false, false)?,
        mk(&single, &uncoupled, false, true)?,
        mk(&single, &uncoupled, true, false)?,
    ])
}

pub fn phase_scan(
    prep: &PulseSequence,
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    model: &MeasurementModel,
    charge: &ChargeHandling,
    settings: &ScanSettings,
) -> Result<PhaseScan> {
    model.validate()?;
    let w = charge.weights();
    let [pair, a_only, b_only] = branch_signals(prep, system, noise_a, noise_b, model, settings)?;
    let signal = (0..settings.n_samples)
        .map(|i| model.calibrate(w[0] * pair[i] + w[1] * a_only[i] + w[2] * b_only[i]))
        .collect();
    Ok(PhaseScan {
        detuning_a_hz: settings.detuning_hz[0],
        detuning_b_hz: settings.detuning_hz[1],
        t: settings.times(),
        signal,
    })
}

/// Charge-mixture line weights recovered from spectra.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeLineWeights {
    /// 6 MHz-line amplitude of the mixed scan over that of the pure pair branch.
    pub pair_weight: f64,
    /// 3 MHz-line amplitude of the mixed scan over that of an equal-weight single-defect scan.
    pub single_weight: f64,
}

impl ChargeLineWeights {
    pub fn ratio(&self) -> f64 {
        self.pair_weight / self.single_weight
    }
}

/// Measures the weight of the collective and single-defect lines in a mixed-charge scan.
#[allow(clippy::too_many_arguments)]
pub fn charge_line_weights(
    prep: &PulseSequence,
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    model: &MeasurementModel,
    charge: &ChargeHandling,
    settings: &ScanSettings,
    pad: usize,
) -> Result<ChargeLineWeights> {
    use super::spectrum::{fft_spectrum, peak_near};
    let w = charge.weights();
    let [pair, a_only, b_only] = branch_signals(prep, system, noise_a, noise_b, model, settings)?;
    let n = settings.n_samples;
    let mixed: Vec<f64> = (0..n).map(|i| w[0] * pair[i] + w[1] * a_only[i] + w[2] * b_only[i]).collect();
    let single: Vec<f64> = (0..n).map(|i| 0.5 * (a_only[i] + b_only[i])).collect();
    let f_pair = 2.0 * (settings.detuning_hz[0] + settings.detuning_hz[1]);
    let f_single = settings.detuning_hz[0] + settings.detuning_hz[1];
    let tol = 4.0 / (n as f64 * settings.dt_s);
    let amp = |sig: &[f64], f: f64| -> Result<f64> {
        let peaks = fft_spectrum(sig, settings.dt_s, pad)?;
        peak_near(&peaks, f, tol)
            .map(|p| p.amplitude)
            .ok_or_else(|| NvError::Fit(format!("no line near {f} Hz")))
    };
    Ok(ChargeLineWeights {
        pair_weight: amp(&mixed, f_pair)? / amp(&pair, f_pair)?,
        single_weight: amp(&mixed, f_single)? / amp(&single, f_single)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{parse_sequence, phi0p_gate_text, phi_pm_conversion_text};

    fn prep() -> PulseSequence {
        let tau = 1.0 / (16.0 * crate::hamiltonian::NU_DIP_REFERENCE_HZ);
        parse_sequence(&(phi0p_gate_text(tau) + &phi_pm_conversion_text())).unwrap()
    }

    #[test]
    fn zero_detuning_is_constant() {
        let s = ScanSettings {
            detuning_hz: [0.0, 0.0],
            dephasing: false,
            dipolar: false,
            n_samples: 64,
            ..Default::default()
        };
        let sys = SpinSystem::reference(40.0);
        let scan = phase_scan(&prep(), &sys, &NoisePreset::nv_a(), &NoisePreset::nv_b(), &MeasurementModel::default(), &ChargeHandling::Ideal, &s).unwrap();
        assert!(scan.signal.iter().all(|v| (v - scan.signal[0]).abs() < 1e-12));
    }

    #[test]
    fn ideal_scan_matches_collective_phase_form() {
        // pure pair branch: P = (α+β)/2 + (α+β)/4 (1 + cos 2π 6MHz t) - ... checked through its two harmonics
        let s = ScanSettings {
            dephasing: false,
            dipolar: false,
            n_samples: 200,
            ..Default::default()
        };
        let sys = SpinSystem::reference(40.0);
        let scan = phase_scan(&prep(), &sys, &NoisePreset::nv_a(), &NoisePreset::nv_b(), &MeasurementModel::default(), &ChargeHandling::Ideal, &s).unwrap();
        let (mn, mx) = scan.signal.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((scan.signal[0] - 2.0).abs() < 1e-9);
        for (t, v) in scan.t.iter().zip(&scan.signal) {
            let expect = 1.5 + 0.5 * (TWO_PI * 6e6 * t).cos();
            assert!((v - expect).abs() < 1e-9, "{t} {v} {expect}");
        }
        assert!(mx - mn > 0.99);
    }

    #[test]
    fn charge_mixture_adds_single_defect_line() {
        use crate::observables::spectrum::{fft_spectrum, peak_near};
        let sys = SpinSystem::reference(40.0);
        let s = ScanSettings {
            n_samples: 10_000,
            ..Default::default()
        };
        let (na, nb) = (NoisePreset::nv_a(), NoisePreset::nv_b());
        let m = MeasurementModel::default();
        let charge = ChargeModel::default();
        let mixed = phase_scan(&prep(), &sys, &na, &nb, &m, &ChargeHandling::Mixed(charge), &s).unwrap();
        let pre = phase_scan(&prep(), &sys, &na, &nb, &m, &ChargeHandling::Preselected(charge), &s).unwrap();
        let pm = fft_spectrum(&mixed.signal, s.dt_s, 4).unwrap();
        let pp = fft_spectrum(&pre.signal, s.dt_s, 4).unwrap();
        assert!(peak_near(&pm, 6e6, 2e4).is_some());
        assert!(peak_near(&pm, 3e6, 2e4).is_some());
        assert!(peak_near(&pp, 6e6, 2e4).is_some());
        assert!(peak_near(&pp, 3e6, 2e4).is_none());
    }

    #[test]
    fn charge_line_weights_follow_prior() {
        let sys = SpinSystem::reference(40.0);
        let s = ScanSettings {
            n_samples: 10_000,
            ..Default::default()
        };
        let charge = ChargeModel::default();
        let w = charge_line_weights(
            &prep(),
            &sys,
            &NoisePreset::nv_a(),
            &NoisePreset::nv_b(),
            &MeasurementModel::default(),
            &ChargeHandling::Mixed(charge),
            &s,
            4,
        )
        .unwrap();
        eprintln!("{w:?} {}", w.ratio());
        assert!((w.ratio() / (0.49 / 0.42) - 1.0).abs() < 0.05);
    }
}

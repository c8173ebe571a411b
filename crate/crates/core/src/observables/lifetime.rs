//! Entangled-state lifetimes from the width of the collective-phase line.

use serde::{Deserialize, Serialize};

use super::readout::MeasurementModel;
use super::scan::{phase_scan, ChargeHandling, ScanSettings};
use super::spectrum::{fft_spectrum, peak_near, width_to_lifetime, SpectrumPeak};
use crate::decoherence::{NoiseCorrelation, NoisePreset};
use crate::error::{NvError, Result};
use crate::hamiltonian::SpinSystem;
use crate::pulse::{bell_point, parse_sequence, phi0p_gate_text, phi0p_target, phi_pm_conversion_text, GateKind, PulseSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    /// Superposition of `|--⟩` and `|++⟩`.
    Phi,
    /// Superposition of `|+-⟩` and `|-+⟩`.
    Psi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeSettings {
    pub scan: ScanSettings,
    pub pad: usize,
}

impl Default for LifetimeSettings {
    fn default() -> Self {
        LifetimeSettings {
            scan: ScanSettings {
                n_samples: 10_000,
                ..Default::default()
            },
            pad: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeResult {
    pub kind: StateKind,
    pub lifetime_s: f64,
    pub peak: SpectrumPeak,
    pub gate_tau_s: f64,
}

/// Bell-point gate, conversion to the double-quantum pair, and for `Psi` a dq flip of B.
pub fn preparation(kind: StateKind, system: &SpinSystem) -> Result<(PulseSequence, f64)> {
    let (tau, _) = bell_point(GateKind::Dq, system, &phi0p_target())?;
    let mut text = phi0p_gate_text(tau) + &phi_pm_conversion_text();
    if kind == StateKind::Psi {
        text.push_str("pi B dq phase=x\n");
    }
    Ok((parse_sequence(&text)?, tau))
}

pub fn entanglement_lifetime(
    kind: StateKind,
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    correlation: NoiseCorrelation,
    settings: &LifetimeSettings,
) -> Result<LifetimeResult> {
    let span = settings.scan.dt_s * settings.scan.n_samples as f64;
    if span < 40e-6 {
        return Err(NvError::InvalidArgument(format!("scan spans {span:e} s; need at least 40 us")));
    }
    let (prep, tau) = preparation(kind, system)?;
    let scan_settings = ScanSettings {
        correlation,
        ..settings.scan
    };
    let scan = phase_scan(
        &prep,
        system,
        noise_a,
        noise_b,
        &MeasurementModel::default(),
        &ChargeHandling::Ideal,
        &scan_settings,
    )?;
    let peaks = fft_spectrum(&scan.signal, scan.dt(), settings.pad)?;
    let f_collective = 2.0 * (settings.scan.detuning_hz[0] + settings.scan.detuning_hz[1]);
    let peak = peak_near(&peaks, f_collective, 0.02 * f_collective)
        .cloned()
        .ok_or_else(|| NvError::Fit(format!("no line near {f_collective} Hz")))?;
    if let Some(e) = &peak.fit_error {
        return Err(NvError::Fit(e.clone()));
    }
    Ok(LifetimeResult {
        kind,
        lifetime_s: width_to_lifetime(peak.width_hz),
        peak,
        gate_tau_s: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_and_psi_decay_alike_under_independent_noise() {
        let sys = SpinSystem::reference(40.0);
        let s = LifetimeSettings::default();
        let (na, nb) = (NoisePreset::nv_a(), NoisePreset::nv_b());
        let phi = entanglement_lifetime(StateKind::Phi, &sys, &na, &nb, NoiseCorrelation::Independent, &s).unwrap();
        let psi = entanglement_lifetime(StateKind::Psi, &sys, &na, &nb, NoiseCorrelation::Independent, &s).unwrap();
        // closed form: exp(-4 t² (1/T_A² + 1/T_B²))
        let expect = 0.5 / (na.t2_star_s.powi(-2) + nb.t2_star_s.powi(-2)).sqrt();
        assert!((phi.lifetime_s / expect - 1.0).abs() < 0.05, "{} {}", phi.lifetime_s, expect);
        assert!((psi.lifetime_s / phi.lifetime_s - 1.0).abs() < 0.05);
    }

    #[test]
    fn shared_noise_protects_psi() {
        let sys = SpinSystem::reference(40.0);
        let s = LifetimeSettings::default();
        let (na, nb) = (NoisePreset::nv_a(), NoisePreset::nv_b());
        let phi = entanglement_lifetime(StateKind::Phi, &sys, &na, &nb, NoiseCorrelation::Shared, &s).unwrap();
        let psi = entanglement_lifetime(StateKind::Psi, &sys, &na, &nb, NoiseCorrelation::Shared, &s).unwrap();
        assert!((phi.lifetime_s / (na.t2_star_s / 4.0) - 1.0).abs() < 0.05);
        assert!(psi.lifetime_s / phi.lifetime_s >= 10.0, "{} {}", psi.lifetime_s, phi.lifetime_s);
    }

    #[test]
    fn short_scan_rejected() {
        let mut s = LifetimeSettings::default();
        s.scan.n_samples = 100;
        let sys = SpinSystem::reference(40.0);
        assert!(entanglement_lifetime(StateKind::Phi, &sys, &NoisePreset::nv_a(), &NoisePreset::nv_b(), NoiseCorrelation::Independent, &s).is_err());
    }
}

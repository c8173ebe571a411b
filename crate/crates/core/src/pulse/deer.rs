//! Double electron-electron resonance: NV A senses the flip of NV B inside a Hahn echo.

use serde::{Deserialize, Serialize};

use super::compile::{compile, CompileOptions};
use super::dsl::{parse_sequence, Duration, PulseSequence, SequenceItem};
use crate::decoherence::{decoherence_envelope, Experiment, NoisePreset};
use crate::error::{NvError, Result};
use crate::fit::{fit_sinusoid, SinusoidFit};
use crate::hamiltonian::SpinSystem;
use crate::spin::{BasisLabel, DensityMatrix, DIMS_ELECTRON};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeerMode {
    Sq,
    Dq,
}

impl DeerMode {
    pub fn delta_ms(&self) -> f64 {
        match self {
            DeerMode::Sq => 1.0,
            DeerMode::Dq => 2.0,
        }
    }
}

fn wait(t: f64) -> String {
    SequenceItem::Delay(Duration::from_seconds(t.max(0.0)).expect("finite")).to_string()
}

/// Echo of half-length `echo_half` on A; B is flipped `tau` after the refocusing pulse.
pub fn deer_sequence(mode: DeerMode, echo_half: f64, tau: f64) -> Result<PulseSequence> {
    if tau < 0.0 || tau > echo_half {
        return Err(NvError::InvalidArgument(format!("need 0 <= tau <= {echo_half}, got {tau}")));
    }
    let text = match mode {
        DeerMode::Sq => format!(
            "pi/2 A 0+ phase=y\n{}\npi A 0+ phase=y\n{}\npi B 0+ phase=x\n{}\npi/2 A 0+ phase=y\n",
            wait(echo_half),
            wait(tau),
            wait(echo_half - tau)
        ),
        DeerMode::Dq => format!(
            "pi B 0- phase=x\npi/2 A 0+ phase=y\npi A 0- phase=y\n{}\npi A 0+ phase=y\npi A 0- phase=y\npi A 0+ phase=y\n{}\npi B dq phase=x\n{}\npi A 0- phase=y\npi/2 A 0+ phase=y\n",
            wait(echo_half),
            wait(tau),
            wait(echo_half - tau)
        ),
    };
    parse_sequence(&text)
}

/// `I(τ) = L_A · (2 P0_A - 1)` with the ensemble envelope over the echo length `2 echo_half`.
pub fn deer_signal(
    system: &SpinSystem,
    noise_a: &NoisePreset,
    tau_grid: &[f64],
    mode: DeerMode,
    echo_half: Option<f64>,
) -> Result<Vec<f64>> {
    if tau_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(NvError::InvalidArgument("tau grid must be ascending".into()));
    }
    let half = echo_half.unwrap_or_else(|| tau_grid.last().copied().unwrap_or(0.0));
    let l = decoherence_envelope(noise_a, Experiment::Hahn, mode.delta_ms(), 2.0 * half);
    let psi0 = BasisLabel::electron(0, 0).ket();
    tau_grid
        .iter()
        .map(|&tau| {
            let prog = compile(&deer_sequence(mode, half, tau)?, system, &CompileOptions::default())?;
            let psi = prog.propagate(&psi0, None)?;
            let rho = DensityMatrix::from_pure(&psi, &DIMS_ELECTRON)?;
            let p0 = rho.partial_trace(&[0])?.populations()[1];
            Ok(l * (2.0 * p0 - 1.0))
        })
        .collect()
}

/// Oscillation frequency of a DEER trace; searched between one cycle per span and the grid Nyquist rate.
pub fn fit_deer(tau_grid: &[f64], signal: &[f64]) -> Result<SinusoidFit> {
    let n = tau_grid.len();
    if n < 4 {
        return Err(NvError::Fit("need at least 4 samples".into()));
    }
    let span = tau_grid[n - 1] - tau_grid[0];
    let dt = span / (n - 1) as f64;
    fit_sinusoid(tau_grid, signal, 0.5 / span, 0.5 / dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 250e-6 / (n - 1) as f64).collect()
    }

    #[test]
    fn sq_and_dq_frequencies() {
        let sys = SpinSystem::reference(40.0);
        let noise = NoisePreset::nv_a();
        let t = grid(201);
        let sq = fit_deer(&t, &deer_signal(&sys, &noise, &t, DeerMode::Sq, None).unwrap()).unwrap();
        let dq = fit_deer(&t, &deer_signal(&sys, &noise, &t, DeerMode::Dq, None).unwrap()).unwrap();
        assert!((sq.frequency / 4.93e3 - 1.0).abs() < 5e-3);
        assert!((dq.frequency / sq.frequency - 4.0).abs() < 4e-6);
    }

    #[test]
    fn zero_coupling_is_flat() {
        let sys = SpinSystem::reference(40.0).with_nu_dip(0.0);
        let t = grid(21);
        let s = deer_signal(&sys, &NoisePreset::nv_a(), &t, DeerMode::Sq, None).unwrap();
        assert!(s.iter().all(|v| (v - s[0]).abs() < 1e-12));
    }

    #[test]
    fn tau_outside_echo_rejected() {
        assert!(deer_sequence(DeerMode::Sq, 1e-6, 2e-6).is_err());
    }
}

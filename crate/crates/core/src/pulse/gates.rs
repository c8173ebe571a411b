//! Entangling gates, closed-form gate density matrix and Bell-point search.

use serde::{Deserialize, Serialize};

use super::compile::{compile, CompileOptions};
use super::dsl::{parse_sequence, Duration, PulseSequence, SequenceItem};
use crate::decoherence::{decoherence_envelope, Experiment, NoisePreset};
use crate::error::Result;
use crate::fit::{bisect, golden_section_max};
use super::evolve::{evolve_mc, AmplitudeJitter, McOptions};
use crate::hamiltonian::SpinSystem;
use crate::spin::{c, zeros, BasisLabel, CVector, DensityMatrix, DIMS_ELECTRON};

fn wait(t: f64) -> String {
    SequenceItem::Delay(Duration::from_seconds(t.max(0.0)).expect("finite duration")).to_string()
}

/// Three composite y-phase blocks separated by two waits; superpositions live on `±1`.
pub fn phi0p_gate_text(tau: f64) -> String {
    format!(
        "pi/2 AB 0+ phase=y\npi AB 0- phase=y\n{w}\npi AB 0+ phase=y\npi AB 0- phase=y\npi AB 0+ phase=y\n{w}\npi AB 0- phase=y\npi/2 AB 0+ phase=y\n",
        w = wait(tau)
    )
}

/// Hahn-type gate on the `0 ↔ +1` transitions only.
pub fn sq_gate_text(tau: f64) -> String {
    format!(
        "pi/2 AB 0+ phase=y\n{w}\npi AB 0+ phase=y\n{w}\npi/2 AB 0+ phase=y\n",
        w = wait(tau)
    )
}

/// Local π pulses on `0 ↔ -1` mapping `|00⟩ - i|++⟩` to `|++⟩ - i|--⟩` up to a global phase.
pub fn phi_pm_conversion_text() -> String {
    "pi AB 0- phase=x\n".to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Sq,
    Dq,
}

impl GateKind {
    pub fn text(&self, tau: f64) -> String {
        match self {
            GateKind::Sq => sq_gate_text(tau),
            GateKind::Dq => phi0p_gate_text(tau),
        }
    }

    pub fn sequence(&self, tau: f64) -> PulseSequence {
        parse_sequence(&self.text(tau)).expect("generated gate text parses")
    }
}

/// `(|00⟩ - i|++⟩)/√2`
pub fn phi0p_target() -> CVector {
    crate::spin::superposition(&[
        (BasisLabel::electron(0, 0), c(1.0, 0.0)),
        (BasisLabel::electron(1, 1), c(0.0, -1.0)),
    ])
}

/// `(|++⟩ - i|--⟩)/√2`
pub fn phi_pm_target() -> CVector {
    crate::spin::superposition(&[
        (BasisLabel::electron(1, 1), c(1.0, 0.0)),
        (BasisLabel::electron(-1, -1), c(0.0, -1.0)),
    ])
}

/// `(|--⟩ + i|++⟩)/√2`, equal to `i (|++⟩ - i|--⟩)/√2`.
pub fn phi_dq_plus_target() -> CVector {
    crate::spin::superposition(&[
        (BasisLabel::electron(-1, -1), c(1.0, 0.0)),
        (BasisLabel::electron(1, 1), c(0.0, 1.0)),
    ])
}

pub fn ground_state() -> CVector {
    BasisLabel::electron(0, 0).ket()
}

/// Averaged gate quantities for given envelopes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticState {
    pub l_a: f64,
    pub l_b: f64,
    pub pi_ab: f64,
    pub delta_ab: f64,
    pub sigma_ab: f64,
    pub phi_j: f64,
}

impl AnalyticState {
    pub fn new(tau: f64, nu_dip: f64, l_a: f64, l_b: f64) -> Self {
        AnalyticState {
            l_a,
            l_b,
            pi_ab: l_a * l_b,
            delta_ab: l_a - l_b,
            sigma_ab: l_a + l_b,
            phi_j: crate::spin::TWO_PI * nu_dip * tau,
        }
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        let (co, si) = ((4.0 * self.phi_j).cos(), (4.0 * self.phi_j).sin());
        let (p, d, s) = (self.pi_ab, self.delta_ab, self.sigma_ab);
        let q1 = 0.25 * (1.0 - p + d * co);
        let q2 = 0.25 * (1.0 - p - d * co);
        let q3 = 0.25 * (1.0 + p + s * co);
        let q4 = 0.25 * (1.0 + p - s * co);
        let q1q2 = c(0.0, -0.25 * d * si);
        let q3q4 = c(0.0, -0.25 * s * si);
        // basis slots: |++⟩ ↔ Q4, |+0⟩ ↔ Q2, |0+⟩ ↔ Q1, |00⟩ ↔ Q3
        let mut m = zeros(9);
        m[(0, 0)] = c(q4, 0.0);
        m[(1, 1)] = c(q2, 0.0);
        m[(3, 3)] = c(q1, 0.0);
        m[(4, 4)] = c(q3, 0.0);
        m[(1, 3)] = q1q2;
        m[(3, 1)] = q1q2.conj();
        m[(0, 4)] = q3q4;
        m[(4, 0)] = q3q4.conj();
        DensityMatrix::unchecked(m, &DIMS_ELECTRON)
    }
}

pub fn evolve_analytic_phi0p(tau: f64, nu_dip: f64, l_a: f64, l_b: f64) -> DensityMatrix {
    AnalyticState::new(tau, nu_dip, l_a, l_b).density_matrix()
}

/// `F = ¼[1 + L_A L_B + (L_A + L_B) sin(8π ν τ)]`
pub fn gate_fidelity(tau: f64, nu_dip: f64, l_a: f64, l_b: f64) -> f64 {
    0.25 * (1.0 + l_a * l_b + (l_a + l_b) * (8.0 * std::f64::consts::PI * nu_dip * tau).sin())
}

/// Double-quantum Hahn envelopes of both defects over the gate duration `2τ`.
pub fn gate_envelopes(noise_a: &NoisePreset, noise_b: &NoisePreset, tau: f64) -> (f64, f64) {
    (
        decoherence_envelope(noise_a, Experiment::Hahn, 2.0, 2.0 * tau),
        decoherence_envelope(noise_b, Experiment::Hahn, 2.0, 2.0 * tau),
    )
}

/// Noise-free fidelity of the gate output (from `|00⟩`) to `target`.
pub fn simulated_fidelity(kind: GateKind, tau: f64, system: &SpinSystem, target: &CVector) -> Result<f64> {
    let prog = compile(&kind.sequence(tau), system, &CompileOptions::default())?;
    let psi = prog.propagate(&ground_state(), None)?;
    Ok(target.dotc(&psi).norm_sqr())
}

/// First maximum of the simulated fidelity over `τ ∈ [0, 1/ν]`.
pub fn bell_point(kind: GateKind, system: &SpinSystem, target: &CVector) -> Result<(f64, f64)> {
    let span = 1.0 / system.nu_dip_hz;
    let n = 801;
    let step = span / (n - 1) as f64;
    let vals: Vec<f64> = (0..n)
        .map(|i| simulated_fidelity(kind, i as f64 * step, system, target))
        .collect::<Result<_>>()?;
    let global = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut i = vals.iter().position(|&v| v >= global - 1e-3).unwrap_or(0);
    while i + 1 < n && vals[i + 1] >= vals[i] {
        i += 1;
    }
    let lo = (i as f64 - 1.0).max(0.0) * step;
    let hi = (i as f64 + 1.0) * step;
    let tau = golden_section_max(
        |t| simulated_fidelity(kind, t, system, target).unwrap_or(0.0),
        lo,
        hi,
        span * 1e-13,
    );
    Ok((tau, simulated_fidelity(kind, tau, system, target)?))
}

/// Trajectory-averaged fidelity of the DQ entangling gate with optional amplitude jitter.
pub fn mc_gate_fidelity(
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    tau: f64,
    jitter_sigma: f64,
    n_traj: usize,
    seed: u64,
) -> Result<f64> {
    let mut o = McOptions::new(n_traj, seed);
    o.pulse_error = Some(AmplitudeJitter { sigma: jitter_sigma });
    let rho = evolve_mc(&GateKind::Dq.sequence(tau), system, noise_a, noise_b, &ground_state(), &o)?;
    rho.fidelity(&phi0p_target())
}

/// Jitter width bringing the trajectory-averaged fidelity down to `target`; common random numbers keep it smooth.
pub fn fit_pulse_error(
    system: &SpinSystem,
    noise_a: &NoisePreset,
    noise_b: &NoisePreset,
    tau: f64,
    target: f64,
    n_traj: usize,
    seed: u64,
) -> Result<f64> {
    let f = |s: f64| mc_gate_fidelity(system, noise_a, noise_b, tau, s, n_traj, seed).unwrap_or(f64::NAN) - target;
    bisect(f, 0.0, 0.6, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoherence::{NoiseCorrelation, NoiseKind};
    use crate::pulse::evolve::apply_sequence;
    use crate::spin::{max_abs, DensityMatrix};

    fn sys() -> SpinSystem {
        SpinSystem::reference(40.0)
    }

    fn ideal_output(kind: GateKind, tau: f64) -> DensityMatrix {
        let prog = compile(&kind.sequence(tau), &sys(), &CompileOptions::default()).unwrap();
        let psi = prog.propagate(&ground_state(), None).unwrap();
        DensityMatrix::from_pure(&psi, &DIMS_ELECTRON).unwrap()
    }

    #[test]
    fn blocks_count() {
        assert_eq!(GateKind::Dq.sequence(1e-6).blocks().len(), 5);
        assert_eq!(GateKind::Sq.sequence(1e-6).items.len(), 5);
    }

    #[test]
    fn noise_free_gate_matches_closed_form_matrix() {
        let nu = sys().nu_dip_hz;
        for k in 0..12 {
            let tau = k as f64 * 3.3e-6;
            let full = ideal_output(GateKind::Dq, tau);
            let analytic = evolve_analytic_phi0p(tau, nu, 1.0, 1.0);
            assert!(max_abs(&(full.matrix() - analytic.matrix())) < 1e-10, "tau {tau}");
        }
    }

    #[test]
    fn ideal_bell_point() {
        let nu = sys().nu_dip_hz;
        let tau_star = 1.0 / (16.0 * nu);
        let rho = evolve_analytic_phi0p(tau_star, nu, 1.0, 1.0);
        assert!((rho.fidelity(&phi0p_target()).unwrap() - 1.0).abs() < 1e-12);
        let rho0 = evolve_analytic_phi0p(0.0, nu, 1.0, 1.0);
        assert!((rho0.fidelity(&phi0p_target()).unwrap() - 0.5).abs() < 1e-12);
        let (t_dq, f_dq) = bell_point(GateKind::Dq, &sys(), &phi0p_target()).unwrap();
        let (t_sq, f_sq) = bell_point(GateKind::Sq, &sys(), &phi0p_target()).unwrap();
        assert!((f_dq - 1.0).abs() < 1e-9 && (f_sq - 1.0).abs() < 1e-9, "{f_dq} {f_sq}");
        assert!((t_dq / tau_star - 1.0).abs() < 1e-6);
        assert!((t_sq / t_dq - 4.0).abs() < 1e-5, "{t_sq} {t_dq}");
    }

    #[test]
    fn closed_form_fidelity_matches_matrix() {
        let nu = sys().nu_dip_hz;
        for &(la, lb) in &[(1.0, 1.0), (0.844, 0.952), (0.3, 0.9), (0.0, 0.0)] {
            for k in 0..10 {
                let tau = k as f64 * 2.1e-6;
                let f = evolve_analytic_phi0p(tau, nu, la, lb).fidelity(&phi0p_target()).unwrap();
                assert!((f - gate_fidelity(tau, nu, la, lb)).abs() < 1e-12);
                assert_eq!(gate_fidelity(tau, nu, la, lb), gate_fidelity(tau, nu, lb, la));
            }
        }
    }

    #[test]
    fn decohered_fidelity_near_ninety_percent() {
        let nu = sys().nu_dip_hz;
        let tau = 1.0 / (16.0 * nu);
        let (la, lb) = gate_envelopes(&NoisePreset::nv_a(), &NoisePreset::nv_b(), tau);
        assert!((la - 0.844).abs() < 1e-3 && (lb - 0.952).abs() < 1e-3);
        let f = gate_fidelity(tau, nu, la, lb);
        assert!((f - (1.0 + la) * (1.0 + lb) / 4.0).abs() < 1e-12);
        assert!((0.85..0.95).contains(&f));
    }

    #[test]
    fn monte_carlo_matches_analytic() {
        let system = sys();
        let nu = system.nu_dip_hz;
        let na = NoisePreset::nv_a().with_kind(NoiseKind::White, None).unwrap();
        let nb = NoisePreset::nv_b().with_kind(NoiseKind::White, None).unwrap();
        let tau = 1.0 / (16.0 * nu);
        let seq = GateKind::Dq.sequence(tau);
        let mc = evolve_mc(&seq, &system, &na, &nb, &ground_state(), &McOptions::new(4000, 3)).unwrap();
        let (la, lb) = gate_envelopes(&na, &nb, tau);
        let an = evolve_analytic_phi0p(tau, nu, la, lb);
        assert!(max_abs(&(mc.matrix() - an.matrix())) < 0.03);
        let again = evolve_mc(&seq, &system, &na, &nb, &ground_state(), &McOptions::new(4000, 3)).unwrap();
        assert_eq!(mc.matrix(), again.matrix());
    }

    #[test]
    fn quasi_static_noise_is_refocused() {
        let system = sys();
        let tau = 1.0 / (16.0 * system.nu_dip_hz);
        let seq = GateKind::Dq.sequence(tau);
        let mut o = McOptions::new(200, 1);
        o.correlation = NoiseCorrelation::Independent;
        let mc = evolve_mc(&seq, &system, &NoisePreset::nv_a(), &NoisePreset::nv_b(), &ground_state(), &o).unwrap();
        assert!((mc.fidelity(&phi0p_target()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn conversion_to_plus_minus() {
        let system = sys();
        let rho = DensityMatrix::from_pure(&phi0p_target(), &DIMS_ELECTRON).unwrap();
        let conv = parse_sequence(&phi_pm_conversion_text()).unwrap();
        let out = apply_sequence(&rho, &conv, &system, &CompileOptions::default()).unwrap();
        assert!((out.fidelity(&phi_pm_target()).unwrap() - 1.0).abs() < 1e-12);
        assert!((out.fidelity(&phi_dq_plus_target()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pulse_error_reaches_experimental_band() {
        let system = sys();
        let tau = 1.0 / (16.0 * system.nu_dip_hz);
        let na = NoisePreset::nv_a().with_kind(NoiseKind::White, None).unwrap();
        let nb = NoisePreset::nv_b().with_kind(NoiseKind::White, None).unwrap();
        let sigma = fit_pulse_error(&system, &na, &nb, tau, 0.67, 1000, 11).unwrap();
        let f = mc_gate_fidelity(&system, &na, &nb, tau, sigma, 1000, 11).unwrap();
        assert!(sigma > 0.0 && (f - 0.67).abs() < 1e-3, "{sigma} {f}");
    }
}

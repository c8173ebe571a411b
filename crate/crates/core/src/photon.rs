//! Two-photon coincidence statistics of a defect pair.
//!
//! A coincidence level is the ratio of two-photon events to one-photon events,
//! `E[k_A k_B] / (E[k_A] + E[k_B])`, where `k` is the emission probability of the level a
//! defect occupies (`k0` for `mS = 0`, `k1` for `mS = ±1`).

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::substream;
use crate::error::{NvError, Result};
use crate::fit::linear_least_squares;
use crate::hamiltonian::SpinSystem;
use crate::observables::tomography::{from_parameters, hermitian_basis};
use crate::pulse::{compile, parse_sequence, CompileOptions};
use crate::spin::{c, ms_index, zeros, BasisLabel, CMatrix, CVector, DensityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionModel {
    pub k0: f64,
    pub k1: f64,
    pub tau_bright_ns: f64,
    pub tau_dark_ns: f64,
}

impl Default for EmissionModel {
    fn default() -> Self {
        EmissionModel {
            k0: 1.0,
            k1: 0.7,
            tau_bright_ns: 23.0,
            tau_dark_ns: 12.7,
        }
    }
}

impl EmissionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.k0 > self.k1 && self.k1 > 0.0 && self.k0 <= 1.0) {
            return Err(NvError::InvalidArgument("need 1 ≥ k0 > k1 > 0".into()));
        }
        if !(self.tau_bright_ns > 0.0 && self.tau_dark_ns > 0.0) {
            return Err(NvError::InvalidArgument("lifetimes must be positive".into()));
        }
        Ok(())
    }

    fn rate(&self, ms: i8) -> f64 {
        if ms == 0 {
            self.k0
        } else {
            self.k1
        }
    }

    fn lifetime(&self, ms: i8) -> f64 {
        if ms == 0 {
            self.tau_bright_ns
        } else {
            self.tau_dark_ns
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairState {
    Zero,
    One,
    Mixed,
    Uncorrelated,
    Phi,
    Psi,
}

pub fn coincidence_prob(state: PairState, k0: f64, k1: f64) -> Result<f64> {
    if !(k0 > 0.0 && k1 > 0.0) {
        return Err(NvError::InvalidArgument("emission probabilities must be positive".into()));
    }
    Ok(match state {
        PairState::Zero => k0 / 2.0,
        PairState::One => k1 / 2.0,
        PairState::Mixed => k0 * k1 / (k0 + k1),
        PairState::Uncorrelated => (k0 + k1) / 4.0,
        PairState::Phi => (k0 * k0 + k1 * k1) / (2.0 * (k0 + k1)),
        PairState::Psi => k0 * k1 / (k0 + k1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateWeights {
    pub alpha_sq: f64,
    pub beta_sq: f64,
}

impl StateWeights {
    /// Whether `S` fell between the Ψ and Φ levels.
    pub fn is_physical(&self) -> bool {
        (-1e-12..=1.0 + 1e-12).contains(&self.alpha_sq) && (-1e-12..=1.0 + 1e-12).contains(&self.beta_sq)
    }
}

/// Φ-family and Ψ-family weights from a coincidence level.
///
/// The weights enter linearly, `S = α² ρ_Φ + β² ρ_Ψ` with `α² + β² = 1`; both expressions
/// are the squared weights themselves, so `ρ_uncor` lands at `α² = β² = 1/2`.
pub fn infer_weights(s: f64, k0: f64, k1: f64) -> Result<StateWeights> {
    if k0 == k1 {
        return Err(NvError::InvalidArgument("k0 = k1 leaves the weights unidentifiable".into()));
    }
    let d = (k0 - k1).powi(2);
    Ok(StateWeights {
        alpha_sq: 2.0 * (s * k0 + s * k1 - k0 * k1) / d,
        beta_sq: (-2.0 * s * k0 + k0 * k0 - 2.0 * s * k1 + k1 * k1) / d,
    })
}

/// States in the `{0, +1} ⊗ {0, +1}` subspace, as 9-dim kets.
pub fn pair_ket(state: PairState, plus: bool) -> Result<CVector> {
    let s = 1.0 / 2f64.sqrt();
    let k = |a: i8, b: i8| crate::spin::ket(9, BasisLabel::electron(a, b).index());
    let sign = if plus { 1.0 } else { -1.0 };
    Ok(match state {
        PairState::Zero => k(0, 0),
        PairState::One => k(1, 1),
        PairState::Mixed => k(0, 1),
        PairState::Phi => (k(0, 0) + k(1, 1) * c(sign, 0.0)) * c(s, 0.0),
        PairState::Psi => (k(0, 1) + k(1, 0) * c(sign, 0.0)) * c(s, 0.0),
        PairState::Uncorrelated => (k(0, 0) + k(0, 1) + k(1, 0) + k(1, 1)) * c(0.5, 0.0),
    })
}

pub fn pair_state(state: PairState, plus: bool) -> Result<DensityMatrix> {
    DensityMatrix::from_pure(&pair_ket(state, plus)?, &[3, 3])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_ns: f64,
    /// Counts of `|t_A − t_B|` per bin, starting at zero delay.
    pub counts: Vec<u64>,
    /// One-photon events (each detected photon counts once).
    pub singles: u64,
    pub shots: u64,
    pub gate_ns: f64,
    /// Coincidences with delay at or above the gate, before binning.
    pub gated_coincidences: u64,
}

impl CoincidenceHistogram {
    pub fn delays_ns(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| (i as f64 + 0.5) * self.bin_ns).collect()
    }

    /// Gated two-photon level and its binomial standard error.
    pub fn level(&self) -> (f64, f64) {
        if self.singles == 0 {
            return (0.0, 0.0);
        }
        let n = self.singles as f64;
        let p = self.gated_coincidences as f64 / n;
        (p, (p.max(1.0 / n) / n).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbtSettings {
    pub shots: u64,
    pub gate_ns: f64,
    pub bin_ns: f64,
    pub max_delay_ns: f64,
    pub seed: u64,
}

impl Default for HbtSettings {
    fn default() -> Self {
        HbtSettings {
            shots: 1_000_000,
            gate_ns: 0.0,
            bin_ns: 1.0,
            max_delay_ns: 200.0,
            seed: 0,
        }
    }
}

const CHUNK: u64 = 8192;

struct Tally {
    counts: Vec<u64>,
    singles: u64,
    gated: u64,
    delays: Vec<f64>,
}

/// Sampled HBT record: spin configuration from the joint populations, Bernoulli emission,
/// exponential emission delay per occupied level. Returns the gated histogram together with
/// the raw delays of every coincidence, so other gates can be applied to the same events.
fn sample_hbt(rho: &DensityMatrix, model: &EmissionModel, s: &HbtSettings) -> Result<(CoincidenceHistogram, Vec<f64>)> {
    model.validate()?;
    if !(s.gate_ns >= 0.0) || !(s.bin_ns > 0.0) || !(s.max_delay_ns > 0.0) {
        return Err(NvError::InvalidArgument("gate ≥ 0 and positive bins required".into()));
    }
    let pops = rho.populations();
    let labels = BasisLabel::all(rho.dim() == 36);
    let mut cdf = Vec::with_capacity(pops.len());
    let mut acc = 0.0;
    for p in &pops {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    if acc <= 0.0 {
        return Err(NvError::InvalidState("state has no population".into()));
    }
    let nbins = (s.max_delay_ns / s.bin_ns).ceil() as usize;
    let n_chunks = s.shots.div_ceil(CHUNK);
    let tallies: Vec<Tally> = (0..n_chunks)
        .into_par_iter()
        .map(|ch| {
            let mut rng = substream(s.seed, ch);
            let mut t = Tally {
                counts: vec![0; nbins],
                singles: 0,
                gated: 0,
                delays: Vec::new(),
            };
            let n = CHUNK.min(s.shots - ch * CHUNK);
            for _ in 0..n {
                let u: f64 = rng.gen::<f64>() * acc;
                let k = cdf.partition_point(|x| *x <= u).min(labels.len() - 1);
                let l = labels[k];
                let ea = rng.gen::<f64>() < model.rate(l.ms_a);
                let eb = rng.gen::<f64>() < model.rate(l.ms_b);
                t.singles += ea as u64 + eb as u64;
                if ea && eb {
                    let ta = Exp::new(1.0 / model.lifetime(l.ms_a)).unwrap().sample(&mut rng);
                    let tb = Exp::new(1.0 / model.lifetime(l.ms_b)).unwrap().sample(&mut rng);
                    let d = (ta - tb).abs();
                    t.delays.push(d);
                    if d >= s.gate_ns {
                        t.gated += 1;
                        let b = (d / s.bin_ns) as usize;
                        if b < nbins {
                            t.counts[b] += 1;
                        }
                    }
                }
            }
            t
        })
        .collect();
    let mut h = CoincidenceHistogram {
        bin_ns: s.bin_ns,
        counts: vec![0; nbins],
        singles: 0,
        shots: s.shots,
        gate_ns: s.gate_ns,
        gated_coincidences: 0,
    };
    let mut delays = Vec::new();
    for t in tallies {
        for (a, b) in h.counts.iter_mut().zip(&t.counts) {
            *a += b;
        }
        h.singles += t.singles;
        h.gated_coincidences += t.gated;
        delays.extend(t.delays);
    }
    Ok((h, delays))
}

pub fn simulate_hbt(rho: &DensityMatrix, model: &EmissionModel, settings: &HbtSettings) -> Result<CoincidenceHistogram> {
    Ok(sample_hbt(rho, model, settings)?.0)
}

/// Two-photon levels of the same sampled events at several gates.
pub fn gated_levels(rho: &DensityMatrix, model: &EmissionModel, settings: &HbtSettings, gates_ns: &[f64]) -> Result<Vec<f64>> {
    let (h, delays) = sample_hbt(rho, model, settings)?;
    Ok(gates_ns
        .iter()
        .map(|g| delays.iter().filter(|d| **d >= *g).count() as f64 / h.singles.max(1) as f64)
        .collect())
}

/// Gated two-photon level predicted in closed form: each coincidence survives the gate with
/// probability `(τa e^{−g/τa} + τb e^{−g/τb}) / (τa + τb)`.
pub fn gated_level_exact(rho: &DensityMatrix, model: &EmissionModel, gate_ns: f64) -> f64 {
    let surv = |a: f64, b: f64| (a * (-gate_ns / a).exp() + b * (-gate_ns / b).exp()) / (a + b);
    let labels = BasisLabel::all(rho.dim() == 36);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, l) in rho.populations().iter().zip(&labels) {
        let (ka, kb) = (model.rate(l.ms_a), model.rate(l.ms_b));
        num += p * ka * kb * surv(model.lifetime(l.ms_a), model.lifetime(l.ms_b));
        den += p * (ka + kb);
    }
    num / den
}

/// `(ρ_Φ − ρ_Ψ) / ρ_uncor` from three levels.
pub fn contrast(phi: f64, psi: f64, uncor: f64) -> f64 {
    (phi - psi) / uncor
}

/// Histogram from two channels of arrival times (ns); each start is paired with every stop
/// inside `max_delay_ns`.
pub fn histogram_from_timestamps(start: &[f64], stop: &[f64], bin_ns: f64, max_delay_ns: f64, gate_ns: f64) -> Result<CoincidenceHistogram> {
    if !(bin_ns > 0.0 && max_delay_ns > 0.0 && gate_ns >= 0.0) {
        return Err(NvError::InvalidArgument("positive bin and window required".into()));
    }
    let mut stop_sorted = stop.to_vec();
    stop_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let nbins = (max_delay_ns / bin_ns).ceil() as usize;
    let mut counts = vec![0u64; nbins];
    let mut gated = 0;
    for &t in start {
        let lo = stop_sorted.partition_point(|x| *x < t - max_delay_ns);
        for &u in stop_sorted[lo..].iter().take_while(|x| **x <= t + max_delay_ns) {
            let d = (u - t).abs();
            if d >= gate_ns && d < max_delay_ns {
                gated += 1;
                counts[(d / bin_ns) as usize] += 1;
            }
        }
    }
    Ok(CoincidenceHistogram {
        bin_ns,
        counts,
        singles: (start.len() + stop.len()) as u64,
        shots: 0,
        gate_ns,
        gated_coincidences: gated,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    /// Linear-inversion estimate in the `|00⟩, |01⟩, |10⟩, |11⟩` order (1 ≡ mS = +1).
    pub rho: CMatrix,
    pub diagonal: [f64; 4],
}

impl CorrelationMatrix {
    /// Main-diagonal fidelity: `p00 + p11` for Φ, `p01 + p10` for Ψ.
    pub fn diagonal_fidelity(&self, state: PairState) -> Result<f64> {
        let d = self.diagonal;
        match state {
            PairState::Phi => Ok(d[0] + d[3]),
            PairState::Psi => Ok(d[1] + d[2]),
            _ => Err(NvError::InvalidArgument("diagonal fidelity is defined for Φ and Ψ".into())),
        }
    }
}

/// Population correlations of the `{0, +1}` qubits from the nine local Pauli settings
/// (π/2 about y maps x onto z, π/2 about x maps y onto z), each joint population carrying
/// Gaussian readout noise of standard deviation `noise`.
pub fn classical_correlation_matrix(rho: &DensityMatrix, system: &SpinSystem, noise: f64, seed: u64) -> Result<CorrelationMatrix> {
    if rho.dim() != 9 {
        return Err(NvError::Dimension("correlations are read from the 9-dim electron space".into()));
    }
    if !(noise >= 0.0) {
        return Err(NvError::InvalidArgument("noise must be non-negative".into()));
    }
    let pre = |axis: char| match axis {
        'x' => "pi/2 {} 0+ phase=y\n",
        'y' => "pi/2 {} 0+ phase=x\n",
        _ => "",
    };
    let qubit: Vec<usize> = [(0i8, 0i8), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|(a, b)| 3 * ms_index(*a) + ms_index(*b))
        .collect();
    let basis = hermitian_basis(4);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut data = Vec::new();
    let mut rng = substream(seed, 0);
    let normal = Normal::new(0.0, noise.max(1e-300)).map_err(|e| NvError::InvalidArgument(e.to_string()))?;
    for a in ['x', 'y', 'z'] {
        for b in ['x', 'y', 'z'] {
            let text = pre(a).replace("{}", "A") + &pre(b).replace("{}", "B");
            let u = if text.is_empty() {
                crate::spin::identity(9)
            } else {
                compile(&parse_sequence(&text)?, system, &CompileOptions::default())?.unitary().into_matrix()
            };
            let uq = CMatrix::from_fn(4, 4, |i, j| u[(qubit[i], qubit[j])]);
            let rq = CMatrix::from_fn(4, 4, |i, j| rho.matrix()[(qubit[i], qubit[j])]);
            let out = &uq * rq * uq.adjoint();
            for k in 0..4 {
                let mut proj = zeros(4);
                proj[(k, k)] = c(1.0, 0.0);
                let e = uq.adjoint() * proj * &uq;
                rows.push(basis.iter().map(|b| (&e * b).trace().re).collect());
                let mut v = out[(k, k)].re;
                if noise > 0.0 {
                    v += normal.sample(&mut rng);
                }
                data.push(v);
            }
        }
    }
    let a = nalgebra::DMatrix::from_fn(rows.len(), 16, |i, j| rows[i][j]);
    let p = linear_least_squares(&a, &DVector::from_vec(data))?;
    let m = from_parameters(&p, 4);
    let diagonal = [m[(0, 0)].re, m[(1, 1)].re, m[(2, 2)].re, m[(3, 3)].re];
    Ok(CorrelationMatrix { rho: m, diagonal })
}

/// Readout noise per joint population that gives the reconstructed diagonal fidelity of
/// `rho` a spread of `target_std` over `reps` noisy repetitions. The estimate is linear in the
/// noise, so one unit-noise pass fixes the scale.
pub fn correlation_noise_for_spread(
    rho: &DensityMatrix,
    state: PairState,
    system: &SpinSystem,
    target_std: f64,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    if reps < 2 || !(target_std > 0.0) {
        return Err(NvError::InvalidArgument("need ≥ 2 repetitions and a positive spread".into()));
    }
    let f = correlation_fidelities(rho, state, system, 1.0, reps, seed)?;
    let mean = f.iter().sum::<f64>() / reps as f64;
    let sd = (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    Ok(target_std / sd)
}

/// Diagonal fidelities of `reps` independent noisy reconstructions.
pub fn correlation_fidelities(
    rho: &DensityMatrix,
    state: PairState,
    system: &SpinSystem,
    noise: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| classical_correlation_matrix(rho, system, noise, seed.wrapping_add(r))?.diagonal_fidelity(state))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_rates_are_indistinguishable() {
        for s in [
            PairState::Zero,
            PairState::One,
            PairState::Mixed,
            PairState::Uncorrelated,
            PairState::Phi,
            PairState::Psi,
        ] {
            assert!((coincidence_prob(s, 0.8, 0.8).unwrap() - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn ordering_at_double_rate() {
        let (k0, k1) = (2.0, 1.0);
        assert!((coincidence_prob(PairState::Phi, k0, k1).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((coincidence_prob(PairState::Uncorrelated, k0, k1).unwrap() - 0.75).abs() < 1e-15);
        assert!((coincidence_prob(PairState::Psi, k0, k1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weights_round_trip() {
        let (k0, k1) = (1.0, 0.7);
        let w = |s| infer_weights(coincidence_prob(s, k0, k1).unwrap(), k0, k1).unwrap();
        let phi = w(PairState::Phi);
        assert!((phi.alpha_sq - 1.0).abs() < 1e-12 && phi.beta_sq.abs() < 1e-12);
        let un = w(PairState::Uncorrelated);
        assert!((un.alpha_sq - 0.5).abs() < 1e-12 && (un.beta_sq - 0.5).abs() < 1e-12);
        let psi = w(PairState::Psi);
        assert!(psi.alpha_sq.abs() < 1e-12 && (psi.beta_sq - 1.0).abs() < 1e-12);
        assert!(infer_weights(0.4, 0.8, 0.8).is_err());
        assert!(!infer_weights(0.6, k0, k1).unwrap().is_physical());
    }

    #[test]
    fn exact_levels_match_coincidence_formulas() {
        let m = EmissionModel::default();
        for (s, plus) in [(PairState::Phi, true), (PairState::Psi, false), (PairState::Uncorrelated, true), (PairState::Mixed, true)] {
            let rho = pair_state(s, plus).unwrap();
            let want = coincidence_prob(s, m.k0, m.k1).unwrap();
            assert!((gated_level_exact(&rho, &m, 0.0) - want).abs() < 1e-12, "{s:?}");
        }
    }

    #[test]
    fn hbt_reproduces_levels() {
        let m = EmissionModel::default();
        let s = HbtSettings {
            shots: 200_000,
            seed: 3,
            ..Default::default()
        };
        for st in [PairState::Phi, PairState::Uncorrelated, PairState::Psi] {
            let h = simulate_hbt(&pair_state(st, true).unwrap(), &m, &s).unwrap();
            let (lvl, err) = h.level();
            let want = coincidence_prob(st, m.k0, m.k1).unwrap();
            assert!((lvl - want).abs() < 4.0 * err, "{st:?}: {lvl} vs {want} ± {err}");
        }
    }

    #[test]
    fn same_seed_same_histogram() {
        let m = EmissionModel::default();
        let s = HbtSettings {
            shots: 20_000,
            gate_ns: 5.0,
            seed: 11,
            ..Default::default()
        };
        let rho = pair_state(PairState::Phi, true).unwrap();
        assert_eq!(simulate_hbt(&rho, &m, &s).unwrap(), simulate_hbt(&rho, &m, &s).unwrap());
    }

    #[test]
    fn plus_and_minus_partners_look_alike() {
        let m = EmissionModel::default();
        let s = HbtSettings {
            shots: 50_000,
            seed: 2,
            ..Default::default()
        };
        for st in [PairState::Phi, PairState::Psi] {
            let a = simulate_hbt(&pair_state(st, true).unwrap(), &m, &s).unwrap();
            let b = simulate_hbt(&pair_state(st, false).unwrap(), &m, &s).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gating_raises_contrast_in_closed_form() {
        let m = EmissionModel::default();
        let lv = |st, g| gated_level_exact(&pair_state(st, true).unwrap(), &m, g);
        let c0 = contrast(lv(PairState::Phi, 0.0), lv(PairState::Psi, 0.0), lv(PairState::Uncorrelated, 0.0));
        let c1 = contrast(lv(PairState::Phi, 12.7), lv(PairState::Psi, 12.7), lv(PairState::Uncorrelated, 12.7));
        assert!(c1 > c0);
    }

    #[test]
    fn timestamps_histogram() {
        let h = histogram_from_timestamps(&[0.0, 100.0], &[3.0, 150.0, 400.0], 1.0, 60.0, 2.0).unwrap();
        assert_eq!(h.gated_coincidences, 2);
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.counts[50], 1);
        assert_eq!(h.singles, 5);
    }

    #[test]
    fn correlation_matrix_of_ideal_states() {
        let sys = SpinSystem::reference(40.0);
        let phi = classical_correlation_matrix(&pair_state(PairState::Phi, true).unwrap(), &sys, 0.0, 0).unwrap();
        for (a, b) in phi.diagonal.iter().zip([0.5, 0.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((phi.rho[(0, 3)].re - 0.5).abs() < 1e-12);
        let psi = classical_correlation_matrix(&pair_state(PairState::Psi, true).unwrap(), &sys, 0.0, 0).unwrap();
        for (a, b) in psi.diagonal.iter().zip([0.0, 0.5, 0.5, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((psi.rho[(1, 2)].re - 0.5).abs() < 1e-12);
    }

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
    }

    #[test]
    fn noisy_correlation_bands_overlap_measured_fidelities() {
        let sys = SpinSystem::reference(40.0);
        for (st, measured, spread) in [(PairState::Phi, 1.07, 0.19), (PairState::Psi, 0.81, 0.15)] {
            let rho = pair_state(st, true).unwrap();
            let sigma = correlation_noise_for_spread(&rho, st, &sys, spread, 200, 5).unwrap();
            let (m, sd) = mean_std(&correlation_fidelities(&rho, st, &sys, sigma, 200, 9000).unwrap());
            assert!((sd - spread).abs() < 0.25 * spread, "{st:?}: spread {sd}");
            assert!((m - 1.0).abs() < 4.0 * sd / 200f64.sqrt(), "{st:?}: mean {m}");
            assert!(m - sd < measured + spread && measured - spread < m + sd);
        }
    }

    #[test]
    fn sampled_gating_raises_contrast() {
        let m = EmissionModel::default();
        let s = HbtSettings {
            shots: 400_000,
            seed: 21,
            ..Default::default()
        };
        let g = [0.0, 12.7];
        let lv = |st| gated_levels(&pair_state(st, true).unwrap(), &m, &s, &g).unwrap();
        let (phi, psi, un) = (lv(PairState::Phi), lv(PairState::Psi), lv(PairState::Uncorrelated));
        let c: Vec<f64> = (0..2).map(|i| contrast(phi[i], psi[i], un[i])).collect();
        assert!(c[1] > c[0], "{c:?}");
        for (i, gate) in g.iter().enumerate() {
            let exact = gated_level_exact(&pair_state(PairState::Phi, true).unwrap(), &m, *gate);
            assert!((phi[i] - exact).abs() < 3e-3);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for s in [0.40, 0.41, 0.42, 0.43] {
            let w = infer_weights(s, 1.0, 0.7).unwrap();
            assert!((w.alpha_sq + w.beta_sq - 1.0).abs() < 1e-12);
        }
    }
}

//! Dephasing noise, decoherence envelopes and 15N modulation functions.
//!
//! Noise fields `b(t)` are in rad/s and act on an electron level `mS` as the phase
//! `exp(-i mS ∫ b f dt)`. Envelope conventions:
//! * FID, quasi-static: `exp(-(Δm t / T2*)²)`, so `T2*` is the single-quantum value.
//! * Hahn, quasi-static: `exp(-(Δm/2)² (t/T2)^p)`, so `T2` is the double-quantum value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::hamiltonian::Vec3;
use crate::spin::{c, identity, matrix_exponential, spin_half, BasisLabel, CMatrix, DensityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    QuasiStatic,
    OrnsteinUhlenbeck,
    /// Delta-correlated field calibrated so the double-quantum Hahn envelope is `exp(-t/T2)`.
    White,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePreset {
    pub t2_star_s: f64,
    pub t2_s: f64,
    pub kind: NoiseKind,
    pub tau_c_s: Option<f64>,
    pub hahn_exponent: f64,
}

impl NoisePreset {
    pub fn new(
        t2_star_s: f64,
        t2_s: f64,
        kind: NoiseKind,
        tau_c_s: Option<f64>,
        hahn_exponent: f64,
    ) -> Result<Self> {
        if !(t2_star_s > 0.0) || !(t2_s >= t2_star_s) {
            return Err(NvError::InvalidArgument(format!(
                "need t2 >= t2* > 0 (t2* = {t2_star_s}, t2 = {t2_s})"
            )));
        }
        if !(hahn_exponent > 0.0) {
            return Err(NvError::InvalidArgument("hahn exponent must be positive".into()));
        }
        if kind == NoiseKind::OrnsteinUhlenbeck && !tau_c_s.map_or(false, |t| t > 0.0) {
            return Err(NvError::InvalidArgument(
                "ornstein-uhlenbeck noise needs a positive correlation time".into(),
            ));
        }
        Ok(NoisePreset {
            t2_star_s,
            t2_s,
            kind,
            tau_c_s,
            hahn_exponent,
        })
    }

    pub fn validate(&self) -> Result<()> {
        NoisePreset::new(self.t2_star_s, self.t2_s, self.kind, self.tau_c_s, self.hahn_exponent)
            .map(|_| ())
    }

    pub fn quasi_static(t2_star_s: f64, t2_s: f64) -> Self {
        NoisePreset::new(t2_star_s, t2_s, NoiseKind::QuasiStatic, None, 1.0).unwrap()
    }

    /// NV A: T2* = 27.8 μs, T2(DQ) = 150 μs.
    pub fn nv_a() -> Self {
        NoisePreset::quasi_static(27.8e-6, 150e-6)
    }

    /// NV B: T2* = 22.6 μs, T2(DQ) = 514 μs.
    pub fn nv_b() -> Self {
        NoisePreset::quasi_static(22.6e-6, 514e-6)
    }

    pub fn with_kind(&self, kind: NoiseKind, tau_c_s: Option<f64>) -> Result<Self> {
        NoisePreset::new(self.t2_star_s, self.t2_s, kind, tau_c_s, self.hahn_exponent)
    }

    /// Standard deviation of the field [rad/s]; quasi-static and OU kinds only.
    pub fn amplitude_rad_s(&self) -> f64 {
        match self.kind {
            NoiseKind::QuasiStatic => 2f64.sqrt() / self.t2_star_s,
            NoiseKind::OrnsteinUhlenbeck => calibrate_ou_sigma(self.t2_star_s, self.tau_c_s.unwrap()),
            NoiseKind::White => 0.0,
        }
    }

    /// White-noise diffusion constant `D` with `⟨b(t)b(t')⟩ = 2D δ(t - t')`.
    pub fn white_diffusion(&self) -> f64 {
        1.0 / (4.0 * self.t2_s)
    }
}

/// Variance of `∫₀ᵀ b` for OU noise of unit variance.
fn ou_integral_variance(t: f64, tau_c: f64) -> f64 {
    let x = t / tau_c;
    // series near zero avoids cancellation
    if x < 1e-4 {
        tau_c * tau_c * (x * x - x * x * x / 3.0)
    } else {
        2.0 * tau_c * tau_c * (x - 1.0 + (-x).exp())
    }
}

/// OU amplitude placing the single-quantum FID 1/e point at `t2_star`, by bisection.
pub fn calibrate_ou_sigma(t2_star: f64, tau_c: f64) -> f64 {
    let env = |sigma: f64| (-0.5 * sigma * sigma * ou_integral_variance(t2_star, tau_c)).exp();
    let target = (-1f64).exp();
    let (mut lo, mut hi) = (0.0, 1.0 / t2_star);
    while env(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if env(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Piecewise-constant filter `f(t) ∈ {+1, -1}` over consecutive segments.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoSchedule {
    pub segments: Vec<(f64, f64)>,
}

impl EchoSchedule {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        for (d, f) in &segments {
            if !(*d >= 0.0) || (f.abs() - 1.0).abs() > 1e-12 {
                return Err(NvError::InvalidArgument(
                    "segments need duration >= 0 and filter ±1".into(),
                ));
            }
        }
        Ok(EchoSchedule { segments })
    }

    pub fn fid(t: f64) -> Self {
        EchoSchedule::new(vec![(t, 1.0)]).unwrap()
    }

    pub fn hahn(tau: f64) -> Self {
        EchoSchedule::new(vec![(tau, 1.0), (tau, -1.0)]).unwrap()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.0).collect()
    }

    pub fn total(&self) -> f64 {
        self.segments.iter().map(|s| s.0).sum()
    }
}

/// Per-shot random stream derived from a master seed.
pub fn substream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sampled `∫ b dt` over each consecutive segment [rad], single-quantum units.
pub fn sample_segment_integrals(preset: &NoisePreset, durations: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    match preset.kind {
        NoiseKind::QuasiStatic => {
            let b = preset.amplitude_rad_s() * gauss(rng);
            durations.iter().map(|d| b * d).collect()
        }
        NoiseKind::White => {
            let d2 = 2.0 * preset.white_diffusion();
            durations.iter().map(|d| (d2 * d).sqrt() * gauss(rng)).collect()
        }
        NoiseKind::OrnsteinUhlenbeck => {
            let sigma = preset.amplitude_rad_s();
            let tc = preset.tau_c_s.unwrap();
            let mut b = sigma * gauss(rng);
            let mut out = Vec::with_capacity(durations.len());
            for &h in durations {
                if h == 0.0 {
                    out.push(0.0);
                    continue;
                }
                let a = (-h / tc).exp();
                let v11 = sigma * sigma * (1.0 - a * a);
                let v22 = sigma * sigma * tc * tc * (2.0 * h / tc - 3.0 + 4.0 * a - a * a);
                let v12 = sigma * sigma * tc * (1.0 - a) * (1.0 - a);
                let l11 = v11.max(0.0).sqrt();
                let l21 = if l11 > 0.0 { v12 / l11 } else { 0.0 };
                let l22 = (v22 - l21 * l21).max(0.0).sqrt();
                let (z1, z2) = (gauss(rng), gauss(rng));
                let integral = tc * (1.0 - a) * b + l21 * z1 + l22 * z2;
                b = a * b + l11 * z1;
                out.push(integral);
            }
            out
        }
    }
}

/// Drawn phases per evolution segment for one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomPhaseTrajectory {
    pub seed: u64,
    pub phases: Vec<f64>,
}

impl RandomPhaseTrajectory {
    pub fn sample(preset: &NoisePreset, durations: &[f64], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RandomPhaseTrajectory {
            seed,
            phases: sample_segment_integrals(preset, durations, &mut rng),
        }
    }
}

/// `φ = Δm ∫ b(t) f(t) dt` for one shot.
pub fn sample_phase(preset: &NoisePreset, schedule: &EchoSchedule, delta_ms: f64, seed: u64) -> f64 {
    let traj = RandomPhaseTrajectory::sample(preset, &schedule.durations(), seed);
    delta_ms
        * traj
            .phases
            .iter()
            .zip(&schedule.segments)
            .map(|(p, (_, f))| p * f)
            .sum::<f64>()
}

/// Variance of `∫ b f dt` for the Gaussian process of the preset (single-quantum units).
pub fn filtered_phase_variance(preset: &NoisePreset, schedule: &EchoSchedule) -> f64 {
    match preset.kind {
        NoiseKind::QuasiStatic => {
            let s = preset.amplitude_rad_s();
            let w: f64 = schedule.segments.iter().map(|(d, f)| d * f).sum();
            s * s * w * w
        }
        NoiseKind::White => 2.0 * preset.white_diffusion() * schedule.total(),
        NoiseKind::OrnsteinUhlenbeck => {
            let s2 = preset.amplitude_rad_s().powi(2);
            let tc = preset.tau_c_s.unwrap();
            let segs = &schedule.segments;
            let mut starts = Vec::with_capacity(segs.len());
            let mut acc = 0.0;
            for (d, _) in segs {
                starts.push(acc);
                acc += d;
            }
            let mut var = 0.0;
            for i in 0..segs.len() {
                for j in 0..segs.len() {
                    let (di, fi) = segs[i];
                    let fj = segs[j].1;
                    let cov = if i == j {
                        ou_integral_variance(di, tc)
                    } else {
                        let (first, second) = if i < j { (i, j) } else { (j, i) };
                        let gap = starts[second] - (starts[first] + segs[first].0);
                        tc * tc
                            * (1.0 - (-segs[first].0 / tc).exp())
                            * (1.0 - (-segs[second].0 / tc).exp())
                            * (-gap / tc).exp()
                    };
                    var += fi * fj * cov;
                }
            }
            s2 * var
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fid,
    Hahn,
}

/// Coherence envelope `L ∈ [0, 1]` for a transition with `|Δm| = delta_ms` after total time `t`.
pub fn decoherence_envelope(preset: &NoisePreset, experiment: Experiment, delta_ms: f64, t: f64) -> f64 {
    let t = t.max(0.0);
    let dm2 = delta_ms * delta_ms;
    match (preset.kind, experiment) {
        (NoiseKind::QuasiStatic, Experiment::Fid) => (-dm2 * (t / preset.t2_star_s).powi(2)).exp(),
        (NoiseKind::QuasiStatic, Experiment::Hahn) => {
            (-(dm2 / 4.0) * (t / preset.t2_s).powf(preset.hahn_exponent)).exp()
        }
        (_, Experiment::Fid) => {
            (-0.5 * dm2 * filtered_phase_variance(preset, &EchoSchedule::fid(t))).exp()
        }
        (_, Experiment::Hahn) => {
            (-0.5 * dm2 * filtered_phase_variance(preset, &EchoSchedule::hahn(t / 2.0))).exp()
        }
    }
}

fn nuclear_propagator(h: &Vec3, t: f64) -> CMatrix {
    let i = spin_half();
    matrix_exponential(&i.dot(h), t).unwrap().into_matrix()
}

/// FID modulation `½ Tr[exp(-i2π h1·I t) exp(+i2π h2·I t)]`; `cos(π aN t)` for `h1 = aN ẑ`, `h2 = 0`.
pub fn modulation_fid(h1: &Vec3, h2: &Vec3, t: f64) -> f64 {
    let u1 = nuclear_propagator(h1, t);
    let u2 = nuclear_propagator(h2, t);
    let m = u1 * u2.adjoint();
    (0.5 * (m[(0, 0)] + m[(1, 1)])).re.clamp(-1.0, 1.0)
}

/// Hahn-echo modulation from the four-propagator trace; refocusing pulse at `tau`.
pub fn modulation_hahn(h1: &Vec3, h2: &Vec3, tau: f64) -> f64 {
    let u1 = nuclear_propagator(h1, tau);
    let u2 = nuclear_propagator(h2, tau);
    let branch1 = &u2 * &u1;
    let branch2 = &u1 * &u2;
    let m = branch2.adjoint() * branch1;
    (0.5 * (m[(0, 0)] + m[(1, 1)])).re.clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeReference {
    /// `L` is the value for `|Δm| = 1`.
    SingleQuantum,
    /// `L` is the value for `|Δm| = 2`.
    DoubleQuantum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseCorrelation {
    Independent,
    /// Both defects see the same field; `L_A` describes it.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DephasingSpec {
    pub reference: EnvelopeReference,
    pub correlation: NoiseCorrelation,
}

impl Default for DephasingSpec {
    fn default() -> Self {
        DephasingSpec {
            reference: EnvelopeReference::DoubleQuantum,
            correlation: NoiseCorrelation::Independent,
        }
    }
}

/// Multiplicative factor on the coherence `|x⟩⟨y|` with electron projection differences `(dA, dB)`.
pub fn coherence_factor(l_a: f64, l_b: f64, d_a: i32, d_b: i32, spec: &DephasingSpec) -> f64 {
    let r2 = match spec.reference {
        EnvelopeReference::SingleQuantum => 1.0,
        EnvelopeReference::DoubleQuantum => 4.0,
    };
    match spec.correlation {
        NoiseCorrelation::Independent => {
            l_a.powf((d_a * d_a) as f64 / r2) * l_b.powf((d_b * d_b) as f64 / r2)
        }
        NoiseCorrelation::Shared => l_a.powf(((d_a + d_b) * (d_a + d_b)) as f64 / r2),
    }
}

/// Gaussian pure-dephasing channel on the 9- or 36-dimensional space.
pub fn apply_dephasing(rho: &DensityMatrix, l_a: f64, l_b: f64, spec: &DephasingSpec) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&l_a) || !(0.0..=1.0).contains(&l_b) {
        return Err(NvError::InvalidArgument("envelopes must lie in [0, 1]".into()));
    }
    let full = match rho.dim() {
        9 => false,
        36 => true,
        d => return Err(NvError::Dimension(format!("dephasing needs dim 9 or 36, got {d}"))),
    };
    let labels = BasisLabel::all(full);
    let mut m = rho.matrix().clone();
    for (i, x) in labels.iter().enumerate() {
        for (j, y) in labels.iter().enumerate() {
            if i == j {
                continue;
            }
            let f = coherence_factor(
                l_a,
                l_b,
                (x.ms_a - y.ms_a) as i32,
                (x.ms_b - y.ms_b) as i32,
                spec,
            );
            m[(i, j)] *= c(f, 0.0);
        }
    }
    DensityMatrix::new(m, rho.dims())
}

/// Diagonal per-level phase operator `exp(-i (mS_A φ_A + mS_B φ_B))` on the 9- or 36-dim space.
pub fn random_phase_operator(phi_a: f64, phi_b: f64, full: bool) -> CMatrix {
    let labels = BasisLabel::all(full);
    let n = labels.len();
    let mut m = identity(n);
    for (i, l) in labels.iter().enumerate() {
        let ph = l.ms_a as f64 * phi_a + l.ms_b as f64 * phi_b;
        m[(i, i)] = num_complex::Complex64::from_polar(1.0, -ph);
    }
    m
}

/// Sample mean and variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{effective_hyperfine_field, FieldConfig, NvOrientation, SpinConstants};
    use crate::spin::superposition;
    use approx::assert_relative_eq;

    #[test]
    fn balanced_hahn_refocuses_static_noise() {
        let p = NoisePreset::nv_a();
        for seed in 0..20 {
            assert_eq!(sample_phase(&p, &EchoSchedule::hahn(12.7e-6), 1.0, seed), 0.0);
        }
    }

    #[test]
    fn fid_variance_matches_closed_form() {
        let p = NoisePreset::nv_a();
        let t = 20e-6;
        let n = 100_000;
        let phases: Vec<f64> = (0..n)
            .map(|k| sample_phase(&p, &EchoSchedule::fid(t), 1.0, 1000 + k as u64))
            .collect();
        let (_, var) = mean_var(&phases);
        let expect = 2.0 * (t / p.t2_star_s).powi(2);
        let se = expect * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "{var} vs {expect}");
    }

    #[test]
    fn double_quantum_doubles_phase() {
        let p = NoisePreset::nv_b();
        let s = EchoSchedule::fid(5e-6);
        assert_eq!(sample_phase(&p, &s, 2.0, 9), 2.0 * sample_phase(&p, &s, 1.0, 9));
    }

    #[test]
    fn envelope_values() {
        let p = NoisePreset::nv_a();
        assert_eq!(decoherence_envelope(&p, Experiment::Fid, 1.0, 0.0), 1.0);
        assert_eq!(decoherence_envelope(&p, Experiment::Hahn, 2.0, 0.0), 1.0);
        let l = decoherence_envelope(&p, Experiment::Hahn, 2.0, 25.4e-6);
        assert_relative_eq!(l, 0.844, epsilon = 5e-4);
        let fid = decoherence_envelope(&p, Experiment::Fid, 1.0, p.t2_star_s);
        assert_relative_eq!(fid, (-1f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn envelope_matches_monte_carlo() {
        let p = NoisePreset::nv_a();
        for &t in &[5e-6, 15e-6, 30e-6] {
            let n = 10_000;
            let mean: f64 = (0..n)
                .map(|k| sample_phase(&p, &EchoSchedule::fid(t), 1.0, 77 + k as u64).cos())
                .sum::<f64>()
                / n as f64;
            let l = decoherence_envelope(&p, Experiment::Fid, 1.0, t);
            assert!((mean - l).abs() < 0.02, "t {t}: {mean} vs {l}");
        }
    }

    #[test]
    fn ou_calibration_matches_closed_form() {
        let tc = 10e-6;
        let t2s = 27.8e-6;
        let sigma = calibrate_ou_sigma(t2s, tc);
        let closed = (2.0 / ou_integral_variance(t2s, tc)).sqrt();
        assert_relative_eq!(sigma, closed, max_relative = 1e-10);
        let p = NoisePreset::nv_a().with_kind(NoiseKind::OrnsteinUhlenbeck, Some(tc)).unwrap();
        assert_relative_eq!(decoherence_envelope(&p, Experiment::Fid, 1.0, t2s), (-1f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn ou_sampler_matches_variances() {
        let p = NoisePreset::nv_a().with_kind(NoiseKind::OrnsteinUhlenbeck, Some(8e-6)).unwrap();
        let sched = EchoSchedule::hahn(15e-6);
        let n = 40_000;
        let (mut fid, mut hahn) = (Vec::new(), Vec::new());
        for k in 0..n {
            let mut rng = substream(5, k);
            let ints = sample_segment_integrals(&p, &sched.durations(), &mut rng);
            fid.push(ints[0] + ints[1]);
            hahn.push(ints[0] - ints[1]);
        }
        let vf = filtered_phase_variance(&p, &EchoSchedule::fid(30e-6));
        let vh = filtered_phase_variance(&p, &sched);
        let (_, sf) = mean_var(&fid);
        let (_, sh) = mean_var(&hahn);
        assert!((sf / vf - 1.0).abs() < 0.03, "{sf} {vf}");
        assert!((sh / vh - 1.0).abs() < 0.03, "{sh} {vh}");
        assert!(vh < vf);
    }

    #[test]
    fn white_noise_hahn_is_exponential() {
        let p = NoisePreset::nv_a().with_kind(NoiseKind::White, None).unwrap();
        let t = 40e-6;
        assert_relative_eq!(
            decoherence_envelope(&p, Experiment::Hahn, 2.0, t),
            (-t / p.t2_s).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn preset_validation() {
        assert!(NoisePreset::new(10e-6, 5e-6, NoiseKind::QuasiStatic, None, 1.0).is_err());
        assert!(NoisePreset::new(10e-6, 50e-6, NoiseKind::OrnsteinUhlenbeck, None, 1.0).is_err());
        assert!(NoisePreset::new(0.0, 50e-6, NoiseKind::QuasiStatic, None, 1.0).is_err());
    }

    #[test]
    fn modulation_trivial_cases() {
        let a_n = 3.05e6;
        let h = [0.1e6, 0.3e6, a_n];
        for &t in &[0.0, 0.1e-6, 1.3e-6, 7.7e-6] {
            assert_relative_eq!(modulation_fid(&h, &h, t), 1.0, epsilon = 1e-12);
            let g = modulation_fid(&[0.0, 0.0, a_n], &[0.0; 3], t);
            assert!((g - (std::f64::consts::PI * a_n * t).cos()).abs() < 1e-9);
            assert!((modulation_hahn(&[0.0, 0.0, a_n], &[0.0, 0.0, -a_n], t) - 1.0).abs() < 1e-9);
            assert!((modulation_hahn(&[0.0, 0.0, a_n], &[0.0; 3], t) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn modulation_vector_formula() {
        // Oracle: SU(2) composition, ½Tr = cos(θ1/2)cos(θ2/2) + sin(θ1/2)sin(θ2/2) n1·n2
        let h1 = [0.4e6, -1.1e6, 2.2e6];
        let h2 = [-0.3e6, 0.2e6, 0.9e6];
        let n = |h: &Vec3| (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
        for &t in &[0.05e-6, 0.47e-6, 2.9e-6] {
            let th1 = std::f64::consts::TAU * n(&h1) * t;
            let th2 = std::f64::consts::TAU * n(&h2) * t;
            let cosang = (h1[0] * h2[0] + h1[1] * h2[1] + h1[2] * h2[2]) / (n(&h1) * n(&h2));
            let expect = (th1 / 2.0).cos() * (th2 / 2.0).cos() + (th1 / 2.0).sin() * (th2 / 2.0).sin() * cosang;
            assert!((modulation_fid(&h1, &h2, t) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_dq_echo_modulation_small() {
        let k = SpinConstants::default();
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        let f = FieldConfig::along(40.0, &a);
        let hp = effective_hyperfine_field(1, &b, &f, &k).unwrap();
        let hm = effective_hyperfine_field(-1, &b, &f, &k).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..4000 {
            let tau = i as f64 * 0.005e-6;
            let g = modulation_hahn(&hp, &hm, tau);
            assert!((-1.0..=1.0).contains(&g));
            lo = lo.min(g);
            hi = hi.max(g);
        }
        // half peak-to-peak
        let amplitude = 0.5 * (hi - lo);
        assert!(amplitude < 0.01, "{amplitude}");
    }

    #[test]
    fn dephasing_channel_cases() {
        let phi = superposition(&[
            (BasisLabel::electron(0, 0), c(1.0, 0.0)),
            (BasisLabel::electron(1, 1), c(1.0, 0.0)),
        ]);
        let rho = DensityMatrix::from_pure(&phi, &[3, 3]).unwrap();
        let spec = DephasingSpec::default();
        let same = apply_dephasing(&rho, 1.0, 1.0, &spec).unwrap();
        assert_eq!(same.matrix(), rho.matrix());
        let gone = apply_dephasing(&rho, 0.0, 0.0, &spec).unwrap();
        let i = BasisLabel::electron(0, 0).index();
        let j = BasisLabel::electron(1, 1).index();
        assert_relative_eq!(gone.matrix()[(i, i)].re, 0.5);
        assert_relative_eq!(gone.matrix()[(j, j)].re, 0.5);
        assert_eq!(gone.matrix()[(i, j)].norm(), 0.0);
    }

    #[test]
    fn shared_noise_spares_psi() {
        let psi = superposition(&[
            (BasisLabel::electron(-1, 1), c(1.0, 0.0)),
            (BasisLabel::electron(1, -1), c(0.0, 1.0)),
        ]);
        let rho = DensityMatrix::from_pure(&psi, &[3, 3]).unwrap();
        let spec = DephasingSpec {
            reference: EnvelopeReference::SingleQuantum,
            correlation: NoiseCorrelation::Shared,
        };
        let out = apply_dephasing(&rho, 0.01, 0.5, &spec).unwrap();
        assert!(out.fidelity(&psi).unwrap() > 0.999_999);
    }
}

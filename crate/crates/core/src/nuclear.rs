//! 15N control through the misaligned field, and swap storage of the electron pair state.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::substream;
use crate::error::{NvError, Result};
use crate::fit::{bisect, levenberg_marquardt};
use crate::hamiltonian::{SpinConstants, SpinSystem};
use crate::pulse::{compile, parse_sequence, CompileOptions, PulseSequence};
use crate::spin::{
    c, entropy_bits, identity, ket, kron_vec, matrix_exponential, max_abs, partial_trace, zeros, BasisLabel, CMatrix,
    CVector, DensityMatrix, Unitary, DIMS_FULL, TWO_PI,
};

pub type GTensor = [[f64; 3]; 3];

/// `g(mS) = 1 − γe/(γN Δ) (2 − 3|mS|) A` with `A = diag(aN, aN, 0)`.
pub fn effective_g(ms: i8, k: &SpinConstants) -> Result<GTensor> {
    if !(-1..=1).contains(&ms) {
        return Err(NvError::InvalidArgument(format!("mS = {ms}")));
    }
    let f = k.gamma_e_hz_per_g / (k.gamma_n_hz_per_g * k.delta_hz) * (2.0 - 3.0 * ms.abs() as f64);
    let mut g = [[0.0; 3]; 3];
    for (i, row) in g.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    g[0][0] -= f * k.a_n_hz;
    g[1][1] -= f * k.a_n_hz;
    Ok(g)
}

/// Nuclear precession in `mS = 0` for a field at polar angle `theta` from the NV axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuclearRabiParams {
    pub omega_x_hz: f64,
    pub omega_z_hz: f64,
}

impl NuclearRabiParams {
    pub fn new(field_g: f64, theta: f64, k: &SpinConstants) -> Result<Self> {
        if field_g == 0.0 || !field_g.is_finite() || !theta.is_finite() {
            return Err(NvError::InvalidArgument("nuclear drive needs a finite nonzero field".into()));
        }
        let enh = 1.0 - 2.0 * k.gamma_e_hz_per_g * k.a_n_hz / (k.gamma_n_hz_per_g * k.delta_hz);
        Ok(NuclearRabiParams {
            omega_x_hz: k.gamma_n_hz_per_g * field_g * theta.sin() * enh,
            omega_z_hz: k.gamma_n_hz_per_g * field_g * theta.cos(),
        })
    }

    pub fn omega_hz(&self) -> f64 {
        self.omega_x_hz.hypot(self.omega_z_hz)
    }

    pub fn contrast(&self) -> f64 {
        let o = self.omega_hz();
        1.0 - (self.omega_z_hz / o).powi(2)
    }

    /// Time of the first population minimum.
    pub fn pi_time(&self) -> f64 {
        0.5 / self.omega_hz()
    }

    /// `H = ½ [[ωz, ωx], [ωx, −ωz]]` in the `(+1/2, −1/2)` basis.
    pub fn hamiltonian(&self) -> CMatrix {
        let mut h = zeros(2);
        h[(0, 0)] = c(0.5 * self.omega_z_hz, 0.0);
        h[(1, 1)] = c(-0.5 * self.omega_z_hz, 0.0);
        h[(0, 1)] = c(0.5 * self.omega_x_hz, 0.0);
        h[(1, 0)] = c(0.5 * self.omega_x_hz, 0.0);
        h
    }
}

/// Population of `|mS=0, mI=−1/2⟩` after time `t`, starting there.
pub fn nuclear_rabi(field_g: f64, theta: f64, k: &SpinConstants, t: f64) -> Result<f64> {
    let p = NuclearRabiParams::new(field_g, theta, k)?;
    let o = p.omega_hz();
    let half = std::f64::consts::PI * o * t;
    Ok(half.cos().powi(2) + (p.omega_z_hz / o).powi(2) * half.sin().powi(2))
}

/// Same population from the 2×2 propagator.
pub fn nuclear_rabi_exact(field_g: f64, theta: f64, k: &SpinConstants, t: f64) -> Result<f64> {
    let p = NuclearRabiParams::new(field_g, theta, k)?;
    let u = matrix_exponential(&p.hamiltonian(), t)?;
    Ok(u.matrix()[(1, 1)].norm_sqr())
}

fn step_electron(plus: &str, minus: &str) -> String {
    let mut s = String::new();
    for d in ["A", "B"] {
        s += &format!("pi {d} 0+ phase={plus} if mI=+1/2@{d}\n");
        s += &format!("pi {d} 0- phase={minus} if mI=-1/2@{d}\n");
    }
    s
}

fn step_nuclear(angle: &str) -> String {
    ["A", "B"]
        .iter()
        .map(|d| format!("{angle} {d} n phase=x if mS=0@{d}\n"))
        .collect()
}

/// The three store steps; the nuclear rotation angle is `2 asin(√contrast)`.
/// The second electron step uses phase π on the `0↔−1` pulses so all four thermal
/// branches leave the nuclei with the same relative phase.
pub fn swap_steps(contrast: f64) -> Result<[PulseSequence; 3]> {
    if !(0.0..=1.0).contains(&contrast) {
        return Err(NvError::InvalidArgument(format!("contrast {contrast} outside [0, 1]")));
    }
    let angle = if contrast == 1.0 {
        "pi".to_string()
    } else {
        format!("rot({:e}rad)", 2.0 * contrast.sqrt().asin())
    };
    Ok([
        parse_sequence(&step_electron("x", "x"))?,
        parse_sequence(&step_nuclear(&angle))?,
        parse_sequence(&step_electron("x", "3.141592653589793rad"))?,
    ])
}

pub fn swap_sequence(contrast: f64) -> Result<PulseSequence> {
    let [a, b, c] = swap_steps(contrast)?;
    Ok(a.then(&b).then(&c))
}

/// Retrieval: the store steps in mirrored order.
pub fn retrieve_sequence(contrast: f64) -> Result<PulseSequence> {
    let [a, b, c] = swap_steps(contrast)?;
    Ok(c.then(&b).then(&a))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageResult {
    pub stored: DensityMatrix,
    /// Electron pair state before storage, in the 9-dim space.
    pub reference: DensityMatrix,
    /// Best Bell fidelity of the nuclear pair over the relative phase.
    pub storage_efficiency: f64,
    /// Electron Bell fidelity after an immediate retrieval.
    pub efficiency: f64,
    pub storage_time_s: f64,
    pub contrast: f64,
    unitary: Unitary,
    retrieval: Unitary,
}

/// `ρe ⊗ 1/4` in the 36-dim basis.
pub fn with_thermal_nuclei(rho_e: &DensityMatrix) -> Result<DensityMatrix> {
    if rho_e.dim() != 9 {
        return Err(NvError::Dimension("electron state must be 9-dim".into()));
    }
    Ok(DensityMatrix::unchecked(electron_nuclear_product(rho_e.matrix(), &(identity(4) * c(0.25, 0.0))), &DIMS_FULL))
}

/// Recombines an electron-pair and a nuclear-pair operator into the interleaved 36-dim order.
pub fn electron_nuclear_product(e: &CMatrix, n: &CMatrix) -> CMatrix {
    let idx = |l: &BasisLabel| {
        let (ea, eb) = (crate::spin::ms_index(l.ms_a), crate::spin::ms_index(l.ms_b));
        let (na, nb) = (crate::spin::mi_index(l.mi_a.unwrap()), crate::spin::mi_index(l.mi_b.unwrap()));
        (ea * 3 + eb, na * 2 + nb)
    };
    let labels = BasisLabel::all(true);
    let mut m = zeros(36);
    for (i, x) in labels.iter().enumerate() {
        let (ei, ni) = idx(x);
        for (j, y) in labels.iter().enumerate() {
            let (ej, nj) = idx(y);
            m[(i, j)] = e[(ei, ej)] * n[(ni, nj)];
        }
    }
    m
}

pub fn electron_part(rho: &DensityMatrix) -> Result<CMatrix> {
    partial_trace(rho.matrix(), &DIMS_FULL, &[0, 2])
}

pub fn nuclear_part(rho: &DensityMatrix) -> Result<CMatrix> {
    partial_trace(rho.matrix(), &DIMS_FULL, &[1, 3])
}

/// `max_φ ⟨Φφ|ρn|Φφ⟩` with `Φφ = (|↑↑⟩ + e^{iφ}|↓↓⟩)/√2`.
pub fn nuclear_bell_fidelity(rho_n: &CMatrix) -> f64 {
    0.5 * (rho_n[(0, 0)].re + rho_n[(3, 3)].re) + rho_n[(0, 3)].norm()
}

/// Distance of a 36-dim state from the product of its electron and nuclear marginals.
pub fn product_residual(rho: &DensityMatrix) -> Result<f64> {
    let prod = electron_nuclear_product(&electron_part(rho)?, &nuclear_part(rho)?);
    Ok(max_abs(&(rho.matrix() - prod)))
}

/// Mutual information between the two nuclei, in bits.
pub fn nuclear_mutual_information(rho: &DensityMatrix) -> Result<f64> {
    let n = nuclear_part(rho)?;
    let a = partial_trace(&n, &[2, 2], &[0])?;
    let b = partial_trace(&n, &[2, 2], &[1])?;
    Ok(entropy_bits(&a) + entropy_bits(&b) - entropy_bits(&n))
}

/// `Tr[ρ σ]`, the fidelity when `σ` is pure.
fn bell_fidelity(rho: &CMatrix, reference: &DensityMatrix) -> f64 {
    (rho * reference.matrix()).trace().re
}

/// Stores `rho_e` (electron pair, nuclei thermal) with nuclear π contrast `contrast`.
pub fn swap_store(rho_e: &DensityMatrix, system: &SpinSystem, contrast: f64) -> Result<StorageResult> {
    let rho = with_thermal_nuclei(rho_e)?;
    let seq = swap_sequence(contrast)?;
    let unitary = compile(&seq, system, &CompileOptions::full())?.unitary();
    let stored = rho.evolve(&unitary);
    let retrieval = compile(&retrieve_sequence(contrast)?, system, &CompileOptions::full())?.unitary();
    let storage_efficiency = nuclear_bell_fidelity(&nuclear_part(&stored)?);
    let mut res = StorageResult {
        stored,
        reference: rho_e.clone(),
        storage_efficiency,
        efficiency: 0.0,
        storage_time_s: 0.0,
        contrast,
        unitary,
        retrieval,
    };
    let back = swap_retrieve(&res)?;
    res.efficiency = bell_fidelity(back.matrix(), rho_e);
    Ok(res)
}

/// Runs the mirrored sequence and returns the electron pair state.
pub fn swap_retrieve(stored: &StorageResult) -> Result<DensityMatrix> {
    if stored.stored.dim() != 36 || stored.unitary.dim() != 36 {
        return Err(NvError::InvalidState("retrieval needs a stored 36-dim state".into()));
    }
    let back = stored.stored.evolve(&stored.retrieval);
    Ok(DensityMatrix::unchecked(electron_part(&back)?, &[3, 3]))
}

/// Ideal retrieval applied to an arbitrary 36-dim state; fails when the nuclei hold no coherence.
pub fn retrieve_raw(rho: &DensityMatrix, system: &SpinSystem) -> Result<DensityMatrix> {
    if rho.dim() != 36 {
        return Err(NvError::Dimension("retrieval acts on the 36-dim space".into()));
    }
    let n = nuclear_part(rho)?;
    if nuclear_bell_fidelity(&n) < 0.5 + 1e-9 {
        return Err(NvError::InvalidState("no stored nuclear coherence to retrieve".into()));
    }
    let u = compile(&retrieve_sequence(1.0)?, system, &CompileOptions::full())?.unitary();
    Ok(DensityMatrix::unchecked(electron_part(&rho.evolve(&u))?, &[3, 3]))
}

/// Electron states `|−−⟩ ± i|++⟩`-type Bell input used by the storage examples.
pub fn bell_input() -> DensityMatrix {
    let s = 1.0 / 2f64.sqrt();
    let mut v: CVector = ket(9, BasisLabel::electron(1, 1).index()) * c(s, 0.0);
    v += ket(9, BasisLabel::electron(-1, -1).index()) * c(s, 0.0);
    DensityMatrix::from_pure(&v, &[3, 3]).expect("normalized")
}

/// Round-trip efficiency as a function of the nuclear π contrast.
pub fn round_trip_efficiency(system: &SpinSystem, contrast: f64) -> Result<f64> {
    Ok(swap_store(&bell_input(), system, contrast)?.efficiency)
}

/// Nuclear π contrast reproducing a measured round-trip efficiency.
pub fn fit_contrast(system: &SpinSystem, target_efficiency: f64) -> Result<f64> {
    bisect(
        |c| round_trip_efficiency(system, c).map(|e| e - target_efficiency).unwrap_or(f64::NAN),
        0.5,
        1.0,
        1e-9,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageDecay {
    pub t1_s: f64,
    pub nuclear_t2_star_s: f64,
}

impl Default for StorageDecay {
    fn default() -> Self {
        StorageDecay {
            t1_s: 1.12e-3,
            nuclear_t2_star_s: 7.25e-3,
        }
    }
}

impl StorageDecay {
    fn floor(&self, t: f64) -> f64 {
        (-(t / self.nuclear_t2_star_s).powi(2)).exp()
    }

    /// `η0 exp(−t/T1) exp(−(t/T2*)²)`.
    pub fn efficiency(&self, eta0: f64, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(NvError::InvalidArgument("storage time must be non-negative".into()));
        }
        let t1 = if self.t1_s.is_finite() { (-t / self.t1_s).exp() } else { 1.0 };
        Ok(eta0 * t1 * self.floor(t))
    }

    /// Jump-process estimate: each electron relaxes at rate `1/(2 T1)` to a random other
    /// level, after which the hyperfine field imprints an extra nuclear phase.
    pub fn efficiency_jump(&self, eta0: f64, times: &[f64], a_n_hz: f64, n_traj: usize, seed: u64) -> Result<Vec<f64>> {
        if times.iter().any(|t| *t < 0.0) || n_traj == 0 {
            return Err(NvError::InvalidArgument("need non-negative times and trajectories".into()));
        }
        let rate = 0.5 / self.t1_s;
        let tmax = times.iter().cloned().fold(0.0, f64::max);
        let chunks: Vec<Vec<f64>> = (0..n_traj)
            .collect::<Vec<_>>()
            .par_chunks(128)
            .map(|idx| {
                let mut acc = vec![0.0; times.len()];
                for &k in idx {
                    let mut rng = substream(seed, k as u64);
                    // per electron: jump times and level after each jump
                    let mut tracks = Vec::new();
                    for _ in 0..2 {
                        let start: i8 = if rng.gen::<bool>() { 1 } else { -1 };
                        let mut jumps = Vec::new();
                        let mut t = 0.0;
                        let mut level = start;
                        if rate > 0.0 && rate.is_finite() {
                            let exp = Exp::new(rate).expect("positive rate");
                            loop {
                                t += exp.sample(&mut rng);
                                if t > tmax {
                                    break;
                                }
                                let others: Vec<i8> = [-1i8, 0, 1].into_iter().filter(|m| *m != level).collect();
                                level = others[rng.gen_range(0..2)];
                                jumps.push((t, level));
                            }
                        }
                        tracks.push((start, jumps));
                    }
                    for (i, &t) in times.iter().enumerate() {
                        let mut phase = 0.0;
                        for (start, jumps) in &tracks {
                            let (mut t0, mut m0) = (0.0, *start);
                            for &(tj, mj) in jumps.iter().take_while(|(tj, _)| *tj <= t) {
                                phase += TWO_PI * a_n_hz * (m0 - start) as f64 * (tj - t0);
                                t0 = tj;
                                m0 = mj;
                            }
                            phase += TWO_PI * a_n_hz * (m0 - start) as f64 * (t - t0);
                        }
                        acc[i] += phase.cos();
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; times.len()];
        for ch in &chunks {
            for (t, v) in total.iter_mut().zip(ch) {
                *t += v;
            }
        }
        Ok(times
            .iter()
            .zip(total)
            .map(|(t, s)| eta0 * s / n_traj as f64 * self.floor(*t))
            .collect())
    }

    /// Fits `(η0, T1)` with the nuclear floor held at `nuclear_t2_star_s`.
    pub fn fit(&self, times: &[f64], eff: &[f64]) -> Result<(f64, f64)> {
        if times.len() != eff.len() || times.len() < 3 {
            return Err(NvError::InvalidArgument("need at least three matching samples".into()));
        }
        let res = levenberg_marquardt(
            |p: &[f64]| {
                times
                    .iter()
                    .zip(eff)
                    .map(|(t, y)| p[0] * (-t / p[1]).exp() * self.floor(*t) - y)
                    .collect()
            },
            &[eff[0], self.t1_s],
            200,
        )?;
        Ok((res.params[0], res.params[1]))
    }
}

/// Stored state after `t` of storage under the exponential model.
pub fn storage_decay(stored: &StorageResult, t: f64, model: &StorageDecay) -> Result<f64> {
    model.efficiency(stored.efficiency, t)
}

/// Electron ⊗ nucleus product ket of one defect in the 6-dim space.
pub fn single_ket(ms: i8, two_mi: i8) -> CVector {
    kron_vec(
        &ket(3, crate::spin::ms_index(ms)),
        &ket(2, crate::spin::mi_index(two_mi)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_single_hamiltonian, FieldConfig, NvOrientation};
    use crate::spin::eigh;

    fn k() -> SpinConstants {
        SpinConstants::default()
    }

    #[test]
    fn g_tensor_is_identity_without_hyperfine() {
        let mut kk = k();
        kk.a_n_hz = 0.0;
        for ms in [-1, 0, 1] {
            let g = effective_g(ms, &kk).unwrap();
            for (i, row) in g.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn g_tensor_prefactor_ratio() {
        let g0 = effective_g(0, &k()).unwrap();
        let g1 = effective_g(1, &k()).unwrap();
        assert!(((g0[0][0] - 1.0) / (g1[0][0] - 1.0) + 2.0).abs() < 1e-12);
        assert_eq!(g0[2][2], 1.0);
        assert!(effective_g(2, &k()).is_err());
    }

    #[test]
    fn g_tensor_matches_perturbation_of_single_hamiltonian() {
        let kk = k();
        let o = NvOrientation::nv_a();
        let frame = o.frame();
        for b in [20.0, 40.0, 80.0] {
            let field = FieldConfig::new(b, frame[0]).unwrap();
            let h = build_single_hamiltonian(&o, &field, &kk);
            let (vals, vecs) = eigh(&h);
            // the two states with most mS = 0 weight
            let mut w: Vec<(f64, f64)> = (0..6)
                .map(|n| {
                    let p = vecs[(2, n)].norm_sqr() + vecs[(3, n)].norm_sqr();
                    (p, vals[n])
                })
                .collect();
            w.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let split = (w[0].1 - w[1].1).abs();
            let g = effective_g(0, &kk).unwrap();
            let expect = (kk.gamma_n_hz_per_g * b * g[0][0]).abs();
            assert!((split / expect - 1.0).abs() < 0.05, "B={b}: {split} vs {expect}");
        }
    }

    #[test]
    fn rabi_closed_form_matches_propagator() {
        let kk = k();
        for b in [10.0, 40.0, 100.0] {
            for theta in [0.3, 54.5f64.to_radians(), 1.2, std::f64::consts::FRAC_PI_2] {
                let p = NuclearRabiParams::new(b, theta, &kk).unwrap();
                assert!((p.omega_hz().powi(2) / (p.omega_x_hz.powi(2) + p.omega_z_hz.powi(2)) - 1.0).abs() < 1e-14);
                for i in 0..25 {
                    let t = i as f64 * 0.13 * p.pi_time();
                    let a = nuclear_rabi(b, theta, &kk, t).unwrap();
                    let e = nuclear_rabi_exact(b, theta, &kk, t).unwrap();
                    assert!((a - e).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn perpendicular_field_gives_unit_contrast() {
        let p = NuclearRabiParams::new(40.0, std::f64::consts::FRAC_PI_2, &k()).unwrap();
        assert!(nuclear_rabi(40.0, std::f64::consts::FRAC_PI_2, &k(), p.pi_time()).unwrap().abs() < 1e-12);
        assert_eq!(nuclear_rabi(40.0, 0.7, &k(), 0.0).unwrap(), 1.0);
        assert!(NuclearRabiParams::new(0.0, 0.7, &k()).is_err());
    }

    #[test]
    fn tilted_contrast() {
        let th = 54.5f64.to_radians();
        let p = NuclearRabiParams::new(40.0, th, &k()).unwrap();
        let min = nuclear_rabi_exact(40.0, th, &k(), p.pi_time()).unwrap();
        assert!((1.0 - min - p.contrast()).abs() < 1e-10);
        assert!(p.contrast() < 1.0 && p.contrast() > 0.99);
    }

    #[test]
    fn thermal_branches_follow_swap_tables() {
        let sys = SpinSystem::reference(40.0);
        let g: Vec<Unitary> = swap_steps(1.0)
            .unwrap()
            .iter()
            .map(|s| compile(s, &sys, &CompileOptions::full()).unwrap().unitary())
            .collect();
        let apply = |psi: &CVector, range: std::ops::Range<usize>| {
            let mut v = psi.clone();
            for u in &g[range] {
                v = u.matrix() * v;
            }
            v
        };
        let st = |ea: i8, na: i8, eb: i8, nb: i8| ket(36, BasisLabel::full(ea, na, eb, nb).index());
        let support = |v: &CVector| -> Vec<usize> { (0..36).filter(|i| v[*i].norm() > 1e-9).collect() };
        let sorted = |mut v: Vec<usize>| {
            v.sort();
            v
        };
        for (na, nb) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let psi = (st(1, na, 1, nb) + st(-1, na, -1, nb)) * c(1.0 / 2f64.sqrt(), 0.0);
            let s1 = apply(&psi, 0..1);
            let lev = |m: i8, n: i8| if n > 0 { if m == 1 { 0 } else { m } } else if m == -1 { 0 } else { m };
            let want1 = sorted(vec![
                BasisLabel::full(lev(1, na), na, lev(1, nb), nb).index(),
                BasisLabel::full(lev(-1, na), na, lev(-1, nb), nb).index(),
            ]);
            assert_eq!(support(&s1), want1);
            let s3 = apply(&psi, 0..3);
            // electron factorizes, nuclei end in ↑↑/↓↓
            let e_a = if na > 0 { -1 } else { 1 };
            let e_b = if nb > 0 { -1 } else { 1 };
            let want3 = sorted(vec![
                BasisLabel::full(e_a, 1, e_b, 1).index(),
                BasisLabel::full(e_a, -1, e_b, -1).index(),
            ]);
            assert_eq!(support(&s3), want3, "branch {na} {nb}");
        }
    }

    #[test]
    fn ideal_store_and_retrieve() {
        let sys = SpinSystem::reference(40.0);
        let res = swap_store(&bell_input(), &sys, 1.0).unwrap();
        assert!((res.storage_efficiency - 1.0).abs() < 1e-9);
        assert!((res.efficiency - 1.0).abs() < 1e-9);
        assert!(product_residual(&res.stored).unwrap() < 1e-9);
        assert!((nuclear_mutual_information(&res.stored).unwrap() - 2.0).abs() < 1e-9);
        let back = swap_retrieve(&res).unwrap();
        assert!(max_abs(&(back.matrix() - bell_input().matrix())) < 1e-9);
    }

    #[test]
    fn round_trip_is_identity_on_bell_subspace() {
        let sys = SpinSystem::reference(40.0);
        let u = compile(&swap_sequence(1.0).unwrap(), &sys, &CompileOptions::full()).unwrap().unitary();
        let r = compile(&retrieve_sequence(1.0).unwrap(), &sys, &CompileOptions::full()).unwrap().unitary();
        let uu = r.after(&u);
        // on span{|++⟩, |−−⟩} ⊗ |nA nB⟩ the round trip is a phase per nuclear configuration
        for (na, nb) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let p = BasisLabel::full(1, na, 1, nb).index();
            let m = BasisLabel::full(-1, na, -1, nb).index();
            let ph = uu.matrix()[(p, p)];
            assert!((ph.norm() - 1.0).abs() < 1e-9);
            assert!((uu.matrix()[(m, m)] - ph).norm() < 1e-9);
            assert!(uu.matrix()[(m, p)].norm() < 1e-9 && uu.matrix()[(p, m)].norm() < 1e-9);
        }
    }

    #[test]
    fn retrieval_without_store_is_rejected() {
        let sys = SpinSystem::reference(40.0);
        let fresh = with_thermal_nuclei(&bell_input()).unwrap();
        assert!(matches!(retrieve_raw(&fresh, &sys), Err(NvError::InvalidState(_))));
        let res = swap_store(&bell_input(), &sys, 1.0).unwrap();
        let back = retrieve_raw(&res.stored, &sys).unwrap();
        assert!((bell_fidelity(back.matrix(), &bell_input()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn electron_dephasing_during_storage_is_harmless() {
        let sys = SpinSystem::reference(40.0);
        let res = swap_store(&bell_input(), &sys, 1.0).unwrap();
        // kill electron coherences only
        let mut m = res.stored.matrix().clone();
        let labels = BasisLabel::all(true);
        for (i, x) in labels.iter().enumerate() {
            for (j, y) in labels.iter().enumerate() {
                if x.ms_a != y.ms_a || x.ms_b != y.ms_b {
                    m[(i, j)] = c(0.0, 0.0);
                }
            }
        }
        let mut dephased = res.clone();
        dephased.stored = DensityMatrix::unchecked(m, &DIMS_FULL);
        let back = swap_retrieve(&dephased).unwrap();
        assert!((bell_fidelity(back.matrix(), &bell_input()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contrast_fit_reaches_measured_efficiency() {
        let sys = SpinSystem::reference(40.0);
        let c = fit_contrast(&sys, 0.41).unwrap();
        assert!((round_trip_efficiency(&sys, c).unwrap() - 0.41).abs() < 1e-6);
        assert!(c < 1.0);
    }

    #[test]
    fn decay_models() {
        let m = StorageDecay::default();
        assert_eq!(m.efficiency(0.8, 0.0).unwrap(), 0.8);
        let inf = StorageDecay {
            t1_s: f64::INFINITY,
            ..m
        };
        assert!((inf.efficiency(1.0, 7.25e-3).unwrap() - (-1f64).exp()).abs() < 1e-12);
        let times: Vec<f64> = (0..31).map(|i| i as f64 * 1e-4).collect();
        let eff = m.efficiency_jump(1.0, &times, 3.05e6, 4000, 7).unwrap();
        let (eta0, t1) = m.fit(&times, &eff).unwrap();
        assert!((t1 / 1.12e-3 - 1.0).abs() < 0.1, "{t1}");
        assert!((eta0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn single_ket_is_normalized() {
        let v = single_ket(0, -1);
        assert!((v.norm() - 1.0).abs() < 1e-15);
    }
}

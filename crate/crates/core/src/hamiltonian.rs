//! Single-defect and pair Hamiltonians, effective hyperfine fields and dipolar coupling.
//!
//! Each defect Hamiltonian is written in its own frame (z along the NV axis):
//! `H = Δ Sz² + γe B·S + aN S·I + γN B·I`.

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::spin::{c, eigh, embed, identity, kron, kron_all, spin1, spin_half, CMatrix, CVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinConstants {
    pub delta_hz: f64,
    pub a_n_hz: f64,
    pub gamma_e_hz_per_g: f64,
    pub gamma_n_hz_per_g: f64,
    pub dipolar_prefactor_hz_nm3: f64,
}

impl Default for SpinConstants {
    fn default() -> Self {
        SpinConstants {
            delta_hz: 2.87e9,
            a_n_hz: 3.05e6,
            gamma_e_hz_per_g: 2.8025e6,
            gamma_n_hz_per_g: -431.6,
            dipolar_prefactor_hz_nm3: 52.04e6,
        }
    }
}

pub type Vec3 = [f64; 3];

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: &Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvOrientation {
    pub axis: Vec3,
    pub label: String,
}

impl NvOrientation {
    pub fn new(axis: Vec3, label: &str) -> Result<Self> {
        let n = norm(&axis);
        if !(n > 0.0) || !n.is_finite() {
            return Err(NvError::InvalidArgument("NV axis must be nonzero".into()));
        }
        Ok(NvOrientation {
            axis: normalize(&axis),
            label: label.to_string(),
        })
    }

    /// NV A along [111].
    pub fn nv_a() -> Self {
        NvOrientation::new([1.0, 1.0, 1.0], "[111]").unwrap()
    }

    /// NV B along [1 -1 -1].
    pub fn nv_b() -> Self {
        NvOrientation::new([1.0, -1.0, -1.0], "[1-1-1]").unwrap()
    }

    /// Rows are the local x, y, z axes expressed in lab coordinates.
    pub fn frame(&self) -> [Vec3; 3] {
        let z = self.axis;
        let reference = if dot(&z, &[0.0, 0.0, 1.0]).abs() > 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let x = normalize(&sub(&reference, &scale(&z, dot(&reference, &z))));
        let y = cross(&z, &x);
        [x, y, z]
    }

    pub fn to_local(&self, v: &Vec3) -> Vec3 {
        let f = self.frame();
        [dot(&f[0], v), dot(&f[1], v), dot(&f[2], v)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub magnitude_g: f64,
    pub direction: Vec3,
}

impl FieldConfig {
    pub fn new(magnitude_g: f64, direction: Vec3) -> Result<Self> {
        if magnitude_g < 0.0 || !magnitude_g.is_finite() {
            return Err(NvError::InvalidArgument("field magnitude must be >= 0".into()));
        }
        Ok(FieldConfig {
            magnitude_g,
            direction: normalize(&direction),
        })
    }

    pub fn along(magnitude_g: f64, orientation: &NvOrientation) -> Self {
        FieldConfig {
            magnitude_g,
            direction: orientation.axis,
        }
    }

    /// Polar angle from the NV-A axis; azimuth zero points towards the part of the
    /// NV-B axis perpendicular to NV A.
    pub fn from_angles(
        magnitude_g: f64,
        polar_deg: f64,
        azimuth_deg: f64,
        a: &NvOrientation,
        b: &NvOrientation,
    ) -> Result<Self> {
        let z = a.axis;
        let mut e1 = sub(&b.axis, &scale(&z, dot(&b.axis, &z)));
        if norm(&e1) < 1e-9 {
            e1 = a.frame()[0];
        }
        let e1 = normalize(&e1);
        let e2 = cross(&z, &e1);
        let (th, ph) = (polar_deg.to_radians(), azimuth_deg.to_radians());
        let d = [
            z[0] * th.cos() + th.sin() * (ph.cos() * e1[0] + ph.sin() * e2[0]),
            z[1] * th.cos() + th.sin() * (ph.cos() * e1[1] + ph.sin() * e2[1]),
            z[2] * th.cos() + th.sin() * (ph.cos() * e1[2] + ph.sin() * e2[2]),
        ];
        FieldConfig::new(magnitude_g, d)
    }

    pub fn vector(&self) -> Vec3 {
        scale(&self.direction, self.magnitude_g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub r_nm: f64,
    pub n: Vec3,
}

/// Electron-only Hamiltonian (3×3) of one defect.
pub fn electron_hamiltonian(o: &NvOrientation, field: &FieldConfig, k: &SpinConstants) -> CMatrix {
    let s = spin1();
    let b = o.to_local(&field.vector());
    let bs = s.dot(&scale(&b, k.gamma_e_hz_per_g));
    &s.z * &s.z * c(k.delta_hz, 0.0) + bs
}

/// Electron ⊗ nucleus Hamiltonian (6×6) of one defect, including hyperfine flip-flop terms.
pub fn build_single_hamiltonian(
    o: &NvOrientation,
    field: &FieldConfig,
    k: &SpinConstants,
) -> CMatrix {
    let s = spin1();
    let i = spin_half();
    let b = o.to_local(&field.vector());
    let he = kron(&electron_hamiltonian(o, field, k), &identity(2));
    let hf = (kron(&s.x, &i.x) + kron(&s.y, &i.y) + kron(&s.z, &i.z)) * c(k.a_n_hz, 0.0);
    let hn = kron(&identity(3), &i.dot(&scale(&b, k.gamma_n_hz_per_g)));
    he + hf + hn
}

/// Electron eigenstates labelled by the mS value they overlap most; returned in the
/// order `(+1, 0, -1)` as `(energy, eigenvector)`.
pub fn electron_eigenstates(
    o: &NvOrientation,
    field: &FieldConfig,
    k: &SpinConstants,
) -> [(f64, CVector); 3] {
    let (vals, vecs) = eigh(&electron_hamiltonian(o, field, k));
    let mut out: [(f64, CVector); 3] = std::array::from_fn(|_| (0.0, CVector::zeros(3)));
    let mut used = [false; 3];
    for level in 0..3 {
        let mut best = (0usize, -1.0);
        for col in 0..3 {
            if used[col] {
                continue;
            }
            let w = vecs[(level, col)].norm_sqr();
            if w > best.1 {
                best = (col, w);
            }
        }
        used[best.0] = true;
        let mut v: CVector = vecs.column(best.0).into_owned();
        let ph = v[level].arg();
        v *= num_complex::Complex64::from_polar(1.0, -ph);
        out[level] = (vals[best.0], v);
    }
    out
}

/// `⟨mS|S|mS⟩` in the local frame for the labelled eigenstates `(+1, 0, -1)`.
pub fn spin_expectations(o: &NvOrientation, field: &FieldConfig, k: &SpinConstants) -> [Vec3; 3] {
    let s = spin1();
    let states = electron_eigenstates(o, field, k);
    std::array::from_fn(|i| {
        let v = &states[i].1;
        let comp = |m: &CMatrix| (v.adjoint() * m * v)[(0, 0)].re;
        [comp(&s.x), comp(&s.y), comp(&s.z)]
    })
}

pub fn level_index(ms: i8) -> Result<usize> {
    match ms {
        1 => Ok(0),
        0 => Ok(1),
        -1 => Ok(2),
        _ => Err(NvError::InvalidArgument(format!("mS = {ms} is not one of +1, 0, -1"))),
    }
}

/// Field `aN ⟨mS|S|mS⟩` seen by the nucleus, in the local frame [Hz].
pub fn effective_hyperfine_field(
    ms: i8,
    o: &NvOrientation,
    field: &FieldConfig,
    k: &SpinConstants,
) -> Result<Vec3> {
    let e = spin_expectations(o, field, k)[level_index(ms)?];
    Ok(scale(&e, k.a_n_hz))
}

pub fn angular_factor(a: &Vec3, b: &Vec3, n: &Vec3) -> f64 {
    dot(a, b) - 3.0 * dot(a, n) * dot(b, n)
}

/// Secular zz coefficient of the dipolar interaction [Hz].
pub fn dipolar_coupling(
    geometry: &PairGeometry,
    a: &NvOrientation,
    b: &NvOrientation,
    k: &SpinConstants,
) -> Result<f64> {
    if !(geometry.r_nm > 0.0) {
        return Err(NvError::InvalidArgument("pair distance must be positive".into()));
    }
    let n = normalize(&geometry.n);
    Ok(k.dipolar_prefactor_hz_nm3 / geometry.r_nm.powi(3) * angular_factor(&a.axis, &b.axis, &n))
}

fn sphere_direction(theta: f64, phi: f64) -> Vec3 {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Maximum of the absolute angular factor over unit vectors, scanned on a
/// polar/azimuthal grid of the given resolution.
pub fn max_angular_factor(a: &NvOrientation, b: &NvOrientation, resolution_deg: f64) -> (f64, Vec3) {
    let nt = (180.0 / resolution_deg).round() as usize;
    let np = (360.0 / resolution_deg).round() as usize;
    let mut best = (0.0, [0.0, 0.0, 1.0]);
    for it in 0..=nt {
        let th = (it as f64 * resolution_deg).to_radians();
        for ip in 0..np {
            let ph = (ip as f64 * resolution_deg).to_radians();
            let n = sphere_direction(th, ph);
            let f = angular_factor(&a.axis, &b.axis, &n).abs();
            if f > best.0 {
                best = (f, n);
            }
        }
    }
    best
}

/// Largest distance compatible with a measured coupling magnitude [nm].
pub fn max_distance_from_coupling(
    nu_dip_hz: f64,
    a: &NvOrientation,
    b: &NvOrientation,
    k: &SpinConstants,
    resolution_deg: f64,
) -> Result<f64> {
    if !(nu_dip_hz > 0.0) {
        return Err(NvError::InvalidArgument("coupling must be positive".into()));
    }
    let (f, _) = max_angular_factor(a, b, resolution_deg);
    Ok((f * k.dipolar_prefactor_hz_nm3 / nu_dip_hz).cbrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subspace {
    ElectronOnly,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub constants: SpinConstants,
    pub orientation_a: NvOrientation,
    pub orientation_b: NvOrientation,
    pub field: FieldConfig,
    /// Secular single-quantum coupling [Hz].
    pub nu_dip_hz: f64,
    pub geometry: Option<PairGeometry>,
}

pub const NU_DIP_REFERENCE_HZ: f64 = 4.93e3;

impl SpinSystem {
    pub fn new(
        constants: SpinConstants,
        orientation_a: NvOrientation,
        orientation_b: NvOrientation,
        field: FieldConfig,
        nu_dip_hz: Option<f64>,
        geometry: Option<PairGeometry>,
    ) -> Result<Self> {
        let nu = match (nu_dip_hz, &geometry) {
            (Some(nu), Some(g)) => {
                let from_geo = dipolar_coupling(g, &orientation_a, &orientation_b, &constants)?;
                if (from_geo - nu).abs() > 0.01 * nu.abs().max(from_geo.abs()) {
                    return Err(NvError::InvalidArgument(format!(
                        "nu_dip {nu} Hz disagrees with geometry ({from_geo} Hz)"
                    )));
                }
                nu
            }
            (Some(nu), None) => nu,
            (None, Some(g)) => dipolar_coupling(g, &orientation_a, &orientation_b, &constants)?,
            (None, None) => {
                return Err(NvError::InvalidArgument("need nu_dip or geometry".into()))
            }
        };
        Ok(SpinSystem {
            constants,
            orientation_a,
            orientation_b,
            field,
            nu_dip_hz: nu,
            geometry,
        })
    }

    /// Field of the given magnitude along NV A, coupling 4.93 kHz.
    pub fn reference(field_g: f64) -> Self {
        let a = NvOrientation::nv_a();
        let field = FieldConfig::along(field_g, &a);
        SpinSystem::new(
            SpinConstants::default(),
            a,
            NvOrientation::nv_b(),
            field,
            Some(NU_DIP_REFERENCE_HZ),
            None,
        )
        .unwrap()
    }

    pub fn with_nu_dip(&self, nu: f64) -> Self {
        let mut s = self.clone();
        s.nu_dip_hz = nu;
        s.geometry = None;
        s
    }

    pub fn nu_dip_dq_hz(&self) -> f64 {
        4.0 * self.nu_dip_hz
    }

    /// Electron level energies `(+1, 0, -1)` of defect A (`true`) or B.
    pub fn level_energies(&self, defect_a: bool) -> [f64; 3] {
        let o = if defect_a {
            &self.orientation_a
        } else {
            &self.orientation_b
        };
        let st = electron_eigenstates(o, &self.field, &self.constants);
        [st[0].0, st[1].0, st[2].0]
    }
}

/// Secular pair Hamiltonian on the 9- or 36-dimensional space.
pub fn build_pair_hamiltonian(system: &SpinSystem, subspace: Subspace) -> CMatrix {
    let k = &system.constants;
    let s = spin1();
    match subspace {
        Subspace::ElectronOnly => {
            let ha = electron_hamiltonian(&system.orientation_a, &system.field, k);
            let hb = electron_hamiltonian(&system.orientation_b, &system.field, k);
            let dims = [3, 3];
            embed(&ha, 0, &dims) + embed(&hb, 1, &dims) + kron(&s.z, &s.z) * c(system.nu_dip_hz, 0.0)
        }
        Subspace::Full => {
            let ha = build_single_hamiltonian(&system.orientation_a, &system.field, k);
            let hb = build_single_hamiltonian(&system.orientation_b, &system.field, k);
            let i2 = identity(2);
            kron(&ha, &identity(6))
                + kron(&identity(6), &hb)
                + kron_all(&[&s.z, &i2, &s.z, &i2]) * c(system.nu_dip_hz, 0.0)
        }
    }
}

/// Electron-only pair Hamiltonian with the complete dipolar tensor.
pub fn build_pair_hamiltonian_full_dipolar(
    system: &SpinSystem,
    geometry: &PairGeometry,
) -> Result<CMatrix> {
    let k = &system.constants;
    if !(geometry.r_nm > 0.0) {
        return Err(NvError::InvalidArgument("pair distance must be positive".into()));
    }
    let s = spin1();
    let ha = electron_hamiltonian(&system.orientation_a, &system.field, k);
    let hb = electron_hamiltonian(&system.orientation_b, &system.field, k);
    let lab = |o: &NvOrientation| -> [CMatrix; 3] {
        let f = o.frame();
        std::array::from_fn(|j| &s.x * c(f[0][j], 0.0) + &s.y * c(f[1][j], 0.0) + &s.z * c(f[2][j], 0.0))
    };
    let sa = lab(&system.orientation_a);
    let sb = lab(&system.orientation_b);
    let n = normalize(&geometry.n);
    let j = k.dipolar_prefactor_hz_nm3 / geometry.r_nm.powi(3);
    let mut hd = CMatrix::zeros(9, 9);
    for p in 0..3 {
        hd += kron(&sa[p], &sb[p]);
    }
    let san = &sa[0] * c(n[0], 0.0) + &sa[1] * c(n[1], 0.0) + &sa[2] * c(n[2], 0.0);
    let sbn = &sb[0] * c(n[0], 0.0) + &sb[1] * c(n[1], 0.0) + &sb[2] * c(n[2], 0.0);
    hd -= kron(&san, &sbn) * c(3.0, 0.0);
    let dims = [3, 3];
    Ok(embed(&ha, 0, &dims) + embed(&hb, 1, &dims) + hd * c(j, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{hermitian_deviation, BasisLabel};
    use approx::assert_relative_eq;

    fn k() -> SpinConstants {
        SpinConstants::default()
    }

    #[test]
    fn zero_field_ms0_doublet() {
        let a = NvOrientation::nv_a();
        let h = build_single_hamiltonian(&a, &FieldConfig::along(0.0, &a), &k());
        assert!(hermitian_deviation(&h) < 1e-12);
        let (vals, _) = eigh(&h);
        let mut low: Vec<f64> = vals.iter().cloned().filter(|e| e.abs() < 1e8).collect();
        low.sort_by(f64::total_cmp);
        assert_eq!(low.len(), 2);
        for e in &low {
            assert!(e.abs() <= k().a_n_hz / 2.0);
        }
        assert!(vals.iter().filter(|e| (*e - k().delta_hz).abs() < 1e7).count() == 4);
    }

    #[test]
    fn aligned_transitions_at_32_gauss() {
        let a = NvOrientation::nv_a();
        let field = FieldConfig::along(32.0, &a);
        let h = build_single_hamiltonian(&a, &field, &k());
        let (vals, _) = eigh(&h);
        // ordering: mS=0 pair, mS=-1 pair, mS=+1 pair
        let zero = (vals[0] + vals[1]) / 2.0;
        let minus = [vals[2], vals[3]];
        let plus = [vals[4], vals[5]];
        let shift = k().gamma_e_hz_per_g * 32.0;
        let fm = (minus[0] + minus[1]) / 2.0 - zero;
        let fp = (plus[0] + plus[1]) / 2.0 - zero;
        assert_relative_eq!(fp, k().delta_hz + shift, max_relative = 1e-5);
        assert_relative_eq!(fm, k().delta_hz - shift, max_relative = 1e-5);
        assert_relative_eq!(plus[1] - plus[0], k().a_n_hz, max_relative = 0.01);
        assert_relative_eq!(minus[1] - minus[0], k().a_n_hz, max_relative = 0.01);
    }

    #[test]
    fn aligned_field_keeps_ms_good() {
        let a = NvOrientation::nv_a();
        let h = electron_hamiltonian(&a, &FieldConfig::along(40.0, &a), &k());
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(h[(i, j)].norm() < 1e-9 * k().delta_hz);
                }
            }
        }
    }

    #[test]
    fn misaligned_nv_b_spin_vectors() {
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        let e = spin_expectations(&b, &FieldConfig::along(40.0, &a), &k());
        assert!((e[0][2] - 0.998).abs() < 5e-4, "{:?}", e[0]);
        assert!((e[2][2] + 0.998).abs() < 5e-4, "{:?}", e[2]);
        assert!(e[1][2].abs() < 1e-3, "{:?}", e[1]);
        // tilt of the mS = +1 spin vector away from the NV axis
        let tilt = (norm(&[e[0][0], e[0][1], 0.0]) / e[0][2]).atan().to_degrees();
        assert!(tilt > 0.5 && tilt < 3.0, "tilt {tilt}");
    }

    #[test]
    fn hyperfine_fields() {
        let a = NvOrientation::nv_a();
        let f = FieldConfig::along(40.0, &a);
        let hp = effective_hyperfine_field(1, &a, &f, &k()).unwrap();
        let hm = effective_hyperfine_field(-1, &a, &f, &k()).unwrap();
        let h0 = effective_hyperfine_field(0, &a, &f, &k()).unwrap();
        assert_relative_eq!(hp[2], k().a_n_hz, epsilon = 1e-6);
        assert_relative_eq!(hm[2], -k().a_n_hz, epsilon = 1e-6);
        assert!(norm(&h0) < 1e-6);
        let hb0 = effective_hyperfine_field(0, &NvOrientation::nv_b(), &f, &k()).unwrap();
        assert!(norm(&hb0) > 1.0 && norm(&hb0) < 0.1 * k().a_n_hz);
        assert!(effective_hyperfine_field(2, &a, &f, &k()).is_err());
    }

    #[test]
    fn dipolar_distance_law_and_angle() {
        let a = NvOrientation::nv_a();
        let perp = normalize(&[1.0, -1.0, 0.0]);
        let g1 = PairGeometry { r_nm: 10.0, n: perp };
        let g2 = PairGeometry { r_nm: 20.0, n: perp };
        let n1 = dipolar_coupling(&g1, &a, &a, &k()).unwrap();
        let n2 = dipolar_coupling(&g2, &a, &a, &k()).unwrap();
        assert_relative_eq!(n1 / n2, 8.0, epsilon = 1e-12);
        let par = PairGeometry { r_nm: 10.0, n: a.axis };
        let np = dipolar_coupling(&par, &a, &a, &k()).unwrap();
        assert_relative_eq!(np / n1, -2.0, epsilon = 1e-12);
        assert!(dipolar_coupling(&PairGeometry { r_nm: 0.0, n: perp }, &a, &a, &k()).is_err());
    }

    #[test]
    fn dipolar_exchange_symmetry() {
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        let g = PairGeometry { r_nm: 25.0, n: normalize(&[0.3, -0.2, 0.9]) };
        let gm = PairGeometry { r_nm: 25.0, n: scale(&g.n, -1.0) };
        assert_relative_eq!(
            dipolar_coupling(&g, &a, &b, &k()).unwrap(),
            dipolar_coupling(&gm, &b, &a, &k()).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn max_angular_factor_brute_force() {
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        // Oracle: random unit vectors, independent of the grid.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut best: f64 = 0.0;
        for _ in 0..200_000 {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if norm(&v) < 1e-3 || norm(&v) > 1.0 {
                continue;
            }
            best = best.max(angular_factor(&a.axis, &b.axis, &normalize(&v)).abs());
        }
        let (f, _) = max_angular_factor(&a, &b, 0.5);
        assert_relative_eq!(f, 5.0 / 3.0, epsilon = 1e-4);
        assert_relative_eq!(best, 5.0 / 3.0, epsilon = 1e-3);
    }

    #[test]
    fn max_distance_checks() {
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        let r = max_distance_from_coupling(4.93e3, &a, &b, &k(), 0.1).unwrap();
        assert!(r > 29.6 * 0.85 && r < 29.6 * 1.15, "r_max {r}");
        let r8 = max_distance_from_coupling(8.0 * 4.93e3, &a, &b, &k(), 0.1).unwrap();
        assert_relative_eq!(r / r8, 2.0, epsilon = 1e-12);
        let coarse = max_distance_from_coupling(4.93e3, &a, &b, &k(), 10.0).unwrap();
        assert!((coarse - r).abs() / r < 0.01);
        assert!(max_distance_from_coupling(0.0, &a, &b, &k(), 1.0).is_err());
    }

    #[test]
    fn pair_hamiltonian_separable_without_coupling() {
        let sys = SpinSystem::reference(40.0).with_nu_dip(0.0);
        let h = build_pair_hamiltonian(&sys, Subspace::ElectronOnly);
        let (vals, _) = eigh(&h);
        let ea = sys.level_energies(true);
        let eb = sys.level_energies(false);
        let mut sums: Vec<f64> = ea.iter().flat_map(|x| eb.iter().map(move |y| x + y)).collect();
        sums.sort_by(f64::total_cmp);
        for (x, y) in vals.iter().zip(&sums) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn zz_coupling_combination() {
        let sys = SpinSystem::reference(40.0);
        let h = build_pair_hamiltonian(&sys, Subspace::ElectronOnly);
        let e = |a: i8, b: i8| {
            let i = BasisLabel::electron(a, b).index();
            h[(i, i)].re
        };
        let sq = e(1, 1) - e(1, 0) - e(0, 1) + e(0, 0);
        assert!((sq - sys.nu_dip_hz).abs() < 1e-5);
        let dq = (e(1, 1) - e(-1, 1)) - (e(1, -1) - e(-1, -1));
        assert!((dq - 4.0 * sys.nu_dip_hz).abs() < 1e-5);
    }

    #[test]
    fn secular_part_matches_full_tensor() {
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        let geo = PairGeometry { r_nm: 25.0, n: normalize(&[0.2, 0.9, -0.1]) };
        let sys = SpinSystem::new(k(), a, b, FieldConfig::along(40.0, &NvOrientation::nv_a()), None, Some(geo.clone())).unwrap();
        let full = build_pair_hamiltonian_full_dipolar(&sys, &geo).unwrap();
        let sec = build_pair_hamiltonian(&sys, Subspace::ElectronOnly);
        let (vf, _) = eigh(&full);
        let (vs, _) = eigh(&sec);
        // flip-flop terms shift levels only at second order in J/Δ
        for (x, y) in vf.iter().zip(&vs) {
            assert!((x - y).abs() < 50.0, "{x} {y}");
        }
    }

    #[test]
    fn geometry_consistency_enforced() {
        let a = NvOrientation::nv_a();
        let b = NvOrientation::nv_b();
        let geo = PairGeometry { r_nm: 25.0, n: normalize(&[0.0, 0.0, 1.0]) };
        let nu = dipolar_coupling(&geo, &a, &b, &k()).unwrap();
        let f = FieldConfig::along(40.0, &a);
        assert!(SpinSystem::new(k(), a.clone(), b.clone(), f.clone(), Some(nu * 1.005), Some(geo.clone())).is_ok());
        assert!(SpinSystem::new(k(), a, b, f, Some(nu * 1.05), Some(geo)).is_err());
    }

    #[test]
    fn full_hamiltonian_is_hermitian() {
        let h = build_pair_hamiltonian(&SpinSystem::reference(40.0), Subspace::Full);
        assert_eq!(h.nrows(), 36);
        assert!(hermitian_deviation(&h) <= 1e-12 * crate::spin::max_abs(&h));
    }
}

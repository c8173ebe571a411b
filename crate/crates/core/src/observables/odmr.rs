//! Continuous-wave ODMR spectrum of the pair: allowed electron transitions of each defect's
//! electron–nuclear Hamiltonian, drawn as Lorentzian fluorescence dips.

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::hamiltonian::{build_single_hamiltonian, SpinSystem};
use crate::spin::{eigh, identity, kron, spin1, CMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrLine {
    pub defect: char,
    pub frequency_hz: f64,
    /// Transverse matrix element `|⟨f|Sx|i⟩|² + |⟨f|Sy|i⟩|²`.
    pub strength: f64,
    /// Dominant electron level of the upper state.
    pub ms: i8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdmrSettings {
    pub f_start_hz: f64,
    pub f_stop_hz: f64,
    pub n_points: usize,
    /// Half width at half maximum of every line.
    pub hwhm_hz: f64,
    /// Fractional fluorescence drop of the strongest line.
    pub contrast: f64,
}

impl Default for OdmrSettings {
    fn default() -> Self {
        OdmrSettings {
            f_start_hz: 2.74e9,
            f_stop_hz: 3.00e9,
            n_points: 5201,
            hwhm_hz: 0.4e6,
            contrast: 0.15,
        }
    }
}

const MIN_RELATIVE_STRENGTH: f64 = 1e-3;

fn defect_lines(system: &SpinSystem, defect_a: bool) -> Vec<OdmrLine> {
    let o = if defect_a { &system.orientation_a } else { &system.orientation_b };
    let h = build_single_hamiltonian(o, &system.field, &system.constants);
    let (vals, vecs) = eigh(&h);
    let s = spin1();
    let ops = [kron(&s.x, &identity(2)), kron(&s.y, &identity(2))];
    // electron level weights: basis index 2·level + nucleus, level 0 ↔ mS = +1
    let ms_of = |col: usize| -> i8 {
        let w: Vec<f64> = (0..3)
            .map(|l| vecs[(2 * l, col)].norm_sqr() + vecs[(2 * l + 1, col)].norm_sqr())
            .collect();
        let best = (0..3).max_by(|a, b| w[*a].total_cmp(&w[*b])).unwrap_or(1);
        [1, 0, -1][best]
    };
    let mut lines = Vec::new();
    for i in 0..6 {
        if ms_of(i) != 0 {
            continue;
        }
        for f in 0..6 {
            let ms = ms_of(f);
            if ms == 0 {
                continue;
            }
            let vi = vecs.column(i);
            let vf = vecs.column(f);
            let strength: f64 = ops.iter().map(|op: &CMatrix| (vf.adjoint() * op * vi)[(0, 0)].norm_sqr()).sum();
            lines.push(OdmrLine {
                defect: if defect_a { 'A' } else { 'B' },
                frequency_hz: (vals[f] - vals[i]).abs(),
                strength,
                ms,
            });
        }
    }
    let max = lines.iter().fold(0.0f64, |m, l| m.max(l.strength));
    lines.retain(|l| l.strength > MIN_RELATIVE_STRENGTH * max);
    lines
}

/// Allowed transitions of both defects, sorted by frequency.
pub fn odmr_lines(system: &SpinSystem) -> Vec<OdmrLine> {
    let mut lines = defect_lines(system, true);
    lines.extend(defect_lines(system, false));
    lines.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    lines
}

/// Normalized fluorescence over the frequency grid, `(frequency, signal)` pairs.
pub fn odmr_spectrum(system: &SpinSystem, s: &OdmrSettings) -> Result<Vec<(f64, f64)>> {
    if s.n_points < 2 || !(s.f_stop_hz > s.f_start_hz) || !(s.hwhm_hz > 0.0) || !(0.0..=1.0).contains(&s.contrast) {
        return Err(NvError::InvalidArgument("need an increasing grid, positive width, contrast in [0, 1]".into()));
    }
    let lines = odmr_lines(system);
    let max = lines.iter().fold(0.0f64, |m, l| m.max(l.strength));
    let step = (s.f_stop_hz - s.f_start_hz) / (s.n_points - 1) as f64;
    Ok((0..s.n_points)
        .map(|i| {
            let f = s.f_start_hz + i as f64 * step;
            let dip: f64 = lines
                .iter()
                .map(|l| l.strength / max / (1.0 + ((f - l.frequency_hz) / s.hwhm_hz).powi(2)))
                .sum();
            (f, 1.0 - s.contrast * dip)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_defect_shows_hyperfine_doublets() {
        let sys = SpinSystem::reference(32.0);
        let k = sys.constants;
        let a: Vec<OdmrLine> = odmr_lines(&sys).into_iter().filter(|l| l.defect == 'A').collect();
        assert_eq!(a.len(), 4);
        let zee = k.gamma_e_hz_per_g * 32.0;
        for (ms, centre) in [(1i8, k.delta_hz + zee), (-1, k.delta_hz - zee)] {
            let mut f: Vec<f64> = a.iter().filter(|l| l.ms == ms).map(|l| l.frequency_hz).collect();
            f.sort_by(f64::total_cmp);
            assert_eq!(f.len(), 2);
            // second-order shifts from the transverse hyperfine terms stay near a_N²/Δ
            assert!((f[1] - f[0] - k.a_n_hz).abs() < 20e3, "{f:?}");
            assert!((0.5 * (f[0] + f[1]) - centre).abs() < 20e3);
        }
    }

    #[test]
    fn both_defects_have_two_transitions() {
        let sys = SpinSystem::reference(32.0);
        let lines = odmr_lines(&sys);
        for d in ['A', 'B'] {
            for ms in [1, -1] {
                assert!(lines.iter().filter(|l| l.defect == d && l.ms == ms).count() >= 2);
            }
        }
        let spec = odmr_spectrum(&sys, &OdmrSettings::default()).unwrap();
        let min = spec.iter().map(|p| p.1).fold(1.0, f64::min);
        assert!(min < 0.9 && spec.iter().all(|p| p.1 <= 1.0));
    }
}

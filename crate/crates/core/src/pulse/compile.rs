//! Lowering of pulse sequences to alternating unitary and free-evolution steps.

use num_complex::Complex64;

use super::dsl::{Block, Condition, Defect, PulseOp, PulseSequence, Transition};
use crate::decoherence::random_phase_operator;
use crate::error::{NvError, Result};
use crate::hamiltonian::SpinSystem;
use crate::spin::{
    c, diagonal_propagator, embed, identity, zeros, BasisLabel, CMatrix, CVector, Unitary, DIMS_ELECTRON,
    DIMS_FULL,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompileOptions {
    /// Compile in `eA ⊗ nA ⊗ eB ⊗ nB` instead of `eA ⊗ eB`.
    pub full: bool,
    /// Include `aN mS mI` in free evolution (36-dim only).
    pub hyperfine: bool,
    /// Drive detunings; a level `mS` of defect k advances as `2π δ_k mS t`.
    pub detuning_hz: [f64; 2],
    /// Multiplies every rotation angle on defect A and B.
    pub angle_scale: [f64; 2],
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            full: false,
            hyperfine: true,
            detuning_hz: [0.0, 0.0],
            angle_scale: [1.0, 1.0],
        }
    }
}

impl CompileOptions {
    pub fn full() -> Self {
        CompileOptions {
            full: true,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub enum Step {
    Gate(Unitary),
    Free {
        duration: f64,
        /// Echo filter value per defect, toggled by each π on an electron transition.
        filter: [f64; 2],
        energies_hz: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct CompiledSequence {
    pub dim: usize,
    pub full: bool,
    pub steps: Vec<Step>,
}

/// `R = cos(θ/2) 1 - i sin(θ/2)(cos φ σx + sin φ σy)` on the `(up, down)` pair of a `dim`-level space.
pub fn rotation(angle: f64, phase: f64, dim: usize, pair: (usize, usize)) -> CMatrix {
    let (up, down) = pair;
    let mut r = identity(dim);
    let (s, co) = (angle / 2.0).sin_cos();
    r[(up, up)] = c(co, 0.0);
    r[(down, down)] = c(co, 0.0);
    r[(up, down)] = c(0.0, -s) * Complex64::from_polar(1.0, -phase);
    r[(down, up)] = c(0.0, -s) * Complex64::from_polar(1.0, phase);
    r
}

fn electron_site(d: Defect, full: bool) -> usize {
    match (d, full) {
        (Defect::A, _) => 0,
        (Defect::B, false) => 1,
        (Defect::B, true) => 2,
    }
}

fn nuclear_site(d: Defect) -> usize {
    match d {
        Defect::A => 1,
        Defect::B => 3,
    }
}

fn pulse_unitary(p: &PulseOp, opts: &CompileOptions) -> Result<CMatrix> {
    let full = opts.full;
    let dims: &[usize] = if full { &DIMS_FULL } else { &DIMS_ELECTRON };
    let n: usize = dims.iter().product();
    if !full && p.needs_nuclear_space() {
        return Err(NvError::InvalidArgument(
            "conditional or nuclear pulse needs the nuclear space".into(),
        ));
    }
    let mut total = identity(n);
    for d in p.target.defects() {
        let angle = p.angle.value() * opts.angle_scale[d.index()];
        let (site, local) = if p.transition == Transition::Nuclear {
            (nuclear_site(*d), rotation(angle, p.phase.value(), 2, p.transition.pair()))
        } else {
            (electron_site(*d, full), rotation(angle, p.phase.value(), 3, p.transition.pair()))
        };
        let r = embed(&local, site, dims);
        let op = match p.condition {
            None => r,
            Some(cond) => {
                let (csite, level, cdim) = match cond {
                    Condition::Nuclear { two_mi, on } => {
                        (nuclear_site(on), if two_mi > 0 { 0 } else { 1 }, 2)
                    }
                    Condition::Electron { ms, on } => (electron_site(on, true), crate::spin::ms_index(ms), 3),
                };
                if csite == site {
                    return Err(NvError::InvalidArgument(
                        "pulse cannot be conditioned on the subsystem it drives".into(),
                    ));
                }
                let mut proj = zeros(cdim);
                proj[(level, level)] = c(1.0, 0.0);
                let pe = embed(&proj, csite, dims);
                &pe * &r + (identity(n) - &pe)
            }
        };
        total = op * total;
    }
    Ok(total)
}

fn free_energies(system: &SpinSystem, opts: &CompileOptions) -> Vec<f64> {
    let nu = system.nu_dip_hz;
    let a_n = system.constants.a_n_hz;
    BasisLabel::all(opts.full)
        .iter()
        .map(|l| {
            let (ma, mb) = (l.ms_a as f64, l.ms_b as f64);
            let mut e = nu * ma * mb + opts.detuning_hz[0] * ma + opts.detuning_hz[1] * mb;
            if opts.full && opts.hyperfine {
                let ia = l.mi_a.unwrap() as f64 / 2.0;
                let ib = l.mi_b.unwrap() as f64 / 2.0;
                e += a_n * (ma * ia + mb * ib);
            }
            e
        })
        .collect()
}

pub fn compile(seq: &PulseSequence, system: &SpinSystem, opts: &CompileOptions) -> Result<CompiledSequence> {
    seq.validate_space(opts.full)?;
    let dim = if opts.full { 36 } else { 9 };
    let energies = free_energies(system, opts);
    let mut filter = [1.0, 1.0];
    let mut steps = Vec::new();
    for block in seq.blocks() {
        match block {
            Block::Pulses(ps) => {
                let mut u = identity(dim);
                for p in &ps {
                    u = pulse_unitary(p, opts)? * u;
                    let is_pi = (p.angle.value() - std::f64::consts::PI).abs() < 1e-12;
                    if is_pi && p.transition != Transition::Nuclear {
                        for d in p.target.defects() {
                            filter[d.index()] = -filter[d.index()];
                        }
                    }
                }
                steps.push(Step::Gate(Unitary::new(u)?));
            }
            Block::Delay(d) => {
                let t = d.seconds();
                if t > 0.0 {
                    steps.push(Step::Free {
                        duration: t,
                        filter,
                        energies_hz: energies.clone(),
                    });
                }
            }
        }
    }
    Ok(CompiledSequence {
        dim,
        full: opts.full,
        steps,
    })
}

impl CompiledSequence {
    pub fn free_durations(&self) -> Vec<f64> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Free { duration, .. } => Some(*duration),
                _ => None,
            })
            .collect()
    }

    pub fn gates(&self) -> Vec<&Unitary> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Gate(u) => Some(u),
                _ => None,
            })
            .collect()
    }

    /// Applies the program to `psi`; `noise[i]` holds `(φ_A, φ_B)` for the i-th free step.
    pub fn propagate(&self, psi: &CVector, noise: Option<&[[f64; 2]]>) -> Result<CVector> {
        if psi.len() != self.dim {
            return Err(NvError::Dimension(format!("state has dim {}, program {}", psi.len(), self.dim)));
        }
        let mut v = psi.clone();
        let mut k = 0;
        for s in &self.steps {
            match s {
                Step::Gate(u) => v = u.matrix() * v,
                Step::Free {
                    duration,
                    energies_hz,
                    ..
                } => {
                    let uj = diagonal_propagator(energies_hz, *duration);
                    let (pa, pb) = match noise {
                        Some(n) => (n[k][0], n[k][1]),
                        None => (0.0, 0.0),
                    };
                    for i in 0..self.dim {
                        v[i] *= uj.matrix()[(i, i)];
                    }
                    if pa != 0.0 || pb != 0.0 {
                        let ur = random_phase_operator(pa, pb, self.full);
                        for i in 0..self.dim {
                            v[i] *= ur[(i, i)];
                        }
                    }
                    k += 1;
                }
            }
        }
        Ok(v)
    }

    /// Noise-free total propagator.
    pub fn unitary(&self) -> Unitary {
        let mut u = identity(self.dim);
        for s in &self.steps {
            match s {
                Step::Gate(g) => u = g.matrix() * u,
                Step::Free {
                    duration,
                    energies_hz,
                    ..
                } => u = diagonal_propagator(energies_hz, *duration).matrix() * u,
            }
        }
        Unitary::new(u).expect("product of unitaries")
    }
}

//! Pulse sequences: text format, compilation, ensemble evolution, gates and DEER.

pub mod compile;
pub mod deer;
pub mod dsl;
pub mod evolve;
pub mod gates;

pub use compile::{compile, rotation, CompileOptions, CompiledSequence, Step};
pub use deer::{deer_sequence, deer_signal, fit_deer, DeerMode};
pub use dsl::{parse_sequence, Angle, Block, Condition, Defect, Phase, PulseOp, PulseSequence, SequenceItem, Target, Transition};
pub use evolve::{apply_sequence, evolve_mc, AmplitudeJitter, McOptions};
pub use gates::{
    bell_point, evolve_analytic_phi0p, gate_envelopes, gate_fidelity, phi0p_gate_text, phi0p_target,
    fit_pulse_error, ground_state, mc_gate_fidelity, phi_dq_plus_target, phi_pm_conversion_text, phi_pm_target,
    sq_gate_text, AnalyticState, GateKind,
};

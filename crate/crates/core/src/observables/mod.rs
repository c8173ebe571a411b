//! ODMR, readout, phase scans, spectra, charge-state statistics, tomography and lifetimes.

pub mod charge;
pub mod lifetime;
pub mod odmr;
pub mod readout;
pub mod scan;
pub mod spectrum;
pub mod tomography;

pub use charge::{charge_preselect, roc_curve, ChargeModel, PreselectionResult};
pub use lifetime::{entanglement_lifetime, LifetimeResult, LifetimeSettings, StateKind};
pub use odmr::{odmr_lines, odmr_spectrum, OdmrLine, OdmrSettings};
pub use readout::{readout_p0, MeasurementModel};
pub use scan::{branch_signals, phase_scan, scan_signal, ChargeHandling, PhaseScan, ScanSettings};
pub use spectrum::{fft_spectrum, peak_near, spectrum, width_to_lifetime, Spectrum, SpectrumPeak};
pub use scan::{charge_line_weights, ChargeLineWeights};
pub use tomography::{
    collective_slot, nv_nv_coherences, reconstruct_density_matrix, tomography_plan, Coherence, Probe, Quadrature,
    Tomography, TomographyResult, TomographySettings,
};

//! Experiment configuration: strict JSON, every section optional with working defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoherence::{NoiseCorrelation, NoiseKind, NoisePreset};
use crate::error::{NvError, Result};
use crate::hamiltonian::{FieldConfig, NvOrientation, SpinConstants, SpinSystem, Vec3, NU_DIP_REFERENCE_HZ};
use crate::nuclear::StorageDecay;
use crate::observables::{ChargeModel, LifetimeSettings, MeasurementModel, OdmrSettings, TomographySettings};
use crate::photon::{EmissionModel, HbtSettings};
use crate::spatial::{ApertureSpec, ImagingSettings, StraggleKind, StraggleRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub field_g: f64,
    /// Field direction in crystal coordinates; along NV A when absent.
    pub field_direction: Option<Vec3>,
    pub nu_dip_hz: f64,
    pub axis_a: Vec3,
    pub axis_b: Vec3,
    pub constants: SpinConstants,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            field_g: 40.0,
            field_direction: None,
            nu_dip_hz: NU_DIP_REFERENCE_HZ,
            axis_a: NvOrientation::nv_a().axis,
            axis_b: NvOrientation::nv_b().axis,
            constants: SpinConstants::default(),
        }
    }
}

impl SystemConfig {
    pub fn build(&self) -> Result<SpinSystem> {
        let a = NvOrientation::new(self.axis_a, "A")?;
        let b = NvOrientation::new(self.axis_b, "B")?;
        let field = match self.field_direction {
            Some(d) => FieldConfig::new(self.field_g, d)?,
            None => FieldConfig::along(self.field_g, &a),
        };
        SpinSystem::new(self.constants, a, b, field, Some(self.nu_dip_hz), None)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub a: NoisePreset,
    pub b: NoisePreset,
    pub correlation: NoiseCorrelation,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            a: NoisePreset::nv_a(),
            b: NoisePreset::nv_b(),
            correlation: NoiseCorrelation::Independent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeerConfig {
    pub tau_max_s: f64,
    pub n_points: usize,
}

impl Default for DeerConfig {
    fn default() -> Self {
        DeerConfig {
            tau_max_s: 250e-6,
            n_points: 201,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntangleConfig {
    /// Scan range of the free-evolution wait; one coupling period when absent.
    pub tau_max_s: Option<f64>,
    pub n_points: usize,
    pub trajectories: usize,
    /// Noise process of the trajectory runs; the presets' T2 sets its strength.
    pub mc_noise: NoiseKind,
    /// Target fidelity for the pulse-error calibration; skipped when absent.
    pub calibrate_to: Option<f64>,
}

impl Default for EntangleConfig {
    fn default() -> Self {
        EntangleConfig {
            tau_max_s: None,
            n_points: 161,
            trajectories: 1000,
            mc_noise: NoiseKind::White,
            calibrate_to: Some(0.67),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapConfig {
    /// Nuclear π-pulse contrast; fitted to `target_efficiency` when absent.
    pub contrast: Option<f64>,
    pub target_efficiency: f64,
    pub decay: StorageDecay,
    pub storage_times_s: Vec<f64>,
    pub trajectories: usize,
}

impl Default for SwapConfig {
    fn default() -> Self {
        SwapConfig {
            contrast: None,
            target_efficiency: 0.41,
            decay: StorageDecay::default(),
            storage_times_s: (0..31).map(|i| i as f64 * 1e-4).collect(),
            trajectories: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotonConfig {
    pub emission: EmissionModel,
    pub hbt: HbtSettings,
    pub gates_ns: Vec<f64>,
    /// Readout noise per joint population for the correlation matrices.
    pub correlation_noise: f64,
    /// External two-channel timestamp files (ns per line), analyzed instead of simulation.
    pub timestamps: Option<[String; 2]>,
}

impl Default for PhotonConfig {
    fn default() -> Self {
        PhotonConfig {
            emission: EmissionModel::default(),
            hbt: HbtSettings::default(),
            gates_ns: vec![0.0, 12.7],
            correlation_noise: 0.0,
            timestamps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplantConfig {
    pub aperture: ApertureSpec,
    pub sigma_nm: f64,
    pub kind: StraggleKind,
    pub ions: usize,
    pub d_strong_nm: f64,
    pub bin_nm: f64,
    pub max_distance_nm: f64,
    /// Straggle table rows; a CSV path (`energy_kev,sigma_nm,depth_nm`) takes precedence.
    pub table: Vec<StraggleRow>,
    pub table_csv: Option<String>,
}

impl Default for ImplantConfig {
    fn default() -> Self {
        ImplantConfig {
            aperture: ApertureSpec::default(),
            sigma_nm: 118.9,
            kind: StraggleKind::PerAxis,
            ions: 100_000,
            d_strong_nm: 30.0,
            bin_nm: 5.0,
            max_distance_nm: 1000.0,
            table: Vec::new(),
            table_csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub imaging: ImagingSettings,
    pub separation_nm: [f64; 2],
    pub repetitions: usize,
    pub surface_normal: Vec3,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            imaging: ImagingSettings::default(),
            separation_nm: [21.8, 0.0],
            repetitions: 42,
            surface_normal: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    pub measurement: MeasurementModel,
    pub charge: ChargeModel,
    pub seed: u64,
    pub output_dir: Option<String>,
    pub odmr: OdmrSettings,
    pub deer: DeerConfig,
    pub entangle: EntangleConfig,
    pub tomography: TomographySettings,
    pub lifetime: LifetimeSettings,
    pub swap: SwapConfig,
    pub photon: PhotonConfig,
    pub implant: ImplantConfig,
    pub localize: LocalizeConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| NvError::Config(e.to_string()))?;
        cfg.validate().map_err(|e| NvError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NvError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.build()?;
        self.noise.a.validate()?;
        self.noise.b.validate()?;
        self.measurement.validate()?;
        self.charge.validate()?;
        self.photon.emission.validate()?;
        self.implant.aperture.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let sys = c.system.build().unwrap();
        let r = SpinSystem::reference(40.0);
        assert_eq!(sys.orientation_a.axis, r.orientation_a.axis);
        assert_eq!(sys.orientation_b.axis, r.orientation_b.axis);
        assert_eq!((sys.field, sys.nu_dip_hz, sys.constants), (r.field, r.nu_dip_hz, r.constants));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sytem": {}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"system": {"field": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"noise": {"a": {"t2_star_s": 1e-6, "t2_s": 1e-4, "kind": "QuasiStatic", "tau_c_s": null, "hahn_exponent": 1.0, "extra": 0}}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"photon": {"hbt": {"shots": 10, "gate": 2}}}"#).is_err());
    }

    #[test]
    fn round_trip_and_range_checks() {
        let c = ExperimentConfig {
            seed: 17,
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(ExperimentConfig::from_json(r#"{"photon": {"emission": {"k0": 0.5, "k1": 0.7, "tau_bright_ns": 23, "tau_dark_ns": 12.7}}}"#).is_err());
    }
}

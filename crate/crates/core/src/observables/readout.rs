//! Fluorescence readout `Tr[(α |0⟩⟨0|_A + β |0⟩⟨0|_B) ρ]`.

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::spin::{c, zeros, BasisLabel, CMatrix, DensityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementModel {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for MeasurementModel {
    fn default() -> Self {
        MeasurementModel {
            alpha: 1.0,
            beta: 1.0,
            offset: 0.0,
            scale: 1.0,
        }
    }
}

impl MeasurementModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let m = MeasurementModel {
            alpha,
            beta,
            ..Default::default()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(NvError::InvalidArgument("fluorescence coefficients must be positive".into()));
        }
        Ok(())
    }

    /// Measurement operator in the 9- or 36-dim basis, before calibration.
    pub fn operator(&self, full: bool) -> CMatrix {
        let labels = BasisLabel::all(full);
        let mut m = zeros(labels.len());
        for (i, l) in labels.iter().enumerate() {
            let mut v = 0.0;
            if l.ms_a == 0 {
                v += self.alpha;
            }
            if l.ms_b == 0 {
                v += self.beta;
            }
            m[(i, i)] = c(v, 0.0);
        }
        m
    }

    pub fn calibrate(&self, raw: f64) -> f64 {
        self.offset + self.scale * raw
    }
}

pub fn readout_p0(rho: &DensityMatrix, model: &MeasurementModel) -> Result<f64> {
    let full = match rho.dim() {
        9 => false,
        36 => true,
        d => return Err(NvError::Dimension(format!("readout needs dim 9 or 36, got {d}"))),
    };
    let raw = (model.operator(full) * rho.matrix()).trace().re;
    Ok(model.calibrate(raw))
}

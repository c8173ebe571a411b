//! Photon-count charge-state classification.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson as PoissonDist};

use crate::decoherence::substream;
use crate::error::{NvError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeModel {
    /// Probability of the negative charge state per defect.
    pub p_minus: f64,
    pub bright_rate: f64,
    pub dark_rate: f64,
    pub window_s: f64,
    /// Shots with at least this many counts on a defect are classified negative.
    pub threshold: u64,
}

impl Default for ChargeModel {
    fn default() -> Self {
        ChargeModel {
            p_minus: 0.70,
            bright_rate: 6000.0,
            dark_rate: 1000.0,
            window_s: 5e-3,
            threshold: 15,
        }
    }
}

impl ChargeModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_minus) {
            return Err(NvError::InvalidArgument("p_minus must lie in [0, 1]".into()));
        }
        if !(self.bright_rate > self.dark_rate) || !(self.dark_rate >= 0.0) || !(self.window_s > 0.0) {
            return Err(NvError::InvalidArgument("need bright_rate > dark_rate >= 0 and window > 0".into()));
        }
        Ok(())
    }

    fn tail(mean: f64, threshold: u64) -> f64 {
        if threshold == 0 {
            return 1.0;
        }
        if mean <= 0.0 {
            return 0.0;
        }
        1.0 - PoissonDist::new(mean).expect("positive mean").cdf(threshold - 1)
    }

    /// Probability that a negatively charged defect passes the threshold.
    pub fn accept_negative(&self) -> f64 {
        Self::tail(self.bright_rate * self.window_s, self.threshold)
    }

    /// Probability that a neutral defect passes the threshold.
    pub fn accept_neutral(&self) -> f64 {
        Self::tail(self.dark_rate * self.window_s, self.threshold)
    }

    /// Prior weights of (both negative, only A negative, only B negative, neither).
    pub fn prior_weights(&self) -> [f64; 4] {
        let p = self.p_minus;
        [p * p, p * (1.0 - p), (1.0 - p) * p, (1.0 - p) * (1.0 - p)]
    }

    /// Branch weights among shots that survive preselection of both defects.
    pub fn preselected_weights(&self) -> [f64; 4] {
        let (qn, q0) = (self.accept_negative(), self.accept_neutral());
        let w = self.prior_weights();
        let raw = [w[0] * qn * qn, w[1] * qn * q0, w[2] * q0 * qn, w[3] * q0 * q0];
        let s: f64 = raw.iter().sum();
        if s == 0.0 {
            return [0.0; 4];
        }
        raw.map(|x| x / s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreselectionResult {
    pub shots: usize,
    pub kept_fraction: f64,
    pub both_negative_fraction: f64,
    /// Kept shots in which at least one defect was neutral, over all kept shots.
    pub false_accept_rate: f64,
    /// Both-negative shots that were rejected, over all both-negative shots.
    pub false_reject_rate: f64,
}

/// Monte Carlo of per-shot charge states and photon counts.
pub fn charge_preselect(model: &ChargeModel, shots: usize, seed: u64) -> Result<PreselectionResult> {
    model.validate()?;
    if shots == 0 {
        return Err(NvError::InvalidArgument("need at least one shot".into()));
    }
    let mut rng = substream(seed, 0);
    let mean_b = model.bright_rate * model.window_s;
    let mean_d = model.dark_rate * model.window_s;
    let pb = Poisson::new(mean_b.max(1e-300)).map_err(|e| NvError::InvalidArgument(e.to_string()))?;
    let pd = Poisson::new(mean_d.max(1e-300)).map_err(|e| NvError::InvalidArgument(e.to_string()))?;
    let (mut kept, mut both, mut false_acc, mut false_rej) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..shots {
        let neg = [rng.gen::<f64>() < model.p_minus, rng.gen::<f64>() < model.p_minus];
        let pass = neg.map(|n| {
            let k: f64 = if n { pb.sample(&mut rng) } else { pd.sample(&mut rng) };
            k as u64 >= model.threshold
        });
        let is_both = neg[0] && neg[1];
        let keep = pass[0] && pass[1];
        both += is_both as usize;
        kept += keep as usize;
        false_acc += (keep && !is_both) as usize;
        false_rej += (!keep && is_both) as usize;
    }
    let n = shots as f64;
    Ok(PreselectionResult {
        shots,
        kept_fraction: kept as f64 / n,
        both_negative_fraction: both as f64 / n,
        false_accept_rate: if kept > 0 { false_acc as f64 / kept as f64 } else { 0.0 },
        false_reject_rate: if both > 0 { false_rej as f64 / both as f64 } else { 0.0 },
    })
}

/// `(false-positive rate, true-positive rate)` per single-defect threshold.
pub fn roc_curve(model: &ChargeModel, thresholds: &[u64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let m = ChargeModel { threshold: t, ..*model };
            (m.accept_neutral(), m.accept_negative())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_keeps_all() {
        let m = ChargeModel {
            threshold: 0,
            ..Default::default()
        };
        let r = charge_preselect(&m, 1000, 1).unwrap();
        assert_eq!(r.kept_fraction, 1.0);
    }

    #[test]
    fn separated_rates_keep_both_negative_share() {
        let r = charge_preselect(&ChargeModel::default(), 100_000, 2).unwrap();
        assert!((r.kept_fraction - 0.49).abs() < 0.01, "{r:?}");
        assert!(r.false_accept_rate < 0.01);
    }

    #[test]
    fn roc_is_monotone() {
        let m = ChargeModel {
            bright_rate: 2000.0,
            dark_rate: 1200.0,
            ..Default::default()
        };
        let ts: Vec<u64> = (0..40).collect();
        let roc = roc_curve(&m, &ts);
        for w in roc.windows(2) {
            assert!(w[1].0 <= w[0].0 && w[1].1 <= w[0].1);
        }
        assert_eq!(roc[0], (1.0, 1.0));
    }

    #[test]
    fn preselected_weights_concentrate_on_pair() {
        let w = ChargeModel::default().preselected_weights();
        assert!(w[0] > 0.999);
        let p = ChargeModel::default().prior_weights();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

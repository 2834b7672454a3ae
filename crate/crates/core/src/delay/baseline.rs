use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{NetEnvFeatures, PinRoutingFeatures};
use super::NetSample;
use crate::error::{Error, Result};

/// Affine delay model over driver-load distance, extra fanout and the two
/// density features, fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBaseline {
    /// `[intercept, distance, fanout − 1, routing density, pin density]`
    pub coef: [f64; 5],
    pub delay_floor: f64,
}

impl LinearBaseline {
    pub fn regressors(env: &NetEnvFeatures, pin: &PinRoutingFeatures) -> [f64; 5] {
        [
            1.0,
            pin.manhattan(),
            env.fanout - 1.0,
            env.avg_routing_density,
            pin.avg_pin_density,
        ]
    }

    pub fn predict_raw(&self, env: &NetEnvFeatures, pin: &PinRoutingFeatures) -> f64 {
        Self::regressors(env, pin)
            .iter()
            .zip(&self.coef)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn predict(&self, env: &NetEnvFeatures, pin: &PinRoutingFeatures) -> f64 {
        self.predict_raw(env, pin).max(self.delay_floor)
    }

    pub fn fit(samples: &[NetSample], delay_floor: f64) -> Result<Self> {
        let rows: Vec<[f64; 5]> = samples
            .iter()
            .flat_map(|s| s.features.pins.iter().map(|p| Self::regressors(&s.features.env, p)))
            .collect();
        if rows.len() < 5 {
            return Err(Error::Validation(format!(
                "linear baseline needs at least 5 samples, got {}",
                rows.len()
            )));
        }
        let a = DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]);
        let b = DVector::from_iterator(rows.len(), samples.iter().flat_map(|s| s.labels.iter().copied()));
        let x = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Numerical(format!("least squares: {e}")))?;
        let coef = [x[0], x[1], x[2], x[3], x[4]];
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(
                "least squares produced non-finite coefficients".into(),
            ));
        }
        Ok(LinearBaseline { coef, delay_floor })
    }

    pub fn predict_net(&self, s: &NetSample) -> Vec<f64> {
        s.features
            .pins
            .iter()
            .map(|p| self.predict(&s.features.env, p))
            .collect()
    }
}

//! Link price functions and their potentials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Price charged per unit of traffic on a single link as a function of the
/// total load on that link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceModel {
    /// `price(load) = slope * load`.
    Linear { slope: f64 },
    /// Monotone interpolation through `[load, price]` points. The first point
    /// must sit at load 0; past the last point the final segment is extended.
    PiecewiseLinear { points: Vec<[f64; 2]> },
}

impl Default for PriceModel {
    fn default() -> Self {
        PriceModel::Linear { slope: 1.0 }
    }
}

impl PriceModel {
    pub fn linear(slope: f64) -> Result<Self> {
        let model = PriceModel::Linear { slope };
        model.validate()?;
        Ok(model)
    }

    pub fn piecewise(points: Vec<[f64; 2]>) -> Result<Self> {
        let model = PriceModel::PiecewiseLinear { points };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriceModel::Linear { slope } => {
                if !(slope.is_finite() && *slope > 0.0) {
                    return Err(Error::Config(format!(
                        "linear price slope must be finite and positive, got {slope}"
                    )));
                }
            }
            PriceModel::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return Err(Error::Config(
                        "piecewise price needs at least two points".into(),
                    ));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Config(
                        "piecewise price points must be finite".into(),
                    ));
                }
                if points[0][0] != 0.0 {
                    return Err(Error::Config("piecewise price must start at load 0".into()));
                }
                for w in points.windows(2) {
                    if w[1][0] <= w[0][0] {
                        return Err(Error::Config(
                            "piecewise price loads must be strictly increasing".into(),
                        ));
                    }
                    if w[1][1] < w[0][1] {
                        return Err(Error::Config(
                            "piecewise price must be nondecreasing".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Unit price at the given link load.
    pub fn price(&self, load: f64) -> f64 {
        match self {
            PriceModel::Linear { slope } => slope * load,
            PriceModel::PiecewiseLinear { points } => {
                let k = segment_index(points, load);
                let [s0, v0] = points[k];
                let [s1, v1] = points[k + 1];
                v0 + (v1 - v0) / (s1 - s0) * (load - s0)
            }
        }
    }

    /// Lipschitz constant of [`PriceModel::price`] over the nonnegative loads.
    pub fn lipschitz(&self) -> f64 {
        match self {
            PriceModel::Linear { slope } => *slope,
            PriceModel::PiecewiseLinear { points } => points
                .windows(2)
                .map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]))
                .fold(0.0, f64::max),
        }
    }

    /// Potential of a single link: the integral of the price from 0 to `load`.
    pub fn gamma(&self, load: f64) -> Result<f64> {
        if !(load >= 0.0) {
            return Err(Error::Domain(format!(
                "link potential is defined for nonnegative loads, got {load}"
            )));
        }
        Ok(self.gamma_unchecked(load))
    }

    pub(crate) fn gamma_unchecked(&self, load: f64) -> f64 {
        match self {
            PriceModel::Linear { slope } => 0.5 * slope * load * load,
            PriceModel::PiecewiseLinear { points } => {
                let k = segment_index(points, load);
                let full: f64 = points[..=k]
                    .windows(2)
                    .map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0]))
                    .sum();
                let s0 = points[k][0];
                full + 0.5 * (points[k][1] + self.price(load)) * (load - s0)
            }
        }
    }
}

/// Index of the segment `[points[k], points[k + 1]]` used for `load`; the
/// first and last segments absorb out-of-range loads.
fn segment_index(points: &[[f64; 2]], load: f64) -> usize {
    let upper = points.partition_point(|p| p[0] <= load);
    upper.saturating_sub(1).min(points.len() - 2)
}

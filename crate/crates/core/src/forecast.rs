//! Forecast containers shared by the individual models and the averages.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::AgeGrid;
use crate::transform::TransformSpec;

/// The six constituent models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "HUrob")]
    HuRobust,
    #[serde(rename = "HUw")]
    HuWeighted,
    #[serde(rename = "RW")]
    RandomWalk,
    #[serde(rename = "RWD")]
    RandomWalkDrift,
    #[serde(rename = "ARIMA")]
    Arima,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::Hu,
        ModelId::HuRobust,
        ModelId::HuWeighted,
        ModelId::RandomWalk,
        ModelId::RandomWalkDrift,
        ModelId::Arima,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ModelId::Hu => "HU",
            ModelId::HuRobust => "HUrob",
            ModelId::HuWeighted => "HUw",
            ModelId::RandomWalk => "RW",
            ModelId::RandomWalkDrift => "RWD",
            ModelId::Arima => "ARIMA",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model {s:?}"))
    }
}

/// Two-sided standard normal quantile for central coverage `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf((1.0 + level) / 2.0)
}

/// Horizon × age point and interval forecasts on both scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub ages: AgeGrid,
    pub point_transformed: DMatrix<f64>,
    pub variance_transformed: DMatrix<f64>,
    /// Rates.
    pub point: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
}

impl Forecast {
    /// Builds Gaussian intervals `point ± z·sd` on the transformed scale and
    /// maps everything to rates.
    pub fn from_transformed(
        ages: AgeGrid,
        point_transformed: DMatrix<f64>,
        variance_transformed: DMatrix<f64>,
        spec: &TransformSpec,
        level: f64,
    ) -> Self {
        let centre = point_transformed.clone();
        Self::with_centre(ages, point_transformed, centre, variance_transformed, spec, level)
    }

    /// As [`Forecast::from_transformed`] but with the interval centred on
    /// `centre`. The interval is widened where needed so it always contains
    /// the point forecast.
    pub fn with_centre(
        ages: AgeGrid,
        point_transformed: DMatrix<f64>,
        centre: DMatrix<f64>,
        variance_transformed: DMatrix<f64>,
        spec: &TransformSpec,
        level: f64,
    ) -> Self {
        let z = normal_quantile(level);
        let (h, p) = point_transformed.shape();
        let mut lower = DMatrix::zeros(h, p);
        let mut upper = DMatrix::zeros(h, p);
        for i in 0..h {
            for j in 0..p {
                let half = z * variance_transformed[(i, j)].max(0.0).sqrt();
                let pt = point_transformed[(i, j)];
                lower[(i, j)] = spec.inverse((centre[(i, j)] - half).min(pt));
                upper[(i, j)] = spec.inverse((centre[(i, j)] + half).max(pt));
            }
        }
        let point = point_transformed.map(|m| spec.inverse(m));
        Self {
            ages,
            point_transformed,
            variance_transformed,
            point,
            lower,
            upper,
            level,
        }
    }

    pub fn horizons(&self) -> usize {
        self.point.nrows()
    }

    /// Keeps the first `h` horizons.
    pub fn truncate(&self, h: usize) -> Self {
        let rows = |m: &DMatrix<f64>| m.rows(0, h.min(m.nrows())).into_owned();
        Self {
            ages: self.ages.clone(),
            point_transformed: rows(&self.point_transformed),
            variance_transformed: rows(&self.variance_transformed),
            point: rows(&self.point),
            lower: rows(&self.lower),
            upper: rows(&self.upper),
            level: self.level,
        }
    }
}

/// A single model's forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecast {
    pub model: ModelId,
    pub forecast: Forecast,
}

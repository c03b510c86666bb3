//! Model-averaging weights and the combination of constituent forecasts.

mod mcs;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mcs::{auto_block_length, mcs_select, BlockLength, McsOptions, McsResult, McsStatistic, MIN_PERIODS};

use crate::forecast::{Forecast, ModelForecast, ModelId};
use crate::metrics::ScoreTable;
use crate::transform::TransformSpec;

/// Floor applied to scores before inversion.
pub const SCORE_FLOOR: f64 = 1e-12;
/// Floor applied to residual variances in BIC.
pub const VARIANCE_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum AveragingError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("constituent forecasts differ in shape or ages")]
    IncompatibleForecasts,
    #[error("at least {need} loss periods are needed, got {got}")]
    TooFewPeriods { got: usize, need: usize },
    #[error("at least two models are needed")]
    TooFewModels,
    #[error("no score for model {model} at horizon {horizon}")]
    MissingScore { model: String, horizon: usize },
    #[error("weight table covers {have} horizons, {need} requested")]
    ShortWeightTable { have: usize, need: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingMethod {
    Frequentist,
    Bayesian,
    Mcs,
    Equal,
}

impl AveragingMethod {
    pub const ALL: [AveragingMethod; 4] = [
        AveragingMethod::Frequentist,
        AveragingMethod::Bayesian,
        AveragingMethod::Mcs,
        AveragingMethod::Equal,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AveragingMethod::Frequentist => "frequentist",
            AveragingMethod::Bayesian => "bayesian",
            AveragingMethod::Mcs => "mcs",
            AveragingMethod::Equal => "equal",
        }
    }
}

impl fmt::Display for AveragingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AveragingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AveragingMethod::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown averaging method {s:?}"))
    }
}

/// Horizon × model point and interval weights; rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub models: Vec<ModelId>,
    pub point: DMatrix<f64>,
    pub interval: DMatrix<f64>,
}

impl WeightTable {
    /// The same weight row at every horizon.
    pub fn constant(models: Vec<ModelId>, point: &[f64], interval: &[f64], horizons: usize) -> Self {
        let l = models.len();
        assert!(point.len() == l && interval.len() == l, "one weight per model");
        Self {
            models,
            point: DMatrix::from_fn(horizons, l, |_, j| point[j]),
            interval: DMatrix::from_fn(horizons, l, |_, j| interval[j]),
        }
    }

    pub fn horizons(&self) -> usize {
        self.point.nrows()
    }

    pub fn point_row(&self, h: usize) -> Vec<f64> {
        self.point.row(h - 1).iter().copied().collect()
    }

    pub fn interval_row(&self, h: usize) -> Vec<f64> {
        self.interval.row(h - 1).iter().copied().collect()
    }

    /// Point-weight columns then interval-weight columns, one row per
    /// horizon. With `display` values have two decimals.
    pub fn to_csv(&self, display: bool) -> String {
        let fmt = |v: f64| if display { format!("{v:.2}") } else { format!("{v}") };
        let mut out = String::from("h");
        for m in &self.models {
            out.push_str(&format!(",point_{m}"));
        }
        for m in &self.models {
            out.push_str(&format!(",interval_{m}"));
        }
        out.push('\n');
        for h in 0..self.horizons() {
            out.push_str(&(h + 1).to_string());
            for v in self.point.row(h).iter().chain(self.interval.row(h).iter()) {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Reads the layout written by [`WeightTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or("empty weight table")?.split(',').collect();
        let names = &header[1..];
        if !names.len().is_multiple_of(2) {
            return Err("weight table needs matching point and interval columns".into());
        }
        let l = names.len() / 2;
        let models = names[..l]
            .iter()
            .map(|n| {
                n.strip_prefix("point_")
                    .ok_or(format!("bad column {n:?}"))?
                    .parse::<ModelId>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 2 * l + 1 {
                return Err(format!("weight row {:?} has {} cells", cells[0], cells.len()));
            }
            rows.push(
                cells[1..]
                    .iter()
                    .map(|c| c.trim().parse::<f64>().map_err(|e| format!("bad weight {c:?}: {e}")))
                    .collect::<Result<_, _>>()?,
            );
        }
        let h = rows.len();
        Ok(Self {
            models,
            point: DMatrix::from_fn(h, l, |i, j| rows[i][j]),
            interval: DMatrix::from_fn(h, l, |i, j| rows[i][l + j]),
        })
    }
}

fn normalise(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Inverse-score weights, normalised per horizon.
pub fn inverse_score_weights(scores: &[f64]) -> Vec<f64> {
    normalise(scores.iter().map(|s| 1.0 / s.max(SCORE_FLOOR)).collect())
}

/// Point weights ∝ 1/MAFE and interval weights ∝ 1/mean interval score at
/// every horizon of `scores`.
pub fn frequentist_weights(
    scores: &ScoreTable,
    models: &[ModelId],
    horizons: usize,
) -> Result<WeightTable, AveragingError> {
    let l = models.len();
    let mut point = DMatrix::zeros(horizons, l);
    let mut interval = DMatrix::zeros(horizons, l);
    for h in 1..=horizons {
        let mut mafe = Vec::with_capacity(l);
        let mut mis = Vec::with_capacity(l);
        for m in models {
            let cell = scores.cell(h, m.label()).ok_or(AveragingError::MissingScore {
                model: m.to_string(),
                horizon: h,
            })?;
            mafe.push(cell.mafe());
            mis.push(cell.mean_interval_score());
        }
        for (j, (p, i)) in inverse_score_weights(&mafe)
            .into_iter()
            .zip(inverse_score_weights(&mis))
            .enumerate()
        {
            point[(h - 1, j)] = p;
            interval[(h - 1, j)] = i;
        }
    }
    Ok(WeightTable {
        models: models.to_vec(),
        point,
        interval,
    })
}

/// `exp(−Δ/2)` weights on BICs relative to their minimum.
pub fn bic_weights(bics: &[f64]) -> Vec<f64> {
    let min = bics.iter().copied().fold(f64::INFINITY, f64::min);
    normalise(bics.iter().map(|b| (-(b - min) / 2.0).exp()).collect())
}

/// `n·ln(σ̂²) + ln(n)·η` with `σ̂² = Σ ε²/n`, floored at [`VARIANCE_FLOOR`].
pub fn model_bic(residuals: &[f64], n_params: usize) -> f64 {
    let n = residuals.len() as f64;
    let s2 = (residuals.iter().map(|e| e * e).sum::<f64>() / n).max(VARIANCE_FLOOR);
    n * s2.ln() + n.ln() * n_params as f64
}

pub fn equal_weights(l: usize) -> Vec<f64> {
    assert!(l >= 1, "equal weights need at least one model");
    vec![1.0 / l as f64; l]
}

fn check_len(expected: usize, got: usize) -> Result<(), AveragingError> {
    if expected == got {
        Ok(())
    } else {
        Err(AveragingError::LengthMismatch { expected, got })
    }
}

/// `Σ w_ℓ ŷ_ℓ`.
pub fn combine_point(values: &[f64], weights: &[f64]) -> Result<f64, AveragingError> {
    check_len(values.len(), weights.len())?;
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum())
}

/// `{Σ w_ℓ [Var_ℓ + (ŷ_ℓ − centre)²]^{1/2}}²`.
pub fn combine_variance(
    values: &[f64],
    variances: &[f64],
    weights: &[f64],
    centre: f64,
) -> Result<f64, AveragingError> {
    check_len(values.len(), weights.len())?;
    check_len(values.len(), variances.len())?;
    let s: f64 = values
        .iter()
        .zip(variances)
        .zip(weights)
        .map(|((v, var), w)| w * (var.max(0.0) + (v - centre).powi(2)).sqrt())
        .sum();
    Ok(s * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedForecast {
    pub method: AveragingMethod,
    pub models: Vec<ModelId>,
    /// Horizon × model weights used.
    pub point_weights: DMatrix<f64>,
    pub interval_weights: DMatrix<f64>,
    pub forecast: Forecast,
}

/// Combines constituent forecasts on the transformed scale using row `h` of
/// `weights` at horizon `h`, then maps to rates. Models missing from
/// `forecasts` must carry zero weight.
pub fn combine_forecasts(
    forecasts: &[ModelForecast],
    weights: &WeightTable,
    method: AveragingMethod,
    spec: &TransformSpec,
    level: f64,
) -> Result<CombinedForecast, AveragingError> {
    let first = forecasts.first().ok_or(AveragingError::IncompatibleForecasts)?;
    let (hn, p) = first.forecast.point_transformed.shape();
    if forecasts
        .iter()
        .any(|f| f.forecast.point_transformed.shape() != (hn, p) || f.forecast.ages != first.forecast.ages)
    {
        return Err(AveragingError::IncompatibleForecasts);
    }
    if weights.horizons() < hn {
        return Err(AveragingError::ShortWeightTable {
            have: weights.horizons(),
            need: hn,
        });
    }
    // weight column of each supplied forecast
    let cols: Vec<usize> = forecasts
        .iter()
        .map(|f| {
            weights
                .models
                .iter()
                .position(|m| *m == f.model)
                .ok_or(AveragingError::IncompatibleForecasts)
        })
        .collect::<Result<_, _>>()?;
    let covered: f64 = cols.iter().map(|&c| weights.point[(0, c)]).sum();
    if (covered - 1.0).abs() > 1e-8 {
        return Err(AveragingError::IncompatibleForecasts);
    }
    let l = forecasts.len();
    let mut point_w = DMatrix::zeros(hn, l);
    let mut interval_w = DMatrix::zeros(hn, l);
    let mut point = DMatrix::zeros(hn, p);
    let mut centre = DMatrix::zeros(hn, p);
    let mut variance = DMatrix::zeros(hn, p);
    for h in 0..hn {
        let pw: Vec<f64> = cols.iter().map(|&c| weights.point[(h, c)]).collect();
        let iw: Vec<f64> = cols.iter().map(|&c| weights.interval[(h, c)]).collect();
        for j in 0..l {
            point_w[(h, j)] = pw[j];
            interval_w[(h, j)] = iw[j];
        }
        for x in 0..p {
            let vals: Vec<f64> = forecasts.iter().map(|f| f.forecast.point_transformed[(h, x)]).collect();
            let vars: Vec<f64> = forecasts
                .iter()
                .map(|f| f.forecast.variance_transformed[(h, x)])
                .collect();
            point[(h, x)] = combine_point(&vals, &pw)?;
            let c = combine_point(&vals, &iw)?;
            centre[(h, x)] = c;
            variance[(h, x)] = combine_variance(&vals, &vars, &iw, c)?;
        }
    }
    let forecast = Forecast::with_centre(first.forecast.ages.clone(), point, centre, variance, spec, level);
    Ok(CombinedForecast {
        method,
        models: forecasts.iter().map(|f| f.model).collect(),
        point_weights: point_w,
        interval_weights: interval_w,
        forecast,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AgeGrid;
    use crate::metrics::ErrorRecord;
    use proptest::prelude::*;

    #[test]
    fn inverse_weights_example() {
        let w = inverse_score_weights(&[0.1, 0.2, 0.4]);
        for (a, b) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = inverse_score_weights(&[0.0, 1.0]);
        assert!(w[0] > 0.999_999 && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bic_examples() {
        let w = bic_weights(&[10.0, 12.0, 14.0]);
        for (a, b) in w.iter().zip([0.6652, 0.2447, 0.0900]) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(bic_weights(&[3.0, 3.0]), vec![0.5, 0.5]);
        assert!(bic_weights(&[-1e6, 0.0])[0] > 1.0 - 1e-12);
        let ones = vec![1.0; 100];
        assert!((model_bic(&ones, 2) - 2.0 * 100f64.ln()).abs() < 1e-12);
        let twos: Vec<f64> = ones.iter().map(|e| e * 2f64.sqrt()).collect();
        assert!((model_bic(&twos, 2) - model_bic(&ones, 2) - 100.0 * 2f64.ln()).abs() < 1e-9);
        assert!(model_bic(&ones, 3) > model_bic(&ones, 2));
        assert!(model_bic(&[0.0; 10], 1).is_finite());
    }

    #[test]
    fn combination_examples() {
        assert_eq!(combine_point(&[2.0, 4.0, 6.0], &equal_weights(3)).unwrap(), 4.0);
        assert_eq!(combine_point(&[1.0, 3.0], &[0.25, 0.75]).unwrap(), 2.5);
        assert_eq!(combine_point(&[1.0, 3.0], &[0.0, 1.0]).unwrap(), 3.0);
        assert!(matches!(
            combine_point(&[1.0], &[0.5, 0.5]),
            Err(AveragingError::LengthMismatch { .. })
        ));
        assert!((combine_variance(&[1.0, 3.0], &[1.0, 1.0], &[0.5, 0.5], 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((combine_variance(&[1.0, 3.0], &[0.0, 0.0], &[0.5, 0.5], 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((combine_variance(&[5.0; 3], &[0.7; 3], &[0.2, 0.3, 0.5], 5.0).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn frequentist_from_scores() {
        let models = [ModelId::RandomWalk, ModelId::RandomWalkDrift, ModelId::Arima];
        let mut t = ScoreTable::new(models.iter().map(|m| m.to_string()).collect(), 0.2);
        for (m, e) in models.iter().zip([0.1, 0.2, 0.4]) {
            let r = ErrorRecord {
                country: "X".into(),
                origin: 1990,
                horizon: 1,
                age: 20,
                actual: 1.0,
                point: 1.0 + e,
                lower: 0.0,
                upper: 2.0 * e + 1.0,
            };
            t.add(m.label(), &r).unwrap();
        }
        let w = frequentist_weights(&t, &models, 1).unwrap();
        assert!((w.point[(0, 0)] - 4.0 / 7.0).abs() < 1e-12);
        assert!(matches!(
            frequentist_weights(&t, &models, 2),
            Err(AveragingError::MissingScore { .. })
        ));
        let back = WeightTable::from_csv(&w.to_csv(false)).unwrap();
        assert_eq!(back, w);
    }

    fn mf(model: ModelId, pt: f64, var: f64) -> ModelForecast {
        let spec = TransformSpec::default();
        ModelForecast {
            model,
            forecast: Forecast::from_transformed(
                AgeGrid::span(20, 21).unwrap(),
                DMatrix::from_element(3, 2, pt),
                DMatrix::from_element(3, 2, var),
                &spec,
                0.8,
            ),
        }
    }

    #[test]
    fn combined_forecasts() {
        let spec = TransformSpec::default();
        let a = mf(ModelId::RandomWalk, -2.0, 0.01);
        let b = mf(ModelId::RandomWalkDrift, -1.8, 0.01);
        let models = vec![ModelId::RandomWalk, ModelId::RandomWalkDrift];
        let single = WeightTable::constant(models.clone(), &[1.0, 0.0], &[1.0, 0.0], 3);
        let c = combine_forecasts(&[a.clone(), b.clone()], &single, AveragingMethod::Equal, &spec, 0.8).unwrap();
        assert!((c.forecast.point.clone() - a.forecast.point.clone()).amax() < 1e-15);
        assert!((c.forecast.upper.clone() - a.forecast.upper.clone()).amax() < 1e-15);

        let eq = WeightTable::constant(models, &equal_weights(2), &equal_weights(2), 3);
        let c = combine_forecasts(&[a.clone(), b.clone()], &eq, AveragingMethod::Equal, &spec, 0.8).unwrap();
        assert!((c.forecast.point_transformed[(0, 0)] + 1.9).abs() < 1e-12);
        let width = |f: &Forecast| f.upper[(0, 0)] - f.lower[(0, 0)];
        assert!(width(&c.forecast) > width(&a.forecast).min(width(&b.forecast)));

        let mut other_ages = b.clone();
        other_ages.forecast.ages = AgeGrid::span(30, 31).unwrap();
        assert!(combine_forecasts(&[a, other_ages], &eq, AveragingMethod::Equal, &spec, 0.8).is_err());
    }

    proptest! {
        #[test]
        fn weight_rows_sum_to_one(scores in proptest::collection::vec(0.0f64..10.0, 1..8)) {
            let w = inverse_score_weights(&scores);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            let b = bic_weights(&scores.iter().map(|s| s * 100.0).collect::<Vec<_>>());
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn combination_is_shift_equivariant(vals in proptest::collection::vec(-5.0f64..5.0, 1..6), k in -3.0f64..3.0) {
            let w = equal_weights(vals.len());
            let shifted: Vec<f64> = vals.iter().map(|v| v + k).collect();
            let (a, b) = (combine_point(&vals, &w).unwrap(), combine_point(&shifted, &w).unwrap());
            prop_assert!((b - a - k).abs() < 1e-12);
        }

        #[test]
        fn buckland_lower_bound(vals in proptest::collection::vec(-5.0f64..5.0, 2..6), var in 0.0f64..3.0) {
            let w = equal_weights(vals.len());
            let c = combine_point(&vals, &w).unwrap();
            let vars = vec![var; vals.len()];
            let v = combine_variance(&vals, &vars, &w, c).unwrap();
            let bias: f64 = vals.iter().zip(&w).map(|(y, wi)| wi * (y - c).powi(2)).sum();
            let abs_bias: f64 = vals.iter().zip(&w).map(|(y, wi)| wi * (y - c).abs()).sum();
            prop_assert!(v >= abs_bias * abs_bias - 1e-12);
            prop_assert!(v + 1e-12 >= var);
            prop_assert!(bias >= 0.0);
        }
    }
}

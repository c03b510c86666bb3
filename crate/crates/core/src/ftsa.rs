//! Functional time-series models: weighted functional principal components
//! of smoothed curves, with the scores forecast by univariate models.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arima::{auto_model, forecast_uts, ArimaError, UtsModel};
use crate::data::AgeGrid;
use crate::forecast::Forecast;
use crate::smoothing::{smooth_panel, SmoothSurface, SmoothingError};
use crate::transform::{TransformSpec, TransformedPanel};

pub const DEFAULT_COMPONENTS: usize = 6;
pub const ROBUST_EFFICIENCY: f64 = 0.95;

#[derive(Debug, Error)]
pub enum FtsaError {
    #[error("geometric weight parameter must lie in (0, 1), got {0}")]
    BadLambda(f64),
    #[error("{years} years is too few for {components} components")]
    TooFewYears { years: usize, components: usize },
    #[error("cannot extract {components} components from {ages} ages")]
    BadComponents { components: usize, ages: usize },
    #[error("the HUw variant needs a weight parameter")]
    MissingLambda,
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error("score series {component}: {source}")]
    Score { component: usize, source: ArimaError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    Uniform,
    Geometric,
}

/// Year weights for the mean and principal components; they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FtsWeights {
    pub kind: WeightKind,
    pub lambda: Option<f64>,
    pub weights: Vec<f64>,
}

/// Uniform weights `1/n`, or geometric weights `λ(1−λ)^{n−t}` normalised to
/// sum to one.
pub fn make_weights(kind: WeightKind, lambda: Option<f64>, n: usize) -> Result<FtsWeights, FtsaError> {
    assert!(n >= 1, "weights need at least one year");
    match kind {
        WeightKind::Uniform => Ok(FtsWeights {
            kind,
            lambda: None,
            weights: vec![1.0 / n as f64; n],
        }),
        WeightKind::Geometric => {
            let lam = lambda.ok_or(FtsaError::MissingLambda)?;
            if !(lam > 0.0 && lam < 1.0) {
                return Err(FtsaError::BadLambda(lam));
            }
            // work in logs so tiny λ or long series cannot underflow
            let logs: Vec<f64> = (1..=n).map(|t| lam.ln() + (n - t) as f64 * (-lam).ln_1p()).collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = raw.iter().sum();
            Ok(FtsWeights {
                kind,
                lambda: Some(lam),
                weights: raw.iter().map(|w| w / total).collect(),
            })
        }
    }
}

/// A fitted weighted FPCA decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaModel {
    pub years: Vec<i32>,
    pub ages: AgeGrid,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    /// Orthonormal basis functions, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Year × component, computed for every year including excluded ones.
    pub scores: DMatrix<f64>,
    /// Smoothed curves minus their rank-J reconstruction.
    pub residuals: DMatrix<f64>,
    pub resid_var: Vec<f64>,
    pub noise_var_avg: Vec<f64>,
    pub mean_var: Vec<f64>,
    /// Years given zero weight by the robust refit.
    pub excluded: Vec<usize>,
}

impl FpcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_ages(&self) -> usize {
        self.mean.len()
    }

    pub fn score_series(&self, j: usize) -> Vec<f64> {
        self.scores.column(j).iter().copied().collect()
    }

    /// `â + Σ_j b̂_j k_j` for one score vector.
    pub fn curve(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (b, k) in self.components.iter().zip(scores) {
            for (o, bx) in out.iter_mut().zip(b) {
                *o += bx * k;
            }
        }
        out
    }

    /// Reconstruction of every year from its scores.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        let (n, p) = (self.scores.nrows(), self.n_ages());
        let mut out = DMatrix::zeros(n, p);
        for t in 0..n {
            let k: Vec<f64> = self.scores.row(t).iter().copied().collect();
            for (x, v) in self.curve(&k).into_iter().enumerate() {
                out[(t, x)] = v;
            }
        }
        out
    }

    /// Integrated squared residual `Σ_x ê_t(x)²` per year.
    pub fn ise(&self) -> Vec<f64> {
        self.residuals
            .row_iter()
            .map(|r| r.iter().map(|e| e * e).sum())
            .collect()
    }
}

fn check_components(n_years: usize, n_ages: usize, j: usize) -> Result<(), FtsaError> {
    if j == 0 || j > n_ages {
        return Err(FtsaError::BadComponents {
            components: j,
            ages: n_ages,
        });
    }
    if n_years < j + 1 {
        return Err(FtsaError::TooFewYears {
            years: n_years,
            components: j,
        });
    }
    Ok(())
}

/// Weighted FPCA of the smoothed curves: centre on the weighted mean, scale
/// row `t` by `√ϖ_t` and keep the leading `j` right singular vectors.
pub fn fpca_fit(surface: &SmoothSurface, weights: &FtsWeights, j: usize) -> Result<FpcaModel, FtsaError> {
    assert_eq!(weights.weights.len(), surface.n_years(), "one weight per year");
    check_components(surface.n_years(), surface.n_ages(), j)?;
    Ok(fpca_core(surface, &weights.weights, j))
}

fn fpca_core(surface: &SmoothSurface, w: &[f64], j: usize) -> FpcaModel {
    let s = &surface.smooth;
    let (n, p) = s.shape();
    let weighted_mean =
        |m: &DMatrix<f64>| -> Vec<f64> { (0..p).map(|x| (0..n).map(|t| w[t] * m[(t, x)]).sum()).collect() };
    let mean = weighted_mean(s);
    let raw_mean = weighted_mean(&surface.observed);

    let centred = DMatrix::from_fn(n, p, |t, x| s[(t, x)] - mean[x]);
    let scaled = DMatrix::from_fn(n, p, |t, x| w[t].sqrt() * centred[(t, x)]);
    let svd = scaled.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let components: Vec<Vec<f64>> = order[..j]
        .iter()
        .map(|&k| {
            let mut b: Vec<f64> = v_t.row(k).iter().copied().collect();
            let sum: f64 = b.iter().sum();
            let flip = if sum.abs() > 1e-12 {
                sum < 0.0
            } else {
                b.iter().find(|v| v.abs() > 1e-12).is_some_and(|v| *v < 0.0)
            };
            if flip {
                b.iter_mut().for_each(|v| *v = -*v);
            }
            b
        })
        .collect();

    let scores = DMatrix::from_fn(n, j, |t, k| (0..p).map(|x| centred[(t, x)] * components[k][x]).sum());
    let mut residuals = centred;
    for t in 0..n {
        for (k, b) in components.iter().enumerate() {
            let score = scores[(t, k)];
            for x in 0..p {
                residuals[(t, x)] -= score * b[x];
            }
        }
    }

    let active: Vec<usize> = (0..n).filter(|&t| w[t] > 0.0).collect();
    let avg = |m: &DMatrix<f64>, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..p)
            .map(|x| active.iter().map(|&t| f(m[(t, x)])).sum::<f64>() / active.len() as f64)
            .collect()
    };
    let resid_var = avg(&residuals, &|e| e * e);
    let noise_var_avg = avg(&surface.noise_var, &|v| v);
    let mean_var = raw_mean.iter().zip(&mean).map(|(r, m)| (r - m).powi(2)).collect();

    FpcaModel {
        years: surface.years.clone(),
        ages: surface.ages.clone(),
        weights: w.to_vec(),
        mean,
        components,
        scores,
        residuals,
        resid_var,
        noise_var_avg,
        mean_var,
        excluded: (0..n).filter(|&t| w[t] == 0.0).collect(),
    }
}

/// Years whose integrated squared residual lies strictly above the
/// `efficiency` empirical quantile of all years' values.
pub fn detect_outlier_years(model: &FpcaModel, efficiency: f64) -> Vec<usize> {
    assert!(efficiency > 0.0 && efficiency < 1.0, "efficiency must lie in (0, 1)");
    let ise = model.ise();
    let n = ise.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = ise.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((efficiency * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let q = sorted[rank - 1];
    // values equal up to rounding count as ties
    let scale: f64 = model.scores.iter().map(|k| k * k).sum::<f64>() / n as f64 + sorted[n - 1];
    let tol = 1e-9 * q.abs() + 1e-12 * scale;
    (0..n).filter(|&t| ise[t] > q + tol).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HuVariant {
    /// Equal year weights.
    Standard,
    /// Geometrically decaying year weights.
    Weighted,
    /// Outlying years removed before the final fit.
    Robust,
}

/// Smooths `panel` and fits the requested variant.
pub fn fit_hu(
    panel: &TransformedPanel,
    variant: HuVariant,
    j: usize,
    lambda: Option<f64>,
) -> Result<FpcaModel, FtsaError> {
    let surface = smooth_panel(panel)?;
    fit_hu_smoothed(&surface, variant, j, lambda)
}

/// As [`fit_hu`] on an already smoothed surface.
pub fn fit_hu_smoothed(
    surface: &SmoothSurface,
    variant: HuVariant,
    j: usize,
    lambda: Option<f64>,
) -> Result<FpcaModel, FtsaError> {
    let n = surface.n_years();
    match variant {
        HuVariant::Standard => fpca_fit(surface, &make_weights(WeightKind::Uniform, None, n)?, j),
        HuVariant::Weighted => {
            let lam = lambda.ok_or(FtsaError::MissingLambda)?;
            fpca_fit(surface, &make_weights(WeightKind::Geometric, Some(lam), n)?, j)
        }
        HuVariant::Robust => {
            let first = fpca_fit(surface, &make_weights(WeightKind::Uniform, None, n)?, j)?;
            let outliers = detect_outlier_years(&first, ROBUST_EFFICIENCY);
            if outliers.is_empty() {
                return Ok(first);
            }
            let kept = n - outliers.len();
            check_components(kept, surface.n_ages(), j)?;
            let mut w = vec![1.0 / kept as f64; n];
            for &t in &outliers {
                w[t] = 0.0;
            }
            Ok(fpca_core(surface, &w, j))
        }
    }
}

/// The four variance components of a functional forecast, on the
/// transformed scale. Their sum is the forecast variance.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTerms {
    pub mean_var: Vec<f64>,
    /// Horizon × age: `Σ_j b̂_j(x)² u_{h,j}`.
    pub score_var: DMatrix<f64>,
    pub resid_var: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl VarianceTerms {
    pub fn total(&self) -> DMatrix<f64> {
        let mut out = self.score_var.clone();
        for mut row in out.row_iter_mut() {
            for x in 0..row.len() {
                row[x] += self.mean_var[x] + self.resid_var[x] + self.noise_var[x];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct HuForecast {
    pub forecast: Forecast,
    pub terms: VarianceTerms,
    pub score_models: Vec<UtsModel>,
}

/// Forecasts each score series with an automatically selected ARIMA and
/// assembles curve forecasts with Gaussian intervals at `level`.
pub fn forecast_hu(
    model: &FpcaModel,
    horizon: usize,
    spec: &TransformSpec,
    level: f64,
) -> Result<HuForecast, FtsaError> {
    if horizon == 0 {
        return Err(FtsaError::BadHorizon);
    }
    let score_models: Vec<UtsModel> = (0..model.n_components())
        .into_par_iter()
        .map(|j| auto_model(&model.score_series(j)).map_err(|source| FtsaError::Score { component: j, source }))
        .collect::<Result<_, _>>()?;
    let score_fc: Vec<_> = score_models
        .iter()
        .enumerate()
        .map(|(j, m)| forecast_uts(m, &model.score_series(j), horizon))
        .collect();

    let p = model.n_ages();
    let mut point = DMatrix::zeros(horizon, p);
    let mut score_var = DMatrix::zeros(horizon, p);
    for h in 0..horizon {
        let k: Vec<f64> = score_fc.iter().map(|f| f.point[h]).collect();
        for (x, v) in model.curve(&k).into_iter().enumerate() {
            point[(h, x)] = v;
        }
        for x in 0..p {
            score_var[(h, x)] = model
                .components
                .iter()
                .zip(&score_fc)
                .map(|(b, f)| b[x] * b[x] * f.variance[h])
                .sum();
        }
    }
    let terms = VarianceTerms {
        mean_var: model.mean_var.clone(),
        score_var,
        resid_var: model.resid_var.clone(),
        noise_var: model.noise_var_avg.clone(),
    };
    let forecast = Forecast::from_transformed(model.ages.clone(), point, terms.total(), spec, level);
    Ok(HuForecast {
        forecast,
        terms,
        score_models,
    })
}

/// In-sample one-step residuals on the transformed scale: `observed` minus
/// the curve rebuilt from each score model's one-step fitted values. Rows
/// cover the final years for which every score model has a fitted value.
pub fn one_step_residuals(model: &FpcaModel, score_models: &[UtsModel], observed: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.scores.nrows();
    let r = score_models.iter().map(|m| m.residuals.len()).min().unwrap_or(n).min(n);
    let p = model.n_ages();
    let fitted: Vec<Vec<f64>> = score_models
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let f = m.fitted(&model.score_series(j));
            f[f.len() - r..].to_vec()
        })
        .collect();
    DMatrix::from_fn(r, p, |i, x| {
        let t = n - r + i;
        let k: f64 = model.components.iter().zip(&fitted).map(|(b, f)| b[x] * f[i]).sum();
        observed[(t, x)] - model.mean[x] - k
    })
}

/// Default held-back tail for choosing the geometric weight parameter.
pub fn default_lambda_tail(n_years: usize) -> usize {
    20.min(n_years / 3)
}

/// Chooses the geometric weight parameter from `0.01, 0.02, …, 0.99` by the
/// mean absolute rate error of forecasts of the last `tail` years made from
/// the years before them. Ties go to the smaller value.
pub fn select_lambda(surface: &SmoothSurface, j: usize, spec: &TransformSpec, tail: usize) -> Result<f64, FtsaError> {
    let n = surface.n_years();
    if tail == 0 || tail >= n {
        return Err(FtsaError::TooFewYears {
            years: n,
            components: j,
        });
    }
    let fit_rows: Vec<usize> = (0..n - tail).collect();
    let train = surface.select_rows(&fit_rows);
    check_components(train.n_years(), train.n_ages(), j)?;
    let actual = surface.observed.rows(n - tail, tail).map(|m| spec.inverse(m));
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let errors: Vec<f64> = grid
        .par_iter()
        .map(|&lam| -> Result<f64, FtsaError> {
            let model = fit_hu_smoothed(&train, HuVariant::Weighted, j, Some(lam))?;
            let fc = forecast_hu(&model, tail, spec, 0.8)?;
            let err = (&fc.forecast.point - &actual).abs().sum() / actual.len() as f64;
            Ok(if err.is_finite() { err } else { f64::INFINITY })
        })
        .collect::<Result<_, _>>()?;
    let best = (0..grid.len()).fold(0, |b, i| if errors[i] < errors[b] { i } else { b });
    Ok(grid[best])
}

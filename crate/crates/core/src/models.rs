//! Fits the six constituent models to one fitting window and forecasts them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::arima::{auto_model, fit_rw, fit_rwd, forecast_uts, ArimaError, UtsModel};
use crate::averaging::model_bic;
use crate::forecast::{Forecast, ModelForecast, ModelId};
use crate::ftsa::{fit_hu_smoothed, forecast_hu, one_step_residuals, FtsaError, HuVariant};
use crate::smoothing::SmoothSurface;
use crate::transform::TransformSpec;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{model}: {source}")]
    Functional { model: ModelId, source: FtsaError },
    #[error("{model} at age {age}: {source}")]
    Univariate {
        model: ModelId,
        age: i32,
        source: ArimaError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankConfig {
    pub models: Vec<ModelId>,
    pub components: usize,
    pub spec: TransformSpec,
    pub level: f64,
    /// Geometric weight parameter for HUw.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BankOutput {
    pub forecasts: Vec<ModelForecast>,
    /// In-sample BIC per model, averaged over ages.
    pub bics: Vec<f64>,
}

fn variant(model: ModelId) -> Option<HuVariant> {
    match model {
        ModelId::Hu => Some(HuVariant::Standard),
        ModelId::HuRobust => Some(HuVariant::Robust),
        ModelId::HuWeighted => Some(HuVariant::Weighted),
        _ => None,
    }
}

fn mean_bic_by_column(residuals: &DMatrix<f64>, n_params: usize) -> f64 {
    let p = residuals.ncols();
    (0..p)
        .map(|x| model_bic(&residuals.column(x).iter().copied().collect::<Vec<_>>(), n_params))
        .sum::<f64>()
        / p as f64
}

fn functional(
    surface: &SmoothSurface,
    model: ModelId,
    cfg: &BankConfig,
    horizon: usize,
) -> Result<(ModelForecast, f64), FtsaError> {
    let v = variant(model).expect("functional model");
    let lambda = if v == HuVariant::Weighted { cfg.lambda } else { None };
    let fit = fit_hu_smoothed(surface, v, cfg.components, lambda)?;
    let fc = forecast_hu(&fit, horizon, &cfg.spec, cfg.level)?;
    let resid = one_step_residuals(&fit, &fc.score_models, &surface.observed);
    let eta = fc.score_models.iter().map(UtsModel::n_params).sum::<usize>() + 1;
    Ok((
        ModelForecast {
            model,
            forecast: fc.forecast,
        },
        mean_bic_by_column(&resid, eta),
    ))
}

fn univariate(
    surface: &SmoothSurface,
    model: ModelId,
    cfg: &BankConfig,
    horizon: usize,
) -> Result<(ModelForecast, f64), ModelError> {
    let p = surface.n_ages();
    let fits: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..p)
        .into_par_iter()
        .map(|x| {
            let series: Vec<f64> = surface.observed.column(x).iter().copied().collect();
            let fitted = match model {
                ModelId::RandomWalk => fit_rw(&series),
                ModelId::RandomWalkDrift => fit_rwd(&series),
                _ => auto_model(&series),
            }
            .map_err(|source| ModelError::Univariate {
                model,
                age: surface.ages.ages()[x],
                source,
            })?;
            let fc = forecast_uts(&fitted, &series, horizon);
            Ok((fc.point, fc.variance, model_bic(&fitted.residuals, fitted.n_params())))
        })
        .collect::<Result<_, ModelError>>()?;
    let point = DMatrix::from_fn(horizon, p, |h, x| fits[x].0[h]);
    let variance = DMatrix::from_fn(horizon, p, |h, x| fits[x].1[h]);
    let bic = fits.iter().map(|f| f.2).sum::<f64>() / p as f64;
    let forecast = Forecast::from_transformed(surface.ages.clone(), point, variance, &cfg.spec, cfg.level);
    Ok((ModelForecast { model, forecast }, bic))
}

/// Fits every configured model to `surface` and forecasts `horizon` years.
pub fn fit_bank(surface: &SmoothSurface, cfg: &BankConfig, horizon: usize) -> Result<BankOutput, ModelError> {
    let results: Vec<(ModelForecast, f64)> = cfg
        .models
        .iter()
        .map(|&m| {
            if variant(m).is_some() {
                functional(surface, m, cfg, horizon).map_err(|source| ModelError::Functional { model: m, source })
            } else {
                univariate(surface, m, cfg, horizon)
            }
        })
        .collect::<Result<_, _>>()?;
    let (forecasts, bics) = results.into_iter().unzip();
    Ok(BankOutput { forecasts, bics })
}

//! Two-stage rolling-origin study. Stage 1 scores expanding-window
//! forecasts over the in-sample period and derives averaging weights;
//! stage 2 scores models and averages over the holdout period.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::{
    bic_weights, combine_forecasts, equal_weights, frequentist_weights, mcs_select, AveragingError, AveragingMethod,
    CombinedForecast, McsOptions, McsResult, WeightTable,
};
use crate::data::RatePanel;
use crate::forecast::{ModelForecast, ModelId};
use crate::ftsa::{default_lambda_tail, select_lambda, FtsaError, DEFAULT_COMPONENTS};
use crate::metrics::{ErrorRecord, MetricsError, ScoreTable};
use crate::models::{fit_bank, BankConfig, ModelError};
use crate::smoothing::{smooth_panel, SmoothSurface, SmoothingError};
use crate::transform::{boxcox, TransformError, TransformSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid design: {0}")]
    BadDesign(String),
    #[error("{country}: data cover {first}–{last}, need {need_first}–{need_last}")]
    InsufficientHistory {
        country: String,
        first: i32,
        last: i32,
        need_first: i32,
        need_last: i32,
    },
    #[error("{country}: {source}")]
    Transform { country: String, source: TransformError },
    #[error("{country}: {source}")]
    Smoothing { country: String, source: SmoothingError },
    #[error("{country}: choosing the HUw weight parameter: {source}")]
    Lambda { country: String, source: FtsaError },
    #[error("{country}, window ending {origin}: {source}")]
    Model {
        country: String,
        origin: i32,
        source: ModelError,
    },
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no panels supplied")]
    NoPanels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub initial_fit_end: i32,
    pub in_sample_end: i32,
    pub holdout_end: i32,
    pub horizon: usize,
    pub models: Vec<ModelId>,
    pub methods: Vec<AveragingMethod>,
    pub transform: TransformSpec,
    pub components: usize,
    pub level: f64,
    pub mcs: McsOptions,
    /// Length of the window used to choose the HUw weight parameter.
    pub lambda_window: usize,
    /// Years between that window's end and `in_sample_end`.
    pub lambda_gap: usize,
}

impl Default for StudyDesign {
    fn default() -> Self {
        Self {
            initial_fit_end: 1971,
            in_sample_end: 1991,
            holdout_end: 2011,
            horizon: 20,
            models: ModelId::ALL.to_vec(),
            methods: AveragingMethod::ALL.to_vec(),
            transform: TransformSpec::default(),
            components: DEFAULT_COMPONENTS,
            level: 0.8,
            mcs: McsOptions::default(),
            lambda_window: 22,
            lambda_gap: 10,
        }
    }
}

impl StudyDesign {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::BadDesign(m));
        if !(self.initial_fit_end < self.in_sample_end && self.in_sample_end < self.holdout_end) {
            return bad(format!(
                "need initial fit end < in-sample end < holdout end, got {} / {} / {}",
                self.initial_fit_end, self.in_sample_end, self.holdout_end
            ));
        }
        if self.horizon == 0 || self.horizon as i32 != self.in_sample_end - self.initial_fit_end {
            return bad(format!(
                "horizon {} must equal in-sample end minus initial fit end ({})",
                self.horizon,
                self.in_sample_end - self.initial_fit_end
            ));
        }
        if self.models.is_empty() || self.methods.is_empty() {
            return bad("at least one model and one averaging method are required".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("coverage level {} outside (0, 1)", self.level));
        }
        if !(self.mcs.alpha > 0.0 && self.mcs.alpha < 1.0) {
            return bad(format!("MCS alpha {} outside (0, 1)", self.mcs.alpha));
        }
        if self.mcs.bootstrap == 0 {
            return bad("bootstrap replicates must be positive".into());
        }
        if self.components == 0 {
            return bad("at least one component is required".into());
        }
        self.transform
            .validate()
            .map_err(|e| HarnessError::BadDesign(e.to_string()))
    }

    /// Interval score α matching the coverage level.
    pub fn interval_alpha(&self) -> f64 {
        1.0 - self.level
    }

    /// Fewest years a fitting window may have.
    pub fn min_fit_years(&self) -> usize {
        self.components + 2
    }

    fn bank_config(&self, lambda: Option<f64>) -> BankConfig {
        BankConfig {
            models: self.models.clone(),
            components: self.components,
            spec: self.transform,
            level: self.level,
            lambda,
        }
    }

    fn columns(&self, with_methods: bool) -> Vec<String> {
        let mut c: Vec<String> = self.models.iter().map(|m| m.to_string()).collect();
        if with_methods {
            c.extend(self.methods.iter().map(|m| m.to_string()));
        }
        c
    }
}

/// A country's data prepared once and sliced for every window.
struct Prepared {
    panel: RatePanel,
    surface: SmoothSurface,
    lambda: Option<f64>,
}

fn check_coverage(panel: &RatePanel, design: &StudyDesign, last_needed: i32) -> Result<(), HarnessError> {
    let need_first = design.initial_fit_end - design.min_fit_years() as i32 + 1;
    if panel.first_year() > need_first || panel.last_year() < last_needed {
        return Err(HarnessError::InsufficientHistory {
            country: panel.country.clone(),
            first: panel.first_year(),
            last: panel.last_year(),
            need_first,
            need_last: last_needed,
        });
    }
    Ok(())
}

fn prepare(panel: &RatePanel, design: &StudyDesign, last_needed: i32) -> Result<Prepared, HarnessError> {
    check_coverage(panel, design, last_needed)?;
    let country = panel.country.clone();
    let panel = panel
        .slice_years(panel.first_year(), last_needed)
        .expect("coverage checked above");
    let transformed = boxcox(&panel, &design.transform).map_err(|source| HarnessError::Transform {
        country: country.clone(),
        source,
    })?;
    let surface = smooth_panel(&transformed).map_err(|source| HarnessError::Smoothing {
        country: country.clone(),
        source,
    })?;
    let lambda = if design.models.contains(&ModelId::HuWeighted) {
        Some(choose_lambda(&surface, design).map_err(|source| HarnessError::Lambda {
            country: country.clone(),
            source,
        })?)
    } else {
        None
    };
    Ok(Prepared { panel, surface, lambda })
}

/// HUw weight parameter chosen on the window of `lambda_window` years ending
/// `lambda_gap` years before the in-sample end.
pub fn choose_lambda(surface: &SmoothSurface, design: &StudyDesign) -> Result<f64, FtsaError> {
    let end = design.in_sample_end - design.lambda_gap as i32;
    let start = end - design.lambda_window as i32 + 1;
    let rows: Vec<usize> = (0..surface.n_years())
        .filter(|&t| (start..=end).contains(&surface.years[t]))
        .collect();
    if end > design.initial_fit_end {
        warn!("HUw weight window {start}–{end} overlaps the stage-1 forecasting period");
    }
    let window = surface.select_rows(&rows);
    select_lambda(
        &window,
        design.components,
        &design.transform,
        default_lambda_tail(window.n_years()),
    )
}

struct WindowResult {
    country: String,
    origin: i32,
    forecasts: Vec<ModelForecast>,
    bics: Vec<f64>,
}

fn run_windows(
    prepared: &[Prepared],
    design: &StudyDesign,
    first_origin: i32,
    last_origin: i32,
    scored_end: i32,
) -> Result<Vec<(usize, WindowResult)>, HarnessError> {
    let tasks: Vec<(usize, i32)> = (0..prepared.len())
        .flat_map(|c| (first_origin..=last_origin).map(move |e| (c, e)))
        .collect();
    tasks
        .into_par_iter()
        .map(|(c, origin)| {
            let p = &prepared[c];
            let rows: Vec<usize> = (0..p.surface.n_years())
                .filter(|&t| p.surface.years[t] <= origin)
                .collect();
            let window = p.surface.select_rows(&rows);
            let horizon = (scored_end - origin).min(design.horizon as i32) as usize;
            let out =
                fit_bank(&window, &design.bank_config(p.lambda), horizon).map_err(|source| HarnessError::Model {
                    country: p.panel.country.clone(),
                    origin,
                    source,
                })?;
            Ok((
                c,
                WindowResult {
                    country: p.panel.country.clone(),
                    origin,
                    forecasts: out.forecasts,
                    bics: out.bics,
                },
            ))
        })
        .collect()
}

fn records_for(panel: &RatePanel, w: &WindowResult, f: &crate::forecast::Forecast) -> Vec<ErrorRecord> {
    let mut out = Vec::with_capacity(f.point.len());
    for h in 1..=f.horizons() {
        let t = panel
            .year_index(w.origin + h as i32)
            .expect("scored year inside the panel");
        for (x, &age) in f.ages.ages().iter().enumerate() {
            out.push(ErrorRecord {
                country: w.country.clone(),
                origin: w.origin,
                horizon: h,
                age,
                actual: panel.rates()[(t, x)],
                point: f.point[(h - 1, x)],
                lower: f.lower[(h - 1, x)],
                upper: f.upper[(h - 1, x)],
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRecord {
    pub country: String,
    pub origin: i32,
    pub model: ModelId,
    pub bic: f64,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    /// Error records per column, ordered by country, window, horizon, age.
    pub records: BTreeMap<String, Vec<ErrorRecord>>,
    pub bics: Vec<BicRecord>,
    pub scores: ScoreTable,
    pub weights: BTreeMap<AveragingMethod, WeightTable>,
    /// One MCS result per horizon (`None` where too few periods).
    pub mcs: Vec<Option<McsResult>>,
    /// HUw weight parameter per country.
    pub lambdas: BTreeMap<String, f64>,
}

impl StageOutput {
    /// Records per (country, column) at horizon `h`.
    pub fn window_count(&self, column: &str, country: &str, h: usize, n_ages: usize) -> usize {
        self.records.get(column).map_or(0, |r| {
            r.iter().filter(|e| e.country == country && e.horizon == h).count()
        }) / n_ages.max(1)
    }
}

fn prepare_all(panels: &[RatePanel], design: &StudyDesign, last_needed: i32) -> Result<Vec<Prepared>, HarnessError> {
    if panels.is_empty() {
        return Err(HarnessError::NoPanels);
    }
    panels.iter().map(|p| prepare(p, design, last_needed)).collect()
}

fn lambdas(prepared: &[Prepared]) -> BTreeMap<String, f64> {
    prepared
        .iter()
        .filter_map(|p| p.lambda.map(|l| (p.panel.country.clone(), l)))
        .collect()
}

/// Expanding windows ending `initial_fit_end..in_sample_end − 1`, each
/// forecast through `in_sample_end`, then one weight table per method.
pub fn run_stage1(panels: &[RatePanel], design: &StudyDesign) -> Result<StageOutput, HarnessError> {
    design.validate()?;
    let prepared = prepare_all(panels, design, design.in_sample_end)?;
    let windows = run_windows(
        &prepared,
        design,
        design.initial_fit_end,
        design.in_sample_end - 1,
        design.in_sample_end,
    )?;

    let mut scores = ScoreTable::new(design.columns(false), design.interval_alpha());
    let mut records: BTreeMap<String, Vec<ErrorRecord>> = BTreeMap::new();
    let mut bics = Vec::new();
    for (c, w) in &windows {
        for (f, bic) in w.forecasts.iter().zip(&w.bics) {
            let recs = records_for(&prepared[*c].panel, w, &f.forecast);
            for r in &recs {
                scores.add(f.model.label(), r)?;
            }
            records.entry(f.model.to_string()).or_default().extend(recs);
            bics.push(BicRecord {
                country: w.country.clone(),
                origin: w.origin,
                model: f.model,
                bic: *bic,
            });
        }
    }

    let (weights, mcs) = derive_weights(design, &scores, &records, &bics)?;
    Ok(StageOutput {
        records,
        bics,
        scores,
        weights,
        mcs,
        lambdas: lambdas(&prepared),
    })
}

type Weights = (BTreeMap<AveragingMethod, WeightTable>, Vec<Option<McsResult>>);

fn derive_weights(
    design: &StudyDesign,
    scores: &ScoreTable,
    records: &BTreeMap<String, Vec<ErrorRecord>>,
    bics: &[BicRecord],
) -> Result<Weights, HarnessError> {
    let models = &design.models;
    let hn = design.horizon;
    let l = models.len();
    let mut weights = BTreeMap::new();
    let mut mcs_results = Vec::new();
    for &method in &design.methods {
        let table = match method {
            AveragingMethod::Equal => WeightTable::constant(models.clone(), &equal_weights(l), &equal_weights(l), hn),
            AveragingMethod::Frequentist => frequentist_weights(scores, models, hn)?,
            AveragingMethod::Bayesian => {
                let w = bic_weights(&mean_adjusted_bics(models, bics));
                WeightTable::constant(models.clone(), &w, &w, hn)
            }
            AveragingMethod::Mcs => {
                let mut point = DMatrix::zeros(hn, l);
                for h in 1..=hn {
                    let per_model: Vec<Vec<f64>> = models
                        .iter()
                        .map(|m| {
                            records[m.label()]
                                .iter()
                                .filter(|r| r.horizon == h)
                                .map(ErrorRecord::abs_error)
                                .collect()
                        })
                        .collect();
                    let n = per_model[0].len();
                    let survivors: Vec<usize> = if l < 2 || n < crate::averaging::MIN_PERIODS {
                        mcs_results.push(None);
                        (0..l).collect()
                    } else {
                        let losses = DMatrix::from_fn(l, n, |i, t| per_model[i][t]);
                        let r = mcs_select(&losses, &design.mcs)?;
                        let s = r.survivors.clone();
                        mcs_results.push(Some(r));
                        s
                    };
                    for &s in &survivors {
                        point[(h - 1, s)] = 1.0 / survivors.len() as f64;
                    }
                }
                WeightTable {
                    models: models.clone(),
                    interval: point.clone(),
                    point,
                }
            }
        };
        weights.insert(method, table);
    }
    Ok((weights, mcs_results))
}

/// Each model's BIC minus the smallest BIC of its (country, window),
/// averaged over countries and windows.
fn mean_adjusted_bics(models: &[ModelId], bics: &[BicRecord]) -> Vec<f64> {
    let mut groups: BTreeMap<(&str, i32), Vec<&BicRecord>> = BTreeMap::new();
    for b in bics {
        groups.entry((b.country.as_str(), b.origin)).or_default().push(b);
    }
    let mut sums = vec![0.0; models.len()];
    let mut counts = vec![0usize; models.len()];
    for group in groups.values() {
        let min = group.iter().map(|b| b.bic).fold(f64::INFINITY, f64::min);
        for b in group {
            if let Some(i) = models.iter().position(|m| *m == b.model) {
                sums[i] += b.bic - min;
                counts[i] += 1;
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, c)| s / (*c).max(1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub scores: ScoreTable,
    pub lambdas: BTreeMap<String, f64>,
}

/// Expanding windows ending `in_sample_end..holdout_end − 1`; every model
/// and every averaging method is scored on the holdout years.
pub fn run_stage2(
    panels: &[RatePanel],
    design: &StudyDesign,
    weights: &BTreeMap<AveragingMethod, WeightTable>,
) -> Result<Stage2Output, HarnessError> {
    design.validate()?;
    for m in &design.methods {
        let w = weights
            .get(m)
            .ok_or_else(|| HarnessError::BadDesign(format!("no weights for method {m}")))?;
        if w.models != design.models {
            return Err(HarnessError::BadDesign(format!(
                "weights for {m} cover different models"
            )));
        }
    }
    let prepared = prepare_all(panels, design, design.holdout_end)?;
    let windows = run_windows(
        &prepared,
        design,
        design.in_sample_end,
        design.holdout_end - 1,
        design.holdout_end,
    )?;
    let mut scores = ScoreTable::new(design.columns(true), design.interval_alpha());
    for (c, w) in &windows {
        let panel = &prepared[*c].panel;
        for f in &w.forecasts {
            for r in records_for(panel, w, &f.forecast) {
                scores.add(f.model.label(), &r)?;
            }
        }
        for &method in &design.methods {
            let combined = combine_forecasts(&w.forecasts, &weights[&method], method, &design.transform, design.level)?;
            for r in records_for(panel, w, &combined.forecast) {
                scores.add(method.label(), &r)?;
            }
        }
    }
    Ok(Stage2Output {
        scores,
        lambdas: lambdas(&prepared),
    })
}

#[derive(Debug, Clone)]
pub struct ProductionForecast {
    pub country: String,
    /// Calendar year of each horizon.
    pub years: Vec<i32>,
    pub lambda: Option<f64>,
    pub combined: CombinedForecast,
}

/// Fits every model to the whole panel and combines their `horizon`-year
/// forecasts with `weights`.
pub fn forecast_production(
    panel: &RatePanel,
    design: &StudyDesign,
    weights: &WeightTable,
    method: AveragingMethod,
    horizon: usize,
) -> Result<ProductionForecast, HarnessError> {
    if horizon == 0 {
        return Err(HarnessError::BadDesign("horizon must be at least 1".into()));
    }
    if weights.horizons() < horizon {
        return Err(AveragingError::ShortWeightTable {
            have: weights.horizons(),
            need: horizon,
        }
        .into());
    }
    let country = panel.country.clone();
    if panel.n_years() < design.min_fit_years() {
        return Err(HarnessError::InsufficientHistory {
            country,
            first: panel.first_year(),
            last: panel.last_year(),
            need_first: panel.last_year() - design.min_fit_years() as i32 + 1,
            need_last: panel.last_year(),
        });
    }
    let transformed = boxcox(panel, &design.transform).map_err(|source| HarnessError::Transform {
        country: country.clone(),
        source,
    })?;
    let surface = smooth_panel(&transformed).map_err(|source| HarnessError::Smoothing {
        country: country.clone(),
        source,
    })?;
    let lambda = if weights.models.contains(&ModelId::HuWeighted) {
        Some(choose_lambda(&surface, design).map_err(|source| HarnessError::Lambda {
            country: country.clone(),
            source,
        })?)
    } else {
        None
    };
    let cfg = BankConfig {
        models: weights.models.clone(),
        ..design.bank_config(lambda)
    };
    let out = fit_bank(&surface, &cfg, horizon).map_err(|source| HarnessError::Model {
        country: country.clone(),
        origin: panel.last_year(),
        source,
    })?;
    let combined = combine_forecasts(&out.forecasts, weights, method, &design.transform, design.level)?;
    Ok(ProductionForecast {
        country,
        years: (1..=horizon as i32).map(|h| panel.last_year() + h).collect(),
        lambda,
        combined,
    })
}

//! Univariate time-series models: random walk, random walk with drift and
//! ARIMA with automatic order selection.
//!
//! All three share [`UtsModel`] and are forecast with [`forecast_uts`]. The
//! ARIMA mean term is parameterised as the mean of the differenced series
//! (the drift when `d = 1`).

mod kpss;
mod likelihood;
mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{bfgs, BfgsOptions};
use kpss::difference;
pub use kpss::{kpss_statistic, ndiffs, short_lag, KPSS_CRITICAL_5PCT};
pub use select::{select_arima, SelectOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArimaError {
    #[error("series of length {len} is too short (need at least {need})")]
    TooShort { len: usize, need: usize },
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("likelihood optimisation failed for ARIMA({p},{d},{q})")]
    NonConvergence { p: usize, d: usize, q: usize },
    #[error("fitted ARIMA({p},{d},{q}) is not causal/invertible")]
    NonInvertible { p: usize, d: usize, q: usize },
    #[error("no candidate ARIMA model could be fitted")]
    NoModelFit,
    #[error("unsupported order: {0}")]
    BadOrder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UtsKind {
    RandomWalk,
    RandomWalkDrift,
    Arima,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

/// A fitted univariate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtsModel {
    pub kind: UtsKind,
    pub order: ArimaOrder,
    pub with_constant: bool,
    /// Mean of the `d`-times differenced series; the drift for RWD.
    pub constant: f64,
    pub ar: Vec<f64>,
    /// MA coefficients in the `1 + Σ θ_j B^j` convention.
    pub ma: Vec<f64>,
    pub innovation_var: f64,
    /// Length of the fitted (undifferenced) series.
    pub n: usize,
    pub loglik: f64,
    pub aicc: f64,
    /// In-sample one-step innovations, aligned to the end of the series.
    pub residuals: Vec<f64>,
}

impl UtsModel {
    /// Estimated parameters, including the innovation variance.
    pub fn n_params(&self) -> usize {
        match self.kind {
            UtsKind::RandomWalk => 1,
            UtsKind::RandomWalkDrift => 2,
            UtsKind::Arima => self.order.p + self.order.q + usize::from(self.with_constant) + 1,
        }
    }

    /// One-step in-sample fitted values for the last `residuals.len()`
    /// observations of `series`.
    pub fn fitted(&self, series: &[f64]) -> Vec<f64> {
        let k = self.residuals.len().min(series.len());
        let tail = &series[series.len() - k..];
        let res = &self.residuals[self.residuals.len() - k..];
        tail.iter().zip(res).map(|(y, e)| y - e).collect()
    }
}

/// Point forecasts and forecast variances for horizons `1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtsForecast {
    pub point: Vec<f64>,
    pub variance: Vec<f64>,
}

fn check_finite(series: &[f64]) -> Result<(), ArimaError> {
    if series.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ArimaError::NonFinite)
    }
}

fn gaussian_loglik(residuals: &[f64], sigma2: f64) -> f64 {
    let m = residuals.len() as f64;
    if sigma2 <= 0.0 {
        return f64::INFINITY;
    }
    let ssq: f64 = residuals.iter().map(|e| e * e).sum();
    -0.5 * (m * (2.0 * std::f64::consts::PI * sigma2).ln() + ssq / sigma2)
}

pub(crate) fn aicc(loglik: f64, k: usize, m: usize) -> f64 {
    let (kf, mf) = (k as f64, m as f64);
    if mf - kf - 1.0 <= 0.0 {
        return f64::INFINITY;
    }
    -2.0 * loglik + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (mf - kf - 1.0)
}

/// Random walk: `innovation_var` is the mean squared first difference.
pub fn fit_rw(series: &[f64]) -> Result<UtsModel, ArimaError> {
    if series.len() < 2 {
        return Err(ArimaError::TooShort {
            len: series.len(),
            need: 2,
        });
    }
    check_finite(series)?;
    let diffs = difference(series);
    let sigma2 = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
    let loglik = gaussian_loglik(&diffs, sigma2);
    Ok(UtsModel {
        kind: UtsKind::RandomWalk,
        order: ArimaOrder::new(0, 1, 0),
        with_constant: false,
        constant: 0.0,
        ar: vec![],
        ma: vec![],
        innovation_var: sigma2,
        n: series.len(),
        loglik,
        aicc: aicc(loglik, 1, diffs.len()),
        residuals: diffs,
    })
}

/// Random walk with drift `c = (last − first)/(n − 1)`; innovation variance
/// uses denominator `n − 2`.
pub fn fit_rwd(series: &[f64]) -> Result<UtsModel, ArimaError> {
    let n = series.len();
    if n < 3 {
        return Err(ArimaError::TooShort { len: n, need: 3 });
    }
    check_finite(series)?;
    let drift = (series[n - 1] - series[0]) / (n - 1) as f64;
    let residuals: Vec<f64> = difference(series).into_iter().map(|d| d - drift).collect();
    let sigma2 = residuals.iter().map(|e| e * e).sum::<f64>() / (n - 2) as f64;
    let loglik = gaussian_loglik(&residuals, sigma2);
    Ok(UtsModel {
        kind: UtsKind::RandomWalkDrift,
        order: ArimaOrder::new(0, 1, 0),
        with_constant: true,
        constant: drift,
        ar: vec![],
        ma: vec![],
        innovation_var: sigma2,
        n,
        loglik,
        aicc: aicc(loglik, 2, residuals.len()),
        residuals,
    })
}

fn difference_n(series: &[f64], d: usize) -> Vec<f64> {
    let mut w = series.to_vec();
    for _ in 0..d {
        w = difference(&w);
    }
    w
}

/// Fits ARIMA(p,d,q) by exact Gaussian maximum likelihood, starting from a
/// conditional-sum-of-squares solution. The mean of the differenced series
/// (when `with_constant`) and the innovation variance are profiled out;
/// AR and MA coefficients are optimised through a partial-autocorrelation
/// reparameterisation so the fit is always causal and invertible.
pub fn fit_arima(series: &[f64], order: ArimaOrder, with_constant: bool) -> Result<UtsModel, ArimaError> {
    let ArimaOrder { p, d, q } = order;
    if d > 2 {
        return Err(ArimaError::BadOrder(format!("d = {d} > 2")));
    }
    let need = p + q + d + 2;
    if series.len() < need {
        return Err(ArimaError::TooShort {
            len: series.len(),
            need,
        });
    }
    check_finite(series)?;
    let w = difference_n(series, d);
    let m = w.len();
    let k = p + q;

    let x0 = if k > 0 {
        let centre = if with_constant {
            w.iter().sum::<f64>() / m as f64
        } else {
            0.0
        };
        let z: Vec<f64> = w.iter().map(|v| v - centre).collect();
        let css_obj = |raw: &[f64]| {
            let (ar, ma) = likelihood::unpack(raw, p);
            let ssq = likelihood::css(&z, &ar, &ma);
            if ssq > 0.0 {
                ((ssq / (m - p) as f64).ln()) * 0.5 * (m - p) as f64
            } else {
                f64::NEG_INFINITY
            }
        };
        let start = bfgs(
            css_obj,
            &vec![0.0; k],
            BfgsOptions {
                max_iter: 100,
                ..Default::default()
            },
        );
        if start.value.is_finite() && start.x.iter().all(|v| v.abs() < 8.0) {
            start.x
        } else {
            vec![0.0; k]
        }
    } else {
        vec![]
    };

    let neg_ll = |raw: &[f64]| {
        let (ar, ma) = likelihood::unpack(raw, p);
        match likelihood::profile(&w, &ar, &ma, with_constant) {
            Some(pr) if pr.loglik.is_finite() => -pr.loglik,
            _ => f64::NAN,
        }
    };
    let raw = if k > 0 {
        let mut best = bfgs(neg_ll, &x0, BfgsOptions::default());
        if !best.value.is_finite() {
            best = bfgs(neg_ll, &vec![0.0; k], BfgsOptions::default());
        }
        if !best.value.is_finite() {
            return Err(ArimaError::NonConvergence { p, d, q });
        }
        best.x
    } else {
        vec![]
    };
    let (ar, ma) = likelihood::unpack(&raw, p);
    let pr = likelihood::profile(&w, &ar, &ma, with_constant).ok_or(ArimaError::NonConvergence { p, d, q })?;
    if ar.iter().chain(&ma).any(|c| !c.is_finite()) {
        return Err(ArimaError::NonInvertible { p, d, q });
    }
    let n_params = k + usize::from(with_constant) + 1;
    Ok(UtsModel {
        kind: UtsKind::Arima,
        order,
        with_constant,
        constant: pr.mean,
        ar,
        ma,
        innovation_var: pr.sigma2,
        n: series.len(),
        loglik: pr.loglik,
        aicc: aicc(pr.loglik, n_params, m),
        residuals: pr.residuals,
    })
}

/// ARIMA(0,d,0) for a series whose `d`-th difference is constant. Zero
/// innovation variance.
pub(crate) fn degenerate_arima(series: &[f64], d: usize) -> UtsModel {
    let w = difference_n(series, d);
    let constant = w.iter().sum::<f64>() / w.len().max(1) as f64;
    UtsModel {
        kind: UtsKind::Arima,
        order: ArimaOrder::new(0, d, 0),
        with_constant: true,
        constant,
        ar: vec![],
        ma: vec![],
        innovation_var: 0.0,
        n: series.len(),
        loglik: f64::INFINITY,
        aicc: f64::NEG_INFINITY,
        residuals: vec![0.0; w.len()],
    }
}

/// MA(∞) weights `ψ_0..ψ_{h−1}` of the model with AR polynomial
/// `φ(B)(1 − B)^d` and MA polynomial `θ(B)`.
pub fn psi_weights(ar: &[f64], ma: &[f64], d: usize, h: usize) -> Vec<f64> {
    // expand φ(B)(1−B)^d as 1 − Σ φ*_k B^k
    let mut poly = vec![1.0];
    poly.extend(ar.iter().map(|c| -c));
    for _ in 0..d {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c;
        }
        poly = next;
    }
    let phi_star: Vec<f64> = poly[1..].iter().map(|c| -c).collect();
    let mut psi = vec![0.0; h];
    for i in 0..h {
        let mut v = if i == 0 {
            1.0
        } else {
            ma.get(i - 1).copied().unwrap_or(0.0)
        };
        for (k, &phi) in phi_star.iter().enumerate() {
            if i > k {
                v += phi * psi[i - 1 - k];
            }
        }
        psi[i] = v;
    }
    psi
}

/// Forecasts `horizon` steps beyond the end of `last_values`, which must be
/// the series the model was fitted to (or at least its final `p + d`
/// observations).
///
/// Points iterate the ARMA recursion on the differenced scale with future
/// innovations at zero and undo the differencing; variances accumulate
/// squared MA(∞) weights, so RW and RWD give `h·σ²`.
pub fn forecast_uts(model: &UtsModel, last_values: &[f64], horizon: usize) -> UtsForecast {
    assert!(!last_values.is_empty(), "forecast_uts needs at least one observation");
    let sigma2 = model.innovation_var;
    match model.kind {
        UtsKind::RandomWalk | UtsKind::RandomWalkDrift => {
            let last = *last_values.last().unwrap();
            let c = if model.kind == UtsKind::RandomWalkDrift {
                model.constant
            } else {
                0.0
            };
            UtsForecast {
                point: (1..=horizon).map(|h| last + c * h as f64).collect(),
                variance: (1..=horizon).map(|h| h as f64 * sigma2).collect(),
            }
        }
        UtsKind::Arima => {
            let ArimaOrder { p, d, q } = model.order;
            let mu = if model.with_constant { model.constant } else { 0.0 };
            // differenced levels: levels[k] is last_values differenced k times
            let mut levels = vec![last_values.to_vec()];
            for k in 0..d {
                levels.push(difference(&levels[k]));
            }
            let w = &levels[d];
            let mut path: Vec<f64> = w.iter().map(|v| v - mu).collect();
            let m = path.len();
            let res = &model.residuals;
            let eps = |idx: isize| -> f64 {
                // idx is a position in `path` (< m); align residuals to the end
                let off = res.len() as isize - m as isize + idx;
                if idx < m as isize && off >= 0 && (off as usize) < res.len() {
                    res[off as usize]
                } else {
                    0.0
                }
            };
            let mut w_hat = Vec::with_capacity(horizon);
            for h in 0..horizon {
                let t = (m + h) as isize;
                let mut v = 0.0;
                for i in 0..p {
                    let idx = t - 1 - i as isize;
                    if idx >= 0 {
                        v += model.ar[i] * path[idx as usize];
                    }
                }
                for j in 0..q {
                    v += model.ma[j] * eps(t - 1 - j as isize);
                }
                path.push(v);
                w_hat.push(v + mu);
            }
            // integrate back up through the differencing levels
            let mut forecast = w_hat;
            for k in (0..d).rev() {
                let mut last = *levels[k].last().unwrap();
                forecast = forecast
                    .into_iter()
                    .map(|dw| {
                        last += dw;
                        last
                    })
                    .collect();
            }
            let psi = psi_weights(&model.ar, &model.ma, d, horizon);
            let mut acc = 0.0;
            let variance = psi
                .iter()
                .map(|w| {
                    acc += w * w;
                    sigma2 * acc
                })
                .collect();
            UtsForecast {
                point: forecast,
                variance,
            }
        }
    }
}

/// Fits an automatically selected ARIMA, falling back to RWD when selection
/// fails or the series is too short for it.
pub fn auto_model(series: &[f64]) -> Result<UtsModel, ArimaError> {
    match select_arima(series, &SelectOptions::default()) {
        Ok(m) => Ok(m),
        Err(_) => fit_rwd(series).or_else(|_| fit_rw(series)),
    }
}

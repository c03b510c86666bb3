//! Per-year smoothing of transformed rate curves over age.
//!
//! Each year's curve is fitted by a cubic smoothing spline with a knot at
//! every observed age, minimising `Σ (y_i − g(x_i))² + λ ∫ g''²`. The smoother
//! matrix is diagonalised once per age grid (Demmler-Reinsch basis), which
//! makes the fit and the generalised cross-validation score cheap to evaluate
//! for any penalty.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::AgeGrid;
use crate::transform::TransformedPanel;

/// Floor applied to estimated noise variances.
pub const NOISE_VARIANCE_FLOOR: f64 = 1e-12;

/// Default moving-average window (in ages) for noise variance estimation.
pub const DEFAULT_NOISE_WINDOW: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum SmoothingError {
    #[error("singular smoothing system: {0}")]
    SingularSystem(String),
    #[error("curve length {got} does not match {expected} ages")]
    LengthMismatch { got: usize, expected: usize },
    #[error("curve contains non-finite values")]
    NonFinite,
    #[error("penalty must be finite and non-negative, got {0}")]
    BadPenalty(f64),
    #[error("noise window must be odd and at least 1, got {0}")]
    BadWindow(usize),
    #[error("year {year}: {source}")]
    Year {
        year: i32,
        #[source]
        source: Box<SmoothingError>,
    },
}

/// Roughness penalty for a smoothing fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Fixed(f64),
    /// Chosen by generalised cross-validation.
    Auto,
}

/// Spline smoother for one age grid.
#[derive(Debug, Clone)]
pub struct SplineSmoother {
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl SplineSmoother {
    pub fn new(ages: &AgeGrid) -> Result<Self, SmoothingError> {
        let x: Vec<f64> = ages.ages().iter().map(|&a| a as f64).collect();
        let n = x.len();
        if n < 3 {
            return Err(SmoothingError::SingularSystem(format!(
                "need at least 3 knots, got {n}"
            )));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m = n - 2;
        let mut q = DMatrix::zeros(n, m);
        let mut r = DMatrix::zeros(m, m);
        for j in 0..m {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let r_inv_qt = r
            .cholesky()
            .ok_or_else(|| SmoothingError::SingularSystem("band matrix not positive definite".into()))?
            .solve(&q.transpose());
        let mut k = &q * r_inv_qt;
        k = (&k + k.transpose()) * 0.5;
        let eig = SymmetricEigen::new(k);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        // The two linear directions are unpenalised; pin their eigenvalues to 0.
        let eigenvalues = eig
            .eigenvalues
            .iter()
            .map(|&g| if g < 1e-10 * max { 0.0 } else { g })
            .collect();
        Ok(Self {
            basis: eig.eigenvectors,
            eigenvalues,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    fn coefficients(&self, y: &[f64]) -> DVector<f64> {
        self.basis.tr_mul(&DVector::from_column_slice(y))
    }

    fn rss_and_trace(&self, coef: &DVector<f64>, lambda: f64) -> (f64, f64) {
        let mut rss = 0.0;
        let mut trace = 0.0;
        for (c, &g) in coef.iter().zip(&self.eigenvalues) {
            let shrink = 1.0 / (1.0 + lambda * g);
            let resid = c * (1.0 - shrink);
            rss += resid * resid;
            trace += shrink;
        }
        (rss, trace)
    }

    /// Generalised cross-validation score `n·RSS / (n − tr S)²`.
    pub fn gcv(&self, y: &[f64], lambda: f64) -> f64 {
        let coef = self.coefficients(y);
        self.gcv_from_coef(&coef, lambda)
    }

    fn gcv_from_coef(&self, coef: &DVector<f64>, lambda: f64) -> f64 {
        let n = self.len() as f64;
        let (rss, trace) = self.rss_and_trace(coef, lambda);
        let dof = n - trace;
        if dof <= 1e-8 {
            return f64::INFINITY;
        }
        n * rss / (dof * dof)
    }

    fn select_penalty(&self, coef: &DVector<f64>) -> f64 {
        const LO: f64 = -4.0;
        const HI: f64 = 8.0;
        const STEPS: usize = 97;
        let step = (HI - LO) / (STEPS - 1) as f64;
        let score = |log_l: f64| self.gcv_from_coef(coef, 10f64.powf(log_l));
        let mut best = 0;
        let mut best_score = f64::INFINITY;
        for i in 0..STEPS {
            let s = score(LO + step * i as f64);
            if s < best_score {
                best_score = s;
                best = i;
            }
        }
        // Golden-section refinement between the neighbouring grid points.
        let mut a = LO + step * best.saturating_sub(1) as f64;
        let mut b = LO + step * (best + 1).min(STEPS - 1) as f64;
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (score(c), score(d));
        for _ in 0..40 {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = score(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = score(d);
            }
        }
        let refined = 0.5 * (a + b);
        if score(refined) <= best_score {
            10f64.powf(refined)
        } else {
            10f64.powf(LO + step * best as f64)
        }
    }

    /// Fits one curve. Returns the fitted values, residuals and the penalty used.
    pub fn fit(&self, y: &[f64], penalty: Penalty) -> Result<SmoothFit, SmoothingError> {
        if y.len() != self.len() {
            return Err(SmoothingError::LengthMismatch {
                got: y.len(),
                expected: self.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SmoothingError::NonFinite);
        }
        let coef = self.coefficients(y);
        let lambda = match penalty {
            Penalty::Fixed(l) if l.is_finite() && l >= 0.0 => l,
            Penalty::Fixed(l) => return Err(SmoothingError::BadPenalty(l)),
            Penalty::Auto => self.select_penalty(&coef),
        };
        let shrunk = DVector::from_iterator(
            coef.len(),
            coef.iter().zip(&self.eigenvalues).map(|(c, &g)| c / (1.0 + lambda * g)),
        );
        let fitted: Vec<f64> = (&self.basis * shrunk).iter().copied().collect();
        let residuals = y.iter().zip(&fitted).map(|(o, f)| o - f).collect();
        Ok(SmoothFit {
            fitted,
            residuals,
            penalty: lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFit {
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub penalty: f64,
}

/// Smooths a single curve over `ages`; returns `(fitted, residuals)`.
pub fn smooth_year(curve: &[f64], ages: &AgeGrid, penalty: Penalty) -> Result<(Vec<f64>, Vec<f64>), SmoothingError> {
    let fit = SplineSmoother::new(ages)?.fit(curve, penalty)?;
    Ok((fit.fitted, fit.residuals))
}

/// Per year, a centred moving average of squared residuals over age. The
/// window is truncated at the ends of the age range.
pub fn estimate_noise_variance(residuals: &DMatrix<f64>, window: usize) -> Result<DMatrix<f64>, SmoothingError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(SmoothingError::BadWindow(window));
    }
    let half = window / 2;
    let p = residuals.ncols();
    Ok(DMatrix::from_fn(residuals.nrows(), p, |t, i| {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(p - 1);
        let sum: f64 = (lo..=hi).map(|k| residuals[(t, k)].powi(2)).sum();
        (sum / (hi - lo + 1) as f64).max(NOISE_VARIANCE_FLOOR)
    }))
}

/// Smoothed transformed curves and their observational noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSurface {
    pub years: Vec<i32>,
    pub ages: AgeGrid,
    /// Unsmoothed transformed rates.
    pub observed: DMatrix<f64>,
    pub smooth: DMatrix<f64>,
    pub noise_var: DMatrix<f64>,
    /// Penalty selected for each year.
    pub penalties: Vec<f64>,
}

impl SmoothSurface {
    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    /// Keeps only the rows whose index is in `keep`.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)]);
        Self {
            years: keep.iter().map(|&i| self.years[i]).collect(),
            ages: self.ages.clone(),
            observed: pick(&self.observed),
            smooth: pick(&self.smooth),
            noise_var: pick(&self.noise_var),
            penalties: keep.iter().map(|&i| self.penalties[i]).collect(),
        }
    }
}

/// Smooths every year of `panel` with a GCV-selected penalty.
pub fn smooth_panel(panel: &TransformedPanel) -> Result<SmoothSurface, SmoothingError> {
    smooth_panel_with(panel, Penalty::Auto, DEFAULT_NOISE_WINDOW)
}

pub fn smooth_panel_with(
    panel: &TransformedPanel,
    penalty: Penalty,
    window: usize,
) -> Result<SmoothSurface, SmoothingError> {
    let smoother = SplineSmoother::new(panel.ages())?;
    let values = panel.values();
    let fits: Vec<SmoothFit> = (0..values.nrows())
        .into_par_iter()
        .map(|t| {
            let row: Vec<f64> = values.row(t).iter().copied().collect();
            smoother.fit(&row, penalty).map_err(|e| SmoothingError::Year {
                year: panel.years()[t],
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    let (n, p) = (values.nrows(), values.ncols());
    let smooth = DMatrix::from_fn(n, p, |t, i| fits[t].fitted[i]);
    let residuals = DMatrix::from_fn(n, p, |t, i| fits[t].residuals[i]);
    let noise_var = estimate_noise_variance(&residuals, window)?;
    Ok(SmoothSurface {
        years: panel.years().to_vec(),
        ages: panel.ages().clone(),
        observed: values.clone(),
        smooth,
        noise_var,
        penalties: fits.iter().map(|f| f.penalty).collect(),
    })
}

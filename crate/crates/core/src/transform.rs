//! Box-Cox transform between rates and the modelling scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AgeGrid, DataError, RatePanel};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("kappa must lie in [0, 1], got {0}")]
    BadKappa(f64),
    #[error("log of zero rate at row {row}, column {col} (kappa = 0, no floor configured)")]
    LogOfZero { row: usize, col: usize },
}

/// Transform parameter plus the optional floor applied to zero rates on the
/// log branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kappa: f64,
    /// Floor substituted for non-positive rates when `kappa == 0`. `None`
    /// means such rates are an error.
    pub zero_floor: Option<f64>,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            kappa: 0.4,
            zero_floor: None,
        }
    }
}

impl TransformSpec {
    pub fn new(kappa: f64) -> Result<Self, TransformError> {
        let spec = Self {
            kappa,
            zero_floor: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_zero_floor(mut self, floor: f64) -> Self {
        self.zero_floor = Some(floor);
        self
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if !(0.0..=1.0).contains(&self.kappa) || self.kappa.is_nan() {
            return Err(TransformError::BadKappa(self.kappa));
        }
        Ok(())
    }

    /// `(f^κ − 1)/κ`, or `ln f` when `κ = 0`.
    ///
    /// Returns `None` only on the log branch for a non-positive rate without a
    /// floor.
    pub fn forward(&self, rate: f64) -> Option<f64> {
        if self.kappa == 0.0 {
            let r = if rate > 0.0 { rate } else { self.zero_floor? };
            Some(r.ln())
        } else {
            if rate <= 0.0 {
                return Some(-1.0 / self.kappa);
            }
            Some((self.kappa * rate.ln()).exp_m1() / self.kappa)
        }
    }

    /// Inverse transform. The base `κm + 1` is clamped at zero, so the result
    /// is always a non-negative rate.
    pub fn inverse(&self, value: f64) -> f64 {
        if self.kappa == 0.0 {
            value.exp()
        } else {
            let scaled = self.kappa * value;
            if scaled <= -1.0 {
                0.0
            } else {
                (scaled.ln_1p() / self.kappa).exp()
            }
        }
    }
}

/// Rates on the modelling scale; same shape and labels as the source panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPanel {
    pub country: String,
    years: Vec<i32>,
    ages: AgeGrid,
    values: DMatrix<f64>,
    spec: TransformSpec,
}

impl TransformedPanel {
    /// Wraps already transformed values. Shape must match `years × ages`.
    pub fn from_values(
        country: impl Into<String>,
        years: Vec<i32>,
        ages: AgeGrid,
        values: DMatrix<f64>,
        spec: TransformSpec,
    ) -> Result<Self, DataError> {
        if values.nrows() != years.len() || values.ncols() != ages.len() || years.is_empty() {
            return Err(DataError::BadPanel("transformed values do not match labels".into()));
        }
        Ok(Self {
            country: country.into(),
            years,
            ages,
            values,
            spec,
        })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn ages(&self) -> &AgeGrid {
        &self.ages
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn spec(&self) -> TransformSpec {
        self.spec
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Column `age_idx` as a time series.
    pub fn age_series(&self, age_idx: usize) -> Vec<f64> {
        self.values.column(age_idx).iter().copied().collect()
    }

    /// Keeps only the rows whose index is in `keep` (in order).
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let values = DMatrix::from_fn(keep.len(), self.values.ncols(), |i, j| self.values[(keep[i], j)]);
        Self {
            country: self.country.clone(),
            years: keep.iter().map(|&i| self.years[i]).collect(),
            ages: self.ages.clone(),
            values,
            spec: self.spec,
        }
    }
}

pub fn boxcox(panel: &RatePanel, spec: &TransformSpec) -> Result<TransformedPanel, TransformError> {
    spec.validate()?;
    let rates = panel.rates();
    let mut values = DMatrix::zeros(rates.nrows(), rates.ncols());
    for i in 0..rates.nrows() {
        for j in 0..rates.ncols() {
            values[(i, j)] = spec
                .forward(rates[(i, j)])
                .ok_or(TransformError::LogOfZero { row: i, col: j })?;
        }
    }
    Ok(TransformedPanel {
        country: panel.country.clone(),
        years: panel.years().to_vec(),
        ages: panel.ages().clone(),
        values,
        spec: *spec,
    })
}

pub fn inv_boxcox(panel: &TransformedPanel, spec: &TransformSpec) -> Result<RatePanel, TransformError> {
    spec.validate()?;
    let rates = panel.values().map(|m| spec.inverse(m));
    Ok(
        RatePanel::new(panel.country.clone(), panel.years.clone(), panel.ages.clone(), rates)
            .expect("inverse transform yields finite non-negative rates on a valid shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        let s = TransformSpec::default();
        assert_eq!(s.forward(1.0).unwrap(), 0.0);
        // (0.05^0.4 − 1)/0.4 computed with mpmath at 30 digits.
        assert!((s.forward(0.05).unwrap() - (-1.745_727_957_931_854_6)).abs() < 1e-12);
        assert_eq!(s.forward(0.0).unwrap(), -2.5);
        assert_eq!(s.inverse(0.0), 1.0);
        assert_eq!(s.inverse(-2.5), 0.0);
        assert_eq!(s.inverse(-10.0), 0.0);
    }

    #[test]
    fn log_branch_and_floor() {
        let s = TransformSpec::new(0.0).unwrap();
        assert_eq!(s.forward(0.0), None);
        assert!((s.forward(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        let floored = s.with_zero_floor(1e-6);
        assert!((floored.forward(0.0).unwrap() - 1e-6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_kappa_rejected() {
        assert!(TransformSpec::new(1.5).is_err());
        assert!(TransformSpec::new(-0.1).is_err());
    }

    #[test]
    fn panel_log_of_zero_errors() {
        let grid = AgeGrid::span(15, 16).unwrap();
        let p = RatePanel::new("c", vec![2000], grid, DMatrix::from_row_slice(1, 2, &[0.1, 0.0])).unwrap();
        let err = boxcox(&p, &TransformSpec::new(0.0).unwrap()).unwrap_err();
        assert_eq!(err, TransformError::LogOfZero { row: 0, col: 1 });
        let t = boxcox(&p, &TransformSpec::default()).unwrap();
        let back = inv_boxcox(&t, &t.spec()).unwrap();
        assert!(back.rates()[(0, 1)].abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn round_trip_positive(kappa in 0.0f64..=1.0, rates in prop::collection::vec(1e-5f64..2.0, 1..40)) {
            let spec = TransformSpec::new(kappa).unwrap();
            let n = rates.len();
            let grid = AgeGrid::span(0, n as i32 - 1).unwrap();
            let p = RatePanel::new("c", vec![1], grid, DMatrix::from_row_slice(1, n, &rates)).unwrap();
            let back = inv_boxcox(&boxcox(&p, &spec).unwrap(), &spec).unwrap();
            for (a, b) in p.rates().iter().zip(back.rates().iter()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs());
            }
        }

        #[test]
        fn strictly_increasing(kappa in 0.0f64..=1.0, a in 1e-6f64..3.0, b in 1e-6f64..3.0) {
            prop_assume!(a != b);
            let spec = TransformSpec::new(kappa).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(spec.forward(lo).unwrap() < spec.forward(hi).unwrap());
        }
    }
}

//! Point and interval forecast accuracy on the rate scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records for horizon {0}")]
    EmptyGroup(usize),
    #[error("interval lower bound {lower} exceeds upper bound {upper}")]
    BadInterval { lower: f64, upper: f64 },
    #[error("interval alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
}

/// One scored forecast of one age in one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub country: String,
    /// Final year of the fitting window.
    pub origin: i32,
    pub horizon: usize,
    pub age: i32,
    pub actual: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ErrorRecord {
    pub fn abs_error(&self) -> f64 {
        (self.actual - self.point).abs()
    }
}

/// Width plus `2/α` times the distance by which `actual` falls strictly
/// outside `[lower, upper]`.
pub fn interval_score(actual: f64, lower: f64, upper: f64, alpha: f64) -> Result<f64, MetricsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricsError::BadAlpha(alpha));
    }
    if lower > upper {
        return Err(MetricsError::BadInterval { lower, upper });
    }
    let mut s = upper - lower;
    if actual < lower {
        s += 2.0 / alpha * (lower - actual);
    }
    if actual > upper {
        s += 2.0 / alpha * (actual - upper);
    }
    Ok(s)
}

fn group(records: &[ErrorRecord], horizon: usize) -> Result<Vec<&ErrorRecord>, MetricsError> {
    let g: Vec<_> = records.iter().filter(|r| r.horizon == horizon).collect();
    if g.is_empty() {
        return Err(MetricsError::EmptyGroup(horizon));
    }
    Ok(g)
}

/// Mean absolute forecast error over the records at `horizon`.
pub fn mafe(records: &[ErrorRecord], horizon: usize) -> Result<f64, MetricsError> {
    let g = group(records, horizon)?;
    Ok(g.iter().map(|r| r.abs_error()).sum::<f64>() / g.len() as f64)
}

pub fn mean_interval_score(records: &[ErrorRecord], horizon: usize, alpha: f64) -> Result<f64, MetricsError> {
    let g = group(records, horizon)?;
    let mut total = 0.0;
    for r in &g {
        total += interval_score(r.actual, r.lower, r.upper, alpha)?;
    }
    Ok(total / g.len() as f64)
}

/// Running sums for one (horizon, column) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub abs_error_sum: f64,
    pub interval_score_sum: f64,
    pub n_obs: usize,
}

impl ScoreCell {
    pub fn mafe(&self) -> f64 {
        self.abs_error_sum / self.n_obs as f64
    }

    pub fn mean_interval_score(&self) -> f64 {
        self.interval_score_sum / self.n_obs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Point,
    Interval,
}

/// Accuracy per horizon and column (a model or an averaging method), kept as
/// sums and counts so partial tables merge exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub alpha: f64,
    pub columns: Vec<String>,
    cells: BTreeMap<(usize, usize), ScoreCell>,
}

impl ScoreTable {
    pub fn new(columns: Vec<String>, alpha: f64) -> Self {
        Self {
            alpha,
            columns,
            cells: BTreeMap::new(),
        }
    }

    fn column_index(&self, column: &str) -> usize {
        self.columns
            .iter()
            .position(|c| c == column)
            .unwrap_or_else(|| panic!("unknown score column {column:?}"))
    }

    pub fn add(&mut self, column: &str, record: &ErrorRecord) -> Result<(), MetricsError> {
        let is = interval_score(record.actual, record.lower, record.upper, self.alpha)?;
        let c = self.column_index(column);
        let cell = self.cells.entry((record.horizon, c)).or_default();
        cell.abs_error_sum += record.abs_error();
        cell.interval_score_sum += is;
        cell.n_obs += 1;
        Ok(())
    }

    /// Adds `other`'s sums into `self`. Columns must match.
    pub fn merge(&mut self, other: &ScoreTable) {
        assert_eq!(self.columns, other.columns, "merging tables with different columns");
        for (k, v) in &other.cells {
            let cell = self.cells.entry(*k).or_default();
            cell.abs_error_sum += v.abs_error_sum;
            cell.interval_score_sum += v.interval_score_sum;
            cell.n_obs += v.n_obs;
        }
    }

    pub fn cell(&self, horizon: usize, column: &str) -> Option<ScoreCell> {
        self.cells.get(&(horizon, self.column_index(column))).copied()
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.cells.keys().map(|k| k.0).collect();
        h.dedup();
        h
    }

    pub fn mafe(&self, horizon: usize, column: &str) -> Result<f64, MetricsError> {
        self.cell(horizon, column)
            .map(|c| c.mafe())
            .ok_or(MetricsError::EmptyGroup(horizon))
    }

    pub fn mean_interval_score(&self, horizon: usize, column: &str) -> Result<f64, MetricsError> {
        self.cell(horizon, column)
            .map(|c| c.mean_interval_score())
            .ok_or(MetricsError::EmptyGroup(horizon))
    }

    pub fn value(&self, kind: ScoreKind, horizon: usize, column: &str) -> Option<f64> {
        self.cell(horizon, column).map(|c| match kind {
            ScoreKind::Point => c.mafe(),
            ScoreKind::Interval => c.mean_interval_score(),
        })
    }

    /// Median over horizons of one column.
    pub fn median(&self, kind: ScoreKind, column: &str) -> Option<f64> {
        let mut v: Vec<f64> = self
            .horizons()
            .into_iter()
            .filter_map(|h| self.value(kind, h, column))
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    /// Horizon rows then a `Median` row. With `display` values are ×100 with
    /// two decimals; otherwise full precision.
    pub fn to_csv(&self, kind: ScoreKind, display: bool) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) if display => format!("{:.2}", 100.0 * x),
            Some(x) => format!("{x}"),
            None => String::new(),
        };
        let mut out = String::from("h");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for h in self.horizons() {
            let _ = write!(out, "{h}");
            for c in &self.columns {
                out.push(',');
                out.push_str(&fmt(self.value(kind, h, c)));
            }
            out.push('\n');
        }
        out.push_str("Median");
        for c in &self.columns {
            out.push(',');
            out.push_str(&fmt(self.median(kind, c)));
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(h: usize, actual: f64, point: f64, lower: f64, upper: f64) -> ErrorRecord {
        ErrorRecord {
            country: "X".into(),
            origin: 2000,
            horizon: h,
            age: 20,
            actual,
            point,
            lower,
            upper,
        }
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(1.5, 1.0, 2.0, 0.2).unwrap(), 1.0);
        assert!((interval_score(3.0, 1.0, 2.0, 0.2).unwrap() - 11.0).abs() < 1e-12);
        assert!((interval_score(0.5, 1.0, 2.0, 0.2).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(interval_score(2.0, 1.0, 2.0, 0.2).unwrap(), 1.0);
        assert!(matches!(
            interval_score(1.0, 2.0, 1.0, 0.2),
            Err(MetricsError::BadInterval { .. })
        ));
        assert!(matches!(
            interval_score(1.0, 1.0, 2.0, 1.0),
            Err(MetricsError::BadAlpha(_))
        ));
    }

    #[test]
    fn group_means() {
        let r = vec![
            rec(1, 1.0, 1.5, 0.0, 3.0),
            rec(1, 1.0, 0.5, 0.0, 3.0),
            rec(2, 3.0, 3.0, 1.0, 2.0),
        ];
        assert!((mafe(&r, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mafe(&r, 3), Err(MetricsError::EmptyGroup(3)));
        let mixed = vec![rec(1, 3.0, 0.0, 1.0, 2.0), rec(1, 0.5, 0.0, 1.0, 2.0)];
        assert!((mean_interval_score(&mixed, 1, 0.2).unwrap() - 8.5).abs() < 1e-12);
    }

    #[test]
    fn table_layout_and_median() {
        let mut t = ScoreTable::new(vec!["A".into(), "B".into()], 0.2);
        for (h, e) in [(1, 0.01), (2, 0.02), (3, 0.04)] {
            t.add("A", &rec(h, 0.1, 0.1 + e, 0.0, 1.0)).unwrap();
            t.add("B", &rec(h, 0.1, 0.1, 0.0, 0.5)).unwrap();
        }
        assert!((t.median(ScoreKind::Point, "A").unwrap() - 0.02).abs() < 1e-15);
        let csv = t.to_csv(ScoreKind::Point, true);
        assert_eq!(csv.lines().next().unwrap(), "h,A,B");
        assert_eq!(csv.lines().nth(1).unwrap(), "1,1.00,0.00");
        assert_eq!(csv.lines().last().unwrap(), "Median,2.00,0.00");
        assert!(t.to_csv(ScoreKind::Interval, false).contains("0.5"));
    }

    proptest! {
        #[test]
        fn score_bounds(actual in -5.0f64..5.0, a in -5.0f64..5.0, w in 0.0f64..5.0, alpha in 0.01f64..0.99) {
            let (lower, upper) = (a, a + w);
            let s = interval_score(actual, lower, upper, alpha).unwrap();
            if actual >= lower && actual <= upper {
                prop_assert_eq!(s, upper - lower);
            } else {
                prop_assert!(s > upper - lower);
            }
            prop_assert_eq!(interval_score(actual, actual, actual, alpha).unwrap(), 0.0);
        }

        #[test]
        fn merge_matches_single_pass(errs in proptest::collection::vec((1usize..4, 0.0f64..1.0), 1..40), split in 0usize..40) {
            let cols = vec!["M".to_string()];
            let mut whole = ScoreTable::new(cols.clone(), 0.2);
            let mut a = ScoreTable::new(cols.clone(), 0.2);
            let mut b = ScoreTable::new(cols, 0.2);
            for (i, (h, e)) in errs.iter().enumerate() {
                let r = rec(*h, 0.5, 0.5 + e, 0.0, 1.0);
                whole.add("M", &r).unwrap();
                if i < split { a.add("M", &r).unwrap() } else { b.add("M", &r).unwrap() }
            }
            a.merge(&b);
            for h in whole.horizons() {
                let (x, y) = (whole.mafe(h, "M").unwrap(), a.mafe(h, "M").unwrap());
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
                prop_assert_eq!(whole.cell(h, "M").unwrap().n_obs, a.cell(h, "M").unwrap().n_obs);
            }
        }
    }
}

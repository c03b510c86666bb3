//! Rate panels and their loaders.
//!
//! A [`RatePanel`] is a rectangular year × age matrix of fertility rates for a
//! single population. Two on-disk layouts are understood: the whitespace
//! delimited period 1x1 text files distributed by the Human Fertility Database
//! (`Year Age ASFR`), and a generic long CSV (`country,year,age,rate`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file contains no data rows")]
    EmptyFile(String),
    #[error("missing cell: year {year}, age {age}")]
    MissingCell { year: i32, age: i32 },
    #[error("duplicate cell: year {year}, age {age}")]
    DuplicateCell { year: i32, age: i32 },
    #[error("line {line}: non-numeric value {value:?}")]
    NonNumericValue { line: usize, value: String },
    #[error("negative rate {rate} at year {year}, age {age}")]
    NegativeRate { year: i32, age: i32, rate: f64 },
    #[error("non-finite rate at year {year}, age {age}")]
    NonFiniteRate { year: i32, age: i32 },
    #[error("missing column {0:?} in CSV header")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid age grid: {0}")]
    BadAgeGrid(String),
    #[error("invalid panel: {0}")]
    BadPanel(String),
}

/// Ordered single-year ages spanned by a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGrid {
    ages: Vec<i32>,
}

impl AgeGrid {
    pub fn new(ages: Vec<i32>) -> Result<Self, DataError> {
        if ages.is_empty() {
            return Err(DataError::BadAgeGrid("empty".into()));
        }
        if ages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::BadAgeGrid("ages must be strictly increasing".into()));
        }
        Ok(Self { ages })
    }

    /// Contiguous ages `first..=last`.
    pub fn span(first: i32, last: i32) -> Result<Self, DataError> {
        Self::new((first..=last).collect())
    }

    pub fn ages(&self) -> &[i32] {
        &self.ages
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn first(&self) -> i32 {
        self.ages[0]
    }

    pub fn last(&self) -> i32 {
        self.ages[self.ages.len() - 1]
    }

    pub fn position(&self, age: i32) -> Option<usize> {
        self.ages.binary_search(&age).ok()
    }
}

impl Default for AgeGrid {
    /// Ages 15 to 49 inclusive.
    fn default() -> Self {
        Self {
            ages: (15..=49).collect(),
        }
    }
}

/// Observed age-specific fertility rates, one row per calendar year.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePanel {
    pub country: String,
    years: Vec<i32>,
    ages: AgeGrid,
    rates: DMatrix<f64>,
}

impl RatePanel {
    /// Builds a panel after checking shape, year contiguity and that every
    /// rate is finite and non-negative.
    pub fn new(
        country: impl Into<String>,
        years: Vec<i32>,
        ages: AgeGrid,
        rates: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        if years.is_empty() {
            return Err(DataError::BadPanel("no years".into()));
        }
        if rates.nrows() != years.len() || rates.ncols() != ages.len() {
            return Err(DataError::BadPanel(format!(
                "rates are {}x{}, expected {}x{}",
                rates.nrows(),
                rates.ncols(),
                years.len(),
                ages.len()
            )));
        }
        for w in years.windows(2) {
            if w[1] != w[0] + 1 {
                let missing = if w[1] > w[0] { w[0] + 1 } else { w[1] };
                return Err(DataError::MissingCell {
                    year: missing,
                    age: ages.first(),
                });
            }
        }
        for (i, &year) in years.iter().enumerate() {
            for (j, &age) in ages.ages().iter().enumerate() {
                let r = rates[(i, j)];
                if !r.is_finite() {
                    return Err(DataError::NonFiniteRate { year, age });
                }
                if r < 0.0 {
                    return Err(DataError::NegativeRate { year, age, rate: r });
                }
            }
        }
        Ok(Self {
            country: country.into(),
            years,
            ages,
            rates,
        })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn ages(&self) -> &AgeGrid {
        &self.ages
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        self.years[self.years.len() - 1]
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        let first = self.first_year();
        if year < first || year > self.last_year() {
            None
        } else {
            Some((year - first) as usize)
        }
    }

    pub fn row(&self, year: i32) -> Option<Vec<f64>> {
        self.year_index(year)
            .map(|i| self.rates.row(i).iter().copied().collect())
    }

    /// Sub-panel with years in `from..=to`, clipped to the available range.
    pub fn slice_years(&self, from: i32, to: i32) -> Result<Self, DataError> {
        let from = from.max(self.first_year());
        let to = to.min(self.last_year());
        if from > to {
            return Err(DataError::BadPanel(format!(
                "{}: no data between {from} and {to}",
                self.country
            )));
        }
        let start = (from - self.first_year()) as usize;
        let len = (to - from + 1) as usize;
        Ok(Self {
            country: self.country.clone(),
            years: (from..=to).collect(),
            ages: self.ages.clone(),
            rates: self.rates.rows(start, len).into_owned(),
        })
    }

    /// SHA-256 over country, years, ages and the bit patterns of every rate.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.country.as_bytes());
        for y in &self.years {
            h.update(y.to_le_bytes());
        }
        for a in self.ages.ages() {
            h.update(a.to_le_bytes());
        }
        for i in 0..self.rates.nrows() {
            for j in 0..self.rates.ncols() {
                h.update(self.rates[(i, j)].to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses ages such as `27`, `12-` or `55+`. Returns the numeric age and
/// whether the token was an open-ended upper group.
fn parse_age(token: &str) -> Option<(i32, bool)> {
    let t = token.trim();
    if let Some(s) = t.strip_suffix('+') {
        s.trim().parse().ok().map(|a| (a, true))
    } else if let Some(s) = t.strip_suffix('-') {
        s.trim().parse().ok().map(|a| (a, false))
    } else {
        t.parse().ok().map(|a| (a, false))
    }
}

#[derive(Default)]
struct CellCollector {
    // (year, age) -> rate for grid ages
    cells: BTreeMap<(i32, i32), f64>,
    // (year) -> summed rates above the top grid age, used only when the top age is absent
    above_top: BTreeMap<i32, f64>,
    years: BTreeSet<i32>,
}

impl CellCollector {
    fn add(
        &mut self,
        grid: &AgeGrid,
        year: i32,
        age: i32,
        rate: f64,
        reject_duplicates: bool,
    ) -> Result<(), DataError> {
        if !rate.is_finite() {
            return Err(DataError::NonFiniteRate { year, age });
        }
        if rate < 0.0 {
            return Err(DataError::NegativeRate { year, age, rate });
        }
        self.years.insert(year);
        if age > grid.last() {
            *self.above_top.entry(year).or_insert(0.0) += rate;
            return Ok(());
        }
        if grid.position(age).is_none() {
            return Ok(());
        }
        if self.cells.insert((year, age), rate).is_some() && reject_duplicates {
            return Err(DataError::DuplicateCell { year, age });
        }
        Ok(())
    }

    fn into_panel(self, country: &str, grid: &AgeGrid) -> Result<RatePanel, DataError> {
        let (first, last) = match (self.years.first(), self.years.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(DataError::EmptyFile(country.to_string())),
        };
        let years: Vec<i32> = (first..=last).collect();
        let top = grid.last();
        let mut rates = DMatrix::zeros(years.len(), grid.len());
        for (i, &year) in years.iter().enumerate() {
            for (j, &age) in grid.ages().iter().enumerate() {
                let v = match self.cells.get(&(year, age)) {
                    Some(&v) => v,
                    None if age == top => match self.above_top.get(&year) {
                        Some(&v) => v,
                        None => return Err(DataError::MissingCell { year, age }),
                    },
                    None => return Err(DataError::MissingCell { year, age }),
                };
                rates[(i, j)] = v;
            }
        }
        RatePanel::new(country, years, grid.clone(), rates)
    }
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Country code derived from an HFD file name, e.g. `GBRTENWasfrRR.txt` -> `GBRTENW`.
pub fn country_from_path(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.find("asfr") {
        Some(i) if i > 0 => stem[..i].to_string(),
        _ => stem,
    }
}

/// Loads an HFD `asfrRR` period 1x1 file restricted to the default age grid.
pub fn load_hfd(path: impl AsRef<Path>) -> Result<RatePanel, DataError> {
    load_hfd_with_grid(path, &AgeGrid::default())
}

/// Loads an HFD `asfrRR` file onto `grid`.
///
/// The first two lines are skipped, as is a `Year Age ASFR` column header if
/// present. Ages outside the grid are dropped. The top grid age is taken
/// verbatim when present; only when it is absent are the rows above it summed
/// into it.
pub fn load_hfd_with_grid(path: impl AsRef<Path>, grid: &AgeGrid) -> Result<RatePanel, DataError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let country = country_from_path(path);
    let mut cells = CellCollector::default();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate().skip(2) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields[0].eq_ignore_ascii_case("year") {
            continue;
        }
        if fields.len() < 3 {
            return Err(DataError::NonNumericValue {
                line: lineno + 1,
                value: line.trim().to_string(),
            });
        }
        let bad = |v: &str| DataError::NonNumericValue {
            line: lineno + 1,
            value: v.to_string(),
        };
        let year: i32 = fields[0].parse().map_err(|_| bad(fields[0]))?;
        let (age, _) = parse_age(fields[1]).ok_or_else(|| bad(fields[1]))?;
        let rate: f64 = fields[2].parse().map_err(|_| bad(fields[2]))?;
        cells.add(grid, year, age, rate, false)?;
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::EmptyFile(path.display().to_string()));
    }
    cells.into_panel(&country, grid)
}

/// Column names of a long-format rate CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub country: String,
    pub year: String,
    pub age: String,
    pub rate: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            age: "age".into(),
            rate: "rate".into(),
        }
    }
}

/// Loads a long CSV into one panel per country on the default age grid.
pub fn load_csv_long(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<BTreeMap<String, RatePanel>, DataError> {
    load_csv_long_with_grid(path, schema, &AgeGrid::default())
}

pub fn load_csv_long_with_grid(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    grid: &AgeGrid,
) -> Result<BTreeMap<String, RatePanel>, DataError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (ci, yi, ai, ri) = (
        col(&schema.country)?,
        col(&schema.year)?,
        col(&schema.age)?,
        col(&schema.rate)?,
    );

    let mut by_country: BTreeMap<String, CellCollector> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |v: &str| DataError::NonNumericValue {
            line,
            value: v.to_string(),
        };
        let country = field(ci).to_string();
        let year: i32 = field(yi).parse().map_err(|_| bad(field(yi)))?;
        let (age, _) = parse_age(field(ai)).ok_or_else(|| bad(field(ai)))?;
        let rate: f64 = field(ri).parse().map_err(|_| bad(field(ri)))?;
        by_country
            .entry(country)
            .or_default()
            .add(grid, year, age, rate, true)?;
    }
    if by_country.is_empty() {
        return Err(DataError::EmptyFile(path.display().to_string()));
    }
    by_country
        .into_iter()
        .map(|(c, cells)| cells.into_panel(&c, grid).map(|p| (c, p)))
        .collect()
}

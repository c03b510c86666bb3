//! Synthetic fertility schedules for tests, examples and demonstrations.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{AgeGrid, RatePanel};

/// Hadwiger fertility curve with total fertility `a`, shape `b` and
/// location `c` (roughly the modal age).
pub fn hadwiger(x: f64, a: f64, b: f64, c: f64) -> f64 {
    (a * b / (c * std::f64::consts::PI.sqrt())) * (c / x).powf(1.5) * (-b * b * (c / x + x / c - 2.0)).exp()
}

/// Parameters of one synthetic country. Total fertility and the location
/// parameter move linearly between their start and end values, with a
/// random-walk wobble on total fertility and multiplicative noise on every
/// rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCountry {
    pub name: String,
    pub first_year: i32,
    pub last_year: i32,
    pub tfr: (f64, f64),
    pub location: (f64, f64),
    pub shape: f64,
    pub tfr_wobble: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SyntheticCountry {
    pub fn new(name: &str, first_year: i32, last_year: i32, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            first_year,
            last_year,
            tfr: (2.6, 1.6),
            location: (25.5, 29.5),
            shape: 3.4,
            tfr_wobble: 0.03,
            noise_sd: 0.04,
            seed,
        }
    }

    pub fn panel(&self) -> RatePanel {
        self.panel_on(&AgeGrid::default())
    }

    pub fn panel_on(&self, grid: &AgeGrid) -> RatePanel {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let years: Vec<i32> = (self.first_year..=self.last_year).collect();
        let span = (years.len().max(2) - 1) as f64;
        let mut wobble = 0.0;
        let mut rates = DMatrix::zeros(years.len(), grid.len());
        for (t, _) in years.iter().enumerate() {
            let s = t as f64 / span;
            wobble += self.tfr_wobble * std.sample(&mut rng);
            let a = (self.tfr.0 + s * (self.tfr.1 - self.tfr.0) + wobble).max(0.3);
            let c = self.location.0 + s * (self.location.1 - self.location.0);
            for (j, &age) in grid.ages().iter().enumerate() {
                let clean = hadwiger(age as f64 + 0.5, a, self.shape, c);
                rates[(t, j)] = clean * (self.noise_sd * std.sample(&mut rng)).exp();
            }
        }
        RatePanel::new(&self.name, years, grid.clone(), rates).expect("synthetic panel is valid")
    }
}

/// `n` countries with staggered trends, named `SYN1`, `SYN2`, ….
pub fn synthetic_corpus(n: usize, first_year: i32, last_year: i32, seed: u64) -> Vec<RatePanel> {
    (0..n)
        .map(|i| {
            let f = i as f64 / n.max(1) as f64;
            let mut c = SyntheticCountry::new(
                &format!("SYN{}", i + 1),
                first_year,
                last_year,
                seed.wrapping_add(i as u64),
            );
            c.tfr = (2.2 + 0.8 * f, 1.3 + 0.5 * f);
            c.location = (24.5 + 2.0 * f, 28.5 + 2.5 * f);
            c.shape = 3.2 + 0.4 * f;
            c.panel()
        })
        .collect()
}

/// Every rate equal to `rate`.
pub fn constant_panel(name: &str, first_year: i32, last_year: i32, rate: f64) -> RatePanel {
    let grid = AgeGrid::default();
    let years: Vec<i32> = (first_year..=last_year).collect();
    let rates = DMatrix::from_element(years.len(), grid.len(), rate);
    RatePanel::new(name, years, grid, rates).expect("constant panel is valid")
}

/// Renders a panel in the whitespace-separated HFD layout.
pub fn to_hfd_text(panel: &RatePanel) -> String {
    let mut out = format!("{}, Age-specific fertility rates\nsynthetic\n\n", panel.country);
    out.push_str("  Year      Age       ASFR   OpenInterval\n");
    for (t, year) in panel.years().iter().enumerate() {
        for (j, age) in panel.ages().ages().iter().enumerate() {
            let _ = writeln!(out, "  {year}      {age:<6}  {:.6}    FALSE", panel.rates()[(t, j)]);
        }
    }
    out
}

/// Renders panels as a long CSV with `country,year,age,rate` columns.
pub fn to_csv_long(panels: &[RatePanel]) -> String {
    let mut out = String::from("country,year,age,rate\n");
    for p in panels {
        for (t, year) in p.years().iter().enumerate() {
            for (j, age) in p.ages().ages().iter().enumerate() {
                let _ = writeln!(out, "{},{year},{age},{}", p.country, p.rates()[(t, j)]);
            }
        }
    }
    out
}

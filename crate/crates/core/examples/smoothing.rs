//! Penalised spline smoothing of one year's transformed rates with a
//! GCV-chosen penalty, plus the per-age noise variance of a whole panel.

use fertcast::smoothing::{smooth_panel, Penalty, SplineSmoother};
use fertcast::synthetic::SyntheticCountry;
use fertcast::transform::{boxcox, TransformSpec};

fn main() {
    let mut c = SyntheticCountry::new("DEMO", 1990, 1999, 4);
    c.noise_sd = 0.1;
    let t = boxcox(&c.panel(), &TransformSpec::default()).unwrap();
    let smoother = SplineSmoother::new(t.ages()).unwrap();
    let year: Vec<f64> = t.values().row(0).iter().copied().collect();

    for pen in [1e-3, 1e-1, 10.0, 1e3] {
        println!("penalty {pen:>7}: GCV {:.6}", smoother.gcv(&year, pen));
    }
    let fit = smoother.fit(&year, Penalty::Auto).unwrap();
    println!("GCV choice {:.4}", fit.penalty);
    for (i, age) in t.ages().ages().iter().enumerate().step_by(5) {
        println!("  age {age}: observed {:+.4}  smooth {:+.4}", year[i], fit.fitted[i]);
    }

    let s = smooth_panel(&t).unwrap();
    let mean_var: f64 = s.noise_var.iter().sum::<f64>() / s.noise_var.len() as f64;
    println!("{} years smoothed; mean noise variance {mean_var:.2e}", s.n_years());
}

//! Functional time-series forecasts: HU, the geometrically weighted HUw and
//! the outlier-robust HUrob.

use fertcast::ftsa::{default_lambda_tail, fit_hu, forecast_hu, select_lambda, HuVariant};
use fertcast::smoothing::smooth_panel;
use fertcast::synthetic::SyntheticCountry;
use fertcast::transform::{boxcox, TransformSpec};

fn main() {
    let spec = TransformSpec::default();
    let panel = SyntheticCountry::new("DEMO", 1960, 2000, 7).panel();
    let t = boxcox(&panel, &spec).unwrap();

    let surface = smooth_panel(&t).unwrap();
    let lambda = select_lambda(&surface, 3, &spec, default_lambda_tail(surface.n_years())).unwrap();
    println!("HUw weight parameter: {lambda:.2}");

    for (name, variant, lam) in [
        ("HU", HuVariant::Standard, None),
        ("HUw", HuVariant::Weighted, Some(lambda)),
        ("HUrob", HuVariant::Robust, None),
    ] {
        let model = fit_hu(&t, variant, 3, lam).unwrap();
        let fc = forecast_hu(&model, 10, &spec, 0.8).unwrap();
        let f = &fc.forecast;
        let tfr = |h: usize| f.point.row(h).sum();
        println!(
            "{name:>5}: excluded years {:?}; TFR 2001 {:.3}, 2010 {:.3}; age 30 in 2010 {:.4} [{:.4}, {:.4}]",
            model.excluded.iter().map(|&i| model.years[i]).collect::<Vec<_>>(),
            tfr(0),
            tfr(9),
            f.point[(9, 15)],
            f.lower[(9, 15)],
            f.upper[(9, 15)]
        );
    }
}

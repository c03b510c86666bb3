//! Automatic ARIMA selection (KPSS differencing, stepwise AICc) on three
//! simulated series.

use fertcast::arima::{auto_model, forecast_uts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(120).collect();

    let white = e.clone();
    let walk: Vec<f64> = e
        .iter()
        .scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect();
    let mut ar = vec![0.0; e.len()];
    for t in 1..e.len() {
        ar[t] = 0.8 * ar[t - 1] + e[t];
    }

    for (name, y) in [("white noise", &white), ("random walk", &walk), ("AR(1) 0.8", &ar)] {
        let m = auto_model(y).unwrap();
        let f = forecast_uts(&m, y, 3);
        println!(
            "{name:>12}: {:?} {} const={} ar {:.3?} ma {:.3?} AICc {:.1}; h=3 {:.2} ± {:.2}",
            m.kind,
            m.order,
            m.with_constant,
            m.ar,
            m.ma,
            m.aicc,
            f.point[2],
            f.variance[2].sqrt()
        );
    }
}

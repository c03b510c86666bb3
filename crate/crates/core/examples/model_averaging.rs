//! Frequentist, Bayesian and equal-weight combinations of two forecasts,
//! with the widened combined variance.

use fertcast::averaging::{bic_weights, combine_point, combine_variance, equal_weights, inverse_score_weights};

fn main() {
    let points = [1.0, 3.0];
    let vars = [1.0, 1.0];
    let schemes = [
        ("frequentist (MAFE 0.1, 0.3)", inverse_score_weights(&[0.1, 0.3])),
        ("Bayesian (BIC 100, 102)", bic_weights(&[100.0, 102.0])),
        ("equal", equal_weights(2)),
    ];
    for (name, w) in schemes {
        let y = combine_point(&points, &w).unwrap();
        let v = combine_variance(&points, &vars, &w, y).unwrap();
        println!("{name:>28}: weights {w:.3?}, point {y:.3}, variance {v:.3}");
    }
}

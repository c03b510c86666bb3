//! Box-Cox transform of a fertility schedule and its exact inverse.

use fertcast::synthetic::SyntheticCountry;
use fertcast::transform::{boxcox, inv_boxcox, TransformSpec};

fn main() {
    let panel = SyntheticCountry::new("DEMO", 2000, 2002, 1).panel();
    for kappa in [0.0, 0.4, 1.0] {
        let spec = TransformSpec::new(kappa).unwrap();
        let t = boxcox(&panel, &spec).unwrap();
        let back = inv_boxcox(&t, &spec).unwrap();
        let err = (back.rates() - panel.rates()).amax();
        println!(
            "kappa {kappa}: age 15 {:.4} -> {:.4}, age 28 {:.4} -> {:.4}, round-trip error {err:.1e}",
            panel.rates()[(0, 0)],
            t.values()[(0, 0)],
            panel.rates()[(0, 13)],
            t.values()[(0, 13)]
        );
    }
}

//! Model confidence set on simulated losses: two equally good models and
//! one clearly worse.

use fertcast::averaging::{mcs_select, McsOptions, McsStatistic};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let good = Normal::new(1.0, 0.3).unwrap();
    let bad = Normal::new(1.4, 0.3).unwrap();
    let losses = DMatrix::from_fn(3, 120, |i, _| {
        if i == 2 {
            bad.sample(&mut rng)
        } else {
            good.sample(&mut rng)
        }
    });

    for statistic in [McsStatistic::Max, McsStatistic::Range] {
        let r = mcs_select(
            &losses,
            &McsOptions {
                statistic,
                bootstrap: 2000,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        println!(
            "{statistic:?}: survivors {:?}, eliminated (model, p) {:?}, block length {}",
            r.survivors, r.eliminated, r.block_length
        );
    }
}

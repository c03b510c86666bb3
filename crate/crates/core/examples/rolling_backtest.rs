//! The two-stage rolling-origin study on a small synthetic corpus: stage 1
//! learns horizon-specific weights, stage 2 scores models and averages.

use fertcast::averaging::{AveragingMethod, McsOptions};
use fertcast::harness::{run_stage1, run_stage2, StudyDesign};
use fertcast::metrics::ScoreKind;
use fertcast::synthetic::synthetic_corpus;

fn main() {
    let panels = synthetic_corpus(3, 1955, 2001, 5);
    let design = StudyDesign {
        initial_fit_end: 1986,
        in_sample_end: 1991,
        holdout_end: 2001,
        horizon: 5,
        components: 3,
        mcs: McsOptions {
            bootstrap: 1000,
            seed: 5,
            ..Default::default()
        },
        ..StudyDesign::default()
    };
    let s1 = run_stage1(&panels, &design).unwrap();
    println!("HUw weight parameters: {:?}", s1.lambdas);
    println!(
        "frequentist weights (x100):\n{}",
        s1.weights[&AveragingMethod::Frequentist].to_csv(true)
    );

    let s2 = run_stage2(&panels, &design, &s1.weights).unwrap();
    println!("holdout MAFE (x100):\n{}", s2.scores.to_csv(ScoreKind::Point, true));
    println!(
        "holdout mean interval score (x100):\n{}",
        s2.scores.to_csv(ScoreKind::Interval, true)
    );
}

//! A combined forecast from a country's full history using weights learned
//! in stage 1, written as plot-ready CSV.

use fertcast::averaging::AveragingMethod;
use fertcast::cli::forecast_csv;
use fertcast::harness::{forecast_production, run_stage1, StudyDesign};
use fertcast::synthetic::synthetic_corpus;

fn main() {
    let panels = synthetic_corpus(2, 1950, 2016, 8);
    let design = StudyDesign {
        initial_fit_end: 2006,
        in_sample_end: 2016,
        holdout_end: 2017,
        horizon: 10,
        components: 3,
        methods: vec![AveragingMethod::Frequentist],
        ..StudyDesign::default()
    };
    let weights = run_stage1(&panels, &design)
        .unwrap()
        .weights
        .remove(&AveragingMethod::Frequentist)
        .unwrap();
    let fc = forecast_production(&panels[0], &design, &weights, AveragingMethod::Frequentist, 10).unwrap();

    let csv = forecast_csv(&fc);
    for line in csv.lines().take(4) {
        println!("{line}");
    }
    let f = &fc.combined.forecast;
    for h in [0, 4, 9] {
        println!(
            "{}: TFR {:.3} [{:.3}, {:.3}]",
            fc.years[h],
            f.point.row(h).sum(),
            f.lower.row(h).sum(),
            f.upper.row(h).sum()
        );
    }
}

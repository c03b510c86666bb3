//! KPSS level-stationarity test and the differencing order it implies.

/// 5% critical value of the KPSS level-stationarity statistic.
pub const KPSS_CRITICAL_5PCT: f64 = 0.463;

/// Short lag truncation `⌊4 (n/100)^{1/4}⌋`.
pub fn short_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// KPSS statistic for level stationarity with a Bartlett-kernel long-run
/// variance estimate.
pub fn kpss_statistic(y: &[f64], lags: usize) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut partial = 0.0;
    let mut sum_s2 = 0.0;
    for v in &e {
        partial += v;
        sum_s2 += partial * partial;
    }
    let nf = n as f64;
    let mut lrv = e.iter().map(|v| v * v).sum::<f64>() / nf;
    for j in 1..=lags.min(n.saturating_sub(1)) {
        let gj: f64 = (j..n).map(|t| e[t] * e[t - j]).sum::<f64>() / nf;
        lrv += 2.0 * (1.0 - j as f64 / (lags as f64 + 1.0)) * gj;
    }
    if lrv <= 0.0 {
        return 0.0;
    }
    sum_s2 / (nf * nf * lrv)
}

pub(crate) fn is_constant(y: &[f64]) -> bool {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    hi - lo <= 1e-12 * (1.0 + scale)
}

pub(crate) fn difference(y: &[f64]) -> Vec<f64> {
    y.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Number of differences (at most `max_d`) needed before the KPSS test stops
/// rejecting level stationarity at 5%.
pub fn ndiffs(y: &[f64], max_d: usize) -> usize {
    let mut x = y.to_vec();
    let mut d = 0;
    while d < max_d && x.len() >= 3 && !is_constant(&x) {
        let stat = kpss_statistic(&x, short_lag(x.len()));
        if stat <= KPSS_CRITICAL_5PCT {
            break;
        }
        x = difference(&x);
        d += 1;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistic_by_hand() {
        // e = (-1.5, -0.5, 0.5, 1.5); S = (-1.5, -2, -1.5, 0); ΣS² = 8.5; lrv(0 lags) = 5/4
        let stat = kpss_statistic(&[1.0, 2.0, 3.0, 4.0], 0);
        assert!((stat - 8.5 / (16.0 * 1.25)).abs() < 1e-12);
    }

    #[test]
    fn trend_needs_a_difference_and_constant_needs_none() {
        let trend: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(ndiffs(&trend, 2), 1);
        assert_eq!(ndiffs(&[3.0; 20], 2), 0);
        assert_eq!(short_lag(200), 4);
    }
}

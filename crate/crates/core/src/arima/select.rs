//! Stepwise AICc search over ARIMA orders.

use std::collections::HashSet;

use nalgebra::DMatrix;

use super::kpss::{difference, is_constant, ndiffs};
use super::{degenerate_arima, fit_arima, ArimaError, ArimaOrder, UtsModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    pub max_p: usize,
    pub max_q: usize,
    pub max_d: usize,
    /// Upper bound on the number of candidate fits.
    pub max_models: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            max_p: 5,
            max_q: 5,
            max_d: 2,
            max_models: 94,
        }
    }
}

/// Candidates with an AR or MA root this close to the unit circle are
/// discarded.
const MIN_ROOT_MODULUS: f64 = 1.01;

/// Smallest root modulus of `1 + a_1 z + … + a_k z^k`, or infinity when
/// the polynomial is constant.
pub fn min_root_modulus(a: &[f64]) -> f64 {
    let k = a.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
    if k == 0 {
        return f64::INFINITY;
    }
    // Roots in 1/z are the eigenvalues of the companion matrix.
    let companion = DMatrix::from_fn(k, k, |i, j| {
        if i == 0 {
            -a[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let radius = companion
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max);
    1.0 / radius
}

fn near_unit_root(m: &UtsModel) -> bool {
    let ar: Vec<f64> = m.ar.iter().map(|c| -c).collect();
    min_root_modulus(&ar) < MIN_ROOT_MODULUS || min_root_modulus(&m.ma) < MIN_ROOT_MODULUS
}

/// Candidate ordering: lower AICc, then fewer parameters, then lower q.
fn better(a: &UtsModel, b: &UtsModel) -> bool {
    const TIE: f64 = 1e-10;
    if a.aicc < b.aicc - TIE {
        return true;
    }
    if a.aicc > b.aicc + TIE {
        return false;
    }
    let (ka, kb) = (a.n_params(), b.n_params());
    if ka != kb {
        return ka < kb;
    }
    a.order.q < b.order.q
}

/// Selects `d` by repeated KPSS testing, then searches `(p, q)` and the
/// constant stepwise from the starting set (2,d,2), (0,d,0), (1,d,0),
/// (0,d,1), moving to the best neighbour (±1 on p and/or q, constant
/// toggled) while AICc improves. A constant is only considered for `d < 2`.
pub fn select_arima(series: &[f64], opts: &SelectOptions) -> Result<UtsModel, ArimaError> {
    if series.len() < 10 {
        return Err(ArimaError::TooShort {
            len: series.len(),
            need: 10,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::NonFinite);
    }
    let d = ndiffs(series, opts.max_d);
    let mut w = series.to_vec();
    for _ in 0..d {
        w = difference(&w);
    }
    if is_constant(&w) {
        return Ok(degenerate_arima(series, d));
    }
    let allow_constant = d < 2;

    let mut tried: HashSet<(usize, usize, bool)> = HashSet::new();
    let mut best: Option<UtsModel> = None;
    let mut fit = |p: usize, q: usize, c: bool, best: &mut Option<UtsModel>| -> Option<UtsModel> {
        if p > opts.max_p || q > opts.max_q || (c && !allow_constant) {
            return None;
        }
        if tried.len() >= opts.max_models || !tried.insert((p, q, c)) {
            return None;
        }
        let m = fit_arima(series, ArimaOrder::new(p, d, q), c).ok()?;
        if !m.aicc.is_finite() || near_unit_root(&m) {
            return None;
        }
        if best.as_ref().is_none_or(|b| better(&m, b)) {
            *best = Some(m.clone());
        }
        Some(m)
    };

    let c0 = allow_constant;
    for (p, q) in [(2, 2), (0, 0), (1, 0), (0, 1)] {
        fit(p, q, c0, &mut best);
    }
    if c0 {
        fit(0, 0, false, &mut best);
    }
    let Some(mut current) = best.clone() else {
        return Err(ArimaError::NoModelFit);
    };

    loop {
        let (p, q, c) = (
            current.order.p as isize,
            current.order.q as isize,
            current.with_constant,
        );
        let mut moves: Vec<(isize, isize, bool)> = vec![
            (p - 1, q, c),
            (p + 1, q, c),
            (p, q - 1, c),
            (p, q + 1, c),
            (p - 1, q - 1, c),
            (p + 1, q + 1, c),
            (p - 1, q + 1, c),
            (p + 1, q - 1, c),
        ];
        if allow_constant {
            moves.push((p, q, !c));
        }
        let mut step_best: Option<UtsModel> = None;
        for (np, nq, nc) in moves {
            if np < 0 || nq < 0 {
                continue;
            }
            if let Some(m) = fit(np as usize, nq as usize, nc, &mut best) {
                if step_best.as_ref().is_none_or(|b| better(&m, b)) {
                    step_best = Some(m);
                }
            }
        }
        match step_best {
            Some(m) if better(&m, &current) => current = m,
            _ => break,
        }
    }
    Ok(best.unwrap_or(current))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arima::forecast_uts;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_series_gives_zero_variance_white_noise() {
        let m = select_arima(&[2.5; 30], &SelectOptions::default()).unwrap();
        assert_eq!(m.order, ArimaOrder::new(0, 0, 0));
        assert_eq!(m.innovation_var, 0.0);
        assert_eq!(forecast_uts(&m, &[2.5; 30], 3).point, vec![2.5; 3]);
    }

    #[test]
    fn linear_series_is_drift() {
        let y: Vec<f64> = (0..25).map(|i| 1.0 + 0.5 * i as f64).collect();
        let m = select_arima(&y, &SelectOptions::default()).unwrap();
        assert_eq!(m.order.d, 1);
        let f = forecast_uts(&m, &y, 2);
        assert!((f.point[0] - 13.5).abs() < 1e-12 && (f.point[1] - 14.0).abs() < 1e-12);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(
            select_arima(&[1.0; 5], &SelectOptions::default()),
            Err(ArimaError::TooShort { .. })
        ));
    }

    #[test]
    fn strong_ar_process_picks_ar_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut y = vec![0.0; 300];
        for t in 2..300 {
            y[t] = 0.6 * y[t - 1] - 0.3 * y[t - 2] + nd.sample(&mut rng);
        }
        let m = select_arima(&y, &SelectOptions::default()).unwrap();
        assert_eq!(m.order.d, 0);
        assert!(m.order.p + m.order.q >= 1);
    }

    #[test]
    fn root_moduli() {
        assert_eq!(min_root_modulus(&[]), f64::INFINITY);
        assert!((min_root_modulus(&[-0.5]) - 2.0).abs() < 1e-12);
        // (1 - 0.5z)(1 + 0.25z): roots 2 and -4
        assert!((min_root_modulus(&[-0.25, -0.125]) - 2.0).abs() < 1e-12);
        // 1 + z^2: roots ±i
        assert!((min_root_modulus(&[0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((min_root_modulus(&[0.9, 0.0]) - 1.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn selections_stay_off_the_unit_circle() {
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut white = 0;
        for r in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + r);
            let e: Vec<f64> = (0..150).map(|_| nd.sample(&mut rng)).collect();
            let m = select_arima(&e, &SelectOptions::default()).unwrap();
            assert!(!near_unit_root(&m), "{} {:?} {:?}", m.order, m.ar, m.ma);
            white += usize::from(m.order == ArimaOrder::new(0, 0, 0));
        }
        assert!(white >= 12, "{white}");
    }

    #[test]
    fn tie_break_prefers_fewer_parameters() {
        let mut a = degenerate_arima(&[1.0; 12], 0);
        a.aicc = 10.0;
        let mut b = a.clone();
        b.order.q = 1;
        b.ma = vec![0.1];
        assert!(better(&a, &b));
        assert!(!better(&b, &a));
    }
}

//! Exact Gaussian likelihood of a zero-mean-after-profiling ARMA process via
//! the Kalman filter, with the mean and innovation variance concentrated out.

use nalgebra::{DMatrix, DVector};

/// Maps unconstrained reals to the coefficients of a stationary AR
/// polynomial `1 − Σ φ_j z^j` through partial autocorrelations.
pub(crate) fn pacf_to_coefficients(raw: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(raw.len());
    for (k, &x) in raw.iter().enumerate() {
        let r = x.tanh();
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - r * prev[k - 1 - j];
        }
        phi.push(r);
    }
    phi
}

/// AR and MA coefficients from the unconstrained parameter vector
/// `[ar_raw.., ma_raw..]`. MA coefficients are in the `1 + Σ θ_j z^j`
/// convention and are invertible by construction.
pub(crate) fn unpack(raw: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let ar = pacf_to_coefficients(&raw[..p]);
    let ma = pacf_to_coefficients(&raw[p..]).into_iter().map(|c| -c).collect();
    (ar, ma)
}

#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub loglik: f64,
    pub sigma2: f64,
    pub mean: f64,
    pub residuals: Vec<f64>,
}

fn state_space(ar: &[f64], ma: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let r = ar.len().max(ma.len() + 1);
    let mut t = DMatrix::zeros(r, r);
    for (i, &phi) in ar.iter().enumerate() {
        t[(i, 0)] = phi;
    }
    for i in 0..r - 1 {
        t[(i, i + 1)] = 1.0;
    }
    let mut rv = DVector::zeros(r);
    rv[0] = 1.0;
    for (j, &theta) in ma.iter().enumerate() {
        rv[j + 1] = theta;
    }
    (t, rv)
}

/// Stationary state covariance solving `P = T P Tᵀ + R Rᵀ`.
fn stationary_covariance(t: &DMatrix<f64>, rv: &DVector<f64>) -> Option<DMatrix<f64>> {
    let r = t.nrows();
    let rr = rv * rv.transpose();
    let kron = t.kronecker(t);
    let lhs = DMatrix::identity(r * r, r * r) - kron;
    let rhs = DVector::from_iterator(r * r, rr.iter().copied());
    let sol = lhs.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(r, r, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    if p.iter().all(|v| v.is_finite()) && p[(0, 0)] > 0.0 {
        Some(p)
    } else {
        None
    }
}

/// Profile likelihood of `w` under ARMA(`ar`, `ma`). When `with_mean` the mean
/// is estimated by generalised least squares; otherwise it is zero.
///
/// The transition matrix is a companion matrix, so `T x` and `T M Tᵀ` are
/// applied directly; covariance updates stop once they reach steady state.
pub(crate) fn profile(w: &[f64], ar: &[f64], ma: &[f64], with_mean: bool) -> Option<Profile> {
    let m = w.len();
    if m == 0 {
        return None;
    }
    let (t, rv) = state_space(ar, ma);
    let r = t.nrows();
    let p0 = stationary_covariance(&t, &rv)?;
    let phi: Vec<f64> = (0..r).map(|i| ar.get(i).copied().unwrap_or(0.0)).collect();
    let rvec: Vec<f64> = rv.iter().copied().collect();
    // row-major r × r
    let mut p: Vec<f64> = (0..r * r).map(|k| p0[(k / r, k % r)]).collect();
    let mut scratch = vec![0.0; r * r];
    let mut next = vec![0.0; r * r];
    let mut a_data = vec![0.0; r];
    let mut a_ones = vec![0.0; r];
    let mut pz = vec![0.0; r];
    let mut steady = false;

    let mut v_data = Vec::with_capacity(m);
    let mut v_ones = Vec::with_capacity(m);
    let mut f_all = Vec::with_capacity(m);
    let advance = |a: &mut [f64], gain: &[f64], v: f64| {
        let a0 = a[0] + gain[0] * v;
        for i in 0..r {
            let below = if i + 1 < r { a[i + 1] + gain[i + 1] * v } else { 0.0 };
            a[i] = phi[i] * a0 + below;
        }
    };
    for &obs in w {
        let f = p[0];
        if !(f.is_finite() && f > 0.0) {
            return None;
        }
        for i in 0..r {
            pz[i] = p[i * r] / f;
        }
        let vd = obs - a_data[0];
        let vo = 1.0 - a_ones[0];
        v_data.push(vd);
        v_ones.push(vo);
        f_all.push(f);
        advance(&mut a_data, &pz, vd);
        advance(&mut a_ones, &pz, vo);
        if steady {
            continue;
        }
        // scratch = P − P z zᵀ P / f
        for i in 0..r {
            for j in 0..r {
                scratch[i * r + j] = p[i * r + j] - pz[i] * p[j * r];
            }
        }
        // next = T scratch Tᵀ + R Rᵀ
        for i in 0..r {
            for j in 0..r {
                let left = |row: usize, col: usize| -> f64 {
                    // (T scratch)[row][col]
                    let below = if row + 1 < r { scratch[(row + 1) * r + col] } else { 0.0 };
                    phi[row] * scratch[col] + below
                };
                let below = if j + 1 < r { left(i, j + 1) } else { 0.0 };
                next[i * r + j] = left(i, 0) * phi[j] + below + rvec[i] * rvec[j];
            }
        }
        let change = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut p, &mut next);
        if change < 1e-13 * p[0] {
            steady = true;
        }
    }
    let mean = if with_mean {
        let num: f64 = (0..m).map(|i| v_data[i] * v_ones[i] / f_all[i]).sum();
        let den: f64 = (0..m).map(|i| v_ones[i] * v_ones[i] / f_all[i]).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    let residuals: Vec<f64> = (0..m).map(|i| v_data[i] - mean * v_ones[i]).collect();
    let ssq: f64 = (0..m).map(|i| residuals[i] * residuals[i] / f_all[i]).sum();
    let sum_log_f: f64 = f_all.iter().map(|f| f.ln()).sum();
    let sigma2 = ssq / m as f64;
    let mf = m as f64;
    let loglik = if sigma2 > 0.0 {
        -0.5 * (mf * (2.0 * std::f64::consts::PI * sigma2).ln() + sum_log_f + mf)
    } else {
        f64::INFINITY
    };
    Some(Profile {
        loglik,
        sigma2,
        mean,
        residuals,
    })
}

/// Conditional sum of squares of ARMA residuals on the demeaned series,
/// starting the recursion at `t = p` with zero pre-sample innovations.
pub(crate) fn css(z: &[f64], ar: &[f64], ma: &[f64]) -> f64 {
    let p = ar.len();
    let m = z.len();
    let mut e = vec![0.0; m];
    let mut ssq = 0.0;
    for t in p..m {
        let mut v = z[t];
        for (i, &phi) in ar.iter().enumerate() {
            v -= phi * z[t - 1 - i];
        }
        for (j, &theta) in ma.iter().enumerate() {
            if t > j {
                v -= theta * e[t - 1 - j];
            }
        }
        e[t] = v;
        ssq += v * v;
    }
    ssq
}

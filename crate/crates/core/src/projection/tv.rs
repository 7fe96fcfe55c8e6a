//! Exact one-dimensional total-variation denoising (fused-lasso signal
//! approximator):
//!
//! ```text
//! argmin_u  ½‖u − b‖² + λ Σₜ |u[t+1] − u[t]|
//! ```
//!
//! Direct taut-string style algorithm after Condat (2013). It scans the
//! input once, maintaining lower and upper bounds on the current segment
//! value and backtracking only to the start of the open segment, so the
//! result is exact up to floating-point rounding.

/// Solve the fused-lasso signal approximator for `input` with penalty `lambda`.
pub fn tv_denoise(input: &[f64], lambda: f64) -> Vec<f64> {
    let n = input.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if !(lambda > 0.0) {
        out.copy_from_slice(input);
        return out;
    }
    let two_lambda = 2.0 * lambda;
    let neg_lambda = -lambda;
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = lambda;
    let mut umax = neg_lambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;

    // fill out[k0..=end] with value and advance k0
    let emit = |out: &mut [f64], k0: &mut usize, end: usize, value: f64| {
        while *k0 <= end {
            out[*k0] = value;
            *k0 += 1;
        }
    };

    loop {
        while k == n - 1 {
            if umin < 0.0 {
                emit(&mut out, &mut k0, kminus, vmin);
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                emit(&mut out, &mut k0, kplus, vmax);
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = neg_lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                emit(&mut out, &mut k0, k, vmin);
                return out;
            }
        }
        umin += input[k + 1] - vmin;
        if umin < neg_lambda {
            emit(&mut out, &mut k0, kminus, vmin);
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = input[k0];
            vmax = vmin + two_lambda;
            umin = lambda;
            umax = neg_lambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            emit(&mut out, &mut k0, kplus, vmax);
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = input[k0];
            vmin = vmax - two_lambda;
            umin = lambda;
            umax = neg_lambda;
        } else {
            k += 1;
            if umin >= lambda {
                kminus = k;
                vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
                umin = lambda;
            }
            if umax <= neg_lambda {
                kplus = k;
                vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
                umax = neg_lambda;
            }
        }
    }
}

/// `Σₜ |u[t+1] − u[t]|`
pub(crate) fn total_variation(u: &[f64]) -> f64 {
    u.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

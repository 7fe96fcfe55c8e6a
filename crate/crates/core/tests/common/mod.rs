//! Test-only reference solvers.

/// Exact minimizer of `½‖x − y‖² + λ Σ |x_{i+1} − x_i|` by dynamic programming.
///
/// The derivative of each forward message is kept as a continuous,
/// increasing, piecewise-linear function. Clipping it to [−λ, λ] gives the
/// next message; the clip points are the back-pointers.
#[allow(dead_code)]
pub fn tv_dp_oracle(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    // pieces (upper knot, slope, intercept); the last piece extends to +inf
    let mut pieces: Vec<(f64, f64, f64)> = vec![(f64::INFINITY, 1.0, -y[0])];
    let solve = |pieces: &[(f64, f64, f64)], target: f64| -> f64 {
        for &(hi, a, c) in pieces {
            if hi.is_infinite() || a * hi + c >= target {
                return (target - c) / a;
            }
        }
        unreachable!("last piece is unbounded")
    };
    let mut lo_clip = Vec::with_capacity(n - 1);
    let mut hi_clip = Vec::with_capacity(n - 1);
    for &yk in &y[1..] {
        let tm = solve(&pieces, -lambda);
        let tp = solve(&pieces, lambda);
        let mut next = vec![(tm, 0.0, -lambda)];
        for &(hi, a, c) in &pieces {
            if hi > tm && hi < tp {
                next.push((hi, a, c));
            }
        }
        // piece covering tp ends there
        let covering = pieces.iter().find(|p| p.0.is_infinite() || p.0 >= tp).copied().expect("covering piece");
        next.push((tp, covering.1, covering.2));
        next.push((f64::INFINITY, 0.0, lambda));
        for p in next.iter_mut() {
            p.1 += 1.0;
            p.2 -= yk;
        }
        pieces = next;
        lo_clip.push(tm);
        hi_clip.push(tp);
    }
    let mut x = vec![0.0; n];
    x[n - 1] = solve(&pieces, 0.0);
    for k in (0..n - 1).rev() {
        x[k] = x[k + 1].clamp(lo_clip[k], hi_clip[k]);
    }
    x
}

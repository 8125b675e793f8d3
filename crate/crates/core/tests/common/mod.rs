//! Test-only oracles that never touch the solver's Lagrange-multiplier path.

#![allow(dead_code)]

/// `<L, p> - (4/eta) sum sqrt(p_i)` evaluated directly.
pub fn ftrl_objective(sums: &[f64], eta: f64, p: &[f64]) -> f64 {
    let linear: f64 = sums.iter().zip(p).map(|(l, q)| l * q).sum();
    let reg: f64 = p.iter().map(|q| q.sqrt()).sum();
    linear - 4.0 / eta * reg
}

/// Minimizes a function over `0..=n` that is convex along the index by
/// ternary search, then scans a small neighbourhood of the survivor.
fn argmin_convex_index(n: usize, f: impl Fn(usize) -> f64) -> (usize, f64) {
    let (mut lo, mut hi) = (0usize, n);
    while hi - lo > 6 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let a = lo.saturating_sub(3);
    let b = (hi + 3).min(n);
    (a..=b).map(|i| (i, f(i))).fold(
        (a, f64::INFINITY),
        |best, cur| {
            if cur.1 < best.1 {
                cur
            } else {
                best
            }
        },
    )
}

/// Grid argmin of the FTRL objective over the simplex with spacing `1/steps`,
/// for K = 2 (exhaustive) or K = 3 (exhaustive over p1, exact 1-D convex
/// search over p2 on each p1 slice).
pub fn grid_argmin(sums: &[f64], eta: f64, steps: usize) -> (Vec<f64>, f64) {
    let h = 1.0 / steps as f64;
    match sums.len() {
        2 => {
            let mut best = (vec![0.0, 1.0], f64::INFINITY);
            for i in 0..=steps {
                let p = [i as f64 * h, (steps - i) as f64 * h];
                let v = ftrl_objective(sums, eta, &p);
                if v < best.1 {
                    best = (p.to_vec(), v);
                }
            }
            best
        }
        3 => {
            let mut best = (vec![0.0, 0.0, 1.0], f64::INFINITY);
            for i in 0..=steps {
                let rest = steps - i;
                let slice = |j: usize| {
                    let p = [i as f64 * h, j as f64 * h, (rest - j) as f64 * h];
                    ftrl_objective(sums, eta, &p)
                };
                let (j, v) = argmin_convex_index(rest, slice);
                if v < best.1 {
                    best = (vec![i as f64 * h, j as f64 * h, (rest - j) as f64 * h], v);
                }
            }
            best
        }
        k => panic!("grid oracle supports K = 2 or 3, got {k}"),
    }
}

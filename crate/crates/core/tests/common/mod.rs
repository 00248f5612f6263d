//! Slow, independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Normalized log score of `g` against forecasts `p` for outcomes `y`,
/// with `0 * log 0 = 0`.
pub fn iso_objective(p: &[f64], y: &[f64], g: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        if y[i] > 0.0 {
            total += y[i] * (g[i] / p[i]).ln();
        }
        if y[i] < 1.0 {
            total += (1.0 - y[i]) * ((1.0 - g[i]) / (1.0 - p[i])).ln();
        }
    }
    total
}

/// Distinct sorted knots with outcome sums and counts.
pub fn knots(p: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let (mut xs, mut sums, mut counts) = (Vec::new(), Vec::<f64>::new(), Vec::<f64>::new());
    for i in idx {
        if xs.last() == Some(&p[i]) {
            *sums.last_mut().unwrap() += y[i];
            *counts.last_mut().unwrap() += 1.0;
        } else {
            xs.push(p[i]);
            sums.push(y[i]);
            counts.push(1.0);
        }
    }
    (xs, sums, counts)
}

/// Isotonic regression via the min-max formula
/// `g_i = max_{s <= i} min_{t >= i} mean(s..=t)`, evaluated per observation.
pub fn iso_minmax(p: &[f64], y: &[f64]) -> Vec<f64> {
    let (xs, sums, counts) = knots(p, y);
    let m = xs.len();
    let mut vals = vec![0.0; m];
    for (i, v) in vals.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for s in 0..=i {
            let mut worst = f64::INFINITY;
            for t in i..m {
                let sum: f64 = sums[s..=t].iter().sum();
                let cnt: f64 = counts[s..=t].iter().sum();
                worst = worst.min(sum / cnt);
            }
            best = best.max(worst);
        }
        *v = best;
    }
    p.iter().map(|x| vals[xs.iter().position(|k| k == x).unwrap()]).collect()
}

/// All fractions `a / b` in [0,1] with `b <= order`, sorted and deduplicated.
pub fn farey(order: u32) -> Vec<f64> {
    let mut v: Vec<(u32, u32)> = Vec::new();
    for b in 1..=order {
        for a in 0..=b {
            v.push((a, b));
        }
    }
    v.sort_by(|x, y| (x.0 * y.1).cmp(&(y.0 * x.1)));
    v.dedup_by(|x, y| x.0 * y.1 == y.0 * x.1);
    v.into_iter().map(|(a, b)| a as f64 / b as f64).collect()
}

/// Maximum of the isotonic objective over all nondecreasing knot values drawn
/// from `grid`. Exhaustive, organised as a dynamic program over knots.
pub fn iso_grid_max(p: &[f64], y: &[f64], grid: &[f64]) -> f64 {
    let (xs, sums, counts) = knots(p, y);
    let term = |k: usize, v: f64| {
        let (s, f) = (sums[k], counts[k] - sums[k]);
        let mut t = 0.0;
        if s > 0.0 {
            t += s * (v / xs[k]).ln();
        }
        if f > 0.0 {
            t += f * ((1.0 - v) / (1.0 - xs[k])).ln();
        }
        t
    };
    // best[j]: best objective of knots so far with last value grid[j]
    let mut best: Vec<f64> = grid.iter().map(|&v| term(0, v)).collect();
    for k in 1..xs.len() {
        let mut running = f64::NEG_INFINITY;
        for (j, &v) in grid.iter().enumerate() {
            running = running.max(best[j]);
            best[j] = running + term(k, v);
        }
    }
    best.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Out-of-sample prediction `g1 / (g1 + 1 - g0)` built on [`iso_minmax`].
pub fn oos_naive(prefix_p: &[f64], prefix_y: &[f64], p_new: f64) -> f64 {
    if prefix_p.is_empty() {
        return 0.5;
    }
    let mut p = prefix_p.to_vec();
    p.push(p_new);
    let fit_with = |y_new: f64| {
        let mut y = prefix_y.to_vec();
        y.push(y_new);
        *iso_minmax(&p, &y).last().unwrap()
    };
    let (g1, g0) = (fit_with(1.0), fit_with(0.0));
    g1 / (g1 + 1.0 - g0)
}

/// Sequential e-value in the given order, from scratch at every step.
pub fn sequential_naive(p: &[f64], y: &[f64]) -> f64 {
    let mut e = 1.0;
    for i in 0..p.len() {
        let q = oos_naive(&p[..i], &y[..i], p[i]);
        e *= if y[i] == 1.0 { q / p[i] } else { (1.0 - q) / (1.0 - p[i]) };
    }
    e
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !prefix.contains(&i) {
                prefix.push(i);
                extend(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), n, &mut out);
    out
}

/// Gamma function at half-integers and integers by exact recursion.
pub fn gamma_half(k: u32) -> f64 {
    // Gamma(k/2)
    let (mut g, mut z) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while z < k as f64 / 2.0 {
        g *= z;
        z += 1.0;
    }
    g
}

/// Chi-square survival function by Gauss-Legendre quadrature of
/// `2 c t^(k-1) exp(-t^2/2)` over `t >= sqrt(x)`, `c = 1 / (2^(k/2) Gamma(k/2))`.
pub fn chisq_sf_quadrature(x: f64, k: u32) -> f64 {
    const NODES: [f64; 5] = [0.0, -0.5384693101056831, 0.5384693101056831, -0.906179845938664, 0.906179845938664];
    const WEIGHTS: [f64; 5] = [
        0.5688888888888889,
        0.47862867049936647,
        0.47862867049936647,
        0.23692688505618908,
        0.23692688505618908,
    ];
    let kf = k as f64;
    let log_c = -(kf / 2.0) * 2f64.ln() - gamma_half(k).ln();
    let f = |t: f64| {
        if t == 0.0 {
            return if k == 1 { 2.0 * log_c.exp() } else { 0.0 };
        }
        2.0 * (log_c + (kf - 1.0) * t.ln() - t * t / 2.0).exp()
    };
    let a = x.sqrt();
    let b = a.max((kf - 1.0).max(0.0).sqrt()) + 40.0;
    let panels = ((b - a) / 0.02).ceil() as usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let mid = a + (i as f64 + 0.5) * h;
        let mut s = 0.0;
        for (n, w) in NODES.iter().zip(WEIGHTS) {
            s += w * f(mid + n * h / 2.0);
        }
        total += s * h / 2.0;
    }
    total
}

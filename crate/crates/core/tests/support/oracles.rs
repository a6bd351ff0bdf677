//! Slow, direct reference implementations used as test oracles. Nothing
//! here calls into the library; formulas are written out the long way.

#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Rank of each value: one plus the number of smaller values, plus half
/// of the other values equal to it.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// `(F, eta²)` from explicit groups.
pub fn anova(groups: &[Vec<f64>]) -> (f64, f64) {
    let all: Vec<f64> = groups.concat();
    let grand = mean(&all);
    let n = all.len() as f64;
    let k = groups.len() as f64;
    let ssb: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ssw: f64 = groups.iter().map(|g| g.iter().map(|v| (v - mean(g)).powi(2)).sum::<f64>()).sum();
    let sst: f64 = all.iter().map(|v| (v - grand).powi(2)).sum();
    ((ssb / (k - 1.0)) / (ssw / (n - k)), ssb / sst)
}

pub fn kruskal(groups: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = groups.concat();
    let r = ranks(&all);
    let n = all.len() as f64;
    let mut h = 0.0;
    let mut at = 0;
    for g in groups {
        let rbar = mean(&r[at..at + g.len()]);
        h += g.len() as f64 * (rbar - (n + 1.0) / 2.0).powi(2);
        at += g.len();
    }
    h *= 12.0 / (n * (n + 1.0));
    let mut ties: HashMap<u64, f64> = HashMap::new();
    for v in &all {
        *ties.entry(v.to_bits()).or_default() += 1.0;
    }
    let correction = 1.0 - ties.values().map(|t| t * t * t - t).sum::<f64>() / (n * n * n - n);
    if correction == 0.0 {
        0.0
    } else {
        h / correction
    }
}

/// `(chi², dof, Cramér's V)` after dropping all-zero rows and columns.
pub fn chi2(table: &[Vec<u64>]) -> (f64, f64, f64) {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    let width = table[0].len();
    let cols: Vec<usize> = (0..width).filter(|&j| table.iter().map(|r| r[j]).sum::<u64>() > 0).collect();
    let n: f64 = rows.iter().map(|r| r.iter().sum::<u64>() as f64).sum();
    let mut stat = 0.0;
    for r in &rows {
        let rs = r.iter().sum::<u64>() as f64;
        for &j in &cols {
            let cs: f64 = rows.iter().map(|rr| rr[j] as f64).sum();
            let e = rs * cs / n;
            stat += (r[j] as f64 - e).powi(2) / e;
        }
    }
    let (r, c) = (rows.len() as f64, cols.len() as f64);
    (stat, (r - 1.0) * (c - 1.0), (stat / (n * (r - 1.0).min(c - 1.0))).sqrt())
}

pub fn mutual_info_codes(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for i in 0..a.len() {
        *joint.entry((a[i], b[i])).or_default() += 1.0 / n;
        *pa.entry(a[i]).or_default() += 1.0 / n;
        *pb.entry(b[i]).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum()
}

/// Tanh-sinh quadrature on `[a, b]`. The integrand receives the abscissa
/// together with its exact distances to `a` and to `b`, so factors like
/// `(1 − t)` stay accurate next to the endpoint.
pub fn tanh_sinh(a: f64, b: f64, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let h = 1.0 / 256.0;
    let half = (b - a) / 2.0;
    let mut sum = 0.0;
    let mut k = 0i64;
    loop {
        let t = k as f64 * h;
        let u = PI / 2.0 * t.sinh();
        let weight = PI / 2.0 * t.cosh() / u.cosh().powi(2);
        // distance of the right-hand node from b (and left-hand node from a)
        let delta = (b - a) / (1.0 + (2.0 * u).exp());
        if delta == 0.0 || weight == 0.0 {
            break;
        }
        let mut add = |x: f64, da: f64, db: f64| {
            let v = f(x, da, db);
            if v.is_finite() {
                sum += half * weight * v;
            }
        };
        if k == 0 {
            add(a + half, half, half);
        } else {
            add(b - delta, b - a - delta, delta);
            add(a + delta, delta, b - a - delta);
        }
        k += 1;
    }
    sum * h
}

/// Exp-sinh quadrature on `[c, ∞)`; the integrand gets the offset `x − c`
/// as a second argument.
pub fn exp_sinh(c: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 256.0;
    let mut sum = 0.0;
    for k in -(8 * 256)..=(8 * 256) {
        let t = k as f64 * h;
        let e = (PI / 2.0 * t.sinh()).exp();
        if e == 0.0 || !e.is_finite() {
            continue;
        }
        let v = f(c + e, e) * PI / 2.0 * t.cosh() * e;
        if v.is_finite() {
            sum += v;
        }
    }
    sum * h
}

/// Regularised incomplete beta `I_x(a, b)` as a ratio of two integrals.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // t^(a-1) (1-t)^(b-1), with 1-t supplied exactly where it matters
    let lower = tanh_sinh(0.0, x, |_, da, db| {
        let t = da;
        let one_minus = 1.0 - x + db;
        ((a - 1.0) * t.ln() + (b - 1.0) * one_minus.ln()).exp()
    });
    let upper = tanh_sinh(x, 1.0, |_, da, db| {
        let t = x + da;
        ((a - 1.0) * t.ln() + (b - 1.0) * db.ln()).exp()
    });
    lower / (lower + upper)
}

/// Regularised lower incomplete gamma `P(a, x)`.
pub fn incomplete_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // divide by the integrand's peak value to keep everything finite
    let mode = (a - 1.0).max(0.0);
    let log_peak = if mode > 0.0 { (a - 1.0) * mode.ln() - mode } else { 0.0 };
    let g = |t: f64| ((a - 1.0) * t.ln() - t - log_peak).exp();
    let lower = tanh_sinh(0.0, x, |_, da, _| g(da));
    let upper = exp_sinh(x, |t, _| g(t));
    lower / (lower + upper)
}

/// Upper tail of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Upper tail of the chi-squared distribution.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    1.0 - incomplete_gamma_p(dof / 2.0, x / 2.0)
}

/// Exact Shapley values of `value` over `m` players by subset enumeration.
pub fn exact_shapley(m: usize, value: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let mut phi = vec![0.0; m];
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut v = |bits: u64| {
        *cache.entry(bits).or_insert_with(|| {
            let mask: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
            value(&mask)
        })
    };
    for (j, p) in phi.iter_mut().enumerate() {
        for bits in 0u64..(1 << m) {
            if bits >> j & 1 == 1 {
                continue;
            }
            let s = bits.count_ones() as usize;
            let w = fact(s) * fact(m - s - 1) / fact(m);
            *p += w * (v(bits | 1 << j) - v(bits));
        }
    }
    phi
}

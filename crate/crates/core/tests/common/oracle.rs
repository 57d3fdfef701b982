//! Straightforward quadratic reference implementations used as test oracles.
//! Nothing here shares code with the library.

#![allow(dead_code)]

/// Average ranks by counting: 1 + (number smaller) + (ties - 1) / 2.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Tau-b from explicit enumeration of all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tie_x += 1,
                (false, true) => tie_y += 1,
                (false, false) if (dx > 0.0) == (dy > 0.0) => concordant += 1,
                (false, false) => discordant += 1,
            }
        }
    }
    let a = (concordant + discordant + tie_x) as f64;
    let b = (concordant + discordant + tie_y) as f64;
    if a == 0.0 || b == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (a * b).sqrt())
}

pub fn rmse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    (x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

/// Interval Krippendorff's alpha from its defining pairwise sums.
/// `columns[u]` holds the ratings given to item u. Returns `None` when
/// fewer than two pairable values exist.
pub fn krippendorff_interval(columns: &[Vec<f64>]) -> Option<f64> {
    let pairable: Vec<&Vec<f64>> = columns.iter().filter(|c| c.len() >= 2).collect();
    let values: Vec<f64> = pairable.iter().flat_map(|c| c.iter().copied()).collect();
    let n = values.len() as f64;
    if values.len() < 2 {
        return None;
    }
    let mut d_o = 0.0;
    for c in &pairable {
        let m = c.len() as f64;
        let mut s = 0.0;
        for (i, a) in c.iter().enumerate() {
            for (j, b) in c.iter().enumerate() {
                if i != j {
                    s += (a - b) * (a - b);
                }
            }
        }
        d_o += s / (m - 1.0);
    }
    d_o /= n;
    let mut d_e = 0.0;
    for (i, a) in values.iter().enumerate() {
        for (j, b) in values.iter().enumerate() {
            if i != j {
                d_e += (a - b) * (a - b);
            }
        }
    }
    d_e /= n * (n - 1.0);
    if d_o == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - d_o / d_e)
}

//! Correlation and error metrics, the two training objectives, and the
//! level-probability score used to turn five quality-level logits into a
//! scalar.
//!
//! Tie conventions: Spearman uses average ranks, Kendall is tau-b.
//! Correlations over a constant vector are reported as
//! [`MetricsError::UndefinedCorrelation`] instead of NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {min} values, got {len}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("correlation undefined: at least one input is constant")]
    UndefinedCorrelation,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid token distribution: {0}")]
    InvalidDistribution(String),
    #[error("zero probability at target index {target} of batch item {item}")]
    ZeroProbability { item: usize, target: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(MetricsError::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < min {
        return Err(MetricsError::TooShort { len: x.len(), min });
    }
    check_finite(x)?;
    check_finite(y)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// 1-based ranks, tied values share the average of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    let prod = sxx * syy;
    let denom = if prod.is_finite() && prod > 0.0 {
        prod.sqrt()
    } else {
        sxx.sqrt() * syy.sqrt()
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson_unchecked(x, y)
}

/// Spearman rank-order correlation: Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson_unchecked(&average_ranks(x), &average_ranks(y))
}

/// Kendall rank-order correlation, tau-b.
///
/// Knight's O(n log n) algorithm: sort by (x, y), count pairs tied in x and
/// jointly tied, then count discordant pairs as the swaps made by a merge
/// sort on y.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n * (n - 1) / 2) as u64;

    // pairs tied on x (n1), tied on both (n3)
    let mut n1 = 0u64;
    let mut n3 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let t = (j - i) as u64;
        n1 += t * (t - 1) / 2;
        let mut a = i;
        while a < j {
            let mut b = a + 1;
            while b < j && y[idx[b]] == y[idx[a]] {
                b += 1;
            }
            let u = (b - a) as u64;
            n3 += u * (u - 1) / 2;
            a = b;
        }
        i = j;
    }

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    // pairs tied on y, counted on the now sorted ys
    let mut n2 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        n2 += t * (t - 1) / 2;
        i = j;
    }

    let denom_x = n0 - n1;
    let denom_y = n0 - n2;
    if denom_x == 0 || denom_y == 0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = match denom_x.checked_mul(denom_y) {
        Some(prod) => (prod as f64).sqrt(),
        None => (denom_x as f64).sqrt() * (denom_y as f64).sqrt(),
    };
    let tau = num / denom;
    Ok(tau.clamp(-1.0, 1.0))
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Root mean squared error.
pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 1)?;
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

/// Fine-tuning objective: `(1 - plcc(pred, mos)) / 2`.
pub fn plcc_loss(pred: &[f64], mos: &[f64]) -> Result<f64> {
    Ok((1.0 - plcc(pred, mos)?) / 2.0)
}

/// Predicted probabilities over a vocabulary plus the position of the
/// ground-truth token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    probabilities: Vec<f64>,
    target_index: usize,
}

impl TokenDistribution {
    pub fn new(probabilities: Vec<f64>, target_index: usize) -> Result<Self> {
        if target_index >= probabilities.len() {
            return Err(MetricsError::InvalidDistribution(format!(
                "target index {target_index} outside vocabulary of {}",
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(MetricsError::InvalidDistribution(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricsError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self {
            probabilities,
            target_index,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn target_probability(&self) -> f64 {
        self.probabilities[self.target_index]
    }
}

/// What to do when a target token has zero predicted probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroProbability {
    #[default]
    Error,
    Infinite,
}

/// Mean negative log-likelihood of the target tokens (one-hot labels).
pub fn cross_entropy(batch: &[TokenDistribution], on_zero: ZeroProbability) -> Result<f64> {
    if batch.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut total = 0.0;
    for (item, dist) in batch.iter().enumerate() {
        let p = dist.target_probability();
        if p == 0.0 {
            match on_zero {
                ZeroProbability::Error => {
                    return Err(MetricsError::ZeroProbability {
                        item,
                        target: dist.target_index,
                    });
                }
                ZeroProbability::Infinite => return Ok(f64::INFINITY),
            }
        }
        total -= p.ln();
    }
    Ok(total / batch.len() as f64)
}

/// The five text-defined quality levels, best first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLevel {
    Excellent,
    Good,
    Fair,
    Poor,
    Bad,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 5] = [
        QualityLevel::Excellent,
        QualityLevel::Good,
        QualityLevel::Fair,
        QualityLevel::Poor,
        QualityLevel::Bad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLevel::Excellent => "excellent",
            QualityLevel::Good => "good",
            QualityLevel::Fair => "fair",
            QualityLevel::Poor => "poor",
            QualityLevel::Bad => "bad",
        }
    }

    /// 1 for excellent through 5 for bad.
    pub fn index(self) -> usize {
        self as usize + 1
    }
}

/// Weighting applied to the level indices when collapsing the softmax.
///
/// `LevelIndexed` weights level `i` (1 = excellent .. 5 = bad) by `i`, so a
/// lower score is better. `QualityAscending` weights it by `6 - i`, so
/// excellent maps to 5 and higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LevelIndexed,
    #[default]
    QualityAscending,
}

impl Orientation {
    pub fn weight(self, level: QualityLevel) -> f64 {
        match self {
            Orientation::LevelIndexed => level.index() as f64,
            Orientation::QualityAscending => (6 - level.index()) as f64,
        }
    }

    /// Whether a larger score means better quality.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Orientation::QualityAscending)
    }
}

/// Unnormalised log-probabilities of the five level tokens, in
/// [`QualityLevel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelLogits {
    logits: [f64; 5],
    #[serde(default)]
    orientation: Orientation,
}

impl LevelLogits {
    pub fn new(logits: [f64; 5]) -> Result<Self> {
        Self::with_orientation(logits, Orientation::default())
    }

    pub fn with_orientation(logits: [f64; 5], orientation: Orientation) -> Result<Self> {
        check_finite(&logits)?;
        Ok(Self {
            logits,
            orientation,
        })
    }

    pub fn logits(&self) -> [f64; 5] {
        self.logits
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn oriented(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn get(&self, level: QualityLevel) -> f64 {
        self.logits[level as usize]
    }

    pub fn probabilities(&self) -> [f64; 5] {
        let exps = self.shifted_exps();
        let z: f64 = exps.iter().sum();
        exps.map(|e| e / z)
    }

    fn shifted_exps(&self) -> [f64; 5] {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.logits.map(|l| (l - max).exp())
    }

    /// Softmax-weighted level index, in [1, 5].
    pub fn score(&self) -> f64 {
        let exps = self.shifted_exps();
        let z: f64 = exps.iter().sum();
        let weighted: f64 = QualityLevel::ALL
            .iter()
            .zip(exps)
            .map(|(&level, e)| self.orientation.weight(level) * e)
            .sum();
        (weighted / z).clamp(1.0, 5.0)
    }
}

pub fn level_probability_score(logits: &LevelLogits) -> f64 {
    logits.score()
}

//! Turning raw per-subject ratings into 0-100 mean opinion scores, plus the
//! reliability and dispersion statistics reported for the study.
//!
//! Raw ratings are on a 1-5 scale with one decimal. Normalisation is
//! per subject and per dimension: `z = (r - mean) / sd` with the sample
//! standard deviation, mapped linearly by `100 * (z + 3) / 6` and clipped to
//! [0, 100]. Subjects whose ratings in a dimension have zero variance (or who
//! rated fewer than two items) are dropped from that dimension.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dimension::{Dimension, PerDimension};
use crate::metrics::{self, MetricsError};

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;
pub const MOS_MIN: f64 = 0.0;
pub const MOS_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubjectiveError {
    #[error("{subject_id}/{item_id}: {dimension} score {value} is not on the 0.1 grid within [1, 5]")]
    InvalidScore {
        subject_id: String,
        item_id: String,
        dimension: Dimension,
        value: f64,
    },
    #[error("item `{item_id}` has no ratings for {dimension}")]
    MissingData { item_id: String, dimension: Dimension },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Metric(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, SubjectiveError>;

/// Whether `value` lies in [1, 5] on the 0.1 grid.
pub fn is_valid_score(value: f64) -> bool {
    if !value.is_finite() || !(SCORE_MIN..=SCORE_MAX).contains(&value) {
        return false;
    }
    let tenths = value * 10.0;
    (tenths - tenths.round()).abs() < 1e-6
}

/// One subject's rating of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub subject_id: String,
    pub item_id: String,
    pub audio_quality: f64,
    pub consistency: f64,
    pub overall: f64,
    pub timestamp: DateTime<Utc>,
}

impl RatingRecord {
    pub fn score(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::AudioQuality => self.audio_quality,
            Dimension::Consistency => self.consistency,
            Dimension::Overall => self.overall,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for dim in Dimension::ALL {
            let value = self.score(dim);
            if !is_valid_score(value) {
                return Err(SubjectiveError::InvalidScore {
                    subject_id: self.subject_id.clone(),
                    item_id: self.item_id.clone(),
                    dimension: dim,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Keeps one record per (subject, item): the one with the latest timestamp,
/// and among equal timestamps the one that appears last. Output is sorted by
/// (subject_id, item_id).
pub fn dedup_latest(records: impl IntoIterator<Item = RatingRecord>) -> Vec<RatingRecord> {
    let mut latest: BTreeMap<(String, String), RatingRecord> = BTreeMap::new();
    for r in records {
        let key = (r.subject_id.clone(), r.item_id.clone());
        match latest.get(&key) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    latest.into_values().collect()
}

/// A subjects x items grid for one dimension, with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingGrid {
    n_subjects: usize,
    n_items: usize,
    values: Vec<Option<f64>>,
}

impl RatingGrid {
    pub fn new(n_subjects: usize, n_items: usize) -> Self {
        Self {
            n_subjects,
            n_items,
            values: vec![None; n_subjects * n_items],
        }
    }

    /// Builds a grid from one row per subject.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n_items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_items) {
            return Err(SubjectiveError::InvalidInput("ragged rating rows".into()));
        }
        let n_subjects = rows.len();
        Ok(Self {
            n_subjects,
            n_items,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, subject: usize, item: usize) -> Option<f64> {
        self.values[subject * self.n_items + item]
    }

    pub fn set(&mut self, subject: usize, item: usize, value: Option<f64>) {
        self.values[subject * self.n_items + item] = value;
    }

    /// Present values of one item, in subject order.
    pub fn item_values(&self, item: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_subjects).filter_map(move |s| self.get(s, item))
    }

    pub fn subject_values(&self, subject: usize) -> impl Iterator<Item = f64> + '_ {
        self.values[subject * self.n_items..(subject + 1) * self.n_items]
            .iter()
            .filter_map(|v| *v)
    }
}

/// Ratings of all three dimensions over shared subject and item labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    subjects: Vec<String>,
    items: Vec<String>,
    grids: PerDimension<RatingGrid>,
}

impl RatingMatrix {
    pub fn new(subjects: Vec<String>, items: Vec<String>, grids: PerDimension<RatingGrid>) -> Result<Self> {
        for dim in Dimension::ALL {
            let g = grids.get(dim);
            if g.n_subjects != subjects.len() || g.n_items != items.len() {
                return Err(SubjectiveError::InvalidInput(format!(
                    "{dim} grid is {}x{}, labels are {}x{}",
                    g.n_subjects,
                    g.n_items,
                    subjects.len(),
                    items.len()
                )));
            }
        }
        Ok(Self {
            subjects,
            items,
            grids,
        })
    }

    /// Validates, deduplicates (latest wins) and lays out raw ratings.
    /// Subjects and items are sorted lexicographically.
    pub fn from_records(records: &[RatingRecord]) -> Result<Self> {
        for r in records {
            r.validate()?;
        }
        let records = dedup_latest(records.iter().cloned());
        let subjects: Vec<String> = records
            .iter()
            .map(|r| r.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<String> = records
            .iter()
            .map(|r| r.item_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let s_idx: HashMap<&str, usize> = subjects.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let i_idx: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut grids = PerDimension::from_fn(|_| RatingGrid::new(subjects.len(), items.len()));
        for r in &records {
            let (s, i) = (s_idx[r.subject_id.as_str()], i_idx[r.item_id.as_str()]);
            for dim in Dimension::ALL {
                grids.get_mut(dim).set(s, i, Some(r.score(dim)));
            }
        }
        Self::new(subjects, items, grids)
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn grid(&self, dim: Dimension) -> &RatingGrid {
        self.grids.get(dim)
    }
}

/// A subject dropped from one dimension during normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSubject {
    pub subject_id: String,
    pub dimension: Dimension,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub matrix: RatingMatrix,
    pub excluded: Vec<ExcludedSubject>,
}

/// Linear map of a z-score onto [0, 100], clipped at +-3 sd.
pub fn z_to_scale(z: f64) -> f64 {
    (100.0 * (z + 3.0) / 6.0).clamp(MOS_MIN, MOS_MAX)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn zscore_normalize(matrix: &RatingMatrix) -> Normalized {
    let mut excluded = Vec::new();
    let grids = PerDimension::from_fn(|dim| {
        let raw = matrix.grid(dim);
        let mut out = RatingGrid::new(raw.n_subjects, raw.n_items);
        for s in 0..raw.n_subjects {
            let values: Vec<f64> = raw.subject_values(s).collect();
            let reason = if values.len() < 2 {
                Some(format!("only {} rating(s)", values.len()))
            } else if values.iter().all(|v| *v == values[0]) {
                Some("zero variance".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                excluded.push(ExcludedSubject {
                    subject_id: matrix.subjects[s].clone(),
                    dimension: dim,
                    reason,
                });
                continue;
            }
            let (mean, sd) = mean_and_sd(&values);
            for i in 0..raw.n_items {
                out.set(s, i, raw.get(s, i).map(|r| z_to_scale((r - mean) / sd)));
            }
        }
        out
    });
    Normalized {
        matrix: RatingMatrix {
            subjects: matrix.subjects.clone(),
            items: matrix.items.clone(),
            grids,
        },
        excluded,
    }
}

/// Aggregated 0-100 opinion scores for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub item_id: String,
    pub mos_audio_quality: f64,
    pub mos_consistency: f64,
    pub mos_overall: f64,
    pub rater_count: usize,
    pub std_overall: f64,
}

impl MosRecord {
    pub fn mos(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::AudioQuality => self.mos_audio_quality,
            Dimension::Consistency => self.mos_consistency,
            Dimension::Overall => self.mos_overall,
        }
    }

    pub fn triple(&self) -> PerDimension<f64> {
        PerDimension::from_fn(|d| self.mos(d))
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        0.0
    } else {
        mean_and_sd(values).1
    }
}

/// Per-item mean of the normalised ratings, one record per item in matrix
/// order. `rater_count` counts subjects with an overall rating.
pub fn compute_mos(normalized: &RatingMatrix) -> Result<Vec<MosRecord>> {
    let mut out = Vec::with_capacity(normalized.items.len());
    for (i, item_id) in normalized.items.iter().enumerate() {
        let means = PerDimension::try_from_fn(|dim| {
            let values: Vec<f64> = normalized.grid(dim).item_values(i).collect();
            if values.is_empty() {
                return Err(SubjectiveError::MissingData {
                    item_id: item_id.clone(),
                    dimension: dim,
                });
            }
            Ok(values.iter().sum::<f64>() / values.len() as f64)
        })?;
        let overall: Vec<f64> = normalized.grid(Dimension::Overall).item_values(i).collect();
        out.push(MosRecord {
            item_id: item_id.clone(),
            mos_audio_quality: means.audio_quality,
            mos_consistency: means.consistency,
            mos_overall: means.overall,
            rater_count: overall.len(),
            std_overall: sample_sd(&overall),
        });
    }
    Ok(out)
}

/// Interval-metric Krippendorff's alpha over a grid with missing cells.
///
/// Only items with at least two ratings are pairable. Observed disagreement
/// sums squared differences within items, each item weighted by
/// `1 / (m - 1)`; expected disagreement pools every pairable value.
pub fn krippendorff_alpha(grid: &RatingGrid) -> Result<f64> {
    if grid.n_subjects < 2 {
        return Err(SubjectiveError::InvalidInput(
            "krippendorff's alpha needs at least 2 subjects".into(),
        ));
    }
    let mut pooled = Vec::new();
    let mut observed = 0.0;
    for i in 0..grid.n_items {
        let values: Vec<f64> = grid.item_values(i).collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        let mut pair_sq = 0.0;
        for a in 0..m {
            for b in a + 1..m {
                let d = values[a] - values[b];
                pair_sq += d * d;
            }
        }
        observed += 2.0 * pair_sq / (m - 1) as f64;
        pooled.extend(values);
    }
    if pooled.is_empty() {
        return Err(SubjectiveError::InvalidInput(
            "no item has at least 2 ratings".into(),
        ));
    }
    if observed == 0.0 {
        return Ok(1.0);
    }
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let ss: f64 = pooled.iter().map(|v| (v - mean) * (v - mean)).sum();
    // sum over ordered pairs of (v - v')^2 equals 2 n ss
    let expected = 2.0 * n * ss / (n * (n - 1.0));
    let observed = observed / n;
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - observed / expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHalf {
    pub mean: f64,
    pub per_rep: Vec<f64>,
}

/// Repeatedly splits subjects into halves of sizes floor(n/2) and ceil(n/2),
/// and correlates the per-item group means.
///
/// Items that lack a rating in either half of a repetition are skipped for
/// that repetition.
pub fn split_half_srcc(grid: &RatingGrid, repetitions: usize, seed: u64) -> Result<SplitHalf> {
    if grid.n_subjects < 2 {
        return Err(SubjectiveError::InvalidInput(
            "split-half needs at least 2 subjects".into(),
        ));
    }
    if repetitions == 0 {
        return Err(SubjectiveError::InvalidInput("repetitions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..grid.n_subjects).collect();
    let half = grid.n_subjects / 2;
    let mut per_rep = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        order.shuffle(&mut rng);
        let (first, second) = order.split_at(half);
        let mut a = Vec::with_capacity(grid.n_items);
        let mut b = Vec::with_capacity(grid.n_items);
        for i in 0..grid.n_items {
            if let (Some(ma), Some(mb)) = (group_mean(grid, first, i), group_mean(grid, second, i)) {
                a.push(ma);
                b.push(mb);
            }
        }
        per_rep.push(metrics::srcc(&a, &b)?);
    }
    let mean = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
    Ok(SplitHalf { mean, per_rep })
}

fn group_mean(grid: &RatingGrid, subjects: &[usize], item: usize) -> Option<f64> {
    let (sum, count) = subjects
        .iter()
        .filter_map(|&s| grid.get(s, item))
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Mean over each category's items of the per-item standard deviation of
/// the normalised overall scores.
pub fn per_category_std(
    mos: &[MosRecord],
    categories: &HashMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for rec in mos {
        let category = categories.get(&rec.item_id).ok_or_else(|| {
            SubjectiveError::InvalidInput(format!("item `{}` has no category", rec.item_id))
        })?;
        let e = acc.entry(category.clone()).or_default();
        e.0 += rec.std_overall;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(c, (sum, n))| (c, sum / n as f64))
        .collect())
}

/// Pairwise SRCC among the three MOS dimensions, indexed in
/// [`Dimension::ALL`] order.
pub fn inter_dimension_srcc(mos: &[MosRecord]) -> Result<[[f64; 3]; 3]> {
    if mos.len() < 2 {
        return Err(SubjectiveError::InvalidInput(
            "need at least 2 items".into(),
        ));
    }
    let cols: Vec<Vec<f64>> = Dimension::ALL
        .iter()
        .map(|&d| mos.iter().map(|m| m.mos(d)).collect())
        .collect();
    let mut out = [[1.0; 3]; 3];
    for a in 0..3 {
        for b in a + 1..3 {
            let r = metrics::srcc(&cols[a], &cols[b])?;
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    Ok(out)
}

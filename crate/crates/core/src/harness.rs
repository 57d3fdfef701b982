//! Evaluation of scoring backends.
//!
//! Two regimes are supported. Multi-dimensional score prediction is
//! reported per fold of a source-video-grouped k-fold split. Optimal
//! selection over groups of candidates that share one video is asked either
//! as a multi-input question (the backend names the best audio) or through
//! single-input scoring (the highest-scoring candidate wins).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AgavItem, ManifestError, PairGroup, ScoreTriple};
use crate::dimension::{Dimension, PerDimension};
use crate::metrics::{self, MetricsError, Orientation};
use crate::scorer::{BackendError, Capability, ScoringBackend};
use crate::seed::rng_for;

/// Share of failed queries above which a run is marked invalid.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("item `{0}` has no ground-truth MOS")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{scope}, {dimension}: {source}")]
    Metric {
        scope: String,
        dimension: Dimension,
        #[source]
        source: MetricsError,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Where single-item scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    /// Triple scores when the backend has them, otherwise level logits.
    #[default]
    Auto,
    Triple,
    Levels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; 0 or 1 runs on the calling thread.
    pub workers: usize,
    pub source: ScoreSource,
    /// Orientation applied to level logits.
    pub orientation: Orientation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            source: ScoreSource::Auto,
            orientation: Orientation::QualityAscending,
        }
    }
}

/// Maps `f` over `inputs`, in parallel when asked; output order matches
/// input order either way.
fn run_ordered<T: Sync, R: Send>(workers: usize, inputs: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if workers <= 1 {
        return inputs.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| inputs.par_iter().map(&f).collect()),
        Err(_) => inputs.iter().map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub source_videos: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Splits items into `k` folds at source-video granularity.
///
/// Distinct source videos are sorted, shuffled with the seed and dealt into
/// contiguous chunks whose sizes differ by at most one video. Items keep
/// manifest order within a fold.
pub fn kfold_split(items: &[AgavItem], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(HarnessError::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    let mut videos: Vec<&str> = items
        .iter()
        .map(|i| i.source_video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if videos.len() < k {
        return Err(HarnessError::InvalidInput(format!(
            "{} source videos cannot fill {k} folds",
            videos.len()
        )));
    }
    videos.shuffle(&mut rng_for(seed, &["kfold"]));
    let (base, extra) = (videos.len() / k, videos.len() % k);
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for index in 0..k {
        let size = base + usize::from(index < extra);
        let chunk = &videos[start..start + size];
        start += size;
        for v in chunk {
            fold_of.insert(v, index);
        }
        folds.push(Fold {
            index,
            source_videos: chunk.iter().map(|v| v.to_string()).collect(),
            item_ids: Vec::new(),
        });
    }
    for item in items {
        folds[fold_of[item.source_video_id.as_str()]]
            .item_ids
            .push(item.id.clone());
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub srcc: f64,
    pub krcc: f64,
    pub plcc: f64,
    pub rmse: f64,
}

impl DimensionMetrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> std::result::Result<Self, MetricsError> {
        Ok(Self {
            srcc: metrics::srcc(pred, truth)?,
            krcc: metrics::krcc(pred, truth)?,
            plcc: metrics::plcc(pred, truth)?,
            rmse: metrics::rmse(pred, truth)?,
        })
    }

    fn mean(all: &[DimensionMetrics]) -> Self {
        let n = all.len() as f64;
        let sum = |f: fn(&DimensionMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Self {
            srcc: sum(|m| m.srcc),
            krcc: sum(|m| m.krcc),
            plcc: sum(|m| m.plcc),
            rmse: sum(|m| m.rmse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_items: usize,
    pub metrics: PerDimension<DimensionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub backend: String,
    pub seed: u64,
    pub k: usize,
    pub score_source: ScoreSource,
    pub n_items: usize,
    pub n_excluded: usize,
    pub valid: bool,
    pub excluded: Vec<ExcludedItem>,
    pub folds: Vec<FoldMetrics>,
    /// Mean of the per-fold metrics.
    pub mean: PerDimension<DimensionMetrics>,
    /// Metrics over all predictions at once.
    pub pooled: PerDimension<DimensionMetrics>,
}

fn resolve_source(backend: &dyn ScoringBackend, requested: ScoreSource) -> Result<ScoreSource> {
    let caps = backend.capabilities();
    let resolved = match requested {
        ScoreSource::Auto if caps.supports(Capability::TripleScores) => ScoreSource::Triple,
        ScoreSource::Auto => ScoreSource::Levels,
        other => other,
    };
    let needed = match resolved {
        ScoreSource::Levels => Capability::LevelLogits,
        _ => Capability::TripleScores,
    };
    backend.require(needed)?;
    Ok(resolved)
}

fn predict(
    backend: &dyn ScoringBackend,
    item: &AgavItem,
    source: ScoreSource,
    orientation: Orientation,
) -> std::result::Result<ScoreTriple, BackendError> {
    match source {
        ScoreSource::Levels => PerDimension::try_from_fn(|d| {
            Ok(backend.level_logits(item, d)?.oriented(orientation).score())
        }),
        _ => backend.score(item),
    }
}

fn dimension_metrics(pred: &[ScoreTriple], truth: &[ScoreTriple], scope: &str) -> Result<PerDimension<DimensionMetrics>> {
    PerDimension::try_from_fn(|d| {
        let p: Vec<f64> = pred.iter().map(|t| *t.get(d)).collect();
        let t: Vec<f64> = truth.iter().map(|t| *t.get(d)).collect();
        DimensionMetrics::compute(&p, &t).map_err(|source| HarnessError::Metric {
            scope: scope.to_string(),
            dimension: d,
            source,
        })
    })
}

/// Scores every item once, then reports SRCC / KRCC / PLCC / RMSE per
/// dimension for each fold's items, their mean, and pooled over all items.
///
/// Items the backend fails on are excluded and listed; a run with more than
/// [`MAX_EXCLUDED_FRACTION`] exclusions is marked invalid.
pub fn evaluate_scoring(
    backend: &dyn ScoringBackend,
    items: &[AgavItem],
    k: usize,
    seed: u64,
    options: &EvalOptions,
) -> Result<MetricReport> {
    let truth: HashMap<&str, ScoreTriple> = items
        .iter()
        .map(|i| {
            i.ground_truth_triple()
                .map(|t| (i.id.as_str(), t))
                .ok_or_else(|| HarnessError::MissingGroundTruth(i.id.clone()))
        })
        .collect::<Result<_>>()?;
    let source = resolve_source(backend, options.source)?;
    let folds = kfold_split(items, k, seed)?;

    let outcomes = run_ordered(options.workers, items, |item| {
        predict(backend, item, source, options.orientation)
    });
    let mut predictions: HashMap<&str, ScoreTriple> = HashMap::new();
    let mut excluded = Vec::new();
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(t) => {
                predictions.insert(item.id.as_str(), t);
            }
            Err(e) => excluded.push(ExcludedItem {
                item_id: item.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let valid = (excluded.len() as f64) <= MAX_EXCLUDED_FRACTION * items.len() as f64;

    let gather = |ids: &mut dyn Iterator<Item = &str>| -> (Vec<ScoreTriple>, Vec<ScoreTriple>) {
        ids.filter_map(|id| predictions.get(id).map(|p| (*p, truth[id])))
            .unzip()
    };

    let mut fold_metrics = Vec::with_capacity(folds.len());
    for fold in &folds {
        let (p, t) = gather(&mut fold.item_ids.iter().map(String::as_str));
        fold_metrics.push(FoldMetrics {
            fold: fold.index,
            n_items: p.len(),
            metrics: dimension_metrics(&p, &t, &format!("fold {}", fold.index))?,
        });
    }
    let (p, t) = gather(&mut items.iter().map(|i| i.id.as_str()));
    let pooled = dimension_metrics(&p, &t, "pooled")?;
    let mean = PerDimension::from_fn(|d| {
        let per: Vec<DimensionMetrics> = fold_metrics.iter().map(|f| *f.metrics.get(d)).collect();
        DimensionMetrics::mean(&per)
    });

    Ok(MetricReport {
        backend: backend.name(),
        seed,
        k,
        score_source: source,
        n_items: items.len(),
        n_excluded: excluded.len(),
        valid,
        excluded,
        folds: fold_metrics,
        mean,
        pooled,
    })
}

impl MetricReport {
    /// Aligned text table: one row per fold plus mean and pooled rows,
    /// four metric columns per dimension.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for d in Dimension::ALL {
            let _ = write!(out, "| {:^31} ", d.as_str());
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "fold");
        for _ in Dimension::ALL {
            let _ = write!(out, "| {:>7}{:>8}{:>8}{:>8} ", "SRCC", "KRCC", "PLCC", "RMSE");
        }
        out.push('\n');
        let mut row = |label: String, m: &PerDimension<DimensionMetrics>| {
            let _ = write!(out, "{label:<8}");
            for d in Dimension::ALL {
                let v = m.get(d);
                let _ = write!(out, "| {:>7.4}{:>8.4}{:>8.4}{:>8.3} ", v.srcc, v.krcc, v.plcc, v.rmse);
            }
            out.push('\n');
        };
        for f in &self.folds {
            row(f.fold.to_string(), &f.metrics);
        }
        row("mean".into(), &self.mean);
        row("pooled".into(), &self.pooled);
        let _ = writeln!(
            out,
            "backend {} | seed {} | k {} | items {} | excluded {}{}",
            self.backend,
            self.seed,
            self.k,
            self.n_items,
            self.n_excluded,
            if self.valid { "" } else { " | INVALID" }
        );
        out
    }
}

/// Prompt for a group of `n` candidate audios.
pub fn pair_instruction(n: usize) -> String {
    let mut s = String::from("The video is <video>, ");
    for i in 1..=n {
        let _ = write!(s, "Audio {i} is <audio {i}>, ");
    }
    s.push_str("Which audio best matches this video in terms of audio content, quality, and rhythm?");
    s
}

pub fn pair_response(position: usize) -> String {
    format!("Audio {position}.")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairQuestion {
    pub question_id: String,
    pub group_id: String,
    pub source_page: String,
    /// Item ids in presented order.
    pub presented: Vec<String>,
    /// 1-based position of the labelled best item.
    pub correct_position: usize,
    pub instruction: String,
}

/// For a group of n candidates emits n questions; in question j the labelled
/// best item sits at position j and the others follow a seeded shuffle.
pub fn build_pair_questions(groups: &[PairGroup], seed: u64) -> Result<Vec<PairQuestion>> {
    let mut out = Vec::new();
    for g in groups {
        g.validate()?;
        let correct = &g.items[g.correct_position()];
        let others: Vec<&AgavItem> = g.items.iter().filter(|i| i.id != correct.id).collect();
        for j in 1..=g.items.len() {
            let mut order = others.clone();
            order.shuffle(&mut rng_for(seed, &["pair", &g.group_id, &j.to_string()]));
            order.insert(j - 1, correct);
            out.push(PairQuestion {
                question_id: format!("{}#{j}", g.group_id),
                group_id: g.group_id.clone(),
                source_page: g.source_page.clone(),
                presented: order.iter().map(|i| i.id.clone()).collect(),
                correct_position: j,
                instruction: pair_instruction(g.items.len()),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairProtocol {
    MultiInput,
    SingleInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub groups: usize,
    pub group_mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub protocol: PairProtocol,
    pub backend: String,
    pub correct: usize,
    /// Questions answered, protocol violations included.
    pub total: usize,
    /// `correct / total`.
    pub overall_accuracy: f64,
    /// Mean over groups of each group's accuracy.
    pub group_mean_accuracy: f64,
    pub violations: usize,
    /// Questions lost to transport or other backend failures; not in `total`.
    pub failures: usize,
    /// Single-input groups whose top score was shared.
    pub ties: usize,
    pub valid: bool,
    pub pages: BTreeMap<String, PageAccuracy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Correct,
    Wrong,
    Violation,
    Failed,
}

struct Tally<'a> {
    // per group: (page, correct, total)
    groups: BTreeMap<&'a str, (&'a str, usize, usize)>,
    violations: usize,
    failures: usize,
}

impl<'a> Tally<'a> {
    fn new() -> Self {
        Self {
            groups: BTreeMap::new(),
            violations: 0,
            failures: 0,
        }
    }

    fn record(&mut self, group: &'a str, page: &'a str, outcome: Outcome) {
        let e = self.groups.entry(group).or_insert((page, 0, 0));
        match outcome {
            Outcome::Failed => {
                self.failures += 1;
                return;
            }
            Outcome::Violation => self.violations += 1,
            Outcome::Correct => e.1 += 1,
            Outcome::Wrong => {}
        }
        e.2 += 1;
    }

    fn finish(self, protocol: PairProtocol, backend: String, ties: usize) -> PairReport {
        let ratio = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
        let mut pages: BTreeMap<String, (usize, usize, Vec<f64>)> = BTreeMap::new();
        let mut group_acc = Vec::new();
        let (mut correct, mut total) = (0, 0);
        for (page, c, t) in self.groups.values() {
            let e = pages.entry(page.to_string()).or_default();
            e.0 += c;
            e.1 += t;
            correct += c;
            total += t;
            if *t > 0 {
                let acc = ratio(*c, *t);
                e.2.push(acc);
                group_acc.push(acc);
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let asked = total + self.failures;
        PairReport {
            protocol,
            backend,
            correct,
            total,
            overall_accuracy: ratio(correct, total),
            group_mean_accuracy: mean(&group_acc),
            violations: self.violations,
            failures: self.failures,
            ties,
            valid: (self.failures as f64) <= MAX_EXCLUDED_FRACTION * asked as f64,
            pages: pages
                .into_iter()
                .map(|(p, (c, t, accs))| {
                    (
                        p,
                        PageAccuracy {
                            correct: c,
                            total: t,
                            accuracy: ratio(c, t),
                            groups: accs.len(),
                            group_mean_accuracy: mean(&accs),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Asks the backend each multi-input question. Protocol violations count as
/// wrong answers and are tallied; other backend failures are excluded from
/// the denominator and tallied separately.
pub fn evaluate_pair_multi_input(
    backend: &dyn ScoringBackend,
    groups: &[PairGroup],
    questions: &[PairQuestion],
    options: &EvalOptions,
) -> Result<PairReport> {
    backend.require(Capability::MultiInputChoice)?;
    let by_group: HashMap<&str, &PairGroup> = groups.iter().map(|g| (g.group_id.as_str(), g)).collect();
    let mut resolved = Vec::with_capacity(questions.len());
    for q in questions {
        let g = by_group
            .get(q.group_id.as_str())
            .ok_or_else(|| HarnessError::InvalidInput(format!("question {} names unknown group", q.question_id)))?;
        let items: HashMap<&str, &AgavItem> = g.items.iter().map(|i| (i.id.as_str(), i)).collect();
        let presented = q
            .presented
            .iter()
            .map(|id| {
                items.get(id.as_str()).copied().ok_or_else(|| {
                    HarnessError::InvalidInput(format!("question {} presents unknown item {id}", q.question_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        resolved.push((q, *g, presented));
    }

    let outcomes = run_ordered(options.workers, &resolved, |(q, g, presented)| {
        match backend.choose(&g.items[0].video_uri, presented) {
            Ok(a) if a.selected_index == q.correct_position => Outcome::Correct,
            Ok(a) if a.selected_index == 0 || a.selected_index > presented.len() => Outcome::Violation,
            Ok(_) => Outcome::Wrong,
            Err(e) if e.is_protocol_violation() => Outcome::Violation,
            Err(_) => Outcome::Failed,
        }
    });
    let mut tally = Tally::new();
    for ((q, _, _), outcome) in resolved.iter().zip(outcomes) {
        tally.record(&q.group_id, &q.source_page, outcome);
    }
    Ok(tally.finish(PairProtocol::MultiInput, backend.name(), 0))
}

/// Scores every candidate's overall quality and picks the best one per group.
/// Under level-indexed level orientation the lowest score is best. Ties go
/// to the earliest candidate in manifest order and are counted.
pub fn evaluate_pair_single_input(
    backend: &dyn ScoringBackend,
    groups: &[PairGroup],
    options: &EvalOptions,
) -> Result<PairReport> {
    let source = resolve_source(backend, options.source)?;
    for g in groups {
        g.validate()?;
    }
    let higher_is_better = source != ScoreSource::Levels || options.orientation.higher_is_better();
    let overall = |item: &AgavItem| -> std::result::Result<f64, BackendError> {
        match source {
            ScoreSource::Levels => Ok(backend
                .level_logits(item, Dimension::Overall)?
                .oriented(options.orientation)
                .score()),
            _ => Ok(backend.score(item)?.overall),
        }
    };
    let outcomes = run_ordered(options.workers, groups, |g| {
        let scores: std::result::Result<Vec<f64>, BackendError> = g.items.iter().map(&overall).collect();
        let scores = match scores {
            Ok(s) => s,
            Err(e) if e.is_protocol_violation() => return (Outcome::Violation, false),
            Err(_) => return (Outcome::Failed, false),
        };
        let key = |s: f64| if higher_is_better { s } else { -s };
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if key(s) > key(scores[best]) {
                best = i;
            }
        }
        let tied = scores.iter().filter(|&&s| s == scores[best]).count() > 1;
        let outcome = if g.items[best].id == g.correct_item_id {
            Outcome::Correct
        } else {
            Outcome::Wrong
        };
        (outcome, tied)
    });
    let mut tally = Tally::new();
    let mut ties = 0;
    for (g, (outcome, tied)) in groups.iter().zip(outcomes) {
        ties += usize::from(tied);
        tally.record(&g.group_id, &g.source_page, outcome);
    }
    Ok(tally.finish(PairProtocol::SingleInput, backend.name(), ties))
}

/// Expected group-mean accuracy of uniform guessing: the mean of `1 / n_g`.
pub fn random_baseline(groups: &[PairGroup]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    groups.iter().map(|g| 1.0 / g.items.len() as f64).sum::<f64>() / groups.len() as f64
}

/// Expected question-level accuracy of uniform guessing under the
/// answer-iteration scheme: groups / questions.
pub fn random_baseline_per_question(groups: &[PairGroup]) -> f64 {
    let questions: usize = groups.iter().map(|g| g.items.len()).sum();
    if questions == 0 {
        return 0.0;
    }
    groups.len() as f64 / questions as f64
}

impl PairReport {
    /// One header row of page names and one row of accuracies.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<28}", "method");
        for p in self.pages.keys() {
            let _ = write!(out, " {:>12}", truncate(p, 12));
        }
        let _ = writeln!(out, " {:>12} {:>12}", "overall", "group-mean");
        let _ = write!(out, "{:<28}", truncate(&self.backend, 28));
        for p in self.pages.values() {
            let _ = write!(out, " {:>12.4}", p.accuracy);
        }
        let _ = writeln!(out, " {:>12.4} {:>12.4}", self.overall_accuracy, self.group_mean_accuracy);
        let _ = writeln!(
            out,
            "protocol {:?} | questions {} | violations {} | failures {} | ties {}{}",
            self.protocol,
            self.total,
            self.violations,
            self.failures,
            self.ties,
            if self.valid { "" } else { " | INVALID" }
        );
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{MockBackend, MockKind};
    use crate::subjective::MosRecord;

    fn item(id: &str, video: &str, method: &str, mos: f64) -> AgavItem {
        AgavItem {
            id: id.into(),
            video_uri: format!("{video}.mp4"),
            audio_uri: format!("{id}.wav"),
            source_video_id: video.into(),
            category: "Animal".into(),
            vta_method: method.into(),
            ground_truth: Some(MosRecord {
                item_id: id.into(),
                mos_audio_quality: mos,
                mos_consistency: 100.0 - mos,
                mos_overall: mos / 2.0 + 10.0,
                rater_count: 15,
                std_overall: 0.0,
            }),
            group_id: None,
        }
    }

    fn grid_items(videos: usize, methods: usize) -> Vec<AgavItem> {
        let mut v = Vec::new();
        for i in 0..videos {
            for m in 0..methods {
                let mos = ((i * 7 + m * 13) % 97) as f64 + i as f64 * 0.01;
                v.push(item(&format!("v{i}m{m}"), &format!("v{i}"), &format!("m{m}"), mos));
            }
        }
        v
    }

    #[test]
    fn kfold_ten_videos() {
        let items = grid_items(10, 2);
        let folds = kfold_split(&items, 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.source_videos.len(), 2);
            assert_eq!(f.item_ids.len(), 4);
        }
        let all: BTreeSet<&String> = folds.iter().flat_map(|f| &f.item_ids).collect();
        assert_eq!(all.len(), 20);
        assert_eq!(folds, kfold_split(&items, 5, 1).unwrap());
    }

    #[test]
    fn kfold_sizes_386() {
        let items = grid_items(386, 1);
        let sizes: Vec<usize> = kfold_split(&items, 5, 9)
            .unwrap()
            .iter()
            .map(|f| f.source_videos.len())
            .collect();
        assert_eq!(sizes, vec![78, 77, 77, 77, 77]);
    }

    #[test]
    fn kfold_errors() {
        let items = grid_items(3, 2);
        assert!(kfold_split(&items, 1, 0).is_err());
        assert!(kfold_split(&items, 4, 0).is_err());
    }

    #[test]
    fn oracle_scoring_is_perfect() {
        let items = grid_items(20, 3);
        let r = evaluate_scoring(&MockBackend::new(MockKind::OracleTriple), &items, 5, 2, &EvalOptions::default()).unwrap();
        for f in &r.folds {
            for d in Dimension::ALL {
                let m = f.metrics.get(d);
                assert_eq!((m.srcc, m.krcc, m.rmse), (1.0, 1.0, 0.0));
                assert!((m.plcc - 1.0).abs() < 1e-12);
            }
        }
        assert!(r.valid);
        assert!(r.render_table().contains("pooled"));
    }

    #[test]
    fn adversarial_scoring_is_anti() {
        let items = grid_items(20, 3);
        let r = evaluate_scoring(&MockBackend::new(MockKind::Adversarial), &items, 5, 2, &EvalOptions::default()).unwrap();
        for f in &r.folds {
            assert_eq!(f.metrics.overall.srcc, -1.0);
        }
    }

    #[test]
    fn scoring_requires_ground_truth() {
        let mut items = grid_items(5, 1);
        items[2].ground_truth = None;
        assert_eq!(
            evaluate_scoring(&MockBackend::new(MockKind::OracleTriple), &items, 2, 0, &EvalOptions::default()),
            Err(HarnessError::MissingGroundTruth("v2m0".into()))
        );
    }

    #[test]
    fn scoring_needs_a_score_capability() {
        let items = grid_items(5, 1);
        let err = evaluate_scoring(&MockBackend::new(MockKind::FirstPosition), &items, 2, 0, &EvalOptions::default());
        assert!(matches!(err, Err(HarnessError::Backend(BackendError::Unsupported { .. }))));
    }

    fn group(id: &str, n: usize, correct: usize) -> PairGroup {
        let items: Vec<AgavItem> = (0..n)
            .map(|i| {
                let mos = if i == correct { 90.0 } else { 10.0 + i as f64 };
                item(&format!("{id}-{i}"), id, &format!("m{i}"), mos)
            })
            .collect();
        PairGroup {
            group_id: id.into(),
            source_page: "page".into(),
            correct_item_id: items[correct].id.clone(),
            items,
        }
    }

    #[test]
    fn questions_iterate_positions() {
        let g = group("g", 3, 1);
        let qs = build_pair_questions(std::slice::from_ref(&g), 4).unwrap();
        assert_eq!(qs.len(), 3);
        let positions: Vec<usize> = qs.iter().map(|q| q.correct_position).collect();
        assert_eq!(positions, vec![1, 2, 3]);
        for q in &qs {
            assert_eq!(q.presented[q.correct_position - 1], g.correct_item_id);
            assert!(q.instruction.ends_with("Which audio best matches this video in terms of audio content, quality, and rhythm?"));
        }
        assert_eq!(qs, build_pair_questions(&[g], 4).unwrap());
    }

    #[test]
    fn first_position_group_mean() {
        let groups = vec![group("a", 3, 0), group("b", 5, 2)];
        let qs = build_pair_questions(&groups, 1).unwrap();
        let r = evaluate_pair_multi_input(&MockBackend::new(MockKind::FirstPosition), &groups, &qs, &EvalOptions::default()).unwrap();
        assert_eq!(r.group_mean_accuracy, (1.0 / 3.0 + 1.0 / 5.0) / 2.0);
        assert_eq!(r.group_mean_accuracy, random_baseline(&groups));
        assert_eq!(r.overall_accuracy, 2.0 / 8.0);
        assert_eq!(r.overall_accuracy, random_baseline_per_question(&groups));
    }

    #[test]
    fn multi_input_capability_checked_first() {
        let groups = vec![group("a", 3, 0)];
        let qs = build_pair_questions(&groups, 1).unwrap();
        let err = evaluate_pair_multi_input(&MockBackend::new(MockKind::OracleTriple), &groups, &qs, &EvalOptions::default());
        assert!(matches!(err, Err(HarnessError::Backend(BackendError::Unsupported { .. }))));
    }

    #[test]
    fn single_input_oracles_and_adversary() {
        let groups: Vec<PairGroup> = (0..10).map(|i| group(&format!("g{i}"), 2 + i % 4, i % 2)).collect();
        for kind in [MockKind::OracleTriple, MockKind::OracleLevels] {
            let r = evaluate_pair_single_input(&MockBackend::new(kind), &groups, &EvalOptions::default()).unwrap();
            assert_eq!(r.overall_accuracy, 1.0, "{kind:?}");
        }
        let indexed = EvalOptions {
            orientation: Orientation::LevelIndexed,
            ..EvalOptions::default()
        };
        let r = evaluate_pair_single_input(&MockBackend::new(MockKind::OracleLevels), &groups, &indexed).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        let r = evaluate_pair_single_input(&MockBackend::new(MockKind::Adversarial), &groups, &EvalOptions::default()).unwrap();
        assert_eq!(r.overall_accuracy, 0.0);
    }

    #[test]
    fn single_input_ties_break_to_first() {
        let mut g = group("t", 3, 1);
        for it in &mut g.items {
            it.ground_truth.as_mut().unwrap().mos_overall = 50.0;
        }
        let r = evaluate_pair_single_input(&MockBackend::new(MockKind::OracleTriple), &[g], &EvalOptions::default()).unwrap();
        assert_eq!(r.ties, 1);
        assert_eq!(r.correct, 0);
    }

    #[test]
    fn baseline_arithmetic() {
        let four: Vec<PairGroup> = (0..3).map(|i| group(&i.to_string(), 4, 0)).collect();
        assert_eq!(random_baseline(&four), 0.25);
        let mixed = vec![group("a", 3, 0), group("b", 5, 0)];
        assert!((random_baseline(&mixed) - 4.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn parallel_matches_sequential() {
        let items = grid_items(30, 2);
        let noisy = MockBackend::new(MockKind::Noisy { sigma: 5.0, seed: 3 });
        let seq = evaluate_scoring(&noisy, &items, 5, 1, &EvalOptions::default()).unwrap();
        let par = evaluate_scoring(&noisy, &items, 5, 1, &EvalOptions { workers: 4, ..EvalOptions::default() }).unwrap();
        assert_eq!(seq, par);
    }
}

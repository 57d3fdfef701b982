use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use agavqa_core::corpus::{PairDimension, Scenario, SourceItem, synthesize_corpus, write_reversed_audio};
use agavqa_core::dataset::{correct_ids, validate_items};
use agavqa_core::harness::{
    EvalOptions, PairReport, ScoreSource, build_pair_questions, evaluate_pair_multi_input,
    evaluate_pair_single_input, evaluate_scoring, random_baseline, random_baseline_per_question,
};
use agavqa_core::metrics::Orientation;
use agavqa_core::scorer::{BackendSpec, Capability, HttpConfig, ScoringBackend};
use agavqa_core::study::{StudyConfig, StudyRegistry, SystemClock};
use agavqa_core::subjective::{
    ExcludedSubject, RatingMatrix, SplitHalf, compute_mos, inter_dimension_srcc, krippendorff_alpha,
    per_category_std, split_half_srcc, zscore_normalize,
};
use agavqa_core::{AgavItem, Dimension, PairGroup, PerDimension, RatingRecord, jsonl};
use serde::Serialize;

use crate::output::{Result, Stamp, read_input, render, write_atomic, write_or_print};
use crate::{
    AggregateArgs, BackendArgs, BaselineArgs, Command, EvalPairArgs, EvalScoreArgs, ExportArgs,
    OrientationArg, ProtocolArg, ReliabilityArgs, ServeArgs, SourceArg, StudyArgs, SynthArgs,
};

pub enum Outcome {
    Valid,
    Invalid(String),
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::AggregateMos(a) => aggregate_mos(a),
        Command::Reliability(a) => reliability(a),
        Command::EvalScore(a) => eval_score(a),
        Command::EvalPair(a) => eval_pair(a),
        Command::RandomBaseline(a) => baseline(a),
        Command::Serve(a) => serve(a),
        Command::Export(a) => export(a),
    }
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>> {
    jsonl::read(bytes).map_err(|e| format!("`{}`: {e}", path.display()).into())
}

fn parse_targets(spec: &str) -> Result<BTreeMap<Scenario, usize>> {
    let mut out = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, count) = part
            .split_once('=')
            .ok_or_else(|| format!("target `{part}` is not of the form scenario=count"))?;
        let scenario: Scenario = name.trim().parse()?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("target count `{count}` is not a non-negative integer"))?;
        if out.insert(scenario, count).is_some() {
            return Err(format!("scenario `{name}` given twice").into());
        }
    }
    if out.is_empty() {
        return Err("no targets given".into());
    }
    Ok(out)
}

#[derive(Serialize)]
struct SynthReport {
    corpus_digest: String,
    pairs: usize,
    counts: BTreeMap<Scenario, BTreeMap<PairDimension, usize>>,
    reversed_written: usize,
    warnings: Vec<String>,
}

fn synth_corpus(a: SynthArgs) -> Result<Outcome> {
    let input = read_input(&a.manifest)?;
    let sources: Vec<SourceItem> = parse_jsonl(&a.manifest, &input)?;
    let targets = parse_targets(&a.targets)?;
    let mut corpus = synthesize_corpus(&sources, &targets, a.seed)?;
    let mut reversed_written = 0;
    if let Some(root) = &a.media_root {
        let dir = a.reversed_dir.clone().unwrap_or_else(|| sibling(&a.out, "reversed"));
        reversed_written = write_reversed_audio(&mut corpus, root, &dir)?.len();
    }
    write_atomic(&a.out, &corpus.manifest_bytes())?;

    let counts = targets
        .keys()
        .map(|&s| {
            let per_dim = [PairDimension::ContentConsistency, PairDimension::AudioQuality]
                .into_iter()
                .map(|d| (d, corpus.count(s, Some(d))))
                .collect();
            (s, per_dim)
        })
        .collect();
    let report = SynthReport {
        corpus_digest: corpus.digest(),
        pairs: corpus.pairs.len(),
        counts,
        reversed_written,
        warnings: corpus.warnings.clone(),
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let stamp = Stamp::new(a.seed, &input);
    let bytes = render(&stamp, &report, a.format, || {
        let mut t = format!("pairs {}  digest {}\n", report.pairs, report.corpus_digest);
        for (s, dims) in &report.counts {
            for (d, n) in dims {
                let _ = writeln!(t, "{:<14}{:<22}{n}", s.as_str(), serde_plain(d));
            }
        }
        t
    })?;
    write_or_print(a.report.as_deref(), &bytes)?;
    Ok(Outcome::Valid)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(name),
        _ => PathBuf::from(name),
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn load_ratings(path: &Path) -> Result<(Vec<u8>, RatingMatrix)> {
    let input = read_input(path)?;
    let records: Vec<RatingRecord> = parse_jsonl(path, &input)?;
    let matrix = RatingMatrix::from_records(&records)?;
    Ok((input, matrix))
}

#[derive(Serialize)]
struct AggregateReport {
    mos_digest: String,
    n_subjects: usize,
    n_items: usize,
    excluded: Vec<ExcludedSubject>,
}

fn aggregate_mos(a: AggregateArgs) -> Result<Outcome> {
    let (input, matrix) = load_ratings(&a.ratings)?;
    let normalized = zscore_normalize(&matrix);
    let mos = compute_mos(&normalized.matrix)?;
    let bytes = jsonl::to_bytes(&mos);
    write_atomic(&a.out, &bytes)?;
    let report = AggregateReport {
        mos_digest: agavqa_core::seed::sha256_hex(&bytes),
        n_subjects: matrix.subjects().len(),
        n_items: mos.len(),
        excluded: normalized.excluded,
    };
    let stamp = Stamp::new(a.seed, &input);
    let text = render(&stamp, &report, a.format, || {
        let mut t = format!("subjects {}  items {}\n", report.n_subjects, report.n_items);
        for e in &report.excluded {
            let _ = writeln!(t, "excluded {} ({}): {}", e.subject_id, e.dimension, e.reason);
        }
        t
    })?;
    write_or_print(a.report.as_deref(), &text)?;
    Ok(Outcome::Valid)
}

#[derive(Serialize)]
struct ReliabilityReport {
    n_subjects: usize,
    n_items: usize,
    /// Interval alpha on the raw 1-5 ratings.
    krippendorff_alpha: PerDimension<f64>,
    /// Split-half SRCC of the normalised ratings.
    split_half: PerDimension<SplitHalf>,
    /// Rows and columns in audio-quality, consistency, overall order.
    inter_dimension_srcc: [[f64; 3]; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    per_category_std: Option<BTreeMap<String, f64>>,
    excluded: Vec<ExcludedSubject>,
}

fn reliability(a: ReliabilityArgs) -> Result<Outcome> {
    let (input, matrix) = load_ratings(&a.ratings)?;
    let normalized = zscore_normalize(&matrix);
    let mos = compute_mos(&normalized.matrix)?;
    let alpha = PerDimension::try_from_fn(|d| krippendorff_alpha(matrix.grid(d)))?;
    let split_half = PerDimension::try_from_fn(|d| {
        let seed = agavqa_core::seed::derive_seed(a.seed, &["split-half", d.as_str()]);
        split_half_srcc(normalized.matrix.grid(d), a.repetitions, seed)
    })?;
    let per_category = match &a.manifest {
        Some(path) => {
            let items: Vec<AgavItem> = parse_jsonl(path, &read_input(path)?)?;
            let categories: HashMap<String, String> =
                items.into_iter().map(|i| (i.id, i.category)).collect();
            Some(per_category_std(&mos, &categories)?)
        }
        None => None,
    };
    let report = ReliabilityReport {
        n_subjects: matrix.subjects().len(),
        n_items: matrix.items().len(),
        krippendorff_alpha: alpha,
        split_half,
        inter_dimension_srcc: inter_dimension_srcc(&mos)?,
        per_category_std: per_category,
        excluded: normalized.excluded,
    };
    let stamp = Stamp::new(a.seed, &input);
    let bytes = render(&stamp, &report, a.report.format, || {
        let mut t = format!("{:<16}{:>10}{:>12}\n", "dimension", "alpha", "split-half");
        for d in Dimension::ALL {
            let _ = writeln!(
                t,
                "{:<16}{:>10.4}{:>12.4}",
                d.as_str(),
                report.krippendorff_alpha.get(d),
                report.split_half.get(d).mean
            );
        }
        for (d, row) in Dimension::ALL.iter().zip(&report.inter_dimension_srcc) {
            let _ = writeln!(t, "srcc {:<11}{:>8.4}{:>8.4}{:>8.4}", d.as_str(), row[0], row[1], row[2]);
        }
        if let Some(pc) = &report.per_category_std {
            for (c, s) in pc {
                let _ = writeln!(t, "std {c:<12}{s:>10.4}");
            }
        }
        t
    })?;
    write_or_print(a.report.out.as_deref(), &bytes)?;
    Ok(Outcome::Valid)
}

fn eval_options(b: &BackendArgs, source: SourceArg) -> EvalOptions {
    EvalOptions {
        workers: b.workers,
        source: match source {
            SourceArg::Auto => ScoreSource::Auto,
            SourceArg::Triple => ScoreSource::Triple,
            SourceArg::Levels => ScoreSource::Levels,
        },
        orientation: match b.orientation {
            OrientationArg::QualityAscending => Orientation::QualityAscending,
            OrientationArg::LevelIndexed => Orientation::LevelIndexed,
        },
    }
}

fn build_backend(b: &BackendArgs, seed: u64, correct: std::collections::HashSet<String>) -> Result<Arc<dyn ScoringBackend>> {
    let spec = BackendSpec::parse(&b.backend, seed)?;
    let http = match &spec {
        BackendSpec::Http { base_url } => {
            let url = base_url
                .clone()
                .or_else(|| b.base_url.clone())
                .ok_or("the http backend needs --base-url")?;
            if !(b.timeout.is_finite() && b.timeout > 0.0) {
                return Err(format!("timeout must be a positive number of seconds, got {}", b.timeout).into());
            }
            let mut cfg = HttpConfig::new(url);
            cfg.timeout = Duration::from_secs_f64(b.timeout);
            cfg.max_retries = b.retries;
            cfg.max_in_flight = b.workers.max(1);
            Some(cfg)
        }
        BackendSpec::Mock(_) => None,
    };
    Ok(spec.build(correct, http)?)
}

fn eval_score(a: EvalScoreArgs) -> Result<Outcome> {
    let input = read_input(&a.manifest)?;
    let items: Vec<AgavItem> = parse_jsonl(&a.manifest, &input)?;
    validate_items(&items)?;
    let backend = build_backend(&a.backend, a.seed, Default::default())?;
    let opts = eval_options(&a.backend, a.score_source);
    let report = evaluate_scoring(backend.as_ref(), &items, a.k, a.seed, &opts)?;
    let stamp = Stamp::new(a.seed, &input);
    let bytes = render(&stamp, &report, a.report.format, || report.render_table())?;
    write_or_print(a.report.out.as_deref(), &bytes)?;
    Ok(if report.valid {
        Outcome::Valid
    } else {
        Outcome::Invalid(format!("{} of {} items excluded", report.n_excluded, report.n_items))
    })
}

fn load_groups(path: &Path) -> Result<(Vec<u8>, Vec<PairGroup>)> {
    let input = read_input(path)?;
    let groups: Vec<PairGroup> = parse_jsonl(path, &input)?;
    for g in &groups {
        g.validate()?;
    }
    Ok((input, groups))
}

#[derive(Serialize)]
struct PairEvalReport {
    groups: usize,
    questions: usize,
    random_baseline: f64,
    random_baseline_per_question: f64,
    protocols: Vec<PairReport>,
}

fn eval_pair(a: EvalPairArgs) -> Result<Outcome> {
    let (input, groups) = load_groups(&a.groups)?;
    let backend = build_backend(&a.backend, a.seed, correct_ids(&groups))?;
    let opts = eval_options(&a.backend, a.score_source);
    let caps = backend.capabilities();
    let single_capable = caps.supports(Capability::TripleScores) || caps.supports(Capability::LevelLogits);
    let (multi, single) = match a.protocol {
        ProtocolArg::Auto => (caps.supports(Capability::MultiInputChoice), single_capable),
        ProtocolArg::MultiInput => (true, false),
        ProtocolArg::SingleInput => (false, true),
        ProtocolArg::Both => (true, true),
    };
    if !multi && !single {
        return Err(format!("backend `{}` supports neither pair protocol", backend.name()).into());
    }
    let mut protocols = Vec::new();
    if multi {
        let questions = build_pair_questions(&groups, a.seed)?;
        protocols.push(evaluate_pair_multi_input(backend.as_ref(), &groups, &questions, &opts)?);
    }
    if single {
        protocols.push(evaluate_pair_single_input(backend.as_ref(), &groups, &opts)?);
    }
    let report = PairEvalReport {
        groups: groups.len(),
        questions: groups.iter().map(|g| g.items.len()).sum(),
        random_baseline: random_baseline(&groups),
        random_baseline_per_question: random_baseline_per_question(&groups),
        protocols,
    };
    let stamp = Stamp::new(a.seed, &input);
    let bytes = render(&stamp, &report, a.report.format, || {
        let mut t = format!(
            "random baseline {:.4} (per question {:.4})\n",
            report.random_baseline, report.random_baseline_per_question
        );
        for p in &report.protocols {
            t.push_str(&p.render_table());
        }
        t
    })?;
    write_or_print(a.report.out.as_deref(), &bytes)?;
    let invalid: Vec<String> = report
        .protocols
        .iter()
        .filter(|p| !p.valid)
        .map(|p| format!("{} ({} failures)", serde_plain(&p.protocol), p.failures))
        .collect();
    Ok(if invalid.is_empty() {
        Outcome::Valid
    } else {
        Outcome::Invalid(invalid.join(", "))
    })
}

#[derive(Serialize)]
struct BaselineReport {
    groups: usize,
    questions: usize,
    /// Mean over groups of 1/n.
    random_baseline: f64,
    /// Expected correct answers over total questions.
    random_baseline_per_question: f64,
}

fn baseline(a: BaselineArgs) -> Result<Outcome> {
    let (input, groups) = load_groups(&a.groups)?;
    let report = BaselineReport {
        groups: groups.len(),
        questions: groups.iter().map(|g| g.items.len()).sum(),
        random_baseline: random_baseline(&groups),
        random_baseline_per_question: random_baseline_per_question(&groups),
    };
    let stamp = Stamp::new(a.seed, &input);
    let bytes = render(&stamp, &report, a.report.format, || {
        format!(
            "groups {}  questions {}\ngroup mean {:.6}\nper question {:.6}\n",
            report.groups, report.questions, report.random_baseline, report.random_baseline_per_question
        )
    })?;
    write_or_print(a.report.out.as_deref(), &bytes)?;
    Ok(Outcome::Valid)
}

fn open_study(s: &StudyArgs, daily_cap: Option<u32>) -> Result<StudyRegistry> {
    let input = read_input(&s.manifest)?;
    let items: Vec<AgavItem> = parse_jsonl(&s.manifest, &input)?;
    let registry = StudyRegistry::new(Arc::new(SystemClock), Some(s.state_dir.clone()));
    let mut config = StudyConfig::new(s.study_id.clone(), items, s.seed);
    if let Some(cap) = daily_cap {
        config.daily_cap = cap;
    }
    registry.add_study(config)?;
    Ok(registry)
}

fn serve(a: ServeArgs) -> Result<Outcome> {
    let registry = Arc::new(open_study(&a.study, Some(a.daily_cap))?);
    let app = agavqa_server::router(registry, a.media_root.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        agavqa_server::serve(listener, app, shutdown).await
    })?;
    Ok(Outcome::Valid)
}

fn export(a: ExportArgs) -> Result<Outcome> {
    let log = StudyRegistry::log_path(&a.study.state_dir, &a.study.study_id);
    if !log.exists() {
        return Err(format!("no event log at `{}`", log.display()).into());
    }
    let registry = open_study(&a.study, None)?;
    let records = registry.export(&a.study.study_id)?;
    write_or_print(a.out.as_deref(), &jsonl::to_bytes(&records))?;
    Ok(Outcome::Valid)
}

//! Pre-training corpus synthesis.
//!
//! Pairs are labelled automatically with two text-defined levels. Original
//! media is `excellent`. Consistency negatives come from swapping in audio
//! of another sound category (audio-video) or a caption with no shared
//! content words (audio-text, music-text). Quality negatives play the audio
//! reversed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl;
use crate::metrics::QualityLevel;
use crate::seed::{rng_for, sha256_hex};
use crate::wav::{self, WaveAudio, WavError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid template combination: {0}")]
    InvalidCombination(String),
    #[error("invalid source item `{id}`: {reason}")]
    InvalidSource { id: String, reason: String },
    #[error("target for {scenario} is {target}; targets must be even")]
    OddTarget { scenario: Scenario, target: usize },
    #[error("not enough source items: {}", format_deficits(.deficits))]
    Shortfall { deficits: BTreeMap<Scenario, usize> },
    #[error("{path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_deficits(d: &BTreeMap<Scenario, usize>) -> String {
    d.iter()
        .map(|(s, n)| format!("{s} short by {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    AudioVideo,
    AudioText,
    MusicText,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::AudioVideo, Scenario::AudioText, Scenario::MusicText];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::AudioVideo => "audio-video",
            Scenario::AudioText => "audio-text",
            Scenario::MusicText => "music-text",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "audio-video" | "av" => Ok(Scenario::AudioVideo),
            "audio-text" | "at" => Ok(Scenario::AudioText),
            "music-text" | "mt" => Ok(Scenario::MusicText),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

/// The perspective a pre-training pair probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairDimension {
    ContentConsistency,
    AudioQuality,
}

/// Template selector: a single perspective, or the sequential
/// three-dimension audio-video template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionDimension {
    ContentConsistency,
    AudioQuality,
    AllDimensions,
}

impl From<PairDimension> for InstructionDimension {
    fn from(d: PairDimension) -> Self {
        match d {
            PairDimension::ContentConsistency => InstructionDimension::ContentConsistency,
            PairDimension::AudioQuality => InstructionDimension::AudioQuality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Excellent,
    Bad,
}

impl Label {
    pub fn level(self) -> QualityLevel {
        match self {
            Label::Excellent => QualityLevel::Excellent,
            Label::Bad => QualityLevel::Bad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    AudioSwapped,
    CaptionSwapped,
    AudioReversed,
}

/// A record of a source corpus (sound-class video, audio caption, or music
/// caption).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceItem {
    pub id: String,
    pub scenario: Scenario,
    pub audio_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub category: String,
}

impl SourceItem {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let reason = match self.scenario {
            Scenario::AudioVideo if self.video_path.is_none() => Some("audio-video item without video"),
            Scenario::AudioText | Scenario::MusicText if self.caption.is_none() => Some("captioned scenario without caption"),
            _ => None,
        };
        match reason {
            Some(r) => Err(CorpusError::InvalidSource {
                id: self.id.clone(),
                reason: r.into(),
            }),
            None => Ok(()),
        }
    }
}

/// One synthesized instruction-response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub scenario: Scenario,
    pub dimension: PairDimension,
    pub instruction: String,
    pub response: String,
    pub label: Label,
    pub provenance: Provenance,
    pub audio_path: String,
    pub video_path: Option<String>,
    pub caption: Option<String>,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversed_audio_path: Option<String>,
}

impl InstructionPair {
    /// Checks the label / provenance / dimension coupling.
    pub fn is_consistent(&self) -> bool {
        let label_ok = (self.label == Label::Excellent) == (self.provenance == Provenance::Original);
        let dim_ok = match self.dimension {
            PairDimension::AudioQuality => {
                matches!(self.provenance, Provenance::Original | Provenance::AudioReversed)
            }
            PairDimension::ContentConsistency => matches!(
                self.provenance,
                Provenance::Original | Provenance::AudioSwapped | Provenance::CaptionSwapped
            ),
        };
        label_ok && dim_ok
    }
}

pub const MASK: &str = "[Mask]";
pub const LEVEL_SLOT: &str = "{level}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedInstruction {
    pub instruction_text: String,
    pub response_template: String,
}

impl RenderedInstruction {
    pub fn slot_count(&self) -> usize {
        self.response_template.matches(MASK).count() + self.response_template.matches(LEVEL_SLOT).count()
    }

    /// Replaces the level slots, in order, with the given words.
    pub fn fill(&self, levels: &[&str]) -> String {
        let mut out = self.response_template.clone();
        for level in levels {
            let pos = [out.find(MASK).map(|p| (p, MASK.len())), out.find(LEVEL_SLOT).map(|p| (p, LEVEL_SLOT.len()))]
                .into_iter()
                .flatten()
                .min();
            if let Some((p, len)) = pos {
                out.replace_range(p..p + len, level);
            }
        }
        out
    }
}

/// Instruction and response template for a scenario and perspective.
///
/// Masked templates carry `[Mask]` in place of each level word; unmasked ones
/// carry a `{level}` slot to be filled with the level.
pub fn render_instruction(
    scenario: Scenario,
    dimension: InstructionDimension,
    masked: bool,
) -> Result<RenderedInstruction, CorpusError> {
    use InstructionDimension as D;
    use Scenario as S;
    let (instruction, response) = match (scenario, dimension) {
        (S::AudioVideo, D::ContentConsistency) => (
            "<audio><video> Can you evaluate the audio-visual content consistency of the given content in one word?",
            "Audio-visual consistency: {}.",
        ),
        (S::AudioVideo, D::AudioQuality) => (
            "<audio><video> Can you evaluate the audio quality of the given content in one word?",
            "Audio quality: {}.",
        ),
        (S::AudioVideo, D::AllDimensions) => (
            "<audio><video>Can you evaluate the audio quality, audio-visual content consistency, and overall audio-visual quality of the given content one by one?",
            "Audio quality: {}, audio-visual consistency: {}, overall audio-visual quality: {}.",
        ),
        (S::AudioText, D::ContentConsistency) => (
            "<audio> The text is <text> Can you evaluate the audio-text content consistency of the given content in one word?",
            "Audio-text consistency: {}.",
        ),
        (S::AudioText, D::AudioQuality) => (
            "<audio> Can you evaluate the audio quality of the given content in one word?",
            "Audio quality: {}.",
        ),
        (S::MusicText, D::ContentConsistency) => (
            "<music> The text is <text> Can you evaluate the music-text content consistency of the given content in one word?",
            "Music-text consistency: {}.",
        ),
        (S::MusicText, D::AudioQuality) => (
            "<music> Can you evaluate the music quality of the given content in one word?",
            "Music quality: {}.",
        ),
        (s, D::AllDimensions) => {
            return Err(CorpusError::InvalidCombination(format!(
                "the three-dimension template needs a <video> input, {s} has none"
            )));
        }
    };
    let slot = if masked { MASK } else { LEVEL_SLOT };
    Ok(RenderedInstruction {
        instruction_text: instruction.to_string(),
        response_template: response.replace("{}", slot),
    })
}

static STOP_WORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    include_str!("stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
});

/// Lowercased alphanumeric words of a caption minus stop words.
pub fn content_tokens(caption: &str) -> BTreeSet<String> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOP_WORDS.contains(w))
        .map(str::to_string)
        .collect()
}

pub fn captions_disjoint(a: &str, b: &str) -> bool {
    content_tokens(a).is_disjoint(&content_tokens(b))
}

/// Item paired with the donor whose audio or caption replaces its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapPair {
    pub item_id: String,
    pub donor_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwapPlan {
    pub pairs: Vec<SwapPair>,
    pub warnings: Vec<String>,
}

impl SwapPlan {
    pub fn donor_of(&self, item_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.item_id == item_id)
            .map(|p| p.donor_id.as_str())
    }
}

/// For every item with a video, draws a donor uniformly among items of a
/// different category.
pub fn swap_audio_cross_category(items: &[SourceItem], seed: u64) -> SwapPlan {
    let videos: Vec<&SourceItem> = items.iter().filter(|i| i.video_path.is_some()).collect();
    let mut plan = SwapPlan::default();
    for item in &videos {
        let others: Vec<&&SourceItem> = videos.iter().filter(|o| o.category != item.category).collect();
        let mut rng = rng_for(seed, &["audio-swap", &item.id]);
        match others.choose(&mut rng) {
            Some(donor) => plan.pairs.push(SwapPair {
                item_id: item.id.clone(),
                donor_id: donor.id.clone(),
            }),
            None => plan.warnings.push(format!(
                "{}: no item outside category `{}` to take audio from",
                item.id, item.category
            )),
        }
    }
    plan
}

/// For every captioned item, takes the first caption, in a seeded order,
/// that shares no content token with its own.
pub fn swap_caption_no_overlap(items: &[SourceItem], seed: u64) -> SwapPlan {
    let captioned: Vec<(&SourceItem, BTreeSet<String>)> = items
        .iter()
        .filter_map(|i| i.caption.as_deref().map(|c| (i, content_tokens(c))))
        .collect();
    let mut plan = SwapPlan::default();
    for (idx, (item, tokens)) in captioned.iter().enumerate() {
        let mut order: Vec<usize> = (0..captioned.len()).filter(|&j| j != idx).collect();
        order.shuffle(&mut rng_for(seed, &["caption-swap", &item.id]));
        match order.into_iter().find(|&j| captioned[j].1.is_disjoint(tokens)) {
            Some(j) => plan.pairs.push(SwapPair {
                item_id: item.id.clone(),
                donor_id: captioned[j].0.id.clone(),
            }),
            None => plan
                .warnings
                .push(format!("{}: every other caption shares a content word", item.id)),
        }
    }
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<InstructionPair>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn manifest_bytes(&self) -> Vec<u8> {
        jsonl::to_bytes(&self.pairs)
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.manifest_bytes())
    }

    pub fn count(&self, scenario: Scenario, dimension: Option<PairDimension>) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.scenario == scenario && dimension.is_none_or(|d| p.dimension == d))
            .count()
    }
}

struct Bucket<'a> {
    dimension: PairDimension,
    label: Label,
    provenance: Provenance,
    candidates: Vec<(&'a SourceItem, Option<&'a SourceItem>)>,
    need: usize,
}

/// Builds exactly `targets[s]` pairs for each scenario, half per dimension
/// and, within a dimension, `ceil(h/2)` excellent and `floor(h/2)` bad.
///
/// Each source item is used at most once per (dimension, label) bucket.
pub fn synthesize_corpus(
    sources: &[SourceItem],
    targets: &BTreeMap<Scenario, usize>,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    for s in sources {
        s.validate()?;
    }
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    let mut deficits = BTreeMap::new();

    for (&scenario, &target) in targets {
        if target % 2 == 1 {
            return Err(CorpusError::OddTarget { scenario, target });
        }
        let mut items: Vec<&SourceItem> = sources.iter().filter(|s| s.scenario == scenario).collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let owned: Vec<SourceItem> = items.iter().map(|&i| i.clone()).collect();
        let swap_seed = crate::seed::derive_seed(seed, &["swap", scenario.as_str()]);
        let plan = match scenario {
            Scenario::AudioVideo => swap_audio_cross_category(&owned, swap_seed),
            _ => swap_caption_no_overlap(&owned, swap_seed),
        };
        warnings.extend(plan.warnings.iter().map(|w| format!("{scenario}: {w}")));
        let by_id: BTreeMap<&str, &SourceItem> = items.iter().map(|i| (i.id.as_str(), *i)).collect();
        let swapped: Vec<(&SourceItem, Option<&SourceItem>)> = plan
            .pairs
            .iter()
            .map(|p| (by_id[p.item_id.as_str()], Some(by_id[p.donor_id.as_str()])))
            .collect();
        let originals: Vec<(&SourceItem, Option<&SourceItem>)> = items.iter().map(|&i| (i, None)).collect();

        let half = target / 2;
        let (n_exc, n_bad) = (half.div_ceil(2), half / 2);
        let swap_kind = match scenario {
            Scenario::AudioVideo => Provenance::AudioSwapped,
            _ => Provenance::CaptionSwapped,
        };
        let buckets = [
            Bucket {
                dimension: PairDimension::ContentConsistency,
                label: Label::Excellent,
                provenance: Provenance::Original,
                candidates: originals.clone(),
                need: n_exc,
            },
            Bucket {
                dimension: PairDimension::ContentConsistency,
                label: Label::Bad,
                provenance: swap_kind,
                candidates: swapped,
                need: n_bad,
            },
            Bucket {
                dimension: PairDimension::AudioQuality,
                label: Label::Excellent,
                provenance: Provenance::Original,
                candidates: originals.clone(),
                need: n_exc,
            },
            Bucket {
                dimension: PairDimension::AudioQuality,
                label: Label::Bad,
                provenance: Provenance::AudioReversed,
                candidates: originals,
                need: n_bad,
            },
        ];

        let deficit = buckets
            .iter()
            .map(|b| b.need.saturating_sub(b.candidates.len()))
            .max()
            .unwrap_or(0);
        if deficit > 0 {
            deficits.insert(scenario, deficit);
            continue;
        }

        for mut bucket in buckets {
            let tag = format!("{:?}/{:?}", bucket.dimension, bucket.label);
            bucket
                .candidates
                .shuffle(&mut rng_for(seed, &["bucket", scenario.as_str(), &tag]));
            let template = render_instruction(scenario, bucket.dimension.into(), true)?;
            for (item, donor) in bucket.candidates.into_iter().take(bucket.need) {
                pairs.push(make_pair(scenario, &bucket.dimension, bucket.label, bucket.provenance, &template, item, donor));
            }
        }
    }

    if !deficits.is_empty() {
        return Err(CorpusError::Shortfall { deficits });
    }
    Ok(Corpus { pairs, warnings })
}

fn make_pair(
    scenario: Scenario,
    dimension: &PairDimension,
    label: Label,
    provenance: Provenance,
    template: &RenderedInstruction,
    item: &SourceItem,
    donor: Option<&SourceItem>,
) -> InstructionPair {
    let audio_path = match (provenance, donor) {
        (Provenance::AudioSwapped, Some(d)) => d.audio_path.clone(),
        _ => item.audio_path.clone(),
    };
    let caption = match (provenance, donor) {
        (Provenance::CaptionSwapped, Some(d)) => d.caption.clone(),
        _ => item.caption.clone(),
    };
    InstructionPair {
        scenario,
        dimension: *dimension,
        instruction: template.instruction_text.clone(),
        response: template.fill(&[label.level().as_str()]),
        label,
        provenance,
        audio_path,
        video_path: item.video_path.clone(),
        caption,
        source_id: item.id.clone(),
        donor_id: donor.map(|d| d.id.clone()),
        reversed_audio_path: None,
    }
}

/// Writes a time-reversed copy of the audio of every `audio-reversed` pair
/// into `out_dir` and records its path on the pair. Source audio paths are
/// resolved against `media_root`.
pub fn write_reversed_audio(corpus: &mut Corpus, media_root: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for pair in corpus
        .pairs
        .iter_mut()
        .filter(|p| p.provenance == Provenance::AudioReversed)
    {
        let src = media_root.join(&pair.audio_path);
        let audio = WaveAudio::open(&src).map_err(|source| CorpusError::Audio {
            path: src.clone(),
            source,
        })?;
        let dst = out_dir.join(format!("{}.reversed.wav", pair.source_id));
        wav::reverse_audio(&audio)
            .save(&dst)
            .map_err(|source| CorpusError::Audio {
                path: dst.clone(),
                source,
            })?;
        pair.reversed_audio_path = Some(dst.to_string_lossy().into_owned());
        written.push(dst);
    }
    Ok(written)
}

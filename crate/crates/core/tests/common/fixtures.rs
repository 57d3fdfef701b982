//! Seeded synthetic inputs shared by integration and acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use agavqa_core::corpus::{Scenario, SourceItem};
use agavqa_core::dataset::{AgavItem, PairGroup};
use agavqa_core::seed::rng_for;
use agavqa_core::study::{ManualClock, NextItem, StudyConfig, StudyRegistry, Submission, Which};
use agavqa_core::subjective::{MosRecord, RatingRecord};
use agavqa_core::wav::WaveAudio;
use chrono::{TimeDelta, TimeZone, Utc};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const CATEGORIES: [&str; 6] = ["Animal", "Vehicle", "Water", "Music", "People", "Tools"];
const NOUNS: [&str; 10] = ["dog", "engine", "rain", "crowd", "bell", "wind", "drum", "bird", "train", "thunder"];
const VERBS: [&str; 2] = ["rumbling", "echoing"];
const GENRES: [&str; 8] = ["jazz", "techno", "folk", "opera", "reggae", "ambient", "salsa", "blues"];
const MOODS: [&str; 2] = ["calm", "upbeat"];

/// Writes a short seeded stereo clip.
pub fn write_clip(path: &Path, seed: u64, label: &str) {
    let mut rng = rng_for(seed, &["clip", label]);
    let frames: Vec<Vec<i16>> = (0..480).map(|_| vec![rng.random(), rng.random()]).collect();
    WaveAudio::from_frames(8_000, &frames).unwrap().save(path).unwrap();
}

/// 60 source items: 24 audio-video over six categories, 20 audio-text and
/// 16 music-text captions. Audio files are written under `media_root`.
pub fn toy_sources(media_root: &Path, seed: u64) -> Vec<SourceItem> {
    let mut out = Vec::new();
    for i in 0..24 {
        let id = format!("av{i:02}");
        out.push(SourceItem {
            id: id.clone(),
            scenario: Scenario::AudioVideo,
            audio_path: format!("{id}.wav"),
            video_path: Some(format!("{id}.mp4")),
            caption: None,
            category: CATEGORIES[i % CATEGORIES.len()].into(),
        });
    }
    for i in 0..20 {
        out.push(SourceItem {
            id: format!("at{i:02}"),
            scenario: Scenario::AudioText,
            audio_path: format!("at{i:02}.wav"),
            video_path: None,
            caption: Some(format!("a {} {}", NOUNS[i % 10], VERBS[i / 10])),
            category: "caption".into(),
        });
    }
    for i in 0..16 {
        out.push(SourceItem {
            id: format!("mt{i:02}"),
            scenario: Scenario::MusicText,
            audio_path: format!("mt{i:02}.wav"),
            video_path: None,
            caption: Some(format!("{} {}", MOODS[i / 8], GENRES[i % 8])),
            category: "music".into(),
        });
    }
    for s in &out {
        write_clip(&media_root.join(&s.audio_path), seed, &s.id);
    }
    out
}

pub fn toy_targets() -> BTreeMap<Scenario, usize> {
    BTreeMap::from([(Scenario::AudioVideo, 16), (Scenario::AudioText, 16), (Scenario::MusicText, 8)])
}

fn mos(item_id: &str, aq: f64, cc: f64, ov: f64) -> MosRecord {
    MosRecord {
        item_id: item_id.into(),
        mos_audio_quality: aq,
        mos_consistency: cc,
        mos_overall: ov,
        rater_count: 15,
        std_overall: 10.0,
    }
}

/// `videos * methods` items with distinct seeded ground-truth MOS triples.
pub fn scored_items(videos: usize, methods: usize, seed: u64) -> Vec<AgavItem> {
    let mut rng = rng_for(seed, &["scored-items"]);
    let mut out = Vec::new();
    for v in 0..videos {
        for m in 0..methods {
            let id = format!("v{v:03}-m{m}");
            let triple = [0; 3].map(|_| rng.random_range(0.0..100.0));
            out.push(AgavItem {
                id: id.clone(),
                video_uri: format!("video/v{v:03}.mp4"),
                audio_uri: format!("audio/{id}.wav"),
                source_video_id: format!("v{v:03}"),
                category: CATEGORIES[v % CATEGORIES.len()].into(),
                vta_method: format!("method{m}"),
                ground_truth: Some(mos(&id, triple[0], triple[1], triple[2])),
                group_id: None,
            });
        }
    }
    out
}

/// Groups of 2 to 5 candidates over one video each, spread over three
/// pages. The labelled best item has the strictly highest overall MOS.
pub fn pair_groups(n: usize, seed: u64) -> Vec<PairGroup> {
    let pages = ["Generated Video", "Real Video", "Music Video"];
    let mut rng = rng_for(seed, &["pair-groups"]);
    (0..n)
        .map(|g| {
            let size = rng.random_range(2..=5);
            let best = rng.random_range(0..size);
            let group_id = format!("g{g:03}");
            let items: Vec<AgavItem> = (0..size)
                .map(|k| {
                    let id = format!("{group_id}-{k}");
                    let ov = if k == best { 80.0 + rng.random_range(0.0..20.0) } else { rng.random_range(0.0..79.0) };
                    AgavItem {
                        id: id.clone(),
                        video_uri: format!("video/{group_id}.mp4"),
                        audio_uri: format!("audio/{id}.wav"),
                        source_video_id: group_id.clone(),
                        category: "Animal".into(),
                        vta_method: format!("method{k}"),
                        ground_truth: Some(mos(&id, ov, ov, ov)),
                        group_id: Some(group_id.clone()),
                    }
                })
                .collect();
            PairGroup {
                source_page: pages[g % pages.len()].into(),
                correct_item_id: items[best].id.clone(),
                group_id,
                items,
            }
        })
        .collect()
}

pub struct SimulatedStudy {
    pub latent: BTreeMap<String, f64>,
    pub export: Vec<RatingRecord>,
    pub registry: StudyRegistry,
}

/// Runs `subjects` simulated raters through the study service: each rates
/// every item as latent quality plus N(0, sigma) noise, mapped onto the
/// 1-5 grid. The clock moves a day whenever the daily cap is hit.
pub fn simulate_study(items: usize, subjects: usize, sigma: f64, seed: u64) -> SimulatedStudy {
    let mut rng = rng_for(seed, &["latent"]);
    let manifest: Vec<AgavItem> = (0..items)
        .map(|i| AgavItem {
            id: format!("item{i:03}"),
            video_uri: format!("video/{i:03}.mp4"),
            audio_uri: format!("audio/{i:03}.wav"),
            source_video_id: format!("src{i:03}"),
            category: CATEGORIES[i % CATEGORIES.len()].into(),
            vta_method: "vta".into(),
            ground_truth: None,
            group_id: None,
        })
        .collect();
    let latent: BTreeMap<String, f64> = manifest.iter().map(|it| (it.id.clone(), rng.random_range(0.0..100.0))).collect();

    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2026, 2, 2, 9, 0, 0).unwrap()));
    let registry = StudyRegistry::new(clock.clone(), None);
    registry.add_study(StudyConfig::new("sim", manifest, seed)).unwrap();
    let noise = Normal::new(0.0, sigma).unwrap();
    for s in 0..subjects {
        let subject = format!("rater{s:02}");
        let sid = registry.create_session("sim", &subject).unwrap().session_id;
        let mut rng = rng_for(seed, &["noise", &subject]);
        loop {
            let item_id = match registry.next_item(&sid, Which::Current).unwrap() {
                NextItem::Complete { .. } => break,
                NextItem::Item { item, .. } => item.item_id,
            };
            let rate = |rng: &mut rand_chacha::ChaCha8Rng| {
                let q = latent[&item_id] + noise.sample(rng);
                let v = (1.0 + 4.0 * q / 100.0).clamp(1.0, 5.0);
                (v * 10.0).round() / 10.0
            };
            let sub = Submission {
                item_id: item_id.clone(),
                audio_quality: rate(&mut rng),
                consistency: rate(&mut rng),
                overall: rate(&mut rng),
            };
            if let Err(e) = registry.submit_rating(&sid, &sub) {
                assert_eq!(e.status(), 429, "{e}");
                clock.advance(TimeDelta::days(1));
                registry.submit_rating(&sid, &sub).unwrap();
            }
            clock.advance(TimeDelta::seconds(20));
        }
    }
    let export = registry.export("sim").unwrap();
    SimulatedStudy { latent, export, registry }
}

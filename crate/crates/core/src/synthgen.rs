//! Deterministic synthetic datasets with planted ground truth.
//!
//! Every class of every slot owns a disjoint block of `features_per_class`
//! feature channels (subjects first, then verbs, then objects; channels past
//! the last block carry only noise). Noise is Gaussian truncated at zero.
//! Scenarios:
//!
//! * `fg_basic`: the subject, verb and object blocks are raised by `mu`
//!   inside one contiguous foreground window. With `clutter > 0` a wrong
//!   class of each slot is also raised, by `clutter * mu * U(0,1)`, on every
//!   frame outside the window.
//! * `bg_verb`: subject and object inside the window, the verb block only
//!   outside it.
//! * `ctx_verb`: the verb is a function of the (subject, object) pair. The
//!   window holds a strong burst (`3 mu`) of a random verb block unrelated to
//!   the label, while subject and object fill the frames outside the window.
//! * `temporal_order`: one entity fills the first third of the clip and the
//!   other the last third; which one comes first, together with the subject,
//!   fixes the verb.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{
    write_annotations, write_features_bin, write_manifest, AnnotationSet, DatasetManifest, FeatureSequence,
    ManifestEntry, Slot, Split, Taxonomy, Triplet, Vocabulary, ANNOTATIONS_FILE, MANIFEST_FILE, TAXONOMY_FILE,
};
use crate::error::{Error, Result};
use crate::evaluation::{write_predictions, Prediction};
use crate::story::LabelledVideo;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

/// Strength of the label-free burst in `ctx_verb`, relative to `mu`.
const CTX_BURST: f64 = 3.0;
/// Words per taxonomy cluster.
const CLUSTER_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    FgBasic,
    BgVerb,
    CtxVerb,
    TemporalOrder,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::FgBasic => "fg_basic",
            Scenario::BgVerb => "bg_verb",
            Scenario::CtxVerb => "ctx_verb",
            Scenario::TemporalOrder => "temporal_order",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fg_basic" => Ok(Scenario::FgBasic),
            "bg_verb" => Ok(Scenario::BgVerb),
            "ctx_verb" => Ok(Scenario::CtxVerb),
            "temporal_order" => Ok(Scenario::TemporalOrder),
            other => Err(format!(
                "unknown scenario {other:?} (expected fg_basic, bg_verb, ctx_verb or temporal_order)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub n_train: usize,
    pub n_test: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub d: usize,
    /// Vocabulary sizes for subject, verb and object.
    pub vocab: [usize; 3],
    pub features_per_class: usize,
    /// Signal strength.
    pub mu: f64,
    /// Noise scale (before truncation at zero).
    pub sigma: f64,
    /// Minimum foreground window length; keep it at least the selection q.
    pub min_window: usize,
    /// Background clutter strength relative to `mu` (`fg_basic` only).
    pub clutter: f64,
    pub annotators: usize,
    pub annotator_noise: f64,
}

impl SynthConfig {
    /// Scenario defaults sized for quick desk-scale runs.
    pub fn for_scenario(scenario: Scenario, seed: u64) -> Self {
        let vocab = match scenario {
            Scenario::FgBasic | Scenario::BgVerb => [4, 4, 4],
            Scenario::CtxVerb => [3, 9, 3],
            Scenario::TemporalOrder => [3, 6, 3],
        };
        let (t_min, t_max) = match scenario {
            Scenario::TemporalOrder => (45, 90),
            _ => (40, 80),
        };
        SynthConfig {
            seed,
            scenario,
            n_train: 300,
            n_test: 100,
            t_min,
            t_max,
            d: 64,
            vocab,
            features_per_class: 4,
            mu: 1.0,
            sigma: 0.15,
            min_window: 10,
            clutter: 0.0,
            annotators: 3,
            annotator_noise: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_train + self.n_test == 0 {
            return bad("at least one video is required".into());
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad(format!("invalid frame range {}..={}", self.t_min, self.t_max));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if self.scenario == Scenario::FgBasic && self.mu <= self.sigma {
            return bad(format!("fg_basic needs mu > sigma, got mu={} sigma={}", self.mu, self.sigma));
        }
        if self.features_per_class == 0 {
            return bad("features_per_class must be at least 1".into());
        }
        let needed = self.vocab.iter().sum::<usize>() * self.features_per_class;
        if self.d < needed {
            return bad(format!("d={} is smaller than the {needed} class feature channels", self.d));
        }
        if self.vocab.iter().any(|&v| v < 2) {
            return bad(format!("every vocabulary needs at least 2 words, got {:?}", self.vocab));
        }
        if self.min_window == 0 {
            return bad("min_window must be at least 1".into());
        }
        let parts = if self.scenario == Scenario::TemporalOrder { 3 } else { 2 };
        if self.t_min < parts * self.min_window {
            return bad(format!(
                "{} needs t_min >= {parts} * min_window ({}), got {}",
                self.scenario,
                parts * self.min_window,
                self.t_min
            ));
        }
        if !(self.clutter >= 0.0 && self.clutter.is_finite()) {
            return bad(format!("clutter must be non-negative, got {}", self.clutter));
        }
        if self.annotators == 0 {
            return bad("annotators must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.annotator_noise) {
            return bad(format!("annotator_noise must lie in [0, 1), got {}", self.annotator_noise));
        }
        Ok(())
    }

    fn block(&self, slot: Slot, class: usize) -> std::ops::Range<usize> {
        let offset: usize = self.vocab[..slot.index()].iter().sum();
        let start = (offset + class) * self.features_per_class;
        start..start + self.features_per_class
    }
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub manifest: DatasetManifest,
    pub sequences: Vec<FeatureSequence>,
    pub annotations: Vec<AnnotationSet>,
    pub truth: Vec<Triplet>,
    pub truth_indices: Vec<[usize; 3]>,
    pub vocabularies: [Vocabulary; 3],
    pub taxonomy: Taxonomy,
}

const SUBJECT_WORDS: &[&str] = &["man", "woman", "boy", "girl", "dog", "cat", "child", "baby", "monkey", "bird"];
const VERB_WORDS: &[&str] = &[
    "play", "ride", "walk", "run", "jump", "cut", "slice", "swim", "dance", "drive", "climb", "eat",
];
const OBJECT_WORDS: &[&str] = &["ball", "horse", "guitar", "bike", "car", "tree", "water", "food", "road", "piano"];

fn words_for(slot: Slot, n: usize) -> Vec<String> {
    let pool = match slot {
        Slot::Subject => SUBJECT_WORDS,
        Slot::Verb => VERB_WORDS,
        Slot::Object => OBJECT_WORDS,
    };
    (0..n)
        .map(|i| match pool.get(i) {
            Some(w) => (*w).to_string(),
            None => format!("{}{i}", slot.name()),
        })
        .collect()
}

/// Root, one concept node per slot, clusters of up to three words below.
fn build_taxonomy(vocabularies: &[Vocabulary; 3]) -> Result<Taxonomy> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for vocab in vocabularies {
        let concept = format!("{}_concept", vocab.slot.name());
        pairs.push((concept.clone(), "entity".to_string()));
        for (i, word) in vocab.words().iter().enumerate() {
            let cluster = format!("{}_group{}", vocab.slot.name(), i / CLUSTER_SIZE);
            if i % CLUSTER_SIZE == 0 {
                pairs.push((cluster.clone(), concept.clone()));
            }
            pairs.push((word.clone(), cluster));
        }
    }
    Taxonomy::from_pairs(&pairs)
}

fn raise(data: &mut [f64], d: usize, frames: impl Iterator<Item = usize> + Clone, features: std::ops::Range<usize>, amount: f64) {
    for t in frames {
        for j in features.clone() {
            data[t * d + j] += amount;
        }
    }
}

/// Generates a dataset; a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocabularies = Slot::ALL.map(|slot| {
        Vocabulary::new(slot, words_for(slot, cfg.vocab[slot.index()])).expect("generated words are unique")
    });
    let taxonomy = build_taxonomy(&vocabularies)?;
    let total = cfg.n_train + cfg.n_test;
    let width = total.saturating_sub(1).to_string().len().max(4);
    let [n_s, n_v, n_o] = cfg.vocab;

    let mut sequences = Vec::with_capacity(total);
    let mut annotations = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    let mut truth_indices = Vec::with_capacity(total);
    let mut entries = Vec::with_capacity(total);

    for idx in 0..total {
        let video_id = format!("vid{idx:0width$}");
        let split = if idx < cfg.n_train { Split::Train } else { Split::Test };
        let frames = rng.random_range(cfg.t_min..=cfg.t_max);
        let d = cfg.d;
        let mut data: Vec<f64> = (0..frames * d)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (cfg.sigma * z).max(0.0)
            })
            .collect();

        let window_len = rng.random_range(cfg.min_window..=cfg.min_window.max(frames.div_ceil(2)).min(frames));
        let window_start = rng.random_range(0..=frames - window_len);
        let window = window_start..window_start + window_len;
        let outside = (0..frames).filter(|t| !window.contains(t));

        let s = rng.random_range(0..n_s);
        let o = rng.random_range(0..n_o);
        let v = match cfg.scenario {
            Scenario::FgBasic | Scenario::BgVerb => rng.random_range(0..n_v),
            Scenario::CtxVerb => (s * n_o + o) % n_v,
            Scenario::TemporalOrder => {
                let order = rng.random_range(0..2usize);
                let (first, last) = if order == 0 {
                    (cfg.block(Slot::Subject, s), cfg.block(Slot::Object, o))
                } else {
                    (cfg.block(Slot::Object, o), cfg.block(Slot::Subject, s))
                };
                let third = frames / 3;
                raise(&mut data, d, 0..third, first, cfg.mu);
                raise(&mut data, d, frames - third..frames, last, cfg.mu);
                (2 * s + order) % n_v
            }
        };
        match cfg.scenario {
            Scenario::FgBasic => {
                for (slot, class) in [(Slot::Subject, s), (Slot::Verb, v), (Slot::Object, o)] {
                    raise(&mut data, d, window.clone(), cfg.block(slot, class), cfg.mu);
                }
                if cfg.clutter > 0.0 {
                    for (slot, class) in [(Slot::Subject, s), (Slot::Verb, v), (Slot::Object, o)] {
                        let n = cfg.vocab[slot.index()];
                        let other = (class + rng.random_range(1..n)) % n;
                        let amount = cfg.clutter * cfg.mu * rng.random::<f64>();
                        raise(&mut data, d, outside.clone(), cfg.block(slot, other), amount);
                    }
                }
            }
            Scenario::BgVerb => {
                raise(&mut data, d, window.clone(), cfg.block(Slot::Subject, s), cfg.mu);
                raise(&mut data, d, window.clone(), cfg.block(Slot::Object, o), cfg.mu);
                raise(&mut data, d, outside.clone(), cfg.block(Slot::Verb, v), cfg.mu);
            }
            Scenario::CtxVerb => {
                let burst = rng.random_range(0..n_v);
                raise(&mut data, d, window.clone(), cfg.block(Slot::Verb, burst), CTX_BURST * cfg.mu);
                raise(&mut data, d, outside.clone(), cfg.block(Slot::Subject, s), cfg.mu);
                raise(&mut data, d, outside.clone(), cfg.block(Slot::Object, o), cfg.mu);
            }
            Scenario::TemporalOrder => {}
        }

        let seq = FeatureSequence::new(video_id.clone(), frames, d, data, false)?;
        let labels = [s, v, o];
        let word = |slot: Slot, i: usize| vocabularies[slot.index()].word(i).to_string();
        let true_triplet = Triplet::new(word(Slot::Subject, s), word(Slot::Verb, v), word(Slot::Object, o));

        // A strict majority repeats the truth, so it is always the most
        // common word; the rest are perturbed per slot.
        let majority = cfg.annotators / 2 + 1;
        let mut triplets = vec![true_triplet.clone(); majority.min(cfg.annotators)];
        for _ in majority..cfg.annotators {
            let mut pick = [s, v, o];
            for slot in Slot::ALL {
                let n = cfg.vocab[slot.index()];
                if rng.random::<f64>() < cfg.annotator_noise {
                    pick[slot.index()] = (pick[slot.index()] + rng.random_range(1..n)) % n;
                }
            }
            triplets.push(Triplet::new(
                word(Slot::Subject, pick[0]),
                word(Slot::Verb, pick[1]),
                word(Slot::Object, pick[2]),
            ));
        }

        let features = PathBuf::from(format!("features/{video_id}.bin"));
        entries.push(ManifestEntry {
            video_id: video_id.clone(),
            split,
            features_path: features.clone(),
            features,
            annotated: Some(true),
        });
        annotations.push(AnnotationSet {
            video_id,
            triplets,
        });
        sequences.push(seq);
        truth.push(true_triplet);
        truth_indices.push(labels);
    }

    Ok(SynthDataset {
        config: cfg.clone(),
        manifest: DatasetManifest {
            dim: cfg.d,
            entries,
        },
        sequences,
        annotations,
        truth,
        truth_indices,
        vocabularies,
        taxonomy,
    })
}

impl SynthDataset {
    /// Videos of `split`, labelled with their planted classes.
    pub fn labelled(&self, split: Split) -> Vec<LabelledVideo> {
        self.manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| LabelledVideo {
                seq: self.sequences[i].clone(),
                labels: self.truth_indices[i],
            })
            .collect()
    }

    /// Writes the dataset in the standard on-disk layout.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let features_dir = dir.join("features");
        fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
        for (seq, entry) in self.sequences.iter().zip(&self.manifest.entries) {
            write_features_bin(seq, &dir.join(&entry.features))?;
        }
        write_manifest(&self.manifest, &dir.join(MANIFEST_FILE))?;
        write_annotations(&self.annotations, &dir.join(ANNOTATIONS_FILE))?;
        self.taxonomy.save(&dir.join(TAXONOMY_FILE))?;
        for vocab in &self.vocabularies {
            vocab.save(&dir.join(vocab.slot.vocab_file_name()))?;
        }
        let truth: Vec<Prediction> = self
            .manifest
            .entries
            .iter()
            .zip(&self.truth)
            .map(|(e, t)| Prediction::new(e.video_id.clone(), t.clone()))
            .collect();
        write_predictions(&truth, &dir.join(GROUND_TRUTH_FILE))?;
        let path = dir.join("synth_config.json");
        let mut json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

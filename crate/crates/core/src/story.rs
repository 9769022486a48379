//! The three-level classifier stack.
//!
//! * L1 banks read the foreground descriptor.
//! * L2 banks read the foreground-background descriptor.
//! * L3 banks read the context descriptor: for each slot the top-c L2
//!   decision values at their class positions, zero elsewhere. In temporal
//!   mode this is computed on three overlapping parts of the video and the
//!   three part-descriptors are concatenated.

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{most_common_word, Dataset, FeatureSequence, Slot, Split, Triplet, Vocabulary};
use crate::error::{Error, Result};
use crate::saliency::{
    self, background_descriptor, fg_bg_from_selection, foreground_descriptor, Descriptor, LevelTag,
    SelectionResult,
};
use crate::svm::{argmax, train_ovr, ClassifierBank, TrainConfig};

pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::L3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "l1",
            Level::L2 => "l2",
            Level::L3 => "l3",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Level::L1),
            "l2" | "2" => Ok(Level::L2),
            "l3" | "3" => Ok(Level::L3),
            other => Err(format!("unknown level {other:?} (expected l1, l2 or l3)")),
        }
    }
}

/// How selection is done inside each temporal part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSelection {
    /// Re-run top-k / top-q selection on the part's own frames.
    #[default]
    Rerun,
    /// Keep the whole-video selection and restrict its frames to the part.
    RestrictGlobal,
}

/// What is stored at the kept positions of a context descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Raw decision values.
    #[default]
    Raw,
    /// Decision values squashed by the logistic function.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoryConfig {
    pub k: usize,
    pub q: usize,
    pub c: usize,
    pub temporal: bool,
    #[serde(default)]
    pub segment_selection: SegmentSelection,
    #[serde(default)]
    pub response: ResponseMode,
    /// Append the video's own L2 descriptor to the L3 input.
    #[serde(default)]
    pub append_l2: bool,
    pub svm: TrainConfig,
}

impl Default for StoryConfig {
    fn default() -> Self {
        StoryConfig {
            k: 60,
            q: 50,
            c: 5,
            temporal: false,
            segment_selection: SegmentSelection::Rerun,
            response: ResponseMode::Raw,
            append_l2: false,
            svm: TrainConfig::default(),
        }
    }
}

impl StoryConfig {
    pub fn validate(&self, vocab_sizes: [usize; 3]) -> Result<()> {
        if self.k == 0 || self.q == 0 {
            return Err(Error::Config("k and q must be at least 1".into()));
        }
        let max_c = vocab_sizes.iter().copied().min().unwrap_or(0);
        if self.c == 0 || self.c > max_c {
            return Err(Error::Config(format!(
                "c must lie in 1..={max_c} (smallest vocabulary), got {}",
                self.c
            )));
        }
        self.svm.validate()
    }

    pub fn l3_tag(&self) -> LevelTag {
        if self.temporal {
            LevelTag::L3Temp
        } else {
            LevelTag::L3Ctx
        }
    }
}

/// Three overlapping frame ranges covering a clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalSegments(pub [Range<usize>; 3]);

/// Parts of length `ceil(T/2)` starting at 0, `floor(T/4)` and `T - ceil(T/2)`;
/// clips shorter than 3 frames use the whole clip three times.
pub fn temporal_segments(frames: usize) -> TemporalSegments {
    assert!(frames >= 1, "a clip has at least one frame");
    if frames < 3 {
        return TemporalSegments([0..frames, 0..frames, 0..frames]);
    }
    let half = frames.div_ceil(2);
    let mid = frames / 4;
    TemporalSegments([0..half, mid..(mid + half).min(frames), frames - half..frames])
}

/// A training example: a clip and its per-slot class indices.
#[derive(Debug, Clone)]
pub struct LabelledVideo {
    pub seq: FeatureSequence,
    pub labels: [usize; 3],
}

/// Loads every annotated video of `split`, labelled with the most common
/// annotated word of each slot.
pub fn labelled_videos(dataset: &Dataset, split: Split) -> Result<Vec<LabelledVideo>> {
    let entries: Vec<_> = dataset.manifest.split(split).collect();
    entries
        .par_iter()
        .map(|entry| {
            let ann = dataset.annotations.get(&entry.video_id).ok_or_else(|| {
                Error::Data(format!("video {:?} has no annotations", entry.video_id))
            })?;
            let seq = dataset.features(entry)?;
            let mut labels = [0; 3];
            for slot in Slot::ALL {
                let word = most_common_word(ann, slot);
                labels[slot.index()] = dataset.vocabulary(slot).lookup(word).ok_or_else(|| {
                    Error::Data(format!("{slot} {word:?} is not in the vocabulary"))
                })?;
            }
            Ok(LabelledVideo { seq, labels })
        })
        .collect()
}

pub fn l1_descriptor(seq: &FeatureSequence, cfg: &StoryConfig) -> Descriptor {
    foreground_descriptor(seq, cfg.k, cfg.q)
}

pub fn l2_descriptor(seq: &FeatureSequence, cfg: &StoryConfig) -> Descriptor {
    saliency::fg_bg_descriptor(seq, cfg.k, cfg.q)
}

/// Foreground-background descriptor of one temporal part.
fn part_descriptor(
    seq: &FeatureSequence,
    range: Range<usize>,
    global: &SelectionResult,
    cfg: &StoryConfig,
) -> Descriptor {
    match cfg.segment_selection {
        SegmentSelection::Rerun => {
            let part = seq.slice_frames(range);
            let sel = saliency::select(&part, cfg.k, cfg.q);
            fg_bg_from_selection(&part, &sel)
        }
        SegmentSelection::RestrictGlobal => {
            let part = seq.slice_frames(range.clone());
            let frames: Vec<usize> = global
                .top_frames
                .iter()
                .filter(|t| range.contains(t))
                .map(|t| t - range.start)
                .collect();
            let restricted = SelectionResult {
                top_features: global.top_features.clone(),
                top_frames: frames,
                feature_saliency: Vec::new(),
                frame_saliency: Vec::new(),
            };
            let mut values = saliency::foreground_from_selection(&part, &restricted);
            values.extend(background_descriptor(&part, &restricted.top_frames));
            Descriptor {
                level: LevelTag::L2FgBg,
                values,
            }
        }
    }
}

/// Indices of the `c` largest scores (ties to the lower index).
fn top_c(scores: &[f64], c: usize) -> Vec<usize> {
    saliency::select_top_features(scores, c)
}

fn push_responses(
    out: &mut Vec<f64>,
    banks: &[ClassifierBank; 3],
    l2: &Descriptor,
    cfg: &StoryConfig,
) -> Result<()> {
    for bank in banks {
        let scores = bank.decision_values_for(l2)?;
        let mut block = vec![0.0; scores.len()];
        for i in top_c(&scores, cfg.c) {
            block[i] = match cfg.response {
                ResponseMode::Raw => scores[i],
                ResponseMode::Logistic => 1.0 / (1.0 + (-scores[i]).exp()),
            };
        }
        out.extend(block);
    }
    Ok(())
}

/// Sparse top-c L2 responses; three parts concatenated in temporal mode.
pub fn build_context_descriptor(
    l2_banks: &[ClassifierBank; 3],
    seq: &FeatureSequence,
    cfg: &StoryConfig,
) -> Result<Descriptor> {
    let global = saliency::select(seq, cfg.k, cfg.q);
    let whole = fg_bg_from_selection(seq, &global);
    let mut values = Vec::new();
    if cfg.temporal {
        for range in temporal_segments(seq.frames()).0 {
            let part = part_descriptor(seq, range, &global, cfg);
            push_responses(&mut values, l2_banks, &part, cfg)?;
        }
    } else {
        push_responses(&mut values, l2_banks, &whole, cfg)?;
    }
    if cfg.append_l2 {
        values.extend(whole.values);
    }
    Ok(Descriptor {
        level: cfg.l3_tag(),
        values,
    })
}

/// Per-slot training accuracy of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelAccuracy {
    pub level: Level,
    pub accuracy: [f64; 3],
}

fn train_banks(
    descriptors: &[Descriptor],
    videos: &[LabelledVideo],
    vocabularies: &[Vocabulary; 3],
    level: LevelTag,
    svm: &TrainConfig,
) -> Result<[ClassifierBank; 3]> {
    let rows: Vec<&[f64]> = descriptors.iter().map(|d| d.values.as_slice()).collect();
    let banks = Slot::ALL
        .par_iter()
        .map(|&slot| {
            let labels: Vec<usize> = videos.iter().map(|v| v.labels[slot.index()]).collect();
            train_ovr(&rows, &labels, &vocabularies[slot.index()], level, svm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(banks.try_into().expect("three slots"))
}

fn accuracy_of(banks: &[ClassifierBank; 3], descriptors: &[Descriptor], videos: &[LabelledVideo]) -> Result<[f64; 3]> {
    let mut acc = [0.0; 3];
    for slot in Slot::ALL {
        let bank = &banks[slot.index()];
        let mut hits = 0usize;
        for (d, v) in descriptors.iter().zip(videos) {
            if argmax(&bank.decision_values_for(d)?) == v.labels[slot.index()] {
                hits += 1;
            }
        }
        acc[slot.index()] = hits as f64 / videos.len().max(1) as f64;
    }
    Ok(acc)
}

fn descriptors_par<F>(videos: &[LabelledVideo], f: F) -> Result<Vec<Descriptor>>
where
    F: Fn(&FeatureSequence) -> Result<Descriptor> + Sync,
{
    videos.par_iter().map(|v| f(&v.seq)).collect()
}

/// Level-1 banks on foreground descriptors.
pub fn train_level1(
    videos: &[LabelledVideo],
    vocabularies: &[Vocabulary; 3],
    cfg: &StoryConfig,
) -> Result<([ClassifierBank; 3], LevelAccuracy)> {
    let desc = descriptors_par(videos, |s| Ok(l1_descriptor(s, cfg)))?;
    let banks = train_banks(&desc, videos, vocabularies, LevelTag::L1Fg, &cfg.svm)?;
    let accuracy = accuracy_of(&banks, &desc, videos)?;
    Ok((banks, LevelAccuracy { level: Level::L1, accuracy }))
}

/// Level-2 banks on foreground-background descriptors.
pub fn train_level2(
    videos: &[LabelledVideo],
    vocabularies: &[Vocabulary; 3],
    cfg: &StoryConfig,
) -> Result<([ClassifierBank; 3], LevelAccuracy)> {
    let desc = descriptors_par(videos, |s| Ok(l2_descriptor(s, cfg)))?;
    let banks = train_banks(&desc, videos, vocabularies, LevelTag::L2FgBg, &cfg.svm)?;
    let accuracy = accuracy_of(&banks, &desc, videos)?;
    Ok((banks, LevelAccuracy { level: Level::L2, accuracy }))
}

/// Level-3 banks on context descriptors built from trained L2 banks.
pub fn train_level3(
    videos: &[LabelledVideo],
    l2_banks: &[ClassifierBank; 3],
    vocabularies: &[Vocabulary; 3],
    cfg: &StoryConfig,
) -> Result<([ClassifierBank; 3], LevelAccuracy)> {
    let desc = descriptors_par(videos, |s| build_context_descriptor(l2_banks, s, cfg))?;
    let banks = train_banks(&desc, videos, vocabularies, cfg.l3_tag(), &cfg.svm)?;
    let accuracy = accuracy_of(&banks, &desc, videos)?;
    Ok((banks, LevelAccuracy { level: Level::L3, accuracy }))
}

/// A trained (possibly partially trained) stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryModel {
    pub config: StoryConfig,
    pub dim: usize,
    pub vocabularies: [Vocabulary; 3],
    banks: [Option<[ClassifierBank; 3]>; 3],
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    q: usize,
    c: usize,
    temporal: bool,
    segment_selection: SegmentSelection,
    response: ResponseMode,
    append_l2: bool,
    #[serde(rename = "C")]
    svm_c: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
    d: usize,
    vocab: [String; 3],
    levels: Vec<Level>,
}

fn bank_file(level: Level, slot: Slot) -> String {
    format!("{}_{}.bank", level.name(), slot.name())
}

impl StoryModel {
    /// Trains L1, L2 and L3 in order, stopping after `up_to`.
    pub fn train(
        videos: &[LabelledVideo],
        vocabularies: [Vocabulary; 3],
        config: StoryConfig,
        up_to: Level,
    ) -> Result<(StoryModel, Vec<LevelAccuracy>)> {
        let sizes = vocabularies.each_ref().map(Vocabulary::len);
        config.validate(sizes)?;
        let first = videos.first().ok_or(Error::EmptyInput)?;
        let dim = first.seq.dim();
        if let Some(v) = videos.iter().find(|v| v.seq.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.seq.dim(),
            });
        }
        let mut log = Vec::new();
        let (l1, acc) = train_level1(videos, &vocabularies, &config)?;
        log.push(acc);
        let mut model = StoryModel {
            config,
            dim,
            vocabularies,
            banks: [Some(l1), None, None],
        };
        if up_to >= Level::L2 {
            let (l2, acc) = train_level2(videos, &model.vocabularies, &model.config)?;
            log.push(acc);
            if up_to >= Level::L3 {
                let (l3, acc) = train_level3(videos, &l2, &model.vocabularies, &model.config)?;
                log.push(acc);
                model.banks[2] = Some(l3);
            }
            model.banks[1] = Some(l2);
        }
        Ok((model, log))
    }

    pub fn banks(&self, level: Level) -> Result<&[ClassifierBank; 3]> {
        self.banks[level.index()]
            .as_ref()
            .ok_or_else(|| Error::UntrainedLevel(level.name().into()))
    }

    pub fn trained_levels(&self) -> Vec<Level> {
        Level::ALL
            .into_iter()
            .filter(|l| self.banks[l.index()].is_some())
            .collect()
    }

    /// The descriptor the given level's banks read.
    pub fn descriptor(&self, seq: &FeatureSequence, level: Level) -> Result<Descriptor> {
        if seq.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: seq.dim(),
            });
        }
        match level {
            Level::L1 => Ok(l1_descriptor(seq, &self.config)),
            Level::L2 => Ok(l2_descriptor(seq, &self.config)),
            Level::L3 => build_context_descriptor(self.banks(Level::L2)?, seq, &self.config),
        }
    }

    /// Per-slot class indices predicted at `level`.
    pub fn predict_indices(&self, seq: &FeatureSequence, level: Level) -> Result<[usize; 3]> {
        let banks = self.banks(level)?;
        let d = self.descriptor(seq, level)?;
        let mut out = [0; 3];
        for slot in Slot::ALL {
            out[slot.index()] = argmax(&banks[slot.index()].decision_values_for(&d)?);
        }
        Ok(out)
    }

    pub fn predict_svo(&self, seq: &FeatureSequence, level: Level) -> Result<Triplet> {
        let idx = self.predict_indices(seq, level)?;
        let word = |slot: Slot| self.vocabularies[slot.index()].word(idx[slot.index()]).to_string();
        Ok(Triplet::new(word(Slot::Subject), word(Slot::Verb), word(Slot::Object)))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let levels = self.trained_levels();
        let file = ModelFile {
            k: self.config.k,
            q: self.config.q,
            c: self.config.c,
            temporal: self.config.temporal,
            segment_selection: self.config.segment_selection,
            response: self.config.response,
            append_l2: self.config.append_l2,
            svm_c: self.config.svm.c,
            tol: self.config.svm.tol,
            max_iter: self.config.svm.max_iter,
            seed: self.config.svm.seed,
            d: self.dim,
            vocab: Slot::ALL.map(|s| s.vocab_file_name()),
            levels: levels.clone(),
        };
        let path = dir.join(MODEL_FILE);
        let mut json = serde_json::to_string_pretty(&file).expect("model config serializes");
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        for slot in Slot::ALL {
            self.vocabularies[slot.index()].save(&dir.join(slot.vocab_file_name()))?;
        }
        for level in levels {
            for (slot, bank) in Slot::ALL.iter().zip(self.banks(level)?) {
                bank.save(&dir.join(bank_file(level, *slot)))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<StoryModel> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
        let config = StoryConfig {
            k: file.k,
            q: file.q,
            c: file.c,
            temporal: file.temporal,
            segment_selection: file.segment_selection,
            response: file.response,
            append_l2: file.append_l2,
            svm: TrainConfig {
                c: file.svm_c,
                tol: file.tol,
                max_iter: file.max_iter,
                seed: file.seed,
            },
        };
        let [s, v, o] = Slot::ALL.map(|slot| Vocabulary::load(slot, &dir.join(&file.vocab[slot.index()])));
        let vocabularies = [s?, v?, o?];
        config.validate(vocabularies.each_ref().map(Vocabulary::len))?;
        let mut banks: [Option<[ClassifierBank; 3]>; 3] = [None, None, None];
        for &level in &file.levels {
            let mut loaded = Vec::with_capacity(3);
            for slot in Slot::ALL {
                let bank = ClassifierBank::load(&dir.join(bank_file(level, slot)))?;
                if bank.slot != slot || bank.classes() != vocabularies[slot.index()].len() {
                    return Err(Error::Data(format!(
                        "{}: bank does not match the {slot} vocabulary",
                        bank_file(level, slot)
                    )));
                }
                loaded.push(bank);
            }
            banks[level.index()] = Some(loaded.try_into().expect("three slots"));
        }
        if banks[2].is_some() && banks[1].is_none() {
            return Err(Error::Data("L3 banks need L2 banks".into()));
        }
        Ok(StoryModel {
            config,
            dim: file.d,
            vocabularies,
            banks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_for_eight_frames() {
        assert_eq!(temporal_segments(8).0, [0..4, 2..6, 4..8]);
    }

    #[test]
    fn degenerate_clips() {
        assert_eq!(temporal_segments(1).0, [0..1, 0..1, 0..1]);
        assert_eq!(temporal_segments(2).0, [0..2, 0..2, 0..2]);
    }

    #[test]
    fn segments_cover_every_length() {
        for t in 1..=1000 {
            let segs = temporal_segments(t).0;
            let mut covered = vec![false; t];
            for r in &segs {
                assert!(!r.is_empty() && r.end <= t, "T={t}: {segs:?}");
                for i in r.clone() {
                    covered[i] = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "T={t}: {segs:?}");
        }
    }

    #[test]
    fn level_parsing() {
        assert_eq!("L3".parse::<Level>().unwrap(), Level::L3);
        assert!("l4".parse::<Level>().is_err());
    }

    #[test]
    fn config_rejects_large_c() {
        let cfg = StoryConfig { c: 4, ..StoryConfig::default() };
        assert!(cfg.validate([3, 9, 3]).is_err());
        assert!(StoryConfig { c: 3, ..cfg }.validate([3, 9, 3]).is_ok());
    }
}

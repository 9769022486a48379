//! Unsupervised selection of salient features and frames, and the
//! foreground / foreground-background descriptors built from them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset_io::FeatureSequence;

/// Which pipeline stage a descriptor feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelTag {
    /// Foreground descriptor, length d.
    L1Fg,
    /// Foreground plus background, length 2d.
    L2FgBg,
    /// Sparse top-c level-2 responses, length |S|+|V|+|O|.
    L3Ctx,
    /// Top-c responses per temporal part, length 3(|S|+|V|+|O|).
    L3Temp,
}

impl LevelTag {
    pub fn code(self) -> u64 {
        match self {
            LevelTag::L1Fg => 1,
            LevelTag::L2FgBg => 2,
            LevelTag::L3Ctx => 3,
            LevelTag::L3Temp => 4,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            1 => Some(LevelTag::L1Fg),
            2 => Some(LevelTag::L2FgBg),
            3 => Some(LevelTag::L3Ctx),
            4 => Some(LevelTag::L3Temp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelTag::L1Fg => "L1 - FG",
            LevelTag::L2FgBg => "L2 - FG-BG",
            LevelTag::L3Ctx => "L3 - FG-BG",
            LevelTag::L3Temp => "L3 - Temp.",
        }
    }
}

/// A fixed-length input vector for one classifier level.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub level: LevelTag,
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nonzeros(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Outcome of the two-step feature/frame selection on one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected features, most salient first.
    pub top_features: Vec<usize>,
    /// Selected frames in temporal order.
    pub top_frames: Vec<usize>,
    pub feature_saliency: Vec<f64>,
    pub frame_saliency: Vec<f64>,
}

/// Per-feature mean over all frames.
pub fn feature_saliency(seq: &FeatureSequence) -> Vec<f64> {
    let mut sums = vec![0.0; seq.dim()];
    for t in 0..seq.frames() {
        for (s, &v) in sums.iter_mut().zip(seq.row(t)) {
            *s += v;
        }
    }
    let n = seq.frames() as f64;
    sums.iter_mut().for_each(|s| *s /= n);
    sums
}

/// Indices of the `min(count, len)` largest scores, largest first, ties to
/// the lower index.
fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let by_score = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let count = count.min(scores.len());
    if count < order.len() && count > 0 {
        order.select_nth_unstable_by(count - 1, by_score);
        order.truncate(count);
    }
    order.sort_unstable_by(by_score);
    order.truncate(count);
    order
}

/// The `min(k, d)` most salient features, in decreasing saliency order.
pub fn select_top_features(saliency: &[f64], k: usize) -> Vec<usize> {
    top_indices(saliency, k)
}

/// Per-frame mean over the selected features.
pub fn frame_saliency(seq: &FeatureSequence, top_features: &[usize]) -> Vec<f64> {
    assert!(!top_features.is_empty(), "frame saliency needs at least one feature");
    let n = top_features.len() as f64;
    (0..seq.frames())
        .map(|t| {
            let row = seq.row(t);
            top_features.iter().map(|&j| row[j]).sum::<f64>() / n
        })
        .collect()
}

/// The `min(q, T)` most salient frames, returned in ascending frame order.
pub fn select_top_frames(frame_saliency: &[f64], q: usize) -> Vec<usize> {
    let mut frames = top_indices(frame_saliency, q);
    frames.sort_unstable();
    frames
}

/// Runs both selection steps.
pub fn select(seq: &FeatureSequence, k: usize, q: usize) -> SelectionResult {
    let feature_saliency = feature_saliency(seq);
    let top_features = select_top_features(&feature_saliency, k.max(1));
    let frame_saliency = frame_saliency(seq, &top_features);
    let top_frames = select_top_frames(&frame_saliency, q.max(1));
    SelectionResult {
        top_features,
        top_frames,
        feature_saliency,
        frame_saliency,
    }
}

/// Mean of the selected features over the selected frames, exactly zero
/// for every other feature.
pub fn foreground_from_selection(seq: &FeatureSequence, sel: &SelectionResult) -> Vec<f64> {
    let mut out = vec![0.0; seq.dim()];
    if sel.top_frames.is_empty() {
        return out;
    }
    let n = sel.top_frames.len() as f64;
    for &j in &sel.top_features {
        let sum: f64 = sel.top_frames.iter().map(|&t| seq.get(t, j)).sum();
        out[j] = sum / n;
    }
    out
}

pub fn foreground_descriptor(seq: &FeatureSequence, k: usize, q: usize) -> Descriptor {
    let sel = select(seq, k, q);
    Descriptor {
        level: LevelTag::L1Fg,
        values: foreground_from_selection(seq, &sel),
    }
}

/// All-feature mean over the frames not in `selected_frames`; zero when no
/// frame remains.
pub fn background_descriptor(seq: &FeatureSequence, selected_frames: &[usize]) -> Vec<f64> {
    let mut excluded = vec![false; seq.frames()];
    for &t in selected_frames {
        excluded[t] = true;
    }
    let mut sums = vec![0.0; seq.dim()];
    let mut count = 0usize;
    for t in (0..seq.frames()).filter(|&t| !excluded[t]) {
        for (s, &v) in sums.iter_mut().zip(seq.row(t)) {
            *s += v;
        }
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        sums.iter_mut().for_each(|s| *s /= n);
    }
    sums
}

/// `[foreground || background]`, length 2d.
pub fn fg_bg_descriptor(seq: &FeatureSequence, k: usize, q: usize) -> Descriptor {
    let sel = select(seq, k, q);
    fg_bg_from_selection(seq, &sel)
}

pub fn fg_bg_from_selection(seq: &FeatureSequence, sel: &SelectionResult) -> Descriptor {
    let mut values = foreground_from_selection(seq, sel);
    values.extend(background_descriptor(seq, &sel.top_frames));
    Descriptor {
        level: LevelTag::L2FgBg,
        values,
    }
}

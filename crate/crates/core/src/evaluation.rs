//! Scoring of predicted triplets: exact-match accuracy and Wu-Palmer
//! similarity, each against the annotators' most common word or against
//! any annotated word.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset_io::{most_common_word, AnnotationSet, Slot, Taxonomy, Triplet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Compare against the most common annotated word.
    Most,
    /// Compare against every annotated word.
    Any,
}

pub fn binary_score(pred: &str, annotations: &AnnotationSet, slot: Slot, mode: Mode) -> f64 {
    let hit = match mode {
        Mode::Most => pred == most_common_word(annotations, slot),
        Mode::Any => annotations.triplets.iter().any(|t| t.get(slot) == pred),
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Wu-Palmer similarity `2 depth(lca) / (depth(a) + depth(b))`.
///
/// Identical strings score 1 even when absent from the taxonomy; any other
/// pair with a missing word scores 0.
pub fn wup(taxonomy: &Taxonomy, a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (Some(da), Some(db), Some(lca)) = (taxonomy.depth(a), taxonomy.depth(b), taxonomy.lca(a, b)) else {
        return 0.0;
    };
    let dl = taxonomy.depth(lca).expect("lca is a taxonomy node");
    2.0 * dl as f64 / (da + db) as f64
}

fn wup_opt(taxonomy: Option<&Taxonomy>, a: &str, b: &str) -> f64 {
    match taxonomy {
        Some(t) => wup(t, a, b),
        None => f64::from(u8::from(a == b)),
    }
}

pub fn wup_score(taxonomy: &Taxonomy, pred: &str, annotations: &AnnotationSet, slot: Slot, mode: Mode) -> f64 {
    wup_score_opt(Some(taxonomy), pred, annotations, slot, mode)
}

fn wup_score_opt(
    taxonomy: Option<&Taxonomy>,
    pred: &str,
    annotations: &AnnotationSet,
    slot: Slot,
    mode: Mode,
) -> f64 {
    match mode {
        Mode::Most => wup_opt(taxonomy, pred, most_common_word(annotations, slot)),
        Mode::Any => annotations
            .words(slot)
            .into_iter()
            .map(|w| wup_opt(taxonomy, pred, w))
            .fold(0.0, f64::max),
    }
}

/// Mean scores of one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub binary_most: f64,
    pub binary_any: f64,
    pub wup_most: f64,
    pub wup_any: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evaluated: usize,
    pub skipped: usize,
    pub subject: SlotScores,
    pub verb: SlotScores,
    pub object: SlotScores,
    /// Free-form echo of the run configuration.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn slot(&self, slot: Slot) -> &SlotScores {
        match slot {
            Slot::Subject => &self.subject,
            Slot::Verb => &self.verb,
            Slot::Object => &self.object,
        }
    }

    fn slot_mut(&mut self, slot: Slot) -> &mut SlotScores {
        match slot {
            Slot::Subject => &mut self.subject,
            Slot::Verb => &mut self.verb,
            Slot::Object => &mut self.object,
        }
    }

    /// Two rows (exact match and WUP) in `most(any)` percent layout.
    pub fn render_table(&self, label: &str) -> String {
        let cell = |most: f64, any: f64| format!("{:.2}({:.2})", 100.0 * most, 100.0 * any);
        let mut out = String::new();
        let _ = writeln!(out, "{:<24}{:<16}{:<16}{:<16}", "Method", "S%", "V%", "O%");
        for (name, pick) in [
            ("binary", (|s: &SlotScores| (s.binary_most, s.binary_any)) as fn(&SlotScores) -> (f64, f64)),
            ("WUP", |s: &SlotScores| (s.wup_most, s.wup_any)),
        ] {
            let cells: Vec<String> = Slot::ALL
                .iter()
                .map(|&slot| {
                    let (m, a) = pick(self.slot(slot));
                    cell(m, a)
                })
                .collect();
            let _ = writeln!(
                out,
                "{:<24}{:<16}{:<16}{:<16}",
                format!("{label} {name}"),
                cells[0],
                cells[1],
                cells[2]
            );
        }
        let _ = writeln!(out, "evaluated: {}  skipped: {}", self.evaluated, self.skipped);
        out
    }
}

/// One predicted triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl Prediction {
    pub fn new(video_id: impl Into<String>, t: Triplet) -> Self {
        Prediction {
            video_id: video_id.into(),
            subject: t.subject,
            verb: t.verb,
            object: t.object,
        }
    }

    pub fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Subject => &self.subject,
            Slot::Verb => &self.verb,
            Slot::Object => &self.object,
        }
    }
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_predictions(predictions: &[Prediction], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Averages all twelve cells over the predicted videos that have
/// annotations; predicted videos without annotations are counted as
/// skipped. Predictions for ids outside `known_videos` are an error.
pub fn evaluate(
    predictions: &[Prediction],
    annotations: &BTreeMap<String, AnnotationSet>,
    taxonomy: Option<&Taxonomy>,
    known_videos: &BTreeSet<String>,
) -> Result<EvalReport> {
    let unknown: Vec<&str> = predictions
        .iter()
        .map(|p| p.video_id.as_str())
        .filter(|id| !known_videos.contains(*id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Data(format!("predictions for unknown videos: {}", unknown.join(", "))));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = predictions.iter().find(|p| !seen.insert(p.video_id.as_str())) {
        return Err(Error::Data(format!("duplicate prediction for video {:?}", dup.video_id)));
    }

    let mut report = EvalReport {
        evaluated: 0,
        skipped: 0,
        subject: SlotScores::default(),
        verb: SlotScores::default(),
        object: SlotScores::default(),
        config: serde_json::Value::Null,
    };
    for p in predictions {
        let Some(ann) = annotations.get(&p.video_id) else {
            report.skipped += 1;
            continue;
        };
        report.evaluated += 1;
        for slot in Slot::ALL {
            let pred = p.get(slot);
            let s = report.slot_mut(slot);
            s.binary_most += binary_score(pred, ann, slot, Mode::Most);
            s.binary_any += binary_score(pred, ann, slot, Mode::Any);
            s.wup_most += wup_score_opt(taxonomy, pred, ann, slot, Mode::Most);
            s.wup_any += wup_score_opt(taxonomy, pred, ann, slot, Mode::Any);
        }
    }
    if report.evaluated > 0 {
        let n = report.evaluated as f64;
        for slot in Slot::ALL {
            let s = report.slot_mut(slot);
            s.binary_most /= n;
            s.binary_any /= n;
            s.wup_most /= n;
            s.wup_any /= n;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Taxonomy {
        Taxonomy::from_pairs(&[("animal", "root"), ("dog", "animal"), ("cat", "animal")]).unwrap()
    }

    fn ann(id: &str, triplets: &[(&str, &str, &str)]) -> AnnotationSet {
        AnnotationSet {
            video_id: id.into(),
            triplets: triplets.iter().map(|&(s, v, o)| Triplet::new(s, v, o)).collect(),
        }
    }

    #[test]
    fn binary_modes() {
        let a = ann("v", &[("m", "play", "b"), ("m", "play", "b"), ("m", "ride", "b")]);
        assert_eq!(binary_score("play", &a, Slot::Verb, Mode::Most), 1.0);
        assert_eq!(binary_score("ride", &a, Slot::Verb, Mode::Most), 0.0);
        assert_eq!(binary_score("ride", &a, Slot::Verb, Mode::Any), 1.0);
        assert_eq!(binary_score("walk", &a, Slot::Verb, Mode::Any), 0.0);
    }

    #[test]
    fn wup_hand_cases() {
        let t = toy();
        assert_eq!(wup(&t, "dog", "dog"), 1.0);
        assert_eq!(wup(&t, "dog", "cat"), 2.0 * 2.0 / 6.0);
        assert_eq!(wup(&t, "dog", "unknown_word"), 0.0);
        assert_eq!(wup(&t, "unknown_word", "unknown_word"), 1.0);
        // two depth-2 siblings under the root
        let t = Taxonomy::from_pairs(&[("a", "r"), ("b", "r")]).unwrap();
        assert_eq!(wup(&t, "a", "b"), 0.5);
    }

    #[test]
    fn wup_score_modes() {
        let t = toy();
        let a = ann("v", &[("dog", "x", "y")]);
        assert_eq!(wup_score(&t, "dog", &a, Slot::Subject, Mode::Most), 1.0);
        assert_eq!(wup_score(&t, "dog", &a, Slot::Subject, Mode::Any), 1.0);
        assert_eq!(wup_score(&t, "cat", &a, Slot::Subject, Mode::Most), 2.0 / 3.0);
    }

    #[test]
    fn evaluate_means_and_skips() {
        let mut anns = BTreeMap::new();
        anns.insert("a".to_string(), ann("a", &[("dog", "run", "ball")]));
        anns.insert("b".to_string(), ann("b", &[("cat", "run", "ball")]));
        let known: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let preds = vec![
            Prediction::new("a", Triplet::new("dog", "run", "ball")),
            Prediction::new("b", Triplet::new("dog", "run", "ball")),
            Prediction::new("c", Triplet::new("dog", "run", "ball")),
        ];
        let r = evaluate(&preds, &anns, Some(&toy()), &known).unwrap();
        assert_eq!((r.evaluated, r.skipped), (2, 1));
        assert_eq!(r.subject.binary_most, 0.5);
        assert!((r.subject.wup_most - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(r.verb.binary_any, 1.0);

        let bad = vec![Prediction::new("zzz", Triplet::new("dog", "run", "ball"))];
        let err = evaluate(&bad, &anns, None, &known).unwrap_err().to_string();
        assert!(err.contains("zzz"), "{err}");
    }

    #[test]
    fn table_layout() {
        let s = SlotScores { binary_most: 0.7496, binary_any: 0.8618, wup_most: 1.0, wup_any: 1.0 };
        let r = EvalReport {
            evaluated: 1,
            skipped: 0,
            subject: s,
            verb: s,
            object: s,
            config: serde_json::Value::Null,
        };
        let table = r.render_table("L1 - FG");
        assert!(table.contains("74.96(86.18)"), "{table}");
        assert!(table.contains("100.00(100.00)"), "{table}");
    }
}

//! On-disk artifacts: manifest, feature matrices, annotations, vocabularies
//! and the word taxonomy.
//!
//! A dataset directory holds:
//!
//! * `manifest.jsonl`: a `{"d": N}` header line, then one
//!   `{"video_id", "split", "features", "annotations"}` object per line.
//! * `annotations.jsonl`: `{"video_id", "triplets": [[s, v, o], ...]}` per line.
//! * `taxonomy.tsv`: `child<TAB>parent` pairs.
//! * `vocab_subject.txt`, `vocab_verb.txt`, `vocab_object.txt` (optional):
//!   one word per line. When absent the vocabulary is the sorted set of
//!   annotated words.
//!
//! Feature matrices are stored either as `.bin` (little-endian u64 magic,
//! u64 T, u64 d, then T*d f64 row-major) or as `.csv` (one frame per line).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic number at the start of every binary feature file.
pub const FEATURE_MAGIC: u64 = u64::from_le_bytes(*b"SVOFEAT\x01");

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const TAXONOMY_FILE: &str = "taxonomy.tsv";

/// One of the three sentence slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Subject,
    Verb,
    Object,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Subject, Slot::Verb, Slot::Object];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Subject => "subject",
            Slot::Verb => "verb",
            Slot::Object => "object",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Slot::Subject => 0,
            Slot::Verb => 1,
            Slot::Object => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Slot> {
        Slot::ALL.get(i).copied()
    }

    pub fn vocab_file_name(self) -> String {
        format!("vocab_{}.txt", self.name())
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A (subject, verb, object) word triplet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl Triplet {
    pub fn new(subject: impl Into<String>, verb: impl Into<String>, object: impl Into<String>) -> Self {
        Triplet {
            subject: subject.into(),
            verb: verb.into(),
            object: object.into(),
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

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.verb, self.object)
    }
}

/// Per-frame feature activations of one video, stored row-major (T x d).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    /// Builds a sequence, checking shape, finiteness and (unless allowed)
    /// non-negativity.
    pub fn new(
        video_id: impl Into<String>,
        frames: usize,
        dim: usize,
        data: Vec<f64>,
        allow_negative: bool,
    ) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Data(format!(
                "feature matrix must be at least 1x1, got {frames}x{dim}"
            )));
        }
        if data.len() != frames * dim {
            return Err(Error::Data(format!(
                "feature matrix {frames}x{dim} needs {} values, got {}",
                frames * dim,
                data.len()
            )));
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {v} at row {}, column {}",
                    i / dim + 1,
                    i % dim + 1
                )));
            }
            if v < 0.0 && !allow_negative {
                return Err(Error::Data(format!(
                    "negative value {v} at row {}, column {}",
                    i / dim + 1,
                    i % dim + 1
                )));
            }
        }
        Ok(FeatureSequence {
            video_id: video_id.into(),
            frames,
            dim,
            data,
        })
    }

    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Data(format!(
                "row {} has {} values, expected {dim}",
                bad + 1,
                rows[bad].len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        FeatureSequence::new(video_id, rows.len(), dim, data, false)
    }

    /// Number of frames (T).
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of feature channels (d).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.data[t * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies a contiguous frame range into a new sequence.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> FeatureSequence {
        assert!(range.start < range.end && range.end <= self.frames);
        FeatureSequence {
            video_id: self.video_id.clone(),
            frames: range.len(),
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }
}

fn read_u64(reader: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads only the shape of a feature file.
pub fn peek_feature_shape(path: &Path) -> Result<(usize, usize)> {
    if is_csv(path) {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = 0;
        let mut dim = None;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if dim.is_none() {
                dim = Some(line.split(',').count());
            }
            rows += 1;
        }
        return Ok((rows, dim.unwrap_or(0)));
    }
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u64(&mut file, path)?;
    if magic != FEATURE_MAGIC {
        return Err(Error::parse(path, 0, "bad magic number in feature file"));
    }
    let t = read_u64(&mut file, path)? as usize;
    let d = read_u64(&mut file, path)? as usize;
    Ok((t, d))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a feature matrix; the format is chosen by extension (`.csv` or binary).
///
/// The video id defaults to the file stem; dataset loading overrides it.
pub fn load_features(
    path: &Path,
    expected_dim: Option<usize>,
    allow_negative: bool,
) -> Result<FeatureSequence> {
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seq = if is_csv(path) {
        load_features_csv(path, &video_id, allow_negative)?
    } else {
        load_features_bin(path, &video_id, allow_negative)?
    };
    if let Some(d) = expected_dim {
        if seq.dim() != d {
            return Err(Error::Data(format!(
                "{}: feature dimension {} does not match manifest d={d}",
                path.display(),
                seq.dim()
            )));
        }
    }
    Ok(seq)
}

fn load_features_bin(path: &Path, video_id: &str, allow_negative: bool) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 {
        return Err(Error::parse(path, 0, "truncated feature header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    if word(0) != FEATURE_MAGIC {
        return Err(Error::parse(path, 0, "bad magic number in feature file"));
    }
    let frames = word(1) as usize;
    let dim = word(2) as usize;
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| Error::parse(path, 0, "feature shape overflows"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            0,
            format!(
                "feature payload is {} bytes, header {frames}x{dim} needs {}",
                bytes.len() - 24,
                expected - 24
            ),
        ));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSequence::new(video_id, frames, dim, data, allow_negative)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_features_csv(path: &Path, video_id: &str, allow_negative: bool) -> Result<FeatureSequence> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut dim = None;
    let mut frames = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, lineno + 1, format!("column {}: non-numeric cell {cell:?}", col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("column {}: non-finite value {cell}", col + 1),
                ));
            }
            if v < 0.0 && !allow_negative {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("column {}: negative value {cell}", col + 1),
                ));
            }
            data.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("row has {count} columns, expected {d}"),
                ))
            }
            _ => {}
        }
        frames += 1;
    }
    FeatureSequence::new(video_id, frames, dim.unwrap_or(0), data, allow_negative)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_features_bin(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&FEATURE_MAGIC.to_le_bytes())?;
    put(&(seq.frames() as u64).to_le_bytes())?;
    put(&(seq.dim() as u64).to_le_bytes())?;
    for v in seq.as_slice() {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV form. `f64`'s `Display` is shortest-round-trip, so
/// reloading reproduces every value exactly.
pub fn write_features_csv(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in 0..seq.frames() {
        let line = seq
            .row(t)
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_features(seq: &FeatureSequence, path: &Path) -> Result<()> {
    if is_csv(path) {
        write_features_csv(seq, path)
    } else {
        write_features_bin(seq, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    /// Path as written in the manifest (relative to the manifest directory
    /// unless absolute).
    pub features: PathBuf,
    /// Resolved path used for loading.
    pub features_path: PathBuf,
    /// `None` when the manifest line omits the flag.
    pub annotated: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dim: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.video_id.clone()).collect()
    }
}

#[derive(Deserialize)]
struct ManifestHeader {
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    video_id: String,
    split: Split,
    features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<bool>,
}

/// Parses a JSON-lines manifest and stat-checks every feature file's shape.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim = None;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some(d) = dim else {
            let header: ManifestHeader = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, lineno, format!("expected {{\"d\": N}} header: {e}")))?;
            if header.d == 0 {
                return Err(Error::parse(path, lineno, "d must be positive"));
            }
            dim = Some(header.d);
            continue;
        };
        let entry: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if !seen.insert(entry.video_id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate video_id {:?}", entry.video_id),
            ));
        }
        let features_path = if entry.features.is_absolute() {
            entry.features.clone()
        } else {
            base.join(&entry.features)
        };
        if !features_path.is_file() {
            return Err(Error::parse(
                path,
                lineno,
                format!("missing feature file {}", features_path.display()),
            ));
        }
        let (frames, cols) = peek_feature_shape(&features_path)?;
        if cols != d || frames == 0 {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "{} has shape {frames}x{cols}, manifest declares d={d}",
                    features_path.display()
                ),
            ));
        }
        entries.push(ManifestEntry {
            video_id: entry.video_id,
            split: entry.split,
            features: entry.features,
            features_path,
            annotated: entry.annotations,
        });
    }
    let dim = dim.ok_or_else(|| Error::parse(path, 1, "empty manifest"))?;
    Ok(DatasetManifest { dim, entries })
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = format!("{{\"d\":{}}}\n", manifest.dim);
    for e in &manifest.entries {
        let line = ManifestLine {
            video_id: e.video_id.clone(),
            split: e.split,
            features: e.features.clone(),
            annotations: e.annotated,
        };
        out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// All annotator triplets for one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub video_id: String,
    pub triplets: Vec<Triplet>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    video_id: String,
    triplets: Vec<[String; 3]>,
}

impl AnnotationSet {
    /// Distinct words used by annotators in `slot`.
    pub fn words(&self, slot: Slot) -> BTreeSet<&str> {
        self.triplets.iter().map(|t| t.get(slot)).collect()
    }
}

pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, AnnotationSet>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AnnotationLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if parsed.triplets.is_empty() {
            return Err(Error::parse(
                path,
                lineno,
                format!("video {:?} has no triplets", parsed.video_id),
            ));
        }
        let set = AnnotationSet {
            video_id: parsed.video_id.clone(),
            triplets: parsed
                .triplets
                .into_iter()
                .map(|[s, v, o]| Triplet::new(s, v, o))
                .collect(),
        };
        if out.insert(parsed.video_id.clone(), set).is_some() {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate annotations for {:?}", parsed.video_id),
            ));
        }
    }
    Ok(out)
}

pub fn write_annotations<'a>(
    sets: impl IntoIterator<Item = &'a AnnotationSet>,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    for set in sets {
        let line = AnnotationLine {
            video_id: set.video_id.clone(),
            triplets: set
                .triplets
                .iter()
                .map(|t| [t.subject.clone(), t.verb.clone(), t.object.clone()])
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("annotation line serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The word most used by annotators in `slot`; ties go to the
/// lexicographically smallest word.
///
/// Panics if the set has no triplets.
pub fn most_common_word(annotations: &AnnotationSet, slot: Slot) -> &str {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &annotations.triplets {
        *counts.entry(t.get(slot)).or_default() += 1;
    }
    // BTreeMap iterates in lexicographic order, so the first maximum wins.
    let mut best: Option<(&str, usize)> = None;
    for (word, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((word, count));
        }
    }
    best.expect("annotation set has at least one triplet").0
}

/// Ordered class labels of one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub slot: Slot,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(slot: Slot, words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Data(format!("{slot} vocabulary is empty")));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Data(format!("{slot} vocabulary: invalid word {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("{slot} vocabulary: duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary { slot, words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn load(slot: Slot, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Vocabulary::new(slot, words).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.words.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Rooted tree over words and internal concepts.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: usize,
}

impl Taxonomy {
    /// Builds the tree from (child, parent) pairs. Repeating an identical
    /// pair is harmless; a child with two distinct parents is not.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        let mut nodes: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut intern = |name: &str, nodes: &mut Vec<String>| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                nodes.push(name.to_string());
                nodes.len() - 1
            })
        };
        let mut parent_of: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
        for (child, parent) in pairs {
            let c = intern(child.as_ref(), &mut nodes);
            let p = intern(parent.as_ref(), &mut nodes);
            parent_of.push((c, p));
        }
        let mut parent: Vec<Option<usize>> = vec![None; nodes.len()];
        for &(c, p) in &parent_of {
            match parent[c] {
                Some(existing) if existing != p => {
                    return Err(Error::Data(format!(
                        "taxonomy node {:?} has two parents: {:?} and {:?}",
                        nodes[c], nodes[existing], nodes[p]
                    )))
                }
                _ => parent[c] = Some(p),
            }
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| parent[i].is_none()).collect();
        // Cycle check first: a pure cycle has no root at all.
        let mut depth = vec![0usize; nodes.len()];
        for start in 0..nodes.len() {
            if depth[start] != 0 {
                continue;
            }
            let mut path = Vec::new();
            let mut on_path = BTreeSet::new();
            let mut cur = start;
            let base = loop {
                if depth[cur] != 0 {
                    break depth[cur];
                }
                if !on_path.insert(cur) {
                    return Err(Error::Data(format!(
                        "taxonomy contains a cycle through {:?}",
                        nodes[cur]
                    )));
                }
                path.push(cur);
                match parent[cur] {
                    Some(p) => cur = p,
                    None => break 0,
                }
            };
            for (offset, &node) in path.iter().rev().enumerate() {
                depth[node] = base + offset + 1;
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Data("taxonomy has no root".into())),
            many => {
                let names: Vec<&str> = many.iter().map(|&i| nodes[i].as_str()).collect();
                return Err(Error::Data(format!("taxonomy has multiple roots: {names:?}")));
            }
        };
        Ok(Taxonomy {
            nodes,
            index,
            parent,
            depth,
            root,
        })
    }

    pub fn root(&self) -> &str {
        &self.nodes[self.root]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node-counting depth, with the root at depth 1.
    pub fn depth(&self, word: &str) -> Option<usize> {
        self.index.get(word).map(|&i| self.depth[i])
    }

    pub fn parent(&self, word: &str) -> Option<&str> {
        let i = *self.index.get(word)?;
        self.parent[i].map(|p| self.nodes[p].as_str())
    }

    /// Lowest common ancestor of two nodes (a node is its own ancestor).
    pub fn lca(&self, a: &str, b: &str) -> Option<&str> {
        let mut x = *self.index.get(a)?;
        let mut y = *self.index.get(b)?;
        while self.depth[x] > self.depth[y] {
            x = self.parent[x]?;
        }
        while self.depth[y] > self.depth[x] {
            y = self.parent[y]?;
        }
        while x != y {
            x = self.parent[x]?;
            y = self.parent[y]?;
        }
        Some(&self.nodes[x])
    }

    /// (child, parent) pairs in insertion order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (self.nodes[c].as_str(), self.nodes[p].as_str())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(p), None) if !c.trim().is_empty() && !p.trim().is_empty() => {
                    pairs.push((c.trim().to_string(), p.trim().to_string()))
                }
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        "expected \"child<TAB>parent\"",
                    ))
                }
            }
        }
        Taxonomy::from_pairs(&pairs).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (c, p) in self.edges() {
            out.push_str(c);
            out.push('\t');
            out.push_str(p);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// A fully loaded dataset directory (features are read lazily).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub annotations: BTreeMap<String, AnnotationSet>,
    pub vocabularies: [Vocabulary; 3],
    pub taxonomy: Option<Taxonomy>,
    pub allow_negative: bool,
}

impl Dataset {
    pub fn load(dir: &Path, allow_negative: bool) -> Result<Self> {
        let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
        let ann_path = dir.join(ANNOTATIONS_FILE);
        let mut annotations = if ann_path.is_file() {
            load_annotations(&ann_path)?
        } else {
            BTreeMap::new()
        };
        let ids = manifest.ids();
        if let Some(stray) = annotations.keys().find(|k| !ids.contains(*k)) {
            return Err(Error::Data(format!(
                "annotations reference unknown video {stray:?}"
            )));
        }
        for e in &manifest.entries {
            match e.annotated {
                Some(true) if !annotations.contains_key(&e.video_id) => {
                    return Err(Error::Data(format!(
                        "manifest marks {:?} as annotated but no annotations were found",
                        e.video_id
                    )))
                }
                Some(false) => {
                    annotations.remove(&e.video_id);
                }
                _ => {}
            }
        }
        let vocabularies = Slot::ALL.map(|slot| -> Result<Vocabulary> {
            let path = dir.join(slot.vocab_file_name());
            if path.is_file() {
                Vocabulary::load(slot, &path)
            } else {
                let words: BTreeSet<&str> = annotations
                    .values()
                    .flat_map(|a| a.triplets.iter().map(move |t| t.get(slot)))
                    .collect();
                Vocabulary::new(slot, words.into_iter().map(String::from).collect())
            }
        });
        let [s, v, o] = vocabularies;
        let vocabularies = [s?, v?, o?];
        for set in annotations.values() {
            for t in &set.triplets {
                for slot in Slot::ALL {
                    if vocabularies[slot.index()].lookup(t.get(slot)).is_none() {
                        return Err(Error::Data(format!(
                            "video {:?}: {slot} {:?} is not in the vocabulary",
                            set.video_id,
                            t.get(slot)
                        )));
                    }
                }
            }
        }
        let tax_path = dir.join(TAXONOMY_FILE);
        let taxonomy = if tax_path.is_file() {
            Some(Taxonomy::load(&tax_path)?)
        } else {
            None
        };
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
            annotations,
            vocabularies,
            taxonomy,
            allow_negative,
        })
    }

    pub fn vocabulary(&self, slot: Slot) -> &Vocabulary {
        &self.vocabularies[slot.index()]
    }

    pub fn features(&self, entry: &ManifestEntry) -> Result<FeatureSequence> {
        let mut seq = load_features(&entry.features_path, Some(self.manifest.dim), self.allow_negative)?;
        seq.video_id = entry.video_id.clone();
        Ok(seq)
    }
}

//! One-vs-rest banks of linear models with per-dimension standardization.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::solver::{dot, train_binary, LinearModel, TrainConfig};
use crate::dataset_io::{Slot, Vocabulary};
use crate::error::{Error, Result};
use crate::saliency::{Descriptor, LevelTag};

const BANK_MAGIC: u64 = u64::from_le_bytes(*b"SVOBANK\x01");

/// Per-dimension `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each column; columns with
    /// no spread get scale 1.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(&s, &m)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// One linear model per vocabulary class for one slot at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    pub slot: Slot,
    pub level: LevelTag,
    standardizer: Standardizer,
    models: Vec<LinearModel>,
}

impl ClassifierBank {
    pub fn from_parts(
        slot: Slot,
        level: LevelTag,
        standardizer: Standardizer,
        models: Vec<LinearModel>,
    ) -> Result<Self> {
        let dim = standardizer.dim();
        if dim == 0 || models.is_empty() {
            return Err(Error::Data("classifier bank needs a positive dimension and at least one class".into()));
        }
        if standardizer.scale.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: standardizer.scale.len(),
            });
        }
        if standardizer.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Data("standardization scales must be positive".into()));
        }
        for m in &models {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: m.dim(),
                });
            }
            if !m.bias.is_finite() || m.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Data("model parameters must be finite".into()));
            }
        }
        Ok(ClassifierBank {
            slot,
            level,
            standardizer,
            models,
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn classes(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[LinearModel] {
        &self.models
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// `w_c . standardize(x) + b_c` for every class.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let z = self.standardizer.apply(x);
        Ok(self.models.iter().map(|m| dot(&m.weights, &z) + m.bias).collect())
    }

    /// As [`Self::decision_values`], also rejecting descriptors built for a
    /// different level.
    pub fn decision_values_for(&self, x: &Descriptor) -> Result<Vec<f64>> {
        if x.level != self.level {
            return Err(Error::Data(format!(
                "{} descriptor fed to a {} bank",
                x.level.name(),
                self.level.name()
            )));
        }
        self.decision_values(&x.values)
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.decision_values(x)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * (5 + (self.dim() + 1) * (self.classes() + 2)));
        for word in [
            BANK_MAGIC,
            self.slot.index() as u64,
            self.level.code(),
            self.dim() as u64,
            self.classes() as u64,
        ] {
            buf.extend_from_slice(&word.to_le_bytes());
        }
        let mut put = |vals: &[f64]| {
            for v in vals {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&self.standardizer.mean);
        put(&self.standardizer.scale);
        for m in &self.models {
            put(&m.weights);
            put(&[m.bias]);
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        if bytes.len() < 40 || bytes.len() % 8 != 0 {
            return Err(bad("truncated classifier bank"));
        }
        let words: Vec<[u8; 8]> = bytes.chunks_exact(8).map(|c| c.try_into().unwrap()).collect();
        let int = |i: usize| u64::from_le_bytes(words[i]);
        if int(0) != BANK_MAGIC {
            return Err(bad("bad magic number in classifier bank"));
        }
        let slot = Slot::from_index(int(1) as usize).ok_or_else(|| bad("unknown slot code"))?;
        let level = LevelTag::from_code(int(2)).ok_or_else(|| bad("unknown level code"))?;
        let dim = int(3) as usize;
        let classes = int(4) as usize;
        let expected = dim
            .checked_add(1)
            .and_then(|v| v.checked_mul(classes))
            .and_then(|v| v.checked_add(2 * dim + 5));
        if expected != Some(words.len()) {
            return Err(bad("classifier bank size does not match its header"));
        }
        let mut vals = words[5..].iter().map(|w| f64::from_le_bytes(*w));
        let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
        let mean = take(dim);
        let scale = take(dim);
        let models = (0..classes)
            .map(|_| {
                let weights = take(dim);
                let bias = take(1)[0];
                LinearModel { weights, bias }
            })
            .collect();
        ClassifierBank::from_parts(slot, level, Standardizer { mean, scale }, models)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains one binary model per class of `vocab` (that class +1, the rest -1)
/// on standardized inputs.
///
/// A class with no positive example gets the constant model (0, -1); a
/// class that covers every example gets (0, +1).
pub fn train_ovr<R: AsRef<[f64]> + Sync>(
    x: &[R],
    labels: &[usize],
    vocab: &Vocabulary,
    level: LevelTag,
    cfg: &TrainConfig,
) -> Result<ClassifierBank> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: labels.len(),
        });
    }
    let dim = x[0].as_ref().len();
    if let Some(r) = x.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: r.as_ref().len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= vocab.len()) {
        return Err(Error::Data(format!(
            "class index {bad} out of range for {} vocabulary of size {}",
            vocab.slot,
            vocab.len()
        )));
    }
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r.as_ref())).collect();
    let models = (0..vocab.len())
        .into_par_iter()
        .map(|class| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect();
            let positives = y.iter().filter(|&&v| v > 0.0).count();
            if positives == 0 {
                Ok(LinearModel::constant(dim, -1.0))
            } else if positives == y.len() {
                Ok(LinearModel::constant(dim, 1.0))
            } else {
                train_binary(&z, &y, cfg)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ClassifierBank::from_parts(vocab.slot, level, standardizer, models)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new(Slot::Subject, (0..n).map(|i| format!("w{i}")).collect()).unwrap()
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.1, 0.9, -2.0]), 1);
        assert_eq!(argmax(&[3.0, 3.0, 3.0]), 0);
    }

    #[test]
    fn zero_weights_give_bias() {
        let bank = ClassifierBank::from_parts(
            Slot::Verb,
            LevelTag::L1Fg,
            Standardizer::identity(3),
            vec![LinearModel::constant(3, 0.5), LinearModel::constant(3, -2.0)],
        )
        .unwrap();
        assert_eq!(bank.decision_values(&[4.0, 5.0, 6.0]).unwrap(), vec![0.5, -2.0]);
        assert!(matches!(bank.decision_values(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_class_vocabulary() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 0.0]];
        let bank = train_ovr(&x, &[0, 0, 0], &vocab(1), LevelTag::L1Fg, &TrainConfig::default()).unwrap();
        assert_eq!(bank.classes(), 1);
        for q in [[9.0, -9.0], [0.0, 0.0]] {
            assert_eq!(bank.predict(&q).unwrap(), 0);
        }
    }

    #[test]
    fn absent_class_is_constant_negative() {
        let x = vec![vec![0.0], vec![1.0], vec![5.0], vec![6.0]];
        let bank = train_ovr(&x, &[0, 0, 2, 2], &vocab(3), LevelTag::L1Fg, &TrainConfig::default()).unwrap();
        assert_eq!(bank.models()[1], LinearModel::constant(1, -1.0));
        for q in [-3.0, 0.5, 3.0, 5.5, 10.0] {
            assert_ne!(bank.predict(&[q]).unwrap(), 1);
        }
    }

    #[test]
    fn empty_input_rejected() {
        let x: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(
            train_ovr(&x, &[], &vocab(2), LevelTag::L1Fg, &TrainConfig::default()),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn save_load_is_bit_exact() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.3, (i % 3) as f64, 1.0 / (i + 1) as f64]).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let bank = train_ovr(&x, &labels, &vocab(3), LevelTag::L2FgBg, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bank");
        bank.save(&p).unwrap();
        let back = ClassifierBank::load(&p).unwrap();
        assert_eq!(back, bank);
        let p2 = dir.path().join("c.bank");
        back.save(&p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }
}

//! Domain records shared by every stage of the backend.
//!
//! Tables are keyed by utterance id and backed by ordered maps, so iteration
//! order never depends on the order in which a file listed its lines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::Qmf;

/// Tolerance on the sum of a stored posterior vector.
pub const POSTERIOR_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        })
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "unknown" => Ok(Gender::Unknown),
            other => Err(other.to_string()),
        }
    }
}

/// Metadata for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    /// Seconds, strictly positive.
    pub duration: f64,
    pub gender: Gender,
    /// Source video / recording session.
    pub session_id: String,
    /// Index into the language list of a [`PosteriorTable`].
    pub predicted_language: Option<usize>,
}

impl Utterance {
    pub fn new(
        utt_id: impl Into<String>,
        speaker_id: impl Into<String>,
        duration: f64,
        gender: Gender,
        session_id: impl Into<String>,
    ) -> Self {
        Self {
            utt_id: utt_id.into(),
            speaker_id: speaker_id.into(),
            duration,
            gender,
            session_id: session_id.into(),
            predicted_language: None,
        }
    }
}

/// Fills `predicted_language` from the argmax of each utterance's posterior.
pub fn attach_predicted_languages(
    utterances: &mut [Utterance],
    posteriors: &PosteriorTable,
) -> Result<()> {
    for utt in utterances.iter_mut() {
        let lang = posteriors
            .predicted_language(&utt.utt_id)
            .ok_or_else(|| Error::missing("posterior", &utt.utt_id))?;
        utt.predicted_language = Some(lang);
    }
    Ok(())
}

/// Fixed-dimension vectors keyed by utterance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: Option<usize>,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a vector after checking dimension, finiteness, non-zeroness
    /// and id uniqueness. The parse layer maps these errors onto line numbers.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        use crate::error::ParseErrorKind as K;
        let id = id.into();
        if let Some(dim) = self.dim {
            if vector.len() != dim {
                return Err(Error::parse(
                    0,
                    K::DimensionMismatch {
                        expected: dim,
                        found: vector.len(),
                    },
                ));
            }
        } else if vector.is_empty() {
            return Err(Error::parse(
                0,
                K::DimensionMismatch {
                    expected: 1,
                    found: 0,
                },
            ));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(0, K::NonFinite(bad.to_string())));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(Error::parse(0, K::ZeroVector(id)));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::parse(0, K::DuplicateId(id)));
        }
        self.dim = Some(vector.len());
        self.entries.insert(id, vector);
        Ok(())
    }

    /// Dimension of the stored vectors; an empty table has none.
    pub fn dim(&self) -> Result<usize> {
        self.dim.ok_or(Error::EmptyTable("embedding table"))
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Like [`get`](Self::get) but errors with the missing id.
    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::missing("embedding", id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Language-class posteriors keyed by utterance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorTable {
    languages: Vec<String>,
    entries: BTreeMap<String, Vec<f64>>,
}

impl PosteriorTable {
    pub fn new(languages: Vec<String>) -> Self {
        Self {
            languages,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, probs: Vec<f64>) -> Result<()> {
        use crate::error::ParseErrorKind as K;
        let id = id.into();
        if probs.len() != self.languages.len() {
            return Err(Error::parse(
                0,
                K::DimensionMismatch {
                    expected: self.languages.len(),
                    found: probs.len(),
                },
            ));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
            return Err(Error::parse(0, K::NonFinite(bad.to_string())));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::parse(
                0,
                K::InvalidProbability(format!("entry {bad} outside [0, 1]")),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
            return Err(Error::parse(
                0,
                K::InvalidProbability(format!("sum {sum} differs from 1")),
            ));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::parse(0, K::DuplicateId(id)));
        }
        self.entries.insert(id, probs);
        Ok(())
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::missing("posterior", id))
    }

    /// Argmax of the stored posterior, ties resolved to the lowest index.
    pub fn predicted_language(&self, id: &str) -> Option<usize> {
        self.get(id).map(crate::features::argmax)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
    Unknown,
}

impl Label {
    pub fn is_target(self) -> Option<bool> {
        match self {
            Label::Target => Some(true),
            Label::Nontarget => Some(false),
            Label::Unknown => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "target" => Ok(Label::Target),
            "nontarget" => Ok(Label::Nontarget),
            "unknown" => Ok(Label::Unknown),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Label) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
        }
    }

    /// Both sides refer to the same utterance. Allowed, but usually a mistake.
    pub fn is_self_trial(&self) -> bool {
        self.enroll_id == self.test_id
    }

    pub fn key(&self) -> String {
        format!("{} {}", self.enroll_id, self.test_id)
    }
}

/// A trial together with every score computed for it so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub raw_score: f64,
    pub norm_score: Option<f64>,
    /// Named quality features in insertion order.
    pub qmf: Vec<(Qmf, f64)>,
    pub llr: Option<f64>,
}

impl ScoredTrial {
    pub fn new(trial: Trial, raw_score: f64) -> Self {
        Self {
            trial,
            raw_score,
            norm_score: None,
            qmf: Vec::new(),
            llr: None,
        }
    }

    /// Score fed to calibration: normalized when available unless `use_raw`.
    pub fn calibration_input(&self, use_raw: bool) -> f64 {
        if use_raw {
            self.raw_score
        } else {
            self.norm_score.unwrap_or(self.raw_score)
        }
    }

    /// The most processed score on the record (llr, then normalized, then raw).
    pub fn final_score(&self) -> f64 {
        self.llr.or(self.norm_score).unwrap_or(self.raw_score)
    }

    pub fn feature(&self, name: Qmf) -> Option<f64> {
        self.qmf.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }

    pub fn set_feature(&mut self, name: Qmf, value: f64) {
        match self.qmf.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.qmf.push((name, value)),
        }
    }
}

/// Target flags for a labelled trial list; unlabelled trials are an error.
pub fn target_flags(trials: &[Trial]) -> Result<Vec<bool>> {
    trials
        .iter()
        .enumerate()
        .map(|(index, t)| t.label.is_target().ok_or(Error::UnlabelledTrial { index }))
        .collect()
}

//! Cosine trial scoring and adaptive s-normalization against an imposter
//! cohort of speaker-averaged embeddings.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::data::{EmbeddingTable, ScoredTrial, Trial, Utterance};
use crate::error::{Error, Result};

/// Unit-length copy of `v`.
pub fn unit_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot product of two unit vectors, clamped to [-1, 1].
fn unit_cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// Cosine similarity of two nonzero vectors of equal length.
///
/// Both inputs are normalized first, exactly as [`score_trials`] does, so the
/// two code paths agree bit for bit.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(unit_cosine(&unit_normalize(a)?, &unit_normalize(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SNormConfig {
    /// Number of highest cohort scores kept per side; clamped to cohort size.
    pub top_n: usize,
    pub epsilon_sigma: f64,
}

impl Default for SNormConfig {
    fn default() -> Self {
        Self {
            top_n: 400,
            epsilon_sigma: 1e-12,
        }
    }
}

impl SNormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n < 2 {
            return Err(Error::Config(format!(
                "top_n must be >= 2, got {}",
                self.top_n
            )));
        }
        if !(self.epsilon_sigma > 0.0) {
            return Err(Error::Config("epsilon_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Imposter cohort: one unit vector per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub speakers: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Cosine of `unit` against every cohort vector, in cohort order.
    fn scores_against(&self, unit: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|c| unit_cosine(unit, c)).collect()
    }
}

/// Result of [`build_cohort`]: the cohort plus how many speakers had no
/// usable utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortBuild {
    pub cohort: Cohort,
    pub skipped_speakers: usize,
}

/// Averages each speaker's unit-normalized utterance embeddings and
/// renormalizes the mean. Speakers come out sorted by id.
pub fn build_cohort(embeddings: &EmbeddingTable, metadata: &[Utterance]) -> Result<CohortBuild> {
    let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for utt in metadata {
        by_speaker
            .entry(utt.speaker_id.as_str())
            .or_default()
            .push(utt.utt_id.as_str());
    }
    let mut speakers = Vec::new();
    let mut vectors = Vec::new();
    let mut skipped = 0;
    for (speaker, utts) in by_speaker {
        let mut sum: Option<Vec<f64>> = None;
        for id in utts {
            let Some(v) = embeddings.get(id) else {
                continue;
            };
            let unit = unit_normalize(v)?;
            match sum.as_mut() {
                Some(acc) => acc.iter_mut().zip(&unit).for_each(|(a, u)| *a += u),
                None => sum = Some(unit),
            }
        }
        match sum.map(|s| unit_normalize(&s)) {
            Some(Ok(mean)) => {
                speakers.push(speaker.to_string());
                vectors.push(mean);
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("cohort: skipped {skipped} speakers without usable embeddings");
    }
    Ok(CohortBuild {
        cohort: Cohort { speakers, vectors },
        skipped_speakers: skipped,
    })
}

/// Mean and population standard deviation of the `top_n` largest values.
///
/// Values are sorted descending before accumulation, so the result does not
/// depend on the order of `scores`.
pub fn top_n_stats(scores: &[f64], top_n: usize) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted.truncate(top_n.max(1));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Symmetric adaptive s-norm: the average of the enrollment-side and
/// test-side z-scores, each using the top-N cohort statistics.
pub fn adaptive_s_norm(
    raw: f64,
    enroll_cohort_scores: &[f64],
    test_cohort_scores: &[f64],
    cfg: &SNormConfig,
) -> Result<f64> {
    let (mu_e, sigma_e) = top_n_stats(enroll_cohort_scores, cfg.top_n)?;
    let (mu_t, sigma_t) = top_n_stats(test_cohort_scores, cfg.top_n)?;
    for sigma in [sigma_e, sigma_t] {
        if sigma < cfg.epsilon_sigma {
            return Err(Error::DegenerateCohort {
                sigma,
                epsilon: cfg.epsilon_sigma,
            });
        }
    }
    Ok(0.5 * ((raw - mu_e) / sigma_e + (raw - mu_t) / sigma_t))
}

/// Raw cosine scores only; no cohort involved.
pub fn score_trials_raw(trials: &[Trial], embeddings: &EmbeddingTable) -> Result<Vec<ScoredTrial>> {
    let units = unit_table(trials, embeddings)?;
    Ok(trials
        .par_iter()
        .map(|t| {
            let raw = unit_cosine(&units[t.enroll_id.as_str()], &units[t.test_id.as_str()]);
            ScoredTrial::new(t.clone(), raw)
        })
        .collect())
}

/// Raw cosine plus adaptive s-norm for every trial, in input order.
///
/// Cohort scores are computed once per distinct utterance. The per-trial
/// arithmetic is sequential, so parallel execution does not change any bit.
pub fn score_trials(
    trials: &[Trial],
    embeddings: &EmbeddingTable,
    cohort: &Cohort,
    cfg: &SNormConfig,
) -> Result<Vec<ScoredTrial>> {
    cfg.validate()?;
    if trials.is_empty() {
        return Ok(Vec::new());
    }
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let units = unit_table(trials, embeddings)?;
    let cohort_units = Cohort {
        speakers: cohort.speakers.clone(),
        vectors: cohort
            .vectors
            .iter()
            .map(|v| unit_normalize(v))
            .collect::<Result<_>>()?,
    };
    let cohort_scores: HashMap<&str, Vec<f64>> = units
        .par_iter()
        .map(|(id, unit)| (*id, cohort_units.scores_against(unit)))
        .collect();
    trials
        .par_iter()
        .map(|t| {
            let e = t.enroll_id.as_str();
            let s = t.test_id.as_str();
            let raw = unit_cosine(&units[e], &units[s]);
            let norm = adaptive_s_norm(raw, &cohort_scores[e], &cohort_scores[s], cfg)?;
            let mut st = ScoredTrial::new(t.clone(), raw);
            st.norm_score = Some(norm);
            Ok(st)
        })
        .collect()
}

fn unit_table<'a>(
    trials: &'a [Trial],
    embeddings: &EmbeddingTable,
) -> Result<HashMap<&'a str, Vec<f64>>> {
    let mut units = HashMap::new();
    for t in trials {
        for id in [t.enroll_id.as_str(), t.test_id.as_str()] {
            if !units.contains_key(id) {
                units.insert(id, unit_normalize(embeddings.require(id)?)?);
            }
        }
    }
    Ok(units)
}

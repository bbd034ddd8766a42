//! Construction of the calibration training trial list.
//!
//! Candidate pairs are enumerated within gender, positives never share a
//! session, and both classes are split into cross-lingual and same-language
//! strata by predicted language. After balanced stratified sampling, the
//! easiest trials are discarded: positives with the smallest and negatives
//! with the largest language-embedding cosine distance.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingTable, Gender, Label, PosteriorTable, Trial, Utterance};
use crate::error::{Error, Result};
use crate::features::argmax;
use crate::metrics::ScoreGroup;
use crate::scoring::cosine_score;

const CROP_STREAM: u64 = 1;
const TRIAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialBuildConfig {
    pub total_trials: usize,
    pub crosslingual_fraction: f64,
    pub discard_fraction: f64,
    pub crop_min: f64,
    pub crop_max: f64,
    pub crop_half: bool,
    pub seed: u64,
}

impl Default for TrialBuildConfig {
    fn default() -> Self {
        Self {
            total_trials: 100_000,
            crosslingual_fraction: 0.5,
            discard_fraction: 0.2,
            crop_min: 2.0,
            crop_max: 4.0,
            crop_half: true,
            seed: 0,
        }
    }
}

impl TrialBuildConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("crosslingual_fraction", self.crosslingual_fraction),
            ("discard_fraction", self.discard_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        if !(self.crop_min > 0.0 && self.crop_min <= self.crop_max) {
            return Err(Error::Config(format!(
                "need 0 < crop_min <= crop_max, got {} and {}",
                self.crop_min, self.crop_max
            )));
        }
        if self.total_trials < 2 {
            return Err(Error::Config("total_trials must be at least 2".into()));
        }
        Ok(())
    }
}

/// Shortens the durations of a seeded random half of the utterances to
/// `uniform(crop_min, min(crop_max, original))`. Utterances not longer than
/// `crop_min` keep their duration.
pub fn simulate_crops(utterances: &[Utterance], cfg: &TrialBuildConfig) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let mut out = utterances.to_vec();
    if !cfg.crop_half || out.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(CROP_STREAM);
    let mut chosen = index::sample(&mut rng, out.len(), out.len() / 2).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let original = out[i].duration;
        if original > cfg.crop_min {
            let hi = cfg.crop_max.min(original);
            out[i].duration = if hi > cfg.crop_min {
                rng.random_range(cfg.crop_min..hi)
            } else {
                cfg.crop_min
            };
        }
    }
    Ok(out)
}

/// All admissible unordered pairs, split into four strata. Pair indices refer
/// to `utt_ids`, which is sorted; the first index is always the smaller.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Candidates {
    pub utt_ids: Vec<String>,
    pub strata: [Vec<(u32, u32)>; 4],
}

impl Candidates {
    pub fn stratum(&self, g: ScoreGroup) -> &[(u32, u32)] {
        &self.strata[g.index()]
    }
}

struct Prepared<'a> {
    utts: Vec<&'a Utterance>,
    language: Vec<usize>,
}

fn prepare<'a>(utterances: &'a [Utterance], posteriors: &PosteriorTable) -> Result<Prepared<'a>> {
    let mut utts: Vec<&Utterance> = utterances.iter().collect();
    utts.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    for w in utts.windows(2) {
        if w[0].utt_id == w[1].utt_id {
            return Err(Error::Config(format!(
                "duplicate utterance `{}`",
                w[0].utt_id
            )));
        }
    }
    let mut language = Vec::with_capacity(utts.len());
    for u in &utts {
        if u.gender == Gender::Unknown {
            return Err(Error::missing("gender", &u.utt_id));
        }
        language.push(argmax(posteriors.require(&u.utt_id)?));
    }
    Ok(Prepared { utts, language })
}

/// Within-gender pairs: positives are same-speaker pairs from different
/// sessions, negatives are different-speaker pairs.
pub fn enumerate_candidates(
    utterances: &[Utterance],
    posteriors: &PosteriorTable,
) -> Result<Candidates> {
    let prep = prepare(utterances, posteriors)?;
    Ok(enumerate_prepared(&prep))
}

fn enumerate_prepared(prep: &Prepared<'_>) -> Candidates {
    let n = prep.utts.len();
    let mut strata: [Vec<(u32, u32)>; 4] = Default::default();
    for i in 0..n {
        let a = prep.utts[i];
        for j in i + 1..n {
            let b = prep.utts[j];
            if a.gender != b.gender {
                continue;
            }
            let target = a.speaker_id == b.speaker_id;
            if target && a.session_id == b.session_id {
                continue;
            }
            let cross = prep.language[i] != prep.language[j];
            strata[ScoreGroup::of(target, cross).index()].push((i as u32, j as u32));
        }
    }
    Candidates {
        utt_ids: prep.utts.iter().map(|u| u.utt_id.clone()).collect(),
        strata,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialBuildStats {
    pub candidates: [usize; 4],
    /// Trials drawn from each stratum before the discard step.
    pub selected: [usize; 4],
    pub discarded_targets: usize,
    pub discarded_nontargets: usize,
    /// True when fewer than `total_trials` could be selected.
    pub shortfall: bool,
}

/// Final trial list with the per-trial language-embedding cosine distance
/// and predicted cross-linguality.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub lang_distance: Vec<f64>,
    pub crosslingual: Vec<bool>,
    pub stats: TrialBuildStats,
}

/// Per-class cross-lingual and same-language quotas for `per_class` trials.
fn quotas(per_class: usize, fraction: f64) -> (usize, usize) {
    let cross = ((per_class as f64) * fraction).round() as usize;
    (cross, per_class - cross)
}

fn feasible(per_class: usize, fraction: f64, available: &[usize; 4]) -> bool {
    let (cross, same) = quotas(per_class, fraction);
    let fits = |g: ScoreGroup, q: usize| available[g.index()] >= q;
    fits(ScoreGroup::TargetCrossLingual, cross)
        && fits(ScoreGroup::TargetSameLanguage, same)
        && fits(ScoreGroup::NontargetCrossLingual, cross)
        && fits(ScoreGroup::NontargetSameLanguage, same)
}

pub fn build_trials(
    utterances: &[Utterance],
    lang_embeddings: &EmbeddingTable,
    posteriors: &PosteriorTable,
    cfg: &TrialBuildConfig,
) -> Result<TrialSet> {
    cfg.validate()?;
    let prep = prepare(utterances, posteriors)?;
    let cand = enumerate_prepared(&prep);
    let available: [usize; 4] = std::array::from_fn(|g| cand.strata[g].len());

    let requested = cfg.total_trials / 2;
    let (cross_q, same_q) = quotas(requested, cfg.crosslingual_fraction);
    for g in ScoreGroup::ALL {
        let q = if matches!(
            g,
            ScoreGroup::TargetCrossLingual | ScoreGroup::NontargetCrossLingual
        ) {
            cross_q
        } else {
            same_q
        };
        if q > 0 && available[g.index()] == 0 {
            return Err(Error::ImpossibleQuota {
                stratum: g.name().to_string(),
                requested: q,
                achievable: 0,
            });
        }
    }
    let per_class = if feasible(requested, cfg.crosslingual_fraction, &available) {
        requested
    } else {
        // Feasibility is monotone in the class size, so bisect the largest one.
        let (mut lo, mut hi) = (0usize, requested);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if feasible(mid, cfg.crosslingual_fraction, &available) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        if lo == 0 {
            return Err(Error::ImpossibleQuota {
                stratum: "all".into(),
                requested,
                achievable: 0,
            });
        }
        log::warn!(
            "trial builder: only {} of {} trials per class achievable (candidates {:?})",
            lo,
            requested,
            available
        );
        lo
    };
    let (cross_n, same_n) = quotas(per_class, cfg.crosslingual_fraction);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRIAL_STREAM);
    let mut picked: Vec<(u32, u32, ScoreGroup)> = Vec::with_capacity(2 * per_class);
    let mut selected = [0usize; 4];
    for g in ScoreGroup::ALL {
        let quota = match g {
            ScoreGroup::TargetCrossLingual | ScoreGroup::NontargetCrossLingual => cross_n,
            _ => same_n,
        };
        let pool = cand.stratum(g);
        for k in index::sample(&mut rng, pool.len(), quota) {
            let (i, j) = pool[k];
            picked.push((i, j, g));
        }
        selected[g.index()] = quota;
    }
    picked.shuffle(&mut rng);

    let mut distances = Vec::with_capacity(picked.len());
    for &(i, j, _) in &picked {
        let e = lang_embeddings.require(&cand.utt_ids[i as usize])?;
        let t = lang_embeddings.require(&cand.utt_ids[j as usize])?;
        distances.push(1.0 - cosine_score(e, t)?);
    }

    let drop_count = ((per_class as f64) * cfg.discard_fraction).round() as usize;
    let is_target = |g: ScoreGroup| {
        matches!(
            g,
            ScoreGroup::TargetCrossLingual | ScoreGroup::TargetSameLanguage
        )
    };
    let mut keep = vec![true; picked.len()];
    let mut positives: Vec<usize> = (0..picked.len())
        .filter(|&k| is_target(picked[k].2))
        .collect();
    let mut negatives: Vec<usize> = (0..picked.len())
        .filter(|&k| !is_target(picked[k].2))
        .collect();
    positives.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    negatives.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b)));
    for &k in positives
        .iter()
        .take(drop_count)
        .chain(negatives.iter().take(drop_count))
    {
        keep[k] = false;
    }

    let mut set = TrialSet {
        stats: TrialBuildStats {
            candidates: available,
            selected,
            discarded_targets: drop_count.min(positives.len()),
            discarded_nontargets: drop_count.min(negatives.len()),
            shortfall: per_class < requested,
        },
        ..Default::default()
    };
    for (k, &(i, j, g)) in picked.iter().enumerate() {
        if !keep[k] {
            continue;
        }
        let label = if is_target(g) {
            Label::Target
        } else {
            Label::Nontarget
        };
        set.trials.push(Trial::new(
            cand.utt_ids[i as usize].clone(),
            cand.utt_ids[j as usize].clone(),
            label,
        ));
        set.lang_distance.push(distances[k]);
        set.crosslingual.push(matches!(
            g,
            ScoreGroup::TargetCrossLingual | ScoreGroup::NontargetCrossLingual
        ));
    }
    Ok(set)
}

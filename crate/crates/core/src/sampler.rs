//! Cross-lingual mini-batch planning for embedding-extractor fine-tuning.
//!
//! One iteration walks every eligible speaker once in a seeded random order.
//! Consecutive groups of `S` speakers form a batch, and each speaker
//! contributes `U` utterances drawn as `U / 2` pairs. A pair is cross-lingual
//! (different predicted languages) whenever such a pair is still available
//! among the speaker's unused utterances; otherwise it is drawn at random.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Utterance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub speakers_per_batch: usize,
    /// Even number of utterances per speaker.
    pub utterances_per_speaker: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl SamplerConfig {
    pub fn new(speakers_per_batch: usize, utterances_per_speaker: usize, seed: u64) -> Self {
        Self {
            speakers_per_batch,
            utterances_per_speaker,
            seed,
            drop_last: true,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.speakers_per_batch * self.utterances_per_speaker
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers_per_batch == 0 {
            return Err(Error::Config("speakers per batch must be positive".into()));
        }
        let u = self.utterances_per_speaker;
        if u == 0 || u % 2 != 0 {
            return Err(Error::Config(format!(
                "utterances per speaker must be a positive even number, got {u}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPair {
    pub speaker: String,
    pub first: String,
    pub second: String,
    pub crosslingual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub speakers: Vec<String>,
    /// Speaker-grouped: `U` consecutive ids per speaker.
    pub utterances: Vec<String>,
    /// Pairs in draw order.
    pub pairs: Vec<SampledPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SamplerStats {
    pub crosslingual_pairs: usize,
    pub fallback_pairs: usize,
    /// Speakers with fewer than `U` utterances.
    pub excluded_speakers: usize,
    /// Speakers in a dropped incomplete tail group.
    pub dropped_speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub stats: SamplerStats,
}

struct SpeakerPool<'a> {
    speaker: &'a str,
    /// (utt_id, predicted language), sorted by id.
    utts: Vec<(&'a str, usize)>,
}

fn pools(utterances: &[Utterance], min_utts: usize) -> Result<(Vec<SpeakerPool<'_>>, usize)> {
    let mut by_speaker: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for u in utterances {
        let lang = u
            .predicted_language
            .ok_or_else(|| Error::missing("predicted language", &u.utt_id))?;
        by_speaker
            .entry(u.speaker_id.as_str())
            .or_default()
            .push((u.utt_id.as_str(), lang));
    }
    let mut eligible = Vec::new();
    let mut excluded = 0;
    for (speaker, mut utts) in by_speaker {
        if utts.len() < min_utts {
            excluded += 1;
            continue;
        }
        utts.sort_unstable();
        eligible.push(SpeakerPool { speaker, utts });
    }
    if excluded > 0 {
        log::warn!("sampler: excluded {excluded} speakers with fewer than {min_utts} utterances");
    }
    Ok((eligible, excluded))
}

/// Draws `U / 2` pairs from one speaker, never reusing an utterance.
fn draw_pairs<R: Rng>(
    pool: &SpeakerPool<'_>,
    pairs_needed: usize,
    rng: &mut R,
) -> Vec<SampledPair> {
    let mut remaining = pool.utts.clone();
    let mut out = Vec::with_capacity(pairs_needed);
    for _ in 0..pairs_needed {
        let mut cross = Vec::new();
        for i in 0..remaining.len() {
            for j in i + 1..remaining.len() {
                if remaining[i].1 != remaining[j].1 {
                    cross.push((i, j));
                }
            }
        }
        let (i, j, crosslingual) = if cross.is_empty() {
            let n = remaining.len();
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j), false)
        } else {
            let (i, j) = cross[rng.random_range(0..cross.len())];
            (i, j, true)
        };
        // Remove the larger index first so the smaller stays valid.
        let second = remaining.remove(j);
        let first = remaining.remove(i);
        out.push(SampledPair {
            speaker: pool.speaker.to_string(),
            first: first.0.to_string(),
            second: second.0.to_string(),
            crosslingual,
        });
    }
    out
}

/// One pass over all eligible speakers.
pub fn plan_iteration(utterances: &[Utterance], cfg: &SamplerConfig) -> Result<BatchPlan> {
    cfg.validate()?;
    let (mut eligible, excluded) = pools(utterances, cfg.utterances_per_speaker)?;
    let total: usize = eligible.iter().map(|p| p.utts.len()).sum();
    if cfg.batch_size() > total {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} eligible utterances",
            cfg.batch_size(),
            total
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eligible.shuffle(&mut rng);

    let mut plan = BatchPlan::default();
    plan.stats.excluded_speakers = excluded;
    for group in eligible.chunks(cfg.speakers_per_batch) {
        if group.len() < cfg.speakers_per_batch && cfg.drop_last {
            plan.stats.dropped_speakers = group.len();
            break;
        }
        let mut batch = Batch::default();
        for pool in group {
            let pairs = draw_pairs(pool, cfg.utterances_per_speaker / 2, &mut rng);
            batch.speakers.push(pool.speaker.to_string());
            for p in &pairs {
                batch.utterances.push(p.first.clone());
                batch.utterances.push(p.second.clone());
                if p.crosslingual {
                    plan.stats.crosslingual_pairs += 1;
                } else {
                    plan.stats.fallback_pairs += 1;
                }
            }
            batch.pairs.extend(pairs);
        }
        plan.batches.push(batch);
    }
    Ok(plan)
}

/// `n_iterations` independent passes seeded with `seed + iteration`.
pub fn plan_epochs(
    utterances: &[Utterance],
    cfg: &SamplerConfig,
    n_iterations: usize,
) -> Result<Vec<BatchPlan>> {
    (0..n_iterations)
        .map(|i| {
            let iter_cfg = SamplerConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..*cfg
            };
            plan_iteration(utterances, &iter_cfg)
        })
        .collect()
}

/// One `batch <index> <utt>...` line per batch, numbered across iterations,
/// followed by summary comments.
pub fn format_batch_plans(plans: &[BatchPlan]) -> String {
    let mut out = String::new();
    let mut index = 0;
    let mut totals = SamplerStats::default();
    for plan in plans {
        for batch in &plan.batches {
            let _ = write!(out, "batch {index}");
            for u in &batch.utterances {
                out.push(' ');
                out.push_str(u);
            }
            out.push('\n');
            index += 1;
        }
        totals.crosslingual_pairs += plan.stats.crosslingual_pairs;
        totals.fallback_pairs += plan.stats.fallback_pairs;
        totals.excluded_speakers += plan.stats.excluded_speakers;
        totals.dropped_speakers += plan.stats.dropped_speakers;
    }
    let _ = writeln!(out, "# iterations {}", plans.len());
    let _ = writeln!(out, "# batches {index}");
    let _ = writeln!(out, "# crosslingual_pairs {}", totals.crosslingual_pairs);
    let _ = writeln!(out, "# fallback_pairs {}", totals.fallback_pairs);
    let _ = writeln!(out, "# excluded_speakers {}", totals.excluded_speakers);
    let _ = writeln!(out, "# dropped_speakers {}", totals.dropped_speakers);
    out
}

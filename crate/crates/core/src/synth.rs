//! Seeded synthetic speaker/language world.
//!
//! Every utterance embedding is `normalize(a * speaker + b * language + g * noise)`
//! where `language` is the utterance's realized language direction. Language
//! centroids live in the language-embedding space and are carried into the
//! speaker-embedding space by a fixed random isometry, so the language
//! classifier and the speaker extractor observe the same per-utterance
//! language realization. With `dialect_spread = 0` each language has a
//! single direction.
//!
//! The language classifier emits `normalize(realization + c * noise)` as the
//! language embedding and a softmax over scaled cosines to the centroids as
//! the posterior.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{EmbeddingTable, Gender, Label, PosteriorTable, Trial, Utterance};
use crate::error::{Error, Result};
use crate::features::{posterior_from_cosines, AamScale};
use crate::io::format_sig9;
use crate::metrics::ScoreGroup;
use crate::scoring::{dot, unit_normalize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    pub n_speakers: usize,
    pub n_languages: usize,
    pub utts_per_speaker: usize,
    pub emb_dim: usize,
    pub lang_emb_dim: usize,
    pub speaker_strength: f64,
    pub language_strength: f64,
    pub noise_strength: f64,
    pub classifier_noise: f64,
    /// Per-utterance spread of the language realization around its centroid.
    pub dialect_spread: f64,
    pub multilingual_fraction: f64,
    pub duration_range: (f64, f64),
    pub aam_scale: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    /// A world with a clear cross-lingual target shift, an imperfect language
    /// classifier and closely related language pairs.
    fn default() -> Self {
        Self {
            n_speakers: 600,
            n_languages: 8,
            utts_per_speaker: 8,
            emb_dim: 64,
            lang_emb_dim: 3,
            speaker_strength: 1.0,
            language_strength: 0.6,
            noise_strength: 1.0,
            classifier_noise: 0.2,
            dialect_spread: 0.0,
            multilingual_fraction: 0.5,
            duration_range: (2.0, 12.0),
            aam_scale: 30.0,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_speakers", self.n_speakers),
            ("n_languages", self.n_languages),
            ("utts_per_speaker", self.utts_per_speaker),
            ("emb_dim", self.emb_dim),
            ("lang_emb_dim", self.lang_emb_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let non_negative = [
            ("speaker_strength", self.speaker_strength),
            ("language_strength", self.language_strength),
            ("noise_strength", self.noise_strength),
            ("classifier_noise", self.classifier_noise),
            ("dialect_spread", self.dialect_spread),
        ];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::Config(format!(
                "{name} must be non-negative, got {v}"
            )));
        }
        if !(0.0..=1.0).contains(&self.multilingual_fraction) {
            return Err(Error::Config(
                "multilingual_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.n_languages < 2 && self.multilingual_fraction > 0.0 {
            return Err(Error::Config(
                "multilingual speakers need at least 2 languages".into(),
            ));
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "invalid duration range ({lo}, {hi})"
            )));
        }
        AamScale::new(self.aam_scale)?;
        Ok(())
    }
}

/// Generated tables plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub languages: Vec<String>,
    pub metadata: Vec<Utterance>,
    pub speaker_embeddings: EmbeddingTable,
    pub lang_embeddings: EmbeddingTable,
    pub posteriors: PosteriorTable,
    /// Spoken language index per utterance.
    pub true_language: BTreeMap<String, usize>,
}

impl World {
    pub fn speakers(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self
            .metadata
            .iter()
            .map(|u| u.speaker_id.as_str())
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Restriction of the world to the speakers accepted by `keep`.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> World {
        let metadata: Vec<Utterance> = self
            .metadata
            .iter()
            .filter(|u| keep(&u.speaker_id))
            .cloned()
            .collect();
        let ids: HashSet<&str> = metadata.iter().map(|u| u.utt_id.as_str()).collect();
        let mut speaker_embeddings = EmbeddingTable::new();
        for (id, v) in self
            .speaker_embeddings
            .iter()
            .filter(|(id, _)| ids.contains(id))
        {
            speaker_embeddings
                .insert(id, v.to_vec())
                .expect("valid source table");
        }
        let mut lang_embeddings = EmbeddingTable::new();
        for (id, v) in self
            .lang_embeddings
            .iter()
            .filter(|(id, _)| ids.contains(id))
        {
            lang_embeddings
                .insert(id, v.to_vec())
                .expect("valid source table");
        }
        let mut posteriors = PosteriorTable::new(self.languages.clone());
        for (id, p) in self.posteriors.iter().filter(|(id, _)| ids.contains(id)) {
            posteriors
                .insert(id, p.to_vec())
                .expect("valid source table");
        }
        let true_language = self
            .true_language
            .iter()
            .filter(|(id, _)| ids.contains(id.as_str()))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        World {
            languages: self.languages.clone(),
            metadata,
            speaker_embeddings,
            lang_embeddings,
            posteriors,
            true_language,
        }
    }

    /// Splits speakers, in id order, into consecutive groups of the given
    /// sizes. The sizes must not exceed the number of speakers.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<World>> {
        let speakers = self.speakers();
        let needed: usize = sizes.iter().sum();
        if needed > speakers.len() {
            return Err(Error::Config(format!(
                "split needs {needed} speakers, world has {}",
                speakers.len()
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let group: HashSet<&str> = speakers[start..start + n].iter().copied().collect();
            out.push(self.subset(|s| group.contains(s)));
            start += n;
        }
        Ok(out)
    }

    /// `(utt_id, language code)` pairs in id order.
    pub fn true_language_labels(&self) -> Vec<(String, String)> {
        self.true_language
            .iter()
            .map(|(id, &l)| (id.clone(), self.languages[l].clone()))
            .collect()
    }

    /// Metadata with `predicted_language` filled from the posteriors.
    pub fn metadata_with_predictions(&self) -> Vec<Utterance> {
        let mut m = self.metadata.clone();
        crate::data::attach_predicted_languages(&mut m, &self.posteriors)
            .expect("every generated utterance has a posterior");
        m
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        if let Ok(u) = unit_normalize(&gaussian_vec(rng, dim, 1.0)) {
            return u;
        }
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(y, v)| *y += a * v);
}

/// `rows x cols` matrix with orthonormal columns (orthonormal rows when
/// `rows < cols`), so that language-space angles survive the projection.
fn random_isometry<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let (n, k) = (rows.max(cols), rows.min(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian_vec(rng, n, 1.0);
        for b in &basis {
            let c = dot(&v, b);
            axpy(&mut v, -c, b);
        }
        // Reject near-dependent draws.
        if dot(&v, &v).sqrt() > 1e-6 {
            basis.push(unit_normalize(&v).expect("non-zero residual"));
        }
    }
    if rows >= cols {
        (0..rows)
            .map(|r| basis.iter().map(|b| b[r]).collect())
            .collect()
    } else {
        basis
    }
}

/// Rounds a probability vector to the 9-significant-digit file precision,
/// assigning the rounding residual to the largest entry so that the stored
/// vector still sums to one within the posterior tolerance.
fn quantize_probabilities(p: &[f64]) -> Vec<f64> {
    let q9 = |v: f64| format_sig9(v).parse::<f64>().expect("formatted float");
    let mut q: Vec<f64> = p.iter().map(|&v| q9(v)).collect();
    let top = crate::features::argmax(&q);
    let rest: f64 = q
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, v)| v)
        .sum();
    q[top] = q9((1.0 - rest).clamp(0.0, 1.0));
    q
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = AamScale::new(cfg.aam_scale)?;
    let languages: Vec<String> = (0..cfg.n_languages)
        .map(|l| format!("lang{l:02}"))
        .collect();

    let centroids: Vec<Vec<f64>> = (0..cfg.n_languages)
        .map(|_| random_unit(&mut rng, cfg.lang_emb_dim))
        .collect();
    let projection = random_isometry(&mut rng, cfg.emb_dim, cfg.lang_emb_dim);
    let project = |z: &[f64]| -> Vec<f64> { projection.iter().map(|row| dot(row, z)).collect() };

    let n_multi = (cfg.n_speakers as f64 * cfg.multilingual_fraction).round() as usize;
    let multilingual: HashSet<usize> = index::sample(&mut rng, cfg.n_speakers, n_multi)
        .into_iter()
        .collect();

    let noise_sd = 1.0 / (cfg.emb_dim as f64).sqrt();
    let lang_noise_sd = 1.0 / (cfg.lang_emb_dim as f64).sqrt();
    let (dur_lo, dur_hi) = cfg.duration_range;

    let mut world = World {
        languages: languages.clone(),
        metadata: Vec::with_capacity(cfg.n_speakers * cfg.utts_per_speaker),
        speaker_embeddings: EmbeddingTable::new(),
        lang_embeddings: EmbeddingTable::new(),
        posteriors: PosteriorTable::new(languages),
        true_language: BTreeMap::new(),
    };

    for s in 0..cfg.n_speakers {
        let speaker = format!("spk{s:04}");
        let gender = if s % 2 == 0 {
            Gender::Male
        } else {
            Gender::Female
        };
        let direction = random_unit(&mut rng, cfg.emb_dim);
        let primary = rng.random_range(0..cfg.n_languages);
        let spoken = if multilingual.contains(&s) {
            let mut second = rng.random_range(0..cfg.n_languages - 1);
            if second >= primary {
                second += 1;
            }
            vec![primary, second]
        } else {
            vec![primary]
        };
        let mut utt_langs: Vec<usize> = (0..cfg.utts_per_speaker)
            .map(|k| spoken[k % spoken.len()])
            .collect();
        utt_langs.shuffle(&mut rng);

        let mut per_language = vec![0usize; cfg.n_languages];
        for (k, &lang) in utt_langs.iter().enumerate() {
            let utt_id = format!("{speaker}-{k:03}");
            // Two consecutive utterances of a language share a session.
            let session = format!(
                "{speaker}-{}-v{}",
                world.languages[lang],
                per_language[lang] / 2
            );
            per_language[lang] += 1;
            let duration = if dur_hi > dur_lo {
                rng.random_range(dur_lo..dur_hi)
            } else {
                dur_lo
            };

            let mut realized = centroids[lang].clone();
            axpy(
                &mut realized,
                cfg.dialect_spread,
                &gaussian_vec(&mut rng, cfg.lang_emb_dim, lang_noise_sd),
            );
            let realized = unit_normalize(&realized).unwrap_or_else(|_| centroids[lang].clone());
            let lang_direction = unit_normalize(&project(&realized))?;

            let mut emb = vec![0.0; cfg.emb_dim];
            axpy(&mut emb, cfg.speaker_strength, &direction);
            axpy(&mut emb, cfg.language_strength, &lang_direction);
            axpy(
                &mut emb,
                cfg.noise_strength,
                &gaussian_vec(&mut rng, cfg.emb_dim, noise_sd),
            );
            let emb = unit_normalize(&emb)?;

            let mut lang_emb = realized.clone();
            axpy(
                &mut lang_emb,
                cfg.classifier_noise,
                &gaussian_vec(&mut rng, cfg.lang_emb_dim, lang_noise_sd),
            );
            let lang_emb = unit_normalize(&lang_emb)?;
            let cosines: Vec<f64> = centroids
                .iter()
                .map(|c| dot(c, &lang_emb).clamp(-1.0, 1.0))
                .collect();
            let posterior = quantize_probabilities(&posterior_from_cosines(&cosines, scale)?);

            world.speaker_embeddings.insert(utt_id.clone(), emb)?;
            world.lang_embeddings.insert(utt_id.clone(), lang_emb)?;
            world.posteriors.insert(utt_id.clone(), posterior)?;
            world.true_language.insert(utt_id.clone(), lang);
            world.metadata.push(Utterance::new(
                utt_id,
                speaker.clone(),
                duration,
                gender,
                session,
            ));
        }
    }
    Ok(world)
}

/// Labelled evaluation trials with ground-truth cross-lingual flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTrials {
    pub trials: Vec<Trial>,
    pub crosslingual: Vec<bool>,
}

/// Counts of admissible pairs per cell, by ground-truth language.
/// Positives exclude same-session pairs; negatives are any cross-speaker pair.
pub fn eval_cell_capacity(world: &World) -> [usize; 4] {
    let mut per_speaker: BTreeMap<&str, Vec<(usize, &str)>> = BTreeMap::new();
    let mut per_language = vec![0usize; world.languages.len()];
    for u in &world.metadata {
        let l = world.true_language[&u.utt_id];
        per_language[l] += 1;
        per_speaker
            .entry(u.speaker_id.as_str())
            .or_default()
            .push((l, u.session_id.as_str()));
    }
    let n: usize = per_language.iter().sum();
    let same_all: usize = per_language
        .iter()
        .map(|c| c * c.saturating_sub(1) / 2)
        .sum();
    let cross_all = n * n.saturating_sub(1) / 2 - same_all;
    let mut cap = [0usize; 4];
    let (mut spk_same, mut spk_cross) = (0usize, 0usize);
    for utts in per_speaker.values() {
        for i in 0..utts.len() {
            for j in i + 1..utts.len() {
                let cross = utts[i].0 != utts[j].0;
                if cross {
                    spk_cross += 1;
                } else {
                    spk_same += 1;
                }
                if utts[i].1 != utts[j].1 {
                    cap[ScoreGroup::of(true, cross).index()] += 1;
                }
            }
        }
    }
    cap[ScoreGroup::NontargetCrossLingual.index()] = cross_all - spk_cross;
    cap[ScoreGroup::NontargetSameLanguage.index()] = same_all - spk_same;
    cap
}

/// Balanced four-cell design: `n_per_cell` trials for each of
/// {target, nontarget} x {cross-lingual, same-language}.
pub fn generate_eval_trials(world: &World, n_per_cell: usize, seed: u64) -> Result<EvalTrials> {
    if n_per_cell == 0 {
        return Ok(EvalTrials::default());
    }
    let cap = eval_cell_capacity(world);
    for g in ScoreGroup::ALL {
        if cap[g.index()] < n_per_cell {
            return Err(Error::ImpossibleQuota {
                stratum: g.name().to_string(),
                requested: n_per_cell,
                achievable: cap[g.index()],
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utts: Vec<&Utterance> = world.metadata.iter().collect();
    utts.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let lang: Vec<usize> = utts
        .iter()
        .map(|u| world.true_language[&u.utt_id])
        .collect();

    let mut cells: [Vec<(usize, usize)>; 4] = Default::default();

    // Positives: enumerate and sample without replacement.
    let mut positives: [Vec<(usize, usize)>; 2] = Default::default();
    for i in 0..utts.len() {
        for j in i + 1..utts.len() {
            if utts[i].speaker_id == utts[j].speaker_id && utts[i].session_id != utts[j].session_id
            {
                positives[usize::from(lang[i] == lang[j])].push((i, j));
            }
        }
    }
    for (pool, g) in positives.iter().zip([
        ScoreGroup::TargetCrossLingual,
        ScoreGroup::TargetSameLanguage,
    ]) {
        cells[g.index()] = index::sample(&mut rng, pool.len(), n_per_cell)
            .into_iter()
            .map(|k| pool[k])
            .collect();
    }

    // Negatives: rejection sampling of distinct unordered pairs.
    let mut seen = HashSet::new();
    let n = utts.len();
    while cells[ScoreGroup::NontargetCrossLingual.index()].len() < n_per_cell
        || cells[ScoreGroup::NontargetSameLanguage.index()].len() < n_per_cell
    {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || utts[a].speaker_id == utts[b].speaker_id {
            continue;
        }
        let key = (a.min(b), a.max(b));
        let g = ScoreGroup::of(false, lang[a] != lang[b]);
        if cells[g.index()].len() < n_per_cell && seen.insert(key) {
            cells[g.index()].push(key);
        }
    }

    let mut all: Vec<(usize, usize, ScoreGroup)> = ScoreGroup::ALL
        .iter()
        .flat_map(|&g| cells[g.index()].iter().map(move |&(i, j)| (i, j, g)))
        .collect();
    all.shuffle(&mut rng);
    let mut out = EvalTrials::default();
    for (i, j, g) in all {
        let target = matches!(
            g,
            ScoreGroup::TargetCrossLingual | ScoreGroup::TargetSameLanguage
        );
        let cross = matches!(
            g,
            ScoreGroup::TargetCrossLingual | ScoreGroup::NontargetCrossLingual
        );
        out.trials.push(Trial::new(
            utts[i].utt_id.clone(),
            utts[j].utt_id.clone(),
            if target {
                Label::Target
            } else {
                Label::Nontarget
            },
        ));
        out.crosslingual.push(cross);
    }
    Ok(out)
}

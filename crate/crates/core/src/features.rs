//! Trial-level quality features: log duration and the three language
//! similarity measures (binary cross-linguality, Jensen-Shannon distance of
//! language posteriors, cosine of language embeddings).

use std::fmt;
use std::str::FromStr;

use crate::data::{EmbeddingTable, PosteriorTable, ScoredTrial, Utterance};
use crate::error::{Error, Result};
use crate::scoring::cosine_score;

/// Scale applied to classifier cosines before the softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AamScale(f64);

impl AamScale {
    pub fn new(scale: f64) -> Result<Self> {
        if scale > 0.0 && scale.is_finite() {
            Ok(Self(scale))
        } else {
            Err(Error::Config(format!(
                "AAM scale must be positive, got {scale}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for AamScale {
    fn default() -> Self {
        Self(30.0)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax over scaled classifier cosines.
pub fn posterior_from_cosines(cosines: &[f64], scale: AamScale) -> Result<Vec<f64>> {
    if cosines.is_empty() {
        return Err(Error::OutOfRange("empty cosine vector".into()));
    }
    if let Some(c) = cosines.iter().find(|c| !(-1.0..=1.0).contains(*c)) {
        return Err(Error::OutOfRange(format!("cosine {c} outside [-1, 1]")));
    }
    let max = cosines[argmax(cosines)];
    let exps: Vec<f64> = cosines
        .iter()
        .map(|c| (scale.get() * (c - max)).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// 1.0 when the predicted languages of both sides differ, else 0.0.
pub fn binary_crosslingual(enroll: &[f64], test: &[f64]) -> Result<f64> {
    if enroll.len() != test.len() {
        return Err(Error::LengthMismatch(enroll.len(), test.len()));
    }
    Ok(if argmax(enroll) == argmax(test) {
        0.0
    } else {
        1.0
    })
}

/// Jensen-Shannon distance with natural logarithms, in `[0, sqrt(ln 2)]`.
pub fn js_distance(enroll: &[f64], test: &[f64]) -> Result<f64> {
    if enroll.len() != test.len() {
        return Err(Error::LengthMismatch(enroll.len(), test.len()));
    }
    let mut sum = 0.0;
    for (&p, &q) in enroll.iter().zip(test) {
        let m = 0.5 * (p + q);
        if m == 0.0 {
            continue;
        }
        // 0 * ln(0 / m) = 0; the two sides are added first so that
        // swapping the arguments gives the same bits.
        let term = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
        sum += term(p) + term(q);
    }
    Ok((0.5 * sum).max(0.0).sqrt())
}

/// Cosine similarity of two language embeddings.
pub fn lang_embedding_feature(enroll: &[f64], test: &[f64]) -> Result<f64> {
    cosine_score(enroll, test)
}

fn check_duration(d: f64) -> Result<f64> {
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(Error::OutOfRange(format!("duration {d} must be positive")))
    }
}

/// Natural log of the shorter duration.
pub fn log_duration_qmf(enroll: &Utterance, test: &Utterance) -> Result<f64> {
    let e = check_duration(enroll.duration)?;
    let t = check_duration(test.duration)?;
    Ok(e.min(t).ln())
}

/// `ln(d_e) + ln(d_t)`, the additive alternative to [`log_duration_qmf`].
pub fn log_duration_sum_qmf(enroll: &Utterance, test: &Utterance) -> Result<f64> {
    Ok(check_duration(enroll.duration)?.ln() + check_duration(test.duration)?.ln())
}

/// Named quality feature. The names are part of the model file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Qmf {
    LogDurMin,
    LogDurSum,
    LangBinary,
    LangJs,
    LangEmbCos,
}

impl Qmf {
    pub const ALL: [Qmf; 5] = [
        Qmf::LogDurMin,
        Qmf::LogDurSum,
        Qmf::LangBinary,
        Qmf::LangJs,
        Qmf::LangEmbCos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Qmf::LogDurMin => "log_dur_min",
            Qmf::LogDurSum => "log_dur_sum",
            Qmf::LangBinary => "lang_binary",
            Qmf::LangJs => "lang_js",
            Qmf::LangEmbCos => "lang_emb_cos",
        }
    }
}

impl fmt::Display for Qmf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Qmf {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Qmf::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

/// Parses a comma-separated recipe such as `log_dur_min,lang_js`.
/// An empty string is the empty recipe.
pub fn parse_recipe(s: &str) -> Result<Vec<Qmf>> {
    let recipe: Vec<Qmf> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    check_recipe(&recipe)?;
    Ok(recipe)
}

pub fn check_recipe(recipe: &[Qmf]) -> Result<()> {
    for (i, q) in recipe.iter().enumerate() {
        if recipe[..i].contains(q) {
            return Err(Error::DuplicateFeature(q.to_string()));
        }
    }
    Ok(())
}

/// Lookup tables a feature may need. Only the tables required by the recipe
/// have to be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct QmfSources<'a> {
    pub metadata: Option<&'a [Utterance]>,
    pub posteriors: Option<&'a PosteriorTable>,
    pub lang_embeddings: Option<&'a EmbeddingTable>,
}

/// Computes recipe features for (enroll, test) id pairs.
pub struct QmfExtractor<'a> {
    recipe: Vec<Qmf>,
    metadata: std::collections::HashMap<&'a str, &'a Utterance>,
    posteriors: Option<&'a PosteriorTable>,
    lang_embeddings: Option<&'a EmbeddingTable>,
}

impl<'a> QmfExtractor<'a> {
    pub fn new(recipe: &[Qmf], sources: QmfSources<'a>) -> Result<Self> {
        check_recipe(recipe)?;
        let needs = |qs: &[Qmf]| recipe.iter().any(|q| qs.contains(q));
        if needs(&[Qmf::LogDurMin, Qmf::LogDurSum]) && sources.metadata.is_none() {
            return Err(Error::Config("duration features need metadata".into()));
        }
        if needs(&[Qmf::LangBinary, Qmf::LangJs]) && sources.posteriors.is_none() {
            return Err(Error::Config(
                "posterior features need a posterior table".into(),
            ));
        }
        if needs(&[Qmf::LangEmbCos]) && sources.lang_embeddings.is_none() {
            return Err(Error::Config(
                "lang_emb_cos needs language embeddings".into(),
            ));
        }
        let metadata = sources
            .metadata
            .unwrap_or_default()
            .iter()
            .map(|u| (u.utt_id.as_str(), u))
            .collect();
        Ok(Self {
            recipe: recipe.to_vec(),
            metadata,
            posteriors: sources.posteriors,
            lang_embeddings: sources.lang_embeddings,
        })
    }

    pub fn recipe(&self) -> &[Qmf] {
        &self.recipe
    }

    fn utterance(&self, id: &str) -> Result<&'a Utterance> {
        self.metadata
            .get(id)
            .copied()
            .ok_or_else(|| Error::missing("metadata", id))
    }

    pub fn compute(&self, enroll: &str, test: &str) -> Result<Vec<f64>> {
        self.recipe
            .iter()
            .map(|&q| self.feature(q, enroll, test))
            .collect()
    }

    fn feature(&self, q: Qmf, enroll: &str, test: &str) -> Result<f64> {
        match q {
            Qmf::LogDurMin => log_duration_qmf(self.utterance(enroll)?, self.utterance(test)?),
            Qmf::LogDurSum => log_duration_sum_qmf(self.utterance(enroll)?, self.utterance(test)?),
            Qmf::LangBinary | Qmf::LangJs => {
                let post = self.posteriors.expect("checked in new");
                let (e, t) = (post.require(enroll)?, post.require(test)?);
                if q == Qmf::LangBinary {
                    binary_crosslingual(e, t)
                } else {
                    js_distance(e, t)
                }
            }
            Qmf::LangEmbCos => {
                let emb = self.lang_embeddings.expect("checked in new");
                lang_embedding_feature(emb.require(enroll)?, emb.require(test)?)
            }
        }
    }

    /// Attaches the recipe features to each scored trial.
    pub fn annotate(&self, trials: &mut [ScoredTrial]) -> Result<()> {
        for st in trials.iter_mut() {
            let values = self.compute(&st.trial.enroll_id, &st.trial.test_id)?;
            for (&q, v) in self.recipe.iter().zip(values) {
                st.set_feature(q, v);
            }
        }
        Ok(())
    }
}

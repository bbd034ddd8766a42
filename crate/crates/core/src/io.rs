//! Line-based text formats.
//!
//! Every format is UTF-8 with LF line endings, `#` comment lines, and fields
//! separated by single spaces. Scores and features are written with 9
//! significant digits, which makes save -> load -> save byte-identical.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::calibration::CalibrationModel;
use crate::data::{EmbeddingTable, Gender, Label, PosteriorTable, ScoredTrial, Trial, Utterance};
use crate::error::{Error, ParseErrorKind as K, Result};
use crate::features::Qmf;

/// Formats a value with 9 significant digits in the style of C's `%.9g`.
pub fn format_sig9(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let sci = format!("{value:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_fraction(&format!("{value:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, trimmed))
        }
    })
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(line, K::InvalidNumber(token.to_string())))?;
    if !v.is_finite() {
        return Err(Error::parse(line, K::NonFinite(token.to_string())));
    }
    Ok(v)
}

fn parse_values<'a>(tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>> {
    tokens.map(|t| parse_f64(t, line)).collect()
}

/// Re-tags an insertion error from a table with the offending line number.
fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::Parse { kind, .. } => Error::parse(line, kind),
        other => other,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- embeddings

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new();
    for (line_no, line) in content_lines(text) {
        let mut tokens = line.split_ascii_whitespace();
        let id = tokens.next().expect("non-empty line");
        let values = parse_values(tokens, line_no)?;
        table.insert(id, values).map_err(|e| at_line(e, line_no))?;
    }
    Ok(table)
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (id, vector) in table.iter() {
        out.push_str(id);
        for v in vector {
            out.push(' ');
            out.push_str(&format_sig9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    parse_embeddings(&read(path.as_ref())?)
}

pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    write(path.as_ref(), &format_embeddings(table))
}

// ---------------------------------------------------------------- posteriors

pub fn parse_posteriors(text: &str) -> Result<PosteriorTable> {
    let mut lines = content_lines(text);
    let Some((header_no, header)) = lines.next() else {
        return Ok(PosteriorTable::new(Vec::new()));
    };
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("languages") {
        return Err(Error::parse(
            header_no,
            K::Malformed("expected `languages <code>...` header".into()),
        ));
    }
    let languages: Vec<String> = tokens.map(str::to_string).collect();
    if languages.is_empty() {
        return Err(Error::parse(header_no, K::Malformed("no languages".into())));
    }
    let mut table = PosteriorTable::new(languages);
    for (line_no, line) in lines {
        let mut tokens = line.split_ascii_whitespace();
        let id = tokens.next().expect("non-empty line");
        let values = parse_values(tokens, line_no)?;
        table.insert(id, values).map_err(|e| at_line(e, line_no))?;
    }
    Ok(table)
}

pub fn format_posteriors(table: &PosteriorTable) -> String {
    let mut out = String::from("languages");
    for lang in table.languages() {
        out.push(' ');
        out.push_str(lang);
    }
    out.push('\n');
    for (id, probs) in table.iter() {
        out.push_str(id);
        for p in probs {
            out.push(' ');
            out.push_str(&format_sig9(*p));
        }
        out.push('\n');
    }
    out
}

pub fn load_posteriors(path: impl AsRef<Path>) -> Result<PosteriorTable> {
    parse_posteriors(&read(path.as_ref())?)
}

pub fn save_posteriors(path: impl AsRef<Path>, table: &PosteriorTable) -> Result<()> {
    write(path.as_ref(), &format_posteriors(table))
}

// ------------------------------------------------------------------ metadata

pub fn parse_metadata(text: &str) -> Result<Vec<Utterance>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        let [utt, spk, dur, gender, session] = fields[..] else {
            return Err(Error::parse(
                line_no,
                K::Malformed(format!("expected 5 fields, found {}", fields.len())),
            ));
        };
        let duration = parse_f64(dur, line_no)?;
        if duration <= 0.0 {
            return Err(Error::parse(
                line_no,
                K::Malformed(format!("duration {dur} must be positive")),
            ));
        }
        let gender: Gender = gender
            .parse()
            .map_err(|g| Error::parse(line_no, K::UnknownGender(g)))?;
        if !seen.insert(utt.to_string()) {
            return Err(Error::parse(line_no, K::DuplicateId(utt.to_string())));
        }
        out.push(Utterance::new(utt, spk, duration, gender, session));
    }
    Ok(out)
}

pub fn format_metadata(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            u.utt_id,
            u.speaker_id,
            format_sig9(u.duration),
            u.gender,
            u.session_id
        );
    }
    out
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    parse_metadata(&read(path.as_ref())?)
}

pub fn save_metadata(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    write(path.as_ref(), &format_metadata(utterances))
}

// -------------------------------------------------------------------- trials

pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    content_lines(text)
        .map(|(line_no, line)| {
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            match fields[..] {
                [e, t] => Ok(Trial::new(e, t, Label::Unknown)),
                [e, t, label] => {
                    let label: Label = label
                        .parse()
                        .map_err(|l| Error::parse(line_no, K::UnknownLabel(l)))?;
                    Ok(Trial::new(e, t, label))
                }
                _ => Err(Error::parse(
                    line_no,
                    K::Malformed(format!("expected 2 or 3 fields, found {}", fields.len())),
                )),
            }
        })
        .collect()
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        match t.label {
            Label::Unknown => {
                let _ = writeln!(out, "{} {}", t.enroll_id, t.test_id);
            }
            label => {
                let _ = writeln!(out, "{} {} {}", t.enroll_id, t.test_id, label);
            }
        }
    }
    out
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    parse_trials(&read(path.as_ref())?)
}

pub fn save_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    write(path.as_ref(), &format_trials(trials))
}

// -------------------------------------------------------------------- scores

/// One line of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
}

impl ScoreLine {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, score: f64) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            score,
        }
    }
}

impl From<&ScoredTrial> for ScoreLine {
    fn from(st: &ScoredTrial) -> Self {
        ScoreLine::new(&st.trial.enroll_id, &st.trial.test_id, st.final_score())
    }
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreLine>> {
    content_lines(text)
        .map(|(line_no, line)| {
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            let [e, t, s] = fields[..] else {
                return Err(Error::parse(
                    line_no,
                    K::Malformed(format!("expected 3 fields, found {}", fields.len())),
                ));
            };
            Ok(ScoreLine::new(e, t, parse_f64(s, line_no)?))
        })
        .collect()
}

pub fn format_score_lines(lines: &[ScoreLine]) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(
            out,
            "{} {} {}",
            l.enroll_id,
            l.test_id,
            format_sig9(l.score)
        );
    }
    out
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreLine>> {
    parse_scores(&read(path.as_ref())?)
}

/// Writes the most processed score of each trial (llr, normalized, raw).
pub fn save_scores(path: impl AsRef<Path>, scored: &[ScoredTrial]) -> Result<()> {
    let lines: Vec<ScoreLine> = scored.iter().map(ScoreLine::from).collect();
    save_score_lines(path, &lines)
}

pub fn save_score_lines(path: impl AsRef<Path>, lines: &[ScoreLine]) -> Result<()> {
    write(path.as_ref(), &format_score_lines(lines))
}

/// Checks that a score list lines up with a trial list, entry by entry.
pub fn check_alignment(scores: &[ScoreLine], trials: &[Trial]) -> Result<()> {
    if scores.len() != trials.len() {
        return Err(Error::LengthMismatch(scores.len(), trials.len()));
    }
    for (index, (s, t)) in scores.iter().zip(trials).enumerate() {
        if s.enroll_id != t.enroll_id || s.test_id != t.test_id {
            return Err(Error::KeyMismatch {
                index,
                expected: t.key(),
                found: format!("{} {}", s.enroll_id, s.test_id),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- QMF values

/// Per-trial quality features, one column per named feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QmfTable {
    pub features: Vec<Qmf>,
    /// `(enroll_id, test_id, values)` with `values.len() == features.len()`.
    pub rows: Vec<(String, String, Vec<f64>)>,
}

impl QmfTable {
    /// Values of `wanted` features for row `index`, in the order requested.
    pub fn project(&self, index: usize, wanted: &[Qmf]) -> Result<Vec<f64>> {
        let row = &self.rows[index].2;
        wanted
            .iter()
            .map(|name| {
                self.features
                    .iter()
                    .position(|f| f == name)
                    .map(|col| row[col])
                    .ok_or_else(|| Error::MissingFeature(name.to_string()))
            })
            .collect()
    }
}

pub fn parse_qmf(text: &str) -> Result<QmfTable> {
    let mut lines = content_lines(text);
    let Some((header_no, header)) = lines.next() else {
        return Ok(QmfTable::default());
    };
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("features") {
        return Err(Error::parse(
            header_no,
            K::Malformed("expected `features <name>...` header".into()),
        ));
    }
    let features = tokens
        .map(|t| {
            t.parse::<Qmf>()
                .map_err(|_| Error::UnknownFeature(t.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let mut tokens = line.split_ascii_whitespace();
        let (Some(e), Some(t)) = (tokens.next(), tokens.next()) else {
            return Err(Error::parse(
                line_no,
                K::Malformed("missing trial ids".into()),
            ));
        };
        let values = parse_values(tokens, line_no)?;
        if values.len() != features.len() {
            return Err(Error::parse(
                line_no,
                K::DimensionMismatch {
                    expected: features.len(),
                    found: values.len(),
                },
            ));
        }
        rows.push((e.to_string(), t.to_string(), values));
    }
    Ok(QmfTable { features, rows })
}

pub fn format_qmf(table: &QmfTable) -> String {
    let mut out = String::from("features");
    for f in &table.features {
        out.push(' ');
        out.push_str(f.name());
    }
    out.push('\n');
    for (e, t, values) in &table.rows {
        out.push_str(e);
        out.push(' ');
        out.push_str(t);
        for v in values {
            out.push(' ');
            out.push_str(&format_sig9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn load_qmf(path: impl AsRef<Path>) -> Result<QmfTable> {
    parse_qmf(&read(path.as_ref())?)
}

pub fn save_qmf(path: impl AsRef<Path>, table: &QmfTable) -> Result<()> {
    write(path.as_ref(), &format_qmf(table))
}

// ------------------------------------------------------------ model and labels

/// Model parameters are written in shortest round-trip form so that a loaded
/// model reproduces the fitted one bit for bit.
pub fn format_model(model: &CalibrationModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "w_s {:?}", model.w_s);
    let _ = writeln!(out, "b {:?}", model.b);
    let _ = writeln!(out, "prior {:?}", model.effective_prior);
    for (name, w) in model.feature_names.iter().zip(&model.w_q) {
        let _ = writeln!(out, "w_q:{} {:?}", name.name(), w);
    }
    out
}

pub fn parse_model(text: &str) -> Result<CalibrationModel> {
    let mut w_s = None;
    let mut b = None;
    let mut prior = None;
    let mut names = Vec::new();
    let mut weights = Vec::new();
    for (line_no, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        let [key, value] = fields[..] else {
            return Err(Error::parse(
                line_no,
                K::Malformed(format!(
                    "expected `key value`, found {} fields",
                    fields.len()
                )),
            ));
        };
        let value = parse_f64(value, line_no)?;
        let slot = match key {
            "w_s" => &mut w_s,
            "b" => &mut b,
            "prior" => &mut prior,
            _ => {
                let Some(name) = key.strip_prefix("w_q:") else {
                    return Err(Error::parse(line_no, K::UnknownKey(key.to_string())));
                };
                let qmf: Qmf = name
                    .parse()
                    .map_err(|_| Error::UnknownFeature(name.to_string()))?;
                if names.contains(&qmf) {
                    return Err(Error::DuplicateFeature(name.to_string()));
                }
                names.push(qmf);
                weights.push(value);
                continue;
            }
        };
        if slot.replace(value).is_some() {
            return Err(Error::parse(line_no, K::DuplicateId(key.to_string())));
        }
    }
    let missing = |k: &str| Error::parse(0, K::Malformed(format!("model file lacks `{k}`")));
    CalibrationModel::new(
        w_s.ok_or_else(|| missing("w_s"))?,
        names,
        weights,
        b.ok_or_else(|| missing("b"))?,
        prior.ok_or_else(|| missing("prior"))?,
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CalibrationModel> {
    parse_model(&read(path.as_ref())?)
}

pub fn save_model(path: impl AsRef<Path>, model: &CalibrationModel) -> Result<()> {
    write(path.as_ref(), &format_model(model))
}

/// `<utt_id> <language>` pairs, e.g. ground-truth spoken languages.
pub fn parse_labels(text: &str) -> Result<Vec<(String, String)>> {
    content_lines(text)
        .map(|(line_no, line)| {
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            match fields[..] {
                [id, value] => Ok((id.to_string(), value.to_string())),
                _ => Err(Error::parse(
                    line_no,
                    K::Malformed(format!("expected 2 fields, found {}", fields.len())),
                )),
            }
        })
        .collect()
}

pub fn format_labels(labels: &[(String, String)]) -> String {
    let mut out = String::new();
    for (id, value) in labels {
        let _ = writeln!(out, "{id} {value}");
    }
    out
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    parse_labels(&read(path.as_ref())?)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[(String, String)]) -> Result<()> {
    write(path.as_ref(), &format_labels(labels))
}

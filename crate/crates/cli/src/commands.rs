use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use xlsv_core::calibration::{fit_arrays, CalibrationModel};
use xlsv_core::data::{attach_predicted_languages, target_flags, Trial};
use xlsv_core::features::{parse_recipe, Qmf, QmfExtractor, QmfSources};
use xlsv_core::io::{self, format_sig9, QmfTable, ScoreLine};
use xlsv_core::metrics::{det_points, eer_from_points, format_histogram, grouped_histogram};
use xlsv_core::metrics::{min_dcf_from_points, DcfParams};
use xlsv_core::sampler::{format_batch_plans, plan_epochs, SamplerConfig};
use xlsv_core::scoring::{build_cohort, score_trials, score_trials_raw};
use xlsv_core::synth::{generate_eval_trials, generate_world};
use xlsv_core::trials::{build_trials, simulate_crops};
use xlsv_core::Error;

use crate::args::*;
use crate::error::{CliError, FileContext};

type Result<T> = std::result::Result<T, CliError>;

/// Maps flag-validation failures to usage errors.
fn flags<T>(r: xlsv_core::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) => CliError::Usage(msg),
        other => CliError::Data(other),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn recipe_flag(s: &str) -> Result<Vec<Qmf>> {
    parse_recipe(s).map_err(|e| CliError::Usage(format!("--recipe: {e}")))
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::BuildTrials(a) => build_trial_list(a),
        Command::Score(a) => score(a),
        Command::Qmf(a) => qmf(a),
        Command::CalibFit(a) => calib_fit(a),
        Command::CalibApply(a) => calib_apply(a),
        Command::Evaluate(a) => evaluate(a).map(|_| ()),
        Command::Hist(a) => hist(a),
        Command::SampleBatches(a) => sample_batches(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

/// File names written by `gen-synth`, relative to its output directory.
pub mod synth_files {
    pub const METADATA: &str = "metadata.txt";
    pub const SPEAKER_EMBEDDINGS: &str = "speaker_embeddings.txt";
    pub const LANGUAGE_EMBEDDINGS: &str = "language_embeddings.txt";
    pub const POSTERIORS: &str = "posteriors.txt";
    pub const TRUE_LANGUAGES: &str = "true_languages.txt";
    pub const COHORT_METADATA: &str = "cohort_metadata.txt";
    pub const CALIB_METADATA: &str = "calib_metadata.txt";
    pub const EVAL_METADATA: &str = "eval_metadata.txt";
    pub const EVAL_TRIALS: &str = "eval_trials.txt";
}

pub fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    use synth_files::*;
    let cfg = a.world.config(a.seed);
    flags(cfg.validate())?;
    let w = &a.world;
    if w.cohort_speakers + w.calib_speakers >= w.n_speakers {
        return Err(CliError::Usage(format!(
            "cohort ({}) and calibration ({}) speakers leave no evaluation speakers out of {}",
            w.cohort_speakers, w.calib_speakers, w.n_speakers
        )));
    }
    let world = generate_world(&cfg)?;
    let eval_size = w.n_speakers - w.cohort_speakers - w.calib_speakers;
    let splits = world.split(&[w.cohort_speakers, w.calib_speakers, eval_size])?;
    let eval = generate_eval_trials(&splits[2], w.eval_trials_per_cell, a.seed.wrapping_add(1))?;

    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Data(Error::Io {
            path: dir.clone(),
            source,
        })
    })?;
    io::save_metadata(dir.join(METADATA), &world.metadata)?;
    io::save_embeddings(dir.join(SPEAKER_EMBEDDINGS), &world.speaker_embeddings)?;
    io::save_embeddings(dir.join(LANGUAGE_EMBEDDINGS), &world.lang_embeddings)?;
    io::save_posteriors(dir.join(POSTERIORS), &world.posteriors)?;
    io::save_labels(dir.join(TRUE_LANGUAGES), &world.true_language_labels())?;
    io::save_metadata(dir.join(COHORT_METADATA), &splits[0].metadata)?;
    io::save_metadata(dir.join(CALIB_METADATA), &splits[1].metadata)?;
    io::save_metadata(dir.join(EVAL_METADATA), &splits[2].metadata)?;
    io::save_trials(dir.join(EVAL_TRIALS), &eval.trials)?;
    info!(
        "generated {} utterances of {} speakers; {} evaluation trials",
        world.metadata.len(),
        w.n_speakers,
        eval.trials.len()
    );
    Ok(())
}

pub fn build_trial_list(a: &BuildTrialsArgs) -> Result<()> {
    let cfg = a.trials.config(a.seed);
    flags(cfg.validate())?;
    let metadata = io::load_metadata(&a.metadata).in_file(&a.metadata)?;
    let posteriors = io::load_posteriors(&a.posteriors).in_file(&a.posteriors)?;
    let lang = io::load_embeddings(&a.lang_embeddings).in_file(&a.lang_embeddings)?;

    let cropped = simulate_crops(&metadata, &cfg)?;
    let set = build_trials(&cropped, &lang, &posteriors, &cfg)?;
    if set.stats.shortfall {
        warn!(
            "only {} of {} requested trials could be selected",
            set.stats.selected.iter().sum::<usize>(),
            cfg.total_trials
        );
    }
    let dist: Vec<ScoreLine> = set
        .trials
        .iter()
        .zip(&set.lang_distance)
        .map(|(t, &d)| ScoreLine::new(&t.enroll_id, &t.test_id, d))
        .collect();
    io::save_trials(&a.out, &set.trials)?;
    io::save_score_lines(&a.dist_out, &dist)?;
    io::save_metadata(&a.metadata_out, &cropped)?;
    info!(
        "{} trials written ({} targets and {} nontargets discarded)",
        set.trials.len(),
        set.stats.discarded_targets,
        set.stats.discarded_nontargets
    );
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let cfg = a.snorm.config();
    flags(cfg.validate())?;
    let trials = io::load_trials(&a.trials).in_file(&a.trials)?;
    let embeddings = io::load_embeddings(&a.embeddings).in_file(&a.embeddings)?;
    let scored = if a.snorm.snorm {
        let cohort_meta_path = a
            .cohort_metadata
            .as_ref()
            .ok_or_else(|| CliError::Usage("--snorm true needs --cohort-metadata".into()))?;
        let cohort_meta = io::load_metadata(cohort_meta_path).in_file(cohort_meta_path)?;
        let cohort_emb = match &a.cohort_embeddings {
            Some(p) => Some(io::load_embeddings(p).in_file(p)?),
            None => None,
        };
        let build = build_cohort(cohort_emb.as_ref().unwrap_or(&embeddings), &cohort_meta)?;
        if build.skipped_speakers > 0 {
            warn!(
                "{} cohort speakers have no embedding and were skipped",
                build.skipped_speakers
            );
        }
        score_trials(&trials, &embeddings, &build.cohort, &cfg)?
    } else {
        score_trials_raw(&trials, &embeddings)?
    };
    io::save_scores(&a.out, &scored)?;
    info!("{} trials scored", scored.len());
    Ok(())
}

pub fn qmf(a: &QmfArgs) -> Result<()> {
    let recipe = recipe_flag(&a.recipe)?;
    let trials = io::load_trials(&a.trials).in_file(&a.trials)?;
    let metadata = match &a.metadata {
        Some(p) => Some(io::load_metadata(p).in_file(p)?),
        None => None,
    };
    let posteriors = match &a.posteriors {
        Some(p) => Some(io::load_posteriors(p).in_file(p)?),
        None => None,
    };
    let lang = match &a.lang_embeddings {
        Some(p) => Some(io::load_embeddings(p).in_file(p)?),
        None => None,
    };
    let sources = QmfSources {
        metadata: metadata.as_deref(),
        posteriors: posteriors.as_ref(),
        lang_embeddings: lang.as_ref(),
    };
    let extractor = flags(QmfExtractor::new(&recipe, sources))?;
    let mut table = QmfTable {
        features: recipe,
        rows: Vec::with_capacity(trials.len()),
    };
    for t in &trials {
        let values = extractor.compute(&t.enroll_id, &t.test_id)?;
        table
            .rows
            .push((t.enroll_id.clone(), t.test_id.clone(), values));
    }
    io::save_qmf(&a.out, &table)?;
    Ok(())
}

/// Feature rows for `scores` in `recipe` order, checked against trial ids.
fn feature_rows(
    qmf_path: Option<&PathBuf>,
    recipe: &[Qmf],
    scores: &[ScoreLine],
) -> Result<Vec<Vec<f64>>> {
    if recipe.is_empty() {
        return Ok(vec![Vec::new(); scores.len()]);
    }
    let path = qmf_path
        .ok_or_else(|| CliError::Usage("a non-empty recipe needs a --qmf feature file".into()))?;
    let table = io::load_qmf(path).in_file(path)?;
    if table.rows.len() != scores.len() {
        return Err(Error::LengthMismatch(table.rows.len(), scores.len())).in_file(path);
    }
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (e, t, _) = &table.rows[i];
            if *e != s.enroll_id || *t != s.test_id {
                return Err(Error::KeyMismatch {
                    index: i,
                    expected: format!("{} {}", s.enroll_id, s.test_id),
                    found: format!("{e} {t}"),
                })
                .in_file(path);
            }
            table.project(i, recipe).in_file(path)
        })
        .collect()
}

fn load_aligned(scores_path: &Path, trials_path: &Path) -> Result<(Vec<ScoreLine>, Vec<Trial>)> {
    let scores = io::load_scores(scores_path).in_file(scores_path)?;
    let trials = io::load_trials(trials_path).in_file(trials_path)?;
    io::check_alignment(&scores, &trials).in_file(scores_path)?;
    Ok((scores, trials))
}

pub fn calib_fit(a: &CalibFitArgs) -> Result<()> {
    let recipe = recipe_flag(&a.recipe)?;
    let cfg = a.fit.config();
    let (scores, trials) = load_aligned(&a.scores, &a.trials)?;
    let targets = target_flags(&trials).in_file(&a.trials)?;
    let features = feature_rows(a.qmf.as_ref(), &recipe, &scores)?;
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let model = flags(fit_arrays(&values, &features, &targets, &recipe, &cfg))?;
    io::save_model(&a.out, &model)?;
    info!(
        "fitted w_s {} b {} on {} trials",
        format_sig9(model.w_s),
        format_sig9(model.b),
        scores.len()
    );
    Ok(())
}

/// Calibrated LLR per score line.
pub fn apply_model(
    model: &CalibrationModel,
    scores: &[ScoreLine],
    features: &[Vec<f64>],
) -> Result<Vec<ScoreLine>> {
    scores
        .iter()
        .zip(features)
        .map(|(s, q)| {
            let llr = model.apply(s.score, q)?;
            Ok(ScoreLine::new(&s.enroll_id, &s.test_id, llr))
        })
        .collect()
}

pub fn calib_apply(a: &CalibApplyArgs) -> Result<()> {
    let model = io::load_model(&a.model).in_file(&a.model)?;
    if let Some(r) = &a.recipe {
        model.check_recipe(&recipe_flag(r)?).in_file(&a.model)?;
    }
    let scores = io::load_scores(&a.scores).in_file(&a.scores)?;
    let features = feature_rows(a.qmf.as_ref(), &model.feature_names, &scores)?;
    let llrs = apply_model(&model, &scores, &features)?;
    io::save_score_lines(&a.out, &llrs)?;
    Ok(())
}

/// Report text: `eer <v>` then one `min_dcf@<p> <v>` line per prior.
pub fn evaluation_report(scores: &[f64], targets: &[bool], metric: &MetricArgs) -> Result<String> {
    let params = metric
        .p_target
        .iter()
        .map(|&p| flags(DcfParams::new(p, metric.c_fa, metric.c_miss)))
        .collect::<Result<Vec<_>>>()?;
    let points = det_points(scores, targets)?;
    let mut out = String::new();
    let _ = writeln!(out, "eer {:.9}", eer_from_points(&points));
    for (p, params) in metric.p_target.iter().zip(&params) {
        let _ = writeln!(
            out,
            "min_dcf@{} {:.9}",
            format_sig9(*p),
            min_dcf_from_points(&points, params)
        );
    }
    Ok(out)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<String> {
    let (scores, trials) = load_aligned(&a.scores, &a.trials)?;
    let targets = target_flags(&trials).in_file(&a.trials)?;
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let report = evaluation_report(&values, &targets, &a.metric)?;
    match &a.out {
        Some(path) => write_text(path, &report)?,
        None => print!("{report}"),
    }
    Ok(report)
}

pub fn hist(a: &HistArgs) -> Result<()> {
    if !(a.bin_width > 0.0 && a.bin_width.is_finite()) {
        return Err(CliError::Usage(format!(
            "--bin-width must be positive, got {}",
            a.bin_width
        )));
    }
    let (scores, trials) = load_aligned(&a.scores, &a.trials)?;
    let targets = target_flags(&trials).in_file(&a.trials)?;
    let language_of: HashMap<String, String> = match (&a.languages, &a.posteriors) {
        (Some(p), _) => io::load_labels(p).in_file(p)?.into_iter().collect(),
        (None, Some(p)) => {
            let post = io::load_posteriors(p).in_file(p)?;
            post.iter()
                .map(|(id, probs)| {
                    let l = xlsv_core::features::argmax(probs);
                    (id.to_string(), post.languages()[l].clone())
                })
                .collect()
        }
        (None, None) => unreachable!("clap requires a language source"),
    };
    let lookup = |id: &str| {
        language_of.get(id).ok_or_else(|| {
            CliError::Data(Error::Missing {
                what: "language",
                id: id.to_string(),
            })
        })
    };
    let crosslingual = trials
        .iter()
        .map(|t| Ok(lookup(&t.enroll_id)? != lookup(&t.test_id)?))
        .collect::<Result<Vec<bool>>>()?;
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let h = grouped_histogram(&values, &targets, &crosslingual, a.bin_width)?;
    write_text(&a.out, &format_histogram(&h))
}

pub fn sample_batches(a: &SampleBatchesArgs) -> Result<()> {
    let cfg = SamplerConfig {
        speakers_per_batch: a.sampler.speakers_per_batch,
        utterances_per_speaker: a.sampler.utterances_per_speaker,
        seed: a.seed,
        drop_last: a.sampler.drop_last,
    };
    flags(cfg.validate())?;
    let mut metadata = io::load_metadata(&a.metadata).in_file(&a.metadata)?;
    let posteriors = io::load_posteriors(&a.posteriors).in_file(&a.posteriors)?;
    attach_predicted_languages(&mut metadata, &posteriors).in_file(&a.posteriors)?;
    let plans = plan_epochs(&metadata, &cfg, a.sampler.iterations)?;
    for (i, p) in plans.iter().enumerate() {
        if p.stats.excluded_speakers > 0 {
            warn!(
                "iteration {i}: {} speakers have fewer than {} utterances",
                p.stats.excluded_speakers, cfg.utterances_per_speaker
            );
        }
    }
    write_text(&a.out, &format_batch_plans(&plans))
}

/// File names written by `pipeline` in addition to the `gen-synth` set.
pub mod pipeline_files {
    pub const CALIB_TRIALS: &str = "calib_trials.txt";
    pub const CALIB_DIST: &str = "calib_trials.dist";
    pub const CALIB_CROPPED: &str = "calib_metadata_cropped.txt";
    pub const CALIB_SCORES: &str = "calib_scores.txt";
    pub const CALIB_QMF: &str = "calib_qmf.txt";
    pub const MODEL: &str = "model.txt";
    pub const EVAL_SCORES: &str = "eval_scores.txt";
    pub const EVAL_QMF: &str = "eval_qmf.txt";
    pub const EVAL_LLR: &str = "eval_llr.txt";
    pub const REPORT_RAW: &str = "report_scores.txt";
    pub const REPORT: &str = "report.txt";
    pub const HIST: &str = "hist.txt";
    pub const BATCHES: &str = "batches.txt";
}

/// gen-synth, then calibration trials, scoring, features, fit, apply,
/// evaluation of normalized scores and LLRs, histogram and a batch plan,
/// each stage going through its files.
pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    use pipeline_files::*;
    use synth_files::*;
    let dir = &a.out_dir;
    let p = |name: &str| dir.join(name);
    recipe_flag(&a.recipe)?;

    gen_synth(&GenSynthArgs {
        out_dir: dir.clone(),
        seed: a.seed,
        world: a.world.clone(),
    })?;
    build_trial_list(&BuildTrialsArgs {
        metadata: p(CALIB_METADATA),
        posteriors: p(POSTERIORS),
        lang_embeddings: p(LANGUAGE_EMBEDDINGS),
        seed: a.seed,
        trials: a.trials.clone(),
        out: p(CALIB_TRIALS),
        dist_out: p(CALIB_DIST),
        metadata_out: p(CALIB_CROPPED),
    })?;
    for (trials, out) in [(CALIB_TRIALS, CALIB_SCORES), (EVAL_TRIALS, EVAL_SCORES)] {
        score(&ScoreArgs {
            trials: p(trials),
            embeddings: p(SPEAKER_EMBEDDINGS),
            cohort_metadata: Some(p(COHORT_METADATA)),
            cohort_embeddings: None,
            snorm: a.snorm.clone(),
            out: p(out),
        })?;
    }
    for (trials, metadata, out) in [
        (CALIB_TRIALS, CALIB_CROPPED, CALIB_QMF),
        (EVAL_TRIALS, METADATA, EVAL_QMF),
    ] {
        qmf(&QmfArgs {
            trials: p(trials),
            recipe: a.recipe.clone(),
            metadata: Some(p(metadata)),
            posteriors: Some(p(POSTERIORS)),
            lang_embeddings: Some(p(LANGUAGE_EMBEDDINGS)),
            out: p(out),
        })?;
    }
    calib_fit(&CalibFitArgs {
        scores: p(CALIB_SCORES),
        trials: p(CALIB_TRIALS),
        qmf: Some(p(CALIB_QMF)),
        recipe: a.recipe.clone(),
        fit: a.fit.clone(),
        out: p(MODEL),
    })?;
    calib_apply(&CalibApplyArgs {
        scores: p(EVAL_SCORES),
        model: p(MODEL),
        qmf: Some(p(EVAL_QMF)),
        recipe: Some(a.recipe.clone()),
        out: p(EVAL_LLR),
    })?;
    for (scores, out) in [(EVAL_SCORES, REPORT_RAW), (EVAL_LLR, REPORT)] {
        let report = evaluate(&EvaluateArgs {
            scores: p(scores),
            trials: p(EVAL_TRIALS),
            metric: a.metric.clone(),
            out: Some(p(out)),
        })?;
        info!("{scores}: {}", report.trim_end().replace('\n', ", "));
    }
    hist(&HistArgs {
        scores: p(EVAL_SCORES),
        trials: p(EVAL_TRIALS),
        languages: Some(p(TRUE_LANGUAGES)),
        posteriors: None,
        bin_width: a.bin_width,
        out: p(HIST),
    })?;
    sample_batches(&SampleBatchesArgs {
        metadata: p(CALIB_METADATA),
        posteriors: p(POSTERIORS),
        seed: a.seed,
        sampler: a.sampler.clone(),
        out: p(BATCHES),
    })
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xlsv_core::calibration::{fit, fit_arrays, logit, sigmoid, CalibrationProblem, FitConfig};
use xlsv_core::data::{target_flags, Gender, PosteriorTable, Utterance};
use xlsv_core::features::{js_distance, Qmf, QmfExtractor, QmfSources};
use xlsv_core::metrics::{eer, grouped_histogram, min_dcf, DcfParams, ScoreGroup};
use xlsv_core::sampler::{plan_iteration, BatchPlan, SamplerConfig};
use xlsv_core::scoring::{adaptive_s_norm, build_cohort, score_trials, SNormConfig};
use xlsv_core::synth::{generate_eval_trials, generate_world, World, WorldConfig};
use xlsv_core::trials::{build_trials, enumerate_candidates, TrialBuildConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------
// 1. metrics against a brute-force threshold sweep

fn midpoint_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut t = vec![f64::NEG_INFINITY];
    t.extend(s.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    t.push(f64::INFINITY);
    t
}

fn error_rates(scores: &[f64], targets: &[bool], t: f64) -> (f64, f64) {
    let nt = targets.iter().filter(|&&x| x).count() as f64;
    let nn = targets.len() as f64 - nt;
    let miss = scores
        .iter()
        .zip(targets)
        .filter(|(s, &y)| y && **s < t)
        .count() as f64;
    let fa = scores
        .iter()
        .zip(targets)
        .filter(|(s, &y)| !y && **s >= t)
        .count() as f64;
    (miss / nt, fa / nn)
}

fn oracle_eer(scores: &[f64], targets: &[bool]) -> f64 {
    let pts: Vec<(f64, f64)> = midpoint_thresholds(scores)
        .into_iter()
        .map(|t| error_rates(scores, targets, t))
        .collect();
    let k = pts.iter().position(|(m, f)| m >= f).unwrap();
    let (m1, f1) = pts[k];
    if k == 0 || m1 == f1 {
        return m1;
    }
    let (m0, f0) = pts[k - 1];
    let a = (f0 - m0) / ((m1 - m0) - (f1 - f0));
    m0 + a * (m1 - m0)
}

fn oracle_min_dcf(scores: &[f64], targets: &[bool], p: f64) -> f64 {
    let norm = p.min(1.0 - p);
    midpoint_thresholds(scores)
        .into_iter()
        .map(|t| {
            let (m, f) = error_rates(scores, targets, t);
            (p * m + (1.0 - p) * f) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let sets = 200;
    for k in 0..sets {
        let n = rng.random_range(2..=500);
        let mut targets: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        targets[0] = true;
        targets[1] = false;
        targets.shuffle(&mut rng);
        // Every other set lives on a coarse grid so ties are common.
        let scores: Vec<f64> = targets
            .iter()
            .map(|&t| {
                let v: f64 = rng.sample::<f64, _>(StandardNormal) + if t { 1.0 } else { 0.0 };
                if k % 2 == 0 {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            })
            .collect();
        worst = worst.max((eer(&scores, &targets).unwrap() - oracle_eer(&scores, &targets)).abs());
        for p in [0.01, 0.05] {
            let got = min_dcf(&scores, &targets, &DcfParams::with_prior(p).unwrap()).unwrap();
            worst = worst.max((got - oracle_min_dcf(&scores, &targets, p)).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-12 && elapsed < Duration::from_secs(30),
        format!("{sets} sets, max |diff| {worst:.2e}, {:.2}s", secs(elapsed)),
    )
}

// ---------------------------------------------------------------------------
// 2. JS distance

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn criterion_js() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=8);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let r = random_distribution(&mut rng, n);
        let d = |a: &[f64], b: &[f64]| js_distance(a, b).unwrap();
        let (pq, qr, pr) = (d(&p, &q), d(&q, &r), d(&p, &r));
        let ok = pq >= 0.0
            && d(&p, &p) == 0.0
            && (p == q || pq > 0.0)
            && pq == d(&q, &p)
            && pr <= pq + qr + 1e-12;
        if !ok {
            violations += 1;
        }
    }
    let examples = [
        (js_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0),
        (
            js_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            2f64.ln().sqrt(),
        ),
        (
            js_distance(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            (0.75 * (4.0f64 / 3.0).ln()).sqrt(),
        ),
    ];
    let worst = examples
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        violations == 0 && worst < 1e-9,
        format!("10000 triples, {violations} axiom violations, examples max |diff| {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. calibration optimizer

fn gradient_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let k = case % 3;
        let n = 80;
        let targets: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let scores: Vec<f64> = targets
            .iter()
            .map(|&t| rng.sample::<f64, _>(StandardNormal) + if t { 1.5 } else { -0.5 })
            .collect();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let problem = CalibrationProblem::new(&scores, &features, &targets, 0.05, 1e-3).unwrap();
        let theta: Vec<f64> = (0..problem.dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let g = problem.gradient(&theta);
        let mut fd = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = 1e-5 * (1.0 + theta[i].abs());
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[i] += h;
            down[i] -= h;
            fd[i] = (problem.objective(&up) - problem.objective(&down)) / (2.0 * h);
        }
        let num = fd
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    worst
}

/// Fits labels drawn from sigmoid(w_s s + w_q q + b + logit(prior)). The
/// weights come back unchanged; the bias absorbs the difference between the
/// generating prior and the empirical target fraction, because the fit
/// reweights classes to the configured prior.
fn recovery(seed: u64) -> (f64, f64, f64) {
    let (ws, wq, b, prior) = (1.0, -1.5, 1.0, 0.05);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut q, mut y) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let x = 2.0 * rng.sample::<f64, _>(StandardNormal);
        let f: f64 = rng.sample(StandardNormal);
        let p = sigmoid(ws * x + wq * f + b + logit(prior));
        y.push(rng.random::<f64>() < p);
        s.push(x);
        q.push(vec![f]);
    }
    let rho = y.iter().filter(|&&t| t).count() as f64 / n as f64;
    let cfg = FitConfig {
        effective_prior: prior,
        ..Default::default()
    };
    let m = fit_arrays(&s, &q, &y, &[Qmf::LangJs], &cfg).unwrap();
    let b_expected = b + logit(prior) - logit(rho);
    (
        (m.w_s / ws - 1.0).abs(),
        (m.w_q[0] / wq - 1.0).abs(),
        (m.b / b_expected - 1.0).abs(),
    )
}

fn criterion_calibration() -> Outcome {
    let grad = gradient_check();
    let (es, eq, eb) = recovery(7);

    let a = 1.5;
    let scores: Vec<f64> = (0..200).map(|i| if i < 100 { a } else { -a }).collect();
    let targets: Vec<bool> = (0..200).map(|i| i < 100).collect();
    let cfg = FitConfig {
        effective_prior: 0.5,
        ..Default::default()
    };
    let sym = fit_arrays(&scores, &vec![Vec::new(); 200], &targets, &[], &cfg).unwrap();

    outcome(
        grad < 1e-6 && es < 0.02 && eq < 0.02 && sym.b.abs() < 1e-6,
        format!(
            "fd rel err {grad:.2e}; recovery rel err w_s {:.2}% w_q {:.2}% (b {:.2}%, informational); symmetric |b| {:.2e}",
            100.0 * es,
            100.0 * eq,
            100.0 * eb,
            sym.b.abs()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4 and 5. directional reproduction on the synthetic world

const RECIPES: [(&str, &[Qmf]); 4] = [
    ("score-only", &[]),
    ("binary", &[Qmf::LangBinary]),
    ("js", &[Qmf::LangJs]),
    ("emb-cos", &[Qmf::LangEmbCos]),
];

struct SeedResult {
    eer: [f64; 4],
    /// Target same-language minus target cross-lingual mean LLR, per recipe.
    llr_gap: [f64; 4],
    /// The same gap on s-normalized scores and its standard error.
    score_gap: (f64, f64),
}

fn target_gap(values: &[f64], targets: &[bool], cross: &[bool], bin_width: f64) -> (f64, f64) {
    let h = grouped_histogram(values, targets, cross, bin_width).unwrap();
    let (_, c) = h.group(ScoreGroup::TargetCrossLingual);
    let (_, s) = h.group(ScoreGroup::TargetSameLanguage);
    (s.mean - c.mean, c.std_error.hypot(s.std_error))
}

fn sources<'a>(meta: &'a [Utterance], w: &'a World) -> QmfSources<'a> {
    QmfSources {
        metadata: Some(meta),
        posteriors: Some(&w.posteriors),
        lang_embeddings: Some(&w.lang_embeddings),
    }
}

fn run_seed(seed: u64) -> SeedResult {
    let world = generate_world(&WorldConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    let parts = world.split(&[150, 225, 225]).unwrap();
    let (cohort_w, calib, eval) = (&parts[0], &parts[1], &parts[2]);
    let cohort = build_cohort(&cohort_w.speaker_embeddings, &cohort_w.metadata)
        .unwrap()
        .cohort;
    let snorm = SNormConfig {
        top_n: 100,
        ..Default::default()
    };

    let calib_meta = calib.metadata_with_predictions();
    let built = build_trials(
        &calib_meta,
        &calib.lang_embeddings,
        &calib.posteriors,
        &TrialBuildConfig {
            total_trials: 20_000,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let mut calib_scored =
        score_trials(&built.trials, &calib.speaker_embeddings, &cohort, &snorm).unwrap();

    let eval_meta = eval.metadata_with_predictions();
    let et = generate_eval_trials(eval, 1500, seed + 1).unwrap();
    let mut eval_scored =
        score_trials(&et.trials, &eval.speaker_embeddings, &cohort, &snorm).unwrap();
    let targets = target_flags(&et.trials).unwrap();

    let normed: Vec<f64> = eval_scored.iter().map(|t| t.final_score()).collect();
    let score_gap = target_gap(&normed, &targets, &et.crosslingual, 0.1);

    let mut out = SeedResult {
        eer: [0.0; 4],
        llr_gap: [0.0; 4],
        score_gap,
    };
    for (k, (_, recipe)) in RECIPES.iter().enumerate() {
        QmfExtractor::new(recipe, sources(&calib_meta, calib))
            .unwrap()
            .annotate(&mut calib_scored)
            .unwrap();
        let model = fit(&calib_scored, recipe, &FitConfig::default()).unwrap();
        QmfExtractor::new(recipe, sources(&eval_meta, eval))
            .unwrap()
            .annotate(&mut eval_scored)
            .unwrap();
        let llr: Vec<f64> = eval_scored
            .iter()
            .map(|t| model.apply_trial(t, false).unwrap())
            .collect();
        out.eer[k] = eer(&llr, &targets).unwrap();
        out.llr_gap[k] = target_gap(&llr, &targets, &et.crosslingual, 0.5).0;
    }
    out
}

struct Experiment {
    seeds: Vec<SeedResult>,
    elapsed: Duration,
}

fn experiment() -> Experiment {
    let start = Instant::now();
    let seeds = (0..5).map(run_seed).collect();
    Experiment {
        seeds,
        elapsed: start.elapsed(),
    }
}

fn mean_eer(x: &Experiment) -> [f64; 4] {
    let n = x.seeds.len() as f64;
    std::array::from_fn(|k| x.seeds.iter().map(|s| s.eer[k]).sum::<f64>() / n)
}

/// Index of the language-aware recipe with the lower mean EER.
fn best_language_recipe(avg: &[f64; 4]) -> usize {
    if avg[2] <= avg[3] {
        2
    } else {
        3
    }
}

fn criterion_eer_ordering(x: &Experiment) -> Outcome {
    let avg = mean_eer(x);
    let best = best_language_recipe(&avg);
    let rel = 1.0 - avg[best] / avg[0];
    let pass = avg[0] > avg[1]
        && avg[1] > avg[best]
        && rel >= 0.15
        && x.elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "mean EER score-only {:.4} > binary {:.4} > {} {:.4} (js {:.4}, emb-cos {:.4}); {:.1}% relative; {:.1}s",
            avg[0],
            avg[1],
            RECIPES[best].0,
            avg[best],
            avg[2],
            avg[3],
            100.0 * rel,
            secs(x.elapsed)
        ),
    )
}

fn criterion_shift(x: &Experiment) -> Outcome {
    let min_z = x
        .seeds
        .iter()
        .map(|s| s.score_gap.0 / s.score_gap.1)
        .fold(f64::INFINITY, f64::min);
    let total = |k: usize| x.seeds.iter().map(|s| s.llr_gap[k].abs()).sum::<f64>();
    let shrink = |k: usize| 1.0 - total(k) / total(0);
    let best = best_language_recipe(&mean_eer(x));
    outcome(
        min_z > 3.0 && shrink(best) >= 0.5,
        format!(
            "score gap >= {min_z:.1} SE on every seed; LLR gap shrink with {} {:.1}% (binary {:.1}%, js {:.1}%, emb-cos {:.1}%)",
            RECIPES[best].0,
            100.0 * shrink(best),
            100.0 * shrink(1),
            100.0 * shrink(2),
            100.0 * shrink(3)
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. sampler invariants

fn random_sampler_world(rng: &mut ChaCha8Rng) -> Vec<Utterance> {
    let n_speakers = rng.random_range(80..200);
    let n_langs = rng.random_range(2..6);
    let mut out = Vec::new();
    for s in 0..n_speakers {
        let n_utts = rng.random_range(1..14);
        let spoken: Vec<usize> = (0..rng.random_range(1..=n_langs.min(3)))
            .map(|_| rng.random_range(0..n_langs))
            .collect();
        for k in 0..n_utts {
            let mut u = Utterance::new(
                format!("s{s:03}u{k:02}"),
                format!("s{s:03}"),
                4.0,
                Gender::Female,
                "v",
            );
            u.predicted_language = Some(spoken[rng.random_range(0..spoken.len())]);
            out.push(u);
        }
    }
    out
}

fn has_cross_pair(langs: &[usize]) -> bool {
    langs.iter().any(|&l| l != langs[0])
}

fn check_plan(utts: &[Utterance], cfg: &SamplerConfig, plan: &BatchPlan) -> Result<(), String> {
    let lang_of: HashMap<&str, usize> = utts
        .iter()
        .map(|u| (u.utt_id.as_str(), u.predicted_language.unwrap()))
        .collect();
    let mut count: HashMap<&str, usize> = HashMap::new();
    for u in utts {
        *count.entry(u.speaker_id.as_str()).or_default() += 1;
    }
    let eligible: HashSet<&str> = count
        .iter()
        .filter(|(_, &c)| c >= cfg.utterances_per_speaker)
        .map(|(s, _)| *s)
        .collect();

    let mut seen = HashSet::new();
    let (mut cross, mut fallback) = (0, 0);
    for b in &plan.batches {
        if b.utterances.len() != cfg.batch_size() {
            return Err("batch size differs from S*U".into());
        }
        for spk in &b.speakers {
            if !eligible.contains(spk.as_str()) || !seen.insert(spk.clone()) {
                return Err(format!("speaker {spk} ineligible or repeated"));
            }
            let mut remaining: Vec<(&str, usize)> = utts
                .iter()
                .filter(|u| u.speaker_id == *spk)
                .map(|u| (u.utt_id.as_str(), u.predicted_language.unwrap()))
                .collect();
            for p in b.pairs.iter().filter(|p| p.speaker == *spk) {
                let truly = lang_of[p.first.as_str()] != lang_of[p.second.as_str()];
                if p.crosslingual && !truly {
                    return Err("flagged pair is not cross-lingual".into());
                }
                if p.crosslingual {
                    cross += 1;
                } else {
                    fallback += 1;
                    let langs: Vec<usize> = remaining.iter().map(|r| r.1).collect();
                    if has_cross_pair(&langs) {
                        return Err("fallback although a cross-lingual pair was available".into());
                    }
                }
                for id in [&p.first, &p.second] {
                    let pos = remaining
                        .iter()
                        .position(|r| r.0 == id)
                        .ok_or("utterance reused")?;
                    remaining.remove(pos);
                }
            }
        }
    }
    // With drop_last, only a final partial group of speakers may be missing.
    if seen.len() + plan.stats.dropped_speakers != eligible.len()
        || plan.stats.dropped_speakers >= cfg.speakers_per_batch
    {
        return Err("eligible speakers not placed exactly once".into());
    }
    if cross != plan.stats.crosslingual_pairs || fallback != plan.stats.fallback_pairs {
        return Err("stats disagree with pairs".into());
    }
    Ok(())
}

fn criterion_sampler() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    let mut plans = 0;
    for w in 0..50 {
        let utts = random_sampler_world(&mut rng);
        for (s, u) in [(16, 8), (32, 4), (64, 2)] {
            let cfg = SamplerConfig::new(s, u, rng.random());
            match plan_iteration(&utts, &cfg) {
                Ok(plan) => {
                    plans += 1;
                    if let Err(e) = check_plan(&utts, &cfg, &plan) {
                        failures.push(format!("world {w} {s}/{u}: {e}"));
                    }
                    if plan_iteration(&utts, &cfg).unwrap() != plan {
                        failures.push(format!("world {w} {s}/{u}: not deterministic"));
                    }
                }
                Err(e) => failures.push(format!("world {w} {s}/{u}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = match failures.first() {
        None => format!(
            "{plans} plans over 50 worlds, all invariants hold, {:.2}s",
            secs(elapsed)
        ),
        Some(f) => format!("{} failures, first: {f}", failures.len()),
    };
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(30),
        detail,
    )
}

// ---------------------------------------------------------------------------
// 7. s-norm

fn plain_s_norm(raw: f64, enroll: &[f64], test: &[f64]) -> f64 {
    // Textbook statistics over the whole cohort, accumulated in descending
    // order so the floating-point sums match.
    let stats = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (me, se) = stats(enroll);
    let (mt, st) = stats(test);
    0.5 * ((raw - me) / se + (raw - mt) / st)
}

fn criterion_snorm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut mismatches, mut worst_affine, mut worst_typical) = (0, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..300);
        let enroll: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let test: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw = rng.random_range(-1.0..1.0);
        let full = SNormConfig {
            top_n: n,
            ..Default::default()
        };
        if adaptive_s_norm(raw, &enroll, &test, &full).unwrap() != plain_s_norm(raw, &enroll, &test)
        {
            mismatches += 1;
        }
        let cfg = SNormConfig {
            top_n: rng.random_range(2..=n),
            ..Default::default()
        };
        let (a, c) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let map = |v: &[f64]| v.iter().map(|x| a * x + c).collect::<Vec<f64>>();
        let before = adaptive_s_norm(raw, &enroll, &test, &cfg).unwrap();
        let after = adaptive_s_norm(a * raw + c, &map(&enroll), &map(&test), &cfg).unwrap();
        // Inputs a*x + c are themselves rounded, so a near-tied top list
        // (huge |z|) cannot reproduce z to better than a relative 1e-9.
        let diff = (before - after).abs();
        worst_affine = worst_affine.max(diff / before.abs().max(1.0));
        if before.abs() <= 10.0 {
            worst_typical = worst_typical.max(diff);
        }
    }
    let exact = |top_n| SNormConfig {
        top_n,
        ..Default::default()
    };
    let ex1 = adaptive_s_norm(0.5, &[0.1, 0.3], &[0.1, 0.5], &exact(2)).unwrap();
    let ex2 = adaptive_s_norm(
        0.95,
        &[0.9, 0.1, 0.2, 0.8],
        &[0.6, 0.4, 0.2, 0.0],
        &exact(2),
    )
    .unwrap();
    let ex_err = (ex1 - 2.0).abs().max((ex2 - 3.25).abs());
    outcome(
        mismatches == 0 && worst_affine < 1e-9 && ex_err < 1e-12,
        format!(
            "{mismatches}/1000 full-cohort mismatches; affine max |diff|/max(1,|z|) {worst_affine:.2e} (|z| <= 10: max |diff| {worst_typical:.2e}); examples {ex1} and {ex2}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. trial builder

struct UttPlan {
    speaker: usize,
    female: bool,
    session: usize,
    language: usize,
}

fn tiny_world(plans: &[UttPlan]) -> (Vec<Utterance>, PosteriorTable) {
    let mut post = PosteriorTable::new(vec!["a".into(), "b".into(), "c".into()]);
    let utts = plans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let id = format!("u{i:02}");
            let mut p = vec![0.1, 0.1, 0.1];
            p[s.language] = 0.8;
            post.insert(id.clone(), p).unwrap();
            let gender = if s.female {
                Gender::Female
            } else {
                Gender::Male
            };
            Utterance::new(
                id,
                format!("s{}", s.speaker),
                3.0,
                gender,
                format!("s{}v{}", s.speaker, s.session),
            )
        })
        .collect();
    (utts, post)
}

fn enumeration_oracle(plans: &[UttPlan]) -> [BTreeSet<(String, String)>; 4] {
    let mut out: [BTreeSet<(String, String)>; 4] = Default::default();
    for i in 0..plans.len() {
        for j in i + 1..plans.len() {
            let (a, b) = (&plans[i], &plans[j]);
            let target = a.speaker == b.speaker;
            if a.female != b.female || (target && a.session == b.session) {
                continue;
            }
            let g = ScoreGroup::of(target, a.language != b.language);
            out[g.index()].insert((format!("u{i:02}"), format!("u{j:02}")));
        }
    }
    out
}

fn check_enumeration(rng: &mut ChaCha8Rng) -> bool {
    let n = rng.random_range(0..=12);
    let plans: Vec<UttPlan> = (0..n)
        .map(|_| {
            let speaker = rng.random_range(0..4);
            UttPlan {
                speaker,
                female: if rng.random_bool(0.1) {
                    rng.random()
                } else {
                    speaker % 2 == 1
                },
                session: rng.random_range(0..3),
                language: rng.random_range(0..3),
            }
        })
        .collect();
    let (utts, post) = tiny_world(&plans);
    let cand = enumerate_candidates(&utts, &post).unwrap();
    let expect = enumeration_oracle(&plans);
    ScoreGroup::ALL.iter().all(|&g| {
        let got: BTreeSet<(String, String)> = cand
            .stratum(g)
            .iter()
            .map(|&(i, j)| {
                (
                    cand.utt_ids[i as usize].clone(),
                    cand.utt_ids[j as usize].clone(),
                )
            })
            .collect();
        got.len() == cand.stratum(g).len() && got == expect[g.index()]
    })
}

/// Checks a built set against the discard-free set from the same seed.
fn check_contract(seed: u64) -> Result<(), String> {
    let w = generate_world(&WorldConfig {
        n_speakers: 60,
        utts_per_speaker: 6,
        seed,
        ..Default::default()
    })
    .unwrap();
    let meta: HashMap<&str, &Utterance> =
        w.metadata.iter().map(|u| (u.utt_id.as_str(), u)).collect();
    let utts = w.metadata_with_predictions();
    let base = TrialBuildConfig {
        total_trials: 1000,
        seed,
        ..Default::default()
    };
    let kept =
        build_trials(&utts, &w.lang_embeddings, &w.posteriors, &base).map_err(|e| e.to_string())?;
    let all = build_trials(
        &utts,
        &w.lang_embeddings,
        &w.posteriors,
        &TrialBuildConfig {
            discard_fraction: 0.0,
            ..base
        },
    )
    .map_err(|e| e.to_string())?;

    for t in &kept.trials {
        let (e, s) = (meta[t.enroll_id.as_str()], meta[t.test_id.as_str()]);
        if e.gender != s.gender {
            return Err("cross-gender trial".into());
        }
        let target = t.label.is_target() == Some(true);
        if target != (e.speaker_id == s.speaker_id) {
            return Err("label disagrees with speakers".into());
        }
        if target && e.session_id == s.session_id {
            return Err("same-session positive".into());
        }
    }

    let survivors: BTreeSet<String> = kept.trials.iter().map(|t| t.key()).collect();
    for target in [true, false] {
        let (mut gone, mut stay) = (Vec::new(), Vec::new());
        for (t, &d) in all.trials.iter().zip(&all.lang_distance) {
            if t.label.is_target() != Some(target) {
                continue;
            }
            if survivors.contains(&t.key()) {
                stay.push(d)
            } else {
                gone.push(d)
            }
        }
        if gone.len() != 100 || stay.len() != 400 {
            return Err(format!(
                "discarded {} of {}",
                gone.len(),
                gone.len() + stay.len()
            ));
        }
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let cut_ok = if target {
            min(&stay) >= max(&gone)
        } else {
            max(&stay) <= min(&gone)
        };
        if !cut_ok {
            return Err("quantile cut violated".into());
        }
    }
    Ok(())
}

fn criterion_trial_builder() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let disagreements = (0..500).filter(|_| !check_enumeration(&mut rng)).count();
    let contract: Vec<String> = (0..5)
        .filter_map(|seed| {
            check_contract(seed)
                .err()
                .map(|e| format!("seed {seed}: {e}"))
        })
        .collect();
    outcome(
        disagreements == 0 && contract.is_empty(),
        format!(
            "{disagreements}/500 enumeration disagreements; contract on 5 synthetic worlds: {}",
            contract.first().map_or("ok", String::as_str)
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. CLI determinism

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_xlsv"))
        .args(["pipeline", "--out-dir"])
        .arg(dir)
        .args([
            "--seed",
            "11",
            "--n-speakers",
            "300",
            "--cohort-speakers",
            "80",
            "--calib-speakers",
            "110",
        ])
        .args([
            "--total-trials",
            "8000",
            "--eval-trials-per-cell",
            "500",
            "--top-n",
            "50",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(())
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_cli(suite_start: Instant) -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = run_pipeline(a.path()).and_then(|_| run_pipeline(b.path())) {
        return outcome(false, format!("pipeline failed: {e}"));
    }
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same = ta.len() == tb.len() && differing.is_empty();
    let elapsed = suite_start.elapsed();
    outcome(
        same && !ta.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "{} artifacts, {} differing; acceptance suite so far {:.1}s",
            ta.len(),
            differing.len() + ta.len().abs_diff(tb.len()),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let start = Instant::now();
    let experiment = experiment();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("metric oracle equivalence", Box::new(criterion_metrics)),
        ("JS-distance correctness", Box::new(criterion_js)),
        ("calibration optimizer", Box::new(criterion_calibration)),
        (
            "held-out EER ordering",
            Box::new(|| criterion_eer_ordering(&experiment)),
        ),
        (
            "language score shift",
            Box::new(|| criterion_shift(&experiment)),
        ),
        ("sampler invariants", Box::new(criterion_sampler)),
        ("s-norm properties", Box::new(criterion_snorm)),
        ("trial-builder contract", Box::new(criterion_trial_builder)),
        (
            "end-to-end determinism",
            Box::new(move || criterion_cli(start)),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {}: {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

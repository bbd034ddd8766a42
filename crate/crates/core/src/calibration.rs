//! Quality-aware score calibration.
//!
//! The model maps a trial score `s` and quality features `q` to a
//! log-likelihood-ratio `l = w_s * s + w_q . q + b`. Parameters are fit by
//! minimizing the prior-weighted binary cross-entropy of
//! `sigmoid(l + logit(prior))`, with weight `prior / N_tar` on targets and
//! `(1 - prior) / N_non` on nontargets, plus a small L2 penalty on the
//! weights (not on `b`).

use crate::data::ScoredTrial;
use crate::error::{Error, Result};
use crate::features::{check_recipe, Qmf};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub w_s: f64,
    pub feature_names: Vec<Qmf>,
    pub w_q: Vec<f64>,
    pub b: f64,
    /// Prior used when fitting; `apply` output does not depend on it.
    pub effective_prior: f64,
}

impl CalibrationModel {
    pub fn new(
        w_s: f64,
        feature_names: Vec<Qmf>,
        w_q: Vec<f64>,
        b: f64,
        effective_prior: f64,
    ) -> Result<Self> {
        if feature_names.len() != w_q.len() {
            return Err(Error::LengthMismatch(feature_names.len(), w_q.len()));
        }
        check_recipe(&feature_names)?;
        check_prior(effective_prior)?;
        Ok(Self {
            w_s,
            feature_names,
            w_q,
            b,
            effective_prior,
        })
    }

    /// `w_s * score + w_q . qmf + b`.
    pub fn apply(&self, score: f64, qmf: &[f64]) -> Result<f64> {
        if qmf.len() != self.w_q.len() {
            return Err(Error::LengthMismatch(qmf.len(), self.w_q.len()));
        }
        let quality: f64 = self.w_q.iter().zip(qmf).map(|(w, q)| w * q).sum();
        Ok(self.w_s * score + quality + self.b)
    }

    /// Calibrates a scored trial using the model's own feature recipe.
    pub fn apply_trial(&self, trial: &ScoredTrial, use_raw: bool) -> Result<f64> {
        let q = assemble_features(trial, &self.feature_names)?;
        self.apply(trial.calibration_input(use_raw), &q)
    }

    /// Fails unless `recipe` names exactly the model's features in order.
    pub fn check_recipe(&self, recipe: &[Qmf]) -> Result<()> {
        if recipe == self.feature_names.as_slice() {
            Ok(())
        } else {
            let join = |r: &[Qmf]| r.iter().map(|q| q.name()).collect::<Vec<_>>().join(",");
            Err(Error::RecipeMismatch {
                expected: join(&self.feature_names),
                found: join(recipe),
            })
        }
    }
}

fn check_prior(prior: f64) -> Result<()> {
    if prior > 0.0 && prior < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "effective prior must lie in (0, 1), got {prior}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub effective_prior: f64,
    pub max_iters: usize,
    /// Convergence threshold on the gradient infinity-norm.
    pub grad_tolerance: f64,
    pub l2_lambda: f64,
    /// Calibrate the raw cosine instead of the normalized score.
    pub use_raw_score: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            effective_prior: 0.05,
            max_iters: 200,
            grad_tolerance: 1e-9,
            l2_lambda: 1e-6,
            use_raw_score: false,
        }
    }
}

/// Feature values of `trial` in recipe order.
pub fn assemble_features(trial: &ScoredTrial, recipe: &[Qmf]) -> Result<Vec<f64>> {
    check_recipe(recipe)?;
    recipe
        .iter()
        .map(|&q| {
            trial
                .feature(q)
                .ok_or_else(|| Error::MissingFeature(q.to_string()))
        })
        .collect()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Prior-weighted cross-entropy (nats) of log-likelihood-ratios.
pub fn weighted_cross_entropy(llrs: &[f64], targets: &[bool], prior: f64) -> Result<f64> {
    check_prior(prior)?;
    if llrs.len() != targets.len() {
        return Err(Error::LengthMismatch(llrs.len(), targets.len()));
    }
    let n_tar = targets.iter().filter(|&&t| t).count();
    let n_non = targets.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::SingleClass {
            targets: n_tar,
            nontargets: n_non,
        });
    }
    let offset = logit(prior);
    let (mut tar, mut non) = (0.0, 0.0);
    for (&l, &t) in llrs.iter().zip(targets) {
        if t {
            tar += softplus(-(l + offset));
        } else {
            non += softplus(l + offset);
        }
    }
    Ok(prior * tar / n_tar as f64 + (1.0 - prior) * non / n_non as f64)
}

/// The convex training objective over `theta = [w_s, w_q..., b]`.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    /// Row-major design rows `[s, q...]` (no bias column).
    rows: Vec<Vec<f64>>,
    targets: Vec<bool>,
    sample_weight: Vec<f64>,
    offset: f64,
    l2_lambda: f64,
    n_features: usize,
}

impl CalibrationProblem {
    pub fn new(
        scores: &[f64],
        features: &[Vec<f64>],
        targets: &[bool],
        prior: f64,
        l2_lambda: f64,
    ) -> Result<Self> {
        check_prior(prior)?;
        if scores.len() != targets.len() {
            return Err(Error::LengthMismatch(scores.len(), targets.len()));
        }
        if features.len() != scores.len() {
            return Err(Error::LengthMismatch(features.len(), scores.len()));
        }
        if !(l2_lambda >= 0.0) {
            return Err(Error::Config("l2_lambda must be non-negative".into()));
        }
        let n_features = features.first().map_or(0, Vec::len);
        let n_tar = targets.iter().filter(|&&t| t).count();
        let n_non = targets.len() - n_tar;
        if n_tar == 0 || n_non == 0 {
            return Err(Error::SingleClass {
                targets: n_tar,
                nontargets: n_non,
            });
        }
        let mut rows = Vec::with_capacity(scores.len());
        for (s, q) in scores.iter().zip(features) {
            if q.len() != n_features {
                return Err(Error::LengthMismatch(q.len(), n_features));
            }
            if !s.is_finite() || q.iter().any(|v| !v.is_finite()) {
                return Err(Error::OutOfRange("non-finite calibration input".into()));
            }
            let mut row = Vec::with_capacity(1 + n_features);
            row.push(*s);
            row.extend_from_slice(q);
            rows.push(row);
        }
        let w_tar = prior / n_tar as f64;
        let w_non = (1.0 - prior) / n_non as f64;
        let sample_weight = targets
            .iter()
            .map(|&t| if t { w_tar } else { w_non })
            .collect();
        Ok(Self {
            rows,
            targets: targets.to_vec(),
            sample_weight,
            offset: logit(prior),
            l2_lambda,
            n_features,
        })
    }

    /// Length of `theta`: score weight, feature weights, bias.
    pub fn dim(&self) -> usize {
        self.n_features + 2
    }

    fn activation(&self, theta: &[f64], row: &[f64]) -> f64 {
        let bias = theta[self.dim() - 1];
        row.iter().zip(theta).map(|(x, w)| x * w).sum::<f64>() + bias + self.offset
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.l2_lambda * theta[..self.dim() - 1].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let data: f64 = self
            .rows
            .iter()
            .zip(&self.targets)
            .zip(&self.sample_weight)
            .map(|((row, &t), &c)| {
                let a = self.activation(theta, row);
                c * if t { softplus(-a) } else { softplus(a) }
            })
            .sum();
        data + self.penalty(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        for ((row, &t), &c) in self.rows.iter().zip(&self.targets).zip(&self.sample_weight) {
            let a = self.activation(theta, row);
            let r = c * (sigmoid(a) - if t { 1.0 } else { 0.0 });
            for (gj, x) in g.iter_mut().zip(row) {
                *gj += r * x;
            }
            g[d - 1] += r;
        }
        for j in 0..d - 1 {
            g[j] += 2.0 * self.l2_lambda * theta[j];
        }
        g
    }

    /// Dense Hessian, row-major `dim x dim`.
    pub fn hessian(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut h = vec![vec![0.0; d]; d];
        let mut ext = vec![0.0; d];
        for (row, &c) in self.rows.iter().zip(&self.sample_weight) {
            let a = self.activation(theta, row);
            let p = sigmoid(a);
            let w = c * p * (1.0 - p);
            ext[..d - 1].copy_from_slice(row);
            ext[d - 1] = 1.0;
            for i in 0..d {
                let wi = w * ext[i];
                for j in 0..=i {
                    h[i][j] += wi * ext[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                h[j][i] = h[i][j];
            }
        }
        for (j, row) in h.iter_mut().enumerate().take(d - 1) {
            row[j] += 2.0 * self.l2_lambda;
        }
        h
    }

    /// Damped Newton iterations from `theta = 0` with step halving.
    pub fn minimize(&self, max_iters: usize, grad_tolerance: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut theta = vec![0.0; d];
        let mut f = self.objective(&theta);
        for _ in 0..max_iters {
            let g = self.gradient(&theta);
            if inf_norm(&g) < grad_tolerance {
                return Ok(theta);
            }
            let h = self.hessian(&theta);
            let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
            let step = solve_damped(&h, &neg_g);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let slack = 4.0 * f64::EPSILON * f.abs();
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(x, s)| x + t * s).collect();
                let fc = self.objective(&cand);
                if fc <= f + 1e-4 * t * slope + slack {
                    theta = cand;
                    f = fc;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    // No progress possible at working precision.
                    let grad_norm = inf_norm(&self.gradient(&theta));
                    return Err(Error::NonConvergence {
                        iterations: max_iters,
                        grad_norm,
                    });
                }
            }
        }
        let grad_norm = inf_norm(&self.gradient(&theta));
        if grad_norm < grad_tolerance {
            Ok(theta)
        } else {
            Err(Error::NonConvergence {
                iterations: max_iters,
                grad_norm,
            })
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(h + mu I) x = rhs` by Cholesky, raising `mu` until the factorization
/// succeeds.
fn solve_damped(h: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let scale = h
        .iter()
        .enumerate()
        .map(|(i, r)| r[i].abs())
        .fold(0.0, f64::max);
    let mut mu = 0.0;
    loop {
        if let Some(x) = cholesky_solve(h, rhs, mu) {
            return x;
        }
        mu = if mu == 0.0 {
            (scale * 1e-12).max(1e-300)
        } else {
            mu * 10.0
        };
    }
}

fn cholesky_solve(h: &[Vec<f64>], rhs: &[f64], mu: f64) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = h[i][j] + if i == j { mu } else { 0.0 };
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (rhs[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits a model on plain arrays: one score and one feature row per trial.
pub fn fit_arrays(
    scores: &[f64],
    features: &[Vec<f64>],
    targets: &[bool],
    recipe: &[Qmf],
    cfg: &FitConfig,
) -> Result<CalibrationModel> {
    check_recipe(recipe)?;
    if let Some(row) = features.iter().find(|r| r.len() != recipe.len()) {
        return Err(Error::LengthMismatch(row.len(), recipe.len()));
    }
    let problem = CalibrationProblem::new(
        scores,
        features,
        targets,
        cfg.effective_prior,
        cfg.l2_lambda,
    )?;
    let theta = problem.minimize(cfg.max_iters, cfg.grad_tolerance)?;
    let k = recipe.len();
    CalibrationModel::new(
        theta[0],
        recipe.to_vec(),
        theta[1..=k].to_vec(),
        theta[k + 1],
        cfg.effective_prior,
    )
}

/// Fits on labelled scored trials; unlabelled trials are an error.
pub fn fit(trials: &[ScoredTrial], recipe: &[Qmf], cfg: &FitConfig) -> Result<CalibrationModel> {
    let mut scores = Vec::with_capacity(trials.len());
    let mut features = Vec::with_capacity(trials.len());
    let mut targets = Vec::with_capacity(trials.len());
    for (index, st) in trials.iter().enumerate() {
        let t = st
            .trial
            .label
            .is_target()
            .ok_or(Error::UnlabelledTrial { index })?;
        scores.push(st.calibration_input(cfg.use_raw_score));
        features.push(assemble_features(st, recipe)?);
        targets.push(t);
    }
    fit_arrays(&scores, &features, &targets, recipe, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Trial};

    #[test]
    fn apply_examples() {
        let id = CalibrationModel::new(1.0, vec![], vec![], 0.0, 0.5).unwrap();
        assert_eq!(id.apply(0.5, &[]).unwrap(), 0.5);
        let m = CalibrationModel::new(2.0, vec![Qmf::LangJs], vec![0.5], -1.0, 0.5).unwrap();
        assert_eq!(m.apply(1.0, &[2.0]).unwrap(), 2.0);
        let c = CalibrationModel::new(0.0, vec![], vec![], 3.0, 0.5).unwrap();
        assert_eq!(c.apply(-17.0, &[]).unwrap(), 3.0);
        assert!(matches!(
            m.apply(1.0, &[]),
            Err(Error::LengthMismatch(0, 1))
        ));
    }

    #[test]
    fn model_invariants() {
        assert!(CalibrationModel::new(1.0, vec![Qmf::LangJs], vec![], 0.0, 0.5).is_err());
        assert!(CalibrationModel::new(1.0, vec![], vec![], 0.0, 1.0).is_err());
        assert!(CalibrationModel::new(
            1.0,
            vec![Qmf::LangJs, Qmf::LangJs],
            vec![1.0, 1.0],
            0.0,
            0.5
        )
        .is_err());
    }

    #[test]
    fn assemble_examples() {
        let mut st = ScoredTrial::new(Trial::new("e", "t", Label::Target), 0.1);
        assert!(assemble_features(&st, &[]).unwrap().is_empty());
        st.set_feature(Qmf::LangEmbCos, 0.8);
        st.set_feature(Qmf::LogDurMin, 0.69);
        assert_eq!(
            assemble_features(&st, &[Qmf::LogDurMin, Qmf::LangEmbCos]).unwrap(),
            vec![0.69, 0.8]
        );
        assert!(matches!(
            assemble_features(&st, &[Qmf::LangJs]),
            Err(Error::MissingFeature(_))
        ));
        assert!(matches!(
            assemble_features(&st, &[Qmf::LogDurMin, Qmf::LogDurMin]),
            Err(Error::DuplicateFeature(_))
        ));
    }

    #[test]
    fn symmetric_data_has_zero_bias() {
        let scores = [1.5, 1.5, 1.5, -1.5, -1.5, -1.5];
        let targets = [true, true, false, false, false, true];
        let feats = vec![vec![]; 6];
        let cfg = FitConfig {
            effective_prior: 0.5,
            ..Default::default()
        };
        let m = fit_arrays(&scores, &feats, &targets, &[], &cfg).unwrap();
        assert!(m.b.abs() < 1e-6, "b = {}", m.b);
        assert!(m.w_s > 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let err = fit_arrays(
            &[1.0, 2.0],
            &[vec![], vec![]],
            &[true, true],
            &[],
            &FitConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::SingleClass {
                targets: 2,
                nontargets: 0
            }
        ));
    }

    #[test]
    fn non_convergence_reports_gradient() {
        let cfg = FitConfig {
            max_iters: 0,
            ..Default::default()
        };
        let err =
            fit_arrays(&[1.0, -1.0], &[vec![], vec![]], &[true, false], &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { grad_norm, .. } if grad_norm > 0.0));
    }

    #[test]
    fn separable_data_stays_finite() {
        let scores: Vec<f64> = (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    1.0 + i as f64 * 0.01
                } else {
                    -1.0 - i as f64 * 0.01
                }
            })
            .collect();
        let targets: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let feats = vec![vec![]; 40];
        let cfg = FitConfig::default();
        let m = fit_arrays(&scores, &feats, &targets, &[], &cfg).unwrap();
        assert!(m.w_s.is_finite() && m.b.is_finite());
        let llrs: Vec<f64> = scores.iter().map(|&s| m.apply(s, &[]).unwrap()).collect();
        let ce = weighted_cross_entropy(&llrs, &targets, cfg.effective_prior).unwrap();
        assert!(ce < 1e-3, "cross-entropy {ce}");
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((logit(0.05) + 19f64.ln()).abs() < 1e-15);
    }
}

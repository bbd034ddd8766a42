//! Detection metrics: DET points, EER, MinDCF and the grouped score
//! histogram used to visualise cross-lingual score shift.
//!
//! A trial is accepted when `score >= threshold`: a miss is a target with
//! `score < t` and a false alarm is a nontarget with `score >= t`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_fa: f64,
    pub c_miss: f64,
}

impl DcfParams {
    pub fn new(p_target: f64, c_fa: f64, c_miss: f64) -> Result<Self> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::Config(format!(
                "p_target must lie in (0, 1), got {p_target}"
            )));
        }
        if !(c_fa > 0.0 && c_miss > 0.0) {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(Self {
            p_target,
            c_fa,
            c_miss,
        })
    }

    /// Unit costs at the given target prior.
    pub fn with_prior(p_target: f64) -> Result<Self> {
        Self::new(p_target, 1.0, 1.0)
    }

    /// Cost of the best trivial system (accept all or reject all).
    pub fn default_cost(&self) -> f64 {
        (self.p_target * self.c_miss).min((1.0 - self.p_target) * self.c_fa)
    }

    /// Normalized detection cost at the given error rates.
    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.p_target * self.c_miss * p_miss + (1.0 - self.p_target) * self.c_fa * p_fa)
            / self.default_cost()
    }
}

fn split_counts(scores: &[f64], targets: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch(scores.len(), targets.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::OutOfRange(format!("non-finite score {s}")));
    }
    let n_tar = targets.iter().filter(|&&t| t).count();
    let n_non = targets.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::SingleClass {
            targets: n_tar,
            nontargets: n_non,
        });
    }
    Ok((n_tar, n_non))
}

/// One point per distinct score plus sentinels at -inf and +inf, in
/// increasing threshold order.
pub fn det_points(scores: &[f64], targets: &[bool]) -> Result<Vec<DetPoint>> {
    let (n_tar, n_non) = split_counts(scores, targets)?;
    let mut order: Vec<(f64, bool)> = scores
        .iter()
        .copied()
        .zip(targets.iter().copied())
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(order.len() + 2);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        p_miss: 0.0,
        p_fa: 1.0,
    });
    // Targets strictly below and nontargets at or above the current threshold.
    let mut tar_below = 0usize;
    let mut non_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = order[i].0;
        points.push(DetPoint {
            threshold: t,
            p_miss: tar_below as f64 / n_tar as f64,
            p_fa: (n_non - non_below) as f64 / n_non as f64,
        });
        while i < order.len() && order[i].0 == t {
            if order[i].1 {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate from a DET staircase in increasing threshold order.
///
/// Returns the common value at the first point where `p_miss >= p_fa`,
/// interpolating linearly from the previous point if they are not equal.
pub fn eer_from_points(points: &[DetPoint]) -> f64 {
    let Some(k) = points.iter().position(|p| p.p_miss >= p.p_fa) else {
        return 1.0;
    };
    let cur = points[k];
    if cur.p_miss == cur.p_fa || k == 0 {
        return cur.p_miss;
    }
    let prev = points[k - 1];
    let d_miss = cur.p_miss - prev.p_miss;
    let d_fa = cur.p_fa - prev.p_fa;
    let alpha = (prev.p_fa - prev.p_miss) / (d_miss - d_fa);
    prev.p_miss + alpha * d_miss
}

pub fn eer(scores: &[f64], targets: &[bool]) -> Result<f64> {
    Ok(eer_from_points(&det_points(scores, targets)?))
}

/// Minimum normalized detection cost over all thresholds.
pub fn min_dcf_from_points(points: &[DetPoint], params: &DcfParams) -> f64 {
    points
        .iter()
        .map(|p| params.normalized_cost(p.p_miss, p.p_fa))
        .fold(f64::INFINITY, f64::min)
}

pub fn min_dcf(scores: &[f64], targets: &[bool], params: &DcfParams) -> Result<f64> {
    Ok(min_dcf_from_points(&det_points(scores, targets)?, params))
}

/// Summary statistics of one histogram group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation / sqrt(n)).
    pub std_error: f64,
}

/// Histogram series indexed by [`GroupedHistogram::series`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreGroup {
    TargetCrossLingual,
    TargetSameLanguage,
    NontargetCrossLingual,
    NontargetSameLanguage,
}

impl ScoreGroup {
    pub const ALL: [ScoreGroup; 4] = [
        ScoreGroup::TargetCrossLingual,
        ScoreGroup::TargetSameLanguage,
        ScoreGroup::NontargetCrossLingual,
        ScoreGroup::NontargetSameLanguage,
    ];

    pub fn of(target: bool, crosslingual: bool) -> Self {
        match (target, crosslingual) {
            (true, true) => ScoreGroup::TargetCrossLingual,
            (true, false) => ScoreGroup::TargetSameLanguage,
            (false, true) => ScoreGroup::NontargetCrossLingual,
            (false, false) => ScoreGroup::NontargetSameLanguage,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreGroup::TargetCrossLingual => "target_crosslingual",
            ScoreGroup::TargetSameLanguage => "target_samelang",
            ScoreGroup::NontargetCrossLingual => "nontarget_crosslingual",
            ScoreGroup::NontargetSameLanguage => "nontarget_samelang",
        }
    }
}

/// Four aligned bin-count series. Bin `i` covers
/// `[(first_bin + i) * bin_width, (first_bin + i + 1) * bin_width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedHistogram {
    pub bin_width: f64,
    pub first_bin: i64,
    pub series: [Vec<u64>; 4],
    pub stats: [GroupStats; 4],
}

impl GroupedHistogram {
    pub fn n_bins(&self) -> usize {
        self.series[0].len()
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        (self.first_bin + i as i64) as f64 * self.bin_width
    }

    pub fn group(&self, g: ScoreGroup) -> (&[u64], GroupStats) {
        (&self.series[g.index()], self.stats[g.index()])
    }
}

pub fn group_stats(values: &[f64]) -> GroupStats {
    let n = values.len();
    if n == 0 {
        return GroupStats::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    GroupStats {
        count: n,
        mean,
        std_error,
    }
}

/// Counts scores into {target, nontarget} x {cross-lingual, same-language}
/// series over a shared bin grid aligned to multiples of `bin_width`.
pub fn grouped_histogram(
    scores: &[f64],
    targets: &[bool],
    crosslingual: &[bool],
    bin_width: f64,
) -> Result<GroupedHistogram> {
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch(scores.len(), targets.len()));
    }
    if scores.len() != crosslingual.len() {
        return Err(Error::LengthMismatch(scores.len(), crosslingual.len()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::OutOfRange(format!("non-finite score {s}")));
    }
    let bins: Vec<i64> = scores
        .iter()
        .map(|s| (s / bin_width).floor() as i64)
        .collect();
    let first_bin = bins.iter().copied().min().unwrap_or(0);
    let n_bins = bins
        .iter()
        .copied()
        .max()
        .map_or(0, |last| (last - first_bin + 1) as usize);
    let mut series: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; n_bins]);
    let mut grouped: [Vec<f64>; 4] = Default::default();
    for ((&bin, &s), (&t, &x)) in bins
        .iter()
        .zip(scores)
        .zip(targets.iter().zip(crosslingual))
    {
        let g = ScoreGroup::of(t, x).index();
        series[g][(bin - first_bin) as usize] += 1;
        grouped[g].push(s);
    }
    let stats = std::array::from_fn(|g| group_stats(&grouped[g]));
    Ok(GroupedHistogram {
        bin_width,
        first_bin,
        series,
        stats,
    })
}

/// Four-column counts file: bin start followed by one count per group.
pub fn format_histogram(hist: &GroupedHistogram) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("# bin_start");
    for g in ScoreGroup::ALL {
        out.push(' ');
        out.push_str(g.name());
    }
    out.push('\n');
    for g in ScoreGroup::ALL {
        let s = hist.stats[g.index()];
        let _ = writeln!(
            out,
            "# {} count {} mean {} std_error {}",
            g.name(),
            s.count,
            crate::io::format_sig9(s.mean),
            crate::io::format_sig9(s.std_error)
        );
    }
    for i in 0..hist.n_bins() {
        out.push_str(&crate::io::format_sig9(hist.bin_start(i)));
        for series in &hist.series {
            let _ = write!(out, " {}", series[i]);
        }
        out.push('\n');
    }
    out
}

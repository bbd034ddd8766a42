use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use xlsv_core::calibration::FitConfig;
use xlsv_core::scoring::SNormConfig;
use xlsv_core::synth::WorldConfig;
use xlsv_core::trials::TrialBuildConfig;

#[derive(Debug, Parser)]
#[command(
    name = "xlsv",
    version,
    about = "Cross-lingual speaker verification backend"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world with cohort, calibration and evaluation splits.
    GenSynth(GenSynthArgs),
    /// Build a calibration trial list from metadata and language information.
    BuildTrials(BuildTrialsArgs),
    /// Cosine-score trials, optionally with adaptive s-norm.
    Score(ScoreArgs),
    /// Compute quality features for every trial.
    Qmf(QmfArgs),
    /// Fit a calibration model on labelled scores.
    CalibFit(CalibFitArgs),
    /// Apply a calibration model to scores.
    CalibApply(CalibApplyArgs),
    /// Report EER and MinDCF.
    Evaluate(EvaluateArgs),
    /// Grouped score histogram by class and linguality.
    Hist(HistArgs),
    /// Plan cross-lingual mini-batches.
    SampleBatches(SampleBatchesArgs),
    /// Run every stage on a synthetic world.
    Pipeline(PipelineArgs),
}

/// Boolean flags take an explicit value so config files can set them.
fn bool_arg(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected `true` or `false`, got `{other}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct WorldArgs {
    #[arg(long, default_value_t = WorldConfig::default().n_speakers)]
    pub n_speakers: usize,
    #[arg(long, default_value_t = WorldConfig::default().n_languages)]
    pub n_languages: usize,
    #[arg(long, default_value_t = WorldConfig::default().utts_per_speaker)]
    pub utts_per_speaker: usize,
    #[arg(long, default_value_t = WorldConfig::default().emb_dim)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = WorldConfig::default().lang_emb_dim)]
    pub lang_emb_dim: usize,
    #[arg(long, default_value_t = WorldConfig::default().speaker_strength)]
    pub speaker_strength: f64,
    #[arg(long, default_value_t = WorldConfig::default().language_strength)]
    pub language_strength: f64,
    #[arg(long, default_value_t = WorldConfig::default().noise_strength)]
    pub noise_strength: f64,
    #[arg(long, default_value_t = WorldConfig::default().classifier_noise)]
    pub classifier_noise: f64,
    #[arg(long, default_value_t = WorldConfig::default().dialect_spread)]
    pub dialect_spread: f64,
    #[arg(long, default_value_t = WorldConfig::default().multilingual_fraction)]
    pub multilingual_fraction: f64,
    #[arg(long, default_value_t = WorldConfig::default().duration_range.0)]
    pub duration_min: f64,
    #[arg(long, default_value_t = WorldConfig::default().duration_range.1)]
    pub duration_max: f64,
    #[arg(long, default_value_t = WorldConfig::default().aam_scale)]
    pub aam_scale: f64,
    /// Speakers (in id order) reserved for the s-norm cohort.
    #[arg(long, default_value_t = 150)]
    pub cohort_speakers: usize,
    /// Speakers following the cohort, reserved for calibration trials.
    /// The remaining speakers form the evaluation split.
    #[arg(long, default_value_t = 225)]
    pub calib_speakers: usize,
    #[arg(long, default_value_t = 1500)]
    pub eval_trials_per_cell: usize,
}

impl WorldArgs {
    pub fn config(&self, seed: u64) -> WorldConfig {
        WorldConfig {
            n_speakers: self.n_speakers,
            n_languages: self.n_languages,
            utts_per_speaker: self.utts_per_speaker,
            emb_dim: self.emb_dim,
            lang_emb_dim: self.lang_emb_dim,
            speaker_strength: self.speaker_strength,
            language_strength: self.language_strength,
            noise_strength: self.noise_strength,
            classifier_noise: self.classifier_noise,
            dialect_spread: self.dialect_spread,
            multilingual_fraction: self.multilingual_fraction,
            duration_range: (self.duration_min, self.duration_max),
            aam_scale: self.aam_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrialArgs {
    #[arg(long, default_value_t = TrialBuildConfig::default().total_trials)]
    pub total_trials: usize,
    #[arg(long, default_value_t = TrialBuildConfig::default().crosslingual_fraction)]
    pub crosslingual_fraction: f64,
    #[arg(long, default_value_t = TrialBuildConfig::default().discard_fraction)]
    pub discard_fraction: f64,
    #[arg(long, default_value_t = TrialBuildConfig::default().crop_min)]
    pub crop_min: f64,
    #[arg(long, default_value_t = TrialBuildConfig::default().crop_max)]
    pub crop_max: f64,
    #[arg(long, default_value = "true", value_parser = bool_arg)]
    pub crop_half: bool,
}

impl TrialArgs {
    pub fn config(&self, seed: u64) -> TrialBuildConfig {
        TrialBuildConfig {
            total_trials: self.total_trials,
            crosslingual_fraction: self.crosslingual_fraction,
            discard_fraction: self.discard_fraction,
            crop_min: self.crop_min,
            crop_max: self.crop_max,
            crop_half: self.crop_half,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BuildTrialsArgs {
    #[arg(long)]
    pub metadata: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long)]
    pub lang_embeddings: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub trials: TrialArgs,
    /// Trial list.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-trial language-embedding cosine distance, `<enroll> <test> <distance>`.
    #[arg(long)]
    pub dist_out: PathBuf,
    /// Metadata with simulated crop durations.
    #[arg(long)]
    pub metadata_out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SNormArgs {
    #[arg(long, default_value = "true", value_parser = bool_arg)]
    pub snorm: bool,
    #[arg(long, default_value_t = SNormConfig::default().top_n)]
    pub top_n: usize,
    #[arg(long, default_value_t = SNormConfig::default().epsilon_sigma)]
    pub epsilon_sigma: f64,
}

impl SNormArgs {
    pub fn config(&self) -> SNormConfig {
        SNormConfig {
            top_n: self.top_n,
            epsilon_sigma: self.epsilon_sigma,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Cohort speakers; required with s-norm.
    #[arg(long)]
    pub cohort_metadata: Option<PathBuf>,
    /// Embeddings of the cohort utterances; defaults to `--embeddings`.
    #[arg(long)]
    pub cohort_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub snorm: SNormArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct QmfArgs {
    #[arg(long)]
    pub trials: PathBuf,
    /// Comma-separated feature names.
    #[arg(long)]
    pub recipe: String,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long)]
    pub posteriors: Option<PathBuf>,
    #[arg(long)]
    pub lang_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = FitConfig::default().effective_prior)]
    pub effective_prior: f64,
    #[arg(long, default_value_t = FitConfig::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = FitConfig::default().grad_tolerance)]
    pub grad_tolerance: f64,
    #[arg(long, default_value_t = FitConfig::default().l2_lambda)]
    pub l2_lambda: f64,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            effective_prior: self.effective_prior,
            max_iters: self.max_iters,
            grad_tolerance: self.grad_tolerance,
            l2_lambda: self.l2_lambda,
            // A score file carries a single score column.
            use_raw_score: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CalibFitArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Labelled trial list aligned with the score file.
    #[arg(long)]
    pub trials: PathBuf,
    /// Feature file; required when the recipe is not empty.
    #[arg(long)]
    pub qmf: Option<PathBuf>,
    /// Comma-separated feature names; empty for score-only calibration.
    #[arg(long, default_value = "")]
    pub recipe: String,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CalibApplyArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub qmf: Option<PathBuf>,
    /// When given, must equal the model's feature list.
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Comma-separated target priors for MinDCF.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub p_target: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c_fa: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_miss: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("language_source").required(true).args(["languages", "posteriors"])))]
pub struct HistArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    /// `<utt_id> <language>` labels defining linguality.
    #[arg(long)]
    pub languages: Option<PathBuf>,
    /// Posteriors whose argmax defines linguality.
    #[arg(long)]
    pub posteriors: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 16)]
    pub speakers_per_batch: usize,
    #[arg(long, default_value_t = 8)]
    pub utterances_per_speaker: usize,
    #[arg(long, default_value = "true", value_parser = bool_arg)]
    pub drop_last: bool,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SampleBatchesArgs {
    #[arg(long)]
    pub metadata: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub trials: TrialArgs,
    #[command(flatten)]
    pub snorm: SNormArgs,
    #[arg(long, default_value = "lang_emb_cos")]
    pub recipe: String,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

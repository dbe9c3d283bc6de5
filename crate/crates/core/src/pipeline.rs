//! End-to-end experiment runs: data preparation, training, test evaluation,
//! multi-seed aggregation and the windowed-vs-full-sequence ablation.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, load_subset, DatasetBundle, SubsetId, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_test, EvalOptions, InputMode, MetricsReport, ScoreVariant};
use crate::model::{Model, Preset, TcnConfig};
use crate::preprocess::{fit_normalizer, trim_random_end, window_segment, LabeledSequence, NormStats, R_MAX};
use crate::train::{split_train_val, train, EpochRecord, TrainConfig, TrainReport};

pub const DEFAULT_WINDOW: usize = 31;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessingMode {
    /// Whole trajectories, end-trimmed, supervised at every timestep.
    #[default]
    FullSequence,
    /// Fixed-length sliding windows supervised at their last step.
    Windowed,
}

impl PreprocessingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PreprocessingMode::FullSequence => "full_sequence",
            PreprocessingMode::Windowed => "windowed",
        }
    }
}

fn default_stride() -> usize {
    1
}

fn default_runs() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Everything needed to reproduce a run, as read from a JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subset_id: SubsetId,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    /// Generate the bundle in memory instead of reading `data_root`.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub preprocessing_mode: PreprocessingMode,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Inline architecture; mutually exclusive with `preset`.
    #[serde(default)]
    pub model: Option<TcnConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_true")]
    pub include_settings: bool,
    #[serde(default = "default_true")]
    pub cap_truth: bool,
    #[serde(default)]
    pub score_variant: ScoreVariant,
    pub output_dir: PathBuf,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(subset_id: SubsetId, output_dir: PathBuf) -> Self {
        RunConfig {
            subset_id,
            data_root: None,
            synth: None,
            preprocessing_mode: PreprocessingMode::FullSequence,
            window: None,
            stride: 1,
            preset: None,
            model: None,
            train: TrainConfig::default(),
            include_settings: true,
            cap_truth: true,
            score_variant: ScoreVariant::Plain,
            output_dir,
            n_runs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_runs == 0 {
            return Err(Error::Validation("n_runs must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Validation("stride must be at least 1".into()));
        }
        if self.preset.is_some() && self.model.is_some() {
            return Err(Error::Validation("give either preset or model, not both".into()));
        }
        match (self.preprocessing_mode, self.window) {
            (PreprocessingMode::Windowed, Some(0)) => {
                return Err(Error::Validation("windowed mode requires window >= 1".into()))
            }
            (PreprocessingMode::FullSequence, Some(_)) => {
                return Err(Error::Validation("window only applies to windowed mode".into()))
            }
            _ => {}
        }
        if let Some(s) = &self.synth {
            s.validate()?;
            if self.subset_id != SubsetId::Synth {
                return Err(Error::Validation("synth settings require subset_id SYNTH".into()));
            }
        } else if self.data_root.is_none() {
            return Err(Error::Validation("data_root is required unless synth is given".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.window.unwrap_or(DEFAULT_WINDOW)
    }

    pub fn input_mode(&self) -> InputMode {
        match self.preprocessing_mode {
            PreprocessingMode::FullSequence => InputMode::FullSequence,
            PreprocessingMode::Windowed => InputMode::Windowed {
                window: self.window_len(),
            },
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            cap_truth: self.cap_truth,
            score_variant: self.score_variant,
            input: self.input_mode(),
        }
    }

    /// Architecture for `in_features` retained inputs.
    pub fn model_config(&self, in_features: usize) -> Result<TcnConfig> {
        let cfg = match (&self.model, self.preset) {
            (Some(inline), _) => {
                let mut c = inline.clone();
                if c.in_features == 0 {
                    c.in_features = in_features;
                } else if c.in_features != in_features {
                    return Err(Error::ConfigMismatch(format!(
                        "model.in_features is {} but the data retains {in_features} features",
                        c.in_features
                    )));
                }
                c
            }
            (None, preset) => preset.unwrap_or(Preset::Tcn4Block).config(in_features),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_bundle(&self) -> Result<DatasetBundle> {
        match (&self.synth, &self.data_root) {
            (Some(s), _) => generate_synthetic(s),
            (None, Some(root)) => load_subset(root, self.subset_id),
            (None, None) => Err(Error::Validation("data_root is required unless synth is given".into())),
        }
    }

    /// Copy of this config for run `index` of a multi-run series.
    pub fn for_run(&self, index: usize) -> RunConfig {
        let mut c = self.clone();
        c.train.seed = self.train.seed.wrapping_add(index as u64);
        c.n_runs = 1;
        c
    }
}

/// Normalized training material ready for [`train`].
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub stats: NormStats,
    pub train: Vec<LabeledSequence>,
    pub val: Vec<LabeledSequence>,
    /// Samples produced from the whole training file before the validation split.
    pub n_samples: usize,
}

fn trim_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn windows(seqs: &[LabeledSequence], window: usize, stride: usize) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(window_segment(s, window, stride)?);
    }
    Ok(out)
}

/// Normalizes, labels and splits the training engines.
///
/// Statistics come from every training engine. Engines are split into train
/// and validation sets before any segmentation, so windows of one engine
/// never land on both sides. In full-sequence mode each sequence is end
/// trimmed once here, unless the train config asks for a fresh trim every
/// epoch (then training sequences are returned untrimmed).
pub fn prepare(bundle: &DatasetBundle, cfg: &RunConfig) -> Result<PreparedData> {
    let stats = fit_normalizer(&bundle.train, cfg.include_settings)?;
    let seqs = bundle
        .train
        .iter()
        .map(|t| LabeledSequence::from_trajectory(&stats, t, R_MAX))
        .collect::<Result<Vec<_>>>()?;
    let (train_seqs, val_seqs) = split_train_val(&seqs, cfg.train.val_fraction, cfg.train.seed)?;
    match cfg.preprocessing_mode {
        PreprocessingMode::FullSequence => {
            let mut rng = trim_rng(cfg.train.seed);
            let train_seqs = if cfg.train.retrim_each_epoch {
                train_seqs
            } else {
                train_seqs.iter().map(|s| trim_random_end(s, &mut rng)).collect()
            };
            let val_seqs = val_seqs.iter().map(|s| trim_random_end(s, &mut rng)).collect();
            Ok(PreparedData {
                stats,
                train: train_seqs,
                val: val_seqs,
                n_samples: seqs.len(),
            })
        }
        PreprocessingMode::Windowed => {
            let (w, s) = (cfg.window_len(), cfg.stride);
            Ok(PreparedData {
                stats,
                train: windows(&train_seqs, w, s)?,
                val: windows(&val_seqs, w, s)?,
                n_samples: windows(&seqs, w, s)?.len(),
            })
        }
    }
}

/// Artifacts of one training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: Model,
    pub stats: NormStats,
    pub report: TrainReport,
    pub epochs: Vec<EpochRecord>,
    pub metrics: MetricsReport,
    pub n_samples: usize,
}

/// Trains on `bundle` with the single-run settings of `cfg` and scores the
/// best snapshot on the test engines.
pub fn run_once<F>(bundle: &DatasetBundle, cfg: &RunConfig, mut on_epoch: F) -> Result<RunOutcome>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    let data = prepare(bundle, cfg)?;
    let model = Model::with_seed(cfg.model_config(data.stats.n_retained())?, cfg.train.seed)?;
    let mut epochs = Vec::new();
    let (model, report) = train(model, &data.train, &data.val, &cfg.train, |r| {
        on_epoch(r);
        epochs.push(r.clone());
    })?;
    let metrics = evaluate_test(&model, bundle, &data.stats, &cfg.eval_options())?;
    Ok(RunOutcome {
        model,
        stats: data.stats,
        report,
        epochs,
        metrics,
        n_samples: data.n_samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub values: Vec<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() {
            return Err(Error::Validation("cannot summarize zero runs".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Summary {
            mean,
            sd,
            values: values.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub subset_id: SubsetId,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub rmse: Summary,
    pub score: Summary,
}

impl AggregateReport {
    pub fn from_runs(subset_id: SubsetId, seeds: Vec<u64>, metrics: &[MetricsReport]) -> Result<Self> {
        let rmse: Vec<f64> = metrics.iter().map(|m| m.rmse).collect();
        let score: Vec<f64> = metrics.iter().map(|m| m.score).collect();
        Ok(AggregateReport {
            subset_id,
            n_runs: metrics.len(),
            seeds,
            rmse: Summary::of(&rmse)?,
            score: Summary::of(&score)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: PreprocessingMode,
    pub window: Option<usize>,
    pub n_samples: usize,
    pub epochs_run: usize,
    pub rmse: f64,
    pub score: f64,
}

/// Trains the same architecture under both preprocessing modes with identical
/// seeds and training budget. Rows are `[full_sequence, windowed]`.
pub fn run_ablation(bundle: &DatasetBundle, cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let window = cfg.window_len();
    let mut rows = Vec::with_capacity(2);
    for mode in [PreprocessingMode::FullSequence, PreprocessingMode::Windowed] {
        let mut c = cfg.clone();
        c.preprocessing_mode = mode;
        c.window = (mode == PreprocessingMode::Windowed).then_some(window);
        let out = run_once(bundle, &c, |r| {
            log::info!("{} epoch {}: val {:.3}", mode.as_str(), r.epoch, r.val_loss)
        })?;
        rows.push(AblationRow {
            mode,
            window: c.window,
            n_samples: out.n_samples,
            epochs_run: out.report.epochs_run,
            rmse: out.metrics.rmse,
            score: out.metrics.score,
        });
    }
    Ok(rows)
}

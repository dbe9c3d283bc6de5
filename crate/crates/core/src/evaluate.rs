//! Test-set metrics and per-engine RUL curves.

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, EngineTrajectory, SubsetId};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::{apply_normalizer, label_rul, NormStats, PaddedBatch, Supervision, R_MAX};
use crate::preprocess::LabeledSequence;
use crate::tensorcore::Tensor;

fn check_pairs(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Validation("metrics need at least one prediction".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::shape("truth count", preds.len(), truths.len()));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let sse: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// `sum exp(-d/13)` for early and `sum exp(d/10)` for late predictions.
    #[default]
    Plain,
    /// Same terms minus one each, so a perfect predictor scores 0.
    OffsetMinusOne,
}

/// Per-engine term of the asymmetric score for error `d = predicted - true`.
pub fn score_term(d: f64, variant: ScoreVariant) -> f64 {
    let term = if d < 0.0 { (-d / 13.0).exp() } else { (d / 10.0).exp() };
    match variant {
        ScoreVariant::Plain => term,
        ScoreVariant::OffsetMinusOne => term - 1.0,
    }
}

/// Asymmetric score that penalizes late predictions (`d >= 0`) harder.
pub fn nasa_score(preds: &[f64], truths: &[f64], variant: ScoreVariant) -> Result<f64> {
    check_pairs(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| score_term(p - t, variant)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineResult {
    pub unit_id: u32,
    pub predicted_rul: f64,
    pub true_rul: f64,
    pub d_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subset_id: SubsetId,
    pub rmse: f64,
    pub score: f64,
    pub score_variant: ScoreVariant,
    pub n_engines: usize,
    pub per_engine: Vec<EngineResult>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub unit_id: u32,
    pub cycles: Vec<u32>,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

impl CurveRecord {
    /// `cycle,predicted,actual` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,predicted,actual\n");
        for ((c, p), a) in self.cycles.iter().zip(&self.predicted).zip(&self.actual) {
            out.push_str(&format!("{c},{p},{a}\n"));
        }
        out
    }
}

/// How a trajectory is presented to the network at inference time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InputMode {
    /// The whole observed trajectory in one pass.
    #[default]
    FullSequence,
    /// Only the `window` steps ending at the prediction point, left-padded with zeros.
    Windowed { window: usize },
}

/// Anything that maps a standardized `[T × F]` sequence to `T` RUL estimates.
pub trait RulPredictor {
    fn n_features(&self) -> usize;

    fn predict_sequence(&self, unit_id: u32, features: &[f64]) -> Result<Vec<f64>>;

    /// Estimate at the final timestep only. Defaults to the last value of
    /// [`RulPredictor::predict_sequence`].
    fn predict_last(&self, unit_id: u32, features: &[f64]) -> Result<f64> {
        self.predict_sequence(unit_id, features)?
            .last()
            .copied()
            .ok_or_else(|| Error::Validation("empty sequence".into()))
    }
}

fn as_sequence(unit_id: u32, features: &[f64], n_features: usize) -> LabeledSequence {
    let len = features.len() / n_features;
    LabeledSequence {
        unit_id,
        n_features,
        features: features.to_vec(),
        labels: vec![0.0; len],
        original_length: len,
        supervision: Supervision::Dense,
    }
}

impl RulPredictor for Model {
    fn n_features(&self) -> usize {
        self.config().in_features
    }

    fn predict_sequence(&self, unit_id: u32, features: &[f64]) -> Result<Vec<f64>> {
        let seq = as_sequence(unit_id, features, self.n_features());
        let batch = PaddedBatch::from_sequences(&[&seq], None)?;
        Ok(self.predict(&batch)?.into_data())
    }
}

/// Wraps a predictor so every estimate comes from a fixed-length window.
pub struct Windowed<'a, P: RulPredictor + ?Sized> {
    pub inner: &'a P,
    pub window: usize,
}

impl<P: RulPredictor + ?Sized> Windowed<'_, P> {
    fn window_ending_at(&self, features: &[f64], end: usize) -> Vec<f64> {
        let f = self.inner.n_features();
        let start = (end + 1).saturating_sub(self.window);
        let mut out = vec![0.0; (self.window - (end + 1 - start)) * f];
        out.extend_from_slice(&features[start * f..(end + 1) * f]);
        out
    }
}

impl<P: RulPredictor + ?Sized> RulPredictor for Windowed<'_, P> {
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn predict_sequence(&self, unit_id: u32, features: &[f64]) -> Result<Vec<f64>> {
        let len = features.len() / self.n_features();
        (0..len).map(|end| self.inner.predict_last(unit_id, &self.window_ending_at(features, end))).collect()
    }

    fn predict_last(&self, unit_id: u32, features: &[f64]) -> Result<f64> {
        let len = features.len() / self.n_features();
        self.inner.predict_last(unit_id, &self.window_ending_at(features, len - 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cap_truth: bool,
    pub score_variant: ScoreVariant,
    pub input: InputMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cap_truth: true,
            score_variant: ScoreVariant::Plain,
            input: InputMode::FullSequence,
        }
    }
}

pub fn clamp_rul(v: f64) -> f64 {
    v.clamp(0.0, R_MAX as f64)
}

fn check_compatible(predictor: &dyn RulPredictor, stats: &NormStats) -> Result<()> {
    if predictor.n_features() != stats.n_retained() {
        return Err(Error::Validation(format!(
            "model expects {} features but the normalization stats retain {}",
            predictor.n_features(),
            stats.n_retained()
        )));
    }
    Ok(())
}

fn with_input<T>(
    predictor: &dyn RulPredictor,
    input: InputMode,
    f: impl FnOnce(&dyn RulPredictor) -> Result<T>,
) -> Result<T> {
    match input {
        InputMode::FullSequence => f(predictor),
        InputMode::Windowed { window } => {
            if window == 0 {
                return Err(Error::Validation("window must be at least 1".into()));
            }
            f(&Windowed { inner: predictor, window })
        }
    }
}

/// Scores the final-cycle estimate of every test engine.
///
/// Estimates are clamped to `[0, 125]`; truths are capped at 125 when
/// `cap_truth` is set. `per_engine` is sorted by unit id.
pub fn evaluate_test(
    predictor: &dyn RulPredictor,
    bundle: &DatasetBundle,
    stats: &NormStats,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    check_compatible(predictor, stats)?;
    if bundle.test.len() != bundle.test_rul.len() {
        return Err(Error::Integrity("test_rul does not align with test engines".into()));
    }
    let mut per_engine = with_input(predictor, opts.input, |p| {
        bundle
            .test
            .iter()
            .zip(&bundle.test_rul)
            .map(|(traj, &rul)| {
                let features = apply_normalizer(stats, traj)?;
                let predicted = clamp_rul(p.predict_last(traj.unit_id, &features)?);
                let truth = if opts.cap_truth { rul.min(R_MAX) } else { rul } as f64;
                Ok(EngineResult {
                    unit_id: traj.unit_id,
                    predicted_rul: predicted,
                    true_rul: truth,
                    d_n: predicted - truth,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    per_engine.sort_by_key(|e| e.unit_id);
    let preds: Vec<f64> = per_engine.iter().map(|e| e.predicted_rul).collect();
    let truths: Vec<f64> = per_engine.iter().map(|e| e.true_rul).collect();
    Ok(MetricsReport {
        subset_id: bundle.subset_id,
        rmse: rmse(&preds, &truths)?,
        score: nasa_score(&preds, &truths, opts.score_variant)?,
        score_variant: opts.score_variant,
        n_engines: per_engine.len(),
        per_engine,
    })
}

/// Per-timestep estimates over an observed trajectory with the matching
/// capped labels. `final_rul` is the true RUL at the last observed cycle
/// (0 for a run-to-failure trajectory).
pub fn predict_curve(
    predictor: &dyn RulPredictor,
    trajectory: &EngineTrajectory,
    stats: &NormStats,
    final_rul: u32,
    input: InputMode,
) -> Result<CurveRecord> {
    check_compatible(predictor, stats)?;
    let features = apply_normalizer(stats, trajectory)?;
    let predicted = with_input(predictor, input, |p| p.predict_sequence(trajectory.unit_id, &features))?;
    let t = trajectory.len();
    let full = label_rul(t + final_rul as usize, R_MAX);
    Ok(CurveRecord {
        unit_id: trajectory.unit_id,
        cycles: trajectory.frames.iter().map(|f| f.cycle).collect(),
        predicted: predicted.into_iter().map(clamp_rul).collect(),
        actual: full[..t].to_vec(),
    })
}

/// Batched eval-mode predictions for many sequences at once.
pub fn predict_batch(model: &Model, seqs: &[&LabeledSequence]) -> Result<Tensor> {
    model.predict(&PaddedBatch::from_sequences(seqs, None)?)
}

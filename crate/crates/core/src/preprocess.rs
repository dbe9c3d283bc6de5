//! Full-sequence preprocessing: z-score standardization, capped piecewise RUL
//! labels, random end trimming and padded batching. The sliding-window
//! segmentation used by window-based baselines lives here too.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EngineTrajectory, N_FEATURES, N_SETTINGS};
use crate::error::{Error, Result};
use crate::tensorcore::{Mask, Tensor};

/// Label cap in cycles.
pub const R_MAX: u32 = 125;
/// Standard deviations below this mark a feature as constant.
pub const EPSILON_CONST: f64 = 1e-8;
pub const TRIM_MIN: usize = 10;
pub const TRIM_MAX: usize = 75;
/// Shortest sequence that trimming may leave behind.
pub const MIN_TRIMMED_LEN: usize = 30;
/// Chunk of shuffled sequences (in batches) sorted together by length.
const BUCKET_BATCHES: usize = 4;

pub const NORM_STATS_VERSION: u32 = 1;

/// Per-feature standardization statistics fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub version: u32,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub retained_mask: Vec<bool>,
    pub epsilon_const: f64,
}

impl NormStats {
    pub fn n_retained(&self) -> usize {
        self.retained_mask.iter().filter(|&&r| r).count()
    }

    /// Raw feature indices that survive constant-feature exclusion.
    pub fn retained_indices(&self) -> Vec<usize> {
        (0..self.retained_mask.len()).filter(|&i| self.retained_mask[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stats: NormStats = serde_json::from_str(text)?;
        if stats.version != NORM_STATS_VERSION {
            return Err(Error::Corruption(format!(
                "normalization stats version {} (expected {NORM_STATS_VERSION})",
                stats.version
            )));
        }
        let n = stats.means.len();
        if stats.stds.len() != n || stats.retained_mask.len() != n || n != N_FEATURES {
            return Err(Error::Corruption("normalization stats vectors have inconsistent lengths".into()));
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fits population mean/std per raw feature over every training frame.
///
/// With `include_settings == false` the three operating-setting columns are
/// dropped regardless of their spread.
pub fn fit_normalizer(trajectories: &[EngineTrajectory], include_settings: bool) -> Result<NormStats> {
    let n_frames: usize = trajectories.iter().map(|t| t.len()).sum();
    if n_frames == 0 {
        return Err(Error::Validation("cannot fit normalizer on zero frames".into()));
    }
    let frames = || trajectories.iter().flat_map(|t| t.frames.iter()).map(|f| f.features());
    let mut means = vec![0.0; N_FEATURES];
    for row in frames() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n_frames as f64);
    let mut stds = vec![0.0; N_FEATURES];
    for row in frames() {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n_frames as f64).sqrt());
    let retained_mask = (0..N_FEATURES)
        .map(|i| stds[i] >= EPSILON_CONST && (include_settings || i >= N_SETTINGS))
        .collect();
    Ok(NormStats {
        version: NORM_STATS_VERSION,
        means,
        stds,
        retained_mask,
        epsilon_const: EPSILON_CONST,
    })
}

/// Standardizes a trajectory with fitted stats; returns a row-major `[T × F]`
/// matrix over retained features.
pub fn apply_normalizer(stats: &NormStats, trajectory: &EngineTrajectory) -> Result<Vec<f64>> {
    if trajectory.is_empty() {
        return Err(Error::Validation(format!("unit {} has no frames", trajectory.unit_id)));
    }
    let keep = stats.retained_indices();
    let mut out = Vec::with_capacity(trajectory.len() * keep.len());
    for frame in &trajectory.frames {
        let row = frame.features();
        out.extend(keep.iter().map(|&i| (row[i] - stats.means[i]) / stats.stds[i]));
    }
    Ok(out)
}

/// Capped piecewise-linear RUL: `y_t = min(r_max, T - t)` for `t = 1..=T`.
pub fn label_rul(len: usize, r_max: u32) -> Vec<f64> {
    (1..=len).map(|t| ((len - t) as f64).min(r_max as f64)).collect()
}

/// Which timesteps of a sequence carry a training target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Every timestep (full-sequence mode).
    #[default]
    Dense,
    /// Only the final timestep (sliding-window baseline).
    LastStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub unit_id: u32,
    pub n_features: usize,
    /// Row-major `[T × n_features]`.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    /// Length before any trimming.
    pub original_length: usize,
    pub supervision: Supervision,
}

impl LabeledSequence {
    /// Standardizes a run-to-failure trajectory and attaches its labels.
    pub fn from_trajectory(stats: &NormStats, trajectory: &EngineTrajectory, r_max: u32) -> Result<Self> {
        let features = apply_normalizer(stats, trajectory)?;
        Ok(LabeledSequence {
            unit_id: trajectory.unit_id,
            n_features: stats.n_retained(),
            features,
            labels: label_rul(trajectory.len(), r_max),
            original_length: trajectory.len(),
            supervision: Supervision::Dense,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn truncate(&mut self, len: usize) {
        self.labels.truncate(len);
        self.features.truncate(len * self.n_features);
    }
}

/// Number of trailing steps to cut from a sequence of length `len`, or `None`
/// when `len < TRIM_MIN + MIN_TRIMMED_LEN` leaves no admissible amount.
pub fn draw_trim_amount<R: Rng>(len: usize, rng: &mut R) -> Option<usize> {
    if len < TRIM_MIN + MIN_TRIMMED_LEN {
        return None;
    }
    let hi = TRIM_MAX.min(len - MIN_TRIMMED_LEN);
    Some(rng.gen_range(TRIM_MIN..=hi))
}

/// Removes a uniformly drawn 10..=75 steps from the end, never going below 30.
pub fn trim_random_end<R: Rng>(seq: &LabeledSequence, rng: &mut R) -> LabeledSequence {
    let mut out = seq.clone();
    if let Some(r) = draw_trim_amount(seq.len(), rng) {
        out.truncate(seq.len() - r);
    }
    out
}

/// Fixed-length windows ending at every `stride`-th timestep, each supervised
/// at its last step. Sequences shorter than `window` yield one window
/// left-padded with zeros.
pub fn window_segment(seq: &LabeledSequence, window: usize, stride: usize) -> Result<Vec<LabeledSequence>> {
    if window == 0 || stride == 0 {
        return Err(Error::Validation("window and stride must be at least 1".into()));
    }
    let f = seq.n_features;
    let make = |features: Vec<f64>, labels: Vec<f64>| LabeledSequence {
        unit_id: seq.unit_id,
        n_features: f,
        features,
        labels,
        original_length: seq.original_length,
        supervision: Supervision::LastStep,
    };
    let len = seq.len();
    if len < window {
        let pad = window - len;
        let mut features = vec![0.0; pad * f];
        features.extend_from_slice(&seq.features);
        let mut labels = vec![0.0; pad];
        labels.extend_from_slice(&seq.labels);
        return Ok(vec![make(features, labels)]);
    }
    Ok((window - 1..len)
        .step_by(stride)
        .map(|end| {
            let start = end + 1 - window;
            make(
                seq.features[start * f..(end + 1) * f].to_vec(),
                seq.labels[start..=end].to_vec(),
            )
        })
        .collect())
}

/// Right-padded minibatch in `[B, F, L]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub unit_ids: Vec<u32>,
    pub features: Tensor,
    pub labels: Tensor,
    /// Real timesteps.
    pub mask: Mask,
    /// Timesteps that contribute to the loss (a subset of `mask`).
    pub loss_mask: Mask,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    /// Pads to the longest member, or to `pad_to` when that is larger.
    pub fn from_sequences(seqs: &[&LabeledSequence], pad_to: Option<usize>) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::Validation("cannot batch zero sequences".into()))?;
        let f = first.n_features;
        if f == 0 {
            return Err(Error::Validation("sequences have no retained features".into()));
        }
        let longest = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if longest == 0 {
            return Err(Error::Validation("cannot batch empty sequences".into()));
        }
        let l = pad_to.unwrap_or(0).max(longest);
        let b = seqs.len();
        let mut features = vec![0.0; b * f * l];
        let mut labels = vec![0.0; b * l];
        let mut loss_valid = vec![false; b * l];
        for (bi, s) in seqs.iter().enumerate() {
            if s.n_features != f {
                return Err(Error::shape("sequence feature count", f, s.n_features));
            }
            for t in 0..s.len() {
                for c in 0..f {
                    features[(bi * f + c) * l + t] = s.features[t * f + c];
                }
            }
            labels[bi * l..bi * l + s.len()].copy_from_slice(&s.labels);
            match s.supervision {
                Supervision::Dense => loss_valid[bi * l..bi * l + s.len()].fill(true),
                Supervision::LastStep => loss_valid[bi * l + s.len() - 1] = true,
            }
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        Ok(PaddedBatch {
            unit_ids: seqs.iter().map(|s| s.unit_id).collect(),
            features: Tensor::new(vec![b, f, l], features)?,
            labels: Tensor::new(vec![b, l], labels)?,
            mask: Mask::from_lengths(&lengths, l),
            loss_mask: Mask::new(b, l, loss_valid)?,
            lengths,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.mask.length()
    }
}

/// Shuffles, groups sequences of similar length, pads and shuffles batch order.
///
/// Every input sequence lands in exactly one batch; only the final batch of
/// the epoch can be smaller than `batch_size`.
pub fn build_batches<R: Rng>(
    seqs: &[LabeledSequence],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<PaddedBatch>> {
    Ok(batch_indices(seqs, batch_size, rng)?
        .into_iter()
        .map(|idx| {
            let members: Vec<&LabeledSequence> = idx.iter().map(|&i| &seqs[i]).collect();
            PaddedBatch::from_sequences(&members, None)
        })
        .collect::<Result<_>>()?)
}

/// Index groups behind [`build_batches`].
pub fn batch_indices<R: Rng>(seqs: &[LabeledSequence], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if seqs.is_empty() {
        return Err(Error::Validation("cannot batch an empty sequence list".into()));
    }
    if batch_size == 0 {
        return Err(Error::Validation("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(seqs.len().div_ceil(batch_size));
    for chunk in order.chunks_mut(batch_size * BUCKET_BATCHES) {
        chunk.sort_by_key(|&i| seqs[i].len());
        batches.extend(chunk.chunks(batch_size).map(|c| c.to_vec()));
    }
    // Keep the single short batch last so batch sizes are {B, .., B, rest}.
    let tail = if seqs.len() % batch_size != 0 { batches.pop() } else { None };
    batches.shuffle(rng);
    batches.extend(tail);
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Frame, N_SENSORS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(unit: u32, col: impl Fn(usize, usize) -> f64, len: usize) -> EngineTrajectory {
        EngineTrajectory {
            unit_id: unit,
            frames: (0..len)
                .map(|t| {
                    let mut settings = [0.0; N_SETTINGS];
                    let mut sensors = [0.0; N_SENSORS];
                    for (i, s) in settings.iter_mut().enumerate() {
                        *s = col(t, i);
                    }
                    for (i, s) in sensors.iter_mut().enumerate() {
                        *s = col(t, i + N_SETTINGS);
                    }
                    Frame {
                        cycle: t as u32 + 1,
                        settings,
                        sensors,
                    }
                })
                .collect(),
        }
    }

    fn seq(len: usize, unit: u32) -> LabeledSequence {
        LabeledSequence {
            unit_id: unit,
            n_features: 2,
            features: (0..len * 2).map(|v| v as f64).collect(),
            labels: label_rul(len, R_MAX),
            original_length: len,
            supervision: Supervision::Dense,
        }
    }

    #[test]
    fn population_std_of_one_two_three() {
        // feature 5 takes 1, 2, 3; feature 0 varies; the rest are constant.
        let t = traj(1, |t, i| if i == 5 { t as f64 + 1.0 } else if i == 0 { (t * t) as f64 } else { 7.0 }, 3);
        let stats = fit_normalizer(&[t.clone()], true).unwrap();
        assert!((stats.means[5] - 2.0).abs() < 1e-12);
        assert!((stats.stds[5] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((stats.stds[5] - 0.8165).abs() < 1e-4);
        assert_eq!(stats.retained_indices(), vec![0, 5]);
        let z = apply_normalizer(&stats, &t).unwrap();
        let col5: Vec<f64> = z.chunks(2).map(|r| r[1]).collect();
        for (a, b) in col5.iter().zip([-1.224744871391589, 0.0, 1.224744871391589]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_frame_maps_to_zero() {
        let t = traj(1, |t, i| (t as f64) * (i as f64 + 1.0), 5);
        let stats = fit_normalizer(&[t], true).unwrap();
        let mut at_mean = traj(2, |_, _| 0.0, 1);
        let m = &stats.means;
        at_mean.frames[0].settings.copy_from_slice(&m[..N_SETTINGS]);
        at_mean.frames[0].sensors.copy_from_slice(&m[N_SETTINGS..]);
        assert!(apply_normalizer(&stats, &at_mean).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn settings_switch_drops_settings() {
        let t = traj(1, |t, i| (t * (i + 1)) as f64, 4);
        let with = fit_normalizer(&[t.clone()], true).unwrap();
        let without = fit_normalizer(&[t], false).unwrap();
        assert_eq!(with.n_retained(), N_FEATURES);
        assert_eq!(without.n_retained(), N_FEATURES - N_SETTINGS);
    }

    #[test]
    fn empty_fit_is_error() {
        assert!(fit_normalizer(&[], true).is_err());
    }

    #[test]
    fn stats_json_round_trip_and_version_check() {
        let t = traj(1, |t, i| (t * (i + 1)) as f64 + 0.1, 4);
        let stats = fit_normalizer(&[t], true).unwrap();
        let back = NormStats::from_json(&stats.to_json().unwrap()).unwrap();
        assert_eq!(back, stats);
        let bumped = stats.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(NormStats::from_json(&bumped), Err(Error::Corruption(_))));
    }

    #[test]
    fn labels_for_long_short_and_boundary_lengths() {
        let y = label_rul(200, 125);
        assert_eq!((y[0], y[149], y[199]), (125.0, 50.0, 0.0));
        let y = label_rul(50, 125);
        assert_eq!(y, (0..50).rev().map(|v| v as f64).collect::<Vec<_>>());
        let y = label_rul(126, 125);
        assert_eq!((y[0], y[1]), (125.0, 124.0));
        assert_eq!(y.iter().filter(|&&v| v == 125.0).count(), 1);
    }

    #[test]
    fn trim_keeps_labels_in_lockstep() {
        struct Fixed(u64);
        impl rand::RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, d: &mut [u8]) {
                d.fill(0)
            }
            fn try_fill_bytes(&mut self, d: &mut [u8]) -> std::result::Result<(), rand::Error> {
                d.fill(0);
                Ok(())
            }
        }
        let s = seq(100, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = draw_trim_amount(100, &mut rng.clone()).unwrap();
        let t = trim_random_end(&s, &mut rng);
        assert_eq!(t.len(), 100 - r);
        assert_eq!(*t.labels.last().unwrap(), r as f64);
        assert_eq!(t.features.len(), t.len() * 2);
        assert_eq!(t.original_length, 100);
        // degenerate rng still respects the bounds
        let r = draw_trim_amount(100, &mut Fixed(0)).unwrap();
        assert!((TRIM_MIN..=TRIM_MAX).contains(&r));
    }

    #[test]
    fn short_sequences_are_not_trimmed() {
        let s = seq(35, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(trim_random_end(&s, &mut rng), s);
        assert!(draw_trim_amount(39, &mut rng).is_none());
        assert_eq!(draw_trim_amount(40, &mut rng), Some(10));
    }

    #[test]
    fn window_counts() {
        let s = seq(100, 1);
        let w = window_segment(&s, 31, 1).unwrap();
        assert_eq!(w.len(), 70);
        assert!(w.iter().all(|x| x.len() == 31 && x.supervision == Supervision::LastStep));
        assert_eq!(*w[0].labels.last().unwrap(), s.labels[30]);
        assert_eq!(window_segment(&s, 1, 1).unwrap().len(), 100);
        assert_eq!(window_segment(&s, 31, 10).unwrap().len(), 7);
    }

    #[test]
    fn short_sequence_window_is_left_padded() {
        let s = seq(5, 1);
        let w = window_segment(&s, 8, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].features[..6].iter().all(|&v| v == 0.0));
        assert_eq!(&w[0].features[6..], &s.features[..]);
        assert_eq!(*w[0].labels.last().unwrap(), 0.0);
    }

    #[test]
    fn batch_sizes_and_mask() {
        let seqs: Vec<LabeledSequence> = (0..10).map(|i| seq(40 + i * 3, i as u32)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = build_batches(&seqs, 8, &mut rng).unwrap();
        let mut sizes: Vec<usize> = batches.iter().map(|b| b.batch_size()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 8]);
        for b in &batches {
            for (bi, &n) in b.lengths.iter().enumerate() {
                for t in 0..b.max_len() {
                    assert_eq!(b.mask.get(bi, t), t < n);
                    if t >= n {
                        assert_eq!(b.labels.data()[bi * b.max_len() + t], 0.0);
                    }
                }
            }
        }

        let same: Vec<LabeledSequence> = (0..5).map(|i| seq(33, i)).collect();
        let batches = build_batches(&same, 8, &mut rng).unwrap();
        assert!(batches[0].mask.valid().iter().all(|&v| v));
    }

    #[test]
    fn batch_layout_is_channel_major() {
        let s = seq(3, 4);
        let b = PaddedBatch::from_sequences(&[&s], Some(5)).unwrap();
        assert_eq!(b.features.shape(), &[1, 2, 5]);
        assert_eq!(b.features.data(), &[0.0, 2.0, 4.0, 0.0, 0.0, 1.0, 3.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn last_step_supervision_marks_one_position() {
        let w = window_segment(&seq(10, 1), 4, 1).unwrap();
        let b = PaddedBatch::from_sequences(&[&w[0], &w[1]], None).unwrap();
        assert_eq!(b.loss_mask.count(), 2);
        assert!(b.loss_mask.get(0, 3) && b.loss_mask.get(1, 3));
    }
}

//! Residual temporal convolutional network with a per-timestep regression head.
//!
//! Each residual block is a stack of `conv -> batch-norm -> relu -> dropout`
//! units at increasing dilation; the block input is added back at the end,
//! through a 1×1 projection when the channel count changes. The head is a
//! chain of pointwise layers ending in one output channel: one RUL value per
//! timestep.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::PaddedBatch;
use crate::tensorcore::{
    dropout_backward, dropout_forward, relu_backward, relu_forward, BatchNorm, BatchNormCache, Conv1d,
    DropoutCache, Mask, Mode, PaddingMode, Param, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub num_blocks: usize,
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub channels: usize,
    pub dropout: f64,
    pub head_widths: Vec<usize>,
    #[serde(default)]
    pub padding_mode: PaddingMode,
    /// Retained input features. 0 in a run config means "take it from the data".
    #[serde(default)]
    pub in_features: usize,
}

impl TcnConfig {
    /// Four residual blocks of five dilated convolutions, 200 filters.
    pub fn tcn_4block(in_features: usize) -> Self {
        TcnConfig {
            num_blocks: 4,
            dilations: vec![1, 2, 4, 8, 16],
            kernel: 3,
            channels: 200,
            dropout: 0.3,
            head_widths: vec![100, 50, 25, 10, 1],
            padding_mode: PaddingMode::CausalLeft,
            in_features,
        }
    }

    /// Two blocks: the depth whose causal receptive field is 125 steps.
    pub fn tcn_rf125(in_features: usize) -> Self {
        TcnConfig {
            num_blocks: 2,
            ..Self::tcn_4block(in_features)
        }
    }

    /// One block of 16 channels, for tests and quick experiments. No dropout:
    /// the narrow head cannot absorb dropped units at this width.
    pub fn tiny(in_features: usize) -> Self {
        TcnConfig {
            num_blocks: 1,
            dilations: vec![1, 2, 4, 8, 16],
            kernel: 3,
            channels: 16,
            dropout: 0.0,
            head_widths: vec![16, 8, 8, 4, 1],
            padding_mode: PaddingMode::CausalLeft,
            in_features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(format!("TcnConfig: {m}")));
        if self.num_blocks == 0 {
            return fail("num_blocks must be at least 1".into());
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return fail("dilations must be non-empty and positive".into());
        }
        if self.kernel == 0 || self.channels == 0 || self.in_features == 0 {
            return fail("kernel, channels and in_features must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.head_widths.last() {
            Some(1) if !self.head_widths.contains(&0) => Ok(()),
            _ => fail("head_widths must be positive and end in 1".into()),
        }
    }
}

/// Named architecture presets selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "tcn-4block")]
    Tcn4Block,
    #[serde(rename = "tcn-rf125")]
    TcnRf125,
    #[serde(rename = "tiny")]
    Tiny,
}

impl Preset {
    pub fn config(self, in_features: usize) -> TcnConfig {
        match self {
            Preset::Tcn4Block => TcnConfig::tcn_4block(in_features),
            Preset::TcnRf125 => TcnConfig::tcn_rf125(in_features),
            Preset::Tiny => TcnConfig::tiny(in_features),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcn-4block" => Ok(Preset::Tcn4Block),
            "tcn-rf125" => Ok(Preset::TcnRf125),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::Validation(format!(
                "unknown preset {other:?} (expected tcn-4block, tcn-rf125 or tiny)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Tcn4Block => "tcn-4block",
            Preset::TcnRf125 => "tcn-rf125",
            Preset::Tiny => "tiny",
        })
    }
}

/// Input timesteps that can reach one output under the stacked dilations.
/// Causal and symmetric padding cover the same total span.
pub fn compute_receptive_field(cfg: &TcnConfig) -> usize {
    let per_block: usize = cfg.dilations.iter().map(|d| (cfg.kernel - 1) * d).sum();
    1 + cfg.num_blocks * per_block
}

#[derive(Clone, Debug, PartialEq)]
struct ConvUnit {
    conv: Conv1d,
    bn: BatchNorm,
}

struct UnitTape {
    input: Tensor,
    bn: BatchNormCache,
    pre_relu: Tensor,
    dropout: DropoutCache,
}

#[derive(Clone, Debug, PartialEq)]
struct ResidualBlock {
    units: Vec<ConvUnit>,
    skip: Option<Conv1d>,
}

struct BlockTape {
    input: Tensor,
    units: Vec<UnitTape>,
}

struct HeadTape {
    inputs: Vec<Tensor>,
    pre_relu: Vec<Tensor>,
    dropout: Vec<DropoutCache>,
}

/// Intermediate values recorded by [`Model::forward`] for [`Model::backward`].
pub struct Tape {
    mask: Mask,
    blocks: Vec<BlockTape>,
    head: HeadTape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: TcnConfig,
    blocks: Vec<ResidualBlock>,
    head: Vec<Conv1d>,
}

impl Model {
    pub fn new(config: TcnConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut cin = config.in_features;
        for _ in 0..config.num_blocks {
            let mut units = Vec::with_capacity(config.dilations.len());
            let mut c = cin;
            for &d in &config.dilations {
                units.push(ConvUnit {
                    conv: Conv1d::new(c, config.channels, config.kernel, d, config.padding_mode, rng),
                    bn: BatchNorm::new(config.channels),
                });
                c = config.channels;
            }
            let skip = (cin != config.channels)
                .then(|| Conv1d::new(cin, config.channels, 1, 1, PaddingMode::CausalLeft, rng));
            blocks.push(ResidualBlock { units, skip });
            cin = config.channels;
        }
        let mut head = Vec::with_capacity(config.head_widths.len());
        for &w in &config.head_widths {
            head.push(Conv1d::new(cin, w, 1, 1, PaddingMode::CausalLeft, rng));
            cin = w;
        }
        Ok(Model { config, blocks, head })
    }

    /// Builds a model from a seed alone.
    pub fn with_seed(config: TcnConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> &TcnConfig {
        &self.config
    }

    /// Runs a batch and records what backward needs. Train mode applies
    /// dropout, normalizes with batch statistics and updates running stats.
    pub fn forward(&mut self, batch: &PaddedBatch, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tape)> {
        self.forward_tensor(&batch.features, &batch.mask, mode, rng)
    }

    pub fn forward_tensor(
        &mut self,
        x: &Tensor,
        mask: &Mask,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Tape)> {
        let (out, tape) = match mode {
            Mode::Train => self.run_train(x, mask, rng)?,
            Mode::Eval => self.run_eval(x, mask)?,
        };
        Ok((out, tape))
    }

    /// Eval-mode prediction, `[B, L]`, without mutating the model.
    pub fn predict(&self, batch: &PaddedBatch) -> Result<Tensor> {
        Ok(self.run_eval(&batch.features, &batch.mask)?.0)
    }

    pub fn predict_tensor(&self, x: &Tensor, mask: &Mask) -> Result<Tensor> {
        Ok(self.run_eval(x, mask)?.0)
    }

    fn check_input(&self, x: &Tensor, mask: &Mask) -> Result<()> {
        let (b, f, l) = x.dims3()?;
        if f != self.config.in_features {
            return Err(Error::shape("input features", self.config.in_features, f));
        }
        mask.check(b, l)
    }

    fn run_eval(&self, x: &Tensor, mask: &Mask) -> Result<(Tensor, Tape)> {
        self.check_input(x, mask)?;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = h.clone();
            let mut units = Vec::with_capacity(block.units.len());
            for unit in &block.units {
                let conv_out = unit.conv.forward(&h, mask)?;
                let (bn_out, x_hat) = unit.bn.eval_normalize(&conv_out, mask)?;
                units.push(UnitTape {
                    input: std::mem::replace(&mut h, relu_forward(&bn_out)),
                    bn: BatchNormCache::Eval { x_hat },
                    pre_relu: bn_out,
                    dropout: DropoutCache::identity(),
                });
            }
            let skip = match &block.skip {
                Some(proj) => proj.forward(&input, mask)?,
                None => input.clone(),
            };
            h.add_assign(&skip)?;
            blocks.push(BlockTape { input, units });
        }
        let (out, head) = self.run_head(h, mask, None)?;
        Ok((out, Tape { mask: mask.clone(), blocks, head }))
    }

    fn run_train(&mut self, x: &Tensor, mask: &Mask, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tape)> {
        self.check_input(x, mask)?;
        let rate = self.config.dropout;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let input = h.clone();
            let mut units = Vec::with_capacity(block.units.len());
            for unit in &mut block.units {
                let conv_out = unit.conv.forward(&h, mask)?;
                let (bn_out, bn_cache) = unit.bn.forward(&conv_out, mask, Mode::Train)?;
                let act = relu_forward(&bn_out);
                let (dropped, dropout) = dropout_forward(&act, mask, rate, Mode::Train, rng)?;
                units.push(UnitTape {
                    input: std::mem::replace(&mut h, dropped),
                    bn: bn_cache,
                    pre_relu: bn_out,
                    dropout,
                });
            }
            let skip = match &block.skip {
                Some(proj) => proj.forward(&input, mask)?,
                None => input.clone(),
            };
            h.add_assign(&skip)?;
            blocks.push(BlockTape { input, units });
        }
        let (out, head) = self.run_head(h, mask, Some(rng))?;
        out.ensure_finite("model forward")?;
        Ok((out, Tape { mask: mask.clone(), blocks, head }))
    }

    fn run_head(&self, mut h: Tensor, mask: &Mask, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, HeadTape)> {
        let n = self.head.len();
        let mut tape = HeadTape {
            inputs: Vec::with_capacity(n),
            pre_relu: Vec::with_capacity(n),
            dropout: Vec::with_capacity(n),
        };
        for (i, layer) in self.head.iter().enumerate() {
            let y = layer.forward(&h, mask)?;
            tape.inputs.push(std::mem::replace(&mut h, y));
            if i + 1 < n {
                let act = relu_forward(&h);
                let (dropped, cache) = match rng.as_deref_mut() {
                    Some(rng) => dropout_forward(&act, mask, self.config.dropout, Mode::Train, rng)?,
                    None => (act, DropoutCache::identity()),
                };
                tape.pre_relu.push(std::mem::replace(&mut h, dropped));
                tape.dropout.push(cache);
            }
        }
        let (b, _, l) = h.dims3()?;
        Ok((h.reshape(vec![b, l])?, tape))
    }

    /// Accumulates parameter gradients for `grad = dLoss/dOutput` (`[B, L]`)
    /// and returns the gradient with respect to the input features.
    pub fn backward(&mut self, tape: &Tape, grad: &Tensor) -> Result<Tensor> {
        let mask = &tape.mask;
        let (b, l) = match grad.shape() {
            [b, l] => (*b, *l),
            other => return Err(Error::shape("output gradient rank", 2, other.len())),
        };
        mask.check(b, l)?;
        let mut g = grad.clone().reshape(vec![b, 1, l])?;
        let n = self.head.len();
        for i in (0..n).rev() {
            if i + 1 < n {
                g = dropout_backward(&tape.head.dropout[i], &g)?;
                g = relu_backward(&tape.head.pre_relu[i], &g)?;
            }
            g = self.head[i].backward(&tape.head.inputs[i], &g, mask)?;
        }
        for (block, bt) in self.blocks.iter_mut().zip(&tape.blocks).rev() {
            let mut skip_grad = match &mut block.skip {
                Some(proj) => proj.backward(&bt.input, &g, mask)?,
                None => g.clone(),
            };
            for (unit, ut) in block.units.iter_mut().zip(&bt.units).rev() {
                g = dropout_backward(&ut.dropout, &g)?;
                g = relu_backward(&ut.pre_relu, &g)?;
                g = unit.bn.backward(&ut.bn, &g, mask)?;
                g = unit.conv.backward(&ut.input, &g, mask)?;
            }
            skip_grad.add_assign(&g)?;
            g = skip_grad;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Trainable tensors in a fixed order with stable names.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (ui, unit) in block.units.iter_mut().enumerate() {
                for (n, p) in unit.conv.params_mut() {
                    out.push((format!("blocks.{bi}.units.{ui}.conv.{n}"), p));
                }
                for (n, p) in unit.bn.params_mut() {
                    out.push((format!("blocks.{bi}.units.{ui}.bn.{n}"), p));
                }
            }
            if let Some(skip) = &mut block.skip {
                for (n, p) in skip.params_mut() {
                    out.push((format!("blocks.{bi}.skip.{n}"), p));
                }
            }
        }
        for (li, layer) in self.head.iter_mut().enumerate() {
            for (n, p) in layer.params_mut() {
                out.push((format!("head.{li}.{n}"), p));
            }
        }
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (ui, unit) in block.units.iter_mut().enumerate() {
                for (n, t) in unit.bn.buffers_mut() {
                    out.push((format!("blocks.{bi}.units.{ui}.bn.{n}"), t));
                }
            }
        }
        out
    }

    /// Every stored tensor (parameters, then buffers) as owned copies.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut copy = self.clone();
        let mut out: Vec<(String, Tensor)> = copy
            .named_params_mut()
            .into_iter()
            .map(|(n, p)| (n, p.value.clone()))
            .collect();
        out.extend(copy.named_buffers_mut().into_iter().map(|(n, t)| (n, t.clone())));
        out
    }

    /// Exact number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.clone().named_params_mut().iter().map(|(_, p)| p.numel()).sum()
    }

    /// Zeroes every convolution inside the residual blocks (not the skip
    /// projections), which reduces each block to its skip path.
    pub fn zero_block_convolutions(&mut self) {
        for block in &mut self.blocks {
            for unit in &mut block.units {
                unit.conv.weight.value.fill(0.0);
                unit.conv.bias.value.fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{label_rul, LabeledSequence, Supervision};
    use crate::tensorcore::{grad_check, masked_mse_loss};
    use rand::Rng;

    fn random_seq(unit: u32, len: usize, f: usize, rng: &mut ChaCha8Rng) -> LabeledSequence {
        LabeledSequence {
            unit_id: unit,
            n_features: f,
            features: (0..len * f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            labels: label_rul(len, 125),
            original_length: len,
            supervision: Supervision::Dense,
        }
    }

    #[test]
    fn receptive_fields() {
        let mut cfg = TcnConfig::tcn_4block(24);
        cfg.num_blocks = 1;
        cfg.dilations = vec![1];
        assert_eq!(compute_receptive_field(&cfg), 3);
        cfg.dilations = vec![1, 2, 4, 8, 16];
        assert_eq!(compute_receptive_field(&cfg), 63);
        assert_eq!(compute_receptive_field(&TcnConfig::tcn_rf125(24)), 125);
        assert_eq!(compute_receptive_field(&TcnConfig::tcn_4block(24)), 249);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TcnConfig::tiny(4);
        cfg.head_widths = vec![4, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = TcnConfig::tiny(4);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TcnConfig::tiny(4);
        cfg.dilations.clear();
        assert!(Model::with_seed(cfg, 0).is_err());
        assert_eq!("tcn-rf125".parse::<Preset>().unwrap(), Preset::TcnRf125);
        assert!("huge".parse::<Preset>().is_err());
    }

    #[test]
    fn default_architecture_shapes() {
        let model = Model::with_seed(TcnConfig::tcn_4block(24), 0).unwrap();
        for block in &model.blocks {
            assert_eq!(block.units.len(), 5);
            for unit in &block.units {
                assert_eq!(unit.conv.out_channels(), 200);
            }
        }
        assert!(model.blocks[0].skip.is_some());
        assert!(model.blocks[1..].iter().all(|b| b.skip.is_none()));
        assert_eq!(model.head.last().unwrap().out_channels(), 1);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::with_seed(TcnConfig::tiny(5), 17).unwrap();
        let b = Model::with_seed(TcnConfig::tiny(5), 17).unwrap();
        let c = Model::with_seed(TcnConfig::tiny(5), 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn feature_mismatch_is_shape_error() {
        let model = Model::with_seed(TcnConfig::tiny(5), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_seq(1, 10, 4, &mut rng);
        let batch = PaddedBatch::from_sequences(&[&s], None).unwrap();
        assert!(matches!(model.predict(&batch), Err(Error::Shape { .. })));
    }

    #[test]
    fn output_shape_and_batch_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::with_seed(TcnConfig::tiny(3), 1).unwrap();
        let a = random_seq(1, 20, 3, &mut rng);
        let b = random_seq(2, 14, 3, &mut rng);
        let batch = PaddedBatch::from_sequences(&[&a, &b, &a], None).unwrap();
        let out = model.predict(&batch).unwrap();
        assert_eq!(out.shape(), &[3, 20]);
        assert_eq!(out.data()[..20], out.data()[40..60]);
        assert!(out.data()[20 + 14..40].iter().all(|&v| v == 0.0));
        assert_eq!(model.predict(&batch).unwrap(), out);
    }

    #[test]
    fn zeroed_blocks_reduce_to_skip_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = TcnConfig::tiny(4);
        cfg.channels = 4;
        let mut model = Model::with_seed(cfg, 2).unwrap();
        model.zero_block_convolutions();
        let s = random_seq(1, 12, 4, &mut rng);
        let batch = PaddedBatch::from_sequences(&[&s], None).unwrap();
        let (_, tape) = model.forward(&batch, Mode::Train, &mut rng).unwrap();
        let block_in = &tape.blocks[0].input;
        // Block output is the input of the first head layer.
        let block_out = &tape.head.inputs[0];
        assert_eq!(block_out, block_in);
    }

    fn is_pre_norm_bias(name: &str) -> bool {
        name.starts_with("blocks.") && name.ends_with(".conv.bias")
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut worst = 0.0f64;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = TcnConfig {
                num_blocks: 1,
                dilations: vec![1, 2],
                kernel: 3,
                channels: 4,
                dropout: 0.0,
                head_widths: vec![3, 1],
                padding_mode: PaddingMode::CausalLeft,
                in_features: 3,
            };
            let model = Model::new(cfg, &mut rng).unwrap();
            let s1 = random_seq(1, 12, 3, &mut rng);
            let s2 = random_seq(2, 9, 3, &mut rng);
            let batch = PaddedBatch::from_sequences(&[&s1, &s2], None).unwrap();
            let target: Vec<f64> = (0..batch.labels.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = Tensor::new(batch.labels.shape().to_vec(), target).unwrap();

            let loss_of = |m: &Model, x: &Tensor| -> f64 {
                let (out, _) = m.clone().forward_tensor(x, &batch.mask, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                masked_mse_loss(&out, &target, &batch.mask).unwrap().0
            };
            let mut m = model.clone();
            let (out, tape) = m.forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let (_, g) = masked_mse_loss(&out, &target, &batch.mask).unwrap();
            m.zero_grad();
            let dx = m.backward(&tape, &g).unwrap();

            let names: Vec<String> = m.named_params_mut().into_iter().map(|(n, _)| n).collect();
            for name in names {
                let analytic = m
                    .named_params_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, p)| p.grad.data().to_vec())
                    .unwrap();
                let mut base = model.clone();
                let x0 = base
                    .named_params_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, p)| p.value.data().to_vec())
                    .unwrap();
                let loss_at = |v: &[f64]| {
                    let mut probe = model.clone();
                    for (n, p) in probe.named_params_mut() {
                        if n == name {
                            p.value.data_mut().copy_from_slice(v);
                        }
                    }
                    loss_of(&probe, &batch.features)
                };
                if is_pre_norm_bias(&name) {
                    // Batch-norm removes a per-channel shift, so this gradient is
                    // identically zero; compare magnitudes instead of ratios.
                    assert!(analytic.iter().all(|g| g.abs() < 1e-12), "{name}: {analytic:?}");
                    let mut v = x0.clone();
                    v[0] += 1e-3;
                    assert!((loss_at(&v) - loss_at(&x0)).abs() < 1e-12);
                    continue;
                }
                let err = grad_check(loss_at, &x0, &analytic, 1e-6);
                worst = worst.max(err);
                assert!(err < 1e-3, "seed {seed} param {name}: {err}");
            }
            // input gradient at valid positions only; padded inputs are never read
            let valid_dx: Vec<f64> = dx.data().to_vec();
            let err = grad_check(
                |v| loss_of(&model, &Tensor::new(batch.features.shape().to_vec(), v.to_vec()).unwrap()),
                batch.features.data(),
                &valid_dx,
                1e-6,
            );
            assert!(err < 1e-3, "seed {seed} input: {err}");
        }
        eprintln!("worst end-to-end relative error: {worst:e}");
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        let mut cfg = TcnConfig::tiny(10);
        cfg.head_widths = vec![1];
        cfg.num_blocks = 1;
        cfg.dilations = vec![1];
        cfg.channels = 10;
        // conv 10*10*3+10, bn 20, head 10+1
        assert_eq!(Model::with_seed(cfg, 0).unwrap().count_parameters(), 310 + 20 + 11);
    }
}

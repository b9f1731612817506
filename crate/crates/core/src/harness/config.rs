use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::SyntheticTaskConfig;
use crate::augment::SpecAugmentConfig;
use crate::consistency::CrConfig;
use crate::error::{Error, Result};
use crate::model::{AdamConfig, EncoderConfig};
use crate::smooth::SrConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ctc,
    CrCtc,
    SrCtc,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ctc => "ctc",
            Objective::CrCtc => "cr_ctc",
            Objective::SrCtc => "sr_ctc",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(Objective::Ctc),
            "cr_ctc" => Ok(Objective::CrCtc),
            "sr_ctc" => Ok(Objective::SrCtc),
            _ => Err(Error::invalid(format!("unknown objective {s:?} (ctc, cr_ctc, sr_ctc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs for the single-branch objectives.
    pub epochs: usize,
    /// Batch size for the single-branch objectives.
    pub batch_size: usize,
    /// Halve epochs and batch size for the two-branch objective.
    pub fair_cost: bool,
    pub optimizer: String,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            fair_cost: true,
            optimizer: "adam".into(),
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub objective: Objective,
    pub task: SyntheticTaskConfig,
    /// Input and output sizes are taken from `task`.
    pub model: EncoderConfig,
    pub augment: SpecAugmentConfig,
    pub cr: CrConfig,
    pub sr: SrConfig,
    pub train: TrainConfig,
    pub eval_beam: usize,
}

/// Every configuration key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("objective", "training objective: ctc, cr_ctc or sr_ctc"),
    ("task.vocab_size", "number of non-blank tokens"),
    ("task.min_frames_per_token", "shortest rendering of one token, in frames (>= 2)"),
    ("task.max_frames_per_token", "longest rendering of one token, in frames"),
    ("task.feature_dim", "feature bins per frame"),
    ("task.noise_std", "standard deviation of additive Gaussian noise"),
    ("task.prototype_scale", "standard deviation of token prototype entries"),
    ("task.units_per_token", "sub-units each token is rendered as"),
    ("task.unit_inventory", "shared sub-unit inventory size; 0 gives every token its own units"),
    ("task.coarticulation", "blend weight toward the neighbouring token at boundaries, in [0, 1]"),
    ("task.edge_silence_frames", "silent frames before the first and after the last token"),
    ("task.min_label_len", "shortest label sequence"),
    ("task.max_label_len", "longest label sequence"),
    ("task.successor_prob", "probability of following each token's preferred successor, in [0, 1]"),
    ("task.allow_repeats", "allow identical adjacent labels (true/false)"),
    ("task.train_samples", "training utterances"),
    ("task.dev_samples", "development utterances"),
    ("task.test_samples", "test utterances"),
    ("task.seed", "dataset generation seed"),
    ("model.layers", "residual convolution layers"),
    ("model.hidden_dim", "hidden width"),
    ("model.context_radius", "frames of context on each side per layer"),
    ("model.dropout_prob", "dropout probability inside residual branches"),
    ("model.layer_drop_prob", "probability of skipping a residual layer"),
    ("model.downsample_factor", "frame-rate reduction after the input projection"),
    ("augment.warp_factor", "maximum time-warp shift in frames; 0 disables"),
    ("augment.num_freq_masks", "frequency masks per view before scaling"),
    ("augment.max_freq_mask_width", "widest frequency mask, in bins"),
    ("augment.num_time_masks", "time masks per view before scaling"),
    ("augment.max_time_mask_width", "widest time mask, in frames"),
    ("augment.max_time_mask_fraction", "cap on the masked fraction of frames before scaling"),
    ("augment.time_scale_ratio", "multiplier on time-mask count and fraction cap"),
    ("augment.freq_scale_ratio", "multiplier on frequency-mask count"),
    ("augment.mask_value", "value written into masked cells"),
    ("cr.alpha", "consistency weight"),
    ("cr.target_mode", "stop_gradient or flow_gradient"),
    ("cr.distance", "bidirectional_kl or hard_label_ce"),
    ("cr.frame_filter", "all, exclude_self_masked or exclude_self_unmasked"),
    ("cr.normalize_by_frames", "divide the consistency sum by the frame count (true/false)"),
    ("sr.kernel", "three comma-separated smoothing weights summing to 1"),
    ("sr.beta", "smoothness weight"),
    ("train.epochs", "epochs for ctc and sr_ctc"),
    ("train.batch_size", "utterances per step for ctc and sr_ctc"),
    ("train.fair_cost", "halve epochs and batch size for cr_ctc (true/false)"),
    ("train.optimizer", "adam or sgd"),
    ("train.lr", "learning rate"),
    ("train.beta1", "Adam first-moment decay"),
    ("train.beta2", "Adam second-moment decay"),
    ("train.eps", "Adam denominator offset"),
    ("train.grad_clip", "global gradient-norm clip; 0 disables"),
    ("train.seed", "seed for initialization, shuffling, augmentation and dropout"),
    ("eval.beam", "prefix beam width"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Objective::Ctc)
    }
}

impl ExperimentConfig {
    /// Benchmark defaults for `objective`. The augmentation sizes are scaled
    /// down to synthetic utterances of a few dozen frames; the two-branch
    /// objective additionally gets 2.5x time masking.
    ///
    /// The task spells each token with three sub-units drawn from a shared
    /// inventory of four, with a mostly predictable successor, so a frame is
    /// only identifiable in context.
    pub fn preset(objective: Objective) -> Self {
        let task = SyntheticTaskConfig {
            prototype_scale: 0.5,
            units_per_token: 3,
            unit_inventory: 4,
            successor_prob: 0.9,
            train_samples: 100,
            dev_samples: 50,
            test_samples: 300,
            ..SyntheticTaskConfig::default()
        };
        let model = EncoderConfig {
            hidden_dim: 32,
            ..EncoderConfig::new(task.feature_dim, task.vocab_size + 1)
        };
        let mut augment = SpecAugmentConfig {
            warp_factor: 4,
            num_freq_masks: 2,
            max_freq_mask_width: 3,
            num_time_masks: 10,
            max_time_mask_width: 4,
            max_time_mask_fraction: 0.15,
            time_scale_ratio: 1.0,
            freq_scale_ratio: 1.0,
            mask_value: 0.0,
        };
        if objective == Objective::CrCtc {
            augment.time_scale_ratio = 2.5;
        }
        Self {
            objective,
            task,
            model,
            augment,
            cr: CrConfig { alpha: 0.05, ..CrConfig::default() },
            sr: SrConfig::default(),
            train: TrainConfig { epochs: 80, ..TrainConfig::default() },
            eval_beam: crate::decode::DEFAULT_BEAM,
        }
    }

    /// Preset for the objective named in `pairs` (default `ctc`), then every
    /// pair applied in order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)> + Clone) -> Result<Self> {
        let objective = pairs
            .clone()
            .into_iter()
            .filter(|(k, _)| *k == "objective")
            .last()
            .map(|(_, v)| parse::<Objective>("objective", v))
            .transpose()?
            .unwrap_or(Objective::Ctc);
        let mut cfg = Self::preset(objective);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads flat `key = value` text. Blank lines and `#` comments are ignored.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected `key = value`, got {line:?}") })?;
            let k = k.trim();
            if !CONFIG_KEYS.iter().any(|(name, _)| *name == k) {
                return Err(Error::Parse { line: i + 1, msg: format!("unknown key {k:?}") });
            }
            out.push((k.to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
        Self::parse_pairs(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let (t, m, a, tr) = (&mut self.task, &mut self.model, &mut self.augment, &mut self.train);
        match key {
            "objective" => self.objective = parse(key, v)?,
            "task.vocab_size" => t.vocab_size = parse(key, v)?,
            "task.min_frames_per_token" => t.min_frames_per_token = parse(key, v)?,
            "task.max_frames_per_token" => t.max_frames_per_token = parse(key, v)?,
            "task.feature_dim" => t.feature_dim = parse(key, v)?,
            "task.noise_std" => t.noise_std = parse(key, v)?,
            "task.prototype_scale" => t.prototype_scale = parse(key, v)?,
            "task.units_per_token" => t.units_per_token = parse(key, v)?,
            "task.unit_inventory" => t.unit_inventory = parse(key, v)?,
            "task.coarticulation" => t.coarticulation = parse(key, v)?,
            "task.edge_silence_frames" => t.edge_silence_frames = parse(key, v)?,
            "task.min_label_len" => t.min_label_len = parse(key, v)?,
            "task.max_label_len" => t.max_label_len = parse(key, v)?,
            "task.successor_prob" => t.successor_prob = parse(key, v)?,
            "task.allow_repeats" => t.allow_repeats = parse(key, v)?,
            "task.train_samples" => t.train_samples = parse(key, v)?,
            "task.dev_samples" => t.dev_samples = parse(key, v)?,
            "task.test_samples" => t.test_samples = parse(key, v)?,
            "task.seed" => t.seed = parse(key, v)?,
            "model.layers" => m.layers = parse(key, v)?,
            "model.hidden_dim" => m.hidden_dim = parse(key, v)?,
            "model.context_radius" => m.context_radius = parse(key, v)?,
            "model.dropout_prob" => m.dropout_prob = parse(key, v)?,
            "model.layer_drop_prob" => m.layer_drop_prob = parse(key, v)?,
            "model.downsample_factor" => m.downsample_factor = parse(key, v)?,
            "augment.warp_factor" => a.warp_factor = parse(key, v)?,
            "augment.num_freq_masks" => a.num_freq_masks = parse(key, v)?,
            "augment.max_freq_mask_width" => a.max_freq_mask_width = parse(key, v)?,
            "augment.num_time_masks" => a.num_time_masks = parse(key, v)?,
            "augment.max_time_mask_width" => a.max_time_mask_width = parse(key, v)?,
            "augment.max_time_mask_fraction" => a.max_time_mask_fraction = parse(key, v)?,
            "augment.time_scale_ratio" => a.time_scale_ratio = parse(key, v)?,
            "augment.freq_scale_ratio" => a.freq_scale_ratio = parse(key, v)?,
            "augment.mask_value" => a.mask_value = parse(key, v)?,
            "cr.alpha" => self.cr.alpha = parse(key, v)?,
            "cr.target_mode" => self.cr.target_mode = parse(key, v)?,
            "cr.distance" => self.cr.distance = parse(key, v)?,
            "cr.frame_filter" => self.cr.frame_filter = parse(key, v)?,
            "cr.normalize_by_frames" => self.cr.normalize_by_frames = parse(key, v)?,
            "sr.kernel" => {
                let w: Vec<f64> = v.split(',').map(|x| parse(key, x)).collect::<Result<_>>()?;
                self.sr.kernel = w
                    .try_into()
                    .map_err(|_| Error::invalid("sr.kernel needs exactly three weights"))?;
            }
            "sr.beta" => self.sr.beta = parse(key, v)?,
            "train.epochs" => tr.epochs = parse(key, v)?,
            "train.batch_size" => tr.batch_size = parse(key, v)?,
            "train.fair_cost" => tr.fair_cost = parse(key, v)?,
            "train.optimizer" => {
                if v != "adam" && v != "sgd" {
                    return Err(Error::invalid(format!("unknown optimizer {v:?} (adam, sgd)")));
                }
                tr.optimizer = v.to_string();
            }
            "train.lr" => tr.adam.lr = parse(key, v)?,
            "train.beta1" => tr.adam.beta1 = parse(key, v)?,
            "train.beta2" => tr.adam.beta2 = parse(key, v)?,
            "train.eps" => tr.adam.eps = parse(key, v)?,
            "train.grad_clip" => tr.grad_clip = parse(key, v)?,
            "train.seed" => tr.seed = parse(key, v)?,
            "eval.beam" => self.eval_beam = parse(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (t, m, a, tr) = (&self.task, &self.model, &self.augment, &self.train);
        Some(match key {
            "objective" => self.objective.to_string(),
            "task.vocab_size" => t.vocab_size.to_string(),
            "task.min_frames_per_token" => t.min_frames_per_token.to_string(),
            "task.max_frames_per_token" => t.max_frames_per_token.to_string(),
            "task.feature_dim" => t.feature_dim.to_string(),
            "task.noise_std" => t.noise_std.to_string(),
            "task.prototype_scale" => t.prototype_scale.to_string(),
            "task.units_per_token" => t.units_per_token.to_string(),
            "task.unit_inventory" => t.unit_inventory.to_string(),
            "task.coarticulation" => t.coarticulation.to_string(),
            "task.edge_silence_frames" => t.edge_silence_frames.to_string(),
            "task.min_label_len" => t.min_label_len.to_string(),
            "task.max_label_len" => t.max_label_len.to_string(),
            "task.successor_prob" => t.successor_prob.to_string(),
            "task.allow_repeats" => t.allow_repeats.to_string(),
            "task.train_samples" => t.train_samples.to_string(),
            "task.dev_samples" => t.dev_samples.to_string(),
            "task.test_samples" => t.test_samples.to_string(),
            "task.seed" => t.seed.to_string(),
            "model.layers" => m.layers.to_string(),
            "model.hidden_dim" => m.hidden_dim.to_string(),
            "model.context_radius" => m.context_radius.to_string(),
            "model.dropout_prob" => m.dropout_prob.to_string(),
            "model.layer_drop_prob" => m.layer_drop_prob.to_string(),
            "model.downsample_factor" => m.downsample_factor.to_string(),
            "augment.warp_factor" => a.warp_factor.to_string(),
            "augment.num_freq_masks" => a.num_freq_masks.to_string(),
            "augment.max_freq_mask_width" => a.max_freq_mask_width.to_string(),
            "augment.num_time_masks" => a.num_time_masks.to_string(),
            "augment.max_time_mask_width" => a.max_time_mask_width.to_string(),
            "augment.max_time_mask_fraction" => a.max_time_mask_fraction.to_string(),
            "augment.time_scale_ratio" => a.time_scale_ratio.to_string(),
            "augment.freq_scale_ratio" => a.freq_scale_ratio.to_string(),
            "augment.mask_value" => a.mask_value.to_string(),
            "cr.alpha" => self.cr.alpha.to_string(),
            "cr.target_mode" => self.cr.target_mode.to_string(),
            "cr.distance" => self.cr.distance.to_string(),
            "cr.frame_filter" => self.cr.frame_filter.to_string(),
            "cr.normalize_by_frames" => self.cr.normalize_by_frames.to_string(),
            "sr.kernel" => self.sr.kernel.map(|w| w.to_string()).join(","),
            "sr.beta" => self.sr.beta.to_string(),
            "train.epochs" => tr.epochs.to_string(),
            "train.batch_size" => tr.batch_size.to_string(),
            "train.fair_cost" => tr.fair_cost.to_string(),
            "train.optimizer" => tr.optimizer.clone(),
            "train.lr" => tr.adam.lr.to_string(),
            "train.beta1" => tr.adam.beta1.to_string(),
            "train.beta2" => tr.adam.beta2.to_string(),
            "train.eps" => tr.adam.eps.to_string(),
            "train.grad_clip" => tr.grad_clip.to_string(),
            "train.seed" => tr.seed.to_string(),
            "eval.beam" => self.eval_beam.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value. Feeding this back through
    /// [`ExperimentConfig::from_pairs`] reproduces the config exactly.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        CONFIG_KEYS
            .iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every listed key is readable")))
            .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        Self::from_pairs(map.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// `key = value` lines in documented order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|(k, doc)| format!("# {doc}\n{k} = {}\n", self.get(k).expect("every listed key is readable")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.encoder_config().validate()?;
        self.augment.validate()?;
        self.cr.validate()?;
        self.sr.validate()?;
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::invalid("train.epochs and train.batch_size must be >= 1"));
        }
        if self.train.adam.lr.is_nan() || self.train.adam.lr < 0.0 || self.train.grad_clip.is_nan() || self.train.grad_clip < 0.0 {
            return Err(Error::invalid("train.lr and train.grad_clip must be >= 0"));
        }
        if self.eval_beam == 0 {
            return Err(Error::invalid("eval.beam must be >= 1"));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig { input_dim: self.task.feature_dim, output_dim: self.task.vocab_size + 1, ..self.model.clone() }
    }

    fn halved(&self) -> bool {
        self.objective == Objective::CrCtc && self.train.fair_cost
    }

    pub fn effective_epochs(&self) -> usize {
        if self.halved() {
            self.train.epochs.div_ceil(2)
        } else {
            self.train.epochs
        }
    }

    pub fn effective_batch_size(&self) -> usize {
        if self.halved() {
            self.train.batch_size.div_ceil(2)
        } else {
            self.train.batch_size
        }
    }
}

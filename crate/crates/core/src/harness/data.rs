use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::FeatureMatrix;
use crate::error::{Error, Result};
use crate::lattice::{LabelSequence, Vocabulary};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskConfig {
    pub vocab_size: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    /// Standard deviation of the token-specific prototype entries.
    pub prototype_scale: f64,
    /// Consecutive sub-units each token is rendered as. Its frames are split
    /// evenly across them in order.
    pub units_per_token: usize,
    /// Size of the shared sub-unit inventory. 0 gives every token its own
    /// units; a small shared inventory makes single frames ambiguous so that
    /// only the unit sequence identifies the token.
    pub unit_inventory: usize,
    /// Blend weight toward the neighbouring token at a token boundary, in
    /// [0, 1]. Falls off linearly to 0 at the token centre; 1 gives an even
    /// mix right at the boundary.
    pub coarticulation: f64,
    /// Silence (all-zero prototype) frames before the first and after the
    /// last token.
    pub edge_silence_frames: usize,
    pub min_label_len: usize,
    pub max_label_len: usize,
    /// Probability that a label is followed by its preferred successor (a
    /// fixed random cycle over the tokens) instead of a uniform draw. 0 gives
    /// unstructured sequences.
    pub successor_prob: f64,
    /// When false, adjacent labels always differ. Repeated tokens rendered
    /// back to back are otherwise indistinguishable from one long token.
    pub allow_repeats: bool,
    pub train_samples: usize,
    pub dev_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            min_frames_per_token: 4,
            max_frames_per_token: 8,
            feature_dim: 16,
            noise_std: 0.3,
            prototype_scale: 1.0,
            units_per_token: 1,
            unit_inventory: 0,
            coarticulation: 0.0,
            edge_silence_frames: 0,
            min_label_len: 3,
            max_label_len: 10,
            successor_prob: 0.0,
            allow_repeats: false,
            train_samples: 200,
            dev_samples: 50,
            test_samples: 50,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("min_frames_per_token", self.min_frames_per_token),
            ("feature_dim", self.feature_dim),
            ("min_label_len", self.min_label_len),
            ("train_samples", self.train_samples),
            ("dev_samples", self.dev_samples),
            ("test_samples", self.test_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("task.{name} must be >= 1")));
            }
        }
        if self.min_frames_per_token < 2 {
            // one frame per token cannot guarantee T >= 2U + 1
            return Err(Error::invalid("task.min_frames_per_token must be >= 2"));
        }
        if self.max_frames_per_token < self.min_frames_per_token || self.max_label_len < self.min_label_len {
            return Err(Error::invalid("task ranges must satisfy min <= max"));
        }
        if !self.allow_repeats && self.vocab_size < 2 && self.max_label_len > 1 {
            return Err(Error::invalid("task.vocab_size must be >= 2 when repeats are disallowed"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !(self.prototype_scale > 0.0 && self.prototype_scale.is_finite()) {
            return Err(Error::invalid("task.noise_std must be >= 0 and task.prototype_scale > 0"));
        }
        if !(0.0..=1.0).contains(&self.coarticulation) || !(0.0..=1.0).contains(&self.successor_prob) {
            return Err(Error::invalid("task.coarticulation and task.successor_prob must lie in [0, 1]"));
        }
        if self.units_per_token == 0 || self.units_per_token > self.min_frames_per_token {
            return Err(Error::invalid("task.units_per_token must lie in [1, task.min_frames_per_token]"));
        }
        if self.unit_inventory > 0 {
            let combos = (self.unit_inventory as f64).powi(self.units_per_token as i32);
            if combos < self.vocab_size as f64 {
                return Err(Error::invalid("task.unit_inventory too small to give every token a distinct unit sequence"));
            }
        }
        Ok(())
    }

    fn inventory_size(&self) -> usize {
        if self.unit_inventory == 0 {
            self.vocab_size * self.units_per_token
        } else {
            self.unit_inventory
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.vocab_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: FeatureMatrix,
    pub labels: LabelSequence,
    /// Frames spent on each label.
    pub durations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: SyntheticTaskConfig,
    pub vocab: Vocabulary,
    /// Sub-unit prototypes, one row each.
    pub prototypes: Matrix,
    /// Unit sequence of each token.
    pub token_units: Vec<Vec<usize>>,
    /// Preferred successor of each token.
    pub successors: Vec<usize>,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            _ => Err(Error::invalid(format!("unknown split {name:?} (train, dev, test)"))),
        }
    }
}

/// Each label is rendered as its unit prototypes over a random number of
/// frames, optionally blended toward its neighbours near token boundaries,
/// plus i.i.d. Gaussian noise on every entry.
pub fn generate_dataset(cfg: &SyntheticTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proto_dist = Normal::new(0.0, cfg.prototype_scale).map_err(|e| Error::invalid(e.to_string()))?;
    let units = cfg.inventory_size();
    let data = (0..units * cfg.feature_dim).map(|_| proto_dist.sample(&mut rng)).collect();
    let prototypes = Matrix::from_vec(units, cfg.feature_dim, data);
    let k = cfg.units_per_token;
    let token_units: Vec<Vec<usize>> = if cfg.unit_inventory == 0 {
        (0..cfg.vocab_size).map(|l| (l * k..(l + 1) * k).collect()).collect()
    } else {
        let mut seen = Vec::with_capacity(cfg.vocab_size);
        while seen.len() < cfg.vocab_size {
            let seq: Vec<usize> = (0..k).map(|_| rng.random_range(0..units)).collect();
            if !seen.contains(&seq) {
                seen.push(seq);
            }
        }
        seen
    };
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut cycle: Vec<usize> = (0..cfg.vocab_size).collect();
    cycle.shuffle(&mut rng);
    let mut successors = vec![0; cfg.vocab_size];
    for (i, &l) in cycle.iter().enumerate() {
        successors[l] = cycle[(i + 1) % cycle.len()];
    }

    let render = Renderer { cfg, prototypes: &prototypes, token_units: &token_units, successors: &successors, noise };
    let mut make = |n: usize| -> Vec<Sample> { (0..n).map(|_| render.sample(&mut rng)).collect() };
    let train = make(cfg.train_samples);
    let dev = make(cfg.dev_samples);
    let test = make(cfg.test_samples);
    Ok(Dataset { config: cfg.clone(), vocab: cfg.vocabulary(), prototypes, token_units, successors, train, dev, test })
}

struct Renderer<'a> {
    cfg: &'a SyntheticTaskConfig,
    prototypes: &'a Matrix,
    token_units: &'a [Vec<usize>],
    successors: &'a [usize],
    noise: Normal<f64>,
}

impl Renderer<'_> {
    fn sample<R: Rng>(&self, rng: &mut R) -> Sample {
        let len = rng.random_range(self.cfg.min_label_len..=self.cfg.max_label_len);
        let mut labels: Vec<usize> = Vec::with_capacity(len);
        while labels.len() < len {
            if let Some(&prev) = labels.last() {
                let follow = self.cfg.successor_prob > 0.0 && rng.random_bool(self.cfg.successor_prob);
                if follow && (self.cfg.allow_repeats || self.successors[prev] != prev) {
                    labels.push(self.successors[prev]);
                    continue;
                }
            }
            let l = rng.random_range(0..self.cfg.vocab_size);
            if self.cfg.allow_repeats || labels.last() != Some(&l) {
                labels.push(l);
            }
        }
        let (lo, hi) = (self.cfg.min_frames_per_token, self.cfg.max_frames_per_token);
        let durations: Vec<usize> = labels.iter().map(|_| rng.random_range(lo..=hi)).collect();
        let pad = self.cfg.edge_silence_frames;
        let frames: usize = durations.iter().sum::<usize>() + 2 * pad;
        let dim = self.cfg.feature_dim;
        let silence = vec![0.0; dim];
        let units = self.token_units;
        let unit = |u: usize| self.prototypes.row(u);
        let first = |l: Option<&usize>| l.map_or(&silence[..], |&l| unit(units[l][0]));
        let last = |l: Option<&usize>| l.map_or(&silence[..], |&l| unit(*units[l].last().expect("units_per_token >= 1")));
        let mut features = Matrix::zeros(frames, dim);
        let mut t = pad;
        for (u, (&l, &d)) in labels.iter().zip(&durations).enumerate() {
            let prev = last(u.checked_sub(1).and_then(|p| labels.get(p)));
            let next = first(labels.get(u + 1));
            let k = units[l].len();
            for i in 0..d {
                let own = unit(units[l][i * k / d]);
                let r = (i as f64 + 0.5) / d as f64;
                let (neighbour, edge_dist) = if r < 0.5 { (prev, r) } else { (next, 1.0 - r) };
                let w = 0.5 * self.cfg.coarticulation * (1.0 - 2.0 * edge_dist);
                for (j, v) in features.row_mut(t).iter_mut().enumerate() {
                    *v = (1.0 - w) * own[j] + w * neighbour[j];
                }
                t += 1;
            }
        }
        if self.cfg.noise_std > 0.0 {
            for v in features.as_mut_slice() {
                *v += self.noise.sample(rng);
            }
        }
        Sample { features, labels: LabelSequence(labels), durations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticTaskConfig {
        SyntheticTaskConfig { train_samples: 30, dev_samples: 5, test_samples: 5, seed, ..Default::default() }
    }

    #[test]
    fn noiseless_samples_equal_prototypes() {
        for (units_per_token, unit_inventory) in [(1, 0), (3, 4)] {
            let cfg = SyntheticTaskConfig { noise_std: 0.0, units_per_token, unit_inventory, ..small(3) };
            let ds = generate_dataset(&cfg).unwrap();
            for s in &ds.train {
                let mut t = 0;
                for (&l, &d) in s.labels.as_slice().iter().zip(&s.durations) {
                    for i in 0..d {
                        let u = ds.token_units[l][i * units_per_token / d];
                        assert_eq!(s.features.row(t), ds.prototypes.row(u));
                        t += 1;
                    }
                }
                assert_eq!(t, s.features.rows());
            }
        }
    }

    #[test]
    fn shared_inventory_gives_distinct_unit_sequences() {
        let ds = generate_dataset(&SyntheticTaskConfig { units_per_token: 3, unit_inventory: 3, ..small(2) }).unwrap();
        assert_eq!(ds.prototypes.rows(), 3);
        for (i, a) in ds.token_units.iter().enumerate() {
            assert_eq!(a.len(), 3);
            assert!(ds.token_units[..i].iter().all(|b| b != a));
        }
        assert!(generate_dataset(&SyntheticTaskConfig { units_per_token: 1, unit_inventory: 3, ..small(2) }).is_err());
        assert!(generate_dataset(&SyntheticTaskConfig { units_per_token: 5, ..small(2) }).is_err());
    }

    #[test]
    fn coarticulation_blends_toward_neighbours() {
        let cfg = SyntheticTaskConfig { noise_std: 0.0, coarticulation: 1.0, edge_silence_frames: 2, ..small(4) };
        let ds = generate_dataset(&cfg).unwrap();
        let s = &ds.train[0];
        let dim = cfg.feature_dim;
        assert!(s.features.row(0).iter().chain(s.features.row(1)).all(|&v| v == 0.0));
        assert_eq!(s.features.rows(), s.durations.iter().sum::<usize>() + 4);
        // first frame of the second token: weight 0.5 * (1 - 1/d) toward the first
        let (a, b, d) = (ds.token_units[s.labels.0[0]][0], ds.token_units[s.labels.0[1]][0], s.durations[1]);
        let t = 2 + s.durations[0];
        let w = 0.5 * (1.0 - 1.0 / d as f64);
        for k in 0..dim {
            let expect = (1.0 - w) * ds.prototypes.get(b, k) + w * ds.prototypes.get(a, k);
            assert!((s.features.get(t, k) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_generation_is_bit_identical() {
        assert_eq!(generate_dataset(&small(9)).unwrap(), generate_dataset(&small(9)).unwrap());
        assert_ne!(generate_dataset(&small(9)).unwrap().train, generate_dataset(&small(10)).unwrap().train);
    }

    #[test]
    fn samples_are_ctc_feasible() {
        for allow_repeats in [false, true] {
            let ds = generate_dataset(&SyntheticTaskConfig { allow_repeats, ..small(1) }).unwrap();
            for s in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
                let (t, u) = (s.features.rows(), s.labels.len());
                assert!(t > 2 * u);
                assert!((3..=10).contains(&u));
                assert!(s.durations.iter().all(|d| (4..=8).contains(d)));
                if !allow_repeats {
                    assert_eq!(s.labels.adjacent_repeats(), 0);
                }
            }
        }
    }

    #[test]
    fn successor_structure_is_followed() {
        let ds = generate_dataset(&SyntheticTaskConfig { successor_prob: 1.0, ..small(5) }).unwrap();
        let mut sorted = ds.successors.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert!(ds.successors.iter().enumerate().all(|(i, &s)| s != i));
        for s in &ds.train {
            assert!(s.labels.0.windows(2).all(|w| ds.successors[w[0]] == w[1]));
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(generate_dataset(&SyntheticTaskConfig { min_frames_per_token: 1, ..small(0) }).is_err());
        assert!(generate_dataset(&SyntheticTaskConfig { max_label_len: 2, ..small(0) }).is_err());
        assert!(generate_dataset(&SyntheticTaskConfig { train_samples: 0, ..small(0) }).is_err());
        assert!(generate_dataset(&SyntheticTaskConfig { noise_std: -1.0, ..small(0) }).is_err());
    }
}

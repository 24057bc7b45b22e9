//! Random forest of Gini-split binary trees with leaf probability averaging.
//!
//! Each tree sees a bootstrap resample (stored as per-sample multiplicities)
//! and considers a random feature subset at every node. Feature columns are
//! sorted once; nodes own contiguous ranges of the per-feature orderings,
//! which are stably partitioned on each split, so no node re-sorts.
//!
//! Split thresholds are always an observed training value and a sample goes
//! left iff `x <= threshold`. Any strictly increasing transform of a feature
//! column therefore yields the same partitions and the same predictions.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::class_weights;
use super::{check_samples, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: MaxFeatures,
    pub seed: u64,
    pub balance_classes: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: MaxFeatures::Sqrt,
            seed: 0,
            balance_classes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
    },
}

/// Binary tree stored in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(positive_fraction: f64) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { positive_fraction }],
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { positive_fraction } => return positive_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if features[feature] <= threshold { left } else { right },
            }
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::invalid("tree without nodes"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { positive_fraction } if !(0.0..=1.0).contains(&positive_fraction) => {
                    return Err(Error::invalid(format!("leaf {i}: fraction {positive_fraction}")));
                }
                Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } if feature >= n_features || left <= i || right <= i || left >= n || right >= n => {
                    return Err(Error::invalid(format!("node {i}: bad feature or child index")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl ForestModel {
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() || self.trees.len() != self.n_trees {
            return Err(Error::invalid("forest tree count mismatch"));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.n_features))
    }
}

/// Mean leaf fraction over all trees.
pub fn predict_forest(model: &ForestModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.n_features {
        return Err(Error::invalid(format!(
            "forest expects {} features, got {}",
            model.n_features,
            features.len()
        )));
    }
    let sum: f64 = model.trees.iter().map(|t| t.predict(features)).sum();
    Ok((sum / model.trees.len() as f64).clamp(0.0, 1.0))
}

pub fn train_forest(samples: &[LabeledSample], config: &ForestConfig) -> Result<ForestModel> {
    let n_features = check_samples(samples)?;
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(Error::invalid("n_trees and min_leaf must be positive"));
    }
    let data = TrainingData::new(samples, config.balance_classes);
    let mtry = config.features_per_split.resolve(n_features);

    let trees: Vec<DecisionTree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let counts = bootstrap_counts(samples.len(), &mut rng);
            TreeBuilder::new(&data, &counts, config, mtry).build(&mut rng)
        })
        .collect();

    Ok(ForestModel {
        trees,
        n_features,
        n_trees: config.n_trees,
        seed: config.seed,
    })
}

/// Trains a forest and reports out-of-bag accuracy (`None` if no sample was
/// ever left out).
pub fn train_forest_with_oob(
    samples: &[LabeledSample],
    config: &ForestConfig,
) -> Result<(ForestModel, Option<f64>)> {
    let model = train_forest(samples, config)?;
    let mut oob_sum = vec![0.0; samples.len()];
    let mut oob_n = vec![0u32; samples.len()];
    for (t, tree) in model.trees.iter().enumerate() {
        // same stream as training, so the same bootstrap
        let counts = bootstrap_counts(samples.len(), &mut tree_rng(config.seed, t));
        for (i, s) in samples.iter().enumerate() {
            if counts[i] == 0 {
                oob_sum[i] += tree.predict(&s.features);
                oob_n[i] += 1;
            }
        }
    }
    let (mut hit, mut seen) = (0usize, 0usize);
    for (i, s) in samples.iter().enumerate() {
        if oob_n[i] > 0 {
            seen += 1;
            hit += usize::from((oob_sum[i] / f64::from(oob_n[i]) > 0.5) == s.label);
        }
    }
    let oob = (seen > 0).then(|| hit as f64 / seen as f64);
    Ok((model, oob))
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn bootstrap_counts(n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1;
    }
    counts
}

struct TrainingData {
    /// Column-major feature values.
    columns: Vec<Vec<f64>>,
    labels: Vec<bool>,
    /// Per-class weight applied on top of bootstrap multiplicity.
    class_weight: (f64, f64),
    /// Sample indices sorted by each feature.
    order: Vec<Vec<u32>>,
}

impl TrainingData {
    fn new(samples: &[LabeledSample], balance: bool) -> Self {
        let d = samples[0].features.len();
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|j| samples.iter().map(|s| s.features[j]).collect())
            .collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        let class_weight = if balance { class_weights(&labels) } else { (1.0, 1.0) };
        TrainingData {
            columns,
            labels,
            class_weight,
            order,
        }
    }
}

struct TreeBuilder<'a> {
    data: &'a TrainingData,
    config: &'a ForestConfig,
    mtry: usize,
    /// Per-sample (negative, positive) weight in this tree.
    weight: Vec<(f64, f64)>,
    /// Multiplicity of each sample in this tree's bootstrap.
    count: Vec<u32>,
    /// Per-feature orderings restricted to in-bag samples.
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Number of distinct in-bag samples going left.
    n_left: usize,
}

impl<'a> TreeBuilder<'a> {
    fn new(data: &'a TrainingData, counts: &[u32], config: &'a ForestConfig, mtry: usize) -> Self {
        let weight = counts
            .iter()
            .zip(&data.labels)
            .map(|(&c, &l)| {
                let c = f64::from(c);
                if l {
                    (0.0, c * data.class_weight.1)
                } else {
                    (c * data.class_weight.0, 0.0)
                }
            })
            .collect();
        let order = data
            .order
            .iter()
            .map(|o| o.iter().copied().filter(|&i| counts[i as usize] > 0).collect())
            .collect();
        TreeBuilder {
            data,
            config,
            mtry,
            weight,
            count: counts.to_vec(),
            order,
            goes_left: vec![false; counts.len()],
            scratch: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn build(mut self, rng: &mut ChaCha8Rng) -> DecisionTree {
        // (lo, hi, depth, parent slot to patch); left children are popped
        // first so nodes come out in preorder
        let mut stack: Vec<(usize, usize, usize, Option<(usize, bool)>)> =
            vec![(0, self.order[0].len(), 0, None)];
        while let Some((lo, hi, depth, parent)) = stack.pop() {
            let at = self.nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut self.nodes[p] {
                    *(if is_left { left } else { right }) = at;
                }
            }
            match self.node(lo, hi, depth, rng) {
                Ok(split) => {
                    let mid = lo + split.n_left;
                    self.nodes.push(Node::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left: 0,
                        right: 0,
                    });
                    stack.push((mid, hi, depth + 1, Some((at, false))));
                    stack.push((lo, mid, depth + 1, Some((at, true))));
                }
                Err(positive_fraction) => self.nodes.push(Node::Leaf { positive_fraction }),
            }
        }
        DecisionTree { nodes: self.nodes }
    }

    fn totals(&self, lo: usize, hi: usize) -> (f64, f64, u32) {
        self.order[0][lo..hi].iter().fold((0.0, 0.0, 0), |acc, &i| {
            let (wn, wp) = self.weight[i as usize];
            (acc.0 + wn, acc.1 + wp, acc.2 + self.count[i as usize])
        })
    }

    /// Splits the node's range in place, or returns its leaf value.
    fn node(&mut self, lo: usize, hi: usize, depth: usize, rng: &mut ChaCha8Rng) -> Result<Split, f64> {
        let (neg, pos, count) = self.totals(lo, hi);
        let fraction = if pos + neg > 0.0 { pos / (pos + neg) } else { 0.0 };

        let depth_ok = self.config.max_depth.is_none_or(|m| depth < m);
        let min_leaf = self.config.min_leaf as u32;
        if !depth_ok || pos == 0.0 || neg == 0.0 || count < 2 * min_leaf {
            return Err(fraction);
        }
        let Some(split) = self.best_split(lo, hi, (neg, pos, count), rng) else {
            return Err(fraction);
        };

        let feature = split.feature;
        for &i in &self.order[feature][lo..hi] {
            self.goes_left[i as usize] = self.data.columns[feature][i as usize] <= split.threshold;
        }
        for f in 0..self.order.len() {
            self.partition(f, lo, hi);
        }
        Ok(split)
    }

    /// Stable partition of `order[f][lo..hi]` by `goes_left`.
    fn partition(&mut self, f: usize, lo: usize, hi: usize) {
        self.scratch.clear();
        let seg = &mut self.order[f][lo..hi];
        let mut w = 0;
        for k in 0..seg.len() {
            let i = seg[k];
            if self.goes_left[i as usize] {
                seg[w] = i;
                w += 1;
            } else {
                self.scratch.push(i);
            }
        }
        seg[w..].copy_from_slice(&self.scratch);
    }

    fn best_split(
        &self,
        lo: usize,
        hi: usize,
        (neg, pos, count): (f64, f64, u32),
        rng: &mut ChaCha8Rng,
    ) -> Option<Split> {
        let n_features = self.order.len();
        let candidates = sample_indices(rng, n_features, self.mtry);
        let total = neg + pos;
        // maximize sum over children of (neg² + pos²) / w, the weighted
        // Gini impurity reduction up to a constant
        let parent_score = (neg * neg + pos * pos) / total;
        let mut best: Option<(f64, Split)> = None;
        let min_leaf = self.config.min_leaf as u32;

        for feature in candidates.iter() {
            let col = &self.data.columns[feature];
            let seg = &self.order[feature][lo..hi];
            let (mut ln, mut lp, mut lc) = (0.0, 0.0, 0u32);
            for k in 0..seg.len() - 1 {
                let i = seg[k] as usize;
                let (wn, wp) = self.weight[i];
                ln += wn;
                lp += wp;
                lc += self.count[i];
                let here = col[i];
                let next = col[seg[k + 1] as usize];
                if !(here < next) {
                    continue;
                }
                if lc < min_leaf || count - lc < min_leaf {
                    continue;
                }
                let (rn, rp) = (neg - ln, pos - lp);
                let lw = ln + lp;
                let rw = rn + rp;
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let score = (ln * ln + lp * lp) / lw + (rn * rn + rp * rp) / rw;
                if score > parent_score + 1e-12 * total && best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((
                        score,
                        Split {
                            feature,
                            threshold: here,
                            n_left: k + 1,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                LabeledSample::new(vec![x, rng.gen(), rng.gen()], x > 0.0)
            })
            .collect()
    }

    fn small_cfg() -> ForestConfig {
        ForestConfig {
            n_trees: 25,
            features_per_split: MaxFeatures::All,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn separable_data_has_high_oob_accuracy() {
        let samples = separable(600, 1);
        let (_, oob) = train_forest_with_oob(&samples, &small_cfg()).unwrap();
        assert!(oob.unwrap() >= 0.99, "oob {oob:?}");
    }

    #[test]
    fn sqrt_subsampling_still_learns() {
        let samples = separable(600, 2);
        let cfg = ForestConfig { n_trees: 40, seed: 9, ..Default::default() };
        let model = train_forest(&samples, &cfg).unwrap();
        let held_out = separable(500, 77);
        let correct = held_out
            .iter()
            .filter(|s| (predict_forest(&model, &s.features).unwrap() > 0.5) == s.label)
            .count();
        assert!(correct as f64 / 500.0 >= 0.95);
    }

    #[test]
    fn held_out_positives_score_high() {
        let samples = separable(800, 4);
        let model = train_forest(&samples, &small_cfg()).unwrap();
        let positives: Vec<_> = separable(1000, 99).into_iter().filter(|s| s.label).collect();
        let hits = positives
            .iter()
            .filter(|s| predict_forest(&model, &s.features).unwrap() > 0.5)
            .count();
        assert!(hits as f64 >= 0.99 * positives.len() as f64);
    }

    #[test]
    fn constant_features_predict_the_prior() {
        let samples: Vec<_> = (0..2000)
            .map(|i| LabeledSample::new(vec![1.0, 2.0], i % 4 == 0))
            .collect();
        let model = train_forest(&samples, &small_cfg()).unwrap();
        assert!(model.trees.iter().all(|t| t.nodes.len() == 1));
        let p = predict_forest(&model, &[1.0, 2.0]).unwrap();
        assert!((p - 0.25).abs() <= 0.02, "{p}");
    }

    #[test]
    fn hand_built_forests() {
        let single = ForestModel {
            trees: vec![DecisionTree::leaf(0.7)],
            n_features: 1,
            n_trees: 1,
            seed: 0,
        };
        assert!((predict_forest(&single, &[5.0]).unwrap() - 0.7).abs() < 1e-15);
        let pair = ForestModel {
            trees: vec![DecisionTree::leaf(0.2), DecisionTree::leaf(0.6)],
            n_features: 1,
            n_trees: 2,
            seed: 0,
        };
        assert!((predict_forest(&pair, &[5.0]).unwrap() - 0.4).abs() < 1e-15);
        assert!(predict_forest(&pair, &[5.0, 1.0]).is_err());
    }

    #[test]
    fn same_seed_same_forest() {
        let samples = separable(300, 5);
        let a = train_forest(&samples, &small_cfg()).unwrap();
        let b = train_forest(&samples, &small_cfg()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = train_forest(&samples, &ForestConfig { seed: 4, ..small_cfg() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn increasing_transforms_do_not_change_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<_> = (0..400)
            .map(|_| {
                let a: f64 = rng.gen_range(0.1..3.0);
                let b: f64 = rng.gen_range(0.1..3.0);
                LabeledSample::new(vec![a, b], a * b + rng.gen_range(-0.5..0.5) > 2.0)
            })
            .collect();
        let transform = |v: &[f64]| vec![v[0].powi(3), v[1].ln()];
        let moved: Vec<_> = samples
            .iter()
            .map(|s| LabeledSample::new(transform(&s.features), s.label))
            .collect();
        let cfg = ForestConfig { n_trees: 15, seed: 8, ..Default::default() };
        let a = train_forest(&samples, &cfg).unwrap();
        let b = train_forest(&moved, &cfg).unwrap();
        for _ in 0..500 {
            let q = vec![rng.gen_range(0.0..3.5), rng.gen_range(0.05..3.5)];
            let pa = predict_forest(&a, &q).unwrap();
            let pb = predict_forest(&b, &transform(&q)).unwrap();
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn depth_and_leaf_limits() {
        let samples = separable(300, 6);
        let cfg = ForestConfig { max_depth: Some(2), ..small_cfg() };
        let m = train_forest(&samples, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
        m.validate().unwrap();
    }

    #[test]
    fn single_class_is_rejected() {
        let samples: Vec<_> = (0..10).map(|i| LabeledSample::new(vec![f64::from(i)], true)).collect();
        assert!(matches!(train_forest(&samples, &small_cfg()), Err(Error::Training(_))));
    }

    #[test]
    fn class_balancing_shifts_probabilities_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<_> = (0..1000)
            .map(|_| LabeledSample::new(vec![rng.gen::<f64>()], rng.gen_bool(0.1)))
            .collect();
        let plain = train_forest(&samples, &ForestConfig { max_depth: Some(1), ..small_cfg() }).unwrap();
        let balanced = train_forest(
            &samples,
            &ForestConfig { max_depth: Some(1), balance_classes: true, ..small_cfg() },
        )
        .unwrap();
        let q = [0.5];
        assert!(predict_forest(&balanced, &q).unwrap() > predict_forest(&plain, &q).unwrap());
    }
}

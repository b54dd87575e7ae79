//! Random forest over sparse token counts.
//!
//! Each tree is grown on a bootstrap sample drawn from its own stream of the
//! forest seed. Splits are `count(feature) <= threshold` and minimize weighted
//! Gini impurity over a random subset of features. Only features that occur in
//! a node can split it; features absent from a node are skipped without
//! counting toward the subset size, so small nodes still find a split when
//! one exists.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_shapes, Classification, ClassifyError, CountVector};
use crate::hierarchy::ClassCode;

pub const DEFAULT_TREES: usize = 600;
/// Vocabulary cap applied when training forests.
pub const DEFAULT_FEATURE_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    pub seed: u64,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `floor(sqrt(n_features))` when unset.
    pub max_features: Option<usize>,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: DEFAULT_TREES,
            seed: 0,
            max_depth: None,
            min_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: u32,
        left: u32,
        right: u32,
    },
    /// `(class index, bootstrap weight)` pairs, never empty.
    Leaf(Vec<(u32, u32)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf(&self, x: &CountVector) -> &[(u32, u32)] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(votes) => return votes,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x.get(*feature) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Majority class of the reached leaf; lower class index wins ties.
    pub fn vote(&self, x: &CountVector) -> u32 {
        let mut best = (0u32, 0u32);
        for &(class, weight) in self.leaf(x) {
            if weight > best.1 || (weight == best.1 && class < best.0) {
                best = (class, weight);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfModel {
    classes: Vec<ClassCode>,
    trees: Vec<DecisionTree>,
    n_features: usize,
    config: RfConfig,
}

impl RfModel {
    pub fn classes(&self) -> &[ClassCode] {
        &self.classes
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn config(&self) -> &RfConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of trees voting for each class.
    pub fn votes(&self, x: &CountVector) -> Vec<u32> {
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[tree.vote(x) as usize] += 1;
        }
        votes
    }

    pub fn predict(&self, x: &CountVector) -> Result<Classification, ClassifyError> {
        if self.trees.is_empty() {
            return Err(ClassifyError::ModelUnusable("forest has no trees".into()));
        }
        let votes = self.votes(x);
        let mut best = 0;
        for (i, v) in votes.iter().enumerate().skip(1) {
            if *v > votes[best] {
                best = i;
            }
        }
        Ok(Classification {
            code: self.classes[best],
            confidence: votes[best] as f64 / self.trees.len() as f64,
        })
    }

    /// Assembles a forest from prebuilt trees (used for vote-counting checks).
    pub fn from_trees(classes: Vec<ClassCode>, trees: Vec<DecisionTree>, n_features: usize) -> Self {
        RfModel {
            config: RfConfig {
                n_trees: trees.len(),
                ..RfConfig::default()
            },
            classes,
            trees,
            n_features,
        }
    }
}

impl DecisionTree {
    /// A single-leaf tree that always votes for `class`.
    pub fn constant(class: u32) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf(vec![(class, 1)])],
        }
    }
}

pub fn train_rf(
    x: &[CountVector],
    y: &[ClassCode],
    n_features: usize,
    cfg: &RfConfig,
) -> Result<RfModel, ClassifyError> {
    check_shapes(x, y)?;
    if cfg.min_leaf == 0 {
        return Err(ClassifyError::InvalidParameter("min_leaf must be at least 1".into()));
    }
    if let Some((f, _)) = x
        .iter()
        .flat_map(|v| v.entries().iter())
        .find(|(f, _)| *f as usize >= n_features)
    {
        return Err(ClassifyError::InvalidParameter(format!(
            "feature index {f} out of range for {n_features} features"
        )));
    }
    let mut classes: Vec<ClassCode> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let labels: Vec<u32> = y
        .iter()
        .map(|c| classes.binary_search(c).expect("class collected above") as u32)
        .collect();
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
        .max(1);

    let data = TrainingData {
        x,
        y: &labels,
        n_classes: classes.len(),
        mtry,
        max_depth: cfg.max_depth.unwrap_or(usize::MAX),
        min_leaf: cfg.min_leaf as u64,
    };
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map_init(
            || Scratch::new(n_features, classes.len()),
            |scratch, t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                data.grow(&mut rng, scratch)
            },
        )
        .collect();
    Ok(RfModel {
        classes,
        trees,
        n_features,
        config: cfg.clone(),
    })
}

pub fn predict_rf(m: &RfModel, x: &CountVector) -> Result<Classification, ClassifyError> {
    m.predict(x)
}

struct TrainingData<'a> {
    x: &'a [CountVector],
    y: &'a [u32],
    n_classes: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: u64,
}

const NO_SLOT: u32 = u32::MAX;

struct Scratch {
    seen_stamp: Vec<u32>,
    stamp: u32,
    slot: Vec<u32>,
    buckets: Vec<Vec<(u32, u32, u32)>>,
    left: Vec<f64>,
    right: Vec<f64>,
    present: Vec<u32>,
}

impl Scratch {
    fn new(n_features: usize, n_classes: usize) -> Self {
        Scratch {
            seen_stamp: vec![0; n_features],
            stamp: 0,
            slot: vec![NO_SLOT; n_features],
            buckets: Vec::new(),
            left: vec![0.0; n_classes],
            right: vec![0.0; n_classes],
            present: Vec::new(),
        }
    }
}

struct SplitCandidate {
    feature: u32,
    threshold: u32,
    score: f64,
}

impl TrainingData<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng, scratch: &mut Scratch) -> DecisionTree {
        let n = self.x.len();
        let mut weight = vec![0u32; n];
        for _ in 0..n {
            weight[rng.random_range(0..n)] += 1;
        }
        let mut samples: Vec<u32> = (0..n as u32).filter(|&i| weight[i as usize] > 0).collect();
        let mut nodes = vec![Node::Leaf(Vec::new())];
        let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
        let mut hist = vec![0u64; self.n_classes];
        while let Some((node, start, end, depth)) = stack.pop() {
            let range = &mut samples[start..end];
            hist.iter_mut().for_each(|h| *h = 0);
            for &s in range.iter() {
                hist[self.y[s as usize] as usize] += weight[s as usize] as u64;
            }
            let total: u64 = hist.iter().sum();
            let distinct = hist.iter().filter(|h| **h > 0).count();
            let split = if distinct <= 1 || depth >= self.max_depth || total < 2 * self.min_leaf {
                None
            } else {
                self.best_split(range, &weight, &hist, total, rng, scratch)
            };
            match split {
                None => {
                    nodes[node] = Node::Leaf(
                        hist.iter()
                            .enumerate()
                            .filter(|(_, h)| **h > 0)
                            .map(|(c, h)| (c as u32, *h as u32))
                            .collect(),
                    );
                }
                Some(best) => {
                    let (mut i, mut j) = (0, range.len());
                    while i < j {
                        if self.x[range[i] as usize].get(best.feature) <= best.threshold {
                            i += 1;
                        } else {
                            j -= 1;
                            range.swap(i, j);
                        }
                    }
                    let left = nodes.len();
                    nodes.push(Node::Leaf(Vec::new()));
                    nodes.push(Node::Leaf(Vec::new()));
                    nodes[node] = Node::Split {
                        feature: best.feature,
                        threshold: best.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((left + 1, start + i, end, depth + 1));
                    stack.push((left, start, start + i, depth + 1));
                }
            }
        }
        DecisionTree { nodes }
    }

    fn best_split(
        &self,
        samples: &[u32],
        weight: &[u32],
        hist: &[u64],
        total: u64,
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Option<SplitCandidate> {
        scratch.stamp = scratch.stamp.wrapping_add(1);
        if scratch.stamp == 0 {
            scratch.seen_stamp.iter_mut().for_each(|s| *s = 0);
            scratch.stamp = 1;
        }
        scratch.present.clear();
        for &s in samples {
            for &(f, _) in self.x[s as usize].entries() {
                if scratch.seen_stamp[f as usize] != scratch.stamp {
                    scratch.seen_stamp[f as usize] = scratch.stamp;
                    scratch.present.push(f);
                }
            }
        }
        scratch.present.sort_unstable();

        let mut best: Option<SplitCandidate> = None;
        let mut informative = 0;
        let mut drawn = 0;
        let len = scratch.present.len();
        while informative < self.mtry && drawn < len {
            let batch = (self.mtry - informative).min(len - drawn);
            for k in 0..batch {
                let j = rng.random_range(drawn + k..len);
                scratch.present.swap(drawn + k, j);
                let f = scratch.present[drawn + k];
                scratch.slot[f as usize] = k as u32;
            }
            if scratch.buckets.len() < batch {
                scratch.buckets.resize_with(batch, Vec::new);
            }
            scratch.buckets[..batch].iter_mut().for_each(Vec::clear);
            for &s in samples {
                let (cls, w) = (self.y[s as usize], weight[s as usize]);
                for &(f, v) in self.x[s as usize].entries() {
                    let k = scratch.slot[f as usize];
                    if k != NO_SLOT {
                        scratch.buckets[k as usize].push((v, cls, w));
                    }
                }
            }
            for k in 0..batch {
                let f = scratch.present[drawn + k];
                scratch.slot[f as usize] = NO_SLOT;
                let mut bucket = std::mem::take(&mut scratch.buckets[k]);
                let outcome = self.evaluate(&mut bucket, hist, total, scratch);
                scratch.buckets[k] = bucket;
                if let Some(found) = outcome {
                    informative += 1;
                    if let Some((threshold, score)) = found {
                        if best.as_ref().is_none_or(|b| score > b.score) {
                            best = Some(SplitCandidate {
                                feature: f,
                                threshold,
                                score,
                            });
                        }
                    }
                }
            }
            drawn += batch;
        }
        best
    }

    /// `None` when the feature is constant in the node; otherwise the best
    /// `(threshold, score)` honoring `min_leaf`, if any. The score is
    /// `sum L_c^2 / W_L + sum R_c^2 / W_R`, which grows as weighted Gini
    /// impurity falls.
    fn evaluate(
        &self,
        bucket: &mut [(u32, u32, u32)],
        hist: &[u64],
        total: u64,
        scratch: &mut Scratch,
    ) -> Option<Option<(u32, f64)>> {
        let nonzero_w: u64 = bucket.iter().map(|e| e.2 as u64).sum();
        let zero_w = total - nonzero_w;
        bucket.sort_unstable_by_key(|e| e.0);
        let groups = bucket.windows(2).filter(|w| w[0].0 != w[1].0).count()
            + usize::from(!bucket.is_empty())
            + usize::from(zero_w > 0);
        if groups < 2 {
            return None;
        }

        for (c, h) in hist.iter().enumerate() {
            scratch.left[c] = 0.0;
            scratch.right[c] = *h as f64;
        }
        for &(_, c, w) in bucket.iter() {
            scratch.left[c as usize] += w as f64;
        }
        // left starts as the zero group: everything not in the bucket
        for c in 0..hist.len() {
            let zero_c = scratch.right[c] - scratch.left[c];
            scratch.left[c] = zero_c;
            scratch.right[c] -= zero_c;
        }
        let mut w_left = zero_w as f64;
        let mut w_right = nonzero_w as f64;
        let mut sq_left: f64 = scratch.left.iter().map(|v| v * v).sum();
        let mut sq_right: f64 = scratch.right.iter().map(|v| v * v).sum();
        let min_leaf = self.min_leaf as f64;

        let mut best: Option<(u32, f64)> = None;
        let mut consider = |threshold: u32, wl: f64, wr: f64, sl: f64, sr: f64| {
            if wl >= min_leaf && wr >= min_leaf && wl > 0.0 && wr > 0.0 {
                let score = sl / wl + sr / wr;
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((threshold, score));
                }
            }
        };
        if zero_w > 0 {
            consider(0, w_left, w_right, sq_left, sq_right);
        }
        let mut i = 0;
        while i < bucket.len() {
            let value = bucket[i].0;
            while i < bucket.len() && bucket[i].0 == value {
                let (_, c, w) = bucket[i];
                let (c, w) = (c as usize, w as f64);
                let l = scratch.left[c];
                let r = scratch.right[c];
                sq_left += (l + w) * (l + w) - l * l;
                sq_right += (r - w) * (r - w) - r * r;
                scratch.left[c] = l + w;
                scratch.right[c] = r - w;
                w_left += w;
                w_right -= w;
                i += 1;
            }
            if i < bucket.len() {
                consider(value, w_left, w_right, sq_left, sq_right);
            }
        }
        Some(best)
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::argmax;
use super::{Dataset2D, MlError};
use crate::dataset::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default = "defaults::n_trees")]
    pub n_trees: usize,
    #[serde(default = "defaults::max_depth")]
    pub max_depth: usize,
    #[serde(default = "defaults::min_samples_leaf")]
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    #[serde(default)]
    pub features_per_split: Option<usize>,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn n_trees() -> usize {
        100
    }
    pub fn max_depth() -> usize {
        12
    }
    pub fn min_samples_leaf() -> usize {
        2
    }
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: defaults::n_trees(),
            max_depth: defaults::max_depth(),
            min_samples_leaf: defaults::min_samples_leaf(),
            features_per_split: None,
            resampling: Resampling::default(),
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), MlError> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(MlError::InvalidConfig(
                "n_trees, max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(MlError::InvalidConfig("features_per_split must be positive".into()));
        }
        Ok(())
    }

    pub fn features_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1))
    }
}

/// How each tree's training rows are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Every tree sees all rows once.
    None,
    /// `n` draws with replacement.
    #[default]
    Bootstrap,
    /// Bootstrap within each class, replaying the same draw sequence for
    /// every class. With equal class sizes, relabeling the classes yields the
    /// mirrored forest. Regression falls back to [`Resampling::Bootstrap`].
    Balanced,
}

/// `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    /// Class frequencies (classification) or a single mean (regression).
    Leaf(Vec<f64>),
    Branch { split: Split, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct Grower<'a> {
    data: &'a Dataset2D,
    classes: Option<(&'a [usize], usize)>,
    config: &'a ForestConfig,
    n_features: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        match self.classes {
            Some((labels, k)) => {
                let mut freq = vec![0.0; k];
                for &i in idx {
                    freq[labels[i]] += 1.0;
                }
                let n = idx.len() as f64;
                freq.iter_mut().for_each(|f| *f /= n);
                Node::Leaf(freq)
            }
            None => {
                let y = self.data.labels();
                Node::Leaf(vec![idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64])
            }
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        match self.classes {
            Some((labels, _)) => idx.iter().all(|&i| labels[i] == labels[idx[0]]),
            None => {
                let y = self.data.labels();
                idx.iter().all(|&i| y[i] == y[idx[0]])
            }
        }
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let min_leaf = self.config.min_samples_leaf;
        let split = if depth >= self.config.max_depth || idx.len() < 2 * min_leaf || self.is_pure(idx) {
            None
        } else {
            let dim = self.data.dim();
            let candidates = rand::seq::index::sample(rng, dim, self.n_features).into_vec();
            best_split(self.data, self.classes, idx, &candidates, min_leaf)
        };
        match split {
            None => self.nodes[at] = self.leaf(idx),
            Some(split) => {
                let x = self.data.features();
                idx.sort_by(|&a, &b| {
                    let ka = x[a][split.feature] > split.threshold;
                    let kb = x[b][split.feature] > split.threshold;
                    ka.cmp(&kb).then(a.cmp(&b))
                });
                let cut = idx.partition_point(|&i| x[i][split.feature] <= split.threshold);
                let (l, r) = idx.split_at_mut(cut);
                let left = self.grow(l, depth + 1, rng);
                let right = self.grow(r, depth + 1, rng);
                self.nodes[at] = Node::Branch { split, left, right };
            }
        }
        at
    }
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Exhaustive search over midpoints between consecutive distinct values of
/// each candidate feature. Minimizes the summed child impurity (Gini times
/// count, or squared error); ties keep the earliest candidate and threshold.
fn best_split(
    data: &Dataset2D,
    classes: Option<(&[usize], usize)>,
    idx: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let x = data.features();
    let y = data.labels();
    let n = idx.len();
    let mut best: Option<(f64, Split)> = None;
    let mut order = idx.to_vec();
    for &f in candidates {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut scorer = Scorer::new(classes, y, &order);
        for pos in 1..n {
            scorer.move_left(order[pos - 1]);
            let (lo, hi) = (x[order[pos - 1]][f], x[order[pos]][f]);
            if lo == hi || pos < min_leaf || n - pos < min_leaf {
                continue;
            }
            let score = scorer.score(pos, n - pos);
            // incremental sums differ from a direct count in the last bits,
            // so near-equal scores count as ties
            if best.is_none_or(|(s, _)| score < s - TIE_TOLERANCE * s.abs().max(1.0)) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some((score, Split { feature: f, threshold }));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Running statistics of the left and right partitions.
struct Scorer<'a> {
    classes: Option<(&'a [usize], usize)>,
    y: &'a [f64],
    left: Vec<f64>,
    right: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(classes: Option<(&'a [usize], usize)>, y: &'a [f64], idx: &[usize]) -> Self {
        let (left, mut right) = match classes {
            Some((_, k)) => (vec![0.0; k], vec![0.0; k]),
            None => (vec![0.0; 2], vec![0.0; 2]),
        };
        for &i in idx {
            Self::add(classes, y, &mut right, i, 1.0);
        }
        Scorer {
            classes,
            y,
            left,
            right,
        }
    }

    fn add(classes: Option<(&[usize], usize)>, y: &[f64], acc: &mut [f64], i: usize, sign: f64) {
        match classes {
            Some((labels, _)) => acc[labels[i]] += sign,
            None => {
                acc[0] += sign * y[i];
                acc[1] += sign * y[i] * y[i];
            }
        }
    }

    fn move_left(&mut self, i: usize) {
        Self::add(self.classes, self.y, &mut self.left, i, 1.0);
        Self::add(self.classes, self.y, &mut self.right, i, -1.0);
    }

    fn score(&self, nl: usize, nr: usize) -> f64 {
        let part = |acc: &[f64], n: usize| -> f64 {
            let n = n as f64;
            match self.classes {
                Some(_) => n - acc.iter().map(|c| c * c).sum::<f64>() / n,
                None => (acc[1] - acc[0] * acc[0] / n).max(0.0),
            }
        };
        part(&self.left, nl) + part(&self.right, nr)
    }
}

impl DecisionTree {
    fn fit(
        data: &Dataset2D,
        classes: Option<(&[usize], usize)>,
        indices: &mut [usize],
        config: &ForestConfig,
        rng: &mut ChaCha8Rng,
    ) -> DecisionTree {
        let mut grower = Grower {
            data,
            classes,
            config,
            n_features: config.features_for(data.dim()),
            nodes: Vec::new(),
        };
        grower.grow(indices, 0, rng);
        DecisionTree { nodes: grower.nodes }
    }

    /// The split at the root, or `None` for a single-leaf tree.
    pub fn root_split(&self) -> Option<Split> {
        match &self.nodes[0] {
            Node::Branch { split, .. } => Some(*split),
            Node::Leaf(_) => None,
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Branch { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_value(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Branch { split, left, right } => {
                    at = if x[split.feature] <= split.threshold { *left } else { *right };
                }
            }
        }
    }
}

const BALANCED_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub task: Task,
    /// Class count for classification, 0 for regression.
    pub n_classes: usize,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    /// Mean of the trees' leaf class frequencies.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf_value(x)) {
                *a += v;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    pub fn predict_value(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_value(x)[0]).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_classes(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        rows.iter().map(|r| self.predict_class(r)).collect()
    }

    pub fn predict_values(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_value(r)).collect()
    }
}

/// CART trees on bootstrap resamples with per-tree random streams. Splits
/// minimize Gini impurity (classification) or squared error (regression).
pub fn fit_forest(train: &Dataset2D, config: &ForestConfig, task: Task) -> Result<Forest, MlError> {
    config.validate()?;
    if train.len() < 2 {
        return Err(MlError::TooFewRows {
            needed: 2,
            got: train.len(),
        });
    }
    let class_info = match task {
        Task::Classification => Some(train.class_labels()?),
        Task::Regression => None,
    };
    let classes = class_info.as_ref().map(|(l, k)| (l.as_slice(), *k));
    let n = train.len();
    let by_class: Vec<Vec<usize>> = match classes {
        Some((labels, k)) => (0..k)
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect(),
        None => Vec::new(),
    };
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut idx: Vec<usize> = match (config.resampling, classes) {
                (Resampling::None, _) => (0..n).collect(),
                (Resampling::Balanced, Some(_)) => {
                    let mut draws = ChaCha8Rng::seed_from_u64(config.seed ^ BALANCED_STREAM_SALT);
                    draws.set_stream(t as u64);
                    let mut out = Vec::with_capacity(n);
                    for members in &by_class {
                        let mut replay = draws.clone();
                        let m = members.len();
                        out.extend((0..m).map(|_| members[replay.random_range(0..m)]));
                    }
                    out
                }
                _ => (0..n).map(|_| rng.random_range(0..n)).collect(),
            };
            DecisionTree::fit(train, classes, &mut idx, config, &mut rng)
        })
        .collect();
    Ok(Forest {
        task,
        n_classes: classes.map_or(0, |(_, k)| k),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::accuracy;

    fn xor(n: usize, seed: u64) -> Dataset2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x.push(vec![a, b]);
            y.push(if (a > 0.0) != (b > 0.0) { 1.0 } else { 0.0 });
        }
        Dataset2D::new(x, y).unwrap()
    }

    fn train_acc(f: &Forest, d: &Dataset2D) -> f64 {
        accuracy(&f.predict_classes(d.features()), &d.class_labels().unwrap().0).unwrap()
    }

    #[test]
    fn xor_is_learned() {
        let d = xor(200, 0);
        let f = fit_forest(&d, &ForestConfig::default(), Task::Classification).unwrap();
        assert!(train_acc(&f, &d) >= 0.95);
    }

    #[test]
    fn forest_no_worse_than_single_tree() {
        for seed in 0..5 {
            let d = xor(200, 100 + seed);
            let cfg = ForestConfig {
                seed,
                ..ForestConfig::default()
            };
            let forest = fit_forest(&d, &cfg, Task::Classification).unwrap();
            let tree = fit_forest(&d, &ForestConfig { n_trees: 1, ..cfg }, Task::Classification).unwrap();
            assert!(train_acc(&forest, &d) >= train_acc(&tree, &d), "seed {seed}");
        }
    }

    #[test]
    fn constant_labels() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let d = Dataset2D::new(x.clone(), vec![1.0; 20]).unwrap();
        let f = fit_forest(&d, &ForestConfig::default(), Task::Classification).unwrap();
        assert!(f.predict_classes(&x).iter().all(|&p| p == 1));
        let d = Dataset2D::new(x.clone(), vec![3.25; 20]).unwrap();
        let f = fit_forest(&d, &ForestConfig::default(), Task::Regression).unwrap();
        assert!(f.predict_values(&x).iter().all(|&p| p == 3.25));
    }

    #[test]
    fn regression_follows_step() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 10.0 }).collect();
        let d = Dataset2D::new(x, y).unwrap();
        let f = fit_forest(&d, &ForestConfig::default(), Task::Regression).unwrap();
        assert!(f.predict_value(&[10.0]) < 1.0);
        assert!(f.predict_value(&[90.0]) > 9.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let d = xor(100, 5);
        let a = fit_forest(&d, &ForestConfig::default(), Task::Classification).unwrap();
        let b = fit_forest(&d, &ForestConfig::default(), Task::Classification).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn max_depth_respected() {
        let d = xor(200, 6);
        let cfg = ForestConfig {
            max_depth: 3,
            n_trees: 5,
            ..ForestConfig::default()
        };
        let f = fit_forest(&d, &cfg, Task::Classification).unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn balanced_resampling_mirrors_under_relabeling() {
        let d = xor(400, 9);
        let (labels, _) = d.class_labels().unwrap();
        let mut keep: Vec<usize> = (0..d.len()).filter(|&i| labels[i] == 0).take(60).collect();
        keep.extend((0..d.len()).filter(|&i| labels[i] == 1).take(60));
        let a = d.subset(&keep);
        let b = Dataset2D::new(a.features().to_vec(), a.labels().iter().map(|l| 1.0 - l).collect()).unwrap();
        let cfg = ForestConfig {
            resampling: Resampling::Balanced,
            n_trees: 10,
            ..ForestConfig::default()
        };
        let fa = fit_forest(&a, &cfg, Task::Classification).unwrap();
        let fb = fit_forest(&b, &cfg, Task::Classification).unwrap();
        for x in d.features() {
            let (pa, pb) = (fa.predict_proba(x), fb.predict_proba(x));
            assert_eq!(pa[0], pb[1]);
            assert_eq!(pa[1], pb[0]);
        }
    }

    #[test]
    fn invalid_config() {
        let d = xor(10, 0);
        let cfg = ForestConfig {
            n_trees: 0,
            ..ForestConfig::default()
        };
        assert!(fit_forest(&d, &cfg, Task::Classification).is_err());
        assert_eq!(ForestConfig::default().features_for(10), 4);
        assert_eq!(ForestConfig::default().features_for(1), 1);
    }

    /// Weighted Gini impurity of splitting `points` at `t`, computed directly.
    fn split_gini(points: &[(f64, usize)], t: f64, k: usize) -> f64 {
        let gini = |side: Vec<usize>| {
            let n = side.len() as f64;
            let mut counts = vec![0.0; k];
            for c in &side {
                counts[*c] += 1.0;
            }
            n * (1.0 - counts.iter().map(|c| (c / n).powi(2)).sum::<f64>())
        };
        let left = points.iter().filter(|p| p.0 <= t).map(|p| p.1).collect();
        let right = points.iter().filter(|p| p.0 > t).map(|p| p.1).collect();
        gini(left) + gini(right)
    }

    proptest::proptest! {
        #[test]
        fn stump_matches_exhaustive_threshold_search(
            points in proptest::collection::vec((0u8..20, 0usize..3), 4..40),
        ) {
            let points: Vec<(f64, usize)> = points.into_iter().map(|(x, c)| (x as f64, c)).collect();
            let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let labels: std::collections::BTreeSet<usize> = points.iter().map(|p| p.1).collect();
            proptest::prop_assume!(xs.len() >= 2 && labels.len() >= 2);

            // oracle: every midpoint between consecutive distinct values
            let mut best = (f64::INFINITY, f64::NAN);
            for w in xs.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let g = split_gini(&points, t, 3);
                if g < best.0 - 1e-9 {
                    best = (g, t);
                }
            }

            let d = Dataset2D::new(
                points.iter().map(|p| vec![p.0]).collect(),
                points.iter().map(|p| p.1 as f64).collect(),
            ).unwrap();
            let cfg = ForestConfig {
                n_trees: 1,
                max_depth: 1,
                min_samples_leaf: 1,
                features_per_split: Some(1),
                resampling: Resampling::None,
                seed: 0,
            };
            let forest = fit_forest(&d, &cfg, Task::Classification).unwrap();
            let split = forest.trees[0].root_split().expect("impure node splits");
            proptest::prop_assert_eq!(split.feature, 0);
            let got = split_gini(&points, split.threshold, 3);
            proptest::prop_assert!((got - best.0).abs() < 1e-9, "stump {} vs oracle {}", got, best.0);
            proptest::prop_assert_eq!(split.threshold, best.1);
        }
    }
}

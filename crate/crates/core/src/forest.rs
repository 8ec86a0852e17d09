//! Bagged CART regression forest over logit vectors.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_N_TREES: usize = 800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(width))`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    /// Clamp predictions to [0, 1] (normalized RUL).
    pub clamp_unit: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_N_TREES,
            max_features: None,
            min_samples_leaf: 2,
            max_depth: None,
            bootstrap: true,
            clamp_unit: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("forest needs at least one tree"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::param("min_samples_leaf must be at least 1"));
        }
        if self.max_features == Some(0) {
            return Err(Error::param("max_features must be at least 1"));
        }
        Ok(())
    }

    fn features_per_split(&self, width: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (width as f64).sqrt().floor() as usize)
            .clamp(1, width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    width: usize,
}

/// Arithmetic mean taken relative to the first value, so a constant sequence
/// averages to exactly that constant.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let (sum, n) = it.fold((0.0, 1usize), |(s, n), v| (s + (v - first), n + 1));
    first + sum / n as f64
}

/// Tree-growing parameters shared by every node.
struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    max_features: usize,
    min_samples_leaf: usize,
    max_depth: Option<usize>,
}

impl Grower<'_> {
    /// Best variance-reducing split among `features` as (feature, threshold);
    /// ties keep the lowest feature index, then the lowest threshold.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        // Maximizing S_l²/n_l + S_r²/n_r minimizes the children's summed squared error.
        let parent = total * total / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.y[order[i]];
                let n_left = i + 1;
                let (lo, hi) = (self.x[[order[i], f]], self.x[[order[i + 1], f]]);
                if lo >= hi || n_left < self.min_samples_leaf || n - n_left < self.min_samples_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64;
                if best.is_none_or(|(_, _, g)| gain > g) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((f, threshold, gain));
                }
            }
        }
        best.filter(|&(_, _, g)| g > parent * (1.0 + 1e-15) + 1e-300)
            .map(|(f, t, _)| (f, t))
    }

    fn grow(&self, nodes: &mut Vec<Node>, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf {
            value: mean(rows.iter().map(|&r| self.y[r])),
            samples: rows.len(),
        });
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        if pure
            || rows.len() < 2 * self.min_samples_leaf
            || self.max_depth.is_some_and(|d| depth >= d)
        {
            return id;
        }
        let width = self.x.ncols();
        let mut features = index::sample(rng, width, self.max_features).into_vec();
        features.sort_unstable();
        let Some((feature, threshold)) = self.best_split(&rows, &features) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[[r, feature]] <= threshold);
        let left = self.grow(nodes, left_rows, depth + 1, rng);
        let right = self.grow(nodes, right_rows, depth + 1, rng);
        nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl RegressionTree {
    /// Grows a tree on the given rows of `x` (rows may repeat).
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        rows: Vec<usize>,
        config: &ForestConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("cannot grow a tree on zero rows"));
        }
        let grower = Grower {
            x,
            y,
            max_features: config.features_per_split(x.ncols()),
            min_samples_leaf: config.min_samples_leaf,
            max_depth: config.max_depth,
        };
        let mut nodes = Vec::new();
        grower.grow(&mut nodes, rows, 0, rng);
        Ok(Self {
            nodes,
            width: x.ncols(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.width {
            return Err(Error::shape("tree input width", self.width, x.ncols()));
        }
        Ok(x.rows().into_iter().map(|r| self.predict_row(r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
    bootstrap_seeds: Vec<u64>,
    width: usize,
    clamp_unit: bool,
}

impl Forest {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[f64], config: &ForestConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::shape("forest targets", x.nrows(), y.len()));
        }
        if y.len() < 2 {
            return Err(Error::input(format!("forest needs at least 2 rows, got {}", y.len())));
        }
        if x.ncols() == 0 {
            return Err(Error::input("forest input has zero columns"));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::input("forest inputs must be finite"));
        }
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let bootstrap_seeds: Vec<u64> = (0..config.n_trees).map(|_| seeder.next_u64()).collect();
        let n = y.len();
        let trees = bootstrap_seeds
            .iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let rows = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, rows, config, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trees,
            bootstrap_seeds,
            width: x.ncols(),
            clamp_unit: config.clamp_unit,
        })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bootstrap_seeds(&self) -> &[u64] {
        &self.bootstrap_seeds
    }

    /// Mean of the tree predictions for each row.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.width {
            return Err(Error::shape("forest input width", self.width, x.ncols()));
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let mean = mean(self.trees.iter().map(|t| t.predict_row(row)));
                if self.clamp_unit {
                    mean.clamp(0.0, 1.0)
                } else {
                    mean
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn exact() -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            max_features: Some(usize::MAX),
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: false,
            clamp_unit: false,
        }
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 5.0], [3.0, -1.0]];
        let f = Forest::fit(x.view(), &[0.7; 4], &ForestConfig { n_trees: 10, ..Default::default() }, 3).unwrap();
        let probe = array![[10.0, 10.0], [-4.0, 2.0]];
        assert_eq!(f.predict(probe.view()).unwrap(), vec![0.7, 0.7]);
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
    }

    #[test]
    fn single_exact_tree_memorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = Forest::fit(x.view(), &y, &exact(), 0).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), y);
    }

    #[test]
    fn two_tree_average() {
        let leaf = |v| RegressionTree {
            nodes: vec![Node::Leaf { value: v, samples: 1 }],
            width: 1,
        };
        let f = Forest {
            trees: vec![leaf(0.2), leaf(0.4)],
            bootstrap_seeds: vec![0, 1],
            width: 1,
            clamp_unit: false,
        };
        let p = f.predict(array![[5.0]].view()).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn predictions_stay_within_target_range_and_permute() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((60, 4), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let cfg = ForestConfig { n_trees: 25, clamp_unit: false, ..Default::default() };
        let f = Forest::fit(x.view(), &y, &cfg, 1).unwrap();
        let probe = Array2::from_shape_fn((30, 4), |_| rng.random_range(-3.0..3.0));
        let p = f.predict(probe.view()).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(p.iter().all(|v| *v >= lo && *v <= hi));

        let mut rev = probe.clone();
        rev.invert_axis(ndarray::Axis(0));
        let mut q = f.predict(rev.view()).unwrap();
        q.reverse();
        assert_eq!(p, q);

        // Each prediction is exactly the mean over trees.
        for (i, row) in probe.rows().into_iter().enumerate() {
            let preds: Vec<f64> = f.trees().iter().map(|t| t.predict_row(row)).collect();
            let shifted: f64 = preds.iter().map(|v| v - preds[0]).sum();
            assert_eq!(p[i], preds[0] + shifted / 25.0);
            let plain = preds.iter().sum::<f64>() / 25.0;
            assert!((p[i] - plain).abs() <= 1e-15 * plain.abs().max(1.0));
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((30, 5), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let cfg = ForestConfig { n_trees: 12, ..Default::default() };
        let a = Forest::fit(x.view(), &y, &cfg, 77).unwrap();
        let b = Forest::fit(x.view(), &y, &cfg, 77).unwrap();
        assert_eq!(a, b);
        let c = Forest::fit(x.view(), &y, &cfg, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn errors_and_clamp() {
        let x = array![[0.0], [1.0]];
        assert!(Forest::fit(x.view(), &[1.0], &ForestConfig::default(), 0).is_err());
        assert!(Forest::fit(array![[0.0]].view(), &[1.0], &ForestConfig::default(), 0).is_err());
        let cfg = ForestConfig { n_trees: 3, min_samples_leaf: 1, bootstrap: false, ..Default::default() };
        let f = Forest::fit(x.view(), &[-0.5, 1.5], &cfg, 0).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), vec![0.0, 1.0]);
        assert!(f.predict(array![[0.0, 1.0]].view()).is_err());
    }

    #[test]
    fn default_tree_count() {
        assert_eq!(ForestConfig::default().n_trees, 800);
    }

    #[test]
    fn thresholds_fall_between_training_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((25, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = Forest::fit(x.view(), &y, &exact(), 0).unwrap();
        for node in f.trees()[0].nodes() {
            if let Node::Split { feature, threshold, .. } = *node {
                let below = x.column(feature).iter().filter(|v| **v <= threshold).fold(f64::MIN, |a, &b| a.max(b));
                let above = x.column(feature).iter().filter(|v| **v > threshold).fold(f64::MAX, |a, &b| a.min(b));
                assert!(below < threshold || below == threshold && threshold < above);
                assert!(threshold < above);
            }
        }
    }
}

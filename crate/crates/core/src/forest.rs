//! Random-forest regression with per-row sample weights.
//!
//! Trees are CART regressors grown on a weighted bootstrap resample (rows are
//! drawn with probability proportional to their weight) with a fresh random
//! feature subset at each split. Splits maximise the weighted reduction in
//! squared error; candidate thresholds are midpoints between consecutive
//! distinct values and a row goes left when `x <= threshold`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::SupervisedDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> Result<usize> {
        let k = match self {
            MaxFeatures::Sqrt => libm::ceil(libm::sqrt(n_features as f64)) as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        if k == 0 || k > n_features {
            return Err(Error::param(
                "max_features",
                format!("must lie in 1..={n_features}, got {k}"),
            ));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    /// Bootstrap sample size; defaults to the number of rows with positive
    /// weight.
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            max_samples: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("n_trees", "must be >= 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::param("min_samples_leaf", "must be >= 1"));
        }
        if self.max_samples == Some(0) {
            return Err(Error::param("max_samples", "must be >= 1"));
        }
        self.max_features.resolve(n_features).map(|_| ())
    }
}

/// A tree node. Leaves point at themselves (`left == right == own index`),
/// which lets prediction walk a fixed number of levels without branching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Weighted mean of the training targets reaching the node.
    pub value: f64,
    /// Sum of the training weights reaching the node.
    pub weight: f64,
}

impl Node {
    pub fn leaf(index: usize, value: f64, weight: f64) -> Self {
        Node {
            feature: 0,
            threshold: f64::MAX,
            left: index as u32,
            right: index as u32,
            value,
            weight,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left == self.right
    }

    #[inline]
    fn next(&self, row: &[f64]) -> usize {
        if row[self.feature as usize] <= self.threshold {
            self.left as usize
        } else {
            self.right as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
    /// Longest root-to-leaf path.
    pub depth: u32,
}

const LANES: usize = 8;

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        let mut depth = 0;
        let mut stack = vec![(0usize, 0u32)];
        while let Some((at, d)) = stack.pop() {
            let n = nodes[at];
            if n.is_leaf() {
                depth = depth.max(d);
            } else {
                stack.push((n.left as usize, d + 1));
                stack.push((n.right as usize, d + 1));
            }
        }
        Tree { nodes, depth }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            let n = &self.nodes[at];
            if n.is_leaf() {
                return n.value;
            }
            at = n.next(row);
        }
    }

    /// Adds the prediction for every row of `x` to `acc`.
    fn accumulate(&self, x: &[f64], p: usize, acc: &mut [f64]) {
        let mut blocks = x.chunks_exact(p * LANES);
        let mut out = acc.chunks_exact_mut(LANES);
        for (block, dst) in (&mut blocks).zip(&mut out) {
            let mut at = [0usize; LANES];
            for _ in 0..self.depth {
                for (j, a) in at.iter_mut().enumerate() {
                    *a = self.nodes[*a].next(&block[j * p..(j + 1) * p]);
                }
            }
            for (d, a) in dst.iter_mut().zip(at) {
                *d += self.nodes[a].value;
            }
        }
        for (d, r) in out.into_remainder().iter_mut().zip(blocks.remainder().chunks_exact(p)) {
            *d += self.predict(r);
        }
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    fn check_arity(&self, found: usize) -> Result<()> {
        if found != self.n_features {
            return Err(Error::ArityMismatch {
                expected: self.n_features,
                found,
            });
        }
        Ok(())
    }

    /// Mean of the tree predictions, before clipping.
    pub fn predict_unclipped(&self, row: &[f64]) -> Result<f64> {
        self.check_arity(row.len())?;
        let sum = self.trees.iter().fold(0.0, |acc, t| acc + t.predict(row));
        Ok(sum / self.trees.len() as f64)
    }

    /// Mean of the tree predictions clipped at zero.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        self.predict_unclipped(row).map(|v| v.max(0.0))
    }

    /// Predicts every row of a row-major matrix.
    pub fn predict_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.n_features;
        if p == 0 || x.len() % p != 0 {
            return Err(Error::ArityMismatch {
                expected: p,
                found: if p == 0 { x.len() } else { x.len() % p },
            });
        }
        // Tree-major order keeps one tree hot in cache; the per-row sums are
        // accumulated in the same order as `predict_unclipped`.
        let mut acc = vec![0.0; x.len() / p];
        for t in &self.trees {
            t.accumulate(x, p, &mut acc);
        }
        let n = self.trees.len() as f64;
        Ok(acc.into_iter().map(|s| (s / n).max(0.0)).collect())
    }
}

/// A row-major design matrix with targets.
#[derive(Debug, Clone, Copy)]
pub struct Design<'a> {
    pub x: &'a [f64],
    pub n_features: usize,
    pub y: &'a [f64],
}

impl<'a> Design<'a> {
    pub fn from_dataset(ds: &'a SupervisedDataset) -> Self {
        Design {
            x: &ds.features,
            n_features: ds.lags,
            y: &ds.targets,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    #[inline]
    fn at(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_features + feature]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted sum-of-squares reduction, `SSE(parent) - SSE(left) - SSE(right)`.
    pub reduction: f64,
}

#[derive(Clone, Copy)]
struct Entry {
    x: f64,
    y: f64,
    w: f64,
}

/// Best split of `rows` over the given `features` (scanned in the order
/// given). Ties keep the earlier feature and the lower threshold.
pub fn best_split(
    design: &Design<'_>,
    weights: &[f64],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let mut buf = Vec::with_capacity(rows.len());
    let (w_tot, wy) = rows
        .iter()
        .fold((0.0, 0.0), |(a, b), &r| (a + weights[r], b + weights[r] * design.y[r]));
    if w_tot <= 0.0 {
        return None;
    }
    let mean = wy / w_tot;
    best_split_inner(design, weights, rows, features, min_samples_leaf.max(1), mean, &mut buf)
}

fn best_split_inner(
    design: &Design<'_>,
    weights: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    mean: f64,
    buf: &mut Vec<Entry>,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        buf.clear();
        buf.extend(rows.iter().map(|&r| Entry {
            x: design.at(r, f),
            y: design.y[r] - mean,
            w: weights[r],
        }));
        buf.sort_unstable_by(|a, b| a.x.total_cmp(&b.x));
        if buf[0].x == buf[n - 1].x {
            continue;
        }
        let (mut w_all, mut s_all) = (0.0, 0.0);
        for e in buf.iter() {
            w_all += e.w;
            s_all += e.w * e.y;
        }
        let base = s_all * s_all / w_all;
        let (mut wl, mut sl) = (0.0, 0.0);
        for k in 1..n {
            let e = buf[k - 1];
            wl += e.w;
            sl += e.w * e.y;
            if k < min_leaf || n - k < min_leaf {
                continue;
            }
            let (lo, hi) = (buf[k - 1].x, buf[k].x);
            if lo == hi {
                continue;
            }
            let wr = w_all - wl;
            if wl <= 0.0 || wr <= 0.0 {
                continue;
            }
            let sr = s_all - sl;
            let reduction = sl * sl / wl + sr * sr / wr - base;
            if best.map_or(true, |b| reduction > b.reduction) {
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    reduction,
                });
            }
        }
    }
    best
}

/// Grows one tree on `rows` with the given per-row weights.
pub fn grow_tree<R: Rng + ?Sized>(
    design: &Design<'_>,
    weights: &[f64],
    mut rows: Vec<usize>,
    max_features: usize,
    min_samples_leaf: usize,
    max_depth: Option<usize>,
    rng: &mut R,
) -> Tree {
    let p = design.n_features;
    let min_leaf = min_samples_leaf.max(1);
    let mut nodes = vec![Node::leaf(0, 0.0, 0.0)];
    // (node slot, start, end, depth)
    let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
    let mut buf = Vec::with_capacity(rows.len());
    let mut feats = Vec::with_capacity(max_features);

    while let Some((slot, start, end, depth)) = stack.pop() {
        let node_rows = &rows[start..end];
        let (mut w, mut wy) = (0.0, 0.0);
        let y0 = design.y[node_rows[0]];
        let mut pure = true;
        for &r in node_rows {
            w += weights[r];
            wy += weights[r] * design.y[r];
            pure &= design.y[r] == y0;
        }
        let mean = if w > 0.0 { wy / w } else { y0 };
        let leaf = Node::leaf(slot, mean, w);
        if pure || max_depth.is_some_and(|d| depth >= d) || node_rows.len() < 2 * min_leaf {
            nodes[slot] = leaf;
            continue;
        }
        feats.clear();
        feats.extend(index::sample(rng, p, max_features).into_iter());
        feats.sort_unstable();
        let choice = best_split_inner(design, weights, node_rows, &feats, min_leaf, mean, &mut buf);
        let Some(choice) = choice.filter(|c| c.reduction > 0.0) else {
            nodes[slot] = leaf;
            continue;
        };
        let seg = &mut rows[start..end];
        let mut split = 0;
        for k in 0..seg.len() {
            if design.at(seg[k], choice.feature) <= choice.threshold {
                seg.swap(k, split);
                split += 1;
            }
        }
        let left = nodes.len();
        nodes.push(Node::leaf(left, mean, 0.0));
        nodes.push(Node::leaf(left + 1, mean, 0.0));
        nodes[slot] = Node {
            feature: choice.feature as u32,
            threshold: choice.threshold,
            left: left as u32,
            right: (left + 1) as u32,
            value: mean,
            weight: w,
        };
        stack.push((left + 1, start + split, end, depth + 1));
        stack.push((left, start, start + split, depth + 1));
    }
    Tree::from_nodes(nodes)
}

fn check_inputs(design: &Design<'_>, weights: &[f64]) -> Result<()> {
    let n = design.n_rows();
    if n == 0 {
        return Err(Error::EmptyData("forest needs at least one row"));
    }
    if design.n_features == 0 || design.x.len() != n * design.n_features {
        return Err(Error::ArityMismatch {
            expected: n * design.n_features,
            found: design.x.len(),
        });
    }
    if weights.len() != n {
        return Err(Error::param("weights", "one weight per row is required"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::param("weights", "weights must be finite and >= 0"));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(())
}

/// Draws `m` rows with probability proportional to weight and returns the
/// per-row draw counts.
pub fn weighted_bootstrap<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<u32> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    let mut counts = vec![0u32; weights.len()];
    for _ in 0..m {
        let u = rng.random::<f64>() * acc;
        let mut i = cum.partition_point(|&c| c <= u);
        // Guard against landing on a trailing zero-weight row via rounding.
        while i > 0 && (i >= weights.len() || weights[i] == 0.0) {
            i -= 1;
        }
        counts[i] += 1;
    }
    counts
}

fn fit_one(design: &Design<'_>, weights: &[f64], config: &ForestConfig, k: usize, tree: usize) -> Tree {
    let mut stream = rng::derived_stream(config.seed, &[Key::Label("tree"), Key::Index(tree as u64)]);
    let (rows, tree_weights): (Vec<usize>, Vec<f64>) = if config.bootstrap {
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        let m = config.max_samples.unwrap_or(positive);
        let counts = weighted_bootstrap(weights, m, &mut stream);
        let rows = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
        (rows, counts.iter().map(|&c| f64::from(c)).collect())
    } else {
        ((0..weights.len()).filter(|&i| weights[i] > 0.0).collect(), weights.to_vec())
    };
    grow_tree(
        design,
        &tree_weights,
        rows,
        k,
        config.min_samples_leaf,
        config.max_depth,
        &mut stream,
    )
}

pub fn fit_forest_design(design: &Design<'_>, weights: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    check_inputs(design, weights)?;
    config.validate(design.n_features)?;
    let k = config.max_features.resolve(design.n_features)?;
    let trees = (0..config.n_trees)
        .map(|t| fit_one(design, weights, config, k, t))
        .collect();
    Ok(ForestModel {
        n_features: design.n_features,
        trees,
    })
}

/// Fits a forest on a windowed dataset with per-row weights.
pub fn fit_forest(data: &SupervisedDataset, weights: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    fit_forest_design(&Design::from_dataset(data), weights, config)
}

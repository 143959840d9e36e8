//! Second-order gradient-boosted trees for the centralized baseline.
//!
//! Each round fits a regression tree to the logistic-loss gradients `g` and
//! hessians `h` of the current ensemble. For a node holding sums `G`, `H` the
//! regularized optimum leaf weight is `−G/(H+λ)`, and a split is scored by
//!
//! ```text
//! gain = ½·[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ
//! ```
//!
//! Rows with `x < threshold` go left.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::StudentSkillExample;
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionCounts, MetricSummary, RoundMetrics};

pub const FEATURE_NAMES: [&str; 5] = [
    "user_idx",
    "skill_idx",
    "user_mean_correct",
    "user_interaction_count",
    "skill_mean_correct",
];

pub const ENSEMBLE_MAGIC: &str = "GBDT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoosterConfig {
    pub num_rounds: usize,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_depth: usize,
    pub min_child_hessian: f64,
    pub seed: u64,
}

impl Default for BoosterConfig {
    fn default() -> Self {
        Self {
            num_rounds: 100,
            eta: 0.3,
            gamma: 0.0,
            lambda: 1.0,
            max_depth: 4,
            min_child_hessian: 1e-3,
            seed: 42,
        }
    }
}

impl BoosterConfig {
    pub fn validate(&self) -> Result<()> {
        let penalties = [self.gamma, self.lambda, self.min_child_hessian];
        if penalties.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig(
                "booster penalties must be >= 0".into(),
            ));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        Ok(())
    }
}

/// Dense feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_features: usize,
    /// Row-major `len × num_features`.
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(num_features: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.len() != num_features * labels.len() {
            return Err(Error::LengthMismatch {
                expected: num_features * labels.len(),
                actual: features.len(),
            });
        }
        Ok(Self {
            num_features,
            features,
            labels,
        })
    }

    /// Columns in [`FEATURE_NAMES`] order.
    pub fn from_examples(examples: &[StudentSkillExample]) -> Self {
        let mut features = Vec::with_capacity(examples.len() * FEATURE_NAMES.len());
        for e in examples {
            features.extend_from_slice(&[
                e.user_idx as f64,
                e.skill_idx as f64,
                e.user_mean_correct,
                e.user_interaction_count,
                e.skill_mean_correct,
            ]);
        }
        Self {
            num_features: FEATURE_NAMES.len(),
            features,
            labels: examples.iter().map(|e| e.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.num_features + feature]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the logistic loss with respect to the logit.
pub fn logistic_grad_hess(p: f64, y: f64) -> (f64, f64) {
    (p - y, p * (1.0 - p))
}

/// `−G/(H+λ)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> Result<f64> {
    let den = h + lambda;
    if den <= 0.0 {
        return Err(Error::DegenerateLeaf(den));
    }
    Ok(-g / den)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)) - gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] < *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Adds each split's gain to `importance[feature]`.
    pub fn accumulate_gain(&self, importance: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            gain,
            left,
            right,
            ..
        } = self
        {
            importance[*feature] += gain;
            left.accumulate_gain(importance);
            right.accumulate_gain(importance);
        }
    }

    fn write_preorder(&self, out: &mut String) {
        match self {
            TreeNode::Leaf { weight } => {
                let _ = writeln!(out, "L {weight:?}");
            }
            TreeNode::Split {
                feature,
                threshold,
                gain,
                left,
                right,
            } => {
                let _ = writeln!(out, "S {feature} {threshold:?} {gain:?}");
                left.write_preorder(out);
                right.write_preorder(out);
            }
        }
    }

    fn read_preorder<'a, I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = &'a str>,
    {
        let line = lines
            .next()
            .ok_or_else(|| Error::malformed("ensemble", "truncated tree"))?;
        let mut parts = line.split_whitespace();
        let bad = || Error::malformed("ensemble", format!("bad node line `{line}`"));
        let num = |s: Option<&str>| s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        match parts.next() {
            Some("L") => Ok(TreeNode::Leaf {
                weight: num(parts.next())?,
            }),
            Some("S") => {
                let feature = parts
                    .next()
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(bad)?;
                let threshold = num(parts.next())?;
                let gain = num(parts.next())?;
                let left = Box::new(Self::read_preorder(lines)?);
                let right = Box::new(Self::read_preorder(lines)?);
                Ok(TreeNode::Split {
                    feature,
                    threshold,
                    gain,
                    left,
                    right,
                })
            }
            _ => Err(bad()),
        }
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Greedy depth-first tree growth over rows `rows` using exact enumeration of
/// midpoints between sorted unique feature values.
pub fn build_tree(
    data: &Dataset,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    cfg: &BoosterConfig,
) -> Result<TreeNode> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    grow(data, grad, hess, rows.to_vec(), 0, cfg)
}

fn grow(
    data: &Dataset,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    depth: usize,
    cfg: &BoosterConfig,
) -> Result<TreeNode> {
    let g: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| hess[i]).sum();
    let leaf = || leaf_weight(g, h, cfg.lambda).map(|weight| TreeNode::Leaf { weight });
    if depth >= cfg.max_depth || rows.len() < 2 {
        return leaf();
    }
    let best = match best_split(data, grad, hess, &rows, g, h, cfg) {
        Some(b) if b.gain > 0.0 => b,
        _ => return leaf(),
    };
    let (left, right): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&i| data.value(i, best.feature) < best.threshold);
    Ok(TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        gain: best.gain,
        left: Box::new(grow(data, grad, hess, left, depth + 1, cfg)?),
        right: Box::new(grow(data, grad, hess, right, depth + 1, cfg)?),
    })
}

fn best_split(
    data: &Dataset,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    g_total: f64,
    h_total: f64,
    cfg: &BoosterConfig,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    let mut order = rows.to_vec();
    for feature in 0..data.num_features {
        order.sort_by(|&a, &b| data.value(a, feature).total_cmp(&data.value(b, feature)));
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..order.len() - 1 {
            let i = order[w];
            gl += grad[i];
            hl += hess[i];
            let (x, next) = (data.value(i, feature), data.value(order[w + 1], feature));
            if x == next {
                continue;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < cfg.min_child_hessian || hr < cfg.min_child_hessian {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, cfg.lambda, cfg.gamma);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: x + (next - x) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub base_score: f64,
    pub eta: f64,
    pub num_features: usize,
    pub trees: Vec<TreeNode>,
}

impl BoostedEnsemble {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.eta * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.num_features != self.num_features {
            return Err(Error::FeatureMismatch {
                expected: self.num_features,
                actual: data.num_features,
            });
        }
        Ok((0..data.len())
            .map(|i| sigmoid(self.margin(data.row(i))))
            .collect())
    }

    /// Probabilities and confusion counts at `p >= threshold`.
    pub fn predict(&self, data: &Dataset, threshold: f64) -> Result<(Vec<f64>, ConfusionCounts)> {
        let probs = self.predict_proba(data)?;
        let counts = ConfusionCounts::from_pairs(
            probs
                .iter()
                .zip(&data.labels)
                .map(|(&p, &y)| (p >= threshold, y == 1)),
        );
        Ok((probs, counts))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{ENSEMBLE_MAGIC}");
        let _ = writeln!(out, "base_score {:?}", self.base_score);
        let _ = writeln!(out, "eta {:?}", self.eta);
        let _ = writeln!(out, "num_features {}", self.num_features);
        let _ = writeln!(out, "trees {}", self.trees.len());
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {i}");
            t.write_preorder(&mut out);
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let text: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut lines = text.iter().map(|s| s.trim()).filter(|s| !s.is_empty());
        if lines.next() != Some(ENSEMBLE_MAGIC) {
            return Err(Error::malformed("ensemble", "bad magic"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::malformed("ensemble", "truncated header"))?;
            line.strip_prefix(name)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::malformed("ensemble", format!("expected `{name}`")))
        };
        let parse_err = |what: &str| Error::malformed("ensemble", format!("bad {what}"));
        let base_score = field("base_score")?
            .parse()
            .map_err(|_| parse_err("base_score"))?;
        let eta = field("eta")?.parse().map_err(|_| parse_err("eta"))?;
        let num_features = field("num_features")?
            .parse()
            .map_err(|_| parse_err("num_features"))?;
        let count: usize = field("trees")?.parse().map_err(|_| parse_err("trees"))?;
        let mut trees = Vec::with_capacity(count);
        for i in 0..count {
            let header = format!("tree {i}");
            if lines.next() != Some(header.as_str()) {
                return Err(Error::malformed("ensemble", format!("expected `{header}`")));
            }
            trees.push(TreeNode::read_preorder(&mut lines)?);
        }
        Ok(Self {
            base_score,
            eta,
            num_features,
            trees,
        })
    }
}

/// Total split gain per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub names: Vec<String>,
    pub gain: Vec<f64>,
}

impl FeatureImportance {
    /// `(name, gain)` pairs, highest gain first; ties keep column order.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut r: Vec<(&str, f64)> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(self.gain.iter().copied())
            .collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r
    }

    pub fn total(&self) -> f64 {
        self.gain.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostOutcome {
    pub ensemble: BoostedEnsemble,
    /// Evaluation-set metrics after each round.
    pub rounds: Vec<RoundMetrics>,
    /// Training logloss before any tree, then after each round.
    pub train_loss: Vec<f64>,
    pub importance: FeatureImportance,
    /// Sum of accepted split gains, in the order they were accepted.
    pub accepted_gains: Vec<f64>,
}

impl BoostOutcome {
    pub fn f1_summary(&self) -> Option<MetricSummary> {
        let series: Vec<(usize, f64)> = self.rounds.iter().map(|r| (r.round, r.f1)).collect();
        metrics::summarize(&series).ok()
    }
}

fn logloss(probs: &[f64], labels: &[u8]) -> f64 {
    let eps = crate::model::BCE_EPS;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / probs.len() as f64
}

fn eval_metrics(ensemble: &BoostedEnsemble, data: &Dataset, round: usize) -> Result<RoundMetrics> {
    let (probs, counts) = ensemble.predict(data, 0.5)?;
    RoundMetrics::from_counts(round, &counts, logloss(&probs, &data.labels), 0)
}

/// Fits `cfg.num_rounds` trees on `train`, recording metrics on `eval` after
/// every round.
pub fn train(train: &Dataset, eval: &Dataset, cfg: &BoosterConfig) -> Result<BoostOutcome> {
    cfg.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if eval.num_features != train.num_features {
        return Err(Error::FeatureMismatch {
            expected: train.num_features,
            actual: eval.num_features,
        });
    }
    let positives = train.labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::DegenerateLabels);
    }
    let rate = positives as f64 / train.len() as f64;
    let mut ensemble = BoostedEnsemble {
        base_score: (rate / (1.0 - rate)).ln(),
        eta: cfg.eta,
        num_features: train.num_features,
        trees: Vec::with_capacity(cfg.num_rounds),
    };

    let rows: Vec<usize> = (0..train.len()).collect();
    let mut margin = vec![ensemble.base_score; train.len()];
    let mut train_loss = Vec::with_capacity(cfg.num_rounds + 1);
    let probs = |m: &[f64]| m.iter().map(|&z| sigmoid(z)).collect::<Vec<_>>();
    train_loss.push(logloss(&probs(&margin), &train.labels));

    let mut rounds = Vec::with_capacity(cfg.num_rounds);
    let mut importance = vec![0.0; train.num_features];
    let mut accepted_gains = Vec::new();
    let (mut grad, mut hess) = (vec![0.0; train.len()], vec![0.0; train.len()]);
    for round in 1..=cfg.num_rounds {
        for i in 0..train.len() {
            let (g, h) = logistic_grad_hess(sigmoid(margin[i]), f64::from(train.labels[i]));
            grad[i] = g;
            hess[i] = h;
        }
        let tree = build_tree(train, &grad, &hess, &rows, cfg)?;
        tree.accumulate_gain(&mut importance);
        collect_gains(&tree, &mut accepted_gains);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += cfg.eta * tree.predict(train.row(i));
        }
        ensemble.trees.push(tree);
        train_loss.push(logloss(&probs(&margin), &train.labels));
        rounds.push(eval_metrics(&ensemble, eval, round)?);
    }

    let names = if train.num_features == FEATURE_NAMES.len() {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..train.num_features).map(|i| format!("f{i}")).collect()
    };
    Ok(BoostOutcome {
        ensemble,
        rounds,
        train_loss,
        importance: FeatureImportance {
            names,
            gain: importance,
        },
        accepted_gains,
    })
}

fn collect_gains(tree: &TreeNode, out: &mut Vec<f64>) {
    if let TreeNode::Split {
        gain, left, right, ..
    } = tree
    {
        out.push(*gain);
        collect_gains(left, out);
        collect_gains(right, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grad_hess_examples() {
        assert_eq!(logistic_grad_hess(0.5, 1.0), (-0.5, 0.25));
        let (g, _) = logistic_grad_hess(1.0 - 1e-12, 1.0);
        assert!(g.abs() < 1e-11);
    }

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(leaf_weight(0.0, 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(leaf_weight(2.0, 3.0, 1.0).unwrap(), -0.5);
        assert!(leaf_weight(2.0, 3.0, 1e12).unwrap().abs() < 1e-11);
        assert!(matches!(
            leaf_weight(1.0, 0.0, 0.0),
            Err(Error::DegenerateLeaf(_))
        ));
    }

    #[test]
    fn split_gain_examples() {
        // Identical children carry no separation when unregularized.
        assert_eq!(split_gain(1.5, 2.0, 1.5, 2.0, 0.0, 0.0), 0.0);
        assert_eq!(split_gain(0.0, 2.0, 0.0, 2.0, 1.0, 0.0), 0.0);
        // With lambda > 0 splitting identical halves is penalized.
        assert!(split_gain(1.5, 2.0, 1.5, 2.0, 1.0, 0.0) < 0.0);
        assert_abs_diff_eq!(
            split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0),
            2.0,
            epsilon = 1e-15
        );
        assert!(split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 2.5) < 0.0);
    }

    fn one_d(xs: &[f64], ys: &[u8]) -> Dataset {
        Dataset::new(1, xs.to_vec(), ys.to_vec()).unwrap()
    }

    fn gh(data: &Dataset, p: f64) -> (Vec<f64>, Vec<f64>) {
        data.labels
            .iter()
            .map(|&y| logistic_grad_hess(p, f64::from(y)))
            .unzip()
    }

    #[test]
    fn identical_labels_give_single_leaf() {
        let d = one_d(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1]);
        let (g, h) = gh(&d, 0.5);
        let t = build_tree(&d, &g, &h, &[0, 1, 2, 3], &BoosterConfig::default()).unwrap();
        match t {
            TreeNode::Leaf { weight } => assert!(weight > 0.0),
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn separable_root_split_lies_between_classes() {
        let xs = [-3.0, -1.5, -0.25, 0.0, 0.75, 2.0];
        let ys = [0, 0, 0, 1, 1, 1];
        let d = one_d(&xs, &ys);
        let (g, h) = gh(&d, 0.5);
        let cfg = BoosterConfig {
            max_depth: 1,
            ..Default::default()
        };
        let t = build_tree(&d, &g, &h, &(0..6).collect::<Vec<_>>(), &cfg).unwrap();
        match &t {
            TreeNode::Split { threshold, .. } => assert!(*threshold > -0.25 && *threshold <= 0.0),
            other => panic!("expected split, got {other:?}"),
        }
        assert!(t.num_leaves() <= 2);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn known_tree_walk() {
        let t = TreeNode::Split {
            feature: 1,
            threshold: 0.5,
            gain: 1.0,
            left: Box::new(TreeNode::Leaf { weight: -1.0 }),
            right: Box::new(TreeNode::Split {
                feature: 0,
                threshold: 2.0,
                gain: 0.5,
                left: Box::new(TreeNode::Leaf { weight: 0.25 }),
                right: Box::new(TreeNode::Leaf { weight: 0.75 }),
            }),
        };
        let ens = BoostedEnsemble {
            base_score: 0.1,
            eta: 0.5,
            num_features: 2,
            trees: vec![t],
        };
        let d = Dataset::new(2, vec![0.0, 0.2, 1.0, 0.9, 3.0, 0.5], vec![0, 1, 1]).unwrap();
        let (p, c) = ens.predict(&d, 0.5).unwrap();
        assert_abs_diff_eq!(p[0], sigmoid(0.1 - 0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], sigmoid(0.1 + 0.125), epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], sigmoid(0.1 + 0.375), epsilon = 1e-15);
        assert_eq!(c, ConfusionCounts::new(2, 0, 0, 1));

        let back = BoostedEnsemble::read_text(ens.to_text().as_bytes()).unwrap();
        assert_eq!(back, ens);
        assert!(ens.to_text().starts_with("GBDT01\n"));
    }

    #[test]
    fn empty_ensemble_predicts_base_rate() {
        let ens = BoostedEnsemble {
            base_score: -0.4,
            eta: 0.3,
            num_features: 1,
            trees: vec![],
        };
        let (p, _) = ens.predict(&one_d(&[1.0, 5.0], &[0, 1]), 0.5).unwrap();
        assert!(p.iter().all(|&v| v == sigmoid(-0.4)));
        assert!(matches!(
            ens.predict(&Dataset::new(2, vec![0.0; 2], vec![0]).unwrap(), 0.5),
            Err(Error::FeatureMismatch { .. })
        ));
    }

    #[test]
    fn zero_rounds_gives_majority_accuracy() {
        let d = one_d(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 0, 0]);
        let cfg = BoosterConfig {
            num_rounds: 0,
            ..Default::default()
        };
        let out = train(&d, &d, &cfg).unwrap();
        assert!(out.rounds.is_empty());
        let (_, c) = out.ensemble.predict(&d, 0.5).unwrap();
        assert_abs_diff_eq!(c.accuracy().unwrap(), 0.6);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let d = one_d(&[0.0, 1.0], &[1, 1]);
        assert!(matches!(
            train(&d, &d, &BoosterConfig::default()),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn importance_sums_accepted_gains() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 7) % 40) as f64).collect();
        let ys: Vec<u8> = xs
            .iter()
            .map(|&x| u8::from(!(4.0..=17.0).contains(&x)))
            .collect();
        let d = one_d(&xs, &ys);
        let cfg = BoosterConfig {
            num_rounds: 10,
            ..Default::default()
        };
        let out = train(&d, &d, &cfg).unwrap();
        let direct: f64 = out.accepted_gains.iter().sum();
        assert_abs_diff_eq!(out.importance.total(), direct, epsilon = 1e-12);
        assert!(out.importance.gain.iter().all(|&g| g >= 0.0));
        let best = out.f1_summary().unwrap();
        let argmax = out.rounds.iter().fold((0, f64::NEG_INFINITY), |acc, r| {
            if r.f1 > acc.1 {
                (r.round, r.f1)
            } else {
                acc
            }
        });
        assert_eq!(best.best_round, argmax.0);
    }
}

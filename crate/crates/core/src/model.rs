//! Embedding recommender network with hand-written backpropagation.
//!
//! Architecture: user and skill embeddings are concatenated with the
//! continuous features and passed through two ReLU dense layers and a sigmoid
//! output unit. All parameters live in one flat `Vec<f64>` in the fixed order
//! user embeddings, skill embeddings, dense1 W, dense1 b, dense2 W, dense2 b,
//! output W, output b; weight matrices are stored `in × out`, row-major.

use std::io::{Read, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, StudentSkillExample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::rng;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;
const EMBEDDING_INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_users: usize,
    pub num_skills: usize,
    pub embedding_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub num_continuous: usize,
}

impl ModelDims {
    pub fn new(num_users: usize, num_skills: usize) -> Self {
        Self {
            num_users,
            num_skills,
            embedding_dim: 10,
            hidden1: 32,
            hidden2: 16,
            num_continuous: 3,
        }
    }

    pub fn concat_width(&self) -> usize {
        2 * self.embedding_dim + self.num_continuous
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.num_users,
            self.num_skills,
            self.embedding_dim,
            self.hidden1,
            self.hidden2,
        ];
        if fields.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "model dims must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub user_emb: Range<usize>,
    pub skill_emb: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub w3: Range<usize>,
    pub b3: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(d: &ModelDims) -> Self {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let user_emb = take(d.num_users * d.embedding_dim);
        let skill_emb = take(d.num_skills * d.embedding_dim);
        let w1 = take(d.concat_width() * d.hidden1);
        let b1 = take(d.hidden1);
        let w2 = take(d.hidden1 * d.hidden2);
        let b2 = take(d.hidden2);
        let w3 = take(d.hidden2);
        let b3 = take(1);
        Self {
            user_emb,
            skill_emb,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            total: at,
        }
    }
}

/// Network parameters as a flat vector plus the shape they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    values: Vec<f64>,
}

/// Same shape as [`ModelParams`]; holds `∂loss/∂w`.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            values: vec![0.0; dims.num_params()],
            dims,
        }
    }

    /// Embeddings ~ U(−0.05, 0.05), dense weights ~ Glorot uniform, biases 0.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng::stream(seed, &[rng::TAG_INIT]);
        let mut p = Self::zeros(dims);
        let l = dims.layout();
        let e = EMBEDDING_INIT_BOUND;
        for v in &mut p.values[l.user_emb.start..l.skill_emb.end] {
            *v = rng.random_range(-e..e);
        }
        let dense = [
            (l.w1.clone(), dims.concat_width(), dims.hidden1),
            (l.w2.clone(), dims.hidden1, dims.hidden2),
            (l.w3.clone(), dims.hidden2, 1),
        ];
        for (range, fan_in, fan_out) in dense {
            let bound = glorot_bound(fan_in, fan_out);
            for v in &mut p.values[range] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn unflatten(values: Vec<f64>, dims: ModelDims) -> Result<Self> {
        let expected = dims.num_params();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn tensor(&self, range: &Range<usize>) -> &[f64] {
        &self.values[range.clone()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_congruent(&self, other: &ModelParams) -> Result<()> {
        if self.dims != other.dims || self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Squared L2 distance to `other`.
    pub fn distance_sq(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Serializes as `FEDREC01`, six little-endian u64 dims, a u64 length and
    /// the little-endian f64 values.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let d = &self.dims;
        for v in [
            d.num_users,
            d.num_skills,
            d.embedding_dim,
            d.hidden1,
            d.hidden2,
            d.num_continuous,
            self.values.len(),
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::malformed("checkpoint", "bad magic"));
        }
        let mut header = [0usize; 7];
        for h in &mut header {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *h = usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| Error::malformed("checkpoint", "header value overflows usize"))?;
        }
        let dims = ModelDims {
            num_users: header[0],
            num_skills: header[1],
            embedding_dim: header[2],
            hidden1: header[3],
            hidden2: header[4],
            num_continuous: header[5],
        };
        dims.validate()?;
        if header[6] != dims.num_params() {
            return Err(Error::malformed("checkpoint", "length does not match dims"));
        }
        let mut bytes = vec![0u8; header[6] * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::unflatten(values, dims)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDREC01";

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Column-oriented mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub user_idx: Vec<usize>,
    pub skill_idx: Vec<usize>,
    /// `len × num_continuous`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_examples<'a, I>(examples: I) -> Self
    where
        I: IntoIterator<Item = &'a StudentSkillExample>,
    {
        let mut b = Batch {
            user_idx: Vec::new(),
            skill_idx: Vec::new(),
            features: Vec::new(),
            labels: Vec::new(),
        };
        for e in examples {
            b.user_idx.push(e.user_idx);
            b.skill_idx.push(e.skill_idx);
            b.features.extend_from_slice(&e.continuous());
            b.labels.push(f64::from(e.label));
        }
        b
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self, dims: &ModelDims) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.user_idx.len() != n || self.skill_idx.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.user_idx.len().min(self.skill_idx.len()),
            });
        }
        if self.features.len() != n * dims.num_continuous {
            return Err(Error::LengthMismatch {
                expected: n * dims.num_continuous,
                actual: self.features.len(),
            });
        }
        let out_of_range = |what, idx: &[usize], bound| {
            idx.iter()
                .find(|&&i| i >= bound)
                .map(|&index| Error::IndexOutOfRange { what, index, bound })
        };
        if let Some(e) = out_of_range("user", &self.user_idx, dims.num_users) {
            return Err(e);
        }
        if let Some(e) = out_of_range("skill", &self.skill_idx, dims.num_skills) {
            return Err(e);
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `y = b + xᵀW` for `W` stored `in × out`.
fn dense(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    out.copy_from_slice(b);
    for (xi, row) in x.iter().zip(w.chunks_exact(b.len())) {
        if *xi != 0.0 {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }
}

/// Activations of one row kept for the backward pass.
struct Trace {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    prob: f64,
}

fn forward_row(p: &ModelParams, l: &Layout, batch: &Batch, row: usize) -> Trace {
    let d = &p.dims;
    let k = d.embedding_dim;
    let nc = d.num_continuous;
    let v = &p.values;
    let mut input = Vec::with_capacity(d.concat_width());
    let u = l.user_emb.start + batch.user_idx[row] * k;
    let s = l.skill_emb.start + batch.skill_idx[row] * k;
    input.extend_from_slice(&v[u..u + k]);
    input.extend_from_slice(&v[s..s + k]);
    input.extend_from_slice(&batch.features[row * nc..(row + 1) * nc]);

    let mut h1 = vec![0.0; d.hidden1];
    dense(&input, &v[l.w1.clone()], &v[l.b1.clone()], &mut h1);
    h1.iter_mut().for_each(|z| *z = z.max(0.0));
    let mut h2 = vec![0.0; d.hidden2];
    dense(&h1, &v[l.w2.clone()], &v[l.b2.clone()], &mut h2);
    h2.iter_mut().for_each(|z| *z = z.max(0.0));
    let mut z3 = [0.0];
    dense(&h2, &v[l.w3.clone()], &v[l.b3.clone()], &mut z3);
    Trace {
        input,
        h1,
        h2,
        prob: sigmoid(z3[0]),
    }
}

/// Per-row success probabilities.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<Vec<f64>> {
    batch.validate(&params.dims)?;
    let l = params.dims.layout();
    Ok((0..batch.len())
        .map(|r| forward_row(params, &l, batch, r).prob)
        .collect())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

fn bce_term(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: probs.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_term(p, y))
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Loss and gradient of `F(w) + (mu/2)·‖w − global‖²`, where `F` is the mean
/// BCE over the batch. The proximal gradient `mu·(w − global)` is applied to
/// every parameter, including embedding rows the batch does not touch.
pub fn backward(
    params: &ModelParams,
    batch: &Batch,
    mu: f64,
    global: Option<&ModelParams>,
) -> Result<(f64, Gradients)> {
    batch.validate(&params.dims)?;
    if mu < 0.0 || !mu.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mu must be finite and >= 0, got {mu}"
        )));
    }
    let global = match global {
        Some(g) => {
            params.check_congruent(g)?;
            Some(g)
        }
        None if mu > 0.0 => {
            return Err(Error::ShapeMismatch(
                "proximal term requires the global parameters".into(),
            ))
        }
        None => None,
    };

    let d = params.dims;
    let l = d.layout();
    let v = &params.values;
    let mut grads = ModelParams::zeros(d);
    let g = &mut grads.values;
    let n = batch.len() as f64;
    let (k, h1n, h2n) = (d.embedding_dim, d.hidden1, d.hidden2);
    let mut loss_sum = 0.0;

    let mut dh1 = vec![0.0; h1n];
    let mut dh2 = vec![0.0; h2n];
    let mut dinput = vec![0.0; d.concat_width()];
    for row in 0..batch.len() {
        let t = forward_row(params, &l, batch, row);
        let y = batch.labels[row];
        loss_sum += bce_term(t.prob, y);
        // Outside the clamp window the loss is flat in p.
        let clamped = t.prob < BCE_EPS || t.prob > 1.0 - BCE_EPS;
        let dz3 = if clamped { 0.0 } else { (t.prob - y) / n };
        if dz3 == 0.0 {
            continue;
        }

        g[l.b3.start] += dz3;
        for j in 0..h2n {
            g[l.w3.start + j] += t.h2[j] * dz3;
            dh2[j] = if t.h2[j] > 0.0 {
                v[l.w3.start + j] * dz3
            } else {
                0.0
            };
        }

        for j in 0..h2n {
            g[l.b2.start + j] += dh2[j];
        }
        dh1.iter_mut().for_each(|x| *x = 0.0);
        for (i, (d, &a)) in dh1.iter_mut().zip(&t.h1).enumerate() {
            let wrow = l.w2.start + i * h2n;
            let mut acc = 0.0;
            for j in 0..h2n {
                g[wrow + j] += a * dh2[j];
                acc += v[wrow + j] * dh2[j];
            }
            *d = if a > 0.0 { acc } else { 0.0 };
        }

        for j in 0..h1n {
            g[l.b1.start + j] += dh1[j];
        }
        for (i, &x) in t.input.iter().enumerate() {
            let wrow = l.w1.start + i * h1n;
            let mut acc = 0.0;
            for j in 0..h1n {
                g[wrow + j] += x * dh1[j];
                acc += v[wrow + j] * dh1[j];
            }
            dinput[i] = acc;
        }

        let u = l.user_emb.start + batch.user_idx[row] * k;
        let s = l.skill_emb.start + batch.skill_idx[row] * k;
        for c in 0..k {
            g[u + c] += dinput[c];
            g[s + c] += dinput[k + c];
        }
    }

    let mut loss = loss_sum / n;
    if let Some(global) = global {
        if mu > 0.0 {
            let mut penalty = 0.0;
            for ((gi, wi), wg) in g.iter_mut().zip(v).zip(&global.values) {
                let diff = wi - wg;
                *gi += mu * diff;
                penalty += diff * diff;
            }
            loss += 0.5 * mu * penalty;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let moments = match config.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => num_params,
        };
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        params.check_congruent(grads)?;
        let lr = self.config.learning_rate;
        self.step_count += 1;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.values.iter_mut().zip(&grads.values) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::ShapeMismatch(
                        "optimizer moments do not match parameters".into(),
                    ));
                }
                let OptimizerConfig {
                    beta1: b1,
                    beta2: b2,
                    epsilon: eps,
                    ..
                } = self.config;
                let t = self.step_count as i32;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                for (((w, g), m), v) in params
                    .values
                    .iter_mut()
                    .zip(&grads.values)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Client-side training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Proximal coefficient; 0 gives plain local ERM.
    pub mu: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            mu: 0.0,
        }
    }
}

/// Trains a copy of `global` on the client's training rows with a fresh
/// optimizer. Returns the local parameters and the number of rows used.
pub fn train_local(
    global: &ModelParams,
    client: &ClientDataset,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<(ModelParams, usize)> {
    if client.train.is_empty() {
        return Err(Error::EmptyClient(client.client_id));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut local = global.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, local.len());
    let mut order: Vec<usize> = (0..client.train.len()).collect();
    let mut rng = rng::stream(seed, &[rng::TAG_LOCAL, client.client_id as u64]);
    let anchor = (cfg.mu > 0.0).then_some(global);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_examples(chunk.iter().map(|&i| &client.train[i]));
            let (_, grads) = backward(&local, &batch, cfg.mu, anchor)?;
            opt.step(&mut local, &grads)?;
        }
    }
    Ok((local, client.train.len()))
}

/// Predicted class is positive when `p >= threshold`.
pub fn evaluate(
    params: &ModelParams,
    examples: &[StudentSkillExample],
    threshold: f64,
) -> Result<(f64, ConfusionCounts)> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let batch = Batch::from_examples(examples);
    let probs = forward(params, &batch)?;
    let loss = bce_loss(&probs, &batch.labels)?;
    let counts = ConfusionCounts::from_pairs(
        probs
            .iter()
            .zip(examples)
            .map(|(&p, e)| (p >= threshold, e.is_positive())),
    );
    Ok((loss, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            num_users: 1,
            num_skills: 1,
            embedding_dim: 1,
            hidden1: 1,
            hidden2: 1,
            num_continuous: 1,
        }
    }

    fn example(u: usize, s: usize, x: [f64; 3], label: u8) -> StudentSkillExample {
        StudentSkillExample {
            user_idx: u,
            skill_idx: s,
            user_mean_correct: x[0],
            user_interaction_count: x[1],
            skill_mean_correct: x[2],
            target_correct_rate: f64::from(label),
            label,
        }
    }

    #[test]
    fn flat_length_matches_shape_sum() {
        let d = ModelDims::new(4, 3);
        assert_eq!(d.concat_width(), 23);
        assert_eq!(
            d.num_params(),
            4 * 10 + 3 * 10 + 23 * 32 + 32 + 32 * 16 + 16 + 16 + 1
        );
        assert_eq!(d.num_params(), 1383);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let d = ModelDims::new(4, 3);
        assert!(matches!(
            ModelParams::unflatten(vec![0.0; 10], d),
            Err(Error::LengthMismatch {
                expected: 1383,
                actual: 10
            })
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let d = ModelDims::new(4, 3);
        let a = ModelParams::init(d, 9).unwrap();
        assert_eq!(a, ModelParams::init(d, 9).unwrap());
        assert_ne!(a, ModelParams::init(d, 10).unwrap());
        let l = d.layout();
        for r in [&l.b1, &l.b2, &l.b3] {
            assert!(a.tensor(r).iter().all(|&b| b == 0.0));
        }
        let bound = glorot_bound(23, 32);
        assert_abs_diff_eq!(bound, (6.0f64 / 55.0).sqrt());
        assert!(bound > 0.3302 && bound < 0.3303);
        assert!(a.tensor(&l.w1).iter().all(|w| w.abs() <= bound));
        assert!(a.tensor(&l.user_emb).iter().all(|w| w.abs() <= 0.05));
    }

    #[test]
    fn zero_network_outputs_half() {
        let p = ModelParams::zeros(ModelDims::new(2, 2));
        let ex = [
            example(0, 1, [0.3, 0.9, 0.1], 1),
            example(1, 0, [1.0, 0.0, 0.5], 0),
        ];
        let probs = forward(&p, &Batch::from_examples(&ex)).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_rejects_out_of_range_index() {
        let p = ModelParams::zeros(ModelDims::new(2, 2));
        let ex = [example(2, 0, [0.0; 3], 0)];
        assert!(matches!(
            forward(&p, &Batch::from_examples(&ex)),
            Err(Error::IndexOutOfRange {
                what: "user",
                index: 2,
                bound: 2
            })
        ));
    }

    #[test]
    fn forward_matches_hand_computation() {
        // Layout for the 1-wide network: [ue, se, w1(3), b1, w2, b2, w3, b3].
        let values = vec![0.5, -0.25, 0.8, 0.4, -1.2, 0.1, 1.5, -0.2, 2.0, 0.3];
        let p = ModelParams::unflatten(values, tiny_dims()).unwrap();
        let batch = Batch {
            user_idx: vec![0],
            skill_idx: vec![0],
            features: vec![0.6],
            labels: vec![1.0],
        };
        // z1 = 0.8*0.5 + 0.4*(-0.25) + (-1.2)*0.6 + 0.1 = -0.32 → relu 0
        // z2 = 1.5*0 - 0.2 = -0.2 → relu 0; z3 = 2*0 + 0.3
        let probs = forward(&p, &batch).unwrap();
        assert_abs_diff_eq!(probs[0], 1.0 / (1.0 + (-0.3f64).exp()), epsilon = 1e-12);

        let values = vec![0.5, -0.25, 0.8, 0.4, 1.2, 0.1, 1.5, -0.2, 2.0, 0.3];
        let p = ModelParams::unflatten(values, tiny_dims()).unwrap();
        let z1: f64 = 0.8 * 0.5 + 0.4 * -0.25 + 1.2 * 0.6 + 0.1;
        let z2 = 1.5 * z1 - 0.2;
        let z3 = 2.0 * z2 + 0.3;
        let probs = forward(&p, &batch).unwrap();
        assert_abs_diff_eq!(probs[0], 1.0 / (1.0 + (-z3).exp()), epsilon = 1e-12);
    }

    #[test]
    fn bce_examples() {
        assert_abs_diff_eq!(
            bce_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let perfect = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(perfect <= -(1.0 - 1e-7f64).ln() + 1e-18);
        let l = bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, 0.5 * (-(0.9f64).ln() - (0.8f64).ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.1643, epsilon = 1e-4);
        assert!(matches!(
            bce_loss(&[0.5], &[1.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn small_batch() -> Batch {
        Batch::from_examples(&[
            example(0, 1, [0.2, 0.4, 0.9], 1),
            example(1, 0, [0.7, 0.1, 0.3], 0),
            example(1, 1, [0.5, 0.5, 0.5], 1),
        ])
    }

    #[test]
    fn proximal_term_vanishes_at_anchor() {
        let p = ModelParams::init(ModelDims::new(2, 2), 3).unwrap();
        let b = small_batch();
        let (l0, g0) = backward(&p, &b, 0.0, None).unwrap();
        let (l1, g1) = backward(&p, &b, 5.0, Some(&p)).unwrap();
        assert_eq!(g0, g1);
        assert_eq!(l0, l1);
    }

    #[test]
    fn proximal_requires_global() {
        let p = ModelParams::init(ModelDims::new(2, 2), 3).unwrap();
        assert!(matches!(
            backward(&p, &small_batch(), 0.5, None),
            Err(Error::ShapeMismatch(_))
        ));
        let other = ModelParams::init(ModelDims::new(3, 2), 3).unwrap();
        assert!(backward(&p, &small_batch(), 0.5, Some(&other)).is_err());
    }

    #[test]
    fn untouched_embedding_rows_get_only_proximal_gradient() {
        let d = ModelDims::new(3, 2);
        let p = ModelParams::init(d, 1).unwrap();
        let g = ModelParams::init(d, 2).unwrap();
        let b = small_batch(); // user 2 absent
        let (_, g0) = backward(&p, &b, 0.0, None).unwrap();
        let (_, g1) = backward(&p, &b, 0.5, Some(&g)).unwrap();
        let l = d.layout();
        let row = l.user_emb.start + 2 * d.embedding_dim..l.user_emb.start + 3 * d.embedding_dim;
        for i in row {
            assert_eq!(g0.as_slice()[i], 0.0);
            assert_eq!(g1.as_slice()[i], 0.5 * (p.as_slice()[i] - g.as_slice()[i]));
        }
    }

    fn scalar(v: f64) -> ModelParams {
        let mut p = ModelParams::zeros(tiny_dims());
        p.values[0] = v;
        p
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut w = scalar(1.0);
        let g = scalar(2.0);
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.1), w.len());
        opt.step(&mut w, &g).unwrap();
        assert_abs_diff_eq!(w.values[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn adam_first_step() {
        let mut w = scalar(0.25);
        let g = scalar(1.0);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), w.len());
        opt.step(&mut w, &g).unwrap();
        // m̂ = 1, v̂ = 1 at t = 1.
        assert_abs_diff_eq!(w.values[0], 0.25 - 0.001 / (1.0 + 1e-8), epsilon = 1e-15);
        assert_abs_diff_eq!(0.25 - w.values[0], 0.000999999, epsilon = 1e-9);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut w = scalar(0.25);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), w.len());
        opt.step(&mut w, &scalar(1.0)).unwrap();
        let (w1, m1, v1) = (w.clone(), opt.first_moment[0], opt.second_moment[0]);
        let mut sgd_w = w.clone();
        let mut sgd = OptimizerState::new(OptimizerConfig::sgd(0.1), w.len());
        sgd.step(&mut sgd_w, &ModelParams::zeros(tiny_dims()))
            .unwrap();
        assert_eq!(sgd_w, w1);
        opt.step(&mut w, &ModelParams::zeros(tiny_dims())).unwrap();
        assert_eq!(opt.first_moment[0], 0.9 * m1);
        assert_eq!(opt.second_moment[0], 0.999 * v1);
        assert_eq!(opt.step_count, 2);
    }

    fn client() -> ClientDataset {
        let rows: Vec<_> = (0..7)
            .map(|i| example(0, i % 2, [i as f64 / 7.0, 0.5, 0.3], (i % 3 == 0) as u8))
            .collect();
        ClientDataset {
            client_id: 0,
            train: rows,
            test: vec![],
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let g = ModelParams::init(ModelDims::new(1, 2), 5).unwrap();
        let cfg = LocalTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (local, n) = train_local(&g, &client(), &cfg, 1).unwrap();
        assert_eq!(local, g);
        assert_eq!(n, 7);
    }

    #[test]
    fn local_training_is_deterministic() {
        let g = ModelParams::init(ModelDims::new(1, 2), 5).unwrap();
        let cfg = LocalTrainConfig {
            batch_size: 3,
            ..Default::default()
        };
        let a = train_local(&g, &client(), &cfg, 11).unwrap();
        assert_eq!(a, train_local(&g, &client(), &cfg, 11).unwrap());
        assert_ne!(a.0, g);
    }

    #[test]
    fn strong_proximal_term_limits_drift() {
        let g = ModelParams::init(ModelDims::new(1, 2), 5).unwrap();
        let free_cfg = LocalTrainConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        let tied_cfg = LocalTrainConfig {
            mu: 1e6,
            ..free_cfg
        };
        let (free, _) = train_local(&g, &client(), &free_cfg, 2).unwrap();
        let (tied, _) = train_local(&g, &client(), &tied_cfg, 2).unwrap();
        assert!(tied.distance_sq(&g) < free.distance_sq(&g));
    }

    #[test]
    fn empty_client_rejected() {
        let g = ModelParams::init(ModelDims::new(1, 2), 5).unwrap();
        let c = ClientDataset {
            client_id: 4,
            train: vec![],
            test: vec![],
        };
        assert!(matches!(
            train_local(&g, &c, &LocalTrainConfig::default(), 0),
            Err(Error::EmptyClient(4))
        ));
    }

    #[test]
    fn evaluate_threshold_and_tally() {
        let p = ModelParams::zeros(ModelDims::new(1, 1));
        // Every prediction is exactly 0.5 and therefore positive.
        let ex = [
            example(0, 0, [0.0; 3], 1),
            example(0, 0, [0.0; 3], 0),
            example(0, 0, [0.0; 3], 1),
        ];
        let (loss, c) = evaluate(&p, &ex, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts::new(2, 1, 0, 0));
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(matches!(evaluate(&p, &[], 0.5), Err(Error::EmptyDataset)));
    }

    #[test]
    fn checkpoint_round_trip_and_magic() {
        let p = ModelParams::init(ModelDims::new(3, 2), 8).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"FEDREC01");
        assert_eq!(buf.len(), 8 + 7 * 8 + p.len() * 8);
        assert_eq!(ModelParams::read_checkpoint(buf.as_slice()).unwrap(), p);
        buf[0] = b'X';
        assert!(ModelParams::read_checkpoint(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in any::<u64>(), users in 1usize..5, skills in 1usize..5) {
            let p = ModelParams::init(ModelDims::new(users, skills), seed).unwrap();
            let back = ModelParams::unflatten(p.flatten(), *p.dims()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn outputs_in_open_unit_interval(seed in any::<u64>(), x in prop::array::uniform3(-5.0f64..5.0)) {
            let p = ModelParams::init(ModelDims::new(2, 2), seed).unwrap();
            let b = Batch::from_examples(&[example(1, 0, x, 1)]);
            let probs = forward(&p, &b).unwrap();
            prop_assert!(probs[0] > 0.0 && probs[0] < 1.0);
            let (loss, grads) = backward(&p, &b, 0.0, None).unwrap();
            prop_assert!(loss.is_finite());
            prop_assert!(grads.is_finite());
        }
    }
}

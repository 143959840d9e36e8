//! Federated simulation: client selection, local training, weighted
//! parameter averaging and per-round global evaluation.
//!
//! FedAvg and FedProx share the server-side aggregation; FedProx differs only
//! in the proximal coefficient each client adds to its local objective.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionCounts, MetricSummary, RoundMetrics};
use crate::model::{
    self, LocalTrainConfig, ModelDims, ModelParams, OptimizerConfig, OptimizerKind,
};
use crate::rng;

pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    FedAvg,
    FedProx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub mu: f64,
    pub rounds: usize,
    pub fraction_fit: f64,
    pub min_fit_clients: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::FedProx,
            mu: 0.5,
            rounds: 100,
            fraction_fit: 0.1,
            min_fit_clients: 50,
            local_epochs: 5,
            learning_rate: 0.001,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            seed: 42,
        }
    }
}

impl StrategyConfig {
    pub fn fedavg() -> Self {
        Self {
            kind: StrategyKind::FedAvg,
            mu: 0.0,
            ..Self::default()
        }
    }

    pub fn fedprox(mu: f64) -> Self {
        Self {
            kind: StrategyKind::FedProx,
            mu,
            ..Self::default()
        }
    }

    /// File-name stem, e.g. `fedavg` or `fedprox_mu0.5`.
    pub fn run_name(&self) -> String {
        match self.kind {
            StrategyKind::FedAvg => "fedavg".into(),
            StrategyKind::FedProx => format!("fedprox_mu{}", self.mu),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.mu.is_finite() || self.mu < 0.0 {
            return bad(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        if self.kind == StrategyKind::FedAvg && self.mu != 0.0 {
            return bad("fedavg requires mu = 0".into());
        }
        if !(self.fraction_fit > 0.0 && self.fraction_fit <= 1.0) {
            return bad(format!(
                "fraction_fit must lie in (0, 1], got {}",
                self.fraction_fit
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        Ok(())
    }

    pub fn local_config(&self) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            optimizer: OptimizerConfig {
                kind: self.optimizer,
                learning_rate: self.learning_rate,
                ..OptimizerConfig::default()
            },
            mu: self.mu,
        }
    }
}

/// Parameters returned by one client after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub num_examples: usize,
}

/// Number of clients to sample from `eligible`: `max(ceil(fraction·K), min)`
/// clamped to `K`.
pub fn sample_size(eligible: usize, fraction_fit: f64, min_fit_clients: usize) -> usize {
    let by_fraction = (fraction_fit * eligible as f64 - 1e-9).ceil().max(0.0) as usize;
    by_fraction.max(min_fit_clients).min(eligible)
}

/// Uniform sample without replacement among clients that have training data.
/// Returns positions into `clients`, ascending.
pub fn select_clients(
    clients: &[ClientDataset],
    fraction_fit: f64,
    min_fit_clients: usize,
    seed: u64,
    round: usize,
) -> Result<Vec<usize>> {
    if clients.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eligible: Vec<usize> = (0..clients.len())
        .filter(|&i| !clients[i].train.is_empty())
        .collect();
    if eligible.len() < min_fit_clients || eligible.is_empty() {
        return Err(Error::NotEnoughClients {
            eligible: eligible.len(),
            required: min_fit_clients.max(1),
        });
    }
    let k = sample_size(eligible.len(), fraction_fit, min_fit_clients);
    let mut rng = rng::stream(seed, &[rng::TAG_SELECT, round as u64]);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// `Σ (n_k / N)·w_k` with `N = Σ n_k`, summed in ascending `client_id` order
/// so the result does not depend on arrival order.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::EmptyUpdates)?;
    for u in updates {
        first.params.check_congruent(&u.params)?;
        if u.num_examples == 0 {
            return Err(Error::InvalidConfig(format!(
                "client {} reported zero examples",
                u.client_id
            )));
        }
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| (u.client_id, u.num_examples));
    let total: f64 = ordered.iter().map(|u| u.num_examples as f64).sum();

    let len = first.params.len();
    let mut out = vec![0.0; len];
    let mut lo = vec![f64::INFINITY; len];
    let mut hi = vec![f64::NEG_INFINITY; len];
    for u in &ordered {
        let weight = u.num_examples as f64 / total;
        for (i, &w) in u.params.as_slice().iter().enumerate() {
            out[i] += weight * w;
            lo[i] = lo[i].min(w);
            hi[i] = hi[i].max(w);
        }
    }
    // Rounding can step one ulp outside the hull of the inputs.
    for ((o, l), h) in out.iter_mut().zip(&lo).zip(&hi) {
        *o = o.clamp(*l, *h);
    }
    ModelParams::unflatten(out, *first.params.dims())
}

/// Global metrics of one evaluation pass plus the per-client breakdown used
/// for the secondary weighted-F1 column.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub loss: f64,
    /// Test-size-weighted mean of per-client F1.
    pub weighted_f1: f64,
    pub per_client: Vec<(usize, ConfusionCounts)>,
}

/// Evaluates `params` on every client with a non-empty test split. Counts are
/// pooled (micro-averaged); loss is the test-size-weighted mean.
pub fn evaluate_clients(params: &ModelParams, clients: &[ClientDataset]) -> Result<Evaluation> {
    let per_client: Vec<(usize, f64, ConfusionCounts)> = clients
        .par_iter()
        .filter(|c| !c.test.is_empty())
        .map(|c| {
            model::evaluate(params, &c.test, DECISION_THRESHOLD).map(|(l, k)| (c.client_id, l, k))
        })
        .collect::<Result<_>>()?;
    if per_client.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts: ConfusionCounts = per_client.iter().map(|&(_, _, c)| c).sum();
    let loss = metrics::weighted_metric(
        &per_client
            .iter()
            .map(|&(_, l, c)| (l, c.total() as f64))
            .collect::<Vec<_>>(),
    )?;
    let weighted_f1 = metrics::weighted_metric(
        &per_client
            .iter()
            .map(|&(_, _, c)| (c.f1(), c.total() as f64))
            .collect::<Vec<_>>(),
    )?;
    Ok(Evaluation {
        counts,
        loss,
        weighted_f1,
        per_client: per_client.into_iter().map(|(id, _, c)| (id, c)).collect(),
    })
}

/// Metrics recorded after each federated round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedRoundMetrics {
    #[serde(flatten)]
    pub metrics: RoundMetrics,
    pub weighted_f1: f64,
}

/// One server round: select, broadcast, train locally, aggregate, evaluate.
pub fn run_round(
    global: &ModelParams,
    clients: &[ClientDataset],
    cfg: &StrategyConfig,
    round: usize,
) -> Result<(ModelParams, FedRoundMetrics)> {
    let selected = select_clients(
        clients,
        cfg.fraction_fit,
        cfg.min_fit_clients,
        cfg.seed,
        round,
    )?;
    let local_cfg = cfg.local_config();
    let round_seed = rng::derive_seed(cfg.seed, &[round as u64]);
    let updates: Vec<ClientUpdate> = selected
        .par_iter()
        .map(|&i| {
            let client = &clients[i];
            model::train_local(global, client, &local_cfg, round_seed).map(|(params, n)| {
                ClientUpdate {
                    client_id: client.client_id,
                    params,
                    num_examples: n,
                }
            })
        })
        .collect::<Result<_>>()?;
    let next = aggregate(&updates)?;
    let eval = evaluate_clients(&next, clients)?;
    let metrics = RoundMetrics::from_counts(round, &eval.counts, eval.loss, updates.len())?;
    Ok((
        next,
        FedRoundMetrics {
            metrics,
            weighted_f1: eval.weighted_f1,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config: StrategyConfig,
    pub rounds: Vec<FedRoundMetrics>,
    /// `None` when no rounds were run.
    pub f1_summary: Option<MetricSummary>,
}

impl RunHistory {
    pub fn new(config: StrategyConfig, rounds: Vec<FedRoundMetrics>) -> Self {
        let series: Vec<(usize, f64)> = rounds
            .iter()
            .map(|r| (r.metrics.round, r.metrics.f1))
            .collect();
        Self {
            config,
            f1_summary: metrics::summarize(&series).ok(),
            rounds,
        }
    }

    pub fn round_metrics(&self) -> Vec<RoundMetrics> {
        self.rounds.iter().map(|r| r.metrics).collect()
    }
}

/// Runs `cfg.rounds` rounds from a freshly initialized global model, calling
/// `on_round` after each one. Returns the history and final global model.
pub fn run_simulation_with<F>(
    clients: &[ClientDataset],
    dims: ModelDims,
    cfg: &StrategyConfig,
    mut on_round: F,
) -> Result<(RunHistory, ModelParams)>
where
    F: FnMut(&FedRoundMetrics) -> Result<()>,
{
    cfg.validate()?;
    let mut global = ModelParams::init(dims, cfg.seed)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let (next, m) = run_round(&global, clients, cfg, round)?;
        log::debug!(
            "{} round {round}: f1={:.4} loss={:.4}",
            cfg.run_name(),
            m.metrics.f1,
            m.metrics.loss
        );
        on_round(&m)?;
        rounds.push(m);
        global = next;
    }
    Ok((RunHistory::new(cfg.clone(), rounds), global))
}

pub fn run_simulation(
    clients: &[ClientDataset],
    dims: ModelDims,
    cfg: &StrategyConfig,
) -> Result<(RunHistory, ModelParams)> {
    run_simulation_with(clients, dims, cfg, |_| Ok(()))
}

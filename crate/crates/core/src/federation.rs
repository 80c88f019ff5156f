//! The communication-round loop.
//!
//! Each round: (1) send every participant its starting model, (2) train
//! locally in parallel, (3) aggregate with the weights in force at the start
//! of the round, (4) score last-layer deltas against the aggregated delta,
//! (5) smooth the scores with momentum and (6) refresh the importance
//! weights used by the next round.

use rayon::prelude::*;

use crate::contribution::{cgsv, cssv, importance, ContributionMatrix, EmaState, ImportanceWeights};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, pearson, Correlation};
use crate::model::{
    extract_last_layer, gaussian_values, init_params, loss_and_grad, sgd_step, weighted_sum, Batch,
    ModelSpec, ParamVector,
};
use crate::rng::{self, stream};
use rand::seq::SliceRandom;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    FedAvgUniform,
    FedAvgSizeWeighted,
    /// Contribution-weighted aggregation, global broadcast.
    ShapFedWA,
    /// Contribution-weighted aggregation plus personalised broadcast.
    ShapFed,
    /// Aggregation weighted by full-vector cosine scores.
    CgsvWeighted,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedAvgUniform => "fedavg",
            StrategyKind::FedAvgSizeWeighted => "fedavg_sized",
            StrategyKind::ShapFedWA => "shapfed_wa",
            StrategyKind::ShapFed => "shapfed",
            StrategyKind::CgsvWeighted => "cgsv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            StrategyKind::FedAvgUniform,
            StrategyKind::FedAvgSizeWeighted,
            StrategyKind::ShapFedWA,
            StrategyKind::ShapFed,
            StrategyKind::CgsvWeighted,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn personalizes(self) -> bool {
        self == StrategyKind::ShapFed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub mu: f64,
    pub eta: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    /// Aggregate with uniform weights regardless of the contribution scores.
    pub force_uniform: bool,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            mu: 0.9,
            eta: 0.01,
            local_epochs: 1,
            batch_size: 32,
            rounds: 50,
            force_uniform: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::config(format!("mu must lie in [0, 1), got {}", self.mu)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.local_epochs == 0 || self.batch_size == 0 || self.rounds == 0 {
            return Err(Error::config(
                "local_epochs, batch_size and rounds must be at least 1",
            ));
        }
        Ok(())
    }
}

/// How a participant produces its update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Behavior {
    Honest,
    /// Skips training and returns `received + N(0, std^2)`.
    GaussianNoise {
        std: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub participant_id: usize,
    pub final_params: ParamVector,
    /// `final_params - received`.
    pub delta: ParamVector,
    pub sample_count: usize,
}

/// Mini-batch SGD for `epochs` passes over `shard`, reshuffled every epoch.
/// The last short batch of an epoch is kept.
pub fn local_train(
    participant_id: usize,
    start: &ParamVector,
    shard: &Dataset,
    eta: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ClientUpdate> {
    if shard.is_empty() {
        return Err(Error::config(format!(
            "participant {participant_id} has no training data"
        )));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let spec = *start.spec();
    let mut rng = rng::rng_from(seed);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut w = start.clone();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = Batch::new(
                shard.features().select_rows(chunk),
                chunk.iter().map(|&i| shard.labels()[i]).collect(),
            )?;
            let (_, grad) = loss_and_grad(&w, &spec, &batch)?;
            w = sgd_step(&w, &grad, eta)?;
        }
    }
    let delta = w.sub(start)?;
    Ok(ClientUpdate {
        participant_id,
        final_params: w,
        delta,
        sample_count: shard.len(),
    })
}

fn noise_update(
    participant_id: usize,
    start: &ParamVector,
    std: f64,
    sample_count: usize,
    seed: u64,
) -> Result<ClientUpdate> {
    let mut rng = rng::rng_from(seed);
    let delta = ParamVector::from_values(*start.spec(), gaussian_values(&mut rng, start.len(), std))?;
    Ok(ClientUpdate {
        participant_id,
        final_params: start.add(&delta)?,
        delta,
        sample_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FedAvgMode {
    Uniform,
    SizeWeighted,
}

fn params_of(updates: &[ClientUpdate]) -> Vec<&ParamVector> {
    updates.iter().map(|u| &u.final_params).collect()
}

/// Plain or sample-count-weighted average of the participants' models.
pub fn aggregate_fedavg(updates: &[ClientUpdate], mode: FedAvgMode) -> Result<ParamVector> {
    weighted_sum(&params_of(updates), &fedavg_weights(updates, mode)?)
}

fn fedavg_weights(updates: &[ClientUpdate], mode: FedAvgMode) -> Result<Vec<f64>> {
    let n = updates.len();
    if n == 0 {
        return Err(Error::input("no updates to aggregate"));
    }
    Ok(match mode {
        FedAvgMode::Uniform => vec![1.0 / n as f64; n],
        FedAvgMode::SizeWeighted => {
            let total: usize = updates.iter().map(|u| u.sample_count).sum();
            if total == 0 {
                return Err(Error::input("size-weighted average with zero samples"));
            }
            updates
                .iter()
                .map(|u| u.sample_count as f64 / total as f64)
                .collect()
        }
    })
}

/// Convex combination of the participants' models by `weights.normalized`.
pub fn aggregate_weighted(updates: &[ClientUpdate], weights: &ImportanceWeights) -> Result<ParamVector> {
    if weights.len() != updates.len() {
        return Err(Error::shape(format!(
            "{} weights for {} updates",
            weights.len(),
            updates.len()
        )));
    }
    weighted_sum(&params_of(updates), &weights.normalized)
}

/// `gamma * global + (1 - gamma) * local`.
pub fn personalize(global: &ParamVector, local: &ParamVector, gamma: f64) -> Result<ParamVector> {
    global.check_same_layout(local)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::input(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    // Exact endpoints, including the sign of zero.
    if gamma == 1.0 {
        return Ok(global.clone());
    }
    if gamma == 0.0 {
        return Ok(local.clone());
    }
    let values = global
        .values()
        .iter()
        .zip(local.values())
        .map(|(s, l)| gamma * s + (1.0 - gamma) * l)
        .collect();
    ParamVector::from_values(*global.spec(), values)
}

/// Everything the rounds share and never modify.
pub struct Experiment {
    pub spec: ModelSpec,
    pub shards: Vec<Dataset>,
    pub valset: Dataset,
    pub behaviors: Vec<Behavior>,
    pub seed: u64,
    /// Worker threads for local training; 0 lets rayon decide.
    pub workers: usize,
}

impl Experiment {
    pub fn participants(&self) -> usize {
        self.shards.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shards.is_empty() {
            return Err(Error::config("need at least one participant"));
        }
        if self.behaviors.len() != self.shards.len() {
            return Err(Error::config(format!(
                "{} behaviours for {} participants",
                self.behaviors.len(),
                self.shards.len()
            )));
        }
        for (i, s) in self.shards.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::config(format!("participant {i} received no samples")));
            }
            if s.dim() != self.spec.input_dim || s.num_classes() != self.spec.num_classes {
                return Err(Error::config(format!(
                    "participant {i} data does not match the model shape"
                )));
            }
        }
        if self.valset.is_empty() {
            return Err(Error::config("validation set is empty"));
        }
        Ok(())
    }

    pub fn initial_params(&self) -> ParamVector {
        init_params(self.spec, rng::derive(self.seed, &[stream::INIT]))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))
    }
}

/// Server state between rounds.
#[derive(Clone, Debug)]
pub struct RoundState {
    /// Rounds completed so far.
    pub round: usize,
    pub global: ParamVector,
    /// Each participant's model after its most recent local training.
    pub local: Vec<Option<ParamVector>>,
    pub ema: EmaState,
    /// Momentum-smoothed full-vector cosine scores, as an `n x 1` matrix.
    pub cgsv_ema: EmaState,
    /// Weights the next round aggregates with.
    pub weights: ImportanceWeights,
    pub last_updates: Vec<ClientUpdate>,
}

impl RoundState {
    pub fn new(global: ParamVector, participants: usize, mu: f64) -> Result<Self> {
        Ok(Self {
            round: 0,
            global,
            local: vec![None; participants],
            ema: EmaState::new(mu)?,
            cgsv_ema: EmaState::new(mu)?,
            weights: ImportanceWeights::uniform(participants),
            last_updates: Vec::new(),
        })
    }

    /// Model participant `i` starts the next round from.
    pub fn outgoing(&self, i: usize, kind: StrategyKind) -> Result<ParamVector> {
        match (&self.local[i], kind.personalizes() && self.round > 0) {
            (Some(local), true) => personalize(&self.global, local, self.weights.raw[i]),
            _ => Ok(self.global.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub gamma: Vec<f64>,
    pub gamma_normalized: Vec<f64>,
    /// Smoothed per-class contributions, `n x M`.
    pub contributions: Vec<Vec<f64>>,
    /// Smoothed full-vector cosine scores.
    pub cgsv_scores: Vec<f64>,
    pub global_balanced_acc: f64,
    pub global_per_class_acc: Vec<f64>,
    /// Balanced accuracy of the model each participant would receive next.
    pub participant_balanced_acc: Vec<f64>,
}

/// Executes one round and returns the new state with its log record.
pub fn run_round(
    state: &RoundState,
    strategy: &StrategyConfig,
    exp: &Experiment,
) -> Result<(RoundState, RoundRecord)> {
    let n = exp.participants();
    let t = state.round + 1;
    let spec = exp.spec;

    let starts = (0..n)
        .map(|i| state.outgoing(i, strategy.kind))
        .collect::<Result<Vec<_>>>()?;

    let updates: Vec<ClientUpdate> = (0..n)
        .into_par_iter()
        .map(|i| {
            let shard = &exp.shards[i];
            match exp.behaviors[i] {
                Behavior::Honest => local_train(
                    i,
                    &starts[i],
                    shard,
                    strategy.eta,
                    strategy.local_epochs,
                    strategy.batch_size,
                    rng::derive(exp.seed, &[stream::LOCAL, t as u64, i as u64]),
                ),
                Behavior::GaussianNoise { std } => noise_update(
                    i,
                    &starts[i],
                    std,
                    shard.len(),
                    rng::derive(exp.seed, &[stream::NOISE, t as u64, i as u64]),
                ),
            }
        })
        .collect::<Result<_>>()?;

    let agg_weights = match strategy.kind {
        StrategyKind::FedAvgUniform => fedavg_weights(&updates, FedAvgMode::Uniform)?,
        StrategyKind::FedAvgSizeWeighted => fedavg_weights(&updates, FedAvgMode::SizeWeighted)?,
        StrategyKind::ShapFedWA | StrategyKind::ShapFed | StrategyKind::CgsvWeighted => {
            if strategy.force_uniform {
                fedavg_weights(&updates, FedAvgMode::Uniform)?
            } else {
                state.weights.normalized.clone()
            }
        }
    };
    let global = weighted_sum(&params_of(&updates), &agg_weights)?;

    let deltas: Vec<&ParamVector> = updates.iter().map(|u| &u.delta).collect();
    let aggregate_delta = weighted_sum(&deltas, &agg_weights)?;
    let heads = deltas
        .iter()
        .map(|d| extract_last_layer(d, &spec))
        .collect::<Result<Vec<_>>>()?;
    let fresh = cssv(&heads, &extract_last_layer(&aggregate_delta, &spec)?)?;
    let ema = state.ema.update(&fresh)?;

    let fresh_cgsv = cgsv(
        &updates.iter().map(|u| u.delta.clone()).collect::<Vec<_>>(),
        &aggregate_delta,
    )?;
    let cgsv_matrix =
        ContributionMatrix::from_rows(&fresh_cgsv.iter().map(|&s| vec![s]).collect::<Vec<_>>())?;
    let cgsv_ema = state.cgsv_ema.update(&cgsv_matrix)?;

    let smoothed = ema.smoothed().expect("updated at least once").clone();
    let cgsv_smoothed = cgsv_ema.smoothed().expect("updated at least once").clone();
    let weights = match strategy.kind {
        StrategyKind::CgsvWeighted => importance(&cgsv_smoothed),
        _ => importance(&smoothed),
    };

    let next = RoundState {
        round: t,
        global,
        local: updates.iter().map(|u| Some(u.final_params.clone())).collect(),
        ema,
        cgsv_ema,
        weights,
        last_updates: updates,
    };

    let global_report = evaluate(&next.global, &spec, &exp.valset)?;
    let participant_balanced_acc = (0..n)
        .into_par_iter()
        .map(|i| {
            let model = next.outgoing(i, strategy.kind)?;
            Ok(evaluate(&model, &spec, &exp.valset)?.balanced_acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let record = RoundRecord {
        t,
        gamma: next.weights.raw.clone(),
        gamma_normalized: next.weights.normalized.clone(),
        contributions: smoothed.rows(),
        cgsv_scores: (0..n).map(|i| cgsv_smoothed.get(i, 0)).collect(),
        global_balanced_acc: global_report.balanced_acc,
        global_per_class_acc: global_report.per_class_acc,
        participant_balanced_acc,
    };
    Ok((next, record))
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub strategy: StrategyConfig,
    pub records: Vec<RoundRecord>,
    /// Balanced accuracy of each participant trained alone for the same
    /// number of local epochs.
    pub standalone_acc: Vec<f64>,
    /// Correlation between standalone and final delivered accuracies.
    pub fairness: Correlation,
    pub final_state: RoundState,
}

impl RunLog {
    pub fn last(&self) -> &RoundRecord {
        self.records.last().expect("a run has at least one round")
    }
}

/// Models trained on local data only, with the federated run's epoch budget.
pub fn standalone_accuracies(exp: &Experiment, strategy: &StrategyConfig) -> Result<Vec<f64>> {
    let init = exp.initial_params();
    let epochs = strategy.rounds * strategy.local_epochs;
    exp.pool()?.install(|| {
        (0..exp.participants())
            .into_par_iter()
            .map(|i| {
                let u = local_train(
                    i,
                    &init,
                    &exp.shards[i],
                    strategy.eta,
                    epochs,
                    strategy.batch_size,
                    rng::derive(exp.seed, &[stream::STANDALONE, i as u64]),
                )?;
                Ok(evaluate(&u.final_params, &exp.spec, &exp.valset)?.balanced_acc)
            })
            .collect()
    })
}

/// Runs all rounds of `strategy` plus the standalone baselines.
pub fn run_experiment(exp: &Experiment, strategy: &StrategyConfig) -> Result<RunLog> {
    strategy.validate()?;
    exp.validate()?;
    let pool = exp.pool()?;
    let mut state = RoundState::new(exp.initial_params(), exp.participants(), strategy.mu)?;
    let mut records = Vec::with_capacity(strategy.rounds);
    for _ in 0..strategy.rounds {
        let (next, record) = pool.install(|| run_round(&state, strategy, exp))?;
        state = next;
        records.push(record);
    }
    let standalone_acc = standalone_accuracies(exp, strategy)?;
    let delivered = &records.last().expect("rounds >= 1").participant_balanced_acc;
    let fairness = if exp.participants() >= 2 {
        pearson(&standalone_acc, delivered)?
    } else {
        Correlation {
            r: 0.0,
            degenerate: true,
        }
    };
    Ok(RunLog {
        strategy: strategy.clone(),
        records,
        standalone_acc,
        fairness,
        final_state: state,
    })
}

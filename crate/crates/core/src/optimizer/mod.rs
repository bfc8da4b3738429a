//! Ask/tell multi-objective optimizer.
//!
//! Two strategies share one trial ledger:
//! * `Mobo`: scalarized expected improvement over GP surrogates, each batch
//!   member drawing its own Chebyshev weight vector.
//! * `Mogo`: NSGA-II generations of `batch_size` individuals.
//!
//! Every random decision is drawn from a stream keyed by the experiment seed
//! and the trial id (or tell count for model fits), so the proposal sequence
//! is a pure function of the seed and the order of tells.

pub mod acquisition;
pub mod gp;
mod lbfgs;
pub mod nsga2;
pub mod qmc;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pareto::{dominates, pareto_filter};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::space::{DesignPoint, DesignSpace};
use acquisition::{
    maximize_acquisition, sample_simplex, scalarize, AcquisitionSearch, Normalization,
    ScalarizedModel,
};
use gp::{fit_gp, refine_gp, GaussianProcess, GpFitConfig, GpHyperparams, Standardizer};
use nsga2::{environmental_selection, make_offspring, GeneticParams};
use qmc::ScrambledHalton;

/// Refit after every tell up to this many tells...
pub const REFIT_EVERY_TELL_UNTIL: usize = 50;
/// ...then every this many.
pub const REFIT_INTERVAL: usize = 5;
/// Upper bound on the default initialization count.
pub const MAX_DEFAULT_INIT: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("proposal budget exhausted: requested {requested}, remaining {remaining}")]
    BudgetExhausted { requested: usize, remaining: usize },
    #[error("unknown trial id {0}")]
    UnknownTrial(u64),
    #[error("trial {0} already finalized with a different outcome")]
    ConflictingTell(u64),
    #[error("invalid outcome for trial {trial_id}: {reason}")]
    InvalidOutcome { trial_id: u64, reason: String },
    #[error("restored proposal has trial id {got}, expected {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error(transparent)]
    Space(#[from] crate::space::SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Mobo,
    Mogo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    #[default]
    Synchronous,
    Asynchronous,
}

fn default_batch() -> usize {
    1
}
fn default_rho() -> f64 {
    0.05
}
fn default_restarts() -> usize {
    16
}
fn default_probes() -> usize {
    1024
}
fn default_gp_iterations() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Quasi-random initial proposals; defaults to `min(2n, 32)`.
    #[serde(default)]
    pub init_count: Option<usize>,
    pub max_trials: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_rho")]
    pub scalarization_rho: f64,
    #[serde(default = "default_restarts")]
    pub acquisition_restarts: usize,
    #[serde(default)]
    pub generation_mode: GenerationMode,
    #[serde(default = "default_probes")]
    pub acquisition_probes: usize,
    #[serde(default = "default_gp_iterations")]
    pub gp_max_iterations: usize,
}

impl OptimizerConfig {
    pub fn new(strategy: Strategy, max_trials: usize, rng_seed: u64) -> Self {
        Self {
            strategy,
            batch_size: default_batch(),
            init_count: None,
            max_trials,
            rng_seed,
            scalarization_rho: default_rho(),
            acquisition_restarts: default_restarts(),
            generation_mode: GenerationMode::Synchronous,
            acquisition_probes: default_probes(),
            gp_max_iterations: default_gp_iterations(),
        }
    }

    pub fn resolved_init_count(&self, dim: usize) -> usize {
        self.init_count.unwrap_or_else(|| (2 * dim).min(MAX_DEFAULT_INIT).min(self.max_trials))
    }

    pub fn validate(&self, dim: usize) -> Result<(), OptimizerError> {
        let err = |m: String| Err(OptimizerError::Config(m));
        if self.batch_size < 1 {
            return err("optimizer.batch_size must be at least 1".into());
        }
        if self.max_trials < 1 {
            return err("optimizer.max_trials must be at least 1".into());
        }
        if let Some(init) = self.init_count {
            if init < 1 || init > self.max_trials {
                return err(format!(
                    "optimizer.init_count must be in [1, max_trials = {}], got {init}",
                    self.max_trials
                ));
            }
        }
        if self.acquisition_restarts < 1 {
            return err("optimizer.acquisition_restarts must be at least 1".into());
        }
        if self.acquisition_probes < 1 {
            return err("optimizer.acquisition_probes must be at least 1".into());
        }
        if !(self.scalarization_rho.is_finite() && self.scalarization_rho >= 0.0) {
            return err("optimizer.scalarization_rho must be a non-negative number".into());
        }
        if self.strategy == Strategy::Mogo && (self.batch_size < 4 || self.batch_size % 2 != 0) {
            return err(format!(
                "optimizer.batch_size is the population size for mogo and must be even and >= 4, got {}",
                self.batch_size
            ));
        }
        if dim < 1 {
            return err("design dimension must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Running,
    Valid,
    Invalid,
    Failed,
}

impl TrialStatus {
    pub fn is_final(self) -> bool {
        matches!(self, Self::Valid | Self::Invalid | Self::Failed)
    }
}

/// Per-trial timestamps in seconds since the Unix epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingTrace {
    pub proposed_at: Option<f64>,
    pub submitted_at: Option<f64>,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub received_at: Option<f64>,
    pub finalized_at: Option<f64>,
    /// Share of the batch's proposal time attributed to this trial.
    pub generation_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub design: DesignPoint,
    pub objectives: Option<Vec<f64>>,
    pub status: TrialStatus,
    pub attempt_count: u32,
    pub timing: TimingTrace,
}

/// Final outcome of a trial as reported to `tell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "objectives")]
pub enum Outcome {
    Valid(Vec<f64>),
    Invalid,
    Failed,
}

impl Outcome {
    pub fn status(&self) -> TrialStatus {
        match self {
            Self::Valid(_) => TrialStatus::Valid,
            Self::Invalid => TrialStatus::Invalid,
            Self::Failed => TrialStatus::Failed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TellEffect {
    Applied,
    /// Identical repeat of an earlier tell; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Initial,
    Acquisition,
    Offspring,
    /// Quasi-random because no model could be built yet.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalInfo {
    pub trial_id: u64,
    pub source: ProposalSource,
    pub weights: Option<Vec<f64>>,
    pub acquisition_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum OptimizerEvent {
    ModelRefit {
        tell_count: usize,
        training_points: usize,
        hyperparams: Vec<GpHyperparams>,
        seconds: f64,
    },
    Warning {
        message: String,
    },
}

#[derive(Debug, Clone)]
struct Surrogate {
    refit_at: usize,
    hyperparams: Vec<GpHyperparams>,
    normalization: Option<Normalization>,
}

pub struct Optimizer {
    space: DesignSpace,
    objectives: usize,
    config: OptimizerConfig,
    init_count: usize,
    halton: ScrambledHalton,
    trials: Vec<TrialRecord>,
    tell_order: Vec<u64>,
    archive: Vec<u64>,
    surrogate: Option<Surrogate>,
    populations: Vec<Vec<u64>>,
    offspring: HashMap<u64, Vec<Vec<f64>>>,
    genetic: GeneticParams,
    search: AcquisitionSearch,
    events: Vec<OptimizerEvent>,
    last_proposals: Vec<ProposalInfo>,
}

impl Optimizer {
    pub fn new(space: DesignSpace, objectives: usize, config: OptimizerConfig) -> Result<Self, OptimizerError> {
        config.validate(space.dimension())?;
        if objectives < 1 {
            return Err(OptimizerError::Config("objective count must be at least 1".into()));
        }
        let init_count = config.resolved_init_count(space.dimension());
        let halton = ScrambledHalton::new(space.dimension(), config.rng_seed);
        let search = AcquisitionSearch {
            probes: config.acquisition_probes,
            refine_starts: config.acquisition_restarts.min(8),
            ..AcquisitionSearch::default()
        };
        Ok(Self {
            space,
            objectives,
            config,
            init_count,
            halton,
            trials: Vec::new(),
            tell_order: Vec::new(),
            archive: Vec::new(),
            surrogate: None,
            populations: Vec::new(),
            offspring: HashMap::new(),
            genetic: GeneticParams::default(),
            search,
            events: Vec::new(),
            last_proposals: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn objective_count(&self) -> usize {
        self.objectives
    }

    pub fn init_count(&self) -> usize {
        self.init_count
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn trial(&self, id: u64) -> Option<&TrialRecord> {
        self.trials.get(id as usize)
    }

    pub fn remaining(&self) -> usize {
        self.config.max_trials.saturating_sub(self.trials.len())
    }

    /// Trial ids in the order they were finalized.
    pub fn tell_order(&self) -> &[u64] {
        &self.tell_order
    }

    pub fn finalized_count(&self) -> usize {
        self.tell_order.len()
    }

    pub fn is_finished(&self) -> bool {
        self.trials.len() == self.config.max_trials && self.tell_order.len() == self.trials.len()
    }

    /// Number of trials the surrogate is trained on.
    pub fn training_set_size(&self) -> usize {
        self.trials.iter().filter(|t| t.status == TrialStatus::Valid).count()
    }

    /// Nondominated valid trials in archive insertion order.
    pub fn archive(&self) -> Vec<&TrialRecord> {
        self.archive.iter().map(|&id| &self.trials[id as usize]).collect()
    }

    pub fn archive_objectives(&self) -> Vec<Vec<f64>> {
        self.archive().into_iter().filter_map(|t| t.objectives.clone()).collect()
    }

    pub fn drain_events(&mut self) -> Vec<OptimizerEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn last_proposals(&self) -> &[ProposalInfo] {
        &self.last_proposals
    }

    pub fn trial_mut_timing(&mut self, id: u64) -> Option<&mut TimingTrace> {
        self.trials.get_mut(id as usize).map(|t| &mut t.timing)
    }

    pub fn mark_running(&mut self, id: u64) -> Result<(), OptimizerError> {
        let t = self.trials.get_mut(id as usize).ok_or(OptimizerError::UnknownTrial(id))?;
        if t.status == TrialStatus::Pending {
            t.status = TrialStatus::Running;
        }
        Ok(())
    }

    pub fn note_attempt(&mut self, id: u64) -> Result<(), OptimizerError> {
        let t = self.trials.get_mut(id as usize).ok_or(OptimizerError::UnknownTrial(id))?;
        t.attempt_count += 1;
        Ok(())
    }

    /// Proposes `q` new designs, recorded as pending trials.
    pub fn propose(&mut self, q: usize) -> Result<Vec<(u64, DesignPoint)>, OptimizerError> {
        if q == 0 {
            return Err(OptimizerError::EmptyBatch);
        }
        if q > self.remaining() {
            return Err(OptimizerError::BudgetExhausted { requested: q, remaining: self.remaining() });
        }
        self.last_proposals.clear();
        let mut out = Vec::with_capacity(q);
        for _ in 0..q {
            let id = self.trials.len() as u64;
            let (unit, info) = match self.config.strategy {
                Strategy::Mobo => self.mobo_candidate(id),
                Strategy::Mogo => self.mogo_candidate(id),
            };
            let design = self.space.from_unit(&unit);
            self.trials.push(TrialRecord {
                trial_id: id,
                design: design.clone(),
                objectives: None,
                status: TrialStatus::Pending,
                attempt_count: 0,
                timing: TimingTrace::default(),
            });
            self.last_proposals.push(info);
            out.push((id, design));
        }
        Ok(out)
    }

    /// Re-registers a proposal recovered from a journal without generating it.
    pub fn restore_proposal(&mut self, id: u64, design: DesignPoint) -> Result<(), OptimizerError> {
        let expected = self.trials.len() as u64;
        if id != expected {
            return Err(OptimizerError::OutOfOrder { expected, got: id });
        }
        if self.remaining() == 0 {
            return Err(OptimizerError::BudgetExhausted { requested: 1, remaining: 0 });
        }
        self.space.check(design.coords())?;
        self.trials.push(TrialRecord {
            trial_id: id,
            design,
            objectives: None,
            status: TrialStatus::Pending,
            attempt_count: 0,
            timing: TimingTrace::default(),
        });
        Ok(())
    }

    pub fn tell(&mut self, id: u64, outcome: Outcome) -> Result<TellEffect, OptimizerError> {
        let m = self.objectives;
        let record = self.trials.get_mut(id as usize).ok_or(OptimizerError::UnknownTrial(id))?;
        if let Outcome::Valid(f) = &outcome {
            if f.len() != m {
                return Err(OptimizerError::InvalidOutcome {
                    trial_id: id,
                    reason: format!("expected {m} objectives, got {}", f.len()),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(OptimizerError::InvalidOutcome {
                    trial_id: id,
                    reason: "non-finite objective value".into(),
                });
            }
        }
        if record.status.is_final() {
            let same = record.status == outcome.status()
                && match &outcome {
                    Outcome::Valid(f) => record.objectives.as_ref() == Some(f),
                    _ => true,
                };
            return if same { Ok(TellEffect::Duplicate) } else { Err(OptimizerError::ConflictingTell(id)) };
        }
        record.status = outcome.status();
        if let Outcome::Valid(f) = outcome {
            record.objectives = Some(f);
        }
        self.tell_order.push(id);
        if self.trials[id as usize].status == TrialStatus::Valid {
            self.insert_archive(id);
        }
        if self.config.strategy == Strategy::Mogo {
            self.advance_populations();
        }
        Ok(TellEffect::Applied)
    }

    fn insert_archive(&mut self, id: u64) {
        let f = self.trials[id as usize].objectives.clone().expect("valid trial");
        let trials = &self.trials;
        let obj = |i: u64| trials[i as usize].objectives.as_deref().expect("archived trial");
        if self.archive.iter().any(|&a| obj(a) == f.as_slice() || dominates(obj(a), &f)) {
            return;
        }
        self.archive.retain(|&a| !dominates(&f, obj(a)));
        self.archive.push(id);
    }

    fn quasi_random(&self, id: u64) -> Vec<f64> {
        self.halton.point(id)
    }

    fn valid_trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.tell_order
            .iter()
            .map(|&id| &self.trials[id as usize])
            .filter(|t| t.status == TrialStatus::Valid)
    }

    // ----- MOBO -------------------------------------------------------------

    fn mobo_candidate(&mut self, id: u64) -> (Vec<f64>, ProposalInfo) {
        if (id as usize) < self.init_count {
            let info = ProposalInfo { trial_id: id, source: ProposalSource::Initial, weights: None, acquisition_value: None };
            return (self.quasi_random(id), info);
        }
        let mut wrng = stream_rng(self.config.rng_seed, Stream::Weights, id);
        let weights = sample_simplex(self.objectives, &mut wrng);
        match self.acquisition_model(&weights) {
            Some(model) => {
                let mut rng = stream_rng(self.config.rng_seed, Stream::Acquisition, id);
                let (x, value) =
                    maximize_acquisition(&model, self.space.dimension(), &self.search, &mut rng);
                let info = ProposalInfo {
                    trial_id: id,
                    source: ProposalSource::Acquisition,
                    weights: Some(weights),
                    acquisition_value: Some(value),
                };
                (x, info)
            }
            None => {
                self.events.push(OptimizerEvent::Warning {
                    message: format!("trial {id}: no valid observations yet, proposing quasi-random point"),
                });
                let info = ProposalInfo { trial_id: id, source: ProposalSource::Fallback, weights: None, acquisition_value: None };
                (self.quasi_random(id), info)
            }
        }
    }

    fn refit_point(tells: usize) -> usize {
        if tells <= REFIT_EVERY_TELL_UNTIL {
            tells
        } else {
            tells - (tells - REFIT_EVERY_TELL_UNTIL) % REFIT_INTERVAL
        }
    }

    /// Brings hyperparameters up to the latest scheduled refit.
    fn ensure_surrogate(&mut self) {
        let k = Self::refit_point(self.tell_order.len());
        if self.surrogate.as_ref().is_some_and(|s| s.refit_at == k) {
            return;
        }
        let start = Instant::now();
        let prefix: Vec<&TrialRecord> = self.tell_order[..k]
            .iter()
            .map(|&id| &self.trials[id as usize])
            .filter(|t| t.status == TrialStatus::Valid)
            .collect();
        let inputs: Vec<Vec<f64>> = prefix.iter().map(|t| self.space.to_unit(&t.design)).collect();
        let dim = self.space.dimension();
        let hyperparams: Vec<GpHyperparams> = (0..self.objectives)
            .map(|j| {
                if inputs.len() < 2 {
                    return GpHyperparams::default_for(dim);
                }
                let raw: Vec<f64> = prefix.iter().map(|t| t.objectives.as_ref().unwrap()[j]).collect();
                let y = Standardizer::fit(&raw).apply_all(&raw);
                let cfg = GpFitConfig {
                    restarts: self.config.acquisition_restarts,
                    max_iterations: self.config.gp_max_iterations,
                    seed: derive_seed(self.config.rng_seed, Stream::GpFit, (k as u64) << 8 | j as u64),
                };
                fit_gp(&inputs, &y, &cfg).unwrap_or_else(|_| GpHyperparams::default_for(dim))
            })
            .collect();
        let objectives: Vec<Vec<f64>> = prefix.iter().map(|t| t.objectives.clone().unwrap()).collect();
        let front = pareto_filter(&objectives).unwrap_or_default();
        let normalization = Normalization::from_values(front.iter());
        self.events.push(OptimizerEvent::ModelRefit {
            tell_count: k,
            training_points: inputs.len(),
            hyperparams: hyperparams.clone(),
            seconds: start.elapsed().as_secs_f64(),
        });
        self.surrogate = Some(Surrogate { refit_at: k, hyperparams, normalization });
    }

    /// The scalarized-EI model for `weights` over all current valid trials.
    /// `None` if there are no valid observations.
    pub fn acquisition_model(&mut self, weights: &[f64]) -> Option<ScalarizedModel> {
        if self.training_set_size() == 0 {
            return None;
        }
        self.ensure_surrogate();
        let surrogate = self.surrogate.clone().expect("surrogate fitted");
        let data: Vec<(Vec<f64>, Vec<f64>)> = self
            .valid_trials()
            .map(|t| (self.space.to_unit(&t.design), t.objectives.clone().unwrap()))
            .collect();
        let rho = self.config.scalarization_rho;
        let scalar: Vec<f64> = match &surrogate.normalization {
            Some(norm) => data.iter().map(|(_, f)| scalarize(&norm.apply(f), weights, rho)).collect(),
            None => {
                self.events.push(OptimizerEvent::Warning {
                    message: "no normalization basis at last refit; scalarizing raw objectives".into(),
                });
                data.iter().map(|(_, f)| scalarize(f, weights, rho)).collect()
            }
        };
        let standardizer = Standardizer::fit(&scalar);
        let targets = standardizer.apply_all(&scalar);
        let inputs: Vec<Vec<f64>> = data.into_iter().map(|(x, _)| x).collect();
        // The blend alone describes the scalarized surface poorly (it is not a
        // mixture of the per-objective surfaces), so polish it on the actual
        // targets.
        let blended = blend_hyperparams(&surrogate.hyperparams, weights);
        let starts = [blended.clone(), GpHyperparams::default_for(self.space.dimension())];
        let hyper = refine_gp(&inputs, &targets, &starts, self.config.gp_max_iterations).unwrap_or(blended);
        let gp = GaussianProcess::new(hyper, inputs, &targets).ok()?;
        let best = targets.iter().copied().fold(f64::INFINITY, f64::min);
        Some(ScalarizedModel { gp, standardizer, weights: weights.to_vec(), best })
    }

    // ----- MOGO -------------------------------------------------------------

    fn generation_size(&self) -> u64 {
        self.config.batch_size as u64
    }

    fn generation_complete(&self, g: usize) -> bool {
        let p = self.generation_size();
        let range = (g as u64 * p)..((g as u64 + 1) * p);
        range.clone().all(|id| self.trials.get(id as usize).is_some_and(|t| t.status.is_final()))
    }

    fn advance_populations(&mut self) {
        let p = self.generation_size();
        while self.generation_complete(self.populations.len()) {
            let g = self.populations.len() as u64;
            let mut pool: Vec<u64> = self.populations.last().cloned().unwrap_or_default();
            pool.extend(
                (g * p..(g + 1) * p).filter(|&id| self.trials[id as usize].status == TrialStatus::Valid),
            );
            let objs: Vec<Vec<f64>> =
                pool.iter().map(|&id| self.trials[id as usize].objectives.clone().unwrap()).collect();
            let keep = environmental_selection(&objs, p as usize);
            self.populations.push(keep.into_iter().map(|i| pool[i]).collect());
        }
    }

    /// Survivors after generation `g` (designs and objectives).
    pub fn mogo_population(&self, g: usize) -> Option<Vec<(DesignPoint, Vec<f64>)>> {
        self.populations.get(g).map(|ids| {
            ids.iter()
                .map(|&id| {
                    let t = &self.trials[id as usize];
                    (t.design.clone(), t.objectives.clone().unwrap())
                })
                .collect()
        })
    }

    pub fn mogo_generations_completed(&self) -> usize {
        self.populations.len()
    }

    fn mogo_candidate(&mut self, id: u64) -> (Vec<f64>, ProposalInfo) {
        let p = self.generation_size();
        let g = id / p;
        let fallback = |source| ProposalInfo { trial_id: id, source, weights: None, acquisition_value: None };
        if g == 0 {
            return (self.quasi_random(id), fallback(ProposalSource::Initial));
        }
        if !self.offspring.contains_key(&g) {
            // Latest complete population; before any exists, whatever is valid.
            let parents: Vec<u64> = match self.populations.last() {
                Some(pop) => pop.clone(),
                None => self.valid_trials().map(|t| t.trial_id).collect(),
            };
            if parents.is_empty() {
                self.events.push(OptimizerEvent::Warning {
                    message: format!("trial {id}: empty parent population, proposing quasi-random point"),
                });
                return (self.quasi_random(id), fallback(ProposalSource::Fallback));
            }
            let units: Vec<Vec<f64>> =
                parents.iter().map(|&i| self.space.to_unit(&self.trials[i as usize].design)).collect();
            let objs: Vec<Vec<f64>> =
                parents.iter().map(|&i| self.trials[i as usize].objectives.clone().unwrap()).collect();
            let mut rng = stream_rng(self.config.rng_seed, Stream::Genetic, g);
            let kids = make_offspring(&units, &objs, p as usize, &self.genetic, &mut rng);
            self.offspring.insert(g, kids);
        }
        let kid = self.offspring[&g][(id % p) as usize].clone();
        (kid, fallback(ProposalSource::Offspring))
    }
}

/// Hyperparameters for the scalarized target: weighted geometric means of
/// the per-objective length-scales and signal variances, weighted mean
/// noise, zero mean (targets are standardized).
fn blend_hyperparams(per_objective: &[GpHyperparams], weights: &[f64]) -> GpHyperparams {
    let dim = per_objective[0].length_scales.len();
    let geo = |f: &dyn Fn(&GpHyperparams) -> f64| -> f64 {
        per_objective.iter().zip(weights).map(|(h, w)| w * f(h).ln()).sum::<f64>().exp()
    };
    GpHyperparams {
        mean: 0.0,
        signal_variance: geo(&|h| h.signal_variance),
        length_scales: (0..dim).map(|k| geo(&|h| h.length_scales[k])).collect(),
        noise_variance: per_objective.iter().zip(weights).map(|(h, w)| w * h.noise_variance).sum::<f64>()
            .max(gp::NOISE_FLOOR),
    }
}

/// The optimizer behind a mutex: one mutation at a time, any thread.
#[derive(Clone)]
pub struct SharedOptimizer(Arc<Mutex<Optimizer>>);

impl SharedOptimizer {
    pub fn new(optimizer: Optimizer) -> Self {
        Self(Arc::new(Mutex::new(optimizer)))
    }

    pub fn propose(&self, q: usize) -> Result<Vec<(u64, DesignPoint)>, OptimizerError> {
        self.0.lock().propose(q)
    }

    pub fn tell(&self, id: u64, outcome: Outcome) -> Result<TellEffect, OptimizerError> {
        self.0.lock().tell(id, outcome)
    }

    pub fn archive_snapshot(&self) -> Vec<Vec<f64>> {
        self.0.lock().archive_objectives()
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut Optimizer) -> T) -> T {
        f(&mut self.0.lock())
    }
}

//! Gradient descent-ascent over (policy, prior) pairs and the baseline
//! training loops (population best response, self-play, fictitious play).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{best_response_value, exact_utility, weighted_gradient, Arena, CopyMode, Prior};
use crate::game::RepeatedGame;
use crate::policy::{SoftmaxPolicy, StochasticPolicy};
use crate::rng::{self, tag};
use crate::scenario::{ResolvedScenario, Scenario};
use crate::simplex::project_simplex;
use crate::tree::Walker;

/// Logits larger than this abort training.
pub const THETA_LIMIT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Maximin utility.
    Mu,
    /// Minimax regret.
    Mr,
    /// Best response to the uniform prior.
    Pbr,
    /// Self-play on the universalisation scenario only.
    Sp,
    /// Fictitious play against past snapshots.
    Fp,
    /// Uniform policy, no training.
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Mu,
        Method::Mr,
        Method::Pbr,
        Method::Sp,
        Method::Fp,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mu => "mu",
            Method::Mr => "mr",
            Method::Pbr => "pbr",
            Method::Sp => "sp",
            Method::Fp => "fp",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterateSelection {
    UniformRandom,
    Last,
    BestWorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Exact,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyModeKind {
    Joint,
    Delayed,
}

/// Training hyperparameters. Optional fields fall back to values derived
/// from the others (see the accessor methods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub eta_theta: f64,
    pub eta_beta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub rollouts_per_scenario: usize,
    /// Subtract the mean return of the other rollouts of the same scenario.
    pub baseline: bool,
    pub delay_d: Option<usize>,
    pub exploration_floor: Option<f64>,
    pub fp_snapshot_interval: Option<usize>,
    pub iterate_selection: IterateSelection,
    pub seed: u64,
    pub mode: SolverMode,
    pub copy_mode: CopyModeKind,
    /// Initial logits are drawn from `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Mu,
            eta_theta: 0.05,
            eta_beta: 0.1,
            iterations: 20_000,
            batch_size: 10,
            rollouts_per_scenario: 16,
            baseline: true,
            delay_d: None,
            exploration_floor: None,
            fp_snapshot_interval: None,
            iterate_selection: IterateSelection::BestWorstCase,
            seed: 0,
            mode: SolverMode::Exact,
            copy_mode: CopyModeKind::Delayed,
            init_scale: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// Snapshot interval for fictitious play, `max(1, N / 100)` by default.
    pub fn snapshot_interval(&self) -> usize {
        self.fp_snapshot_interval
            .unwrap_or_else(|| (self.iterations / 100).max(1))
    }

    /// Refresh interval of the frozen focal copies; defaults to the
    /// snapshot interval.
    pub fn delay(&self) -> usize {
        self.delay_d.unwrap_or_else(|| self.snapshot_interval())
    }

    pub fn floor(&self) -> f64 {
        self.exploration_floor.unwrap_or(match self.mode {
            SolverMode::Exact => 0.0,
            SolverMode::Stochastic => 0.05,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.method != Method::Random {
            if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
                return bad(format!("eta_theta must be positive, got {}", self.eta_theta));
            }
            if !(self.eta_beta >= 0.0 && self.eta_beta.is_finite()) {
                return bad(format!("eta_beta must be non-negative, got {}", self.eta_beta));
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        let floor = self.floor();
        if !(0.0..1.0).contains(&floor) {
            return bad(format!("exploration_floor must lie in [0, 1), got {floor}"));
        }
        if self.batch_size == 0 || self.rollouts_per_scenario == 0 {
            return bad("batch_size and rollouts_per_scenario must be at least 1".into());
        }
        if self.delay() == 0 || self.snapshot_interval() == 0 {
            return bad("delay_d and fp_snapshot_interval must be at least 1".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be non-negative, got {}", self.init_scale));
        }
        Ok(())
    }
}

/// One row of the training trace, describing the iterate before update `iter`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    /// Prior over the training scenarios (fictitious play: over snapshots).
    pub beta: Vec<f64>,
    pub bayes_utility: f64,
    pub bayes_regret: f64,
    /// Worst utility and regret over the evaluation scenario set.
    pub u_min: f64,
    pub r_max: f64,
    pub grad_norm_theta: f64,
    /// Utilities over the evaluation scenario set.
    pub utilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub method: Method,
    pub records: Vec<IterRecord>,
    pub selected_iter: usize,
    /// Parameters of the selected iterate.
    pub theta: SoftmaxPolicy,
    pub prior: Prior,
    /// Scenario ids the prior refers to.
    pub prior_scenarios: Vec<String>,
    /// Whether the trace metrics are exact (otherwise Monte Carlo estimates).
    pub exact: bool,
}

impl SolverTrace {
    pub fn policy(&self) -> StochasticPolicy {
        self.theta.table()
    }

    pub fn selected(&self) -> &IterRecord {
        &self.records[self.selected_iter]
    }

    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("trace has at least one record")
    }

    /// Widest prior seen in the trace (fictitious play grows its prior).
    pub fn beta_width(&self) -> usize {
        self.records.iter().map(|r| r.beta.len()).max().unwrap_or(0)
    }
}

/// The fixed prior a baseline method trains against at iteration `t`.
pub fn build_baseline_prior(
    method: Method,
    scenarios: &[Scenario],
    t: usize,
    snapshot_interval: usize,
) -> Result<Prior> {
    match method {
        Method::Pbr => {
            if scenarios.is_empty() {
                return Err(Error::InvalidConfig("empty scenario set".into()));
            }
            Ok(Prior::uniform(scenarios.len()))
        }
        Method::Sp => {
            let at = scenarios
                .iter()
                .position(Scenario::is_universalisation)
                .ok_or(Error::MissingUniversalisation)?;
            Ok(Prior::dirac(scenarios.len(), at))
        }
        Method::Fp => {
            if snapshot_interval == 0 {
                return Err(Error::InvalidConfig("fp_snapshot_interval must be at least 1".into()));
            }
            Ok(Prior::uniform(t / snapshot_interval + 1))
        }
        other => Err(Error::InvalidConfig(format!(
            "{other} does not train against a fixed baseline prior"
        ))),
    }
}

/// Train according to `config.method` and `config.mode`, evaluating every
/// iterate on `arena`.
pub fn train(config: &SolverConfig, arena: &Arena) -> Result<SolverTrace> {
    config.validate()?;
    if arena.is_empty() {
        return Err(Error::InvalidConfig("empty scenario set".into()));
    }
    if config.method == Method::Random {
        return random_policy(arena);
    }
    match config.mode {
        SolverMode::Exact => run_gda(config, arena),
        SolverMode::Stochastic => run_sgda(config, arena),
    }
}

fn random_policy(arena: &Arena) -> Result<SolverTrace> {
    let game = arena.game();
    let theta = SoftmaxPolicy::zeros(game);
    let exact = game.check_enumerable().is_ok();
    let prior = Prior::uniform(arena.len());
    let (utilities, regrets) = if exact {
        let table = theta.table();
        (arena.utilities(&table)?, arena.regrets(&table)?)
    } else {
        (vec![f64::NAN; arena.len()], vec![f64::NAN; arena.len()])
    };
    let record = IterRecord {
        iter: 0,
        beta: prior.weights().to_vec(),
        bayes_utility: prior.expectation(&utilities)?,
        bayes_regret: prior.expectation(&regrets)?,
        u_min: min(&utilities),
        r_max: max(&regrets),
        grad_norm_theta: 0.0,
        utilities,
    };
    Ok(SolverTrace {
        method: Method::Random,
        records: vec![record],
        selected_iter: 0,
        theta,
        prior,
        prior_scenarios: arena.scenario_ids(),
        exact,
    })
}

/// Exact gradient descent-ascent.
pub fn run_gda(config: &SolverConfig, arena: &Arena) -> Result<SolverTrace> {
    config.validate()?;
    arena.game().check_enumerable()?;
    Loop::new(config, arena, Estimator::Exact)?.run()
}

/// Sampled descent-ascent: scenarios drawn from the floored prior, returns
/// estimated by rollouts.
pub fn run_sgda(config: &SolverConfig, arena: &Arena) -> Result<SolverTrace> {
    config.validate()?;
    Loop::new(config, arena, Estimator::Sampled)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Estimator {
    Exact,
    Sampled,
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Training scenarios that change over time (fictitious play) or not.
enum TrainSet<'a> {
    Fixed(&'a Arena),
    Snapshots {
        resolved: Vec<ResolvedScenario>,
        best: Vec<f64>,
        ids: Vec<String>,
    },
}

impl TrainSet<'_> {
    fn scenarios(&self) -> &[ResolvedScenario] {
        match self {
            TrainSet::Fixed(a) => a.scenarios(),
            TrainSet::Snapshots { resolved, .. } => resolved,
        }
    }
}

struct Loop<'a> {
    cfg: &'a SolverConfig,
    arena: &'a Arena,
    game: &'a RepeatedGame,
    estimator: Estimator,
    exact_trace: bool,
    /// Best-response values of the evaluation set when enumerable.
    best: Option<Vec<f64>>,
}

/// Per-iteration estimates over the training scenarios.
struct Step {
    utilities: Vec<f64>,
    regrets: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a SolverConfig, arena: &'a Arena, estimator: Estimator) -> Result<Self> {
        let game = arena.game();
        let exact_trace = game.check_enumerable().is_ok();
        let best = if exact_trace {
            Some(arena.best_values()?)
        } else {
            None
        };
        if cfg.method == Method::Mr && best.is_none() {
            return Err(Error::InvalidConfig(
                "minimax regret needs exact best-response values".into(),
            ));
        }
        Ok(Self {
            cfg,
            arena,
            game,
            estimator,
            exact_trace,
            best,
        })
    }

    fn fp_scenario(&self, snapshot: Arc<StochasticPolicy>) -> ResolvedScenario {
        let m = self.game.num_players();
        ResolvedScenario {
            scenario: Scenario::new(1, vec![String::new(); m - 1]),
            background: vec![snapshot; m - 1],
        }
    }

    fn run(self) -> Result<SolverTrace> {
        let cfg = self.cfg;
        let game = self.game;
        let n_iter = cfg.iterations;
        let interval = cfg.snapshot_interval();
        let delay = cfg.delay();
        let floor = cfg.floor();
        let method = cfg.method;

        let mut theta = if cfg.init_scale > 0.0 {
            SoftmaxPolicy::random(game, cfg.init_scale, &mut rng::stream(cfg.seed, &[tag::THETA_INIT]))
        } else {
            SoftmaxPolicy::zeros(game)
        };
        let mut train = match method {
            Method::Fp => TrainSet::Snapshots {
                resolved: Vec::new(),
                best: Vec::new(),
                ids: Vec::new(),
            },
            _ => TrainSet::Fixed(self.arena),
        };
        let eval_scenarios: Vec<Scenario> =
            self.arena.scenarios().iter().map(|r| r.scenario.clone()).collect();
        let mut beta: Vec<f64> = match method {
            Method::Mu | Method::Mr => Prior::uniform(self.arena.len()).weights().to_vec(),
            Method::Pbr | Method::Sp => build_baseline_prior(method, &eval_scenarios, 0, interval)?
                .weights()
                .to_vec(),
            Method::Fp => vec![1.0],
            Method::Random => unreachable!("handled by train"),
        };

        let pick = match cfg.iterate_selection {
            IterateSelection::UniformRandom => {
                Some(rng::stream(cfg.seed, &[tag::ITERATE_PICK]).random_range(0..=n_iter))
            }
            _ => None,
        };
        let mut chosen: Option<(usize, f64, SoftmaxPolicy, Vec<f64>)> = None;
        let mut records = Vec::with_capacity(n_iter + 1);
        let mut lag = theta.table();

        for t in 0..=n_iter {
            let table = theta.table();
            if t % delay == 0 {
                lag = table.clone();
            }
            if let TrainSet::Snapshots { resolved, best, ids } = &mut train {
                if t % interval == 0 {
                    let snap = Arc::new(table.clone());
                    let s = self.fp_scenario(snap);
                    best.push(if self.exact_trace {
                        best_response_value(game, &s)?.value
                    } else {
                        f64::NAN
                    });
                    resolved.push(s);
                    ids.push(format!("c1:snapshot_{t}"));
                    beta = Prior::uniform(resolved.len()).weights().to_vec();
                }
            }
            let train_best: Vec<f64> = match &train {
                TrainSet::Fixed(_) => self.best.clone().unwrap_or_else(|| vec![f64::NAN; beta.len()]),
                TrainSet::Snapshots { best, .. } => best.clone(),
            };
            let weights = Prior::from_raw(beta.clone()).mixed_with_uniform(floor);
            let copy_mode = match cfg.copy_mode {
                CopyModeKind::Joint => CopyMode::Joint,
                CopyModeKind::Delayed => CopyMode::Delayed(&lag),
            };
            let step = match self.estimator {
                Estimator::Exact => self.exact_step(&train, &table, weights.weights(), copy_mode, &train_best)?,
                Estimator::Sampled => self.sampled_step(
                    &train,
                    &table,
                    weights.weights(),
                    copy_mode,
                    &train_best,
                    t,
                )?,
            };

            // Metrics on the evaluation set.
            let (eval_u, eval_r) = if self.exact_trace {
                let u = match (&train, self.estimator) {
                    (TrainSet::Fixed(_), Estimator::Exact) => step.utilities.clone(),
                    _ => self.arena.utilities(&table)?,
                };
                let best = self.best.as_ref().expect("exact trace has best responses");
                let r = best.iter().zip(&u).map(|(b, u)| b - u).collect::<Vec<_>>();
                (u, r)
            } else if let TrainSet::Fixed(_) = train {
                (step.utilities.clone(), step.regrets.clone())
            } else {
                (vec![f64::NAN; self.arena.len()], vec![f64::NAN; self.arena.len()])
            };
            let (train_u, train_r) = match (&train, self.exact_trace, self.estimator) {
                (TrainSet::Fixed(_), true, _) => (eval_u.clone(), eval_r.clone()),
                _ => (step.utilities.clone(), step.regrets.clone()),
            };
            let bayes_utility: f64 = beta.iter().zip(&train_u).map(|(b, u)| b * u).sum();
            let bayes_regret: f64 = beta.iter().zip(&train_r).map(|(b, r)| b * r).sum();
            let record = IterRecord {
                iter: t,
                beta: beta.clone(),
                bayes_utility,
                bayes_regret,
                u_min: min(&eval_u),
                r_max: max(&eval_r),
                grad_norm_theta: norm(&step.grad),
                utilities: eval_u,
            };
            if self.exact_trace && record.utilities.iter().any(|u| u.is_nan()) {
                return Err(self.diverged(t, "utility is NaN", records, theta, beta, &train));
            }

            let score = match cfg.iterate_selection {
                IterateSelection::BestWorstCase => objective(method, &record, &eval_scenarios),
                IterateSelection::Last => t as f64,
                IterateSelection::UniformRandom => {
                    if pick == Some(t) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if chosen.as_ref().is_none_or(|c| score > c.1) {
                chosen = Some((t, score, theta.clone(), beta.clone()));
            }
            records.push(record);
            if t == n_iter {
                break;
            }

            // Prior step (maximin descends on utility, minimax regret
            // ascends on regret), then the policy step against the
            // floored prior used for the gradient.
            match method {
                Method::Mu => {
                    let v: Vec<f64> = beta
                        .iter()
                        .zip(&step.utilities)
                        .map(|(b, u)| b - cfg.eta_beta * u)
                        .collect();
                    beta = project_simplex(&v)?;
                }
                Method::Mr => {
                    let v: Vec<f64> = beta
                        .iter()
                        .zip(&step.regrets)
                        .map(|(b, r)| b + cfg.eta_beta * r)
                        .collect();
                    beta = project_simplex(&v)?;
                }
                _ => {}
            }
            for (th, g) in theta.theta_mut().iter_mut().zip(&step.grad) {
                *th += cfg.eta_theta * g;
            }
            if let Some(bad) = theta.theta().iter().find(|x| !x.is_finite() || x.abs() > THETA_LIMIT) {
                let reason = format!("parameter {bad} exceeds the divergence limit");
                return Err(self.diverged(t + 1, &reason, records, theta, beta, &train));
            }
        }

        let (selected_iter, _, theta, beta) = chosen.expect("at least one iterate");
        let prior_scenarios = match &train {
            TrainSet::Fixed(a) => a.scenario_ids(),
            TrainSet::Snapshots { ids, .. } => ids[..beta.len()].to_vec(),
        };
        Ok(SolverTrace {
            method,
            records,
            selected_iter,
            theta,
            prior: Prior::from_raw(beta),
            prior_scenarios,
            exact: self.exact_trace,
        })
    }

    fn diverged(
        &self,
        iter: usize,
        reason: &str,
        records: Vec<IterRecord>,
        theta: SoftmaxPolicy,
        beta: Vec<f64>,
        train: &TrainSet<'_>,
    ) -> Error {
        let prior_scenarios = match train {
            TrainSet::Fixed(a) => a.scenario_ids(),
            TrainSet::Snapshots { ids, .. } => ids.clone(),
        };
        Error::Diverged {
            iter,
            reason: reason.to_string(),
            trace: Box::new(SolverTrace {
                method: self.cfg.method,
                selected_iter: records.len().saturating_sub(1),
                records,
                theta,
                prior: Prior::from_raw(beta),
                prior_scenarios,
                exact: self.exact_trace,
            }),
        }
    }

    fn exact_step(
        &self,
        train: &TrainSet<'_>,
        table: &StochasticPolicy,
        weights: &[f64],
        mode: CopyMode<'_>,
        best: &[f64],
    ) -> Result<Step> {
        let scenarios = train.scenarios();
        let (surrogate, grad) = weighted_gradient(self.game, table, weights, scenarios, mode);
        // Utilities with every copy following the current policy; with one
        // focal copy they coincide with the gradient pass values.
        let utilities: Vec<f64> = scenarios
            .par_iter()
            .zip(&surrogate)
            .map(|(s, &v)| {
                if s.focal_count() == 1 && !v.is_nan() {
                    Ok(v)
                } else {
                    exact_utility(self.game, table, s)
                }
            })
            .collect::<Result<_>>()?;
        let regrets = best.iter().zip(&utilities).map(|(b, u)| b - u).collect();
        Ok(Step {
            utilities,
            regrets,
            grad,
        })
    }

    /// Importance-weighted Monte Carlo estimates: a scenario drawn `n`
    /// times out of `B` contributes `n / (B * p)` times its mean return,
    /// which is unbiased for its exact utility.
    fn sampled_step(
        &self,
        train: &TrainSet<'_>,
        table: &StochasticPolicy,
        weights: &[f64],
        mode: CopyMode<'_>,
        best: &[f64],
        t: usize,
    ) -> Result<Step> {
        let cfg = self.cfg;
        let game = self.game;
        let scenarios = train.scenarios();
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidPrior(format!("cannot sample from prior: {e}")))?;
        let mut batch_rng = rng::stream(cfg.seed, &[tag::BATCH, t as u64]);
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| dist.sample(&mut batch_rng)).collect();
        let n_probs = table.probs().len();
        let rollouts = cfg.rollouts_per_scenario;

        let parts: Vec<(usize, f64, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(k, &si)| {
                let s = &scenarios[si];
                let c = s.focal_count();
                let reward = game.focal_reward_vector(c);
                let (copies, diff): (&StochasticPolicy, Vec<usize>) = match mode {
                    CopyMode::Joint => (table, (0..c).collect()),
                    CopyMode::Delayed(frozen) => (frozen, vec![0]),
                };
                let mut seats: Vec<&StochasticPolicy> = vec![table];
                seats.extend(std::iter::repeat_n(copies, c - 1));
                seats.extend(s.background.iter().map(|b| b.as_ref()));
                let walker = Walker::new(game, &seats, &reward);
                let mut r = rng::stream(cfg.seed, &[tag::ROLLOUT, t as u64, k as u64]);
                let mut returns = Vec::with_capacity(rollouts);
                let mut choices = Vec::with_capacity(rollouts);
                let mut buf = Vec::new();
                for _ in 0..rollouts {
                    returns.push(walker.sample(&mut r, &diff, &mut buf));
                    choices.push(buf.clone());
                }
                let total: f64 = returns.iter().sum();
                let mean = total / rollouts as f64;
                let mut g = vec![0.0; n_probs];
                let n = game.num_actions();
                for (ret, ch) in returns.iter().zip(&choices) {
                    let base = if cfg.baseline && rollouts > 1 {
                        (total - ret) / (rollouts - 1) as f64
                    } else {
                        0.0
                    };
                    let adv = (ret - base) / rollouts as f64;
                    for &(node, a) in ch {
                        let row = table.row(node);
                        for b in 0..n {
                            let ind = if a == b { 1.0 } else { 0.0 };
                            g[node * n + b] += adv * (ind - row[b]);
                        }
                    }
                }
                (si, mean, g)
            })
            .collect();

        let b = cfg.batch_size as f64;
        let mut utilities = vec![0.0; scenarios.len()];
        let mut regrets = vec![0.0; scenarios.len()];
        let mut grad = vec![0.0; n_probs];
        for (si, mean, g) in parts {
            let w = 1.0 / (b * weights[si]);
            utilities[si] += w * mean;
            regrets[si] += w * (best[si] - mean);
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi / b;
            }
        }
        Ok(Step {
            utilities,
            regrets,
            grad,
        })
    }
}

/// Selection score of an iterate under `best_worst_case`.
fn objective(method: Method, rec: &IterRecord, scenarios: &[Scenario]) -> f64 {
    match method {
        Method::Mu => rec.u_min,
        Method::Mr => -rec.r_max,
        Method::Pbr => rec.utilities.iter().sum::<f64>() / rec.utilities.len() as f64,
        Method::Sp => scenarios
            .iter()
            .position(Scenario::is_universalisation)
            .map(|i| rec.utilities[i])
            .unwrap_or(rec.bayes_utility),
        Method::Fp | Method::Random => rec.bayes_utility,
    }
}

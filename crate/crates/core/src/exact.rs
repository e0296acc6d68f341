//! Exact utilities, regrets, best/min responses and policy gradients.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::RepeatedGame;
use crate::policy::{PolicySet, SoftmaxPolicy, StochasticPolicy};
use crate::rng;
use crate::scenario::{ResolvedScenario, Scenario, ScenarioSet};
use crate::tree::{search_shared_policy, Extremum, Walker};

/// Deterministic shared policies enumerated before falling back to ascent.
pub const SHARED_POLICY_BUDGET: usize = 1 << 22;
const FALLBACK_RESTARTS: usize = 20;
const FALLBACK_STEPS: usize = 2_000;
const FALLBACK_RATE: f64 = 0.5;

/// Probability vector aligned with a scenario list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prior {
    weights: Vec<f64>,
}

impl Prior {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidPrior("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidPrior(format!("weight {w} is negative or not finite")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPrior(format!("weights sum to {s}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn dirac(n: usize, at: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    /// `(1 - floor) * self + floor * uniform`.
    pub fn mixed_with_uniform(&self, floor: f64) -> Self {
        if floor == 0.0 {
            return self.clone();
        }
        let u = 1.0 / self.weights.len() as f64;
        Self {
            weights: self
                .weights
                .iter()
                .map(|w| (1.0 - floor) * w + floor * u)
                .collect(),
        }
    }

    fn check_len(&self, expected: usize) -> Result<()> {
        if self.weights.len() != expected {
            return Err(Error::PriorMismatch {
                expected,
                got: self.weights.len(),
            });
        }
        Ok(())
    }

    /// Fixed-order weighted sum.
    pub fn expectation(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(self.weights.iter().zip(values).map(|(w, v)| w * v).sum())
    }
}

/// Best- or min-response value, flagged when it is only a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResponseValue {
    pub value: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CopyMode<'a> {
    /// Every focal copy follows the current parameters and is differentiated.
    Joint,
    /// Copies after the first follow this frozen table and get no gradient.
    Delayed(&'a StochasticPolicy),
}

fn focal_seats<'a>(
    scenario: &'a ResolvedScenario,
    lead: &'a StochasticPolicy,
    copies: &'a StochasticPolicy,
) -> Vec<&'a StochasticPolicy> {
    let c = scenario.focal_count();
    let mut seats: Vec<&StochasticPolicy> = Vec::with_capacity(c + scenario.background.len());
    seats.push(lead);
    seats.extend(std::iter::repeat_n(copies, c - 1));
    seats.extend(scenario.background.iter().map(|b| b.as_ref()));
    seats
}

/// Expected focal-per-capita return of `policy` in `scenario`.
pub fn exact_utility(
    game: &RepeatedGame,
    policy: &StochasticPolicy,
    scenario: &ResolvedScenario,
) -> Result<f64> {
    game.check_enumerable()?;
    let reward = game.focal_reward_vector(scenario.focal_count());
    let seats = focal_seats(scenario, policy, policy);
    Ok(Walker::new(game, &seats, &reward).expected_return())
}

fn response_value(
    game: &RepeatedGame,
    scenario: &ResolvedScenario,
    ext: Extremum,
) -> Result<ResponseValue> {
    game.check_enumerable()?;
    let c = scenario.focal_count();
    let reward = game.focal_reward_vector(c);
    if c == 1 {
        let placeholder = StochasticPolicy::uniform(game);
        let seats = focal_seats(scenario, &placeholder, &placeholder);
        let (value, _) = Walker::new(game, &seats, &reward).optimize_seat(0, ext);
        return Ok(ResponseValue { value, exact: true });
    }
    let others: Vec<&StochasticPolicy> = scenario.background.iter().map(|b| b.as_ref()).collect();
    if let Some(found) = search_shared_policy(game, c, &others, &reward, ext, SHARED_POLICY_BUDGET) {
        return Ok(ResponseValue {
            value: found.value,
            exact: true,
        });
    }
    Ok(ResponseValue {
        value: shared_ascent(game, scenario, ext),
        exact: false,
    })
}

/// Multi-restart gradient ascent (or descent) on a shared softmax policy.
fn shared_ascent(game: &RepeatedGame, scenario: &ResolvedScenario, ext: Extremum) -> f64 {
    let sign = match ext {
        Extremum::Max => 1.0,
        Extremum::Min => -1.0,
    };
    let mut best: Option<f64> = None;
    for restart in 0..FALLBACK_RESTARTS {
        let mut r = rng::stream(0, &[rng::tag::RESTART, restart as u64]);
        let mut theta = SoftmaxPolicy::random(game, 1.0, &mut r);
        let mut value = 0.0;
        for _ in 0..FALLBACK_STEPS {
            let table = theta.table();
            let (v, g) = scenario_gradient(game, scenario, &table, CopyMode::Joint);
            value = v;
            for (t, gi) in theta.theta_mut().iter_mut().zip(&g) {
                *t += sign * FALLBACK_RATE * gi;
            }
        }
        let v = exact_utility(game, &theta.table(), scenario).unwrap_or(value);
        best = Some(match best {
            Some(b) if !ext_better(ext, v, b) => b,
            _ => v,
        });
    }
    best.expect("at least one restart")
}

fn ext_better(ext: Extremum, a: f64, b: f64) -> bool {
    match ext {
        Extremum::Max => a > b,
        Extremum::Min => a < b,
    }
}

/// Largest focal-per-capita return achievable in `scenario`.
pub fn best_response_value(game: &RepeatedGame, scenario: &ResolvedScenario) -> Result<ResponseValue> {
    response_value(game, scenario, Extremum::Max)
}

/// Smallest focal-per-capita return achievable in `scenario`.
pub fn min_response_value(game: &RepeatedGame, scenario: &ResolvedScenario) -> Result<ResponseValue> {
    response_value(game, scenario, Extremum::Min)
}

/// Optimal deterministic reply for a single-focal scenario.
pub fn best_response_policy(game: &RepeatedGame, scenario: &ResolvedScenario) -> Result<StochasticPolicy> {
    game.check_enumerable()?;
    if scenario.focal_count() != 1 {
        return Err(Error::InvalidConfig(
            "best-response tables are only built for single-focal scenarios".into(),
        ));
    }
    let reward = game.focal_reward_vector(1);
    let placeholder = StochasticPolicy::uniform(game);
    let seats = focal_seats(scenario, &placeholder, &placeholder);
    let (_, plan) = Walker::new(game, &seats, &reward).optimize_seat(0, Extremum::Max);
    Ok(StochasticPolicy::deterministic(game, &plan))
}

/// `U*(scenario) - U(policy, scenario)`.
pub fn regret(
    game: &RepeatedGame,
    policy: &StochasticPolicy,
    scenario: &ResolvedScenario,
) -> Result<f64> {
    let best = best_response_value(game, scenario)?;
    Ok(best.value - exact_utility(game, policy, scenario)?)
}

/// Value and logit gradient of the focal return in one scenario.
pub fn scenario_gradient(
    game: &RepeatedGame,
    scenario: &ResolvedScenario,
    current: &StochasticPolicy,
    mode: CopyMode<'_>,
) -> (f64, Vec<f64>) {
    let reward = game.focal_reward_vector(scenario.focal_count());
    let c = scenario.focal_count();
    let (copies, diff): (&StochasticPolicy, Vec<usize>) = match mode {
        CopyMode::Joint => (current, (0..c).collect()),
        CopyMode::Delayed(frozen) => (frozen, vec![0]),
    };
    let seats = focal_seats(scenario, current, copies);
    let mut grad = vec![0.0; current.probs().len()];
    let v = Walker::new(game, &seats, &reward).return_and_gradient(&diff, current, &mut grad);
    (v, grad)
}

/// Exact gradient of `sum_s prior(s) U(pi_theta, s)` with respect to theta.
pub fn exact_policy_gradient(
    game: &RepeatedGame,
    theta: &SoftmaxPolicy,
    prior: &Prior,
    scenarios: &[ResolvedScenario],
    mode: CopyMode<'_>,
) -> Result<Vec<f64>> {
    game.check_enumerable()?;
    prior.check_len(scenarios.len())?;
    let table = theta.table();
    Ok(weighted_gradient(game, &table, prior.weights(), scenarios, mode).1)
}

/// Per-scenario surrogate values and the prior-weighted gradient, reduced
/// in scenario order.
pub(crate) fn weighted_gradient(
    game: &RepeatedGame,
    table: &StochasticPolicy,
    weights: &[f64],
    scenarios: &[ResolvedScenario],
    mode: CopyMode<'_>,
) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<Option<(f64, Vec<f64>)>> = scenarios
        .par_iter()
        .zip(weights.par_iter())
        .map(|(s, &w)| (w != 0.0).then(|| scenario_gradient(game, s, table, mode)))
        .collect();
    let mut grad = vec![0.0; table.probs().len()];
    let mut values = vec![f64::NAN; scenarios.len()];
    for (k, (part, &w)) in parts.into_iter().zip(weights).enumerate() {
        if let Some((v, g)) = part {
            values[k] = v;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += w * gi;
            }
        }
    }
    (values, grad)
}

/// Per-scenario utilities and regrets of one policy under a prior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scenario_ids: Vec<String>,
    pub per_scenario_utility: Vec<f64>,
    pub best_response: Vec<ResponseValue>,
    pub per_scenario_regret: Vec<f64>,
    pub bayes_utility: f64,
    pub bayes_regret: f64,
}

/// A game, its scenarios with tabulated backgrounds, and cached response values.
#[derive(Debug)]
pub struct Arena {
    game: Arc<RepeatedGame>,
    name: String,
    resolved: Vec<ResolvedScenario>,
    best: OnceLock<Vec<ResponseValue>>,
    worst: OnceLock<Vec<ResponseValue>>,
}

impl Arena {
    pub fn new(game: Arc<RepeatedGame>, population: &PolicySet, set: &ScenarioSet) -> Result<Self> {
        let tables = population.tabulate(&game)?;
        Self::with_tables(game, set, &tables)
    }

    pub fn with_tables(
        game: Arc<RepeatedGame>,
        set: &ScenarioSet,
        tables: &HashMap<String, Arc<StochasticPolicy>>,
    ) -> Result<Self> {
        if set.num_players() != game.num_players() {
            return Err(Error::InvalidConfig(format!(
                "scenario set for {} players used with a {}-player game",
                set.num_players(),
                game.num_players()
            )));
        }
        let resolved = set
            .scenarios()
            .iter()
            .map(|s| ResolvedScenario::resolve(s, tables))
            .collect::<Result<_>>()?;
        Ok(Self::from_resolved(game, set.name.clone(), resolved))
    }

    pub fn from_resolved(game: Arc<RepeatedGame>, name: String, resolved: Vec<ResolvedScenario>) -> Self {
        Self {
            game,
            name,
            resolved,
            best: OnceLock::new(),
            worst: OnceLock::new(),
        }
    }

    pub fn game(&self) -> &RepeatedGame {
        &self.game
    }

    pub fn game_arc(&self) -> Arc<RepeatedGame> {
        self.game.clone()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.resolved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resolved.is_empty()
    }

    pub fn scenarios(&self) -> &[ResolvedScenario] {
        &self.resolved
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        self.resolved.iter().map(|r| r.scenario.id()).collect()
    }

    pub fn universalisation_index(&self) -> Option<usize> {
        self.resolved
            .iter()
            .position(|r| r.scenario.is_universalisation())
    }

    pub fn index_of(&self, scenario: &Scenario) -> Option<usize> {
        self.resolved.iter().position(|r| &r.scenario == scenario)
    }

    pub fn utility(&self, policy: &StochasticPolicy, index: usize) -> Result<f64> {
        exact_utility(&self.game, policy, &self.resolved[index])
    }

    /// Exact utility in every scenario, in order.
    pub fn utilities(&self, policy: &StochasticPolicy) -> Result<Vec<f64>> {
        self.game.check_enumerable()?;
        self.resolved
            .par_iter()
            .map(|s| exact_utility(&self.game, policy, s))
            .collect()
    }

    fn responses<'s>(
        &'s self,
        cell: &'s OnceLock<Vec<ResponseValue>>,
        ext: Extremum,
    ) -> Result<&'s [ResponseValue]> {
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let values: Vec<ResponseValue> = self
            .resolved
            .par_iter()
            .map(|s| response_value(&self.game, s, ext))
            .collect::<Result<_>>()?;
        Ok(cell.get_or_init(|| values))
    }

    pub fn best_responses(&self) -> Result<&[ResponseValue]> {
        self.responses(&self.best, Extremum::Max)
    }

    pub fn min_responses(&self) -> Result<&[ResponseValue]> {
        self.responses(&self.worst, Extremum::Min)
    }

    pub fn best_values(&self) -> Result<Vec<f64>> {
        Ok(self.best_responses()?.iter().map(|r| r.value).collect())
    }

    pub fn regrets(&self, policy: &StochasticPolicy) -> Result<Vec<f64>> {
        let u = self.utilities(policy)?;
        let best = self.best_responses()?;
        Ok(best.iter().zip(&u).map(|(b, u)| b.value - u).collect())
    }

    pub fn bayes_utility(&self, policy: &StochasticPolicy, prior: &Prior) -> Result<f64> {
        prior.check_len(self.len())?;
        prior.expectation(&self.utilities(policy)?)
    }

    pub fn bayes_regret(&self, policy: &StochasticPolicy, prior: &Prior) -> Result<f64> {
        prior.check_len(self.len())?;
        prior.expectation(&self.regrets(policy)?)
    }

    pub fn report(&self, policy: &StochasticPolicy, prior: &Prior) -> Result<EvalReport> {
        prior.check_len(self.len())?;
        let per_scenario_utility = self.utilities(policy)?;
        let best_response = self.best_responses()?.to_vec();
        let per_scenario_regret: Vec<f64> = best_response
            .iter()
            .zip(&per_scenario_utility)
            .map(|(b, u)| b.value - u)
            .collect();
        Ok(EvalReport {
            scenario_ids: self.scenario_ids(),
            bayes_utility: prior.expectation(&per_scenario_utility)?,
            bayes_regret: prior.expectation(&per_scenario_regret)?,
            per_scenario_utility,
            best_response,
            per_scenario_regret,
        })
    }

    pub fn gradient(&self, theta: &SoftmaxPolicy, prior: &Prior, mode: CopyMode<'_>) -> Result<Vec<f64>> {
        exact_policy_gradient(&self.game, theta, prior, &self.resolved, mode)
    }
}

//! Robustness metrics, test partner generation, non-degeneracy checks,
//! perturbation-bound audits and the epsilon sweep.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::Arena;
use crate::game::RepeatedGame;
use crate::lp;
use crate::policy::{sample_epsilon_ball, Policy, PolicySet, StochasticPolicy};
use crate::rng::{self, tag};
use crate::scenario::{build_scenario_set, scenario_distance, Scenario, ScenarioSet};

/// Smallest best/min-response gap counted as non-degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// Sum in ascending order so the result does not depend on scenario order.
fn ordered_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub u_avg: f64,
    pub u_min: f64,
    pub r_max: f64,
    pub scenario_set_name: String,
    pub scenario_ids: Vec<String>,
    pub utilities: Vec<f64>,
    pub regrets: Vec<f64>,
    /// Whether each scenario's best-response value is exact.
    pub exactness_flags: Vec<bool>,
}

impl MetricsRecord {
    pub fn all_exact(&self) -> bool {
        self.exactness_flags.iter().all(|&f| f)
    }
}

/// Mean and minimum utility and maximum regret of `policy` on the arena.
pub fn evaluate_metrics(policy: &StochasticPolicy, arena: &Arena) -> Result<MetricsRecord> {
    if arena.is_empty() {
        return Err(Error::InvalidConfig("empty scenario set".into()));
    }
    let utilities = arena.utilities(policy)?;
    let best = arena.best_responses()?;
    let regrets: Vec<f64> = best.iter().zip(&utilities).map(|(b, u)| b.value - u).collect();
    Ok(MetricsRecord {
        u_avg: ordered_sum(&utilities) / utilities.len() as f64,
        u_min: utilities.iter().copied().fold(f64::INFINITY, f64::min),
        r_max: regrets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        scenario_set_name: arena.name().to_string(),
        scenario_ids: arena.scenario_ids(),
        exactness_flags: best.iter().map(|b| b.exact).collect(),
        utilities,
        regrets,
    })
}

/// `count` partners, the `i`-th drawn from the epsilon-ball around base
/// policy `i mod |base|`. Ids are `test_0000`, `test_0001`, ... and each
/// entry's sub-population label is the id of its base policy.
pub fn generate_test_population(
    game: &RepeatedGame,
    base: &PolicySet,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<PolicySet> {
    if base.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    if count == 0 {
        return Err(Error::InvalidConfig("count must be at least 1".into()));
    }
    let tables: Vec<(String, StochasticPolicy)> = base
        .entries()
        .iter()
        .map(|e| Ok((e.id.clone(), e.policy.tabulate(game)?)))
        .collect::<Result<_>>()?;
    let width = (count - 1).to_string().len().max(4);
    let drawn: Vec<StochasticPolicy> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[tag::EPSILON_BALL, i as u64]);
            sample_epsilon_ball(&tables[i % tables.len()].1, epsilon, &mut r)
        })
        .collect::<Result<_>>()?;
    let mut out = PolicySet::new();
    for (i, p) in drawn.into_iter().enumerate() {
        let origin = tables[i % tables.len()].0.clone();
        out.insert(format!("test_{i:0width$}"), Policy::Stochastic(p), Some(origin))?;
    }
    Ok(out)
}

/// Test scenarios: every partner on its own (one focal copy, the partner
/// in every other seat) plus the universalisation scenario. A partner with
/// the same table and sub-population label as an earlier one repeats its
/// scenario and is listed once.
pub fn test_scenario_set(game: &RepeatedGame, partners: &PolicySet) -> Result<ScenarioSet> {
    if partners.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let m = game.num_players();
    let mut seen: Vec<(Option<&String>, StochasticPolicy)> = Vec::new();
    let mut scenarios = Vec::new();
    for e in partners.entries() {
        let key = (e.subpopulation.as_ref(), e.policy.tabulate(game)?);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        scenarios.push(Scenario::new(1, vec![e.id.clone(); m - 1]));
    }
    scenarios.push(Scenario::universalisation(m));
    ScenarioSet::new("test", m, scenarios)
}

/// Arena over [`test_scenario_set`].
pub fn test_arena(game: Arc<RepeatedGame>, partners: &PolicySet) -> Result<Arena> {
    let set = test_scenario_set(&game, partners)?;
    Arena::new(game, partners, &set)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonDegeneracyReport {
    pub scenario_ids: Vec<String>,
    pub best: Vec<f64>,
    pub worst: Vec<f64>,
    pub gaps: Vec<f64>,
    pub non_degenerative: bool,
}

/// Best/min-response gap for every scenario built from `population`.
pub fn check_non_degenerative(
    game: Arc<RepeatedGame>,
    population: &PolicySet,
    focal_counts: &[usize],
) -> Result<NonDegeneracyReport> {
    game.check_enumerable()?;
    let include_sp = focal_counts.contains(&game.num_players());
    let set = build_scenario_set("population", &game, population, include_sp, focal_counts)?;
    let arena = Arena::new(game, population, &set)?;
    let best: Vec<f64> = arena.best_responses()?.iter().map(|r| r.value).collect();
    let worst: Vec<f64> = arena.min_responses()?.iter().map(|r| r.value).collect();
    let gaps: Vec<f64> = best.iter().zip(&worst).map(|(b, w)| b - w).collect();
    Ok(NonDegeneracyReport {
        scenario_ids: arena.scenario_ids(),
        non_degenerative: gaps.iter().all(|&g| g > DEGENERACY_TOLERANCE),
        best,
        worst,
        gaps,
    })
}

/// A table with every row drawn uniformly from the simplex.
pub fn random_policy<R: Rng>(game: &RepeatedGame, rng: &mut R) -> StochasticPolicy {
    let n = game.num_actions();
    let mut probs = Vec::with_capacity(game.num_nodes() * n);
    for _ in 0..game.num_nodes() {
        let row: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let s: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / s));
    }
    StochasticPolicy::from_raw(n, probs)
}

/// Comparison of a robust policy's test-set value with the bound implied
/// by the training-set optimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustBoundCheck {
    /// Optimal training value (maximin utility or minimax regret).
    pub train_value: f64,
    /// False when `train_value` is the trained policy's own value rather
    /// than the exact optimum.
    pub train_value_exact: bool,
    pub test_value: f64,
    /// The test value must exceed (utility) or stay below (regret) this.
    pub threshold: f64,
    /// Distance to the threshold; positive when the bound holds.
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub epsilon: f64,
    pub utility_bound: f64,
    pub regret_bound: f64,
    pub pairs: usize,
    pub policies: usize,
    pub max_pair_distance: f64,
    pub max_utility_gap: f64,
    pub max_regret_gap: f64,
    pub utility_violations: usize,
    pub regret_violations: usize,
    pub maximin: Option<RobustBoundCheck>,
    pub minimax_regret: Option<RobustBoundCheck>,
}

impl AuditReport {
    pub fn holds(&self) -> bool {
        self.utility_violations == 0
            && self.regret_violations == 0
            && self.maximin.as_ref().is_none_or(|c| c.holds)
            && self.minimax_regret.as_ref().is_none_or(|c| c.holds)
    }
}

/// Match every test scenario with its closest training scenario of the
/// same focal count; errors when one is farther than `epsilon`.
pub fn match_scenarios(train: &Arena, test: &Arena, epsilon: f64) -> Result<Vec<(usize, usize, f64)>> {
    let game = train.game();
    test.scenarios()
        .par_iter()
        .enumerate()
        .map(|(ti, ts)| {
            let mut best: Option<(usize, f64)> = None;
            for (si, ss) in train.scenarios().iter().enumerate() {
                if ss.focal_count() != ts.focal_count() {
                    continue;
                }
                let d = scenario_distance(game, ss, ts)?;
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((si, d));
                }
            }
            match best {
                Some((si, d)) if d <= epsilon => Ok((si, ti, d)),
                Some((si, d)) => Err(Error::NotAnEpsilonNet(format!(
                    "test scenario {} is {d} away from the nearest training scenario {}",
                    ts.scenario.id(),
                    train.scenarios()[si].scenario.id()
                ))),
                None => Err(Error::NotAnEpsilonNet(format!(
                    "no training scenario with {} focal players for {}",
                    ts.focal_count(),
                    ts.scenario.id()
                ))),
            }
        })
        .collect()
}

/// Policies whose test-set robustness is checked against the training optimum.
#[derive(Debug, Clone, Default)]
pub struct RobustPolicies {
    pub maximin: Option<StochasticPolicy>,
    pub minimax_regret: Option<StochasticPolicy>,
}

/// Checks the perturbation bounds: for `num_policies` random policies and
/// every matched scenario pair, utilities differ by less than
/// `eps T^2 |r|/2` and regrets by less than `eps T^2 |r|`; the supplied
/// robust policies keep their training guarantees up to the same margins.
pub fn audit_epsilon_lemmas(
    train: &Arena,
    test: &Arena,
    epsilon: f64,
    num_policies: usize,
    seed: u64,
    robust: &RobustPolicies,
) -> Result<AuditReport> {
    let game = train.game();
    game.check_enumerable()?;
    let pairs = match_scenarios(train, test, epsilon)?;
    let t = game.horizon() as f64;
    let utility_bound = epsilon * t * t * game.reward_bound() / 2.0;
    let regret_bound = 2.0 * utility_bound;
    let within = |gap: f64, bound: f64| gap < bound || gap == 0.0;

    let train_best = train.best_values()?;
    let test_best = test.best_values()?;
    let gaps: Vec<(f64, f64, usize, usize)> = (0..num_policies)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[tag::AUDIT, i as u64]);
            let pi = random_policy(game, &mut r);
            let u_train = train.utilities(&pi)?;
            let u_test = test.utilities(&pi)?;
            let (mut du, mut dr, mut vu, mut vr) = (0.0f64, 0.0f64, 0, 0);
            for &(si, ti, _) in &pairs {
                let gu = (u_train[si] - u_test[ti]).abs();
                let gr = ((train_best[si] - u_train[si]) - (test_best[ti] - u_test[ti])).abs();
                du = du.max(gu);
                dr = dr.max(gr);
                vu += usize::from(!within(gu, utility_bound));
                vr += usize::from(!within(gr, regret_bound));
            }
            Ok((du, dr, vu, vr))
        })
        .collect::<Result<_>>()?;

    let single_focal = train.scenarios().iter().all(|s| s.focal_count() == 1);
    let maximin = match &robust.maximin {
        Some(p) => {
            let (train_value, exact) = if single_focal {
                (lp::maximin_value(train)?.value, true)
            } else {
                (evaluate_metrics(p, train)?.u_min, false)
            };
            let test_value = evaluate_metrics(p, test)?.u_min;
            let threshold = train_value - utility_bound;
            Some(RobustBoundCheck {
                train_value,
                train_value_exact: exact,
                test_value,
                threshold,
                slack: test_value - threshold,
                holds: test_value > threshold || (epsilon == 0.0 && test_value >= threshold),
            })
        }
        None => None,
    };
    let minimax_regret = match &robust.minimax_regret {
        Some(p) => {
            let (train_value, exact) = if single_focal {
                (lp::minimax_regret_value(train)?.value, true)
            } else {
                (evaluate_metrics(p, train)?.r_max, false)
            };
            let test_value = evaluate_metrics(p, test)?.r_max;
            let threshold = train_value + regret_bound;
            Some(RobustBoundCheck {
                train_value,
                train_value_exact: exact,
                test_value,
                threshold,
                slack: threshold - test_value,
                holds: test_value < threshold || (epsilon == 0.0 && test_value <= threshold),
            })
        }
        None => None,
    };

    Ok(AuditReport {
        epsilon,
        utility_bound,
        regret_bound,
        pairs: pairs.len(),
        policies: num_policies,
        max_pair_distance: pairs.iter().map(|p| p.2).fold(0.0, f64::max),
        max_utility_gap: gaps.iter().map(|g| g.0).fold(0.0, f64::max),
        max_regret_gap: gaps.iter().map(|g| g.1).fold(0.0, f64::max),
        utility_violations: gaps.iter().map(|g| g.2).sum(),
        regret_violations: gaps.iter().map(|g| g.3).sum(),
        maximin,
        minimax_regret,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub epsilon: f64,
    pub u_avg: f64,
    pub u_min: f64,
    pub r_max: f64,
}

/// Regenerate a test population for every epsilon and evaluate each policy on it.
pub fn sweep_epsilon(
    game: Arc<RepeatedGame>,
    policies: &[(String, StochasticPolicy)],
    base: &PolicySet,
    grid: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len() * policies.len());
    for &eps in grid {
        let partners = generate_test_population(&game, base, eps, count, seed)?;
        let arena = test_arena(game.clone(), &partners)?;
        for (name, p) in policies {
            let m = evaluate_metrics(p, &arena)?;
            rows.push(SweepRow {
                method: name.clone(),
                epsilon: eps,
                u_avg: m.u_avg,
                u_min: m.u_min,
                r_max: m.r_max,
            });
        }
    }
    Ok(rows)
}

/// Training arena for a population: all single-focal scenarios plus the
/// universalisation scenario.
pub fn training_arena(game: Arc<RepeatedGame>, population: &PolicySet) -> Result<Arena> {
    let m = game.num_players();
    let set = build_scenario_set("train", &game, population, true, &[1, m])?;
    Arena::new(game, population, &set)
}

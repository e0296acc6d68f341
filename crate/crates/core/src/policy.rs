//! Policy representations, the social/risk reward transform, and policy
//! distances with epsilon-ball sampling.
//!
//! Every policy can be *tabulated* for a given game: turned into a
//! [`StochasticPolicy`] holding one action distribution per history node
//! (in the acting seat's view). The exact evaluators only ever see tables.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{History, RepeatedGame};

const COOPERATE: usize = 0;
const DEFECT: usize = 1;

/// Hand-written partner behaviours for two-action games (action 0 is
/// cooperate, action 1 defect).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    PureCooperate,
    PureDefect,
    /// Opens with `start`, then copies the watched opponent's last action.
    TitForTat { start: usize },
    /// Opens with `start`, then plays the opposite of the opponent's last action.
    TatForTit { start: usize },
    /// Cooperates until the opponent defects once, then defects forever.
    CooperateUntilDefected,
    /// Defects until the opponent cooperates once, then cooperates forever.
    DefectUntilCooperated,
    Random,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::PureCooperate => "pure_cooperate",
            Rule::PureDefect => "pure_defect",
            Rule::TitForTat { .. } => "tit_for_tat",
            Rule::TatForTit { .. } => "tat_for_tit",
            Rule::CooperateUntilDefected => "cooperate_until_defected",
            Rule::DefectUntilCooperated => "defect_until_cooperated",
            Rule::Random => "random",
        }
    }

    pub fn start(&self) -> Option<usize> {
        match *self {
            Rule::TitForTat { start } | Rule::TatForTit { start } => Some(start),
            _ => None,
        }
    }

    pub fn from_name(name: &str, start: Option<usize>) -> Result<Self> {
        let needs_start = |start: Option<usize>| {
            start.ok_or_else(|| Error::InvalidPolicy(format!("rule `{name}` needs a start action")))
        };
        Ok(match name {
            "pure_cooperate" => Rule::PureCooperate,
            "pure_defect" => Rule::PureDefect,
            "tit_for_tat" => Rule::TitForTat {
                start: needs_start(start)?,
            },
            "tat_for_tit" => Rule::TatForTit {
                start: needs_start(start)?,
            },
            "cooperate_until_defected" => Rule::CooperateUntilDefected,
            "defect_until_cooperated" => Rule::DefectUntilCooperated,
            "random" => Rule::Random,
            other => return Err(Error::InvalidPolicy(format!("unknown rule `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RulePolicy {
    pub rule: Rule,
    /// Position, in the acting seat's view, of the opponent the rule reacts
    /// to. Position 0 is the actor itself, so this is at least 1.
    pub reacts_to: usize,
}

impl RulePolicy {
    pub fn new(rule: Rule) -> Self {
        Self { rule, reacts_to: 1 }
    }

    /// Action distribution for a history already expressed in the actor's view.
    fn act_view(&self, game: &RepeatedGame, view_steps: &[usize]) -> Result<Vec<f64>> {
        let n = game.num_actions();
        if self.rule == Rule::Random {
            return Ok(vec![1.0 / n as f64; n]);
        }
        if n != 2 {
            return Err(Error::InvalidPolicy(format!(
                "rule `{}` needs a two-action game",
                self.rule.name()
            )));
        }
        if self.reacts_to == 0 || self.reacts_to >= game.num_players() {
            return Err(Error::InvalidPolicy(format!(
                "reacts_to = {} is not an opponent position",
                self.reacts_to
            )));
        }
        let opponent = |j: usize| game.action_of(j, self.reacts_to);
        let action = match self.rule {
            Rule::PureCooperate => COOPERATE,
            Rule::PureDefect => DEFECT,
            Rule::TitForTat { start } => view_steps.last().map_or(start, |&j| opponent(j)),
            Rule::TatForTit { start } => view_steps.last().map_or(start, |&j| 1 - opponent(j)),
            Rule::CooperateUntilDefected => {
                if view_steps.iter().any(|&j| opponent(j) == DEFECT) {
                    DEFECT
                } else {
                    COOPERATE
                }
            }
            Rule::DefectUntilCooperated => {
                if view_steps.iter().any(|&j| opponent(j) == COOPERATE) {
                    COOPERATE
                } else {
                    DEFECT
                }
            }
            Rule::Random => unreachable!(),
        };
        let mut out = vec![0.0; n];
        out[action] = 1.0;
        Ok(out)
    }
}

/// A probability table with one row per history node.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    /// Validates that every row is a distribution (tolerance 1e-9).
    pub fn new(game: &RepeatedGame, probs: Vec<f64>) -> Result<Self> {
        let n = game.num_actions();
        if probs.len() != game.num_nodes() * n {
            return Err(Error::InvalidPolicy(format!(
                "table has {} entries, expected {} nodes x {} actions",
                probs.len(),
                game.num_nodes(),
                n
            )));
        }
        for (node, row) in probs.chunks(n).enumerate() {
            check_distribution(row).map_err(|reason| Error::InvalidDistribution {
                history: format!("node {node}"),
                reason,
            })?;
        }
        Ok(Self {
            num_actions: n,
            probs,
        })
    }

    pub(crate) fn from_raw(num_actions: usize, probs: Vec<f64>) -> Self {
        Self { num_actions, probs }
    }

    pub fn uniform(game: &RepeatedGame) -> Self {
        let n = game.num_actions();
        Self::from_raw(n, vec![1.0 / n as f64; game.num_nodes() * n])
    }

    /// Deterministic table playing `actions[node]` at every node.
    pub fn deterministic(game: &RepeatedGame, actions: &[usize]) -> Self {
        let n = game.num_actions();
        assert_eq!(actions.len(), game.num_nodes());
        let mut probs = vec![0.0; actions.len() * n];
        for (node, &a) in actions.iter().enumerate() {
            probs[node * n + a] = 1.0;
        }
        Self::from_raw(n, probs)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_nodes(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn row(&self, node: usize) -> &[f64] {
        &self.probs[node * self.num_actions..(node + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, node: usize, action: usize) -> f64 {
        self.probs[node * self.num_actions + action]
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("entry {p} is negative or not finite"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(format!("row sums to {s}"));
    }
    Ok(())
}

/// Tabular softmax policy with temperature 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    num_actions: usize,
    theta: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn zeros(game: &RepeatedGame) -> Self {
        Self {
            num_actions: game.num_actions(),
            theta: vec![0.0; game.num_nodes() * game.num_actions()],
        }
    }

    pub fn from_theta(game: &RepeatedGame, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != game.num_nodes() * game.num_actions() {
            return Err(Error::InvalidPolicy(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                game.num_nodes() * game.num_actions()
            )));
        }
        Ok(Self {
            num_actions: game.num_actions(),
            theta,
        })
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(game: &RepeatedGame, scale: f64, rng: &mut R) -> Self {
        let theta = (0..game.num_nodes() * game.num_actions())
            .map(|_| {
                if scale > 0.0 {
                    rng.random_range(-scale..=scale)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            num_actions: game.num_actions(),
            theta,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Current action probabilities at every node.
    pub fn table(&self) -> StochasticPolicy {
        let n = self.num_actions;
        let mut probs = vec![0.0; self.theta.len()];
        for (row, out) in self.theta.chunks(n).zip(probs.chunks_mut(n)) {
            softmax_into(row, out);
        }
        StochasticPolicy::from_raw(n, probs)
    }

    /// Frozen copy of the current action probabilities.
    pub fn snapshot(&self) -> StochasticPolicy {
        self.table()
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Rule(RulePolicy),
    Softmax(SoftmaxPolicy),
    Stochastic(StochasticPolicy),
}

impl From<Rule> for Policy {
    fn from(rule: Rule) -> Self {
        Policy::Rule(RulePolicy::new(rule))
    }
}

impl From<StochasticPolicy> for Policy {
    fn from(p: StochasticPolicy) -> Self {
        Policy::Stochastic(p)
    }
}

impl From<SoftmaxPolicy> for Policy {
    fn from(p: SoftmaxPolicy) -> Self {
        Policy::Softmax(p)
    }
}

impl Policy {
    /// Action distribution for the player in `seat` after `history`.
    pub fn act(&self, game: &RepeatedGame, history: &History, seat: usize) -> Result<Vec<f64>> {
        if history.len() >= game.horizon() {
            return Err(Error::InvalidPolicy(format!(
                "history of length {} has no decision left (horizon {})",
                history.len(),
                game.horizon()
            )));
        }
        match self {
            Policy::Rule(r) => r.act_view(game, history.view(game, seat).steps()),
            Policy::Softmax(p) => {
                check_table_shape(game, p.theta.len())?;
                let node = history.node_for(game, seat);
                let n = p.num_actions;
                let mut out = vec![0.0; n];
                softmax_into(&p.theta[node * n..(node + 1) * n], &mut out);
                Ok(out)
            }
            Policy::Stochastic(p) => {
                check_table_shape(game, p.probs.len())?;
                Ok(p.row(history.node_for(game, seat)).to_vec())
            }
        }
    }

    /// Tabulate over every history node of `game`.
    pub fn tabulate(&self, game: &RepeatedGame) -> Result<StochasticPolicy> {
        match self {
            Policy::Rule(r) => {
                let n = game.num_actions();
                let mut probs = vec![0.0; game.num_nodes() * n];
                for (node, h) in game.all_histories().iter().enumerate() {
                    probs[node * n..(node + 1) * n].copy_from_slice(&r.act_view(game, h.steps())?);
                }
                Ok(StochasticPolicy::from_raw(n, probs))
            }
            Policy::Softmax(p) => {
                check_table_shape(game, p.theta.len())?;
                Ok(p.table())
            }
            Policy::Stochastic(p) => {
                check_table_shape(game, p.probs.len())?;
                Ok(p.clone())
            }
        }
    }
}

fn check_table_shape(game: &RepeatedGame, len: usize) -> Result<()> {
    if len != game.num_nodes() * game.num_actions() {
        return Err(Error::InvalidPolicy(format!(
            "table with {len} entries does not cover the {} histories of this game",
            game.num_nodes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntry {
    pub id: String,
    pub policy: Policy,
    pub subpopulation: Option<String>,
}

/// Named, ordered collection of policies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicySet {
    entries: Vec<PolicyEntry>,
    index: HashMap<String, usize>,
}

impl PolicySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        id: impl Into<String>,
        policy: Policy,
        subpopulation: Option<String>,
    ) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.contains(',') || id.contains(':') {
            return Err(Error::InvalidPolicy(format!(
                "identifier {id:?} must be non-empty without ',' or ':'"
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidPolicy(format!("duplicate identifier `{id}`")));
        }
        self.index.insert(id.clone(), self.entries.len());
        self.entries.push(PolicyEntry {
            id,
            policy,
            subpopulation,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Result<&Policy> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i].policy)
            .ok_or_else(|| Error::UnknownPolicy(id.to_string()))
    }

    /// Tabulate every member for `game`, keyed by identifier.
    pub fn tabulate(&self, game: &RepeatedGame) -> Result<HashMap<String, Arc<StochasticPolicy>>> {
        self.entries
            .iter()
            .map(|e| {
                let t = e
                    .policy
                    .tabulate(game)
                    .map_err(|err| Error::InvalidPolicy(format!("`{}`: {err}", e.id)))?;
                Ok((e.id.clone(), Arc::new(t)))
            })
            .collect()
    }
}

/// Prosociality and risk-aversion preferences of a background learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialPrefs {
    pub lambda: f64,
    pub delta: f64,
}

impl SocialPrefs {
    pub const IDENTITY: SocialPrefs = SocialPrefs {
        lambda: 1.0,
        delta: 1.0,
    };
}

impl fmt::Display for SocialPrefs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lambda={} delta={}", self.lambda, self.delta)
    }
}

/// `lambda * r_i + (1 - lambda) * sum_j r_j`, with its negative part
/// scaled by `delta`.
pub fn social_risk_reward(
    game: &RepeatedGame,
    joint: usize,
    player: usize,
    prefs: SocialPrefs,
) -> f64 {
    let total: f64 = game.rewards(joint).iter().sum();
    let social = prefs.lambda * game.reward(joint, player) + (1.0 - prefs.lambda) * total;
    social.max(0.0) - prefs.delta * (-social).max(0.0)
}

/// Maximum over histories of the L1 distance between action distributions.
pub fn policy_distance(p1: &StochasticPolicy, p2: &StochasticPolicy) -> f64 {
    assert_eq!(p1.probs.len(), p2.probs.len(), "tables from different games");
    let n = p1.num_actions;
    p1.probs
        .chunks(n)
        .zip(p2.probs.chunks(n))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Draw a policy uniformly from the L1 ball of radius `epsilon` (strictly)
/// around `base`, independently at every history.
pub fn sample_epsilon_ball<R: Rng>(
    base: &StochasticPolicy,
    epsilon: f64,
    rng: &mut R,
) -> Result<StochasticPolicy> {
    if !(0.0..=2.0).contains(&epsilon) || epsilon.is_nan() {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    if epsilon == 0.0 {
        return Ok(base.clone());
    }
    let n = base.num_actions;
    let radius = epsilon * (1.0 - 1e-9);
    let mut probs = Vec::with_capacity(base.probs.len());
    for row in base.probs.chunks(n) {
        probs.extend(sample_row(row, radius, rng));
    }
    Ok(StochasticPolicy::from_raw(n, probs))
}

fn sample_row<R: Rng>(p: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let n = p.len();
    if n == 1 {
        return vec![1.0];
    }
    if n == 2 {
        // The ball is the interval |q0 - p0| < radius / 2 clipped to [0, 1].
        let half = radius / 2.0;
        let lo = (p[0] - half).max(0.0);
        let hi = (p[0] + half).min(1.0);
        let q0 = if hi > lo { rng.random_range(lo..hi) } else { p[0] };
        return vec![q0, 1.0 - q0];
    }
    // Rejection from the uniform distribution on the simplex is exactly
    // uniform on the intersection.
    for _ in 0..10_000 {
        let q = uniform_simplex(n, rng);
        if l1(&q, p) < radius {
            return q;
        }
    }
    // Tiny balls: shrink a uniform simplex point radially towards p.
    let q = uniform_simplex(n, rng);
    let d = l1(&q, p);
    let target = radius * rng.random::<f64>().powf(1.0 / (n - 1) as f64);
    let s = if d > 0.0 { (target / d).min(1.0) * (1.0 - 1e-12) } else { 0.0 };
    p.iter().zip(&q).map(|(a, b)| a + s * (b - a)).collect()
}

fn uniform_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

//! JSON and CSV formats for games, policies, populations, priors, solver
//! configs, traces and metrics.
//!
//! Floats are written in their shortest round-trip form so reloading a file
//! reproduces the exact values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluation::{MetricsRecord, SweepRow};
use crate::exact::{EvalReport, Prior};
use crate::game::RepeatedGame;
use crate::policy::{Policy, PolicySet, Rule, RulePolicy, StochasticPolicy};
use crate::solver::{SolverConfig, SolverTrace};

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    format_err(path, e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| json_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

// ---------------------------------------------------------------- games

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameFile {
    players: usize,
    actions: Vec<String>,
    /// Nested arrays indexed by each player's action, ending in one reward
    /// per player.
    payoffs: Value,
    horizon: usize,
    #[serde(default)]
    symmetric: bool,
}

pub fn game_from_json(text: &str, path: &Path) -> Result<RepeatedGame> {
    let file: GameFile = parse(path, text)?;
    let m = file.players;
    let n = file.actions.len();
    if m < 2 || n == 0 {
        return Err(format_err(path, "need at least two players and one action"));
    }
    let joint = n
        .checked_pow(m as u32)
        .ok_or_else(|| format_err(path, "too many joint actions"))?;
    let mut flat = Vec::with_capacity(joint * m);
    for j in 0..joint {
        let mut rest = j;
        let mut digits = vec![0; m];
        for d in digits.iter_mut().rev() {
            *d = rest % n;
            rest /= n;
        }
        let mut cell = &file.payoffs;
        for (depth, &a) in digits.iter().enumerate() {
            cell = cell.as_array().filter(|v| v.len() == n).map(|v| &v[a]).ok_or_else(|| {
                format_err(
                    path,
                    format!("payoffs at depth {depth} must be an array with one entry per action"),
                )
            })?;
        }
        let rewards = cell
            .as_array()
            .filter(|v| v.len() == m)
            .ok_or_else(|| format_err(path, format!("payoff cell {digits:?} must list {m} rewards")))?;
        for r in rewards {
            flat.push(
                r.as_f64()
                    .ok_or_else(|| format_err(path, format!("payoff cell {digits:?} has a non-number")))?,
            );
        }
    }
    RepeatedGame::new(m, file.actions, flat, file.horizon, file.symmetric)
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn game_to_json(game: &RepeatedGame) -> Value {
    let m = game.num_players();
    let n = game.num_actions();
    fn nest(game: &RepeatedGame, prefix: &mut Vec<usize>, m: usize, n: usize) -> Value {
        if prefix.len() == m {
            let j = game.encode(prefix);
            return Value::from(game.rewards(j).to_vec());
        }
        let mut out = Vec::with_capacity(n);
        for a in 0..n {
            prefix.push(a);
            out.push(nest(game, prefix, m, n));
            prefix.pop();
        }
        Value::Array(out)
    }
    let file = GameFile {
        players: m,
        actions: game.actions().to_vec(),
        payoffs: nest(game, &mut Vec::new(), m, n),
        horizon: game.horizon(),
        symmetric: game.is_symmetric(),
    };
    serde_json::to_value(file).expect("game serializes")
}

pub fn read_game(path: &Path) -> Result<RepeatedGame> {
    game_from_json(&read_text(path)?, path)
}

pub fn write_game(path: &Path, game: &RepeatedGame) -> Result<()> {
    write_json(path, &game_to_json(game))
}

// ------------------------------------------------------------- policies

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reacts_to: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<RuleParams>,
    /// History key (in the acting player's view) to action probabilities.
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<BTreeMap<String, Vec<f64>>>,
}

fn policy_from_file(game: &RepeatedGame, file: PolicyFile, path: &Path) -> Result<Policy> {
    match (file.rule, file.table) {
        (Some(name), None) => {
            let params = file.params.unwrap_or_default();
            let start = match params.start {
                Some(label) => Some(
                    game.action_index(&label)
                        .ok_or_else(|| format_err(path, format!("unknown start action `{label}`")))?,
                ),
                None => None,
            };
            let rule = Rule::from_name(&name, start).map_err(|e| format_err(path, e.to_string()))?;
            let reacts_to = params.reacts_to.unwrap_or(1);
            let policy = Policy::Rule(RulePolicy { rule, reacts_to });
            // Fail at load time rather than at first use.
            policy.tabulate(game).map_err(|e| format_err(path, e.to_string()))?;
            Ok(policy)
        }
        (None, Some(table)) => {
            if file.params.is_some() {
                return Err(format_err(path, "`params` only applies to rule policies"));
            }
            let n = game.num_actions();
            let mut probs = vec![f64::NAN; game.num_nodes() * n];
            for (key, row) in &table {
                let steps = game
                    .parse_history_key(key)
                    .filter(|s| s.len() < game.horizon())
                    .ok_or_else(|| format_err(path, format!("`{key}` is not a decision history of this game")))?;
                let node = steps.iter().fold(0, |node, &j| game.child(node, j));
                if row.len() != n {
                    return Err(format_err(path, format!("history `{key}` lists {} probabilities, expected {n}", row.len())));
                }
                probs[node * n..(node + 1) * n].copy_from_slice(row);
            }
            if let Some(node) = (0..game.num_nodes()).find(|&h| probs[h * n].is_nan()) {
                let key = game.history_key(game.all_histories()[node].steps());
                return Err(format_err(path, format!("table has no row for history `{key}`")));
            }
            let p = StochasticPolicy::new(game, probs).map_err(|e| format_err(path, e.to_string()))?;
            Ok(Policy::Stochastic(p))
        }
        _ => Err(format_err(path, "a policy has exactly one of `rule` or `table`")),
    }
}

fn policy_to_file(game: &RepeatedGame, policy: &Policy) -> Result<PolicyFile> {
    if let Policy::Rule(r) = policy {
        return Ok(PolicyFile {
            rule: Some(r.rule.name().to_string()),
            params: match (r.rule.start(), r.reacts_to) {
                (None, 1) => None,
                (start, reacts) => Some(RuleParams {
                    start: start.map(|a| game.actions()[a].clone()),
                    reacts_to: (reacts != 1).then_some(reacts),
                }),
            },
            table: None,
        });
    }
    let table = policy.tabulate(game)?;
    let rows = game
        .all_histories()
        .iter()
        .enumerate()
        .map(|(node, h)| (game.history_key(h.steps()), table.row(node).to_vec()))
        .collect();
    Ok(PolicyFile {
        rule: None,
        params: None,
        table: Some(rows),
    })
}

pub fn policy_from_json(game: &RepeatedGame, text: &str, path: &Path) -> Result<Policy> {
    policy_from_file(game, parse(path, text)?, path)
}

pub fn policy_to_json(game: &RepeatedGame, policy: &Policy) -> Result<Value> {
    Ok(serde_json::to_value(policy_to_file(game, policy)?)?)
}

pub fn read_policy(game: &RepeatedGame, path: &Path) -> Result<Policy> {
    policy_from_json(game, &read_text(path)?, path)
}

pub fn write_policy(path: &Path, game: &RepeatedGame, policy: &Policy) -> Result<()> {
    write_json(path, &policy_to_json(game, policy)?)
}

// ---------------------------------------------------------- populations

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationEntry {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subpopulation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyFile>,
    /// Policy file path, relative to the population file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationFile {
    policies: Vec<PopulationEntry>,
}

pub fn population_from_json(game: &RepeatedGame, text: &str, path: &Path) -> Result<PolicySet> {
    let file: PopulationFile = parse(path, text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut set = PolicySet::new();
    for e in file.policies {
        let policy = match (e.policy, e.file) {
            (Some(p), None) => policy_from_file(game, p, path).map_err(|err| match err {
                Error::Format { message, .. } => format_err(path, format!("policy `{}`: {message}", e.id)),
                other => other,
            })?,
            (None, Some(f)) => read_policy(game, &dir.join(f))?,
            _ => {
                return Err(format_err(
                    path,
                    format!("policy `{}` needs exactly one of `policy` or `file`", e.id),
                ))
            }
        };
        set.insert(e.id, policy, e.subpopulation)
            .map_err(|err| format_err(path, err.to_string()))?;
    }
    if set.is_empty() {
        return Err(format_err(path, "population lists no policies"));
    }
    Ok(set)
}

pub fn population_to_json(game: &RepeatedGame, set: &PolicySet) -> Result<Value> {
    let policies = set
        .entries()
        .iter()
        .map(|e| {
            Ok(PopulationEntry {
                id: e.id.clone(),
                subpopulation: e.subpopulation.clone(),
                policy: Some(policy_to_file(game, &e.policy)?),
                file: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(serde_json::to_value(PopulationFile { policies })?)
}

pub fn read_population(game: &RepeatedGame, path: &Path) -> Result<PolicySet> {
    population_from_json(game, &read_text(path)?, path)
}

pub fn write_population(path: &Path, game: &RepeatedGame, set: &PolicySet) -> Result<()> {
    write_json(path, &population_to_json(game, set)?)
}

// ---------------------------------------------------------------- priors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    pub scenario_set: String,
    pub scenarios: Vec<String>,
    pub weights: Vec<f64>,
}

impl PriorFile {
    pub fn prior(&self) -> Result<Prior> {
        if self.scenarios.len() != self.weights.len() {
            return Err(Error::PriorMismatch {
                expected: self.scenarios.len(),
                got: self.weights.len(),
            });
        }
        Prior::new(self.weights.clone())
    }
}

pub fn read_prior(path: &Path) -> Result<PriorFile> {
    let file: PriorFile = parse(path, &read_text(path)?)?;
    file.prior().map_err(|e| format_err(path, e.to_string()))?;
    Ok(file)
}

pub fn write_prior(path: &Path, file: &PriorFile) -> Result<()> {
    write_json(path, file)
}

// --------------------------------------------------------------- configs

pub fn read_config(path: &Path) -> Result<SolverConfig> {
    let cfg: SolverConfig = parse(path, &read_text(path)?)?;
    cfg.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(cfg)
}

pub fn write_config(path: &Path, cfg: &SolverConfig) -> Result<()> {
    write_json(path, cfg)
}

// ------------------------------------------------------------------ CSV

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Trace columns: `iter, beta_0.., bayes_utility, bayes_regret, u_min,
/// r_max, grad_norm_theta`. Priors narrower than the widest one (fictitious
/// play early on) are padded with zeros.
pub fn write_trace_csv<W: Write>(out: W, trace: &SolverTrace) -> Result<()> {
    let k = trace.beta_width();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string()];
    header.extend((0..k).map(|i| format!("beta_{i}")));
    header.extend(
        ["bayes_utility", "bayes_regret", "u_min", "r_max", "grad_norm_theta"].map(String::from),
    );
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.iter.to_string()];
        row.extend((0..k).map(|i| fmt_f64(r.beta.get(i).copied().unwrap_or(0.0))));
        row.extend(
            [r.bayes_utility, r.bayes_regret, r.u_min, r.r_max, r.grad_norm_theta].map(fmt_f64),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub beta: Vec<f64>,
    pub bayes_utility: f64,
    pub bayes_regret: f64,
    pub u_min: f64,
    pub r_max: f64,
    pub grad_norm_theta: f64,
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    if width < 6 {
        return Err(format_err(path, "trace needs at least six columns"));
    }
    let k = width - 6;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| format_err(path, format!("line {}: `{}` is not a number", line + 2, &rec[i])))
        };
        rows.push(TraceRow {
            iter: rec[0]
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad iteration", line + 2)))?,
            beta: (0..k).map(|i| num(1 + i)).collect::<Result<_>>()?,
            bayes_utility: num(k + 1)?,
            bayes_regret: num(k + 2)?,
            u_min: num(k + 3)?,
            r_max: num(k + 4)?,
            grad_norm_theta: num(k + 5)?,
        });
    }
    Ok(rows)
}

/// Columns `method, scenario_set, u_avg, u_min, r_max, exact_br`.
pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricsRecord)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "scenario_set", "u_avg", "u_min", "r_max", "exact_br"])?;
    for (method, m) in rows {
        w.write_record([
            method.clone(),
            m.scenario_set_name.clone(),
            fmt_f64(m.u_avg),
            fmt_f64(m.u_min),
            fmt_f64(m.r_max),
            m.all_exact().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `scenario_id, utility, best_response, exact_flag, regret`.
pub fn write_eval_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scenario_id", "utility", "best_response", "exact_flag", "regret"])?;
    for (k, id) in report.scenario_ids.iter().enumerate() {
        w.write_record([
            id.clone(),
            fmt_f64(report.per_scenario_utility[k]),
            fmt_f64(report.best_response[k].value),
            report.best_response[k].exact.to_string(),
            fmt_f64(report.per_scenario_regret[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `method, epsilon, u_avg, u_min, r_max`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "epsilon", "u_avg", "u_min", "r_max"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            fmt_f64(r.epsilon),
            fmt_f64(r.u_avg),
            fmt_f64(r.u_min),
            fmt_f64(r.r_max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write any serializable report as pretty JSON.
pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::{canonical_population, public_goods};
    use crate::rng;

    fn p() -> &'static Path {
        Path::new("mem.json")
    }

    #[test]
    fn game_round_trip() {
        for g in [RepeatedGame::prisoners_dilemma(3), public_goods(3, 2)] {
            let text = serde_json::to_string(&game_to_json(&g)).unwrap();
            let back = game_from_json(&text, p()).unwrap();
            assert_eq!(back, g);
        }
        let ipd = r#"{"players": 2, "actions": ["C", "D"],
            "payoffs": [[[4, 4], [0, 5]], [[5, 0], [1, 1]]], "horizon": 3, "symmetric": true}"#;
        assert_eq!(game_from_json(ipd, p()).unwrap(), RepeatedGame::prisoners_dilemma(3));
    }

    #[test]
    fn game_errors_point_at_the_problem() {
        let bad = "{\"players\": 2,\n \"actions\": [\"C\", \"D\"],\n \"horizon\": 3,\n}";
        let msg = game_from_json(bad, p()).unwrap_err().to_string();
        assert!(msg.contains("line 4 column 1"), "{msg}");
        let short = r#"{"players": 2, "actions": ["C", "D"], "payoffs": [[[4, 4], [0, 5]]], "horizon": 3}"#;
        assert!(game_from_json(short, p()).unwrap_err().to_string().contains("depth 0"));
        let asym = r#"{"players": 2, "actions": ["C", "D"],
            "payoffs": [[[4, 4], [0, 6]], [[5, 0], [1, 1]]], "horizon": 3, "symmetric": true}"#;
        assert!(game_from_json(asym, p()).is_err());
    }

    #[test]
    fn policy_round_trip_is_behavioural() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let mut r = rng::stream(1, &[]);
        let mut set = canonical_population();
        set.insert("table", Policy::Stochastic(crate::evaluation::random_policy(&g, &mut r)), Some("x".into()))
            .unwrap();
        let text = serde_json::to_string(&population_to_json(&g, &set).unwrap()).unwrap();
        let back = population_from_json(&g, &text, p()).unwrap();
        assert_eq!(back.len(), set.len());
        for (a, b) in set.entries().iter().zip(back.entries()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.subpopulation, b.subpopulation);
            for h in g.all_histories() {
                for seat in 0..2 {
                    assert_eq!(a.policy.act(&g, &h, seat).unwrap(), b.policy.act(&g, &h, seat).unwrap());
                }
            }
        }
    }

    #[test]
    fn policy_file_errors() {
        let g = RepeatedGame::prisoners_dilemma(2);
        assert!(policy_from_json(&g, r#"{"rule": "tit_for_tat"}"#, p()).is_err());
        assert!(policy_from_json(&g, r#"{"rule": "tit_for_tat", "params": {"start": "X"}}"#, p()).is_err());
        let missing = r#"{"table": {"": [0.5, 0.5]}}"#;
        assert!(policy_from_json(&g, missing, p()).unwrap_err().to_string().contains("no row"));
        let bad_row = r#"{"table": {"": [0.5, 0.6], "CC": [1, 0], "CD": [1, 0], "DC": [1, 0], "DD": [1, 0]}}"#;
        assert!(policy_from_json(&g, bad_row, p()).is_err());
        let ok = r#"{"table": {"": [0.5, 0.5], "CC": [1, 0], "CD": [0, 1], "DC": [1, 0], "DD": [0, 1]}}"#;
        let pol = policy_from_json(&g, ok, p()).unwrap();
        let tft = Policy::from(Rule::TitForTat { start: 0 }).tabulate(&g).unwrap();
        assert_eq!(pol.tabulate(&g).unwrap().row(3), tft.row(3));
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 7.5, 1.0 / 3.0, 1e-300, 123456789.123] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}

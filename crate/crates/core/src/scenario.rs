//! Scenarios: a focal-player count plus the background policies that fill
//! the remaining seats.
//!
//! Focal copies sit in seats `0..c`; background policies fill seats `c..m`
//! in vector order.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{next_permutation, History, RepeatedGame};
use crate::policy::{PolicySet, StochasticPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scenario {
    pub focal_count: usize,
    pub background: Vec<String>,
}

impl Scenario {
    pub fn new(focal_count: usize, background: Vec<String>) -> Self {
        Self {
            focal_count,
            background,
        }
    }

    /// All `m` seats held by focal copies.
    pub fn universalisation(num_players: usize) -> Self {
        Self::new(num_players, Vec::new())
    }

    pub fn is_universalisation(&self) -> bool {
        self.background.is_empty()
    }

    /// Stable textual identifier, e.g. `c1:tit_for_tat_c` or `c2:`.
    pub fn id(&self) -> String {
        format!("c{}:{}", self.focal_count, self.background.join(","))
    }

    pub fn parse_id(id: &str) -> Option<Self> {
        let rest = id.strip_prefix('c')?;
        let (c, bg) = rest.split_once(':')?;
        let focal_count = c.parse().ok()?;
        let background = if bg.is_empty() {
            Vec::new()
        } else {
            bg.split(',').map(str::to_string).collect()
        };
        Some(Self::new(focal_count, background))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Ordered, duplicate-free list of scenarios over one game.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub name: String,
    num_players: usize,
    scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn new(name: impl Into<String>, num_players: usize, scenarios: Vec<Scenario>) -> Result<Self> {
        for (k, s) in scenarios.iter().enumerate() {
            if s.focal_count == 0 || s.focal_count > num_players {
                return Err(Error::FocalCountOutOfRange {
                    count: s.focal_count,
                    players: num_players,
                });
            }
            if s.focal_count + s.background.len() != num_players {
                return Err(Error::InvalidConfig(format!(
                    "scenario {s} does not fill {num_players} seats"
                )));
            }
            if scenarios[..k].contains(s) {
                return Err(Error::InvalidConfig(format!("duplicate scenario {s}")));
            }
        }
        Ok(Self {
            name: name.into(),
            num_players,
            scenarios,
        })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn universalisation_index(&self) -> Option<usize> {
        self.scenarios.iter().position(Scenario::is_universalisation)
    }

    pub fn ids(&self) -> Vec<String> {
        self.scenarios.iter().map(Scenario::id).collect()
    }
}

/// Every scenario `(c, b)` with `c` in `focal_counts` and `b` a vector of
/// `m - c` population members, ordered by `c` then background identifiers.
/// The all-focal scenario is kept only when `include_universalisation` is set.
pub fn build_scenario_set(
    name: impl Into<String>,
    game: &RepeatedGame,
    population: &PolicySet,
    include_universalisation: bool,
    focal_counts: &[usize],
) -> Result<ScenarioSet> {
    let m = game.num_players();
    if population.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut counts = focal_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let mut ids: Vec<String> = population.ids().map(str::to_string).collect();
    ids.sort();
    let mut scenarios = Vec::new();
    for &c in &counts {
        if c == 0 || c > m {
            return Err(Error::FocalCountOutOfRange {
                count: c,
                players: m,
            });
        }
        if c == m {
            if include_universalisation {
                scenarios.push(Scenario::universalisation(m));
            }
            continue;
        }
        let slots = m - c;
        let n = ids.len();
        // Base-n counter over background vectors, last slot fastest.
        for code in 0..n.pow(slots as u32) {
            let mut background = vec![String::new(); slots];
            let mut rest = code;
            for slot in background.iter_mut().rev() {
                *slot = ids[rest % n].clone();
                rest /= n;
            }
            scenarios.push(Scenario::new(c, background));
        }
    }
    ScenarioSet::new(name, m, scenarios)
}

/// A scenario with its background policies tabulated.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    pub background: Vec<Arc<StochasticPolicy>>,
}

impl ResolvedScenario {
    pub fn focal_count(&self) -> usize {
        self.scenario.focal_count
    }

    pub fn resolve(
        scenario: &Scenario,
        tables: &HashMap<String, Arc<StochasticPolicy>>,
    ) -> Result<Self> {
        let background = scenario
            .background
            .iter()
            .map(|id| {
                tables
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownPolicy(id.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scenario: scenario.clone(),
            background,
        })
    }
}

/// Product distribution over the background seats' joint actions after
/// `history`, indexed with seat `c` as the most significant digit.
pub fn background_action_distribution(
    game: &RepeatedGame,
    scenario: &ResolvedScenario,
    history: &History,
) -> Result<Vec<f64>> {
    let c = scenario.focal_count();
    let m = game.num_players();
    if c >= m {
        return Err(Error::NoBackground);
    }
    if history.len() >= game.horizon() {
        return Err(Error::InvalidConfig("history leaves no decision".into()));
    }
    let n = game.num_actions();
    let rows: Vec<&[f64]> = scenario
        .background
        .iter()
        .enumerate()
        .map(|(k, t)| t.row(history.node_for(game, c + k)))
        .collect();
    let slots = m - c;
    let total = n.pow(slots as u32);
    let mut out = vec![1.0; total];
    for (idx, p) in out.iter_mut().enumerate() {
        let mut rest = idx;
        for k in (0..slots).rev() {
            *p *= rows[k][rest % n];
            rest /= n;
        }
    }
    Ok(out)
}

/// For each seat, the map from absolute history node to that seat's view node.
pub(crate) fn seat_node_maps(game: &RepeatedGame) -> Vec<Vec<usize>> {
    let histories = game.all_histories();
    (0..game.num_players())
        .map(|seat| histories.iter().map(|h| h.node_for(game, seat)).collect())
        .collect()
}

/// Distance between two policy vectors placed in the same seats: the
/// maximum over histories of the summed per-seat L1 gaps.
fn vector_distance(
    first_seat: usize,
    a: &[&StochasticPolicy],
    b: &[&StochasticPolicy],
    seat_nodes: &[Vec<usize>],
) -> f64 {
    let num_nodes = seat_nodes[0].len();
    (0..num_nodes)
        .map(|h| {
            a.iter()
                .zip(b)
                .enumerate()
                .map(|(k, (pa, pb))| {
                    let node = seat_nodes[first_seat + k][h];
                    pa.row(node)
                        .iter()
                        .zip(pb.row(node))
                        .map(|(x, y)| (x - y).abs())
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Minimum vector distance over permutations of both background vectors.
pub fn scenario_distance(
    game: &RepeatedGame,
    s1: &ResolvedScenario,
    s2: &ResolvedScenario,
) -> Result<f64> {
    if s1.focal_count() != s2.focal_count() {
        return Err(Error::FocalCountMismatch(s1.focal_count(), s2.focal_count()));
    }
    let k = s1.background.len();
    if k == 0 {
        return Ok(0.0);
    }
    let seat_nodes = seat_node_maps(game);
    let first = s1.focal_count();
    let mut best = f64::INFINITY;
    let mut p1: Vec<usize> = (0..k).collect();
    loop {
        let a: Vec<&StochasticPolicy> = p1.iter().map(|&i| s1.background[i].as_ref()).collect();
        let mut p2: Vec<usize> = (0..k).collect();
        loop {
            let b: Vec<&StochasticPolicy> =
                p2.iter().map(|&i| s2.background[i].as_ref()).collect();
            best = best.min(vector_distance(first, &a, &b, &seat_nodes));
            if !next_permutation(&mut p2) {
                break;
            }
        }
        if !next_permutation(&mut p1) {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Policy, Rule};

    fn pop(rules: &[(&str, Rule)]) -> PolicySet {
        let mut p = PolicySet::new();
        for (id, r) in rules {
            p.insert(*id, (*r).into(), None).unwrap();
        }
        p
    }

    fn nine() -> PolicySet {
        crate::canonical::canonical_population()
    }

    #[test]
    fn canonical_set_has_ten_scenarios() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let s = build_scenario_set("train", &g, &nine(), true, &[1, 2]).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.scenarios().iter().filter(|s| s.focal_count == 1).count(), 9);
        assert!(s.universalisation_index().is_some());
    }

    #[test]
    fn only_universalisation() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let p = pop(&[("a", Rule::Random)]);
        let s = build_scenario_set("sp", &g, &p, true, &[2]).unwrap();
        assert_eq!(s.scenarios(), &[Scenario::universalisation(2)]);
        let none = build_scenario_set("sp", &g, &p, false, &[2]).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn three_players_enumerate_ordered_backgrounds() {
        let g = crate::canonical::public_goods(3, 2);
        let p = pop(&[("b", Rule::PureDefect), ("a", Rule::Random)]);
        let s = build_scenario_set("x", &g, &p, false, &[1]).unwrap();
        // Brute force: all ordered pairs over the sorted ids.
        let mut expected = Vec::new();
        for x in ["a", "b"] {
            for y in ["a", "b"] {
                expected.push(Scenario::new(1, vec![x.into(), y.into()]));
            }
        }
        assert_eq!(s.scenarios(), expected.as_slice());
    }

    #[test]
    fn build_errors() {
        let g = RepeatedGame::prisoners_dilemma(3);
        assert!(matches!(
            build_scenario_set("x", &g, &PolicySet::new(), true, &[1]),
            Err(Error::EmptyPopulation)
        ));
        assert!(matches!(
            build_scenario_set("x", &g, &nine(), true, &[3]),
            Err(Error::FocalCountOutOfRange { .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let a = build_scenario_set("t", &g, &nine(), true, &[2, 1]).unwrap();
        let b = build_scenario_set("t", &g, &nine(), true, &[1, 2]).unwrap();
        assert_eq!(a, b);
        for s in a.scenarios() {
            assert_eq!(Scenario::parse_id(&s.id()).as_ref(), Some(s));
        }
    }

    fn resolve(g: &RepeatedGame, p: &PolicySet, s: Scenario) -> ResolvedScenario {
        ResolvedScenario::resolve(&s, &p.tabulate(g).unwrap()).unwrap()
    }

    #[test]
    fn background_distributions() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let p = nine();
        let tft = resolve(&g, &p, Scenario::new(1, vec!["tit_for_tat_c".into()]));
        assert_eq!(
            background_action_distribution(&g, &tft, &History::default()).unwrap(),
            vec![1.0, 0.0]
        );
        let rnd = resolve(&g, &p, Scenario::new(1, vec!["random".into()]));
        let h = History::from_actions(&g, &[vec![1, 0]]).unwrap();
        assert_eq!(background_action_distribution(&g, &rnd, &h).unwrap(), vec![0.5, 0.5]);
        let sp = resolve(&g, &p, Scenario::universalisation(2));
        assert!(matches!(
            background_action_distribution(&g, &sp, &h),
            Err(Error::NoBackground)
        ));

        let g3 = crate::canonical::public_goods(3, 2);
        let p3 = pop(&[("r", Rule::Random)]);
        let two = resolve(&g3, &p3, Scenario::new(1, vec!["r".into(), "r".into()]));
        assert_eq!(
            background_action_distribution(&g3, &two, &History::default()).unwrap(),
            vec![0.25; 4]
        );
    }

    #[test]
    fn scenario_distance_examples() {
        let g3 = crate::canonical::public_goods(3, 2);
        let p = pop(&[("c", Rule::PureCooperate), ("d", Rule::PureDefect)]);
        let ab = resolve(&g3, &p, Scenario::new(1, vec!["c".into(), "d".into()]));
        let ba = resolve(&g3, &p, Scenario::new(1, vec!["d".into(), "c".into()]));
        assert_eq!(scenario_distance(&g3, &ab, &ba).unwrap(), 0.0);

        let g = RepeatedGame::prisoners_dilemma(3);
        let c = resolve(&g, &p, Scenario::new(1, vec!["c".into()]));
        let d = resolve(&g, &p, Scenario::new(1, vec!["d".into()]));
        assert_eq!(scenario_distance(&g, &c, &d).unwrap(), 2.0);
        let sp = resolve(&g, &p, Scenario::universalisation(2));
        assert_eq!(scenario_distance(&g, &sp, &sp).unwrap(), 0.0);
        assert!(matches!(
            scenario_distance(&g, &sp, &c),
            Err(Error::FocalCountMismatch(2, 1))
        ));
        // Single background reduces to the policy distance.
        let t1 = Policy::from(Rule::PureCooperate).tabulate(&g).unwrap();
        let t2 = Policy::from(Rule::PureDefect).tabulate(&g).unwrap();
        assert_eq!(
            scenario_distance(&g, &c, &d).unwrap(),
            crate::policy::policy_distance(&t1, &t2)
        );
    }
}

//! The nine hand-written Prisoner's Dilemma partners and small reference games.

use crate::error::{Error, Result};
use crate::game::RepeatedGame;
use crate::policy::{PolicySet, Rule};

pub const CANONICAL_SET: &str = "canonical9";

const C: usize = 0;
const D: usize = 1;

/// `(identifier, rule)` for the nine canonical partners.
pub fn canonical_rules() -> [(&'static str, Rule); 9] {
    [
        ("pure_cooperate", Rule::PureCooperate),
        ("pure_defect", Rule::PureDefect),
        ("tit_for_tat_c", Rule::TitForTat { start: C }),
        ("tit_for_tat_d", Rule::TitForTat { start: D }),
        ("tat_for_tit_c", Rule::TatForTit { start: C }),
        ("tat_for_tit_d", Rule::TatForTit { start: D }),
        ("cooperate_until_defected", Rule::CooperateUntilDefected),
        ("defect_until_cooperated", Rule::DefectUntilCooperated),
        ("random", Rule::Random),
    ]
}

pub fn canonical_population() -> PolicySet {
    let mut set = PolicySet::new();
    for (id, rule) in canonical_rules() {
        set.insert(id, rule.into(), Some(CANONICAL_SET.to_string()))
            .expect("canonical identifiers are unique");
    }
    set
}

/// The canonical population for `game`, which must be a two-player game
/// with actions labelled `C` and `D`.
pub fn canonical_population_for(game: &RepeatedGame) -> Result<PolicySet> {
    if game.num_players() != 2 || game.actions() != ["C", "D"] {
        return Err(Error::InvalidGame(format!(
            "{CANONICAL_SET} needs a two-player game with actions [C, D], got {} players with {:?}",
            game.num_players(),
            game.actions()
        )));
    }
    Ok(canonical_population())
}

/// Symmetric linear public-goods game: contributing (action 0) costs 1 and
/// adds `2 / m` to every player's reward.
pub fn public_goods(players: usize, horizon: usize) -> RepeatedGame {
    let k = 1usize << players;
    let mut flat = Vec::with_capacity(k * players);
    for j in 0..k {
        let acts: Vec<usize> = (0..players).map(|i| (j >> (players - 1 - i)) & 1).collect();
        let contributors = acts.iter().filter(|&&a| a == 0).count() as f64;
        for &a in &acts {
            let cost = if a == 0 { 1.0 } else { 0.0 };
            flat.push(2.0 * contributors / players as f64 - cost);
        }
    }
    RepeatedGame::new(players, vec!["C".into(), "D".into()], flat, horizon, true)
        .expect("public goods game is well formed")
}

/// Every joint action pays every player `value`.
pub fn constant_game(value: f64, horizon: usize) -> RepeatedGame {
    RepeatedGame::two_player(
        &["C", "D"],
        &[
            vec![(value, value), (value, value)],
            vec![(value, value), (value, value)],
        ],
        horizon,
        true,
    )
    .expect("constant game is well formed")
}

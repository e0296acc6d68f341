//! Finite-horizon repeated normal-form games.
//!
//! The state of a repeated matrix game is its joint-action history, so every
//! history-dependent object in the crate (policy tables, value functions,
//! gradients) is indexed by a *history node*: histories of length `0..T`
//! are laid out as a complete `K`-ary tree (`K` = number of joint actions)
//! with the root at `0` and the child of node `n` under joint action `j` at
//! `n * K + j + 1`.
//!
//! Players see the history from their own seat: in player `i`'s view every
//! joint action is reordered as `(a_i, a_others...)` with the other players
//! in ascending index order. Policies are always tabulated over this view,
//! which is what lets one table act from any seat of a symmetric game.

use crate::error::{Error, Result};

/// Upper bound on players; keeps per-node scratch in fixed arrays.
pub const MAX_PLAYERS: usize = 8;

/// Largest number of leaves (`K^T`) exact enumeration will walk.
pub const MAX_LEAVES: f64 = 1e7;

pub type Nodes = [usize; MAX_PLAYERS];

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedGame {
    num_players: usize,
    actions: Vec<String>,
    /// `payoff[j * m + i]` is player `i`'s reward under joint action `j`.
    payoff: Vec<f64>,
    horizon: usize,
    reward_bound: f64,
    symmetric: bool,
    num_joint: usize,
    /// `decoded[j * m + i]` is player `i`'s action in joint action `j`.
    decoded: Vec<usize>,
    /// `view[i * K + j]` is joint action `j` as seen from seat `i`.
    view: Vec<usize>,
    num_nodes: usize,
}

impl RepeatedGame {
    /// Build a game from a flat payoff table indexed by joint action
    /// (player 0's action most significant).
    pub fn new(
        num_players: usize,
        actions: Vec<String>,
        payoff: Vec<f64>,
        horizon: usize,
        symmetric: bool,
    ) -> Result<Self> {
        if !(2..=MAX_PLAYERS).contains(&num_players) {
            return Err(Error::InvalidGame(format!(
                "player count {num_players} outside [2, {MAX_PLAYERS}]"
            )));
        }
        if actions.is_empty() {
            return Err(Error::InvalidGame("no actions".into()));
        }
        for (k, a) in actions.iter().enumerate() {
            if a.is_empty() || a.contains('|') {
                return Err(Error::InvalidGame(format!("bad action label {a:?}")));
            }
            if actions[..k].contains(a) {
                return Err(Error::InvalidGame(format!("duplicate action label {a:?}")));
            }
        }
        if horizon == 0 {
            return Err(Error::InvalidGame("horizon must be at least 1".into()));
        }
        let n = actions.len();
        let num_joint = n
            .checked_pow(num_players as u32)
            .ok_or_else(|| Error::InvalidGame("joint action space too large".into()))?;
        if payoff.len() != num_joint * num_players {
            return Err(Error::InvalidGame(format!(
                "payoff table has {} entries, expected {}",
                payoff.len(),
                num_joint * num_players
            )));
        }
        if let Some(x) = payoff.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidGame(format!("non-finite payoff {x}")));
        }
        let reward_bound = payoff.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));

        let mut decoded = vec![0; num_joint * num_players];
        for j in 0..num_joint {
            let mut rest = j;
            for i in (0..num_players).rev() {
                decoded[j * num_players + i] = rest % n;
                rest /= n;
            }
        }

        let nodes = (0..horizon).try_fold(0usize, |acc, d| {
            num_joint.checked_pow(d as u32).and_then(|p| acc.checked_add(p))
        });

        let mut game = RepeatedGame {
            num_players,
            actions,
            payoff,
            horizon,
            reward_bound,
            symmetric,
            num_joint,
            decoded,
            view: Vec::new(),
            num_nodes: nodes.unwrap_or(usize::MAX),
        };
        let mut view = vec![0; num_players * num_joint];
        let mut buf = vec![0; num_players];
        for i in 0..num_players {
            for j in 0..num_joint {
                let acts = game.joint_actions(j);
                buf[0] = acts[i];
                let mut k = 1;
                for (p, &a) in acts.iter().enumerate() {
                    if p != i {
                        buf[k] = a;
                        k += 1;
                    }
                }
                view[i * num_joint + j] = game.encode(&buf);
            }
        }
        game.view = view;
        if symmetric {
            game.check_symmetry()?;
        }
        Ok(game)
    }

    /// Two-player game from a row-major matrix of `(r0, r1)` pairs.
    pub fn two_player(
        actions: &[&str],
        payoffs: &[Vec<(f64, f64)>],
        horizon: usize,
        symmetric: bool,
    ) -> Result<Self> {
        let mut flat = Vec::new();
        for row in payoffs {
            for &(a, b) in row {
                flat.push(a);
                flat.push(b);
            }
        }
        Self::new(
            2,
            actions.iter().map(|s| s.to_string()).collect(),
            flat,
            horizon,
            symmetric,
        )
    }

    /// The Prisoner's Dilemma with payoffs (C,C)=(4,4), (C,D)=(0,5),
    /// (D,C)=(5,0), (D,D)=(1,1).
    pub fn prisoners_dilemma(horizon: usize) -> Self {
        Self::two_player(
            &["C", "D"],
            &[
                vec![(4.0, 4.0), (0.0, 5.0)],
                vec![(5.0, 0.0), (1.0, 1.0)],
            ],
            horizon,
            true,
        )
        .expect("prisoner's dilemma is well formed")
    }

    fn check_symmetry(&self) -> Result<()> {
        let m = self.num_players;
        let mut perm: Vec<usize> = (0..m).collect();
        let mut permuted = vec![0; m];
        loop {
            for j in 0..self.num_joint {
                let acts = self.joint_actions(j);
                // Player perm[i] takes the seat of player i.
                for i in 0..m {
                    permuted[perm[i]] = acts[i];
                }
                let pj = self.encode(&permuted);
                for i in 0..m {
                    let lhs = self.reward(pj, perm[i]);
                    let rhs = self.reward(j, i);
                    if (lhs - rhs).abs() > 1e-12 {
                        return Err(Error::InvalidGame(format!(
                            "flagged symmetric but permuting players {perm:?} changes rewards at joint action {j}"
                        )));
                    }
                }
            }
            if !next_permutation(&mut perm) {
                return Ok(());
            }
        }
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of joint actions `|A|^m`.
    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    /// Number of decision nodes (histories of length `0..T`).
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Leaf count of the full history tree, `K^T`.
    pub fn leaf_count(&self) -> f64 {
        (self.num_joint as f64).powi(self.horizon as i32)
    }

    /// Fails when the history tree is too large to walk exactly.
    pub fn check_enumerable(&self) -> Result<()> {
        let leaves = self.leaf_count();
        if leaves > MAX_LEAVES {
            return Err(Error::EnumerationTooLarge {
                leaves,
                limit: MAX_LEAVES,
            });
        }
        Ok(())
    }

    pub fn reward(&self, joint: usize, player: usize) -> f64 {
        self.payoff[joint * self.num_players + player]
    }

    pub fn rewards(&self, joint: usize) -> &[f64] {
        &self.payoff[joint * self.num_players..(joint + 1) * self.num_players]
    }

    pub fn joint_actions(&self, joint: usize) -> &[usize] {
        &self.decoded[joint * self.num_players..(joint + 1) * self.num_players]
    }

    pub fn action_of(&self, joint: usize, player: usize) -> usize {
        self.decoded[joint * self.num_players + player]
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        let n = self.actions.len();
        actions.iter().fold(0, |acc, &a| acc * n + a)
    }

    /// Joint action `joint` re-expressed from `seat`'s point of view.
    #[inline]
    pub fn view_of(&self, seat: usize, joint: usize) -> usize {
        self.view[seat * self.num_joint + joint]
    }

    #[inline]
    pub fn child(&self, node: usize, joint: usize) -> usize {
        node * self.num_joint + joint + 1
    }

    /// Per-capita reward of the players in `focal`.
    pub fn per_capita_reward(&self, joint: usize, focal: &[usize]) -> f64 {
        assert!(!focal.is_empty(), "at least one focal player required");
        focal.iter().map(|&i| self.reward(joint, i)).sum::<f64>() / focal.len() as f64
    }

    /// Per-capita reward of seats `0..c` for every joint action.
    pub fn focal_reward_vector(&self, focal_count: usize) -> Vec<f64> {
        let focal: Vec<usize> = (0..focal_count).collect();
        (0..self.num_joint)
            .map(|j| self.per_capita_reward(j, &focal))
            .collect()
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == label)
    }

    /// Every history of length `< T`, in node order.
    pub fn all_histories(&self) -> Vec<History> {
        let mut out = vec![History::default(); self.num_nodes];
        let mut stack = vec![History::default()];
        while let Some(h) = stack.pop() {
            let node = h.node(self);
            if h.len() + 1 < self.horizon {
                for j in 0..self.num_joint {
                    stack.push(h.extended(j));
                }
            }
            out[node] = h;
        }
        out
    }

    /// Render a seat-relative history as the `a1a2|a1a2|...` key used in
    /// policy files.
    pub fn history_key(&self, steps: &[usize]) -> String {
        steps
            .iter()
            .map(|&j| {
                self.joint_actions(j)
                    .iter()
                    .map(|&a| self.actions[a].as_str())
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Parse a history key back into joint-action indices.
    pub fn parse_history_key(&self, key: &str) -> Option<Vec<usize>> {
        if key.is_empty() {
            return Some(Vec::new());
        }
        key.split('|')
            .map(|step| {
                let mut rest = step;
                let mut acts = Vec::with_capacity(self.num_players);
                while !rest.is_empty() {
                    let a = self
                        .actions
                        .iter()
                        .position(|l| rest.starts_with(l.as_str()))?;
                    acts.push(a);
                    rest = &rest[self.actions[a].len()..];
                }
                (acts.len() == self.num_players).then(|| self.encode(&acts))
            })
            .collect()
    }
}

/// A joint-action history in absolute seat order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct History {
    steps: Vec<usize>,
}

impl History {
    pub fn new(steps: Vec<usize>) -> Self {
        Self { steps }
    }

    /// Build from per-step action tuples.
    pub fn from_actions(game: &RepeatedGame, steps: &[Vec<usize>]) -> Result<Self> {
        let mut out = Vec::with_capacity(steps.len());
        for s in steps {
            if s.len() != game.num_players() || s.iter().any(|&a| a >= game.num_actions()) {
                return Err(Error::InvalidGame(format!("invalid joint action {s:?}")));
            }
            out.push(game.encode(s));
        }
        if out.len() > game.horizon() {
            return Err(Error::InvalidGame(format!(
                "history of length {} exceeds horizon {}",
                out.len(),
                game.horizon()
            )));
        }
        Ok(Self { steps: out })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn extended(&self, joint: usize) -> Self {
        let mut steps = self.steps.clone();
        steps.push(joint);
        Self { steps }
    }

    /// Node index of this history in absolute order.
    pub fn node(&self, game: &RepeatedGame) -> usize {
        self.steps.iter().fold(0, |n, &j| game.child(n, j))
    }

    /// The history as seen from `seat`.
    pub fn view(&self, game: &RepeatedGame, seat: usize) -> Self {
        Self {
            steps: self.steps.iter().map(|&j| game.view_of(seat, j)).collect(),
        }
    }

    /// Node index of this history in `seat`'s view.
    pub fn node_for(&self, game: &RepeatedGame, seat: usize) -> usize {
        self.steps
            .iter()
            .fold(0, |n, &j| game.child(n, game.view_of(seat, j)))
    }
}

/// Lexicographic next permutation; false once the last one was reached.
pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

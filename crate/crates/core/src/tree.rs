//! Walks over the joint-action history tree.
//!
//! Each seat acts from its own table (indexed by its view node). The
//! objective is a scalar reward per joint action, summed over the horizon.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{History, Nodes, RepeatedGame, MAX_PLAYERS};
use crate::policy::StochasticPolicy;

/// One complete play of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub history: History,
    pub probability: f64,
    /// Objective reward collected at each step.
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Max,
    Min,
}

impl Extremum {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Extremum::Max => a > b,
            Extremum::Min => a < b,
        }
    }
}

/// Seat tables plus the per-joint-action objective.
pub struct Walker<'a> {
    game: &'a RepeatedGame,
    seats: Vec<&'a [f64]>,
    reward: &'a [f64],
    n: usize,
    k: usize,
    m: usize,
}

impl<'a> Walker<'a> {
    pub fn new(game: &'a RepeatedGame, seats: &[&'a StochasticPolicy], reward: &'a [f64]) -> Self {
        assert_eq!(seats.len(), game.num_players(), "one table per seat");
        assert_eq!(reward.len(), game.num_joint());
        for s in seats {
            assert_eq!(s.num_nodes(), game.num_nodes(), "table from a different game");
        }
        Self {
            game,
            seats: seats.iter().map(|s| s.probs()).collect(),
            reward,
            n: game.num_actions(),
            k: game.num_joint(),
            m: game.num_players(),
        }
    }

    #[inline]
    fn joint_prob(&self, nodes: &Nodes, j: usize) -> f64 {
        let mut p = 1.0;
        for s in 0..self.m {
            p *= self.seats[s][nodes[s] * self.n + self.game.action_of(j, s)];
            if p == 0.0 {
                break;
            }
        }
        p
    }

    /// Joint probability with seat `skip` treated as certain.
    #[inline]
    fn joint_prob_without(&self, nodes: &Nodes, j: usize, skip: usize) -> f64 {
        let mut p = 1.0;
        for s in 0..self.m {
            if s != skip {
                p *= self.seats[s][nodes[s] * self.n + self.game.action_of(j, s)];
                if p == 0.0 {
                    break;
                }
            }
        }
        p
    }

    #[inline]
    fn children(&self, nodes: &Nodes, j: usize) -> Nodes {
        let mut child = [0; MAX_PLAYERS];
        for s in 0..self.m {
            child[s] = self.game.child(nodes[s], self.game.view_of(s, j));
        }
        child
    }

    /// Expected total objective reward.
    pub fn expected_return(&self) -> f64 {
        self.value_rec(0, [0; MAX_PLAYERS])
    }

    fn value_rec(&self, depth: usize, nodes: Nodes) -> f64 {
        let last = depth + 1 == self.game.horizon();
        let mut v = 0.0;
        for j in 0..self.k {
            let p = self.joint_prob(&nodes, j);
            if p == 0.0 {
                continue;
            }
            let mut q = self.reward[j];
            if !last {
                q += self.value_rec(depth + 1, self.children(&nodes, j));
            }
            v += p * q;
        }
        v
    }

    /// Expected return and its gradient with respect to the softmax logits
    /// of `diff_table`, which drives every seat in `diff_seats`. The
    /// gradient is accumulated into `grad`.
    pub fn return_and_gradient(
        &self,
        diff_seats: &[usize],
        diff_table: &StochasticPolicy,
        grad: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), diff_table.probs().len());
        let mut scratch = vec![0.0; 2 * self.k * self.game.horizon()];
        let ctx = GradCtx {
            diff_seats,
            diff: diff_table.probs(),
        };
        self.grad_rec(0, [0; MAX_PLAYERS], 1.0, &ctx, &mut scratch, grad)
    }

    fn grad_rec(
        &self,
        depth: usize,
        nodes: Nodes,
        reach: f64,
        ctx: &GradCtx<'_>,
        scratch: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let last = depth + 1 == self.game.horizon();
        let (mine, rest) = scratch.split_at_mut(2 * self.k);
        let (ps, qs) = mine.split_at_mut(self.k);
        let mut v = 0.0;
        for j in 0..self.k {
            let p = self.joint_prob(&nodes, j);
            ps[j] = p;
            if p == 0.0 {
                continue;
            }
            let mut q = self.reward[j];
            if !last {
                q += self.grad_rec(depth + 1, self.children(&nodes, j), reach * p, ctx, rest, grad);
            }
            qs[j] = q;
            v += p * q;
        }
        let n = self.n;
        for j in 0..self.k {
            if ps[j] == 0.0 {
                continue;
            }
            let w = reach * ps[j] * qs[j];
            for &s in ctx.diff_seats {
                let node = nodes[s];
                let a = self.game.action_of(j, s);
                let row = &ctx.diff[node * n..(node + 1) * n];
                let g = &mut grad[node * n..(node + 1) * n];
                for b in 0..n {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    g[b] += w * (indicator - row[b]);
                }
            }
        }
        v
    }

    /// Every positive-probability play of the game.
    pub fn trajectories(&self) -> Result<Vec<Trajectory>> {
        self.game.check_enumerable()?;
        let mut out = Vec::new();
        let mut steps = Vec::with_capacity(self.game.horizon());
        let mut rewards = Vec::with_capacity(self.game.horizon());
        self.traj_rec([0; MAX_PLAYERS], 1.0, &mut steps, &mut rewards, &mut out)?;
        Ok(out)
    }

    fn traj_rec(
        &self,
        nodes: Nodes,
        prob: f64,
        steps: &mut Vec<usize>,
        rewards: &mut Vec<f64>,
        out: &mut Vec<Trajectory>,
    ) -> Result<()> {
        if steps.len() == self.game.horizon() {
            out.push(Trajectory {
                history: History::new(steps.clone()),
                probability: prob,
                rewards: rewards.clone(),
            });
            return Ok(());
        }
        for s in 0..self.m {
            let row = &self.seats[s][nodes[s] * self.n..(nodes[s] + 1) * self.n];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidDistribution {
                    history: self.game.history_key(steps),
                    reason: format!("seat {s} emits {row:?}"),
                });
            }
        }
        for j in 0..self.k {
            let p = self.joint_prob(&nodes, j);
            if p == 0.0 {
                continue;
            }
            steps.push(j);
            rewards.push(self.reward[j]);
            self.traj_rec(self.children(&nodes, j), prob * p, steps, rewards, out)?;
            steps.pop();
            rewards.pop();
        }
        Ok(())
    }

    /// Backward induction for a single controlled seat; the other seats
    /// follow their tables. Returns the optimal value and the optimal
    /// action at every view node of the controlled seat (0 where the
    /// node is unreachable).
    pub fn optimize_seat(&self, seat: usize, ext: Extremum) -> (f64, Vec<usize>) {
        let mut plan = vec![0; self.game.num_nodes()];
        let v = self.opt_rec(0, [0; MAX_PLAYERS], seat, ext, &mut plan);
        (v, plan)
    }

    fn opt_rec(
        &self,
        depth: usize,
        nodes: Nodes,
        seat: usize,
        ext: Extremum,
        plan: &mut [usize],
    ) -> f64 {
        let last = depth + 1 == self.game.horizon();
        let mut per_action = vec![0.0; self.n];
        for j in 0..self.k {
            let p = self.joint_prob_without(&nodes, j, seat);
            if p == 0.0 {
                continue;
            }
            let mut q = self.reward[j];
            if !last {
                q += self.opt_rec(depth + 1, self.children(&nodes, j), seat, ext, plan);
            }
            per_action[self.game.action_of(j, seat)] += p * q;
        }
        let mut best = 0;
        for a in 1..self.n {
            if ext.better(per_action[a], per_action[best]) {
                best = a;
            }
        }
        plan[nodes[seat]] = best;
        per_action[best]
    }

    /// Coefficients `w[node * n + a]` such that the expected return equals
    /// `sum w * x` for any realization plan `x` of `seat` (its own table is
    /// ignored).
    pub fn sequence_weights(&self, seat: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.game.num_nodes() * self.n];
        self.seq_rec(0, [0; MAX_PLAYERS], 1.0, seat, &mut w);
        w
    }

    fn seq_rec(&self, depth: usize, nodes: Nodes, reach: f64, seat: usize, w: &mut [f64]) {
        let last = depth + 1 == self.game.horizon();
        for j in 0..self.k {
            let p = self.joint_prob_without(&nodes, j, seat);
            if p == 0.0 {
                continue;
            }
            w[nodes[seat] * self.n + self.game.action_of(j, seat)] += reach * p * self.reward[j];
            if !last {
                self.seq_rec(depth + 1, self.children(&nodes, j), reach * p, seat, w);
            }
        }
    }

    /// Sample one play; seats in `diff_seats` record the `(view node,
    /// action)` pairs they chose, for likelihood-ratio gradients.
    pub fn sample<R: Rng>(
        &self,
        rng: &mut R,
        diff_seats: &[usize],
        choices: &mut Vec<(usize, usize)>,
    ) -> f64 {
        let mut nodes: Nodes = [0; MAX_PLAYERS];
        let mut acts = [0usize; MAX_PLAYERS];
        let mut total = 0.0;
        choices.clear();
        for _ in 0..self.game.horizon() {
            for s in 0..self.m {
                let row = &self.seats[s][nodes[s] * self.n..(nodes[s] + 1) * self.n];
                acts[s] = sample_index(row, rng);
            }
            let j = self.game.encode(&acts[..self.m]);
            for &s in diff_seats {
                choices.push((nodes[s], acts[s]));
            }
            total += self.reward[j];
            nodes = self.children(&nodes, j);
        }
        total
    }
}

struct GradCtx<'a> {
    diff_seats: &'a [usize],
    diff: &'a [f64],
}

fn sample_index<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum: take the last positive entry.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Outcome of optimizing a deterministic policy shared by several seats.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedSearch {
    pub value: f64,
    pub plan: Vec<usize>,
    pub evaluations: usize,
}

/// Exhaustive search over deterministic history-dependent policies shared
/// by seats `0..c`, with the remaining seats fixed by `others` (seat `c`
/// first). Only decisions at reachable view nodes are branched on. Returns
/// `None` if more than `budget` complete policies would be evaluated.
pub fn search_shared_policy(
    game: &RepeatedGame,
    focal_count: usize,
    others: &[&StochasticPolicy],
    reward: &[f64],
    ext: Extremum,
    budget: usize,
) -> Option<SharedSearch> {
    let search = SharedSearcher {
        game,
        focal_count,
        others: others.iter().map(|t| t.probs()).collect(),
        reward,
        n: game.num_actions(),
    };
    let mut assign = vec![UNASSIGNED; game.num_nodes()];
    let mut evaluations = 0;
    let mut best: Option<(f64, Vec<usize>)> = None;
    search.branch(&mut assign, ext, budget, &mut evaluations, &mut best)?;
    best.map(|(value, plan)| SharedSearch {
        value,
        plan: plan
            .into_iter()
            .map(|a| if a == UNASSIGNED { 0 } else { a })
            .collect(),
        evaluations,
    })
}

const UNASSIGNED: usize = usize::MAX;

struct SharedSearcher<'a> {
    game: &'a RepeatedGame,
    focal_count: usize,
    others: Vec<&'a [f64]>,
    reward: &'a [f64],
    n: usize,
}

impl SharedSearcher<'_> {
    fn branch(
        &self,
        assign: &mut Vec<usize>,
        ext: Extremum,
        budget: usize,
        evaluations: &mut usize,
        best: &mut Option<(f64, Vec<usize>)>,
    ) -> Option<()> {
        match self.eval(0, [0; MAX_PLAYERS], assign) {
            Ok(v) => {
                *evaluations += 1;
                if *evaluations > budget {
                    return None;
                }
                if best.as_ref().is_none_or(|(b, _)| ext.better(v, *b)) {
                    *best = Some((v, assign.clone()));
                }
                Some(())
            }
            Err(node) => {
                for a in 0..self.n {
                    assign[node] = a;
                    self.branch(assign, ext, budget, evaluations, best)?;
                }
                assign[node] = UNASSIGNED;
                Some(())
            }
        }
    }

    /// Value of the partial plan, or the first unassigned node reached.
    fn eval(&self, depth: usize, nodes: Nodes, assign: &[usize]) -> std::result::Result<f64, usize> {
        let m = self.game.num_players();
        let c = self.focal_count;
        for &node in nodes.iter().take(c) {
            if assign[node] == UNASSIGNED {
                return Err(node);
            }
        }
        let last = depth + 1 == self.game.horizon();
        let mut v = 0.0;
        for j in 0..self.game.num_joint() {
            let mut p = 1.0;
            for s in 0..m {
                let a = self.game.action_of(j, s);
                if s < c {
                    if assign[nodes[s]] != a {
                        p = 0.0;
                        break;
                    }
                } else {
                    p *= self.others[s - c][nodes[s] * self.n + a];
                    if p == 0.0 {
                        break;
                    }
                }
            }
            if p == 0.0 {
                continue;
            }
            let mut q = self.reward[j];
            if !last {
                let mut child = [0; MAX_PLAYERS];
                for s in 0..m {
                    child[s] = self.game.child(nodes[s], self.game.view_of(s, j));
                }
                q += self.eval(depth + 1, child, assign)?;
            }
            v += p * q;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Policy, Rule, SoftmaxPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tab(g: &RepeatedGame, r: Rule) -> StochasticPolicy {
        Policy::from(r).tabulate(g).unwrap()
    }

    #[test]
    fn deterministic_play_has_one_trajectory() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let (a, b) = (tab(&g, Rule::PureDefect), tab(&g, Rule::TitForTat { start: 0 }));
        let r = g.focal_reward_vector(1);
        let ts = Walker::new(&g, &[&a, &b], &r).trajectories().unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].probability, 1.0);
        assert_eq!(ts[0].rewards, vec![5.0, 1.0, 1.0]);
    }

    #[test]
    fn random_vs_random_one_step() {
        let g = RepeatedGame::prisoners_dilemma(1);
        let r0 = tab(&g, Rule::Random);
        let r = g.focal_reward_vector(1);
        let ts = Walker::new(&g, &[&r0, &r0], &r).trajectories().unwrap();
        assert_eq!(ts.len(), 4);
        assert!(ts.iter().all(|t| t.probability == 0.25));
    }

    #[test]
    fn random_vs_tit_for_tat_two_steps() {
        // Hand enumeration: TFT cooperates first, then copies the focal
        // move, so only the focal coin flips branch: 2 x 2 plays of 1/4.
        let g = RepeatedGame::prisoners_dilemma(2);
        let (f, b) = (tab(&g, Rule::Random), tab(&g, Rule::TitForTat { start: 0 }));
        let r = g.focal_reward_vector(1);
        let ts = Walker::new(&g, &[&f, &b], &r).trajectories().unwrap();
        assert_eq!(ts.len(), 4);
        let total: f64 = ts.iter().map(|t| t.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for t in &ts {
            assert_eq!(t.probability, 0.25);
            let first = g.joint_actions(t.history.steps()[0]);
            let second = g.joint_actions(t.history.steps()[1]);
            assert_eq!(first[1], 0);
            assert_eq!(second[1], first[0]);
        }
    }

    #[test]
    fn invalid_rows_are_reported() {
        let g = RepeatedGame::prisoners_dilemma(2);
        let bad = StochasticPolicy::from_raw(2, vec![0.7; g.num_nodes() * 2]);
        let ok = tab(&g, Rule::Random);
        let r = g.focal_reward_vector(1);
        assert!(matches!(
            Walker::new(&g, &[&ok, &bad], &r).trajectories(),
            Err(Error::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn expected_return_matches_trajectory_sum() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = SoftmaxPolicy::random(&g, 2.0, &mut rng).table();
        let b = tab(&g, Rule::CooperateUntilDefected);
        let r = g.focal_reward_vector(1);
        let w = Walker::new(&g, &[&f, &b], &r);
        let ts = w.trajectories().unwrap();
        let direct: f64 = ts.iter().map(|t| t.probability * t.total_reward()).sum();
        assert!((direct - w.expected_return()).abs() < 1e-12);
        assert!(ts.iter().all(|t| t.rewards.iter().all(|x| x.abs() <= g.reward_bound())));
    }

    #[test]
    fn backward_induction_values() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let r = g.focal_reward_vector(1);
        let any = tab(&g, Rule::Random);
        let cases = [
            (Rule::PureDefect, 3.0, 0.0),
            (Rule::PureCooperate, 15.0, 12.0),
            (Rule::TitForTat { start: 0 }, 13.0, 6.0),
            (Rule::TatForTit { start: 0 }, 15.0, 4.0),
        ];
        for (rule, best, worst) in cases {
            let b = tab(&g, rule);
            let w = Walker::new(&g, &[&any, &b], &r);
            assert_eq!(w.optimize_seat(0, Extremum::Max).0, best, "{rule:?}");
            assert_eq!(w.optimize_seat(0, Extremum::Min).0, worst, "{rule:?}");
        }
    }

    #[test]
    fn shared_search_on_self_play() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let r = g.focal_reward_vector(2);
        let best = search_shared_policy(&g, 2, &[], &r, Extremum::Max, 1 << 22).unwrap();
        assert_eq!(best.value, 12.0);
        // Only the on-path symmetric nodes branch: 2^3 plans.
        assert_eq!(best.evaluations, 8);
        let worst = search_shared_policy(&g, 2, &[], &r, Extremum::Min, 1 << 22).unwrap();
        assert_eq!(worst.value, 3.0);
        assert!(search_shared_policy(&g, 2, &[], &r, Extremum::Max, 4).is_none());
    }

    #[test]
    fn sampling_is_seeded() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let f = tab(&g, Rule::Random);
        let r = g.focal_reward_vector(1);
        let w = Walker::new(&g, &[&f, &f], &r);
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        let a = w.sample(&mut ChaCha8Rng::seed_from_u64(1), &[0], &mut c1);
        let b = w.sample(&mut ChaCha8Rng::seed_from_u64(1), &[0], &mut c2);
        assert_eq!(a, b);
        assert_eq!(c1, c2);
        assert_eq!(c1.len(), 3);
    }
}

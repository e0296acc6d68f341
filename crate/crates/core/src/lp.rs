//! Small dense linear programs: a two-phase tableau simplex with Bland's
//! rule, matrix games, and sequence-form robust values for single-focal
//! scenario sets.

use crate::error::{Error, Result};
use crate::exact::Arena;
use crate::game::RepeatedGame;
use crate::policy::StochasticPolicy;
use crate::tree::Walker;

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize c.x` subject to linear rows; variables are non-negative
/// unless marked free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    free: Vec<bool>,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            free: vec![false; num_vars],
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn set_free(&mut self, var: usize) {
        self.free[var] = true;
    }

    pub fn maximize(&mut self, objective: Vec<f64>) {
        assert_eq!(objective.len(), self.num_vars);
        self.objective = objective;
    }

    pub fn add(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars);
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution> {
        // Column layout: split variables, then slack/surplus, then artificials.
        let mut col_of = Vec::with_capacity(self.num_vars);
        let mut ncols = 0;
        for &f in &self.free {
            col_of.push(ncols);
            ncols += if f { 2 } else { 1 };
        }
        let structural = ncols;
        let m = self.rows.len();
        let slack_count = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let art_start = structural + slack_count;
        let art_count = self.rows.iter().filter(|r| r.1 != Relation::Le || r.2 < 0.0).count();
        let width = art_start + art_count + 1;
        let mut t = vec![vec![0.0; width]; m];
        let mut basis = vec![0; m];
        let mut slack = structural;
        let mut art = art_start;
        for (i, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            for (v, &a) in coeffs.iter().enumerate() {
                t[i][col_of[v]] = sign * a;
                if self.free[v] {
                    t[i][col_of[v] + 1] = -sign * a;
                }
            }
            t[i][width - 1] = sign * rhs;
            let rel = match (rel, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => *r,
            };
            match rel {
                Relation::Le => {
                    t[i][slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    t[i][slack] = -1.0;
                    slack += 1;
                    t[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    t[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        let used_art = art;

        // Phase one: drive the artificials to zero.
        let mut cost = vec![0.0; width - 1];
        for c in cost.iter_mut().take(used_art).skip(art_start) {
            *c = -1.0;
        }
        pivot_loop(&mut t, &mut basis, &cost, used_art)?;
        let infeasibility: f64 = basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= art_start)
            .map(|(i, _)| t[i][width - 1])
            .sum();
        if infeasibility > 1e-7 {
            return Err(Error::Lp("infeasible".into()));
        }
        for i in 0..m {
            if basis[i] >= art_start {
                if let Some(col) = (0..art_start).find(|&c| t[i][c].abs() > EPS) {
                    pivot(&mut t, &mut basis, i, col);
                }
            }
        }

        // Phase two on the structural columns.
        let mut cost = vec![0.0; width - 1];
        for (v, &c) in self.objective.iter().enumerate() {
            cost[col_of[v]] = c;
            if self.free[v] {
                cost[col_of[v] + 1] = -c;
            }
        }
        pivot_loop(&mut t, &mut basis, &cost, art_start)?;

        let mut cols = vec![0.0; width - 1];
        for (i, &b) in basis.iter().enumerate() {
            cols[b] = t[i][width - 1];
        }
        let x: Vec<f64> = (0..self.num_vars)
            .map(|v| {
                let c = col_of[v];
                if self.free[v] {
                    cols[c] - cols[c + 1]
                } else {
                    cols[c]
                }
            })
            .collect();
        let value = self.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution { value, x })
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row {
            let f = r[col];
            if f != 0.0 {
                for (a, b) in r.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
            }
        }
    }
    basis[row] = col;
}

/// Maximize `cost.x` using columns `< allowed` as entering candidates.
fn pivot_loop(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) -> Result<()> {
    let last = cost.len();
    for _ in 0..100_000 {
        let entering = (0..allowed).find(|&c| {
            if basis.contains(&c) {
                return false;
            }
            let reduced = cost[c] - basis.iter().enumerate().map(|(i, &b)| cost[b] * t[i][c]).sum::<f64>();
            reduced > 1e-9
        });
        let Some(col) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..t.len() {
            if t[i][col] > EPS {
                let ratio = t[i][last] / t[i][col];
                leave = match leave {
                    Some((r, best)) if ratio > best + EPS => Some((r, best)),
                    Some((r, best)) if (ratio - best).abs() <= EPS && basis[r] < basis[i] => Some((r, best)),
                    _ => Some((i, ratio)),
                };
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::Lp("unbounded".into()));
        };
        pivot(t, basis, row, col);
    }
    Err(Error::Lp("iteration limit reached".into()))
}

/// Value and optimal row strategy of the zero-sum game where the row
/// player maximizes `payoff[row][col]`.
pub fn matrix_game_value(payoff: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let rows = payoff.len();
    if rows == 0 || payoff[0].is_empty() {
        return Err(Error::EmptyVector);
    }
    let cols = payoff[0].len();
    let mut lp = LinearProgram::new(rows + 1);
    lp.set_free(rows);
    let mut obj = vec![0.0; rows + 1];
    obj[rows] = 1.0;
    lp.maximize(obj);
    for c in 0..cols {
        let mut coeffs: Vec<f64> = payoff.iter().map(|r| r[c]).collect();
        coeffs.push(-1.0);
        lp.add(coeffs, Relation::Ge, 0.0);
    }
    let mut simplex = vec![1.0; rows];
    simplex.push(0.0);
    lp.add(simplex, Relation::Eq, 1.0);
    let sol = lp.solve()?;
    Ok((sol.value, sol.x[..rows].to_vec()))
}

/// Optimal robust value over all focal policies and the policy reaching it.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSolution {
    pub value: f64,
    pub policy: StochasticPolicy,
}

/// `max_pi min_s [U(pi, s) - offset_s]` over the realization plans of a
/// single focal seat. Every scenario must have one focal copy.
fn robust_sequence_lp(arena: &Arena, offsets: &[f64]) -> Result<RobustSolution> {
    let game = arena.game();
    game.check_enumerable()?;
    if arena.scenarios().iter().any(|s| s.focal_count() != 1) {
        return Err(Error::InvalidConfig(
            "sequence-form programs need every scenario to have one focal copy".into(),
        ));
    }
    let n = game.num_actions();
    let nodes = game.num_nodes();
    let nx = nodes * n;
    let reward = game.focal_reward_vector(1);
    let placeholder = StochasticPolicy::uniform(game);
    let mut lp = LinearProgram::new(nx + 1);
    lp.set_free(nx);
    let mut obj = vec![0.0; nx + 1];
    obj[nx] = 1.0;
    lp.maximize(obj);
    for (s, off) in arena.scenarios().iter().zip(offsets) {
        let mut seats: Vec<&StochasticPolicy> = vec![&placeholder];
        seats.extend(s.background.iter().map(|b| b.as_ref()));
        let w = Walker::new(game, &seats, &reward).sequence_weights(0);
        let mut row = w;
        row.push(-1.0);
        lp.add(row, Relation::Ge, *off);
    }
    add_realization_constraints(game, &mut lp, nx + 1);
    let sol = lp.solve()?;
    Ok(RobustSolution {
        value: sol.value,
        policy: plan_to_policy(game, &sol.x[..nx]),
    })
}

fn add_realization_constraints(game: &RepeatedGame, lp: &mut LinearProgram, width: usize) {
    let n = game.num_actions();
    let k = game.num_joint();
    for h in 0..game.num_nodes() {
        let mut row = vec![0.0; width];
        for a in 0..n {
            row[h * n + a] = 1.0;
        }
        if h == 0 {
            lp.add(row, Relation::Eq, 1.0);
        } else {
            let parent = (h - 1) / k;
            let j = (h - 1) % k;
            row[parent * n + game.action_of(j, 0)] -= 1.0;
            lp.add(row, Relation::Eq, 0.0);
        }
    }
}

/// Behaviour policy induced by a realization plan (uniform where the plan
/// never reaches a node).
pub fn plan_to_policy(game: &RepeatedGame, plan: &[f64]) -> StochasticPolicy {
    let n = game.num_actions();
    let mut probs = Vec::with_capacity(plan.len());
    for row in plan.chunks(n) {
        let clipped: Vec<f64> = row.iter().map(|x| x.max(0.0)).collect();
        let s: f64 = clipped.iter().sum();
        if s > 1e-12 {
            probs.extend(clipped.iter().map(|x| x / s));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / n as f64, n));
        }
    }
    StochasticPolicy::from_raw(n, probs)
}

/// `max_pi min_s U(pi, s)`.
pub fn maximin_value(arena: &Arena) -> Result<RobustSolution> {
    robust_sequence_lp(arena, &vec![0.0; arena.len()])
}

/// `min_pi max_s R(pi, s)`; the returned value is the regret itself.
pub fn minimax_regret_value(arena: &Arena) -> Result<RobustSolution> {
    let best = arena.best_values()?;
    let sol = robust_sequence_lp(arena, &best)?;
    Ok(RobustSolution {
        value: -sol.value,
        policy: sol.policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_program() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6).
        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![3.0, 5.0]);
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn ge_eq_and_free_variables() {
        // max -x - y with x + y >= 2, x - y = 1, y free -> x = 1.5, y = 0.5.
        let mut lp = LinearProgram::new(2);
        lp.set_free(1);
        lp.maximize(vec![-1.0, -1.0]);
        lp.add(vec![1.0, 1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0, -1.0], Relation::Eq, 1.0);
        let s = lp.solve().unwrap();
        assert!((s.value + 2.0).abs() < 1e-9);
        assert!((s.x[0] - 1.5).abs() < 1e-9);
        // Negative right-hand side on a free variable.
        let mut lp = LinearProgram::new(1);
        lp.set_free(0);
        lp.maximize(vec![1.0]);
        lp.add(vec![1.0], Relation::Le, -3.0);
        assert!((lp.solve().unwrap().value + 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.maximize(vec![1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        assert!(matches!(lp.solve(), Err(Error::Lp(_))));
        let mut lp = LinearProgram::new(1);
        lp.maximize(vec![1.0]);
        assert!(matches!(lp.solve(), Err(Error::Lp(_))));
    }

    #[test]
    fn matrix_games() {
        let (v, x) = matrix_game_value(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert!(v.abs() < 1e-9);
        assert!((x[0] - 0.5).abs() < 1e-9);
        let rps = vec![
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ];
        let (v, x) = matrix_game_value(&rps).unwrap();
        assert!(v.abs() < 1e-9);
        assert!(x.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-9));
        // Dominant row with a saddle point.
        let (v, x) = matrix_game_value(&[vec![3.0, 2.0], vec![1.0, 0.0]]).unwrap();
        assert!((v - 2.0).abs() < 1e-9 && (x[0] - 1.0).abs() < 1e-9);
    }
}

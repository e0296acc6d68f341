//! Background populations trained by population play under sampled
//! social and risk preferences.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::RepeatedGame;
use crate::policy::{social_risk_reward, Policy, PolicySet, SocialPrefs, SoftmaxPolicy, StochasticPolicy};
use crate::rng::{self, tag};
use crate::tree::Walker;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    /// Sizes of the sub-populations; members only ever play each other.
    pub subpops: Vec<usize>,
    pub lambda_range: (f64, f64),
    pub delta_range: (f64, f64),
    pub iterations: usize,
    pub learning_rate: f64,
    /// Initial logits are drawn from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub prefs_seed: u64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            subpops: vec![2, 3, 5],
            lambda_range: (-0.2, 1.2),
            delta_range: (0.1, 2.0),
            iterations: 2_000,
            learning_rate: 0.5,
            init_scale: 1.0,
            prefs_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMember {
    pub id: String,
    pub subpopulation: String,
    pub prefs: SocialPrefs,
    pub policy: StochasticPolicy,
}

fn draw(range: (f64, f64), r: &mut impl Rng) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        r.random_range(range.0..=range.1)
    }
}

/// Train every sub-population independently. Each iteration, every member
/// takes one exact policy-gradient step on its own transformed reward
/// against partners drawn uniformly from its sub-population (itself
/// included), all members updating simultaneously.
pub fn train_background(game: &RepeatedGame, cfg: &BackgroundConfig) -> Result<Vec<TrainedMember>> {
    game.check_enumerable()?;
    if cfg.subpops.is_empty() || cfg.subpops.contains(&0) {
        return Err(Error::InvalidConfig("sub-population sizes must be positive".into()));
    }
    for (name, r) in [("lambda_range", cfg.lambda_range), ("delta_range", cfg.delta_range)] {
        if !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1) {
            return Err(Error::InvalidConfig(format!("{name} must be an ordered finite interval")));
        }
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig("learning_rate must be positive".into()));
    }
    let m = game.num_players();
    let mut members = Vec::new();
    let mut k = 0u64;
    for (s, &size) in cfg.subpops.iter().enumerate() {
        let mut prefs = Vec::with_capacity(size);
        let mut thetas = Vec::with_capacity(size);
        for _ in 0..size {
            let mut r = rng::stream(cfg.prefs_seed, &[tag::PREFS, k]);
            prefs.push(SocialPrefs {
                lambda: draw(cfg.lambda_range, &mut r),
                delta: draw(cfg.delta_range, &mut r),
            });
            let mut r = rng::stream(cfg.prefs_seed, &[tag::THETA_INIT, k]);
            thetas.push(SoftmaxPolicy::random(game, cfg.init_scale, &mut r));
            k += 1;
        }
        let rewards: Vec<Vec<f64>> = prefs
            .iter()
            .map(|p| {
                (0..game.num_joint())
                    .map(|j| social_risk_reward(game, j, 0, *p))
                    .collect()
            })
            .collect();
        for it in 0..cfg.iterations {
            let tables: Vec<StochasticPolicy> = thetas.iter().map(SoftmaxPolicy::table).collect();
            let grads: Vec<Vec<f64>> = (0..size)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(
                        cfg.prefs_seed,
                        &[tag::POPULATION_PLAY, s as u64, it as u64, i as u64],
                    );
                    let mut seats: Vec<&StochasticPolicy> = vec![&tables[i]];
                    for _ in 1..m {
                        seats.push(&tables[r.random_range(0..size)]);
                    }
                    let mut g = vec![0.0; tables[i].probs().len()];
                    Walker::new(game, &seats, &rewards[i]).return_and_gradient(&[0], &tables[i], &mut g);
                    g
                })
                .collect();
            for (theta, g) in thetas.iter_mut().zip(&grads) {
                for (t, gi) in theta.theta_mut().iter_mut().zip(g) {
                    *t += cfg.learning_rate * gi;
                }
            }
        }
        for (i, (theta, p)) in thetas.iter().zip(prefs).enumerate() {
            members.push(TrainedMember {
                id: format!("pp{s}_{i}"),
                subpopulation: format!("subpop_{s}"),
                prefs: p,
                policy: theta.table(),
            });
        }
    }
    Ok(members)
}

/// Collect trained members into a population with sub-population labels.
pub fn into_population(members: &[TrainedMember]) -> Result<PolicySet> {
    let mut set = PolicySet::new();
    for m in members {
        set.insert(
            m.id.clone(),
            Policy::Stochastic(m.policy.clone()),
            Some(m.subpopulation.clone()),
        )?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BackgroundConfig {
        BackgroundConfig {
            iterations: 100,
            prefs_seed: 7,
            ..BackgroundConfig::default()
        }
    }

    #[test]
    fn sizes_labels_and_ranges() {
        let g = RepeatedGame::prisoners_dilemma(3);
        let members = train_background(&g, &small()).unwrap();
        assert_eq!(members.len(), 10);
        let labels: Vec<&str> = members.iter().map(|m| m.subpopulation.as_str()).collect();
        assert_eq!(labels.iter().filter(|l| **l == "subpop_2").count(), 5);
        for m in &members {
            assert!((-0.2..=1.2).contains(&m.prefs.lambda));
            assert!((0.1..=2.0).contains(&m.prefs.delta));
        }
        assert_eq!(into_population(&members).unwrap().len(), 10);
    }

    #[test]
    fn reproducible() {
        let g = RepeatedGame::prisoners_dilemma(2);
        let a = train_background(&g, &small()).unwrap();
        let b = train_background(&g, &small()).unwrap();
        assert_eq!(a, b);
        let c = train_background(&g, &BackgroundConfig { prefs_seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identity_prefs_learn_to_defect() {
        // Selfish one-shot players learn the dominant action.
        let g = RepeatedGame::prisoners_dilemma(1);
        let cfg = BackgroundConfig {
            subpops: vec![3],
            lambda_range: (1.0, 1.0),
            delta_range: (1.0, 1.0),
            iterations: 500,
            ..small()
        };
        for m in train_background(&g, &cfg).unwrap() {
            assert_eq!(m.prefs, SocialPrefs::IDENTITY);
            assert!(m.policy.prob(0, 1) > 0.95);
        }
    }
}

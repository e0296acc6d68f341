//! Robust ad hoc teamwork in finite repeated normal-form games.
//!
//! Policies are tabulated over the joint-action history tree, so utilities,
//! regrets, best responses and policy gradients are computed exactly by
//! enumeration. Training solves the max-min (or min-max regret) problem over
//! a prior on partner scenarios with projected gradient descent-ascent.

pub mod background;
pub mod canonical;
pub mod error;
pub mod evaluation;
pub mod exact;
pub mod game;
pub mod io;
pub mod lp;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod simplex;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
pub use exact::{
    best_response_value, exact_policy_gradient, exact_utility, min_response_value, regret, Arena,
    CopyMode, EvalReport, Prior, ResponseValue,
};
pub use game::{History, RepeatedGame};
pub use policy::{Policy, PolicySet, Rule, RulePolicy, SocialPrefs, SoftmaxPolicy, StochasticPolicy};
pub use scenario::{build_scenario_set, ResolvedScenario, Scenario, ScenarioSet};
pub use simplex::project_simplex;

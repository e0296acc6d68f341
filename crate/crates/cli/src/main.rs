use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use robust_aht::background::{into_population, train_background, BackgroundConfig};
use robust_aht::canonical::{canonical_population_for, CANONICAL_SET};
use robust_aht::evaluation::{
    audit_epsilon_lemmas, check_non_degenerative, evaluate_metrics, generate_test_population,
    sweep_epsilon, test_arena, training_arena, RobustPolicies,
};
use robust_aht::io::{self, PriorFile};
use robust_aht::solver::{train, Method, SolverConfig};
use robust_aht::{Arena, Error, PolicySet, Prior, RepeatedGame, StochasticPolicy};

#[derive(Parser)]
#[command(name = "robust-aht", version, about = "Robust ad hoc teamwork on repeated matrix games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GameArgs {
    /// Game JSON file; defaults to the three-round Prisoner's Dilemma.
    #[arg(long)]
    game: Option<PathBuf>,
}

impl GameArgs {
    fn load(&self) -> Result<Arc<RepeatedGame>> {
        Ok(Arc::new(match &self.game {
            Some(p) => io::read_game(p)?,
            None => RepeatedGame::prisoners_dilemma(3),
        }))
    }
}

#[derive(Args, Clone)]
struct PopulationArgs {
    /// Background population JSON file; defaults to the nine canonical partners.
    #[arg(long)]
    population: Option<PathBuf>,
}

impl PopulationArgs {
    fn load(&self, game: &RepeatedGame) -> Result<PolicySet> {
        Ok(match &self.population {
            Some(p) => io::read_population(game, p)?,
            None => canonical_population_for(game)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in background population.
    GenBackground {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value = CANONICAL_SET)]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy and write policy.json, prior.json, trace.csv and metrics.csv.
    Train {
        #[arg(long)]
        method: Method,
        /// Solver config JSON; its `method` field is overridden by --method.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-scenario utilities, best responses and regrets of a policy.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        /// `train`, or a test population file written by gen-testset.
        #[arg(long, default_value = "train")]
        scenarios: String,
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the aggregate metrics row here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Sample a test population from epsilon-balls around the base population.
    GenTestset {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test metrics of several policies across a grid of epsilons.
    SweepEpsilon {
        /// `name=policy.json`, repeatable.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the epsilon-perturbation bounds on a sampled test set.
    Audit {
        #[arg(long)]
        epsilon: f64,
        /// Test population; sampled with --count/--seed when omitted.
        #[arg(long)]
        testset: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        num_policies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trained maximin-utility policy to check on the test set.
        #[arg(long)]
        maximin: Option<PathBuf>,
        /// Trained minimax-regret policy to check on the test set.
        #[arg(long)]
        minimax_regret: Option<PathBuf>,
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report best/min-response gaps for every scenario of a population.
    CheckPopulation {
        /// Population file; defaults to the canonical partners.
        file: Option<PathBuf>,
        /// Focal counts to build scenarios for; defaults to 1 and all players.
        #[arg(long, value_delimiter = ',')]
        focal_counts: Option<Vec<usize>>,
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train sub-populations by population play under sampled preferences.
    TrainBackground {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
        subpops: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        prefs_seed: u64,
        /// Config JSON for the remaining settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a manifest: train every configured method and evaluate on train and test sets.
    Run {
        manifest: PathBuf,
    },
}

fn read_stochastic(game: &RepeatedGame, path: &Path) -> Result<StochasticPolicy> {
    Ok(io::read_policy(game, path)?.tabulate(game)?)
}

fn scenario_arena(
    game: Arc<RepeatedGame>,
    population: &PolicySet,
    spec: &str,
) -> Result<Arena> {
    if spec == "train" {
        return Ok(training_arena(game, population)?);
    }
    let partners = io::read_population(&game, Path::new(spec))?;
    Ok(test_arena(game, &partners)?)
}

fn train_into(
    cfg: &SolverConfig,
    arena: &Arena,
    out_dir: &Path,
) -> Result<Option<StochasticPolicy>> {
    fs::create_dir_all(out_dir)?;
    let game = arena.game();
    let (trace, diverged) = match train(cfg, arena) {
        Ok(t) => (t, None),
        Err(Error::Diverged { iter, reason, trace }) => (*trace, Some((iter, reason))),
        Err(e) => return Err(e.into()),
    };
    let mut csv = Vec::new();
    io::write_trace_csv(&mut csv, &trace)?;
    fs::write(out_dir.join("trace.csv"), csv)?;
    if let Some((iter, reason)) = diverged {
        eprintln!("training diverged at iteration {iter}: {reason}");
        return Ok(None);
    }
    let policy = trace.policy();
    io::write_policy(&out_dir.join("policy.json"), game, &robust_aht::Policy::Stochastic(policy.clone()))?;
    io::write_prior(
        &out_dir.join("prior.json"),
        &PriorFile {
            scenario_set: if cfg.method == Method::Fp { "snapshots".into() } else { arena.name().into() },
            scenarios: trace.prior_scenarios.clone(),
            weights: trace.prior.weights().to_vec(),
        },
    )?;
    let metrics = evaluate_metrics(&policy, arena)?;
    io::write_metrics_csv(&out_dir.join("metrics.csv"), &[(cfg.method.name().to_string(), metrics.clone())])?;
    println!(
        "{}: selected iteration {} u_avg {} u_min {} r_max {}",
        cfg.method, trace.selected_iter, metrics.u_avg, metrics.u_min, metrics.r_max
    );
    Ok(Some(policy))
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default)]
    game: Option<PathBuf>,
    #[serde(default)]
    population: Option<PathBuf>,
    /// Solver configs, one per method.
    configs: Vec<SolverConfig>,
    #[serde(default)]
    test: Option<TestParams>,
    out_dir: PathBuf,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TestParams {
    epsilon: f64,
    count: usize,
    seed: u64,
}

fn run_manifest(path: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
    let game = GameArgs { game: resolve(&manifest.game) }.load()?;
    let population = PopulationArgs { population: resolve(&manifest.population) }.load(&game)?;
    let out_dir = base.join(&manifest.out_dir);
    let arena = training_arena(game.clone(), &population)?;
    let test = match &manifest.test {
        Some(t) => {
            let partners = generate_test_population(&game, &population, t.epsilon, t.count, t.seed)?;
            fs::create_dir_all(&out_dir)?;
            io::write_population(&out_dir.join("testset.json"), &game, &partners)?;
            Some(test_arena(game.clone(), &partners)?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut code = ExitCode::SUCCESS;
    for cfg in &manifest.configs {
        cfg.validate()?;
        let Some(policy) = train_into(cfg, &arena, &out_dir.join(cfg.method.name()))? else {
            code = ExitCode::from(2);
            continue;
        };
        rows.push((cfg.method.name().to_string(), evaluate_metrics(&policy, &arena)?));
        if let Some(t) = &test {
            rows.push((cfg.method.name().to_string(), evaluate_metrics(&policy, t)?));
        }
    }
    io::write_metrics_csv(&out_dir.join("metrics.csv"), &rows)?;
    Ok(code)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenBackground { game, set, out } => {
            let game = game.load()?;
            if set != CANONICAL_SET {
                bail!("unknown background set `{set}` (available: {CANONICAL_SET})");
            }
            let population = canonical_population_for(&game)?;
            io::write_population(&out, &game, &population)?;
            println!("wrote {} policies to {}", population.len(), out.display());
        }
        Command::Train { method, config, seed, iterations, game, population, out_dir } => {
            let mut cfg = match &config {
                Some(p) => io::read_config(p)?,
                None => SolverConfig::default(),
            };
            cfg.method = method;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            cfg.validate()?;
            let game = game.load()?;
            let population = population.load(&game)?;
            let arena = training_arena(game, &population)?;
            if train_into(&cfg, &arena, &out_dir)?.is_none() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate { policy, scenarios, game, population, out, metrics } => {
            let game = game.load()?;
            let population = population.load(&game)?;
            let pi = read_stochastic(&game, &policy)?;
            let arena = scenario_arena(game, &population, &scenarios)?;
            let report = arena.report(&pi, &Prior::uniform(arena.len()))?;
            io::write_eval_report_csv(&out, &report)?;
            let m = evaluate_metrics(&pi, &arena)?;
            println!("u_avg {} u_min {} r_max {}", m.u_avg, m.u_min, m.r_max);
            if let Some(path) = metrics {
                let name = policy.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                io::write_metrics_csv(&path, &[(name, m)])?;
            }
        }
        Command::GenTestset { epsilon, count, seed, game, population, out } => {
            let game = game.load()?;
            let population = population.load(&game)?;
            let partners = generate_test_population(&game, &population, epsilon, count, seed)?;
            io::write_population(&out, &game, &partners)?;
            println!("wrote {} test partners to {}", partners.len(), out.display());
        }
        Command::SweepEpsilon { policies, grid, count, seed, game, population, out } => {
            let game = game.load()?;
            let population = population.load(&game)?;
            let named = policies
                .iter()
                .map(|spec| {
                    let (name, path) = spec
                        .split_once('=')
                        .with_context(|| format!("expected name=file, got `{spec}`"))?;
                    Ok((name.to_string(), read_stochastic(&game, Path::new(path))?))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = sweep_epsilon(game, &named, &population, &grid, count, seed)?;
            io::write_sweep_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Audit {
            epsilon,
            testset,
            count,
            num_policies,
            seed,
            maximin,
            minimax_regret,
            game,
            population,
            out,
        } => {
            let game = game.load()?;
            let population = population.load(&game)?;
            let partners = match &testset {
                Some(p) => io::read_population(&game, p)?,
                None => generate_test_population(&game, &population, epsilon, count, seed)?,
            };
            let train = training_arena(game.clone(), &population)?;
            let test = test_arena(game.clone(), &partners)?;
            let robust = RobustPolicies {
                maximin: maximin.as_deref().map(|p| read_stochastic(&game, p)).transpose()?,
                minimax_regret: minimax_regret.as_deref().map(|p| read_stochastic(&game, p)).transpose()?,
            };
            let report = audit_epsilon_lemmas(&train, &test, epsilon, num_policies, seed, &robust)?;
            println!(
                "pairs {} max |dU| {} (bound {}) max |dR| {} (bound {}) violations {}/{}",
                report.pairs,
                report.max_utility_gap,
                report.utility_bound,
                report.max_regret_gap,
                report.regret_bound,
                report.utility_violations,
                report.regret_violations
            );
            for (name, check) in [("maximin", &report.maximin), ("minimax_regret", &report.minimax_regret)] {
                if let Some(c) = check {
                    println!("{name}: test {} threshold {} slack {}", c.test_value, c.threshold, c.slack);
                }
            }
            println!("bounds hold: {}", report.holds());
            if let Some(path) = out {
                io::write_report(&path, &report)?;
            }
            if !report.holds() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::CheckPopulation { file, focal_counts, game, out } => {
            let game = game.load()?;
            let population = PopulationArgs { population: file }.load(&game)?;
            let counts = focal_counts.unwrap_or_else(|| vec![1, game.num_players()]);
            let report = check_non_degenerative(game, &population, &counts)?;
            for (k, id) in report.scenario_ids.iter().enumerate() {
                println!(
                    "{id}: best {} worst {} gap {}",
                    report.best[k], report.worst[k], report.gaps[k]
                );
            }
            println!("non-degenerative: {}", report.non_degenerative);
            if let Some(path) = out {
                io::write_report(&path, &report)?;
            }
        }
        Command::TrainBackground { game, subpops, prefs_seed, config, iterations, out } => {
            let game = game.load()?;
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p)?;
                    serde_json::from_str::<BackgroundConfig>(&text).map_err(|e| Error::Format {
                        path: p.display().to_string(),
                        message: e.to_string(),
                    })?
                }
                None => BackgroundConfig::default(),
            };
            cfg.subpops = subpops;
            cfg.prefs_seed = prefs_seed;
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            let members = train_background(&game, &cfg)?;
            io::write_population(&out, &game, &into_population(&members)?)?;
            for m in &members {
                println!(
                    "{} {} lambda {} delta {}",
                    m.id, m.subpopulation, m.prefs.lambda, m.prefs.delta
                );
            }
        }
        Command::Run { manifest } => return run_manifest(&manifest),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

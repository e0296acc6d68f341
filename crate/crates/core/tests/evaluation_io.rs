use std::sync::Arc;

use robust_aht::canonical::{canonical_population, constant_game};
use robust_aht::evaluation::{
    audit_epsilon_lemmas, check_non_degenerative, evaluate_metrics, generate_test_population,
    random_policy, sweep_epsilon, test_arena, training_arena, RobustPolicies,
};
use robust_aht::io;
use robust_aht::policy::policy_distance;
use robust_aht::rng::stream;
use robust_aht::solver::{train, Method, SolverConfig, SolverMode};
use robust_aht::{
    Error, History, Policy, PolicySet, Prior, RepeatedGame, Rule, SoftmaxPolicy, StochasticPolicy,
};

fn ipd() -> Arc<RepeatedGame> {
    Arc::new(RepeatedGame::prisoners_dilemma(3))
}

#[test]
fn metric_invariants_hold_for_random_policies() {
    let a = training_arena(ipd(), &canonical_population()).unwrap();
    for i in 0..50 {
        let pi = random_policy(a.game(), &mut stream(21, &[i]));
        let m = evaluate_metrics(&pi, &a).unwrap();
        let max = m.utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(m.u_min <= m.u_avg && m.u_avg <= max);
        assert!(m.r_max >= 0.0 && m.all_exact());
        let mean = m.utilities.iter().sum::<f64>() / m.utilities.len() as f64;
        assert!((m.u_avg - mean).abs() < 1e-12);
    }
}

#[test]
fn single_scenario_sets() {
    let game = ipd();
    let mut pop = PolicySet::new();
    pop.insert("tft", Rule::TitForTat { start: 0 }.into(), None).unwrap();
    let set = robust_aht::build_scenario_set("one", &game, &pop, false, &[1]).unwrap();
    let a = robust_aht::Arena::new(game.clone(), &pop, &set).unwrap();
    let pi = random_policy(&game, &mut stream(1, &[]));
    let m = evaluate_metrics(&pi, &a).unwrap();
    assert_eq!(m.u_avg, m.u_min);
    let br = robust_aht::exact::best_response_policy(&game, &a.scenarios()[0]).unwrap();
    assert_eq!(evaluate_metrics(&br, &a).unwrap().r_max, 0.0);
}

#[test]
fn test_populations_stay_inside_the_ball() {
    let game = ipd();
    let base = canonical_population();
    let tables = base.tabulate(&game).unwrap();
    let pop = generate_test_population(&game, &base, 0.5, 512, 4).unwrap();
    assert_eq!(pop.len(), 512);
    for (i, e) in pop.entries().iter().enumerate() {
        let origin = e.subpopulation.as_deref().unwrap();
        // Round-robin over the base policies.
        assert_eq!(origin, base.entries()[i % base.len()].id);
        let t = e.policy.tabulate(&game).unwrap();
        assert!(policy_distance(&t, &tables[origin]) < 0.5);
    }
    let nine = generate_test_population(&game, &base, 0.5, 9, 4).unwrap();
    let origins: Vec<_> = nine.entries().iter().map(|e| e.subpopulation.clone().unwrap()).collect();
    let ids: Vec<_> = base.ids().map(String::from).collect();
    assert_eq!(origins, ids);
    // Reproducible, and epsilon 0 copies the base.
    assert_eq!(
        io::population_to_json(&game, &pop).unwrap(),
        io::population_to_json(&game, &generate_test_population(&game, &base, 0.5, 512, 4).unwrap()).unwrap()
    );
    for e in generate_test_population(&game, &base, 0.0, 9, 1).unwrap().entries() {
        let origin = e.subpopulation.as_deref().unwrap();
        assert_eq!(*tables[origin], e.policy.tabulate(&game).unwrap());
    }
    // Any policy is within distance 2.
    let wide = generate_test_population(&game, &base, 2.0, 27, 0).unwrap();
    for e in wide.entries() {
        let t = e.policy.tabulate(&game).unwrap();
        assert!(policy_distance(&t, &tables[e.subpopulation.as_deref().unwrap()]) <= 2.0);
    }
}

#[test]
fn zero_epsilon_test_metrics_equal_train_metrics() {
    let game = ipd();
    let base = canonical_population();
    let train_a = training_arena(game.clone(), &base).unwrap();
    let test_a = test_arena(game.clone(), &generate_test_population(&game, &base, 0.0, 512, 2).unwrap()).unwrap();
    for i in 0..5 {
        let pi = random_policy(&game, &mut stream(8, &[i]));
        let a = evaluate_metrics(&pi, &train_a).unwrap();
        let b = evaluate_metrics(&pi, &test_a).unwrap();
        assert_eq!((a.u_avg, a.u_min, a.r_max), (b.u_avg, b.u_min, b.r_max));
    }
}

#[test]
fn degeneracy_checks() {
    let report = check_non_degenerative(ipd(), &canonical_population(), &[1, 2]).unwrap();
    assert!(report.non_degenerative);
    assert_eq!(report.gaps.len(), 10);

    let flat = Arc::new(constant_game(2.0, 3));
    let mut pop = PolicySet::new();
    pop.insert("c", Rule::PureCooperate.into(), None).unwrap();
    pop.insert("r", Rule::Random.into(), None).unwrap();
    let report = check_non_degenerative(flat, &pop, &[1, 2]).unwrap();
    assert!(!report.non_degenerative);
    assert!(report.gaps.iter().all(|&g| g == 0.0));

    let mut defect = PolicySet::new();
    defect.insert("d", Rule::PureDefect.into(), None).unwrap();
    let report = check_non_degenerative(ipd(), &defect, &[1]).unwrap();
    assert_eq!(report.gaps, vec![3.0]);
}

#[test]
fn audit_bounds_and_zero_epsilon() {
    let game = ipd();
    let base = canonical_population();
    let train_a = training_arena(game.clone(), &base).unwrap();
    let test_a = test_arena(game.clone(), &generate_test_population(&game, &base, 0.5, 128, 1).unwrap()).unwrap();
    let report = audit_epsilon_lemmas(&train_a, &test_a, 0.5, 20, 0, &RobustPolicies::default()).unwrap();
    assert_eq!(report.utility_bound, 11.25);
    assert_eq!(report.regret_bound, 22.5);
    assert!(report.holds());

    let same = test_arena(game.clone(), &generate_test_population(&game, &base, 0.0, 18, 1).unwrap()).unwrap();
    let report = audit_epsilon_lemmas(&train_a, &same, 0.0, 20, 0, &RobustPolicies::default()).unwrap();
    assert_eq!(report.max_utility_gap, 0.0);
    assert_eq!(report.max_regret_gap, 0.0);

    // A test set farther out than claimed is rejected.
    match audit_epsilon_lemmas(&train_a, &test_a, 0.01, 5, 0, &RobustPolicies::default()) {
        Err(Error::NotAnEpsilonNet(_)) => {}
        other => panic!("expected an epsilon-net error, got {other:?}"),
    }
}

#[test]
fn sweep_rows() {
    let game = ipd();
    let policies = vec![
        ("random".to_string(), StochasticPolicy::uniform(&game)),
        ("other".to_string(), random_policy(&game, &mut stream(2, &[]))),
    ];
    let rows = sweep_epsilon(game, &policies, &canonical_population(), &[0.0, 0.25, 0.5], 128, 0).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].epsilon, 0.0);
    assert_eq!((rows[0].u_avg, rows[0].u_min, rows[0].r_max), (7.5, 1.5, 5.5));
}

fn assert_same_behaviour(game: &RepeatedGame, a: &Policy, b: &Policy) {
    for h in game.all_histories() {
        for seat in 0..game.num_players() {
            assert_eq!(a.act(game, &h, seat).unwrap(), b.act(game, &h, seat).unwrap());
        }
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let game = ipd();
    let gpath = dir.path().join("game.json");
    io::write_game(&gpath, &game).unwrap();
    assert_eq!(io::read_game(&gpath).unwrap(), *game);

    let mut pop = canonical_population();
    let trained = SoftmaxPolicy::random(&game, 3.0, &mut stream(4, &[]));
    pop.insert("trained", Policy::Softmax(trained), Some("x".into())).unwrap();
    let ppath = dir.path().join("pop.json");
    io::write_population(&ppath, &game, &pop).unwrap();
    let back = io::read_population(&game, &ppath).unwrap();
    for (a, b) in pop.entries().iter().zip(back.entries()) {
        assert_eq!((&a.id, &a.subpopulation), (&b.id, &b.subpopulation));
        assert_same_behaviour(&game, &a.policy, &b.policy);
    }
    // Canonical partners stay rules rather than tables.
    let text = std::fs::read_to_string(&ppath).unwrap();
    assert!(text.contains("\"rule\": \"tit_for_tat\""));

    // Rules reacting to a seat other than 1 keep that setting.
    let pg = robust_aht::canonical::public_goods(3, 2);
    let watcher = Policy::Rule(robust_aht::RulePolicy { rule: Rule::TitForTat { start: 1 }, reacts_to: 2 });
    let text = io::policy_to_json(&pg, &watcher).unwrap().to_string();
    assert!(text.contains("\"reacts_to\":2"), "{text}");
    assert_same_behaviour(&pg, &watcher, &io::policy_from_json(&pg, &text, &ppath).unwrap());

    // Populations may reference policy files.
    let single = dir.path().join("tft.json");
    io::write_policy(&single, &game, &Rule::TitForTat { start: 0 }.into()).unwrap();
    let refs = dir.path().join("refs.json");
    std::fs::write(&refs, r#"{"policies": [{"id": "a", "file": "tft.json"}]}"#).unwrap();
    let loaded = io::read_population(&game, &refs).unwrap();
    assert_same_behaviour(&game, &loaded.entries()[0].policy, &Rule::TitForTat { start: 0 }.into());
}

#[test]
fn priors_configs_and_traces_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = training_arena(ipd(), &canonical_population()).unwrap();
    let cfg = SolverConfig {
        iterations: 120,
        mode: SolverMode::Stochastic,
        seed: 3,
        ..SolverConfig::for_method(Method::Fp)
    };
    let cpath = dir.path().join("cfg.json");
    io::write_config(&cpath, &cfg).unwrap();
    assert_eq!(io::read_config(&cpath).unwrap(), cfg);

    let trace = train(&SolverConfig { method: Method::Mr, ..cfg.clone() }, &a).unwrap();
    let prior = io::PriorFile {
        scenario_set: "train".into(),
        scenarios: trace.prior_scenarios.clone(),
        weights: trace.prior.weights().to_vec(),
    };
    let ppath = dir.path().join("prior.json");
    io::write_prior(&ppath, &prior).unwrap();
    let back = io::read_prior(&ppath).unwrap();
    assert_eq!(back, prior);
    assert_eq!(back.prior().unwrap(), trace.prior);

    for t in [trace, train(&cfg, &a).unwrap()] {
        let tpath = dir.path().join("trace.csv");
        io::write_trace_csv(std::fs::File::create(&tpath).unwrap(), &t).unwrap();
        let rows = io::read_trace_csv(&tpath).unwrap();
        assert_eq!(rows.len(), t.records.len());
        for (row, rec) in rows.iter().zip(&t.records) {
            assert_eq!(row.iter, rec.iter);
            assert_eq!(&row.beta[..rec.beta.len()], &rec.beta[..]);
            assert!(row.beta[rec.beta.len()..].iter().all(|&x| x == 0.0));
            assert_eq!(
                (row.bayes_utility, row.bayes_regret, row.u_min, row.r_max, row.grad_norm_theta),
                (rec.bayes_utility, rec.bayes_regret, rec.u_min, rec.r_max, rec.grad_norm_theta)
            );
        }
    }
}

#[test]
fn reports_write_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = training_arena(ipd(), &canonical_population()).unwrap();
    let pi = StochasticPolicy::uniform(a.game());
    let m = evaluate_metrics(&pi, &a).unwrap();
    let mpath = dir.path().join("m.csv");
    io::write_metrics_csv(&mpath, &[("random".into(), m)]).unwrap();
    assert_eq!(
        std::fs::read_to_string(&mpath).unwrap(),
        "method,scenario_set,u_avg,u_min,r_max,exact_br\nrandom,train,7.5,1.5,5.5,true\n"
    );
    let epath = dir.path().join("e.csv");
    io::write_eval_report_csv(&epath, &a.report(&pi, &Prior::uniform(a.len())).unwrap()).unwrap();
    let text = std::fs::read_to_string(&epath).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario_id,utility,best_response,exact_flag,regret"));
    assert!(lines.any(|l| l == "c1:pure_defect,1.5,3,true,1.5"));
}

#[test]
fn malformed_files_report_where() {
    let dir = tempfile::tempdir().unwrap();
    let game = ipd();
    let p = dir.path().join("pop.json");
    std::fs::write(&p, "{\n  \"policies\": [\n    {\"id\": \"a\", \"policy\": {\"rule\": \"nope\"}}\n  ]\n}").unwrap();
    let msg = io::read_population(&game, &p).unwrap_err().to_string();
    assert!(msg.contains("pop.json") && msg.contains("nope"), "{msg}");
    std::fs::write(&p, "{\n  \"policies\": [\n    {\"id\": \"a\" \"policy\": {}}\n  ]\n}").unwrap();
    let msg = io::read_population(&game, &p).unwrap_err().to_string();
    assert!(msg.contains("line 3"), "{msg}");
    let c = dir.path().join("cfg.json");
    std::fs::write(&c, "{\"method\": \"mu\",\n \"eta_thetaa\": 1}").unwrap();
    let msg = io::read_config(&c).unwrap_err().to_string();
    assert!(msg.contains("eta_thetaa") && msg.contains("line 2"), "{msg}");
    // History keys are parsed against the game's labels.
    let h = History::new(vec![1]);
    assert_eq!(game.parse_history_key(&game.history_key(h.steps())), Some(vec![1]));
}

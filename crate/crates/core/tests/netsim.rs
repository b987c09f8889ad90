use minichain::consensus::CompactTarget;
use minichain::netsim::{
    run, sweep, sweep_summary, tick_probability, Adversary, AdversaryOutcome, ScenarioConfig, Simulation, Topology,
};

fn honest(seed: u64, duration_s: u64) -> ScenarioConfig {
    ScenarioConfig { seed, duration_s, tx_rate: 0.5, ..ScenarioConfig::default() }
}

#[test]
fn honest_runs_converge_with_conserved_value() {
    for seed in 1..=4 {
        let report = run(&honest(seed, 40)).unwrap();
        assert!(report.settled, "seed {seed}");
        assert!(report.converged && report.nodes_agree(), "seed {seed}");
        assert!(report.nodes.iter().all(|n| n.conservation_ok), "seed {seed}");
        assert!(report.blocks_mined > 10, "seed {seed}");
        assert!(report.txs.iter().any(|t| t.confirmed_ms.is_some()), "seed {seed}");
        for t in &report.txs {
            if let Some(c) = t.confirmed_ms {
                assert!(c >= t.sent_ms);
            }
        }
    }
}

#[test]
fn topologies_converge() {
    for topology in [Topology::Ring, Topology::Star] {
        let cfg = ScenarioConfig { nodes: 6, topology, hash_rates: vec![1.0; 6], ..honest(3, 30) };
        let report = run(&cfg).unwrap();
        assert!(report.nodes_agree(), "{topology:?}");
    }
}

#[test]
fn stale_rate_grows_with_latency() {
    let stale = |latency_ms: u64| -> u64 {
        (1..=8)
            .map(|seed| {
                let cfg = ScenarioConfig { latency_ms, tx_rate: 0.0, ..honest(seed, 60) };
                run(&cfg).unwrap().stale_blocks
            })
            .sum()
    };
    let instant = stale(0);
    let slow = stale(1000);
    assert!(instant <= slow, "latency 0: {instant}, latency 1 s: {slow}");
    assert!(slow > 0);
}

#[test]
fn miner_tick_matches_bernoulli_rate() {
    let cfg = ScenarioConfig { nodes: 1, hash_rates: vec![2.0], ..ScenarioConfig::default() };
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    let target = CompactTarget(sim.chain(0).state().next_bits()).expand();
    let p = tick_probability(2.0, cfg.params.target_spacing * 100, target);
    let trials = 10_000;
    let hits = (0..trials).filter(|_| sim.miner_tick(0).is_some()).count() as f64;
    let mean = p * trials as f64;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    assert!((hits - mean).abs() <= 3.0 * sd, "hits {hits}, expected {mean} ± {sd}");
}

#[test]
fn withholding_attacker_is_absorbed() {
    let cfg = ScenarioConfig {
        adversary: Adversary::Withhold { lead: 2, attacker_rate: 1.5 },
        tx_rate: 0.0,
        ..honest(5, 60)
    };
    let report = run(&cfg).unwrap();
    assert!(report.nodes_agree());
    let AdversaryOutcome::Withhold(w) = &report.adversary else { panic!("withhold outcome") };
    assert!(w.attacker_released <= w.attacker_mined);
    assert!(w.attacker_in_chain <= w.attacker_released);
    assert!(w.honest_in_chain > 0);
    assert_eq!(report.nodes.len(), 4, "attacker is not reported as a node");
}

#[test]
fn double_spend_confirms_exactly_one() {
    for z in 0..3 {
        let cfg = ScenarioConfig {
            adversary: Adversary::DoubleSpend { confirmations: z, attacker_rate: 1.0, give_up: 6 },
            tx_rate: 0.0,
            ..honest(11, 30)
        };
        let report = run(&cfg).unwrap();
        let a = report.attack().unwrap();
        assert!(a.payment_confirmed != a.conflict_confirmed, "z={z}: {}", a.confirmed_spender());
        assert_eq!(a.success, a.accepted_ms.is_some() && a.conflict_confirmed);
        assert!(report.nodes_agree());
    }
}

#[test]
fn sweep_is_seed_ordered_and_deterministic() {
    let cfg = ScenarioConfig { nodes: 3, hash_rates: vec![1.0; 3], ..honest(20, 15) };
    let a = sweep(&cfg, 4).unwrap();
    let b = sweep(&cfg, 4).unwrap();
    assert_eq!(a.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![20, 21, 22, 23]);
    assert_eq!(sweep_summary(&a), sweep_summary(&b));
    assert_eq!(a[1].to_text(), run(&ScenarioConfig { seed: 21, ..cfg }).unwrap().to_text());
}

#[test]
fn config_text_round_trip_and_errors() {
    let cfg = ScenarioConfig {
        seed: 9,
        nodes: 3,
        topology: Topology::Ring,
        latency_ms: 250,
        hash_rates: vec![1.0, 0.5, 2.0],
        adversary: Adversary::DoubleSpend { confirmations: 2, attacker_rate: 0.3, give_up: 4 },
        ..ScenarioConfig::default()
    };
    assert_eq!(ScenarioConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert!(ScenarioConfig::parse("bogus = 1").is_err());
    assert!(ScenarioConfig::parse("nodes = many").is_err());
    assert!(ScenarioConfig::parse("nodes = 2\nhash_rates = 1,2,3").is_err());
    assert!(ScenarioConfig::parse("no equals sign").is_err());
}

#[test]
fn report_renders_as_json_and_text() {
    let report = run(&honest(2, 10)).unwrap();
    let json = report.to_json();
    assert_eq!(json["seed"], 2);
    assert_eq!(json["nodes"].as_array().unwrap().len(), 4);
    let text = report.to_text();
    assert!(text.lines().all(|l| l.contains('=')));
    assert!(text.contains("converged=true"));
}

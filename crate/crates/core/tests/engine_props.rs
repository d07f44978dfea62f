//! End-to-end properties of the round loop.

use fedpoison::aggregation::{aggregate, apply_global};
use fedpoison::attacks::{make_base_model, Attacker};
use fedpoison::engine::{sample_clients, DataSource};
use fedpoison::model::{evaluate, init_params};
use fedpoison::{
    derive_stream, AggregationRule, AttackKind, AttackSpec, ClientKind, ClientUpdate, MlpSpec, Activation, Rule,
    SimConfig, Simulation, TrimPolicy,
};

fn small_config() -> SimConfig {
    SimConfig {
        genuine_clients: 20,
        fake_clients: 2,
        rounds: 6,
        data: DataSource::Synthetic { classes: 4, dim: 6, per_class: 40, spread: 0.1, seed: 9 },
        hidden_layers: vec![12],
        ..SimConfig::default()
    }
}

#[test]
fn sampling_is_uniform_over_ids() {
    let (n, m, beta, draws) = (100, 10, 0.1, 10_000);
    let mut hits = vec![0usize; n + m];
    for i in 0..draws {
        let picked = sample_clients(n, m, beta, &mut derive_stream(3, i, u64::MAX));
        assert_eq!(picked.len(), 11);
        for id in picked {
            hits[id] += 1;
        }
    }
    let p = 11.0 / 110.0;
    let mean = draws as f64 * p;
    let var = draws as f64 * p * (1.0 - p);
    let stat: f64 = hits.iter().map(|&h| (h as f64 - mean).powi(2) / var).sum();
    let cells = (n + m) as f64;
    assert!((stat - cells).abs() < 3.0 * (2.0 * cells).sqrt(), "chi-square {stat} over {cells} ids");
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = SimConfig {
        attack: AttackSpec { kind: AttackKind::Random, lambda: 3.0, attacker_seed: 17 },
        sample_rate: 0.5,
        ..small_config()
    };
    let sim = Simulation::new(cfg).unwrap();
    let run_on = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sim.run_with_final_model().unwrap())
    };
    let (records_1, model_1) = run_on(1);
    let (records_8, model_8) = run_on(8);
    assert_eq!(records_1, records_8);
    let bits = |v: &fedpoison::ParamVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&model_1), bits(&model_8));
}

#[test]
fn all_fake_fedavg_round_lands_on_base_model() {
    let spec = MlpSpec::new(vec![20, 64, 10], Activation::Tanh).unwrap();
    for (lambda, eta) in [(1.0, 1.0), (4.0, 0.25), (1e6, 1e-6)] {
        let attack = AttackSpec { kind: AttackKind::Mpaf, lambda, attacker_seed: 31 };
        let mut attacker = Attacker::new(attack, &spec).unwrap();
        let global = init_params(&spec, &mut derive_stream(1, -1, 0));
        attacker.observe(&global, 0);
        let fakes = [100, 101, 102];
        let updates: Vec<ClientUpdate> = attacker
            .craft(&fakes, 0)
            .unwrap()
            .into_iter()
            .zip(fakes)
            .map(|(update, client_id)| ClientUpdate { client_id, kind: ClientKind::Fake, update, num_examples: 1 })
            .collect();
        let agg = aggregate(&AggregationRule::new(Rule::FedAvg), &updates, 0).unwrap();
        let next = apply_global(&global, &agg.update, eta).unwrap();
        let base = make_base_model(&spec, 31);
        for (a, b) in next.as_slice().iter().zip(base.as_slice()) {
            assert!((a - b).abs() <= 1e-12, "lambda {lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn noiseless_blobs_are_learned_perfectly() {
    let cfg = SimConfig {
        genuine_clients: 20,
        rounds: 60,
        data: DataSource::Synthetic { classes: 4, dim: 8, per_class: 40, spread: 0.0, seed: 4 },
        hidden_layers: vec![16],
        aggregation: AggregationRule::new(Rule::FedAvg),
        ..SimConfig::default()
    };
    let records = Simulation::new(cfg).unwrap().run().unwrap();
    assert_eq!(records.last().unwrap().test_accuracy, Some(1.0));
}

#[test]
fn base_model_is_near_chance_on_default_corpus() {
    let (_, test) = DataSource::default().load().unwrap();
    let spec = MlpSpec::new(vec![20, 64, 10], Activation::Tanh).unwrap();
    let mut accs = Vec::new();
    for seed in 0..20 {
        accs.push(evaluate(&spec, &make_base_model(&spec, seed), &test.batch()).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.1).abs() < 0.05, "mean base-model accuracy {mean}");
}

#[test]
fn trim_policies_resolve_k() {
    for (policy, expect) in [(TrimPolicy::TotalFakes, 2), (TrimPolicy::Fixed(1), 1)] {
        let cfg = SimConfig {
            attack: AttackSpec { kind: AttackKind::Mpaf, lambda: 10.0, attacker_seed: 3 },
            aggregation: AggregationRule::new(Rule::TrimmedMean(policy)),
            sample_rate: 0.3,
            rounds: 3,
            ..small_config()
        };
        let records = Simulation::new(cfg).unwrap().run().unwrap();
        assert!(records.iter().all(|r| r.trim == expect));
    }
}

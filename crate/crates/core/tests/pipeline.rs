use std::time::Duration;

use sensoropt::estimator::{estimate_pairs_momentum, estimate_pairs_round_robin, EpisodeOracle};
use sensoropt::model::{BackupConfig, DropoutVector, PairReturnTable};
use sensoropt::qubo::{at_most_two_dropout_prob, build_qubo, conditional_expected_return, SlackEncoding};
use sensoropt::simenv::*;
use sensoropt::solver::{brute_force_qubo, sensoropt, tabu_search, SensorOptOptions, TabuParams};
use sensoropt::Error;

fn mae(a: &PairReturnTable, b: &PairReturnTable) -> f64 {
    let v = a.values();
    v.iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / v.len() as f64
}

#[test]
fn table1_reference_optimum_is_pinned() {
    let best = brute_force_best_config(&table1_model(), &table1_instance()).unwrap();
    assert_eq!(best.config, BackupConfig::ones(5));
    assert_eq!(best.cost, 18);
}

#[test]
fn table1_pipeline_recovers_reference_optimum() {
    let inst = table1_instance();
    let model = table1_model();
    let mut oracle = make_oracle(&model, 0);
    let run = sensoropt(&inst, &mut oracle, &SensorOptOptions::default()).unwrap();
    assert_eq!(run.table, model.pair_table());
    assert_eq!(run.baseline, 10.0);
    assert_eq!(run.result.config, BackupConfig::ones(5));
    assert_eq!(run.build.matrix.m(), 14);
}

#[test]
fn table1_qubo_tabu_matches_enumeration_for_ten_seeds() {
    let build = build_qubo(&table1_instance(), &table1_model().pair_table(), SlackEncoding::Bounded).unwrap();
    let exact = brute_force_qubo(&build.matrix).unwrap();
    for seed in 0..10 {
        let t = tabu_search(&build.matrix, &TabuParams::for_size(14, seed)).unwrap();
        assert!((t.energy - exact.energy).abs() <= 1e-9 * exact.energy.abs().max(1.0));
        assert_eq!(t.config, exact.config);
    }
}

#[test]
fn literal_encoding_pipeline_on_table1() {
    let inst = table1_instance();
    let options = SensorOptOptions {
        encoding: SlackEncoding::Literal,
        ..SensorOptOptions::default()
    };
    let run = sensoropt(&inst, &mut make_oracle(&table1_model(), 0), &options).unwrap();
    assert_eq!(run.build.matrix.m(), 15);
    assert_eq!(run.result.config, BackupConfig::ones(5));
}

#[test]
fn pipeline_is_deterministic_under_noise() {
    let spec = ModelSpec {
        noise_sigma: 2.0,
        ..ModelSpec::pairwise(6)
    };
    let model = generate_model(&spec, 5).unwrap();
    let inst = generate_instance(&InstanceSpec::new(6), 5).unwrap();
    let a = sensoropt(&inst, &mut make_oracle(&model, 9), &SensorOptOptions::default()).unwrap();
    let b = sensoropt(&inst, &mut make_oracle(&model, 9), &SensorOptOptions::default()).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.table, b.table);
    assert_eq!(a.log.trace_csv(), b.log.trace_csv());
}

#[test]
fn oracle_dimension_mismatch_is_rejected() {
    let inst = generate_instance(&InstanceSpec::new(4), 1).unwrap();
    let mut oracle = make_oracle(&table1_model(), 0);
    assert!(matches!(
        sensoropt(&inst, &mut oracle, &SensorOptOptions::default()),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn knapsack_n10_pipeline_matches_dp() {
    for seed in 0..5 {
        let kp = KnapsackInstance::random(10, 20, 45, seed).unwrap();
        let (inst, model) = knapsack_to_instance(&kp, KNAPSACK_EPSILON).unwrap();
        let run = sensoropt(&inst, &mut make_oracle(&model, seed), &SensorOptOptions::default()).unwrap();
        assert!(run.result.feasible);
        assert_eq!(kp.value_of(&run.result.config), knapsack_dp(&kp).unwrap().value);
    }
}

#[test]
fn knapsack_exact_return_is_linear_in_value() {
    let kp = KnapsackInstance::random(6, 10, 20, 2).unwrap();
    let (inst, model) = knapsack_to_instance(&kp, KNAPSACK_EPSILON).unwrap();
    let e = KNAPSACK_EPSILON;
    let base = exact_expected_return(&model, &inst.d, &BackupConfig::zeros(6)).unwrap();
    for mask in 0u64..64 {
        let x = BackupConfig::from_mask(6, mask);
        let got = exact_expected_return(&model, &inst.d, &x).unwrap() - base;
        let want = (e - e * e) * kp.value_of(&x);
        assert!((got - want).abs() < 1e-11, "{x}: {got} vs {want}");
    }
}

#[test]
fn knapsack_brute_force_matches_dp() {
    for seed in 0..20 {
        let n = 1 + (seed % 12) as usize;
        let kp = KnapsackInstance::random(n, 20, 1 + seed * 3, seed).unwrap();
        let (inst, model) = knapsack_to_instance(&kp, KNAPSACK_EPSILON).unwrap();
        let best = brute_force_best_config(&model, &inst).unwrap();
        assert_eq!(kp.value_of(&best.config), knapsack_dp(&kp).unwrap().value);
    }
}

#[test]
fn exact_return_splits_into_second_order_part_and_tail() {
    let model = generate_model(&ModelSpec::pairwise(6), 11).unwrap();
    let d = DropoutVector::new(vec![0.05, 0.3, 0.15, 0.6, 0.1, 0.25]).unwrap();
    let table = model.pair_table();
    for mask in [0u64, 0b101, 0b111111] {
        let x = BackupConfig::from_mask(6, mask);
        let p = d.apply_backups(&x).unwrap();
        let q = at_most_two_dropout_prob(&p);
        let head = q * conditional_expected_return(&p, &table).unwrap();
        let mut tail = 0.0;
        let mut tail_prob = 0.0;
        for m in 0u64..64 {
            if m.count_ones() > 2 {
                tail += mask_probability(&p, m) * model.mask_return(m);
                tail_prob += mask_probability(&p, m);
            }
        }
        let exact = exact_expected_return(&model, &d, &x).unwrap();
        assert!((head + tail - exact).abs() < 1e-9);
        assert!((tail_prob - (1.0 - q)).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_agrees_with_exact_within_three_standard_errors() {
    let spec = ModelSpec {
        noise_sigma: 3.0,
        triple_scale: 2.0,
        ..ModelSpec::pairwise(4)
    };
    let model = generate_model(&spec, 3).unwrap();
    let d = DropoutVector::new(vec![0.2, 0.35, 0.1, 0.5]).unwrap();
    let x = BackupConfig::from_mask(4, 0b0101);
    let exact = exact_expected_return(&model, &d, &x).unwrap();
    let mut inside = 0;
    for seed in 0..100 {
        let mut oracle = make_oracle(&model, seed);
        let est = monte_carlo_expected_return(&mut oracle, &d, &x, 400, seed).unwrap();
        assert!(est.std_error_defined);
        if (est.mean - exact).abs() <= 3.0 * est.std_error {
            inside += 1;
        }
    }
    assert!(inside >= 99, "{inside}/100 within 3 SE");
}

#[test]
fn monte_carlo_table1_at_100k_episodes() {
    let model = GroundTruthModel::from_table(&table1_model().pair_table(), 1.0, Extension::AdditiveDeficit).unwrap();
    let inst = table1_instance();
    let x = BackupConfig::zeros(5);
    let exact = exact_expected_return(&model, &inst.d, &x).unwrap();
    let est = monte_carlo_expected_return(&mut make_oracle(&model, 1), &inst.d, &x, 100_000, 1).unwrap();
    assert!((est.mean - exact).abs() <= 3.0 * est.std_error);
}

#[test]
fn momentum_mean_error_not_worse_than_round_robin() {
    let spec = ModelSpec {
        pair_sigma_choices: vec![0.5, 5.0],
        ..ModelSpec::pairwise(5)
    };
    let model = generate_model(&spec, 1).unwrap();
    let truth = model.pair_table();
    let budget = 10 * 15;
    let (mut m_sum, mut r_sum) = (0.0, 0.0);
    for seed in 0..20 {
        let m = estimate_pairs_momentum(&mut make_oracle(&model, seed), budget).unwrap();
        let r = estimate_pairs_round_robin(&mut make_oracle(&model, seed), budget).unwrap();
        m_sum += mae(&m.to_table(truth.r0()).unwrap(), &truth);
        r_sum += mae(&r.to_table(truth.r0()).unwrap(), &truth);
    }
    assert!(m_sum <= r_sum, "momentum {m_sum} vs round robin {r_sum}");
}

#[test]
fn single_sensor_estimators_coincide() {
    let spec = ModelSpec {
        noise_sigma: 1.0,
        ..ModelSpec::pairwise(1)
    };
    let model = generate_model(&spec, 0).unwrap();
    let m = estimate_pairs_momentum(&mut make_oracle(&model, 4), 10).unwrap();
    let r = estimate_pairs_round_robin(&mut make_oracle(&model, 4), 10).unwrap();
    assert_eq!(m.samples(0, 0), r.samples(0, 0));
}

#[test]
fn estimators_exact_on_zero_noise_models() {
    let model = generate_model(&ModelSpec::pairwise(5), 8).unwrap();
    let truth = model.pair_table();
    let m = estimate_pairs_momentum(&mut make_oracle(&model, 0), 150).unwrap();
    let r = estimate_pairs_round_robin(&mut make_oracle(&model, 0), 150).unwrap();
    assert_eq!(m.to_table(truth.r0()).unwrap(), truth);
    assert_eq!(r.to_table(truth.r0()).unwrap(), truth);
    assert_eq!(m.total_samples(), 150);
}

#[test]
fn external_oracle_process_round_trip() {
    let script = r#"printf '{"n": 2}\n'; while read -r line; do printf '{"return": 2.5}\n'; done"#;
    let mut oracle = JsonLinesOracle::spawn(script, Duration::from_secs(10)).unwrap();
    assert_eq!(oracle.sensors(), 2);
    assert_eq!(oracle.sample(&[0, 1]).unwrap(), 2.5);
    let log = estimate_pairs_momentum(&mut oracle, 6).unwrap();
    assert_eq!(log.to_table(2.5).unwrap().get(0, 1), 2.5);
}

#[test]
fn external_oracle_timeout_terminates_session() {
    let script = r#"printf '{"n": 1}\n'; sleep 5"#;
    let mut oracle = JsonLinesOracle::spawn(script, Duration::from_millis(200)).unwrap();
    assert!(matches!(oracle.sample(&[]), Err(Error::Oracle(_))));
    assert!(matches!(oracle.sample(&[]), Err(Error::Oracle(_))));
}

#[test]
fn external_oracle_bad_handshake() {
    assert!(JsonLinesOracle::spawn("echo hello", Duration::from_secs(5)).is_err());
    assert!(JsonLinesOracle::spawn("exit 0", Duration::from_secs(5)).is_err());
}

mod common;

use common::*;
use fedcl_core::cl::ClMethod;
use fedcl_core::data::{features_matrix, labels_matrix, minibatches, synthetic_generate, Dataset, SyntheticSpec};
use fedcl_core::metrics::compute_report;
use fedcl_core::nn::{Activation, Architecture, Matrix, MlpModel, Mode, OptimizerSpec, ParameterVector, TensorRole};
use fedcl_core::orchestrator::*;
use fedcl_core::strategy::{aggregate_mean, StrategyKind};
use fedcl_core::Error;

fn synthetic(n: usize, shift: f64) -> DataSource {
    DataSource::Synthetic(SyntheticSpec {
        n,
        seed: 11,
        noise_std: 0.1,
        task_shift: shift,
    })
}

fn small_fl() -> ExperimentConfig {
    ExperimentConfig {
        data: synthetic(400, 0.0),
        clients: 2,
        rounds: 3,
        seed: 5,
        ..ExperimentConfig::default()
    }
}

fn small_fcl(method: ClMethod) -> ExperimentConfig {
    ExperimentConfig {
        mode: RunMode::Fcl,
        data: synthetic(600, 1.0),
        clients: 2,
        rounds: 3,
        local_epochs: 2,
        seed: 5,
        cl_method: method,
        client_optimizer: OptimizerSpec::adam(0.01),
        architecture: Architecture {
            activation: Activation::Relu,
            ..Architecture::default()
        },
        ..ExperimentConfig::default()
    }
}

fn schedule(cfg: &ExperimentConfig) -> FclSchedule {
    FclSchedule {
        rounds_per_task: cfg.rounds,
    }
}

#[test]
fn invalid_counts_are_rejected() {
    for (cfg, key) in [
        (ExperimentConfig { rounds: 0, ..small_fl() }, "rounds"),
        (ExperimentConfig { clients: 0, ..small_fl() }, "clients"),
        (ExperimentConfig { local_epochs: 0, ..small_fl() }, "local_epochs"),
    ] {
        match run_fl(&cfg) {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
            other => panic!("expected config error, got {other:?}"),
        }
    }
    let cfg = ExperimentConfig {
        cl_method: ClMethod::Ewc,
        ..small_fl()
    };
    assert!(run_fl(&cfg).is_err());
}

#[test]
fn single_client_round_is_centralized_training() {
    let cfg = ExperimentConfig {
        clients: 1,
        rounds: 1,
        local_epochs: 3,
        batch_size: 16,
        ..small_fl()
    };
    let data = prepare_data(&cfg).unwrap();
    let logs = run_fl_with(&cfg, &data, &NoopObserver).unwrap();

    let shard = client_shards(&cfg, &data.train).unwrap().remove(0);
    assert_eq!(shard.len(), data.train.len());
    let mut model = init_model(&cfg);
    let mut opt = cfg.client_optimizer.build();
    let mask = model.layout().trainable_mask().to_vec();
    let seed = client_batch_seed(cfg.seed, 0, 0);
    for epoch in 0..3 {
        for batch in minibatches(&shard, 16, seed, epoch).unwrap() {
            let (x, y) = (features_matrix(batch.iter()), labels_matrix(batch.iter()));
            let (_, g, trace) = model.loss_and_grad(&x, &y, Mode::Train, None).unwrap();
            model.commit_running_stats(&trace);
            opt.step_masked(model.params_mut(), g.values(), Some(&mask)).unwrap();
        }
    }
    let central = evaluate(&model.extract_params(), &data.test, &cfg.architecture).unwrap();
    assert!(central.bit_eq(&logs[0].metrics));
}

#[test]
fn reruns_are_bit_identical() {
    for kind in StrategyKind::ALL {
        let cfg = small_fl().with_strategy(kind);
        let a = run_fl(&cfg).unwrap();
        let b = run_fl(&cfg).unwrap();
        assert_eq!(a, b, "{kind:?}");
        assert_eq!(a.len(), 3);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = ExperimentConfig {
        clients: 5,
        ..small_fl()
    };
    let runs: Vec<_> = [1, 3, 8]
        .iter()
        .map(|&n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| run_fl(&cfg).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn clients_only_read_their_own_shard_and_rounds_are_barriered() {
    let cfg = ExperimentConfig {
        clients: 4,
        ..small_fl()
    };
    let log = EventLog::new();
    run_fl_with(&cfg, &prepare_data(&cfg).unwrap(), &log).unwrap();
    let events = log.events();
    let reads: Vec<_> = events
        .iter()
        .filter_map(|e| match e {
            Event::ShardRead { reader, owner } => Some((*reader, *owner)),
            _ => None,
        })
        .collect();
    assert!(!reads.is_empty());
    assert!(reads.iter().all(|(r, o)| r == o));

    for round in 0..cfg.rounds {
        let agg = events
            .iter()
            .position(|e| *e == Event::Aggregated { round, task: 0 })
            .unwrap();
        for (i, e) in events.iter().enumerate() {
            match e {
                Event::LocalTrainEnd { round: r, .. } if *r == round => assert!(i < agg),
                Event::LocalTrainStart { round: r, .. } if *r == round + 1 => assert!(i > agg),
                _ => {}
            }
        }
        let ends = events
            .iter()
            .filter(|e| matches!(e, Event::LocalTrainEnd { round: r, .. } if *r == round))
            .count();
        assert_eq!(ends, cfg.clients);
    }
}

#[test]
fn client_failure_names_client_and_round() {
    // 6 training rows over 4 clients: shards of 2, 2, 1, 1
    let cfg = ExperimentConfig {
        data: synthetic(8, 0.0),
        clients: 4,
        ..small_fl()
    };
    match run_fl(&cfg) {
        Err(Error::Client { client, round, .. }) => assert_eq!((client, round), (2, 0)),
        other => panic!("expected client error, got {other:?}"),
    }
}

#[test]
fn zero_learning_rate_returns_broadcast_weights() {
    let cfg = ExperimentConfig {
        client_optimizer: OptimizerSpec::sgd(0.0),
        ..small_fl()
    };
    let data = prepare_data(&cfg).unwrap();
    let shard = client_shards(&cfg, &data.train).unwrap().remove(0);
    let init = init_model(&cfg);
    let mut rng = rng(8);
    let global = ParameterVector::new(
        random_model(&mut rng, Activation::Identity).params().to_vec(),
        init.layout().clone(),
    )
    .unwrap();
    let mut client = ClientState::new(0, &init, shard, &cfg).unwrap();
    let ctx = RoundContext {
        config: &cfg,
        round: 0,
        task: 0,
        task_start: true,
        observer: &NoopObserver,
    };
    let out = client.local_train(&global, &ctx).unwrap();
    let mask = global.layout().trainable_mask();
    for k in 0..global.len() {
        if mask[k] {
            assert_eq!(out.update.params.values()[k].to_bits(), global.values()[k].to_bits());
        }
    }
}

#[test]
fn teacher_is_never_averaged() {
    let cfg = small_fl().with_strategy(StrategyKind::FedDistill);
    let data = prepare_data(&cfg).unwrap();
    let init = init_model(&cfg);
    let mut clients: Vec<ClientState> = client_shards(&cfg, &data.train)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| ClientState::new(i, &init, s, &cfg).unwrap())
        .collect();
    let mut global = init.extract_params();
    for round in 0..2 {
        let ctx = RoundContext {
            config: &cfg,
            round,
            task: 0,
            task_start: round == 0,
            observer: &NoopObserver,
        };
        let updates: Vec<_> = clients
            .iter_mut()
            .map(|c| c.local_train(&global, &ctx).unwrap().update)
            .collect();
        global = aggregate_mean(&updates, false).unwrap();
        for c in &clients {
            assert_ne!(c.teacher_params().unwrap(), global);
        }
    }
}

#[test]
fn evaluation_is_batch_size_invariant() {
    let cfg = small_fl();
    let data = prepare_data(&cfg).unwrap();
    let mut rng = rng(9);
    let model = random_model(&mut rng, Activation::Relu);
    let params = model.extract_params();
    let whole = evaluate_batched(&params, &data.test, model.architecture(), Some(250)).unwrap();
    let small = evaluate_batched(&params, &data.test, model.architecture(), Some(16)).unwrap();
    assert!(whole.bit_eq(&small));
    assert!(evaluate(&params, &data.test.with_samples(vec![]), model.architecture()).is_err());
}

/// A model computing `x -> A x + b` exactly (up to BN rounding).
fn affine_model(weights: &[f64], bias: &[f64]) -> MlpModel {
    let arch = Architecture::default();
    let layout = arch.layout();
    let mut v = vec![0.0; layout.len()];
    let r = |layer, role| layout.range(layer, role).unwrap();
    let w1 = r(0, TensorRole::Weight);
    for o in 0..8 {
        for i in 0..29 {
            v[w1.start + o * 29 + i] = weights[o * 29 + i];
        }
    }
    let w2 = r(2, TensorRole::Weight);
    for o in 0..16 {
        v[w2.start + o * 16 + o] = 1.0;
    }
    let w3 = r(4, TensorRole::Weight);
    for o in 0..8 {
        v[w3.start + o * 16 + o] = 1.0;
    }
    v[r(4, TensorRole::Bias)].copy_from_slice(bias);
    let scale = (1.0f64 + arch.bn_epsilon).sqrt();
    for bn in [1, 3] {
        v[r(bn, TensorRole::Gamma)].iter_mut().for_each(|g| *g = scale);
        v[r(bn, TensorRole::RunningVar)].iter_mut().for_each(|g| *g = 1.0);
    }
    MlpModel::from_params(arch, &ParameterVector::new(v, layout).unwrap()).unwrap()
}

#[test]
fn perfect_predictor_scores_zero_loss() {
    let (ds, truth) = synthetic_generate(300, 3, 0.0).unwrap();
    // unclipped targets so the map is exactly affine
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut s = *s;
            s.labels = truth.apply(&s.features);
            s
        })
        .collect();
    let ds = ds.with_samples(samples);
    let model = affine_model(&truth.weights, &truth.bias);
    let rep = evaluate(&model.extract_params(), &ds, model.architecture()).unwrap();
    assert!(rep.avg_mse <= 1e-20 && rep.avg_rmse <= 1e-10);
    assert!(rep.per_action_pcc.iter().all(|p| (p.unwrap() - 1.0).abs() <= 1e-12));
}

#[test]
fn constant_predictor_is_degenerate() {
    let (ds, _) = synthetic_generate(200, 4, 0.1).unwrap();
    let c = [2.5, 3.0, 3.5, 1.5, 4.0, 2.0, 3.2, 2.8];
    let model = affine_model(&[0.0; 8 * 29], &c);
    let rep = evaluate(&model.extract_params(), &ds, model.architecture()).unwrap();
    assert_eq!(rep.degenerate_actions.len(), 8);
    assert!(rep.avg_pcc.is_none());
    let y = ds.labels();
    for (a, mse) in rep.per_action_mse.iter().enumerate() {
        let col = y.column(a);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = var + (mean - c[a]) * (mean - c[a]);
        assert!((mse - expected).abs() <= 1e-12, "{mse} vs {expected}");
    }
    let direct = compute_report(&Matrix::from_rows(&vec![c; ds.len()]).unwrap(), &y).unwrap();
    assert!((direct.avg_mse - rep.avg_mse).abs() <= 1e-12);
}

#[test]
fn fcl_evaluates_circle_then_full_test_set() {
    let cfg = small_fcl(ClMethod::Ewc);
    let data = prepare_data(&cfg).unwrap();
    let out = run_fcl_with(&cfg, schedule(&cfg), &data, &NoopObserver).unwrap();
    assert_eq!(out.rounds.len(), 6);
    let circle = Dataset {
        samples: data.test.samples.iter().filter(|s| s.task_flag() == 1.0).copied().collect(),
        ..data.test.clone()
    };
    let arch = &cfg.architecture;
    assert!(evaluate(&out.params_after_task1, &circle, arch).unwrap().bit_eq(&out.after_task1));
    assert!(evaluate(&out.params_after_task2, &data.test, arch).unwrap().bit_eq(&out.after_task2));
    assert!(evaluate(&out.params_after_task2, &circle, arch).unwrap().bit_eq(&out.task1_after_task2));
    assert!(out.rounds[2].metrics.bit_eq(&out.after_task1));
    assert!(out.rounds[5].metrics.bit_eq(&out.after_task2));
}

#[test]
fn zero_lambda_matches_sequential_baseline() {
    let base = run_fcl(&small_fcl(ClMethod::None), schedule(&small_fcl(ClMethod::None))).unwrap();
    for method in [ClMethod::Ewc, ClMethod::EwcOnline, ClMethod::Si, ClMethod::Mas] {
        let mut cfg = small_fcl(method);
        cfg.penalty.lambda = Some(0.0);
        let out = run_fcl(&cfg, schedule(&cfg)).unwrap();
        assert_eq!(out.rounds, base.rounds, "{method:?}");
        assert_eq!(out.params_after_task2, base.params_after_task2);
    }
}

#[test]
fn ewc_does_not_forget_more_than_baseline() {
    let mut cfg = small_fcl(ClMethod::None);
    cfg.rounds = 5;
    let base = run_fcl(&cfg, schedule(&cfg)).unwrap();
    cfg.cl_method = ClMethod::Ewc;
    let ewc = run_fcl(&cfg, schedule(&cfg)).unwrap();
    assert!(ewc.task1_after_task2.loss() <= base.task1_after_task2.loss());
}

#[test]
fn task_boundary_work_precedes_final_task1_aggregation() {
    for method in [ClMethod::Ewc, ClMethod::Nr] {
        let cfg = small_fcl(method);
        let log = EventLog::new();
        run_fcl_with(&cfg, schedule(&cfg), &prepare_data(&cfg).unwrap(), &log).unwrap();
        let events = log.events();
        let agg = events
            .iter()
            .position(|e| *e == Event::Aggregated { round: 2, task: 0 })
            .unwrap();
        let boundary: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, Event::ImportanceComputed { .. } | Event::ReplayStored { .. }))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(boundary.len(), cfg.clients, "{method:?}");
        assert!(boundary.iter().all(|&i| i < agg));
        assert!(events
            .iter()
            .all(|e| !matches!(e, Event::ShardRead { reader, owner } if reader != owner)));
    }
}

#[test]
fn fcl_requires_fedavg() {
    let cfg = small_fcl(ClMethod::Ewc).with_strategy(StrategyKind::FedProx);
    assert!(matches!(run_fcl(&cfg, schedule(&cfg)), Err(Error::Config { .. })));
}

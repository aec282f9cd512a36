use noisynet::error::Error;
use noisynet::harness::{self, AgentKind, ExperimentConfig, Summary};
use noisynet::net::NoiseSpec;
use noisynet::noisy::{NoiseKind, DEFAULT_SIGMA0};
use noisynet::optim::{OptimConfig, OptimizerKind};
use noisynet::par::Execution;
use noisynet::value::{EpsilonSchedule, ValueAgentConfig};

fn chain10(seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        agent: AgentKind::Dqn,
        noisy: true,
        noisy_all_layers: true,
        env: "chain:10".parse().unwrap(),
        seeds,
        frames: 50_000,
        eval_period: 10_000,
        eval_episodes: 5,
        value: ValueAgentConfig {
            hidden: vec![32, 32],
            target_period: 250,
            optim: OptimConfig {
                lr: 0.01,
                kind: OptimizerKind::Momentum { beta: 0.9 },
                clip_norm: Some(10.0),
            },
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn noisy_dqn_solves_chain10() {
    let config = chain10(vec![0, 1, 2]);
    let outcomes = harness::run_experiment(&config).unwrap();
    let finals: Vec<f64> = outcomes
        .iter()
        .map(|o| o.record.points.last().unwrap().raw_score)
        .collect();
    let solved = finals.iter().filter(|&&r| r == 1.0).count();
    assert!(solved >= 2, "final returns {finals:?}");
}

#[test]
fn run_directory_layout() {
    let mut config = chain10(vec![4, 5]);
    config.frames = 600;
    config.eval_period = 200;
    let dir = tempfile::tempdir().unwrap();
    let summary = harness::train(&config, dir.path()).unwrap();
    for file in [
        "config.json",
        "metrics.csv",
        "summary.json",
        "checkpoints/seed_4.json",
        "checkpoints/seed_5.json",
    ] {
        assert!(dir.path().join(file).is_file(), "{file} missing");
    }
    let back = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(back.hash(), summary.config_hash);
    let on_disk: Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(on_disk, summary);
    let records = harness::load_records(dir.path()).unwrap();
    assert_eq!(records.len(), 2);
    for r in &records {
        let frames: Vec<u64> = r.points.iter().map(|p| p.frame).collect();
        assert_eq!(frames, vec![0, 200, 400, 600]);
        assert_eq!(r.agent, "noisy-dqn");
        // Three noisy layers: both trunk layers and the head.
        assert_eq!(r.points[0].sigma_bar.len(), 3);
    }
}

#[test]
fn invalid_config_fails_before_writing() {
    let mut config = chain10(vec![0]);
    config.eval_period = config.frames + 1;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(matches!(
        harness::train(&config, &out),
        Err(Error::Config(_))
    ));
    assert!(!out.exists());
}

#[test]
fn baseline_keeps_its_epsilon_and_noisy_drops_it() {
    let mut config = chain10(vec![0]);
    config.value.epsilon = EpsilonSchedule::standard(1000);
    assert_eq!(
        config.value_config().epsilon,
        EpsilonSchedule::constant(0.0)
    );
    assert_eq!(
        config.value_config().noise,
        Some(NoiseSpec {
            kind: NoiseKind::Factorised,
            sigma0: DEFAULT_SIGMA0,
            all_layers: true
        })
    );
    config.noisy = false;
    assert_eq!(
        config.value_config().epsilon,
        EpsilonSchedule::standard(1000)
    );
    assert_eq!(config.value_config().noise, None);
    config.agent = AgentKind::A3c;
    config.noisy = true;
    assert_eq!(
        config.a3c_config().noise.unwrap().kind,
        NoiseKind::Independent
    );
}

#[test]
fn parallel_seeds_match_sequential() {
    let mut config = chain10(vec![0, 1, 2]);
    config.frames = 500;
    config.eval_period = 250;
    config.execution = Execution::Sequential;
    let seq: Vec<_> = harness::run_experiment(&config)
        .unwrap()
        .into_iter()
        .map(|o| o.record)
        .collect();
    config.execution = Execution::Parallel;
    let par: Vec<_> = harness::run_experiment(&config)
        .unwrap()
        .into_iter()
        .map(|o| o.record)
        .collect();
    assert_eq!(seq, par);
}

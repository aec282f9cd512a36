use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use noisynet::env::EnvConfig;
use noisynet::harness::{run_experiment, AgentKind, ExperimentConfig};
use noisynet::net::NoiseSpec;
use noisynet::noisy::NoiseKind;
use noisynet::par::Execution;
use noisynet::value::{EpsilonSchedule, ValueAgent, ValueAgentConfig, ValueTrainer};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    let env: EnvConfig = "chain:20:40".parse().unwrap();
    for batch in [32, 256] {
        for (name, execution) in MODES {
            let config = ValueAgentConfig {
                noise: Some(NoiseSpec {
                    kind: NoiseKind::Factorised,
                    sigma0: 0.5,
                    all_layers: true,
                }),
                epsilon: EpsilonSchedule::constant(0.0),
                hidden: vec![64, 64],
                batch_size: batch,
                warmup: batch,
                execution,
                ..Default::default()
            };
            let agent = ValueAgent::new(config, 20, 2, 0).unwrap();
            let mut trainer = ValueTrainer::new(agent, env.build().unwrap(), 0).unwrap();
            trainer.run(batch as u64).unwrap();
            group.bench_with_input(BenchmarkId::new(name, batch), &batch, |b, _| {
                b.iter(|| trainer.agent.train_step().unwrap())
            });
        }
    }
    group.finish();
}

fn seeds(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment_seeds");
    group.sample_size(10);
    for (name, execution) in MODES {
        let mut config = ExperimentConfig {
            agent: AgentKind::Dqn,
            env: "chain:10".parse().unwrap(),
            seeds: vec![0, 1, 2, 3],
            frames: 1_000,
            eval_period: 500,
            eval_episodes: 2,
            execution,
            ..Default::default()
        };
        config.value.hidden = vec![32, 32];
        config.value.execution = Execution::Sequential;
        group.bench_function(name, |b| b.iter(|| run_experiment(&config).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, train_step, seeds);
criterion_main!(benches);

use gridstitch::agents::{Agent, Algorithm};
use gridstitch::grid_env::step;
use gridstitch::harness::{
    self, evaluate, evaluate_checkpoint, load_checkpoint, read_metrics, run_to_dir, train, Execution, RunConfig,
    RunRecord, CHECKPOINT_FILE, DIAGNOSTIC_FILE, METRICS_FILE, METRICS_HEADER,
};
use gridstitch::oracle::optimal_steps;
use gridstitch::task_settings::{sample_task, Mode, SettingKind, SettingSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> RunConfig {
    RunConfig {
        num_env_steps: 4_000,
        num_updates: 200,
        num_parallel_envs: 8,
        min_replay_size: 200,
        batch_size: 32,
        eval_episodes: 16,
        eval_interval: 50,
        log_wall_time: false,
        ..RunConfig::default()
    }
}

fn setting() -> SettingSpec {
    SettingSpec::new(SettingKind::NoStitching, 2, 1, Mode::Train)
}

fn run(config: &RunConfig, algo: Algorithm, exec: Execution) -> harness::TrainOutput<f32> {
    let spec = config.agent_spec(algo, 2).unwrap();
    train::<f32>(config, spec, &setting(), 7, exec, &mut |_| Ok(())).unwrap()
}

fn csv_lines(records: &[RunRecord]) -> Vec<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap())
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn dry_run_only_evaluates_initial_policy() {
    let config = RunConfig {
        num_updates: 0,
        ..tiny_config()
    };
    let out = run(&config, Algorithm::DqnTd, Execution::Sequential);
    assert_eq!(out.records.len(), 2);
    assert!(out.records.iter().all(|r| r.step == 0 && r.loss.is_nan()));
    assert_eq!(out.records[0].mode, "train");
    assert_eq!(out.records[1].mode, "eval");
    assert_eq!(out.agent.updates(), 0);
}

#[test]
fn step_and_update_accounting() {
    let config = tiny_config();
    let out = run(&config, Algorithm::DqnTd, Execution::Sequential);
    assert_eq!(out.agent.updates(), config.num_updates);
    assert_eq!(out.env_steps, out.rounds.iter().map(|r| r.steps).sum::<u64>());
    assert_eq!(out.episodes, out.rounds.len() as u64 * config.num_parallel_envs as u64);
    assert!(out.env_steps >= config.num_env_steps - 100 * config.num_parallel_envs as u64);
    let steps: Vec<u64> = out.records.iter().step_by(2).map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 50, 100, 150, 200]);
    assert!(out.records[2..].iter().all(|r| r.loss.is_finite()));
}

#[test]
fn large_scale_update_ratio() {
    let config =
        RunConfig::from_toml_str("num_env_steps = 500000000\nnum_updates = 1000000\nnum_parallel_envs = 1024\n")
            .unwrap();
    assert!((config.update_ratio() - 0.002).abs() < 1e-15);
    assert_eq!(config.updates_due(500), 1);
    assert_eq!(config.updates_due(499), 0);
    assert_eq!(RunConfig::default().update_ratio(), 0.1);
}

#[test]
fn runs_are_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let config = tiny_config();
    for d in &dirs {
        let spec = config.agent_spec(Algorithm::ClearnTd, 2).unwrap();
        run_to_dir(&config, spec, &setting(), 3, d.path(), Execution::Sequential).unwrap();
    }
    for file in [METRICS_FILE, CHECKPOINT_FILE] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let text = std::fs::read_to_string(dirs[0].path().join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
    let records = read_metrics(&dirs[0].path().join(METRICS_FILE)).unwrap();
    assert_eq!(
        csv_lines(&records),
        text.lines().map(str::to_string).collect::<Vec<_>>()
    );
}

#[test]
fn parallel_matches_sequential() {
    let config = tiny_config();
    for algo in [Algorithm::DqnTd, Algorithm::Crl] {
        let seq = run(&config, algo, Execution::Sequential);
        let par = run(&config, algo, Execution::Parallel);
        assert_eq!(csv_lines(&seq.records), csv_lines(&par.records));
        assert_eq!(seq.agent.params().flat(), par.agent.params().flat());
    }
}

#[test]
fn checkpoint_round_trip_preserves_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config();
    let spec = config.agent_spec(Algorithm::DqnMc, 2).unwrap();
    let out = run_to_dir(&config, spec, &setting(), 5, dir.path(), Execution::Sequential).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let (loaded, meta) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(meta.seed, 5);
    assert_eq!(loaded.params().flat(), out.agent.params().flat());
    assert_eq!(loaded.temperature(), out.agent.temperature());
    assert_eq!(loaded.updates(), out.agent.updates());
    let eval = setting().with_mode(Mode::Eval);
    let a = evaluate(&out.agent, &eval, 32, 100, 99, Execution::Sequential).unwrap();
    let b = evaluate(&loaded, &eval, 32, 100, 99, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let record = evaluate_checkpoint(&path, &eval, 32, 99, Execution::Sequential).unwrap();
    assert_eq!(record.successes, a.successes);
    assert_eq!(record.mode, "eval");
    assert!(evaluate_checkpoint(
        &path,
        &SettingSpec::new(SettingKind::NoStitching, 3, 1, Mode::Eval),
        4,
        0,
        Execution::Sequential
    )
    .is_err());
}

#[test]
fn untrained_policy_is_uniform_and_sometimes_succeeds() {
    let spec = tiny_config().agent_spec(Algorithm::DqnTd, 2).unwrap();
    let agent = Agent::<f32>::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let s = evaluate(&agent, &setting(), 256, 100, 1, Execution::Sequential).unwrap();
    assert!(s.successes > 0);
    assert!((s.mean_entropy - 6f64.ln()).abs() < 1e-6);
}

#[test]
fn oracle_plans_solve_every_task() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in [SettingKind::NoStitching, SettingKind::Quarters] {
        let spec = SettingSpec::new(kind, 4, 1, Mode::Eval);
        for _ in 0..20 {
            let task = sample_task(&spec, &mut rng).unwrap();
            let search = optimal_steps(&task.initial, &task.goal).unwrap();
            let mut s = task.initial;
            let mut taken = 0;
            while !task.goal.is_satisfied_by(&s) {
                s = step(&s, search.optimal_first_actions(&s)[0]);
                taken += 1;
                assert!(taken <= 100);
            }
            assert_eq!(Some(taken), search.optimal_steps);
        }
    }
}

#[test]
fn divergence_leaves_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        learning_rate: 1e30,
        ..tiny_config()
    };
    let spec = config.agent_spec(Algorithm::DqnTd, 2).unwrap();
    let err = run_to_dir(&config, spec, &setting(), 1, dir.path(), Execution::Sequential).unwrap_err();
    assert!(err.to_string().contains("update"), "{err}");
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(DIAGNOSTIC_FILE)).unwrap()).unwrap();
    assert_eq!(diag["seed"], 1);
}

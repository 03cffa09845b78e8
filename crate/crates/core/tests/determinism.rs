use setad::config::RunConfig;
use setad::data::synth_blobs;
use setad::pipeline::run_experiment;
use setad::Execution;

fn cfg(execution: Execution) -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_overrides(&["labeled_count=10", "epochs=4", "n_contexts=12"]).unwrap();
    c.hp.execution = execution;
    c
}

#[test]
fn identical_config_gives_identical_artifacts() {
    let data = synth_blobs(600, 30, 5, 4.0, 8).unwrap();
    let a = run_experiment(&data, &cfg(Execution::Parallel)).unwrap();
    let b = run_experiment(&data, &cfg(Execution::Parallel)).unwrap();
    assert_eq!(a.outcome.model.to_bytes(), b.outcome.model.to_bytes());
    assert_eq!(a.report.to_json(), b.report.to_json());
}

#[test]
fn execution_mode_does_not_change_results() {
    let data = synth_blobs(600, 30, 5, 4.0, 8).unwrap();
    let a = run_experiment(&data, &cfg(Execution::Parallel)).unwrap();
    let b = run_experiment(&data, &cfg(Execution::Sequential)).unwrap();
    assert_eq!(a.outcome.model.to_bytes(), b.outcome.model.to_bytes());
    assert_eq!(a.outcome.log.losses(), b.outcome.log.losses());
    assert_eq!(a.report.to_json(), b.report.to_json());
}

#[test]
fn different_seeds_give_different_models() {
    let data = synth_blobs(600, 30, 5, 4.0, 8).unwrap();
    let mut other = cfg(Execution::Parallel);
    other.set_seed(1);
    let a = run_experiment(&data, &cfg(Execution::Parallel)).unwrap();
    let b = run_experiment(&data, &other).unwrap();
    assert_ne!(a.outcome.model.to_bytes(), b.outcome.model.to_bytes());
}

use std::path::PathBuf;

use sqlaug_core::synthesis::QuestionGenerator;
use sqlaug_models::external::ExternalGenerator;
use sqlaug_models::generator::GeneratorTrainConfig;

fn stub() -> ExternalGenerator {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/echo_worker.py");
    ExternalGenerator::spawn("python3", &[script.display().to_string()]).unwrap()
}

#[test]
fn worker_replies_are_normalized_to_the_contract() {
    let g = stub();
    let out = g.generate("d : t name text", 3).unwrap();
    let qs: Vec<&str> = out.iter().map(|c| c.question.as_str()).collect();
    assert_eq!(qs, ["List t name text.", "What is t name text?", "Show t name text."]);
    assert_eq!(g.generate("d : x", 1).unwrap().len(), 1);
    assert!(g.generate("d : x", 0).is_err());
}

#[test]
fn train_and_load_round_trip_through_the_worker() {
    let g = stub();
    let dir = tempfile::tempdir().unwrap();
    g.train(&[("a : b".into(), "c?".into())], &GeneratorTrainConfig::default(), dir.path())
        .unwrap();
    g.load(dir.path()).unwrap();
}

#[test]
fn missing_program_is_a_component_error() {
    assert!(ExternalGenerator::spawn("/nonexistent/worker", &[]).is_err());
}

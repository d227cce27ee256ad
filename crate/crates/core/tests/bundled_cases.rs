use std::path::PathBuf;

use fairshed::{load_case, synthetic};

fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(name)
}

#[test]
fn three_bus_file_matches_generator() {
    let mut from_file = load_case(&case_path("3bus.case")).unwrap();
    let generated = synthetic::three_bus();
    from_file.name = generated.name.clone();
    assert_eq!(from_file.loads, generated.loads);
    assert_eq!(from_file.generators, generated.generators);
    assert_eq!(from_file.fairness, generated.fairness);
    assert_eq!(from_file.copper_plate, generated.copper_plate);
}

#[test]
fn rts73_file_matches_generator() {
    let case = load_case(&case_path("rts73_synthetic.case")).unwrap();
    assert_eq!(case, synthetic::rts73());
    assert_eq!(case.n_buses(), 73);
    assert_eq!(case.n_loads(), 51);
    assert_eq!(case.features.len(), 5);
}

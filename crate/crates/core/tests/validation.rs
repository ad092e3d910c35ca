use bwadapt::validate::{check_case, erlang_case, multirate_case};

#[test]
fn reduced_modes_match_oracles() {
    for case in [erlang_case(300_000, 5).unwrap(), multirate_case(300_000, 5).unwrap()] {
        let report = check_case(&case).unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn mis_set_duration_is_caught() {
    let mut case = erlang_case(300_000, 5).unwrap();
    for class in &mut case.scenario.classes {
        class.mean_duration *= 2.0;
    }
    let report = check_case(&case).unwrap();
    assert!(!report.passed(), "harness accepted a doubled holding time:\n{report}");

    let mut case = multirate_case(300_000, 5).unwrap();
    case.scenario.classes[1].mean_duration *= 2.0;
    assert!(!check_case(&case).unwrap().passed());
}

use dcsim::acceptance::Suite;

#[test]
fn acceptance_criteria() {
    let mut suite = Suite::new();
    let verdicts = suite.run_all().expect("acceptance scenarios run");
    for v in &verdicts {
        println!("{v}");
    }
    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    assert_eq!(verdicts.len(), 10);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

use std::path::PathBuf;

use drivesynth_core::anonymize::{apply_rules, homogeneity_check, k_of, Action, ColumnRule, TextTable};
use drivesynth_core::taxonomy::{Priority, Registry};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn anonymized_table_matches_golden_bytes() {
    let input = TextTable::read_csv(&golden("table1.csv")).unwrap();
    let rules = vec![
        ColumnRule::new("Age", Action::Generalize { edges: vec![10.0, 30.0, 50.0] }),
        ColumnRule::new("Sex", Action::Suppress).when("Age", "10--29"),
        ColumnRule::new("ZIP", Action::Suppress),
        ColumnRule::new("Disease", Action::Keep),
    ];
    let out = apply_rules(&input, &rules).unwrap();
    let expected = std::fs::read_to_string(golden("table2.csv")).unwrap();
    assert_eq!(out.to_csv_string().unwrap(), expected);

    let qi = ["Age", "Sex", "ZIP"];
    assert_eq!(k_of(&input, &qi).unwrap().0, 1);
    assert_eq!(k_of(&out, &qi).unwrap().0, 2);
    assert!(homogeneity_check(&out, &qi, "Disease").unwrap().is_empty());
}

#[test]
fn taxonomy_matches_golden_rows() {
    let expected = std::fs::read_to_string(golden("taxonomy.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(expected.as_bytes());
    let rows: Vec<(String, String, String)> = rdr.deserialize().map(Result::unwrap).collect();
    let registry = Registry::shipped();
    let got: Vec<(String, String, String)> = registry
        .signals()
        .iter()
        .map(|s| (s.name.clone(), s.priority.to_string(), s.priority.color().to_string()))
        .collect();
    assert_eq!(got, rows);

    let counts: Vec<usize> = [Priority::High, Priority::Medium, Priority::Low]
        .iter()
        .map(|&p| registry.list_signals(Some(p), None).len())
        .collect();
    assert_eq!(counts, [4, 7, 3]);
}

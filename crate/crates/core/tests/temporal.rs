use std::collections::BTreeMap;

use egoact_core::data::{synth_generate, SynthConfig};
use egoact_core::temporal::{
    augment_dataset, enumerate_all, expand, validate_meta, ActionGroup, AddRule, ExpansionPolicy, MetaSequence,
};

fn meta() -> MetaSequence {
    let group = |id: &str, actions: &[usize]| ActionGroup { id: id.into(), actions: actions.to_vec() };
    MetaSequence {
        sequence_id: "s".into(),
        groups: vec![group("take", &[0]), group("open", &[1, 1]), group("pour", &[2]), group("close", &[3])],
        swappable: vec![("take".into(), "open".into())],
        skippable: vec!["close".into()],
        addable: vec![AddRule { id: "pour".into(), positions: vec![0, 4] }],
    }
}

#[test]
fn enumeration_lists_every_combination() {
    let m = MetaSequence { addable: vec![AddRule { id: "pour".into(), positions: vec![0] }], ..meta() };
    let e = enumerate_all(&m, 1000).unwrap();
    assert!(!e.overflow);
    let expected: Vec<Vec<usize>> = vec![
        vec![0, 1, 1, 2, 3],
        vec![1, 1, 0, 2, 3],
        vec![0, 1, 1, 2],
        vec![1, 1, 0, 2],
        vec![2, 0, 1, 1, 2, 3],
        vec![2, 1, 1, 0, 2, 3],
        vec![2, 0, 1, 1, 2],
        vec![2, 1, 1, 0, 2],
    ];
    assert_eq!(e.sequences.len(), expected.len());
    for s in expected {
        assert!(e.sequences.contains(&s), "{s:?}");
    }
}

#[test]
fn enumeration_reports_overflow() {
    let e = enumerate_all(&meta(), 3).unwrap();
    assert!(e.overflow);
    assert!(e.sequences.len() <= 3);
}

#[test]
fn out_of_range_add_positions_are_rejected() {
    let m = MetaSequence { addable: vec![AddRule { id: "pour".into(), positions: vec![0, 9] }], ..meta() };
    assert!(validate_meta(&m).iter().any(|p| p.contains("position 9")));
    assert!(expand(&m, &ExpansionPolicy::identity(0)).is_err());
}

#[test]
fn certain_operations_are_applied_in_order() {
    let m = meta();
    let p = ExpansionPolicy { p_swap: 1.0, p_skip: 1.0, p_add: 1.0, seed: 0 };
    // swap -> open take pour close; skip close -> open take pour; add at 0 and at min(4, 4)
    assert_eq!(expand(&m, &p).unwrap(), vec![2, 1, 1, 0, 2, 2]);
}

#[test]
fn expansion_depends_on_seed_and_sequence_only() {
    let m = MetaSequence { addable: vec![], ..meta() };
    let p = ExpansionPolicy { p_swap: 0.5, p_skip: 0.5, p_add: 0.0, seed: 3 };
    let a: Vec<_> = (0..20).map(|_| expand(&m, &p).unwrap()).collect();
    assert!(a.windows(2).all(|w| w[0] == w[1]));
    let outcomes: std::collections::BTreeSet<_> = (0..64)
        .map(|seed| expand(&m, &ExpansionPolicy { seed, ..p }).unwrap())
        .collect();
    assert_eq!(outcomes.len(), 4);
}

#[test]
fn augmented_dataset_moves_whole_shots() {
    let ds = synth_generate(&SynthConfig { shots_per_sequence: (4, 4), seed: 2, ..Default::default() }).unwrap();
    let target = &ds.sequences[0];
    let labels = target.shot_labels();
    let meta = MetaSequence {
        sequence_id: target.id.clone(),
        groups: labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ActionGroup { id: format!("g{i}"), actions: vec![l] })
            .collect(),
        swappable: vec![("g0".into(), "g3".into())],
        skippable: vec![],
        addable: vec![],
    };
    let metas = BTreeMap::from([(target.id.clone(), meta.clone())]);
    let out = augment_dataset(&ds, &metas, &ExpansionPolicy { p_swap: 1.0, seed: 4, ..Default::default() }).unwrap();
    let got = &out.sequences[0];
    assert_eq!(got.shots[0], target.shots[3]);
    assert_eq!(got.shots[3], target.shots[0]);
    assert_eq!(got.shots[1..3], target.shots[1..3]);
    assert!(got.provenance.as_deref().unwrap().contains("seed=4"));
    assert_eq!(out.sequences[1..], ds.sequences[1..]);

    let mut wrong = meta;
    wrong.groups[0].actions = vec![(labels[0] + 1) % ds.num_actions()];
    let metas = BTreeMap::from([(target.id.clone(), wrong)]);
    assert!(augment_dataset(&ds, &metas, &ExpansionPolicy::identity(0)).is_err());
}

use egoact_core::data::{ActionLabel, ProbSequence, ProbShot};
use egoact_core::evaluation::{
    avg_pairwise_levenshtein, avg_pairwise_levenshtein_within, emit_report, evaluate, levenshtein, render_report,
    ReportFormat,
};
use proptest::prelude::*;

fn onehot(a: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i == a { 1.0 } else { 0.0 }).collect()
}

proptest! {
    #[test]
    fn levenshtein_bounds(a in prop::collection::vec(0u8..5, 0..15), b in prop::collection::vec(0u8..5, 0..15)) {
        let d = levenshtein(&a, &b);
        prop_assert!(d <= a.len().max(b.len()));
        prop_assert!(d >= a.len().abs_diff(b.len()));
        let mut ab = a.clone();
        ab.extend(&b);
        prop_assert_eq!(levenshtein(&a, &ab), b.len());
    }
}

#[test]
fn pairwise_means() {
    let seqs = vec![vec![0, 1, 2], vec![0, 1], vec![2, 1, 0]];
    // d = 1, 2, 2
    assert!((avg_pairwise_levenshtein(&seqs).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    let groups = vec!["x".to_string(), "x".to_string(), "y".to_string()];
    assert!((avg_pairwise_levenshtein_within(&seqs, &groups).unwrap() - 1.0).abs() < 1e-12);
    assert!(avg_pairwise_levenshtein(&seqs[..1]).is_err());
}

fn report_fixture() -> (Vec<ActionLabel>, Vec<ProbSequence>) {
    let actions = vec![
        ActionLabel::new(0, "take", "cup"),
        ActionLabel::new(1, "take", "bread"),
        ActionLabel::new(2, "open", "cup"),
    ];
    let seq = |id: &str, shots: Vec<(usize, Vec<usize>)>| ProbSequence {
        id: id.into(),
        subject: "s".into(),
        shots: shots
            .into_iter()
            .map(|(label, preds)| ProbShot { label, frames: preds.into_iter().map(|p| onehot(p, 3)).collect() })
            .collect(),
    };
    let seqs = vec![
        // 3 of 4 frames right; the miss predicts 1 for truth 0 (same verb, other object)
        seq("a", vec![(0, vec![0, 1]), (2, vec![2, 2])]),
        // 1 of 2 right; the miss predicts 2 for truth 1 (other verb and object)
        seq("b", vec![(1, vec![1, 2])]),
    ];
    (actions, seqs)
}

#[test]
fn report_values() {
    let (actions, seqs) = report_fixture();
    let r = evaluate(&actions, &seqs).unwrap();
    assert!((r.mean_frame_acc - 0.625).abs() < 1e-12);
    assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 2]]);
    // verb right: a 4/4, b 1/2 -> 0.75; object right: a 3/4, b 1/2 -> 0.625
    assert!((r.verb_correct_rate - 0.75).abs() < 1e-12);
    assert!((r.object_correct_rate - 0.625).abs() < 1e-12);
}

#[test]
fn report_formats() {
    let (actions, seqs) = report_fixture();
    let r = evaluate(&actions, &seqs).unwrap();
    let csv = render_report(&r, ReportFormat::Csv).unwrap();
    assert!(csv.starts_with("metric,value\n"));
    assert!(csv.contains("frame_acc:a,0.75\n"));
    let grid: Vec<&str> = csv.split("\n\n").nth(1).unwrap().lines().collect();
    assert_eq!(grid.len(), 4);
    assert!(grid[0].starts_with("truth\\pred,"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    emit_report(&r, &path, ReportFormat::Json).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["mean_frame_acc"], 0.625);
    assert_eq!(v["per_sequence_frame_acc"]["b"], 0.5);
}

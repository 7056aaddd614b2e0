//! Meta-sequence grammar over action groups, random expansion into
//! alternate shot orders, and exhaustive enumeration.
//!
//! Operations are applied in a fixed order: every swappable pair (in
//! declaration order), then every skippable group, then every add rule
//! position. An add inserts a copy of the group at `min(position, len)` of
//! the list as it stands at that moment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sequence, Shot};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionGroup {
    pub id: String,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddRule {
    pub id: String,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSequence {
    pub sequence_id: String,
    pub groups: Vec<ActionGroup>,
    #[serde(default)]
    pub swappable: Vec<(String, String)>,
    #[serde(default)]
    pub skippable: Vec<String>,
    #[serde(default)]
    pub addable: Vec<AddRule>,
}

impl MetaSequence {
    /// Concatenated actions of all groups in declared order.
    pub fn original(&self) -> Vec<usize> {
        self.groups.iter().flat_map(|g| g.actions.iter().copied()).collect()
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.id == id)
    }

    fn labels_of(&self, order: &[usize]) -> Vec<usize> {
        order.iter().flat_map(|&g| self.groups[g].actions.iter().copied()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    }
}

/// Lists every problem with `meta`; empty means valid.
pub fn validate_meta(meta: &MetaSequence) -> Vec<String> {
    let mut out = Vec::new();
    if meta.groups.is_empty() {
        out.push("meta-sequence has no groups".to_string());
    }
    let mut seen = BTreeSet::new();
    for g in &meta.groups {
        if !seen.insert(g.id.as_str()) {
            out.push(format!("duplicate group id '{}'", g.id));
        }
        if g.actions.is_empty() {
            out.push(format!("group '{}' has no actions", g.id));
        }
    }
    let known = |id: &str| meta.index_of(id).is_some();
    let mut pairs = BTreeSet::new();
    for (a, b) in &meta.swappable {
        let unknown: Vec<&str> = [a.as_str(), b.as_str()].into_iter().filter(|id| !known(id)).collect();
        if !unknown.is_empty() {
            out.push(format!(
                "swappable pair ('{a}', '{b}') names unknown group(s): {}",
                unknown.join(", ")
            ));
        }
        if a == b {
            out.push(format!("swappable pair ('{a}', '{b}') pairs a group with itself"));
        }
        let key = if a <= b { (a, b) } else { (b, a) };
        if !pairs.insert(key) {
            out.push(format!("swappable pair ('{a}', '{b}') declared twice"));
        }
    }
    let mut skips = BTreeSet::new();
    for id in &meta.skippable {
        if !known(id) {
            out.push(format!("skippable group '{id}' does not exist"));
        }
        if !skips.insert(id.as_str()) {
            out.push(format!("skippable group '{id}' declared twice"));
        }
    }
    for rule in &meta.addable {
        if !known(&rule.id) {
            out.push(format!("addable group '{}' does not exist", rule.id));
        }
        for &p in &rule.positions {
            if p > meta.groups.len() {
                out.push(format!(
                    "addable group '{}': position {} outside 0..={}",
                    rule.id,
                    p,
                    meta.groups.len()
                ));
            }
        }
    }
    if !meta.groups.is_empty() && meta.groups.iter().all(|g| skips.contains(g.id.as_str())) {
        out.push("sequence may become empty".to_string());
    }
    out
}

fn ensure_valid(meta: &MetaSequence) -> Result<()> {
    let v = validate_meta(meta);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "invalid meta-sequence '{}': {}",
            meta.sequence_id,
            v.join("; ")
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionPolicy {
    pub p_swap: f64,
    pub p_skip: f64,
    pub p_add: f64,
    pub seed: u64,
}

impl Default for ExpansionPolicy {
    fn default() -> Self {
        ExpansionPolicy::identity(0)
    }
}

impl ExpansionPolicy {
    pub fn identity(seed: u64) -> Self {
        ExpansionPolicy {
            p_swap: 0.0,
            p_skip: 0.0,
            p_add: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_swap", self.p_swap), ("p_skip", self.p_skip), ("p_add", self.p_add)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Generator for one sequence, independent of every other sequence id.
    pub fn rng_for(&self, sequence_id: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(sequence_id.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Which operations fired in one draw, indexed like the meta's declarations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedOps {
    pub swaps: Vec<bool>,
    pub skips: Vec<bool>,
    pub adds: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    /// Group indices in output order (an added copy repeats its index).
    pub groups: Vec<usize>,
    pub labels: Vec<usize>,
    pub applied: AppliedOps,
}

fn swap_ids(order: &mut [usize], a: usize, b: usize) {
    let pa = order.iter().position(|&g| g == a);
    let pb = order.iter().position(|&g| g == b);
    if let (Some(pa), Some(pb)) = (pa, pb) {
        order.swap(pa, pb);
    }
}

fn remove_id(order: &mut Vec<usize>, g: usize) {
    order.retain(|&x| x != g);
}

fn insert_at(order: &mut Vec<usize>, pos: usize, g: usize) {
    let at = pos.min(order.len());
    order.insert(at, g);
}

/// One draw using the caller's generator.
pub fn expand_detailed<R: Rng + ?Sized>(meta: &MetaSequence, policy: &ExpansionPolicy, rng: &mut R) -> Result<Expansion> {
    ensure_valid(meta)?;
    policy.validate()?;
    // Coins are drawn for every operation so streams stay aligned across policies.
    let mut coin = |p: f64| rng.random::<f64>() < p;
    let mut order: Vec<usize> = (0..meta.groups.len()).collect();
    let mut applied = AppliedOps {
        swaps: Vec::with_capacity(meta.swappable.len()),
        skips: Vec::with_capacity(meta.skippable.len()),
        adds: Vec::with_capacity(meta.addable.len()),
    };
    for (a, b) in &meta.swappable {
        let fire = coin(policy.p_swap);
        if fire {
            swap_ids(&mut order, meta.index_of(a).unwrap(), meta.index_of(b).unwrap());
        }
        applied.swaps.push(fire);
    }
    for id in &meta.skippable {
        let fire = coin(policy.p_skip);
        if fire {
            remove_id(&mut order, meta.index_of(id).unwrap());
        }
        applied.skips.push(fire);
    }
    for rule in &meta.addable {
        let g = meta.index_of(&rule.id).unwrap();
        let mut fired = Vec::with_capacity(rule.positions.len());
        for &pos in &rule.positions {
            let fire = coin(policy.p_add);
            if fire {
                insert_at(&mut order, pos, g);
            }
            fired.push(fire);
        }
        applied.adds.push(fired);
    }
    Ok(Expansion {
        labels: meta.labels_of(&order),
        groups: order,
        applied,
    })
}

/// One draw from the generator derived from `(policy.seed, meta.sequence_id)`.
pub fn expand(meta: &MetaSequence, policy: &ExpansionPolicy) -> Result<Vec<usize>> {
    let mut rng = policy.rng_for(&meta.sequence_id);
    Ok(expand_detailed(meta, policy, &mut rng)?.labels)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enumeration {
    pub sequences: BTreeSet<Vec<usize>>,
    /// Set when the result was cut off at the limit and may be incomplete.
    pub overflow: bool,
}

/// Every label sequence reachable by some subset of the operations. Each
/// stage's intermediate set is also bounded by `limit`.
pub fn enumerate_all(meta: &MetaSequence, limit: usize) -> Result<Enumeration> {
    ensure_valid(meta)?;
    let mut overflow = false;
    let mut states: BTreeSet<Vec<usize>> = BTreeSet::from([(0..meta.groups.len()).collect()]);
    let mut stage = |states: &mut BTreeSet<Vec<usize>>, op: &dyn Fn(&mut Vec<usize>)| {
        let mut next = states.clone();
        for s in states.iter() {
            if next.len() >= limit {
                overflow = true;
                break;
            }
            let mut t = s.clone();
            op(&mut t);
            next.insert(t);
        }
        *states = next;
    };
    for (a, b) in &meta.swappable {
        let (a, b) = (meta.index_of(a).unwrap(), meta.index_of(b).unwrap());
        stage(&mut states, &|s| swap_ids(s, a, b));
    }
    for id in &meta.skippable {
        let g = meta.index_of(id).unwrap();
        stage(&mut states, &|s| remove_id(s, g));
    }
    for rule in &meta.addable {
        let g = meta.index_of(&rule.id).unwrap();
        for &pos in &rule.positions {
            stage(&mut states, &|s| insert_at(s, pos, g));
        }
    }
    let mut sequences = BTreeSet::new();
    for s in &states {
        if sequences.len() >= limit {
            overflow = true;
            break;
        }
        sequences.insert(meta.labels_of(s));
    }
    Ok(Enumeration { sequences, overflow })
}

/// Re-orders each sequence's shots by one expansion draw of its meta.
/// Sequences without a meta are copied unchanged.
pub fn augment_dataset(dataset: &Dataset, metas: &BTreeMap<String, MetaSequence>, policy: &ExpansionPolicy) -> Result<Dataset> {
    policy.validate()?;
    let ids: HashMap<&str, usize> = dataset.sequences.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    for (key, meta) in metas {
        if key != &meta.sequence_id {
            return Err(Error::Validation(format!(
                "meta keyed '{key}' describes sequence '{}'",
                meta.sequence_id
            )));
        }
        if !ids.contains_key(key.as_str()) {
            return Err(Error::Validation(format!("meta for unknown sequence '{key}'")));
        }
    }
    let sequences = par::map(&dataset.sequences, |seq| -> Result<Sequence> {
        let Some(meta) = metas.get(&seq.id) else {
            return Ok(seq.clone());
        };
        ensure_valid(meta)?;
        if meta.original() != seq.shot_labels() {
            return Err(Error::Validation(format!(
                "meta for '{}' lists actions {:?} but the sequence has shots {:?}",
                seq.id,
                meta.original(),
                seq.shot_labels()
            )));
        }
        let mut starts = Vec::with_capacity(meta.groups.len());
        let mut next = 0;
        for g in &meta.groups {
            starts.push(next);
            next += g.actions.len();
        }
        let mut rng = policy.rng_for(&seq.id);
        let exp = expand_detailed(meta, policy, &mut rng)?;
        let shots: Vec<Shot> = exp
            .groups
            .iter()
            .flat_map(|&g| seq.shots[starts[g]..starts[g] + meta.groups[g].actions.len()].iter().cloned())
            .collect();
        let order: Vec<&str> = exp.groups.iter().map(|&g| meta.groups[g].id.as_str()).collect();
        Ok(Sequence {
            id: seq.id.clone(),
            subject: seq.subject.clone(),
            shots,
            provenance: Some(format!("temporal seed={} groups={}", policy.seed, order.join(","))),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let out = dataset.with_sequences(sequences);
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(id: &str, actions: &[usize]) -> ActionGroup {
        ActionGroup {
            id: id.into(),
            actions: actions.to_vec(),
        }
    }

    fn sandwich() -> MetaSequence {
        MetaSequence {
            sequence_id: "s".into(),
            groups: vec![group("ham", &[0]), group("bread", &[1]), group("put", &[2])],
            swappable: vec![("ham".into(), "bread".into())],
            skippable: vec![],
            addable: vec![],
        }
    }

    #[test]
    fn validation_messages() {
        let mut m = sandwich();
        m.swappable.clear();
        assert!(validate_meta(&m).is_empty());
        m.swappable.push(("ham".into(), "cheese".into()));
        let v = validate_meta(&m);
        assert!(v[0].contains("ham") && v[0].contains("cheese"), "{v:?}");
        m.swappable.clear();
        m.skippable = vec!["ham".into(), "bread".into(), "put".into()];
        assert_eq!(validate_meta(&m), vec!["sequence may become empty".to_string()]);
        m.skippable.clear();
        m.addable.push(AddRule { id: "put".into(), positions: vec![4] });
        assert_eq!(validate_meta(&m).len(), 1);
    }

    #[test]
    fn identity_policy() {
        let m = sandwich();
        assert_eq!(expand(&m, &ExpansionPolicy::identity(3)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn sandwich_has_two_orders() {
        let m = sandwich();
        let all = enumerate_all(&m, 100).unwrap();
        let expected: BTreeSet<Vec<usize>> = [vec![0, 1, 2], vec![1, 0, 2]].into();
        assert_eq!(all.sequences, expected);
        assert!(!all.overflow);
        let policy = ExpansionPolicy { p_swap: 0.5, p_skip: 0.0, p_add: 0.0, seed: 1 };
        let mut rng = policy.rng_for("s");
        for _ in 0..50 {
            assert!(expected.contains(&expand_detailed(&m, &policy, &mut rng).unwrap().labels));
        }
    }

    #[test]
    fn swap_and_skip_enumerate_to_four() {
        let mut m = sandwich();
        m.groups.push(group("wipe", &[3, 4]));
        m.skippable = vec!["wipe".into()];
        let all = enumerate_all(&m, 100).unwrap();
        assert_eq!(all.sequences.len(), 4);
        assert!(all.sequences.contains(&vec![1, 0, 2]));
        assert!(all.sequences.contains(&vec![0, 1, 2, 3, 4]));
        let cut = enumerate_all(&m, 3).unwrap();
        assert!(cut.overflow && cut.sequences.len() <= 3);
    }

    #[test]
    fn add_inserts_copy() {
        let mut m = sandwich();
        m.swappable.clear();
        m.addable.push(AddRule { id: "ham".into(), positions: vec![3, 1] });
        let all = enumerate_all(&m, 100).unwrap();
        let expected: BTreeSet<Vec<usize>> =
            [vec![0, 1, 2], vec![0, 1, 2, 0], vec![0, 0, 1, 2], vec![0, 0, 1, 2, 0]].into();
        assert_eq!(all.sequences, expected);
        let p = ExpansionPolicy { p_swap: 0.0, p_skip: 0.0, p_add: 1.0, seed: 0 };
        assert_eq!(expand(&m, &p).unwrap(), vec![0, 0, 1, 2, 0]);
    }

    #[test]
    fn dataset_blocks_move_intact() {
        use crate::data::{ActionLabel, FrameSample};
        let frame = |v: f32, label| FrameSample { primary: vec![v], secondaries: vec![vec![v]], label };
        let shot = |label, vals: &[f32]| Shot::new(label, vals.iter().map(|&v| frame(v, label)).collect());
        let ds = Dataset {
            actions: (0..3).map(|i| ActionLabel::new(i, format!("v{i}"), "o")).collect(),
            feature_dim: 1,
            sequences: vec![Sequence {
                id: "s".into(),
                subject: "p".into(),
                shots: vec![shot(0, &[1.0, 2.0]), shot(1, &[3.0]), shot(2, &[4.0, 5.0, 6.0])],
                provenance: None,
            }],
        };
        let metas = BTreeMap::from([("s".to_string(), sandwich())]);
        let same = augment_dataset(&ds, &metas, &ExpansionPolicy::identity(0)).unwrap();
        assert_eq!(same.sequences[0].shots, ds.sequences[0].shots);
        assert!(same.sequences[0].provenance.is_some());
        let swap = ExpansionPolicy { p_swap: 1.0, p_skip: 0.0, p_add: 0.0, seed: 0 };
        let out = augment_dataset(&ds, &metas, &swap).unwrap();
        let s = &out.sequences[0];
        assert_eq!(s.shots[0], ds.sequences[0].shots[1]);
        assert_eq!(s.shots[1], ds.sequences[0].shots[0]);
        assert_eq!(s.shots[2], ds.sequences[0].shots[2]);
        let mut bad = sandwich();
        bad.groups[2].actions = vec![1];
        let metas = BTreeMap::from([("s".to_string(), bad)]);
        assert!(augment_dataset(&ds, &metas, &swap).is_err());
    }

    #[test]
    fn meta_json_schema() {
        let text = r#"{"sequence_id":"s","groups":[{"id":"a","actions":[0]},{"id":"b","actions":[1,2]}],
            "swappable":[["a","b"]],"skippable":["b"],"addable":[{"id":"a","positions":[2]}]}"#;
        let m: MetaSequence = serde_json::from_str(text).unwrap();
        assert_eq!(m.swappable, vec![("a".to_string(), "b".to_string())]);
        assert_eq!(m.original(), vec![0, 1, 2]);
    }
}

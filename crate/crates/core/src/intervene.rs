//! Question interventions: displacement (swap in another pair's question) and
//! perturbation (change one crucial slot), plus the slot-weighted semantic
//! distance that separates augmentations from ignorance-inducing edits.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::worldgen::question::{QuestionSpec, Slot};
use crate::worldgen::vocab::{Relation, Vocab};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    None,
    Displacement {
        source_instance_id: u64,
    },
    Perturbation {
        slot: Slot,
        old_token: String,
        new_token: String,
    },
}

impl Intervention {
    pub fn kind(&self) -> InterventionKind {
        match self {
            Intervention::None => InterventionKind::None,
            Intervention::Displacement { .. } => InterventionKind::Displacement,
            Intervention::Perturbation { .. } => InterventionKind::Perturbation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    None,
    Displacement,
    Perturbation,
}

impl InterventionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::None => "none",
            InterventionKind::Displacement => "displacement",
            InterventionKind::Perturbation => "perturbation",
        }
    }
}

/// Slot-weighted question distance.
///
/// The relation weight covers the whole temporal clause (relation and
/// reference action) of transition questions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceModel {
    pub subject_weight: f64,
    pub attribute_weight: f64,
    pub count_weight: f64,
    pub relation_weight: f64,
    pub synonym_distance: f64,
    pub threshold: f64,
    pub displacement_distance: f64,
}

impl Default for DistanceModel {
    fn default() -> Self {
        DistanceModel {
            subject_weight: 0.4,
            attribute_weight: 0.2,
            count_weight: 0.2,
            relation_weight: 0.2,
            synonym_distance: 0.05,
            threshold: 0.2,
            displacement_distance: 1.0,
        }
    }
}

impl DistanceModel {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.subject_weight,
            self.attribute_weight,
            self.count_weight,
            self.relation_weight,
        ];
        if w.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(Error::Config("slot weights must be non-negative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("slot weights sum to {total}, expected 1")));
        }
        if !(0.0..1.0).contains(&self.synonym_distance) {
            return Err(Error::Config("synonym distance must lie in [0, 1)".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        if self.synonym_distance >= self.threshold {
            return Err(Error::Config(
                "synonym distance must stay below the threshold".into(),
            ));
        }
        if (self.displacement_distance - 1.0).abs() > 0.0 {
            return Err(Error::Config("displacement distance is fixed at 1".into()));
        }
        Ok(())
    }

    pub fn weight(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Subject => self.subject_weight,
            Slot::Attribute => self.attribute_weight,
            Slot::Count => self.count_weight,
            Slot::Relation | Slot::RefAction => self.relation_weight,
        }
    }

    pub fn min_weight(&self) -> f64 {
        [
            self.subject_weight,
            self.attribute_weight,
            self.count_weight,
            self.relation_weight,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    /// Whether a distance puts an intervened question in the ignorance regime.
    pub fn is_ignorance(&self, d: f64) -> bool {
        d >= self.threshold
    }
}

fn token_delta(a: Option<&str>, b: Option<&str>, vocab: &Vocab, dm: &DistanceModel) -> f64 {
    match (a, b) {
        (None, None) => 0.0,
        (Some(x), Some(y)) if x == y => 0.0,
        (Some(x), Some(y)) if vocab.are_synonyms(x, y) => dm.synonym_distance,
        _ => 1.0,
    }
}

/// Distance between two questions in [0, 1]: 1 across templates, otherwise the
/// weighted sum of per-slot mismatches (0 equal, ε synonyms, 1 different).
pub fn semantic_distance(
    q: &QuestionSpec,
    other: &QuestionSpec,
    vocab: &Vocab,
    dm: &DistanceModel,
) -> f64 {
    if q.template != other.template {
        return dm.displacement_distance;
    }
    let delta = |slot| token_delta(q.slot(slot), other.slot(slot), vocab, dm);
    let temporal = delta(Slot::Relation).max(delta(Slot::RefAction));
    let d = dm.subject_weight * delta(Slot::Subject)
        + dm.attribute_weight * delta(Slot::Attribute)
        + dm.count_weight * delta(Slot::Count)
        + dm.relation_weight * temporal;
    d.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionPolicy {
    /// Probability that an intervention is a displacement rather than a perturbation.
    pub displacement_ratio: f64,
    pub crucial_slots: Vec<Slot>,
    /// Probability of picking the synonym when the chosen slot token has one.
    pub synonym_prob: f64,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        InterventionPolicy {
            displacement_ratio: 0.5,
            crucial_slots: vec![Slot::Subject, Slot::Attribute, Slot::Count, Slot::Relation],
            synonym_prob: 0.15,
        }
    }
}

impl InterventionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.displacement_ratio) {
            return Err(Error::Config("displacement ratio must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.synonym_prob) {
            return Err(Error::Config("synonym probability must lie in [0, 1]".into()));
        }
        if self.crucial_slots.contains(&Slot::RefAction) {
            return Err(Error::Config("ref_action is not a crucial slot".into()));
        }
        Ok(())
    }
}

/// Questions available as displacement sources, keyed by instance id.
#[derive(Clone, Debug)]
pub struct QuestionPool {
    entries: Vec<(u64, QuestionSpec)>,
    specific: Vec<usize>,
}

impl QuestionPool {
    pub fn new(entries: Vec<(u64, QuestionSpec)>) -> Self {
        let specific = entries
            .iter()
            .enumerate()
            .filter(|(_, (_, q))| !q.is_general)
            .map(|(i, _)| i)
            .collect();
        QuestionPool { entries, specific }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const DISPLACE_REJECTION_TRIES: usize = 64;

/// Replaces `q` by a uniformly drawn pool question that is neither general
/// nor equal to `q`.
pub fn displace(
    q: &QuestionSpec,
    pool: &QuestionPool,
    rng: &mut Rng,
) -> Result<(QuestionSpec, Intervention)> {
    let pick = |i: usize| {
        let (id, other) = &pool.entries[i];
        (
            other.clone(),
            Intervention::Displacement {
                source_instance_id: *id,
            },
        )
    };
    if pool.specific.is_empty() {
        return Err(Error::Intervention("no non-general question to displace with".into()));
    }
    // Rejection sampling over the specific questions stays uniform on the
    // eligible set; the scan below only runs when almost nothing is eligible.
    for _ in 0..DISPLACE_REJECTION_TRIES {
        let i = *pool.specific.choose(rng).expect("non-empty");
        if pool.entries[i].1 != *q {
            return Ok(pick(i));
        }
    }
    let eligible: Vec<usize> = pool
        .specific
        .iter()
        .copied()
        .filter(|&i| pool.entries[i].1 != *q)
        .collect();
    match eligible.choose(rng) {
        Some(&i) => Ok(pick(i)),
        None => Err(Error::Intervention(
            "every non-general pool question equals the original".into(),
        )),
    }
}

/// Replaces `slot` in `q` by `new_token`, checking the token fits the slot.
pub fn perturb_slot(
    q: &QuestionSpec,
    slot: Slot,
    new_token: &str,
    vocab: &Vocab,
) -> Result<(QuestionSpec, Intervention)> {
    let old = q
        .slot(slot)
        .ok_or_else(|| Error::Intervention(format!("question has no {} slot", slot.name())))?
        .to_string();
    if old == new_token {
        return Err(Error::Intervention(format!(
            "perturbation must change {} (already {old:?})",
            slot.name()
        )));
    }
    if vocab.category_of(new_token) != Some(slot.category()) {
        return Err(Error::Intervention(format!(
            "{new_token:?} does not fit slot {}",
            slot.name()
        )));
    }
    let mut slots = q.slots.clone();
    slots.insert(slot, new_token.to_string());
    Ok((
        QuestionSpec::new(q.template, slots),
        Intervention::Perturbation {
            slot,
            old_token: old,
            new_token: new_token.to_string(),
        },
    ))
}

/// Changes one crucial slot of `q`, chosen uniformly among those present.
pub fn perturb(
    q: &QuestionSpec,
    vocab: &Vocab,
    policy: &InterventionPolicy,
    rng: &mut Rng,
) -> Result<(QuestionSpec, Intervention)> {
    let present: Vec<Slot> = policy
        .crucial_slots
        .iter()
        .copied()
        .filter(|s| q.slots.contains_key(s))
        .collect();
    let slot = *present
        .choose(rng)
        .ok_or_else(|| Error::Intervention(format!("no crucial slot in {q}")))?;
    let old = q.slot(slot).expect("slot present");
    let new_token = if slot == Slot::Relation {
        let rel = Relation::parse(old)
            .ok_or_else(|| Error::Intervention(format!("bad relation token {old:?}")))?;
        rel.flipped().as_str().to_string()
    } else {
        let synonym = vocab.synonym_of(old);
        match synonym {
            Some(s) if rng.random_bool(policy.synonym_prob) => s.to_string(),
            _ => {
                let others: Vec<String> = vocab
                    .tokens_in(slot.category())
                    .into_iter()
                    .filter(|t| t != old && Some(t.as_str()) != synonym)
                    .collect();
                others
                    .choose(rng)
                    .cloned()
                    .ok_or_else(|| {
                        Error::Intervention(format!("no replacement token for {}", slot.name()))
                    })?
            }
        }
    };
    perturb_slot(q, slot, &new_token, vocab)
}

/// Result of intervening on one question.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionOutcome {
    pub question: QuestionSpec,
    pub d: f64,
    pub intervention: Intervention,
}

/// Displaces with probability ρ, otherwise perturbs, and scores the result.
pub fn intervene(
    q: &QuestionSpec,
    pool: &QuestionPool,
    vocab: &Vocab,
    policy: &InterventionPolicy,
    dm: &DistanceModel,
    rng: &mut Rng,
) -> Result<InterventionOutcome> {
    let (question, intervention) = if rng.random_bool(policy.displacement_ratio) {
        displace(q, pool, rng)?
    } else {
        perturb(q, vocab, policy, rng)?
    };
    let d = semantic_distance(q, &question, vocab, dm);
    Ok(InterventionOutcome {
        question,
        d,
        intervention,
    })
}

/// One line of an intervention audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionLogRecord {
    pub instance_id: u64,
    pub kind: InterventionKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slot: Option<Slot>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub old: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub new: Option<String>,
    pub d: f64,
}

impl InterventionLogRecord {
    pub fn new(instance_id: u64, intervention: &Intervention, d: f64) -> Self {
        let mut rec = InterventionLogRecord {
            instance_id,
            kind: intervention.kind(),
            source: None,
            slot: None,
            old: None,
            new: None,
            d,
        };
        match intervention {
            Intervention::None => {}
            Intervention::Displacement { source_instance_id } => {
                rec.source = Some(*source_instance_id)
            }
            Intervention::Perturbation {
                slot,
                old_token,
                new_token,
            } => {
                rec.slot = Some(*slot);
                rec.old = Some(old_token.clone());
                rec.new = Some(new_token.clone());
            }
        }
        rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::worldgen::question::Template;

    fn action_q(subject: &str, attr: &str, count: &str) -> QuestionSpec {
        QuestionSpec::from_pairs(
            Template::Action,
            &[
                (Slot::Subject, subject),
                (Slot::Attribute, attr),
                (Slot::Count, count),
            ],
        )
    }

    fn frame_general(subject: &str) -> QuestionSpec {
        QuestionSpec::from_pairs(Template::Frame, &[(Slot::Subject, subject)])
    }

    #[test]
    fn displacement_rejects_self_and_general() {
        let q = action_q("boy", "red", "2");
        let pool = QuestionPool::new(vec![(0, q.clone()), (1, frame_general("girl"))]);
        let mut rng = rng_from_seed(1);
        assert!(matches!(
            displace(&q, &pool, &mut rng),
            Err(Error::Intervention(_))
        ));
    }

    #[test]
    fn displacement_never_returns_general() {
        let v = Vocab::default();
        let mut entries = Vec::new();
        for i in 0..100u64 {
            let subj = &v.subjects[(i % 9) as usize];
            entries.push((i, action_q(subj, "blue", &(1 + i % 5).to_string())));
            entries.push((1000 + i, frame_general(subj)));
        }
        let pool = QuestionPool::new(entries);
        let q = action_q("girl", "red", "3");
        let mut rng = rng_from_seed(5);
        for _ in 0..500 {
            let (out, kind) = displace(&q, &pool, &mut rng).unwrap();
            assert!(!out.is_general);
            assert_ne!(out, q);
            assert!(matches!(kind, Intervention::Displacement { source_instance_id } if source_instance_id < 1000));
        }
    }

    #[test]
    fn displacement_is_uniform_over_eligible() {
        let q = action_q("boy", "red", "2");
        let others: Vec<QuestionSpec> = ["girl", "man", "dog", "baby"]
            .iter()
            .map(|s| action_q(s, "red", "2"))
            .collect();
        let mut entries: Vec<(u64, QuestionSpec)> =
            others.iter().cloned().enumerate().map(|(i, q)| (i as u64, q)).collect();
        entries.push((10, q.clone()));
        entries.push((11, frame_general("girl")));
        let pool = QuestionPool::new(entries);
        let mut rng = rng_from_seed(42);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let (_, kind) = displace(&q, &pool, &mut rng).unwrap();
            let Intervention::Displacement { source_instance_id } = kind else {
                panic!()
            };
            counts[source_instance_id as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((0.23..=0.27).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn perturb_examples() {
        let v = Vocab::default();
        let q = action_q("boy", "red", "2");
        let (q2, iv) = perturb_slot(&q, Slot::Subject, "woman", &v).unwrap();
        assert_eq!(q2.slot(Slot::Subject), Some("woman"));
        assert_eq!(q2.slot(Slot::Attribute), Some("red"));
        assert_eq!(q2.slot(Slot::Count), Some("2"));
        assert_eq!(
            iv,
            Intervention::Perturbation {
                slot: Slot::Subject,
                old_token: "boy".into(),
                new_token: "woman".into()
            }
        );
        let (q3, _) = perturb_slot(&q, Slot::Count, "5", &v).unwrap();
        assert_eq!(q3.slot(Slot::Count), Some("5"));
        assert_eq!(q3.slot(Slot::Subject), Some("boy"));
        assert!(perturb_slot(&q, Slot::Count, "2", &v).is_err());
        assert!(perturb_slot(&q, Slot::Count, "red", &v).is_err());
    }

    #[test]
    fn relation_perturbation_flips() {
        let v = Vocab::default();
        let q = QuestionSpec::from_pairs(
            Template::Transition,
            &[
                (Slot::Subject, "girl"),
                (Slot::Relation, "before"),
                (Slot::RefAction, "eating"),
            ],
        );
        let policy = InterventionPolicy {
            crucial_slots: vec![Slot::Relation],
            ..Default::default()
        };
        let mut rng = rng_from_seed(3);
        let (q2, _) = perturb(&q, &v, &policy, &mut rng).unwrap();
        assert_eq!(q2.slot(Slot::Relation), Some("after"));
        assert_eq!(q2.slot(Slot::Subject), Some("girl"));
        assert_eq!(q2.slot(Slot::RefAction), Some("eating"));
    }

    #[test]
    fn perturb_without_crucial_slot_fails() {
        let v = Vocab::default();
        let policy = InterventionPolicy {
            crucial_slots: vec![Slot::Count],
            ..Default::default()
        };
        let mut rng = rng_from_seed(3);
        assert!(perturb(&frame_general("girl"), &v, &policy, &mut rng).is_err());
    }

    #[test]
    fn distance_examples() {
        let v = Vocab::default();
        let dm = DistanceModel::default();
        let q = action_q("woman", "red", "2");
        assert_eq!(semantic_distance(&q, &q, &v, &dm), 0.0);
        let lady = action_q("lady", "red", "2");
        let d = semantic_distance(&q, &lady, &v, &dm);
        assert!((d - 0.02).abs() < 1e-15);
        assert!(d < dm.threshold);
        assert_eq!(semantic_distance(&q, &frame_general("woman"), &v, &dm), 1.0);
        let d = semantic_distance(&q, &action_q("woman", "blue", "2"), &v, &dm);
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_ratios() {
        let v = Vocab::default();
        let dm = DistanceModel::default();
        let q = action_q("boy", "red", "2");
        let pool = QuestionPool::new(vec![(1, action_q("girl", "blue", "4")), (2, frame_general("dog"))]);
        let mut rng = rng_from_seed(9);
        for (ratio, want) in [(1.0, InterventionKind::Displacement), (0.0, InterventionKind::Perturbation)] {
            let policy = InterventionPolicy {
                displacement_ratio: ratio,
                ..Default::default()
            };
            for _ in 0..200 {
                let out = intervene(&q, &pool, &v, &policy, &dm, &mut rng).unwrap();
                assert_eq!(out.intervention.kind(), want);
                assert_eq!(out.d, semantic_distance(&q, &out.question, &v, &dm));
            }
        }
    }

    #[test]
    fn balanced_ratio_frequency() {
        let v = Vocab::default();
        let dm = DistanceModel::default();
        let q = action_q("boy", "red", "2");
        let pool = QuestionPool::new(vec![(1, action_q("girl", "blue", "4"))]);
        let policy = InterventionPolicy::default();
        let mut rng = rng_from_seed(2024);
        let n = 10_000;
        let disp = (0..n)
            .filter(|_| {
                intervene(&q, &pool, &v, &policy, &dm, &mut rng)
                    .unwrap()
                    .intervention
                    .kind()
                    == InterventionKind::Displacement
            })
            .count();
        let f = disp as f64 / n as f64;
        // Binomial(10000, 0.5) has sd 0.005; [0.47, 0.53] is a six-sigma band.
        assert!((0.47..=0.53).contains(&f), "displacement fraction {f}");
    }

    #[test]
    fn default_models_validate() {
        DistanceModel::default().validate().unwrap();
        InterventionPolicy::default().validate().unwrap();
        let bad = DistanceModel {
            synonym_distance: 0.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_record_shape() {
        let rec = InterventionLogRecord::new(
            7,
            &Intervention::Perturbation {
                slot: Slot::Count,
                old_token: "2".into(),
                new_token: "5".into(),
            },
            0.2,
        );
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"instance_id":7,"kind":"perturbation","slot":"count","old":"2","new":"5","d":0.2}"#
        );
    }
}

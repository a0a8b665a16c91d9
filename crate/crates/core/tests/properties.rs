use std::collections::{BTreeMap, HashSet};

use admitqa::curriculum::{should_intervene, Schedule, ScheduleKind};
use admitqa::intervene::{displace, perturb, perturb_slot, semantic_distance, DistanceModel, InterventionPolicy, QuestionPool};
use admitqa::nnet::loss::{combined_loss, loss_mcqa, loss_oeqa, oeqa_loss_and_grad, sigmoid, softmax, OeqaObjective};
use admitqa::rng::rng_from_seed;
use admitqa::taskheads::{augment_options, intervened_options, IntervenedOptionsConfig, OptionSet};
use admitqa::worldgen::{QuestionSpec, Slot, Template, Vocab, NOT_GIVEN};
use proptest::prelude::*;

fn vocab() -> Vocab {
    Vocab::default()
}

/// A valid question built from raw indices into the default vocabulary.
fn question(template_ix: usize, picks: [usize; 5]) -> QuestionSpec {
    let v = vocab();
    let template = Template::ALL[template_ix % Template::ALL.len()];
    let mut slots = BTreeMap::new();
    for (k, slot) in template.required_slots().iter().enumerate() {
        let toks = v.tokens_in(slot.category());
        slots.insert(*slot, toks[picks[k] % toks.len()].clone());
    }
    // Attribute is optional; leaving it out on even picks gives general questions.
    if picks[4] % 2 == 1 {
        let toks = v.tokens_in(Slot::Attribute.category());
        slots.insert(Slot::Attribute, toks[picks[4] % toks.len()].clone());
    }
    QuestionSpec::new(template, slots)
}

fn arb_question() -> impl Strategy<Value = QuestionSpec> {
    (0usize..3, prop::array::uniform5(0usize..64)).prop_map(|(t, p)| question(t, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn distance_is_bounded_symmetric_and_zero_on_identity(a in arb_question(), b in arb_question()) {
        let (v, dm) = (vocab(), DistanceModel::default());
        let d = semantic_distance(&a, &b, &v, &dm);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, semantic_distance(&b, &a, &v, &dm));
        prop_assert_eq!(semantic_distance(&a, &a, &v, &dm), 0.0);
        if a.template != b.template {
            prop_assert_eq!(d, 1.0);
        }
        if d == 0.0 {
            prop_assert_eq!(&a, &b);
        }
    }

    #[test]
    fn single_slot_swaps_respect_the_threshold(q in arb_question(), slot_ix in 0usize..8, tok_ix in 0usize..64) {
        let (v, dm) = (vocab(), DistanceModel::default());
        let slots: Vec<Slot> = q.slots.keys().copied().collect();
        let slot = slots[slot_ix % slots.len()];
        let toks = v.tokens_in(slot.category());
        let new = &toks[tok_ix % toks.len()];
        let old = q.slot(slot).unwrap();
        prop_assume!(new != old);
        let (p, _) = perturb_slot(&q, slot, new, &v).unwrap();
        let d = semantic_distance(&q, &p, &v, &dm);
        if v.are_synonyms(old, new) {
            prop_assert!(d < dm.threshold);
        } else {
            prop_assert!(d >= dm.min_weight() - 1e-12);
        }
    }

    #[test]
    fn perturbation_changes_exactly_one_slot(q in arb_question(), seed in any::<u64>()) {
        let v = vocab();
        let (p, _) = perturb(&q, &v, &InterventionPolicy::default(), &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(p.template, q.template);
        prop_assert_eq!(p.slots.keys().collect::<Vec<_>>(), q.slots.keys().collect::<Vec<_>>());
        let changed = q.slots.iter().filter(|(k, val)| p.slots[*k] != **val).count();
        prop_assert_eq!(changed, 1);
    }

    #[test]
    fn displacement_is_specific_and_different(qs in prop::collection::vec(arb_question(), 2..20), seed in any::<u64>()) {
        let q = qs[0].clone();
        let pool = QuestionPool::new(qs.iter().cloned().enumerate().map(|(i, q)| (i as u64, q)).collect());
        match displace(&q, &pool, &mut rng_from_seed(seed)) {
            Ok((other, _)) => {
                prop_assert!(!other.is_general);
                prop_assert_ne!(other, q);
            }
            Err(_) => prop_assert!(qs.iter().all(|o| o.is_general || *o == q)),
        }
    }

    #[test]
    fn oeqa_loss_is_non_negative_with_exact_endpoints(pa in 1e-9f64..=1.0, pi in 1e-9f64..1.0, d in 0.0f64..=1.0) {
        let l = combined_loss(pa, pi, d);
        prop_assert!(l >= 0.0 && l.is_finite());
        let l0 = combined_loss(pa, pi, 0.0);
        prop_assert!((l0 - (-pa.ln() - (1.0 - pi).ln())).abs() <= 1e-9 * l0.abs().max(1.0));
        prop_assert!((combined_loss(pa, pi, 1.0) - (-pi.ln())).abs() <= 1e-9 * pi.ln().abs().max(1.0));
        let via_api = loss_oeqa(&[pa], pi, 0, d).unwrap();
        prop_assert_eq!(via_api, l);
    }

    #[test]
    fn logit_losses_are_non_negative(logits in prop::collection::vec(-50.0f64..50.0, 2..12), pick in 0usize..64, d in 0.0f64..=1.0) {
        let c = logits.len() - 1;
        for obj in [OeqaObjective::Combined, OeqaObjective::AnswerOnly] {
            let (l, g) = oeqa_loss_and_grad(&logits, pick % c, d, obj).unwrap();
            prop_assert!(l >= 0.0 && l.is_finite());
            prop_assert!(g.iter().all(|x| x.is_finite()));
        }
        let m = loss_mcqa(&logits, pick % logits.len()).unwrap();
        prop_assert!(m >= 0.0 && m.is_finite());
    }

    #[test]
    fn softmax_sums_to_one(x in prop::collection::vec(-300.0f64..300.0, 1..40)) {
        let p = softmax(&x);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sigmoid_is_open_unit_interval(z in -30.0f64..30.0) {
        let s = sigmoid(z);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!((s + sigmoid(-z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedules_are_monotone_and_bounded(epochs in 1usize..60, p_r in 0.0f64..=1.0, lambda in 0.1f64..10.0) {
        for kind in [
            ScheduleKind::Quadratic { p_r },
            ScheduleKind::Linear { p_r },
            ScheduleKind::Exponential { p_r, lambda },
        ] {
            let s = Schedule::new(kind, epochs).unwrap();
            let ps: Vec<f64> = (1..=epochs).map(|e| s.prob(e).unwrap()).collect();
            prop_assert!(ps.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!(ps.windows(2).all(|w| w[1] <= w[0]));
            if !matches!(kind, ScheduleKind::Exponential { .. }) {
                prop_assert_eq!(ps[epochs - 1], 0.0);
            }
        }
    }

    #[test]
    fn intervention_draws_respect_extremes(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        prop_assert!(!should_intervene(0.0, &mut rng));
        prop_assert!(should_intervene(1.0, &mut rng));
    }

    #[test]
    fn augmented_options_keep_order_and_index(n in 1usize..8, correct in 0usize..8) {
        let v = vocab();
        let opts: Vec<String> = v.actions.iter().take(n).cloned().collect();
        let set = OptionSet::new(opts.clone(), correct % n).unwrap();
        let a = augment_options(&set).unwrap();
        prop_assert_eq!(&a.options[..n], &opts[..]);
        prop_assert_eq!(a.correct_index, correct % n);
        prop_assert_eq!(a.options.last().map(String::as_str), Some(NOT_GIVEN));
        prop_assert_eq!(a.not_given_index, Some(n));
    }

    #[test]
    fn intervened_options_structure(n in 2usize..6, correct in 0usize..6, exclude_ix in 0usize..8, seed in any::<u64>()) {
        let v = vocab();
        let pool = v.actions.clone();
        let set = OptionSet::new(pool.iter().take(n).cloned().collect(), correct % n).unwrap();
        let original = set.correct().to_string();
        let exclude = pool[exclude_ix].clone();
        let ex = (exclude != original).then_some(exclude.as_str());
        let out = intervened_options(&set, &pool, ex, &IntervenedOptionsConfig::default(), &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(out.options.len(), n + 1);
        prop_assert_eq!(out.correct_index, n);
        prop_assert_eq!(out.not_given_index, Some(n));
        prop_assert_eq!(out.options[n].as_str(), NOT_GIVEN);
        prop_assert!(out.options[..n].contains(&original));
        let distinct: HashSet<&String> = out.options.iter().collect();
        prop_assert_eq!(distinct.len(), n + 1);
        if let Some(e) = ex {
            prop_assert!(!out.options.iter().any(|o| o == e));
        }
    }
}

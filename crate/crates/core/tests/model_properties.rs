use cafata_core::analysis::export_importance;
use cafata_core::argumentation::{build_taf, mute, MuteSet, Polarity};
use cafata_core::explain::{classify_scenario, template_explanation, DEFAULT_THETA_HI, DEFAULT_THETA_LO};
use cafata_core::model::softmax;
use cafata_core::synth::{random_world, World, WorldLimits};
use cafata_core::train::evaluate;
use cafata_core::{
    Catalog, ContextSchema, ContextualSituation, FeatureOverrides, Interaction, ItemFeatures, Model, ModelConfig,
    RatingScale, TypeGroup, Variant,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world(seed: u64) -> World {
    random_world(&WorldLimits::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn any_instance(seed: u64) -> (World, usize, usize, ContextualSituation) {
    let w = world(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let cs = w.random_situation(&mut rng);
    let user = (seed as usize) % w.catalog.users.len();
    let item = (seed as usize / 7) % w.catalog.num_items();
    (w, user, item, cs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn attributions_add_up(seed in any::<u64>()) {
        let (w, user, item, cs) = any_instance(seed);
        let b = w.model.predict(&w.catalog, user, item, &cs, &FeatureOverrides::new()).unwrap();
        let total: f64 = b.attributions().map(|a| a.contribution()).sum();
        prop_assert!((total - b.rating).abs() <= 1e-9);
        let by_type: f64 = b.types.iter().map(|t| t.importance * t.contribution).sum();
        prop_assert!((by_type - b.rating).abs() <= 1e-9);
    }

    #[test]
    fn importances_are_distributions(seed in any::<u64>()) {
        let (w, user, item, cs) = any_instance(seed);
        let b = w.model.predict(&w.catalog, user, item, &cs, &FeatureOverrides::new()).unwrap();
        let types: f64 = b.types.iter().map(|t| t.importance).sum();
        prop_assert!((types - 1.0).abs() <= 1e-9);
        prop_assert!(b.types.iter().all(|t| t.importance > 0.0));
        if !b.factors.is_empty() {
            let factors: f64 = b.factors.iter().map(|f| f.importance).sum();
            prop_assert!((factors - 1.0).abs() <= 1e-9);
            prop_assert!(b.factors.iter().all(|f| f.importance > 0.0));
        }
    }

    #[test]
    fn softmax_ignores_shifts(logits in prop::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
        for (x, y) in a.iter().zip(softmax(&shifted)) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn fata_ignores_context(seed in any::<u64>()) {
        let (mut w, user, item, cs) = any_instance(seed);
        w.model.config.variant = Variant::CaFata;
        let empty = w.model.predict(&w.catalog, user, item, &ContextualSituation::empty(), &FeatureOverrides::new()).unwrap();
        w.model.config.variant = Variant::Fata;
        let fata = w.model.predict(&w.catalog, user, item, &cs, &FeatureOverrides::new()).unwrap();
        prop_assert_eq!(fata.rating.to_bits(), empty.rating.to_bits());
    }

    #[test]
    fn storage_order_is_irrelevant(seed in any::<u64>()) {
        let (w, user, item, cs) = any_instance(seed);
        let base = w.catalog.item(item).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups: Vec<TypeGroup> = base.groups.clone();
        groups.shuffle(&mut rng);
        for g in &mut groups {
            g.features.shuffle(&mut rng);
        }
        let shuffled = ItemFeatures { groups };
        let o = FeatureOverrides::new();
        let a = w.model.forward(&w.catalog.schema, user, base, &cs, &o).unwrap().rating;
        let b = w.model.forward(&w.catalog.schema, user, &shuffled, &cs, &o).unwrap().rating;
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn taf_mirrors_breakdown(seed in any::<u64>(), eps in prop::sample::select(vec![0.0, 0.05])) {
        let (w, user, item, cs) = any_instance(seed);
        let b = w.model.predict(&w.catalog, user, item, &cs, &FeatureOverrides::new()).unwrap();
        let taf = build_taf(&b, eps);
        let (att, sup, neu) = taf.partition_sizes();
        prop_assert_eq!(att + sup + neu, b.num_features());
        prop_assert_eq!(taf.rec_strength.to_bits(), b.rating.to_bits());
        for a in b.attributions() {
            let arg = taf.argument(a.feature).unwrap();
            prop_assert_eq!(arg.strength.to_bits(), a.rating.to_bits());
            prop_assert_eq!(arg.weight.to_bits(), a.weight.to_bits());
        }
    }

    #[test]
    fn mute_twice_is_mute_once(seed in any::<u64>()) {
        let (w, user, item, cs) = any_instance(seed);
        let feats: Vec<usize> = w.catalog.item(item).unwrap().iter().map(|(_, f)| f).collect();
        let set = MuteSet::of(feats.iter().copied().step_by(2));
        let it = w.catalog.item(item).unwrap();
        let once = mute(&w.model, &w.catalog.schema, user, it, &cs, &FeatureOverrides::new(), &set).unwrap();
        let muted: FeatureOverrides = set.0.iter().map(|&f| (f, 0.0)).collect();
        let twice = mute(&w.model, &w.catalog.schema, user, it, &cs, &muted, &set).unwrap();
        prop_assert_eq!(once.rating.to_bits(), twice.rating.to_bits());
    }

    #[test]
    fn template_cites_item_features_with_taf_polarity(seed in any::<u64>()) {
        let (w, user, item, cs) = any_instance(seed);
        let b = w.model.predict(&w.catalog, user, item, &cs, &FeatureOverrides::new()).unwrap();
        let taf = build_taf(&b, 0.0);
        let scenario = classify_scenario(b.rating, DEFAULT_THETA_LO, DEFAULT_THETA_HI);
        let e = template_explanation(&w.catalog, &b, &taf, scenario).unwrap();
        let it = w.catalog.item(item).unwrap();
        for c in &e.cited_arguments {
            prop_assert!(it.contains(c.feature));
            prop_assert_eq!(c.polarity, taf.argument(c.feature).unwrap().polarity);
            prop_assert!(c.polarity != Polarity::Neutral);
        }
        prop_assert!(e.cited_arguments.len() <= 2);
    }

    #[test]
    fn evaluation_ignores_order(seed in any::<u64>()) {
        let w = world(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Interaction> = (0..20)
            .map(|k| Interaction {
                user: k % w.catalog.users.len(),
                item: k % w.catalog.num_items(),
                context: w.random_situation(&mut rng),
                rating: ((k as f64) / 10.0) - 1.0,
            })
            .collect();
        let scale = RatingScale::new(1.0, 5.0).unwrap();
        let a = evaluate(&w.model, &w.catalog, rows.iter(), &scale).unwrap();
        rows.shuffle(&mut rng);
        let b = evaluate(&w.model, &w.catalog, rows.iter(), &scale).unwrap();
        prop_assert!((a.rmse_raw - b.rmse_raw).abs() <= 1e-12);
        prop_assert!((a.mae_scaled - b.mae_scaled).abs() <= 1e-12);
    }
}

fn context_catalog(factors: &[(&str, Vec<&str>)]) -> Catalog {
    let schema = ContextSchema::new(factors.iter().cloned()).unwrap();
    let mut c = Catalog::from_triples([("m", "genre", "g")], schema).unwrap();
    for u in 0..5 {
        c.users.intern(&format!("u{u}"));
    }
    c
}

#[test]
fn importance_rows_are_distributions() {
    let factors = [
        ("time", vec!["morning", "evening"]),
        ("day", vec!["weekday", "weekend"]),
        ("weather", vec!["sunny", "rainy"]),
    ];
    let c = context_catalog(&factors);
    let m = Model::init(ModelConfig { dim: 5, seed: 3, ..ModelConfig::default() }, &c).unwrap();
    let imp = export_importance(&m, &c.users, &c.schema).unwrap();
    assert_eq!(imp.len(), 5);
    for row in &imp.rows {
        assert_eq!(row.len(), 3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn single_factor_rows_are_one() {
    let c = context_catalog(&[("time", vec!["morning"])]);
    let m = Model::init(ModelConfig { dim: 4, ..ModelConfig::default() }, &c).unwrap();
    let imp = export_importance(&m, &c.users, &c.schema).unwrap();
    assert!(imp.rows.iter().all(|r| r == &vec![1.0]));
}

#[test]
fn importance_needs_context_variant() {
    let c = context_catalog(&[("time", vec!["morning"])]);
    let m = Model::init(
        ModelConfig {
            dim: 4,
            variant: Variant::Fata,
            ..ModelConfig::default()
        },
        &c,
    )
    .unwrap();
    assert!(export_importance(&m, &c.users, &c.schema).is_err());
}

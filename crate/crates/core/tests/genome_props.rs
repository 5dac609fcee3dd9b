use livsynth::genome::{
    crossover, is_valid, mutate, parse, random_genome, repair, validate, BackboneGenome, LivGene,
    OptionPool,
};
use livsynth::rng::GenomeRng;
use proptest::prelude::*;

fn arb_gene() -> impl Strategy<Value = LivGene> {
    (0u32..20, 0u32..8, 0u32..4, 0u32..8, 0u32..6)
        .prop_map(|(c, fl, fs, gl, gs)| LivGene::new(c, fl, fs, gl, gs))
}

fn arb_genome() -> impl Strategy<Value = BackboneGenome> {
    prop::collection::vec(arb_gene(), 1..12).prop_map(BackboneGenome::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn repair_always_yields_valid(g in arb_genome(), seed in any::<u64>()) {
        let pool = OptionPool::standard();
        let r = repair(&g, &pool, &mut GenomeRng::new(seed, 0));
        prop_assert!(validate(&r, &pool).is_empty(), "{:?}", validate(&r, &pool));
        prop_assert_eq!(r.depth(), g.depth());
    }

    #[test]
    fn repair_is_idempotent(g in arb_genome(), seed in any::<u64>()) {
        let pool = OptionPool::standard();
        let mut rng = GenomeRng::new(seed, 0);
        let once = repair(&g, &pool, &mut rng);
        prop_assert_eq!(repair(&once, &pool, &mut rng), once);
    }

    #[test]
    fn operators_are_closed(seed in any::<u64>(), depth in 1usize..16, rate in 0.0f64..1.0, k in 1usize..4) {
        let pool = OptionPool::with_classes(&[1, 2, 5, 7, 9, 12]).unwrap();
        let mut rng = GenomeRng::new(seed, 1);
        let a = random_genome(depth, &pool, false, &mut rng);
        let b = random_genome(depth, &pool, false, &mut rng);
        prop_assert!(is_valid(&mutate(&a, rate, &pool, &mut rng), &pool));
        if k < depth {
            let (c1, c2) = crossover(&a, &b, k, &pool, &mut rng).unwrap();
            prop_assert!(is_valid(&c1, &pool));
            prop_assert!(is_valid(&c2, &pool));
            prop_assert_eq!(c1.depth(), depth);
        }
    }

    #[test]
    fn text_round_trip(seed in any::<u64>(), depth in 1usize..20, residual in any::<bool>()) {
        let pool = OptionPool::standard();
        let g = random_genome(depth, &pool, residual, &mut GenomeRng::new(seed, 2));
        let text = g.to_string();
        prop_assert_eq!(parse(&text).unwrap(), g.clone());
        let json = serde_json::to_string(&g).unwrap();
        prop_assert_eq!(serde_json::from_str::<BackboneGenome>(&json).unwrap(), g);
    }
}

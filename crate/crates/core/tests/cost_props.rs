use livsynth::cost::{cache_bytes, parameter_count, score_genome};
use livsynth::genome::{is_valid, random_genome, BackboneGenome, LivGene, OptionPool};
use livsynth::liv::{compile_plan, Dims};
use livsynth::rng::GenomeRng;
use proptest::prelude::*;

fn dims() -> Dims {
    Dims { width: 64, head_dim: 8, seq_len: 256, ..Dims::desk() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cache_is_monotone_in_length(seed in any::<u64>(), depth in 1usize..12, a in 1u64..5000, b in 1u64..5000) {
        let pool = OptionPool::standard();
        let g = random_genome(depth, &pool, false, &mut GenomeRng::new(seed, 0));
        let plan = compile_plan(&g, &dims(), &pool).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(cache_bytes(&plan, lo, 2) <= cache_bytes(&plan, hi, 2));
    }

    #[test]
    fn attention_only_is_linear_and_attention_free_is_constant(seed in any::<u64>(), depth in 1usize..10, len in 1u64..3000) {
        let attn = OptionPool::with_classes(&[1, 2, 3, 4, 10, 11, 12, 13]).unwrap();
        let g = random_genome(depth, &attn, false, &mut GenomeRng::new(seed, 1));
        let plan = compile_plan(&g, &dims(), &attn).unwrap();
        prop_assert_eq!(cache_bytes(&plan, 2 * len, 2), 2 * cache_bytes(&plan, len, 2));

        let free = OptionPool::with_classes(&[5, 6, 7, 8, 9, 14, 15, 16, 17]).unwrap();
        let g = random_genome(depth, &free, false, &mut GenomeRng::new(seed, 2));
        let plan = compile_plan(&g, &dims(), &free).unwrap();
        prop_assert_eq!(cache_bytes(&plan, len, 2), cache_bytes(&plan, 4096, 2));
    }

    #[test]
    fn featurizer_sharing_discount(class in 1u32..=17) {
        let pool = OptionPool::standard();
        let shared = BackboneGenome::new(vec![LivGene::new(class, 1, 2, 1, 1), LivGene::new(class, 1, 2, 2, 1)]);
        let severed = BackboneGenome::new(vec![LivGene::new(class, 1, 1, 1, 1), LivGene::new(class, 2, 1, 2, 1)]);
        let ps = compile_plan(&shared, &dims(), &pool).unwrap();
        let pv = compile_plan(&severed, &dims(), &pool).unwrap();
        let featurizer: u64 = pv.params.iter().filter(|p| p.key.starts_with("f1.")).map(|p| p.numel() as u64).sum();
        prop_assert!(featurizer > 0);
        prop_assert_eq!(parameter_count(&pv) - parameter_count(&ps), featurizer);
        let one_binding = ps.params.iter().filter(|p| p.key.starts_with("f0.") || p.key.starts_with("f1.")).count();
        prop_assert_eq!(one_binding, pv.params.iter().filter(|p| p.key.starts_with("f0.")).count());
    }

    #[test]
    fn label_permutation_invariance(seed in any::<u64>(), depth in 2usize..12) {
        let pool = OptionPool::standard();
        let g = random_genome(depth, &pool, false, &mut GenomeRng::new(seed, 3));
        let counts = g.class_counts();
        // reverse every label within its class: l -> n + 1 - l
        let permuted = BackboneGenome::new(
            g.genes()
                .iter()
                .map(|x| {
                    let n = counts[&x.liv_class];
                    LivGene {
                        feat_share_group: n + 1 - x.feat_share_group,
                        group_share_group: n + 1 - x.group_share_group,
                        ..x.clone()
                    }
                })
                .collect(),
        );
        prop_assume!(is_valid(&permuted, &pool));
        let a = score_genome(&g, &dims(), &pool, 4096, 2).unwrap();
        let b = score_genome(&permuted, &dims(), &pool, 4096, 2).unwrap();
        prop_assert_eq!(a, b);
    }
}

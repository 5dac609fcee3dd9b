use livsynth::cost::score_genome;
use livsynth::evolve::{
    crowding_distance, dominates, hypervolume, non_dominated_sort, run, Algorithm, EvalError,
    EvolutionConfig, FnEvaluator, ScoreVector,
};
use livsynth::genome::{is_valid, BackboneGenome, OptionPool};
use livsynth::liv::Dims;
use proptest::prelude::*;

fn score_sets() -> impl Strategy<Value = Vec<ScoreVector>> {
    (2usize..=3).prop_flat_map(|m| {
        prop::collection::vec(
            prop::collection::vec(0u8..8, m).prop_map(|v| {
                ScoreVector::new(v.into_iter().map(f64::from).collect())
            }),
            1..=50,
        )
    })
}

proptest! {
    #[test]
    fn fronts_partition_and_are_mutually_non_dominated(scores in score_sets()) {
        let fronts = non_dominated_sort(&scores);
        let mut seen: Vec<usize> = fronts.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        for front in &fronts {
            for &a in front {
                for &b in front {
                    prop_assert!(!dominates(&scores[a], &scores[b]));
                }
            }
        }
        for w in fronts.windows(2) {
            for &b in &w[1] {
                prop_assert!(w[0].iter().any(|&a| dominates(&scores[a], &scores[b])));
            }
        }
    }

    #[test]
    fn crowding_boundaries_infinite_interior_finite(scores in score_sets()) {
        for front in non_dominated_sort(&scores) {
            let objs: Vec<&[f64]> = front.iter().map(|&i| scores[i].objectives.as_slice()).collect();
            let d = crowding_distance(&objs);
            prop_assert_eq!(d.len(), front.len());
            for k in 0..objs[0].len() {
                let lo = objs.iter().map(|o| o[k]).fold(f64::INFINITY, f64::min);
                let hi = objs.iter().map(|o| o[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(objs.iter().zip(&d).any(|(o, d)| o[k] == lo && d.is_infinite()));
                prop_assert!(objs.iter().zip(&d).any(|(o, d)| o[k] == hi && d.is_infinite()));
            }
            for x in d {
                prop_assert!(x >= 0.0);
                prop_assert!(!x.is_nan());
            }
        }
    }
}

fn static_evaluator() -> FnEvaluator<impl Fn(&BackboneGenome, u64) -> Result<ScoreVector, EvalError> + Sync> {
    let dims = Dims::desk();
    let pool = OptionPool::standard();
    FnEvaluator::new(2, move |g: &BackboneGenome, _| {
        let r = score_genome(g, &dims, &pool, 64, 2).map_err(|e| EvalError(e.to_string()))?;
        Ok(ScoreVector::new(vec![r.parameter_count as f64, r.cache_bytes as f64]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn nsga2_static_elitism_and_validity(seed in any::<u64>()) {
        let pool = OptionPool::standard();
        let cfg = EvolutionConfig {
            algorithm: Algorithm::Nsga2,
            population: 10,
            generations: 5,
            depth: 8,
            seed,
            ..Default::default()
        };
        let st = run(&cfg, &pool, &static_evaluator(), None).unwrap();
        let mut best = vec![f64::INFINITY; 2];
        let reference = [1e9, 1e9];
        let mut hv0 = None;
        for rec in &st.history {
            for m in &rec.population {
                prop_assert!(is_valid(&m.candidate.genome, &pool));
            }
            for (k, b) in best.iter_mut().enumerate() {
                let now = rec
                    .population
                    .iter()
                    .map(|m| m.candidate.score.objectives[k])
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(now <= *b);
                *b = now;
            }
            let front: Vec<Vec<f64>> = rec
                .population
                .iter()
                .filter(|m| m.rank == 0)
                .map(|m| m.candidate.score.objectives.clone())
                .collect();
            let hv = hypervolume(&front, &reference);
            let first = *hv0.get_or_insert(hv);
            prop_assert!(hv >= first);
        }
    }
}

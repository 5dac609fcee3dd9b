use super::*;
use crate::cost::score_genome;
use crate::liv::Dims;

fn sv(v: &[f64]) -> ScoreVector {
    ScoreVector::new(v.to_vec())
}

#[test]
fn fronts_of_the_four_corner_example() {
    let scores = [sv(&[1., 1.]), sv(&[1., 2.]), sv(&[2., 1.]), sv(&[2., 2.])];
    assert_eq!(non_dominated_sort(&scores), vec![vec![0], vec![1, 2], vec![3]]);
}

#[test]
fn single_objective_fronts_group_equal_values() {
    let scores = [sv(&[3.]), sv(&[1.]), sv(&[2.]), sv(&[1.])];
    assert_eq!(non_dominated_sort(&scores), vec![vec![1, 3], vec![2], vec![0]]);
}

#[test]
fn diverged_scores_are_dominated_by_every_finite_score() {
    let bad = ScoreVector::sentinel(2);
    let good = sv(&[1e30, 1e30]);
    assert!(dominates(&good, &bad));
    assert!(!dominates(&bad, &good));
    assert!(!dominates(&bad, &bad));
    let fronts = non_dominated_sort(&[bad.clone(), good, bad]);
    assert_eq!(fronts, vec![vec![1], vec![0, 2]]);
}

#[test]
fn crowding_worked_examples() {
    let one: Vec<Vec<f64>> = vec![vec![0.], vec![5.], vec![10.]];
    let refs: Vec<&[f64]> = one.iter().map(|v| v.as_slice()).collect();
    let d = crowding_distance(&refs);
    assert!(d[0].is_infinite() && d[2].is_infinite());
    assert_eq!(d[1], 1.0);

    let two: Vec<Vec<f64>> = vec![vec![0., 10.], vec![5., 5.], vec![10., 0.]];
    let refs: Vec<&[f64]> = two.iter().map(|v| v.as_slice()).collect();
    let d = crowding_distance(&refs);
    assert!(d[0].is_infinite() && d[2].is_infinite());
    assert_eq!(d[1], 2.0);

    let pair: Vec<Vec<f64>> = vec![vec![0., 1.], vec![1., 0.]];
    let refs: Vec<&[f64]> = pair.iter().map(|v| v.as_slice()).collect();
    assert!(crowding_distance(&refs).iter().all(|d| d.is_infinite()));
}

#[test]
fn zero_range_objective_adds_nothing() {
    let pts: Vec<Vec<f64>> = vec![vec![0., 7.], vec![4., 7.], vec![10., 7.]];
    let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
    assert!((crowding_distance(&refs)[1] - 1.0).abs() < 1e-12);
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize(&[2., 4., 6.]), vec![0., 0.5, 1.]);
    assert_eq!(normalize(&[5., 5., 5.]), vec![0., 0., 0.]);
}

#[test]
fn scalarize_is_sum_of_normalized_objectives() {
    let objs = vec![vec![2.0, 300.0], vec![3.0, 100.0], vec![4.0, 200.0]];
    let s = scalarize(&objs, &[false; 3]);
    assert_eq!(s, vec![0.0 + 1.0, 0.5 + 0.0, 1.0 + 0.5]);
    let s = scalarize(&objs, &[false, true, false]);
    assert_eq!(s[1], f64::INFINITY);
    assert_eq!(s[0], 0.0 + 1.0);
}

#[test]
fn fa_attraction_formula() {
    assert_eq!(fa_attraction(0.1, 0.9, 1.0, 1.0, 1.0), 0.0);
    let b = fa_attraction(0.1, 0.9, 0.0, 1.0, 1.0);
    assert!((b - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert!((b - 0.6321).abs() < 1e-4);
    assert_eq!(fa_attraction(0.9, 0.1, 0.0, 1.0, 1.0), 0.0);
    assert_eq!(fa_attraction(0.5, 0.5, 0.0, 1.0, 1.0), 0.0);
    assert_eq!(fa_intensity(0.0), 1.0);
    assert_eq!(fa_intensity(f64::INFINITY), 0.0);
}

#[test]
fn fa_move_with_zero_beta_is_identity() {
    let a = BackboneGenome::unshared(&[1, 5, 7, 9]);
    let b = BackboneGenome::unshared(&[9, 9, 9, 9]);
    let mut rng = GenomeRng::new(3, 0);
    let before = rng.clone();
    assert_eq!(fa_move(&a, &b, 0.0, &mut rng), a);
    assert_eq!(rng, before);
    assert_eq!(fa_move(&a, &b, 1.0, &mut rng), b);
}

#[test]
fn class_similarity_counts_matching_classes() {
    let a = BackboneGenome::unshared(&[1, 5, 7, 9]);
    let b = BackboneGenome::unshared(&[1, 9, 7, 5]);
    assert_eq!(class_similarity(&a, &b), 0.5);
    assert_eq!(class_similarity(&a, &a), 1.0);
}

#[test]
fn tournament_extremes_and_pressure() {
    let vals = [5.0, 1.0, 3.0, 4.0, 2.0];
    let better = |a: usize, b: usize| vals[a] < vals[b];
    let mut rng = GenomeRng::new(11, 0);
    for _ in 0..50 {
        assert_eq!(tournament_select(5, 5, &mut rng, better), 1);
    }
    let mut hits = [0usize; 5];
    for _ in 0..10_000 {
        hits[tournament_select(5, 1, &mut rng, better)] += 1;
    }
    assert!(hits.iter().all(|&h| (1700..2300).contains(&h)), "{hits:?}");
    let mut best = 0;
    for _ in 0..10_000 {
        best += (tournament_select(5, 2, &mut rng, better) == 1) as usize;
    }
    assert!(best as f64 / 10_000.0 > 0.2 + 0.1, "best picked {best} times");
}

#[test]
fn tournament_ties_are_broken_uniformly() {
    let mut rng = GenomeRng::new(5, 0);
    let mut hits = [0usize; 4];
    for _ in 0..8000 {
        hits[tournament_select(4, 4, &mut rng, |_, _| false)] += 1;
    }
    assert!(hits.iter().all(|&h| (1700..2300).contains(&h)), "{hits:?}");
}

#[test]
fn hypervolume_of_simple_sets() {
    assert_eq!(hypervolume(&[vec![1.0, 1.0]], &[2.0, 2.0]), 1.0);
    let hv = hypervolume(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[2.0, 2.0]);
    assert!((hv - 3.0).abs() < 1e-12);
    assert_eq!(hypervolume(&[vec![3.0, 0.0]], &[2.0, 2.0]), 0.0);
    let hv3 = hypervolume(&[vec![0.0, 0.0, 0.0]], &[1.0, 2.0, 3.0]);
    assert!((hv3 - 6.0).abs() < 1e-12);
}

#[test]
fn config_validation_names_the_field() {
    let mut c = EvolutionConfig { elites: 16, ..Default::default() };
    assert!(matches!(c.validate(), Err(EvolveError::Config { field, .. }) if field == "elites"));
    c.elites = 2;
    c.mutation_rate = 1.5;
    assert!(
        matches!(c.validate(), Err(EvolveError::Config { field, .. }) if field == "mutation_rate")
    );
    let d = EvolutionConfig::default();
    assert_eq!((d.population, d.generations, d.tournament, d.elites), (16, 18, 2, 2));
    assert_eq!(d.mutation_rate, 0.1);
}

#[test]
fn score_vector_serde_keeps_sentinels() {
    let s = ScoreVector::sentinel(2);
    let text = serde_json::to_string(&s).unwrap();
    assert_eq!(text, r#"{"objectives":[null,null],"diverged":true}"#);
    let back: ScoreVector = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
}

fn static_evaluator() -> impl Evaluator {
    let dims = Dims::desk();
    let pool = OptionPool::standard();
    FnEvaluator::new(2, move |g: &BackboneGenome, _seed| {
        let r = score_genome(g, &dims, &pool, 64, 2).map_err(|e| EvalError(e.to_string()))?;
        Ok(sv(&[r.parameter_count as f64, r.cache_bytes as f64]))
    })
}

fn small_config(algorithm: Algorithm) -> EvolutionConfig {
    EvolutionConfig {
        algorithm,
        population: 8,
        generations: 4,
        depth: 6,
        seed: 42,
        ..Default::default()
    }
}

#[test]
fn zero_generations_records_only_the_seed_population() {
    let pool = OptionPool::standard();
    let cfg = EvolutionConfig { generations: 0, ..small_config(Algorithm::Nsga2) };
    let st = run(&cfg, &pool, &static_evaluator(), None).unwrap();
    assert_eq!(st.history.len(), 1);
    assert_eq!(st.history[0].evaluated().len(), 8);
    assert_eq!(st.generation, 0);
}

#[test]
fn every_algorithm_keeps_population_size_and_validity() {
    let pool = OptionPool::standard();
    for alg in [Algorithm::Ga, Algorithm::Fa, Algorithm::Nsga2] {
        let st = run(&small_config(alg), &pool, &static_evaluator(), None).unwrap();
        assert_eq!(st.history.len(), 5);
        for rec in &st.history {
            assert_eq!(rec.population.len(), 8);
            for m in &rec.population {
                assert!(is_valid(&m.candidate.genome, &pool));
            }
        }
        let mut ids: Vec<u64> =
            st.history.iter().flat_map(|r| r.evaluated()).map(|c| c.id).collect();
        let total = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), total, "{alg:?} evaluated an id twice");
        assert_eq!(total as u64, st.next_id);
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    let pool = OptionPool::standard();
    let a = run(&small_config(Algorithm::Nsga2), &pool, &static_evaluator(), None).unwrap();
    let b = run(&small_config(Algorithm::Nsga2), &pool, &static_evaluator(), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let pool = OptionPool::standard();
    let cfg = small_config(Algorithm::Nsga2);
    let full = run(&cfg, &pool, &static_evaluator(), None).unwrap();
    let mut part = initialize(&cfg, &pool, &static_evaluator(), None).unwrap();
    step(&mut part, &pool, &static_evaluator()).unwrap();
    let text = serde_json::to_string(&part).unwrap();
    let mut back: EvolutionState = serde_json::from_str(&text).unwrap();
    resume(&mut back, &pool, &static_evaluator()).unwrap();
    assert_eq!(back, full);
}

#[test]
fn failing_evaluator_yields_sentinels_and_continues() {
    let pool = OptionPool::standard();
    let ev = FnEvaluator::new(1, |g: &BackboneGenome, _| {
        if g.classes().contains(&GMEMLESS_ID) {
            Err(EvalError("boom".into()))
        } else {
            Ok(sv(&[g.depth() as f64]))
        }
    });
    let st = run(&small_config(Algorithm::Ga), &pool, &ev, None).unwrap();
    assert!(st.history.iter().flat_map(|r| r.evaluated()).any(|c| c.score.diverged));
}

const GMEMLESS_ID: u32 = crate::genome::GMEMLESS;

#[test]
fn elites_survive_unchanged() {
    let pool = OptionPool::standard();
    for alg in [Algorithm::Ga, Algorithm::Fa, Algorithm::Nsga2] {
        let st = run(&small_config(alg), &pool, &static_evaluator(), None).unwrap();
        for w in st.history.windows(2) {
            let carried = w[1]
                .population
                .iter()
                .filter(|m| m.candidate.generation < w[1].generation)
                .count();
            assert!(carried >= 2, "{alg:?} carried {carried}");
            let best_before = w[0].population.iter().map(|m| m.candidate.score.objectives[0]);
            let best_after = w[1].population.iter().map(|m| m.candidate.score.objectives[0]);
            if alg == Algorithm::Nsga2 {
                assert!(
                    best_after.fold(f64::INFINITY, f64::min)
                        <= best_before.fold(f64::INFINITY, f64::min)
                );
            }
        }
    }
}

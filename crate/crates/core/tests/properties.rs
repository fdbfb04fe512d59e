use std::collections::BTreeSet;
use std::sync::OnceLock;

use attribens::codebook::{binomial, min_code_params, Codebook, WeightVector};
use attribens::diffusion::{make_schedule, NoiseRecord};
use attribens::ensemble::{EnsembleDenoiser, SampleRecord};
use attribens::influence::{compute_jacobian, dedup_top_lists, influence_score, rank_all, InfluenceReport};
use attribens::numerics::{Architecture, DenoiserParams};
use attribens::theory_oracle::{
    collision_probability, exact_ablated_bias, exact_encoded_bias, exact_f_e, AbstractTrainer, HashTableTrainer,
    SubsetMeanTrainer,
};
use proptest::prelude::*;

/// Untrained but distinct members: enough for exact algebraic properties.
fn toy_ensemble() -> &'static EnsembleDenoiser {
    static ENS: OnceLock<EnsembleDenoiser> = OnceLock::new();
    ENS.get_or_init(|| {
        let codebook = Codebook::assign(12, 6, 3, 4).unwrap();
        let members = (0..6)
            .map(|i| DenoiserParams::init(Architecture::new(3, vec![10, 10]), 100 + i).unwrap())
            .collect();
        EnsembleDenoiser::new(members, codebook, make_schedule(12, 1e-3, 0.2).unwrap()).unwrap()
    })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn assigned_codebooks_are_valid(groups in 1usize..400, seed in any::<u64>(), doubled in any::<bool>()) {
        let (n, h) = min_code_params(groups, doubled).unwrap();
        prop_assert_eq!(n, 2 * h);
        let cb = Codebook::assign(groups, n, h, seed).unwrap();
        let distinct: BTreeSet<u64> = cb.codes().iter().map(|c| c.0).collect();
        prop_assert_eq!(distinct.len(), groups);
        prop_assert!(cb.codes().iter().all(|c| c.weight() as usize == h));
        prop_assert!(cb.verify_coverage().0);
        prop_assert_eq!(cb.clone(), Codebook::assign(groups, n, h, seed).unwrap());

        let splits = cb.splits();
        let mut seen = vec![0usize; groups];
        splits.iter().flatten().for_each(|&j| seen[j] += 1);
        prop_assert!(seen.iter().all(|&c| c == h));

        for item in 0..groups.min(20) {
            let w = cb.weight_vector(Some(item)).unwrap();
            let zero: Vec<usize> = (0..n).filter(|&i| w.0[i] == 0.0).collect();
            prop_assert_eq!(zero, cb.ablation_models(item).unwrap());
            prop_assert!((w.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collision_probability_grows_and_respects_its_bound(h in 2usize..7, items in 1usize..40) {
        let n = 2 * h;
        prop_assume!(binomial(n as u64, h as u64) >= 2 * (items as u128 + 1));
        let (p, bound) = collision_probability(n, h, items).unwrap();
        let (q, _) = collision_probability(n, h, items + 1).unwrap();
        prop_assert!(p <= bound);
        prop_assert!(q >= p);
    }

    #[test]
    fn ensemble_prediction_is_linear_in_weights(
        v in weights(6), w in weights(6), a in -2.0f64..2.0, b in -2.0f64..2.0,
        x in prop::collection::vec(-2.0f64..2.0, 3), t in 1usize..=12,
    ) {
        let ens = toy_ensemble();
        let combo: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let lhs = ens.predict_weighted_f64(&combo, &x, t);
        let pv = ens.predict_weighted_f64(&v, &x, t);
        let pw = ens.predict_weighted_f64(&w, &x, t);
        for k in 0..3 {
            let rhs = a * pv[k] + b * pw[k];
            prop_assert!((lhs[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn sample_records_round_trip(seed in any::<u64>(), stream in any::<u64>(), v in weights(6)) {
        let ens = toy_ensemble();
        prop_assume!(v.iter().any(|&x| x != 0.0));
        let rec = ens.generate(&WeightVector(v), &NoiseRecord::new(seed, stream, 12, vec![3])).unwrap();
        let back: SampleRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.regenerate(ens).unwrap(), rec);
    }

    #[test]
    fn scores_are_homogeneous_and_rankings_stable(stream in 0u64..1000, alpha in 0.0f64..10.0) {
        let ens = toy_ensemble();
        let j = compute_jacobian(ens, &NoiseRecord::new(1, stream, 12, vec![3])).unwrap();
        let scaled = j.scaled(alpha);
        for g in 0..ens.codebook().num_groups() {
            let s = influence_score(&j, ens.codebook(), g).unwrap();
            let t = influence_score(&scaled, ens.codebook(), g).unwrap();
            prop_assert!((t - alpha * s).abs() <= 1e-12 * (1.0 + t.abs()));
        }
        if alpha > 0.0 {
            let a = rank_all(&j, ens.codebook(), 5, "a").unwrap();
            let b = rank_all(&scaled, ens.codebook(), 5, "a").unwrap();
            prop_assert_eq!(a.full_order(), b.full_order());
        }
    }

    #[test]
    fn dedup_leaves_no_shared_group(
        rankings in prop::collection::vec(Just(()).prop_perturb(|_, mut rng| {
            (0..30).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>()
        }), 2..5),
        k in 1usize..5,
    ) {
        let reports: Vec<InfluenceReport> = rankings
            .into_iter()
            .enumerate()
            .map(|(i, s)| InfluenceReport::from_scores(format!("s{i}"), s, k).unwrap())
            .collect();
        match dedup_top_lists(&reports, k) {
            Ok(out) => {
                prop_assert!(out.iterations <= 30);
                let mut seen = BTreeSet::new();
                for r in &out.reports {
                    prop_assert_eq!(r.ranking.len(), k);
                    for g in &r.ranking {
                        prop_assert!(seen.insert(*g), "group {} repeated", g);
                        prop_assert!(!out.removed.contains(g));
                    }
                }
            }
            Err(attribens::Error::Degenerate(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

fn direct_mean<T: AbstractTrainer>(trainer: &T, data: &[Vec<f64>], probe: &[f64]) -> Vec<f64> {
    // Subsets built by explicit recursion, independent of any bitmask order.
    fn subsets(k: usize) -> Vec<Vec<usize>> {
        match k {
            0 => vec![vec![]],
            _ => {
                let rest = subsets(k - 1);
                let mut out = rest.clone();
                out.extend(rest.into_iter().map(|mut s| {
                    s.push(k - 1);
                    s
                }));
                out
            }
        }
    }
    let all = subsets(data.len());
    let noise = trainer.noise_support();
    let mut acc = vec![0.0; trainer.evaluate(probe, &trainer.train(data, &[], noise[0])).len()];
    for s in &all {
        for &r in &noise {
            let y = trainer.evaluate(probe, &trainer.train(data, s, r));
            acc.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        }
    }
    let count = (all.len() * noise.len()) as f64;
    acc.iter().map(|a| a / count).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn biases_stay_within_bounds(values in prop::collection::vec(-3.0f64..3.0, 2..=4), seed in any::<u64>()) {
        let data: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let mean = SubsetMeanTrainer { clamp: 1.0, empty_value: -0.5 };
        let table = HashTableTrainer { seed, dim: 2, clamp: 1.0, noise_levels: 2 };
        let probe = [0.1];
        for (n, h) in [(4, 2), (6, 3)] {
            if binomial(n as u64, h as u64) < 2 * data.len() as u128 {
                continue;
            }
            let r = exact_encoded_bias(&mean, &data, n, h, &probe).unwrap();
            prop_assert!(r.bias <= r.bound);
            let r = exact_encoded_bias(&table, &data, n, h, &probe).unwrap();
            prop_assert!(r.bias <= r.bound);
            let r = exact_ablated_bias(&table, &data, data.len() - 1, n, h, &probe).unwrap();
            prop_assert!(r.bias <= r.bound);
        }
        let direct = direct_mean(&table, &data, &probe);
        let exact = exact_f_e(&table, &data, &probe).unwrap();
        for (a, b) in direct.iter().zip(&exact) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

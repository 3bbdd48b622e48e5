use proptest::prelude::*;

use nsw_forge::generators::{generate, Family, GenSpec, WeightDist};
use nsw_forge::oracle::exact_nsw;
use nsw_forge::{load_instance, nsw_value, serialize_instance, Allocation, Instance, ItemSet, PriceVector};

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::Additive),
        Just(Family::Xos),
        Just(Family::BudgetedAdditive),
        Just(Family::Table),
        Just(Family::BudgetedMixture),
    ]
}

fn weights() -> impl Strategy<Value = WeightDist> {
    prop_oneof![
        Just(WeightDist::Uniform),
        Just(WeightDist::Integer),
        Just(WeightDist::HeavyTailed),
    ]
}

fn instance(max_n: usize, max_m: usize) -> impl Strategy<Value = Instance> {
    (family(), weights(), 1..=max_n, 1..=max_m, 1usize..4, any::<u64>()).prop_map(
        |(family, weights, n, m, clauses, seed)| {
            generate(&GenSpec {
                family,
                n,
                m,
                weights,
                clauses,
                cap_ratio: 0.5,
                seed,
            })
            .unwrap()
        },
    )
}

fn shuffled(len: usize, keys: &[u64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.sort_by_key(|&k| (keys[k % keys.len()].wrapping_mul(k as u64 + 1), k));
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimum_invariant_under_relabeling(inst in instance(3, 5), keys in prop::collection::vec(any::<u64>(), 1..6)) {
        let agent_perm = shuffled(inst.num_agents(), &keys);
        let item_perm = shuffled(inst.num_items(), &keys[1..].iter().chain(&keys[..1]).copied().collect::<Vec<_>>());
        let relabeled = inst.relabeled(&agent_perm, &item_perm);
        let a = exact_nsw(&inst).unwrap().optimum;
        let b = exact_nsw(&relabeled).unwrap().optimum;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn nsw_of_relabeled_allocation(inst in instance(3, 6), keys in prop::collection::vec(any::<u64>(), 1..6), owner in prop::collection::vec(0usize..4, 6)) {
        let n = inst.num_agents();
        let m = inst.num_items();
        let mut bundles = vec![ItemSet::EMPTY; n];
        for j in 0..m {
            if owner[j] < n {
                bundles[owner[j]].insert(j);
            }
        }
        let alloc = Allocation { bundles };
        let agent_perm = shuffled(n, &keys);
        let item_perm = shuffled(m, &keys);
        let mut inverse = vec![0; m];
        for (new, &old) in item_perm.iter().enumerate() {
            inverse[old] = new;
        }
        let moved = Allocation {
            bundles: agent_perm
                .iter()
                .map(|&old| alloc.bundles[old].iter().map(|j| inverse[j]).collect())
                .collect(),
        };
        let a = nsw_value(&alloc, &inst);
        let b = nsw_value(&moved, &inst.relabeled(&agent_perm, &item_perm));
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn demand_matches_brute_force(inst in instance(1, 10), prices in prop::collection::vec(0.0f64..6.0, 10)) {
        let v = inst.valuation(0);
        let m = inst.num_items();
        let prices = prices[..m].to_vec();
        let all = ItemSet::full(m);
        let got = v.demand_within(&PriceVector(prices.clone()), all).unwrap();
        let brute = v.demand_exhaustive(&prices, all);
        prop_assert!((got.utility - brute.utility).abs() <= 1e-12, "{} vs {}", got.utility, brute.utility);
        let recomputed = v.value(got.set) - PriceVector(prices).of(got.set);
        prop_assert!((recomputed - got.utility).abs() <= 1e-12);
    }

    #[test]
    fn json_round_trip(inst in instance(3, 8)) {
        let text = serialize_instance(&inst);
        let back = load_instance(&text).unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(serialize_instance(&back), text);
    }

    #[test]
    fn generated_valuations_validate(inst in instance(2, 7)) {
        for v in inst.valuations() {
            let report = nsw_forge::validate_valuation(v, inst.num_items());
            prop_assert!(report.all_passed(), "{:?}", report);
        }
    }
}

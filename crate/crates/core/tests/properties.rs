//! Randomised invariants over trees, valuations, duals and markets.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treeval::dual::DualDensity;
use treeval::families::{EntropicFamily, WorstCaseParams, WorstCaseStep};
use treeval::io::{num, to_report_string, value_to_f64};
use treeval::market::{extract_state_price_density, gains, Market, StatePriceDensity, Strategy};
use treeval::risksharing::entropic_allocation;
use treeval::tree::{replace_after, CashBalance, StoppingTime, Tree};
use treeval::valuation::{value_at, OneStep, Valuation};

struct Case {
    tree: Arc<Tree>,
    rng: ChaCha8Rng,
}

fn case(seed: u64, depth: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = Arc::new(Tree::random(&mut rng, depth, 3).unwrap());
    Case { tree, rng }
}

fn cash(tree: &Tree, rng: &mut ChaCha8Rng) -> CashBalance {
    CashBalance::from_fn(tree, |_| rng.gen_range(-4.0..4.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subtree_mass_adds_up(seed in any::<u64>(), depth in 1usize..5) {
        let Case { tree, .. } = case(seed, depth);
        prop_assert!((tree.total_weight() - 1.0).abs() < 1e-12);
        for x in tree.nodes() {
            let kids: f64 = tree.children(x).iter().map(|&z| tree.subtree_mass(z)).sum();
            prop_assert!((tree.subtree_mass(x) - tree.weight(x) - kids).abs() < 1e-12);
        }
    }

    #[test]
    fn hitting_time_meets_every_path_once(seed in any::<u64>(), depth in 1usize..5, pick in any::<usize>()) {
        let Case { tree, .. } = case(seed, depth);
        let x = tree.preorder()[pick % tree.len()];
        let tau = StoppingTime::hitting(&tree, x).unwrap();
        prop_assert!(tau.contains(x));
        for &leaf in tree.leaves() {
            let hits = tau.nodes().iter().filter(|&&z| tree.is_descendant(z, leaf)).count();
            prop_assert_eq!(hits, 1);
        }
    }

    #[test]
    fn replace_after_only_touches_the_future(seed in any::<u64>(), depth in 1usize..5) {
        let Case { tree, mut rng } = case(seed, depth);
        let k = cash(&tree, &mut rng);
        let tau = StoppingTime::random(&tree, 0.4, &mut rng);
        let values = tau.nodes().iter().map(|&z| (z, rng.gen_range(-1.0..1.0))).collect();
        let out = replace_after(&tree, &k, &tau, &values).unwrap();
        for y in tree.nodes() {
            match tau.nodes().iter().find(|&&z| tree.is_descendant(z, y)) {
                Some(z) => prop_assert_eq!(out[y], values[z]),
                None => prop_assert_eq!(out[y], k[y]),
            }
        }
    }

    #[test]
    fn entropic_values_are_time_consistent(seed in any::<u64>(), depth in 1usize..5, gamma in 0.1f64..4.0) {
        let Case { tree, mut rng } = case(seed, depth);
        let fam = EntropicFamily::new(tree.clone(), gamma).unwrap();
        let k = cash(&tree, &mut rng);
        let tau = StoppingTime::random(&tree, 0.4, &mut rng);
        let at = value_at(&fam, &tau, &k).unwrap();
        let swapped = replace_after(&tree, &k, &tau, &at).unwrap();
        let root = tree.root();
        prop_assert!((fam.value(root, &k).unwrap() - fam.value(root, &swapped).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn entropic_values_are_monotone_and_cash_invariant(seed in any::<u64>(), depth in 1usize..4, a in -3.0f64..3.0) {
        let Case { tree, mut rng } = case(seed, depth);
        let fam = EntropicFamily::new(tree.clone(), 1.0).unwrap();
        let k = cash(&tree, &mut rng);
        let bump = CashBalance::from_fn(&tree, |_| rng.gen_range(0.0..1.0));
        for x in tree.nodes() {
            let v = fam.value(x, &k).unwrap();
            prop_assert!(fam.value(x, &k.add(&bump)).unwrap() >= v - 1e-12);
            let shifted = fam.value(x, &k.shifted_on(&tree, x, a)).unwrap();
            prop_assert!((shifted - v - a).abs() < 1e-10);
        }
    }

    #[test]
    fn weak_duality_holds(seed in any::<u64>(), depth in 1usize..4, spread in 0.0f64..2.0) {
        let Case { tree, mut rng } = case(seed, depth);
        let fam = EntropicFamily::new(tree.clone(), 0.7).unwrap();
        for x in tree.nodes() {
            let k = cash(&tree, &mut rng);
            let lambda = DualDensity::random(&tree, x, spread, &mut rng);
            let pairing: f64 = lambda.values().iter().zip(k.restrict(&tree, x)).map(|(l, v)| l * v).sum();
            prop_assert!(fam.value(x, &k).unwrap() <= pairing + fam.entropic_dual(x, lambda.values()) + 1e-10);
        }
    }

    #[test]
    fn worst_case_step_is_below_every_piece(seed in any::<u64>(), arity in 2usize..5, pieces in 1usize..4, stopping in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphas: Vec<Vec<f64>> = (0..pieces)
            .map(|_| {
                let raw: Vec<f64> = (0..arity).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let step = WorstCaseStep::new(alphas.clone(), stopping).unwrap();
        let own = rng.gen_range(-3.0..3.0);
        let kids: Vec<f64> = (0..arity).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = step.evaluate(own, &kids).unwrap();
        let best = alphas.iter().map(|a| a.iter().zip(&kids).map(|(p, k)| p * k).sum::<f64>()).fold(f64::INFINITY, f64::min);
        let expect = if stopping { best.min(own) } else { best };
        prop_assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn worst_case_family_is_homogeneous(seed in any::<u64>(), depth in 1usize..4, c in 0.0f64..3.0) {
        let Case { tree, mut rng } = case(seed, depth);
        let fam = WorstCaseParams::uniform(true).assemble(tree.clone()).unwrap();
        let k = cash(&tree, &mut rng);
        let root = tree.root();
        prop_assert!((fam.value(root, &k.scaled(c)).unwrap() - c * fam.value(root, &k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropic_allocation_is_feasible(seed in any::<u64>(), depth in 1usize..4, members in 2usize..4) {
        let Case { tree, mut rng } = case(seed, depth);
        let fams: Vec<EntropicFamily> = (0..members)
            .map(|_| {
                let raw: Vec<f64> = tree.nodes().map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let t = tree.with_weights(&raw.iter().map(|w| w / s).collect::<Vec<_>>()).unwrap();
                EntropicFamily::new(Arc::new(t), rng.gen_range(0.3..3.0)).unwrap()
            })
            .collect();
        let t = fams[0].shared_tree().clone();
        let k = cash(&t, &mut rng);
        let alloc = entropic_allocation(&fams, t.root(), &k).unwrap();
        for y in t.nodes() {
            let s: f64 = alloc.iter().map(|a| a[y]).sum();
            prop_assert!((s - k[y]).abs() < 1e-12);
        }
    }

    #[test]
    fn gains_are_linear_in_holdings(seed in any::<u64>(), depth in 1usize..4, t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = Arc::new(Tree::regular(depth, 2).unwrap());
        let market = Market::binomial(tree.clone(), 1.0, 1.2, 0.9).unwrap();
        let a = Strategy::random(&market, tree.root(), 3.0, &mut rng);
        let b = Strategy::random(&market, tree.root(), 3.0, &mut rng);
        let ga = gains(&market, tree.root(), &a).unwrap();
        let gb = gains(&market, tree.root(), &b).unwrap();
        let mixed = gains(&market, tree.root(), &a.mix(&b, t)).unwrap();
        prop_assert!(mixed.max_abs_diff(&gb.lerp(&ga, t)) < 1e-12);
        prop_assert_eq!(ga[tree.root()], 0.0);
    }

    #[test]
    fn state_price_density_round_trips(seed in any::<u64>(), depth in 1usize..5) {
        let Case { tree, mut rng } = case(seed, depth);
        let zeta: Vec<f64> = tree.nodes().map(|_| rng.gen_range(0.1..5.0)).collect();
        let spd = StatePriceDensity::new(&tree, zeta).unwrap();
        let back = extract_state_price_density(&tree, &spd.one_step_prices(&tree)).unwrap();
        for y in tree.nodes() {
            prop_assert!((back.get(y) - spd.get(y)).abs() < 1e-12 * spd.get(y).max(1.0));
        }
    }

    #[test]
    fn report_floats_round_trip(v in any::<f64>()) {
        let text = to_report_string(&num(v));
        let back = value_to_f64(&serde_json::from_str(&text).unwrap()).unwrap();
        if v.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}

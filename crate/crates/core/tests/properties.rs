//! Properties of the public API on seeded random markets.

use conerisk::fixtures::{self, random_claim, random_cone_market};
use conerisk::io::{bundle_of, Bundle};
use conerisk::market::Market;
use conerisk::pricing::{dual_norm, na_check, sample_price_systems, validate_price_system, PriceSystem};
use conerisk::risk::{avar_composed, rho_dual_exact, rho_from_samples, rho_primal, AvarLevels, RiskSpec};
use conerisk::timecheck::{pi_recursion_check, supermartingale_check};
use conerisk::tree::Claim;
use conerisk::Extended;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn claim(market: &Market, seed: u64) -> Claim {
    random_claim(market.tree(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn finite(market: &Market, x: &Claim, t: usize) -> Vec<f64> {
    rho_primal(x, t, &RiskSpec::ShpProportional, market)
        .unwrap()
        .expect_finite()
}

fn map(x: &Claim, f: impl Fn(usize, &[f64]) -> Vec<f64>) -> Claim {
    Claim {
        d: x.d,
        values: x.values.iter().enumerate().map(|(l, v)| f(l, v)).collect(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primal_and_dual_superhedging_agree(seed in 0u64..10_000, cs in 0u64..1000) {
        let (m, _) = random_cone_market(seed);
        let x = claim(&m, cs);
        for t in 0..=m.tree().horizon() {
            let p = finite(&m, &x, t);
            let d = rho_dual_exact(&x, t, &RiskSpec::ShpProportional, &m).unwrap().expect_finite();
            for (a, b) in p.iter().zip(&d) {
                prop_assert!(close(*a, *b, 1e-6), "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn cash_shifts_the_value(seed in 0u64..10_000, cs in 0u64..1000, c in -5.0f64..5.0) {
        let (m, _) = random_cone_market(seed);
        let x = claim(&m, cs);
        let shifted = map(&x, |_, v| {
            let mut v = v.to_vec();
            v[0] += c;
            v
        });
        let (a, b) = (finite(&m, &x, 0)[0], finite(&m, &shifted, 0)[0]);
        prop_assert!(close(b, a - c, 1e-7), "{b} vs {a} - {c}");
    }

    #[test]
    fn more_of_every_asset_is_less_risky(seed in 0u64..10_000, cs in 0u64..1000, bump in 0.0f64..2.0) {
        let (m, _) = random_cone_market(seed);
        let x = claim(&m, cs);
        let richer = map(&x, |l, v| v.iter().enumerate().map(|(i, a)| a + bump * ((l + i) % 2) as f64).collect());
        let t = m.tree().horizon() - 1;
        for (a, b) in finite(&m, &x, t).iter().zip(finite(&m, &richer, t)) {
            prop_assert!(b <= a + 1e-7 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn value_scales_with_the_claim(seed in 0u64..10_000, cs in 0u64..1000, k in 0.1f64..10.0) {
        let (m, _) = random_cone_market(seed);
        let x = claim(&m, cs);
        let scaled = map(&x, |_, v| v.iter().map(|a| k * a).collect());
        let (a, b) = (finite(&m, &x, 0)[0], finite(&m, &scaled, 0)[0]);
        prop_assert!(close(b, k * a, 1e-7), "{b} vs {k} * {a}");
    }

    #[test]
    fn sampled_systems_are_consistent_and_bound_from_below(seed in 0u64..10_000, cs in 0u64..1000) {
        let (m, _) = random_cone_market(seed);
        let tree = m.tree();
        let sampled = sample_price_systems(&m, 6, seed).unwrap();
        prop_assert!(!sampled.is_empty());
        for sys in &sampled {
            prop_assert!(validate_price_system(&sys.s, &m).is_ok());
            prop_assert!(na_check(&sys.s, tree).unwrap().holds);
            for t in 0..=tree.horizon() {
                for v in dual_norm(&sys.pair, t, &m).unwrap() {
                    prop_assert!((v - 1.0).abs() < 1e-6);
                }
            }
        }
        let systems: Vec<PriceSystem> = sampled.into_iter().map(|s| s.s).collect();
        let x = claim(&m, cs);
        let (_, gap) = rho_from_samples(&x, 0, &RiskSpec::ShpProportional, &m, &systems).unwrap();
        prop_assert!(gap.min_gap.unwrap() >= -1e-7);
    }

    #[test]
    fn frozen_price_checks_hold_on_random_markets(seed in 0u64..10_000, cs in 0u64..1000) {
        let (m, _) = random_cone_market(seed);
        let horizon = m.tree().horizon();
        let spec = RiskSpec::ShpProportional;
        let x = claim(&m, cs);
        for sys in sample_price_systems(&m, 3, seed).unwrap() {
            for s in 1..=horizon {
                for t in 0..s {
                    let r = pi_recursion_check(&x, &sys.s, t, s, &spec, &m).unwrap();
                    prop_assert!(r.pass, "{}", r.line());
                }
            }
            let r = supermartingale_check(&x, &sys.pair, &spec, &m).unwrap();
            prop_assert!(r.pass, "{}", r.line());
        }
    }

    #[test]
    fn composed_avar_cash_and_level_monotonicity(cs in 0u64..1000, c in -3.0f64..3.0, lo in 0.05f64..0.5, step in 0.0f64..0.5) {
        let m = fixtures::model_c();
        let systems: Vec<PriceSystem> = sample_price_systems(&m, 8, 1).unwrap().into_iter().map(|s| s.s).collect();
        let x = claim(&m, cs);
        let at = |lv: f64, y: &Claim| {
            let levels = AvarLevels::uniform(lv, 2, 2).unwrap();
            avar_composed(y, &levels, 0, &m, &systems).unwrap().values[0]
        };
        let shifted = map(&x, |_, v| vec![v[0] + c, v[1]]);
        let (a, b) = (at(lo, &x), at(lo, &shifted));
        match (a, b) {
            (Extended::Finite(a), Extended::Finite(b)) => prop_assert!((b - (a - c)).abs() < 1e-8),
            _ => prop_assert_eq!(a, b),
        }
        let hi = at((lo + step).min(1.0), &x);
        let ordered = match (hi, a) {
            (Extended::NegInf, _) | (_, Extended::PosInf) => true,
            (Extended::Finite(h), Extended::Finite(a)) => h <= a + 1e-9 * (1.0 + a.abs()),
            _ => false,
        };
        prop_assert!(ordered, "{hi:?} above {a:?}");
    }
}

#[test]
fn bundles_round_trip_through_json() {
    for seed in 0..10 {
        let (m, _) = random_cone_market(seed);
        let x = claim(&m, seed);
        let bundle = bundle_of(&m, &[("X".into(), x.clone())]);
        let text = serde_json::to_string(&bundle).unwrap();
        let back: Bundle = serde_json::from_str(&text).unwrap();
        let m2 = back.market().unwrap();
        let claims = back.claims(m2.tree()).unwrap();
        assert_eq!(claims[0].1, x);
        let (a, b) = (finite(&m, &x, 0)[0], finite(&m2, &claims[0].1, 0)[0]);
        assert!(close(a, b, 1e-12), "seed {seed}: {a} vs {b}");
    }
}

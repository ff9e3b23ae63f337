//! Invariants of the full pipeline from truth generation to analysis.

use proptest::prelude::*;
use weakshadow::harness::{input_hash, ExperimentConfig, MethodSpec, Preset, Setup};
use weakshadow::shadowing::{StepNorm, Termination};
use weakshadow::{complete, weak_shadow, w4dvar_solve, Init, ShadowingConfig, W4DVarConfig};

fn small(preset: Preset, n: usize, seed: u64) -> Setup {
    let mut cfg = ExperimentConfig::preset(preset);
    cfg.n = n;
    cfg.base_seed = seed;
    cfg.climatology_steps = 20_000;
    Setup::new(cfg).unwrap()
}

fn method_strategy() -> impl Strategy<Value = MethodSpec> {
    prop_oneof![
        (1usize..100).prop_map(|k| MethodSpec::Newton { max_iterations: k }),
        (0.05f64..0.95, 0.5f64..1.0, any::<bool>(), 1usize..100).prop_map(|(rho, r, obs, k)| {
            MethodSpec::ShadowAdaptive {
                rho,
                r,
                step_norm: if obs { StepNorm::Observed } else { StepNorm::Completed },
                max_iterations: k,
            }
        }),
        (0.0f64..10.0, 0.5f64..1.0).prop_map(|(a, r)| MethodSpec::shadow_fixed(a, r)),
        (any::<bool>(), 1e-10f64..1e-3).prop_map(|(bg, tol)| match MethodSpec::w4dvar(if bg {
            Init::Background
        } else {
            Init::Observations
        }) {
            MethodSpec::W4dvar { init, decrease_scale, max_iterations, .. } => {
                MethodSpec::W4dvar { init, tolerance: tol, decrease_scale, max_iterations }
            }
            other => other,
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn config_round_trips_through_toml(
        preset in prop_oneof![Just(Preset::Table1), Just(Preset::Table2), Just(Preset::Table3)],
        n in 10usize..5000,
        seed in any::<u64>(),
        replicates in 1usize..200,
        methods in prop::collection::vec(method_strategy(), 1..5),
    ) {
        let mut cfg = ExperimentConfig::preset(preset);
        cfg.n = n;
        cfg.base_seed = seed;
        cfg.replicates = replicates;
        cfg.method.clear();
        for (i, m) in methods.into_iter().enumerate() {
            cfg.method.insert(format!("m{i}"), m);
        }
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn draws_are_reproducible_per_seed(seed in any::<u64>()) {
        let setup = small(Preset::Table2, 60, 0);
        let (t1, o1) = setup.draw(seed).unwrap();
        let (t2, o2) = setup.draw(seed).unwrap();
        prop_assert_eq!(&t1, &t2);
        prop_assert_eq!(input_hash(&t1, &o1), input_hash(&t2, &o2));
        let (t3, o3) = setup.draw(seed.wrapping_add(1)).unwrap();
        prop_assert_ne!(input_hash(&t1, &o1), input_hash(&t3, &o3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shadowing_stops_at_the_noise_level(seed in 0u64..10_000, r in 0.6f64..0.99) {
        let setup = small(Preset::Table2, 300, seed);
        let (_, obs) = setup.draw(seed).unwrap();
        let done = complete(&obs, &setup.climatology).unwrap();
        let cfg = ShadowingConfig { r, ..Default::default() };
        let res = weak_shadow(&setup.model, &done, &obs, &cfg).unwrap();
        let m = obs.count() as f64;
        prop_assert_eq!(res.termination, Termination::DataMismatchBound);
        prop_assert!(2.0 * res.j_o / m > r);
        // never beyond the noise level itself
        prop_assert!(2.0 * res.j_o < m);
        prop_assert!(res.alpha_history.windows(2).all(|w| w[1] >= w[0]));
        // normalized mismatch samples reproduce the reported costs
        let jo: f64 = 0.5 * res.data_mismatch.iter().map(|x| x * x).sum::<f64>();
        let jm: f64 = 0.5 * res.model_mismatch.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((jo - res.j_o).abs() <= 1e-9 * res.j_o);
        prop_assert!((jm - res.j_m).abs() <= 1e-9 * res.j_m);
    }

    #[test]
    fn w4dvar_fits_the_data_closer_than_shadowing(seed in 0u64..10_000) {
        let setup = small(Preset::Table1, 400, seed);
        let (_, obs) = setup.draw(seed).unwrap();
        let done = complete(&obs, &setup.climatology).unwrap();
        let sh = weak_shadow(&setup.model, &done, &obs, &ShadowingConfig::default()).unwrap();
        let var = w4dvar_solve(&setup.model, &done, &obs, &W4DVarConfig::default()).unwrap();
        prop_assert_eq!(var.termination, Termination::Converged);
        prop_assert!(var.j_o < sh.j_o);
        prop_assert!(var.j_o + var.j_m < sh.j_o + sh.j_m);
    }
}

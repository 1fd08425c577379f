mod common;

use lipmp::pursuit::*;
use proptest::prelude::*;

use common::*;

fn config(rofmp: bool, lambda0: f64, restart_period: usize) -> PursuitConfig {
    PursuitConfig {
        variant: if rofmp { Variant::Rofmp } else { Variant::Rfmp },
        lambda0,
        rho: 1e-6,
        max_iterations: 25,
        restart_period,
        ..Default::default()
    }
}

fn run(seed: u64, cfg: &PursuitConfig, mut f: impl FnMut(&PursuitState)) -> (PursuitState, RunOutcome) {
    let mut rng = rng(seed);
    let fm = forward(&mut rng, 80);
    let dict = mixed_dictionary(&mut rng, 4, 20, seed % 2 == 0);
    let y = random_data(&mut rng, &fm, &dict);
    let mut state = PursuitState::new(y);
    let mut sel = FiniteSelector { scan: DictionaryScan::new(&fm, dict).unwrap(), replay: false };
    let mut obs = |s: &PursuitState, _: &Selection, _: &StepInfo, _: &IterationRecord| f(s);
    let out = run_pursuit(&mut state, &fm, cfg, &mut sel, &mut obs).unwrap();
    (state, out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tikhonov_never_increases(seed in 0u64..1000, rofmp in any::<bool>(), lambda0 in prop_oneof![Just(0.0), 1e-7f64..1e-3], period in 3usize..30) {
        let cfg = config(rofmp, lambda0, period);
        let mut prev: Option<f64> = None;
        let mut worst = f64::NEG_INFINITY;
        let (state, _) = run(seed, &cfg, |s| {
            let t = s.tikhonov_value(&cfg);
            if let Some(p) = prev {
                worst = worst.max(t - p);
            }
            prev = Some(t);
        });
        prop_assert!(worst <= 1e-12 * state.y_norm().powi(2), "{}", worst);
    }

    #[test]
    fn residual_matches_coefficients(seed in 0u64..1000, rofmp in any::<bool>(), lambda0 in prop_oneof![Just(0.0), 1e-6f64..1e-3], period in 3usize..30) {
        let cfg = config(rofmp, lambda0, period);
        let mut worst = 0.0f64;
        let (state, _) = run(seed, &cfg, |s| {
            let r = s.recompute_residual();
            let d: Vec<f64> = r.iter().zip(s.residual()).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&d));
        });
        prop_assert!(worst <= 1e-10 * state.y_norm());
    }

    #[test]
    fn orthogonal_residual_without_penalty(seed in 0u64..1000, period in 3usize..30) {
        let cfg = config(true, 0.0, period);
        let mut worst = 0.0f64;
        let (state, _) = run(seed, &cfg, |s| {
            for q in s.ortho_basis() {
                worst = worst.max(dot(q, s.residual()).abs());
            }
        });
        prop_assert!(worst <= 1e-10 * state.y_norm());
    }

    #[test]
    fn projection_is_idempotent(seed in 0u64..1000, v in proptest::collection::vec(-1.0f64..1.0, 80)) {
        let (state, _) = run(seed, &config(true, 1e-5, 100), |_| {});
        let p = state.project_out(&v);
        let pp = state.project_out(&p);
        let d: Vec<f64> = p.iter().zip(&pp).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&d) <= 1e-12 * norm(&v).max(1e-300));
        for x in state.project(&p) {
            prop_assert!(x.abs() <= 1e-12 * norm(&v));
        }
    }

    #[test]
    fn orthogonal_variant_never_repeats(seed in 0u64..1000) {
        let (state, _) = run(seed, &config(true, 1e-6, 100), |_| {});
        let els: Vec<_> = state.chosen().iter().map(|c| &c.element).collect();
        for i in 0..els.len() {
            for j in 0..i {
                prop_assert!(els[i] != els[j]);
            }
        }
    }
}

#[test]
fn restart_keeps_the_approximation() {
    let cfg = config(true, 1e-4, 100);
    let (mut state, _) = run(5, &cfg, |_| {});
    let before = state.coefficients();
    let residual = state.residual().to_vec();
    let tik = state.tikhonov_value(&cfg);
    state.restart();
    assert_eq!(state.coefficients(), before);
    assert!(state.ortho_basis().is_empty());
    assert_eq!(state.window_start(), state.chosen().len());
    let d: Vec<f64> = residual.iter().zip(state.residual()).map(|(a, b)| a - b).collect();
    assert!(norm(&d) <= 1e-12 * state.y_norm());
    assert!((state.tikhonov_value(&cfg) - tik).abs() <= 1e-12 * tik);
}

#[test]
fn terminates_on_data_error() {
    let mut cfg = config(true, 0.0, 100);
    cfg.rho = 0.2;
    cfg.max_iterations = 500;
    let (state, out) = run(7, &cfg, |_| {});
    assert_eq!(out.termination, Termination::DataError);
    assert!(state.rel_data_error() <= 0.2);
    assert_eq!(out.records.len(), state.chosen().len());
    assert_eq!(out.seconds.len(), out.records.len());
}

#[test]
fn zero_iterations() {
    let mut cfg = config(false, 0.0, 100);
    cfg.max_iterations = 0;
    let (state, out) = run(8, &cfg, |_| {});
    assert_eq!(out.termination, Termination::MaxIterations);
    assert!(out.records.is_empty());
    assert_eq!(state.rel_data_error(), 1.0);
}

mod common;

use std::f64::consts::PI;

use lipmp::element::ElementClass;
use lipmp::learn::*;
use lipmp::optim::{global_maximize, local_maximize, BoxDomain, Budget, LocalOptions};
use lipmp::pursuit::*;
use proptest::prelude::*;

use common::*;

fn history() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-0.1f64..0.1, 3), 0..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spline_is_a_fraction(z in proptest::collection::vec(-0.1f64..0.1, 3), h in history(), eps in 1e-4f64..1e-2) {
        let s = spline_penalty(&z, &h, eps);
        prop_assert!((0.0..=1.0).contains(&s));
        let tau = |p: &Vec<f64>| z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if h.iter().any(|p| tau(p) <= eps) {
            prop_assert_eq!(s, 0.0);
        }
        if h.iter().all(|p| tau(p) >= 2.0 * eps) {
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn spline_gradient(z in proptest::collection::vec(-0.1f64..0.1, 3), h in history(), eps in 1e-3f64..1e-2) {
        let (v, g) = spline_with_grad(&z, &h, eps);
        prop_assert_eq!(v, spline_penalty(&z, &h, eps));
        let step = 1e-7;
        for i in 0..3 {
            let mut a = z.clone();
            let mut b = z.clone();
            a[i] += step;
            b[i] -= step;
            let fd = (spline_penalty(&a, &h, eps) - spline_penalty(&b, &h, eps)) / (2.0 * step);
            prop_assert!((fd - g[i]).abs() <= 1e-4 * (1.0 + g[i].abs()) / eps, "{} {}", fd, g[i]);
        }
    }

    #[test]
    fn box_projection(x in proptest::collection::vec(-10.0f64..10.0, 3)) {
        let d = BoxDomain::new(vec![0.1, 0.1, -0.9], vec![0.9, 2.0 * PI - 0.1, 0.9]).unwrap().with_period(1, 2.0 * PI);
        let mut p = x.clone();
        d.project(&mut p);
        prop_assert!(d.contains(&p));
        let mut q = p.clone();
        d.project(&mut q);
        prop_assert_eq!(p, q);
    }

    #[test]
    fn local_ascent_never_loses(a in proptest::collection::vec(-2.0f64..2.0, 3), start in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let d = BoxDomain::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let f = |x: &[f64]| x.iter().zip(&a).map(|(xi, ai)| (ai * xi * 3.0).sin() - xi * xi).sum::<f64>();
        let r = local_maximize(|x: &[f64], _| (f(x), None), &d, &start, LocalOptions::default());
        prop_assert!(r.value >= f(&start));
        prop_assert!(d.contains(&r.x));
        prop_assert_eq!(r.value, f(&r.x));
    }

    #[test]
    fn global_search_stays_inside(a in proptest::collection::vec(-2.0f64..2.0, 4), evals in 1usize..300) {
        let d = class_domain(ElementClass::Slepian, 1e-8).unwrap();
        let f = |x: &[f64]| x.iter().zip(&a).map(|(xi, ai)| (ai * xi).cos()).sum::<f64>();
        let r = global_maximize(f, &d, Budget { max_evals: evals, max_time: None });
        prop_assert!(d.contains(&r.x));
        prop_assert!(r.evals <= evals);
        prop_assert_eq!(r.value, f(&r.x));
    }
}

#[test]
fn domains_are_narrowed() {
    let k = class_domain(ElementClass::Apk, 1e-8).unwrap();
    assert_eq!(k.lower, vec![1e-8, 1e-8, -1.0 + 1e-8]);
    assert_eq!(k.upper, vec![1.0 - 1e-8, 2.0 * PI - 1e-8, 1.0 - 1e-8]);
    assert!(class_domain(ElementClass::Sh, 1e-8).is_err());
}

fn learning_run(seed: u64, classes: Vec<ElementClass>) -> (PursuitState, Vec<(Option<f64>, f64)>) {
    let mut rng = rng(seed);
    let fm = forward(&mut rng, 120);
    let dict = mixed_dictionary(&mut rng, 3, 12, true);
    let y = random_data(&mut rng, &fm, &dict);
    let spec = InfiniteDictionarySpec { nbar: 5, slepian_band_limit: 2, classes };
    let lc = LearnConfig { max_evals: 200, ..Default::default() };
    let starting = mixed_dictionary(&mut rng, 2, 4, false);
    let mut sel = LearningSelector::new(&fm, spec, lc, starting).unwrap();
    let cfg = PursuitConfig { max_iterations: 8, rho: 1e-6, lambda0: 1e-6, ..Default::default() };
    let mut state = PursuitState::new(y);
    let mut dominance = Vec::new();
    let mut obs = |_: &PursuitState, s: &Selection, _: &StepInfo, _: &IterationRecord| dominance.push((s.start_best, s.value));
    run_pursuit(&mut state, &fm, &cfg, &mut sel, &mut obs).unwrap();
    (state, dominance)
}

#[test]
fn learnt_elements_keep_their_distance() {
    let eps = LearnConfig::default().epsilon;
    for seed in 0..3 {
        let (state, _) = learning_run(seed, vec![ElementClass::Sh, ElementClass::Apk, ElementClass::Apw, ElementClass::Slepian]);
        let chosen = &state.chosen()[state.window_start()..];
        for (i, a) in chosen.iter().enumerate() {
            let Some(za) = element_coords(&a.element) else { continue };
            for b in &chosen[..i] {
                if b.element.class() != a.element.class() {
                    continue;
                }
                let zb = element_coords(&b.element).unwrap();
                let tau: f64 = za.iter().zip(&zb).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!(tau > eps, "seed {seed}: {} too close to {}", a.element.descriptor(), b.element.descriptor());
            }
        }
    }
}

#[test]
fn learning_dominates_the_starting_dictionary() {
    for seed in 10..13 {
        let (_, dominance) = learning_run(seed, vec![ElementClass::Sh, ElementClass::Apk, ElementClass::Apw]);
        assert!(!dominance.is_empty());
        for (start, value) in dominance {
            assert!(value >= start.unwrap());
        }
    }
}

#[test]
fn learning_is_deterministic() {
    let classes = vec![ElementClass::Sh, ElementClass::Apk, ElementClass::Slepian];
    let (a, _) = learning_run(21, classes.clone());
    let (b, _) = learning_run(21, classes);
    let ea: Vec<_> = a.chosen().iter().map(|c| (c.element.clone(), c.alpha)).collect();
    let eb: Vec<_> = b.chosen().iter().map(|c| (c.element.clone(), c.alpha)).collect();
    assert_eq!(ea, eb);
}

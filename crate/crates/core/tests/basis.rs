mod common;

use std::f64::consts::PI;

use lipmp::element::{inner_sobolev, DictionaryElement, PenaltyNorm};
use lipmp::geom::{driscoll_healy_count, driscoll_healy_grid, reuter_grid, unit_vector, CapRegion, SurfacePoint};
use lipmp::kernel::{upward_grad, upward_value, KernelKind};
use lipmp::sh::{eval_all_at, ShIndex};
use lipmp::slepian::{build_polar_cap, polar_cap_cached, rotate_coeffs};
use proptest::prelude::*;

#[test]
fn reuter_counts_grow_and_repeat() {
    let mut last = 0;
    for g in 2..40 {
        let a = reuter_grid(g).unwrap();
        assert_eq!(a.points(), reuter_grid(g).unwrap().points());
        assert!(a.len() > last, "gamma {g}");
        last = a.len();
    }
    assert_eq!(reuter_grid(10).unwrap().len(), 123);
    assert_eq!(reuter_grid(100).unwrap().len(), 12684);
}

#[test]
fn driscoll_healy_shape() {
    assert_eq!(driscoll_healy_count(180), 65341);
    let g = driscoll_healy_grid(12).unwrap();
    assert_eq!(g.len(), driscoll_healy_count(12));
    let mean: f64 = g.points().iter().map(|p| p.t()).sum::<f64>() / g.len() as f64;
    assert!(mean.abs() < 1e-14);
}

fn kernel_element() -> impl Strategy<Value = DictionaryElement> {
    (0.05f64..0.9, 0.0f64..2.0 * PI, -1.0f64..=1.0, any::<bool>(), any::<bool>()).prop_map(|(r, phi, t, apw, normalized)| {
        if apw {
            DictionaryElement::apw(r, phi, t, normalized).unwrap()
        } else {
            DictionaryElement::apk(r, phi, t, normalized).unwrap()
        }
    })
}

fn element() -> impl Strategy<Value = DictionaryElement> {
    prop_oneof![
        (0usize..12).prop_flat_map(|n| (Just(n), -(n as i64)..=n as i64)).prop_map(|(n, j)| DictionaryElement::sh(n, j).unwrap()),
        kernel_element(),
        (-0.9f64..0.9, 0.0f64..6.0, 0.0f64..3.0, 0.0f64..6.0, 1usize..=9).prop_map(|(c, a, b, g, k)| {
            DictionaryElement::slepian(CapRegion::new(c, a, b, g).unwrap(), k, 2).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sh_index_round_trip(k in 0usize..10_000) {
        let i = ShIndex::from_linear(k);
        prop_assert_eq!(i.linear(), k);
        prop_assert!(i.j.unsigned_abs() as usize <= i.n);
    }

    #[test]
    fn addition_theorem(n in 0usize..40, phi in 0.0f64..2.0 * PI, t in -1.0f64..=1.0) {
        let y = eval_all_at(n, phi, t);
        let s: f64 = y[n * n..].iter().map(|v| v * v).sum();
        prop_assert!((s - (2 * n + 1) as f64 / (4.0 * PI)).abs() < 1e-11);
    }

    #[test]
    fn sobolev_is_symmetric(a in element(), b in element()) {
        let pen = PenaltyNorm::default();
        let ab = inner_sobolev(&a, &b, &pen).unwrap();
        let ba = inner_sobolev(&b, &a, &pen).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-10 * ab.abs().max(1e-300), "{} {}", ab, ba);
    }

    #[test]
    fn sobolev_gram_is_positive(els in proptest::collection::vec(element(), 2..6), w in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let pen = PenaltyNorm::default();
        let mut q = 0.0;
        let mut scale = 0.0;
        for (i, a) in els.iter().enumerate() {
            for (j, b) in els.iter().enumerate() {
                let g = inner_sobolev(a, b, &pen).unwrap();
                q += w[i] * w[j] * g;
                if i == j {
                    scale += w[i] * w[i] * g;
                }
            }
        }
        prop_assert!(q >= -1e-10 * scale);
    }

    #[test]
    fn kernel_gradient_matches_differences(e in kernel_element(), sigma in 1.0f64..1.3, phi in 0.0f64..2.0 * PI, t in -1.0f64..=1.0) {
        let (kind, x, _) = e.kernel_parts().unwrap();
        let eta = unit_vector(phi, t);
        let g = upward_grad(kind, &x.cart(), sigma, &eta);
        let h = 1e-6;
        for i in 0..3 {
            let mut a = x.cart();
            let mut b = x.cart();
            a[i] += h;
            b[i] -= h;
            let fd = (upward_value(kind, &a, sigma, &eta) - upward_value(kind, &b, sigma, &eta)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{} {}", fd, g[i]);
        }
    }

    #[test]
    fn apw_vanishes_at_centre_radius_zero(phi in 0.0f64..2.0 * PI, t in -1.0f64..=1.0, sigma in 1.0f64..1.5) {
        let eta = unit_vector(phi, t);
        prop_assert!(upward_value(KernelKind::Apw, &[0.0; 3], sigma, &eta).abs() < 1e-15);
        let apk = upward_value(KernelKind::Apk, &[0.0; 3], sigma, &eta);
        prop_assert!((apk - 1.0 / (4.0 * PI * sigma)).abs() < 1e-14);
    }

    #[test]
    fn upward_value_tends_to_surface_value(e in element(), phi in 0.0f64..2.0 * PI, t in -1.0f64..=1.0) {
        let p = SurfacePoint::new(phi, t).unwrap();
        let a = e.eval(&p);
        let b = e.upward_eval(1.0 + 1e-8, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{} {}", a, b);
        prop_assert!(e.upward_eval(1.0, &p).is_err());
    }

    #[test]
    fn concentrations_are_fractions(l in 0usize..7, c in -0.99f64..0.99) {
        let b = build_polar_cap(l, c).unwrap();
        prop_assert_eq!(b.functions().len(), (l + 1) * (l + 1));
        for m in b.concentrations() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(m));
        }
        prop_assert_eq!(&*polar_cap_cached(l, c).unwrap(), &b);
    }

    #[test]
    fn rotation_is_isometric(c in -0.9f64..0.9, k in 0usize..16, a in 0.0f64..6.3, b in 0.0f64..PI, g in 0.0f64..6.3) {
        let basis = build_polar_cap(3, c).unwrap();
        let f = &basis.functions()[k];
        prop_assert!((rotate_coeffs(f, a, b, g).norm() - f.norm()).abs() < 1e-12);
    }
}

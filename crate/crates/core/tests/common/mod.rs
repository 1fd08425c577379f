#![allow(dead_code)]

use std::f64::consts::PI;

use lipmp::element::{DictionaryElement, PenaltyNorm};
use lipmp::geom::{CapRegion, Grid, SurfacePoint};
use lipmp::pursuit::ForwardModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(rng: &mut impl Rng) -> SurfacePoint {
    SurfacePoint::new(rng.random_range(0.0..2.0 * PI), rng.random_range(-1.0..1.0)).unwrap()
}

pub fn random_grid(rng: &mut impl Rng, len: usize) -> Grid {
    Grid::custom((0..len).map(|_| random_point(rng)).collect()).unwrap()
}

pub fn random_kernel(rng: &mut impl Rng, r_max: f64) -> DictionaryElement {
    let r = rng.random_range(0.3..r_max);
    let phi = rng.random_range(0.0..2.0 * PI);
    let t = rng.random_range(-0.95..0.95);
    let normalized = rng.random_bool(0.5);
    if rng.random_bool(0.5) {
        DictionaryElement::apk(r, phi, t, normalized).unwrap()
    } else {
        DictionaryElement::apw(r, phi, t, normalized).unwrap()
    }
}

/// SH up to `sh_max`, `kernels` random kernels and optionally the members of
/// one random cap basis with band limit 2.
pub fn mixed_dictionary(rng: &mut impl Rng, sh_max: usize, kernels: usize, slepian: bool) -> Vec<DictionaryElement> {
    let mut d: Vec<DictionaryElement> = lipmp::sh::ShIndex::all(sh_max).map(DictionaryElement::Sh).collect();
    d.extend((0..kernels).map(|_| random_kernel(rng, 0.85)));
    if slepian {
        let region = CapRegion::new(
            rng.random_range(-0.5..0.8),
            rng.random_range(0.1..6.0),
            rng.random_range(0.1..3.0),
            rng.random_range(0.1..6.0),
        )
        .unwrap();
        d.extend((1..=9).map(|k| DictionaryElement::slepian(region, k, 2).unwrap()));
    }
    d
}

/// Data from a random combination of dictionary elements plus a little noise.
pub fn random_data(rng: &mut impl Rng, fm: &ForwardModel, dict: &[DictionaryElement]) -> Vec<f64> {
    let mut y = vec![0.0; fm.len()];
    for _ in 0..4 {
        let e = &dict[rng.random_range(0..dict.len())];
        let c: f64 = rng.random_range(-1.0..1.0);
        for (yi, ti) in y.iter_mut().zip(fm.apply_uncached(e)) {
            *yi += c * ti;
        }
    }
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for v in &mut y {
        *v += 0.01 * scale * rng.random_range(-1.0..1.0);
    }
    y
}

pub fn forward(rng: &mut impl Rng, len: usize) -> ForwardModel {
    let sigma = rng.random_range(1.02..1.2);
    ForwardModel::new(random_grid(rng, len), sigma, PenaltyNorm::default()).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

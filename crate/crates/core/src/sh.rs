//! Fully normalized real spherical harmonics.
//!
//! `Y_{n,j}(φ, t) = P̄_{n,|j|}(t) · √2 cos(|j|φ)` for `j < 0`, `P̄_{n,0}(t)`
//! for `j = 0` and `P̄_{n,j}(t) · √2 sin(jφ)` for `j > 0`, where `P̄` are the
//! associated Legendre functions scaled so that every `Y_{n,j}` has unit
//! `L²(Ω)` norm. No Condon–Shortley phase is applied.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::geom::SurfacePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShIndex {
    pub n: usize,
    pub j: i64,
}

impl ShIndex {
    pub fn new(n: usize, j: i64) -> Result<Self> {
        if j.unsigned_abs() as usize > n {
            return Err(invalid(format!("spherical harmonic order |{j}| exceeds degree {n}")));
        }
        Ok(Self { n, j })
    }

    /// Position in the degree-major layout `n² + n + j`.
    #[inline]
    pub fn linear(&self) -> usize {
        ((self.n * self.n + self.n) as i64 + self.j) as usize
    }

    pub fn from_linear(k: usize) -> Self {
        let n = (k as f64).sqrt() as usize;
        let n = if (n + 1) * (n + 1) <= k { n + 1 } else if n * n > k { n - 1 } else { n };
        Self {
            n,
            j: k as i64 - (n * n + n) as i64,
        }
    }

    /// All indices up to degree `nmax` in linear order.
    pub fn all(nmax: usize) -> impl Iterator<Item = ShIndex> {
        (0..(nmax + 1) * (nmax + 1)).map(Self::from_linear)
    }
}

/// Number of coefficients of a band-limited expansion of degree `nmax`.
#[inline]
pub const fn coeff_count(nmax: usize) -> usize {
    (nmax + 1) * (nmax + 1)
}

#[inline]
fn tri(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

/// Normalized associated Legendre functions `P̄_{n,m}(t)` for `0 ≤ m ≤ n ≤ nmax`,
/// stored triangularly (`n(n+1)/2 + m`).
pub fn legendre_table(nmax: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; tri(nmax, nmax) + 1];
    let s = (1.0 - t * t).max(0.0).sqrt();
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=nmax {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
        }
        p[tri(m, m)] = pmm;
        if m == nmax {
            break;
        }
        p[tri(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * t * pmm;
        let mf = m as f64;
        let mut a_prev = ((4.0 * (mf + 1.0).powi(2) - 1.0) / ((mf + 1.0).powi(2) - mf * mf)).sqrt();
        for n in m + 2..=nmax {
            let nf = n as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            p[tri(n, m)] = a * (t * p[tri(n - 1, m)] - p[tri(n - 2, m)] / a_prev);
            a_prev = a;
        }
    }
    p
}

/// Unnormalized-in-order zonal Legendre polynomials `P_n(t)` for `n ≤ nmax`.
pub fn legendre_polynomials(nmax: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax >= 1 {
        p.push(t);
    }
    for n in 2..=nmax {
        let nf = n as f64;
        let v = ((2.0 * nf - 1.0) * t * p[n - 1] - (nf - 1.0) * p[n - 2]) / nf;
        p.push(v);
    }
    p
}

/// Values of all `Y_{n,j}` with `n ≤ nmax` at `(phi, t)`, in linear order.
pub fn eval_all_at(nmax: usize, phi: f64, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; coeff_count(nmax)];
    eval_all_into(nmax, phi, t, &mut out);
    out
}

pub fn eval_all(nmax: usize, p: &SurfacePoint) -> Vec<f64> {
    eval_all_at(nmax, p.phi(), p.t())
}

/// Like [`eval_all_at`] but writes into a caller-owned slice of length `(nmax+1)²`.
pub fn eval_all_into(nmax: usize, phi: f64, t: f64, out: &mut [f64]) {
    let leg = legendre_table(nmax, t);
    let sqrt2 = std::f64::consts::SQRT_2;
    let trig: Vec<(f64, f64)> = (0..=nmax).map(|m| (m as f64 * phi).sin_cos()).collect();
    for n in 0..=nmax {
        let base = n * n + n;
        out[base] = leg[tri(n, 0)];
        for m in 1..=n {
            let v = sqrt2 * leg[tri(n, m)];
            let (sm, cm) = trig[m];
            out[base - m] = v * cm;
            out[base + m] = v * sm;
        }
    }
}

/// Single spherical harmonic value.
pub fn eval_sh(idx: ShIndex, p: &SurfacePoint) -> f64 {
    eval_sh_at(idx, p.phi(), p.t())
}

pub fn eval_sh_at(idx: ShIndex, phi: f64, t: f64) -> f64 {
    let m = idx.j.unsigned_abs() as usize;
    let leg = legendre_table(idx.n, t);
    let v = leg[tri(idx.n, m)];
    if idx.j == 0 {
        v
    } else if idx.j < 0 {
        std::f64::consts::SQRT_2 * v * (m as f64 * phi).cos()
    } else {
        std::f64::consts::SQRT_2 * v * (m as f64 * phi).sin()
    }
}

/// Values of all `Y_{n,j}` (`n ≤ nmax`) with their partial derivatives in
/// `phi` and `t`. The `t` derivative is singular at the poles (`|t| = 1`),
/// where it is returned as zero.
pub fn eval_all_with_grad(nmax: usize, phi: f64, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_coef = coeff_count(nmax);
    let mut val = vec![0.0; n_coef];
    let mut dphi = vec![0.0; n_coef];
    let mut dt = vec![0.0; n_coef];
    let leg = legendre_table(nmax, t);
    let omt2 = 1.0 - t * t;
    let sqrt2 = std::f64::consts::SQRT_2;
    for n in 0..=nmax {
        let base = n * n + n;
        let nf = n as f64;
        for m in 0..=n {
            let mf = m as f64;
            let p = leg[tri(n, m)];
            // (1 − t²) dP̄/dt = −n t P̄_{n,m} + √((2n+1)(n²−m²)/(2n−1)) P̄_{n−1,m}
            let dp = if omt2 > 0.0 {
                let lower = if n > m {
                    ((2.0 * nf + 1.0) * (nf * nf - mf * mf) / (2.0 * nf - 1.0)).sqrt() * leg[tri(n - 1, m)]
                } else {
                    0.0
                };
                (-nf * t * p + lower) / omt2
            } else {
                0.0
            };
            if m == 0 {
                val[base] = p;
                dt[base] = dp;
            } else {
                let (sm, cm) = (mf * phi).sin_cos();
                val[base - m] = sqrt2 * p * cm;
                val[base + m] = sqrt2 * p * sm;
                dt[base - m] = sqrt2 * dp * cm;
                dt[base + m] = sqrt2 * dp * sm;
                dphi[base - m] = -mf * sqrt2 * p * sm;
                dphi[base + m] = mf * sqrt2 * p * cm;
            }
        }
    }
    (val, dphi, dt)
}

/// Band-limited real coefficient table `g_{l,m}`, `0 ≤ l ≤ L`, in linear order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    band_limit: usize,
    table: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn new(band_limit: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != coeff_count(band_limit) {
            return Err(invalid(format!(
                "band limit {band_limit} needs {} coefficients, got {}",
                coeff_count(band_limit),
                table.len()
            )));
        }
        Ok(Self { band_limit, table })
    }

    pub fn zeros(band_limit: usize) -> Self {
        Self {
            band_limit,
            table: vec![0.0; coeff_count(band_limit)],
        }
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn get(&self, idx: ShIndex) -> f64 {
        if idx.n > self.band_limit {
            0.0
        } else {
            self.table[idx.linear()]
        }
    }

    pub fn norm(&self) -> f64 {
        self.table.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Point value `Σ g_{l,m} Y_{l,m}(φ, t)`.
    pub fn eval_at(&self, phi: f64, t: f64) -> f64 {
        let ys = eval_all_at(self.band_limit, phi, t);
        ys.iter().zip(&self.table).map(|(y, g)| y * g).sum()
    }
}

/// `P̄_{n,m}(t)` for `n` from `m` to `nmax` at fixed order.
pub fn legendre_order(nmax: usize, m: usize, t: f64) -> Vec<f64> {
    let table = legendre_table(nmax, t);
    (m..=nmax).map(|n| table[tri(n, m)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_round_trip() {
        for k in 0..500 {
            let idx = ShIndex::from_linear(k);
            assert!(idx.j.unsigned_abs() as usize <= idx.n);
            assert_eq!(idx.linear(), k);
        }
        assert!(ShIndex::new(2, 3).is_err());
        assert_eq!(ShIndex::all(2).count(), 9);
    }

    #[test]
    fn constant_and_pole_values() {
        let p = SurfacePoint::new(1.3, -0.4).unwrap();
        let y00 = eval_sh(ShIndex::new(0, 0).unwrap(), &p);
        assert!((y00 - 0.282_094_791_773_878_14).abs() < 1e-15);
        let north = SurfacePoint::new(0.0, 1.0).unwrap();
        let y10 = eval_sh(ShIndex::new(1, 0).unwrap(), &north);
        assert!((y10 - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degree_one_is_cartesian() {
        let p = SurfacePoint::new(0.7, 0.35).unwrap();
        let c = p.cart();
        let k = (3.0 / (4.0 * PI)).sqrt();
        let ys = eval_all(1, &p);
        assert!((ys[1] - k * c[0]).abs() < 1e-15);
        assert!((ys[2] - k * c[2]).abs() < 1e-15);
        assert!((ys[3] - k * c[1]).abs() < 1e-15);
    }

    #[test]
    fn addition_theorem() {
        let p = SurfacePoint::new(2.1, 0.123).unwrap();
        let ys = eval_all(20, &p);
        for n in 0..=20usize {
            let s: f64 = (0..=2 * n).map(|k| ys[n * n + k].powi(2)).sum();
            assert!((s - (2 * n + 1) as f64 / (4.0 * PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_matches_table() {
        let p = SurfacePoint::new(5.5, -0.9).unwrap();
        let ys = eval_all(12, &p);
        for idx in ShIndex::all(12) {
            assert!((eval_sh(idx, &p) - ys[idx.linear()]).abs() < 1e-14);
        }
    }

    #[test]
    fn high_degree_is_finite() {
        let ys = eval_all_at(100, 0.3, 0.999_999);
        assert!(ys.iter().all(|v| v.is_finite()));
        let p = legendre_polynomials(100, 0.3);
        let q = legendre_order(100, 0, 0.3);
        for n in 0..=100 {
            let scale = ((2 * n + 1) as f64 / (4.0 * PI)).sqrt();
            assert!((p[n] * scale - q[n]).abs() < 1e-12);
        }
    }
}

//! Abel–Poisson kernels and wavelets: closed forms, Cartesian gradients,
//! norms, and the Sobolev-weighted zonal sums that couple two of them.

use std::f64::consts::PI;

use crate::geom::{dot, norm_sq, scale, sub, Vec3};
use crate::sh::legendre_polynomials;

const FOUR_PI: f64 = 4.0 * PI;

/// Kernel family of a ball-parametrized trial function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Abel–Poisson kernel, Fourier coefficients `r^n Y_{n,j}(ξ)`.
    Apk,
    /// Abel–Poisson wavelet, Fourier coefficients `(r^n − r^{2n}) Y_{n,j}(ξ)`.
    Apw,
}

impl KernelKind {
    /// `(coefficient, exponent p)` pairs with `a_n(r) = Σ c · (r^p)^n`.
    fn terms(self) -> &'static [(f64, i32)] {
        match self {
            KernelKind::Apk => &[(1.0, 1)],
            KernelKind::Apw => &[(1.0, 1), (-1.0, 2)],
        }
    }

    /// Radial symbol `a_n(r)`.
    pub fn radial(self, r: f64, n: usize) -> f64 {
        let rn = r.powi(n as i32);
        match self {
            KernelKind::Apk => rn,
            KernelKind::Apw => rn - rn * rn,
        }
    }

    /// `d a_n / dr`.
    pub fn radial_dr(self, r: f64, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        let rn1 = r.powi(n as i32 - 1);
        match self {
            KernelKind::Apk => nf * rn1,
            KernelKind::Apw => nf * rn1 - 2.0 * nf * rn1 * r.powi(n as i32),
        }
    }
}

/// `K(u, η)` for `|u| < 1` and unit `η`.
#[inline]
pub fn apk_value(u: &Vec3, eta: &Vec3) -> f64 {
    let u2 = norm_sq(u);
    let d = norm_sq(&sub(u, eta));
    (1.0 - u2) / (FOUR_PI * d * d.sqrt())
}

/// Cartesian gradient of `u ↦ K(u, η)`.
#[inline]
pub fn apk_grad(u: &Vec3, eta: &Vec3) -> Vec3 {
    let u2 = norm_sq(u);
    let diff = sub(u, eta);
    let d = norm_sq(&diff);
    let d32 = d * d.sqrt();
    let d52 = d32 * d;
    let a = -2.0 / d32;
    let b = -3.0 * (1.0 - u2) / d52;
    [
        (a * u[0] + b * diff[0]) / FOUR_PI,
        (a * u[1] + b * diff[1]) / FOUR_PI,
        (a * u[2] + b * diff[2]) / FOUR_PI,
    ]
}

/// Upward-continued kernel value at `ση`, i.e. `Σ_n σ^{-n-1} a_n(r) (2n+1)/(4π) P_n(ξ·η)`.
///
/// `sigma = 1` gives the surface value.
#[inline]
pub fn upward_value(kind: KernelKind, x: &Vec3, sigma: f64, eta: &Vec3) -> f64 {
    let u = scale(x, 1.0 / sigma);
    match kind {
        KernelKind::Apk => apk_value(&u, eta) / sigma,
        KernelKind::Apw => {
            let r = norm_sq(x).sqrt();
            let v = scale(&u, r);
            (apk_value(&u, eta) - apk_value(&v, eta)) / sigma
        }
    }
}

/// Cartesian gradient of [`upward_value`] with respect to the centre `x`.
pub fn upward_grad(kind: KernelKind, x: &Vec3, sigma: f64, eta: &Vec3) -> Vec3 {
    let u = scale(x, 1.0 / sigma);
    let s2 = sigma * sigma;
    let g = apk_grad(&u, eta);
    match kind {
        KernelKind::Apk => scale(&g, 1.0 / s2),
        KernelKind::Apw => {
            let r = norm_sq(x).sqrt();
            let v = scale(&u, r);
            let h = apk_grad(&v, eta);
            // Jacobian of x ↦ |x| x is |x| I + x xᵀ / |x|.
            let jh = if r > 0.0 {
                let c = dot(x, &h) / r;
                [r * h[0] + c * x[0], r * h[1] + c * x[1], r * h[2] + c * x[2]]
            } else {
                [0.0; 3]
            };
            [
                (g[0] - jh[0]) / s2,
                (g[1] - jh[1]) / s2,
                (g[2] - jh[2]) / s2,
            ]
        }
    }
}

/// `Σ_n (2n+1) u^n = (1+u)/(1−u)²`.
#[inline]
fn gen_f(u: f64) -> f64 {
    (1.0 + u) / ((1.0 - u) * (1.0 - u))
}

/// `gen_f(u) − 1 = u(3−u)/(1−u)²`, free of cancellation for small `u`.
#[inline]
fn gen_f_m1(u: f64) -> f64 {
    u * (3.0 - u) / ((1.0 - u) * (1.0 - u))
}

#[inline]
fn gen_f_prime(u: f64) -> f64 {
    (3.0 + u) / (1.0 - u).powi(3)
}

/// Squared `L²(Ω)` norm of the unnormalized kernel and its derivative in `r`.
pub fn l2_norm_sq(kind: KernelKind, r: f64) -> (f64, f64) {
    match kind {
        KernelKind::Apk => {
            let u = r * r;
            (gen_f(u) / FOUR_PI, gen_f_prime(u) * 2.0 * r / FOUR_PI)
        }
        KernelKind::Apw => {
            let (r2, r3, r4) = (r * r, r * r * r, r * r * r * r);
            let v = gen_f_m1(r2) - 2.0 * gen_f_m1(r3) + gen_f_m1(r4);
            let dv = gen_f_prime(r2) * 2.0 * r - 2.0 * gen_f_prime(r3) * 3.0 * r2
                + gen_f_prime(r4) * 4.0 * r3;
            (v / FOUR_PI, dv / FOUR_PI)
        }
    }
}

/// Sobolev weight `(n + ½)⁴`.
#[inline]
pub fn sobolev_weight(n: usize) -> f64 {
    let h = n as f64 + 0.5;
    let h2 = h * h;
    h2 * h2
}

/// Value and first derivatives of
/// `S(r1, r2, τ) = Σ_n (n+½)⁴ (2n+1)/(4π) a_n(r1) b_n(r2) P_n(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zonal {
    pub value: f64,
    pub d_r1: f64,
    pub d_tau: f64,
}

/// Products `r1·r2` up to this threshold are summed as a series; above it the
/// closed form in terms of the generating function is used.
const SERIES_LIMIT: f64 = 0.6;

/// Sobolev inner product of two kernels with radii `r1, r2` whose directions
/// satisfy `ξ1·ξ2 = tau` and `1 − ξ1·ξ2 = omt`.
pub fn sobolev_zonal(k1: KernelKind, r1: f64, k2: KernelKind, r2: f64, tau: f64, omt: f64) -> Zonal {
    if r1 * r2 <= SERIES_LIMIT {
        zonal_series(k1, r1, k2, r2, tau)
    } else {
        zonal_closed(k1, r1, k2, r2, tau, omt)
    }
}

/// `(τ, 1 − τ)` for two unit vectors, with `1 − τ` taken from the chord.
#[inline]
pub fn cos_pair(a: &Vec3, b: &Vec3) -> (f64, f64) {
    let omt = 0.5 * norm_sq(&sub(a, b));
    (1.0 - omt, omt)
}

fn zonal_series(k1: KernelKind, r1: f64, k2: KernelKind, r2: f64, tau: f64) -> Zonal {
    let q = r1 * r2;
    let nmax = series_terms(q);
    let p = legendre_polynomials(nmax, tau);
    let mut value = 0.0;
    let mut d_r1 = 0.0;
    let mut d_tau = 0.0;
    // P'_n = P'_{n-2} + (2n-1) P_{n-1}
    let (mut dp2, mut dp1) = (0.0, 0.0);
    for n in 0..=nmax {
        let dp = match n {
            0 => 0.0,
            1 => 1.0,
            _ => dp2 + (2 * n - 1) as f64 * p[n - 1],
        };
        let w = sobolev_weight(n) * (2 * n + 1) as f64 / FOUR_PI;
        let b = k2.radial(r2, n);
        value += w * k1.radial(r1, n) * b * p[n];
        d_r1 += w * k1.radial_dr(r1, n) * b * p[n];
        d_tau += w * k1.radial(r1, n) * b * dp;
        dp2 = dp1;
        dp1 = dp;
    }
    Zonal { value, d_r1, d_tau }
}

/// Degree beyond which `(n+1)^8 q^n` stays below `1e-20`; this envelope
/// dominates the value, the `r`-derivative and the `τ`-derivative terms.
fn series_terms(q: f64) -> usize {
    if q <= 0.0 {
        return 0;
    }
    let lq = q.ln();
    let peak = (8.0 / -lq).ceil() as usize;
    let mut n = peak.max(1);
    while n < 5000 {
        let log_env = 8.0 * ((n + 1) as f64).ln() + n as f64 * lq;
        if log_env < -46.0 {
            break;
        }
        n += 1;
    }
    n
}

/// Taylor coefficients (up to `h^ORDER`) of `f^alpha` for the quadratic
/// `f = f0 + f1 h + f2 h²`.
fn power_jet<const N: usize>(f0: f64, f1: f64, f2: f64, alpha: f64) -> [f64; N] {
    let f = [f0, f1, f2];
    let mut w = [0.0; N];
    w[0] = f0.powf(alpha);
    for k in 1..N {
        let mut acc = 0.0;
        for j in 1..=k.min(2) {
            acc += (alpha * j as f64 - (k - j) as f64) * f[j] * w[k - j];
        }
        w[k] = acc / (k as f64 * f0);
    }
    w
}

fn mul_quadratic<const N: usize>(a: [f64; 3], w: &[f64; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for k in 0..N {
        let mut acc = 0.0;
        for j in 0..=k.min(2) {
            acc += a[j] * w[k - j];
        }
        out[k] = acc;
    }
    out
}

/// `(θ + ½)⁴` expressed through `q^j d^j/dq^j`.
const EULER_WEIGHTS: [f64; 5] = [0.0625, 5.0, 14.5, 8.0, 1.0];

/// `Z(q, τ) = Σ_n (n+½)⁴ (2n+1)/(4π) q^n P_n(τ)` with its `q` and `τ` derivatives.
fn zonal_kernel(q: f64, omt: f64) -> (f64, f64, f64) {
    let oq = 1.0 - q;
    let d0 = oq * oq + 2.0 * q * omt;
    let d1 = -2.0 * oq + 2.0 * omt;
    // G(q) = (1 − q²) D^{-3/2} and G_τ(q) = 3q(1 − q²) D^{-5/2}.
    let dm32 = power_jet::<7>(d0, d1, 1.0, -1.5);
    let dm52 = power_jet::<6>(d0, d1, 1.0, -2.5);
    let g = mul_quadratic([1.0 - q * q, -2.0 * q, -1.0], &dm32);
    // 3q(1 − q²) expanded around q: 3q − 3q³
    let c0 = 3.0 * q - 3.0 * q * q * q;
    let c1 = 3.0 - 9.0 * q * q;
    let c2 = -9.0 * q;
    let c3 = -3.0;
    let mut gt = [0.0; 6];
    for k in 0..6 {
        let mut acc = c0 * dm52[k];
        if k >= 1 {
            acc += c1 * dm52[k - 1];
        }
        if k >= 2 {
            acc += c2 * dm52[k - 2];
        }
        if k >= 3 {
            acc += c3 * dm52[k - 3];
        }
        gt[k] = acc;
    }
    // derivatives from Taylor coefficients: G^{(j)} = j! g_j
    let fact = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0];
    let gd: Vec<f64> = (0..6).map(|j| g[j] * fact[j]).collect();
    let gtd: Vec<f64> = (0..5).map(|j| gt[j] * fact[j]).collect();
    let mut z = 0.0;
    let mut zq = 0.0;
    let mut zt = 0.0;
    let mut qj = 1.0;
    for (j, &e) in EULER_WEIGHTS.iter().enumerate() {
        z += e * qj * gd[j];
        zq += e * qj * gd[j + 1];
        if j >= 1 {
            zq += e * j as f64 * q.powi(j as i32 - 1) * gd[j];
        }
        zt += e * qj * gtd[j];
        qj *= q;
    }
    (z / FOUR_PI, zq / FOUR_PI, zt / FOUR_PI)
}

fn zonal_closed(k1: KernelKind, r1: f64, k2: KernelKind, r2: f64, _tau: f64, omt: f64) -> Zonal {
    let mut value = 0.0;
    let mut d_r1 = 0.0;
    let mut d_tau = 0.0;
    for &(c1, p1) in k1.terms() {
        let rho1 = r1.powi(p1);
        let drho1 = p1 as f64 * r1.powi(p1 - 1);
        for &(c2, p2) in k2.terms() {
            let rho2 = r2.powi(p2);
            let (z, zq, zt) = zonal_kernel(rho1 * rho2, omt);
            let c = c1 * c2;
            value += c * z;
            d_r1 += c * zq * drho1 * rho2;
            d_tau += c * zt;
        }
    }
    Zonal { value, d_r1, d_tau }
}

/// Plain truncated version of [`sobolev_zonal`] (value only), with an upper
/// bound on the neglected tail.
pub fn sobolev_zonal_truncated(
    k1: KernelKind,
    r1: f64,
    k2: KernelKind,
    r2: f64,
    tau: f64,
    n_trunc: usize,
) -> (f64, f64) {
    let p = legendre_polynomials(n_trunc, tau);
    let mut value = 0.0;
    for n in 0..=n_trunc {
        let w = sobolev_weight(n) * (2 * n + 1) as f64 / FOUR_PI;
        value += w * k1.radial(r1, n) * k2.radial(r2, n) * p[n];
    }
    (value, sobolev_tail_bound(r1 * r2, n_trunc))
}

/// Bound on `Σ_{n > N} (n+½)⁴ (2n+1)/(4π) q^n`, valid once the term ratio is below one.
pub fn sobolev_tail_bound(q: f64, n_trunc: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let n = n_trunc + 1;
    let term = |n: usize| sobolev_weight(n) * (2 * n + 1) as f64 / FOUR_PI * q.powi(n as i32);
    let ratio = q * ((n as f64 + 1.5) / (n as f64 + 0.5)).powi(5);
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        term(n) / (1.0 - ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::unit_vector;

    fn series_value(kind: KernelKind, r: f64, xi: &Vec3, sigma: f64, eta: &Vec3) -> f64 {
        let t = dot(xi, eta);
        let p = legendre_polynomials(600, t);
        (0..=600)
            .map(|n| {
                sigma.powi(-(n as i32) - 1) * kind.radial(r, n) * (2 * n + 1) as f64 / FOUR_PI * p[n]
            })
            .sum()
    }

    #[test]
    fn apk_special_values() {
        let eta = unit_vector(0.4, 0.2);
        assert!((apk_value(&[0.0; 3], &eta) - 1.0 / FOUR_PI).abs() < 1e-16);
        let r: f64 = 0.6;
        let x = scale(&eta, r);
        let expect = (1.0 + r) / (FOUR_PI * (1.0 - r).powi(2));
        assert!((apk_value(&x, &eta) - expect).abs() < 1e-13);
        assert_eq!(upward_value(KernelKind::Apw, &[0.0; 3], 1.0, &eta), 0.0);
    }

    #[test]
    fn closed_forms_match_series() {
        let xi = unit_vector(1.1, 0.3);
        let eta = unit_vector(2.0, -0.1);
        for kind in [KernelKind::Apk, KernelKind::Apw] {
            for &(r, sigma) in &[(0.5, 1.0), (0.9, 1.2), (0.95, 1.08)] {
                let x = scale(&xi, r);
                let a = upward_value(kind, &x, sigma, &eta);
                let b = series_value(kind, r, &xi, sigma, &eta);
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{kind:?} {r} {a} {b}");
            }
        }
    }

    #[test]
    fn norms_match_series() {
        for kind in [KernelKind::Apk, KernelKind::Apw] {
            for &r in &[0.0, 0.3, 0.94] {
                let s: f64 = (0..2000)
                    .map(|n| (2 * n + 1) as f64 * kind.radial(r, n).powi(2) / FOUR_PI)
                    .sum();
                let (v, dv) = l2_norm_sq(kind, r);
                assert!((v - s).abs() < 1e-10 * s.max(1.0), "{kind:?} {r}");
                if r > 0.0 {
                    let h = 1e-6;
                    let fd = (l2_norm_sq(kind, r + h).0 - l2_norm_sq(kind, r - h).0) / (2.0 * h);
                    assert!((dv - fd).abs() < 1e-6 * fd.abs());
                }
            }
        }
    }

    #[test]
    fn zonal_routes_agree() {
        let kinds = [KernelKind::Apk, KernelKind::Apw];
        for &k1 in &kinds {
            for &k2 in &kinds {
                for &(r1, r2, tau) in &[(0.7, 0.8, 0.3), (0.8, 0.8, 1.0), (0.75, 0.85, -0.6)] {
                    let omt = 1.0 - tau;
                    let a = zonal_closed(k1, r1, k2, r2, tau, omt);
                    let b = zonal_series(k1, r1, k2, r2, tau);
                    let scale = b.value.abs().max(1.0);
                    assert!((a.value - b.value).abs() < 1e-10 * scale, "{a:?} {b:?}");
                    assert!((a.d_r1 - b.d_r1).abs() < 1e-9 * b.d_r1.abs().max(1.0));
                    assert!((a.d_tau - b.d_tau).abs() < 1e-9 * b.d_tau.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zonal_brute_force_short() {
        let (v, tail) = sobolev_zonal_truncated(KernelKind::Apk, 0.5, KernelKind::Apk, 0.5, 1.0, 60);
        let z = sobolev_zonal(KernelKind::Apk, 0.5, KernelKind::Apk, 0.5, 1.0, 0.0);
        assert!((v - z.value).abs() < 1e-10);
        assert!(tail < 1e-20);
    }

    #[test]
    fn closed_form_at_high_radius() {
        // r = 0.97: brute force needs thousands of terms
        let r = 0.97;
        let z = sobolev_zonal(KernelKind::Apk, r, KernelKind::Apk, r, 1.0, 0.0);
        let (v, tail) = sobolev_zonal_truncated(KernelKind::Apk, r, KernelKind::Apk, r, 1.0, 3000);
        assert!(tail < 1e-12 * v);
        assert!((z.value - v).abs() < 1e-10 * v);
    }

    #[test]
    fn gradients_match_differences() {
        let eta = unit_vector(0.3, 0.5);
        let x = scale(&unit_vector(0.5, 0.4), 0.8);
        for kind in [KernelKind::Apk, KernelKind::Apw] {
            let g = upward_grad(kind, &x, 1.1, &eta);
            for k in 0..3 {
                let h = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (upward_value(kind, &xp, 1.1, &eta) - upward_value(kind, &xm, 1.1, &eta)) / (2.0 * h);
                assert!((g[k] - fd).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}

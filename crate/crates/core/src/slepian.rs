//! Slepian functions concentrated on spherical caps.
//!
//! For a polar cap `{t ≥ c}` the band-limited concentration problem splits by
//! order. Each order block is solved through the commuting tridiagonal
//! (Grünbaum) matrix and then checked against the concentration matrix built
//! by quadrature. Cap centres away from the north pole are reached by rotating
//! the coefficient tables with real Wigner matrices.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::geom::{euler_rotation, CapRegion};
use crate::sh::{coeff_count, legendre_table, ShIndex, SpectralCoeffs};

/// Tolerance for the joint-diagonalization check.
pub const VALIDATION_TOL: f64 = 1e-8;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn tri(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

fn concentration_with_nodes(band_limit: usize, c: f64, m: usize, nodes: usize) -> DMatrix<f64> {
    let size = band_limit + 1 - m;
    let mut d = DMatrix::zeros(size, size);
    if c >= 1.0 {
        return d;
    }
    let (x, w) = gauss_legendre(nodes);
    let half = 0.5 * (1.0 - c);
    for (xi, wi) in x.iter().zip(&w) {
        let t = c + half * (xi + 1.0);
        let leg = legendre_table(band_limit, t);
        let wt = 2.0 * PI * half * wi;
        for a in 0..size {
            let pa = leg[tri(m + a, m)];
            for b in a..size {
                d[(a, b)] += wt * pa * leg[tri(m + b, m)];
            }
        }
    }
    for a in 0..size {
        for b in 0..a {
            d[(a, b)] = d[(b, a)];
        }
    }
    d
}

/// Concentration matrix of order `m` for the polar cap `{t ≥ c}`:
/// `D_{l,l'} = 2π ∫_c^1 P̄_{l,m} P̄_{l',m} dt` over degrees `m ≤ l, l' ≤ L`.
///
/// The integrand is a polynomial of degree `2L`; the rule is doubled until two
/// successive results agree.
pub fn concentration_matrix(band_limit: usize, c: f64, m: usize) -> Result<DMatrix<f64>> {
    if m > band_limit {
        return Err(invalid(format!("order {m} exceeds band limit {band_limit}")));
    }
    if !(-1.0..=1.0).contains(&c) {
        return Err(invalid(format!("cap parameter {c} outside [-1, 1]")));
    }
    let mut nodes = band_limit + 2;
    let mut prev = concentration_with_nodes(band_limit, c, m, nodes);
    for _ in 0..6 {
        nodes *= 2;
        let next = concentration_with_nodes(band_limit, c, m, nodes);
        let diff = (&next - &prev).abs().max();
        if diff <= 1e-14 {
            return Ok(next);
        }
        prev = next;
    }
    let again = concentration_with_nodes(band_limit, c, m, nodes * 2);
    Err(Error::QuadratureNonConvergence {
        achieved: (&again - &prev).abs().max(),
    })
}

/// Commuting tridiagonal matrix of order `m` for the polar cap `{t ≥ c}`.
pub fn commuting_matrix(band_limit: usize, c: f64, m: usize) -> DMatrix<f64> {
    let size = band_limit + 1 - m;
    let big = (band_limit * (band_limit + 2)) as f64;
    let mf = m as f64;
    let mut t = DMatrix::zeros(size, size);
    for a in 0..size {
        let l = (m + a) as f64;
        t[(a, a)] = -l * (l + 1.0) * c;
        if a + 1 < size {
            let off = (l * (l + 2.0) - big)
                * (((l + 1.0).powi(2) - mf * mf) / ((2.0 * l + 1.0) * (2.0 * l + 3.0))).sqrt();
            t[(a, a + 1)] = off;
            t[(a + 1, a)] = off;
        }
    }
    t
}

/// The `(L+1)²` Slepian functions of a polar cap, sorted by concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCapBasis {
    band_limit: usize,
    c: f64,
    functions: Vec<SpectralCoeffs>,
    concentrations: Vec<f64>,
}

impl PolarCapBasis {
    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn functions(&self) -> &[SpectralCoeffs] {
        &self.functions
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    /// Member `k` (1-based).
    pub fn member(&self, k: usize) -> Result<&SpectralCoeffs> {
        if k == 0 || k > self.functions.len() {
            return Err(invalid(format!(
                "Slepian index {k} outside 1..={}",
                self.functions.len()
            )));
        }
        Ok(&self.functions[k - 1])
    }
}

struct Candidate {
    mu: f64,
    m: usize,
    j: i64,
    coeffs: SpectralCoeffs,
}

/// Builds the polar-cap basis for band limit `L` and cap `{t ≥ c}`.
pub fn build_polar_cap(band_limit: usize, c: f64) -> Result<PolarCapBasis> {
    if !(-1.0..=1.0).contains(&c) {
        return Err(invalid(format!("cap parameter {c} outside [-1, 1]")));
    }
    let mut cands = Vec::with_capacity(coeff_count(band_limit));
    for m in 0..=band_limit {
        let d = concentration_matrix(band_limit, c, m)?;
        let t = commuting_matrix(band_limit, c, m);
        let size = t.nrows();
        let eig = SymmetricEigen::try_new(t, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Eigen(format!("order {m} did not converge")))?;
        let v = eig.eigenvectors;
        let dv = &d * &v;
        let gram = v.transpose() * &dv;
        for a in 0..size {
            for b in 0..size {
                if a != b && gram[(a, b)].abs() > VALIDATION_TOL {
                    return Err(Error::SlepianValidation(format!(
                        "order {m}: off-diagonal concentration {:e}",
                        gram[(a, b)]
                    )));
                }
            }
        }
        for a in 0..size {
            let mut col: Vec<f64> = v.column(a).iter().copied().collect();
            let nrm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            col.iter_mut().for_each(|x| *x /= nrm);
            if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    col.iter_mut().for_each(|x| *x = -*x);
                }
            }
            let mu = gram[(a, a)] / (nrm * nrm);
            let orders: &[i64] = if m == 0 { &[0] } else { &[-(m as i64), m as i64] };
            for &j in orders {
                let mut g = SpectralCoeffs::zeros(band_limit);
                for (i, val) in col.iter().enumerate() {
                    let idx = ShIndex { n: m + i, j };
                    g.table_mut()[idx.linear()] = *val;
                }
                cands.push(Candidate {
                    mu,
                    m,
                    j,
                    coeffs: g,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.mu.total_cmp(&a.mu)
            .then(a.m.cmp(&b.m))
            .then(a.j.cmp(&b.j))
    });
    Ok(PolarCapBasis {
        band_limit,
        c,
        concentrations: cands.iter().map(|c| c.mu).collect(),
        functions: cands.into_iter().map(|c| c.coeffs).collect(),
    })
}

type CacheKey = (usize, u64);

fn cache() -> &'static RwLock<HashMap<CacheKey, Arc<PolarCapBasis>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<PolarCapBasis>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// [`build_polar_cap`] through a process-wide cache.
pub fn polar_cap_cached(band_limit: usize, c: f64) -> Result<Arc<PolarCapBasis>> {
    let key = (band_limit, c.to_bits());
    if let Some(b) = cache().read().expect("Slepian cache poisoned").get(&key) {
        return Ok(Arc::clone(b));
    }
    let built = Arc::new(build_polar_cap(band_limit, c)?);
    let mut w = cache().write().expect("Slepian cache poisoned");
    Ok(Arc::clone(w.entry(key).or_insert(built)))
}

/// Real Wigner rotation blocks, one `(2l+1)×(2l+1)` matrix per degree,
/// indexed by our order `j` (row/column `l + j`).
#[derive(Debug, Clone)]
pub struct RotationBlocks {
    blocks: Vec<DMatrix<f64>>,
}

impl RotationBlocks {
    /// Blocks for `η ↦ g(Aᵀη)` with `A = R_z(α) R_y(β) R_z(γ)`.
    pub fn new(band_limit: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        let a = euler_rotation(alpha, beta, gamma);
        let std_blocks = ivanic_ruedenberg(band_limit, &a);
        // Standard real order m corresponds to our j = −m.
        let blocks = std_blocks
            .into_iter()
            .enumerate()
            .map(|(l, b)| {
                let size = 2 * l + 1;
                DMatrix::from_fn(size, size, |r, c| b[(2 * l - r, 2 * l - c)])
            })
            .collect();
        Self { blocks }
    }

    pub fn apply(&self, g: &SpectralCoeffs) -> SpectralCoeffs {
        let lmax = g.band_limit();
        let mut out = SpectralCoeffs::zeros(lmax);
        for l in 0..=lmax {
            let base = l * l;
            let size = 2 * l + 1;
            let block = &self.blocks[l];
            for r in 0..size {
                let mut acc = 0.0;
                for c in 0..size {
                    acc += block[(r, c)] * g.table()[base + c];
                }
                out.table_mut()[base + r] = acc;
            }
        }
        out
    }
}

/// Rotation matrices for real spherical harmonics in the standard ordering
/// (`m = −1, 0, 1` ~ `y, z, x`), built by the Ivanic–Ruedenberg recursion.
fn ivanic_ruedenberg(lmax: usize, rot: &[[f64; 3]; 3]) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(lmax + 1);
    out.push(DMatrix::from_element(1, 1, 1.0));
    if lmax == 0 {
        return out;
    }
    // (y, z, x) ordering of the Cartesian matrix
    let perm = [1usize, 2, 0];
    let r1 = DMatrix::from_fn(3, 3, |i, j| rot[perm[i]][perm[j]]);
    out.push(r1.clone());
    let get1 = |i: i64, j: i64| r1[((i + 1) as usize, (j + 1) as usize)];
    for l in 2..=lmax as i64 {
        let prev = out[(l - 1) as usize].clone();
        let lp = l - 1;
        let getp = |a: i64, b: i64| prev[((a + lp) as usize, (b + lp) as usize)];
        let p = |i: i64, a: i64, b: i64| -> f64 {
            if b == l {
                get1(i, 1) * getp(a, l - 1) - get1(i, -1) * getp(a, -l + 1)
            } else if b == -l {
                get1(i, 1) * getp(a, -l + 1) + get1(i, -1) * getp(a, l - 1)
            } else {
                get1(i, 0) * getp(a, b)
            }
        };
        let size = (2 * l + 1) as usize;
        let mut cur = DMatrix::zeros(size, size);
        for m in -l..=l {
            for n in -l..=l {
                let d = if m == 0 { 1.0 } else { 0.0 };
                let denom = if n.abs() == l {
                    ((2 * l) * (2 * l - 1)) as f64
                } else {
                    ((l + n) * (l - n)) as f64
                };
                let am = m.abs();
                let u = (((l + m) * (l - m)) as f64 / denom).sqrt();
                let v = 0.5 * ((1.0 + d) * ((l + am - 1) * (l + am)) as f64 / denom).sqrt() * (1.0 - 2.0 * d);
                let w = -0.5 * (((l - am - 1) * (l - am)) as f64 / denom).max(0.0).sqrt() * (1.0 - d);
                let mut val = 0.0;
                if u != 0.0 {
                    val += u * p(0, m, n);
                }
                if v != 0.0 {
                    let vv = if m == 0 {
                        p(1, 1, n) + p(-1, -1, n)
                    } else if m > 0 {
                        let d1: f64 = if m == 1 { 1.0 } else { 0.0 };
                        p(1, m - 1, n) * (1.0 + d1).sqrt() - p(-1, -m + 1, n) * (1.0 - d1)
                    } else {
                        let d1: f64 = if m == -1 { 1.0 } else { 0.0 };
                        p(1, m + 1, n) * (1.0 - d1) + p(-1, -m - 1, n) * (1.0 + d1).sqrt()
                    };
                    val += v * vv;
                }
                if w != 0.0 {
                    let ww = if m > 0 {
                        p(1, m + 1, n) + p(-1, -m - 1, n)
                    } else {
                        p(1, m - 1, n) - p(-1, -m + 1, n)
                    };
                    val += w * ww;
                }
                cur[((m + l) as usize, (n + l) as usize)] = val;
            }
        }
        out.push(cur);
    }
    out
}

/// Rotates a coefficient table so that the result evaluates to `g(Aᵀη)`.
pub fn rotate_coeffs(g: &SpectralCoeffs, alpha: f64, beta: f64, gamma: f64) -> SpectralCoeffs {
    RotationBlocks::new(g.band_limit(), alpha, beta, gamma).apply(g)
}

/// Coefficients of member `k` (1-based) of the Slepian basis for `region`.
pub fn slepian_coeffs(region: &CapRegion, k: usize, band_limit: usize) -> Result<SpectralCoeffs> {
    let basis = polar_cap_cached(band_limit, region.c)?;
    let member = basis.member(k)?;
    Ok(rotate_coeffs(member, region.alpha, region.beta, region.gamma))
}

/// All `(L+1)²` rotated members for a region, in basis order, without caching
/// the polar basis (used by continuous searches over `c`).
pub fn rotated_basis(region: &CapRegion, band_limit: usize) -> Result<Vec<SpectralCoeffs>> {
    let basis = build_polar_cap(band_limit, region.c)?;
    let rot = RotationBlocks::new(band_limit, region.alpha, region.beta, region.gamma);
    Ok(basis.functions().iter().map(|g| rot.apply(g)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{unit_vector, SurfacePoint};

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn whole_and_empty_caps() {
        let d = concentration_matrix(4, -1.0, 1).unwrap();
        assert!((d - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-13);
        let z = concentration_matrix(4, 1.0, 0).unwrap();
        assert_eq!(z.abs().max(), 0.0);
        let b = build_polar_cap(3, -1.0).unwrap();
        assert!(b.concentrations().iter().all(|m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn shannon_number() {
        let c = (PI / 4.0).cos();
        let b = build_polar_cap(5, c).unwrap();
        let s: f64 = b.concentrations().iter().sum();
        assert!((s - 36.0 * (1.0 - c) / 2.0).abs() < 1e-6);
        for w in b.concentrations().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn orthonormal_members() {
        let b = build_polar_cap(4, 0.3).unwrap();
        let f = b.functions();
        for i in 0..f.len() {
            for j in 0..f.len() {
                let d: f64 = f[i].table().iter().zip(f[j].table()).map(|(a, b)| a * b).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rotation_pointwise_identity() {
        let b = build_polar_cap(4, 0.2).unwrap();
        let g = b.member(3).unwrap();
        let (al, be, ga) = (0.7, 1.2, 2.5);
        let rg = rotate_coeffs(g, al, be, ga);
        let a = euler_rotation(al, be, ga);
        for &(phi, t) in &[(0.1, 0.2), (2.0, -0.7), (4.0, 0.9)] {
            let eta = unit_vector(phi, t);
            let at = [
                a[0][0] * eta[0] + a[1][0] * eta[1] + a[2][0] * eta[2],
                a[0][1] * eta[0] + a[1][1] * eta[1] + a[2][1] * eta[2],
                a[0][2] * eta[0] + a[1][2] * eta[1] + a[2][2] * eta[2],
            ];
            let p = SurfacePoint::from_cartesian(at).unwrap();
            let lhs = rg.eval_at(phi, t);
            let rhs = g.eval_at(p.phi(), p.t());
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} {rhs}");
        }
        assert!((rg.norm() - g.norm()).abs() < 1e-12);
    }

    #[test]
    fn identity_rotation() {
        let b = build_polar_cap(3, 0.5).unwrap();
        let g = b.member(5).unwrap();
        let r = rotate_coeffs(g, 0.0, 0.0, 0.0);
        for (a, b) in r.table().iter().zip(g.table()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cache_is_transparent() {
        let a = polar_cap_cached(3, 0.25).unwrap();
        let b = build_polar_cap(3, 0.25).unwrap();
        assert_eq!(*a, b);
    }
}

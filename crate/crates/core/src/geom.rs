//! Points on the unit sphere and in the open unit ball, cap regions, and the
//! Reuter / Driscoll–Healy grid families.
//!
//! Every point is stored through its longitude `phi` in `[0, 2π)` and its
//! latitude `t = cos θ` in `[-1, 1]`; the Cartesian vector is derived from
//! those two numbers by [`unit_vector`] and never set independently.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn norm_sq(a: &Vec3) -> f64 {
    dot(a, a)
}

/// Unit vector for longitude `phi` and latitude `t = cos θ`.
#[inline]
pub fn unit_vector(phi: f64, t: f64) -> Vec3 {
    let s = (1.0 - t * t).max(0.0).sqrt();
    let (sp, cp) = phi.sin_cos();
    [s * cp, s * sp, t]
}

/// Partial derivatives of [`unit_vector`] with respect to `phi` and `t`.
///
/// The `t` derivative is singular at the poles; callers keep `|t| < 1`.
pub fn unit_vector_partials(phi: f64, t: f64) -> (Vec3, Vec3) {
    let s = (1.0 - t * t).max(0.0).sqrt();
    let (sp, cp) = phi.sin_cos();
    let d_phi = [-s * sp, s * cp, 0.0];
    let d_t = if s > 0.0 {
        [-t / s * cp, -t / s * sp, 1.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    (d_phi, d_t)
}

fn wrap_longitude(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    phi: f64,
    t: f64,
    cart: Vec3,
}

impl SurfacePoint {
    /// Builds a point, wrapping `phi` into `[0, 2π)`. `t` must lie in `[-1, 1]`.
    pub fn new(phi: f64, t: f64) -> Result<Self> {
        if !phi.is_finite() || !t.is_finite() {
            return Err(invalid("surface point coordinates must be finite"));
        }
        if !(-1.0..=1.0).contains(&t) {
            return Err(invalid(format!("latitude t = {t} outside [-1, 1]")));
        }
        let phi = wrap_longitude(phi);
        Ok(Self {
            phi,
            t,
            cart: unit_vector(phi, t),
        })
    }

    pub fn from_cartesian(v: Vec3) -> Result<Self> {
        let n = norm_sq(&v).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        let t = (v[2] / n).clamp(-1.0, 1.0);
        let phi = v[1].atan2(v[0]);
        Self::new(phi, t)
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn cart(&self) -> Vec3 {
        self.cart
    }
}

/// A point in the open unit ball, parametrized by radius and direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallPoint {
    r: f64,
    dir: SurfacePoint,
    cart: Vec3,
}

impl BallPoint {
    pub fn new(r: f64, phi: f64, t: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return Err(invalid(format!("ball radius r = {r} outside [0, 1)")));
        }
        let dir = SurfacePoint::new(phi, t)?;
        Ok(Self {
            r,
            dir,
            cart: scale(&dir.cart, r),
        })
    }

    pub fn from_cartesian(x: Vec3) -> Result<Self> {
        let r = norm_sq(&x).sqrt();
        if r == 0.0 {
            return Self::new(0.0, 0.0, 1.0);
        }
        let dir = SurfacePoint::from_cartesian(x)?;
        Self::new(r, dir.phi, dir.t)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn phi(&self) -> f64 {
        self.dir.phi
    }

    pub fn t(&self) -> f64 {
        self.dir.t
    }

    /// Unit direction `x / |x|` (the stored direction when `r = 0`).
    pub fn direction(&self) -> SurfacePoint {
        self.dir
    }

    pub fn cart(&self) -> Vec3 {
        self.cart
    }
}

/// Spherical cap described by its size `c = cos θ` and the Euler angles of
/// the rotation carrying the north pole to the cap centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapRegion {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CapRegion {
    pub fn new(c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let ok = (-1.0..=1.0).contains(&c)
            && (0.0..=TAU).contains(&alpha)
            && (0.0..=PI).contains(&beta)
            && (0.0..=TAU).contains(&gamma);
        if !ok {
            return Err(invalid(format!(
                "cap region ({c}, {alpha}, {beta}, {gamma}) outside [-1,1]x[0,2π]x[0,π]x[0,2π]"
            )));
        }
        Ok(Self {
            c,
            alpha,
            beta,
            gamma,
        })
    }

    /// Centre of the cap, `A(α, β, γ) e₃`.
    pub fn centre(&self) -> Vec3 {
        let r = euler_rotation(self.alpha, self.beta, self.gamma);
        [r[0][2], r[1][2], r[2][2]]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.c, self.alpha, self.beta, self.gamma]
    }
}

/// Rotation matrix `R_z(α) R_y(β) R_z(γ)`.
pub fn euler_rotation(alpha: f64, beta: f64, gamma: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    [
        [ca * cb * cg - sa * sg, -ca * cb * sg - sa * cg, ca * sb],
        [sa * cb * cg + ca * sg, -sa * cb * sg + ca * cg, sa * sb],
        [-sb * cg, sb * sg, cb],
    ]
}

/// Squared Euclidean distance between two points of the sphere.
pub fn chordal_distance_sq(a: &SurfacePoint, b: &SurfacePoint) -> f64 {
    norm_sq(&sub(&a.cart, &b.cart))
}

/// Squared Euclidean distance between two parameter vectors of equal length.
pub fn parameter_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Reuter(u32),
    DriscollHealy(u32),
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<SurfacePoint>,
    kind: GridKind,
}

impl Grid {
    /// Wraps an explicit point list; rejects empty lists and duplicate points.
    pub fn custom(points: Vec<SurfacePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("grid must contain at least one point"));
        }
        let mut keys: Vec<(u64, u64)> = points
            .iter()
            .map(|p| {
                let phi = if p.t.abs() == 1.0 { 0.0 } else { p.phi };
                (phi.to_bits(), p.t.to_bits())
            })
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("grid points must be pairwise distinct"));
        }
        Ok(Self {
            points,
            kind: GridKind::Custom,
        })
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phi", "t"])?;
        for p in &self.points {
            w.write_record([p.phi.to_string(), p.t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "phi" || &headers[1] != "t" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `phi,t`".into(),
            });
        }
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: "missing column".into(),
                    })?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse {
                        line,
                        msg: e.to_string(),
                    })
            };
            let p = SurfacePoint::new(parse(0)?, parse(1)?).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            points.push(p);
        }
        Self::custom(points)
    }
}

/// Reuter grid with control parameter `gamma_ctl`.
///
/// Rings sit at `θ_i = iπ/γ`; ring `i` carries
/// `⌊2π / arccos((cos Δθ − cos²θ_i) / sin²θ_i)⌋` equally spaced longitudes
/// offset by half a spacing, plus one point at each pole.
pub fn reuter_grid(gamma_ctl: u32) -> Result<Grid> {
    if gamma_ctl < 2 {
        return Err(invalid(format!("Reuter control parameter must be >= 2, got {gamma_ctl}")));
    }
    let dtheta = PI / gamma_ctl as f64;
    let mut points = Vec::new();
    points.push(SurfacePoint::new(0.0, 1.0)?);
    for i in 1..gamma_ctl {
        let theta = i as f64 * dtheta;
        let (st, ct) = theta.sin_cos();
        let arg = ((dtheta.cos() - ct * ct) / (st * st)).clamp(-1.0, 1.0);
        let count = (TAU / arg.acos()).floor() as usize;
        for j in 1..=count {
            let phi = (j as f64 - 0.5) * TAU / count as f64;
            points.push(SurfacePoint::new(phi, ct)?);
        }
    }
    points.push(SurfacePoint::new(0.0, -1.0)?);
    Ok(Grid {
        points,
        kind: GridKind::Reuter(gamma_ctl),
    })
}

/// Equi-angular product grid with `B + 1` latitude rings at
/// `θ_i = (i + ½)π / (B + 1)` and `2B + 1` longitudes `φ_k = 2πk / (2B + 1)`,
/// i.e. `(B + 1)(2B + 1)` distinct points.
pub fn driscoll_healy_grid(bandwidth: u32) -> Result<Grid> {
    if bandwidth < 1 {
        return Err(invalid("Driscoll–Healy bandwidth must be >= 1"));
    }
    let rings = bandwidth as usize + 1;
    let lons = 2 * bandwidth as usize + 1;
    let mut points = Vec::with_capacity(rings * lons);
    for i in 0..rings {
        let theta = (i as f64 + 0.5) * PI / rings as f64;
        let t = theta.cos();
        for k in 0..lons {
            points.push(SurfacePoint::new(TAU * k as f64 / lons as f64, t)?);
        }
    }
    Ok(Grid {
        points,
        kind: GridKind::DriscollHealy(bandwidth),
    })
}

/// Number of points of [`driscoll_healy_grid`] for a bandwidth.
pub fn driscoll_healy_count(bandwidth: u32) -> usize {
    (bandwidth as usize + 1) * (2 * bandwidth as usize + 1)
}

/// Smallest Reuter control parameter whose grid has exactly `count` points.
pub fn reuter_gamma_for_count(count: usize) -> Option<u32> {
    (2..=2000u32).find(|&g| reuter_grid(g).map(|gr| gr.len() == count).unwrap_or(false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_reuter_grid() {
        let g = reuter_grid(2).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.points()[0].t(), 1.0);
        assert_eq!(g.points()[5].t(), -1.0);
        for p in &g.points()[1..5] {
            assert!(p.t().abs() < 1e-15);
        }
        assert!(reuter_grid(1).is_err());
    }

    #[test]
    fn reuter_counts_used_by_experiments() {
        assert_eq!(reuter_grid(10).unwrap().len(), 123);
        assert_eq!(reuter_grid(60).unwrap().len(), 4551);
        assert_eq!(reuter_grid(100).unwrap().len(), 12684);
    }

    #[test]
    fn reuter_counts_monotone() {
        let mut prev = 0;
        for g in 2..80 {
            let n = reuter_grid(g).unwrap().len();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn reuter_ordering_north_to_south() {
        let g = reuter_grid(12).unwrap();
        for w in g.points().windows(2) {
            assert!(w[0].t() > w[1].t() || (w[0].t() == w[1].t() && w[0].phi() < w[1].phi()));
        }
    }

    #[test]
    fn driscoll_healy_counts() {
        assert_eq!(driscoll_healy_grid(1).unwrap().len(), 6);
        assert_eq!(driscoll_healy_count(180), 65341);
        assert!(driscoll_healy_grid(0).is_err());
        let g = driscoll_healy_grid(7).unwrap();
        assert_eq!(g.len(), driscoll_healy_count(7));
        for p in g.points() {
            assert!((norm_sq(&p.cart()).sqrt() - 1.0).abs() < 1e-12);
        }
        // distinctness is enforced by `custom`
        Grid::custom(g.points().to_vec()).unwrap();
    }

    #[test]
    fn grids_are_deterministic() {
        let a = reuter_grid(17).unwrap();
        let b = reuter_grid(17).unwrap();
        for (p, q) in a.points().iter().zip(b.points()) {
            assert_eq!(p.phi().to_bits(), q.phi().to_bits());
            assert_eq!(p.t().to_bits(), q.t().to_bits());
        }
    }

    #[test]
    fn distances() {
        let a = SurfacePoint::new(0.3, 0.2).unwrap();
        assert_eq!(chordal_distance_sq(&a, &a), 0.0);
        let b = SurfacePoint::from_cartesian(scale(&a.cart(), -1.0)).unwrap();
        assert!((chordal_distance_sq(&a, &b) - 4.0).abs() < 1e-12);
        let c = SurfacePoint::new(4.0, -0.7).unwrap();
        let (x, y) = (a.cart(), c.cart());
        let brute = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
        assert!((chordal_distance_sq(&a, &c) - brute).abs() < 1e-15);
    }

    #[test]
    fn point_validation() {
        assert!(SurfacePoint::new(0.0, 1.5).is_err());
        assert!(BallPoint::new(1.0, 0.0, 0.0).is_err());
        assert!(BallPoint::new(-0.1, 0.0, 0.0).is_err());
        let p = SurfacePoint::new(TAU, 0.0).unwrap();
        assert_eq!(p.phi(), 0.0);
        let x = BallPoint::new(0.5, 1.0, 0.3).unwrap();
        assert!((norm_sq(&x.cart()).sqrt() - 0.5).abs() < 1e-15);
        assert!(CapRegion::new(1.1, 0.0, 0.0, 0.0).is_err());
        assert!(CapRegion::new(0.5, 0.0, 4.0, 0.0).is_err());
    }

    #[test]
    fn euler_centre() {
        let cap = CapRegion::new(0.5, 1.0, 0.7, 2.0).unwrap();
        let c = cap.centre();
        let expect = unit_vector(1.0, 0.7f64.cos());
        for k in 0..3 {
            assert!((c[k] - expect[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = reuter_grid(5).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"phi,t\n"));
        let back = Grid::read_csv(&buf[..]).unwrap();
        assert_eq!(back.points(), g.points());
        assert_eq!(back.kind(), GridKind::Custom);
    }
}

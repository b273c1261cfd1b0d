//! The Cauchy-Riemann operator on maps of the unit disc into C^n, the area
//! inequalities for such maps, the boundary integral for a constant ∂̄, and
//! the explicit family `f_s(z) = s z̄ + (1 - s^2)/(s z + 1)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{HoferError, Result};
use crate::quadrature::gauss_legendre_on;
use crate::report::{Curve, Report};

pub const DEFAULT_NR: usize = 128;
pub const DEFAULT_NTHETA: usize = 256;
pub const FD_STEP: f64 = 1e-5;
const POLE_TOL: f64 = 1e-12;

pub type MapFn = Arc<dyn Fn(Complex64) -> Vec<Complex64> + Send + Sync>;
/// Wirtinger derivatives `(∂f, ∂̄f)`.
pub type JetFn = Arc<dyn Fn(Complex64) -> (Vec<Complex64>, Vec<Complex64>) + Send + Sync>;

/// Polar grid: Gauss-Legendre in the radius, uniform in the angle.
#[derive(Clone, Debug)]
pub struct PolarGrid {
    pub nr: usize,
    pub ntheta: usize,
    pub radii: Vec<f64>,
    pub radial_weights: Vec<f64>,
}

impl PolarGrid {
    pub fn new(nr: usize, ntheta: usize) -> Result<Self> {
        if nr < 2 || ntheta < 4 {
            return Err(HoferError::InvalidInput("polar grid needs nr >= 2 and ntheta >= 4".into()));
        }
        let (radii, radial_weights) = gauss_legendre_on(nr, 0.0, 1.0);
        Ok(Self { nr, ntheta, radii, radial_weights })
    }

    /// Interior nodes with weights `r dr dθ`.
    pub fn nodes(&self) -> Vec<(Complex64, f64)> {
        let dth = 2.0 * PI / self.ntheta as f64;
        let mut out = Vec::with_capacity(self.nr * self.ntheta);
        for (r, w) in self.radii.iter().zip(&self.radial_weights) {
            for j in 0..self.ntheta {
                out.push((Complex64::from_polar(*r, dth * j as f64), w * r * dth));
            }
        }
        out
    }

    /// The ring `|z| = 1`.
    pub fn boundary(&self) -> Vec<Complex64> {
        (0..self.ntheta).map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / self.ntheta as f64)).collect()
    }
}

impl Default for PolarGrid {
    fn default() -> Self {
        Self::new(DEFAULT_NR, DEFAULT_NTHETA).unwrap()
    }
}

/// A map `f: D^2 -> C^n`, evaluated through a closure, with an optional
/// closed form for its Wirtinger derivatives.
#[derive(Clone)]
pub struct DiscMap {
    pub dim: usize,
    pub name: String,
    eval: MapFn,
    jet: Option<JetFn>,
}

impl std::fmt::Debug for DiscMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscMap").field("name", &self.name).field("dim", &self.dim).field("analytic", &self.jet.is_some()).finish()
    }
}

impl DiscMap {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(Complex64) -> Vec<Complex64> + Send + Sync + 'static,
    {
        Self { dim, name: "anonymous".into(), eval: Arc::new(f), jet: None }
    }

    pub fn with_jet<J>(mut self, j: J) -> Self
    where
        J: Fn(Complex64) -> (Vec<Complex64>, Vec<Complex64>) + Send + Sync + 'static,
    {
        self.jet = Some(Arc::new(j));
        self
    }

    pub fn named(mut self, n: impl Into<String>) -> Self {
        self.name = n.into();
        self
    }

    pub fn is_analytic(&self) -> bool {
        self.jet.is_some()
    }

    pub fn eval(&self, z: Complex64) -> Vec<Complex64> {
        (self.eval)(z)
    }

    /// Values on the nodes of `g` (interior) and on its boundary ring.
    pub fn samples(&self, g: &PolarGrid) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let inner = g.nodes().par_iter().map(|(z, _)| self.eval(*z)).collect();
        let ring = g.boundary().iter().map(|z| self.eval(*z)).collect();
        (inner, ring)
    }

    pub fn identity() -> Self {
        Self::new(1, |z| vec![z]).with_jet(|_| (vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(0.0, 0.0)])).named("z")
    }

    pub fn conjugate() -> Self {
        Self::new(1, |z| vec![z.conj()]).with_jet(|_| (vec![Complex64::new(0.0, 0.0)], vec![Complex64::new(1.0, 0.0)])).named("conj")
    }

    pub fn constant(w: Vec<Complex64>) -> Self {
        let n = w.len();
        let zero = vec![Complex64::new(0.0, 0.0); n];
        Self::new(n, move |_| w.clone()).with_jet(move |_| (zero.clone(), zero.clone())).named("constant")
    }

    /// The solution `f_s` with `∂̄ f_s = s`. Needs `0 <= s < 1`.
    pub fn family(s: f64) -> Result<Self> {
        check_s(s)?;
        Ok(Self::new(1, move |z| vec![family_value(s, z)])
            .with_jet(move |z| {
                let d = s * z + 1.0;
                (vec![-s * (1.0 - s * s) / (d * d)], vec![Complex64::new(s, 0.0)])
            })
            .named(format!("family(s = {s})")))
    }

    /// `x, y` partial derivatives, analytic when possible, else central
    /// differences of step `h`.
    fn partials(&self, z: Complex64, h: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        if let Some(j) = &self.jet {
            let (d, db) = j(z);
            let i = Complex64::i();
            let fx = d.iter().zip(&db).map(|(a, b)| a + b).collect();
            let fy = d.iter().zip(&db).map(|(a, b)| i * (a - b)).collect();
            (fx, fy)
        } else {
            let ex = Complex64::new(h, 0.0);
            let ey = Complex64::new(0.0, h);
            let (a, b) = (self.eval(z + ex), self.eval(z - ex));
            let (c, d) = (self.eval(z + ey), self.eval(z - ey));
            let fx = a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect();
            let fy = c.iter().zip(&d).map(|(p, q)| (p - q) / (2.0 * h)).collect();
            (fx, fy)
        }
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(HoferError::InvalidInput(format!("family parameter must lie in [0, 1), got {s}")));
    }
    Ok(())
}

fn family_value(s: f64, z: Complex64) -> Complex64 {
    s * z.conj() + (1.0 - s * s) / (s * z + 1.0)
}

/// `∂̄f = ½(∂f/∂x + i ∂f/∂y)`. Without a closed form `z` must stay a finite
/// difference step inside the unit disc.
pub fn dbar(f: &DiscMap, z: Complex64) -> Result<Vec<Complex64>> {
    if let Some(j) = &f.jet {
        if z.norm() > 1.0 + 1e-12 {
            return Err(HoferError::InvalidInput(format!("z = {z} outside the unit disc")));
        }
        return Ok(j(z).1);
    }
    if z.norm() + FD_STEP >= 1.0 {
        return Err(HoferError::InvalidInput(format!("z = {z} too close to the boundary for finite differences")));
    }
    let (fx, fy) = f.partials(z, FD_STEP);
    Ok(fx.iter().zip(&fy).map(|(a, b)| 0.5 * (a + Complex64::i() * b)).collect())
}

/// `ω(ξ, η)` for the standard form `sum dx_j ^ dy_j` on C^n.
pub fn omega_cn(xi: &[Complex64], eta: &[Complex64]) -> f64 {
    xi.iter().zip(eta).map(|(a, b)| (a.conj() * b).im).sum()
}

/// Euclidean area density `sqrt(|ξ|^2 |η|^2 - <ξ, η>^2)` of the frame `(ξ, η)`.
pub fn area_density(xi: &[Complex64], eta: &[Complex64]) -> f64 {
    let a: f64 = xi.iter().map(|v| v.norm_sqr()).sum();
    let b: f64 = eta.iter().map(|v| v.norm_sqr()).sum();
    let c: f64 = xi.iter().zip(eta).map(|(p, q)| (p.conj() * q).re).sum();
    (a * b - c * c).max(0.0).sqrt()
}

/// `½ |ξ + i η|^2 + ω(ξ, η)`, the pointwise upper bound for the area density.
pub fn area_bound_density(xi: &[Complex64], eta: &[Complex64]) -> f64 {
    let s: f64 = xi.iter().zip(eta).map(|(p, q)| (p + Complex64::i() * q).norm_sqr()).sum();
    0.5 * s + omega_cn(xi, eta)
}

/// Integrals of a disc map on a polar grid.
#[derive(Clone, Debug)]
pub struct DiscAreas {
    /// `ω(f) = ∫ f^* ω`.
    pub symplectic: f64,
    pub euclidean: f64,
    /// `∫ |∂̄f|^2`.
    pub dbar_energy: f64,
    /// Difference to the same integrals at half resolution.
    pub error_bar: f64,
    pub report: Report,
}

fn integrals(f: &DiscMap, g: &PolarGrid) -> (f64, f64, f64) {
    let parts: Vec<(f64, f64, f64)> = g
        .nodes()
        .par_iter()
        .map(|(z, w)| {
            let h = FD_STEP.min(0.5 * (1.0 - z.norm()));
            let (fx, fy) = f.partials(*z, h);
            let e: f64 = fx.iter().zip(&fy).map(|(a, b)| (0.5 * (a + Complex64::i() * b)).norm_sqr()).sum();
            (w * omega_cn(&fx, &fy), w * area_density(&fx, &fy), w * e)
        })
        .collect();
    parts.iter().fold((0.0, 0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2))
}

/// `ω(f)`, the Euclidean area and `∫|∂̄f|^2`, with checks of
/// `area <= 2 ∫|∂̄f|^2 + ω(f)` and `area >= |ω(f)|` up to the error bar.
pub fn areas(f: &DiscMap, g: &PolarGrid) -> Result<DiscAreas> {
    let (om, ar, en) = integrals(f, g);
    let coarse = PolarGrid::new((g.nr / 2).max(2), (g.ntheta / 2).max(4))?;
    let (om2, ar2, en2) = integrals(f, &coarse);
    if ![om, ar, en].iter().all(|v| v.is_finite()) {
        return Err(HoferError::NonFinite(format!("area integrals of {}", f.name)));
    }
    let err = (om - om2).abs() + (ar - ar2).abs() + 2.0 * (en - en2).abs() + 1e-12 * (1.0 + ar);
    let mut rep = Report::new("dbar-areas", "the area of a disc map is bounded by 2∫|∂̄f|² + ω(f) and by |ω(f)| from below");
    rep.scalar("symplectic_area", om);
    rep.scalar_with_error("euclidean_area", ar, err);
    rep.scalar("dbar_energy", en);
    let slack_upper = 2.0 * en + om - ar;
    let slack_lower = ar - om.abs();
    rep.scalar("slack_upper", slack_upper);
    rep.scalar("slack_lower", slack_lower);
    rep.check_ge("upper_inequality", slack_upper, -err);
    rep.check_ge("lower_inequality", slack_lower, -err);
    Ok(DiscAreas { symplectic: om, euclidean: ar, dbar_energy: en, error_bar: err, report: rep })
}

/// `f_s(z)` for `0 <= s < 1`.
pub fn family_eval(s: f64, z: Complex64) -> Result<Complex64> {
    check_s(s)?;
    if (s * z + 1.0).norm() <= POLE_TOL {
        return Err(HoferError::InvalidInput(format!("z = {z} hits the pole of f_s")));
    }
    Ok(family_value(s, z))
}

/// `max | |f_s(e^{iθ})| - 1 |` over `n` equally spaced angles.
pub fn boundary_modulus_defect(s: f64, n: usize) -> Result<f64> {
    check_s(s)?;
    Ok((0..n).map(|j| (family_value(s, Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64)).norm() - 1.0).abs()).fold(0.0, f64::max))
}

/// Winding number about 0 of `θ -> g(e^{iθ})`, from `n` samples.
pub fn winding_number<G: Fn(Complex64) -> Complex64>(g: G, n: usize) -> Result<i64> {
    let mut total = 0.0;
    let mut prev = g(Complex64::new(1.0, 0.0));
    for j in 1..=n {
        let w = g(Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64));
        if w.norm() < 1e-14 || prev.norm() < 1e-14 {
            return Err(HoferError::InvalidInput("curve passes through 0".into()));
        }
        let d = (w / prev).arg();
        if d.abs() > 0.5 * PI {
            return Err(HoferError::InvalidInput("too few samples to follow the argument".into()));
        }
        total += d;
        prev = w;
    }
    Ok((total / (2.0 * PI)).round() as i64)
}

/// Degree on the boundary of `s + z u(z)`, `u(z) = (1 - s^2)/(s z + 1)`.
pub fn family_boundary_degree(s: f64, n: usize) -> Result<i64> {
    check_s(s)?;
    winding_number(|z| s + z * (1.0 - s * s) / (s * z + 1.0), n)
}

/// Position `α = -e^{iθ}/s` of the pole of the disc automorphism behind `f_s`.
pub fn pole_alpha(s: f64, theta: f64) -> Result<Complex64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(HoferError::InvalidInput("pole position needs 0 < s < 1".into()));
    }
    Ok(-Complex64::from_polar(1.0, theta) / s)
}

/// `sup |f_s(z) - z̄|` over disc points with `|z + 1| >= delta` (`outside`)
/// or `|z + 1| <= delta` (inside), sampled on a polar grid plus the rim.
pub fn family_deviation(s: f64, delta: f64, outside: bool, g: &PolarGrid) -> Result<f64> {
    check_s(s)?;
    let mut pts: Vec<Complex64> = g.nodes().into_iter().map(|p| p.0).collect();
    pts.extend(g.boundary());
    pts.push(Complex64::new(-1.0, 0.0));
    let mut best: f64 = 0.0;
    for z in pts {
        let d = (z + 1.0).norm();
        if (outside && d >= delta) || (!outside && d <= delta) {
            if (s * z + 1.0).norm() <= POLE_TOL {
                continue;
            }
            best = best.max((family_value(s, z) - z.conj()).norm());
        }
    }
    Ok(best)
}

/// `σ = (1/2π) ∮ φ (dy - i dx) = ∫_0^1 e^{2πit} φ(e^{2πit}) dt` for the first
/// coordinate `φ`, by the trapezoid rule on `n` boundary points. When
/// `∂̄φ = σ` is constant on the disc this recovers `σ`.
pub fn boundary_sigma(f: &DiscMap, n: usize) -> Result<(Complex64, f64)> {
    if n < 4 {
        return Err(HoferError::InvalidInput("need at least 4 boundary samples".into()));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let mut rmax: f64 = 0.0;
    for j in 0..n {
        let z = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64);
        let phi = f.eval(z)[0];
        if !phi.is_finite() {
            return Err(HoferError::NonFinite("boundary values".into()));
        }
        rmax = rmax.max(phi.norm());
        acc += z * phi;
    }
    Ok((acc / n as f64, rmax))
}

/// Report around [`boundary_sigma`]: the value and the bound `|σ| <= max |φ|`.
pub fn boundary_sigma_report(f: &DiscMap, n: usize) -> Result<Report> {
    let (sigma, rmax) = boundary_sigma(f, n)?;
    let mut rep = Report::new("dbar-sigma", "a constant ∂̄ on the disc is recovered from boundary values and bounded by their size");
    rep.scalar("sigma_re", sigma.re);
    rep.scalar("sigma_im", sigma.im);
    rep.scalar("sigma_abs", sigma.norm());
    rep.scalar("boundary_radius", rmax);
    rep.check_le("sigma_within_boundary_radius", sigma.norm() - rmax, 1e-6);
    Ok(rep)
}

/// Real section `x -> f_s(x)` on `[-1, 1]` next to the limit `x`.
pub fn real_section(s: f64, n: usize) -> Result<Curve> {
    check_s(s)?;
    if n < 2 {
        return Err(HoferError::InvalidInput("need at least 2 points".into()));
    }
    let mut c = Curve::new(&["x", "f_s", "limit"]);
    for i in 0..n {
        let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        c.push(&[x, s * x + (1.0 - s * s) / (s * x + 1.0), x]);
    }
    Ok(c)
}

/// Full report for one member of the family.
pub fn family_report(s: f64, g: &PolarGrid, n_section: usize) -> Result<Report> {
    let f = DiscMap::family(s)?;
    let mut rep = Report::new("dbar-family", "the explicit family solves ∂̄f = s with boundary on the unit circle and blows up as s → 1");
    rep.scalar("s", s);
    let z0 = Complex64::new(0.3, -0.2);
    rep.check_le("dbar_equals_s", (dbar(&f, z0)?[0] - s).norm(), 1e-12);
    rep.check_le("boundary_on_circle", boundary_modulus_defect(s, 64)?, 1e-9);
    rep.check_true("boundary_degree_one", family_boundary_degree(s, 512)? == 1, "degree of s + z u(z)");
    let (sigma, _) = boundary_sigma(&f, g.ntheta)?;
    rep.scalar("sigma_re", sigma.re);
    rep.check_le("sigma_equals_s", (sigma - s).norm(), 1e-6);
    if s > 0.0 {
        rep.check_ge("pole_outside_disc", pole_alpha(s, 0.0)?.norm() - 1.0, 0.0);
    }
    rep.scalar("deviation_away_from_pole", family_deviation(s, 0.5, true, g)?);
    rep.scalar("deviation_near_pole", family_deviation(s, 0.1, false, g)?);
    let a = areas(&f, g)?;
    rep.scalar("symplectic_area", a.symplectic);
    rep.scalar("euclidean_area", a.euclidean);
    rep.check_ge("area_upper_inequality", 2.0 * a.dbar_energy + a.symplectic - a.euclidean, -a.error_bar);
    rep.curve("real_section", real_section(s, n_section)?);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plain(f: DiscMap) -> DiscMap {
        let e = f.eval.clone();
        DiscMap::new(f.dim, move |z| e(z))
    }

    #[test]
    fn dbar_examples() {
        let z = c(0.2, 0.3);
        for f in [DiscMap::conjugate(), plain(DiscMap::conjugate())] {
            assert!((dbar(&f, z).unwrap()[0] - 1.0).norm() <= 1e-9);
        }
        let sq = DiscMap::new(1, |z| vec![z * z]);
        assert!(dbar(&sq, z).unwrap()[0].norm() <= 1e-9);
        for s in [0.0, 0.3, 0.9] {
            let f = DiscMap::family(s).unwrap();
            assert!((dbar(&f, c(-0.5, 0.1)).unwrap()[0] - s).norm() <= 1e-12);
            let v = dbar(&plain(f), c(-0.5, 0.1)).unwrap()[0];
            assert!((v - s).norm() <= 1e-7, "{v}");
        }
        assert!(dbar(&sq, c(1.0, 0.0)).is_err());
        assert!(dbar(&DiscMap::conjugate(), c(1.0, 0.0)).is_ok());
    }

    #[test]
    fn area_examples() {
        let g = PolarGrid::default();
        let a = areas(&DiscMap::identity(), &g).unwrap();
        assert!((a.symplectic - PI).abs() <= 1e-10 && (a.euclidean - PI).abs() <= 1e-10);
        assert!(a.report.all_passed());
        assert!((a.euclidean - a.symplectic).abs() <= 1e-10 && a.dbar_energy.abs() <= 1e-14);
        let b = areas(&DiscMap::conjugate(), &g).unwrap();
        assert!((b.symplectic + PI).abs() <= 1e-10 && (b.euclidean - PI).abs() <= 1e-10);
        assert!(b.report.all_passed());
        let f = areas(&DiscMap::family(0.5).unwrap(), &g).unwrap();
        assert!(f.report.all_passed(), "{:?}", f.report);
        assert!(f.report.get("slack_upper").unwrap() >= 0.0);
        // finite differences agree with the analytic integrals
        let fd = areas(&plain(DiscMap::family(0.5).unwrap()), &g).unwrap();
        assert!((fd.euclidean - f.euclidean).abs() <= 1e-6);
        // C^2 map (z, z^2): omega = pi + 2 pi
        let m = DiscMap::new(2, |z| vec![z, z * z]);
        let a = areas(&m, &g).unwrap();
        assert!((a.symplectic - 3.0 * PI).abs() <= 1e-6 && a.report.all_passed());
    }

    #[test]
    fn family_examples() {
        for z in [c(0.3, 0.1), c(-0.9, 0.0), c(0.0, 1.0)] {
            assert_eq!(family_eval(0.0, z).unwrap(), c(1.0, 0.0));
        }
        assert!(boundary_modulus_defect(0.7, 64).unwrap() <= 1e-9);
        for s in [0.0, 0.4, 0.95] {
            assert_eq!(family_boundary_degree(s, 512).unwrap(), 1);
        }
        assert!(family_deviation(0.99, 0.5, true, &PolarGrid::default()).unwrap() <= 0.1);
        assert!(family_eval(1.0, c(0.0, 0.0)).is_err());
        assert!(family_eval(0.5, c(-2.0, 0.0)).is_err());
        assert!(DiscMap::family(-0.1).is_err());
    }

    #[test]
    fn sigma_examples() {
        let (s0, _) = boundary_sigma(&DiscMap::constant(vec![c(0.4, -0.2), c(1.0, 0.0)]), 256).unwrap();
        assert!(s0.norm() <= 1e-14);
        for s in [0.1, 0.5, 0.9] {
            let (sig, r) = boundary_sigma(&DiscMap::family(s).unwrap(), 256).unwrap();
            assert!((sig - s).norm() <= 1e-6, "{sig}");
            assert!(sig.norm() <= r + 1e-6);
        }
        // holomorphic maps into the disc have sigma 0
        let (sig, _) = boundary_sigma(&DiscMap::new(1, |z| vec![0.5 * z * z + 0.2 * z]), 256).unwrap();
        assert!(sig.norm() <= 1e-14);
        let rep = boundary_sigma_report(&DiscMap::family(0.8).unwrap(), 256).unwrap();
        assert!(rep.all_passed());
    }

    #[test]
    fn blow_up_signature() {
        let g = PolarGrid::new(64, 128).unwrap();
        let mut prev_away = f64::INFINITY;
        for s in [0.9, 0.99, 0.999] {
            let away = family_deviation(s, 0.5, true, &g).unwrap();
            let near = family_deviation(s, 0.1, false, &g).unwrap();
            assert!(away < prev_away);
            assert!(near >= 1.9, "s {s}: {near}");
            prev_away = away;
        }
    }

    #[test]
    fn family_report_passes() {
        let rep = family_report(0.9, &PolarGrid::new(64, 128).unwrap(), 21).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        let sec = real_section(0.9, 5).unwrap();
        assert_eq!(sec.rows.len(), 5);
        assert!((sec.rows[0][1].0 - 1.0).abs() <= 1e-12);
    }

    fn cvec(v: &[f64]) -> Vec<Complex64> {
        v.chunks(2).map(|p| c(p[0], p[1])).collect()
    }

    proptest! {
        #[test]
        fn pointwise_area_bound(a in prop::collection::vec(-3.0f64..3.0, 6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
            let (xi, eta) = (cvec(&a), cvec(&b));
            prop_assert!(area_density(&xi, &eta) <= area_bound_density(&xi, &eta) + 1e-12);
        }

        #[test]
        fn pole_lies_outside(s in 0.001f64..0.999, th in 0.0f64..6.3) {
            prop_assert!(pole_alpha(s, th).unwrap().norm() > 1.0);
        }
    }

    #[test]
    fn pointwise_bound_on_1000_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..4);
            let xi: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
            let eta: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
            assert!(area_density(&xi, &eta) <= area_bound_density(&xi, &eta) + 1e-12);
        }
    }
}

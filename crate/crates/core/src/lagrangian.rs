//! Liouville pairings of closed curves, the rationality constant of split
//! tori, the suspension of a Hamiltonian loop, exactness of loop homotopies
//! and the area bookkeeping of a doubled loop.

use std::f64::consts::PI;
use std::sync::Arc;

use num_integer::Integer;

use crate::error::{HoferError, Result};
use crate::flow::FlowMap;
use crate::geometry::{dot, omega_eval, Grid, ManifoldSpec};
use crate::hamiltonian::{catalog, probe_points, CatalogParams, Hamiltonian};
use crate::hofer::{extrema, path_length, LengthKind};
use crate::quadrature::simpson;
use crate::report::{Curve, Report};

pub const MIN_CYCLE_SAMPLES: usize = 256;
pub const CLOSURE_TOL: f64 = 1e-9;
pub const CF_DENOMINATOR_CAP: u64 = 1_000_000;
pub const CF_TOL: f64 = 1e-9;
pub const LOOP_TOL: f64 = 1e-6;
/// Central-difference step in the homotopy parameter.
pub const EXACTNESS_DS: f64 = 1e-4;
const TIME_NODES: usize = 129;

/// Closed curve sampled at `s_i = i / N`, `i < N`. The endpoint `c(1)` is
/// checked against `c(0)` on construction and then dropped.
#[derive(Clone, Debug)]
pub struct ParametrizedCycle {
    points: Vec<Vec<f64>>,
}

impl ParametrizedCycle {
    /// `samples` holds `c(s_0), ..., c(s_N)` including the repeated endpoint.
    pub fn new(mut samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() < MIN_CYCLE_SAMPLES + 1 {
            return Err(HoferError::InvalidInput(format!(
                "a cycle needs at least {MIN_CYCLE_SAMPLES} samples plus the closing point, got {}",
                samples.len()
            )));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|x| x.len() != d) {
            return Err(HoferError::InvalidInput("cycle samples must share one nonzero dimension".into()));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(HoferError::NonFinite("cycle samples".into()));
        }
        let last = samples.pop().unwrap();
        let gap = last.iter().zip(&samples[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > CLOSURE_TOL {
            return Err(HoferError::CheckFailed { context: "open curve: c(1) != c(0)".into(), residual: gap });
        }
        Ok(Self { points: samples })
    }

    /// Sample `f` at `n + 1` uniform parameters in `[0, 1]`.
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(f: F, n: usize) -> Result<Self> {
        Self::new((0..=n).map(|i| f(i as f64 / n as f64)).collect())
    }

    /// Counterclockwise circle of radius `r` about the origin of R^2.
    pub fn circle(r: f64, n: usize) -> Result<Self> {
        Self::from_fn(|s| vec![r * (2.0 * PI * s).cos(), r * (2.0 * PI * s).sin()], n)
    }

    /// Figure-eight `(a sin th, a sin th cos th)` with two lobes of equal area.
    pub fn figure_eight(a: f64, n: usize) -> Result<Self> {
        Self::from_fn(
            |s| {
                let th = 2.0 * PI * s;
                vec![a * th.sin(), a * th.sin() * th.cos()]
            },
            n,
        )
    }

    /// A loop inside the zero section `{p = 0}` of R^2.
    pub fn zero_section_loop(n: usize) -> Result<Self> {
        Self::from_fn(|s| vec![0.0, 0.3 * (2.0 * PI * s).sin()], n)
    }

    /// Named curves for the command line.
    pub fn named(name: &str, radius: f64, n: usize) -> Result<Self> {
        match name {
            "circle" => Self::circle(radius, n),
            "figure_eight" => Self::figure_eight(radius, n),
            "zero_section" => Self::zero_section_loop(n),
            _ => Err(HoferError::InvalidInput(format!("unknown curve {name}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Derivative in `s` by an 8th order periodic central difference.
    pub fn derivative(&self) -> Vec<Vec<f64>> {
        const C: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let n = self.points.len();
        let d = self.dim();
        let inv_h = n as f64;
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| {
                        let mut s = 0.0;
                        for (j, c) in C.iter().enumerate() {
                            let a = &self.points[(i + j + 1) % n];
                            let b = &self.points[(i + n - j - 1) % n];
                            s += c * (a[k] - b[k]);
                        }
                        s * inv_h
                    })
                    .collect()
            })
            .collect()
    }
}

/// `∮ sum_j p_j dq_j` for a cycle in R^{2n} with coordinates `(p.., q..)`,
/// by the periodic trapezoid rule.
pub fn liouville_pairing(c: &ParametrizedCycle) -> Result<f64> {
    let d = c.dim();
    if d % 2 != 0 {
        return Err(HoferError::InvalidInput("liouville pairing needs an even dimension".into()));
    }
    let n = d / 2;
    let dc = c.derivative();
    let s: f64 = c.points.iter().zip(&dc).map(|(x, v)| (0..n).map(|j| x[j] * v[n + j]).sum::<f64>()).sum();
    Ok(s / c.len() as f64)
}

/// Continued-fraction test for `x > 0`: returns `p/q` with `q` at most
/// [`CF_DENOMINATOR_CAP`] and `|q x - p| <= CF_TOL * max(1, x)`.
pub fn rational_approximation(x: f64) -> Option<(u64, u64)> {
    if !(x > 0.0) || !x.is_finite() {
        return None;
    }
    let tol = CF_TOL * x.max(1.0);
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut y = x;
    for _ in 0..64 {
        let a = y.floor();
        if a > 1e15 {
            return None;
        }
        let a = a as u64;
        let h = a.checked_mul(h1)?.checked_add(h0)?;
        let k = a.checked_mul(k1)?.checked_add(k0)?;
        if k > CF_DENOMINATOR_CAP {
            return None;
        }
        (h0, h1, k0, k1) = (h1, h, k1, k);
        if (k as f64 * x - h as f64).abs() <= tol {
            return Some((h, k));
        }
        let frac = y - y.floor();
        if frac <= 0.0 {
            return None;
        }
        y = 1.0 / frac;
    }
    None
}

/// Positive generator of the subgroup of R spanned by the areas `pi r_i^2`
/// of the factor circles, or `None` when the areas are rationally independent
/// at the continued-fraction tolerance.
pub fn gamma_split_torus(radii: &[f64]) -> Result<Option<f64>> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(HoferError::InvalidInput("radii must be positive and finite".into()));
    }
    let a0 = PI * radii[0] * radii[0];
    let mut fracs = Vec::with_capacity(radii.len());
    for r in radii {
        match rational_approximation(r * r / (radii[0] * radii[0])) {
            Some(f) => fracs.push(f),
            None => return Ok(None),
        }
    }
    let mut den: u128 = 1;
    for &(_, q) in &fracs {
        den = den.lcm(&(q as u128));
    }
    let mut num: u128 = 0;
    for &(p, q) in &fracs {
        num = num.gcd(&(p as u128 * (den / q as u128)));
    }
    Ok(Some(a0 * num as f64 / den as f64))
}

/// Closed curve of base points `theta -> c(theta)`, `theta` in `[0, 1]`.
pub type BaseCurve = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// The suspension `(x, t) -> (h_t x, -H(h_t x, t), t)` of a loop `h_t`
/// restricted to a closed curve on a surface.
#[derive(Clone)]
pub struct SuspensionMap {
    flow: FlowMap,
    base: BaseCurve,
    r_sign: f64,
}

impl SuspensionMap {
    /// Checks that `h_1 = id` within [`LOOP_TOL`] on probe points and on the curve.
    pub fn new(h: &Hamiltonian, base: BaseCurve) -> Result<Self> {
        if h.manifold.dim() != 2 {
            return Err(HoferError::Unsupported("suspensions are implemented over surfaces".into()));
        }
        let flow = FlowMap::best(h)?;
        let mut pts = probe_points(&h.manifold);
        pts.extend((0..16).map(|i| base(i as f64 / 16.0)));
        let mut worst: f64 = 0.0;
        for x in &pts {
            let y = flow.map(x, 0.0, 1.0)?;
            worst = worst.max(h.manifold.distance(x, &y));
        }
        if worst > LOOP_TOL {
            return Err(HoferError::CheckFailed { context: "h_1 = id".into(), residual: worst });
        }
        Ok(Self { flow, base, r_sign: -1.0 })
    }

    /// Negative control with `r = +H` in place of `-H`.
    pub fn with_wrong_sign(mut self) -> Self {
        self.r_sign = 1.0;
        self
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        self.flow.hamiltonian()
    }

    pub fn base_point(&self, theta: f64) -> Vec<f64> {
        (self.base)(theta)
    }

    /// `(h_t x, r, t)` with `r = -H(h_t x, t)`.
    pub fn suspension(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64, f64)> {
        let y = self.flow.map(x, 0.0, t)?;
        let r = self.r_sign * self.hamiltonian().value(&y, t)?;
        Ok((y, r, t))
    }

    /// The embedding in curve coordinates `(theta, t)`.
    pub fn point(&self, theta: f64, t: f64) -> Result<(Vec<f64>, f64, f64)> {
        self.suspension(&self.base_point(theta), t)
    }
}

fn tangent_part(m: &ManifoldSpec, x: &[f64], v: Vec<f64>) -> Vec<f64> {
    if m.is_sphere() {
        let c = dot(x, &v) / dot(x, x);
        v.iter().zip(x).map(|(a, b)| a - c * b).collect()
    } else {
        v
    }
}

/// `phi^* sigma (d/dtheta, d/dt)` at one sample, `sigma = Omega + dr ^ dt`,
/// with both tangent vectors from central differences of step `h`.
pub fn pullback_at(map: &SuspensionMap, theta: f64, t: f64, h: f64) -> Result<f64> {
    let m = map.hamiltonian().manifold;
    let (x, _, _) = map.point(theta, t)?;
    let (xa, ra, _) = map.point(theta + h, t)?;
    let (xb, rb, _) = map.point(theta - h, t)?;
    let (xc, _, _) = map.point(theta, t + h)?;
    let (xd, _, _) = map.point(theta, t - h)?;
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (p, q))| {
                let d = p - q;
                let d = if m.is_periodic_axis(k) { d - d.round() } else { d };
                d / (2.0 * h)
            })
            .collect::<Vec<f64>>()
    };
    let xi = tangent_part(&m, &x, diff(&xa, &xb));
    let eta = tangent_part(&m, &x, diff(&xc, &xd));
    let r_theta = (ra - rb) / (2.0 * h);
    // dr ^ dt on (d/dtheta, d/dt): r_theta * 1 - r_t * 0
    Ok(omega_eval(&m, &x, &xi, &eta)? + r_theta)
}

/// Maximum of `|phi^* sigma|` over an `n_theta x n_t` sample of the suspended
/// curve. Times stay at least `h` inside `(0, 1)`.
pub fn suspension_isotropy_check(map: &SuspensionMap, n_theta: usize, n_t: usize, h: f64) -> Result<Report> {
    if n_theta == 0 || n_t == 0 || !(h > 0.0 && h < 0.05) {
        return Err(HoferError::InvalidInput("need positive sample counts and a step in (0, 0.05)".into()));
    }
    let mut rep = Report::new(
        "lagrangian-suspension",
        "the suspension of a Hamiltonian loop over a closed curve is Lagrangian for Omega + dr^dt",
    );
    let mut worst: f64 = 0.0;
    let mut curve = Curve::new(&["theta", "t", "pullback"]);
    for i in 0..n_theta {
        let theta = (i as f64 + 0.25) / n_theta as f64;
        for j in 0..n_t {
            let t = h + (1.0 - 2.0 * h) * (j as f64 + 0.5) / n_t as f64;
            let v = pullback_at(map, theta, t, h)?;
            if !v.is_finite() {
                return Err(HoferError::NonFinite("suspension pullback".into()));
            }
            worst = worst.max(v.abs());
            curve.push(&[theta, t, v]);
        }
    }
    rep.scalar("max_pullback", worst);
    rep.scalar("fd_step", h);
    rep.scalar("r_sign", map.r_sign);
    rep.curve("samples", curve);
    Ok(rep)
}

/// Great circle of the unit sphere tilted by `tilt` about the x-axis.
pub fn tilted_great_circle(tilt: f64) -> BaseCurve {
    let (s, c) = tilt.sin_cos();
    Arc::new(move |th: f64| {
        let (a, b) = (2.0 * PI * th).sin_cos();
        vec![b, a * c, a * s]
    })
}

/// A one-parameter family `s -> H(., ., s)` of Hamiltonians, each meant to
/// generate a loop.
#[derive(Clone)]
pub struct LoopHomotopy {
    pub manifold: ManifoldSpec,
    slice: Arc<dyn Fn(f64) -> Result<Hamiltonian> + Send + Sync>,
}

impl LoopHomotopy {
    pub fn new<F>(manifold: ManifoldSpec, f: F) -> Self
    where
        F: Fn(f64) -> Result<Hamiltonian> + Send + Sync + 'static,
    {
        Self { manifold, slice: Arc::new(f) }
    }

    pub fn constant(h: Hamiltonian) -> Self {
        Self::new(h.manifold, move |_| Ok(h.clone()))
    }

    /// Rotation of the unit sphere by `2 pi c t` about `a(s) = (sin bs, 0, cos bs)`.
    /// Each slice is a loop exactly when `c` is an integer.
    pub fn tilted_rotations(beta: f64, c: f64) -> Self {
        Self::new(ManifoldSpec::sphere2(), move |s| {
            let mut p = CatalogParams::new();
            p.insert("amp".into(), 2.0 * PI * c);
            p.insert("tilt".into(), beta * s);
            catalog("height", &p)
        })
    }

    pub fn slice(&self, s: f64) -> Result<Hamiltonian> {
        (self.slice)(s)
    }
}

fn check_slice_loop(h: &Hamiltonian, flow: &FlowMap) -> Result<()> {
    for x in probe_points(&h.manifold) {
        let y = flow.map(&x, 0.0, 1.0)?;
        let d = h.manifold.distance(&x, &y);
        if d > LOOP_TOL {
            return Err(HoferError::CheckFailed { context: "slice h_1 = id".into(), residual: d });
        }
    }
    Ok(())
}

/// `∫_0^1 dH/ds (h_{t,s} x, t, s) dt` with `dH/ds` from central differences
/// of step [`EXACTNESS_DS`]. The slices at `s` and `s +- ds` must be loops.
pub fn exactness_integral(fam: &LoopHomotopy, x: &[f64], s: f64) -> Result<f64> {
    for v in [s - EXACTNESS_DS, s, s + EXACTNESS_DS] {
        let h = fam.slice(v)?;
        check_slice_loop(&h, &FlowMap::best(&h)?)?;
    }
    exactness_integral_unchecked(fam, x, s)
}

/// [`exactness_integral`] without the loop check, for negative controls.
pub fn exactness_integral_unchecked(fam: &LoopHomotopy, x: &[f64], s: f64) -> Result<f64> {
    fam.manifold.check_point(x)?;
    let h = fam.slice(s)?;
    let hp = fam.slice(s + EXACTNESS_DS)?;
    let hm = fam.slice(s - EXACTNESS_DS)?;
    let flow = FlowMap::best(&h)?;
    let n = TIME_NODES - 1;
    let dt = 1.0 / n as f64;
    let mut vals = Vec::with_capacity(TIME_NODES);
    for i in 0..=n {
        let t = i as f64 * dt;
        let y = flow.map(x, 0.0, t)?;
        vals.push((hp.value(&y, t)? - hm.value(&y, t)?) / (2.0 * EXACTNESS_DS));
    }
    Ok(simpson(&vals, dt))
}

/// The doubled loop: `G(x, t) = H(x, t)` on `[0, 1]`, `-H(x, 2 - t)` on `[1, 2]`.
pub fn doubled_loop(h: &Hamiltonian) -> Result<Hamiltonian> {
    if h.time_interval != (0.0, 1.0) {
        return Err(HoferError::InvalidInput("doubling needs a Hamiltonian on [0, 1]".into()));
    }
    let inner = h.clone();
    Ok(Hamiltonian::new(h.manifold, move |x, t| if t <= 1.0 { inner.eval(x, t) } else { -inner.eval(x, 2.0 - t) })
        .with_interval(0.0, 2.0)
        .named(format!("doubled({})", h.name)))
}

/// Area of the band between `a+(t) = -min G + eps` and `a-(t) = -max G - eps`
/// over `[0, 2]`, next to the closed form `2 l + 4 eps`.
#[derive(Clone, Debug)]
pub struct AnnulusArea {
    pub area: f64,
    pub length: f64,
    pub formula: f64,
    pub eps: f64,
}

pub fn annulus_area(h: &Hamiltonian, eps: f64, g: &Grid) -> Result<AnnulusArea> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(HoferError::InvalidInput("eps must be positive".into()));
    }
    let gd = doubled_loop(h)?;
    let half = (TIME_NODES - 1) / 2;
    let dt = 1.0 / half as f64;
    let mut area = 0.0;
    for k in 0..2 {
        let mut vals = Vec::with_capacity(half + 1);
        for i in 0..=half {
            let t = if k == 0 { i as f64 * dt } else { 2.0 - (half - i) as f64 * dt };
            let e = extrema(&gd, t, g)?;
            let a_plus = -e.min + eps;
            let a_minus = -e.max - eps;
            vals.push(a_plus - a_minus);
        }
        area += simpson(&vals, dt);
    }
    let length = path_length(h, 0.0, 1.0, LengthKind::LengthLinf, g)?;
    Ok(AnnulusArea { area, length, formula: 2.0 * length + 4.0 * eps, eps })
}

/// `∫_0^2 G(g_t x, t) dt` for the doubled loop, `g_t = h_t` then `h_{2-t}`.
/// Each half is integrated separately since `G` jumps at `t = 1`.
pub fn doubling_integral(flow: &FlowMap, x: &[f64]) -> Result<f64> {
    let h = flow.hamiltonian();
    let half = (TIME_NODES - 1) / 2;
    let dt = 1.0 / half as f64;
    let mut first = Vec::with_capacity(half + 1);
    let mut second = Vec::with_capacity(half + 1);
    for i in 0..=half {
        let t = i as f64 * dt;
        let y = flow.map(x, 0.0, t)?;
        first.push(h.value(&y, t)?);
        // t' = 2 - s with s running down from 1 to 0
        let s = 1.0 - t;
        let z = flow.map(x, 0.0, s)?;
        second.push(-h.value(&z, s)?);
    }
    Ok(simpson(&first, dt) + simpson(&second, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_grid;
    use proptest::prelude::*;

    #[test]
    fn pairing_examples() {
        for r in [0.5, 1.0, 2.3] {
            let c = ParametrizedCycle::circle(r, 256).unwrap();
            assert!((liouville_pairing(&c).unwrap() - PI * r * r).abs() <= 1e-6 * r * r);
        }
        let e = ParametrizedCycle::figure_eight(1.3, 512).unwrap();
        assert!(liouville_pairing(&e).unwrap().abs() <= 1e-6);
        let z = ParametrizedCycle::zero_section_loop(256).unwrap();
        assert_eq!(liouville_pairing(&z).unwrap(), 0.0);
        // a clockwise circle flips the sign
        let cw = ParametrizedCycle::from_fn(|s| vec![(2.0 * PI * s).cos(), -(2.0 * PI * s).sin()], 300).unwrap();
        assert!((liouville_pairing(&cw).unwrap() + PI).abs() <= 1e-6);
        // product of circles in R^4
        let c4 = ParametrizedCycle::from_fn(
            |s| {
                let (a, b) = (2.0 * PI * s).sin_cos();
                vec![b, 2.0 * b, a, 2.0 * a]
            },
            256,
        )
        .unwrap();
        assert!((liouville_pairing(&c4).unwrap() - 5.0 * PI).abs() <= 1e-6);
    }

    #[test]
    fn open_or_short_curves_are_rejected() {
        let open = ParametrizedCycle::from_fn(|s| vec![s, s * s], 300);
        assert!(matches!(open, Err(HoferError::CheckFailed { .. })));
        assert!(ParametrizedCycle::circle(1.0, 100).is_err());
        assert!(ParametrizedCycle::named("spiral", 1.0, 300).is_err());
    }

    #[test]
    fn continued_fractions() {
        assert_eq!(rational_approximation(2.0), Some((2, 1)));
        assert_eq!(rational_approximation(2.0 / 3.0), Some((2, 3)));
        assert_eq!(rational_approximation(355.0 / 113.0), Some((355, 113)));
        assert_eq!(rational_approximation(2f64.cbrt().powi(2)), None);
        assert_eq!(rational_approximation(2f64.sqrt()), None);
        assert_eq!(rational_approximation(PI), None);
        assert_eq!(rational_approximation(1.0 / 1_000_003.0), None);
    }

    #[test]
    fn gamma_examples() {
        for r in [0.3, 1.0, 1.7] {
            let g = gamma_split_torus(&[r, r]).unwrap().unwrap();
            assert!((g - PI * r * r).abs() <= 1e-12 * g);
        }
        assert_eq!(gamma_split_torus(&[1.0, 2f64.cbrt()]).unwrap(), None);
        let g = gamma_split_torus(&[1.0, 2f64.sqrt()]).unwrap().unwrap();
        assert!((g - PI).abs() <= 1e-12);
        // areas pi and 2 pi / 3 generate (pi / 3) Z
        let g = gamma_split_torus(&[1.0, (2.0f64 / 3.0).sqrt()]).unwrap().unwrap();
        assert!((g - PI / 3.0).abs() <= 1e-12);
        let g = gamma_split_torus(&[2.0]).unwrap().unwrap();
        assert!((g - 4.0 * PI).abs() <= 1e-12);
        assert!(gamma_split_torus(&[1.0, -1.0]).is_err());
        assert!(gamma_split_torus(&[]).is_err());
    }

    fn rotation_loop() -> Hamiltonian {
        catalog("rotation_k", &CatalogParams::new()).unwrap()
    }

    #[test]
    fn suspension_examples() {
        let zero = Hamiltonian::zero(ManifoldSpec::sphere2());
        let map = SuspensionMap::new(&zero, tilted_great_circle(0.4)).unwrap();
        let x = map.base_point(0.3);
        let (y, r, t) = map.suspension(&x, 0.7).unwrap();
        assert_eq!((y, r, t), (x.clone(), 0.0, 0.7));
        let eq = SuspensionMap::new(&rotation_loop(), tilted_great_circle(0.0)).unwrap();
        for i in 0..10 {
            let (_, r, _) = eq.point(i as f64 / 10.0, 0.37 + 0.05 * i as f64).unwrap();
            assert!(r.abs() <= 1e-12);
        }
        let tilted = SuspensionMap::new(&rotation_loop(), tilted_great_circle(0.5)).unwrap();
        let x = tilted.base_point(0.2);
        let (y, r, t) = tilted.suspension(&x, 0.0).unwrap();
        assert_eq!(y, x);
        assert!((r + 2.0 * PI * x[2]).abs() <= 1e-12 && t == 0.0);
        // a non-loop is refused
        let mut p = CatalogParams::new();
        p.insert("k".into(), 0.5);
        let half = catalog("rotation_k", &p).unwrap();
        assert!(SuspensionMap::new(&half, tilted_great_circle(0.0)).is_err());
    }

    #[test]
    fn suspension_is_lagrangian() {
        let zero = Hamiltonian::zero(ManifoldSpec::sphere2());
        let c = SuspensionMap::new(&zero, tilted_great_circle(0.7)).unwrap();
        let rep = suspension_isotropy_check(&c, 8, 8, 1e-4).unwrap();
        assert!(rep.get("max_pullback").unwrap() <= 1e-8);
        for tilt in [0.0, 0.5, 1.2] {
            let m = SuspensionMap::new(&rotation_loop(), tilted_great_circle(tilt)).unwrap();
            let rep = suspension_isotropy_check(&m, 12, 12, 1e-4).unwrap();
            assert!(rep.get("max_pullback").unwrap() <= 1e-5, "tilt {tilt}: {:?}", rep.get("max_pullback"));
        }
        let bad = SuspensionMap::new(&rotation_loop(), tilted_great_circle(0.5)).unwrap().with_wrong_sign();
        let rep = suspension_isotropy_check(&bad, 12, 12, 1e-4).unwrap();
        assert!(rep.get("max_pullback").unwrap() >= 1e-2);
    }

    #[test]
    fn suspension_over_a_torus_loop() {
        // H = sin(2 pi (q - t)) on the torus: its flow shears p and returns to id at t = 1
        let h = Hamiltonian::new(ManifoldSpec::torus2(), |x, t| (2.0 * PI * (x[1] - t)).sin());
        let base: BaseCurve = Arc::new(|th: f64| vec![0.3 + 0.1 * (2.0 * PI * th).sin(), th.rem_euclid(1.0)]);
        let fl = FlowMap::best(&h).unwrap();
        let y = fl.map(&[0.3, 0.2], 0.0, 1.0).unwrap();
        assert!(ManifoldSpec::torus2().distance(&y, &[0.3, 0.2]) <= 1e-9);
        let m = SuspensionMap::new(&h, base).unwrap();
        let rep = suspension_isotropy_check(&m, 6, 6, 1e-4).unwrap();
        assert!(rep.get("max_pullback").unwrap() <= 1e-5);
    }

    #[test]
    fn isotropy_residual_shrinks_with_step() {
        let m = SuspensionMap::new(&rotation_loop(), tilted_great_circle(0.8)).unwrap();
        let mut prev = f64::INFINITY;
        for h in [2e-2, 1e-2, 5e-3] {
            let v = suspension_isotropy_check(&m, 7, 5, h).unwrap().get("max_pullback").unwrap();
            assert!(v <= 0.6 * prev, "step {h}: {v} vs {prev}");
            prev = v;
        }
    }

    #[test]
    fn exactness_examples() {
        let x = [0.36, -0.48, 0.8];
        let c = LoopHomotopy::constant(rotation_loop());
        assert!(exactness_integral(&c, &x, 0.3).unwrap().abs() <= 1e-12);
        let fam = LoopHomotopy::tilted_rotations(1.0, 1.0);
        for s in [0.0, 0.25, 0.7] {
            assert!(exactness_integral(&fam, &x, s).unwrap().abs() <= 1e-5);
        }
        // closed form for the non-loop: x along a'(s) gives beta sin(2 pi c)
        let (beta, cc, s) = (1.0, 0.8, 0.5);
        let bad = LoopHomotopy::tilted_rotations(beta, cc);
        let u = [(beta * s).cos(), 0.0, -(beta * s).sin()];
        assert!(exactness_integral(&bad, &u, s).is_err());
        let v = exactness_integral_unchecked(&bad, &u, s).unwrap();
        assert!((v - beta * (2.0 * PI * cc).sin()).abs() <= 1e-6);
        assert!(v.abs() >= 1e-2);
    }

    fn torus_grid() -> Grid {
        sample_grid(&ManifoldSpec::torus2(), 64, None).unwrap()
    }

    #[test]
    fn annulus_examples() {
        let g = torus_grid();
        let zero = Hamiltonian::zero(ManifoldSpec::torus2());
        let a = annulus_area(&zero, 0.1, &g).unwrap();
        assert!((a.area - 0.4).abs() <= 1e-12 && (a.formula - 0.4).abs() <= 1e-12);
        // oscillation 1 at every time
        let h = Hamiltonian::autonomous(ManifoldSpec::torus2(), |x| 0.5 * (2.0 * PI * x[0]).sin());
        let a = annulus_area(&h, 0.01, &g).unwrap();
        assert!((a.area - 2.04).abs() <= 1e-6, "{}", a.area);
        assert!((a.area - a.formula).abs() <= 1e-6);
        // oscillation 2t, length 1
        let h = Hamiltonian::new(ManifoldSpec::torus2(), |x, t| t * (2.0 * PI * x[1]).cos());
        let a = annulus_area(&h, 0.01, &g).unwrap();
        assert!((a.area - 2.04).abs() <= 1e-6, "{}", a.area);
        assert!(annulus_area(&h, 0.0, &g).is_err());
    }

    #[test]
    fn doubling_cancels() {
        let h = Hamiltonian::new(ManifoldSpec::torus2(), |x, t| (2.0 * PI * (x[1] - t)).sin() + x[0].cos() * t);
        let fl = FlowMap::best(&h).unwrap();
        for x in [[0.1, 0.2], [0.7, 0.45], [0.33, 0.9]] {
            assert!(doubling_integral(&fl, &x).unwrap().abs() <= 1e-12);
        }
        let d = doubled_loop(&h).unwrap();
        assert_eq!(d.eval(&[0.1, 0.2], 1.5), -h.eval(&[0.1, 0.2], 0.5));
        assert!(doubled_loop(&d).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pairing_ignores_reparametrization(a in -0.8f64..0.8, r in 0.2f64..2.0, k in 1usize..4) {
            let curve = move |s: f64| {
                let th = 2.0 * PI * s;
                vec![r * th.cos() + 0.2 * (2.0 * th).sin(), r * th.sin() + 0.1 * (k as f64 * th).cos()]
            };
            let phi = move |s: f64| s + a * (2.0 * PI * s).sin() / (2.0 * PI);
            let c1 = ParametrizedCycle::from_fn(curve, 512).unwrap();
            let c2 = ParametrizedCycle::from_fn(move |s| curve(phi(s)), 512).unwrap();
            let (v1, v2) = (liouville_pairing(&c1).unwrap(), liouville_pairing(&c2).unwrap());
            prop_assert!((v1 - v2).abs() <= 1e-8, "{v1} vs {v2}");
        }

        #[test]
        fn gamma_scales_quadratically(n1 in 1u32..40, n2 in 1u32..40, k in 0.1f64..5.0) {
            let radii = [1.0, (n1 as f64 / n2 as f64).sqrt()];
            let scaled: Vec<f64> = radii.iter().map(|r| k * r).collect();
            let g = gamma_split_torus(&radii).unwrap();
            let gk = gamma_split_torus(&scaled).unwrap();
            if let (Some(g), Some(gk)) = (g, gk) {
                prop_assert!((gk - k * k * g).abs() <= 1e-10 * gk);
            } else {
                prop_assert!(false, "rational ratios must be detected");
            }
        }
    }
}

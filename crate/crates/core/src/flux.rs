//! Flux of paths of symplectic maps of the torus, the swept-area pairing,
//! conjugation `f -> phi f phi^{-1}` and the commutator Hamiltonian of a
//! translation with the flow of a function of `q`.
//!
//! Internally a path contributes the raw periods of `λ_t = Ω(ξ_t, .)`. The
//! reported flux is minus that, so that `(p, q) -> (p, q + t)` has flux
//! `[dp]` and `(p, q) -> (p + t, q)` has flux `-[dq]`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HoferError, Result};
use crate::flow::{omega_matrix, FlowMap, Scheme};
use crate::geometry::{omega_canonical, wrap_half, Grid, ManifoldSpec};
use crate::growth::Candidate;
use crate::hamiltonian::{bump_profile, bump_profile_deriv, probe_points, Hamiltonian};
use crate::hofer::{norm, NormKind};
use crate::quadrature::{gauss_legendre_on, simpson};
use crate::report::{Curve, Report};

/// Step of the central differences in the path parameter.
pub const PATH_FD_STEP: f64 = 1e-4;
const SPACE_FD_STEP: f64 = 1e-5;
/// Twist maps with steep profiles need a small step for a 1e-5 audit.
const JACOBIAN_STEP: f64 = 1e-6;
pub const AUDIT_TOL: f64 = 1e-5;
pub const LOOP_TOL: f64 = 1e-6;

/// `(x, t) -> f_t(x)` on the torus, returning any lift of the image.
pub type PathFn = Arc<dyn Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync>;

/// A path `t -> f_t`, `t` in `[0, 1]`, of symplectic maps of the torus,
/// smooth on each of its pieces.
#[derive(Clone)]
pub struct SymplecticPath {
    pub name: String,
    map: PathFn,
    /// `(y, t) -> f_t^{-1}(y)` when known.
    inverse: Option<PathFn>,
    pieces: Vec<(f64, f64)>,
}

impl std::fmt::Debug for SymplecticPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymplecticPath").field("name", &self.name).field("pieces", &self.pieces).finish()
    }
}

impl SymplecticPath {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        Self { name: name.into(), map: Arc::new(f), inverse: None, pieces: vec![(0.0, 1.0)] }
    }

    pub fn with_inverse<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(f));
        self
    }

    /// `(p, q) -> (p + vp t, q + vq t)`.
    pub fn translation(vp: f64, vq: f64) -> Self {
        Self::new(format!("translate({vp},{vq})"), move |x, t| Ok(vec![x[0] + vp * t, x[1] + vq * t]))
            .with_inverse(move |y, t| Ok(vec![y[0] - vp * t, y[1] - vq * t]))
    }

    /// `t -> f_t` for a Hamiltonian flow on the torus over `[0, 1]`. Numerical
    /// flows are integrated by RK4: differences in `t` of implicit midpoint
    /// maps pick up its step-dependent phase error.
    pub fn hamiltonian_flow(flow: FlowMap) -> Result<Self> {
        let flow = if !flow.is_exact() && flow.scheme() == Scheme::ImplicitMidpoint {
            FlowMap::new(flow.hamiltonian(), Scheme::Rk4, flow.step())?
        } else {
            flow
        };
        let h = flow.hamiltonian();
        if h.manifold != ManifoldSpec::torus2() {
            return Err(HoferError::Unsupported("flux is implemented on the torus".into()));
        }
        let name = format!("flow({})", h.name);
        let t0 = h.time_interval.0;
        let inv = flow.clone();
        Ok(Self::new(name, move |x, t| flow.map(x, t0, t0 + t)).with_inverse(move |y, t| inv.map(y, t0 + t, t0)))
    }

    /// Parses `translate_q:T`, `translate_p:T` or `translate:vp,vq`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || HoferError::InvalidInput(format!("cannot parse path {spec:?}"));
        let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
        let vals: Vec<f64> = args.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        match (kind, vals.as_slice()) {
            ("translate_q", [t]) => Ok(Self::translation(0.0, *t)),
            ("translate_p", [t]) => Ok(Self::translation(*t, 0.0)),
            ("translate", [a, b]) => Ok(Self::translation(*a, *b)),
            _ => Err(bad()),
        }
    }

    /// `self` on `[0, 1/2]`, then `other o self_1` on `[1/2, 1]`.
    pub fn concat(&self, other: &SymplecticPath) -> Self {
        let (a, b) = (self.map.clone(), other.map.clone());
        let mut pieces: Vec<(f64, f64)> = self.pieces.iter().map(|(u, v)| (0.5 * u, 0.5 * v)).collect();
        pieces.extend(other.pieces.iter().map(|(u, v)| (0.5 + 0.5 * u, 0.5 + 0.5 * v)));
        let inverse = match (&self.inverse, &other.inverse) {
            (Some(ai), Some(bi)) => {
                let (ai, bi) = (ai.clone(), bi.clone());
                let inv: PathFn = Arc::new(move |y: &[f64], t: f64| {
                    if t <= 0.5 {
                        ai(y, 2.0 * t)
                    } else {
                        let x = bi(y, 2.0 * t - 1.0)?;
                        ai(&x, 1.0)
                    }
                });
                Some(inv)
            }
            _ => None,
        };
        Self {
            name: format!("{} * {}", self.name, other.name),
            map: Arc::new(move |x, t| {
                if t <= 0.5 {
                    a(x, 2.0 * t)
                } else {
                    let y = a(x, 1.0)?;
                    b(&y, 2.0 * t - 1.0)
                }
            }),
            inverse,
            pieces,
        }
    }

    /// `t -> f_{phi(t)}` for an increasing `phi` with `phi(0) = 0`, `phi(1) = 1`.
    pub fn reparametrize<P>(&self, phi: P) -> Result<Self>
    where
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if phi(0.0).abs() > 1e-12 || (phi(1.0) - 1.0).abs() > 1e-12 {
            return Err(HoferError::InvalidInput("reparametrization must fix 0 and 1".into()));
        }
        let phi = Arc::new(phi);
        let (a, ph) = (self.map.clone(), phi.clone());
        let inverse = self.inverse.clone().map(|ai| {
            let inv: PathFn = Arc::new(move |y: &[f64], t: f64| ai(y, phi(t)));
            inv
        });
        Ok(Self { name: format!("reparam({})", self.name), map: Arc::new(move |x, t| a(x, ph(t))), inverse, pieces: vec![(0.0, 1.0)] })
    }

    pub fn apply(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (self.map)(x, t)
    }

    /// Largest `|f_1(x) - f_0(x)|` mod Z^2 over probe points.
    pub fn loop_defect(&self) -> Result<f64> {
        let m = ManifoldSpec::torus2();
        let mut worst: f64 = 0.0;
        for x in probe_points(&m) {
            let (a, b) = (self.apply(&x, 0.0)?, self.apply(&x, 1.0)?);
            worst = worst.max(m.distance(&a, &b));
        }
        Ok(worst)
    }

    /// Largest `|det Df_t - 1|` at probe points and five times.
    pub fn symplecticity_defect(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            for x in probe_points(&ManifoldSpec::torus2()) {
                let j = map_jacobian(&|y: &[f64]| self.apply(y, t), &x, JACOBIAN_STEP)?;
                worst = worst.max((j.determinant() - 1.0).abs());
            }
        }
        Ok(worst)
    }
}

fn torus_diff(a: &[f64], b: &[f64]) -> [f64; 2] {
    [wrap_half(a[0] - b[0]), wrap_half(a[1] - b[1])]
}

/// Jacobian of a torus map at `x` by central differences of its lift.
pub fn map_jacobian(f: &dyn Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let mut j = DMatrix::zeros(2, 2);
    for k in 0..2 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let d = torus_diff(&f(&xp)?, &f(&xm)?);
        j[(0, k)] = d[0] / (2.0 * h);
        j[(1, k)] = d[1] / (2.0 * h);
    }
    Ok(j)
}

/// Largest entry of `J^T Ω J - Ω` over the points.
pub fn map_symplecticity_defect(f: &dyn Fn(&[f64]) -> Result<Vec<f64>>, pts: &[Vec<f64>]) -> Result<f64> {
    let om = omega_matrix(2);
    let mut worst: f64 = 0.0;
    for x in pts {
        let j = map_jacobian(f, x, JACOBIAN_STEP)?;
        let r = j.transpose() * &om * &j - &om;
        worst = worst.max(r.iter().fold(0.0, |a: f64, v| a.max(v.abs())));
    }
    Ok(worst)
}

/// Coefficients of a class in `H^1(T^2)` in the basis `([dp], [dq])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxValue {
    pub dp: f64,
    pub dq: f64,
}

impl FluxValue {
    pub fn as_array(&self) -> [f64; 2] {
        [self.dp, self.dq]
    }

    pub fn max_abs(&self) -> f64 {
        self.dp.abs().max(self.dq.abs())
    }

    /// Value on a cycle with winding numbers `(m, n)` in `p` and `q`.
    pub fn pair(&self, class: [i64; 2]) -> f64 {
        self.dp * class[0] as f64 + self.dq * class[1] as f64
    }
}

/// Quadrature sizes for the flux integrals.
#[derive(Clone, Copy, Debug)]
pub struct FluxOptions {
    /// Trapezoid nodes along each basis cycle.
    pub s_samples: usize,
    /// Simpson nodes per smooth piece of the path.
    pub t_nodes: usize,
}

impl Default for FluxOptions {
    fn default() -> Self {
        Self { s_samples: 64, t_nodes: 33 }
    }
}

/// Derivative in `t` of `f_t(x)` inside the piece `[a, b]`: fourth order
/// central differences in the interior, second order one-sided at the ends.
fn path_velocity(p: &SymplecticPath, x: &[f64], t: f64, piece: (f64, f64)) -> Result<[f64; 2]> {
    let h = PATH_FD_STEP;
    let f0 = p.apply(x, t)?;
    if t - 2.0 * h >= piece.0 && t + 2.0 * h <= piece.1 {
        let d1 = torus_diff(&p.apply(x, t + h)?, &p.apply(x, t - h)?);
        let d2 = torus_diff(&p.apply(x, t + 2.0 * h)?, &p.apply(x, t - 2.0 * h)?);
        return Ok([(8.0 * d1[0] - d2[0]) / (12.0 * h), (8.0 * d1[1] - d2[1]) / (12.0 * h)]);
    }
    let s = if t + 2.0 * h <= piece.1 { 1.0 } else { -1.0 };
    let f1 = p.apply(x, t + s * h)?;
    let f2 = p.apply(x, t + 2.0 * s * h)?;
    let d1 = torus_diff(&f1, &f0);
    let d2 = torus_diff(&f2, &f0);
    Ok([s * (4.0 * d1[0] - d2[0]) / (2.0 * h), s * (4.0 * d1[1] - d2[1]) / (2.0 * h)])
}

/// Raw period `∫_C λ_t` along `c(s) = base + s e_k`. With a known inverse the
/// generating field `ξ_t(y)` is evaluated on `C` itself; otherwise the period
/// is taken on the image cycle, `∫ Ω(∂_t F, ∂_s F) ds` with `F(t, s) = f_t(c(s))`,
/// which is the same number but needs far more nodes when `f_t` folds `C`.
fn raw_period(p: &SymplecticPath, t: f64, piece: (f64, f64), axis: usize, base: f64, n: usize) -> Result<f64> {
    let c = |u: f64| if axis == 0 { vec![u, base] } else { vec![base, u] };
    let mut e = [0.0; 2];
    e[axis] = 1.0;
    let mut acc = 0.0;
    for i in 0..n {
        let s = i as f64 / n as f64;
        acc += match &p.inverse {
            Some(inv) => {
                let x = inv(&c(s), t)?;
                omega_canonical(&path_velocity(p, &x, t, piece)?, &e)
            }
            None => {
                let xt = path_velocity(p, &c(s), t, piece)?;
                let d = torus_diff(&p.apply(&c(s + SPACE_FD_STEP), t)?, &p.apply(&c(s - SPACE_FD_STEP), t)?);
                omega_canonical(&xt, &[d[0] / (2.0 * SPACE_FD_STEP), d[1] / (2.0 * SPACE_FD_STEP)])
            }
        };
    }
    Ok(acc / n as f64)
}

/// `flux({f_t}) = ∫_0^1 [λ_t] dt` in the basis `([dp], [dq])`, after the
/// symplecticity audit of the slices.
pub fn flux_of_path(p: &SymplecticPath, opts: FluxOptions) -> Result<FluxValue> {
    let d = p.symplecticity_defect()?;
    if d > AUDIT_TOL {
        return Err(HoferError::CheckFailed { context: format!("path {} is not symplectic", p.name), residual: d });
    }
    let n = if opts.t_nodes % 2 == 0 { opts.t_nodes + 1 } else { opts.t_nodes.max(3) };
    let (mut rp, mut rq) = (0.0, 0.0);
    for &(a, b) in &p.pieces {
        let dt = (b - a) / (n - 1) as f64;
        let mut vp = Vec::with_capacity(n);
        let mut vq = Vec::with_capacity(n);
        for i in 0..n {
            let t = a + dt * i as f64;
            vp.push(raw_period(p, t, (a, b), 0, 0.3, opts.s_samples)?);
            vq.push(raw_period(p, t, (a, b), 1, 0.3, opts.s_samples)?);
        }
        rp += simpson(&vp, dt);
        rq += simpson(&vq, dt);
    }
    Ok(FluxValue { dp: -rp, dq: -rq })
}

/// Closed curve on the torus given through a lift with `c(1) - c(0)` in Z^2.
#[derive(Clone)]
pub struct TorusCycle {
    lift: Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync>,
    pub class: [i64; 2],
}

impl TorusCycle {
    pub fn new<F>(f: F) -> Result<Self>
    where
        F: Fn(f64) -> [f64; 2] + Send + Sync + 'static,
    {
        let (a, b) = (f(0.0), f(1.0));
        let d = [b[0] - a[0], b[1] - a[1]];
        let class = [d[0].round() as i64, d[1].round() as i64];
        let gap = (d[0] - class[0] as f64).abs().max((d[1] - class[1] as f64).abs());
        if gap > 1e-9 {
            return Err(HoferError::CheckFailed { context: "torus cycle does not close".into(), residual: gap });
        }
        Ok(Self { lift: Arc::new(f), class })
    }

    /// `{q = q0}` traversed in the direction of `p`.
    pub fn horizontal(q0: f64) -> Self {
        Self::new(move |s| [s, q0]).expect("closed")
    }

    /// `{p = p0}` traversed in the direction of `q`.
    pub fn vertical(p0: f64) -> Self {
        Self::new(move |s| [p0, s]).expect("closed")
    }

    /// Small counterclockwise circle, homologous to zero.
    pub fn small_circle(center: [f64; 2], r: f64) -> Self {
        Self::new(move |s| {
            let (a, b) = (2.0 * std::f64::consts::PI * s).sin_cos();
            [center[0] + r * b, center[1] + r * a]
        })
        .expect("closed")
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        (self.lift)(s)
    }
}

/// Compares `(flux, [C])` with the Ω-area of the swept surface
/// `(s, t) -> f_t(c(s))`, oriented by `(∂_s, ∂_t)`.
pub fn flux_pairing_check(p: &SymplecticPath, c: &TorusCycle, opts: FluxOptions) -> Result<Report> {
    let defect = p.loop_defect()?;
    if defect > LOOP_TOL {
        return Err(HoferError::CheckFailed { context: format!("path {} is not a loop", p.name), residual: defect });
    }
    let flux = flux_of_path(p, opts)?;
    let lhs = flux.pair(c.class);
    let ns = 2 * opts.s_samples;
    let mut rhs = 0.0;
    for &(a, b) in &p.pieces {
        let (ts, ws) = gauss_legendre_on(24, a, b);
        for (t, w) in ts.iter().zip(&ws) {
            let mut acc = 0.0;
            for i in 0..ns {
                let s = i as f64 / ns as f64;
                let x = c.point(s);
                let xt = path_velocity(p, &x, *t, (a, b))?;
                let d = torus_diff(&p.apply(&c.point(s + SPACE_FD_STEP), *t)?, &p.apply(&c.point(s - SPACE_FD_STEP), *t)?);
                let xs = [d[0] / (2.0 * SPACE_FD_STEP), d[1] / (2.0 * SPACE_FD_STEP)];
                acc += omega_canonical(&xs, &xt);
            }
            rhs += w * acc / ns as f64;
        }
    }
    let mut rep = Report::new("flux-pairing", "the flux of a loop paired with a cycle equals the area swept by the cycle");
    rep.config = serde_json::json!({ "path": p.name, "class": c.class });
    rep.scalar("flux_dp", flux.dp).scalar("flux_dq", flux.dq);
    rep.scalar("flux_pairing", lhs).scalar("swept_area", rhs);
    rep.check_le("pairing_matches_swept_area", (lhs - rhs).abs(), 1e-4);
    Ok(rep)
}

/// `phi f_t phi^{-1}` for a time-`t` flow map.
#[derive(Clone, Debug)]
pub struct Conjugation {
    pub phi: Candidate,
    pub flow: FlowMap,
    pub t: f64,
}

impl Conjugation {
    pub fn new(phi: Candidate, flow: FlowMap, t: f64) -> Result<Self> {
        if phi.manifold() != flow.hamiltonian().manifold {
            return Err(HoferError::InvalidInput("phi and f live on different manifolds".into()));
        }
        Ok(Self { phi, flow, t })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t0 = self.flow.hamiltonian().time_interval.0;
        let y = self.phi.apply_inverse(x)?;
        let z = self.flow.map(&y, t0, t0 + self.t)?;
        self.phi.apply(&z)
    }
}

/// `F o phi^{-1}`.
pub fn pushed_hamiltonian(f: &Hamiltonian, phi: &Candidate) -> Hamiltonian {
    let (fv, ph) = (f.clone(), phi.clone());
    let mut h = Hamiltonian::new(f.manifold, move |x, t| match ph.apply_inverse(x) {
        Ok(y) => fv.eval(&y, t),
        Err(_) => f64::NAN,
    })
    .with_interval(f.time_interval.0, f.time_interval.1)
    .named(format!("{} o {}^-1", f.name, phi.name));
    h.autonomous = f.autonomous;
    h
}

/// Audits `phi f_t phi^{-1}` on the points of `g`: its symplecticity defect
/// against that of `f_t` at the matching points `phi^{-1} x`, and its distance
/// to the time-`t` flow of `F o phi^{-1}`.
pub fn conjugation_report(c: &Conjugation, g: &Grid) -> Result<Report> {
    let t0 = c.flow.hamiltonian().time_interval.0;
    let m = c.flow.hamiltonian().manifold;
    if m != ManifoldSpec::torus2() {
        return Err(HoferError::Unsupported("conjugation audit is implemented on the torus".into()));
    }
    let pulled: Vec<Vec<f64>> = g.points.iter().map(|x| c.phi.apply_inverse(x)).collect::<Result<_>>()?;
    let base = map_symplecticity_defect(&|x: &[f64]| c.flow.map(x, t0, t0 + c.t), &pulled)?;
    let conj = map_symplecticity_defect(&|x: &[f64]| c.apply(x), &g.points)?;
    let pushed = pushed_hamiltonian(c.flow.hamiltonian(), &c.phi);
    let pf = FlowMap::new(&pushed, c.flow.scheme(), c.flow.step())?;
    let mut worst: f64 = 0.0;
    for x in &g.points {
        worst = worst.max(m.distance(&c.apply(x)?, &pf.map(x, t0, t0 + c.t)?));
    }
    let mut rep = Report::new("flux-conjugation", "conjugating a Hamiltonian flow by a symplectic map gives the flow of the transported Hamiltonian");
    rep.config = serde_json::json!({ "phi": c.phi.name, "hamiltonian": c.flow.hamiltonian().name, "t": c.t });
    rep.scalar("defect_f", base).scalar("defect_conjugate", conj).scalar("flow_mismatch", worst);
    rep.check_le("defect_within_twice", conj - 2.0 * base, 1e-9);
    rep.check_le("matches_transported_flow", worst, 1e-5);
    Ok(rep)
}

/// `F(q) = amp * bump(q / width)` on the torus, `q` taken mod 1 about 0.
pub fn q_profile(amp: f64, width: f64) -> Result<Hamiltonian> {
    if !(width > 0.0 && width < 0.5) {
        return Err(HoferError::InvalidInput("profile width must lie in (0, 1/2)".into()));
    }
    let prof = move |q: f64| amp * bump_profile(wrap_half(q) / width);
    let dprof = move |q: f64| amp * bump_profile_deriv(wrap_half(q) / width) / width;
    Ok(Hamiltonian::autonomous(ManifoldSpec::torus2(), move |x| prof(x[1]))
        .with_grad(move |x, _, g| {
            g[0] = 0.0;
            g[1] = dprof(x[1]);
        })
        .with_exact_flow(move |x, t0, t1| vec![x[0] - (t1 - t0) * dprof(x[1]), x[1]])
        .named("q_profile"))
}

/// `G(q) = F(q) - F(q + b)` for an autonomous `F = F(q)` on the torus, with
/// a report checking that the time-1 flow of `G` is `phi^{-1} f_1^{-1} phi f_1`,
/// `phi(p, q) = (p, q + b)`.
pub fn commutator_hamiltonian(f: &Hamiltonian, b: f64, g: &Grid) -> Result<(Hamiltonian, Report)> {
    let m = ManifoldSpec::torus2();
    if f.manifold != m || !f.autonomous {
        return Err(HoferError::InvalidInput("F must be an autonomous function on the torus".into()));
    }
    if !(0.0..1.0).contains(&b) {
        return Err(HoferError::InvalidInput(format!("shift b must lie in [0, 1), got {b}")));
    }
    let mut p_dep: f64 = 0.0;
    for x in probe_points(&m) {
        p_dep = p_dep.max((f.eval(&x, 0.0) - f.eval(&[x[0] + 0.37, x[1]], 0.0)).abs());
    }
    if p_dep > 1e-12 {
        return Err(HoferError::InvalidInput("F must depend on q only".into()));
    }
    let fv = f.clone();
    let gh = Hamiltonian::autonomous(m, move |x| fv.eval(x, 0.0) - fv.eval(&[x[0], x[1] + b], 0.0)).named(format!("commutator({}, b = {b})", f.name));
    let phi = Candidate::translation(m, vec![0.0, b])?;
    // integrate both flows numerically so the check does not lean on closed forms
    let fl = FlowMap::new(&f.clone().without_exact_flow(), Scheme::Rk4, 1e-3)?;
    let gl = FlowMap::new(&gh, Scheme::Rk4, 1e-3)?;
    let mut worst: f64 = 0.0;
    for x in &g.points {
        let a = fl.map(x, 0.0, 1.0)?;
        let b1 = phi.apply(&a)?;
        let c = fl.map(&b1, 1.0, 0.0)?;
        let rhs = phi.apply_inverse(&c)?;
        worst = worst.max(m.distance(&gl.map(x, 0.0, 1.0)?, &rhs));
    }
    let sup = norm(&gh, 0.0, NormKind::Linf, g)?;
    let mut curve = Curve::new(&["q", "G"]);
    for i in 0..=64 {
        let q = i as f64 / 64.0;
        curve.push(&[q, gh.eval(&[0.0, q], 0.0)]);
    }
    let mut rep = Report::new("flux-commutator", "the commutator of a translation with the flow of F(q) is generated by F(q) - F(q + b)");
    rep.config = serde_json::json!({ "hamiltonian": f.name, "b": b });
    rep.scalar("flow_mismatch", worst).scalar("g_on_c", gh.eval(&[0.0, 0.0], 0.0)).scalar("oscillation", sup);
    rep.curve("profile", curve);
    rep.check_le("flow_matches_commutator", worst, 1e-4);
    if worst > 1e-4 {
        return Err(HoferError::CheckFailed { context: "commutator flow mismatch".into(), residual: worst });
    }
    Ok((gh, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_grid;
    use crate::hamiltonian::{catalog, CatalogParams};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params(kv: &[(&str, f64)]) -> CatalogParams {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn close(a: FluxValue, b: [f64; 2], tol: f64) -> bool {
        (a.dp - b[0]).abs() <= tol && (a.dq - b[1]).abs() <= tol
    }

    fn torus_loop() -> Hamiltonian {
        Hamiltonian::new(ManifoldSpec::torus2(), |x, t| (2.0 * PI * (x[1] - t)).sin() / (2.0 * PI))
    }

    #[test]
    fn translation_fluxes() {
        let o = FluxOptions::default();
        let v = flux_of_path(&SymplecticPath::parse("translate_q:0.37").unwrap(), o).unwrap();
        assert!(close(v, [0.37, 0.0], 1e-9), "{v:?}");
        let h = flux_of_path(&SymplecticPath::translation(1.0, 0.0), o).unwrap();
        assert!(close(h, [0.0, -1.0], 1e-9), "{h:?}");
        let d = flux_of_path(&SymplecticPath::translation(0.2, -0.5), o).unwrap();
        assert!(close(d, [-0.5, -0.2], 1e-9));
        assert!(SymplecticPath::parse("rotate:1").is_err());
        assert!(SymplecticPath::parse("translate_q:x").is_err());
    }

    #[test]
    fn hamiltonian_paths_have_zero_flux() {
        let o = FluxOptions { s_samples: 64, t_nodes: 9 };
        let bump = catalog("torus_bump", &params(&[("radius", 0.3)])).unwrap();
        let p = SymplecticPath::hamiltonian_flow(FlowMap::best(&bump).unwrap()).unwrap();
        assert!(flux_of_path(&p, o).unwrap().max_abs() <= 1e-5);
        for (name, kv) in [
            ("torus_band", vec![]),
            ("torus_wave", vec![("axis", 1.0), ("k", 2.0)]),
            ("tilted_height", vec![]),
        ] {
            let h = catalog(name, &params(&kv)).unwrap();
            let p = SymplecticPath::hamiltonian_flow(FlowMap::best(&h).unwrap()).unwrap();
            assert!(flux_of_path(&p, o).unwrap().max_abs() <= 1e-5, "{name}");
        }
    }

    #[test]
    fn image_cycle_periods_agree_with_inverse_periods() {
        let o = FluxOptions { s_samples: 64, t_nodes: 9 };
        let wave = catalog("torus_wave", &params(&[("amp", 0.2), ("axis", 0.0)])).unwrap();
        let fl = FlowMap::best(&wave).unwrap();
        let with_inv = SymplecticPath::hamiltonian_flow(fl.clone())
            .unwrap()
            .concat(&SymplecticPath::translation(0.3, -0.7));
        let plain = SymplecticPath::new("same", move |x, t| with_inv.apply(x, t));
        let v = flux_of_path(&plain, o).unwrap();
        assert!(close(v, [0.5 * -0.7 * 2.0, 0.5 * -0.3 * 2.0], 1e-6), "{v:?}");
    }

    #[test]
    fn non_symplectic_paths_fail_the_audit() {
        let p = SymplecticPath::new("stretch", |x, t| Ok(vec![x[0] * (1.0 + t), x[1]]));
        assert!(matches!(flux_of_path(&p, FluxOptions::default()), Err(HoferError::CheckFailed { .. })));
    }

    #[test]
    fn pairing_examples() {
        let o = FluxOptions::default();
        let vert = SymplecticPath::translation(0.0, 1.0);
        let rep = flux_pairing_check(&vert, &TorusCycle::horizontal(0.2), o).unwrap();
        assert!(rep.all_passed());
        assert!((rep.get("swept_area").unwrap().abs() - 1.0).abs() <= 1e-4);
        let rep = flux_pairing_check(&vert, &TorusCycle::vertical(0.2), o).unwrap();
        assert!(rep.all_passed() && rep.get("swept_area").unwrap().abs() <= 1e-4);
        let rep = flux_pairing_check(&vert, &TorusCycle::small_circle([0.4, 0.4], 0.1), o).unwrap();
        assert!(rep.all_passed() && rep.get("flux_pairing").unwrap().abs() <= 1e-4);
        let ham = SymplecticPath::hamiltonian_flow(FlowMap::best(&torus_loop()).unwrap()).unwrap();
        let rep = flux_pairing_check(&ham, &TorusCycle::horizontal(0.1), FluxOptions { s_samples: 32, t_nodes: 9 }).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        assert!(rep.get("flux_pairing").unwrap().abs() <= 1e-4 && rep.get("swept_area").unwrap().abs() <= 1e-4);
        assert!(flux_pairing_check(&SymplecticPath::translation(0.0, 0.5), &TorusCycle::horizontal(0.0), o).is_err());
        assert!(TorusCycle::new(|s| [0.5 * s, 0.0]).is_err());
    }

    #[test]
    fn conjugation_examples() {
        let m = ManifoldSpec::torus2();
        let g = sample_grid(&m, 6, None).unwrap();
        let f = catalog("torus_bump", &params(&[("radius", 0.3)])).unwrap();
        let fl = FlowMap::new(&f, Scheme::Rk4, 1e-3).unwrap();
        let id = Conjugation::new(Candidate::identity(m), fl.clone(), 0.7).unwrap();
        for x in &g.points {
            assert_eq!(id.apply(x).unwrap(), fl.map(x, 0.0, 0.7).unwrap());
        }
        let tr = Candidate::translation(m, vec![0.3, -0.15]).unwrap();
        let c = Conjugation::new(tr, fl, 0.7).unwrap();
        let rep = conjugation_report(&c, &g).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
    }

    #[test]
    fn commutator_examples() {
        let g = sample_grid(&ManifoldSpec::torus2(), 32, None).unwrap();
        let f = q_profile(1.0, 0.1).unwrap();
        let (gh, rep) = commutator_hamiltonian(&f, 0.4, &g).unwrap();
        assert!(rep.all_passed());
        for p in [0.0, 0.3, 0.77] {
            assert!((gh.eval(&[p, 0.0], 0.0) - 1.0).abs() <= 1e-12);
        }
        assert!((rep.get("oscillation").unwrap() - 2.0).abs() <= 1e-9);
        let (g0, _) = commutator_hamiltonian(&f, 0.0, &g).unwrap();
        assert!(g.points.iter().all(|x| g0.eval(x, 0.0) == 0.0));
        let not_q = catalog("torus_band", &CatalogParams::new()).unwrap();
        assert!(commutator_hamiltonian(&not_q, 0.4, &g).is_err());
        assert!(commutator_hamiltonian(&f, 1.2, &g).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn flux_is_additive(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, amp in -0.5f64..0.5) {
            let o = FluxOptions { s_samples: 64, t_nodes: 9 };
            let band = catalog("torus_wave", &params(&[("amp", amp), ("axis", 0.0)])).unwrap();
            let p1 = SymplecticPath::translation(a, b);
            let p2 = SymplecticPath::hamiltonian_flow(FlowMap::best(&band).unwrap()).unwrap()
                .concat(&SymplecticPath::translation(c, 0.0));
            let whole = flux_of_path(&p1.concat(&p2), o).unwrap();
            let (f1, f2) = (flux_of_path(&p1, o).unwrap(), flux_of_path(&p2, o).unwrap());
            prop_assert!((whole.dp - f1.dp - f2.dp).abs() <= 1e-6);
            prop_assert!((whole.dq - f1.dq - f2.dq).abs() <= 1e-6);
        }

        #[test]
        fn loop_flux_ignores_reparametrization(k in -2i32..3, j in -2i32..3, a in -0.9f64..0.9) {
            let o = FluxOptions::default();
            let p = SymplecticPath::translation(k as f64, j as f64);
            let r = p.reparametrize(move |t| t + a * (2.0 * PI * t).sin() / (2.0 * PI)).unwrap();
            let (v, w) = (flux_of_path(&p, o).unwrap(), flux_of_path(&r, o).unwrap());
            prop_assert!((v.dp - w.dp).abs() <= 1e-6 && (v.dq - w.dq).abs() <= 1e-6);
        }
    }
}

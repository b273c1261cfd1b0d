//! Integration of Hamilton's equations, flow maps, linearized flows and
//! structure audits.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HoferError, Result};
use crate::geometry::{norm, sphere_frame, BoxRegion, Grid};
use crate::hamiltonian::Hamiltonian;
use crate::report::Report;

pub const IMPLICIT_TOL: f64 = 1e-12;
pub const IMPLICIT_MAX_ITER: usize = 50;
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    ImplicitMidpoint,
}

impl Scheme {
    pub fn order(&self) -> i32 {
        match self {
            Scheme::Rk4 => 4,
            Scheme::ImplicitMidpoint => 2,
        }
    }
}

/// Discrete trajectory of `x' = sgrad F_t(x)`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Largest renormalization correction on the sphere.
    pub max_drift: f64,
}

impl Trajectory {
    pub fn end(&self) -> &[f64] {
        self.points.last().expect("trajectory is never empty")
    }
}

struct Stepper<'a> {
    h: &'a Hamiltonian,
    scheme: Scheme,
    chart_box: Option<&'a BoxRegion>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(h: &'a Hamiltonian, scheme: Scheme, chart_box: Option<&'a BoxRegion>, d: usize) -> Self {
        Self {
            h,
            scheme,
            chart_box,
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
            next: vec![0.0; d],
        }
    }

    /// Advance `x` in place from `t` by `dt`; returns the renormalization drift.
    fn step(&mut self, x: &mut [f64], t: f64, dt: f64) -> Result<f64> {
        let d = x.len();
        match self.scheme {
            Scheme::Rk4 => {
                self.h.sgrad_into(x, t, &mut self.k[0])?;
                for i in 0..d {
                    self.tmp[i] = x[i] + 0.5 * dt * self.k[0][i];
                }
                self.h.sgrad_into(&self.tmp, t + 0.5 * dt, &mut self.k[1])?;
                for i in 0..d {
                    self.tmp[i] = x[i] + 0.5 * dt * self.k[1][i];
                }
                self.h.sgrad_into(&self.tmp, t + 0.5 * dt, &mut self.k[2])?;
                for i in 0..d {
                    self.tmp[i] = x[i] + dt * self.k[2][i];
                }
                self.h.sgrad_into(&self.tmp, t + dt, &mut self.k[3])?;
                for i in 0..d {
                    x[i] += dt / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
                }
            }
            Scheme::ImplicitMidpoint => {
                let tm = t + 0.5 * dt;
                self.h.sgrad_into(x, t, &mut self.k[0])?;
                for i in 0..d {
                    self.next[i] = x[i] + dt * self.k[0][i];
                }
                let scale = 1.0 + norm(x);
                let mut res = f64::INFINITY;
                let mut converged = false;
                for _ in 0..IMPLICIT_MAX_ITER {
                    for i in 0..d {
                        self.tmp[i] = 0.5 * (x[i] + self.next[i]);
                    }
                    self.h.sgrad_into(&self.tmp, tm, &mut self.k[1])?;
                    let mut r: f64 = 0.0;
                    for i in 0..d {
                        let y = x[i] + dt * self.k[1][i];
                        r = r.max((y - self.next[i]).abs());
                        self.next[i] = y;
                    }
                    // iterate to round-off once the tolerance is met
                    if r <= IMPLICIT_TOL * scale {
                        converged = true;
                        if r <= 4.0 * f64::EPSILON * scale || r >= res {
                            break;
                        }
                    }
                    res = r;
                }
                if !converged {
                    return Err(HoferError::NonConvergence { context: "implicit midpoint step".into(), residual: res });
                }
                x.copy_from_slice(&self.next);
            }
        }
        let mut drift = 0.0;
        if self.h.manifold.is_sphere() {
            let r = norm(x);
            drift = (r - 1.0).abs();
            x.iter_mut().for_each(|c| *c /= r);
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(HoferError::NonFinite("flow step".into()));
        }
        if let Some(b) = self.chart_box {
            if !b.contains(x) {
                return Err(HoferError::Escape { t: t + dt });
            }
        }
        Ok(drift)
    }
}

fn step_count(t0: f64, t1: f64, step: f64) -> usize {
    (((t1 - t0).abs() / step) - 1e-9).ceil().max(1.0) as usize
}

/// Integrate from `x0` at time `t0` to time `t1` (backwards when `t1 < t0`).
pub fn integrate_flow(
    f: &Hamiltonian,
    x0: &[f64],
    t0: f64,
    t1: f64,
    scheme: Scheme,
    step: f64,
) -> Result<Trajectory> {
    integrate_impl(f, x0, t0, t1, scheme, step, None, true)
}

#[allow(clippy::too_many_arguments)]
fn integrate_impl(
    f: &Hamiltonian,
    x0: &[f64],
    t0: f64,
    t1: f64,
    scheme: Scheme,
    step: f64,
    chart_box: Option<&BoxRegion>,
    keep: bool,
) -> Result<Trajectory> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(HoferError::InvalidInput(format!("step must be positive, got {step}")));
    }
    f.manifold.check_point(x0)?;
    f.check_time(t0)?;
    f.check_time(t1)?;
    let mut x = x0.to_vec();
    let mut traj = Trajectory { times: vec![t0], points: vec![x.clone()], max_drift: 0.0 };
    if t1 == t0 {
        return Ok(traj);
    }
    let n = step_count(t0, t1, step);
    let dt = (t1 - t0) / n as f64;
    let mut st = Stepper::new(f, scheme, chart_box, x.len());
    for i in 0..n {
        let t = t0 + dt * i as f64;
        let drift = st.step(&mut x, t, dt)?;
        traj.max_drift = traj.max_drift.max(drift);
        if keep || i + 1 == n {
            traj.times.push(if i + 1 == n { t1 } else { t + dt });
            traj.points.push(x.clone());
        }
    }
    Ok(traj)
}

type CacheKey = (Vec<u64>, u64, u64);

struct FlowInner {
    ham: Hamiltonian,
    scheme: Scheme,
    step: f64,
    exact: bool,
    chart_box: Option<BoxRegion>,
    cache: Mutex<HashMap<CacheKey, Arc<Trajectory>>>,
}

/// Time-`t` maps of a Hamiltonian, integrated on demand. Cloning is cheap and
/// clones share the trajectory cache.
#[derive(Clone)]
pub struct FlowMap {
    inner: Arc<FlowInner>,
}

impl std::fmt::Debug for FlowMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowMap")
            .field("hamiltonian", &self.inner.ham.name)
            .field("scheme", &self.inner.scheme)
            .field("step", &self.inner.step)
            .field("exact", &self.inner.exact)
            .finish()
    }
}

impl FlowMap {
    pub fn new(h: &Hamiltonian, scheme: Scheme, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(HoferError::InvalidInput(format!("step must be positive, got {step}")));
        }
        Ok(Self {
            inner: Arc::new(FlowInner {
                ham: h.clone(),
                scheme,
                step,
                exact: false,
                chart_box: None,
                cache: Mutex::new(HashMap::new()),
            }),
        })
    }

    /// Implicit midpoint for autonomous Hamiltonians, RK4 otherwise.
    pub fn with_defaults(h: &Hamiltonian) -> Result<Self> {
        let scheme = if h.autonomous { Scheme::ImplicitMidpoint } else { Scheme::Rk4 };
        Self::new(h, scheme, DEFAULT_STEP)
    }

    /// Flow given by the Hamiltonian's closed-form solution.
    pub fn exact(h: &Hamiltonian) -> Result<Self> {
        if h.exact_flow().is_none() {
            return Err(HoferError::Unsupported(format!("{} has no closed-form flow", h.name)));
        }
        let mut f = Self::new(h, Scheme::Rk4, DEFAULT_STEP)?;
        Arc::get_mut(&mut f.inner).expect("fresh flow").exact = true;
        Ok(f)
    }

    /// Closed-form flow when available, default numerical scheme otherwise.
    pub fn best(h: &Hamiltonian) -> Result<Self> {
        if h.exact_flow().is_some() {
            Self::exact(h)
        } else {
            Self::with_defaults(h)
        }
    }

    /// Report an escape when the trajectory leaves `b` (Euclidean charts).
    pub fn with_chart_box(mut self, b: BoxRegion) -> Self {
        let inner = FlowInner {
            ham: self.inner.ham.clone(),
            scheme: self.inner.scheme,
            step: self.inner.step,
            exact: self.inner.exact,
            chart_box: Some(b),
            cache: Mutex::new(HashMap::new()),
        };
        self.inner = Arc::new(inner);
        self
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.inner.ham
    }

    pub fn scheme(&self) -> Scheme {
        self.inner.scheme
    }

    pub fn step(&self) -> f64 {
        self.inner.step
    }

    pub fn is_exact(&self) -> bool {
        self.inner.exact
    }

    /// Image of `x` under the flow from time `t0` to time `t1`.
    pub fn map(&self, x: &[f64], t0: f64, t1: f64) -> Result<Vec<f64>> {
        let h = &self.inner.ham;
        if self.inner.exact {
            h.check_time(t0)?;
            h.check_time(t1)?;
            let e = h.exact_flow().expect("exact flow present");
            return Ok(e(x, t0, t1));
        }
        let tr = integrate_impl(h, x, t0, t1, self.inner.scheme, self.inner.step, self.inner.chart_box.as_ref(), false)?;
        Ok(tr.end().to_vec())
    }

    /// Image together with a Richardson error estimate from a run at twice the step.
    pub fn map_with_error(&self, x: &[f64], t0: f64, t1: f64) -> Result<(Vec<f64>, f64)> {
        if self.inner.exact {
            return Ok((self.map(x, t0, t1)?, 0.0));
        }
        let fine = self.map(x, t0, t1)?;
        let coarse = FlowMap::new(&self.inner.ham, self.inner.scheme, 2.0 * self.inner.step)?.map(x, t0, t1)?;
        let diff = self.inner.ham.manifold.distance(&fine, &coarse);
        Ok((fine, diff / (2f64.powi(self.inner.scheme.order()) - 1.0)))
    }

    /// Full trajectory, cached by start point and time span.
    pub fn trajectory(&self, x: &[f64], t0: f64, t1: f64) -> Result<Arc<Trajectory>> {
        let key: CacheKey = (x.iter().map(|c| c.to_bits()).collect(), t0.to_bits(), t1.to_bits());
        if let Some(tr) = self.inner.cache.lock().expect("cache lock").get(&key) {
            return Ok(tr.clone());
        }
        let tr = if self.inner.exact {
            let n = step_count(t0, t1, self.inner.step);
            let e = self.inner.ham.exact_flow().expect("exact flow present");
            let times: Vec<f64> = (0..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect();
            let points = times.iter().map(|t| e(x, t0, *t)).collect();
            Trajectory { times, points, max_drift: 0.0 }
        } else {
            integrate_impl(
                &self.inner.ham,
                x,
                t0,
                t1,
                self.inner.scheme,
                self.inner.step,
                self.inner.chart_box.as_ref(),
                true,
            )?
        };
        let tr = Arc::new(tr);
        self.inner.cache.lock().expect("cache lock").entry(key).or_insert_with(|| tr.clone());
        Ok(tr)
    }

    pub fn cached_trajectories(&self) -> usize {
        self.inner.cache.lock().expect("cache lock").len()
    }
}

/// Linearized flow along a fixed point.
#[derive(Clone, Debug)]
pub struct MonodromyMatrix {
    pub base: Vec<f64>,
    pub times: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
}

impl MonodromyMatrix {
    pub fn last(&self) -> &DMatrix<f64> {
        self.mats.last().expect("monodromy has at least one sample")
    }

    /// Matrix at the sample nearest to `t`.
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.mats[i]
    }
}

/// Check that `x` is fixed for all sampled times in `[t0, t1]`.
pub fn check_fixed_point(f: &Hamiltonian, x: &[f64], t0: f64, t1: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for k in 0..=16 {
        let t = t0 + (t1 - t0) * k as f64 / 16.0;
        worst = worst.max(norm(&f.sgrad(x, t)?));
    }
    if worst > 1e-8 {
        return Err(HoferError::CheckFailed { context: "base point is not fixed by the flow".into(), residual: worst });
    }
    Ok(())
}

/// Solve `M' = DX_t(x) M`, `M(t0) = I` along a fixed point from `t0` to `t1`
/// with RK4 at step at most `step`. On the sphere the matrices act on an
/// oriented orthonormal tangent frame.
pub fn monodromy_between(f: &Hamiltonian, x: &[f64], t0: f64, t1: f64, step: f64) -> Result<MonodromyMatrix> {
    check_fixed_point(f, x, t0.min(t1), t0.max(t1))?;
    let a_of = |t: f64| f.field_derivative(x, t);
    let d = f.manifold.dim();
    let mut m = DMatrix::<f64>::identity(d, d);
    let mut times = vec![t0];
    let mut mats = vec![m.clone()];
    if t1 == t0 {
        return Ok(MonodromyMatrix { base: x.to_vec(), times, mats });
    }
    let n = step_count(t0, t1, step);
    let dt = (t1 - t0) / n as f64;
    let constant = if f.autonomous { Some(a_of(t0)?) } else { None };
    for i in 0..n {
        let t = t0 + dt * i as f64;
        let (a1, a2, a3) = match &constant {
            Some(a) => (a.clone(), a.clone(), a.clone()),
            None => (a_of(t)?, a_of(t + 0.5 * dt)?, a_of(t + dt)?),
        };
        let k1 = &a1 * &m;
        let k2 = &a2 * (&m + &k1 * (0.5 * dt));
        let k3 = &a2 * (&m + &k2 * (0.5 * dt));
        let k4 = &a3 * (&m + &k3 * dt);
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        times.push(t + dt);
        mats.push(m.clone());
    }
    Ok(MonodromyMatrix { base: x.to_vec(), times, mats })
}

pub fn monodromy(f: &Hamiltonian, x: &[f64], t1: f64) -> Result<MonodromyMatrix> {
    monodromy_between(f, x, f.time_interval.0, t1, DEFAULT_STEP)
}

/// Matrix of the symplectic form in the coordinate (or oriented frame) basis.
pub fn omega_matrix(d: usize) -> DMatrix<f64> {
    let n = d / 2;
    let mut o = DMatrix::zeros(d, d);
    for j in 0..n {
        o[(j, n + j)] = 1.0;
        o[(n + j, j)] = -1.0;
    }
    o
}

/// Jacobian of the time-`t` map at `x` by central differences, written in
/// chart coordinates (canonical) or oriented tangent frames (sphere).
pub fn flow_jacobian(flow: &FlowMap, x: &[f64], t0: f64, t1: f64, h: f64) -> Result<DMatrix<f64>> {
    let m = flow.hamiltonian().manifold;
    let d = m.dim();
    let mut jac = DMatrix::zeros(d, d);
    if m.is_sphere() {
        let (e1, e2) = sphere_frame(x);
        let y = flow.map(x, t0, t1)?;
        let (f1, f2) = sphere_frame(&y);
        for (j, e) in [e1, e2].iter().enumerate() {
            let xp = m.retract(x, &e.map(|c| c * h));
            let xm = m.retract(x, &e.map(|c| -c * h));
            let yp = flow.map(&xp, t0, t1)?;
            let ym = flow.map(&xm, t0, t1)?;
            let dy: Vec<f64> = (0..3).map(|i| (yp[i] - ym[i]) / (2.0 * h.atan())).collect();
            jac[(0, j)] = crate::geometry::dot(&f1, &dy);
            jac[(1, j)] = crate::geometry::dot(&f2, &dy);
        }
    } else {
        let mut xp = x.to_vec();
        for j in 0..d {
            xp[j] = x[j] + h;
            let yp = flow.map(&xp, t0, t1)?;
            xp[j] = x[j] - h;
            let ym = flow.map(&xp, t0, t1)?;
            xp[j] = x[j];
            for i in 0..d {
                jac[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
            }
        }
    }
    Ok(jac)
}

/// Largest entry of `J^T Omega J - Omega` over a grid for the time-`t` map.
pub fn symplecticity_report(flow: &FlowMap, g: &Grid, t: f64) -> Result<Report> {
    let d = flow.hamiltonian().manifold.dim();
    let om = omega_matrix(d);
    let t0 = flow.hamiltonian().time_interval.0;
    let defects: Vec<Result<f64>> = g
        .points
        .par_iter()
        .map(|x| {
            let j = flow_jacobian(flow, x, t0, t, 1e-5)?;
            let r = j.transpose() * &om * &j - &om;
            Ok(r.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for v in defects {
        worst = worst.max(v?);
    }
    let mut rep = Report::new("symplecticity", "Hamiltonian flows preserve the symplectic form");
    rep.scalar("max_defect", worst)
        .scalar("time", t)
        .scalar("step", flow.step())
        .scalar("grid_points", g.len() as f64);
    rep.config = serde_json::json!({ "scheme": flow.scheme(), "step": flow.step(), "hamiltonian": flow.hamiltonian().name });
    Ok(rep)
}

/// Energy drift `max_t |F(x(t)) - F(x0)|` along one trajectory.
pub fn conservation_report(flow: &FlowMap, x0: &[f64], t1: f64) -> Result<Report> {
    let h = flow.hamiltonian();
    if !h.autonomous {
        return Err(HoferError::Unsupported("energy conservation needs an autonomous Hamiltonian".into()));
    }
    let t0 = h.time_interval.0;
    let tr = flow.trajectory(x0, t0, t1)?;
    let e0 = h.eval(x0, t0);
    let drift = tr.points.iter().zip(&tr.times).map(|(x, t)| (h.eval(x, *t) - e0).abs()).fold(0.0, f64::max);
    let mut rep = Report::new("conservation", "energy is conserved along autonomous flows");
    rep.scalar("max_energy_drift", drift).scalar("max_sphere_drift", tr.max_drift);
    rep.config = serde_json::json!({ "scheme": flow.scheme(), "step": flow.step(), "hamiltonian": h.name });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_grid, ManifoldSpec};
    use crate::hamiltonian::{catalog, CatalogParams};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params(kv: &[(&str, f64)]) -> CatalogParams {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn osc(lam: f64) -> Hamiltonian {
        catalog("oscillator", &params(&[("lambda", lam)])).unwrap().without_exact_flow()
    }

    #[test]
    fn translation_flow() {
        let u = 0.37;
        let h = catalog("translation_gen", &params(&[("u", u)])).unwrap().without_exact_flow();
        for scheme in [Scheme::Rk4, Scheme::ImplicitMidpoint] {
            let tr = integrate_flow(&h, &[0.2, -0.1], 0.0, 1.0, scheme, 1e-2).unwrap();
            let y = tr.end();
            assert!((y[0] - 0.2).abs() < 1e-9 && (y[1] - (-0.1 + u)).abs() < 1e-9);
        }
    }

    #[test]
    fn full_turn_on_sphere() {
        let h = catalog("rotation_1", &CatalogParams::new()).unwrap().without_exact_flow();
        let x = [0.6, 0.0, 0.8];
        // the midpoint rule lags in phase by about (h w)^2 w / 12 per unit time
        for (scheme, step) in [(Scheme::Rk4, 1e-3), (Scheme::ImplicitMidpoint, 2.5e-4)] {
            let tr = integrate_flow(&h, &x, 0.0, 1.0, scheme, step).unwrap();
            assert!(ManifoldSpec::sphere2().distance(tr.end(), &x) < 1e-5);
        }
    }

    #[test]
    fn oscillator_quarter_period() {
        let h = osc(1.0);
        for (scheme, step) in [(Scheme::Rk4, 1e-3), (Scheme::ImplicitMidpoint, 2.5e-4)] {
            let tr = integrate_flow(&h, &[0.5, 0.2], 0.0, 0.25, scheme, step).unwrap();
            // e^{2 pi i / 4} z = i z
            let y = tr.end();
            assert!((y[0] + 0.2).abs() < 1e-6 && (y[1] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn escape_is_reported() {
        let h = catalog("translation_gen", &params(&[("u", 2.0)])).unwrap().without_exact_flow();
        let flow = FlowMap::new(&h, Scheme::Rk4, 1e-2).unwrap().with_chart_box(BoxRegion::square(-1.0, 1.0, 2));
        assert!(matches!(flow.map(&[0.0, 0.0], 0.0, 1.0), Err(HoferError::Escape { .. })));
    }

    #[test]
    fn implicit_midpoint_non_convergence() {
        // stiff linear field with a huge step: the fixed-point map does not contract
        let h = osc(50.0);
        let err = integrate_flow(&h, &[1.0, 0.0], 0.0, 0.5, Scheme::ImplicitMidpoint, 0.5).unwrap_err();
        assert!(matches!(err, HoferError::NonConvergence { .. }));
    }

    #[test]
    fn half_step_within_error_estimate() {
        let h = catalog("height", &params(&[("tilt", 0.7)])).unwrap().without_exact_flow();
        let x = [0.0, 0.6, 0.8];
        for scheme in [Scheme::Rk4, Scheme::ImplicitMidpoint] {
            let flow = FlowMap::new(&h, scheme, 2e-2).unwrap();
            let (y, err) = flow.map_with_error(&x, 0.0, 1.0).unwrap();
            let half = FlowMap::new(&h, scheme, 1e-2).unwrap().map(&x, 0.0, 1.0).unwrap();
            assert!(ManifoldSpec::sphere2().distance(&y, &half) <= 16.0 * err);
        }
    }

    #[test]
    fn composition_and_reversal() {
        let t = ManifoldSpec::torus2();
        let h = Hamiltonian::new(t, |x, s| (2.0 * PI * x[0]).sin() * (1.0 + s) + 0.3 * (2.0 * PI * x[1]).cos());
        let flow = FlowMap::new(&h, Scheme::Rk4, 1e-3).unwrap();
        let x = [0.3, 0.7];
        let (direct, err) = flow.map_with_error(&x, 0.0, 1.0).unwrap();
        let mid = flow.map(&x, 0.0, 0.4).unwrap();
        let two = flow.map(&mid, 0.4, 1.0).unwrap();
        assert!(t.distance(&direct, &two) <= 2.0 * err.max(1e-13));
        let g = sample_grid(&t, 8, None).unwrap();
        for p in &g.points {
            let y = flow.map(p, 0.0, 1.0).unwrap();
            let z = flow.map(&y, 1.0, 0.0).unwrap();
            assert!(t.distance(&z, p) < 1e-6);
        }
    }

    #[test]
    fn trajectory_cache_is_shared() {
        let flow = FlowMap::new(&osc(0.5), Scheme::ImplicitMidpoint, 1e-2).unwrap();
        let a = flow.trajectory(&[0.1, 0.2], 0.0, 1.0).unwrap();
        let clone = flow.clone();
        let b = clone.trajectory(&[0.1, 0.2], 0.0, 1.0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(flow.cached_trajectories(), 1);
        assert_eq!(a.points.len(), 101);
    }

    #[test]
    fn monodromy_examples() {
        for lam in [0.5, 1.0, 1.5] {
            let m = monodromy(&osc(lam), &[0.0, 0.0], 1.0).unwrap();
            for (t, mt) in m.times.iter().zip(&m.mats).step_by(97) {
                let (s, c) = (2.0 * PI * lam * t).sin_cos();
                let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
                assert!((mt - r).amax() < 1e-6);
                assert!((mt.determinant() - 1.0).abs() < 1e-6);
            }
        }
        let flat = Hamiltonian::autonomous(ManifoldSpec::euclidean(1), |x| x[0].powi(3) + x[1].powi(4));
        let m = monodromy(&flat, &[0.0, 0.0], 1.0).unwrap();
        assert!((m.last() - DMatrix::identity(2, 2)).amax() < 1e-6);
        assert!(monodromy(&osc(1.0), &[0.1, 0.0], 1.0).is_err());
    }

    #[test]
    fn monodromy_on_sphere_and_reversed() {
        let h = catalog("rotation_k", &params(&[("k", 0.25)])).unwrap();
        let m = monodromy(&h, &[0.0, 0.0, 1.0], 1.0).unwrap();
        // quarter turn of the tangent plane
        assert!((m.last().determinant() - 1.0).abs() < 1e-6);
        assert!(m.last().trace().abs() < 1e-6);
        let tdep = Hamiltonian::new(ManifoldSpec::euclidean(1), |x, t| (1.0 + t) * x[0] * x[0] + (2.0 - t) * x[1] * x[1] + t * x[0] * x[1]);
        let fwd = monodromy_between(&tdep, &[0.0, 0.0], 0.0, 1.0, 1e-3).unwrap();
        let bwd = monodromy_between(&tdep, &[0.0, 0.0], 1.0, 0.0, 1e-3).unwrap();
        let inv = fwd.last().clone().try_inverse().unwrap();
        assert!((bwd.last() - inv).amax() < 1e-5);
    }

    #[test]
    fn symplecticity_audits() {
        let m = ManifoldSpec::euclidean(1);
        let g = sample_grid(&m, 5, None).unwrap();
        let mid = FlowMap::new(&osc(1.0), Scheme::ImplicitMidpoint, 1e-3).unwrap();
        let rep = symplecticity_report(&mid, &g, 1.0).unwrap();
        assert!(rep.get("max_defect").unwrap() <= 1e-6);
        let id = FlowMap::new(&Hamiltonian::zero(m).without_exact_flow(), Scheme::Rk4, 1e-2).unwrap();
        assert!(symplecticity_report(&id, &g, 1.0).unwrap().get("max_defect").unwrap() < 1e-10);
        let rk = FlowMap::new(&osc(1.0), Scheme::Rk4, 1e-1).unwrap();
        let drift = symplecticity_report(&rk, &g, 1.0).unwrap().get("max_defect").unwrap();
        assert!(drift > 0.0 && drift < 1e-2);
    }

    #[test]
    fn conservation_audits() {
        let mid = FlowMap::new(&osc(1.0), Scheme::ImplicitMidpoint, 1e-3).unwrap();
        assert!(conservation_report(&mid, &[0.4, -0.3], 1.0).unwrap().get("max_energy_drift").unwrap() <= 1e-9);
        let s = FlowMap::new(&catalog("height", &params(&[("tilt", 0.5)])).unwrap().without_exact_flow(), Scheme::Rk4, 1e-3).unwrap();
        let x = [0.0, 0.6, 0.8];
        let tr = s.trajectory(&x, 0.0, 1.0).unwrap();
        let a = [0.5f64.sin(), 0.0, 0.5f64.cos()];
        let e0 = crate::geometry::dot(&a, &x);
        assert!(tr.points.iter().all(|p| (crate::geometry::dot(&a, p) - e0).abs() <= 1e-6));
        let z = FlowMap::new(&Hamiltonian::zero(ManifoldSpec::torus2()).without_exact_flow(), Scheme::Rk4, 1e-2).unwrap();
        assert_eq!(conservation_report(&z, &[0.1, 0.2], 1.0).unwrap().get("max_energy_drift").unwrap(), 0.0);
        let td = FlowMap::new(&Hamiltonian::new(ManifoldSpec::torus2(), |x, t| x[0] * t), Scheme::Rk4, 1e-2).unwrap();
        assert!(conservation_report(&td, &[0.1, 0.2], 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn backward_forward_identity(p in -1.0f64..1.0, q in -1.0f64..1.0, lam in 0.1f64..2.0) {
            let flow = FlowMap::new(&osc(lam), Scheme::Rk4, 1e-3).unwrap();
            let y = flow.map(&[p, q], 0.0, 1.0).unwrap();
            let z = flow.map(&y, 1.0, 0.0).unwrap();
            prop_assert!((z[0] - p).abs() < 1e-6 && (z[1] - q).abs() < 1e-6);
        }

        #[test]
        fn monodromy_is_unimodular(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let h = Hamiltonian::new(ManifoldSpec::euclidean(1), move |x, t| a * x[0] * x[0] + b * (1.0 + t) * x[0] * x[1] + c * x[1] * x[1]);
            let m = monodromy_between(&h, &[0.0, 0.0], 0.0, 1.0, 1e-3).unwrap();
            prop_assert!((m.last().determinant() - 1.0).abs() < 1e-6);
        }
    }
}

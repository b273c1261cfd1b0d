//! Time-dependent Hamiltonians, symplectic gradients and the closed-form
//! algebra of Hamiltonian paths (products, inverses, time changes, cutoffs).
//!
//! Sign conventions: `i_xi Omega = -dF` defines `sgrad F`, which reads
//! `(-dF/dq, dF/dp)` in canonical charts; the Poisson bracket is
//! `{F, G} = Omega(sgrad G, sgrad F) = -dG(sgrad F)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::error::{HoferError, Result};
use crate::flow::FlowMap;
use crate::geometry::{cross, dot, mean_value, sphere_frame, wrap_half, BoxRegion, Grid, ManifoldKind, ManifoldSpec};

pub type EvalFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// Writes the ambient gradient into the output slice.
pub type GradFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
pub type HessFn = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;
/// Closed-form flow `(x, t0, t1) -> f_{t0 -> t1}(x)`.
pub type ExactFlowFn = Arc<dyn Fn(&[f64], f64, f64) -> Vec<f64> + Send + Sync>;

pub const FD_GRAD_STEP: f64 = 1e-5;
pub const FD_HESS_STEP: f64 = 1e-4;
const INTERVAL_SLACK: f64 = 1e-12;

#[derive(Clone)]
pub struct Hamiltonian {
    pub manifold: ManifoldSpec,
    eval: EvalFn,
    grad: Option<GradFn>,
    hess: Option<HessFn>,
    exact_flow: Option<ExactFlowFn>,
    pub support: Option<BoxRegion>,
    pub time_interval: (f64, f64),
    pub autonomous: bool,
    pub name: String,
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("name", &self.name)
            .field("manifold", &self.manifold)
            .field("time_interval", &self.time_interval)
            .field("autonomous", &self.autonomous)
            .field("support", &self.support)
            .field("analytic_grad", &self.grad.is_some())
            .finish()
    }
}

impl Hamiltonian {
    /// Time-dependent Hamiltonian on `[0, 1]` from a plain closure.
    pub fn new<F>(manifold: ManifoldSpec, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            manifold,
            eval: Arc::new(f),
            grad: None,
            hess: None,
            exact_flow: None,
            support: None,
            time_interval: (0.0, 1.0),
            autonomous: false,
            name: "anonymous".into(),
        }
    }

    /// Time-independent Hamiltonian.
    pub fn autonomous<F>(manifold: ManifoldSpec, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut h = Self::new(manifold, move |x, _| f(x));
        h.autonomous = true;
        h
    }

    pub fn zero(manifold: ManifoldSpec) -> Self {
        let d = manifold.coord_len();
        Self::autonomous(manifold, |_| 0.0)
            .with_grad(move |_, _, g| g[..d].iter_mut().for_each(|c| *c = 0.0))
            .with_exact_flow(|x, _, _| x.to_vec())
            .named("zero")
    }

    pub fn with_grad<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_hess<H>(mut self, h: H) -> Self
    where
        H: Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(h));
        self
    }

    pub fn with_exact_flow<E>(mut self, e: E) -> Self
    where
        E: Fn(&[f64], f64, f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.exact_flow = Some(Arc::new(e));
        self
    }

    pub fn with_support(mut self, b: BoxRegion) -> Self {
        self.support = Some(b);
        self
    }

    pub fn with_interval(mut self, a: f64, b: f64) -> Self {
        self.time_interval = (a, b);
        self
    }

    pub fn named(mut self, n: impl Into<String>) -> Self {
        self.name = n.into();
        self
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn exact_flow(&self) -> Option<&ExactFlowFn> {
        self.exact_flow.as_ref()
    }

    /// Drop the closed-form flow so that flows are integrated numerically.
    pub fn without_exact_flow(mut self) -> Self {
        self.exact_flow = None;
        self
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let (a, b) = self.time_interval;
        if t < a - INTERVAL_SLACK || t > b + INTERVAL_SLACK || !t.is_finite() {
            return Err(HoferError::OutOfInterval { t, a, b });
        }
        Ok(())
    }

    /// Raw evaluation without interval or finiteness checks.
    #[inline]
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    /// Checked evaluation.
    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_time(t)?;
        let v = (self.eval)(x, t);
        if !v.is_finite() {
            return Err(HoferError::NonFinite(format!("{} at t = {t}", self.name)));
        }
        Ok(v)
    }

    /// Ambient gradient (tangential on the sphere when computed by differences).
    pub fn gradient_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.check_time(t)?;
        if let Some(g) = &self.grad {
            g(x, t, out);
        } else if self.manifold.is_sphere() {
            let (e1, e2) = sphere_frame(x);
            let h = FD_GRAD_STEP;
            let mut d = [0.0; 2];
            for (k, e) in [e1, e2].iter().enumerate() {
                let mut xp = [0.0; 3];
                let mut xm = [0.0; 3];
                for i in 0..3 {
                    xp[i] = x[i] + h * e[i];
                    xm[i] = x[i] - h * e[i];
                }
                let np = crate::geometry::norm(&xp);
                let nm = crate::geometry::norm(&xm);
                xp.iter_mut().for_each(|c| *c /= np);
                xm.iter_mut().for_each(|c| *c /= nm);
                // the retraction moves by angle atan(h)
                d[k] = (self.eval(&xp, t) - self.eval(&xm, t)) / (2.0 * h.atan());
            }
            for i in 0..3 {
                out[i] = d[0] * e1[i] + d[1] * e2[i];
            }
        } else {
            let h = FD_GRAD_STEP;
            let mut y = x.to_vec();
            for i in 0..x.len() {
                y[i] = x[i] + h;
                let fp = self.eval(&y, t);
                y[i] = x[i] - h;
                let fm = self.eval(&y, t);
                y[i] = x[i];
                out[i] = (fp - fm) / (2.0 * h);
            }
        }
        if out.iter().any(|c| !c.is_finite()) {
            return Err(HoferError::NonFinite(format!("gradient of {} at t = {t}", self.name)));
        }
        Ok(())
    }

    pub fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, t, &mut g)?;
        Ok(g)
    }

    /// Symplectic gradient written into `out`.
    pub fn sgrad_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if self.manifold.is_sphere() {
            let mut g = [0.0; 3];
            self.gradient_into(x, t, &mut g)?;
            let c = cross(x, &g);
            let s = self.manifold.area_scale;
            for i in 0..3 {
                out[i] = c[i] / s;
            }
        } else {
            self.gradient_into(x, t, out)?;
            let n = x.len() / 2;
            for j in 0..n {
                let gp = out[j];
                out[j] = -out[n + j];
                out[n + j] = gp;
            }
        }
        Ok(())
    }

    pub fn sgrad(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut v = vec![0.0; x.len()];
        self.sgrad_into(x, t, &mut v)?;
        Ok(v)
    }

    /// Hessian in the symplectic frame at `x`: the coordinate Hessian in
    /// canonical charts, and on the sphere the Hessian of `F` pulled back by
    /// the retraction along an oriented orthonormal frame rescaled so that the
    /// symplectic form is standard.
    pub fn hessian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        if self.manifold.is_sphere() {
            let (e1, e2) = sphere_frame(x);
            let s = self.manifold.area_scale.sqrt();
            let b = [e1.map(|c| c / s), e2.map(|c| c / s)];
            // exponential map, so the chart is normal at x
            let g =|u: f64, v: f64| {
                let w: Vec<f64> = (0..3).map(|i| u * b[0][i] + v * b[1][i]).collect();
                let a = crate::geometry::norm(&w);
                let mut y = [x[0], x[1], x[2]];
                if a > 0.0 {
                    for i in 0..3 {
                        y[i] = x[i] * a.cos() + w[i] / a * a.sin();
                    }
                }
                self.eval(&y, t)
            };
            let h = FD_HESS_STEP;
            let f0 = g(0.0, 0.0);
            let huu = (g(h, 0.0) - 2.0 * f0 + g(-h, 0.0)) / (h * h);
            let hvv = (g(0.0, h) - 2.0 * f0 + g(0.0, -h)) / (h * h);
            let huv = (g(h, h) - g(h, -h) - g(-h, h) + g(-h, -h)) / (4.0 * h * h);
            return Ok(DMatrix::from_row_slice(2, 2, &[huu, huv, huv, hvv]));
        }
        if let Some(hf) = &self.hess {
            return Ok(hf(x, t));
        }
        let d = x.len();
        let h = FD_HESS_STEP;
        let mut m = DMatrix::zeros(d, d);
        if let Some(gf) = &self.grad {
            let mut y = x.to_vec();
            let mut gp = vec![0.0; d];
            let mut gm = vec![0.0; d];
            for j in 0..d {
                y[j] = x[j] + h;
                gf(&y, t, &mut gp);
                y[j] = x[j] - h;
                gf(&y, t, &mut gm);
                y[j] = x[j];
                for i in 0..d {
                    m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            let sym = (&m + m.transpose()) * 0.5;
            return Ok(sym);
        }
        let f0 = self.eval(x, t);
        let mut y = x.to_vec();
        for i in 0..d {
            y[i] = x[i] + h;
            let fp = self.eval(&y, t);
            y[i] = x[i] - h;
            let fm = self.eval(&y, t);
            y[i] = x[i];
            m[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let mut v = 0.0;
                for (si, sj, sg) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    v += sg * self.eval(&y, t);
                }
                y[i] = x[i];
                y[j] = x[j];
                m[(i, j)] = v / (4.0 * h * h);
                m[(j, i)] = m[(i, j)];
            }
        }
        if m.iter().any(|c| !c.is_finite()) {
            return Err(HoferError::NonFinite(format!("Hessian of {}", self.name)));
        }
        Ok(m)
    }

    /// Derivative of the Hamiltonian vector field at `x` in the symplectic
    /// frame: `J * Hess` with `J = [[0, -I], [I, 0]]`.
    pub fn field_derivative(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let h = self.hessian(x, t)?;
        Ok(j_times(&h))
    }
}

/// `J * A` for `J = [[0, -I], [I, 0]]`.
pub fn j_times(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let n = d / 2;
    let mut out = DMatrix::zeros(d, a.ncols());
    for c in 0..a.ncols() {
        for j in 0..n {
            out[(j, c)] = -a[(n + j, c)];
            out[(n + j, c)] = a[(j, c)];
        }
    }
    out
}

/// Evidence that a Hamiltonian is normalized.
#[derive(Clone, Debug, PartialEq)]
pub enum NormalizationEvidence {
    /// Closed manifold: `(t, mean after normalization)` at sampled times.
    ZeroMean { samples: Vec<(f64, f64)> },
    /// Open manifold: fixed compact support.
    CompactSupport(BoxRegion),
}

#[derive(Clone, Debug)]
pub struct NormalizedHamiltonian {
    pub inner: Hamiltonian,
    pub evidence: NormalizationEvidence,
}

impl Deref for NormalizedHamiltonian {
    type Target = Hamiltonian;
    fn deref(&self) -> &Hamiltonian {
        &self.inner
    }
}

const EVIDENCE_TIMES: usize = 9;

fn evidence_times(h: &Hamiltonian) -> Vec<f64> {
    let (a, b) = h.time_interval;
    if h.autonomous {
        vec![a]
    } else {
        (0..EVIDENCE_TIMES).map(|i| a + (b - a) * i as f64 / (EVIDENCE_TIMES - 1) as f64).collect()
    }
}

/// Normalize: subtract the per-time mean on closed manifolds, validate the
/// declared support on open ones.
pub fn normalize(f: &Hamiltonian, m: &ManifoldSpec, g: &Grid) -> Result<NormalizedHamiltonian> {
    if f.manifold.kind != m.kind {
        return Err(HoferError::InvalidInput(format!(
            "Hamiltonian lives on {}, normalization requested on {}",
            f.manifold.name(),
            m.name()
        )));
    }
    if m.closed() {
        let mut h = f.clone();
        if f.autonomous {
            let (a, _) = f.time_interval;
            let c = mean_value(m, |x| f.eval(x, a), g)?;
            let inner = f.eval.clone();
            h.eval = Arc::new(move |x, t| inner(x, t) - c);
        } else {
            let cache: Arc<Mutex<BTreeMap<u64, f64>>> = Arc::new(Mutex::new(BTreeMap::new()));
            let inner = f.eval.clone();
            let pts = Arc::new(g.clone());
            let m2 = *m;
            h.eval = Arc::new(move |x, t| {
                let key = t.to_bits();
                let cached = cache.lock().map(|c| c.get(&key).copied()).unwrap_or(None);
                let c = match cached {
                    Some(c) => c,
                    None => {
                        let c = mean_value(&m2, |y| inner(y, t), &pts).unwrap_or(f64::NAN);
                        if let Ok(mut guard) = cache.lock() {
                            guard.insert(key, c);
                        }
                        c
                    }
                };
                inner(x, t) - c
            });
        }
        let mut samples = Vec::new();
        for t in evidence_times(f) {
            let mu = mean_value(m, |x| h.eval(x, t), g)?;
            if mu.abs() > 1e-6 {
                return Err(HoferError::CheckFailed { context: "mean after normalization".into(), residual: mu });
            }
            samples.push((t, mu));
        }
        Ok(NormalizedHamiltonian { inner: h, evidence: NormalizationEvidence::ZeroMean { samples } })
    } else {
        let b = f.support.clone().ok_or_else(|| {
            HoferError::InvalidInput(format!("{} on open {} needs a declared support box", f.name, m.name()))
        })?;
        validate_support(f, &b)?;
        Ok(NormalizedHamiltonian { inner: f.clone(), evidence: NormalizationEvidence::CompactSupport(b) })
    }
}

/// Check that `f` vanishes on a shell of samples on and just outside the box.
pub fn validate_support(f: &Hamiltonian, b: &BoxRegion) -> Result<()> {
    let d = b.dim();
    if d != f.manifold.dim() {
        return Err(HoferError::InvalidInput("support box dimension mismatch".into()));
    }
    let per_edge: usize = if d <= 2 { 64 } else { 6 };
    let size: f64 = b.intervals.iter().map(|[a, c]| c - a).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for shell in [b.clone(), b.expanded(1e-3 * size.max(1e-6))] {
        for face_axis in 0..d {
            let [lo, hi] = b.intervals[face_axis];
            if f.manifold.is_periodic_axis(face_axis) && hi - lo >= 1.0 {
                continue;
            }
            for side in 0..2 {
                let n_other = per_edge.pow((d - 1) as u32);
                for k in 0..n_other {
                    let mut x = vec![0.0; d];
                    let mut rem = k;
                    for (ax, xi) in x.iter_mut().enumerate() {
                        let [a, c] = shell.intervals[ax];
                        if ax == face_axis {
                            *xi = if side == 0 { a } else { c };
                        } else {
                            let i = rem % per_edge;
                            rem /= per_edge;
                            *xi = a + (c - a) * i as f64 / (per_edge - 1) as f64;
                        }
                    }
                    for t in evidence_times(f) {
                        worst = worst.max(f.eval(&x, t).abs());
                    }
                }
            }
        }
    }
    if !(worst <= 1e-12) {
        return Err(HoferError::CheckFailed { context: format!("{} does not vanish on its support boundary", f.name), residual: worst });
    }
    Ok(())
}

/// `{F, G} = -dG(sgrad F)`.
pub fn poisson_bracket(f: &Hamiltonian, g: &Hamiltonian, x: &[f64], t: f64) -> Result<f64> {
    let gf = f.gradient(x, t)?;
    let gg = g.gradient(x, t)?;
    if f.manifold.is_sphere() {
        let c = cross(&gf, &gg);
        Ok(-dot(x, &c) / f.manifold.area_scale)
    } else {
        let n = x.len() / 2;
        let mut s = 0.0;
        for j in 0..n {
            s += gg[j] * gf[n + j] - gg[n + j] * gf[j];
        }
        Ok(s)
    }
}

fn check_flow_matches(f: &Hamiltonian, flow: &FlowMap) -> Result<()> {
    let h = flow.hamiltonian();
    if h.manifold.kind != f.manifold.kind {
        return Err(HoferError::CheckFailed { context: "flow manifold differs from the Hamiltonian".into(), residual: f64::INFINITY });
    }
    let probes = probe_points(&f.manifold);
    let (a, b) = f.time_interval;
    let mut worst: f64 = 0.0;
    for x in &probes {
        for k in 0..5 {
            let t = a + (b - a) * k as f64 / 4.0;
            worst = worst.max((f.eval(x, t) - h.eval(x, t)).abs());
        }
    }
    if !(worst <= 1e-9) {
        return Err(HoferError::CheckFailed { context: "flow does not integrate this Hamiltonian".into(), residual: worst });
    }
    Ok(())
}

/// A few deterministic points of the manifold for consistency probes.
pub fn probe_points(m: &ManifoldSpec) -> Vec<Vec<f64>> {
    let raw = [[0.13, 0.71, 0.4], [0.52, 0.29, -0.8], [0.87, 0.44, 0.1], [0.31, 0.06, 0.7]];
    match m.kind {
        ManifoldKind::Sphere2 => raw
            .iter()
            .map(|v| {
                let r = crate::geometry::norm(v);
                v.iter().map(|c| c / r).collect()
            })
            .collect(),
        _ => {
            let d = m.dim();
            raw.iter()
                .map(|v| (0..d).map(|i| v[i % 3] - if m.closed() { 0.0 } else { 0.3 }).collect())
                .collect()
        }
    }
}

const PRODUCT_FD_STEP: f64 = 1e-4;

/// Hamiltonian of the product path `f_t g_t`: `F(x,t) + G(f_t^{-1} x, t)`.
pub fn product_hamiltonian(
    f: &NormalizedHamiltonian,
    g: &NormalizedHamiltonian,
    flow_f: &FlowMap,
) -> Result<Hamiltonian> {
    check_flow_matches(f, flow_f)?;
    if f.manifold.kind != g.manifold.kind {
        return Err(HoferError::InvalidInput("product of Hamiltonians on different manifolds".into()));
    }
    let (fi, gi, flow) = (f.inner.clone(), g.inner.clone(), flow_f.clone());
    let t0 = f.time_interval.0;
    let mut h = Hamiltonian::new(f.manifold, move |x, t| match flow.map(x, t, t0) {
        Ok(y) => fi.eval(x, t) + gi.eval(&y, t),
        Err(_) => f64::NAN,
    });
    // chain rule with a fourth order difference of the inverse map: differencing
    // the composition loses accuracy once f_t shears strongly
    let (fi, gi, flow, m) = (f.inner.clone(), g.inner.clone(), flow_f.clone(), f.manifold);
    h = h.with_grad(move |x, t, out| {
        let res = (|| -> Result<()> {
            let mut gf = vec![0.0; x.len()];
            fi.gradient_into(x, t, &mut gf)?;
            let y = flow.map(x, t, t0)?;
            let gg = gi.gradient(&y, t)?;
            let hstep = PRODUCT_FD_STEP;
            out.copy_from_slice(&gf);
            for e in m.tangent_basis(x) {
                let at = |c: f64| -> Result<Vec<f64>> {
                    let z: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + c * b).collect();
                    let mut z = z;
                    m.project(&mut z);
                    flow.map(&z, t, t0)
                };
                let (p2, p1, m1, m2) = (at(2.0 * hstep)?, at(hstep)?, at(-hstep)?, at(-2.0 * hstep)?);
                let mut dd = 0.0;
                for i in 0..y.len() {
                    let dy = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * hstep);
                    dd += gg[i] * dy;
                }
                if m.is_sphere() {
                    // the retraction moves by angle atan(c)
                    dd *= hstep / hstep.atan();
                }
                for i in 0..x.len() {
                    out[i] += dd * e[i];
                }
            }
            Ok(())
        })();
        if res.is_err() {
            out.iter_mut().for_each(|v| *v = f64::NAN);
        }
    });
    h.time_interval = f.time_interval;
    h.name = format!("({})#({})", f.name, g.name);
    Ok(h)
}

/// Largest distance between the flow of the product Hamiltonian and the
/// composition `f_t(g_t(x))` over `points` and `times`. The product flow is
/// integrated by RK4 with the given step.
pub fn product_formula_defect(
    f: &NormalizedHamiltonian,
    g: &NormalizedHamiltonian,
    points: &[Vec<f64>],
    times: &[f64],
    step: f64,
) -> Result<f64> {
    use rayon::prelude::*;
    let flow_f = FlowMap::best(f)?;
    let flow_g = FlowMap::best(g)?;
    let h = product_hamiltonian(f, g, &flow_f)?;
    let flow_h = FlowMap::new(&h, crate::flow::Scheme::Rk4, step)?;
    let t0 = f.time_interval.0;
    let m = f.manifold;
    // march through the times in order so each trajectory is integrated once
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let worst = points
        .par_iter()
        .map(|x| -> Result<f64> {
            let mut w: f64 = 0.0;
            let (mut a, mut ta) = (x.clone(), t0);
            for &t in &sorted {
                a = flow_h.map(&a, ta, t)?;
                ta = t;
                let b = flow_f.map(&flow_g.map(x, t0, t)?, t0, t)?;
                w = w.max(m.distance(&a, &b));
            }
            Ok(w)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// RK4 step for the product flow: `start` is halved until the flows at the
/// step and at half the step agree to `tol` on `probes` at `t_end`, so the
/// returned step carries an error of about `tol` there.
pub fn product_flow_step(
    f: &NormalizedHamiltonian,
    g: &NormalizedHamiltonian,
    probes: &[Vec<f64>],
    t_end: f64,
    start: f64,
    tol: f64,
) -> Result<f64> {
    if !(start > 0.0 && tol > 0.0) {
        return Err(HoferError::InvalidInput("step and tolerance must be positive".into()));
    }
    let flow_f = FlowMap::best(f)?;
    let h = product_hamiltonian(f, g, &flow_f)?;
    let t0 = f.time_interval.0;
    let run = |step: f64| -> Result<Vec<Vec<f64>>> {
        let fl = FlowMap::new(&h, crate::flow::Scheme::Rk4, step)?;
        probes.iter().map(|x| fl.map(x, t0, t_end)).collect()
    };
    let mut step = start;
    let mut coarse = run(step)?;
    let mut est = f64::INFINITY;
    for _ in 0..8 {
        let fine = run(0.5 * step)?;
        est = coarse.iter().zip(&fine).map(|(a, b)| f.manifold.distance(a, b)).fold(0.0, f64::max);
        if est <= tol {
            return Ok(step);
        }
        step *= 0.5;
        coarse = fine;
    }
    Err(HoferError::NonConvergence { context: "product flow step selection".into(), residual: est })
}

/// Hamiltonian of the inverse path `f_t^{-1}`: `-F(f_t x, t)`.
pub fn inverse_hamiltonian(f: &NormalizedHamiltonian, flow_f: &FlowMap) -> Result<Hamiltonian> {
    check_flow_matches(f, flow_f)?;
    let (fi, flow) = (f.inner.clone(), flow_f.clone());
    let t0 = f.time_interval.0;
    let mut h = Hamiltonian::new(f.manifold, move |x, t| match flow.map(x, t0, t) {
        Ok(y) => -fi.eval(&y, t),
        Err(_) => f64::NAN,
    });
    h.time_interval = f.time_interval;
    h.name = format!("inv({})", f.name);
    Ok(h)
}

/// Time change `t -> b(t)`: `b'(t) F(x, b(t))` on `[0, t_end]`.
pub fn reparametrize<B, D>(f: &NormalizedHamiltonian, b: B, bp: D, t_end: f64) -> Result<NormalizedHamiltonian>
where
    B: Fn(f64) -> f64 + Send + Sync + 'static,
    D: Fn(f64) -> f64 + Send + Sync + 'static,
{
    let b0 = b(0.0);
    if b0.abs() > 1e-14 {
        return Err(HoferError::InvalidInput(format!("time map must fix 0, b(0) = {b0}")));
    }
    if !(t_end > 0.0) {
        return Err(HoferError::InvalidInput("reparametrized interval must have positive length".into()));
    }
    let b = Arc::new(b);
    let bp = Arc::new(bp);
    let fi = f.inner.clone();
    let mut h = f.inner.clone();
    {
        let (fi, b, bp) = (fi.clone(), b.clone(), bp.clone());
        h.eval = Arc::new(move |x, t| bp(t) * fi.eval(x, b(t)));
    }
    h.grad = fi.grad.clone().map(|g| {
        let (b, bp) = (b.clone(), bp.clone());
        Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
            g(x, b(t), out);
            let s = bp(t);
            out.iter_mut().for_each(|c| *c *= s);
        }) as GradFn
    });
    h.hess = fi.hess.clone().map(|hf| {
        let (b, bp) = (b.clone(), bp.clone());
        Arc::new(move |x: &[f64], t: f64| hf(x, b(t)) * bp(t)) as HessFn
    });
    h.exact_flow = fi.exact_flow.clone().map(|e| {
        let b = b.clone();
        Arc::new(move |x: &[f64], t0: f64, t1: f64| e(x, b(t0), b(t1))) as ExactFlowFn
    });
    h.time_interval = (0.0, t_end);
    h.autonomous = false;
    h.name = format!("reparam({})", fi.name);
    let evidence = match &f.evidence {
        NormalizationEvidence::ZeroMean { samples } => NormalizationEvidence::ZeroMean { samples: samples.clone() },
        e => e.clone(),
    };
    Ok(NormalizedHamiltonian { inner: h, evidence })
}

/// Quintic smoothstep on `[0, 1]`, clamped outside.
pub fn smoothstep5(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

pub fn smoothstep5_deriv(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    30.0 * x * x * (x - 1.0) * (x - 1.0)
}

/// Smooth bump of a distance: 1 at 0, falling to 0 at `d = 1`.
pub fn bump_profile(d: f64) -> f64 {
    1.0 - smoothstep5(d.abs())
}

pub fn bump_profile_deriv(d: f64) -> f64 {
    -smoothstep5_deriv(d.abs()) * d.signum()
}

/// Region on which a cutoff function equals one.
#[derive(Clone, Debug, PartialEq)]
pub enum CutoffRegion {
    Empty,
    Box(BoxRegion),
    Union(Vec<BoxRegion>),
    /// `| |x - center| - radius | <= half_width` in a 2D chart.
    Band { center: [f64; 2], radius: f64, half_width: f64 },
}

impl CutoffRegion {
    /// Euclidean distance to the region and its gradient.
    pub fn distance(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|c| *c = 0.0);
        match self {
            CutoffRegion::Empty => f64::INFINITY,
            CutoffRegion::Box(b) => box_distance(b, x, grad),
            CutoffRegion::Union(bs) => {
                let mut best = f64::INFINITY;
                let mut g = vec![0.0; x.len()];
                for b in bs {
                    let d = box_distance(b, x, &mut g);
                    if d < best {
                        best = d;
                        grad.copy_from_slice(&g);
                    }
                }
                best
            }
            CutoffRegion::Band { center, radius, half_width } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let r = dx.hypot(dy);
                let e = (r - radius).abs() - half_width;
                if e <= 0.0 || r == 0.0 {
                    return e.max(0.0);
                }
                let s = (r - radius).signum();
                grad[0] = s * dx / r;
                grad[1] = s * dy / r;
                e
            }
        }
    }

    /// Bounding box of the region.
    pub fn bounding_box(&self, dim: usize) -> BoxRegion {
        match self {
            CutoffRegion::Empty => BoxRegion::new(vec![[0.0, 0.0]; dim]),
            CutoffRegion::Box(b) => b.clone(),
            CutoffRegion::Union(bs) => {
                let mut iv = vec![[f64::INFINITY, f64::NEG_INFINITY]; dim];
                for b in bs {
                    for (k, [a, c]) in b.intervals.iter().enumerate() {
                        iv[k][0] = iv[k][0].min(*a);
                        iv[k][1] = iv[k][1].max(*c);
                    }
                }
                BoxRegion::new(iv)
            }
            CutoffRegion::Band { center, radius, half_width } => {
                let r = radius + half_width;
                BoxRegion::new(vec![[center[0] - r, center[0] + r], [center[1] - r, center[1] + r]])
            }
        }
    }
}

fn box_distance(b: &BoxRegion, x: &[f64], grad: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for (k, [a, c]) in b.intervals.iter().enumerate() {
        let d = if x[k] < *a {
            x[k] - a
        } else if x[k] > *c {
            x[k] - c
        } else {
            0.0
        };
        grad[k] = d;
        s += d * d;
    }
    let d = s.sqrt();
    if d > 0.0 {
        grad.iter_mut().for_each(|g| *g /= d);
    }
    d
}

/// Cutoff of `h`: `a * h` with `a = 1 - smoothstep(dist / margin)`, which is
/// one on the region and zero beyond the margin.
pub fn cutoff(h: &Hamiltonian, region: &CutoffRegion, margin: f64, m: &ManifoldSpec) -> Result<Hamiltonian> {
    if !(margin > 0.0) {
        return Err(HoferError::InvalidInput(format!("cutoff margin must be positive, got {margin}")));
    }
    if m.is_sphere() {
        return Err(HoferError::Unsupported("cutoffs are defined in canonical charts only".into()));
    }
    if region.bounding_box(m.dim()).dim() != m.dim() {
        return Err(HoferError::InvalidInput("cutoff region dimension mismatch".into()));
    }
    let support = region.bounding_box(m.dim()).expanded(margin);
    if m.kind == ManifoldKind::Torus2 && !matches!(region, CutoffRegion::Empty) {
        let chart = BoxRegion::square(0.0, 1.0, 2);
        if support.intervals.iter().zip(&chart.intervals).any(|(s, c)| s[0] < c[0] || s[1] > c[1]) {
            return Err(HoferError::InvalidInput("cutoff region plus margin leaves the torus chart".into()));
        }
    }
    let region = Arc::new(region.clone());
    let dist = move |x: &[f64], _t: f64, g: &mut [f64]| region.distance(x, g);
    Ok(cutoff_with(h, Arc::new(dist), margin, support))
}

pub(crate) type DistFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) -> f64 + Send + Sync>;

/// Cutoff against a (possibly time-dependent) distance function.
pub(crate) fn cutoff_with(h: &Hamiltonian, dist: DistFn, margin: f64, support: BoxRegion) -> Hamiltonian {
    let d = h.manifold.coord_len();
    let hv = h.clone();
    let dist_e = dist.clone();
    let mut out = Hamiltonian::new(h.manifold, move |x, t| {
        let mut g = [0.0; 8];
        let r = dist_e(x, t, &mut g[..d]);
        if !r.is_finite() || r >= margin {
            return 0.0;
        }
        let a = 1.0 - smoothstep5(r / margin);
        if a == 0.0 {
            0.0
        } else {
            a * hv.eval(x, t)
        }
    });
    if h.grad.is_some() {
        let hv = h.clone();
        out.grad = Some(Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
            let mut dg = [0.0; 8];
            let r = dist(x, t, &mut dg[..d]);
            if !r.is_finite() || r >= margin {
                out.iter_mut().for_each(|c| *c = 0.0);
                return;
            }
            let a = 1.0 - smoothstep5(r / margin);
            let da = -smoothstep5_deriv(r / margin) / margin;
            let hval = hv.eval(x, t);
            if let Some(g) = &hv.grad {
                g(x, t, out);
            }
            for i in 0..d {
                out[i] = a * out[i] + hval * da * dg[i];
            }
        }));
    }
    out.support = Some(support);
    out.time_interval = h.time_interval;
    out.autonomous = h.autonomous;
    out.name = format!("cutoff({})", h.name);
    out
}

/// Parameters for catalog Hamiltonians.
pub type CatalogParams = BTreeMap<String, f64>;

/// Names accepted by [`catalog`].
pub const CATALOG_NAMES: &[&str] = &[
    "rotation_k",
    "height",
    "oscillator",
    "translation_gen",
    "radial_bump",
    "torus_bump",
    "torus_band",
    "torus_wave",
    "tilted_height",
];

fn param(p: &CatalogParams, allowed: &[&str], key: &str, default: f64) -> Result<f64> {
    for k in p.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(HoferError::InvalidInput(format!("unknown catalog parameter {k}")));
        }
    }
    let v = p.get(key).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(HoferError::InvalidInput(format!("parameter {key} must be finite")));
    }
    Ok(v)
}

/// Rotation of the sphere about the unit axis `a` by angle `th`.
pub fn rotate_about(a: &[f64; 3], th: f64, x: &[f64]) -> Vec<f64> {
    let (s, c) = th.sin_cos();
    let ax = cross(a, x);
    let ad = dot(a, x);
    (0..3).map(|i| x[i] * c + ax[i] * s + a[i] * ad * (1.0 - c)).collect()
}

/// Named model Hamiltonians.
///
/// * `rotation_k` (or `rotation_<k>`): `2 pi k s x3` on the sphere of area scale `s`.
/// * `height`: `c <a, x>` on the sphere, axis tilted by `tilt` from `e3`.
/// * `oscillator`: `sign * pi * lambda * (p^2 + q^2)` on R^2.
/// * `translation_gen`: `u p` on R^2.
/// * `radial_bump`: `amp * bump((p - center) / width)` on the cylinder.
/// * `torus_bump`: `amp * bump(|x - c| / radius)` on the torus.
/// * `torus_band`: `amp * bump((p - center) / width)` on the torus.
/// * `torus_wave`: `amp * cos(2 pi k y + phase)` with `y = p` (`axis = 0`) or `q`.
/// * `tilted_height`: `cos 2 pi p + a cos 2 pi q` on the torus.
pub fn catalog(name: &str, p: &CatalogParams) -> Result<Hamiltonian> {
    if let Some(k) = name.strip_prefix("rotation_") {
        if k != "k" {
            let k: f64 = k.parse().map_err(|_| HoferError::InvalidInput(format!("unknown catalog entry {name}")))?;
            let mut q = p.clone();
            q.insert("k".into(), k);
            return catalog("rotation_k", &q);
        }
    }
    match name {
        "rotation_k" => {
            let allowed = ["k", "area_scale"];
            let k = param(p, &allowed, "k", 1.0)?;
            let s = param(p, &allowed, "area_scale", 1.0)?;
            let m = ManifoldSpec::sphere2().with_area_scale(s)?;
            let c = 2.0 * PI * k * s;
            let w = 2.0 * PI * k;
            Ok(Hamiltonian::autonomous(m, move |x| c * x[2])
                .with_grad(move |_, _, g| {
                    g[0] = 0.0;
                    g[1] = 0.0;
                    g[2] = c;
                })
                .with_exact_flow(move |x, t0, t1| rotate_about(&[0.0, 0.0, 1.0], -w * (t1 - t0), x))
                .named(format!("rotation_{k}")))
        }
        "height" => {
            let allowed = ["amp", "tilt", "area_scale"];
            let c = param(p, &allowed, "amp", 1.0)?;
            let tilt = param(p, &allowed, "tilt", 0.0)?;
            let s = param(p, &allowed, "area_scale", 1.0)?;
            let m = ManifoldSpec::sphere2().with_area_scale(s)?;
            let a = [tilt.sin(), 0.0, tilt.cos()];
            Ok(Hamiltonian::autonomous(m, move |x| c * dot(&a, x))
                .with_grad(move |_, _, g| {
                    for i in 0..3 {
                        g[i] = c * a[i];
                    }
                })
                .with_exact_flow(move |x, t0, t1| rotate_about(&a, -c / s * (t1 - t0), x))
                .named("height"))
        }
        "oscillator" => {
            let allowed = ["lambda", "sign"];
            let lam = param(p, &allowed, "lambda", 1.0)?;
            let sign = param(p, &allowed, "sign", 1.0)?;
            if sign.abs() != 1.0 {
                return Err(HoferError::InvalidInput("oscillator sign must be +1 or -1".into()));
            }
            let c = sign * PI * lam;
            let w = 2.0 * c;
            Ok(Hamiltonian::autonomous(ManifoldSpec::euclidean(1), move |x| c * (x[0] * x[0] + x[1] * x[1]))
                .with_grad(move |x, _, g| {
                    g[0] = 2.0 * c * x[0];
                    g[1] = 2.0 * c * x[1];
                })
                .with_hess(move |_, _| DMatrix::from_row_slice(2, 2, &[2.0 * c, 0.0, 0.0, 2.0 * c]))
                .with_exact_flow(move |x, t0, t1| {
                    let (s, co) = (w * (t1 - t0)).sin_cos();
                    vec![co * x[0] - s * x[1], s * x[0] + co * x[1]]
                })
                .named(format!("oscillator({lam})")))
        }
        "translation_gen" => {
            let u = param(p, &["u"], "u", 1.0)?;
            Ok(Hamiltonian::autonomous(ManifoldSpec::euclidean(1), move |x| u * x[0])
                .with_grad(move |_, _, g| {
                    g[0] = u;
                    g[1] = 0.0;
                })
                .with_hess(|_, _| DMatrix::zeros(2, 2))
                .with_exact_flow(move |x, t0, t1| vec![x[0], x[1] + u * (t1 - t0)])
                .named("translation_gen"))
        }
        "radial_bump" => {
            let allowed = ["amp", "center", "width"];
            let amp = param(p, &allowed, "amp", 1.0)?;
            let c = param(p, &allowed, "center", 0.0)?;
            let w = param(p, &allowed, "width", 0.5)?;
            if !(w > 0.0) {
                return Err(HoferError::InvalidInput("radial_bump width must be positive".into()));
            }
            let prof = move |y: f64| amp * bump_profile((y - c) / w);
            let dprof = move |y: f64| amp * bump_profile_deriv((y - c) / w) / w;
            Ok(Hamiltonian::autonomous(ManifoldSpec::cylinder(), move |x| prof(x[0]))
                .with_grad(move |x, _, g| {
                    g[0] = dprof(x[0]);
                    g[1] = 0.0;
                })
                .with_exact_flow(move |x, t0, t1| vec![x[0], x[1] + (t1 - t0) * dprof(x[0])])
                .with_support(BoxRegion::new(vec![[c - w, c + w], [0.0, 1.0]]))
                .named("radial_bump"))
        }
        "torus_bump" => {
            let allowed = ["amp", "cp", "cq", "radius"];
            let amp = param(p, &allowed, "amp", 1.0)?;
            let cp = param(p, &allowed, "cp", 0.5)?;
            let cq = param(p, &allowed, "cq", 0.5)?;
            let r = param(p, &allowed, "radius", 0.2)?;
            if !(r > 0.0 && r < 0.5) {
                return Err(HoferError::InvalidInput("torus_bump radius must lie in (0, 1/2)".into()));
            }
            Ok(Hamiltonian::autonomous(ManifoldSpec::torus2(), move |x| {
                let d = wrap_half(x[0] - cp).hypot(wrap_half(x[1] - cq));
                amp * bump_profile(d / r)
            })
            .with_grad(move |x, _, g| {
                let dp = wrap_half(x[0] - cp);
                let dq = wrap_half(x[1] - cq);
                let d = dp.hypot(dq);
                if d == 0.0 || d >= r {
                    g[0] = 0.0;
                    g[1] = 0.0;
                } else {
                    let s = amp * bump_profile_deriv(d / r) / r;
                    g[0] = s * dp / d;
                    g[1] = s * dq / d;
                }
            })
            .named("torus_bump"))
        }
        "torus_band" => {
            let allowed = ["amp", "center", "width"];
            let amp = param(p, &allowed, "amp", 1.0)?;
            let c = param(p, &allowed, "center", 0.25)?;
            let w = param(p, &allowed, "width", 0.2)?;
            if !(w > 0.0 && w < 0.5) {
                return Err(HoferError::InvalidInput("torus_band width must lie in (0, 1/2)".into()));
            }
            let prof = move |y: f64| amp * bump_profile(wrap_half(y - c) / w);
            let dprof = move |y: f64| amp * bump_profile_deriv(wrap_half(y - c) / w) / w;
            Ok(Hamiltonian::autonomous(ManifoldSpec::torus2(), move |x| prof(x[0]))
                .with_grad(move |x, _, g| {
                    g[0] = dprof(x[0]);
                    g[1] = 0.0;
                })
                .with_exact_flow(move |x, t0, t1| vec![x[0], x[1] + (t1 - t0) * dprof(x[0])])
                .named("torus_band"))
        }
        "torus_wave" => {
            let allowed = ["amp", "k", "phase", "axis"];
            let amp = param(p, &allowed, "amp", 1.0)?;
            let k = param(p, &allowed, "k", 1.0)?;
            let ph = param(p, &allowed, "phase", 0.0)?;
            let axis = param(p, &allowed, "axis", 0.0)?;
            if k.fract() != 0.0 || k == 0.0 {
                return Err(HoferError::InvalidInput("torus_wave frequency must be a nonzero integer".into()));
            }
            let ax = match axis as i64 {
                0 => 0usize,
                1 => 1usize,
                _ => return Err(HoferError::InvalidInput("torus_wave axis must be 0 or 1".into())),
            };
            let w = 2.0 * PI * k;
            let f = move |y: f64| amp * (w * y + ph).cos();
            let df = move |y: f64| -amp * w * (w * y + ph).sin();
            Ok(Hamiltonian::autonomous(ManifoldSpec::torus2(), move |x| f(x[ax]))
                .with_grad(move |x, _, g| {
                    g[ax] = df(x[ax]);
                    g[1 - ax] = 0.0;
                })
                .with_exact_flow(move |x, t0, t1| {
                    let dt = t1 - t0;
                    if ax == 0 {
                        vec![x[0], x[1] + dt * df(x[0])]
                    } else {
                        vec![x[0] - dt * df(x[1]), x[1]]
                    }
                })
                .named(format!("torus_wave(axis {ax}, k {k})")))
        }
        "tilted_height" => {
            let a = param(p, &["a"], "a", 0.5)?;
            let w = 2.0 * PI;
            Ok(Hamiltonian::autonomous(ManifoldSpec::torus2(), move |x| (w * x[0]).cos() + a * (w * x[1]).cos())
                .with_grad(move |x, _, g| {
                    g[0] = -w * (w * x[0]).sin();
                    g[1] = -a * w * (w * x[1]).sin();
                })
                .with_hess(move |x, _| {
                    DMatrix::from_row_slice(2, 2, &[-w * w * (w * x[0]).cos(), 0.0, 0.0, -a * w * w * (w * x[1]).cos()])
                })
                .named("tilted_height"))
        }
        _ => Err(HoferError::InvalidInput(format!("unknown catalog entry {name}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowMap, Scheme};
    use crate::geometry::{norm, sample_grid};
    use proptest::prelude::*;

    fn params(kv: &[(&str, f64)]) -> CatalogParams {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn sgrad_examples() {
        let m = ManifoldSpec::euclidean(1);
        let f = Hamiltonian::autonomous(m, |x| x[0]);
        let v = f.sgrad(&[0.3, -0.2], 0.0).unwrap();
        assert!((v[0]).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
        let osc = catalog("oscillator", &params(&[("lambda", 1.0)])).unwrap();
        let v = osc.sgrad(&[1.0, 0.0], 0.0).unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 2.0 * PI).abs() < 1e-12);
        // difference fallback agrees with the analytic gradient
        let raw = Hamiltonian::autonomous(m, move |x| PI * (x[0] * x[0] + x[1] * x[1]));
        let w = raw.sgrad(&[1.0, 0.0], 0.0).unwrap();
        assert!((w[1] - 2.0 * PI).abs() < 1e-8);
        let h = Hamiltonian::autonomous(ManifoldSpec::sphere2(), |x| x[2]);
        let s = h.sgrad(&[1.0, 0.0, 0.0], 0.0).unwrap();
        assert!((norm(&s) - 1.0).abs() < 1e-9);
        assert!(s[0].abs() < 1e-9 && s[2].abs() < 1e-9);
    }

    #[test]
    fn sgrad_rejects_bad_time_and_nan() {
        let f = Hamiltonian::new(ManifoldSpec::euclidean(1), |x, t| x[0] * t);
        assert!(matches!(f.sgrad(&[0.0, 0.0], 1.5), Err(HoferError::OutOfInterval { .. })));
        let g = Hamiltonian::autonomous(ManifoldSpec::euclidean(1), |_| f64::NAN);
        assert!(matches!(g.sgrad(&[0.0, 0.0], 0.5), Err(HoferError::NonFinite(_))));
    }

    #[test]
    fn sphere_sgrad_satisfies_defining_identity() {
        // i_xi Omega = -dF: Omega(xi, eta) = -dF(eta) for tangent eta
        let m = ManifoldSpec::sphere2().with_area_scale(0.7).unwrap();
        let f = Hamiltonian::autonomous(m, |x| x[0] * x[1] + 0.3 * x[2]);
        let x = [0.48, -0.6, 0.64];
        let xi = f.sgrad(&x, 0.0).unwrap();
        let (e1, e2) = sphere_frame(&x);
        let grad = f.gradient(&x, 0.0).unwrap();
        for e in [e1, e2] {
            let lhs = crate::geometry::omega_eval(&m, &x, &xi, &e).unwrap();
            assert!((lhs + dot(&grad, &e)).abs() < 1e-8);
        }
    }

    #[test]
    fn normalize_examples() {
        let t = ManifoldSpec::torus2();
        let g = sample_grid(&t, 16, None).unwrap();
        let c = Hamiltonian::autonomous(t, |_| 2.5);
        let n = normalize(&c, &t, &g).unwrap();
        assert!(n.eval(&[0.3, 0.4], 0.0).abs() < 1e-14);
        let s = ManifoldSpec::sphere2();
        let gs = sample_grid(&s, 12, None).unwrap();
        let f = Hamiltonian::autonomous(s, |x| x[2] + 1.0);
        let n = normalize(&f, &s, &gs).unwrap();
        let x = [0.6, 0.0, 0.8];
        assert!((n.eval(&x, 0.0) - 0.8).abs() < 1e-6);
        let again = normalize(&n, &s, &gs).unwrap();
        assert!((again.eval(&x, 0.0) - n.eval(&x, 0.0)).abs() < 1e-12);
        let td = Hamiltonian::new(t, |x, t| (2.0 * PI * x[0]).sin() + 3.0 * t);
        let n = normalize(&td, &t, &g).unwrap();
        match &n.evidence {
            NormalizationEvidence::ZeroMean { samples } => {
                assert_eq!(samples.len(), EVIDENCE_TIMES);
                assert!(samples.iter().all(|(_, m)| m.abs() <= 1e-6));
            }
            e => panic!("unexpected {e:?}"),
        }
        let open = Hamiltonian::autonomous(ManifoldSpec::cylinder(), |x| x[0]);
        assert!(normalize(&open, &ManifoldSpec::cylinder(), &g).is_err());
        let bump = catalog("radial_bump", &CatalogParams::new()).unwrap();
        assert!(normalize(&bump, &ManifoldSpec::cylinder(), &g).is_ok());
    }

    #[test]
    fn poisson_examples() {
        let m = ManifoldSpec::euclidean(1);
        let p = Hamiltonian::autonomous(m, |x| x[0]);
        let q = Hamiltonian::autonomous(m, |x| x[1]);
        assert!((poisson_bracket(&p, &q, &[0.2, 0.7], 0.0).unwrap() + 1.0).abs() < 1e-9);
        assert_eq!(poisson_bracket(&p, &p, &[0.2, 0.7], 0.0).unwrap(), 0.0);
        let c = ManifoldSpec::cylinder();
        let f = Hamiltonian::autonomous(c, |x| (x[0] * 3.0).sin());
        let g = Hamiltonian::autonomous(c, |x| x[0] * x[0]);
        assert!(poisson_bracket(&f, &g, &[0.4, 0.1], 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cylinder_flows_of_functions_of_p_commute() {
        let f = catalog("radial_bump", &params(&[("width", 0.8)])).unwrap();
        let g = Hamiltonian::autonomous(ManifoldSpec::cylinder(), |x| 0.3 * x[0] * x[0]);
        let ff = FlowMap::new(&f, Scheme::Rk4, 1e-3).unwrap();
        let fg = FlowMap::new(&g, Scheme::Rk4, 1e-3).unwrap();
        for x in [[0.1, 0.2], [-0.35, 0.9], [0.5, 0.5]] {
            let a = ff.map(&fg.map(&x, 0.0, 1.0).unwrap(), 0.0, 1.0).unwrap();
            let b = fg.map(&ff.map(&x, 0.0, 1.0).unwrap(), 0.0, 1.0).unwrap();
            assert!(ManifoldSpec::cylinder().distance(&a, &b) < 1e-5);
        }
    }

    #[test]
    fn product_of_sphere_rotations() {
        let s = ManifoldSpec::sphere2();
        let gs = sample_grid(&s, 8, None).unwrap();
        let f = normalize(&catalog("rotation_k", &params(&[("k", 0.3)])).unwrap(), &s, &gs).unwrap();
        let g = normalize(&catalog("rotation_k", &params(&[("k", 0.5)])).unwrap(), &s, &gs).unwrap();
        let flow = FlowMap::new(&f, Scheme::Rk4, 1e-3).unwrap();
        let h = product_hamiltonian(&f, &g, &flow).unwrap();
        for x in probe_points(&s) {
            for t in [0.2, 0.9] {
                assert!((h.eval(&x, t) - 2.0 * PI * 0.8 * x[2]).abs() < 1e-6);
            }
        }
        let zero = normalize(&Hamiltonian::zero(s), &s, &gs).unwrap();
        let h0 = product_hamiltonian(&f, &zero, &flow).unwrap();
        let x = &probe_points(&s)[0];
        assert!((h0.eval(x, 0.4) - f.eval(x, 0.4)).abs() < 1e-15);
        let other = FlowMap::new(&g, Scheme::Rk4, 1e-3).unwrap();
        assert!(product_hamiltonian(&f, &g, &other).is_err());
    }

    #[test]
    fn product_formula_on_the_torus() {
        let t2 = ManifoldSpec::torus2();
        let g0 = sample_grid(&t2, 16, None).unwrap();
        let f = normalize(&catalog("torus_wave", &params(&[("amp", 0.3), ("k", 2.0), ("phase", 0.4)])).unwrap(), &t2, &g0).unwrap();
        let g = normalize(&catalog("torus_wave", &params(&[("axis", 1.0), ("amp", 0.2)])).unwrap(), &t2, &g0).unwrap();
        let pts: Vec<Vec<f64>> = sample_grid(&t2, 6, None).unwrap().points;
        let coarse = product_formula_defect(&f, &g, &pts, &[0.5, 1.0], 1e-3).unwrap();
        let fine = product_formula_defect(&f, &g, &pts, &[0.5, 1.0], 5e-4).unwrap();
        assert!(coarse < 1e-5, "{coarse}");
        // fourth order in the step
        assert!(fine < coarse / 8.0, "{coarse} {fine}");
        // the plain sum generates a different path when the flows do not commute
        let sum = Hamiltonian::autonomous(t2, {
            let (f, g) = (f.inner.clone(), g.inner.clone());
            move |x| f.eval(x, 0.0) + g.eval(x, 0.0)
        });
        let flow_sum = FlowMap::new(&sum, Scheme::Rk4, 1e-3).unwrap();
        let (ff, fg) = (FlowMap::best(&f).unwrap(), FlowMap::best(&g).unwrap());
        let gap = pts
            .iter()
            .map(|x| t2.distance(&flow_sum.map(x, 0.0, 1.0).unwrap(), &ff.map(&fg.map(x, 0.0, 1.0).unwrap(), 0.0, 1.0).unwrap()))
            .fold(0.0, f64::max);
        assert!(gap > 1e-3, "{gap}");
    }

    #[test]
    fn product_on_cylinder_is_sum() {
        let c = ManifoldSpec::cylinder();
        let g0 = sample_grid(&c, 8, None).unwrap();
        let f = normalize(&catalog("radial_bump", &params(&[("width", 0.7)])).unwrap(), &c, &g0).unwrap();
        let g = normalize(&catalog("radial_bump", &params(&[("width", 0.4), ("amp", -0.5)])).unwrap(), &c, &g0).unwrap();
        let flow = FlowMap::new(&f, Scheme::Rk4, 1e-3).unwrap();
        let h = product_hamiltonian(&f, &g, &flow).unwrap();
        for x in [[0.1, 0.3], [-0.2, 0.8]] {
            assert!((h.eval(&x, 0.7) - f.eval(&x, 0.7) - g.eval(&x, 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_height_undoes_the_flow() {
        let s = ManifoldSpec::sphere2();
        let gs = sample_grid(&s, 8, None).unwrap();
        let f = normalize(&catalog("height", &params(&[("tilt", 0.4), ("amp", 1.3)])).unwrap(), &s, &gs).unwrap();
        let flow = FlowMap::new(&f, Scheme::Rk4, 1e-3).unwrap();
        let inv = inverse_hamiltonian(&f, &flow).unwrap();
        for x in probe_points(&s) {
            // autonomous: -F(f_t x) = -F(x)
            assert!((inv.eval(&x, 0.6) + f.eval(&x, 0.6)).abs() < 1e-9);
            let y = flow.map(&x, 0.0, 1.0).unwrap();
            let finv = FlowMap::new(&inv, Scheme::Rk4, 1e-2).unwrap();
            let z = finv.map(&y, 0.0, 1.0).unwrap();
            assert!(s.distance(&z, &x) < 1e-5);
        }
        let zero = normalize(&Hamiltonian::zero(s), &s, &gs).unwrap();
        let zflow = FlowMap::new(&zero, Scheme::Rk4, 1e-3).unwrap();
        let zi = inverse_hamiltonian(&zero, &zflow).unwrap();
        assert_eq!(zi.eval(&probe_points(&s)[1], 0.3), 0.0);
    }

    #[test]
    fn reparametrization_formulas() {
        let t = ManifoldSpec::torus2();
        let g = sample_grid(&t, 16, None).unwrap();
        let f = normalize(&Hamiltonian::new(t, |x, t| (2.0 * PI * x[0]).sin() * (1.0 + t)), &t, &g).unwrap();
        let x = [0.2, 0.6];
        let a = 0.5;
        let r = reparametrize(&f, move |s| a * s, move |_| a, 2.0).unwrap();
        assert!((r.eval(&x, 1.2) - a * f.eval(&x, a * 1.2)).abs() < 1e-14);
        let id = reparametrize(&f, |s| s, |_| 1.0, 1.0).unwrap();
        assert_eq!(id.eval(&x, 0.3), f.eval(&x, 0.3));
        let sq = reparametrize(&f, |s| s * s, |s| 2.0 * s, 1.0).unwrap();
        assert!((sq.eval(&x, 0.7) - 1.4 * f.eval(&x, 0.49)).abs() < 1e-14);
        assert!(reparametrize(&f, |s| s + 0.1, |_| 1.0, 1.0).is_err());
    }

    #[test]
    fn cutoff_examples() {
        let m = ManifoldSpec::euclidean(1);
        let u = 0.5;
        let h = catalog("translation_gen", &params(&[("u", u)])).unwrap();
        let region = CutoffRegion::Union(vec![
            BoxRegion::new(vec![[0.0, u], [0.0, u]]),
            BoxRegion::new(vec![[0.0, u], [u, 2.0 * u]]),
        ]);
        let f = cutoff(&h, &region, 0.01, &m).unwrap();
        assert!((f.eval(&[0.25, 0.5], 0.0) - h.eval(&[0.25, 0.5], 0.0)).abs() < 1e-15);
        let g = sample_grid(&m, 200, Some(&BoxRegion::new(vec![[-0.05, 0.55], [-0.05, 1.05]]))).unwrap();
        let vals: Vec<f64> = g.points.iter().map(|x| f.eval(x, 0.0)).collect();
        let osc = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(osc <= u * u + 0.01 + 1e-12);
        let e = cutoff(&h, &CutoffRegion::Empty, 0.1, &m).unwrap();
        assert_eq!(e.eval(&[0.2, 0.2], 0.0), 0.0);
        assert!(cutoff(&h, &region, 0.0, &m).is_err());
        assert!(normalize(&f, &m, &g).is_ok());
    }

    #[test]
    fn catalog_examples() {
        let s = ManifoldSpec::sphere2();
        let r = catalog("rotation_1", &CatalogParams::new()).unwrap();
        assert!((r.eval(&[0.0, 0.0, 1.0], 0.0) - r.eval(&[0.0, 0.0, -1.0], 0.0) - 4.0 * PI).abs() < 1e-12);
        assert_eq!(r.manifold, s);
        let rn = catalog("rotation_1", &params(&[("area_scale", 1.0 / (4.0 * PI))])).unwrap();
        assert!((rn.eval(&[0.0, 0.0, 1.0], 0.0) - 0.5).abs() < 1e-15);
        assert!((rn.eval(&[0.0, 0.0, -1.0], 0.0) + 0.5).abs() < 1e-15);
        let o = catalog("oscillator", &params(&[("lambda", 1.0)])).unwrap();
        assert_eq!(o.eval(&[0.0, 0.0], 0.0), 0.0);
        assert!(catalog("nonsense", &CatalogParams::new()).is_err());
        assert!(catalog("oscillator", &params(&[("lamda", 1.0)])).is_err());
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let entries: Vec<(&str, CatalogParams)> = vec![
            ("rotation_k", params(&[("k", 2.0)])),
            ("height", params(&[("tilt", 0.3)])),
            ("oscillator", params(&[("lambda", 0.7)])),
            ("translation_gen", params(&[("u", 0.4)])),
            ("radial_bump", CatalogParams::new()),
            ("torus_bump", CatalogParams::new()),
            ("torus_band", CatalogParams::new()),
            ("torus_wave", params(&[("axis", 1.0), ("k", 2.0), ("phase", 0.3)])),
            ("tilted_height", CatalogParams::new()),
        ];
        for (name, p) in entries {
            let h = catalog(name, &p).unwrap();
            let mut numeric = h.clone();
            numeric.grad = None;
            for x in probe_points(&h.manifold) {
                let a = h.sgrad(&x, 0.0).unwrap();
                let b = numeric.sgrad(&x, 0.0).unwrap();
                let scale = norm(&a).max(1.0);
                assert!(norm(&a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>()) <= 1e-5 * scale, "{name}");
            }
        }
    }

    #[test]
    fn exact_flows_match_integration() {
        for (name, p) in [
            ("rotation_k", params(&[("k", 1.5)])),
            ("height", params(&[("tilt", 0.8), ("amp", 0.6)])),
            ("oscillator", params(&[("lambda", 0.9), ("sign", -1.0)])),
            ("radial_bump", CatalogParams::new()),
            ("torus_wave", params(&[("axis", 1.0), ("k", 1.0)])),
            ("torus_band", CatalogParams::new()),
        ] {
            let h = catalog(name, &p).unwrap();
            let numeric = FlowMap::new(&h.clone().without_exact_flow(), Scheme::Rk4, 1e-3).unwrap();
            let exact = FlowMap::exact(&h).unwrap();
            for x in probe_points(&h.manifold) {
                let a = numeric.map(&x, 0.0, 0.8).unwrap();
                let b = exact.map(&x, 0.0, 0.8).unwrap();
                assert!(h.manifold.distance(&a, &b) < 1e-9, "{name}");
            }
        }
    }

    proptest! {
        #[test]
        fn bracket_is_antisymmetric(a in -2.0f64..2.0, b in -2.0f64..2.0, p in -1.0f64..1.0, q in -1.0f64..1.0) {
            let m = ManifoldSpec::euclidean(1);
            let f = Hamiltonian::autonomous(m, move |x| (a * x[0]).sin() * x[1] + b * x[0] * x[0]);
            let g = Hamiltonian::autonomous(m, move |x| (x[0] - b * x[1]).cos() + a * x[1]);
            let u = poisson_bracket(&f, &g, &[p, q], 0.0).unwrap();
            let v = poisson_bracket(&g, &f, &[p, q], 0.0).unwrap();
            prop_assert!((u + v).abs() <= 1e-10);
        }

        #[test]
        fn sphere_bracket_is_antisymmetric(th in 0.1f64..3.0, ph in 0.0f64..6.2, a in -2.0f64..2.0) {
            let s = ManifoldSpec::sphere2();
            let f = Hamiltonian::autonomous(s, move |x| x[0] * x[2] + a * x[1]);
            let g = Hamiltonian::autonomous(s, move |x| x[2] * x[2] - a * x[0]);
            let x = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            let u = poisson_bracket(&f, &g, &x, 0.0).unwrap();
            let v = poisson_bracket(&g, &f, &x, 0.0).unwrap();
            prop_assert!((u + v).abs() <= 1e-10);
        }
    }
}

//! Variations of Hamiltonian paths through generators with zero time average,
//! length profiles along them, the second-variation forms at fixed extrema,
//! and scans for conjugate points of the linearized flow.
//!
//! A variation is `f_{t,e} = f_t o h_{t,e}` with `h_{t,e}` the time-`e` flow of
//! `K_t = int_0^t G(., s) ds`. By the product formula it is generated by
//! `F(x,t) + H(f_t^{-1} x, t, e)` where `H(y,t,e) = int_0^e G(phi^{-s}_{K_t} y, t) ds`
//! generates `t -> h_{t,e}`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HoferError, Result};
use crate::flow::{flow_jacobian, monodromy_between, FlowMap};
use crate::geometry::{dot, sphere_frame, Grid, ManifoldSpec};
use crate::hamiltonian::{j_times, probe_points, Hamiltonian};
use crate::hofer::{extrema, PATH_SAMPLES};
use crate::quadrature::{gauss_legendre_on, simpson};

/// Tolerance for `int_0^1 G(x,t) dt = 0`.
pub const V1_TOL: f64 = 1e-8;
/// Time nodes used for length profiles.
pub const PROFILE_NODES: usize = 129;
const H_NODES: usize = 8;
const H_SUBSTEPS: usize = 2;

/// Which fixed extremum: the maximum (`Plus`) or the minimum (`Minus`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Samples of a curve in a fixed tangent plane on a uniform grid of `[0, 1]`,
/// in symplectic frame coordinates, vanishing at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationField {
    pub values: Vec<[f64; 2]>,
}

impl VariationField {
    /// Ends within `1e-8` of zero are pinned to exactly zero; the sample count
    /// must be odd and at least 5.
    pub fn new(mut values: Vec<[f64; 2]>) -> Result<Self> {
        let n = values.len();
        if n < 5 || n % 2 == 0 {
            return Err(HoferError::InvalidInput(format!("variation field needs an odd count >= 5, got {n}")));
        }
        let scale = values.iter().map(|v| v[0].hypot(v[1])).fold(1.0, f64::max);
        for i in [0, n - 1] {
            let r = values[i][0].hypot(values[i][1]);
            if r > 1e-8 * scale {
                return Err(HoferError::InvalidInput(format!("variation field does not vanish at an end: {r}")));
            }
            values[i] = [0.0, 0.0];
        }
        Ok(Self { values })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        Self::new((0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect())
    }

    /// `r (cos 2 pi t - 1, sin 2 pi t)`: a counterclockwise circle through 0.
    pub fn circle(r: f64, n: usize) -> Result<Self> {
        Self::from_fn(n, |t| {
            let (s, c) = (2.0 * PI * t).sin_cos();
            [r * (c - 1.0), r * s]
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step()
    }

    /// Fourth-order finite-difference derivative.
    pub fn derivative(&self) -> Vec<[f64; 2]> {
        let v = &self.values;
        let n = v.len();
        let h = self.step();
        let mut out = vec![[0.0; 2]; n];
        for k in 0..2 {
            let c = |i: usize| v[i][k];
            for i in 0..n {
                out[i][k] = if i >= 2 && i + 2 < n {
                    (-c(i + 2) + 8.0 * c(i + 1) - 8.0 * c(i - 1) + c(i - 2)) / (12.0 * h)
                } else if i == 0 {
                    (-25.0 * c(0) + 48.0 * c(1) - 36.0 * c(2) + 16.0 * c(3) - 3.0 * c(4)) / (12.0 * h)
                } else if i == 1 {
                    (-3.0 * c(0) - 10.0 * c(1) + 18.0 * c(2) - 6.0 * c(3) + c(4)) / (12.0 * h)
                } else if i == n - 2 {
                    (3.0 * c(n - 1) + 10.0 * c(n - 2) - 18.0 * c(n - 3) + 6.0 * c(n - 4) - c(n - 5)) / (12.0 * h)
                } else {
                    (25.0 * c(n - 1) - 48.0 * c(n - 2) + 36.0 * c(n - 3) - 16.0 * c(n - 4) + 3.0 * c(n - 5)) / (12.0 * h)
                };
            }
        }
        out
    }

    /// `int |v'|^2 dt`
    pub fn energy(&self) -> f64 {
        let d = self.derivative();
        simpson(&d.iter().map(|w| w[0] * w[0] + w[1] * w[1]).collect::<Vec<_>>(), self.step())
    }

    /// `int |v'| dt`
    pub fn length(&self) -> f64 {
        let d = self.derivative();
        simpson(&d.iter().map(|w| w[0].hypot(w[1])).collect::<Vec<_>>(), self.step())
    }

    /// Signed area `1/2 int Omega(v, v') dt`, positive for counterclockwise loops.
    pub fn area(&self) -> f64 {
        let d = self.derivative();
        let vals: Vec<f64> = self.values.iter().zip(&d).map(|(v, w)| omega2(v, w)).collect();
        0.5 * simpson(&vals, self.step())
    }
}

fn omega2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Fixed extrema of a path and the matrices `C(t) = J Hess F(x, t)` there.
#[derive(Clone, Debug)]
pub struct ExtremalData {
    pub hamiltonian: Hamiltonian,
    pub x_plus: Option<Vec<f64>>,
    pub x_minus: Option<Vec<f64>>,
    pub times: Vec<f64>,
    pub c_plus: Vec<DMatrix<f64>>,
    pub c_minus: Vec<DMatrix<f64>>,
    pub nondegenerate_plus: bool,
    pub nondegenerate_minus: bool,
}

fn definite(h: &DMatrix<f64>, sign: f64) -> bool {
    // sign * h positive definite, 2x2 or larger via eigenvalues
    let s = h * sign;
    let sym = (&s + s.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().all(|l| *l > 1e-9)
}

impl ExtremalData {
    /// Collect `C(t)` at the given extremal points over 17 sample times.
    pub fn at(f: &Hamiltonian, x_plus: Option<Vec<f64>>, x_minus: Option<Vec<f64>>) -> Result<Self> {
        let (a, b) = f.time_interval;
        let times: Vec<f64> = (0..17).map(|i| a + (b - a) * i as f64 / 16.0).collect();
        let mut c_plus = Vec::new();
        let mut c_minus = Vec::new();
        let mut nd_plus = x_plus.is_some();
        let mut nd_minus = x_minus.is_some();
        for &t in &times {
            if let Some(x) = &x_plus {
                let h = f.hessian(x, t)?;
                nd_plus &= definite(&h, -1.0);
                c_plus.push(j_times(&h));
            }
            if let Some(x) = &x_minus {
                let h = f.hessian(x, t)?;
                nd_minus &= definite(&h, 1.0);
                c_minus.push(j_times(&h));
            }
        }
        Ok(Self {
            hamiltonian: f.clone(),
            x_plus,
            x_minus,
            times,
            c_plus,
            c_minus,
            nondegenerate_plus: nd_plus,
            nondegenerate_minus: nd_minus,
        })
    }

    pub fn point(&self, side: Side) -> Option<&[f64]> {
        match side {
            Side::Plus => self.x_plus.as_deref(),
            Side::Minus => self.x_minus.as_deref(),
        }
    }

    /// `C(t) = J Hess F(x, t)` at the chosen extremum.
    pub fn c_matrix(&self, side: Side, t: f64) -> Result<DMatrix<f64>> {
        let x = self.point(side).ok_or_else(|| HoferError::InvalidInput(format!("no {side:?} extremum recorded")))?;
        Ok(j_times(&self.hamiltonian.hessian(x, t)?))
    }
}

/// Extrema fixed in time and oscillation constant within `tol`, checked on
/// 17 sample times; the extremal data is taken at the first sample.
pub fn quasiautonomous_test(f: &Hamiltonian, g: &Grid, tol: f64) -> Result<(bool, ExtremalData)> {
    let (a, b) = f.time_interval;
    let m = f.manifold;
    let res = 2.0 * g.spacing(&m);
    let mut first = None;
    let mut fixed = true;
    let (mut osc_lo, mut osc_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..17 {
        let t = a + (b - a) * i as f64 / 16.0;
        let e = extrema(f, t, g)?;
        osc_lo = osc_lo.min(e.oscillation());
        osc_hi = osc_hi.max(e.oscillation());
        match &first {
            None => first = Some(e),
            Some(e0) => {
                fixed &= m.distance(&e0.argmax, &e.argmax) <= res && m.distance(&e0.argmin, &e.argmin) <= res;
            }
        }
    }
    let e0 = first.expect("17 samples");
    let data = ExtremalData::at(f, Some(e0.argmax), Some(e0.argmin))?;
    Ok((fixed && osc_hi - osc_lo <= tol, data))
}

/// `G(x,t) = K(x,t) - int_0^1 K(x,s) ds` by 24-node Gauss-Legendre quadrature.
pub fn v1_project(k: &Hamiltonian) -> Hamiltonian {
    let (nodes, weights) = gauss_legendre_on(24, 0.0, 1.0);
    let kv = k.clone();
    let mean = move |x: &[f64]| nodes.iter().zip(&weights).map(|(s, w)| w * kv.eval(x, *s)).sum::<f64>();
    let kv = k.clone();
    let mut g = Hamiltonian::new(k.manifold, move |x, t| kv.eval(x, t) - mean(x)).named(format!("v1({})", k.name));
    g.support = k.support.clone();
    g
}

/// A generator `G` with zero time average together with `K_t = int_0^t G`.
#[derive(Clone, Debug)]
pub struct V1Generator {
    pub g: Hamiltonian,
    pub k: Hamiltonian,
}

impl V1Generator {
    /// `K` by 16-node Gauss-Legendre quadrature of `G` over `[0, t]`.
    pub fn from_g(g: Hamiltonian) -> Self {
        let (nodes, weights) = gauss_legendre_on(16, 0.0, 1.0);
        let gv = g.clone();
        let k = Hamiltonian::new(g.manifold, move |x, t| {
            t * nodes.iter().zip(&weights).map(|(s, w)| w * gv.eval(x, s * t)).sum::<f64>()
        })
        .named(format!("int({})", g.name));
        Self { g, k }
    }

    pub fn zero(m: ManifoldSpec) -> Self {
        Self { g: Hamiltonian::zero(m), k: Hamiltonian::zero(m) }
    }

    /// Largest `|int_0^1 G(x,t) dt|` over probe points (32-node quadrature).
    pub fn time_average_residual(&self) -> f64 {
        let (nodes, weights) = gauss_legendre_on(32, 0.0, 1.0);
        probe_points(&self.g.manifold)
            .iter()
            .map(|x| nodes.iter().zip(&weights).map(|(t, w)| w * self.g.eval(x, *t)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// One separable term `(alpha sin 2 pi k t + beta cos 2 pi k t) B(x)` with
/// `B(x) = <a, x> + x^T S x / 2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: u32,
    pub alpha: f64,
    pub beta: f64,
    pub lin: Vec<f64>,
    /// Symmetric, row major.
    pub quad: Vec<f64>,
}

impl TrigTerm {
    fn b(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut s = dot(&self.lin, x);
        for i in 0..d {
            for j in 0..d {
                s += 0.5 * x[i] * self.quad[i * d + j] * x[j];
            }
        }
        s
    }

    fn b_grad(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for i in 0..d {
            out[i] = self.lin[i] + (0..d).map(|j| self.quad[i * d + j] * x[j]).sum::<f64>();
        }
    }

    fn g_coef(&self, t: f64) -> f64 {
        let (s, c) = (2.0 * PI * self.k as f64 * t).sin_cos();
        self.alpha * s + self.beta * c
    }

    fn k_coef(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.k as f64;
        let (s, c) = (w * t).sin_cos();
        (self.alpha * (1.0 - c) + self.beta * s) / w
    }
}

/// Sums of [`TrigTerm`]s: members of the zero-average class with closed-form
/// time integrals and analytic gradients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigGenerator {
    pub manifold: ManifoldSpec,
    pub terms: Vec<TrigTerm>,
}

impl TrigGenerator {
    /// Modes `k = 1, 2` with coefficients uniform in `[-1, 1]` and `B` entries
    /// uniform in `[-amp, amp]`.
    pub fn random<R: Rng>(rng: &mut R, m: ManifoldSpec, amp: f64) -> Self {
        let d = m.coord_len();
        let terms = (1..=2)
            .map(|k| {
                let lin = (0..d).map(|_| rng.gen_range(-amp..amp)).collect();
                let mut quad = vec![0.0; d * d];
                for i in 0..d {
                    for j in i..d {
                        let v = rng.gen_range(-amp..amp);
                        quad[i * d + j] = v;
                        quad[j * d + i] = v;
                    }
                }
                TrigTerm { k, alpha: rng.gen_range(-1.0..1.0), beta: rng.gen_range(-1.0..1.0), lin, quad }
            })
            .collect();
        Self { manifold: m, terms }
    }

    fn build(&self, integrated: bool) -> Hamiltonian {
        let terms = Arc::new(self.terms.clone());
        let coef = move |t: &TrigTerm, s: f64| if integrated { t.k_coef(s) } else { t.g_coef(s) };
        let (tv, tg) = (terms.clone(), terms);
        Hamiltonian::new(self.manifold, move |x, s| tv.iter().map(|t| coef(t, s) * t.b(x)).sum())
            .with_grad(move |x, s, out| {
                out.iter_mut().for_each(|c| *c = 0.0);
                let mut buf = [0.0; 8];
                for t in tg.iter() {
                    let c = coef(t, s);
                    t.b_grad(x, &mut buf[..x.len()]);
                    for i in 0..x.len() {
                        out[i] += c * buf[i];
                    }
                }
            })
            .named(if integrated { "trig_integral" } else { "trig_generator" })
    }

    pub fn to_v1(&self) -> V1Generator {
        V1Generator { g: self.build(false), k: self.build(true) }
    }
}

/// Target curve in the tangent plane of a fixed point.
pub type TargetFn = Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync>;

/// Linear generator whose variation field at the fixed point `x` of `base`
/// is the target `a(t)`: `K_t(y) = <c(t), y - x>` with `J c = M(t)^{-1} a(t)`.
/// Canonical 2D charts only; `G = dK/dt` by central differences.
pub fn generator_for_target(base: &FlowMap, x: &[f64], a: TargetFn) -> Result<V1Generator> {
    let m = base.hamiltonian().manifold;
    if !m.is_canonical() || m.dim() != 2 {
        return Err(HoferError::Unsupported("target generators need a canonical 2D chart".into()));
    }
    let (fl, xp) = (base.clone(), x.to_vec());
    let c_of = Arc::new(move |t: f64| -> [f64; 2] {
        let mt = jacobian_at(&fl, &xp, t).unwrap_or_else(|_| DMatrix::identity(2, 2));
        let mt = Matrix2::new(mt[(0, 0)], mt[(0, 1)], mt[(1, 0)], mt[(1, 1)]);
        let av = a(t);
        let w = mt.try_inverse().map(|mi| mi * Vector2::new(av[0], av[1])).unwrap_or(Vector2::zeros());
        // c = -J w
        [w[1], -w[0]]
    });
    let x0 = x.to_vec();
    let (ck, cg, cgg) = (c_of.clone(), c_of.clone(), c_of);
    let x1 = x0.clone();
    let k = Hamiltonian::new(m, move |y, t| {
        let c = ck(t);
        c[0] * (y[0] - x0[0]) + c[1] * (y[1] - x0[1])
    })
    .with_grad(move |_, t, out| {
        let c = cg(t);
        out[0] = c[0];
        out[1] = c[1];
    })
    .named("target_integral");
    let h = 1e-5;
    let dc = move |t: f64| {
        let (p, q) = (cgg(t + h), cgg(t - h));
        [(p[0] - q[0]) / (2.0 * h), (p[1] - q[1]) / (2.0 * h)]
    };
    let dc = Arc::new(dc);
    let dcg = dc.clone();
    let g = Hamiltonian::new(m, move |y, t| {
        let c = dc(t);
        c[0] * (y[0] - x1[0]) + c[1] * (y[1] - x1[1])
    })
    .with_grad(move |_, t, out| {
        let c = dcg(t);
        out[0] = c[0];
        out[1] = c[1];
    })
    .named("target_generator");
    Ok(V1Generator { g, k })
}

fn jacobian_at(flow: &FlowMap, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let t0 = flow.hamiltonian().time_interval.0;
    if t == t0 {
        let d = flow.hamiltonian().manifold.dim();
        return Ok(DMatrix::identity(d, d));
    }
    if flow.is_exact() {
        flow_jacobian(flow, x, t0, t, 1e-6)
    } else {
        Ok(monodromy_between(flow.hamiltonian(), x, t0, t, 1e-3)?.last().clone())
    }
}

/// A variation `f_{t,e} = f_t o h_{t,e}` of the path `f_t`.
#[derive(Clone, Debug)]
pub struct Variation {
    pub base: FlowMap,
    pub generator: V1Generator,
    /// `max |h_{1,e} x - x|` over probe points for `e = +-0.05`.
    pub endpoint_residual: f64,
    h_nodes: Vec<f64>,
    h_weights: Vec<f64>,
}

/// Check the zero-average condition and assemble the variation.
pub fn build_variation(f: &FlowMap, gen: V1Generator) -> Result<Variation> {
    let m = f.hamiltonian().manifold;
    if gen.g.manifold != m || gen.k.manifold != m {
        return Err(HoferError::InvalidInput("generator lives on a different manifold".into()));
    }
    let r = gen.time_average_residual();
    if r > V1_TOL {
        return Err(HoferError::CheckFailed { context: "generator has nonzero time average".into(), residual: r });
    }
    let (h_nodes, h_weights) = gauss_legendre_on(H_NODES, 0.0, 1.0);
    let mut var = Variation { base: f.clone(), generator: gen, endpoint_residual: 0.0, h_nodes, h_weights };
    let t1 = f.hamiltonian().time_interval.1;
    let mut worst: f64 = 0.0;
    for x in probe_points(&m) {
        for e in [0.05, -0.05] {
            worst = worst.max(m.distance(&var.h_map(&x, t1, e)?, &x));
        }
    }
    var.endpoint_residual = worst;
    Ok(var)
}

impl Variation {
    fn manifold(&self) -> ManifoldSpec {
        self.base.hamiltonian().manifold
    }

    /// RK4 for the frozen-time field `sgrad K_t` over time `s` in `n` steps.
    fn k_flow_steps(&self, y: &mut [f64], t: f64, s: f64, n: usize) -> Result<()> {
        if s == 0.0 {
            return Ok(());
        }
        let m = self.manifold();
        let k = &self.generator.k;
        let d = y.len();
        let h = s / n as f64;
        let mut k1 = [0.0; 4];
        let mut k2 = [0.0; 4];
        let mut k3 = [0.0; 4];
        let mut k4 = [0.0; 4];
        let mut z = [0.0; 4];
        for _ in 0..n {
            k.sgrad_into(y, t, &mut k1[..d])?;
            for i in 0..d {
                z[i] = y[i] + 0.5 * h * k1[i];
            }
            k.sgrad_into(&z[..d], t, &mut k2[..d])?;
            for i in 0..d {
                z[i] = y[i] + 0.5 * h * k2[i];
            }
            k.sgrad_into(&z[..d], t, &mut k3[..d])?;
            for i in 0..d {
                z[i] = y[i] + h * k3[i];
            }
            k.sgrad_into(&z[..d], t, &mut k4[..d])?;
            for i in 0..d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            m.project(y);
        }
        Ok(())
    }

    /// `h_{t,e}(x)`: time-`e` flow of `K_t`.
    pub fn h_map(&self, x: &[f64], t: f64, eps: f64) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        let n = ((eps.abs() / 1e-3).ceil() as usize).max(4);
        self.k_flow_steps(&mut y, t, eps, n)?;
        Ok(y)
    }

    /// `f_{t,e}(x) = f_t(h_{t,e} x)`.
    pub fn map(&self, x: &[f64], t: f64, eps: f64) -> Result<Vec<f64>> {
        let y = self.h_map(x, t, eps)?;
        let t0 = self.base.hamiltonian().time_interval.0;
        self.base.map(&y, t0, t)
    }

    /// `H(y,t,e) = int_0^e G(phi^{-s}_{K_t} y, t) ds`, Gauss-Legendre in `s`
    /// with the backward flow carried through the nodes.
    pub fn h_generator(&self, y: &[f64], t: f64, eps: f64) -> Result<f64> {
        if eps == 0.0 {
            return Ok(0.0);
        }
        let mut z = y.to_vec();
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (xi, w) in self.h_nodes.iter().zip(&self.h_weights) {
            let s = eps * xi;
            self.k_flow_steps(&mut z, t, -(s - prev), H_SUBSTEPS)?;
            prev = s;
            acc += w * self.generator.g.eval(&z, t);
        }
        Ok(eps * acc)
    }

    /// Generator of the varied path: `F(x,t) + H(f_t^{-1} x, t, e)`.
    pub fn generator_value(&self, x: &[f64], t: f64, eps: f64) -> Result<f64> {
        let f = self.base.hamiltonian();
        let y = self.base.map(x, t, f.time_interval.0)?;
        Ok(f.eval(x, t) + self.h_generator(&y, t, eps)?)
    }

    /// The generator composed with `f_t`: `F(f_t y, t) + H(y, t, e)`.
    /// Autonomous `F` is invariant under its own flow, so `F(y)` is used.
    pub fn pulled_generator(&self, y: &[f64], t: f64, eps: f64) -> Result<f64> {
        let f = self.base.hamiltonian();
        let fv = if f.autonomous {
            f.eval(y, t)
        } else {
            f.eval(&self.base.map(y, f.time_interval.0, t)?, t)
        };
        Ok(fv + self.h_generator(y, t, eps)?)
    }

    /// `v(t) = d/de f_{t,e}(x)|_0 = M(t) sgrad K_t(x)` at a fixed point `x`,
    /// in the symplectic frame at `x`, on `n` uniform samples.
    pub fn field(&self, x: &[f64], n: usize) -> Result<VariationField> {
        let m = self.manifold();
        let (t0, t1) = self.base.hamiltonian().time_interval;
        let d = m.coord_len();
        let scale = m.area_scale.sqrt();
        let frame: Option<([f64; 3], [f64; 3])> = if m.is_sphere() { Some(sphere_frame(x)) } else { None };
        let mut vals = Vec::with_capacity(n);
        let mut w = vec![0.0; d];
        for i in 0..n {
            let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
            self.generator.k.sgrad_into(x, t, &mut w)?;
            let wc = match &frame {
                Some((e1, e2)) => [scale * dot(e1, &w), scale * dot(e2, &w)],
                None => [w[0], w[1]],
            };
            let mt = jacobian_at(&self.base, x, t)?;
            vals.push([mt[(0, 0)] * wc[0] + mt[(0, 1)] * wc[1], mt[(1, 0)] * wc[0] + mt[(1, 1)] * wc[1]]);
        }
        VariationField::new(vals)
    }
}

fn local_chart(m: &ManifoldSpec, c: &[f64], u: &[f64; 2]) -> Vec<f64> {
    if m.is_sphere() {
        let (e1, e2) = sphere_frame(c);
        let v: Vec<f64> = (0..3).map(|i| u[0] * e1[i] + u[1] * e2[i]).collect();
        m.retract(c, &v)
    } else {
        vec![c[0] + u[0], c[1] + u[1]]
    }
}

/// Newton iteration for a local extremum of `sign * f` in a chart at `x0`.
/// Returns the point, the value and whether the Hessian stayed definite.
fn newton_extremum<F>(m: &ManifoldSpec, x0: &[f64], sign: f64, f: F) -> Result<(Vec<f64>, f64, bool)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let hg = 1e-5;
    let hh = 1e-4;
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    let mut ok = true;
    for _ in 0..40 {
        let at = |u: [f64; 2]| f(&local_chart(m, &x, &u));
        let gp = [at([hg, 0.0])?, at([0.0, hg])?];
        let gm = [at([-hg, 0.0])?, at([0.0, -hg])?];
        let g = Vector2::new((gp[0] - gm[0]) / (2.0 * hg), (gp[1] - gm[1]) / (2.0 * hg));
        let huu = (at([hh, 0.0])? - 2.0 * fx + at([-hh, 0.0])?) / (hh * hh);
        let hvv = (at([0.0, hh])? - 2.0 * fx + at([0.0, -hh])?) / (hh * hh);
        let huv = (at([hh, hh])? - at([hh, -hh])? - at([-hh, hh])? + at([-hh, -hh])?) / (4.0 * hh * hh);
        let hm = Matrix2::new(huu, huv, huv, hvv);
        let sh = hm * -sign;
        ok = sh[(0, 0)] > 0.0 && sh.determinant() > 0.0;
        let step = match hm.try_inverse() {
            Some(hi) if ok => -(hi * g),
            _ => g * (sign * 1e-2),
        };
        let mut lam = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let y = local_chart(m, &x, &[lam * step[0], lam * step[1]]);
            let fy = f(&y)?;
            if sign * (fy - fx) >= -1e-15 * fx.abs().max(1.0) {
                x = y;
                fx = fy;
                moved = true;
                break;
            }
            lam *= 0.5;
        }
        if !moved || lam * step.norm() < 1e-12 {
            break;
        }
    }
    Ok((x, fx, ok))
}

/// Length functionals along a variation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LengthProfile {
    pub eps: Vec<f64>,
    /// `int max_x F(x,t,e) dt`
    pub ell_plus: Vec<Option<f64>>,
    /// `int min_x F(x,t,e) dt`
    pub ell_minus: Vec<Option<f64>>,
    /// `ell_plus - ell_minus` when both are tracked.
    pub ell: Vec<Option<f64>>,
    /// Set when a tracked extremum stopped being nondegenerate.
    pub lost_uniqueness: bool,
}

/// `int_0^1 (max or min)_x F(x,t,e) dt` by Simpson over 129 nodes, each
/// extremum found by Newton iteration warm-started from the previous node.
pub fn tracked_integral(var: &Variation, start: &[f64], side: Side, eps: f64) -> Result<(f64, bool)> {
    let m = var.manifold();
    let (t0, t1) = var.base.hamiltonian().time_interval;
    let n = PROFILE_NODES - 1;
    let h = (t1 - t0) / n as f64;
    let mut x = start.to_vec();
    let mut vals = Vec::with_capacity(n + 1);
    let mut ok = true;
    for i in 0..=n {
        let t = t0 + h * i as f64;
        let (y, v, good) = newton_extremum(&m, &x, side.sign(), |y| var.pulled_generator(y, t, eps))?;
        ok &= good;
        x = y;
        vals.push(v);
    }
    Ok((simpson(&vals, h), ok))
}

/// `ell_+`, `ell_-` and `ell` at each `e`, tracking the extrema recorded in
/// `extremal`.
pub fn length_profile(var: &Variation, extremal: &ExtremalData, eps_list: &[f64]) -> Result<LengthProfile> {
    let mut prof = LengthProfile {
        eps: eps_list.to_vec(),
        ell_plus: Vec::new(),
        ell_minus: Vec::new(),
        ell: Vec::new(),
        lost_uniqueness: false,
    };
    for &e in eps_list {
        let p = match &extremal.x_plus {
            Some(x) => {
                let (v, ok) = tracked_integral(var, x, Side::Plus, e)?;
                prof.lost_uniqueness |= !ok;
                Some(v)
            }
            None => None,
        };
        let q = match &extremal.x_minus {
            Some(x) => {
                let (v, ok) = tracked_integral(var, x, Side::Minus, e)?;
                prof.lost_uniqueness |= !ok;
                Some(v)
            }
            None => None,
        };
        prof.ell.push(match (p, q) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        });
        prof.ell_plus.push(p);
        prof.ell_minus.push(q);
    }
    Ok(prof)
}

/// Five-point second derivative of `ell_+` or `ell_-` at `e = 0` with step `h`.
pub fn fd_second_variation(var: &Variation, extremal: &ExtremalData, side: Side, h: f64) -> Result<f64> {
    let x = extremal.point(side).ok_or_else(|| HoferError::InvalidInput(format!("no {side:?} extremum")))?;
    let mut e = [0.0; 5];
    for (i, k) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
        let (v, ok) = tracked_integral(var, x, side, k * h)?;
        if !ok {
            return Err(HoferError::CheckFailed { context: "extremum became degenerate along the variation".into(), residual: k * h });
        }
        e[i] = v;
    }
    Ok((-e[0] + 16.0 * e[1] - 30.0 * e[2] + 16.0 * e[3] - e[4]) / (12.0 * h * h))
}

/// `Q(v) = -int_0^1 (Omega(C^{-1} v', v') + Omega(v', v)) dt`.
pub fn second_variation_q(extremal: &ExtremalData, side: Side, v: &VariationField) -> Result<f64> {
    let f = &extremal.hamiltonian;
    let (t0, t1) = f.time_interval;
    let vd = v.derivative();
    let fixed = if f.autonomous { Some(extremal.c_matrix(side, t0)?) } else { None };
    let mut vals = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        let t = t0 + (t1 - t0) * v.time(i);
        let c = match &fixed {
            Some(c) => c.clone(),
            None => extremal.c_matrix(side, t)?,
        };
        if c.nrows() != 2 {
            return Err(HoferError::Unsupported("second variation is implemented for surfaces".into()));
        }
        let cm = Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]);
        let scale = cm.norm().max(1e-300);
        if cm.determinant().abs() <= 1e-12 * scale * scale {
            return Err(HoferError::CheckFailed { context: format!("C is singular at t = {t}"), residual: cm.determinant() });
        }
        let w = cm.try_inverse().expect("checked determinant") * Vector2::new(vd[i][0], vd[i][1]);
        vals.push(omega2(&[w[0], w[1]], &vd[i]) + omega2(&vd[i], &v.values[i]));
    }
    Ok(-(t1 - t0) * simpson(&vals, v.step()))
}

/// `int_0^1 dF/de(f_{t,e} x, t, e) dt` by central differences in `e`.
/// Since `f_t^{-1} f_{t,e} x = h_{t,e} x`, the base term cancels and only
/// `H` is differenced.
pub fn variation_lemma_integral(var: &Variation, x: &[f64], eps: f64, step: f64) -> Result<f64> {
    let (t0, t1) = var.base.hamiltonian().time_interval;
    let n = PATH_SAMPLES - 1;
    let h = (t1 - t0) / n as f64;
    let mut vals = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = t0 + h * i as f64;
        let y = var.h_map(x, t, eps)?;
        let d = (var.h_generator(&y, t, eps + step)? - var.h_generator(&y, t, eps - step)?) / (2.0 * step);
        vals.push(d);
    }
    Ok(simpson(&vals, h))
}

/// `int_0^1 (max - min)(F - e G) dt` over 65 nodes; extrema start from the
/// grid and are compared with the values at `seeds`.
pub fn vert0_perturbed(f: &Hamiltonian, g: &Hamiltonian, eps: f64, grid: &Grid, seeds: &[Vec<f64>]) -> Result<f64> {
    let (fv, gv) = (f.clone(), g.clone());
    let pert = Hamiltonian::new(f.manifold, move |x, t| fv.eval(x, t) - eps * gv.eval(x, t)).with_interval(f.time_interval.0, f.time_interval.1);
    let (a, b) = f.time_interval;
    let n = PATH_SAMPLES - 1;
    let h = (b - a) / n as f64;
    let mut vals = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = a + h * i as f64;
        let e = extrema(&pert, t, grid)?;
        let (mut mx, mut mn) = (e.max, e.min);
        for s in seeds {
            let v = pert.eval(s, t);
            mx = mx.max(v);
            mn = mn.min(v);
        }
        vals.push(mx - mn);
    }
    Ok(simpson(&vals, h))
}

/// A conjugate time with the kernel of `M(T) - I`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugateRoot {
    pub t: f64,
    pub sigma_min: f64,
    pub kernel: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugateScan {
    pub roots: Vec<ConjugateRoot>,
    /// `sigma_min(M(T) - I)` vanishes on the whole grid.
    pub degenerate: bool,
    pub grid: Vec<f64>,
    pub sigma_min: Vec<f64>,
    pub det: Vec<f64>,
}

const SIGMA_ROOT_TOL: f64 = 1e-6;

fn gap_matrix(f: &Hamiltonian, flow: Option<&FlowMap>, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let t0 = f.time_interval.0;
    let m = match flow {
        Some(fl) => flow_jacobian(fl, x, t0, t, 1e-6)?,
        None => monodromy_between(f, x, t0, t, 1e-3)?.last().clone(),
    };
    let d = m.nrows();
    Ok(m - DMatrix::identity(d, d))
}

fn sigma_min_kernel(a: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let svd = a.clone().svd(false, true);
    let (i, s) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |b, (i, s)| if *s < b.1 { (i, *s) } else { b });
    let vt = svd.v_t.expect("requested");
    (s, vt.row(i).iter().cloned().collect())
}

/// Times `T` on the grid range where `M(T) - I` is singular, for the
/// linearized flow at the fixed point `x` of an autonomous `F`. Candidates
/// are interior local minima of `sigma_min` (and the right endpoint) refined
/// by golden-section search, plus sign changes of the determinant refined by
/// bisection; both are accepted when `sigma_min <= 1e-6` after refinement.
pub fn conjugate_point_scan(f: &Hamiltonian, x: &[f64], t_grid: &[f64]) -> Result<ConjugateScan> {
    if !f.autonomous {
        return Err(HoferError::InvalidInput("conjugate point scan needs an autonomous Hamiltonian".into()));
    }
    if t_grid.len() < 3 || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid[0] <= f.time_interval.0 {
        return Err(HoferError::InvalidInput("T grid must be increasing, positive and have at least 3 points".into()));
    }
    let exact = if f.exact_flow().is_some() { Some(FlowMap::exact(f)?) } else { None };
    let fl = exact.as_ref();
    let sig = |t: f64| -> Result<(f64, Vec<f64>, f64)> {
        let a = gap_matrix(f, fl, x, t)?;
        let det = a.determinant();
        let (s, k) = sigma_min_kernel(&a);
        Ok((s, k, det))
    };
    let mut sigma = Vec::with_capacity(t_grid.len());
    let mut dets = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let (s, _, d) = sig(t)?;
        sigma.push(s);
        dets.push(d);
    }
    let scale = sigma.iter().cloned().fold(0.0, f64::max);
    let degenerate = sigma.iter().all(|s| *s <= SIGMA_ROOT_TOL.max(1e-9 * scale));
    let mut scan = ConjugateScan { roots: Vec::new(), degenerate, grid: t_grid.to_vec(), sigma_min: sigma.clone(), det: dets.clone() };
    if degenerate {
        return Ok(scan);
    }
    let n = t_grid.len();
    let mut cands = Vec::new();
    for i in 1..n {
        let right_end = i == n - 1;
        let is_min = sigma[i] <= sigma[i - 1] && (right_end || sigma[i] <= sigma[i + 1]);
        if is_min {
            let lo = t_grid[i - 1];
            let hi = if right_end { t_grid[i] } else { t_grid[i + 1] };
            cands.push(golden_min(|t| sig(t).map(|v| v.0), lo, hi)?);
        }
        if dets[i - 1] * dets[i] < 0.0 {
            cands.push(bisect(|t| sig(t).map(|v| v.2), t_grid[i - 1], t_grid[i], dets[i - 1])?);
        }
    }
    cands.sort_by(f64::total_cmp);
    for t in cands {
        let (s, k, _) = sig(t)?;
        if s > SIGMA_ROOT_TOL {
            continue;
        }
        if scan.roots.last().is_some_and(|r| (r.t - t).abs() < 1e-5) {
            continue;
        }
        scan.roots.push(ConjugateRoot { t, sigma_min: s, kernel: k });
    }
    Ok(scan)
}

fn golden_min(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    // the endpoints themselves may be the minimum
    let mid = 0.5 * (a + b);
    Ok(mid)
}

fn bisect(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, fa: f64) -> Result<f64> {
    let mut fa = fa;
    while b - a > 1e-10 {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}

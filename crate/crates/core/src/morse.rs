//! Morse complex over Z/2 on the sphere and the torus.
//!
//! Critical points are found by Newton iteration from a seed grid, gradient
//! lines of a conformally perturbed metric are shot from each critical point,
//! and the parities of the connecting trajectories give the boundary matrix.

use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HoferError, Result};
use crate::geometry::{dot, norm, ManifoldKind, ManifoldSpec};
use crate::hamiltonian::{catalog, CatalogParams, Hamiltonian};
use crate::report::Report;

pub const GRAD_TOL: f64 = 1e-8;
pub const EIGEN_TOL: f64 = 1e-4;
pub const DEDUP_RADIUS: f64 = 1e-4;
pub const MAX_BASIS: usize = 20;
pub const EXHAUSTIVE_MAX_DIM: usize = 6;

/// Tunables of the critical point search and the shooting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorseOptions {
    pub seeds_per_axis: usize,
    pub offset: f64,
    pub fan: usize,
    pub dt: f64,
    pub time_budget: f64,
    pub level_radius: f64,
    pub metric_amp: f64,
    pub metric_seed: u64,
}

impl Default for MorseOptions {
    fn default() -> Self {
        MorseOptions {
            seeds_per_axis: 24,
            offset: 1e-3,
            fan: 360,
            dt: 2e-3,
            time_budget: 60.0,
            level_radius: 0.05,
            metric_amp: 1e-2,
            metric_seed: 7,
        }
    }
}

impl MorseOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.offset, self.dt, self.time_budget, self.level_radius];
        if pos.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(HoferError::InvalidInput("offset, dt, time_budget and level_radius must be positive".into()));
        }
        if self.seeds_per_axis < 2 || self.fan < 8 {
            return Err(HoferError::InvalidInput("need at least 2 seeds per axis and 8 fan directions".into()));
        }
        if !self.metric_amp.is_finite() || self.metric_amp.abs() > 0.5 {
            return Err(HoferError::InvalidInput("metric amplitude must be finite and at most 0.5".into()));
        }
        if self.level_radius <= 10.0 * self.offset {
            return Err(HoferError::InvalidInput("level radius must exceed ten shooting offsets".into()));
        }
        Ok(())
    }
}

/// Conformal factor `exp(2 phi)` on the flat torus or the round sphere, with
/// `phi` a sum of three seeded sine modes of total amplitude `amp`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalMetric {
    pub amp: f64,
    pub seed: u64,
    modes: Vec<([f64; 3], f64, f64)>,
}

impl ConformalMetric {
    pub fn new(m: &ManifoldSpec, amp: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<(f64, [f64; 3], f64)> = (0..3)
            .map(|_| {
                let k = if m.is_sphere() {
                    [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]
                } else {
                    [rng.gen_range(-2i32..=2) as f64, rng.gen_range(1i32..=2) as f64, 0.0]
                };
                (rng.gen_range(0.2..1.0), k, rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let modes = raw.into_iter().map(|(w, k, ph)| (k, amp * w / total, ph)).collect();
        ConformalMetric { amp, seed, modes }
    }

    pub fn flat() -> Self {
        ConformalMetric { amp: 0.0, seed: 0, modes: vec![] }
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(k, w, ph)| {
                let s: f64 = x.iter().zip(k).map(|(a, b)| a * b).sum();
                w * (std::f64::consts::TAU * s + ph).sin()
            })
            .sum()
    }

    /// `exp(2 phi(x))`, the ratio of the metric to the round or flat one.
    pub fn factor(&self, x: &[f64]) -> f64 {
        (2.0 * self.phi(x)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub point: Vec<f64>,
    pub index: usize,
    pub value: f64,
    pub grad_norm: f64,
    /// Hessian eigenvalues with respect to the perturbed metric.
    pub eigenvalues: [f64; 2],
    /// Unstable eigenvector in ambient coordinates (index 1 points only).
    pub unstable: Option<Vec<f64>>,
    pub degenerate: bool,
}

/// A function on a surface with its critical points.
#[derive(Clone)]
pub struct MorseData {
    pub surface: ManifoldSpec,
    pub function: Hamiltonian,
    pub metric: ConformalMetric,
    pub critical: Vec<CriticalPoint>,
    pub unconverged_seeds: usize,
}

impl MorseData {
    pub fn has_degenerate(&self) -> bool {
        self.critical.iter().any(|c| c.degenerate)
    }

    pub fn count_by_index(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in &self.critical {
            c[p.index.min(2)] += 1;
        }
        c
    }

    pub fn euler_characteristic(&self) -> i64 {
        let c = self.count_by_index();
        c[0] as i64 - c[1] as i64 + c[2] as i64
    }

    fn nearest(&self, x: &[f64]) -> (usize, f64) {
        self.critical
            .iter()
            .enumerate()
            .map(|(i, c)| (i, self.surface.distance(x, &c.point)))
            .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }
}

fn check_surface(m: &ManifoldSpec) -> Result<()> {
    match m.kind {
        ManifoldKind::Sphere2 | ManifoldKind::Torus2 => Ok(()),
        _ => Err(HoferError::Unsupported(format!("Morse complex on {}", m.name()))),
    }
}

/// Named Morse test functions: `height` on the sphere, `tilted_height` and
/// the degenerate `ridge` (`cos 2 pi p`) on the torus.
pub fn morse_function(m: &ManifoldSpec, name: &str, a: f64) -> Result<Hamiltonian> {
    check_surface(m)?;
    let mut p = CatalogParams::new();
    match (m.kind, name) {
        (ManifoldKind::Sphere2, "height") => catalog("height", &p),
        (ManifoldKind::Torus2, "tilted_height") => {
            p.insert("a".into(), a);
            catalog("tilted_height", &p)
        }
        (ManifoldKind::Torus2, "ridge") => {
            p.insert("axis".into(), 0.0);
            Ok(catalog("torus_wave", &p)?.named("ridge"))
        }
        _ => Err(HoferError::InvalidInput(format!("unknown Morse function {name} on {}", m.name()))),
    }
}

fn tangent_part(m: &ManifoldSpec, x: &[f64], v: &mut [f64]) {
    if m.is_sphere() {
        let c = dot(x, v);
        for i in 0..3 {
            v[i] -= c * x[i];
        }
    }
}

/// Round or flat gradient, tangent to the surface.
fn flat_gradient(f: &Hamiltonian, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = f.gradient(x, 0.0)?;
    tangent_part(&f.manifold, x, &mut g);
    Ok(g)
}

/// Hessian in the orthonormal tangent frame of the round or flat metric.
fn flat_hessian(f: &Hamiltonian, x: &[f64]) -> Result<DMatrix<f64>> {
    let h = f.hessian(x, 0.0)?;
    // the sphere Hessian is taken in a frame rescaled by 1 / sqrt(area scale)
    let s = if f.manifold.is_sphere() { f.manifold.area_scale } else { 1.0 };
    Ok(h * s)
}

fn advance(m: &ManifoldSpec, x: &[f64], v: &[f64], c: f64) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + c * b).collect();
    m.project(&mut y);
    y
}

fn wrap_point(m: &ManifoldSpec, x: &mut [f64]) {
    if !m.is_sphere() {
        x.iter_mut().for_each(|c| *c = c.rem_euclid(1.0));
    }
}

fn seed_points(m: &ManifoldSpec, n: usize) -> Vec<Vec<f64>> {
    if m.is_sphere() {
        // Fibonacci lattice
        let total = n * n;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..total)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / total as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                vec![r * th.cos(), r * th.sin(), z]
            })
            .collect()
    } else {
        let h = 1.0 / n as f64;
        (0..n * n).map(|k| vec![(k / n) as f64 * h + 0.137 * h, (k % n) as f64 * h + 0.291 * h]).collect()
    }
}

fn newton(f: &Hamiltonian, metric: &ConformalMetric, x0: &[f64]) -> Result<Option<Vec<f64>>> {
    let m = &f.manifold;
    let mut x = x0.to_vec();
    for _ in 0..80 {
        let g = flat_gradient(f, &x)?;
        if norm(&g) * (-metric.phi(&x)).exp() <= GRAD_TOL {
            wrap_point(m, &mut x);
            return Ok(Some(x));
        }
        let b = m.tangent_basis(&x);
        let g2 = nalgebra::DVector::from_vec(vec![dot(&g, &b[0]), dot(&g, &b[1])]);
        let h = flat_hessian(f, &x)?;
        let svd = h.svd(true, true);
        let tol = 1e-10 * svd.singular_values.max().max(1.0);
        let step = match svd.solve(&g2, tol) {
            Ok(s) => s,
            Err(_) => return Ok(None),
        };
        let mut s = [-step[0], -step[1]];
        let len = s[0].hypot(s[1]);
        if !len.is_finite() {
            return Ok(None);
        }
        if len > 0.1 {
            s = [s[0] * 0.1 / len, s[1] * 0.1 / len];
        }
        let v: Vec<f64> = (0..x.len()).map(|i| s[0] * b[0][i] + s[1] * b[1][i]).collect();
        x = advance(m, &x, &v, 1.0);
    }
    Ok(None)
}

/// Critical points of `f` on its surface with Morse indices, refined by Newton
/// iteration from a seed grid and deduplicated within `DEDUP_RADIUS`.
/// Degenerate points are kept and flagged.
pub fn critical_points(f: &Hamiltonian, metric: &ConformalMetric, seeds_per_axis: usize) -> Result<MorseData> {
    let m = f.manifold.clone();
    check_surface(&m)?;
    let seeds = seed_points(&m, seeds_per_axis);
    let found: Vec<Option<Vec<f64>>> = seeds.par_iter().map(|s| newton(f, metric, s)).collect::<Result<_>>()?;
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let mut unconverged = 0;
    for p in found {
        match p {
            Some(p) => {
                if pts.iter().all(|q| m.distance(q, &p) > DEDUP_RADIUS) {
                    pts.push(p);
                }
            }
            None => unconverged += 1,
        }
    }
    let mut critical = Vec::with_capacity(pts.len());
    for p in pts {
        let conf = metric.factor(&p);
        let h = flat_hessian(f, &p)?;
        let eig = SymmetricEigen::new(h);
        let mut order = [0usize, 1];
        order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
        let ev = [eig.eigenvalues[order[0]] / conf, eig.eigenvalues[order[1]] / conf];
        let index = ev.iter().filter(|e| **e < 0.0).count();
        let degenerate = ev.iter().any(|e| e.abs() < EIGEN_TOL);
        let unstable = (index == 1).then(|| {
            let b = m.tangent_basis(&p);
            let u = eig.eigenvectors.column(order[0]);
            (0..p.len()).map(|i| u[0] * b[0][i] + u[1] * b[1][i]).collect()
        });
        let g = flat_gradient(f, &p)?;
        critical.push(CriticalPoint {
            value: f.value(&p, 0.0)?,
            grad_norm: norm(&g) * (-metric.phi(&p)).exp(),
            point: p,
            index,
            eigenvalues: ev,
            unstable,
            degenerate,
        });
    }
    // by index, then by decreasing value
    critical.sort_by(|a, b| a.index.cmp(&b.index).then(b.value.total_cmp(&a.value)));
    Ok(MorseData { surface: m, function: f.clone(), metric: metric.clone(), critical, unconverged_seeds: unconverged })
}

#[derive(Clone, Debug, Default)]
struct Shot {
    landed: Option<usize>,
    /// First crossing into the level sphere of each critical point.
    entries: Vec<(usize, Vec<f64>)>,
    /// First point at which the function drops below the probe level, or the
    /// landing point when it never does.
    below: Option<Vec<f64>>,
    flagged: bool,
}

impl Shot {
    fn entry(&self, y: usize) -> Option<&Vec<f64>> {
        self.entries.iter().find(|e| e.0 == y).map(|e| &e.1)
    }
}

fn descent(d: &MorseData, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = flat_gradient(&d.function, x)?;
    let c = -1.0 / d.metric.factor(x);
    g.iter_mut().for_each(|v| *v *= c);
    Ok(g)
}

/// Follow the negative gradient flow from `x0` until the metric gradient norm
/// drops below `GRAD_TOL` or the time budget runs out.
fn shoot(d: &MorseData, x0: &[f64], o: &MorseOptions, level: f64) -> Result<Shot> {
    let m = &d.surface;
    let mut shot = Shot::default();
    let mut x = x0.to_vec();
    let dist = |x: &[f64]| -> Vec<f64> { d.critical.iter().map(|c| m.distance(x, &c.point)).collect() };
    let mut prev = dist(&x);
    let mut inside: Vec<bool> = prev.iter().map(|r| *r < o.level_radius).collect();
    let steps = (o.time_budget / o.dt).ceil() as usize;
    let h = o.dt;
    for _ in 0..steps {
        let k1 = descent(d, &x)?;
        let gnorm = norm(&k1) * (d.metric.phi(&x)).exp();
        if gnorm <= GRAD_TOL {
            let (i, r) = d.nearest(&x);
            if r < 1e-3 {
                shot.landed = Some(i);
                if shot.below.is_none() {
                    shot.below = Some(d.critical[i].point.clone());
                }
            } else {
                shot.flagged = true;
            }
            return Ok(shot);
        }
        let k2 = descent(d, &advance(m, &x, &k1, h / 2.0))?;
        let k3 = descent(d, &advance(m, &x, &k2, h / 2.0))?;
        let k4 = descent(d, &advance(m, &x, &k3, h))?;
        let v: Vec<f64> = (0..x.len()).map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0).collect();
        let y = advance(m, &x, &v, h);
        if shot.below.is_none() {
            let (fx, fy) = (d.function.value(&x, 0.0)?, d.function.value(&y, 0.0)?);
            if fy <= level {
                let s = ((fx - level) / (fx - fy)).clamp(0.0, 1.0);
                let step: Vec<f64> = (0..x.len()).map(|k| y[k] - x[k]).collect();
                let mut b = advance(m, &x, &step, s);
                wrap_point(m, &mut b);
                shot.below = Some(b);
            }
        }
        let now = dist(&y);
        for i in 0..d.critical.len() {
            let r = o.level_radius;
            if !inside[i] && now[i] < r {
                inside[i] = true;
                if shot.entry(i).is_none() {
                    let s = ((prev[i] - r) / (prev[i] - now[i])).clamp(0.0, 1.0);
                    let step: Vec<f64> = (0..x.len()).map(|k| y[k] - x[k]).collect();
                    let mut e = advance(m, &x, &step, s);
                    wrap_point(m, &mut e);
                    shot.entries.push((i, e));
                }
            } else if inside[i] && now[i] >= r {
                inside[i] = false;
            }
        }
        prev = now;
        x = y;
    }
    shot.flagged = true;
    Ok(shot)
}

/// Connecting trajectories between two critical points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCount {
    pub source: usize,
    pub target: usize,
    pub count: usize,
    pub parity: u8,
    pub runs: usize,
    pub flagged_runs: usize,
    pub low_confidence: bool,
}

/// Depth of the probe level below a saddle value: a tenth of the smallest
/// gap between distinct critical values.
fn probe_depth(d: &MorseData) -> f64 {
    let mut v: Vec<f64> = d.critical.iter().map(|c| c.value).collect();
    v.sort_by(f64::total_cmp);
    let gap = v.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 1e-9).fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        0.1 * gap
    } else {
        0.1
    }
}

fn start_point(d: &MorseData, x: &[f64], dir: &[f64], offset: f64) -> Vec<f64> {
    // offset measured in the perturbed metric
    let c = offset * (-d.metric.phi(x)).exp();
    let mut y = advance(&d.surface, x, dir, c);
    wrap_point(&d.surface, &mut y);
    y
}

fn fan_direction(d: &MorseData, x: &[f64], th: f64) -> Vec<f64> {
    let b = d.surface.tangent_basis(x);
    (0..x.len()).map(|i| th.cos() * b[0][i] + th.sin() * b[1][i]).collect()
}

fn cluster(points: &[Vec<f64>], m: &ManifoldSpec, radius: f64) -> usize {
    let mut reps: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if reps.iter().all(|r| m.distance(r, p) >= radius) {
            reps.push(p);
        }
    }
    reps.len()
}

/// Parity of the number of negative gradient trajectories from `x` to `y`,
/// where `index(x) = index(y) + 1`. Saddles shoot their two unstable
/// directions. Maxima shoot a fan of `o.fan` directions and record where each
/// line first drops below a probe level just under `F(y)`; that point jumps
/// across a line ending at a saddle, and bisection between neighbours with a
/// jump converges to the connecting line. Landings whose level sphere
/// crossings lie within `10 * offset` are one trajectory.
pub fn trajectory_count(d: &MorseData, x: usize, y: usize, o: &MorseOptions) -> Result<TrajectoryCount> {
    o.validate()?;
    let (cx, cy) = match (d.critical.get(x), d.critical.get(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(HoferError::InvalidInput("critical point index out of range".into())),
    };
    if cx.index != cy.index + 1 {
        return Err(HoferError::InvalidInput(format!(
            "indices {} and {} do not differ by one",
            cx.index, cy.index
        )));
    }
    if cx.degenerate || cy.degenerate {
        return Err(HoferError::CheckFailed { context: "degenerate critical point".into(), residual: 0.0 });
    }
    let m = &d.surface;
    let mut landings: Vec<Vec<f64>> = Vec::new();
    let mut runs = 0;
    let mut flagged = 0;
    match cx.index {
        1 => {
            let u = cx.unstable.as_ref().expect("index 1 point has an unstable direction");
            for sgn in [1.0, -1.0] {
                let dir: Vec<f64> = u.iter().map(|c| sgn * c).collect();
                let s = shoot(d, &start_point(d, &cx.point, &dir, o.offset), o, f64::NEG_INFINITY)?;
                runs += 1;
                flagged += s.flagged as usize;
                if s.landed == Some(y) {
                    landings.push(s.entry(y).cloned().unwrap_or_else(|| cy.point.clone()));
                }
            }
        }
        2 => {
            let level = cy.value - probe_depth(d);
            let n = o.fan;
            let angle = |k: f64| std::f64::consts::TAU * (k + 0.5) / n as f64;
            let fire = |th: f64| shoot(d, &start_point(d, &cx.point, &fan_direction(d, &cx.point, th), o.offset), o, level);
            let shots: Vec<Shot> = (0..n).into_par_iter().map(|k| fire(angle(k as f64))).collect::<Result<_>>()?;
            runs += n;
            flagged += shots.iter().filter(|s| s.flagged).count();
            for s in &shots {
                if s.landed == Some(y) {
                    landings.push(s.entry(y).cloned().unwrap_or_else(|| cy.point.clone()));
                }
            }
            let gap = |a: &Shot, b: &Shot| match (&a.below, &b.below) {
                (Some(p), Some(q)) => m.distance(p, q),
                _ => f64::INFINITY,
            };
            // a trajectory ending at a critical point above the probe level
            // separates neighbours whose probe crossings jump apart
            let brackets: Vec<usize> = (0..n)
                .filter(|&k| {
                    let (a, b) = (&shots[k], &shots[(k + 1) % n]);
                    a.landed != Some(y) && b.landed != Some(y) && gap(a, b) > o.level_radius
                })
                .collect();
            let refined: Vec<(Option<Vec<f64>>, usize, bool)> = brackets
                .par_iter()
                .map(|&k| -> Result<_> {
                    let (mut lo, mut hi) = (angle(k as f64), angle(k as f64 + 1.0));
                    let (mut s_lo, mut s_hi) = (shots[k].clone(), shots[(k + 1) % n].clone());
                    let mut runs = 0;
                    let mut flagged = false;
                    for _ in 0..64 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        let s = fire(mid)?;
                        runs += 1;
                        flagged |= s.flagged;
                        if s.landed == Some(y) {
                            return Ok((s.entry(y).cloned(), runs, flagged));
                        }
                        if gap(&s, &s_lo) <= gap(&s, &s_hi) {
                            lo = mid;
                            s_lo = s;
                        } else {
                            hi = mid;
                            s_hi = s;
                        }
                    }
                    // a genuine separatrix keeps the jump open; the limit must pass through y
                    if gap(&s_lo, &s_hi) <= 1e-3 {
                        return Ok((None, runs, flagged));
                    }
                    let near = |s: &Shot| s.entry(y).cloned();
                    Ok((near(&s_lo).filter(|_| near(&s_hi).is_some()), runs, flagged))
                })
                .collect::<Result<_>>()?;
            for (p, r, f) in refined {
                runs += r;
                flagged += f as usize;
                if let Some(p) = p {
                    landings.push(p);
                }
            }
        }
        _ => return Err(HoferError::Unsupported(format!("source of index {}", cx.index))),
    }
    let count = cluster(&landings, m, 10.0 * o.offset);
    Ok(TrajectoryCount {
        source: x,
        target: y,
        count,
        parity: (count % 2) as u8,
        runs,
        flagged_runs: flagged,
        low_confidence: flagged > 0,
    })
}

/// Graded Z/2 chain complex with at most 32 generators. Column `j` of the
/// boundary is the bit mask of `d(e_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainComplexZ2 {
    pub degrees: Vec<usize>,
    pub labels: Vec<String>,
    pub columns: Vec<u32>,
    pub low_confidence: bool,
}

impl ChainComplexZ2 {
    /// Complex from degrees and a 0/1 matrix `d[i][j]` = coefficient of
    /// `e_i` in `d(e_j)`. Entries must lower the degree by one.
    pub fn new(degrees: Vec<usize>, d: &[Vec<u8>]) -> Result<Self> {
        let n = degrees.len();
        if n > 32 {
            return Err(HoferError::InvalidInput("at most 32 generators".into()));
        }
        if d.len() != n || d.iter().any(|r| r.len() != n) {
            return Err(HoferError::InvalidInput("boundary matrix must be square of size #generators".into()));
        }
        let mut columns = vec![0u32; n];
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(HoferError::InvalidInput("entries must be 0 or 1".into()));
                }
                if v == 1 {
                    if degrees[j] != degrees[i] + 1 {
                        return Err(HoferError::InvalidInput(format!("entry ({i}, {j}) does not lower degree by one")));
                    }
                    columns[j] |= 1 << i;
                }
            }
        }
        let labels = (0..n).map(|i| format!("e{i}")).collect();
        Ok(ChainComplexZ2 { degrees, labels, columns, low_confidence: false })
    }

    pub fn zero(degrees: Vec<usize>) -> Result<Self> {
        let n = degrees.len();
        Self::new(degrees, &vec![vec![0; n]; n])
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn matrix(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| ((self.columns[j] >> i) & 1) as u8).collect()).collect()
    }

    pub fn boundary(&self, v: u32) -> u32 {
        let mut out = 0;
        let mut w = v;
        while w != 0 {
            let j = w.trailing_zeros() as usize;
            out ^= self.columns[j];
            w &= w - 1;
        }
        out
    }

    /// Number of nonzero entries of the square of the boundary.
    pub fn d_squared_defect(&self) -> u32 {
        self.columns.iter().map(|c| self.boundary(*c).count_ones()).sum()
    }

    pub fn top_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    fn degree_mask(&self, m: usize) -> u32 {
        self.degrees.iter().enumerate().filter(|(_, d)| **d == m).fold(0, |a, (i, _)| a | (1 << i))
    }
}

fn basis_vectors(mask: u32) -> Vec<u32> {
    (0..32).filter(|i| mask >> i & 1 == 1).map(|i| 1u32 << i).collect()
}

/// Rank over Z/2 of a list of bit vectors.
pub fn rank_z2(vs: &[u32]) -> usize {
    echelon(vs).len()
}

fn echelon(vs: &[u32]) -> Vec<u32> {
    let mut rows: Vec<u32> = Vec::new();
    for &v in vs {
        let mut w = v;
        for r in &rows {
            let lead = 31 - r.leading_zeros();
            if w >> lead & 1 == 1 {
                w ^= r;
            }
        }
        if w != 0 {
            rows.push(w);
            rows.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    rows
}

/// Basis of the kernel of `map` restricted to the span of `vs`.
fn kernel(vs: &[u32], map: impl Fn(u32) -> u32) -> Vec<u32> {
    // eliminate on images while tracking the combinations
    let mut rows: Vec<(u32, u32)> = Vec::new();
    let mut ker = Vec::new();
    for &v in vs {
        let (mut img, mut comb) = (map(v), v);
        for (ri, rc) in &rows {
            let lead = 31 - ri.leading_zeros();
            if img >> lead & 1 == 1 {
                img ^= ri;
                comb ^= rc;
            }
        }
        if img == 0 {
            ker.push(comb);
        } else {
            rows.push((img, comb));
            rows.sort_unstable_by(|a, b| b.0.cmp(&a.0));
        }
    }
    ker
}

/// Z/2 Betti numbers in degrees `0..=top`. Requires `d^2 = 0`.
pub fn homology(c: &ChainComplexZ2) -> Result<Vec<usize>> {
    let defect = c.d_squared_defect();
    if defect != 0 {
        return Err(HoferError::CheckFailed { context: "boundary does not square to zero".into(), residual: defect as f64 });
    }
    let top = c.top_degree();
    let rank_d = |m: usize| -> usize {
        let cols: Vec<u32> = basis_vectors(c.degree_mask(m)).iter().map(|v| c.boundary(*v)).collect();
        rank_z2(&cols)
    };
    Ok((0..=top)
        .map(|m| c.degree_mask(m).count_ones() as usize - rank_d(m) - if m < top { rank_d(m + 1) } else { 0 })
        .collect())
}

fn cycles_and_boundaries(c: &ChainComplexZ2) -> (Vec<u32>, Vec<u32>) {
    let all: Vec<u32> = (0..c.len()).map(|i| 1u32 << i).collect();
    let z = kernel(&all, |v| c.boundary(v));
    let b = echelon(&all.iter().map(|v| c.boundary(*v)).collect::<Vec<_>>());
    (z, b)
}

/// Does the subcomplex spanned by `v` (assumed closed under the boundary)
/// carry all of the homology?
fn surjects(c: &ChainComplexZ2, v: &[u32], z: &[u32], b: &[u32]) -> bool {
    let zv = kernel(v, |w| c.boundary(w));
    let mut span = zv;
    span.extend_from_slice(b);
    rank_z2(&span) == z.len()
}

fn check_essential_input(c: &ChainComplexZ2, e: usize) -> Result<()> {
    if c.len() > MAX_BASIS {
        return Err(HoferError::InvalidInput(format!("basis of size {} exceeds {MAX_BASIS}", c.len())));
    }
    if e >= c.len() {
        return Err(HoferError::InvalidInput(format!("no basis element {e}")));
    }
    let defect = c.d_squared_defect();
    if defect != 0 {
        return Err(HoferError::CheckFailed { context: "boundary does not square to zero".into(), residual: defect as f64 });
    }
    Ok(())
}

/// True iff no boundary-invariant subspace of the span of the other basis
/// elements carries the full homology. Invariant subspaces are closed under
/// sums and surjectivity is inherited by larger subspaces, so it suffices to
/// test the largest one, `{v : e_j-coefficients of v and d(v) vanish}`.
pub fn essential_test(c: &ChainComplexZ2, e: usize) -> Result<bool> {
    check_essential_input(c, e)?;
    let bit = 1u32 << e;
    let others: Vec<u32> = (0..c.len()).filter(|&i| i != e).map(|i| 1u32 << i).collect();
    let vmax = kernel(&others, |v| c.boundary(v) & bit);
    let (z, b) = cycles_and_boundaries(c);
    Ok(!surjects(c, &vmax, &z, &b))
}

/// Brute force version of `essential_test`: enumerates every subspace of the
/// span of the other basis elements (at most `EXHAUSTIVE_MAX_DIM` of them).
pub fn essential_test_exhaustive(c: &ChainComplexZ2, e: usize) -> Result<bool> {
    check_essential_input(c, e)?;
    let others: Vec<usize> = (0..c.len()).filter(|&i| i != e).collect();
    let k = others.len();
    if k > EXHAUSTIVE_MAX_DIM {
        return Err(HoferError::InvalidInput(format!("exhaustive enumeration limited to {EXHAUSTIVE_MAX_DIM} generators")));
    }
    // vectors of the span are indexed by k-bit coordinates; a subspace is the
    // set of its members as a bit mask over the 2^k coordinates
    let embed = |w: u32| -> u32 { others.iter().enumerate().filter(|(j, _)| w >> j & 1 == 1).fold(0, |a, (_, i)| a | (1 << i)) };
    let n = 1usize << k;
    let close = |set: u64, w: usize| -> u64 {
        let mut out = set;
        for u in 0..n {
            if set >> u & 1 == 1 {
                out |= 1 << (u ^ w);
            }
        }
        out
    };
    let (z, b) = cycles_and_boundaries(c);
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![1u64];
    seen.insert(1);
    while let Some(s) = stack.pop() {
        let members: Vec<u32> = (0..n).filter(|u| s >> u & 1 == 1).map(|u| embed(u as u32)).collect();
        let invariant = members.iter().all(|&v| members.contains(&c.boundary(v)));
        if invariant && surjects(c, &members, &z, &b) {
            return Ok(false);
        }
        for w in 1..n {
            if s >> w & 1 == 0 {
                let t = close(s, w);
                if seen.insert(t) {
                    stack.push(t);
                }
            }
        }
    }
    Ok(true)
}

/// Boundary operator of the Morse complex. Refuses functions with degenerate
/// critical points; low-confidence counts are carried in the result.
pub fn boundary_operator(d: &MorseData, o: &MorseOptions) -> Result<(ChainComplexZ2, Vec<TrajectoryCount>)> {
    if d.has_degenerate() {
        let worst = d
            .critical
            .iter()
            .flat_map(|c| c.eigenvalues)
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min);
        return Err(HoferError::CheckFailed { context: "degenerate critical point, no Morse complex".into(), residual: worst });
    }
    let n = d.critical.len();
    if n > 32 {
        return Err(HoferError::InvalidInput(format!("{n} critical points exceed the 32 generator limit")));
    }
    let degrees: Vec<usize> = d.critical.iter().map(|c| c.index).collect();
    let mut mat = vec![vec![0u8; n]; n];
    let mut counts = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if degrees[x] == degrees[y] + 1 {
                let t = trajectory_count(d, x, y, o)?;
                mat[y][x] = t.parity;
                counts.push(t);
            }
        }
    }
    let mut c = ChainComplexZ2::new(degrees, &mat)?;
    c.labels = d.critical.iter().map(|p| format!("index {} at F = {:.6}", p.index, p.value)).collect();
    c.low_confidence = counts.iter().any(|t| t.low_confidence);
    Ok((c, counts))
}

/// Z/2 Betti numbers of the built-in surfaces.
pub fn known_betti(m: &ManifoldSpec) -> Result<Vec<usize>> {
    match m.kind {
        ManifoldKind::Sphere2 => Ok(vec![1, 0, 1]),
        ManifoldKind::Torus2 => Ok(vec![1, 2, 1]),
        _ => Err(HoferError::Unsupported(format!("Morse complex on {}", m.name()))),
    }
}

/// The full pipeline: critical points, boundary, homology and essentiality of
/// the maximum.
pub fn morse_homology_report(f: &Hamiltonian, o: &MorseOptions) -> Result<Report> {
    o.validate()?;
    let metric = ConformalMetric::new(&f.manifold, o.metric_amp, o.metric_seed);
    let d = critical_points(f, &metric, o.seeds_per_axis)?;
    let mut rep = Report::new(
        "morse-homology",
        "the Z/2 Morse complex of a Morse function has the homology of the surface and its maximum is homologically essential",
    );
    let counts = d.count_by_index();
    rep.scalar("critical_points", d.critical.len() as f64)
        .scalar("index_0", counts[0] as f64)
        .scalar("index_1", counts[1] as f64)
        .scalar("index_2", counts[2] as f64)
        .scalar("euler_characteristic", d.euler_characteristic() as f64)
        .scalar("metric_amp", metric.amp)
        .scalar("metric_seed", metric.seed as f64);
    let chi = if d.surface.is_sphere() { 2 } else { 0 };
    rep.check_true("euler_characteristic", d.euler_characteristic() == chi, format!("expected {chi}"));
    let (c, tc) = boundary_operator(&d, o)?;
    for t in &tc {
        rep.note(format!(
            "{} -> {}: {} trajectories, parity {}{}",
            t.source,
            t.target,
            t.count,
            t.parity,
            if t.low_confidence { " (low confidence)" } else { "" }
        ));
    }
    rep.scalar("d_squared_defect", c.d_squared_defect() as f64);
    if c.low_confidence {
        rep.note("low-confidence trajectory counts, verdicts on the complex withheld");
        rep.check_true("counts_confident", false, "some shooting runs were flagged");
        return Ok(rep);
    }
    rep.check_le("d_squared_zero", c.d_squared_defect() as f64, 0.0);
    let betti = homology(&c)?;
    for (m, b) in betti.iter().enumerate() {
        rep.scalar(&format!("betti_{m}"), *b as f64);
    }
    let known = known_betti(&d.surface)?;
    rep.check_true("betti_match_surface", betti == known, format!("expected {known:?}, got {betti:?}"));
    let top = c.top_degree();
    let maxima: Vec<usize> = (0..c.len()).filter(|&i| c.degrees[i] == top).collect();
    if maxima.len() == 1 {
        let ess = essential_test(&c, maxima[0])?;
        rep.check_true("maximum_essential", ess, "unique maximum");
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn torus_data(o: &MorseOptions) -> MorseData {
        let f = morse_function(&ManifoldSpec::torus2(), "tilted_height", 0.5).unwrap();
        let metric = ConformalMetric::new(&f.manifold, o.metric_amp, o.metric_seed);
        critical_points(&f, &metric, o.seeds_per_axis).unwrap()
    }

    #[test]
    fn critical_point_examples() {
        let o = MorseOptions::default();
        let f = morse_function(&ManifoldSpec::sphere2(), "height", 0.0).unwrap();
        let metric = ConformalMetric::new(&f.manifold, o.metric_amp, o.metric_seed);
        let d = critical_points(&f, &metric, o.seeds_per_axis).unwrap();
        assert_eq!(d.count_by_index(), [1, 0, 1]);
        assert_eq!(d.euler_characteristic(), 2);
        for c in &d.critical {
            assert!(c.grad_norm <= GRAD_TOL && !c.degenerate);
            assert!((c.point[2].abs() - 1.0).abs() < 1e-9);
        }
        let d = torus_data(&o);
        assert_eq!(d.count_by_index(), [1, 2, 1]);
        assert_eq!(d.euler_characteristic(), 0);
        // Hessian oracle: diag(-4 pi^2 cos 2 pi p, -2 pi^2 cos 2 pi q) at the half-lattice points
        let w2 = 4.0 * std::f64::consts::PI.powi(2);
        for c in &d.critical {
            let (cp, cq) = ((std::f64::consts::TAU * c.point[0]).cos(), (std::f64::consts::TAU * c.point[1]).cos());
            assert!((cp.abs() - 1.0).abs() < 1e-9 && (cq.abs() - 1.0).abs() < 1e-9);
            let mut exact = [-w2 * cp, -0.5 * w2 * cq];
            exact.sort_by(f64::total_cmp);
            let conf = d.metric.factor(&c.point);
            for k in 0..2 {
                assert!((c.eigenvalues[k] * conf - exact[k]).abs() < 1e-4 * w2);
            }
        }
        let ridge = morse_function(&ManifoldSpec::torus2(), "ridge", 0.0).unwrap();
        let d = critical_points(&ridge, &metric, 8).unwrap();
        assert!(d.has_degenerate());
        assert!(matches!(boundary_operator(&d, &o), Err(HoferError::CheckFailed { .. })));
    }

    #[test]
    fn torus_trajectory_counts_are_even() {
        let o = MorseOptions::default();
        let d = torus_data(&o);
        let (c, counts) = boundary_operator(&d, &o).unwrap();
        assert_eq!(counts.len(), 4);
        for t in &counts {
            assert!(!t.low_confidence, "{t:?}");
            assert_eq!(t.count, 2, "{t:?}");
            assert_eq!(t.parity, 0);
        }
        assert_eq!(c.d_squared_defect(), 0);
        assert!(c.columns.iter().all(|v| *v == 0));
        assert_eq!(homology(&c).unwrap(), vec![1, 2, 1]);
        let top = c.degrees.iter().position(|d| *d == 2).unwrap();
        assert!(essential_test(&c, top).unwrap());
        // halving the shooting offset keeps the parities
        let half = MorseOptions { offset: 5e-4, ..o };
        let (c2, _) = boundary_operator(&d, &half).unwrap();
        assert_eq!(c2.columns, c.columns);
    }

    #[test]
    fn sphere_complex() {
        let o = MorseOptions::default();
        let f = morse_function(&ManifoldSpec::sphere2(), "height", 0.0).unwrap();
        let rep = morse_homology_report(&f, &o).unwrap();
        assert!(rep.all_passed(), "{}", rep.to_json());
        assert_eq!(rep.get("betti_1"), Some(0.0));
        let bad = trajectory_count(
            &critical_points(&f, &ConformalMetric::flat(), 8).unwrap(),
            0,
            1,
            &o,
        );
        assert!(matches!(bad, Err(HoferError::InvalidInput(_))));
    }

    #[test]
    fn homology_examples() {
        assert_eq!(homology(&ChainComplexZ2::zero(vec![0, 1, 2]).unwrap()).unwrap(), vec![1, 1, 1]);
        assert_eq!(homology(&ChainComplexZ2::zero(vec![]).unwrap()).unwrap(), vec![0]);
        // interval: d(edge) = a + b
        let c = ChainComplexZ2::new(vec![0, 0, 1], &[vec![0, 0, 1], vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
        assert_eq!(homology(&c).unwrap(), vec![1, 0]);
        // odd counts injected: d(c) = b, d(b) = a
        let bad = ChainComplexZ2::new(vec![0, 1, 2], &[vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
        assert_eq!(bad.d_squared_defect(), 1);
        assert!(homology(&bad).is_err());
        assert!(ChainComplexZ2::new(vec![0, 2], &[vec![0, 1], vec![0, 0]]).is_err());
    }

    #[test]
    fn essential_examples() {
        let z = ChainComplexZ2::zero(vec![0, 1, 1, 2]).unwrap();
        for e in 0..4 {
            assert!(essential_test(&z, e).unwrap());
            assert!(essential_test_exhaustive(&z, e).unwrap());
        }
        // a, b in degree 1 with d(c) = a + b: a is homologous to b
        let c = ChainComplexZ2::new(vec![1, 1, 2], &[vec![0, 0, 1], vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
        assert!(!essential_test(&c, 0).unwrap());
        assert!(!essential_test_exhaustive(&c, 0).unwrap());
        assert!(!essential_test(&c, 2).unwrap());
        let big = ChainComplexZ2::zero(vec![0; 21]).unwrap();
        assert!(essential_test(&big, 0).is_err());
    }

    fn arb_complex() -> impl Strategy<Value = ChainComplexZ2> {
        // random d over degrees 0..=2, made to square to zero by composing
        // with a random change of basis of a split complex
        (1usize..3, 0usize..3, 1usize..3, any::<u64>()).prop_map(|(n0, n1, n2, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut degrees = vec![0; n0];
            degrees.extend(vec![1; n1]);
            degrees.extend(vec![2; n2]);
            let n = degrees.len();
            loop {
                let mut d = vec![vec![0u8; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        if degrees[j] == degrees[i] + 1 {
                            d[i][j] = rng.gen_range(0..2);
                        }
                    }
                }
                let c = ChainComplexZ2::new(degrees.clone(), &d).unwrap();
                if c.d_squared_defect() == 0 {
                    return c;
                }
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn maximal_subspace_agrees_with_enumeration(c in arb_complex(), e in 0usize..6) {
            let e = e % c.len();
            prop_assert_eq!(essential_test(&c, e).unwrap(), essential_test_exhaustive(&c, e).unwrap());
        }

        #[test]
        fn euler_characteristic_of_homology(c in arb_complex()) {
            let b = homology(&c).unwrap();
            let chi_b: i64 = b.iter().enumerate().map(|(m, v)| if m % 2 == 0 { *v as i64 } else { -(*v as i64) }).sum();
            let chi_c: i64 = c.degrees.iter().map(|m| if m % 2 == 0 { 1 } else { -1 }).sum();
            prop_assert_eq!(chi_b, chi_c);
        }
    }
}

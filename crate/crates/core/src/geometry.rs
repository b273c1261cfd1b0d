//! Model symplectic manifolds, sampling grids and quadrature.
//!
//! Canonical charts store points as `(p_1..p_n, q_1..q_n)` with
//! `omega = sum dp_j ^ dq_j`. The sphere is stored in ambient coordinates of
//! R^3 and carries `Omega(xi, eta) = area_scale * <eta, x cross xi>`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{HoferError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Euclidean { n: usize },
    Torus2,
    Sphere2,
    Cylinder,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub area_scale: f64,
}

impl ManifoldSpec {
    pub fn euclidean(n: usize) -> Self {
        Self { kind: ManifoldKind::Euclidean { n: n.max(1) }, area_scale: 1.0 }
    }

    pub fn torus2() -> Self {
        Self { kind: ManifoldKind::Torus2, area_scale: 1.0 }
    }

    pub fn sphere2() -> Self {
        Self { kind: ManifoldKind::Sphere2, area_scale: 1.0 }
    }

    /// Sphere with total area 1.
    pub fn normalized_sphere() -> Self {
        Self { kind: ManifoldKind::Sphere2, area_scale: 1.0 / (4.0 * PI) }
    }

    pub fn cylinder() -> Self {
        Self { kind: ManifoldKind::Cylinder, area_scale: 1.0 }
    }

    /// Rescale the symplectic form. Only the sphere supports a scale other than 1.
    pub fn with_area_scale(mut self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(HoferError::InvalidInput(format!("area_scale must be positive, got {s}")));
        }
        if self.kind != ManifoldKind::Sphere2 && (s - 1.0).abs() > 0.0 {
            return Err(HoferError::Unsupported("area_scale is only adjustable on sphere2".into()));
        }
        self.area_scale = s;
        Ok(self)
    }

    /// Parse the config name used by experiment files.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "torus2" => Ok(Self::torus2()),
            "sphere2" => Ok(Self::sphere2()),
            "cylinder" => Ok(Self::cylinder()),
            _ => {
                if let Some(rest) = name.strip_prefix("euclidean") {
                    let n: usize = if rest.is_empty() {
                        1
                    } else {
                        rest.trim_start_matches(['(', '_']).trim_end_matches(')').parse().map_err(|_| {
                            HoferError::InvalidInput(format!("bad manifold name {name}"))
                        })?
                    };
                    if n == 0 {
                        return Err(HoferError::InvalidInput("euclidean(0) has no points".into()));
                    }
                    Ok(Self::euclidean(n))
                } else {
                    Err(HoferError::InvalidInput(format!("unknown manifold {name}")))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            ManifoldKind::Euclidean { n } => format!("euclidean({n})"),
            ManifoldKind::Torus2 => "torus2".into(),
            ManifoldKind::Sphere2 => "sphere2".into(),
            ManifoldKind::Cylinder => "cylinder".into(),
        }
    }

    /// Real dimension of the manifold.
    pub fn dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Euclidean { n } => 2 * n,
            _ => 2,
        }
    }

    /// Number of stored coordinates per point (3 on the sphere).
    pub fn coord_len(&self) -> usize {
        match self.kind {
            ManifoldKind::Sphere2 => 3,
            _ => self.dim(),
        }
    }

    pub fn closed(&self) -> bool {
        matches!(self.kind, ManifoldKind::Torus2 | ManifoldKind::Sphere2)
    }

    /// True for chart axes that are identified modulo 1.
    pub fn is_periodic_axis(&self, axis: usize) -> bool {
        match self.kind {
            ManifoldKind::Torus2 => axis < 2,
            ManifoldKind::Cylinder => axis == 1,
            _ => false,
        }
    }

    pub fn is_sphere(&self) -> bool {
        self.kind == ManifoldKind::Sphere2
    }

    /// True when points are stored in canonical `(p, q)` coordinates.
    pub fn is_canonical(&self) -> bool {
        !self.is_sphere()
    }

    /// Total symplectic area for closed surfaces.
    pub fn total_area(&self) -> Option<f64> {
        match self.kind {
            ManifoldKind::Torus2 => Some(1.0),
            ManifoldKind::Sphere2 => Some(4.0 * PI * self.area_scale),
            _ => None,
        }
    }

    /// Project a coordinate vector onto the manifold (normalizes sphere points).
    pub fn project(&self, x: &mut [f64]) {
        if self.is_sphere() {
            let r = norm(x);
            if r > 0.0 {
                x.iter_mut().for_each(|c| *c /= r);
            }
        }
    }

    /// Check that `x` is a valid point of the manifold.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.coord_len() {
            return Err(HoferError::InvalidInput(format!(
                "point has {} coordinates, {} expects {}",
                x.len(),
                self.name(),
                self.coord_len()
            )));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(HoferError::NonFinite("point coordinates".into()));
        }
        if self.is_sphere() && (norm(x) - 1.0).abs() > 1e-9 {
            return Err(HoferError::InvalidInput(format!("point off the sphere: |x| = {}", norm(x))));
        }
        Ok(())
    }

    /// Distance between two points: wrapped Euclidean on periodic charts,
    /// great-circle distance on the sphere.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Sphere2 => {
                let c = cross(a, b);
                norm(&c).atan2(dot(a, b))
            }
            ManifoldKind::Torus2 => {
                let dp = wrap_half(a[0] - b[0]);
                let dq = wrap_half(a[1] - b[1]);
                dp.hypot(dq)
            }
            ManifoldKind::Cylinder => {
                let dq = wrap_half(a[1] - b[1]);
                (a[0] - b[0]).hypot(dq)
            }
            ManifoldKind::Euclidean { .. } => {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }
        }
    }

    /// Orthonormal tangent basis at `x`. On the sphere the pair is oriented so
    /// that `<e2, x cross e1> = 1`; in canonical charts it is the coordinate basis.
    pub fn tangent_basis(&self, x: &[f64]) -> Vec<Vec<f64>> {
        if self.is_sphere() {
            let (e1, e2) = sphere_frame(x);
            vec![e1.to_vec(), e2.to_vec()]
        } else {
            let d = self.dim();
            (0..d)
                .map(|i| {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e
                })
                .collect()
        }
    }

    /// Move from `x` along tangent vector `v` (retraction onto the sphere).
    pub fn retract(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
        self.project(&mut y);
        y
    }
}

/// Wrap a coordinate difference into `[-1/2, 1/2)`.
pub fn wrap_half(d: f64) -> f64 {
    d - (d + 0.5).floor()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Oriented orthonormal frame of the tangent plane at `x / |x|`.
pub fn sphere_frame(x: &[f64]) -> ([f64; 3], [f64; 3]) {
    let r = norm(x);
    let x = [x[0] / r, x[1] / r, x[2] / r];
    // pick the ambient axis least aligned with x
    let ax = x.iter().map(|c| c.abs()).collect::<Vec<_>>();
    let k = if ax[0] <= ax[1] && ax[0] <= ax[2] {
        0
    } else if ax[1] <= ax[2] {
        1
    } else {
        2
    };
    let mut a = [0.0; 3];
    a[k] = 1.0;
    let mut e1 = cross(&x, &a);
    let n1 = norm(&e1);
    e1.iter_mut().for_each(|c| *c /= n1);
    // e2 = x cross e1 gives <e2, x cross e1> = 1
    let e2 = cross(&x, &e1);
    (e1, e2)
}

/// Axis-aligned box in chart coordinates, one `[lo, hi]` interval per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxRegion {
    pub intervals: Vec<[f64; 2]>,
}

impl BoxRegion {
    pub fn new(intervals: Vec<[f64; 2]>) -> Self {
        Self { intervals }
    }

    pub fn square(lo: f64, hi: f64, dim: usize) -> Self {
        Self { intervals: vec![[lo, hi]; dim] }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.iter().any(|[a, b]| a > b)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        !self.is_empty() && self.intervals.iter().zip(x).all(|([a, b], c)| *a <= *c && *c <= *b)
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.intervals.iter().map(|[a, b]| b - a).product()
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.intervals.iter().map(|[a, b]| 0.5 * (a + b)).collect()
    }

    pub fn expanded(&self, m: f64) -> Self {
        Self { intervals: self.intervals.iter().map(|[a, b]| [a - m, b + m]).collect() }
    }

    /// Euclidean distance from `x` to the box (0 inside).
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        self.intervals
            .iter()
            .zip(x)
            .map(|([a, b], c)| {
                let d = if c < a {
                    a - c
                } else if c > b {
                    c - b
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Finite sample of a manifold with quadrature weights.
#[derive(Clone, Debug)]
pub struct Grid {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub resolution: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    /// Typical spacing between neighbouring points.
    pub fn spacing(&self, m: &ManifoldSpec) -> f64 {
        match m.kind {
            ManifoldKind::Sphere2 => {
                // mean cell area is 4 pi / N on the unit sphere
                (4.0 * PI / self.len() as f64).sqrt()
            }
            _ => {
                let d = m.dim() as f64;
                let vol: f64 = self.total_weight();
                (vol / self.len() as f64).powf(1.0 / d)
            }
        }
    }
}

/// Evaluate the symplectic form at `x` on tangent vectors `xi`, `eta`.
pub fn omega_eval(m: &ManifoldSpec, x: &[f64], xi: &[f64], eta: &[f64]) -> Result<f64> {
    if m.is_sphere() {
        if x.len() != 3 || xi.len() != 3 || eta.len() != 3 {
            return Err(HoferError::InvalidInput("sphere vectors need 3 components".into()));
        }
        let r = dot(x, xi).abs().max(dot(x, eta).abs());
        if r > 1e-9 {
            return Err(HoferError::NotTangent { residual: r });
        }
        // antisymmetrized so that swapping the arguments negates the value exactly
        let a = dot(eta, &cross(x, xi));
        let b = dot(xi, &cross(x, eta));
        Ok(m.area_scale * (0.5 * (a - b)))
    } else {
        let d = m.dim();
        if xi.len() != d || eta.len() != d {
            return Err(HoferError::InvalidInput(format!("tangent vectors need {d} components")));
        }
        Ok(omega_canonical(xi, eta))
    }
}

/// `sum_j xi_p eta_q - xi_q eta_p` for vectors stored as `(p.., q..)`.
pub fn omega_canonical(xi: &[f64], eta: &[f64]) -> f64 {
    let n = xi.len() / 2;
    (0..n).map(|j| xi[j] * eta[n + j] - xi[n + j] * eta[j]).sum()
}

/// Quadrature mean of `f` over a closed manifold.
pub fn mean_value<F: Fn(&[f64]) -> f64>(m: &ManifoldSpec, f: F, g: &Grid) -> Result<f64> {
    if !m.closed() {
        return Err(HoferError::Unsupported(format!(
            "mean value normalization needs a closed manifold, got {}",
            m.name()
        )));
    }
    let mut s = 0.0;
    for (x, w) in g.points.iter().zip(&g.weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(HoferError::NonFinite("mean_value integrand".into()));
        }
        s += w * v;
    }
    Ok(s / g.total_weight())
}

/// Build a sampling grid. Torus and periodic boxes use uniform nodes, boxes on
/// open charts use cell midpoints and the sphere uses an icosahedral
/// subdivision with `20 res^2` cells.
pub fn sample_grid(m: &ManifoldSpec, resolution: usize, region: Option<&BoxRegion>) -> Result<Grid> {
    if resolution < 4 {
        return Err(HoferError::InvalidInput(format!("resolution must be at least 4, got {resolution}")));
    }
    match m.kind {
        ManifoldKind::Sphere2 => {
            if region.is_some() {
                return Err(HoferError::Unsupported("box regions are not defined on sphere2".into()));
            }
            Ok(icosahedral_grid(resolution, m.area_scale))
        }
        ManifoldKind::Torus2 => match region {
            None => {
                let n = resolution;
                let w = 1.0 / (n * n) as f64;
                let mut points = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        points.push(vec![i as f64 / n as f64, j as f64 / n as f64]);
                    }
                }
                Ok(Grid { weights: vec![w; points.len()], points, resolution })
            }
            Some(b) => {
                check_box(b, 2)?;
                let chart = BoxRegion::square(0.0, 1.0, 2);
                if b.intervals.iter().zip(&chart.intervals).any(|(r, c)| r[0] < c[0] - 1e-12 || r[1] > c[1] + 1e-12)
                {
                    return Err(HoferError::InvalidInput("region outside the torus chart [0,1]^2".into()));
                }
                Ok(midpoint_grid(b, resolution))
            }
        },
        ManifoldKind::Cylinder => {
            let b = region.cloned().unwrap_or_else(|| BoxRegion::new(vec![[-1.0, 1.0], [0.0, 1.0]]));
            check_box(&b, 2)?;
            if b.intervals[1][0] < -1e-12 || b.intervals[1][1] > 1.0 + 1e-12 {
                return Err(HoferError::InvalidInput("q-range outside the cylinder chart [0,1]".into()));
            }
            Ok(midpoint_grid(&b, resolution))
        }
        ManifoldKind::Euclidean { n } => {
            let b = region.cloned().unwrap_or_else(|| BoxRegion::square(-1.0, 1.0, 2 * n));
            check_box(&b, 2 * n)?;
            let count = (resolution as f64).powi(2 * n as i32);
            if count > 2e7 {
                return Err(HoferError::InvalidInput(format!("grid with {count} points is too large")));
            }
            Ok(midpoint_grid(&b, resolution))
        }
    }
}

fn check_box(b: &BoxRegion, dim: usize) -> Result<()> {
    if b.dim() != dim {
        return Err(HoferError::InvalidInput(format!("region has {} axes, expected {dim}", b.dim())));
    }
    if b.intervals.iter().any(|[a, c]| !(a.is_finite() && c.is_finite()) || a >= c) {
        return Err(HoferError::InvalidInput("region intervals must be finite with lo < hi".into()));
    }
    Ok(())
}

fn midpoint_grid(b: &BoxRegion, res: usize) -> Grid {
    let d = b.dim();
    let cell: f64 = b.intervals.iter().map(|[a, c]| (c - a) / res as f64).product();
    let total = res.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        points.push(
            idx.iter()
                .zip(&b.intervals)
                .map(|(i, [a, c])| a + (c - a) * (*i as f64 + 0.5) / res as f64)
                .collect(),
        );
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < res {
                break;
            }
            idx[k] = 0;
        }
    }
    Grid { weights: vec![cell; points.len()], points, resolution: res }
}

/// Polar grid of an annulus `r0 <= |x - c| <= r1` in a canonical 2D chart,
/// midpoint rule in both radius and angle.
pub fn annulus_grid(center: [f64; 2], r0: f64, r1: f64, nr: usize, ntheta: usize) -> Grid {
    let dr = (r1 - r0) / nr as f64;
    let dth = 2.0 * PI / ntheta as f64;
    let mut points = Vec::with_capacity(nr * ntheta);
    let mut weights = Vec::with_capacity(nr * ntheta);
    for i in 0..nr {
        let r = r0 + (i as f64 + 0.5) * dr;
        for j in 0..ntheta {
            let th = (j as f64 + 0.5) * dth;
            points.push(vec![center[0] + r * th.cos(), center[1] + r * th.sin()]);
            weights.push(r * dr * dth);
        }
    }
    Grid { points, weights, resolution: nr.max(ntheta) }
}

fn icosahedral_grid(k: usize, scale: f64) -> Grid {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let verts: Vec<[f64; 3]> = raw.iter().map(|v| unit(*v)).collect();
    const FACES: [[usize; 3]; 20] = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut points = Vec::with_capacity(20 * k * k);
    let mut weights = Vec::with_capacity(20 * k * k);
    for f in FACES.iter() {
        let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
        let lattice = |i: usize, j: usize| -> [f64; 3] {
            let u = i as f64 / k as f64;
            let v = j as f64 / k as f64;
            let w = 1.0 - u - v;
            unit([
                w * a[0] + u * b[0] + v * c[0],
                w * a[1] + u * b[1] + v * c[1],
                w * a[2] + u * b[2] + v * c[2],
            ])
        };
        for i in 0..k {
            for j in 0..(k - i) {
                let tris: &[[(usize, usize); 3]] = if i + j + 1 < k {
                    &[[(i, j), (i + 1, j), (i, j + 1)], [(i + 1, j), (i + 1, j + 1), (i, j + 1)]]
                } else {
                    &[[(i, j), (i + 1, j), (i, j + 1)]]
                };
                for t in tris {
                    let p = lattice(t[0].0, t[0].1);
                    let q = lattice(t[1].0, t[1].1);
                    let r = lattice(t[2].0, t[2].1);
                    let cen = unit([p[0] + q[0] + r[0], p[1] + q[1] + r[1], p[2] + q[2] + r[2]]);
                    points.push(cen.to_vec());
                    weights.push(scale * spherical_triangle_area(&p, &q, &r));
                }
            }
        }
    }
    Grid { points, weights, resolution: k }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let r = norm(&v);
    [v[0] / r, v[1] / r, v[2] / r]
}

/// Area of the geodesic triangle with unit-vector vertices.
fn spherical_triangle_area(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let num = dot(a, &cross(b, c)).abs();
    let den = 1.0 + dot(a, b) + dot(b, c) + dot(c, a);
    2.0 * num.atan2(den)
}

//! Growth functionals: the symmetric-sum ratio `delta` and its multi-term
//! version over explicit candidate maps, the winding-level functional on the
//! cylinder, the straightened commutator path, and Birkhoff sums of a loop
//! over an irrational skew product.
//!
//! Every infimum here is approximated from above by the candidates supplied.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{HoferError, Result};
use crate::flow::{symplecticity_report, FlowMap, Scheme};
use crate::geometry::{sample_grid, BoxRegion, Grid, ManifoldKind, ManifoldSpec};
use crate::hamiltonian::{rotate_about, Hamiltonian};
use crate::hofer::{norm, NormKind};
use crate::report::{Curve, Report};

#[derive(Clone, Debug)]
enum CandidateKind {
    Identity,
    /// Chart translation, wrapped on periodic axes.
    Translation(Vec<f64>),
    /// Time-`t` map of a Hamiltonian flow.
    Flow(FlowMap, f64),
}

/// An explicit map used to bound an infimum from above.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub name: String,
    manifold: ManifoldSpec,
    kind: CandidateKind,
}

impl Candidate {
    pub fn identity(m: ManifoldSpec) -> Self {
        Self { name: "id".into(), manifold: m, kind: CandidateKind::Identity }
    }

    /// Translation by `shift` in a canonical chart.
    pub fn translation(m: ManifoldSpec, shift: Vec<f64>) -> Result<Self> {
        if !m.is_canonical() || shift.len() != m.coord_len() {
            return Err(HoferError::InvalidInput("translations need a canonical chart of matching dimension".into()));
        }
        let name = format!("translate({})", shift.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
        Ok(Self { name, manifold: m, kind: CandidateKind::Translation(shift) })
    }

    /// Time-`t` map of the flow.
    pub fn flow(flow: FlowMap, t: f64) -> Self {
        let h = flow.hamiltonian();
        Self { name: format!("flow({}, {t})", h.name), manifold: h.manifold, kind: CandidateKind::Flow(flow, t) }
    }

    pub fn manifold(&self) -> ManifoldSpec {
        self.manifold
    }

    fn wrap(&self, mut y: Vec<f64>) -> Vec<f64> {
        for (i, c) in y.iter_mut().enumerate() {
            if self.manifold.is_periodic_axis(i) {
                *c = c.rem_euclid(1.0);
            }
        }
        y
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            CandidateKind::Identity => Ok(x.to_vec()),
            CandidateKind::Translation(s) => Ok(self.wrap(x.iter().zip(s).map(|(a, b)| a + b).collect())),
            CandidateKind::Flow(f, t) => {
                let t0 = f.hamiltonian().time_interval.0;
                f.map(x, t0, t0 + t)
            }
        }
    }

    pub fn apply_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            CandidateKind::Identity => Ok(x.to_vec()),
            CandidateKind::Translation(s) => Ok(self.wrap(x.iter().zip(s).map(|(a, b)| a - b).collect())),
            CandidateKind::Flow(f, t) => {
                let t0 = f.hamiltonian().time_interval.0;
                f.map(x, t0 + t, t0)
            }
        }
    }

    /// Largest symplecticity defect on a coarse grid; exact maps report 0.
    pub fn symplecticity_defect(&self) -> Result<f64> {
        match &self.kind {
            CandidateKind::Flow(f, t) => {
                let g = sample_grid(&self.manifold, 4, None)?;
                let t0 = f.hamiltonian().time_interval.0;
                Ok(symplecticity_report(f, &g, t0 + t)?.get("max_defect").unwrap_or(f64::INFINITY))
            }
            _ => Ok(0.0),
        }
    }
}

/// Explicit maps over which infima are bounded from above.
#[derive(Clone, Debug, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Self {
        Self { candidates }
    }

    /// Every candidate must preserve the symplectic form to `1e-5`.
    pub fn audit(&self) -> Result<()> {
        for c in &self.candidates {
            let d = c.symplecticity_defect()?;
            if d > 1e-5 {
                return Err(HoferError::CheckFailed { context: format!("candidate {} is not symplectic", c.name), residual: d });
            }
        }
        Ok(())
    }

    /// Torus translations by `(i/k, j/k)` for `0 <= i, j < k`, plus the identity.
    pub fn torus_translations(k: usize) -> Self {
        let m = ManifoldSpec::torus2();
        let mut c = vec![Candidate::identity(m)];
        for i in 0..k {
            for j in 0..k {
                if i + j > 0 {
                    c.push(Candidate::translation(m, vec![i as f64 / k as f64, j as f64 / k as f64]).expect("torus chart"));
                }
            }
        }
        Self::new(c)
    }
}

/// A bound with the candidate attaining it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaBound {
    pub value: f64,
    pub witness: String,
    pub ratios: Vec<(String, f64)>,
}

fn sum_hamiltonian(f: &Hamiltonian, maps: &[Candidate]) -> Hamiltonian {
    let (fv, maps) = (f.clone(), Arc::new(maps.to_vec()));
    let mut s = Hamiltonian::new(f.manifold, move |x, t| {
        maps.iter().map(|c| c.apply(x).map(|y| fv.eval(&y, t)).unwrap_or(f64::NAN)).sum()
    });
    s.autonomous = f.autonomous;
    s
}

fn sup_norm(f: &Hamiltonian, g: &Grid) -> Result<f64> {
    norm(f, f.time_interval.0, NormKind::Linf, g)
}

/// `min_phi ||F + F o phi|| / (2 ||F||)` over the candidates.
pub fn delta(f: &Hamiltonian, c: &CandidateSet, g: &Grid) -> Result<DeltaBound> {
    if c.candidates.is_empty() {
        return Err(HoferError::InvalidInput("empty candidate set".into()));
    }
    if !f.autonomous {
        return Err(HoferError::InvalidInput("delta needs an autonomous Hamiltonian".into()));
    }
    let nf = sup_norm(f, g)?;
    if !(nf > 0.0) {
        return Err(HoferError::InvalidInput("delta needs ||F|| > 0".into()));
    }
    let mut ratios = Vec::with_capacity(c.candidates.len());
    for cand in &c.candidates {
        let s = sum_hamiltonian(f, &[Candidate::identity(f.manifold), cand.clone()]);
        ratios.push((cand.name.clone(), sup_norm(&s, g)? / (2.0 * nf)));
    }
    let (witness, value) = ratios.iter().fold((String::new(), f64::INFINITY), |b, (n, v)| if *v < b.1 { (n.clone(), *v) } else { b });
    Ok(DeltaBound { value, witness, ratios })
}

/// `min (1/N) ||sum_{j<N} F o phi_j|| / ||F||` over candidate sequences
/// `(phi_1, .., phi_{N-1})`; `phi_0 = id` is always prepended.
pub fn delta_n(f: &Hamiltonian, n: usize, sequences: &[Vec<Candidate>], g: &Grid) -> Result<DeltaBound> {
    if n == 0 {
        return Err(HoferError::InvalidInput("N must be at least 1".into()));
    }
    let nf = sup_norm(f, g)?;
    if !(nf > 0.0) {
        return Err(HoferError::InvalidInput("delta_N needs ||F|| > 0".into()));
    }
    if n == 1 {
        return Ok(DeltaBound { value: 1.0, witness: "id".into(), ratios: vec![("id".into(), 1.0)] });
    }
    let mut ratios = Vec::new();
    for seq in sequences {
        if seq.len() != n - 1 {
            return Err(HoferError::InvalidInput(format!("sequence has {} maps, expected N - 1 = {}", seq.len(), n - 1)));
        }
        let mut maps = vec![Candidate::identity(f.manifold)];
        maps.extend(seq.iter().cloned());
        let s = sum_hamiltonian(f, &maps);
        let name = seq.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(" ; ");
        ratios.push((name, sup_norm(&s, g)? / (n as f64 * nf)));
    }
    if ratios.is_empty() {
        return Err(HoferError::InvalidInput("no candidate sequences".into()));
    }
    let (witness, value) = ratios.iter().fold((String::new(), f64::INFINITY), |b, (nm, v)| if *v < b.1 { (nm.clone(), *v) } else { b });
    Ok(DeltaBound { value, witness, ratios })
}

/// Result of the winding-level scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindingLevels {
    pub value: f64,
    /// Levels whose band contains a non-contractible component.
    pub winding_levels: Vec<f64>,
    pub scanned: usize,
}

/// Does some component of `mask` (rows = p, columns = q, q periodic) carry a
/// loop around the q-circle? Detected by lifting columns to the universal
/// cover during the flood fill: two different lifts of one cell mean winding.
pub fn mask_winds(mask: &[Vec<bool>]) -> bool {
    let np = mask.len();
    if np == 0 {
        return false;
    }
    let nq = mask[0].len() as i64;
    let mut lift: Vec<Vec<Option<i64>>> = vec![vec![None; nq as usize]; np];
    for i0 in 0..np {
        for j0 in 0..nq as usize {
            if !mask[i0][j0] || lift[i0][j0].is_some() {
                continue;
            }
            let mut queue = VecDeque::new();
            lift[i0][j0] = Some(j0 as i64);
            queue.push_back((i0, j0 as i64));
            while let Some((i, l)) = queue.pop_front() {
                let mut nbrs = vec![(i, l - 1), (i, l + 1)];
                if i > 0 {
                    nbrs.push((i - 1, l));
                }
                if i + 1 < np {
                    nbrs.push((i + 1, l));
                }
                for (a, lb) in nbrs {
                    let b = lb.rem_euclid(nq) as usize;
                    if !mask[a][b] {
                        continue;
                    }
                    match lift[a][b] {
                        None => {
                            lift[a][b] = Some(lb);
                            queue.push_back((a, lb));
                        }
                        // two lifts of one cell differ by a multiple of nq
                        Some(prev) if prev != lb => return true,
                        _ => {}
                    }
                }
            }
        }
    }
    false
}

/// `sup |E|` over levels whose band `{|F - E| < tol}` contains a component
/// winding around the cylinder; `F >= 0` only, levels `E >= tol` scanned in
/// steps of `tol / 2`. The band must be resolved: `tol` at least half the
/// largest jump between grid neighbours.
pub fn reverse_kam_e(f: &Hamiltonian, resolution: usize, tol: f64) -> Result<WindingLevels> {
    if f.manifold.kind != ManifoldKind::Cylinder {
        return Err(HoferError::Unsupported("the winding-level scan runs on the cylinder".into()));
    }
    if resolution < 64 {
        return Err(HoferError::InvalidInput("resolution must be at least 64 per axis".into()));
    }
    if !(tol > 0.0) {
        return Err(HoferError::InvalidInput("tol must be positive".into()));
    }
    let t = f.time_interval.0;
    let pr = f.support.as_ref().map(|b| b.intervals[0]).unwrap_or([-1.0, 1.0]);
    let n = resolution;
    let vals: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let p = pr[0] + (pr[1] - pr[0]) * (i as f64 + 0.5) / n as f64;
            (0..n).map(|j| f.eval(&[p, j as f64 / n as f64], t)).collect()
        })
        .collect();
    if vals.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HoferError::NonFinite("F on the cylinder grid".into()));
    }
    let min = vals.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(HoferError::Unsupported("only F >= 0 is supported".into()));
    }
    let mut jump: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            jump = jump.max((vals[i][j] - vals[i][(j + 1) % n]).abs());
            if i + 1 < n {
                jump = jump.max((vals[i][j] - vals[i + 1][j]).abs());
            }
        }
    }
    if tol < 0.5 * jump {
        return Err(HoferError::InvalidInput(format!("tol {tol} is below the grid band width {}", 0.5 * jump)));
    }
    let max = vals.iter().flatten().cloned().fold(0.0, f64::max);
    let mut out = WindingLevels { value: 0.0, winding_levels: Vec::new(), scanned: 0 };
    let mut e = tol;
    while e <= max + 1e-12 {
        let mask: Vec<Vec<bool>> = vals.iter().map(|r| r.iter().map(|v| (v - e).abs() < tol).collect()).collect();
        out.scanned += 1;
        if mask_winds(&mask) {
            out.winding_levels.push(e);
            out.value = out.value.max(e);
        }
        e += 0.5 * tol;
    }
    Ok(out)
}

/// `G(x,t) = F(x) + F(phi^{-1} f_t^{-1} x)` together with a report checking
/// that its flow is `g_t = f_t phi f_t phi^{-1}` at `t = T/2, T` and that
/// `||G_t||` is constant in `t` and equal to `||F + F o phi^{-1}||`.
pub fn straightened_commutator(f: &Hamiltonian, phi: &Candidate, t_end: f64, g: &Grid) -> Result<(Hamiltonian, Report)> {
    if !f.autonomous {
        return Err(HoferError::InvalidInput("the commutator needs an autonomous F".into()));
    }
    let ff = FlowMap::best(f)?;
    let fl = if ff.is_exact() { ff } else { FlowMap::new(f, Scheme::Rk4, 1e-3)? };
    let (fv, flv, ph) = (f.clone(), fl.clone(), phi.clone());
    let gh = Hamiltonian::new(f.manifold, move |x, t| {
        let y = flv.map(x, t, 0.0).and_then(|y| ph.apply_inverse(&y));
        match y {
            Ok(y) => fv.eval(x, 0.0) + fv.eval(&y, 0.0),
            Err(_) => f64::NAN,
        }
    })
    .with_interval(0.0, t_end)
    .named(format!("commutator({})", f.name));
    let gflow = FlowMap::new(&gh, Scheme::Rk4, 1e-3)?;
    let probes = sample_grid(&f.manifold, 4, None)?;
    let mut worst: f64 = 0.0;
    for t in [0.5 * t_end, t_end] {
        for x in &probes.points {
            let lhs = gflow.map(x, 0.0, t)?;
            let a = phi.apply_inverse(x)?;
            let b = fl.map(&a, 0.0, t)?;
            let c = phi.apply(&b)?;
            let rhs = fl.map(&c, 0.0, t)?;
            worst = worst.max(f.manifold.distance(&lhs, &rhs));
        }
    }
    let mut norms = Vec::new();
    let mut curve = Curve::new(&["t", "norm"]);
    for k in 0..=8 {
        let t = t_end * k as f64 / 8.0;
        let v = norm(&gh, t, NormKind::Linf, g)?;
        curve.push(&[t, v]);
        norms.push(v);
    }
    let inv = Candidate { name: format!("inverse({})", phi.name), manifold: phi.manifold, kind: inverse_kind(phi) };
    let reference = sup_norm(&sum_hamiltonian(f, &[Candidate::identity(f.manifold), inv]), g)?;
    let spread = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut rep = Report::new("commutator", "the commutator path is generated by a Hamiltonian whose norm stays equal to that of F + F composed with the inverse map");
    rep.config = serde_json::json!({ "hamiltonian": f.name, "phi": phi.name, "t_end": t_end });
    rep.curve("norm_vs_t", curve);
    rep.scalar("flow_mismatch", worst).scalar("norm_spread", spread).scalar("reference_norm", reference).scalar("norm_t0", norms[0]);
    rep.check_le("flow_matches_commutator", worst, 1e-4);
    rep.check_le("norm_constant_in_t", spread, 1e-4);
    rep.check_le("norm_matches_reference", (norms[0] - reference).abs(), 1e-4);
    if worst > 1e-4 {
        return Err(HoferError::CheckFailed { context: "commutator flow mismatch".into(), residual: worst });
    }
    Ok((gh, rep))
}

fn inverse_kind(c: &Candidate) -> CandidateKind {
    match &c.kind {
        CandidateKind::Identity => CandidateKind::Identity,
        CandidateKind::Translation(s) => CandidateKind::Translation(s.iter().map(|v| -v).collect()),
        CandidateKind::Flow(f, t) => CandidateKind::Flow(f.clone(), -t),
    }
}

pub type LoopFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// `T(y, t) = (h(t) y, t + alpha)` over a loop `h` with `h(0) = h(1)`, and the
/// generator `H` of `t -> h(t)^{-1}` whose Birkhoff sums are tracked.
#[derive(Clone)]
pub struct SkewProduct {
    pub manifold: ManifoldSpec,
    pub h: LoopFn,
    pub generator: Hamiltonian,
    pub alpha: f64,
}

impl std::fmt::Debug for SkewProduct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkewProduct").field("generator", &self.generator.name).field("alpha", &self.alpha).finish()
    }
}

pub const GOLDEN_ALPHA: f64 = 0.618_033_988_749_894_9;

impl SkewProduct {
    /// Checks `h(0) = h(1)` within `1e-6` on probe points.
    pub fn new(m: ManifoldSpec, h: LoopFn, generator: Hamiltonian, alpha: f64) -> Result<Self> {
        let g = sample_grid(&m, 4, None)?;
        let mut worst: f64 = 0.0;
        for x in &g.points {
            worst = worst.max(m.distance(&h(x, 0.0), &h(x, 1.0)));
        }
        if worst > 1e-6 {
            return Err(HoferError::CheckFailed { context: "h(0) != h(1)".into(), residual: worst });
        }
        Ok(Self { manifold: m, h, generator, alpha })
    }

    /// `h(t) = R_x(beta) R_z(-2 pi t)` on the unit sphere; the generator of
    /// `h(t)^{-1} = R_z(2 pi t) R_x(-beta)` is `-2 pi x_3`.
    pub fn tilted_rotation_loop(beta: f64, alpha: f64) -> Result<Self> {
        let m = ManifoldSpec::sphere2();
        let h: LoopFn = Arc::new(move |y, t| {
            let z = rotate_about(&[0.0, 0.0, 1.0], -2.0 * PI * t, y);
            rotate_about(&[1.0, 0.0, 0.0], beta, &z)
        });
        let gen = Hamiltonian::new(m, |x, _| -2.0 * PI * x[2]).named("inverse_rotation_loop");
        Self::new(m, h, gen, alpha)
    }

    /// `h = id`, `H = 0`.
    pub fn trivial(m: ManifoldSpec, alpha: f64) -> Result<Self> {
        Self::new(m, Arc::new(|y, _| y.to_vec()), Hamiltonian::zero(m), alpha)
    }
}

/// `T^k (y, t)` with `t` reduced mod 1.
pub fn skew_iterate(s: &SkewProduct, y: &[f64], t: f64, k: usize) -> (Vec<f64>, f64) {
    let mut y = y.to_vec();
    let mut t = t.rem_euclid(1.0);
    for _ in 0..k {
        y = (s.h)(&y, t);
        t = (t + s.alpha).rem_euclid(1.0);
    }
    (y, t)
}

/// `(1/N) max_t (max_y F_N - min_y F_N)` for `F_N = sum_{k<N} H o T^k`, on
/// the grid in `y` and `t_samples` uniform times. Returns `(N, value)` pairs
/// and the largest telescoping defect `|F_N - F_{N-1} - H o T^{N-1}|`.
pub fn loop_average_decay(s: &SkewProduct, g: &Grid, t_samples: usize, n_list: &[usize]) -> Result<(Vec<(usize, f64)>, f64)> {
    let n_max = n_list.iter().cloned().max().unwrap_or(0);
    let ts: Vec<f64> = (0..t_samples).map(|i| i as f64 / t_samples as f64).collect();
    let mut osc_max = vec![0.0f64; n_max + 1];
    let mut tele: f64 = 0.0;
    for (ti, &t0) in ts.iter().enumerate() {
        let mut ys: Vec<Vec<f64>> = g.points.clone();
        let mut sums = vec![0.0; ys.len()];
        let mut t = t0;
        for n in 1..=n_max {
            for (y, acc) in ys.iter_mut().zip(sums.iter_mut()) {
                *acc += s.generator.eval(y, t);
                *y = (s.h)(y, t);
            }
            t = (t + s.alpha).rem_euclid(1.0);
            let mx = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mn = sums.iter().cloned().fold(f64::INFINITY, f64::min);
            osc_max[n] = osc_max[n].max(mx - mn);
        }
        if ti == 0 {
            // F_N = F_{N-1} + H o T^{N-1}, replayed from the orbit of each sample
            for (x, acc) in g.points.iter().zip(&sums).take(8) {
                let mut direct = 0.0;
                for k in 0..n_max {
                    let (y, tk) = skew_iterate(s, x, t0, k);
                    direct += s.generator.eval(&y, tk);
                }
                tele = tele.max((direct - acc).abs());
            }
        }
    }
    let out = n_list.iter().map(|&n| (n, if n == 0 { 0.0 } else { osc_max[n] / n as f64 })).collect();
    Ok((out, tele))
}

/// Box `[c - r, c + r]^2` clipped to the unit square, for bump supports.
pub fn unit_square_box(c: [f64; 2], r: f64) -> BoxRegion {
    BoxRegion::new(vec![[(c[0] - r).max(0.0), (c[0] + r).min(1.0)], [(c[1] - r).max(0.0), (c[1] + r).min(1.0)]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{catalog, CatalogParams};
    use proptest::prelude::*;

    fn bump() -> Hamiltonian {
        let p: CatalogParams = [("cp".to_string(), 0.5), ("cq".to_string(), 0.5), ("radius".to_string(), 0.2)].into_iter().collect();
        catalog("torus_bump", &p).unwrap()
    }

    fn tgrid() -> Grid {
        sample_grid(&ManifoldSpec::torus2(), 64, None).unwrap()
    }

    #[test]
    fn delta_examples() {
        let t = ManifoldSpec::torus2();
        let g = tgrid();
        let f = bump();
        let id = CandidateSet::new(vec![Candidate::identity(t)]);
        assert!((delta(&f, &id, &g).unwrap().value - 1.0).abs() < 1e-12);
        let shift = CandidateSet::new(vec![Candidate::identity(t), Candidate::translation(t, vec![0.5, 0.0]).unwrap()]);
        let d = delta(&f, &shift, &g).unwrap();
        assert!((d.value - 0.5).abs() < 1e-3 && d.witness.starts_with("translate"));
        let odd = Hamiltonian::autonomous(t, |x| (2.0 * PI * x[0]).sin());
        assert!(delta(&odd, &shift, &g).unwrap().value < 1e-9);
        assert!(delta(&f, &CandidateSet::default(), &g).is_err());
        assert!(delta(&Hamiltonian::zero(t), &id, &g).is_err());
    }

    #[test]
    fn delta_n_examples() {
        let t = ManifoldSpec::torus2();
        let g = tgrid();
        let f = bump();
        assert_eq!(delta_n(&f, 1, &[], &g).unwrap().value, 1.0);
        let tr = |a: f64, b: f64| Candidate::translation(t, vec![a, b]).unwrap();
        let seqs2 = vec![vec![tr(0.5, 0.0)], vec![tr(0.25, 0.0)]];
        let d2 = delta_n(&f, 2, &seqs2, &g).unwrap();
        let set = CandidateSet::new(vec![tr(0.5, 0.0), tr(0.25, 0.0)]);
        assert!((d2.value - delta(&f, &set, &g).unwrap().value).abs() < 1e-12);
        let four = delta_n(&f, 4, &[vec![tr(0.5, 0.0), tr(0.0, 0.5), tr(0.5, 0.5)]], &g).unwrap();
        assert!(four.value <= 0.25 + 1e-3);
        assert!(delta_n(&f, 3, &[vec![tr(0.5, 0.0)]], &g).is_err());
    }

    #[test]
    fn winding_levels() {
        let c = ManifoldSpec::cylinder();
        let p: CatalogParams = [("amp".to_string(), 1.0), ("center".to_string(), 0.0), ("width".to_string(), 0.5)].into_iter().collect();
        let band = catalog("radial_bump", &p).unwrap();
        let e = reverse_kam_e(&band, 128, 0.05).unwrap();
        assert!((e.value - 1.0).abs() <= 0.05, "{}", e.value);
        let disc = Hamiltonian::autonomous(c, |x| {
            let d = (x[0] * x[0] + (x[1] - 0.5) * (x[1] - 0.5)).sqrt();
            crate::hamiltonian::bump_profile(d / 0.3)
        });
        assert_eq!(reverse_kam_e(&disc, 128, 0.05).unwrap().value, 0.0);
        assert_eq!(reverse_kam_e(&Hamiltonian::zero(c), 64, 0.05).unwrap().value, 0.0);
        assert!(reverse_kam_e(&band, 64, 1e-4).is_err());
    }

    #[test]
    fn mask_winding_detection() {
        let ring = vec![vec![false; 8], vec![true; 8], vec![false; 8]];
        assert!(mask_winds(&ring));
        let mut blob = vec![vec![false; 8]; 4];
        blob[1][2] = true;
        blob[1][3] = true;
        blob[2][3] = true;
        assert!(!mask_winds(&blob));
        // meets every q column without closing up
        let mut stair = vec![vec![false; 4]; 4];
        for (i, row) in stair.iter_mut().enumerate() {
            row[i] = true;
            if i + 1 < 4 {
                row[i + 1] = true;
            }
        }
        assert!(!mask_winds(&stair));
        // closing the staircase through the periodic seam makes it wind
        let mut closed = vec![vec![false; 4]; 2];
        closed[0] = vec![true, true, false, false];
        closed[1] = vec![false, true, true, true];
        closed[0][3] = true;
        assert!(mask_winds(&closed));
        assert!(!mask_winds(&[vec![true, false, true, false]]));
    }

    #[test]
    fn commutator_identity_and_disjoint() {
        let t = ManifoldSpec::torus2();
        let g = tgrid();
        let p: CatalogParams = [("amp".to_string(), 1.0), ("center".to_string(), 0.25), ("width".to_string(), 0.15)].into_iter().collect();
        let band = catalog("torus_band", &p).unwrap();
        let (gh, rep) = straightened_commutator(&band, &Candidate::identity(t), 1.0, &g).unwrap();
        assert!(rep.all_passed(), "{:?}", rep.verdicts);
        // G = 2F and g_t = f_{2t}
        let fl = FlowMap::exact(&band).unwrap();
        let gf = FlowMap::new(&gh, Scheme::Rk4, 1e-3).unwrap();
        for x in [[0.2, 0.3], [0.31, 0.9]] {
            let a = gf.map(&x, 0.0, 1.0).unwrap();
            let half = fl.map(&x, 0.0, 1.0).unwrap();
            let b = fl.map(&half, 0.0, 1.0).unwrap();
            assert!(t.distance(&a, &b) < 1e-5);
        }
        let shift = Candidate::translation(t, vec![0.5, 0.0]).unwrap();
        let (_, rep) = straightened_commutator(&band, &shift, 1.0, &g).unwrap();
        assert!(rep.all_passed(), "{:?}", rep.verdicts);
        assert!((rep.get("norm_t0").unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn skew_product_basics() {
        let s = SkewProduct::tilted_rotation_loop(1.0, GOLDEN_ALPHA).unwrap();
        let y = [0.6, 0.0, 0.8];
        assert_eq!(skew_iterate(&s, &y, 0.3, 0), (y.to_vec(), 0.3));
        let (a, ta) = skew_iterate(&s, &y, 0.3, 7);
        let (b, tb) = skew_iterate(&s, &a, ta, 5);
        let (c, tc) = skew_iterate(&s, &y, 0.3, 12);
        assert!(s.manifold.distance(&b, &c) < 1e-6 && (tb - tc).abs() < 1e-9);
        let triv = SkewProduct::trivial(s.manifold, GOLDEN_ALPHA).unwrap();
        let (d, td) = skew_iterate(&triv, &y, 0.3, 3);
        assert_eq!(d, y.to_vec());
        assert!((td - (0.3 + 3.0 * GOLDEN_ALPHA).rem_euclid(1.0)).abs() < 1e-12);
        let open = Arc::new(|y: &[f64], t: f64| rotate_about(&[0.0, 0.0, 1.0], t, y));
        assert!(SkewProduct::new(s.manifold, open, Hamiltonian::zero(s.manifold), 0.5).is_err());
    }

    #[test]
    fn loop_average_examples() {
        let g = sample_grid(&ManifoldSpec::sphere2(), 8, None).unwrap();
        let s = SkewProduct::tilted_rotation_loop(1.0, GOLDEN_ALPHA).unwrap();
        let (vals, tele) = loop_average_decay(&s, &g, 8, &[1, 20]).unwrap();
        // the grid misses the poles by a little
        assert!(vals[0].1 <= 4.0 * PI && vals[0].1 > 0.95 * 4.0 * PI);
        assert!(vals[1].1 < vals[0].1 && tele == 0.0);
        let triv = SkewProduct::trivial(ManifoldSpec::sphere2(), GOLDEN_ALPHA).unwrap();
        let (z, _) = loop_average_decay(&triv, &g, 4, &[1, 5]).unwrap();
        assert!(z.iter().all(|(_, v)| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn delta_bounds(a in 0.05f64..0.95, b in 0.05f64..0.95, extra in 0.05f64..0.95) {
            let t = ManifoldSpec::torus2();
            let g = sample_grid(&t, 32, None).unwrap();
            let f = bump();
            let small = CandidateSet::new(vec![Candidate::translation(t, vec![a, b]).unwrap()]);
            let mut big = small.clone();
            big.candidates.push(Candidate::translation(t, vec![extra, 0.0]).unwrap());
            let d1 = delta(&f, &small, &g).unwrap();
            let d2 = delta(&f, &big, &g).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d1.value));
            prop_assert!(d2.value <= d1.value + 1e-15);
            // the witness replays to the reported value
            let w = d2.ratios.iter().find(|(n, _)| *n == d2.witness).unwrap();
            prop_assert_eq!(w.1, d2.value);
        }

        #[test]
        fn winding_value_below_max(amp in 0.2f64..2.0) {
            let p: CatalogParams = [("amp".to_string(), amp), ("center".to_string(), 0.1), ("width".to_string(), 0.6)].into_iter().collect();
            let f = catalog("radial_bump", &p).unwrap();
            let tol = 0.05 * amp.max(1.0);
            let e = reverse_kam_e(&f, 64, tol).unwrap();
            prop_assert!(e.value <= amp + tol);
        }
    }
}

use crate::config::{config_err, CliError};
use hofer_core::dbar::{boundary_modulus_defect, boundary_sigma, family_report, DiscMap, PolarGrid, DEFAULT_NR, DEFAULT_NTHETA};
use hofer_core::flow::{conservation_report, integrate_flow, symplecticity_report};
use hofer_core::flux::{
    commutator_hamiltonian, conjugation_report, flux_of_path, flux_pairing_check, q_profile, Conjugation, FluxOptions, SymplecticPath,
    TorusCycle,
};
use hofer_core::geodesics::{
    build_variation, conjugate_point_scan, fd_second_variation, second_variation_q, variation_lemma_integral, ExtremalData, Side,
    TrigGenerator, VariationField,
};
use hofer_core::geometry::sample_grid;
use hofer_core::growth::{
    delta, loop_average_decay, reverse_kam_e, straightened_commutator, Candidate, CandidateSet, SkewProduct, GOLDEN_ALPHA,
};
use hofer_core::hamiltonian::{catalog, normalize, product_flow_step, product_formula_defect, CatalogParams};
use hofer_core::hofer::{extrema, lp_degeneracy_demo, path_length, square_displacement_certificate, LengthKind};
use hofer_core::lagrangian::{
    annulus_area, exactness_integral, exactness_integral_unchecked, gamma_split_torus, liouville_pairing, suspension_isotropy_check,
    tilted_great_circle, LoopHomotopy, ParametrizedCycle, SuspensionMap,
};
use hofer_core::morse::{morse_function, morse_homology_report, MorseOptions};
use hofer_core::report::Curve;
use hofer_core::{FlowMap, Hamiltonian, ManifoldSpec, Report, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::f64::consts::PI;

type RunFn = Box<dyn Fn(&Map<String, Value>, u64) -> Result<(Report, Value), CliError> + Send + Sync>;

/// A registered experiment: `hofer-lab <module> <name>` or `run` with `id`.
pub struct Experiment {
    pub id: &'static str,
    pub module: &'static str,
    pub name: &'static str,
    pub claim: &'static str,
    run: RunFn,
}

impl Experiment {
    /// Validates `params` against the experiment's settings and runs it.
    /// Returns the report and the fully resolved settings.
    pub fn run(&self, params: &Map<String, Value>, seed: u64) -> Result<(Report, Value), CliError> {
        (self.run)(params, seed)
    }
}

fn entry<P>(id: &'static str, module: &'static str, name: &'static str, claim: &'static str, f: fn(&P, u64) -> Result<Report, CliError>) -> Experiment
where
    P: DeserializeOwned + Serialize + Default + 'static,
{
    Experiment {
        id,
        module,
        name,
        claim,
        run: Box::new(move |m, seed| {
            let p: P = serde_json::from_value(Value::Object(m.clone())).map_err(|e| config_err(format!("{id}: {e}")))?;
            let resolved = serde_json::to_value(&p).map_err(|e| config_err(e.to_string()))?;
            Ok((f(&p, seed)?, resolved))
        }),
    }
}

/// Every experiment, in listing order.
pub fn registry() -> Vec<Experiment> {
    vec![
        entry("full-turn", "flow", "full-turn", "the flow of 2 pi x3 on the sphere is the identity at t = 1", full_turn),
        entry("symplecticity", "flow", "symplecticity", "Hamiltonian flows preserve dp ^ dq; the implicit midpoint rule does too", symplecticity),
        entry("conservation", "flow", "conservation", "energy is conserved along autonomous flows", conservation),
        entry(
            "product-formula",
            "hamiltonian",
            "product-formula",
            "F(x, t) + G(f_t^{-1} x, t) generates the composition f_t g_t",
            product_formula,
        ),
        entry("square-energy", "hofer", "square-energy", "a square of area u^2 is displaced by a path of length about its area", square_energy),
        entry(
            "lp-degeneracy",
            "hofer",
            "lp-degeneracy",
            "L_p path costs of displacing paths collapse while the L-infinity cost stays bounded below",
            lp_degeneracy,
        ),
        entry("sphere-loop", "hofer", "sphere-loop", "the full rotation of the area-one sphere has max F = -min F = 1/2 and length 1", sphere_loop),
        entry(
            "second-variation",
            "geodesics",
            "second-variation",
            "the second variation of length at a fixed extremum is the quadratic form Q",
            second_variation,
        ),
        entry(
            "conjugate-scan",
            "geodesics",
            "conjugate-scan",
            "the oscillator with lambda < 1 has no periodic orbits of period at most 1 besides the origin",
            conjugate_scan,
        ),
        entry(
            "isoperimetric",
            "geodesics",
            "isoperimetric",
            "on circles Q equals -energy / (2 pi lambda) + 2 area, and 4 pi area = energy at lambda = 1",
            isoperimetric,
        ),
        entry(
            "variation-lemma",
            "geodesics",
            "variation-lemma",
            "the eps-derivative of the varying generator integrates to zero along the unperturbed orbit",
            variation_lemma,
        ),
        entry("delta", "growth", "delta", "delta of a bump drops from 1 to 1/2 once a displacing translation is allowed", delta_bound),
        entry(
            "loop-average",
            "growth",
            "loop-average",
            "Birkhoff averages of a rotation loop along an irrational skew product shrink the oscillation",
            loop_average,
        ),
        entry("commutator", "growth", "commutator", "the straightened commutator path has constant norm", growth_commutator),
        entry("winding-levels", "growth", "winding-levels", "levels of a band function wind around the cylinder up to its maximum", winding_levels),
        entry("flux-path", "flux", "path", "flux of a path of symplectic maps of the torus", flux_path),
        entry("flux-gamma", "flux", "gamma", "translation loops generate the flux group Z^2 and Hamiltonian loops have zero flux", flux_gamma),
        entry("flux-pairing", "flux", "pairing", "flux paired with a cycle equals the area swept by the cycle", flux_pairing),
        entry(
            "flux-conjugation",
            "flux",
            "conjugation",
            "conjugating a Hamiltonian flow by a symplectic map gives the flow of the transported Hamiltonian",
            flux_conjugation,
        ),
        entry(
            "flux-commutator",
            "flux",
            "commutator",
            "the commutator of a translation with the flow of F(q) is generated by F(q) - F(q + b)",
            flux_commutator,
        ),
        entry("suspension", "lagrangian", "suspension", "the suspension of a Hamiltonian loop is Lagrangian", suspension),
        entry("exactness", "lagrangian", "exactness", "a homotopy of Hamiltonian loops has an exact variation form", exactness),
        entry("liouville-pairing", "lagrangian", "liouville-pairing", "the Liouville class pairs a circle of radius r to pi r^2", liouville),
        entry("gamma-split", "lagrangian", "gamma-split", "the Liouville periods of a split torus form a discrete group iff the areas are commensurable", gamma_split),
        entry("annulus", "lagrangian", "annulus", "the annulus swept by a loop has area 2 length + 4 eps", annulus),
        entry("dbar-family", "dbar", "family", "the explicit family solves dbar f = s with boundary on the unit circle and blows up as s -> 1", dbar_family),
        entry("dbar-sigma", "dbar", "sigma", "a constant dbar with boundary on the unit circle has modulus at most 1", dbar_sigma),
        entry(
            "morse-homology",
            "morse",
            "homology",
            "Morse homology over Z/2 recovers the homology of the surface and the maximum is essential",
            morse_homology,
        ),
    ]
}

/// Looks an experiment up by id, or by module and name.
pub fn find<'a>(reg: &'a [Experiment], module: Option<&str>, name: &str) -> Option<&'a Experiment> {
    match module {
        None => reg.iter().find(|e| e.id == name),
        Some(m) => {
            let m = if m == "geodesic" { "geodesics" } else { m };
            reg.iter().find(|e| e.module == m && (e.name == name || e.id == name))
        }
    }
}

fn report() -> Report {
    Report::new("", "")
}

fn cat(name: &str, kv: &[(&str, f64)]) -> hofer_core::Result<Hamiltonian> {
    let p: CatalogParams = kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    catalog(name, &p)
}

fn oscillator(lambda: f64, sign: f64) -> hofer_core::Result<Hamiltonian> {
    cat("oscillator", &[("lambda", lambda), ("sign", sign)])
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be positive, got {v}")))
    }
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

// ---- flow ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FullTurn {
    k: f64,
    resolution: usize,
    scheme: Scheme,
    step: f64,
    tol: f64,
}

impl Default for FullTurn {
    fn default() -> Self {
        FullTurn { k: 1.0, resolution: 8, scheme: Scheme::Rk4, step: 1e-3, tol: 1e-5 }
    }
}

fn full_turn(p: &FullTurn, _: u64) -> Result<Report, CliError> {
    if p.k == 0.0 || p.k.fract() != 0.0 {
        return Err(config_err(format!("k must be a nonzero integer, got {}", p.k)));
    }
    let h = cat("rotation_k", &[("k", p.k)])?.without_exact_flow();
    let g = sample_grid(&h.manifold, p.resolution, None)?;
    let d: Vec<f64> = g
        .points
        .par_iter()
        .map(|x| integrate_flow(&h, x, 0.0, 1.0, p.scheme, p.step).map(|tr| h.manifold.distance(tr.end(), x)))
        .collect::<hofer_core::Result<_>>()?;
    let worst = max_of(d);
    let mut rep = report();
    rep.scalar("max_return_distance", worst).scalar("grid_points", g.len() as f64);
    rep.check_le("returns_to_start", worst, p.tol);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Symplecticity {
    lambda: f64,
    scheme: Scheme,
    step: f64,
    t: f64,
    resolution: usize,
    tol: f64,
}

impl Default for Symplecticity {
    fn default() -> Self {
        Symplecticity { lambda: 1.0, scheme: Scheme::ImplicitMidpoint, step: 1e-3, t: 1.0, resolution: 5, tol: 1e-6 }
    }
}

fn symplecticity(p: &Symplecticity, _: u64) -> Result<Report, CliError> {
    let h = oscillator(p.lambda, 1.0)?.without_exact_flow();
    let flow = FlowMap::new(&h, p.scheme, p.step)?;
    let g = sample_grid(&h.manifold, p.resolution, None)?;
    let mut rep = symplecticity_report(&flow, &g, p.t)?;
    let d = rep.get("max_defect").unwrap_or(f64::NAN);
    rep.check_le("preserves_omega", d, p.tol);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Conservation {
    lambda: f64,
    scheme: Scheme,
    step: f64,
    t: f64,
    x0: Vec<f64>,
    tol: f64,
}

impl Default for Conservation {
    fn default() -> Self {
        Conservation { lambda: 1.0, scheme: Scheme::ImplicitMidpoint, step: 1e-3, t: 1.0, x0: vec![0.4, -0.3], tol: 1e-9 }
    }
}

fn conservation(p: &Conservation, _: u64) -> Result<Report, CliError> {
    let h = oscillator(p.lambda, 1.0)?.without_exact_flow();
    let flow = FlowMap::new(&h, p.scheme, p.step)?;
    let mut rep = conservation_report(&flow, &p.x0, p.t)?;
    let d = rep.get("max_energy_drift").unwrap_or(f64::NAN);
    rep.check_le("energy_conserved", d, p.tol);
    Ok(rep)
}

// ---- hamiltonian ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ProductFormula {
    pairs: usize,
    resolution: usize,
    times: Vec<f64>,
    step: f64,
    max_k: u32,
    amp_range: [f64; 2],
    tol: f64,
}

impl Default for ProductFormula {
    fn default() -> Self {
        ProductFormula { pairs: 5, resolution: 32, times: vec![0.5, 1.0], step: 1e-3, max_k: 2, amp_range: [0.05, 0.2], tol: 1e-5 }
    }
}

fn product_formula(p: &ProductFormula, seed: u64) -> Result<Report, CliError> {
    if p.pairs == 0 || p.max_k == 0 {
        return Err(config_err("pairs and max_k must be positive"));
    }
    let [lo, hi] = p.amp_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(config_err("amp_range must satisfy 0 < lo <= hi"));
    }
    let t2 = ManifoldSpec::torus2();
    let g0 = sample_grid(&t2, 16, None)?;
    let pts = sample_grid(&t2, p.resolution, None)?.points;
    let probes = sample_grid(&t2, 4, None)?.points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = report();
    let mut curve = Curve::new(&["pair", "defect", "step"]);
    let mut chosen = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..p.pairs {
        let mut wave = |axis: f64| {
            let amp = rng.gen_range(lo..=hi);
            let k = rng.gen_range(1..=p.max_k) as f64;
            let phase = rng.gen_range(0.0..2.0 * PI);
            (json!({ "axis": axis, "amp": amp, "k": k, "phase": phase }), cat("torus_wave", &[("axis", axis), ("amp", amp), ("k", k), ("phase", phase)]))
        };
        let (jf, f) = wave(0.0);
        let (jg, g) = wave(1.0);
        let f = normalize(&f?, &t2, &g0)?;
        let g = normalize(&g?, &t2, &g0)?;
        // pick the step on a few probes, leaving a factor 10 for the full grid
        let t_end = p.times.iter().cloned().fold(0.0, f64::max);
        let step = product_flow_step(&f, &g, &probes, t_end, p.step, 0.1 * p.tol)?;
        let d = product_formula_defect(&f, &g, &pts, &p.times, step)?;
        curve.push(&[i as f64, d, step]);
        chosen.push(json!({ "f": jf, "g": jg }));
        worst = worst.max(d);
    }
    rep.scalar("max_defect", worst).scalar("grid_points", pts.len() as f64);
    rep.curve("defects", curve);
    rep.result("pairs", Value::Array(chosen));
    rep.check_le("product_flow_matches_composition", worst, p.tol);
    Ok(rep)
}

// ---- hofer ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SquareEnergy {
    u: f64,
    eps: f64,
}

impl Default for SquareEnergy {
    fn default() -> Self {
        SquareEnergy { u: 0.5, eps: 0.01 }
    }
}

fn square_energy(p: &SquareEnergy, _: u64) -> Result<Report, CliError> {
    let (_, cert) = square_displacement_certificate(p.u, p.eps)?;
    let mut rep = report();
    rep.scalar_with_error("hofer_length", cert.value, cert.error_bar)
        .scalar("area", p.u * p.u)
        .scalar("grid_resolution", cert.grid_resolution as f64);
    rep.note(cert.note.clone());
    rep.check_le("length_at_most_area_plus_eps", cert.value, p.u * p.u + p.eps);
    rep.check_true("displaces_square", cert.displaces, "sampled square pushed off itself at t = 1");
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LpDegeneracy {
    p: f64,
    target: f64,
}

impl Default for LpDegeneracy {
    fn default() -> Self {
        LpDegeneracy { p: 1.0, target: 0.01 }
    }
}

fn lp_degeneracy(p: &LpDegeneracy, _: u64) -> Result<Report, CliError> {
    Ok(lp_degeneracy_demo(p.p, p.target)?.1)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SphereLoop {
    k: f64,
    resolution: usize,
    tol: f64,
}

impl Default for SphereLoop {
    fn default() -> Self {
        SphereLoop { k: 1.0, resolution: 8, tol: 1e-3 }
    }
}

fn sphere_loop(p: &SphereLoop, _: u64) -> Result<Report, CliError> {
    if p.k == 0.0 || p.k.fract() != 0.0 {
        return Err(config_err(format!("k must be a nonzero integer, got {}", p.k)));
    }
    let rot = cat("rotation_k", &[("k", p.k), ("area_scale", 1.0 / (4.0 * PI))])?;
    let g = sample_grid(&rot.manifold, p.resolution, None)?;
    let e = extrema(&rot, 0.0, &g)?;
    let len = path_length(&rot, 0.0, 1.0, LengthKind::LengthLinf, &g)?;
    let half = 0.5 * p.k.abs();
    let mut rep = report();
    rep.scalar_with_error("max", e.max, e.error_bar).scalar("min", e.min).scalar("length", len);
    rep.check_le("max_is_half", (e.max - half).abs(), p.tol);
    rep.check_le("min_is_minus_half", (e.min + half).abs(), p.tol);
    rep.check_le("length_is_turns", (len - p.k.abs()).abs(), p.tol);
    Ok(rep)
}

// ---- geodesics ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SecondVariation {
    catalog: String,
    lambda: f64,
    /// `random`: finite differences against Q+ at the maximum of
    /// `-pi lambda |z|^2`; `circle`: Q- of a circle at the minimum of
    /// `pi lambda |z|^2` against its closed form.
    curve: String,
    r: f64,
    generators: usize,
    amp: f64,
    fd_step: f64,
    nodes: usize,
    abs_tol: f64,
    rel_tol: f64,
}

impl Default for SecondVariation {
    fn default() -> Self {
        SecondVariation {
            catalog: "oscillator".into(),
            lambda: 0.9,
            curve: "random".into(),
            r: 0.3,
            generators: 10,
            amp: 1.0,
            fd_step: 1e-2,
            nodes: 4097,
            abs_tol: 1e-3,
            rel_tol: 1e-2,
        }
    }
}

fn second_variation(p: &SecondVariation, seed: u64) -> Result<Report, CliError> {
    if p.catalog != "oscillator" {
        return Err(config_err(format!("second variation runs on the oscillator, got {}", p.catalog)));
    }
    positive("lambda", p.lambda)?;
    let mut rep = report();
    match p.curve.as_str() {
        "random" => {
            let f = oscillator(p.lambda, -1.0)?;
            let flow = FlowMap::exact(&f)?;
            let ext = ExtremalData::at(&f, Some(vec![0.0, 0.0]), None)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut curve = Curve::new(&["case", "q_plus", "fd"]);
            let mut excess = f64::NEG_INFINITY;
            for i in 0..p.generators {
                let var = build_variation(&flow, TrigGenerator::random(&mut rng, f.manifold, p.amp).to_v1())?;
                let v = var.field(&[0.0, 0.0], p.nodes)?;
                let q = second_variation_q(&ext, Side::Plus, &v)?;
                let fd = fd_second_variation(&var, &ext, Side::Plus, p.fd_step)?;
                curve.push(&[i as f64, q, fd]);
                excess = excess.max((fd - q).abs() - p.abs_tol.max(p.rel_tol * q.abs()));
            }
            rep.curve("cases", curve);
            rep.check_true("extremum_nondegenerate", ext.nondegenerate_plus, "");
            rep.check_le("fd_matches_q_plus", excess, 0.0);
        }
        "circle" => {
            let ext = ExtremalData::at(&oscillator(p.lambda, 1.0)?, None, Some(vec![0.0, 0.0]))?;
            let v = VariationField::circle(p.r, p.nodes)?;
            let q = second_variation_q(&ext, Side::Minus, &v)?;
            let expect = -v.energy() / (2.0 * PI * p.lambda) + 2.0 * v.area();
            rep.scalar("q_minus", q).scalar("closed_form", expect).scalar("energy", v.energy()).scalar("area", v.area());
            rep.check_le("q_minus_closed_form", (q - expect).abs(), 1e-4);
        }
        other => return Err(config_err(format!("curve must be random or circle, got {other}"))),
    }
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConjugateScanParams {
    lambda: f64,
    samples: usize,
    tol: f64,
}

impl Default for ConjugateScanParams {
    fn default() -> Self {
        ConjugateScanParams { lambda: 0.5, samples: 100, tol: 1e-4 }
    }
}

fn conjugate_scan(p: &ConjugateScanParams, _: u64) -> Result<Report, CliError> {
    positive("lambda", p.lambda)?;
    if p.samples < 2 {
        return Err(config_err("samples must be at least 2"));
    }
    let grid: Vec<f64> = (1..=p.samples).map(|i| i as f64 / p.samples as f64).collect();
    let scan = conjugate_point_scan(&oscillator(p.lambda, -1.0)?, &[0.0, 0.0], &grid)?;
    // the linearized flow is a rotation by 2 pi lambda t
    let expected: Vec<f64> = (1..).map(|k| k as f64 / p.lambda).take_while(|t| *t <= 1.0 + p.tol).collect();
    let roots: Vec<f64> = scan.roots.iter().map(|r| r.t).collect();
    let mut rep = report();
    rep.scalar("roots", roots.len() as f64);
    rep.result("roots", json!(roots));
    rep.result("expected_roots", json!(expected));
    rep.check_true("not_degenerate", !scan.degenerate, "");
    rep.check_true("root_count", roots.len() == expected.len(), format!("found {}, expected {}", roots.len(), expected.len()));
    for (i, (t, e)) in roots.iter().zip(&expected).enumerate() {
        rep.check_le(&format!("root_{i}"), (t - e).abs(), p.tol);
    }
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Isoperimetric {
    lambdas: Vec<f64>,
    r: f64,
    nodes: usize,
    tol: f64,
    equality_tol: f64,
}

impl Default for Isoperimetric {
    fn default() -> Self {
        Isoperimetric { lambdas: vec![0.5, 0.9, 1.0, 1.7], r: 0.3, nodes: 4097, tol: 1e-4, equality_tol: 1e-6 }
    }
}

fn isoperimetric(p: &Isoperimetric, _: u64) -> Result<Report, CliError> {
    positive("r", p.r)?;
    let v = VariationField::circle(p.r, p.nodes)?;
    let (energy, area) = (v.energy(), v.area());
    let mut rep = report();
    let mut curve = Curve::new(&["lambda", "q_minus", "closed_form"]);
    for &lam in &p.lambdas {
        positive("lambda", lam)?;
        let ext = ExtremalData::at(&oscillator(lam, 1.0)?, None, Some(vec![0.0, 0.0]))?;
        let q = second_variation_q(&ext, Side::Minus, &v)?;
        let expect = -energy / (2.0 * PI * lam) + 2.0 * area;
        curve.push(&[lam, q, expect]);
        rep.check_le(&format!("closed_form_lambda_{lam}"), (q - expect).abs(), p.tol);
    }
    rep.scalar("energy", energy).scalar("area", area);
    rep.curve("q_minus", curve);
    rep.check_le("equality_at_lambda_one", (4.0 * PI * area - energy).abs(), p.equality_tol);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct VariationLemma {
    cases: usize,
    lambda: f64,
    amp: f64,
    step: f64,
    tol: f64,
}

impl Default for VariationLemma {
    fn default() -> Self {
        VariationLemma { cases: 50, lambda: 0.9, amp: 1.0, step: 1e-4, tol: 1e-5 }
    }
}

fn variation_lemma(p: &VariationLemma, seed: u64) -> Result<Report, CliError> {
    let f = oscillator(p.lambda, -1.0)?;
    let flow = FlowMap::exact(&f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..p.cases {
        let x = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let var = build_variation(&flow, TrigGenerator::random(&mut rng, f.manifold, p.amp).to_v1())?;
        worst = worst.max(variation_lemma_integral(&var, &x, 0.0, p.step)?.abs());
    }
    let mut rep = report();
    rep.scalar("max_integral", worst).scalar("cases", p.cases as f64);
    rep.check_le("integral_vanishes", worst, p.tol);
    Ok(rep)
}

// ---- growth ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DeltaParams {
    hamiltonian: String,
    cp: f64,
    cq: f64,
    radius: f64,
    /// `translations` (grid of `k x k` translations), `identity` or `shift`.
    candidates: String,
    k: usize,
    shift: Vec<f64>,
    resolution: usize,
    tol: f64,
}

impl Default for DeltaParams {
    fn default() -> Self {
        DeltaParams {
            hamiltonian: "torus_bump".into(),
            cp: 0.5,
            cq: 0.5,
            radius: 0.2,
            candidates: "translations".into(),
            k: 2,
            shift: vec![0.5, 0.0],
            resolution: 64,
            tol: 1e-3,
        }
    }
}

fn delta_bound(p: &DeltaParams, _: u64) -> Result<Report, CliError> {
    if p.hamiltonian != "torus_bump" {
        return Err(config_err(format!("delta is set up for torus_bump, got {}", p.hamiltonian)));
    }
    let t = ManifoldSpec::torus2();
    let f = cat("torus_bump", &[("cp", p.cp), ("cq", p.cq), ("radius", p.radius)])?;
    let g = sample_grid(&t, p.resolution, None)?;
    let set = match p.candidates.as_str() {
        "translations" => CandidateSet::torus_translations(p.k),
        "identity" => CandidateSet::new(vec![Candidate::identity(t)]),
        "shift" => CandidateSet::new(vec![Candidate::identity(t), Candidate::translation(t, p.shift.clone())?]),
        other => return Err(config_err(format!("candidates must be translations, identity or shift, got {other}"))),
    };
    // a translation moves the bump off itself once it shifts by a diameter
    let displacing = set.candidates.iter().any(|c| {
        let origin = [0.0, 0.0];
        c.apply(&origin).map(|y| t.distance(&y, &origin) >= 2.0 * p.radius).unwrap_or(false)
    });
    let id = delta(&f, &CandidateSet::new(vec![Candidate::identity(t)]), &g)?;
    let d = delta(&f, &set, &g)?;
    let mut rep = report();
    rep.scalar("delta", d.value).scalar("delta_identity", id.value).scalar("candidates", set.candidates.len() as f64);
    rep.result("witness", json!(d.witness));
    rep.check_le("identity_only_is_one", (id.value - 1.0).abs(), 1e-12);
    if displacing {
        rep.check_le("displacing_candidate_halves", d.value, 0.5 + p.tol);
    }
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LoopAverage {
    beta: f64,
    alpha: f64,
    n: usize,
    resolution: usize,
    t_samples: usize,
    ratio: f64,
}

impl Default for LoopAverage {
    fn default() -> Self {
        LoopAverage { beta: 1.0, alpha: GOLDEN_ALPHA, n: 200, resolution: 8, t_samples: 8, ratio: 0.2 }
    }
}

fn loop_average(p: &LoopAverage, _: u64) -> Result<Report, CliError> {
    if p.n < 1 || p.t_samples < 1 {
        return Err(config_err("n and t_samples must be positive"));
    }
    let s = SkewProduct::tilted_rotation_loop(p.beta, p.alpha)?;
    let g = sample_grid(&ManifoldSpec::sphere2(), p.resolution, None)?;
    let mut ns: Vec<usize> = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000].into_iter().filter(|k| *k < p.n).collect();
    ns.push(p.n);
    let (vals, tele) = loop_average_decay(&s, &g, p.t_samples, &ns)?;
    let mut curve = Curve::new(&["n", "average_oscillation"]);
    for (n, v) in &vals {
        curve.push(&[*n as f64, *v]);
    }
    let first = vals[0].1;
    let last = vals[vals.len() - 1].1;
    let mut rep = report();
    rep.scalar("first", first).scalar("last", last).scalar("telescoping_defect", tele);
    rep.curve("decay", curve);
    rep.check_le("average_decays", last / first, p.ratio);
    rep.check_le("birkhoff_sums_telescope", tele, 1e-9);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GrowthCommutator {
    amp: f64,
    center: f64,
    width: f64,
    shift: Vec<f64>,
    t_end: f64,
    resolution: usize,
}

impl Default for GrowthCommutator {
    fn default() -> Self {
        GrowthCommutator { amp: 1.0, center: 0.25, width: 0.15, shift: vec![0.5, 0.0], t_end: 1.0, resolution: 64 }
    }
}

fn growth_commutator(p: &GrowthCommutator, _: u64) -> Result<Report, CliError> {
    let t = ManifoldSpec::torus2();
    let band = cat("torus_band", &[("amp", p.amp), ("center", p.center), ("width", p.width)])?;
    let g = sample_grid(&t, p.resolution, None)?;
    let phi = Candidate::translation(t, p.shift.clone())?;
    Ok(straightened_commutator(&band, &phi, p.t_end, &g)?.1)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Winding {
    amp: f64,
    center: f64,
    width: f64,
    resolution: usize,
    tol: f64,
}

impl Default for Winding {
    fn default() -> Self {
        Winding { amp: 1.0, center: 0.0, width: 0.5, resolution: 128, tol: 0.05 }
    }
}

fn winding_levels(p: &Winding, _: u64) -> Result<Report, CliError> {
    positive("amp", p.amp)?;
    let band = cat("radial_bump", &[("amp", p.amp), ("center", p.center), ("width", p.width)])?;
    let w = reverse_kam_e(&band, p.resolution, p.tol)?;
    let mut rep = report();
    rep.scalar("sup_level", w.value).scalar("levels_scanned", w.scanned as f64);
    rep.result("winding_levels", json!(w.winding_levels));
    rep.check_le("sup_level_is_max", (w.value - p.amp).abs(), p.tol);
    Ok(rep)
}

// ---- flux ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FluxPath {
    map: String,
    s_samples: usize,
    t_nodes: usize,
}

impl Default for FluxPath {
    fn default() -> Self {
        let o = FluxOptions::default();
        FluxPath { map: "translate_q:0.37".into(), s_samples: o.s_samples, t_nodes: o.t_nodes }
    }
}

fn flux_path(p: &FluxPath, _: u64) -> Result<Report, CliError> {
    let path = SymplecticPath::parse(&p.map)?;
    let v = flux_of_path(&path, FluxOptions { s_samples: p.s_samples, t_nodes: p.t_nodes })?;
    let defect = path.symplecticity_defect()?;
    let mut rep = report();
    rep.scalar("flux_p", v.dp).scalar("flux_q", v.dq).scalar("symplecticity_defect", defect);
    rep.result("flux", json!(v.as_array()));
    rep.check_le("path_is_symplectic", defect, 1e-6);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FluxGamma {
    s_samples: usize,
    t_nodes: usize,
    hamiltonian_t_nodes: usize,
    tol: f64,
    hamiltonian_tol: f64,
}

impl Default for FluxGamma {
    fn default() -> Self {
        FluxGamma { s_samples: 64, t_nodes: 33, hamiltonian_t_nodes: 9, tol: 1e-9, hamiltonian_tol: 1e-5 }
    }
}

fn flux_gamma(p: &FluxGamma, _: u64) -> Result<Report, CliError> {
    let o = FluxOptions { s_samples: p.s_samples, t_nodes: p.t_nodes };
    let vert = flux_of_path(&SymplecticPath::translation(0.0, 1.0), o)?;
    let horiz = flux_of_path(&SymplecticPath::translation(1.0, 0.0), o)?;
    // sin(2 pi (q - t)) / (2 pi) shears p and closes up at t = 1
    let h = Hamiltonian::new(ManifoldSpec::torus2(), |x, t| (2.0 * PI * (x[1] - t)).sin() / (2.0 * PI)).named("torus_loop");
    let hl = SymplecticPath::hamiltonian_flow(FlowMap::best(&h)?)?;
    let loop_defect = hl.loop_defect()?;
    let ham = flux_of_path(&hl, FluxOptions { s_samples: p.s_samples, t_nodes: p.hamiltonian_t_nodes })?;
    let det = vert.dp * horiz.dq - vert.dq * horiz.dp;
    let mut rep = report();
    rep.result("vertical_translation_loop", json!(vert.as_array()));
    rep.result("horizontal_translation_loop", json!(horiz.as_array()));
    rep.result("hamiltonian_loop", json!(ham.as_array()));
    rep.scalar("generator_determinant", det).scalar("hamiltonian_loop_defect", loop_defect);
    let dist = |v: [f64; 2], e: [f64; 2]| (v[0] - e[0]).abs().max((v[1] - e[1]).abs());
    rep.check_le("vertical_is_1_0", dist(vert.as_array(), [1.0, 0.0]), p.tol);
    rep.check_le("horizontal_is_0_minus_1", dist(horiz.as_array(), [0.0, -1.0]), p.tol);
    rep.check_le("hamiltonian_loop_is_zero", ham.max_abs(), p.hamiltonian_tol);
    rep.check_le("generators_span_z2", (det.abs() - 1.0).abs(), p.tol);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FluxPairing {
    map: String,
    s_samples: usize,
    t_nodes: usize,
}

impl Default for FluxPairing {
    fn default() -> Self {
        let o = FluxOptions::default();
        FluxPairing { map: "translate_q:1".into(), s_samples: o.s_samples, t_nodes: o.t_nodes }
    }
}

fn flux_pairing(p: &FluxPairing, _: u64) -> Result<Report, CliError> {
    let path = SymplecticPath::parse(&p.map)?;
    let o = FluxOptions { s_samples: p.s_samples, t_nodes: p.t_nodes };
    let cycles = [
        ("horizontal", TorusCycle::horizontal(0.2)),
        ("vertical", TorusCycle::vertical(0.2)),
        ("small_circle", TorusCycle::small_circle([0.4, 0.4], 0.1)),
    ];
    let mut rep = report();
    for (name, c) in &cycles {
        let r = flux_pairing_check(&path, c, o)?;
        for (k, v) in &r.scalars {
            rep.scalars.insert(format!("{name}.{k}"), v.clone());
        }
        for mut v in r.verdicts {
            v.name = format!("{name}.{}", v.name);
            rep.verdicts.push(v);
        }
    }
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FluxConjugation {
    radius: f64,
    shift: Vec<f64>,
    t: f64,
    step: f64,
    resolution: usize,
}

impl Default for FluxConjugation {
    fn default() -> Self {
        FluxConjugation { radius: 0.3, shift: vec![0.3, -0.15], t: 0.7, step: 1e-3, resolution: 6 }
    }
}

fn flux_conjugation(p: &FluxConjugation, _: u64) -> Result<Report, CliError> {
    let m = ManifoldSpec::torus2();
    let f = cat("torus_bump", &[("radius", p.radius)])?;
    let fl = FlowMap::new(&f, Scheme::Rk4, p.step)?;
    let c = Conjugation::new(Candidate::translation(m, p.shift.clone())?, fl, p.t)?;
    Ok(conjugation_report(&c, &sample_grid(&m, p.resolution, None)?)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FluxCommutator {
    amp: f64,
    width: f64,
    b: f64,
    resolution: usize,
}

impl Default for FluxCommutator {
    fn default() -> Self {
        FluxCommutator { amp: 1.0, width: 0.1, b: 0.4, resolution: 32 }
    }
}

fn flux_commutator(p: &FluxCommutator, _: u64) -> Result<Report, CliError> {
    let f = q_profile(p.amp, p.width)?;
    let g = sample_grid(&ManifoldSpec::torus2(), p.resolution, None)?;
    Ok(commutator_hamiltonian(&f, p.b, &g)?.1)
}

// ---- lagrangian ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Suspension {
    tilt: f64,
    n_theta: usize,
    n_t: usize,
    step: f64,
    tol: f64,
    control_tilt: f64,
    control_min: f64,
}

impl Default for Suspension {
    fn default() -> Self {
        Suspension { tilt: 0.0, n_theta: 12, n_t: 12, step: 1e-4, tol: 1e-5, control_tilt: 0.5, control_min: 1e-2 }
    }
}

fn suspension(p: &Suspension, _: u64) -> Result<Report, CliError> {
    let rot = cat("rotation_k", &[])?;
    let m = SuspensionMap::new(&rot, tilted_great_circle(p.tilt))?;
    let v = suspension_isotropy_check(&m, p.n_theta, p.n_t, p.step)?.get("max_pullback").unwrap_or(f64::NAN);
    let bad = SuspensionMap::new(&rot, tilted_great_circle(p.control_tilt))?.with_wrong_sign();
    let c = suspension_isotropy_check(&bad, p.n_theta, p.n_t, p.step)?.get("max_pullback").unwrap_or(f64::NAN);
    let mut rep = report();
    rep.scalar("max_pullback", v).scalar("control_max_pullback", c);
    rep.check_le("suspension_isotropic", v, p.tol);
    rep.check_ge("wrong_sign_control_detected", c, p.control_min);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Exactness {
    beta: f64,
    c: f64,
    s: Vec<f64>,
    x: Vec<f64>,
    tol: f64,
    control_c: f64,
    control_s: f64,
    control_min: f64,
}

impl Default for Exactness {
    fn default() -> Self {
        Exactness { beta: 1.0, c: 1.0, s: vec![0.0, 0.25, 0.7], x: vec![0.36, -0.48, 0.8], tol: 1e-5, control_c: 0.8, control_s: 0.5, control_min: 1e-2 }
    }
}

fn exactness(p: &Exactness, _: u64) -> Result<Report, CliError> {
    let fam = LoopHomotopy::tilted_rotations(p.beta, p.c);
    let mut worst: f64 = 0.0;
    for &s in &p.s {
        worst = worst.max(exactness_integral(&fam, &p.x, s)?.abs());
    }
    // off a loop the integral is beta sin(2 pi c) at this point
    let bad = LoopHomotopy::tilted_rotations(p.beta, p.control_c);
    let bs = p.beta * p.control_s;
    let u = [bs.cos(), 0.0, -bs.sin()];
    let ctrl = exactness_integral_unchecked(&bad, &u, p.control_s)?;
    let mut rep = report();
    rep.scalar("max_integral", worst).scalar("control_integral", ctrl).scalar("control_closed_form", p.beta * (2.0 * PI * p.control_c).sin());
    rep.check_le("loop_family_exact", worst, p.tol);
    rep.check_ge("non_loop_control_detected", ctrl.abs(), p.control_min);
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Liouville {
    curve: String,
    radius: f64,
    samples: usize,
}

impl Default for Liouville {
    fn default() -> Self {
        Liouville { curve: "circle".into(), radius: 1.0, samples: 256 }
    }
}

fn liouville(p: &Liouville, _: u64) -> Result<Report, CliError> {
    let c = ParametrizedCycle::named(&p.curve, p.radius, p.samples)?;
    let v = liouville_pairing(&c)?;
    let expect = if p.curve == "circle" { PI * p.radius * p.radius } else { 0.0 };
    let mut curve = Curve::new(&["p", "q"]);
    for x in c.points() {
        curve.push(x);
    }
    let mut rep = report();
    rep.scalar("pairing", v).scalar("closed_form", expect);
    rep.curve("cycle", curve);
    rep.check_le("pairing_matches_area", (v - expect).abs(), 1e-6 * p.radius.powi(2).max(1.0));
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GammaSplit {
    radii: Vec<f64>,
}

impl Default for GammaSplit {
    fn default() -> Self {
        GammaSplit { radii: vec![1.0, std::f64::consts::SQRT_2] }
    }
}

fn gamma_split(p: &GammaSplit, _: u64) -> Result<Report, CliError> {
    let g = gamma_split_torus(&p.radii)?;
    let mut rep = report();
    rep.result("gamma", json!(g));
    if let Some(g) = g {
        rep.scalar("gamma", g);
        let off = max_of(p.radii.iter().map(|r| {
            let n = PI * r * r / g;
            (n - n.round()).abs()
        }));
        rep.check_le("areas_are_multiples", off, 1e-9);
    } else {
        rep.note("the disc areas are not commensurable: the periods are dense");
    }
    Ok(rep)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Annulus {
    amp: f64,
    eps: f64,
    resolution: usize,
}

impl Default for Annulus {
    fn default() -> Self {
        Annulus { amp: 0.5, eps: 0.01, resolution: 64 }
    }
}

fn annulus(p: &Annulus, _: u64) -> Result<Report, CliError> {
    let t = ManifoldSpec::torus2();
    let amp = p.amp;
    let h = Hamiltonian::autonomous(t, move |x| amp * (2.0 * PI * x[0]).sin());
    let a = annulus_area(&h, p.eps, &sample_grid(&t, p.resolution, None)?)?;
    let mut rep = report();
    rep.scalar("area", a.area).scalar("length", a.length).scalar("formula", a.formula);
    rep.check_le("area_is_2l_plus_4eps", (a.area - a.formula).abs(), 1e-6);
    Ok(rep)
}

// ---- dbar ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DbarFamily {
    s: f64,
    nr: usize,
    ntheta: usize,
    section: usize,
}

impl Default for DbarFamily {
    fn default() -> Self {
        DbarFamily { s: 0.9, nr: DEFAULT_NR, ntheta: DEFAULT_NTHETA, section: 101 }
    }
}

fn dbar_family(p: &DbarFamily, _: u64) -> Result<Report, CliError> {
    Ok(family_report(p.s, &PolarGrid::new(p.nr, p.ntheta)?, p.section)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DbarSigma {
    s_values: Vec<f64>,
    samples: usize,
    tol: f64,
}

impl Default for DbarSigma {
    fn default() -> Self {
        DbarSigma { s_values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99], samples: 2048, tol: 1e-6 }
    }
}

fn dbar_sigma(p: &DbarSigma, _: u64) -> Result<Report, CliError> {
    let mut curve = Curve::new(&["s", "sigma_re", "sigma_im", "boundary_radius"]);
    let (mut sigma_err, mut modulus, mut above): (f64, f64, f64) = (0.0, 0.0, f64::NEG_INFINITY);
    for &s in &p.s_values {
        let (sigma, rmax) = boundary_sigma(&DiscMap::family(s)?, p.samples)?;
        curve.push(&[s, sigma.re, sigma.im, rmax]);
        sigma_err = sigma_err.max((sigma - s).norm());
        modulus = modulus.max(boundary_modulus_defect(s, 64)?);
        above = above.max(sigma.norm() - 1.0);
    }
    let mut rep = report();
    rep.curve("sigma", curve);
    rep.check_le("sigma_equals_s", sigma_err, p.tol);
    rep.check_le("boundary_on_circle", modulus, 1e-9);
    rep.check_le("sigma_within_unit_disc", above, 0.0);
    Ok(rep)
}

// ---- morse ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MorseParams {
    surface: String,
    function: String,
    a: f64,
    seeds_per_axis: usize,
    offset: f64,
    fan: usize,
    dt: f64,
    time_budget: f64,
    level_radius: f64,
    metric_amp: f64,
    metric_seed: u64,
}

impl Default for MorseParams {
    fn default() -> Self {
        let o = MorseOptions::default();
        MorseParams {
            surface: "torus2".into(),
            function: "tilted_height".into(),
            a: 0.5,
            seeds_per_axis: o.seeds_per_axis,
            offset: o.offset,
            fan: o.fan,
            dt: o.dt,
            time_budget: o.time_budget,
            level_radius: o.level_radius,
            metric_amp: o.metric_amp,
            metric_seed: o.metric_seed,
        }
    }
}

fn morse_homology(p: &MorseParams, _: u64) -> Result<Report, CliError> {
    let m = ManifoldSpec::from_name(&p.surface)?;
    let f = morse_function(&m, &p.function, p.a)?;
    let o = MorseOptions {
        seeds_per_axis: p.seeds_per_axis,
        offset: p.offset,
        fan: p.fan,
        dt: p.dt,
        time_budget: p.time_budget,
        level_radius: p.level_radius,
        metric_amp: p.metric_amp,
        metric_seed: p.metric_seed,
    };
    Ok(morse_homology_report(&f, &o)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_ids_are_unique_and_resolvable() {
        let reg = registry();
        assert!(reg.len() >= 16);
        let mut ids: Vec<&str> = reg.iter().map(|e| e.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), reg.len());
        for e in &reg {
            assert_eq!(find(&reg, Some(e.module), e.name).map(|x| x.id), Some(e.id));
            assert_eq!(find(&reg, None, e.id).map(|x| x.id), Some(e.id));
        }
        assert_eq!(find(&reg, Some("geodesic"), "second-variation").map(|x| x.id), Some("second-variation"));
        assert!(find(&reg, Some("flux"), "nope").is_none());
    }

    #[test]
    fn defaults_resolve_and_unknown_params_are_rejected() {
        for e in registry() {
            let mut m = Map::new();
            m.insert("no_such_param".into(), json!(1));
            let err = e.run(&m, 0).err().expect("unknown key accepted");
            assert_eq!(err.exit_code(), 2, "{}", e.id);
        }
    }

    #[test]
    fn cheap_experiments_pass() {
        let reg = registry();
        for id in ["square-energy", "conjugate-scan", "flux-path", "gamma-split", "liouville-pairing", "dbar-sigma"] {
            let (rep, resolved) = find(&reg, None, id).unwrap().run(&Map::new(), 0).unwrap();
            assert!(rep.all_passed(), "{id}: {:?}", rep.verdicts);
            assert!(resolved.is_object());
        }
    }
}

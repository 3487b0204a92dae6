//! Ground-truth drifts: compositions `f = g_q ∘ ⋯ ∘ g_0` of coordinate-sparse
//! smooth maps, confined into an ergodic drift
//!
//! ```text
//! b(x) = f(x) e_i − r (x/|x|) ψ(|x|)
//! ```
//!
//! plus numeric validators for class membership.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{in_unit_cube, ScalarField};
use crate::rng;
use crate::sde_sim::{Diffusion, SdeModel, VectorField};

/// Parameters `(q, d, t, β, K)` of a composition smoothness class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub q: usize,
    /// `(d_0, …, d_{q+1})` with `d_{q+1} = 1`.
    pub dims: Vec<usize>,
    /// `(t_0, …, t_q)`.
    pub active: Vec<usize>,
    /// `(β_0, …, β_q)`.
    pub smooth: Vec<f64>,
    pub holder_k: f64,
}

impl ClassParams {
    /// Single smooth map of `t` coordinates out of `d`.
    pub fn single(d: usize, t: usize, beta: f64, k: f64) -> Self {
        Self {
            q: 0,
            dims: vec![d, 1],
            active: vec![t],
            smooth: vec![beta],
            holder_k: k,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q;
        if self.dims.len() != q + 2 || self.active.len() != q + 1 || self.smooth.len() != q + 1 {
            return Err(Error::ClassViolation(format!(
                "q = {q} needs {} dims, {} active counts and {} smoothness values",
                q + 2,
                q + 1,
                q + 1
            )));
        }
        if self.dims[q + 1] != 1 {
            return Err(Error::ClassViolation("last dimension d_{q+1} must be 1".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::ClassViolation("dimensions must be positive".into()));
        }
        for (i, (&t, &d)) in self.active.iter().zip(&self.dims).enumerate() {
            if t == 0 || t > d {
                return Err(Error::ClassViolation(format!(
                    "t_{i} = {t} must lie in 1..=d_{i} = {d}"
                )));
            }
        }
        if self.smooth.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::ClassViolation("smoothness values must be positive".into()));
        }
        if !(self.holder_k > 0.0) {
            return Err(Error::ClassViolation("K must be positive".into()));
        }
        Ok(())
    }
}

/// One coordinate map `g_{ij}`; it only ever sees the inputs listed in
/// `inputs`, in that order.
#[derive(Clone)]
pub struct Component {
    pub inputs: Vec<usize>,
    pub map: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Component {
    pub fn new(inputs: Vec<usize>, map: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            inputs,
            map: Arc::new(map),
        }
    }

    fn eval(&self, u: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend(self.inputs.iter().map(|&j| u[j]));
        (self.map)(scratch)
    }
}

/// Layer `g_i` together with its input domain `[l_i, u_i]`.
#[derive(Clone)]
pub struct CompositionLayer {
    pub components: Vec<Component>,
    pub domain: (f64, f64),
}

#[derive(Clone)]
pub enum Recipe {
    /// `q = 1`: `g_{0j}(x) = p(x_j)`, `g_1(u) = Σ_{j < t_1} u_j`.
    Additive { coefficients: Option<Vec<f64>> },
    /// `q = 1`: `g_{0j}(x) = s_j(x_j)` with random uniform cubic B-splines
    /// valued in `[0, 1]`, `g_1(u) = Π_{j < t_1} u_j`.
    ProductOfSplines { segments: usize },
    /// `q = 0`: `g_0(x) = Σ_{j ∈ S} p(x_j)` over `t_0` seed-chosen coordinates.
    SingleLayerPolynomial { coefficients: Option<Vec<f64>> },
    /// Caller-supplied layers, outermost last.
    Custom(Vec<Vec<Component>>),
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Additive { .. } => "additive",
            Recipe::ProductOfSplines { .. } => "product-of-splines",
            Recipe::SingleLayerPolynomial { .. } => "single-layer-polynomial",
            Recipe::Custom(_) => "custom-closure",
        }
    }
}

/// Preset names addressable from configuration files.
pub const RECIPE_NAMES: [&str; 3] = ["additive", "product-of-splines", "single-layer-polynomial"];

/// A built composition function, zero outside `[0, 1]^d`.
#[derive(Clone)]
pub struct CompositionSpec {
    pub params: ClassParams,
    pub layers: Vec<CompositionLayer>,
    /// Probed range `[l_{q+1}, u_{q+1}]` of the final output.
    pub output_range: (f64, f64),
}

impl CompositionSpec {
    fn propagate(&self, x: &[f64]) -> f64 {
        let mut u = x.to_vec();
        let mut next = Vec::new();
        let mut scratch = Vec::new();
        for layer in &self.layers {
            next.clear();
            next.extend(layer.components.iter().map(|c| c.eval(&u, &mut scratch)));
            std::mem::swap(&mut u, &mut next);
        }
        u[0]
    }
}

impl ScalarField for CompositionSpec {
    fn value(&self, x: &[f64]) -> f64 {
        if x.len() != self.params.input_dim() || !in_unit_cube(x) {
            return 0.0;
        }
        self.propagate(x)
    }
}

fn polynomial(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn random_polynomial(rng: &mut rng::Rng, degree: usize, scale: f64) -> Vec<f64> {
    let mut c: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let total: f64 = c.iter().map(|v: &f64| v.abs()).sum();
    if total > 0.0 {
        for v in c.iter_mut() {
            *v *= scale / total;
        }
    }
    c
}

/// Uniform cubic B-spline on `[0, 1]` with `coefficients.len() - 3` segments.
fn cubic_bspline(coefficients: &[f64], x: f64) -> f64 {
    let segments = coefficients.len() - 3;
    let pos = x.clamp(0.0, 1.0) * segments as f64;
    let i = (pos.floor() as usize).min(segments - 1);
    let t = pos - i as f64;
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ];
    (0..4).map(|k| w[k] * coefficients[i + k]).sum()
}

/// Seeded stratified points in `[0, 1]^d` plus the cube corners (for
/// `d ≤ 10`).
pub fn cube_probe(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::side_stream(seed, 7);
    let mut pts: Vec<Vec<f64>> = (0..count)
        .map(|k| {
            (0..d)
                .map(|j| {
                    if j == 0 {
                        (k as f64 + rng.random::<f64>()) / count as f64
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    if d <= 10 {
        for mask in 0..(1usize << d) {
            pts.push((0..d).map(|j| ((mask >> j) & 1) as f64).collect());
        }
    }
    pts
}

/// Builds `f = g_q ∘ ⋯ ∘ g_0` from a preset, checks structural sparsity and
/// records per-layer ranges measured on a probe of `[0, 1]^d`.
pub fn build_composition(params: &ClassParams, recipe: &Recipe, seed: u64) -> Result<CompositionSpec> {
    params.validate()?;
    let d = params.input_dim();
    let mut rng = rng::rng_from_seed(seed);
    let mismatch = |what: &str| {
        Error::ClassViolation(format!("recipe {} requires {what}", recipe.name()))
    };

    let raw_layers: Vec<Vec<Component>> = match recipe {
        Recipe::SingleLayerPolynomial { coefficients } => {
            if params.q != 0 {
                return Err(mismatch("q = 0"));
            }
            let t0 = params.active[0];
            let coeffs = coefficients.clone().unwrap_or_else(|| {
                random_polynomial(&mut rng, 3, params.holder_k.min(1.0) / t0 as f64)
            });
            let mut coords: Vec<usize> = (0..d).collect();
            for i in 0..t0 {
                let j = rng.random_range(i..d);
                coords.swap(i, j);
            }
            let mut chosen = coords[..t0].to_vec();
            chosen.sort_unstable();
            vec![vec![Component::new(chosen, move |u: &[f64]| {
                u.iter().map(|&v| polynomial(&coeffs, v)).sum()
            })]]
        }
        Recipe::Additive { coefficients } => {
            if params.q != 1 || params.dims[1] > d {
                return Err(mismatch("q = 1 and d_1 ≤ d"));
            }
            let d1 = params.dims[1];
            let t1 = params.active[1];
            let inner: Vec<Component> = (0..d1)
                .map(|j| {
                    let c = coefficients.clone().unwrap_or_else(|| {
                        random_polynomial(&mut rng, 3, params.holder_k.min(1.0) / t1 as f64)
                    });
                    Component::new(vec![j], move |u: &[f64]| polynomial(&c, u[0]))
                })
                .collect();
            let outer = Component::new((0..t1).collect(), |u: &[f64]| u.iter().sum());
            vec![inner, vec![outer]]
        }
        Recipe::ProductOfSplines { segments } => {
            if params.q != 1 || params.dims[1] > d || *segments == 0 {
                return Err(mismatch("q = 1, d_1 ≤ d and at least one segment"));
            }
            let d1 = params.dims[1];
            let t1 = params.active[1];
            let inner: Vec<Component> = (0..d1)
                .map(|j| {
                    let c: Vec<f64> = (0..segments + 3).map(|_| rng.random::<f64>()).collect();
                    Component::new(vec![j], move |u: &[f64]| cubic_bspline(&c, u[0]))
                })
                .collect();
            let outer = Component::new((0..t1).collect(), |u: &[f64]| u.iter().product());
            vec![inner, vec![outer]]
        }
        Recipe::Custom(layers) => layers.clone(),
    };

    if raw_layers.len() != params.q + 1 {
        return Err(Error::ClassViolation(format!(
            "expected {} layers, recipe produced {}",
            params.q + 1,
            raw_layers.len()
        )));
    }
    for (i, layer) in raw_layers.iter().enumerate() {
        if layer.len() != params.dims[i + 1] {
            return Err(Error::ClassViolation(format!(
                "layer {i} has {} components, d_{} = {}",
                layer.len(),
                i + 1,
                params.dims[i + 1]
            )));
        }
        for (j, c) in layer.iter().enumerate() {
            if c.inputs.len() > params.active[i] {
                return Err(Error::ClassViolation(format!(
                    "g_{i}{j} reads {} coordinates, t_{i} = {}",
                    c.inputs.len(),
                    params.active[i]
                )));
            }
            if c.inputs.iter().any(|&k| k >= params.dims[i]) {
                return Err(Error::ClassViolation(format!(
                    "g_{i}{j} reads a coordinate outside 0..{}",
                    params.dims[i]
                )));
            }
        }
    }

    // Measure the ranges [l_i, u_i] layer by layer on a probe of the cube.
    let mut values = cube_probe(d, 1024, seed);
    let mut layers = Vec::with_capacity(raw_layers.len());
    let mut domain = (0.0, 1.0);
    let mut scratch = Vec::new();
    for (i, comps) in raw_layers.into_iter().enumerate() {
        let next: Vec<Vec<f64>> = values
            .iter()
            .map(|u| comps.iter().map(|c| c.eval(u, &mut scratch)).collect())
            .collect();
        let lo = next.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let hi = next.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) || lo.abs() > params.holder_k || hi.abs() > params.holder_k {
            return Err(Error::ClassViolation(format!(
                "layer {i} output range [{lo}, {hi}] exceeds K = {}",
                params.holder_k
            )));
        }
        layers.push(CompositionLayer {
            components: comps,
            domain,
        });
        domain = (lo, hi);
        values = next;
    }

    Ok(CompositionSpec {
        params: params.clone(),
        layers,
        output_range: domain,
    })
}

/// Smooth radial cutoff: 0 on `u ≤ d`, 1 on `u ≥ 2d`, quintic smoothstep in
/// between. Lipschitz constant `15 / (8d)`.
pub fn cutoff(u: f64, d: usize) -> f64 {
    let d = d as f64;
    let v = ((u - d) / d).clamp(0.0, 1.0);
    v * v * v * (v * (6.0 * v - 15.0) + 10.0)
}

/// `b(x) = f(x) e_i − r (x/|x|) ψ(|x|)`, `b(0) = f(0) e_i`.
#[derive(Clone)]
pub struct ConfinedDrift {
    inner: Arc<dyn ScalarField>,
    dim: usize,
    coord: usize,
    radial_rate: f64,
}

impl ConfinedDrift {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 1-based.
    pub fn coord(&self) -> usize {
        self.coord
    }

    pub fn radial_rate(&self) -> f64 {
        self.radial_rate
    }

    /// The regression target `b^i · 1_{[0,1]^d}`, which is `f` itself.
    pub fn target(&self) -> Arc<dyn ScalarField> {
        self.inner.clone()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let psi = cutoff(norm, self.dim);
        if norm > 0.0 && psi > 0.0 {
            let w = self.radial_rate * psi / norm;
            for (o, v) in out.iter_mut().zip(x) {
                *o = -w * v;
            }
        } else {
            out.fill(0.0);
        }
        out[self.coord - 1] += self.inner.value(x);
    }

    pub fn vector_field(&self) -> VectorField {
        let me = self.clone();
        Arc::new(move |x: &[f64], out: &mut [f64]| me.eval(x, out))
    }

    /// Model with unit diffusion `Σ = I`.
    pub fn into_model(self) -> SdeModel {
        let d = self.dim;
        SdeModel::new(d, self.vector_field(), Diffusion::Scalar(1.0))
    }
}

/// Confines a cube-supported `f` into an inward-pulling drift. The function
/// is restricted to `[0, 1]^d` before use, so `supp(f) ⊂ [0, 1]^d` holds by
/// construction.
pub fn confine_drift(
    f: Arc<dyn ScalarField>,
    dim: usize,
    coord: usize,
    radial_rate: f64,
) -> Result<ConfinedDrift> {
    if coord == 0 || coord > dim {
        return Err(Error::Index { index: coord, dim });
    }
    if !(radial_rate > 0.0 && radial_rate <= 1.0) {
        return Err(Error::Domain(format!(
            "radial rate r = {radial_rate} must lie in (0, 1]"
        )));
    }
    let restricted: Arc<dyn ScalarField> = Arc::new(move |x: &[f64]| {
        if in_unit_cube(x) {
            f.value(x)
        } else {
            0.0
        }
    });
    Ok(ConfinedDrift {
        inner: restricted,
        dim,
        coord,
        radial_rate,
    })
}

/// Deterministic probe of `R^d` used by the drift validators.
#[derive(Debug, Clone)]
pub struct ShellProbe {
    /// Points on the shell `(inner, outer]`, and as many again inside the
    /// ball of radius `outer`.
    pub count: usize,
    /// Defaults to `2d`.
    pub inner: Option<f64>,
    /// Defaults to `10d`.
    pub outer: Option<f64>,
    pub seed: u64,
}

impl Default for ShellProbe {
    fn default() -> Self {
        Self {
            count: 1000,
            inner: None,
            outer: None,
            seed: 0,
        }
    }
}

impl ShellProbe {
    fn radii(&self, d: usize) -> (f64, f64) {
        let inner = self.inner.unwrap_or(2.0 * d as f64);
        let outer = self.outer.unwrap_or(10.0 * d as f64).max(inner);
        (inner, outer)
    }

    fn direction(rng: &mut rng::Rng, d: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|a| a / n).collect();
            }
        }
    }

    /// Points with `inner < |x| ≤ outer`, radii stratified.
    pub fn shell(&self, d: usize) -> Vec<Vec<f64>> {
        let (inner, outer) = self.radii(d);
        let mut rng = rng::side_stream(self.seed, 11);
        (0..self.count)
            .map(|k| {
                let u = 1.0 - rng.random::<f64>();
                let radius = inner + (outer - inner) * (k as f64 + u) / self.count as f64;
                let dir = Self::direction(&mut rng, d);
                dir.into_iter().map(|a| a * radius).collect()
            })
            .collect()
    }

    /// Points with `0 < |x| ≤ outer`, together with the shell and a probe of
    /// the unit cube.
    pub fn everywhere(&self, d: usize) -> Vec<Vec<f64>> {
        let (_, outer) = self.radii(d);
        let mut rng = rng::side_stream(self.seed, 13);
        let mut pts: Vec<Vec<f64>> = (0..self.count)
            .map(|k| {
                let u = 1.0 - rng.random::<f64>();
                let radius = outer * (k as f64 + u) / self.count as f64;
                let dir = Self::direction(&mut rng, d);
                dir.into_iter().map(|a| a * radius).collect()
            })
            .collect();
        pts.extend(self.shell(d));
        pts.extend(cube_probe(d, self.count.min(1024), self.seed));
        pts.retain(|p| p.iter().any(|&v| v != 0.0));
        pts
    }
}

/// One numerically probed inequality; `worst_margin ≤ tolerance` passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

fn worst_over(
    name: &'static str,
    points: &[Vec<f64>],
    margin: impl Fn(&[f64]) -> f64,
) -> ConditionCheck {
    let margins: Vec<f64> = points.iter().map(|p| margin(p)).collect();
    pick_worst(name, points, &margins)
}

pub const VALIDATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct B0Report {
    /// `max ⟨b(x), x⟩ + r|x|` over `|x| > 2d`.
    pub radial: ConditionCheck,
    /// `max |b(x)|_∞ − K`.
    pub bounded: ConditionCheck,
    pub pass: bool,
}

/// Probes `⟨b(x), x⟩ ≤ −r|x|` on `|x| > 2d` and `sup |b|_∞ ≤ K`.
pub fn validate_b0(
    b: &dyn Fn(&[f64], &mut [f64]),
    d: usize,
    r: f64,
    k: f64,
    probe: &ShellProbe,
) -> B0Report {
    let probe = ShellProbe {
        inner: Some(2.0 * d as f64),
        ..probe.clone()
    };
    let mut out = vec![0.0; d];
    let mut eval = |x: &[f64]| -> Vec<f64> {
        b(x, &mut out);
        out.clone()
    };
    let shell = probe.shell(d);
    let radial_margins: Vec<f64> = shell
        .iter()
        .map(|x| {
            let bx = eval(x);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            bx.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + r * norm
        })
        .collect();
    let everywhere = probe.everywhere(d);
    let sup_margins: Vec<f64> = everywhere
        .iter()
        .map(|x| eval(x).iter().fold(0.0f64, |m, v| m.max(v.abs())) - k)
        .collect();
    let radial = pick_worst("radial pull", &shell, &radial_margins);
    let bounded = pick_worst("sup bound", &everywhere, &sup_margins);
    B0Report {
        pass: radial.pass && bounded.pass,
        radial,
        bounded,
    }
}

fn pick_worst(name: &'static str, points: &[Vec<f64>], margins: &[f64]) -> ConditionCheck {
    let (mut worst, mut at) = (f64::NEG_INFINITY, 0);
    for (i, &m) in margins.iter().enumerate() {
        let m = if m.is_nan() { f64::INFINITY } else { m };
        if m > worst {
            worst = m;
            at = i;
        }
    }
    ConditionCheck {
        name,
        worst_margin: worst,
        worst_point: points.get(at).cloned().unwrap_or_default(),
        pass: worst <= VALIDATION_TOLERANCE,
    }
}

#[derive(Debug, Clone)]
pub struct ErgodicityReport {
    pub m0: f64,
    /// `⟨b(x), x⟩ ≤ −r|x|^α` for `|x| > M_0`, margin normalised by `|x|`.
    pub radial: ConditionCheck,
    /// `λ_− |x|² ≤ |Σ(x)ᵀx|²`, margin normalised by `|x|²`.
    pub diffusion_lower: ConditionCheck,
    /// `|Σ(x)ᵀx|² ≤ λ_+ |x|²`, margin normalised by `|x|²`.
    pub diffusion_upper: ConditionCheck,
    pub pass: bool,
}

/// Numeric check of the drift-pull and diffusion-ellipticity conditions that
/// imply exponential ergodicity. `probe.inner` is `M_0` (default `2d`).
pub fn validate_ergodicity(
    model: &SdeModel,
    r: f64,
    alpha: f64,
    lambda_minus: f64,
    lambda_plus: f64,
    probe: &ShellProbe,
) -> ErgodicityReport {
    let d = model.dim();
    let (m0, _) = probe.radii(d);
    let shell = probe.shell(d);
    let radial = worst_over("drift pull", &shell, |x| {
        let bx = model.drift_at(x);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        (bx.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + r * norm.powf(alpha)) / norm
    });
    let everywhere = probe.everywhere(d);
    let ratio = |x: &[f64]| -> f64 {
        let s = model.diffusion_at(x);
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        // (Σᵀx)_j = Σ_i Σ_{ij} x_i
        let st_x2: f64 = (0..d)
            .map(|j| (0..d).map(|i| s[i * d + j] * x[i]).sum::<f64>().powi(2))
            .sum();
        st_x2 / norm2
    };
    let diffusion_lower = worst_over("diffusion lower", &everywhere, |x| {
        lambda_minus - ratio(x)
    });
    let diffusion_upper = worst_over("diffusion upper", &everywhere, |x| {
        ratio(x) - lambda_plus
    });
    let positive = lambda_minus > 0.0 && lambda_plus > 0.0 && r > 0.0 && alpha >= 1.0;
    ErgodicityReport {
        m0,
        pass: positive && radial.pass && diffusion_lower.pass && diffusion_upper.pass,
        radial,
        diffusion_lower,
        diffusion_upper,
    }
}

/// Numeric lower bound on the Hölder-ball constant of `g` on `[l, u]^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderEstimate {
    pub value: f64,
    pub unbounded: bool,
    pub points: usize,
}

/// Finite-difference step for derivative estimates.
pub const FD_STEP: f64 = 1e-4;

fn multi_indices(t: usize, order: usize) -> Vec<Vec<usize>> {
    if t == 0 {
        return if order == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 0..=order {
        for mut rest in multi_indices(t - 1, order - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn partial(g: &dyn Fn(&[f64]) -> f64, x: &mut Vec<f64>, alpha: &mut [usize]) -> f64 {
    match alpha.iter().position(|&a| a > 0) {
        None => g(x),
        Some(j) => {
            alpha[j] -= 1;
            let orig = x[j];
            x[j] = orig + FD_STEP;
            let plus = partial(g, x, alpha);
            x[j] = orig - FD_STEP;
            let minus = partial(g, x, alpha);
            x[j] = orig;
            alpha[j] += 1;
            (plus - minus) / (2.0 * FD_STEP)
        }
    }
}

/// Estimates
///
/// ```text
/// Σ_{|α| < β} ‖∂^α g‖_∞ + Σ_{|α| = k} sup_{x≠y} |∂^α g(x) − ∂^α g(y)| / |x − y|_∞^γ
/// ```
///
/// with `k = ⌊β⌋, γ = β − ⌊β⌋` for non-integer `β`, and `k = β − 1, γ = 1`
/// for integer `β`. Derivatives are nested central differences with step
/// [`FD_STEP`], so `g` must be defined on a `k·FD_STEP` neighbourhood of the
/// domain. The probe is the dyadic lattice with `2^level + 1` points per
/// axis; lattices are nested, so the estimate is nondecreasing in `level`.
pub fn holder_constant_estimate(
    g: &dyn Fn(&[f64]) -> f64,
    beta: f64,
    t: usize,
    domain: (f64, f64),
    level: u32,
) -> Result<HolderEstimate> {
    if !(beta > 0.0) || t == 0 {
        return Err(Error::Domain("β must be positive and t ≥ 1".into()));
    }
    let (lo, hi) = domain;
    let per_axis = (1usize << level) + 1;
    let total = per_axis.pow(t as u32);
    let grid: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            (0..t)
                .map(|_| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    lo + (hi - lo) * k as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect();

    let integer = beta.fract() == 0.0;
    let (quot_order, gamma) = if integer {
        (beta as usize - 1, 1.0)
    } else {
        (beta.floor() as usize, beta.fract())
    };
    let max_sum_order = if integer { beta as usize - 1 } else { beta.floor() as usize };

    let derivs = |order: usize| -> Vec<Vec<f64>> {
        multi_indices(t, order)
            .into_iter()
            .map(|mut alpha| {
                grid.iter()
                    .map(|p| partial(g, &mut p.clone(), &mut alpha))
                    .collect()
            })
            .collect()
    };

    let mut value = 0.0;
    let mut unbounded = false;
    for order in 0..=max_sum_order {
        for vals in derivs(order) {
            let sup = vals.iter().fold(0.0f64, |m, v| {
                if v.is_finite() {
                    m.max(v.abs())
                } else {
                    f64::INFINITY
                }
            });
            unbounded |= !sup.is_finite();
            value += sup;
        }
    }
    for vals in derivs(quot_order) {
        let mut sup: f64 = 0.0;
        for i in 0..grid.len() {
            for j in (i + 1)..grid.len() {
                let dist = grid[i]
                    .iter()
                    .zip(&grid[j])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let q = (vals[i] - vals[j]).abs() / dist.powf(gamma);
                sup = if q.is_finite() { sup.max(q) } else { f64::INFINITY };
            }
        }
        unbounded |= !sup.is_finite();
        value += sup;
    }
    Ok(HolderEstimate {
        value,
        unbounded,
        points: grid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_params_reject_wide_active_sets() {
        let mut p = ClassParams::single(2, 2, 1.0, 1.0);
        assert!(p.validate().is_ok());
        p.active = vec![3];
        assert!(matches!(p.validate(), Err(Error::ClassViolation(_))));
    }

    #[test]
    fn zero_polynomial_is_zero() {
        let p = ClassParams::single(1, 1, 1.0, 1.0);
        let f = build_composition(&p, &Recipe::SingleLayerPolynomial { coefficients: Some(vec![0.0]) }, 0).unwrap();
        for x in [0.0, 0.3, 1.0, 2.0] {
            assert_eq!(f.value(&[x]), 0.0);
        }
    }

    #[test]
    fn square_polynomial_and_support() {
        let p = ClassParams::single(1, 1, 2.0, 1.0);
        let f = build_composition(&p, &Recipe::SingleLayerPolynomial { coefficients: Some(vec![0.0, 0.0, 1.0]) }, 0).unwrap();
        assert!((f.value(&[0.5]) - 0.25).abs() < 1e-15);
        assert_eq!(f.value(&[1.5]), 0.0);
        assert_eq!(f.value(&[-0.1]), 0.0);
    }

    #[test]
    fn additive_composition() {
        let p = ClassParams {
            q: 1,
            dims: vec![2, 2, 1],
            active: vec![1, 2],
            smooth: vec![2.0, 1.0],
            holder_k: 2.0,
        };
        let f = build_composition(&p, &Recipe::Additive { coefficients: Some(vec![0.0, 0.0, 0.5]) }, 3).unwrap();
        assert!((f.value(&[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((f.value(&[0.5, 0.0]) - 0.125).abs() < 1e-15);
        assert_eq!(f.value(&[1.0, 1.01]), 0.0);
    }

    #[test]
    fn splines_stay_in_unit_interval_and_are_seeded() {
        let p = ClassParams {
            q: 1,
            dims: vec![3, 3, 1],
            active: vec![1, 2],
            smooth: vec![3.0, 2.0],
            holder_k: 1.0,
        };
        let a = build_composition(&p, &Recipe::ProductOfSplines { segments: 4 }, 9).unwrap();
        let b = build_composition(&p, &Recipe::ProductOfSplines { segments: 4 }, 9).unwrap();
        for x in cube_probe(3, 64, 1) {
            let v = a.value(&x);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, b.value(&x));
        }
    }

    #[test]
    fn range_above_k_is_rejected() {
        let p = ClassParams::single(1, 1, 1.0, 0.5);
        let err = build_composition(&p, &Recipe::SingleLayerPolynomial { coefficients: Some(vec![0.0, 1.0]) }, 0);
        assert!(matches!(err, Err(Error::ClassViolation(_))));
    }

    #[test]
    fn custom_component_reading_too_many_coordinates_is_rejected() {
        let p = ClassParams::single(2, 1, 1.0, 5.0);
        let layers = vec![vec![Component::new(vec![0, 1], |u: &[f64]| u[0] + u[1])]];
        assert!(matches!(
            build_composition(&p, &Recipe::Custom(layers), 0),
            Err(Error::ClassViolation(_))
        ));
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.5, 1), 0.0);
        assert_eq!(cutoff(1.0, 1), 0.0);
        assert_eq!(cutoff(2.0, 1), 1.0);
        assert_eq!(cutoff(7.0, 3), 1.0);
        assert!((cutoff(1.5, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn confined_drift_hand_values() {
        let zero: Arc<dyn ScalarField> = Arc::new(|_: &[f64]| 0.0);
        let b = confine_drift(zero, 1, 1, 1.0).unwrap();
        let mut out = [0.0];
        b.eval(&[3.0], &mut out);
        assert_eq!(out, [-1.0]);

        let f: Arc<dyn ScalarField> = Arc::new(|x: &[f64]| x[0] + x[1]);
        let b = confine_drift(f, 2, 2, 0.5).unwrap();
        let mut out = [0.0; 2];
        b.eval(&[0.3, 0.4], &mut out);
        assert_eq!(out, [0.0, 0.7]);
        b.eval(&[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        assert!(confine_drift(Arc::new(|_: &[f64]| 0.0), 2, 3, 0.5).is_err());
        assert!(confine_drift(Arc::new(|_: &[f64]| 0.0), 2, 1, 1.5).is_err());
    }

    #[test]
    fn holder_examples() {
        let c = holder_constant_estimate(&|_: &[f64]| -0.7, 0.5, 1, (0.0, 1.0), 5).unwrap();
        assert!((c.value - 0.7).abs() < 1e-12);
        let c = holder_constant_estimate(&|_: &[f64]| 2.0, 1.0, 1, (0.0, 1.0), 5).unwrap();
        assert!((c.value - 2.0).abs() < 1e-12);
        let lin = holder_constant_estimate(&|x: &[f64]| x[0], 1.0, 1, (0.0, 1.0), 6).unwrap();
        assert!((lin.value - 2.0).abs() < 1e-6, "{lin:?}");
        let sq = holder_constant_estimate(&|x: &[f64]| x[0] * x[0], 2.0, 1, (0.0, 1.0), 6).unwrap();
        assert!((sq.value - 5.0).abs() < 1e-4, "{sq:?}");
        assert!(sq.value <= 5.0 + 1e-6);
    }

    #[test]
    fn holder_estimate_is_monotone_in_level() {
        let g = |x: &[f64]| (3.0 * x[0]).sin() * x[1].sqrt().max(0.0);
        let mut prev = 0.0;
        for level in 1..5 {
            let e = holder_constant_estimate(&g, 0.5, 2, (0.0, 1.0), level).unwrap();
            assert!(e.value >= prev);
            prev = e.value;
        }
    }

    #[test]
    fn holder_flags_non_finite() {
        let g = |x: &[f64]| 1.0 / x[0];
        let e = holder_constant_estimate(&g, 0.5, 1, (0.0, 1.0), 3).unwrap();
        assert!(e.unbounded);
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(1, 0), vec![vec![0]]);
    }
    #[test]
    fn confined_drift_passes_b0_and_designed_failures_fail() {
        let p = ClassParams::single(1, 1, 2.0, 1.0);
        let f = build_composition(&p, &Recipe::SingleLayerPolynomial { coefficients: Some(vec![0.0, 0.0, 1.0]) }, 0).unwrap();
        let b = confine_drift(Arc::new(f), 1, 1, 0.5).unwrap();
        let probe = ShellProbe::default();
        let report = validate_b0(&|x: &[f64], out: &mut [f64]| b.eval(x, out), 1, 0.5, 1.5, &probe);
        assert!(report.pass, "{report:?}");
        assert!(report.radial.worst_margin.abs() < 1e-9);

        let repelling = validate_b0(&|x: &[f64], out: &mut [f64]| out.copy_from_slice(x), 2, 0.5, 100.0, &probe);
        assert!(!repelling.radial.pass && repelling.radial.worst_margin > 0.0);
        let zero = validate_b0(&|_: &[f64], out: &mut [f64]| out.fill(0.0), 2, 0.5, 1.0, &probe);
        assert!(!zero.radial.pass && zero.bounded.pass);
    }

    #[test]
    fn ergodicity_examples() {
        let probe = ShellProbe::default();
        let ou = SdeModel::ornstein_uhlenbeck(2, 1.0, 1.0);
        let r = validate_ergodicity(&ou, 1.0, 1.0, 1.0, 1.0, &probe);
        assert!(r.pass, "{r:?}");
        assert_eq!(r.m0, 4.0);

        let frozen = SdeModel::new(2, ou.drift_field(), Diffusion::Zero);
        let r = validate_ergodicity(&frozen, 1.0, 1.0, 1.0, 1.0, &probe);
        assert!(!r.pass && !r.diffusion_lower.pass && r.radial.pass);

        let driftless = SdeModel::new(2, Arc::new(|_: &[f64], b: &mut [f64]| b.fill(0.0)), Diffusion::Scalar(1.0));
        let r = validate_ergodicity(&driftless, 1.0, 1.0, 1.0, 1.0, &probe);
        assert!(!r.pass && !r.radial.pass && r.diffusion_lower.pass);
    }
}

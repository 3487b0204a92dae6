//! Euler–Maruyama simulation of `dX_t = b(X_t) dt + Σ(X_t) dw_t`.
//!
//! The process is integrated with `m` micro-steps of size `h = Δ/m` per
//! observation interval:
//!
//! ```text
//! x ← x + b(x) h + Σ(x) √h ξ,   ξ ~ N(0, I_d)
//! ```
//!
//! and only every `m`-th state is recorded. Paths are pure functions of the
//! arguments and the seed.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Drift (or any vector field): writes `b(x)` into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Matrix field: writes `Σ(x)` row-major (d × d) into `out`.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Abort threshold on `|x|`.
pub const EXPLOSION_NORM: f64 = 1e6;

/// Default integrator micro-steps per observation interval.
pub const DEFAULT_SUBSTEPS: usize = 50;

#[derive(Clone)]
pub enum Diffusion {
    Zero,
    /// `Σ(x) = σ I`.
    Scalar(f64),
    Matrix(MatrixField),
}

impl Diffusion {
    fn write_matrix(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        match self {
            Diffusion::Zero => out.fill(0.0),
            Diffusion::Scalar(s) => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = *s;
                }
            }
            Diffusion::Matrix(f) => f(x, out),
        }
    }
}

impl std::fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diffusion::Zero => write!(f, "Zero"),
            Diffusion::Scalar(s) => write!(f, "Scalar({s})"),
            Diffusion::Matrix(_) => write!(f, "Matrix(<fn>)"),
        }
    }
}

/// A diffusion model with its coefficient functions.
#[derive(Clone)]
pub struct SdeModel {
    dim: usize,
    drift: VectorField,
    diffusion: Diffusion,
    /// `(C_b', C_Σ')`
    pub lipschitz_hint: Option<(f64, f64)>,
    /// `(C_b, C_Σ)`
    pub sup_hint: Option<(f64, f64)>,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("dim", &self.dim)
            .field("diffusion", &self.diffusion)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .field("sup_hint", &self.sup_hint)
            .finish()
    }
}

impl SdeModel {
    pub fn new(dim: usize, drift: VectorField, diffusion: Diffusion) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self {
            dim,
            drift,
            diffusion,
            lipschitz_hint: None,
            sup_hint: None,
        }
    }

    /// `dX = -θ X dt + σ dw` in every coordinate.
    pub fn ornstein_uhlenbeck(dim: usize, theta: f64, sigma: f64) -> Self {
        let drift: VectorField = Arc::new(move |x: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = -theta * v;
            }
        });
        let mut model = Self::new(dim, drift, Diffusion::Scalar(sigma));
        model.lipschitz_hint = Some((theta.abs(), 0.0));
        model
    }

    pub fn with_lipschitz_hint(mut self, drift: f64, diffusion: f64) -> Self {
        self.lipschitz_hint = Some((drift, diffusion));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift_field(&self) -> VectorField {
        self.drift.clone()
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(x, &mut out);
        out
    }

    /// `Σ(x)` row-major.
    pub fn diffusion_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion.write_matrix(x, &mut out);
        out
    }

    /// Probes the coefficient invariants on the given points: finiteness of
    /// `b` and `Σ`, and (when hinted) the drift Lipschitz bound over all
    /// point pairs.
    pub fn check_coefficients(&self, points: &[Vec<f64>]) -> CoefficientReport {
        let drifts: Vec<Vec<f64>> = points.iter().map(|x| self.drift_at(x)).collect();
        let finite = drifts.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && points
                .iter()
                .all(|x| self.diffusion_at(x).iter().all(|v| v.is_finite()));
        let mut worst_quotient: f64 = 0.0;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let dx = euclid(&points[i], &points[j]);
                if dx > 0.0 {
                    worst_quotient = worst_quotient.max(euclid(&drifts[i], &drifts[j]) / dx);
                }
            }
        }
        let lipschitz_ok = self
            .lipschitz_hint
            .map(|(cb, _)| worst_quotient <= cb * (1.0 + 1e-6))
            .unwrap_or(true);
        CoefficientReport {
            finite,
            worst_drift_quotient: worst_quotient,
            lipschitz_ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReport {
    pub finite: bool,
    pub worst_drift_quotient: f64,
    pub lipschitz_ok: bool,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Discrete observations `X_0, X_Δ, …, X_{nΔ}`, row-major `(n+1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPath {
    pub dim: usize,
    pub delta: f64,
    pub seed: u64,
    pub substeps: usize,
    pub obs: Vec<f64>,
}

impl ObservedPath {
    /// Number of observation intervals `n`.
    pub fn n(&self) -> usize {
        self.obs.len() / self.dim - 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.obs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.obs.chunks_exact(self.dim)
    }

    /// `Δ ≤ 1` and `nΔ ≥ 2`.
    pub fn check_estimation_regime(&self) -> Result<()> {
        check_sampling_regime(self.n(), self.delta)
    }

    /// Binary dump: magic `DRFTPATH1`, then little-endian
    /// `d: u64, n: u64, Δ: f64, seed: u64, m: u64`, then the observations as
    /// row-major `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PATH_MAGIC)?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&self.delta.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.substeps as u64).to_le_bytes())?;
        for v in &self.obs {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic != PATH_MAGIC {
            return Err(Error::Format("missing DRFTPATH1 magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let delta = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let substeps = u64::from_le_bytes(next(&mut r)?) as usize;
        if dim == 0 {
            return Err(Error::Format("zero dimension".into()));
        }
        let count = (n + 1)
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("header overflow".into()))?;
        let mut obs = Vec::with_capacity(count);
        for _ in 0..count {
            obs.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self {
            dim,
            delta,
            seed,
            substeps,
            obs,
        })
    }
}

pub const PATH_MAGIC: &[u8; 9] = b"DRFTPATH1";

/// `Δ ≤ 1 and nΔ ≥ 2`.
pub fn check_sampling_regime(n: usize, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Constraint(format!(
            "Δ = {delta} violates Δ ≤ 1 and nΔ ≥ 2"
        )));
    }
    if (n as f64) * delta < 2.0 {
        return Err(Error::Constraint(format!(
            "nΔ = {} violates Δ ≤ 1 and nΔ ≥ 2",
            n as f64 * delta
        )));
    }
    Ok(())
}

/// Simulates `n` observation intervals of length `delta` starting at `x0`.
pub fn simulate_path(
    model: &SdeModel,
    x0: &[f64],
    n: usize,
    delta: f64,
    substeps: usize,
    seed: u64,
) -> Result<ObservedPath> {
    let d = model.dim;
    if x0.len() != d {
        return Err(Error::Shape {
            expected: d,
            got: x0.len(),
        });
    }
    if !(delta > 0.0) || delta.is_nan() {
        return Err(Error::Domain(format!("Δ must be positive, got {delta}")));
    }
    if delta > 1.0 {
        return Err(Error::Constraint(format!(
            "Δ = {delta} violates Δ ≤ 1 and nΔ ≥ 2"
        )));
    }
    if n == 0 || substeps == 0 {
        return Err(Error::Domain("n and substeps must be at least 1".into()));
    }

    let h = delta / substeps as f64;
    let sqrt_h = h.sqrt();
    let mut rng = rng::rng_from_seed(seed);
    let mut obs = Vec::with_capacity((n + 1) * d);
    obs.extend_from_slice(x0);

    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];

    for k in 0..n {
        for j in 0..substeps {
            model.drift_into(&x, &mut b);
            match &model.diffusion {
                Diffusion::Zero => {
                    for i in 0..d {
                        x[i] += b[i] * h;
                    }
                }
                Diffusion::Scalar(s) => {
                    for i in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        x[i] += b[i] * h + s * sqrt_h * z;
                    }
                }
                Diffusion::Matrix(f) => {
                    f(&x, &mut sigma);
                    for z in xi.iter_mut() {
                        *z = rng.sample(StandardNormal);
                    }
                    for i in 0..d {
                        let row = &sigma[i * d..(i + 1) * d];
                        let noise: f64 = row.iter().zip(&xi).map(|(a, z)| a * z).sum();
                        x[i] += b[i] * h + sqrt_h * noise;
                    }
                }
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > EXPLOSION_NORM {
                return Err(Error::Explosion {
                    observation: k + 1,
                    micro_step: k * substeps + j + 1,
                    norm,
                });
            }
        }
        obs.extend_from_slice(&x);
    }

    Ok(ObservedPath {
        dim: d,
        delta,
        seed,
        substeps,
        obs,
    })
}

/// Law of the initial condition `η`.
pub trait InitialLaw: Send + Sync {
    fn sample(&self, dim: usize, rng: &mut Rng) -> Vec<f64>;
}

/// Point mass at a fixed state; the default law is the point mass at 0.
#[derive(Debug, Clone, Default)]
pub struct PointMass(pub Option<Vec<f64>>);

impl InitialLaw for PointMass {
    fn sample(&self, dim: usize, _rng: &mut Rng) -> Vec<f64> {
        self.0.clone().unwrap_or_else(|| vec![0.0; dim])
    }
}

impl<F> InitialLaw for F
where
    F: Fn(usize, &mut Rng) -> Vec<f64> + Send + Sync,
{
    fn sample(&self, dim: usize, rng: &mut Rng) -> Vec<f64> {
        self(dim, rng)
    }
}

/// Seed used for copy `index` of a batch seeded with `seed`.
pub fn copy_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, index as u64)
}

/// `count` independent paths; copy `j` uses seed `seed ⊕ splitmix64(j)` for
/// its noise, and draws its initial state from a side stream of that seed.
pub fn simulate_copies(
    model: &SdeModel,
    init: &dyn InitialLaw,
    n: usize,
    delta: f64,
    substeps: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<ObservedPath>> {
    if count == 0 {
        return Err(Error::Domain("at least one copy is required".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|j| {
            let s = copy_seed(seed, j);
            let x0 = init.sample(model.dim, &mut rng::side_stream(s, 1));
            simulate_path(model, &x0, n, delta, substeps, s)
        })
        .collect()
}

/// Exact mean and variance of the scalar OU process
/// `dX = -θ X dt + σ dw` at time `t` started from `x0`.
pub fn ou_reference_moments(theta: f64, sigma: f64, x0: f64, t: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("θ must be positive, got {theta}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be nonnegative, got {t}")));
    }
    let mean = x0 * (-theta * t).exp();
    let var = sigma * sigma * (-(-2.0 * theta * t).exp_m1()) / (2.0 * theta);
    Ok((mean, var))
}

/// Drift-regression pairs `(X_{kΔ}, Y_{kΔ})` for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    /// 1-based coordinate index.
    pub coord: usize,
    pub dim: usize,
    /// Row-major `n × d`.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub delta: f64,
}

impl RegressionSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.dim..(k + 1) * self.dim]
    }
}

/// `Y_{kΔ} = (X^i_{(k+1)Δ} - X^i_{kΔ}) / Δ` for `k = 0, …, n-1`.
pub fn make_regression_set(path: &ObservedPath, coord: usize) -> Result<RegressionSet> {
    let d = path.dim;
    if coord == 0 || coord > d {
        return Err(Error::Index { index: coord, dim: d });
    }
    let rows = path.obs.len() / d;
    if rows < 2 {
        return Err(Error::InsufficientData(
            "a path needs at least two observations".into(),
        ));
    }
    let n = rows - 1;
    let c = coord - 1;
    let targets = (0..n)
        .map(|k| (path.obs[(k + 1) * d + c] - path.obs[k * d + c]) / path.delta)
        .collect();
    Ok(RegressionSet {
        coord,
        dim: d,
        inputs: path.obs[..n * d].to_vec(),
        targets,
        delta: path.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(d: usize) -> SdeModel {
        SdeModel::new(d, Arc::new(|_: &[f64], o: &mut [f64]| o.fill(0.0)), Diffusion::Zero)
    }

    #[test]
    fn zero_dynamics_stay_put() {
        let path = simulate_path(&zero_model(3), &[1.0, 1.0, 1.0], 10, 0.5, 4, 1).unwrap();
        assert!(path.rows().all(|r| r == [1.0, 1.0, 1.0]));
        assert_eq!(path.n(), 10);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let ode = SdeModel::ornstein_uhlenbeck(1, 1.0, 0.0);
        let path = simulate_path(&ode, &[1.0], 1, 0.1, 1000, 0).unwrap();
        assert!((path.row(1)[0] - (-0.1f64).exp()).abs() <= 1e-4);
    }

    #[test]
    fn rejects_long_intervals() {
        let err = simulate_path(&zero_model(1), &[0.0], 3, 1.5, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
    }

    #[test]
    fn explosion_names_step() {
        let blowup = SdeModel::ornstein_uhlenbeck(1, -50.0, 0.0);
        match simulate_path(&blowup, &[1.0], 100, 1.0, 1, 0) {
            Err(Error::Explosion { observation, .. }) => assert!(observation >= 1),
            other => panic!("expected explosion, got {other:?}"),
        }
    }

    #[test]
    fn regression_pairs() {
        let path = ObservedPath {
            dim: 1,
            delta: 0.1,
            seed: 0,
            substeps: 1,
            obs: vec![0.0, 0.3],
        };
        let set = make_regression_set(&path, 1).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.targets[0] - 3.0).abs() < 1e-12);
        assert!(matches!(
            make_regression_set(&path, 2),
            Err(Error::Index { index: 2, dim: 1 })
        ));
    }

    #[test]
    fn constant_drift_gives_constant_targets() {
        let c = 0.7;
        let model = SdeModel::new(
            2,
            Arc::new(move |_: &[f64], o: &mut [f64]| o.fill(c)),
            Diffusion::Zero,
        );
        let path = simulate_path(&model, &[0.0, 0.0], 20, 0.25, 3, 0).unwrap();
        let set = make_regression_set(&path, 2).unwrap();
        assert_eq!(set.len(), 20);
        for y in &set.targets {
            assert!((y - c).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_moments() {
        assert_eq!(ou_reference_moments(2.0, 1.0, 3.0, 0.0).unwrap(), (3.0, 0.0));
        let (_, v) = ou_reference_moments(1.0, 1.0, 0.0, 200.0).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let (m, v) = ou_reference_moments(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((m - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(v, 0.0);
        assert!(ou_reference_moments(0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn binary_dump_round_trips() {
        let ou = SdeModel::ornstein_uhlenbeck(2, 1.0, 1.0);
        let path = simulate_path(&ou, &[0.5, -0.5], 30, 0.1, 5, 11).unwrap();
        let mut buf = Vec::new();
        path.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..9], b"DRFTPATH1");
        assert_eq!(buf.len(), 9 + 5 * 8 + 31 * 2 * 8);
        assert_eq!(ObservedPath::read_binary(&buf[..]).unwrap(), path);
        assert!(ObservedPath::read_binary(&b"NOTAPATH1xxxx"[..]).is_err());
    }

    #[test]
    fn single_copy_equals_direct_simulation() {
        let ou = SdeModel::ornstein_uhlenbeck(1, 1.0, 1.0);
        let copies = simulate_copies(&ou, &PointMass::default(), 50, 0.1, 5, 1, 99).unwrap();
        let direct = simulate_path(&ou, &[0.0], 50, 0.1, 5, copy_seed(99, 0)).unwrap();
        assert_eq!(copies[0], direct);
        let two = simulate_copies(&ou, &PointMass::default(), 50, 0.1, 5, 2, 99).unwrap();
        assert_ne!(two[0].obs, two[1].obs);
    }

    #[test]
    fn lipschitz_hint_is_checked() {
        let ou = SdeModel::ornstein_uhlenbeck(1, 2.0, 1.0);
        let pts: Vec<Vec<f64>> = (0..21).map(|k| vec![-5.0 + 0.5 * k as f64]).collect();
        let report = ou.check_coefficients(&pts);
        assert!(report.finite && report.lipschitz_ok);
        assert!((report.worst_drift_quotient - 2.0).abs() < 1e-12);
        let lying = SdeModel::ornstein_uhlenbeck(1, 2.0, 1.0).with_lipschitz_hint(1.0, 0.0);
        assert!(!lying.check_coefficients(&pts).lipschitz_ok);
    }
}

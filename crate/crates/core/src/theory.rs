//! Closed-form rate quantities and architecture selection.
//!
//! Logarithms: `log₂` in the depth condition and in `c_L^l`; natural log
//! everywhere else. Non-explicit multiplicative constants are set to 1, so
//! the bounds reported here are shape-only.

use serde::{Deserialize, Serialize};

use crate::drift_models::ClassParams;
use crate::error::{Error, Result};
use crate::relu_net::Architecture;

/// Constants `(c_L^u, c_p, c_s^l, c_s^u)` of the architecture conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConstants {
    pub depth_upper: f64,
    pub width: f64,
    pub sparsity_lower: f64,
    pub sparsity_upper: f64,
}

impl Default for ArchConstants {
    /// `c_L^u = 64` keeps the depth sandwich non-empty down to `nΔ = 2` for
    /// classes with `q ≤ 2`, `t_i ≤ 3`, `β_i ≤ 3`.
    fn default() -> Self {
        Self {
            depth_upper: 64.0,
            width: 1.0,
            sparsity_lower: 1.0,
            sparsity_upper: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateParams {
    pub class: ClassParams,
    pub n: usize,
    pub delta: f64,
    pub constants: ArchConstants,
}

impl RateParams {
    pub fn new(class: ClassParams, n: usize, delta: f64) -> Result<Self> {
        let rate = Self {
            class,
            n,
            delta,
            constants: ArchConstants::default(),
        };
        rate.validate()?;
        Ok(rate)
    }

    pub fn with_constants(mut self, constants: ArchConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn n_delta(&self) -> f64 {
        self.n as f64 * self.delta
    }

    pub fn validate(&self) -> Result<()> {
        self.class.validate()?;
        crate::sde_sim::check_sampling_regime(self.n, self.delta)
    }

    pub fn phi_n(&self) -> PhiN {
        phi_n(&self.class, self.n_delta())
    }
}

/// `β_i* = β_i Π_{ℓ = i+1}^{q} (β_ℓ ∧ 1)`.
pub fn beta_star(beta: &[f64], i: usize) -> Result<f64> {
    if i >= beta.len() {
        return Err(Error::Index {
            index: i,
            dim: beta.len(),
        });
    }
    Ok(beta[i] * beta[i + 1..].iter().map(|b| b.min(1.0)).product::<f64>())
}

/// `φ_n` and the index attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiN {
    pub value: f64,
    /// Smallest maximising index.
    pub argmax: usize,
    /// `−2β*/(2β* + t)` at `argmax`.
    pub exponent: f64,
}

/// `φ_n = max_i (nΔ)^{−2β_i*/(2β_i* + t_i)}`.
pub fn phi_n(class: &ClassParams, n_delta: f64) -> PhiN {
    let mut best = PhiN {
        value: f64::NEG_INFINITY,
        argmax: 0,
        exponent: 0.0,
    };
    for i in 0..=class.q {
        let bs = beta_star(&class.smooth, i).expect("index within class");
        let exponent = -2.0 * bs / (2.0 * bs + class.active[i] as f64);
        let value = n_delta.powf(exponent);
        if value > best.value {
            best = PhiN {
                value,
                argmax: i,
                exponent,
            };
        }
    }
    best
}

/// Exponent `−2β*/(2β* + t*)` of the rate `φ_n`, independent of `nΔ`.
pub fn rate_exponent(class: &ClassParams) -> f64 {
    (0..=class.q)
        .map(|i| {
            let bs = beta_star(&class.smooth, i).expect("index within class");
            -2.0 * bs / (2.0 * bs + class.active[i] as f64)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `c_L^l = Σ_i ((β_i + t_i)/t_i) log₂(4t_i ∨ 4β_i)`.
pub fn c_l_lower(class: &ClassParams) -> f64 {
    class
        .smooth
        .iter()
        .zip(&class.active)
        .map(|(&b, &t)| {
            let t = t as f64;
            (b + t) / t * (4.0 * t).max(4.0 * b).log2()
        })
        .sum()
}

/// `(s + 1) ln(2^{2L+6} δ^{−1} (L + 1) d² s^{2L})`, the explicit bound on
/// `log N(δ, F(L, p, s), ‖·‖_∞)`.
pub fn covering_bound(delta: f64, depth: usize, d: usize, s: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("δ = {delta} must lie in (0, 1)")));
    }
    if s < 2 {
        return Err(Error::Domain(format!("s = {s} must be at least 2")));
    }
    let l = depth as f64;
    let inner = (2.0 * l + 6.0) * std::f64::consts::LN_2 - delta.ln()
        + (l + 1.0).ln()
        + 2.0 * (d as f64).ln()
        + 2.0 * l * (s as f64).ln();
    Ok((s as f64 + 1.0) * inner)
}

/// `F² (s (L ln s + ln nΔ) ln(nΔ) / (nΔ) + Δ)`, the stochastic and
/// discretisation part of the oracle bound, up to its constant.
pub fn oracle_remainder(n: usize, delta: f64, s: usize, depth: usize, sup_bound: f64) -> Result<f64> {
    let nd = n as f64 * delta;
    if nd < 2.0 {
        return Err(Error::Constraint(format!(
            "nΔ = {nd} violates Δ ≤ 1 and nΔ ≥ 2"
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Constraint(format!(
            "Δ = {delta} violates Δ ≤ 1 and nΔ ≥ 2"
        )));
    }
    if s < 2 {
        return Err(Error::Domain(format!("s = {s} must be at least 2")));
    }
    let s_f = s as f64;
    let ln_nd = nd.ln();
    Ok(sup_bound.powi(2) * (s_f * (depth as f64 * s_f.ln() + ln_nd) * ln_nd / nd + delta))
}

/// One side-by-side inequality `lower ≤ value ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub lower: Option<f64>,
    pub value: f64,
    pub upper: Option<f64>,
    /// Smallest distance to a violated side (negative when violated).
    pub slack: f64,
    pub pass: bool,
}

impl Condition {
    fn new(name: &'static str, lower: Option<f64>, value: f64, upper: Option<f64>) -> Self {
        let slack = lower
            .map(|l| value - l)
            .into_iter()
            .chain(upper.map(|u| u - value))
            .fold(f64::INFINITY, f64::min);
        Self {
            name,
            lower,
            value,
            upper,
            slack,
            pass: slack >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub phi_n: f64,
    pub conditions: [Condition; 4],
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }
}

/// Evaluates the four architecture conditions:
/// (i) `F ≥ K ∨ 1`; (ii) `11q + 8 + c_L^l log₂(nΔφ_n) ≤ L ≤ c_L^u nΔφ_n`;
/// (iii) `c_p nΔφ_n ≤ min_i p_i`;
/// (iv) `c_s^l nΔφ_n ln(nΔ) ≤ s ≤ c_s^u nΔφ_n ln(nΔ)`.
pub fn check_conditions(
    arch: &Architecture,
    s: usize,
    rate: &RateParams,
    sup_bound: f64,
    k: f64,
) -> ConditionReport {
    check_shape(arch.depth(), arch.min_hidden_width(), s, rate, sup_bound, k)
}

/// [`check_conditions`] on a bare `(L, min_i p_i, s)` triple.
pub fn check_shape(
    depth: usize,
    min_width: usize,
    s: usize,
    rate: &RateParams,
    sup_bound: f64,
    k: f64,
) -> ConditionReport {
    let phi = rate.phi_n().value;
    let nd = rate.n_delta();
    let scale = nd * phi;
    let c = rate.constants;
    let q = rate.class.q as f64;
    let depth_lower = 11.0 * q + 8.0 + c_l_lower(&rate.class) * scale.log2();
    ConditionReport {
        phi_n: phi,
        conditions: [
            Condition::new("(i) sup bound", Some(k.max(1.0)), sup_bound, None),
            Condition::new(
                "(ii) depth",
                Some(depth_lower),
                depth as f64,
                Some(c.depth_upper * scale),
            ),
            Condition::new(
                "(iii) width",
                Some(c.width * scale),
                min_width as f64,
                None,
            ),
            Condition::new(
                "(iv) sparsity",
                Some(c.sparsity_lower * scale * nd.ln()),
                s as f64,
                Some(c.sparsity_upper * scale * nd.ln()),
            ),
        ],
    }
}

/// Smallest admissible depth, widths `⌈c_p nΔφ_n⌉ ∨ d`, sparsity
/// `⌈c_s^l nΔφ_n ln(nΔ)⌉ ∨ 2`; errors if the result violates a condition.
pub fn select_architecture(rate: &RateParams, sup_bound: f64, k: f64) -> Result<(Architecture, usize)> {
    rate.validate()?;
    let c = rate.constants;
    if !(c.sparsity_lower <= c.sparsity_upper) {
        return Err(Error::Infeasible(format!(
            "(iv) sparsity: c_s^l = {} exceeds c_s^u = {}",
            c.sparsity_lower, c.sparsity_upper
        )));
    }
    let nd = rate.n_delta();
    let scale = nd * rate.phi_n().value;
    let q = rate.class.q as f64;
    let depth = (11.0 * q + 8.0 + c_l_lower(&rate.class) * scale.log2())
        .max(1.0)
        .ceil() as usize;
    let d = rate.class.input_dim();
    let width = ((c.width * scale).ceil() as usize).max(d);
    let s = ((c.sparsity_lower * scale * nd.ln()).ceil() as usize).max(2);
    let arch = Architecture::uniform(d, depth, width)?;
    let report = check_conditions(&arch, s, rate, sup_bound, k);
    if let Some(bad) = report.conditions.iter().find(|c| !c.pass) {
        return Err(Error::Infeasible(format!(
            "{}: need {} ≤ {} ≤ {}",
            bad.name,
            bad.lower.map_or("-∞".into(), |v| format!("{v:.4}")),
            bad.value,
            bad.upper.map_or("∞".into(), |v| format!("{v:.4}")),
        )));
    }
    Ok((arch, s))
}

/// Every closed-form quantity for one `(class, n, Δ)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub n: usize,
    pub delta: f64,
    pub n_delta: f64,
    pub beta_star: Vec<f64>,
    pub phi_n: PhiN,
    pub c_l_lower: f64,
    pub depth: usize,
    pub width: usize,
    pub sparsity: usize,
    pub oracle_remainder: f64,
    /// `log N` bound at `δ = 1/(nΔ)`.
    pub covering_bound: f64,
    pub rate_with_logs: f64,
}

pub fn theory_report(rate: &RateParams, sup_bound: f64, k: f64) -> Result<TheoryReport> {
    let (arch, s) = select_architecture(rate, sup_bound, k)?;
    let nd = rate.n_delta();
    let phi = rate.phi_n();
    Ok(TheoryReport {
        n: rate.n,
        delta: rate.delta,
        n_delta: nd,
        beta_star: (0..=rate.class.q)
            .map(|i| beta_star(&rate.class.smooth, i))
            .collect::<Result<_>>()?,
        phi_n: phi,
        c_l_lower: c_l_lower(&rate.class),
        depth: arch.depth(),
        width: arch.min_hidden_width(),
        sparsity: s,
        oracle_remainder: oracle_remainder(rate.n, rate.delta, s, arch.depth(), sup_bound)?,
        covering_bound: covering_bound(1.0 / nd, arch.depth(), arch.input_dim(), s)?,
        rate_with_logs: phi.value * nd.ln().powi(4),
    })
}

impl std::fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bs: Vec<String> = self.beta_star.iter().map(|b| format!("{b}")).collect();
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "delta = {}", self.delta)?;
        writeln!(f, "n_delta = {}", self.n_delta)?;
        writeln!(f, "beta_star = [{}]", bs.join(", "))?;
        writeln!(f, "phi_n = {}", self.phi_n.value)?;
        writeln!(f, "phi_n_argmax = {}", self.phi_n.argmax)?;
        writeln!(f, "rate_exponent = {}", self.phi_n.exponent)?;
        writeln!(f, "c_l_lower = {}", self.c_l_lower)?;
        writeln!(f, "depth_L = {}", self.depth)?;
        writeln!(f, "width = {}", self.width)?;
        writeln!(f, "sparsity_s = {}", self.sparsity)?;
        writeln!(f, "oracle_remainder_up_to_constants = {}", self.oracle_remainder)?;
        writeln!(f, "covering_log_bound_at_inverse_n_delta = {}", self.covering_bound)?;
        writeln!(f, "phi_n_log4_up_to_constants = {}", self.rate_with_logs)
    }
}

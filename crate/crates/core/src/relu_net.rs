//! Sparse, bounded ReLU networks
//!
//! ```text
//! f(x) = W_L σ_{v_L} W_{L−1} ⋯ W_1 σ_{v_1} W_0 x,   σ_v(y) = max(y − v, 0)
//! ```
//!
//! restricted to `[0, 1]^d` and clipped to `[−F, F]`, with every parameter
//! bounded by 1 in magnitude and at most `s` of them nonzero.
//!
//! `W_j` is stored as a `p_{j+1} × p_j` row-major matrix acting on column
//! vectors (the transpose of the `p_j × p_{j+1}` indexing sometimes used on
//! paper). All parameters live in one flat vector laid out as
//!
//! ```text
//! W_0, v_1, W_1, v_2, …, W_{L−1}, v_L, W_L
//! ```
//!
//! and that order is also the tie-break order of [`project_params`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function::{in_unit_cube, ScalarField};
use crate::rng;

/// Depth `L` and widths `(p_0, …, p_{L+1})` with `p_{L+1} = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidParams("depth L must be at least 1".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidParams("all widths must be positive".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidParams("output width p_{L+1} must be 1".into()));
        }
        Ok(Self { widths })
    }

    /// `L` hidden layers of equal `width` on `d` inputs.
    pub fn uniform(d: usize, depth: usize, width: usize) -> Result<Self> {
        let mut widths = vec![d];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(1);
        Self::new(widths)
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Smallest hidden width `min_{1 ≤ i ≤ L} p_i`.
    pub fn min_hidden_width(&self) -> usize {
        self.widths[1..=self.depth()].iter().copied().min().unwrap()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    widths: Vec<usize>,
    /// `weights[j]` is the offset of `W_j`, `j = 0..=L`.
    pub weights: Vec<usize>,
    /// `shifts[j]` is the offset of `v_{j+1}`, `j = 0..L`.
    pub shifts: Vec<usize>,
    pub total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let p = &arch.widths;
        let depth = arch.depth();
        let mut weights = Vec::with_capacity(depth + 1);
        let mut shifts = Vec::with_capacity(depth);
        let mut at = 0;
        for j in 0..=depth {
            weights.push(at);
            at += p[j + 1] * p[j];
            if j < depth {
                shifts.push(at);
                at += p[j + 1];
            }
        }
        Self {
            widths: p.clone(),
            weights,
            shifts,
            total: at,
        }
    }

    /// Flat index of `W_j[row, col]`.
    pub fn weight(&self, j: usize, row: usize, col: usize) -> usize {
        self.weights[j] + row * self.widths[j] + col
    }

    /// Flat index of `v_j[unit]`, `j = 1..=L`.
    pub fn shift(&self, j: usize, unit: usize) -> usize {
        self.shifts[j - 1] + unit
    }
}

/// Parameters of one network in `F(L, p, s, F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    /// Flat vector in [`Layout`] order.
    pub values: Vec<f64>,
    pub sparsity_budget: usize,
    pub sup_bound: f64,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture, sparsity_budget: usize, sup_bound: f64) -> Self {
        let total = arch.param_count();
        Self {
            arch,
            values: vec![0.0; total],
            sparsity_budget,
            sup_bound,
        }
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    pub fn set_weight(&mut self, j: usize, row: usize, col: usize, value: f64) {
        let idx = self.layout().weight(j, row, col);
        self.values[idx] = value;
    }

    pub fn set_shift(&mut self, j: usize, unit: usize, value: f64) {
        let idx = self.layout().shift(j, unit);
        self.values[idx] = value;
    }

    /// Checks `|·|_∞ ≤ 1`, `nnz ≤ s`, `F ≥ 1` and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.arch.param_count() {
            return Err(Error::Shape {
                expected: self.arch.param_count(),
                got: self.values.len(),
            });
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidParams(format!("entry {v} exceeds the bound 1")));
        }
        let nnz = count_nonzero(self);
        if nnz > self.sparsity_budget {
            return Err(Error::InvalidParams(format!(
                "{nnz} nonzero entries exceed the budget s = {}",
                self.sparsity_budget
            )));
        }
        if !(self.sup_bound >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "sup bound F = {} must be at least 1",
                self.sup_bound
            )));
        }
        Ok(())
    }

    pub fn nonzero_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != 0.0).collect()
    }

    /// Versioned plain-text dump; numbers are written in shortest
    /// round-trip form, so reading it back is bit-exact.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("driftnet-network v1\n");
        let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "widths {}", join(&self.arch.widths));
        let _ = writeln!(out, "sparsity {}", self.sparsity_budget);
        let _ = writeln!(out, "sup_bound {:?}", self.sup_bound);
        let layout = self.layout();
        let depth = self.arch.depth();
        let p = &self.arch.widths;
        for j in 0..=depth {
            let w = &self.values[layout.weights[j]..layout.weights[j] + p[j + 1] * p[j]];
            let _ = writeln!(out, "W{j} {}", floats(w));
            if j < depth {
                let v = &self.values[layout.shifts[j]..layout.shifts[j] + p[j + 1]];
                let _ = writeln!(out, "v{} {}", j + 1, floats(v));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of network dump".into()))?
                .map_err(Error::from)
        };
        parse_network(&mut next)
    }
}

fn floats(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_network(next: &mut dyn FnMut() -> Result<String>) -> Result<NetworkParams> {
    let header = next()?;
    if header.trim() != "driftnet-network v1" {
        return Err(Error::Format(format!("unknown network header {header:?}")));
    }
    let field = |line: String, key: &str| -> Result<Vec<String>> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            other => Err(Error::Format(format!("expected {key}, found {other:?}"))),
        }
    };
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad number {s:?}")))
    };
    let widths = field(next()?, "widths")?
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| Error::Format(format!("bad width {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(widths)?;
    let sparsity = field(next()?, "sparsity")?
        .first()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::Format("bad sparsity".into()))?;
    let sup_bound = num(field(next()?, "sup_bound")?.first().map(String::as_str).unwrap_or(""))?;
    let depth = arch.depth();
    let mut values = Vec::with_capacity(arch.param_count());
    for j in 0..=depth {
        let block = field(next()?, &format!("W{j}"))?;
        if block.len() != arch.widths[j] * arch.widths[j + 1] {
            return Err(Error::Format(format!("W{j} has the wrong size")));
        }
        for s in &block {
            values.push(num(s)?);
        }
        if j < depth {
            let block = field(next()?, &format!("v{}", j + 1))?;
            if block.len() != arch.widths[j + 1] {
                return Err(Error::Format(format!("v{} has the wrong size", j + 1)));
            }
            for s in &block {
                values.push(num(s)?);
            }
        }
    }
    if next()?.trim() != "end" {
        return Err(Error::Format("missing end marker".into()));
    }
    Ok(NetworkParams {
        arch,
        values,
        sparsity_budget: sparsity,
        sup_bound,
    })
}

/// `σ_v(y)_i = max(y_i − v_i, 0)`.
pub fn shifted_relu(v: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if v.len() != y.len() {
        return Err(Error::Shape {
            expected: v.len(),
            got: y.len(),
        });
    }
    Ok(y.iter().zip(v).map(|(a, b)| (a - b).max(0.0)).collect())
}

/// `Σ_j |W_j|_0 + |v_j|_0`.
pub fn count_nonzero(params: &NetworkParams) -> usize {
    params.values.iter().filter(|&&v| v != 0.0).count()
}

/// Clips every entry into `[−clip, clip]`, then keeps the `budget` entries of
/// largest magnitude. Ties go to the earlier flat index.
pub fn project_params(params: &NetworkParams, budget: usize, clip: f64) -> NetworkParams {
    let mut out = params.clone();
    project_in_place(&mut out.values, budget, clip);
    out
}

pub(crate) fn project_in_place(values: &mut [f64], budget: usize, clip: f64) {
    for v in values.iter_mut() {
        *v = v.clamp(-clip, clip);
    }
    let mut nz: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
    if nz.len() <= budget {
        return;
    }
    let order = |a: &usize, b: &usize| {
        values[*b]
            .abs()
            .total_cmp(&values[*a].abs())
            .then(a.cmp(b))
    };
    if budget > 0 {
        nz.select_nth_unstable_by(budget - 1, order);
    }
    for &i in &nz[budget..] {
        values[i] = 0.0;
    }
}

/// Precomputed evaluation schedule over the active entries. Only live units
/// (those with an active incoming weight or shift) are stored; every other
/// unit is identically 0.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    /// Per weight block: `(out slot, in slot, flat index)`.
    entries: Vec<Vec<(u32, u32, u32)>>,
    /// Per hidden layer: flat index of the shift of each live slot.
    shifts: Vec<Vec<usize>>,
    /// Slot rows of `h_0, …, h_L`; layer `j` occupies `rows[j]..rows[j + 1]`.
    rows: Vec<usize>,
    max_live: usize,
}

impl Plan {
    /// Uses the entries selected by `active`.
    pub(crate) fn new(arch: &Architecture, active: &[bool]) -> Self {
        let layout = arch.layout();
        let p = &arch.widths;
        let depth = arch.depth();
        // slot[j][u]: position of unit u of layer j among the live units.
        let mut slot: Vec<Vec<Option<u32>>> = vec![(0..p[0] as u32).map(Some).collect()];
        let mut entries = Vec::with_capacity(depth + 1);
        let mut shifts = Vec::with_capacity(depth);
        for j in 0..=depth {
            let mut e = Vec::new();
            let mut on = vec![false; p[j + 1]];
            for row in 0..p[j + 1] {
                for col in 0..p[j] {
                    let idx = layout.weight(j, row, col);
                    if active[idx] {
                        on[row] = true;
                        if let Some(i) = slot[j][col] {
                            e.push((row as u32, i, idx as u32));
                        }
                    }
                }
            }
            if j < depth {
                for (u, o) in on.iter_mut().enumerate() {
                    *o |= active[layout.shift(j + 1, u)];
                }
                let mut next = vec![None; p[j + 1]];
                let mut sh = Vec::new();
                for u in (0..p[j + 1]).filter(|&u| on[u]) {
                    next[u] = Some(sh.len() as u32);
                    sh.push(layout.shift(j + 1, u));
                }
                for en in &mut e {
                    en.0 = next[en.0 as usize].expect("target unit is live");
                }
                slot.push(next);
                shifts.push(sh);
            }
            entries.push(e);
        }
        let mut rows = vec![0, p[0]];
        for sh in &shifts {
            rows.push(rows.last().unwrap() + sh.len());
        }
        let max_live = shifts.iter().map(Vec::len).chain([p[0]]).max().unwrap();
        Self {
            entries,
            shifts,
            rows,
            max_live,
        }
    }

    fn depth(&self) -> usize {
        self.shifts.len()
    }

    /// Unclipped network values for a block of `out.len()` samples (inputs
    /// row-major in `xs`). Leaves the activations in `acts`, one row of
    /// `out.len()` samples per live unit.
    fn raw_block(&self, values: &[f64], xs: &[f64], acts: &mut Vec<f64>, out: &mut [f64]) {
        let nb = out.len();
        let depth = self.depth();
        let d = self.rows[1];
        acts.clear();
        acts.resize(self.rows[depth + 1] * nb, 0.0);
        for (b, x) in xs.chunks_exact(d).enumerate() {
            for (i, &xi) in x.iter().enumerate() {
                acts[i * nb + b] = xi;
            }
        }
        for j in 0..depth {
            let (head, tail) = acts.split_at_mut(self.rows[j + 1] * nb);
            let h = &head[self.rows[j] * nb..];
            for &(o, i, k) in &self.entries[j] {
                let w = values[k as usize];
                let src = &h[i as usize * nb..(i as usize + 1) * nb];
                let dst = &mut tail[o as usize * nb..(o as usize + 1) * nb];
                for (zb, hb) in dst.iter_mut().zip(src) {
                    *zb += w * hb;
                }
            }
            for (u, &sk) in self.shifts[j].iter().enumerate() {
                let v = values[sk];
                for zb in &mut tail[u * nb..(u + 1) * nb] {
                    *zb = (*zb - v).max(0.0);
                }
            }
        }
        out.fill(0.0);
        let h = &acts[self.rows[depth] * nb..];
        for &(_, i, k) in &self.entries[depth] {
            let w = values[k as usize];
            for (ob, hb) in out.iter_mut().zip(&h[i as usize * nb..(i as usize + 1) * nb]) {
                *ob += w * hb;
            }
        }
    }

    fn raw(&self, values: &[f64], x: &[f64], acts: &mut Vec<f64>) -> f64 {
        let mut out = [0.0];
        self.raw_block(values, x, acts, &mut out);
        out[0]
    }

    /// Adds `Σ_b dout[b] · ∂f_raw(x_b)/∂θ` into `grad` for the activations
    /// left by [`Plan::raw_block`].
    fn backprop_block(
        &self,
        values: &[f64],
        acts: &[f64],
        dout: &[f64],
        delta: &mut Vec<f64>,
        grad: &mut [f64],
    ) {
        let nb = dout.len();
        let depth = self.depth();
        let width = self.max_live * nb;
        delta.clear();
        delta.resize(2 * width, 0.0);
        let (mut cur, mut prev) = delta.split_at_mut(width);
        let h_last = &acts[self.rows[depth] * nb..];
        for &(_, i, k) in &self.entries[depth] {
            let i = i as usize;
            let w = values[k as usize];
            let mut g = 0.0;
            for ((c, &dz), &hb) in cur[i * nb..(i + 1) * nb]
                .iter_mut()
                .zip(dout)
                .zip(&h_last[i * nb..(i + 1) * nb])
            {
                g += dz * hb;
                *c += dz * w;
            }
            grad[k as usize] += g;
        }
        for j in (1..=depth).rev() {
            // cur holds ∂/∂h_j; mask by the ReLU derivative (0 at the kink).
            let h = &acts[self.rows[j] * nb..self.rows[j + 1] * nb];
            for (u, &sk) in self.shifts[j - 1].iter().enumerate() {
                let mut g = 0.0;
                for (c, &hb) in cur[u * nb..(u + 1) * nb].iter_mut().zip(&h[u * nb..(u + 1) * nb]) {
                    if hb <= 0.0 {
                        *c = 0.0;
                    }
                    g += *c;
                }
                grad[sk] -= g;
            }
            let h_prev = &acts[self.rows[j - 1] * nb..self.rows[j] * nb];
            let need_prev = j > 1;
            if need_prev {
                prev[..(self.rows[j] - self.rows[j - 1]) * nb].fill(0.0);
            }
            for &(o, i, k) in &self.entries[j - 1] {
                let (o, i) = (o as usize, i as usize);
                let w = values[k as usize];
                let c = &cur[o * nb..(o + 1) * nb];
                let hp = &h_prev[i * nb..(i + 1) * nb];
                grad[k as usize] += c.iter().zip(hp).map(|(a, b)| a * b).sum::<f64>();
                if need_prev {
                    for (p, &cb) in prev[i * nb..(i + 1) * nb].iter_mut().zip(c) {
                        *p += cb * w;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut prev);
        }
    }
}

/// A validated member of `F(L, p, s, F)`.
#[derive(Debug, Clone)]
pub struct Network {
    params: NetworkParams,
    plan: Plan,
}

impl Network {
    pub fn new(params: NetworkParams) -> Result<Self> {
        params.validate()?;
        let plan = Plan::new(&params.arch, &params.nonzero_mask());
        Ok(Self { params, plan })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn into_params(self) -> NetworkParams {
        self.params
    }

    /// `f(x)`: 0 off `[0, 1]^d`, otherwise the network value clipped to
    /// `[−F, F]`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x.len() != self.params.arch.input_dim() || !in_unit_cube(x) {
            return 0.0;
        }
        let mut acts = Vec::new();
        let raw = self.plan.raw(&self.params.values, x, &mut acts);
        raw.clamp(-self.params.sup_bound, self.params.sup_bound)
    }

    /// Network value before the cube indicator and clipping.
    pub fn raw_output(&self, x: &[f64]) -> f64 {
        let mut acts = Vec::new();
        self.plan.raw(&self.params.values, x, &mut acts)
    }
}

impl ScalarField for Network {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

/// Validates `params`, then evaluates the network at `x`.
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.arch.input_dim() {
        return Err(Error::Shape {
            expected: params.arch.input_dim(),
            got: x.len(),
        });
    }
    Ok(Network::new(params.clone())?.eval(x))
}

/// Borrowed regression samples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub dim: usize,
    /// Row-major `len × dim`.
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn new(dim: usize, inputs: &'a [f64], targets: &'a [f64]) -> Self {
        assert_eq!(inputs.len(), dim * targets.len(), "inputs and targets disagree");
        Self { dim, inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, k: usize) -> &'a [f64] {
        &self.inputs[k * self.dim..(k + 1) * self.dim]
    }

    fn chunk(&self, start: usize, end: usize) -> Batch<'a> {
        Batch {
            dim: self.dim,
            inputs: &self.inputs[start * self.dim..end * self.dim],
            targets: &self.targets[start..end],
        }
    }
}

/// Samples per parallel work unit; partial sums are reduced in chunk order.
const CHUNK: usize = 2048;

/// Least-squares evaluator for a fixed active set.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    plan: Plan,
    active: Vec<bool>,
    sup_bound: f64,
}

impl LossEvaluator {
    pub fn new(arch: &Architecture, active: Vec<bool>, sup_bound: f64) -> Self {
        Self {
            plan: Plan::new(arch, &active),
            active,
            sup_bound,
        }
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// Sum of squared residuals `Σ (Y − f(X))²` (not averaged).
    pub fn sum_squares(&self, values: &[f64], batch: Batch<'_>) -> f64 {
        let parts: Vec<f64> = (0..batch.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let sub = batch.chunk(c * CHUNK, ((c + 1) * CHUNK).min(batch.len()));
                let mut blocks = Blocks::new(sub.dim);
                let mut acts = Vec::new();
                let mut out = Vec::new();
                let mut loss = 0.0;
                blocks.run(sub, &mut loss, |xs, ys, loss| {
                    out.resize(ys.len(), 0.0);
                    self.plan.raw_block(values, xs, &mut acts, &mut out);
                    for (&y, &raw) in ys.iter().zip(&out) {
                        *loss += (y - raw.clamp(-self.sup_bound, self.sup_bound)).powi(2);
                    }
                });
                loss
            })
            .collect();
        parts.iter().sum()
    }

    /// Sum of squared residuals and its gradient over the active entries.
    /// Samples off the cube or with a clipped output contribute no
    /// gradient.
    pub fn sum_squares_grad(&self, values: &[f64], batch: Batch<'_>, grad: &mut [f64]) -> f64 {
        let n_params = values.len();
        let parts: Vec<(f64, Vec<f64>)> = (0..batch.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let sub = batch.chunk(c * CHUNK, ((c + 1) * CHUNK).min(batch.len()));
                let mut g = vec![0.0; n_params];
                let mut blocks = Blocks::new(sub.dim);
                let mut acts = Vec::new();
                let mut delta = Vec::new();
                let mut out = Vec::new();
                let mut dout = Vec::new();
                let mut loss = 0.0;
                blocks.run(sub, &mut loss, |xs, ys, loss| {
                    out.resize(ys.len(), 0.0);
                    dout.resize(ys.len(), 0.0);
                    self.plan.raw_block(values, xs, &mut acts, &mut out);
                    for ((&y, &raw), dz) in ys.iter().zip(&out).zip(dout.iter_mut()) {
                        if raw.abs() > self.sup_bound {
                            *loss += (y - raw.clamp(-self.sup_bound, self.sup_bound)).powi(2);
                            *dz = 0.0;
                        } else {
                            let r = y - raw;
                            *loss += r * r;
                            *dz = -2.0 * r;
                        }
                    }
                    self.plan.backprop_block(values, &acts, &dout, &mut delta, &mut g);
                });
                (loss, g)
            })
            .collect();
        grad.fill(0.0);
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        for (a, &on) in grad.iter_mut().zip(&self.active) {
            if !on {
                *a = 0.0;
            }
        }
        loss
    }
}

/// Samples per evaluation block.
const BLOCK: usize = 64;

/// Gathers the in-cube samples of a batch into blocks; off-cube samples add
/// `Y²` to the loss directly.
struct Blocks {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Blocks {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            xs: Vec::with_capacity(BLOCK * dim),
            ys: Vec::with_capacity(BLOCK),
        }
    }

    fn run(&mut self, batch: Batch<'_>, loss: &mut f64, mut f: impl FnMut(&[f64], &[f64], &mut f64)) {
        for k in 0..batch.len() {
            let x = batch.input(k);
            let y = batch.targets[k];
            if !in_unit_cube(x) {
                *loss += y * y;
                continue;
            }
            self.xs.extend_from_slice(x);
            self.ys.push(y);
            if self.ys.len() == BLOCK {
                f(&self.xs, &self.ys, loss);
                self.xs.clear();
                self.ys.clear();
            }
        }
        if !self.ys.is_empty() {
            f(&self.xs, &self.ys, loss);
            self.xs.clear();
            self.ys.clear();
        }
        debug_assert_eq!(self.dim * self.ys.len(), self.xs.len());
    }
}

/// Mean squared loss over `batch` and its gradient; entries with
/// `active_mask[i] == false` get a zero gradient.
pub fn grad_lsq(
    params: &NetworkParams,
    batch: Batch<'_>,
    active_mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if active_mask.len() != params.values.len() {
        return Err(Error::Shape {
            expected: params.values.len(),
            got: active_mask.len(),
        });
    }
    // Inactive weights still take part in evaluation when nonzero.
    let eval_mask: Vec<bool> = params
        .values
        .iter()
        .zip(active_mask)
        .map(|(&v, &a)| a || v != 0.0)
        .collect();
    let evaluator = LossEvaluator::new(&params.arch, eval_mask, params.sup_bound);
    let mut grad = vec![0.0; params.values.len()];
    let sse = evaluator.sum_squares_grad(&params.values, batch, &mut grad);
    let n = batch.len() as f64;
    for (g, &on) in grad.iter_mut().zip(active_mask) {
        *g = if on { *g / n } else { 0.0 };
    }
    Ok((sse / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Dense entries uniform in `±1/√fan_in`, shifts uniform in `±0.1`,
    /// then projected to the budget.
    UniformScaled,
    /// All zeros plus a sparse skeleton that fits the budget: first-layer
    /// hinges merged into two identity chains (`P − N`) when there is room,
    /// otherwise independent identity chains, otherwise a constant unit.
    ZerosPlusSparse,
}

impl InitScheme {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "uniform_pm1_scaled" => Some(Self::UniformScaled),
            "zeros_plus_sparse" => Some(Self::ZerosPlusSparse),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformScaled => "uniform_pm1_scaled",
            Self::ZerosPlusSparse => "zeros_plus_sparse",
        }
    }
}

/// Feasible initial parameters, deterministic in `seed`.
pub fn init_params(
    arch: &Architecture,
    scheme: InitScheme,
    budget: usize,
    sup_bound: f64,
    seed: u64,
) -> NetworkParams {
    let mut params = NetworkParams::zeros(arch.clone(), budget, sup_bound);
    let mut rng = rng::rng_from_seed(seed);
    match scheme {
        InitScheme::UniformScaled => {
            let layout = arch.layout();
            let p = arch.widths();
            for j in 0..=arch.depth() {
                let scale = 1.0 / (p[j] as f64).sqrt();
                for k in layout.weights[j]..layout.weights[j] + p[j] * p[j + 1] {
                    params.values[k] = rng.random_range(-scale..=scale);
                }
                if j < arch.depth() {
                    for k in layout.shifts[j]..layout.shifts[j] + p[j + 1] {
                        params.values[k] = rng.random_range(-0.1..=0.1);
                    }
                }
            }
            project_in_place(&mut params.values, budget, 1.0);
        }
        InitScheme::ZerosPlusSparse => sparse_skeleton(&mut params, &mut rng),
    }
    params
}

fn nonzero_uniform(rng: &mut rng::Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..=hi);
        if v != 0.0 {
            return v;
        }
    }
}

/// First-layer unit `k` with random weights and its kink through a random
/// point of the cube, so it is neither dead nor linear on `[0, 1]^d`.
fn place_hinge(params: &mut NetworkParams, k: usize, rng: &mut rng::Rng) {
    let d = params.arch.input_dim();
    let mut v = 0.0;
    for i in 0..d {
        let w = nonzero_uniform(rng, -1.0, 1.0);
        params.set_weight(0, k, i, w);
        v += w * rng.random_range(0.1..0.9);
    }
    let v = v.clamp(-1.0, 1.0);
    params.set_shift(1, k, if v == 0.0 { 1e-3 } else { v });
}

fn sparse_skeleton(params: &mut NetworkParams, rng: &mut rng::Rng) {
    let budget = params.sparsity_budget;
    let arch = params.arch.clone();
    let d = arch.input_dim();
    let depth = arch.depth();
    let p = arch.widths().to_vec();

    // Hinges merged into P and N, each carried to the output by an identity
    // chain: K(d + 1) + 2K + 2 shifts + 2(L − 2) + 2.
    if depth >= 2 && p[2..=depth].iter().all(|&w| w >= 2) {
        let fixed = 2 * (depth - 2) + 4;
        let hinges = budget.saturating_sub(fixed) / (d + 3);
        let hinges = hinges.min(p[1]);
        if hinges >= 2 {
            for k in 0..hinges {
                place_hinge(params, k, rng);
                params.set_weight(1, 0, k, nonzero_uniform(rng, 0.05, 0.5));
                params.set_weight(1, 1, k, nonzero_uniform(rng, 0.05, 0.5));
            }
            params.set_shift(2, 0, nonzero_uniform(rng, -0.1, -0.01));
            params.set_shift(2, 1, nonzero_uniform(rng, -0.1, -0.01));
            for j in 2..depth {
                params.set_weight(j, 0, 0, 1.0);
                params.set_weight(j, 1, 1, 1.0);
            }
            params.set_weight(depth, 0, 0, 1.0);
            params.set_weight(depth, 0, 1, -1.0);
            return;
        }
    }

    // Independent chains: d + 1 + (L − 1) + 1 entries each.
    let chain_cost = d + depth + 1;
    let chains = (budget / chain_cost).min(arch.min_hidden_width());
    if chains >= 1 {
        for c in 0..chains {
            place_hinge(params, c, rng);
            for j in 1..depth {
                params.set_weight(j, c, c, 1.0);
            }
            params.set_weight(depth, 0, c, nonzero_uniform(rng, -0.01, 0.01));
        }
        // Spare budget: small negative shifts on the chains act as
        // trainable constant offsets.
        let spare = budget - chains * chain_cost;
        for (k, j) in (2..=depth).rev().take(spare).enumerate() {
            params.set_shift(j, k % chains, nonzero_uniform(rng, -0.01, -0.001));
        }
        return;
    }

    // Constant unit σ(0 − v_L) = −v_L in the last hidden layer.
    if budget >= 2 {
        params.set_shift(depth, 0, nonzero_uniform(rng, -1.0, -0.05));
        params.set_weight(depth, 0, 0, nonzero_uniform(rng, -1.0, 1.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net() -> NetworkParams {
        let arch = Architecture::uniform(1, 1, 1).unwrap();
        let mut p = NetworkParams::zeros(arch, 2, 1.0);
        p.set_weight(0, 0, 0, 1.0);
        p.set_weight(1, 0, 0, 1.0);
        p
    }

    #[test]
    fn shifted_relu_examples() {
        assert_eq!(shifted_relu(&[0.0, 0.0], &[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        assert_eq!(shifted_relu(&[1.0, -1.0], &[2.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(shifted_relu(&[0.3, 2.0], &[0.3, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(shifted_relu(&[0.0], &[0.0, 1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_examples() {
        let p = identity_net();
        assert!((forward(&p, &[0.3]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(forward(&p, &[1.5]).unwrap(), 0.0);
        let zero = NetworkParams::zeros(Architecture::uniform(2, 3, 4).unwrap(), 5, 1.0);
        assert_eq!(forward(&zero, &[0.2, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_infeasible_params() {
        let mut p = identity_net();
        p.values[0] = 1.5;
        assert!(matches!(forward(&p, &[0.5]), Err(Error::InvalidParams(_))));
        let mut p = identity_net();
        p.sparsity_budget = 1;
        assert!(matches!(forward(&p, &[0.5]), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn layout_order() {
        let arch = Architecture::new(vec![2, 3, 1]).unwrap();
        let l = arch.layout();
        assert_eq!(l.weights, vec![0, 9]);
        assert_eq!(l.shifts, vec![6]);
        assert_eq!(l.total, 12);
        assert_eq!(l.weight(0, 1, 0), 2);
        assert_eq!(l.shift(1, 2), 8);
    }

    #[test]
    fn count_nonzero_examples() {
        let arch = Architecture::new(vec![2, 2, 1]).unwrap();
        let mut p = NetworkParams::zeros(arch, 10, 1.0);
        assert_eq!(count_nonzero(&p), 0);
        p.set_weight(0, 0, 0, 1.0);
        p.set_weight(0, 1, 1, 1.0);
        assert_eq!(count_nonzero(&p), 2);
    }

    #[test]
    fn projection_clips_then_thresholds() {
        let arch = Architecture::new(vec![3, 1, 1]).unwrap();
        let mut p = NetworkParams::zeros(arch, 2, 1.0);
        p.values[..3].copy_from_slice(&[2.0, 0.5, -3.0]);
        let out = project_params(&p, 2, 1.0);
        assert_eq!(&out.values[..3], &[1.0, 0.0, -1.0]);
        assert!(out.values[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_ties_prefer_earlier_entries() {
        let arch = Architecture::new(vec![3, 1, 1]).unwrap();
        let mut p = NetworkParams::zeros(arch, 2, 1.0);
        p.values[..3].copy_from_slice(&[0.5, -0.5, 0.5]);
        let out = project_params(&p, 2, 1.0);
        assert_eq!(&out.values[..3], &[0.5, -0.5, 0.0]);
    }

    #[test]
    fn projection_is_identity_on_feasible_sets() {
        let p = identity_net();
        assert_eq!(project_params(&p, 2, 1.0), p);
        let mut big = identity_net();
        big.values[0] = 4.0;
        assert_eq!(project_params(&big, 100, 1.0).values[0], 1.0);
    }

    #[test]
    fn hand_gradient_of_linear_net() {
        // f(x) = w·σ(x) with w = 0.5 at x = 1, Y = 0.
        let arch = Architecture::uniform(1, 1, 1).unwrap();
        let mut p = NetworkParams::zeros(arch, 3, 1.0);
        p.set_weight(0, 0, 0, 1.0);
        p.set_weight(1, 0, 0, 0.5);
        let mask = vec![true; p.values.len()];
        let (loss, grad) = grad_lsq(&p, Batch::new(1, &[1.0], &[0.0]), &mask).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
        let w1 = p.layout().weight(1, 0, 0);
        assert!((grad[w1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let p = identity_net();
        let xs = [0.1, 0.4, 0.9];
        let mask = vec![true; p.values.len()];
        let (loss, grad) = grad_lsq(&p, Batch::new(1, &xs, &xs), &mask).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn masked_entries_get_no_gradient() {
        let p = identity_net();
        let mut mask = vec![true; p.values.len()];
        mask[0] = false;
        let (_, grad) = grad_lsq(&p, Batch::new(1, &[0.5], &[0.0]), &mask).unwrap();
        assert_eq!(grad[0], 0.0);
        assert!(grad[p.layout().weight(1, 0, 0)] != 0.0);
    }

    #[test]
    fn clipped_and_off_cube_samples_give_no_gradient() {
        let arch = Architecture::uniform(1, 1, 1).unwrap();
        let mut p = NetworkParams::zeros(arch, 3, 1.0);
        p.set_weight(0, 0, 0, 1.0);
        p.set_shift(1, 0, -1.0);
        p.set_weight(1, 0, 0, 1.0);
        // raw = x + 1 > F = 1 on (0, 1].
        let mask = vec![true; p.values.len()];
        let (loss, grad) = grad_lsq(&p, Batch::new(1, &[0.5, 2.0], &[0.0, 3.0]), &mask).unwrap();
        assert!((loss - (1.0 + 9.0) / 2.0).abs() < 1e-15);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn init_schemes_are_feasible_and_seeded() {
        let arch = Architecture::uniform(2, 5, 6).unwrap();
        for scheme in [InitScheme::UniformScaled, InitScheme::ZerosPlusSparse] {
            for budget in [0, 2, 9, 30, 500] {
                let a = init_params(&arch, scheme, budget, 1.0, 4);
                let b = init_params(&arch, scheme, budget, 1.0, 4);
                assert_eq!(a, b);
                assert!(count_nonzero(&a) <= budget);
                assert!(a.values.iter().all(|v| v.abs() <= 1.0));
            }
        }
        let zero = init_params(&arch, InitScheme::ZerosPlusSparse, 0, 1.0, 1);
        assert_eq!(count_nonzero(&zero), 0);
    }

    #[test]
    fn skeleton_carries_signal_to_the_output() {
        let arch = Architecture::uniform(1, 6, 8).unwrap();
        for budget in [8, 12, 40] {
            let p = init_params(&arch, InitScheme::ZerosPlusSparse, budget, 1.0, 3);
            let net = Network::new(p).unwrap();
            let vals: Vec<f64> = (0..=10).map(|k| net.raw_output(&[k as f64 / 10.0])).collect();
            assert!(vals.iter().any(|v| (v - vals[0]).abs() > 0.0) || budget < 9, "{budget}: {vals:?}");
        }
    }

    #[test]
    fn text_dump_round_trips() {
        let arch = Architecture::uniform(3, 2, 4).unwrap();
        let p = init_params(&arch, InitScheme::UniformScaled, 20, 2.5, 8);
        let text = p.to_text();
        let back = NetworkParams::read_text(text.as_bytes()).unwrap();
        assert_eq!(back, p);
        assert!(NetworkParams::read_text("nonsense\n".as_bytes()).is_err());
    }
}

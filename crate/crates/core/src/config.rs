//! Experiment configuration: a TOML document with a fixed schema.
//!
//! ```toml
//! name = "linear-drift"
//! seeds = [0, 1, 2]
//! out_dir = "out"
//!
//! [model]
//! kind = "confined"                  # or "ou"
//! recipe = "single-layer-polynomial" # confined only
//! coefficients = [1.0, -1.0]         # ascending powers
//! radial_rate = 1.0
//! coord = 1
//!
//! [class]
//! q = 0
//! dims = [1, 1]
//! active = [1]
//! smooth = [1.0]
//! holder_k = 1.0
//!
//! [grid]
//! cells = [[5000, 0.01], [20000, 0.01]]   # (n, Δ) pairs
//! # or: n_delta = [50, 200], delta = 0.01
//!
//! [train]
//! steps = 2000
//! batch = "full"                     # or a mini-batch size
//!
//! [arch]
//! source = "auto"                    # or "explicit" with depth/width or widths, sparsity
//! sup_bound = 1.0
//!
//! [risk]
//! copies = 4
//! substeps = 20
//! ```
//!
//! Every key has a default except `model.kind` and the grid. Unknown keys
//! are rejected, with a suggestion when a known key is one edit away.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::drift_models::{ClassParams, RECIPE_NAMES};
use crate::error::{Error, Result};
use crate::relu_net::{Architecture, InitScheme};
use crate::risk::ArchSource;
use crate::sde_sim::DEFAULT_SUBSTEPS;
use crate::theory::ArchConstants;
use crate::trainer::{BatchMode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// A composition-class function confined by an inward radial drift,
    /// with unit diffusion.
    Confined {
        recipe: String,
        /// Polynomial coefficients for the polynomial recipes; random when
        /// absent.
        coefficients: Option<Vec<f64>>,
        segments: usize,
        recipe_seed: u64,
        coord: usize,
        radial_rate: f64,
    },
    /// `dX = −θ X dt + σ dw`; the target is `−θ x_coord` on the cube.
    OrnsteinUhlenbeck { theta: f64, sigma: f64, coord: usize },
}

impl ModelSpec {
    pub fn coord(&self) -> usize {
        match self {
            Self::Confined { coord, .. } | Self::OrnsteinUhlenbeck { coord, .. } => *coord,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub model: ModelSpec,
    /// Initial state of every path; the origin when absent.
    pub x0: Option<Vec<f64>>,
    pub class: ClassParams,
    /// `(n, Δ)` cells in run order.
    pub grid: Vec<(usize, f64)>,
    pub train: TrainConfig,
    pub arch: ArchSource,
    pub sup_bound: f64,
    pub copies: usize,
    pub substeps: usize,
}

const TOP_KEYS: &[&str] = &["name", "seeds", "out_dir", "model", "class", "grid", "train", "arch", "risk"];
const MODEL_KEYS: &[&str] = &[
    "kind", "recipe", "coefficients", "segments", "recipe_seed", "coord", "radial_rate", "theta", "sigma", "x0",
];
const CLASS_KEYS: &[&str] = &["q", "dims", "active", "smooth", "holder_k"];
const GRID_KEYS: &[&str] = &["cells", "n_delta", "delta"];
const TRAIN_KEYS: &[&str] = &[
    "steps",
    "step_size",
    "decay",
    "momentum",
    "batch",
    "restarts",
    "projection_every",
    "eval_every",
    "init",
    "relaxed_factor",
    "extended_budget",
];
const ARCH_KEYS: &[&str] = &[
    "source",
    "depth",
    "width",
    "widths",
    "sparsity",
    "sup_bound",
    "depth_upper",
    "width_factor",
    "sparsity_lower",
    "sparsity_upper",
];
const RISK_KEYS: &[&str] = &["copies", "substeps"];

/// Optimal string alignment distance (adjacent transpositions cost 1).
fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[a.len()][b.len()]
}

fn unknown_key(section: &str, key: &str, allowed: &[&str]) -> String {
    let path = if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    };
    match allowed.iter().find(|k| edit_distance(key, k) <= 1) {
        Some(s) => format!("unknown key `{path}`; did you mean `{s}`?"),
        None => format!("unknown key `{path}`; expected one of {}", allowed.join(", ")),
    }
}

/// Typed accessors over one table that record every problem in `errors`.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn new(name: &'static str, table: Option<&'a Table>, allowed: &[&str], errors: &'a mut Vec<String>) -> Self {
        if let Some(t) = table {
            for k in t.keys() {
                if !allowed.contains(&k.as_str()) {
                    errors.push(unknown_key(name, k, allowed));
                }
            }
        }
        Self { name, table, errors }
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn bad(&mut self, key: &str, want: &str) {
        let path = if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        };
        self.errors.push(format!("`{path}` must be {want}"));
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.raw(key) {
            None => default,
            Some(v) => match as_f64(v) {
                Some(x) => x,
                None => {
                    self.bad(key, "a number");
                    default
                }
            },
        }
    }

    fn opt_float(&mut self, key: &str) -> Option<f64> {
        let v = self.raw(key)?;
        let x = as_f64(v);
        if x.is_none() {
            self.bad(key, "a number");
        }
        x
    }

    fn uint(&mut self, key: &str, default: usize) -> usize {
        match self.raw(key) {
            None => default,
            Some(v) => match v.as_integer().filter(|&i| i >= 0) {
                Some(i) => i as usize,
                None => {
                    self.bad(key, "a nonnegative integer");
                    default
                }
            },
        }
    }

    fn opt_uint(&mut self, key: &str) -> Option<usize> {
        let v = self.raw(key)?;
        let x = v.as_integer().filter(|&i| i >= 0).map(|i| i as usize);
        if x.is_none() {
            self.bad(key, "a nonnegative integer");
        }
        x
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.raw(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                self.bad(key, "a string");
                default.to_string()
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.bad(key, "true or false");
                default
            }
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.raw(key)?;
        let xs = v.as_array().and_then(|a| a.iter().map(as_f64).collect::<Option<Vec<_>>>());
        if xs.is_none() {
            self.bad(key, "an array of numbers");
        }
        xs
    }

    fn uints(&mut self, key: &str) -> Option<Vec<usize>> {
        let v = self.raw(key)?;
        let xs = v.as_array().and_then(|a| {
            a.iter()
                .map(|x| x.as_integer().filter(|&i| i >= 0).map(|i| i as usize))
                .collect::<Option<Vec<_>>>()
        });
        if xs.is_none() {
            self.bad(key, "an array of nonnegative integers");
        }
        xs
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn sub_table<'a>(root: &'a Table, key: &str, errors: &mut Vec<String>) -> Option<&'a Table> {
    match root.get(key) {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            errors.push(format!("`{key}` must be a table"));
            None
        }
    }
}

/// Parses and validates a configuration, reporting every violation found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("malformed TOML: {e}")]))?;
    let mut errors = Vec::new();

    let mut top = Section::new("", Some(&root), TOP_KEYS, &mut errors);
    let name = top.string("name", "experiment");
    let out_dir = PathBuf::from(top.string("out_dir", "out"));
    let seeds = match top.raw("seeds") {
        None => vec![0],
        Some(v) => match v.as_array().and_then(|a| {
            a.iter()
                .map(|x| x.as_integer().filter(|&i| i >= 0).map(|i| i as u64))
                .collect::<Option<Vec<_>>>()
        }) {
            Some(s) if !s.is_empty() => s,
            _ => {
                top.bad("seeds", "a nonempty array of nonnegative integers");
                vec![0]
            }
        },
    };

    let class_t = sub_table(&root, "class", &mut errors);
    let mut cs = Section::new("class", class_t, CLASS_KEYS, &mut errors);
    let q = cs.uint("q", 0);
    let class = ClassParams {
        q,
        dims: cs.uints("dims").unwrap_or_else(|| vec![1; q + 2]),
        active: cs.uints("active").unwrap_or_else(|| vec![1; q + 1]),
        smooth: cs.floats("smooth").unwrap_or_else(|| vec![1.0; q + 1]),
        holder_k: cs.float("holder_k", 1.0),
    };
    if let Err(e) = class.validate() {
        errors.push(format!("class: {e}"));
    }
    let dim = class.dims.first().copied().unwrap_or(1);

    let model_t = sub_table(&root, "model", &mut errors);
    let mut ms = Section::new("model", model_t, MODEL_KEYS, &mut errors);
    let kind = ms.raw("kind").and_then(Value::as_str).map(str::to_owned);
    let coord = ms.uint("coord", 1);
    let x0 = ms.floats("x0");
    let model = match kind.as_deref() {
        Some("confined") => {
            let recipe = ms.string("recipe", "single-layer-polynomial");
            if !RECIPE_NAMES.contains(&recipe.as_str()) {
                ms.errors.push(format!(
                    "unknown recipe `{recipe}`; expected one of {}",
                    RECIPE_NAMES.join(", ")
                ));
            }
            let radial_rate = ms.float("radial_rate", 1.0);
            if !(radial_rate > 0.0 && radial_rate <= 1.0) {
                ms.bad("radial_rate", "in (0, 1]");
            }
            Some(ModelSpec::Confined {
                recipe,
                coefficients: ms.floats("coefficients"),
                segments: ms.uint("segments", 4),
                recipe_seed: ms.uint("recipe_seed", 0) as u64,
                coord,
                radial_rate,
            })
        }
        Some("ou") => {
            let theta = ms.float("theta", 1.0);
            let sigma = ms.float("sigma", 1.0);
            if !(theta > 0.0) || !(sigma > 0.0) {
                ms.errors.push("`model.theta` and `model.sigma` must be positive".into());
            }
            Some(ModelSpec::OrnsteinUhlenbeck { theta, sigma, coord })
        }
        Some(other) => {
            ms.errors.push(format!("unknown model kind `{other}`; expected confined or ou"));
            None
        }
        None => {
            ms.errors.push("`model.kind` is required (confined or ou)".into());
            None
        }
    };
    if coord == 0 || coord > dim {
        errors.push(format!("`model.coord` = {coord} must lie in 1..={dim}"));
    }
    if let Some(x) = &x0 {
        if x.len() != dim {
            errors.push(format!("`model.x0` has {} entries, expected {dim}", x.len()));
        }
    }

    let grid_t = sub_table(&root, "grid", &mut errors);
    let mut gs = Section::new("grid", grid_t, GRID_KEYS, &mut errors);
    let mut grid = Vec::new();
    match (gs.raw("cells"), gs.raw("n_delta")) {
        (Some(cells), None) => {
            let parsed = cells.as_array().and_then(|a| {
                a.iter()
                    .map(|c| {
                        let c = c.as_array()?;
                        if c.len() != 2 {
                            return None;
                        }
                        let n = c[0].as_integer().filter(|&i| i >= 0)? as usize;
                        Some((n, as_f64(&c[1])?))
                    })
                    .collect::<Option<Vec<_>>>()
            });
            match parsed {
                Some(g) => grid = g,
                None => gs.bad("cells", "an array of [n, delta] pairs"),
            }
            if gs.raw("delta").is_some() {
                gs.errors.push("`grid.delta` only goes with `grid.n_delta`".into());
            }
        }
        (None, Some(_)) => {
            let nds = gs.floats("n_delta").unwrap_or_default();
            match gs.opt_float("delta") {
                Some(delta) if delta > 0.0 => {
                    grid = nds.iter().map(|nd| ((nd / delta).round() as usize, delta)).collect();
                }
                _ => gs.bad("delta", "a positive number when `grid.n_delta` is given"),
            }
        }
        (Some(_), Some(_)) => gs.errors.push("give either `grid.cells` or `grid.n_delta`, not both".into()),
        (None, None) => gs.errors.push("`grid.cells` or `grid.n_delta` is required".into()),
    }
    if grid_t.is_some() && grid.is_empty() && errors.is_empty() {
        errors.push("the grid has no cells".into());
    }
    for (k, &(n, delta)) in grid.iter().enumerate() {
        if !(delta > 0.0) || delta > 1.0 || (n as f64) * delta < 2.0 {
            errors.push(format!(
                "grid cell {k} (n = {n}, Δ = {delta}) violates Δ ≤ 1 and nΔ ≥ 2"
            ));
        }
    }

    let train_t = sub_table(&root, "train", &mut errors);
    let mut ts = Section::new("train", train_t, TRAIN_KEYS, &mut errors);
    let defaults = TrainConfig::default();
    let batch = match ts.raw("batch") {
        None => defaults.batch,
        Some(Value::String(s)) if s == "full" => BatchMode::Full,
        Some(Value::Integer(b)) if *b > 0 => BatchMode::Mini(*b as usize),
        Some(_) => {
            ts.bad("batch", "\"full\" or a positive integer");
            defaults.batch
        }
    };
    let init_name = ts.string("init", defaults.init.name());
    let init = InitScheme::parse(&init_name).unwrap_or_else(|| {
        ts.bad("init", "\"zeros_plus_sparse\" or \"uniform_pm1_scaled\"");
        defaults.init
    });
    let train = TrainConfig {
        steps: ts.uint("steps", defaults.steps),
        step_size: ts.float("step_size", defaults.step_size),
        decay: ts.opt_float("decay"),
        momentum: ts.float("momentum", defaults.momentum),
        batch,
        restarts: ts.uint("restarts", defaults.restarts),
        projection_every: ts.uint("projection_every", defaults.projection_every),
        eval_every: ts.uint("eval_every", defaults.eval_every),
        init,
        relaxed_factor: ts.uint("relaxed_factor", defaults.relaxed_factor),
        extended_budget: ts.boolean("extended_budget", defaults.extended_budget),
        seed: 0,
    };
    if let Err(e) = train.validate() {
        errors.push(format!("train: {e}"));
    }

    let arch_t = sub_table(&root, "arch", &mut errors);
    let mut as_ = Section::new("arch", arch_t, ARCH_KEYS, &mut errors);
    let sup_bound = as_.float("sup_bound", 1.0);
    if !(sup_bound >= 1.0) {
        as_.bad("sup_bound", "at least 1");
    }
    let source = as_.string("source", "auto");
    let c = ArchConstants::default();
    let arch = match source.as_str() {
        "auto" => {
            for key in ["depth", "width", "widths", "sparsity"] {
                if as_.raw(key).is_some() {
                    as_.errors.push(format!("`arch.{key}` needs `arch.source = \"explicit\"`"));
                }
            }
            let constants = ArchConstants {
                depth_upper: as_.float("depth_upper", c.depth_upper),
                width: as_.float("width_factor", c.width),
                sparsity_lower: as_.float("sparsity_lower", c.sparsity_lower),
                sparsity_upper: as_.float("sparsity_upper", c.sparsity_upper),
            };
            let all = [
                constants.depth_upper,
                constants.width,
                constants.sparsity_lower,
                constants.sparsity_upper,
            ];
            if all.iter().any(|v| !(*v > 0.0)) {
                as_.errors.push("architecture constants must be positive".into());
            } else if constants.sparsity_lower > constants.sparsity_upper {
                as_.errors.push("`arch.sparsity_lower` exceeds `arch.sparsity_upper`".into());
            }
            Some(ArchSource::Auto(constants))
        }
        "explicit" => {
            let widths = match (as_.uints("widths"), as_.opt_uint("depth"), as_.opt_uint("width")) {
                (Some(w), None, None) => Some(w),
                (None, Some(depth), Some(width)) => {
                    let mut w = vec![dim];
                    w.extend(std::iter::repeat_n(width, depth));
                    w.push(1);
                    Some(w)
                }
                _ => {
                    as_.errors.push(
                        "explicit architectures need either `arch.widths` or both `arch.depth` and `arch.width`".into(),
                    );
                    None
                }
            };
            let sparsity = as_.opt_uint("sparsity");
            match (widths.map(Architecture::new), sparsity) {
                (Some(Ok(arch)), Some(s)) => {
                    if arch.input_dim() != dim {
                        as_.errors.push(format!(
                            "`arch.widths` starts with {}, expected the input dimension {dim}",
                            arch.input_dim()
                        ));
                    }
                    if s < 2 {
                        as_.bad("sparsity", "at least 2");
                    }
                    Some(ArchSource::Explicit { arch, sparsity: s })
                }
                (Some(Err(e)), _) => {
                    as_.errors.push(format!("arch: {e}"));
                    None
                }
                (_, None) => {
                    as_.errors.push("`arch.sparsity` is required for explicit architectures".into());
                    None
                }
                _ => None,
            }
        }
        other => {
            as_.errors.push(format!("unknown `arch.source` `{other}`; expected auto or explicit"));
            None
        }
    };

    let risk_t = sub_table(&root, "risk", &mut errors);
    let mut rs = Section::new("risk", risk_t, RISK_KEYS, &mut errors);
    let copies = rs.uint("copies", 4);
    let substeps = rs.uint("substeps", DEFAULT_SUBSTEPS);
    if copies < 2 {
        rs.bad("copies", "at least 2");
    }
    if substeps == 0 {
        rs.bad("substeps", "at least 1");
    }

    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    Ok(ExperimentConfig {
        name,
        seeds,
        out_dir,
        model: model.expect("checked"),
        x0,
        class,
        grid,
        train,
        arch: arch.expect("checked"),
        sup_bound,
        copies,
        substeps,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

fn ints(xs: &[usize]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Integer(x as i64)).collect())
}

impl ExperimentConfig {
    /// Complete configuration with every default spelled out; parsing it
    /// gives back an equal value.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("name".into(), Value::String(self.name.clone()));
        root.insert(
            "seeds".into(),
            Value::Array(self.seeds.iter().map(|&s| Value::Integer(s as i64)).collect()),
        );
        root.insert("out_dir".into(), Value::String(self.out_dir.display().to_string()));

        let mut model = Table::new();
        match &self.model {
            ModelSpec::Confined {
                recipe,
                coefficients,
                segments,
                recipe_seed,
                coord,
                radial_rate,
            } => {
                model.insert("kind".into(), Value::String("confined".into()));
                model.insert("recipe".into(), Value::String(recipe.clone()));
                if let Some(c) = coefficients {
                    model.insert("coefficients".into(), floats(c));
                }
                model.insert("segments".into(), Value::Integer(*segments as i64));
                model.insert("recipe_seed".into(), Value::Integer(*recipe_seed as i64));
                model.insert("coord".into(), Value::Integer(*coord as i64));
                model.insert("radial_rate".into(), Value::Float(*radial_rate));
            }
            ModelSpec::OrnsteinUhlenbeck { theta, sigma, coord } => {
                model.insert("kind".into(), Value::String("ou".into()));
                model.insert("theta".into(), Value::Float(*theta));
                model.insert("sigma".into(), Value::Float(*sigma));
                model.insert("coord".into(), Value::Integer(*coord as i64));
            }
        }
        if let Some(x0) = &self.x0 {
            model.insert("x0".into(), floats(x0));
        }
        root.insert("model".into(), Value::Table(model));

        let mut class = Table::new();
        class.insert("q".into(), Value::Integer(self.class.q as i64));
        class.insert("dims".into(), ints(&self.class.dims));
        class.insert("active".into(), ints(&self.class.active));
        class.insert("smooth".into(), floats(&self.class.smooth));
        class.insert("holder_k".into(), Value::Float(self.class.holder_k));
        root.insert("class".into(), Value::Table(class));

        let mut grid = Table::new();
        grid.insert(
            "cells".into(),
            Value::Array(
                self.grid
                    .iter()
                    .map(|&(n, d)| Value::Array(vec![Value::Integer(n as i64), Value::Float(d)]))
                    .collect(),
            ),
        );
        root.insert("grid".into(), Value::Table(grid));

        let t = &self.train;
        let mut train = Table::new();
        train.insert("steps".into(), Value::Integer(t.steps as i64));
        train.insert("step_size".into(), Value::Float(t.step_size));
        if let Some(d) = t.decay {
            train.insert("decay".into(), Value::Float(d));
        }
        train.insert("momentum".into(), Value::Float(t.momentum));
        train.insert(
            "batch".into(),
            match t.batch {
                BatchMode::Full => Value::String("full".into()),
                BatchMode::Mini(b) => Value::Integer(b as i64),
            },
        );
        train.insert("restarts".into(), Value::Integer(t.restarts as i64));
        train.insert("projection_every".into(), Value::Integer(t.projection_every as i64));
        train.insert("eval_every".into(), Value::Integer(t.eval_every as i64));
        train.insert("init".into(), Value::String(t.init.name().into()));
        train.insert("relaxed_factor".into(), Value::Integer(t.relaxed_factor as i64));
        train.insert("extended_budget".into(), Value::Boolean(t.extended_budget));
        root.insert("train".into(), Value::Table(train));

        let mut arch = Table::new();
        arch.insert("sup_bound".into(), Value::Float(self.sup_bound));
        match &self.arch {
            ArchSource::Auto(c) => {
                arch.insert("source".into(), Value::String("auto".into()));
                arch.insert("depth_upper".into(), Value::Float(c.depth_upper));
                arch.insert("width_factor".into(), Value::Float(c.width));
                arch.insert("sparsity_lower".into(), Value::Float(c.sparsity_lower));
                arch.insert("sparsity_upper".into(), Value::Float(c.sparsity_upper));
            }
            ArchSource::Explicit { arch: a, sparsity } => {
                arch.insert("source".into(), Value::String("explicit".into()));
                arch.insert("widths".into(), ints(a.widths()));
                arch.insert("sparsity".into(), Value::Integer(*sparsity as i64));
            }
        }
        root.insert("arch".into(), Value::Table(arch));

        let mut risk = Table::new();
        risk.insert("copies".into(), Value::Integer(self.copies as i64));
        risk.insert("substeps".into(), Value::Integer(self.substeps as i64));
        root.insert("risk".into(), Value::Table(risk));

        toml::to_string(&root).expect("plain tables always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "ou"

[grid]
cells = [[400, 0.01]]
"#;

    fn messages(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults_and_round_trips() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.class, ClassParams::single(1, 1, 1.0, 1.0));
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.copies, 4);
        assert_eq!(cfg.grid, vec![(400, 0.01)]);
        let echo = cfg.to_toml();
        assert_eq!(parse_config(&echo).unwrap(), cfg);
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
name = "sweep"
seeds = [3, 4]
out_dir = "results"
[model]
kind = "confined"
recipe = "single-layer-polynomial"
coefficients = [1.0, -1.0]
radial_rate = 0.5
x0 = [0.25]
[class]
holder_k = 1.0
[grid]
n_delta = [50, 200]
delta = 0.01
[train]
steps = 100
batch = 512
decay = 20.0
init = "uniform_pm1_scaled"
[arch]
source = "explicit"
depth = 3
width = 4
sparsity = 12
[risk]
copies = 3
substeps = 10
"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.grid, vec![(5000, 0.01), (20000, 0.01)]);
        assert_eq!(cfg.train.batch, BatchMode::Mini(512));
        match &cfg.arch {
            ArchSource::Explicit { arch, sparsity } => {
                assert_eq!(arch.widths(), &[1, 4, 4, 4, 1]);
                assert_eq!(*sparsity, 12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sampling_regime_is_enforced() {
        let text = MINIMAL.replace("[[400, 0.01]]", "[[400, 2.0], [100, 0.01]]");
        let m = messages(&text);
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|e| e.contains("Δ ≤ 1 and nΔ ≥ 2")));
    }

    #[test]
    fn unknown_keys_get_suggestions() {
        let text = format!("{MINIMAL}\n[arch]\nsource = \"explicit\"\nwidht = 3\ndepth = 2\nsparsity = 4\n");
        let m = messages(&text);
        assert!(m.iter().any(|e| e.contains("`arch.widht`") && e.contains("did you mean `width`")), "{m:?}");
        let m = messages(&format!("seedz = [1]\n{MINIMAL}"));
        assert!(m[0].contains("did you mean `seeds`"));
        let m = messages(&format!("{MINIMAL}\n[train]\nzzz = 1\n"));
        assert!(m[0].contains("expected one of"));
    }

    #[test]
    fn all_violations_are_reported() {
        let text = r#"
[model]
kind = "confined"
recipe = "nope"
[grid]
cells = [[10, 0.01]]
[train]
steps = 0
[risk]
copies = 1
"#;
        let m = messages(text);
        assert!(m.len() >= 4, "{m:?}");
        let joined = Error::Config(m).to_string();
        assert!(joined.contains("recipe") && joined.contains("copies") && joined.contains("nΔ ≥ 2"));
    }

    #[test]
    fn edit_distance_counts_transpositions_once() {
        assert_eq!(edit_distance("widht", "width"), 1);
        assert_eq!(edit_distance("steps", "steps"), 0);
        assert_eq!(edit_distance("seed", "seeds"), 1);
        assert_eq!(edit_distance("abc", "xyz"), 3);
    }
}

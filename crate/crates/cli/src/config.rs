//! Config layering: built-in defaults, then an optional JSON file, then flags.

use std::fmt;
use std::path::Path;

use fdi::candlib::{compact_library_1d, standard_library, LibrarySpec};
use fdi::deriv::DiffMethod;
use fdi::field::{read_field, read_sidecar, Field};
use fdi::freqsys::CutoffSpec;
use fdi::ident::{CoefScale, Domain, PipelineConfig, SelectionPolicy, Selector, StlmStop};
use fdi::synth::{EquationSpec, GridSpec, NoiseSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{DataKind, DiffKind, DomainKind, MethodKind, PolicyKind, ScaleKind, SelectorArgs, SystemArgs};

pub const ST_RIDGE_LAMBDA: f64 = 1e-5;
pub const ST_RIDGE_TOL: f64 = 0.1;
pub const ST_RIDGE_MAX_ITER: usize = 25;

#[derive(Debug)]
pub enum CliError {
    /// Bad flag or config value; exit code 1.
    Usage(String),
    /// Numerical or pipeline failure; exit code 2.
    Pipeline(fdi::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

impl From<fdi::Error> for CliError {
    fn from(e: fdi::Error) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(flag: &str, msg: impl fmt::Display) -> CliError {
    CliError::Usage(format!("{flag}: {msg}"))
}

/// Reads a config file. An output JSON with a `config` block is accepted
/// as well, so any run can be repeated from its own output.
pub fn load_config_file(path: Option<&Path>) -> CliResult<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| usage("--config", format!("{}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| usage("--config", e))?;
    if !v.is_object() {
        return Err(usage("--config", "expected a JSON object"));
    }
    if let Some(inner) = v.get_mut("config") {
        v = inner.take();
    }
    Ok(Some(v))
}

pub fn file_value<T: DeserializeOwned>(file: Option<&Value>, key: &str) -> CliResult<Option<T>> {
    match file.and_then(|f| f.get(key)) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| usage("--config", format!("`{key}`: {e}"))),
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `defaults` overlaid with the file's `key` object.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: T, file: Option<&Value>, key: &str) -> CliResult<T> {
    let Some(over) = file.and_then(|f| f.get(key)) else {
        return Ok(defaults);
    };
    let mut v = serde_json::to_value(&defaults)?;
    merge(&mut v, over);
    serde_json::from_value(v).map_err(|e| usage("--config", format!("`{key}`: {e}")))
}

/// Metadata written next to every bundle.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Sidecar {
    pub catalog_version: u32,
    pub equation: Option<EquationSpec>,
    pub grid: Option<GridSpec>,
    /// Noise injections applied since the solver, in order.
    #[serde(default)]
    pub noise: Vec<NoiseSpec>,
    /// Echoed config of every command that produced the bundle.
    #[serde(default)]
    pub steps: Vec<Value>,
}

impl Sidecar {
    pub fn noisy(&self) -> bool {
        self.noise.iter().any(|n| n.alpha > 0.0)
    }
}

pub fn open_input(path: &Path, flag: &str) -> CliResult<(Field, Option<Sidecar>)> {
    if !path.exists() {
        return Err(usage(flag, format!("{} does not exist", path.display())));
    }
    let field = read_field(path)?;
    let sidecar = match read_sidecar(path)? {
        Some(v) => Some(serde_json::from_value(v).map_err(|e| {
            CliError::Pipeline(fdi::Error::Config(format!("unreadable sidecar of {}: {e}", path.display())))
        })?),
        None => None,
    };
    Ok((field, sidecar))
}

pub fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| usage(flag, "required (flag or config file)"))
}

/// Whether differentiation defaults should assume noise.
pub fn resolve_noisy(flag: Option<DataKind>, file: Option<bool>, sidecar: Option<&Sidecar>) -> bool {
    match flag {
        Some(d) => d == DataKind::Noisy,
        None => file.unwrap_or_else(|| sidecar.map(Sidecar::noisy).unwrap_or(true)),
    }
}

fn library_from_arg(arg: &str) -> CliResult<LibrarySpec> {
    let lib = match arg {
        "1d" => standard_library(1),
        "2d" => standard_library(2),
        "3d" => standard_library(3),
        "compact" => Ok(compact_library_1d()),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| usage("--library", format!("{path}: {e}")))?;
            LibrarySpec::from_json(&text)
        }
    };
    lib.map_err(|e| usage("--library", e))
}

fn cutoff(modes: &[usize]) -> CutoffSpec {
    CutoffSpec::new(modes.to_vec())
}

/// Applies differentiation and assembly flags on top of `cfg`.
pub fn apply_system_args(cfg: &mut PipelineConfig, a: &SystemArgs) -> CliResult<()> {
    if let Some(lib) = &a.library {
        let order = cfg.library.lhs_order;
        cfg.library = library_from_arg(lib)?;
        // A library file carries its own order; named libraries keep the
        // order already in effect.
        if matches!(lib.as_str(), "1d" | "2d" | "3d" | "compact") {
            cfg.library.lhs_order = order;
        }
    }
    if let Some(o) = a.lhs_order {
        if o == 0 {
            return Err(usage("--lhs-order", "must be at least 1"));
        }
        cfg.library.lhs_order = o;
    }
    if let Some(d) = a.diff {
        cfg.diff.method = match d {
            DiffKind::Fd => DiffMethod::FiniteDifference,
            DiffKind::Poly => DiffMethod::LocalPolynomial,
        };
    }
    if let Some(p) = a.fd_order {
        cfg.diff.fd_order_of_accuracy = p;
    }
    if let Some(d) = a.poly_degree {
        cfg.diff.poly_degree = d;
    }
    if let Some(w) = a.poly_window {
        cfg.diff.poly_window = w;
    }
    if let Some(s) = a.stride {
        cfg.diff.step_stride = s;
    }
    if let Some(d) = a.domain {
        cfg.domain = match d {
            DomainKind::Freq => Domain::Freq,
            DomainKind::Timespace => Domain::Timespace,
            DomainKind::Lowpass => Domain::LowpassThenTimespace,
        };
    }
    if let Some(c) = &a.cutoff {
        cfg.cutoff = Some(cutoff(c));
    }
    if let Some(c) = &a.lowpass_cutoff {
        cfg.lowpass_cutoff = Some(cutoff(c));
    }
    if let Some(s) = a.timespace_stride {
        if s == 0 {
            return Err(usage("--timespace-stride", "must be at least 1"));
        }
        cfg.timespace_stride = Some(s);
    }
    if a.no_normalize {
        cfg.normalize = false;
    }
    if a.allow_few_rows {
        cfg.allow_few_rows = true;
    }
    Ok(())
}

/// Rebuilds the selector when any selection flag is present. Parameters not
/// given on the command line are kept from the current selector of the same
/// kind.
pub fn apply_selector_args(cfg: &mut PipelineConfig, a: &SelectorArgs) -> CliResult<()> {
    let touched = a.method.is_some()
        || a.policy.is_some()
        || a.k.is_some()
        || a.min_q.is_some()
        || a.threshold.is_some()
        || a.scale.is_some()
        || a.lambda.is_some()
        || a.tol.is_some()
        || a.max_iter.is_some()
        || a.terms.is_some();
    if !touched {
        return Ok(());
    }
    let current = cfg.selector.clone();
    let method = a.method.unwrap_or(match current {
        Selector::Csr { .. } => MethodKind::Csr,
        Selector::Stlm { .. } => MethodKind::Stlm,
        Selector::StRidge { .. } => MethodKind::StRidge,
        Selector::Known { .. } => MethodKind::Known,
    });
    let stray = |flag: &str, set: bool, allowed: &[MethodKind]| -> CliResult<()> {
        if set && !allowed.contains(&method) {
            return Err(usage(flag, format!("does not apply to --method {}", method_name(method))));
        }
        Ok(())
    };
    stray("--policy", a.policy.is_some(), &[MethodKind::Csr])?;
    stray("--min-q", a.min_q.is_some(), &[MethodKind::Csr])?;
    stray("--k", a.k.is_some(), &[MethodKind::Csr, MethodKind::Stlm])?;
    stray("--threshold", a.threshold.is_some(), &[MethodKind::Stlm])?;
    stray("--scale", a.scale.is_some(), &[MethodKind::Stlm])?;
    stray("--lambda", a.lambda.is_some(), &[MethodKind::StRidge])?;
    stray("--tol", a.tol.is_some(), &[MethodKind::StRidge])?;
    stray("--max-iter", a.max_iter.is_some(), &[MethodKind::StRidge])?;
    stray("--terms", a.terms.is_some(), &[MethodKind::Known])?;

    cfg.selector = match method {
        MethodKind::Csr => {
            let cur = match &current {
                Selector::Csr { policy } => policy.clone(),
                _ => SelectionPolicy::Gap,
            };
            let kind = a.policy.unwrap_or(if a.k.is_some() {
                PolicyKind::Fixed
            } else if a.min_q.is_some() {
                PolicyKind::Threshold
            } else {
                match cur {
                    SelectionPolicy::Gap => PolicyKind::Gap,
                    SelectionPolicy::FixedK { .. } => PolicyKind::Fixed,
                    SelectionPolicy::Threshold { .. } => PolicyKind::Threshold,
                }
            });
            let policy = match kind {
                PolicyKind::Gap => {
                    if a.k.is_some() || a.min_q.is_some() {
                        return Err(usage("--policy", "gap takes neither --k nor --min-q"));
                    }
                    SelectionPolicy::Gap
                }
                PolicyKind::Fixed => {
                    let k = a.k.or(match cur {
                        SelectionPolicy::FixedK { k } => Some(k),
                        _ => None,
                    });
                    SelectionPolicy::FixedK {
                        k: required(k, "--k")?,
                    }
                }
                PolicyKind::Threshold => {
                    let q = a.min_q.or(match cur {
                        SelectionPolicy::Threshold { min_q } => Some(min_q),
                        _ => None,
                    });
                    SelectionPolicy::Threshold {
                        min_q: required(q, "--min-q")?,
                    }
                }
            };
            Selector::Csr { policy }
        }
        MethodKind::Stlm => {
            let (cur_stop, cur_scale) = match current {
                Selector::Stlm { stop, scale } => (Some(stop), scale),
                _ => (None, CoefScale::Physical),
            };
            let stop = match (a.k, a.threshold) {
                (Some(_), Some(_)) => return Err(usage("--threshold", "conflicts with --k")),
                (Some(k), None) => StlmStop::Keep(k),
                (None, Some(t)) => StlmStop::Threshold(t),
                (None, None) => cur_stop.ok_or_else(|| usage("--method stlm", "needs --k or --threshold"))?,
            };
            let scale = match a.scale {
                Some(ScaleKind::Physical) => CoefScale::Physical,
                Some(ScaleKind::Normalized) => CoefScale::Normalized,
                None => cur_scale,
            };
            Selector::Stlm { stop, scale }
        }
        MethodKind::StRidge => {
            let (l0, t0, m0) = match current {
                Selector::StRidge { lambda, tol, max_iter } => (lambda, tol, max_iter),
                _ => (ST_RIDGE_LAMBDA, ST_RIDGE_TOL, ST_RIDGE_MAX_ITER),
            };
            Selector::StRidge {
                lambda: a.lambda.unwrap_or(l0),
                tol: a.tol.unwrap_or(t0),
                max_iter: a.max_iter.unwrap_or(m0),
            }
        }
        MethodKind::Known => {
            let cur = match current {
                Selector::Known { terms } => Some(terms),
                _ => None,
            };
            Selector::Known {
                terms: required(a.terms.clone().or(cur), "--terms")?,
            }
        }
    };
    Ok(())
}

fn method_name(m: MethodKind) -> &'static str {
    match m {
        MethodKind::Csr => "csr",
        MethodKind::Stlm => "stlm",
        MethodKind::StRidge => "st-ridge",
        MethodKind::Known => "known",
    }
}

/// Checks every pipeline setting against the data before any work starts,
/// naming the responsible flag.
pub fn validate_pipeline(cfg: &PipelineConfig, field: &Field) -> CliResult<()> {
    let lib = &cfg.library;
    lib.validate().map_err(|e| usage("--library", e))?;
    if lib.lhs_order == 0 {
        return Err(usage("--lhs-order", "must be at least 1"));
    }
    for axis in lib.axes() {
        if field.axis_of(axis).is_none() {
            return Err(usage("--library", format!("data have no `{axis}` axis")));
        }
    }
    let d = &cfg.diff;
    if d.step_stride == 0 {
        return Err(usage("--stride", "must be at least 1"));
    }
    let flags = match d.method {
        DiffMethod::FiniteDifference => "--fd-order",
        DiffMethod::LocalPolynomial => "--poly-degree/--poly-window",
    };
    let max_order = lib
        .terms
        .iter()
        .filter_map(|t| t.derivative().map(|(_, o)| o))
        .chain([lib.lhs_order])
        .max()
        .unwrap_or(1);
    for o in 1..=max_order as usize {
        d.validate(o).map_err(|e| usage(flags, e))?;
    }
    let dims = field.dims();
    if cfg.domain == Domain::Freq {
        cfg.effective_cutoff(field).validate(dims).map_err(|e| usage("--cutoff", e))?;
    }
    if let Some(c) = &cfg.lowpass_cutoff {
        c.validate(dims).map_err(|e| usage("--lowpass-cutoff", e))?;
    }
    if cfg.timespace_stride == Some(0) {
        return Err(usage("--timespace-stride", "must be at least 1"));
    }
    validate_selector(&cfg.selector, lib)
}

fn validate_selector(sel: &Selector, lib: &LibrarySpec) -> CliResult<()> {
    let n = lib.len();
    match sel {
        Selector::Csr { policy } => match policy {
            SelectionPolicy::FixedK { k } if *k == 0 || *k > n => {
                Err(usage("--k", format!("must lie in 1..={n} for this library")))
            }
            SelectionPolicy::Threshold { min_q } if !(min_q.is_finite() && *min_q >= 0.0) => {
                Err(usage("--min-q", "must be finite and non-negative"))
            }
            _ => Ok(()),
        },
        Selector::Stlm { stop, .. } => match stop {
            StlmStop::Keep(k) if *k == 0 || *k > n => Err(usage("--k", format!("must lie in 1..={n} for this library"))),
            StlmStop::Threshold(t) if !(t.is_finite() && *t >= 0.0) => {
                Err(usage("--threshold", "must be finite and non-negative"))
            }
            _ => Ok(()),
        },
        Selector::StRidge { lambda, tol, max_iter } => {
            if !(lambda.is_finite() && *lambda >= 0.0) {
                return Err(usage("--lambda", "must be finite and non-negative"));
            }
            if !(tol.is_finite() && *tol >= 0.0) {
                return Err(usage("--tol", "must be finite and non-negative"));
            }
            if *max_iter == 0 {
                return Err(usage("--max-iter", "must be at least 1"));
            }
            Ok(())
        }
        Selector::Known { terms } => {
            let names = lib.names();
            match terms.iter().find(|t| !names.contains(t)) {
                Some(t) => Err(usage("--terms", format!("`{t}` is not in the library"))),
                None if terms.is_empty() => Err(usage("--terms", "no terms given")),
                None => Ok(()),
            }
        }
    }
}

pub fn validate_alphas(alphas: &[f64]) -> CliResult<()> {
    if alphas.is_empty() {
        return Err(usage("--alphas", "empty grid"));
    }
    if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(usage("--alphas", "values must be finite and non-negative"));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--alphas", "values must be strictly ascending"));
    }
    Ok(())
}

pub fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

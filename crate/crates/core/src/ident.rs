//! Least squares, support-rate term selection, sequential thresholding
//! baselines and the end-to-end identification pipeline.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candlib::{evaluate_library, standard_library, LibrarySpec, TermDescriptor};
use crate::deriv::DiffConfig;
use crate::error::StageExt;
use crate::field::Field;
use crate::freqsys::{
    assemble_freq_system_with, assemble_timespace_system_with, lowpass_filter, AssemblyOptions, CutoffSpec,
    FreqSystem, RealSystem,
};
use crate::{Error, Result};

/// Relative singular-value floor of every least-squares solve.
pub const SVD_FLOOR: f64 = 1e-12;

const REFINE_STEPS: usize = 2;

/// Real least-squares system. Columns are usually unit-norm;
/// `column_norms` maps normalized coefficients back to physical scale.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub column_names: Vec<String>,
    pub column_norms: Vec<f64>,
    pub lhs_order: u32,
}

impl LinearSystem {
    /// Normalizes each column of `matrix` to unit 2-norm. Zero columns are
    /// left as they are.
    pub fn from_raw(mut matrix: DMatrix<f64>, rhs: DVector<f64>, column_names: Vec<String>) -> Self {
        let column_norms: Vec<f64> = matrix
            .column_iter_mut()
            .map(|mut c| {
                let n = c.norm();
                if n > 0.0 {
                    c /= n;
                }
                n
            })
            .collect();
        LinearSystem {
            matrix,
            rhs,
            column_names,
            column_norms,
            lhs_order: 1,
        }
    }

    /// Complex system turned real by stacking real parts over imaginary
    /// parts, then normalized like [`LinearSystem::from_raw`].
    pub fn from_complex_raw(
        matrix: &DMatrix<num_complex::Complex64>,
        rhs: &DVector<num_complex::Complex64>,
        column_names: Vec<String>,
    ) -> Self {
        let (a, b) = stack_complex(matrix, rhs);
        Self::from_raw(a, b, column_names)
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    fn to_physical(&self, idx: usize, normalized: f64) -> f64 {
        let n = self.column_norms[idx];
        if n > 0.0 {
            normalized / n
        } else {
            0.0
        }
    }
}

fn stack_complex(
    matrix: &DMatrix<num_complex::Complex64>,
    rhs: &DVector<num_complex::Complex64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, n) = matrix.shape();
    let a = DMatrix::from_fn(2 * m, n, |r, c| {
        if r < m {
            matrix[(r, c)].re
        } else {
            matrix[(r - m, c)].im
        }
    });
    let b = DVector::from_fn(2 * m, |r, _| if r < m { rhs[r].re } else { rhs[r - m].im });
    (a, b)
}

impl From<&FreqSystem> for LinearSystem {
    fn from(sys: &FreqSystem) -> Self {
        let (matrix, rhs) = stack_complex(&sys.matrix, &sys.rhs);
        LinearSystem {
            matrix,
            rhs,
            column_names: sys.column_names.clone(),
            column_norms: sys.column_norms.clone(),
            lhs_order: sys.lhs_order,
        }
    }
}

impl From<&RealSystem> for LinearSystem {
    fn from(sys: &RealSystem) -> Self {
        LinearSystem {
            matrix: sys.matrix.clone(),
            rhs: sys.rhs.clone(),
            column_names: sys.column_names.clone(),
            column_norms: sys.column_norms.clone(),
            lhs_order: sys.lhs_order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Physical-scale coefficients.
    pub values: Vec<f64>,
    /// Coefficients of the normalized columns.
    pub normalized: Vec<f64>,
    /// 2-norm of the residual.
    pub residual: f64,
    /// Ratio of extreme singular values (infinite when rank deficient).
    pub condition: f64,
}

struct Solve {
    x: DVector<f64>,
    residual: f64,
    condition: f64,
}

/// Minimum-norm least squares through the SVD.
fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Solve> {
    let n = a.ncols();
    if n == 0 {
        return Ok(Solve {
            x: DVector::zeros(0),
            residual: b.norm(),
            condition: 1.0,
        });
    }
    let svd = a.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    if smax == 0.0 || !smax.is_finite() {
        return Err(Error::DegenerateSystem(format!(
            "{}x{} matrix is zero or non-finite",
            a.nrows(),
            n
        )));
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let floor = smax * SVD_FLOOR;
    let apply_pinv = |r: &DVector<f64>| -> DVector<f64> {
        let mut y = u.tr_mul(r);
        for i in 0..s.len() {
            y[i] = if s[i] > floor { y[i] / s[i] } else { 0.0 };
        }
        vt.tr_mul(&y)
    };
    // The factors are only accurate to about 1e-11; refinement against the
    // residual recovers working precision.
    let mut x = apply_pinv(b);
    for _ in 0..REFINE_STEPS {
        let r = b - a * &x;
        x += apply_pinv(&r);
    }
    let smin = s.min();
    let condition = if smin > floor && s.len() == n { smax / smin } else { f64::INFINITY };
    let residual = (a * &x - b).norm();
    Ok(Solve { x, residual, condition })
}

pub fn lstsq(sys: &LinearSystem) -> Result<Coefficients> {
    if sys.rows() == 0 {
        return Err(Error::DegenerateSystem("system has no rows".into()));
    }
    let s = solve(&sys.matrix, &sys.rhs)?;
    let normalized: Vec<f64> = s.x.iter().copied().collect();
    Ok(Coefficients {
        values: normalized.iter().enumerate().map(|(i, &v)| sys.to_physical(i, v)).collect(),
        normalized,
        residual: s.residual,
        condition: s.condition,
    })
}

fn without_column(a: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    a.clone().remove_column(i)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportRates {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    /// Set when no column moved the solution; `values` is then uniform.
    pub degenerate: bool,
}

impl SupportRates {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_map(&self) -> IndexMap<String, f64> {
        self.names.iter().cloned().zip(self.values.iter().copied()).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Candidate support rates: for each column, the total change of the
/// remaining normalized coefficients when that column is deleted,
/// normalized to sum to one.
pub fn support_rates(sys: &LinearSystem) -> Result<SupportRates> {
    let n = sys.cols();
    if sys.rows() < n {
        return Err(Error::DegenerateSystem(format!("{} rows for {} columns", sys.rows(), n)));
    }
    let full = solve(&sys.matrix, &sys.rhs)?.x;
    let q: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let reduced = solve(&without_column(&sys.matrix, i), &sys.rhs)?.x;
            Ok((0..n)
                .filter(|&j| j != i)
                .zip(reduced.iter())
                .map(|(j, r)| (full[j] - r).abs())
                .sum())
        })
        .collect::<Result<_>>()?;
    let total: f64 = q.iter().sum();
    let (values, degenerate) = if total > 0.0 && total.is_finite() {
        (q.iter().map(|v| v / total).collect(), false)
    } else {
        (vec![1.0 / n as f64; n], true)
    };
    Ok(SupportRates {
        values,
        names: sys.column_names.clone(),
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Cut at the largest ratio between consecutive sorted rates.
    Gap,
    FixedK { k: usize },
    Threshold { min_q: f64 },
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::Gap
    }
}

/// Maximum number of terms the gap rule may select.
pub const GAP_MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected column indices in library order.
    pub indices: Vec<usize>,
    /// True when equal rates straddled the cut and library order decided.
    pub tie_broken: bool,
}

pub fn select_terms(q: &SupportRates, policy: &SelectionPolicy) -> Result<Selection> {
    let n = q.len();
    if n == 0 {
        return Err(Error::Selection("no candidate terms".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| q.values[b].total_cmp(&q.values[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| q.values[i]).collect();
    let (count, mut tie_broken) = match policy {
        SelectionPolicy::Gap => {
            if q.degenerate {
                return Err(Error::Selection("support rates are degenerate; no gap to cut".into()));
            }
            if n == 1 {
                (1, false)
            } else {
                let ratio = |r: usize| -> f64 {
                    let (hi, lo) = (sorted[r - 1], sorted[r]);
                    if lo > 0.0 {
                        hi / lo
                    } else if hi > 0.0 {
                        f64::INFINITY
                    } else {
                        1.0
                    }
                };
                let ranks = 1..=(n - 1).min(GAP_MAX_RANK);
                let best = ranks.clone().map(ratio).fold(f64::NEG_INFINITY, f64::max);
                let hits: Vec<usize> = ranks.filter(|&r| ratio(r) == best).collect();
                (hits[0], hits.len() > 1)
            }
        }
        SelectionPolicy::FixedK { k } => {
            if *k == 0 || *k > n {
                return Err(Error::Selection(format!("cannot keep {k} of {n} terms")));
            }
            (*k, false)
        }
        SelectionPolicy::Threshold { min_q } => {
            let count = sorted.iter().take_while(|&&v| v >= *min_q).count();
            if count == 0 {
                return Err(Error::Selection(format!("no support rate reaches {min_q}")));
            }
            (count, false)
        }
    };
    if count < n && sorted[count - 1] == sorted[count] {
        tie_broken = true;
    }
    let mut indices = order[..count].to_vec();
    indices.sort_unstable();
    Ok(Selection { indices, tie_broken })
}

fn sub_system(sys: &LinearSystem, indices: &[usize]) -> DMatrix<f64> {
    sys.matrix.select_columns(indices)
}

/// Least squares on the selected columns; coefficients align with `indices`.
pub fn fit_selected(sys: &LinearSystem, indices: &[usize]) -> Result<Coefficients> {
    if indices.is_empty() {
        return Err(Error::Selection("no terms to fit".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= sys.cols()) {
        return Err(Error::Selection(format!("term index {bad} out of range")));
    }
    let s = solve(&sub_system(sys, indices), &sys.rhs)?;
    let normalized: Vec<f64> = s.x.iter().copied().collect();
    Ok(Coefficients {
        values: indices.iter().zip(&normalized).map(|(&i, &v)| sys.to_physical(i, v)).collect(),
        normalized,
        residual: s.residual,
        condition: s.condition,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StlmStop {
    /// Delete until this many columns remain.
    Keep(usize),
    /// Delete while some coefficient magnitude is below the threshold.
    Threshold(f64),
}

/// Scale on which sequential thresholding compares coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefScale {
    /// Coefficients of the un-normalized columns.
    #[default]
    Physical,
    Normalized,
}

/// Outcome of a sequential thresholding baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    pub indices: Vec<usize>,
    pub coefficients: Coefficients,
    pub iterations: usize,
    /// False when `st_ridge` hit its iteration limit.
    pub converged: bool,
    /// Every coefficient fell below the threshold.
    pub empty: bool,
}

/// Sequential threshold least squares: repeatedly drop the column with the
/// smallest coefficient magnitude on `scale` and re-solve.
pub fn stlm(sys: &LinearSystem, stop: StlmStop, scale: CoefScale) -> Result<SparseFit> {
    let mut active: Vec<usize> = (0..sys.cols()).collect();
    if let StlmStop::Keep(k) = stop {
        if k == 0 || k > active.len() {
            return Err(Error::Selection(format!("cannot keep {k} of {} terms", active.len())));
        }
    }
    let mut iterations = 0;
    loop {
        let fit = fit_selected(sys, &active)?;
        let magnitude = |j: usize| match scale {
            CoefScale::Physical => fit.values[j].abs(),
            CoefScale::Normalized => fit.normalized[j].abs(),
        };
        let smallest = (0..active.len())
            .min_by(|&a, &b| magnitude(a).total_cmp(&magnitude(b)))
            .expect("active set is non-empty");
        let done = match stop {
            StlmStop::Keep(k) => active.len() <= k,
            StlmStop::Threshold(t) => magnitude(smallest) >= t,
        };
        if done {
            return Ok(SparseFit {
                indices: active,
                coefficients: fit,
                iterations,
                converged: true,
                empty: false,
            });
        }
        if active.len() == 1 {
            return Ok(SparseFit {
                indices: Vec::new(),
                coefficients: Coefficients {
                    values: Vec::new(),
                    normalized: Vec::new(),
                    residual: sys.rhs.norm(),
                    condition: 1.0,
                },
                iterations: iterations + 1,
                converged: true,
                empty: true,
            });
        }
        active.remove(smallest);
        iterations += 1;
    }
}

fn ridge(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<Solve> {
    if lambda == 0.0 {
        return solve(a, b);
    }
    let n = a.ncols();
    let gram = a.tr_mul(a) + DMatrix::<f64>::identity(n, n) * lambda;
    let x = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateSystem("ridge normal matrix is not positive definite".into()))?
        .solve(&a.tr_mul(b));
    let residual = (a * &x - b).norm();
    Ok(Solve {
        x,
        residual,
        condition: f64::NAN,
    })
}

/// Sequential threshold ridge regression on the normalized system.
pub fn st_ridge(sys: &LinearSystem, lambda: f64, tol: f64, max_iter: usize) -> Result<SparseFit> {
    if !(lambda >= 0.0 && tol >= 0.0) {
        return Err(Error::Config("ridge lambda and tolerance must be non-negative".into()));
    }
    let mut active: Vec<usize> = (0..sys.cols()).collect();
    let mut iterations = 0;
    loop {
        let s = ridge(&sub_system(sys, &active), &sys.rhs, lambda)?;
        let keep: Vec<usize> = (0..active.len()).filter(|&j| s.x[j].abs() >= tol).collect();
        let fixed = keep.len() == active.len();
        if fixed || keep.is_empty() || iterations >= max_iter {
            let empty = keep.is_empty() && !active.is_empty() && !fixed;
            if empty {
                return Ok(SparseFit {
                    indices: Vec::new(),
                    coefficients: Coefficients {
                        values: Vec::new(),
                        normalized: Vec::new(),
                        residual: sys.rhs.norm(),
                        condition: 1.0,
                    },
                    iterations,
                    converged: true,
                    empty: true,
                });
            }
            let normalized: Vec<f64> = s.x.iter().copied().collect();
            let condition = if lambda == 0.0 { s.condition } else { lstsq_condition(sys, &active) };
            return Ok(SparseFit {
                coefficients: Coefficients {
                    values: active.iter().zip(&normalized).map(|(&i, &v)| sys.to_physical(i, v)).collect(),
                    normalized,
                    residual: s.residual,
                    condition,
                },
                indices: active,
                iterations,
                converged: fixed,
                empty: false,
            });
        }
        active = keep.into_iter().map(|j| active[j]).collect();
        iterations += 1;
    }
}

fn lstsq_condition(sys: &LinearSystem, indices: &[usize]) -> f64 {
    let s = sub_system(sys, indices).singular_values();
    let (max, min) = (s.max(), s.min());
    if min > max * SVD_FLOOR {
        max / min
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    Freq,
    Timespace,
    LowpassThenTimespace,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Freq => "freq",
            Domain::Timespace => "timespace",
            Domain::LowpassThenTimespace => "lowpass_then_timespace",
        }
    }
}

/// Term selection strategy of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    Csr { policy: SelectionPolicy },
    Stlm {
        stop: StlmStop,
        #[serde(default)]
        scale: CoefScale,
    },
    StRidge { lambda: f64, tol: f64, max_iter: usize },
    /// Fit a fixed structure given by term names.
    Known { terms: Vec<String> },
}

impl Default for Selector {
    fn default() -> Self {
        Selector::Csr {
            policy: SelectionPolicy::Gap,
        }
    }
}

impl Selector {
    pub fn tag(&self) -> &'static str {
        match self {
            Selector::Csr { .. } => "csr",
            Selector::Stlm { .. } => "stlm",
            Selector::StRidge { .. } => "st_ridge",
            Selector::Known { .. } => "known",
        }
    }
}

/// Target number of rows for automatically strided time-space systems.
pub const TIMESPACE_TARGET_ROWS: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub library: LibrarySpec,
    pub diff: DiffConfig,
    /// Frequency block; defaults per spatial dimension.
    pub cutoff: Option<CutoffSpec>,
    pub selector: Selector,
    pub domain: Domain,
    pub normalize: bool,
    /// Sampling stride of time-space systems; chosen from the row target
    /// when absent.
    pub timespace_stride: Option<usize>,
    /// Filter block of the low-pass baseline.
    pub lowpass_cutoff: Option<CutoffSpec>,
    pub allow_few_rows: bool,
}

impl PipelineConfig {
    pub fn new(library: LibrarySpec, diff: DiffConfig) -> Self {
        PipelineConfig {
            library,
            diff,
            cutoff: None,
            selector: Selector::default(),
            domain: Domain::Freq,
            normalize: true,
            timespace_stride: None,
            lowpass_cutoff: None,
            allow_few_rows: false,
        }
    }

    /// Standard library and default differentiation for data of the given
    /// dimensionality.
    pub fn default_for(spatial_dims: usize, lhs_order: u32, noisy: bool) -> Result<Self> {
        let library = standard_library(spatial_dims)?.with_lhs_order(lhs_order);
        Ok(Self::new(library, DiffConfig::default_for(spatial_dims, noisy)))
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_selector(mut self, selector: Selector) -> Self {
        self.selector = selector;
        self
    }

    pub fn with_cutoff(mut self, cutoff: CutoffSpec) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn effective_cutoff(&self, f: &Field) -> CutoffSpec {
        self.cutoff.clone().unwrap_or_else(|| CutoffSpec::default_for(f.spatial_dims()))
    }

    fn options(&self) -> AssemblyOptions {
        AssemblyOptions {
            normalize: self.normalize,
            allow_few_rows: self.allow_few_rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedTerm {
    pub term: String,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentResult {
    pub method: String,
    pub domain: Domain,
    pub selected: Vec<SelectedTerm>,
    /// Full-library rates; empty for selectors that do not compute them.
    pub support_rates: IndexMap<String, f64>,
    pub residual: f64,
    pub condition: f64,
    pub lhs_order: u32,
    pub tie_broken: bool,
    pub config: PipelineConfig,
    pub equation_string: String,
}

impl IdentResult {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.selected.iter().find(|s| s.term == term).map(|s| s.coefficient)
    }

    pub fn selected_names(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.term.as_str()).collect()
    }
}

/// Renders `u_t = -1.0000*u*u_x + 0.0500*u_xx`.
pub fn equation_string(lhs_order: u32, terms: &[SelectedTerm]) -> String {
    let lhs = format!("u_{}", "t".repeat(lhs_order.max(1) as usize));
    if terms.is_empty() {
        return format!("{lhs} = 0");
    }
    let mut out = format!("{lhs} = ");
    for (i, t) in terms.iter().enumerate() {
        let c = t.coefficient;
        if i == 0 {
            out.push_str(&format!("{c:.4}*{}", t.term));
        } else {
            let sign = if c < 0.0 { '-' } else { '+' };
            out.push_str(&format!(" {sign} {:.4}*{}", c.abs(), t.term));
        }
    }
    out
}

/// Builds the linear system of the configured domain.
pub fn build_system(f: &Field, cfg: &PipelineConfig) -> Result<LinearSystem> {
    match cfg.domain {
        Domain::Freq => {
            let lib = evaluate_library(f, &cfg.library, &cfg.diff).stage("library")?;
            let cut = cfg.effective_cutoff(f);
            let sys = assemble_freq_system_with(&lib, &cut, &cfg.options()).stage("assembly")?;
            Ok(LinearSystem::from(&sys))
        }
        Domain::Timespace | Domain::LowpassThenTimespace => {
            let filtered;
            let source = if cfg.domain == Domain::LowpassThenTimespace {
                let cut = cfg
                    .lowpass_cutoff
                    .clone()
                    .unwrap_or_else(|| CutoffSpec::lowpass_default_for(f.spatial_dims()));
                filtered = lowpass_filter(f, &cut).stage("lowpass")?;
                &filtered
            } else {
                f
            };
            let lib = evaluate_library(source, &cfg.library, &cfg.diff).stage("library")?;
            let stride = cfg.timespace_stride.unwrap_or_else(|| auto_stride(lib.dims()));
            let sys = assemble_timespace_system_with(&lib, stride, &cfg.options()).stage("assembly")?;
            Ok(LinearSystem::from(&sys))
        }
    }
}

/// Smallest stride whose strided grid has at most the target row count.
pub fn auto_stride(dims: &[usize]) -> usize {
    (1..)
        .find(|&s| dims.iter().map(|&n| n.div_ceil(s)).product::<usize>() <= TIMESPACE_TARGET_ROWS)
        .expect("stride search terminates")
}

/// End-to-end identification: library, system, selection, final fit.
pub fn identify(f: &Field, cfg: &PipelineConfig) -> Result<IdentResult> {
    let sys = build_system(f, cfg)?;
    identify_system(&sys, cfg)
}

/// Selection and fit on an already assembled system.
pub fn identify_system(sys: &LinearSystem, cfg: &PipelineConfig) -> Result<IdentResult> {
    let mut rates = IndexMap::new();
    let mut tie_broken = false;
    let (indices, coefs) = match &cfg.selector {
        Selector::Csr { policy } => {
            let q = support_rates(sys).stage("support_rates")?;
            rates = q.as_map();
            let sel = select_terms(&q, policy).stage("selection")?;
            tie_broken = sel.tie_broken;
            let coefs = fit_selected(sys, &sel.indices).stage("fit")?;
            (sel.indices, coefs)
        }
        Selector::Stlm { stop, scale } => {
            let fit = stlm(sys, *stop, *scale).stage("selection")?;
            (fit.indices, fit.coefficients)
        }
        Selector::StRidge { lambda, tol, max_iter } => {
            let fit = st_ridge(sys, *lambda, *tol, *max_iter).stage("selection")?;
            (fit.indices, fit.coefficients)
        }
        Selector::Known { terms } => {
            let indices = terms
                .iter()
                .map(|t| {
                    sys.position(t)
                        .ok_or_else(|| Error::StructureMismatch(format!("term {t} is not in the library")))
                })
                .collect::<Result<Vec<_>>>()
                .stage("selection")?;
            let coefs = fit_selected(sys, &indices).stage("fit")?;
            (indices, coefs)
        }
    };
    let selected: Vec<SelectedTerm> = indices
        .iter()
        .zip(&coefs.values)
        .map(|(&i, &c)| SelectedTerm {
            term: sys.column_names[i].clone(),
            coefficient: c,
        })
        .collect();
    Ok(IdentResult {
        method: cfg.selector.tag().to_string(),
        domain: cfg.domain,
        equation_string: equation_string(sys.lhs_order, &selected),
        selected,
        support_rates: rates,
        residual: coefs.residual,
        condition: coefs.condition,
        lhs_order: sys.lhs_order,
        tie_broken,
        config: cfg.clone(),
    })
}

/// Names of `terms` as rendered in system columns.
pub fn term_names(terms: &[TermDescriptor]) -> Vec<String> {
    terms.iter().map(|t| t.name()).collect()
}

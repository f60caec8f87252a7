//! Scoring, noise-level sweeps and method comparisons.
//!
//! Every trial draws its noise from a seed derived from `(seed_base, alpha
//! index, trial index)`, so reports do not depend on scheduling. Sweeps can
//! persist one JSON record per trial and resume from that file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::freqsys::CutoffSpec;
use crate::ident::{
    build_system, identify, identify_system, CoefScale, Domain, IdentResult, PipelineConfig, SelectionPolicy,
    Selector, StlmStop,
};
use crate::synth::{inject_noise, EquationSpec, NoiseSpec};
use crate::{Error, Result};

/// Finalizer of SplitMix64.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise seed of one trial.
pub fn trial_seed(seed_base: u64, alpha_index: usize, trial: usize) -> u64 {
    mix(mix(mix(seed_base) ^ alpha_index as u64) ^ trial as u64)
}

fn truth_names(truth: &EquationSpec) -> Vec<String> {
    truth.true_terms.iter().map(|t| t.term.name()).collect()
}

/// True iff the selected set equals the true support exactly.
pub fn structure_correct(result: &IdentResult, truth: &EquationSpec) -> bool {
    let mut got: Vec<&str> = result.selected_names();
    got.sort_unstable();
    let names = truth_names(truth);
    let mut want: Vec<&str> = names.iter().map(String::as_str).collect();
    want.sort_unstable();
    got == want
}

/// Relative error of each true term present in `result`.
pub fn term_errors(result: &IdentResult, truth: &EquationSpec) -> IndexMap<String, f64> {
    truth
        .true_terms
        .iter()
        .filter_map(|t| {
            let name = t.term.name();
            let est = result.coefficient(&name)?;
            Some((name, (est - t.coefficient).abs() / t.coefficient.abs()))
        })
        .collect()
}

pub fn mean_relative_error(result: &IdentResult, truth: &EquationSpec) -> Result<f64> {
    if !structure_correct(result, truth) {
        return Err(Error::StructureMismatch(format!(
            "identified `{}` does not match `{}`",
            result.equation_string,
            truth.form()
        )));
    }
    let errs = term_errors(result, truth);
    Ok(errs.values().sum::<f64>() / errs.len() as f64)
}

/// One identification run at one noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub alpha_index: usize,
    pub alpha: f64,
    pub trial: usize,
    pub seed: u64,
    pub structure_correct: bool,
    /// Present iff the structure is correct.
    pub mre: Option<f64>,
    pub term_errors: IndexMap<String, f64>,
    pub coefficients: IndexMap<String, f64>,
    /// Pipeline failure; such a trial counts as incorrect.
    pub error: Option<String>,
}

impl TrialOutcome {
    fn score(alpha_index: usize, alpha: f64, trial: usize, seed: u64, outcome: Result<IdentResult>, truth: &EquationSpec) -> Self {
        let mut out = TrialOutcome {
            alpha_index,
            alpha,
            trial,
            seed,
            structure_correct: false,
            mre: None,
            term_errors: IndexMap::new(),
            coefficients: IndexMap::new(),
            error: None,
        };
        match outcome {
            Ok(r) => {
                out.structure_correct = structure_correct(&r, truth);
                out.mre = mean_relative_error(&r, truth).ok();
                out.term_errors = term_errors(&r, truth);
                out.coefficients = r.selected.iter().map(|s| (s.term.clone(), s.coefficient)).collect();
            }
            Err(e) => out.error = Some(e.to_string()),
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaAggregate {
    pub alpha: f64,
    pub trials: usize,
    pub correct: usize,
    /// Mean MRE over structure-correct trials.
    pub mean_mre: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub equation: String,
    pub alphas: Vec<AlphaAggregate>,
    /// Largest grid point such that it and every smaller one had all trials
    /// correct; absent when the first grid point already fails.
    pub alpha_max: Option<f64>,
    /// Every grid point passed, so the true limit lies beyond the grid.
    pub exceeds_grid: bool,
    pub trials_per_alpha: usize,
    pub seed_base: u64,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<TrialOutcome>,
}

impl SweepReport {
    /// Aggregates recomputed from per-trial records.
    pub fn from_records(
        equation: &str,
        alphas: &[f64],
        trials: usize,
        seed_base: u64,
        config: PipelineConfig,
        mut records: Vec<TrialOutcome>,
    ) -> Self {
        records.sort_by_key(|r| (r.alpha_index, r.trial));
        let aggregates: Vec<AlphaAggregate> = alphas
            .iter()
            .enumerate()
            .map(|(i, &alpha)| {
                let rs: Vec<&TrialOutcome> = records.iter().filter(|r| r.alpha_index == i).collect();
                let mres: Vec<f64> = rs.iter().filter_map(|r| r.mre).collect();
                AlphaAggregate {
                    alpha,
                    trials: rs.len(),
                    correct: rs.iter().filter(|r| r.structure_correct).count(),
                    mean_mre: (!mres.is_empty()).then(|| mres.iter().sum::<f64>() / mres.len() as f64),
                    failures: rs.iter().filter(|r| r.error.is_some()).count(),
                }
            })
            .collect();
        let (alpha_max, exceeds_grid) = prefix_max(&aggregates);
        SweepReport {
            equation: equation.to_string(),
            alphas: aggregates,
            alpha_max,
            exceeds_grid,
            trials_per_alpha: trials,
            seed_base,
            config,
            records,
        }
    }

    /// Summary without per-trial records.
    pub fn summary(&self) -> SweepReport {
        SweepReport {
            records: Vec::new(),
            ..self.clone()
        }
    }

    /// Rows `alpha,trial,structure_correct,mre,coef_<term>...` over the
    /// library terms.
    pub fn to_csv(&self) -> String {
        let terms = self.config.library.names();
        let mut out = String::from("alpha,trial,structure_correct,mre");
        for t in &terms {
            out.push_str(&format!(",coef_{t}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}",
                r.alpha,
                r.trial,
                r.structure_correct,
                r.mre.map(|m| m.to_string()).unwrap_or_default()
            ));
            for t in &terms {
                out.push(',');
                if let Some(c) = r.coefficients.get(t) {
                    out.push_str(&c.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn prefix_max(aggregates: &[AlphaAggregate]) -> (Option<f64>, bool) {
    let mut best = None;
    for a in aggregates {
        if a.trials == 0 || a.correct < a.trials {
            return (best, false);
        }
        best = Some(a.alpha);
    }
    (best, !aggregates.is_empty())
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed_base: u64,
    /// JSON-lines file of per-trial records; existing records are reused.
    pub records_path: Option<std::path::PathBuf>,
}

fn check_grid(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::Config("alpha values must be finite and non-negative".into()));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("alpha grid must be strictly ascending".into()));
    }
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<TrialOutcome>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted run is simply recomputed.
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) if e.is_eof() => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Runs `trials` identifications per noise level on noisy copies of `clean`.
pub fn alpha_sweep(
    clean: &Field,
    truth: &EquationSpec,
    cfg: &PipelineConfig,
    alphas: &[f64],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    check_grid(alphas)?;
    if opts.trials == 0 {
        return Err(Error::Config("trial count must be positive".into()));
    }
    let mut done: BTreeMap<(usize, usize), TrialOutcome> = BTreeMap::new();
    if let Some(path) = &opts.records_path {
        for r in load_records(path)? {
            let fresh = r.alpha_index < alphas.len()
                && r.alpha == alphas[r.alpha_index]
                && r.trial < opts.trials
                && r.seed == trial_seed(opts.seed_base, r.alpha_index, r.trial);
            if fresh {
                done.insert((r.alpha_index, r.trial), r);
            }
        }
    }
    let sink = match &opts.records_path {
        Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let pending: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|i| (0..opts.trials).map(move |t| (i, t)))
        .filter(|k| !done.contains_key(k))
        .collect();
    let fresh: Vec<TrialOutcome> = pending
        .par_iter()
        .map(|&(i, t)| -> Result<TrialOutcome> {
            let seed = trial_seed(opts.seed_base, i, t);
            let noisy = inject_noise(clean, &NoiseSpec::new(alphas[i], seed));
            let outcome = TrialOutcome::score(i, alphas[i], t, seed, identify(&noisy, cfg), truth);
            if let Some(sink) = &sink {
                let line = serde_json::to_string(&outcome)?;
                let mut f = sink.lock().expect("record sink poisoned");
                writeln!(f, "{line}")?;
            }
            Ok(outcome)
        })
        .collect::<Result<_>>()?;
    let records: Vec<TrialOutcome> = done.into_values().chain(fresh).collect();
    Ok(SweepReport::from_records(
        truth.name.as_str(),
        alphas,
        opts.trials,
        opts.seed_base,
        cfg.clone(),
        records,
    ))
}

/// Mean absolute coefficient error of one method at one noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub alpha: f64,
    pub method: String,
    pub errors: IndexMap<String, f64>,
}

/// One pipeline of a comparison, fitted on the true structure.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub label: String,
    pub domain: Domain,
    pub lowpass_cutoff: Option<CutoffSpec>,
}

impl MethodSpec {
    pub fn freq() -> Self {
        MethodSpec {
            label: "freq".into(),
            domain: Domain::Freq,
            lowpass_cutoff: None,
        }
    }

    pub fn timespace() -> Self {
        MethodSpec {
            label: "timespace".into(),
            domain: Domain::Timespace,
            lowpass_cutoff: None,
        }
    }

    pub fn lowpass(cut: CutoffSpec) -> Self {
        let tag: Vec<String> = cut.modes.iter().map(|k| k.to_string()).collect();
        MethodSpec {
            label: format!("lowpass_{}", tag.join("x")),
            domain: Domain::LowpassThenTimespace,
            lowpass_cutoff: Some(cut),
        }
    }

    /// Frequency domain, time-space domain and the low-pass baseline at
    /// each of `lowpass`.
    pub fn standard(lowpass: &[CutoffSpec]) -> Vec<Self> {
        let mut v = vec![Self::freq(), Self::timespace()];
        v.extend(lowpass.iter().cloned().map(Self::lowpass));
        v
    }
}

/// Fits only the true terms under each method; errors averaged over trials.
pub fn compare_methods(
    clean: &Field,
    truth: &EquationSpec,
    cfg: &PipelineConfig,
    methods: &[MethodSpec],
    alphas: &[f64],
    trials: usize,
    seed_base: u64,
) -> Result<Vec<MethodErrors>> {
    check_grid(alphas)?;
    let known = Selector::Known {
        terms: truth_names(truth),
    };
    let configs: Vec<PipelineConfig> = methods
        .iter()
        .map(|m| {
            let mut c = cfg.clone().with_selector(known.clone()).with_domain(m.domain);
            c.lowpass_cutoff = m.lowpass_cutoff.clone();
            c
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    // Per job: per method, per true term absolute error.
    let per_job: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let noisy = inject_noise(clean, &NoiseSpec::new(alphas[i], trial_seed(seed_base, i, t)));
            configs
                .iter()
                .map(|c| {
                    let r = identify(&noisy, c)?;
                    Ok(truth
                        .true_terms
                        .iter()
                        .map(|tt| (r.coefficient(&tt.term.name()).unwrap_or(0.0) - tt.coefficient).abs())
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;
    let names = truth_names(truth);
    let mut out = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        for (m, method) in methods.iter().enumerate() {
            let mut sums = vec![0.0; names.len()];
            for (j, _) in jobs.iter().enumerate().filter(|(_, (ai, _))| *ai == i) {
                for (s, e) in sums.iter_mut().zip(&per_job[j][m]) {
                    *s += e / trials as f64;
                }
            }
            out.push(MethodErrors {
                alpha,
                method: method.label.clone(),
                errors: names.iter().cloned().zip(sums).collect(),
            });
        }
    }
    Ok(out)
}

/// Rows `alpha,method,err_<term>...`.
pub fn method_errors_csv(rows: &[MethodErrors]) -> String {
    let mut out = String::from("alpha,method");
    if let Some(first) = rows.first() {
        for t in first.errors.keys() {
            out.push_str(&format!(",err_{t}"));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.alpha, r.method));
        for e in r.errors.values() {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub alpha: f64,
    pub trials: usize,
    pub csr_correct: usize,
    pub stlm_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub equation: String,
    pub rows: Vec<RobustnessRow>,
    /// Same prefix definition as `SweepReport::alpha_max`.
    pub csr_alpha_max: Option<f64>,
    pub stlm_alpha_max: Option<f64>,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,trials,csr_correct,stlm_correct\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.alpha, r.trials, r.csr_correct, r.stlm_correct));
        }
        out
    }
}

/// Support-rate selection against sequential thresholding on identical
/// frequency systems, both keeping as many terms as the truth has.
pub fn csr_vs_stlm(
    clean: &Field,
    truth: &EquationSpec,
    cfg: &PipelineConfig,
    alphas: &[f64],
    trials: usize,
    seed_base: u64,
) -> Result<RobustnessReport> {
    check_grid(alphas)?;
    let k = truth.true_terms.len();
    let base = cfg.clone().with_domain(Domain::Freq);
    let csr = base.clone().with_selector(Selector::Csr {
        policy: SelectionPolicy::FixedK { k },
    });
    let stlm = base.clone().with_selector(Selector::Stlm {
        stop: StlmStop::Keep(k),
        scale: CoefScale::Physical,
    });
    let jobs: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let scored: Vec<(bool, bool)> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let noisy = inject_noise(clean, &NoiseSpec::new(alphas[i], trial_seed(seed_base, i, t)));
            let sys = build_system(&noisy, &base)?;
            let ok = |c: &PipelineConfig| identify_system(&sys, c).map(|r| structure_correct(&r, truth));
            Ok((ok(&csr)?, ok(&stlm)?))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<RobustnessRow> = alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let hits = jobs.iter().zip(&scored).filter(|((ai, _), _)| *ai == i).map(|(_, s)| *s);
            let (c, s) = hits.fold((0, 0), |(c, s), (a, b)| (c + a as usize, s + b as usize));
            RobustnessRow {
                alpha,
                trials,
                csr_correct: c,
                stlm_correct: s,
            }
        })
        .collect();
    let prefix = |f: fn(&RobustnessRow) -> usize| {
        let aggs: Vec<AlphaAggregate> = rows
            .iter()
            .map(|r| AlphaAggregate {
                alpha: r.alpha,
                trials: r.trials,
                correct: f(r),
                mean_mre: None,
                failures: 0,
            })
            .collect();
        prefix_max(&aggs).0
    };
    Ok(RobustnessReport {
        equation: truth.name.as_str().to_string(),
        csr_alpha_max: prefix(|r| r.csr_correct),
        stlm_alpha_max: prefix(|r| r.stlm_correct),
        rows,
    })
}

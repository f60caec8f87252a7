use std::path::PathBuf;

use fdi::bench::{alpha_sweep, compare_methods, csr_vs_stlm, method_errors_csv, MethodSpec, SweepOptions};
use fdi::candlib::evaluate_library;
use fdi::field::{write_field, write_sidecar, Field};
use fdi::freqsys::{assemble_freq_system_with, AssemblyOptions, CutoffSpec};
use fdi::ident::{identify, Domain, PipelineConfig};
use fdi::synth::{
    inject_noise, solve_reference, EquationName, EquationSpec, GridSpec, NoiseSpec, CATALOG_VERSION,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{BenchArgs, Command, CompareArgs, IdentifyArgs, NoiseArgs, RobustnessArgs, SweepArgs, SynthArgs, SystemArgs};
use crate::config::*;

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Noise(a) => noise(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::CsrVsStlm(a) => robustness(a),
    }
}

#[derive(Serialize, Deserialize)]
struct SynthConfig {
    equation: EquationName,
    out: PathBuf,
    grid: GridSpec,
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let file = load_config_file(a.config.as_deref())?;
    let f = file.as_ref();
    let equation = required(a.equation.or(file_value(f, "equation")?), "--equation")?;
    let out = required(a.out.or(file_value(f, "out")?), "--out")?;
    let mut grid = layered(GridSpec::default_for(equation), f, "grid")?;
    if let Some(p) = a.points {
        grid.points = p;
    }
    if let Some(e) = a.extents {
        grid.extents = e;
    }
    if let Some(s) = a.substeps {
        grid.substeps = s;
    }
    if let Some(o) = a.oversample {
        grid.oversample = o;
    }
    if let Some(t) = a.t_start {
        grid.t_start = t;
    }
    grid.validate(equation.spatial_dims())
        .map_err(|e| usage("--points/--extents/--substeps/--oversample/--t-start", e))?;

    let eq = EquationSpec::catalog(equation);
    let field = solve_reference(&eq, &grid)?;
    write_field(&field, &out)?;
    let echo = SynthConfig {
        equation,
        out: out.clone(),
        grid: grid.clone(),
    };
    let side = Sidecar {
        catalog_version: CATALOG_VERSION,
        equation: Some(eq.clone()),
        grid: Some(grid),
        noise: Vec::new(),
        steps: vec![json!({ "command": "synth", "config": echo })],
    };
    write_sidecar(&out, &serde_json::to_value(&side)?)?;
    println!("{}: {}", equation, eq.form());
    println!("wrote {} {:?}", out.display(), field.dims());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct NoiseConfig {
    input: PathBuf,
    out: PathBuf,
    noise: NoiseSpec,
}

fn noise(a: NoiseArgs) -> CliResult<()> {
    let file = load_config_file(a.config.as_deref())?;
    let f = file.as_ref();
    let input = required(a.input.or(file_value(f, "input")?), "--in")?;
    let out = required(a.out.or(file_value(f, "out")?), "--out")?;
    let mut spec = layered(NoiseSpec::new(0.0, 0), f, "noise")?;
    if let Some(alpha) = a.alpha {
        spec.alpha = alpha;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| usage("--alpha", e))?;

    let (field, side) = open_input(&input, "--in")?;
    let noisy = inject_noise(&field, &spec);
    write_field(&noisy, &out)?;
    let mut side = side.unwrap_or_default();
    side.noise.push(spec);
    let echo = NoiseConfig {
        input,
        out: out.clone(),
        noise: spec,
    };
    side.steps.push(json!({ "command": "noise", "config": echo }));
    write_sidecar(&out, &serde_json::to_value(&side)?)?;
    println!(
        "wrote {} (alpha {}, seed {}, std(u) {:.6})",
        out.display(),
        spec.alpha,
        spec.seed,
        field.stats().std
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct IdentifyConfig {
    input: PathBuf,
    noisy: bool,
    pipeline: PipelineConfig,
}

fn identify_cmd(a: IdentifyArgs) -> CliResult<()> {
    let file = load_config_file(a.config.as_deref())?;
    let f = file.as_ref();
    let input = required(a.input.or(file_value(f, "input")?), "--in")?;
    let (field, side) = open_input(&input, "--in")?;
    let noisy = resolve_noisy(a.system.data, file_value(f, "noisy")?, side.as_ref());
    let lhs = side
        .as_ref()
        .and_then(|s| s.equation.as_ref())
        .map(|e| e.lhs_order)
        .unwrap_or(1);
    let defaults = PipelineConfig::default_for(field.spatial_dims(), lhs, noisy).map_err(|e| usage("--in", e))?;
    let mut cfg = layered(defaults, f, "pipeline")?;
    apply_system_args(&mut cfg, &a.system)?;
    apply_selector_args(&mut cfg, &a.selector)?;
    validate_pipeline(&cfg, &field)?;

    if let Some(path) = &a.dump_system {
        if cfg.domain != Domain::Freq {
            return Err(usage("--dump-system", "only frequency-domain systems can be dumped"));
        }
        let lib = evaluate_library(&field, &cfg.library, &cfg.diff)?;
        let opts = AssemblyOptions {
            normalize: cfg.normalize,
            allow_few_rows: cfg.allow_few_rows,
        };
        let sys = assemble_freq_system_with(&lib, &cfg.effective_cutoff(&field), &opts)?;
        std::fs::write(path, sys.to_csv())?;
    }

    let result = identify(&field, &cfg)?;
    println!("{}", result.equation_string);
    if let Some(out) = &a.out {
        let echo = IdentifyConfig {
            input,
            noisy,
            pipeline: cfg,
        };
        write_json(out, &json!({ "config": echo, "result": result }))?;
    }
    Ok(())
}

/// Settings shared by the benchmark commands, echoed into their output.
#[derive(Serialize, Deserialize)]
struct BenchConfig {
    input: Option<PathBuf>,
    equation: EquationName,
    alphas: Vec<f64>,
    trials: usize,
    seed: u64,
    noisy: bool,
}

struct BenchData {
    clean: Field,
    truth: EquationSpec,
    config: BenchConfig,
}

const SWEEP_ALPHAS: [f64; 9] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
const COMPARE_ALPHAS: [f64; 5] = [0.0, 0.1, 0.25, 0.5, 1.0];
const ROBUSTNESS_ALPHAS: [f64; 16] = [
    0.0, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.12, 0.15, 0.2, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0,
];
const DEFAULT_TRIALS: usize = 10;

fn bench_data(b: &BenchArgs, sys: &SystemArgs, file: Option<&Value>, default_alphas: &[f64]) -> CliResult<BenchData> {
    let input: Option<PathBuf> = b.input.clone().or(file_value(file, "input")?);
    let named: Option<EquationName> = b.equation.or(file_value(file, "equation")?);
    let (clean, truth) = match &input {
        Some(path) => {
            let (field, side) = open_input(path, "--in")?;
            let side = side.unwrap_or_default();
            if side.noisy() {
                return Err(usage("--in", "benchmarks start from clean data; this bundle has noise"));
            }
            let truth = match (side.equation, named) {
                (Some(eq), Some(n)) if eq.name != n => {
                    return Err(usage("--equation", format!("bundle holds {}", eq.name)))
                }
                (Some(eq), _) => eq,
                (None, Some(n)) => EquationSpec::catalog(n),
                (None, None) => return Err(usage("--equation", "the bundle has no sidecar naming its equation")),
            };
            (field, truth)
        }
        None => {
            let name = required(named, "--in or --equation")?;
            let eq = EquationSpec::catalog(name);
            let field = solve_reference(&eq, &GridSpec::default_for(name))?;
            (field, eq)
        }
    };
    let alphas = b
        .alphas
        .clone()
        .or(file_value(file, "alphas")?)
        .unwrap_or_else(|| default_alphas.to_vec());
    validate_alphas(&alphas)?;
    let trials = b.trials.or(file_value(file, "trials")?).unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(usage("--trials", "must be at least 1"));
    }
    let seed = b.seed.or(file_value(file, "seed")?).unwrap_or(0);
    let noisy = match sys.data {
        Some(d) => d == crate::args::DataKind::Noisy,
        None => file_value(file, "noisy")?.unwrap_or_else(|| alphas.iter().any(|&a| a > 0.0)),
    };
    if b.jobs > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(b.jobs).build_global();
    }
    Ok(BenchData {
        config: BenchConfig {
            input,
            equation: truth.name,
            alphas,
            trials,
            seed,
            noisy,
        },
        clean,
        truth,
    })
}

fn bench_pipeline(d: &BenchData, file: Option<&Value>, sys: &SystemArgs) -> CliResult<PipelineConfig> {
    let defaults = PipelineConfig::default_for(d.clean.spatial_dims(), d.truth.lhs_order, d.config.noisy)
        .map_err(|e| usage("--in", e))?;
    let mut cfg = layered(defaults, file, "pipeline")?;
    apply_system_args(&mut cfg, sys)?;
    Ok(cfg)
}

fn write_outputs(b: &BenchArgs, doc: Value, csv: String) -> CliResult<()> {
    if let Some(out) = &b.out {
        write_json(out, &doc)?;
    }
    if let Some(path) = &b.csv {
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn fmt_max(v: Option<f64>, exceeds: bool) -> String {
    match (v, exceeds) {
        (Some(a), true) => format!("{a} (exceeds grid)"),
        (Some(a), false) => a.to_string(),
        (None, _) => "none".into(),
    }
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let file = load_config_file(a.bench.config.as_deref())?;
    let f = file.as_ref();
    let data = bench_data(&a.bench, &a.system, f, &SWEEP_ALPHAS)?;
    let mut cfg = bench_pipeline(&data, f, &a.system)?;
    apply_selector_args(&mut cfg, &a.selector)?;
    validate_pipeline(&cfg, &data.clean)?;
    let records: Option<PathBuf> = a.records.or(file_value(f, "records")?);

    let c = &data.config;
    let opts = SweepOptions {
        trials: c.trials,
        seed_base: c.seed,
        records_path: records.clone(),
    };
    let report = alpha_sweep(&data.clean, &data.truth, &cfg, &c.alphas, &opts)?;

    println!("{}: {}", data.truth.name, data.truth.form());
    println!("{:>8} {:>9} {:>10} {:>9}", "alpha", "correct", "mean_mre", "failures");
    for r in &report.alphas {
        let mre = r.mean_mre.map(|m| format!("{:.2}%", 100.0 * m)).unwrap_or_else(|| "-".into());
        println!("{:>8} {:>5}/{:<3} {:>10} {:>9}", r.alpha, r.correct, r.trials, mre, r.failures);
    }
    println!("alpha_max {}", fmt_max(report.alpha_max, report.exceeds_grid));

    let doc = json!({
        "config": { "input": c.input, "equation": c.equation, "alphas": c.alphas, "trials": c.trials,
                    "seed": c.seed, "noisy": c.noisy, "records": records, "pipeline": cfg },
        "report": report.summary(),
    });
    write_outputs(&a.bench, doc, report.to_csv())
}

fn reject_domain(sys: &SystemArgs, cmd: &str) -> CliResult<()> {
    if sys.domain.is_some() {
        return Err(usage("--domain", format!("{cmd} fixes the domain of each pipeline itself")));
    }
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult<()> {
    reject_domain(&a.system, "compare")?;
    let file = load_config_file(a.bench.config.as_deref())?;
    let f = file.as_ref();
    let data = bench_data(&a.bench, &a.system, f, &COMPARE_ALPHAS)?;
    let cfg = bench_pipeline(&data, f, &a.system)?;
    validate_pipeline(&cfg, &data.clean)?;

    let lowpass: Vec<CutoffSpec> = if a.lowpass.is_empty() {
        file_value(f, "lowpass")?.unwrap_or_else(|| vec![CutoffSpec::lowpass_default_for(data.clean.spatial_dims())])
    } else {
        a.lowpass
            .iter()
            .map(|s| {
                s.split(',')
                    .map(|k| k.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map(CutoffSpec::new)
                    .map_err(|e| usage("--lowpass", format!("`{s}`: {e}")))
            })
            .collect::<CliResult<_>>()?
    };
    for c in &lowpass {
        c.validate(data.clean.dims()).map_err(|e| usage("--lowpass", e))?;
    }

    let c = &data.config;
    let methods = MethodSpec::standard(&lowpass);
    let rows = compare_methods(&data.clean, &data.truth, &cfg, &methods, &c.alphas, c.trials, c.seed)?;

    println!("{}: {}", data.truth.name, data.truth.form());
    for r in &rows {
        let errs: Vec<String> = r.errors.iter().map(|(t, e)| format!("{t} {e:.3e}")).collect();
        println!("{:>8} {:<16} {}", r.alpha, r.method, errs.join("  "));
    }

    let doc = json!({
        "config": { "input": c.input, "equation": c.equation, "alphas": c.alphas, "trials": c.trials,
                    "seed": c.seed, "noisy": c.noisy, "lowpass": lowpass, "pipeline": cfg },
        "rows": rows,
    });
    write_outputs(&a.bench, doc, method_errors_csv(&rows))
}

fn robustness(a: RobustnessArgs) -> CliResult<()> {
    reject_domain(&a.system, "csr-vs-stlm")?;
    let file = load_config_file(a.bench.config.as_deref())?;
    let f = file.as_ref();
    let data = bench_data(&a.bench, &a.system, f, &ROBUSTNESS_ALPHAS)?;
    let mut cfg = bench_pipeline(&data, f, &a.system)?;
    cfg.domain = Domain::Freq;
    validate_pipeline(&cfg, &data.clean)?;

    let c = &data.config;
    let report = csr_vs_stlm(&data.clean, &data.truth, &cfg, &c.alphas, c.trials, c.seed)?;

    println!("{}: {}", data.truth.name, data.truth.form());
    println!("{:>8} {:>8} {:>8}", "alpha", "csr", "stlm");
    for r in &report.rows {
        println!(
            "{:>8} {:>5}/{:<2} {:>5}/{:<2}",
            r.alpha, r.csr_correct, r.trials, r.stlm_correct, r.trials
        );
    }
    println!("csr alpha_max {}", fmt_max(report.csr_alpha_max, false));
    println!("stlm alpha_max {}", fmt_max(report.stlm_alpha_max, false));

    let doc = json!({
        "config": { "input": c.input, "equation": c.equation, "alphas": c.alphas, "trials": c.trials,
                    "seed": c.seed, "noisy": c.noisy, "pipeline": cfg },
        "report": report,
    });
    write_outputs(&a.bench, doc, report.to_csv())
}

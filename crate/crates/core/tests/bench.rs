use fdi::bench::*;
use fdi::candlib::compact_library_1d;
use fdi::field::Field;
use fdi::ident::{identify, PipelineConfig};
use fdi::synth::*;

fn burgers() -> (EquationSpec, Field) {
    let eq = EquationSpec::catalog(EquationName::Burgers1d);
    let f = solve_reference(&eq, &GridSpec::default_for(EquationName::Burgers1d)).unwrap();
    (eq, f)
}

fn opts(trials: usize) -> SweepOptions {
    SweepOptions {
        trials,
        seed_base: 11,
        records_path: None,
    }
}

#[test]
fn clean_grid_exceeds_and_is_accurate() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, false).unwrap();
    let rep = alpha_sweep(&f, &eq, &cfg, &[0.0], &opts(2)).unwrap();
    assert!(rep.exceeds_grid);
    assert_eq!(rep.alpha_max, Some(0.0));
    assert!(rep.alphas[0].mean_mre.unwrap() <= 1e-3);
}

#[test]
fn single_alpha_sweep_matches_identify() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, true).unwrap();
    let rep = alpha_sweep(&f, &eq, &cfg, &[0.1], &opts(3)).unwrap();
    for r in &rep.records {
        let noisy = inject_noise(&f, &NoiseSpec::new(0.1, trial_seed(11, 0, r.trial)));
        let direct = identify(&noisy, &cfg).unwrap();
        assert_eq!(r.seed, trial_seed(11, 0, r.trial));
        assert_eq!(r.structure_correct, structure_correct(&direct, &eq));
        let coefs: Vec<(String, f64)> = direct.selected.iter().map(|s| (s.term.clone(), s.coefficient)).collect();
        let recorded: Vec<(String, f64)> = r.coefficients.iter().map(|(k, v)| (k.clone(), *v)).collect();
        assert_eq!(coefs, recorded);
    }
}

#[test]
fn records_resume_and_reaggregate() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.jsonl");
    let alphas = [0.0, 0.1];
    let o = SweepOptions {
        records_path: Some(path.clone()),
        ..opts(2)
    };
    let first = alpha_sweep(&f, &eq, &cfg, &alphas, &o).unwrap();
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines, 4);

    let again = alpha_sweep(&f, &eq, &cfg, &alphas, &o).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), lines);
    assert_eq!(first, again);

    let rebuilt = SweepReport::from_records("burgers1d", &alphas, 2, 11, cfg.clone(), first.records.clone());
    assert_eq!(rebuilt, first);

    // Extending the trial count only computes the missing trials.
    let more = SweepOptions {
        records_path: Some(path.clone()),
        ..opts(3)
    };
    let extended = alpha_sweep(&f, &eq, &cfg, &alphas, &more).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 6);
    assert_eq!(extended.records.len(), 6);
}

#[test]
fn report_is_schedule_invariant() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, true).unwrap();
    let alphas = [0.05, 0.2];
    let parallel = alpha_sweep(&f, &eq, &cfg, &alphas, &opts(3)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| alpha_sweep(&f, &eq, &cfg, &alphas, &opts(3)).unwrap());
    assert_eq!(parallel, serial);
}

#[test]
fn csv_has_one_row_per_trial() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, false).unwrap();
    let rep = alpha_sweep(&f, &eq, &cfg, &[0.0], &opts(2)).unwrap();
    let csv = rep.to_csv();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("alpha,trial,structure_correct,mre,coef_u,"));
    assert_eq!(header.split(',').count(), 4 + 19);
    assert_eq!(lines.count(), 2);
}

#[test]
#[ignore = "fails on this data: the 11-term library misses 1 of 4 trials at alpha 0.1"]
fn enlarging_the_library_does_not_raise_alpha_max() {
    let (eq, f) = burgers();
    let full = PipelineConfig::default_for(1, 1, true).unwrap();
    let mut compact = full.clone();
    compact.library = compact_library_1d();
    let alphas = [0.0, 0.1, 0.25, 0.5, 0.75];
    let a = alpha_sweep(&f, &eq, &full, &alphas, &opts(4)).unwrap();
    let b = alpha_sweep(&f, &eq, &compact, &alphas, &opts(4)).unwrap();
    assert!(a.alpha_max.unwrap_or(-1.0) <= b.alpha_max.unwrap_or(-1.0), "{:?} {:?}", a.alphas, b.alphas);
}

#[test]
fn clean_methods_agree() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, false).unwrap();
    let methods = MethodSpec::standard(&[fdi::freqsys::CutoffSpec::new(vec![40, 40])]);
    let rows = compare_methods(&f, &eq, &cfg, &methods, &[0.0], 1, 3).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        for (term, e) in &r.errors {
            let truth = eq.true_terms.iter().find(|t| &t.term.name() == term).unwrap().coefficient;
            assert!(e / truth.abs() < 0.02, "{} {term}: {e}", r.method);
        }
    }
}

#[test]
fn both_selectors_succeed_on_clean_burgers() {
    let (eq, f) = burgers();
    let cfg = PipelineConfig::default_for(1, 1, false).unwrap();
    let rep = csr_vs_stlm(&f, &eq, &cfg, &[0.0], 1, 5).unwrap();
    assert_eq!(rep.rows[0].csr_correct, 1);
    assert_eq!(rep.rows[0].stlm_correct, 1);
}

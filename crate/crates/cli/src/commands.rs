use std::path::{Path, PathBuf};
use std::time::Instant;

use absrate::abstraction::{check_inclusion, expected_distortion, BuildOptions, UniformGridAbstraction};
use absrate::bounds::{
    c_constant, distortion_lower_bound, rate_lower_bound, rd_curve, relaxed_bound, BoundInputs, CConstant,
    InitialEntropies, Order, RdBoundReport, RelaxedClass, RD_CSV_HEADER,
};
use absrate::dynamics::{Smoothness, SystemDef};
use absrate::entropy::{entropy_report, EntropyReport};
use absrate::experiments::{
    doubling_covering_check, doubling_optimal_abstraction, doubling_ratio_check, doubling_ratio_constant,
    nonlinear3d_experiment, CoveringRow, DoublingAchievability, Nonlinear3dResult, RatioRow, NONLINEAR3D_CSV_HEADER,
};
use absrate::mc::{McConfig, MeanEstimate};
use serde::Serialize;

use crate::config::{load_nonlinear3d, read_text, DoublingConfig, RunConfig};
use crate::output::{envelope, sha256_hex, Sink, Table};
use crate::{CliError, GlobalArgs};

fn load_run_config(args: &GlobalArgs) -> Result<RunConfig, CliError> {
    let path = args.config.as_deref().ok_or_else(|| CliError::Config("this command needs --config PATH".into()))?;
    RunConfig::load(path, args.overrides())
}

fn mc_for(cfg: &RunConfig, args: &GlobalArgs) -> McConfig {
    McConfig::new(cfg.samples, cfg.seed).with_workers(args.workers)
}

/// How the Lipschitz constant used by the bounds was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzUsed {
    pub value: f64,
    pub source: &'static str,
}

fn resolve_lipschitz(sys: &SystemDef, cfg: &RunConfig, mc: McConfig) -> Result<Option<LipschitzUsed>, CliError> {
    if let Some(value) = sys.lipschitz() {
        return Ok(Some(LipschitzUsed { value, source: "known" }));
    }
    if let Some(value) = cfg.lipschitz {
        return Ok(Some(LipschitzUsed { value, source: "config" }));
    }
    if sys.smoothness() == Smoothness::Lipschitz {
        let value = sys.lipschitz_estimate(mc)?;
        return Ok(Some(LipschitzUsed { value, source: "sampled Jacobian norm" }));
    }
    Ok(None)
}

#[derive(Debug, Serialize)]
pub struct BoundResult {
    pub system: String,
    pub entropy: EntropyReport,
    pub c: CConstant,
    pub lipschitz: Option<LipschitzUsed>,
    pub reports: Vec<RdBoundReport>,
}

pub fn compute_bound(cfg: &RunConfig, args: &GlobalArgs) -> Result<BoundResult, CliError> {
    let sys = cfg.system()?;
    let mc = mc_for(cfg, args);
    args.progress(&format!("entropies of {} at l = {}", sys.name(), cfg.l));
    let entropy = entropy_report(&sys, cfg.l, &cfg.finite_orders(), mc.derive(1))?;
    let lipschitz = resolve_lipschitz(&sys, cfg, mc.derive(2))?;
    let c = c_constant(&sys, cfg.l, cfg.c_mode, lipschitz.map(|l| l.value))?;
    let inputs = BoundInputs::from_report(&entropy, sys.dim(), c.value, &cfg.s_grid)?;
    let rates = cfg.rates();
    let relaxed_init = InitialEntropies::uniform(sys.dim(), entropy.h0, &cfg.s_grid);
    let mut reports = Vec::with_capacity(rates.len());
    for &r in &rates {
        let bound = distortion_lower_bound(r, &inputs)?;
        let rate_for_target =
            cfg.target_distortion.map(|d| rate_lower_bound(d, &inputs).map(|b| (d, b))).transpose()?;
        let relaxed = if cfg.relaxed {
            let class = RelaxedClass::for_system(&sys, lipschitz.map(|l| l.value))?;
            Some(relaxed_bound(class, cfg.l, r, &relaxed_init, cfg.unit_lipschitz_k, cfg.target_distortion)?)
        } else {
            None
        };
        reports.push(RdBoundReport {
            n: sys.dim(),
            l: cfg.l,
            r,
            h: entropy.h,
            renyi: inputs.renyi.clone(),
            h_inf: entropy.h_inf,
            c: c.value,
            c_case: c.case,
            c_mode: cfg.c_mode,
            entropy_method: entropy.method,
            h_inf_estimator: entropy.h_inf_estimator.clone(),
            bound,
            rate_for_target,
            relaxed,
        });
    }
    Ok(BoundResult { system: sys.fingerprint(), entropy, c, lipschitz, reports })
}

pub fn bound(args: &GlobalArgs, sink: &Sink) -> Result<(), CliError> {
    let cfg = load_run_config(args)?;
    let result = compute_bound(&cfg, args)?;
    let sys = cfg.system()?;
    let c_in = BoundInputs::from_report(&result.entropy, sys.dim(), result.c.value, &cfg.s_grid)?;
    let rows = rd_curve(&c_in, result.c.case, &cfg.rates())?;
    let env = envelope("bound", cfg.seed, &cfg, &result);
    sink.report("bound.json", &env)?;
    sink.table("rd_curve.csv", &env, &Table { header: RD_CSV_HEADER, rows: rows.iter().map(|r| r.csv()).collect() })?;
    args.progress(&format!("{} rates evaluated", rows.len()));
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AbstractSummary {
    pub system: String,
    pub cells: usize,
    pub transitions: usize,
    /// SHA-256 of `abstraction.json`.
    pub artifact_sha256: String,
}

fn build_abstraction(cfg: &RunConfig, sys: &SystemDef, workers: usize) -> Result<UniformGridAbstraction, CliError> {
    let counts = cfg.grid.clone().ok_or_else(|| CliError::Config("field `grid`: required by this command".into()))?;
    let opts = BuildOptions { mode: cfg.transition_mode, cell_limit: cfg.cell_limit, workers };
    Ok(UniformGridAbstraction::build(sys, counts, opts)?)
}

pub fn abstract_cmd(args: &GlobalArgs, sink: &Sink) -> Result<(), CliError> {
    let cfg = load_run_config(args)?;
    let sys = cfg.system()?;
    let start = Instant::now();
    let abs = build_abstraction(&cfg, &sys, args.workers)?;
    let artifact = abs.to_json();
    let summary = AbstractSummary {
        system: abs.system.clone(),
        cells: abs.grid.num_cells(),
        transitions: abs.transitions.num_transitions(),
        artifact_sha256: sha256_hex(artifact.as_bytes()),
    };
    args.progress(&format!(
        "{} cells, {} transitions, built in {:.3} s",
        summary.cells,
        summary.transitions,
        start.elapsed().as_secs_f64()
    ));
    sink.raw("abstraction.json", &artifact)?;
    sink.report("abstract.json", &envelope("abstract", cfg.seed, &cfg, &summary))
}

#[derive(Debug, Serialize)]
pub struct DistortionResult {
    pub system: String,
    pub l: usize,
    pub cells: usize,
    pub transitions: usize,
    pub distortion: MeanEstimate,
    pub inclusion_violations: usize,
}

fn resolve_relative(base: Option<&Path>, p: &Path) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

pub fn distortion(args: &GlobalArgs, sink: &Sink) -> Result<(), CliError> {
    let cfg = load_run_config(args)?;
    let sys = cfg.system()?;
    let abs = match &cfg.abstraction {
        Some(p) => {
            let path = resolve_relative(args.config.as_deref(), p);
            let abs = UniformGridAbstraction::from_json(&read_text(&path)?)
                .map_err(|e| CliError::Config(format!("field `abstraction`: {e}")))?;
            abs.check_system(&sys).map_err(|e| CliError::Config(format!("field `abstraction`: {e}")))?;
            abs
        }
        None => build_abstraction(&cfg, &sys, args.workers)?,
    };
    let mc = mc_for(&cfg, args);
    args.progress(&format!("distortion over {} samples on {} cells", cfg.samples, abs.grid.num_cells()));
    let d = expected_distortion(&sys, &abs.grid, &abs.transitions, cfg.l, mc.derive(3))?;
    let violations = check_inclusion(&sys, &abs.grid, &abs.transitions, cfg.l, mc.derive(4))?;
    let result = DistortionResult {
        system: abs.system.clone(),
        l: cfg.l,
        cells: abs.grid.num_cells(),
        transitions: abs.transitions.num_transitions(),
        distortion: d,
        inclusion_violations: violations,
    };
    sink.report("distortion.json", &envelope("distortion", cfg.seed, &cfg, &result))
}

pub fn entropy(args: &GlobalArgs, sink: &Sink) -> Result<(), CliError> {
    let cfg = load_run_config(args)?;
    let sys = cfg.system()?;
    let report = entropy_report(&sys, cfg.l, &cfg.finite_orders(), mc_for(&cfg, args).derive(1))?;
    let report = if cfg.bits { report.to_bits() } else { report };
    sink.report("entropy.json", &envelope("entropy", cfg.seed, &cfg, &report))
}

#[derive(Debug, Serialize)]
pub struct DoublingResult {
    pub achievability: Vec<DoublingAchievability>,
    pub ratio_constant: f64,
    pub ratio: Vec<RatioRow>,
    pub covering: Vec<(usize, CoveringRow)>,
    pub achievability_passed: bool,
    pub ratio_passed: bool,
    pub covering_passed: bool,
}

impl DoublingResult {
    pub fn passed(&self) -> bool {
        self.achievability_passed && self.ratio_passed && self.covering_passed
    }
}

pub fn run_doubling(cfg: &DoublingConfig, workers: usize, progress: impl Fn(&str)) -> Result<DoublingResult, CliError> {
    let mut achievability = Vec::new();
    let mut ratio = Vec::new();
    let mut covering = Vec::new();
    let mc = McConfig::new(cfg.samples, cfg.seed).with_workers(workers);
    for &l in &cfg.l_grid {
        for &k in &cfg.k_grid {
            let a = doubling_optimal_abstraction(l, k, mc.derive((l * 1000 + k) as u64))?;
            progress(&format!(
                "l={l} k={k}: D={:.6} ± {:.6}, derived {:.6}",
                a.empirical.mean, a.empirical.stderr, a.closed_form.d_derived
            ));
            achievability.push(a);
            covering.extend(doubling_covering_check(l, k, &[Order(2.0), Order::INFINITY])?.into_iter().map(|r| (l, r)));
        }
        ratio.extend(doubling_ratio_check(l, &cfg.ratio_k_grid, &[Order::INFINITY])?);
    }
    let ratio_constant = doubling_ratio_constant();
    Ok(DoublingResult {
        achievability_passed: achievability.iter().all(|a| a.passed),
        ratio_passed: ratio.iter().all(|r| (r.ratio - ratio_constant).abs() < 1e-6 && (0.51..=0.55).contains(&r.ratio)),
        covering_passed: covering.iter().all(|(_, r)| r.holds),
        achievability,
        ratio_constant,
        ratio,
        covering,
    })
}

pub fn reproduce_doubling(args: &GlobalArgs, sink: &Sink, l: Option<usize>) -> Result<(), CliError> {
    let mut cfg = DoublingConfig::load(args.config.as_deref(), args.overrides())?;
    if let Some(l) = l {
        if l == 0 || l > 20 {
            return Err(CliError::Config("--l must lie in 1..=20".into()));
        }
        cfg.l_grid = vec![l];
    }
    let result = run_doubling(&cfg, args.workers, |m| args.progress(m))?;
    let env = envelope("reproduce doubling", cfg.seed, &cfg, &result);
    sink.report("reproduce_doubling.json", &env)?;
    let achievability = result
        .achievability
        .iter()
        .map(|a| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                a.closed_form.l,
                a.closed_form.k,
                a.cells,
                a.closed_form.r,
                a.closed_form.d_derived,
                a.closed_form.d_paper_printed,
                a.empirical.mean,
                a.empirical.stderr,
                a.z_score,
                a.passed
            )
        })
        .collect();
    sink.table(
        "achievability.csv",
        &env,
        &Table {
            header: "l,k,cells,R_nats,D_derived,D_printed,D_empirical,D_empirical_stderr,z,passed",
            rows: achievability,
        },
    )?;
    let ratio = result
        .ratio
        .iter()
        .map(|r| format!("{},{},{},{},{},{}", r.l, r.k, r.r, r.d_lower, r.d_derived, r.ratio))
        .collect();
    sink.table("ratio.csv", &env, &Table { header: "l,k,R_nats,D_lower,D_derived,ratio", rows: ratio })?;
    let covering = result
        .covering
        .iter()
        .map(|(l, r)| format!("{},{},{},{},{},{},{}", l, r.k, r.cover_size, r.s, r.lhs, r.rhs, r.holds))
        .collect();
    sink.table("covering.csv", &env, &Table { header: "l,k,cover_size,s,lhs,rhs,holds", rows: covering })?;
    report_checks(
        args,
        &[
            ("achievability within 3 stderr", result.achievability_passed),
            ("ratio constant", result.ratio_passed),
            ("covering inequality", result.covering_passed),
        ],
    )
}

pub fn reproduce_nonlinear3d(args: &GlobalArgs, sink: &Sink, l: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load_nonlinear3d(args.config.as_deref(), args.overrides())?;
    if let Some(l) = l {
        if l == 0 {
            return Err(CliError::Config("--l must be ≥ 1".into()));
        }
        cfg.l_grid = vec![l];
    }
    cfg.workers = args.workers;
    if cfg.n_grid.iter().any(|&n| n > 20) {
        eprintln!("[absrate] warning: N > 20 is far beyond desk scale and may take a long time");
    }
    let result: Nonlinear3dResult = nonlinear3d_experiment(&cfg, |m| args.progress(m))?;
    let env = envelope("reproduce nonlinear3d", cfg.seed, &cfg, &result);
    sink.report("reproduce_nonlinear3d.json", &env)?;
    sink.table(
        "nonlinear3d.csv",
        &env,
        &Table { header: NONLINEAR3D_CSV_HEADER, rows: result.rows.iter().map(|r| r.csv()).collect() },
    )?;
    report_checks(
        args,
        &[
            ("empirical distortion above both bounds", result.bound_valid),
            ("zero inclusion violations", result.zero_violations),
            ("distortion non-increasing in N", result.monotone_in_n),
        ],
    )
}

fn report_checks(args: &GlobalArgs, checks: &[(&str, bool)]) -> Result<(), CliError> {
    for (name, ok) in checks {
        args.progress(&format!("{}: {name}", if *ok { "PASS" } else { "FAIL" }));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed.join(", ")))
    }
}

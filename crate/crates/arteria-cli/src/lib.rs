//! Command implementations behind the `arteria` binary: configuration
//! loading, the check/run gates, study drivers, and artifact writers.
//!
//! One TOML document describes a whole experiment: the network sections
//! (`branches`, `junctions`, `boundaries`) are read by the network parser,
//! and this crate reads the companion sections `initial`, `run`, `study`,
//! and `stability`.

// positivity guards are written `!(x > 0.0)` so NaN flag values fail
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use arteria::field::{Field2, Profile};
use arteria::network::{parse_network, validate_topology, Network};
use arteria::scheme::{
    preflight, run, GridState, Probe, Problem, RunOutcome, RunParams, StepSizes,
};
use arteria::verify::{
    run_manufactured_study, run_oracle_study, stability_probe, windkessel_variant_comparison,
    ConvergenceReport, ManufacturedFields, SigmaPolicy, StabilityReport, StudyError,
    VariantComparison, DEFAULT_ORDER_WINDOW,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit status contract of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or malformed request (exit 64).
    Usage(String),
    /// The configuration fails validation or preflight (exit 1).
    Validation(String),
    /// The solver aborted at runtime (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn map_study_error(e: StudyError) -> CliError {
    match e {
        StudyError::BadLevels => CliError::Usage(e.to_string()),
        StudyError::Abort { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Configuration document (solver-facing sections)

#[derive(Debug, Clone, Deserialize)]
pub struct InitialPair {
    pub p: Profile,
    pub q: Profile,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProbeSpec {
    pub branch: String,
    pub x: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RunSection {
    pub horizon: Option<f64>,
    pub sigma: Option<f64>,
    pub dt: Option<f64>,
    pub stride: Option<usize>,
    pub blowup_bound: Option<f64>,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FieldsSpec {
    pub p: Field2,
    pub q: Field2,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StudySection {
    #[serde(default = "default_target")]
    pub target: String,
    pub levels: Option<Vec<usize>>,
    pub horizon: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma_rel: Option<f64>,
    #[serde(default)]
    pub fields: BTreeMap<String, FieldsSpec>,
}

fn default_target() -> String {
    "manufactured".into()
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct StabilitySection {
    pub horizon: Option<f64>,
    pub eps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigDoc {
    #[serde(default)]
    pub initial: BTreeMap<String, InitialPair>,
    #[serde(default)]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub stability: Option<StabilitySection>,
}

pub struct LoadedConfig {
    pub network: Network,
    pub doc: ConfigDoc,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let network = parse_network(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let doc: ConfigDoc = toml::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(LoadedConfig { network, doc })
}

fn initial_state(net: &Network, doc: &ConfigDoc) -> Result<GridState, CliError> {
    let mut profiles = Vec::with_capacity(net.branches.len());
    for b in &net.branches {
        let pair = doc.initial.get(&b.id).ok_or_else(|| {
            CliError::Validation(format!(
                "no [initial.{}] section for branch `{}`",
                b.id, b.id
            ))
        })?;
        profiles.push(pair.clone());
    }
    let cells: Vec<usize> = net.branches.iter().map(|b| b.cells).collect();
    Ok(GridState::sample(&cells, |bi, x| {
        (profiles[bi].p.value(x), profiles[bi].q.value(x))
    }))
}

/// Flags shared by commands; flags override config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub horizon: Option<f64>,
    pub sigma: Option<f64>,
    pub dt: Option<f64>,
    pub stride: Option<usize>,
    pub probes: Vec<(String, f64)>,
    pub levels: Option<Vec<usize>>,
}

fn resolve_sizes(cells: &[usize], run: &RunSection, ov: &Overrides) -> Result<StepSizes, CliError> {
    let sigma = ov.sigma.or(run.sigma);
    let dt = ov.dt.or(run.dt);
    match (sigma, dt) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either sigma or dt, not both".into())),
        (Some(s), None) => {
            if !(s > 0.0) {
                return Err(CliError::Usage(format!("sigma must be positive, got {s}")));
            }
            Ok(StepSizes::with_sigma(cells, s))
        }
        (None, Some(k)) => {
            if !(k > 0.0) {
                return Err(CliError::Usage(format!("dt must be positive, got {k}")));
            }
            Ok(StepSizes::with_dt(cells, k))
        }
        (None, None) => Err(CliError::Usage(
            "a step ratio is required: pass --sigma or --dt (or set [run] sigma/dt)".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// check

pub struct CheckOutput {
    pub report: String,
    pub ok: bool,
}

pub fn cmd_check(config: &Path, ov: &Overrides) -> Result<CheckOutput, CliError> {
    let loaded = load_config(config)?;
    let net = &loaded.network;
    let mut report = String::new();
    let topo = validate_topology(net);
    writeln!(report, "topology: {} violations", topo.violations.len()).unwrap();
    for v in &topo.violations {
        writeln!(report, "  violation: {v}").unwrap();
    }
    for w in &topo.warnings {
        writeln!(report, "  warning: {w}").unwrap();
    }
    let mut ok = topo.ok();

    if ok {
        let problem =
            Problem::from_network(net).map_err(|e| CliError::Validation(e.to_string()))?;
        let state = initial_state(net, &loaded.doc)?;
        let run_section = loaded.doc.run.clone().unwrap_or_default();
        // no step ratio given: skip the CFL section
        let sizes = resolve_sizes(&problem.cells(), &run_section, ov).ok();
        let probe_sizes = sizes
            .clone()
            .unwrap_or_else(|| StepSizes::with_sigma(&problem.cells(), 1e-6));
        let pf = preflight(&problem, &state, &probe_sizes);
        let issues: Vec<_> = pf
            .issues
            .iter()
            .filter(|i| {
                sizes.is_some() || !matches!(i, arteria::scheme::PreflightIssue::Cfl { .. })
            })
            .collect();
        writeln!(
            report,
            "initial-data conditions: {} violations (speed bound {:.6})",
            issues.len(),
            pf.speed_bound
        )
        .unwrap();
        for i in &issues {
            writeln!(report, "  violation: {i}").unwrap();
        }
        if sizes.is_none() {
            writeln!(report, "  (CFL check skipped: no sigma or dt given)").unwrap();
        }
        for w in &pf.warnings {
            writeln!(report, "  warning: {w}").unwrap();
        }
        ok = issues.is_empty();
    }
    writeln!(
        report,
        "{}",
        if ok { "0 violations" } else { "CHECK FAILED" }
    )
    .unwrap();
    Ok(CheckOutput { report, ok })
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Serialize)]
pub struct AbortRecord {
    pub time: f64,
    pub branch: Option<String>,
    pub node: Option<usize>,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub status: String,
    pub final_time: f64,
    pub steps: usize,
    pub wall_time_s: f64,
    pub max_speed: f64,
    pub max_junction_mass_residual_rel: f64,
    pub max_port_pressure_mismatch: f64,
    pub min_junction_det: Option<f64>,
    pub max_windkessel_det: Option<f64>,
    pub warnings: usize,
    pub abort: Option<AbortRecord>,
}

#[derive(Serialize)]
struct DiagRecord<'a> {
    t: f64,
    event: &'a str,
    branch: Option<&'a str>,
    n: Option<usize>,
    detail: String,
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Usage(format!("cannot rename onto {}: {e}", path.display())))?;
    Ok(())
}

fn format_float(v: f64) -> String {
    // shortest round-trip form keeps golden files stable
    format!("{v}")
}

pub fn probes_csv(outcome: &RunOutcome) -> String {
    let mut csv = String::from("t,branch,x,p,q\n");
    for row in &outcome.probe_rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            format_float(row.t),
            row.branch,
            format_float(row.x),
            format_float(row.p),
            format_float(row.q)
        )
        .unwrap();
    }
    csv
}

pub fn diagnostics_jsonl(outcome: &RunOutcome) -> String {
    let mut out = String::new();
    for w in &outcome.warnings {
        let rec = DiagRecord {
            t: 0.0,
            event: "compat_warning",
            branch: w.branch.as_deref(),
            n: None,
            detail: format!("{w}"),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).unwrap()).unwrap();
    }
    match &outcome.abort {
        Some(a) => {
            let rec = DiagRecord {
                t: a.time,
                event: "abort",
                branch: a.branch.as_deref(),
                n: a.node,
                detail: a.to_string(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).unwrap()).unwrap();
        }
        None => {
            let rec = DiagRecord {
                t: outcome.end_time,
                event: "completed",
                branch: None,
                n: None,
                detail: format!("steps={}", outcome.steps),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).unwrap()).unwrap();
        }
    }
    out
}

pub fn run_summary(outcome: &RunOutcome, wall_time_s: f64) -> RunSummary {
    RunSummary {
        status: if outcome.completed() {
            "completed".into()
        } else {
            "aborted".into()
        },
        final_time: outcome.end_time,
        steps: outcome.steps,
        wall_time_s,
        max_speed: outcome.aggregates.max_speed,
        max_junction_mass_residual_rel: outcome.aggregates.max_junction_mass_rel,
        max_port_pressure_mismatch: outcome.aggregates.max_port_pressure_mismatch,
        min_junction_det: outcome.aggregates.min_junction_det,
        max_windkessel_det: outcome.aggregates.max_windkessel_det,
        warnings: outcome.warnings.len(),
        abort: outcome.abort.as_ref().map(|a| AbortRecord {
            time: a.time,
            branch: a.branch.clone(),
            node: a.node,
            message: a.to_string(),
        }),
    }
}

pub struct RunArtifacts {
    pub summary: RunSummary,
    pub out_dir: PathBuf,
}

pub fn cmd_run(config: &Path, out_dir: &Path, ov: &Overrides) -> Result<RunArtifacts, CliError> {
    let check = cmd_check(config, ov)?;
    if !check.ok {
        return Err(CliError::Validation(check.report));
    }
    let loaded = load_config(config)?;
    let net = &loaded.network;
    let mut problem =
        Problem::from_network(net).map_err(|e| CliError::Validation(e.to_string()))?;
    let run_section = loaded.doc.run.clone().unwrap_or_default();
    if let Some(bound) = run_section.blowup_bound {
        problem.blowup_bound = bound;
    }
    let sizes = resolve_sizes(&problem.cells(), &run_section, ov)?;
    let horizon = ov
        .horizon
        .or(run_section.horizon)
        .ok_or_else(|| CliError::Usage("a horizon is required: pass --horizon".into()))?;
    if horizon < 0.0 {
        return Err(CliError::Usage(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    let stride = ov.stride.or(run_section.stride).unwrap_or(1);
    if stride == 0 {
        return Err(CliError::Usage("stride must be at least 1".into()));
    }
    let mut probes = Vec::new();
    let flag_probes: Vec<ProbeSpec> = ov
        .probes
        .iter()
        .map(|(b, x)| ProbeSpec {
            branch: b.clone(),
            x: *x,
        })
        .collect();
    let chosen = if flag_probes.is_empty() {
        &run_section.probes
    } else {
        &flag_probes
    };
    for p in chosen {
        let bi = net.branch_index(&p.branch).ok_or_else(|| {
            CliError::Usage(format!("probe references unknown branch `{}`", p.branch))
        })?;
        if !(0.0..=1.0).contains(&p.x) {
            return Err(CliError::Usage(format!(
                "probe position {} outside [0, 1]",
                p.x
            )));
        }
        probes.push(Probe { branch: bi, x: p.x });
    }

    let initial = initial_state(net, &loaded.doc)?;
    let params = RunParams {
        horizon,
        stride,
        probes,
    };
    let started = Instant::now();
    let outcome = run(&problem, initial, &sizes, &params);
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
    write_atomic(&out_dir.join("probes.csv"), &probes_csv(&outcome))?;
    write_atomic(
        &out_dir.join("diagnostics.jsonl"),
        &diagnostics_jsonl(&outcome),
    )?;
    let summary = run_summary(&outcome, wall);
    write_atomic(
        &out_dir.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()),
    )?;
    if !outcome.completed() {
        return Ok(RunArtifacts {
            summary,
            out_dir: out_dir.to_path_buf(),
        });
    }
    Ok(RunArtifacts {
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}

// ---------------------------------------------------------------------------
// converge / stability / compare-windkessel

fn study_section(doc: &ConfigDoc) -> Result<StudySection, CliError> {
    doc.study
        .clone()
        .ok_or_else(|| CliError::Validation("config has no [study] section".into()))
}

fn study_levels(section: &StudySection, ov: &Overrides, default: &[usize]) -> Vec<usize> {
    ov.levels
        .clone()
        .or_else(|| section.levels.clone())
        .unwrap_or_else(|| default.to_vec())
}

fn study_sigma(section: &StudySection, ov: &Overrides) -> SigmaPolicy {
    if let Some(s) = ov.sigma.or(section.sigma) {
        SigmaPolicy::Fixed(s)
    } else {
        SigmaPolicy::FractionOfStable(section.sigma_rel.unwrap_or(0.8))
    }
}

pub struct StudyOutput {
    pub table: String,
    pub json: String,
    pub passed: bool,
}

pub fn cmd_converge(config: &Path, ov: &Overrides) -> Result<StudyOutput, CliError> {
    let loaded = load_config(config)?;
    let section = study_section(&loaded.doc)?;
    let levels = study_levels(&section, ov, &[40, 80, 160, 320]);
    let horizon = ov.horizon.or(section.horizon).unwrap_or(0.5);
    let sigma = study_sigma(&section, ov);
    let report: ConvergenceReport = match section.target.as_str() {
        "manufactured" => {
            let mut fields = BTreeMap::new();
            for (id, spec) in &section.fields {
                fields.insert(
                    id.clone(),
                    ManufacturedFields {
                        p: spec.p.clone(),
                        q: spec.q.clone(),
                    },
                );
            }
            run_manufactured_study(
                &loaded.network,
                &fields,
                &levels,
                horizon,
                sigma,
                DEFAULT_ORDER_WINDOW,
            )
            .map_err(map_study_error)?
        }
        "oracle" => {
            let branch = &loaded
                .network
                .branches
                .first()
                .ok_or_else(|| CliError::Validation("oracle study needs one branch".into()))?;
            let pair = loaded.doc.initial.get(&branch.id).ok_or_else(|| {
                CliError::Validation(format!("no [initial.{}] section", branch.id))
            })?;
            let (report, _oracle) = run_oracle_study(
                &loaded.network,
                &pair.p,
                &pair.q,
                &levels,
                horizon,
                sigma,
                DEFAULT_ORDER_WINDOW,
            )
            .map_err(map_study_error)?;
            report
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown study target `{other}` (expected manufactured or oracle)"
            )))
        }
    };
    Ok(StudyOutput {
        table: report.table(),
        json: serde_json::to_string_pretty(&report).unwrap(),
        passed: report.passed,
    })
}

pub fn cmd_stability(config: &Path, ov: &Overrides) -> Result<StudyOutput, CliError> {
    let loaded = load_config(config)?;
    let net = &loaded.network;
    let problem = Problem::from_network(net).map_err(|e| CliError::Validation(e.to_string()))?;
    let initial = initial_state(net, &loaded.doc)?;
    let run_section = loaded.doc.run.clone().unwrap_or_default();
    let sizes = resolve_sizes(&problem.cells(), &run_section, ov)?;
    let stability = loaded.doc.stability.clone().unwrap_or_default();
    let horizon = ov
        .horizon
        .or(stability.horizon)
        .or(run_section.horizon)
        .ok_or_else(|| CliError::Usage("a horizon is required: pass --horizon".into()))?;
    let eps = stability.eps.unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4]);
    let report: StabilityReport =
        stability_probe(&problem, &initial, &sizes, horizon, &eps).map_err(map_study_error)?;
    let mut table = String::from("      eps       deviation        D/eps\n");
    for e in &report.entries {
        writeln!(
            table,
            "{:9.1e}  {:14.6e}  {:12.6e}",
            e.eps, e.deviation, e.ratio
        )
        .unwrap();
    }
    writeln!(
        table,
        "ratio spread {:.3} (max/min): {}",
        report.max_ratio / report.min_ratio,
        if report.passed { "passed" } else { "FAILED" }
    )
    .unwrap();
    Ok(StudyOutput {
        table,
        json: serde_json::to_string_pretty(&report).unwrap(),
        passed: report.passed,
    })
}

pub struct ComparisonOutput {
    pub table: String,
    pub json: String,
}

pub fn cmd_compare_windkessel(config: &Path, ov: &Overrides) -> Result<ComparisonOutput, CliError> {
    let loaded = load_config(config)?;
    let net = &loaded.network;
    let branch = net
        .branches
        .first()
        .ok_or_else(|| CliError::Validation("comparison needs a branch".into()))?;
    let pair = loaded
        .doc
        .initial
        .get(&branch.id)
        .ok_or_else(|| CliError::Validation(format!("no [initial.{}] section", branch.id)))?;
    let section = loaded.doc.study.clone().unwrap_or(StudySection {
        target: default_target(),
        levels: None,
        horizon: None,
        sigma: None,
        sigma_rel: None,
        fields: BTreeMap::new(),
    });
    let levels = study_levels(&section, ov, &[40, 80, 160]);
    let horizon = ov.horizon.or(section.horizon).unwrap_or(0.5);
    let sigma_target = ov.sigma.or(section.sigma).unwrap_or(0.5);
    let cmp: VariantComparison = windkessel_variant_comparison(
        net,
        &pair.p,
        &pair.q,
        &levels,
        horizon,
        sigma_target,
        DEFAULT_ORDER_WINDOW,
    )
    .map_err(map_study_error)?;
    let mut table = String::new();
    writeln!(
        table,
        "reference: trapezoidal closure at N = {}",
        cmp.reference_cells
    )
    .unwrap();
    writeln!(table, "trapezoidal closure:\n{}", cmp.trapezoidal.table()).unwrap();
    writeln!(table, "explicit closure:\n{}", cmp.explicit.table()).unwrap();
    Ok(ComparisonOutput {
        table,
        json: serde_json::to_string_pretty(&cmp).unwrap(),
    })
}

/// Parse a repeatable `--probe BRANCH:X` flag value.
pub fn parse_probe_flag(v: &str) -> Result<(String, f64), CliError> {
    let (branch, x) = v
        .rsplit_once(':')
        .ok_or_else(|| CliError::Usage(format!("probe `{v}` is not BRANCH:X")))?;
    let x: f64 = x
        .parse()
        .map_err(|_| CliError::Usage(format!("probe position `{x}` is not a number")))?;
    Ok((branch.to_string(), x))
}

/// Parse a `--levels N1,N2,...` flag value.
pub fn parse_levels_flag(v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad level `{s}`")))
        })
        .collect()
}

//! Convergence studies against manufactured or oracle references, the
//! windkessel-variant comparison, and the stability probe.

use crate::field::{Field2, Profile};
use crate::model::{CoefficientModel, ManufacturedModel, ModelError};
use crate::network::{Network, TerminalKind};
use crate::scheme::{
    run, GridState, Problem, RunParams, SolverAbort, SourceClosure, StepSizes, TerminalClosure,
    WindkesselVariant, X0Closure, X1Closure,
};
use crate::signal::FnSignal;
use crate::verify::oracle::{OracleProblem, OracleSolution, OracleSource, OracleTerminal};
use crate::verify::{unit_samples, OracleError};
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

/// Observed-order acceptance window: wide enough for pre-asymptotic wobble
/// at desk-scale grids, tight enough to reject order-0 and order-2 outcomes.
pub const DEFAULT_ORDER_WINDOW: (f64, f64) = (0.8, 1.3);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelError {
    #[serde(rename = "N")]
    pub n: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelError>,
    /// Pairwise observed orders log2(e_h / e_{h/2}).
    pub orders: Vec<f64>,
    pub passed: bool,
    pub window: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl ConvergenceReport {
    pub fn from_levels(levels: Vec<LevelError>, window: (f64, f64)) -> ConvergenceReport {
        let orders: Vec<f64> = levels
            .windows(2)
            .map(|w| (w[0].error / w[1].error).log2())
            .collect();
        let passed = !orders.is_empty() && orders.iter().all(|&o| o >= window.0 && o <= window.1);
        ConvergenceReport {
            levels,
            orders,
            passed,
            window,
            horizon: None,
            sigma: None,
        }
    }

    fn with_context(mut self, horizon: f64, sigma: f64) -> ConvergenceReport {
        self.horizon = Some(horizon);
        self.sigma = Some(sigma);
        self
    }

    /// Aligned text table for terminal output.
    pub fn table(&self) -> String {
        let mut out = String::from("     N           h        max error     order\n");
        for (i, lv) in self.levels.iter().enumerate() {
            let order = if i == 0 {
                "    -".to_string()
            } else {
                format!("{:8.3}", self.orders[i - 1])
            };
            out.push_str(&format!(
                "{:6}  {:10.6}  {:14.6e}  {}\n",
                lv.n, lv.h, lv.error, order
            ));
        }
        if let (Some(t), Some(s)) = (self.horizon, self.sigma) {
            // the convergence argument covers horizons below sigma/2; larger
            // horizons are reported, not gated
            out.push_str(&format!(
                "horizon {t} = {:.2} x (sigma/2), sigma = {s:.6}\n",
                t / (0.5 * s)
            ));
        }
        out.push_str(&format!(
            "window [{}, {}]: {}\n",
            self.window.0,
            self.window.1,
            if self.passed { "passed" } else { "FAILED" }
        ));
        out
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("levels must be a doubling ladder with at least two entries")]
    BadLevels,
    #[error("solver aborted at level N={n}: {abort}")]
    Abort { n: usize, abort: SolverAbort },
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Build(#[from] crate::scheme::BuildError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn check_levels(levels: &[usize]) -> Result<(), StudyError> {
    if levels.len() < 2 {
        return Err(StudyError::BadLevels);
    }
    for w in levels.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(StudyError::BadLevels);
        }
    }
    Ok(())
}

/// How the step ratio is chosen for a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    Fixed(f64),
    /// sigma = fraction / (speed bound of the initial data at the finest
    /// level), i.e. sigma * max-speed starts at the given fraction of the
    /// stability limit.
    FractionOfStable(f64),
}

/// Snap sigma so the coarsest level takes an integer number of steps to the
/// horizon; doubling levels then land on the horizon exactly as well.
pub fn snap_sigma(sigma: f64, n_coarse: usize, horizon: f64) -> f64 {
    let steps = (horizon * n_coarse as f64 / sigma).round().max(1.0);
    horizon * n_coarse as f64 / steps
}

// ---------------------------------------------------------------------------
// Manufactured studies

/// Per-branch manufactured target fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedFields {
    pub p: Field2,
    pub q: Field2,
}

/// Residual of the manufactured pair inside the wrapped system, sampled at
/// deterministic quasi-random points of the space-time box. By construction
/// of the wrapper this vanishes to rounding; it still guards domain errors
/// (e.g. a target pressure leaving the admissible range) and derivative
/// wiring.
pub fn manufactured_residual(
    base: &dyn CoefficientModel,
    fields: &ManufacturedFields,
    horizon: f64,
    samples: usize,
) -> Result<f64, ModelError> {
    let xs = unit_samples(0x6d2e_55a1, samples);
    let ts = unit_samples(0x0b5e_7777, samples);
    let mut max_res: f64 = 0.0;
    for (xu, tu) in xs.iter().zip(&ts) {
        let (x, t) = (*xu, *tu * horizon);
        let ps = fields.p.value(x, t);
        let qs = fields.q.value(x, t);
        let co = base.eval(x, t, ps, qs)?;
        let fstar = fields.p.dt(x, t) + co.a * fields.q.dx(x, t);
        let gstar = fields.q.dt(x, t) + co.b * fields.p.dx(x, t) + 2.0 * co.c * fields.q.dx(x, t);
        let r1 = fields.p.dt(x, t) + co.a * fields.q.dx(x, t) - fstar;
        let r2 =
            fields.q.dt(x, t) + co.b * fields.p.dx(x, t) + 2.0 * co.c * fields.q.dx(x, t) - gstar;
        max_res = max_res.max(r1.abs().max(r2.abs()));
    }
    Ok(max_res)
}

/// Build a problem whose models are manufactured wraps of the network's
/// models and whose boundary signals are traces of the target fields, with
/// every branch overridden to `cells` grid cells. Returns the problem and
/// the initial state sampled from the fields at t=0.
pub fn manufactured_problem(
    net: &Network,
    fields: &BTreeMap<String, ManufacturedFields>,
    cells: usize,
) -> Result<(Problem, GridState), StudyError> {
    let mut net2 = net.clone();
    for b in &mut net2.branches {
        b.cells = cells;
    }
    let mut problem = Problem::from_network(&net2)?;
    for (i, b) in net2.branches.iter().enumerate() {
        let flds = fields.get(&b.id).ok_or_else(|| {
            StudyError::Setup(format!("no manufactured fields for branch `{}`", b.id))
        })?;
        let base = b.model.build()?;
        problem.branches[i].model =
            Box::new(ManufacturedModel::new(base, flds.p.clone(), flds.q.clone()));
        match &mut problem.branches[i].x0 {
            X0Closure::Source(SourceClosure::Pressure(sig)) => {
                let f = flds.p.clone();
                *sig = Box::new(FnSignal(move |t| f.value(0.0, t)));
            }
            X0Closure::Source(SourceClosure::Flow(sig)) => {
                let f = flds.q.clone();
                *sig = Box::new(FnSignal(move |t| f.value(0.0, t)));
            }
            X0Closure::Junction(_) => {}
        }
        match &mut problem.branches[i].x1 {
            X1Closure::Terminal(TerminalClosure::Pressure(sig)) => {
                let f = flds.p.clone();
                *sig = Box::new(FnSignal(move |t| f.value(1.0, t)));
            }
            X1Closure::Terminal(TerminalClosure::Flow(sig)) => {
                let f = flds.q.clone();
                *sig = Box::new(FnSignal(move |t| f.value(1.0, t)));
            }
            X1Closure::Terminal(TerminalClosure::Windkessel(wk)) => {
                let (p, q) = (flds.p.clone(), flds.q.clone());
                let (eta, delta, epsilon) = (wk.params.eta, wk.params.delta, wk.params.epsilon);
                wk.w = Box::new(FnSignal(move |t| {
                    p.dt(1.0, t) - eta * q.dt(1.0, t) + delta * p.value(1.0, t)
                        - epsilon * q.value(1.0, t)
                }));
            }
            X1Closure::Junction(_) => {}
        }
    }
    let cells_vec = problem.cells();
    let per_branch: Vec<&ManufacturedFields> = net2
        .branches
        .iter()
        .map(|b| fields.get(&b.id).unwrap())
        .collect();
    let initial = GridState::sample(&cells_vec, |bi, x| {
        (
            per_branch[bi].p.value(x, 0.0),
            per_branch[bi].q.value(x, 0.0),
        )
    });
    Ok((problem, initial))
}

fn resolve_sigma(
    net: &Network,
    fields: &BTreeMap<String, ManufacturedFields>,
    finest: usize,
    policy: SigmaPolicy,
) -> Result<f64, StudyError> {
    match policy {
        SigmaPolicy::Fixed(s) => Ok(s),
        SigmaPolicy::FractionOfStable(frac) => {
            let (problem, initial) = manufactured_problem(net, fields, finest)?;
            let sizes = StepSizes::with_sigma(&problem.cells(), 0.1);
            let report = crate::scheme::preflight(&problem, &initial, &sizes);
            if report.speed_bound <= 0.0 {
                return Err(StudyError::Setup(
                    "initial speed bound is zero; cannot derive sigma".into(),
                ));
            }
            Ok(frac / report.speed_bound)
        }
    }
}

/// Run the manufactured-solution convergence study over a doubling ladder
/// of grid levels. Errors are the discrete max over all nodes at the final
/// time, reference sampled exactly at the node locations.
pub fn run_manufactured_study(
    net: &Network,
    fields: &BTreeMap<String, ManufacturedFields>,
    levels: &[usize],
    horizon: f64,
    sigma: SigmaPolicy,
    window: (f64, f64),
) -> Result<ConvergenceReport, StudyError> {
    check_levels(levels)?;
    // residual gate before any level runs
    for b in &net.branches {
        let flds = fields.get(&b.id).ok_or_else(|| {
            StudyError::Setup(format!("no manufactured fields for branch `{}`", b.id))
        })?;
        let base = b.model.build()?;
        let res = manufactured_residual(base.as_ref(), flds, horizon, 1000)?;
        if res >= 1e-12 {
            return Err(StudyError::Setup(format!(
                "manufactured residual gate failed on `{}`: {res:.3e}",
                b.id
            )));
        }
    }
    let sigma = resolve_sigma(net, fields, *levels.last().unwrap(), sigma)?;
    let mut entries = Vec::new();
    for &n in levels {
        let (problem, initial) = manufactured_problem(net, fields, n)?;
        let sizes = StepSizes::with_sigma(&problem.cells(), sigma);
        let params = RunParams {
            horizon,
            stride: 0,
            probes: vec![],
        };
        let outcome = run(&problem, initial, &sizes, &params);
        if let Some(abort) = outcome.abort {
            return Err(StudyError::Abort { n, abort });
        }
        let t_end = outcome.end_time;
        let mut err: f64 = 0.0;
        for (bi, b) in net.branches.iter().enumerate() {
            let flds = &fields[&b.id];
            let grid = &outcome.final_state.fields[bi];
            for node in 0..=n {
                let x = node as f64 / n as f64;
                err = err.max((grid.p[node] - flds.p.value(x, t_end)).abs());
                err = err.max((grid.q[node] - flds.q.value(x, t_end)).abs());
            }
        }
        entries.push(LevelError {
            n,
            h: 1.0 / n as f64,
            error: err,
        });
    }
    Ok(ConvergenceReport::from_levels(entries, window).with_context(horizon, sigma))
}

// ---------------------------------------------------------------------------
// Oracle studies

/// Extract an oracle problem from a single-branch, linear-model network plus
/// initial profiles.
pub fn oracle_problem_from_network(
    net: &Network,
    p_init: &Profile,
    q_init: &Profile,
) -> Result<OracleProblem, StudyError> {
    if net.branches.len() != 1 || !net.junctions.is_empty() {
        return Err(StudyError::Setup(
            "oracle reference needs a single branch and no junctions".into(),
        ));
    }
    let branch = &net.branches[0];
    let (a, b, c, f, g) = match &branch.model {
        crate::model::ModelSpec::Linear { a, b, c, f, g } => (*a, *b, *c, *f, *g),
        _ => {
            return Err(StudyError::Setup(
                "oracle reference needs a linear constant-coefficient model".into(),
            ))
        }
    };
    let source = match net.sources.first() {
        Some(s) => match &s.kind {
            crate::network::SourceKind::Pressure(sig) => {
                OracleSource::Pressure(Box::new(sig.clone()))
            }
            crate::network::SourceKind::Flow(sig) => OracleSource::Flow(Box::new(sig.clone())),
        },
        None => return Err(StudyError::Setup("oracle reference needs a source".into())),
    };
    let terminal = match net.terminals.first() {
        Some(t) => match &t.kind {
            TerminalKind::Pressure(sig) => OracleTerminal::Pressure(Box::new(sig.clone())),
            TerminalKind::Flow(sig) => OracleTerminal::Flow(Box::new(sig.clone())),
            TerminalKind::Windkessel { params, w } => OracleTerminal::Windkessel {
                params: *params,
                w: Box::new(w.clone()),
            },
        },
        None => {
            return Err(StudyError::Setup(
                "oracle reference needs a terminal".into(),
            ))
        }
    };
    Ok(OracleProblem {
        a,
        b,
        c,
        forcing_f: Field2::constant(f),
        forcing_g: Field2::constant(g),
        source,
        terminal,
        p_init: p_init.clone(),
        q_init: q_init.clone(),
    })
}

/// Convergence of the scheme against the characteristics oracle on a linear
/// constant-coefficient single branch.
pub fn run_oracle_study(
    net: &Network,
    p_init: &Profile,
    q_init: &Profile,
    levels: &[usize],
    horizon: f64,
    sigma: SigmaPolicy,
    window: (f64, f64),
) -> Result<(ConvergenceReport, OracleSolution), StudyError> {
    check_levels(levels)?;
    let oracle_prob = oracle_problem_from_network(net, p_init, q_init)?;
    let oracle = crate::verify::solve_oracle(&oracle_prob, horizon)?;
    let sigma = match sigma {
        SigmaPolicy::Fixed(s) => s,
        SigmaPolicy::FractionOfStable(frac) => {
            let problem = Problem::from_network(net)?;
            let cells = problem.cells();
            let initial = GridState::sample(&cells, |_, x| (p_init.value(x), q_init.value(x)));
            let sizes = StepSizes::with_sigma(&cells, 0.1);
            let report = crate::scheme::preflight(&problem, &initial, &sizes);
            frac / report.speed_bound
        }
    };
    let mut entries = Vec::new();
    for &n in levels {
        let mut net2 = net.clone();
        net2.branches[0].cells = n;
        let problem = Problem::from_network(&net2)?;
        let initial =
            GridState::sample(&problem.cells(), |_, x| (p_init.value(x), q_init.value(x)));
        let sizes = StepSizes::with_sigma(&problem.cells(), sigma);
        let outcome = run(
            &problem,
            initial,
            &sizes,
            &RunParams {
                horizon,
                stride: 0,
                probes: vec![],
            },
        );
        if let Some(abort) = outcome.abort {
            return Err(StudyError::Abort { n, abort });
        }
        let t_end = outcome.end_time;
        let grid = &outcome.final_state.fields[0];
        let mut err: f64 = 0.0;
        for node in 0..=n {
            let x = node as f64 / n as f64;
            let (p_ref, q_ref) = oracle.eval(x, t_end);
            err = err.max((grid.p[node] - p_ref).abs());
            err = err.max((grid.q[node] - q_ref).abs());
        }
        entries.push(LevelError {
            n,
            h: 1.0 / n as f64,
            error: err,
        });
    }
    Ok((
        ConvergenceReport::from_levels(entries, window).with_context(horizon, sigma),
        oracle,
    ))
}

// ---------------------------------------------------------------------------
// Windkessel variant comparison

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantComparison {
    pub trapezoidal: ConvergenceReport,
    pub explicit: ConvergenceReport,
    pub reference_cells: usize,
}

/// Compare the time-centered and fully explicit windkessel closures against
/// a shared fine-grid reference (4x the finest level, centered closure).
/// Sigma is snapped so every level lands on the horizon exactly, making the
/// self-reference comparison meaningful at the final time.
pub fn windkessel_variant_comparison(
    net: &Network,
    p_init: &Profile,
    q_init: &Profile,
    levels: &[usize],
    horizon: f64,
    sigma_target: f64,
    window: (f64, f64),
) -> Result<VariantComparison, StudyError> {
    check_levels(levels)?;
    if !net
        .terminals
        .iter()
        .any(|t| matches!(t.kind, TerminalKind::Windkessel { .. }))
    {
        return Err(StudyError::Setup(
            "variant comparison needs a windkessel terminal".into(),
        ));
    }
    let sigma = snap_sigma(sigma_target, levels[0], horizon);
    let n_ref = 4 * levels.last().unwrap();

    let run_level = |n: usize, variant: WindkesselVariant| -> Result<GridState, StudyError> {
        let mut net2 = net.clone();
        for b in &mut net2.branches {
            b.cells = n;
        }
        let mut problem = Problem::from_network(&net2)?;
        problem.set_windkessel_variant(variant);
        let initial =
            GridState::sample(&problem.cells(), |_, x| (p_init.value(x), q_init.value(x)));
        let sizes = StepSizes::with_sigma(&problem.cells(), sigma);
        let outcome = run(
            &problem,
            initial,
            &sizes,
            &RunParams {
                horizon,
                stride: 0,
                probes: vec![],
            },
        );
        match outcome.abort {
            Some(abort) => Err(StudyError::Abort { n, abort }),
            None => Ok(outcome.final_state),
        }
    };

    let reference = run_level(n_ref, WindkesselVariant::Trapezoidal)?;
    let mut reports = Vec::new();
    for variant in [WindkesselVariant::Trapezoidal, WindkesselVariant::Explicit] {
        let mut entries = Vec::new();
        for &n in levels {
            let state = run_level(n, variant)?;
            let ratio = n_ref / n;
            let mut err: f64 = 0.0;
            for (bi, grid) in state.fields.iter().enumerate() {
                let ref_grid = &reference.fields[bi];
                for node in 0..=n {
                    err = err.max((grid.p[node] - ref_grid.p[node * ratio]).abs());
                    err = err.max((grid.q[node] - ref_grid.q[node * ratio]).abs());
                }
            }
            entries.push(LevelError {
                n,
                h: 1.0 / n as f64,
                error: err,
            });
        }
        reports.push(ConvergenceReport::from_levels(entries, window).with_context(horizon, sigma));
    }
    let explicit = reports.pop().unwrap();
    let trapezoidal = reports.pop().unwrap();
    Ok(VariantComparison {
        trapezoidal,
        explicit,
        reference_cells: n_ref,
    })
}

// ---------------------------------------------------------------------------
// Stability probe

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityEntry {
    pub eps: f64,
    pub deviation: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub entries: Vec<StabilityEntry>,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// Ratios agree within a factor of 2 across the eps ladder.
    pub passed: bool,
}

/// Perturb the initial pressure by `eps * sin^2(pi x)` across the ladder and
/// report the max-norm deviation at the horizon, scaled by eps. Empirical
/// shadow of the continuous-dependence bound: the ratios should be flat.
pub fn stability_probe(
    problem: &Problem,
    base_initial: &GridState,
    sizes: &StepSizes,
    horizon: f64,
    eps_ladder: &[f64],
) -> Result<StabilityReport, StudyError> {
    let params = RunParams {
        horizon,
        stride: 0,
        probes: vec![],
    };
    let base = run(problem, base_initial.clone(), sizes, &params);
    if let Some(abort) = base.abort {
        return Err(StudyError::Abort { n: 0, abort });
    }
    let mut entries = Vec::new();
    for &eps in eps_ladder {
        let mut perturbed = base_initial.clone();
        for (bi, grid) in perturbed.fields.iter_mut().enumerate() {
            let n = problem.branches[bi].cells;
            for node in 0..=n {
                let x = node as f64 / n as f64;
                let bump = (PI * x).sin().powi(2);
                grid.p[node] += eps * bump;
            }
        }
        let outcome = run(problem, perturbed, sizes, &params);
        if let Some(abort) = outcome.abort {
            return Err(StudyError::Abort { n: 0, abort });
        }
        let dev = outcome.final_state.max_abs_diff(&base.final_state);
        entries.push(StabilityEntry {
            eps,
            deviation: dev,
            ratio: dev / eps,
        });
    }
    let max_ratio = entries
        .iter()
        .map(|e| e.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = entries
        .iter()
        .map(|e| e.ratio)
        .fold(f64::INFINITY, f64::min);
    let passed = min_ratio > 0.0 && max_ratio / min_ratio <= 2.0;
    Ok(StabilityReport {
        entries,
        max_ratio,
        min_ratio,
        passed,
    })
}

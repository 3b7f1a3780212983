//! The explicit finite-difference solver on the normal form of the
//! equations: interior characteristic updates, source, terminal, junction,
//! and windkessel closures, and the time stepper.
//!
//! At each node the two update equations combine the level-m state through
//! the node-frozen characteristic combinations
//!
//! ```text
//!   rho(p, q) = -lambda_l p + a q      (right-moving)
//!   sig(p, q) = -lambda_r p + a q      (left-moving)
//! ```
//!
//! advected by one-sided differences matched to the characteristic
//! direction: the rho-equation differences toward n-1 weighted by lambda_r,
//! the sig-equation toward n+1 weighted by lambda_l. Interior nodes solve
//! the resulting 2x2 system in closed form; boundary nodes replace one of
//! the two equations with their closure.

use crate::characteristics::{self, EigenData};
use crate::linalg::Lu;
use crate::model::{CoefficientModel, Coefficients, ModelError};
use crate::network::{Network, SourceKind, TerminalKind, WindkesselParams};
use crate::signal::TimeSignal;
use std::fmt;
use thiserror::Error;

/// Default bound on |p|, |q| beyond which a run is declared blown up.
pub const DEFAULT_BLOWUP_BOUND: f64 = 1e12;

/// Relative tolerance on the junction mass balance of an accepted step.
pub const JUNCTION_MASS_RTOL: f64 = 1e-10;

/// Condition-number ceiling for the junction solve; beyond this the step is
/// treated as an internal inconsistency (unreachable under the sign
/// preconditions).
pub const JUNCTION_COND_LIMIT: f64 = 1e12;

/// Relative mismatch between initial data and boundary signals at t=0 above
/// which a compatibility warning is emitted.
pub const COMPAT_WARN_RTOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Step sizes and state

/// Spatial step per branch plus the global time step. `sigma(i) = k / h(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub k: f64,
    h: Vec<f64>,
}

impl StepSizes {
    /// Fixed time step; h per branch from its cell count.
    pub fn with_dt(cells: &[usize], k: f64) -> StepSizes {
        StepSizes {
            k,
            h: cells.iter().map(|&n| 1.0 / n as f64).collect(),
        }
    }

    /// Fixed ratio: k = sigma * min h, so every branch runs at or below the
    /// requested ratio.
    pub fn with_sigma(cells: &[usize], sigma: f64) -> StepSizes {
        let h: Vec<f64> = cells.iter().map(|&n| 1.0 / n as f64).collect();
        let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
        StepSizes { k: sigma * hmin, h }
    }

    pub fn h(&self, branch: usize) -> f64 {
        self.h[branch]
    }

    pub fn sigma(&self, branch: usize) -> f64 {
        self.k / self.h[branch]
    }
}

/// Per-branch grids of (p, q) at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrid {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub time: f64,
    pub fields: Vec<BranchGrid>,
}

impl GridState {
    /// Sample initial data at the grid nodes x = n/N of each branch.
    pub fn sample(cells: &[usize], mut f: impl FnMut(usize, f64) -> (f64, f64)) -> GridState {
        let fields = cells
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut p = Vec::with_capacity(n + 1);
                let mut q = Vec::with_capacity(n + 1);
                for node in 0..=n {
                    let x = node as f64 / n as f64;
                    let (pv, qv) = f(i, x);
                    p.push(pv);
                    q.push(qv);
                }
                BranchGrid { p, q }
            })
            .collect();
        GridState { time: 0.0, fields }
    }

    pub fn max_abs_diff(&self, other: &GridState) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.fields.iter().zip(&other.fields) {
            for (x, y) in a.p.iter().zip(&b.p) {
                m = m.max((x - y).abs());
            }
            for (x, y) in a.q.iter().zip(&b.q) {
                m = m.max((x - y).abs());
            }
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Problem assembly

pub enum SourceClosure {
    Pressure(Box<dyn TimeSignal>),
    Flow(Box<dyn TimeSignal>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindkesselVariant {
    /// Time-centered closure: averages of the two levels and W at the half
    /// step. This centering is what the convergence argument needs.
    Trapezoidal,
    /// Fully explicit closure evaluated at level m; kept for the comparison
    /// experiment only.
    Explicit,
}

pub struct WindkesselClosure {
    pub params: WindkesselParams,
    pub w: Box<dyn TimeSignal>,
    pub variant: WindkesselVariant,
}

pub enum TerminalClosure {
    Pressure(Box<dyn TimeSignal>),
    Flow(Box<dyn TimeSignal>),
    Windkessel(WindkesselClosure),
}

pub enum X0Closure {
    Source(SourceClosure),
    /// Outgoing port of the given junction.
    Junction(usize),
}

pub enum X1Closure {
    Terminal(TerminalClosure),
    /// Incoming port of the given junction.
    Junction(usize),
}

pub struct ProblemBranch {
    pub label: String,
    pub cells: usize,
    pub model: Box<dyn CoefficientModel>,
    pub x0: X0Closure,
    pub x1: X1Closure,
}

/// Branch indices of the ports of one junction.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionPorts {
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
}

pub struct Problem {
    pub branches: Vec<ProblemBranch>,
    pub junctions: Vec<JunctionPorts>,
    pub blowup_bound: f64,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("network is not well-formed: {0}")]
    Invalid(String),
}

impl Problem {
    /// Instantiate models and wire closures from a parsed network. The
    /// network must validate cleanly; end-coverage violations surface here
    /// as build errors.
    pub fn from_network(net: &Network) -> Result<Problem, BuildError> {
        let mut x0: Vec<Option<X0Closure>> = (0..net.branches.len()).map(|_| None).collect();
        let mut x1: Vec<Option<X1Closure>> = (0..net.branches.len()).map(|_| None).collect();
        let lookup = |id: &str| {
            net.branch_index(id)
                .ok_or_else(|| BuildError::Invalid(format!("unknown branch `{id}`")))
        };
        let mut assign_x0 = |i: usize, c: X0Closure, net: &Network| {
            if x0[i].is_some() {
                return Err(BuildError::Invalid(format!(
                    "branch `{}` x0 end has two closures",
                    net.branches[i].id
                )));
            }
            x0[i] = Some(c);
            Ok(())
        };
        let mut assign_x1 = |i: usize, c: X1Closure, net: &Network| {
            if x1[i].is_some() {
                return Err(BuildError::Invalid(format!(
                    "branch `{}` x1 end has two closures",
                    net.branches[i].id
                )));
            }
            x1[i] = Some(c);
            Ok(())
        };
        for s in &net.sources {
            let i = lookup(&s.branch)?;
            let closure = match &s.kind {
                SourceKind::Pressure(sig) => SourceClosure::Pressure(Box::new(sig.clone())),
                SourceKind::Flow(sig) => SourceClosure::Flow(Box::new(sig.clone())),
            };
            assign_x0(i, X0Closure::Source(closure), net)?;
        }
        for t in &net.terminals {
            let i = lookup(&t.branch)?;
            let closure = match &t.kind {
                TerminalKind::Pressure(sig) => TerminalClosure::Pressure(Box::new(sig.clone())),
                TerminalKind::Flow(sig) => TerminalClosure::Flow(Box::new(sig.clone())),
                TerminalKind::Windkessel { params, w } => {
                    TerminalClosure::Windkessel(WindkesselClosure {
                        params: *params,
                        w: Box::new(w.clone()),
                        variant: WindkesselVariant::Trapezoidal,
                    })
                }
            };
            assign_x1(i, X1Closure::Terminal(closure), net)?;
        }
        let mut junctions = Vec::new();
        for (j, junc) in net.junctions.iter().enumerate() {
            let mut ports = JunctionPorts {
                incoming: Vec::new(),
                outgoing: Vec::new(),
            };
            for id in &junc.incoming {
                let i = lookup(id)?;
                assign_x1(i, X1Closure::Junction(j), net)?;
                ports.incoming.push(i);
            }
            for id in &junc.outgoing {
                let i = lookup(id)?;
                assign_x0(i, X0Closure::Junction(j), net)?;
                ports.outgoing.push(i);
            }
            junctions.push(ports);
        }
        let mut branches = Vec::new();
        for (i, b) in net.branches.iter().enumerate() {
            if b.cells < 2 {
                return Err(BuildError::Invalid(format!(
                    "branch `{}` has {} cells; the stencil needs at least 2",
                    b.id, b.cells
                )));
            }
            branches.push(ProblemBranch {
                label: b.id.clone(),
                cells: b.cells,
                model: b.model.build()?,
                x0: x0[i].take().ok_or_else(|| {
                    BuildError::Invalid(format!("branch `{}` x0 end has no closure", b.id))
                })?,
                x1: x1[i].take().ok_or_else(|| {
                    BuildError::Invalid(format!("branch `{}` x1 end has no closure", b.id))
                })?,
            });
        }
        Ok(Problem {
            branches,
            junctions,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
        })
    }

    pub fn cells(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.cells).collect()
    }

    /// Switch every windkessel terminal to the given closure variant.
    pub fn set_windkessel_variant(&mut self, variant: WindkesselVariant) {
        for b in &mut self.branches {
            if let X1Closure::Terminal(TerminalClosure::Windkessel(wk)) = &mut b.x1 {
                wk.variant = variant;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Aborts and diagnostics

#[derive(Debug, Clone, PartialEq)]
pub enum AbortKind {
    Domain(ModelError),
    HyperbolicityLoss {
        discriminant: f64,
    },
    BoundarySign {
        lambda_l: f64,
        lambda_r: f64,
    },
    CflViolation {
        sigma_speed: f64,
    },
    Blowup {
        value: f64,
        bound: f64,
    },
    NonFinite,
    JunctionConditioning {
        junction: usize,
        cond: f64,
        det: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverAbort {
    pub branch: Option<String>,
    pub node: Option<usize>,
    pub time: f64,
    pub kind: AbortKind,
}

impl fmt::Display for SolverAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let loc = match (&self.branch, self.node) {
            (Some(b), Some(n)) => format!("branch `{b}`, node {n}"),
            (Some(b), None) => format!("branch `{b}`"),
            _ => "network".to_string(),
        };
        let what = match &self.kind {
            AbortKind::Domain(e) => format!("domain error: {e}"),
            AbortKind::HyperbolicityLoss { discriminant } => {
                format!("hyperbolicity lost (c^2+ab = {discriminant:.6e})")
            }
            AbortKind::BoundarySign { lambda_l, lambda_r } => format!(
                "boundary sign condition failed (lambda_l = {lambda_l:.6e}, lambda_r = {lambda_r:.6e})"
            ),
            AbortKind::CflViolation { sigma_speed } => {
                format!("CFL violated (sigma * speed = {sigma_speed:.6e} >= 1)")
            }
            AbortKind::Blowup { value, bound } => {
                format!("solution blew up (|value| = {value:.3e} > {bound:.1e})")
            }
            AbortKind::NonFinite => "non-finite value produced".to_string(),
            AbortKind::JunctionConditioning { junction, cond, det } => format!(
                "junction {junction} system ill-conditioned (cond = {cond:.3e}, det = {det:.6e})"
            ),
        };
        write!(f, "t = {:.6}: {what} at {loc}", self.time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionDiag {
    pub mass_residual: f64,
    /// 1 + sum of |q| over the ports; the residual tolerance scales by this.
    pub mass_scale: f64,
    /// Max |port pressure - common pressure|; zero bit-exactly, since ports
    /// are assigned the common value.
    pub pressure_mismatch: f64,
    pub det: f64,
    pub cond: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub speed_bound: f64,
    pub min_discriminant: f64,
    pub junctions: Vec<JunctionDiag>,
    /// 2x2 closure determinants of windkessel terminals this step.
    pub windkessel_dets: Vec<(usize, f64)>,
    /// (lambda_l < 0 < lambda_r) at each branch end; true on accepted steps.
    pub boundary_sign_ok: Vec<[bool; 2]>,
}

// ---------------------------------------------------------------------------
// Node evaluation

/// Coefficients, eigenstructure, and normal-form right-hand sides of one
/// node at the current level; the whole update is explicit in these.
#[derive(Debug, Clone, Copy)]
pub struct NodeEval {
    pub co: Coefficients,
    pub eig: EigenData,
    pub d_r: f64,
    pub d_l: f64,
}

fn eval_node(
    model: &dyn CoefficientModel,
    x: f64,
    t: f64,
    p: f64,
    q: f64,
) -> Result<NodeEval, AbortKind> {
    let co = model.eval(x, t, p, q).map_err(AbortKind::Domain)?;
    let eig = characteristics::eigen(&co).map_err(|e| AbortKind::HyperbolicityLoss {
        discriminant: e.discriminant,
    })?;
    let (d_r, d_l) = characteristics::normal_rhs(&co, &eig);
    Ok(NodeEval { co, eig, d_r, d_l })
}

struct LevelEval {
    nodes: Vec<Vec<NodeEval>>,
    branch_bound: Vec<f64>,
    speed_bound: f64,
    min_discriminant: f64,
    /// node index attaining the branch speed bound, for abort locations
    argmax_node: Vec<usize>,
}

fn eval_level(problem: &Problem, state: &GridState) -> Result<LevelEval, SolverAbort> {
    let t = state.time;
    let mut nodes = Vec::with_capacity(problem.branches.len());
    let mut branch_bound = Vec::with_capacity(problem.branches.len());
    let mut argmax_node = Vec::with_capacity(problem.branches.len());
    let mut speed_bound: f64 = 0.0;
    let mut min_disc = f64::INFINITY;
    for (i, b) in problem.branches.iter().enumerate() {
        let grid = &state.fields[i];
        let n = b.cells;
        let mut evs = Vec::with_capacity(n + 1);
        let mut bound: f64 = 0.0;
        let mut arg = 0usize;
        for node in 0..=n {
            let x = node as f64 / n as f64;
            let ev =
                eval_node(b.model.as_ref(), x, t, grid.p[node], grid.q[node]).map_err(|kind| {
                    SolverAbort {
                        branch: Some(b.label.clone()),
                        node: Some(node),
                        time: t,
                        kind,
                    }
                })?;
            let speed = ev.eig.lambda_l.abs().max(ev.eig.lambda_r.abs());
            if speed > bound {
                bound = speed;
                arg = node;
            }
            min_disc = min_disc.min(ev.eig.u * ev.eig.u);
            evs.push(ev);
        }
        speed_bound = speed_bound.max(bound);
        branch_bound.push(bound);
        argmax_node.push(arg);
        nodes.push(evs);
    }
    Ok(LevelEval {
        nodes,
        branch_bound,
        speed_bound,
        min_discriminant: min_disc,
        argmax_node,
    })
}

// ---------------------------------------------------------------------------
// Update equations

fn rcomb(ev: &NodeEval, p: f64, q: f64) -> f64 {
    -ev.eig.lambda_l * p + ev.co.a * q
}

fn scomb(ev: &NodeEval, p: f64, q: f64) -> f64 {
    -ev.eig.lambda_r * p + ev.co.a * q
}

/// Right-hand side of the rho-equation at node n (differences toward n-1):
/// the unknowns satisfy `(-lambda_l/k) p + (a/k) q = rhs`.
pub fn rhs_fde1(ev: &NodeEval, grid: &BranchGrid, n: usize, h: f64, k: f64) -> f64 {
    let rho_n = rcomb(ev, grid.p[n], grid.q[n]);
    let rho_m1 = rcomb(ev, grid.p[n - 1], grid.q[n - 1]);
    ev.d_r + rho_n / k - ev.eig.lambda_r * (rho_n - rho_m1) / h
}

/// Right-hand side of the sig-equation at node n (differences toward n+1):
/// the unknowns satisfy `(-lambda_r/k) p + (a/k) q = rhs`.
pub fn rhs_fde2(ev: &NodeEval, grid: &BranchGrid, n: usize, h: f64, k: f64) -> f64 {
    let sig_n = scomb(ev, grid.p[n], grid.q[n]);
    let sig_p1 = scomb(ev, grid.p[n + 1], grid.q[n + 1]);
    ev.d_l + sig_n / k - ev.eig.lambda_l * (sig_p1 - sig_n) / h
}

/// Closed-form solve of the interior 2x2 system
/// [[-lambda_l/k, a/k], [-lambda_r/k, a/k]] (p,q) = (rhs1, rhs2); its
/// determinant a (lambda_r - lambda_l) / k^2 is positive.
pub fn interior_update(ev: &NodeEval, rhs1: f64, rhs2: f64, k: f64) -> (f64, f64) {
    let p = k * (rhs1 - rhs2) / (2.0 * ev.eig.u);
    let q = (k * rhs1 + ev.eig.lambda_l * p) / ev.co.a;
    (p, q)
}

/// Source closure at n=0: fix the prescribed quantity at level m+1 and solve
/// the other from the sig-equation.
pub fn source_update(
    prescribe_pressure: bool,
    value: f64,
    ev: &NodeEval,
    rhs2: f64,
    k: f64,
) -> (f64, f64) {
    if prescribe_pressure {
        let p = value;
        let q = (k * rhs2 + ev.eig.lambda_r * p) / ev.co.a;
        (p, q)
    } else {
        let q = value;
        let p = (ev.co.a * q - k * rhs2) / ev.eig.lambda_r;
        (p, q)
    }
}

/// Terminal closure at n=N: fix the prescribed quantity and solve the other
/// from the rho-equation.
pub fn terminal_update(
    prescribe_pressure: bool,
    value: f64,
    ev: &NodeEval,
    rhs1: f64,
    k: f64,
) -> (f64, f64) {
    if prescribe_pressure {
        let p = value;
        let q = (k * rhs1 + ev.eig.lambda_l * p) / ev.co.a;
        (p, q)
    } else {
        let q = value;
        let p = (ev.co.a * q - k * rhs1) / ev.eig.lambda_l;
        (p, q)
    }
}

/// Time-centered windkessel closure at n=N, solved jointly with the
/// rho-equation:
///
/// ```text
///   (p' - p)/k - eta (q' - q)/k + delta (p' + p)/2 - epsilon (q' + q)/2 = W((m+1/2) k)
/// ```
///
/// Returns the new pair and the 2x2 determinant (negative under the sign
/// preconditions).
pub fn windkessel_update(
    wk: &WindkesselParams,
    w_half: f64,
    p_old: f64,
    q_old: f64,
    ev: &NodeEval,
    rhs1: f64,
    k: f64,
) -> ((f64, f64), f64) {
    let m00 = -ev.eig.lambda_l / k;
    let m01 = ev.co.a / k;
    let m10 = 1.0 / k + wk.delta / 2.0;
    let m11 = -wk.eta / k - wk.epsilon / 2.0;
    let r1 =
        w_half + p_old / k - wk.eta * q_old / k - wk.delta * p_old / 2.0 + wk.epsilon * q_old / 2.0;
    let det = m00 * m11 - m01 * m10;
    let p = (rhs1 * m11 - m01 * r1) / det;
    let q = (m00 * r1 - rhs1 * m10) / det;
    ((p, q), det)
}

/// Fully explicit windkessel closure (comparison variant):
///
/// ```text
///   (p' - p)/k - eta (q' - q)/k + delta p - epsilon q = W(m k)
/// ```
pub fn windkessel_update_explicit(
    wk: &WindkesselParams,
    w_level: f64,
    p_old: f64,
    q_old: f64,
    ev: &NodeEval,
    rhs1: f64,
    k: f64,
) -> ((f64, f64), f64) {
    let m00 = -ev.eig.lambda_l / k;
    let m01 = ev.co.a / k;
    let m10 = 1.0 / k;
    let m11 = -wk.eta / k;
    let r1 = w_level + p_old / k - wk.eta * q_old / k - wk.delta * p_old + wk.epsilon * q_old;
    let det = m00 * m11 - m01 * m10;
    let p = (rhs1 * m11 - m01 * r1) / det;
    let q = (m00 * r1 - rhs1 * m10) / det;
    ((p, q), det)
}

/// One port of a junction system.
pub struct PortEquation {
    /// Branch index (for write-back by the caller).
    pub branch: usize,
    /// lambda_l at n=N for incoming ports, lambda_r at n=0 for outgoing.
    pub lambda: f64,
    pub a: f64,
    pub rhs: f64,
    pub incoming: bool,
}

/// Assemble and solve the (mu+1) x (mu+1) junction system: one mass-balance
/// row plus each port's boundary-node equation, with unknowns (common
/// pressure, each port's flow). The mass row carries -1 on incoming and +1
/// on outgoing flows, which makes the determinant equal to the closed form
/// `(1/k^mu) (-sum_in lambda_l/a + sum_out lambda_r/a) prod a`, positive
/// under the sign preconditions.
pub fn junction_solve(ports: &[PortEquation], k: f64) -> Option<(f64, Vec<f64>, f64, f64)> {
    let mu = ports.len();
    let n = mu + 1;
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (i, port) in ports.iter().enumerate() {
        a[i + 1] = if port.incoming { -1.0 } else { 1.0 };
        a[(i + 1) * n] = -port.lambda / k;
        a[(i + 1) * n + (i + 1)] = port.a / k;
        rhs[i + 1] = port.rhs;
    }
    let lu = Lu::factor(a.clone(), n)?;
    let det = lu.det();
    let cond = lu.cond_inf(&a);
    let x = lu.solve(&rhs);
    Some((x[0], x[1..].to_vec(), det, cond))
}

/// Closed-form junction determinant from the sign analysis, for cross-checks
/// and debug assertions.
pub fn junction_det_closed_form(ports: &[PortEquation], k: f64) -> f64 {
    let mut sum = 0.0;
    let mut prod = 1.0;
    for port in ports {
        prod *= port.a;
        if port.incoming {
            sum -= port.lambda / port.a;
        } else {
            sum += port.lambda / port.a;
        }
    }
    sum * prod / k.powi(ports.len() as i32)
}

// ---------------------------------------------------------------------------
// The step

/// Advance one time level. Coefficients are evaluated at level m everywhere
/// (the scheme is explicit); all closures write into the new state.
pub fn step(
    problem: &Problem,
    state: &GridState,
    sizes: &StepSizes,
) -> Result<(GridState, StepDiagnostics), SolverAbort> {
    let t = state.time;
    let k = sizes.k;
    let t_next = t + k;
    let level = eval_level(problem, state)?;

    // CFL, per branch against the current speed bound.
    for (i, b) in problem.branches.iter().enumerate() {
        let sigma_speed = sizes.sigma(i) * level.branch_bound[i];
        if !characteristics::cfl_ok(sizes.sigma(i), level.branch_bound[i]) {
            return Err(SolverAbort {
                branch: Some(b.label.clone()),
                node: Some(level.argmax_node[i]),
                time: t,
                kind: AbortKind::CflViolation { sigma_speed },
            });
        }
    }

    // Boundary sign condition at every branch end; a violation rejects the
    // step, so accepted-step flags are all true.
    let mut sign_flags = Vec::with_capacity(problem.branches.len());
    for (i, b) in problem.branches.iter().enumerate() {
        let ends = [
            (0usize, &level.nodes[i][0]),
            (b.cells, &level.nodes[i][b.cells]),
        ];
        for (node, ev) in ends {
            if !characteristics::boundary_sign_ok(&ev.eig) {
                return Err(SolverAbort {
                    branch: Some(b.label.clone()),
                    node: Some(node),
                    time: t,
                    kind: AbortKind::BoundarySign {
                        lambda_l: ev.eig.lambda_l,
                        lambda_r: ev.eig.lambda_r,
                    },
                });
            }
        }
        sign_flags.push([true, true]);
    }

    let mut new = GridState {
        time: t_next,
        fields: problem
            .branches
            .iter()
            .map(|b| BranchGrid {
                p: vec![0.0; b.cells + 1],
                q: vec![0.0; b.cells + 1],
            })
            .collect(),
    };
    let mut wk_dets = Vec::new();

    for (i, b) in problem.branches.iter().enumerate() {
        let grid = &state.fields[i];
        let h = sizes.h(i);
        let n = b.cells;
        for node in 1..n {
            let ev = &level.nodes[i][node];
            let rhs1 = rhs_fde1(ev, grid, node, h, k);
            let rhs2 = rhs_fde2(ev, grid, node, h, k);
            let (p, q) = interior_update(ev, rhs1, rhs2, k);
            new.fields[i].p[node] = p;
            new.fields[i].q[node] = q;
        }
        match &b.x0 {
            X0Closure::Source(src) => {
                let ev = &level.nodes[i][0];
                let rhs2 = rhs_fde2(ev, grid, 0, h, k);
                let (p, q) = match src {
                    SourceClosure::Pressure(sig) => {
                        source_update(true, sig.at(t_next), ev, rhs2, k)
                    }
                    SourceClosure::Flow(sig) => source_update(false, sig.at(t_next), ev, rhs2, k),
                };
                new.fields[i].p[0] = p;
                new.fields[i].q[0] = q;
            }
            X0Closure::Junction(_) => {}
        }
        match &b.x1 {
            X1Closure::Terminal(term) => {
                let ev = &level.nodes[i][n];
                let rhs1 = rhs_fde1(ev, grid, n, h, k);
                let (p, q) = match term {
                    TerminalClosure::Pressure(sig) => {
                        terminal_update(true, sig.at(t_next), ev, rhs1, k)
                    }
                    TerminalClosure::Flow(sig) => {
                        terminal_update(false, sig.at(t_next), ev, rhs1, k)
                    }
                    TerminalClosure::Windkessel(wk) => {
                        let (pq, det) = match wk.variant {
                            WindkesselVariant::Trapezoidal => windkessel_update(
                                &wk.params,
                                wk.w.at(t + 0.5 * k),
                                grid.p[n],
                                grid.q[n],
                                ev,
                                rhs1,
                                k,
                            ),
                            WindkesselVariant::Explicit => windkessel_update_explicit(
                                &wk.params,
                                wk.w.at(t),
                                grid.p[n],
                                grid.q[n],
                                ev,
                                rhs1,
                                k,
                            ),
                        };
                        wk_dets.push((i, det));
                        debug_assert!(det < 0.0, "windkessel determinant must be negative");
                        pq
                    }
                };
                new.fields[i].p[n] = p;
                new.fields[i].q[n] = q;
            }
            X1Closure::Junction(_) => {}
        }
    }

    // Junction closures, port-based so a branch may attach twice.
    let mut junction_diags = Vec::with_capacity(problem.junctions.len());
    for (j, junc) in problem.junctions.iter().enumerate() {
        let mut ports = Vec::with_capacity(junc.incoming.len() + junc.outgoing.len());
        for &bi in &junc.incoming {
            let n = problem.branches[bi].cells;
            let ev = &level.nodes[bi][n];
            ports.push(PortEquation {
                branch: bi,
                lambda: ev.eig.lambda_l,
                a: ev.co.a,
                rhs: rhs_fde1(ev, &state.fields[bi], n, sizes.h(bi), k),
                incoming: true,
            });
        }
        for &bi in &junc.outgoing {
            let ev = &level.nodes[bi][0];
            ports.push(PortEquation {
                branch: bi,
                lambda: ev.eig.lambda_r,
                a: ev.co.a,
                rhs: rhs_fde2(ev, &state.fields[bi], 0, sizes.h(bi), k),
                incoming: false,
            });
        }
        let solved = junction_solve(&ports, k);
        let (p_common, flows, det, cond) = match solved {
            Some(s) => s,
            None => {
                return Err(SolverAbort {
                    branch: None,
                    node: None,
                    time: t,
                    kind: AbortKind::JunctionConditioning {
                        junction: j,
                        cond: f64::INFINITY,
                        det: 0.0,
                    },
                })
            }
        };
        if !(cond <= JUNCTION_COND_LIMIT) {
            return Err(SolverAbort {
                branch: None,
                node: None,
                time: t,
                kind: AbortKind::JunctionConditioning {
                    junction: j,
                    cond,
                    det,
                },
            });
        }
        debug_assert!(det > 0.0, "junction determinant must be positive");
        let mut mass = 0.0;
        let mut scale = 1.0;
        for (port, &q) in ports.iter().zip(&flows) {
            let node = if port.incoming {
                problem.branches[port.branch].cells
            } else {
                0
            };
            new.fields[port.branch].p[node] = p_common;
            new.fields[port.branch].q[node] = q;
            mass += if port.incoming { q } else { -q };
            scale += q.abs();
        }
        // accepted steps keep the solved mass balance within the linear-solve
        // tolerance; a larger residual is an internal inconsistency
        if !(mass.abs() <= JUNCTION_MASS_RTOL * scale) {
            return Err(SolverAbort {
                branch: None,
                node: None,
                time: t,
                kind: AbortKind::JunctionConditioning {
                    junction: j,
                    cond,
                    det,
                },
            });
        }
        junction_diags.push(JunctionDiag {
            mass_residual: mass.abs(),
            mass_scale: scale,
            pressure_mismatch: 0.0,
            det,
            cond,
        });
    }

    // Finiteness and blowup scan.
    for (i, b) in problem.branches.iter().enumerate() {
        for node in 0..=b.cells {
            for v in [new.fields[i].p[node], new.fields[i].q[node]] {
                if !v.is_finite() {
                    return Err(SolverAbort {
                        branch: Some(b.label.clone()),
                        node: Some(node),
                        time: t_next,
                        kind: AbortKind::NonFinite,
                    });
                }
                if v.abs() > problem.blowup_bound {
                    return Err(SolverAbort {
                        branch: Some(b.label.clone()),
                        node: Some(node),
                        time: t_next,
                        kind: AbortKind::Blowup {
                            value: v.abs(),
                            bound: problem.blowup_bound,
                        },
                    });
                }
            }
        }
    }

    Ok((
        new,
        StepDiagnostics {
            speed_bound: level.speed_bound,
            min_discriminant: level.min_discriminant,
            junctions: junction_diags,
            windkessel_dets: wk_dets,
            boundary_sign_ok: sign_flags,
        },
    ))
}

// ---------------------------------------------------------------------------
// Preflight checks (shared by `check` and `run`)

#[derive(Debug, Clone, PartialEq)]
pub enum PreflightIssue {
    Hyperbolicity {
        branch: String,
        node: usize,
        discriminant: f64,
    },
    BoundarySign {
        branch: String,
        node: usize,
        lambda_l: f64,
        lambda_r: f64,
    },
    Cfl {
        branch: String,
        sigma_speed: f64,
        speed_bound: f64,
    },
    Domain {
        branch: String,
        node: usize,
        error: String,
    },
}

impl fmt::Display for PreflightIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreflightIssue::Hyperbolicity { branch, node, discriminant } => write!(
                f,
                "cond2 (hyperbolicity) fails on `{branch}` node {node}: c^2+ab = {discriminant:.6e}"
            ),
            PreflightIssue::BoundarySign { branch, node, lambda_l, lambda_r } => write!(
                f,
                "cond3 (boundary sign) fails on `{branch}` node {node}: lambda_l = {lambda_l:.6e}, lambda_r = {lambda_r:.6e}"
            ),
            PreflightIssue::Cfl { branch, sigma_speed, speed_bound } => write!(
                f,
                "CFL fails on `{branch}`: sigma * speed = {sigma_speed:.6e} >= 1 (speed bound {speed_bound:.6e})"
            ),
            PreflightIssue::Domain { branch, node, error } => {
                write!(f, "model domain error on `{branch}` node {node}: {error}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatWarning {
    pub branch: Option<String>,
    pub place: String,
    pub mismatch: f64,
}

impl fmt::Display for CompatWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "initial data vs boundary mismatch at {} ({:.3e} relative)",
            self.place, self.mismatch
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreflightReport {
    pub issues: Vec<PreflightIssue>,
    pub warnings: Vec<CompatWarning>,
    pub speed_bound: f64,
}

impl PreflightReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Evaluate conditions at t=0 on the initial data without advancing:
/// hyperbolicity at every node, boundary sign at every endpoint, CFL for
/// the given sizes, and initial/boundary compatibility (warnings).
pub fn preflight(problem: &Problem, state: &GridState, sizes: &StepSizes) -> PreflightReport {
    let mut report = PreflightReport::default();
    let t = state.time;
    for (i, b) in problem.branches.iter().enumerate() {
        let grid = &state.fields[i];
        let n = b.cells;
        let mut bound: f64 = 0.0;
        for node in 0..=n {
            let x = node as f64 / n as f64;
            match eval_node(b.model.as_ref(), x, t, grid.p[node], grid.q[node]) {
                Ok(ev) => {
                    bound = bound.max(ev.eig.lambda_l.abs().max(ev.eig.lambda_r.abs()));
                    if (node == 0 || node == n) && !characteristics::boundary_sign_ok(&ev.eig) {
                        report.issues.push(PreflightIssue::BoundarySign {
                            branch: b.label.clone(),
                            node,
                            lambda_l: ev.eig.lambda_l,
                            lambda_r: ev.eig.lambda_r,
                        });
                    }
                }
                Err(AbortKind::HyperbolicityLoss { discriminant }) => {
                    report.issues.push(PreflightIssue::Hyperbolicity {
                        branch: b.label.clone(),
                        node,
                        discriminant,
                    })
                }
                Err(AbortKind::Domain(e)) => report.issues.push(PreflightIssue::Domain {
                    branch: b.label.clone(),
                    node,
                    error: e.to_string(),
                }),
                Err(_) => unreachable!("eval_node only fails with domain or hyperbolicity"),
            }
        }
        report.speed_bound = report.speed_bound.max(bound);
        let sigma_speed = sizes.sigma(i) * bound;
        if !characteristics::cfl_ok(sizes.sigma(i), bound) {
            report.issues.push(PreflightIssue::Cfl {
                branch: b.label.clone(),
                sigma_speed,
                speed_bound: bound,
            });
        }
    }
    report.warnings = compatibility_warnings(problem, state);
    report
}

fn rel_mismatch(actual: f64, imposed: f64) -> f64 {
    (actual - imposed).abs() / (1.0 + actual.abs())
}

fn compatibility_warnings(problem: &Problem, state: &GridState) -> Vec<CompatWarning> {
    let t = state.time;
    let mut warnings = Vec::new();
    for (i, b) in problem.branches.iter().enumerate() {
        let grid = &state.fields[i];
        let n = b.cells;
        match &b.x0 {
            X0Closure::Source(SourceClosure::Pressure(sig)) => {
                let m = rel_mismatch(grid.p[0], sig.at(t));
                if m > COMPAT_WARN_RTOL {
                    warnings.push(CompatWarning {
                        branch: Some(b.label.clone()),
                        place: format!("source pressure on `{}`", b.label),
                        mismatch: m,
                    });
                }
            }
            X0Closure::Source(SourceClosure::Flow(sig)) => {
                let m = rel_mismatch(grid.q[0], sig.at(t));
                if m > COMPAT_WARN_RTOL {
                    warnings.push(CompatWarning {
                        branch: Some(b.label.clone()),
                        place: format!("source flow on `{}`", b.label),
                        mismatch: m,
                    });
                }
            }
            X0Closure::Junction(_) => {}
        }
        match &b.x1 {
            X1Closure::Terminal(TerminalClosure::Pressure(sig)) => {
                let m = rel_mismatch(grid.p[n], sig.at(t));
                if m > COMPAT_WARN_RTOL {
                    warnings.push(CompatWarning {
                        branch: Some(b.label.clone()),
                        place: format!("terminal pressure on `{}`", b.label),
                        mismatch: m,
                    });
                }
            }
            X1Closure::Terminal(TerminalClosure::Flow(sig)) => {
                let m = rel_mismatch(grid.q[n], sig.at(t));
                if m > COMPAT_WARN_RTOL {
                    warnings.push(CompatWarning {
                        branch: Some(b.label.clone()),
                        place: format!("terminal flow on `{}`", b.label),
                        mismatch: m,
                    });
                }
            }
            // The windkessel condition constrains time derivatives of the
            // data, which the sampled initial state cannot supply.
            X1Closure::Terminal(TerminalClosure::Windkessel(_)) => {}
            X1Closure::Junction(_) => {}
        }
    }
    for (j, junc) in problem.junctions.iter().enumerate() {
        let mut inflow = 0.0;
        let mut outflow = 0.0;
        let mut scale = 1.0;
        let mut pressures = Vec::new();
        for &bi in &junc.incoming {
            let n = problem.branches[bi].cells;
            inflow += state.fields[bi].q[n];
            scale += state.fields[bi].q[n].abs();
            pressures.push(state.fields[bi].p[n]);
        }
        for &bi in &junc.outgoing {
            outflow += state.fields[bi].q[0];
            scale += state.fields[bi].q[0].abs();
            pressures.push(state.fields[bi].p[0]);
        }
        let mass = (inflow - outflow).abs() / scale;
        if mass > COMPAT_WARN_RTOL {
            warnings.push(CompatWarning {
                branch: None,
                place: format!("junction {j} mass balance"),
                mismatch: mass,
            });
        }
        let pmax = pressures.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pmin = pressures.iter().cloned().fold(f64::INFINITY, f64::min);
        let pm = (pmax - pmin).abs() / (1.0 + pmax.abs());
        if pm > COMPAT_WARN_RTOL {
            warnings.push(CompatWarning {
                branch: None,
                place: format!("junction {j} pressure continuity"),
                mismatch: pm,
            });
        }
    }
    warnings
}

// ---------------------------------------------------------------------------
// The run loop

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub branch: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub t: f64,
    pub branch: String,
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub horizon: f64,
    /// Emit probe rows every `stride`-th step.
    pub stride: usize,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAggregates {
    pub max_speed: f64,
    pub min_discriminant: f64,
    /// Max over steps of mass residual / (1 + sum |q|) at any junction.
    pub max_junction_mass_rel: f64,
    pub max_port_pressure_mismatch: f64,
    pub min_junction_det: Option<f64>,
    pub max_windkessel_det: Option<f64>,
}

impl Default for RunAggregates {
    fn default() -> Self {
        RunAggregates {
            max_speed: 0.0,
            min_discriminant: f64::INFINITY,
            max_junction_mass_rel: 0.0,
            max_port_pressure_mismatch: 0.0,
            min_junction_det: None,
            max_windkessel_det: None,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub final_state: GridState,
    pub steps: usize,
    pub end_time: f64,
    pub aggregates: RunAggregates,
    pub probe_rows: Vec<ProbeRow>,
    pub warnings: Vec<CompatWarning>,
    pub abort: Option<SolverAbort>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Snap a probe to the nearest grid node of its branch.
pub fn snap_probe(problem: &Problem, probe: &Probe) -> (usize, f64) {
    let n = problem.branches[probe.branch].cells;
    let node = (probe.x * n as f64).round().clamp(0.0, n as f64) as usize;
    (node, node as f64 / n as f64)
}

/// Iterate the scheme from the initial state until t >= horizon or an abort.
/// A final partial step is not taken: the achieved end time is
/// floor(horizon/k) steps long.
pub fn run(
    problem: &Problem,
    initial: GridState,
    sizes: &StepSizes,
    params: &RunParams,
) -> RunOutcome {
    let t0 = initial.time;
    let k = sizes.k;
    let total_steps = if params.horizon > 0.0 {
        (params.horizon / k + 1e-9).floor() as usize
    } else {
        0
    };
    let snapped: Vec<(usize, usize, f64)> = params
        .probes
        .iter()
        .map(|pr| {
            let (node, x) = snap_probe(problem, pr);
            (pr.branch, node, x)
        })
        .collect();

    let warnings = compatibility_warnings(problem, &initial);
    let mut aggregates = RunAggregates::default();
    let mut probe_rows = Vec::new();
    let mut state = initial;
    let mut abort = None;
    let mut steps_done = 0usize;

    for m in 0..total_steps {
        state.time = t0 + m as f64 * k;
        match step(problem, &state, sizes) {
            Ok((mut next, diag)) => {
                next.time = t0 + (m + 1) as f64 * k;
                aggregates.max_speed = aggregates.max_speed.max(diag.speed_bound);
                aggregates.min_discriminant =
                    aggregates.min_discriminant.min(diag.min_discriminant);
                for jd in &diag.junctions {
                    aggregates.max_junction_mass_rel = aggregates
                        .max_junction_mass_rel
                        .max(jd.mass_residual / jd.mass_scale);
                    aggregates.max_port_pressure_mismatch = aggregates
                        .max_port_pressure_mismatch
                        .max(jd.pressure_mismatch);
                    aggregates.min_junction_det = Some(
                        aggregates
                            .min_junction_det
                            .map_or(jd.det, |d| d.min(jd.det)),
                    );
                }
                for &(_, det) in &diag.windkessel_dets {
                    aggregates.max_windkessel_det =
                        Some(aggregates.max_windkessel_det.map_or(det, |d| d.max(det)));
                }
                state = next;
                steps_done = m + 1;
                if params.stride > 0 && (m + 1) % params.stride == 0 {
                    for &(bi, node, x) in &snapped {
                        probe_rows.push(ProbeRow {
                            t: state.time,
                            branch: problem.branches[bi].label.clone(),
                            x,
                            p: state.fields[bi].p[node],
                            q: state.fields[bi].q[node],
                        });
                    }
                }
            }
            Err(a) => {
                abort = Some(a);
                break;
            }
        }
    }

    let end_time = t0 + steps_done as f64 * k;
    state.time = end_time;
    RunOutcome {
        final_state: state,
        steps: steps_done,
        end_time,
        aggregates,
        probe_rows,
        warnings,
        abort,
    }
}

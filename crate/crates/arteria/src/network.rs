//! Network topology, boundary specifications, and the textual configuration
//! format.
//!
//! A network is a set of branches (each parameterized by x in [0,1] and
//! carrying its own coefficient model), junctions joining branch ends, and
//! boundary specifications at the free ends: sources attach at x=0,
//! terminals at x=1. Everything here is immutable after parsing and safe to
//! share across threads.
//!
//! The document format is TOML with three top-level sections: `branches`,
//! `junctions`, `boundaries`. Other sections (run setup, studies) are
//! ignored by the network parser so one file can describe a whole experiment.

use crate::model::ModelSpec;
use crate::signal::Signal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    /// Number of grid cells N; the grid has N+1 nodes at x = n/N.
    pub cells: usize,
    pub model: ModelSpec,
}

/// Incoming branches attach at their x=1 end, outgoing at their x=0 end.
#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub incoming: Vec<String>,
    pub outgoing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Pressure(Signal),
    Flow(Signal),
}

/// Boundary data imposed at a branch's x=0 end.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub branch: String,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindkesselParams {
    pub eta: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminalKind {
    Pressure(Signal),
    Flow(Signal),
    Windkessel { params: WindkesselParams, w: Signal },
}

/// Boundary data imposed at a branch's x=1 end.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSpec {
    pub branch: String,
    pub kind: TerminalKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub branches: Vec<Branch>,
    pub junctions: Vec<Junction>,
    pub sources: Vec<SourceSpec>,
    pub terminals: Vec<TerminalSpec>,
}

impl Network {
    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    /// Syntax or shape error from the TOML layer; the message carries the
    /// position.
    #[error("{0}")]
    Syntax(String),
    #[error("unknown branch id `{id}` referenced by {referrer}")]
    UnknownId { id: String, referrer: String },
    #[error("duplicate branch id `{0}`")]
    DuplicateId(String),
    #[error("{0}")]
    Structure(String),
}

// ---------------------------------------------------------------------------
// Document layer

#[derive(Debug, Serialize, Deserialize)]
struct NetworkDoc {
    #[serde(default)]
    branches: Vec<BranchDoc>,
    #[serde(default)]
    junctions: Vec<JunctionDoc>,
    #[serde(default)]
    boundaries: Vec<BoundaryDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchDoc {
    id: String,
    cells: usize,
    model: ModelSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct JunctionDoc {
    incoming: Vec<String>,
    outgoing: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryDoc {
    branch: String,
    end: String, // "x0" | "x1"
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    signal: Option<Signal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<Signal>,
}

/// Parse a configuration document into a resolved [`Network`].
///
/// Syntax errors carry the TOML position; reference errors name the missing
/// id. Top-level sections other than the three network sections are ignored.
pub fn parse_network(text: &str) -> Result<Network, ParseError> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| ParseError::Syntax(e.to_string()))?;
    let mut ids: HashMap<&str, usize> = HashMap::new();
    for (i, b) in doc.branches.iter().enumerate() {
        if ids.insert(b.id.as_str(), i).is_some() {
            return Err(ParseError::DuplicateId(b.id.clone()));
        }
    }
    let resolve = |id: &str, referrer: String| -> Result<(), ParseError> {
        if ids.contains_key(id) {
            Ok(())
        } else {
            Err(ParseError::UnknownId {
                id: id.to_string(),
                referrer,
            })
        }
    };
    for (j, junc) in doc.junctions.iter().enumerate() {
        for id in junc.incoming.iter().chain(junc.outgoing.iter()) {
            resolve(id, format!("junction {j}"))?;
        }
    }

    let mut sources = Vec::new();
    let mut terminals = Vec::new();
    for bd in &doc.boundaries {
        resolve(&bd.branch, format!("boundary on `{}`", bd.branch))?;
        let place = format!("boundary on `{}` ({})", bd.branch, bd.end);
        let need_signal = || -> Result<Signal, ParseError> {
            bd.signal
                .clone()
                .ok_or_else(|| ParseError::Structure(format!("{place}: missing field `signal`")))
        };
        match (bd.end.as_str(), bd.kind.as_str()) {
            ("x0", "pressure") => sources.push(SourceSpec {
                branch: bd.branch.clone(),
                kind: SourceKind::Pressure(need_signal()?),
            }),
            ("x0", "flow") => sources.push(SourceSpec {
                branch: bd.branch.clone(),
                kind: SourceKind::Flow(need_signal()?),
            }),
            ("x1", "pressure") => terminals.push(TerminalSpec {
                branch: bd.branch.clone(),
                kind: TerminalKind::Pressure(need_signal()?),
            }),
            ("x1", "flow") => terminals.push(TerminalSpec {
                branch: bd.branch.clone(),
                kind: TerminalKind::Flow(need_signal()?),
            }),
            ("x1", "windkessel") => {
                let get = |name: &str, v: Option<f64>| {
                    v.ok_or_else(|| {
                        ParseError::Structure(format!("{place}: missing field `{name}`"))
                    })
                };
                terminals.push(TerminalSpec {
                    branch: bd.branch.clone(),
                    kind: TerminalKind::Windkessel {
                        params: WindkesselParams {
                            eta: get("eta", bd.eta)?,
                            delta: get("delta", bd.delta)?,
                            epsilon: get("epsilon", bd.epsilon)?,
                        },
                        w: bd.w.clone().unwrap_or(Signal::Constant { value: 0.0 }),
                    },
                })
            }
            ("x0", "windkessel") => {
                return Err(ParseError::Structure(format!(
                    "{place}: windkessel boundaries attach at x1"
                )))
            }
            (end, kind) => {
                return Err(ParseError::Structure(format!(
                    "{place}: unknown end/kind combination `{end}`/`{kind}`"
                )))
            }
        }
    }

    Ok(Network {
        branches: doc
            .branches
            .into_iter()
            .map(|b| Branch {
                id: b.id,
                cells: b.cells,
                model: b.model,
            })
            .collect(),
        junctions: doc
            .junctions
            .into_iter()
            .map(|j| Junction {
                incoming: j.incoming,
                outgoing: j.outgoing,
            })
            .collect(),
        sources,
        terminals,
    })
}

/// Render a [`Network`] back into the document format. `parse_network`
/// composed with this is the identity on the network value.
pub fn serialize_network(net: &Network) -> String {
    let doc = NetworkDoc {
        branches: net
            .branches
            .iter()
            .map(|b| BranchDoc {
                id: b.id.clone(),
                cells: b.cells,
                model: b.model.clone(),
            })
            .collect(),
        junctions: net
            .junctions
            .iter()
            .map(|j| JunctionDoc {
                incoming: j.incoming.clone(),
                outgoing: j.outgoing.clone(),
            })
            .collect(),
        boundaries: net
            .sources
            .iter()
            .map(|s| {
                let (kind, signal) = match &s.kind {
                    SourceKind::Pressure(sig) => ("pressure", sig.clone()),
                    SourceKind::Flow(sig) => ("flow", sig.clone()),
                };
                BoundaryDoc {
                    branch: s.branch.clone(),
                    end: "x0".into(),
                    kind: kind.into(),
                    signal: Some(signal),
                    eta: None,
                    delta: None,
                    epsilon: None,
                    w: None,
                }
            })
            .chain(net.terminals.iter().map(|t| match &t.kind {
                TerminalKind::Pressure(sig) => BoundaryDoc {
                    branch: t.branch.clone(),
                    end: "x1".into(),
                    kind: "pressure".into(),
                    signal: Some(sig.clone()),
                    eta: None,
                    delta: None,
                    epsilon: None,
                    w: None,
                },
                TerminalKind::Flow(sig) => BoundaryDoc {
                    branch: t.branch.clone(),
                    end: "x1".into(),
                    kind: "flow".into(),
                    signal: Some(sig.clone()),
                    eta: None,
                    delta: None,
                    epsilon: None,
                    w: None,
                },
                TerminalKind::Windkessel { params, w } => BoundaryDoc {
                    branch: t.branch.clone(),
                    end: "x1".into(),
                    kind: "windkessel".into(),
                    signal: None,
                    eta: Some(params.eta),
                    delta: Some(params.delta),
                    epsilon: Some(params.epsilon),
                    w: Some(w.clone()),
                },
            }))
            .collect(),
    };
    toml::to_string(&doc).expect("network serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnassignedEnd {
        branch: String,
        end: &'static str,
    },
    DoublyAssignedEnd {
        branch: String,
        end: &'static str,
        roles: usize,
    },
    EmptyJunctionSide {
        junction: usize,
        side: &'static str,
    },
    Disconnected {
        components: usize,
    },
    TooFewCells {
        branch: String,
        cells: usize,
    },
    NonPositiveWindkessel {
        branch: String,
        param: &'static str,
        value: f64,
    },
    BadSignal {
        place: String,
        what: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnassignedEnd { branch, end } => {
                write!(f, "unassigned end: branch `{branch}` at {end}")
            }
            Violation::DoublyAssignedEnd { branch, end, roles } => write!(
                f,
                "end doubly assigned: branch `{branch}` at {end} has {roles} roles"
            ),
            Violation::EmptyJunctionSide { junction, side } => {
                write!(f, "junction {junction} has no {side} branches")
            }
            Violation::Disconnected { components } => {
                write!(f, "network is not connected ({components} components)")
            }
            Violation::TooFewCells { branch, cells } => {
                write!(
                    f,
                    "branch `{branch}` has {cells} cells; at least 2 required"
                )
            }
            Violation::NonPositiveWindkessel {
                branch,
                param,
                value,
            } => write!(
                f,
                "windkessel on `{branch}`: {param} must be positive, got {value}"
            ),
            Violation::BadSignal { place, what } => write!(f, "{place}: {what}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Piecewise-linear table signals have no continuous derivative.
    TableSignal { place: String },
    /// A branch attaches to the same junction by both ends.
    SelfLoop { branch: String, junction: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::TableSignal { place } => {
                write!(f, "{place}: table signal is only piecewise differentiable")
            }
            Warning::SelfLoop { branch, junction } => write!(
                f,
                "branch `{branch}` attaches to junction {junction} by both ends"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of the network; violations are data, not
/// failures, so a report is always produced.
pub fn validate_topology(net: &Network) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = net.branches.len();
    let index: HashMap<&str, usize> = net
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();

    for b in &net.branches {
        if b.cells < 2 {
            report.violations.push(Violation::TooFewCells {
                branch: b.id.clone(),
                cells: b.cells,
            });
        }
    }

    // Role coverage: every branch end carries exactly one closure.
    let mut roles_x0 = vec![0usize; n];
    let mut roles_x1 = vec![0usize; n];
    for s in &net.sources {
        if let Some(&i) = index.get(s.branch.as_str()) {
            roles_x0[i] += 1;
        }
        let sig = match &s.kind {
            SourceKind::Pressure(sig) | SourceKind::Flow(sig) => sig,
        };
        check_signal(sig, format!("source on `{}`", s.branch), &mut report);
    }
    for t in &net.terminals {
        if let Some(&i) = index.get(t.branch.as_str()) {
            roles_x1[i] += 1;
        }
        match &t.kind {
            TerminalKind::Pressure(sig) | TerminalKind::Flow(sig) => {
                check_signal(sig, format!("terminal on `{}`", t.branch), &mut report)
            }
            TerminalKind::Windkessel { params, w } => {
                for (name, value) in [
                    ("eta", params.eta),
                    ("delta", params.delta),
                    ("epsilon", params.epsilon),
                ] {
                    if !(value > 0.0) {
                        report.violations.push(Violation::NonPositiveWindkessel {
                            branch: t.branch.clone(),
                            param: name,
                            value,
                        });
                    }
                }
                check_signal(w, format!("windkessel on `{}`", t.branch), &mut report);
            }
        }
    }
    for (j, junc) in net.junctions.iter().enumerate() {
        if junc.incoming.is_empty() {
            report.violations.push(Violation::EmptyJunctionSide {
                junction: j,
                side: "incoming",
            });
        }
        if junc.outgoing.is_empty() {
            report.violations.push(Violation::EmptyJunctionSide {
                junction: j,
                side: "outgoing",
            });
        }
        for id in &junc.incoming {
            if let Some(&i) = index.get(id.as_str()) {
                roles_x1[i] += 1;
            }
        }
        for id in &junc.outgoing {
            if let Some(&i) = index.get(id.as_str()) {
                roles_x0[i] += 1;
            }
        }
        for id in &junc.incoming {
            if junc.outgoing.contains(id) {
                report.warnings.push(Warning::SelfLoop {
                    branch: id.clone(),
                    junction: j,
                });
            }
        }
    }
    for (i, b) in net.branches.iter().enumerate() {
        for (end, count) in [("x0", roles_x0[i]), ("x1", roles_x1[i])] {
            match count {
                0 => report.violations.push(Violation::UnassignedEnd {
                    branch: b.id.clone(),
                    end,
                }),
                1 => {}
                roles => report.violations.push(Violation::DoublyAssignedEnd {
                    branch: b.id.clone(),
                    end,
                    roles,
                }),
            }
        }
    }

    // Connectivity: branches are linked only through shared junctions.
    if n > 0 {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for junc in &net.junctions {
            let members: Vec<usize> = junc
                .incoming
                .iter()
                .chain(junc.outgoing.iter())
                .filter_map(|id| index.get(id.as_str()).copied())
                .collect();
            if let Some(&first) = members.first() {
                for &m in &members[1..] {
                    let (ra, rb) = (find(&mut parent, first), find(&mut parent, m));
                    if ra != rb {
                        parent[rb] = ra;
                    }
                }
            }
        }
        let mut roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() > 1 {
            report.violations.push(Violation::Disconnected {
                components: roots.len(),
            });
        }
    }

    report
}

fn check_signal(sig: &Signal, place: String, report: &mut ValidationReport) {
    if let Err(what) = sig.well_formed() {
        report.violations.push(Violation::BadSignal { place, what });
        return;
    }
    if !sig.is_smooth() {
        report.warnings.push(Warning::TableSignal { place });
    }
}

// ---------------------------------------------------------------------------
// Windkessel circuit mapping

#[derive(Debug, Error, PartialEq)]
pub enum CircuitError {
    #[error("circuit parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("venous pressure must be differentiable (constant or sinusoid)")]
    NonDifferentiablePv,
}

/// Convert the RCR circuit `C d(P - Pv)/dt - R1 C dQ/dt + (P - Pv)/R2
/// - (1 + R1/R2) Q = 0` into the terminal condition
/// `P_t - eta Q_t + delta P - epsilon Q = W(t)`.
///
/// Dividing the circuit equation by C and moving the Pv terms right gives
/// eta = R1, delta = 1/(R2 C), epsilon = (1 + R1/R2)/C and
/// W(t) = Pv'(t) + delta Pv(t); the returned W stays inside the [`Signal`]
/// catalog (constants map to constants, sinusoids to sinusoids).
pub fn windkessel_from_circuit(
    r1: f64,
    r2: f64,
    cap: f64,
    pv: &Signal,
) -> Result<(WindkesselParams, Signal), CircuitError> {
    for (name, value) in [("r1", r1), ("r2", r2), ("cap", cap)] {
        if !(value > 0.0) {
            return Err(CircuitError::NonPositive { name, value });
        }
    }
    let delta = 1.0 / (r2 * cap);
    let params = WindkesselParams {
        eta: r1,
        delta,
        epsilon: (1.0 + r1 / r2) / cap,
    };
    let w = match pv {
        Signal::Constant { value } => Signal::Constant {
            value: delta * value,
        },
        Signal::Sinusoid {
            mean,
            amplitude,
            period,
            phase,
        } => {
            // delta*(m + A sin) + A omega cos = delta*m + A sqrt(delta^2 + omega^2) sin(. + psi)
            let omega = std::f64::consts::TAU / period;
            Signal::Sinusoid {
                mean: delta * mean,
                amplitude: amplitude * (delta * delta + omega * omega).sqrt(),
                period: *period,
                phase: phase + omega.atan2(delta),
            }
        }
        Signal::Table { .. } => return Err(CircuitError::NonDifferentiablePv),
    };
    Ok((params, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"
[[branches]]
id = "v"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[boundaries]]
branch = "v"
end = "x0"
kind = "pressure"
signal = { kind = "constant", value = 1.0 }

[[boundaries]]
branch = "v"
end = "x1"
kind = "flow"
signal = { kind = "constant", value = 0.0 }
"#;

    const BIFURCATION: &str = r#"
[[branches]]
id = "parent"
cells = 8
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "left"
cells = 8
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "right"
cells = 8
model = { name = "linear", a = 1.0, b = 1.0 }

[[junctions]]
incoming = ["parent"]
outgoing = ["left", "right"]

[[boundaries]]
branch = "parent"
end = "x0"
kind = "pressure"
signal = { kind = "constant", value = 1.0 }

[[boundaries]]
branch = "left"
end = "x1"
kind = "flow"
signal = { kind = "constant", value = 0.0 }

[[boundaries]]
branch = "right"
end = "x1"
kind = "windkessel"
eta = 1.0
delta = 1.0
epsilon = 2.0
w = { kind = "constant", value = 0.0 }
"#;

    #[test]
    fn parses_minimal_document() {
        let net = parse_network(SINGLE).unwrap();
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.junctions.len(), 0);
        assert_eq!(net.sources.len(), 1);
        assert_eq!(net.terminals.len(), 1);
        assert!(validate_topology(&net).ok());
    }

    #[test]
    fn parses_bifurcation() {
        let net = parse_network(BIFURCATION).unwrap();
        assert_eq!(net.junctions[0].incoming.len(), 1);
        assert_eq!(
            net.junctions[0].incoming.len() + net.junctions[0].outgoing.len(),
            3
        );
        assert!(validate_topology(&net).ok());
    }

    #[test]
    fn unknown_id_is_named() {
        let text = r#"
[[branches]]
id = "v"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[junctions]]
incoming = ["v"]
outgoing = ["x"]
"#;
        match parse_network(text) {
            Err(ParseError::UnknownId { id, .. }) => assert_eq!(id, "x"),
            other => panic!("expected unknown-id error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = r#"
[[branches]]
id = "v"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "v"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }
"#;
        assert!(matches!(
            parse_network(text),
            Err(ParseError::DuplicateId(id)) if id == "v"
        ));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_network("[[branches]]\nid = ").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "no position in: {msg}");
    }

    #[test]
    fn missing_field_is_reported() {
        let text = r#"
[[branches]]
id = "v"
model = { name = "linear", a = 1.0, b = 1.0 }
"#;
        let msg = parse_network(text).unwrap_err().to_string();
        assert!(msg.contains("cells"), "message was: {msg}");
    }

    #[test]
    fn unassigned_end_is_a_violation() {
        let mut net = parse_network(SINGLE).unwrap();
        net.terminals.clear();
        let report = validate_topology(&net);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnassignedEnd { end: "x1", .. })));
    }

    #[test]
    fn doubly_assigned_end_is_a_violation() {
        let mut net = parse_network(BIFURCATION).unwrap();
        // list `parent` as incoming to a second junction
        net.junctions.push(Junction {
            incoming: vec!["parent".into()],
            outgoing: vec!["left".into()],
        });
        let report = validate_topology(&net);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DoublyAssignedEnd { end: "x1", .. })));
    }

    #[test]
    fn loops_are_accepted() {
        // A feeds J1 -> B, C; B and C feed J2 -> D
        let text = r#"
[[branches]]
id = "a"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "b"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "c"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "d"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[junctions]]
incoming = ["a"]
outgoing = ["b", "c"]

[[junctions]]
incoming = ["b", "c"]
outgoing = ["d"]

[[boundaries]]
branch = "a"
end = "x0"
kind = "pressure"
signal = { kind = "constant", value = 1.0 }

[[boundaries]]
branch = "d"
end = "x1"
kind = "flow"
signal = { kind = "constant", value = 0.0 }
"#;
        let net = parse_network(text).unwrap();
        let report = validate_topology(&net);
        assert!(report.ok(), "violations: {:?}", report.violations);
    }

    #[test]
    fn degenerate_junctions_are_rejected() {
        let mut net = parse_network(SINGLE).unwrap();
        net.sources.clear();
        net.terminals.clear();
        net.junctions.push(Junction {
            incoming: vec!["v".into()],
            outgoing: vec![],
        });
        let report = validate_topology(&net);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::EmptyJunctionSide {
                side: "outgoing",
                ..
            }
        )));
    }

    #[test]
    fn self_loop_warns_but_passes() {
        let text = r#"
[[branches]]
id = "a"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "ring"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "d"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[junctions]]
incoming = ["a", "ring"]
outgoing = ["ring", "d"]

[[boundaries]]
branch = "a"
end = "x0"
kind = "pressure"
signal = { kind = "constant", value = 1.0 }

[[boundaries]]
branch = "d"
end = "x1"
kind = "flow"
signal = { kind = "constant", value = 0.0 }
"#;
        let net = parse_network(text).unwrap();
        let report = validate_topology(&net);
        assert!(report.ok(), "violations: {:?}", report.violations);
        assert!(report
            .warnings
            .iter()
            .any(|w| matches!(w, Warning::SelfLoop { .. })));
    }

    #[test]
    fn disconnected_network_is_a_violation() {
        let text = r#"
[[branches]]
id = "a"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[branches]]
id = "b"
cells = 4
model = { name = "linear", a = 1.0, b = 1.0 }

[[boundaries]]
branch = "a"
end = "x0"
kind = "pressure"
signal = { kind = "constant", value = 1.0 }

[[boundaries]]
branch = "a"
end = "x1"
kind = "flow"
signal = { kind = "constant", value = 0.0 }

[[boundaries]]
branch = "b"
end = "x0"
kind = "pressure"
signal = { kind = "constant", value = 1.0 }

[[boundaries]]
branch = "b"
end = "x1"
kind = "flow"
signal = { kind = "constant", value = 0.0 }
"#;
        let net = parse_network(text).unwrap();
        let report = validate_topology(&net);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Disconnected { components: 2 })));
    }

    #[test]
    fn round_trip_preserves_the_network() {
        for text in [SINGLE, BIFURCATION] {
            let net = parse_network(text).unwrap();
            let rendered = serialize_network(&net);
            let reparsed = parse_network(&rendered).unwrap();
            assert_eq!(net, reparsed);
        }
    }

    #[test]
    fn circuit_mapping_examples() {
        let (p, w) = windkessel_from_circuit(1.0, 1.0, 1.0, &Signal::constant(0.0)).unwrap();
        assert_eq!((p.eta, p.delta, p.epsilon), (1.0, 1.0, 2.0));
        assert_eq!(w, Signal::constant(0.0));

        let (p, w) = windkessel_from_circuit(2.0, 4.0, 0.5, &Signal::constant(3.0)).unwrap();
        assert_eq!(p.eta, 2.0);
        assert_eq!(p.delta, 0.5);
        assert_eq!(p.epsilon, 3.0);
        assert_eq!(w, Signal::constant(3.0 * 0.5));

        assert_eq!(
            windkessel_from_circuit(1.0, 1.0, 0.0, &Signal::constant(0.0)),
            Err(CircuitError::NonPositive {
                name: "cap",
                value: 0.0
            })
        );
        assert_eq!(
            windkessel_from_circuit(
                1.0,
                1.0,
                1.0,
                &Signal::Table {
                    points: vec![(0.0, 1.0)]
                }
            ),
            Err(CircuitError::NonDifferentiablePv)
        );
    }

    #[test]
    fn circuit_mapping_reproduces_the_circuit_residual() {
        // The two equations are linear in (P, Q, P', Q'); sampling random
        // states and derivative values checks the algebraic identity.
        let pv = Signal::Sinusoid {
            mean: 0.3,
            amplitude: 0.2,
            period: 1.7,
            phase: 0.4,
        };
        let (r1, r2, cap) = (1.3, 0.8, 2.1);
        let (params, w) = windkessel_from_circuit(r1, r2, cap, &pv).unwrap();
        let mut z = 31u64;
        let mut next = move || {
            z = z
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (z >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut max_res: f64 = 0.0;
        for _ in 0..100 {
            let p = 4.0 * next() - 2.0;
            let q = 4.0 * next() - 2.0;
            let pdot = 4.0 * next() - 2.0;
            let qdot = 4.0 * next() - 2.0;
            let t = 3.0 * next();
            let pv_t = pv.value(t);
            let pv_dot = pv.derivative(t).unwrap();
            let circuit =
                cap * (pdot - pv_dot) - r1 * cap * qdot + (p - pv_t) / r2 - (1.0 + r1 / r2) * q;
            let bctw =
                pdot - params.eta * qdot + params.delta * p - params.epsilon * q - w.value(t);
            max_res = max_res.max((circuit - cap * bctw).abs());
        }
        assert!(max_res < 1e-12, "residual {max_res}");
    }
}

//! Transmission network data model and the text case format.
//!
//! A [`Network`] is the static description of the grid under DC power-flow
//! assumptions: nodal loads split into critical and non-critical shares,
//! one aggregated generator fleet per generator node, branches with
//! susceptance and thermal limits, plus the dispatch parameters (angle
//! bounds, setpoint regularization weight, forced-outage ramp relaxation,
//! and the decision interval).

use std::fmt;

use thiserror::Error;

use crate::Real;

/// Node (substation) data: demand and shedding weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    /// Demand at the node in MW (non-negative).
    pub load_mw: Real,
    /// Fraction of the load that is critical, in [0, 1].
    pub critical_fraction: Real,
    /// Shedding penalty weight for the critical share.
    pub weight_critical: Real,
    /// Shedding penalty weight for the non-critical share.
    pub weight_noncritical: Real,
}

/// Aggregated generator fleet attached to one node.
#[derive(Debug, Clone, PartialEq)]
pub struct GenData {
    /// 0-based index of the host node.
    pub node: usize,
    /// Minimum stable output while committed, MW.
    pub p_min: Real,
    /// Maximum output, MW.
    pub p_max: Real,
    /// Ramp capability in MW per hour.
    pub ramp_mw_per_hour: Real,
}

/// Transmission branch between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchData {
    /// 0-based index of the sending node.
    pub from: usize,
    /// 0-based index of the receiving node.
    pub to: usize,
    /// Series susceptance in per-unit (positive).
    pub susceptance_pu: Real,
    /// Thermal limit on |flow| in MW (positive).
    pub flow_limit_mw: Real,
}

/// Case-wide dispatch parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseParams {
    /// Voltage-angle bounds in radians.
    pub theta_min: Real,
    pub theta_max: Real,
    /// Weight of the quadratic setpoint-movement regularizer.
    pub epsilon: Real,
    /// Decision interval in hours (ramp limits scale with it).
    pub ramp_interval_hours: Real,
    /// Ramp relaxation granted to a generator forced out in the current
    /// step (its load-rejection capability), MW. Zero models units that
    /// cannot shed output instantaneously.
    pub outage_relaxation_mw: Real,
    /// MVA base converting per-unit susceptance times radians into MW.
    pub base_mva: Real,
}

impl Default for CaseParams {
    fn default() -> Self {
        Self {
            theta_min: -0.6,
            theta_max: 0.6,
            epsilon: 1e-3,
            ramp_interval_hours: 0.25,
            outage_relaxation_mw: 1e5,
            base_mva: 100.0,
        }
    }
}

/// Static network description.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<NodeData>,
    pub gens: Vec<GenData>,
    pub branches: Vec<BranchData>,
    pub params: CaseParams,
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NodeLoadNegative { node: usize },
    CriticalFractionOutOfRange { node: usize },
    WeightOrdering { node: usize },
    GenNodeInvalid { gen: usize },
    GenLimitsInverted { gen: usize },
    GenRampNegative { gen: usize },
    DuplicateGenNode { node: usize },
    BranchEndpointInvalid { branch: usize },
    BranchSelfLoop { branch: usize },
    BranchSusceptanceNonPositive { branch: usize },
    BranchLimitNonPositive { branch: usize },
    AngleBoundsInverted,
    ParamNonPositive { name: &'static str },
    Disconnected { unreachable_nodes: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NodeLoadNegative { node } => write!(f, "node {} has negative load", node + 1),
            Self::CriticalFractionOutOfRange { node } => {
                write!(f, "node {} critical fraction outside [0, 1]", node + 1)
            }
            Self::WeightOrdering { node } => write!(
                f,
                "node {} weights must satisfy critical >= non-critical > 0",
                node + 1
            ),
            Self::GenNodeInvalid { gen } => write!(f, "generator {} references a missing node", gen + 1),
            Self::GenLimitsInverted { gen } => write!(f, "generator {} has p_min > p_max", gen + 1),
            Self::GenRampNegative { gen } => write!(f, "generator {} has negative ramp", gen + 1),
            Self::DuplicateGenNode { node } => {
                write!(f, "node {} hosts more than one generator fleet", node + 1)
            }
            Self::BranchEndpointInvalid { branch } => {
                write!(f, "branch {} references a missing node", branch + 1)
            }
            Self::BranchSelfLoop { branch } => write!(f, "branch {} is a self-loop", branch + 1),
            Self::BranchSusceptanceNonPositive { branch } => {
                write!(f, "branch {} susceptance must be positive", branch + 1)
            }
            Self::BranchLimitNonPositive { branch } => {
                write!(f, "branch {} flow limit must be positive", branch + 1)
            }
            Self::AngleBoundsInverted => write!(f, "theta_min must be below theta_max"),
            Self::ParamNonPositive { name } => write!(f, "parameter {name} must be positive"),
            Self::Disconnected { unreachable_nodes } => {
                write!(f, "network is disconnected; unreachable nodes: ")?;
                for (i, n) in unreachable_nodes.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", n + 1)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("case line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("case is invalid: {0}")]
    Invalid(String),
}

const CASE_HEADER: &str = "wildgrid case v1";

impl Network {
    /// Total system demand in MW.
    pub fn total_load(&self) -> Real {
        self.nodes.iter().map(|n| n.load_mw).sum()
    }

    /// Generator index hosted at `node`, if any.
    pub fn gen_at_node(&self, node: usize) -> Option<usize> {
        self.gens.iter().position(|g| g.node == node)
    }

    /// Number of assets exposed to the fire map (branches plus nodes).
    pub fn asset_count(&self) -> usize {
        self.nodes.len() + self.branches.len()
    }

    /// Ramp headroom per decision step for generator `g`, MW.
    pub fn ramp_per_step(&self, g: usize) -> Real {
        self.gens[g].ramp_mw_per_hour * self.params.ramp_interval_hours
    }

    /// Structural checks; an empty result means the case is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.load_mw < 0.0 {
                out.push(Violation::NodeLoadNegative { node: i });
            }
            if !(0.0..=1.0).contains(&node.critical_fraction) {
                out.push(Violation::CriticalFractionOutOfRange { node: i });
            }
            if !(node.weight_critical >= node.weight_noncritical && node.weight_noncritical > 0.0) {
                out.push(Violation::WeightOrdering { node: i });
            }
        }
        let mut gen_seen = vec![false; n];
        for (i, gen) in self.gens.iter().enumerate() {
            if gen.node >= n {
                out.push(Violation::GenNodeInvalid { gen: i });
                continue;
            }
            if gen.p_min > gen.p_max {
                out.push(Violation::GenLimitsInverted { gen: i });
            }
            if gen.ramp_mw_per_hour < 0.0 {
                out.push(Violation::GenRampNegative { gen: i });
            }
            if gen_seen[gen.node] {
                out.push(Violation::DuplicateGenNode { node: gen.node });
            }
            gen_seen[gen.node] = true;
        }
        for (i, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                out.push(Violation::BranchEndpointInvalid { branch: i });
                continue;
            }
            if br.from == br.to {
                out.push(Violation::BranchSelfLoop { branch: i });
            }
            if br.susceptance_pu <= 0.0 {
                out.push(Violation::BranchSusceptanceNonPositive { branch: i });
            }
            if br.flow_limit_mw <= 0.0 {
                out.push(Violation::BranchLimitNonPositive { branch: i });
            }
        }
        if self.params.theta_min >= self.params.theta_max {
            out.push(Violation::AngleBoundsInverted);
        }
        for (name, v) in [
            ("epsilon", self.params.epsilon),
            ("ramp_interval_hours", self.params.ramp_interval_hours),
            ("base_mva", self.params.base_mva),
        ] {
            if v <= 0.0 {
                out.push(Violation::ParamNonPositive { name });
            }
        }
        if self.params.outage_relaxation_mw < 0.0 {
            out.push(Violation::ParamNonPositive { name: "outage_relaxation_mw" });
        }
        // Connectivity over the full branch graph.
        if n > 0 && out.iter().all(|v| !matches!(v, Violation::BranchEndpointInvalid { .. })) {
            let mut adjacency = vec![Vec::new(); n];
            for br in &self.branches {
                adjacency[br.from].push(br.to);
                adjacency[br.to].push(br.from);
            }
            let mut reached = vec![false; n];
            let mut stack = vec![0usize];
            reached[0] = true;
            while let Some(i) = stack.pop() {
                for &j in &adjacency[i] {
                    if !reached[j] {
                        reached[j] = true;
                        stack.push(j);
                    }
                }
            }
            let unreachable: Vec<usize> = (0..n).filter(|&i| !reached[i]).collect();
            if !unreachable.is_empty() {
                out.push(Violation::Disconnected { unreachable_nodes: unreachable });
            }
        }
        out
    }

    /// Parses the text case format (see `cases/*.case`); the parsed network
    /// must pass [`Network::validate`].
    pub fn load_case(text: &str) -> Result<Self, CaseError> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l.trim())
            .ok_or_else(|| CaseError::Parse { line: 1, message: "empty case file".into() })?;
        if header != CASE_HEADER {
            return Err(CaseError::Parse { line: 1, message: format!("expected header '{CASE_HEADER}'") });
        }

        #[derive(PartialEq)]
        enum Section {
            None,
            Params,
            Nodes,
            Generators,
            Branches,
        }
        let mut section = Section::None;
        let mut params = CaseParams::default();
        let mut nodes: Vec<NodeData> = Vec::new();
        let mut gens: Vec<GenData> = Vec::new();
        let mut branches: Vec<BranchData> = Vec::new();

        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[params]" => section = Section::Params,
                "[nodes]" => section = Section::Nodes,
                "[generators]" => section = Section::Generators,
                "[branches]" => section = Section::Branches,
                _ => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    let num = |s: &str, what: &str| -> Result<Real, CaseError> {
                        s.parse::<Real>().map_err(|_| CaseError::Parse {
                            line: line_no,
                            message: format!("invalid {what} '{s}'"),
                        })
                    };
                    let int = |s: &str, what: &str| -> Result<usize, CaseError> {
                        s.parse::<usize>().map_err(|_| CaseError::Parse {
                            line: line_no,
                            message: format!("invalid {what} '{s}'"),
                        })
                    };
                    match section {
                        Section::Params => {
                            if fields.len() != 2 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: "parameter entry needs 'name value'".into(),
                                });
                            }
                            let value = num(fields[1], "parameter value")?;
                            match fields[0] {
                                "theta_min" => params.theta_min = value,
                                "theta_max" => params.theta_max = value,
                                "epsilon" => params.epsilon = value,
                                "ramp_interval_hours" => params.ramp_interval_hours = value,
                                "outage_relaxation_mw" => params.outage_relaxation_mw = value,
                                "base_mva" => params.base_mva = value,
                                other => {
                                    return Err(CaseError::Parse {
                                        line: line_no,
                                        message: format!("unknown parameter '{other}'"),
                                    })
                                }
                            }
                        }
                        Section::Nodes => {
                            if fields.len() != 5 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: "node entry needs 'id load critical_fraction w_crit w_noncrit'"
                                        .into(),
                                });
                            }
                            let id = int(fields[0], "node id")?;
                            if id != nodes.len() + 1 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: format!(
                                        "node ids must be contiguous from 1; expected {}, got {id}",
                                        nodes.len() + 1
                                    ),
                                });
                            }
                            nodes.push(NodeData {
                                load_mw: num(fields[1], "load")?,
                                critical_fraction: num(fields[2], "critical fraction")?,
                                weight_critical: num(fields[3], "critical weight")?,
                                weight_noncritical: num(fields[4], "non-critical weight")?,
                            });
                        }
                        Section::Generators => {
                            if fields.len() != 4 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: "generator entry needs 'node p_min p_max ramp'".into(),
                                });
                            }
                            let node = int(fields[0], "generator node")?;
                            if node == 0 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: "node ids are 1-based".into(),
                                });
                            }
                            gens.push(GenData {
                                node: node - 1,
                                p_min: num(fields[1], "p_min")?,
                                p_max: num(fields[2], "p_max")?,
                                ramp_mw_per_hour: num(fields[3], "ramp")?,
                            });
                        }
                        Section::Branches => {
                            if fields.len() != 4 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: "branch entry needs 'from to susceptance limit'".into(),
                                });
                            }
                            let from = int(fields[0], "from node")?;
                            let to = int(fields[1], "to node")?;
                            if from == 0 || to == 0 {
                                return Err(CaseError::Parse {
                                    line: line_no,
                                    message: "node ids are 1-based".into(),
                                });
                            }
                            branches.push(BranchData {
                                from: from - 1,
                                to: to - 1,
                                susceptance_pu: num(fields[2], "susceptance")?,
                                flow_limit_mw: num(fields[3], "flow limit")?,
                            });
                        }
                        Section::None => {
                            return Err(CaseError::Parse {
                                line: line_no,
                                message: "data before any [section]".into(),
                            });
                        }
                    }
                }
            }
        }

        let net = Network { nodes, gens, branches, params };
        let violations = net.validate();
        if !violations.is_empty() {
            let text = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(CaseError::Invalid(text));
        }
        Ok(net)
    }

    /// Writes the network back to case text; reloading the result yields a
    /// structurally identical network.
    pub fn to_case_string(&self) -> String {
        let mut out = String::from(CASE_HEADER);
        out.push_str("\n\n[params]\n");
        out.push_str(&format!("theta_min {}\n", self.params.theta_min));
        out.push_str(&format!("theta_max {}\n", self.params.theta_max));
        out.push_str(&format!("epsilon {}\n", self.params.epsilon));
        out.push_str(&format!("ramp_interval_hours {}\n", self.params.ramp_interval_hours));
        out.push_str(&format!("outage_relaxation_mw {}\n", self.params.outage_relaxation_mw));
        out.push_str(&format!("base_mva {}\n", self.params.base_mva));
        out.push_str("\n[nodes]\n");
        for (i, n) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                i + 1,
                n.load_mw,
                n.critical_fraction,
                n.weight_critical,
                n.weight_noncritical
            ));
        }
        out.push_str("\n[generators]\n");
        for g in &self.gens {
            out.push_str(&format!("{} {} {} {}\n", g.node + 1, g.p_min, g.p_max, g.ramp_mw_per_hour));
        }
        out.push_str("\n[branches]\n");
        for b in &self.branches {
            out.push_str(&format!(
                "{} {} {} {}\n",
                b.from + 1,
                b.to + 1,
                b.susceptance_pu,
                b.flow_limit_mw
            ));
        }
        out
    }
}

/// Case and layout texts compiled into the library.
pub mod builtin {
    /// 24-node reliability test system with aggregated generator fleets.
    pub const RTS24_CASE: &str = include_str!("../cases/rts24.case");
    /// The 24-node system without the forced-outage ramp relaxation:
    /// decommitting a fleet is feasible only from within one ramp window of
    /// zero output.
    pub const RTS24_STRICT_CASE: &str = include_str!("../cases/rts24_strict.case");
    /// Default raster placement for the 24-node case (350x350).
    pub const RTS24_LAYOUT: &str = include_str!("../cases/rts24.layout");
    /// Three-node triangle with one generator.
    pub const TOY3_CASE: &str = include_str!("../cases/toy3.case");
    /// Placement for the toy triangle (40x40).
    pub const TOY3_LAYOUT: &str = include_str!("../cases/toy3.layout");

    /// Looks a builtin case up by name.
    pub fn case(name: &str) -> Option<&'static str> {
        match name {
            "rts24" => Some(RTS24_CASE),
            "rts24-strict" => Some(RTS24_STRICT_CASE),
            "toy3" => Some(TOY3_CASE),
            _ => None,
        }
    }

    /// Looks a builtin layout up by name.
    pub fn layout(name: &str) -> Option<&'static str> {
        match name {
            "rts24" | "rts24-strict" => Some(RTS24_LAYOUT),
            "toy3" => Some(TOY3_LAYOUT),
            _ => None,
        }
    }
}

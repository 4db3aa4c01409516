//! The myopic grid operator.
//!
//! Each decision step the operator receives a controller directive
//! (keep-alive flags for substations and branches, plus optional generator
//! setpoint nudges), combines it with fire encroachment into the next-step
//! topology, vets the requested setpoints against availability, then solves
//! a one-step dispatch program choosing generator commitments and outputs,
//! load shedding, voltage angles, and DC branch flows. Shut-offs latch: an
//! asset or generator that goes dark never returns within an episode.
//!
//! The dispatch program minimizes weighted shed cost plus a small quadratic
//! penalty on setpoint movement:
//!
//! ```text
//! minimize   sum_l  w_c[l]*shed_c[l] + w_nc[l]*shed_nc[l]
//!          + eps * sum_g (p[g] - p_prev[g])^2
//! ```
//!
//! subject to, for the next-step on-flags `z`:
//! generator commitment monotonicity and availability (off stays off, a dark
//! node strands its generator), vetted output windows `z*pmin <= p <= z*pmax`,
//! ramp windows `|p - p_prev| <= ramp + relax*(1 - z)` where `relax` is the
//! forced-outage relaxation, shed caps split by each node's critical load
//! fraction, nodal power balance, DC flow definition on energized branches,
//! angle bounds with one reference angle pinned per energized component, and
//! thermal flow limits (zero on de-energized branches).

use crate::gridmodel::Network;
use crate::qpsolve::{
    solve_with_binaries_seeded, Equality, Inequality, LinearRow, QpSettings, QpStatus, QuadProgram,
};
use crate::Real;

/// Power-system state carried between decision steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorState {
    /// Substation energization flags (monotone non-increasing per episode).
    pub node_on: Vec<bool>,
    /// Branch energization flags (monotone non-increasing per episode).
    pub branch_on: Vec<bool>,
    /// Generator commitment flags (monotone non-increasing per episode).
    pub gen_on: Vec<bool>,
    /// Deployed generator outputs, MW.
    pub gen_output: Vec<Real>,
    /// Deployed critical load shed per node, MW.
    pub shed_critical: Vec<Real>,
    /// Deployed non-critical load shed per node, MW.
    pub shed_noncritical: Vec<Real>,
    /// Voltage angles, radians.
    pub angles: Vec<Real>,
    /// DC branch flows, MW (exactly zero on de-energized branches).
    pub flows: Vec<Real>,
    /// Whether the last dispatch converged; a false value ends the episode.
    pub converged: bool,
    /// Decision step index.
    pub step: u32,
}

impl OperatorState {
    /// Load actually served at `node` given the deployed sheds, MW.
    pub fn served_load(&self, net: &Network, node: usize) -> Real {
        let z = if self.node_on[node] { 1.0 } else { 0.0 };
        net.nodes[node].load_mw * z - self.shed_critical[node] - self.shed_noncritical[node]
    }

    /// Total shed across the system, MW (counting dark nodes' whole load).
    pub fn total_unserved(&self, net: &Network) -> Real {
        (0..net.nodes.len())
            .map(|i| {
                let dark = if self.node_on[i] { 0.0 } else { net.nodes[i].load_mw };
                dark + self.shed_critical[i] + self.shed_noncritical[i]
            })
            .sum()
    }
}

/// Controller command for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    /// Keep-alive flags per substation; false requests de-energization.
    pub node_keep: Vec<bool>,
    /// Keep-alive flags per branch.
    pub branch_keep: Vec<bool>,
    /// Which generators carry a setpoint request this step.
    pub gen_selected: Vec<bool>,
    /// Requested output change, MW; ignored for unselected generators.
    pub gen_delta: Vec<Real>,
}

impl Directive {
    /// The do-nothing directive: keep everything, request no setpoints.
    pub fn keep_all(net: &Network) -> Self {
        Self {
            node_keep: vec![true; net.nodes.len()],
            branch_keep: vec![true; net.branches.len()],
            gen_selected: vec![false; net.gens.len()],
            gen_delta: vec![0.0; net.gens.len()],
        }
    }
}

/// Vetted per-generator output windows for the next dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct VettedLimits {
    pub pmin_star: Vec<Real>,
    pub pmax_star: Vec<Real>,
    /// Requests that fell below the corresponding minimum (window left
    /// unchanged for those generators).
    pub lower_violation_flags: Vec<bool>,
    /// False when a request exceeded the available maximum; the operator
    /// treats that exactly like dispatch non-convergence.
    pub feasible: bool,
}

/// Dispatch solver configuration.
#[derive(Debug, Clone)]
pub struct DispatchConfig {
    pub qp: QpSettings<Real>,
    /// Branch-and-bound node budget per dispatch.
    pub node_budget: usize,
    /// Deployment verification tolerances.
    pub verify_mw: Real,
    pub verify_rad: Real,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self { qp: QpSettings::default(), node_budget: 2048, verify_mw: 1e-5, verify_rad: 1e-7 }
    }
}

/// Result of one dispatch: the deployed state, the dispatch objective, and
/// the raw variable vector (useful for warm-starting the next step).
#[derive(Debug, Clone)]
pub struct DispatchResult {
    pub state: OperatorState,
    pub objective: Real,
    pub x: Vec<Real>,
}

/// Whether this is the pre-event solve or a regular step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchMode {
    /// Pre-event operating point: every asset energized, all generators
    /// committed, no ramp coupling, movement regularized toward zero output
    /// (spreading generation).
    Initial,
    /// Regular step: commitments latch, ramps bind against the previous
    /// outputs.
    Step,
}

/// Variable layout of the dispatch program.
#[derive(Debug, Clone, Copy)]
pub struct VarLayout {
    pub n_gens: usize,
    pub n_nodes: usize,
    pub n_branches: usize,
}

impl VarLayout {
    pub fn of(net: &Network) -> Self {
        Self { n_gens: net.gens.len(), n_nodes: net.nodes.len(), n_branches: net.branches.len() }
    }
    pub fn p(&self, g: usize) -> usize {
        g
    }
    pub fn z(&self, g: usize) -> usize {
        self.n_gens + g
    }
    pub fn shed_c(&self, i: usize) -> usize {
        2 * self.n_gens + i
    }
    pub fn shed_nc(&self, i: usize) -> usize {
        2 * self.n_gens + self.n_nodes + i
    }
    pub fn theta(&self, i: usize) -> usize {
        2 * self.n_gens + 2 * self.n_nodes + i
    }
    pub fn flow(&self, t: usize) -> usize {
        2 * self.n_gens + 3 * self.n_nodes + t
    }
    pub fn total(&self) -> usize {
        2 * self.n_gens + 3 * self.n_nodes + self.n_branches
    }
}

/// Combines the directive with fire encroachment into next-step on-flags.
/// `fire_*_clear` are true while the asset's footprint is untouched. Both
/// the directive and the fire can only turn assets off, and off latches.
pub fn revise_topology(
    state: &OperatorState,
    d: &Directive,
    fire_node_clear: &[bool],
    fire_branch_clear: &[bool],
) -> (Vec<bool>, Vec<bool>) {
    let nodes = state
        .node_on
        .iter()
        .zip(&d.node_keep)
        .zip(fire_node_clear)
        .map(|((&on, &keep), &clear)| on && keep && clear)
        .collect();
    let branches = state
        .branch_on
        .iter()
        .zip(&d.branch_keep)
        .zip(fire_branch_clear)
        .map(|((&on, &keep), &clear)| on && keep && clear)
        .collect();
    (nodes, branches)
}

/// Checks requested setpoints against availability and converts accepted
/// requests into pinned output windows.
///
/// For each selected generator with request `r = output + delta`:
/// * `r` above the available maximum (zero if the generator is stranded or
///   already off) makes the whole directive infeasible;
/// * `r` below the available minimum flags a lower violation and leaves the
///   window unchanged;
/// * otherwise the window collapses to `[r, r]`.
pub fn vet_setpoints(
    state: &OperatorState,
    d: &Directive,
    net: &Network,
    next_node_on: &[bool],
) -> VettedLimits {
    let g_count = net.gens.len();
    let mut pmin = Vec::with_capacity(g_count);
    let mut pmax = Vec::with_capacity(g_count);
    let mut low_flags = vec![false; g_count];
    let mut feasible = true;
    for g in 0..g_count {
        let gen = &net.gens[g];
        if !d.gen_selected[g] {
            pmin.push(gen.p_min);
            pmax.push(gen.p_max);
            continue;
        }
        let avail = next_node_on[gen.node] && state.gen_on[g];
        let avail_max = if avail { gen.p_max } else { 0.0 };
        let avail_min = if avail { gen.p_min } else { 0.0 };
        let request = state.gen_output[g] + d.gen_delta[g];
        if request > avail_max {
            feasible = false;
            pmin.push(gen.p_min);
            pmax.push(gen.p_max);
        } else if request < avail_min {
            low_flags[g] = true;
            pmin.push(gen.p_min);
            pmax.push(gen.p_max);
        } else {
            pmin.push(request);
            pmax.push(request);
        }
    }
    VettedLimits { pmin_star: pmin, pmax_star: pmax, lower_violation_flags: low_flags, feasible }
}

/// Connected components of the energized-branch graph; returns the
/// lowest-index member of each component (the reference angle nodes).
fn reference_nodes(net: &Network, next_branch_on: &[bool]) -> Vec<usize> {
    let n = net.nodes.len();
    let mut adjacency = vec![Vec::new(); n];
    for (t, br) in net.branches.iter().enumerate() {
        if next_branch_on[t] {
            adjacency[br.from].push(br.to);
            adjacency[br.to].push(br.from);
        }
    }
    let mut component = vec![usize::MAX; n];
    let mut refs = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        refs.push(start);
        let id = refs.len() - 1;
        let mut stack = vec![start];
        component[start] = id;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if component[j] == usize::MAX {
                    component[j] = id;
                    stack.push(j);
                }
            }
        }
    }
    refs
}

/// Assembles the one-step dispatch program. Returns the program and the
/// indices of the binary commitment variables.
pub fn build_dispatch(
    state: &OperatorState,
    net: &Network,
    limits: &VettedLimits,
    next_node_on: &[bool],
    next_branch_on: &[bool],
    mode: DispatchMode,
) -> (QuadProgram<Real>, Vec<usize>) {
    let lay = VarLayout::of(net);
    let pars = &net.params;
    let eps = pars.epsilon;
    let mut p = QuadProgram::<Real>::new(lay.total());

    let prev_output = |g: usize| -> Real {
        match mode {
            DispatchMode::Initial => 0.0,
            DispatchMode::Step => state.gen_output[g],
        }
    };

    // Objective: shed costs plus movement regularization.
    for g in 0..lay.n_gens {
        let prev = prev_output(g);
        p.quadratic_diag[lay.p(g)] = eps;
        p.linear_cost[lay.p(g)] = -2.0 * eps * prev;
        p.constant_cost += eps * prev * prev;
    }
    for i in 0..lay.n_nodes {
        p.linear_cost[lay.shed_c(i)] = net.nodes[i].weight_critical;
        p.linear_cost[lay.shed_nc(i)] = net.nodes[i].weight_noncritical;
    }

    // Variable bounds.
    let mut binaries = Vec::with_capacity(lay.n_gens);
    for g in 0..lay.n_gens {
        let committable = match mode {
            DispatchMode::Initial => true,
            DispatchMode::Step => state.gen_on[g] && next_node_on[net.gens[g].node],
        };
        p.var_bounds[lay.z(g)] = match (mode, committable) {
            (DispatchMode::Initial, _) => (1.0, 1.0),
            (DispatchMode::Step, true) => (0.0, 1.0),
            (DispatchMode::Step, false) => (0.0, 0.0),
        };
        p.var_bounds[lay.p(g)] = (0.0, limits.pmax_star[g].max(0.0));
        binaries.push(lay.z(g));
    }
    for i in 0..lay.n_nodes {
        let z = if next_node_on[i] { 1.0 } else { 0.0 };
        let load = net.nodes[i].load_mw;
        let alpha = net.nodes[i].critical_fraction;
        p.var_bounds[lay.shed_c(i)] = (0.0, alpha * z * load);
        p.var_bounds[lay.shed_nc(i)] = (0.0, (1.0 - alpha) * z * load);
        p.var_bounds[lay.theta(i)] = (pars.theta_min, pars.theta_max);
    }
    for t in 0..lay.n_branches {
        let limit = if next_branch_on[t] { net.branches[t].flow_limit_mw } else { 0.0 };
        p.var_bounds[lay.flow(t)] = (-limit, limit);
    }
    for r in reference_nodes(net, next_branch_on) {
        p.var_bounds[lay.theta(r)] = (0.0, 0.0);
    }

    // Output windows tied to commitment: z*pmin <= p <= z*pmax.
    for g in 0..lay.n_gens {
        p.inequalities.push(Inequality {
            row: LinearRow::new(vec![(lay.p(g), 1.0), (lay.z(g), -limits.pmin_star[g])]),
            lower: 0.0,
            upper: Real::INFINITY,
        });
        p.inequalities.push(Inequality {
            row: LinearRow::new(vec![(lay.p(g), 1.0), (lay.z(g), -limits.pmax_star[g])]),
            lower: Real::NEG_INFINITY,
            upper: 0.0,
        });
    }

    // Ramp windows with forced-outage relaxation. The relaxation constant is
    // shrunk per generator to the smallest value that keeps every integral
    // commitment feasible: the upward row never needs slack (a tripped unit
    // sits at p = 0 <= prev + window), and the downward row only needs to
    // cover the drop from the previous output to zero. Shrinking leaves the
    // {0,1}-commitment feasible set untouched while making the continuous
    // relaxation far tighter, so branch-and-bound certifies quickly instead
    // of enumerating commitments.
    if mode == DispatchMode::Step {
        for g in 0..lay.n_gens {
            let prev = state.gen_output[g];
            let window = net.ramp_per_step(g);
            let relax = pars.outage_relaxation_mw.min((prev - window).max(0.0));
            p.inequalities.push(Inequality {
                row: LinearRow::new(vec![(lay.p(g), 1.0)]),
                lower: Real::NEG_INFINITY,
                upper: prev + window,
            });
            p.inequalities.push(Inequality {
                row: LinearRow::new(vec![(lay.p(g), 1.0), (lay.z(g), -relax)]),
                lower: prev - window - relax,
                upper: Real::INFINITY,
            });
        }
    }

    // Nodal balance: generation + sheds + net imports = energized load.
    for i in 0..lay.n_nodes {
        let mut coeffs: Vec<(usize, Real)> = Vec::new();
        if let Some(g) = net.gen_at_node(i) {
            coeffs.push((lay.p(g), 1.0));
        }
        coeffs.push((lay.shed_c(i), 1.0));
        coeffs.push((lay.shed_nc(i), 1.0));
        for (t, br) in net.branches.iter().enumerate() {
            if br.from == i {
                coeffs.push((lay.flow(t), -1.0));
            } else if br.to == i {
                coeffs.push((lay.flow(t), 1.0));
            }
        }
        let z = if next_node_on[i] { 1.0 } else { 0.0 };
        p.equalities.push(Equality { row: LinearRow::new(coeffs), rhs: z * net.nodes[i].load_mw });
    }

    // DC flow definition on energized branches.
    for (t, br) in net.branches.iter().enumerate() {
        if !next_branch_on[t] {
            continue;
        }
        let b = pars.base_mva * br.susceptance_pu;
        p.equalities.push(Equality {
            row: LinearRow::new(vec![
                (lay.flow(t), 1.0),
                (lay.theta(br.from), -b),
                (lay.theta(br.to), b),
            ]),
            rhs: 0.0,
        });
    }

    (p, binaries)
}

/// Residual check of the deployed values against the physical constraints;
/// mirrors the operator's deployment-time power-flow verification.
fn verify_deployed(
    state: &OperatorState,
    net: &Network,
    limits: &VettedLimits,
    mode: DispatchMode,
    prev: &OperatorState,
    cfg: &DispatchConfig,
) -> bool {
    let tol = cfg.verify_mw;
    for i in 0..net.nodes.len() {
        let z = if state.node_on[i] { 1.0 } else { 0.0 };
        let gen: Real = net.gen_at_node(i).map_or(0.0, |g| state.gen_output[g]);
        let mut imports = 0.0;
        for (t, br) in net.branches.iter().enumerate() {
            if br.to == i {
                imports += state.flows[t];
            } else if br.from == i {
                imports -= state.flows[t];
            }
        }
        let residual = gen + state.shed_critical[i] + state.shed_noncritical[i] + imports
            - z * net.nodes[i].load_mw;
        if residual.abs() > tol {
            return false;
        }
        let load = net.nodes[i].load_mw;
        let alpha = net.nodes[i].critical_fraction;
        if state.shed_critical[i] < -tol || state.shed_critical[i] > alpha * z * load + tol {
            return false;
        }
        if state.shed_noncritical[i] < -tol
            || state.shed_noncritical[i] > (1.0 - alpha) * z * load + tol
        {
            return false;
        }
        if state.angles[i] < net.params.theta_min - cfg.verify_rad
            || state.angles[i] > net.params.theta_max + cfg.verify_rad
        {
            return false;
        }
    }
    for (t, br) in net.branches.iter().enumerate() {
        if state.branch_on[t] {
            let expected =
                net.params.base_mva * br.susceptance_pu * (state.angles[br.from] - state.angles[br.to]);
            if (state.flows[t] - expected).abs() > tol {
                return false;
            }
            if state.flows[t].abs() > br.flow_limit_mw + tol {
                return false;
            }
        } else if state.flows[t] != 0.0 {
            return false;
        }
    }
    for g in 0..net.gens.len() {
        let z = if state.gen_on[g] { 1.0 } else { 0.0 };
        let p = state.gen_output[g];
        if p < z * limits.pmin_star[g] - tol || p > z * limits.pmax_star[g] + tol {
            return false;
        }
        if mode == DispatchMode::Step {
            let window =
                net.ramp_per_step(g) + net.params.outage_relaxation_mw * (1.0 - z);
            if (p - prev.gen_output[g]).abs() > window + tol {
                return false;
            }
        }
    }
    true
}

/// Solves the dispatch for the given next-step topology and deploys the
/// result. Vetting failures, solver infeasibility, and verification failures
/// all surface as `converged = false` (the episode-ending condition).
pub fn dispatch(
    state: &OperatorState,
    net: &Network,
    limits: &VettedLimits,
    next_node_on: &[bool],
    next_branch_on: &[bool],
    cfg: &DispatchConfig,
    warm_x: Option<&[Real]>,
) -> DispatchResult {
    let failed = |state: &OperatorState| -> DispatchResult {
        let mut s = state.clone();
        s.node_on = next_node_on.to_vec();
        s.branch_on = next_branch_on.to_vec();
        s.converged = false;
        s.step = state.step + 1;
        DispatchResult { state: s, objective: Real::INFINITY, x: Vec::new() }
    };

    if !limits.feasible {
        return failed(state);
    }

    let (program, binaries) =
        build_dispatch(state, net, limits, next_node_on, next_branch_on, DispatchMode::Step);
    let warm = warm_x.filter(|x| x.len() == program.n_vars);
    let solved = solve_with_binaries_seeded(&program, &binaries, cfg.node_budget, &cfg.qp, warm, None)
        .expect("dispatch program is well-formed by construction");
    let (sol, _stats) = solved;
    let usable = match sol.status {
        QpStatus::Optimal => true,
        // A budget- or iteration-limited search may still return a feasible
        // incumbent; deployment verification below decides whether it stands.
        QpStatus::MaxIterations => sol.objective.is_finite(),
        QpStatus::Infeasible => false,
    };
    if !usable {
        return failed(state);
    }

    let next = deploy(state, net, limits, next_node_on, next_branch_on, &sol.x);
    if !verify_deployed(&next, net, limits, DispatchMode::Step, state, cfg) {
        return failed(state);
    }
    DispatchResult { state: next, objective: sol.objective, x: sol.x }
}

/// Computes the pre-event operating point: all assets energized, all
/// generators committed, no ramp coupling.
pub fn initial_dispatch(net: &Network, cfg: &DispatchConfig) -> DispatchResult {
    let lay = VarLayout::of(net);
    let blank = OperatorState {
        node_on: vec![true; lay.n_nodes],
        branch_on: vec![true; lay.n_branches],
        gen_on: vec![true; lay.n_gens],
        gen_output: vec![0.0; lay.n_gens],
        shed_critical: vec![0.0; lay.n_nodes],
        shed_noncritical: vec![0.0; lay.n_nodes],
        angles: vec![0.0; lay.n_nodes],
        flows: vec![0.0; lay.n_branches],
        converged: true,
        step: 0,
    };
    let limits = VettedLimits {
        pmin_star: net.gens.iter().map(|g| g.p_min).collect(),
        pmax_star: net.gens.iter().map(|g| g.p_max).collect(),
        lower_violation_flags: vec![false; lay.n_gens],
        feasible: true,
    };
    let all_nodes = vec![true; lay.n_nodes];
    let all_branches = vec![true; lay.n_branches];
    let (program, binaries) =
        build_dispatch(&blank, net, &limits, &all_nodes, &all_branches, DispatchMode::Initial);
    let solved = solve_with_binaries_seeded(&program, &binaries, cfg.node_budget, &cfg.qp, None, None)
        .expect("initial dispatch program is well-formed by construction");
    let (sol, _) = solved;
    if sol.status != QpStatus::Optimal {
        let mut s = blank;
        s.converged = false;
        return DispatchResult { state: s, objective: Real::INFINITY, x: Vec::new() };
    }
    let mut state =
        deploy(&blank, net, &limits, &all_nodes, &all_branches, &sol.x);
    state.step = 0;
    if !verify_deployed(&state, net, &limits, DispatchMode::Initial, &blank, cfg) {
        state.converged = false;
    }
    DispatchResult { state, objective: sol.objective, x: sol.x }
}

/// Values this close to a variable bound deploy exactly at the bound; the
/// induced balance perturbation stays well inside the verification tolerance.
const DEPLOY_SNAP: Real = 1e-6;

fn snap_to_bounds(value: Real, lo: Real, hi: Real) -> Real {
    let v = value.clamp(lo, hi);
    if (v - lo).abs() <= DEPLOY_SNAP {
        lo
    } else if (hi - v).abs() <= DEPLOY_SNAP {
        hi
    } else {
        v
    }
}

/// Reads the solved variables into a deployed state, snapping binaries to
/// exact 0/1, near-bound quantities to their exact bounds, and the
/// quantities of dark assets to exact zeros.
fn deploy(
    state: &OperatorState,
    net: &Network,
    limits: &VettedLimits,
    next_node_on: &[bool],
    next_branch_on: &[bool],
    x: &[Real],
) -> OperatorState {
    let lay = VarLayout::of(net);
    let mut gen_on = Vec::with_capacity(lay.n_gens);
    let mut gen_output = Vec::with_capacity(lay.n_gens);
    for g in 0..lay.n_gens {
        let on = x[lay.z(g)] > 0.5;
        gen_on.push(on);
        if on {
            let lo = limits.pmin_star[g].max(0.0);
            let hi = limits.pmax_star[g].max(0.0);
            gen_output.push(snap_to_bounds(x[lay.p(g)], lo, hi));
        } else {
            gen_output.push(0.0);
        }
    }
    let mut shed_c = Vec::with_capacity(lay.n_nodes);
    let mut shed_nc = Vec::with_capacity(lay.n_nodes);
    let mut angles = Vec::with_capacity(lay.n_nodes);
    for i in 0..lay.n_nodes {
        if next_node_on[i] {
            let load = net.nodes[i].load_mw;
            let alpha = net.nodes[i].critical_fraction;
            shed_c.push(snap_to_bounds(x[lay.shed_c(i)], 0.0, alpha * load));
            shed_nc.push(snap_to_bounds(x[lay.shed_nc(i)], 0.0, (1.0 - alpha) * load));
        } else {
            shed_c.push(0.0);
            shed_nc.push(0.0);
        }
        angles.push(x[lay.theta(i)].clamp(net.params.theta_min, net.params.theta_max));
    }
    let mut flows = Vec::with_capacity(lay.n_branches);
    for t in 0..lay.n_branches {
        if next_branch_on[t] {
            let lim = net.branches[t].flow_limit_mw;
            flows.push(x[lay.flow(t)].clamp(-lim, lim));
        } else {
            flows.push(0.0);
        }
    }
    OperatorState {
        node_on: next_node_on.to_vec(),
        branch_on: next_branch_on.to_vec(),
        gen_on,
        gen_output,
        shed_critical: shed_c,
        shed_noncritical: shed_nc,
        angles,
        flows,
        converged: true,
        step: state.step + 1,
    }
}

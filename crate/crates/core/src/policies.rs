//! Control strategies: rule-based baselines and the decoders that turn raw
//! actor outputs into operator directives.
//!
//! All strategies share one de-energization rule — trip any asset whose
//! fire distance has fallen to the trip threshold — and differ in whether
//! and how they drive generator setpoints ahead of the fire.

use crate::ddpg::{ActionDecoder, Policy};
use crate::env::{Env, EnvState, Observation};
use crate::gridmodel::Network;
use crate::operator::Directive;
use crate::Real;
use std::str::FromStr;

/// Default trip threshold: assets at Chebyshev fire distance at or below
/// this are de-energized by the proximity rule.
pub const DEFAULT_TRIP_DISTANCE: Real = 2.0;

/// Default number of generator groups for the grouped decoder.
pub const DEFAULT_GEN_GROUPS: usize = 5;

/// Named control strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Keep everything; let the fire and the dispatch sort it out.
    Reactive,
    /// Proximity tripping only, no setpoint control.
    Myopic,
    /// Learned setpoints for every generator each step.
    ProactiveFull,
    /// Learned setpoints for one generator per group each step.
    ProactivePartial,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::Reactive => "reactive",
            ControlMode::Myopic => "myopic",
            ControlMode::ProactiveFull => "proactive-full",
            ControlMode::ProactivePartial => "proactive-partial",
        }
    }

    /// True for the modes that need a trained actor.
    pub fn is_learned(self) -> bool {
        matches!(self, ControlMode::ProactiveFull | ControlMode::ProactivePartial)
    }
}

impl FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reactive" => Ok(ControlMode::Reactive),
            "myopic" => Ok(ControlMode::Myopic),
            "proactive-full" => Ok(ControlMode::ProactiveFull),
            "proactive-partial" => Ok(ControlMode::ProactivePartial),
            other => Err(format!(
                "unknown control mode '{other}' (expected reactive, myopic, \
                 proactive-full, or proactive-partial)"
            )),
        }
    }
}

/// Keep flags from fire proximity: an asset stays energized while its
/// footprint distance exceeds `trip_distance`. Distances come raw (cells)
/// from the observation, nodes first then branches.
pub fn proximity_keep_flags(
    obs: &Observation,
    n_nodes: usize,
    trip_distance: Real,
) -> (Vec<bool>, Vec<bool>) {
    let (node_d, branch_d) = obs.fire_distances.split_at(n_nodes);
    (
        node_d.iter().map(|&d| d > trip_distance).collect(),
        branch_d.iter().map(|&d| d > trip_distance).collect(),
    )
}

/// Keeps every asset energized and never requests setpoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reactive;

impl Policy for Reactive {
    fn act(&mut self, env: &Env, _st: &EnvState) -> Directive {
        Directive::keep_all(&env.net)
    }
}

/// Trips encroached assets but leaves generation to the dispatch.
#[derive(Debug, Clone, Copy)]
pub struct Myopic {
    pub trip_distance: Real,
}

impl Default for Myopic {
    fn default() -> Self {
        Self { trip_distance: DEFAULT_TRIP_DISTANCE }
    }
}

impl Policy for Myopic {
    fn act(&mut self, env: &Env, st: &EnvState) -> Directive {
        let obs = env.observe(st);
        let (node_keep, branch_keep) =
            proximity_keep_flags(&obs, env.net.nodes.len(), self.trip_distance);
        Directive {
            node_keep,
            branch_keep,
            gen_selected: vec![false; env.net.gens.len()],
            gen_delta: vec![0.0; env.net.gens.len()],
        }
    }
}

/// Converts one unit-interval entry into a setpoint request for generator
/// `g`, guarded so the resulting directive always passes vetting: the
/// generator is skipped entirely when it will not be available next step,
/// and the requested change is clamped to the per-step ramp with a target
/// inside `[0, p_max]`.
fn request_setpoint(
    env: &Env,
    st: &EnvState,
    obs: &Observation,
    node_keep: &[bool],
    g: usize,
    raw: Real,
    d: &mut Directive,
) {
    let gen = &env.net.gens[g];
    let available = st.power.node_on[gen.node]
        && node_keep[gen.node]
        && obs.fire_distances[gen.node] > 0.0
        && st.power.gen_on[g];
    if !available {
        return;
    }
    let target = raw.clamp(0.0, 1.0) * gen.p_max;
    let ramp = env.net.ramp_per_step(g);
    d.gen_selected[g] = true;
    d.gen_delta[g] = (target - st.power.gen_output[g]).clamp(-ramp, ramp);
}

/// One action entry per generator: the fraction of `p_max` to aim for,
/// approached at the ramp limit.
#[derive(Debug, Clone)]
pub struct FullDecoder {
    pub trip_distance: Real,
    n_gens: usize,
}

impl FullDecoder {
    pub fn new(net: &Network, trip_distance: Real) -> Self {
        Self { trip_distance, n_gens: net.gens.len() }
    }
}

impl ActionDecoder for FullDecoder {
    fn action_dim(&self) -> usize {
        self.n_gens
    }

    fn decode(&self, action: &[Real], env: &Env, st: &EnvState) -> Directive {
        let obs = env.observe(st);
        let (node_keep, branch_keep) =
            proximity_keep_flags(&obs, env.net.nodes.len(), self.trip_distance);
        let mut d = Directive {
            node_keep,
            branch_keep,
            gen_selected: vec![false; self.n_gens],
            gen_delta: vec![0.0; self.n_gens],
        };
        let keep = d.node_keep.clone();
        for g in 0..self.n_gens {
            request_setpoint(env, st, &obs, &keep, g, action[g], &mut d);
        }
        d
    }
}

/// Generators split into contiguous groups (ordered by node); each group
/// contributes two action entries, a selector picking one member and the
/// setpoint fraction for it. Keeps the action small on larger fleets.
#[derive(Debug, Clone)]
pub struct GroupedDecoder {
    pub trip_distance: Real,
    groups: Vec<Vec<usize>>,
    n_gens: usize,
}

impl GroupedDecoder {
    pub fn new(net: &Network, trip_distance: Real, n_groups: usize) -> Self {
        assert!(n_groups > 0, "need at least one generator group");
        let mut order: Vec<usize> = (0..net.gens.len()).collect();
        order.sort_by_key(|&g| (net.gens[g].node, g));
        let total = order.len();
        let base = total / n_groups;
        let extra = total % n_groups;
        let mut groups = Vec::with_capacity(n_groups);
        let mut at = 0;
        for j in 0..n_groups {
            let size = base + usize::from(j < extra);
            groups.push(order[at..at + size].to_vec());
            at += size;
        }
        Self { trip_distance, groups, n_gens: total }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Maps a unit-interval selector onto a member index of a group of `m`.
    pub fn bucket(selector: Real, m: usize) -> usize {
        debug_assert!(m > 0);
        ((selector.clamp(0.0, 1.0) * m as Real) as usize).min(m - 1)
    }
}

impl ActionDecoder for GroupedDecoder {
    fn action_dim(&self) -> usize {
        2 * self.groups.len()
    }

    fn decode(&self, action: &[Real], env: &Env, st: &EnvState) -> Directive {
        let obs = env.observe(st);
        let (node_keep, branch_keep) =
            proximity_keep_flags(&obs, env.net.nodes.len(), self.trip_distance);
        let mut d = Directive {
            node_keep,
            branch_keep,
            gen_selected: vec![false; self.n_gens],
            gen_delta: vec![0.0; self.n_gens],
        };
        let keep = d.node_keep.clone();
        for (j, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let g = group[Self::bucket(action[2 * j], group.len())];
            request_setpoint(env, st, &obs, &keep, g, action[2 * j + 1], &mut d);
        }
        d
    }
}

/// Baseline (non-learned) policy for a mode, if it has one.
pub fn baseline_policy(mode: ControlMode, trip_distance: Real) -> Option<Box<dyn Policy>> {
    match mode {
        ControlMode::Reactive => Some(Box::new(Reactive)),
        ControlMode::Myopic => Some(Box::new(Myopic { trip_distance })),
        _ => None,
    }
}

/// Action decoder for a learned mode, if it is one.
pub fn make_decoder(
    mode: ControlMode,
    net: &Network,
    trip_distance: Real,
    n_groups: usize,
) -> Option<Box<dyn ActionDecoder>> {
    match mode {
        ControlMode::ProactiveFull => Some(Box::new(FullDecoder::new(net, trip_distance))),
        ControlMode::ProactivePartial => {
            Some(Box::new(GroupedDecoder::new(net, trip_distance, n_groups)))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Scenario;
    use crate::geomap::GeoLayout;
    use crate::gridmodel::builtin;
    use crate::operator::{revise_topology, vet_setpoints};
    use crate::wildfire::FireSource;
    use proptest::prelude::*;

    fn toy_env(source: FireSource) -> Env {
        let net = Network::load_case(builtin::TOY3_CASE).unwrap();
        let layout = GeoLayout::parse(builtin::TOY3_LAYOUT).unwrap();
        let scenario = Scenario {
            grid_width: 48,
            grid_height: 48,
            p_spread: 0.0,
            source,
            horizon: 8,
            ..Scenario::default()
        };
        Env::new(net, layout, scenario).unwrap()
    }

    fn fake_obs(node_d: &[Real], branch_d: &[Real]) -> Observation {
        Observation {
            fire_distances: node_d.iter().chain(branch_d).copied().collect(),
            asset_flags: vec![true; node_d.len() + branch_d.len() + 1],
            power_reals: vec![0.0; 3 * node_d.len() + branch_d.len()],
        }
    }

    #[test]
    fn proximity_trips_at_the_threshold_but_not_beyond() {
        let obs = fake_obs(&[2.0, 3.0, 0.0], &[2.1, 1.0]);
        let (nodes, branches) = proximity_keep_flags(&obs, 3, 2.0);
        assert_eq!(nodes, vec![false, true, false]);
        assert_eq!(branches, vec![true, false]);
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in [
            ControlMode::Reactive,
            ControlMode::Myopic,
            ControlMode::ProactiveFull,
            ControlMode::ProactivePartial,
        ] {
            assert_eq!(mode.name().parse::<ControlMode>().unwrap(), mode);
        }
        assert!("eager".parse::<ControlMode>().is_err());
    }

    #[test]
    fn reactive_does_nothing() {
        let env = toy_env(FireSource::Fixed { x: 47, y: 47 });
        let st = env.reset(1);
        let d = Reactive.act(&env, &st);
        assert_eq!(d, Directive::keep_all(&env.net));
    }

    #[test]
    fn myopic_trips_the_encroached_node_without_setpoints() {
        // Fire one cell away from node 3 at (20, 34): distance 1 <= 2.
        let env = toy_env(FireSource::Fixed { x: 21, y: 35 });
        let st = env.reset(1);
        let d = Myopic::default().act(&env, &st);
        assert!(!d.node_keep[2]);
        assert!(d.node_keep[0] && d.node_keep[1]);
        assert!(d.gen_selected.iter().all(|&s| !s));
        // Branches 2-3 and 1-3 terminate on the encroached cell.
        assert!(!d.branch_keep[1] && !d.branch_keep[2]);
    }

    #[test]
    fn full_decoder_moves_toward_the_target_at_the_ramp_limit() {
        let env = toy_env(FireSource::Fixed { x: 47, y: 47 });
        let st = env.reset(1);
        // toy3's single generator starts at 100 MW, p_max 150, 80 MW/step.
        let dec = FullDecoder::new(&env.net, DEFAULT_TRIP_DISTANCE);
        assert_eq!(dec.action_dim(), 1);
        let up = dec.decode(&[1.0], &env, &st);
        assert!(up.gen_selected[0]);
        assert!((up.gen_delta[0] - 50.0).abs() < 1e-9, "150 is 50 MW above, inside the ramp");
        let down = dec.decode(&[0.0], &env, &st);
        assert!((down.gen_delta[0] + 80.0).abs() < 1e-9, "0 is 100 MW below, ramp-clamped");
    }

    #[test]
    fn selector_buckets_cover_groups_evenly() {
        assert_eq!(GroupedDecoder::bucket(0.0, 2), 0);
        assert_eq!(GroupedDecoder::bucket(0.49, 2), 0);
        assert_eq!(GroupedDecoder::bucket(0.5, 2), 1);
        assert_eq!(GroupedDecoder::bucket(0.9, 2), 1);
        assert_eq!(GroupedDecoder::bucket(1.0, 2), 1);
        assert_eq!(GroupedDecoder::bucket(0.999, 3), 2);
    }

    #[test]
    fn grouping_is_contiguous_balanced_and_node_ordered() {
        let net = Network::load_case(builtin::RTS24_CASE).unwrap();
        let dec = GroupedDecoder::new(&net, DEFAULT_TRIP_DISTANCE, DEFAULT_GEN_GROUPS);
        assert_eq!(dec.action_dim(), 10);
        let groups = dec.groups();
        assert_eq!(groups.len(), 5);
        let flat: Vec<usize> = groups.iter().flatten().copied().collect();
        assert_eq!(flat.len(), net.gens.len());
        for w in flat.windows(2) {
            assert!(net.gens[w[0]].node <= net.gens[w[1]].node, "ordered by node");
        }
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "balanced split, got {sizes:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Whatever the actor emits, the decoded directive must pass
        /// setpoint vetting — even while the fire is taking the generator's
        /// own node. The fire starts three cells from the generator node
        /// and spreads aggressively, so availability flips mid-episode.
        #[test]
        fn decoded_directives_always_pass_vetting(raw in proptest::collection::vec(0.0f64..=1.0, 16)) {
            let net = Network::load_case(builtin::TOY3_CASE).unwrap();
            let layout = GeoLayout::parse(builtin::TOY3_LAYOUT).unwrap();
            let scenario = Scenario {
                grid_width: 48,
                grid_height: 48,
                p_spread: 0.8,
                source: FireSource::Fixed { x: 13, y: 20 },
                horizon: 8,
                ..Scenario::default()
            };
            let env = Env::new(net, layout, scenario).unwrap();
            let full = FullDecoder::new(&env.net, DEFAULT_TRIP_DISTANCE);
            let grouped = GroupedDecoder::new(&env.net, DEFAULT_TRIP_DISTANCE, 1);
            for dec in [&full as &dyn ActionDecoder, &grouped as &dyn ActionDecoder] {
                let mut st = env.reset(3);
                let mut feed = raw.iter().cycle();
                while !st.done {
                    let action: Vec<Real> =
                        (0..dec.action_dim()).map(|_| *feed.next().unwrap()).collect();
                    let d = dec.decode(&action, &env, &st);
                    let obs = env.observe(&st);
                    let clear: Vec<bool> = obs.fire_distances.iter().map(|&x| x > 0.0).collect();
                    let (nodes, branches) = clear.split_at(env.net.nodes.len());
                    let (next_nodes, _) = revise_topology(&st.power, &d, nodes, branches);
                    let vet = vet_setpoints(&st.power, &d, &env.net, &next_nodes);
                    prop_assert!(vet.feasible, "vetting failed at step {}", st.step);
                    env.step(&mut st, &d).unwrap();
                }
            }
        }
    }
}

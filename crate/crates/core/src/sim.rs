//! Fixed-step closed-loop simulation with runtime safety monitors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierParams;
use crate::control::{
    follower_control, leader_control, leader_control_with_misbehaving, AgentSnapshot,
    ConflictHeading, ControlContext, ControlOutput, ControllerGains, HeadingFilter,
    MisbehaviorTrack, SteeringLaw,
};
use crate::error::{Error, Result};
use crate::model::{
    bicycle_step, distance, AgentDescriptor, AgentKind, AgentState, ControlCommand, Vec2,
    VehicleParams, WorldConfig, DEFAULT_DT,
};

/// Slack on the separation and connectivity monitors.
pub const MONITOR_SLACK: f64 = 1e-9;
pub const DEFAULT_CONVERGENCE_RADIUS: f64 = 0.1;
/// Window used for the stall metric.
pub const STALL_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world: WorldConfig,
    pub vehicle: VehicleParams,
    /// Sorted by id.
    pub agents: Vec<AgentDescriptor>,
    pub gains: ControllerGains,
    /// Per-agent gain overrides.
    pub gain_overrides: BTreeMap<u32, ControllerGains>,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub convergence_radius: f64,
    pub barrier: BarrierParams,
    pub steering: SteeringLaw,
    pub conflict_heading: ConflictHeading,
}

impl Scenario {
    /// Builds a scenario with default step, tolerances and controller options.
    pub fn new(
        world: WorldConfig,
        vehicle: VehicleParams,
        mut agents: Vec<AgentDescriptor>,
        gains: ControllerGains,
        t_max: f64,
    ) -> Result<Self> {
        agents.sort_by_key(|a| a.id);
        let scenario = Self {
            barrier: BarrierParams::new(1.0, &world)?,
            world,
            vehicle,
            agents,
            gains,
            gain_overrides: BTreeMap::new(),
            dt: DEFAULT_DT,
            t_max,
            seed: 0,
            convergence_radius: DEFAULT_CONVERGENCE_RADIUS,
            steering: SteeringLaw::default(),
            conflict_heading: ConflictHeading::default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn gains_for(&self, id: u32) -> ControllerGains {
        self.gain_overrides.get(&id).copied().unwrap_or(self.gains)
    }

    pub fn controllable(&self) -> impl Iterator<Item = &AgentDescriptor> {
        self.agents.iter().filter(|a| a.kind.is_controllable())
    }

    pub fn has_misbehaving(&self) -> bool {
        self.agents.iter().any(|a| a.kind == AgentKind::Misbehaving)
    }

    /// Checks every structural invariant; messages name the offending agents.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::Validation(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("sim.dt must be > 0, got {}", self.dt));
        }
        if !(self.t_max > self.dt && self.t_max.is_finite()) {
            return invalid(format!("sim.t_max must exceed dt, got {}", self.t_max));
        }
        if self.convergence_radius.is_nan() || self.convergence_radius <= 0.0 {
            return invalid(format!(
                "sim.convergence_radius must be > 0, got {}",
                self.convergence_radius
            ));
        }
        if self.agents.is_empty() {
            return invalid("scenario has no agents".into());
        }
        for (k, a) in self.agents.iter().enumerate() {
            if a.id != k as u32 + 1 {
                return invalid(format!(
                    "agent ids must be unique and contiguous from 1 (found {} at position {})",
                    a.id,
                    k + 1
                ));
            }
        }
        let leaders = self
            .agents
            .iter()
            .filter(|a| a.kind == AgentKind::Leader)
            .count();
        if leaders != 1 {
            return invalid(format!("exactly one leader required, found {leaders}"));
        }
        let w = &self.world;
        for a in &self.agents {
            if !a.initial_state.is_finite() {
                return invalid(format!("agent {}: start state is not finite", a.id));
            }
            match (a.kind, &a.destination, &a.misbehavior) {
                (AgentKind::Misbehaving, None, Some(spec)) => {
                    spec.validate()
                        .map_err(|e| Error::Validation(format!("agent {}: {e}", a.id)))?;
                }
                (AgentKind::Misbehaving, _, _) => {
                    return invalid(format!(
                        "agent {}: misbehaving agents need a misbehavior block and no destination",
                        a.id
                    ))
                }
                (_, Some(dest), None) => {
                    if !w.strictly_inside(dest) {
                        return invalid(format!(
                            "agent {}: destination lies outside the connectivity disc",
                            a.id
                        ));
                    }
                    if !w.strictly_inside(&a.initial_state.position()) {
                        return invalid(format!(
                            "agent {}: start lies outside the connectivity disc",
                            a.id
                        ));
                    }
                }
                _ => {
                    return invalid(format!(
                        "agent {}: controllable agents need a destination and no misbehavior block",
                        a.id
                    ))
                }
            }
        }
        let starts = self.initial_positions();
        for i in 0..starts.len() {
            for j in i + 1..starts.len() {
                if distance(&starts[i].1, &starts[j].1) <= w.separation {
                    return invalid(format!(
                        "initial states overlap: agents {},{}",
                        starts[i].0, starts[j].0
                    ));
                }
            }
        }
        let dests: Vec<(u32, Vec2)> = self
            .controllable()
            .map(|a| (a.id, a.destination.expect("checked above")))
            .collect();
        for i in 0..dests.len() {
            for j in i + 1..dests.len() {
                if distance(&dests[i].1, &dests[j].1) <= w.separation {
                    return invalid(format!(
                        "destinations overlap: agents {},{}",
                        dests[i].0, dests[j].0
                    ));
                }
            }
        }
        // scripted paths must keep clear of every destination
        let tracks = self.tracks();
        let steps = (self.t_max / self.dt).ceil() as usize;
        for (id, track) in &tracks {
            for n in 0..=steps {
                let p = track.sample(n as f64 * self.dt).position;
                if let Some((owner, _)) =
                    dests.iter().find(|(_, d)| distance(&p, d) <= w.separation)
                {
                    return invalid(format!(
                        "misbehaving agent {id} passes within d_s of the destination of agent {owner}"
                    ));
                }
            }
        }
        Ok(())
    }

    fn tracks(&self) -> Vec<(u32, MisbehaviorTrack)> {
        self.agents
            .iter()
            .filter_map(|a| {
                a.misbehavior.as_ref().map(|spec| {
                    (
                        a.id,
                        MisbehaviorTrack::new(
                            spec,
                            &a.initial_state,
                            &self.world,
                            self.t_max + self.dt,
                            self.seed,
                        ),
                    )
                })
            })
            .collect()
    }

    fn initial_positions(&self) -> Vec<(u32, Vec2)> {
        let tracks = self.tracks();
        self.agents
            .iter()
            .map(|a| {
                let p = tracks
                    .iter()
                    .find(|(id, _)| *id == a.id)
                    .map(|(_, t)| t.sample(0.0).position)
                    .unwrap_or_else(|| a.initial_state.position());
                (a.id, p)
            })
            .collect()
    }
}

/// Recorded quantities for one agent at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: u32,
    pub kind: AgentKind,
    pub state: AgentState,
    pub command: ControlCommand,
    /// Barrier value; `None` for misbehaving agents.
    pub value: Option<f64>,
    /// Distance to the nearest other agent.
    pub min_distance: f64,
    /// Distance to the connectivity centre.
    pub center_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub t: f64,
    pub agents: Vec<AgentRecord>,
    /// Over all pairs, misbehaving agents included.
    pub min_pairwise_distance: f64,
    /// Over controllable agents.
    pub max_center_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Collision { a: u32, b: u32, distance: f64 },
    ConnectivityLoss { agent: u32, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged {
        t: f64,
    },
    Timeout,
    SafetyViolation {
        t: f64,
        violations: Vec<Violation>,
    },
    /// A numerical failure stopped the run (for instance a steering singularity).
    Aborted {
        t: f64,
        agent: u32,
        reason: String,
    },
}

/// Counters of non-fatal controller events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub zero_gradient: u64,
    pub degenerate_steering: u64,
    pub degenerate_matching: u64,
    /// Steps on which speed matching limited some agent.
    pub conflict_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_positions: BTreeMap<u32, Vec2>,
    pub destinations: BTreeMap<u32, Vec2>,
    /// Smallest displacement over any [`STALL_WINDOW`] while the agent was
    /// still outside the convergence radius; `None` if never observed.
    pub min_window_displacement: BTreeMap<u32, f64>,
    pub diagnostics: Diagnostics,
}

impl RunSummary {
    /// Distance-to-destination series of each controllable agent.
    pub fn distance_series(&self, trajectory: &[StepRecord]) -> BTreeMap<u32, Vec<(f64, f64)>> {
        let mut out: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        for rec in trajectory {
            for a in &rec.agents {
                if let Some(d) = self.destinations.get(&a.id) {
                    out.entry(a.id)
                        .or_default()
                        .push((rec.t, distance(&a.state.position(), d)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub trajectory: Vec<StepRecord>,
    pub summary: RunSummary,
}

impl RunOutcome {
    pub fn is_converged(&self) -> bool {
        matches!(self.status, RunStatus::Converged { .. })
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        self.trajectory
            .iter()
            .map(|r| r.min_pairwise_distance)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_center_distance(&self) -> f64 {
        self.trajectory
            .iter()
            .map(|r| r.max_center_distance)
            .fold(0.0, f64::max)
    }
}

/// Collision and connectivity checks on a snapshot. Misbehaving agents take
/// part in the collision check only.
pub fn monitor_step(agents: &[AgentSnapshot], world: &WorldConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    for (k, a) in agents.iter().enumerate() {
        for b in &agents[k + 1..] {
            let d = distance(&a.position(), &b.position());
            if d < world.separation - MONITOR_SLACK {
                out.push(Violation::Collision {
                    a: a.id,
                    b: b.id,
                    distance: d,
                });
            }
        }
    }
    for a in agents.iter().filter(|a| a.kind.is_controllable()) {
        let d = world.center_distance(&a.position());
        if d > world.effective_radius + MONITOR_SLACK {
            out.push(Violation::ConnectivityLoss {
                agent: a.id,
                distance: d,
            });
        }
    }
    out
}

/// True iff every controllable agent is within `radius` of its destination.
pub fn convergence_check(agents: &[AgentSnapshot], radius: f64) -> bool {
    agents
        .iter()
        .filter(|a| a.kind.is_controllable())
        .all(|a| match a.destination {
            Some(d) => distance(&a.position(), &d) <= radius,
            None => false,
        })
}

/// Simulation time of step `n`, exact when `1/dt` is an integer.
pub fn time_at(step: u64, dt: f64) -> f64 {
    let rate = 1.0 / dt;
    if (rate - rate.round()).abs() < 1e-9 * rate {
        step as f64 / rate.round()
    } else {
        step as f64 * dt
    }
}

struct Runtime<'s> {
    scenario: &'s Scenario,
    tracks: Vec<(u32, MisbehaviorTrack)>,
    states: BTreeMap<u32, AgentState>,
    speeds: BTreeMap<u32, f64>,
    filters: BTreeMap<u32, HeadingFilter>,
}

impl<'s> Runtime<'s> {
    fn new(scenario: &'s Scenario) -> Self {
        let tracks = scenario.tracks();
        let mut states = BTreeMap::new();
        let mut filters = BTreeMap::new();
        for a in scenario.controllable() {
            states.insert(a.id, a.initial_state);
            filters.insert(a.id, HeadingFilter::new(scenario.dt));
        }
        Self {
            scenario,
            tracks,
            states,
            speeds: BTreeMap::new(),
            filters,
        }
    }

    fn snapshot(&self, t: f64) -> Vec<AgentSnapshot> {
        self.scenario
            .agents
            .iter()
            .map(|a| {
                if let Some((_, track)) = self.tracks.iter().find(|(id, _)| *id == a.id) {
                    let m = track.sample(t);
                    AgentSnapshot {
                        id: a.id,
                        kind: a.kind,
                        state: m.as_state(),
                        destination: None,
                        speed: m.speed(),
                    }
                } else {
                    AgentSnapshot {
                        id: a.id,
                        kind: a.kind,
                        state: self.states[&a.id],
                        destination: a.destination,
                        speed: self.speeds.get(&a.id).copied().unwrap_or(0.0),
                    }
                }
            })
            .collect()
    }

    fn control(&mut self, snapshot: &[AgentSnapshot]) -> Vec<(u32, Result<ControlOutput>)> {
        let sc = self.scenario;
        let misbehaving_present = sc.has_misbehaving();
        snapshot
            .iter()
            .filter(|a| a.kind.is_controllable())
            .map(|me| {
                let ctx = ControlContext {
                    world: &sc.world,
                    vehicle: &sc.vehicle,
                    barrier: &sc.barrier,
                    gains: sc.gains_for(me.id),
                    dt: sc.dt,
                    steering: sc.steering,
                    conflict_heading: sc.conflict_heading,
                };
                let filter = self
                    .filters
                    .get_mut(&me.id)
                    .expect("controllable agent has a filter");
                let out = match me.kind {
                    AgentKind::Leader if misbehaving_present => {
                        leader_control_with_misbehaving(&ctx, me, snapshot, filter)
                    }
                    AgentKind::Leader => leader_control(&ctx, me, filter),
                    _ => follower_control(&ctx, me, snapshot, filter),
                };
                (me.id, out)
            })
            .collect()
    }
}

fn record(
    step: u64,
    t: f64,
    snapshot: &[AgentSnapshot],
    commands: &BTreeMap<u32, (ControlCommand, f64)>,
    world: &WorldConfig,
) -> StepRecord {
    let mut min_pair = f64::INFINITY;
    let mut agents = Vec::with_capacity(snapshot.len());
    for a in snapshot {
        let p = a.position();
        let nearest = snapshot
            .iter()
            .filter(|b| b.id != a.id)
            .map(|b| distance(&p, &b.position()))
            .fold(f64::INFINITY, f64::min);
        min_pair = min_pair.min(nearest);
        let (command, value) = match commands.get(&a.id) {
            Some((c, v)) => (*c, Some(*v)),
            None => (ControlCommand::new(a.speed, 0.0), None),
        };
        agents.push(AgentRecord {
            id: a.id,
            kind: a.kind,
            state: a.state,
            command,
            value,
            min_distance: nearest,
            center_distance: world.center_distance(&p),
        });
    }
    let max_center = agents
        .iter()
        .filter(|a| a.kind.is_controllable())
        .map(|a| a.center_distance)
        .fold(0.0, f64::max);
    StepRecord {
        step,
        t,
        agents,
        min_pairwise_distance: min_pair,
        max_center_distance: max_center,
    }
}

/// Runs the closed loop until convergence, `t_max`, a safety violation or a
/// numerical failure. Deterministic for a given scenario.
pub fn run(scenario: &Scenario) -> RunOutcome {
    let sc = scenario;
    let mut rt = Runtime::new(sc);
    let mut trajectory = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let max_steps = (sc.t_max / sc.dt).round() as u64;
    let mut step: u64 = 0;

    let status = loop {
        let t = time_at(step, sc.dt);
        let snapshot = rt.snapshot(t);

        let violations = monitor_step(&snapshot, &sc.world);
        if !violations.is_empty() {
            trajectory.push(record(step, t, &snapshot, &BTreeMap::new(), &sc.world));
            break RunStatus::SafetyViolation { t, violations };
        }

        let outputs = rt.control(&snapshot);
        let mut commands = BTreeMap::new();
        let mut failure = None;
        let mut limited = false;
        for (id, out) in outputs {
            match out {
                Ok(o) => {
                    diagnostics.zero_gradient += o.zero_gradient as u64;
                    diagnostics.degenerate_steering += o.degenerate_steering as u64;
                    diagnostics.degenerate_matching += o.speed.degenerate.len() as u64;
                    limited |= o.speed.limiting.is_some() && o.speed.u < o.speed.u_goal;
                    commands.insert(id, (o.command, o.barrier.value));
                }
                Err(e) => {
                    failure.get_or_insert((id, e));
                }
            }
        }
        diagnostics.conflict_steps += limited as u64;
        if let Some((agent, e)) = failure {
            trajectory.push(record(step, t, &snapshot, &commands, &sc.world));
            break RunStatus::Aborted {
                t,
                agent,
                reason: e.to_string(),
            };
        }
        trajectory.push(record(step, t, &snapshot, &commands, &sc.world));

        if convergence_check(&snapshot, sc.convergence_radius) {
            break RunStatus::Converged { t };
        }
        if step >= max_steps {
            break RunStatus::Timeout;
        }

        let mut failure = None;
        for (id, (cmd, _)) in &commands {
            match bicycle_step(&rt.states[id], cmd, &sc.vehicle, sc.dt) {
                Ok(next) => {
                    rt.states.insert(*id, next);
                    rt.speeds.insert(*id, cmd.u);
                }
                Err(e) => {
                    failure.get_or_insert((*id, e));
                }
            }
        }
        if let Some((agent, e)) = failure {
            break RunStatus::Aborted {
                t,
                agent,
                reason: e.to_string(),
            };
        }
        step += 1;
    };

    let last = trajectory.last().expect("at least one record");
    let final_positions = last
        .agents
        .iter()
        .map(|a| (a.id, a.state.position()))
        .collect();
    let destinations: BTreeMap<u32, Vec2> = sc
        .controllable()
        .map(|a| (a.id, a.destination.expect("validated")))
        .collect();
    let min_window_displacement = stall_metric(&trajectory, &destinations, sc);
    RunOutcome {
        status,
        trajectory,
        summary: RunSummary {
            final_positions,
            destinations,
            min_window_displacement,
            diagnostics,
        },
    }
}

fn stall_metric(
    trajectory: &[StepRecord],
    destinations: &BTreeMap<u32, Vec2>,
    sc: &Scenario,
) -> BTreeMap<u32, f64> {
    let window = (STALL_WINDOW / sc.dt).round() as usize;
    let mut out = BTreeMap::new();
    if window == 0 || trajectory.len() <= window {
        return out;
    }
    for (idx, (id, dest)) in destinations.iter().enumerate() {
        let pos = |rec: &StepRecord| -> Vec2 {
            let a = rec.agents.iter().find(|a| a.id == *id);
            a.map(|a| a.state.position())
                .unwrap_or_else(|| rec.agents[idx.min(rec.agents.len() - 1)].state.position())
        };
        let mut best = f64::INFINITY;
        for k in window..trajectory.len() {
            let start = pos(&trajectory[k - window]);
            if distance(&start, dest) <= sc.convergence_radius {
                continue;
            }
            best = best.min(distance(&pos(&trajectory[k]), &start));
        }
        if best.is_finite() {
            out.insert(*id, best);
        }
    }
    out
}

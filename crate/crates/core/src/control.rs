//! Distributed controllers for leader and follower vehicles, plus scripted
//! motion for misbehaving agents.
//!
//! Every controllable agent steers its frame toward the descent direction of
//! its own barrier function and picks a forward speed. The leader drives at
//! `k·tanh(distance to goal)`; followers (and a leader that senses misbehaving
//! agents) additionally slow down to match neighbours they are closing on
//! inside the safety radius.

use std::f64::consts::FRAC_PI_2;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{evaluate_at, BarrierEvaluation, BarrierNeighbor, BarrierParams};
use crate::error::{Error, Result};
use crate::model::{
    wrap_angle, AgentKind, AgentState, ControlCommand, Vec2, VehicleParams, WorldConfig,
    STEERING_GUARD,
};

/// Gradient norm below which the heading field is considered undefined.
pub const ZERO_GRADIENT: f64 = 1e-12;
/// Denominator threshold for the closed-form steering rate.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-9;
/// Threshold on |r_ijᵀη_j| for speed matching.
pub const DEGENERATE_MATCHING: f64 = 1e-9;
/// Time constant of the heading-rate feedforward filter, seconds.
pub const RATE_SMOOTHING: f64 = 0.05;
/// Largest wheel angle the tracking law will request.
pub const STEERING_LIMIT: f64 = FRAC_PI_2 - 2.0 * STEERING_GUARD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Speed gain k.
    pub k: f64,
    /// Heading gain λ.
    pub lambda: f64,
}

impl ControllerGains {
    pub fn new(k: f64, lambda: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gain k must be > 0, got {k}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gain lambda must be > 0, got {lambda}"
            )));
        }
        Ok(Self { k, lambda })
    }

    /// Upper clamp on commanded speed.
    pub fn max_speed(&self) -> f64 {
        2.0 * self.k
    }
}

/// How the front-wheel rate is derived from the heading field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringLaw {
    /// Put the wheel at the angle that makes the frame turn at the unicycle
    /// rate −λ(θ − φ) + φ̇ over the next step.
    #[default]
    Tracking,
    /// Continuous-time rate expression, see [`bicycle_omega`].
    ClosedForm,
}

/// Which direction the conflict test treats as the agent's direction of motion.
///
/// A bicycle cannot turn on the spot, so right after a neighbour enters the
/// safety region φ may already point away while the vehicle still drives
/// toward it. Testing θ catches that case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictHeading {
    /// The desired heading φ.
    Desired,
    /// The current frame heading θ.
    #[default]
    Actual,
}

/// Backward-difference memory of the desired heading and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingFilter {
    pub phi: f64,
    pub phi_dot: f64,
    pub phi_ddot: f64,
    pub u_prev: f64,
    pub u_dot: f64,
    /// φ̇ passed through a first-order low-pass with time constant [`RATE_SMOOTHING`].
    pub phi_rate: f64,
    samples: u32,
    dt: f64,
}

impl HeadingFilter {
    pub fn new(dt: f64) -> Self {
        Self {
            phi: 0.0,
            phi_dot: 0.0,
            phi_ddot: 0.0,
            u_prev: 0.0,
            u_dot: 0.0,
            phi_rate: 0.0,
            samples: 0,
            dt,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    /// Pushes this step's heading and speed. First derivatives appear on the
    /// second sample, φ̈ on the third.
    pub fn update(&mut self, phi: f64, u: f64) {
        let phi = wrap_angle(phi);
        if self.samples == 0 {
            self.phi = phi;
            self.u_prev = u;
        } else {
            let phi_dot = wrap_angle(phi - self.phi) / self.dt;
            self.phi_ddot = if self.samples >= 2 {
                (phi_dot - self.phi_dot) / self.dt
            } else {
                0.0
            };
            self.phi_dot = phi_dot;
            let alpha = self.dt / (RATE_SMOOTHING + self.dt);
            self.phi_rate += alpha * (phi_dot - self.phi_rate);
            self.u_dot = (u - self.u_prev) / self.dt;
            self.phi = phi;
            self.u_prev = u;
        }
        self.samples = self.samples.saturating_add(1);
    }
}

/// Orientation of −∇V.
pub fn desired_heading(gradient: &Vec2) -> Result<f64> {
    let norm = gradient.norm();
    if norm < ZERO_GRADIENT || !norm.is_finite() {
        return Err(Error::ZeroGradient { norm });
    }
    Ok((-gradient.y).atan2(-gradient.x))
}

/// k·tanh(‖r − r_dest‖).
pub fn leader_speed(r: &Vec2, dest: &Vec2, gains: &ControllerGains) -> f64 {
    gains.k * (r - dest).norm().tanh()
}

/// Closed-form steering rate
///
/// ω = [(Bλφ̇ − λu·tanγ + Bφ̈)u + (φ̇ − λθ + λφ)u̇] / [u² + B(φ̇ − λθ + λφ)²]
///
/// with θ − φ taken on the wrapped difference.
pub fn bicycle_omega(
    state: &AgentState,
    filter: &HeadingFilter,
    u: f64,
    gains: &ControllerGains,
    params: &VehicleParams,
) -> Result<f64> {
    let b = params.wheelbase;
    let lambda = gains.lambda;
    let turn = filter.phi_dot - lambda * wrap_angle(state.theta - filter.phi);
    let numerator =
        (b * lambda * filter.phi_dot - lambda * u * state.gamma.tan() + b * filter.phi_ddot) * u
            + turn * filter.u_dot;
    let denominator = u * u + b * turn * turn;
    if denominator < DEGENERATE_DENOMINATOR {
        return Err(Error::DegenerateDenominator { denominator });
    }
    Ok(numerator / denominator)
}

/// Steering rate that places the wheel at atan(B·ω̃/u) after one step, where
/// ω̃ = −λ(θ − φ) + φ̇ is the unicycle turn rate, with φ̇ taken from the
/// smoothed estimate. Zero when `u` is zero.
pub fn tracking_omega(
    state: &AgentState,
    filter: &HeadingFilter,
    u: f64,
    gains: &ControllerGains,
    params: &VehicleParams,
    dt: f64,
) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let turn = filter.phi_rate - gains.lambda * wrap_angle(state.theta - filter.phi);
    let target = (params.wheelbase * turn / u)
        .atan()
        .clamp(-STEERING_LIMIT, STEERING_LIMIT);
    (target - state.gamma) / dt
}

/// What a controller knows about another agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: u32,
    pub kind: AgentKind,
    pub state: AgentState,
    pub destination: Option<Vec2>,
    /// Forward speed the agent is broadcasting.
    pub speed: f64,
}

impl AgentSnapshot {
    pub fn position(&self) -> Vec2 {
        self.state.position()
    }
}

/// Speed chosen for one agent and what limited it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedDecision {
    pub u: f64,
    /// Goal-seeking speed k·tanh(‖r − r_dest‖).
    pub u_goal: f64,
    /// Neighbour whose matched speed was the minimum, if any.
    pub limiting: Option<u32>,
    /// Neighbours for which matching was degenerate.
    pub degenerate: Vec<u32>,
}

/// Neighbours inside the safety region that `heading` points toward (J < 0).
pub fn conflict_set(
    position: &Vec2,
    heading: f64,
    neighbors: &[AgentSnapshot],
    world: &WorldConfig,
) -> Vec<u32> {
    let eta = Vec2::new(heading.cos(), heading.sin());
    neighbors
        .iter()
        .filter(|n| {
            let r_ij = position - n.position();
            let d = r_ij.norm();
            d >= world.separation && d <= world.safety_radius && r_ij.dot(&eta) < 0.0
        })
        .map(|n| n.id)
        .collect()
}

/// Goal speed, reduced to the minimum matched speed over conflicting
/// neighbours and clamped to `[0, 2k]`.
pub fn follower_speed(
    me: &AgentSnapshot,
    heading: f64,
    neighbors: &[AgentSnapshot],
    gains: &ControllerGains,
    world: &WorldConfig,
) -> SpeedDecision {
    let position = me.position();
    let u_goal = me
        .destination
        .map(|d| leader_speed(&position, &d, gains))
        .unwrap_or(0.0);
    let eta_j = Vec2::new(heading.cos(), heading.sin());
    let conflicts = conflict_set(&position, heading, neighbors, world);
    let span = world.safety_radius - world.separation;

    let mut best: Option<(f64, u32)> = None;
    let mut degenerate = Vec::new();
    for n in neighbors.iter().filter(|n| conflicts.contains(&n.id)) {
        let r_ij = position - n.position();
        let d = r_ij.norm();
        let along_j = r_ij.dot(&eta_j);
        let matched = if along_j.abs() < DEGENERATE_MATCHING {
            degenerate.push(n.id);
            0.0
        } else {
            n.speed * r_ij.dot(&n.state.heading()) / along_j
        };
        let blended =
            u_goal * (d - world.separation) / span + matched * (world.safety_radius - d) / span;
        if best.is_none_or(|(u, _)| blended < u) {
            best = Some((blended, n.id));
        }
    }
    let (u, limiting) = match best {
        Some((u, id)) => (u, Some(id)),
        None => (u_goal, None),
    };
    SpeedDecision {
        u: u.clamp(0.0, gains.max_speed()),
        u_goal,
        limiting,
        degenerate,
    }
}

/// Static inputs shared by every controller call in a step.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    pub world: &'a WorldConfig,
    pub vehicle: &'a VehicleParams,
    pub barrier: &'a BarrierParams,
    pub gains: ControllerGains,
    pub dt: f64,
    pub steering: SteeringLaw,
    pub conflict_heading: ConflictHeading,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub command: ControlCommand,
    /// Desired heading φ used this step.
    pub phi: f64,
    pub barrier: BarrierEvaluation,
    pub speed: SpeedDecision,
    /// The gradient vanished and φ was held.
    pub zero_gradient: bool,
    /// The closed-form steering denominator was degenerate and ω was zeroed.
    pub degenerate_steering: bool,
}

fn sensed(
    me: &AgentSnapshot,
    others: &[AgentSnapshot],
    world: &WorldConfig,
    only_misbehaving: bool,
) -> Vec<AgentSnapshot> {
    let p = me.position();
    others
        .iter()
        .filter(|o| o.id != me.id)
        .filter(|o| !only_misbehaving || o.kind == AgentKind::Misbehaving)
        .filter(|o| (o.position() - p).norm() <= world.sensing_radius)
        .copied()
        .collect()
}

enum SpeedRule<'n> {
    Goal,
    Matching(&'n [AgentSnapshot]),
}

fn drive(
    ctx: &ControlContext,
    me: &AgentSnapshot,
    neighbors: &[AgentSnapshot],
    rule: SpeedRule,
    filter: &mut HeadingFilter,
) -> Result<ControlOutput> {
    let position = me.position();
    let destination = me
        .destination
        .ok_or_else(|| Error::InvalidParameter(format!("agent {} has no destination", me.id)))?;
    let barrier_neighbors: Vec<BarrierNeighbor> = neighbors
        .iter()
        .map(|n| BarrierNeighbor {
            id: n.id,
            position: n.position(),
        })
        .collect();
    let barrier = evaluate_at(
        &position,
        &destination,
        &barrier_neighbors,
        ctx.world,
        ctx.barrier,
    )?;

    let (phi, zero_gradient) = match desired_heading(&barrier.gradient) {
        Ok(phi) => (phi, false),
        Err(Error::ZeroGradient { .. }) => {
            let held = if filter.is_empty() {
                me.state.theta
            } else {
                filter.phi
            };
            (held, true)
        }
        Err(e) => return Err(e),
    };

    let mut speed = match rule {
        SpeedRule::Goal => {
            let u = leader_speed(&position, &destination, &ctx.gains);
            SpeedDecision {
                u,
                u_goal: u,
                limiting: None,
                degenerate: Vec::new(),
            }
        }
        SpeedRule::Matching(candidates) => {
            let heading = match ctx.conflict_heading {
                ConflictHeading::Desired => phi,
                ConflictHeading::Actual => me.state.theta,
            };
            follower_speed(me, heading, candidates, &ctx.gains, ctx.world)
        }
    };
    if zero_gradient {
        speed.u = 0.0;
    }

    filter.update(phi, speed.u);
    let (omega, degenerate_steering) = match ctx.steering {
        SteeringLaw::Tracking => (
            tracking_omega(&me.state, filter, speed.u, &ctx.gains, ctx.vehicle, ctx.dt),
            false,
        ),
        SteeringLaw::ClosedForm => {
            match bicycle_omega(&me.state, filter, speed.u, &ctx.gains, ctx.vehicle) {
                Ok(w) => (w, false),
                Err(Error::DegenerateDenominator { .. }) => (0.0, true),
                Err(e) => return Err(e),
            }
        }
    };

    Ok(ControlOutput {
        command: ControlCommand::new(speed.u, omega),
        phi,
        barrier,
        speed,
        zero_gradient,
        degenerate_steering,
    })
}

/// Leader with no misbehaving agents around: connectivity-only barrier and
/// goal speed. Other agents are ignored.
pub fn leader_control(
    ctx: &ControlContext,
    me: &AgentSnapshot,
    filter: &mut HeadingFilter,
) -> Result<ControlOutput> {
    drive(ctx, me, &[], SpeedRule::Goal, filter)
}

/// Follower: every sensed agent enters the barrier and the speed rule.
pub fn follower_control(
    ctx: &ControlContext,
    me: &AgentSnapshot,
    others: &[AgentSnapshot],
    filter: &mut HeadingFilter,
) -> Result<ControlOutput> {
    let neighbors = sensed(me, others, ctx.world, false);
    drive(ctx, me, &neighbors, SpeedRule::Matching(&neighbors), filter)
}

/// Leader that treats sensed misbehaving agents as moving obstacles and
/// ignores everyone else.
pub fn leader_control_with_misbehaving(
    ctx: &ControlContext,
    me: &AgentSnapshot,
    others: &[AgentSnapshot],
    filter: &mut HeadingFilter,
) -> Result<ControlOutput> {
    let neighbors = sensed(me, others, ctx.world, true);
    drive(ctx, me, &neighbors, SpeedRule::Matching(&neighbors), filter)
}

/// Scripted motion of an agent whose controller has failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MisbehaviorSpec {
    /// Constant-speed shuttle between two points, starting at `a`.
    WaypointOscillator { a: Vec2, b: Vec2, speed: f64 },
    /// Uniform circular motion; `phase` is the angle at t = 0.
    CircularOrbit {
        center: Vec2,
        radius: f64,
        angular_speed: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Constant-speed walk with diffusing heading, reflected at the edge of the
    /// connectivity disc. Starts from the agent's initial state.
    RandomWalk {
        seed: u64,
        speed: f64,
        heading_diffusion: f64,
    },
}

impl MisbehaviorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match self {
            MisbehaviorSpec::WaypointOscillator { a, b, speed } => {
                if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
                    return bad("oscillator waypoints must be finite");
                }
                if !(*speed >= 0.0 && speed.is_finite()) {
                    return bad("oscillator speed must be >= 0");
                }
            }
            MisbehaviorSpec::CircularOrbit {
                center,
                radius,
                angular_speed,
                phase,
            } => {
                if !(center.iter().all(|v| v.is_finite())
                    && angular_speed.is_finite()
                    && phase.is_finite())
                {
                    return bad("orbit parameters must be finite");
                }
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return bad("orbit radius must be >= 0");
                }
            }
            MisbehaviorSpec::RandomWalk {
                speed,
                heading_diffusion,
                ..
            } => {
                if !(*speed >= 0.0 && speed.is_finite()) {
                    return bad("random walk speed must be >= 0");
                }
                if !(*heading_diffusion >= 0.0 && heading_diffusion.is_finite()) {
                    return bad("random walk heading diffusion must be >= 0");
                }
            }
        }
        Ok(())
    }
}

/// Position, velocity and heading of a scripted agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
}

impl MotionSample {
    fn new(position: Vec2, velocity: Vec2, fallback_heading: f64) -> Self {
        let heading = if velocity.norm() > 0.0 {
            velocity.y.atan2(velocity.x)
        } else {
            fallback_heading
        };
        Self {
            position,
            velocity,
            heading,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn as_state(&self) -> AgentState {
        AgentState::new(self.position.x, self.position.y, self.heading, 0.0)
    }
}

/// Internal step of the random walk, independent of the simulation step.
pub const RANDOM_WALK_STEP: f64 = 0.01;

/// A misbehaviour spec bound to a start state, ready to be sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct MisbehaviorTrack {
    spec: MisbehaviorSpec,
    start: AgentState,
    /// Knots of the random walk, spaced by [`RANDOM_WALK_STEP`].
    knots: Vec<Vec2>,
}

impl MisbehaviorTrack {
    /// Binds `spec` to `start`. Random walks are generated up to `horizon`
    /// seconds and held at their last point afterwards; `seed_offset` is added
    /// to the walk's own seed.
    pub fn new(
        spec: &MisbehaviorSpec,
        start: &AgentState,
        world: &WorldConfig,
        horizon: f64,
        seed_offset: u64,
    ) -> Self {
        let knots = match spec {
            MisbehaviorSpec::RandomWalk {
                seed,
                speed,
                heading_diffusion,
            } => random_walk_knots(
                start,
                world,
                *speed,
                *heading_diffusion,
                seed.wrapping_add(seed_offset),
                horizon,
            ),
            _ => Vec::new(),
        };
        Self {
            spec: spec.clone(),
            start: *start,
            knots,
        }
    }

    pub fn sample(&self, t: f64) -> MotionSample {
        match &self.spec {
            MisbehaviorSpec::WaypointOscillator { a, b, speed } => {
                let leg = b - a;
                let length = leg.norm();
                if length == 0.0 || *speed == 0.0 {
                    return MotionSample::new(*a, Vec2::zeros(), self.start.theta);
                }
                let dir = leg / length;
                let travelled = (t * speed).rem_euclid(2.0 * length);
                if travelled <= length {
                    MotionSample::new(a + dir * travelled, dir * *speed, self.start.theta)
                } else {
                    MotionSample::new(
                        b - dir * (travelled - length),
                        -dir * *speed,
                        self.start.theta,
                    )
                }
            }
            MisbehaviorSpec::CircularOrbit {
                center,
                radius,
                angular_speed,
                phase,
            } => {
                let angle = angular_speed * t + phase;
                let (s, c) = angle.sin_cos();
                MotionSample::new(
                    center + *radius * Vec2::new(c, s),
                    *radius * *angular_speed * Vec2::new(-s, c),
                    self.start.theta,
                )
            }
            MisbehaviorSpec::RandomWalk { .. } => {
                let last = self.knots.len() - 1;
                let pos = (t / RANDOM_WALK_STEP).max(0.0);
                let i = (pos.floor() as usize).min(last);
                if i == last {
                    let v = if last > 0 {
                        (self.knots[last] - self.knots[last - 1]) / RANDOM_WALK_STEP
                    } else {
                        Vec2::zeros()
                    };
                    let heading = if v.norm() > 0.0 {
                        v.y.atan2(v.x)
                    } else {
                        self.start.theta
                    };
                    return MotionSample {
                        position: self.knots[last],
                        velocity: Vec2::zeros(),
                        heading,
                    };
                }
                let frac = pos - i as f64;
                let seg = self.knots[i + 1] - self.knots[i];
                MotionSample::new(
                    self.knots[i] + seg * frac,
                    seg / RANDOM_WALK_STEP,
                    self.start.theta,
                )
            }
        }
    }
}

fn random_walk_knots(
    start: &AgentState,
    world: &WorldConfig,
    speed: f64,
    diffusion: f64,
    seed: u64,
    horizon: f64,
) -> Vec<Vec2> {
    let steps = (horizon.max(0.0) / RANDOM_WALK_STEP).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = world.effective_radius;
    // uniform noise with unit variance
    let spread = 3f64.sqrt();
    let kick = diffusion * RANDOM_WALK_STEP.sqrt();
    let mut heading = start.theta;
    let mut p = start.position();
    let mut knots = Vec::with_capacity(steps + 1);
    knots.push(p);
    for _ in 0..steps {
        heading += kick * rng.random_range(-spread..spread);
        let mut next = p + speed * RANDOM_WALK_STEP * Vec2::new(heading.cos(), heading.sin());
        let offset = next - world.center;
        let r = offset.norm();
        if r > limit {
            let normal = offset / r;
            next = world.center + normal * (2.0 * limit - r).max(0.0);
            let dir = Vec2::new(heading.cos(), heading.sin());
            let reflected = dir - 2.0 * dir.dot(&normal) * normal;
            heading = reflected.y.atan2(reflected.x);
        }
        heading = wrap_angle(heading);
        p = next;
        knots.push(p);
    }
    knots
}

/// Samples `spec` at time `t` for an agent that started at `start`.
pub fn misbehaving_position(
    spec: &MisbehaviorSpec,
    start: &AgentState,
    world: &WorldConfig,
    t: f64,
) -> MotionSample {
    MisbehaviorTrack::new(spec, start, world, t + RANDOM_WALK_STEP, 0).sample(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierParams;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn gains() -> ControllerGains {
        ControllerGains::new(1.0, 2.3).unwrap()
    }

    fn snap(id: u32, kind: AgentKind, x: f64, y: f64, theta: f64, speed: f64) -> AgentSnapshot {
        AgentSnapshot {
            id,
            kind,
            state: AgentState::new(x, y, theta, 0.0),
            destination: None,
            speed,
        }
    }

    #[test]
    fn heading_examples() {
        assert_abs_diff_eq!(desired_heading(&Vec2::new(-1.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(desired_heading(&Vec2::new(0.0, -1.0)).unwrap(), FRAC_PI_2);
        assert_abs_diff_eq!(
            desired_heading(&Vec2::new(1.0, 1.0)).unwrap(),
            -3.0 * PI / 4.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            desired_heading(&Vec2::new(1e-13, 0.0)),
            Err(Error::ZeroGradient { .. })
        ));
    }

    #[test]
    fn leader_speed_examples() {
        let g = gains();
        let p = Vec2::new(1.0, 2.0);
        assert_eq!(leader_speed(&p, &p, &g), 0.0);
        assert_abs_diff_eq!(
            leader_speed(&Vec2::new(50.0, 0.0), &Vec2::zeros(), &g),
            1.0,
            epsilon = 1e-12
        );
        let g2 = ControllerGains::new(2.0, 2.3).unwrap();
        assert_abs_diff_eq!(
            leader_speed(&Vec2::new(0.0, 1.0), &Vec2::zeros(), &g2),
            1.52318,
            epsilon = 1e-5
        );
    }

    fn filter_with(phi: f64, phi_dot: f64, phi_ddot: f64, u_dot: f64) -> HeadingFilter {
        HeadingFilter {
            phi,
            phi_dot,
            phi_ddot,
            u_prev: 0.0,
            u_dot,
            phi_rate: phi_dot,
            samples: 3,
            dt: 0.01,
        }
    }

    #[test]
    fn closed_form_examples() {
        let g = gains();
        let p = VehicleParams::reference();
        let s = AgentState::new(0.0, 0.0, 0.4, 0.3);
        let w = bicycle_omega(&s, &filter_with(0.4, 0.0, 0.0, 0.0), 0.8, &g, &p).unwrap();
        assert_abs_diff_eq!(w, -2.3 * 0.3f64.tan(), epsilon = 1e-12);

        let s = AgentState::new(0.0, 0.0, 0.4, 0.0);
        let w = bicycle_omega(&s, &filter_with(0.4, 0.0, 0.0, 0.0), 0.8, &g, &p).unwrap();
        assert_eq!(w, 0.0);

        assert!(matches!(
            bicycle_omega(&s, &filter_with(0.4, 0.0, 0.0, 0.0), 0.0, &g, &p),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn closed_form_ignores_static_heading_error() {
        // straight wheel, no derivative information: the closed form does not turn
        let s = AgentState::new(0.0, 0.0, 0.0, 0.0);
        let w = bicycle_omega(
            &s,
            &filter_with(1.0, 0.0, 0.0, 0.0),
            1.0,
            &gains(),
            &VehicleParams::reference(),
        )
        .unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn tracking_reproduces_unicycle_turn_rate() {
        let g = gains();
        let p = VehicleParams::reference();
        let dt = 0.01;
        let s = AgentState::new(0.0, 0.0, 0.5, 0.1);
        let f = filter_with(0.2, 0.05, 0.0, 0.0);
        let u = 0.7;
        let w = tracking_omega(&s, &f, u, &g, &p, dt);
        let next = crate::model::bicycle_step(&s, &ControlCommand::new(u, w), &p, dt).unwrap();
        let expected = 0.5 + (-2.3 * (0.5 - 0.2) + 0.05) * dt;
        assert_abs_diff_eq!(next.theta, expected, epsilon = 1e-12);
        assert_eq!(tracking_omega(&s, &f, 0.0, &g, &p, dt), 0.0);
    }

    #[test]
    fn tracking_respects_steering_limit() {
        let g = gains();
        let p = VehicleParams::reference();
        let s = AgentState::new(0.0, 0.0, 0.0, 0.0);
        let f = filter_with(PI, 0.0, 0.0, 0.0);
        let w = tracking_omega(&s, &f, 1e-6, &g, &p, 0.01);
        assert_abs_diff_eq!(w.abs() * 0.01, STEERING_LIMIT, epsilon = 1e-12);
    }

    #[test]
    fn filter_backward_differences() {
        let mut f = HeadingFilter::new(0.1);
        f.update(0.0, 1.0);
        assert_eq!((f.phi_dot, f.phi_ddot, f.u_dot), (0.0, 0.0, 0.0));
        f.update(0.1, 1.5);
        assert_abs_diff_eq!(f.phi_dot, 1.0, epsilon = 1e-12);
        assert_eq!(f.phi_ddot, 0.0);
        assert_abs_diff_eq!(f.u_dot, 5.0, epsilon = 1e-12);
        f.update(0.3, 1.5);
        assert_abs_diff_eq!(f.phi_dot, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.phi_ddot, 10.0, epsilon = 1e-9);
        assert_eq!(f.u_dot, 0.0);
        // wrap across ±π
        let mut f = HeadingFilter::new(0.1);
        f.update(PI - 0.05, 0.0);
        f.update(-PI + 0.05, 0.0);
        assert_abs_diff_eq!(f.phi_dot, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn smoothed_rate_preserves_total_turn() {
        let dt = 0.01;
        let mut f = HeadingFilter::new(dt);
        f.update(0.0, 1.0);
        f.update(1.0, 1.0);
        let alpha = dt / (RATE_SMOOTHING + dt);
        assert_abs_diff_eq!(f.phi_rate, alpha * 100.0, epsilon = 1e-9);
        let mut turned = f.phi_rate * dt;
        for _ in 0..2000 {
            f.update(1.0, 1.0);
            turned += f.phi_rate * dt;
        }
        assert_abs_diff_eq!(turned, 1.0, epsilon = 1e-9);
        assert_eq!(f.phi_dot, 0.0);
    }

    #[test]
    fn conflict_set_examples() {
        let w = WorldConfig::reference();
        let j = Vec2::new(0.0, 0.0);
        // neighbour west of j, j heading east: moving away
        let west = [snap(2, AgentKind::Follower, -1.6, 0.0, 0.0, 1.0)];
        assert!(conflict_set(&j, 0.0, &west, &w).is_empty());
        let east = [snap(3, AgentKind::Follower, 1.6, 0.0, 0.0, 1.0)];
        assert_eq!(conflict_set(&j, 0.0, &east, &w), vec![3]);
        let far = [snap(4, AgentKind::Follower, 1.7, 0.0, 0.0, 1.0)];
        assert!(conflict_set(&j, 0.0, &far, &w).is_empty());
        assert!(conflict_set(&j, 0.0, &[], &w).is_empty());
    }

    fn follower_at(x: f64, dest: Vec2) -> AgentSnapshot {
        AgentSnapshot {
            destination: Some(dest),
            ..snap(1, AgentKind::Follower, x, 0.0, 0.0, 0.0)
        }
    }

    #[test]
    fn follower_speed_branches() {
        let w = WorldConfig::reference();
        let g = gains();
        let me = follower_at(0.0, Vec2::new(5.0, 0.0));
        let u_goal = g.k * 5f64.tanh();

        let none = follower_speed(&me, 0.0, &[], &g, &w);
        assert_abs_diff_eq!(none.u, u_goal);
        assert_eq!(none.limiting, None);

        let at_rc = [snap(2, AgentKind::Follower, w.safety_radius, 0.0, 0.0, 0.3)];
        let d = follower_speed(&me, 0.0, &at_rc, &g, &w);
        assert_abs_diff_eq!(d.u, u_goal, epsilon = 1e-12);
        assert_eq!(d.limiting, Some(2));

        let at_ds = [snap(2, AgentKind::Follower, w.separation, 0.0, 0.0, 0.3)];
        let d = follower_speed(&me, 0.0, &at_ds, &g, &w);
        assert_abs_diff_eq!(d.u, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn follower_speed_clamps_to_range() {
        let w = WorldConfig::reference();
        let g = gains();
        let me = follower_at(0.0, Vec2::new(5.0, 0.0));
        // oncoming neighbour: matched speed negative
        let oncoming = [snap(2, AgentKind::Misbehaving, 1.5, 0.0, PI, 1.0)];
        assert_eq!(follower_speed(&me, 0.0, &oncoming, &g, &w).u, 0.0);
        // neighbour fleeing fast ahead: matched speed above cap
        let fast = [snap(2, AgentKind::Misbehaving, 1.5, 0.0, 0.0, 10.0)];
        assert_eq!(follower_speed(&me, 0.0, &fast, &g, &w).u, g.max_speed());
    }

    #[test]
    fn follower_speed_continuous_at_safety_radius() {
        let w = WorldConfig::reference();
        let g = gains();
        let me = follower_at(0.0, Vec2::new(5.0, 0.0));
        let inside = [snap(
            2,
            AgentKind::Follower,
            w.safety_radius - 1e-9,
            0.0,
            0.0,
            0.1,
        )];
        let outside = [snap(
            2,
            AgentKind::Follower,
            w.safety_radius + 1e-9,
            0.0,
            0.0,
            0.1,
        )];
        let a = follower_speed(&me, 0.0, &inside, &g, &w).u;
        let b = follower_speed(&me, 0.0, &outside, &g, &w).u;
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn matching_degenerate_is_flagged() {
        let w = WorldConfig::reference();
        let g = gains();
        let me = follower_at(0.0, Vec2::new(5.0, 0.0));
        // neighbour due north, heading a hair north of east: J < 0 but tiny
        let n = [snap(2, AgentKind::Follower, 0.0, 1.6, 0.0, 0.5)];
        let d = follower_speed(&me, 1e-10, &n, &g, &w);
        assert_eq!(d.degenerate, vec![2]);
        assert_eq!(d.limiting, Some(2));
        let d = follower_speed(&me, 0.1, &n, &g, &w);
        assert!(d.degenerate.is_empty());
    }

    fn context<'a>(
        world: &'a WorldConfig,
        vehicle: &'a VehicleParams,
        barrier: &'a BarrierParams,
    ) -> ControlContext<'a> {
        ControlContext {
            world,
            vehicle,
            barrier,
            gains: gains(),
            dt: 0.01,
            steering: SteeringLaw::Tracking,
            conflict_heading: ConflictHeading::Actual,
        }
    }

    #[test]
    fn leader_at_destination_stops() {
        let w = WorldConfig::reference();
        let v = VehicleParams::reference();
        let b = BarrierParams::new(1.0, &w).unwrap();
        let ctx = context(&w, &v, &b);
        let me = AgentSnapshot {
            destination: Some(Vec2::new(2.0, 2.0)),
            ..snap(1, AgentKind::Leader, 2.0, 2.0, 0.3, 0.0)
        };
        let mut f = HeadingFilter::new(0.01);
        let out = leader_control(&ctx, &me, &mut f).unwrap();
        assert_eq!(out.command.u, 0.0);
        assert!(out.command.omega.is_finite());
        assert!(out.zero_gradient);
        assert_eq!(out.phi, 0.3);
    }

    #[test]
    fn leader_heading_east_goes_straight() {
        let w = WorldConfig::reference();
        let v = VehicleParams::reference();
        let b = BarrierParams::new(1.0, &w).unwrap();
        let ctx = context(&w, &v, &b);
        let me = AgentSnapshot {
            destination: Some(Vec2::new(5.0, 0.0)),
            ..snap(1, AgentKind::Leader, 0.0, 0.0, 0.0, 0.0)
        };
        let mut f = HeadingFilter::new(0.01);
        let out = leader_control(&ctx, &me, &mut f).unwrap();
        assert!(out.command.u > 0.0);
        assert_abs_diff_eq!(out.phi, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.command.omega, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn leader_near_boundary_heads_inward() {
        let w = WorldConfig::reference();
        let v = VehicleParams::reference();
        let b = BarrierParams::new(1.0, &w).unwrap();
        let ctx = context(&w, &v, &b);
        for (x, y, dx, dy) in [
            (11.2, 0.0, 0.0, 5.0),
            (0.0, -11.1, 3.0, -3.0),
            (-7.9, 7.9, -2.0, 5.0),
        ] {
            let me = AgentSnapshot {
                destination: Some(Vec2::new(dx, dy)),
                ..snap(1, AgentKind::Leader, x, y, 0.0, 0.0)
            };
            let out = leader_control(&ctx, &me, &mut HeadingFilter::new(0.01)).unwrap();
            let inward = -Vec2::new(x, y).normalize();
            let h = Vec2::new(out.phi.cos(), out.phi.sin());
            assert!(h.dot(&inward) > 0.0, "phi {} at ({x},{y})", out.phi);
        }
    }

    #[test]
    fn leader_ignores_followers_but_not_misbehaving() {
        let w = WorldConfig::reference();
        let v = VehicleParams::reference();
        let b = BarrierParams::new(1.0, &w).unwrap();
        let ctx = context(&w, &v, &b);
        let me = AgentSnapshot {
            destination: Some(Vec2::new(5.0, 0.0)),
            ..snap(1, AgentKind::Leader, 0.0, 0.0, 0.0, 0.0)
        };
        let follower = snap(2, AgentKind::Follower, 1.6, 0.1, PI, 0.5);
        let plain = leader_control(&ctx, &me, &mut HeadingFilter::new(0.01)).unwrap();
        let with_f =
            leader_control_with_misbehaving(&ctx, &me, &[follower], &mut HeadingFilter::new(0.01))
                .unwrap();
        assert_eq!(plain.command, with_f.command);

        let rogue = snap(3, AgentKind::Misbehaving, 1.6, 0.1, PI, 0.5);
        let with_m =
            leader_control_with_misbehaving(&ctx, &me, &[rogue], &mut HeadingFilter::new(0.01))
                .unwrap();
        assert!(with_m.command.u < plain.command.u);
        assert_eq!(with_m.speed.limiting, Some(3));
    }

    #[test]
    fn misbehaving_beyond_safety_radius_only_shapes_barrier() {
        let w = WorldConfig::reference();
        let v = VehicleParams::reference();
        let b = BarrierParams::new(1.0, &w).unwrap();
        let ctx = context(&w, &v, &b);
        let me = AgentSnapshot {
            destination: Some(Vec2::new(5.0, 0.0)),
            ..snap(1, AgentKind::Leader, 0.0, 0.0, 0.0, 0.0)
        };
        let rogue = snap(3, AgentKind::Misbehaving, 1.75, 0.0, PI, 0.5);
        let plain = leader_control(&ctx, &me, &mut HeadingFilter::new(0.01)).unwrap();
        let out =
            leader_control_with_misbehaving(&ctx, &me, &[rogue], &mut HeadingFilter::new(0.01))
                .unwrap();
        assert_eq!(out.command.u, plain.command.u);
        assert!(out.barrier.value > plain.barrier.value);
    }

    #[test]
    fn isolated_follower_matches_leader() {
        let w = WorldConfig::reference();
        let v = VehicleParams::reference();
        let b = BarrierParams::new(1.0, &w).unwrap();
        let ctx = context(&w, &v, &b);
        let me = AgentSnapshot {
            destination: Some(Vec2::new(-3.0, 4.0)),
            ..snap(2, AgentKind::Follower, 1.0, 1.0, FRAC_PI_4, 0.0)
        };
        let far = snap(5, AgentKind::Follower, 8.0, 1.0, 0.0, 1.0);
        let a = leader_control(&ctx, &me, &mut HeadingFilter::new(0.01)).unwrap();
        let b = follower_control(&ctx, &me, &[far], &mut HeadingFilter::new(0.01)).unwrap();
        assert_eq!(a.command, b.command);
        assert_eq!(a.phi, b.phi);
    }

    #[test]
    fn orbit_and_oscillator_samples() {
        let w = WorldConfig::reference();
        let start = AgentState::new(0.0, 0.0, 0.0, 0.0);
        let orbit = MisbehaviorSpec::CircularOrbit {
            center: Vec2::zeros(),
            radius: 2.0,
            angular_speed: 1.0,
            phase: 0.0,
        };
        let s = misbehaving_position(&orbit, &start, &w, 0.0);
        assert_abs_diff_eq!(s.position, Vec2::new(2.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.velocity, Vec2::new(0.0, 2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.heading, FRAC_PI_2, epsilon = 1e-15);

        let osc = MisbehaviorSpec::WaypointOscillator {
            a: Vec2::zeros(),
            b: Vec2::new(4.0, 0.0),
            speed: 1.0,
        };
        let s = misbehaving_position(&osc, &start, &w, 2.0);
        assert_abs_diff_eq!(s.position, Vec2::new(2.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.velocity, Vec2::new(1.0, 0.0), epsilon = 1e-15);
        let s = misbehaving_position(&osc, &start, &w, 6.0);
        assert_abs_diff_eq!(s.position, Vec2::new(2.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.velocity, Vec2::new(-1.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.heading.abs(), PI, epsilon = 1e-15);
    }

    #[test]
    fn oscillator_velocity_is_derivative() {
        let w = WorldConfig::reference();
        let start = AgentState::new(0.0, 0.0, 0.0, 0.0);
        let osc = MisbehaviorSpec::WaypointOscillator {
            a: Vec2::new(-1.0, 2.0),
            b: Vec2::new(3.0, -1.0),
            speed: 0.7,
        };
        let track = MisbehaviorTrack::new(&osc, &start, &w, 0.0, 0);
        for k in 0..200 {
            let t = 0.137 * k as f64;
            let h = 1e-7;
            let fd = (track.sample(t + h).position - track.sample(t - h).position) / (2.0 * h);
            let v = track.sample(t).velocity;
            // skip the turning points where the derivative is one-sided
            if (fd - v).norm() > 1e-5 {
                let period = 2.0 * 5.0 / 0.7;
                let phase = (t / period).fract() * period;
                assert!(
                    phase < 1e-5 || (phase - period / 2.0).abs() < 1e-5 || (period - phase) < 1e-5
                );
            }
        }
    }

    #[test]
    fn stationary_oscillator() {
        let w = WorldConfig::reference();
        let start = AgentState::new(3.0, 3.0, 0.4, 0.0);
        let obstacle = MisbehaviorSpec::WaypointOscillator {
            a: Vec2::new(3.0, 3.0),
            b: Vec2::new(3.0, 3.0),
            speed: 0.0,
        };
        let s = misbehaving_position(&obstacle, &start, &w, 12.0);
        assert_eq!(s.position, Vec2::new(3.0, 3.0));
        assert_eq!(s.speed(), 0.0);
        assert_eq!(s.heading, 0.4);
    }

    #[test]
    fn random_walk_is_reproducible_and_bounded() {
        let w = WorldConfig::reference();
        let start = AgentState::new(10.0, 0.0, 0.0, 0.0);
        let spec = MisbehaviorSpec::RandomWalk {
            seed: 7,
            speed: 1.5,
            heading_diffusion: 2.0,
        };
        let a = MisbehaviorTrack::new(&spec, &start, &w, 60.0, 0);
        let b = MisbehaviorTrack::new(&spec, &start, &w, 60.0, 0);
        let c = MisbehaviorTrack::new(&spec, &start, &w, 60.0, 1);
        let mut differs = false;
        for k in 0..6000 {
            let t = k as f64 * 0.01;
            let sa = a.sample(t);
            assert_eq!(sa.position, b.sample(t).position);
            assert!(w.center_distance(&sa.position) <= w.effective_radius + 1e-12);
            differs |= sa.position != c.sample(t).position;
        }
        assert!(differs);
        // pure sampling agrees with the precomputed track
        let s = misbehaving_position(&spec, &start, &w, 12.345);
        assert_abs_diff_eq!(s.position, a.sample(12.345).position, epsilon = 1e-12);
        assert_abs_diff_eq!(a.sample(7.0).speed(), 1.5, epsilon = 1e-9);
    }
}

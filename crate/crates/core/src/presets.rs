//! Built-in scenarios: the canonical regression instance and seeded
//! generators for randomized property runs.

use std::f64::consts::{PI, TAU};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::ControllerGains;
use crate::error::Result;
use crate::io::parse_scenario;
use crate::model::{AgentDescriptor, AgentKind, AgentState, Vec2, VehicleParams, WorldConfig};
use crate::sim::Scenario;

/// Source of the canonical 12-agent scenario.
pub const CANONICAL_TOML: &str = include_str!("../scenarios/canonical.toml");

pub fn canonical() -> Scenario {
    parse_scenario(CANONICAL_TOML).expect("bundled canonical scenario is valid")
}

fn controllable(id: u32, kind: AgentKind, start: Vec2, theta: f64, dest: Vec2) -> AgentDescriptor {
    AgentDescriptor {
        id,
        kind,
        initial_state: AgentState::at(start, theta),
        destination: Some(dest),
        misbehavior: None,
    }
}

fn bearing(from: Vec2, to: Vec2) -> f64 {
    let d = to - from;
    d.y.atan2(d.x)
}

/// Two followers on a collision course with swapped, slightly offset
/// destinations, and a leader parked well away from both.
pub fn collision_course(seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = WorldConfig::reference();
    let axis = rng.random_range(0.0..TAU);
    let e = Vec2::new(axis.cos(), axis.sin());
    let n = Vec2::new(-e.y, e.x);
    let mid = Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let half = rng.random_range(3.0..5.0);
    let offset_a = rng.random_range(-0.5..0.5);
    let offset_b = rng.random_range(-0.5..0.5);

    let start_a = mid - half * e;
    let start_b = mid + half * e + offset_b * n;
    let dest_a = mid + half * e + offset_a * n;
    let dest_b = mid - half * e + (offset_a + offset_b) * 0.5 * n + 0.2 * e;
    let jitter = 0.3;
    let theta_a = bearing(start_a, dest_a) + rng.random_range(-jitter..jitter);
    let theta_b = bearing(start_b, dest_b) + rng.random_range(-jitter..jitter);

    // the leader parks on the far side of the centre from the encounter
    let away = if mid.norm() > 1e-6 {
        -mid.normalize()
    } else {
        n
    };
    let parked = world.center + 8.5 * away;
    let leader = AgentDescriptor {
        initial_state: AgentState::at(parked, 0.0),
        ..controllable(1, AgentKind::Leader, parked, 0.0, parked)
    };
    let gains = ControllerGains::new(1.0, 2.3)?;
    Scenario::new(
        world,
        VehicleParams::reference(),
        vec![
            leader,
            controllable(2, AgentKind::Follower, start_a, theta_a, dest_a),
            controllable(3, AgentKind::Follower, start_b, theta_b, dest_b),
        ],
        gains,
        60.0,
    )
}

/// Two followers that start inside each other's safety region, roughly facing
/// each other, with destinations on the far side of the other agent.
pub fn close_encounter(seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = WorldConfig::reference();
    let gap = rng.random_range(world.separation + 0.05..world.safety_radius - 0.01);
    let axis = rng.random_range(0.0..TAU);
    let e = Vec2::new(axis.cos(), axis.sin());
    let n = Vec2::new(-e.y, e.x);
    let a = -0.5 * gap * e;
    let b = 0.5 * gap * e;
    let jitter = 0.6;
    let theta_a = axis + rng.random_range(-jitter..jitter);
    let theta_b = axis + PI + rng.random_range(-jitter..jitter);
    let parked = world.center + 8.0 * n;
    Scenario::new(
        world,
        VehicleParams::reference(),
        vec![
            controllable(1, AgentKind::Leader, parked, 0.0, parked),
            controllable(2, AgentKind::Follower, a, theta_a, a + 6.0 * e),
            controllable(3, AgentKind::Follower, b, theta_b, b - 6.0 * e + 0.3 * n),
        ],
        ControllerGains::new(1.0, 2.3)?,
        60.0,
    )
}

/// A leader and three followers, each working in its own quarter of the disc,
/// with destinations close to the edge of the usable disc and arbitrary
/// initial headings.
pub fn boundary_destinations(seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = WorldConfig::reference();
    let base = rng.random_range(0.0..TAU);
    let mut agents = Vec::new();
    for k in 0..4u32 {
        let sector = base + k as f64 * PI / 2.0;
        let a = sector + rng.random_range(-0.5..0.5);
        let r_dest = rng.random_range(10.3..11.1);
        let dest = world.center + r_dest * Vec2::new(a.cos(), a.sin());
        let b = sector + rng.random_range(-0.4..0.4);
        let r_start = rng.random_range(3.0..11.0);
        let start = world.center + r_start * Vec2::new(b.cos(), b.sin());
        let theta = rng.random_range(-PI..PI);
        let kind = if k == 0 {
            AgentKind::Leader
        } else {
            AgentKind::Follower
        };
        agents.push(controllable(k + 1, kind, start, theta, dest));
    }
    Scenario::new(
        world,
        VehicleParams::reference(),
        agents,
        ControllerGains::new(1.0, 2.3)?,
        60.0,
    )
}

/// A single leader with a destination `distance` metres from its start and an
/// initial heading error of `heading_error` radians.
pub fn lone_leader(distance: f64, heading_error: f64) -> Result<Scenario> {
    let start = Vec2::new(-distance / 2.0, 0.0);
    let dest = Vec2::new(distance / 2.0, 0.0);
    Scenario::new(
        WorldConfig::reference(),
        VehicleParams::reference(),
        vec![controllable(
            1,
            AgentKind::Leader,
            start,
            heading_error,
            dest,
        )],
        ControllerGains::new(1.0, 2.3)?,
        40.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_has_expected_population() {
        let sc = canonical();
        assert_eq!(sc.agents.len(), 12);
        assert_eq!(sc.controllable().count(), 9);
        assert_eq!(sc.gains.lambda, 2.3);
        assert_eq!(sc.world, WorldConfig::reference());
    }

    #[test]
    fn generators_are_valid_and_seeded() {
        for seed in 0..50 {
            assert_eq!(
                collision_course(seed).unwrap(),
                collision_course(seed).unwrap()
            );
            boundary_destinations(seed).unwrap();
            close_encounter(seed).unwrap();
        }
        assert_ne!(collision_course(1).unwrap(), collision_course(2).unwrap());
    }
}

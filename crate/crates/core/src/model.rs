//! Vehicle and world types plus the kinematic bicycle integration step.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::control::MisbehaviorSpec;
use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Guard band (rad) kept between |γ| and π/2.
pub const STEERING_GUARD: f64 = 0.01;

/// Default integration step in seconds.
pub const DEFAULT_DT: f64 = 0.01;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Euclidean distance between two points.
pub fn distance(a: &Vec2, b: &Vec2) -> f64 {
    (a - b).norm()
}

/// Configuration of one vehicle: rear-axle position, frame heading and front-wheel angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, theta: f64, gamma: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            gamma: wrap_angle(gamma),
        }
    }

    pub fn at(position: Vec2, theta: f64) -> Self {
        Self::new(position.x, position.y, theta, 0.0)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Unit vector along the frame heading.
    pub fn heading(&self) -> Vec2 {
        Vec2::new(self.theta.cos(), self.theta.sin())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.gamma.is_finite()
    }
}

/// Rear-wheel speed and front-wheel steering rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub u: f64,
    pub omega: f64,
}

impl ControlCommand {
    pub const STOP: ControlCommand = ControlCommand { u: 0.0, omega: 0.0 };

    pub fn new(u: f64, omega: f64) -> Self {
        Self { u, omega }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Distance between front and rear wheel.
    pub wheelbase: f64,
    /// Radius of the disc enclosing the vehicle body.
    pub body_radius: f64,
}

impl VehicleParams {
    pub fn new(wheelbase: f64, body_radius: f64) -> Result<Self> {
        if !(wheelbase > 0.0 && wheelbase.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wheelbase must be > 0, got {wheelbase}"
            )));
        }
        if !(body_radius > 0.0 && body_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "body radius must be > 0, got {body_radius}"
            )));
        }
        Ok(Self {
            wheelbase,
            body_radius,
        })
    }

    /// B = 0.25 m, r_a = 0.75 m.
    pub fn reference() -> Self {
        Self {
            wheelbase: 0.25,
            body_radius: 0.75,
        }
    }
}

/// Shared world geometry: the connectivity disc and the per-agent interaction radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub center: Vec2,
    /// Radius of the connectivity disc.
    pub connectivity_radius: f64,
    /// Connectivity radius shrunk by one body radius; agent centres must stay within it.
    pub effective_radius: f64,
    /// Minimum allowed centre-to-centre distance.
    pub separation: f64,
    pub sensing_radius: f64,
    /// Collision terms are fully weighted inside this radius.
    pub avoidance_radius: f64,
    /// Followers switch to conflict speed control inside this radius.
    pub safety_radius: f64,
}

impl WorldConfig {
    pub fn new(
        center: Vec2,
        connectivity_radius: f64,
        separation: f64,
        sensing_radius: f64,
        avoidance_radius: f64,
        safety_radius: f64,
        body_radius: f64,
    ) -> Result<Self> {
        let all = [
            center.x,
            center.y,
            connectivity_radius,
            separation,
            sensing_radius,
            avoidance_radius,
            safety_radius,
            body_radius,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "world parameters must be finite".into(),
            ));
        }
        // R_c is allowed on either side of R_z and R_s.
        if !(0.0 < separation && separation < avoidance_radius && avoidance_radius < sensing_radius)
        {
            return Err(Error::InvalidParameter(format!(
                "radii must satisfy 0 < d_s < R_z < R_s, got d_s={separation}, R_z={avoidance_radius}, R_s={sensing_radius}"
            )));
        }
        if safety_radius.is_nan() || safety_radius <= separation {
            return Err(Error::InvalidParameter(format!(
                "safety radius R_c={safety_radius} must exceed d_s={separation}"
            )));
        }
        let effective_radius = connectivity_radius - body_radius;
        if effective_radius.is_nan() || effective_radius <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "effective radius R0 - r_a = {effective_radius} must be > 0"
            )));
        }
        Ok(Self {
            center,
            connectivity_radius,
            effective_radius,
            separation,
            sensing_radius,
            avoidance_radius,
            safety_radius,
        })
    }

    /// The reference parameter set: R0 = 12 m at the origin, R_s = 1.8 m,
    /// R_z = 1.6 m, R_c = 2.25 r_a, with d_s = 2 r_a.
    pub fn reference() -> Self {
        let ra = VehicleParams::reference().body_radius;
        Self::new(Vec2::zeros(), 12.0, 2.0 * ra, 1.8, 1.6, 2.25 * ra, ra)
            .expect("reference parameters are valid")
    }

    /// Distance of a point from the disc centre.
    pub fn center_distance(&self, p: &Vec2) -> f64 {
        distance(p, &self.center)
    }

    pub fn strictly_inside(&self, p: &Vec2) -> bool {
        self.center_distance(p) < self.effective_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Leader,
    Follower,
    Misbehaving,
}

impl AgentKind {
    pub fn is_controllable(self) -> bool {
        !matches!(self, AgentKind::Misbehaving)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub id: u32,
    pub kind: AgentKind,
    pub initial_state: AgentState,
    /// Goal position; `None` for misbehaving agents.
    pub destination: Option<Vec2>,
    /// Scripted motion; present iff the agent is misbehaving.
    pub misbehavior: Option<MisbehaviorSpec>,
}

/// Advances `state` by one Euler step of the kinematic bicycle.
///
/// Position uses the heading at the start of the step; heading uses the
/// updated front-wheel angle.
pub fn bicycle_step(
    state: &AgentState,
    cmd: &ControlCommand,
    params: &VehicleParams,
    dt: f64,
) -> Result<AgentState> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    check_steering(state.gamma)?;
    // The wheel angle is advanced first and the frame rotates with the new angle,
    // so a steering command takes effect within the same step.
    let gamma = wrap_angle(state.gamma + cmd.omega * dt);
    check_steering(gamma)?;
    let (sin_t, cos_t) = state.theta.sin_cos();
    Ok(AgentState {
        x: state.x + cmd.u * cos_t * dt,
        y: state.y + cmd.u * sin_t * dt,
        theta: wrap_angle(state.theta + cmd.u / params.wheelbase * gamma.tan() * dt),
        gamma,
    })
}

fn check_steering(gamma: f64) -> Result<()> {
    if gamma.abs() >= FRAC_PI_2 - STEERING_GUARD || !gamma.is_finite() {
        Err(Error::SteeringSingularity { gamma })
    } else {
        Ok(())
    }
}

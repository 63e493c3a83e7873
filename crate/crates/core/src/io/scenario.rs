//! TOML scenario documents.
//!
//! ```toml
//! [world]
//! center = [0.0, 0.0]
//! R0 = 12.0
//! d_s = 1.5
//! R_s = 1.8
//! R_z = 1.6
//! R_c = 1.6875
//!
//! [vehicle]
//! B = 0.25
//! r_a = 0.75
//!
//! [gains]
//! k = 1.0
//! lambda = 2.3
//!
//! [sim]
//! t_max = 30.0
//!
//! [[agents]]
//! id = 1
//! kind = "leader"
//! start = { x = 0.0, y = 0.0, theta = 0.0 }
//! dest = { x = 5.0, y = 0.0 }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierParams;
use crate::control::{ConflictHeading, ControllerGains, MisbehaviorSpec, SteeringLaw};
use crate::error::{Error, Result};
use crate::model::{
    AgentDescriptor, AgentKind, AgentState, Vec2, VehicleParams, WorldConfig, DEFAULT_DT,
};
use crate::sim::{Scenario, DEFAULT_CONVERGENCE_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub world: WorldSection,
    pub vehicle: VehicleSection,
    pub gains: GainsSection,
    pub sim: SimSection,
    pub agents: Vec<AgentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    #[serde(default)]
    pub center: [f64; 2],
    #[serde(rename = "R0")]
    pub r0: f64,
    pub d_s: f64,
    #[serde(rename = "R_s")]
    pub r_s: f64,
    #[serde(rename = "R_z")]
    pub r_z: f64,
    #[serde(rename = "R_c")]
    pub r_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    #[serde(rename = "B")]
    pub wheelbase: f64,
    pub r_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k: f64,
    pub lambda: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_radius() -> f64 {
    DEFAULT_CONVERGENCE_RADIUS
}
fn default_delta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_max: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub convergence_radius: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub steering: SteeringLaw,
    #[serde(default)]
    pub conflict_heading: ConflictHeading,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartEntry {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MisbehaviorEntry {
    WaypointOscillator {
        a: [f64; 2],
        b: [f64; 2],
        speed: f64,
    },
    CircularOrbit {
        center: [f64; 2],
        radius: f64,
        angular_speed: f64,
        #[serde(default)]
        phase: f64,
    },
    RandomWalk {
        seed: u64,
        speed: f64,
        heading_diffusion: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub id: u32,
    pub kind: AgentKind,
    /// Optional for misbehaving agents, whose start comes from their script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StartEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dest: Option<PointEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misbehavior: Option<MisbehaviorEntry>,
}

fn vec2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

impl From<&MisbehaviorEntry> for MisbehaviorSpec {
    fn from(m: &MisbehaviorEntry) -> Self {
        match *m {
            MisbehaviorEntry::WaypointOscillator { a, b, speed } => {
                MisbehaviorSpec::WaypointOscillator {
                    a: vec2(a),
                    b: vec2(b),
                    speed,
                }
            }
            MisbehaviorEntry::CircularOrbit {
                center,
                radius,
                angular_speed,
                phase,
            } => MisbehaviorSpec::CircularOrbit {
                center: vec2(center),
                radius,
                angular_speed,
                phase,
            },
            MisbehaviorEntry::RandomWalk {
                seed,
                speed,
                heading_diffusion,
            } => MisbehaviorSpec::RandomWalk {
                seed,
                speed,
                heading_diffusion,
            },
        }
    }
}

impl From<&MisbehaviorSpec> for MisbehaviorEntry {
    fn from(m: &MisbehaviorSpec) -> Self {
        match *m {
            MisbehaviorSpec::WaypointOscillator { a, b, speed } => {
                MisbehaviorEntry::WaypointOscillator {
                    a: [a.x, a.y],
                    b: [b.x, b.y],
                    speed,
                }
            }
            MisbehaviorSpec::CircularOrbit {
                center,
                radius,
                angular_speed,
                phase,
            } => MisbehaviorEntry::CircularOrbit {
                center: [center.x, center.y],
                radius,
                angular_speed,
                phase,
            },
            MisbehaviorSpec::RandomWalk {
                seed,
                speed,
                heading_diffusion,
            } => MisbehaviorEntry::RandomWalk {
                seed,
                speed,
                heading_diffusion,
            },
        }
    }
}

/// Default start for a scripted agent: where its script places it at t = 0.
fn scripted_start(spec: &MisbehaviorSpec) -> Option<AgentState> {
    match *spec {
        MisbehaviorSpec::WaypointOscillator { a, b, .. } => {
            let d = b - a;
            Some(AgentState::at(a, d.y.atan2(d.x)))
        }
        MisbehaviorSpec::CircularOrbit {
            center,
            radius,
            angular_speed,
            phase,
        } => {
            let p = center + radius * Vec2::new(phase.cos(), phase.sin());
            let turn = if angular_speed >= 0.0 { 1.0 } else { -1.0 };
            Some(AgentState::at(
                p,
                phase + turn * std::f64::consts::FRAC_PI_2,
            ))
        }
        MisbehaviorSpec::RandomWalk { .. } => None,
    }
}

fn validation(section: &str, e: Error) -> Error {
    let detail = match e {
        Error::InvalidParameter(m) | Error::Validation(m) => m,
        other => other.to_string(),
    };
    Error::Validation(format!("[{section}] {detail}"))
}

impl ScenarioFile {
    pub fn into_scenario(&self) -> Result<Scenario> {
        let vehicle = VehicleParams::new(self.vehicle.wheelbase, self.vehicle.r_a)
            .map_err(|e| validation("vehicle", e))?;
        let w = &self.world;
        let world = WorldConfig::new(
            vec2(w.center),
            w.r0,
            w.d_s,
            w.r_s,
            w.r_z,
            w.r_c,
            self.vehicle.r_a,
        )
        .map_err(|e| validation("world", e))?;
        let gains = ControllerGains::new(self.gains.k, self.gains.lambda)
            .map_err(|e| validation("gains", e))?;
        let barrier =
            BarrierParams::new(self.sim.delta, &world).map_err(|e| validation("sim.delta", e))?;

        let mut agents = Vec::with_capacity(self.agents.len());
        let mut overrides = BTreeMap::new();
        for (k, entry) in self.agents.iter().enumerate() {
            let section = format!("agents[{k}] (id {})", entry.id);
            let misbehavior = entry.misbehavior.as_ref().map(MisbehaviorSpec::from);
            let start = match (entry.start, &misbehavior) {
                (Some(s), _) => AgentState::new(s.x, s.y, s.theta, s.gamma),
                (None, Some(spec)) => scripted_start(spec).ok_or_else(|| {
                    Error::Validation(format!("[{section}] random walk needs a start"))
                })?,
                (None, None) => {
                    return Err(Error::Validation(format!(
                        "[{section}] missing key `start`"
                    )))
                }
            };
            if let Some(g) = entry.gains {
                let g = ControllerGains::new(g.k, g.lambda).map_err(|e| validation(&section, e))?;
                overrides.insert(entry.id, g);
            }
            agents.push(AgentDescriptor {
                id: entry.id,
                kind: entry.kind,
                initial_state: start,
                destination: entry.dest.map(|d| Vec2::new(d.x, d.y)),
                misbehavior,
            });
        }
        agents.sort_by_key(|a| a.id);

        let scenario = Scenario {
            world,
            vehicle,
            agents,
            gains,
            gain_overrides: overrides,
            dt: self.sim.dt,
            t_max: self.sim.t_max,
            seed: self.sim.seed,
            convergence_radius: self.sim.convergence_radius,
            barrier,
            steering: self.sim.steering,
            conflict_heading: self.sim.conflict_heading,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_scenario(sc: &Scenario) -> Self {
        let r_a = sc.vehicle.body_radius;
        let w = &sc.world;
        Self {
            world: WorldSection {
                center: [w.center.x, w.center.y],
                r0: w.connectivity_radius,
                d_s: w.separation,
                r_s: w.sensing_radius,
                r_z: w.avoidance_radius,
                r_c: w.safety_radius,
            },
            vehicle: VehicleSection {
                wheelbase: sc.vehicle.wheelbase,
                r_a,
            },
            gains: GainsSection {
                k: sc.gains.k,
                lambda: sc.gains.lambda,
            },
            sim: SimSection {
                dt: sc.dt,
                t_max: sc.t_max,
                seed: sc.seed,
                convergence_radius: sc.convergence_radius,
                delta: sc.barrier.delta,
                steering: sc.steering,
                conflict_heading: sc.conflict_heading,
            },
            agents: sc
                .agents
                .iter()
                .map(|a| {
                    let s = a.initial_state;
                    AgentEntry {
                        id: a.id,
                        kind: a.kind,
                        start: Some(StartEntry {
                            x: s.x,
                            y: s.y,
                            theta: s.theta,
                            gamma: s.gamma,
                        }),
                        dest: a.destination.map(|d| PointEntry { x: d.x, y: d.y }),
                        gains: sc.gain_overrides.get(&a.id).map(|g| GainsSection {
                            k: g.k,
                            lambda: g.lambda,
                        }),
                        misbehavior: a.misbehavior.as_ref().map(MisbehaviorEntry::from),
                    }
                })
                .collect(),
        }
    }
}

/// Byte offset to 1-based line and column.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let (line, col) = line_col(text, span.start);
                format!("line {line}, column {col}")
            }
            None => "document".to_string(),
        };
        Error::Parse {
            location,
            message: e.message().trim().to_string(),
        }
    })?;
    file.into_scenario()
}

pub fn serialize_scenario(sc: &Scenario) -> Result<String> {
    toml::to_string(&ScenarioFile::from_scenario(sc))
        .map_err(|e| Error::Io(format!("cannot serialize scenario: {e}")))
}

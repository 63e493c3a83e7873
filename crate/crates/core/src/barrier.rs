//! Per-agent Lyapunov-like barrier function.
//!
//! Each agent combines a recentred connectivity barrier (zero at its
//! destination, diverging at the edge of the connectivity disc) with one
//! recentred collision barrier per visible neighbour. Collision terms are
//! faded in by a C¹ cubic between the sensing radius and the avoidance radius.
//! The combination is normalised into `[0, 1)` so it can double as a
//! bounded potential for the heading field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Vec2, WorldConfig};

/// Tolerance used when checking the blend cubic's knot conditions.
pub const SIGMA_KNOT_TOL: f64 = 1e-9;

/// C¹ cubic ramp from 1 at the avoidance radius to 0 at the sensing radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBlend {
    inner: f64,
    outer: f64,
    coeffs: [f64; 4],
}

impl SigmaBlend {
    /// Builds the blend for knots `inner` (R_z) and `outer` (R_s) and checks
    /// σ(R_z) = 1, σ(R_s) = 0 and σ′ = 0 at both knots.
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "blend knots must satisfy 0 < R_z < R_s, got R_z={inner}, R_s={outer}"
            )));
        }
        let blend = Self {
            inner,
            outer,
            coeffs: hermite_coefficients(inner, outer),
        };
        let residuals = blend.knot_residuals();
        if let Some(bad) = residuals.iter().find(|r| r.abs() > SIGMA_KNOT_TOL) {
            return Err(Error::InvalidParameter(format!(
                "blend cubic fails a knot condition (residual {bad})"
            )));
        }
        Ok(blend)
    }

    /// Wraps arbitrary coefficients without checking the knot conditions.
    pub fn from_coefficients(inner: f64, outer: f64, coeffs: [f64; 4]) -> Self {
        Self {
            inner,
            outer,
            coeffs,
        }
    }

    pub fn for_world(world: &WorldConfig) -> Result<Self> {
        Self::new(world.avoidance_radius, world.sensing_radius)
    }

    pub fn coefficients(&self) -> [f64; 4] {
        self.coeffs
    }

    fn cubic(&self, d: f64) -> f64 {
        let [a, b, c, e] = self.coeffs;
        ((a * d + b) * d + c) * d + e
    }

    fn cubic_slope(&self, d: f64) -> f64 {
        let [a, b, c, _] = self.coeffs;
        (3.0 * a * d + 2.0 * b) * d + c
    }

    /// Residuals of σ(R_z) − 1, σ(R_s), σ′(R_z), σ′(R_s) for the cubic piece.
    pub fn knot_residuals(&self) -> [f64; 4] {
        [
            self.cubic(self.inner) - 1.0,
            self.cubic(self.outer),
            self.cubic_slope(self.inner),
            self.cubic_slope(self.outer),
        ]
    }

    /// Taylor coefficients of the cubic about the outer knot, constant first.
    /// The monomial form cancels badly next to R_s, where σ is tiny but the
    /// individual terms are in the thousands.
    fn about_outer(&self) -> [f64; 4] {
        let [a, b, _, _] = self.coeffs;
        [
            self.cubic(self.outer),
            self.cubic_slope(self.outer),
            3.0 * a * self.outer + b,
            a,
        ]
    }

    pub fn value(&self, d: f64) -> f64 {
        if d <= self.inner {
            1.0
        } else if d >= self.outer {
            0.0
        } else {
            let [c0, c1, c2, c3] = self.about_outer();
            let t = d - self.outer;
            ((c3 * t + c2) * t + c1) * t + c0
        }
    }

    pub fn derivative(&self, d: f64) -> f64 {
        if d <= self.inner || d >= self.outer {
            0.0
        } else {
            let [_, c1, c2, c3] = self.about_outer();
            let t = d - self.outer;
            (3.0 * c3 * t + 2.0 * c2) * t + c1
        }
    }
}

/// Coefficients (A, B, C, D) of the cubic with σ(R_z)=1, σ(R_s)=0 and flat ends.
pub fn hermite_coefficients(inner: f64, outer: f64) -> [f64; 4] {
    let den = (inner - outer).powi(3);
    [
        -2.0 / den,
        3.0 * (inner + outer) / den,
        -6.0 * inner * outer / den,
        outer * outer * (3.0 * inner - outer) / den,
    ]
}

/// [`hermite_coefficients`] with the sign of the constant term flipped. This
/// variant misses every knot condition; it exists for regression tests.
pub fn sign_flipped_coefficients(inner: f64, outer: f64) -> [f64; 4] {
    let [a, b, c, d] = hermite_coefficients(inner, outer);
    [a, b, c, -d]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    /// Combination exponent δ ≥ 1.
    pub delta: f64,
    pub sigma: SigmaBlend,
}

impl BarrierParams {
    pub fn new(delta: f64, world: &WorldConfig) -> Result<Self> {
        if !(delta >= 1.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "combination exponent must be finite and >= 1, got {delta}"
            )));
        }
        Ok(Self {
            delta,
            sigma: SigmaBlend::for_world(world)?,
        })
    }
}

/// Which constraint a barrier component came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintId {
    Connectivity,
    Collision(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierEvaluation {
    /// Normalised value in `[0, 1)`.
    pub value: f64,
    /// Spatial gradient (∂V/∂x, ∂V/∂y).
    pub gradient: Vec2,
    pub components: Vec<(ConstraintId, f64)>,
}

/// A nearby agent that enters the barrier as a collision constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierNeighbor {
    pub id: u32,
    pub position: Vec2,
}

/// R − ‖r − r₀‖; negative outside the disc.
pub fn connectivity_constraint(r: &Vec2, world: &WorldConfig) -> f64 {
    world.effective_radius - world.center_distance(r)
}

/// ‖r_i − r_j‖² − d_s².
pub fn collision_constraint(ri: &Vec2, rj: &Vec2, world: &WorldConfig) -> f64 {
    (ri - rj).norm_squared() - world.separation * world.separation
}

pub fn log_barrier(c: f64) -> Result<f64> {
    if c > 0.0 {
        Ok(-c.ln())
    } else {
        Err(Error::violated("log barrier argument must be > 0", c))
    }
}

/// Gradient of the connectivity barrier −ln(R − ‖r − r₀‖). The function has a
/// cone point at the centre; the zero subgradient is used there.
fn connectivity_barrier_gradient(r: &Vec2, world: &WorldConfig) -> Result<Vec2> {
    let offset = r - world.center;
    let dist = offset.norm();
    let c = world.effective_radius - dist;
    if c <= 0.0 {
        return Err(Error::violated("connectivity", c));
    }
    if dist == 0.0 {
        return Ok(Vec2::zeros());
    }
    Ok(offset / (dist * c))
}

/// Connectivity barrier recentred on `dest` (value and gradient).
fn recentered_connectivity_with_gradient(
    r: &Vec2,
    dest: &Vec2,
    world: &WorldConfig,
) -> Result<(f64, Vec2)> {
    let b_r = log_barrier(connectivity_constraint(r, world))?;
    let b_d = log_barrier(connectivity_constraint(dest, world))?;
    let g_d = connectivity_barrier_gradient(dest, world)?;
    let value = b_r - b_d - g_d.dot(&(r - dest));
    let grad = connectivity_barrier_gradient(r, world)? - g_d;
    Ok((value, grad))
}

pub fn recentered_connectivity(r: &Vec2, dest: &Vec2, world: &WorldConfig) -> Result<f64> {
    recentered_connectivity_with_gradient(r, dest, world).map(|(v, _)| v)
}

/// b_ij(r_i, r_j) − b_ij(r_dest, r_j). No gradient correction term.
pub fn recentered_collision(ri: &Vec2, rj: &Vec2, dest: &Vec2, world: &WorldConfig) -> Result<f64> {
    let b = log_barrier(collision_constraint(ri, rj, world))?;
    let b_ref = log_barrier(collision_constraint(dest, rj, world))?;
    Ok(b - b_ref)
}

/// σ blend for a neighbour at distance `d`.
pub fn sigma_blend(d: f64, world: &WorldConfig) -> f64 {
    let (inner, outer) = (world.avoidance_radius, world.sensing_radius);
    SigmaBlend::from_coefficients(inner, outer, hermite_coefficients(inner, outer)).value(d)
}

/// δ-norm of the components mapped through v ↦ v / (1 + v).
pub fn combine_and_normalize(components: &[f64], delta: f64) -> f64 {
    let v = delta_norm(components, delta);
    v / (1.0 + v)
}

fn delta_norm(components: &[f64], delta: f64) -> f64 {
    if delta == 1.0 {
        return components.iter().sum();
    }
    let s: f64 = components.iter().map(|c| c.powf(delta)).sum();
    s.powf(1.0 / delta)
}

/// Value and gradient of V for an agent at `position` heading to `destination`,
/// given the neighbours that should act as collision constraints.
///
/// Neighbours at or beyond the sensing radius contribute nothing. When a
/// neighbour sits within `d_s` of the destination the recentring reference
/// b_ij(r_dest, r_j) is undefined; the reference is then taken at distance
/// R_z instead.
pub fn evaluate_at(
    position: &Vec2,
    destination: &Vec2,
    neighbors: &[BarrierNeighbor],
    world: &WorldConfig,
    params: &BarrierParams,
) -> Result<BarrierEvaluation> {
    let mut components = Vec::with_capacity(neighbors.len() + 1);
    let mut partials: Vec<(f64, Vec2)> = Vec::with_capacity(neighbors.len() + 1);

    let (r0, g_r0) = recentered_connectivity_with_gradient(position, destination, world)?;
    components.push((ConstraintId::Connectivity, r0 * r0));
    partials.push((r0 * r0, 2.0 * r0 * g_r0));

    let ds2 = world.separation * world.separation;
    let fallback_ref = world.avoidance_radius * world.avoidance_radius - ds2;
    for n in neighbors {
        let offset = position - n.position;
        let d = offset.norm();
        let sigma = params.sigma.value(d);
        if sigma == 0.0 {
            continue;
        }
        let c = offset.norm_squared() - ds2;
        if c <= 0.0 {
            return Err(Error::violated(format!("collision with agent {}", n.id), c));
        }
        let mut c_ref = collision_constraint(destination, &n.position, world);
        if c_ref <= 0.0 {
            c_ref = fallback_ref;
        }
        let q = c_ref.ln() - c.ln();
        let grad_b = -2.0 * offset / c;
        let value = sigma * q * q;
        let grad = params.sigma.derivative(d) * q * q * offset / d + 2.0 * sigma * q * grad_b;
        components.push((ConstraintId::Collision(n.id), value));
        partials.push((value, grad));
    }

    let delta = params.delta;
    let values: Vec<f64> = partials.iter().map(|(v, _)| *v).collect();
    let v = delta_norm(&values, delta);
    let dv = if v == 0.0 {
        Vec2::zeros()
    } else if delta == 1.0 {
        partials.iter().map(|(_, g)| *g).sum()
    } else {
        let s = v.powf(delta);
        let scale = s.powf(1.0 / delta - 1.0);
        partials
            .iter()
            .map(|(val, g)| val.powf(delta - 1.0) * g)
            .sum::<Vec2>()
            * scale
    };
    let norm = 1.0 + v;
    Ok(BarrierEvaluation {
        value: v / norm,
        gradient: dv / (norm * norm),
        components,
    })
}

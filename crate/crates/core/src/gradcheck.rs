//! Finite-difference check of the barrier gradient.
//!
//! The reference value is rebuilt from the public component functions, so the
//! check does not share code with the analytic gradient in [`evaluate_at`].

use std::f64::consts::TAU;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{
    combine_and_normalize, evaluate_at, recentered_collision, recentered_connectivity, sigma_blend,
    BarrierNeighbor, BarrierParams,
};
use crate::error::Result;
use crate::model::{distance, Vec2, WorldConfig};

pub const DEFAULT_STEP: f64 = 1e-6;
/// Gradient norms below this are compared in absolute terms.
pub const NORM_FLOOR: f64 = 1e-8;

/// Keep-out margins used by the sampler.
const EDGE_MARGIN: f64 = 0.1;
const CENTRE_MARGIN: f64 = 0.05;
const GOAL_MARGIN: f64 = 0.3;
const CONTACT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub position: Vec2,
    pub destination: Vec2,
    pub neighbors: Vec<BarrierNeighbor>,
}

impl Configuration {
    /// Whether some neighbour sits strictly inside the σ blend band.
    pub fn has_blend_neighbor(&self, world: &WorldConfig) -> bool {
        self.neighbors.iter().any(|n| {
            let d = distance(&self.position, &n.position);
            d > world.avoidance_radius && d < world.sensing_radius
        })
    }
}

fn point_in_disc<R: Rng>(rng: &mut R, centre: Vec2, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..TAU);
    centre + r * Vec2::new(a.cos(), a.sin())
}

/// Draws a configuration where every barrier term is finite and smooth:
/// away from the disc edge and centre, away from the destination, with
/// neighbours outside contact and clear of the destination.
pub fn sample_configuration<R: Rng>(rng: &mut R, world: &WorldConfig) -> Configuration {
    let usable = world.effective_radius - EDGE_MARGIN;
    let destination = point_in_disc(rng, world.center, usable);
    let position = loop {
        let p = point_in_disc(rng, world.center, usable);
        if world.center_distance(&p) > CENTRE_MARGIN && distance(&p, &destination) > GOAL_MARGIN {
            break p;
        }
    };
    let count = rng.random_range(0..=4u32);
    let mut neighbors = Vec::new();
    while (neighbors.len() as u32) < count {
        let band = rng.random::<f64>();
        let d = if band < 0.5 {
            rng.random_range(world.avoidance_radius..world.sensing_radius)
        } else if band < 0.85 {
            rng.random_range(world.separation + CONTACT_MARGIN..world.avoidance_radius)
        } else {
            rng.random_range(world.sensing_radius..world.sensing_radius + 1.0)
        };
        let a = rng.random_range(0.0..TAU);
        let q = position + d * Vec2::new(a.cos(), a.sin());
        if distance(&q, &destination) > world.separation + CONTACT_MARGIN {
            neighbors.push(BarrierNeighbor {
                id: neighbors.len() as u32 + 2,
                position: q,
            });
        }
    }
    Configuration {
        position,
        destination,
        neighbors,
    }
}

/// Barrier components rebuilt from the individual component functions.
pub fn reference_components(
    position: &Vec2,
    cfg: &Configuration,
    world: &WorldConfig,
) -> Result<Vec<f64>> {
    let r0 = recentered_connectivity(position, &cfg.destination, world)?;
    let mut components = vec![r0 * r0];
    for n in &cfg.neighbors {
        let sigma = sigma_blend(distance(position, &n.position), world);
        if sigma > 0.0 {
            let q = recentered_collision(position, &n.position, &cfg.destination, world)?;
            components.push(sigma * q * q);
        }
    }
    Ok(components)
}

pub fn reference_value(
    position: &Vec2,
    cfg: &Configuration,
    world: &WorldConfig,
    delta: f64,
) -> Result<f64> {
    Ok(combine_and_normalize(
        &reference_components(position, cfg, world)?,
        delta,
    ))
}

/// Central difference of V.
///
/// Near the disc edge V sits within 1e-5 of 1 and subtracting two such values
/// loses most significant digits. The difference is therefore taken on the
/// unnormalised combination v and mapped through the exact secant identity
/// V(a) - V(b) = (v(a) - v(b)) / ((1 + v(a)) (1 + v(b))).
pub fn central_difference(
    cfg: &Configuration,
    world: &WorldConfig,
    delta: f64,
    h: f64,
) -> Result<Vec2> {
    let v = |dx: f64, dy: f64| -> Result<f64> {
        let c = reference_components(&(cfg.position + Vec2::new(dx, dy)), cfg, world)?;
        Ok(c.iter()
            .map(|x| x.powf(delta))
            .sum::<f64>()
            .powf(1.0 / delta))
    };
    let secant = |a: f64, b: f64| (a - b) / ((1.0 + a) * (1.0 + b)) / (2.0 * h);
    Ok(Vec2::new(
        secant(v(h, 0.0)?, v(-h, 0.0)?),
        secant(v(0.0, h)?, v(0.0, -h)?),
    ))
}

pub fn relative_error(analytic: &Vec2, numeric: &Vec2) -> f64 {
    let scale = analytic.norm().max(numeric.norm()).max(NORM_FLOOR);
    (analytic - numeric).norm() / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub samples: usize,
    pub blend_zone_samples: usize,
    pub max_relative_error: f64,
    /// Largest mismatch between the analytic and component-built values.
    pub max_value_mismatch: f64,
    pub worst: Option<Configuration>,
}

/// Compares the analytic gradient against central differences at `samples`
/// seeded random configurations.
pub fn check_gradient(
    world: &WorldConfig,
    params: &BarrierParams,
    samples: usize,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        samples,
        blend_zone_samples: 0,
        max_relative_error: 0.0,
        max_value_mismatch: 0.0,
        worst: None,
    };
    for _ in 0..samples {
        let cfg = sample_configuration(&mut rng, world);
        report.blend_zone_samples += cfg.has_blend_neighbor(world) as usize;
        let eval = evaluate_at(
            &cfg.position,
            &cfg.destination,
            &cfg.neighbors,
            world,
            params,
        )?;
        let value = reference_value(&cfg.position, &cfg, world, params.delta)?;
        report.max_value_mismatch = report.max_value_mismatch.max((eval.value - value).abs());
        let numeric = central_difference(&cfg, world, params.delta, h)?;
        let err = relative_error(&eval.gradient, &numeric);
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some(cfg);
        }
    }
    Ok(report)
}

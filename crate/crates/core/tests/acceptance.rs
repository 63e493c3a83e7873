//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use coord_sim::barrier::{
    evaluate_at, hermite_coefficients, sign_flipped_coefficients, BarrierParams, SigmaBlend,
    SIGMA_KNOT_TOL,
};
use coord_sim::control::desired_heading;
use coord_sim::gradcheck::{check_gradient, DEFAULT_STEP};
use coord_sim::io::emit_trajectory;
use coord_sim::model::{wrap_angle, WorldConfig};
use coord_sim::presets::{boundary_destinations, canonical, collision_course, lone_leader};
use coord_sim::sim::{run, RunOutcome, RunStatus, Scenario, Violation};

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Heading error θ − φ at every record of a single-agent run.
fn heading_errors(sc: &Scenario, out: &RunOutcome) -> Vec<(f64, f64)> {
    let dest = sc.agents[0].destination.unwrap();
    out.trajectory
        .iter()
        .map(|rec| {
            let s = rec.agents[0].state;
            let e = evaluate_at(&s.position(), &dest, &[], &sc.world, &sc.barrier).unwrap();
            let phi = desired_heading(&e.gradient).unwrap_or(s.theta);
            (rec.t, wrap_angle(s.theta - phi))
        })
        .collect()
}

fn scenario_reproduction() -> Verdict {
    let sc = canonical();
    let start = Instant::now();
    let out = run(&sc);
    let wall = start.elapsed().as_secs_f64();
    let detail = format!(
        "{:?}, min pair {:.4} m, max centre {:.4} m, wall {:.2} s",
        out.status,
        out.min_pairwise_distance(),
        out.max_center_distance(),
        wall
    );
    let pass = matches!(out.status, RunStatus::Converged { t } if t <= 25.0)
        && out.min_pairwise_distance() >= sc.world.separation
        && out.max_center_distance() <= sc.world.effective_radius;
    verdict(pass, detail)
}

fn gradient_oracle() -> Verdict {
    let world = WorldConfig::reference();
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    let mut blend = 0;
    for (delta, seed) in [(1.0, 0), (1.0, 1), (2.5, 2)] {
        let params = BarrierParams::new(delta, &world).unwrap();
        let r = check_gradient(&world, &params, 2000, seed, DEFAULT_STEP).unwrap();
        worst = worst.max(r.max_relative_error);
        samples += r.samples;
        blend += r.blend_zone_samples;
    }
    verdict(
        worst <= 1e-5 && blend > 0,
        format!("{samples} samples ({blend} in the blend zone), h = 1e-6, max relative error {worst:.3e}"),
    )
}

fn sigma_boundary_conditions() -> Verdict {
    let w = WorldConfig::reference();
    let (rz, rs) = (w.avoidance_radius, w.sensing_radius);
    let Ok(blend) = SigmaBlend::new(rz, rs) else {
        return verdict(false, "corrected coefficients rejected");
    };
    let residuals = blend.knot_residuals();
    // each side of each knot: values and slopes must agree
    let tiny = 1e-12;
    let jumps = [
        (blend.value(rz - tiny) - blend.value(rz + tiny)).abs(),
        (blend.value(rs - tiny) - blend.value(rs + tiny)).abs(),
        (blend.derivative(rz - tiny) - blend.derivative(rz + tiny)).abs(),
        (blend.derivative(rs - tiny) - blend.derivative(rs + tiny)).abs(),
    ];
    let worst = residuals
        .iter()
        .chain(&jumps)
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let flipped = SigmaBlend::from_coefficients(rz, rs, sign_flipped_coefficients(rz, rs));
    let flipped_miss = flipped.knot_residuals()[1].abs();
    let pass = worst <= SIGMA_KNOT_TOL
        && flipped_miss > SIGMA_KNOT_TOL
        && SigmaBlend::new(rz, rs).map(|b| b.coefficients()) == Ok(hermite_coefficients(rz, rs))
        && flipped_miss > 1.0;
    verdict(
        pass,
        format!("corrected cubic worst knot error {worst:.1e}; sign-flipped constant gives σ(R_s) = {:.3}", flipped.knot_residuals()[1]),
    )
}

fn leader_lyapunov_decrease() -> Verdict {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut checked = 0;
    for (dist, err) in [
        (10.0, 0.0),
        (10.0, 1.0),
        (16.0, -2.0),
        (6.0, 2.5),
        (20.0, 0.4),
    ] {
        let sc = lone_leader(dist, err).unwrap();
        let out = run(&sc);
        if !out.is_converged() {
            return verdict(
                false,
                format!("lone leader ({dist}, {err}) {:?}", out.status),
            );
        }
        let errors = heading_errors(&sc, &out);
        let Some(from) = errors.iter().position(|(_, e)| e.abs() < 0.05) else {
            return verdict(false, "heading never settled");
        };
        for w in out.trajectory[from..].windows(2) {
            let rise = w[1].agents[0].value.unwrap() - w[0].agents[0].value.unwrap();
            worst_rise = worst_rise.max(rise / sc.dt);
            checked += 1;
        }
    }
    verdict(
        worst_rise <= 1e-6,
        format!("{checked} steps over 5 runs, largest ΔV/dt {worst_rise:.3e} (limit 1e-6)"),
    )
}

fn heading_convergence() -> Verdict {
    let sc = lone_leader(16.0, 0.8).unwrap();
    let lambda = sc.gains.lambda;
    let out = run(&sc);
    let pts: Vec<(f64, f64)> = heading_errors(&sc, &out)
        .into_iter()
        .filter(|(t, e)| *t <= 2.0 && e.abs() > 0.0)
        .map(|(t, e)| (t, e.abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let (mt, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    let rate = -slope;
    verdict(
        (rate - lambda).abs() <= 0.3 * lambda,
        format!(
            "fitted rate {rate:.3} 1/s vs λ = {lambda} over {} points",
            pts.len()
        ),
    )
}

fn pairwise_safety() -> Verdict {
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    let (mut converged, mut timeouts) = (0, 0);
    for seed in 0..200 {
        let sc = collision_course(seed).unwrap();
        let out = run(&sc);
        worst = worst.min(out.min_pairwise_distance());
        match out.status {
            RunStatus::Converged { .. } => converged += 1,
            RunStatus::Timeout => timeouts += 1,
            _ => failures.push(seed),
        }
        if out.min_pairwise_distance() < sc.world.separation && !failures.contains(&seed) {
            failures.push(seed);
        }
    }
    verdict(
        failures.is_empty(),
        format!("200 runs: {converged} converged, {timeouts} timeout, min pair {worst:.4} m, failing seeds {failures:?}"),
    )
}

fn connectivity() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut limit = 0.0;
    for seed in 0..100 {
        let sc = boundary_destinations(seed).unwrap();
        limit = sc.world.effective_radius;
        let out = run(&sc);
        let lost = matches!(&out.status, RunStatus::SafetyViolation { violations, .. }
            if violations.iter().any(|v| matches!(v, Violation::ConnectivityLoss { .. })));
        worst = worst.max(out.max_center_distance());
        if lost || out.max_center_distance() > limit {
            failures.push(seed);
        }
    }
    verdict(
        failures.is_empty(),
        format!("100 runs: max centre distance {worst:.4} m (R_eff {limit}), failing seeds {failures:?}"),
    )
}

fn determinism() -> Verdict {
    let sc = canonical();
    let a = emit_trajectory(&run(&sc), 1).unwrap();
    let b = emit_trajectory(&run(&sc), 1).unwrap();
    verdict(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn dt_refinement() -> Verdict {
    let coarse_sc = canonical();
    let mut fine_sc = coarse_sc.clone();
    fine_sc.dt = coarse_sc.dt / 2.0;
    let coarse = run(&coarse_sc);
    let fine = run(&fine_sc);
    if !coarse.is_converged() || !fine.is_converged() {
        return verdict(false, format!("{:?} / {:?}", coarse.status, fine.status));
    }
    let shift = coarse_sc
        .controllable()
        .map(|a| {
            (coarse.summary.final_positions[&a.id] - fine.summary.final_positions[&a.id]).norm()
        })
        .fold(0.0, f64::max);
    verdict(
        shift < 0.05,
        format!("largest final-position shift {shift:.4} m"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "canonical scenario converges safely within 25 s",
            scenario_reproduction,
        ),
        (
            "analytic gradient matches finite differences",
            gradient_oracle,
        ),
        ("blend cubic knot conditions", sigma_boundary_conditions),
        (
            "lone leader barrier is non-increasing",
            leader_lyapunov_decrease,
        ),
        ("heading error decays at rate λ", heading_convergence),
        ("collision-course pairs keep separation", pairwise_safety),
        ("boundary destinations keep connectivity", connectivity),
        ("trajectory CSV is byte-identical across runs", determinism),
        ("halving dt moves final positions < 0.05 m", dt_refinement),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {name}: {}", k + 1, v.detail);
        failed += (!v.pass) as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

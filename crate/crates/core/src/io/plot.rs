//! Self-contained SVG 1.1 figures from trajectory rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{distance, Vec2, WorldConfig};

use super::trajectory::TrajectoryRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PlotMode {
    Trajectories,
    DistanceToDest,
    InterAgentDistances,
}

/// Scenario facts that the CSV does not carry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotContext {
    pub world: Option<WorldConfig>,
    pub body_radius: Option<f64>,
    pub destinations: BTreeMap<u32, Vec2>,
}

impl PlotContext {
    /// Without a scenario the final position of each controllable agent
    /// stands in for its destination.
    pub fn from_rows(rows: &[TrajectoryRow]) -> Self {
        let mut destinations = BTreeMap::new();
        for r in rows.iter().filter(|r| r.value.is_some()) {
            destinations.insert(r.agent_id, Vec2::new(r.x, r.y));
        }
        Self {
            world: None,
            body_radius: None,
            destinations,
        }
    }
}

const SIZE: f64 = 800.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#ad494a",
];

fn colour(id: u32) -> &'static str {
    PALETTE[(id as usize).saturating_sub(1) % PALETTE.len()]
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#
    );
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = SIZE
    );
    let _ = writeln!(out, "<title>{title}</title>");
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn by_agent(rows: &[TrajectoryRow]) -> BTreeMap<u32, Vec<&TrajectoryRow>> {
    let mut m: BTreeMap<u32, Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.agent_id).or_default().push(r);
    }
    m
}

/// Renders `rows` in the requested mode. `times` places snapshot markers in
/// trajectories mode and is ignored otherwise.
pub fn plot_svg(
    rows: &[TrajectoryRow],
    ctx: &PlotContext,
    mode: PlotMode,
    times: &[f64],
) -> String {
    match mode {
        PlotMode::Trajectories => trajectories(rows, ctx, times),
        PlotMode::DistanceToDest => {
            let series = by_agent(rows)
                .into_iter()
                .filter_map(|(id, rs)| {
                    let dest = ctx.destinations.get(&id)?;
                    let pts = rs
                        .iter()
                        .map(|r| (r.t, distance(&Vec2::new(r.x, r.y), dest)))
                        .collect();
                    Some((format!("agent {id}"), colour(id), pts))
                })
                .collect();
            line_chart(
                "Distance to destination",
                "distance to destination (m)",
                series,
                None,
            )
        }
        PlotMode::InterAgentDistances => {
            let agents = by_agent(rows);
            let ids: Vec<u32> = agents.keys().copied().collect();
            let mut series = Vec::new();
            for (k, &i) in ids.iter().enumerate() {
                for &j in &ids[k + 1..] {
                    let pts = agents[&i]
                        .iter()
                        .zip(&agents[&j])
                        .map(|(a, b)| (a.t, distance(&Vec2::new(a.x, a.y), &Vec2::new(b.x, b.y))))
                        .collect();
                    series.push((format!("{i}-{j}"), colour(i), pts));
                }
            }
            let floor = ctx.world.map(|w| ("d_s", w.separation));
            line_chart("Inter-agent distances", "distance (m)", series, floor)
        }
    }
}

fn trajectories(rows: &[TrajectoryRow], ctx: &PlotContext, times: &[f64]) -> String {
    let agents = by_agent(rows);
    // world window: the connectivity disc if known, else the data extent
    let (centre, half) = match &ctx.world {
        Some(w) => (w.center, w.connectivity_radius * 1.05),
        None => {
            let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
            for r in rows {
                lo = lo.inf(&Vec2::new(r.x, r.y));
                hi = hi.sup(&Vec2::new(r.x, r.y));
            }
            if rows.is_empty() {
                (Vec2::zeros(), 1.0)
            } else {
                ((lo + hi) / 2.0, ((hi - lo).max() / 2.0 * 1.1).max(1.0))
            }
        }
    };
    let scale = (SIZE - 2.0 * MARGIN) / (2.0 * half);
    let px = |p: Vec2| {
        (
            SIZE / 2.0 + (p.x - centre.x) * scale,
            SIZE / 2.0 - (p.y - centre.y) * scale,
        )
    };

    let mut out = String::new();
    header(&mut out, "Agent trajectories");
    if let Some(w) = &ctx.world {
        let (cx, cy) = px(w.center);
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="{}" fill="none" stroke="black" stroke-dasharray="6 4"/>"#,
            num(cx),
            num(cy),
            num(w.connectivity_radius * scale)
        );
    }
    for (id, rs) in &agents {
        let pts: Vec<String> = rs
            .iter()
            .map(|r| {
                let (x, y) = px(Vec2::new(r.x, r.y));
                format!("{},{}", num(x), num(y))
            })
            .collect();
        let dash = if rs[0].value.is_none() {
            r#" stroke-dasharray="4 3""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<polyline id="path-{id}" points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            pts.join(" "),
            colour(*id)
        );
    }
    for (id, d) in &ctx.destinations {
        let (x, y) = px(*d);
        let _ = writeln!(
            out,
            r#"<circle class="destination" cx="{}" cy="{}" r="5" fill="{}"/>"#,
            num(x),
            num(y),
            colour(*id)
        );
    }
    let body = ctx.body_radius.unwrap_or(0.75) * scale;
    for &t in times {
        for (id, rs) in &agents {
            let Some(r) = rs
                .iter()
                .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            else {
                continue;
            };
            let (x, y) = px(Vec2::new(r.x, r.y));
            let _ = writeln!(
                out,
                r#"<circle class="snapshot" cx="{}" cy="{}" r="{}" fill="none" stroke="{}"/>"#,
                num(x),
                num(y),
                num(body),
                colour(*id)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
                num(x),
                num(y + 3.0),
                format_args!("{t}s")
            );
        }
    }
    for (k, id) in agents.keys().enumerate() {
        let y = 20.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">agent {id}</text>"#,
            num(SIZE - 80.0),
            num(y),
            colour(*id)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Round step from a span: 1, 2 or 5 times a power of ten, about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

type Series = (String, &'static str, Vec<(f64, f64)>);

fn line_chart(
    title: &str,
    y_label: &str,
    series: Vec<Series>,
    floor: Option<(&str, f64)>,
) -> String {
    let finite = |v: &f64| v.is_finite();
    let t_max = series
        .iter()
        .flat_map(|s| s.2.iter().map(|p| p.0))
        .filter(finite)
        .fold(0.0, f64::max)
        .max(1e-9);
    let y_max = series
        .iter()
        .flat_map(|s| s.2.iter().map(|p| p.1))
        .filter(finite)
        .chain(floor.map(|f| f.1))
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;
    let (x0, x1, y0, y1) = (MARGIN, SIZE - MARGIN, SIZE - MARGIN, MARGIN);
    let px = |t: f64, v: f64| (x0 + t / t_max * (x1 - x0), y0 - v / y_max * (y0 - y1));

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<path d="M{a},{b} L{a},{c} M{a},{b} L{d},{b}" stroke="black" fill="none"/>"#,
        a = num(x0),
        b = num(y0),
        c = num(y1),
        d = num(x1)
    );
    let dt = tick_step(t_max);
    let mut t = 0.0;
    while t <= t_max + 1e-9 {
        let (x, _) = px(t, 0.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            num(x),
            num(y0 + 16.0),
            format_args!("{:.3}", t)
                .to_string()
                .trim_end_matches('0')
                .trim_end_matches('.')
        );
        t += dt;
    }
    let dy = tick_step(y_max);
    let mut v = 0.0;
    while v <= y_max + 1e-9 {
        let (_, y) = px(0.0, v);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
            num(x0 - 6.0),
            num(y + 4.0),
            format_args!("{:.3}", v)
                .to_string()
                .trim_end_matches('0')
                .trim_end_matches('.')
        );
        v += dy;
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">t (s)</text>"#,
        num((x0 + x1) / 2.0),
        num(SIZE - 15.0)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">{y_label}</text>"#,
        num((y0 + y1) / 2.0),
        num((y0 + y1) / 2.0)
    );
    if let Some((name, level)) = floor {
        let (_, y) = px(0.0, level);
        let _ = writeln!(
            out,
            r#"<line class="floor" x1="{}" y1="{}" x2="{}" y2="{}" stroke="red" stroke-dasharray="5 3"/><text x="{}" y="{}" font-size="11" fill="red">{name}</text>"#,
            num(x0),
            num(y),
            num(x1),
            num(y),
            num(x1 - 30.0),
            num(y - 4.0)
        );
    }
    for (name, col, pts) in &series {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(t, v)| {
                let (x, y) = px(t, v);
                format!("{},{}", num(x), num(y))
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" points="{}" fill="none" stroke="{col}" stroke-width="1"><title>{name}</title></polyline>"#,
            coords.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<TrajectoryRow> {
        let mut out = Vec::new();
        for k in 0..5 {
            let t = k as f64 * 0.5;
            for id in 1..=3u32 {
                out.push(TrajectoryRow {
                    t,
                    agent_id: id,
                    x: id as f64 * 2.0 + t,
                    y: -t,
                    theta: 0.0,
                    gamma: 0.0,
                    u: 1.0,
                    omega: 0.0,
                    value: (id != 3).then_some(0.5),
                    min_dij: 2.0,
                    di0: 1.0,
                });
            }
        }
        out
    }

    fn ctx() -> PlotContext {
        PlotContext {
            world: Some(WorldConfig::reference()),
            body_radius: Some(0.75),
            destinations: [(1, Vec2::new(4.0, -2.0)), (2, Vec2::new(6.0, -2.0))].into(),
        }
    }

    #[test]
    fn trajectories_without_times_have_no_markers() {
        let svg = plot_svg(&rows(), &ctx(), PlotMode::Trajectories, &[]);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains(r#"version="1.1""#));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches(r#"class="destination""#).count(), 2);
        assert_eq!(svg.matches(r#"class="snapshot""#).count(), 0);
        let with = plot_svg(&rows(), &ctx(), PlotMode::Trajectories, &[0.0, 1.0]);
        assert_eq!(with.matches(r#"class="snapshot""#).count(), 6);
    }

    #[test]
    fn distance_modes() {
        let svg = plot_svg(&rows(), &ctx(), PlotMode::DistanceToDest, &[]);
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert!(svg.contains("t (s)"));
        let svg = plot_svg(&rows(), &ctx(), PlotMode::InterAgentDistances, &[]);
        assert_eq!(svg.matches(r#"class="series""#).count(), 3);
        assert!(svg.contains(r#"class="floor""#));
    }

    #[test]
    fn output_is_deterministic() {
        for mode in [
            PlotMode::Trajectories,
            PlotMode::DistanceToDest,
            PlotMode::InterAgentDistances,
        ] {
            assert_eq!(
                plot_svg(&rows(), &ctx(), mode, &[1.0]),
                plot_svg(&rows(), &ctx(), mode, &[1.0])
            );
        }
    }

    #[test]
    fn fallback_context_uses_final_positions() {
        let c = PlotContext::from_rows(&rows());
        assert_eq!(c.destinations.len(), 2);
        assert_eq!(c.destinations[&1], Vec2::new(4.0, -2.0));
        let svg = plot_svg(&rows(), &c, PlotMode::Trajectories, &[]);
        assert!(!svg.contains("stroke-dasharray=\"6 4\""));
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(10.0), 2.0);
        assert_eq!(tick_step(1.3), 0.5);
        assert_eq!(tick_step(14.37), 5.0);
    }
}

pub mod plot;
pub mod scenario;
pub mod trajectory;

pub use plot::{plot_svg, PlotContext, PlotMode};
pub use scenario::{parse_scenario, serialize_scenario, ScenarioFile};
pub use trajectory::{emit_trajectory, read_trajectory, TrajectoryRow};

//! Shared fixtures for the benchmarks under `benches/`.

use ctvio::estimator::{build_problem, FreezeFlags, NoiseConfig, Problem, ProblemInputs};
use ctvio::io::format_events;
use ctvio::sensors::{Event, GravityModel};
use ctvio::simulator::{perturb_trajectory, simulate, SimConfig, SimOutput};

/// A short synthetic run: `duration` seconds of the default point or line
/// scenario.
pub fn scenario(lines: bool, duration: f64) -> SimOutput {
    let mut c = if lines { SimConfig::default_lines() } else { SimConfig::default() };
    c.trajectory.duration = duration;
    simulate(&c).expect("valid default scenario")
}

/// The estimation problem for `sim`, started from a perturbed ground truth.
pub fn problem(sim: &SimOutput) -> Problem {
    build_problem(ProblemInputs {
        events: &sim.events,
        associations: &sim.associations,
        imu: &sim.imu,
        map: &sim.map,
        intrinsics: sim.intrinsics,
        trajectory: perturb_trajectory(&sim.trajectory, 0.02, 1f64.to_radians(), 1),
        params: sim.params,
        noise: NoiseConfig::default(),
        freeze: FreezeFlags::default(),
        gravity: GravityModel::default(),
    })
    .expect("consistent scenario")
}

/// `n` events in the on-disk text format.
pub fn event_text(n: usize) -> String {
    let events: Vec<Event> = (0..n)
        .map(|i| {
            let k = i as f64;
            Event::new(k * 5e-6, (k * 0.37) % 240.0, (k * 0.61) % 180.0, if i % 3 == 0 { 1 } else { -1 })
        })
        .collect();
    format_events(&events)
}

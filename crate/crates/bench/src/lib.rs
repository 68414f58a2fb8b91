//! Fixtures shared by the benchmarks.

use breathmap::{extract_frame, generate, ImagingModel, ImagingParams, RssFrame, ScenarioConfig, Simulation};

/// A simulated apartment trace (33 nodes, 4 channels).
pub fn apartment() -> Simulation {
    generate(&ScenarioConfig::apartment(1)).expect("preset is valid")
}

/// The first full window of a simulation.
pub fn first_frame(sim: &Simulation, window: usize) -> RssFrame {
    extract_frame(&sim.trace.series, window - 1, window).expect("trace is longer than one window")
}

/// Imaging model for the nap layout.
pub fn nap_model() -> ImagingModel {
    let sim = generate(&ScenarioConfig {
        duration_s: 60.0,
        ..ScenarioConfig::nap(1)
    })
    .expect("preset is valid");
    ImagingModel::build(&sim.trace.nodes, &sim.trace.links(), ImagingParams::default()).expect("model builds")
}

//! Behavioral memristor model: current, state dynamics, variability and
//! ramp-sweep simulation.

mod model;
mod params;
mod ramp;

pub use model::{
    composite_conductance, device_current, sample_variability, series_resistance, solve_terminal,
    state_rate, step_state, VariabilityDraw, CURRENT_FLOOR, MAX_APPLIED_VOLTAGE, MAX_STATE_STEP,
    RATE_CAP, SOLVER_MAX_ITERATIONS, SOLVER_TOLERANCE,
};
pub use params::{DeviceParams, ParamName};
pub use ramp::{loop_area, simulate_ramp, simulate_ramp_with, IVTrace, RampConfig, Sample};

/// Default read (probe) voltage.
pub const READ_VOLTAGE: f64 = 0.1;

//! Closed-form summary of the benchmark device at several flux biases:
//! effective inductance, Taylor coefficients of the SNAIL potential,
//! predicted propagation time, and characteristic impedance.
//!
//! Run with: cargo run --example device_info

use twpasim::cli::device_info_json;
use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{FluxBias, FluxBiasScheme};

fn main() -> twpasim::Result<()> {
    for flux in [0.0, 0.25, 0.5] {
        let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, flux));
        println!("--- flux = {flux} Φ₀ ---");
        println!("{}", device_info_json(&spec)?);
    }
    Ok(())
}

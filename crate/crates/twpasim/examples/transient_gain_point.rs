//! Time-domain gain measurement at the benchmark operating point:
//! pump 4.415 GHz at −79 dBm, signal 4.215 GHz at −110 dBm, zero flux.
//! The signal output power is referred to the same measurement on a
//! matched through connection (calibration run). Takes ~10 s.
//!
//! Run with: cargo run --example transient_gain_point

use twpasim::analysis::{transient_gain, GainExtraction};
use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{FluxBias, FluxBiasScheme};
use twpasim::transient::{SolverSettings, Tone};

fn main() -> twpasim::Result<()> {
    let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, 0.0));
    let pump = Tone {
        frequency: 4.415e9,
        power_dbm: -79.0,
        phase: 0.0,
    };
    let f_s = 4.215e9;
    let started = std::time::Instant::now();
    let gain = transient_gain(
        &spec,
        pump,
        f_s,
        &GainExtraction::default(),
        &SolverSettings::default(),
    )?;
    println!(
        "transient gain at {:.3} GHz: {gain:.3} dB ({:.1} s wall time)",
        f_s / 1e9,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

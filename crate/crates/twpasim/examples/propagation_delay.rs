//! Launch a pump tone into the 250-cell ladder and measure how long the
//! front takes to reach the output port.
//!
//! Run with: cargo run --example propagation_delay

use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{build_snail_twpa, FluxBias, FluxBiasScheme};
use twpasim::transient::{propagation_time, simulate, DriveSpec, SolverSettings, Tone};

fn main() -> twpasim::Result<()> {
    let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, 0.0));
    let net = build_snail_twpa(&spec, false)?;

    let drive = DriveSpec {
        tones: vec![Tone {
            frequency: 4.415e9,
            power_dbm: -79.0,
            phase: 0.0,
        }],
        total_time: 20e-9,
        record: Default::default(),
    };

    let started = std::time::Instant::now();
    let ts = simulate(&net, &drive, &SolverSettings::default())?;
    let elapsed = started.elapsed();

    println!(
        "simulated {:.1} ns in {} steps ({:.2} s wall time)",
        ts.duration() * 1e9,
        ts.time.len() - 1,
        elapsed.as_secs_f64()
    );
    for threshold in [0.02, 0.05, 0.1, 0.2] {
        match propagation_time(&ts, threshold) {
            Ok(t) => println!("threshold {threshold:>5}: arrival at {:.4} ns", t * 1e9),
            Err(e) => println!("threshold {threshold:>5}: {e}"),
        }
    }
    Ok(())
}

//! Harmonic-balance gain sweep at half a flux quantum: solve the pump
//! steady state once, then probe the small-signal scattering across the
//! band. Takes ~30 s.
//!
//! Run with: cargo run --example hb_gain_sweep

use twpasim::analysis::{sweep_gain, GainMethod, SweepSpec};
use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{FluxBias, FluxBiasScheme};
use twpasim::transient::Tone;

fn main() -> twpasim::Result<()> {
    let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, 0.5));
    let pump = Tone {
        frequency: 4.415e9,
        power_dbm: -78.0,
        phase: 0.0,
    };
    let sweep = SweepSpec::linspace(2.5e9, 6.0e9, 15, pump);
    let started = std::time::Instant::now();
    let curve = sweep_gain(&spec, GainMethod::HarmonicBalance, &sweep)?;
    println!("{}", curve.to_csv());
    for f in &curve.failures {
        println!("# skipped {:.4} GHz: {}", f.signal_frequency / 1e9, f.message);
    }
    println!("# {:.1} s wall time", started.elapsed().as_secs_f64());
    Ok(())
}

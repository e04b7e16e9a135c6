//! The external flux can be applied two ways: as ideal phase sources in
//! each SNAIL loop, or as a DC current through a mutual inductance into a
//! small inductor inserted in the loop. Both should produce the same
//! device. Takes ~20 s.
//!
//! Run with: cargo run --example flux_bias_schemes

use twpasim::analysis::{transient_gain, GainExtraction};
use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{FluxBias, FluxBiasScheme};
use twpasim::transient::{SolverSettings, Tone};

fn main() -> twpasim::Result<()> {
    let pump = Tone {
        frequency: 4.415e9,
        power_dbm: -78.0,
        phase: 0.0,
    };
    let f_s = 4.215e9;
    for scheme in [FluxBiasScheme::PhaseSource, FluxBiasScheme::MutualLoop] {
        let spec = TwpaDeviceSpec::snail250(FluxBias::new(scheme, 0.5));
        let gain = transient_gain(
            &spec,
            pump,
            f_s,
            &GainExtraction::default(),
            &SolverSettings::default(),
        )?;
        println!("{scheme:?}: gain {gain:.3} dB at {:.3} GHz", f_s / 1e9);
    }
    Ok(())
}

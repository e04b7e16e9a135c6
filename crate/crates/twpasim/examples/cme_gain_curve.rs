//! Closed-form coupled-mode-equation gain across the band, at both
//! benchmark operating points. Runs in well under a second.
//!
//! Run with: cargo run --example cme_gain_curve

use twpasim::analysis::{cme_gain, idler_frequency};
use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{FluxBias, FluxBiasScheme};
use twpasim::transient::Tone;

fn main() {
    for (flux, dbm) in [(0.0, -79.0), (0.5, -78.0)] {
        let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, flux));
        let pump = Tone {
            frequency: 4.415e9,
            power_dbm: dbm,
            phase: 0.0,
        };
        println!("--- flux = {flux} Φ₀, pump {dbm} dBm at 4.415 GHz ---");
        println!("{:>10} {:>10} {:>9}", "f_s (GHz)", "f_i (GHz)", "G (dB)");
        for i in 0..21 {
            let f_s = 2.5e9 + i as f64 * 0.15e9;
            match cme_gain(&spec, pump, f_s) {
                Ok(g) => println!(
                    "{:>10.3} {:>10.3} {:>9.3}",
                    f_s / 1e9,
                    idler_frequency(pump.frequency, f_s) / 1e9,
                    g
                ),
                Err(e) => println!("{:>10.3}  {e}", f_s / 1e9),
            }
        }
    }
}

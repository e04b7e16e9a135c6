//! Compare the three gain engines — closed-form coupled-mode equations,
//! time-domain transient, and harmonic balance — on a shared frequency
//! grid at half a flux quantum. Takes ~1 min.
//!
//! Run with: cargo run --example compare_methods

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
    let sweep = SweepSpec::linspace(3.215e9, 5.615e9, 5, pump);

    println!(
        "{:>10} {:>12} {:>12} {:>12}",
        "f_s (GHz)", "cme (dB)", "transient", "harm. bal."
    );
    let methods = [
        GainMethod::CoupledMode,
        GainMethod::Transient,
        GainMethod::HarmonicBalance,
    ];
    let mut columns = Vec::new();
    for method in methods {
        let started = std::time::Instant::now();
        let curve = sweep_gain(&spec, method, &sweep)?;
        columns.push((curve, started.elapsed().as_secs_f64()));
    }
    for &f_s in &sweep.signal_frequencies {
        print!("{:>10.3}", f_s / 1e9);
        for (curve, _) in &columns {
            match curve.gain_at(f_s) {
                Some(g) => print!(" {g:>12.3}"),
                None => print!(" {:>12}", "-"),
            }
        }
        println!();
    }
    for (curve, secs) in &columns {
        println!("# {} took {secs:.1} s", curve.method);
    }
    Ok(())
}

//! Drive the full RSJ model with pump + signal and look at the output
//! spectrum: four-wave mixing generates an idler at 2f_p − f_s.
//! Takes a few seconds.
//!
//! Run with: cargo run --example idler_spectrum

use twpasim::analysis::{idler_frequency, signal_power_dbm, spectrum};
use twpasim::device::TwpaDeviceSpec;
use twpasim::netlist::{build_snail_twpa, FluxBias, FluxBiasScheme};
use twpasim::transient::{simulate, DriveSpec, SolverSettings, Tone};

fn main() -> twpasim::Result<()> {
    let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, 0.0));
    let net = build_snail_twpa(&spec, false)?;
    let f_p = 4.415e9;
    let f_s = 4.215e9;
    let f_i = idler_frequency(f_p, f_s);
    let drive = DriveSpec {
        tones: vec![
            Tone { frequency: f_p, power_dbm: -79.0, phase: 0.0 },
            Tone { frequency: f_s, power_dbm: -110.0, phase: 0.0 },
        ],
        total_time: 20e-9,
        record: Default::default(),
    };
    let ts = simulate(&net, &drive, &SolverSettings::default())?;

    // Exact-frequency projections of the output current.
    for (name, f) in [("pump", f_p), ("signal", f_s), ("idler", f_i)] {
        let p = signal_power_dbm(&ts, f_p, f, spec.port_impedance, 0.4)?;
        println!("{name:>7} at {:.3} GHz: {p:>8.2} dBm", f / 1e9);
    }

    // Coarse spectral floor for context.
    let out = ts.signal("I(Pout)").unwrap();
    let tail = ts.time.len() * 2 / 5;
    let sp = spectrum(&out.samples[tail..], ts.time[1] - ts.time[0])?;
    let mut mags: Vec<f64> = sp.amplitudes.iter().map(|a| a.norm()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = mags[mags.len() / 2];
    println!(
        "median spectral floor: {:.2} dB relative to the idler bin",
        20.0 * (floor / mags[mags.len() - 3]).log10()
    );
    Ok(())
}

//! Spectra, gain extraction and frequency sweeps.
//!
//! Transient gain uses an exact least-squares projection of the recorded
//! port current onto the known tone frequencies (signal, idler, pump and its
//! sidebands). Solving the small Gram system removes finite-window leakage
//! between those components exactly, which matters because the pump can sit
//! 30 dB above the signal. The input reference comes from an identical run
//! through a matched through connection, so the quoted gain is relative to
//! the available input power.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::device::TwpaDeviceSpec;
use crate::hbal::{small_signal_sparams, solve_pump, HbSettings};
use crate::linalg::BandedMatrix;
use crate::netlist::{build_snail_twpa, build_through};
use crate::transient::{simulate, DriveSpec, SolverSettings, TimeSeries, Tone};
use crate::{dbm_to_watts, watts_to_dbm, Error, Result};

// ---------------------------------------------------------------------------
// Spectra

/// One-sided spectrum with RMS amplitude normalization: a commensurate tone
/// of amplitude A appears as a single bin of magnitude A/√2, and
/// Σ|x|²·dt = Σ|X|²/df (Parseval) holds exactly.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<Complex64>,
    /// Bin spacing in Hz.
    pub df: f64,
}

/// One-sided spectrum of uniformly sampled data with spacing `dt`.
pub fn spectrum(samples: &[f64], dt: f64) -> Result<Spectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain("spectrum needs at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::domain("sample spacing must be > 0"));
    }
    let mut buf: Vec<Complex64> = samples
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    let n_bins = n / 2 + 1;
    let mut frequencies = Vec::with_capacity(n_bins);
    let mut amplitudes = Vec::with_capacity(n_bins);
    for (k, amp) in buf.iter().take(n_bins).enumerate() {
        let scale = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0 / n as f64
        } else {
            std::f64::consts::SQRT_2 / n as f64
        };
        frequencies.push(k as f64 * df);
        amplitudes.push(amp * scale);
    }
    Ok(Spectrum {
        frequencies,
        amplitudes,
        df,
    })
}

impl Spectrum {
    /// CSV rows `f_Hz,amp_re,amp_im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("f_Hz,amp_re,amp_im\n");
        for (f, a) in self.frequencies.iter().zip(&self.amplitudes) {
            out.push_str(&format!("{f:.9e},{:.9e},{:.9e}\n", a.re, a.im));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Tone projection

/// Exact projection of `samples` onto a single tone: Î = (2/N)Σ x e^(−i2πft),
/// returned as the mean power |Î|²·R/2 the tone delivers into `impedance`.
pub fn tone_power(time: &[f64], samples: &[f64], frequency: f64, impedance: f64) -> Result<f64> {
    if time.len() != samples.len() || time.is_empty() {
        return Err(Error::domain("time and sample arrays must match"));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (&t, &x) in time.iter().zip(samples) {
        let phase = -std::f64::consts::TAU * frequency * t;
        acc += x * Complex64::new(phase.cos(), phase.sin());
    }
    let amp = acc * 2.0 / time.len() as f64;
    Ok(amp.norm_sqr() * impedance / 2.0)
}

/// Least-squares fit of `samples` to cos/sin pairs at `frequencies` (plus a
/// constant), returning one complex amplitude per frequency with the
/// convention x(t) ≈ Σ Re(c_j · e^(i2πf_j t)).
pub fn multi_tone_fit(time: &[f64], samples: &[f64], frequencies: &[f64]) -> Result<Vec<Complex64>> {
    if time.len() != samples.len() || time.len() < 2 * frequencies.len() + 1 {
        return Err(Error::domain("not enough samples for the tone basis"));
    }
    let nb = 2 * frequencies.len() + 1;
    // Basis evaluation per sample: [1, cos f0, sin f0, cos f1, …].
    let mut gram = BandedMatrix::<f64>::new(nb, nb - 1, nb - 1);
    let mut rhs = vec![0.0; nb];
    let mut row = vec![0.0; nb];
    for (&t, &x) in time.iter().zip(samples) {
        row[0] = 1.0;
        for (j, &f) in frequencies.iter().enumerate() {
            let ph = std::f64::consts::TAU * f * t;
            row[2 * j + 1] = ph.cos();
            row[2 * j + 2] = ph.sin();
        }
        for i in 0..nb {
            rhs[i] += row[i] * x;
            for j in 0..nb {
                gram.add(i, j, row[i] * row[j]);
            }
        }
    }
    gram.solve(&mut rhs)
        .map_err(|_| Error::domain("degenerate tone basis (duplicate or aliased frequencies)"))?;
    Ok(frequencies
        .iter()
        .enumerate()
        .map(|(j, _)| Complex64::new(rhs[2 * j + 1], -rhs[2 * j + 2]))
        .collect())
}

// ---------------------------------------------------------------------------
// Coupled-mode gain

/// Degenerate-pump idler frequency 2f_p − f_s.
pub fn idler_frequency(f_p: f64, f_s: f64) -> f64 {
    2.0 * f_p - f_s
}

/// Four-wave-mixing coupled-mode parameters of a device at one operating
/// point. Wavenumbers are per cell (dimensionless).
#[derive(Debug, Clone, Copy)]
pub struct CmeParams {
    pub k_p: f64,
    pub k_s: f64,
    pub k_i: f64,
    /// Parametric coupling rate per cell.
    pub kappa: f64,
    /// Total phase mismatch per cell including self/cross phase modulation.
    pub delta_k_total: f64,
    /// Pump phase amplitude per cell, rad.
    pub pump_phase: f64,
    pub n_cells: usize,
}

impl CmeParams {
    /// Signal power gain over `x` cells:
    /// G = cosh²(gx) + (Δk/2)²·(sinh(gx)/g)², g² = κ² − (Δk/2)².
    pub fn gain_linear(&self, x: f64) -> f64 {
        let g2 = self.kappa * self.kappa - 0.25 * self.delta_k_total * self.delta_k_total;
        let (a, b) = cosh_sinhc(g2, x);
        a * a + (0.5 * self.delta_k_total * b).powi(2)
    }

    pub fn gain_db(&self) -> f64 {
        10.0 * self.gain_linear(self.n_cells as f64).log10()
    }
}

/// (cosh(gx), sinh(gx)/g) continued through g² ≤ 0.
fn cosh_sinhc(g2: f64, x: f64) -> (f64, f64) {
    if g2 > 1e-30 {
        let g = g2.sqrt();
        (f64::cosh(g * x), f64::sinh(g * x) / g)
    } else if g2 < -1e-30 {
        let q = (-g2).sqrt();
        (f64::cos(q * x), f64::sin(q * x) / q)
    } else {
        (1.0, x)
    }
}

/// Discrete-ladder dispersion: k(ω) = 2 asin((ω/2)·√(L_eff(ω)·C_g)) per cell,
/// with L_eff = L/(1 − ω²·L·C_snail) the junction-capacitance-dressed cell
/// inductance. Errors outside the passband.
fn ladder_wavenumber(omega: f64, l: f64, c_snail: f64, c_g: f64) -> Result<f64> {
    let det = 1.0 - omega * omega * l * c_snail;
    if det <= 0.0 {
        return Err(Error::domain(format!(
            "frequency {:.4} GHz is above the cell plasma resonance",
            omega / std::f64::consts::TAU / 1e9
        )));
    }
    let arg = 0.5 * omega * (l / det * c_g).sqrt();
    if arg >= 1.0 {
        return Err(Error::domain(format!(
            "frequency {:.4} GHz is outside the ladder passband",
            omega / std::f64::consts::TAU / 1e9
        )));
    }
    Ok(2.0 * arg.asin())
}

/// Coupled-mode parameters for `spec` pumped by `pump` at signal `f_s`.
pub fn cme_params(spec: &TwpaDeviceSpec, pump: Tone, f_s: f64) -> Result<CmeParams> {
    spec.validate()?;
    if !(f_s > 0.0) || !(pump.frequency > 0.0) {
        return Err(Error::domain("frequencies must be > 0"));
    }
    let f_i = idler_frequency(pump.frequency, f_s);
    if f_i <= 0.0 {
        return Err(Error::domain("signal frequency beyond 2·f_p has no idler"));
    }
    if (f_s - pump.frequency).abs() < 1e-6 * pump.frequency {
        return Err(Error::domain("signal frequency coincides with the pump"));
    }

    let flux = spec.flux_bias.target_flux;
    // Coefficients c2..c4 of the cell potential about its minimum; the
    // derivatives u2 = 2c2 and u4 = 24c4 set the inductance and the Kerr
    // coefficient u4/(6·u2).
    let taylor = crate::device::snail_taylor_coefficients(&spec.cell, flux, 4)?;
    let u2 = 2.0 * taylor[0];
    let u4 = 24.0 * taylor[2];
    let gamma = u4 / (6.0 * u2);
    let ic = spec.cell.large_junction.critical_current;
    let l = crate::device::REDUCED_FLUX_QUANTUM / (ic * u2);
    // Junction capacitances across the cell: n in series in the large arm in
    // parallel with the area-scaled small junction.
    let c_snail = spec.cell.large_junction.capacitance
        * (1.0 / spec.cell.n_large as f64 + spec.cell.junction_ratio);
    let c_g = spec.cell.ground_capacitance;

    let tau = std::f64::consts::TAU;
    let k_p = ladder_wavenumber(tau * pump.frequency, l, c_snail, c_g)?;
    let k_s = ladder_wavenumber(tau * f_s, l, c_snail, c_g)?;
    let k_i = ladder_wavenumber(tau * f_i, l, c_snail, c_g)?;

    // Pump phase amplitude per cell from the launched current amplitude on a
    // line of impedance Z = √(L_eff/C_g) at the pump frequency.
    let det_p = 1.0 - (tau * pump.frequency).powi(2) * l * c_snail;
    let z_line = (l / det_p / c_g).sqrt();
    let i_amp = (2.0 * dbm_to_watts(pump.power_dbm) / z_line).sqrt();
    let a_p = i_amp / (ic * u2 * k_p);

    let ap2 = a_p * a_p;
    let kappa = (3.0 * gamma.abs() / 8.0) * k_p * k_p * (k_s * k_i).sqrt() * ap2;
    let alpha_p = -(3.0 * gamma / 8.0) * k_p.powi(3) * ap2;
    let alpha_s = -(3.0 * gamma / 4.0) * k_p * k_p * k_s * ap2;
    let alpha_i = -(3.0 * gamma / 4.0) * k_p * k_p * k_i * ap2;
    let delta_k_total = (2.0 * k_p - k_s - k_i) + 2.0 * alpha_p - alpha_s - alpha_i;

    Ok(CmeParams {
        k_p,
        k_s,
        k_i,
        kappa,
        delta_k_total,
        pump_phase: a_p * k_p,
        n_cells: spec.n_cells,
    })
}

/// Analytic coupled-mode signal gain in dB.
pub fn cme_gain(spec: &TwpaDeviceSpec, pump: Tone, f_s: f64) -> Result<f64> {
    Ok(cme_params(spec, pump, f_s)?.gain_db())
}

// ---------------------------------------------------------------------------
// Transient gain extraction

/// Settings for gain extraction from a time-domain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainExtraction {
    /// Simulated time in s.
    pub total_time: f64,
    /// Probe tone power in dBm.
    pub signal_dbm: f64,
    /// Fraction of the record discarded before the analysis window, covering
    /// ramp-up and line propagation.
    pub settle_fraction: f64,
}

impl Default for GainExtraction {
    fn default() -> Self {
        GainExtraction {
            total_time: 40e-9,
            signal_dbm: -110.0,
            settle_fraction: 0.7,
        }
    }
}

/// Tone basis for the projection: signal, its pump sidebands, and pump
/// harmonics, deduplicated and clipped to the usable band.
fn projection_basis(f_p: f64, f_s: f64, nyquist: f64) -> Vec<f64> {
    let mut freqs = Vec::new();
    for m in -3i32..=3 {
        let f = (f_s + m as f64 * f_p).abs();
        freqs.push(f);
    }
    for k in 1..=3 {
        freqs.push(k as f64 * f_p);
    }
    freqs.retain(|&f| f > 0.0 && f < 0.95 * nyquist);
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    freqs.dedup_by(|a, b| (*a - *b).abs() < 1.0);
    freqs
}

/// Analysis window: the tail of the record past the settle fraction, trimmed
/// to an integer number of pump–signal beat periods.
fn analysis_window(ts: &TimeSeries, f_p: f64, f_s: f64, settle_fraction: f64) -> Result<(usize, usize)> {
    let n = ts.time.len();
    let total = ts.duration();
    let df = (f_p - f_s).abs();
    let avail = total * (1.0 - settle_fraction);
    let mut t_beat = if df > 0.0 { 1.0 / df } else { f64::INFINITY };
    if !(t_beat <= avail) {
        // Degenerate or very long beat: snap to periods of the faster tone.
        let f_ref = f_s.max(f_p);
        if !(f_ref > 0.0) {
            return Err(Error::domain(
                "analysis window needs a nonzero tone frequency",
            ));
        }
        t_beat = 1.0 / f_ref;
    }
    let n_beats = (avail / t_beat).floor();
    if n_beats < 1.0 {
        return Err(Error::domain(format!(
            "record too short: {:.3} ns left after settling but one beat period is {:.3} ns",
            avail * 1e9,
            t_beat * 1e9
        )));
    }
    let window = n_beats * t_beat;
    let t_start = total - window;
    let start = ts
        .time
        .iter()
        .position(|&t| t >= t_start)
        .unwrap_or(n - 1);
    Ok((start, n))
}

fn signal_power_in_run(
    ts: &TimeSeries,
    f_p: f64,
    f_s: f64,
    impedance: f64,
    settle_fraction: f64,
) -> Result<f64> {
    let (start, end) = analysis_window(ts, f_p, f_s, settle_fraction)?;
    let time = &ts.time[start..end];
    let out = ts
        .signal("I(Pout)")
        .ok_or_else(|| Error::domain("output port current not recorded"))?;
    let samples = &out.samples[start..end];
    let dt = ts.time[1] - ts.time[0];
    let basis = projection_basis(f_p, f_s, 0.5 / dt);
    let amps = multi_tone_fit(time, samples, &basis)?;
    let idx = basis
        .iter()
        .position(|&f| (f - f_s).abs() < 1.0)
        .ok_or(Error::MissingFrequency(f_s))?;
    Ok(amps[idx].norm_sqr() * impedance / 2.0)
}

/// Gain in dB at `f_s`: signal power in `output` referred to the same
/// measurement on `reference` (typically a matched through-line calibration
/// run with the identical drive).
pub fn gain_point(
    reference: &TimeSeries,
    output: &TimeSeries,
    f_p: f64,
    f_s: f64,
    impedance: f64,
    settle_fraction: f64,
) -> Result<f64> {
    let p_out = signal_power_in_run(output, f_p, f_s, impedance, settle_fraction)?;
    let p_ref = signal_power_in_run(reference, f_p, f_s, impedance, settle_fraction)?;
    if !(p_ref > 0.0) {
        return Err(Error::domain("calibration run produced no signal power"));
    }
    Ok(10.0 * (p_out / p_ref).log10())
}

/// Transient signal gain of the device in dB: signal output power referred
/// to the same measurement on a matched through connection. Uses the
/// lossless netlist variant so that the result is comparable with the
/// harmonic-balance and coupled-mode models, which are lossless by
/// construction.
pub fn transient_gain(
    spec: &TwpaDeviceSpec,
    pump: Tone,
    f_s: f64,
    extraction: &GainExtraction,
    solver: &SolverSettings,
) -> Result<f64> {
    if (f_s - pump.frequency).abs() < 1e-6 * pump.frequency {
        return Err(Error::domain("signal frequency coincides with the pump"));
    }
    let tones = vec![
        pump,
        Tone {
            frequency: f_s,
            power_dbm: extraction.signal_dbm,
            phase: 0.0,
        },
    ];
    let drive = DriveSpec {
        tones,
        total_time: extraction.total_time,
        record: Default::default(),
    };
    let device = build_snail_twpa(spec, true)?;
    let ts = simulate(&device, &drive, solver)?;
    let through = build_through(spec.port_impedance);
    let ts_ref = simulate(&through, &drive, solver)?;
    gain_point(
        &ts_ref,
        &ts,
        pump.frequency,
        f_s,
        spec.port_impedance,
        extraction.settle_fraction,
    )
}

// ---------------------------------------------------------------------------
// Sweeps

/// Which engine computes a gain curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMethod {
    Transient,
    HarmonicBalance,
    CoupledMode,
}

impl std::fmt::Display for GainMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GainMethod::Transient => "transient",
            GainMethod::HarmonicBalance => "harmonic-balance",
            GainMethod::CoupledMode => "coupled-mode",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub signal_frequency: f64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub signal_frequency: f64,
    pub message: String,
}

/// A gain-vs-frequency curve; failed points are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainCurve {
    pub method: GainMethod,
    pub pump: Tone,
    pub flux: f64,
    pub points: Vec<GainPoint>,
    pub failures: Vec<PointFailure>,
}

impl GainCurve {
    /// CSV with commented header metadata and rows `f_s_Hz,gain_dB`.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# method={} f_p_Hz={:.9e} pump_dBm={} flux={}\nf_s_Hz,gain_dB\n",
            self.method, self.pump.frequency, self.pump.power_dbm, self.flux
        );
        for p in &self.points {
            out.push_str(&format!("{:.9e},{:.6}\n", p.signal_frequency, p.gain_db));
        }
        out
    }

    pub fn gain_at(&self, f_s: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.signal_frequency - f_s).abs() < 1.0)
            .map(|p| p.gain_db)
    }
}

/// Sweep description shared by all methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub signal_frequencies: Vec<f64>,
    pub pump: Tone,
    #[serde(default)]
    pub extraction: GainExtraction,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub hb: HbSettings,
}

impl SweepSpec {
    /// `n` points spanning [f_lo, f_hi] inclusive.
    pub fn linspace(f_lo: f64, f_hi: f64, n: usize, pump: Tone) -> Self {
        let freqs = (0..n)
            .map(|i| {
                if n == 1 {
                    f_lo
                } else {
                    f_lo + (f_hi - f_lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        SweepSpec {
            signal_frequencies: freqs,
            pump,
            extraction: GainExtraction::default(),
            solver: SolverSettings::default(),
            hb: HbSettings::default(),
        }
    }
}

/// Compute a gain curve with the chosen engine. Points the engine cannot
/// evaluate (outside the passband, mode collisions, non-convergence) are
/// reported in `failures`.
pub fn sweep_gain(spec: &TwpaDeviceSpec, method: GainMethod, sweep: &SweepSpec) -> Result<GainCurve> {
    spec.validate()?;
    let results: Vec<(f64, Result<f64>)> = match method {
        GainMethod::Transient => sweep
            .signal_frequencies
            .par_iter()
            .map(|&f_s| {
                (
                    f_s,
                    transient_gain(spec, sweep.pump, f_s, &sweep.extraction, &sweep.solver),
                )
            })
            .collect(),
        GainMethod::CoupledMode => sweep
            .signal_frequencies
            .par_iter()
            .map(|&f_s| (f_s, cme_gain(spec, sweep.pump, f_s)))
            .collect(),
        GainMethod::HarmonicBalance => {
            let net = build_snail_twpa(spec, true)?;
            let state = solve_pump(&net, sweep.pump, &sweep.hb)?;
            sweep
                .signal_frequencies
                .par_iter()
                .map(|&f_s| {
                    (
                        f_s,
                        small_signal_sparams(&state, f_s, sweep.hb.n_modes)
                            .map(|sp| sp.gain_db()),
                    )
                })
                .collect()
        }
    };

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (f_s, r) in results {
        match r {
            Ok(gain_db) => points.push(GainPoint {
                signal_frequency: f_s,
                gain_db,
            }),
            Err(e) => failures.push(PointFailure {
                signal_frequency: f_s,
                message: e.to_string(),
            }),
        }
    }
    Ok(GainCurve {
        method,
        pump: sweep.pump,
        flux: spec.flux_bias.target_flux,
        points,
        failures,
    })
}

/// Convenience: signal output power of a run in dBm (projection onto f_s).
pub fn signal_power_dbm(
    ts: &TimeSeries,
    f_p: f64,
    f_s: f64,
    impedance: f64,
    settle_fraction: f64,
) -> Result<f64> {
    signal_power_in_run(ts, f_p, f_s, impedance, settle_fraction).map(watts_to_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use crate::netlist::{FluxBias, FluxBiasScheme};

    fn lcg_noise(n: usize) -> Vec<f64> {
        let mut state = 0x2545F4914F6CDD1Du64;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn spectrum_satisfies_parseval() {
        for n in [256usize, 255] {
            let x = lcg_noise(n);
            let dt = 1e-11;
            let sp = spectrum(&x, dt).unwrap();
            let time_energy: f64 = x.iter().map(|v| v * v).sum::<f64>() * dt;
            let freq_energy: f64 =
                sp.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() / sp.df;
            assert_relative_eq!(time_energy, freq_energy, max_relative = 1e-9);
        }
    }

    #[test]
    fn commensurate_tone_lands_in_one_bin() {
        let n = 1024;
        let dt = 1e-11;
        let df = 1.0 / (n as f64 * dt);
        let f = 37.0 * df;
        let a = 2.5e-6;
        let x: Vec<f64> = (0..n)
            .map(|i| a * (std::f64::consts::TAU * f * i as f64 * dt).cos())
            .collect();
        let sp = spectrum(&x, dt).unwrap();
        for (k, amp) in sp.amplitudes.iter().enumerate() {
            if k == 37 {
                assert_relative_eq!(
                    amp.norm(),
                    a / std::f64::consts::SQRT_2,
                    max_relative = 1e-9
                );
            } else {
                assert!(amp.norm() < 1e-12 * a, "leakage in bin {k}");
            }
        }
    }

    #[test]
    fn tone_power_recovers_pure_tone() {
        let n = 4000;
        let dt = 1e-12;
        let f = 2.5e9; // exactly 10 cycles over the window
        let a = 3e-7;
        let time: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let x: Vec<f64> = time
            .iter()
            .map(|&t| a * (std::f64::consts::TAU * f * t).cos())
            .collect();
        let p = tone_power(&time, &x, f, 50.0).unwrap();
        assert_relative_eq!(p, a * a * 50.0 / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn multi_tone_fit_separates_unequal_tones() {
        // A strong "pump" 30 dB above a weak "signal", deliberately not
        // commensurate with the window. Plain projection would leak badly;
        // the least-squares fit must recover both amplitudes.
        let n = 3000;
        let dt = 3.29e-12;
        let (f1, a1) = (4.415e9, 1e-6);
        let (f2, a2) = (4.215e9, 3.1e-8);
        let time: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let x: Vec<f64> = time
            .iter()
            .map(|&t| {
                a1 * (std::f64::consts::TAU * f1 * t + 0.3).cos()
                    + a2 * (std::f64::consts::TAU * f2 * t - 1.1).cos()
            })
            .collect();
        let amps = multi_tone_fit(&time, &x, &[f1, f2]).unwrap();
        assert_relative_eq!(amps[0].norm(), a1, max_relative = 1e-9);
        assert_relative_eq!(amps[1].norm(), a2, max_relative = 1e-9);
        assert_abs_diff_eq!(amps[0].arg(), 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(amps[1].arg(), -1.1, epsilon = 1e-9);
    }

    fn benchmark_cme(flux: f64, pump_dbm: f64, f_s: f64) -> CmeParams {
        let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, flux));
        let pump = Tone {
            frequency: 4.415e9,
            power_dbm: pump_dbm,
            phase: 0.0,
        };
        cme_params(&spec, pump, f_s).unwrap()
    }

    /// Independent check of the closed-form gain: integrate the two-mode
    /// equations u' = iκ v̄ e^(iΔx), v' = iκ ū e^(iΔx) with RK4 and compare.
    #[test]
    fn cme_closed_form_matches_ode_integration() {
        use num_complex::Complex64 as C;
        for (flux, p, f_s) in [(0.0, -79.0, 4.215e9), (0.5, -78.0, 3.8e9), (0.0, -85.0, 2.0e9)] {
            let cme = benchmark_cme(flux, p, f_s);
            let (kappa, delta) = (cme.kappa, cme.delta_k_total);
            let x_end = cme.n_cells as f64;
            let n_steps = 20000;
            let h = x_end / n_steps as f64;
            let mut u = C::new(1.0, 0.0);
            let mut v = C::new(0.0, 0.0);
            let f = |x: f64, u: C, v: C| {
                let e = C::new(0.0, delta * x).exp();
                (
                    C::new(0.0, kappa) * v.conj() * e,
                    C::new(0.0, kappa) * u.conj() * e,
                )
            };
            let mut x = 0.0;
            for _ in 0..n_steps {
                let (k1u, k1v) = f(x, u, v);
                let (k2u, k2v) = f(x + h / 2.0, u + k1u * (h / 2.0), v + k1v * (h / 2.0));
                let (k3u, k3v) = f(x + h / 2.0, u + k2u * (h / 2.0), v + k2v * (h / 2.0));
                let (k4u, k4v) = f(x + h, u + k3u * h, v + k3v * h);
                u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
                v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
                x += h;
            }
            let g_ode = u.norm_sqr();
            let g_closed = cme.gain_linear(x_end);
            assert_relative_eq!(g_ode, g_closed, max_relative = 1e-6);
        }
    }

    #[test]
    fn cme_gain_grows_with_pump_power() {
        let g = |p: f64| {
            benchmark_cme(0.0, p, 4.215e9).gain_db()
        };
        let (g1, g2, g3) = (g(-85.0), (g)(-82.0), g(-79.0));
        assert!(g1 < g2 && g2 < g3, "{g1} {g2} {g3}");
        assert!(g3 > 3.0, "benchmark gain only {g3} dB");
    }

    #[test]
    fn cme_rejects_out_of_band_points() {
        let spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, 0.0));
        let pump = Tone {
            frequency: 4.415e9,
            power_dbm: -79.0,
            phase: 0.0,
        };
        assert!(cme_gain(&spec, pump, 4.415e9).is_err()); // on the pump
        assert!(cme_gain(&spec, pump, 9.0e9).is_err()); // no idler in band
    }

    #[test]
    fn gain_curve_csv_has_header_and_rows() {
        let curve = GainCurve {
            method: GainMethod::CoupledMode,
            pump: Tone {
                frequency: 4.415e9,
                power_dbm: -79.0,
                phase: 0.0,
            },
            flux: 0.0,
            points: vec![GainPoint {
                signal_frequency: 4.215e9,
                gain_db: 12.5,
            }],
            failures: vec![],
        };
        let csv = curve.to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# method=coupled-mode"));
        assert_eq!(lines.next().unwrap(), "f_s_Hz,gain_dB");
        assert!(lines.next().unwrap().ends_with(",12.500000"));
    }
}

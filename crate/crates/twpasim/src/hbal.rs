//! Frequency-domain solver in two stages.
//!
//! Stage 1 ([`solve_pump`]): the pump steady state as a truncated Fourier
//! series of every node phase at harmonics 0..K of the pump, found by Newton
//! iteration on the harmonic KCL residual. The junction nonlinearity is
//! evaluated by sampling sin(δ(t)) over one pump period and projecting back;
//! its Jacobian is assembled from cos(δ(t))·basis products, which is the
//! exact derivative of the sampled residual.
//!
//! Stage 2 ([`small_signal_sparams`]): a small probe at f_s rides on the
//! pump. Junctions act as time-varying inductors; the cos(δ_pump(t)) Fourier
//! coefficients couple the probe to sidebands at the signed frequencies
//! f_s + m·f_p. One complex banded solve per drive direction yields the
//! multi-mode scattering parameters and the parametric gain.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::device::REDUCED_FLUX_QUANTUM;
use crate::linalg::BandedMatrix;
use crate::netlist::{ElementKind, Netlist};
use crate::transient::{BranchKind, ReducedNet, Tone};
use crate::{dbm_to_watts, Error, Result};

/// Harmonic-balance solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HbSettings {
    /// Pump harmonics kept in the steady state (DC is always included).
    pub n_harmonics: usize,
    /// Sidebands kept in the small-signal stage.
    pub n_modes: usize,
    /// Newton convergence threshold, relative to the circuit current scale.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for HbSettings {
    fn default() -> Self {
        HbSettings {
            n_harmonics: 8,
            n_modes: 10,
            tolerance: 1e-9,
            max_iters: 50,
        }
    }
}

/// Converged pump steady state, ready for small-signal probing.
pub struct PumpSteadyState {
    rn: ReducedNet,
    pump: Tone,
    settings: HbSettings,
    /// Node-major coefficient vector: per unknown [a0, a1, b1, …, aK, bK].
    x: Vec<f64>,
    /// Two-sided Fourier coefficients of cos(δ(t)) per junction branch,
    /// m = 0..2K (negative m by conjugation).
    junction_cos: Vec<Option<Vec<Complex64>>>,
    pub residual_norm: f64,
    /// Number of pump-power continuation stages used (0 = direct solve).
    pub continuation_stages: usize,
}

const COMPS: fn(usize) -> usize = |k| 2 * k + 1;

fn sample_count(n_harmonics: usize) -> usize {
    // Oversample the period well beyond Nyquist for the kept harmonics so
    // aliasing of high junction harmonics is negligible.
    (8 * (n_harmonics + 1)).next_power_of_two()
}

/// Basis value of component `comp` at sample angle θ.
/// comp 0 ↦ 1, comp 2k−1 ↦ cos kθ, comp 2k ↦ sin kθ.
fn basis(comp: usize, theta: f64) -> f64 {
    if comp == 0 {
        1.0
    } else {
        let k = comp.div_ceil(2) as f64;
        if comp % 2 == 1 {
            (k * theta).cos()
        } else {
            (k * theta).sin()
        }
    }
}

fn projection_weight(comp: usize, n_samples: usize) -> f64 {
    if comp == 0 {
        1.0 / n_samples as f64
    } else {
        2.0 / n_samples as f64
    }
}

/// One unknown per DC-connected component (through inductors and junctions)
/// that has no DC path to ground. See `PumpAssembler::dc_anchors`.
fn dc_gauge_anchors(rn: &ReducedNet) -> Vec<usize> {
    let n = rn.n_unknowns;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut grounded = vec![false; n];
    for br in &rn.branches {
        let conducts_dc = matches!(
            br.kind,
            BranchKind::Inductance { .. } | BranchKind::Josephson { .. }
        );
        if !conducts_dc {
            continue;
        }
        match (br.a, br.b) {
            (Some(a), Some(b)) => {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    let g = grounded[ra] || grounded[rb];
                    parent[ra] = rb;
                    grounded[rb] = g;
                }
            }
            (Some(a), None) | (None, Some(a)) => {
                let ra = find(&mut parent, a);
                grounded[ra] = true;
            }
            (None, None) => {}
        }
    }
    let mut anchors = Vec::new();
    let mut seen = vec![false; n];
    for u in 0..n {
        let r = find(&mut parent, u);
        if !grounded[r] && !seen[r] {
            seen[r] = true;
            anchors.push(u);
        }
    }
    anchors
}

/// Write the linearized AC response at the pump fundamental into the
/// coefficient vector `x`, linearizing each junction about the static branch
/// phase already present in `x`.
fn seed_linear_fundamental(
    rn: &ReducedNet,
    x: &mut [f64],
    omega: f64,
    k: usize,
    drive: (f64, f64),
) {
    let comps = COMPS(k);
    let n = rn.n_unknowns;
    if n == 0 {
        return;
    }
    let band = rn.bandwidth.min(n - 1);
    let mut mat = BandedMatrix::<Complex64>::new(n, band, band);
    for br in &rn.branches {
        let mut delta_dc = br.offset;
        if let Some(a) = br.a {
            delta_dc += x[a * comps];
        }
        if let Some(b) = br.b {
            delta_dc -= x[b * comps];
        }
        let y = match br.kind {
            BranchKind::Inductance { g_l, .. } => Complex64::new(g_l, 0.0),
            BranchKind::Capacitance { cc } => Complex64::new(-cc * omega * omega, 0.0),
            BranchKind::Resistance { g_r } => Complex64::new(0.0, g_r * omega),
            BranchKind::Josephson { ic, cc, .. } => {
                Complex64::new(ic * delta_dc.cos() - cc * omega * omega, 0.0)
            }
            BranchKind::Sine { .. } | BranchKind::Dc { .. } => continue,
        };
        for (node, sign) in [(br.a, 1.0), (br.b, -1.0)] {
            let Some(u) = node else { continue };
            if let Some(a) = br.a {
                mat.add(u, a, sign * y);
            }
            if let Some(b) = br.b {
                mat.add(u, b, -(sign * y));
            }
        }
    }
    let mut rhs = vec![Complex64::ZERO; n];
    if let Some(u) = rn.input_unknown {
        // Phasor of amp·cos(ωt+θ) with the x(t) = Re(X e^(iωt)) convention.
        rhs[u] = Complex64::new(drive.0, drive.1);
    }
    if mat.solve(&mut rhs).is_err() {
        return; // fall back to the static guess
    }
    for (u, phi) in rhs.iter().enumerate() {
        x[u * comps + 1] = phi.re;
        x[u * comps + 2] = -phi.im;
    }
}

/// Reject netlists the frequency-domain solver cannot represent.
fn check_supported(rn: &ReducedNet, net: &Netlist) -> Result<()> {
    for br in &rn.branches {
        match br.kind {
            BranchKind::Josephson { g_r, .. } if g_r != 0.0 => {
                return Err(Error::config(
                    "harmonic balance requires the lossless netlist variant \
                     (junction shunt resistances present)",
                ));
            }
            BranchKind::Resistance { .. }
                if !matches!(net.elements[br.element].kind, ElementKind::Port { .. }) =>
            {
                return Err(Error::config(
                    "harmonic balance supports resistances at ports only",
                ));
            }
            BranchKind::Sine { .. } => {
                return Err(Error::config(
                    "sinusoidal netlist sources are not supported in harmonic \
                     balance; drive through the input port instead",
                ));
            }
            _ => {}
        }
    }
    Ok(())
}

struct PumpAssembler<'a> {
    rn: &'a ReducedNet,
    omega: f64,
    k: usize,
    n_samples: usize,
    /// cos/sin sample tables: [harmonic−1][sample].
    basis_table: Vec<Vec<f64>>,
    /// Newton scratch: sampled branch phase per junction evaluation.
    delta_samples: Vec<f64>,
    /// Gauge anchors: no branch carries DC current to ground in the ladder
    /// (capacitors and port resistors block DC), so a uniform shift of all
    /// node phases is a null direction of the KCL system. For each DC
    /// component not touching ground, one node gets an extra `g·a0` term;
    /// because the unanchored DC rows sum to zero this fixes a0 = 0 exactly.
    dc_anchors: Vec<usize>,
    anchor_g: f64,
}

impl<'a> PumpAssembler<'a> {
    fn new(rn: &'a ReducedNet, omega: f64, k: usize) -> Self {
        let n_samples = sample_count(k);
        let comps = COMPS(k);
        let mut basis_table = Vec::with_capacity(comps - 1);
        for comp in 1..comps {
            basis_table.push(
                (0..n_samples)
                    .map(|j| basis(comp, std::f64::consts::TAU * j as f64 / n_samples as f64))
                    .collect(),
            );
        }
        PumpAssembler {
            rn,
            omega,
            k,
            n_samples,
            basis_table,
            delta_samples: vec![0.0; n_samples],
            dc_anchors: dc_gauge_anchors(rn),
            anchor_g: rn.current_scale,
        }
    }

    fn branch_delta_comps(&self, x: &[f64], br_idx: usize, out: &mut [f64]) {
        let comps = COMPS(self.k);
        let br = &self.rn.branches[br_idx];
        out.fill(0.0);
        if let Some(a) = br.a {
            for (o, xv) in out.iter_mut().zip(&x[a * comps..(a + 1) * comps]) {
                *o += xv;
            }
        }
        if let Some(b) = br.b {
            for (o, xv) in out.iter_mut().zip(&x[b * comps..(b + 1) * comps]) {
                *o -= xv;
            }
        }
        out[0] += br.offset;
    }

    fn sample_delta(&mut self, comps_vec: &[f64]) {
        for j in 0..self.n_samples {
            let mut d = comps_vec[0];
            for (comp, table) in self.basis_table.iter().enumerate() {
                d += comps_vec[comp + 1] * table[j];
            }
            self.delta_samples[j] = d;
        }
    }

    /// Residual and Jacobian of one Newton step. `jac` may be `None` for a
    /// residual-only evaluation.
    fn assemble(
        &mut self,
        x: &[f64],
        drive: (f64, f64), // (amp·cosθ, amp·sinθ) of the pump tone
        residual: &mut [f64],
        mut jac: Option<&mut BandedMatrix<f64>>,
    ) {
        let comps = COMPS(self.k);
        residual.fill(0.0);
        if let Some(j) = jac.as_deref_mut() {
            j.reset();
        }
        let mut delta = vec![0.0; comps];
        let mut current = vec![0.0; comps];
        let mut local = vec![0.0; comps * comps];

        for br_idx in 0..self.rn.branches.len() {
            let br = self.rn.branches[br_idx];
            self.branch_delta_comps(x, br_idx, &mut delta);
            current.fill(0.0);
            local.fill(0.0);
            match br.kind {
                BranchKind::Inductance { g_l, bias } => {
                    for c in 0..comps {
                        current[c] = g_l * delta[c];
                        local[c * comps + c] = g_l;
                    }
                    current[0] += bias;
                }
                BranchKind::Capacitance { cc } => {
                    self.stamp_capacitive(cc, &delta, &mut current, &mut local);
                }
                BranchKind::Resistance { g_r } => {
                    for k in 1..=self.k {
                        let w = k as f64 * self.omega;
                        let (ia, ib) = (2 * k - 1, 2 * k);
                        // d/dt(a cos + b sin) = ω(b cos − a sin)
                        current[ia] = g_r * w * delta[ib];
                        current[ib] = -g_r * w * delta[ia];
                        local[ia * comps + ib] = g_r * w;
                        local[ib * comps + ia] = -g_r * w;
                    }
                }
                BranchKind::Josephson { ic, cc, .. } => {
                    self.stamp_capacitive(cc, &delta, &mut current, &mut local);
                    self.sample_delta(&delta);
                    let n = self.n_samples;
                    for i in 0..comps {
                        let w = projection_weight(i, n);
                        let mut acc = 0.0;
                        for j in 0..n {
                            let bi = if i == 0 {
                                1.0
                            } else {
                                self.basis_table[i - 1][j]
                            };
                            acc += self.delta_samples[j].sin() * bi;
                        }
                        current[i] += ic * w * acc;
                        for l in 0..comps {
                            let mut da = 0.0;
                            for j in 0..n {
                                let bi = if i == 0 {
                                    1.0
                                } else {
                                    self.basis_table[i - 1][j]
                                };
                                let bl = if l == 0 {
                                    1.0
                                } else {
                                    self.basis_table[l - 1][j]
                                };
                                da += self.delta_samples[j].cos() * bi * bl;
                            }
                            local[i * comps + l] += ic * w * da;
                        }
                    }
                }
                BranchKind::Dc { current: i0 } => {
                    current[0] = i0;
                }
                BranchKind::Sine { .. } => unreachable!("rejected by check_supported"),
            }

            for (node, sign) in [(br.a, 1.0), (br.b, -1.0)] {
                let Some(u) = node else { continue };
                for c in 0..comps {
                    residual[u * comps + c] += sign * current[c];
                }
                if let Some(j) = jac.as_deref_mut() {
                    for c in 0..comps {
                        for l in 0..comps {
                            let d = local[c * comps + l];
                            if d == 0.0 {
                                continue;
                            }
                            if let Some(a) = br.a {
                                j.add(u * comps + c, a * comps + l, sign * d);
                            }
                            if let Some(b) = br.b {
                                j.add(u * comps + c, b * comps + l, -sign * d);
                            }
                        }
                    }
                }
            }
        }

        if let Some(u) = self.rn.input_unknown {
            // amp·cos(ωt+θ) = amp cosθ·cos ωt − amp sinθ·sin ωt.
            residual[u * comps + 1] -= drive.0;
            residual[u * comps + 2] += drive.1;
        }

        for &u in &self.dc_anchors {
            residual[u * comps] += self.anchor_g * x[u * comps];
            if let Some(j) = jac.as_deref_mut() {
                j.add(u * comps, u * comps, self.anchor_g);
            }
        }
    }

    fn stamp_capacitive(&self, cc: f64, delta: &[f64], current: &mut [f64], local: &mut [f64]) {
        let comps = COMPS(self.k);
        for k in 1..=self.k {
            let w2 = (k as f64 * self.omega).powi(2);
            for c in [2 * k - 1, 2 * k] {
                current[c] += -cc * w2 * delta[c];
                local[c * comps + c] += -cc * w2;
            }
        }
    }
}

fn newton_pump(
    asm: &mut PumpAssembler,
    x: &mut [f64],
    drive: (f64, f64),
    tol: f64,
    max_iters: usize,
) -> Result<f64> {
    let comps = COMPS(asm.k);
    let n = asm.rn.n_unknowns * comps;
    let band = (asm.rn.bandwidth + 1) * comps - 1;
    let kl = band.min(n.saturating_sub(1));
    let mut jac = BandedMatrix::<f64>::new(n.max(1), kl, kl);
    let mut residual = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_res = vec![0.0; n];
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let l2_norm = |v: &[f64]| v.iter().map(|r| r * r).sum::<f64>().sqrt();
    let trace = std::env::var_os("TWPASIM_HB_TRACE").is_some();
    for iter in 0..max_iters {
        asm.assemble(x, drive, &mut residual, Some(&mut jac));
        let norm = inf_norm(&residual);
        if norm < tol {
            return Ok(norm);
        }
        if !norm.is_finite() {
            return Err(Error::HbDivergence { residual: norm });
        }
        let norm2 = l2_norm(&residual);
        for r in residual.iter_mut() {
            *r = -*r;
        }
        jac.solve(&mut residual)
            .map_err(|_| Error::HbDivergence { residual: norm })?;
        // Backtracking line search on the L2 residual norm.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            for i in 0..n {
                trial[i] = x[i] + alpha * residual[i];
            }
            asm.assemble(&trial, drive, &mut trial_res, None);
            let trial_norm2 = l2_norm(&trial_res);
            if trial_norm2.is_finite()
                && (trial_norm2 < norm2 * (1.0 - 1e-4 * alpha) || inf_norm(&trial_res) < tol)
            {
                x.copy_from_slice(&trial);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if trace {
            eprintln!(
                "hb newton iter {iter}: |F|_inf {norm:.3e} |F|_2 {norm2:.3e} alpha {alpha:.4}"
            );
        }
        if !accepted {
            return Err(Error::HbDivergence { residual: norm });
        }
    }
    asm.assemble(x, drive, &mut residual, None);
    let norm = inf_norm(&residual);
    if norm < tol {
        Ok(norm)
    } else {
        Err(Error::HbDivergence { residual: norm })
    }
}

/// Solve for the pump steady state of `net` (lossless variant) driven by
/// `pump` at the input port. Falls back to pump-power continuation in 1 dB
/// steps when the direct Newton solve fails.
pub fn solve_pump(net: &Netlist, pump: Tone, settings: &HbSettings) -> Result<PumpSteadyState> {
    if !(pump.frequency > 0.0) {
        return Err(Error::domain("pump frequency must be > 0"));
    }
    if settings.n_harmonics == 0 {
        return Err(Error::domain("n_harmonics must be >= 1"));
    }
    let rn = ReducedNet::build(net)?;
    check_supported(&rn, net)?;

    let omega = std::f64::consts::TAU * pump.frequency;
    let k = settings.n_harmonics;
    let comps = COMPS(k);
    let amp = (8.0 * dbm_to_watts(pump.power_dbm) / rn.port_impedance_in).sqrt();
    let drive_of = |a: f64| (a * pump.phase.cos(), a * pump.phase.sin());
    let tol = settings.tolerance * rn.current_scale;

    let mut asm = PumpAssembler::new(&rn, omega, k);
    let mut x = vec![0.0; rn.n_unknowns * comps];
    // Static operating point (pump off), then a linearized AC solve about it
    // as the Newton starting guess.
    newton_pump(&mut asm, &mut x, (0.0, 0.0), tol, settings.max_iters)?;
    let x_static = x.clone();
    let seed = |x: &mut Vec<f64>, a: f64| {
        x.copy_from_slice(&x_static);
        seed_linear_fundamental(&rn, x, omega, k, drive_of(a));
    };
    seed(&mut x, amp);
    let mut continuation_stages = 0usize;
    // Cap the direct attempt: a good seed converges in well under a dozen
    // iterations, and when it does not the continuation fallback is cheaper
    // than a long stalled line search.
    let direct_iters = settings.max_iters.min(12);
    let residual_norm = match newton_pump(&mut asm, &mut x, drive_of(amp), tol, direct_iters) {
        Ok(norm) => norm,
        Err(_) => {
            // Restart well below the target power and walk up in adaptive dB
            // steps, warm-starting each stage from the previous solution. A
            // failed stage rolls back to the last converged state and halves
            // the step, so strongly nonlinear operating points are approached
            // as gently as needed.
            let start_db = -20.0;
            seed(&mut x, amp * 10f64.powf(start_db / 20.0));
            let mut level_db = start_db;
            let mut norm = newton_pump(
                &mut asm,
                &mut x,
                drive_of(amp * 10f64.powf(level_db / 20.0)),
                tol,
                settings.max_iters,
            )?;
            continuation_stages += 1;
            let mut x_good = x.clone();
            let mut step_db = 1.0;
            let min_step_db = 1.0 / 64.0;
            while level_db < 0.0 {
                let next_db = (level_db + step_db).min(0.0);
                let a = amp * 10f64.powf(next_db / 20.0);
                match newton_pump(&mut asm, &mut x, drive_of(a), tol, settings.max_iters) {
                    Ok(stage_norm) => {
                        norm = stage_norm;
                        level_db = next_db;
                        x_good.copy_from_slice(&x);
                        continuation_stages += 1;
                        step_db = (step_db * 2.0).min(1.0);
                    }
                    Err(err) => {
                        x.copy_from_slice(&x_good);
                        step_db *= 0.5;
                        if step_db < min_step_db {
                            return Err(err);
                        }
                    }
                }
            }
            norm
        }
    };

    // Freeze the cos(δ(t)) spectra needed by the small-signal stage.
    let n = asm.n_samples;
    let mut delta = vec![0.0; comps];
    let mut junction_cos = Vec::with_capacity(rn.branches.len());
    for br_idx in 0..rn.branches.len() {
        if !matches!(rn.branches[br_idx].kind, BranchKind::Josephson { .. }) {
            junction_cos.push(None);
            continue;
        }
        asm.branch_delta_comps(&x, br_idx, &mut delta);
        asm.sample_delta(&delta);
        let max_m = (2 * k).min(n / 2 - 1);
        let mut coeffs = Vec::with_capacity(max_m + 1);
        for m in 0..=max_m {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, d) in asm.delta_samples.iter().enumerate() {
                let theta = std::f64::consts::TAU * (m * j) as f64 / n as f64;
                acc += d.cos() * Complex64::new(theta.cos(), -theta.sin());
            }
            coeffs.push(acc / n as f64);
        }
        junction_cos.push(Some(coeffs));
    }

    Ok(PumpSteadyState {
        rn,
        pump,
        settings: *settings,
        x,
        junction_cos,
        residual_norm,
        continuation_stages,
    })
}

impl PumpSteadyState {
    pub fn pump(&self) -> Tone {
        self.pump
    }

    pub fn n_harmonics(&self) -> usize {
        self.settings.n_harmonics
    }

    /// Largest fundamental-harmonic phase swing over all junctions, rad.
    pub fn max_junction_phase_swing(&self) -> f64 {
        let comps = COMPS(self.settings.n_harmonics);
        let mut swing = 0.0f64;
        let mut delta = vec![0.0; comps];
        for (br_idx, coeffs) in self.junction_cos.iter().enumerate() {
            if coeffs.is_none() {
                continue;
            }
            delta.fill(0.0);
            let br = &self.rn.branches[br_idx];
            if let Some(a) = br.a {
                for (o, xv) in delta.iter_mut().zip(&self.x[a * comps..(a + 1) * comps]) {
                    *o += xv;
                }
            }
            if let Some(b) = br.b {
                for (o, xv) in delta.iter_mut().zip(&self.x[b * comps..(b + 1) * comps]) {
                    *o -= xv;
                }
            }
            swing = swing.max(delta[1].hypot(delta[2]));
        }
        swing
    }

    /// Pump power in dBm dissipated in a port resistor at harmonic `m`,
    /// computed from the node-phase phasor at the port node:
    /// V = j·m·ω_p·(Φ₀/2π)·Φ_m, P = |V|²/(2R).
    fn port_harmonic_power_dbm(&self, unknown: usize, impedance: f64, m: usize) -> f64 {
        let comps = COMPS(self.settings.n_harmonics);
        debug_assert!(m >= 1 && 2 * m < comps);
        let a = self.x[unknown * comps + 2 * m - 1];
        let b = self.x[unknown * comps + 2 * m];
        let omega = std::f64::consts::TAU * self.pump.frequency * m as f64;
        let v = omega * crate::device::REDUCED_FLUX_QUANTUM * a.hypot(b);
        10.0 * (v * v / (2.0 * impedance) / 1e-3).log10()
    }

    /// Pump fundamental power delivered to the output port resistor, dBm.
    pub fn pump_output_power_dbm(&self) -> f64 {
        self.port_harmonic_power_dbm(
            self.rn.output_unknown.expect("output port is grounded"),
            self.rn.port_impedance_out,
            1,
        )
    }

    /// Pump fundamental power dissipated in the input port resistor, dBm.
    pub fn pump_input_power_dbm(&self) -> f64 {
        self.port_harmonic_power_dbm(
            self.rn.input_unknown.expect("input port is grounded"),
            self.rn.port_impedance_in,
            1,
        )
    }

    /// Reconstruct cos(δ(t)) of junction branch `br_idx` at pump phase θ
    /// from the stored spectrum. Used for verification.
    #[cfg(test)]
    fn cos_delta_at(&self, br_idx: usize, theta: f64) -> Option<f64> {
        let coeffs = self.junction_cos[br_idx].as_ref()?;
        let mut v = coeffs[0].re;
        for (m, c) in coeffs.iter().enumerate().skip(1) {
            v += 2.0 * (c * Complex64::new(0.0, m as f64 * theta).exp()).re;
        }
        Some(v)
    }
}

/// Multi-mode small-signal scattering at signal frequency `signal_frequency`
/// on top of a pump steady state.
#[derive(Debug, Clone)]
pub struct SParams {
    pub signal_frequency: f64,
    pub pump_frequency: f64,
    /// Sideband offsets m; mode m sits at the signed frequency f_s + m·f_p.
    pub mode_offsets: Vec<i64>,
    pub mode_frequencies: Vec<f64>,
    /// Wave amplitude leaving the output port in each mode per unit incident
    /// signal wave at the input; the m = 0 entry is S21.
    pub to_output: Vec<Complex64>,
    /// Wave amplitude leaving the input port per unit incident signal wave;
    /// the m = 0 entry is S11.
    pub to_input: Vec<Complex64>,
    pub s11: Complex64,
    pub s21: Complex64,
    pub s12: Complex64,
    pub s22: Complex64,
}

impl SParams {
    /// Signal power gain |S21|² in dB.
    pub fn gain_db(&self) -> f64 {
        20.0 * self.s21.norm().log10()
    }

    /// Photon-weighted scattering sum Σ σ_m (f_s/|f_m|)(|S_in,m|²+|S_out,m|²)
    /// with σ_m the sign of the mode frequency; 1 for a lossless network.
    pub fn manley_rowe_sum(&self) -> f64 {
        let mut sum = 0.0;
        for (i, &f) in self.mode_frequencies.iter().enumerate() {
            let weight = f.signum() * self.signal_frequency / f.abs();
            sum += weight * (self.to_input[i].norm_sqr() + self.to_output[i].norm_sqr());
        }
        sum
    }
}

/// Solve the small-signal problem at `f_s` with `n_modes` sidebands.
///
/// Modes that collide (a mode frequency near zero, or two modes that are
/// mirror images and would couple through conjugation) are rejected with a
/// domain error so sweeps can skip and record the point.
pub fn small_signal_sparams(
    state: &PumpSteadyState,
    f_s: f64,
    n_modes: usize,
) -> Result<SParams> {
    if !(f_s > 0.0) {
        return Err(Error::domain("signal frequency must be > 0"));
    }
    if n_modes == 0 {
        return Err(Error::domain("n_modes must be >= 1"));
    }
    let f_p = state.pump.frequency;
    let lo = -(n_modes as i64 / 2);
    let offsets: Vec<i64> = (lo..lo + n_modes as i64).collect();
    let freqs: Vec<f64> = offsets.iter().map(|&m| f_s + m as f64 * f_p).collect();
    for (i, &fa) in freqs.iter().enumerate() {
        if fa.abs() < 1e-9 * f_p {
            return Err(Error::domain(format!(
                "mode {} sits at zero frequency (f_s = {} Hz)",
                offsets[i], f_s
            )));
        }
        for &fb in &freqs[i + 1..] {
            if (fa + fb).abs() < 1e-9 * f_p {
                return Err(Error::domain(format!(
                    "degenerate sidebands at ±{:.6e} Hz couple through conjugation \
                     (f_s = {} Hz); choose a signal frequency away from multiples of f_p/2",
                    fa.abs(),
                    f_s
                )));
            }
        }
    }
    let idx0 = (-lo) as usize;

    let rn = &state.rn;
    let m = n_modes;
    let n = rn.n_unknowns * m;
    let band = ((rn.bandwidth + 1) * m - 1).min(n.saturating_sub(1));
    let omegas: Vec<f64> = freqs.iter().map(|f| std::f64::consts::TAU * f).collect();

    let mut mat = BandedMatrix::<Complex64>::new(n.max(1), band, band);
    for (br_idx, br) in rn.branches.iter().enumerate() {
        // Per-branch mode-space admittance Y[mi][mj] (phase → current).
        let stamp = |mat: &mut BandedMatrix<Complex64>, mi: usize, mj: usize, y: Complex64| {
            if y == Complex64::ZERO {
                return;
            }
            for (node, sign) in [(br.a, 1.0), (br.b, -1.0)] {
                let Some(u) = node else { continue };
                if let Some(a) = br.a {
                    mat.add(u * m + mi, a * m + mj, sign * y);
                }
                if let Some(b) = br.b {
                    mat.add(u * m + mi, b * m + mj, -(sign * y));
                }
            }
        };
        match br.kind {
            BranchKind::Inductance { g_l, .. } => {
                for mi in 0..m {
                    stamp(&mut mat, mi, mi, Complex64::new(g_l, 0.0));
                }
            }
            BranchKind::Capacitance { cc } => {
                for mi in 0..m {
                    stamp(&mut mat, mi, mi, Complex64::new(-cc * omegas[mi].powi(2), 0.0));
                }
            }
            BranchKind::Resistance { g_r } => {
                for mi in 0..m {
                    stamp(&mut mat, mi, mi, Complex64::new(0.0, g_r * omegas[mi]));
                }
            }
            BranchKind::Josephson { ic, cc, .. } => {
                let coeffs = state.junction_cos[br_idx]
                    .as_ref()
                    .expect("junction spectra stored for every junction");
                for mi in 0..m {
                    stamp(&mut mat, mi, mi, Complex64::new(-cc * omegas[mi].powi(2), 0.0));
                    for mj in 0..m {
                        let d = offsets[mi] - offsets[mj];
                        let c = if (d.unsigned_abs() as usize) < coeffs.len() {
                            let c = coeffs[d.unsigned_abs() as usize];
                            if d < 0 {
                                c.conj()
                            } else {
                                c
                            }
                        } else {
                            Complex64::ZERO
                        };
                        stamp(&mut mat, mi, mj, ic * c);
                    }
                }
            }
            BranchKind::Dc { .. } => {}
            BranchKind::Sine { .. } => unreachable!("rejected by check_supported"),
        }
    }
    mat.factor().map_err(|_| {
        Error::domain("small-signal system is singular at this frequency")
    })?;

    let phasor_v = |phi: Complex64, mi: usize| {
        Complex64::new(0.0, REDUCED_FLUX_QUANTUM * omegas[mi]) * phi
    };
    let (r_in, r_out) = (rn.port_impedance_in, rn.port_impedance_out);
    let i_n = 1.0;

    let solve_drive = |mat: &BandedMatrix<Complex64>, node: Option<usize>| -> Vec<Complex64> {
        let mut rhs = vec![Complex64::ZERO; n.max(1)];
        if let Some(u) = node {
            rhs[u * m + idx0] = Complex64::new(i_n, 0.0);
        }
        mat.solve_factored(&mut rhs);
        rhs
    };

    // Drive at the input port.
    let sol_in = solve_drive(&mat, rn.input_unknown);
    let a_in = i_n * r_in.sqrt() / 2.0;
    let node_phi = |sol: &Vec<Complex64>, node: Option<usize>, mi: usize| {
        node.map_or(Complex64::ZERO, |u| sol[u * m + mi])
    };
    let mut to_input = Vec::with_capacity(m);
    let mut to_output = Vec::with_capacity(m);
    for mi in 0..m {
        let v_in = phasor_v(node_phi(&sol_in, rn.input_unknown, mi), mi);
        let v_out = phasor_v(node_phi(&sol_in, rn.output_unknown, mi), mi);
        let mut b_in = v_in / r_in.sqrt() / a_in;
        if mi == idx0 {
            b_in -= 1.0;
        }
        to_input.push(b_in);
        to_output.push(v_out / r_out.sqrt() / a_in);
    }

    // Drive at the output port for the reverse parameters.
    let sol_out = solve_drive(&mat, rn.output_unknown);
    let a_out = i_n * r_out.sqrt() / 2.0;
    let v_in = phasor_v(node_phi(&sol_out, rn.input_unknown, idx0), idx0);
    let v_out = phasor_v(node_phi(&sol_out, rn.output_unknown, idx0), idx0);
    let s12 = v_in / r_in.sqrt() / a_out;
    let s22 = v_out / r_out.sqrt() / a_out - 1.0;

    Ok(SParams {
        signal_frequency: f_s,
        pump_frequency: f_p,
        mode_offsets: offsets,
        mode_frequencies: freqs,
        s11: to_input[idx0],
        s21: to_output[idx0],
        s12,
        s22,
        to_input,
        to_output,
    })
}

/// CSV export of a frequency sweep of S-parameters, one row per point:
/// `f_Hz,S11_re,S11_im,S21_re,S21_im,S12_re,S12_im,S22_re,S22_im,gain_dB`.
pub fn sparams_to_csv(points: &[SParams]) -> String {
    let mut out = String::from(
        "f_Hz,S11_re,S11_im,S21_re,S21_im,S12_re,S12_im,S22_re,S22_im,gain_dB\n",
    );
    for p in points {
        out.push_str(&format!(
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6}\n",
            p.signal_frequency,
            p.s11.re,
            p.s11.im,
            p.s21.re,
            p.s21.im,
            p.s12.re,
            p.s12.im,
            p.s22.re,
            p.s22.im,
            p.gain_db(),
        ));
    }
    out
}

/// Worst absolute mismatch between the analytic pump Jacobian and a central
/// finite-difference approximation at a non-trivial state, together with the
/// circuit current scale for forming a relative error. Exposed so end-to-end
/// verification suites can audit the Jacobian without reaching into solver
/// internals.
pub fn pump_jacobian_fd_error(
    net: &Netlist,
    pump_frequency: f64,
    n_harmonics: usize,
) -> Result<(f64, f64)> {
    let rn = ReducedNet::build(net)?;
    check_supported(&rn, net)?;
    let comps = COMPS(n_harmonics);
    let n = rn.n_unknowns * comps;
    let omega = std::f64::consts::TAU * pump_frequency;
    let mut asm = PumpAssembler::new(&rn, omega, n_harmonics);

    let mut x = vec![0.0; n];
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = 0.3 * (i as f64 * 0.7).sin();
    }
    let drive = (2e-7, 1e-7);
    let band = (rn.bandwidth + 1) * comps - 1;
    let mut jac = BandedMatrix::<f64>::new(n, band, band);
    let mut res = vec![0.0; n];
    asm.assemble(&x, drive, &mut res, Some(&mut jac));

    let mut rp = vec![0.0; n];
    let mut rm = vec![0.0; n];
    let h = 1e-7;
    let mut worst = 0.0f64;
    for j in 0..n {
        let keep = x[j];
        x[j] = keep + h;
        asm.assemble(&x, drive, &mut rp, None);
        x[j] = keep - h;
        asm.assemble(&x, drive, &mut rm, None);
        x[j] = keep;
        for i in 0..n {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            worst = worst.max((jac.get(i, j) - fd).abs());
        }
    }
    Ok((worst, rn.current_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::TwpaDeviceSpec;
    use crate::netlist::{build_snail_twpa, FluxBias, FluxBiasScheme};
    use num_complex::Complex64 as C;

    fn small_device(n_cells: usize, flux: f64) -> Netlist {
        let mut spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, flux));
        spec.n_cells = n_cells;
        build_snail_twpa(&spec, true).unwrap()
    }

    fn quiet_pump(f: f64) -> Tone {
        Tone {
            frequency: f,
            power_dbm: -300.0,
            phase: 0.0,
        }
    }

    /// Dense complex nodal solve of the same netlist at one frequency with
    /// junctions linearized as L_J ∥ C_J — an independent AC oracle.
    fn dense_ac_voltages(net: &Netlist, omega: f64, drive_node: usize) -> Vec<C> {
        let rn = ReducedNet::build(net).unwrap();
        let n = rn.n_unknowns;
        let mut a = vec![C::ZERO; n * n];
        for br in &rn.branches {
            let y = match br.kind {
                BranchKind::Inductance { g_l, .. } => C::new(g_l, 0.0),
                BranchKind::Capacitance { cc } => C::new(-cc * omega * omega, 0.0),
                BranchKind::Resistance { g_r } => C::new(0.0, g_r * omega),
                BranchKind::Josephson { ic, cc, .. } => C::new(ic - cc * omega * omega, 0.0),
                _ => C::ZERO,
            };
            for (na, sign) in [(br.a, 1.0), (br.b, -1.0)] {
                let Some(u) = na else { continue };
                if let Some(p) = br.a {
                    a[u * n + p] += sign * y;
                }
                if let Some(q) = br.b {
                    a[u * n + q] -= sign * y;
                }
            }
        }
        let mut rhs = vec![C::ZERO; n];
        rhs[rn.node_map[drive_node].0.unwrap()] = C::new(1.0, 0.0);
        // Plain Gaussian elimination with partial pivoting.
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| {
                    a[i * n + col]
                        .norm()
                        .partial_cmp(&a[j * n + col].norm())
                        .unwrap()
                })
                .unwrap();
            if piv != col {
                for c in 0..n {
                    a.swap(col * n + c, piv * n + c);
                }
                rhs.swap(col, piv);
            }
            let d = a[col * n + col];
            for row in col + 1..n {
                let f = a[row * n + col] / d;
                if f == C::ZERO {
                    continue;
                }
                for c in col..n {
                    let v = a[col * n + c];
                    a[row * n + c] -= f * v;
                }
                let v = rhs[col];
                rhs[row] -= f * v;
            }
        }
        for col in (0..n).rev() {
            let mut v = rhs[col];
            for c in col + 1..n {
                v -= a[col * n + c] * rhs[c];
            }
            rhs[col] = v / a[col * n + col];
        }
        // φ phasors → voltage phasors.
        (0..net.n_nodes)
            .map(|node| match rn.node_map[node].0 {
                Some(u) => C::new(0.0, crate::device::REDUCED_FLUX_QUANTUM * omega) * rhs[u],
                None => C::ZERO,
            })
            .collect()
    }

    #[test]
    fn linear_limit_matches_dense_ac_oracle() {
        let net = small_device(6, 0.0);
        let state = solve_pump(&net, quiet_pump(4.415e9), &HbSettings::default()).unwrap();
        let f_s = 4.215e9;
        let sp = small_signal_sparams(&state, f_s, 1).unwrap();

        let omega = std::f64::consts::TAU * f_s;
        let v = dense_ac_voltages(&net, omega, net.input_node());
        let r = 50.0f64;
        let s21_oracle = 2.0 * v[net.output_node()] / (r * 1.0);
        let s11_oracle = 2.0 * v[net.input_node()] / (r * 1.0) - 1.0;
        assert!(
            (sp.s21 - s21_oracle).norm() < 1e-9 * s21_oracle.norm(),
            "S21 {} vs oracle {}",
            sp.s21,
            s21_oracle
        );
        assert!((sp.s11 - s11_oracle).norm() < 1e-9);
    }

    #[test]
    fn pump_jacobian_matches_finite_differences() {
        let net = small_device(3, 0.4);
        let rn = ReducedNet::build(&net).unwrap();
        let k = 3usize;
        let comps = COMPS(k);
        let n = rn.n_unknowns * comps;
        let omega = std::f64::consts::TAU * 4.4e9;
        let mut asm = PumpAssembler::new(&rn, omega, k);

        // A deliberately non-trivial state.
        let mut x = vec![0.0; n];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = 0.3 * ((i as f64 * 0.7).sin());
        }
        let drive = (2e-7, 1e-7);
        let band = (rn.bandwidth + 1) * comps - 1;
        let mut jac = BandedMatrix::<f64>::new(n, band, band);
        let mut res = vec![0.0; n];
        asm.assemble(&x, drive, &mut res, Some(&mut jac));

        let mut rp = vec![0.0; n];
        let mut rm = vec![0.0; n];
        let h = 1e-7;
        let mut worst = 0.0f64;
        for j in 0..n {
            let keep = x[j];
            x[j] = keep + h;
            asm.assemble(&x, drive, &mut rp, None);
            x[j] = keep - h;
            asm.assemble(&x, drive, &mut rm, None);
            x[j] = keep;
            for i in 0..n {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                worst = worst.max((jac.get(i, j) - fd).abs());
            }
        }
        // Scale: junction currents are ~µA, so absolute agreement at 1e-12
        // is ~1e-6 relative.
        assert!(worst < 1e-12, "worst Jacobian mismatch {worst:.3e}");
    }

    #[test]
    fn stored_cos_spectrum_reconstructs_waveform() {
        let net = small_device(4, 0.5);
        let pump = Tone {
            frequency: 4.415e9,
            power_dbm: -86.0,
            phase: 0.3,
        };
        let state = solve_pump(&net, pump, &HbSettings::default()).unwrap();
        let comps = COMPS(state.settings.n_harmonics);
        let asm = PumpAssembler::new(
            &state.rn,
            std::f64::consts::TAU * pump.frequency,
            state.settings.n_harmonics,
        );
        let mut delta = vec![0.0; comps];
        let mut checked = 0;
        for br_idx in 0..state.rn.branches.len() {
            if state.junction_cos[br_idx].is_none() {
                continue;
            }
            asm.branch_delta_comps(&state.x, br_idx, &mut delta);
            for j in 0..7 {
                let theta = std::f64::consts::TAU * j as f64 / 7.0;
                let mut d = delta[0];
                for kk in 1..=state.settings.n_harmonics {
                    d += delta[2 * kk - 1] * (kk as f64 * theta).cos()
                        + delta[2 * kk] * (kk as f64 * theta).sin();
                }
                let direct = d.cos();
                let recon = state.cos_delta_at(br_idx, theta).unwrap();
                assert!(
                    (direct - recon).abs() < 1e-10,
                    "branch {br_idx}: {direct} vs {recon}"
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn pump_off_scattering_is_unitary() {
        let net = small_device(8, 0.0);
        let state = solve_pump(&net, quiet_pump(4.415e9), &HbSettings::default()).unwrap();
        let sp = small_signal_sparams(&state, 3.1e9, 3).unwrap();
        let sum = sp.manley_rowe_sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum = {sum}");
        // Without a pump there is no frequency conversion.
        for (i, &m) in sp.mode_offsets.iter().enumerate() {
            if m != 0 {
                assert!(sp.to_output[i].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pumped_scattering_is_photon_unitary() {
        let net = small_device(12, 0.5);
        let pump = Tone {
            frequency: 4.415e9,
            power_dbm: -84.0,
            phase: 0.0,
        };
        let state = solve_pump(&net, pump, &HbSettings::default()).unwrap();
        let sp = small_signal_sparams(&state, 4.215e9, 10).unwrap();
        let sum = sp.manley_rowe_sum();
        assert!((sum - 1.0).abs() < 1e-4, "sum = {sum}");
    }

    #[test]
    fn mode_collisions_are_rejected() {
        let net = small_device(4, 0.0);
        let state = solve_pump(&net, quiet_pump(4.0e9), &HbSettings::default()).unwrap();
        // f_s = f_p puts mode m = −1 at zero frequency.
        assert!(small_signal_sparams(&state, 4.0e9, 4).is_err());
        // f_s = f_p/2 makes modes m = 0 and m = −1 conjugate mirrors.
        assert!(small_signal_sparams(&state, 2.0e9, 4).is_err());
        // A generic frequency is fine.
        assert!(small_signal_sparams(&state, 3.7654e9, 4).is_ok());
    }

    #[test]
    fn lossy_netlists_are_rejected() {
        let mut spec = TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::PhaseSource, 0.0));
        spec.n_cells = 2;
        let lossy = build_snail_twpa(&spec, false).unwrap();
        assert!(matches!(
            solve_pump(&lossy, quiet_pump(4.4e9), &HbSettings::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn harmonic_truncation_is_converged() {
        let net = small_device(40, 0.5);
        let pump = Tone {
            frequency: 4.415e9,
            power_dbm: -82.0,
            phase: 0.0,
        };
        let gain = |k: usize| {
            let settings = HbSettings {
                n_harmonics: k,
                ..HbSettings::default()
            };
            let state = solve_pump(&net, pump, &settings).unwrap();
            small_signal_sparams(&state, 4.215e9, 10).unwrap().gain_db()
        };
        let g8 = gain(8);
        let g10 = gain(10);
        assert!((g8 - g10).abs() < 0.05, "K=8: {g8} dB, K=10: {g10} dB");
    }
}

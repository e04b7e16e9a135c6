//! Time-domain solver: the nodal phase method with RSJ junctions,
//! trapezoidal integration and per-step Newton iteration.
//!
//! Unknowns are node superconducting phases φ with node voltage
//! V = (Φ₀/2π)·dφ/dt. Junction branches follow the RSJ law
//! I = I_c sin(Δφ) + (Φ₀/2πR_N)·dΔφ/dt + (Φ₀C_J/2π)·d²Δφ/dt²; phase sources
//! impose fixed branch phase offsets and are eliminated by merging their
//! terminal nodes with a phase shift, which keeps the system purely nodal.

use serde::{Deserialize, Serialize};

use crate::device::REDUCED_FLUX_QUANTUM;
use crate::linalg::BandedMatrix;
use crate::netlist::{ElementKind, Netlist};
use crate::{dbm_to_watts, Error, Result};

/// One input tone: frequency in Hz, available power in dBm at the matched
/// input port, phase in rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency: f64,
    pub power_dbm: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Which signals a run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RecordSelection {
    /// Port currents and port-node voltages only.
    #[default]
    Ports,
    /// Every node voltage, port currents, and every junction phase.
    All,
}

/// Input drive applied at the input port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub tones: Vec<Tone>,
    /// Total simulated time in s.
    pub total_time: f64,
    #[serde(default)]
    pub record: RecordSelection,
}

impl DriveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_time > 0.0) {
            return Err(Error::domain("total_time must be > 0"));
        }
        for t in &self.tones {
            if !(t.frequency >= 0.0) {
                return Err(Error::domain("tone frequencies must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Base time step in s.
    pub time_step: f64,
    /// Enable step halving/doubling within [time_step/64, time_step].
    pub adaptive: bool,
    /// Newton convergence threshold, relative to the circuit current scale.
    pub newton_tolerance: f64,
    pub max_newton_iters: usize,
    /// Raised-cosine source ramp duration in s (0 disables the ramp).
    pub ramp_time: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            time_step: 3.29e-12,
            adaptive: false,
            newton_tolerance: 1e-9,
            max_newton_iters: 50,
            ramp_time: 0.5e-9,
        }
    }
}

/// Kind tag for a recorded signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalKind {
    Voltage,
    Current,
    Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub name: String,
    pub kind: SignalKind,
    pub samples: Vec<f64>,
}

/// Sampled node voltages, branch currents and junction phases on a monotone
/// time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub signals: Vec<Signal>,
}

impl TimeSeries {
    pub fn signal(&self, name: &str) -> Option<&Signal> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn duration(&self) -> f64 {
        match (self.time.first(), self.time.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// CSV with header `t_s,<signal name>…`, one row per accepted step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s");
        for s in &self.signals {
            out.push(',');
            out.push_str(&s.name);
        }
        out.push('\n');
        for (i, t) in self.time.iter().enumerate() {
            out.push_str(&format!("{t:.12e}"));
            for s in &self.signals {
                out.push_str(&format!(",{:.12e}", s.samples[i]));
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV format emitted by [`to_csv`](Self::to_csv).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::config("empty CSV"))?;
        let mut cols = header.split(',');
        if cols.next() != Some("t_s") {
            return Err(Error::config("time series CSV must start with t_s column"));
        }
        let names: Vec<&str> = cols.collect();
        let mut time = Vec::new();
        let mut samples: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for line in lines {
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .ok_or_else(|| Error::config("short CSV row"))?
                .parse()
                .map_err(|e| Error::config(format!("bad time value: {e}")))?;
            time.push(t);
            for col in samples.iter_mut() {
                let v: f64 = fields
                    .next()
                    .ok_or_else(|| Error::config("short CSV row"))?
                    .parse()
                    .map_err(|e| Error::config(format!("bad sample: {e}")))?;
                col.push(v);
            }
        }
        let signals = names
            .iter()
            .zip(samples)
            .map(|(name, samples)| Signal {
                name: name.to_string(),
                kind: if name.starts_with("I(") {
                    SignalKind::Current
                } else if name.starts_with("phi(") {
                    SignalKind::Phase
                } else {
                    SignalKind::Voltage
                },
                samples,
            })
            .collect();
        Ok(TimeSeries { time, signals })
    }
}

/// Cumulative energy bookkeeping of a run, all in J.
#[derive(Debug, Clone, Default)]
pub struct EnergyAudit {
    /// Energy delivered by all sources up to each accepted step.
    pub delivered: Vec<f64>,
    /// Energy dissipated in resistive elements (ports, shunts).
    pub dissipated: Vec<f64>,
    /// Energy stored in capacitors, inductors and junctions.
    pub stored: Vec<f64>,
}

/// Instantaneous drive current of `tones` at time `t`, using the Norton
/// convention: a tone of available power P dBm at a matched port of
/// impedance Z₀ contributes amplitude √(8P/Z₀), so that I²Z₀/8 = P.
pub fn source_waveform(tones: &[Tone], port_impedance: f64, t: f64) -> f64 {
    tones
        .iter()
        .map(|tone| {
            tone_amplitude(tone, port_impedance)
                * (std::f64::consts::TAU * tone.frequency * t + tone.phase).cos()
        })
        .sum()
}

fn tone_amplitude(tone: &Tone, port_impedance: f64) -> f64 {
    (8.0 * dbm_to_watts(tone.power_dbm) / port_impedance).sqrt()
}

// ---------------------------------------------------------------------------
// Netlist reduction shared with the harmonic-balance solver.

#[derive(Debug, Clone, Copy)]
pub(crate) enum BranchKind {
    /// I = ic·sin δ + g_r·δ' + cc·δ''.
    Josephson { ic: f64, g_r: f64, cc: f64 },
    /// I = g_l·δ + bias·env(t) (bias from mutual coupling to a dc-driven loop).
    Inductance { g_l: f64, bias: f64 },
    /// I = cc·δ''.
    Capacitance { cc: f64 },
    /// I = g_r·δ'. Ports reduce to their resistance.
    Resistance { g_r: f64 },
    /// I = amplitude·cos(omega·t + phase)·env(t), flowing a → b.
    Sine { amplitude: f64, omega: f64, phase: f64 },
    /// I = current·env(t).
    Dc { current: f64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Branch {
    pub a: Option<usize>,
    pub b: Option<usize>,
    /// Static phase offset: δ = φ_a − φ_b + offset·env(t).
    pub offset: f64,
    pub kind: BranchKind,
    /// Index of the originating netlist element.
    pub element: usize,
}

/// Netlist with phase sources eliminated and mutuals reduced to flux biases.
pub(crate) struct ReducedNet {
    pub n_unknowns: usize,
    /// Original node → (unknown index, phase offset vs that unknown);
    /// unknown `None` means the node is phase-tied to ground.
    pub node_map: Vec<(Option<usize>, f64)>,
    pub branches: Vec<Branch>,
    pub bandwidth: usize,
    pub input_unknown: Option<usize>,
    pub output_unknown: Option<usize>,
    pub port_impedance_in: f64,
    pub port_impedance_out: f64,
    /// Element indices of the two port resistors (for current recording).
    pub port_branch_in: usize,
    pub port_branch_out: usize,
    /// Largest junction critical current, for residual scaling.
    pub current_scale: f64,
}

struct OffsetUnionFind {
    parent: Vec<usize>,
    /// φ_x = φ_parent[x] + shift[x]·env(t)
    shift: Vec<f64>,
}

impl OffsetUnionFind {
    fn new(n: usize) -> Self {
        OffsetUnionFind {
            parent: (0..n).collect(),
            shift: vec![0.0; n],
        }
    }

    fn find(&mut self, x: usize) -> (usize, f64) {
        if self.parent[x] == x {
            return (x, 0.0);
        }
        let (root, up) = self.find(self.parent[x]);
        self.parent[x] = root;
        self.shift[x] += up;
        (root, self.shift[x])
    }

    /// Impose φ_a − φ_b = p.
    fn tie(&mut self, a: usize, b: usize, p: f64) {
        let (ra, sa) = self.find(a);
        let (rb, sb) = self.find(b);
        if ra == rb {
            return; // redundant constraint; builder netlists are consistent
        }
        // φ_ra = φ_a − sa = φ_b + p − sa = φ_rb + sb + p − sa
        self.parent[ra] = rb;
        self.shift[ra] = sb + p - sa;
    }
}

impl ReducedNet {
    pub fn build(net: &Netlist) -> Result<Self> {
        let diags = crate::netlist::validate(net);
        if !diags.is_empty() {
            return Err(Error::config(format!(
                "netlist failed validation: {}",
                diags
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }

        let mut uf = OffsetUnionFind::new(net.n_nodes);
        for el in &net.elements {
            if let ElementKind::PhaseSource { phase } = el.kind {
                uf.tie(el.nodes.0, el.nodes.1, phase);
            }
        }

        // Unknown indices for non-ground roots, in node order (keeps the
        // chain numbering and hence the band structure).
        let ground_root = uf.find(net.ground).0;
        let mut unknown_of_root = vec![None; net.n_nodes];
        let mut n_unknowns = 0;
        for node in 0..net.n_nodes {
            let (root, _) = uf.find(node);
            if root != ground_root && unknown_of_root[root].is_none() && root == node {
                unknown_of_root[root] = Some(n_unknowns);
                n_unknowns += 1;
            }
        }
        // Roots that are not their own node id (possible when a later node
        // became the root) get indices afterwards, still in node order.
        for node in 0..net.n_nodes {
            let (root, _) = uf.find(node);
            if root != ground_root && unknown_of_root[root].is_none() {
                unknown_of_root[root] = Some(n_unknowns);
                n_unknowns += 1;
            }
        }

        let mut node_map = Vec::with_capacity(net.n_nodes);
        for node in 0..net.n_nodes {
            let (root, shift) = uf.find(node);
            node_map.push((unknown_of_root[root], shift));
        }

        // Mutual couplings: the driven side must be an inductor forced by a
        // dc current source sharing its terminals; it reduces to a constant
        // flux bias M·I_dc on the passive side.
        let mut bias_of_inductor: Vec<f64> = vec![0.0; net.elements.len()];
        for (i, el) in net.elements.iter().enumerate() {
            if let ElementKind::Mutual {
                coupling,
                branch_a,
                branch_b,
            } = el.kind
            {
                let (la, lb) = match (&net.elements[branch_a].kind, &net.elements[branch_b].kind) {
                    (
                        ElementKind::Inductor { inductance: la },
                        ElementKind::Inductor { inductance: lb },
                    ) => (*la, *lb),
                    _ => unreachable!("validated above"),
                };
                let driven_current = |idx: usize| -> Option<f64> {
                    let ind = &net.elements[idx];
                    net.elements.iter().find_map(|other| match other.kind {
                        ElementKind::DcCurrentSource { current }
                            if (other.nodes.1, other.nodes.0) == ind.nodes =>
                        {
                            Some(current)
                        }
                        ElementKind::DcCurrentSource { current }
                            if other.nodes == ind.nodes =>
                        {
                            Some(-current)
                        }
                        _ => None,
                    })
                };
                let m = coupling * (la * lb).sqrt();
                if let Some(i_ext) = driven_current(branch_b) {
                    bias_of_inductor[branch_a] += m * i_ext;
                } else if let Some(i_ext) = driven_current(branch_a) {
                    bias_of_inductor[branch_b] += m * i_ext;
                } else {
                    return Err(Error::config(format!(
                        "element {i}: mutual coupling requires one side driven by a dc current source"
                    )));
                }
            }
        }

        let mut branches = Vec::new();
        let mut current_scale: f64 = 0.0;
        let mut source_scale: f64 = 0.0;
        let mut port_branch = [usize::MAX; 2];
        for (i, el) in net.elements.iter().enumerate() {
            let (ua, sa) = node_map[el.nodes.0];
            let (ub, sb) = node_map[el.nodes.1];
            let offset = sa - sb;
            let kind = match el.kind {
                ElementKind::PhaseSource { .. } | ElementKind::Mutual { .. } => continue,
                ElementKind::Inductor { inductance } => BranchKind::Inductance {
                    g_l: REDUCED_FLUX_QUANTUM / inductance,
                    bias: -bias_of_inductor[i] / inductance,
                },
                ElementKind::Capacitor { capacitance } => BranchKind::Capacitance {
                    cc: REDUCED_FLUX_QUANTUM * capacitance,
                },
                ElementKind::Resistor { resistance } => BranchKind::Resistance {
                    g_r: REDUCED_FLUX_QUANTUM / resistance,
                },
                ElementKind::Port { impedance } => {
                    if i == net.input_port {
                        port_branch[0] = branches.len();
                    }
                    if i == net.output_port {
                        port_branch[1] = branches.len();
                    }
                    BranchKind::Resistance {
                        g_r: REDUCED_FLUX_QUANTUM / impedance,
                    }
                }
                ElementKind::Josephson { junction } => {
                    current_scale = current_scale.max(junction.critical_current);
                    BranchKind::Josephson {
                        ic: junction.critical_current,
                        g_r: junction
                            .normal_resistance
                            .map_or(0.0, |rn| REDUCED_FLUX_QUANTUM / rn),
                        cc: REDUCED_FLUX_QUANTUM * junction.capacitance,
                    }
                }
                ElementKind::SinusoidalCurrentSource {
                    amplitude,
                    frequency,
                    phase,
                } => {
                    source_scale = source_scale.max(amplitude.abs());
                    BranchKind::Sine {
                        amplitude,
                        omega: std::f64::consts::TAU * frequency,
                        phase,
                    }
                }
                ElementKind::DcCurrentSource { current } => {
                    source_scale = source_scale.max(current.abs());
                    BranchKind::Dc { current }
                }
            };
            branches.push(Branch {
                a: ua,
                b: ub,
                offset,
                kind,
                element: i,
            });
        }

        let bandwidth = branches
            .iter()
            .filter_map(|br| match (br.a, br.b) {
                (Some(a), Some(b)) => Some(a.abs_diff(b)),
                _ => None,
            })
            .max()
            .unwrap_or(0);

        let (pi, po) = match net.elements[net.input_port].kind {
            ElementKind::Port { impedance } => match net.elements[net.output_port].kind {
                ElementKind::Port { impedance: zo } => (impedance, zo),
                _ => unreachable!(),
            },
            _ => unreachable!(),
        };

        if current_scale == 0.0 {
            current_scale = if source_scale > 0.0 { source_scale } else { 1.0 };
        }

        Ok(ReducedNet {
            n_unknowns,
            input_unknown: node_map[net.input_node()].0,
            output_unknown: node_map[net.output_node()].0,
            node_map,
            branches,
            bandwidth,
            port_impedance_in: pi,
            port_impedance_out: po,
            port_branch_in: port_branch[0],
            port_branch_out: port_branch[1],
            current_scale,
        })
    }
}

// ---------------------------------------------------------------------------
// Integrator

fn envelope(t: f64, ramp: f64) -> f64 {
    if ramp <= 0.0 || t >= ramp {
        1.0
    } else if t <= 0.0 {
        0.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * t / ramp).cos())
    }
}

fn envelope_dot(t: f64, ramp: f64) -> f64 {
    if ramp <= 0.0 || t >= ramp || t <= 0.0 {
        0.0
    } else {
        0.5 * std::f64::consts::PI / ramp * (std::f64::consts::PI * t / ramp).sin()
    }
}

#[derive(Clone, Copy, Default)]
struct BranchState {
    delta: f64,
    ddelta: f64,
    d2delta: f64,
}

struct Stepper<'a> {
    rn: &'a ReducedNet,
    settings: SolverSettings,
    phi: Vec<f64>,
    prev_phi: Vec<f64>,
    vel: Vec<f64>,
    state: Vec<BranchState>,
    now: f64,
    tol: f64,
    drive_amp: Vec<(f64, f64, f64)>, // (amplitude, omega, phase) per tone
}

impl<'a> Stepper<'a> {
    fn new(rn: &'a ReducedNet, drive: &'a DriveSpec, settings: SolverSettings) -> Self {
        let drive_amp = drive
            .tones
            .iter()
            .map(|t| {
                (
                    tone_amplitude(t, rn.port_impedance_in),
                    std::f64::consts::TAU * t.frequency,
                    t.phase,
                )
            })
            .collect();
        Stepper {
            rn,
            settings,
            phi: vec![0.0; rn.n_unknowns],
            prev_phi: vec![0.0; rn.n_unknowns],
            vel: vec![0.0; rn.n_unknowns],
            state: vec![BranchState::default(); rn.branches.len()],
            now: 0.0,
            tol: settings.newton_tolerance * rn.current_scale,
            drive_amp,
        }
    }

    fn branch_delta(&self, br: &Branch, phi: &[f64], env: f64) -> f64 {
        let pa = br.a.map_or(0.0, |i| phi[i]);
        let pb = br.b.map_or(0.0, |i| phi[i]);
        pa - pb + br.offset * env
    }

    /// Branch current and its derivative w.r.t. the branch phase at the new
    /// time, under the trapezoidal differentiation chain.
    fn branch_current(
        &self,
        idx: usize,
        delta: f64,
        h: f64,
        t1: f64,
        env: f64,
    ) -> (f64, f64) {
        let st = self.state[idx];
        let d1 = 2.0 / h * (delta - st.delta) - st.ddelta;
        let d2 = 2.0 / h * (d1 - st.ddelta) - st.d2delta;
        match self.rn.branches[idx].kind {
            BranchKind::Josephson { ic, g_r, cc } => (
                ic * delta.sin() + g_r * d1 + cc * d2,
                ic * delta.cos() + g_r * 2.0 / h + cc * 4.0 / (h * h),
            ),
            BranchKind::Inductance { g_l, bias } => (g_l * delta + bias * env, g_l),
            BranchKind::Capacitance { cc } => (cc * d2, cc * 4.0 / (h * h)),
            BranchKind::Resistance { g_r } => (g_r * d1, g_r * 2.0 / h),
            BranchKind::Sine {
                amplitude,
                omega,
                phase,
            } => (amplitude * (omega * t1 + phase).cos() * env, 0.0),
            BranchKind::Dc { current } => (current * env, 0.0),
        }
    }

    /// Attempt one trapezoidal step of size `h` ending at `t1`.
    /// Returns the Newton iteration count on success.
    fn try_step(&mut self, t1: f64, h: f64, jac: &mut BandedMatrix<f64>) -> Option<usize> {
        let env = envelope(t1, self.settings.ramp_time);
        let mut phi_new: Vec<f64> = self
            .phi
            .iter()
            .zip(&self.vel)
            .map(|(p, v)| p + h * v)
            .collect();
        let mut residual = vec![0.0; self.rn.n_unknowns];
        for iter in 0..self.settings.max_newton_iters {
            residual.fill(0.0);
            jac.reset();
            for (idx, br) in self.rn.branches.iter().enumerate() {
                let delta = self.branch_delta(br, &phi_new, env);
                let (i, di) = self.branch_current(idx, delta, h, t1, env);
                if let Some(a) = br.a {
                    residual[a] += i;
                    jac.add(a, a, di);
                    if let Some(b) = br.b {
                        jac.add(a, b, -di);
                    }
                }
                if let Some(b) = br.b {
                    residual[b] -= i;
                    jac.add(b, b, di);
                    if let Some(a) = br.a {
                        jac.add(b, a, -di);
                    }
                }
            }
            // Drive tones enter as Norton sources at the input node.
            if let Some(u) = self.rn.input_unknown {
                for &(amp, omega, phase) in &self.drive_amp {
                    residual[u] -= amp * (omega * t1 + phase).cos() * env;
                }
            }
            let worst = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if worst < self.tol {
                self.prev_phi = std::mem::replace(&mut self.phi, phi_new);
                return Some(iter);
            }
            for r in residual.iter_mut() {
                *r = -*r;
            }
            if jac.solve(&mut residual).is_err() {
                return None;
            }
            for (p, dx) in phi_new.iter_mut().zip(&residual) {
                *p += dx;
            }
        }
        None
    }

    /// Commit branch and node derivative state after an accepted step.
    fn commit_step(&mut self, t1: f64, h: f64, env: f64) {
        for idx in 0..self.state.len() {
            let br = self.rn.branches[idx];
            let delta = self.branch_delta(&br, &self.phi, env);
            let st = &mut self.state[idx];
            let d1 = 2.0 / h * (delta - st.delta) - st.ddelta;
            let d2 = 2.0 / h * (d1 - st.ddelta) - st.d2delta;
            *st = BranchState {
                delta,
                ddelta: d1,
                d2delta: d2,
            };
        }
        for i in 0..self.vel.len() {
            self.vel[i] = 2.0 / h * (self.phi[i] - self.prev_phi[i]) - self.vel[i];
        }
        self.now = t1;
    }

    fn branch_current_now(&self, idx: usize) -> f64 {
        let st = self.state[idx];
        match self.rn.branches[idx].kind {
            BranchKind::Josephson { ic, g_r, cc } => {
                ic * st.delta.sin() + g_r * st.ddelta + cc * st.d2delta
            }
            BranchKind::Inductance { g_l, bias } => g_l * st.delta + bias,
            BranchKind::Capacitance { cc } => cc * st.d2delta,
            BranchKind::Resistance { g_r } => g_r * st.ddelta,
            BranchKind::Sine { .. } | BranchKind::Dc { .. } => 0.0,
        }
    }
}

/// Run a transient simulation. See the module docs for the formulation.
pub fn simulate(net: &Netlist, drive: &DriveSpec, settings: &SolverSettings) -> Result<TimeSeries> {
    simulate_with_audit(net, drive, settings).map(|(ts, _)| ts)
}

/// [`simulate`] plus cumulative energy bookkeeping per accepted step.
pub fn simulate_with_audit(
    net: &Netlist,
    drive: &DriveSpec,
    settings: &SolverSettings,
) -> Result<(TimeSeries, EnergyAudit)> {
    drive.validate()?;
    if !(settings.time_step > 0.0) {
        return Err(Error::domain("time_step must be > 0"));
    }
    if !(settings.newton_tolerance > 0.0) {
        return Err(Error::domain("newton_tolerance must be > 0"));
    }
    let rn = ReducedNet::build(net)?;
    run_reduced(&rn, net, drive, settings)
}

fn run_reduced(
    rn: &ReducedNet,
    net: &Netlist,
    drive: &DriveSpec,
    settings: &SolverSettings,
) -> Result<(TimeSeries, EnergyAudit)> {
    let mut stepper = Stepper::new(rn, drive, *settings);
    let mut jac = BandedMatrix::<f64>::new(rn.n_unknowns.max(1), rn.bandwidth, rn.bandwidth);

    // Recorded signal layout.
    let mut signal_defs: Vec<(String, SignalKind, Probe)> = vec![
        (
            "I(Pin)".into(),
            SignalKind::Current,
            Probe::BranchCurrent(rn.port_branch_in),
        ),
        (
            "I(Pout)".into(),
            SignalKind::Current,
            Probe::BranchCurrent(rn.port_branch_out),
        ),
        (
            "V(in)".into(),
            SignalKind::Voltage,
            Probe::NodeVoltage(net.input_node()),
        ),
        (
            "V(out)".into(),
            SignalKind::Voltage,
            Probe::NodeVoltage(net.output_node()),
        ),
    ];
    if drive.record == RecordSelection::All {
        for node in 0..net.n_nodes {
            if node != net.ground {
                signal_defs.push((
                    format!("V(n{node})"),
                    SignalKind::Voltage,
                    Probe::NodeVoltage(node),
                ));
            }
        }
        for (idx, br) in rn.branches.iter().enumerate() {
            if matches!(br.kind, BranchKind::Josephson { .. }) {
                signal_defs.push((
                    format!("phi({})", net.elements[br.element].label),
                    SignalKind::Phase,
                    Probe::BranchPhase(idx),
                ));
            }
        }
    }

    let mut time = Vec::new();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); signal_defs.len()];
    let mut audit = EnergyAudit::default();
    let (mut e_in, mut e_diss) = (0.0f64, 0.0f64);
    let (mut p_in_prev, mut p_diss_prev) = (0.0f64, 0.0f64);

    let record =
        |stepper: &Stepper,
         t: f64,
         samples: &mut Vec<Vec<f64>>,
         time: &mut Vec<f64>| {
            time.push(t);
            let env_dot = envelope_dot(t, stepper.settings.ramp_time);
            for (col, (_, _, probe)) in samples.iter_mut().zip(&signal_defs) {
                let v = match probe {
                    Probe::BranchCurrent(idx) => stepper.branch_current_now(*idx),
                    Probe::BranchPhase(idx) => stepper.state[*idx].delta,
                    Probe::NodeVoltage(node) => {
                        let (u, shift) = rn.node_map[*node];
                        let dphi = u.map_or(0.0, |i| stepper.vel[i]) + shift * env_dot;
                        REDUCED_FLUX_QUANTUM * dphi
                    }
                };
                col.push(v);
            }
        };

    record(&stepper, 0.0, &mut samples, &mut time);
    audit.delivered.push(0.0);
    audit.dissipated.push(0.0);
    audit.stored.push(0.0);

    let base_h = settings.time_step;
    let min_h = base_h / 64.0;
    let mut h = base_h;
    let mut t = 0.0;
    let mut fast_steps = 0usize;
    while t < drive.total_time - 1e-18 {
        let step = h.min(drive.total_time - t);
        let t1 = t + step;
        match stepper.try_step(t1, step, &mut jac) {
            Some(iters) => {
                stepper.commit_step(t1, step, envelope(t1, settings.ramp_time));
                t = t1;
                record(&stepper, t, &mut samples, &mut time);

                // Energy bookkeeping (trapezoid in time on instantaneous powers).
                let (p_in, p_diss, stored) = stepper.power_snapshot();
                e_in += 0.5 * (p_in + p_in_prev) * step;
                e_diss += 0.5 * (p_diss + p_diss_prev) * step;
                p_in_prev = p_in;
                p_diss_prev = p_diss;
                audit.delivered.push(e_in);
                audit.dissipated.push(e_diss);
                audit.stored.push(stored);

                if settings.adaptive {
                    if iters <= 2 {
                        fast_steps += 1;
                        if fast_steps >= 5 && h < base_h {
                            h = (2.0 * h).min(base_h);
                            fast_steps = 0;
                        }
                    } else {
                        fast_steps = 0;
                    }
                }
            }
            None => {
                if settings.adaptive && h > min_h * (1.0 + 1e-12) {
                    h = (h / 2.0).max(min_h);
                    fast_steps = 0;
                } else {
                    return Err(Error::Convergence {
                        time: t1,
                        message: format!(
                            "Newton did not reach tolerance in {} iterations",
                            settings.max_newton_iters
                        ),
                    });
                }
            }
        }
    }

    let signals = signal_defs
        .into_iter()
        .zip(samples)
        .map(|((name, kind, _), samples)| Signal {
            name,
            kind,
            samples,
        })
        .collect();
    Ok((TimeSeries { time, signals }, audit))
}

enum Probe {
    BranchCurrent(usize),
    BranchPhase(usize),
    NodeVoltage(usize),
}

/// First time the output-current magnitude exceeds `threshold_fraction`
/// times its late-time steady amplitude.
pub fn propagation_time(ts: &TimeSeries, threshold_fraction: f64) -> Result<f64> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::domain("threshold_fraction must be in (0, 1)"));
    }
    let sig = ts
        .signal("I(Pout)")
        .ok_or_else(|| Error::domain("output branch not recorded"))?;
    let n = sig.samples.len();
    if n < 8 {
        return Err(Error::domain("record too short"));
    }
    let tail = &sig.samples[(3 * n) / 4..];
    let rms = (tail.iter().map(|x| x * x).sum::<f64>() / tail.len() as f64).sqrt();
    let steady = rms * std::f64::consts::SQRT_2;
    if steady <= 0.0 {
        return Err(Error::NoArrival);
    }
    let level = threshold_fraction * steady;
    for i in 1..n {
        let (a, b) = (sig.samples[i - 1].abs(), sig.samples[i].abs());
        if b >= level {
            let frac = if b > a { (level - a) / (b - a) } else { 1.0 };
            return Ok(ts.time[i - 1] + frac.clamp(0.0, 1.0) * (ts.time[i] - ts.time[i - 1]));
        }
    }
    Err(Error::NoArrival)
}

// Stepper helpers that need private state beyond the Newton loop.
impl<'a> Stepper<'a> {
    fn power_snapshot(&self) -> (f64, f64, f64) {
        let mut p_in = 0.0;
        let mut p_diss = 0.0;
        let mut stored = 0.0;
        for (idx, br) in self.rn.branches.iter().enumerate() {
            let st = self.state[idx];
            let v = REDUCED_FLUX_QUANTUM * st.ddelta;
            match br.kind {
                BranchKind::Resistance { g_r } => p_diss += v * g_r * st.ddelta,
                BranchKind::Josephson { ic, g_r, cc } => {
                    p_diss += v * g_r * st.ddelta;
                    let e_j = REDUCED_FLUX_QUANTUM * ic;
                    stored += e_j * (1.0 - st.delta.cos());
                    // cc = φ₀bar·C, so C·V² = cc·φ₀bar·δ'².
                    stored += 0.5 * cc * REDUCED_FLUX_QUANTUM * st.ddelta * st.ddelta;
                }
                BranchKind::Capacitance { cc } => {
                    stored += 0.5 * cc * REDUCED_FLUX_QUANTUM * st.ddelta * st.ddelta;
                }
                BranchKind::Inductance { g_l, bias } => {
                    let i = g_l * st.delta + bias;
                    // ½ L I² with L = φ₀bar/g_l.
                    stored += 0.5 * REDUCED_FLUX_QUANTUM / g_l * i * i;
                }
                BranchKind::Sine { .. } | BranchKind::Dc { .. } => {
                    // Power delivered by a source pushing I from a to b is
                    // (V_b − V_a)·I = −V·I with V the branch voltage.
                    let i = self.source_value(idx);
                    p_in += -v * i;
                }
            }
        }
        if let Some(u) = self.rn.input_unknown {
            let v = REDUCED_FLUX_QUANTUM * self.vel[u];
            for &(amp, omega, phase) in &self.drive_amp {
                p_in += v * amp * (omega * self.now + phase).cos() * envelope(self.now, self.settings.ramp_time);
            }
        }
        (p_in, p_diss, stored)
    }

    fn source_value(&self, idx: usize) -> f64 {
        let env = envelope(self.now, self.settings.ramp_time);
        match self.rn.branches[idx].kind {
            BranchKind::Sine {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * self.now + phase).cos() * env,
            BranchKind::Dc { current } => current * env,
            _ => 0.0,
        }
    }
}

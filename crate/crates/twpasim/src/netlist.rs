//! Circuit-graph representation and programmatic builders for the SNAIL TWPA
//! equivalent circuits, covering both flux-bias schemes (per-cell phase
//! sources, and a mutual-inductance loop driven by a dc current) plus the
//! unbiased lossless variant used by the frequency-domain solver.

use serde::{Deserialize, Serialize};

use crate::device::{JunctionParams, TwpaDeviceSpec, FLUX_QUANTUM};
use crate::{Error, Result};

/// How the external flux is applied to the SNAIL loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxBiasScheme {
    None,
    PhaseSource,
    MutualLoop,
}

/// Auxiliary-loop parameters for the mutual-inductance bias scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutualLoopParams {
    /// Small linear inductance inserted in each SNAIL loop, in H.
    pub l_add: f64,
    /// External coupling inductor, in H.
    pub l_ext: f64,
    /// Bias current in A; `None` derives it from the target flux at
    /// -2.5 µA per half flux quantum, raising |I_dc| if the implied
    /// coupling would exceed |k| = 1.
    #[serde(default)]
    pub i_dc: Option<f64>,
}

impl Default for MutualLoopParams {
    fn default() -> Self {
        MutualLoopParams {
            l_add: 0.1e-12,
            l_ext: 1.6e-6,
            i_dc: None,
        }
    }
}

/// Flux-bias scheme tag plus the target flux in Φ₀ units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxBias {
    pub scheme: FluxBiasScheme,
    /// Target external flux per cell, in units of Φ₀.
    pub target_flux: f64,
    #[serde(default)]
    pub loop_params: MutualLoopParams,
}

impl FluxBias {
    pub fn new(scheme: FluxBiasScheme, target_flux: f64) -> Self {
        FluxBias {
            scheme,
            target_flux,
            loop_params: MutualLoopParams::default(),
        }
    }

    pub fn target_flux(&self) -> f64 {
        self.target_flux
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target_flux.is_finite() {
            return Err(Error::domain("target_flux must be finite"));
        }
        if self.scheme == FluxBiasScheme::MutualLoop {
            if !(self.loop_params.l_add > 0.0 && self.loop_params.l_ext > 0.0) {
                return Err(Error::domain(
                    "mutual-loop scheme requires l_add > 0 and l_ext > 0",
                ));
            }
        }
        Ok(())
    }
}

/// Circuit element vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ElementKind {
    Inductor { inductance: f64 },
    Capacitor { capacitance: f64 },
    Resistor { resistance: f64 },
    Josephson { junction: JunctionParams },
    /// Mutual inductance between two inductor branches, |coupling| <= 1.
    Mutual {
        coupling: f64,
        branch_a: usize,
        branch_b: usize,
    },
    /// I(t) = amplitude · cos(2π·frequency·t + phase), flowing from the
    /// first terminal through the source into the second.
    SinusoidalCurrentSource {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    DcCurrentSource { current: f64 },
    /// Fixed superconducting phase offset across the branch.
    PhaseSource { phase: f64 },
    Port { impedance: f64 },
}

/// An element plus its terminal node pair (currents flow from `nodes.0` to
/// `nodes.1` through the element).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub kind: ElementKind,
    pub nodes: (usize, usize),
    pub label: String,
}

/// Node/branch circuit graph. Node 0 is ground by convention; `input_port`
/// and `output_port` are element indices of the two `Port` elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub n_nodes: usize,
    pub ground: usize,
    pub elements: Vec<Element>,
    pub input_port: usize,
    pub output_port: usize,
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Offending element index, when the finding is element-specific.
    pub element: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.element {
            Some(i) => write!(f, "element {}: {}", i, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl Netlist {
    pub fn input_node(&self) -> usize {
        self.elements[self.input_port].nodes.0
    }

    pub fn output_node(&self) -> usize {
        self.elements[self.output_port].nodes.0
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(e.to_string()))
    }
}

/// Bias current producing `target_flux` (Φ₀ units) through a mutual
/// inductance `mutual` (H), with negative current for positive flux.
pub fn dc_current_for_flux(target_flux: f64, mutual: f64) -> Result<f64> {
    if mutual == 0.0 {
        return Err(Error::domain("mutual inductance must be nonzero"));
    }
    Ok(-target_flux * FLUX_QUANTUM / mutual)
}

/// Inverse of [`dc_current_for_flux`].
pub fn flux_from_current(current: f64, mutual: f64) -> f64 {
    -current * mutual / FLUX_QUANTUM
}

struct NodeAlloc {
    next: usize,
}

impl NodeAlloc {
    fn new() -> Self {
        // Node 0 is ground.
        NodeAlloc { next: 1 }
    }
    fn fresh(&mut self) -> usize {
        let n = self.next;
        self.next += 1;
        n
    }
}

/// Build the SNAIL TWPA ladder for `spec`.
///
/// Per cell: `n_large` large junctions in series in one arm, the r-scaled
/// small junction in the other, C_g to ground at the cell's right boundary,
/// and the flux-bias elements of the selected scheme. Cell k receives flux
/// sign (-1)^k when `alternating_polarity` is set. With `lossless` the
/// junction shunt resistances are dropped (frequency-domain variant).
pub fn build_snail_twpa(spec: &TwpaDeviceSpec, lossless: bool) -> Result<Netlist> {
    spec.validate()?;
    let bias = &spec.flux_bias;
    let target = crate::device::fold_flux(bias.target_flux);
    let large = JunctionParams {
        normal_resistance: if lossless {
            None
        } else {
            spec.cell.large_junction.normal_resistance
        },
        ..spec.cell.large_junction
    };
    // Junction capacitance scales with area as the critical current does;
    // the shunt resistance scales inversely (fixed I_c·R_N product).
    let r = spec.cell.junction_ratio;
    let small = JunctionParams {
        critical_current: large.critical_current * r,
        capacitance: large.capacitance * r,
        normal_resistance: large.normal_resistance.map(|rn| rn / r),
    };

    let mut alloc = NodeAlloc::new();
    let mut elements: Vec<Element> = Vec::new();

    // Mutual-loop bias: one external inductor driven by a dc current source,
    // coupled into every cell's L_add.
    let mut mutual_setup: Option<(f64, usize)> = None; // (coupling magnitude, L_ext element idx)
    if bias.scheme == FluxBiasScheme::MutualLoop {
        let lp = bias.loop_params;
        let m_max = (lp.l_add * lp.l_ext).sqrt();
        let (i_dc, mutual) = match lp.i_dc {
            Some(i_dc) => {
                if target == 0.0 {
                    (i_dc, m_max)
                } else {
                    if i_dc == 0.0 {
                        return Err(Error::config(
                            "mutual-loop bias: i_dc = 0 cannot reach a nonzero target flux",
                        ));
                    }
                    let m = -target * FLUX_QUANTUM / i_dc;
                    if m.abs() > m_max || m < 0.0 {
                        return Err(Error::config(format!(
                            "mutual-loop bias: target flux {target} Φ₀ unreachable with \
                             i_dc = {i_dc:.3e} A at |k| <= 1 (needs M = {m:.4e} H, max {m_max:.4e} H)"
                        )));
                    }
                    (i_dc, m)
                }
            }
            None => {
                // Paper convention: -2.5 µA per half flux quantum. If the
                // implied M exceeds k = 1, pin k = 1 and raise |I_dc| so the
                // flux stays exact by construction.
                if target == 0.0 {
                    (0.0, m_max)
                } else {
                    let i_dc = -5e-6 * target;
                    let m = -target * FLUX_QUANTUM / i_dc;
                    if m <= m_max {
                        (i_dc, m)
                    } else {
                        (-target * FLUX_QUANTUM / m_max, m_max)
                    }
                }
            }
        };
        let coupling = mutual / m_max;
        let loop_node = alloc.fresh();
        elements.push(Element {
            kind: ElementKind::DcCurrentSource { current: i_dc },
            nodes: (0, loop_node),
            label: "Idc".into(),
        });
        let lext_idx = elements.len();
        elements.push(Element {
            kind: ElementKind::Inductor {
                inductance: lp.l_ext,
            },
            nodes: (loop_node, 0),
            label: "Lext".into(),
        });
        mutual_setup = Some((coupling, lext_idx));
    }

    let mut left = alloc.fresh();
    let input_node = left;
    for cell in 0..spec.n_cells {
        let sign = if spec.alternating_polarity && cell % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        // Internal series-junction nodes come before the ground-capacitor
        // node so numbering stays reproducible and banded.
        let mut arm_nodes = Vec::with_capacity(spec.cell.n_large - 1);
        for _ in 0..spec.cell.n_large - 1 {
            arm_nodes.push(alloc.fresh());
        }
        let small_mid = match bias.scheme {
            FluxBiasScheme::None => None,
            _ => Some(alloc.fresh()),
        };
        let right = alloc.fresh();

        // Large arm.
        let mut prev = left;
        for (j, &node) in arm_nodes.iter().chain(std::iter::once(&right)).enumerate() {
            elements.push(Element {
                kind: ElementKind::Josephson { junction: large },
                nodes: (prev, node),
                label: format!("J{cell}.{j}"),
            });
            prev = node;
        }

        // Small arm plus bias element.
        match bias.scheme {
            FluxBiasScheme::None => {
                elements.push(Element {
                    kind: ElementKind::Josephson { junction: small },
                    nodes: (left, right),
                    label: format!("Js{cell}"),
                });
            }
            FluxBiasScheme::PhaseSource => {
                let mid = small_mid.unwrap();
                elements.push(Element {
                    kind: ElementKind::Josephson { junction: small },
                    nodes: (left, mid),
                    label: format!("Js{cell}"),
                });
                elements.push(Element {
                    kind: ElementKind::PhaseSource {
                        phase: sign * std::f64::consts::TAU * target,
                    },
                    nodes: (mid, right),
                    label: format!("P{cell}"),
                });
            }
            FluxBiasScheme::MutualLoop => {
                let mid = small_mid.unwrap();
                let (coupling, lext_idx) = mutual_setup.unwrap();
                elements.push(Element {
                    kind: ElementKind::Josephson { junction: small },
                    nodes: (left, mid),
                    label: format!("Js{cell}"),
                });
                let ladd_idx = elements.len();
                elements.push(Element {
                    kind: ElementKind::Inductor {
                        inductance: bias.loop_params.l_add,
                    },
                    nodes: (mid, right),
                    label: format!("Ladd{cell}"),
                });
                elements.push(Element {
                    kind: ElementKind::Mutual {
                        coupling: sign * coupling,
                        branch_a: ladd_idx,
                        branch_b: lext_idx,
                    },
                    nodes: (0, 0),
                    label: format!("M{cell}"),
                });
            }
        }

        elements.push(Element {
            kind: ElementKind::Capacitor {
                capacitance: spec.cell.ground_capacitance,
            },
            nodes: (right, 0),
            label: format!("Cg{cell}"),
        });

        left = right;
    }
    let output_node = left;

    let input_port = elements.len();
    elements.push(Element {
        kind: ElementKind::Port {
            impedance: spec.port_impedance,
        },
        nodes: (input_node, 0),
        label: "Pin".into(),
    });
    let output_port = elements.len();
    elements.push(Element {
        kind: ElementKind::Port {
            impedance: spec.port_impedance,
        },
        nodes: (output_node, 0),
        label: "Pout".into(),
    });

    Ok(Netlist {
        n_nodes: alloc.next,
        ground: 0,
        elements,
        input_port,
        output_port,
    })
}

/// A matched through: both ports on one node. Used as the input-reference
/// calibration run for gain extraction.
pub fn build_through(port_impedance: f64) -> Netlist {
    let elements = vec![
        Element {
            kind: ElementKind::Port {
                impedance: port_impedance,
            },
            nodes: (1, 0),
            label: "Pin".into(),
        },
        Element {
            kind: ElementKind::Port {
                impedance: port_impedance,
            },
            nodes: (1, 0),
            label: "Pout".into(),
        },
    ];
    Netlist {
        n_nodes: 2,
        ground: 0,
        elements,
        input_port: 0,
        output_port: 1,
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Check every netlist invariant; returns one diagnostic per violation.
pub fn validate(net: &Netlist) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let diag = |element, message: String| Diagnostic { element, message };

    if net.ground >= net.n_nodes {
        out.push(diag(None, format!("ground node {} out of range", net.ground)));
        return out;
    }

    for (i, el) in net.elements.iter().enumerate() {
        let (a, b) = el.nodes;
        if a >= net.n_nodes || b >= net.n_nodes {
            out.push(diag(Some(i), format!("terminal out of range: ({a}, {b})")));
            continue;
        }
        match &el.kind {
            ElementKind::Inductor { inductance } => {
                if !(*inductance > 0.0 && inductance.is_finite()) {
                    out.push(diag(Some(i), "inductance must be finite and > 0".into()));
                }
            }
            ElementKind::Capacitor { capacitance } => {
                if !(*capacitance > 0.0 && capacitance.is_finite()) {
                    out.push(diag(Some(i), "capacitance must be finite and > 0".into()));
                }
            }
            ElementKind::Resistor { resistance } => {
                if !(*resistance > 0.0 && resistance.is_finite()) {
                    out.push(diag(Some(i), "resistance must be finite and > 0".into()));
                }
            }
            ElementKind::Port { impedance } => {
                if !(*impedance > 0.0 && impedance.is_finite()) {
                    out.push(diag(Some(i), "port impedance must be finite and > 0".into()));
                }
            }
            ElementKind::Josephson { junction } => {
                if let Err(e) = junction.validate() {
                    out.push(diag(Some(i), e.to_string()));
                }
            }
            ElementKind::Mutual {
                coupling,
                branch_a,
                branch_b,
            } => {
                if !(coupling.abs() <= 1.0 + 1e-12 && coupling.is_finite()) {
                    out.push(diag(Some(i), format!("|coupling| must be <= 1, got {coupling}")));
                }
                for &br in &[*branch_a, *branch_b] {
                    match net.elements.get(br) {
                        Some(Element {
                            kind: ElementKind::Inductor { .. },
                            ..
                        }) => {}
                        Some(_) => out.push(diag(
                            Some(i),
                            format!("mutual must couple inductors; branch {br} is not an inductor"),
                        )),
                        None => out.push(diag(Some(i), format!("mutual references missing branch {br}"))),
                    }
                }
            }
            ElementKind::SinusoidalCurrentSource {
                amplitude,
                frequency,
                ..
            } => {
                if !(amplitude.is_finite() && *frequency >= 0.0) {
                    out.push(diag(Some(i), "source amplitude must be finite, frequency >= 0".into()));
                }
            }
            ElementKind::DcCurrentSource { current } => {
                if !current.is_finite() {
                    out.push(diag(Some(i), "source current must be finite".into()));
                }
            }
            ElementKind::PhaseSource { phase } => {
                if !phase.is_finite() {
                    out.push(diag(Some(i), "phase must be finite".into()));
                }
            }
        }
    }

    // Connectivity: every node must reach ground through element terminals.
    let mut uf = UnionFind::new(net.n_nodes);
    for el in &net.elements {
        if matches!(el.kind, ElementKind::Mutual { .. }) {
            continue;
        }
        if el.nodes.0 < net.n_nodes && el.nodes.1 < net.n_nodes {
            uf.union(el.nodes.0, el.nodes.1);
        }
    }
    let ground_rep = uf.find(net.ground);
    for node in 0..net.n_nodes {
        if uf.find(node) != ground_rep {
            out.push(diag(None, format!("disconnected node {node}")));
        }
    }

    // Phase sources must sit inside superconducting loops: removing one must
    // leave its terminals connected through superconducting elements.
    for (i, el) in net.elements.iter().enumerate() {
        if !matches!(el.kind, ElementKind::PhaseSource { .. }) {
            continue;
        }
        let mut uf = UnionFind::new(net.n_nodes);
        for (j, other) in net.elements.iter().enumerate() {
            if j == i {
                continue;
            }
            let superconducting = matches!(
                other.kind,
                ElementKind::Inductor { .. }
                    | ElementKind::Josephson { .. }
                    | ElementKind::PhaseSource { .. }
            );
            if superconducting && other.nodes.0 < net.n_nodes && other.nodes.1 < net.n_nodes {
                uf.union(other.nodes.0, other.nodes.1);
            }
        }
        if el.nodes.0 < net.n_nodes
            && el.nodes.1 < net.n_nodes
            && uf.find(el.nodes.0) != uf.find(el.nodes.1)
        {
            out.push(diag(
                Some(i),
                "phase source must appear inside a superconducting loop".into(),
            ));
        }
    }

    for (name, idx) in [("input_port", net.input_port), ("output_port", net.output_port)] {
        match net.elements.get(idx) {
            Some(Element {
                kind: ElementKind::Port { .. },
                ..
            }) => {}
            _ => out.push(diag(None, format!("{name} must reference a port element"))),
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::TwpaDeviceSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn spec(scheme: FluxBiasScheme, flux: f64, n_cells: usize) -> TwpaDeviceSpec {
        let mut s = TwpaDeviceSpec::snail250(FluxBias::new(scheme, flux));
        s.n_cells = n_cells;
        s
    }

    #[test]
    fn builder_element_count_phase_source() {
        let s = spec(FluxBiasScheme::PhaseSource, 0.25, 250);
        let net = build_snail_twpa(&s, false).unwrap();
        let n_large = s.cell.n_large;
        assert_eq!(net.elements.len(), 250 * (n_large + 1 + 1 + 1) + 2);
        assert!(validate(&net).is_empty());
    }

    #[test]
    fn builder_two_cell_hand_check() {
        let s = spec(FluxBiasScheme::PhaseSource, 0.25, 2);
        let net = build_snail_twpa(&s, false).unwrap();
        // 2 cells × (3 large J + small J + phase source + Cg) + 2 ports.
        assert_eq!(net.elements.len(), 14);
        // Nodes: ground + 3 boundaries + 2×(2 arm internals + 1 phase node).
        assert_eq!(net.n_nodes, 1 + 3 + 2 * 3);
        let phases: Vec<f64> = net
            .elements
            .iter()
            .filter_map(|e| match e.kind {
                ElementKind::PhaseSource { phase } => Some(phase),
                _ => None,
            })
            .collect();
        assert_eq!(phases.len(), 2);
        assert_relative_eq!(phases[0], std::f64::consts::TAU * 0.25, max_relative = 1e-14);
        assert_relative_eq!(phases[1], -std::f64::consts::TAU * 0.25, max_relative = 1e-14);
        assert_abs_diff_eq!(phases[0] + phases[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn builder_alternating_phase_sources_cancel_pairwise() {
        let s = spec(FluxBiasScheme::PhaseSource, 0.37, 10);
        let net = build_snail_twpa(&s, false).unwrap();
        let phases: Vec<f64> = net
            .elements
            .iter()
            .filter_map(|e| match e.kind {
                ElementKind::PhaseSource { phase } => Some(phase),
                _ => None,
            })
            .collect();
        for pair in phases.chunks(2) {
            assert_abs_diff_eq!(pair[0] + pair[1], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn builder_deterministic() {
        let s = spec(FluxBiasScheme::MutualLoop, 0.5, 25);
        let a = build_snail_twpa(&s, false).unwrap();
        let b = build_snail_twpa(&s, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mutual_loop_flux_exact_by_construction() {
        for &flux in &[0.1, 0.25, 0.5, -0.5] {
            let s = spec(FluxBiasScheme::MutualLoop, flux, 4);
            let net = build_snail_twpa(&s, false).unwrap();
            assert!(validate(&net).is_empty());
            let i_dc = net
                .elements
                .iter()
                .find_map(|e| match e.kind {
                    ElementKind::DcCurrentSource { current } => Some(current),
                    _ => None,
                })
                .unwrap();
            let lp = s.flux_bias.loop_params;
            let k = net
                .elements
                .iter()
                .find_map(|e| match e.kind {
                    ElementKind::Mutual { coupling, .. } => Some(coupling),
                    _ => None,
                })
                .unwrap();
            assert!(k.abs() <= 1.0 + 1e-12);
            let m = k * (lp.l_add * lp.l_ext).sqrt();
            // The builder folds the target into (-1/2, 1/2] first.
            assert_relative_eq!(
                flux_from_current(i_dc, m),
                crate::device::fold_flux(flux),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn mutual_loop_unreachable_flux_with_given_idc() {
        let mut s = spec(FluxBiasScheme::MutualLoop, 0.5, 4);
        s.flux_bias.loop_params.i_dc = Some(-1e-6); // needs M beyond k = 1
        assert!(matches!(
            build_snail_twpa(&s, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dc_current_for_flux_values() {
        assert_abs_diff_eq!(dc_current_for_flux(0.0, 413.5e-12).unwrap(), 0.0);
        // Φ₀/2 ÷ 413.5 pH, paper sign convention.
        let i = dc_current_for_flux(0.5, 413.5e-12).unwrap();
        assert_relative_eq!(i, -2.5e-6, max_relative = 2e-3);
        assert!(dc_current_for_flux(0.5, 0.0).is_err());
        for &(f, m) in &[(0.3, 2e-10), (-0.5, 4.135e-10)] {
            let i = dc_current_for_flux(f, m).unwrap();
            assert_relative_eq!(flux_from_current(i, m), f, max_relative = 1e-14);
        }
    }

    #[test]
    fn validate_detects_dangling_node() {
        let s = spec(FluxBiasScheme::PhaseSource, 0.0, 3);
        let mut net = build_snail_twpa(&s, false).unwrap();
        net.n_nodes += 1;
        let diags = validate(&net);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("disconnected node"));
    }

    #[test]
    fn validate_detects_mutual_on_capacitor() {
        let s = spec(FluxBiasScheme::MutualLoop, 0.5, 2);
        let mut net = build_snail_twpa(&s, false).unwrap();
        let cap_idx = net
            .elements
            .iter()
            .position(|e| matches!(e.kind, ElementKind::Capacitor { .. }))
            .unwrap();
        for el in &mut net.elements {
            if let ElementKind::Mutual { branch_a, .. } = &mut el.kind {
                *branch_a = cap_idx;
                break;
            }
        }
        let diags = validate(&net);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("mutual must couple inductors"));
    }

    #[test]
    fn validate_detects_phase_source_outside_loop() {
        let net = Netlist {
            n_nodes: 3,
            ground: 0,
            elements: vec![
                Element {
                    kind: ElementKind::PhaseSource { phase: 1.0 },
                    nodes: (1, 2),
                    label: "P".into(),
                },
                Element {
                    kind: ElementKind::Resistor { resistance: 50.0 },
                    nodes: (2, 0),
                    label: "R".into(),
                },
                Element {
                    kind: ElementKind::Port { impedance: 50.0 },
                    nodes: (1, 0),
                    label: "Pin".into(),
                },
                Element {
                    kind: ElementKind::Port { impedance: 50.0 },
                    nodes: (2, 0),
                    label: "Pout".into(),
                },
            ],
            input_port: 2,
            output_port: 3,
        };
        let diags = validate(&net);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("superconducting loop")));
    }

    #[test]
    fn json_round_trip() {
        let s = spec(FluxBiasScheme::MutualLoop, 0.5, 3);
        let net = build_snail_twpa(&s, true).unwrap();
        let json = net.to_json_string().unwrap();
        let back = Netlist::from_json_str(&json).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn lossless_strips_shunt_resistance() {
        let s = spec(FluxBiasScheme::PhaseSource, 0.0, 3);
        let net = build_snail_twpa(&s, true).unwrap();
        for el in &net.elements {
            if let ElementKind::Josephson { junction } = &el.kind {
                assert!(junction.normal_resistance.is_none());
            }
        }
    }
}

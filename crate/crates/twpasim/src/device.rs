//! SNAIL element physics and unit systems.
//!
//! Potentials, effective inductances, Taylor coefficients of the potential
//! about its minimum, normal-resistance estimation, and the dimensionless
//! normalization scheme used for interop checks. All engine-internal
//! computation is in SI units; the normalization scheme exists for
//! cross-checking against normalized-unit tools, not as the working system.

use serde::{Deserialize, Serialize};

use crate::netlist::FluxBias;
use crate::{Error, Result};

/// Magnetic flux quantum h/2e in Wb.
pub const FLUX_QUANTUM: f64 = 2.067_833_848e-15;

/// Reduced flux quantum Φ₀/2π in Wb.
pub const REDUCED_FLUX_QUANTUM: f64 = FLUX_QUANTUM / std::f64::consts::TAU;

/// Ambegaokar-Baratoff I_c·R_N product for aluminium junctions, in volts.
pub const ALUMINIUM_ICRN_PRODUCT: f64 = 0.33e-3;

/// RSJ parameters of one Josephson junction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionParams {
    /// Critical current in A.
    pub critical_current: f64,
    /// Junction capacitance in F.
    pub capacitance: f64,
    /// Shunt (normal) resistance in Ω; `None` means lossless.
    #[serde(default)]
    pub normal_resistance: Option<f64>,
}

impl JunctionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.critical_current > 0.0) {
            return Err(Error::domain("critical_current must be > 0"));
        }
        if !(self.capacitance >= 0.0) {
            return Err(Error::domain("capacitance must be >= 0"));
        }
        if let Some(rn) = self.normal_resistance {
            if !(rn > 0.0) {
                return Err(Error::domain("normal_resistance must be > 0 when present"));
            }
        }
        Ok(())
    }

    /// Josephson inductance Φ₀/(2π I_c) at zero phase, in H.
    pub fn josephson_inductance(&self) -> f64 {
        REDUCED_FLUX_QUANTUM / self.critical_current
    }
}

/// One SNAIL unit cell: a loop with `n_large` large junctions in one arm and
/// a single junction scaled by `junction_ratio` in the other, plus the cell's
/// capacitance to ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnailParams {
    pub large_junction: JunctionParams,
    /// Ratio r between the small and large junction critical currents.
    pub junction_ratio: f64,
    /// Number of large junctions in the series arm.
    pub n_large: usize,
    /// Ground capacitance C_g per cell, in F.
    pub ground_capacitance: f64,
}

impl SnailParams {
    pub fn validate(&self) -> Result<()> {
        self.large_junction.validate()?;
        if !(self.junction_ratio > 0.0 && self.junction_ratio < 1.0) {
            return Err(Error::domain("junction_ratio must satisfy 0 < r < 1"));
        }
        if self.n_large < 1 {
            return Err(Error::domain("n_large must be >= 1"));
        }
        if !(self.ground_capacitance >= 0.0) {
            return Err(Error::domain("ground_capacitance must be >= 0"));
        }
        Ok(())
    }
}

/// Physical description of a SNAIL TWPA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwpaDeviceSpec {
    pub cell: SnailParams,
    pub n_cells: usize,
    /// Source/load impedance at both ports, in Ω.
    pub port_impedance: f64,
    pub flux_bias: FluxBias,
    /// External flux sign flips between adjacent cells when set.
    pub alternating_polarity: bool,
}

impl TwpaDeviceSpec {
    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.n_cells < 1 {
            return Err(Error::domain("n_cells must be >= 1"));
        }
        if !(self.port_impedance > 0.0) {
            return Err(Error::domain("port_impedance must be > 0"));
        }
        self.flux_bias.validate()?;
        if self.flux_bias.target_flux().abs() > 0.5 + 1e-12 {
            return Err(Error::domain(
                "target flux must satisfy |Φ| <= 0.5 Φ₀ (use fold_flux)",
            ));
        }
        Ok(())
    }

    /// The benchmark 250-cell device with experimentally realistic
    /// parameters: I_c = 1.47 µA, r = 0.05, C_J = 31 fF, C_g = 550 fF.
    pub fn snail250(flux_bias: FluxBias) -> Self {
        let ic = 1.47e-6;
        TwpaDeviceSpec {
            cell: SnailParams {
                large_junction: JunctionParams {
                    critical_current: ic,
                    capacitance: 31e-15,
                    normal_resistance: Some(
                        ambegaokar_baratoff_rn(ic, ALUMINIUM_ICRN_PRODUCT).unwrap(),
                    ),
                },
                junction_ratio: 0.05,
                n_large: 3,
                ground_capacitance: 550e-15,
            },
            n_cells: 250,
            port_impedance: 50.0,
            flux_bias,
            alternating_polarity: true,
        }
    }
}

/// Fold a flux in Φ₀ units into [-0.5, 0.5] using the Φ₀ periodicity.
pub fn fold_flux(flux: f64) -> f64 {
    let f = flux - flux.round();
    if f == -0.5 {
        0.5
    } else {
        f
    }
}

/// Normal resistance from the Ambegaokar-Baratoff relation
/// I_c R_N = πΔ/(2e), given the product in volts.
pub fn ambegaokar_baratoff_rn(critical_current: f64, gap_voltage_product: f64) -> Result<f64> {
    if !(critical_current > 0.0) {
        return Err(Error::domain("critical_current must be > 0"));
    }
    if !(gap_voltage_product > 0.0) {
        return Err(Error::domain("gap_voltage_product must be > 0"));
    }
    Ok(gap_voltage_product / critical_current)
}

/// Dimensionless SNAIL potential in units of the large-junction E_J:
/// u(φ) = -r cos(φ) - n cos((φ_ext - φ)/n),
/// where φ is the small-junction phase coordinate.
pub fn snail_potential(phase: f64, external_phase: f64, params: &SnailParams) -> f64 {
    snail_potential_derivative(0, phase, external_phase, params)
}

/// m-th derivative of [`snail_potential`] with respect to `phase`, analytic.
pub fn snail_potential_derivative(
    order: u32,
    phase: f64,
    external_phase: f64,
    params: &SnailParams,
) -> f64 {
    let n = params.n_large as f64;
    let r = params.junction_ratio;
    let psi = (external_phase - phase) / n;
    // cos(x + mπ/2) by quarter-turn lookup keeps high orders exact.
    let rot = |x: f64, m: u32| match m % 4 {
        0 => x.cos(),
        1 => -x.sin(),
        2 => -x.cos(),
        _ => x.sin(),
    };
    let arm_small = -r * rot(phase, order);
    let arm_large = -n * (-1.0 / n).powi(order as i32) * rot(psi, order);
    arm_small + arm_large
}

/// Locate the minimum of the SNAIL potential on [-π, π].
///
/// A 721-point grid scan seeds a safeguarded Newton iteration on the first
/// derivative; the potential can develop shallow secondary minima near half
/// flux, so the global scan comes first.
pub fn minimize_potential(params: &SnailParams, external_phase: f64) -> f64 {
    const GRID: usize = 721;
    let mut best_phi = 0.0;
    let mut best_u = f64::INFINITY;
    for i in 0..GRID {
        let phi = -std::f64::consts::PI
            + 2.0 * std::f64::consts::PI * (i as f64) / ((GRID - 1) as f64);
        let u = snail_potential(phi, external_phase, params);
        if u < best_u {
            best_u = u;
            best_phi = phi;
        }
    }
    let h = 2.0 * std::f64::consts::PI / ((GRID - 1) as f64);
    let (mut lo, mut hi) = (best_phi - h, best_phi + h);
    let mut phi = best_phi;
    for _ in 0..200 {
        let du = snail_potential_derivative(1, phi, external_phase, params);
        if du.abs() < 1e-14 {
            break;
        }
        if du > 0.0 {
            hi = phi;
        } else {
            lo = phi;
        }
        let d2u = snail_potential_derivative(2, phi, external_phase, params);
        let newton = phi - du / d2u;
        phi = if d2u > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    phi
}

/// Effective SNAIL inductance at an external flux given in Φ₀ units:
/// Φ₀/(2π I_c) divided by the curvature of the potential at its minimum.
pub fn snail_effective_inductance(params: &SnailParams, external_flux: f64) -> Result<f64> {
    params.validate()?;
    // Fold by Φ₀ periodicity so the minimizer's [-π, π] scan always brackets
    // the global minimum.
    let ext = std::f64::consts::TAU * fold_flux(external_flux);
    let phi_min = minimize_potential(params, ext);
    let curvature = snail_potential_derivative(2, phi_min, ext, params);
    if curvature <= 0.0 {
        return Err(Error::domain(format!(
            "unstable configuration: potential curvature {curvature:.3e} <= 0 at located minimum"
        )));
    }
    Ok(params.large_junction.josephson_inductance() / curvature)
}

/// Taylor coefficients c₂ … c_max of the SNAIL potential expanded about its
/// minimum: u(φ* + δ) = u(φ*) + Σ_k c_k δ^k, c_k = u⁽ᵏ⁾(φ*)/k!.
///
/// Computed from the analytic derivatives of the cosine sum, not finite
/// differences; finite differences are kept as a test oracle only.
pub fn snail_taylor_coefficients(
    params: &SnailParams,
    external_flux: f64,
    max_order: u32,
) -> Result<Vec<f64>> {
    params.validate()?;
    if max_order < 2 {
        return Err(Error::domain("max_order must be >= 2"));
    }
    let ext = std::f64::consts::TAU * fold_flux(external_flux);
    let phi_min = minimize_potential(params, ext);
    let c2 = snail_potential_derivative(2, phi_min, ext, params) / 2.0;
    if c2 <= 0.0 {
        return Err(Error::domain(
            "unstable configuration: potential curvature <= 0 at located minimum",
        ));
    }
    let mut factorial = 2.0;
    let mut coeffs = Vec::with_capacity((max_order - 1) as usize);
    for k in 2..=max_order {
        if k > 2 {
            factorial *= k as f64;
        }
        coeffs.push(snail_potential_derivative(k, phi_min, ext, params) / factorial);
    }
    Ok(coeffs)
}

/// Quantity kinds covered by a [`NormalizationScheme`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantityKind {
    Flux,
    Current,
    Voltage,
    Resistance,
    Inductance,
    Capacitance,
    AngularFrequency,
    Time,
}

/// Dimensionless normalization scheme (the normalized-unit convention of
/// superconducting circuit simulators, with Φ_n = Φ₀/2π so that Φ₀ ↦ 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationScheme {
    /// Current norm I_n in A.
    pub current_norm: f64,
    /// Voltage norm V_n in V.
    pub voltage_norm: f64,
    /// Resistance norm R_n in Ω.
    pub resistance_norm: f64,
    /// Flux norm Φ_n in Wb.
    pub flux_norm: f64,
}

impl NormalizationScheme {
    /// The benchmark correspondence: Φ_n = Φ₀/2π, I_n = 1 µA, V_n = 1 mV,
    /// R_n = 1 kΩ.
    pub fn pscan2() -> Self {
        NormalizationScheme {
            current_norm: 1e-6,
            voltage_norm: 1e-3,
            resistance_norm: 1e3,
            flux_norm: REDUCED_FLUX_QUANTUM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("current_norm", self.current_norm),
            ("voltage_norm", self.voltage_norm),
            ("resistance_norm", self.resistance_norm),
            ("flux_norm", self.flux_norm),
        ] {
            if !(v > 0.0) {
                return Err(Error::domain(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    /// Derived inductance norm L_n = Φ_n/I_n.
    pub fn inductance_norm(&self) -> f64 {
        self.flux_norm / self.current_norm
    }

    /// Derived capacitance norm C_n = L_n/R_n².
    pub fn capacitance_norm(&self) -> f64 {
        self.inductance_norm() / (self.resistance_norm * self.resistance_norm)
    }

    /// Derived time norm t_n = √(L_n C_n).
    pub fn time_norm(&self) -> f64 {
        (self.inductance_norm() * self.capacitance_norm()).sqrt()
    }

    /// Derived angular-frequency norm ω_n = 1/√(L_n C_n).
    pub fn angular_frequency_norm(&self) -> f64 {
        1.0 / self.time_norm()
    }

    fn factor(&self, kind: QuantityKind) -> f64 {
        match kind {
            QuantityKind::Flux => self.flux_norm,
            QuantityKind::Current => self.current_norm,
            QuantityKind::Voltage => self.voltage_norm,
            QuantityKind::Resistance => self.resistance_norm,
            QuantityKind::Inductance => self.inductance_norm(),
            QuantityKind::Capacitance => self.capacitance_norm(),
            QuantityKind::AngularFrequency => self.angular_frequency_norm(),
            QuantityKind::Time => self.time_norm(),
        }
    }

    /// SI value → dimensionless.
    pub fn normalize(&self, value: f64, kind: QuantityKind) -> f64 {
        value / self.factor(kind)
    }

    /// Dimensionless → SI value.
    pub fn denormalize(&self, value: f64, kind: QuantityKind) -> f64 {
        value * self.factor(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::FluxBiasScheme;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn bench_cell() -> SnailParams {
        TwpaDeviceSpec::snail250(FluxBias::new(FluxBiasScheme::None, 0.0)).cell
    }

    #[test]
    fn ambegaokar_baratoff_table_values() {
        let rn = ambegaokar_baratoff_rn(1.47e-6, 0.33e-3).unwrap();
        assert_relative_eq!(rn, 224.5, max_relative = 1e-3);
        let rn2 = ambegaokar_baratoff_rn(2.0 * 1.47e-6, 0.33e-3).unwrap();
        assert_relative_eq!(rn2, rn / 2.0, max_relative = 1e-12);
        assert_relative_eq!(
            ambegaokar_baratoff_rn(1e-6, 0.33e-3).unwrap(),
            330.0,
            max_relative = 1e-12
        );
        assert!(ambegaokar_baratoff_rn(-1.0, 0.33e-3).is_err());
        assert!(ambegaokar_baratoff_rn(1e-6, 0.0).is_err());
    }

    #[test]
    fn ambegaokar_baratoff_product_identity() {
        for ic in [0.3e-6, 1.47e-6, 5e-6] {
            let rn = ambegaokar_baratoff_rn(ic, 0.33e-3).unwrap();
            assert_relative_eq!(rn * ic, 0.33e-3, max_relative = 1e-14);
        }
    }

    #[test]
    fn potential_minimum_at_zero_flux_is_zero_phase() {
        let cell = bench_cell();
        let phi = minimize_potential(&cell, 0.0);
        assert_abs_diff_eq!(phi, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn potential_parity_symmetry() {
        let cell = bench_cell();
        for &(phi, ext) in &[(0.3, 1.1), (1.7, -2.4), (-0.9, 0.6)] {
            assert_relative_eq!(
                snail_potential(phi, ext, &cell),
                snail_potential(-phi, -ext, &cell),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn potential_periodic_in_external_phase() {
        // 2π-periodicity in the external phase, jointly with a 2π shift of
        // the winding coordinate. The periodic inductance is covered below.
        let cell = bench_cell();
        let tau = std::f64::consts::TAU;
        for &(phi, ext) in &[(0.0, 0.83), (1.2, -2.5), (-0.7, 4.0)] {
            assert_relative_eq!(
                snail_potential(phi + tau, ext + tau, &cell),
                snail_potential(phi, ext, &cell),
                max_relative = 1e-14
            );
        }
        let l0 = snail_effective_inductance(&cell, 0.3).unwrap();
        let l1 = snail_effective_inductance(&cell, 1.3).unwrap();
        assert_relative_eq!(l0, l1, max_relative = 1e-12);
    }

    #[test]
    fn minimizer_residual_over_flux_grid() {
        let cell = bench_cell();
        for i in 0..=100 {
            let flux = -0.5 + (i as f64) / 100.0;
            let ext = std::f64::consts::TAU * flux;
            let phi = minimize_potential(&cell, ext);
            let du = snail_potential_derivative(1, phi, ext, &cell);
            assert!(du.abs() < 1e-10, "residual {du:.3e} at flux {flux}");
            let d2u = snail_potential_derivative(2, phi, ext, &cell);
            assert!(d2u > 0.0, "non-minimum at flux {flux}");
        }
    }

    #[test]
    fn minimizer_residual_at_half_flux_from_derivative_oracle() {
        // Dense scan plus bisection on the derivative, independent of the
        // Newton path in minimize_potential.
        let cell = SnailParams {
            junction_ratio: 0.05,
            ..bench_cell()
        };
        let ext = std::f64::consts::PI;
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        let mut prev = snail_potential_derivative(1, -std::f64::consts::PI, ext, &cell);
        let mut prev_phi = -std::f64::consts::PI;
        let mut best_u = f64::INFINITY;
        for i in 1..=20000 {
            let phi = -std::f64::consts::PI + std::f64::consts::TAU * (i as f64) / 20000.0;
            let du = snail_potential_derivative(1, phi, ext, &cell);
            if prev < 0.0 && du >= 0.0 {
                let u = snail_potential(phi, ext, &cell);
                if u < best_u {
                    best_u = u;
                    lo = prev_phi;
                    hi = phi;
                }
            }
            prev = du;
            prev_phi = phi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if snail_potential_derivative(1, mid, ext, &cell) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle_phi = 0.5 * (lo + hi);
        let phi = minimize_potential(&cell, ext);
        assert_abs_diff_eq!(phi, oracle_phi, epsilon = 1e-8);
        assert!(snail_potential_derivative(1, phi, ext, &cell).abs() < 1e-10);
    }

    #[test]
    fn effective_inductance_matches_table() {
        let cell = bench_cell();
        let l = snail_effective_inductance(&cell, 0.0).unwrap();
        assert_relative_eq!(l, 584e-12, max_relative = 0.01);
        // Parallel combination of the arm inductances at zero flux.
        let lj = cell.large_junction.josephson_inductance();
        let l_large = 3.0 * lj;
        let l_small = lj / cell.junction_ratio;
        let parallel = 1.0 / (1.0 / l_large + 1.0 / l_small);
        assert_relative_eq!(l, parallel, max_relative = 1e-12);
    }

    #[test]
    fn effective_inductance_even_in_flux() {
        let cell = bench_cell();
        for &flux in &[0.1, 0.25, 0.4, 0.5] {
            let lp = snail_effective_inductance(&cell, flux).unwrap();
            let lm = snail_effective_inductance(&cell, -flux).unwrap();
            assert_relative_eq!(lp, lm, max_relative = 1e-10);
            assert!(lp > 0.0);
        }
    }

    #[test]
    fn effective_inductance_at_half_flux_vs_finite_difference_oracle() {
        let cell = bench_cell();
        let ext = std::f64::consts::PI;
        let phi = minimize_potential(&cell, ext);
        // 1e-4 rad central stencil curvature oracle.
        let h = 1e-4;
        let d2 = (snail_potential(phi + h, ext, &cell) - 2.0 * snail_potential(phi, ext, &cell)
            + snail_potential(phi - h, ext, &cell))
            / (h * h);
        let l_oracle = cell.large_junction.josephson_inductance() / d2;
        let l = snail_effective_inductance(&cell, 0.5).unwrap();
        assert_relative_eq!(l, l_oracle, max_relative = 1e-6);
    }

    #[test]
    fn taylor_coefficients_parity() {
        let cell = bench_cell();
        let c0 = snail_taylor_coefficients(&cell, 0.0, 4).unwrap();
        assert!(c0[0] > 0.0);
        assert_abs_diff_eq!(c0[1], 0.0, epsilon = 1e-12); // c3(0) = 0
        for i in 0..=20 {
            let flux = -0.5 + (i as f64) / 20.0;
            let cp = snail_taylor_coefficients(&cell, flux, 4).unwrap();
            let cm = snail_taylor_coefficients(&cell, -flux, 4).unwrap();
            assert_relative_eq!(cp[1], -cm[1], max_relative = 1e-8, epsilon = 1e-12); // c3 odd
            assert_relative_eq!(cp[0], cm[0], max_relative = 1e-10); // c2 even
            assert_relative_eq!(cp[2], cm[2], max_relative = 1e-8, epsilon = 1e-12); // c4 even
        }
    }

    #[test]
    fn taylor_c4_matches_finite_difference_oracle() {
        let cell = bench_cell();
        let ext = 0.0;
        let phi = minimize_potential(&cell, ext);
        // High-order central difference for the fourth derivative.
        let h = 2e-2;
        let u = |x: f64| snail_potential(x, ext, &cell);
        let d4 = (u(phi - 2.0 * h) - 4.0 * u(phi - h) + 6.0 * u(phi) - 4.0 * u(phi + h)
            + u(phi + 2.0 * h))
            / h.powi(4);
        let c = snail_taylor_coefficients(&cell, 0.0, 4).unwrap();
        assert_relative_eq!(c[2], d4 / 24.0, max_relative = 1e-3);
        // Analytic expectation at zero flux: u'''' = -r - 1/n³.
        let n = cell.n_large as f64;
        assert_relative_eq!(
            c[2],
            (-cell.junction_ratio - 1.0 / (n * n * n)) / 24.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn normalization_table_values() {
        let s = NormalizationScheme::pscan2();
        assert_relative_eq!(
            s.normalize(FLUX_QUANTUM, QuantityKind::Flux),
            std::f64::consts::TAU,
            max_relative = 1e-14
        );
        // 10 time units correspond to 3.29 ps.
        assert_relative_eq!(
            s.normalize(3.29e-12, QuantityKind::Time),
            10.0,
            max_relative = 1e-3
        );
        assert_relative_eq!(
            s.normalize(584e-12, QuantityKind::Inductance),
            1.775,
            max_relative = 1e-3
        );
    }

    #[test]
    fn normalization_round_trip_and_derived_norms() {
        let s = NormalizationScheme::pscan2();
        let kinds = [
            QuantityKind::Flux,
            QuantityKind::Current,
            QuantityKind::Voltage,
            QuantityKind::Resistance,
            QuantityKind::Inductance,
            QuantityKind::Capacitance,
            QuantityKind::AngularFrequency,
            QuantityKind::Time,
        ];
        for kind in kinds {
            for &v in &[1e-15, 3.29e-12, 1.0, 42.0] {
                assert_relative_eq!(
                    s.denormalize(s.normalize(v, kind), kind),
                    v,
                    max_relative = 1e-12
                );
            }
        }
        assert_relative_eq!(
            s.capacitance_norm() * s.resistance_norm * s.resistance_norm,
            s.inductance_norm(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            s.angular_frequency_norm() * s.time_norm(),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn fold_flux_periodicity() {
        assert_abs_diff_eq!(fold_flux(0.75), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(fold_flux(-1.25), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(fold_flux(3.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fold_flux(0.5), 0.5, epsilon = 1e-15);
    }
}

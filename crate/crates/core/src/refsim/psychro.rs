//! Moist-air relations on the Magnus saturation curve.

/// Atmospheric pressure assumed throughout, Pa.
pub const STANDARD_PRESSURE: f64 = 101_325.0;

/// Magnus coefficients over liquid water: `p_sat = C·exp(A·T / (B + T))`.
pub const MAGNUS_C_PA: f64 = 611.2;
pub const MAGNUS_A: f64 = 17.62;
pub const MAGNUS_B_C: f64 = 243.12;

/// Ratio of molar masses of water vapor and dry air.
pub const EPSILON: f64 = 0.622;

pub fn saturation_pressure(t_c: f64) -> f64 {
    MAGNUS_C_PA * (MAGNUS_A * t_c / (MAGNUS_B_C + t_c)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeHumidity {
    /// Clamped to `[0, 100]`.
    pub percent: f64,
    /// The unclamped value exceeded 100 %.
    pub saturated: bool,
}

/// Relative humidity in percent from temperature (°C), humidity ratio
/// (kg/kg) and pressure (Pa).
pub fn rh_from_tx(t_c: f64, x: f64, pressure: f64) -> RelativeHumidity {
    let x = x.max(0.0);
    let pv = x * pressure / (EPSILON + x);
    let rh = 100.0 * pv / saturation_pressure(t_c);
    RelativeHumidity {
        percent: rh.clamp(0.0, 100.0),
        saturated: rh > 100.0,
    }
}

/// Humidity ratio (kg/kg) from temperature (°C), relative humidity (%) and
/// pressure (Pa).
pub fn x_from_trh(t_c: f64, rh_pct: f64, pressure: f64) -> f64 {
    let pv = rh_pct / 100.0 * saturation_pressure(t_c);
    EPSILON * pv / (pressure - pv)
}

/// `(∂RH/∂T, ∂RH/∂X)` in %/K and %/(kg/kg), for first-order error propagation.
pub fn rh_sensitivity(t_c: f64, x: f64, pressure: f64) -> (f64, f64) {
    let rh = rh_from_tx(t_c, x, pressure).percent;
    let dlnps_dt = MAGNUS_A * MAGNUS_B_C / (MAGNUS_B_C + t_c).powi(2);
    let d_dt = -rh * dlnps_dt;
    let x = x.max(0.0);
    let d_dx = 100.0 * pressure * EPSILON / (EPSILON + x).powi(2) / saturation_pressure(t_c);
    (d_dt, d_dx)
}

//! On/off thermostat and humidistat, and closed-loop simulation of
//! identified zone models.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refsim::{
    heat_column, humidity_column, moisture_column, rh_column, rh_from_tx, temperature_column, HvacConfig,
    SimResult, ZoneTrace, STANDARD_PRESSURE,
};
use crate::signal::TimeSeries;
use crate::sysid::StateSpaceModel;

/// Outputs outside this range mark a closed loop as unstable, °C.
pub const UNSTABLE_LOOP_RANGE: (f64, f64) = (-50.0, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffSetpoints {
    pub heating_c: f64,
    pub cooling_c: f64,
    pub humidify_pct: Option<f64>,
    pub dehumidify_pct: Option<f64>,
}

impl OnOffSetpoints {
    pub fn thermal(heating_c: f64, cooling_c: f64) -> Result<Self> {
        Self { heating_c, cooling_c, humidify_pct: None, dehumidify_pct: None }.validated()
    }

    pub fn with_humidity(self, humidify_pct: f64, dehumidify_pct: f64) -> Result<Self> {
        Self { humidify_pct: Some(humidify_pct), dehumidify_pct: Some(dehumidify_pct), ..self }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.heating_c.is_finite() && self.cooling_c.is_finite() && self.heating_c < self.cooling_c) {
            return Err(Error::InvalidConfig(format!(
                "heating set point {} must be below cooling set point {}",
                self.heating_c, self.cooling_c
            )));
        }
        match (self.humidify_pct, self.dehumidify_pct) {
            (None, None) => Ok(self),
            (Some(lo), Some(hi)) if lo.is_finite() && hi.is_finite() && lo < hi => Ok(self),
            (Some(lo), Some(hi)) => Err(Error::InvalidConfig(format!(
                "humidification set point {lo} must be below dehumidification set point {hi}"
            ))),
            _ => Err(Error::InvalidConfig("humidity set points come in pairs".into())),
        }
    }
}

impl fmt::Display for OnOffSetpoints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.heating_c, self.cooling_c)?;
        if let (Some(lo), Some(hi)) = (self.humidify_pct, self.dehumidify_pct) {
            write!(f, ",{lo},{hi}")?;
        }
        Ok(())
    }
}

/// `Th,Tc` or `Th,Tc,RHh,RHd`.
impl FromStr for OnOffSetpoints {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("set points {s:?}: {e}")))?;
        match parts[..] {
            [th, tc] => Self::thermal(th, tc),
            [th, tc, lo, hi] => Self::thermal(th, tc)?.with_humidity(lo, hi),
            _ => Err(Error::InvalidConfig(format!("set points {s:?}: expected Th,Tc[,RHh,RHd]"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Actuation {
    /// W, heating positive.
    pub heat_w: f64,
    /// kg/s, humidification positive.
    pub moisture_kgs: f64,
}

/// Full capacity below the lower set point, full reverse capacity above
/// the upper one, nothing in between.
pub fn controller_step(sp: &OnOffSetpoints, hvac: &HvacConfig, temperature: f64, rh: Option<f64>) -> Actuation {
    let heat_w = if temperature < sp.heating_c {
        hvac.heating_w
    } else if temperature > sp.cooling_c {
        -hvac.cooling_w
    } else {
        0.0
    };
    let moisture_kgs = match (rh, sp.humidify_pct, sp.dehumidify_pct) {
        (Some(rh), Some(lo), _) if rh < lo => hvac.humidify_kgs,
        (Some(rh), _, Some(hi)) if rh > hi => -hvac.dehumidify_kgs,
        _ => 0.0,
    };
    Actuation { heat_w, moisture_kgs }
}

pub trait Controller: Send + Sync {
    fn name(&self) -> &str;
    fn actuate(&self, hvac: &HvacConfig, temperature: f64, rh: Option<f64>) -> Actuation;
}

#[derive(Debug, Clone, Copy)]
pub struct OnOff {
    pub setpoints: OnOffSetpoints,
}

impl OnOff {
    pub fn new(setpoints: OnOffSetpoints) -> Self {
        Self { setpoints }
    }
}

impl Controller for OnOff {
    fn name(&self) -> &str {
        "on-off"
    }

    fn actuate(&self, hvac: &HvacConfig, temperature: f64, rh: Option<f64>) -> Actuation {
        controller_step(&self.setpoints, hvac, temperature, rh)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FreeFloat;

impl Controller for FreeFloat {
    fn name(&self) -> &str {
        "free-float"
    }

    fn actuate(&self, _: &HvacConfig, _: f64, _: Option<f64>) -> Actuation {
        Actuation::default()
    }
}

/// How HVAC power enters an identified zone model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopTopology {
    /// Inputs `[T_o, Q_solar + Q_hvac]`.
    HvacAddedToSolar,
    /// Inputs `[T_o, Q_solar, Q_hvac]`.
    HvacSeparateInput,
}

impl LoopTopology {
    /// Thermal input count; moisture models take two more, `[X_o, G]`,
    /// where `G` is vapor production plus moisture actuation.
    pub fn input_count(self, moisture: bool) -> usize {
        let base = match self {
            Self::HvacAddedToSolar => 2,
            Self::HvacSeparateInput => 3,
        };
        base + if moisture { 2 } else { 0 }
    }
}

impl FromStr for LoopTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "added" => Ok(Self::HvacAddedToSolar),
            "separate" => Ok(Self::HvacSeparateInput),
            _ => Err(Error::InvalidConfig(format!("unknown topology {s:?}; expected added or separate"))),
        }
    }
}

impl fmt::Display for LoopTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HvacAddedToSolar => "added",
            Self::HvacSeparateInput => "separate",
        })
    }
}

/// One identified zone in a closed loop.
#[derive(Debug, Clone)]
pub struct ZoneLoop<'a> {
    pub name: String,
    /// Outputs `[T]`, or `[T, X]` for a moisture model.
    pub model: &'a StateSpaceModel,
    pub solar_gain: &'a TimeSeries,
    /// Vapor production, required for moisture models.
    pub production: Option<&'a TimeSeries>,
    pub x0: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct LoopResult {
    pub result: SimResult,
    /// Zones whose output left [`UNSTABLE_LOOP_RANGE`], with the first step.
    pub unstable: Vec<(String, usize)>,
}

impl LoopResult {
    pub fn is_unstable(&self) -> bool {
        !self.unstable.is_empty()
    }
}

fn hold_ratio(source_dt: f64, dt: f64) -> Result<usize> {
    let ratio = source_dt / dt;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
        return Err(Error::InvalidConfig(format!("loop step {dt} s must divide the data step {source_dt} s")));
    }
    Ok(r as usize)
}

/// Runs every zone model against the on/off decisions of `controller`.
///
/// At each step the controller reads the output the zone would show
/// without actuation, the actuation is injected per `topology` and held
/// for the step, and the state advances. Exogenous series on a coarser
/// grid are held between samples.
pub fn simulate_closed_loop(
    zones: &[ZoneLoop<'_>],
    outdoor_temperature: &TimeSeries,
    outdoor_humidity: Option<&TimeSeries>,
    controller: &dyn Controller,
    hvac: &HvacConfig,
    topology: LoopTopology,
    dt: f64,
) -> Result<LoopResult> {
    hvac.validate()?;
    let ratio = hold_ratio(outdoor_temperature.dt(), dt)?;
    let n_src = outdoor_temperature.len();
    let len = n_src * ratio;
    let t0 = outdoor_temperature.t0();
    let mut traces = Vec::with_capacity(zones.len());
    let mut unstable = Vec::new();

    for zone in zones {
        let model = zone.model;
        if model.dt().is_none_or(|d| (d - dt).abs() > 1e-9 * dt) {
            return Err(Error::DtMismatch { expected: dt, found: model.dt().unwrap_or(f64::NAN) });
        }
        let ham = model.outputs() == 2;
        if model.outputs() != 1 && !ham {
            return Err(Error::InvalidModel(format!("zone model must have 1 or 2 outputs, has {}", model.outputs())));
        }
        let expected = topology.input_count(ham);
        if model.inputs() != expected {
            return Err(Error::TopologyMismatch { expected, found: model.inputs() });
        }
        if !zone.solar_gain.same_grid(outdoor_temperature) {
            return Err(Error::GridMismatch(format!("solar gain of zone {} is off the climate grid", zone.name)));
        }
        let (x_o, prod) = if ham {
            let x_o = outdoor_humidity
                .ok_or_else(|| Error::InvalidConfig("moisture model needs outdoor humidity".into()))?;
            let prod = zone
                .production
                .ok_or_else(|| Error::InvalidConfig(format!("zone {} needs a vapor production series", zone.name)))?;
            if !x_o.same_grid(outdoor_temperature) || !prod.same_grid(outdoor_temperature) {
                return Err(Error::GridMismatch("moisture drivers are off the climate grid".into()));
            }
            (Some(x_o.values()), Some(prod.values()))
        } else {
            (None, None)
        };

        let (a, b, c, d) = (model.a(), model.b(), model.c(), model.d());
        let n = model.order();
        let mut x = match &zone.x0 {
            Some(x0) if x0.len() == n => x0.clone(),
            Some(x0) => return Err(Error::LengthMismatch { expected: n, found: x0.len() }),
            None => DVector::zeros(n),
        };
        let hvac_col = match topology {
            LoopTopology::HvacAddedToSolar => 1,
            LoopTopology::HvacSeparateInput => 2,
        };
        let moist_col = expected - 1;
        let mut u = DVector::zeros(model.inputs());
        let mut y = DVector::zeros(model.outputs());
        let mut next = DVector::zeros(n);
        let mut temp = Vec::with_capacity(len);
        let mut heat = Vec::with_capacity(len);
        let mut hum = Vec::with_capacity(if ham { len } else { 0 });
        let mut rh_hist = Vec::with_capacity(hum.capacity());
        let mut act_hist = Vec::with_capacity(hum.capacity());
        let mut first_bad = None;

        for k in 0..len {
            let i = k / ratio;
            u.fill(0.0);
            u[0] = outdoor_temperature.values()[i];
            u[1] = zone.solar_gain.values()[i];
            if let (Some(x_o), Some(prod)) = (x_o, prod) {
                u[moist_col - 1] = x_o[i];
                u[moist_col] = prod[i];
            }
            // measurement before actuation
            y.gemv(1.0, c, &x, 0.0);
            y.gemv(1.0, d, &u, 1.0);
            let t_meas = y[0];
            let rh = ham.then(|| rh_from_tx(t_meas, y[1], STANDARD_PRESSURE).percent);
            let act = controller.actuate(hvac, t_meas, rh);
            let q = act.heat_w.clamp(-hvac.cooling_w, hvac.heating_w);
            let g = act.moisture_kgs.clamp(-hvac.dehumidify_kgs, hvac.humidify_kgs);
            u[hvac_col] += q;
            if ham {
                u[moist_col] += g;
            }
            y.gemv(1.0, c, &x, 0.0);
            y.gemv(1.0, d, &u, 1.0);

            let t_out = y[0];
            if first_bad.is_none() && !(UNSTABLE_LOOP_RANGE.0..=UNSTABLE_LOOP_RANGE.1).contains(&t_out) {
                first_bad = Some(k);
            }
            temp.push(t_out);
            heat.push(q);
            if ham {
                let r = rh_from_tx(t_out, y[1], STANDARD_PRESSURE);
                hum.push(y[1]);
                rh_hist.push(r.percent);
                act_hist.push(g);
            }
            next.gemv(1.0, a, &x, 0.0);
            next.gemv(1.0, b, &u, 1.0);
            std::mem::swap(&mut x, &mut next);
            if !x.iter().all(|v| v.is_finite()) {
                // keep the trace finite; the loop is flagged below
                x.fill(0.0);
                first_bad.get_or_insert(k);
            }
        }
        if let Some(k) = first_bad {
            unstable.push((zone.name.clone(), k));
        }
        let series = |name: String, unit: &str, v: Vec<f64>| TimeSeries::new(name, unit, t0, dt, v);
        let fine_solar = if ratio == 1 {
            zone.solar_gain.clone()
        } else {
            let v = (0..len).map(|k| zone.solar_gain.values()[k / ratio]).collect();
            series(zone.solar_gain.name().to_string(), zone.solar_gain.unit(), v)?
        };
        traces.push(ZoneTrace {
            name: zone.name.clone(),
            temperature: series(temperature_column(&zone.name), "degC", temp)?,
            solar_gain: fine_solar,
            heat: series(heat_column(&zone.name), "W", heat)?,
            humidity: ham.then(|| series(humidity_column(&zone.name), "kg/kg", hum)).transpose()?,
            rh: ham.then(|| series(rh_column(&zone.name), "%", rh_hist)).transpose()?,
            moisture: ham.then(|| series(moisture_column(&zone.name), "kg/s", act_hist)).transpose()?,
            production: None,
        });
    }

    let hold = |s: &TimeSeries| -> Result<TimeSeries> {
        if ratio == 1 {
            return Ok(s.clone());
        }
        let v = (0..len).map(|k| s.values()[k / ratio]).collect();
        TimeSeries::new(s.name(), s.unit(), t0, dt, v)
    };
    let warnings = unstable
        .iter()
        .map(|(z, k)| format!("unstable loop: zone {z} left [{}, {}] degC at step {k}", UNSTABLE_LOOP_RANGE.0, UNSTABLE_LOOP_RANGE.1))
        .collect();
    Ok(LoopResult {
        result: SimResult {
            outdoor_temperature: hold(outdoor_temperature)?,
            outdoor_humidity: outdoor_humidity.map(hold).transpose()?,
            zones: traces,
            warnings,
        },
        unstable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFraction {
    /// Percent per zone.
    pub per_zone: Vec<f64>,
    /// Percent over all zone samples.
    pub aggregate: f64,
}

/// Share of samples with `T_h − tol ≤ T ≤ T_c + tol`, in percent.
pub fn within_band_fraction(result: &SimResult, sp: &OnOffSetpoints, tolerance: f64) -> Result<BandFraction> {
    if result.zones.is_empty() || result.is_empty() {
        return Err(Error::InvalidSeries("band fraction of an empty result".into()));
    }
    let (lo, hi) = (sp.heating_c - tolerance, sp.cooling_c + tolerance);
    let mut inside_total = 0usize;
    let mut total = 0usize;
    let mut per_zone = Vec::with_capacity(result.zones.len());
    for z in &result.zones {
        let v = z.temperature.values();
        let inside = v.iter().filter(|&&t| (lo..=hi).contains(&t)).count();
        per_zone.push(100.0 * inside as f64 / v.len() as f64);
        inside_total += inside;
        total += v.len();
    }
    Ok(BandFraction { per_zone, aggregate: 100.0 * inside_total as f64 / total as f64 })
}

/// Identity-like helper for tests and examples: a static model `y = D u`.
pub fn static_model(d: DMatrix<f64>, dt: f64) -> Result<StateSpaceModel> {
    let (p, m) = d.shape();
    StateSpaceModel::new(
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, m),
        DMatrix::zeros(p, 1),
        d,
        crate::sysid::TimeDomain::Discrete { dt },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hvac() -> HvacConfig {
        HvacConfig::thermal(1500.0, 1000.0)
    }

    #[test]
    fn rule_application() {
        let sp = OnOffSetpoints::thermal(18.0, 22.0).unwrap();
        assert_eq!(controller_step(&sp, &hvac(), 17.5, None).heat_w, 1500.0);
        assert_eq!(controller_step(&sp, &hvac(), 20.0, None).heat_w, 0.0);
        assert_eq!(controller_step(&sp, &hvac(), 23.0, None).heat_w, -1000.0);
    }

    #[test]
    fn humidistat_rule() {
        let sp = OnOffSetpoints::thermal(18.0, 22.0).unwrap().with_humidity(40.0, 70.0).unwrap();
        let h = HvacConfig { humidify_kgs: 1e-4, dehumidify_kgs: 2e-4, ..hvac() };
        assert_eq!(controller_step(&sp, &h, 20.0, Some(30.0)).moisture_kgs, 1e-4);
        assert_eq!(controller_step(&sp, &h, 20.0, Some(50.0)).moisture_kgs, 0.0);
        assert_eq!(controller_step(&sp, &h, 20.0, Some(80.0)).moisture_kgs, -2e-4);
    }

    #[test]
    fn setpoint_parsing() {
        let sp: OnOffSetpoints = "18,22".parse().unwrap();
        assert_eq!((sp.heating_c, sp.cooling_c), (18.0, 22.0));
        let sp: OnOffSetpoints = "18,22,40,70".parse().unwrap();
        assert_eq!(sp.dehumidify_pct, Some(70.0));
        assert!("22,18".parse::<OnOffSetpoints>().is_err());
        assert!("18,22,70,40".parse::<OnOffSetpoints>().is_err());
        assert!("18".parse::<OnOffSetpoints>().is_err());
        assert_eq!(sp.to_string().parse::<OnOffSetpoints>().unwrap(), sp);
    }

    #[test]
    fn constant_in_band_needs_no_actuation() {
        let to = TimeSeries::new("To_C", "degC", 0.0, 3600.0, vec![20.0; 48]).unwrap();
        let sol = to.with_values(vec![0.0; 48]).unwrap();
        let model = static_model(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 3600.0).unwrap();
        let zones = [ZoneLoop { name: "z".into(), model: &model, solar_gain: &sol, production: None, x0: None }];
        let sp = OnOffSetpoints::thermal(18.0, 22.0).unwrap();
        let out = simulate_closed_loop(&zones, &to, None, &OnOff::new(sp), &hvac(), LoopTopology::HvacAddedToSolar, 3600.0)
            .unwrap();
        assert!(out.result.zones[0].heat.values().iter().all(|&q| q == 0.0));
        assert_eq!(within_band_fraction(&out.result, &sp, 0.0).unwrap().aggregate, 100.0);
    }

    #[test]
    fn topology_must_match_inputs() {
        let to = TimeSeries::new("To_C", "degC", 0.0, 3600.0, vec![20.0; 4]).unwrap();
        let model = static_model(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 3600.0).unwrap();
        let zones = [ZoneLoop { name: "z".into(), model: &model, solar_gain: &to, production: None, x0: None }];
        let sp = OnOff::new(OnOffSetpoints::thermal(18.0, 22.0).unwrap());
        let err = simulate_closed_loop(&zones, &to, None, &sp, &hvac(), LoopTopology::HvacSeparateInput, 3600.0);
        assert!(matches!(err, Err(Error::TopologyMismatch { expected: 3, found: 2 })));
    }

    #[test]
    fn band_fraction_half() {
        let mut v = vec![17.0; 5];
        v.extend([20.0; 5]);
        let t = TimeSeries::new("Ti_z_C", "degC", 0.0, 1.0, v).unwrap();
        let result = SimResult {
            outdoor_temperature: t.clone(),
            outdoor_humidity: None,
            zones: vec![ZoneTrace {
                name: "z".into(),
                temperature: t.clone(),
                solar_gain: t.clone(),
                heat: t,
                humidity: None,
                rh: None,
                moisture: None,
                production: None,
            }],
            warnings: Vec::new(),
        };
        let sp = OnOffSetpoints::thermal(18.0, 22.0).unwrap();
        assert_eq!(within_band_fraction(&result, &sp, 0.0).unwrap().aggregate, 50.0);
    }
}

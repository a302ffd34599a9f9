//! Lumped RC-network building simulator used as the reference truth.
//!
//! Each zone has an air node, wall branches (air, mid-wall node, outdoor
//! with half the resistance on either side) and an optional internal mass
//! linked to the air. Zones exchange heat through symmetric links. With
//! moisture enabled, every zone also carries an air humidity ratio and a
//! lumped hygric buffer.
//!
//! States advance by explicit Euler sub-steps no longer than a tenth of the
//! smallest node time constant. Climate samples and actuation are held
//! constant over each output step; the controller sees the sampled state at
//! the start of the step.

pub mod climate;
pub mod psychro;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use climate::{synth_climate, Climate};
pub use psychro::{rh_from_tx, rh_sensitivity, saturation_pressure, x_from_trh, RelativeHumidity, STANDARD_PRESSURE};

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallBranch {
    /// Total air-to-outdoor resistance, K/W.
    pub resistance: f64,
    /// Total heat capacity, J/K.
    pub capacitance: f64,
    /// Equal RC sections the branch is split into; each section lumps its
    /// capacitance at its middle.
    #[serde(default = "one_layer")]
    pub layers: usize,
}

fn one_layer() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InternalMass {
    /// Air-to-mass resistance, K/W.
    pub resistance: f64,
    pub capacitance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoistureParams {
    /// Dry-air mass of the zone, kg.
    pub air_mass_kg: f64,
    /// Dry-air mass flow exchanged with outdoor, kg/s.
    #[serde(default)]
    pub ventilation_kgs: f64,
    /// Vapor production between 07:00 and 23:00, kg/s.
    #[serde(default)]
    pub production_kgs: f64,
    /// Vapor production at night; same as daytime when absent.
    #[serde(default)]
    pub night_production_kgs: Option<f64>,
    /// Equivalent dry-air mass of the hygric buffer, kg; 0 disables it.
    #[serde(default)]
    pub buffer_mass_kg: f64,
    /// Air-to-buffer exchange, kg/s.
    #[serde(default)]
    pub buffer_exchange_kgs: f64,
}

impl MoistureParams {
    pub fn production_at(&self, t: f64) -> f64 {
        let hour = t.rem_euclid(climate::DAY_S) / 3600.0;
        if (7.0..23.0).contains(&hour) {
            self.production_kgs
        } else {
            self.night_production_kgs.unwrap_or(self.production_kgs)
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneParams {
    pub name: String,
    /// J/K.
    pub air_capacitance: f64,
    #[serde(default)]
    pub walls: Vec<WallBranch>,
    #[serde(default)]
    pub internal_mass: Option<InternalMass>,
    /// Multiplies the climate solar series into the zone gain in W.
    #[serde(default)]
    pub solar_aperture: f64,
    /// Share of the solar gain delivered to the air node; the rest goes
    /// to the internal mass, or is spread over the wall nodes.
    #[serde(default = "one")]
    pub solar_air_fraction: f64,
    /// W/K.
    #[serde(default)]
    pub ventilation_conductance: f64,
    #[serde(default)]
    pub moisture: Option<MoistureParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneLink {
    pub zones: [String; 2],
    /// W/K, the same in both directions.
    pub conductance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub name: String,
    /// Initial temperature of every node; the first outdoor sample if absent.
    #[serde(default)]
    pub initial_temperature: Option<f64>,
    pub zones: Vec<ZoneParams>,
    #[serde(default)]
    pub links: Vec<ZoneLink>,
}

/// Per-zone actuator capacities. Heating and humidification are positive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HvacConfig {
    /// W.
    #[serde(default)]
    pub heating_w: f64,
    /// W.
    #[serde(default)]
    pub cooling_w: f64,
    /// kg/s.
    #[serde(default)]
    pub humidify_kgs: f64,
    /// kg/s.
    #[serde(default)]
    pub dehumidify_kgs: f64,
}

impl HvacConfig {
    pub fn thermal(heating_w: f64, cooling_w: f64) -> Self {
        Self { heating_w, cooling_w, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let caps = [self.heating_w, self.cooling_w, self.humidify_kgs, self.dehumidify_kgs];
        if caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidConfig("HVAC capacities must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} must be positive, got {v}")))
    }
}

fn check_non_negative(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} must be non-negative, got {v}")))
    }
}

impl Building {
    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::InvalidConfig("building has no zones".into()));
        }
        let mut seen = BTreeMap::new();
        for z in &self.zones {
            if seen.insert(z.name.as_str(), ()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate zone name {:?}", z.name)));
            }
            let at = |f: &str| format!("zone {}: {f}", z.name);
            check_positive(&at("air_capacitance"), z.air_capacitance)?;
            for w in &z.walls {
                check_positive(&at("wall resistance"), w.resistance)?;
                check_positive(&at("wall capacitance"), w.capacitance)?;
                if w.layers == 0 {
                    return Err(Error::InvalidConfig(at("wall layers must be at least 1")));
                }
            }
            if let Some(m) = &z.internal_mass {
                check_positive(&at("internal mass resistance"), m.resistance)?;
                check_positive(&at("internal mass capacitance"), m.capacitance)?;
            }
            check_non_negative(&at("solar_aperture"), z.solar_aperture)?;
            check_non_negative(&at("ventilation_conductance"), z.ventilation_conductance)?;
            if !(0.0..=1.0).contains(&z.solar_air_fraction) {
                return Err(Error::InvalidConfig(at("solar_air_fraction must lie in [0, 1]")));
            }
            if let Some(m) = &z.moisture {
                check_positive(&at("air_mass_kg"), m.air_mass_kg)?;
                check_non_negative(&at("ventilation_kgs"), m.ventilation_kgs)?;
                check_non_negative(&at("buffer_mass_kg"), m.buffer_mass_kg)?;
                check_non_negative(&at("buffer_exchange_kgs"), m.buffer_exchange_kgs)?;
                if !m.production_kgs.is_finite() || m.night_production_kgs.is_some_and(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig(at("vapor production must be finite")));
                }
            }
        }
        for l in &self.links {
            check_non_negative("link conductance", l.conductance)?;
            for name in &l.zones {
                if !seen.contains_key(name.as_str()) {
                    return Err(Error::InvalidConfig(format!("link refers to unknown zone {name:?}")));
                }
            }
            if l.zones[0] == l.zones[1] {
                return Err(Error::InvalidConfig(format!("link connects zone {:?} to itself", l.zones[0])));
            }
        }
        Ok(())
    }

    pub fn zone_names(&self) -> Vec<String> {
        self.zones.iter().map(|z| z.name.clone()).collect()
    }

    pub fn zone_index(&self, name: &str) -> Option<usize> {
        self.zones.iter().position(|z| z.name == name)
    }

    /// Symmetric conductance between two zones, summed over all links.
    pub fn link_conductance(&self, a: &str, b: &str) -> f64 {
        self.links
            .iter()
            .filter(|l| (l.zones[0] == a && l.zones[1] == b) || (l.zones[0] == b && l.zones[1] == a))
            .map(|l| l.conductance)
            .sum()
    }

    /// Largest excursion of a zone's sampled temperature beyond the band
    /// edges after one step of full actuation: the rise of the air and
    /// internal mass together, capacity·dt / (C_air + C_mass), plus the
    /// air's lead over the mass while the HVAC runs, capacity·R_mass.
    pub fn overshoot_bound(&self, hvac: &HvacConfig, dt: f64) -> f64 {
        let cap = hvac.heating_w.max(hvac.cooling_w);
        self.zones
            .iter()
            .map(|z| match z.internal_mass {
                Some(m) => cap * (dt / (z.air_capacitance + m.capacitance) + m.resistance),
                None => cap * dt / z.air_capacitance,
            })
            .fold(0.0, f64::max)
    }

    /// Same bound for humidity in kg/kg per step: capacity·dt over the air
    /// plus buffer mass.
    pub fn moisture_overshoot_bound(&self, hvac: &HvacConfig, dt: f64) -> f64 {
        let cap = hvac.humidify_kgs.max(hvac.dehumidify_kgs);
        self.zones
            .iter()
            .filter_map(|z| z.moisture)
            .map(|m| cap * dt / (m.air_mass_kg + m.buffer_mass_kg))
            .fold(0.0, f64::max)
    }

    /// Four-room dwelling used by the case studies. Rooms are separated by
    /// adiabatic partitions; each has layered envelope walls, a window and
    /// furniture mass.
    pub fn reference_four_room() -> Self {
        let zone = |name: &str, aperture: f64, walls: &[(f64, f64, usize)], vent: f64, air_mass: f64| ZoneParams {
            name: name.into(),
            air_capacitance: 1.5e5,
            walls: walls
                .iter()
                .map(|&(resistance, capacitance, layers)| WallBranch { resistance, capacitance, layers })
                .collect(),
            internal_mass: Some(InternalMass { resistance: 0.0005, capacitance: 1.0e7 }),
            solar_aperture: aperture,
            solar_air_fraction: 0.3,
            ventilation_conductance: vent,
            moisture: Some(MoistureParams {
                air_mass_kg: air_mass,
                ventilation_kgs: 0.012,
                production_kgs: 6.0e-5,
                night_production_kgs: Some(2.0e-5),
                buffer_mass_kg: 1500.0,
                buffer_exchange_kgs: 0.05,
            }),
        };
        Self {
            name: "four-room dwelling".into(),
            initial_temperature: Some(19.0),
            zones: vec![
                zone("living", 2.0, &[(0.05, 8.0e6, 4), (0.08, 5.0e6, 3), (0.15, 3.0e4, 1)], 8.0, 180.0),
                zone("kitchen", 1.2, &[(0.06, 6.0e6, 4), (0.10, 6.0e6, 3), (0.20, 2.0e4, 1)], 12.0, 90.0),
                zone("bedroom", 1.5, &[(0.06, 7.0e6, 4), (0.10, 4.0e6, 3), (0.20, 2.0e4, 1)], 8.0, 120.0),
                zone("study", 1.0, &[(0.07, 5.0e6, 4), (0.12, 5.0e6, 3), (0.25, 1.5e4, 1)], 6.0, 75.0),
            ],
            links: Vec::new(),
        }
    }

    /// Three-zone office served by a heating-dominated plant.
    pub fn reference_office() -> Self {
        let zone = |name: &str, aperture: f64, r: f64, c: f64| ZoneParams {
            name: name.into(),
            air_capacitance: 9.0e5,
            walls: vec![
                WallBranch { resistance: r, capacitance: c, layers: 3 },
                WallBranch { resistance: 0.06, capacitance: 5.0e6, layers: 4 },
            ],
            internal_mass: Some(InternalMass { resistance: 0.001, capacitance: 8.0e6 }),
            solar_aperture: aperture,
            solar_air_fraction: 0.4,
            ventilation_conductance: 25.0,
            moisture: None,
        };
        Self {
            name: "three-zone office".into(),
            initial_temperature: Some(15.0),
            zones: vec![
                zone("north", 1.5, 0.03, 9.0e6),
                zone("south", 4.0, 0.03, 9.0e6),
                zone("core", 0.5, 0.05, 6.0e6),
            ],
            links: Vec::new(),
        }
    }
}

/// One zone of a simulation run; all series share the run's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneTrace {
    pub name: String,
    pub temperature: TimeSeries,
    /// Solar gain delivered to this zone, W.
    pub solar_gain: TimeSeries,
    /// Signed HVAC power, W (heating positive).
    pub heat: TimeSeries,
    pub humidity: Option<TimeSeries>,
    pub rh: Option<TimeSeries>,
    /// Signed moisture actuation, kg/s (humidification positive).
    pub moisture: Option<TimeSeries>,
    /// Vapor production, kg/s.
    pub production: Option<TimeSeries>,
}

impl ZoneTrace {
    pub fn columns(&self) -> Vec<TimeSeries> {
        let mut out = vec![self.temperature.clone(), self.solar_gain.clone(), self.heat.clone()];
        out.extend(self.humidity.iter().cloned());
        out.extend(self.rh.iter().cloned());
        out.extend(self.moisture.iter().cloned());
        out.extend(self.production.iter().cloned());
        out
    }
}

pub fn temperature_column(zone: &str) -> String {
    format!("Ti_{zone}_C")
}
pub fn solar_column(zone: &str) -> String {
    format!("Qsol_{zone}_W")
}
pub fn heat_column(zone: &str) -> String {
    format!("Qhvac_{zone}_W")
}
pub fn humidity_column(zone: &str) -> String {
    format!("Xi_{zone}_kgkg")
}
pub fn rh_column(zone: &str) -> String {
    format!("RHi_{zone}_pct")
}
pub fn moisture_column(zone: &str) -> String {
    format!("Ghum_{zone}_kgs")
}
pub fn production_column(zone: &str) -> String {
    format!("Gprod_{zone}_kgs")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub outdoor_temperature: TimeSeries,
    pub outdoor_humidity: Option<TimeSeries>,
    pub zones: Vec<ZoneTrace>,
    pub warnings: Vec<String>,
}

impl SimResult {
    pub fn dt(&self) -> f64 {
        self.outdoor_temperature.dt()
    }

    pub fn len(&self) -> usize {
        self.outdoor_temperature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outdoor_temperature.is_empty()
    }

    pub fn zone(&self, name: &str) -> Option<&ZoneTrace> {
        self.zones.iter().find(|z| z.name == name)
    }

    /// Every series in column order: outdoor channels, then per zone.
    pub fn columns(&self) -> Vec<TimeSeries> {
        let mut out = vec![self.outdoor_temperature.clone()];
        out.extend(self.outdoor_humidity.iter().cloned());
        for z in &self.zones {
            out.extend(z.columns());
        }
        out
    }

    /// Samples `start..end` of every series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        self.map_series(|s| s.slice(start, end))
    }

    /// Every `factor`-th sample of every channel.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        self.map_series(|s| s.decimate(factor))
    }

    fn map_series(&self, f: impl Fn(&TimeSeries) -> Result<TimeSeries>) -> Result<Self> {
        let opt = |s: &Option<TimeSeries>| s.as_ref().map(&f).transpose();
        let zones = self
            .zones
            .iter()
            .map(|z| {
                Ok(ZoneTrace {
                    name: z.name.clone(),
                    temperature: f(&z.temperature)?,
                    solar_gain: f(&z.solar_gain)?,
                    heat: f(&z.heat)?,
                    humidity: opt(&z.humidity)?,
                    rh: opt(&z.rh)?,
                    moisture: opt(&z.moisture)?,
                    production: opt(&z.production)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            outdoor_temperature: f(&self.outdoor_temperature)?,
            outdoor_humidity: opt(&self.outdoor_humidity)?,
            zones,
            warnings: self.warnings.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneEnergy {
    pub heating_j: f64,
    pub cooling_j: f64,
}

impl ZoneEnergy {
    pub fn total(&self) -> f64 {
        self.heating_j + self.cooling_j
    }
}

pub fn energy_of(heat: &TimeSeries) -> ZoneEnergy {
    let dt = heat.dt();
    let (mut heating_j, mut cooling_j) = (0.0, 0.0);
    for &q in heat.values() {
        heating_j += q.max(0.0) * dt;
        cooling_j += (-q).max(0.0) * dt;
    }
    ZoneEnergy { heating_j, cooling_j }
}

/// Heating and cooling energy per zone, J.
pub fn annual_energy(result: &SimResult) -> Vec<ZoneEnergy> {
    result.zones.iter().map(|z| energy_of(&z.heat)).collect()
}

const OUTDOOR: usize = usize::MAX;

struct Edge {
    from: usize,
    to: usize,
    g: f64,
}

/// Thermal node layout of a building.
struct Network {
    capacitance: Vec<f64>,
    edges: Vec<Edge>,
    /// Per zone: air node and the nodes receiving the non-air solar share.
    air: Vec<usize>,
    solar_sinks: Vec<Vec<usize>>,
}

impl Network {
    fn build(b: &Building) -> Self {
        let mut capacitance = Vec::new();
        let mut edges = Vec::new();
        let mut air = Vec::new();
        let mut solar_sinks = Vec::new();
        for z in &b.zones {
            let a = capacitance.len();
            capacitance.push(z.air_capacitance);
            air.push(a);
            let mut walls = Vec::new();
            for w in &z.walls {
                let n = w.layers as f64;
                let mut prev = a;
                let mut g = 2.0 * n / w.resistance;
                for _ in 0..w.layers {
                    let node = capacitance.len();
                    capacitance.push(w.capacitance / n);
                    edges.push(Edge { from: prev, to: node, g });
                    if prev == a {
                        walls.push(node);
                    }
                    prev = node;
                    g = n / w.resistance;
                }
                edges.push(Edge { from: prev, to: OUTDOOR, g: 2.0 * n / w.resistance });
            }
            if z.ventilation_conductance > 0.0 {
                edges.push(Edge { from: a, to: OUTDOOR, g: z.ventilation_conductance });
            }
            let sinks = if let Some(m) = &z.internal_mass {
                let node = capacitance.len();
                capacitance.push(m.capacitance);
                edges.push(Edge { from: a, to: node, g: 1.0 / m.resistance });
                vec![node]
            } else if !walls.is_empty() {
                walls
            } else {
                vec![a]
            };
            solar_sinks.push(sinks);
        }
        for l in &b.links {
            if l.conductance > 0.0 {
                let i = b.zone_index(&l.zones[0]).expect("validated link");
                let j = b.zone_index(&l.zones[1]).expect("validated link");
                edges.push(Edge { from: air[i], to: air[j], g: l.conductance });
            }
        }
        Self { capacitance, edges, air, solar_sinks }
    }

    /// Smallest `C / ΣG` over all nodes.
    fn min_time_constant(&self) -> f64 {
        let mut g = vec![0.0; self.capacitance.len()];
        for e in &self.edges {
            g[e.from] += e.g;
            if e.to != OUTDOOR {
                g[e.to] += e.g;
            }
        }
        self.capacitance
            .iter()
            .zip(&g)
            .filter(|(_, &g)| g > 0.0)
            .map(|(c, g)| c / g)
            .fold(f64::INFINITY, f64::min)
    }
}

fn substeps(dt: f64, tau: f64) -> usize {
    if tau.is_finite() {
        (dt / (0.1 * tau)).ceil().max(1.0) as usize
    } else {
        1
    }
}

/// Thermal simulation. Without `hvac` or `controller` the building floats
/// freely. The output step must divide the climate step.
pub fn simulate(
    building: &Building,
    climate: &Climate,
    hvac: Option<&HvacConfig>,
    controller: Option<&dyn Controller>,
    dt_output: f64,
) -> Result<SimResult> {
    run(building, climate, hvac, controller, dt_output, false)
}

/// Coupled heat and moisture simulation; needs outdoor humidity and
/// moisture parameters for every zone.
pub fn simulate_ham(
    building: &Building,
    climate: &Climate,
    hvac: Option<&HvacConfig>,
    controller: Option<&dyn Controller>,
    dt_output: f64,
) -> Result<SimResult> {
    run(building, climate, hvac, controller, dt_output, true)
}

fn output_ratio(climate_dt: f64, dt_output: f64) -> Result<usize> {
    if !(dt_output > 0.0) {
        return Err(Error::InvalidConfig(format!("output step {dt_output} s must be positive")));
    }
    let ratio = climate_dt / dt_output;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
        return Err(Error::InvalidConfig(format!(
            "output step {dt_output} s must divide the climate step {climate_dt} s"
        )));
    }
    Ok(r as usize)
}

fn run(
    building: &Building,
    climate: &Climate,
    hvac: Option<&HvacConfig>,
    controller: Option<&dyn Controller>,
    dt_output: f64,
    ham: bool,
) -> Result<SimResult> {
    building.validate()?;
    if let Some(h) = hvac {
        h.validate()?;
    }
    let ratio = output_ratio(climate.dt(), dt_output)?;
    let n_out = climate.len() * ratio;
    let t0 = climate.t0();
    let nz = building.zones.len();

    let x_out = if ham {
        let x = climate
            .humidity_ratio(STANDARD_PRESSURE)
            .ok_or_else(|| Error::InvalidConfig("moisture simulation needs outdoor humidity".into()))?;
        if let Some(z) = building.zones.iter().find(|z| z.moisture.is_none()) {
            return Err(Error::InvalidConfig(format!("zone {} has no moisture parameters", z.name)));
        }
        Some(x)
    } else {
        None
    };

    let net = Network::build(building);
    let mut tau = net.min_time_constant();
    if ham {
        for m in building.zones.iter().filter_map(|z| z.moisture) {
            let draw = m.ventilation_kgs + m.buffer_exchange_kgs;
            if draw > 0.0 {
                tau = tau.min(m.air_mass_kg / draw);
            }
            if m.buffer_mass_kg > 0.0 && m.buffer_exchange_kgs > 0.0 {
                tau = tau.min(m.buffer_mass_kg / m.buffer_exchange_kgs);
            }
        }
    }
    let n_sub = substeps(dt_output, tau);
    let h = dt_output / n_sub as f64;

    let first_to = climate.temperature().values()[0];
    let mut temp = vec![building.initial_temperature.unwrap_or(first_to); net.capacitance.len()];
    let mut flux = vec![0.0; temp.len()];
    let (mut xa, mut xb) = match &x_out {
        Some(x) => (vec![x.values()[0]; nz], vec![x.values()[0]; nz]),
        None => (Vec::new(), Vec::new()),
    };

    let mut t_hist = vec![Vec::with_capacity(n_out); nz];
    let mut sol_hist = vec![Vec::with_capacity(n_out); nz];
    let mut q_hist = vec![Vec::with_capacity(n_out); nz];
    let mut x_hist = vec![Vec::new(); nz];
    let mut rh_hist = vec![Vec::new(); nz];
    let mut g_hist = vec![Vec::new(); nz];
    let mut p_hist = vec![Vec::new(); nz];
    let mut to_hist = Vec::with_capacity(n_out);
    let mut xo_hist = Vec::new();
    let mut clamped = 0usize;
    let mut saturated = 0usize;

    let active = hvac.zip(controller);
    let to_values = climate.temperature().values();
    let solar_values = climate.solar().values();

    for k in 0..n_out {
        let ci = k / ratio;
        let t = t0 + k as f64 * dt_output;
        let t_o = to_values[ci];
        let solar = solar_values[ci];
        to_hist.push(t_o);
        let x_o = x_out.as_ref().map(|x| x.values()[ci]);
        if let Some(x) = x_o {
            xo_hist.push(x);
        }

        let mut heat = vec![0.0; nz];
        let mut hum = vec![0.0; nz];
        for (zi, zone) in building.zones.iter().enumerate() {
            let ta = temp[net.air[zi]];
            t_hist[zi].push(ta);
            sol_hist[zi].push(zone.solar_aperture * solar);
            let rh = if ham {
                let r = rh_from_tx(ta, xa[zi], STANDARD_PRESSURE);
                saturated += r.saturated as usize;
                x_hist[zi].push(xa[zi]);
                rh_hist[zi].push(r.percent);
                p_hist[zi].push(zone.moisture.expect("checked").production_at(t));
                Some(r.percent)
            } else {
                None
            };
            if let Some((cap, ctl)) = active {
                let act = ctl.actuate(cap, ta, rh);
                heat[zi] = act.heat_w.clamp(-cap.cooling_w, cap.heating_w);
                hum[zi] = act.moisture_kgs.clamp(-cap.dehumidify_kgs, cap.humidify_kgs);
            }
            q_hist[zi].push(heat[zi]);
            if ham {
                g_hist[zi].push(hum[zi]);
            }
        }

        for _ in 0..n_sub {
            flux.fill(0.0);
            for e in &net.edges {
                let other = if e.to == OUTDOOR { t_o } else { temp[e.to] };
                let q = e.g * (other - temp[e.from]);
                flux[e.from] += q;
                if e.to != OUTDOOR {
                    flux[e.to] -= q;
                }
            }
            for (zi, zone) in building.zones.iter().enumerate() {
                let gain = zone.solar_aperture * solar;
                let a = net.air[zi];
                flux[a] += zone.solar_air_fraction * gain + heat[zi];
                let sinks = &net.solar_sinks[zi];
                let rest = (1.0 - zone.solar_air_fraction) * gain / sinks.len() as f64;
                for &s in sinks {
                    flux[s] += rest;
                }
            }
            for (v, (f, c)) in temp.iter_mut().zip(flux.iter().zip(&net.capacitance)) {
                *v += h * f / c;
            }
            if let Some(x_o) = x_o {
                for (zi, zone) in building.zones.iter().enumerate() {
                    let m = zone.moisture.expect("checked");
                    let to_buffer = if m.buffer_mass_kg > 0.0 { m.buffer_exchange_kgs * (xb[zi] - xa[zi]) } else { 0.0 };
                    let dxa = m.ventilation_kgs * (x_o - xa[zi]) + to_buffer + m.production_at(t) + hum[zi];
                    if m.buffer_mass_kg > 0.0 {
                        xb[zi] -= h * to_buffer / m.buffer_mass_kg;
                    }
                    xa[zi] += h * dxa / m.air_mass_kg;
                    if xa[zi] < 0.0 {
                        xa[zi] = 0.0;
                        clamped += 1;
                    }
                }
            }
        }
        if temp.iter().chain(&xa).chain(&xb).any(|v| !v.is_finite()) {
            return Err(Error::InstabilityDetected { step: k });
        }
    }

    let mut warnings = Vec::new();
    if clamped > 0 {
        warnings.push(format!("negative indoor humidity clamped to 0 in {clamped} sub-steps"));
    }
    if saturated > 0 {
        warnings.push(format!("indoor air supersaturated in {saturated} samples"));
    }
    let series = |name: String, unit: &str, v: Vec<f64>| TimeSeries::new(name, unit, t0, dt_output, v);
    let mut zones = Vec::with_capacity(nz);
    for (zi, zone) in building.zones.iter().enumerate() {
        let name = &zone.name;
        let take = |v: &mut Vec<Vec<f64>>| std::mem::take(&mut v[zi]);
        zones.push(ZoneTrace {
            name: name.clone(),
            temperature: series(temperature_column(name), "degC", take(&mut t_hist))?,
            solar_gain: series(solar_column(name), "W", take(&mut sol_hist))?,
            heat: series(heat_column(name), "W", take(&mut q_hist))?,
            humidity: ham.then(|| series(humidity_column(name), "kg/kg", take(&mut x_hist))).transpose()?,
            rh: ham.then(|| series(rh_column(name), "%", take(&mut rh_hist))).transpose()?,
            moisture: ham.then(|| series(moisture_column(name), "kg/s", take(&mut g_hist))).transpose()?,
            production: ham.then(|| series(production_column(name), "kg/s", take(&mut p_hist))).transpose()?,
        });
    }
    Ok(SimResult {
        outdoor_temperature: series("To_C".into(), "degC", to_hist)?,
        outdoor_humidity: ham.then(|| series("Xo_kgkg".into(), "kg/kg", xo_hist)).transpose()?,
        zones,
        warnings,
    })
}

//! Building config, model JSON, and mapping CSV columns onto simulation
//! results and climates.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use roomsi_core::control::LoopTopology;
use roomsi_core::refsim::*;
use roomsi_core::signal::TimeSeries;
use roomsi_core::sysid::{EstimationMeta, FitReport, StateSpaceModel, TimeDomain};
use roomsi_core::validation::ZoneModels;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingFile {
    pub hvac: Option<HvacConfig>,
    pub building: Building,
}

/// On-disk layout: the building's fields plus an optional `[hvac]` table.
#[derive(Serialize, Deserialize)]
struct BuildingToml {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_temperature: Option<f64>,
    #[serde(default)]
    links: Vec<ZoneLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hvac: Option<HvacConfig>,
    zones: Vec<ZoneParams>,
}

fn line_col(text: &str, offset: usize) -> (u64, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

pub fn parse_building(text: &str, origin: &str) -> CliResult<BuildingFile> {
    let raw: BuildingToml = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        CliError::Format { path: origin.into(), line, column, message: e.message().to_string() }
    })?;
    let file = BuildingFile {
        hvac: raw.hvac,
        building: Building { name: raw.name, initial_temperature: raw.initial_temperature, zones: raw.zones, links: raw.links },
    };
    file.building.validate()?;
    if let Some(h) = &file.hvac {
        h.validate()?;
    }
    Ok(file)
}

pub fn read_building(path: &Path) -> CliResult<BuildingFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_building(&text, &path.display().to_string())
}

pub fn format_building(file: &BuildingFile) -> CliResult<String> {
    let b = file.building.clone();
    let raw = BuildingToml { name: b.name, initial_temperature: b.initial_temperature, links: b.links, hvac: file.hvac, zones: b.zones };
    toml::to_string(&raw).map_err(|e| CliError::Config(e.to_string()))
}

// ------------------------------------------------------------------ models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixModel {
    pub domain: TimeDomain,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Row-major.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub meta: EstimationMeta,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> CliResult<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("matrix {name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl MatrixModel {
    pub fn from_model(m: &StateSpaceModel) -> Self {
        Self {
            domain: m.domain(),
            inputs: m.input_labels().to_vec(),
            outputs: m.output_labels().to_vec(),
            a: rows(m.a()),
            b: rows(m.b()),
            c: rows(m.c()),
            d: rows(m.d()),
            meta: m.meta().clone(),
        }
    }

    pub fn to_model(&self) -> CliResult<StateSpaceModel> {
        let (n, m, p) = (self.a.len(), self.inputs.len(), self.outputs.len());
        let model = StateSpaceModel::new(
            matrix("A", &self.a, n, n)?,
            matrix("B", &self.b, n, m)?,
            matrix("C", &self.c, p, n)?,
            matrix("D", &self.d, p, m)?,
            self.domain,
        )?;
        Ok(model.with_labels(self.inputs.clone(), self.outputs.clone())?.with_meta(self.meta.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneModelEntry {
    pub zone: String,
    pub crest_ti: Option<f64>,
    pub mu_e: f64,
    pub mu_signed: f64,
    pub sigma_e: f64,
    /// Absent when not finite.
    pub fit_percent: Option<f64>,
    pub model: MatrixModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub topology: LoopTopology,
    pub moisture: bool,
    pub zones: Vec<ZoneModelEntry>,
}

impl ModelFile {
    pub fn from_zone_models(zm: &ZoneModels, zones: &[String]) -> Self {
        let zones = zm
            .models
            .iter()
            .zip(&zm.crest)
            .zip(&zm.fit)
            .zip(zones)
            .map(|(((m, c), f), z)| ZoneModelEntry {
                zone: z.clone(),
                crest_ti: *c,
                mu_e: f.mu_e,
                mu_signed: f.mu_signed,
                sigma_e: f.sigma_e,
                fit_percent: f.fit_percent.is_finite().then_some(f.fit_percent),
                model: MatrixModel::from_model(m),
            })
            .collect();
        Self { topology: zm.topology, moisture: zm.moisture, zones }
    }

    pub fn to_zone_models(&self) -> CliResult<ZoneModels> {
        let models = self.zones.iter().map(|z| z.model.to_model()).collect::<CliResult<Vec<_>>>()?;
        Ok(ZoneModels {
            models,
            crest: self.zones.iter().map(|z| z.crest_ti).collect(),
            fit: self
                .zones
                .iter()
                .map(|z| FitReport {
                    mu_e: z.mu_e,
                    mu_signed: z.mu_signed,
                    sigma_e: z.sigma_e,
                    fit_percent: z.fit_percent.unwrap_or(f64::NEG_INFINITY),
                })
                .collect(),
            topology: self.topology,
            moisture: self.moisture,
        })
    }

    pub fn zone_names(&self) -> Vec<String> {
        self.zones.iter().map(|z| z.zone.clone()).collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.display().to_string(),
        line: e.line() as u64,
        column: e.column(),
        message: e.to_string(),
    })
}

// ----------------------------------------------------------------- columns

pub const OUTDOOR_TEMPERATURE: &str = "To_C";
pub const OUTDOOR_SOLAR: &str = "Qsolar_W";
pub const OUTDOOR_RH: &str = "RHo_pct";
pub const OUTDOOR_HUMIDITY: &str = "Xo_kgkg";

pub fn internal_gain_column(zone: &str) -> String {
    format!("Qint_{zone}_W")
}

fn find<'a>(cols: &'a [TimeSeries], name: &str) -> Option<&'a TimeSeries> {
    cols.iter().find(|c| c.name() == name)
}

fn require<'a>(cols: &'a [TimeSeries], name: &str) -> CliResult<&'a TimeSeries> {
    find(cols, name).ok_or_else(|| CliError::Config(format!("missing column {name}")))
}

pub fn climate_from_columns(cols: &[TimeSeries]) -> CliResult<Climate> {
    Ok(Climate::new(
        require(cols, OUTDOOR_TEMPERATURE)?.clone(),
        require(cols, OUTDOOR_SOLAR)?.clone(),
        find(cols, OUTDOOR_RH).cloned(),
    )?)
}

pub fn climate_columns(c: &Climate) -> Vec<TimeSeries> {
    let mut out = vec![c.temperature().clone(), c.solar().clone()];
    out.extend(c.rh().cloned());
    out
}

/// Zones are the `Ti_<zone>_C` columns in file order. Per zone the solar
/// gain is `Qsol_<zone>_W`, or the shared `Qsolar_W`, plus `Qint_<zone>_W`
/// when present; `Qhvac_<zone>_W` is required. Outdoor humidity is
/// `Xo_kgkg`, or derived from `RHo_pct`.
pub fn result_from_columns(cols: &[TimeSeries]) -> CliResult<SimResult> {
    let to = require(cols, OUTDOOR_TEMPERATURE)?;
    if let Some(bad) = cols.iter().find(|c| !c.same_grid(to)) {
        return Err(CliError::Config(format!("column {} is not on the grid of {}", bad.name(), to.name())));
    }
    let outdoor_humidity = match (find(cols, OUTDOOR_HUMIDITY), find(cols, OUTDOOR_RH)) {
        (Some(x), _) => Some(x.clone()),
        (None, Some(rh)) => {
            let values = to.values().iter().zip(rh.values()).map(|(&t, &r)| x_from_trh(t, r, STANDARD_PRESSURE)).collect();
            Some(TimeSeries::new(OUTDOOR_HUMIDITY, "kg/kg", to.t0(), to.dt(), values)?)
        }
        (None, None) => None,
    };
    let names: Vec<String> = cols
        .iter()
        .filter_map(|c| c.name().strip_prefix("Ti_").and_then(|n| n.strip_suffix("_C")).map(str::to_string))
        .collect();
    if names.is_empty() {
        return Err(CliError::Config("no zone temperature columns Ti_<zone>_C".into()));
    }
    let zones = names
        .iter()
        .map(|z| {
            let mut solar = match find(cols, &solar_column(z)) {
                Some(s) => s.clone(),
                None => require(cols, OUTDOOR_SOLAR)?.clone().renamed(solar_column(z), "W"),
            };
            if let Some(q) = find(cols, &internal_gain_column(z)) {
                solar = solar.with_values(solar.values().iter().zip(q.values()).map(|(a, b)| a + b).collect())?;
            }
            Ok(ZoneTrace {
                name: z.clone(),
                temperature: require(cols, &temperature_column(z))?.clone(),
                solar_gain: solar,
                heat: require(cols, &heat_column(z))?.clone(),
                humidity: find(cols, &humidity_column(z)).cloned(),
                rh: find(cols, &rh_column(z)).cloned(),
                moisture: find(cols, &moisture_column(z)).cloned(),
                production: find(cols, &production_column(z)).cloned(),
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(SimResult { outdoor_temperature: to.clone(), outdoor_humidity, zones, warnings: Vec::new() })
}

pub fn read_result(path: &Path) -> CliResult<SimResult> {
    result_from_columns(&csvio::read_series(path)?)
}

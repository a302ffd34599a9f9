use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use roomsi_core::control::{within_band_fraction, LoopTopology, OnOff, OnOffSetpoints};
use roomsi_core::refsim::{self, annual_energy, synth_climate, Building, HvacConfig, SimResult};
use roomsi_core::signal::{diagnose as diagnostics, spectrum};
use roomsi_core::sysid::SubspaceEstimator;
use roomsi_core::validation::*;
use serde::Serialize;

use crate::csvio;
use crate::error::{CliError, CliResult};
use crate::files::{self, BuildingFile, ModelFile};
use crate::{BenchArgs, HvacArgs, Out};

fn out_dir(out: &Out) -> CliResult<&Path> {
    fs::create_dir_all(&out.out).map_err(|e| CliError::io(&out.out, e))?;
    Ok(&out.out)
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let path = dir.join(name);
    files::write_json(&path, value)?;
    wrote(&path);
    Ok(path)
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    wrote(&path);
    Ok(())
}

/// Wall-clock fields would make output files differ between identical runs.
fn without_runtimes(mut v: CaseVerdict) -> CaseVerdict {
    if let Some(r) = v.report.as_mut() {
        r.runtime_ref = None;
        r.runtime_si = None;
    }
    v
}

fn load_building(path: Option<&Path>) -> CliResult<BuildingFile> {
    match path {
        Some(p) => files::read_building(p),
        None => Ok(BuildingFile { hvac: None, building: Building::reference_four_room() }),
    }
}

pub fn synth(seed: u64, days: usize, dt: f64, start: f64, out: &Out) -> CliResult<()> {
    let climate = synth_climate(seed, start, days, dt)?;
    let path = out_dir(out)?.join("climate.csv");
    csvio::write_series(&path, &files::climate_columns(&climate))?;
    wrote(&path);
    Ok(())
}

#[derive(Serialize)]
struct ZoneEnergyRow {
    zone: String,
    heating_j: f64,
    cooling_j: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    building: Option<&Path>,
    climate: Option<&Path>,
    seed: u64,
    days: usize,
    dt: Option<f64>,
    setpoints: Option<OnOffSetpoints>,
    ham: bool,
    out: &Out,
) -> CliResult<()> {
    let file = load_building(building)?;
    let climate = match climate {
        Some(p) => files::climate_from_columns(&csvio::read_series(p)?)?,
        None => synth_climate(seed, 0.0, days, 3600.0)?,
    };
    let hvac = file.hvac.unwrap_or(CaseConfig::default().hvac);
    let ctl = setpoints.map(OnOff::new);
    let ctl_ref = ctl.as_ref().map(|c| c as &dyn roomsi_core::control::Controller);
    let hvac_ref = ctl.is_some().then_some(&hvac);
    let dt = dt.unwrap_or(climate.dt());
    let result = if ham {
        refsim::simulate_ham(&file.building, &climate, hvac_ref, ctl_ref, dt)?
    } else {
        refsim::simulate(&file.building, &climate, hvac_ref, ctl_ref, dt)?
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let dir = out_dir(out)?;
    let path = dir.join("sim.csv");
    csvio::write_series(&path, &result.columns())?;
    wrote(&path);
    let energy: Vec<ZoneEnergyRow> = result
        .zones
        .iter()
        .zip(annual_energy(&result))
        .map(|(z, e)| ZoneEnergyRow { zone: z.name.clone(), heating_j: e.heating_j, cooling_j: e.cooling_j })
        .collect();
    write_json(dir, "energy.json", &energy)?;
    let used = BuildingFile { hvac: Some(hvac), building: file.building };
    write_text(dir, "building.cfg", &files::format_building(&used)?)
}

fn zone_names(r: &SimResult) -> Vec<String> {
    r.zones.iter().map(|z| z.name.clone()).collect()
}

fn fit_table(model: &ModelFile) -> String {
    let mut s = format!("{:<12} {:>8} {:>12} {:>12} {:>10}\n", "zone", "C_f", "mu_e", "sigma_e", "fit %");
    for z in &model.zones {
        let cf = z.crest_ti.map_or("n/a".into(), |c| format!("{c:.3}"));
        let fit = z.fit_percent.map_or("n/a".into(), |f| format!("{f:.3}"));
        let _ = writeln!(s, "{:<12} {cf:>8} {:>12.4e} {:>12.4e} {fit:>10}", z.zone, z.mu_e, z.sigma_e);
    }
    s
}

pub fn identify(data: &Path, order: usize, topology: LoopTopology, moisture: bool, out: &Out) -> CliResult<()> {
    let result = files::read_result(data)?;
    let cfg = CaseConfig::default().identification;
    let zm = identify_zones(&SubspaceEstimator, &result, topology, order, &cfg, moisture)?;
    let model = ModelFile::from_zone_models(&zm, &zone_names(&result));
    print!("{}", fit_table(&model));
    let gate = zm.gate();
    println!("gate: {}", if gate.pass { "pass".to_string() } else { gate.reasons.join("; ") });
    write_json(out_dir(out)?, "model.json", &model)?;
    Ok(())
}

pub fn diagnose(data: &Path, with_spectrum: bool, out: &Out) -> CliResult<()> {
    let columns = csvio::read_series(data)?;
    let dir = out_dir(out)?;
    let mut table = format!(
        "{:<20} {:>12} {:>12} {:>12} {:>12} {:>14} {:>14}\n",
        "column", "f_s Hz", "nyquist Hz", "mean", "rms", "C_f raw", "C_f centered"
    );
    let not_defined = |c: Option<f64>| c.map_or("not defined".to_string(), |c| format!("{c:.4}"));
    let mut all = Vec::new();
    for c in &columns {
        let d = diagnostics(c)?;
        let _ = writeln!(
            table,
            "{:<20} {:>12.4e} {:>12.4e} {:>12.4} {:>12.4} {:>14} {:>14}",
            d.name,
            d.sample_freq_hz,
            d.nyquist_freq_hz,
            d.mean,
            d.rms,
            not_defined(d.crest_raw),
            not_defined(d.crest_centered)
        );
        if with_spectrum {
            let sp = spectrum(c)?;
            let mut csv = String::from("freq_hz,magnitude\n");
            for (f, m) in sp.freqs_hz.iter().zip(&sp.magnitudes) {
                let _ = writeln!(csv, "{f},{m}");
            }
            write_text(dir, &format!("spectrum_{}.csv", d.name), &csv)?;
        }
        all.push(d);
    }
    print!("{table}");
    write_json(dir, "diagnostics.json", &all)?;
    Ok(())
}

fn hvac_from(args: HvacArgs, base: Option<HvacConfig>) -> CliResult<HvacConfig> {
    let mut hvac = base.unwrap_or(CaseConfig::default().hvac);
    if let Some(h) = args.heating_w {
        hvac.heating_w = h;
    }
    if let Some(c) = args.cooling_w {
        hvac.cooling_w = c;
    }
    hvac.validate()?;
    Ok(hvac)
}

/// Time in hours against reference and model values, one file per zone.
fn plot_pairs(dir: &Path, reference: &SimResult, model: &SimResult) -> CliResult<()> {
    for (r, m) in reference.zones.iter().zip(&model.zones) {
        let mut csv = String::from("t_h,reference_C,model_C\n");
        for (k, (a, b)) in r.temperature.values().iter().zip(m.temperature.values()).enumerate() {
            let _ = writeln!(csv, "{},{a},{b}", r.temperature.time(k) / 3600.0);
        }
        write_text(dir, &format!("plot_{}.csv", r.name), &csv)?;
    }
    Ok(())
}

pub fn run_loop(
    model: &Path,
    data: &Path,
    setpoints: OnOffSetpoints,
    building: Option<&Path>,
    hvac: HvacArgs,
    out: &Out,
) -> CliResult<()> {
    let mf: ModelFile = files::read_json(model)?;
    let zm = mf.to_zone_models()?;
    let reference = files::read_result(data)?;
    if zone_names(&reference) != mf.zone_names() {
        return Err(CliError::Config(format!("model zones {:?} do not match data zones {:?}", mf.zone_names(), zone_names(&reference))));
    }
    let base = building.map(files::read_building).transpose()?.and_then(|b| b.hvac);
    let hvac = hvac_from(hvac, base)?;
    let looped = apply_models(&zm, &reference, &OnOff::new(setpoints), &hvac)?;
    for (zone, step) in &looped.unstable {
        eprintln!("warning: zone {zone} left the plausible range at step {step}");
    }
    let report = compare(&reference, &looped.result)?;
    println!("mu_e {:.4e} degC, sigma {:.4e} degC, energy error {:.3} %", report.mu_abs, report.sigma, 100.0 * report.energy_rel_err);
    let dir = out_dir(out)?;
    let path = dir.join("loop.csv");
    csvio::write_series(&path, &looped.result.columns())?;
    wrote(&path);
    write_json(dir, "comparison.json", &report)?;
    plot_pairs(dir, &reference, &looped.result)
}

fn bench_from(args: &BenchArgs) -> CliResult<Workbench> {
    let mut cfg = CaseConfig { seed: args.seed, days: args.days, dt: args.dt, order: args.order, ..CaseConfig::default() };
    if let Some(path) = &args.building {
        let file = files::read_building(path)?;
        cfg.building = file.building;
        if let Some(h) = file.hvac {
            cfg.hvac = h;
        }
    }
    if let Some(sp) = args.setpoints {
        cfg.identification_setpoints = sp;
        cfg.application_setpoints = sp;
    }
    Ok(Workbench::new(cfg)?)
}

fn verdict_line(v: &CaseVerdict) -> String {
    let opt = |x: Option<f64>, p: usize| x.map_or("-".into(), |x| format!("{x:.p$}"));
    let r = v.report.as_ref();
    format!(
        "{:<5} {:<9} {:<26} {:>8} {:>10} {:>10} {:>10} {:>9} {:>13}",
        v.case.as_str(),
        if v.possible { "possible" } else { "no" },
        format!("{:?}", v.limitation),
        opt(v.crest_ti, 3),
        v.mu_e_i.map_or("-".into(), |x| format!("{x:.2e}")),
        r.map_or("-".into(), |r| format!("{:.2e}", r.mu_abs)),
        r.map_or("-".into(), |r| format!("{:.2e}", r.sigma)),
        r.map_or("-".into(), |r| format!("{:.2}", 100.0 * r.energy_rel_err)),
        match (v.switching_ref, v.switching_si) {
            (Some(a), Some(b)) => format!("{a:.1}/{b:.1}"),
            _ => "-".into(),
        }
    )
}

fn verdict_header() -> String {
    format!(
        "{:<5} {:<9} {:<26} {:>8} {:>10} {:>10} {:>10} {:>9} {:>13}",
        "case", "verdict", "limitation", "C_f", "mu_e,I", "mu_e", "sigma", "dE %", "switch/h"
    )
}

pub fn case(names: &[String], args: &BenchArgs, out: &Out) -> CliResult<()> {
    let ids: Vec<CaseId> = if names.is_empty() || names.iter().any(|n| n.eq_ignore_ascii_case("all")) {
        CaseId::ALL.to_vec()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?
    };
    let bench = bench_from(args)?;
    let registry = CaseRegistry::default();
    let dir = out_dir(out)?;
    println!("{}", verdict_header());
    for id in ids {
        let v = without_runtimes(run_case(&registry, id, &bench));
        println!("{}", verdict_line(&v));
        write_json(dir, &format!("case{}_verdict.json", id.as_str()), &v)?;
    }
    Ok(())
}

pub fn sweep(pairs: &str, orders: &[usize], args: &BenchArgs, out: &Out) -> CliResult<()> {
    let pairs: Vec<OnOffSetpoints> = pairs
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.parse())
        .collect::<Result<_, _>>()?;
    let bench = bench_from(args)?;
    let rows = setpoint_sweep(&bench, &pairs, orders)?;
    let opt = |x: Option<f64>| x.map_or("-".into(), |x| format!("{x:.4}"));
    let mut table = format!("{:<10} {:>5} {:>8} {:>10} {:>10} {:>10} {:>6}\n", "Th,Tc", "order", "C_f", "mu_e,I", "mu_e,II", "sigma_II", "gate");
    for r in &rows {
        let gate = r.gate.as_ref().map_or("error", |g| if g.pass { "pass" } else { "fail" });
        let _ = writeln!(
            table,
            "{:<10} {:>5} {:>8} {:>10} {:>10} {:>10} {:>6}",
            r.identification_setpoints.to_string(),
            r.order,
            opt(r.crest_ti),
            opt(r.mu_e_i),
            opt(r.mu_e_ii),
            opt(r.sigma_e_ii),
            gate
        );
    }
    print!("{table}");
    let dir = out_dir(out)?;
    write_json(dir, "sweep.json", &rows)?;
    write_text(dir, "sweep.txt", &table)
}

/// Capacities seen in the export when not given.
fn observed_hvac(data: &SimResult, args: HvacArgs) -> CliResult<HvacConfig> {
    let heat = data.zones.iter().flat_map(|z| z.heat.values().iter().copied());
    let (mut heating, mut cooling) = (0.0_f64, 0.0_f64);
    for q in heat {
        heating = heating.max(q);
        cooling = cooling.max(-q);
    }
    hvac_from(args, Some(HvacConfig::thermal(heating, cooling)))
}

pub fn import(data: &Path, setpoints: OnOffSetpoints, order: usize, hvac: HvacArgs, out: &Out) -> CliResult<()> {
    let result = files::read_result(data)?;
    let hvac = observed_hvac(&result, hvac)?;
    let mut verdict = CaseVerdict::new(CaseId::Ext, order);
    let zm = run_external(&result, &setpoints, &hvac, order, &CaseConfig::default().identification, &mut verdict)?;
    let verdict = without_runtimes(verdict);
    let model = ModelFile::from_zone_models(&zm, &zone_names(&result));
    print!("{}", fit_table(&model));
    let band = within_band_fraction(&result, &setpoints, 0.0)?;
    println!(
        "within {setpoints} band: export {:.1} %, model loop {:.1} %",
        band.aggregate,
        verdict.within_band_percent.unwrap_or(f64::NAN)
    );
    println!("{}", verdict_header());
    println!("{}", verdict_line(&verdict));
    let dir = out_dir(out)?;
    write_json(dir, "model.json", &model)?;
    write_json(dir, "import_verdict.json", &verdict)?;
    Ok(())
}

pub fn report(paths: &[PathBuf], out: &Out) -> CliResult<()> {
    if paths.is_empty() {
        return Err(CliError::Config("no verdict files given".into()));
    }
    let mut table = verdict_header();
    table.push('\n');
    for p in paths {
        let v: CaseVerdict = files::read_json(p)?;
        table.push_str(&verdict_line(&v));
        table.push('\n');
        if let Some(e) = &v.error {
            let _ = writeln!(table, "      error: {e}");
        }
        for n in &v.notes {
            let _ = writeln!(table, "      note: {n}");
        }
    }
    print!("{table}");
    write_text(out_dir(out)?, "report.txt", &table)
}

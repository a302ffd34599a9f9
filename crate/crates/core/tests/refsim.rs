use proptest::prelude::*;
use roomsi_core::control::{Actuation, Controller, OnOff, OnOffSetpoints};
use roomsi_core::refsim::*;
use roomsi_core::signal::TimeSeries;
use roomsi_core::validation::CaseConfig;

fn constant_climate(to: f64, solar: f64, rh: Option<f64>, n: usize, dt: f64) -> Climate {
    let s = |name: &str, v: f64| TimeSeries::new(name, "-", 0.0, dt, vec![v; n]).unwrap();
    Climate::new(s("To", to), s("Qsol", solar), rh.map(|r| s("RH", r))).unwrap()
}

fn air_zone(name: &str, c: f64) -> ZoneParams {
    ZoneParams {
        name: name.into(),
        air_capacitance: c,
        walls: Vec::new(),
        internal_mass: None,
        solar_aperture: 0.0,
        solar_air_fraction: 1.0,
        ventilation_conductance: 0.0,
        moisture: None,
    }
}

struct Constant(f64, f64);

impl Controller for Constant {
    fn name(&self) -> &str {
        "constant"
    }

    fn actuate(&self, _: &HvacConfig, _: f64, _: Option<f64>) -> Actuation {
        Actuation { heat_w: self.0, moisture_kgs: self.1 }
    }
}

#[test]
fn equilibrium_stays_put() {
    let mut b = Building::reference_four_room();
    b.initial_temperature = Some(7.5);
    let c = constant_climate(7.5, 0.0, None, 240, 3600.0);
    let r = simulate(&b, &c, None, None, 3600.0).unwrap();
    for z in &r.zones {
        assert!(z.temperature.values().iter().all(|&t| (t - 7.5).abs() < 1e-12));
    }
}

#[test]
fn two_node_step_response_matches_closed_form() {
    let (ca, cw, r, gv) = (1.0e5, 1.0e6, 0.02, 20.0);
    let g = 2.0 / r;
    let zone = ZoneParams {
        walls: vec![WallBranch { resistance: r, capacitance: cw, layers: 1 }],
        ventilation_conductance: gv,
        ..air_zone("z", ca)
    };
    let b = Building { name: "step".into(), initial_temperature: Some(0.0), zones: vec![zone], links: Vec::new() };
    let dt = 600.0;
    let c = constant_climate(10.0, 0.0, None, 6 * 24 * 4, dt);
    let res = simulate(&b, &c, None, None, dt).unwrap();
    let t = res.zones[0].temperature.values();

    // e^{At} = (e^{λ1 t}(A − λ2 I) − e^{λ2 t}(A − λ1 I)) / (λ1 − λ2)
    let a = [[-(g + gv) / ca, g / ca], [g / cw, -2.0 * g / cw]];
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    let tau = -1.0 / l1;
    let oracle = |time: f64| {
        let (e1, e2) = ((l1 * time).exp(), (l2 * time).exp());
        // deviation from the steady state starts at −10 on both nodes
        let s = a[0][0] + a[0][1];
        let row0 = ((s - l2) * e1 - (s - l1) * e2) / (l1 - l2);
        10.0 - 10.0 * row0
    };
    for (k, w) in t.windows(2).enumerate() {
        assert!(w[1] >= w[0] - 1e-12, "not monotone at {k}");
        assert!((w[0] - oracle(k as f64 * dt)).abs() < 0.05, "sample {k}: {} vs {}", w[0], oracle(k as f64 * dt));
    }
    let k10 = (10.0 * tau / dt).ceil() as usize;
    assert!(k10 < t.len());
    assert!((t[k10] - 10.0).abs() < 0.01, "{}", t[k10]);
}

#[test]
fn sealed_zone_humidity_grows_linearly() {
    let (mass, g) = (120.0, 5.0e-5);
    let zone = ZoneParams {
        moisture: Some(MoistureParams {
            air_mass_kg: mass,
            ventilation_kgs: 0.0,
            production_kgs: g,
            night_production_kgs: None,
            buffer_mass_kg: 0.0,
            buffer_exchange_kgs: 0.0,
        }),
        ..air_zone("z", 1.0e5)
    };
    let b = Building { name: "sealed".into(), initial_temperature: Some(20.0), zones: vec![zone], links: Vec::new() };
    let dt = 3600.0;
    let c = constant_climate(20.0, 0.0, Some(10.0), 48, dt);
    let r = simulate_ham(&b, &c, None, None, dt).unwrap();
    let x = r.zones[0].humidity.as_ref().unwrap().values();
    for k in 1..x.len() {
        let slope = (x[k] - x[0]) / (k as f64 * dt);
        assert!((slope - g / mass).abs() < 1e-9 * g / mass, "step {k}: {slope}");
    }
}

#[test]
fn humidity_relaxes_to_outdoor() {
    let mut b = Building::reference_four_room();
    for z in &mut b.zones {
        let m = z.moisture.as_mut().unwrap();
        m.production_kgs = 0.0;
        m.night_production_kgs = None;
    }
    b.initial_temperature = Some(15.0);
    let c = constant_climate(15.0, 0.0, Some(60.0), 24 * 30, 3600.0);
    let xo = x_from_trh(15.0, 60.0, STANDARD_PRESSURE);
    let r = simulate_ham(&b, &c, None, None, 3600.0).unwrap();
    for z in &r.zones {
        let x = z.humidity.as_ref().unwrap().values();
        assert!((x.last().unwrap() - xo).abs() < 1e-9, "{}", z.name);
    }
}

#[test]
fn adiabatic_energy_is_conserved() {
    let zones = vec![air_zone("a", 2.0e5), air_zone("b", 5.0e5), air_zone("c", 1.0e5)];
    let links = vec![
        ZoneLink { zones: ["a".into(), "b".into()], conductance: 40.0 },
        ZoneLink { zones: ["b".into(), "c".into()], conductance: 15.0 },
    ];
    let b = Building { name: "closed".into(), initial_temperature: Some(20.0), zones, links };
    let hvac = HvacConfig::thermal(800.0, 0.0);
    let dt = 900.0;
    let n = 200;
    let c = constant_climate(-5.0, 0.0, None, n, dt);
    let r = simulate(&b, &c, Some(&hvac), Some(&Constant(800.0, 0.0)), dt).unwrap();
    let stored = |k: usize| -> f64 {
        r.zones.iter().zip([2.0e5, 5.0e5, 1.0e5]).map(|(z, cap)| cap * z.temperature.values()[k]).sum()
    };
    let added = 3.0 * 800.0 * (n - 1) as f64 * dt;
    let gained = stored(n - 1) - stored(0);
    assert!((gained - added).abs() <= 1e-6 * added, "{gained} vs {added}");
}

#[test]
fn energy_sums() {
    let one = TimeSeries::new("q", "W", 0.0, 3600.0, vec![1000.0]).unwrap();
    let e = energy_of(&one);
    assert_eq!((e.heating_j, e.cooling_j), (3.6e6, 0.0));
    let alt = TimeSeries::new("q", "W", 0.0, 3600.0, vec![1500.0, -1000.0]).unwrap();
    let e = energy_of(&alt);
    assert_eq!((e.heating_j, e.cooling_j), (5.4e6, 3.6e6));
    let b = Building::reference_four_room();
    let r = simulate(&b, &synth_climate(0, 0.0, 10, 3600.0).unwrap(), None, None, 3600.0).unwrap();
    assert!(annual_energy(&r).iter().all(|e| e.heating_j == 0.0 && e.cooling_j == 0.0));
}

#[test]
fn on_off_year_stays_in_band() {
    let cfg = CaseConfig::default();
    let sp = OnOffSetpoints::thermal(18.0, 22.0).unwrap();
    let climate = synth_climate(0, 0.0, 365, 3600.0).unwrap();
    let r = simulate(&cfg.building, &climate, Some(&cfg.hvac), Some(&OnOff::new(sp)), 3600.0).unwrap();
    let delta = cfg.building.overshoot_bound(&cfg.hvac, 3600.0);
    for z in &r.zones {
        for (&t, &q) in z.temperature.values().iter().zip(z.heat.values()) {
            assert!((18.0 - delta..=22.0 + delta).contains(&t), "{}: {t}", z.name);
            assert!((-cfg.hvac.cooling_w..=cfg.hvac.heating_w).contains(&q));
        }
    }
}

#[test]
fn humidistat_keeps_rh_in_band() {
    let cfg = CaseConfig::default();
    let sp = cfg.ham_setpoints;
    let climate = synth_climate(1, 0.0, 365, 3600.0).unwrap();
    let r = simulate_ham(&cfg.building, &climate, Some(&cfg.hvac), Some(&OnOff::new(sp)), 3600.0).unwrap();
    let x_bound = cfg.building.moisture_overshoot_bound(&cfg.hvac, 3600.0);
    let (lo, hi) = (sp.humidify_pct.unwrap(), sp.dehumidify_pct.unwrap());
    for z in &r.zones {
        let (x, rh, t) = (z.humidity.as_ref().unwrap(), z.rh.as_ref().unwrap(), &z.temperature);
        let mut inside = 0;
        for k in 0..r.len() {
            let (tk, xk, rk) = (t.values()[k], x.values()[k], rh.values()[k]);
            assert!((rh_from_tx(tk, xk, STANDARD_PRESSURE).percent - rk).abs() <= 1e-9);
            let tol = rh_sensitivity(tk, xk, STANDARD_PRESSURE).1 * x_bound;
            inside += (lo - tol..=hi + tol).contains(&rk) as usize;
        }
        let share = inside as f64 / r.len() as f64;
        assert!(share >= 0.95, "{}: {share}", z.name);
    }
}

#[test]
fn runs_are_reproducible() {
    let b = Building::reference_four_room();
    let cfg = CaseConfig::default();
    let sp = OnOffSetpoints::thermal(18.0, 22.0).and_then(|s| s.with_humidity(40.0, 70.0)).unwrap();
    let run = || {
        let c = synth_climate(5, 0.0, 30, 3600.0).unwrap();
        simulate_ham(&b, &c, Some(&cfg.hvac), Some(&OnOff::new(sp)), 3600.0).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn output_step_must_divide_climate_step() {
    let b = Building::reference_four_room();
    let c = synth_climate(0, 0.0, 1, 3600.0).unwrap();
    assert!(simulate(&b, &c, None, None, 7000.0).is_err());
    let fine = simulate(&b, &c, None, None, 600.0).unwrap();
    assert_eq!(fine.len(), 6 * 24);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn actuation_within_capacity(seed in 0u64..1000, heat in 0.0f64..3000.0, cool in 0.0f64..3000.0, h in 14.0f64..20.0) {
        let b = Building::reference_four_room();
        let c = synth_climate(seed, 0.0, 5, 3600.0).unwrap();
        let hvac = HvacConfig::thermal(heat, cool);
        let sp = OnOffSetpoints::thermal(h, h + 3.0).unwrap();
        let r = simulate(&b, &c, Some(&hvac), Some(&OnOff::new(sp)), 3600.0).unwrap();
        for z in &r.zones {
            prop_assert!(z.heat.values().iter().all(|q| (-cool..=heat).contains(q)));
        }
    }

    #[test]
    fn free_float_stays_between_drivers(seed in 0u64..1000) {
        // no solar: every zone temperature stays within the outdoor range
        let b = Building::reference_four_room();
        let c = synth_climate(seed, 0.0, 5, 3600.0).unwrap();
        let dark = Climate::new(c.temperature().clone(), c.solar().map(|_| 0.0).unwrap(), None).unwrap();
        let r = simulate(&b, &dark, None, None, 3600.0).unwrap();
        let to = dark.temperature().values();
        let lo = to.iter().cloned().fold(f64::INFINITY, f64::min).min(19.0);
        let hi = to.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(19.0);
        for z in &r.zones {
            prop_assert!(z.temperature.values().iter().all(|t| (lo - 1e-9..=hi + 1e-9).contains(t)));
        }
    }
}

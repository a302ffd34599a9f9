use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::psychro::x_from_trh;
use crate::error::{Error, Result};
use crate::signal::TimeSeries;

pub const DAY_S: f64 = 86_400.0;

/// Outdoor drivers on one sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Climate {
    temperature: TimeSeries,
    solar: TimeSeries,
    rh: Option<TimeSeries>,
}

impl Climate {
    /// `solar` is the heat gain per unit zone aperture (W); zone gains are
    /// `aperture × solar`.
    pub fn new(temperature: TimeSeries, solar: TimeSeries, rh: Option<TimeSeries>) -> Result<Self> {
        if !temperature.same_grid(&solar) || rh.as_ref().is_some_and(|r| !temperature.same_grid(r)) {
            return Err(Error::GridMismatch("climate channels must share t0, dt and length".into()));
        }
        if let Some(r) = &rh {
            if r.values().iter().any(|v| !(0.0..=100.0).contains(v)) {
                return Err(Error::InvalidSeries("relative humidity outside [0, 100] %".into()));
            }
        }
        Ok(Self {
            temperature: temperature.renamed("To_C", "degC"),
            solar: solar.renamed("Qsolar_W", "W"),
            rh: rh.map(|r| r.renamed("RHo_pct", "%")),
        })
    }

    pub fn temperature(&self) -> &TimeSeries {
        &self.temperature
    }

    pub fn solar(&self) -> &TimeSeries {
        &self.solar
    }

    pub fn rh(&self) -> Option<&TimeSeries> {
        self.rh.as_ref()
    }

    pub fn dt(&self) -> f64 {
        self.temperature.dt()
    }

    pub fn t0(&self) -> f64 {
        self.temperature.t0()
    }

    pub fn len(&self) -> usize {
        self.temperature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperature.is_empty()
    }

    /// Outdoor humidity ratio at each sample, if humidity is present.
    pub fn humidity_ratio(&self, pressure: f64) -> Option<TimeSeries> {
        let rh = self.rh.as_ref()?;
        let values = self
            .temperature
            .values()
            .iter()
            .zip(rh.values())
            .map(|(&t, &r)| x_from_trh(t, r, pressure))
            .collect();
        TimeSeries::new("Xo_kgkg", "kg/kg", self.t0(), self.dt(), values).ok()
    }

    /// Samples `start..end` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.temperature.slice(start, end)?,
            self.solar.slice(start, end)?,
            self.rh.as_ref().map(|r| r.slice(start, end)).transpose()?,
        )
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministic synthetic year: annual and diurnal temperature cycles with
/// AR(1) weather noise, a half-rectified solar profile under a seasonal
/// envelope with daily cloudiness, and a diurnal relative-humidity cycle.
///
/// `start` is seconds after midnight of January 1st.
pub fn synth_climate(seed: u64, start: f64, days: usize, dt: f64) -> Result<Climate> {
    if days == 0 {
        return Err(Error::InvalidConfig("synthetic climate needs at least one day".into()));
    }
    if !(dt > 0.0) || DAY_S % dt != 0.0 {
        return Err(Error::InvalidConfig(format!("dt {dt} s must divide one day")));
    }
    let per_day = (DAY_S / dt) as usize;
    let n = days * per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let phi = (-dt / (2.0 * DAY_S)).exp();
    let sigma_t = 2.5;
    let drive_t = sigma_t * (1.0 - phi * phi).sqrt();
    let phi_rh = (-dt / (0.5 * DAY_S)).exp();
    let sigma_rh = 6.0;
    let drive_rh = sigma_rh * (1.0 - phi_rh * phi_rh).sqrt();

    let mut noise_t: f64 = sigma_t * gauss(&mut rng);
    let mut noise_rh: f64 = sigma_rh * gauss(&mut rng);
    let mut cloud = 1.0;
    let mut to = Vec::with_capacity(n);
    let mut solar = Vec::with_capacity(n);
    let mut rh = Vec::with_capacity(n);
    for k in 0..n {
        if k % per_day == 0 {
            cloud = rng.random_range(0.25..1.0);
        }
        let t = start + k as f64 * dt;
        let doy = t / DAY_S;
        let hour = (t % DAY_S) / 3600.0;
        let season = (TAU * (doy - 172.0) / 365.0).cos();

        let temperature = 10.0 + 7.0 * (TAU * (doy - 200.0) / 365.0).cos()
            - 3.0 * (TAU * (hour - 3.0) / 24.0).cos()
            + noise_t;
        to.push(temperature);

        let day_length = 12.0 + 4.0 * season;
        let sunrise = 12.0 - day_length / 2.0;
        let arc = (PI * (hour - sunrise) / day_length).sin();
        let envelope = 0.25 + 0.75 * (0.5 + 0.5 * season);
        let above = hour > sunrise && hour < sunrise + day_length;
        solar.push(if above { 600.0 * envelope * cloud * arc.max(0.0) } else { 0.0 });

        let humid = 78.0 + 10.0 * (TAU * (hour - 3.0) / 24.0).cos() + 4.0 * season + noise_rh;
        rh.push(humid.clamp(30.0, 100.0));

        noise_t = phi * noise_t + drive_t * gauss(&mut rng);
        noise_rh = phi_rh * noise_rh + drive_rh * gauss(&mut rng);
    }
    Climate::new(
        TimeSeries::new("To_C", "degC", start, dt, to)?,
        TimeSeries::new("Qsolar_W", "W", start, dt, solar)?,
        Some(TimeSeries::new("RHo_pct", "%", start, dt, rh)?),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_climate() {
        let a = synth_climate(0, 0.0, 20, 3600.0).unwrap();
        let b = synth_climate(0, 0.0, 20, 3600.0).unwrap();
        assert_eq!(a, b);
        let c = synth_climate(1, 0.0, 20, 3600.0).unwrap();
        assert_ne!(a.temperature(), c.temperature());
    }

    #[test]
    fn solar_non_negative_and_dark_at_midnight() {
        let c = synth_climate(3, 0.0, 365, 3600.0).unwrap();
        assert_eq!(c.len(), 8760);
        for (k, &s) in c.solar().values().iter().enumerate() {
            assert!(s >= 0.0);
            if k % 24 == 0 {
                assert_eq!(s, 0.0);
            }
        }
        assert!(c.rh().unwrap().values().iter().all(|r| (30.0..=100.0).contains(r)));
    }

    #[test]
    fn dt_must_divide_a_day() {
        assert!(synth_climate(0, 0.0, 1, 7000.0).is_err());
        assert!(synth_climate(0, 0.0, 0, 3600.0).is_err());
    }
}

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use roomsi_core::signal::{prbs, TimeSeries};
use roomsi_core::sysid::{StateSpaceModel, TimeDomain};

/// Stable 4-state truth: one complex pair and two real poles, scrambled by
/// a random similarity transform.
pub fn random_truth(seed: u64, inputs: usize, outputs: usize) -> StateSpaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: f64 = rng.random_range(0.6..0.9);
    let th: f64 = rng.random_range(0.3..1.2);
    let l3: f64 = rng.random_range(0.2..0.5);
    let l4: f64 = rng.random_range(-0.6..-0.1);
    let diag = DMatrix::from_row_slice(
        4,
        4,
        &[
            r * th.cos(), -r * th.sin(), 0.0, 0.0,
            r * th.sin(), r * th.cos(), 0.0, 0.0,
            0.0, 0.0, l3, 0.0,
            0.0, 0.0, 0.0, l4,
        ],
    );
    let mut normal = |rows, cols| {
        DMatrix::from_fn(rows, cols, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        })
    };
    let t = DMatrix::<f64>::identity(4, 4) + normal(4, 4) * 0.3;
    let t_inv = t.clone().try_inverse().unwrap();
    let a = &t * diag * t_inv;
    let b = normal(4, inputs);
    let c = normal(outputs, 4);
    let d = normal(outputs, inputs) * 0.1;
    StateSpaceModel::new(a, b, c, d, TimeDomain::Discrete { dt: 1.0 }).unwrap()
}

pub fn prbs_inputs(count: usize, len: usize) -> Vec<TimeSeries> {
    let regs = [11u32, 10, 9, 12];
    (0..count)
        .map(|i| {
            let v = prbs(regs[i % regs.len()], 17 + 31 * i as u32, 1, len, 1.0);
            TimeSeries::new(format!("u{i}"), "-", 0.0, 1.0, v).unwrap()
        })
        .collect()
}

/// Output noise scaled to the requested signal-to-noise ratio in dB.
pub fn add_noise(series: &TimeSeries, snr_db: f64, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = series.mean();
    let power = series.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / series.len() as f64;
    let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    series
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + sd * e
        })
        .unwrap()
}

/// Smallest worst-case distance over all pairings of two small eigenvalue sets.
pub fn eig_set_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    fn rec(a: &[Complex64], b: &mut Vec<Complex64>, depth: usize, worst: f64, best: &mut f64) {
        if worst >= *best {
            return;
        }
        if depth == a.len() {
            *best = worst;
            return;
        }
        for i in depth..b.len() {
            b.swap(depth, i);
            let w = worst.max((a[depth] - b[depth]).norm());
            rec(a, b, depth + 1, w, best);
            b.swap(depth, i);
        }
    }
    let mut best = f64::INFINITY;
    rec(a, &mut b.to_vec(), 0, 0.0, &mut best);
    best
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

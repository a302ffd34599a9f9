mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use roomsi_core::signal::{split_halves, TimeSeries};
use roomsi_core::sysid::*;
use roomsi_core::Error;

fn split_all(series: &[TimeSeries]) -> (Vec<TimeSeries>, Vec<TimeSeries>) {
    series.iter().map(|s| split_halves(s).unwrap()).unzip()
}

#[test]
fn subspace_recovers_noiseless_truth() {
    let truth = random_truth(7, 2, 1);
    let u = prbs_inputs(2, 4000);
    let y = simulate(&truth, &u, None).unwrap();
    let (u_est, u_val) = split_all(&u);
    let (y_est, y_val) = split_all(&y);
    let model = estimate_subspace(&u_est, &y_est, 4, &IdentificationConfig::default()).unwrap();
    let fit = validate(&model, &u_val, &y_val).unwrap();
    assert!(fit[0].fit_percent >= 99.99, "fit {}", fit[0].fit_percent);
    let err = eig_set_error(&model.eigenvalues(), &truth.eigenvalues());
    assert!(err <= 1e-6, "eigenvalue error {err:e}");
}

#[test]
fn subspace_tolerates_output_noise() {
    let truth = random_truth(7, 2, 1);
    let u = prbs_inputs(2, 4000);
    let y = simulate(&truth, &u, None).unwrap();
    let noisy = add_noise(&y[0], 40.0, 99);
    let model = estimate_subspace(&u, &[noisy], 4, &IdentificationConfig::default()).unwrap();
    let err = eig_set_error(&model.eigenvalues(), &truth.eigenvalues());
    assert!(err <= 1e-2, "eigenvalue error {err:e}");
}

#[test]
fn zero_data_is_rank_deficient() {
    let z = TimeSeries::new("z", "-", 0.0, 1.0, vec![0.0; 500]).unwrap();
    let res = estimate_subspace(&[z.clone()], &[z], 2, &IdentificationConfig::default());
    assert!(matches!(res, Err(Error::RankDeficient { .. })));
}

#[test]
fn order_sweep_isolates_failures() {
    let truth = random_truth(3, 2, 1);
    let u = prbs_inputs(2, 4000);
    let y = simulate(&truth, &u, None).unwrap();
    let rows = select_order(&SubspaceEstimator, &u, &y, &[8, 1, 4, 2], &IdentificationConfig::default()).unwrap();
    let orders: Vec<usize> = rows.iter().map(|r| r.order).collect();
    assert_eq!(orders, vec![1, 2, 4, 8]);
    let fit = |o: usize| rows.iter().find(|r| r.order == o).unwrap().result.as_ref().unwrap()[0].fit_percent;
    assert!(fit(4) >= fit(2));
    assert!(matches!(rows[3].result, Err(Error::RankDeficient { .. })), "{:?}", rows[3].result);
}

fn oe_truth() -> OutputErrorModel {
    OutputErrorModel {
        channels: vec![
            OeChannel { b: vec![0.25, -0.2], f: vec![-0.9], nk: 1 },
            OeChannel { b: vec![-0.4, 0.3], f: vec![-0.6], nk: 1 },
        ],
        dt: 900.0,
        input_labels: vec!["To".into(), "p".into()],
        output_label: "Ti".into(),
        converged: true,
        iterations: 0,
        cost: 0.0,
    }
}

#[test]
fn oe_recovers_two_input_truth() {
    let truth = oe_truth();
    let u: Vec<TimeSeries> = prbs_inputs(2, 2000)
        .into_iter()
        .map(|s| TimeSeries::new(s.name(), "-", 0.0, 900.0, s.values().to_vec()).unwrap())
        .collect();
    let y = truth.simulate(&u).unwrap();
    let orders = vec![OeOrders::new(2, 1, 1); 2];
    let est = estimate_oe(&u, &y, &orders, &IdentificationConfig::default()).unwrap();
    assert!(est.converged);
    for (e, t) in est.channels.iter().zip(&truth.channels) {
        for (a, b) in e.b.iter().zip(&t.b).chain(e.f.iter().zip(&t.f)) {
            assert!((a - b).abs() < 1e-3, "{:?} vs {:?}", e, t);
        }
    }
}

#[test]
fn oe_zero_output_gives_zero_numerators() {
    let u: Vec<TimeSeries> = prbs_inputs(2, 600);
    let y = TimeSeries::new("y", "-", 0.0, 1.0, vec![0.0; 600]).unwrap();
    let est = estimate_oe(&u, &y, &[OeOrders::new(2, 1, 1); 2], &IdentificationConfig::default()).unwrap();
    for ch in &est.channels {
        assert!(ch.b.iter().all(|b| b.abs() < 1e-9));
    }
}

#[test]
fn oe_constant_input_is_insufficient_excitation() {
    let u = TimeSeries::new("u", "-", 0.0, 1.0, vec![1.0; 600]).unwrap();
    let y = TimeSeries::new("y", "-", 0.0, 1.0, (0..600).map(|k| k as f64).collect()).unwrap();
    let res = estimate_oe(&[u], &y, &[OeOrders::new(2, 1, 1)], &IdentificationConfig::default());
    assert!(matches!(res, Err(Error::InsufficientExcitation(_))));
}

fn random_continuous(seed: u64) -> StateSpaceModel {
    let d = random_truth(seed, 2, 1);
    let mut r = rng(seed + 100);
    let (re, im) = (-uniform(&mut r, 0.1, 0.8), uniform(&mut r, 0.2, 1.5));
    let modal = DMatrix::from_row_slice(
        4,
        4,
        &[
            re, -im, 0.0, 0.0,
            im, re, 0.0, 0.0,
            0.0, 0.0, -uniform(&mut r, 0.05, 2.0), 0.0,
            0.0, 0.0, 0.0, -uniform(&mut r, 0.05, 2.0),
        ],
    );
    let t = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 }) + DMatrix::from_fn(4, 4, |_, _| uniform(&mut r, -0.3, 0.3));
    let a = &t * modal * t.clone().try_inverse().unwrap();
    StateSpaceModel::new(a, d.b().clone(), d.c().clone(), d.d().clone(), TimeDomain::Continuous).unwrap()
}

#[test]
fn c2d_d2c_round_trip() {
    for seed in 0..5 {
        let m = random_continuous(seed);
        assert!(m.is_stable());
        let back = d2c(&c2d(&m, 0.7).unwrap()).unwrap();
        assert!((back.a() - m.a()).amax() < 1e-9, "seed {seed}");
        assert!((back.b() - m.b()).amax() < 1e-9, "seed {seed}");
    }
}

#[test]
fn d2c_c2d_round_trip() {
    let truth = random_truth(11, 2, 1);
    let stable_positive = StateSpaceModel::new(
        truth.a() * 0.2 + DMatrix::identity(4, 4) * 0.7,
        truth.b().clone(),
        truth.c().clone(),
        truth.d().clone(),
        TimeDomain::Discrete { dt: 3600.0 },
    )
    .unwrap();
    let back = c2d(&d2c(&stable_positive).unwrap(), 3600.0).unwrap();
    assert!((back.a() - stable_positive.a()).amax() < 1e-9);
    assert!((back.b() - stable_positive.b()).amax() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulation_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let truth = random_truth(seed, 2, 1);
        let mut r = rng(seed);
        let mk = |r: &mut _| {
            (0..2)
                .map(|i| TimeSeries::new(format!("u{i}"), "-", 0.0, 1.0, (0..64).map(|_| uniform(r, -1.0, 1.0)).collect()).unwrap())
                .collect::<Vec<_>>()
        };
        let u1 = mk(&mut r);
        let u2 = mk(&mut r);
        let mix: Vec<TimeSeries> = u1
            .iter()
            .zip(&u2)
            .map(|(a, b)| a.with_values(a.values().iter().zip(b.values()).map(|(x, y)| alpha * x + beta * y).collect()).unwrap())
            .collect();
        let y1 = simulate(&truth, &u1, None).unwrap();
        let y2 = simulate(&truth, &u2, None).unwrap();
        let ym = simulate(&truth, &mix, None).unwrap();
        for k in 0..64 {
            let expect = alpha * y1[0].values()[k] + beta * y2[0].values()[k];
            let scale = expect.abs().max(1.0);
            prop_assert!((ym[0].values()[k] - expect).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zero_input_zero_output(seed in 0u64..1000) {
        let truth = random_truth(seed, 2, 1);
        let z = TimeSeries::new("z", "-", 0.0, 1.0, vec![0.0; 32]).unwrap();
        let y = simulate(&truth, &[z.clone(), z], None).unwrap();
        prop_assert!(y[0].values().iter().all(|v| *v == 0.0));
    }
}

use std::sync::OnceLock;

use nalgebra::DMatrix;
use qnoddi::estimator::{consistency_gradients, loss_terms, Backbone, LossMode, Mlp};
use qnoddi::evaluation::{
    evaluate_selection, mean_sd, rows_to_csv, run_protocol, ExperimentSpec, Protocol,
};
use qnoddi::noddi::rician_sample;
use qnoddi::scheme::{apply_selection, random_subsample, uniform_subsample, SubsampleSelection};
use qnoddi::{generate_phantom, generate_uniform_scheme, train, EstimatorModel, PhantomDataset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIGMA: f64 = 1.0 / 30.0;

/// E|ν + σ(z₁ + i z₂)| by a trapezoid rule over a ±9σ Gaussian square.
fn rician_mean_by_quadrature(nu: f64, sigma: f64) -> f64 {
    let n = 601;
    let h = 18.0 / (n - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let a = -9.0 + i as f64 * h;
        for j in 0..n {
            let b = -9.0 + j as f64 * h;
            let w = (-0.5 * (a * a + b * b)).exp();
            num += w * ((nu + sigma * a).powi(2) + (sigma * b).powi(2)).sqrt();
            den += w;
        }
    }
    num / den
}

#[test]
fn rician_sample_mean_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let mean = (0..n).map(|_| rician_sample(0.5, SIGMA, &mut rng)).sum::<f64>() / n as f64;
    let exact = rician_mean_by_quadrature(0.5, SIGMA);
    assert!((mean - exact).abs() / exact < 0.01, "{mean} vs {exact}");
    assert!(exact > 0.5);
    let floor = rician_mean_by_quadrature(0.0, SIGMA);
    let rayleigh = SIGMA * (std::f64::consts::PI / 2.0).sqrt();
    assert!((floor - rayleigh).abs() / rayleigh < 1e-6, "{floor} vs {rayleigh}");
}

#[test]
fn uniform_objective_ignores_random_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::random(&[6, 8, 5, 3], &mut rng).unwrap();
    let x = |rng: &mut ChaCha8Rng| DMatrix::from_fn(6, 7, |_, _| rng.random_range(-1.0..1.0));
    let (xr1, xr2, xu) = (x(&mut rng), x(&mut rng), x(&mut rng));
    let y = DMatrix::from_fn(3, 7, |_, _| rng.random_range(0.0..1.0));
    let w = LossMode::Uniform.weights(0.001);
    let (_, g1) = consistency_gradients(&net, &xr1, &xu, &y, w).unwrap();
    let (_, g2) = consistency_gradients(&net, &xr2, &xu, &y, w).unwrap();
    assert_eq!(g1, g2);

    let plain = |m: &Mlp| {
        let (out, _) = m.forward_trace(&xu).unwrap();
        loss_terms(&y, &out, &out).unwrap().l_u
    };
    let eps = 1e-6;
    for (k, g) in g1.iter().enumerate() {
        let (mut up, mut down) = (net.clone(), net.clone());
        up.params_mut()[k] += eps;
        down.params_mut()[k] -= eps;
        let fd = (plain(&up) - plain(&down)) / (2.0 * eps);
        assert!((g - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {g} vs {fd}");
    }
}

#[test]
fn consistency_training_reduces_loss() {
    let scheme = generate_uniform_scheme(&[40, 40], &[1000.0, 2000.0], 2).unwrap();
    let data = generate_phantom(32, 32, &scheme, SIGMA, 3).unwrap();
    let config = TrainConfig { epochs: 50, batch_size: 64, hidden_widths: vec![64, 32], ..TrainConfig::new(vec![20, 20]) };
    let (_, log) = train(&data, &config).unwrap();
    assert_eq!(log.epochs.len(), 50);
    let first = log.epochs[0].loss;
    let last = log.epochs[49].loss;
    assert!(last < first, "{first} -> {last}");
    assert!(log.epochs.iter().all(|e| e.loss.is_finite()));
}

struct Shared {
    model: EstimatorModel,
    test: PhantomDataset,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let scheme = generate_uniform_scheme(&[70, 70], &[1000.0, 2000.0], 1).unwrap();
        let parts: Vec<_> = (0..4).map(|i| generate_phantom(40, 40, &scheme, SIGMA, 50 + i).unwrap()).collect();
        let train_data = PhantomDataset::vstack(&parts).unwrap();
        let config = TrainConfig { epochs: 10, batch_size: 64, seed: 2, ..TrainConfig::new(vec![30, 30]) };
        let model = train(&train_data, &config).unwrap().0;
        let test = generate_phantom(40, 40, &scheme, SIGMA, 60).unwrap();
        Shared { model, test }
    })
}

#[test]
fn prediction_is_invariant_to_antipodal_flips_and_shell_permutations() {
    let s = shared();
    let sel = uniform_subsample(s.test.scheme(), &[30, 30], 0).unwrap();
    let scheme = apply_selection(s.test.scheme(), &sel).unwrap();
    let voxel = s.test.foreground()[7];
    let full = s.test.voxel_signal(voxel);
    let offsets = s.test.scheme().shell_offsets();
    let signal: Vec<f64> =
        sel.per_shell().iter().zip(&offsets).flat_map(|(idx, &o)| idx.iter().map(move |&i| full[o + i])).collect();
    let base = s.model.predict_many(&signal, &scheme).unwrap()[0];
    let flipped = s.model.predict_many(&signal, &scheme.antipodal()).unwrap()[0];
    for (a, b) in base.iter().zip(&flipped) {
        assert!((a - b).abs() <= 1e-12);
    }

    let reversed = SubsampleSelection::new(sel.per_shell().iter().map(|v| v.iter().rev().copied().collect()).collect());
    let rscheme = apply_selection(s.test.scheme(), &reversed).unwrap();
    let rsignal: Vec<f64> = reversed
        .per_shell()
        .iter()
        .zip(&offsets)
        .flat_map(|(idx, &o)| idx.iter().map(move |&i| full[o + i]))
        .collect();
    let permuted = s.model.predict_many(&rsignal, &rscheme).unwrap()[0];
    for (a, b) in base.iter().zip(&permuted) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn random_scheme_psnr_is_stable_across_seeds() {
    let s = shared();
    let psnrs: Vec<f64> = (0..10u64)
        .map(|seed| {
            let sel = random_subsample(s.test.scheme(), &[(30, 30), (30, 30)], 300 + seed).unwrap();
            evaluate_selection(&s.model, &s.test, &sel).unwrap().psnr[3]
        })
        .collect();
    let (_, sd) = mean_sd(&psnrs);
    assert!(sd < 0.5, "RS PSNR sd {sd} over {psnrs:?}");
}

#[test]
fn more_low_b_directions_favour_isotropic_fraction() {
    let s = shared();
    let v_iso = |counts: [usize; 2]| {
        (0..3u64)
            .map(|seed| {
                let sel = uniform_subsample(s.test.scheme(), &counts, seed).unwrap();
                evaluate_selection(&s.model, &s.test, &sel).unwrap().psnr[1]
            })
            .sum::<f64>()
            / 3.0
    };
    let low = v_iso([51, 10]);
    let high = v_iso([10, 51]);
    assert!(low > high, "v_iso PSNR 61(51,10) {low} vs 61(10,51) {high}");
}

#[test]
fn protocol_reports_are_reproducible() {
    let s = shared();
    for protocol in [Protocol::Ss, Protocol::Rs, Protocol::Flexible] {
        let spec = ExperimentSpec::new(protocol, vec![4, 9]);
        let a = rows_to_csv(&run_protocol(&spec, Some(&s.model), &s.test).unwrap());
        let b = rows_to_csv(&run_protocol(&spec, Some(&s.model), &s.test).unwrap());
        assert_eq!(a, b);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `QNODDI_ACCEPT_ONLY=4,6` to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qnoddi::estimator::{
    consistency_gradients, loss_terms, Backbone, EstimatorModel, LossMode, Mlp, TrainConfig,
};
use qnoddi::evaluation::{
    pooled_rmse, predict_maps, psnr, run_ablation, run_protocol, ss_selection, ssim, ExperimentSpec, Protocol,
};
use qnoddi::noddi::{generate_phantom, noddi_signal, od_from_kappa, watson_density, NoddiParams, PhantomDataset};
use qnoddi::quadrature::gauss_legendre;
use qnoddi::scheme::{
    generate_uniform_scheme, random_subsample, uniform_subsample, GradientDirection, MultiShellScheme, Shell,
};
use qnoddi::shbasis::{build_sh_basis, evaluate_shell, fit_shell, num_coefficients, sh_row};

const SIGMA: f64 = 1.0 / 30.0;
const B_VALUES: [f64; 2] = [1000.0, 2000.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn unit(x: f64, y: f64, z: f64) -> GradientDirection {
    GradientDirection::normalized(x, y, z).unwrap()
}

/// Order-6 truncation of a NODDI attenuation profile at one b-value, by
/// product Gauss quadrature (exact for the projection). Both the profile and
/// the even-order basis are antipodally symmetric, so the upper hemisphere
/// with doubled weights covers the sphere.
fn band_limited_noddi(params: &NoddiParams, b: f64) -> Vec<f64> {
    let (t, wt) = gauss_legendre(24);
    let nphi = 48;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (ti, wi) in t.iter().zip(&wt).filter(|(t, _)| **t > 0.0) {
        let s = (1.0 - ti * ti).sqrt();
        for k in 0..nphi {
            let phi = 2.0 * PI * k as f64 / nphi as f64;
            nodes.push(unit(s * phi.cos(), s * phi.sin(), *ti));
            weights.push(2.0 * wi * 2.0 * PI / nphi as f64);
        }
    }
    let shell = MultiShellScheme::new(vec![Shell::new(b, nodes.clone()).unwrap()]).unwrap();
    let e = noddi_signal(params, &shell).unwrap().flat();
    let mut c = vec![0.0; num_coefficients(6)];
    for ((d, w), ev) in nodes.iter().zip(&weights).zip(&e) {
        for (cj, yj) in c.iter_mut().zip(sh_row(*d, 6).unwrap()) {
            *cj += w * ev * yj;
        }
    }
    c
}

fn random_noddi(rng: &mut ChaCha8Rng) -> NoddiParams {
    let mu = GradientDirection::random(rng);
    NoddiParams::new(
        rng.random_range(0.2..0.8),
        rng.random_range(0.0..0.3),
        rng.random_range(0.1..0.8),
        mu,
    )
    .unwrap()
}

fn shell_dirs(n: usize, seed: u64) -> Vec<GradientDirection> {
    generate_uniform_scheme(&[n], &[1000.0], seed).unwrap().shells()[0].directions().to_vec()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut err0, mut err_reg) = (0.0f64, 0.0f64);
    for (i, n) in [28usize, 30, 45, 60, 90].into_iter().enumerate() {
        let dirs = shell_dirs(n, i as u64);
        let basis = build_sh_basis(&dirs, 6).unwrap();
        for _ in 0..5 {
            // arbitrary order-6 content: exact recovery without regularization
            let c: Vec<f64> = (0..28).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = evaluate_shell(&c, &dirs, 6).unwrap();
            let back = evaluate_shell(&fit_shell(&e, &basis, 0.0).unwrap(), &dirs, 6).unwrap();
            err0 = e.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(err0, f64::max);
        }
        if n < 30 {
            continue;
        }
        for _ in 0..5 {
            // order-6 projections of diffusion profiles
            let p = random_noddi(&mut rng);
            for b in B_VALUES {
                let c = band_limited_noddi(&p, b);
                let e = evaluate_shell(&c, &dirs, 6).unwrap();
                for lambda in [0.0, 0.006] {
                    let back = evaluate_shell(&fit_shell(&e, &basis, lambda).unwrap(), &dirs, 6).unwrap();
                    let err = e.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if lambda == 0.0 {
                        err0 = err0.max(err);
                    } else {
                        err_reg = err_reg.max(err);
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        err0 <= 1e-8 && err_reg <= 1e-3 && secs < 1.0,
        format!("max err lambda=0 {err0:.2e} (<=1e-8), lambda=0.006 {err_reg:.2e} (<=1e-3), {secs:.2}s (<1s)"),
    )
}

fn criterion_2() -> Outcome {
    let full = generate_uniform_scheme(&[60], &[1000.0], 7).unwrap();
    let dirs = full.shells()[0].directions().to_vec();
    let a_idx = uniform_subsample(&full, &[30], 7).unwrap().per_shell()[0].clone();
    let b_idx: Vec<usize> = (0..60).filter(|i| !a_idx.contains(i)).collect();
    let a: Vec<_> = a_idx.iter().map(|&i| dirs[i]).collect();
    let b: Vec<_> = b_idx.iter().map(|&i| dirs[i]).collect();
    let (ba, bb) = (build_sh_basis(&a, 6).unwrap(), build_sh_basis(&b, 6).unwrap());
    // noise covariance of the difference, in units of sigma²
    let inv = |m: &DMatrix<f64>| (m.transpose() * m).try_inverse().unwrap();
    let cov = inv(ba.matrix()) + inv(bb.matrix());
    let scale = cov.trace().sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut clean_diff = 0.0f64;
    let mut worst_z = 0.0f64;
    for seed in 0..100u64 {
        let p = random_noddi(&mut rng);
        let c = band_limited_noddi(&p, 1000.0);
        let (ea, eb) = (evaluate_shell(&c, &a, 6).unwrap(), evaluate_shell(&c, &b, 6).unwrap());
        let (ca, cb) = (fit_shell(&ea, &ba, 0.0).unwrap(), fit_shell(&eb, &bb, 0.0).unwrap());
        clean_diff = ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).fold(clean_diff, f64::max);

        let mut nrng = ChaCha8Rng::seed_from_u64(seed);
        let mut noisy = |e: &[f64]| -> Vec<f64> {
            e.iter().map(|v| qnoddi::noddi::rician_sample(*v, SIGMA, &mut nrng)).collect()
        };
        let (na, nb) = (noisy(&ea), noisy(&eb));
        let (ca, cb) = (fit_shell(&na, &ba, 0.0).unwrap(), fit_shell(&nb, &bb, 0.0).unwrap());
        let d: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        worst_z = worst_z.max(d / (SIGMA * scale));
    }
    outcome(
        clean_diff <= 1e-6 && worst_z <= 3.0,
        format!(
            "noiseless max coeff diff {clean_diff:.2e} (<=1e-6); noisy max |dc|/(sigma*sqrt(tr C)) {worst_z:.2} (<=3) over 100 seeds"
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let weights = LossMode::Consistency.weights(0.001);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let inw = rng.random_range(3..8);
        let dims = [inw, rng.random_range(3..7), rng.random_range(3..6), 3];
        let mut mlp = Mlp::random(&dims, &mut rng).unwrap();
        for p in mlp.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let batch = rng.random_range(2..6);
        let xr = DMatrix::from_fn(inw, batch, |_, _| rng.random_range(-1.0..1.0));
        let xu = DMatrix::from_fn(inw, batch, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(3, batch, |_, _| rng.random_range(0.0..1.0));
        let (_, grad) = consistency_gradients(&mlp, &xr, &xu, &y, weights).unwrap();
        let loss = |m: &Mlp| {
            loss_terms(&y, &m.forward(&xr).unwrap(), &m.forward(&xu).unwrap())
                .unwrap()
                .combine(weights)
        };
        let h = 1e-6;
        let mut fd = vec![0.0; grad.len()];
        for (i, g) in fd.iter_mut().enumerate() {
            let mut plus = mlp.clone();
            plus.params_mut()[i] += h;
            let mut minus = mlp.clone();
            minus.params_mut()[i] -= h;
            *g = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(num / den);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && secs < 10.0,
        format!("max relative error {worst:.2e} (<1e-5) over 20 networks, {secs:.2}s (<10s)"),
    )
}

/// Phantoms and models shared by the training-based criteria.
struct Trained {
    test: PhantomDataset,
    consis: EstimatorModel,
    raw: EstimatorModel,
    secs: f64,
}

fn full_scheme() -> MultiShellScheme {
    generate_uniform_scheme(&[90, 90], &B_VALUES, 1).unwrap()
}

/// Eight independently seeded slices stacked into one training set.
fn training_stack(scheme: &MultiShellScheme, side: usize, first_seed: u64) -> PhantomDataset {
    let parts: Vec<_> =
        (0..8).map(|i| generate_phantom(side, side, scheme, SIGMA, first_seed + i).unwrap()).collect();
    PhantomDataset::vstack(&parts).unwrap()
}

fn short_schedule(config: TrainConfig) -> TrainConfig {
    TrainConfig { batch_size: 64, epochs: 12, ..config }
}

fn train_models() -> Trained {
    let start = Instant::now();
    let scheme = full_scheme();
    let train_data = training_stack(&scheme, 64, 100);
    let test = generate_phantom(64, 64, &scheme, SIGMA, 12).unwrap();
    let consis =
        qnoddi::estimator::train(&train_data, &short_schedule(TrainConfig { seed: 1, ..TrainConfig::new(vec![30, 30]) }))
            .unwrap()
            .0;
    let raw = qnoddi::estimator::train(
        &train_data,
        &short_schedule(TrainConfig { seed: 1, ..TrainConfig::raw_baseline(vec![30, 30]) }),
    )
    .unwrap()
    .0;
    Trained { test, consis, raw, secs: start.elapsed().as_secs_f64() }
}

fn ss_rs_rmse(model: &EstimatorModel, data: &PhantomDataset) -> (f64, f64) {
    let ss = pooled_rmse(data.maps(), &predict_maps(model, data, &ss_selection(model, data).unwrap()).unwrap(), data.mask())
        .unwrap();
    let mut rs = 0.0;
    for seed in 0..10u64 {
        let sel = random_subsample(data.scheme(), &[(30, 30), (30, 30)], 1000 + seed).unwrap();
        rs += pooled_rmse(data.maps(), &predict_maps(model, data, &sel).unwrap(), data.mask()).unwrap();
    }
    (ss, rs / 10.0)
}

fn criterion_4(t: &Trained) -> Outcome {
    let start = Instant::now();
    let (css, crs) = ss_rs_rmse(&t.consis, &t.test);
    let (rss, rrs) = ss_rs_rmse(&t.raw, &t.test);
    let (cinc, rinc) = (crs / css - 1.0, rrs / rss - 1.0);
    let secs = t.secs + start.elapsed().as_secs_f64();
    outcome(
        cinc < 0.2 && rinc > 1.0 && secs < 900.0,
        format!(
            "consis RMSE SS {css:.4} RS {crs:.4} (+{:.1}%, <20%); raw SS {rss:.4} RS {rrs:.4} (+{:.1}%, >100%); {secs:.0}s (<900s)",
            100.0 * cinc,
            100.0 * rinc
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let scheme = full_scheme();
    let train_data = training_stack(&scheme, 48, 200);
    let test = generate_phantom(48, 48, &scheme, SIGMA, 22).unwrap();
    let base = TrainConfig { epochs: 10, ..short_schedule(TrainConfig::new(vec![30, 30])) };
    let seeds: Vec<u64> = (1..=9).collect();
    let rs_seeds: Vec<u64> = (100..105).collect();
    let rows = run_ablation(&base, &train_data, &test, &seeds, &rs_seeds).unwrap();
    let med = |mode: LossMode| {
        let label = format!("ablation-{mode}-rs");
        median(rows.iter().filter(|r| r.protocol == label && r.param == "All").map(|r| r.psnr_db).collect())
    };
    let (c, ru, u, r) = (
        med(LossMode::Consistency),
        med(LossMode::RandomPlusUniform),
        med(LossMode::Uniform),
        med(LossMode::Random),
    );
    let secs = start.elapsed().as_secs_f64();
    outcome(
        c >= ru - 0.1 && c >= u - 0.1 && secs < 3600.0,
        format!(
            "median RS PSNR consis {c:.2} dB, lr+lu {ru:.2}, lu {u:.2}, lr {r:.2} (consis >= lr+lu, lu within 0.1 dB); {secs:.0}s (<3600s)"
        ),
    )
}

fn criterion_6(t: &Trained) -> Outcome {
    let spec = ExperimentSpec::new(Protocol::Sweep, vec![1, 2, 3]);
    let rows = run_protocol(&spec, Some(&t.consis), &t.test).unwrap();
    let totals = spec.sweep_totals.clone();
    let psnrs: Vec<f64> = totals
        .iter()
        .map(|&n| {
            let v: Vec<f64> =
                rows.iter().filter(|r| r.total_dirs() == n && r.param == "All").map(|r| r.psnr_db).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let worst_drop = psnrs.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let at40 = psnrs[totals.iter().position(|&n| n == 40).unwrap()];
    let gain = psnrs
        .iter()
        .zip(&totals)
        .filter(|(_, &n)| n > 40)
        .map(|(p, _)| p - at40)
        .fold(f64::NEG_INFINITY, f64::max);
    let series: Vec<String> = totals.iter().zip(&psnrs).map(|(n, p)| format!("{n}:{p:.2}")).collect();
    outcome(
        worst_drop <= 0.3 && gain < 0.5,
        format!(
            "PSNR {} dB; largest drop {worst_drop:.3} (<=0.3), gain above 40 {gain:.3} (<0.5)",
            series.join(" ")
        ),
    )
}

/// Simpson's rule on [a, b] with `n` (even) intervals.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let scheme = full_scheme();
    let mu = unit(0.3, -0.5, 0.8);
    let p = NoddiParams::new(0.6, 1.0, 0.3, mu).unwrap();
    let e = noddi_signal(&p, &scheme).unwrap();
    let iso_exact = e
        .shells()
        .iter()
        .zip(scheme.b_values())
        .all(|(vals, b)| vals.iter().all(|v| *v == (-b * qnoddi::noddi::D_ISO).exp()));

    let z = unit(0.0, 0.0, 1.0);
    let mut worst = 0.0f64;
    for kappa in [0.0, 1.0, 10.0, 100.0] {
        // axially symmetric about z: ∫ f dΩ = 2π ∫ f(θ) sin θ dθ
        let total = 2.0
            * PI
            * simpson(
                |th| watson_density(unit(th.sin(), 0.0, th.cos()), z, kappa).unwrap() * th.sin(),
                0.0,
                PI,
                20_000,
            );
        worst = worst.max((total - 1.0).abs());
    }
    let od = od_from_kappa(1.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        iso_exact && worst <= 1e-8 && od == 0.5 && secs < 5.0,
        format!(
            "v_iso=1 exact {iso_exact}; max |Watson integral - 1| {worst:.2e} (<=1e-8); od(1) = {od}; {secs:.2}s (<5s)"
        ),
    )
}

/// Direct SSIM: explicit 11×11 windows and two-pass moments.
fn ssim_direct(x: &[f64], y: &[f64], h: usize, w: usize, mask: &[bool]) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = [[0.0; 11]; 11];
    let mut tot = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            win[i][j] = g[i] * g[j];
            tot += win[i][j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut acc, mut n) = (0.0, 0);
    for r in 5..h - 5 {
        for c in 5..w - 5 {
            if !mask[r * w + c] {
                continue;
            }
            let at = |i: usize, j: usize| (r + i - 5) * w + c + j - 5;
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    mx += win[i][j] / tot * x[at(i, j)];
                    my += win[i][j] / tot * y[at(i, j)];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = win[i][j] / tot;
                    vx += wt * (x[at(i, j)] - mx).powi(2);
                    vy += wt * (y[at(i, j)] - my).powi(2);
                    cxy += wt * (x[at(i, j)] - mx) * (y[at(i, j)] - my);
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    acc / n as f64
}

fn criterion_8() -> Outcome {
    let n = 400;
    let mask = vec![true; n];
    let reference = vec![0.0; n];
    let test: Vec<f64> = vec![0.1; n];
    let p20 = psnr(&reference, &test, &mask, 1.0).unwrap();
    let doubled: Vec<f64> = vec![0.2; n];
    let drop = p20 - psnr(&reference, &doubled, &mask, 1.0).unwrap();
    let psnr_ok = (p20 - 20.0).abs() < 1e-12 && (drop - 20.0 * 2f64.log10()).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (h, w) = (rng.random_range(16..40), rng.random_range(16..40));
        let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (v + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0)).collect();
        let m: Vec<bool> = (0..h * w)
            .map(|i| {
                let (r, c) = ((i / w) as f64 - h as f64 / 2.0, (i % w) as f64 - w as f64 / 2.0);
                r * r + c * c <= (0.45 * h.min(w) as f64).powi(2)
            })
            .collect();
        let fast = ssim(&x, &y, h, w, &m, 1.0).unwrap();
        worst = worst.max((fast - ssim_direct(&x, &y, h, w, &m)).abs());
    }
    outcome(
        psnr_ok && worst <= 1e-6,
        format!("PSNR 0.1 error {p20:.12} dB, doubling drop {drop:.12} dB; SSIM max |diff| vs direct {worst:.2e} (<=1e-6)"),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qnoddi")).args(args).current_dir(dir).output().unwrap()
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(
        dir.join("run.json"),
        r#"{"epochs": 3, "batch_size": 64, "hidden_widths": [32, 16], "seed": 4, "uniform_counts": [12, 12]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("ablation.json"),
        r#"{"epochs": 2, "batch_size": 64, "hidden_widths": [16], "uniform_counts": [12, 12], "rs_seeds": [5]}"#,
    )
    .unwrap();
    let steps: [&[&str]; 10] = [
        &["gen-scheme", "--n-per-shell", "70,70", "--b-values", "1000,2000", "--seed", "3", "--out", "scheme.txt"],
        &["synth", "--scheme", "scheme.txt", "--dims", "20x20", "--noise", "0.0333", "--seed", "5", "--out", "data.bin"],
        &["train", "--dataset", "data.bin", "--config", "run.json", "--out-model", "model.bin", "--log", "log.csv"],
        &["evaluate", "--model", "model.bin", "--dataset", "data.bin", "--protocol", "ss", "--out-csv", "ss.csv"],
        &["evaluate", "--model", "model.bin", "--dataset", "data.bin", "--protocol", "rs", "--seeds", "1,2", "--out-csv", "rs.csv"],
        &["evaluate", "--model", "model.bin", "--dataset", "data.bin", "--protocol", "sweep", "--seeds", "1", "--out-csv", "sweep.csv"],
        &["evaluate", "--model", "model.bin", "--dataset", "data.bin", "--protocol", "flexible", "--seeds", "1", "--out-csv", "flex.csv"],
        &["evaluate", "--dataset", "data.bin", "--protocol", "ablation", "--seeds", "1", "--config", "ablation.json", "--out-csv", "ablation.csv"],
        &["fit-sh", "--dataset", "data.bin", "--out", "sh.bin"],
        &["fit-sh", "--dataset", "data.bin", "--lambda", "0", "--out", "sh0.bin"],
    ];
    for args in steps {
        let out = run_cli(args, dir);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        fa.len() == fb.len() && fa.len() == 13 && differing.is_empty(),
        format!("{} artifacts compared across two runs, {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("QNODDI_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let names = [
        "SH round trip",
        "representation stability",
        "gradient correctness",
        "robustness trend",
        "loss ablation ordering",
        "sweep monotonicity",
        "NODDI oracles",
        "metric correctness",
        "CLI determinism",
    ];
    let trained = if wanted(4) || wanted(6) { Some(train_models()) } else { None };
    let mut failures = 0;
    for n in 1..=9u32 {
        if !wanted(n) {
            continue;
        }
        let o = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(trained.as_ref().unwrap()),
            5 => criterion_5(),
            6 => criterion_6(trained.as_ref().unwrap()),
            7 => criterion_7(),
            8 => criterion_8(),
            _ => criterion_9(),
        };
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {n} ({}): {} | {}",
            names[n as usize - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

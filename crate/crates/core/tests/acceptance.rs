//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viscohom::constitutive::AnalyticModel;
use viscohom::datagen::{build_dataset, sample_mu_signal, Dataset, DatasetSpec, Labeler, MuConfig};
use viscohom::homogenize::{exact_params, kernel_eval, kv_exact_params, sls_exact_params, verification_grid};
use viscohom::macrosolver::{relative_error, solve_macro, space_time_l2};
use viscohom::material::{KvLayer, MaterialProfile, SlsLayer};
use viscohom::microsolver::{
    analytic_cell_2piece, relative_l2, solve_cell_forced, solve_multiscale_fem, SimConfig, SimResult, Trajectory,
};
use viscohom::nn::{
    evaluate, loss_and_gradient, probe_linearity, rnn_forward, train, HiddenTarget, LossKind, ProbeGrid,
    SurrogatePair, TrainConfig, TrainOutcome, DEFAULT_HIDDEN,
};
use viscohom::Result;

type Check = std::result::Result<(bool, String), String>;

fn wrap<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Exact two-layer reference values, derived by hand from the harmonic mean
/// `(0.5/(1 + 0.1 s) + 0.5/(3 + 0.2 s))^-1`.
const GOLDEN_E: f64 = 14.0 / 9.0;
const GOLDEN_NU: f64 = 2.0 / 15.0;
const GOLDEN_ALPHA: f64 = 40.0 / 3.0;
const GOLDEN_BETA: f64 = 20.0 / 27.0;
const GOLDEN_RELAXED: f64 = 1.5;

const TRAIN_DT: f64 = 0.004;
const TRAIN_SEED: u64 = 2;
const DATA_SEED: u64 = 1000;

fn random_kv(rng: &mut ChaCha8Rng) -> MaterialProfile {
    let n = rng.random_range(1..=8);
    let layers: Vec<KvLayer> = (0..n)
        .map(|_| KvLayer::new(rng.random_range(0.1..1.0), rng.random_range(0.2..5.0), rng.random_range(0.2..5.0)))
        .collect();
    MaterialProfile::piecewise_kv(&layers).unwrap()
}

/// Harmonic mean of `E + nu s` over the layers.
fn harmonic_symbol(profile: &MaterialProfile, s: f64) -> f64 {
    1.0 / profile.kv_layers().unwrap().iter().map(|l| l.length / (l.modulus + l.viscosity * s)).sum::<f64>()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn partial_fraction_exactness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = verification_grid();
    let (mut worst, mut bad_poles) = (0.0f64, 0);
    for _ in 0..100 {
        let profile = random_kv(&mut rng);
        let p = wrap(kv_exact_params(&profile))?;
        if p.alpha.iter().chain(&p.beta).any(|v| !v.is_finite()) || p.alpha.iter().any(|&a| !(a > 0.0)) {
            bad_poles += 1;
        }
        for &s in &grid {
            worst = worst.max(rel(p.symbol(s), harmonic_symbol(&profile, s)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-8 && bad_poles == 0 && secs < 5.0,
        format!("max residual {worst:.2e} on {} s points, {bad_poles} bad pole sets, {secs:.2} s", grid.len()),
    ))
}

fn static_moduli() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let profile = random_kv(&mut rng);
        let p = wrap(kv_exact_params(&profile))?;
        let layers = profile.kv_layers().unwrap();
        let inv_e: f64 = layers.iter().map(|l| l.length / l.modulus).sum();
        let inv_nu: f64 = layers.iter().map(|l| l.length / l.viscosity).sum();
        let e_nu2: f64 = layers.iter().map(|l| l.length * l.modulus / (l.viscosity * l.viscosity)).sum();
        worst[0] = worst[0].max(rel(p.symbol(0.0), 1.0 / inv_e));
        worst[1] = worst[1].max(rel(p.nu_prime, 1.0 / inv_nu));
        worst[2] = worst[2].max(rel(p.e_prime, e_nu2 / (inv_nu * inv_nu)));
    }
    Ok((
        worst.iter().all(|&w| w < 1e-9),
        format!("relaxed {:.2e}, nu' {:.2e}, E' {:.2e}", worst[0], worst[1], worst[2]),
    ))
}

fn golden_values() -> Check {
    let profile = MaterialProfile::two_piece_reference();
    let p = wrap(exact_params(&profile))?;
    if p.alpha.len() != 1 {
        return Ok((false, format!("expected one pole, got {}", p.alpha.len())));
    }
    let oracle = verification_grid().iter().map(|&s| rel(p.symbol(s), harmonic_symbol(&profile, s))).fold(0.0, f64::max);
    // (name, computed, exact fraction, printed value, printed decimals)
    let pairs = [
        ("E'", p.e_prime, GOLDEN_E, 1.555556, 6),
        ("nu'", p.nu_prime, GOLDEN_NU, 0.133333, 6),
        ("alpha", p.alpha[0], GOLDEN_ALPHA, 13.33333, 5),
        ("beta", p.beta[0], GOLDEN_BETA, 0.740741, 6),
        ("relaxed", p.relaxed_modulus(), GOLDEN_RELAXED, 1.5, 6),
    ];
    let worst = pairs.iter().map(|&(_, got, exact, _, _)| rel(got, exact)).fold(0.0, f64::max);
    // the printed constants are roundings, so they are held to half a unit in their last place
    let rounding_ok = pairs.iter().all(|&(_, got, _, printed, places)| (got - printed).abs() <= 0.5 * 10f64.powi(-places));
    let values: Vec<String> = pairs.iter().map(|(n, v, _, _, _)| format!("{n}={v:.7}")).collect();
    Ok((
        oracle < 1e-8 && worst < 1e-6 && rounding_ok,
        format!("{}, max rel dev {worst:.1e}, rounds to printed: {rounding_ok}, oracle {oracle:.1e}", values.join(" ")),
    ))
}

fn kernel_ode_equivalence() -> Check {
    let p = wrap(kv_exact_params(&MaterialProfile::two_piece_reference()))?;
    let (coarse, fine, t_final) = (1e-3f64, 1e-4f64, 4.0f64);
    let ratio = (coarse / fine).round() as usize;
    let n = (t_final / coarse).round() as usize;
    let kernel: Vec<f64> = (0..=n).map(|k| kernel_eval(&p, k as f64 * coarse).unwrap()).collect();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let signal = wrap(sample_mu_signal(&MuConfig { t_final, seed: 300 + i, ..MuConfig::default() }))?;
        let ode = wrap(analytic_cell_2piece(&p, &signal, fine, t_final))?;
        let (b, c) = signal.sample(coarse, n + 1);
        // trapezoidal convolution quadrature of the memory term
        let conv: Vec<f64> = (0..=n)
            .map(|k| {
                let mut acc = 0.0;
                for j in 0..=k {
                    let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                    acc += w * kernel[k - j] * b[j];
                }
                p.e_prime * b[k] + p.nu_prime * c[k] + coarse * acc
            })
            .collect();
        let ode_coarse: Vec<f64> = (0..=n).map(|k| ode.sigma[k * ratio]).collect();
        worst = worst.max(relative_l2(&conv, &ode_coarse));
    }
    Ok((worst < 1e-3, format!("max relative L2 {worst:.2e} over 10 strains")))
}

fn cell_cross_validation() -> Check {
    let profile = MaterialProfile::two_piece_reference();
    let p = wrap(kv_exact_params(&profile))?;
    let (mut worst, mut ratios) = (0.0f64, Vec::new());
    for i in 0..10 {
        let signal = wrap(sample_mu_signal(&MuConfig { seed: 400 + i, ..MuConfig::default() }))?;
        let diff = |dt: f64| -> std::result::Result<f64, String> {
            let fd = wrap(solve_cell_forced(&profile, &signal, dt, 4.0, 2))?;
            let an = wrap(analytic_cell_2piece(&p, &signal, dt, 4.0))?;
            Ok(relative_l2(&an.sigma, &fd.sigma))
        };
        worst = worst.max(diff(1e-4)?);
        ratios.push(diff(1e-3)? / diff(5e-4)?);
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    Ok((
        worst < 1e-3 && lo >= 1.5 && hi <= 2.5,
        format!("max relative L2 {worst:.2e} at dt=1e-4, convergence ratios in [{lo:.3}, {hi:.3}]"),
    ))
}

fn small_dataset(n: usize, t_final: f64, seed: u64) -> Result<Dataset> {
    let spec = DatasetSpec {
        n,
        dt: TRAIN_DT,
        fine_dt: 1e-3,
        labeler: Labeler::Analytic2Piece,
        mu: MuConfig { t_final, seed, ..MuConfig::default() },
    };
    build_dataset(&MaterialProfile::two_piece_reference(), &spec)
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut sur = SurrogatePair::random(1, &[8, 8], true, 21);
    // move every parameter off zero so no SELU input sits on its kink at xi = b = 0
    let shifted: Vec<f64> = sur.flatten().iter().enumerate().map(|(k, v)| v + 0.1 * (k as f64).sin()).collect();
    sur.assign_from(&shifted);
    let base = sur.flatten();
    // a wider stencil can straddle a SELU kink somewhere in the unrolled graph
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..5 {
        let data = wrap(small_dataset(3, 0.4, 700 + j))?;
        let batch: Vec<&Trajectory> = data.trajectories.iter().collect();
        for kind in [LossKind::Accessible, LossKind::Inaccessible] {
            let (_, grad) = wrap(loss_and_gradient(&sur, &batch, kind, HiddenTarget::Rate))?;
            let mut probe = sur.clone();
            let mut v = base.clone();
            for k in 0..base.len() {
                v[k] = base[k] + h;
                probe.assign_from(&v);
                let up = wrap(loss_and_gradient(&probe, &batch, kind, HiddenTarget::Rate))?.0;
                v[k] = base[k] - h;
                probe.assign_from(&v);
                let down = wrap(loss_and_gradient(&probe, &batch, kind, HiddenTarget::Rate))?.0;
                v[k] = base[k];
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-5 && secs < 30.0,
        format!("max relative error {worst:.2e} over {} parameters, 5 batches, {secs:.1} s", base.len()),
    ))
}

fn exact_representation() -> Check {
    let p = wrap(kv_exact_params(&MaterialProfile::two_piece_reference()))?;
    let sur = wrap(SurrogatePair::exact_linear(&p, &DEFAULT_HIDDEN, true))?;
    let data = wrap(small_dataset(20, 4.0, 900))?;
    let trajs: Vec<&Trajectory> = data.trajectories.iter().collect();
    let loss = wrap(evaluate(&sur, &trajs, HiddenTarget::Rate))?.accessible.value;
    Ok((loss < 1e-3, format!("accessible loss {loss:.2e} on 20 held-out trajectories")))
}

fn train_config(rate: bool) -> (SurrogatePair, TrainConfig) {
    let cfg = TrainConfig { epochs: 150, batch_size: 10, seed: TRAIN_SEED, ..TrainConfig::default() };
    (SurrogatePair::random(1, &DEFAULT_HIDDEN, rate, TRAIN_SEED), cfg)
}

fn desk_training(outcome: &TrainOutcome, elapsed: Duration) -> Check {
    let first = outcome.history[1].train_loss;
    let last = outcome.history.last().unwrap();
    let drop = first / last.train_loss;
    let secs = elapsed.as_secs_f64();
    Ok((
        drop >= 10.0 && last.test_accessible < 0.05 && secs < 600.0,
        format!(
            "train loss {first:.3} -> {:.4} ({drop:.1}x), test accessible {:.4}, {secs:.0} s",
            last.train_loss, last.test_accessible
        ),
    ))
}

fn surrogate_in_the_loop(fem: &SimResult, sur: &SurrogatePair) -> Check {
    let p = wrap(kv_exact_params(&MaterialProfile::two_piece_reference()))?;
    let cfg = SimConfig::macro_sinusoidal(2.0);
    let base = wrap(solve_macro(&AnalyticModel::new(p), &cfg))?;
    let learned = wrap(solve_macro(sur, &cfg))?;
    let e_base = wrap(relative_error(fem, &base))?;
    let e_sur = wrap(relative_error(fem, &learned))?;
    let (mut worst, mut at) = (0.0f64, 0.0);
    for ((t, eb), es) in e_base.times.iter().zip(&e_base.error).zip(&e_sur.error) {
        if (0.25..=2.0).contains(t) && es / eb > worst {
            worst = es / eb;
            at = *t;
        }
    }
    Ok((
        worst <= 2.0,
        format!(
            "max e_surrogate/e_analytic {worst:.3} at t={at:.2} (max e: analytic {:.2e}, surrogate {:.2e})",
            e_base.max_on(0.25, 2.0),
            e_sur.max_on(0.25, 2.0)
        ),
    ))
}

fn homogenization_convergence(fems: &[(f64, SimResult)]) -> Check {
    let p = wrap(kv_exact_params(&MaterialProfile::two_piece_reference()))?;
    // macro run on the fine mesh and step of the oscillating solves
    let template = &fems[0].1.config.clone().expect("fem config");
    let cfg = SimConfig { epsilon: None, ..template.clone() };
    let homog = wrap(solve_macro(&AnalyticModel::new(p), &cfg))?;
    let errors = fems.iter().map(|(_, u)| wrap(space_time_l2(u, &homog))).collect::<std::result::Result<Vec<_>, _>>()?;
    let monotone = errors.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let listed: Vec<String> = fems.iter().zip(&errors).map(|((eps, _), e)| format!("eps={eps}: {e:.3e}")).collect();
    Ok((monotone, listed.join(", ")))
}

/// Worst per-trajectory relative stress error of `sur` on the given strains at `dt`.
fn worst_error(sur: &SurrogatePair, dt: f64, test: &[usize]) -> std::result::Result<f64, String> {
    let spec = DatasetSpec {
        n: test.iter().max().map(|m| m + 1).unwrap_or(0),
        dt,
        fine_dt: 1e-3,
        labeler: Labeler::Analytic2Piece,
        mu: MuConfig { seed: DATA_SEED, ..MuConfig::default() },
    };
    let data = wrap(build_dataset(&MaterialProfile::two_piece_reference(), &spec))?;
    let mut worst = 0.0f64;
    for &i in test {
        let tr = &data.trajectories[i];
        let out = wrap(rnn_forward(sur, &tr.b, &tr.c, dt))?;
        worst = worst.max(relative_l2(&tr.sigma, &out.sigma));
    }
    Ok(worst)
}

fn dt_robustness(rate: &TrainOutcome, ablation: &TrainOutcome) -> Check {
    let grid = [0.002, 0.004, 0.008, 0.016];
    let test = &rate.test_indices;
    let curve = |sur: &SurrogatePair| -> std::result::Result<Vec<f64>, String> {
        let w: Vec<f64> = grid.iter().map(|&dt| worst_error(sur, dt, test)).collect::<std::result::Result<_, _>>()?;
        Ok(w.iter().map(|v| v / w[1]).collect())
    };
    let with_rate = curve(&rate.surrogate)?;
    let without = curve(&ablation.surrogate)?;
    let ok = grid.iter().enumerate().filter(|(_, &dt)| dt != TRAIN_DT).all(|(i, _)| with_rate[i] < without[i]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    Ok((ok, format!("inflation at dt {:?}: strain-rate {}, ablation {}", grid, fmt(&with_rate), fmt(&without))))
}

fn linearity_probe(sur: &SurrogatePair) -> Check {
    let p = wrap(kv_exact_params(&MaterialProfile::two_piece_reference()))?;
    let families = wrap(probe_linearity(sur, &ProbeGrid::default(), Some(&p)))?;
    let scores: Vec<(String, f64)> = families.iter().map(|f| (f.name.clone(), f.min_r_squared())).collect();
    let ok = scores.len() == 5 && scores.iter().all(|(_, r)| *r >= 0.99);
    let listed: Vec<String> = scores.iter().map(|(n, r)| format!("{n} {r:.4}")).collect();
    Ok((ok, format!("min R^2: {}", listed.join(", "))))
}

/// Largest spatial L2 norm over time of `a - b` on a shared grid.
fn sup_l2_difference(a: &SimResult, b: &SimResult) -> f64 {
    let h: Vec<f64> = a.nodes.windows(2).map(|w| w[1] - w[0]).collect();
    let mut worst = 0.0f64;
    for (ra, rb) in a.displacement.rows().into_iter().zip(b.displacement.rows()) {
        let d: Vec<f64> = ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).collect();
        let sq: f64 = h.iter().enumerate().map(|(i, hi)| 0.5 * hi * (d[i] + d[i + 1])).sum();
        worst = worst.max(sq.sqrt());
    }
    worst
}

fn lipschitz_scaling() -> Check {
    let profile = MaterialProfile::two_piece_reference();
    let cfg = SimConfig::fem_sinusoidal(0.04, 1.0);
    let base = wrap(solve_multiscale_fem(&profile, &cfg))?;
    let mut diffs = Vec::new();
    for delta in [1e-3, 1e-2, 1e-1] {
        let u = wrap(solve_multiscale_fem(&wrap(profile.shifted(delta))?, &cfg))?;
        diffs.push(sup_l2_difference(&base, &u));
    }
    let ratios = [diffs[1] / diffs[0], diffs[2] / diffs[1]];
    Ok((
        ratios.iter().all(|r| (5.0..=20.0).contains(r)),
        format!("differences {:.2e}/{:.2e}/{:.2e}, ratios {:.2}/{:.2}", diffs[0], diffs[1], diffs[2], ratios[0], ratios[1]),
    ))
}

fn sls_kv_limit() -> Check {
    let sls = wrap(MaterialProfile::piecewise_sls(&[
        SlsLayer::new(0.5, 1.0, 1e6, 0.1),
        SlsLayer::new(0.5, 3.0, 1e6, 0.2),
    ]))?;
    let sls_p = wrap(sls_exact_params(&sls))?;
    let kv_p = wrap(kv_exact_params(&MaterialProfile::two_piece_reference()))?;
    let worst = (0..=1000).map(|i| i as f64 * 0.1).map(|s| rel(sls_p.symbol(s), kv_p.symbol(s))).fold(0.0, f64::max);
    Ok((worst < 1e-4, format!("max relative symbol gap {worst:.2e} on s in [0, 100]")))
}

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, start: Instant, check: Check) {
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match check {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            self.failures += 1;
        }
        println!("{} [{id:>2}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
    }
}

fn main() {
    let mut report = Report { failures: 0 };
    let t = Instant::now();
    report.record(1, "partial-fraction exactness", t, partial_fraction_exactness());
    let t = Instant::now();
    report.record(2, "static and high-frequency moduli", t, static_moduli());
    let t = Instant::now();
    report.record(3, "two-layer golden values", t, golden_values());
    let t = Instant::now();
    report.record(4, "kernel and internal-variable stress agree", t, kernel_ode_equivalence());
    let t = Instant::now();
    report.record(5, "cell solver cross-validation", t, cell_cross_validation());
    let t = Instant::now();
    report.record(6, "BPTT gradient check", t, gradient_check());
    let t = Instant::now();
    report.record(7, "exact representation without training", t, exact_representation());

    let data = small_dataset(40, 4.0, DATA_SEED);
    let t = Instant::now();
    let trained = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
        let (sur, cfg) = train_config(true);
        wrap(train(d, sur, &cfg))
    });
    let train_time = t.elapsed();
    report.record(8, "desk-scale training", t, trained.as_ref().map_err(Clone::clone).and_then(|o| desk_training(o, train_time)));

    let t = Instant::now();
    let profile = MaterialProfile::two_piece_reference();
    let fems: std::result::Result<Vec<(f64, SimResult)>, String> = [0.08, 0.04, 0.02]
        .iter()
        .map(|&eps| wrap(solve_multiscale_fem(&profile, &SimConfig::fem_sinusoidal(eps, 2.0))).map(|u| (eps, u)))
        .collect();
    let check9 = match (&fems, &trained) {
        (Ok(f), Ok(o)) => surrogate_in_the_loop(&f[1].1, &o.surrogate),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    report.record(9, "surrogate in the macro loop", t, check9);
    let t = Instant::now();
    report.record(10, "homogenization convergence", t, fems.as_ref().map_err(Clone::clone).and_then(|f| homogenization_convergence(f)));

    let t = Instant::now();
    let check11 = match (&data, &trained) {
        (Ok(d), Ok(o)) => {
            let (sur, cfg) = train_config(false);
            wrap(train(d, sur, &cfg)).and_then(|ablation| dt_robustness(o, &ablation))
        }
        (Err(e), _) => Err(e.to_string()),
        (_, Err(e)) => Err(e.clone()),
    };
    report.record(11, "dt-robustness ordering", t, check11);
    let t = Instant::now();
    report.record(12, "linearity probe", t, trained.as_ref().map_err(Clone::clone).and_then(|o| linearity_probe(&o.surrogate)));
    let t = Instant::now();
    report.record(13, "material Lipschitz scaling", t, lipschitz_scaling());
    let t = Instant::now();
    report.record(14, "SLS to Kelvin-Voigt limit", t, sls_kv_limit());

    println!("{} of 14 criteria passed", 14 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}

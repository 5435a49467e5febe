use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use viscohom::constitutive::AnalyticModel;
use viscohom::datagen::{build_dataset, read_dataset, write_dataset, Dataset, DatasetSpec};
use viscohom::homogenize::{exact_params, HomogenizedParams, ModelKind};
use viscohom::macrosolver::{relative_error, solve_macro, space_time_l2};
use viscohom::material::MaterialProfile;
use viscohom::microsolver::{relative_l2, solve_multiscale_fem, SimResult};
use viscohom::nn::{probe_linearity, rnn_forward, train, train_two_phase, write_history_csv, SurrogatePair};

use crate::config::{Backend, RawConfig, Resolved};
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    let mut cfg = raw.resolve(cli.seed)?;
    match &cli.command {
        Command::Simulate { weights: Some(w) } => cfg.simulate.weights = Some(w.clone()),
        Command::DtRobustness { weights, dts } => {
            if let Some(w) = weights {
                cfg.dt_robustness.weights = Some(w.clone());
            }
            if let Some(d) = dts {
                cfg.dt_robustness.dts = d.clone();
            }
        }
        Command::Train { data: Some(d) } => cfg.data.dir = Some(d.clone()),
        _ => {}
    }
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("resolved.toml"), toml::to_string(&cfg)?)?;
    match &cli.command {
        Command::Homogenize => homogenize(&cfg, out),
        Command::GenData => gen_data(&cfg, out),
        Command::Train { .. } => train_cmd(&cfg, out),
        Command::Simulate { .. } => simulate(&cfg, out),
        Command::Compare { reference, test } => compare(reference, test, out),
        Command::DtRobustness { .. } => dt_robustness(&cfg, out),
        Command::ProbeLinearity { weights } => probe(&cfg, weights, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn homogenize(cfg: &Resolved, out: &Path) -> Result<()> {
    let profile = cfg.material.layered_profile()?;
    let params = exact_params(&profile)?;
    fs::write(out.join("params.toml"), toml::to_string(&params)?)?;
    println!("material   {}", profile.describe());
    print_params(&params);
    if params.model == ModelKind::Kv {
        // weights that reproduce the analytic law, usable as a training start
        let exact = SurrogatePair::exact_linear(&params, &cfg.train.hidden, true)?;
        exact.save(&out.join("exact_weights.bin"))?;
    }
    Ok(())
}

fn print_params(p: &HomogenizedParams) {
    println!("model      {:?}", p.model);
    println!("E'         {:.10}", p.e_prime);
    println!("nu'        {:.10}", p.nu_prime);
    println!("relaxed    {:.10}", p.relaxed_modulus());
    println!("poles      {}", p.alpha.len());
    for (a, b) in p.alpha.iter().zip(&p.beta) {
        println!("  alpha {a:.10}  beta {b:.10}");
    }
    println!("residual   {:.3e}", p.residual);
}

fn dataset(cfg: &Resolved) -> Result<Dataset> {
    match &cfg.data.dir {
        Some(dir) => Ok(read_dataset(dir)?),
        None => Ok(build_dataset(&cfg.material.profile()?, &cfg.data.spec)?),
    }
}

fn gen_data(cfg: &Resolved, out: &Path) -> Result<()> {
    let data = build_dataset(&cfg.material.profile()?, &cfg.data.spec)?;
    let dir = out.join("data");
    write_dataset(&data, &dir)?;
    println!("wrote {} trajectories of {} samples to {}", data.n(), data.len, dir.display());
    Ok(())
}

fn train_cmd(cfg: &Resolved, out: &Path) -> Result<()> {
    let data = dataset(cfg)?;
    let t = &cfg.train;
    let initial = match &t.init_weights {
        Some(path) => SurrogatePair::load(path)?,
        None => SurrogatePair::random(t.l0, &t.hidden, t.use_strain_rate, cfg.seed),
    };
    let outcome = match &t.second_phase {
        Some(second) => train_two_phase(&data, initial, &t.phase, second)?,
        None => train(&data, initial, &t.phase)?,
    };
    outcome.surrogate.save(&out.join("weights.bin"))?;
    write_history_csv(&outcome.history, create(&out.join("history.csv"))?)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: train loss {:.6e}, test accessible {:.6e}",
            last.epoch, last.train_loss, last.test_accessible
        );
    }
    Ok(())
}

fn load_weights(path: Option<&Path>, what: &str) -> Result<SurrogatePair> {
    let path = path.with_context(|| format!("{what} needs surrogate weights"))?;
    Ok(SurrogatePair::load(path)?)
}

fn simulate(cfg: &Resolved, out: &Path) -> Result<()> {
    let sim = &cfg.simulate;
    let result = match sim.backend {
        Backend::Fem => solve_multiscale_fem(&cfg.material.profile()?, &sim.config)?,
        Backend::MacroAnalytic => {
            let params = exact_params(&cfg.material.layered_profile()?)?;
            solve_macro(&AnalyticModel::new(params), &sim.config)?
        }
        Backend::MacroSurrogate => {
            let sur = load_weights(sim.weights.as_deref(), "the macro_surrogate backend")?;
            solve_macro(&sur, &sim.config)?
        }
    };
    let path = out.join("result.csv");
    result.write_csv(create(&path)?)?;
    let peak = result.displacement.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("{}: {} frames, max |u| {:.6e}, wrote {}", result.solver, result.times.len(), peak, path.display());
    Ok(())
}

fn read_result(path: &Path) -> Result<SimResult> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(SimResult::read_csv(BufReader::new(file))?)
}

fn compare(reference: &Path, test: &Path, out: &Path) -> Result<()> {
    let (r, t) = (read_result(reference)?, read_result(test)?);
    let curve = relative_error(&r, &t)?;
    curve.write_csv(create(&out.join("error.csv"))?)?;
    let n = curve.error.len().max(1) as f64;
    println!("max_error   {:.6e}", curve.error.iter().fold(0.0f64, |m, &e| m.max(e)));
    println!("mean_error  {:.6e}", curve.error.iter().sum::<f64>() / n);
    println!("final_error {:.6e}", curve.error.last().copied().unwrap_or(0.0));
    println!("space_time  {:.6e}", space_time_l2(&r, &t)?);
    Ok(())
}

/// Mean and worst per-trajectory relative stress error at step `dt`.
fn errors_at(sur: &SurrogatePair, profile: &MaterialProfile, spec: &DatasetSpec, dt: f64) -> Result<(f64, f64)> {
    let data = build_dataset(profile, &DatasetSpec { dt, ..spec.clone() })?;
    let mut errs = Vec::with_capacity(data.n());
    for tr in &data.trajectories {
        let pred = rnn_forward(sur, &tr.b, &tr.c, dt)?;
        if tr.sigma.iter().any(|&s| s != 0.0) {
            errs.push(relative_l2(&tr.sigma, &pred.sigma));
        }
    }
    if errs.is_empty() {
        bail!("no trajectory with nonzero stress to evaluate");
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok((mean, errs.iter().fold(0.0f64, |m, &e| m.max(e))))
}

fn dt_robustness(cfg: &Resolved, out: &Path) -> Result<()> {
    let sur = load_weights(cfg.dt_robustness.weights.as_deref(), "dt-robustness")?;
    let profile = cfg.material.profile()?;
    let spec = &cfg.data.spec;
    let (_, reference) = errors_at(&sur, &profile, spec, cfg.dt_robustness.reference_dt)?;
    let mut w = create(&out.join("dt_robustness.csv"))?;
    writeln!(w, "dt,mean_error,worst_error,inflation")?;
    for &dt in &cfg.dt_robustness.dts {
        let (mean, worst) = errors_at(&sur, &profile, spec, dt)?;
        writeln!(w, "{dt:.16e},{mean:.16e},{worst:.16e},{:.16e}", worst / reference)?;
        println!("dt {dt:<8} mean {mean:.4e} worst {worst:.4e} inflation {:.3}", worst / reference);
    }
    w.flush()?;
    Ok(())
}

fn probe(cfg: &Resolved, weights: &Path, out: &Path) -> Result<()> {
    let sur = SurrogatePair::load(weights)?;
    // analytic curves only when the material has a finite pole expansion
    let truth = cfg.material.layered_profile().ok().and_then(|p| exact_params(&p).ok());
    let families = probe_linearity(&sur, &cfg.probe, truth.as_ref())?;
    let mut table = create(&out.join("r_squared.csv"))?;
    writeln!(table, "family,held,held_value,r_squared")?;
    for f in &families {
        f.write_csv(create(&out.join(format!("probe_{}.csv", f.name)))?)?;
        for c in &f.curves {
            writeln!(table, "{},{},{:.16e},{:.16e}", f.name, f.held, c.fixed_value, c.r_squared)?;
        }
        println!("{:<12} min R^2 {:.6}", f.name, f.min_r_squared());
    }
    table.flush()?;
    Ok(())
}

//! `dyadic`: command-line front end for the estimate lab and the solvers.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyadic::cns::{self, SchemeRun, SolveConfig};
use dyadic::error::Error;
use dyadic::field::{Field, Grid, Rank};
use dyadic::lab::{self, CampaignConfig, FieldRecipe, RatioReport, Spectrum, Verdict};
use dyadic::linear::{self, MomentumProblem, TimeField, TransportProblem};
use dyadic::output;
use dyadic::partition::DyadicPartition;
use dyadic::weights::WeightSequence;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dyadic", version, about = "Littlewood-Paley estimate lab and compressible flow solvers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Grid points per axis (power of two).
    #[arg(long = "grid", global = true)]
    grid: Option<usize>,
    /// Space dimension.
    #[arg(long, global = true, default_value_t = 2)]
    dim: usize,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory for reports, CSV tables and snapshots.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config: solver settings for solve/uniqueness, campaign settings
    /// for campaign.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the full JSON report on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct Exponents {
    #[arg(long, allow_negative_numbers = true)]
    p: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    s: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    s1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    s2: Option<f64>,
    /// Base dyadic scale of the random fields.
    #[arg(long, allow_negative_numbers = true)]
    j: Option<i32>,
    #[arg(long, allow_negative_numbers = true)]
    octaves: Option<u32>,
    /// Largest accepted scale drift.
    #[arg(long, allow_negative_numbers = true)]
    drift_bound: Option<f64>,
    /// Weight rate c.
    #[arg(long, allow_negative_numbers = true)]
    c: Option<f64>,
    /// Paraproduct piece: tgf, tfg or r.
    #[arg(long, allow_negative_numbers = true)]
    piece: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    /// Worker threads (0: all cores).
    #[arg(long, allow_negative_numbers = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProductKind {
    /// Besov times Besov.
    Besov,
    /// Besov times L-infinity.
    Linf,
    /// r = infinity endpoint.
    Endpoint,
}

#[derive(Subcommand)]
enum Command {
    /// Partition of unity and block reconstruction on random fields.
    ///
    /// CSV (partition.csv): trial,relative_error.
    PartitionCheck,
    /// Bernstein ratio campaign over annulus fields.
    Bernstein(Exponents),
    /// Bony reconstruction defect campaign.
    Bony(Exponents),
    /// Weight table e_k(t), omega_k(t).
    ///
    /// CSV: k,t,e,omega.
    Weights {
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 20)]
        kmax: i32,
        #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
        kmin: i32,
        /// Comma-separated sample times.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.001, 0.01, 0.1, 1.0])]
        times: Vec<f64>,
    },
    /// Product law campaign.
    Product {
        #[arg(long, value_enum, default_value_t = ProductKind::Besov)]
        law: ProductKind,
        #[command(flatten)]
        exps: Exponents,
    },
    /// Composition law campaign for F(x) = x/(1+x).
    Compose(Exponents),
    /// Advection of a random field by a random divergence-free velocity.
    ///
    /// Writes manifest.json and norms.csv (t,p,j_min,block...).
    Transport {
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
    },
    /// Constant-coefficient momentum run from random data.
    ///
    /// Writes manifest.json, norms_u.csv and energy.csv (step,energy).
    Momentum {
        #[arg(long = "T", default_value_t = 0.5)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 0.0)]
        lam: f64,
    },
    /// Nonlinear solver run from a config file.
    ///
    /// Writes manifest.json, norms_a.csv, norms_u.csv, hypotheses.csv and
    /// a_XXXX.bin / u_XXXX.bin snapshots.
    Solve,
    /// Distance between a run and a run from perturbed data.
    ///
    /// Writes uniqueness.json and distance.csv (t,da,du).
    Uniqueness {
        #[arg(long, default_value_t = 1e-6)]
        perturbation: f64,
    },
    /// Ratio campaign for a registered estimate.
    Campaign {
        /// Estimate id (see --list).
        lemma: Option<String>,
        /// List the registered estimate ids.
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        exps: Exponents,
    },
}

/// Failure split into runtime problems (exit 1) and bad input (exit 2).
enum Failure {
    Runtime(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Hypothesis(_)
            | Error::InvalidArgument(_)
            | Error::InvalidGrid(_)
            | Error::InvalidExponent(_)
            | Error::Budget(_)
            | Error::Parse(_)
            | Error::Cfl { .. }
            | Error::IndexOutOfRange { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let c = &cli.common;
    match &cli.command {
        Command::PartitionCheck => partition_check(c),
        Command::Bernstein(e) => run_campaign("bernstein", c, e),
        Command::Bony(e) => run_campaign("bony", c, e),
        Command::Weights { c: rate, kmax, kmin, times } => weights(c, *rate, *kmin, *kmax, times),
        Command::Product { law, exps } => {
            let id = match law {
                ProductKind::Besov => "product",
                ProductKind::Linf => "product-linf",
                ProductKind::Endpoint => "product-endpoint",
            };
            run_campaign(id, c, exps)
        }
        Command::Compose(e) => run_campaign("composition", c, e),
        Command::Transport { horizon, dt, amplitude } => transport(c, *horizon, *dt, *amplitude),
        Command::Momentum { horizon, dt, mu, lam } => momentum(c, *horizon, *dt, *mu, *lam),
        Command::Solve => solve(c),
        Command::Uniqueness { perturbation } => uniqueness(c, *perturbation),
        Command::Campaign { lemma, list, exps } => {
            if *list {
                for (id, what) in lab::LEMMAS {
                    println!("{id:28} {what}");
                }
                return Ok(true);
            }
            match lemma {
                Some(id) => run_campaign(id, c, exps),
                None => Err(Failure::Usage("campaign needs an estimate id or --list".into())),
            }
        }
    }
}

fn out_dir(c: &Common) -> Result<Option<&Path>, Failure> {
    if let Some(d) = &c.out {
        std::fs::create_dir_all(d).map_err(|e| Failure::Runtime(format!("{}: {e}", d.display())))?;
    }
    Ok(c.out.as_deref())
}

fn emit(c: &Common, name: &str, value: &serde_json::Value, summary: &str) -> Result<(), Failure> {
    if let Some(d) = out_dir(c)? {
        output::write_json(&d.join(name), value)?;
    }
    if c.json {
        println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
    } else {
        println!("{summary}");
    }
    Ok(())
}

fn grid(c: &Common, default: usize) -> Result<Grid, Failure> {
    Ok(Grid::periodic(c.dim, c.grid.unwrap_or(default))?)
}

fn campaign_config(c: &Common, e: &Exponents) -> Result<CampaignConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|err| Failure::Usage(format!("{}: {err}", path.display())))?;
            toml::from_str(&text).map_err(|err| Failure::Usage(format!("{}: {err}", path.display())))?
        }
        None => CampaignConfig::default(),
    };
    cfg.seed = c.seed;
    cfg.dim = c.dim;
    cfg.resolution = c.grid.or(cfg.resolution);
    cfg.trials = c.trials.unwrap_or(cfg.trials);
    macro_rules! over {
        ($($f:ident),*) => { $( if e.$f.is_some() { cfg.$f = e.$f.clone(); } )* };
    }
    over!(p, q, s, s1, s2, j, octaves, piece, eps);
    cfg.drift_bound = e.drift_bound.unwrap_or(cfg.drift_bound);
    cfg.c = e.c.unwrap_or(cfg.c);
    cfg.threads = e.threads.unwrap_or(cfg.threads);
    if cfg.trials == 0 {
        return Err(Failure::Usage("--trials must be positive".into()));
    }
    Ok(cfg)
}

fn run_campaign(id: &str, c: &Common, e: &Exponents) -> Outcome {
    let cfg = campaign_config(c, e)?;
    let report: RatioReport = lab::campaign(id, &cfg)?;
    let value = serde_json::to_value(&report).map_err(|err| Failure::Runtime(err.to_string()))?;
    let pass = report.verdict == Verdict::Pass;
    let summary = format!(
        "{}: trials {} max_ratio {:.6e} scale_drift {:.4} (bound {}) {}",
        report.lemma,
        report.trials,
        report.max_ratio,
        report.scale_drift,
        report.drift_bound,
        if pass { "PASS" } else { "FAIL" }
    );
    emit(c, &format!("{id}.json"), &value, &summary)?;
    Ok(pass)
}

fn partition_check(c: &Common) -> Outcome {
    let g = grid(c, 128)?;
    let part = DyadicPartition::for_grid(g)?;
    let defect = part.partition_defect();
    let trials = c.trials.unwrap_or(50);
    let mut errors = Vec::with_capacity(trials);
    for t in 0..trials {
        let recipe = FieldRecipe {
            seed: c.seed.wrapping_add(t as u64),
            spectrum: Spectrum::PowerLaw { alpha: None, j_cut: (g.resolution() / 2).ilog2() as i32 },
            amplitude: 1.0,
            rank: Rank::Scalar,
        };
        let f = lab::generate(&recipe, g)?;
        let mut sum = Field::zeros(g, Rank::Scalar).shift(f.mean()[0]);
        for b in part.blocks(&f)? {
            sum = sum.add(&b)?;
        }
        errors.push(sum.sub(&f)?.lp_norm(2.0)? / f.lp_norm(2.0)?);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let pass = defect <= 1e-10 && worst <= 1e-10;
    if let Some(d) = out_dir(c)? {
        output::write_rows(&d.join("partition.csv"), "trial,relative_error", errors.iter().enumerate().map(|(i, e)| vec![i as f64, *e]))?;
    }
    let value = json!({
        "resolution": g.resolution(), "dim": g.dim(), "j_min": part.j_min(), "j_max": part.j_max(),
        "partition_defect": defect, "trials": trials, "max_reconstruction_error": worst,
        "tolerance": 1e-10, "verdict": if pass { "pass" } else { "fail" },
    });
    let summary = format!(
        "partition defect {defect:.3e}, reconstruction error {worst:.3e} over {trials} fields: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    emit(c, "partition.json", &value, &summary)?;
    Ok(pass)
}

fn weights(c: &Common, rate: f64, kmin: i32, kmax: i32, times: &[f64]) -> Outcome {
    if kmax < kmin {
        return Err(Failure::Usage(format!("--kmax {kmax} is below --kmin {kmin}")));
    }
    let w = WeightSequence::parabolic(rate)?;
    let mut buf = Vec::new();
    w.write_table_csv(&mut buf, kmin, kmax, times)?;
    match out_dir(c)? {
        Some(d) => std::fs::write(d.join("weights.csv"), &buf).map_err(|e| Failure::Runtime(e.to_string()))?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(true)
}

fn random_field(c: &Common, g: Grid, rank: Rank, seed_offset: u64, amplitude: f64) -> Result<Field, Failure> {
    let part = DyadicPartition::for_grid(g)?;
    let recipe = FieldRecipe {
        seed: c.seed.wrapping_add(seed_offset),
        spectrum: Spectrum::PowerLaw { alpha: None, j_cut: (part.j_max() - 2).max(0) },
        amplitude,
        rank,
    };
    Ok(lab::generate(&recipe, g)?)
}

fn transport(c: &Common, horizon: f64, dt: f64, amplitude: f64) -> Outcome {
    let g = grid(c, 64)?;
    let part = DyadicPartition::for_grid(g)?;
    let f0 = random_field(c, g, Rank::Scalar, 0, 1.0)?;
    let v = linear::leray_projection(&random_field(c, g, Rank::Vector, 1, amplitude)?)?;
    let prob = TransportProblem::new(f0.clone(), TimeField::Constant(v.clone()), horizon, dt);
    let run = linear::solve_transport(&prob, &part)?;
    let last = run.f.last().expect("samples");
    let drift = |p: f64| -> Result<f64, Failure> { Ok((last.lp_norm(p)? / f0.lp_norm(p)? - 1.0).abs()) };
    let (l2, l4) = (drift(2.0)?, drift(4.0)?);
    if let Some(d) = out_dir(c)? {
        output::write_series(&d.join("norms.csv"), &run.series)?;
    }
    let value = json!({ "manifest": run.manifest(), "l2_drift": l2, "l4_drift": l4 });
    let summary = format!("transport: {} steps, relative L2 drift {l2:.3e}, L4 drift {l4:.3e}", run.steps);
    emit(c, "manifest.json", &value, &summary)?;
    Ok(true)
}

fn momentum(c: &Common, horizon: f64, dt: f64, mu: f64, lam: f64) -> Outcome {
    let g = grid(c, 64)?;
    let part = DyadicPartition::for_grid(g)?;
    let u0 = random_field(c, g, Rank::Vector, 0, 1.0)?;
    let prob = MomentumProblem::constant(u0, mu, lam, horizon, dt);
    let run = linear::solve_momentum(&prob, &part)?;
    let increases = run.energy_increases(1e-12);
    if let Some(d) = out_dir(c)? {
        output::write_series(&d.join("norms_u.csv"), &run.series_u)?;
        output::write_rows(&d.join("energy.csv"), "step,energy", run.energy.iter().enumerate().map(|(i, e)| vec![i as f64, *e]))?;
    }
    let value = json!({
        "manifest": run.manifest(), "mu": mu, "lam": lam,
        "energy_start": run.energy[0], "energy_end": run.energy.last(), "energy_increases": increases,
    });
    let summary = format!(
        "momentum: {} steps, energy {:.6e} -> {:.6e}, {increases} increasing steps",
        run.steps,
        run.energy[0],
        run.energy.last().copied().unwrap_or(0.0)
    );
    emit(c, "manifest.json", &value, &summary)?;
    Ok(increases == 0)
}

fn load_solver_config(c: &Common) -> Result<SolveConfig, Failure> {
    let cfg = match &c.config {
        Some(path) => SolveConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        None => return Err(Failure::Usage("--config FILE is required".into())),
    };
    Ok(cfg)
}

fn solver_run(cfg: &SolveConfig, c: &Common, perturbation: f64) -> Result<SchemeRun, Failure> {
    let mut g = cfg.grid()?;
    if let Some(m) = c.grid {
        g = Grid::new(g.dim(), m, g.period())?;
    }
    let laws = cfg.laws.build()?;
    let (rho, u) = cfg.data.generate(g, &laws)?;
    let (mut a0, u0) = cns::reformulate(&rho, &u, &laws)?;
    if perturbation != 0.0 {
        let bump = Field::from_fn(g, |x| x.iter().map(|y| y.cos()).sum::<f64>() / x.len() as f64)?;
        a0 = a0.axpy(perturbation, &bump)?;
    }
    Ok(cns::run_scheme(&a0, &u0, &laws, &cfg.run)?)
}

fn solve(c: &Common) -> Outcome {
    let cfg = load_solver_config(c)?;
    let run = solver_run(&cfg, c, 0.0)?;
    if let Some(d) = out_dir(c)? {
        run.write_outputs(d)?;
    }
    let healthy = run.first_breach.is_none();
    let value = serde_json::to_value(run.manifest()).map_err(|e| Failure::Runtime(e.to_string()))?;
    let summary = format!(
        "solve: {} steps to T = {}, mass drift {:.3e}, {}",
        run.steps,
        run.config.horizon,
        run.mass_drift(),
        match run.first_breach {
            None => "hypotheses held throughout".to_string(),
            Some(t) => format!("first hypothesis breach at t = {t}"),
        }
    );
    if c.json {
        println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
    } else {
        println!("{summary}");
    }
    Ok(healthy)
}

fn uniqueness(c: &Common, perturbation: f64) -> Outcome {
    let cfg = load_solver_config(c)?;
    let r1 = solver_run(&cfg, c, 0.0)?;
    let r2 = solver_run(&cfg, c, perturbation)?;
    let report = cns::uniqueness_distance(&r1, &r2)?;
    let value = json!({ "perturbation": perturbation, "report": report });
    if let Some(d) = out_dir(c)? {
        output::write_rows(
            &d.join("distance.csv"),
            "t,da,du",
            report.times.iter().zip(&report.da_norm).zip(&report.du_norm).map(|((t, a), u)| vec![*t, *a, *u]),
        )?;
    }
    let bounded = report.growth_factor.is_none_or(f64::is_finite);
    let pass = bounded && report.osgood.increasing;
    let summary = format!(
        "uniqueness: growth factor {}, Osgood integral at 1e-20: {:.4}",
        report.growth_factor.map_or("n/a".to_string(), |g| format!("{g:.4}")),
        cns::osgood_integral(report.osgood.c_t, 1e-20)
    );
    emit(c, "uniqueness.json", &value, &summary)?;
    Ok(pass)
}

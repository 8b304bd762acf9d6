//! Command-line interface.
//!
//! Exit codes: 0 all checks pass, 1 a property failed, 2 configuration error.

use crate::error::{PflowError, Result};
use crate::flow::{self, RunOptions};
use crate::harness::config::RunConfigFile;
use crate::harness::initial::CapMap;
use crate::harness::persist;
use crate::harness::scenario::{scenario, Scenario, ScenarioOptions, ScenarioOutcome};
use crate::rng::SeededRng;
use crate::target::{
    best_cap_delta, delta_p, max_admissible_cap_radius, verify_regular_set, verify_sublevel,
    RegularBallCert,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "pflow",
    version,
    about = "Regularised p-harmonic map heat flow: runs, certificates and scenario checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify a geodesic ball of the target and report δ, δ_p and r_max.
    Cert(CertArgs),
    /// Run the flow from a JSON configuration file.
    Run(RunArgs),
    /// Run one catalogued scenario (S1–S5).
    Scenario(ScenarioArgs),
    /// Run every catalogued scenario.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CertArgs {
    /// Target manifold (currently: sphere).
    #[arg(long, default_value = "sphere")]
    target: String,
    /// Flow exponent p ≥ 2.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Domain dimension m.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Geodesic ball radius r.
    #[arg(long)]
    r: f64,
    /// Intermediate radius r₁ (default: the maximiser of δ).
    #[arg(long)]
    r1: Option<f64>,
    /// Emit the table as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config.output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario identifier: S1, S2, S3, S4 or S5.
    id: String,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse and execute; returns the process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // help/version are not configuration errors
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if kind == ErrorKind::DisplayHelp || kind == ErrorKind::DisplayVersion {
                0
            } else {
                2
            };
        }
    };
    let result = match cli.command {
        Command::Cert(args) => cmd_cert(args),
        Command::Run(args) => cmd_run(args),
        Command::Scenario(args) => cmd_scenario(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(all_pass) => {
            if all_pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn cmd_cert(args: CertArgs) -> Result<bool> {
    if args.target != "sphere" {
        return Err(PflowError::InvalidConfig(format!(
            "cert supports the sphere target, got '{}'",
            args.target
        )));
    }
    let target = crate::target::EmbeddedTarget::make_sphere(2)?;
    let (delta_star, r1_star) = best_cap_delta(args.r)?;
    let r1 = args.r1.unwrap_or(r1_star);
    let delta = crate::target::cap_delta(args.r, r1)?;
    let dp = delta_p(args.m, args.p)?;
    let r_max = max_admissible_cap_radius(args.p, args.m)?;
    let cert =
        RegularBallCert::spherical_cap(&target, vec![0.0, 0.0, 1.0], args.r, Some(r1), None)?;
    let samples = cert.default_samples(&target, 64)?;
    let c1 = verify_regular_set(&cert, &target, &samples)?;
    let c2 = verify_sublevel(&cert, &target, &samples)?;
    let admissible = delta > dp + crate::harness::scenario::DELTA_MARGIN;

    if args.json {
        let doc = serde_json::json!({
            "target": "sphere",
            "p": args.p,
            "m": args.m,
            "r": args.r,
            "r1": r1,
            "r1_optimal": r1_star,
            "delta": delta,
            "delta_optimal": delta_star,
            "delta_p": dp,
            "r_max": r_max,
            "admissible": admissible,
            "concavity_pass": c1.pass,
            "concavity_min_eigenvalue": c1.min_eigenvalue,
            "sublevel_pass": c2.pass,
            "sublevel_min_eigenvalue": c2.min_eigenvalue,
            "samples": c1.samples,
        });
        println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    } else {
        println!("target        sphere S^2 (K2 = 1)");
        println!("p, m          {}, {}", args.p, args.m);
        println!("r             {:.6}", args.r);
        println!("r1            {:.6}  (optimal {:.6})", r1, r1_star);
        println!("delta         {:.6}  (optimal {:.6})", delta, delta_star);
        println!("delta_p       {:.6}", dp);
        println!("r_max         {:.6}", r_max);
        println!(
            "admissible    {}",
            if admissible { "YES" } else { "NO (delta <= delta_p)" }
        );
        println!(
            "concavity     {}  (min eig {:.3e} over {} samples)",
            if c1.pass { "PASS" } else { "FAIL" },
            c1.min_eigenvalue,
            c1.samples
        );
        println!(
            "sublevel      {}  (min eig {:.3e})",
            if c2.pass { "PASS" } else { "FAIL" },
            c2.min_eigenvalue
        );
    }
    Ok(c1.pass && c2.pass)
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let cfg = RunConfigFile::load(&args.config)?;
    let grid = cfg.build_grid()?;
    let target = cfg.build_target()?;
    let flow_cfg = cfg.build_flow_config()?;
    let cert = cfg.build_cert(&target)?;

    // seeded default initial data: cap data inside the ball for sphere
    // targets, a gentle angle field otherwise
    let mut rng = SeededRng::new(cfg.seed);
    let u0 = match (&cert, target.kind()) {
        (Some(c), crate::target::TargetKind::Sphere) => {
            let l = target.ambient_dim();
            let mut center = vec![0.0; l];
            center[l - 1] = 1.0;
            let cap = CapMap::new(
                &mut rng,
                &target,
                center,
                grid.dim(),
                grid.periods(),
                2,
                0.7 * c.a.sqrt(),
            );
            cap.materialize(&grid)
        }
        (None, crate::target::TargetKind::CliffordTorus) => {
            let field = crate::harness::initial::BandLimitedField::new(
                &mut rng,
                grid.dim(),
                grid.periods(),
                2,
            );
            let r = 0.5f64.sqrt();
            crate::geometry::AmbientField::from_fn(&grid, 4, |pos| {
                let a = 0.3 * field.eval(pos);
                vec![r * a.cos(), r * a.sin(), r, 0.0]
            })
        }
        (None, crate::target::TargetKind::Euclidean) => {
            let field = crate::harness::initial::BandLimitedField::new(
                &mut rng,
                grid.dim(),
                grid.periods(),
                2,
            );
            let l = target.ambient_dim();
            crate::geometry::AmbientField::from_fn(&grid, l, |pos| {
                let mut v = vec![0.0; l];
                v[0] = 0.3 * field.eval(pos);
                v
            })
        }
        (None, crate::target::TargetKind::Sphere) => {
            let cap = CapMap::new(
                &mut rng,
                &target,
                {
                    let l = target.ambient_dim();
                    let mut c = vec![0.0; l];
                    c[l - 1] = 1.0;
                    c
                },
                grid.dim(),
                grid.periods(),
                2,
                0.3,
            );
            cap.materialize(&grid)
        }
        (Some(_), _) => {
            return Err(PflowError::InvalidConfig(
                "ball certificates require a sphere target".into(),
            ))
        }
    };

    let rec = flow::run(
        &grid,
        &target,
        u0,
        &flow_cfg,
        &RunOptions {
            cert: cert.as_ref(),
            history_every: None,
        },
    )?;
    let pass = rec.abort.is_none()
        && rec.report.flags.energy_monotone
        && rec.report.flags.confinement
        && rec.report.flags.phi_monotone;

    let out_dir = args
        .out
        .or_else(|| cfg.output.as_ref().map(|o| PathBuf::from(&o.dir)));
    let outcome = ScenarioOutcome {
        id: "run".into(),
        seed: cfg.seed,
        properties: vec![
            crate::harness::scenario::PropertyResult {
                name: "energy-nonincreasing".into(),
                pass: rec.report.flags.energy_monotone,
                observed: 0.0,
                threshold: crate::diagnostics::ENERGY_MONOTONE_REL_TOL,
                detail: "per-step energy monotonicity flag".into(),
            },
            crate::harness::scenario::PropertyResult {
                name: "confinement".into(),
                pass: rec.report.flags.confinement,
                observed: 0.0,
                threshold: crate::diagnostics::CONFINEMENT_TOL,
                detail: "max f* confinement flag".into(),
            },
            crate::harness::scenario::PropertyResult {
                name: "phi-max-nonincreasing".into(),
                pass: rec.report.flags.phi_monotone,
                observed: 0.0,
                threshold: crate::diagnostics::PHI_MONOTONE_REL_TOL,
                detail: "max φ monotonicity flag".into(),
            },
            crate::harness::scenario::PropertyResult {
                name: "completed".into(),
                pass: rec.abort.is_none(),
                observed: if rec.abort.is_none() { 0.0 } else { 1.0 },
                threshold: 0.0,
                detail: rec.abort.clone().unwrap_or_else(|| "no abort".into()),
            },
        ],
        runs: vec![crate::harness::scenario::NamedRun {
            label: "run".into(),
            record: rec,
        }],
    };
    if let Some(dir) = out_dir {
        persist::write_outcome(&dir, &outcome)?;
        println!("wrote {}", dir.display());
    }
    print_properties(&outcome);
    Ok(pass)
}

fn cmd_scenario(args: ScenarioArgs) -> Result<bool> {
    let which: Scenario = args.id.parse()?;
    let spec = scenario(
        which,
        ScenarioOptions {
            p: args.p,
            r: args.r,
            seed: args.seed,
        },
    )?;
    let outcome = spec.execute()?;
    if let Some(dir) = args.out {
        persist::write_outcome(&dir, &outcome)?;
        println!("wrote {}", dir.display());
    }
    print_properties(&outcome);
    Ok(outcome.pass())
}

fn cmd_sweep(args: SweepArgs) -> Result<bool> {
    let seed = args.seed;
    let ids = [
        Scenario::S1,
        Scenario::S2,
        Scenario::S3,
        Scenario::S4,
        Scenario::S5,
    ];
    let outcomes: Vec<Result<ScenarioOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ids
            .iter()
            .map(|&which| {
                scope.spawn(move || {
                    scenario(
                        which,
                        ScenarioOptions {
                            p: None,
                            r: None,
                            seed,
                        },
                    )?
                    .execute()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut all_pass = true;
    for outcome in outcomes {
        let outcome = outcome?;
        if let Some(dir) = &args.out {
            let sub = dir.join(outcome.id.split('[').next().unwrap_or(&outcome.id));
            persist::write_outcome(&sub, &outcome)?;
        }
        print_properties(&outcome);
        all_pass &= outcome.pass();
    }
    Ok(all_pass)
}

fn print_properties(outcome: &ScenarioOutcome) {
    println!(
        "== {} (seed {}) : {}",
        outcome.id,
        outcome.seed,
        if outcome.pass() { "PASS" } else { "FAIL" }
    );
    for p in &outcome.properties {
        println!(
            "  [{}] {:<45} observed {:>12.4e}  threshold {:>10.3e}",
            if p.pass { "PASS" } else { "FAIL" },
            p.name,
            p.observed,
            p.threshold
        );
    }
}

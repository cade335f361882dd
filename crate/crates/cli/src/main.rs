use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinetic_core::config::{load_config, RunConfig};
use kinetic_core::kl::CovarianceFamily;
use kinetic_core::output::{preflight, write_json};
use kinetic_core::scenario::{gap_case, kl_case, poisson_check, run_case, uq_case, with_workers, workers_from_env};
use kinetic_core::verify::{verify, Fixtures};
use kinetic_core::Error;

/// Kinetic slab solver, hypocoercivity diagnostics and verification suites.
///
/// The worker count is read from KINETIC_THREADS; it never changes outputs.
#[derive(Parser)]
#[command(name = "kinetic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf), Error> {
        let cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        let out = self.out.clone().unwrap_or_else(|| cfg.output.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic solve with entropy diagnostics and the spectral oracle.
    Run(Common),
    /// Derivative hierarchy in the random parameter z.
    Uq {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lmax: Option<usize>,
        #[arg(long)]
        z: Option<f64>,
        /// Compare levels 1 and 2 with central differences of this width.
        #[arg(long = "fd-check")]
        fd_check: Option<f64>,
    },
    /// Karhunen–Loève basis, sampling and the coefficient Gram check.
    Kl {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kernel)]
        kernel: Option<CovarianceFamily>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        energy: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Correlation length of the exponential kernel.
        #[arg(long)]
        length: Option<f64>,
    },
    /// Spectral oracle only.
    Gap(Common),
    /// Manufactured-solution convergence of the Poisson solver.
    PoissonCheck {
        #[arg(long, default_value_t = 1.0)]
        lx: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Property suites: collision, bc, poisson, solver, diagnostics, uq, kl or all.
    Verify {
        suites: Vec<String>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Negative control: replace L by −L in the collision suite.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn parse_kernel(s: &str) -> Result<CovarianceFamily, String> {
    match s {
        "brownian" => Ok(CovarianceFamily::Brownian),
        "exponential" => Ok(CovarianceFamily::Exponential),
        other => Err(format!("unknown kernel `{other}` (brownian | exponential; tables via --config)")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn execute(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            let o = run_case(&cfg, Some(&out))?;
            let s = &o.summary;
            println!("steps        {}", s.stats.steps);
            println!("dt           {:.6e}", s.stats.dt);
            println!("mass drift   {:.3e}", s.stats.max_mass_drift);
            if let Some(f) = &s.norm_fit {
                println!("tau_fit      {:.6}", f.tau_fit);
            }
            if let Some(t) = s.oracle_tau {
                println!("tau_h        {:.6}", t);
            }
            if let Some(e) = s.oracle_rel_error {
                println!("rel error    {:+.4}", e);
            }
            let ok = s.checks.is_none_or(|t| t.all_ok());
            println!("entropy checks {}", if ok { "pass" } else { "FAIL" });
            println!("outputs in   {}", out.display());
            Ok(ok)
        }
        Command::Uq {
            common,
            lmax,
            z,
            fd_check,
        } => {
            let (mut cfg, out) = common.load()?;
            if let Some(l) = lmax {
                cfg.uq.l_max = l;
            }
            if let Some(z) = z {
                cfg.uq.z = z;
            }
            if fd_check.is_some() {
                cfg.uq.fd_delta = fd_check;
            }
            let s = uq_case(&cfg, Some(&out))?;
            print_json(&s);
            Ok(s.source_bound_failures + s.j_source_bound_failures + s.entropy_failures == 0 && s.lemma.ok)
        }
        Command::Kl {
            common,
            kernel,
            n,
            energy,
            samples,
            seed,
            length,
        } => {
            let (mut cfg, out) = common.load()?;
            if let Some(k) = kernel {
                cfg.kl.kernel = k;
            }
            if let Some(n) = n {
                cfg.kl.n = n;
            }
            if let Some(e) = energy {
                cfg.kl.energy = e;
            }
            if let Some(s) = samples {
                cfg.kl.samples = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(l) = length {
                cfg.kl.length = l;
            }
            let s = kl_case(&cfg, Some(&out))?;
            println!("d            {}", s.d);
            println!("captured     {:.6}", s.captured);
            println!("lambda_1..d  {:?}", s.eigenvalues);
            println!("max offdiag  {:.4} (threshold {:.4})", s.gram.max_offdiag, s.gram.offdiag_threshold);
            for f in &s.gram.flags {
                println!("flag: {f}");
            }
            Ok(s.gram.ok)
        }
        Command::Gap(c) => {
            let (cfg, out) = c.load()?;
            print_json(&gap_case(&cfg, Some(&out))?);
            Ok(true)
        }
        Command::PoissonCheck { lx, out } => {
            let s = poisson_check(lx, out.as_deref())?;
            print_json(&s);
            Ok(s.ok)
        }
        Command::Verify {
            suites,
            report,
            inject_sign_flip,
        } => {
            let r = verify(
                &suites,
                Fixtures {
                    flip_collision_sign: inject_sign_flip,
                },
            )?;
            for p in &r.properties {
                println!("{} {:<42} {}", if p.ok { "PASS" } else { "FAIL" }, p.name, p.detail);
            }
            println!("{} passed, {} failed", r.passed, r.failed);
            if let Some(path) = report {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    preflight(dir)?;
                }
                write_json(Path::new(&path), &r)?;
            }
            Ok(r.ok())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match workers_from_env() {
        Ok(Some(n)) => with_workers(n, || execute(cli.command)).and_then(|r| r),
        Ok(None) => execute(cli.command),
        Err(e) => Err(e),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

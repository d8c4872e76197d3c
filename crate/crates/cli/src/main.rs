use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homoclinic_cli::commands;
use homoclinic_cli::verify;
use homoclinic_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "homoclinic",
    version,
    about = "Homoclinic bifurcation over a circle of parameters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ranks, orientation invariants and index of the asymptotic stable bundles.
    Bundles(Common),
    /// Determinant-sign scan of the linearization and bifurcation candidates.
    Detect(Common),
    /// Switch to and continue the nontrivial branch.
    Branch {
        #[command(flatten)]
        common: Common,
        /// Bifurcation point to start from; defaults to the first candidate.
        #[arg(long)]
        theta_star: Option<f64>,
        /// Amplitude of the first branch point.
        #[arg(long)]
        s0: Option<f64>,
    },
    /// Numerical checks of the standing hypotheses.
    Check(Common),
    /// Runs the built-in verification suite on the worked example.
    VerifyPaper(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grid_m: Option<usize>,
    #[arg(long)]
    window_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    kernel_tol: Option<f64>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    tail_tol: Option<f64>,
    #[arg(long)]
    tol_theta: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(
            grid_m => grid_m,
            window_n => window_n,
            seed => seed,
            gap_tol => tolerances.gap_tol,
            kernel_tol => tolerances.kernel_tol,
            newton_tol => tolerances.newton_tol,
            tail_tol => tolerances.tail_tol,
            tol_theta => tolerances.tol_theta,
        );
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bundles(c) => {
            let r = commands::bundles(&c.load()?)?;
            println!(
                "rank+ {} rank- {} index {} w1+ {} w1- {} w1(Ind) {} predicted bifurcation: {}",
                r.rank_plus,
                r.rank_minus,
                r.index,
                r.w1_plus,
                r.w1_minus,
                r.w1_index,
                r.predicted_bifurcation
            );
        }
        Command::Detect(c) => {
            let r = commands::detect(&c.load()?)?;
            println!(
                "loop parity {} over {} nodes",
                r.scan.loop_parity,
                r.scan.nodes.len()
            );
            for c in &r.candidates {
                println!(
                    "candidate theta* = {:.12} (relative smin {:.2e})",
                    c.theta_star, c.relative_smin
                );
            }
            for w in &r.scan.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Branch {
            common,
            theta_star,
            s0,
        } => {
            let mut cfg = common.load()?;
            if let Some(s0) = s0 {
                cfg.branch.s0 = s0;
                cfg.validate()?;
            }
            let (s, _) = commands::branch(&cfg, theta_star)?;
            println!(
                "{} points from theta* = {:.12}, l2 in [{:.3e}, {:.3e}], stop: {}",
                s.points, s.theta_star, s.l2_range.0, s.l2_range.1, s.stop_reason
            );
        }
        Command::Check(c) => {
            let r = commands::check(&c.load()?)?;
            for c in r.checks() {
                println!("{} {:?}: {}", c.name, c.status, c.summary);
            }
        }
        Command::VerifyPaper(c) => {
            let results = verify::verify(&c.load()?)?;
            for r in &results {
                println!(
                    "{} [{}] {} ({:.2}s): {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.id,
                    r.name,
                    r.seconds,
                    r.detail
                );
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::VerificationFailed {
                    failed,
                    total: results.len(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOMOCLINIC_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mildls::experiments::{config_from_file, probe_history, registry, run, ExperimentConfig};
use mildls::verification::manufactured_suite;

#[derive(Parser)]
#[command(name = "mildls", version, about = "Least-squares FEM convergence studies with mixed boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve on a sequence of meshes and write CSV, plot script and rates.
    Run(StudyArgs),
    /// Report inf-sup probe values along an adaptive sequence.
    ProbeInfsup {
        #[command(flatten)]
        study: StudyArgs,
        /// Number of adaptive levels to probe.
        #[arg(long, default_value_t = 5)]
        levels: usize,
    },
    /// Run the manufactured-solution exactness suite.
    Verify {
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// List the built-in problems.
    Problems,
}

#[derive(Args)]
struct StudyArgs {
    /// key=value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    q: Option<usize>,
    /// uniform or adaptive.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    max_dofs: Option<usize>,
    /// matched or full.
    #[arg(long)]
    test_mesh: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra key=value settings, e.g. --set probe-max-dofs=2000.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl StudyArgs {
    fn config(&self) -> mildls::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => config_from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| mildls::Error::Parse(format!("expected KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        let flags = [
            ("problem", self.problem.clone()),
            ("q", self.q.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("theta", self.theta.map(|v| v.to_string())),
            ("max-dofs", self.max_dofs.map(|v| v.to_string())),
            ("test-mesh", self.test_mesh.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() { format!("{v:.4e}") } else { "-".into() }
}

fn execute(cli: Cli) -> mildls::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            println!("{:>5} {:>9} {:>12} {:>12} {:>8} {:>8} {:>8}", "level", "trial", "E", "error", "eff", "gD", "gN");
            let summary = run(&cfg, |r| {
                println!(
                    "{:>5} {:>9} {:>12} {:>12} {:>8} {:>8} {:>8}",
                    r.level,
                    r.trial_dofs,
                    fmt_opt(r.e_global),
                    fmt_opt(r.true_error),
                    if r.effectivity.is_finite() { format!("{:.3}", r.effectivity) } else { "-".into() },
                    if r.gamma_hat_d.is_finite() { format!("{:.3}", r.gamma_hat_d) } else { "-".into() },
                    if r.gamma_hat_n.is_finite() { format!("{:.3}", r.gamma_hat_n) } else { "-".into() },
                );
            })?;
            if let Some(r) = summary.rate_estimator {
                println!("estimator rate (last half): {r:.4}");
            }
            if let Some(r) = summary.rate_true_error {
                println!("true error rate (last half): {r:.4}");
            }
            println!("wrote {}", summary.csv.display());
            println!("wrote {}", summary.plot_script.display());
            println!("wrote {}", summary.rates.display());
            Ok(true)
        }
        Command::ProbeInfsup { study, levels } => {
            let cfg = study.config()?;
            println!("{:>5} {:>9} {:>10} {:>10}", "level", "trial", "gamma_D", "gamma_N");
            for r in probe_history(&cfg, levels)? {
                let n = r.gamma_hat_n.map_or("-".to_string(), |g| format!("{g:.6}"));
                println!("{:>5} {:>9} {:>10.6} {:>10}", r.level, r.trial_dofs, r.gamma_hat_d, n);
            }
            Ok(true)
        }
        Command::Verify { tol } => {
            let cases = manufactured_suite(tol)?;
            let mut ok = true;
            for c in &cases {
                ok &= c.passed;
                println!(
                    "{} q={} u={} A=diag({},{}) B={} test-mesh={} trial={:.2e} multiplier={:.2e} error={:.2e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.q,
                    c.solution,
                    c.diffusion[0],
                    c.diffusion[1],
                    c.reaction,
                    c.mode.name(),
                    c.trial_error,
                    c.multiplier,
                    c.true_error
                );
            }
            println!("{} of {} cases passed", cases.iter().filter(|c| c.passed).count(), cases.len());
            Ok(ok)
        }
        Command::Problems => {
            for p in registry() {
                println!("{:<16} {}", p.name, p.description);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

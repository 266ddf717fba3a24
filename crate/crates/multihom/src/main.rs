use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multihom::{benchmarks, commands, exit, showcase, Failure, Prepared};

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   a check failed (reproduce-paper-example, verify-flux)
  2   scale lists are not jointly well-separated
  3   a limit is indeterminate or the classification is inconsistent
  64  configuration error (bad file, unknown key, unparseable expression)
  70  numerical failure (Newton stall, resolution caps, i/o)

Environment:
  MULTIHOM_OUT       output directory, overrides the config's `output`
  MULTIHOM_P_TOL     slope tolerance for reproduce-paper-example
  MULTIHOM_SAMPLES   number of eps samples for reproduce-paper-example";

#[derive(Parser)]
#[command(name = "multihom", version, about = "Multiscale homogenization of monotone parabolic problems", after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML run configuration.
    #[arg(required_unless_present = "benchmark", conflicts_with = "benchmark")]
    config: Option<PathBuf>,
    /// Use a packaged benchmark instead of a config file.
    #[arg(long)]
    benchmark: Option<String>,
    /// Override one entry, as section.key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Source {
    fn load(&self) -> Result<Prepared, Failure> {
        match (&self.config, &self.benchmark) {
            (_, Some(name)) => benchmarks::get(name)
                .ok_or_else(|| {
                    Failure::Config(format!("unknown benchmark '{name}'; known: {}", benchmarks::names().join(", ")))
                })?
                .prepared(&self.overrides),
            (Some(path), None) => Prepared::load(path, &self.overrides),
            (None, None) => Err(Failure::Config("no configuration given".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Joint well-separation, d_i and rho_i of the configured scales.
    Classify(Source),
    /// Sample the structure conditions of the configured flux.
    VerifyFlux(Source),
    /// Solve the local problems at one macroscopic gradient.
    Cell {
        #[command(flatten)]
        source: Source,
        /// Gradient, comma separated (default: discretization.xi or e_1).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        xi: Option<Vec<f64>>,
    },
    /// Tabulate the effective flux on [-Xi, Xi]^N.
    FluxTable(Source),
    /// Solve the homogenized problem.
    Solve(Source),
    /// Compare direct simulations with the homogenized solution along dns.eps_list.
    DnsCompare(Source),
    /// Classify the built-in two-spatial, three-temporal scale example and check it.
    ReproducePaperExample,
    /// List the packaged benchmarks.
    Benchmarks,
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Numeric(e.to_string()))?;
    }
    match cli.command {
        Command::Classify(s) => commands::cmd_classify(&s.load()?, out),
        Command::VerifyFlux(s) => commands::cmd_verify_flux(&s.load()?, out),
        Command::Cell { source, xi } => commands::cmd_cell(&source.load()?, xi, out),
        Command::FluxTable(s) => commands::cmd_flux_table(&s.load()?, out),
        Command::Solve(s) => commands::cmd_solve(&s.load()?, out),
        Command::DnsCompare(s) => commands::cmd_dns_compare(&s.load()?, out),
        Command::ReproducePaperExample => {
            let checks = showcase::reproduce(&showcase::opts_from_env()?, out)?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(Failure::Assertion(format!("{failed} of {} checks failed", checks.len())));
            }
            Ok(())
        }
        Command::Benchmarks => {
            for b in benchmarks::ALL {
                writeln!(out, "{}", b.name)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

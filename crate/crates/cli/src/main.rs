use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use jorlin_cli::commands::{
    cmd_analyze, cmd_linearize, cmd_newton, cmd_verify, AnalyzeOpts, LinearizeOpts, Method,
    NewtonOpts, Suite, VerifyOpts,
};

/// Linearization of biholomorphism germs whose linear part is a Jordan
/// matrix: spectrum analyses, slice checks, exact homological solving, and
/// the quadratic iteration.
#[derive(Parser)]
#[command(name = "jorlin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Direct,
    Newton,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Slices,
    Homological,
    Newton,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum analyses: modulus classes, resonance scan, quasi-resonance
    /// table, Diophantine fits, operator constants, slice census.
    Analyze {
        mapfile: PathBuf,
        /// Scan degree (defaults to the file's truncation).
        #[arg(long)]
        degree: Option<u32>,
        /// Write the JSON report here (stdout summary otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Divisor-versus-degree CSV sidecar.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compute the linearizing transformation through the given degree.
    Linearize {
        mapfile: PathBuf,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long, value_enum, default_value = "direct")]
        method: MethodArg,
        /// Run both methods and require agreement; the emitted map is the
        /// direct-method result, making output files method-independent.
        #[arg(long)]
        crosscheck: bool,
        /// Write the transformation here (map-file coefficient format).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the mechanical verification suites.
    Verify {
        mapfile: PathBuf,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Residual-check a previously emitted transformation.
        #[arg(long)]
        phi: Option<PathBuf>,
        /// Test hook: deliberately corrupt a classifier label
        /// ("flip-classifier") to prove counterexample reporting works.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Run the quadratic iteration and emit its trace.
    Newton {
        mapfile: PathBuf,
        #[arg(long, default_value_t = 5)]
        iters: u32,
        #[arg(long)]
        degree: Option<u32>,
        /// Residual-curve CSV (nu, r_nu, residual_order,
        /// residual_norm_upper, residual_norm_lower, C_nu).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Attach grid lower bounds to the residual norms.
        #[arg(long)]
        certify: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze {
            mapfile,
            degree,
            out,
            csv,
        } => cmd_analyze(&mapfile, &AnalyzeOpts { degree, out, csv }),
        Command::Linearize {
            mapfile,
            degree,
            method,
            crosscheck,
            out,
            report,
        } => cmd_linearize(
            &mapfile,
            &LinearizeOpts {
                degree,
                method: match method {
                    MethodArg::Direct => Method::Direct,
                    MethodArg::Newton => Method::Newton,
                },
                crosscheck,
                out,
                report,
            },
        ),
        Command::Verify {
            mapfile,
            degree,
            suite,
            out,
            phi,
            inject_fault,
        } => cmd_verify(
            &mapfile,
            &VerifyOpts {
                degree,
                suite: match suite {
                    SuiteArg::Slices => Suite::Slices,
                    SuiteArg::Homological => Suite::Homological,
                    SuiteArg::Newton => Suite::Newton,
                    SuiteArg::All => Suite::All,
                },
                out,
                phi,
                inject_fault,
            },
        ),
        Command::Newton {
            mapfile,
            iters,
            degree,
            csv,
            out,
            certify,
        } => cmd_newton(
            &mapfile,
            &NewtonOpts {
                iters,
                degree,
                csv,
                out,
                certify,
            },
        ),
    };
    match result {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

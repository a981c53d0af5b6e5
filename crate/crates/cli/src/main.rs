//! `onebit`: command-line runner for the 1-bit mean estimation experiments.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 verification failure.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use onebit_core::harness::{
    self, derive_seed, hardness_checks, run_verify, stream_rng, VerifyOptions, VerifyReport,
    AGENT_STREAM, FIXTURE_STREAM, LEARNER_STREAM,
};
use onebit_core::variants::{two_stage_estimate, ScaleGrid};
use onebit_core::{Agent, Error, Estimator, Phase, Result, TargetSpec, Transcript};

use config::{CommonArgs, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "onebit",
    version,
    about = "Mean estimation from one bit per sample"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the mean of one fixture and print the report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Use non-adaptive Gray-code localization (two rounds of adaptivity).
        #[arg(long)]
        two_stage: bool,
        /// Write every query and bit as CSV.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Localization coverage over repeated trials.
    Localize {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Repeated estimation with per-trial success flags.
    Pac {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Predicted sample counts over a list of accuracies.
    Scaling {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated accuracies, at least two.
        #[arg(long, value_delimiter = ',')]
        eps_list: Option<Vec<f64>>,
    },
    /// Budget-oblivious estimation.
    Anytime {
        #[command(flatten)]
        common: CommonArgs,
        /// Sample budget; defaults to the predicted cost at `--eps`.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Estimation with the scale only known to lie in `[sigma-min, sigma-max]`.
    ScaleAdapt {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        sigma_min: Option<f64>,
        #[arg(long)]
        sigma_max: Option<f64>,
        /// Accuracy relative to the true scale.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Adaptive estimator against the non-adaptive interval baseline.
    Gap {
        #[command(flatten)]
        common: CommonArgs,
        /// Sets `lambda = lambda_over_sigma * sigma`.
        #[arg(long)]
        lambda_over_sigma: Option<f64>,
        /// Comma-separated baseline budgets; defaults to the adaptive cost.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<u64>>,
    },
    /// Lower-bound construction checks.
    Hardness {
        #[command(subcommand)]
        command: HardnessCommand,
    },
    /// Every analytic invariant.
    Verify {
        #[command(flatten)]
        verify: VerifyArgs,
    },
}

#[derive(Debug, Subcommand)]
enum HardnessCommand {
    /// Exact checks of the pair grid, the k = 2 pair and the KL bound.
    Verify {
        #[command(flatten)]
        verify: VerifyArgs,
    },
}

#[derive(Debug, clap::Args)]
struct VerifyArgs {
    /// Failure manifest path; stdout when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Test hook: add `BY` to null mass `q_I`, given as `I:BY`.
    #[arg(long, hide = true)]
    perturb_null_mass: Option<String>,
}

impl VerifyArgs {
    fn options(&self) -> Result<VerifyOptions> {
        let perturb = match &self.perturb_null_mass {
            None => None,
            Some(s) => {
                let parsed = s
                    .split_once(':')
                    .and_then(|(i, by)| Some((i.parse::<usize>().ok()?, by.parse::<f64>().ok()?)));
                Some(
                    parsed
                        .ok_or_else(|| Error::Config(format!("perturbation `{s}` is not I:BY")))?,
                )
            }
        };
        Ok(VerifyOptions {
            perturb_null_mass: perturb,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// CSV sink plus the stream summaries go to: stdout when CSV goes to a file, stderr otherwise.
fn sinks(out: Option<&Path>) -> Result<(Box<dyn Write>, Box<dyn Write>)> {
    match out {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            Ok((Box::new(BufWriter::new(file)), Box::new(io::stdout())))
        }
        None => Ok((Box::new(io::stdout()), Box::new(io::stderr()))),
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            common,
            two_stage,
            transcript,
        } => run(
            &Settings::resolve(&common)?,
            two_stage,
            transcript.as_deref(),
        ),
        Command::Localize { common } => {
            let s = Settings::resolve(&common)?;
            let rows = harness::run_localize(&s.experiment())?;
            let (csv, mut summary) = sinks(s.out.as_deref())?;
            harness::write_csv(csv, &rows)?;
            let covered = rows.iter().filter(|r| r.covered).count();
            writeln!(
                summary,
                "localizer={} trials={} coverage={:.4} samples={}",
                s.localizer.as_str(),
                rows.len(),
                covered as f64 / rows.len() as f64,
                rows[0].samples
            )?;
            Ok(0)
        }
        Command::Pac { common } => {
            let s = Settings::resolve(&common)?;
            let summary_data = harness::run_pac(&s.experiment())?;
            let (csv, mut summary) = sinks(s.out.as_deref())?;
            harness::write_csv(csv, &summary_data.rows)?;
            writeln!(
                summary,
                "fixture={} trials={} successes={} rate={:.4} lower95={:.4} target={:.4}",
                s.fixture,
                summary_data.rows.len(),
                summary_data.successes,
                summary_data.rate,
                summary_data.lower_bound,
                1.0 - s.delta
            )?;
            Ok(0)
        }
        Command::Scaling { common, eps_list } => {
            let s = Settings::resolve(&common)?;
            let sigma = s.params.sigma();
            let list = eps_list
                .or(s.file.eps_list.clone())
                .unwrap_or_else(|| (3..=7).map(|j| sigma / 2f64.powi(j)).collect());
            let rows = harness::run_scaling(&s.params, &list, s.delta, s.profile)?;
            let (csv, _) = sinks(s.out.as_deref())?;
            harness::write_csv(csv, &rows)?;
            Ok(0)
        }
        Command::Anytime { common, budget } => {
            let s = Settings::resolve(&common)?;
            let budget = match budget.or(s.file.budget) {
                Some(b) => b,
                None => {
                    Estimator::new(s.params, TargetSpec::new(s.eps, s.delta)?)
                        .with_profile(s.profile)
                        .predict_cost()?
                        .total
                }
            };
            let rows = harness::run_anytime(&s.experiment(), budget)?;
            let (csv, mut summary) = sinks(s.out.as_deref())?;
            harness::write_csv(csv, &rows)?;
            writeln!(
                summary,
                "budget={budget} rounds={} eps_final={} cumulative={}",
                rows[0].rounds, rows[0].eps_final, rows[0].cumulative_cost
            )?;
            Ok(0)
        }
        Command::ScaleAdapt {
            common,
            sigma_min,
            sigma_max,
            ratio,
        } => {
            let s = Settings::resolve(&common)?;
            let sigma_max = sigma_max.or(s.file.sigma_max).unwrap_or(s.params.sigma());
            let sigma_min = sigma_min.or(s.file.sigma_min).unwrap_or(sigma_max / 16.0);
            let ratio = ratio.or(s.file.ratio).unwrap_or(0.25);
            let grid = ScaleGrid::new(sigma_min, sigma_max, ratio, s.delta)
                .map_err(|e| Error::Config(e.to_string()))?;
            let rows = harness::run_scale_adapt(&s.experiment(), &grid)?;
            let (csv, mut summary) = sinks(s.out.as_deref())?;
            harness::write_csv(csv, &rows)?;
            let halted = rows.iter().filter(|r| r.halted_at.is_some()).count();
            writeln!(
                summary,
                "grid_rounds={} trials={} halted={halted}",
                grid.last + 1,
                rows.len()
            )?;
            Ok(0)
        }
        Command::Gap {
            mut common,
            lambda_over_sigma,
            budgets,
        } => {
            let file_ratio = match &common.config {
                Some(path) => config::FileConfig::load(path)?.lambda_over_sigma,
                None => None,
            };
            if let Some(r) = lambda_over_sigma.or(file_ratio) {
                let sigma = Settings::resolve(&common)?.params.sigma();
                common.lambda = Some(r * sigma);
            }
            let s = Settings::resolve(&common)?;
            let budgets = budgets.or(s.file.budgets.clone()).unwrap_or_default();
            let rows = harness::run_gap(&s.experiment(), &budgets)?;
            let (csv, _) = sinks(s.out.as_deref())?;
            harness::write_csv(csv, &rows)?;
            Ok(0)
        }
        Command::Hardness {
            command: HardnessCommand::Verify { verify },
        } => {
            let report = VerifyReport {
                checks: hardness_checks(&verify.options()?)?,
            };
            finish_verify(&report, verify.manifest.as_deref())
        }
        Command::Verify { verify } => {
            let report = run_verify(&verify.options()?)?;
            finish_verify(&report, verify.manifest.as_deref())
        }
    }
}

fn finish_verify(report: &VerifyReport, manifest: Option<&Path>) -> Result<u8> {
    let failed = report.failures().count();
    if failed > 0 {
        match manifest {
            Some(path) => report.write_manifest(File::create(path)?)?,
            None => report.write_manifest(io::stdout())?,
        }
    }
    eprintln!("{} checks, {failed} failed", report.checks.len());
    Ok(report.exit_code() as u8)
}

fn run(s: &Settings, two_stage: bool, transcript_path: Option<&Path>) -> Result<u8> {
    let exp = "run";
    let mut fixture_rng = stream_rng(s.seed, exp, 0, FIXTURE_STREAM);
    let dist = s.fixture.instantiate(&s.params, &mut fixture_rng)?;
    let mut agent =
        Agent::from_seed(&dist, derive_seed(s.seed, exp, 0, AGENT_STREAM)).with_mode(s.sampling);
    let mut learner = stream_rng(s.seed, exp, 0, LEARNER_STREAM);
    let mut tr = if transcript_path.is_some() {
        Transcript::recording()
    } else {
        Transcript::counting()
    };
    let target = TargetSpec::new(s.eps, s.delta)?;
    let report = if two_stage {
        two_stage_estimate(
            &mut agent,
            &s.params,
            &target,
            s.profile,
            &mut learner,
            &mut tr,
        )?
    } else {
        Estimator::new(s.params, target)
            .with_profile(s.profile)
            .with_localizer(s.localizer)
            .run(&mut agent, &mut learner, &mut tr)?
    };

    let mu = dist.mean();
    let loc = &report.localization;
    let mut out = io::stdout().lock();
    writeln!(out, "fixture: {}", s.fixture)?;
    writeln!(out, "mu_hat: {}", report.mu_hat)?;
    writeln!(out, "mu_true: {mu}")?;
    writeln!(
        out,
        "abs_err: {} (eps {})",
        (report.mu_hat - mu).abs(),
        s.eps
    )?;
    writeln!(
        out,
        "interval: [{}, {}] center {}",
        loc.low, loc.high, loc.center
    )?;
    writeln!(
        out,
        "samples: localization={} refinement={} total={}",
        tr.count(Phase::Localization),
        tr.count(Phase::Refinement),
        tr.total()
    )?;
    writeln!(out, "rounds_of_adaptivity: {}", report.rounds_of_adaptivity)?;
    match &report.plan {
        Some(plan) => writeln!(out, "plan: {plan}")?,
        None => writeln!(out, "plan: none (eps at least the localization radius)")?,
    }
    if let Some(path) = transcript_path {
        let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        tr.write_csv(BufWriter::new(file))?;
    }
    Ok(0)
}

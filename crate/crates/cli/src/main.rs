use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use voxtr::commands::bench::{render_table, run as run_bench, BenchCmdOptions};
use voxtr::commands::distill::{run as run_distill, DistillCmdOptions};
use voxtr::commands::gradcheck::{run as run_gradcheck, GradcheckOptions};
use voxtr::commands::verify::{run as run_verify, VerifyOptions};
use voxtr::report::{parallelism_from_env, CheckResult};
use voxtr_core::attention::Fault;
use voxtr_core::distill::NormMode;
use voxtr_core::encoder::{AttentionVariant, PresetScale};

#[derive(Parser)]
#[command(
    name = "voxtr",
    version,
    about = "Verify, benchmark, and distill sparse flash attention 3D ViT encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream in the run; recorded in the manifest.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Preset dimensions: "toy" (32^3 volumes) or "paper-shape" (128^3).
    #[arg(long, default_value = "toy")]
    scale: String,
    /// Directory for all output artifacts.
    #[arg(long, default_value = "voxtr-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FaultArg {
    /// Healthy build.
    None,
    /// Flip one sign in the flash accumulation (the suites must then fail).
    FlashSign,
}

#[derive(Subcommand)]
enum Command {
    /// Run oracle-equivalence, partition, dense-limit, and round-trip suites.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Random (N, w, r) triples for the partition property.
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Deliberate defect injection, to prove the checks can fail.
        #[arg(long, value_enum, default_value_t = FaultArg::None)]
        inject_fault: FaultArg,
    },
    /// Finite-difference gradient checks for every differentiable operation.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Pass/fail bar on the relative gradient error.
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
    },
    /// Benchmark attention variants: FLOPs, scratch bytes, wall time.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated token counts to sweep.
        #[arg(long, default_value = "256,1024")]
        sweep: String,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        h: usize,
        /// Segment size; defaults to N/8 at each sweep point.
        #[arg(long)]
        w: Option<usize>,
        /// Dilation interval between sampled tokens.
        #[arg(long, default_value_t = 2)]
        r: usize,
        /// Flash tile shape, e.g. 16x16.
        #[arg(long, default_value = "16x16")]
        tiles: String,
        /// Variants to benchmark (naive, flash, sparse_flash).
        #[arg(long, value_delimiter = ',', default_values_t = [
            "naive".to_string(), "flash".to_string(), "sparse_flash".to_string()
        ])]
        variant: Vec<String>,
        /// Recorded repetitions per timing (>= 11).
        #[arg(long, default_value_t = 11)]
        reps: usize,
        /// Unrecorded warm-up runs per timing (>= 3).
        #[arg(long, default_value_t = 3)]
        warmups: usize,
    },
    /// Distill the 12-layer teacher into the 6-layer student.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Layer-wise phase iterations.
        #[arg(long, default_value_t = 36)]
        iterations: usize,
        /// Logit phase iterations.
        #[arg(long, default_value_t = 12)]
        logit_iterations: usize,
        /// Volumes per iteration.
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Adam learning rate.
        #[arg(long, default_value_t = 5e-3)]
        lr: f32,
        /// Student segment size override.
        #[arg(long)]
        w: Option<usize>,
        /// Student dilation interval override.
        #[arg(long)]
        r: Option<usize>,
        /// Student flash tile shape override, e.g. 8x8.
        #[arg(long)]
        tiles: Option<String>,
        /// Student attention variant override.
        #[arg(long)]
        variant: Option<String>,
        /// Layer-difference norm: plain_l2 or rms.
        #[arg(long, default_value = "plain_l2")]
        norm_mode: String,
    },
}

/// Marker for errors that should exit with the usage code.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: String) -> anyhow::Error {
    anyhow!(UsageError(msg))
}

fn parse_tiles(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split('x').collect();
    let parse = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| usage(format!("bad tile extent {s:?} in {spec:?}")))
    };
    match parts.as_slice() {
        [rows, cols] => Ok((parse(rows)?, parse(cols)?)),
        _ => Err(usage(format!("tiles must look like 16x16, got {spec:?}"))),
    }
}

fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| usage(format!("bad sweep entry {s:?}")))
        })
        .collect()
}

fn parse_scale(label: &str) -> Result<PresetScale> {
    PresetScale::parse(label).map_err(|e| usage(e.to_string()))
}

fn parse_variant(label: &str) -> Result<AttentionVariant> {
    AttentionVariant::parse(label).map_err(|e| usage(e.to_string()))
}

fn print_checks(results: &[CheckResult]) {
    for r in results {
        let tag = if r.passed() { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", r.check, r.detail);
    }
}

fn run(cli: Cli) -> Result<bool> {
    let parallelism = parallelism_from_env().map_err(|e| usage(e.to_string()))?;
    if parallelism > 1 {
        eprintln!(
            "note: VOXTR_PARALLELISM={parallelism} requested; this build executes \
             single-context, so the degree is recorded but clamped to 1"
        );
    }

    match cli.command {
        Command::Verify {
            common,
            trials,
            inject_fault,
        } => {
            parse_scale(&common.scale)?;
            let fault = match inject_fault {
                FaultArg::None => Fault::None,
                FaultArg::FlashSign => Fault::NegatePvAccumulation,
            };
            let (results, all_pass) = run_verify(&VerifyOptions {
                seed: common.seed,
                out_dir: common.out.clone(),
                trials,
                fault,
                scale: common.scale,
                parallelism,
            })?;
            print_checks(&results);
            println!(
                "verify: {} ({} checks, report in {})",
                if all_pass {
                    "all checks passed"
                } else {
                    "FAILURES"
                },
                results.len(),
                common.out.join("verify_report.json").display()
            );
            Ok(all_pass)
        }
        Command::Gradcheck { common, threshold } => {
            parse_scale(&common.scale)?;
            let (results, all_pass) = run_gradcheck(&GradcheckOptions {
                seed: common.seed,
                threshold,
                out_dir: common.out.clone(),
                scale: common.scale,
                parallelism,
            })?;
            print_checks(&results);
            println!(
                "gradcheck: {} ({} ops, report in {})",
                if all_pass {
                    "all ops passed"
                } else {
                    "FAILURES"
                },
                results.len(),
                common.out.join("gradcheck_report.json").display()
            );
            Ok(all_pass)
        }
        Command::Bench {
            common,
            sweep,
            d,
            h,
            w,
            r,
            tiles,
            variant,
            reps,
            warmups,
        } => {
            parse_scale(&common.scale)?;
            let variants = variant
                .iter()
                .map(|v| parse_variant(v))
                .collect::<Result<Vec<_>>>()?;
            let reports = run_bench(&BenchCmdOptions {
                seed: common.seed,
                out_dir: common.out.clone(),
                scale: common.scale,
                sweep: parse_sweep(&sweep)?,
                d,
                h,
                w,
                r,
                tiles: parse_tiles(&tiles)?,
                variants,
                repetitions: reps,
                warmups,
                parallelism,
            })?;
            print!("{}", render_table(&reports));
            println!(
                "bench: {} reports written to {} (.csv/.jsonl)",
                reports.len(),
                common.out.join("reports").display()
            );
            Ok(true)
        }
        Command::Distill {
            common,
            iterations,
            logit_iterations,
            batch,
            lr,
            w,
            r,
            tiles,
            variant,
            norm_mode,
        } => {
            let scale = parse_scale(&common.scale)?;
            let summary = run_distill(&DistillCmdOptions {
                seed: common.seed,
                out_dir: common.out.clone(),
                scale,
                iterations,
                logit_iterations,
                batch,
                learning_rate: lr,
                w,
                r,
                tiles: tiles.as_deref().map(parse_tiles).transpose()?,
                student_variant: variant.as_deref().map(parse_variant).transpose()?,
                norm_mode: NormMode::parse(&norm_mode).map_err(|e| usage(e.to_string()))?,
                parallelism,
            })?;
            let records = &summary.history.records;
            let first = records.first().expect("at least one iteration");
            let last_layerwise = summary
                .history
                .layerwise_records()
                .last()
                .expect("layer-wise phase ran");
            println!(
                "distill: {} iterations in {:.1}s; layer-wise loss {:.4} -> {:.4} \
                 (ratio {:.3}), final k = {}",
                records.len(),
                summary.wall_seconds,
                first.loss,
                last_layerwise.loss,
                last_layerwise.loss / first.loss,
                last_layerwise.k
            );
            if let Some(last) = records.last() {
                if last.phase.label() == "logit" {
                    println!("logit phase final loss {:.4}", last.loss);
                }
            }
            println!(
                "teacher fingerprint {:016x} (unchanged), student fingerprint {:016x}",
                summary.teacher_fingerprint, summary.student_fingerprint
            );
            println!("artifacts in {}", common.out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

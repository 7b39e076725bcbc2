use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use merov::dataset::{dataset_stats, load_manifest, validate_sample};
use merov::report::{
    diff_reports, parse_report_jsonl, write_report, DeltaStatus, ReportError, ReportFormat, ReportLayout,
};
use merov::runner::{check_config, ExecuteOptions, ExperimentConfig, RunSummary, Runner, RunnerError};

/// Exit status for configuration errors.
const CONFIG_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "merov", version, about = "Run and score open-vocabulary emotion recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a config into its matrix, run it and score it.
    Run {
        config: PathBuf,
        /// Stop after this many units; `resume` picks up the rest.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Skip scoring after the run.
        #[arg(long)]
        no_eval: bool,
    },
    /// Continue an interrupted run from its directory.
    Resume {
        run_dir: PathBuf,
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long)]
        no_eval: bool,
    },
    /// Score the completed predictions of a run.
    Eval { run_dir: PathBuf },
    /// Render a results table into <run_dir>/reports/.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_enum)]
        layout: LayoutArg,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
    },
    /// Check a config, its data and its scripts without running anything.
    Validate { config: PathBuf },
    /// Summarize a dataset manifest.
    Stats { manifest: PathBuf },
    /// Per-cell differences between two json-lines reports.
    Diff { a: PathBuf, b: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Modality,
    Prompts,
    Models,
    Sampling,
    Context,
    Raw,
}

impl From<LayoutArg> for ReportLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Modality => ReportLayout::Modality,
            LayoutArg::Prompts => ReportLayout::Prompts,
            LayoutArg::Models => ReportLayout::Models,
            LayoutArg::Sampling => ReportLayout::Sampling,
            LayoutArg::Context => ReportLayout::Context,
            LayoutArg::Raw => ReportLayout::Raw,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Jsonl,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(CONFIG_FAILURE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<RunnerError>()
            .is_some_and(|r| matches!(r.code(), "CONFIG_ERROR" | "EMPTY_MATRIX" | "DATASET_ERROR"))
    })
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            stop_after,
            no_eval,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::prepare(cfg)?;
            run(&runner, stop_after, no_eval)
        }
        Command::Resume {
            run_dir,
            stop_after,
            no_eval,
        } => {
            let runner = Runner::resume(&run_dir)?;
            run(&runner, stop_after, no_eval)
        }
        Command::Eval { run_dir } => {
            let runner = Runner::resume(&run_dir)?;
            evaluate(&runner)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run_dir, layout, format } => {
            let formats: &[ReportFormat] = match format {
                FormatArg::Markdown => &[ReportFormat::Markdown],
                FormatArg::Csv => &[ReportFormat::Csv],
                FormatArg::Jsonl => &[ReportFormat::JsonLines],
                FormatArg::All => &[ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::JsonLines],
            };
            for f in formats {
                let (path, text) = write_report(&run_dir, layout.into(), *f)?;
                if formats.len() == 1 {
                    print!("{text}");
                }
                eprintln!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let check = check_config(&config);
            for w in &check.warnings {
                println!("warning: {w}");
            }
            for e in &check.errors {
                println!("error: {e}");
            }
            println!(
                "{} samples, {} cells, {} specs; {} errors, {} warnings",
                check.samples,
                check.cells,
                check.specs,
                check.errors.len(),
                check.warnings.len()
            );
            Ok(if check.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CONFIG_FAILURE)
            })
        }
        Command::Stats { manifest } => stats(&manifest),
        Command::Diff { a, b } => diff(&a, &b),
    }
}

fn run(runner: &Runner, stop_after: Option<usize>, no_eval: bool) -> Result<ExitCode> {
    eprintln!(
        "{} samples x {} specs ({} cells, {} pruned) in {}",
        runner.samples.len(),
        runner.matrix.specs.len(),
        runner.matrix.cells(),
        runner.matrix.pruned.len(),
        runner.run_dir().display()
    );
    let summary = runner.execute(&ExecuteOptions { stop_after })?;
    print_summary(&summary);
    if !no_eval && !summary.stopped_early {
        evaluate(runner)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(s: &RunSummary) {
    println!(
        "units: {} total, {} already done, {} completed, {} failed, {} invalid; {} backend calls{}",
        s.total_units,
        s.already_complete,
        s.completed,
        s.failed,
        s.invalid,
        s.backend_calls,
        if s.stopped_early { " (stopped early)" } else { "" }
    );
}

fn evaluate(runner: &Runner) -> Result<()> {
    let results = runner.evaluate()?;
    for r in &results {
        let label: Vec<String> = r
            .axes
            .iter()
            .filter(|(_, v)| v.as_str() != merov::runner::UNUSED)
            .map(|(a, v)| format!("{a}={v}"))
            .collect();
        match &r.metrics {
            Some(m) => println!(
                "P={:.1} R={:.1} F={:.1}  n={}x{}  {}",
                m.mean_precision_s * 100.0,
                m.mean_recall_s * 100.0,
                m.mean_f_s * 100.0,
                m.n_samples,
                m.n_repeats,
                label.join(" ")
            ),
            None => println!("no valid predictions  {}", label.join(" ")),
        }
    }
    Ok(())
}

fn stats(manifest: &Path) -> Result<ExitCode> {
    let samples = load_manifest(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let st = dataset_stats(&samples)?;
    println!("samples:               {}", st.sample_count);
    println!("unique labels:         {}", st.unique_label_count);
    println!("labels per sample:     {:.2}", st.mean_labels_per_sample);
    println!(
        "duration (s):          min {:.2}, mean {:.2}, max {:.2}",
        st.duration_min_s, st.duration_mean_s, st.duration_max_s
    );
    println!("samples without audio: {}", st.audio_missing_count);
    let issues: Vec<_> = samples.iter().flat_map(validate_sample).collect();
    for i in &issues {
        println!("issue: {} {} {}", i.sample_id, i.code, i.detail);
    }
    Ok(ExitCode::SUCCESS)
}

fn diff(a: &Path, b: &Path) -> Result<ExitCode> {
    let read = |p: &Path| -> Result<_> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(parse_report_jsonl(&text)?)
    };
    let deltas = diff_reports(&read(a)?, &read(b)?).map_err(|e: ReportError| anyhow::anyhow!(e))?;
    for d in deltas {
        let key: Vec<String> = d.key.iter().map(|(a, v)| format!("{a}={v}")).collect();
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:+.1}"));
        match d.status {
            DeltaStatus::Both => println!(
                "dP={} dR={} dF={}  {}",
                fmt(d.precision_pp),
                fmt(d.recall_pp),
                fmt(d.f_pp),
                key.join(" ")
            ),
            DeltaStatus::OnlyInA => println!("only in A  {}", key.join(" ")),
            DeltaStatus::OnlyInB => println!("only in B  {}", key.join(" ")),
        }
    }
    Ok(ExitCode::SUCCESS)
}

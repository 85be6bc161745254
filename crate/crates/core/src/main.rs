use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oms_bench::error::{Error, Result};
use oms_bench::eval::EvalSetting;
use oms_bench::pipeline::{self, BenchmarkConfig};
use oms_bench::report;
use oms_bench::synth::{self, SynthConfig};
use oms_bench::tensor_io::write_container;

#[derive(Parser)]
#[command(
    name = "oms-bench",
    version,
    about = "Fit and compare runtime monitors on classifier tensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario bundle.
    SynthGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode and validate a bundle.
    Validate { bundle: PathBuf },
    /// Fit and evaluate every monitor on every scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// OtB with and without misclassified training samples.
    TrickStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild comparison matrices from a reports.csv.
    Compare {
        #[arg(long)]
        reports: PathBuf,
        /// Write comparison_*.csv/.md here as well as printing them.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_benchmark(path: &Path, seed: Option<u64>) -> Result<(BenchmarkConfig, PathBuf)> {
    let mut config = BenchmarkConfig::from_json(&read_text(path)?)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn output_dir(config: &BenchmarkConfig, base: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        if config.output_dir.is_absolute() {
            config.output_dir.clone()
        } else {
            base.join(&config.output_dir)
        }
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::SynthGen { config, out, seed } => {
            let mut cfg: SynthConfig =
                serde_json::from_str(&read_text(&config)?).map_err(|e| Error::Config(format!("synth config: {e}")))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let bundle = synth::generate(&cfg)?;
            let container = bundle.to_container()?;
            let mut bytes = Vec::new();
            write_container(&container, &mut bytes)?;
            fs::write(&out, &bytes)?;
            println!("wrote {} ({} bytes)", out.display(), bytes.len());
        }
        Command::Validate { bundle } => {
            let b = pipeline::read_bundle_file(&bundle)?;
            println!(
                "ok: {} ({}), {} classes, dim {}, train {}, test_id {}, ood {}",
                b.name,
                b.ood_kind,
                b.num_classes(),
                b.dim(),
                b.train.len(),
                b.test_id.len(),
                b.ood.len()
            );
        }
        Command::Run { config, seed, out } => {
            let (cfg, base) = load_benchmark(&config, seed)?;
            let run = pipeline::run(&cfg, &base)?;
            let files = run.outputs()?;
            let dir = output_dir(&cfg, &base, out);
            pipeline::write_outputs(&dir, &files)?;
            println!(
                "{} report rows, {} files written to {}",
                run.reports.len(),
                files.len(),
                dir.display()
            );
        }
        Command::TrickStudy { config, seed, out } => {
            let (cfg, base) = load_benchmark(&config, seed)?;
            let study = pipeline::trick_study(&cfg, &base)?;
            let dir = output_dir(&cfg, &base, out);
            pipeline::write_outputs(&dir, &study.outputs())?;
            print!("{}", study.to_markdown());
        }
        Command::Compare { reports, out } => {
            let file = fs::File::open(&reports)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", reports.display())))?;
            let rows = report::read_csv(file)?;
            let settings: Vec<EvalSetting> = {
                let mut s: Vec<EvalSetting> = rows.iter().map(|r| r.setting).collect();
                s.sort();
                s.dedup();
                s
            };
            let matrices = pipeline::comparisons(&rows, &settings)?;
            let mut files = Vec::new();
            for m in &matrices {
                println!("{}", m.to_markdown());
                let stem = format!("comparison_{}_{}", m.setting, m.metric.as_str());
                files.push((format!("{stem}.csv"), m.to_csv()));
                files.push((format!("{stem}.md"), m.to_markdown()));
            }
            if let Some(dir) = out {
                pipeline::write_outputs(&dir, &files)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oms-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

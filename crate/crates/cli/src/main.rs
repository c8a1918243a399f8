use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modwt_core::demo::{self, DemoConfig};
use modwt_core::pipeline::{run_pipeline, RunConfig, StepError};
use modwt_core::Error;

#[derive(Parser)]
#[command(name = "modwt", version, about = "Propensity-weighted moderation analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and $MODWT_OUT.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Maximum worker threads. Results do not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the built-in synthetic dataset and analyse it.
    Demo {
        /// Rows to simulate.
        #[arg(long, default_value_t = DemoConfig::default().n)]
        n: usize,
        /// Skip the sensitivity grid.
        #[arg(long)]
        no_sensitivity: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Parse and check a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(step: &str, e: &Error) -> ExitCode {
    eprintln!("error: step `{step}` failed: {e}");
    ExitCode::from(match e.kind() {
        modwt_core::ErrorKind::Input => 1,
        modwt_core::ErrorKind::Statistical => 2,
        modwt_core::ErrorKind::Gate => 3,
    })
}

fn set_threads(n: Option<u16>) {
    if let Some(n) = n {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global();
    }
}

fn execute(mut cfg: RunConfig, bytes: &[u8], common: &Common) -> ExitCode {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    set_threads(common.threads);
    match run_pipeline(&cfg, bytes) {
        Ok(bundle) => {
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            for m in &bundle.outcome.mate {
                println!(
                    "risk difference {}: {:.3} (95% CI {:.3}, {:.3})",
                    m.stratum, m.risk_difference, m.ci_lo, m.ci_hi
                );
            }
            let mt = &bundle.outcome.moderation;
            println!("moderation {}: {:.3} (SE {:.3}), p = {:.4}", mt.term, mt.estimate, mt.se, mt.p_value);
            println!("outputs written to {}", bundle.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn report(e: &StepError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(config: &Path, common: &Common) -> ExitCode {
    match RunConfig::load(config) {
        Ok((cfg, bytes)) => execute(cfg, &bytes, common),
        Err(e) => fail("config", &e),
    }
}

fn run_demo(n: usize, no_sensitivity: bool, common: &Common) -> ExitCode {
    let out = match &common.out_dir {
        Some(d) => d.clone(),
        None => match std::env::var_os(modwt_core::pipeline::OUT_DIR_ENV) {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("modwt-demo"),
        },
    };
    let dcfg = DemoConfig {
        n,
        seed: common.seed.unwrap_or(DemoConfig::default().seed),
        ..DemoConfig::default()
    };
    let prepared = (|| -> modwt_core::Result<(RunConfig, Vec<u8>)> {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let ds = demo::simulate(&dcfg)?;
        let data = out.join("demo_data.csv");
        let file = fs::File::create(&data).map_err(|e| Error::io(&data, e))?;
        demo::write_csv(&ds, std::io::BufWriter::new(file))?;
        let mut value = serde_json::json!({
            "input": "demo_data.csv",
            "schema": demo::demo_schema(),
            "seed": dcfg.seed,
        });
        if no_sensitivity {
            value["sensitivity"] = serde_json::Value::Null;
        }
        let path = out.join("demo_config.json");
        let text = serde_json::to_string_pretty(&value)?;
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        let (mut cfg, bytes) = RunConfig::load(&path)?;
        cfg.out_dir = Some(out.clone());
        Ok((cfg, bytes))
    })();
    match prepared {
        Ok((cfg, bytes)) => {
            let common = Common {
                seed: None,
                out_dir: None,
                threads: common.threads,
            };
            execute(cfg, &bytes, &common)
        }
        Err(e) => fail("demo", &e),
    }
}

fn validate(config: &Path) -> ExitCode {
    match RunConfig::load(config).and_then(|(cfg, _)| cfg.validate().map(|_| cfg)) {
        Ok(cfg) => {
            println!(
                "config ok: {} covariates, seed {}, sensitivity {}",
                cfg.schema.covariates.len(),
                cfg.seed,
                if cfg.sensitivity.is_some() { "on" } else { "off" }
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail("config", &e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => run(&config, &common),
        Command::Demo { n, no_sensitivity, common } => run_demo(n, no_sensitivity, &common),
        Command::ValidateConfig { config } => validate(&config),
    }
}

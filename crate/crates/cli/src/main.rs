//! `coseg`: runs the cosegmentation pipeline, or any single stage of it, from
//! a `key = value` config file. Every config key is also a flag
//! (`--train.lr 0.01`); flags override `COSEG_SEED`, which overrides the file.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use coseg_core::pipeline::{
    run_pipeline, run_stage, PipelineConfig, PipelineError, Stage, CONFIG_KEYS,
};
use coseg_core::synthetic::SceneSet;
use log::info;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 1;

fn cli() -> Command {
    let mut cmd = Command::new("coseg")
        .about("Siamese-embedding cosegmentation: ingest, train, embed, index, retrieve, evaluate, collage")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("config file of `key = value` lines"),
        )
        .arg(
            Arg::new("verbose")
                .long("verbose")
                .short('v')
                .global(true)
                .action(ArgAction::Count)
                .help("more log output (repeat for debug)"),
        )
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("only warnings and errors"),
        );
    for k in CONFIG_KEYS {
        let help = if k.default.is_empty() {
            k.help.to_string()
        } else {
            format!("{} [default: {}]", k.help, k.default)
        };
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .global(true)
                .value_name("VALUE")
                .allow_negative_numbers(true)
                .help(help)
                .help_heading("Config keys"),
        );
    }
    for stage in Stage::ALL {
        cmd = cmd.subcommand(Command::new(stage.name()).about(stage_about(stage)));
    }
    cmd.subcommand(Command::new("pipeline").about("run every stage in order"))
        .subcommand(Command::new("config").about("print the effective configuration"))
        .subcommand(
            Command::new("synth")
                .about(
                    "write a small synthetic dataset (images, masks, proposals, manifest, config)",
                )
                .arg(
                    Arg::new("dir")
                        .required(true)
                        .value_parser(value_parser!(PathBuf))
                        .help("output directory"),
                )
                .arg(
                    Arg::new("classes")
                        .long("classes")
                        .default_value("4")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("images-per-class")
                        .long("images-per-class")
                        .default_value("8")
                        .value_parser(value_parser!(usize)),
                ),
        )
}

fn stage_about(stage: Stage) -> &'static str {
    match stage {
        Stage::Ingest => "clean proposals and extract patch descriptors",
        Stage::Train => "train the Siamese encoder on training descriptors",
        Stage::Embed => "embed test descriptors with the trained encoder",
        Stage::Index => "build the random-projection forest over test embeddings",
        Stage::Retrieve => "write nearest-neighbour similarity groups",
        Stage::Evaluate => "score segmentations against ground truth",
        Stage::Collage => "compose one distance-ranked collage per class",
    }
}

fn load_config(m: &ArgMatches) -> Result<PipelineConfig, coseg_core::pipeline::ConfigError> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => PipelineConfig::read(path)?,
        None => PipelineConfig::new(),
    };
    cfg.apply_env()?;
    for k in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            cfg.set(k.name, v)?;
        }
    }
    Ok(cfg)
}

fn init_logging(m: &ArgMatches) {
    let level = if m.get_flag("quiet") {
        "warn"
    } else {
        match m.get_count("verbose") {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn synth(m: &ArgMatches) -> Result<()> {
    let dir = m.get_one::<PathBuf>("dir").expect("required");
    let set = SceneSet {
        classes: *m.get_one::<usize>("classes").expect("defaulted"),
        images_per_class: *m.get_one::<usize>("images-per-class").expect("defaulted"),
        ..SceneSet::default()
    };
    anyhow::ensure!(
        set.images_per_class > set.test_per_class,
        "need more than {} images per class",
        set.test_per_class
    );
    let files = set
        .write_to(dir)
        .with_context(|| format!("writing synthetic data to {}", dir.display()))?;
    println!("{}", files.config.display());
    Ok(())
}

fn report_stage_error(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        PipelineError::Config(_) => ExitCode::from(EXIT_CONFIG),
        PipelineError::Stage { .. } => ExitCode::from(EXIT_STAGE),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    init_logging(&matches);
    let (name, sub) = matches.subcommand().expect("subcommand required");
    if name == "synth" {
        return match synth(sub) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_STAGE)
            }
        };
    }
    let cfg = match load_config(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if name == "config" {
        print!("{}", cfg.render());
        return ExitCode::SUCCESS;
    }
    let settings = match cfg.settings() {
        Ok(s) => s,
        Err(e) => return report_stage_error(&PipelineError::Config(e)),
    };
    if name == "pipeline" {
        let start = Instant::now();
        return match run_pipeline(&settings) {
            Ok(timings) => {
                for t in &timings {
                    eprintln!("{:>9}  {:>9.3} s", t.stage.name(), t.wall.as_secs_f64());
                }
                eprintln!("{:>9}  {:>9.3} s", "total", start.elapsed().as_secs_f64());
                info!("artifacts in {}", settings.out_dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => report_stage_error(&e),
        };
    }
    let stage: Stage = name.parse().expect("subcommands mirror stage names");
    let start = Instant::now();
    match run_stage(stage, &settings) {
        Ok(()) => {
            eprintln!(
                "{:>9}  {:>9.3} s",
                stage.name(),
                start.elapsed().as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Err(e) => report_stage_error(&e),
    }
}

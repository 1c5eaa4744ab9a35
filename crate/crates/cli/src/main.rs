use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kiras_core::error::KirasError;
use kiras_core::sim::{generate_terrain, TerrainType};
use kiras_core::trainer::eval::parse_script;
use kiras_core::trainer::{Trainer, TrainConfig};

/// Seed used for exported terrain so the files are reproducible.
const EXPORT_SEED: u64 = 0;
const THREADS_VAR: &str = "KIRAS_THREADS";

#[derive(Parser)]
#[command(name = "kiras", version, about = "Keyframe-guided multi-skill locomotion training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a config file, optionally resuming a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate one skill with deterministic actions; prints a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        skill: String,
        #[arg(long, default_value = "flat")]
        terrain: TerrainType,
        #[arg(long, default_value_t = 0)]
        level: u8,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Run a scripted sequence of skill and command switches and write a per-step CSV.
    Replay {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extend a trained policy with one new skill and continue training.
    AddSkill {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        keyframe: PathBuf,
        /// Where to write the widened checkpoint before training resumes.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after widening instead of training.
        #[arg(long)]
        no_train: bool,
    },
    /// Write the height profile of a generated terrain as CSV.
    ExportTerrain {
        #[arg(long = "type")]
        terrain: TerrainType,
        #[arg(long)]
        level: u8,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run_training(trainer: &mut Trainer) -> Result<PathBuf> {
    let total = trainer.state.t2;
    let latest = trainer.train(|m| {
        if m.iteration % 50 == 0 || m.iteration + 1 == total {
            eprintln!(
                "iter {} stage {} reward {:.4} sil {:.4} episodes {} collisions {}",
                m.iteration, m.stage, m.rewards.r_c, m.rewards.r_si, m.episodes, m.collisions
            );
        }
    })?;
    Ok(latest)
}

fn train(config: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let mut t = Trainer::load(ckpt)?;
            t.resume_with(&cfg)?;
            t
        }
        None => Trainer::new(cfg)?,
    };
    let latest = run_training(&mut trainer)?;
    println!("{}", latest.display());
    Ok(())
}

fn add_skill(ckpt: &Path, keyframe: &Path, out: Option<PathBuf>, no_train: bool) -> Result<()> {
    let mut trainer = Trainer::load(ckpt)?;
    trainer.add_skill_from_file(keyframe)?;
    let name = trainer.keyframes.last().map(|k| k.name.clone()).unwrap_or_default();
    let run_dir = Path::new(&trainer.config.out_dir).join(format!("add_{name}"));
    trainer.config.out_dir = run_dir.to_string_lossy().into_owned();
    let widened = out.unwrap_or_else(|| run_dir.join("widened.kira"));
    if let Some(parent) = widened.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    trainer.save(&widened)?;
    if no_train {
        println!("{}", widened.display());
        return Ok(());
    }
    let latest = run_training(&mut trainer)?;
    println!("{}", latest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, resume } => train(&config, resume.as_deref()),
        Command::Eval {
            ckpt,
            skill,
            terrain,
            level,
            episodes,
        } => {
            let trainer = Trainer::load(&ckpt)?;
            let report = trainer.evaluate(&skill, terrain, level, episodes)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Replay { ckpt, script, out } => {
            let trainer = Trainer::load(&ckpt)?;
            let text = std::fs::read_to_string(&script).map_err(KirasError::from)?;
            let entries = parse_script(&text, trainer.num_skills())?;
            let rows = trainer.replay_to_file(&entries, &out)?;
            println!("{rows}");
            Ok(())
        }
        Command::AddSkill {
            ckpt,
            keyframe,
            out,
            no_train,
        } => add_skill(&ckpt, &keyframe, out, no_train),
        Command::ExportTerrain { terrain, level, out } => {
            let map = generate_terrain(terrain, level, EXPORT_SEED)?;
            let file = std::fs::File::create(&out).map_err(KirasError::from)?;
            map.write_csv(file)?;
            Ok(())
        }
    }
}

/// Single-line JSON so callers can parse failures without scraping text.
fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<KirasError>().map_or("error", KirasError::kind);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", error_line(kind, &message));
            ExitCode::FAILURE
        }
    }
}

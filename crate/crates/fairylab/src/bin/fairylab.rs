//! Thin command-line front end; all logic lives in the library.

use clap::{Parser, Subcommand};
use fairylab::cli::{run, Command, RunArgs};
use fairylab::config::load_config_file;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fairylab", about = "Sprite diffusion adapter laboratory")]
struct Cli {
    /// Structured config file (TOML); missing file means all defaults.
    #[arg(long, global = true, default_value = "fairylab.toml")]
    config: PathBuf,

    /// Dotted-path overrides, e.g. --set style.rank=8
    #[arg(long = "set", global = true)]
    set: Vec<String>,

    /// Run directory name under RUN_DIR (default: derived from the config).
    #[arg(long, global = true)]
    run_id: Option<String>,

    #[command(subcommand)]
    command: TopCommand,
}

#[derive(Subcommand)]
enum TopCommand {
    /// Generate the procedural sprite corpus.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Train base diffusion models on a corpus.
    Pretrain {
        #[command(subcommand)]
        cmd: PretrainCmd,
    },
    /// Style propagation: train adapters, synthesize scenes, ablate variants.
    Style {
        #[command(subcommand)]
        cmd: StyleCmd,
    },
    /// Two-stage motion customization.
    Motion {
        #[command(subcommand)]
        cmd: MotionCmd,
    },
    /// Ablation sweeps.
    Ablate {
        #[command(subcommand)]
        cmd: AblateCmd,
    },
    /// Storyboard planning and rendering.
    Story {
        #[command(subcommand)]
        cmd: StoryCmd,
    },
    /// Emit an HTML report over completed runs.
    Report {
        /// Run directories to include.
        runs: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Write clips, masks, and the JSON index.
    Gen {
        /// Replace an existing corpus directory.
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Subcommand)]
enum PretrainCmd {
    /// Image-mode base model (style experiments).
    Image,
    /// Clip-mode base model (motion experiments).
    Clip,
}

#[derive(Subcommand)]
enum StyleCmd {
    /// Train the style propagation adapter for one style.
    Train,
    /// Synthesize one style-consistent scene behind the character.
    Synth,
    /// Compare adapter variants (none / lora / dora / propagation-masked).
    Ablate,
}

#[derive(Subcommand)]
enum MotionCmd {
    /// Stage 1: identity adapter on shuffled frames.
    Stage1,
    /// Stage 2: motion residual on ordered frames, identity frozen.
    Stage2,
}

#[derive(Subcommand)]
enum AblateCmd {
    /// Sweep the timestep-shift mu against a uniform baseline.
    Mu,
}

#[derive(Subcommand)]
enum StoryCmd {
    /// Plan a storyboard with the configured planner.
    Plan,
    /// Render every shot of a storyboard end to end.
    Render,
}

fn to_command(top: TopCommand) -> Command {
    match top {
        TopCommand::Corpus {
            cmd: CorpusCmd::Gen { overwrite },
        } => Command::CorpusGen { overwrite },
        TopCommand::Pretrain { cmd } => match cmd {
            PretrainCmd::Image => Command::PretrainImage,
            PretrainCmd::Clip => Command::PretrainClip,
        },
        TopCommand::Style { cmd } => match cmd {
            StyleCmd::Train => Command::StyleTrain,
            StyleCmd::Synth => Command::StyleSynth,
            StyleCmd::Ablate => Command::StyleAblate,
        },
        TopCommand::Motion { cmd } => match cmd {
            MotionCmd::Stage1 => Command::MotionStage1,
            MotionCmd::Stage2 => Command::MotionStage2,
        },
        TopCommand::Ablate { cmd: AblateCmd::Mu } => Command::AblateMu,
        TopCommand::Story { cmd } => match cmd {
            StoryCmd::Plan => Command::StoryPlan,
            StoryCmd::Render => Command::StoryRender,
        },
        TopCommand::Report { runs } => Command::Report { runs },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = match load_config_file(&cli.config, &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let args = RunArgs {
        command: to_command(cli.command),
        config,
        run_id: cli.run_id,
        run_root: None,
    };
    match run(args) {
        Ok(dir) => {
            println!("run complete: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

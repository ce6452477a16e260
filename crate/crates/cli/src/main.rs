//! `sharedworld` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::{Parser, Subcommand};
use sharedworld::eval::{generate_clip, paired_eval};
use sharedworld::model::Denoiser;
use sharedworld::train::{check_clip, checkpoint_echo, load_checkpoint, save_checkpoint, Trainer};
use sharedworld::world::{generate_clips, read_clip, read_dataset, write_clip, write_video, ClipPair};
use sharedworld::{verify, Config, Error, ErrorKind};
use swtensor::{DType, Element};

#[derive(Debug, Parser)]
#[command(name = "sharedworld", version, about = "Paired multi-agent video diffusion on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render clip pairs into a dataset directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pairs: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train the denoiser and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate both agents' videos for one clip.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampling steps; the checkpoint's `eval.sample_steps` when omitted.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample every clip of a dataset and write a metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the full model gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Run the property suite.
    Invariants {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Gradcheck,
    Invariants(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            },
            Failure::Gradcheck => 3,
            Failure::Invariants(_) => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Gradcheck => "gradient check failed".into(),
            Failure::Invariants(n) => format!("{n} invariant check(s) failed"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapKind::DisplayHelp | ClapKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData {
            config,
            out,
            pairs,
            seed,
        } => gen_data(&Config::load(&config)?, &out, pairs, seed),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => {
            let cfg = Config::load(&config)?;
            let clips = load_clips(&cfg, &data)?;
            match cfg.train.dtype {
                DType::F64 => train::<f64>(&cfg, &clips, &out, resume.as_deref()),
                _ => train::<f32>(&cfg, &clips, &out, resume.as_deref()),
            }
        }
        Command::Sample {
            ckpt,
            clip,
            out,
            seed,
            steps,
        } => {
            let cfg = checkpoint_config(&ckpt)?;
            let clip = read_clip(&clip)?;
            check_clip(&cfg, &clip)?;
            let steps = steps.unwrap_or(cfg.eval.sample_steps);
            match cfg.train.dtype {
                DType::F64 => sample::<f64>(&cfg, &ckpt, &clip, &out, seed, steps),
                _ => sample::<f32>(&cfg, &ckpt, &clip, &out, seed, steps),
            }
        }
        Command::Eval {
            ckpt,
            data,
            report,
            seed,
        } => {
            let cfg = checkpoint_config(&ckpt)?;
            let clips = load_clips(&cfg, &data)?;
            match cfg.train.dtype {
                DType::F64 => eval::<f64>(&cfg, &ckpt, &clips, &report, seed),
                _ => eval::<f32>(&cfg, &ckpt, &clips, &report, seed),
            }
        }
        Command::Gradcheck { tol } => {
            let report = verify::gradcheck(tol)?;
            print!("{}", report.table());
            println!("max_rel_error={:.3e} tol={tol:e}", report.max_rel_error());
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Gradcheck)
            }
        }
        Command::Invariants { config } => {
            let cfg = match config {
                Some(p) => Config::load(&p)?,
                None => Config::desk(),
            };
            let checks = verify::run_all(&cfg, |c| eprintln!("checked {}", c.name))?;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            match checks.iter().filter(|c| !c.passed).count() {
                0 => Ok(()),
                n => Err(Failure::Invariants(n)),
            }
        }
    }
}

fn gen_data(cfg: &Config, out: &Path, pairs: usize, seed: u64) -> Result<(), Failure> {
    let d = &cfg.data;
    let clips = generate_clips(seed, pairs, d.view_h, d.view_w, cfg.ablate.four_views, |i| {
        eprintln!("clip {}/{pairs}", i + 1)
    })?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    for (i, clip) in clips.iter().enumerate() {
        write_clip(clip, &sharedworld::world::clip_dir(out, i))?;
    }
    Ok(())
}

fn load_clips(cfg: &Config, data: &Path) -> Result<Vec<ClipPair>, Failure> {
    let clips = read_dataset(data)?;
    if clips.is_empty() {
        return Err(Error::Format(format!("{}: no clips found", data.display())).into());
    }
    for clip in &clips {
        check_clip(cfg, clip)?;
    }
    Ok(clips)
}

fn checkpoint_config(ckpt: &Path) -> Result<Config, Failure> {
    Ok(Config::parse(&checkpoint_echo(ckpt)?)?)
}

fn train<T: Element>(cfg: &Config, clips: &[ClipPair], out: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let mut trainer = match resume {
        Some(p) => Trainer::<T>::with_state(cfg, load_checkpoint(p, cfg)?)?,
        None => Trainer::<T>::new(cfg)?,
    };
    let data = clips.iter().map(|c| trainer.prepare(c)).collect::<Result<Vec<_>, _>>()?;
    let total = cfg.train.steps;
    trainer.fit(&data, |step, loss| eprintln!("step {}/{total} loss {loss:.6}", step + 1))?;
    save_checkpoint(out, cfg, &trainer.state)?;
    Ok(())
}

fn sample<T: Element>(cfg: &Config, ckpt: &Path, clip: &ClipPair, out: &Path, seed: u64, steps: usize) -> Result<(), Failure> {
    let state = load_checkpoint::<T>(ckpt, cfg)?;
    let model = Denoiser::new(cfg)?;
    model.check_params(&state.params)?;
    let videos = generate_clip(cfg, &model, &state.params, clip, seed, steps)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    for (k, v) in videos.iter().enumerate() {
        write_video(v, &out.join(format!("agent{}.svt", k + 1)))?;
        eprintln!("wrote agent{}", k + 1);
    }
    Ok(())
}

fn eval<T: Element>(cfg: &Config, ckpt: &Path, clips: &[ClipPair], report: &Path, seed: u64) -> Result<(), Failure> {
    let state = load_checkpoint::<T>(ckpt, cfg)?;
    let n = clips.len();
    let rep = paired_eval(cfg, &state.params, clips, seed, |i| eprintln!("clip {}/{n} scored", i + 1))?;
    std::fs::write(report, rep.to_text()).map_err(|e| Error::Io {
        path: report.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

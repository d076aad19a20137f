use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use visnav_core::diffusion::{
    generate_maze, load_dataset, make_schedule, save_checkpoint, save_dataset, train_denoiser, DatasetSample,
    MlpConfig, MlpDenoiser, TrainConfig,
};
use visnav_harness::sweep::write_csv;
use visnav_harness::{bench_inference, run_with_options, sweep, HarnessError, RunOptions, Scenario, SweepAxis};

#[derive(Parser)]
#[command(name = "visnav", about = "Image-space path refinement in a simulated world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dump_frames: Option<PathBuf>,
    },
    /// Success rates over levels of one parameter.
    Sweep {
        #[arg(long)]
        template: PathBuf,
        /// roi-variance, pov, image-size or obstacle-density.
        #[arg(long)]
        axis: String,
        /// Comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<String>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame planning time.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 50)]
        frames: usize,
    },
    /// Fit a denoiser to a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 50)]
        diffusion_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random solvable maps with A* trajectories.
    Dataset {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        density: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 32)]
        ps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            scenario,
            seed,
            dump_frames,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let r = run_with_options(&s, &RunOptions { dump_frames })?;
            println!(
                "outcome={} steps={} replans={} plans={} invalid_plans={} corrections={} mean_plan_time_s={:.6}",
                r.outcome,
                r.steps,
                r.replans,
                r.plans,
                r.invalid_plans,
                r.waypoint_corrections(),
                r.mean_plan_time
            );
        }
        Command::Sweep {
            template,
            axis,
            levels,
            trials,
            out,
        } => {
            let s = Scenario::load(&template)?;
            let axis: SweepAxis = axis.parse()?;
            let dump = out.with_extension("frames");
            let rows = sweep(&s, axis, &levels, trials, Some(&dump))?;
            write_csv(&rows, &out)?;
            for r in &rows {
                println!("{} {}: {:.1}% ({}/{})", r.axis, r.level, r.success_rate, r.successes, r.trials);
            }
        }
        Command::Bench { scenario, frames } => {
            let s = Scenario::load(&scenario)?;
            let r = bench_inference(&s, frames)?;
            println!(
                "frames={} planned={} mean_s={:.6} max_s={:.6} cv={:.4}",
                r.times.len(),
                r.planned,
                r.mean,
                r.max,
                r.cv
            );
        }
        Command::Train {
            dataset,
            out,
            epochs,
            lr,
            diffusion_steps,
            seed,
        } => {
            let samples = load_dataset(&dataset)?;
            let ps = samples.first().map_or(0, |s| s.trajectory.len());
            if ps < 2 {
                return Err(HarnessError::Config("dataset trajectories need at least 2 points".into()));
            }
            let data: Vec<_> = samples.into_iter().map(|s| (s.map, s.trajectory)).collect();
            let model = MlpDenoiser::new(
                MlpConfig {
                    ps,
                    ..MlpConfig::default()
                },
                seed,
            );
            let cfg = TrainConfig {
                epochs,
                lr,
                seed,
                ..TrainConfig::default()
            };
            let schedule = make_schedule(diffusion_steps, 1e-4, 0.02)?;
            let (model, report) = train_denoiser(&data, model, &schedule, &cfg)?;
            save_checkpoint(&model, &out)?;
            let first = report.losses.first().copied().unwrap_or(0.0);
            let last = report.losses.last().copied().unwrap_or(0.0);
            println!("epochs={} first_loss={first:.6} final_loss={last:.6}", report.losses.len());
        }
        Command::Dataset {
            count,
            density,
            out,
            size,
            ps,
            seed,
        } => {
            let samples = (0..count)
                .map(|i| {
                    let maze = generate_maze(size, size, density, seed.wrapping_add(i as u64))?;
                    DatasetSample::from_maze(&maze, ps)
                })
                .collect::<Result<Vec<_>, _>>()?;
            save_dataset(&samples, &out)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tsdf_fusion::geometry::{Intrinsics, Pose};
use tsdf_fusion::pipeline::{
    experiment_filters, experiment_memory, parse_sweep, run, summary_text, write_filter_experiment,
    write_memory_experiment, write_outputs, PipelineConfig, TrackingMode,
};
use tsdf_fusion::render::{marching_cubes, render_view, write_pfm, write_ply, MarchingCubesParams, ViewRegion};
use tsdf_fusion::{FusionError, Result, SparseTsdfGrid};

#[derive(Parser)]
#[command(
    name = "tsdf-fusion",
    version,
    about = "Fuse depth map sequences into a TSDF and extract meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track and fuse every frame, then write mesh.ply, metrics.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Process at most this many frames.
        #[arg(long)]
        frames: Option<usize>,
        /// icp, ground_truth or icp_with_hook.
        #[arg(long)]
        tracking: Option<TrackingMode>,
        /// Output directory; overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Raycast a saved grid from a pose and write the depth as PFM.
    Render {
        #[arg(long)]
        grid: PathBuf,
        /// Twelve comma-separated numbers: row-major rotation then translation.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        /// Config whose [camera] section is used; a 320x240 camera otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "depth.pfm")]
        out: PathBuf,
        /// Also extract the mesh inside the view frustum.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Experiment {
    /// Single-voxel comparison of the simple, weighted and Kalman updates.
    Filters {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Memory footprint over a sweep of block layouts.
    Memory {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated NxM pairs, e.g. 8x8,16x8; overrides memory.sweep.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            frames,
            tracking,
            out,
        } => {
            let mut c = PipelineConfig::load(&config)?;
            if frames.is_some() {
                c.max_frames = frames;
            }
            if let Some(t) = tracking {
                c.tracking = t;
            }
            c.validate()?;
            let dir = out.unwrap_or_else(|| c.output.dir.clone());
            let output = run(&c)?;
            write_outputs(&output, &c, &dir)?;
            print!("{}", summary_text(&output));
            match output.status {
                tsdf_fusion::pipeline::RunStatus::Completed => Ok(()),
                tsdf_fusion::pipeline::RunStatus::Aborted { error, .. } => Err(error),
            }
        }
        Command::Experiment {
            which: Experiment::Filters { config, out },
        } => {
            let c = PipelineConfig::load(&config)?;
            let exp = experiment_filters(&c.filters, c.seed)?;
            let dir = out.unwrap_or_else(|| c.output.dir.clone());
            write_filter_experiment(&exp, &dir)?;
            for s in &exp.summaries {
                println!(
                    "{}: tail error simple {:.3e}, weighted {:.3e}, kalman {:.3e}; kalman win rate {:.2}",
                    s.scenario.name(),
                    s.mean_tail_error[0],
                    s.mean_tail_error[1],
                    s.mean_tail_error[2],
                    s.kalman_win_rate
                );
            }
            Ok(())
        }
        Command::Experiment {
            which: Experiment::Memory { config, sweep, out },
        } => {
            let c = PipelineConfig::load(&config)?;
            let sweep = sweep
                .or_else(|| c.memory.sweep.clone())
                .ok_or_else(|| FusionError::InvalidConfig("no sweep given (--sweep or memory.sweep)".into()))?;
            let rows = experiment_memory(&c, &parse_sweep(&sweep)?)?;
            let path = out.unwrap_or_else(|| c.output.dir.join("memory.csv"));
            write_memory_experiment(&rows, &path)?;
            for r in &rows {
                println!(
                    "{}x{}: {} blocks, {} bytes{}{}",
                    r.blocks_per_axis,
                    r.voxels_per_block_axis,
                    r.blocks,
                    r.memory_bytes,
                    if r.over_threshold { " (over threshold)" } else { "" },
                    if r.pool_exhausted { " (pool exhausted)" } else { "" }
                );
            }
            Ok(())
        }
        Command::Render {
            grid,
            pose,
            config,
            out,
            mesh,
        } => {
            let g = SparseTsdfGrid::read_snapshot(&grid)?;
            let values = pose
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| FusionError::InvalidConfig(format!("pose: {e}")))?;
            let pose = Pose::from_row(&values)?;
            let k = match config {
                Some(path) => PipelineConfig::load(&path)?
                    .camera
                    .ok_or_else(|| FusionError::InvalidConfig("config has no [camera] section".into()))?,
                None => Intrinsics::new(320, 240, 320.0, 320.0, 159.5, 119.5, 0.1, 10.0)?,
            };
            let (depth, _) = render_view(&g, &pose, &k);
            write_pfm(&depth, &out)?;
            println!("{} of {} pixels hit", depth.valid_count(), k.pixel_count());
            if let Some(path) = mesh {
                let region = ViewRegion {
                    pose: &pose,
                    intrinsics: &k,
                };
                write_ply(
                    &marching_cubes(&g, Some(region), &MarchingCubesParams::default()),
                    &path,
                )?;
            }
            Ok(())
        }
    }
}

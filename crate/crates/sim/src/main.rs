use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;

use mononav_core::camera::CameraIntrinsics;
use mononav_core::depth::{DepthMap, DISPARITY_FLOOR};
use mononav_core::grid::{
    bin_points, depth_pgm, depth_to_pointcloud, occupancy_path_ppm, pad_obstacles, write_bytes,
};
use mononav_core::planner::{commit_actions, extract_path, fmm_solve, project_goal, SpeedField};
use mononav_core::raster::{Raster, DEPTH_MAGIC, DISPARITY_MAGIC};
use mononav_core::source::Scene;
use mononav_sim::{run, RunOutcome, SimConfig};

#[derive(Parser)]
#[command(
    name = "mononav",
    version,
    about = "Monocular depth, occupancy and fast-marching navigation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop simulation on a scene file until the goal is reached.
    Run(RunArgs),
    /// One planning cycle on a disparity or depth raster file.
    PlanOnce(PlanOnceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene file (box/bounds/start/goal lines).
    #[arg(long)]
    scene: PathBuf,
    /// Goal override "X,Y,Z" in meters; defaults to the scene's goal.
    #[arg(long)]
    goal: Option<String>,
    /// Grid resolution in meters per cell.
    #[arg(long, default_value_t = 0.25)]
    resolution: f64,
    /// Grid radius in meters.
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    /// Obstacle padding in cells.
    #[arg(long, default_value_t = 1)]
    pad: usize,
    /// Maximum planning cycles.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Random seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Relative disparity noise (e.g. 0.05 for 5%).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Feature match pixel jitter.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Artifact output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanOnceArgs {
    /// Input raster: DISP disparity (requires --scale) or DMAP metric depth.
    #[arg(long)]
    disp: PathBuf,
    /// Goal "X,Y,Z" in the camera body frame (x right, y forward, z up).
    #[arg(long)]
    goal: String,
    /// Metric scale for disparity input: depth = scale / disparity.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    resolution: f64,
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    #[arg(long, default_value_t = 1)]
    pad: usize,
    /// Horizontal focal length in pixels; defaults to 0.86 * width.
    #[arg(long)]
    fx: Option<f64>,
    /// Vertical focal length in pixels; defaults to fx.
    #[arg(long)]
    fy: Option<f64>,
    /// Pixel stride for back-projection.
    #[arg(long, default_value_t = 4)]
    stride: u32,
    /// Artifact output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(text: &str) -> Result<Point3<f64>, String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad coordinate in '{text}': {e}"))?;
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got '{text}'"));
    }
    Ok(Point3::new(parts[0], parts[1], parts[2]))
}

fn run_command(args: RunArgs) -> Result<ExitCode, String> {
    let mut scene = Scene::load(&args.scene).map_err(|e| e.to_string())?;
    if let Some(goal) = &args.goal {
        scene.goal = parse_point(goal)?;
    }
    let mut config = SimConfig::new(scene);
    config.resolution = args.resolution;
    config.radius = args.radius;
    config.pad_cells = args.pad;
    config.max_cycles = args.steps;
    config.seed = args.seed;
    config.noise = args.noise;
    config.jitter_px = args.jitter;
    config.out_dir = args.out;

    let log = run(config).map_err(|e| e.to_string())?;
    print!("{}", log.to_text());
    Ok(match log.outcome {
        RunOutcome::GoalReached => ExitCode::SUCCESS,
        RunOutcome::MaxCycles => ExitCode::from(2),
    })
}

fn plan_once(args: PlanOnceArgs) -> Result<ExitCode, String> {
    let goal = parse_point(&args.goal)?;

    // Accept either magic; disparity needs the metric scale.
    let bytes = std::fs::read(&args.disp).map_err(|e| e.to_string())?;
    let depth = if bytes.starts_with(&DISPARITY_MAGIC) {
        let raster =
            Raster::read_binary(DISPARITY_MAGIC, bytes.as_slice()).map_err(|e| e.to_string())?;
        let scale = args
            .scale
            .ok_or("disparity input requires --scale (depth = scale / disparity)")?;
        let values = raster
            .values()
            .iter()
            .map(|d| (scale / (*d as f64).max(DISPARITY_FLOOR)) as f32)
            .collect();
        DepthMap(Raster::from_values(raster.width(), raster.height(), values))
    } else if bytes.starts_with(&DEPTH_MAGIC) {
        DepthMap(Raster::read_binary(DEPTH_MAGIC, bytes.as_slice()).map_err(|e| e.to_string())?)
    } else {
        return Err("input is neither a DISP nor a DMAP raster".into());
    };

    let width = depth.width();
    let height = depth.height();
    let fx = args.fx.unwrap_or(0.86 * width as f64);
    let fy = args.fy.unwrap_or(fx);
    let intrinsics = CameraIntrinsics::new(
        fx,
        fy,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        width,
        height,
    )
    .map_err(|e| e.to_string())?;

    let cloud = depth_to_pointcloud(&depth, &intrinsics, args.stride, None);
    let grid = bin_points(&cloud, args.resolution, args.radius);
    let mut padded = pad_obstacles(&grid, args.pad);
    let vehicle = padded.vehicle_cell();
    padded.set_flag(vehicle.0, vehicle.1, vehicle.2, false);

    let goal_cell = project_goal(&goal, &padded).map_err(|e| e.to_string())?;
    let speed = SpeedField::from_occupancy(&padded);
    let field = fmm_solve(&speed, goal_cell).map_err(|e| e.to_string())?;
    let plan = if field.time_at(vehicle).is_finite() {
        Some(extract_path(&field, vehicle).map_err(|e| e.to_string())?)
    } else {
        None
    };

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        write_bytes(&dir.join("depth.pgm"), &depth_pgm(&depth)).map_err(|e| e.to_string())?;
        let cells = plan.as_ref().map(|p| p.cells.as_slice()).unwrap_or(&[]);
        write_bytes(
            &dir.join("grid.ppm"),
            &occupancy_path_ppm(&padded, vehicle.2, cells),
        )
        .map_err(|e| e.to_string())?;
    }

    match plan {
        Some(plan) => {
            let committed = commit_actions(&plan);
            println!(
                "plan={} committed={} occupied={}",
                plan.len(),
                committed.len(),
                padded.occupied_count()
            );
            for c in committed {
                println!("action={},{},{}", c.0, c.1, c.2);
            }
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("plan=unreachable occupied={}", padded.occupied_count());
            Ok(ExitCode::from(2))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run_command(args),
        Command::PlanOnce(args) => plan_once(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

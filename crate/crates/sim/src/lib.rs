//! Closed-loop navigation simulation: observe a pseudo-stereo frame pair,
//! recover metric depth, build the padded ego occupancy grid, plan with
//! fast marching, commit three actions, move, repeat.
//!
//! Kinematics are teleport-per-cell: each committed action moves the
//! vehicle by exactly one grid cell in the body frame of the planning
//! cycle. Yaw follows the executed motion with a bounded turn rate so the
//! forward-facing camera looks into the direction of travel. Everything is
//! deterministic for a fixed (config, seed) pair, byte-for-byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use thiserror::Error;

use mononav_core::camera::{compose_projection, CameraIntrinsics, PixelMatch};
use mononav_core::depth::{
    estimate_metric_depth, DepthError, DepthEstimate, DepthParams, DepthPipelineState,
};
use mononav_core::grid::{
    bin_points, depth_pgm, depth_to_pointcloud, flag_outside_view, occupancy_path_ppm,
    pad_obstacles, write_bytes, OccupancyGrid,
};
use mononav_core::matching::{lowe_ratio_filter, select_top_n};
use mononav_core::planner::{
    commit_actions, extract_path, fmm_solve, project_goal, PlanError, SpeedField,
};
use mononav_core::source::{
    camera_pose, derive_seed, disparity_scale, synthetic_matches, NoiseConfig, Scene, SourceError,
    SyntheticSource,
};

/// Maximum yaw change per cycle (30 degrees); keeps consecutive frames
/// overlapping enough for matching.
pub const YAW_RATE_LIMIT: f64 = std::f64::consts::FRAC_PI_6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("vehicle collided with scene geometry at cycle {cycle}, position {position:?}")]
    Collision { cycle: usize, position: Point3<f64> },
    #[error("vehicle left the scene bounds at cycle {cycle}, position {position:?}")]
    OutOfBounds { cycle: usize, position: Point3<f64> },
}

/// All tunables of one simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub max_range: f64,
    pub resolution: f64,
    pub radius: f64,
    pub pad_cells: usize,
    /// Top-n matches kept for triangulation.
    pub anchors: usize,
    /// Temporal smoothing window length for the scalar depth estimates.
    pub smoothing_window: usize,
    /// Relative disparity noise; the absolute sigma handed to the source is
    /// `noise * kappa / (max_range / 2)`.
    pub noise: f64,
    /// Pixel jitter applied to synthetic feature matches.
    pub jitter_px: f64,
    pub max_cycles: usize,
    pub seed: u64,
    /// Pixel stride when back-projecting the depth map.
    pub stride: u32,
    pub lowe_ratio: f64,
    /// Lateral pseudo-stereo baseline used when no previous motion exists.
    pub bootstrap_baseline: f64,
    /// Artifact directory; no artifacts are written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl SimConfig {
    pub fn new(scene: Scene) -> Self {
        Self {
            scene,
            intrinsics: CameraIntrinsics::new(110.0, 110.0, 63.5, 47.5, 128, 96)
                .expect("default intrinsics are valid"),
            max_range: 10.0,
            resolution: 0.25,
            radius: 4.0,
            pad_cells: 1,
            anchors: 16,
            smoothing_window: 6,
            noise: 0.0,
            jitter_px: 0.0,
            max_cycles: 200,
            seed: 1,
            stride: 4,
            lowe_ratio: 0.75,
            bootstrap_baseline: 0.1,
            out_dir: None,
        }
    }
}

/// Kinematic vehicle state.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneState {
    pub position: Point3<f64>,
    pub yaw: f64,
    pub step_count: usize,
}

/// Scalar depth statistics recorded per cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRecord {
    pub z_min_raw: f64,
    pub z_min: f64,
    pub z_max_raw: f64,
    pub z_max: f64,
    pub anchors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleStatus {
    Ok,
    /// Goal unreachable this cycle; the vehicle hovered.
    PlanningFailed,
}

/// One planning cycle of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    /// End-of-cycle pose.
    pub position: Point3<f64>,
    pub yaw: f64,
    pub depth: Option<DepthRecord>,
    pub plan_len: usize,
    pub committed: Vec<(usize, usize, usize)>,
    pub occupied: usize,
    pub status: CycleStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    GoalReached,
    MaxCycles,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub records: Vec<CycleRecord>,
    pub outcome: RunOutcome,
}

impl RunLog {
    /// Line-delimited structured text, one self-describing record per
    /// cycle, chosen for diff-ability.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = write!(
                out,
                "cycle={} pos={:.6},{:.6},{:.6} yaw={:.6} status={}",
                r.cycle,
                r.position.x,
                r.position.y,
                r.position.z,
                r.yaw,
                match r.status {
                    CycleStatus::Ok => "ok",
                    CycleStatus::PlanningFailed => "planning_failed",
                }
            );
            if let Some(d) = &r.depth {
                let _ = write!(
                    out,
                    " z_min_raw={:.6} z_min={:.6} z_max_raw={:.6} z_max={:.6} anchors={}",
                    d.z_min_raw, d.z_min, d.z_max_raw, d.z_max, d.anchors
                );
            }
            let _ = write!(out, " plan={} occupied={} actions=", r.plan_len, r.occupied);
            for (i, c) in r.committed.iter().enumerate() {
                if i > 0 {
                    out.push(';');
                }
                let _ = write!(out, "{},{},{}", c.0, c.1, c.2);
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "outcome={} cycles={}",
            match self.outcome {
                RunOutcome::GoalReached => "goal_reached",
                RunOutcome::MaxCycles => "max_cycles",
            },
            self.records.len()
        );
        out
    }
}

/// Body-to-world rotation for a given yaw (about world z).
fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Closed-loop simulation with all mutable pipeline state.
pub struct Simulation {
    config: SimConfig,
    source: SyntheticSource,
    state: DroneState,
    depth_state: DepthPipelineState,
    depth_params: DepthParams,
    /// Pose after the first committed action of the previous cycle; the
    /// second pseudo-stereo observation is taken there.
    prev_mid: Option<(Point3<f64>, f64)>,
    cycle: usize,
    /// Consecutive cycles without a committed action.
    stalled_cycles: usize,
    /// Rotation sense of the current scan episode, chosen goal-ward when
    /// the episode starts.
    scan_direction: f64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Self {
        let kappa = disparity_scale(&config.intrinsics);
        let sigma = config.noise * kappa / (config.max_range / 2.0);
        let source = SyntheticSource::new(
            config.scene.clone(),
            config.intrinsics,
            config.max_range,
            NoiseConfig { sigma },
            config.seed,
        );
        let state = DroneState {
            position: config.scene.start,
            yaw: config.scene.start_yaw,
            step_count: 0,
        };
        let depth_state = DepthPipelineState::new(config.smoothing_window);
        Self {
            config,
            source,
            state,
            depth_state,
            depth_params: DepthParams::default(),
            prev_mid: None,
            cycle: 0,
            stalled_cycles: 0,
            scan_direction: 1.0,
        }
    }

    pub fn state(&self) -> &DroneState {
        &self.state
    }

    /// Arrival radius is one cell diagonal: cell-step kinematics on a
    /// yaw-rotated lattice cannot get closer in general.
    pub fn goal_reached(&self) -> bool {
        (self.state.position - self.config.scene.goal).norm()
            < self.config.resolution * 3.0f64.sqrt()
    }

    /// The second observation pose: previous-cycle mid pose when it gives a
    /// usable baseline, otherwise a lateral bootstrap offset.
    fn aux_pose(&self) -> (Point3<f64>, f64) {
        if let Some((pos, yaw)) = self.prev_mid {
            if (pos - self.state.position).norm() >= mononav_core::camera::BASELINE_MIN {
                return (pos, yaw);
            }
        }
        let offset = yaw_rotation(self.state.yaw)
            * Vector3::new(self.config.bootstrap_baseline, 0.0, 0.0);
        (self.state.position + offset, self.state.yaw)
    }

    /// Depth stage: observe both frames, synthesize + filter matches, and
    /// run the metric depth pipeline. `None` when the scene offers nothing
    /// to match on (open space): the cycle then plans on an empty grid.
    fn estimate_depth(&mut self) -> Result<Option<DepthEstimate>, SimError> {
        let now_pose = camera_pose(&self.state.position, self.state.yaw);
        let (aux_pos, aux_yaw) = self.aux_pose();
        let aux_pose = camera_pose(&aux_pos, aux_yaw);

        let obs_now = self.source.observe_at(&now_pose);
        let obs_aux = self.source.observe_at(&aux_pose);

        let match_seed = derive_seed(self.config.seed, 0x4d41_0000 + self.cycle as u64);
        let mut want = self.config.anchors * 2;
        let raw = loop {
            match synthetic_matches(
                &self.config.scene,
                &now_pose,
                &aux_pose,
                &self.config.intrinsics,
                self.config.max_range,
                want,
                self.config.jitter_px,
                match_seed,
            ) {
                Ok(m) => break m,
                // A sliver of visible surface still matters: retry with
                // however many points the sampler could actually find.
                Err(SourceError::InsufficientVisibleSurface { found, .. }) => {
                    if found == 0 || want == found {
                        return Ok(None);
                    }
                    want = found;
                }
                Err(e) => return Err(e.into()),
            }
        };
        let filtered = lowe_ratio_filter(&raw, self.config.lowe_ratio);
        let selected = select_top_n(&filtered, self.config.anchors);
        let pixel_matches: Vec<PixelMatch> = selected
            .iter()
            .map(|m| {
                PixelMatch::new(
                    Vector2::new(m.left_pixel.0, m.left_pixel.1),
                    Vector2::new(m.right_pixel.0, m.right_pixel.1),
                )
            })
            .collect();

        let left_proj = compose_projection(&self.config.intrinsics, &now_pose);
        let right_proj = compose_projection(&self.config.intrinsics, &aux_pose);
        match estimate_metric_depth(
            &obs_now.disparity,
            &obs_aux.disparity,
            &pixel_matches,
            &left_proj,
            &right_proj,
            &mut self.depth_state,
            &self.depth_params,
        ) {
            Ok(e) => Ok(Some(e)),
            Err(DepthError::InsufficientMatches(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Builds the padded planning grid from a depth estimate (or an empty
    /// one), walls off everything outside the scene bounds and clears the
    /// vehicle cell.
    fn build_grid(&self, estimate: Option<&DepthEstimate>) -> OccupancyGrid {
        let cloud = match estimate {
            Some(e) => depth_to_pointcloud(
                &e.map,
                &self.config.intrinsics,
                self.config.stride,
                Some(e.clamp_ceiling),
            ),
            None => mononav_core::grid::PointCloud::default(),
        };
        let mut grid = bin_points(&cloud, self.config.resolution, self.config.radius);

        // The scene boundary is not observable through disparity; wall it
        // off so plans cannot leave the bounds.
        let rot = yaw_rotation(self.state.yaw);
        let dims = grid.dims();
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let world = self.state.position + rot * grid.cell_center((x, y, z)).coords;
                    if !self.config.scene.bounds.contains(&world) {
                        grid.set_flag(x, y, z, true);
                    }
                }
            }
        }

        // Padding applies to measured obstacles and walls only.
        let measured = pad_obstacles(&grid, self.config.pad_cells);

        // Conservative mode: only cells the current frame can vouch for
        // stay free. Without it a lateral goal can pull the plan through
        // space the camera has never seen. Ignorance is not padded; that
        // would choke the thin near-field view cone.
        let mut padded = measured.clone();
        let range_limit = estimate
            .map(|e| e.clamp_ceiling.min(self.config.max_range))
            .unwrap_or(self.config.max_range);
        flag_outside_view(&mut padded, &self.config.intrinsics, range_limit);

        // The vehicle occupies its own cell, and altitude changes do not
        // need camera confirmation: the cells directly above and below
        // stay free unless something was actually measured there.
        let vehicle = padded.vehicle_cell();
        padded.set_flag(vehicle.0, vehicle.1, vehicle.2, false);
        let dims = padded.dims();
        for vz in [vehicle.2.wrapping_sub(1), vehicle.2 + 1] {
            if vz < dims.nz && !measured.flag(vehicle.0, vehicle.1, vz) {
                padded.set_flag(vehicle.0, vehicle.1, vz, false);
            }
        }
        padded
    }

    /// One full cycle: two observations, matches, metric depth, occupancy,
    /// goal projection, fast marching, path, commit, move.
    pub fn step(&mut self) -> Result<CycleRecord, SimError> {
        let cycle = self.cycle;
        let estimate = self.estimate_depth()?;
        let grid = self.build_grid(estimate.as_ref());

        let planning_yaw = self.state.yaw;
        let rot = yaw_rotation(planning_yaw);
        let goal_body = rot.transpose() * (self.config.scene.goal - self.state.position);

        let mut plan_len = 0usize;
        let mut committed: Vec<(usize, usize, usize)> = Vec::new();
        let mut status = CycleStatus::Ok;
        let mut full_path: Vec<(usize, usize, usize)> = Vec::new();

        match project_goal(&Point3::from(goal_body), &grid) {
            Ok(goal_cell) => {
                let speed = SpeedField::from_occupancy(&grid);
                match fmm_solve(&speed, goal_cell)
                    .and_then(|field| extract_path(&field, grid.vehicle_cell()))
                {
                    Ok(plan) => {
                        plan_len = plan.len();
                        full_path = plan.cells.clone();
                        committed = commit_actions(&plan).to_vec();
                        if committed.is_empty() && !self.goal_reached() {
                            status = CycleStatus::PlanningFailed;
                        }
                    }
                    Err(
                        PlanError::StartUnreachable(_)
                        | PlanError::GoalInObstacle(_)
                        | PlanError::NoFreeCell,
                    ) => {
                        status = CycleStatus::PlanningFailed;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Err(PlanError::NoFreeCell) => {
                status = CycleStatus::PlanningFailed;
            }
            Err(e) => return Err(e.into()),
        }

        // Execute the committed actions: one cell teleport each, all in
        // the planning-cycle body frame.
        let mut mid_pose = None;
        let start_cell = grid.vehicle_cell();
        let mut prev_cell = start_cell;
        for (i, cell) in committed.iter().enumerate() {
            let delta = Vector3::new(
                (cell.0 as f64 - prev_cell.0 as f64) * self.config.resolution,
                (cell.1 as f64 - prev_cell.1 as f64) * self.config.resolution,
                (cell.2 as f64 - prev_cell.2 as f64) * self.config.resolution,
            );
            self.state.position += rot * delta;
            self.state.step_count += 1;
            prev_cell = *cell;
            if i == 0 {
                mid_pose = Some((self.state.position, planning_yaw));
            }
            if self.config.scene.point_in_any_box(&self.state.position) {
                return Err(SimError::Collision { cycle, position: self.state.position });
            }
            if !self.config.scene.bounds.contains(&self.state.position) {
                return Err(SimError::OutOfBounds { cycle, position: self.state.position });
            }
        }
        self.prev_mid = mid_pose;

        if committed.is_empty() {
            self.stalled_cycles += 1;
        } else {
            self.stalled_cycles = 0;
        }

        // Yaw follows the net horizontal motion, rate-limited so the
        // camera keeps overlap between consecutive frames. A stalled cycle
        // first turns toward the goal (the free direction may simply be
        // outside the view cone); a persisting stall keeps rotating in the
        // sense picked at the start of the episode until a plan commits,
        // sweeping the full circle if need be.
        let heading_target = if committed.is_empty() {
            if self.stalled_cycles >= 2 {
                Some(self.state.yaw + self.scan_direction * YAW_RATE_LIMIT)
            } else {
                let to_goal = self.config.scene.goal - self.state.position;
                let target = (to_goal.xy().norm() >= self.config.resolution * 0.5)
                    .then(|| (-to_goal.x).atan2(to_goal.y));
                if let Some(t) = target {
                    let mut delta = t - self.state.yaw;
                    while delta > std::f64::consts::PI {
                        delta -= 2.0 * std::f64::consts::PI;
                    }
                    while delta < -std::f64::consts::PI {
                        delta += 2.0 * std::f64::consts::PI;
                    }
                    self.scan_direction = if delta < 0.0 { -1.0 } else { 1.0 };
                }
                target
            }
        } else {
            let net = rot
                * Vector3::new(
                    (prev_cell.0 as f64 - start_cell.0 as f64) * self.config.resolution,
                    (prev_cell.1 as f64 - start_cell.1 as f64) * self.config.resolution,
                    0.0,
                );
            (net.norm() >= self.config.resolution * 0.5).then(|| (-net.x).atan2(net.y))
        };
        if let Some(target) = heading_target {
            let mut delta = target - self.state.yaw;
            while delta > std::f64::consts::PI {
                delta -= 2.0 * std::f64::consts::PI;
            }
            while delta < -std::f64::consts::PI {
                delta += 2.0 * std::f64::consts::PI;
            }
            self.state.yaw += delta.clamp(-YAW_RATE_LIMIT, YAW_RATE_LIMIT);
            // Wrap to (-pi, pi] so long runs cannot degrade the angle.
            if self.state.yaw > std::f64::consts::PI {
                self.state.yaw -= 2.0 * std::f64::consts::PI;
            } else if self.state.yaw <= -std::f64::consts::PI {
                self.state.yaw += 2.0 * std::f64::consts::PI;
            }
        }

        let record = CycleRecord {
            cycle,
            position: self.state.position,
            yaw: self.state.yaw,
            depth: estimate.as_ref().map(|e| DepthRecord {
                z_min_raw: e.z_min_raw,
                z_min: e.z_min_smoothed,
                z_max_raw: e.z_max_raw,
                z_max: e.z_max_smoothed,
                anchors: e.anchor_count,
            }),
            plan_len,
            committed,
            occupied: grid.occupied_count(),
            status,
        };

        if let Some(dir) = self.config.out_dir.clone() {
            self.write_artifacts(&dir, &record, estimate.as_ref(), &grid, &full_path)?;
        }

        self.cycle += 1;
        Ok(record)
    }

    fn write_artifacts(
        &self,
        dir: &Path,
        record: &CycleRecord,
        estimate: Option<&DepthEstimate>,
        grid: &OccupancyGrid,
        path: &[(usize, usize, usize)],
    ) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        if let Some(e) = estimate {
            write_bytes(
                &dir.join(format!("depth_{:04}.pgm", record.cycle)),
                &depth_pgm(&e.map),
            )?;
        }
        let layer = grid.vehicle_cell().2;
        write_bytes(
            &dir.join(format!("grid_{:04}.ppm", record.cycle)),
            &occupancy_path_ppm(grid, layer, path),
        )?;
        Ok(())
    }

    /// Runs until the goal is reached or the cycle budget is exhausted.
    pub fn run(&mut self) -> Result<RunLog, SimError> {
        let mut records = Vec::new();
        let mut outcome = RunOutcome::MaxCycles;
        for _ in 0..self.config.max_cycles {
            let record = self.step()?;
            records.push(record);
            if self.goal_reached() {
                outcome = RunOutcome::GoalReached;
                break;
            }
        }
        let log = RunLog { records, outcome };
        if let Some(dir) = &self.config.out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("run.log"), log.to_text())?;
        }
        Ok(log)
    }
}

/// Convenience wrapper: build a simulation from a config and run it.
pub fn run(config: SimConfig) -> Result<RunLog, SimError> {
    Simulation::new(config).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mononav_core::source::Aabb;

    fn empty_scene(goal_ahead: f64) -> Scene {
        Scene {
            boxes: vec![],
            bounds: Aabb::new(Point3::new(-4.0, -2.0, 0.0), Point3::new(4.0, 10.0, 3.0)),
            start: Point3::new(0.0, 0.0, 1.0),
            start_yaw: 0.0,
            goal: Point3::new(0.0, goal_ahead, 1.0),
        }
    }

    #[test]
    fn free_space_goal_five_cells_ahead_takes_two_cycles() {
        let mut config = SimConfig::new(empty_scene(1.25));
        config.max_cycles = 10;
        let log = run(config).unwrap();
        assert_eq!(log.outcome, RunOutcome::GoalReached);
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.records[0].committed.len(), 3);
        assert_eq!(log.records[1].committed.len(), 2);
    }

    #[test]
    fn progress_is_strictly_decreasing_in_free_space() {
        let mut config = SimConfig::new(empty_scene(6.0));
        config.max_cycles = 30;
        let scene_goal = config.scene.goal;
        let mut sim = Simulation::new(config);
        let mut dist = (sim.state().position - scene_goal).norm();
        loop {
            let record = sim.step().unwrap();
            let now = (sim.state().position - scene_goal).norm();
            assert!(now < dist, "no progress at cycle {}", record.cycle);
            dist = now;
            if sim.goal_reached() {
                break;
            }
        }
    }

    #[test]
    fn unreachable_goal_hovers_without_collision() {
        let mut scene = empty_scene(5.0);
        scene.boxes.push(Aabb::new(Point3::new(-0.6, 4.4, 0.4), Point3::new(0.6, 5.6, 1.6)));
        // Goal inside the box: parsing would reject this, so the scene is
        // built directly.
        scene.goal = Point3::new(0.0, 5.0, 1.0);
        let mut config = SimConfig::new(scene);
        config.max_cycles = 40;
        let log = run(config).unwrap();
        assert_eq!(log.outcome, RunOutcome::MaxCycles);
        assert!(log.records.iter().any(|r| r.status == CycleStatus::PlanningFailed));
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let mut scene = empty_scene(6.0);
        scene.boxes.push(Aabb::new(Point3::new(-1.0, 3.0, 0.0), Point3::new(0.4, 4.0, 2.2)));
        let mut config = SimConfig::new(scene);
        config.noise = 0.05;
        config.jitter_px = 0.3;
        config.seed = 42;
        config.max_cycles = 60;
        let a = run(config.clone()).unwrap();
        let b = run(config).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }
}

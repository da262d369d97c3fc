//! Disparity frame providers.
//!
//! The synthetic source ray-casts an axis-aligned box scene into a
//! ground-truth depth map and serves scale-free disparity `kappa / depth`
//! with optional additive noise. The scale constant is private to the
//! source: the consuming pipeline must recover metric scale from
//! triangulated anchors, exactly as it would with a learned disparity
//! network. A directory-backed source replays externally generated
//! disparity frames instead.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::depth::{DepthMap, DisparityMap};
use crate::matching::FeatureMatch;
use crate::raster::{Raster, RasterError, DISPARITY_MAGIC};

/// Nominal stereo baseline baked into the hidden disparity scale
/// `kappa = fx * BASELINE_NOMINAL`, giving disparity magnitudes comparable
/// to real stereo.
pub const BASELINE_NOMINAL: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("scene parse error at line {line}: {message}")]
    SceneParse { line: usize, message: String },
    #[error("not enough commonly visible surface points: found {found}, need {need}")]
    InsufficientVisibleSurface { found: usize, need: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box in world meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Expands every face outward by `margin`.
    pub fn dilated(&self, margin: f64) -> Self {
        Self {
            min: Point3::new(self.min.x - margin, self.min.y - margin, self.min.z - margin),
            max: Point3::new(self.max.x + margin, self.max.y + margin, self.max.z + margin),
        }
    }

    /// Slab intersection interval of the ray `origin + t * dir`, or `None`
    /// when the ray misses. `dir` need not be normalized.
    pub fn ray_interval(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let mut t0 = (self.min[i] - origin[i]) / dir[i];
            let mut t1 = (self.max[i] - origin[i]) / dir[i];
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_enter > t_exit {
                return None;
            }
        }
        Some((t_enter, t_exit))
    }
}

/// Box-stack world with a start pose and a goal position.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boxes: Vec<Aabb>,
    pub bounds: Aabb,
    pub start: Point3<f64>,
    /// Radians, 0 = facing +y, positive turns counterclockwise seen from above.
    pub start_yaw: f64,
    pub goal: Point3<f64>,
}

impl Scene {
    /// Parses the line-oriented scene format:
    /// `box x0 y0 z0 x1 y1 z1`, `start x y z yaw_deg`, `goal x y z`,
    /// `bounds x0 y0 z0 x1 y1 z1`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SourceError> {
        let mut boxes = Vec::new();
        let mut bounds = None;
        let mut start = None;
        let mut goal = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let keyword = parts.next().unwrap_or("");
            let numbers: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
            let numbers = numbers.map_err(|e| SourceError::SceneParse {
                line,
                message: format!("bad number: {e}"),
            })?;
            let expect = |n: usize| {
                if numbers.len() == n {
                    Ok(())
                } else {
                    Err(SourceError::SceneParse {
                        line,
                        message: format!("{keyword} expects {n} values, got {}", numbers.len()),
                    })
                }
            };
            match keyword {
                "box" => {
                    expect(6)?;
                    let aabb = ordered_aabb(&numbers);
                    if (0..3).any(|i| aabb.max[i] - aabb.min[i] <= 0.0) {
                        return Err(SourceError::SceneParse {
                            line,
                            message: "box has non-positive extent".into(),
                        });
                    }
                    boxes.push(aabb);
                }
                "bounds" => {
                    expect(6)?;
                    bounds = Some(ordered_aabb(&numbers));
                }
                "start" => {
                    expect(4)?;
                    start = Some((
                        Point3::new(numbers[0], numbers[1], numbers[2]),
                        numbers[3].to_radians(),
                    ));
                }
                "goal" => {
                    expect(3)?;
                    goal = Some(Point3::new(numbers[0], numbers[1], numbers[2]));
                }
                other => {
                    return Err(SourceError::SceneParse {
                        line,
                        message: format!("unknown keyword '{other}'"),
                    });
                }
            }
        }

        let bounds = bounds.ok_or(SourceError::SceneParse { line: 0, message: "missing bounds".into() })?;
        let (start, start_yaw) =
            start.ok_or(SourceError::SceneParse { line: 0, message: "missing start".into() })?;
        let goal = goal.ok_or(SourceError::SceneParse { line: 0, message: "missing goal".into() })?;

        let scene = Scene { boxes, bounds, start, start_yaw, goal };
        if scene.point_in_any_box(&scene.start) {
            return Err(SourceError::SceneParse { line: 0, message: "start is inside a box".into() });
        }
        if scene.point_in_any_box(&scene.goal) {
            return Err(SourceError::SceneParse { line: 0, message: "goal is inside a box".into() });
        }
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self, SourceError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn point_in_any_box(&self, p: &Point3<f64>) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    /// True when `p` is within `margin` of any box (collision oracle for
    /// the padded-clearance check).
    pub fn point_near_any_box(&self, p: &Point3<f64>, margin: f64) -> bool {
        self.boxes.iter().any(|b| b.dilated(margin).contains(p))
    }
}

fn ordered_aabb(v: &[f64]) -> Aabb {
    Aabb::new(
        Point3::new(v[0].min(v[3]), v[1].min(v[4]), v[2].min(v[5])),
        Point3::new(v[0].max(v[3]), v[1].max(v[4]), v[2].max(v[5])),
    )
}

/// World-to-camera pose for a body at `position` with the given yaw.
///
/// World frame: x right, y forward, z up. Camera frame: x right, y down,
/// z forward along the body's +y heading.
pub fn camera_pose(position: &Point3<f64>, yaw: f64) -> CameraPose {
    // Base alignment for yaw = 0: cam_x = world_x, cam_y = -world_z,
    // cam_z = world_y.
    let base = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let (s, c) = yaw.sin_cos();
    // World-to-body rotation is Rz(-yaw).
    let rz = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    let rotation = base * rz;
    let translation = -(rotation * position.coords);
    CameraPose { rotation, translation }
}

/// Additive Gaussian disparity noise, standard deviation in disparity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig { sigma: 0.0 };
}

/// One captured frame: served disparity, the oracle depth when the source
/// has one, and the pose at capture.
#[derive(Debug, Clone)]
pub struct FrameObservation {
    pub disparity: DisparityMap,
    pub true_depth: Option<DepthMap>,
    pub pose: CameraPose,
}

/// Per-pixel depth along the camera ray to the nearest box, `max_range`
/// where nothing is hit. Depth is the camera-frame z of the hit (the ray
/// direction is parameterized with unit camera z).
pub fn raycast_depth(
    scene: &Scene,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    max_range: f64,
) -> DepthMap {
    debug_assert!(max_range > 0.0);
    let origin = pose.center();
    let r_t = pose.rotation.transpose();
    let mut out = Raster::filled(intrinsics.width, intrinsics.height, max_range as f32);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir_cam = Vector3::new(
                (u as f64 - intrinsics.cx) / intrinsics.fx,
                (v as f64 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let dir = r_t * dir_cam;
            let mut nearest = max_range;
            for b in &scene.boxes {
                if let Some((t_enter, t_exit)) = b.ray_interval(&origin, &dir) {
                    if t_enter > 1e-9 && t_enter <= t_exit && t_enter < nearest {
                        nearest = t_enter;
                    }
                }
            }
            out.set(u, v, nearest as f32);
        }
    }
    DepthMap(out)
}

/// Hidden disparity scale of a synthetic source.
pub fn disparity_scale(intrinsics: &CameraIntrinsics) -> f64 {
    intrinsics.fx * BASELINE_NOMINAL
}

/// Ray-casts a frame and serves `kappa / depth` disparity with optional
/// additive Gaussian noise, clamped to be nonnegative. Deterministic for a
/// fixed seed.
pub fn observe(
    scene: &Scene,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    max_range: f64,
    noise: &NoiseConfig,
    rng_seed: u64,
) -> FrameObservation {
    let depth = raycast_depth(scene, pose, intrinsics, max_range);
    let kappa = disparity_scale(intrinsics);
    let mut disparity = Raster::filled(intrinsics.width, intrinsics.height, 0.0);
    if noise.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let normal = Normal::new(0.0, noise.sigma).expect("positive sigma");
        for v in 0..intrinsics.height {
            for u in 0..intrinsics.width {
                let d = kappa / depth.get(u, v) as f64 + normal.sample(&mut rng);
                disparity.set(u, v, d.max(0.0) as f32);
            }
        }
    } else {
        for v in 0..intrinsics.height {
            for u in 0..intrinsics.width {
                disparity.set(u, v, (kappa / depth.get(u, v) as f64) as f32);
            }
        }
    }
    FrameObservation {
        disparity: DisparityMap(disparity),
        true_depth: Some(depth),
        pose: pose.clone(),
    }
}

/// Samples `count` surface points visible from both poses, projects them
/// into both frames and synthesizes descriptor distances such that Lowe
/// filtering at 0.75 keeps at least 80% of them. Left pixels are integer
/// ray centers before jitter; right pixels are exact projections before
/// jitter. Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_matches(
    scene: &Scene,
    pose_a: &CameraPose,
    pose_b: &CameraPose,
    intrinsics: &CameraIntrinsics,
    max_range: f64,
    count: usize,
    jitter_px: f64,
    rng_seed: u64,
) -> Result<Vec<FeatureMatch>, SourceError> {
    debug_assert!(count >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let origin_a = pose_a.center();
    let origin_b = pose_b.center();
    let rt_a = pose_a.rotation.transpose();
    let rt_b = pose_b.rotation.transpose();
    let proj_b = crate::camera::compose_projection(intrinsics, pose_b);

    let mut picked: Vec<(u32, u32, Vector2<f64>)> = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    // Budget floor keeps the sampled sequence comparable across different
    // requested counts (callers retry with fewer after a shortfall).
    let max_attempts = count.max(32) * 400;
    for _ in 0..max_attempts {
        if picked.len() == count {
            break;
        }
        let u = rng.gen_range(0..intrinsics.width);
        let v = rng.gen_range(0..intrinsics.height);
        if seen.contains(&(u, v)) {
            continue;
        }
        let dir_cam = Vector3::new(
            (u as f64 - intrinsics.cx) / intrinsics.fx,
            (v as f64 - intrinsics.cy) / intrinsics.fy,
            1.0,
        );
        let dir = rt_a * dir_cam;
        let mut hit: Option<f64> = None;
        for b in &scene.boxes {
            if let Some((t_enter, t_exit)) = b.ray_interval(&origin_a, &dir) {
                if t_enter > 1e-9 && t_enter <= t_exit && t_enter < max_range {
                    hit = Some(hit.map_or(t_enter, |h: f64| h.min(t_enter)));
                }
            }
        }
        let Some(t) = hit else {
            continue;
        };
        let point = origin_a + dir * t;

        // Visible in the second frame: in bounds, in front, unoccluded.
        let Ok(pixel_b) = proj_b.project_pixel(&point) else {
            continue;
        };
        if !intrinsics.contains_pixel(pixel_b.x, pixel_b.y) {
            continue;
        }
        let depth_b = proj_b.depth_of(&point);
        if depth_b <= 0.05 {
            continue;
        }
        let dir_b = rt_b
            * Vector3::new(
                (pixel_b.x - intrinsics.cx) / intrinsics.fx,
                (pixel_b.y - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
        let mut nearest_b = f64::INFINITY;
        for b in &scene.boxes {
            if let Some((t_enter, t_exit)) = b.ray_interval(&origin_b, &dir_b) {
                if t_enter > 1e-9 && t_enter <= t_exit {
                    nearest_b = nearest_b.min(t_enter);
                }
            }
        }
        if (nearest_b - depth_b).abs() > 1e-6 * depth_b.max(1.0) {
            continue;
        }

        seen.insert((u, v));
        picked.push((u, v, pixel_b));
    }
    if picked.len() < count {
        return Err(SourceError::InsufficientVisibleSurface { found: picked.len(), need: count });
    }

    // Descriptor quality split: a fixed fraction passes the 0.75 ratio
    // test, the rest deliberately fails it.
    let good = (count * 17).div_ceil(20); // ceil(0.85 * count)
    let jitter = if jitter_px > 0.0 {
        Some(Normal::new(0.0, jitter_px).expect("positive jitter"))
    } else {
        None
    };
    let sample_jitter = |rng: &mut ChaCha8Rng| jitter.map_or(0.0, |n| n.sample(rng));

    let matches = picked
        .into_iter()
        .enumerate()
        .map(|(i, (u, v, pixel_b))| {
            let second = rng.gen_range(0.5..1.0);
            let ratio = if i < good { rng.gen_range(0.30..0.60) } else { rng.gen_range(0.80..0.95) };
            let jl = (sample_jitter(&mut rng), sample_jitter(&mut rng));
            let jr = (sample_jitter(&mut rng), sample_jitter(&mut rng));
            FeatureMatch {
                left_pixel: (u as f64 + jl.0, v as f64 + jl.1),
                right_pixel: (pixel_b.x + jr.0, pixel_b.y + jr.1),
                best_distance: ratio * second,
                second_distance: second,
            }
        })
        .collect();
    Ok(matches)
}

/// Synthetic single-owner frame source with per-frame derived seeds.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub max_range: f64,
    pub noise: NoiseConfig,
    seed: u64,
    frame: u64,
}

impl SyntheticSource {
    pub fn new(
        scene: Scene,
        intrinsics: CameraIntrinsics,
        max_range: f64,
        noise: NoiseConfig,
        seed: u64,
    ) -> Self {
        Self { scene, intrinsics, max_range, noise, seed, frame: 0 }
    }

    /// Captures the next frame at `pose`, advancing the frame counter.
    pub fn observe_at(&mut self, pose: &CameraPose) -> FrameObservation {
        let frame_seed = derive_seed(self.seed, self.frame);
        self.frame += 1;
        observe(&self.scene, pose, &self.intrinsics, self.max_range, &self.noise, frame_seed)
    }

    pub fn frame_index(&self) -> u64 {
        self.frame
    }
}

/// splitmix64 step, used to derive independent per-frame seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Replays `.disp` files from a directory in lexicographic order.
#[derive(Debug)]
pub struct DirSource {
    files: Vec<PathBuf>,
    next: usize,
}

impl DirSource {
    pub fn open(dir: &Path) -> Result<Self, SourceError> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "disp"))
            .collect();
        files.sort();
        Ok(Self { files, next: 0 })
    }

    pub fn remaining(&self) -> usize {
        self.files.len() - self.next
    }

    /// Next frame, or `None` when the directory is exhausted. The replayed
    /// pose must be supplied by the caller.
    pub fn next_frame(&mut self, pose: &CameraPose) -> Option<Result<FrameObservation, SourceError>> {
        let path = self.files.get(self.next)?.clone();
        self.next += 1;
        Some(
            Raster::load(DISPARITY_MAGIC, &path)
                .map(|raster| FrameObservation {
                    disparity: DisparityMap(raster),
                    true_depth: None,
                    pose: pose.clone(),
                })
                .map_err(SourceError::from),
        )
    }
}

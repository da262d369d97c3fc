//! Ego-centric 3D occupancy grid.
//!
//! Depth pixels are back-projected into a body-frame point cloud (x right,
//! y forward, z up; the camera looks along +y) and binned into a binary
//! voxel grid. The grid covers `x in [-r, r)`, `y in [0, 2r)` forward and
//! `z in [-r, r)`, so the vehicle sits at the bottom-center cell of the
//! birds-eye view. Obstacles are padded by Chebyshev dilation before
//! planning. The grid is rebuilt from scratch every frame; there is no
//! temporal fusion.

use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use crate::camera::CameraIntrinsics;
use crate::depth::DepthMap;

/// Cell counts per axis; all three equal `ceil(2 * radius / resolution)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Row-major linear index: x fastest, then y, then z.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        (z * self.ny + y) * self.nx + x
    }

    pub fn cell_of_index(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }
}

/// Body-frame points in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

/// Binary voxel grid around the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    radius: f64,
    dims: GridDims,
    flags: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(resolution: f64, radius: f64) -> Self {
        assert!(resolution > 0.0 && radius >= resolution);
        let n = (2.0 * radius / resolution).ceil() as usize;
        let dims = GridDims { nx: n, ny: n, nz: n };
        Self { resolution, radius, dims, flags: vec![false; dims.cell_count()] }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn flag(&self, x: usize, y: usize, z: usize) -> bool {
        self.flags[self.dims.index(x, y, z)]
    }

    pub fn set_flag(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.dims.index(x, y, z);
        self.flags[i] = value;
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn occupied_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    /// Minimum corner of the covered extent in the body frame. Offset by
    /// half a cell so the vehicle (body origin) sits at the exact center
    /// of its cell: planned cell positions then coincide with the poses
    /// the vehicle actually occupies.
    pub fn min_corner(&self) -> Point3<f64> {
        let half = self.resolution / 2.0;
        Point3::new(-self.radius - half, -half, -self.radius - half)
    }

    /// Cell containing a body-frame point, or `None` outside the covered
    /// vicinity. Cells are half-open per axis.
    pub fn cell_of_point(&self, p: &Point3<f64>) -> Option<(usize, usize, usize)> {
        let min = self.min_corner();
        let res = self.resolution;
        let q = p - min;
        if q.x < 0.0
            || q.y < 0.0
            || q.z < 0.0
            || q.x >= self.dims.nx as f64 * res
            || q.y >= self.dims.ny as f64 * res
            || q.z >= self.dims.nz as f64 * res
        {
            return None;
        }
        let x = (q.x / res).floor() as usize;
        let y = (q.y / res).floor() as usize;
        let z = (q.z / res).floor() as usize;
        Some((x.min(self.dims.nx - 1), y.min(self.dims.ny - 1), z.min(self.dims.nz - 1)))
    }

    /// Body-frame center of a cell.
    pub fn cell_center(&self, cell: (usize, usize, usize)) -> Point3<f64> {
        let min = self.min_corner();
        Point3::new(
            min.x + (cell.0 as f64 + 0.5) * self.resolution,
            min.y + (cell.1 as f64 + 0.5) * self.resolution,
            min.z + (cell.2 as f64 + 0.5) * self.resolution,
        )
    }

    /// Geometric center of the covered extent, used for goal projection.
    pub fn extent_center(&self) -> Point3<f64> {
        let min = self.min_corner();
        Point3::new(
            min.x + self.dims.nx as f64 * self.resolution / 2.0,
            min.y + self.dims.ny as f64 * self.resolution / 2.0,
            min.z + self.dims.nz as f64 * self.resolution / 2.0,
        )
    }

    /// The cell the vehicle occupies: bottom row of the birds-eye view,
    /// centered laterally and vertically.
    pub fn vehicle_cell(&self) -> (usize, usize, usize) {
        self.cell_of_point(&Point3::origin())
            .expect("the body origin lies inside the grid")
    }
}

/// Back-projects sampled depth pixels into the body frame:
/// `(z * (u - cx) / fx, z, z * (cy - v) / fy)`. Pixels at or beyond
/// `exclude_beyond` (the max-range clamp) are skipped: unknown is not
/// occupied.
pub fn depth_to_pointcloud(
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    stride: u32,
    exclude_beyond: Option<f64>,
) -> PointCloud {
    debug_assert!(stride >= 1);
    let mut points = Vec::new();
    let mut v = 0;
    while v < depth.height() {
        let mut u = 0;
        while u < depth.width() {
            let z = depth.get(u, v) as f64;
            let clamped = exclude_beyond.is_some_and(|limit| z >= limit);
            if z > 0.0 && !clamped {
                points.push(Point3::new(
                    z * (u as f64 - intrinsics.cx) / intrinsics.fx,
                    z,
                    z * (intrinsics.cy - v as f64) / intrinsics.fy,
                ));
            }
            u += stride;
        }
        v += stride;
    }
    PointCloud { points }
}

/// Bins points into a fresh grid; a cell is flagged when at least one
/// point falls in its half-open interval. Flag setting is idempotent, so
/// the result is independent of point order.
pub fn bin_points(cloud: &PointCloud, resolution: f64, radius: f64) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(resolution, radius);
    for p in &cloud.points {
        if let Some((x, y, z)) = grid.cell_of_point(p) {
            grid.set_flag(x, y, z, true);
        }
    }
    grid
}

/// Conservative mode: flags every cell the current frame cannot vouch for
/// as occupied, i.e. cells whose center does not project into the image or
/// lies beyond the sensed range. Cells with binned points keep their flag.
/// Space occluded behind observed surfaces is not touched.
pub fn flag_outside_view(grid: &mut OccupancyGrid, intrinsics: &CameraIntrinsics, range: f64) {
    let dims = grid.dims();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let c = grid.cell_center((x, y, z));
                // Camera looks along +y; image x right, image y down.
                let visible = c.y > 0.0 && c.y <= range && {
                    let u = intrinsics.fx * c.x / c.y + intrinsics.cx;
                    let v = intrinsics.fy * (-c.z) / c.y + intrinsics.cy;
                    u >= 0.0
                        && u <= (intrinsics.width - 1) as f64
                        && v >= 0.0
                        && v <= (intrinsics.height - 1) as f64
                };
                if !visible {
                    grid.set_flag(x, y, z, true);
                }
            }
        }
    }
}

/// Binary dilation with a cubic structuring element of Chebyshev radius
/// `pad_cells`, implemented as three separable axis passes.
pub fn pad_obstacles(grid: &OccupancyGrid, pad_cells: usize) -> OccupancyGrid {
    if pad_cells == 0 {
        return grid.clone();
    }
    let dims = grid.dims();
    let mut current = grid.flags().to_vec();
    let mut next = vec![false; current.len()];

    // One pass per axis; each pass ORs a window of 2*pad+1 cells.
    for axis in 0..3 {
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let (len, pos) = match axis {
                        0 => (dims.nx, x),
                        1 => (dims.ny, y),
                        _ => (dims.nz, z),
                    };
                    let lo = pos.saturating_sub(pad_cells);
                    let hi = (pos + pad_cells).min(len - 1);
                    let mut hit = false;
                    for k in lo..=hi {
                        let idx = match axis {
                            0 => dims.index(k, y, z),
                            1 => dims.index(x, k, z),
                            _ => dims.index(x, y, k),
                        };
                        if current[idx] {
                            hit = true;
                            break;
                        }
                    }
                    next[dims.index(x, y, z)] = hit;
                }
            }
        }
        std::mem::swap(&mut current, &mut next);
    }

    OccupancyGrid { resolution: grid.resolution(), radius: grid.radius(), dims, flags: current }
}

/// P5 graymap of one z-layer: 0 free, 255 occupied. The vehicle row is at
/// the bottom of the image.
pub fn occupancy_slice_pgm(grid: &OccupancyGrid, layer: usize) -> Vec<u8> {
    let dims = grid.dims();
    let mut body = Vec::with_capacity(dims.nx * dims.ny);
    for row in 0..dims.ny {
        let y = dims.ny - 1 - row;
        for x in 0..dims.nx {
            body.push(if grid.flag(x, y, layer) { 255 } else { 0 });
        }
    }
    encode_pnm(b"P5", dims.nx, dims.ny, &body)
}

/// P6 pixmap of one z-layer with the planner output overlaid: occupied
/// cells fill the green channel, path cells (projected over z) the red
/// channel.
pub fn occupancy_path_ppm(
    grid: &OccupancyGrid,
    layer: usize,
    path: &[(usize, usize, usize)],
) -> Vec<u8> {
    let dims = grid.dims();
    let mut on_path = vec![false; dims.nx * dims.ny];
    for (x, y, _) in path {
        on_path[y * dims.nx + x] = true;
    }
    let mut body = Vec::with_capacity(dims.nx * dims.ny * 3);
    for row in 0..dims.ny {
        let y = dims.ny - 1 - row;
        for x in 0..dims.nx {
            let red = if on_path[y * dims.nx + x] { 255 } else { 0 };
            let green = if grid.flag(x, y, layer) { 255 } else { 0 };
            body.extend_from_slice(&[red, green, 0]);
        }
    }
    encode_pnm(b"P6", dims.nx, dims.ny, &body)
}

/// P5 graymap of a depth map, near = bright, normalized to the map's own
/// range.
pub fn depth_pgm(depth: &DepthMap) -> Vec<u8> {
    let min = depth.0.min_value();
    let max = depth.0.max_value();
    let span = (max - min).max(f32::MIN_POSITIVE);
    let mut body = Vec::with_capacity(depth.0.values().len());
    for v in depth.0.values() {
        let t = (v - min) / span;
        body.push((255.0 * (1.0 - t)).round() as u8);
    }
    encode_pnm(b"P5", depth.width() as usize, depth.height() as usize, &body)
}

fn encode_pnm(magic: &[u8], width: usize, height: usize, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(body);
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(110.0, 105.0, 63.5, 47.5, 128, 96).unwrap()
    }

    #[test]
    fn principal_pixel_maps_to_forward_axis() {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap();
        let depth = DepthMap(Raster::filled(128, 96, 4.0));
        let cloud = depth_to_pointcloud(&depth, &k, 1, None);
        let idx = 48 * 128 + 64;
        assert_eq!(cloud.points[idx], Point3::new(0.0, 4.0, 0.0));
    }

    #[test]
    fn unit_tangent_pixel_geometry() {
        // u = cx + fx at depth 2 puts the x-component at exactly 2 m.
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 3.0, 16, 8).unwrap();
        let depth = DepthMap(Raster::filled(16, 8, 2.0));
        let cloud = depth_to_pointcloud(&depth, &k, 1, None);
        let p = cloud.points[(3 * 16 + 12) as usize];
        assert_relative_eq!(p.x, 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cloud_matches_backprojection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let k = test_intrinsics();
        let values: Vec<f32> = (0..128 * 96).map(|_| rng.gen_range(0.5..9.0)).collect();
        let depth = DepthMap(Raster::from_values(128, 96, values));
        let cloud = depth_to_pointcloud(&depth, &k, 4, None);
        let mut i = 0;
        for v in (0..96).step_by(4) {
            for u in (0..128).step_by(4) {
                let z = depth.get(u, v) as f64;
                let expected = Point3::new(
                    z * (u as f64 - k.cx) / k.fx,
                    z,
                    z * (k.cy - v as f64) / k.fy,
                );
                assert_relative_eq!(cloud.points[i], expected, epsilon = 1e-9);
                i += 1;
            }
        }
        assert_eq!(i, cloud.points.len());
    }

    #[test]
    fn clamped_pixels_are_excluded() {
        let k = test_intrinsics();
        let mut raster = Raster::filled(128, 96, 10.0);
        raster.set(0, 0, 3.0);
        let depth = DepthMap(raster);
        let cloud = depth_to_pointcloud(&depth, &k, 1, Some(10.0));
        assert_eq!(cloud.points.len(), 1);
    }

    #[test]
    fn back_projected_points_reproject_to_pixel_centers() {
        let k = test_intrinsics();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let values: Vec<f32> = (0..128 * 96).map(|_| rng.gen_range(0.5..9.0)).collect();
        let depth = DepthMap(Raster::from_values(128, 96, values));
        let cloud = depth_to_pointcloud(&depth, &k, 4, None);
        let mut i = 0;
        for v in (0..96).step_by(4) {
            for u in (0..128).step_by(4) {
                let p = cloud.points[i];
                // Perspective re-projection of the body point: camera
                // forward is +y, image down is -z.
                let px = k.fx * p.x / p.y + k.cx;
                let py = k.fy * (-p.z) / p.y + k.cy;
                assert_relative_eq!(px, u as f64, epsilon = 1e-9);
                assert_relative_eq!(py, v as f64, epsilon = 1e-9);
                i += 1;
            }
        }
    }

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let grid = bin_points(&PointCloud::default(), 0.25, 4.0);
        assert_eq!(grid.occupied_count(), 0);
        assert_eq!(grid.dims(), GridDims { nx: 32, ny: 32, nz: 32 });
    }

    #[test]
    fn single_point_sets_single_flag() {
        let cloud = PointCloud { points: vec![Point3::new(0.05, 1.0, 0.0)] };
        let grid = bin_points(&cloud, 0.5, 2.0);
        assert_eq!(grid.occupied_count(), 1);
        let cell = grid.cell_of_point(&Point3::new(0.05, 1.0, 0.0)).unwrap();
        assert!(grid.flag(cell.0, cell.1, cell.2));
        // Min corner is (-2.25, -0.25, -2.25): half a cell beyond the
        // radius so the vehicle is centered in its own cell.
        assert_eq!(cell, (4, 2, 4));
        assert_eq!(grid.vehicle_cell(), (4, 0, 4));
        assert_eq!(grid.cell_center(grid.vehicle_cell()), Point3::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn binning_matches_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let points: Vec<Point3<f64>> = (0..10_000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-1.0..9.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let res = 0.25;
        let radius = 4.0;
        let grid = bin_points(&PointCloud { points: points.clone() }, res, radius);

        let dims = grid.dims();
        let half = res / 2.0;
        let (x0, y0, z0) = (-radius - half, -half, -radius - half);
        let mut oracle = vec![false; dims.cell_count()];
        let mut expected_cells = std::collections::BTreeSet::new();
        for p in &points {
            if p.x < x0
                || p.x >= x0 + dims.nx as f64 * res
                || p.y < y0
                || p.y >= y0 + dims.ny as f64 * res
                || p.z < z0
                || p.z >= z0 + dims.nz as f64 * res
            {
                continue;
            }
            let x = ((p.x - x0) / res).floor() as usize;
            let y = ((p.y - y0) / res).floor() as usize;
            let z = ((p.z - z0) / res).floor() as usize;
            oracle[dims.index(x, y, z)] = true;
            expected_cells.insert((x, y, z));
        }
        assert_eq!(grid.flags(), oracle.as_slice());
        // Occupied-count conservation: one flag per distinct occupied cell.
        assert_eq!(grid.occupied_count(), expected_cells.len());
        assert!(grid.occupied_count() <= points.len());
    }

    #[test]
    fn out_of_view_cells_are_flagged() {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap();
        let mut grid = OccupancyGrid::empty(0.25, 4.0);
        flag_outside_view(&mut grid, &k, 10.0);
        // Straight ahead: visible, stays free.
        let ahead = grid.cell_of_point(&Point3::new(0.0, 2.0, 0.0)).unwrap();
        assert!(!grid.flag(ahead.0, ahead.1, ahead.2));
        // Lateral cell at the vehicle row: outside the forward cone.
        let beside = grid.cell_of_point(&Point3::new(2.0, 0.1, 0.0)).unwrap();
        assert!(grid.flag(beside.0, beside.1, beside.2));
        // Every free cell center projects into the image.
        let dims = grid.dims();
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    if grid.flag(x, y, z) {
                        continue;
                    }
                    let c = grid.cell_center((x, y, z));
                    assert!(c.y > 0.0);
                    let u = k.fx * c.x / c.y + k.cx;
                    let v = k.fy * (-c.z) / c.y + k.cy;
                    assert!(u >= 0.0 && u <= 127.0 && v >= 0.0 && v <= 95.0);
                }
            }
        }
    }

    #[test]
    fn pad_zero_is_identity() {
        let mut grid = OccupancyGrid::empty(0.5, 2.0);
        grid.set_flag(3, 3, 3, true);
        assert_eq!(pad_obstacles(&grid, 0), grid);
    }

    #[test]
    fn pad_one_sets_full_cube() {
        let mut grid = OccupancyGrid::empty(0.5, 2.0);
        grid.set_flag(4, 4, 4, true);
        let padded = pad_obstacles(&grid, 1);
        assert_eq!(padded.occupied_count(), 27);
        for z in 3..=5 {
            for y in 3..=5 {
                for x in 3..=5 {
                    assert!(padded.flag(x, y, z));
                }
            }
        }
    }

    #[test]
    fn pad_clips_at_borders() {
        let mut grid = OccupancyGrid::empty(0.5, 2.0);
        grid.set_flag(0, 0, 0, true);
        let padded = pad_obstacles(&grid, 1);
        assert_eq!(padded.occupied_count(), 8);
    }

    #[test]
    fn pad_matches_neighborhood_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let mut grid = OccupancyGrid::empty(0.5, 3.0);
        let dims = grid.dims();
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    if rng.gen_bool(0.05) {
                        grid.set_flag(x, y, z, true);
                    }
                }
            }
        }
        let pad = 2usize;
        let padded = pad_obstacles(&grid, pad);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let mut expected = false;
                    'scan: for dz in z.saturating_sub(pad)..=(z + pad).min(dims.nz - 1) {
                        for dy in y.saturating_sub(pad)..=(y + pad).min(dims.ny - 1) {
                            for dx in x.saturating_sub(pad)..=(x + pad).min(dims.nx - 1) {
                                if grid.flag(dx, dy, dz) {
                                    expected = true;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    assert_eq!(padded.flag(x, y, z), expected, "cell ({x}, {y}, {z})");
                }
            }
        }
    }

    #[test]
    fn exporters_emit_well_formed_pnm() {
        let mut grid = OccupancyGrid::empty(0.5, 2.0);
        grid.set_flag(2, 3, 4, true);
        let dims = grid.dims();

        let pgm = occupancy_slice_pgm(&grid, 4);
        let header = format!("P5\n{} {}\n255\n", dims.nx, dims.ny);
        assert!(pgm.starts_with(header.as_bytes()));
        assert_eq!(pgm.len(), header.len() + dims.nx * dims.ny);
        // Occupied cell (2, 3) lands at image row ny-1-3.
        let row = dims.ny - 1 - 3;
        assert_eq!(pgm[header.len() + row * dims.nx + 2], 255);

        let ppm = occupancy_path_ppm(&grid, 4, &[(1, 1, 0)]);
        let header6 = format!("P6\n{} {}\n255\n", dims.nx, dims.ny);
        assert_eq!(ppm.len(), header6.len() + dims.nx * dims.ny * 3);
        let path_row = dims.ny - 1 - 1;
        let offset = header6.len() + (path_row * dims.nx + 1) * 3;
        assert_eq!(&ppm[offset..offset + 3], &[255, 0, 0]);
    }

    proptest! {
        #[test]
        fn dilation_is_monotone_and_composes(seed in 0u64..100, a in 0usize..3, b in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut grid = OccupancyGrid::empty(0.5, 2.0);
            let dims = grid.dims();
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        if rng.gen_bool(0.08) {
                            grid.set_flag(x, y, z, true);
                        }
                    }
                }
            }
            let once = pad_obstacles(&grid, a);
            for (before, after) in grid.flags().iter().zip(once.flags()) {
                prop_assert!(!before || *after);
            }
            let twice = pad_obstacles(&once, b);
            let direct = pad_obstacles(&grid, a + b);
            prop_assert_eq!(twice, direct);
        }

        #[test]
        fn moving_a_point_less_than_resolution_changes_at_most_one_cell(
            seed in 0u64..200
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Point3::new(
                rng.gen_range(-1.9..1.9),
                rng.gen_range(0.1..3.9),
                rng.gen_range(-1.9..1.9),
            );
            let delta = Point3::new(
                rng.gen_range(-0.49..0.49),
                rng.gen_range(-0.09..0.09),
                rng.gen_range(-0.09..0.09),
            );
            let q = Point3::new(p.x + delta.x, p.y + delta.y, p.z + delta.z);
            let a = bin_points(&PointCloud { points: vec![p] }, 0.5, 2.0);
            let b = bin_points(&PointCloud { points: vec![q] }, 0.5, 2.0);
            let differing = a
                .flags()
                .iter()
                .zip(b.flags())
                .filter(|(x, y)| x != y)
                .count();
            prop_assert!(differing <= 2); // source cell and destination cell
        }
    }
}

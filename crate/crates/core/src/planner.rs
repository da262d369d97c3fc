//! Fast-marching path planner over the occupancy grid.
//!
//! The planner solves the Eikonal equation `|grad T| * F = 1` outward from
//! the goal with a first-order upwind scheme and a binary-heap narrow
//! band, then walks the steepest descent of the arrival-time field from
//! the vehicle cell. Obstacles carry speed zero, so their arrival time
//! stays infinite and paths cannot cross them. Three actions of each plan
//! are committed per cycle; the rest is replanned.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::VecDeque;

use nalgebra::Point3;
use thiserror::Error;

use crate::grid::{GridDims, OccupancyGrid};

/// Number of leading plan steps executed before replanning.
pub const COMMIT_STEPS: usize = 3;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("goal cell {0:?} lies inside an obstacle")]
    GoalInObstacle((usize, usize, usize)),
    #[error("grid contains no free cell")]
    NoFreeCell,
    #[error("start cell {0:?} is unreachable from the goal")]
    StartUnreachable((usize, usize, usize)),
    #[error("no strictly descending neighbor at {0:?}; arrival field is corrupted")]
    StuckAtLocalPlateau((usize, usize, usize)),
}

/// Per-cell propagation speed; obstacles are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedField {
    dims: GridDims,
    cell_size: f64,
    speed: Vec<f64>,
}

impl SpeedField {
    pub fn uniform(dims: GridDims, cell_size: f64) -> Self {
        assert!(cell_size > 0.0);
        Self { dims, cell_size, speed: vec![1.0; dims.cell_count()] }
    }

    /// Baseline cost function: unit speed on free cells, zero on occupied.
    pub fn from_occupancy(grid: &OccupancyGrid) -> Self {
        let dims = grid.dims();
        let speed = grid.flags().iter().map(|occ| if *occ { 0.0 } else { 1.0 }).collect();
        Self { dims, cell_size: grid.resolution(), speed }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn speed_at(&self, cell: (usize, usize, usize)) -> f64 {
        self.speed[self.dims.index(cell.0, cell.1, cell.2)]
    }

    pub fn set_speed(&mut self, cell: (usize, usize, usize), value: f64) {
        debug_assert!(value >= 0.0);
        let i = self.dims.index(cell.0, cell.1, cell.2);
        self.speed[i] = value;
    }

    pub fn is_free(&self, cell: (usize, usize, usize)) -> bool {
        self.speed_at(cell) > 0.0
    }
}

/// Shortest travel time from the goal per cell; obstacles and unreachable
/// cells hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalTimeField {
    dims: GridDims,
    cell_size: f64,
    times: Vec<f64>,
}

impl ArrivalTimeField {
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn time_at(&self, cell: (usize, usize, usize)) -> f64 {
        self.times[self.dims.index(cell.0, cell.1, cell.2)]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// Ordered cells of a planned route, excluding the start cell. Consecutive
/// entries are 26-neighborhood moves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionPlan {
    pub cells: Vec<(usize, usize, usize)>,
}

impl ActionPlan {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Min-heap entry; `total_cmp` gives a total order on finite times.
#[derive(Debug, Clone, Copy)]
struct BandEntry {
    time: f64,
    index: usize,
}

impl PartialEq for BandEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for BandEntry {}
impl PartialOrd for BandEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for BandEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we pop smallest time first;
        // ties pop the smallest index for determinism.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.index.cmp(&self.index))
    }
}

fn axis_neighbors(
    dims: &GridDims,
    cell: (usize, usize, usize),
) -> [[Option<(usize, usize, usize)>; 2]; 3] {
    let (x, y, z) = cell;
    [
        [
            (x > 0).then(|| (x - 1, y, z)),
            (x + 1 < dims.nx).then(|| (x + 1, y, z)),
        ],
        [
            (y > 0).then(|| (x, y - 1, z)),
            (y + 1 < dims.ny).then(|| (x, y + 1, z)),
        ],
        [
            (z > 0).then(|| (x, y, z - 1)),
            (z + 1 < dims.nz).then(|| (x, y, z + 1)),
        ],
    ]
}

/// Solves the upwind update `sum_axes max(0, T - a_i)^2 = (h/F)^2` for T,
/// where the `a_i` are per-axis minimum accepted neighbor times: the
/// largest quadratic root over the subset of axes whose `a_i` lie below
/// the solution.
fn solve_upwind(available: &mut [f64], h_over_f: f64) -> f64 {
    available.sort_by(f64::total_cmp);
    let mut k = available.len();
    while k > 0 {
        let slice = &available[..k];
        let sum: f64 = slice.iter().sum();
        let sum_sq: f64 = slice.iter().map(|a| a * a).sum();
        let kf = k as f64;
        let disc = sum * sum - kf * (sum_sq - h_over_f * h_over_f);
        if disc >= 0.0 {
            let t = (sum + disc.sqrt()) / kf;
            if t >= slice[k - 1] {
                return t;
            }
        }
        k -= 1;
    }
    f64::INFINITY
}

/// First-order upwind fast marching from `goal_cell`.
///
/// Accepted values are nondecreasing in acceptance order and every finite
/// cell satisfies its own update equation when recomputed from the final
/// field.
pub fn fmm_solve(
    speed: &SpeedField,
    goal_cell: (usize, usize, usize),
) -> Result<ArrivalTimeField, PlanError> {
    if !speed.is_free(goal_cell) {
        return Err(PlanError::GoalInObstacle(goal_cell));
    }
    let dims = speed.dims();
    let h = speed.cell_size();
    let n = dims.cell_count();
    let mut times = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut band = BinaryHeap::new();

    let goal_index = dims.index(goal_cell.0, goal_cell.1, goal_cell.2);
    times[goal_index] = 0.0;
    band.push(BandEntry { time: 0.0, index: goal_index });

    while let Some(entry) = band.pop() {
        if accepted[entry.index] {
            continue;
        }
        if entry.time > times[entry.index] {
            continue; // stale heap entry
        }
        accepted[entry.index] = true;
        let cell = dims.cell_of_index(entry.index);

        for axis in axis_neighbors(&dims, cell) {
            for neighbor in axis.into_iter().flatten() {
                let ni = dims.index(neighbor.0, neighbor.1, neighbor.2);
                if accepted[ni] {
                    continue;
                }
                let f = speed.speed_at(neighbor);
                if f <= 0.0 {
                    continue;
                }
                // Per-axis minima over accepted neighbors only.
                let mut available = Vec::with_capacity(3);
                for n_axis in axis_neighbors(&dims, neighbor) {
                    let mut best = f64::INFINITY;
                    for nn in n_axis.into_iter().flatten() {
                        let nni = dims.index(nn.0, nn.1, nn.2);
                        if accepted[nni] {
                            best = best.min(times[nni]);
                        }
                    }
                    if best.is_finite() {
                        available.push(best);
                    }
                }
                if available.is_empty() {
                    continue;
                }
                let t = solve_upwind(&mut available, h / f);
                if t < times[ni] {
                    times[ni] = t;
                    band.push(BandEntry { time: t, index: ni });
                }
            }
        }
    }

    Ok(ArrivalTimeField { dims, cell_size: h, times })
}

fn neighbors_26(
    dims: &GridDims,
    cell: (usize, usize, usize),
) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    let (x, y, z) = (cell.0 as isize, cell.1 as isize, cell.2 as isize);
    let (nx, ny, nz) = (dims.nx as isize, dims.ny as isize, dims.nz as isize);
    (-1isize..=1).flat_map(move |dz| {
        (-1isize..=1).flat_map(move |dy| {
            (-1isize..=1).filter_map(move |dx| {
                if dx == 0 && dy == 0 && dz == 0 {
                    return None;
                }
                let (cx, cy, cz) = (x + dx, y + dy, z + dz);
                (cx >= 0 && cx < nx && cy >= 0 && cy < ny && cz >= 0 && cz < nz)
                    .then(|| (cx as usize, cy as usize, cz as usize))
            })
        })
    })
}

/// Maps a body-frame goal into a grid cell.
///
/// A goal inside the covered extent returns its own cell; one outside is
/// projected onto the boundary cell pierced by the segment from the grid
/// center to the goal. If the resulting cell is occupied the nearest free
/// cell (breadth-first over the 26-neighborhood) is returned instead.
pub fn project_goal(
    goal: &Point3<f64>,
    grid: &OccupancyGrid,
) -> Result<(usize, usize, usize), PlanError> {
    debug_assert!(goal.coords.iter().all(|v| v.is_finite()));
    let candidate = match grid.cell_of_point(goal) {
        Some(cell) => cell,
        None => boundary_cell_toward(goal, grid),
    };
    if !grid.flag(candidate.0, candidate.1, candidate.2) {
        return Ok(candidate);
    }
    nearest_free_cell(grid, candidate).ok_or(PlanError::NoFreeCell)
}

/// Boundary cell pierced by the center-to-goal segment (parametric slab
/// clip against the grid extent).
fn boundary_cell_toward(goal: &Point3<f64>, grid: &OccupancyGrid) -> (usize, usize, usize) {
    let dims = grid.dims();
    let res = grid.resolution();
    let center = grid.extent_center();
    let dir = goal - center;
    let lo = grid.min_corner();
    let hi = Point3::new(
        lo.x + dims.nx as f64 * res,
        lo.y + dims.ny as f64 * res,
        lo.z + dims.nz as f64 * res,
    );

    let mut t_exit = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            continue;
        }
        let t0 = (lo[i] - center[i]) / dir[i];
        let t1 = (hi[i] - center[i]) / dir[i];
        t_exit = t_exit.min(t0.max(t1));
    }
    if !t_exit.is_finite() {
        // Goal coincides with the center; degenerate but representable.
        return clamp_cell(grid, &center);
    }
    let exit = center + dir * t_exit;
    clamp_cell(grid, &exit)
}

fn clamp_cell(grid: &OccupancyGrid, p: &Point3<f64>) -> (usize, usize, usize) {
    let dims = grid.dims();
    let res = grid.resolution();
    let min = grid.min_corner();
    let x = ((p.x - min.x) / res).floor().clamp(0.0, (dims.nx - 1) as f64) as usize;
    let y = ((p.y - min.y) / res).floor().clamp(0.0, (dims.ny - 1) as f64) as usize;
    let z = ((p.z - min.z) / res).floor().clamp(0.0, (dims.nz - 1) as f64) as usize;
    (x, y, z)
}

fn nearest_free_cell(
    grid: &OccupancyGrid,
    from: (usize, usize, usize),
) -> Option<(usize, usize, usize)> {
    let dims = grid.dims();
    let mut visited = vec![false; dims.cell_count()];
    let mut queue = VecDeque::new();
    visited[dims.index(from.0, from.1, from.2)] = true;
    queue.push_back(from);
    while let Some(cell) = queue.pop_front() {
        if !grid.flag(cell.0, cell.1, cell.2) {
            return Some(cell);
        }
        for n in neighbors_26(&dims, cell) {
            let i = dims.index(n.0, n.1, n.2);
            if !visited[i] {
                visited[i] = true;
                queue.push_back(n);
            }
        }
    }
    None
}

/// Greedy steepest descent on the arrival-time field from `start_cell` to
/// the goal (T = 0). Ties pick the smallest row-major index.
pub fn extract_path(
    field: &ArrivalTimeField,
    start_cell: (usize, usize, usize),
) -> Result<ActionPlan, PlanError> {
    let dims = field.dims();
    if !field.time_at(start_cell).is_finite() {
        return Err(PlanError::StartUnreachable(start_cell));
    }
    let mut cells = Vec::new();
    let mut current = start_cell;
    let budget = dims.cell_count();
    while field.time_at(current) > 0.0 {
        let here = field.time_at(current);
        let mut best: Option<(f64, usize, (usize, usize, usize))> = None;
        for n in neighbors_26(&dims, current) {
            let t = field.time_at(n);
            if !t.is_finite() {
                continue;
            }
            let idx = dims.index(n.0, n.1, n.2);
            let better = match best {
                None => true,
                Some((bt, bi, _)) => t < bt || (t == bt && idx < bi),
            };
            if better {
                best = Some((t, idx, n));
            }
        }
        match best {
            Some((t, _, cell)) if t < here => {
                cells.push(cell);
                current = cell;
            }
            _ => return Err(PlanError::StuckAtLocalPlateau(current)),
        }
        if cells.len() > budget {
            return Err(PlanError::StuckAtLocalPlateau(current));
        }
    }
    Ok(ActionPlan { cells })
}

/// The committed prefix: at most [`COMMIT_STEPS`] leading steps; the rest
/// of the plan is discarded and replanned next cycle.
pub fn commit_actions(plan: &ActionPlan) -> &[(usize, usize, usize)] {
    &plan.cells[..plan.cells.len().min(COMMIT_STEPS)]
}

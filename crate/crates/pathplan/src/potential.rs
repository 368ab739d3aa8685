//! Grid potential guidance field.
//!
//! The field is built in three steps: rasterize obstacles (inflated by the
//! footprint circle radius) onto a 0.2 m grid, trace a shortest reference
//! path with Dijkstra over free cells, then expand potential values from the
//! whole reference path into the rest of the grid with a multi-source
//! wavefront relaxation that adds a large penalty for entering occupied
//! cells. The result is a valley of low potential along the reference path
//! with steep walls inside obstacles, evaluated continuously by bilinear
//! interpolation.

use crate::geometry::{Path, Point2};
use crate::scenario::Scenario;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("no free-cell path between start and goal")]
    Unreachable,
    #[error("reference path is empty")]
    EmptyReferencePath,
    #[error("point ({0}, {1}) outside the interpolable field region")]
    OutOfBounds(f64, f64),
}

/// 8-connected neighbor offsets, fixed iteration order.
const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Canonical move cost between 8-neighbors: `resolution` along an axis,
/// `resolution * sqrt(2)` on a diagonal. Used everywhere a grid edge is
/// weighed so costs compare bit-exactly.
pub fn step_cost(resolution: f64, dx: i64, dy: i64) -> f64 {
    if dx != 0 && dy != 0 {
        resolution * std::f64::consts::SQRT_2
    } else {
        resolution
    }
}

/// Cost of a cell path under the canonical step weights.
pub fn reference_path_cost(resolution: f64, cells: &[(usize, usize)]) -> f64 {
    cells
        .windows(2)
        .map(|w| {
            let dx = w[1].0 as i64 - w[0].0 as i64;
            let dy = w[1].1 as i64 - w[0].1 as i64;
            step_cost(resolution, dx, dy)
        })
        .sum()
}

/// Scalar potential plus occupancy on a regular grid. Cell `(ix, iy)` is
/// centered at `origin + ((ix + 0.5) * res, (iy + 0.5) * res)`; the linear
/// index `iy * width + ix` defines the lexicographic cell order used for
/// deterministic tie-breaking.
#[derive(Debug, Clone)]
pub struct GridField {
    pub origin: Point2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Potential per cell; `f64::INFINITY` marks never-reached cells.
    pub values: Vec<f64>,
    pub occupancy: Vec<bool>,
}

/// Weights of the bilinear-interpolated guidance loss.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PotentialLossConfig {
    /// Weight of the local attraction term; must be positive.
    pub beta: f64,
    /// Neighborhood radius in cells (1 = the 3x3 block).
    pub neighborhood_radius: usize,
}

impl Default for PotentialLossConfig {
    fn default() -> Self {
        PotentialLossConfig {
            beta: 1.0,
            neighborhood_radius: 1,
        }
    }
}

impl GridField {
    /// Empty all-free field covering a world rectangle.
    pub fn empty(width_m: f64, height_m: f64, resolution: f64) -> Self {
        assert!(resolution > 0.0);
        let width = ((width_m / resolution) - 1e-9).ceil() as usize;
        let height = ((height_m / resolution) - 1e-9).ceil() as usize;
        GridField {
            origin: Point2::ZERO,
            resolution,
            width,
            height,
            values: vec![f64::INFINITY; width * height],
            occupancy: vec![false; width * height],
        }
    }

    /// Marks cells whose center lies within `inflation` of any obstacle.
    pub fn rasterize(scenario: &Scenario, resolution: f64, inflation: f64) -> Self {
        let mut field = GridField::empty(scenario.world.width, scenario.world.height, resolution);
        let boxes: Vec<(Point2, Point2)> = scenario
            .obstacles
            .iter()
            .map(|o| {
                let (lo, hi) = o.aabb();
                (
                    lo - Point2::new(inflation, inflation),
                    hi + Point2::new(inflation, inflation),
                )
            })
            .collect();
        for iy in 0..field.height {
            for ix in 0..field.width {
                let c = field.cell_center(ix, iy);
                let hit = scenario.obstacles.iter().zip(boxes.iter()).any(|(o, (lo, hi))| {
                    c.x >= lo.x
                        && c.x <= hi.x
                        && c.y >= lo.y
                        && c.y <= hi.y
                        && o.distance_to(c) <= inflation
                });
                if hit {
                    field.occupancy[iy * field.width + ix] = true;
                }
            }
        }
        field
    }

    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell whose center is nearest to `p`, clamped to the grid.
    pub fn nearest_cell(&self, p: Point2) -> (usize, usize) {
        let fx = (p.x - self.origin.x) / self.resolution - 0.5;
        let fy = (p.y - self.origin.y) / self.resolution - 0.5;
        let ix = fx.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let iy = fy.round().clamp(0.0, (self.height - 1) as f64) as usize;
        (ix, iy)
    }

    pub fn is_free(&self, ix: usize, iy: usize) -> bool {
        !self.occupancy[self.idx(ix, iy)]
    }

    /// Inclusive rectangle of points where bilinear interpolation is defined
    /// (the convex hull of cell centers).
    pub fn interp_bounds(&self) -> (Point2, Point2) {
        (
            self.cell_center(0, 0),
            self.cell_center(self.width - 1, self.height - 1),
        )
    }

    /// Bilinear interpolation of the potential and its exact in-cell
    /// gradient. The surface is piecewise bilinear; the gradient jumps
    /// across cell-center grid lines.
    pub fn interp(&self, p: Point2) -> Result<(f64, Point2), FieldError> {
        let gx = (p.x - self.origin.x) / self.resolution - 0.5;
        let gy = (p.y - self.origin.y) / self.resolution - 0.5;
        if gx < 0.0 || gy < 0.0 || gx > (self.width - 1) as f64 || gy > (self.height - 1) as f64 {
            return Err(FieldError::OutOfBounds(p.x, p.y));
        }
        let ix = (gx.floor() as usize).min(self.width - 2);
        let iy = (gy.floor() as usize).min(self.height - 2);
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let v00 = self.values[self.idx(ix, iy)];
        let v10 = self.values[self.idx(ix + 1, iy)];
        let v01 = self.values[self.idx(ix, iy + 1)];
        let v11 = self.values[self.idx(ix + 1, iy + 1)];
        let value = v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy;
        let gx_val = ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy) / self.resolution;
        let gy_val = ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx) / self.resolution;
        Ok((value, Point2::new(gx_val, gy_val)))
    }
}

/// Total order on (cost, linear index) for deterministic queue pops.
#[derive(PartialEq)]
struct QueueEntry(f64, usize);

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .partial_cmp(&other.0)
            .expect("costs are finite")
            .then(self.1.cmp(&other.1))
    }
}

/// Shortest free-cell path from `start` to `goal` with 8-connectivity and
/// Euclidean center-distance edge costs. Cost ties are resolved toward the
/// lexicographically smaller predecessor so the returned path is unique.
pub fn dijkstra_reference(
    field: &GridField,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<Vec<(usize, usize)>, FieldError> {
    let (w, h) = (field.width, field.height);
    if !field.is_free(start.0, start.1) || !field.is_free(goal.0, goal.1) {
        return Err(FieldError::Unreachable);
    }
    let start_idx = field.idx(start.0, start.1);
    let goal_idx = field.idx(goal.0, goal.1);
    let mut dist = vec![f64::INFINITY; w * h];
    let mut pred = vec![usize::MAX; w * h];
    let mut heap = BinaryHeap::new();
    dist[start_idx] = 0.0;
    heap.push(Reverse(QueueEntry(0.0, start_idx)));
    while let Some(Reverse(QueueEntry(d, idx))) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        if idx == goal_idx {
            break;
        }
        let (ix, iy) = (idx % w, idx / w);
        for (dx, dy) in NEIGHBORS {
            let nx = ix as i64 + dx;
            let ny = iy as i64 + dy;
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !field.is_free(nx, ny) {
                continue;
            }
            let nidx = field.idx(nx, ny);
            let nd = d + step_cost(field.resolution, dx, dy);
            if nd < dist[nidx] || (nd == dist[nidx] && idx < pred[nidx]) {
                dist[nidx] = nd;
                pred[nidx] = idx;
                heap.push(Reverse(QueueEntry(nd, nidx)));
            }
        }
    }
    if dist[goal_idx].is_infinite() {
        return Err(FieldError::Unreachable);
    }
    let mut cells = Vec::new();
    let mut cur = goal_idx;
    loop {
        cells.push((cur % w, cur / w));
        if cur == start_idx {
            break;
        }
        cur = pred[cur];
    }
    cells.reverse();
    Ok(cells)
}

/// Expands potential from the reference path into the whole grid.
///
/// Reference cells are seeded with their along-path distance to the goal
/// cell (the last element of `reference`); every other cell receives
/// `min(V(cur) + step + penalty_if_occupied(next))` through exhaustive
/// priority-queue relaxation, so the final field satisfies the relaxation
/// fixed point for every neighbor pair. Occupied cells are expanded through,
/// not around, which is what raises the potential plateau inside obstacles.
pub fn propagate_wavefront(
    field: &mut GridField,
    reference: &[(usize, usize)],
    v_obs_penalty: f64,
) -> Result<(), FieldError> {
    if reference.is_empty() {
        return Err(FieldError::EmptyReferencePath);
    }
    let (w, h) = (field.width, field.height);
    field.values.iter_mut().for_each(|v| *v = f64::INFINITY);
    let mut heap = BinaryHeap::new();

    // geodesic seed values, accumulated backward from the goal end
    let mut seed = vec![0.0; reference.len()];
    for i in (0..reference.len().saturating_sub(1)).rev() {
        let dx = reference[i + 1].0 as i64 - reference[i].0 as i64;
        let dy = reference[i + 1].1 as i64 - reference[i].1 as i64;
        seed[i] = seed[i + 1] + step_cost(field.resolution, dx, dy);
    }
    for (cell, value) in reference.iter().zip(seed) {
        let idx = field.idx(cell.0, cell.1);
        if value < field.values[idx] {
            field.values[idx] = value;
            heap.push(Reverse(QueueEntry(value, idx)));
        }
    }

    while let Some(Reverse(QueueEntry(d, idx))) = heap.pop() {
        if d > field.values[idx] {
            continue;
        }
        let (ix, iy) = (idx % w, idx / w);
        for (dx, dy) in NEIGHBORS {
            let nx = ix as i64 + dx;
            let ny = iy as i64 + dy;
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let nidx = ny as usize * w + nx as usize;
            let penalty = if field.occupancy[nidx] { v_obs_penalty } else { 0.0 };
            let nd = d + step_cost(field.resolution, dx, dy) + penalty;
            if nd < field.values[nidx] {
                field.values[nidx] = nd;
                heap.push(Reverse(QueueEntry(nd, nidx)));
            }
        }
    }
    Ok(())
}

/// Guidance loss over a path: mean of interpolated potential plus a
/// quadratic pull toward the lowest-potential free cell in the 3x3 (by
/// default) neighborhood of each waypoint's cell. Waypoint 0 is excluded.
/// Returns the loss and one gradient entry per waypoint; the attraction
/// target is held fixed within one evaluation, so the gradient is the
/// subgradient that treats the selected cell as constant.
pub fn potential_loss(
    path: &Path,
    field: &GridField,
    config: &PotentialLossConfig,
) -> Result<(f64, Vec<Point2>), FieldError> {
    let t_count = path.segments();
    let mut grads = vec![Point2::ZERO; t_count + 1];
    let mut total = 0.0;
    for t in 1..=t_count {
        let p = path.waypoints[t];
        let (v, gv) = field.interp(p)?;
        let u = attraction_cell(field, p, config.neighborhood_radius);
        let d = p - u;
        total += v + config.beta * d.norm_sq();
        grads[t] = (gv + d * (2.0 * config.beta)) * (1.0 / t_count as f64);
    }
    Ok((total / t_count as f64, grads))
}

/// Center of the lowest-potential free cell in the neighborhood of `p`'s
/// nearest cell; ties resolve by squared distance to `p`, then by linear
/// cell index. Falls back to all neighborhood cells when none is free.
pub fn attraction_cell(field: &GridField, p: Point2, radius: usize) -> Point2 {
    let (cx, cy) = field.nearest_cell(p);
    let r = radius as i64;
    let mut best: Option<(f64, f64, usize)> = None; // (V, dist_sq, idx)
    let mut best_center = Point2::ZERO;
    for pass in 0..2 {
        for dy in -r..=r {
            for dx in -r..=r {
                let nx = cx as i64 + dx;
                let ny = cy as i64 + dy;
                if nx < 0 || ny < 0 || nx >= field.width as i64 || ny >= field.height as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if pass == 0 && !field.is_free(nx, ny) {
                    continue;
                }
                let idx = field.idx(nx, ny);
                let center = field.cell_center(nx, ny);
                let key = (field.values[idx], (p - center).norm_sq(), idx);
                let better = match &best {
                    None => true,
                    Some(b) => key < *b,
                };
                if better {
                    best = Some(key);
                    best_center = center;
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    best_center
}

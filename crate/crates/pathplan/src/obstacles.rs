//! Convex quadrilateral obstacles and their smoothed signed-distance field.
//!
//! Each obstacle is the intersection of four half-planes with unit inward
//! normals, so `l(p) = normal . p + offset` is a metric signed distance to
//! the edge line (positive inside the obstacle's side). A log-sum-exp
//! soft-min over an obstacle's half-planes approximates penetration depth,
//! and a soft-max over obstacles aggregates the set into one smooth scalar
//! field that is negative exactly where the point is safely outside.

use crate::geometry::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObstacleError {
    #[error("vertices do not form a convex polygon traversed in one direction")]
    NonConvexInput,
    #[error("edge {0} is shorter than 1e-9 m")]
    DegenerateEdge(usize),
    #[error("obstacle set is empty")]
    EmptyObstacleSet,
}

/// Half-plane `normal . p + offset >= 0`, with `|normal| = 1`. The positive
/// side is the obstacle interior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: Point2,
    pub offset: f64,
}

impl HalfPlane {
    /// Signed distance to the edge line, positive toward the interior.
    pub fn eval(&self, p: Point2) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Smoothing sharpness for the log-sum-exp field. Larger alpha tracks the
/// exact min/max more closely at the cost of steeper gradients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LseConfig {
    pub alpha: f64,
}

impl Default for LseConfig {
    fn default() -> Self {
        LseConfig { alpha: 10.0 }
    }
}

/// Convex quadrilateral, vertices in counterclockwise order with the four
/// inward half-planes cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexObstacle {
    pub vertices: [Point2; 4],
    pub halfplanes: [HalfPlane; 4],
}

/// Builds the four inward half-planes of a convex quadrilateral given in
/// counterclockwise order. Normals are normalized to unit length so each
/// `l` is a true signed distance.
pub fn halfplanes_from_quad(vertices: &[Point2; 4]) -> Result<[HalfPlane; 4], ObstacleError> {
    // convexity: all consecutive edge cross products strictly positive (CCW)
    for i in 0..4 {
        let a = vertices[i];
        let b = vertices[(i + 1) % 4];
        let c = vertices[(i + 2) % 4];
        if (b - a).cross(c - b) <= 0.0 {
            return Err(ObstacleError::NonConvexInput);
        }
    }
    let mut planes = [HalfPlane {
        normal: Point2::ZERO,
        offset: 0.0,
    }; 4];
    for i in 0..4 {
        let a = vertices[i];
        let b = vertices[(i + 1) % 4];
        let edge = b - a;
        let len = edge.norm();
        if len < 1e-9 {
            return Err(ObstacleError::DegenerateEdge(i));
        }
        // left of a CCW edge is the interior
        let normal = Point2::new(-edge.y / len, edge.x / len);
        planes[i] = HalfPlane {
            normal,
            offset: -normal.dot(a),
        };
    }
    Ok(planes)
}

impl ConvexObstacle {
    /// Validates convexity and caches the half-planes. Clockwise input is
    /// accepted and reversed to the canonical counterclockwise order.
    pub fn from_vertices(vertices: [Point2; 4]) -> Result<Self, ObstacleError> {
        let ccw = match halfplanes_from_quad(&vertices) {
            Ok(planes) => {
                return Ok(ConvexObstacle {
                    vertices,
                    halfplanes: planes,
                })
            }
            Err(ObstacleError::NonConvexInput) => {
                let mut rev = vertices;
                rev.reverse();
                rev
            }
            Err(e) => return Err(e),
        };
        let planes = halfplanes_from_quad(&ccw)?;
        Ok(ConvexObstacle {
            vertices: ccw,
            halfplanes: planes,
        })
    }

    /// True when `p` lies inside or on the boundary.
    pub fn contains(&self, p: Point2) -> bool {
        self.halfplanes.iter().all(|h| h.eval(p) >= 0.0)
    }

    /// Exact Euclidean distance from `p` to the polygon (0 inside).
    /// Vertex/edge arithmetic only; independent of the smoothed field.
    pub fn distance_to(&self, p: Point2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % 4];
            best = best.min(point_segment_distance(p, a, b));
        }
        best
    }

    /// Axis-aligned bounding box (min, max).
    pub fn aabb(&self) -> (Point2, Point2) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }
}

/// Distance from a point to a segment.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq < 1e-18 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Smoothed penetration depth of one obstacle:
/// `-(1/alpha) * log(sum_m exp(-alpha * l_m(p)))`, computed with the
/// max-shift trick. Approaches `min_m l_m` from below as alpha grows.
pub fn obstacle_softmin(p: Point2, obs: &ConvexObstacle, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    let mut l = [0.0f64; 4];
    for (i, h) in obs.halfplanes.iter().enumerate() {
        l[i] = h.eval(p);
    }
    let l_min = l.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum: f64 = l.iter().map(|&v| (-alpha * (v - l_min)).exp()).sum();
    l_min - sum.ln() / alpha
}

/// Smoothed maximum of per-obstacle depths over the whole set:
/// `(1/alpha) * log(sum_j exp(alpha * c_j(p)))`. Negative values certify
/// clearance from every obstacle up to the log(N)/alpha smoothing slack.
pub fn c_obs(p: Point2, obstacles: &[ConvexObstacle], alpha: f64) -> Result<f64, ObstacleError> {
    if obstacles.is_empty() {
        return Err(ObstacleError::EmptyObstacleSet);
    }
    let mut c_max = f64::NEG_INFINITY;
    let cs: Vec<f64> = obstacles
        .iter()
        .map(|obs| {
            let c = obstacle_softmin(p, obs, alpha);
            c_max = c_max.max(c);
            c
        })
        .collect();
    let sum: f64 = cs.iter().map(|&c| (alpha * (c - c_max)).exp()).sum();
    Ok(c_max + sum.ln() / alpha)
}

/// Analytic spatial gradient of [`c_obs`]: softmax weights over obstacles
/// chained with softmin weights over each obstacle's half-plane normals.
pub fn c_obs_gradient(
    p: Point2,
    obstacles: &[ConvexObstacle],
    alpha: f64,
) -> Result<Point2, ObstacleError> {
    c_obs_with_gradient(p, obstacles, alpha).map(|(_, g)| g)
}

/// Value and gradient of [`c_obs`] in one pass.
pub fn c_obs_with_gradient(
    p: Point2,
    obstacles: &[ConvexObstacle],
    alpha: f64,
) -> Result<(f64, Point2), ObstacleError> {
    if obstacles.is_empty() {
        return Err(ObstacleError::EmptyObstacleSet);
    }
    let mut cs = Vec::with_capacity(obstacles.len());
    let mut grads = Vec::with_capacity(obstacles.len());
    let mut c_max = f64::NEG_INFINITY;
    for obs in obstacles {
        let mut l = [0.0f64; 4];
        for (i, h) in obs.halfplanes.iter().enumerate() {
            l[i] = h.eval(p);
        }
        let l_min = l.iter().cloned().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = l.iter().map(|&v| (-alpha * (v - l_min)).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let c = l_min - wsum.ln() / alpha;
        // grad c_j = sum_m softmin_weight_m * normal_m
        let mut g = Point2::ZERO;
        for (w, h) in weights.iter().zip(obs.halfplanes.iter()) {
            g = g + h.normal * (w / wsum);
        }
        c_max = c_max.max(c);
        cs.push(c);
        grads.push(g);
    }
    let exps: Vec<f64> = cs.iter().map(|&c| (alpha * (c - c_max)).exp()).collect();
    let esum: f64 = exps.iter().sum();
    let value = c_max + esum.ln() / alpha;
    let mut grad = Point2::ZERO;
    for (e, g) in exps.iter().zip(grads.iter()) {
        grad = grad + *g * (e / esum);
    }
    Ok((value, grad))
}

//! Geometric primitives: points, vehicle footprint, discrete curvature,
//! path objectives.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Squared distances are floored at this value inside curvature ratios so
/// the squared-curvature expression stays finite on degenerate triples.
pub const DIST_SQ_FLOOR: f64 = 1e-12;

/// Pairwise distances below this count as degenerate for curvature purposes.
pub const DEGENERATE_DIST: f64 = 1e-9;

/// 2D point / vector, coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Vehicle geometry. Curvature limit and footprint circle radius are derived
/// from the primary dimensions and never stored stale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleSpec {
    /// Wheelbase in meters.
    pub wheelbase: f64,
    /// Body width in meters.
    pub width: f64,
    /// Overall footprint length in meters (wheelbase plus overhang).
    pub footprint_length: f64,
    /// Maximum steering angle in radians, within (0, pi/2).
    pub max_steer: f64,
}

impl VehicleSpec {
    pub fn new(wheelbase: f64, width: f64, footprint_length: f64, max_steer: f64) -> Self {
        assert!(wheelbase > 0.0, "wheelbase must be positive");
        assert!(width > 0.0, "width must be positive");
        assert!(footprint_length > 0.0, "footprint length must be positive");
        assert!(
            max_steer > 0.0 && max_steer < std::f64::consts::FRAC_PI_2,
            "max steer must be in (0, pi/2)"
        );
        VehicleSpec {
            wheelbase,
            width,
            footprint_length,
            max_steer,
        }
    }

    /// Curvature bound tan(max_steer) / wheelbase.
    pub fn kappa_max(&self) -> f64 {
        self.max_steer.tan() / self.wheelbase
    }

    /// Radius of the three covering circles: each circle must contain one
    /// third of the footprint rectangle, i.e. a (length/3) x width box.
    pub fn circle_radius(&self) -> f64 {
        let half_len = self.footprint_length / 6.0;
        let half_wid = self.width / 2.0;
        (half_len * half_len + half_wid * half_wid).sqrt()
    }

    /// Longitudinal offsets of the covering circle centers from the waypoint.
    pub fn circle_offsets(&self) -> [f64; 3] {
        let o = self.footprint_length / 3.0;
        [-o, 0.0, o]
    }
}

impl Default for VehicleSpec {
    /// Passenger-car scale: 2.8 m wheelbase, 1.9 m width, 4.2 m footprint,
    /// 0.70 rad steering limit.
    fn default() -> Self {
        VehicleSpec::new(2.8, 1.9, 4.2, 0.70)
    }
}

/// Waypoint sequence. Index 0 is the start position; `segments() >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Point2>,
}

impl Path {
    pub fn new(waypoints: Vec<Point2>) -> Self {
        assert!(waypoints.len() >= 3, "path needs at least 3 waypoints");
        Path { waypoints }
    }

    /// Number of segments T (waypoint count minus one).
    pub fn segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn total_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .sum()
    }

    /// Largest consecutive-waypoint spacing.
    pub fn max_spacing(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .fold(0.0, f64::max)
    }

    /// Largest absolute Menger curvature over interior waypoints.
    pub fn max_abs_curvature(&self) -> f64 {
        (1..self.segments())
            .map(|t| {
                menger_curvature(
                    self.waypoints[t - 1],
                    self.waypoints[t],
                    self.waypoints[t + 1],
                )
            })
            .fold(0.0, f64::max)
    }
}

/// Menger curvature of three consecutive points: inverse circumradius,
/// 4 * |triangle area| / (d01 * d12 * d02). Returns 0 for collinear points
/// or when any pairwise distance falls below [`DEGENERATE_DIST`].
pub fn menger_curvature(p0: Point2, p1: Point2, p2: Point2) -> f64 {
    let d01 = p0.dist(p1);
    let d12 = p1.dist(p2);
    let d02 = p0.dist(p2);
    if d01 < DEGENERATE_DIST || d12 < DEGENERATE_DIST || d02 < DEGENERATE_DIST {
        return 0.0;
    }
    let cross = (p1 - p0).cross(p2 - p0);
    // 4 * |area| = 2 * |cross|
    2.0 * cross.abs() / (d01 * d12 * d02)
}

/// Curvature bound from vehicle geometry, tan(max_steer) / wheelbase.
pub fn kappa_max_from_vehicle(spec: &VehicleSpec) -> f64 {
    spec.kappa_max()
}

/// Squared Menger curvature with floored squared distances, plus its
/// gradient with respect to the three points. The floor keeps the value and
/// gradient finite on near-degenerate triples; a collinear triple gives
/// exactly zero with zero gradient.
pub fn curvature_sq_grad(p0: Point2, p1: Point2, p2: Point2) -> (f64, [Point2; 3]) {
    let cross = (p1 - p0).cross(p2 - p0);
    let d01 = (p1 - p0).norm_sq().max(DIST_SQ_FLOOR);
    let d12 = (p2 - p1).norm_sq().max(DIST_SQ_FLOOR);
    let d02 = (p2 - p0).norm_sq().max(DIST_SQ_FLOOR);
    let denom = d01 * d12 * d02;
    let value = 4.0 * cross * cross / denom;

    // d(cross)/d(points)
    let dc0 = Point2::new(p1.y - p2.y, p2.x - p1.x);
    let dc1 = Point2::new(p2.y - p0.y, p0.x - p2.x);
    let dc2 = Point2::new(p0.y - p1.y, p1.x - p0.x);

    // d(dij)/d(points); zero where the floor is active.
    let g01 = if (p1 - p0).norm_sq() > DIST_SQ_FLOOR {
        (p1 - p0) * 2.0
    } else {
        Point2::ZERO
    };
    let g12 = if (p2 - p1).norm_sq() > DIST_SQ_FLOOR {
        (p2 - p1) * 2.0
    } else {
        Point2::ZERO
    };
    let g02 = if (p2 - p0).norm_sq() > DIST_SQ_FLOOR {
        (p2 - p0) * 2.0
    } else {
        Point2::ZERO
    };

    let k_num = 8.0 * cross / denom;
    let k_den = value / denom;
    // quotient rule per point; dij gradients enter with the sign of the
    // endpoint's role in the difference.
    let grad0 = dc0 * k_num - (-g01 * d12 * d02 + -g02 * d01 * d12) * k_den;
    let grad1 = dc1 * k_num - (g01 * d12 * d02 + -g12 * d01 * d02) * k_den;
    let grad2 = dc2 * k_num - (g12 * d01 * d02 + g02 * d01 * d12) * k_den;
    (value, [grad0, grad1, grad2])
}

/// Waypoint indices whose difference defines the heading at waypoint `t`:
/// central difference for interior waypoints, one-sided at the endpoints.
pub fn heading_ref_indices(t: usize, segments: usize) -> (usize, usize) {
    if t == 0 {
        (0, 1)
    } else if t == segments {
        (segments - 1, segments)
    } else {
        (t - 1, t + 1)
    }
}

/// Heading angle at waypoint `t` from the central/one-sided difference.
/// A zero-length difference falls back to heading 0.
pub fn heading_at(path: &Path, t: usize) -> f64 {
    let (a, b) = heading_ref_indices(t, path.segments());
    let d = path.waypoints[b] - path.waypoints[a];
    if d.norm() < DEGENERATE_DIST {
        0.0
    } else {
        d.y.atan2(d.x)
    }
}

/// Centers of the three covering circles at waypoint `t`, spaced along the
/// estimated heading.
pub fn covering_circle_centers(path: &Path, t: usize, spec: &VehicleSpec) -> [Point2; 3] {
    let theta = heading_at(path, t);
    let u = Point2::new(theta.cos(), theta.sin());
    let p = path.waypoints[t];
    let offs = spec.circle_offsets();
    [p + u * offs[0], p + u * offs[1], p + u * offs[2]]
}

/// Total length objective and squared terminal deviation from `target`.
pub fn path_objectives(path: &Path, target: Point2) -> (f64, f64) {
    let j_len = path.total_length();
    let last = *path.waypoints.last().expect("non-empty path");
    let j_goal = (last - target).norm_sq();
    (j_len, j_goal)
}

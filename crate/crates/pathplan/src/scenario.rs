//! Scenario generation and on-disk format.
//!
//! A scenario is a rectangular world with a fixed start pose, a goal drawn
//! from a target region on the right, and randomly placed rotated-rectangle
//! obstacles. Generation is fully determined by the seed: all draws come
//! from one PCG-XSH-RR 64/32 stream ([`crate::rng::STREAM_SCENARIO`]) in a
//! fixed order — goal x, goal y, then per obstacle attempt the side lengths,
//! rotation, and center fractions (five draws per attempt, consumed whether
//! or not the attempt is accepted).

use crate::geometry::Point2;
use crate::obstacles::{ConvexObstacle, ObstacleError};
use crate::rng::{Pcg32, STREAM_SCENARIO};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path as FsPath;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("obstacle placement failed after {0} attempts")]
    GenerationFailed(usize),
}

const SCHEMA_VERSION: u64 = 1;

/// Rectangular world anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub width: f64,
    pub height: f64,
}

impl World {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

/// One planning problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world: World,
    pub start: Point2,
    pub start_heading: f64,
    pub goal: Point2,
    pub obstacles: Vec<ConvexObstacle>,
    pub seed: u64,
}

/// Generation parameters. Defaults: 40 x 20 m world, 8 obstacles with sides
/// uniform in [1, 4] m, start at (2, 10) heading +x, goals in the strip
/// x in [36, 38], y in [2, 18].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub world: World,
    pub n_obs: usize,
    pub side_min: f64,
    pub side_max: f64,
    pub start: Point2,
    pub start_heading: f64,
    pub goal_x: (f64, f64),
    pub goal_y: (f64, f64),
    /// Required clearance around start and goal; must cover the planner's
    /// inflated-grid radius so the endpoint cells stay free.
    pub clearance_radius: f64,
    /// Placement attempts per obstacle before giving up.
    pub max_attempts: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            world: World {
                width: 40.0,
                height: 20.0,
            },
            n_obs: 8,
            side_min: 1.0,
            side_max: 4.0,
            start: Point2::new(2.0, 10.0),
            start_heading: 0.0,
            goal_x: (36.0, 38.0),
            goal_y: (2.0, 18.0),
            clearance_radius: 2.4,
            max_attempts: 200,
        }
    }
}

/// Separating-axis overlap test for two convex polygons.
fn convex_overlap(a: &[Point2], b: &[Point2]) -> bool {
    for (poly, other) in [(a, b), (b, a)] {
        for i in 0..poly.len() {
            let p0 = poly[i];
            let p1 = poly[(i + 1) % poly.len()];
            let axis = Point2::new(-(p1.y - p0.y), p1.x - p0.x);
            let project = |pts: &[Point2]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &p in pts {
                    let v = axis.dot(p);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            };
            let (alo, ahi) = project(poly);
            let (blo, bhi) = project(other);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

/// Generates a scenario from a seed. Obstacles overlapping the start disk,
/// the goal disk, or the goal region strip are rejected and resampled;
/// obstacles may overlap each other.
pub fn generate(seed: u64, params: &GenParams) -> Result<Scenario, ScenarioError> {
    let mut rng = Pcg32::new(seed, STREAM_SCENARIO);
    let world = params.world;
    let goal = Point2::new(
        rng.uniform(params.goal_x.0, params.goal_x.1),
        rng.uniform(params.goal_y.0, params.goal_y.1),
    );
    let goal_strip = [
        Point2::new(params.goal_x.0, params.goal_y.0),
        Point2::new(params.goal_x.1, params.goal_y.0),
        Point2::new(params.goal_x.1, params.goal_y.1),
        Point2::new(params.goal_x.0, params.goal_y.1),
    ];

    let mut obstacles = Vec::with_capacity(params.n_obs);
    for _ in 0..params.n_obs {
        let mut placed = false;
        for _attempt in 0..params.max_attempts {
            let a = rng.uniform(params.side_min, params.side_max);
            let b = rng.uniform(params.side_min, params.side_max);
            let phi = rng.uniform(0.0, std::f64::consts::PI);
            let ux = rng.next_f64();
            let uy = rng.next_f64();

            let (c, s) = (phi.cos(), phi.sin());
            let hx = (a / 2.0) * c.abs() + (b / 2.0) * s.abs();
            let hy = (a / 2.0) * s.abs() + (b / 2.0) * c.abs();
            if 2.0 * hx >= world.width || 2.0 * hy >= world.height {
                continue; // cannot fit at this rotation
            }
            let center = Point2::new(
                hx + ux * (world.width - 2.0 * hx),
                hy + uy * (world.height - 2.0 * hy),
            );
            let local = [
                Point2::new(-a / 2.0, -b / 2.0),
                Point2::new(a / 2.0, -b / 2.0),
                Point2::new(a / 2.0, b / 2.0),
                Point2::new(-a / 2.0, b / 2.0),
            ];
            let mut verts = [Point2::ZERO; 4];
            for (v, l) in verts.iter_mut().zip(local.iter()) {
                *v = center + Point2::new(c * l.x - s * l.y, s * l.x + c * l.y);
            }
            let obstacle = ConvexObstacle::from_vertices(verts)
                .expect("rotated rectangle is always convex");

            if obstacle.distance_to(params.start) < params.clearance_radius
                || obstacle.distance_to(goal) < params.clearance_radius
                || convex_overlap(&obstacle.vertices, &goal_strip)
            {
                continue;
            }
            obstacles.push(obstacle);
            placed = true;
            break;
        }
        if !placed {
            return Err(ScenarioError::GenerationFailed(params.max_attempts));
        }
    }

    Ok(Scenario {
        world,
        start: params.start,
        start_heading: params.start_heading,
        goal,
        obstacles,
        seed,
    })
}

/// Formats a float with 17 significant digits, enough for exact f64
/// round-trips and stable bytes.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a scenario to the versioned JSON schema.
pub fn scenario_to_json(s: &Scenario) -> String {
    let mut out = String::with_capacity(2048);
    out.push_str("{\n");
    out.push_str(&format!("  \"version\": {SCHEMA_VERSION},\n"));
    out.push_str(&format!("  \"seed\": {},\n", s.seed));
    out.push_str(&format!(
        "  \"world\": {{\"width\": {}, \"height\": {}}},\n",
        fmt_f64(s.world.width),
        fmt_f64(s.world.height)
    ));
    out.push_str(&format!(
        "  \"start\": {{\"x\": {}, \"y\": {}, \"heading\": {}}},\n",
        fmt_f64(s.start.x),
        fmt_f64(s.start.y),
        fmt_f64(s.start_heading)
    ));
    out.push_str(&format!(
        "  \"goal\": {{\"x\": {}, \"y\": {}}},\n",
        fmt_f64(s.goal.x),
        fmt_f64(s.goal.y)
    ));
    out.push_str("  \"obstacles\": [\n");
    for (i, obs) in s.obstacles.iter().enumerate() {
        let verts: Vec<String> = obs
            .vertices
            .iter()
            .map(|v| format!("[{}, {}]", fmt_f64(v.x), fmt_f64(v.y)))
            .collect();
        out.push_str(&format!("    {{\"vertices\": [{}]}}", verts.join(", ")));
        out.push_str(if i + 1 < s.obstacles.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn save(s: &Scenario, path: &FsPath) -> Result<(), ScenarioError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(scenario_to_json(s).as_bytes())?;
    Ok(())
}

fn field<'a>(
    v: &'a serde_json::Value,
    name: &str,
) -> Result<&'a serde_json::Value, ScenarioError> {
    v.get(name)
        .ok_or_else(|| ScenarioError::SchemaViolation(format!("missing field '{name}'")))
}

fn num(v: &serde_json::Value, name: &str) -> Result<f64, ScenarioError> {
    let x = v
        .as_f64()
        .ok_or_else(|| ScenarioError::SchemaViolation(format!("field '{name}' is not a number")))?;
    if !x.is_finite() {
        return Err(ScenarioError::SchemaViolation(format!(
            "field '{name}' is not finite"
        )));
    }
    Ok(x)
}

/// Parses and validates a scenario from its JSON representation.
pub fn scenario_from_json(text: &str) -> Result<Scenario, ScenarioError> {
    let root: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ScenarioError::SchemaViolation(format!("invalid json: {e}")))?;
    let version = field(&root, "version")?
        .as_u64()
        .ok_or_else(|| ScenarioError::SchemaViolation("version is not an integer".into()))?;
    if version != SCHEMA_VERSION {
        return Err(ScenarioError::SchemaViolation(format!(
            "unsupported version {version}, expected {SCHEMA_VERSION}"
        )));
    }
    let seed = field(&root, "seed")?
        .as_u64()
        .ok_or_else(|| ScenarioError::SchemaViolation("seed is not an integer".into()))?;
    let world_v = field(&root, "world")?;
    let world = World {
        width: num(field(world_v, "width")?, "world.width")?,
        height: num(field(world_v, "height")?, "world.height")?,
    };
    if world.width <= 0.0 || world.height <= 0.0 {
        return Err(ScenarioError::SchemaViolation(
            "world dimensions must be positive".into(),
        ));
    }
    let start_v = field(&root, "start")?;
    let start = Point2::new(
        num(field(start_v, "x")?, "start.x")?,
        num(field(start_v, "y")?, "start.y")?,
    );
    let start_heading = num(field(start_v, "heading")?, "start.heading")?;
    let goal_v = field(&root, "goal")?;
    let goal = Point2::new(
        num(field(goal_v, "x")?, "goal.x")?,
        num(field(goal_v, "y")?, "goal.y")?,
    );
    let obs_v = field(&root, "obstacles")?
        .as_array()
        .ok_or_else(|| ScenarioError::SchemaViolation("obstacles is not an array".into()))?;
    let mut obstacles = Vec::with_capacity(obs_v.len());
    for (i, o) in obs_v.iter().enumerate() {
        let verts_v = field(o, "vertices")?
            .as_array()
            .ok_or_else(|| ScenarioError::SchemaViolation(format!("obstacle {i}: vertices is not an array")))?;
        if verts_v.len() != 4 {
            return Err(ScenarioError::SchemaViolation(format!(
                "obstacle {i}: expected 4 vertices, found {}",
                verts_v.len()
            )));
        }
        let mut verts = [Point2::ZERO; 4];
        for (j, vv) in verts_v.iter().enumerate() {
            let pair = vv.as_array().filter(|a| a.len() == 2).ok_or_else(|| {
                ScenarioError::SchemaViolation(format!(
                    "obstacle {i} vertex {j}: expected [x, y]"
                ))
            })?;
            verts[j] = Point2::new(
                num(&pair[0], "vertex.x")?,
                num(&pair[1], "vertex.y")?,
            );
        }
        let obstacle = ConvexObstacle::from_vertices(verts).map_err(|e| match e {
            ObstacleError::NonConvexInput => ScenarioError::SchemaViolation(format!(
                "obstacle {i}: vertices are not a convex quadrilateral"
            )),
            other => ScenarioError::SchemaViolation(format!("obstacle {i}: {other}")),
        })?;
        obstacles.push(obstacle);
    }
    Ok(Scenario {
        world,
        start,
        start_heading,
        goal,
        obstacles,
        seed,
    })
}

pub fn load(path: &FsPath) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_json(&text)
}

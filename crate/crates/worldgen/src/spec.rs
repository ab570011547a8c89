use std::fmt;
use std::str::FromStr;

use crate::error::{Result, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    Box,
    Gravity,
    Polygon,
    Pong,
    Pendulum,
}

impl FromStr for WorldKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(WorldKind::Box),
            "gravity" => Ok(WorldKind::Gravity),
            "polygon" => Ok(WorldKind::Polygon),
            "pong" => Ok(WorldKind::Pong),
            "pendulum" => Ok(WorldKind::Pendulum),
            other => Err(WorldError::Config(format!("unknown world kind {other:?}"))),
        }
    }
}

impl fmt::Display for WorldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WorldKind::Box => "box",
            WorldKind::Gravity => "gravity",
            WorldKind::Polygon => "polygon",
            WorldKind::Pong => "pong",
            WorldKind::Pendulum => "pendulum",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddleSpec {
    /// Paddle thickness in pixels.
    pub width: f64,
    /// Paddle length in pixels.
    pub height: f64,
    /// Largest vertical paddle move per step.
    pub max_speed: f64,
}

/// Damped pendulum `θ'' = -(g/l) sin θ + gain·u - damping·θ'`.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumSpec {
    pub g_over_l: f64,
    pub torque_gain: f64,
    pub damping: f64,
    /// Integration step per frame.
    pub dt: f64,
    /// Rendered arm length in pixels.
    pub arm: f64,
    /// Torques are drawn uniformly from `[-torque_max, torque_max]`.
    pub torque_max: f64,
}

/// Everything that determines a world's episodes.
///
/// Coordinates are in pixels: `x` runs along columns, `y` along rows
/// (downwards). Walls of the box worlds are the frame border.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub kind: WorldKind,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub radius: f64,
    /// Initial speed range in pixels per step.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Constant acceleration `[ax, ay]` for the gravity world.
    pub gravity: [f64; 2],
    /// Convex wall polygon for the polygon world.
    pub polygon: Vec<[f64; 2]>,
    pub paddle: PaddleSpec,
    pub pendulum: PendulumSpec,
}

impl WorldSpec {
    pub fn new(kind: WorldKind) -> Self {
        let mut spec = WorldSpec {
            kind,
            height: 32,
            width: 32,
            steps: 20,
            radius: 3.0,
            speed_min: 1.0,
            speed_max: 2.0,
            gravity: [0.0, 0.1],
            polygon: vec![[3.0, 7.0], [19.0, 1.5], [30.5, 11.0], [27.0, 30.0], [5.0, 27.5]],
            paddle: PaddleSpec { width: 2.0, height: 8.0, max_speed: 1.5 },
            pendulum: PendulumSpec {
                g_over_l: 9.81,
                torque_gain: 5.0,
                damping: 0.25,
                dt: 0.1,
                arm: 5.0,
                torque_max: 1.0,
            },
        };
        if kind == WorldKind::Pendulum {
            spec.height = 16;
            spec.width = 16;
            spec.steps = 15;
            spec.radius = 2.0;
        }
        spec
    }

    /// Number of control inputs recorded per step.
    pub fn u_dim(&self) -> usize {
        match self.kind {
            WorldKind::Pendulum => 1,
            _ => 0,
        }
    }

    /// Inclusive bounds `[lo, hi]` of the ball center along x for the walled worlds.
    pub(crate) fn x_bounds(&self) -> (f64, f64) {
        let inset = if self.kind == WorldKind::Pong { self.paddle.width } else { 0.0 };
        (inset + self.radius, self.width as f64 - inset - self.radius)
    }

    pub(crate) fn y_bounds(&self) -> (f64, f64) {
        (self.radius, self.height as f64 - self.radius)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.steps == 0 {
            return Err(WorldError::Config("frame size and step count must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(WorldError::Config("ball radius must be positive".into()));
        }
        if !(self.speed_min >= 0.0 && self.speed_max >= self.speed_min) {
            return Err(WorldError::Config(format!(
                "speed range [{}, {}] is invalid",
                self.speed_min, self.speed_max
            )));
        }
        match self.kind {
            WorldKind::Box | WorldKind::Gravity | WorldKind::Pong => {
                let (xl, xh) = self.x_bounds();
                let (yl, yh) = self.y_bounds();
                if xl >= xh || yl >= yh {
                    return Err(WorldError::Config("ball does not fit inside the walls".into()));
                }
                if self.speed_max >= (xh - xl).min(yh - yl) {
                    return Err(WorldError::Config("speed exceeds the free space per step".into()));
                }
            }
            WorldKind::Polygon => validate_polygon(&self.polygon, self.radius)?,
            WorldKind::Pendulum => {
                let p = &self.pendulum;
                if !(p.dt > 0.0 && p.arm > 0.0) {
                    return Err(WorldError::Config("pendulum dt and arm must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// Polygons must be simple and convex, and leave room for the ball.
fn validate_polygon(vertices: &[[f64; 2]], radius: f64) -> Result<()> {
    let n = vertices.len();
    if n < 3 {
        return Err(WorldError::Config("polygon needs at least 3 vertices".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]) {
                return Err(WorldError::Config(format!("polygon edges {i} and {j} intersect")));
            }
        }
    }
    let signs: Vec<f64> = (0..n)
        .map(|i| cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]))
        .collect();
    if signs.contains(&0.0) {
        return Err(WorldError::Config("polygon has collinear consecutive vertices".into()));
    }
    if !(signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)) {
        return Err(WorldError::Config("polygon must be convex".into()));
    }
    // the inradius-style check: the centroid must be at least 2r from every edge
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / n as f64;
    for e in crate::physics::inward_edges(vertices) {
        if e.distance([cx, cy]) < 2.0 * radius {
            return Err(WorldError::Config("polygon is too small for the ball".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_polygon_is_valid() {
        WorldSpec::new(WorldKind::Polygon).validate().unwrap();
    }

    #[test]
    fn self_intersecting_polygon_is_rejected() {
        let mut spec = WorldSpec::new(WorldKind::Polygon);
        spec.polygon = vec![[0.0, 0.0], [30.0, 30.0], [30.0, 0.0], [0.0, 30.0]];
        let err = spec.validate().unwrap_err();
        assert!(matches!(err, WorldError::Config(ref m) if m.contains("intersect")), "{err}");
    }

    #[test]
    fn concave_polygon_is_rejected() {
        let mut spec = WorldSpec::new(WorldKind::Polygon);
        spec.polygon = vec![[0.0, 0.0], [30.0, 0.0], [15.0, 10.0], [30.0, 30.0], [0.0, 30.0]];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for kind in [WorldKind::Box, WorldKind::Gravity, WorldKind::Polygon, WorldKind::Pong, WorldKind::Pendulum] {
            assert_eq!(kind.to_string().parse::<WorldKind>().unwrap(), kind);
        }
    }
}

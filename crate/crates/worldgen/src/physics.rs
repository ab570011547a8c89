//! Fixed-timestep integration with exact in-step collision handling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Episode;
use crate::error::{Result, WorldError};
use crate::raster::rasterize;
use crate::spec::{WorldKind, WorldSpec};

/// Test episodes use indices starting here, so they never share a seed with
/// training episodes generated from the same base seed.
pub const TEST_INDEX_OFFSET: u64 = 1 << 32;

/// Bound on collisions resolved within one step (corners need two).
const MAX_BOUNCES: usize = 16;

/// Ground-truth state sequence of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// `contacts[t]` is set when a wall was hit while moving from `t-1` to `t`.
    pub contacts: Vec<bool>,
    /// Vertical centers of the left and right paddles (pong only).
    pub paddles: Vec<[f64; 2]>,
    /// Row-major `T x u_dim` controls.
    pub controls: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InwardEdge {
    normal: [f64; 2],
    offset: f64,
}

impl InwardEdge {
    pub(crate) fn distance(&self, p: [f64; 2]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset
    }
}

/// Edge lines of a convex polygon with unit normals pointing inside.
pub(crate) fn inward_edges(vertices: &[[f64; 2]]) -> Vec<InwardEdge> {
    let n = vertices.len();
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / n as f64;
    (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = (dx * dx + dy * dy).sqrt();
            let mut normal = [-dy / len, dx / len];
            if normal[0] * (cx - a[0]) + normal[1] * (cy - a[1]) < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            InwardEdge { normal, offset: normal[0] * a[0] + normal[1] * a[1] }
        })
        .collect()
}

/// Moves along one axis for one unit of time, reflecting specularly off `[lo, hi]`.
fn reflect_axis(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64, bool) {
    let (mut p, mut v) = (p + v, v);
    let mut hit = false;
    for _ in 0..MAX_BOUNCES {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
            hit = true;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
            hit = true;
        } else {
            break;
        }
    }
    (p, v, hit)
}

/// Smallest root of `a τ² + b τ + c = 0` in `(0, limit]`.
fn first_root(a: f64, b: f64, c: f64, limit: f64) -> Option<f64> {
    let mut roots = Vec::with_capacity(2);
    if a == 0.0 {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (b + b.signum() * sq);
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
        }
    }
    roots.into_iter().filter(|&r| r > 1e-12 && r <= limit).fold(None, |best, r| match best {
        Some(b) if b <= r => Some(b),
        _ => Some(r),
    })
}

/// Constant-acceleration flight along one axis for one unit of time, with
/// elastic bounces at `[lo, hi]` located exactly on the parabola.
fn ballistic_axis(p: f64, v: f64, acc: f64, lo: f64, hi: f64) -> (f64, f64, bool) {
    if acc == 0.0 {
        return reflect_axis(p, v, lo, hi);
    }
    let (mut p, mut v, mut rem) = (p, v, 1.0);
    let mut hit = false;
    for _ in 0..MAX_BOUNCES {
        let end = p + v * rem + 0.5 * acc * rem * rem;
        if end >= lo && end <= hi {
            return (end, v + acc * rem, hit);
        }
        let t_hi = first_root(0.5 * acc, v, p - hi, rem);
        let t_lo = first_root(0.5 * acc, v, p - lo, rem);
        let (tau, wall) = match (t_lo, t_hi) {
            (Some(a), Some(b)) if a <= b => (a, lo),
            (Some(a), None) => (a, lo),
            (_, Some(b)) => (b, hi),
            (None, None) => return (end.clamp(lo, hi), v + acc * rem, hit),
        };
        p = wall;
        v = -(v + acc * tau);
        rem -= tau;
        hit = true;
    }
    (p.clamp(lo, hi), v, hit)
}

fn polygon_step(p: [f64; 2], v: [f64; 2], edges: &[InwardEdge], radius: f64) -> ([f64; 2], [f64; 2], bool) {
    let (mut p, mut v, mut rem) = (p, v, 1.0);
    let mut hit = false;
    for _ in 0..MAX_BOUNCES {
        let mut first: Option<(f64, usize)> = None;
        for (i, e) in edges.iter().enumerate() {
            let closing = e.normal[0] * v[0] + e.normal[1] * v[1];
            if closing >= 0.0 {
                continue;
            }
            let tau = ((e.distance(p) - radius) / -closing).max(0.0);
            if tau <= rem && first.is_none_or(|(best, _)| tau < best) {
                first = Some((tau, i));
            }
        }
        let Some((tau, i)) = first else {
            return ([p[0] + v[0] * rem, p[1] + v[1] * rem], v, hit);
        };
        p = [p[0] + v[0] * tau, p[1] + v[1] * tau];
        let n = edges[i].normal;
        let vn = n[0] * v[0] + n[1] * v[1];
        v = [v[0] - 2.0 * vn * n[0], v[1] - 2.0 * vn * n[1]];
        rem -= tau;
        hit = true;
    }
    (p, v, hit)
}

fn initial_velocity(spec: &WorldSpec, rng: &mut impl Rng) -> [f64; 2] {
    let speed = if spec.speed_max > spec.speed_min {
        rng.random_range(spec.speed_min..spec.speed_max)
    } else {
        spec.speed_min
    };
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    [speed * angle.cos(), speed * angle.sin()]
}

fn uniform_in(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}

/// Simulates one episode's ground-truth trajectory.
pub fn simulate_trace(spec: &WorldSpec, rng: &mut impl Rng) -> Result<Trace> {
    spec.validate()?;
    let steps = spec.steps;
    let mut trace = Trace {
        positions: Vec::with_capacity(steps),
        velocities: Vec::with_capacity(steps),
        contacts: Vec::with_capacity(steps),
        paddles: Vec::new(),
        controls: Vec::new(),
    };
    match spec.kind {
        WorldKind::Box | WorldKind::Gravity | WorldKind::Pong => {
            let (xl, xh) = spec.x_bounds();
            let (yl, yh) = spec.y_bounds();
            let acc = if spec.kind == WorldKind::Gravity { spec.gravity } else { [0.0, 0.0] };
            let mut p = [uniform_in(rng, xl, xh), uniform_in(rng, yl, yh)];
            let mut v = initial_velocity(spec, rng);
            let half = 0.5 * spec.paddle.height;
            let clamp_paddle = |y: f64| y.clamp(half, spec.height as f64 - half);
            let mut paddles = [clamp_paddle(p[1]), clamp_paddle(p[1])];
            for t in 0..steps {
                let mut contact = false;
                if t > 0 {
                    let (px, vx, hx) = ballistic_axis(p[0], v[0], acc[0], xl, xh);
                    let (py, vy, hy) = ballistic_axis(p[1], v[1], acc[1], yl, yh);
                    p = [px, py];
                    v = [vx, vy];
                    contact = hx || hy;
                    for paddle in paddles.iter_mut() {
                        let target = clamp_paddle(p[1]);
                        let step = (target - *paddle).clamp(-spec.paddle.max_speed, spec.paddle.max_speed);
                        *paddle += step;
                    }
                }
                trace.positions.push(p);
                trace.velocities.push(v);
                trace.contacts.push(contact);
                if spec.kind == WorldKind::Pong {
                    trace.paddles.push(paddles);
                }
            }
        }
        WorldKind::Polygon => {
            let edges = inward_edges(&spec.polygon);
            let (xmin, xmax, ymin, ymax) = spec.polygon.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
                |(a, b, c, d), v| (a.min(v[0]), b.max(v[0]), c.min(v[1]), d.max(v[1])),
            );
            let mut p = None;
            for _ in 0..10_000 {
                let cand = [uniform_in(rng, xmin, xmax), uniform_in(rng, ymin, ymax)];
                if edges.iter().all(|e| e.distance(cand) >= spec.radius) {
                    p = Some(cand);
                    break;
                }
            }
            let mut p = p.ok_or_else(|| WorldError::Config("no room for the ball in the polygon".into()))?;
            let mut v = initial_velocity(spec, rng);
            for t in 0..steps {
                let mut contact = false;
                if t > 0 {
                    let (np, nv, hit) = polygon_step(p, v, &edges, spec.radius);
                    p = np;
                    v = nv;
                    contact = hit;
                }
                trace.positions.push(p);
                trace.velocities.push(v);
                trace.contacts.push(contact);
            }
        }
        WorldKind::Pendulum => {
            let pd = &spec.pendulum;
            let accel = |theta: f64, omega: f64, u: f64| {
                -pd.g_over_l * theta.sin() + pd.torque_gain * u - pd.damping * omega
            };
            let mut theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let mut omega = rng.random_range(-1.0..1.0);
            let (cx, cy) = (spec.width as f64 / 2.0, spec.height as f64 / 2.0);
            for t in 0..steps {
                let u = if pd.torque_max > 0.0 { rng.random_range(-pd.torque_max..pd.torque_max) } else { 0.0 };
                if t > 0 {
                    // velocity Verlet with the damping term evaluated at the half step
                    let half = omega + 0.5 * pd.dt * accel(theta, omega, u);
                    theta += pd.dt * half;
                    omega = half + 0.5 * pd.dt * accel(theta, half, u);
                }
                trace.controls.push(u);
                trace.positions.push([cx + pd.arm * theta.sin(), cy + pd.arm * theta.cos()]);
                trace.velocities.push([theta, omega]);
                trace.contacts.push(false);
            }
        }
    }
    Ok(trace)
}

/// Random stream for the episode with the given index.
pub(crate) fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

/// Simulates and renders the episode with index `index` under base `seed`.
pub fn simulate_episode(spec: &WorldSpec, seed: u64, index: u64) -> Result<Episode> {
    let mut rng = episode_rng(seed, index);
    let trace = simulate_trace(spec, &mut rng)?;
    let mut frames = Vec::with_capacity(spec.steps * spec.height * spec.width);
    for t in 0..spec.steps {
        let paddles = trace.paddles.get(t).copied();
        frames.extend(rasterize(trace.positions[t], paddles, spec));
    }
    Ok(Episode {
        steps: spec.steps,
        height: spec.height,
        width: spec.width,
        u_dim: spec.u_dim(),
        frames,
        controls: trace.controls,
        positions: trace.positions,
    })
}

/// Simulates `n_episodes` episodes with indices `first_index..first_index + n`.
pub fn simulate(spec: &WorldSpec, n_episodes: usize, seed: u64, first_index: u64) -> Result<Vec<Episode>> {
    spec.validate()?;
    (0..n_episodes as u64).map(|i| simulate_episode(spec, seed, first_index + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_keeps_inside() {
        let (p, v, hit) = reflect_axis(28.5, 1.0, 3.0, 29.0);
        assert_eq!((p, v, hit), (28.5, -1.0, true));
    }

    #[test]
    fn ballistic_bounce_conserves_energy() {
        let (lo, hi, g) = (3.0, 29.0, 0.1);
        let (p, v) = (28.0, 1.5);
        let e0 = 0.5 * v * v - g * p;
        let (p1, v1, hit) = ballistic_axis(p, v, g, lo, hi);
        assert!(hit);
        let e1 = 0.5 * v1 * v1 - g * p1;
        assert!((e0 - e1).abs() < 1e-12, "{e0} vs {e1}");
        assert!(p1 <= hi && v1 < 0.0);
    }

    #[test]
    fn polygon_step_reflects_off_edge() {
        let square = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        let edges = inward_edges(&square);
        let (p, v, hit) = polygon_step([8.5, 5.0], [1.0, 0.0], &edges, 1.0);
        assert!(hit);
        assert!((p[0] - 8.5).abs() < 1e-12 && (v[0] + 1.0).abs() < 1e-12);
    }
}

use crate::spec::{WorldKind, WorldSpec};

/// Row-major `height x width` frame with a filled disk.
///
/// A pixel is lit iff the distance from its center `(j + 0.5, i + 0.5)` to
/// `center` is at most `radius`.
pub fn rasterize_disk(center: [f64; 2], radius: f64, height: usize, width: usize) -> Vec<u8> {
    let mut frame = vec![0u8; height * width];
    let r2 = radius * radius;
    for i in 0..height {
        let dy = i as f64 + 0.5 - center[1];
        for j in 0..width {
            let dx = j as f64 + 0.5 - center[0];
            if dx * dx + dy * dy <= r2 {
                frame[i * width + j] = 1;
            }
        }
    }
    frame
}

fn fill_rect(frame: &mut [u8], width: usize, x: (f64, f64), y: (f64, f64)) {
    let height = frame.len() / width;
    for i in 0..height {
        let cy = i as f64 + 0.5;
        if cy < y.0 || cy > y.1 {
            continue;
        }
        for j in 0..width {
            let cx = j as f64 + 0.5;
            if cx >= x.0 && cx <= x.1 {
                frame[i * width + j] = 1;
            }
        }
    }
}

/// Renders the ball at `position`, plus the two paddles for pong.
///
/// `paddles` holds the vertical centers of the left and right paddles and is
/// ignored by the other worlds.
pub fn rasterize(position: [f64; 2], paddles: Option<[f64; 2]>, spec: &WorldSpec) -> Vec<u8> {
    let mut frame = rasterize_disk(position, spec.radius, spec.height, spec.width);
    if spec.kind == WorldKind::Pong {
        if let Some([left, right]) = paddles {
            let half = 0.5 * spec.paddle.height;
            let w = spec.width as f64;
            fill_rect(&mut frame, spec.width, (0.0, spec.paddle.width), (left - half, left + half));
            fill_rect(&mut frame, spec.width, (w - spec.paddle.width, w), (right - half, right + half));
        }
    }
    frame
}

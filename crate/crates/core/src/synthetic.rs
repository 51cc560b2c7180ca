//! Procedural test videos.

use crate::splat2d::Frame;

/// Static diagonal color gradient.
pub fn gradient_background(width: usize, height: usize) -> Frame {
    let mut f = Frame::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = ((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64);
            f.set_pixel(x, y, [0.15 + 0.6 * u, 0.25 + 0.4 * v, 0.75 - 0.5 * u]);
        }
    }
    f
}

/// Disk center (pixels) at phase `s ∈ [0, 1]`: linear in x, quadratic in y.
pub fn disk_path(width: usize, height: usize, s: f64) -> [f64; 2] {
    let (w, h) = (width as f64, height as f64);
    [w * (0.22 + 0.56 * s), h * (0.25 + 0.5 * s * s)]
}

/// A disk of radius `height / 8` moving along [`disk_path`] over
/// [`gradient_background`], with a one-pixel anti-aliased edge.
pub fn moving_disk(width: usize, height: usize, n_frames: usize) -> Vec<Frame> {
    let bg = gradient_background(width, height);
    let radius = height as f64 / 8.0;
    let color = [0.95, 0.85, 0.2];
    (0..n_frames)
        .map(|k| {
            let s = if n_frames > 1 { k as f64 / (n_frames - 1) as f64 } else { 0.0 };
            let c = disk_path(width, height, s);
            let mut f = bg.clone();
            for y in 0..height {
                for x in 0..width {
                    let d = (x as f64 + 0.5 - c[0]).hypot(y as f64 + 0.5 - c[1]);
                    let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
                    if cover > 0.0 {
                        let p = bg.pixel(x, y);
                        f.set_pixel(x, y, std::array::from_fn(|i| cover * color[i] + (1.0 - cover) * p[i]));
                    }
                }
            }
            f
        })
        .collect()
}

/// `n_frames` copies of one still image (gradient with a fixed disk).
pub fn static_video(width: usize, height: usize, n_frames: usize) -> Vec<Frame> {
    let still = moving_disk(width, height, 2).swap_remove(0);
    vec![still; n_frames]
}

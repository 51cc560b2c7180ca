//! Differentiable 2D Gaussian splatting on the CPU.
//!
//! Gaussians live directly in the image plane, so rendering is exact 2D
//! evaluation followed by front-to-back alpha compositing in `order_key`
//! order. Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`, mapped to
//! normalized coordinates `x ∈ [-w/h, w/h]`, `y ∈ [-1, 1]`.
//!
//! The tiled renderer bins each Gaussian into 16×16 tiles using the exact
//! extent of its `α ≥ 1/255` region (plus one pixel of margin), so it skips
//! only work that the cutoff would discard anyway and matches the
//! brute-force renderer to rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::foldgauss::ConditionedGaussian2D;

pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;

/// Row-major RGB image with channel values as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} frame needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Gaussians in compositing order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatScene {
    pub gaussians: Vec<ConditionedGaussian2D>,
    pub order_key: Vec<u64>,
}

impl SplatScene {
    /// Scene whose compositing order is the vector order.
    pub fn new(gaussians: Vec<ConditionedGaussian2D>) -> Self {
        let order_key = (0..gaussians.len() as u64).collect();
        Self { gaussians, order_key }
    }

    pub fn with_keys(gaussians: Vec<ConditionedGaussian2D>, order_key: Vec<u64>) -> Result<Self> {
        if gaussians.len() != order_key.len() {
            return Err(Error::Shape("one order key per Gaussian".into()));
        }
        let mut sorted = order_key.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Shape("order keys must be unique".into()));
        }
        Ok(Self { gaussians, order_key })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Scene indices sorted front to back.
    pub fn compositing_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.gaussians.len()).collect();
        if self.order_key.windows(2).any(|w| w[0] > w[1]) {
            idx.sort_by_key(|&i| self.order_key[i]);
        }
        idx
    }
}

/// Partials of a scalar loss w.r.t. one Gaussian's render parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    pub theta: f64,
    pub s1: f64,
    pub s2: f64,
    /// W.r.t. the covariance scale factor `a(t)`.
    pub scale: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        self.theta += o.theta;
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.scale += o.scale;
        self.opacity += o.opacity;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
    }
}

/// Per-Gaussian gradients, indexed like `SplatScene::gaussians`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffer {
    pub grads: Vec<SplatGrad>,
    /// Whether the Gaussian overlapped any pixel with `α ≥ 1/255` bounds.
    pub touched: Vec<bool>,
}

impl GradBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![SplatGrad::default(); n],
            touched: vec![false; n],
        }
    }

    pub fn clear(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = SplatGrad::default());
        self.touched.iter_mut().for_each(|t| *t = false);
    }
}

/// Normalized coordinates of the center of pixel `(x, y)`.
#[inline]
pub fn pixel_center(x: usize, y: usize, width: usize, height: usize) -> [f64; 2] {
    let h = height as f64;
    [
        (2.0 * (x as f64 + 0.5) - width as f64) / h,
        (2.0 * (y as f64 + 0.5) - h) / h,
    ]
}

/// Opacity-weighted footprint of `g` at `p`, clamped to 0.99 and zeroed
/// below 1/255. Singular covariances contribute nothing.
pub fn alpha_at(g: &ConditionedGaussian2D, p: [f64; 2]) -> f64 {
    let m = g.cov_matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) || !det.is_finite() {
        return 0.0;
    }
    let dx = p[0] - g.mean[0];
    let dy = p[1] - g.mean[1];
    let q = (m[1][1] * dx * dx - 2.0 * m[0][1] * dx * dy + m[0][0] * dy * dy) / det;
    if !q.is_finite() {
        return 0.0;
    }
    let raw = g.opacity * (-0.5 * q).exp();
    if !(raw >= ALPHA_MIN) {
        0.0
    } else {
        raw.min(ALPHA_MAX)
    }
}

/// Reference renderer: every pixel against every Gaussian, no binning.
pub fn render_bruteforce(scene: &SplatScene, width: usize, height: usize, background: [f64; 3]) -> Frame {
    let order = scene.compositing_order();
    let mut frame = Frame::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let p = pixel_center(x, y, width, height);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &i in &order {
                let g = &scene.gaussians[i];
                let alpha = alpha_at(g, p);
                if alpha == 0.0 {
                    continue;
                }
                let next = t * (1.0 - alpha);
                if next < TRANSMITTANCE_MIN {
                    break;
                }
                for k in 0..3 {
                    c[k] += alpha * t * g.color[k];
                }
                t = next;
            }
            let rgb = [0, 1, 2].map(|k| (c[k] + t * background[k]).clamp(0.0, 1.0));
            frame.set_pixel(x, y, rgb);
        }
    }
    frame
}

#[derive(Clone, Copy, Debug)]
struct Prepared {
    index: usize,
    mean: [f64; 2],
    r1: [f64; 2],
    r2: [f64; 2],
    s1: f64,
    s2: f64,
    scale: f64,
    /// `1 / (s1² a)` and `1 / (s2² a)`.
    inv_u: f64,
    inv_v: f64,
    /// Quadratic form value beyond which `α < 1/255`.
    q_cut: f64,
    opacity: f64,
    color: [f64; 3],
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

struct Eval {
    alpha: f64,
    gauss: f64,
    clamped: bool,
    u: f64,
    v: f64,
    q: f64,
}

impl Prepared {
    fn new(index: usize, g: &ConditionedGaussian2D, width: usize, height: usize) -> Option<Self> {
        if !(g.opacity >= ALPHA_MIN) || !g.opacity.is_finite() {
            return None;
        }
        let m = g.cov_matrix();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det > 0.0) || !det.is_finite() || !g.mean.iter().all(|v| v.is_finite()) {
            return None;
        }
        let q_max = 2.0 * (255.0 * g.opacity).ln();
        let (w, h) = (width as f64, height as f64);
        let half_x = (q_max * m[0][0]).sqrt() * h / 2.0;
        let half_y = (q_max * m[1][1]).sqrt() * h / 2.0;
        let px = (g.mean[0] * h + w) / 2.0;
        let py = (g.mean[1] * h + h) / 2.0;
        let x0 = (px - half_x - 0.5).ceil() - 1.0;
        let x1 = (px + half_x - 0.5).floor() + 1.0;
        let y0 = (py - half_y - 0.5).ceil() - 1.0;
        let y1 = (py + half_y - 0.5).floor() + 1.0;
        if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
            return None;
        }
        let (r1, r2) = g.cov.axes();
        Some(Self {
            index,
            mean: g.mean,
            r1,
            r2,
            s1: g.cov.s1,
            s2: g.cov.s2,
            scale: g.scale,
            inv_u: 1.0 / (g.cov.s1 * g.cov.s1 * g.scale),
            inv_v: 1.0 / (g.cov.s2 * g.cov.s2 * g.scale),
            q_cut: q_max * (1.0 + 1e-9) + 1e-12,
            opacity: g.opacity,
            color: g.color,
            x0: x0.max(0.0) as usize,
            x1: x1.min(w - 1.0) as usize,
            y0: y0.max(0.0) as usize,
            y1: y1.min(h - 1.0) as usize,
        })
    }

    #[inline]
    fn eval(&self, p: [f64; 2]) -> Option<Eval> {
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        let u = dx * self.r1[0] + dy * self.r1[1];
        let v = dx * self.r2[0] + dy * self.r2[1];
        let q = u * u * self.inv_u + v * v * self.inv_v;
        // Cheap rejection; the exact test on `raw` below decides.
        if !(q <= self.q_cut) {
            return None;
        }
        let gauss = (-0.5 * q).exp();
        let raw = self.opacity * gauss;
        if !(raw >= ALPHA_MIN) {
            return None;
        }
        let clamped = raw > ALPHA_MAX;
        Some(Eval {
            alpha: if clamped { ALPHA_MAX } else { raw },
            gauss,
            clamped,
            u,
            v,
            q,
        })
    }
}

struct Binning {
    prepared: Vec<Prepared>,
    tiles_x: usize,
    tiles_y: usize,
    /// Indices into `prepared`, front to back, per tile.
    lists: Vec<Vec<u32>>,
}

fn bin(scene: &SplatScene, width: usize, height: usize) -> Binning {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let prepared: Vec<Prepared> = scene
        .compositing_order()
        .into_iter()
        .filter_map(|i| Prepared::new(i, &scene.gaussians[i], width, height))
        .collect();
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (k, p) in prepared.iter().enumerate() {
        for ty in p.y0 / TILE_SIZE..=p.y1 / TILE_SIZE {
            for tx in p.x0 / TILE_SIZE..=p.x1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Binning {
        prepared,
        tiles_x,
        tiles_y,
        lists,
    }
}

/// A tile-list entry whose box covers the current pixel row.
struct RowCandidate {
    slot: u32,
    x0: usize,
    x1: usize,
}

impl Binning {
    /// Entries of `list` overlapping row `y` within `[x0, x1)`, in order.
    fn row_candidates(&self, list: &[u32], y: usize, x0: usize, x1: usize, out: &mut Vec<RowCandidate>) {
        out.clear();
        for (slot, &k) in list.iter().enumerate() {
            let g = &self.prepared[k as usize];
            if y >= g.y0 && y <= g.y1 && g.x1 >= x0 && g.x0 < x1 {
                out.push(RowCandidate {
                    slot: slot as u32,
                    x0: g.x0,
                    x1: g.x1,
                });
            }
        }
    }

    fn tile_bounds(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(width), y0, (y0 + TILE_SIZE).min(height))
    }
}

/// Tiled front-to-back compositing. Stops a pixel once the next Gaussian
/// would drop transmittance below 1e-4.
pub fn render(scene: &SplatScene, width: usize, height: usize, background: [f64; 3]) -> Frame {
    let binning = bin(scene, width, height);
    let n_tiles = binning.tiles_x * binning.tiles_y;
    let tiles: Vec<Vec<f64>> = (0..n_tiles)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = binning.tile_bounds(tile, width, height);
            let list = &binning.lists[tile];
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
            let mut row = Vec::new();
            for y in y0..y1 {
                binning.row_candidates(list, y, x0, x1, &mut row);
                for x in x0..x1 {
                    let p = pixel_center(x, y, width, height);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    for cand in &row {
                        if x < cand.x0 || x > cand.x1 {
                            continue;
                        }
                        let g = &binning.prepared[list[cand.slot as usize] as usize];
                        let Some(e) = g.eval(p) else { continue };
                        let next = t * (1.0 - e.alpha);
                        if next < TRANSMITTANCE_MIN {
                            break;
                        }
                        for ch in 0..3 {
                            c[ch] += e.alpha * t * g.color[ch];
                        }
                        t = next;
                    }
                    for ch in 0..3 {
                        out.push((c[ch] + t * background[ch]).clamp(0.0, 1.0));
                    }
                }
            }
            out
        })
        .collect();
    let mut frame = Frame::new(width, height);
    for (tile, pixels) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = binning.tile_bounds(tile, width, height);
        let row = (x1 - x0) * 3;
        for (r, y) in (y0..y1).enumerate() {
            let dst = (y * width + x0) * 3;
            frame.data[dst..dst + row].copy_from_slice(&pixels[r * row..(r + 1) * row]);
        }
    }
    frame
}

struct Contribution {
    slot: usize,
    alpha: f64,
    gauss: f64,
    clamped: bool,
    u: f64,
    v: f64,
    q: f64,
    transmittance: f64,
}

/// Gradients of `Σ grad_frame · render(scene)` w.r.t. every Gaussian.
///
/// Clamped (`α = 0.99`) and cut-off (`α < 1/255`) evaluations, as well as
/// output channels clamped into `[0, 1]`, propagate zero gradient. Tiles are
/// processed in parallel and reduced in tile order, so the result does not
/// depend on the thread count.
pub fn render_backward(
    scene: &SplatScene,
    width: usize,
    height: usize,
    background: [f64; 3],
    grad_frame: &Frame,
) -> Result<GradBuffer> {
    if grad_frame.width != width || grad_frame.height != height {
        return Err(Error::Shape(format!(
            "gradient frame {}x{} does not match render {}x{}",
            grad_frame.width, grad_frame.height, width, height
        )));
    }
    let binning = bin(scene, width, height);
    let n_tiles = binning.tiles_x * binning.tiles_y;
    let partials: Vec<Vec<SplatGrad>> = (0..n_tiles)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = binning.tile_bounds(tile, width, height);
            let list = &binning.lists[tile];
            let mut acc = vec![SplatGrad::default(); list.len()];
            let mut contribs: Vec<Contribution> = Vec::new();
            let mut row = Vec::new();
            for y in y0..y1 {
                binning.row_candidates(list, y, x0, x1, &mut row);
                for x in x0..x1 {
                    let gi = (y * width + x) * 3;
                    let gpix = [grad_frame.data[gi], grad_frame.data[gi + 1], grad_frame.data[gi + 2]];
                    if gpix == [0.0; 3] {
                        continue;
                    }
                    let p = pixel_center(x, y, width, height);
                    contribs.clear();
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    for cand in &row {
                        if x < cand.x0 || x > cand.x1 {
                            continue;
                        }
                        let slot = cand.slot as usize;
                        let g = &binning.prepared[list[slot] as usize];
                        let Some(e) = g.eval(p) else { continue };
                        let next = t * (1.0 - e.alpha);
                        if next < TRANSMITTANCE_MIN {
                            break;
                        }
                        for ch in 0..3 {
                            c[ch] += e.alpha * t * g.color[ch];
                        }
                        contribs.push(Contribution {
                            slot,
                            alpha: e.alpha,
                            gauss: e.gauss,
                            clamped: e.clamped,
                            u: e.u,
                            v: e.v,
                            q: e.q,
                            transmittance: t,
                        });
                        t = next;
                    }
                    // Output clamp: channels pinned at 0 or 1 pass no gradient.
                    let mut gout = gpix;
                    for ch in 0..3 {
                        let value = c[ch] + t * background[ch];
                        if !(0.0..=1.0).contains(&value) {
                            gout[ch] = 0.0;
                        }
                    }
                    let mut behind = [0.0; 3];
                    for ch in 0..3 {
                        behind[ch] = t * background[ch];
                    }
                    for cb in contribs.iter().rev() {
                        let g = &binning.prepared[list[cb.slot] as usize];
                        let ti = cb.transmittance;
                        let out = &mut acc[cb.slot];
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            out.color[ch] += ti * cb.alpha * gout[ch];
                            d_alpha += (ti * g.color[ch] - behind[ch] / (1.0 - cb.alpha)) * gout[ch];
                            behind[ch] += g.color[ch] * cb.alpha * ti;
                        }
                        if cb.clamped {
                            continue;
                        }
                        out.opacity += d_alpha * cb.gauss;
                        let d_q = -0.5 * cb.alpha * d_alpha;
                        let (s1sq, s2sq) = (g.s1 * g.s1, g.s2 * g.s2);
                        let (u, v, a) = (cb.u, cb.v, g.scale);
                        // q = (u²/s1² + v²/s2²)/a with (u, v) = Rᵀ(p − mean).
                        let dq_du = 2.0 * u / (s1sq * a);
                        let dq_dv = 2.0 * v / (s2sq * a);
                        out.mean[0] -= d_q * (dq_du * g.r1[0] + dq_dv * g.r2[0]);
                        out.mean[1] -= d_q * (dq_du * g.r1[1] + dq_dv * g.r2[1]);
                        out.theta += d_q * (dq_du * v - dq_dv * u);
                        out.s1 += d_q * (-2.0 * u * u / (s1sq * g.s1 * a));
                        out.s2 += d_q * (-2.0 * v * v / (s2sq * g.s2 * a));
                        out.scale += d_q * (-cb.q / a);
                    }
                }
            }
            acc
        })
        .collect();
    let mut buffer = GradBuffer::zeros(scene.len());
    for (tile, acc) in partials.iter().enumerate() {
        for (slot, &k) in binning.lists[tile].iter().enumerate() {
            let index = binning.prepared[k as usize].index;
            buffer.grads[index].add(&acc[slot]);
        }
    }
    for p in &binning.prepared {
        buffer.touched[p.index] = true;
    }
    Ok(buffer)
}

/// Horizontal flip: pixel `(x, y)` moves to `(w − 1 − x, y)`.
pub fn mirror(frame: &Frame) -> Frame {
    let mut out = Frame::new(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            out.set_pixel(frame.width - 1 - x, y, frame.pixel(x, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foldgauss::SpatialCov2;

    fn iso(mean: [f64; 2], sigma: f64, opacity: f64, color: [f64; 3]) -> ConditionedGaussian2D {
        ConditionedGaussian2D {
            mean,
            cov: SpatialCov2::new(0.0, sigma, sigma),
            scale: 1.0,
            opacity,
            color,
        }
    }

    #[test]
    fn alpha_at_mean_and_clamp() {
        let g = iso([0.1, 0.2], 0.3, 0.5, [1.0; 3]);
        assert_eq!(alpha_at(&g, [0.1, 0.2]), 0.5);
        let g = iso([0.1, 0.2], 0.3, 1.0, [1.0; 3]);
        assert_eq!(alpha_at(&g, [0.1, 0.2]), ALPHA_MAX);
    }

    #[test]
    fn alpha_at_one_sigma() {
        let g = iso([0.0, 0.0], 0.1, 1.0, [1.0; 3]);
        let a = alpha_at(&g, [0.1, 0.0]);
        assert!((a - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn alpha_cutoff_and_singular() {
        let g = iso([0.0, 0.0], 0.1, 1.0, [1.0; 3]);
        assert_eq!(alpha_at(&g, [1.0, 1.0]), 0.0);
        let mut s = g;
        s.scale = 0.0;
        assert_eq!(alpha_at(&s, [0.0, 0.0]), 0.0);
        s.scale = f64::MIN_POSITIVE * 1e-10;
        assert_eq!(alpha_at(&s, [0.01, 0.0]), 0.0);
    }

    #[test]
    fn pixel_centers() {
        assert_eq!(pixel_center(0, 0, 2, 2), [-0.5, -0.5]);
        assert_eq!(pixel_center(1, 1, 2, 2), [0.5, 0.5]);
        let p = pixel_center(3, 0, 4, 2);
        assert!((p[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_is_background() {
        let bg = [0.2, 0.4, 0.6];
        let f = render(&SplatScene::default(), 19, 7, bg);
        assert_eq!(f, Frame::filled(19, 7, bg));
        assert_eq!(render_bruteforce(&SplatScene::default(), 19, 7, bg), f);
    }

    #[test]
    fn single_gaussian_compositing() {
        let g = iso([0.0, 0.0], 0.5, 0.6, [0.9, 0.1, 0.3]);
        let bg = [0.2, 0.2, 0.2];
        let f = render(&SplatScene::new(vec![g]), 8, 8, bg);
        let (x, y) = (3, 5);
        let a = alpha_at(&g, pixel_center(x, y, 8, 8));
        let px = f.pixel(x, y);
        for ch in 0..3 {
            assert!((px[ch] - (a * g.color[ch] + (1.0 - a) * bg[ch])).abs() < 1e-15);
        }
    }

    #[test]
    fn front_gaussian_dominates() {
        let red = iso([0.0, 0.0], 0.5, 0.8, [1.0, 0.0, 0.0]);
        let blue = iso([0.0, 0.0], 0.5, 0.8, [0.0, 0.0, 1.0]);
        let rb = render(&SplatScene::with_keys(vec![red, blue], vec![0, 1]).unwrap(), 4, 4, [0.0; 3]);
        let br = render(&SplatScene::with_keys(vec![red, blue], vec![1, 0]).unwrap(), 4, 4, [0.0; 3]);
        let (p1, p2) = (rb.pixel(2, 2), br.pixel(2, 2));
        assert!(p1[0] > p1[2]);
        assert!(p2[2] > p2[0]);
        assert!(p1[0] > p2[0]);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let g = iso([0.0, 0.0], 0.5, 0.8, [1.0; 3]);
        assert!(SplatScene::with_keys(vec![g, g], vec![3, 3]).is_err());
    }

    #[test]
    fn zero_gradient_frame() {
        let g = iso([0.1, 0.0], 0.3, 0.6, [0.5; 3]);
        let scene = SplatScene::new(vec![g, g]);
        let grads = render_backward(&scene, 8, 8, [0.0; 3], &Frame::new(8, 8)).unwrap();
        assert!(grads.grads.iter().all(|g| *g == SplatGrad::default()));
    }

    #[test]
    fn color_gradient_is_alpha_sum() {
        let g = iso([0.1, -0.1], 0.4, 0.7, [0.3, 0.6, 0.2]);
        let scene = SplatScene::new(vec![g]);
        let grad = Frame::filled(8, 8, [1.0, 0.5, -2.0]);
        let buf = render_backward(&scene, 8, 8, [0.0; 3], &grad).unwrap();
        let mut alpha_sum = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                alpha_sum += alpha_at(&g, pixel_center(x, y, 8, 8));
            }
        }
        let c = buf.grads[0].color;
        assert!((c[0] - alpha_sum).abs() < 1e-12);
        assert!((c[1] - 0.5 * alpha_sum).abs() < 1e-12);
        assert!((c[2] + 2.0 * alpha_sum).abs() < 1e-12);
    }

    #[test]
    fn mirror_is_involution() {
        let mut f = Frame::new(5, 3);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = i as f64 / 45.0;
        }
        let m = mirror(&f);
        assert_eq!(m.pixel(4, 1), f.pixel(0, 1));
        assert_eq!(m.pixel(1, 2), f.pixel(3, 2));
        assert_eq!(mirror(&m), f);
        let sym = Frame::filled(6, 2, [0.3, 0.3, 0.3]);
        assert_eq!(mirror(&sym), sym);
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        assert!(render_backward(&SplatScene::default(), 4, 4, [0.0; 3], &Frame::new(3, 4)).is_err());
    }
}

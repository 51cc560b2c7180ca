//! Trainable video representation.
//!
//! Components are stored structure-of-arrays in a [`ParamTable`] of raw,
//! unconstrained values; [`activate`] maps a row to a valid
//! [`FoldedGaussian3D`]. Frame times come from a softmax-cumulative
//! [`FrameTimeline`].

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foldgauss::{
    condition_at, sample_conditioned, ConditionedGaussian2D, FoldedGaussian3D, PolyShift, SpatialCov2,
};
use crate::splat2d::{render, Frame, SplatScene};

/// Thickness of the flat Gaussians when exported to 3D viewers.
pub const FLAT_EPSILON: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw parameter groups, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Mean,
    TimeMean,
    LogScale,
    Theta,
    LogSigmaT,
    Poly,
    Opacity,
    Color,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::Mean,
        Field::TimeMean,
        Field::LogScale,
        Field::Theta,
        Field::LogSigmaT,
        Field::Poly,
        Field::Opacity,
        Field::Color,
    ];

    /// Values per component.
    pub fn stride(self, poly_degree: usize) -> usize {
        match self {
            Field::Mean | Field::LogScale => 2,
            Field::TimeMean | Field::Theta | Field::LogSigmaT | Field::Opacity => 1,
            Field::Poly => 2 * poly_degree,
            Field::Color => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Mean => "mean",
            Field::TimeMean => "time_mean",
            Field::LogScale => "log_scale",
            Field::Theta => "theta",
            Field::LogSigmaT => "log_sigma_t",
            Field::Poly => "poly",
            Field::Opacity => "opacity",
            Field::Color => "color",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Unconstrained parameters of one component.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGaussianParams {
    pub m_s: [f64; 2],
    /// Sigmoid-activated.
    pub m_t_raw: f64,
    /// Exp-activated.
    pub log_scale: [f64; 2],
    /// `2π · sigmoid`-activated.
    pub theta_raw: f64,
    /// Exp-activated.
    pub log_sigma_t: f64,
    pub poly_x: Vec<f64>,
    pub poly_y: Vec<f64>,
    /// Sigmoid-activated.
    pub opacity_raw: f64,
    /// Clamped to `[0, 1]`.
    pub color: [f64; 3],
}

impl RawGaussianParams {
    /// Inverse of [`activate`] for a valid component.
    pub fn from_activated(fg: &FoldedGaussian3D) -> Self {
        Self {
            m_s: fg.m_s,
            m_t_raw: logit(fg.m_t),
            log_scale: [fg.cov_s.s1.ln(), fg.cov_s.s2.ln()],
            theta_raw: theta_to_raw(fg.cov_s.theta),
            log_sigma_t: fg.sigma_t.ln(),
            poly_x: fg.poly.coeffs_x.clone(),
            poly_y: fg.poly.coeffs_y.clone(),
            opacity_raw: logit(fg.opacity),
            color: fg.color,
        }
    }
}

/// Raw angle for `θ`. Angles at the ends of `[0, 2π)` are shifted by π,
/// which leaves the covariance unchanged but keeps the logit finite.
pub fn theta_to_raw(theta: f64) -> f64 {
    let mut frac = theta.rem_euclid(TAU) / TAU;
    if !(frac > 1e-9 && frac < 1.0 - 1e-9) {
        frac = (frac + 0.5).rem_euclid(1.0);
    }
    logit(frac)
}

pub fn activate(raw: &RawGaussianParams) -> FoldedGaussian3D {
    FoldedGaussian3D {
        m_s: raw.m_s,
        cov_s: SpatialCov2::new(
            TAU * sigmoid(raw.theta_raw),
            raw.log_scale[0].exp(),
            raw.log_scale[1].exp(),
        ),
        m_t: sigmoid(raw.m_t_raw),
        sigma_t: raw.log_sigma_t.exp(),
        poly: PolyShift {
            coeffs_x: raw.poly_x.clone(),
            coeffs_y: raw.poly_y.clone(),
        },
        opacity: sigmoid(raw.opacity_raw),
        color: raw.color.map(|c| c.clamp(0.0, 1.0)),
    }
}

/// Structure-of-arrays storage for raw component parameters. Also used for
/// gradients and optimizer moments, which share its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    poly_degree: usize,
    len: usize,
    data: [Vec<f64>; 8],
}

/// Where a row of a rebuilt table comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum RowSource {
    Keep(usize),
    New(RawGaussianParams),
}

impl ParamTable {
    pub fn new(poly_degree: usize) -> Self {
        Self {
            poly_degree,
            len: 0,
            data: Default::default(),
        }
    }

    pub fn zeros(poly_degree: usize, len: usize) -> Self {
        let mut t = Self::new(poly_degree);
        t.len = len;
        for f in Field::ALL {
            t.data[f.slot()] = vec![0.0; len * f.stride(poly_degree)];
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.poly_degree, self.len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn poly_degree(&self) -> usize {
        self.poly_degree
    }

    pub fn stride(&self, f: Field) -> usize {
        f.stride(self.poly_degree)
    }

    pub fn field(&self, f: Field) -> &[f64] {
        &self.data[f.slot()]
    }

    pub fn field_mut(&mut self, f: Field) -> &mut [f64] {
        &mut self.data[f.slot()]
    }

    pub fn row(&self, f: Field, i: usize) -> &[f64] {
        let s = self.stride(f);
        &self.data[f.slot()][i * s..(i + 1) * s]
    }

    pub fn row_mut(&mut self, f: Field, i: usize) -> &mut [f64] {
        let s = self.stride(f);
        &mut self.data[f.slot()][i * s..(i + 1) * s]
    }

    pub fn push(&mut self, raw: &RawGaussianParams) -> Result<()> {
        let p = self.poly_degree;
        if raw.poly_x.len() != p || raw.poly_y.len() != p {
            return Err(Error::Shape(format!(
                "component has degree {}/{}, table expects {p}",
                raw.poly_x.len(),
                raw.poly_y.len()
            )));
        }
        self.data[Field::Mean.slot()].extend_from_slice(&raw.m_s);
        self.data[Field::TimeMean.slot()].push(raw.m_t_raw);
        self.data[Field::LogScale.slot()].extend_from_slice(&raw.log_scale);
        self.data[Field::Theta.slot()].push(raw.theta_raw);
        self.data[Field::LogSigmaT.slot()].push(raw.log_sigma_t);
        self.data[Field::Poly.slot()].extend_from_slice(&raw.poly_x);
        self.data[Field::Poly.slot()].extend_from_slice(&raw.poly_y);
        self.data[Field::Opacity.slot()].push(raw.opacity_raw);
        self.data[Field::Color.slot()].extend_from_slice(&raw.color);
        self.len += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> RawGaussianParams {
        let p = self.poly_degree;
        let poly = self.row(Field::Poly, i);
        let m = self.row(Field::Mean, i);
        let s = self.row(Field::LogScale, i);
        let c = self.row(Field::Color, i);
        RawGaussianParams {
            m_s: [m[0], m[1]],
            m_t_raw: self.field(Field::TimeMean)[i],
            log_scale: [s[0], s[1]],
            theta_raw: self.field(Field::Theta)[i],
            log_sigma_t: self.field(Field::LogSigmaT)[i],
            poly_x: poly[..p].to_vec(),
            poly_y: poly[p..].to_vec(),
            opacity_raw: self.field(Field::Opacity)[i],
            color: [c[0], c[1], c[2]],
        }
    }

    pub fn set(&mut self, i: usize, raw: &RawGaussianParams) {
        let p = self.poly_degree;
        self.row_mut(Field::Mean, i).copy_from_slice(&raw.m_s);
        self.data[Field::TimeMean.slot()][i] = raw.m_t_raw;
        self.row_mut(Field::LogScale, i).copy_from_slice(&raw.log_scale);
        self.data[Field::Theta.slot()][i] = raw.theta_raw;
        self.data[Field::LogSigmaT.slot()][i] = raw.log_sigma_t;
        let poly = self.row_mut(Field::Poly, i);
        poly[..p].copy_from_slice(&raw.poly_x);
        poly[p..].copy_from_slice(&raw.poly_y);
        self.data[Field::Opacity.slot()][i] = raw.opacity_raw;
        self.row_mut(Field::Color, i).copy_from_slice(&raw.color);
    }

    pub fn activated(&self, i: usize) -> FoldedGaussian3D {
        activate(&self.get(i))
    }

    /// New table whose rows follow `sources`; `New` rows take the given
    /// values, or zeros when `zero_new` is set (optimizer moments).
    pub fn rebuild(&self, sources: &[RowSource], zero_new: bool) -> Self {
        let mut out = Self::new(self.poly_degree);
        for f in Field::ALL {
            out.data[f.slot()].reserve(sources.len() * self.stride(f));
        }
        let zero = RawGaussianParams {
            m_s: [0.0; 2],
            m_t_raw: 0.0,
            log_scale: [0.0; 2],
            theta_raw: 0.0,
            log_sigma_t: 0.0,
            poly_x: vec![0.0; self.poly_degree],
            poly_y: vec![0.0; self.poly_degree],
            opacity_raw: 0.0,
            color: [0.0; 3],
        };
        for src in sources {
            match src {
                RowSource::Keep(i) => {
                    for f in Field::ALL {
                        let row = self.row(f, *i).to_vec();
                        out.data[f.slot()].extend_from_slice(&row);
                    }
                    out.len += 1;
                }
                RowSource::New(raw) => {
                    let raw = if zero_new { &zero } else { raw };
                    out.push(raw).expect("row degree matches table");
                }
            }
        }
        out
    }

    /// Keep rows where `keep[i]`.
    pub fn retain(&mut self, keep: &[bool]) {
        let sources: Vec<RowSource> = keep
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| RowSource::Keep(i))
            .collect();
        *self = self.rebuild(&sources, false);
    }

    /// Round every value to the nearest `f32`, the checkpoint precision.
    pub fn snap_to_f32(&mut self) {
        for v in self.data.iter_mut().flatten() {
            *v = *v as f32 as f64;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// Euclidean norm per field (diagnostics).
    pub fn field_norms(&self) -> Vec<(&'static str, f64)> {
        Field::ALL
            .iter()
            .map(|f| (f.name(), self.field(*f).iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect()
    }
}

/// Softmax-cumulative map from frame index to time: with `p = softmax(w)`,
/// `t_0 = 0` and `t_k = p_1 + … + p_k`, so `t_{n−1} = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTimeline {
    pub weights: Vec<f64>,
}

impl FrameTimeline {
    pub fn uniform(n_frames: usize) -> Result<Self> {
        if n_frames < 2 {
            return Err(Error::Config(format!("timeline needs at least 2 frames, got {n_frames}")));
        }
        Ok(Self {
            weights: vec![0.0; n_frames - 1],
        })
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("timeline needs at least 2 frames".into()));
        }
        Ok(Self { weights })
    }

    pub fn n_frames(&self) -> usize {
        self.weights.len() + 1
    }

    fn softmax(&self) -> Vec<f64> {
        let max = self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    pub fn frame_times(&self) -> Vec<f64> {
        let max = self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut partial = Vec::with_capacity(self.weights.len() + 1);
        let mut acc = 0.0;
        partial.push(0.0);
        for w in &self.weights {
            acc += (w - max).exp();
            partial.push(acc);
        }
        // Dividing running sums by the final sum pins t_{n-1} to exactly 1.
        partial.iter().map(|s| s / acc).collect()
    }

    /// `r + 1` evenly spaced times from `t_k` to `t_{k+1}` inclusive.
    pub fn interp_times(&self, k: usize, r: usize) -> Result<Vec<f64>> {
        let n = self.n_frames();
        if k + 1 >= n {
            return Err(Error::Index { index: k, len: n - 1 });
        }
        if r == 0 {
            return Err(Error::Config("interpolation rate must be >= 1".into()));
        }
        let times = self.frame_times();
        let (a, b) = (times[k], times[k + 1]);
        Ok((0..=r)
            .map(|j| if j == r { b } else { a + j as f64 * (b - a) / r as f64 })
            .collect())
    }

    /// Chain `∂L/∂t_k` back to `∂L/∂w_j = p_j (Σ_{k≥j} g_k − Σ_k g_k t_k)`.
    pub fn backward(&self, d_times: &[f64]) -> Vec<f64> {
        let p = self.softmax();
        let times = self.frame_times();
        let dot: f64 = d_times.iter().zip(&times).map(|(g, t)| g * t).sum();
        let mut suffix = 0.0;
        let mut out = vec![0.0; p.len()];
        for j in (0..p.len()).rev() {
            suffix += d_times[j + 1];
            out[j] = p[j] * (suffix - dot);
        }
        out
    }
}

pub fn frame_times(tl: &FrameTimeline) -> Result<Vec<f64>> {
    if tl.n_frames() < 2 {
        return Err(Error::Config("timeline needs at least 2 frames".into()));
    }
    Ok(tl.frame_times())
}

/// Flat Gaussian in the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatGaussian {
    pub mean: [f64; 2],
    pub theta: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Three-point face `[m, v1, v2]` on the `z = 0` plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleFace {
    pub m: [f64; 3],
    pub v1: [f64; 3],
    pub v2: [f64; 3],
}

/// `v1 = m + s1·r1`, `v2 = m + s2·r2` with `r1, r2` the columns of `R(θ)`.
pub fn to_triangle(g: &FlatGaussian) -> TriangleFace {
    let (s, c) = g.theta.sin_cos();
    let m = [g.mean[0], g.mean[1], 0.0];
    TriangleFace {
        m,
        v1: [m[0] + g.s1 * c, m[1] + g.s1 * s, 0.0],
        v2: [m[0] - g.s2 * s, m[1] + g.s2 * c, 0.0],
    }
}

/// Recover the flat Gaussian from a face with one Gram–Schmidt step.
///
/// `component` only labels the error for degenerate faces.
pub fn from_triangle(face: &TriangleFace, component: usize) -> Result<FlatGaussian> {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let d1 = sub(face.v1, face.m);
    let d2 = sub(face.v2, face.m);
    let s1 = dot(d1, d1).sqrt();
    let n2 = dot(d2, d2).sqrt();
    if !(s1 > 0.0) || !(n2 > 0.0) || !s1.is_finite() || !n2.is_finite() {
        return Err(Error::DegenerateFace { component });
    }
    let r1 = d1.map(|v| v / s1);
    let proj = dot(d2, r1);
    let w = [d2[0] - proj * r1[0], d2[1] - proj * r1[1], d2[2] - proj * r1[2]];
    let wn = dot(w, w).sqrt();
    if !(wn > 1e-12 * n2) {
        return Err(Error::DegenerateFace { component });
    }
    let r2 = w.map(|v| v / wn);
    let s2 = dot(d2, r2);
    let theta = r1[1].atan2(r1[0]).rem_euclid(TAU);
    Ok(FlatGaussian {
        mean: [face.m[0], face.m[1]],
        theta: if theta >= TAU { 0.0 } else { theta },
        s1,
        s2,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOverlay {
    pub frame: usize,
    pub gaussians: Vec<ConditionedGaussian2D>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub steps: u64,
    pub seed: u64,
    pub config: String,
}

/// A fitted (or initialized) video model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ParamTable,
    pub timeline: FrameTimeline,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Baked single-frame replacements, at most one per frame.
    pub overlays: Vec<FrameOverlay>,
    pub meta: TrainingMeta,
}

/// Axis-aligned box in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    /// The visible frame for a `width × height` image.
    pub fn frame(width: usize, height: usize) -> Self {
        let a = width as f64 / height as f64;
        Self {
            min: [-a, -1.0],
            max: [a, 1.0],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

impl Model {
    pub fn new(params: ParamTable, n_frames: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("invalid frame size {width}x{height}")));
        }
        Ok(Self {
            params,
            timeline: FrameTimeline::uniform(n_frames)?,
            width,
            height,
            background: [0.0; 3],
            overlays: Vec::new(),
            meta: TrainingMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.timeline.n_frames()
    }

    pub fn poly_degree(&self) -> usize {
        self.params.poly_degree()
    }

    pub fn bbox(&self) -> BBox {
        BBox::frame(self.width, self.height)
    }

    /// Half-diagonal of the visible frame in normalized units.
    pub fn extent(&self) -> f64 {
        let a = self.width as f64 / self.height as f64;
        (a * a + 1.0).sqrt()
    }

    pub fn component(&self, i: usize) -> FoldedGaussian3D {
        self.params.activated(i)
    }

    fn overlay_for_time(&self, t: f64) -> Option<&FrameOverlay> {
        if self.overlays.is_empty() {
            return None;
        }
        let times = self.timeline.frame_times();
        self.overlays
            .iter()
            .find(|o| times.get(o.frame).is_some_and(|tk| tk.to_bits() == t.to_bits()))
    }

    /// Scene rendered at time `t`; exact key times of overridden frames use
    /// their overlay.
    pub fn scene_at(&self, t: f64) -> SplatScene {
        match self.overlay_for_time(t) {
            Some(o) => SplatScene::new(o.gaussians.clone()),
            None => condition_all(&self.params, t).0,
        }
    }

    pub fn render_at(&self, t: f64) -> Frame {
        render(&self.scene_at(t), self.width, self.height, self.background)
    }

    pub fn render_frame(&self, k: usize) -> Result<Frame> {
        let times = self.timeline.frame_times();
        let t = *times.get(k).ok_or(Error::Index {
            index: k,
            len: times.len(),
        })?;
        Ok(self.render_at(t))
    }

    pub fn snap_to_f32(&mut self) {
        self.params.snap_to_f32();
        for w in self.timeline.weights.iter_mut().chain(self.background.iter_mut()) {
            *w = *w as f32 as f64;
        }
    }
}

/// Condition every component at `t`. Returns the scene (order key =
/// component index) and the component index of each scene entry.
///
/// Components whose scaled covariance is numerically singular are culled;
/// the rasterizer would give them zero alpha everywhere, so the rendered
/// frame is unchanged.
pub fn condition_all(params: &ParamTable, t: f64) -> (SplatScene, Vec<usize>) {
    let mut gaussians = Vec::with_capacity(params.len());
    let mut ids = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = condition_at(&params.activated(i), t);
        let m = g.cov_matrix();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        gaussians.push(g);
        ids.push(i);
    }
    let order_key = ids.iter().map(|&i| i as u64).collect();
    (SplatScene { gaussians, order_key }, ids)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitConfig {
    pub n_init: usize,
    pub poly_degree: usize,
    /// Post-activation opacity.
    pub opacity: f64,
    /// Range of post-activation `σ_t`.
    pub sigma_t_range: (f64, f64),
    /// Polynomial coefficients are drawn from `[-poly_range, poly_range]`.
    pub poly_range: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            n_init: 500_000,
            poly_degree: 7,
            opacity: 0.1,
            sigma_t_range: (0.01, 1.0),
            poly_range: 1.0,
        }
    }
}

/// Random initialization: means uniform in `bbox`, `m_t` uniform in [0,1],
/// `σ_t` uniform in `sigma_t_range`, polynomial coefficients uniform,
/// `θ` uniform in [0, 2π), isotropic scale equal to the distance to the
/// third-nearest other mean, gray color.
pub fn init_params<R: Rng + ?Sized>(cfg: &InitConfig, bbox: BBox, rng: &mut R) -> Result<ParamTable> {
    if cfg.n_init == 0 {
        return Err(Error::Config("n_init must be >= 1".into()));
    }
    let (lo, hi) = cfg.sigma_t_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Config(format!("invalid sigma_t range {lo}..{hi}")));
    }
    let means: Vec<[f64; 2]> = (0..cfg.n_init)
        .map(|_| {
            [
                bbox.min[0] + rng.random::<f64>() * (bbox.max[0] - bbox.min[0]),
                bbox.min[1] + rng.random::<f64>() * (bbox.max[1] - bbox.min[1]),
            ]
        })
        .collect();
    let fallback = (bbox.area() / cfg.n_init as f64).sqrt();
    let scales = knn_distance(&means, 3, bbox, fallback);
    let mut table = ParamTable::new(cfg.poly_degree);
    for (m, scale) in means.iter().zip(scales) {
        let u_t: f64 = open_unit(rng);
        let sigma_t = lo + rng.random::<f64>() * (hi - lo);
        let poly_x = (0..cfg.poly_degree)
            .map(|_| rng.random_range(-cfg.poly_range..=cfg.poly_range))
            .collect();
        let poly_y = (0..cfg.poly_degree)
            .map(|_| rng.random_range(-cfg.poly_range..=cfg.poly_range))
            .collect();
        let u_theta: f64 = open_unit(rng);
        let log_s = scale.max(1e-7).ln();
        table.push(&RawGaussianParams {
            m_s: *m,
            m_t_raw: logit(u_t),
            log_scale: [log_s, log_s],
            theta_raw: logit(u_theta),
            log_sigma_t: sigma_t.ln(),
            poly_x,
            poly_y,
            opacity_raw: logit(cfg.opacity),
            color: [0.5; 3],
        })?;
    }
    table.snap_to_f32();
    Ok(table)
}

/// Uniform draw from the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Distance from each point to its `k`-th nearest other point, via a
/// uniform grid. Points with fewer than `k` neighbours get `fallback`.
fn knn_distance(points: &[[f64; 2]], k: usize, bbox: BBox, fallback: f64) -> Vec<f64> {
    let n = points.len();
    if n <= k {
        return vec![fallback; n];
    }
    let cell = (bbox.area() * k as f64 / n as f64).sqrt().max(1e-9);
    let nx = (((bbox.max[0] - bbox.min[0]) / cell).ceil() as usize).max(1);
    let ny = (((bbox.max[1] - bbox.min[1]) / cell).ceil() as usize).max(1);
    let cell_of = |p: &[f64; 2]| {
        let cx = (((p[0] - bbox.min[0]) / cell) as isize).clamp(0, nx as isize - 1);
        let cy = (((p[1] - bbox.min[1]) / cell) as isize).clamp(0, ny as isize - 1);
        (cx, cy)
    };
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        grid[cy as usize * nx + cx as usize].push(i);
    }
    let mut out = Vec::with_capacity(n);
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        best.clear();
        let mut ring = 0isize;
        loop {
            for gy in cy - ring..=cy + ring {
                for gx in cx - ring..=cx + ring {
                    let on_ring = (gy - cy).abs() == ring || (gx - cx).abs() == ring;
                    if !on_ring || gx < 0 || gy < 0 || gx >= nx as isize || gy >= ny as isize {
                        continue;
                    }
                    for &j in &grid[gy as usize * nx + gx as usize] {
                        if j == i {
                            continue;
                        }
                        let q = &points[j];
                        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                        let pos = best.partition_point(|b| *b <= d);
                        if pos < k {
                            best.insert(pos, d);
                            best.truncate(k);
                        }
                    }
                }
            }
            // Anything beyond this ring is at least `ring * cell` away.
            let covered = ring as f64 * cell;
            let exhausted = ring as usize > nx.max(ny);
            if (best.len() == k && best[k - 1] <= covered) || exhausted {
                break;
            }
            ring += 1;
        }
        out.push(if best.len() == k { best[k - 1] } else { fallback });
    }
    out
}

/// Clone/split/prune schedule and thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub from_step: u64,
    pub until_step: u64,
    pub interval: u64,
    /// Average norm of the loss gradient w.r.t. conditioned 2D means.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub percent_dense: f64,
    pub split_factor: f64,
    pub split_children: usize,
    pub reset_interval: u64,
    pub reset_until: u64,
    pub reset_opacity: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            from_step: 500,
            until_step: 15_000,
            interval: 100,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            percent_dense: 0.01,
            split_factor: 1.6,
            split_children: 2,
            reset_interval: 3_000,
            reset_until: 15_000,
            reset_opacity: 0.01,
        }
    }
}

/// Accumulated mean-gradient norms since the last densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn record(&mut self, i: usize, grad_norm: f64) {
        self.accum[i] += grad_norm;
        self.count[i] += 1;
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyOutcome {
    pub sources: Vec<RowSource>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Plan one densify/prune round.
///
/// High-gradient components whose largest spatial scale is at most
/// `percent_dense · extent` are cloned; larger ones are replaced by
/// `split_children` copies placed by sampling the component at its temporal
/// mode, with spatial scales divided by `split_factor`. Temporal and
/// polynomial parameters are copied. Finally every row with opacity below
/// `prune_opacity` is dropped. Surviving rows keep their order; new rows are
/// appended.
pub fn densify_and_prune<R: Rng + ?Sized>(
    params: &ParamTable,
    stats: &GradStats,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut R,
) -> DensifyOutcome {
    let n = params.len();
    let limit = cfg.percent_dense * extent;
    let mut keep = vec![true; n];
    let mut appended = Vec::new();
    let mut out = DensifyOutcome::default();
    for i in 0..n {
        if stats.count.get(i).copied().unwrap_or(0) == 0 || stats.average(i) < cfg.grad_threshold {
            continue;
        }
        let raw = params.get(i);
        let max_scale = raw.log_scale[0].max(raw.log_scale[1]).exp();
        if max_scale <= limit {
            appended.push(raw);
            out.cloned += 1;
        } else {
            let fg = activate(&raw);
            let base = condition_at(&fg, fg.m_t);
            for _ in 0..cfg.split_children {
                let mut child = raw.clone();
                child.m_s = sample_conditioned(&base, rng);
                let shrink = cfg.split_factor.ln();
                child.log_scale = [raw.log_scale[0] - shrink, raw.log_scale[1] - shrink];
                appended.push(child);
            }
            keep[i] = false;
            out.split += 1;
        }
    }
    let prune_raw = logit(cfg.prune_opacity);
    for i in 0..n {
        if keep[i] {
            if params.field(Field::Opacity)[i] < prune_raw {
                out.pruned += 1;
            } else {
                out.sources.push(RowSource::Keep(i));
            }
        }
    }
    for raw in appended {
        if raw.opacity_raw < prune_raw {
            out.pruned += 1;
        } else {
            out.sources.push(RowSource::New(raw));
        }
    }
    out
}

/// Cap every opacity at `value`; returns the indices that changed.
pub fn reset_opacity(params: &mut ParamTable, value: f64) -> Vec<usize> {
    let cap = logit(value);
    let mut changed = Vec::new();
    for (i, o) in params.field_mut(Field::Opacity).iter_mut().enumerate() {
        if *o > cap {
            *o = cap;
            changed.push(i);
        }
    }
    changed
}

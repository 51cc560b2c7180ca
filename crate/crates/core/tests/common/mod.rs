//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use foldsplat::foldgauss::{ConditionedGaussian2D, FoldedGaussian3D, PolyShift, SpatialCov2};
use foldsplat::model::{logit, theta_to_raw, Field, Model, ParamTable, RawGaussianParams};
use foldsplat::splat2d::{Frame, SplatScene};
use foldsplat::trainer::{loss_and_gradients, LossConfig};
use rand::Rng;

pub fn random_frame<R: Rng>(rng: &mut R, w: usize, h: usize) -> Frame {
    Frame::from_data(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

/// Random flat scene over a `w × h` frame, including some splats that are
/// partly off-screen, tiny, or nearly opaque.
pub fn random_scene<R: Rng>(rng: &mut R, n: usize, w: usize, h: usize) -> SplatScene {
    let a = w as f64 / h as f64;
    let gaussians = (0..n)
        .map(|_| ConditionedGaussian2D {
            mean: [rng.random_range(-1.3 * a..1.3 * a), rng.random_range(-1.3..1.3)],
            cov: SpatialCov2::new(
                rng.random_range(0.0..std::f64::consts::TAU),
                10f64.powf(rng.random_range(-2.5..-0.3)),
                10f64.powf(rng.random_range(-2.5..-0.3)),
            ),
            scale: rng.random_range(0.05..1.0),
            opacity: rng.random_range(0.0..1.0),
            color: [rng.random(), rng.random(), rng.random()],
        })
        .collect();
    SplatScene::new(gaussians)
}

pub fn random_component<R: Rng>(rng: &mut R, degree: usize) -> FoldedGaussian3D {
    let coeffs = |rng: &mut R| (0..degree).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (cx, cy) = (coeffs(rng), coeffs(rng));
    FoldedGaussian3D {
        m_s: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        cov_s: SpatialCov2::new(
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.05..0.5),
            rng.random_range(0.05..0.5),
        ),
        m_t: rng.random_range(0.1..0.9),
        sigma_t: rng.random_range(0.05..0.5),
        poly: PolyShift::new(cx, cy).unwrap(),
        opacity: rng.random_range(0.05..0.95),
        color: [rng.random(), rng.random(), rng.random()],
    }
}

/// Three smooth, mostly on-screen components on an 8×8 frame with four
/// targets. Opacities stay below the 0.99 clamp and colors inside `[0, 1]`.
pub fn gradient_problem<R: Rng>(rng: &mut R) -> (Model, Vec<Frame>) {
    let degree = 2;
    let mut params = ParamTable::new(degree);
    for _ in 0..3 {
        let theta: f64 = rng.random_range(0.3..6.0);
        params
            .push(&RawGaussianParams {
                m_s: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
                m_t_raw: logit(rng.random_range(0.2..0.8)),
                log_scale: [rng.random_range(0.25f64..0.6).ln(), rng.random_range(0.25f64..0.6).ln()],
                theta_raw: theta_to_raw(theta),
                log_sigma_t: rng.random_range(0.3f64..0.8).ln(),
                poly_x: (0..degree).map(|_| rng.random_range(-0.4..0.4)).collect(),
                poly_y: (0..degree).map(|_| rng.random_range(-0.4..0.4)).collect(),
                opacity_raw: logit(rng.random_range(0.3..0.8)),
                color: [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
            })
            .unwrap();
    }
    let mut model = Model::new(params, 4, 8, 8).unwrap();
    model.timeline.weights = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
    model.background = [0.2, 0.3, 0.4];
    let frames = (0..4).map(|_| random_frame(rng, 8, 8)).collect();
    (model, frames)
}

/// Parameter classes checked by the gradient suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    Mean,
    Theta,
    S1,
    S2,
    TimeMean,
    SigmaT,
    Poly,
    Opacity,
    Color,
    Timeline,
}

impl ParamClass {
    pub const ALL: [ParamClass; 10] = [
        ParamClass::Mean,
        ParamClass::Theta,
        ParamClass::S1,
        ParamClass::S2,
        ParamClass::TimeMean,
        ParamClass::SigmaT,
        ParamClass::Poly,
        ParamClass::Opacity,
        ParamClass::Color,
        ParamClass::Timeline,
    ];

    /// `(field, offset within row)` slots of component `i`, or timeline
    /// indices for [`ParamClass::Timeline`].
    fn slots(self, model: &Model, i: usize) -> Vec<(Option<Field>, usize)> {
        let p = model.poly_degree();
        let row = |f: Field, offs: &[usize]| {
            let s = model.params.stride(f);
            offs.iter().map(|o| (Some(f), i * s + o)).collect::<Vec<_>>()
        };
        match self {
            ParamClass::Mean => row(Field::Mean, &[0, 1]),
            ParamClass::Theta => row(Field::Theta, &[0]),
            ParamClass::S1 => row(Field::LogScale, &[0]),
            ParamClass::S2 => row(Field::LogScale, &[1]),
            ParamClass::TimeMean => row(Field::TimeMean, &[0]),
            ParamClass::SigmaT => row(Field::LogSigmaT, &[0]),
            ParamClass::Poly => row(Field::Poly, &(0..2 * p).collect::<Vec<_>>()),
            ParamClass::Opacity => row(Field::Opacity, &[0]),
            ParamClass::Color => row(Field::Color, &[0, 1, 2]),
            ParamClass::Timeline if i == 0 => (0..model.timeline.weights.len()).map(|j| (None, j)).collect(),
            ParamClass::Timeline => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub class: ParamClass,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// `|a − n| ≤ max(rel · max(|a|, |n|), abs_floor)`.
    pub fn ok(&self, rel: f64, abs_floor: f64) -> bool {
        let diff = (self.analytic - self.numeric).abs();
        diff <= (rel * self.analytic.abs().max(self.numeric.abs())).max(abs_floor)
    }
}

/// Central differences of the batch loss against the analytic gradient for
/// every raw parameter in `classes`.
pub fn check_gradients(model: &Model, frames: &[Frame], classes: &[ParamClass], h: f64) -> Vec<GradCheck> {
    let batch: Vec<usize> = (0..frames.len()).collect();
    let cfg = LossConfig::default();
    let result = loss_and_gradients(model, frames, &batch, &cfg).unwrap();
    let loss_at = |m: &Model| loss_and_gradients(m, frames, &batch, &cfg).unwrap().loss;
    let mut out = Vec::new();
    for &class in classes {
        for i in 0..model.len() {
            for (field, idx) in class.slots(model, i) {
                let perturbed = |delta: f64| {
                    let mut m = model.clone();
                    match field {
                        Some(f) => m.params.field_mut(f)[idx] += delta,
                        None => m.timeline.weights[idx] += delta,
                    }
                    loss_at(&m)
                };
                let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let analytic = match field {
                    Some(f) => result.grads.params.field(f)[idx],
                    None => result.grads.timeline[idx],
                };
                out.push(GradCheck {
                    class,
                    analytic,
                    numeric,
                });
            }
        }
    }
    out
}

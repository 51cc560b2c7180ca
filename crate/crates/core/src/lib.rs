//! Video representation with time-conditioned ("folded") 3D Gaussians.
//!
//! Each component is a Gaussian in time whose spatial slice at time `t` is a
//! flat 2D Gaussian with a polynomially shifted mean and a covariance that
//! shrinks away from the component's temporal mode. Frames are rendered by
//! conditioning every component at the frame time and splatting the
//! resulting 2D Gaussians; the whole chain is differentiable, and the fitted
//! model can be edited through triangle-face handles.

pub mod config;
pub mod editor;
pub mod error;
pub mod foldgauss;
pub mod model;
pub mod splat2d;
pub mod synthetic;
pub mod trainer;
pub mod video_io;

pub use error::{Error, Result};
pub use foldgauss::{ConditionedGaussian2D, FoldedGaussian3D, PolyShift, SpatialCov2};
pub use model::{FrameTimeline, Model, ParamTable};
pub use splat2d::{Frame, SplatScene};

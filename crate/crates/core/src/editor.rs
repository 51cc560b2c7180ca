//! Declarative edits on a fitted model.
//!
//! A script is a JSON object with an `ops` list, applied in order against a
//! current selection:
//!
//! ```json
//! {"ops": [
//!   {"op": "select", "region": {"box": {"min": [-1, -1], "max": [0, 1]}},
//!    "time_window": [0.0, 0.5], "reference_time": 0.0},
//!   {"op": "transform", "matrix": [[1, 0, 0.2], [0, 1, 0]]},
//!   {"op": "duplicate", "offset": [0.3, 0], "count": 2},
//!   {"op": "delete"},
//!   {"op": "override_frame", "frame": 4, "ops": [
//!     {"op": "select", "region": {"polygon": [[0, 0], [1, 0], [0, 1]]}},
//!     {"op": "delete"}
//!   ]}
//! ]}
//! ```
//!
//! Regions are `"all"`, `{"box": {"min", "max"}}` or `{"polygon": [[x, y], …]}`
//! in normalized coordinates and test the component mean conditioned at
//! `reference_time` (default 0). Transform matrices are 2×3 affine maps
//! `[[a, b, tx], [c, d, ty]]`. Overrides bake the scene at one frame's key
//! time into a static overlay; nested ops edit that overlay only and may not
//! use time windows.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::foldgauss::{condition_at, ConditionedGaussian2D, SpatialCov2};
use crate::model::{
    condition_all, from_triangle, theta_to_raw, to_triangle, FlatGaussian, FrameOverlay, Model,
    RowSource, TriangleFace,
};

/// `[[a, b, tx], [c, d, ty]]`.
pub type Affine2 = [[f64; 3]; 2];

pub const IDENTITY: Affine2 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct BoxRegion {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Box(BoxRegion),
    Polygon(Vec<[f64; 2]>),
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Region::All => true,
            Region::Box(b) => p[0] >= b.min[0] && p[0] <= b.max[0] && p[1] >= b.min[1] && p[1] <= b.max[1],
            Region::Polygon(vs) => {
                // Even-odd rule.
                let mut inside = false;
                let mut j = vs.len().wrapping_sub(1);
                for i in 0..vs.len() {
                    let (a, b) = (vs[i], vs[j]);
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                        if p[0] < x {
                            inside = !inside;
                        }
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectCriteria {
    pub region: Region,
    /// Inclusive bounds on the temporal mode `m_t`.
    #[serde(default)]
    pub time_window: Option<[f64; 2]>,
    #[serde(default)]
    pub reference_time: f64,
}

impl SelectCriteria {
    pub fn all() -> Self {
        Self {
            region: Region::All,
            time_window: None,
            reference_time: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    Select {
        region: Region,
        #[serde(default)]
        time_window: Option<[f64; 2]>,
        #[serde(default)]
        reference_time: f64,
    },
    Transform {
        matrix: Affine2,
    },
    Duplicate {
        offset: [f64; 2],
        count: usize,
    },
    Delete,
    OverrideFrame {
        frame: usize,
        ops: Vec<EditOp>,
    },
}

impl EditOp {
    fn validate(&self, nested: bool) -> Result<()> {
        match self {
            EditOp::Select {
                region,
                time_window,
                reference_time,
            } => {
                if let Region::Polygon(vs) = region {
                    if vs.len() < 3 {
                        return Err(Error::edit("polygon needs at least 3 vertices"));
                    }
                }
                if nested && time_window.is_some() {
                    return Err(Error::edit("frame overlays are timeless; time_window is not allowed"));
                }
                if let Some([a, b]) = time_window {
                    if !(a <= b) {
                        return Err(Error::edit(format!("empty time window [{a}, {b}]")));
                    }
                }
                if !reference_time.is_finite() {
                    return Err(Error::edit("reference_time must be finite"));
                }
            }
            EditOp::Transform { matrix } => {
                check_affine(matrix)?;
            }
            EditOp::Duplicate { offset, count } => {
                if *count == 0 {
                    return Err(Error::edit("duplicate count must be ≥ 1"));
                }
                if !offset.iter().all(|v| v.is_finite()) {
                    return Err(Error::edit("duplicate offset must be finite"));
                }
            }
            EditOp::Delete => {}
            EditOp::OverrideFrame { ops, .. } => {
                if nested {
                    return Err(Error::edit("override_frame cannot be nested"));
                }
                for op in ops {
                    op.validate(true)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    ops: Vec<serde_json::Value>,
}

impl EditScript {
    /// Parse and validate; errors name the offending op.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawScript = serde_json::from_str(text).map_err(|e| Error::edit(format!("invalid script: {e}")))?;
        let mut ops = Vec::with_capacity(raw.ops.len());
        for (i, value) in raw.ops.into_iter().enumerate() {
            let at = |reason: String| Error::Edit {
                op_index: Some(i),
                reason,
            };
            let op: EditOp = serde_json::from_value(value).map_err(|e| at(e.to_string()))?;
            op.validate(false).map_err(|e| at(reason_of(e)))?;
            ops.push(op);
        }
        Ok(Self { ops })
    }
}

fn reason_of(e: Error) -> String {
    match e {
        Error::Edit { reason, .. } => reason,
        other => other.to_string(),
    }
}

/// Component ids, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    pub ids: Vec<usize>,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.ids {
            m[i] = true;
        }
        m
    }
}

pub fn select(model: &Model, criteria: &SelectCriteria) -> Selection {
    let ids = (0..model.len())
        .filter(|&i| {
            let fg = model.component(i);
            let in_window = criteria
                .time_window
                .is_none_or(|[a, b]| fg.m_t >= a && fg.m_t <= b);
            in_window && criteria.region.contains(condition_at(&fg, criteria.reference_time).mean)
        })
        .collect();
    Selection { ids }
}

fn check_affine(m: &Affine2) -> Result<()> {
    if !m.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::edit("transform matrix must be finite"));
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale: f64 = [m[0][0], m[0][1], m[1][0], m[1][1]].iter().map(|v| v * v).sum();
    if !(det.abs() > 1e-12 * scale) {
        return Err(Error::edit(format!("transform has a singular linear part (det {det})")));
    }
    Ok(())
}

fn apply_point(m: &Affine2, p: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        p[2],
    ]
}

fn apply_linear(m: &Affine2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn transform_flat(g: &FlatGaussian, m: &Affine2, component: usize) -> Result<FlatGaussian> {
    let face = to_triangle(g);
    let moved = TriangleFace {
        m: apply_point(m, face.m),
        v1: apply_point(m, face.v1),
        v2: apply_point(m, face.v2),
    };
    from_triangle(&moved, component)
}

/// Move, scale and rotate the selected components through their triangle
/// faces. Polynomial motion vectors follow the linear part of `m`.
pub fn transform_affine(model: &mut Model, sel: &Selection, m: &Affine2) -> Result<()> {
    check_affine(m)?;
    let deg = model.poly_degree();
    let mut updates = Vec::with_capacity(sel.len());
    for &i in &sel.ids {
        let fg = model.component(i);
        let flat = FlatGaussian {
            mean: fg.m_s,
            theta: fg.cov_s.theta,
            s1: fg.cov_s.s1,
            s2: fg.cov_s.s2,
        };
        let out = transform_flat(&flat, m, i)?;
        let mut raw = model.params.get(i);
        raw.m_s = out.mean;
        raw.theta_raw = theta_to_raw(out.theta);
        raw.log_scale = [out.s1.ln(), out.s2.ln()];
        for p in 0..deg {
            let [x, y] = apply_linear(m, [raw.poly_x[p], raw.poly_y[p]]);
            raw.poly_x[p] = x;
            raw.poly_y[p] = y;
        }
        updates.push((i, raw));
    }
    for (i, raw) in updates {
        model.params.set(i, &raw);
    }
    model.snap_to_f32();
    Ok(())
}

/// Append `count` copies of the selection, copy `j` shifted by `j · offset`.
/// Copies composite after all existing components.
pub fn duplicate(model: &mut Model, sel: &Selection, offset: [f64; 2], count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::edit("duplicate count must be ≥ 1"));
    }
    let mut sources: Vec<RowSource> = (0..model.len()).map(RowSource::Keep).collect();
    for j in 1..=count {
        for &i in &sel.ids {
            let mut raw = model.params.get(i);
            raw.m_s = [raw.m_s[0] + j as f64 * offset[0], raw.m_s[1] + j as f64 * offset[1]];
            sources.push(RowSource::New(raw));
        }
    }
    model.params = model.params.rebuild(&sources, false);
    model.snap_to_f32();
    Ok(())
}

/// Remove the selection; survivors keep their relative order.
pub fn delete(model: &mut Model, sel: &Selection) {
    if sel.is_empty() {
        return;
    }
    let keep: Vec<bool> = sel.mask(model.len()).into_iter().map(|s| !s).collect();
    model.params.retain(&keep);
}

/// Bake the scene at frame `k`'s key time into an overlay (reusing an
/// existing one) and apply `ops` to it. Only that exact time is affected.
pub fn override_frame(model: &mut Model, k: usize, ops: &[EditOp]) -> Result<()> {
    let n = model.n_frames();
    if k >= n {
        return Err(Error::Index { index: k, len: n });
    }
    for op in ops {
        op.validate(true)?;
    }
    let mut gaussians = match model.overlays.iter().find(|o| o.frame == k) {
        Some(o) => o.gaussians.clone(),
        None => condition_all(&model.params, model.timeline.frame_times()[k]).0.gaussians,
    };
    let mut current: Option<Vec<usize>> = None;
    for op in ops {
        match op {
            EditOp::Select { region, .. } => {
                current = Some((0..gaussians.len()).filter(|&i| region.contains(gaussians[i].mean)).collect());
            }
            EditOp::Transform { matrix } => {
                let ids = current.as_ref().ok_or_else(no_selection)?;
                let mut updated = Vec::with_capacity(ids.len());
                for &i in ids {
                    let g = &gaussians[i];
                    let flat = FlatGaussian {
                        mean: g.mean,
                        theta: g.cov.theta,
                        s1: g.cov.s1,
                        s2: g.cov.s2,
                    };
                    let out = transform_flat(&flat, matrix, i)?;
                    updated.push((
                        i,
                        ConditionedGaussian2D {
                            mean: out.mean,
                            cov: SpatialCov2::new(out.theta, out.s1, out.s2),
                            ..g.clone()
                        },
                    ));
                }
                for (i, g) in updated {
                    gaussians[i] = g;
                }
            }
            EditOp::Duplicate { offset, count } => {
                let ids = current.as_ref().ok_or_else(no_selection)?;
                for j in 1..=*count {
                    for &i in ids {
                        let mut g = gaussians[i].clone();
                        g.mean = [g.mean[0] + j as f64 * offset[0], g.mean[1] + j as f64 * offset[1]];
                        gaussians.push(g);
                    }
                }
            }
            EditOp::Delete => {
                let ids = current.take().ok_or_else(no_selection)?;
                let mut drop = vec![false; gaussians.len()];
                ids.iter().for_each(|&i| drop[i] = true);
                let mut idx = 0;
                gaussians.retain(|_| {
                    idx += 1;
                    !drop[idx - 1]
                });
                current = Some(Vec::new());
            }
            EditOp::OverrideFrame { .. } => return Err(Error::edit("override_frame cannot be nested")),
        }
    }
    model.overlays.retain(|o| o.frame != k);
    model.overlays.push(FrameOverlay { frame: k, gaussians });
    model.overlays.sort_by_key(|o| o.frame);
    Ok(())
}

fn no_selection() -> Error {
    Error::edit("no selection; add a select op first")
}

fn apply_op(model: &mut Model, op: &EditOp, current: &mut Option<Selection>) -> Result<()> {
    op.validate(false)?;
    match op {
        EditOp::Select {
            region,
            time_window,
            reference_time,
        } => {
            *current = Some(select(
                model,
                &SelectCriteria {
                    region: region.clone(),
                    time_window: *time_window,
                    reference_time: *reference_time,
                },
            ));
        }
        EditOp::Transform { matrix } => {
            transform_affine(model, current.as_ref().ok_or_else(no_selection)?, matrix)?;
        }
        EditOp::Duplicate { offset, count } => {
            duplicate(model, current.as_ref().ok_or_else(no_selection)?, *offset, *count)?;
        }
        EditOp::Delete => {
            delete(model, current.as_ref().ok_or_else(no_selection)?);
            *current = Some(Selection::default());
        }
        EditOp::OverrideFrame { frame, ops } => override_frame(model, *frame, ops)?,
    }
    Ok(())
}

/// Apply every op in order. On error the input is untouched and the error
/// carries the index of the failing op.
pub fn apply_script(model: &Model, script: &EditScript) -> Result<Model> {
    let mut out = model.clone();
    let mut current = None;
    for (i, op) in script.ops.iter().enumerate() {
        apply_op(&mut out, op, &mut current).map_err(|e| Error::Edit {
            op_index: Some(i),
            reason: reason_of(e),
        })?;
    }
    Ok(out)
}

//! Domain types shared by every stage of the segmentation pipeline.
//!
//! Flow vectors inside a [`Window`] are expressed in pixels per window, so
//! an [`AffineMotionModel`] is a per-window warp and its flow is directly
//! comparable with the observed normal flow.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::mrf::EnergyBreakdown;

pub type Vec2 = Vector2<f64>;

/// Label identifiers start at 1; 0 is never assigned by the segmenter.
pub type LabelId = u32;

/// Slack allowed on the arcsin argument before clamping.
const ASIN_SLACK: f64 = 1e-6;
/// Below this scale the model vector cannot be decoupled.
const MIN_RHO: f64 = 1e-9;

/// One timestamped pixel carrying a normal-flow vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalFlowObservation {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub n: Vec2,
}

impl NormalFlowObservation {
    pub fn new(t: f64, x: f64, y: f64, nx: f64, ny: f64) -> Self {
        Self {
            t,
            x,
            y,
            n: Vec2::new(nx, ny),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Four-parameter affine warp: scale, rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMotionModel {
    pub rho: f64,
    pub theta: f64,
    pub t_x: f64,
    pub t_y: f64,
}

impl Default for AffineMotionModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineMotionModel {
    pub const fn new(rho: f64, theta: f64, t_x: f64, t_y: f64) -> Self {
        Self {
            rho,
            theta,
            t_x,
            t_y,
        }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub const fn translation(t_x: f64, t_y: f64) -> Self {
        Self::new(1.0, 0.0, t_x, t_y)
    }

    /// `rho > 0`, `theta` in the principal arcsin branch, everything finite.
    pub fn is_valid(&self) -> bool {
        self.rho.is_finite()
            && self.theta.is_finite()
            && self.t_x.is_finite()
            && self.t_y.is_finite()
            && self.rho > 0.0
            && self.theta > -FRAC_PI_2
            && self.theta <= FRAC_PI_2
    }

    pub fn params(&self) -> [f64; 4] {
        [self.rho, self.theta, self.t_x, self.t_y]
    }

    pub fn from_params(p: [f64; 4]) -> Self {
        Self::new(p[0], p[1], p[2], p[3])
    }

    /// Largest absolute difference over the four parameters.
    pub fn max_param_diff(&self, other: &Self) -> f64 {
        self.params()
            .iter()
            .zip(other.params().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Linearized six-entry form of an affine model:
/// `(ρcosθ−1, −ρsinθ, t_x, ρsinθ, ρcosθ−1, t_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelVector(pub [f64; 6]);

impl ModelVector {
    pub fn as_slice(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn dot(&self, row: &[f64; 6]) -> f64 {
        self.0.iter().zip(row.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Flow predicted by `model` at pixel `x`: `(A − I)·(x, y, 1)` restricted to
/// the first two rows.
pub fn affine_flow(model: &AffineMotionModel, x: &Vec2) -> Vec2 {
    let (s, c) = model.theta.sin_cos();
    let a = model.rho * c;
    let b = model.rho * s;
    Vec2::new(
        (a - 1.0) * x.x - b * x.y + model.t_x,
        b * x.x + (a - 1.0) * x.y + model.t_y,
    )
}

pub fn to_vector(model: &AffineMotionModel) -> ModelVector {
    let (s, c) = model.theta.sin_cos();
    let diag = model.rho * c - 1.0;
    let off = model.rho * s;
    let v = ModelVector([diag, -off, model.t_x, off, diag, model.t_y]);
    debug_assert_eq!(v.0[0], v.0[4]);
    v
}

/// Recovers `(ρ, θ, t_x, t_y)` from a (possibly unconstrained) model vector.
pub fn decouple_model(m: &ModelVector) -> Result<AffineMotionModel> {
    let m = &m.0;
    let cos_part = (m[0] + m[4]) / 2.0 + 1.0;
    let sin_part = (m[3] - m[1]) / 2.0;
    let rho = cos_part.hypot(sin_part);
    if !rho.is_finite() || rho < MIN_RHO {
        return Err(Error::DegenerateModel { rho });
    }
    let arg = sin_part / rho;
    debug_assert!(arg.abs() <= 1.0 + ASIN_SLACK);
    let theta = arg.clamp(-1.0, 1.0).asin();
    Ok(AffineMotionModel::new(rho, theta, m[2], m[5]))
}

/// Normal-flow constraint residual `nᵀu − ‖n‖²`.
pub fn flow_residual(n: &Vec2, u: &Vec2) -> Result<f64> {
    let nn = n.norm_squared();
    if nn == 0.0 {
        return Err(Error::ZeroNormalFlow);
    }
    Ok(n.dot(u) - nn)
}

/// Same as [`flow_residual`] without the zero check, for hot loops where the
/// magnitude floor has already been applied.
#[inline]
pub(crate) fn residual_unchecked(model: &AffineMotionModel, obs: &NormalFlowObservation) -> f64 {
    residual_of_vector(&to_vector(model), obs)
}

/// Residual under a precomputed model vector; bit-identical to
/// [`residual_unchecked`] on the model it came from.
#[inline]
pub(crate) fn residual_of_vector(m: &ModelVector, obs: &NormalFlowObservation) -> f64 {
    let m = &m.0;
    let u = Vec2::new(
        m[0] * obs.x + m[1] * obs.y + m[2],
        m[3] * obs.x + m[4] * obs.y + m[5],
    );
    obs.n.dot(&u) - obs.n.norm_squared()
}

/// Axis-aligned box in continuous pixel coordinates, `[min, max)` on each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        Self::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other).area();
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Assignment of every observation to exactly one label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    assignment: Vec<LabelId>,
    active: BTreeSet<LabelId>,
}

impl Labeling {
    pub fn new(assignment: Vec<LabelId>) -> Self {
        let active = assignment.iter().copied().collect();
        Self { assignment, active }
    }

    pub fn uniform(len: usize, label: LabelId) -> Self {
        Self::new(vec![label; len])
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn label(&self, i: usize) -> LabelId {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[LabelId] {
        &self.assignment
    }

    pub fn active_labels(&self) -> &BTreeSet<LabelId> {
        &self.active
    }

    pub fn is_active(&self, label: LabelId) -> bool {
        self.active.contains(&label)
    }

    /// Member count per active label.
    pub fn counts(&self) -> BTreeMap<LabelId, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.assignment {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn members(&self, label: LabelId) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of positions where the two labelings disagree.
    pub fn diff_count(&self, other: &Labeling) -> usize {
        self.assignment
            .iter()
            .zip(other.assignment.iter())
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn into_assignment(self) -> Vec<LabelId> {
        self.assignment
    }
}

/// Observations falling in one fixed-length time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_time: f64,
    pub duration: f64,
    pub width: u32,
    pub height: u32,
    pub observations: Vec<NormalFlowObservation>,
}

impl Window {
    pub fn new(start_time: f64, duration: f64, width: u32, height: u32) -> Self {
        Self {
            start_time,
            duration,
            width,
            height,
            observations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn mid_time(&self) -> f64 {
        self.start_time + 0.5 * self.duration
    }

    pub fn sort_by_time(&mut self) {
        self.observations.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
}

/// Output of segmenting one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub labeling: Labeling,
    pub models: BTreeMap<LabelId, AffineMotionModel>,
    pub background_label: LabelId,
    pub imo_boxes: Vec<(LabelId, BBox)>,
    pub final_energy: EnergyBreakdown,
    /// Energy after every labeling sweep and fitting round, in order.
    pub energy_trace: Vec<EnergyBreakdown>,
    pub iterations: usize,
}

impl SegmentationResult {
    pub fn imo_labels(&self) -> Vec<LabelId> {
        self.labeling
            .active_labels()
            .iter()
            .copied()
            .filter(|&l| l != self.background_label)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_yields_zero_flow() {
        let u = affine_flow(&AffineMotionModel::identity(), &Vec2::new(7.0, 3.0));
        assert_eq!(u, Vec2::zeros());
    }

    #[test]
    fn translation_is_position_independent() {
        let u = affine_flow(&AffineMotionModel::translation(2.0, -1.0), &Vec2::new(100.0, 50.0));
        assert_abs_diff_eq!(u, Vec2::new(2.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_flow() {
        let m = AffineMotionModel::new(1.0, PI / 2.0, 0.0, 0.0);
        let u = affine_flow(&m, &Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(u, Vec2::new(-1.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn model_vector_examples() {
        assert_eq!(to_vector(&AffineMotionModel::identity()).0, [0.0; 6]);
        assert_eq!(
            to_vector(&AffineMotionModel::translation(3.0, 4.0)).0,
            [0.0, 0.0, 3.0, 0.0, 0.0, 4.0]
        );
        let v = to_vector(&AffineMotionModel::new(2.0, 0.0, 0.0, 0.0));
        assert_eq!(v.0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn decouple_examples() {
        let m = decouple_model(&ModelVector([0.0; 6])).unwrap();
        assert_eq!(m, AffineMotionModel::identity());

        let m = decouple_model(&ModelVector([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(m.rho, 2.0, epsilon = 1e-15);
        assert_eq!(m.theta, 0.0);

        let truth = AffineMotionModel::new(1.0, 0.3, 5.0, -2.0);
        let back = decouple_model(&to_vector(&truth)).unwrap();
        assert!(back.max_param_diff(&truth) < 1e-9);
    }

    #[test]
    fn decouple_rejects_zero_scale() {
        let v = ModelVector([-1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
        assert!(matches!(decouple_model(&v), Err(Error::DegenerateModel { .. })));
    }

    #[test]
    fn residual_examples() {
        let r = |n: (f64, f64), u: (f64, f64)| {
            flow_residual(&Vec2::new(n.0, n.1), &Vec2::new(u.0, u.1)).unwrap()
        };
        assert_eq!(r((1.0, 0.0), (1.0, 0.0)), 0.0);
        assert_eq!(r((1.0, 0.0), (1.0, 5.0)), 0.0);
        assert_eq!(r((2.0, 0.0), (1.0, 0.0)), -2.0);
        assert!(matches!(
            flow_residual(&Vec2::zeros(), &Vec2::new(1.0, 1.0)),
            Err(Error::ZeroNormalFlow)
        ));
    }

    #[test]
    fn labeling_tracks_active_set() {
        let l = Labeling::new(vec![1, 1, 3, 3, 3]);
        assert_eq!(l.active_labels().iter().copied().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(l.counts()[&3], 3);
        assert_eq!(l.members(1), vec![0, 1]);
    }

    fn model_strategy() -> impl Strategy<Value = AffineMotionModel> {
        (0.2f64..3.0, -1.5f64..1.5, -50.0f64..50.0, -50.0f64..50.0)
            .prop_map(|(r, th, tx, ty)| AffineMotionModel::new(r, th, tx, ty))
    }

    proptest! {
        #[test]
        fn vector_round_trip(model in model_strategy()) {
            let back = decouple_model(&to_vector(&model)).unwrap();
            prop_assert!(back.max_param_diff(&model) < 1e-9);
        }

        #[test]
        fn row_form_matches_matrix_form(
            model in model_strategy(),
            x in 0.0f64..346.0, y in 0.0f64..260.0,
            nx in -20.0f64..20.0, ny in -20.0f64..20.0,
        ) {
            prop_assume!(nx.hypot(ny) > 1e-3);
            let n = Vec2::new(nx, ny);
            let matrix = flow_residual(&n, &affine_flow(&model, &Vec2::new(x, y))).unwrap();
            let row = [nx * x, nx * y, nx, ny * x, ny * y, ny];
            let linear = to_vector(&model).dot(&row) - n.norm_squared();
            // Absolute agreement scaled by the magnitude of the summands.
            let scale = 1.0 + n.norm() * (x.abs() + y.abs() + 1.0) * (model.rho + model.t_x.abs() + model.t_y.abs() + 1.0);
            prop_assert!((matrix - linear).abs() <= 1e-12 * scale);
        }

        #[test]
        fn flow_is_affine_in_position(
            model in model_strategy(),
            a in (0.0f64..346.0, 0.0f64..260.0),
            b in (0.0f64..346.0, 0.0f64..260.0),
            alpha in 0.0f64..1.0,
        ) {
            let p1 = Vec2::new(a.0, a.1);
            let p2 = Vec2::new(b.0, b.1);
            let mix = affine_flow(&model, &(alpha * p1 + (1.0 - alpha) * p2));
            let lin = alpha * affine_flow(&model, &p1) + (1.0 - alpha) * affine_flow(&model, &p2);
            prop_assert!((mix - lin).norm() < 1e-9);
        }
    }
}

//! Candidate motion models for a window: translation seeds sampled from the
//! observed flow, plus models predicted from the previous window's moving
//! objects.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fitting::{fit_nonlinear, LmOptions};
use crate::types::{AffineMotionModel, BBox, LabelId, SegmentationResult, Vec2, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitParams {
    /// Sampled seeds when no prediction is available.
    pub samples: usize,
    /// Sampled seeds when at least one predicted model exists.
    pub samples_with_prior: usize,
    /// Minimum flow-space distance between sampled seeds (px/window).
    pub d_min: f64,
    /// Dilation radius used by region growing (px).
    pub r_grow: u32,
    pub min_cluster_size: usize,
    /// Predicted boxes with a smaller clamped area are dropped (px²).
    pub a_min: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            samples: 12,
            samples_with_prior: 6,
            d_min: 1.0,
            r_grow: 3,
            min_cluster_size: 30,
            a_min: 25.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Sampled,
    Predicted,
    /// The static seed added to every set.
    Identity,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub models: Vec<AffineMotionModel>,
    pub provenance: Vec<Provenance>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn push(&mut self, model: AffineMotionModel, provenance: Provenance) {
        self.models.push(model);
        self.provenance.push(provenance);
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == provenance).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AffineMotionModel, Provenance)> {
        self.models.iter().zip(self.provenance.iter().copied())
    }
}

/// A moving object carried from one window to the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedIMO {
    pub label: LabelId,
    pub model: AffineMotionModel,
    pub bbox: BBox,
    pub members: usize,
}

/// Indices of the greedy farthest-point selection over `flows`.
pub fn farthest_point_indices(flows: &[Vec2], n: usize, d_min: f64) -> Vec<usize> {
    if flows.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut first = 0;
    for (i, f) in flows.iter().enumerate() {
        if f.norm_squared() > flows[first].norm_squared() {
            first = i;
        }
    }
    let mut picks = vec![first];
    let mut nearest: Vec<f64> = flows.iter().map(|f| (f - flows[first]).norm_squared()).collect();
    let d_min_sq = d_min * d_min;
    while picks.len() < n {
        let mut best = 0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > nearest[best] {
                best = i;
            }
        }
        if nearest[best] < d_min_sq {
            break;
        }
        picks.push(best);
        let p = flows[best];
        for (d, f) in nearest.iter_mut().zip(flows) {
            *d = d.min((f - p).norm_squared());
        }
    }
    picks
}

/// Up to `n` pure-translation seeds from mutually distant flow vectors.
pub fn fast_sample(window: &Window, n: usize) -> Result<CandidateSet> {
    fast_sample_with(window, n, InitParams::default().d_min)
}

pub fn fast_sample_with(window: &Window, n: usize, d_min: f64) -> Result<CandidateSet> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let flows: Vec<Vec2> = window.observations.iter().map(|o| o.n).collect();
    let mut set = CandidateSet::default();
    for i in farthest_point_indices(&flows, n.max(1), d_min) {
        set.push(AffineMotionModel::translation(flows[i].x, flows[i].y), Provenance::Sampled);
    }
    Ok(set)
}

#[inline]
fn pixel_of(p: Vec2, width: u32, height: u32) -> (usize, usize) {
    let x = (p.x.floor().max(0.0) as usize).min(width.saturating_sub(1) as usize);
    let y = (p.y.floor().max(0.0) as usize).min(height.saturating_sub(1) as usize);
    (x, y)
}

/// Grown region holding the most members of one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GrownRegion {
    /// Bounds of the dilated component, half-open.
    pub bbox: BBox,
    /// Indices into the input positions that fall inside the component.
    pub members: Vec<usize>,
}

/// Rasterizes `positions`, dilates by a `(2r+1)²` square, labels the
/// 8-connected components and returns the one containing the most points.
pub fn grow_region(positions: &[Vec2], width: u32, height: u32, r_grow: u32) -> Option<GrownRegion> {
    if positions.is_empty() || width == 0 || height == 0 {
        return None;
    }
    let pixels: Vec<(usize, usize)> = positions.iter().map(|&p| pixel_of(p, width, height)).collect();
    let r = r_grow as usize;
    let x0 = pixels.iter().map(|p| p.0).min().unwrap().saturating_sub(r);
    let y0 = pixels.iter().map(|p| p.1).min().unwrap().saturating_sub(r);
    let x1 = (pixels.iter().map(|p| p.0).max().unwrap() + r).min(width as usize - 1);
    let y1 = (pixels.iter().map(|p| p.1).max().unwrap() + r).min(height as usize - 1);
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);

    // Separable square dilation: horizontal run, then vertical.
    let mut seeds = vec![false; cw * ch];
    for &(x, y) in &pixels {
        seeds[(y - y0) * cw + (x - x0)] = true;
    }
    let mut horiz = vec![false; cw * ch];
    for y in 0..ch {
        let row = &seeds[y * cw..(y + 1) * cw];
        let mut last: Option<usize> = None;
        for x in 0..cw {
            if row[x] {
                last = Some(x);
            }
            let mut on = matches!(last, Some(l) if x - l <= r);
            if !on {
                on = row[x + 1..(x + r + 1).min(cw)].iter().any(|&s| s);
            }
            horiz[y * cw + x] = on;
        }
    }
    let mut mask = vec![false; cw * ch];
    for x in 0..cw {
        for y in 0..ch {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(ch - 1);
            mask[y * cw + x] = (lo..=hi).any(|yy| horiz[yy * cw + x]);
        }
    }

    let mut comp = vec![u32::MAX; cw * ch];
    let mut bounds: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..cw * ch {
        if !mask[start] || comp[start] != u32::MAX {
            continue;
        }
        let id = bounds.len() as u32;
        let (sx, sy) = (start % cw, start / cw);
        let mut b = (sx, sy, sx, sy);
        comp[start] = id;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (x, y) = (k % cw, k / cw);
            b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
            for ny in y.saturating_sub(1)..=(y + 1).min(ch - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(cw - 1) {
                    let q = ny * cw + nx;
                    if mask[q] && comp[q] == u32::MAX {
                        comp[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
        bounds.push(b);
    }

    let mut counts = vec![0usize; bounds.len()];
    let point_comp: Vec<u32> = pixels.iter().map(|&(x, y)| comp[(y - y0) * cw + (x - x0)]).collect();
    for &c in &point_comp {
        counts[c as usize] += 1;
    }
    let mut best = 0;
    for (c, &k) in counts.iter().enumerate() {
        if k > counts[best] {
            best = c;
        }
    }
    let (bx0, by0, bx1, by1) = bounds[best];
    Some(GrownRegion {
        bbox: BBox::new(
            (x0 + bx0) as f64,
            (y0 + by0) as f64,
            (x0 + bx1 + 1) as f64,
            (y0 + by1 + 1) as f64,
        ),
        members: (0..positions.len()).filter(|&i| point_comp[i] == best as u32).collect(),
    })
}

/// Boxes around every non-background label with enough members.
pub fn grow_imo_boxes(result: &SegmentationResult, window: &Window) -> Vec<TrackedIMO> {
    grow_imo_boxes_with(result, window, &InitParams::default())
}

pub fn grow_imo_boxes_with(result: &SegmentationResult, window: &Window, params: &InitParams) -> Vec<TrackedIMO> {
    let mut members: BTreeMap<LabelId, Vec<Vec2>> = BTreeMap::new();
    for (o, &l) in window.observations.iter().zip(result.labeling.assignment()) {
        if l != result.background_label {
            members.entry(l).or_default().push(o.position());
        }
    }
    members
        .into_iter()
        .filter(|(_, pts)| pts.len() >= params.min_cluster_size)
        .filter_map(|(label, pts)| {
            let model = *result.models.get(&label)?;
            let region = grow_region(&pts, window.width, window.height, params.r_grow)?;
            Some(TrackedIMO {
                label,
                model,
                bbox: region.bbox,
                members: pts.len(),
            })
        })
        .collect()
}

/// Shifts each tracked box by its model translation over `dt`.
pub fn predict_boxes(
    tracked: &[TrackedIMO],
    dt: f64,
    window_duration: f64,
    width: u32,
    height: u32,
) -> Vec<(BBox, AffineMotionModel)> {
    predict_boxes_with(tracked, dt, window_duration, width, height, InitParams::default().a_min)
}

pub fn predict_boxes_with(
    tracked: &[TrackedIMO],
    dt: f64,
    window_duration: f64,
    width: u32,
    height: u32,
    a_min: f64,
) -> Vec<(BBox, AffineMotionModel)> {
    let steps = if window_duration > 0.0 { dt / window_duration } else { 0.0 };
    tracked
        .iter()
        .filter_map(|t| {
            let b = t
                .bbox
                .translate(t.model.t_x * steps, t.model.t_y * steps)
                .clamp_to(width as f64, height as f64);
            (b.area() >= a_min && b.area() > 0.0).then_some((b, t.model))
        })
        .collect()
}

/// Predicted models refit inside their boxes, sampled seeds and the
/// identity, in that order.
pub fn build_candidates(
    window: &Window,
    predicted: &[(BBox, AffineMotionModel)],
    params: &InitParams,
    lm: &LmOptions,
) -> Result<CandidateSet> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut set = CandidateSet::default();
    for (bbox, prior) in predicted {
        let inside: Vec<_> = window
            .observations
            .iter()
            .filter(|o| bbox.contains(o.x, o.y))
            .copied()
            .collect();
        if inside.len() < crate::fitting::MIN_NONLINEAR_OBSERVATIONS {
            continue;
        }
        if let Ok(fit) = fit_nonlinear(&inside, prior, lm) {
            set.push(fit.model, Provenance::Predicted);
        }
    }
    let n = if set.is_empty() { params.samples } else { params.samples_with_prior };
    let sampled = fast_sample_with(window, n, params.d_min)?;
    for (m, p) in sampled.iter() {
        set.push(*m, p);
    }
    set.push(AffineMotionModel::identity(), Provenance::Identity);
    Ok(set)
}

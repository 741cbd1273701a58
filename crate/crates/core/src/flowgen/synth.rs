//! Synthetic normal-flow scenes with ground truth.
//!
//! Every sample picks a lattice pixel inside its source region, evaluates the
//! source's affine flow there and projects it onto a gradient direction, so
//! motion orthogonal to the gradient is lost exactly as in real normal flow.

use std::f64::consts::TAU;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{affine_flow, AffineMotionModel, BBox, NormalFlowObservation, Vec2, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Box(BBox),
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Box(b) => b.contains(x, y),
            Region::Disk { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
        }
    }

    pub fn bounds(&self) -> BBox {
        match *self {
            Region::Box(b) => b,
            Region::Disk { cx, cy, r } => BBox::new(cx - r, cy - r, cx + r + 1.0, cy + r + 1.0),
        }
    }

    pub fn center(&self) -> Vec2 {
        match *self {
            Region::Box(b) => Vec2::new(0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max)),
            Region::Disk { cx, cy, .. } => Vec2::new(cx, cy),
        }
    }

    pub fn translate(&self, d: Vec2) -> Self {
        match *self {
            Region::Box(b) => Region::Box(b.translate(d.x, d.y)),
            Region::Disk { cx, cy, r } => Region::Disk {
                cx: cx + d.x,
                cy: cy + d.y,
                r,
            },
        }
    }
}

/// Distribution of image-gradient directions for a source.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GradientField {
    #[default]
    Uniform,
    /// Every sample uses this angle (radians).
    Constant(f64),
}

impl GradientField {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            GradientField::Uniform => rng.random::<f64>() * TAU,
            GradientField::Constant(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub region: Region,
    pub model: AffineMotionModel,
    pub gradient: GradientField,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    /// Direction jitter, radians.
    pub sigma_dir: f64,
    /// Relative magnitude jitter.
    pub sigma_mag: f64,
    /// Fraction of samples replaced by bounded random vectors.
    pub outlier_fraction: f64,
}

impl NoiseModel {
    pub fn moderate() -> Self {
        Self {
            sigma_dir: 0.05,
            sigma_mag: 0.02,
            outlier_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    pub background: AffineMotionModel,
    pub background_gradient: GradientField,
    /// Later objects occlude earlier ones.
    pub objects: Vec<SceneObject>,
    pub noise: NoiseModel,
    /// Emitted flows shorter than this (px/window) are dropped.
    pub min_flow: f64,
}

impl SyntheticScene {
    pub fn new(width: u32, height: u32, background: AffineMotionModel) -> Self {
        Self {
            width,
            height,
            background,
            background_gradient: GradientField::Uniform,
            objects: Vec::new(),
            noise: NoiseModel::default(),
            min_flow: 0.1,
        }
    }

    pub fn with_object(mut self, region: Region, model: AffineMotionModel) -> Self {
        self.objects.push(SceneObject {
            region,
            model,
            gradient: GradientField::Uniform,
        });
        self
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    fn model(&self, source: u32) -> (&AffineMotionModel, GradientField) {
        if source == 0 {
            (&self.background, self.background_gradient)
        } else {
            let o = &self.objects[source as usize - 1];
            (&o.model, o.gradient)
        }
    }

    /// Topmost source per pixel, row-major.
    pub fn owner_map(&self) -> Vec<u32> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut owner = vec![0u32; w * h];
        for (k, obj) in self.objects.iter().enumerate() {
            let b = obj.region.bounds().clamp_to(w as f64, h as f64);
            let (x0, y0) = (b.x_min.floor() as usize, b.y_min.floor() as usize);
            let (x1, y1) = (b.x_max.ceil() as usize, b.y_max.ceil() as usize);
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    if obj.region.contains(x as f64, y as f64) {
                        owner[y * w + x] = k as u32 + 1;
                    }
                }
            }
        }
        owner
    }

    /// Scene after `windows` window durations of constant motion: every object
    /// region is shifted by its model's flow at the region centre.
    pub fn advanced(&self, windows: f64) -> Self {
        let mut next = self.clone();
        for obj in &mut next.objects {
            let d = affine_flow(&obj.model, &obj.region.center()) * windows;
            obj.region = obj.region.translate(d);
        }
        next
    }
}

/// Per-observation provenance for a generated window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// 0 = background, k = object k.
    pub sources: Vec<u32>,
    pub object_models: Vec<AffineMotionModel>,
    /// Tight box of each object's visible pixels; `None` if fully occluded or
    /// outside the sensor.
    pub object_boxes: Vec<Option<BBox>>,
}

impl GroundTruth {
    pub fn object_count(&self) -> usize {
        self.object_models.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sources: indices.iter().map(|&i| self.sources[i]).collect(),
            object_models: self.object_models.clone(),
            object_boxes: self.object_boxes.clone(),
        }
    }
}

/// Samples one window of normal flow from `scene`.
///
/// Flow vectors in the returned window are in pixels per window.
pub fn generate_scene(
    scene: &SyntheticScene,
    start_time: f64,
    duration: f64,
    samples_per_source: usize,
    seed: u64,
) -> Result<(Window, GroundTruth)> {
    assert!(samples_per_source >= 1, "samples_per_source must be >= 1");
    let (w, h) = (scene.width as usize, scene.height as usize);
    for (k, obj) in scene.objects.iter().enumerate() {
        if !region_has_lattice_point(&obj.region, w, h) {
            return Err(Error::EmptyRegion { object: k + 1 });
        }
    }

    let owner = scene.owner_map();
    let sources = scene.objects.len() + 1;
    let mut visible: Vec<Vec<usize>> = vec![Vec::new(); sources];
    for (i, &o) in owner.iter().enumerate() {
        visible[o as usize].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir_noise = (scene.noise.sigma_dir > 0.0)
        .then(|| Normal::new(0.0, scene.noise.sigma_dir).expect("finite sigma_dir"));
    let mag_noise = (scene.noise.sigma_mag > 0.0)
        .then(|| Normal::new(0.0, scene.noise.sigma_mag).expect("finite sigma_mag"));

    let mut samples: Vec<(NormalFlowObservation, u32)> = Vec::new();
    for (source, pixels) in visible.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let take = samples_per_source.min(pixels.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, pixels.len(), take).into_vec();
        picked.sort_unstable();
        let (model, field) = scene.model(source as u32);
        for p in picked {
            let pix = pixels[p];
            let (x, y) = ((pix % w) as f64, (pix / w) as f64);
            let t = start_time + rng.random::<f64>() * duration;
            let angle = field.sample(&mut rng);
            let d = Vec2::new(angle.cos(), angle.sin());
            let u = affine_flow(model, &Vec2::new(x, y));
            let mut n = d * u.dot(&d);
            if let Some(dist) = &dir_noise {
                let a = dist.sample(&mut rng);
                let (s, c) = a.sin_cos();
                n = Vec2::new(c * n.x - s * n.y, s * n.x + c * n.y);
            }
            if let Some(dist) = &mag_noise {
                n *= 1.0 + dist.sample(&mut rng);
            }
            samples.push((NormalFlowObservation { t, x, y, n }, source as u32));
        }
    }

    if scene.noise.outlier_fraction > 0.0 && !samples.is_empty() {
        let (lo, hi) = samples.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), (o, _)| {
            let m = o.n.norm();
            (lo.min(m), hi.max(m))
        });
        for (obs, _) in samples.iter_mut() {
            if rng.random::<f64>() < scene.noise.outlier_fraction {
                let angle = rng.random::<f64>() * TAU;
                let mag = lo + rng.random::<f64>() * (hi - lo);
                obs.n = Vec2::new(angle.cos(), angle.sin()) * mag;
            }
        }
    }

    samples.retain(|(o, _)| o.n.norm() >= scene.min_flow);
    samples.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));

    let object_boxes = (1..sources)
        .map(|k| visible_box(&visible[k], w))
        .collect();
    let mut window = Window::new(start_time, duration, scene.width, scene.height);
    let mut gt = GroundTruth {
        sources: Vec::with_capacity(samples.len()),
        object_models: scene.objects.iter().map(|o| o.model).collect(),
        object_boxes,
    };
    for (obs, src) in samples {
        window.observations.push(obs);
        gt.sources.push(src);
    }
    Ok((window, gt))
}

/// Consecutive windows of a scene whose objects keep moving at constant
/// velocity. Window `k` starts at `k · duration` and uses seed `seed + k`.
pub fn generate_sequence(
    scene: &SyntheticScene,
    windows: usize,
    duration: f64,
    samples_per_source: usize,
    seed: u64,
) -> Result<Vec<(Window, GroundTruth)>> {
    (0..windows)
        .map(|k| {
            generate_scene(
                &scene.advanced(k as f64),
                k as f64 * duration,
                duration,
                samples_per_source,
                seed.wrapping_add(k as u64),
            )
        })
        .collect()
}

/// Converts a window's flow back to pixels per second, the on-disk unit.
pub fn to_stream(window: &Window) -> Vec<NormalFlowObservation> {
    window
        .observations
        .iter()
        .map(|o| NormalFlowObservation {
            n: o.n / window.duration,
            ..*o
        })
        .collect()
}

fn region_has_lattice_point(region: &Region, w: usize, h: usize) -> bool {
    let b = region.bounds().clamp_to(w as f64, h as f64);
    let (x0, y0) = (b.x_min.floor() as usize, b.y_min.floor() as usize);
    let (x1, y1) = (b.x_max.ceil() as usize, b.y_max.ceil() as usize);
    (y0..y1.min(h)).any(|y| (x0..x1.min(w)).any(|x| region.contains(x as f64, y as f64)))
}

fn visible_box(pixels: &[usize], w: usize) -> Option<BBox> {
    if pixels.is_empty() {
        return None;
    }
    let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in pixels {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        b.x_min = b.x_min.min(x);
        b.y_min = b.y_min.min(y);
        b.x_max = b.x_max.max(x + 1.0);
        b.y_max = b.y_max.max(y + 1.0);
    }
    Some(b)
}

//! Geometric normal-flow estimate from a time surface.

use crate::error::{Error, Result};
use crate::types::{NormalFlowObservation, Vec2};

/// Default gradient floor in seconds per pixel.
pub const DEFAULT_MIN_GRADIENT: f64 = 1e-6;

/// Latest event timestamp per pixel.
#[derive(Debug, Clone)]
pub struct TimeSurface {
    width: usize,
    height: usize,
    stamps: Vec<f64>,
    valid: Vec<bool>,
}

impl TimeSurface {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            stamps: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a surface by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut ts = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                ts.stamps[i] = f(x, y);
                ts.valid[i] = true;
            }
        }
        ts
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Records an event. Older timestamps never overwrite newer ones.
    pub fn insert(&mut self, x: usize, y: usize, t: f64) {
        let i = y * self.width + x;
        if !self.valid[i] || t >= self.stamps[i] {
            self.stamps[i] = t;
            self.valid[i] = true;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.stamps[i])
    }

    /// Central-difference gradient, or `None` if the 4-neighbourhood is incomplete.
    pub fn gradient(&self, x: usize, y: usize) -> Option<Vec2> {
        if x == 0 || y == 0 || x + 1 >= self.width || y + 1 >= self.height {
            return None;
        }
        let l = self.get(x - 1, y)?;
        let r = self.get(x + 1, y)?;
        let u = self.get(x, y - 1)?;
        let d = self.get(x, y + 1)?;
        self.get(x, y)?;
        Some(Vec2::new((r - l) / 2.0, (d - u) / 2.0))
    }
}

/// `n = ∇Σ / ‖∇Σ‖²` at pixel `(x, y)`, in pixels per second.
pub fn normal_flow_from_time_surface(
    ts: &TimeSurface,
    x: usize,
    y: usize,
    min_gradient: f64,
) -> Result<Vec2> {
    let g = ts.gradient(x, y).ok_or(Error::UndefinedGradient { x, y })?;
    let norm_sq = g.norm_squared();
    if !(norm_sq.sqrt() >= min_gradient) {
        return Err(Error::UndefinedGradient { x, y });
    }
    Ok(g / norm_sq)
}

/// Accumulates `(t, x, y)` events into a surface and emits one observation for
/// every event pixel whose gradient is defined, stamped with the pixel's
/// latest time.
pub fn flow_from_events(
    events: &[(f64, u32, u32)],
    width: usize,
    height: usize,
    min_gradient: f64,
) -> Vec<NormalFlowObservation> {
    let mut ts = TimeSurface::new(width, height);
    for &(t, x, y) in events {
        if (x as usize) < width && (y as usize) < height {
            ts.insert(x as usize, y as usize, t);
        }
    }
    let mut seen = vec![false; width * height];
    let mut out = Vec::new();
    for &(_, x, y) in events {
        let (x, y) = (x as usize, y as usize);
        if x >= width || y >= height || std::mem::replace(&mut seen[y * width + x], true) {
            continue;
        }
        if let Ok(n) = normal_flow_from_time_surface(&ts, x, y, min_gradient) {
            let t = ts.get(x, y).unwrap_or_default();
            out.push(NormalFlowObservation::new(t, x as f64, y as f64, n.x, n.y));
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_x(v: f64) -> TimeSurface {
        TimeSurface::from_fn(32, 24, |x, _| x as f64 / v)
    }

    #[test]
    fn ramp_along_x_recovers_speed() {
        for v in [1.0, 10.0, 100.0, 1000.0, 37.5] {
            let n = normal_flow_from_time_surface(&ramp_x(v), 10, 7, DEFAULT_MIN_GRADIENT).unwrap();
            assert!((n.x - v).abs() <= 1e-9 * v.max(1.0), "v={v} n={n:?}");
            assert!(n.y.abs() <= 1e-9);
        }
    }

    #[test]
    fn ramp_along_y_recovers_speed() {
        let v = 40.0;
        let ts = TimeSurface::from_fn(32, 24, |_, y| y as f64 / v);
        let n = normal_flow_from_time_surface(&ts, 5, 5, DEFAULT_MIN_GRADIENT).unwrap();
        assert!(n.x.abs() < 1e-9);
        assert!((n.y - v).abs() < 1e-9);
    }

    #[test]
    fn constant_surface_is_undefined() {
        let ts = TimeSurface::from_fn(8, 8, |_, _| 0.5);
        assert!(matches!(
            normal_flow_from_time_surface(&ts, 3, 3, DEFAULT_MIN_GRADIENT),
            Err(Error::UndefinedGradient { x: 3, y: 3 })
        ));
    }

    #[test]
    fn border_and_missing_neighbours_are_undefined() {
        let ts = ramp_x(5.0);
        assert!(normal_flow_from_time_surface(&ts, 0, 3, DEFAULT_MIN_GRADIENT).is_err());
        let mut sparse = TimeSurface::new(8, 8);
        sparse.insert(3, 3, 0.1);
        sparse.insert(2, 3, 0.0);
        assert!(normal_flow_from_time_surface(&sparse, 3, 3, DEFAULT_MIN_GRADIENT).is_err());
    }

    #[test]
    fn insert_keeps_latest() {
        let mut ts = TimeSurface::new(4, 4);
        ts.insert(1, 1, 0.5);
        ts.insert(1, 1, 0.2);
        assert_eq!(ts.get(1, 1), Some(0.5));
        ts.insert(1, 1, 0.7);
        assert_eq!(ts.get(1, 1), Some(0.7));
    }

    #[test]
    fn events_of_sweeping_edge_give_uniform_flow() {
        let v = 200.0;
        let mut events = Vec::new();
        for x in 0..20u32 {
            for y in 0..10u32 {
                events.push((x as f64 / v, x, y));
            }
        }
        let flows = flow_from_events(&events, 20, 10, DEFAULT_MIN_GRADIENT);
        assert_eq!(flows.len(), 18 * 8);
        for f in flows {
            assert!((f.n.x - v).abs() < 1e-6 && f.n.y.abs() < 1e-9);
        }
    }
}

//! Evaluation against ground truth: hull-based detection success, mask IoU
//! and label-permutation-invariant clustering accuracy.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flowgen::GroundTruth;
use crate::graph::orient;
use crate::types::{BBox, LabelId, Labeling, SegmentationResult, Vec2, Window};

/// Convex hull in counter-clockwise order without collinear vertices.
/// One distinct point yields a single vertex, collinear input two.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && orient(&hull[hull.len() - 2], &hull[hull.len() - 1], &p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        twice += a.x * b.y - a.y * b.x;
    }
    0.5 * twice
}

/// Sutherland–Hodgman clip of `poly` against an axis-aligned box.
pub fn clip_to_box(poly: &[Vec2], b: &BBox) -> Vec<Vec2> {
    // Each boundary: inside test and intersection with the boundary line.
    let planes: [(usize, f64, bool); 4] = [(0, b.x_min, true), (0, b.x_max, false), (1, b.y_min, true), (1, b.y_max, false)];
    let mut out = poly.to_vec();
    for (axis, value, keep_above) in planes {
        if out.is_empty() {
            break;
        }
        let inside = |p: &Vec2| if keep_above { p[axis] >= value } else { p[axis] <= value };
        let cross = |p: &Vec2, q: &Vec2| {
            let t = (value - p[axis]) / (q[axis] - p[axis]);
            p + (q - p) * t
        };
        let input = std::mem::take(&mut out);
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            match (inside(&prev), inside(&cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(cross(&prev, &cur)),
                (false, true) => {
                    out.push(cross(&prev, &cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Success when the hull covers more than half of the box and more of its
/// own area lies inside the box than outside.
pub fn detection_success(hull: &[Vec2], gt_box: &BBox) -> bool {
    let area = polygon_area(hull).abs();
    let gt_area = gt_box.area();
    if area <= 0.0 || gt_area <= 0.0 {
        return false;
    }
    let inter = polygon_area(&clip_to_box(hull, gt_box)).abs();
    inter / gt_area > 0.5 && inter > area - inter
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    /// One entry per ground-truth instance.
    pub matched: Vec<bool>,
    /// Index of the first successful hull per instance.
    pub matched_hull: Vec<Option<usize>>,
    pub rate: f64,
}

/// Matches every ground-truth box against all detection hulls.
pub fn evaluate_detections(hulls: &[Vec<Vec2>], gt_boxes: &[BBox]) -> DetectionOutcome {
    let matched_hull: Vec<Option<usize>> = gt_boxes
        .iter()
        .map(|b| hulls.iter().position(|h| detection_success(h, b)))
        .collect();
    let matched: Vec<bool> = matched_hull.iter().map(Option::is_some).collect();
    let hits = matched.iter().filter(|&&m| m).count();
    DetectionOutcome {
        rate: if gt_boxes.is_empty() { 0.0 } else { hits as f64 / gt_boxes.len() as f64 },
        matched,
        matched_hull,
    }
}

/// Hull of a moving label: points of its largest region-grown component.
pub fn label_hull(result: &SegmentationResult, window: &Window, label: LabelId, r_grow: u32) -> Vec<Vec2> {
    let pts: Vec<Vec2> = window
        .observations
        .iter()
        .zip(result.labeling.assignment())
        .filter(|(_, &l)| l == label)
        .map(|(o, _)| o.position())
        .collect();
    match crate::init::grow_region(&pts, window.width, window.height, r_grow) {
        Some(region) => convex_hull(&region.members.iter().map(|&i| pts[i]).collect::<Vec<_>>()),
        None => Vec::new(),
    }
}

/// Sensor-sized boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Square dilation with half-width `r`.
    pub fn dilate(&self, r: u32) -> Self {
        if r == 0 {
            return self.clone();
        }
        let (w, h, r) = (self.width as i64, self.height as i64, r as i64);
        let mut horiz = Self::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let on = (x - r).max(0)..=(x + r).min(w - 1);
                if on.into_iter().any(|xx| self.get(xx as u32, y as u32)) {
                    horiz.set(x as u32, y as u32, true);
                }
            }
        }
        let mut out = Self::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let on = (y - r).max(0)..=(y + r).min(h - 1);
                if on.into_iter().any(|yy| horiz.get(x as u32, yy as u32)) {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
        out
    }
}

/// Intersection over union; two empty masks count as identical.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::DimensionMismatch(
            pred.width as usize,
            pred.height as usize,
            gt.width as usize,
            gt.height as usize,
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data.iter().zip(&gt.data) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Pixels of `label`'s members, dilated by `dilate_r`.
pub fn rasterize_label(result: &SegmentationResult, window: &Window, label: LabelId, dilate_r: u32) -> Result<Mask> {
    if !result.labeling.is_active(label) {
        return Err(Error::InactiveLabel(label));
    }
    let mut m = Mask::new(window.width, window.height);
    for (o, &l) in window.observations.iter().zip(result.labeling.assignment()) {
        if l == label {
            let x = (o.x.floor().max(0.0) as u32).min(window.width - 1);
            let y = (o.y.floor().max(0.0) as u32).min(window.height - 1);
            m.set(x, y, true);
        }
    }
    Ok(m.dilate(dilate_r))
}

/// Maximum-weight injective matching of rows to columns, exhaustively.
fn best_matching_exhaustive(table: &[Vec<usize>], cols: usize) -> usize {
    fn go(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        let mut best = go(table, row + 1, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(table[row][c] + go(table, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(table, 0, &mut vec![false; cols])
}

/// Maximum-weight matching via the Hungarian method on a square padding of
/// the table.
fn best_matching_hungarian(table: &[Vec<usize>], cols: usize) -> usize {
    let n = table.len().max(cols);
    let max = table.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        let w = if i < table.len() && j < cols { table[i][j] as i64 } else { 0 };
        max - w
    };
    // Potentials formulation, 1-based with a virtual column 0.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < table.len() && j - 1 < cols)
        .map(|j| table[p[j] - 1][j - 1])
        .sum()
}

/// Fraction of observations whose label maps to their true source under
/// the best injective label-to-source matching.
pub fn clustering_accuracy_raw(labels: &[LabelId], sources: &[u32]) -> Result<f64> {
    if labels.len() != sources.len() {
        return Err(Error::Alignment(format!(
            "{} labels for {} ground-truth records",
            labels.len(),
            sources.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Alignment("no observations to compare".into()));
    }
    let mut label_ix: BTreeMap<LabelId, usize> = BTreeMap::new();
    let mut source_ix: BTreeMap<u32, usize> = BTreeMap::new();
    for (&l, &s) in labels.iter().zip(sources) {
        let nl = label_ix.len();
        label_ix.entry(l).or_insert(nl);
        let ns = source_ix.len();
        source_ix.entry(s).or_insert(ns);
    }
    let mut table = vec![vec![0usize; source_ix.len()]; label_ix.len()];
    for (l, s) in labels.iter().zip(sources) {
        table[label_ix[l]][source_ix[s]] += 1;
    }
    let best = if table.len() <= 6 {
        best_matching_exhaustive(&table, source_ix.len())
    } else {
        best_matching_hungarian(&table, source_ix.len())
    };
    Ok(best as f64 / labels.len() as f64)
}

pub fn clustering_accuracy(labeling: &Labeling, gt: &GroundTruth) -> Result<f64> {
    clustering_accuracy_raw(labeling.assignment(), &gt.sources)
}

/// Index of the window whose mid time is nearest to `t`, if within
/// `max_offset`.
pub fn nearest_window(t: f64, mid_times: &[f64], max_offset: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &m) in mid_times.iter().enumerate() {
        let d = (m - t).abs();
        if d <= max_offset && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|b| b.0)
}

/// One row of a ground-truth box file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub t: f64,
    pub object_id: u32,
    pub bbox: BBox,
}

pub const GT_BOX_HEADER: &str = "t,object_id,x_min,y_min,x_max,y_max";

pub fn write_gt_boxes(out: &mut impl Write, boxes: &[GtBox]) -> std::io::Result<()> {
    writeln!(out, "{GT_BOX_HEADER}")?;
    for b in boxes {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            b.t, b.object_id, b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max
        )?;
    }
    Ok(())
}

pub fn read_gt_boxes(path: impl AsRef<Path>) -> Result<Vec<GtBox>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.starts_with('t')) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(Error::format(k, format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::format(k, format!("`{s}`: {e}")));
        out.push(GtBox {
            t: num(f[0])?,
            object_id: f[1].parse().map_err(|e| Error::format(k, format!("`{}`: {e}", f[1])))?,
            bbox: BBox::new(num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?),
        });
    }
    Ok(out)
}

/// Grayscale label image; pixel value is an object id, 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl LabelImage {
    pub fn mask_of(&self, id: u16) -> Mask {
        let mut m = Mask::new(self.width, self.height);
        for (k, &v) in self.data.iter().enumerate() {
            m.data[k] = v == id;
        }
        m
    }

    pub fn ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.data.iter().copied().filter(|&v| v != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Binary PGM; 8-bit samples when every id fits.
    pub fn write_pgm(&self, out: &mut impl Write) -> std::io::Result<()> {
        let max = self.data.iter().copied().max().unwrap_or(0).max(1);
        if max <= 255 {
            write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
            out.write_all(&self.data.iter().map(|&v| v as u8).collect::<Vec<_>>())
        } else {
            write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
            let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_be_bytes()).collect();
            out.write_all(&bytes)
        }
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        parse_pgm(&bytes)
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<LabelImage> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(0, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(Error::format(0, "not a binary PGM"));
    }
    let parse = |s: String| s.parse::<u32>().map_err(|e| Error::format(0, format!("PGM header `{s}`: {e}")));
    let width = parse(token(&mut pos)?)?;
    let height = parse(token(&mut pos)?)?;
    let maxval = parse(token(&mut pos)?)?;
    pos += 1;
    let n = width as usize * height as usize;
    let payload = &bytes[pos.min(bytes.len())..];
    let data: Vec<u16> = if maxval <= 255 {
        if payload.len() < n {
            return Err(Error::format(0, "truncated PGM payload"));
        }
        payload[..n].iter().map(|&v| v as u16).collect()
    } else {
        if payload.len() < 2 * n {
            return Err(Error::format(0, "truncated PGM payload"));
        }
        payload[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok(LabelImage { width, height, data })
}

/// CSV report `metric,value,count`.
pub fn write_metric_report(out: &mut impl Write, rows: &[(&str, f64, usize)]) -> std::io::Result<()> {
    writeln!(out, "metric,value,count")?;
    for (name, value, count) in rows {
        writeln!(out, "{name},{value},{count}")?;
    }
    Ok(())
}

//! Per-window images: flow orientation (hue), flow magnitude (gray) and
//! segmentation (one colour per label).
//!
//! Each observation paints the pixel it falls in; later observations
//! overwrite earlier ones.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nfseg_core::{LabelId, SegmentationResult, Window};

/// Segmentation canvas colour.
pub const BACKGROUND: [u8; 3] = [64, 64, 64];

/// Label colours, assigned by descending member count.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
];

pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, colour: [u8; 3]) -> Self {
        let data = colour.iter().copied().cycle().take(3 * width as usize * height as usize).collect();
        Self { width, height, data }
    }

    #[cfg(test)]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let k = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let k = 3 * (y as usize * self.width as usize + x as usize);
        self.data[k..k + 3].copy_from_slice(&c);
    }

    pub fn write_ppm(&self, out: &mut impl Write) -> io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }
}

pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn write_pgm(&self, out: &mut impl Write) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }
}

fn pixel_of(window: &Window, x: f64, y: f64) -> (u32, u32) {
    let px = (x.floor().max(0.0) as u32).min(window.width.saturating_sub(1));
    let py = (y.floor().max(0.0) as u32).min(window.height.saturating_sub(1));
    (px, py)
}

/// Fully saturated colour for a hue in radians; 0 is red, increasing
/// counterclockwise through yellow, green, cyan, blue and magenta.
pub fn hue_to_rgb(angle: f64) -> [u8; 3] {
    let h = angle.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * 6.0;
    let sector = (h.floor() as usize).min(5);
    let f = h - sector as f64;
    let (up, down) = ((255.0 * f).round() as u8, (255.0 * (1.0 - f)).round() as u8);
    match sector {
        0 => [255, up, 0],
        1 => [down, 255, 0],
        2 => [0, 255, up],
        3 => [0, down, 255],
        4 => [up, 0, 255],
        _ => [255, 0, down],
    }
}

/// Flow direction as hue on a black canvas. Image y points down, so the
/// angle is taken with y flipped to match the usual colour wheel.
pub fn orientation_image(window: &Window) -> RgbImage {
    let mut img = RgbImage::filled(window.width, window.height, [0, 0, 0]);
    for o in &window.observations {
        let (x, y) = pixel_of(window, o.x, o.y);
        img.set(x, y, hue_to_rgb((-o.n.y).atan2(o.n.x)));
    }
    img
}

/// Flow magnitude scaled so the window maximum maps to 255.
pub fn magnitude_image(window: &Window) -> GrayImage {
    let (w, h) = (window.width as usize, window.height as usize);
    let mut data = vec![0u8; w * h];
    let max = window.observations.iter().map(|o| o.n.norm()).fold(0.0, f64::max);
    if max > 0.0 {
        for o in &window.observations {
            let (x, y) = pixel_of(window, o.x, o.y);
            data[y as usize * w + x as usize] = (255.0 * o.n.norm() / max).round() as u8;
        }
    }
    GrayImage {
        width: window.width,
        height: window.height,
        data,
    }
}

/// Palette colour per active label, by descending count then label id.
/// Labels beyond the palette reuse it cyclically.
pub fn label_colours(result: &SegmentationResult) -> BTreeMap<LabelId, [u8; 3]> {
    let mut order: Vec<(usize, LabelId)> = result.labeling.counts().into_iter().map(|(l, c)| (c, l)).collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    order
        .into_iter()
        .enumerate()
        .map(|(k, (_, l))| (l, PALETTE[k % PALETTE.len()]))
        .collect()
}

pub fn segmentation_image(window: &Window, result: Option<&SegmentationResult>) -> RgbImage {
    let mut img = RgbImage::filled(window.width, window.height, BACKGROUND);
    if let Some(result) = result {
        let colours = label_colours(result);
        for (o, l) in window.observations.iter().zip(result.labeling.assignment()) {
            let (x, y) = pixel_of(window, o.x, o.y);
            img.set(x, y, colours[l]);
        }
    }
    img
}

/// The three images of one window, as `(file name, encoded bytes)`.
pub fn render_window(index: i64, window: &Window, result: Option<&SegmentationResult>) -> Vec<(String, Vec<u8>)> {
    let mut orientation = Vec::new();
    let mut magnitude = Vec::new();
    let mut segmentation = Vec::new();
    // Writing into a Vec cannot fail.
    orientation_image(window).write_ppm(&mut orientation).unwrap();
    magnitude_image(window).write_pgm(&mut magnitude).unwrap();
    segmentation_image(window, result).write_ppm(&mut segmentation).unwrap();
    vec![
        (format!("window_{index:04}_orientation.ppm"), orientation),
        (format!("window_{index:04}_magnitude.pgm"), magnitude),
        (format!("window_{index:04}_segmentation.ppm"), segmentation),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfseg_core::mrf::EnergyBreakdown;
    use nfseg_core::{Labeling, NormalFlowObservation};
    use std::collections::BTreeSet;

    fn window(obs: &[(f64, f64, f64, f64)]) -> Window {
        let mut w = Window::new(0.0, 0.01, 32, 24);
        w.observations = obs
            .iter()
            .enumerate()
            .map(|(k, &(x, y, nx, ny))| NormalFlowObservation::new(k as f64 * 1e-4, x, y, nx, ny))
            .collect();
        w
    }

    fn distinct(img: &RgbImage) -> BTreeSet<[u8; 3]> {
        img.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    #[test]
    fn flow_along_x_shares_one_hue() {
        let w = window(&[(1.0, 1.0, 2.0, 0.0), (5.0, 7.0, 0.5, 0.0), (20.0, 3.0, 9.0, 0.0)]);
        let img = orientation_image(&w);
        let hues: BTreeSet<[u8; 3]> = w
            .observations
            .iter()
            .map(|o| img.pixel(o.x as u32, o.y as u32))
            .collect();
        assert_eq!(hues.len(), 1);
        assert_eq!(distinct(&img).len(), 2);
    }

    #[test]
    fn hue_wheel_is_continuous() {
        for k in 0..360 {
            let a = hue_to_rgb((k as f64).to_radians());
            let b = hue_to_rgb(((k + 1) as f64).to_radians());
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 26, "{k}: {a:?} {b:?}");
            }
        }
        assert_eq!(hue_to_rgb(0.0), [255, 0, 0]);
        assert_eq!(hue_to_rgb(std::f64::consts::TAU), [255, 0, 0]);
    }

    #[test]
    fn empty_window_is_background_only() {
        let w = window(&[]);
        assert_eq!(distinct(&orientation_image(&w)), BTreeSet::from([[0, 0, 0]]));
        assert!(magnitude_image(&w).data.iter().all(|&v| v == 0));
        assert_eq!(distinct(&segmentation_image(&w, None)), BTreeSet::from([BACKGROUND]));
    }

    #[test]
    fn magnitude_scales_to_window_max() {
        let w = window(&[(0.0, 0.0, 4.0, 0.0), (1.0, 0.0, 0.0, 2.0)]);
        let img = magnitude_image(&w);
        assert_eq!(img.data[0], 255);
        assert_eq!(img.data[1], 128);
    }

    #[test]
    fn two_labels_give_three_colours() {
        let w = window(&[(1.0, 1.0, 1.0, 0.0), (2.0, 1.0, 1.0, 0.0), (9.0, 9.0, -1.0, 0.0)]);
        let labeling = Labeling::new(vec![4, 4, 7]);
        let models = [(4, Default::default()), (7, Default::default())].into_iter().collect();
        let result = SegmentationResult {
            labeling,
            models,
            background_label: 4,
            imo_boxes: Vec::new(),
            final_energy: EnergyBreakdown::new(0.0, 0.0, 0.0),
            energy_trace: Vec::new(),
            iterations: 1,
        };
        let img = segmentation_image(&w, Some(&result));
        assert_eq!(distinct(&img).len(), 3);
        assert_eq!(img.pixel(1, 1), PALETTE[0]);
        assert_eq!(img.pixel(9, 9), PALETTE[1]);
        assert!(!PALETTE.contains(&BACKGROUND));
    }

    #[test]
    fn file_names_carry_the_window_index() {
        let names: Vec<String> = render_window(7, &window(&[]), None).into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["window_0007_orientation.ppm", "window_0007_magnitude.pgm", "window_0007_segmentation.ppm"]
        );
    }
}

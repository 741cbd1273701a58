//! Scene spec files and the `synth` command.
//!
//! A spec is `key = value` lines; `#` starts a comment. `object` may repeat
//! and later objects occlude earlier ones. Translations are in px/window.
//!
//! ```text
//! width = 346
//! height = 260
//! background = 1 0 0.5 0.3            # rho theta t_x t_y
//! object = box 60 60 110 110 model 1 0 6 0
//! object = disk 240 150 25 model 1 0 -6 0 gradient 0.5
//! noise = 0.05 0.02 0.05              # sigma_dir sigma_mag outlier_fraction
//! windows = 5
//! window_duration = 0.01
//! samples_per_source = 2000
//! format = text                       # or binary
//! ```

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nfseg_core::flowgen::io::{write_flow, write_sidecar_to};
use nfseg_core::flowgen::{
    generate_sequence, to_stream, FlowFile, FlowFormat, GradientField, NoiseModel, Region, SceneObject, SidecarRecord,
    SyntheticScene,
};
use nfseg_core::metrics::{write_gt_boxes, GtBox, LabelImage};
use nfseg_core::{AffineMotionModel, BBox};

use crate::output::{Manifest, OutDir};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub scene: SyntheticScene,
    pub windows: usize,
    pub window_duration: f64,
    pub samples_per_source: usize,
    pub format: FlowFormat,
}

fn numbers(line: usize, key: &str, fields: &[&str], count: usize) -> Result<Vec<f64>> {
    if fields.len() != count {
        bail!("line {line}: `{key}` takes {count} numbers, got {}", fields.len());
    }
    fields
        .iter()
        .map(|f| f.parse::<f64>().with_context(|| format!("line {line}: `{key}`: cannot parse `{f}`")))
        .collect()
}

fn model(line: usize, fields: &[&str]) -> Result<AffineMotionModel> {
    let v = numbers(line, "model", fields, 4)?;
    if !(v[0] > 0.0) || v.iter().any(|x| !x.is_finite()) {
        bail!("line {line}: model needs a positive scale and finite parameters");
    }
    Ok(AffineMotionModel::new(v[0], v[1], v[2], v[3]))
}

fn gradient(line: usize, value: &str) -> Result<GradientField> {
    if value == "uniform" {
        return Ok(GradientField::Uniform);
    }
    let a: f64 = value
        .parse()
        .with_context(|| format!("line {line}: gradient is `uniform` or an angle in radians"))?;
    Ok(GradientField::Constant(a))
}

/// `box x0 y0 x1 y1 model ... [gradient g]` or `disk cx cy r model ... [gradient g]`.
fn object(line: usize, value: &str) -> Result<SceneObject> {
    let fields: Vec<&str> = value.split_whitespace().collect();
    let Some(m) = fields.iter().position(|&f| f == "model") else {
        bail!("line {line}: object needs `model rho theta t_x t_y`");
    };
    let region = match fields.first().copied() {
        Some("box") => {
            let v = numbers(line, "box", &fields[1..m], 4)?;
            Region::Box(BBox::new(v[0], v[1], v[2], v[3]))
        }
        Some("disk") => {
            let v = numbers(line, "disk", &fields[1..m], 3)?;
            Region::Disk { cx: v[0], cy: v[1], r: v[2] }
        }
        other => bail!("line {line}: object shape must be `box` or `disk`, got {other:?}"),
    };
    let rest = &fields[m + 1..];
    let (model_fields, gradient_field) = match rest.iter().position(|&f| f == "gradient") {
        Some(g) if g + 2 == rest.len() => (&rest[..g], Some(rest[g + 1])),
        Some(_) => bail!("line {line}: `gradient` takes one value"),
        None => (rest, None),
    };
    Ok(SceneObject {
        region,
        model: model(line, model_fields)?,
        gradient: gradient_field.map_or(Ok(GradientField::Uniform), |g| gradient(line, g))?,
    })
}

impl SceneSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let (mut width, mut height, mut background) = (None, None, None);
        let mut background_gradient = GradientField::Uniform;
        let mut objects = Vec::new();
        let mut noise = NoiseModel::default();
        let mut min_flow = 0.1;
        let mut windows = 1usize;
        let mut window_duration = 0.01;
        let mut samples_per_source = 2000usize;
        let mut format = FlowFormat::Text;
        let mut seen = std::collections::BTreeSet::new();

        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                bail!("line {line}: expected `key = value`");
            };
            let (key, value) = (key.trim(), value.trim());
            if key != "object" && !seen.insert(key.to_string()) {
                bail!("line {line}: duplicate key `{key}`");
            }
            let fields: Vec<&str> = value.split_whitespace().collect();
            let int = |v: &str| -> Result<usize> {
                v.parse().with_context(|| format!("line {line}: `{key}`: cannot parse `{v}`"))
            };
            match key {
                "width" => width = Some(int(value)? as u32),
                "height" => height = Some(int(value)? as u32),
                "background" => background = Some(model(line, &fields)?),
                "background_gradient" => background_gradient = gradient(line, value)?,
                "object" => objects.push(object(line, value)?),
                "noise" => {
                    noise = if value == "moderate" {
                        NoiseModel::moderate()
                    } else {
                        let v = numbers(line, key, &fields, 3)?;
                        NoiseModel {
                            sigma_dir: v[0],
                            sigma_mag: v[1],
                            outlier_fraction: v[2],
                        }
                    }
                }
                "min_flow" => min_flow = numbers(line, key, &fields, 1)?[0],
                "windows" => windows = int(value)?,
                "window_duration" => window_duration = numbers(line, key, &fields, 1)?[0],
                "samples_per_source" => samples_per_source = int(value)?,
                "format" => {
                    format = match value {
                        "text" => FlowFormat::Text,
                        "binary" => FlowFormat::Binary,
                        other => bail!("line {line}: format is `text` or `binary`, got `{other}`"),
                    }
                }
                other => bail!("line {line}: unknown key `{other}`"),
            }
        }

        let (Some(width), Some(height), Some(background)) = (width, height, background) else {
            bail!("spec must set width, height and background");
        };
        if width == 0 || height == 0 || windows == 0 || samples_per_source == 0 {
            bail!("width, height, windows and samples_per_source must be at least 1");
        }
        if !(window_duration.is_finite() && window_duration > 0.0) {
            bail!("window_duration must be positive");
        }
        let n = &noise;
        if [n.sigma_dir, n.sigma_mag, n.outlier_fraction, min_flow].iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || n.outlier_fraction > 1.0
        {
            bail!("noise parameters and min_flow must be non-negative, outlier fraction at most 1");
        }
        let mut scene = SyntheticScene::new(width, height, background).with_noise(noise);
        scene.background_gradient = background_gradient;
        scene.objects = objects;
        scene.min_flow = min_flow;
        Ok(Self {
            scene,
            windows,
            window_duration,
            samples_per_source,
            format,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text)
    }
}

/// Writes the flow file, the per-record ground-truth sidecar, the true
/// boxes at each window's mid time and one object-id mask per window.
pub fn cmd_synth(spec_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let started = Instant::now();
    let spec = SceneSpec::load(spec_path)?;
    let seq = generate_sequence(&spec.scene, spec.windows, spec.window_duration, spec.samples_per_source, seed)?;
    let out = OutDir::create(out)?;

    let mut flow = FlowFile {
        width: spec.scene.width,
        height: spec.scene.height,
        observations: Vec::new(),
    };
    let mut sidecar = Vec::new();
    let mut boxes = Vec::new();
    for (k, (window, gt)) in seq.iter().enumerate() {
        for (o, &source) in to_stream(window).iter().zip(&gt.sources) {
            flow.observations.push(*o);
            sidecar.push(SidecarRecord { t: o.t, x: o.x, y: o.y, source });
        }
        let mid = window.mid_time();
        for (j, b) in gt.object_boxes.iter().enumerate() {
            if let Some(bbox) = b {
                boxes.push(GtBox {
                    t: mid,
                    object_id: j as u32 + 1,
                    bbox: *bbox,
                });
            }
        }
        let owner = spec.scene.advanced(k as f64).owner_map();
        let mask = LabelImage {
            width: spec.scene.width,
            height: spec.scene.height,
            data: owner.into_iter().map(|v| v as u16).collect(),
        };
        let mut bytes = Vec::new();
        mask.write_pgm(&mut bytes)?;
        out.write(&format!("masks/{}.pgm", (mid * 1e6).round() as i64), &bytes)?;
    }

    let flow_name = match spec.format {
        FlowFormat::Text => "flow.txt",
        FlowFormat::Binary => "flow.bin",
    };
    let mut f = out.begin(flow_name)?;
    write_flow(f.writer(), &flow, spec.format)?;
    f.commit()?;
    let mut f = out.begin("gt_sidecar.csv")?;
    write_sidecar_to(f.writer(), &sidecar)?;
    f.commit()?;
    let mut f = out.begin("gt_boxes.csv")?;
    write_gt_boxes(f.writer(), &boxes)?;
    f.commit()?;

    let mut m = Manifest::new("synth");
    m.set_path("spec", spec_path);
    m.set_path("out", out.path());
    m.set("seed", seed);
    m.set("flow", flow_name);
    m.set("windows", spec.windows);
    m.set("observations", flow.observations.len());
    m.set_ms("total", started.elapsed());
    out.write_manifest(&m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = "width = 64\nheight = 48\nbackground = 1 0 0.5 0 # slow pan\n\
        object = box 10 10 30 30 model 1 0 4 0\nobject = disk 45 30 6 model 1.01 0.02 -3 1 gradient 0.25\n\
        noise = moderate\nwindows = 3\nformat = binary\n";

    #[test]
    fn parses_every_field() {
        let s = SceneSpec::parse(SPEC).unwrap();
        assert_eq!((s.scene.width, s.scene.height, s.windows), (64, 48, 3));
        assert_eq!(s.scene.background, AffineMotionModel::translation(0.5, 0.0));
        assert_eq!(s.scene.objects.len(), 2);
        assert_eq!(s.scene.objects[0].region, Region::Box(BBox::new(10.0, 10.0, 30.0, 30.0)));
        assert_eq!(s.scene.objects[1].gradient, GradientField::Constant(0.25));
        assert_eq!(s.scene.objects[1].model, AffineMotionModel::new(1.01, 0.02, -3.0, 1.0));
        assert_eq!(s.scene.noise, NoiseModel::moderate());
        assert_eq!(s.format, FlowFormat::Binary);
        assert_eq!(s.samples_per_source, 2000);
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            "height = 48\nbackground = 1 0 0 0\n",
            "width = 64\nheight = 48\nbackground = 1 0 0\n",
            "width = 64\nheight = 48\nbackground = 0 0 0 0\n",
            "width = 64\nwidth = 64\nheight = 48\nbackground = 1 0 0 0\n",
            "width = 64\nheight = 48\nbackground = 1 0 0 0\nobject = tri 1 2 3 model 1 0 0 0\n",
            "width = 64\nheight = 48\nbackground = 1 0 0 0\ncolour = red\n",
            "width = 64\nheight = 48\nbackground = 1 0 0 0\nnoise = 0.1 0.1 2\n",
        ] {
            assert!(SceneSpec::parse(bad).is_err(), "{bad}");
        }
    }
}

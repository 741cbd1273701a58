//! The `eval` command: score a result file against ground truth.
//!
//! Boxes and masks are matched to the window whose mid time is nearest,
//! within half a window. Moving-object labels are every active label except
//! the background label. Sidecar rows are matched to result observations by
//! timestamp and pixel, because downsampling keeps only some records.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nfseg_core::flowgen::io::read_sidecar;
use nfseg_core::init::InitParams;
use nfseg_core::metrics::{
    clustering_accuracy_raw, evaluate_detections, iou, label_hull, nearest_window, rasterize_label, read_gt_boxes,
    write_metric_report, LabelImage,
};
use nfseg_core::pipeline::{read_results, ResultRecord};
use nfseg_core::BBox;

use crate::output::{Manifest, OutDir};

pub const REPORT_FILE: &str = "metrics.csv";

/// Dilation applied to predicted masks before IoU (px).
pub const MASK_DILATION: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
    pub count: usize,
}

/// Windows that carry a segmentation, with their mid times.
fn segmented(records: &[ResultRecord]) -> (Vec<&ResultRecord>, Vec<f64>, f64) {
    let seg: Vec<&ResultRecord> = records.iter().filter(|r| r.result.is_some()).collect();
    let mids = seg.iter().map(|r| r.window.mid_time()).collect();
    let half = records.first().map_or(0.0, |r| 0.5 * r.window.duration);
    (seg, mids, half)
}

pub fn detection_rate(records: &[ResultRecord], gt_boxes: &[(f64, BBox)], r_grow: u32) -> Result<Metric> {
    let (seg, mids, half) = segmented(records);
    let mut hits = 0;
    let mut count = 0;
    for &(t, bbox) in gt_boxes {
        let Some(k) = nearest_window(t, &mids, half) else { continue };
        let rec = seg[k];
        let result = rec.result.as_ref().expect("segmented window");
        let hulls: Vec<_> = result
            .imo_labels()
            .into_iter()
            .map(|l| label_hull(result, &rec.window, l, r_grow))
            .collect();
        hits += evaluate_detections(&hulls, &[bbox]).matched[0] as usize;
        count += 1;
    }
    if count == 0 {
        bail!("no ground-truth box falls within half a window of a segmented window");
    }
    Ok(Metric {
        name: "detection_rate",
        value: hits as f64 / count as f64,
        count,
    })
}

/// Mean over ground-truth objects of the best IoU any moving label reaches.
pub fn mask_iou(records: &[ResultRecord], masks: &[(f64, LabelImage)]) -> Result<Metric> {
    let (seg, mids, half) = segmented(records);
    let mut sum = 0.0;
    let mut count = 0;
    for (t, image) in masks {
        let Some(k) = nearest_window(*t, &mids, half) else { continue };
        let rec = seg[k];
        let result = rec.result.as_ref().expect("segmented window");
        let predicted = result
            .imo_labels()
            .into_iter()
            .map(|l| rasterize_label(result, &rec.window, l, MASK_DILATION))
            .collect::<nfseg_core::Result<Vec<_>>>()?;
        for id in image.ids() {
            let gt = image.mask_of(id);
            let mut best: f64 = 0.0;
            for p in &predicted {
                best = best.max(iou(p, &gt)?);
            }
            sum += best;
            count += 1;
        }
    }
    if count == 0 {
        bail!("no ground-truth mask object falls within half a window of a segmented window");
    }
    Ok(Metric {
        name: "iou",
        value: sum / count as f64,
        count,
    })
}

/// Pooled accuracy: each window is matched separately, since label ids
/// carry no meaning across windows.
pub fn sidecar_accuracy(records: &[ResultRecord], sidecar: &[(f64, i64, i64, u32)]) -> Result<Metric> {
    if sidecar.is_empty() {
        bail!("ground-truth sidecar is empty");
    }
    let lookup: HashMap<(u64, i64, i64), u32> = sidecar
        .iter()
        .rev()
        .map(|&(t, x, y, s)| ((t.to_bits(), x, y), s))
        .collect();
    let mut correct = 0.0;
    let mut count = 0;
    for rec in records {
        let Some(result) = &rec.result else { continue };
        let sources = rec
            .window
            .observations
            .iter()
            .map(|o| {
                lookup
                    .get(&(o.t.to_bits(), o.x.floor() as i64, o.y.floor() as i64))
                    .copied()
                    .with_context(|| format!("no sidecar record for observation at t={} ({}, {})", o.t, o.x, o.y))
            })
            .collect::<Result<Vec<u32>>>()?;
        let acc = clustering_accuracy_raw(result.labeling.assignment(), &sources)?;
        correct += acc * sources.len() as f64;
        count += sources.len();
    }
    if count == 0 {
        bail!("results contain no segmented observations");
    }
    Ok(Metric {
        name: "clustering_accuracy",
        value: correct / count as f64,
        count,
    })
}

/// Masks named `<t_microseconds>.pgm`, in time order.
fn read_masks(dir: &Path) -> Result<Vec<(f64, LabelImage)>> {
    let mut masks = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let us: i64 = stem
            .parse()
            .with_context(|| format!("mask name {} is not <t_microseconds>.pgm", path.display()))?;
        masks.push((us as f64 * 1e-6, LabelImage::read_pgm(&path)?));
    }
    masks.sort_by(|a, b| a.0.total_cmp(&b.0));
    if masks.is_empty() {
        bail!("no masks in {}", dir.display());
    }
    Ok(masks)
}

pub struct EvalArgs<'a> {
    pub results: &'a Path,
    pub gt_boxes: Option<&'a Path>,
    pub gt_masks: Option<&'a Path>,
    pub gt_sidecar: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    if args.gt_boxes.is_none() && args.gt_masks.is_none() && args.gt_sidecar.is_none() {
        bail!("give at least one of --gt-boxes, --gt-masks, --gt-sidecar");
    }
    let file = std::fs::File::open(args.results).with_context(|| format!("cannot open {}", args.results.display()))?;
    let records = read_results(std::io::BufReader::new(file))?;
    let mut metrics = Vec::new();
    if let Some(path) = args.gt_boxes {
        let boxes: Vec<(f64, BBox)> = read_gt_boxes(path)?.into_iter().map(|b| (b.t, b.bbox)).collect();
        if boxes.is_empty() {
            bail!("ground-truth box file {} is empty", path.display());
        }
        metrics.push(detection_rate(&records, &boxes, InitParams::default().r_grow)?);
    }
    if let Some(dir) = args.gt_masks {
        metrics.push(mask_iou(&records, &read_masks(dir)?)?);
    }
    if let Some(path) = args.gt_sidecar {
        let rows: Vec<_> = read_sidecar(path)?
            .into_iter()
            .map(|r| (r.t, r.x as i64, r.y as i64, r.source))
            .collect();
        metrics.push(sidecar_accuracy(&records, &rows)?);
    }

    let out = OutDir::create(args.out)?;
    let mut f = out.begin(REPORT_FILE)?;
    let rows: Vec<(&str, f64, usize)> = metrics.iter().map(|m| (m.name, m.value, m.count)).collect();
    write_metric_report(f.writer(), &rows)?;
    f.commit()?;

    let mut m = Manifest::new("eval");
    m.set_path("results", args.results);
    for (key, p) in [("gt_boxes", args.gt_boxes), ("gt_masks", args.gt_masks), ("gt_sidecar", args.gt_sidecar)] {
        if let Some(p) = p {
            m.set_path(key, p);
        }
    }
    m.set_path("out", out.path());
    m.set("report", REPORT_FILE);
    m.set_ms("total", started.elapsed());
    out.write_manifest(&m)
}

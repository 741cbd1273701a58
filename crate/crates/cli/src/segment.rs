//! The `segment` command: stream a flow file through the pipeline, writing
//! results and images window by window.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use nfseg_core::flowgen::FlowStream;
use nfseg_core::pipeline::{run_sequence_with, write_record, PipelineConfig, StageTimings, RESULT_HEADER};

use crate::output::{Manifest, OutDir};
use crate::render::render_window;

pub const RESULTS_FILE: &str = "results.nfseg-result";

pub fn cmd_segment(input: &Path, config_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let started = Instant::now();
    let config = PipelineConfig::load(config_path)?;
    let stream = FlowStream::open(input)?;
    let (width, height) = (stream.width(), stream.height());
    let out = OutDir::create(out)?;

    let mut results = out.begin(RESULTS_FILE)?;
    writeln!(results.writer(), "{RESULT_HEADER}")?;
    let mut totals = StageTimings::default();
    let (mut windows, mut segmented, mut observations) = (0usize, 0usize, 0usize);
    run_sequence_with(stream, width, height, &config, |record| {
        write_record(results.writer(), record.index, &record.window, record.result.as_ref())?;
        for (name, bytes) in render_window(record.index, &record.window, record.result.as_ref()) {
            out.write(&format!("images/{name}"), &bytes).map_err(std::io::Error::other)?;
        }
        let t = record.timings;
        totals.preprocessing += t.preprocessing;
        totals.initialization += t.initialization;
        totals.labeling_fitting += t.labeling_fitting;
        totals.subtotal += t.subtotal;
        windows += 1;
        segmented += record.result.is_some() as usize;
        observations += record.window.len();
        Ok(())
    })?;
    results.commit()?;

    let mut m = Manifest::new("segment");
    m.set_path("input", input);
    m.set_path("config", config_path);
    m.set_path("out", out.path());
    m.set("seed", seed);
    m.set("results", RESULTS_FILE);
    m.set("windows", windows);
    m.set("segmented_windows", segmented);
    m.set("observations", observations);
    m.set_ms("preprocessing", totals.preprocessing);
    m.set_ms("initialization", totals.initialization);
    m.set_ms("labeling_fitting", totals.labeling_fitting);
    m.set_ms("subtotal", totals.subtotal);
    m.set_ms("total", started.elapsed());
    out.write_manifest(&m)
}

//! The `bench` command: per-stage median timings over repeated runs of a
//! flow file, one row per pipeline stage.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Result};
use nfseg_core::flowgen::{read_flow_file, FlowFile};
use nfseg_core::pipeline::{prepare_window, PipelineConfig, SequenceState, StageTimings};
use nfseg_core::NormalFlowObservation;

pub const STAGES: [&str; 4] = ["Pre-processing", "Initialization", "Labeling & Fitting", "Subtotal"];

/// Consecutive runs of `[kΔt, (k+1)Δt)`; windows without records are left out.
fn split_windows(obs: &[NormalFlowObservation], dt: f64) -> Vec<(i64, &[NormalFlowObservation])> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < obs.len() {
        let k = (obs[start].t / dt).floor() as i64;
        let len = obs[start..].iter().take_while(|o| (o.t / dt).floor() as i64 == k).count();
        out.push((k, &obs[start..start + len]));
        start += len;
    }
    out
}

/// Timings of every segmented window, `reps` times over the sequence.
pub fn bench_timings(flow: &FlowFile, config: &PipelineConfig, reps: usize) -> Result<Vec<StageTimings>> {
    config.validate()?;
    let windows = split_windows(&flow.observations, config.window_duration);
    let mut samples = Vec::new();
    for _ in 0..reps {
        let mut state = SequenceState::default();
        for &(k, obs) in &windows {
            let prepared = prepare_window(k, obs, flow.width, flow.height, config);
            let record = state.process(prepared, config)?;
            if record.result.is_some() {
                samples.push(record.timings);
            }
        }
    }
    Ok(samples)
}

pub fn median(mut v: Vec<Duration>) -> Duration {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Median per stage, each taken independently.
pub fn stage_medians(samples: &[StageTimings]) -> [Duration; 4] {
    let pick = |f: fn(&StageTimings) -> Duration| median(samples.iter().map(f).collect());
    [
        pick(|t| t.preprocessing),
        pick(|t| t.initialization),
        pick(|t| t.labeling_fitting),
        pick(|t| t.subtotal),
    ]
}

pub fn format_rows(medians: &[Duration; 4]) -> String {
    STAGES
        .iter()
        .zip(medians)
        .map(|(name, d)| format!("{name:<20}{:>10.3} ms\n", d.as_secs_f64() * 1e3))
        .collect()
}

pub fn cmd_bench(input: &Path, config_path: &Path, reps: usize) -> Result<()> {
    let config = PipelineConfig::load(config_path)?;
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let flow = read_flow_file(input)?;
    let samples = bench_timings(&flow, &config, reps)?;
    if samples.is_empty() {
        bail!("no window of {} survives downsampling", input.display());
    }
    eprintln!(
        "{} observations, {} timed windows over {reps} repetitions",
        flow.observations.len(),
        samples.len()
    );
    print!("{}", format_rows(&stage_medians(&samples)));
    Ok(())
}

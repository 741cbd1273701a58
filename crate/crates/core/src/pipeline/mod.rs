//! Window-level orchestration: downsample, build the graph, generate
//! candidates, then alternate expansion sweeps and model fitting until the
//! labels and models settle. Moving-object boxes of one window seed the
//! candidates of the next.

pub mod config;
pub mod result_io;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use config::{PipelineConfig, REQUIRED_KEYS};
pub use result_io::{parse_results, read_results, write_record, write_results, ResultRecord, RESULT_HEADER};

use crate::error::{Error, Result};
use crate::fitting::{cluster_residual, fit_nonlinear, Loss, MIN_NONLINEAR_OBSERVATIONS};
use crate::graph::{build_graph, SpatialGraph};
use crate::init::{build_candidates, predict_boxes_with, CandidateSet, TrackedIMO};
use crate::mrf::{energy, expansion_sweep, DataCosts, EnergyBreakdown};
use crate::types::{residual_unchecked, AffineMotionModel, LabelId, Labeling, NormalFlowObservation, SegmentationResult, Window};

/// Wall-clock time per stage of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageTimings {
    /// Downsampling and graph construction.
    pub preprocessing: Duration,
    /// Box prediction and candidate generation.
    pub initialization: Duration,
    /// Initial labeling, the label/fit loop and region growing.
    pub labeling_fitting: Duration,
    /// Initialization through the end of segmentation, measured as one span.
    pub subtotal: Duration,
}

/// Keeps the most recent observation per `c x c` cell among those above
/// the magnitude floor, then strides down to `n_max`. Flow is converted
/// from px/s to px/window. Also returns the input index of every kept
/// observation.
pub fn downsample_indexed(
    observations: &[NormalFlowObservation],
    start_time: f64,
    width: u32,
    height: u32,
    config: &PipelineConfig,
) -> (Window, Vec<usize>) {
    let dt = config.window_duration;
    let c = config.cell_size as usize;
    let cols = (width as usize).div_ceil(c);
    let rows = (height as usize).div_ceil(c);
    let mut cell_best = vec![usize::MAX; cols * rows];
    for (i, o) in observations.iter().enumerate() {
        if o.n.norm() * dt < config.n_min {
            continue;
        }
        let cx = (o.x.max(0.0) as usize / c).min(cols.saturating_sub(1));
        let cy = (o.y.max(0.0) as usize / c).min(rows.saturating_sub(1));
        let slot = &mut cell_best[cy * cols + cx];
        if *slot == usize::MAX || o.t >= observations[*slot].t {
            *slot = i;
        }
    }
    let mut kept: Vec<usize> = cell_best.into_iter().filter(|&i| i != usize::MAX).collect();
    kept.sort_unstable();
    if kept.len() > config.n_max {
        let stride = kept.len().div_ceil(config.n_max);
        kept = kept.into_iter().step_by(stride).collect();
    }
    let mut window = Window::new(start_time, dt, width, height);
    window.observations = kept
        .iter()
        .map(|&i| {
            let o = observations[i];
            NormalFlowObservation { n: o.n * dt, ..o }
        })
        .collect();
    (window, kept)
}

pub fn downsample(
    observations: &[NormalFlowObservation],
    start_time: f64,
    width: u32,
    height: u32,
    config: &PipelineConfig,
) -> Window {
    downsample_indexed(observations, start_time, width, height, config).0
}

/// A downsampled window with its graph, ready for segmentation.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub index: i64,
    pub window: Window,
    pub graph: SpatialGraph,
    pub preprocessing: Duration,
}

pub fn prepare_window(
    index: i64,
    observations: &[NormalFlowObservation],
    width: u32,
    height: u32,
    config: &PipelineConfig,
) -> PreparedWindow {
    let start = Instant::now();
    let window = downsample(observations, index as f64 * config.window_duration, width, height, config);
    let graph = build_graph(&window, config.weighting);
    PreparedWindow {
        index,
        window,
        graph,
        preprocessing: start.elapsed(),
    }
}

fn most_members(assignment: &[LabelId]) -> LabelId {
    let mut counts: BTreeMap<LabelId, usize> = BTreeMap::new();
    for &l in assignment {
        *counts.entry(l).or_default() += 1;
    }
    let mut best = (0usize, 0);
    for (&l, &c) in &counts {
        if c > best.0 {
            best = (c, l);
        }
    }
    best.1
}

/// Labels by descending member count, then ascending id.
fn expansion_order(assignment: &[LabelId], labels: impl IntoIterator<Item = LabelId>) -> Vec<LabelId> {
    let mut counts: BTreeMap<LabelId, usize> = labels.into_iter().map(|l| (l, 0)).collect();
    for l in assignment {
        if let Some(c) = counts.get_mut(l) {
            *c += 1;
        }
    }
    let mut order: Vec<(usize, LabelId)> = counts.into_iter().map(|(l, c)| (c, l)).collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, l)| l).collect()
}

/// Refits every active label with at least four members, starting from
/// its current model. A refit replaces the model only if the label's
/// truncated residual does not grow. Returns the largest parameter change.
fn fit_step(
    window: &Window,
    assignment: &[LabelId],
    models: &mut BTreeMap<LabelId, AffineMotionModel>,
    config: &PipelineConfig,
) -> f64 {
    let mut clusters: BTreeMap<LabelId, Vec<NormalFlowObservation>> = BTreeMap::new();
    for (o, &l) in window.observations.iter().zip(assignment) {
        clusters.entry(l).or_default().push(*o);
    }
    let truncated = Loss::Truncated { tau: config.energy.tau_d };
    let lm = config.lm_options();
    let jobs: Vec<(LabelId, Vec<NormalFlowObservation>)> = clusters
        .into_iter()
        .filter(|(_, c)| c.len() >= MIN_NONLINEAR_OBSERVATIONS)
        .collect();
    let updates: Vec<(LabelId, AffineMotionModel)> = jobs
        .par_iter()
        .filter_map(|(l, cluster)| {
            let current = models[l];
            let fit = fit_nonlinear(cluster, &current, &lm).ok()?;
            let before = cluster_residual(cluster, &current, truncated);
            let after = cluster_residual(cluster, &fit.model, truncated);
            (after <= before).then_some((*l, fit.model))
        })
        .collect();
    let mut change: f64 = 0.0;
    for (l, m) in updates {
        change = change.max(models[&l].max_param_diff(&m));
        models.insert(l, m);
    }
    change
}

/// Alternates model refits and expansion sweeps, treating `labeling` as
/// the output of a labeling step: every round refits the active labels,
/// then relabels.
///
/// `models` may include labels absent from `labeling`; those are offered to
/// the first labeling step only.
pub fn refine_labeling(
    window: &Window,
    graph: &SpatialGraph,
    labeling: Labeling,
    mut models: BTreeMap<LabelId, AffineMotionModel>,
    config: &PipelineConfig,
) -> Result<SegmentationResult> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if labeling.len() != window.len() || graph.node_count() != window.len() {
        return Err(Error::DimensionMismatch(labeling.len(), 1, window.len(), graph.node_count()));
    }
    let params = &config.energy;
    let n = window.len();
    let mut assignment = labeling.into_assignment();
    let all_labels: Vec<LabelId> = models.keys().copied().collect();
    let mut trace: Vec<EnergyBreakdown> =
        vec![DataCosts::new(window, &models, all_labels.iter().copied(), params)?.energy(&assignment, graph, params)];
    let mut iterations = 0;

    loop {
        let model_change = fit_step(window, &assignment, &mut models, config);
        let offered: Vec<LabelId> = if iterations == 0 {
            all_labels.clone()
        } else {
            Labeling::new(assignment.clone()).active_labels().iter().copied().collect()
        };
        let costs = DataCosts::new(window, &models, offered.iter().copied(), params)?;
        trace.push(costs.energy(&assignment, graph, params));

        let order = expansion_order(&assignment, offered);
        let before = assignment.clone();
        for _ in 0..config.max_sweeps {
            let (e, moves) = expansion_sweep(&costs, &mut assignment, graph, params, &order, config.label_cost_mode);
            trace.push(e);
            if moves == 0 {
                break;
            }
        }
        iterations += 1;
        let relabeled = before.iter().zip(&assignment).filter(|(a, b)| a != b).count() as f64 / n as f64;
        if (relabeled < config.epsilon_l && model_change < config.epsilon_m) || iterations >= config.max_outer_iterations {
            break;
        }
    }

    let labeling = Labeling::new(assignment);
    let models: BTreeMap<LabelId, AffineMotionModel> = labeling
        .active_labels()
        .iter()
        .map(|l| (*l, models[l]))
        .collect();
    let final_energy = energy(&labeling, &models, graph, window, params)?;
    let mut result = SegmentationResult {
        background_label: most_members(labeling.assignment()),
        labeling,
        models,
        imo_boxes: Vec::new(),
        final_energy,
        energy_trace: trace,
        iterations,
    };
    result.imo_boxes = crate::init::grow_imo_boxes_with(&result, window, &config.init)
        .into_iter()
        .map(|t| (t.label, t.bbox))
        .collect();
    Ok(result)
}

/// Labels `1..=k` for the candidates, each node on its cheapest candidate.
/// Ties, which are common when every candidate is truncated, go to the
/// smaller untruncated residual.
pub fn initial_state(
    window: &Window,
    candidates: &CandidateSet,
    config: &PipelineConfig,
) -> Result<(Labeling, BTreeMap<LabelId, AffineMotionModel>)> {
    let models: BTreeMap<LabelId, AffineMotionModel> = candidates
        .models
        .iter()
        .enumerate()
        .map(|(k, m)| (k as LabelId + 1, *m))
        .collect();
    let costs = DataCosts::new(window, &models, models.keys().copied(), &config.energy)?;
    let labels = costs.labels();
    let ms: Vec<&AffineMotionModel> = labels.iter().map(|l| &models[l]).collect();
    let assignment = window
        .observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let raw = |c: usize| residual_unchecked(ms[c], o).abs();
            let mut best = 0;
            for c in 1..labels.len() {
                let (a, b) = (costs.cost(i, c), costs.cost(i, best));
                if a < b || (a == b && raw(c) < raw(best)) {
                    best = c;
                }
            }
            labels[best]
        })
        .collect();
    Ok((Labeling::new(assignment), models))
}

/// Segments a window whose graph is already built. `dt` is the time since
/// the window that produced `prior_tracks`.
pub fn segment_prepared(
    window: &Window,
    graph: &SpatialGraph,
    prior_tracks: &[TrackedIMO],
    dt: f64,
    config: &PipelineConfig,
) -> Result<(SegmentationResult, StageTimings)> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let start = Instant::now();
    let predicted = predict_boxes_with(
        prior_tracks,
        dt,
        config.window_duration,
        window.width,
        window.height,
        config.init.a_min,
    );
    let candidates = build_candidates(window, &predicted, &config.init, &config.lm_options())?;
    let initialized = Instant::now();
    let (labeling, models) = initial_state(window, &candidates, config)?;
    let result = refine_labeling(window, graph, labeling, models, config)?;
    let done = Instant::now();
    Ok((
        result,
        StageTimings {
            preprocessing: Duration::ZERO,
            initialization: initialized - start,
            labeling_fitting: done - initialized,
            subtotal: done - start,
        },
    ))
}

/// Segments one window, treating `prior_tracks` as coming from the window
/// immediately before it.
pub fn segment_window(window: &Window, prior_tracks: &[TrackedIMO], config: &PipelineConfig) -> Result<SegmentationResult> {
    let graph = build_graph(window, config.weighting);
    Ok(segment_prepared(window, &graph, prior_tracks, config.window_duration, config)?.0)
}

/// Moving-object tracks carried out of a finished window.
pub fn tracks_from_result(result: &SegmentationResult) -> Vec<TrackedIMO> {
    let counts = result.labeling.counts();
    result
        .imo_boxes
        .iter()
        .map(|&(label, bbox)| TrackedIMO {
            label,
            model: result.models[&label],
            bbox,
            members: counts[&label],
        })
        .collect()
}

/// Output for one window of a sequence; `result` is `None` for windows
/// left empty after downsampling.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub index: i64,
    pub window: Window,
    pub result: Option<SegmentationResult>,
    pub timings: StageTimings,
}

/// Track state between consecutive windows.
#[derive(Debug, Clone, Default)]
pub struct SequenceState {
    tracks: Vec<TrackedIMO>,
    /// Empty windows since the tracks were produced.
    gap: u32,
}

impl SequenceState {
    pub fn tracks(&self) -> &[TrackedIMO] {
        &self.tracks
    }

    /// Segments the next window. Tracks survive one empty window and are
    /// dropped at the second.
    pub fn process(&mut self, prepared: PreparedWindow, config: &PipelineConfig) -> Result<WindowRecord> {
        let PreparedWindow {
            index,
            window,
            graph,
            preprocessing,
        } = prepared;
        if window.is_empty() {
            self.gap += 1;
            if self.gap > 1 {
                self.tracks.clear();
            }
            return Ok(WindowRecord {
                index,
                window,
                result: None,
                timings: StageTimings {
                    preprocessing,
                    ..StageTimings::default()
                },
            });
        }
        let dt = (self.gap + 1) as f64 * config.window_duration;
        let (result, mut timings) = segment_prepared(&window, &graph, &self.tracks, dt, config)?;
        timings.preprocessing = preprocessing;
        self.tracks = tracks_from_result(&result);
        self.gap = 0;
        Ok(WindowRecord {
            index,
            window,
            result: Some(result),
            timings,
        })
    }
}

/// Splits a time-ordered stream into windows `[kΔt, (k+1)Δt)` and segments
/// them in order. Pre-processing of the next window overlaps segmentation
/// of the current one; results reach `sink` in window order.
pub fn run_sequence_with<I>(
    stream: I,
    width: u32,
    height: u32,
    config: &PipelineConfig,
    mut sink: impl FnMut(WindowRecord) -> Result<()>,
) -> Result<()>
where
    I: IntoIterator<Item = Result<NormalFlowObservation>>,
{
    config.validate()?;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<PreparedWindow>(2);
        let (rtx, rrx) = mpsc::channel::<Result<WindowRecord>>();
        scope.spawn(move || {
            let mut state = SequenceState::default();
            for prepared in rx {
                let record = state.process(prepared, config);
                let failed = record.is_err();
                if rtx.send(record).is_err() || failed {
                    break;
                }
            }
        });

        let send = |index: i64, obs: &[NormalFlowObservation]| {
            // The worker only hangs up after reporting an error, which the
            // drain below surfaces.
            let _ = tx.send(prepare_window(index, obs, width, height, config));
        };
        let mut buffer: Vec<NormalFlowObservation> = Vec::new();
        let mut current: Option<i64> = None;
        for item in stream {
            let obs = item?;
            let k = (obs.t / config.window_duration).floor() as i64;
            match current {
                None => current = Some(k),
                Some(c) if k > c => {
                    send(c, &buffer);
                    buffer.clear();
                    for gap in c + 1..k {
                        send(gap, &[]);
                    }
                    current = Some(k);
                }
                Some(_) => {}
            }
            buffer.push(obs);
            while let Ok(record) = rrx.try_recv() {
                sink(record?)?;
            }
        }
        if let Some(c) = current {
            send(c, &buffer);
        }
        drop(tx);
        for record in rrx {
            sink(record?)?;
        }
        Ok(())
    })
}

pub fn run_sequence<I>(stream: I, width: u32, height: u32, config: &PipelineConfig) -> Result<Vec<WindowRecord>>
where
    I: IntoIterator<Item = Result<NormalFlowObservation>>,
{
    let mut out = Vec::new();
    run_sequence_with(stream, width, height, config, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}
